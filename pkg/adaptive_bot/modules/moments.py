"""
Moment propagation of a Gaussian belief through the measurement function.

Four rules are supported:

1. LINEARIZED -- first-order Taylor expansion around the mean (the EKF).
2. CUBATURE -- 2n points on the scaled unit axes, equal weights (the CKF).
3. UNSCENTED -- 2n+1 points with a centre point weighted kappa/(n+kappa) (the UKF).
4. GAUSS_HERMITE -- tensor product of 1-D Gauss-Hermite nodes, order^n points (the GHF).

Sampled rules store unit points xi_j and weights w_j for a standard normal in n dimensions;
propagate() maps them through S (S S^T = P) and the measurement function.
"""
import itertools
import logging
from dataclasses import dataclass, replace
from enum import Enum
from functools import partial
from typing import Callable, Optional, Tuple

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.linalg import lapack

from adaptive_bot.modules.beliefs import STATE_DIM, GaussianBelief, wrap_angle


logger = logging.getLogger(__name__)


DEFAULT_GHF_ORDER = 3


class NumericalDivergenceError(ArithmeticError):
    """Raised when a filter step cannot produce a valid Gaussian belief."""


class NotPositiveDefiniteError(NumericalDivergenceError, ValueError):
    def __init__(self, pivot_index: int, context: str = ""):
        super().__init__()
        self.pivot_index = pivot_index
        self.context = context

    def __str__(self):
        return (
            f"Matrix is not positive definite (failing pivot {self.pivot_index})"
            + (f" in {self.context}." if self.context else ".")
        )


class DegenerateGeometryError(ValueError):
    def __init__(self, what: str):
        super().__init__()
        self._what = what

    def __str__(self):
        return f"Cannot evaluate {self._what} at zero relative position."


class RuleKind(Enum):
    LINEARIZED = "linearized"
    CUBATURE = "cubature"
    UNSCENTED = "unscented"
    GAUSS_HERMITE = "gauss_hermite"


def unit_points(
    kind: RuleKind, n: int, kappa: Optional[float] = None, order: Optional[int] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Unit sample points of shape [N_s, n] and weights of shape [N_s] for N(0, I_n)."""
    if n < 1:
        raise ValueError(f"Dimension must be at least 1, got {n}.")

    if kind is RuleKind.CUBATURE:
        axes = np.sqrt(n) * np.eye(n)
        points = np.concatenate([axes, -axes], axis=0)
        weights = np.full(2 * n, 1.0 / (2 * n))
    elif kind is RuleKind.UNSCENTED:
        kappa = 3.0 - n if kappa is None else float(kappa)
        if n + kappa <= 0:
            raise ValueError(f"Unscented rule needs n + kappa > 0, got n={n}, kappa={kappa}.")
        axes = np.sqrt(n + kappa) * np.eye(n)
        points = np.concatenate([np.zeros((1, n)), axes, -axes], axis=0)
        weights = np.full(2 * n + 1, 1.0 / (2.0 * (n + kappa)))
        weights[0] = kappa / (n + kappa)
    elif kind is RuleKind.GAUSS_HERMITE:
        order = DEFAULT_GHF_ORDER if order is None else int(order)
        if order < 2:
            raise ValueError(f"Gauss-Hermite order must be at least 2, got {order}.")
        nodes, node_weights = hermegauss(order)
        node_weights = node_weights / node_weights.sum()
        points = np.array(list(itertools.product(nodes, repeat=n)))
        weights = np.array([np.prod(ws) for ws in itertools.product(node_weights, repeat=n)])
    else:
        raise ValueError(f"Rule {kind.value} has no sample points.")

    return points, weights


@dataclass(frozen=True, eq=False)
class MomentRule:
    """Deterministic sampling rule (or linearization marker) used to approximate Gaussian
    expectations of the measurement function.

    Args:
        kind: which rule this is.
        dim: state dimension the unit points were built for.
        kappa: UKF scaling parameter (UNSCENTED only).
        order: number of 1-D nodes per axis (GAUSS_HERMITE only).
        points: unit points as ndarray of shape [N_s, dim]; None for LINEARIZED.
        weights: weights as ndarray of shape [N_s]; None for LINEARIZED.
    """

    kind: RuleKind
    dim: int = STATE_DIM
    kappa: Optional[float] = None
    order: Optional[int] = None
    points: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None

    @staticmethod
    def create(
        kind: RuleKind,
        dim: int = STATE_DIM,
        kappa: Optional[float] = None,
        order: Optional[int] = None,
    ) -> "MomentRule":
        if kind is RuleKind.LINEARIZED:
            return MomentRule(kind=kind, dim=dim)
        if kind is RuleKind.UNSCENTED and kappa is None:
            kappa = 3.0 - dim
        if kind is RuleKind.GAUSS_HERMITE and order is None:
            order = DEFAULT_GHF_ORDER

        points, weights = unit_points(kind, dim, kappa=kappa, order=order)
        return MomentRule(
            kind=kind,
            dim=dim,
            kappa=kappa if kind is RuleKind.UNSCENTED else None,
            order=order if kind is RuleKind.GAUSS_HERMITE else None,
            points=points,
            weights=weights,
        )

    @property
    def is_sampled(self) -> bool:
        return self.kind is not RuleKind.LINEARIZED

    @property
    def num_points(self) -> int:
        return 1 if self.points is None else self.points.shape[0]

    def with_kappa(self, kappa: float) -> "MomentRule":
        if self.kind is not RuleKind.UNSCENTED:
            raise ValueError(f"Only unscented rules have a kappa parameter, not {self.kind.value}.")
        points, weights = unit_points(self.kind, self.dim, kappa=kappa)
        return replace(self, kappa=float(kappa), points=points, weights=weights)

    def describe(self) -> str:
        if self.kind is RuleKind.UNSCENTED:
            return f"{self.kind.value}(kappa={self.kappa:g})"
        if self.kind is RuleKind.GAUSS_HERMITE:
            return f"{self.kind.value}(order={self.order}, points={self.num_points})"
        return self.kind.value


@dataclass(frozen=True)
class MeasurementModel:
    """Scalar measurement function h together with its gradient.

    Args:
        fn: maps states of shape [N, STATE_DIM] to measurements of shape [N].
        jacobian: maps a single state of shape [STATE_DIM] to the gradient of h, shape [STATE_DIM].
        is_angular: if True, measurement differences are wrapped onto (-pi, pi].
    """

    fn: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray]
    is_angular: bool

    def __call__(self, state: np.ndarray) -> float:
        return float(self.fn(np.asarray(state, dtype=np.float64)[None, :])[0])

    def residual(self, measured: float, predicted: float) -> float:
        diff = measured - predicted
        return wrap_angle(diff) if self.is_angular else float(diff)


def bearing(states: np.ndarray) -> np.ndarray:
    """Bearing from true north, clockwise, for relative states of shape [N, >=2]."""
    states = np.atleast_2d(states)
    x, y = states[:, 0], states[:, 1]
    if np.any((x == 0.0) & (y == 0.0)):
        raise DegenerateGeometryError("bearing")
    return np.arctan2(x, y)


def bearing_jacobian(state: np.ndarray) -> np.ndarray:
    x, y = float(state[0]), float(state[1])
    range_sq = x * x + y * y
    if range_sq == 0.0:
        raise DegenerateGeometryError("bearing jacobian")
    jacobian = np.zeros(len(state))
    jacobian[0] = y / range_sq
    jacobian[1] = -x / range_sq
    return jacobian


def _linear_fn(coefficients: np.ndarray, states: np.ndarray) -> np.ndarray:
    return np.atleast_2d(states) @ coefficients


def _linear_jacobian(coefficients: np.ndarray, state: np.ndarray) -> np.ndarray:
    return coefficients.copy()


def linear_measurement(coefficients) -> MeasurementModel:
    """Linear surrogate h(x) = a . x, used for exactness checks and linear-Gaussian runs."""
    coefficients = np.asarray(coefficients, dtype=np.float64)
    return MeasurementModel(
        fn=partial(_linear_fn, coefficients),
        jacobian=partial(_linear_jacobian, coefficients),
        is_angular=False,
    )


BEARING_MEASUREMENT = MeasurementModel(fn=bearing, jacobian=bearing_jacobian, is_angular=True)


def cholesky(matrix: np.ndarray, context: str = "") -> np.ndarray:
    """Lower-triangular S with S S^T = matrix. An all-zero matrix yields S = 0."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if not np.all(np.isfinite(matrix)):
        raise NotPositiveDefiniteError(pivot_index=0, context=f"{context} (non-finite entries)")
    if not np.any(matrix):
        return np.zeros_like(matrix)

    factor, info = lapack.dpotrf(matrix, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(pivot_index=info - 1, context=context)
    if info < 0:
        raise ValueError(f"Illegal argument {-info} passed to dpotrf.")
    return factor


@dataclass(frozen=True)
class MomentResult:
    """Moments of h(X) for X ~ N(mean, cov).

    Args:
        y_hat: predicted measurement E[h(X)].
        spread: sum_j w_j (Y_j - y_hat)^2, i.e. P_yy without the noise covariance.
        p_xy: state/measurement cross-covariance, shape [STATE_DIM].
        points_y: measurement at each sample point, shape [N_s] (a single entry for LINEARIZED).
    """

    y_hat: float
    spread: float
    p_xy: np.ndarray
    points_y: np.ndarray


def propagate(
    belief: GaussianBelief,
    rule: MomentRule,
    measurement: MeasurementModel = BEARING_MEASUREMENT,
) -> MomentResult:
    if not rule.is_sampled:
        y_hat = measurement(belief.mean)
        jacobian = measurement.jacobian(belief.mean)
        p_xy = belief.cov @ jacobian
        return MomentResult(
            y_hat=y_hat,
            spread=max(float(jacobian @ p_xy), 0.0),
            p_xy=p_xy,
            points_y=np.array([y_hat]),
        )

    sqrt_cov = cholesky(belief.cov, context="moment propagation")
    points_x = belief.mean + rule.points @ sqrt_cov.T
    points_y = measurement.fn(points_x)
    if measurement.is_angular:
        # Keep every point on the short arc around h(mean) before averaging.
        centre = measurement(belief.mean)
        points_y = centre + wrap_angle(points_y - centre)

    y_hat = float(rule.weights @ points_y)
    deviations = points_y - y_hat
    spread = float(rule.weights @ deviations ** 2)
    p_xy = (points_x - belief.mean).T @ (rule.weights * deviations)

    if measurement.is_angular:
        y_hat = wrap_angle(y_hat)

    return MomentResult(y_hat=y_hat, spread=max(spread, 0.0), p_xy=p_xy, points_y=points_y)
