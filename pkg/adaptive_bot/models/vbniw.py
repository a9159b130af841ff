"""
Variational-Bayes measurement update with a normal-inverse-Wishart belief over the unknown
measurement noise mean and covariance, and a likelihood grid search for its tuning parameters.

Notation (scalar measurement, m = 1):
    mu'   - location of the noise-mean belief
    alpha' - confidence parameter; the noise mean is N(mu', alpha' R) given R
    u'    - inverse-Wishart degrees of freedom
    U'    - inverse-Wishart scale
"""
import logging
from dataclasses import dataclass, replace
from typing import Iterable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats
from typing_extensions import Literal

from adaptive_bot.modules.beliefs import MEASUREMENT_DIM, GaussianBelief
from adaptive_bot.modules.filter_core import kalman_correct, measurement_residual
from adaptive_bot.modules.moments import (
    BEARING_MEASUREMENT,
    MeasurementModel,
    MomentRule,
    NumericalDivergenceError,
    propagate,
)


logger = logging.getLogger(__name__)

RDenominator = Literal["main", "appendix"]

DEFAULT_ZETA = 1e-3
DEFAULT_MAX_ITER = 50
DEFAULT_DOF_GRID = tuple(range(3, 24))
DEFAULT_ALPHA_GRID = tuple(float(a) for a in range(1, 21))


class InvalidNiwParametersError(ValueError):
    def __init__(self, parameter: str, value, requirement: str):
        super().__init__()
        self.parameter = parameter
        self.value = value
        self._requirement = requirement

    def __str__(self):
        return f"Invalid NIW parameter {self.parameter}={self.value!r}; need {self._requirement}."


class TuningFailedError(RuntimeError):
    def __init__(self, grid_name: str, candidates: Sequence[float]):
        super().__init__()
        self.grid_name = grid_name
        self.candidates = tuple(candidates)

    def __str__(self):
        return (
            f"Every candidate of the {self.grid_name} grid produced a non-finite likelihood.\n"
            f"  Candidates: {list(self.candidates)}"
        )


@dataclass(frozen=True)
class NiwBelief:
    """Normal-inverse-Wishart belief over the measurement noise mean and covariance."""

    mu_prime: float
    alpha_prime: float
    u_prime: float
    U_prime: float

    def __post_init__(self):
        if not self.alpha_prime > 0:
            raise InvalidNiwParametersError("alpha_prime", self.alpha_prime, "alpha_prime > 0")
        if not self.u_prime > MEASUREMENT_DIM + 1:
            raise InvalidNiwParametersError(
                "u_prime", self.u_prime, f"u_prime > {MEASUREMENT_DIM + 1}"
            )
        if not self.U_prime > 0:
            raise InvalidNiwParametersError("U_prime", self.U_prime, "U_prime > 0")

    @staticmethod
    def from_guess(
        mu_guess: float, R_guess: float, u0: float, alpha_prime: float = 1.0
    ) -> "NiwBelief":
        """Initial belief whose expected covariance equals R_guess."""
        return NiwBelief(
            mu_prime=float(mu_guess),
            alpha_prime=float(alpha_prime),
            u_prime=float(u0),
            U_prime=float((u0 - MEASUREMENT_DIM - 1) * R_guess),
        )

    def with_alpha(self, alpha_prime: float) -> "NiwBelief":
        return replace(self, alpha_prime=float(alpha_prime))


@dataclass(frozen=True, eq=False)
class VbUpdateResult:
    """Outcome of one VB measurement update.

    Args:
        posterior: state posterior after the last fixed-point iteration.
        niw: belief carried to the next step (mu' and alpha' held, u and U posterior).
        R_hat: noise covariance estimate used by the final iterate.
        mu_hat: noise mean estimate used by the final iterate.
        alpha_hat: posterior confidence alpha'/(alpha'+1).
        iterations: number of fixed-point iterations executed.
        converged: True if the relative iterate change dropped below zeta before max_iter.
        likelihood: predictive density of the measurement under N(y_hat, P_yy) of the final iterate.
        numerical_issue: True if an iteration failed and the previous (or predicted) one was kept.
    """

    posterior: GaussianBelief
    niw: NiwBelief
    R_hat: float
    mu_hat: float
    alpha_hat: float
    iterations: int
    converged: bool
    likelihood: float
    numerical_issue: bool = False


@dataclass(frozen=True, eq=False)
class TuningResult:
    u0: Optional[float]
    alpha_prime: float
    update: VbUpdateResult

    @property
    def likelihood(self) -> float:
        return self.update.likelihood


def _check_iw_domain(B: float, lam: float, psi: float):
    if not B > 0:
        raise InvalidNiwParametersError("B", B, "B > 0")
    if not lam > MEASUREMENT_DIM + 1:
        raise InvalidNiwParametersError("lambda", lam, f"lambda > {MEASUREMENT_DIM + 1}")
    if not psi > 0:
        raise InvalidNiwParametersError("psi", psi, "psi > 0")


def iw_density(B: float, lam: float, psi: float) -> float:
    """Scalar inverse-Wishart density with lam degrees of freedom and scale psi."""
    _check_iw_domain(B, lam, psi)
    return float(stats.invwishart(df=lam, scale=psi).pdf(B))


def niw_density(x: float, B: float, mu: float, alpha: float, lam: float, psi: float) -> float:
    """Density of (x, B) under N(x; mu, alpha B) IW(B; lam, psi)."""
    if not alpha > 0:
        raise InvalidNiwParametersError("alpha", alpha, "alpha > 0")
    _check_iw_domain(B, lam, psi)
    return float(stats.norm.pdf(x, loc=mu, scale=np.sqrt(alpha * B))) * iw_density(B, lam, psi)


def sample_iw(
    lam: float, psi: float, size: int, rng: Union[np.random.Generator, int, None] = None
) -> np.ndarray:
    _check_iw_domain(1.0, lam, psi)
    samples = stats.invwishart(df=lam, scale=psi).rvs(size=size, random_state=rng)
    return np.asarray(samples, dtype=np.float64).reshape(size)


def expected_R(u: float, U: float, denominator: RDenominator = "main") -> float:
    """Expected noise covariance of the inverse-Wishart belief (u, U).

    The "appendix" denominator u + m + 1 is only used for sensitivity checks.
    """
    if not U > 0:
        raise InvalidNiwParametersError("U", U, "U > 0")
    if denominator == "appendix":
        return U / (u + MEASUREMENT_DIM + 1)
    if not u > MEASUREMENT_DIM + 1:
        raise InvalidNiwParametersError("u", u, f"u > {MEASUREMENT_DIM + 1}")
    return U / (u - MEASUREMENT_DIM - 1)


def update_mu(mu_prime: float, alpha_prime: float, innovation: float) -> float:
    return (mu_prime + alpha_prime * innovation) / (alpha_prime + 1.0)


def update_alpha(alpha_prime: float) -> float:
    return alpha_prime / (alpha_prime + 1.0)


def compute_Bk(
    y: float,
    y_hat_post: float,
    posterior_spread: float,
    mu: float,
    alpha_used: float,
    R_current: float,
    angular: bool = True,
) -> float:
    residual = measurement_residual(y, y_hat_post + mu, angular)
    return residual ** 2 + posterior_spread + alpha_used * R_current


def compute_Dk(R_current: float, alpha_prime: float, mu_new: float, mu_prime: float) -> float:
    return R_current + (mu_new - mu_prime) ** 2 / alpha_prime


def measurement_likelihood(y: float, y_hat: float, P_yy: float, angular: bool = True) -> float:
    if not P_yy > 0:
        raise ValueError(f"Innovation variance must be positive, got {P_yy}.")
    residual = measurement_residual(y, y_hat, angular)
    return float(stats.norm.pdf(residual, loc=0.0, scale=np.sqrt(P_yy)))


def iterate_change(
    previous_mean: np.ndarray,
    mean: np.ndarray,
    previous_mu: float,
    mu: float,
    previous_R: float,
    R: float,
) -> float:
    """Largest relative change between two VB iterates (state mean, noise mean, noise covariance).

    The noise mean is scaled by the larger of its magnitude and the noise standard deviation, as it
    sits close to zero.
    """
    state_scale = max(float(np.linalg.norm(previous_mean)), np.finfo(float).tiny)
    mu_scale = max(abs(previous_mu), float(np.sqrt(previous_R)))
    return max(
        float(np.linalg.norm(mean - previous_mean)) / state_scale,
        abs(mu - previous_mu) / mu_scale,
        abs(R - previous_R) / previous_R,
    )


def vb_measurement_update(
    prior: GaussianBelief,
    y: float,
    niw: NiwBelief,
    rule: MomentRule,
    zeta: float = DEFAULT_ZETA,
    max_iter: int = DEFAULT_MAX_ITER,
    measurement: MeasurementModel = BEARING_MEASUREMENT,
    r_denominator: RDenominator = "main",
) -> VbUpdateResult:
    """Fixed-point VB update of the state and the NIW noise belief.

    Iteration i+1 takes R from the (u, U) of iteration i (the carried prior for i = 0) and the
    noise mean from the posterior measurement prediction of iteration i, then recomputes the
    gain-based posterior. Iteration stops once the relative change of the whole iterate, see
    iterate_change, is below zeta. The first iterate is compared with the prior mean and mu'.

    Only u and U are carried to the next step; mu' and alpha' keep their initial values.

    If the first iteration fails numerically the predicted belief is returned unchanged, with the
    prior noise estimates and numerical_issue set. A later failure keeps the previous iterate.

    Raises:
        NumericalDivergenceError: if the moments of the predicted belief cannot be computed.
    """
    if not zeta > 0:
        raise ValueError(f"Convergence tolerance must be positive, got {zeta}.")
    if max_iter < 1:
        raise ValueError(f"Need at least one iteration, got max_iter={max_iter}.")

    angular = measurement.is_angular
    prior_moments = propagate(prior, rule, measurement)
    alpha = update_alpha(niw.alpha_prime)
    u_next = niw.u_prime + 2.0

    posterior, posterior_moments = prior, prior_moments
    u_i, U_i = niw.u_prime, niw.U_prime
    R_i, mu_i = expected_R(u_i, U_i, r_denominator), niw.mu_prime
    iterations, converged, numerical_issue = 0, False, False

    for iteration in range(1, max_iter + 1):
        try:
            R_next = expected_R(u_i, U_i, r_denominator)
            innovation_post = measurement_residual(y, posterior_moments.y_hat, angular)
            mu_next = update_mu(niw.mu_prime, niw.alpha_prime, innovation_post)
            y_hat_post, spread_post = posterior_moments.y_hat, posterior_moments.spread
            B = compute_Bk(y, y_hat_post, spread_post, mu_next, alpha, R_next, angular)
            D = compute_Dk(R_next, niw.alpha_prime, mu_next, niw.mu_prime)
            U_next = niw.U_prime + B + D

            next_posterior = kalman_correct(
                prior, prior_moments, y, mu_next, R_next, angular, context="VB iteration"
            )
            if not (np.all(np.isfinite(next_posterior.mean)) and np.isfinite(U_next)):
                raise NumericalDivergenceError(f"Non-finite VB iterate at iteration {iteration}.")
            change = iterate_change(
                posterior.mean, next_posterior.mean, mu_i, mu_next, R_i, R_next
            )
            next_moments = propagate(next_posterior, rule, measurement)
        except (NumericalDivergenceError, InvalidNiwParametersError) as e:
            numerical_issue = True
            if iteration == 1:
                logger.warning(f"First VB iteration failed, keeping the predicted belief: {e}")
                iterations = 1
            else:
                logger.debug(f"VB iteration {iteration} failed, keeping the previous iterate: {e}")
            break

        posterior, posterior_moments = next_posterior, next_moments
        u_i, U_i, R_i, mu_i = u_next, U_next, R_next, mu_next
        iterations = iteration
        if change < zeta:
            converged = True
            break

    likelihood = measurement_likelihood(y, prior_moments.y_hat, prior_moments.spread + R_i, angular)

    return VbUpdateResult(
        posterior=posterior,
        niw=NiwBelief(
            mu_prime=niw.mu_prime, alpha_prime=niw.alpha_prime, u_prime=u_i, U_prime=U_i
        ),
        R_hat=R_i,
        mu_hat=mu_i,
        alpha_hat=alpha,
        iterations=iterations,
        converged=converged,
        likelihood=likelihood,
        numerical_issue=numerical_issue,
    )


def _best_candidate(
    grid_name: str,
    candidates: Iterable[float],
    run_candidate,
) -> Tuple[float, VbUpdateResult]:
    """Argmax of the likelihood over the grid; ties go to the earliest (smallest) candidate."""
    candidates = list(candidates)
    best: Optional[Tuple[float, VbUpdateResult]] = None
    for candidate in candidates:
        try:
            result = run_candidate(candidate)
        except (NumericalDivergenceError, InvalidNiwParametersError) as e:
            logger.debug(f"{grid_name} candidate {candidate} failed: {e}")
            continue
        if not np.isfinite(result.likelihood):
            continue
        if best is None or result.likelihood > best[1].likelihood:
            best = (candidate, result)

    if best is None:
        raise TuningFailedError(grid_name, candidates)
    return best


def tune_parameters(
    prior: GaussianBelief,
    y: float,
    rule: MomentRule,
    R_guess: Optional[float] = None,
    mu_guess: Optional[float] = None,
    niw: Optional[NiwBelief] = None,
    dof_grid: Sequence[float] = DEFAULT_DOF_GRID,
    alpha_grid: Sequence[float] = DEFAULT_ALPHA_GRID,
    zeta: float = DEFAULT_ZETA,
    max_iter: int = DEFAULT_MAX_ITER,
    measurement: MeasurementModel = BEARING_MEASUREMENT,
    r_denominator: RDenominator = "main",
) -> TuningResult:
    """Likelihood grid search over the VB tuning parameters for one step.

    On the first step (niw is None) the initial degrees of freedom u0 are chosen from dof_grid with
    alpha' = 1 and U0 = (u0 - m - 1) R_guess, starting at mu_guess. On every step alpha' is then
    chosen from alpha_grid. Each candidate runs the full VB update and is scored by the predictive
    likelihood of the measurement.

    Raises:
        TuningFailedError: if every candidate of a grid yields a non-finite likelihood.
    """

    def run_with(belief: NiwBelief) -> VbUpdateResult:
        return vb_measurement_update(
            prior, y, belief, rule, zeta, max_iter, measurement, r_denominator
        )

    chosen_u0 = None
    if niw is None:
        if R_guess is None or mu_guess is None:
            raise ValueError("The first tuning step needs both R_guess and mu_guess.")
        chosen_u0, _ = _best_candidate(
            "u0",
            dof_grid,
            lambda u0: run_with(NiwBelief.from_guess(mu_guess, R_guess, u0, alpha_prime=1.0)),
        )
        niw = NiwBelief.from_guess(mu_guess, R_guess, chosen_u0, alpha_prime=1.0)
        logger.debug(f"Tuned initial degrees of freedom u0={chosen_u0:g}.")

    chosen_alpha, update = _best_candidate(
        "alpha_prime", alpha_grid, lambda alpha: run_with(niw.with_alpha(alpha))
    )
    return TuningResult(u0=chosen_u0, alpha_prime=float(chosen_alpha), update=update)
