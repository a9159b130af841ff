"""
Ownship trajectories, ground-truth target motion and bearing measurements.

All quantities are in km, minutes and radians. Knots and degrees only appear in the config files
(see scenario_config.py).
"""
import logging
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Optional, Tuple, Union

import numpy as np

from adaptive_bot.modules.beliefs import STATE_DIM, GaussianBelief, symmetrize, wrap_angle
from adaptive_bot.modules.filter_core import constant_velocity_transition, process_noise_cov
from adaptive_bot.modules.moments import (
    NotPositiveDefiniteError,
    RuleKind,
    bearing,
    cholesky,
    unit_points,
)


logger = logging.getLogger(__name__)

KM_PER_NAUTICAL_MILE = 1.852
MINUTES_PER_HOUR = 60.0
MIN_PRIOR_RANGE_FRACTION = 0.1


class InvalidScenarioError(ValueError):
    def __init__(self, field_name: str, value, reason: str):
        super().__init__()
        self.field_name = field_name
        self.value = value
        self._reason = reason

    def __str__(self):
        return f"Invalid scenario parameter {self.field_name}={self.value!r}: {self._reason}"


def knots_to_km_per_min(v: float) -> float:
    if v < 0:
        raise ValueError(f"Speed must be non-negative, got {v} knots.")
    return v * KM_PER_NAUTICAL_MILE / MINUTES_PER_HOUR


def km_per_min_to_knots(v: float) -> float:
    return v * MINUTES_PER_HOUR / KM_PER_NAUTICAL_MILE


@dataclass(frozen=True)
class StaticNoise:
    sigma_theta: float

    def describe(self) -> str:
        return f"static(sigma_theta={np.degrees(self.sigma_theta):.3g} deg)"


@dataclass(frozen=True)
class VaryingNoise:
    """Bearing noise standard deviation growing linearly with range between d_min and d_max.

    d_min/d_max may be left unset and filled in from the noise-free geometry by resolve_noise_case.
    """

    sigma_min: float
    sigma_max: float
    d_min: Optional[float] = None
    d_max: Optional[float] = None

    @property
    def is_resolved(self) -> bool:
        return self.d_min is not None and self.d_max is not None

    def describe(self) -> str:
        bounds = (
            f", d=[{self.d_min:.4g}, {self.d_max:.4g}] km" if self.is_resolved else ", d=<geometry>"
        )
        return (
            f"varying(sigma={np.degrees(self.sigma_min):.3g}..{np.degrees(self.sigma_max):.3g} deg"
            f"{bounds})"
        )


NoiseCase = Union[StaticNoise, VaryingNoise]


@dataclass(frozen=True)
class ScenarioConfig:
    """Geometry, prior and noise parameters of one tracking scenario, in internal units.

    Courses and bearings are measured clockwise from north. `delta` is stored as an exact fraction
    of a minute so that step times never drift.
    """

    name: str
    initial_range: float
    initial_bearing: float
    target_speed: float
    target_course: float
    ownship_speed: float
    ownship_initial_course: float
    ownship_final_course: float
    maneuver_start: float
    maneuver_end: float
    sigma_r: float
    sigma_s: float
    sigma_c: float
    r_m_true: float
    noise_case: NoiseCase
    q_bar: float
    delta: Fraction = Fraction(1, 12)
    total_time: float = 30.0
    case_id: int = field(default=1, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "delta", Fraction(self.delta).limit_denominator(1_000_000))

        for name in ("initial_range", "total_time"):
            if not getattr(self, name) > 0:
                raise InvalidScenarioError(name, getattr(self, name), "must be positive")
        if not self.delta > 0:
            raise InvalidScenarioError("delta", self.delta, "must be positive")
        for name in ("target_speed", "ownship_speed", "sigma_r", "sigma_s", "sigma_c", "q_bar"):
            if not getattr(self, name) >= 0:
                raise InvalidScenarioError(name, getattr(self, name), "must be non-negative")
        if self.maneuver_end < self.maneuver_start:
            raise InvalidScenarioError(
                "maneuver_end", self.maneuver_end, "maneuver ends before it starts"
            )
        if self.maneuver_start < 0 or self.maneuver_end > self.total_time:
            raise InvalidScenarioError(
                "maneuver_start",
                (self.maneuver_start, self.maneuver_end),
                f"maneuver window must lie within [0, {self.total_time}]",
            )

        noise = self.noise_case
        if isinstance(noise, StaticNoise):
            if not noise.sigma_theta >= 0:
                raise InvalidScenarioError("sigma_theta", noise.sigma_theta, "must be non-negative")
        elif isinstance(noise, VaryingNoise):
            if not noise.sigma_max > noise.sigma_min >= 0:
                raise InvalidScenarioError(
                    "sigma_max", noise.sigma_max, "must exceed sigma_min >= 0"
                )
            if noise.is_resolved and not noise.d_max > noise.d_min:
                raise InvalidScenarioError("d_max", noise.d_max, "must exceed d_min")
        else:
            raise InvalidScenarioError("noise_case", noise, "unknown noise case")

    @property
    def num_steps(self) -> int:
        return int(round(Fraction(self.total_time).limit_denominator(1_000_000) / self.delta)) + 1

    @property
    def delta_min(self) -> float:
        return float(self.delta)

    def times(self) -> np.ndarray:
        return np.array([float(k * self.delta) for k in range(self.num_steps)])

    def with_noise_case(
        self, noise_case: NoiseCase, case_id: Optional[int] = None
    ) -> "ScenarioConfig":
        return replace(
            self, noise_case=noise_case, case_id=self.case_id if case_id is None else case_id
        )

    def noise_free(self) -> "ScenarioConfig":
        return replace(self, q_bar=0.0, r_m_true=0.0, noise_case=StaticNoise(0.0))


@dataclass(frozen=True)
class PlatformState:
    x: float
    y: float
    vx: float
    vy: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.vx, self.vy])

    @staticmethod
    def from_array(state) -> "PlatformState":
        x, y, vx, vy = (float(v) for v in state)
        return PlatformState(x=x, y=y, vx=vx, vy=vy)


@dataclass(frozen=True, eq=False)
class TruthRecord:
    """Ground truth and measurements of one simulated run; every array has K = num_steps rows.

    Args:
        times: step times in minutes, shape [K].
        target: absolute target states, shape [K, STATE_DIM].
        ownship: absolute ownship states, shape [K, STATE_DIM].
        relative: target minus ownship, shape [K, STATE_DIM].
        true_bearing: noise-free bearings, shape [K].
        measured_bearing: noisy wrapped bearings, shape [K].
        sigma_theta: bearing noise standard deviation used at each step, shape [K].
    """

    times: np.ndarray
    target: np.ndarray
    ownship: np.ndarray
    relative: np.ndarray
    true_bearing: np.ndarray
    measured_bearing: np.ndarray
    sigma_theta: np.ndarray

    @property
    def num_steps(self) -> int:
        return self.times.shape[0]

    @property
    def ranges(self) -> np.ndarray:
        return np.hypot(self.relative[:, 0], self.relative[:, 1])

    def ownship_at(self, k: int) -> PlatformState:
        return PlatformState.from_array(self.ownship[k])


def _velocity(speed: float, course: float) -> np.ndarray:
    return speed * np.array([np.sin(course), np.cos(course)])


def ownship_course_at(t: float, cfg: ScenarioConfig) -> float:
    if t < cfg.maneuver_start:
        return cfg.ownship_initial_course
    if t >= cfg.maneuver_end:
        return cfg.ownship_final_course
    # Constant-rate turn along the shorter arc.
    turn = wrap_angle(cfg.ownship_final_course - cfg.ownship_initial_course)
    fraction = (t - cfg.maneuver_start) / (cfg.maneuver_end - cfg.maneuver_start)
    return cfg.ownship_initial_course + fraction * turn


def build_ownship_trajectory(cfg: ScenarioConfig) -> np.ndarray:
    """Ownship states of shape [K, STATE_DIM], starting at the origin.

    Positions are integrated with the trapezoidal rule so that a course change at a step only
    affects the following interval.
    """
    times = cfg.times()
    delta = cfg.delta_min
    trajectory = np.zeros((times.shape[0], STATE_DIM))
    for k, t in enumerate(times):
        trajectory[k, 2:] = _velocity(cfg.ownship_speed, ownship_course_at(t, cfg))
        if k > 0:
            trajectory[k, :2] = (
                trajectory[k - 1, :2] + 0.5 * delta * (trajectory[k - 1, 2:] + trajectory[k, 2:])
            )
    return trajectory


def sigma_theta_at(d_k: float, case: NoiseCase) -> float:
    if isinstance(case, StaticNoise):
        return case.sigma_theta
    if not case.is_resolved:
        raise ValueError("Range bounds of the varying noise case have not been resolved.")

    d_k = float(np.clip(d_k, case.d_min, case.d_max))
    slope_term = (case.sigma_max - case.sigma_min) * d_k
    offset_term = case.sigma_min * case.d_max - case.sigma_max * case.d_min
    return (slope_term + offset_term) / (case.d_max - case.d_min)


def generate_measurement(
    rel: np.ndarray, sigma: float, r_m: float, rng: np.random.Generator
) -> float:
    """Noisy bearing of a relative state; always consumes exactly one normal draw from `rng`."""
    true_bearing = float(bearing(np.asarray(rel, dtype=np.float64)[:2])[0])
    return wrap_angle(true_bearing + r_m + sigma * rng.standard_normal())


def _propagate_target(cfg: ScenarioConfig, rng: Optional[np.random.Generator]) -> np.ndarray:
    num_steps, delta = cfg.num_steps, cfg.delta_min
    transition = constant_velocity_transition(delta)
    noise_factor = cholesky(process_noise_cov(delta, cfg.q_bar), context="process noise")

    # The ownship starts at the origin.
    target = np.zeros((num_steps, STATE_DIM))
    target[0, :2] = cfg.initial_range * np.array(
        [np.sin(cfg.initial_bearing), np.cos(cfg.initial_bearing)]
    )
    target[0, 2:] = _velocity(cfg.target_speed, cfg.target_course)

    if rng is None:
        innovations = np.zeros((num_steps, STATE_DIM))
    else:
        innovations = rng.standard_normal((num_steps, STATE_DIM))
    for k in range(1, num_steps):
        target[k] = transition @ target[k - 1] + noise_factor @ innovations[k]
    return target


def simulate_truth(cfg: ScenarioConfig, rng: np.random.Generator) -> TruthRecord:
    """Simulate one run: process noise for every step is drawn first, then one bearing per step."""
    ownship = build_ownship_trajectory(cfg)
    target = _propagate_target(cfg, rng)
    relative = target - ownship

    true_bearing = bearing(relative)
    sigma_theta = np.array([sigma_theta_at(np.hypot(*rel[:2]), cfg.noise_case) for rel in relative])
    measured = np.array(
        [
            generate_measurement(rel, sigma, cfg.r_m_true, rng)
            for rel, sigma in zip(relative, sigma_theta)
        ]
    )

    return TruthRecord(
        times=cfg.times(),
        target=target,
        ownship=ownship,
        relative=relative,
        true_bearing=true_bearing,
        measured_bearing=measured,
        sigma_theta=sigma_theta,
    )


def noise_free_range_bounds(cfg: ScenarioConfig) -> Tuple[float, float]:
    """Minimum and maximum relative range along the noise-free trajectory."""
    ownship = build_ownship_trajectory(cfg)
    target = _propagate_target(cfg, rng=None)
    relative = target[:, :2] - ownship[:, :2]
    ranges = np.hypot(relative[:, 0], relative[:, 1])
    return float(ranges.min()), float(ranges.max())


def resolve_noise_case(cfg: ScenarioConfig) -> ScenarioConfig:
    """Fill in missing range bounds of a varying noise case from the noise-free geometry."""
    noise = cfg.noise_case
    if not isinstance(noise, VaryingNoise) or noise.is_resolved:
        return cfg

    d_min, d_max = noise_free_range_bounds(cfg)
    logger.debug(f"Range bounds for {cfg.name}: d_min={d_min:.4f} km, d_max={d_max:.4f} km.")
    return cfg.with_noise_case(
        replace(
            noise,
            d_min=d_min if noise.d_min is None else noise.d_min,
            d_max=d_max if noise.d_max is None else noise.d_max,
        )
    )


def _polar_to_relative(polar: np.ndarray, ownship_velocity: np.ndarray) -> np.ndarray:
    """Map rows (range, bearing, target speed, target course) to relative Cartesian states."""
    polar = np.atleast_2d(polar)
    r, theta, s, c = polar[:, 0], polar[:, 1], polar[:, 2], polar[:, 3]
    return np.stack(
        [
            r * np.sin(theta),
            r * np.cos(theta),
            s * np.sin(c) - ownship_velocity[0],
            s * np.cos(c) - ownship_velocity[1],
        ],
        axis=1,
    )


def initial_belief(
    first_bearing: float,
    cfg: ScenarioConfig,
    ownship0: PlatformState,
    rng: np.random.Generator,
    bearing_sd: Optional[float] = None,
) -> GaussianBelief:
    """Initial Gaussian belief from the first bearing and the polar prior of the scenario.

    Prior range and speed means are drawn around the truth with standard deviations sigma_r and
    sigma_s (the range is kept above a tenth of its nominal value). The prior course points along
    the first bearing line towards the ownship, first_bearing + pi, with standard deviation sigma_c.
    The mean is the polar-to-Cartesian map of those means; the covariance is the unscented
    transform (kappa = 0) of the independent polar uncertainties.

    Raises:
        NotPositiveDefiniteError: if the transformed covariance has a negative eigenvalue.
    """
    if bearing_sd is None:
        bearing_sd = sigma_theta_at(cfg.initial_range, cfg.noise_case)

    draws = rng.standard_normal(2)
    prior_range = max(
        cfg.initial_range + cfg.sigma_r * draws[0], MIN_PRIOR_RANGE_FRACTION * cfg.initial_range
    )
    prior_speed = abs(cfg.target_speed + cfg.sigma_s * draws[1])
    prior_course = wrap_angle(first_bearing + np.pi)

    polar_mean = np.array([prior_range, first_bearing, prior_speed, prior_course])
    polar_sd = np.array([cfg.sigma_r, bearing_sd, cfg.sigma_s, cfg.sigma_c])
    ownship_velocity = np.array([ownship0.vx, ownship0.vy])

    mean = _polar_to_relative(polar_mean, ownship_velocity)[0]

    points, weights = unit_points(RuleKind.UNSCENTED, STATE_DIM, kappa=0.0)
    transformed = _polar_to_relative(polar_mean + points * polar_sd, ownship_velocity)
    transformed_mean = weights @ transformed
    deviations = transformed - transformed_mean
    cov = symmetrize((weights[:, None] * deviations).T @ deviations)

    eigenvalues = np.linalg.eigvalsh(cov)
    if eigenvalues.min() < -1e-12 * max(eigenvalues.max(), 1.0):
        raise NotPositiveDefiniteError(
            pivot_index=int(np.argmin(eigenvalues)), context="initial belief"
        )

    return GaussianBelief(mean=mean, cov=cov)
