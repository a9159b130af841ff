from adaptive_bot.data.scenario import (
    InvalidScenarioError,
    NoiseCase,
    PlatformState,
    ScenarioConfig,
    StaticNoise,
    TruthRecord,
    VaryingNoise,
    build_ownship_trajectory,
    generate_measurement,
    initial_belief,
    knots_to_km_per_min,
    noise_free_range_bounds,
    resolve_noise_case,
    sigma_theta_at,
    simulate_truth,
)
from adaptive_bot.data.scenario_config import (
    ConfigError,
    describe_scenario_config,
    load_scenario_config,
    read_config,
)

__all__ = [
    "InvalidScenarioError",
    "NoiseCase",
    "PlatformState",
    "ScenarioConfig",
    "StaticNoise",
    "TruthRecord",
    "VaryingNoise",
    "build_ownship_trajectory",
    "generate_measurement",
    "initial_belief",
    "knots_to_km_per_min",
    "noise_free_range_bounds",
    "resolve_noise_case",
    "sigma_theta_at",
    "simulate_truth",
    "ConfigError",
    "describe_scenario_config",
    "load_scenario_config",
    "read_config",
]
