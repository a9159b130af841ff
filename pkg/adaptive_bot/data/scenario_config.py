"""
Utils for reading scenario and campaign configuration files.

Config files are INI files; angles are given in degrees, speeds in knots and the sampling time in
seconds. Everything is converted to km, minutes and radians on load.
"""
import logging
import os
from configparser import ConfigParser
from fractions import Fraction
from typing import Dict, List, Optional

import numpy as np

from adaptive_bot.data.scenario import (
    ScenarioConfig,
    StaticNoise,
    VaryingNoise,
    km_per_min_to_knots,
    knots_to_km_per_min,
)


logger = logging.getLogger(__name__)

PRESET_DIR = os.path.join(os.path.dirname(__file__), "presets")
SCENARIO_PRESETS = ("scenario1", "scenario2")
CAMPAIGN_PRESET = "campaign"


class ConfigError(Exception):
    def __init__(self, filename: str, section: str, key: Optional[str] = None, reason: str = ""):
        super().__init__()
        self.filename = filename
        self.section = section
        self.key = key
        self._reason = reason

    def __str__(self):
        location = f"[{self.section}]" + (f" {self.key}" if self.key else "")
        return f"Configuration error in {self.filename} at {location}: {self._reason}"


def preset_path(name: str) -> str:
    path = os.path.join(PRESET_DIR, f"{name}.ini")
    if not os.path.exists(path):
        raise ConfigError(path, "-", reason=f"unknown preset {name!r}")
    return path


def scenario_preset_path(scenario: int) -> str:
    return preset_path(f"scenario{scenario}")


class NamedConfigParser(ConfigParser):
    """ConfigParser that remembers which file it was read from, for error messages."""

    def __init__(self, filename: str):
        super().__init__(inline_comment_prefixes=("#", ";"))
        self.filename = filename


def read_config(filename: str) -> NamedConfigParser:
    parser = NamedConfigParser(filename)
    logger.debug(f"Reading config from {filename}")
    if not parser.read(filename):
        raise ConfigError(filename, "-", reason="file could not be read")
    return parser


def _section(parser: NamedConfigParser, section: str) -> Dict[str, str]:
    if not parser.has_section(section):
        raise ConfigError(parser.filename, section, reason="section not found")
    return dict(parser.items(section))


def get_float(parser: NamedConfigParser, section: str, key: str, default: Optional[float] = None):
    values = _section(parser, section)
    raw = values.get(key, "").strip()
    if raw == "":
        if default is None:
            raise ConfigError(parser.filename, section, key, "missing value")
        return default
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(parser.filename, section, key, f"not a number: {raw!r}") from None


def get_optional_float(parser: NamedConfigParser, section: str, key: str) -> Optional[float]:
    if not parser.has_section(section) or not parser.get(section, key, fallback="").strip():
        return None
    return get_float(parser, section, key)


def get_int(parser: NamedConfigParser, section: str, key: str, default: Optional[int] = None):
    value = get_float(parser, section, key, None if default is None else float(default))
    if value != int(value):
        raise ConfigError(parser.filename, section, key, f"not an integer: {value!r}")
    return int(value)


def get_bool(parser: NamedConfigParser, section: str, key: str, default: bool = False) -> bool:
    _section(parser, section)
    try:
        return parser.getboolean(section, key, fallback=default)
    except ValueError as e:
        raise ConfigError(parser.filename, section, key, str(e)) from None


def get_str(parser: NamedConfigParser, section: str, key: str, default: str) -> str:
    _section(parser, section)
    return parser.get(section, key, fallback=default).strip() or default


def get_list(parser: NamedConfigParser, section: str, key: str) -> List[str]:
    raw = _section(parser, section).get(key, "")
    return [item.strip() for item in raw.split(",") if item.strip()]


def _resolve_path(preset_or_path: str) -> str:
    if os.path.exists(preset_or_path):
        return preset_or_path
    return preset_path(preset_or_path)


def load_scenario_config(preset_or_path: str, case: int = 1) -> ScenarioConfig:
    """Load a scenario from a bundled preset name (e.g. "scenario1") or an INI file path.

    Args:
        preset_or_path: preset name or path to an INI file.
        case: 1 for static bearing noise, 2 for range-dependent bearing noise.
    """
    filename = _resolve_path(preset_or_path)
    parser = read_config(filename)

    if case == 1:
        noise_case = StaticNoise(np.radians(get_float(parser, "noise.static", "sigma_deg")))
    elif case == 2:
        noise_case = VaryingNoise(
            sigma_min=np.radians(get_float(parser, "noise.varying", "sigma_min_deg")),
            sigma_max=np.radians(get_float(parser, "noise.varying", "sigma_max_deg")),
            d_min=get_optional_float(parser, "noise.varying", "d_min_km"),
            d_max=get_optional_float(parser, "noise.varying", "d_max_km"),
        )
    else:
        raise ConfigError(filename, "noise", reason=f"unknown case {case}, expected 1 or 2")

    sampling_time_s = get_float(parser, "scenario", "sampling_time_s")
    return ScenarioConfig(
        name=_section(parser, "scenario").get("name", os.path.basename(filename)),
        initial_range=get_float(parser, "scenario", "initial_range_km"),
        initial_bearing=np.radians(get_float(parser, "scenario", "initial_bearing_deg", 45.0)),
        target_speed=knots_to_km_per_min(get_float(parser, "target", "speed_knots")),
        target_course=np.radians(get_float(parser, "target", "course_deg")),
        ownship_speed=knots_to_km_per_min(get_float(parser, "ownship", "speed_knots")),
        ownship_initial_course=np.radians(get_float(parser, "ownship", "initial_course_deg")),
        ownship_final_course=np.radians(get_float(parser, "ownship", "final_course_deg")),
        maneuver_start=get_float(parser, "ownship", "maneuver_start_min"),
        maneuver_end=get_float(parser, "ownship", "maneuver_end_min"),
        sigma_r=get_float(parser, "prior", "range_sd_km"),
        sigma_s=knots_to_km_per_min(get_float(parser, "prior", "speed_sd_knots")),
        sigma_c=get_float(parser, "prior", "course_sd_rad"),
        r_m_true=np.radians(get_float(parser, "noise", "mean_deg")),
        noise_case=noise_case,
        q_bar=get_float(parser, "scenario", "process_noise_intensity"),
        delta=Fraction(sampling_time_s).limit_denominator(1000) / 60,
        total_time=get_float(parser, "scenario", "total_time_min"),
        case_id=case,
    )


def _angle(value: float) -> str:
    return f"{value:.6g} rad ({np.degrees(value):.4g} deg)"


def _speed(value: float) -> str:
    return f"{value:.6g} km/min ({km_per_min_to_knots(value):.4g} kn)"


def describe_scenario_config(cfg: ScenarioConfig) -> List[str]:
    """Lines listing every parameter in internal units followed by display units."""
    return [
        f"Scenario {cfg.name}, case {cfg.case_id}",
        f"  initial range:          {cfg.initial_range:.6g} km",
        f"  initial bearing:        {_angle(cfg.initial_bearing)}",
        f"  target speed:           {_speed(cfg.target_speed)}",
        f"  target course:          {_angle(cfg.target_course)}",
        f"  ownship speed:          {_speed(cfg.ownship_speed)}",
        f"  ownship course:         {_angle(cfg.ownship_initial_course)} -> "
        f"{_angle(cfg.ownship_final_course)}",
        f"  maneuver window:        [{cfg.maneuver_start:g}, {cfg.maneuver_end:g}] min",
        f"  prior range S.D.:       {cfg.sigma_r:.6g} km",
        f"  prior speed S.D.:       {_speed(cfg.sigma_s)}",
        f"  prior course S.D.:      {_angle(cfg.sigma_c)}",
        f"  noise mean:             {_angle(cfg.r_m_true)}",
        f"  noise S.D.:             {cfg.noise_case.describe()}",
        f"  process noise q:        {cfg.q_bar:.6g} km^2/min^3",
        f"  sampling time:          {cfg.delta} min ({float(cfg.delta) * 60:g} s)",
        f"  total time:             {cfg.total_time:g} min ({cfg.num_steps} steps)",
    ]
