"""Flat key=value experiment configs (INI sections, diff-friendly).

Three sections configure a run: [lattice], [drive] and [analysis].  A
manifest written after a run carries the same sections (so it can be fed
straight back as a config) plus a [provenance] section that the loader
ignores, and optionally an [experiment] section used by the figure/sweep
front ends.
"""

from __future__ import annotations

import configparser
from typing import Optional

from .errors import ConfigError
from .experiments import ExperimentConfig
from .sandpile import Boundaries, Boundary

_BOOL = {"true": True, "false": False, "1": True, "0": False,
         "yes": True, "no": False}


def _get(parser, section, key, cast, current):
    if not parser.has_option(section, key):
        return current
    raw = parser.get(section, key).strip()
    try:
        return cast(raw)
    except (ValueError, ConfigError) as e:
        raise ConfigError(f"[{section}] {key} = {raw!r}: {e}") from None


def _bool(raw: str) -> bool:
    try:
        return _BOOL[raw.lower()]
    except KeyError:
        raise ValueError("expected true/false")


def _side(raw: str) -> Boundary:
    try:
        return Boundary(raw.lower())
    except ValueError:
        raise ValueError("expected open or closed")


def _optional_int(raw: str) -> Optional[int]:
    v = int(raw)
    return None if v == 0 else v


def _optional_str(raw: str) -> Optional[str]:
    return raw or None


_SCHEMA = {
    "lattice": {
        "side": ("side", int),
        "threshold": ("threshold", int),
        "north": (("boundaries", "north"), _side),
        "east": (("boundaries", "east"), _side),
        "south": (("boundaries", "south"), _side),
        "west": (("boundaries", "west"), _side),
    },
    "drive": {
        "grains_per_event": ("grains_per_event", int),
        "site_policy": ("site_policy", str),
        "region_extent": ("region_extent", int),
        "event_probability": ("event_probability", float),
    },
    "analysis": {
        "seed": ("seed", int),
        "target_avalanches": ("target_avalanches", int),
        "transient_window": ("transient_window", _optional_int),
        "transient_slope_tol": ("transient_slope_tol", float),
        "max_transient_timesteps": ("max_transient_timesteps", int),
        "min_measure_timesteps": ("min_measure_timesteps", int),
        "decade_bins": ("decade_bins", int),
        "window_slope_tol": ("window_slope_tol", float),
        "keep_records": ("keep_records", _bool),
        "audit": ("audit", _bool),
        "backend": ("backend", _optional_str),
    },
}

_IGNORED_SECTIONS = ("provenance", "experiment")


def load_config(path) -> tuple[ExperimentConfig, dict]:
    """Read a config file; returns (ExperimentConfig, experiment extras).

    Unknown sections or keys are config errors; [provenance] is ignored
    and [experiment] is returned verbatim for the figure/sweep commands.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",),
                                       interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from None
    except configparser.Error as e:
        raise ConfigError(f"malformed config {path}: {e}") from None

    for section in parser.sections():
        if section in _IGNORED_SECTIONS:
            continue
        if section not in _SCHEMA:
            raise ConfigError(f"{path}: unknown section [{section}]")
        for key in parser.options(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(
                    f"{path}: unknown key {key!r} in [{section}]")

    cfg = ExperimentConfig()
    sides = {s: getattr(cfg.boundaries, s)
             for s in ("north", "east", "south", "west")}
    kwargs: dict = {}
    for section, keys in _SCHEMA.items():
        for key, (target, cast) in keys.items():
            if isinstance(target, tuple):
                sides[target[1]] = _get(parser, section, key, cast,
                                        sides[target[1]])
            else:
                kwargs[target] = _get(parser, section, key, cast,
                                      getattr(cfg, target))
    kwargs["boundaries"] = Boundaries(**sides)
    extras = (dict(parser.items("experiment"))
              if parser.has_section("experiment") else {})
    return ExperimentConfig(**kwargs), extras


def format_config(cfg: ExperimentConfig,
                  provenance: Optional[dict] = None,
                  experiment: Optional[dict] = None) -> str:
    """Render a config (plus optional provenance/experiment sections) in
    the exact format load_config reads."""
    b = cfg.boundaries
    lines = [
        "[lattice]",
        f"side = {cfg.side}",
        f"threshold = {cfg.threshold}",
        f"north = {b.north.value}",
        f"east = {b.east.value}",
        f"south = {b.south.value}",
        f"west = {b.west.value}",
        "",
        "[drive]",
        f"grains_per_event = {cfg.grains_per_event}",
        f"site_policy = {cfg.site_policy}",
        f"region_extent = {cfg.region_extent}",
        f"event_probability = {cfg.event_probability!r}",
        "",
        "[analysis]",
        f"seed = {cfg.seed}",
        f"target_avalanches = {cfg.target_avalanches}",
        f"transient_window = {cfg.transient_window or 0}",
        f"transient_slope_tol = {cfg.transient_slope_tol!r}",
        f"max_transient_timesteps = {cfg.max_transient_timesteps}",
        f"min_measure_timesteps = {cfg.min_measure_timesteps}",
        f"decade_bins = {cfg.decade_bins}",
        f"window_slope_tol = {cfg.window_slope_tol!r}",
        f"keep_records = {str(cfg.keep_records).lower()}",
        f"audit = {str(cfg.audit).lower()}",
        f"backend = {cfg.backend or ''}",
    ]
    for name, extra in (("experiment", experiment),
                        ("provenance", provenance)):
        if extra:
            lines.append("")
            lines.append(f"[{name}]")
            lines.extend(f"{k} = {v}" for k, v in extra.items())
    return "\n".join(lines) + "\n"


def write_config(path, cfg: ExperimentConfig,
                 provenance: Optional[dict] = None,
                 experiment: Optional[dict] = None):
    with open(path, "w") as fh:
        fh.write(format_config(cfg, provenance, experiment))
