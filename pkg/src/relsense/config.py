"""Strict INI experiment configuration.

Every key carries its unit in its name.  Unknown sections or keys, malformed
values and duplicates are reported with the offending line number.
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config", "SCHEMA"]


class ConfigError(ValueError):
    pass


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _opt_float(text: str):
    return None if text.strip().lower() in ("none", "off", "") else float(text)


def _int_list(text: str) -> list[int]:
    return [int(v) for v in re.split(r"[,\s]+", text.strip()) if v]


def _choice(*options):
    def parse(text: str) -> str:
        v = text.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {v!r}")
        return v

    return parse


# section -> key -> (parser, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "plant": {
        "type": (_choice("chain", "ring", "hex_mirror"), "chain"),
        "subsystems": (int, 10),
        "rings": (int, 5),
        "hole_rings": (int, 0),
        "edge_length_m": (float, 0.7),
        "sensor_offset_fraction": (float, 0.25),
        "dynamics": (_choice("static", "mirror", "vehicle"), "static"),
        "static_gain": (float, 1.0),
        "resonance_hz": (float, 50.0),
        "damping_ratio": (float, 0.01),
        "stiffness_n_per_m": (float, 1.0),
        "mass_kg": (float, 1.0),
        "drag_n_s_per_m": (float, 0.1),
        "rank_tol": (float, 1e-9),
    },
    "uncertainty": {
        "eps": (float, 0.01),
        "mode": (_choice("independent-entries", "spatially-invariant", "symmetry-preserving"),
                 "independent-entries"),
    },
    "controller": {
        "kind": (_choice("modal", "uniform", "integral", "off"), "modal"),
        "k0_rad_per_s": (float, 14.4),
        "k1_rad_per_s": (float, 5.7),
        "p0_hz": (float, 0.1),
        "rolloff_hz": (_opt_float, 20.0),
        "uniform_gain_rad_per_s": (float, 14.4),
        "modes": (str, "all"),
        "ltsi_fit": (_bool, False),
        "ltsi_eps": (float, 0.025),
    },
    "worstcase": {
        "mode": (int, 0),
    },
    "nyquist": {
        "stencil": (_choice("chain", "hexagonal"), "chain"),
        "lattice_sizes": (_int_list, [100]),
        "gain_margin": (float, 2.0),
        "phase_margin_rad": (float, np.pi / 4),
        "loop_gain_rad_per_s": (float, 0.0),
        "leakage_rad_per_s": (float, 0.0),
        "omega_min_rad_per_s": (float, 1e-3),
        "omega_max_rad_per_s": (float, 1e4),
        "points_per_decade": (int, 1024),
    },
    "simulation": {
        "dt_s": (float, 0.005),
        "duration_s": (float, 600.0),
        "seed": (int, 0),
        "noise_per_sqrt_hz": (float, 1.0),
        "static_amplitude_m": (float, 1e-3),
        "wind_rms": (float, 1.0),
        "wind_cutoff_hz": (float, 0.1),
        "correlation_length_pitch": (float, 5.0),
        "segment_s": (float, 150.0),
        "overlap_fraction": (float, 0.9),
        "burn_in_s": (float, 20.0),
        "report_modes": (str, "auto"),
        "trace_format": (_choice("binary", "csv", "none"), "binary"),
    },
}


@dataclass
class ExperimentConfig:
    sections: dict[str, dict] = field(default_factory=dict)
    path: str | None = None

    def __getitem__(self, section: str) -> dict:
        return self.sections[section]

    def get(self, section: str, key: str):
        return self.sections[section][key]


def _line_index(text: str) -> dict[tuple[str, str], int]:
    """Map ``(section, key)`` to the 1-based line where it is set."""
    where, section = {}, None
    for no, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s[0] in "#;":
            continue
        m = re.match(r"\[([^\]]+)\]", s)
        if m:
            section = m.group(1).strip()
            where[(section, None)] = no
            continue
        m = re.match(r"([^=:]+?)\s*[=:]", s)
        if m and section is not None:
            where.setdefault((section, m.group(1).strip().lower()), no)
    return where


def parse_config(text: str, path: str | None = None) -> ExperimentConfig:
    name = path or "<config>"
    if not text.strip():
        raise ConfigError(f"{name}: configuration is empty")
    parser = configparser.ConfigParser(interpolation=None, strict=True, inline_comment_prefixes=("#", ";"))
    try:
        parser.read_string(text, source=name)
    except configparser.DuplicateOptionError as exc:
        raise ConfigError(f"{name}:{exc.lineno}: duplicate key {exc.option!r} in [{exc.section}]") from None
    except configparser.DuplicateSectionError as exc:
        raise ConfigError(f"{name}:{exc.lineno}: duplicate section [{exc.section}]") from None
    except configparser.MissingSectionHeaderError as exc:
        raise ConfigError(f"{name}:{exc.lineno}: key outside of any section") from None
    except configparser.ParsingError as exc:
        lineno, line = exc.errors[0]
        raise ConfigError(f"{name}:{lineno}: cannot parse {line!r}") from None

    lines = _line_index(text)
    out: dict[str, dict] = {s: {k: d for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    for section in parser.sections():
        if section not in SCHEMA:
            raise ConfigError(f"{name}:{lines.get((section, None), '?')}: unknown section [{section}]")
        for key, raw in parser.items(section):
            lineno = lines.get((section, key), "?")
            if key not in SCHEMA[section]:
                raise ConfigError(f"{name}:{lineno}: unknown key {key!r} in [{section}]")
            conv = SCHEMA[section][key][0]
            try:
                out[section][key] = conv(raw)
            except ValueError as exc:
                raise ConfigError(f"{name}:{lineno}: bad value for {key!r}: {exc}") from None
    return ExperimentConfig(out, path)


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
