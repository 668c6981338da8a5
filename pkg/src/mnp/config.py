"""Scenario configuration: strict INI parsing and content hashing.

Silent typos in physical constants are the top operational hazard, so
unknown sections and unknown keys are rejected outright.  Keys carry their
unit in the name wherever SI prefixes are conventional (mT, nm, mm).
"""

from __future__ import annotations

import configparser
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidParameterError
from .fields import (
    MU0,
    FieldSequence,
    ParticleModel,
    axis_in_plane,
    brown_params,
    fixed_axis,
    neel_params,
    pulsed_sequence,
    sinusoidal_sequence,
)

__all__ = ["ScenarioConfig", "parse_config", "config_hash"]


@dataclass
class ParticleSection:
    mode: str = "neel"
    m_s: float = 474000.0  # A/m
    k_anis: float = 625.0  # J/m^3
    d_core_nm: float = 20.0
    d_hydro_nm: float = 20.0
    eta: float = 1.0e-5  # Pa s
    t_b: float = 293.0  # K
    gamma: float | None = None  # rad/(s T); library default when omitted
    alpha: float | None = None


@dataclass
class FieldSection:
    type: str = "sin"
    amplitude_mt: float = 20.0  # drive amplitude, mT
    frequency_hz: float = 125e6 / 4800
    offset_mt: tuple[float, float, float] = (0.0, 0.0, 0.0)
    easy_axis_deg: float = 45.0  # in-plane angle of the easy axis
    n_periods: float = 1.0
    amplitude_pulsed_mt: float = 1.0
    frequency_pulsed_hz: float = 2500.0
    n_steps: int = 40
    delta_t_s: float | None = None


@dataclass
class SolverSection:
    disc: str = "sh:20"
    rtol: float = 1e-6
    atol: float = 1e-9
    n_samples: int = 1000
    precession: bool = True
    mesh_cache: str | None = None


@dataclass
class SweepSection:
    pixels_mm: tuple[float, ...] = (0.0, 2.0, 4.0)  # per-axis pixel offsets
    gradient_t_per_m: float = 7.0
    anisotropies: tuple[float, ...] = (625.0, 1250.0, 2500.0)
    diameters_nm: tuple[float, ...] = (30.0, 40.0)
    reference_disc: str = "fv:5:0"
    workers: int = 1


@dataclass
class DictionarySection:
    diameters_nm: tuple[float, ...] = tuple(np.arange(16.0, 59.0, 6.0))
    anisotropies: tuple[float, ...] = tuple(np.arange(500.0, 6001.0, 500.0))
    delta_phi_deg: tuple[float, ...] = (0.0,)
    phi_refs_deg: tuple[float, ...] = (0.0, 45.0, 90.0)
    n_times: int = 1000
    disc: str = "fv:3:0.2"
    beta: str = "auto"
    workers: int = 1


@dataclass
class XspaceSection:
    mode: str = "pulsed"
    diameters_nm: tuple[float, ...] = (20.0, 25.0, 30.0)
    d_core_nm: float | None = None  # pin the core, vary hydrodynamic sizes
    gradient_t_per_m: float = 7.0
    n_nodes: int = 81
    disc: str = "fv:3:0.2"


@dataclass
class ScenarioConfig:
    particle: ParticleSection = field(default_factory=ParticleSection)
    field_: FieldSection = field(default_factory=FieldSection)
    solver: SolverSection = field(default_factory=SolverSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    dictionary: DictionarySection = field(default_factory=DictionarySection)
    xspace: XspaceSection = field(default_factory=XspaceSection)
    output: str = "runs"

    def particle_model(self) -> ParticleModel:
        p = self.particle
        kwargs = {}
        if p.gamma is not None:
            kwargs["gamma"] = p.gamma
        if p.alpha is not None:
            kwargs["alpha"] = p.alpha
        if p.mode == "neel":
            return neel_params(m_s=p.m_s, k_anis=p.k_anis, d_core=p.d_core_nm * 1e-9,
                               t_b=p.t_b, d_hydro=p.d_hydro_nm * 1e-9, eta=p.eta, **kwargs)
        if p.mode == "brown":
            return brown_params(m_s=p.m_s, d_core=p.d_core_nm * 1e-9,
                                d_hydro=p.d_hydro_nm * 1e-9, eta=p.eta, t_b=p.t_b, **kwargs)
        raise InvalidParameterError(f"unknown particle mode {p.mode!r}")

    def field_sequence(self) -> FieldSequence:
        f = self.field_
        h_s = np.asarray(f.offset_mt, dtype=float) * 1e-3 / MU0
        axis = axis_in_plane(math.radians(f.easy_axis_deg))
        if f.type == "sin":
            return sinusoidal_sequence(f.amplitude_mt * 1e-3 / MU0, f.frequency_hz,
                                       h_s=h_s, easy_axis=axis, n_periods=f.n_periods)
        if f.type == "pulsed":
            return pulsed_sequence(f.amplitude_mt * 1e-3 / MU0,
                                   f.amplitude_pulsed_mt * 1e-3 / MU0,
                                   f.frequency_pulsed_hz, f.n_steps,
                                   delta_t=f.delta_t_s, h_s=h_s, easy_axis=axis)
        raise InvalidParameterError(f"unknown field type {f.type!r}")


_SECTION_MAP = {
    "particle": ("particle", ParticleSection),
    "field": ("field_", FieldSection),
    "solver": ("solver", SolverSection),
    "sweep": ("sweep", SweepSection),
    "dictionary": ("dictionary", DictionarySection),
    "xspace": ("xspace", XspaceSection),
}

_TUPLE_KEYS = {
    "offset_mt", "pixels_mm", "anisotropies", "diameters_nm",
    "delta_phi_deg", "phi_refs_deg",
}
_BOOL_KEYS = {"precession"}
_INT_KEYS = {"n_samples", "n_steps", "n_times", "n_nodes", "workers"}
_STR_KEYS = {"mode", "type", "disc", "beta", "mesh_cache", "reference_disc"}
_OPTIONAL_KEYS = {"gamma", "alpha", "delta_t_s", "d_core_nm", "mesh_cache"}


def _convert(key: str, raw: str):
    raw = raw.strip()
    if key in _OPTIONAL_KEYS and raw.lower() in ("", "none", "default"):
        return None
    if key in _TUPLE_KEYS:
        return tuple(float(x) for x in raw.replace(";", ",").split(",") if x.strip())
    if key in _BOOL_KEYS:
        if raw.lower() in ("on", "true", "1", "yes"):
            return True
        if raw.lower() in ("off", "false", "0", "no"):
            return False
        raise InvalidParameterError(f"boolean key {key} got {raw!r}")
    if key in _INT_KEYS:
        return int(raw)
    if key in _STR_KEYS:
        return raw
    return float(raw)


def parse_config(path: str | Path) -> ScenarioConfig:
    """Read an INI scenario file, rejecting unknown sections and keys."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise InvalidParameterError(f"cannot read config file {path}")
    cfg = ScenarioConfig()
    for section in parser.sections():
        if section == "output":
            for key, raw in parser.items(section):
                if key != "directory":
                    raise InvalidParameterError(f"unknown key [output] {key}")
                cfg.output = raw.strip()
            continue
        if section not in _SECTION_MAP:
            raise InvalidParameterError(f"unknown config section [{section}]")
        attr, cls = _SECTION_MAP[section]
        target = getattr(cfg, attr)
        known = set(cls.__dataclass_fields__)
        for key, raw in parser.items(section):
            if key not in known:
                raise InvalidParameterError(f"unknown key [{section}] {key}")
            setattr(target, key, _convert(key, raw))
    return cfg


def config_hash(cfg: ScenarioConfig) -> str:
    """Stable content hash of the full configuration."""
    blob = json.dumps(asdict(cfg), sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
