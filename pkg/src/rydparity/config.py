"""Run configuration: strict YAML schema with SI unit-suffixed keys.

Top-level keys hold the run itself; the optional sections ``physics``,
``optimization``, ``noise``, ``scan``, ``tomography`` and ``robustness``
override defaults. Unknown keys, wrong types and invalid values are reported
with the file line and the dotted key.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml

from .model import GEOMETRY_NAMES, TWO_PI

COMMANDS = ("optimize", "qsl-scan", "simulate", "budget", "tomography", "robustness", "theta-sweep", "rabi-scan")
THREADS_ENV = "RYDPARITY_THREADS"


class ConfigError(ValueError):
    pass


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _int(v):
    return isinstance(v, int) and not isinstance(v, bool)


def _num_list(v):
    return isinstance(v, list) and all(_num(x) for x in v)


def _str_list(v):
    return isinstance(v, list) and all(isinstance(x, str) for x in v)


_TYPES = {
    "float": (_num, "a number"),
    "int": (_int, "an integer"),
    "bool": (lambda v: isinstance(v, bool), "true/false"),
    "str": (lambda v: isinstance(v, str), "a string"),
    "floats": (_num_list, "a list of numbers"),
    "strs": (_str_list, "a list of strings"),
    "optfloat": (lambda v: v is None or _num(v), "a number or null"),
    "optint": (lambda v: v is None or _int(v), "an integer or null"),
    "optstr": (lambda v: v is None or isinstance(v, str), "a string or null"),
}

# key -> (type, default)
SCHEMA: dict[str, dict[str, tuple[str, Any]]] = {
    "": {
        "command": ("str", None),
        "seed": ("int", 0),
        "output_dir": ("str", "results"),
        "geometry": ("str", "linear-pair"),
        "r_min_m": ("float", 2e-6),
        "theta": ("float", math.pi / 4),
        "duration_norm": ("float", 2.1),
        "pulse_file": ("optstr", None),
        "threads": ("int", 1),
    },
    "physics": {
        "c6_ghz_um6": ("float", -150.0),
        "omega_max_rad_s": ("float", TWO_PI * 10e6),
        "gamma_d_per_s": ("float", 1.0 / 80e-6),
        "lambda_laser_m": ("float", 323e-9),
        "mass_kg": ("optfloat", None),
        "omega_par_rad_s": ("float", TWO_PI * 100e3),
        "omega_perp_rad_s": ("float", TWO_PI * 100e3),
    },
    "optimization": {
        "m_steps": ("optint", None),
        "eta_delta": ("float", 1e-3),
        "eta_r": ("float", 1e-2),
        "eta_rr": ("float", 1e2),
        "noise_aware": ("bool", True),
        "time_units": ("str", "normalized"),
        "n_starts": ("int", 20),
        "max_iters": ("int", 2000),
        "grad_tolerance": ("float", 1e-9),
        "ftol": ("float", 1e-12),
        "optimize_rabi": ("bool", False),
        "antisymmetric_phase": ("bool", False),
        "substeps": ("int", 4),
        "ramp_enabled": ("bool", True),
        "ramp_kappa": ("float", 10.0),
        "ramp_tau_s": ("optfloat", None),
    },
    "noise": {
        "n_fock": ("optint", None),
        "taylor_order": ("int", 10),
        "trap_axis": ("str", "parallel"),
        "include_decay": ("bool", True),
        "include_recoil": ("bool", True),
        "include_vdw_gradient": ("bool", True),
        "krylov_dim": ("int", 30),
        "krylov_tolerance": ("float", 1e-10),
    },
    "scan": {
        "durations_norm": ("floats", []),
        "thresholds": ("floats", [1e-6, 1e-4]),
        "thetas": ("floats", []),
        "gamma_grid_per_s": ("floats", []),
        "omega_par_grid_rad_s": ("floats", []),
        "omega_perp_grid_rad_s": ("floats", []),
        "temperature_k": ("float", 2e-6),
        "omega_max_list_rad_s": ("floats", []),
        "r_min_list_m": ("floats", []),
    },
    "tomography": {
        "channels": ("strs", ["decay_r_to_1", "dephase_1r", "dephase_01"]),
        "decay_rate_per_s": ("float", 12.5e3),
        "dephasing_rate_per_s": ("float", 0.1e3),
        "implementations": ("strs", ["native", "v_decomposition", "x_decomposition", "zz_decomposition"]),
        "z2_pulse_file": ("optstr", None),
        "substeps": ("int", 4),
    },
    "robustness": {
        "perturbations": ("strs", ["rabi:quasi_static", "detuning:quasi_static", "phase:time_varying", "rabi:time_varying", "detuning:time_varying"]),
        "epsilons": ("floats", [0.0, 0.01, 0.02, 0.03, 0.04]),
        "n_samples": ("int", 50),
    },
}

# accepted spellings that map onto a canonical key
ALIASES = {("", "r_min"): "r_min_m"}


@dataclass
class RunConfig:
    command: str
    seed: int
    output_dir: str
    geometry: str
    r_min_m: float
    theta: float
    duration_norm: float
    pulse_file: str | None
    threads: int
    physics: dict = field(default_factory=dict)
    optimization: dict = field(default_factory=dict)
    noise: dict = field(default_factory=dict)
    scan: dict = field(default_factory=dict)
    tomography: dict = field(default_factory=dict)
    robustness: dict = field(default_factory=dict)
    source: str | None = None

    @property
    def r_min_um(self) -> float:
        return self.r_min_m * 1e6

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in SCHEMA[""]}
        for sec in SCHEMA:
            if sec:
                d[sec] = dict(getattr(self, sec))
        return d

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _where(source: str | None, node) -> str:
    line = node.start_mark.line + 1 if node is not None else None
    if source and line:
        return f"{source}:{line}: "
    return f"line {line}: " if line else ""


def _check_mapping(data: dict, node, source, section: str) -> dict:
    schema = SCHEMA[section]
    key_nodes = {}
    if node is not None and isinstance(node, yaml.MappingNode):
        key_nodes = {k.value: (k, v) for k, v in node.value}
    out = {}
    for key, value in data.items():
        kn = key_nodes.get(key, (None, None))[0]
        dotted = f"{section}.{key}" if section else str(key)
        canonical = ALIASES.get((section, key), key)
        if section == "" and key in SCHEMA and key:
            continue
        if canonical not in schema:
            raise ConfigError(f"{_where(source, kn)}unknown key '{dotted}'")
        kind, _ = schema[canonical]
        check, desc = _TYPES[kind]
        if not check(value):
            raise ConfigError(f"{_where(source, kn)}key '{dotted}' must be {desc}, got {value!r}")
        if canonical in out:
            raise ConfigError(f"{_where(source, kn)}key '{dotted}' given twice")
        out[canonical] = value
    return out


def _validate(cfg: RunConfig, source):
    def fail(msg):
        raise ConfigError(f"{source + ': ' if source else ''}{msg}")

    if cfg.command not in COMMANDS:
        fail(f"key 'command' must be one of {', '.join(COMMANDS)}, got {cfg.command!r}")
    if cfg.geometry not in GEOMETRY_NAMES:
        fail(f"key 'geometry' must be one of {', '.join(GEOMETRY_NAMES)}, got {cfg.geometry!r}")
    if not cfg.r_min_m > 0:
        fail(f"key 'r_min_m' must be positive, got {cfg.r_min_m}")
    if cfg.duration_norm < 0:
        fail("key 'duration_norm' must be non-negative")
    if cfg.threads < 1:
        fail("key 'threads' must be >= 1")
    if not 0 <= cfg.seed < 2**64:
        fail("key 'seed' must fit in 64 bits")
    for sec in ("physics",):
        for k in ("omega_max_rad_s", "omega_par_rad_s", "omega_perp_rad_s", "lambda_laser_m"):
            if not cfg.physics[k] > 0:
                fail(f"key 'physics.{k}' must be positive")
    if cfg.physics["gamma_d_per_s"] < 0:
        fail("key 'physics.gamma_d_per_s' must be non-negative")
    if not cfg.physics["c6_ghz_um6"] < 0:
        fail("key 'physics.c6_ghz_um6' must be negative")
    o = cfg.optimization
    for k in ("eta_delta", "eta_r", "eta_rr"):
        if o[k] < 0:
            fail(f"key 'optimization.{k}' must be non-negative")
    if o["time_units"] not in ("normalized", "seconds"):
        fail("key 'optimization.time_units' must be 'normalized' or 'seconds'")
    if o["n_starts"] < 1 or o["max_iters"] < 1 or o["substeps"] < 1:
        fail("optimization counts must be >= 1")
    if cfg.noise["trap_axis"] not in ("parallel", "perpendicular"):
        fail("key 'noise.trap_axis' must be 'parallel' or 'perpendicular'")
    for path_key, path in (("pulse_file", cfg.pulse_file), ("tomography.z2_pulse_file", cfg.tomography["z2_pulse_file"])):
        if path is not None and not Path(path).is_file():
            fail(f"key '{path_key}' refers to a missing file: {path}")
    if any(d > 7.0 for d in cfg.scan["durations_norm"]) and cfg.command == "rabi-scan":
        fail("rabi-scan durations must satisfy Omega0 T/(2 pi) <= 7")


def parse_config(path: str | os.PathLike | None = None, overrides: dict | None = None) -> RunConfig:
    """Load ``path`` (YAML), apply dotted ``overrides`` and fill defaults."""
    source = str(path) if path is not None else None
    data: dict = {}
    root = None
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            root = yaml.compose(text)
            data = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{source}: invalid YAML: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{source}: top level must be a mapping")
    data = {k: (dict(v) if isinstance(v, dict) else v) for k, v in data.items()}
    for dotted, value in (overrides or {}).items():
        parts = dotted.split(".")
        if len(parts) == 1:
            data[parts[0]] = value
        elif len(parts) == 2:
            sec = data.setdefault(parts[0], {})
            if not isinstance(sec, dict):
                raise ConfigError(f"section '{parts[0]}' must be a mapping")
            sec[parts[1]] = value
        else:
            raise ConfigError(f"bad override key '{dotted}'")

    section_nodes = {}
    if isinstance(root, yaml.MappingNode):
        section_nodes = {k.value: (k, v) for k, v in root.value}
    for key in data:
        if key in SCHEMA and key:
            if not isinstance(data[key], dict):
                kn = section_nodes.get(key, (None, None))[0]
                raise ConfigError(f"{_where(source, kn)}section '{key}' must be a mapping")
    top = _check_mapping(data, root, source, "")
    values = {k: top.get(k, default) for k, (_, default) in SCHEMA[""].items()}
    if values["command"] is None:
        raise ConfigError(f"{source + ': ' if source else ''}missing required key 'command'")
    sections = {}
    for sec in SCHEMA:
        if not sec:
            continue
        node = section_nodes.get(sec, (None, None))[1]
        given = _check_mapping(data.get(sec, {}), node, source, sec)
        sections[sec] = {k: given.get(k, default) for k, (_, default) in SCHEMA[sec].items()}
    cfg = RunConfig(**values, **sections, source=source)
    for k in ("r_min_m", "theta", "duration_norm"):
        setattr(cfg, k, float(getattr(cfg, k)))
    _validate(cfg, source)
    return cfg


def thread_count(cfg: RunConfig, flag: int | None = None) -> int:
    """Environment variable beats the flag, which beats the config."""
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
        if n < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1")
        return n
    return flag if flag is not None else cfg.threads
