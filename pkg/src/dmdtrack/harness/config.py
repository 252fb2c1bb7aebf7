"""
Experiment configuration: presets, key=value overrides and RunConfig assembly.

Config files are INI-style with a single ``[run]`` section::

    [run]
    preset = ncv-grid25
    sigma_nu2 = 0.75
    T = 500

Unknown keys are rejected so that every recorded experiment is reproducible
from its echoed configuration.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dynamics import LinearDynamics, NoiseProcess, ncv_dynamics
from ..engine import ConfigError, LossSpec, RunConfig, StepSchedule
from ..geometry import ENTROPY, EUCLIDEAN, FeasibleSet, MirrorMap
from ..network import NetworkError, build_graph, weights_for

SECTION = "run"

BASE = {
    "preset": "custom",
    "T": "1000",
    "seed": "0",
    "topology": "grid:5x5",
    "n": "",
    "weights": "metropolis",
    "map": "euclidean",
    "mu": "0.01",
    "set": "whole",
    "d": "",
    "dynamics": "identity",
    "epsilon": "0.1",
    "noise": "zero",
    "sigma_nu2": "0.5",
    "noise_vector": "",
    "x0": "",
    "init": "",
    "loss": "quadratic",
    "grad_noise": "0",
    "schedule": "constant",
    "eta": "0.1",
    "clip_L": "auto",
    "bound_set": "auto",
    "bound_margin": "1.0",
    "L_budget": "2000",
    "record": "full",
    "workers": "1",
}

PRESETS = {
    "custom": {},
    "ncv-grid25": {
        "topology": "grid:5x5", "weights": "metropolis", "map": "euclidean", "set": "whole",
        "dynamics": "ncv", "epsilon": "0.1", "noise": "ncv", "sigma_nu2": "0.5",
        "loss": "quartic", "schedule": "constant", "eta": "0.1", "T": "1000",
        "x0": "0,0,0,0", "init": "0,0,0,0",
    },
    "static-quadratic": {
        "topology": "grid:3x3", "weights": "metropolis", "map": "euclidean", "set": "box:0:1",
        "d": "2", "dynamics": "identity", "noise": "zero", "loss": "quadratic",
        "grad_noise": "0.5", "x0": "0.3,0.7", "schedule": "static-optimal", "T": "1000",
    },
    "complete-graph-centralized": {
        "topology": "complete:25", "weights": "uniform", "map": "euclidean", "set": "whole",
        "dynamics": "ncv", "epsilon": "0.1", "noise": "ncv", "sigma_nu2": "0.5",
        "loss": "quartic", "schedule": "constant", "eta": "0.1", "T": "1000",
        "x0": "0,0,0,0", "init": "0,0,0,0",
    },
}


def _vec(text, what):
    try:
        return np.array([float(v) for v in text.split(",")], dtype=float)
    except ValueError:
        raise ConfigError(f"{what}: expected comma-separated numbers, got {text!r}") from None


def _num(values, key, cast=float):
    try:
        return cast(values[key])
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {values[key]!r}") from None


def parse_set(text, d, mu=0.01) -> FeasibleSet:
    """``whole``, ``box:LO:HI``, ``ball:R`` or ``ball:R@C1,..,Cd``, ``simplex``.

    Box bounds are scalars (applied to every coordinate) or comma lists.
    """
    kind, _, arg = text.partition(":")
    kind = kind.strip().lower()
    if kind == "whole":
        return FeasibleSet.whole(d)
    if kind == "simplex":
        return FeasibleSet.simplex(d, mu)
    if kind == "box":
        lo, sep, hi = arg.partition(":")
        if not sep:
            raise ConfigError(f"box needs LO:HI, got {text!r}")
        lo, hi = _vec(lo, "box lower"), _vec(hi, "box upper")
        lo = np.broadcast_to(lo, (d,)) if lo.size == 1 else lo
        hi = np.broadcast_to(hi, (d,)) if hi.size == 1 else hi
        if lo.size != d or hi.size != d:
            raise ConfigError(f"box bounds must have {d} entries")
        return FeasibleSet.box(lo, hi)
    if kind == "ball":
        r, _, c = arg.partition("@")
        center = _vec(c, "ball center") if c else np.zeros(d)
        if center.size != d:
            raise ConfigError(f"ball center must have {d} entries")
        try:
            radius = float(r)
        except ValueError:
            raise ConfigError(f"ball needs R@CENTER, got {text!r}") from None
        return FeasibleSet.ball(center, radius)
    raise ConfigError(f"unknown feasible set {text!r}")


def format_set(fset: FeasibleSet) -> str:
    f = lambda a: ",".join(format(float(v), ".17g") for v in a)
    if fset.kind == "box":
        return f"box:{f(fset.lower)}:{f(fset.upper)}"
    if fset.kind == "ball":
        return f"ball:{format(fset.radius, '.17g')}@{f(fset.center)}"
    return fset.kind


@dataclass
class Settings:
    """Resolved string settings (preset defaults + file + overrides)."""

    values: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.values[key]

    def echo(self) -> dict:
        return dict(self.values)


def resolve(preset=None, file_values=None, overrides=None) -> Settings:
    """Layer base defaults, a preset, file values and overrides in that order."""
    file_values = dict(file_values or {})
    overrides = dict(overrides or {})
    for src in (file_values, overrides):
        unknown = sorted(set(src) - set(BASE))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    name = overrides.get("preset") or preset or file_values.get("preset") or "custom"
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    values = dict(BASE)
    values.update(PRESETS[name])
    values.update(file_values)
    values.update(overrides)
    values["preset"] = name
    return Settings(values)


def read_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    extra = [s for s in parser.sections() if s != SECTION]
    if extra:
        raise ConfigError(f"{path}: unknown section(s) {extra}; use [{SECTION}]")
    if not parser.has_section(SECTION):
        raise ConfigError(f"{path}: missing [{SECTION}] section")
    return dict(parser.items(SECTION))


def parse_overrides(pairs) -> dict:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override must look like key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _dynamics(values, d):
    kind = values["dynamics"].strip().lower()
    if kind == "ncv":
        eps = _num(values, "epsilon")
        if eps <= 0:
            raise ConfigError("epsilon must be positive")
        return ncv_dynamics(eps)
    if d is None:
        raise ConfigError(f"dynamics {kind!r} needs the state dimension d (set d, x0 or init)")
    if kind == "identity":
        return LinearDynamics.identity(d)
    if kind.startswith("scaled:"):
        try:
            c = float(kind.split(":", 1)[1])
        except ValueError:
            raise ConfigError(f"malformed dynamics {values['dynamics']!r}") from None
        return LinearDynamics(c * np.eye(d))
    raise ConfigError(f"unknown dynamics {values['dynamics']!r}")


def build_run_config(settings: Settings) -> RunConfig:
    v = settings.values
    d = _num(v, "d", int) if v["d"] else None
    if d is None:
        # fall back on the length of an explicit start vector
        for key in ("x0", "init"):
            if v[key]:
                d = _vec(v[key], key).size
                break
    dyn = _dynamics(v, d)
    if d is not None and d != dyn.d:
        raise ConfigError(f"dimension conflict: d={d} but dynamics {v['dynamics']!r} has d={dyn.d}")
    d = dyn.d
    try:
        graph = build_graph(v["topology"])
    except (NetworkError, OSError) as exc:
        raise ConfigError(f"topology: {exc}") from None
    if v["n"]:
        n = _num(v, "n", int)
        if n != graph.n:
            raise ConfigError(f"dimension conflict: n={n} but topology {v['topology']} has {graph.n} agents")
    try:
        weights = weights_for(graph, v["weights"])
    except NetworkError as exc:
        raise ConfigError(f"weights: {exc}") from None

    mkind = {"euclidean": EUCLIDEAN, "entropy": ENTROPY, "kl": ENTROPY}.get(v["map"].lower())
    if mkind is None:
        raise ConfigError(f"unknown mirror map {v['map']!r}")
    mirror = MirrorMap(mkind, d)
    mu = _num(v, "mu")
    fset = parse_set(v["set"], d, mu)

    noise_kind = v["noise"].strip().lower()
    if noise_kind == "zero":
        noise = NoiseProcess.zero()
    elif noise_kind == "ncv":
        if d != 4:
            raise ConfigError(f"dimension conflict: ncv noise is 4-dimensional, d={d}")
        noise = NoiseProcess.ncv(_num(v, "sigma_nu2"), _num(v, "epsilon"))
    elif noise_kind == "constant":
        vec = _vec(v["noise_vector"], "noise_vector") if v["noise_vector"] else None
        if vec is None or vec.size != d:
            raise ConfigError(f"constant noise needs noise_vector with {d} entries")
        T = _num(v, "T", int)
        noise = NoiseProcess.scripted(np.tile(vec, (max(T, 1), 1)))
    else:
        raise ConfigError(f"unknown noise {v['noise']!r}")

    x0 = _vec(v["x0"], "x0") if v["x0"] else None
    init = _vec(v["init"], "init") if v["init"] else None
    for name, vec in (("x0", x0), ("init", init)):
        if vec is not None and vec.size != d:
            raise ConfigError(f"dimension conflict: {name} has {vec.size} entries, d={d}")

    family = v["loss"].strip().lower()
    params = {}
    if family == "quadratic":
        params["grad_noise"] = _num(v, "grad_noise")
    elif family != "quartic":
        raise ConfigError(f"unknown loss {v['loss']!r}")

    sched_kind = v["schedule"].strip().lower()
    schedule = StepSchedule(sched_kind, _num(v, "eta") if sched_kind != "static-optimal" else 0.0)

    clip = v["clip_L"].strip().lower()
    clip_L = "auto" if clip == "auto" else (None if clip in ("none", "off") else _num(v, "clip_L"))
    bset = v["bound_set"].strip()
    bound_set = None if bset.lower() == "auto" else parse_set(bset, d, mu)

    T = _num(v, "T", int)
    cfg = RunConfig(
        T=T, weights=weights, mirror=mirror, fset=fset, dynamics=dyn, noise=noise,
        loss=LossSpec(family, params), schedule=schedule, seed=_num(v, "seed", int),
        record=v["record"].strip().lower(), x0_target=x0, init=init, clip_L=clip_L,
        bound_set=bound_set, bound_margin=_num(v, "bound_margin"),
        workers=_num(v, "workers", int), L_budget=_num(v, "L_budget", int), echo=settings.echo(),
    )
    if cfg.seed < 0:
        raise ConfigError("seed must be nonnegative")
    return cfg.validate()


def load(config_path=None, preset=None, overrides=None) -> tuple[Settings, RunConfig]:
    file_values = read_config_file(config_path) if config_path else {}
    settings = resolve(preset, file_values, overrides)
    return settings, build_run_config(settings)
