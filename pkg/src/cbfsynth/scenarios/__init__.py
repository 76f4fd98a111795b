"""Registered scenarios and the mapping from flat config keys to parameters."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from ..errors import ConfigError, UnknownScenario
from . import acc_lk, braking, segway, stones


@dataclass(frozen=True)
class Entry:
    params_cls: type
    builder: object
    aliases: dict  # config key -> attribute path inside the params object
    controllers: tuple
    description: str


REGISTRY = {
    "acc_lk": Entry(
        acc_lk.AccLkParams, acc_lk.build,
        {
            "mass": "unicycle.m", "inertia": "unicycle.I_z", "offset_a": "unicycle.a",
            "tau_headway": "acc.tau_hw", "lead_speed": "acc.lead_v", "lead_gap0": "acc.lead_x0",
            "d_max": "lk.d_max", "a_max": "lk.a_max",
        },
        ("nominal", "safety_filter", "clf_cbf_qp"),
        "unicycle adaptive cruise control + lane keeping (CLF-CBF QP)",
    ),
    "stones": Entry(
        stones.StonesParams, stones.build, {},
        ("nominal", "safety_filter", "clf_ecbf_qp"),
        "planar swing foot inside an annulus, two relative-degree-2 ECBFs",
    ),
    "segway_lite": Entry(
        segway.SegwayLiteParams, segway.build, {},
        ("nominal", "safety_filter"),
        "linearized Segway with ECBF angle limits under voltage bounds",
    ),
    "segway_backup": Entry(
        segway.SegwayLiteParams, segway.build_backup, {},
        ("nominal", "backup_filter"),
        "linearized Segway with a backup-controller CBF on the state box",
    ),
    "braking": Entry(
        braking.BrakingParams, braking.build, {},
        ("nominal", "backup_filter"),
        "braking double integrator with a backup-controller CBF",
    ),
}


def names() -> list:
    return sorted(REGISTRY)


def entry(name: str) -> Entry:
    if name not in REGISTRY:
        raise UnknownScenario(f"unknown scenario {name!r}; registered: {', '.join(names())}")
    return REGISTRY[name]


def _leaf_fields(cls, prefix=""):
    """Flat ``{path: field}`` for a (possibly nested) params dataclass."""
    out = {}
    for f in dataclasses.fields(cls):
        default = f.default_factory() if f.default is dataclasses.MISSING else f.default
        if dataclasses.is_dataclass(default):
            out.update(_leaf_fields(type(default), prefix + f.name + "."))
        else:
            out[prefix + f.name] = default
    return out


def parameter_keys(name: str) -> dict:
    """Config key -> attribute path for scenario ``name``."""
    e = entry(name)
    keys = {}
    targets = set(e.aliases.values())
    for path in _leaf_fields(e.params_cls):
        if path in targets:
            continue
        keys[path.split(".")[-1].lower()] = path
    keys.update(e.aliases)
    return keys


def default_value(name: str, key: str):
    return _leaf_fields(entry(name).params_cls)[parameter_keys(name)[key]]


def make_params(name: str, overrides: dict):
    e = entry(name)
    keys = parameter_keys(name)
    nested: dict = {}
    for key, value in overrides.items():
        if key not in keys:
            raise ConfigError(f"unknown parameter {key!r} for scenario {name!r}")
        node = nested
        *head, leaf = keys[key].split(".")
        for part in head:
            node = node.setdefault(part, {})
        node[leaf] = value
    return _instantiate(e.params_cls, nested)


def _instantiate(cls, values: dict):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in values:
            continue
        v = values[f.name]
        if isinstance(v, dict):
            kwargs[f.name] = _instantiate(type(f.default_factory()), v)
        else:
            kwargs[f.name] = _coerce(v, f.default if f.default is not dataclasses.MISSING else None)
    return cls(**kwargs)


def _coerce(value, default):
    if isinstance(default, tuple):
        return tuple(float(v) for v in (value if isinstance(value, (list, tuple)) else [value]))
    if isinstance(default, bool):
        return bool(value)
    if isinstance(default, int) and not isinstance(default, bool):
        return int(value)
    if isinstance(default, float):
        return float(value)
    return value


def build(name: str, overrides: dict | None = None, run=None):
    e = entry(name)
    return e.builder(make_params(name, overrides or {}), run)
