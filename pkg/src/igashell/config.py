"""Run configuration: strict JSON parsing with defaults and validation.

Every section is optional; absent keys take the defaults below.  Unknown
keys are rejected with the list of valid ones, and range violations name the
offending key.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .analysis import DOF_NAMES, AnalysisConfigError, GaussRule, Load, MaterialParams, Support
from .density import DensityConfigError, LocalVolumeSpec
from .fairing import FairingConfig, FairingError
from .geometry import GeometryConfigError, ShellModel, build_multilevel, load_surface, make_preset
from .mma import MmaConfig, MmaConfigError
from .optimize import Continuation, OptConfigError, OptProblem, Termination

__all__ = ["ConfigError", "DEFAULTS", "RunConfig", "load_config", "parse_config", "build_problem"]


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "geometry": {"preset": "plate", "file": None, "params": {}},
    "thickness": 5.0,
    "design_spans": [15, 15],
    "analysis_spans": [50, 50],
    "gauss": None,
    "material": {"E0": 2100.0, "nu": 0.3, "E_min": None, "penal": 5.0, "shear_correction": 5.0 / 6.0},
    "problem": {"kind": "P", "volume_fraction": 0.3, "alpha": 0.5, "radius": 8.0, "gamma": 16.0},
    "supports": [
        {"kind": "edge", "where": "s0"},
        {"kind": "edge", "where": "s1"},
        {"kind": "edge", "where": "t0"},
        {"kind": "edge", "where": "t1"},
    ],
    "loads": [{"kind": "point", "force": [0.0, 0.0, -100.0], "at": [0.5, 0.5]}],
    "mma": {
        "move": 0.1,
        "asyinit": 0.1,
        "asyincr": 1.1,
        "asydecr": 0.7,
        "albefa": 0.1,
        "raa0": 1e-5,
        "asymin": 1e-3,
        "asymax": 10.0,
        "c": 1000.0,
        "d": 1.0,
        "max_inner_tolerance": 1e-9,
        "reset_on_tau_change": False,
    },
    "continuation": {"tau_start": 2.0, "tau_max": 64.0, "every": 25, "kappa": 0.5},
    "termination": {
        "tol": 0.005,
        "patience": 5,
        "max_iter": 200,
        "after_full_continuation": True,
        "constraint_tol": 1e-3,
    },
    "fairing": {
        "enabled": True,
        "resolution": [200, 200],
        "lam": 0.01,
        "iso": 0.5,
        "min_points": 8,
        "n_ctrl": None,
        "samples": 200,
        "kind": "span_integral",
    },
    "output_dir": "out",
    "seed": 0,
}

_SUPPORT_KEYS = {"kind", "where", "dofs"}
_LOAD_KEYS = {"kind", "force", "at", "iso", "value"}


def _merge(defaults: dict, given: dict, path: str) -> dict:
    if not isinstance(given, dict):
        raise ConfigError(f"{path or 'config'} must be a JSON object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        where = f"in '{path}'" if path else "at top level"
        raise ConfigError(f"unknown key(s) {unknown} {where}; valid keys: {sorted(defaults)}")
    out = copy.deepcopy(defaults)
    for k, v in given.items():
        sub = f"{path}.{k}" if path else k
        if isinstance(defaults[k], dict) and k != "params":
            out[k] = _merge(defaults[k], v, sub)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _check_records(records: Any, valid: set[str], path: str) -> None:
    if not isinstance(records, list):
        raise ConfigError(f"'{path}' must be a list")
    for n, r in enumerate(records):
        if not isinstance(r, dict):
            raise ConfigError(f"'{path}[{n}]' must be an object")
        unknown = sorted(set(r) - valid)
        if unknown:
            raise ConfigError(f"unknown key(s) {unknown} in '{path}[{n}]'; valid keys: {sorted(valid)}")


def _spans(v: Any, key: str) -> tuple[int, int]:
    if not (isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(x, int) and x >= 1 for x in v)):
        raise ConfigError(f"'{key}' must be two positive integers, got {v!r}")
    return int(v[0]), int(v[1])


@dataclass
class RunConfig:
    """Validated configuration; ``data`` holds the fully resolved JSON document."""

    data: dict

    def __getitem__(self, key: str) -> Any:
        return self.data[key]

    @property
    def material(self) -> MaterialParams:
        m = self.data["material"]
        return MaterialParams(m["E0"], m["nu"], m["E_min"], m["penal"], m["shear_correction"])

    @property
    def mma(self) -> MmaConfig:
        m = {k: v for k, v in self.data["mma"].items() if k != "reset_on_tau_change"}
        return MmaConfig(**m)

    @property
    def continuation(self) -> Continuation:
        return Continuation(**self.data["continuation"])

    @property
    def termination(self) -> Termination:
        return Termination(**self.data["termination"])

    @property
    def fairing(self) -> FairingConfig:
        f = {k: v for k, v in self.data["fairing"].items() if k != "enabled"}
        f["resolution"] = tuple(f["resolution"])
        return FairingConfig(**f)

    @property
    def local(self) -> LocalVolumeSpec:
        p = self.data["problem"]
        return LocalVolumeSpec(p["radius"], p["alpha"], p["gamma"])

    @property
    def supports(self) -> list[Support]:
        out = []
        for r in self.data["supports"]:
            where = tuple(r["where"]) if isinstance(r["where"], list) else r["where"]
            dofs = tuple(r["dofs"]) if "dofs" in r else DOF_NAMES
            out.append(Support(r["kind"], where, dofs))
        return out

    @property
    def loads(self) -> list[Load]:
        out = []
        for r in self.data["loads"]:
            at = r.get("at")
            out.append(Load(r["kind"], tuple(r["force"]), None if at is None else tuple(at), r.get("iso"), r.get("value")))
        return out

    @property
    def rule(self) -> GaussRule | None:
        g = self.data["gauss"]
        return None if g is None else GaussRule(*g)

    def to_json(self) -> str:
        return json.dumps(self.data, indent=2, sort_keys=True)


def parse_config(doc: dict, base_dir: str | Path | None = None) -> RunConfig:
    """Merge ``doc`` over the defaults and validate every section."""
    data = _merge(DEFAULTS, doc, "")
    for key, valid in (("supports", _SUPPORT_KEYS), ("loads", _LOAD_KEYS)):
        _check_records(data[key], valid, key)
    _spans(data["design_spans"], "design_spans")
    _spans(data["analysis_spans"], "analysis_spans")
    if not isinstance(data["thickness"], (int, float)) or not data["thickness"] > 0:
        raise ConfigError(f"'thickness' must be a positive number, got {data['thickness']!r}")
    geo = data["geometry"]
    if geo["file"] is not None:
        p = Path(geo["file"])
        if not p.is_absolute() and base_dir is not None:
            p = Path(base_dir) / p
        if not p.exists():
            raise ConfigError(f"'geometry.file' does not exist: {p}")
        geo["file"] = str(p)
    if data["problem"]["kind"] not in ("P", "Q"):
        raise ConfigError(f"'problem.kind' must be 'P' or 'Q', got {data['problem']['kind']!r}")
    if not 0 < data["problem"]["volume_fraction"] < 1:
        raise ConfigError(f"'problem.volume_fraction' must lie in (0, 1), got {data['problem']['volume_fraction']}")
    if data["gauss"] is not None and not (
        isinstance(data["gauss"], list) and len(data["gauss"]) == 3 and all(isinstance(x, int) and x >= 1 for x in data["gauss"])
    ):
        raise ConfigError("'gauss' must be null or three positive integers [n_s, n_t, n_z]")
    cfg = RunConfig(data)
    checks = {
        "material": lambda: cfg.material,
        "mma": lambda: cfg.mma,
        "continuation": lambda: cfg.continuation,
        "termination": lambda: cfg.termination,
        "fairing": lambda: cfg.fairing,
        "problem": lambda: cfg.local,
        "supports": lambda: cfg.supports,
        "loads": lambda: cfg.loads,
    }
    for section, make in checks.items():
        try:
            make()
        except (AnalysisConfigError, DensityConfigError, MmaConfigError, OptConfigError, FairingError, TypeError, ValueError) as exc:
            raise ConfigError(f"invalid '{section}': {exc}") from None
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from None
    return parse_config(doc, path.parent)


def build_shell(cfg: RunConfig) -> ShellModel:
    geo = cfg["geometry"]
    try:
        surf = load_surface(geo["file"]) if geo["file"] else make_preset(geo["preset"], **geo["params"])
    except (GeometryConfigError, TypeError) as exc:
        raise ConfigError(f"invalid 'geometry': {exc}") from None
    return ShellModel(surf, float(cfg["thickness"]))


def build_problem(cfg: RunConfig) -> OptProblem:
    shell = build_shell(cfg)
    try:
        ml = build_multilevel(shell, _spans(cfg["design_spans"], "design_spans"), _spans(cfg["analysis_spans"], "analysis_spans"))
    except GeometryConfigError as exc:
        raise ConfigError(str(exc)) from None
    p = cfg["problem"]
    return OptProblem(
        kind=p["kind"],
        multilevel=ml,
        supports=cfg.supports,
        loads=cfg.loads,
        material=cfg.material,
        volume_fraction=p["volume_fraction"] if p["kind"] == "P" else None,
        local=cfg.local if p["kind"] == "Q" else None,
        mma=cfg.mma,
        continuation=cfg.continuation,
        termination=cfg.termination,
        rule=cfg.rule,
        reset_asymptotes_on_tau=bool(cfg["mma"]["reset_on_tau_change"]),
    )
