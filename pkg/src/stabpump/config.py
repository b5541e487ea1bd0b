"""Run configuration: a flat JSON document validated before any computation."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .stabilizer import StabilizerSet, linear_cluster_set, make_set

PRESETS = ("linear_cluster",)
INITIAL_STATES = ("fully_mixed", "all_L")
VARIANTS = ("standard", "rotated")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    n_atoms: int
    stabilizers: list[str] | None = None
    preset: str | None = None
    n_max: int = 2
    lam: float = 0.05
    lambdas: list[float] | None = None
    cycles: int = 200
    epsilon: float | None = 1e-4
    min_cycles: int = 2
    dt: float | None = None
    stride: int = 200
    initial: Any = "fully_mixed"
    variant: str = "standard"
    coupled: str = "minus"
    overlap_rule: str = "refined"
    output_dir: str = "runs"
    name: str | None = None
    seed: int = 0
    trials: int = 10000
    walk_initial: Any = "uniform"
    g_khz: float | None = None
    checkpoint_every: int = 0
    check_positivity: bool = True
    workers: int = 1

    def stabilizer_set(self) -> StabilizerSet:
        if self.preset == "linear_cluster":
            return linear_cluster_set(self.n_atoms)
        return make_set(self.stabilizers, self.n_atoms)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    def digest(self) -> str:
        """SHA-256 of the canonical JSON form, excluding output locations."""
        d = self.to_dict()
        for key in ("output_dir", "name", "workers"):
            d.pop(key)
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def run_name(self) -> str:
        if self.name:
            return self.name
        words = self.preset or "-".join(self.stabilizers or [])
        return f"{words}_N{self.n_atoms}_lam{self.lam:g}_{self.variant}"


_FIELDS = {f.name for f in dataclasses.fields(RunConfig)}
_REQUIRED = {f.name for f in dataclasses.fields(RunConfig) if f.default is dataclasses.MISSING}


def from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    data = dict(raw)
    if "lambda" in data:
        if "lam" in data:
            raise ConfigError("give either 'lambda' or 'lam', not both")
        data["lam"] = data.pop("lambda")
    unknown = sorted(set(data) - _FIELDS)
    if unknown:
        raise ConfigError(f"unknown configuration key(s): {', '.join(unknown)}")
    missing = sorted(_REQUIRED - set(data))
    if missing:
        raise ConfigError(f"missing required field(s): {', '.join(missing)}")
    cfg = RunConfig(**data)
    validate(cfg)
    return cfg


def load(path: str | Path, overrides: dict | None = None) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if overrides:
        if not isinstance(raw, dict):
            raise ConfigError("configuration must be a JSON object")
        raw.update(overrides)
    return from_dict(raw)


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate(cfg: RunConfig) -> None:
    _check(isinstance(cfg.n_atoms, int) and cfg.n_atoms >= 1, "n_atoms must be a positive integer")
    _check(isinstance(cfg.n_max, int) and cfg.n_max >= 1, "n_max must be an integer >= 1")
    _check((cfg.stabilizers is None) != (cfg.preset is None),
           "give exactly one of 'stabilizers' or 'preset'")
    if cfg.preset is not None:
        _check(cfg.preset in PRESETS, f"unknown preset {cfg.preset!r}; choose from {PRESETS}")
    else:
        _check(isinstance(cfg.stabilizers, list) and all(isinstance(w, str) for w in cfg.stabilizers),
               "stabilizers must be a list of Pauli words")
    _check(0 < float(cfg.lam) < 1, "lambda must lie in (0, 1)")
    if cfg.lambdas is not None:
        _check(isinstance(cfg.lambdas, list), "lambdas must be a list")
        _check(all(0 < float(x) < 1 for x in cfg.lambdas), "every entry of lambdas must lie in (0, 1)")
    _check(isinstance(cfg.cycles, int) and cfg.cycles >= 1, "cycles must be an integer >= 1")
    _check(cfg.epsilon is None or cfg.epsilon > 0, "epsilon must be positive or null")
    _check(cfg.dt is None or cfg.dt > 0, "dt must be positive or null")
    _check(isinstance(cfg.stride, int) and cfg.stride >= 1, "stride must be an integer >= 1")
    if isinstance(cfg.initial, dict):
        _check(set(cfg.initial) == {"diagonal"}, "custom initial state must be {\"diagonal\": [...]}")
        _check(len(cfg.initial["diagonal"]) == 2**cfg.n_atoms,
               f"diagonal initial state needs {2**cfg.n_atoms} weights")
    else:
        _check(cfg.initial in INITIAL_STATES, f"initial must be one of {INITIAL_STATES} or a diagonal")
    _check(cfg.variant in VARIANTS, f"variant must be one of {VARIANTS}")
    _check(cfg.coupled in ("minus", "plus"), "coupled must be 'minus' or 'plus'")
    _check(cfg.overlap_rule in ("refined", "coarse"), "overlap_rule must be 'refined' or 'coarse'")
    _check(isinstance(cfg.trials, int) and cfg.trials >= 1, "trials must be an integer >= 1")
    _check(cfg.g_khz is None or cfg.g_khz > 0, "g_khz must be positive")
    _check(isinstance(cfg.checkpoint_every, int) and cfg.checkpoint_every >= 0,
           "checkpoint_every must be a non-negative integer")
    _check(isinstance(cfg.workers, int) and cfg.workers >= 1, "workers must be >= 1")
    if cfg.preset is None:
        # surfaces parse errors (length, letters) as configuration errors
        try:
            cfg.stabilizer_set()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
    elif cfg.preset == "linear_cluster":
        _check(cfg.n_atoms >= 2, "linear_cluster preset needs n_atoms >= 2")
