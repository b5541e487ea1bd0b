"""Run orchestration: compile, integrate, summarize and write results."""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, from_dict, validate
from .dynamics import (
    Checkpoint,
    Observer,
    TrajectoryRecord,
    diagonal_initial,
    fully_mixed_initial,
    product_initial,
    run_schedule,
)
from .operators import SystemDims, build_H_ah, spectrum_by_excitation
from .protocol import ProtocolParams, compile_schedule
from .stabilizer import target_projector, validate_set
from .walk import (
    MAX_EXACT_M,
    expected_rounds_exact,
    expected_rounds_mc,
    overlap_model,
)

logger = logging.getLogger(__name__)


@dataclass
class SimulationResult:
    config: RunConfig
    record: TrajectoryRecord
    rho: np.ndarray
    wall_time: float

    @property
    def cycle_fidelities(self) -> np.ndarray:
        return self.record.fidelity_at_cycle_ends()

    def summary(self) -> dict:
        rec = self.record
        fids = self.cycle_fidelities
        baseline = rec.fidelity[0]
        final = rec.fidelity[-1]
        return {
            "initial_fidelity": baseline,
            "final_fidelity": final,
            "cycles": len(rec.cycle_ends),
            "t_end": rec.t[-1] if rec.t else 0.0,
            "t_rise90": rise_time(rec, 0.9),
            "last_cycle_change": float(abs(fids[-1] - fids[-2])) if fids.size > 1 else None,
            "max_trace_drift": float(np.max(np.abs(np.asarray(rec.trace) - 1.0))),
            "max_herm_err": float(np.max(rec.herm_err)),
            "min_eigenvalue": float(np.nanmin(rec.min_eig)) if self.config.check_positivity else None,
        }


def rise_time(rec: TrajectoryRecord, frac: float = 0.9) -> float:
    """First cycle-end time at which fidelity covers ``frac`` of its total rise."""
    if not rec.cycle_ends:
        return 0.0
    f0, f1 = rec.fidelity[0], rec.fidelity[-1]
    level = f0 + frac * (f1 - f0)
    for i in rec.cycle_ends:
        if (rec.fidelity[i] - level) * np.sign(f1 - f0) >= 0:
            return rec.t[i]
    return rec.t[-1]


def initial_state(cfg: RunConfig, dims: SystemDims) -> np.ndarray:
    if isinstance(cfg.initial, dict):
        return diagonal_initial(dims, cfg.initial["diagonal"])
    if cfg.initial == "all_L":
        return product_initial(dims, "L" * dims.n_atoms)
    return fully_mixed_initial(dims)


def protocol_params(cfg: RunConfig, lam: float | None = None) -> ProtocolParams:
    return ProtocolParams(lam=cfg.lam if lam is None else lam, coupled=cfg.coupled)


def validate_report(cfg: RunConfig) -> dict:
    sset = cfg.stabilizer_set()
    report = validate_set(sset)
    out = {
        "ok": report.ok,
        "n_atoms": sset.n_atoms,
        "stabilizers": sset.words,
        "messages": report.messages,
    }
    if report.ok:
        sched = compile_schedule(sset, protocol_params(cfg), cfg.variant)
        out["rounds"] = [
            {"mu": cr.index + 1, "word": cr.stabilizer.text, "k": cr.weight,
             "gamma": cr.gamma, "duration": cr.duration, "detunings": cr.detunings()}
            for cr in sched
        ]
        out["weights"] = [cr.weight for cr in sched]
        out["cycle_duration"] = sum(cr.duration for cr in sched)
    return out


def spectrum_report(cfg: RunConfig) -> dict:
    sset = cfg.stabilizer_set()
    dims = SystemDims(sset.n_atoms, cfg.n_max)
    sched = compile_schedule(sset, protocol_params(cfg), "standard")
    rounds = []
    for cr in sched:
        spec = spectrum_by_excitation(build_H_ah(cr.round.couplings, dims), dims)
        rounds.append({
            "mu": cr.index + 1,
            "word": cr.stabilizer.text,
            "blocks": [
                {"n_t": k, "complete": k <= cfg.n_max, "eigenvalues": [float(x) for x in v]}
                for k, v in sorted(spec.items())
            ],
        })
    return {"n_atoms": sset.n_atoms, "n_max": cfg.n_max, "rounds": rounds}


def _paths(cfg: RunConfig) -> dict[str, Path]:
    # names carry dots (lam0.05), so suffixes are appended rather than replaced
    out, name = Path(cfg.output_dir), cfg.run_name()
    return {
        "csv": out / f"{name}.csv",
        "json": out / f"{name}.json",
        "timing": out / f"{name}.timing.json",
        "checkpoint": out / f"{name}.ckpt.npz",
    }


def simulate(cfg: RunConfig, resume: bool = False, write: bool = False) -> SimulationResult:
    sset = cfg.stabilizer_set()
    dims = SystemDims(sset.n_atoms, cfg.n_max)
    sched = compile_schedule(sset, protocol_params(cfg), cfg.variant)
    observer = Observer(dims, target_projector(sset), sset, check_positivity=cfg.check_positivity)
    paths = _paths(cfg)
    ckpt_path = paths["checkpoint"] if cfg.checkpoint_every else None
    state = None
    if resume:
        if not paths["checkpoint"].exists():
            raise FileNotFoundError(f"no checkpoint at {paths['checkpoint']}")
        state = Checkpoint.load(paths["checkpoint"])
        _check_resumable(cfg, state)
    if ckpt_path is not None:
        ckpt_path.parent.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    rho, rec = run_schedule(
        initial_state(cfg, dims),
        [cr.round for cr in sched],
        dims,
        observer,
        cycles=cfg.cycles,
        dt=cfg.dt,
        stride=cfg.stride,
        epsilon=cfg.epsilon,
        min_cycles=cfg.min_cycles,
        checkpoint_path=ckpt_path,
        checkpoint_every=max(cfg.checkpoint_every, 1),
        resume=state,
        checkpoint_meta=json.dumps(cfg.to_dict(), sort_keys=True),
    )
    result = SimulationResult(cfg, rec, rho, time.perf_counter() - start)
    if write:
        write_outputs(result)
    return result


# fields that may change between a checkpointed run and its continuation
_RESUME_FREE = ("cycles", "epsilon", "min_cycles", "checkpoint_every", "output_dir", "name", "workers")


def _check_resumable(cfg: RunConfig, state: Checkpoint) -> None:
    if not state.meta:
        return
    saved = json.loads(state.meta)
    now = json.loads(json.dumps(cfg.to_dict()))
    changed = sorted(k for k in now if k not in _RESUME_FREE and saved.get(k) != now[k])
    if changed:
        raise ConfigError(f"checkpoint was written with different settings: {', '.join(changed)}")


def csv_header(cfg: RunConfig, m: int) -> list[str]:
    cols = ["t", "fidelity", "trace", "purity", "n_t", "n_osc"] + [f"pop_s{mu + 1}" for mu in range(m)]
    if cfg.g_khz:
        cols.append("t_ms")
    return cols


def write_outputs(result: SimulationResult) -> dict[str, Path]:
    cfg = result.config
    paths = _paths(cfg)
    paths["csv"].parent.mkdir(parents=True, exist_ok=True)
    rec = result.record
    m = len(rec.pops[0]) if rec.pops else 0
    resolved = json.dumps(cfg.to_dict(), sort_keys=True)
    with paths["csv"].open("w", newline="") as fh:
        fh.write(f"# config: {resolved}\n")
        fh.write(f"# config_hash: {cfg.digest()}\n")
        w = csv.writer(fh)
        w.writerow(csv_header(cfg, m))
        for i, t in enumerate(rec.t):
            row = [t, rec.fidelity[i], rec.trace[i], rec.purity[i], rec.n_t[i], rec.n_osc[i], *rec.pops[i]]
            if cfg.g_khz:
                row.append(t / cfg.g_khz)
            w.writerow([repr(float(x)) for x in row])
    payload = {
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "summary": result.summary(),
        "units": {"time": "1/g", "g_khz": cfg.g_khz},
        "trajectory": {
            "t": rec.t, "fidelity": rec.fidelity, "trace": rec.trace, "purity": rec.purity,
            "n_t": rec.n_t, "n_osc": rec.n_osc, "pops": rec.pops,
            "min_eig": rec.min_eig, "herm_err": rec.herm_err,
            "round_ends": rec.round_ends, "cycle_ends": rec.cycle_ends,
        },
    }
    paths["json"].write_text(json.dumps(payload, indent=1, allow_nan=True))
    # wall time kept apart so the trajectory files stay bit-identical across runs
    paths["timing"].write_text(json.dumps(
        {"config": cfg.to_dict(), "config_hash": cfg.digest(), "wall_time_s": result.wall_time}, indent=1
    ))
    return paths


def _sweep_one(cfg_dict: dict) -> tuple[dict, dict]:
    cfg = from_dict(cfg_dict)
    res = simulate(cfg, write=True)
    return cfg_dict, res.summary()


def sweep(cfg: RunConfig, lambdas: list[float]) -> dict:
    """Run one simulation per lambda; independent runs fan out over processes."""
    if not lambdas:
        raise ValueError("lambda list is empty")
    jobs = []
    for lam in lambdas:
        d = cfg.to_dict()
        d["lambda"] = float(lam)
        d["lambdas"] = None
        d["name"] = f"{cfg.run_name()}_sweep_lam{lam:g}" if cfg.name else None
        jobs.append(d)
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_sweep_one, jobs))
    else:
        results = [_sweep_one(j) for j in jobs]
    rows = [{"lambda": d["lambda"], **s} for d, s in results]
    by_lam = sorted(rows, key=lambda r: r["lambda"])
    ordering = all(
        a["final_fidelity"] > b["final_fidelity"] and a["t_rise90"] > b["t_rise90"]
        for a, b in zip(by_lam, by_lam[1:])
    )
    report = {"config": cfg.to_dict(), "runs": rows, "weaker_is_better_but_slower": ordering}
    out = Path(cfg.output_dir) / f"{cfg.run_name()}_sweep.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(report, indent=1))
    return report


def walk_run(cfg: RunConfig) -> dict:
    sset = cfg.stabilizer_set()
    model = overlap_model(sset, cfg.overlap_rule)
    mc = expected_rounds_mc(model, cfg.walk_initial, cfg.trials, cfg.seed)
    exact = expected_rounds_exact(model, cfg.walk_initial) if model.m <= MAX_EXACT_M else None
    return {
        "M": model.m,
        "mean_rounds": mc.mean_rounds,
        "stderr": mc.stderr_rounds,
        "mean_cycles": mc.mean_cycles,
        "stderr_cycles": mc.stderr_cycles,
        "trials": mc.trials,
        "exact": None if exact is None else exact.rounds,
        "exact_cycles": None if exact is None else exact.cycles,
        "bound": model.scaling_bound(),
        "model": model.describe(),
        "config": cfg.to_dict(),
    }


def config_replace(cfg: RunConfig, **changes) -> RunConfig:
    new = dataclasses.replace(cfg, **changes)
    validate(new)
    return new
