"""Seeded Monte-Carlo sweeps over the synthetic problems, with CSV/JSON emission."""
import csv
import itertools
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .metrics import (genperm_match, nmse_db, nmse_genperm_ambiguity, nmse_scalar_ambiguity,
                      rank1_nmse)
from .problems import (ILL_CONDITIONED, STRUCTURED, UNSTRUCTURED, gen_csmu, gen_dl, gen_selfcal,
                       oracle_A_given_X, oracle_b_given_c, oracle_c_given_b_support,
                       oracle_X_given_A_support)
from .solver import SolverAbort, run_badvamp
from .vamp import SolverConfig

log = logging.getLogger(__name__)

EXPERIMENTS = ("csmu_sweep_mn", "csmu_sweep_mu", "selfcal_grid", "dl_phase", "dl_cond")
MASK64 = (1 << 64) - 1


class ConfigError(ValueError):
    pass


def splitmix64(x):
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def sub_seed(base_seed, grid_index, trial_index):
    """Stable 64-bit seed for one trial, independent of execution order."""
    h = splitmix64(int(base_seed) & MASK64)
    h = splitmix64(h ^ int(grid_index))
    return splitmix64(h ^ int(trial_index))


@dataclass
class ExperimentConfig:
    experiment: str
    grid: dict
    trials: int = 20
    base_seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    output_path: str = "results.csv"
    fixed: dict = field(default_factory=dict)
    threads: int = 1
    timing: bool = False
    long_running: bool = False

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {EXPERIMENTS}")
        if int(self.trials) < 1:
            raise ConfigError("trials must be at least 1")
        if int(self.threads) < 1:
            raise ConfigError("threads must be at least 1")
        if not isinstance(self.grid, dict) or not self.grid:
            raise ConfigError("grid must map parameter names to nonempty value lists")
        for k, v in self.grid.items():
            if not isinstance(v, (list, tuple)) or len(v) == 0:
                raise ConfigError(f"grid entry {k!r} must be a nonempty list")
        overlap = set(self.grid) & set(self.fixed)
        if overlap:
            raise ConfigError(f"parameters both swept and fixed: {sorted(overlap)}")
        for point in self.points():
            _check_point(self.experiment, point)

    def points(self):
        """Cartesian product of the grid, first key varying slowest."""
        keys = list(self.grid)
        for combo in itertools.product(*(self.grid[k] for k in keys)):
            yield dict(zip(keys, combo))

    def params(self, point):
        return {**DEFAULTS[self.experiment], **self.fixed, **point}

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        unknown = set(doc) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        if "experiment" not in doc or "grid" not in doc:
            raise ConfigError("config needs 'experiment' and 'grid'")
        solver = doc.pop("solver", None) or {}
        try:
            doc["solver"] = SolverConfig(**solver)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"bad solver settings: {e}") from None
        return cls(**doc)

    def to_dict(self):
        d = asdict(self)
        d["solver"] = asdict(self.solver)
        return d


DEFAULTS = {
    "csmu_sweep_mn": dict(N=64, K=4, Q=5, m_ratio=0.6, snr_db=40.0, mu=0.0),
    "csmu_sweep_mu": dict(N=64, K=4, Q=5, m_ratio=0.6, snr_db=40.0, mu=0.0),
    "selfcal_grid": dict(M=64, N=128, Q=3, K=6),
    "dl_phase": dict(N=16, L=None, K=None, mode=UNSTRUCTURED, Q=None),
    "dl_cond": dict(N=32, K=6, L=None, snr_db=40.0, kappa=1.0),
}


def _check_point(experiment, point):
    p = {**DEFAULTS[experiment], **point}
    try:
        if experiment.startswith("csmu"):
            M = _csmu_M(p)
            if not (0 < p["K"] <= p["N"] and p["Q"] >= 1 and M >= 1):
                raise ValueError("need 0 < K <= N, Q >= 1, M >= 1")
        elif experiment == "selfcal_grid":
            M = int(p["M"])
            if M < 1 or M & (M - 1) or not 1 <= p["Q"] <= M or not 0 < p["K"] <= p["N"]:
                raise ValueError("need M a power of two, 1 <= Q <= M, 0 < K <= N")
        elif experiment == "dl_phase":
            if p["mode"] not in (UNSTRUCTURED, STRUCTURED):
                raise ValueError(f"unknown mode {p['mode']!r}")
            K = p["K"]
            if K is not None and not 0 < K <= p["N"]:
                raise ValueError("need 0 < K <= N")
        elif experiment == "dl_cond":
            if p["kappa"] < 1 or not 0 < p["K"] <= p["N"]:
                raise ValueError("need kappa >= 1 and 0 < K <= N")
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"grid point {point}: {e}") from None


def _csmu_M(p):
    return int(p["M"]) if p.get("M") else int(round(p["m_ratio"] * p["N"]))


@dataclass
class TrialRecord:
    grid_index: int
    trial: int
    grid_point: dict
    seed: int
    metrics: dict
    success: bool
    iterations: int = 0
    restarts: int = 0
    wall_time_ms: float = float("nan")

    def row(self):
        return {**self.grid_point, "seed": self.seed, **self.metrics,
                "success": int(self.success), "iterations": self.iterations,
                "restarts": self.restarts, "wall_time_ms": self.wall_time_ms}


METRIC_FIELDS = {
    "csmu_sweep_mn": ("nmse_b_db", "nmse_c_db", "oracle_b_db", "oracle_c_db"),
    "csmu_sweep_mu": ("nmse_b_db", "nmse_c_db", "oracle_b_db", "oracle_c_db"),
    "selfcal_grid": ("rank1_nmse_db", "nmse_b_db", "nmse_c_db"),
    "dl_phase": ("nmse_A_db", "nmse_X_db"),
    "dl_cond": ("nmse_A_db", "nmse_X_db", "oracle_A_db", "oracle_X_db"),
}
SUCCESS_DB = {"selfcal_grid": -50.0, "dl_phase": -50.0, "dl_cond": -30.0}
CSMU_ORACLE_GAP_DB = 3.0


def _scaled_nmse(x, xh):
    """NMSE after the best scalar gain; the scale of b and c is not identifiable in self-calibration."""
    return nmse_scalar_ambiguity(np.ravel(x), np.ravel(xh))


def _matched_X_nmse(A, A_hat, X, X_hat):
    perm, scale = genperm_match(A, A_hat)
    safe = np.where(scale != 0, scale, np.inf)
    return nmse_db(X, X_hat[perm, :] / safe[:, None])


def _trial_csmu(p, seed, cfg, solver_seed):
    M = _csmu_M(p)
    inst = gen_csmu(M, p["N"], p["Q"], p["K"], snr_db=p["snr_db"], mu=p["mu"], seed=seed)
    res = run_badvamp(inst.Y, inst.op, cfg=cfg, seed=solver_seed, sparsity_hint=p["K"])
    b, c = inst.theta_true, inst.X_true[:, 0]
    m = dict(nmse_b_db=nmse_db(b, res.theta_A_hat), nmse_c_db=nmse_db(c, res.X_hat[:, 0]),
             oracle_b_db=nmse_db(b, oracle_b_given_c(inst)),
             oracle_c_db=nmse_db(c, oracle_c_given_b_support(inst)[:, 0]))
    ok = m["nmse_c_db"] <= m["oracle_c_db"] + CSMU_ORACLE_GAP_DB
    return m, ok, res


def _trial_selfcal(p, seed, cfg, solver_seed):
    inst = gen_selfcal(p["M"], p["N"], p["Q"], p["K"], seed=seed)
    res = run_badvamp(inst.Y, inst.op, cfg=cfg, seed=solver_seed, sparsity_hint=p["K"])
    b, c = inst.theta_true, inst.X_true[:, 0]
    m = dict(rank1_nmse_db=rank1_nmse(b, c, res.theta_A_hat, res.X_hat[:, 0]),
             nmse_b_db=_scaled_nmse(b, res.theta_A_hat), nmse_c_db=_scaled_nmse(c, res.X_hat[:, 0]))
    return m, m["rank1_nmse_db"] <= SUCCESS_DB["selfcal_grid"], res


def _trial_dl_phase(p, seed, cfg, solver_seed):
    inst = gen_dl(p["N"], L=p["L"], K=p["K"], mode=p["mode"], seed=seed, Q=p.get("Q"))
    K = inst.meta["K"]
    res = run_badvamp(inst.Y, inst.op, cfg=cfg, seed=solver_seed, sparsity_hint=K)
    if p["mode"] == STRUCTURED:
        nA = nmse_scalar_ambiguity(inst.A_true, res.A_hat)
        nX = _scaled_nmse(inst.X_true, res.X_hat)
    else:
        nA = nmse_genperm_ambiguity(inst.A_true, res.A_hat)
        nX = _matched_X_nmse(inst.A_true, res.A_hat, inst.X_true, res.X_hat)
    m = dict(nmse_A_db=nA, nmse_X_db=nX)
    return m, nA <= SUCCESS_DB["dl_phase"], res


def _trial_dl_cond(p, seed, cfg, solver_seed):
    inst = gen_dl(p["N"], L=p["L"], K=p["K"], mode=ILL_CONDITIONED, snr_db=p["snr_db"],
                  seed=seed, kappa=p["kappa"])
    res = run_badvamp(inst.Y, inst.op, cfg=cfg, seed=solver_seed, sparsity_hint=p["K"])
    m = dict(nmse_A_db=nmse_genperm_ambiguity(inst.A_true, res.A_hat),
             nmse_X_db=_matched_X_nmse(inst.A_true, res.A_hat, inst.X_true, res.X_hat),
             oracle_A_db=nmse_db(inst.A_true, oracle_A_given_X(inst)),
             oracle_X_db=nmse_db(inst.X_true, oracle_X_given_A_support(inst)))
    return m, m["nmse_A_db"] <= SUCCESS_DB["dl_cond"], res


TRIALS = {
    "csmu_sweep_mn": _trial_csmu,
    "csmu_sweep_mu": _trial_csmu,
    "selfcal_grid": _trial_selfcal,
    "dl_phase": _trial_dl_phase,
    "dl_cond": _trial_dl_cond,
}


def run_trial(experiment, params, grid_index, trial, point, base_seed, cfg, timing=False):
    seed = sub_seed(base_seed, grid_index, trial)
    # the solver gets its own stream so instance and initialization never share draws
    solver_seed = splitmix64(seed ^ 0x5DEECE66D)
    t0 = time.perf_counter()
    try:
        metrics, ok, res = TRIALS[experiment](params, seed, cfg, solver_seed)
        iters, restarts = res.iterations, res.restarts_used
    except SolverAbort as e:
        log.warning("trial %d at grid point %d aborted: %s", trial, grid_index, e)
        metrics = {k: float("nan") for k in METRIC_FIELDS[experiment]}
        ok, iters, restarts = False, 0, 0
    wall = (time.perf_counter() - t0) * 1e3 if timing else float("nan")
    return TrialRecord(grid_index=grid_index, trial=trial, grid_point=dict(point), seed=seed,
                       metrics=metrics, success=bool(ok), iterations=int(iters),
                       restarts=int(restarts), wall_time_ms=wall)


def _run_task(args):
    return run_trial(*args)


def run_experiment(cfg: ExperimentConfig, progress=None):
    """Every (grid point, trial) pair once; records sorted by (grid index, trial)."""
    tasks = []
    for gi, point in enumerate(cfg.points()):
        params = cfg.params(point)
        for ti in range(cfg.trials):
            tasks.append((cfg.experiment, params, gi, ti, point, cfg.base_seed, cfg.solver,
                          cfg.timing))
    if cfg.threads > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            records = []
            for rec in pool.map(_run_task, tasks, chunksize=1):
                records.append(rec)
                if progress:
                    progress(len(records), len(tasks))
    else:
        records = []
        for t in tasks:
            records.append(run_trial(*t))
            if progress:
                progress(len(records), len(tasks))
    records.sort(key=lambda r: (r.grid_index, r.trial))
    return records


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if math.isnan(v):
            return "NaN"
        if math.isinf(v):
            return "Inf" if v > 0 else "-Inf"
        return f"{v:.6f}"
    if v is None:
        return ""
    return str(v)


def summary_path(path):
    p = Path(path)
    return p.with_name(p.stem + "_summary" + p.suffix)


def summarize(records):
    """Per grid point: trial count, metric medians (NaN-aware) and success rate."""
    groups = {}
    for r in records:
        groups.setdefault(r.grid_index, []).append(r)
    rows = []
    for gi in sorted(groups):
        recs = groups[gi]
        row = dict(recs[0].grid_point)
        row["trials"] = len(recs)
        for k in recs[0].metrics:
            vals = np.array([r.metrics[k] for r in recs], dtype=float)
            finite = vals[~np.isnan(vals)]
            row[f"median_{k}"] = float(np.median(finite)) if finite.size else float("nan")
        row["success_rate"] = float(np.mean([r.success for r in recs]))
        rows.append(row)
    return rows


def _write_csv(path, rows):
    header = list(rows[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(row.get(k)) for k in header])


def emit(records, path, format="csv"):
    """Write the records and a companion ``*_summary`` file; returns the paths written."""
    if not records:
        raise ValueError("nothing to emit")
    path = Path(path)
    try:
        if path.parent and not path.parent.exists():
            path.parent.mkdir(parents=True, exist_ok=True)
        if format == "csv":
            _write_csv(path, [r.row() for r in records])
        elif format == "json":
            doc = [_json_record(r) for r in records]
            path.write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n")
        else:
            raise ValueError(f"unknown format {format!r}")
        spath = summary_path(path).with_suffix(".csv")
        _write_csv(spath, summarize(records))
    except OSError as e:
        raise OSError(f"cannot write results to {path}: {e.strerror or e}") from e
    return path, spath


def _nan_to_none(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    return v


def _json_record(r: TrialRecord):
    d = asdict(r)
    d["metrics"] = {k: _nan_to_none(float(v)) for k, v in r.metrics.items()}
    d["wall_time_ms"] = _nan_to_none(float(r.wall_time_ms))
    return d


def load_records(path):
    doc = json.loads(Path(path).read_text())
    out = []
    for d in doc:
        d["metrics"] = {k: float("nan") if v is None else float(v) for k, v in d["metrics"].items()}
        d["wall_time_ms"] = float("nan") if d["wall_time_ms"] is None else float(d["wall_time_ms"])
        out.append(TrialRecord(**d))
    return out


def load_config(path, **overrides):
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as e:
        raise OSError(f"cannot read config {path}: {e.strerror or e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig.from_dict(doc)


# Dictionary learning needs a cautious start: a 0 dB SNR guess, heavier message damping
# and a slowly moving gamma_w. Self-calibration is noiseless, so a correct fit drives
# the residual far below the nominal restart threshold. CS-MU runs the nominal settings.
SELFCAL_SOLVER = dict(restart_db=-60.0)
DL_SOLVER = dict(zeta=0.6, zeta_w=0.005, init_snr_db=0.0, t_max=1000)

# "paper" presets run the full-size grids (long-running); "desk" presets shrink them
PRESETS = {
    ("csmu_sweep_mn", "desk"): dict(grid={"m_ratio": [0.3, 0.4, 0.6, 0.8]}, trials=20,
                                   fixed=dict(N=64, K=4, Q=5, snr_db=40.0)),
    ("csmu_sweep_mn", "paper"): dict(grid={"m_ratio": [0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]},
                                    trials=50, fixed=dict(N=256, K=10, Q=10, snr_db=40.0),
                                    long_running=True),
    ("csmu_sweep_mu", "desk"): dict(grid={"mu": [0.0, 0.5, 1.0, 2.0]}, trials=20,
                                   fixed=dict(N=64, K=4, Q=5, m_ratio=0.6, snr_db=40.0)),
    ("csmu_sweep_mu", "paper"): dict(grid={"mu": [0.0, 0.25, 0.5, 1.0, 2.0, 4.0]}, trials=50,
                                    fixed=dict(N=256, K=10, Q=10, m_ratio=0.6, snr_db=40.0),
                                    long_running=True),
    ("selfcal_grid", "desk"): dict(grid={"Q": [2, 3, 4], "K": [4, 6, 8]}, trials=20,
                                  fixed=dict(M=64, N=128), solver=SELFCAL_SOLVER),
    ("selfcal_grid", "paper"): dict(grid={"Q": [2, 4, 6, 8, 10, 12, 14, 16],
                                          "K": [2, 4, 6, 8, 10, 12, 14, 16]},
                                   trials=50, fixed=dict(M=128, N=256), solver=SELFCAL_SOLVER,
                                   long_running=True),
    ("dl_phase", "desk"): dict(grid={"mode": [UNSTRUCTURED, STRUCTURED], "L": [128, 222]},
                              trials=20, fixed=dict(N=16, K=3), solver=DL_SOLVER),
    ("dl_phase", "paper"): dict(grid={"mode": [UNSTRUCTURED, STRUCTURED],
                                      "N": [10, 20, 30, 40, 50, 60],
                                      "L": [20, 50, 100, 200, 500, 1000, 2000]},
                               trials=20, solver=DL_SOLVER, long_running=True),
    ("dl_cond", "desk"): dict(grid={"kappa": [1.0, 10.0, 100.0]}, trials=20,
                             fixed=dict(N=32, K=6, snr_db=40.0), solver=DL_SOLVER),
    ("dl_cond", "paper"): dict(grid={"kappa": [1.0, 10.0, 30.0, 50.0, 70.0, 90.0, 110.0, 130.0]},
                              trials=50, fixed=dict(N=64, K=13, snr_db=40.0),
                              solver=DL_SOLVER, long_running=True),
}


def preset(experiment, scale="desk", **overrides):
    try:
        base = dict(PRESETS[(experiment, scale)])
    except KeyError:
        raise ConfigError(f"no {scale!r} preset for {experiment!r}") from None
    base["fixed"] = dict(base.get("fixed", {}))
    base["solver"] = SolverConfig(**base.get("solver", {}))
    base.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(experiment=experiment, **base)


def write_preset_configs(directory):
    """Dump every preset as a JSON config file; used to regenerate ``configs/``."""
    os.makedirs(directory, exist_ok=True)
    written = []
    for (exp, scale) in PRESETS:
        cfg = preset(exp, scale, output_path=f"results/{exp}_{scale}.csv")
        path = Path(directory) / f"{exp}_{scale}.json"
        path.write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")
        written.append(path)
    return written
