"""Instance construction from configs, single runs, sweeps and CSV output."""
from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ExperimentConfig
from .driver import RegimeReport, design_tabular, run_regime_action, run_regime_lin, run_regime_tabular, split_streams
from .instances import anisotropic_mdp, gap_separated_mdp, random_tabular_mdp, tabular_linear_instance
from .linear import LinearMDPFactorization, generate_linear_mdp
from .mdp import ConfigurationError, TabularMDP
from .mle import SolverConfig

COLUMNS = (
    "mode", "grid_index", "param", "value", "seed", "config_hash", "N", "K",
    "gap", "theta_error", "sigma_error", "n_hum", "n_tra", "eps_audited",
    "kappa", "kappa_adv", "recovered", "status", "error", "wallclock",
)


def _instance_seed(cfg: ExperimentConfig, seed: int) -> int:
    spec = cfg["instance.seed"]
    if spec == "run":
        return seed
    try:
        return int(spec)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"instance.seed must be an integer or 'run', got {spec!r}") from exc


def generate_instance(cfg: ExperimentConfig, rng: np.random.Generator) -> TabularMDP | LinearMDPFactorization:
    """Build the configured instance; bounds are computed from the generated parameters."""
    kind = cfg["instance.kind"]
    S, A, H = int(cfg["instance.states"]), int(cfg["instance.actions"]), int(cfg["instance.horizon"])
    r_max = cfg["instance.r_max"]
    if kind == "file":
        if not cfg["instance.path"]:
            raise ConfigurationError("instance.kind = file needs instance.path")
        return TabularMDP.loads(Path(cfg["instance.path"]).read_text())
    if kind == "random":
        return random_tabular_mdp(S, A, H, rng, features=cfg["instance.features"],
                                  d=int(cfg["instance.dim"]), r_max=r_max)
    if kind == "anisotropic":
        return anisotropic_mdp(S, A, H, rng, r_max=r_max)
    if kind == "gap_separated":
        return gap_separated_mdp(S, A, H, rng, (cfg["instance.gap_min"], cfg["instance.gap_max"]),
                                 r_max=r_max)
    if kind == "linear":
        return generate_linear_mdp(int(cfg["instance.dim"]), S, A, H, rng)
    if kind == "tabular_linear":
        return tabular_linear_instance(S, A, H, rng)
    raise ConfigurationError(f"unknown instance.kind {kind!r}")


def _lambda(cfg: ExperimentConfig, mdp: TabularMDP) -> float:
    lam = cfg["algo.lambda"]
    if lam == "auto":
        return 4.0 * mdp.H * mdp.R**2
    if not isinstance(lam, (int, float)) or lam <= 0:
        raise ConfigurationError("algo.lambda must be positive or auto")
    return float(lam)


def _beta(cfg: ExperimentConfig, key: str) -> float | None:
    value = cfg[key]
    return None if value == "auto" else float(value)


def run_one(cfg: ExperimentConfig, seed: int, instance=None, design=None) -> RegimeReport:
    """One run of the configured mode at one seed."""
    if instance is None:
        instance = generate_instance(cfg, np.random.default_rng(_instance_seed(cfg, seed)))
    rng = np.random.default_rng(seed)
    solver = SolverConfig(tol=cfg["algo.tol"], max_iter=int(cfg["algo.max_iter"]))
    mode = cfg.mode
    echo = {"config_hash": cfg.hash()}
    if mode == "tabular":
        mdp = instance.mdp if isinstance(instance, LinearMDPFactorization) else instance
        return run_regime_tabular(
            mdp, int(cfg["algo.N"]), _lambda(cfg, mdp), rng, transitions=cfg["algo.transitions"],
            eps=cfg["algo.eps"], delta=cfg["algo.delta"], rf_budget=int(cfg["algo.rf_budget"]),
            candidates=cfg["algo.candidates"], plan_with_true=cfg["algo.plan_with_true"],
            uniform=cfg["algo.design"] == "uniform", restarts=int(cfg["algo.restarts"]), solver=solver,
            design=design, seed=seed, config=echo)
    if mode == "linear":
        if not isinstance(instance, LinearMDPFactorization):
            raise ConfigurationError("linear mode needs instance.kind = linear or tabular_linear")
        return run_regime_lin(
            instance, int(cfg["algo.N"]), int(cfg["algo.K"]), _lambda(cfg, instance.mdp), rng,
            beta_ex=_beta(cfg, "algo.beta_ex"), beta_pl=_beta(cfg, "algo.beta_pl"),
            lam_ex=cfg["algo.lambda_ex"], lam_pl=cfg["algo.lambda_pl"], delta=cfg["algo.delta"],
            beta_scale=cfg["algo.beta_scale"], n_candidates=int(cfg["algo.n_candidates"]),
            uniform=cfg["algo.design"] == "uniform", solver=solver, seed=seed, config=echo)
    if mode == "action":
        mdp = instance.mdp if isinstance(instance, LinearMDPFactorization) else instance
        lam = cfg["algo.lambda"]
        return run_regime_action(
            mdp, int(cfg["algo.N"]), 1.0 if lam == "auto" else float(lam), rng, B_adv=cfg["algo.B_adv"],
            restarts=int(cfg["algo.restarts"]), solver=solver, seed=seed, config=echo)
    raise ConfigurationError(f"mode {mode!r} has no single-run pipeline")


def _row(cfg: ExperimentConfig, grid_index: int, param: str, value, seed: int,
         report: RegimeReport | None, error: str, wallclock: float) -> dict:
    row = dict.fromkeys(COLUMNS, "")
    row.update(mode=cfg.mode, grid_index=grid_index, param=param, value=value, seed=seed,
               config_hash=cfg.hash(), N=cfg["algo.N"], K=cfg["algo.K"] if cfg.mode == "linear" else "",
               error=error, status="error" if error else "")
    if report is not None:
        s = report.summary()
        for key in ("gap", "theta_error", "sigma_error", "n_hum", "n_tra", "eps_audited", "kappa",
                    "kappa_adv", "status"):
            row[key] = s[key]
        if "recovered" in s:
            row["recovered"] = s["recovered"]
    if cfg["output.wallclock"]:
        row["wallclock"] = wallclock
    return row


def _seed_rows(cfg: ExperimentConfig, seed: int) -> list[dict]:
    """Every grid cell for one seed; tabular designs are shared across an N grid."""
    param, values = cfg["sweep.param"], cfg["sweep.values"]
    shared = None
    instance = None
    if cfg.mode == "tabular" and param == "algo.N" and cfg["algo.transitions"] == "exact":
        try:
            instance = generate_instance(cfg, np.random.default_rng(_instance_seed(cfg, seed)))
            mdp = instance.mdp if isinstance(instance, LinearMDPFactorization) else instance
            stream = split_streams(np.random.default_rng(seed))["design"]
            shared = design_tabular(mdp, int(max(values)), _lambda(cfg, mdp), stream, None,
                                    cfg["algo.candidates"], cfg["algo.design"] == "uniform",
                                    int(cfg["algo.restarts"]))
        except Exception:  # fall back to independent runs, which record the error
            shared, instance = None, None
    rows = []
    for gi, value in enumerate(values):
        start = time.perf_counter()
        report, error, cell = None, "", cfg
        try:
            cell = cfg.with_updates({param: value})
            report = run_one(cell, seed, instance=instance, design=shared)
        except Exception as exc:  # one failed cell must not stop the sweep
            error = f"{type(exc).__name__}: {exc}".replace("\n", " ")
        rows.append((gi, _row(cell, gi, param, value, seed, report, error, time.perf_counter() - start)))
    return rows


def run_sweep(cfg: ExperimentConfig) -> list[dict]:
    """Grid x seeds, one row per run, ordered by (grid index, seed)."""
    seeds = cfg.seeds
    workers = max(1, int(cfg["sweep.workers"]))
    if workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_seed = list(pool.map(_seed_rows, [cfg] * len(seeds), seeds))
    else:
        per_seed = [_seed_rows(cfg, s) for s in seeds]
    flat = [(gi, si, row) for si, rows in enumerate(per_seed) for gi, row in rows]
    flat.sort(key=lambda t: (t[0], t[1]))
    return [row for _, _, row in flat]


def slope_summary(rows: list[dict]) -> dict | None:
    """Log-log least-squares slope of the median gap against the swept value."""
    by_value: dict[float, list[float]] = {}
    for row in rows:
        if row["error"] or row["gap"] == "":
            continue
        by_value.setdefault(float(row["value"]), []).append(float(row["gap"]))
    xs = sorted(v for v in by_value if v > 0)
    medians = [float(np.median(by_value[x])) for x in xs]
    out = {"values": xs, "medians": medians, "slope": math.nan, "intercept": math.nan}
    if len(xs) >= 2 and all(m > 0 for m in medians):
        slope, intercept = np.polyfit(np.log(xs), np.log(medians), 1)
        out.update(slope=float(slope), intercept=float(intercept))
    return out if xs else None


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def format_csv(rows: list[dict], footer: bool = True) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(COLUMNS)
    for row in rows:
        writer.writerow([_fmt(row[c]) for c in COLUMNS])
    summary = slope_summary(rows) if footer else None
    if summary is not None:
        buf.write("# slope," + _fmt(summary["slope"]) + ",intercept," + _fmt(summary["intercept"]) + "\n")
        for x, m in zip(summary["values"], summary["medians"]):
            buf.write("# median_gap," + _fmt(x) + "," + _fmt(m) + "\n")
    return buf.getvalue()


def read_csv_rows(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))
