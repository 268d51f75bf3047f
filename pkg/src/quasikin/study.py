"""Simulation-study harness: KL metric, estimator comparison grids, timing.

``run_comparison`` reproduces the estimator benchmark: for every
(intervals, jump) cell it simulates replicate datasets, fits the local
linear baseline and the EM estimator (started from the baseline), scores
both by a Monte-Carlo Kullback-Leibler divergence to the generating rates,
and emits one tidy CSV row per fit.  ``run_timing`` measures per-EM-iteration
wall time across the three scaling scenarios (number of intervals, species,
channels).  Every row records the master seed and substream that produced
it, so studies replay exactly.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .em import EmConfig, FilterConfig, em_fit
from .errors import QuasikinError, ValidationError
from .gillespie import simulate, subsample_by_jump
from .lla import LlaConfig, lla_fit, lla_loglik
from .network import ReactionNetwork, parse_network
from .rng import stream_label, substream
from .systems import SystemSpec, get_system

__all__ = ["StudyConfig", "kl_divergence", "run_comparison", "run_timing",
           "comparison_columns", "load_study_config"]

_TIMING_JUMP_INTERVALS = 30   # scenario 1: vary N at this jump
_TIMING_JUMP_SIZE = 40        # scenarios 2-3: fixed jump
_TIMING_N = 10                # scenarios 2-3: fixed interval count
_TIMING_ITERATIONS = 3        # EM iterations timed per replicate


@dataclass(frozen=True)
class StudyConfig:
    """Declarative description of a study grid.

    ``system`` is a builtin name or a path to a network file (then
    ``beta_true`` and ``y0`` must be given).  ``kind`` selects the
    comparison grid or the timing scenarios.  ``record_seconds`` keeps
    wall-clock times out of the comparison CSV by default so reruns with
    one master seed are byte-identical.
    """

    kind: str = "comparison"
    system: str = "cell4"
    jumps: tuple[int, ...] = (10, 15, 20, 25, 30)
    intervals: tuple[int, ...] = (5, 50)
    replicates: int = 100
    master_seed: int = 20240601
    estimators: tuple[str, ...] = ("lla", "em")
    kl_reps: int = 20
    sigma2: float = 0.0
    tol: float = 0.002
    maxit: int = 300
    record_seconds: bool = False
    scenarios: tuple[str, ...] = ("intervals", "species", "channels")
    beta_true: tuple[float, ...] | None = None
    y0: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.kind not in ("comparison", "timing"):
            raise ValidationError(f"unknown study kind {self.kind!r}")
        if self.replicates < 1:
            raise ValidationError("replicates must be >= 1")
        if any(j < 1 for j in self.jumps):
            raise ValidationError("every jump must be >= 1")
        if any(n < 1 for n in self.intervals):
            raise ValidationError("every interval count must be >= 1")
        bad = [e for e in self.estimators if e not in ("lla", "em")]
        if bad:
            raise ValidationError(f"unknown estimators: {bad}")
        bad = [s for s in self.scenarios
               if s not in ("intervals", "species", "channels")]
        if bad:
            raise ValidationError(f"unknown timing scenarios: {bad}")

    def resolve_system(self) -> SystemSpec:
        if Path(self.system).suffix or "/" in self.system:
            text = Path(self.system).read_text()
            net = parse_network(text)
            if self.beta_true is None or self.y0 is None:
                raise ValidationError(
                    "a file-based system needs beta_true and y0 in the config"
                )
            return SystemSpec(name=Path(self.system).stem, network=net,
                              beta_true=np.asarray(self.beta_true, dtype=float),
                              y0=np.asarray(self.y0, dtype=float),
                              description=f"custom system from {self.system}")
        spec = get_system(self.system)
        beta = np.asarray(self.beta_true, dtype=float) if self.beta_true is not None \
            else spec.beta_true
        y0 = np.asarray(self.y0, dtype=float) if self.y0 is not None else spec.y0
        return SystemSpec(name=spec.name, network=spec.network, beta_true=beta,
                          y0=y0, description=spec.description)

    def em_config(self) -> EmConfig:
        return EmConfig(tol=self.tol, maxit=self.maxit,
                        filter=FilterConfig(sigma2=self.sigma2))


def kl_divergence(net: ReactionNetwork, beta_true, beta_hat, y0, grid_design,
                  m_reps: int = 20, seed=0) -> tuple[float, float]:
    """Monte-Carlo divergence between generating and fitted rates.

    Simulates ``m_reps`` fresh datasets with the same observation design
    (jump, n_intervals) under the generating rates and averages the
    difference of increment log-likelihoods.  Returns (estimate, standard
    error).
    """
    jump, n_intervals = int(grid_design[0]), int(grid_design[1])
    if m_reps < 1:
        raise ValidationError("m_reps must be >= 1")
    datasets = _kl_datasets(net, beta_true, y0, jump, n_intervals, m_reps, seed)
    return _kl_from_datasets(net, beta_true, beta_hat, datasets)


def _kl_datasets(net, beta_true, y0, jump, n_intervals, m_reps, seed):
    gen = seed if isinstance(seed, np.random.Generator) else None
    datasets = []
    for m in range(m_reps):
        rng = gen if gen is not None else substream(seed, m)
        rec = simulate(net, beta_true, y0, max_events=jump * n_intervals, seed=rng)
        datasets.append(subsample_by_jump(rec, jump, n_intervals))
    return datasets


def _kl_from_datasets(net, beta_true, beta_hat, datasets) -> tuple[float, float]:
    diffs = np.asarray([
        lla_loglik(net, beta_true, t) - lla_loglik(net, beta_hat, t)
        for t in datasets
    ])
    m_reps = len(datasets)
    se = float(diffs.std(ddof=1) / math.sqrt(m_reps)) if m_reps > 1 else float("nan")
    return float(diffs.mean()), se


def comparison_columns(d: int) -> list[str]:
    return (["study", "system", "N", "jump", "replicate", "estimator"]
            + [f"beta_{m + 1}" for m in range(d)]
            + ["kl", "kl_se", "seconds", "converged", "seed"])


def _fit_one_replicate(args):
    """One (cell, replicate): simulate, fit every estimator, score by KL.

    Returns a list of row dicts; failures turn into rows with empty metric
    fields and converged='false'.  Top-level function so process pools can
    pickle it.
    """
    (spec, cell_idx, n, jump, rep, estimators, kl_reps, em_cfg, master_seed,
     record_seconds) = args
    net, beta_true, y0 = spec.network, spec.beta_true, spec.y0
    d = net.param_count
    base = {"study": "comparison", "system": spec.name, "N": n, "jump": jump,
            "replicate": rep}
    rows = []
    data_label = stream_label(master_seed, cell_idx, rep, 0)
    try:
        rec = simulate(net, beta_true, y0, max_events=jump * n,
                       seed=substream(master_seed, cell_idx, rep, 0))
        traj = subsample_by_jump(rec, jump, n)
    except QuasikinError as exc:
        for est in estimators:
            rows.append({**base, "estimator": est, "kl": "", "kl_se": "",
                         "seconds": "", "converged": "false",
                         "seed": data_label, "error": str(exc)})
        return rows

    kl_sets = None
    beta_lla = None
    for est in estimators:
        row = {**base, "estimator": est, "seed": data_label}
        t0 = time.perf_counter()
        try:
            if est == "lla":
                beta_lla, info = lla_fit(net, traj, full_output=True)
                beta_hat, converged = beta_lla, info.converged
            else:
                init = beta_lla if beta_lla is not None else lla_fit(net, traj)
                fit = em_fit(net, traj, beta_init=init, cfg=em_cfg,
                             seed_label=data_label)
                beta_hat, converged = fit.beta_hat, fit.converged
            elapsed = time.perf_counter() - t0
            if kl_sets is None:
                # One scoring set per replicate, shared by both estimators
                # (paired comparison, and half the simulation cost).
                kl_sets = _kl_datasets(net, beta_true, y0, jump, n, kl_reps,
                                       substream(master_seed, cell_idx, rep, 1))
            kl, kl_se = _kl_from_datasets(net, beta_true, beta_hat, kl_sets)
            for m in range(d):
                row[f"beta_{m + 1}"] = float(beta_hat[m])
            row.update(kl=float(kl), kl_se=float(kl_se),
                       seconds=elapsed if record_seconds else "",
                       converged="true" if converged else "false")
        except QuasikinError as exc:
            row.update(kl="", kl_se="", seconds="", converged="false",
                       error=str(exc))
        rows.append(row)
    return rows


def run_comparison(cfg: StudyConfig, threads: int = 1,
                   out_csv=None) -> pd.DataFrame:
    """Run the full comparison grid; optionally write the tidy CSV.

    Deterministic for a fixed master seed: every replicate draws from its
    own substream, rows are sorted before writing, and wall-clock columns
    stay empty unless ``record_seconds`` is set.
    """
    spec = cfg.resolve_system()
    em_cfg = cfg.em_config()
    jobs = []
    cells = [(n, j) for n in cfg.intervals for j in cfg.jumps]
    for cell_idx, (n, jump) in enumerate(cells):
        for rep in range(cfg.replicates):
            jobs.append((spec, cell_idx, n, jump, rep, cfg.estimators,
                         cfg.kl_reps, em_cfg, cfg.master_seed,
                         cfg.record_seconds))
    rows = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for chunk in pool.map(_fit_one_replicate, jobs, chunksize=1):
                rows.extend(chunk)
    else:
        for job in jobs:
            rows.extend(_fit_one_replicate(job))
    rows.sort(key=lambda r: (r["study"], r["system"], r["N"], r["jump"],
                             r["replicate"], r["estimator"]))
    columns = comparison_columns(spec.network.param_count)
    df = pd.DataFrame([{c: r.get(c, "") for c in columns} for r in rows],
                      columns=columns)
    if out_csv is not None:
        _write_rows(out_csv, columns, rows)
    return df


def _timing_cells(cfg: StudyConfig):
    """(scenario, spec, n, jump) cells for the requested timing scenarios."""
    cells = []
    if "intervals" in cfg.scenarios:
        spec = cfg.resolve_system()
        for n in cfg.intervals:
            cells.append(("timing-intervals", spec, n, _TIMING_JUMP_INTERVALS))
    if "species" in cfg.scenarios:
        for name in ("parallel6", "parallel12", "parallel18"):
            cells.append(("timing-species", get_system(name), _TIMING_N,
                          _TIMING_JUMP_SIZE))
    if "channels" in cfg.scenarios:
        for name in ("cycle6", "cycle12", "cycle18"):
            cells.append(("timing-channels", get_system(name), _TIMING_N,
                          _TIMING_JUMP_SIZE))
    return cells


def run_timing(cfg: StudyConfig, threads: int = 1, out_csv=None) -> pd.DataFrame:
    """Measure per-EM-iteration wall time across the scaling scenarios.

    Each replicate simulates a dataset, starts EM from the baseline fit and
    times a fixed small number of EM iterations.  Timing rows are wall-clock
    measurements, so unlike comparison output they are not byte-reproducible.
    """
    cells = _timing_cells(cfg)
    columns = ["study", "system", "N", "jump", "p", "r", "replicate",
               "seconds_per_iteration", "iterations", "seed"]
    rows = []
    em_cfg = EmConfig(tol=1e-12, maxit=_TIMING_ITERATIONS,
                      filter=FilterConfig(sigma2=cfg.sigma2))
    for cell_idx, (study, spec, n, jump) in enumerate(cells):
        net = spec.network
        for rep in range(cfg.replicates):
            label = stream_label(cfg.master_seed, cell_idx, rep)
            rec = simulate(net, spec.beta_true, spec.y0, max_events=jump * n,
                           seed=substream(cfg.master_seed, cell_idx, rep))
            traj = subsample_by_jump(rec, jump, n)
            init = lla_fit(net, traj)
            t0 = time.perf_counter()
            fit = em_fit(net, traj, beta_init=init, cfg=em_cfg)
            elapsed = time.perf_counter() - t0
            rows.append({
                "study": study, "system": spec.name, "N": n, "jump": jump,
                "p": net.species_count, "r": net.reaction_count,
                "replicate": rep,
                "seconds_per_iteration": elapsed / max(fit.iterations, 1),
                "iterations": fit.iterations, "seed": label,
            })
    rows.sort(key=lambda r: (r["study"], r["system"], r["N"], r["jump"],
                             r["replicate"]))
    df = pd.DataFrame(rows, columns=columns)
    if out_csv is not None:
        _write_rows(out_csv, columns, rows)
    return df


def _format_cell(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for r in rows:
            writer.writerow([_format_cell(r.get(c, "")) for c in columns])


def load_study_config(path, overrides: dict | None = None) -> StudyConfig:
    """Read a StudyConfig from a TOML file's [study] table.

    ``overrides`` (from CLI flags) replace file values key by key.
    """
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    table = doc.get("study", doc)
    known = {f.name for f in StudyConfig.__dataclass_fields__.values()}
    unknown = set(table) - known
    if unknown:
        raise ValidationError(f"{path}: unknown study keys {sorted(unknown)}")
    merged = dict(table)
    if overrides:
        merged.update({k: v for k, v in overrides.items() if v is not None})
    for key in ("jumps", "intervals", "estimators", "scenarios", "beta_true", "y0"):
        if key in merged and merged[key] is not None:
            merged[key] = tuple(merged[key])
    return StudyConfig(**merged)
