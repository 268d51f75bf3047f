"""Command-line interface.

Subcommands: ``simulate`` (exact simulation + discrete observation),
``fit`` (EM or the local-linear baseline on a trajectory CSV), ``select``
(BIC comparison of several network files on one dataset), ``study``
(comparison/timing grids from a TOML config, with figures), ``ingest``
(wide compartment CSVs to trajectory files, optionally emitting the paired
multi-region network), and ``report`` (re-render figures from a study CSV).

Every command writes a manifest recording the resolved configuration,
sha256 digests of its file inputs, the master seed, and the tool version.
Exit codes: 0 success, 2 validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .em import EmConfig, FitResult, em_fit
from .ekf import FilterConfig
from .errors import NumericError, QuasikinError, ValidationError
from .figures import render_figures
from .gillespie import observe, simulate, subsample_by_jump, write_events_csv
from .lla import LlaConfig, lla_fit
from .network import (ReactionNetwork, Trajectory, build_sir, network_to_text,
                      parse_network, read_trajectory_csv, write_trajectory_csv)
from .rng import GENERATOR_NAME
from .study import load_study_config, run_comparison, run_timing
from .systems import builtin_systems, get_system

__all__ = ["main", "ingest_compartments"]


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(path, subcommand: str, config: dict, inputs: list,
                    master_seed=None) -> None:
    manifest = {
        "tool": "quasikin",
        "version": __version__,
        "rng": GENERATOR_NAME,
        "subcommand": subcommand,
        "config": config,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "master_seed": master_seed,
    }
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _resolve_network(spec_str: str):
    """'builtin:NAME' or a network file path -> (network, SystemSpec or None)."""
    if spec_str.startswith("builtin:"):
        spec = get_system(spec_str.split(":", 1)[1])
        return spec.network, spec
    path = Path(spec_str)
    if not path.exists():
        raise ValidationError(f"network file not found: {spec_str}")
    return parse_network(path.read_text()), None


def _parse_vector(text: str, what: str) -> np.ndarray:
    if text.startswith("@"):
        doc = json.loads(Path(text[1:]).read_text())
        if isinstance(doc, dict):
            doc = doc.get("beta_hat", doc.get("beta"))
        if doc is None:
            raise ValidationError(f"{what}: JSON file holds no usable vector")
        return np.asarray([float(v) for v in doc])
    try:
        return np.asarray([float(v) for v in text.replace(",", " ").split()])
    except ValueError as exc:
        raise ValidationError(f"cannot parse {what}: {exc}") from exc


def _align_trajectory(net: ReactionNetwork, traj: Trajectory) -> Trajectory:
    """Reorder data columns to the network's species order, or fail loudly."""
    if traj.species_names is None:
        if traj.states.shape[1] != net.species_count:
            raise ValidationError(
                f"data has {traj.states.shape[1]} species columns, model expects "
                f"{net.species_count}"
            )
        return traj
    have = list(traj.species_names)
    missing = [s for s in net.species_names if s not in have]
    if missing:
        raise ValidationError(f"data is missing species column '{missing[0]}'")
    extra = [s for s in have if s not in net.species_names]
    if extra:
        raise ValidationError(f"data column '{extra[0]}' does not match any model species")
    order = [have.index(s) for s in net.species_names]
    return Trajectory(times=traj.times, states=traj.states[:, order],
                      species_names=tuple(net.species_names))


def ingest_compartments(path, date_col: str = "date", region_col: str = "region",
                        compartments=("I", "R", "D"), start=None, end=None):
    """Pivot a long per-region compartment CSV into a Trajectory.

    Rows are ``date,region,<compartments...>``; the result has one species
    per (region, compartment), grouped by region in sorted region order, and
    day-unit observation times starting at 0.  Returns (trajectory, regions).
    """
    import csv as _csv

    with open(path, newline="") as fh:
        reader = _csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ValidationError(f"{path}: empty file")
        needed = [date_col, region_col, *compartments]
        for col in needed:
            if col not in reader.fieldnames:
                raise ValidationError(f"{path}: missing column '{col}'")
        rows = list(reader)
    if not rows:
        raise ValidationError(f"{path}: no data rows")

    def _to_date(text):
        try:
            return _dt.date.fromisoformat(text.strip())
        except ValueError as exc:
            raise ValidationError(f"{path}: bad date {text!r}: {exc}") from exc

    start = _to_date(start) if isinstance(start, str) else start
    end = _to_date(end) if isinstance(end, str) else end
    table: dict[str, dict[_dt.date, tuple]] = {}
    dates_in_order: list[_dt.date] = []
    for row in rows:
        day = _to_date(row[date_col])
        if (start is not None and day < start) or (end is not None and day > end):
            continue
        region = row[region_col].strip()
        vals = []
        for comp in compartments:
            v = float(row[comp])
            if v != int(v):
                raise ValidationError(
                    f"{path}: non-integer count {row[comp]!r} in column {comp} "
                    f"(region {region}, {day})"
                )
            vals.append(v)
        table.setdefault(region, {})[day] = tuple(vals)
        if day not in dates_in_order:
            dates_in_order.append(day)
    if not table:
        raise ValidationError(f"{path}: no rows left after date filtering")
    if any(b <= a for a, b in zip(dates_in_order, dates_in_order[1:])):
        raise ValidationError(f"{path}: dates are not strictly increasing")
    regions = sorted(table)
    for region in regions:
        missing = [d for d in dates_in_order if d not in table[region]]
        if missing:
            raise ValidationError(
                f"{path}: region {region} has no row for {missing[0]}"
            )
    times = np.asarray([(d - dates_in_order[0]).days for d in dates_in_order],
                       dtype=float)
    n_comp = len(compartments)
    states = np.empty((len(dates_in_order), n_comp * len(regions)))
    names = []
    for k, region in enumerate(regions):
        names.extend(f"{comp}_{region}" for comp in compartments)
        for i, day in enumerate(dates_in_order):
            states[i, n_comp * k : n_comp * (k + 1)] = table[region][day]
    traj = Trajectory(times=times, states=states, species_names=tuple(names))
    return traj, regions


def _fit_to_result(estimator, net, traj, args, seed_label=None) -> FitResult:
    fcfg = FilterConfig(sigma2=args.sigma2, mu_floor=args.mu_floor,
                        jitter=args.jitter, taylor_order=args.taylor_order)
    cfg = EmConfig(tol=args.tol, maxit=args.maxit, filter=fcfg)
    if estimator == "lla":
        beta, info = lla_fit(net, traj, LlaConfig(ridge=args.ridge),
                             full_output=True)
        return FitResult(
            estimator="lla", beta_hat=beta, iterations=info.iterations,
            err_trace=(), q_value=None, bic=None, converged=info.converged,
            config={"ridge": args.ridge}, seed=seed_label,
            warnings=info.warnings,
        )
    if args.init and args.init != "lla":
        beta_init = _parse_vector("@" + args.init, "--init")
    else:
        beta_init = lla_fit(net, traj, LlaConfig(ridge=args.ridge))
    return em_fit(net, traj, beta_init=beta_init, cfg=cfg, seed_label=seed_label)


def cmd_simulate(args) -> int:
    net, spec = _resolve_network(args.network)
    beta = _parse_vector(args.beta, "--beta") if args.beta else None
    y0 = _parse_vector(args.y0, "--y0") if args.y0 else None
    if beta is None:
        if spec is None:
            raise ValidationError("--beta is required for file-based networks")
        beta = spec.beta_true
    if y0 is None:
        if spec is None:
            raise ValidationError("--y0 is required for file-based networks")
        y0 = spec.y0
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rec = simulate(net, beta, y0, horizon=args.horizon, max_events=args.events,
                   seed=args.seed)
    if args.jump is not None:
        n_int = args.n_intervals or rec.n_events // args.jump
        traj = subsample_by_jump(rec, args.jump, n_int,
                                 species_names=net.species_names)
    else:
        grid = np.concatenate([[0.0], rec.times])
        traj = observe(rec, grid, species_names=net.species_names)
    write_events_csv(rec, out / "events.csv", seed_label=str(args.seed))
    write_trajectory_csv(traj, out / "trajectory.csv", seed_label=str(args.seed))
    inputs = [] if spec is not None else [args.network]
    _write_manifest(out / "manifest.json", "simulate",
                    {k: getattr(args, k) for k in
                     ("network", "beta", "y0", "horizon", "events", "jump",
                      "n_intervals", "seed")},
                    inputs, master_seed=args.seed)
    print(f"simulated {rec.n_events} events -> {out}/events.csv, "
          f"{traj.n_intervals} observation intervals -> {out}/trajectory.csv")
    return 0


def cmd_fit(args) -> int:
    net, _ = _resolve_network(args.network)
    traj = _align_trajectory(net, read_trajectory_csv(args.data))
    fit = _fit_to_result(args.estimator, net, traj, args)
    out = Path(args.out)
    doc = fit.to_dict()
    if doc.get("bic") is None:
        doc.pop("bic", None)
    if doc.get("q_value") is None:
        doc.pop("q_value", None)
    out.write_text(json.dumps(doc, indent=2) + "\n")
    inputs = [args.data] + ([] if args.network.startswith("builtin:") else [args.network])
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), "fit",
                    {k: getattr(args, k) for k in
                     ("network", "data", "estimator", "sigma2", "tol", "maxit",
                      "mu_floor", "jitter", "taylor_order", "init", "ridge")},
                    inputs)
    beta_txt = ", ".join(f"{b:.4f}" for b in fit.beta_hat)
    print(f"{fit.estimator} estimate: [{beta_txt}] "
          f"(converged={fit.converged}, iterations={fit.iterations})")
    return 0


def cmd_select(args) -> int:
    traj_raw = read_trajectory_csv(args.data)
    models = []
    for net_path in args.networks:
        net, _ = _resolve_network(net_path)
        traj = _align_trajectory(net, traj_raw)
        fit = _fit_to_result("em", net, traj, args)
        models.append({
            "model": net_path,
            "free_parameters": net.param_count,
            "beta_hat": [float(b) for b in fit.beta_hat],
            "q_value": fit.q_value,
            "bic": fit.bic,
            "converged": fit.converged,
            "warnings": list(fit.warnings),
        })
    winner = min(models, key=lambda m: m["bic"])
    doc = {"models": models, "winner": winner["model"]}
    out = Path(args.out)
    out.write_text(json.dumps(doc, indent=2) + "\n")
    inputs = [args.data] + [p for p in args.networks
                            if not p.startswith("builtin:")]
    _write_manifest(out.with_suffix(out.suffix + ".manifest.json"), "select",
                    {k: getattr(args, k) for k in
                     ("data", "networks", "sigma2", "tol", "maxit")},
                    inputs)
    for m in models:
        print(f"{m['model']}: bic={m['bic']:.3f} (d={m['free_parameters']}, "
              f"converged={m['converged']})")
    print(f"winner: {doc['winner']}")
    return 0


def cmd_study(args) -> int:
    overrides = {"master_seed": args.seed, "replicates": args.replicates}
    cfg = load_study_config(args.config, overrides)
    out_dir = Path(args.out_dir)
    if args.dry_run:
        spec = cfg.resolve_system()
        print(f"study kind={cfg.kind} system={spec.name} "
              f"(p={spec.network.species_count}, r={spec.network.reaction_count})")
        if cfg.kind == "comparison":
            for n in cfg.intervals:
                for j in cfg.jumps:
                    print(f"  cell N={n} jump={j}: {cfg.replicates} replicates "
                          f"x {len(cfg.estimators)} estimators")
        else:
            print(f"  scenarios: {', '.join(cfg.scenarios)}; "
                  f"{cfg.replicates} replicates each cell")
        return 0
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.kind == "comparison":
        csv_path = out_dir / "comparison.csv"
        df = run_comparison(cfg, threads=args.threads, out_csv=csv_path)
        spec = cfg.resolve_system()
        figures = [] if args.no_figures else render_figures(
            df, out_dir, kind="comparison", beta_true=spec.beta_true)
    else:
        csv_path = out_dir / "timing.csv"
        df = run_timing(cfg, threads=args.threads, out_csv=csv_path)
        figures = [] if args.no_figures else render_figures(df, out_dir, kind="timing")
    _write_manifest(out_dir / "manifest.json", "study",
                    {**cfg.__dict__, "threads": args.threads},
                    [args.config], master_seed=cfg.master_seed)
    print(f"wrote {csv_path} ({len(df)} rows)")
    for f in figures:
        print(f"wrote {f}")
    return 0


def cmd_ingest(args) -> int:
    compartments = tuple(args.compartments.split(","))
    traj, regions = ingest_compartments(
        args.data, date_col=args.date_col, region_col=args.region_col,
        compartments=compartments, start=args.start, end=args.end)
    write_trajectory_csv(traj, args.out)
    print(f"wrote {args.out}: {traj.n_intervals + 1} days x {len(regions)} regions")
    if args.emit_network:
        net = build_sir(len(regions), tied=args.tied, labels=regions)
        Path(args.emit_network).write_text(network_to_text(net))
        print(f"wrote {args.emit_network} "
              f"({'tied' if args.tied else 'untied'}, d={net.param_count})")
    _write_manifest(Path(args.out).with_suffix(".manifest.json"), "ingest",
                    {k: getattr(args, k) for k in
                     ("data", "date_col", "region_col", "compartments",
                      "start", "end", "emit_network", "tied")},
                    [args.data])
    return 0


def cmd_report(args) -> int:
    import pandas as pd

    df = pd.read_csv(args.csv)
    beta_true = _parse_vector(args.beta_true, "--beta-true") if args.beta_true else None
    figures = render_figures(df, args.out_dir, beta_true=beta_true)
    for f in figures:
        print(f"wrote {f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quasikin",
        description="Simulate quasi-reaction systems and estimate their "
                    "log-rates from discretely observed counts.",
    )
    parser.add_argument("--version", action="version",
                        version=f"quasikin {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    sim = sub.add_parser("simulate", help="exact simulation + observation files")
    sim.add_argument("--network", required=True,
                     help="network file or builtin:NAME")
    sim.add_argument("--beta", help="log-rates: 'b1,b2,...' or @file.json")
    sim.add_argument("--y0", help="initial counts: 'y1,y2,...'")
    stop = sim.add_mutually_exclusive_group(required=False)
    stop.add_argument("--horizon", type=float, help="simulate until this time")
    stop.add_argument("--events", type=int, help="simulate this many events")
    sim.add_argument("--jump", type=int,
                     help="observe every jump-th event time")
    sim.add_argument("--n-intervals", type=int, dest="n_intervals",
                     help="number of observation intervals (with --jump)")
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="output directory")
    sim.set_defaults(func=cmd_simulate)

    def add_fit_options(p):
        p.add_argument("--sigma2", type=float, default=0.0)
        p.add_argument("--tol", type=float, default=0.002)
        p.add_argument("--maxit", type=int, default=300)
        p.add_argument("--mu-floor", type=float, default=1e-8, dest="mu_floor")
        p.add_argument("--jitter", type=float, default=1e-8)
        p.add_argument("--taylor-order", type=int, default=2, dest="taylor_order",
                       choices=(1, 2))
        p.add_argument("--ridge", type=float, default=0.0,
                       help="baseline weighting-covariance ridge")

    fit = sub.add_parser("fit", help="estimate log-rates from a trajectory CSV")
    fit.add_argument("--network", required=True)
    fit.add_argument("--data", required=True, help="trajectory CSV")
    fit.add_argument("--estimator", choices=("em", "lla"), default="em")
    fit.add_argument("--init", default="lla",
                     help="'lla' or a JSON file with starting log-rates")
    add_fit_options(fit)
    fit.add_argument("--out", required=True, help="result JSON path")
    fit.set_defaults(func=cmd_fit)

    sel = sub.add_parser("select", help="fit several models, compare by BIC")
    sel.add_argument("--data", required=True)
    sel.add_argument("--networks", required=True, nargs="+")
    sel.add_argument("--init", default="lla")
    add_fit_options(sel)
    sel.add_argument("--out", required=True)
    sel.set_defaults(func=cmd_select)

    study = sub.add_parser("study", help="run a comparison or timing grid")
    study.add_argument("--config", required=True, help="TOML study config")
    study.add_argument("--out-dir", required=True, dest="out_dir")
    study.add_argument("--seed", type=int, help="override the master seed")
    study.add_argument("--replicates", type=int, help="override replicate count")
    study.add_argument("--threads", type=int, default=1)
    study.add_argument("--dry-run", action="store_true", dest="dry_run")
    study.add_argument("--no-figures", action="store_true", dest="no_figures")
    study.set_defaults(func=cmd_study)

    ing = sub.add_parser("ingest", help="pivot a compartment CSV to a trajectory")
    ing.add_argument("--data", required=True, help="wide CSV: date,region,I,R,D")
    ing.add_argument("--out", required=True, help="trajectory CSV to write")
    ing.add_argument("--date-col", default="date", dest="date_col")
    ing.add_argument("--region-col", default="region", dest="region_col")
    ing.add_argument("--compartments", default="I,R,D")
    ing.add_argument("--start", help="inclusive ISO date filter")
    ing.add_argument("--end", help="inclusive ISO date filter")
    ing.add_argument("--emit-network", dest="emit_network",
                     help="also write the matching multi-region network file")
    ing.add_argument("--tied", action="store_true",
                     help="tie recovery/death rates across regions")
    ing.set_defaults(func=cmd_ingest)

    rep = sub.add_parser("report", help="render figures from a study CSV")
    rep.add_argument("--csv", required=True)
    rep.add_argument("--out-dir", required=True, dest="out_dir")
    rep.add_argument("--beta-true", dest="beta_true",
                     help="generating log-rates for reference lines")
    rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.subcommand == "simulate" and args.horizon is None and args.events is None:
        parser.error("simulate needs --horizon or --events")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3
    except QuasikinError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
