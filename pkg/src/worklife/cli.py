"""Command-line entry point: each pipeline stage as a subcommand.

Every subcommand is a pure function of its input files, flags and seed;
rerunning with the same inputs produces byte-identical outputs. The
``--threads`` flag is accepted for interface stability but execution is
single-process and sequential, so it never changes results.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict
from importlib import resources
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .akm import AkmSpec, fit_akm, standardize_indices, variance_decomposition
from .connectivity import build_graph, largest_connected_set
from .errors import ValidationError, WorklifeError
from .health import DEFAULT_TABLE_RESOURCE, cci_series, default_charlson_table, load_charlson_table
from .inference import balance_report, estimate_ipw
from .mobility import bootstrap_decomposition, decile_groups, decompose_growth
from .panel import CORE_COLUMNS, FilterSpec, Panel, apply_akm_filters, apply_trajectory_filters, load_panel
from .report import build_report
from .simulate import SimConfig, simulate_diagnoses, simulate_panel
from .trajectory import (
    TrajectorySpec,
    attach_cci_column,
    attach_job_count,
    fit_trajectory,
    lifetime_income,
    lifetime_margins,
    margins,
    person_table,
)

log = logging.getLogger("worklife")


def _write_csv(df: pd.DataFrame, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False, lineterminator="\n")
    log.info("wrote %s (%d rows)", path, len(df))


def _write_json(payload: dict, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n")
    log.info("wrote %s", path)


def _panel_to_csv(panel: Panel, path: Path):
    df = panel.df.drop(columns=["weight"])
    _write_csv(df, path)


def _common_flags(parser):
    parser.add_argument("--out-dir", default=".", help="directory for output files")
    parser.add_argument("--seed", type=int, default=0, help="random seed where randomness is used")
    parser.add_argument("--threads", type=int, default=1, help="reserved; execution is sequential")
    parser.add_argument("--log-level", default="warning", choices=["debug", "info", "warning", "error"])
    parser.add_argument("--config", default=None, help="key=value file supplying flag defaults (flags win)")


def _panel_flags(parser):
    parser.add_argument("--panel", required=True, help="panel CSV")
    parser.add_argument("--deflator", default=None, help="deflator CSV (default: deflator.csv beside the panel)")


def _filter_flags(parser):
    parser.add_argument("--min-age", type=int, default=20)
    parser.add_argument("--max-age", type=int, default=60)
    parser.add_argument("--earnings-floor", type=float, default=0.5,
                        help="minimum monthly earnings as a fraction of the yearly median")
    parser.add_argument("--min-firm-size", type=int, default=5)
    parser.add_argument("--min-months", type=int, default=4)
    parser.add_argument("--followup-age", type=int, default=30,
                        help="secondary graduates must be observed past this age")


def _filter_spec(args) -> FilterSpec:
    return FilterSpec(
        min_age=args.min_age,
        max_age=args.max_age,
        min_earnings_fraction_of_median=args.earnings_floor,
        min_firm_size=args.min_firm_size,
        min_months=args.min_months,
        require_followup_past_age=args.followup_age,
    )


def _load(args) -> Panel:
    panel_path = Path(args.panel)
    deflator = Path(args.deflator) if args.deflator else panel_path.parent / "deflator.csv"
    return load_panel(panel_path, deflator)


def _parse_quantiles(text: str):
    return [float(q) for q in text.split(",") if q]


def _parse_periods(text: str, panel: Panel):
    if text == "all":
        years = panel.years
        return ((int(years[0]), int(years[-1])),)
    out = []
    for span in text.split(","):
        a, _, b = span.partition("-")
        out.append((int(a), int(b)))
    return tuple(out)


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    cfg = SimConfig(
        n_workers=args.workers,
        n_firms=args.firms,
        n_years=args.years,
        theta_sd=args.theta_sd,
        psi_sd=args.psi_sd,
        noise_sd=args.noise_sd,
        pgi_effect_on_theta=args.pgi_effect_theta,
        pgi_effect_on_mobility=args.pgi_effect_mobility,
        base_mobility_rate=args.mobility,
        nonemployment_rate=args.nonemployment,
        tertiary_share=args.tertiary_share,
        seed=args.seed,
        pgi_trajectory_slope=args.trajectory_slope,
        pgi_effect_on_years_edu=args.years_edu_effect,
        diagnosis_hazard=args.diagnosis_hazard,
    )
    panel, truth = simulate_panel(cfg)
    diagnoses = simulate_diagnoses(cfg, panel)
    out = Path(args.out_dir)
    _panel_to_csv(panel, out / "panel.csv")
    _write_csv(
        pd.DataFrame({"year": sorted(panel.deflator), "deflator": [panel.deflator[y] for y in sorted(panel.deflator)]}),
        out / "deflator.csv",
    )
    _write_csv(truth.theta.reset_index(), out / "ground_truth_theta.csv")
    _write_csv(truth.psi.reset_index(), out / "ground_truth_psi.csv")
    beta_rows = [
        {"index": idx, "horizon": t, "beta": b}
        for idx, per_h in truth.beta_t.items()
        for t, b in sorted(per_h.items())
    ]
    _write_csv(pd.DataFrame(beta_rows, columns=["index", "horizon", "beta"]), out / "ground_truth_beta.csv")
    _write_csv(diagnoses, out / "diagnoses.csv")
    _write_json(asdict(cfg), out / "sim_config.json")
    return 0


def cmd_connectivity(args) -> int:
    panel = _load(args)
    filtered = apply_akm_filters(panel, _filter_spec(args))
    graph = build_graph(filtered)
    hist = graph.histogram()
    _write_csv(hist, Path(args.out_dir) / "components.csv")
    sys.stdout.write(hist.to_csv(index=False, lineterminator="\n"))
    return 0


def cmd_akm(args) -> int:
    panel = _load(args)
    filtered = apply_akm_filters(panel, _filter_spec(args))
    periods = _parse_periods(args.periods, filtered)
    out = Path(args.out_dir)

    worker_rows, firm_rows, vd_rows, report = [], [], [], {}
    for period in periods:
        y0, y1 = period
        sub = filtered.with_df(filtered.df[(filtered.df["year"] >= y0) & (filtered.df["year"] <= y1)])
        graph = build_graph(sub)
        connected = largest_connected_set(sub, graph)
        spec = AkmSpec(periods=(period,), solver_tol=args.tol, max_iter=args.max_iter)
        fit = fit_akm(connected, spec)[0]
        fit = standardize_indices(fit, connected)
        label = f"{y0}-{y1}"
        worker_rows.append(
            pd.DataFrame(
                {
                    "person_id": fit.theta.index,
                    "theta": fit.theta.to_numpy(),
                    "theta_std": fit.theta_std.to_numpy(),
                    "period": label,
                }
            )
        )
        firm_rows.append(
            pd.DataFrame(
                {
                    "firm_id": fit.psi.index,
                    "psi": fit.psi.to_numpy(),
                    "psi_std": fit.psi_std.to_numpy(),
                    "period": label,
                }
            )
        )
        vd = variance_decomposition(fit)
        vd_rows.append(vd.to_frame().assign(period=label, var_y=vd.var_y))
        report[label] = {
            "n_obs": int(len(fit.rows)),
            "n_persons": int(len(fit.theta)),
            "n_firms": int(len(fit.psi)),
            "iterations": fit.iterations,
            "converged": fit.converged,
            "gradient_norm_rel": fit.gradient_norm_rel,
            "r2": fit.r2,
            "residual_sd": fit.residual_sd,
            "dropped_columns": fit.dropped_columns,
            "residual_history_tail": fit.residual_history[-20:],
            "connected_set": connected.metadata.get("connected_set_report"),
        }
    _write_csv(pd.concat(worker_rows, ignore_index=True), out / "worker_effects.csv")
    _write_csv(pd.concat(firm_rows, ignore_index=True), out / "firm_effects.csv")
    _write_csv(pd.concat(vd_rows, ignore_index=True), out / "variance_decomposition.csv")
    _write_json(report, out / "fit_report.json")
    return 0


def _resolve_outcome(args, panel: Panel) -> Panel:
    if args.outcome == "job_count":
        return attach_job_count(panel)
    if args.outcome == "firm_quality":
        if not args.firm_effects:
            raise ValidationError("--firm-effects is required for the firm_quality outcome")
        effects = pd.read_csv(args.firm_effects)
        df = panel.df.copy()
        df["firm_quality"] = df["firm_id"].map(effects.groupby("firm_id")["psi_std"].mean()).astype(float)
        return panel.with_df(df)
    if args.outcome == "cci":
        if not args.cci:
            raise ValidationError("--cci is required for the cci outcome")
        scores = pd.read_csv(args.cci)
        return attach_cci_column(panel, scores)
    return panel


def cmd_trajectory(args) -> int:
    panel = _load(args)
    traj = apply_trajectory_filters(panel, _filter_spec(args), horizon_cap=args.horizon_cap)
    traj = _resolve_outcome(args, traj)
    weights_col = None
    if args.weights:
        if Path(args.weights).exists():
            w = pd.read_csv(args.weights)
            df = traj.df.merge(w[["person_id", "weight"]].rename(columns={"weight": "ipw"}), on="person_id", how="left")
            df["ipw"] = df["ipw"].fillna(0.0)
            traj = traj.with_df(df)
            weights_col = "ipw"
        else:
            weights_col = args.weights
    indices = tuple(args.indices.split(","))
    max_h = int((traj.df["year"] - traj.df["graduation_year"]).max())
    spec = TrajectorySpec(
        outcome=args.outcome,
        indices=indices,
        horizons=tuple(range(0, min(args.horizon_cap, max_h) + 1)),
        subsample=args.subsample,
        weights=weights_col,
    )
    fit = fit_trajectory(traj, spec)
    quantiles = _parse_quantiles(args.quantiles)
    frames = []
    for index in indices:
        for curve in margins(fit, quantiles, index):
            frames.append(curve.to_frame())
    out = Path(args.out_dir)
    _write_csv(pd.concat(frames, ignore_index=True), out / "margins.csv")
    _write_json(
        {
            "outcome": args.outcome,
            "indices": list(indices),
            "subsample": args.subsample,
            "n_obs": fit.n,
            "n_persons": fit.n_persons,
            "r2": fit.r2,
            "dropped_columns": fit.dropped,
            "empty_horizons": fit.empty_horizons,
            "obs_per_horizon": fit.obs_per_horizon,
        },
        out / "fit_report.json",
    )
    return 0


def cmd_lifetime(args) -> int:
    panel = _load(args)
    traj = apply_trajectory_filters(panel, _filter_spec(args), horizon_cap=args.horizon_cap)
    if args.subsample != "pooled":
        traj = traj.with_df(traj.df[traj.df["education_level"] == args.subsample])
    pv = lifetime_income(traj, rate=args.rate, horizon_cap=args.horizon_cap)
    out = Path(args.out_dir)
    _write_csv(pv, out / "pv_income.csv")
    adj = lifetime_margins(
        traj,
        index=args.index,
        quantiles=_parse_quantiles(args.quantiles),
        rate=args.rate,
        horizon_cap=args.horizon_cap,
    )
    _write_csv(adj.to_frame(), out / "margins_pv.csv")
    return 0


def cmd_decompose(args) -> int:
    panel = _load(args)
    traj = apply_trajectory_filters(panel, _filter_spec(args), horizon_cap=args.horizon_cap)
    if args.subsample != "pooled":
        traj = traj.with_df(traj.df[traj.df["education_level"] == args.subsample])
    deciles = [int(d) for d in args.group_deciles.split(",")]
    groups = decile_groups(traj, index=args.group_index, deciles=deciles)
    horizons = tuple(range(1, args.horizon_cap + 1))
    decomps = decompose_growth(traj, groups, horizons)
    bands = None
    if args.bootstrap > 0:
        bands = bootstrap_decomposition(traj, groups, horizons, n_reps=args.bootstrap, seed=args.seed)
    rows = []
    for group, dec in sorted(decomps.items(), key=lambda kv: str(kv[0])):
        frame = dec.to_frame()
        if bands is not None:
            band = bands[group]
            lo = {(c, int(t)): band.lo[c][i] for c in band.lo for i, t in enumerate(band.horizons)}
            hi = {(c, int(t)): band.hi[c][i] for c in band.hi for i, t in enumerate(band.horizons)}
            frame["ci_lo"] = [lo[(r.component, r.horizon)] for r in frame.itertuples()]
            frame["ci_hi"] = [hi[(r.component, r.horizon)] for r in frame.itertuples()]
        else:
            frame["ci_lo"] = np.nan
            frame["ci_hi"] = np.nan
        rows.append(frame)
    out = pd.concat(rows, ignore_index=True)
    out = out[["group", "horizon", "component", "contribution", "cumulative", "ci_lo", "ci_hi", "share"]]
    _write_csv(out, Path(args.out_dir) / "decomposition.csv")
    return 0


def cmd_weights(args) -> int:
    panel = _load(args)
    cell_cols = tuple(args.cell_cols.split(","))
    persons = person_table(panel, list(cell_cols))
    population = pd.read_csv(args.population)
    model = estimate_ipw(
        persons,
        population,
        cell_cols=cell_cols,
        min_cell_size=args.min_cell_size,
    )
    out = Path(args.out_dir)
    _write_csv(model.weights.reset_index(), out / "weights.csv")
    numeric_vars = [c for c in cell_cols if pd.api.types.is_numeric_dtype(persons[c])]
    if numeric_vars:
        report = balance_report(persons, model.weights, population, numeric_vars)
        _write_csv(report, out / "balance.csv")
    return 0


def cmd_cci(args) -> int:
    diagnoses = pd.read_csv(args.diagnoses)
    births = pd.read_csv(args.birth_years)
    for col in ("person_id", "birth_year"):
        if col not in births.columns:
            raise ValidationError(f"birth-year file lacks column '{col}'")
    table = load_charlson_table(args.table) if args.table else default_charlson_table()
    birth_map = births.drop_duplicates("person_id").set_index("person_id")["birth_year"].to_dict()
    scores = cci_series(diagnoses, birth_map, table)
    _write_csv(scores, Path(args.out_dir) / "cci.csv")
    return 0


def cmd_report(args) -> int:
    build_report(args.run_dir)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def _table_checksum() -> str:
    data = (resources.files("worklife.data") / DEFAULT_TABLE_RESOURCE).read_bytes()
    return hashlib.sha256(data).hexdigest()[:16]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="worklife", description=__doc__)
    parser.add_argument(
        "--version",
        action="version",
        version=f"worklife {__version__} (charlson table sha256:{_table_checksum()})",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic panel with ground truth")
    p.add_argument("--workers", type=int, default=1000)
    p.add_argument("--firms", type=int, default=50)
    p.add_argument("--years", type=int, default=15)
    p.add_argument("--theta-sd", type=float, default=0.3)
    p.add_argument("--psi-sd", type=float, default=0.3)
    p.add_argument("--noise-sd", type=float, default=0.1)
    p.add_argument("--pgi-effect-theta", type=float, default=0.0)
    p.add_argument("--pgi-effect-mobility", type=float, default=0.0)
    p.add_argument("--mobility", type=float, default=0.15)
    p.add_argument("--nonemployment", type=float, default=0.05)
    p.add_argument("--tertiary-share", type=float, default=0.6)
    p.add_argument("--trajectory-slope", type=float, default=0.0)
    p.add_argument("--years-edu-effect", type=float, default=0.0)
    p.add_argument("--diagnosis-hazard", type=float, default=0.002)
    _common_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("connectivity", help="mobility graph component histogram")
    _panel_flags(p)
    _filter_flags(p)
    _common_flags(p)
    p.set_defaults(func=cmd_connectivity)

    p = sub.add_parser("akm", help="two-way fixed-effects wage regression")
    _panel_flags(p)
    _filter_flags(p)
    p.add_argument("--periods", default="all", help="e.g. 1990-2004,2005-2019 (default: one panel-wide period)")
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=5000)
    _common_flags(p)
    p.set_defaults(func=cmd_akm)

    p = sub.add_parser("trajectory", help="horizon-interaction regression and margins")
    _panel_flags(p)
    _filter_flags(p)
    p.add_argument("--outcome", default="income",
                   help="income, log_income, job_count, firm_quality, cci, or a panel column")
    p.add_argument("--indices", default="EA_PGI", help="comma-separated index columns")
    p.add_argument("--quantiles", default="0.1,0.9")
    p.add_argument("--subsample", default="pooled", choices=["pooled", "secondary", "tertiary"])
    p.add_argument("--weights", default=None, help="panel column name or weights CSV path")
    p.add_argument("--horizon-cap", type=int, default=25)
    p.add_argument("--firm-effects", default=None, help="firm_effects.csv for the firm_quality outcome")
    p.add_argument("--cci", default=None, help="cci.csv for the cci outcome")
    _common_flags(p)
    p.set_defaults(func=cmd_trajectory)

    p = sub.add_parser("lifetime", help="discounted lifetime income and adjusted means")
    _panel_flags(p)
    _filter_flags(p)
    p.add_argument("--rate", type=float, default=0.03)
    p.add_argument("--horizon-cap", type=int, default=25)
    p.add_argument("--index", default="EA_PGI")
    p.add_argument("--quantiles", default="0.1,0.9")
    p.add_argument("--subsample", default="pooled", choices=["pooled", "secondary", "tertiary"])
    _common_flags(p)
    p.set_defaults(func=cmd_lifetime)

    p = sub.add_parser("decompose", help="four-way earnings-growth decomposition")
    _panel_flags(p)
    _filter_flags(p)
    p.add_argument("--group-index", default="EA_PGI")
    p.add_argument("--group-deciles", default="1,10")
    p.add_argument("--subsample", default="pooled", choices=["pooled", "secondary", "tertiary"])
    p.add_argument("--bootstrap", type=int, default=200, help="bootstrap replicates for bands (0 = none)")
    p.add_argument("--horizon-cap", type=int, default=25)
    _common_flags(p)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("weights", help="inverse probability weights against population margins")
    _panel_flags(p)
    p.add_argument("--population", required=True, help="population margins CSV (cell columns..., count)")
    p.add_argument("--cell-cols", default="birth_year,graduation_year,education_level,gender")
    p.add_argument("--min-cell-size", type=int, default=5)
    _common_flags(p)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("cci", help="cumulative comorbidity scores at age cutoffs")
    p.add_argument("--diagnoses", required=True, help="diagnosis CSV (person_id,event_year,icd_version,code)")
    p.add_argument("--birth-years", required=True, help="CSV with person_id,birth_year")
    p.add_argument("--table", default=None, help="alternative Charlson reference table CSV")
    _common_flags(p)
    p.set_defaults(func=cmd_cci)

    p = sub.add_parser("report", help="figure-ready data bundle from a completed run directory")
    p.add_argument("--run-dir", default=".", help="directory holding prior subcommand outputs")
    _common_flags(p)
    p.set_defaults(func=cmd_report)

    return parser


def _apply_config(argv):
    """Splice --config file entries in as flags ahead of explicit ones."""
    if "--config" not in argv:
        return argv
    at = argv.index("--config")
    if at + 1 >= len(argv):
        return argv
    path = Path(argv[at + 1])
    if not path.exists():
        raise ValidationError(f"config file not found: {path}")
    injected = []
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        flag = "--" + key.strip().replace("_", "-")
        value = value.strip()
        if value.lower() in ("true", ""):
            injected.append(flag)
        else:
            injected.extend([flag, value])
    # Config-derived flags go right after the subcommand so explicit flags win.
    return argv[:1] + injected + argv[1:]


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        if argv and not argv[0].startswith("-"):
            argv = _apply_config(argv)
        parser = build_parser()
        args = parser.parse_args(argv)
        logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(message)s")
        return args.func(args)
    except WorklifeError as exc:
        print(f"error: {exc.kind}: {exc.message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
