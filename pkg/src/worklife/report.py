"""Figure-ready data bundle assembled from prior pipeline outputs."""
from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .akm import AkmFit
from .errors import MissingInputError
from .panel import FilterSpec, apply_trajectory_filters, load_panel
from .trajectory import (
    TrajectorySpec,
    attach_job_count,
    binscatter,
    fit_trajectory,
    margins,
    person_table,
)

#: Upstream requirements in the order they are reported when missing.
REQUIRED = (
    ("akm", ("worker_effects.csv", "firm_effects.csv")),
    ("simulate", ("panel.csv", "deflator.csv")),
    ("trajectory", ("margins.csv",)),
    ("decompose", ("decomposition.csv",)),
)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _check_inputs(run_dir: Path) -> dict:
    missing = []
    inputs = {}
    for subcommand, files in REQUIRED:
        absent = [f for f in files if not (run_dir / f).exists()]
        if absent:
            missing.append(f"{subcommand} ({', '.join(absent)})")
        else:
            for f in files:
                inputs[f] = _sha256(run_dir / f)
    if missing:
        raise MissingInputError("run these subcommands first: " + "; ".join(missing))
    return inputs


def _write(df: pd.DataFrame, path: Path):
    df.to_csv(path, index=False, lineterminator="\n")


def build_report(run_dir, out_subdir: str = "figure_data") -> Path:
    """Assemble one tidy CSV per figure analogue plus a manifest.

    Figure datasets: income margin curves by index quantile, the
    ability-index binscatter by education, job-count and firm-quality
    margin curves for tertiary graduates, and cumulative growth
    decomposition bands. Raises MissingInputError naming the upstream
    subcommand when a required file is absent.
    """
    run_dir = Path(run_dir)
    inputs = _check_inputs(run_dir)
    out_dir = run_dir / out_subdir
    out_dir.mkdir(parents=True, exist_ok=True)

    panel = load_panel(run_dir / "panel.csv", run_dir / "deflator.csv")
    worker_effects = pd.read_csv(run_dir / "worker_effects.csv")
    firm_effects = pd.read_csv(run_dir / "firm_effects.csv")

    # Income margin curves come straight from the trajectory stage.
    margins_df = pd.read_csv(run_dir / "margins.csv")
    _write(margins_df, out_dir / "figure1_income_margins.csv")

    # Ability binscatter: standardized worker effect against the index,
    # residualized on gender, birth-year indicators and the PCs.
    pcs = [c for c in panel.index_columns if c.startswith("PC")]
    persons = person_table(panel, ["EA_PGI", "gender", "birth_year", "education_level", *pcs])
    persons = persons.merge(
        worker_effects.groupby("person_id", as_index=False)["theta_std"].mean(),
        on="person_id",
        how="inner",
    )
    for level in np.sort(persons["birth_year"].unique())[1:]:
        persons[f"by{level}"] = (persons["birth_year"] == level).astype(float)
    controls = ["gender", *pcs, *[c for c in persons.columns if c.startswith("by")]]
    bins = []
    for level in sorted(persons["education_level"].unique()):
        sub = persons[persons["education_level"] == level]
        result = binscatter(sub, x="EA_PGI", y="theta_std", n_bins=20, controls=controls)
        frame = result.bins.assign(
            education_level=level, slope=result.slope, slope_se=result.slope_se, n=result.n
        )
        bins.append(frame)
    _write(pd.concat(bins, ignore_index=True), out_dir / "figure2_ability_binscatter.csv")

    # Mobility and firm-quality margin curves for tertiary graduates.
    traj_panel = apply_trajectory_filters(panel, FilterSpec())
    traj_panel = attach_job_count(traj_panel)
    df = traj_panel.df.copy()
    psi_map = firm_effects.groupby("firm_id")["psi_std"].mean()
    df["firm_quality"] = df["firm_id"].map(psi_map).astype(float)
    traj_panel = traj_panel.with_df(df)
    max_h = int((df["year"] - df["graduation_year"]).max())
    horizons = tuple(range(0, min(max_h, 25) + 1))
    fig3 = []
    for outcome in ("job_count", "firm_quality"):
        spec = TrajectorySpec(outcome=outcome, indices=("EA_PGI",), horizons=horizons, subsample="tertiary")
        fit = fit_trajectory(traj_panel, spec)
        for curve in margins(fit, [0.1, 0.9], "EA_PGI"):
            fig3.append(curve.to_frame().assign(outcome=outcome))
    _write(pd.concat(fig3, ignore_index=True), out_dir / "figure3_mobility_quality.csv")

    # Cumulative growth decomposition straight from the decompose stage.
    decomposition = pd.read_csv(run_dir / "decomposition.csv")
    _write(decomposition, out_dir / "figure4_growth_decomposition.csv")

    seed = None
    sim_config = run_dir / "sim_config.json"
    if sim_config.exists():
        seed = json.loads(sim_config.read_text()).get("seed")

    outputs = {
        p.name: _sha256(p) for p in sorted(out_dir.glob("*.csv"))
    }
    manifest = {
        "tool": "worklife",
        "version": __version__,
        "seed": seed,
        "inputs": inputs,
        "figures": outputs,
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out_dir
