"""
Survey reweighting and person-block bootstrap utilities.

Inverse probability weights are saturated cell ratios: with fully
interacted balancing variables the weight of a sampled person in cell c is
(population share of c) / (sample share of c), normalized to mean one.
This coincides with a fully interacted propensity model and is exact and
deterministic. Thin cells (sample count below a threshold) are pooled
with their nearest neighbor along the graduation-year axis to keep
weights bounded.

The block bootstrap resamples whole person histories with replacement so
within-person dependence survives resampling.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import pandas as pd
from numpy.random import SeedSequence, default_rng
from scipy import stats

from .errors import ValidationError

DEFAULT_CELL_COLS = ("birth_year", "graduation_year", "education_level", "gender")


def holm_adjust(pvalues: Sequence[float]) -> np.ndarray:
    """Holm step-down adjustment.

    Sort ascending, multiply the i-th smallest by (m - i), enforce
    monotonicity of the adjusted sequence, cap at 1, and return in the
    original order.
    """
    p = np.asarray(list(pvalues), dtype=float)
    m = len(p)
    order = np.argsort(p, kind="mergesort")
    adjusted = np.empty(m)
    running = 0.0
    for rank, idx in enumerate(order):
        value = (m - rank) * p[idx]
        running = max(running, value)
        adjusted[idx] = min(running, 1.0)
    return adjusted


@dataclass
class WeightModel:
    """Saturated-cell inverse probability weights."""

    cell_cols: tuple
    cells: pd.DataFrame          # per cell: sample share, population share, raw weight
    weights: pd.Series           # person_id -> weight, mean 1
    pooling_report: list         # cells merged along the pooling axis
    unreachable_mass: float      # population share in cells absent from the sample


def _pool_thin_cells(counts: pd.DataFrame, cell_cols, pool_axis, min_cell_size):
    """Merge thin sample cells into a neighbor cell along one axis.

    ``counts`` has the cell columns plus n_sample and n_pop. Each thin cell
    moves to the nearest adequately sized cell that shares its other
    coordinates (ties prefer the lower axis value); blocks with no
    adequate cell are left alone.
    """
    report = []
    counts = counts.copy()
    counts["cell_key"] = list(zip(*[counts[c] for c in cell_cols]))
    counts["pooled_key"] = counts["cell_key"]
    if pool_axis is None or pool_axis not in cell_cols:
        return counts, report
    other = [c for c in cell_cols if c != pool_axis]
    for _, block in counts.groupby(other, sort=True, dropna=False):
        ok = block[block["n_sample"] >= min_cell_size]
        thin = block[block["n_sample"] < min_cell_size]
        if thin.empty or ok.empty:
            continue
        targets = ok[pool_axis].to_numpy()
        for idx, row in thin.iterrows():
            distance = np.abs(targets - row[pool_axis])
            best = targets[np.lexsort((targets, distance))][0]
            target_row = ok[ok[pool_axis] == best].iloc[0]
            counts.at[idx, "pooled_key"] = target_row["cell_key"]
            report.append({"cell": row["cell_key"], "pooled_into": target_row["cell_key"]})
    return counts, report


def estimate_ipw(
    sample: pd.DataFrame,
    population_margins: pd.DataFrame,
    cell_cols: Sequence[str] = DEFAULT_CELL_COLS,
    count_col: str = "count",
    min_cell_size: int = 5,
    pool_axis: Optional[str] = "graduation_year",
) -> WeightModel:
    """Estimate mean-one weights that balance the sample to the population.

    Arguments:
        sample: one row per person with the cell columns and person_id.
        population_margins: cell columns plus a count column.
        cell_cols: balancing variables defining the saturated cells.
        min_cell_size: sample cells thinner than this are pooled along
            ``pool_axis`` before the ratio is computed.

    Raises ValidationError when a sample cell is missing from the
    population table. Population cells absent from the sample only emit a
    warning and are reported as unreachable mass.
    """
    cell_cols = tuple(cell_cols)
    for col in cell_cols:
        if col not in sample.columns:
            raise ValidationError(f"sample lacks cell column '{col}'")
        if col not in population_margins.columns:
            raise ValidationError(f"population margins lack cell column '{col}'")
    if count_col not in population_margins.columns:
        raise ValidationError(f"population margins lack count column '{count_col}'")

    sample_counts = sample.groupby(list(cell_cols), sort=True, dropna=False).size().rename("n_sample").reset_index()
    pop = population_margins.groupby(list(cell_cols), sort=True, dropna=False)[count_col].sum().rename("n_pop").reset_index()
    merged = sample_counts.merge(pop, on=list(cell_cols), how="left")
    missing = merged[merged["n_pop"].isna()]
    if not missing.empty:
        cells = [tuple(r[c] for c in cell_cols) for _, r in missing.iterrows()]
        raise ValidationError(f"sample cells missing from population margins: {cells[:5]}")

    only_pop = pop.merge(sample_counts[list(cell_cols)], on=list(cell_cols), how="left", indicator=True)
    unreachable = only_pop[only_pop["_merge"] == "left_only"]["n_pop"].sum() / pop["n_pop"].sum()
    if unreachable > 0:
        warnings.warn(
            f"{unreachable:.1%} of population mass lies in cells absent from the sample",
            stacklevel=2,
        )

    merged, report = _pool_thin_cells(merged, cell_cols, pool_axis, min_cell_size)
    pooled = merged.groupby("pooled_key", sort=True).agg(n_sample=("n_sample", "sum"), n_pop=("n_pop", "sum"))
    n_sample_total = pooled["n_sample"].sum()
    n_pop_total = pop["n_pop"].sum()
    pooled["raw_weight"] = (pooled["n_pop"] / n_pop_total) / (pooled["n_sample"] / n_sample_total)

    merged = merged.merge(pooled["raw_weight"], left_on="pooled_key", right_index=True)
    key_of = dict(zip(merged["cell_key"], merged["raw_weight"]))

    person_keys = list(zip(*[sample[c] for c in cell_cols]))
    raw = np.array([key_of[k] for k in person_keys], dtype=float)
    weights = raw / raw.mean()
    weight_series = pd.Series(weights, index=pd.Index(sample["person_id"], name="person_id"), name="weight")

    cells_out = merged[[*cell_cols, "n_sample", "n_pop", "raw_weight"]].copy()
    cells_out["sample_share"] = cells_out["n_sample"] / n_sample_total
    cells_out["population_share"] = cells_out["n_pop"] / n_pop_total
    return WeightModel(
        cell_cols=cell_cols,
        cells=cells_out,
        weights=weight_series,
        pooling_report=report,
        unreachable_mass=float(unreachable),
    )


def _summaries(data, test_vars, count_col=None):
    """(mean, var, n) per variable from micro data or a weighted margins table."""
    out = {}
    if count_col is not None and count_col in data.columns:
        w = data[count_col].to_numpy(float)
        for var in test_vars:
            v = pd.to_numeric(data[var], errors="coerce").to_numpy(float)
            ok = ~np.isnan(v)
            mean = np.average(v[ok], weights=w[ok])
            var_ = np.average((v[ok] - mean) ** 2, weights=w[ok])
            out[var] = (float(mean), float(var_), float(w[ok].sum()))
    else:
        for var in test_vars:
            v = pd.to_numeric(data[var], errors="coerce").dropna()
            out[var] = (float(v.mean()), float(v.var(ddof=0)), float(len(v)))
    return out


def _welch_p(mean_a, var_a, n_a, mean_b, var_b, n_b):
    se2 = var_a / max(n_a, 1) + var_b / max(n_b, 1)
    if se2 <= 0:
        return 1.0
    t = (mean_a - mean_b) / np.sqrt(se2)
    df_num = se2**2
    df_den = (var_a / max(n_a, 1)) ** 2 / max(n_a - 1, 1) + (var_b / max(n_b, 1)) ** 2 / max(n_b - 1, 1)
    dof = df_num / df_den if df_den > 0 else max(n_a + n_b - 2, 1)
    return float(2 * stats.t.sf(abs(t), dof))


def balance_report(
    sample: pd.DataFrame,
    weights: pd.Series,
    population,
    test_vars: Sequence[str],
    pop_count_col: Optional[str] = "count",
) -> pd.DataFrame:
    """Compare sample means (raw and weighted) to population means.

    ``population`` is either person-level micro data or a margins table
    with a count column. Welch tests compare each sample mean to the
    population mean; the p-values of each column are Holm-adjusted as a
    family. Weighted moments use the Kish effective sample size.
    """
    for var in test_vars:
        if var not in sample.columns:
            raise ValidationError(f"test variable '{var}' missing from sample")
        if var not in population.columns:
            raise ValidationError(f"test variable '{var}' missing from population")

    w = weights.reindex(sample["person_id"]).to_numpy(float)
    pop = _summaries(population, test_vars, count_col=pop_count_col)
    rows = []
    for var in test_vars:
        v = pd.to_numeric(sample[var], errors="coerce").to_numpy(float)
        ok = ~np.isnan(v)
        vv, ww = v[ok], w[ok]
        mean_u = float(vv.mean())
        var_u = float(vv.var(ddof=0))
        n_u = float(len(vv))
        mean_w = float(np.average(vv, weights=ww))
        var_w = float(np.average((vv - mean_w) ** 2, weights=ww))
        n_eff = float(ww.sum() ** 2 / np.sum(ww**2))
        pm, pv, pn = pop[var]
        rows.append(
            {
                "variable": var,
                "population_mean": pm,
                "sample_mean": mean_u,
                "weighted_mean": mean_w,
                "p_raw": _welch_p(mean_u, var_u, n_u, pm, pv, pn),
                "p_weighted": _welch_p(mean_w, var_w, n_eff, pm, pv, pn),
            }
        )
    report = pd.DataFrame(rows)
    report["p_raw_holm"] = holm_adjust(report["p_raw"])
    report["p_weighted_holm"] = holm_adjust(report["p_weighted"])
    return report


@dataclass
class BootstrapResult:
    replicates: np.ndarray       # (n_reps, ...) with NaN rows for failures
    n_failed: int
    failed_reps: list

    def percentile_ci(self, alpha: float = 0.05):
        good = self.replicates[~np.isnan(self.replicates).any(axis=tuple(range(1, self.replicates.ndim)))] \
            if self.replicates.ndim > 1 else self.replicates[~np.isnan(self.replicates)]
        lo = np.percentile(good, 100 * alpha / 2, axis=0)
        hi = np.percentile(good, 100 * (1 - alpha / 2), axis=0)
        return lo, hi


def block_bootstrap(
    data: pd.DataFrame,
    statistic: Callable,
    n_reps: int,
    seed: int,
    person_col: str = "person_id",
) -> BootstrapResult:
    """Person-block bootstrap of an arbitrary statistic.

    Persons are resampled with replacement; each replicate dataset stacks
    the full histories of the drawn persons with ``person_col`` relabelled
    to the draw slot so repeated persons stay distinct for person-level
    statistics. Replicate r derives its RNG from the r-th spawned child of
    SeedSequence(seed). A replicate where the statistic raises is flagged,
    excluded from the returned array (as NaN), and counted.
    """
    if n_reps < 1:
        raise ValidationError("n_reps must be positive")
    data = data.reset_index(drop=True)
    codes, persons = pd.factorize(data[person_col], sort=True)
    n = len(persons)
    order = np.argsort(codes, kind="mergesort")
    bounds = np.searchsorted(codes[order], np.arange(n + 1))
    positions = [order[bounds[i]: bounds[i + 1]] for i in range(n)]
    seeds = SeedSequence(seed).spawn(n_reps)

    replicates = None
    failed = []
    for r in range(n_reps):
        rng = default_rng(seeds[r])
        draw = rng.integers(0, n, n)
        rows = np.concatenate([positions[j] for j in draw])
        sample = data.iloc[rows].reset_index(drop=True)
        # Relabel so a person drawn twice stays two distinct blocks.
        sample[person_col] = np.repeat(np.arange(n), [len(positions[j]) for j in draw])
        try:
            value = np.asarray(statistic(sample), dtype=float)
        except Exception:
            failed.append(r)
            value = None
        if replicates is None:
            shape = value.shape if value is not None else ()
            replicates = np.full((n_reps, *shape), np.nan)
        if value is not None:
            replicates[r] = value
    return BootstrapResult(replicates=replicates, n_failed=len(failed), failed_reps=failed)
