"""
Career-trajectory regressions and derived quantities.

The workhorse model regresses an outcome observed at horizons 0..25 since
graduation on horizon indicators, one or more standardized person indices
fully interacted with those indicators, and controls (genetic principal
components, gender, birth-year indicators, calendar-year indicators,
biobank indicator). Predicted margins fix an index at an empirical
quantile of its person-level distribution, hold every other regressor at
its sample mean, and carry delta-method standard errors from a
person-clustered covariance.

Also here: discounted lifetime income and its adjusted person-level
margins, residualized binscatters, and incremental R^2 of one index over
a control set.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats

from . import linalg
from .akm import AkmFit
from .errors import ValidationError
from .panel import HORIZON_CAP, Panel

DEFAULT_LINEAR_CONTROLS = tuple(f"PC{k}" for k in range(1, 11)) + ("gender",)
DEFAULT_CATEGORICAL_CONTROLS = ("birth_year", "year", "biobank")

Z975 = float(stats.norm.ppf(0.975))


@dataclass(frozen=True)
class TrajectorySpec:
    """What to regress on what, and over which sample."""

    outcome: str = "income"
    indices: tuple = ("EA_PGI",)
    horizons: tuple = tuple(range(HORIZON_CAP + 1))
    controls_linear: tuple = DEFAULT_LINEAR_CONTROLS
    controls_categorical: tuple = DEFAULT_CATEGORICAL_CONTROLS
    subsample: str = "pooled"
    weights: Optional[str] = None

    def __post_init__(self):
        if not self.indices:
            raise ValidationError("at least one index is required")
        if self.subsample not in ("pooled", "secondary", "tertiary"):
            raise ValidationError(f"unknown subsample '{self.subsample}'")
        hs = list(self.horizons)
        if hs != list(range(hs[0], hs[-1] + 1)) or hs[0] != 0:
            raise ValidationError("horizons must be contiguous from 0")


@dataclass
class TrajectoryFit:
    spec: TrajectorySpec
    beta: np.ndarray
    cov: np.ndarray
    colnames: list
    col_meta: list                 # ("horizon", t) | ("interaction", idx, t) | ("control", name)
    dropped: list
    means: np.ndarray              # weighted design-column means
    index_means: dict              # index -> weighted mean of the raw column
    index_person_values: dict      # index -> person-level values for quantiles
    obs_per_horizon: dict
    empty_horizons: list
    n: int
    n_persons: int
    resid_var: float
    r2: float

    def col(self, *meta) -> int:
        return self.col_meta.index(tuple(meta))

    def coef(self, index: str, horizon: int) -> float:
        """Interaction coefficient of one index at one horizon."""
        return float(self.beta[self.col("interaction", index, int(horizon))])

    def coef_se(self, index: str, horizon: int) -> float:
        j = self.col("interaction", index, int(horizon))
        return float(np.sqrt(max(self.cov[j, j], 0.0)))


@dataclass(frozen=True)
class MarginCurve:
    """Predicted outcome by horizon at one index quantile."""

    index: str
    quantile: float
    value: float
    horizons: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "index": self.index,
                "quantile": self.quantile,
                "horizon": self.horizons,
                "estimate": self.estimate,
                "se": self.se,
                "ci_lo": self.ci_lo,
                "ci_hi": self.ci_hi,
            }
        )


def _outcome_series(df: pd.DataFrame, outcome: str) -> pd.Series:
    if outcome in ("income", "annual_income"):
        return df["annual_earnings"]
    if outcome == "log_income":
        vals = df["annual_earnings"].to_numpy(float)
        with np.errstate(divide="ignore"):
            return pd.Series(np.where(vals > 0, np.log(vals), np.nan), index=df.index)
    if outcome in df.columns:
        return df[outcome]
    raise ValidationError(f"unknown outcome '{outcome}'")


def _subsample(df: pd.DataFrame, subsample: str) -> pd.DataFrame:
    if subsample == "pooled":
        return df
    return df[df["education_level"] == subsample]


def _design(df: pd.DataFrame, spec: TrajectorySpec):
    """Dense design matrix plus per-column structural metadata."""
    h = (df["year"] - df["graduation_year"]).to_numpy(np.int64)
    cols, names, meta = [], [], []
    for t in spec.horizons:
        cols.append((h == t).astype(float))
        names.append(f"h{t}")
        meta.append(("horizon", int(t)))
    for idx in spec.indices:
        if idx not in df.columns:
            raise ValidationError(f"index column '{idx}' not present")
        vals = df[idx].to_numpy(float)
        for t in spec.horizons:
            cols.append(vals * (h == t))
            names.append(f"{idx}:h{t}")
            meta.append(("interaction", idx, int(t)))
    for name in spec.controls_linear:
        if name not in df.columns:
            raise ValidationError(f"control column '{name}' not present")
        cols.append(df[name].to_numpy(float))
        names.append(name)
        meta.append(("control", name))
    for name in spec.controls_categorical:
        if name not in df.columns:
            raise ValidationError(f"control column '{name}' not present")
        levels = np.sort(df[name].unique())
        for level in levels[1:]:
            cols.append((df[name] == level).astype(float))
            names.append(f"{name}={level}")
            meta.append(("control", f"{name}={level}"))
    x = np.column_stack(cols)
    return x, names, meta


def fit_trajectory(panel: Panel, spec: TrajectorySpec) -> TrajectoryFit:
    """Least-squares fit of the horizon-interaction model.

    Rows outside the horizon grid or with a missing outcome are excluded;
    zero outcomes are kept. Collinear design columns are dropped and
    reported on the fit. Standard errors are heteroskedasticity-robust and
    clustered by person.
    """
    df = _subsample(panel.df, spec.subsample)
    if df.empty:
        raise ValidationError(f"subsample '{spec.subsample}' is empty")
    y_all = _outcome_series(df, spec.outcome)
    h = df["year"] - df["graduation_year"]
    ok = y_all.notna() & h.isin(list(spec.horizons))
    if spec.weights is not None:
        ok &= df[spec.weights].notna()
    df = df[ok]
    if df.empty:
        raise ValidationError("no usable observations for the trajectory fit")
    y = y_all[ok].to_numpy(float)
    w = df[spec.weights].to_numpy(float) if spec.weights else None

    x, names, meta = _design(df, spec)
    cluster = df["person_id"].to_numpy(np.int64)
    fit = linalg.ols(x, y, weights=w, colnames=names, cluster=cluster)

    weights_arr = np.ones(len(df)) if w is None else w
    wsum = weights_arr.sum()
    means = (x * weights_arr[:, None]).sum(axis=0) / wsum
    index_means = {
        idx: float((df[idx].to_numpy(float) * weights_arr).sum() / wsum) for idx in spec.indices
    }
    person_first = df.groupby("person_id").first()
    index_person_values = {idx: person_first[idx].to_numpy(float) for idx in spec.indices}

    h_kept = (df["year"] - df["graduation_year"]).to_numpy(np.int64)
    obs_per_horizon = {int(t): int((h_kept == t).sum()) for t in spec.horizons}
    empty = [t for t, n in obs_per_horizon.items() if n == 0]

    return TrajectoryFit(
        spec=spec,
        beta=fit.beta,
        cov=fit.cov,
        colnames=names,
        col_meta=[tuple(m) for m in meta],
        dropped=fit.dropped,
        means=means,
        index_means=index_means,
        index_person_values=index_person_values,
        obs_per_horizon=obs_per_horizon,
        empty_horizons=empty,
        n=len(df),
        n_persons=int(df["person_id"].nunique()),
        resid_var=fit.rss / max(fit.n - len(fit.kept), 1),
        r2=fit.r2,
    )


def index_quantile(fit: TrajectoryFit, index: str, q: float) -> float:
    """Empirical quantile (linear interpolation) of the person-level index."""
    if not 0.0 < q < 1.0:
        raise ValidationError(f"quantile must lie strictly inside (0, 1), got {q}")
    if index not in fit.index_person_values:
        raise ValidationError(f"index '{index}' was not part of the fit")
    return float(np.quantile(fit.index_person_values[index], q))


def margins(fit: TrajectoryFit, quantiles: Sequence[float], index: str) -> list:
    """One MarginCurve per quantile of ``index``.

    The curve at quantile q is the model prediction with the index fixed at
    its q-th person-level quantile, the horizon stepped through the grid,
    and every other regressor (other indices included) at its sample mean.
    Horizons with no observations yield NaN rather than a silent zero.
    """
    curves = []
    hs = np.array(fit.spec.horizons, dtype=int)
    for q in quantiles:
        xq = index_quantile(fit, index, q)
        est = np.empty(len(hs))
        se = np.empty(len(hs))
        for i, t in enumerate(hs):
            v = np.zeros(len(fit.beta))
            v[fit.col("horizon", int(t))] = 1.0
            for idx in fit.spec.indices:
                v[fit.col("interaction", idx, int(t))] = xq if idx == index else fit.index_means[idx]
            for j, m in enumerate(fit.col_meta):
                if m[0] == "control":
                    v[j] = fit.means[j]
            est[i] = float(v @ fit.beta)
            se[i] = float(np.sqrt(max(v @ fit.cov @ v, 0.0)))
        if fit.empty_horizons:
            bad = np.isin(hs, fit.empty_horizons)
            est[bad] = np.nan
            se[bad] = np.nan
        curves.append(
            MarginCurve(
                index=index,
                quantile=float(q),
                value=xq,
                horizons=hs,
                estimate=est,
                se=se,
                ci_lo=est - Z975 * se,
                ci_hi=est + Z975 * se,
            )
        )
    return curves


def margin_gap(fit: TrajectoryFit, index: str, q_lo: float = 0.1, q_hi: float = 0.9):
    """Per-horizon gap between two margin curves, with its standard error.

    By linearity the gap equals (x_hi - x_lo) * beta_t, so its SE is the
    scaled coefficient SE.
    """
    x_lo = index_quantile(fit, index, q_lo)
    x_hi = index_quantile(fit, index, q_hi)
    span = x_hi - x_lo
    hs = np.array(fit.spec.horizons, dtype=int)
    gap = np.array([span * fit.coef(index, t) for t in hs])
    se = np.array([abs(span) * fit.coef_se(index, t) for t in hs])
    return hs, gap, se


def wald_interactions(fit: TrajectoryFit, index: str):
    """Joint Wald test that every horizon interaction of ``index`` is zero."""
    cols = [j for j, m in enumerate(fit.col_meta) if m[0] == "interaction" and m[1] == index]
    cols = [j for j in cols if fit.colnames[j] not in fit.dropped]
    b = fit.beta[cols]
    v = fit.cov[np.ix_(cols, cols)]
    stat = float(b @ np.linalg.solve(v, b))
    dof = len(cols)
    return stat, dof, float(stats.chi2.sf(stat, dof))


# ---------------------------------------------------------------------------
# Lifetime income
# ---------------------------------------------------------------------------

def lifetime_income(panel: Panel, rate: float = 0.03, horizon_cap: int = HORIZON_CAP) -> pd.DataFrame:
    """Per-person present value of income at graduation.

    Sums real annual earnings (zeros included) over horizons 0..horizon_cap
    discounted by 1/(1+rate)^t, with the graduation year undiscounted.
    Years a person is not observed contribute nothing.
    """
    if rate <= -1.0:
        raise ValidationError("discount rate must exceed -1")
    df = panel.df
    h = (df["year"] - df["graduation_year"]).to_numpy(np.int64)
    ok = (h >= 0) & (h <= horizon_cap)
    disc = df["annual_earnings"].to_numpy(float)[ok] / (1.0 + rate) ** h[ok]
    out = (
        pd.DataFrame({"person_id": df["person_id"].to_numpy(np.int64)[ok], "pv": disc})
        .groupby("person_id", as_index=False)["pv"]
        .sum()
        .rename(columns={"pv": "pv_income"})
    )
    return out


def person_table(panel: Panel, columns: Sequence[str]) -> pd.DataFrame:
    """One row per person with the first observed value of each column."""
    keep = ["person_id"] + [c for c in columns if c != "person_id"]
    return panel.df[keep].groupby("person_id", as_index=False).first()


@dataclass(frozen=True)
class AdjustedMeans:
    """Margins of a person-level regression at index quantiles."""

    index: str
    quantiles: np.ndarray
    values: np.ndarray
    estimate: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    dropped: list

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "index": self.index,
                "quantile": self.quantiles,
                "estimate": self.estimate,
                "se": self.se,
                "ci_lo": self.ci_lo,
                "ci_hi": self.ci_hi,
            }
        )


def adjusted_person_means(
    person_df: pd.DataFrame,
    outcome: str,
    index: str,
    quantiles: Sequence[float],
    other_indices: Sequence[str] = (),
    controls_linear: Sequence[str] = DEFAULT_LINEAR_CONTROLS,
    controls_categorical: Sequence[str] = ("birth_year", "graduation_year", "biobank"),
    weights: Optional[str] = None,
) -> AdjustedMeans:
    """Regression-adjusted mean outcome at quantiles of a person-level index.

    Fits outcome ~ intercept + indices + controls on the person table and
    predicts at the index quantile with everything else at sample means
    (HC1 standard errors; one row per person, so clustering is moot).
    """
    df = person_df
    cols = [np.ones(len(df))]
    names = ["const"]
    for idx in [index, *other_indices]:
        cols.append(df[idx].to_numpy(float))
        names.append(idx)
    for c in controls_linear:
        if c in df.columns:
            cols.append(df[c].to_numpy(float))
            names.append(c)
    for c in controls_categorical:
        if c not in df.columns:
            continue
        levels = np.sort(df[c].unique())
        for level in levels[1:]:
            cols.append((df[c] == level).to_numpy(float))
            names.append(f"{c}={level}")
    x = np.column_stack(cols)
    y = df[outcome].to_numpy(float)
    w = df[weights].to_numpy(float) if weights else None
    fit = linalg.ols(x, y, weights=w, colnames=names)

    weights_arr = np.ones(len(df)) if w is None else w
    means = (x * weights_arr[:, None]).sum(axis=0) / weights_arr.sum()
    qs = np.asarray(list(quantiles), dtype=float)
    if np.any((qs <= 0) | (qs >= 1)):
        raise ValidationError("quantiles must lie strictly inside (0, 1)")
    values = np.quantile(df[index].to_numpy(float), qs)
    est = np.empty(len(qs))
    se = np.empty(len(qs))
    j_idx = names.index(index)
    for i, xq in enumerate(values):
        v = means.copy()
        v[j_idx] = xq
        est[i] = float(v @ fit.beta)
        se[i] = float(np.sqrt(max(v @ fit.cov @ v, 0.0)))
    return AdjustedMeans(
        index=index,
        quantiles=qs,
        values=values,
        estimate=est,
        se=se,
        ci_lo=est - Z975 * se,
        ci_hi=est + Z975 * se,
        dropped=fit.dropped,
    )


def lifetime_margins(
    panel: Panel,
    index: str = "EA_PGI",
    quantiles: Sequence[float] = (0.1, 0.9),
    rate: float = 0.03,
    horizon_cap: int = HORIZON_CAP,
    other_indices: Sequence[str] = (),
    weights: Optional[str] = None,
) -> AdjustedMeans:
    """Adjusted mean discounted lifetime income by index quantile."""
    pv = lifetime_income(panel, rate=rate, horizon_cap=horizon_cap)
    keep = [index, *other_indices, *DEFAULT_LINEAR_CONTROLS, "birth_year", "graduation_year", "biobank"]
    if weights:
        keep.append(weights)
    present = [c for c in keep if c in panel.df.columns]
    persons = person_table(panel, present).merge(pv, on="person_id", how="inner")
    return adjusted_person_means(
        persons,
        outcome="pv_income",
        index=index,
        quantiles=quantiles,
        other_indices=other_indices,
        controls_linear=[c for c in DEFAULT_LINEAR_CONTROLS if c in persons.columns],
        controls_categorical=[c for c in ("birth_year", "graduation_year", "biobank") if c in persons.columns],
        weights=weights,
    )


# ---------------------------------------------------------------------------
# Binscatter and incremental R^2
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinscatterResult:
    bins: pd.DataFrame
    slope: float
    slope_se: float
    n: int


def _residualize_on(y: np.ndarray, controls: np.ndarray) -> np.ndarray:
    fit = linalg.ols(controls, y, robust=False)
    return y - controls[:, fit.kept] @ fit.beta[fit.kept]


def binscatter(
    data,
    x: str,
    y: str,
    n_bins: int = 20,
    controls: Sequence[str] = (),
) -> BinscatterResult:
    """Quantile-binned means of y against x after residualizing on controls.

    ``data`` may be a Panel (collapsed to one row per person) or a
    DataFrame used as-is. Both variables are residualized on the controls
    plus an intercept, standardized, and x is cut into ``n_bins``
    equal-count quantile bins; the slope is from the OLS fit on the
    standardized residuals with HC1 standard errors.
    """
    if n_bins < 2:
        raise ValidationError("need at least 2 bins")
    df = person_table(data, [x, y, *controls]) if isinstance(data, Panel) else data
    df = df.dropna(subset=[x, y, *controls])
    xv = df[x].to_numpy(float)
    yv = df[y].to_numpy(float)
    if controls:
        c = np.column_stack([np.ones(len(df))] + [df[col].to_numpy(float) for col in controls])
        xv = _residualize_on(xv, c)
        yv = _residualize_on(yv, c)
    else:
        xv = xv - xv.mean()
        yv = yv - yv.mean()
    if xv.std() == 0 or yv.std() == 0:
        raise ValidationError("binscatter variables must have positive variance")
    xv = xv / xv.std()
    yv = yv / yv.std()

    distinct = len(np.unique(xv))
    if distinct < n_bins:
        warnings.warn(f"only {distinct} distinct x values; reducing bins from {n_bins}", stacklevel=2)
        n_bins = max(2, distinct)

    order = np.argsort(xv, kind="mergesort")
    edges = np.linspace(0, len(xv), n_bins + 1).astype(int)
    rows = []
    for k in range(n_bins):
        sel = order[edges[k]: edges[k + 1]]
        if len(sel):
            rows.append({"bin": k, "x_mean": float(xv[sel].mean()), "y_mean": float(yv[sel].mean()), "n": len(sel)})
    design = np.column_stack([np.ones(len(xv)), xv])
    fit = linalg.ols(design, yv, colnames=["const", "slope"], robust=True)
    return BinscatterResult(
        bins=pd.DataFrame(rows),
        slope=float(fit.beta[1]),
        slope_se=float(fit.se()[1]),
        n=len(xv),
    )


def incremental_r2(
    panel,
    outcome: str = "years_edu",
    index: str = "EA_PGI",
    pcs: Sequence[str] = tuple(f"PC{k}" for k in range(1, 11)),
) -> float:
    """R^2 gain from adding the index to the standard control set.

    Controls: gender fully interacted with birth-year indicators, biobank
    indicator, and the genetic principal components; computed on the
    person-level cross-section.
    """
    cols = [outcome, index, "gender", "birth_year", "biobank", *pcs]
    df = person_table(panel, [c for c in cols if c != "person_id"]) if isinstance(panel, Panel) else panel
    df = df.dropna(subset=[c for c in (outcome, index) if c in df.columns])
    y = df[outcome].to_numpy(float)

    blocks = [np.ones(len(df))]
    names = ["const"]
    cells = sorted(set(zip(df["gender"], df["birth_year"])))
    for g, b in cells[1:]:
        blocks.append(((df["gender"] == g) & (df["birth_year"] == b)).to_numpy(float))
        names.append(f"g{g}b{b}")
    for level in np.sort(df["biobank"].unique())[1:]:
        blocks.append((df["biobank"] == level).to_numpy(float))
        names.append(f"biobank={level}")
    for pc in pcs:
        if pc in df.columns:
            blocks.append(df[pc].to_numpy(float))
            names.append(pc)
    x0 = np.column_stack(blocks)
    base = linalg.ols(x0, y, colnames=names, robust=False)
    x1 = np.column_stack([x0, df[index].to_numpy(float)])
    full = linalg.ols(x1, y, colnames=names + [index], robust=False)
    return float(full.r2 - base.r2)


# ---------------------------------------------------------------------------
# Derived outcome columns
# ---------------------------------------------------------------------------

def attach_firm_quality(panel: Panel, fit: AkmFit, column: str = "firm_quality", standardized: bool = True) -> Panel:
    """Merge the firm effect of each row's employer onto the panel."""
    source = fit.psi_std if (standardized and fit.psi_std is not None) else fit.psi
    df = panel.df.copy()
    df[column] = df["firm_id"].map(source).astype(float)
    return panel.with_df(df)


def attach_cci_column(panel: Panel, scores: pd.DataFrame, column: str = "cci") -> Panel:
    """Merge cumulative comorbidity scores at each row's attained age."""
    from .health import attach_cci_outcome

    return panel.with_df(attach_cci_outcome(panel.df, scores, column=column))


def attach_job_count(panel: Panel, column: str = "job_count") -> Panel:
    """Cumulative number of employment spells since graduation.

    A new spell starts when a row is employed and the previous year's row
    (if any) was at a different firm or nonemployed. Nonemployment rows
    keep the running count.
    """
    df = panel.df.copy()
    firm = df["firm_id"]
    prev_firm = firm.groupby(df["person_id"]).shift(1)
    new_spell = firm.notna() & (prev_firm.isna() | (firm != prev_firm))
    df[column] = new_spell.astype(int).groupby(df["person_id"]).cumsum()
    return panel.with_df(df)
