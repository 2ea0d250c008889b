"""
Two-way fixed-effects wage regression on matched employer-employee panels.

Log monthly earnings are regressed on a worker effect, a firm effect, and
time-varying covariates (education level fully interacted with calendar
year indicators and with a cubic in age centered at 40). The system is
solved iteratively: every covariate column and the outcome are first
residualized on the two fixed-effect blocks with preconditioned conjugate
gradient on the normal equations (Jacobi/degree preconditioning), the
covariate coefficients come from the residualized regression, and a final
CG solve recovers the effects themselves. Collinear covariate columns,
including the structurally collinear linear age term (age = year minus a
person constant), are detected after residualization and dropped with a
report.

Worker and firm effects are identified within a connected component up to
a constant; the fit is normalized so the observation-weighted mean of the
firm effects is zero within each component, with the constant absorbed
into the worker effects.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.sparse

from .connectivity import UnionFind
from .errors import ConvergenceError, ValidationError
from .panel import Panel, log_monthly_earnings

AGE_CENTER = 40.0
AGE_SCALE = 10.0

#: Columns with residual norm below this fraction of their original norm
#: after fixed-effect absorption are treated as collinear with the effects.
ABSORB_COLLINEARITY_TOL = 1e-6


@dataclass(frozen=True)
class AkmSpec:
    """Estimation settings: period splits, covariate set, solver controls.

    ``covariates`` is "default" for the education-by-year and
    education-by-age-cubic design, or "none" for a pure two-effect fit.
    """

    periods: tuple = ((1987, 2003), (2004, 2019))
    solver_tol: float = 1e-8
    max_iter: int = 5000
    covariates: str = "default"

    def __post_init__(self):
        if self.solver_tol <= 0:
            raise ValidationError("solver_tol must be positive")
        if self.covariates not in ("default", "none"):
            raise ValidationError(f"unknown covariate set '{self.covariates}'")
        spans = sorted(self.periods)
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            if b0 <= a1:
                raise ValidationError(f"periods overlap: {(a0, a1)} and {(b0, b1)}")


@dataclass
class AkmFit:
    """Estimated effects, coefficients and diagnostics for one period."""

    period: tuple
    theta: pd.Series
    psi: pd.Series
    beta: pd.Series
    dropped_columns: list
    r2: float
    residual_sd: float
    iterations: int
    residual_history: list
    gradient_norm_rel: float
    objective: float
    converged: bool
    rows: pd.DataFrame                     # person_id, firm_id, year, y, xb, resid
    component_of_firm: dict
    normalization: dict                    # component -> constant moved from psi to theta
    theta_std: Optional[pd.Series] = None
    psi_std: Optional[pd.Series] = None
    theta_scale: Optional[tuple] = None    # (mean, sd) used for standardization
    psi_scale: Optional[tuple] = None


@dataclass(frozen=True)
class VarianceDecomposition:
    """Plug-in split of var(y) into effect, covariate and residual terms.

    All pairwise covariances are counted twice, so the components sum to
    var(y) exactly (population moments over person-year observations).
    """

    var_y: float
    components: dict
    shares: dict

    def to_frame(self) -> pd.DataFrame:
        rows = [{"component": k, "value": v, "share": self.shares[k]} for k, v in self.components.items()]
        return pd.DataFrame(rows, columns=["component", "value", "share"])


def _pcg(apply_k, b, minv, tol_abs, maxiter, x0=None):
    """Conjugate gradient on K x = b with diagonal preconditioning.

    Returns (x, residual_norms, converged); converges on the true residual
    norm, recomputed whenever the recurrence claims convergence.
    """
    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = x0.astype(float).copy()
        r = b - apply_k(x)
    history = [float(np.linalg.norm(r))]
    if history[0] <= tol_abs:
        return x, history, True
    z = minv * r
    p = z.copy()
    rz = float(r @ z)
    for _ in range(maxiter):
        kp = apply_k(p)
        pkp = float(p @ kp)
        if pkp <= 0.0:
            break
        alpha = rz / pkp
        x += alpha * p
        r -= alpha * kp
        rn = float(np.linalg.norm(r))
        history.append(rn)
        if rn <= tol_abs:
            r = b - apply_k(x)
            rn = float(np.linalg.norm(r))
            history[-1] = rn
            if rn <= tol_abs:
                return x, history, True
        z = minv * r
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, history, False


class _EffectsSystem:
    """Sparse worker/firm incidence with CG projection onto its column span."""

    def __init__(self, person_idx, firm_idx, n_persons, n_firms):
        n = len(person_idx)
        rows = np.repeat(np.arange(n), 2)
        cols = np.empty(2 * n, dtype=np.int64)
        cols[0::2] = person_idx
        cols[1::2] = n_persons + firm_idx
        data = np.ones(2 * n)
        self.b = scipy.sparse.csr_matrix((data, (rows, cols)), shape=(n, n_persons + n_firms))
        self.bt = self.b.T.tocsr()
        counts = np.concatenate([np.bincount(person_idx, minlength=n_persons),
                                 np.bincount(firm_idx, minlength=n_firms)]).astype(float)
        self.minv = 1.0 / counts
        self.n_persons = n_persons

    def solve(self, c, tol_rel, maxiter, x0=None):
        """min_gamma ||c - B gamma||; returns (gamma, iterations, history, ok)."""
        rhs = self.bt @ c
        tol_abs = tol_rel * max(float(np.linalg.norm(c)), 1e-300)
        gamma, history, ok = _pcg(lambda v: self.bt @ (self.b @ v), rhs, self.minv, tol_abs, maxiter, x0=x0)
        return gamma, len(history) - 1, history, ok

    def residualize(self, c, tol_rel, maxiter):
        gamma, iters, history, ok = self.solve(c, tol_rel, maxiter)
        return c - self.b @ gamma, iters, ok


def build_covariates(df: pd.DataFrame):
    """Covariate matrix for the wage regression, column-demeaned.

    One block per education level present: calendar-year indicators (the
    earliest year overall is the reference for every level) and the three
    centered age polynomial terms. Columns are ordered by keep priority
    for rank-deficiency handling: year indicators, then the curvature
    terms, then the linear age terms last. The linear age term is an exact
    combination of the year indicators and a worker-level constant, so
    when something must give, it goes first; that choice pins calendar
    trends to the year indicators and keeps the worker effects free of
    cohort terms. Returns (X, colnames).
    """
    years = np.sort(df["year"].unique())
    levels = sorted(df["education_level"].unique())
    age_c = ((df["year"] - df["birth_year"]).to_numpy(float) - AGE_CENTER) / AGE_SCALE
    year_arr = df["year"].to_numpy()
    cols, names = [], []
    masks = {level: (df["education_level"] == level).to_numpy(float) for level in levels}
    for level in levels:
        for yr in years[1:]:
            cols.append(masks[level] * (year_arr == yr))
            names.append(f"{level}:year{yr}")
    for power in (2, 3, 1):
        for level in levels:
            cols.append(masks[level] * age_c**power)
            names.append(f"{level}:age{power}")
    x = np.column_stack(cols) if cols else np.empty((len(df), 0))
    x -= x.mean(axis=0, keepdims=True)
    return x, names


def fit_akm(panel: Panel, spec: AkmSpec = AkmSpec(), warm_start=None) -> list:
    """Estimate the wage regression, one fit per period.

    The panel should already be restricted to an estimation sample (see
    apply_akm_filters and largest_connected_set); rows without a firm or
    with undefined log monthly earnings are ignored. ``warm_start`` is an
    optional (theta, psi) Series pair used as the initial point of the
    effects solve; the normalized result is invariant to it. Raises
    ConvergenceError with the residual history when any CG solve fails to
    reach tolerance within max_iter.
    """
    fits = []
    for period in spec.periods:
        y0, y1 = period
        sub = panel.df[(panel.df["year"] >= y0) & (panel.df["year"] <= y1)]
        fits.append(_fit_single_period(sub, (int(y0), int(y1)), spec, warm_start))
    return fits


def _fit_single_period(df: pd.DataFrame, period, spec: AkmSpec, warm_start=None) -> AkmFit:
    y_all = log_monthly_earnings(df)
    ok = y_all.notna() & df["firm_id"].notna()
    df = df[ok]
    if df.empty:
        raise ValidationError(f"no usable observations in period {period}")
    y = y_all[ok].to_numpy(float)

    person_ids, person_idx = np.unique(df["person_id"].to_numpy(np.int64), return_inverse=True)
    firm_ids, firm_idx = np.unique(df["firm_id"].to_numpy(np.int64), return_inverse=True)
    system = _EffectsSystem(person_idx, firm_idx, len(person_ids), len(firm_ids))

    proj_tol = min(spec.solver_tol, 1e-12)
    if spec.covariates == "none":
        x, names = np.empty((len(y), 0)), []
    else:
        x, names = build_covariates(df)

    # Absorb the effects out of outcome and covariates, then find the
    # covariate columns the effects already span.
    total_iters = 0
    y_res, iters, ok_y = system.residualize(y, proj_tol, spec.max_iter)
    if not ok_y:
        raise ConvergenceError(
            f"fixed-effect absorption of the outcome did not converge in {spec.max_iter} iterations",
        )
    total_iters += iters
    x_res = np.empty_like(x)
    absorbed = []
    col_norms = np.linalg.norm(x, axis=0)
    for j in range(x.shape[1]):
        x_res[:, j], iters, ok_c = system.residualize(x[:, j], proj_tol, spec.max_iter)
        if not ok_c:
            raise ConvergenceError(
                f"fixed-effect absorption of column {names[j]} did not converge"
            )
        total_iters += iters
        if np.linalg.norm(x_res[:, j]) <= ABSORB_COLLINEARITY_TOL * max(col_norms[j], 1e-300):
            absorbed.append(j)

    candidates = [j for j in range(x.shape[1]) if j not in absorbed]
    dropped = [names[j] for j in absorbed]
    beta = np.zeros(x.shape[1])
    # Sequential Gram-Schmidt in column order: a column dependent on the
    # effects plus earlier (higher-priority) columns is dropped, so the
    # linear age terms give way before any year indicator does.
    keep = []
    basis = np.empty((x_res.shape[0], len(candidates)))
    for j in candidates:
        r = x_res[:, j].copy()
        for b in range(len(keep)):
            r -= (basis[:, b] @ r) * basis[:, b]
        for b in range(len(keep)):  # second pass for numerical stability
            r -= (basis[:, b] @ r) * basis[:, b]
        norm = np.linalg.norm(r)
        if norm <= 1e-8 * max(col_norms[j], 1e-300):
            dropped.append(names[j])
        else:
            basis[:, len(keep)] = r / norm
            keep.append(j)
    keep = np.array(sorted(keep), dtype=int)
    if len(keep):
        beta_k, *_ = np.linalg.lstsq(x_res[:, keep], y_res, rcond=None)
        beta[keep] = beta_k

    xb = x[:, keep] @ beta[keep] if len(keep) else np.zeros(len(y))
    r = y - xb
    x0 = None
    if warm_start is not None:
        theta0, psi0 = warm_start
        x0 = np.concatenate([
            theta0.reindex(person_ids).fillna(0.0).to_numpy(float),
            psi0.reindex(firm_ids).fillna(0.0).to_numpy(float),
        ])
    gamma, fe_iters, history, ok_fe = system.solve(r, proj_tol, spec.max_iter, x0=x0)
    if not ok_fe:
        raise ConvergenceError(
            f"effects solve did not converge in {spec.max_iter} iterations "
            f"(last residuals {[f'{v:.3e}' for v in history[-5:]]})",
            residual_history=history,
        )
    total_iters += fe_iters
    theta = gamma[: len(person_ids)].copy()
    psi = gamma[len(person_ids):].copy()

    # Gauge: observation-weighted mean of psi is zero in each component.
    uf = UnionFind(len(firm_ids))
    same_person = person_idx[1:] == person_idx[:-1]
    for i in np.nonzero(same_person)[0]:
        uf.union(firm_idx[i], firm_idx[i + 1])
    roots = uf.roots()
    comp_labels, comp_of_firm = np.unique(roots, return_inverse=True)
    row_comp = comp_of_firm[firm_idx]
    obs_per_comp = np.bincount(row_comp)
    psi_mean = np.bincount(row_comp, weights=psi[firm_idx]) / obs_per_comp
    psi -= psi_mean[comp_of_firm]
    person_comp = np.full(len(person_ids), -1, dtype=np.int64)
    person_comp[person_idx] = comp_of_firm[firm_idx]
    theta += psi_mean[person_comp]

    fitted = xb + theta[person_idx] + psi[firm_idx]
    resid = y - fitted
    objective = float(resid @ resid)
    grad_x = x[:, keep].T @ resid if len(keep) else np.zeros(0)
    grad_fe = system.bt @ resid
    grad_norm = float(np.sqrt(np.sum(grad_x**2) + np.sum(grad_fe**2)))
    y_norm = float(np.linalg.norm(y))
    sst = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - objective / sst if sst > 0 else 1.0

    rows = pd.DataFrame(
        {
            "person_id": df["person_id"].to_numpy(np.int64),
            "firm_id": df["firm_id"].to_numpy(np.int64),
            "year": df["year"].to_numpy(np.int64),
            "y": y,
            "xb": xb,
            "resid": resid,
        }
    )
    return AkmFit(
        period=period,
        theta=pd.Series(theta, index=pd.Index(person_ids, name="person_id"), name="theta"),
        psi=pd.Series(psi, index=pd.Index(firm_ids, name="firm_id"), name="psi"),
        beta=pd.Series(beta[keep], index=[names[j] for j in keep], name="beta"),
        dropped_columns=dropped,
        r2=r2,
        residual_sd=float(resid.std()),
        iterations=total_iters,
        residual_history=[float(v) for v in history],
        gradient_norm_rel=grad_norm / y_norm if y_norm > 0 else 0.0,
        objective=objective,
        converged=grad_norm <= spec.solver_tol * max(y_norm, 1e-300),
        rows=rows,
        component_of_firm={int(f): int(c) for f, c in zip(firm_ids, comp_of_firm)},
        normalization={int(c): float(m) for c, m in enumerate(psi_mean)},
    )


def standardize_indices(fit: AkmFit, reference_panel: Panel) -> AkmFit:
    """Rescale effects to mean 0, sd 1 over the reference panel.

    Worker effects standardize over persons (one value each), firm effects
    over firm-year cells present in the reference panel. The location and
    scale used are stored on the returned fit.
    """
    df = reference_panel.df
    persons = pd.Index(df["person_id"].unique())
    theta_ref = fit.theta.reindex(persons).dropna()
    if theta_ref.empty:
        raise ValidationError("reference panel shares no persons with the fit")
    t_mean, t_sd = float(theta_ref.mean()), float(theta_ref.std(ddof=0))

    firm_years = df.loc[df["firm_id"].notna(), ["firm_id", "year"]].drop_duplicates()
    psi_ref = fit.psi.reindex(firm_years["firm_id"].astype(np.int64)).dropna()
    if psi_ref.empty:
        raise ValidationError("reference panel shares no firms with the fit")
    p_mean, p_sd = float(psi_ref.mean()), float(psi_ref.std(ddof=0))
    if t_sd <= 0 or p_sd <= 0:
        raise ValidationError("cannot standardize indices with zero variance")

    return dataclasses.replace(
        fit,
        theta_std=(fit.theta - t_mean) / t_sd,
        psi_std=(fit.psi - p_mean) / p_sd,
        theta_scale=(t_mean, t_sd),
        psi_scale=(p_mean, p_sd),
    )


def variance_decomposition(fit: AkmFit, panel: Optional[Panel] = None) -> VarianceDecomposition:
    """Exact accounting split of outcome variance over the fitted rows.

    y = theta + psi + xb + resid row by row, so with population moments
    var(y) = sum of the four variances plus twice each pairwise covariance;
    the residual covariances are included (they are solver-tolerance zeros)
    to keep the identity exact regardless of convergence level.
    """
    rows = fit.rows
    parts = {
        "theta": fit.theta.reindex(rows["person_id"]).to_numpy(float),
        "psi": fit.psi.reindex(rows["firm_id"]).to_numpy(float),
        "xb": rows["xb"].to_numpy(float),
        "resid": rows["resid"].to_numpy(float),
    }
    y = rows["y"].to_numpy(float)
    var_y = float(np.var(y))
    components = {}
    names = list(parts)
    for name in names:
        components[f"var_{name}"] = float(np.var(parts[name]))
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            cov = float(np.mean(parts[a] * parts[b]) - parts[a].mean() * parts[b].mean())
            components[f"cov_{a}_{b}_x2"] = 2.0 * cov
    denom = var_y if var_y > 0 else 1.0
    shares = {k: v / denom for k, v in components.items()}
    return VarianceDecomposition(var_y=var_y, components=components, shares=shares)


@dataclass(frozen=True)
class CrossPeriodAgreement:
    corr_theta: float
    corr_psi: float
    theta_bins: pd.DataFrame
    psi_bins: pd.DataFrame


def _binned_means(a: pd.Series, b: pd.Series, n_bins: int = 20) -> pd.DataFrame:
    order = np.argsort(a.to_numpy(), kind="mergesort")
    av, bv = a.to_numpy()[order], b.to_numpy()[order]
    edges = np.linspace(0, len(av), n_bins + 1).astype(int)
    rows = []
    for k in range(n_bins):
        lo, hi = edges[k], edges[k + 1]
        if hi > lo:
            rows.append({"bin": k, "mean_a": float(av[lo:hi].mean()), "mean_b": float(bv[lo:hi].mean())})
    return pd.DataFrame(rows)


def cross_period_agreement(fit_a: AkmFit, fit_b: AkmFit, n_bins: int = 20) -> CrossPeriodAgreement:
    """Correlations of effects across two fits over shared persons/firms."""
    persons = fit_a.theta.index.intersection(fit_b.theta.index)
    firms = fit_a.psi.index.intersection(fit_b.psi.index)
    if len(persons) == 0 and len(firms) == 0:
        raise ValidationError("fits share no persons and no firms")
    if len(persons) < 2 or len(firms) < 2:
        raise ValidationError("need at least two shared persons and firms for correlations")
    ta, tb = fit_a.theta.loc[persons], fit_b.theta.loc[persons]
    pa, pb = fit_a.psi.loc[firms], fit_b.psi.loc[firms]
    return CrossPeriodAgreement(
        corr_theta=float(np.corrcoef(ta, tb)[0, 1]),
        corr_psi=float(np.corrcoef(pa, pb)[0, 1]),
        theta_bins=_binned_means(ta, tb, n_bins),
        psi_bins=_binned_means(pa, pb, n_bins),
    )
