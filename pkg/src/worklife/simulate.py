"""
Synthetic matched employer-employee panels with known ground truth.

The generating process mirrors the estimators it is meant to exercise. Log
monthly earnings of an employed worker are

    log(w_it) = base + theta_i + psi_{J(i,t)} + g(age_it, year_t)
                + slope * t * PGI_i * 1[tertiary]   + eps_it

where theta_i is the worker effect, psi_j the firm effect, g a smooth
profile (quadratic and cubic in centered age plus a linear calendar trend,
deliberately containing no linear age term so the estimating model spans
it exactly), t the years since graduation, and eps iid noise. Workers move
between firms each year with a probability that may rise with the genetic
index for tertiary graduates, and movers pick their destination with
softmax(psi) weights, which produces gradual sorting of mobile workers
into higher-paying firms.

Randomness is fully reproducible across platforms. Stream splitting:
``SeedSequence(seed)`` spawns one child per worker plus one for the firm
effects; a separate root ``SeedSequence((noise_seed, 0x5EED))`` spawns the
per-worker earnings-noise streams, so two runs with the same ``seed`` but
different ``noise_seed`` share every latent draw and employment path and
differ only in eps. Diagnosis events use a third root keyed on
``(seed, 0xD1A6)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import pandas as pd
from numpy.random import SeedSequence, default_rng

from .errors import ValidationError
from .health import default_charlson_table
from .panel import CORE_COLUMNS, Panel, make_panel

#: First calendar year of every simulated window.
START_YEAR = 1990

#: Systematic log-wage level: exp(7.6) is roughly 2000 earnings units/month.
LOG_WAGE_BASE = 7.6

#: Smooth covariate profile, shared by all workers (no linear age term).
AGE2_COEF = -0.040
AGE3_COEF = -0.010
YEAR_TREND = 0.004

#: Residual std of the synthetic years-of-education measure.
YEARS_EDU_NOISE_SD = 1.5

_NOISE_TAG = 0x5EED
_DIAG_TAG = 0xD1A6


@dataclass(frozen=True)
class SimConfig:
    """Parameters of the synthetic panel generator.

    ``pgi_effect_on_theta`` tilts the worker effect of tertiary graduates;
    ``pgi_effect_on_mobility`` scales their annual move probability; both
    are zero for secondary graduates, matching the qualitative pattern the
    estimators are expected to detect. ``pgi_trajectory_slope`` injects a
    direct per-horizon earnings effect slope*t*PGI for tertiary graduates,
    which is the ground truth for trajectory-coefficient recovery.
    """

    n_workers: int = 1000
    n_firms: int = 50
    n_years: int = 15
    theta_sd: float = 0.3
    psi_sd: float = 0.3
    noise_sd: float = 0.1
    pgi_effect_on_theta: float = 0.0
    pgi_effect_on_mobility: float = 0.0
    base_mobility_rate: float = 0.15
    nonemployment_rate: float = 0.05
    tertiary_share: float = 0.6
    seed: int = 0
    discount_rate: float = 0.03
    pgi_trajectory_slope: float = 0.0
    pgi_effect_on_years_edu: float = 0.0
    diagnosis_hazard: float = 0.002
    diagnosis_pgi_tilt: float = 0.0
    partial_months_prob: float = 0.08
    noise_seed: Optional[int] = None

    def __post_init__(self):
        if min(self.n_workers, self.n_firms, self.n_years) <= 0:
            raise ValidationError("worker, firm and year counts must be positive")
        if self.n_firms < 2:
            raise ValidationError("need at least 2 firms to generate mobility")
        for name in ("base_mobility_rate", "nonemployment_rate", "tertiary_share", "partial_months_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name} must lie in [0, 1], got {v}")
        for name in ("theta_sd", "psi_sd", "noise_sd", "diagnosis_hazard"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class GroundTruth:
    """Latent values behind a simulated panel.

    ``beta_t`` maps index name -> {horizon: injected coefficient}.
    ``systematic_log_monthly`` is the full noise-free log monthly earnings
    aligned to the panel rows (NaN on nonemployment rows), so the panel
    outcome equals it exactly when noise_sd is 0.
    """

    theta: pd.Series
    psi: pd.Series
    beta_t: dict
    xb: pd.Series
    systematic_log_monthly: pd.Series
    base: float = LOG_WAGE_BASE


def theta_effect_for_correlation(target_corr: float, theta_sd: float) -> float:
    """PGI loading that makes corr(theta, PGI) equal ``target_corr``.

    theta = a*PGI + theta_sd*z with PGI, z standard normal gives
    corr = a / sqrt(a^2 + theta_sd^2); invert for a.
    """
    if not 0 <= target_corr < 1:
        raise ValidationError("target correlation must lie in [0, 1)")
    return theta_sd * target_corr / math.sqrt(1.0 - target_corr**2)


def years_edu_effect_for_r2(target_r2: float, tertiary_share: float,
                            noise_sd: float = YEARS_EDU_NOISE_SD) -> float:
    """PGI loading on years of education that yields the target incremental R^2.

    years_edu = 12 + 4*tertiary + lambda*PGI + noise with tertiary
    independent of PGI, so R^2 = lambda^2 / (16 p (1-p) + lambda^2 + sd^2).
    """
    if not 0 <= target_r2 < 1:
        raise ValidationError("target R^2 must lie in [0, 1)")
    p = tertiary_share
    other_var = 16.0 * p * (1.0 - p) + noise_sd**2
    return math.sqrt(target_r2 * other_var / (1.0 - target_r2))


def _softmax(psi: np.ndarray) -> np.ndarray:
    z = np.exp(psi - psi.max())
    return z / z.sum()


def _choose(cumulative: np.ndarray, u: float) -> int:
    return int(np.searchsorted(cumulative, u, side="right"))


def simulate_panel(cfg: SimConfig) -> tuple[Panel, GroundTruth]:
    """Generate a panel and its ground truth; byte-identical given the seed."""
    root = SeedSequence(cfg.seed)
    firm_ss, person_root = root.spawn(2)
    person_seqs = person_root.spawn(cfg.n_workers)
    noise_root = SeedSequence((cfg.seed if cfg.noise_seed is None else cfg.noise_seed, _NOISE_TAG))
    noise_seqs = noise_root.spawn(cfg.n_workers)

    firm_rng = default_rng(firm_ss)
    psi = firm_rng.normal(0.0, cfg.psi_sd, cfg.n_firms)
    softmax_all = _softmax(psi)
    cum_all = np.cumsum(softmax_all)

    end_year = START_YEAR + cfg.n_years - 1
    grad_window = max(1, cfg.n_years // 3)

    pc_names = [f"PC{k}" for k in range(1, 11)]
    rows = {name: [] for name in (
        "person_id", "year", "birth_year", "gender", "firm_id", "annual_earnings",
        "months_worked", "education_level", "education_field", "institution_id",
        "graduation_year", "biobank",
    )}
    person_cols = {name: [] for name in ("EA_PGI", "EA_PGI_father", "EA_PGI_mother", "years_edu", *pc_names)}
    xb_parts = []
    systematic_parts = []
    noise_parts = []
    theta = np.empty(cfg.n_workers)
    is_tertiary = np.empty(cfg.n_workers, dtype=bool)
    pgis = np.empty(cfg.n_workers)

    for i in range(cfg.n_workers):
        g = default_rng(person_seqs[i])
        father = g.normal()
        mother = g.normal()
        pgi = 0.5 * father + 0.5 * mother + math.sqrt(0.5) * g.normal()
        pcs = g.normal(size=10)
        gender = int(g.random() < 0.5)
        tertiary = g.random() < cfg.tertiary_share
        grad_year = START_YEAR + int(g.integers(0, grad_window))
        # Wide graduation-age dispersion gives the estimators cross-person
        # age variation within calendar year, which identifies age profiles.
        grad_age = int(g.integers(22, 33)) if tertiary else int(g.integers(18, 27))
        edu_field = int(g.integers(100, 1000))
        institution = int(g.integers(1, 200))
        biobank = "THL" if g.random() < 0.5 else "BD"
        theta_i = (cfg.pgi_effect_on_theta * pgi if tertiary else 0.0) + cfg.theta_sd * g.normal()
        years_edu = 12.0 + 4.0 * tertiary + cfg.pgi_effect_on_years_edu * pgi + YEARS_EDU_NOISE_SD * g.normal()

        years = np.arange(grad_year, end_year + 1)
        n_obs = len(years)
        u_status = g.random(n_obs)
        u_move = g.random(n_obs)
        u_dest = g.random(n_obs)
        u_partial = g.random(n_obs)
        months_partial = g.integers(1, 12, size=n_obs)

        move_prob = cfg.base_mobility_rate
        if tertiary:
            move_prob = min(1.0, max(0.0, cfg.base_mobility_rate * (1.0 + cfg.pgi_effect_on_mobility * pgi)))

        firm_path = np.full(n_obs, -1, dtype=np.int64)
        current = -1
        for t in range(n_obs):
            if u_status[t] < cfg.nonemployment_rate:
                current = -1
            elif current < 0:
                current = _choose(cum_all, u_dest[t])
            elif u_move[t] < move_prob:
                probs = softmax_all.copy()
                probs[current] = 0.0
                probs /= probs.sum()
                current = _choose(np.cumsum(probs), u_dest[t])
            firm_path[t] = current

        noise_rng = default_rng(noise_seqs[i])
        eps = cfg.noise_sd * noise_rng.normal(size=n_obs)

        age_c = (years - (grad_year - grad_age) - 40.0) / 10.0
        xb = AGE2_COEF * age_c**2 + AGE3_COEF * age_c**3 + YEAR_TREND * (years - START_YEAR)
        horizon = years - grad_year
        inject = cfg.pgi_trajectory_slope * horizon * pgi if tertiary else np.zeros(n_obs)
        systematic = LOG_WAGE_BASE + theta_i + np.where(firm_path >= 0, psi[np.clip(firm_path, 0, None)], np.nan) + xb + inject
        log_monthly = systematic + eps

        employed = firm_path >= 0
        months = np.where(employed, np.where(u_partial < cfg.partial_months_prob, months_partial, 12), 0)
        earnings = np.where(employed, np.exp(np.where(employed, log_monthly, 0.0)) * months, 0.0)

        theta[i] = theta_i
        is_tertiary[i] = tertiary
        pgis[i] = pgi

        rows["person_id"].append(np.full(n_obs, i + 1, dtype=np.int64))
        rows["year"].append(years)
        rows["birth_year"].append(np.full(n_obs, grad_year - grad_age, dtype=np.int64))
        rows["gender"].append(np.full(n_obs, gender, dtype=np.int64))
        rows["firm_id"].append(np.where(employed, firm_path + 1, np.nan))
        rows["annual_earnings"].append(earnings)
        rows["months_worked"].append(months)
        rows["education_level"].append(np.repeat("tertiary" if tertiary else "secondary", n_obs))
        rows["education_field"].append(np.full(n_obs, edu_field, dtype=np.int64))
        rows["institution_id"].append(np.full(n_obs, institution, dtype=np.int64))
        rows["graduation_year"].append(np.full(n_obs, grad_year, dtype=np.int64))
        rows["biobank"].append(np.repeat(biobank, n_obs))
        person_cols["EA_PGI"].append(np.full(n_obs, pgi))
        person_cols["EA_PGI_father"].append(np.full(n_obs, father))
        person_cols["EA_PGI_mother"].append(np.full(n_obs, mother))
        person_cols["years_edu"].append(np.full(n_obs, years_edu))
        for k, name in enumerate(pc_names):
            person_cols[name].append(np.full(n_obs, pcs[k]))
        xb_parts.append(xb)
        systematic_parts.append(systematic)
        noise_parts.append(eps)

    df = pd.DataFrame({name: np.concatenate(chunks) for name, chunks in rows.items()})
    for name, chunks in person_cols.items():
        df[name] = np.concatenate(chunks)
    df["firm_id"] = df["firm_id"].astype("Int64")
    df["education_field"] = df["education_field"].astype("Int64")
    df["institution_id"] = df["institution_id"].astype("Int64")
    df["months_worked"] = df["months_worked"].astype(np.int64)

    panel = make_panel(
        df,
        deflator={int(y): 1.0 for y in range(START_YEAR, end_year + 1)},
        metadata={"simulated": True, "seed": cfg.seed},
    )

    horizon = (panel.df["year"] - panel.df["graduation_year"]).to_numpy()
    max_h = int(horizon.max())
    beta_t = {"EA_PGI": {int(t): cfg.pgi_trajectory_slope * t for t in range(max_h + 1)}}
    truth = GroundTruth(
        theta=pd.Series(theta, index=pd.Index(np.arange(1, cfg.n_workers + 1), name="person_id"), name="theta"),
        psi=pd.Series(psi, index=pd.Index(np.arange(1, cfg.n_firms + 1), name="firm_id"), name="psi"),
        beta_t=beta_t,
        xb=pd.Series(np.concatenate(xb_parts), index=panel.df.index, name="xb"),
        systematic_log_monthly=pd.Series(
            np.concatenate(systematic_parts), index=panel.df.index, name="systematic_log_monthly"
        ),
    )
    return panel, truth


def simulate_diagnoses(cfg: SimConfig, panel: Panel, hazards: Optional[dict] = None) -> pd.DataFrame:
    """First-occurrence diagnosis events for every person in the panel.

    Each Charlson category fires independently per person-year with its
    annual hazard (``hazards`` maps category name -> probability and
    defaults to ``cfg.diagnosis_hazard`` for all categories), tilted by
    exp(diagnosis_pgi_tilt * PGI). Once a category has fired for a person
    it never fires again. The emitted code is an ICD-10 prefix drawn from
    the category's code list.

    Returns a DataFrame with columns person_id, event_year, icd_version,
    code, sorted by (person_id, event_year, code).
    """
    table = default_charlson_table()
    if hazards is None:
        hazards = {name: cfg.diagnosis_hazard for name in table.category_names}
    else:
        unknown = set(hazards) - set(table.category_names)
        if unknown:
            raise ValidationError(f"unknown Charlson categories in hazards: {sorted(unknown)}")

    df = panel.df
    persons = df["person_id"].unique()
    years_of = df.groupby("person_id")["year"].agg(["min", "max"])
    pgi_of = df.groupby("person_id")["EA_PGI"].first() if "EA_PGI" in df.columns else None

    diag_root = SeedSequence((cfg.seed, _DIAG_TAG))
    seqs = diag_root.spawn(len(persons))

    out = {"person_id": [], "event_year": [], "icd_version": [], "code": []}
    cat_names = [n for n in table.category_names if hazards.get(n, 0.0) > 0.0]
    for i, person in enumerate(sorted(persons)):
        if not cat_names:
            break
        g = default_rng(seqs[i])
        y0, y1 = int(years_of.loc[person, "min"]), int(years_of.loc[person, "max"])
        years = np.arange(y0, y1 + 1)
        tilt = 1.0
        if pgi_of is not None and cfg.diagnosis_pgi_tilt != 0.0:
            tilt = math.exp(cfg.diagnosis_pgi_tilt * float(pgi_of.loc[person]))
        for name in cat_names:
            p = min(1.0, hazards[name] * tilt)
            if p <= 0.0:
                continue
            u = g.random(len(years))
            hit = np.nonzero(u < p)[0]
            if len(hit) == 0:
                continue
            prefixes = table.categories[name].icd10
            code = prefixes[int(g.integers(0, len(prefixes)))]
            out["person_id"].append(int(person))
            out["event_year"].append(int(years[hit[0]]))
            out["icd_version"].append(10)
            out["code"].append(code)

    events = pd.DataFrame(out, columns=["person_id", "event_year", "icd_version", "code"])
    return events.sort_values(["person_id", "event_year", "code"], kind="mergesort").reset_index(drop=True)
