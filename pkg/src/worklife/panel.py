"""
Canonical panel data model for matched employer-employee records.

A Panel wraps one pandas DataFrame with one row per (person, year), already
restricted to the main employer for that year. Nonemployment years are kept
as rows with a missing firm_id, zero months worked, and (usually) zero
earnings. Earnings are deflated to the base year at load time, so
``annual_earnings`` is always in real units downstream.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Iterator, Optional

import numpy as np
import pandas as pd

from .errors import PanelFormatError, ValidationError

#: Columns every panel carries, in canonical order. Any further numeric
#: columns (EA_PGI, PC1..PC10, parental indices, ...) ride along as index
#: columns. ``weight`` is optional in input files and defaults to 1.
CORE_COLUMNS = (
    "person_id",
    "year",
    "birth_year",
    "gender",
    "firm_id",
    "annual_earnings",
    "months_worked",
    "education_level",
    "education_field",
    "institution_id",
    "graduation_year",
    "biobank",
)

EDUCATION_LEVELS = ("secondary", "tertiary")

#: Trajectory analyses never look further than this many years past graduation.
HORIZON_CAP = 25


@dataclass(frozen=True)
class PersonYearRecord:
    """One worker-year observation (main employer already selected)."""

    person_id: int
    year: int
    birth_year: int
    gender: int
    firm_id: Optional[int]
    annual_earnings: float
    months_worked: int
    education_level: str
    graduation_year: int
    education_field: Optional[int] = None
    institution_id: Optional[int] = None
    biobank: str = ""
    weight: float = 1.0
    index_values: dict = field(default_factory=dict)


@dataclass(frozen=True)
class EmploymentSpell:
    """A single job spell inside one calendar year."""

    firm_id: int
    earnings: float
    ongoing_at_year_end: bool = True


@dataclass(frozen=True)
class FilterSpec:
    """Thresholds for the estimation-sample and trajectory-sample filters.

    Defaults follow the baseline sample definition: ages 20-60, monthly
    earnings at least half the within-panel median for the year, firms with
    at least 5 retained employees, at least 4 months worked, and secondary
    graduates required to be observed past age 30.
    """

    min_age: int = 20
    max_age: int = 60
    min_earnings_fraction_of_median: float = 0.5
    min_firm_size: int = 5
    min_months: int = 4
    require_followup_past_age: Optional[int] = 30

    def __post_init__(self):
        if min(self.min_age, self.max_age, self.min_firm_size, self.min_months) < 0:
            raise ValidationError("filter thresholds must be nonnegative")
        if self.min_earnings_fraction_of_median < 0:
            raise ValidationError("earnings fraction must be nonnegative")


@dataclass(frozen=True)
class Panel:
    """Immutable container for a validated person-year panel.

    Attributes:
        df (DataFrame): rows sorted by (person_id, year), columns
            CORE_COLUMNS + 'weight' + index columns; earnings in real units.
        deflator (dict): year -> deflator used at load time.
        index_columns (tuple): names of the extra numeric columns.
        metadata (dict): provenance notes and filter reports.
    """

    df: pd.DataFrame
    deflator: dict
    index_columns: tuple
    metadata: dict = field(default_factory=dict)

    @property
    def n_obs(self) -> int:
        return len(self.df)

    @property
    def n_persons(self) -> int:
        return self.df["person_id"].nunique()

    @property
    def n_firms(self) -> int:
        return int(self.df["firm_id"].dropna().nunique())

    @property
    def years(self) -> np.ndarray:
        return np.sort(self.df["year"].unique())

    def with_df(self, df: pd.DataFrame, **meta) -> "Panel":
        """Return a new Panel around ``df``, keeping deflator and indices."""
        md = dict(self.metadata)
        md.update(meta)
        return replace(self, df=df.reset_index(drop=True), metadata=md)

    def records(self) -> Iterator[PersonYearRecord]:
        """Iterate rows as PersonYearRecord objects (mainly for inspection)."""
        for row in self.df.itertuples(index=False):
            yield PersonYearRecord(
                person_id=int(row.person_id),
                year=int(row.year),
                birth_year=int(row.birth_year),
                gender=int(row.gender),
                firm_id=None if pd.isna(row.firm_id) else int(row.firm_id),
                annual_earnings=float(row.annual_earnings),
                months_worked=int(row.months_worked),
                education_level=row.education_level,
                graduation_year=int(row.graduation_year),
                education_field=None if pd.isna(row.education_field) else int(row.education_field),
                institution_id=None if pd.isna(row.institution_id) else int(row.institution_id),
                biobank=row.biobank,
                weight=float(row.weight),
                index_values={c: float(getattr(row, c)) for c in self.index_columns},
            )


def monthly_earnings(rec: PersonYearRecord) -> Optional[float]:
    """Annual earnings divided by months worked; None when months is zero."""
    if rec.months_worked <= 0:
        return None
    return rec.annual_earnings / rec.months_worked


def monthly_earnings_series(df: pd.DataFrame) -> pd.Series:
    """Vectorized monthly earnings; NaN where months_worked is zero."""
    months = df["months_worked"].to_numpy(dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(months > 0, df["annual_earnings"].to_numpy(dtype=float) / months, np.nan)
    return pd.Series(out, index=df.index)


def log_monthly_earnings(df: pd.DataFrame) -> pd.Series:
    """log of monthly earnings; NaN where undefined or nonpositive."""
    m = monthly_earnings_series(df)
    with np.errstate(divide="ignore", invalid="ignore"):
        return pd.Series(np.where(m > 0, np.log(m), np.nan), index=df.index)


def ages(df: pd.DataFrame) -> pd.Series:
    return df["year"] - df["birth_year"]


def horizons(df: pd.DataFrame) -> pd.Series:
    """Years since graduation (0 = graduation year)."""
    return df["year"] - df["graduation_year"]


def select_main_employer(spells: Iterable[EmploymentSpell]) -> Optional[int]:
    """Pick the main employer for one person-year.

    The main employer is the highest-paying job still ongoing at year-end;
    earnings ties break toward the smallest firm_id so the choice is
    deterministic. Returns None when no spell qualifies (nonemployed year).
    """
    best = None
    for spell in spells:
        if isinstance(spell, tuple):
            spell = EmploymentSpell(*spell)
        if not spell.ongoing_at_year_end:
            continue
        key = (-spell.earnings, spell.firm_id)
        if best is None or key < best[0]:
            best = (key, spell.firm_id)
    return None if best is None else best[1]


# ---------------------------------------------------------------------------
# Loading and validation
# ---------------------------------------------------------------------------

def _parse_column(raw: pd.Series, name: str, kind: str, required: bool, bad: dict):
    """Convert a string column, recording unparseable/missing rows in ``bad``."""
    stripped = raw.str.strip()
    empty = stripped == ""
    converted = pd.to_numeric(stripped.where(~empty), errors="coerce")
    invalid = converted.isna() & ~empty
    if required:
        invalid |= empty
    for idx in raw.index[invalid]:
        bad.setdefault(idx, []).append(name)
    if kind == "int":
        return converted.astype("Int64")
    return converted.astype(float)


def _load_deflator(path) -> dict:
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise PanelFormatError(f"deflator file not found: {path}")
    for col in ("year", "deflator"):
        if col not in raw.columns:
            raise PanelFormatError(f"deflator file {path} is missing column '{col}'")
    years = pd.to_numeric(raw["year"], errors="coerce")
    values = pd.to_numeric(raw["deflator"], errors="coerce")
    bad = raw.index[years.isna() | values.isna()]
    if len(bad):
        rows = ", ".join(str(i + 2) for i in bad[:10])
        raise PanelFormatError(f"deflator file {path}: non-numeric rows {rows}")
    if (values <= 0).any():
        raise PanelFormatError(f"deflator file {path}: deflators must be positive")
    table = dict(zip(years.astype(int), values.astype(float)))
    missing = sorted(set(range(min(table), max(table) + 1)) - set(table))
    if missing:
        raise PanelFormatError(
            f"deflator file {path}: year gap, missing {missing[:10]}"
        )
    return table


def load_panel(path, deflator_path) -> Panel:
    """Load and validate a panel CSV, deflating earnings to the base year.

    Arguments:
        path: panel CSV with header ``person_id,year,...,biobank,<index cols>``
            (see CORE_COLUMNS); empty string means missing.
        deflator_path: CSV with header ``year,deflator``; must cover every
            year present in the panel with no gaps.

    Returns:
        Panel with rows sorted by (person_id, year) and real earnings
        (nominal divided by the deflator of the row's year).

    Raises:
        PanelFormatError: missing columns, non-numeric fields, duplicate
            (person_id, year) pairs, or deflator gaps, each reported with
            the offending location.
    """
    deflator = _load_deflator(deflator_path)
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    except FileNotFoundError:
        raise PanelFormatError(f"panel file not found: {path}")

    missing_cols = [c for c in CORE_COLUMNS if c not in raw.columns]
    if missing_cols:
        raise PanelFormatError(f"panel file {path} is missing columns: {missing_cols}")

    bad: dict = {}
    df = pd.DataFrame(index=raw.index)
    int_required = ("person_id", "year", "birth_year", "gender", "months_worked", "graduation_year")
    for col in int_required:
        df[col] = _parse_column(raw[col], col, "int", required=True, bad=bad)
    for col in ("firm_id", "education_field", "institution_id"):
        df[col] = _parse_column(raw[col], col, "int", required=False, bad=bad)
    df["annual_earnings"] = _parse_column(raw["annual_earnings"], "annual_earnings", "float", required=True, bad=bad)

    level = raw["education_level"].str.strip()
    bad_level = ~level.isin(EDUCATION_LEVELS)
    for idx in raw.index[bad_level]:
        bad.setdefault(idx, []).append("education_level")
    df["education_level"] = level
    df["biobank"] = raw["biobank"].str.strip()

    index_columns = [c for c in raw.columns if c not in CORE_COLUMNS and c != "weight"]
    for col in index_columns:
        df[col] = _parse_column(raw[col], col, "float", required=False, bad=bad)
    if "weight" in raw.columns:
        weight = _parse_column(raw["weight"], "weight", "float", required=False, bad=bad)
        df["weight"] = weight.fillna(1.0)
    else:
        df["weight"] = 1.0

    if bad:
        items = sorted(bad.items())[:10]
        detail = "; ".join(f"row {i + 2}: {', '.join(cols)}" for i, cols in items)
        raise PanelFormatError(f"panel file {path}: invalid fields ({detail})")

    dup = df.duplicated(subset=["person_id", "year"], keep=False)
    if dup.any():
        groups = df[dup].groupby(["person_id", "year"]).indices
        first = next(iter(sorted(groups.items())))
        rows = ", ".join(str(i + 2) for i in first[1])
        raise PanelFormatError(
            f"panel file {path}: duplicate (person_id, year) {first[0]} at rows {rows}"
        )

    # Structural invariants: employment status, earnings sign.
    employed = df["firm_id"].notna()
    months = df["months_worked"].astype(int)
    problems = []
    zero_mismatch = (months == 0) != ~employed
    if zero_mismatch.any():
        problems.append(f"months_worked=0 must coincide with missing firm_id (rows {[i + 2 for i in df.index[zero_mismatch][:5]]})")
    if (df["annual_earnings"] < 0).any():
        problems.append("annual_earnings must be nonnegative")
    if problems:
        raise PanelFormatError(f"panel file {path}: " + "; ".join(problems))

    panel_years = set(df["year"].astype(int))
    uncovered = sorted(panel_years - set(deflator))
    if uncovered:
        raise PanelFormatError(
            f"deflator file {deflator_path}: panel years not covered: {uncovered[:10]}"
        )

    df["annual_earnings"] = df["annual_earnings"] / df["year"].map(deflator).astype(float)

    ordered = list(CORE_COLUMNS) + ["weight"] + index_columns
    df = df[ordered].sort_values(["person_id", "year"], kind="mergesort").reset_index(drop=True)
    for col in ("person_id", "year", "birth_year", "gender", "months_worked", "graduation_year"):
        df[col] = df[col].astype(np.int64)
    return Panel(
        df=df,
        deflator=deflator,
        index_columns=tuple(index_columns),
        metadata={"source": str(path)},
    )


def make_panel(df: pd.DataFrame, deflator=None, index_columns=None, metadata=None) -> Panel:
    """Build a Panel from an in-memory frame already in real units.

    Performs the same structural validation as load_panel but no deflation;
    intended for the simulator and for tests.
    """
    df = df.copy()
    if "weight" not in df.columns:
        df["weight"] = 1.0
    missing = [c for c in CORE_COLUMNS if c not in df.columns]
    if missing:
        raise PanelFormatError(f"panel frame is missing columns: {missing}")
    if index_columns is None:
        index_columns = tuple(c for c in df.columns if c not in CORE_COLUMNS and c != "weight")
    dup = df.duplicated(subset=["person_id", "year"])
    if dup.any():
        pairs = df.loc[dup, ["person_id", "year"]].iloc[0].tolist()
        raise PanelFormatError(f"duplicate (person_id, year): {tuple(pairs)}")
    employed = df["firm_id"].notna()
    if ((df["months_worked"] == 0) != ~employed).any():
        raise PanelFormatError("months_worked=0 must coincide with missing firm_id")
    if (df["annual_earnings"] < 0).any():
        raise PanelFormatError("annual_earnings must be nonnegative")
    deflator = dict(deflator) if deflator else {int(y): 1.0 for y in df["year"].unique()}
    uncovered = sorted(set(df["year"].astype(int)) - set(deflator))
    if uncovered:
        raise PanelFormatError(f"deflator does not cover panel years: {uncovered[:10]}")
    ordered = list(CORE_COLUMNS) + ["weight"] + list(index_columns)
    df = df[ordered].sort_values(["person_id", "year"], kind="mergesort").reset_index(drop=True)
    return Panel(df=df, deflator=deflator, index_columns=tuple(index_columns), metadata=dict(metadata or {}))


# ---------------------------------------------------------------------------
# Sample filters
# ---------------------------------------------------------------------------

def yearly_median_monthly_earnings(panel: Panel) -> dict:
    """Median monthly earnings per year over employed rows of this panel."""
    df = panel.df
    m = monthly_earnings_series(df)
    ok = m.notna()
    med = m[ok].groupby(df.loc[ok, "year"]).median()
    return {int(y): float(v) for y, v in med.items()}


def apply_akm_filters(panel: Panel, spec: FilterSpec, yearly_median: Optional[dict] = None) -> Panel:
    """Restrict a panel to the wage-regression estimation sample.

    Keeps person-years with age in [min_age, max_age], months worked at
    least min_months, and monthly earnings at or above
    ``min_earnings_fraction_of_median`` times the within-panel median
    monthly earnings of that year. The per-year median is computed once on
    the input panel (pass ``yearly_median`` to pin it explicitly, which
    makes the filter idempotent). Firm size is then evaluated in a single
    pass on the surviving rows: firm-years with fewer than min_firm_size
    retained workers are dropped, with no further iteration.
    """
    df = panel.df
    if yearly_median is None:
        yearly_median = yearly_median_monthly_earnings(panel)

    age = ages(df)
    m = monthly_earnings_series(df)
    floor = df["year"].map(yearly_median).astype(float) * spec.min_earnings_fraction_of_median
    keep = (
        (age >= spec.min_age)
        & (age <= spec.max_age)
        & (df["months_worked"] >= spec.min_months)
        & (m.notna())
        & (m >= floor)
    )
    kept = df[keep]
    size = kept.groupby(["firm_id", "year"])["person_id"].transform("nunique")
    kept = kept[size >= spec.min_firm_size]
    if kept.empty:
        import warnings

        warnings.warn("apply_akm_filters produced an empty panel", stacklevel=2)
    return panel.with_df(
        kept,
        akm_filter={
            "yearly_median": yearly_median,
            "spec": spec,
            "n_in": len(df),
            "n_out": len(kept),
        },
    )


def apply_trajectory_filters(panel: Panel, spec: FilterSpec, horizon_cap: int = HORIZON_CAP) -> Panel:
    """Restrict a panel to the trajectory analysis sample.

    Keeps every person-year from the graduation year up to ``horizon_cap``
    years later, including zero-income nonemployment years. Secondary
    graduates not observed past ``require_followup_past_age`` are dropped
    entirely (their education phase may be incomplete); the rule never
    applies to tertiary graduates.
    """
    df = panel.df
    if spec.require_followup_past_age is not None:
        last_age = (df["year"] - df["birth_year"]).groupby(df["person_id"]).transform("max")
        immature = (df["education_level"] == "secondary") & (last_age <= spec.require_followup_past_age)
        df = df[~immature]
    h = horizons(df)
    df = df[(h >= 0) & (h <= horizon_cap)]
    return panel.with_df(df, trajectory_filter={"horizon_cap": horizon_cap, "spec": spec})
