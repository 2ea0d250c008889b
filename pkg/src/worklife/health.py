"""
Charlson Comorbidity Index from first-occurrence diagnosis records.

The 17 condition categories, their weights, their ICD-9 and ICD-10 code
prefixes, and the hierarchy (a milder category is ignored when its severe
counterpart is present) are loaded from a reference CSV shipped with the
package (Quan's 2005 mapping by default). The table is data, not logic:
pass a different file to score with modified weights or code lists.

Codes are normalized by uppercasing and removing dots before matching, and
a record maps to at most one category, the one with the longest matching
prefix for the record's ICD version; prefix-length ties resolve to the
category listed first in the table.
"""
from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from typing import Iterable, Mapping, Optional

import numpy as np
import pandas as pd

from .errors import ValidationError

DEFAULT_TABLE_RESOURCE = "charlson_quan2005.csv"
CUTOFF_AGES = tuple(range(19, 51))


@dataclass(frozen=True)
class CharlsonCategory:
    name: str
    weight: int
    icd9: tuple
    icd10: tuple
    supersedes: Optional[str] = None


@dataclass(frozen=True)
class DiagnosisRecord:
    person_id: int
    event_year: int
    icd_version: int
    code: str


class CharlsonTable:
    """Validated weight/prefix table with longest-prefix lookup."""

    def __init__(self, categories: Iterable[CharlsonCategory]):
        self.categories = {}
        for cat in categories:
            if cat.name in self.categories:
                raise ValidationError(f"duplicate Charlson category '{cat.name}'")
            if cat.weight <= 0:
                raise ValidationError(f"category '{cat.name}' must have positive weight")
            if not cat.icd9 or not cat.icd10:
                raise ValidationError(f"category '{cat.name}' has an empty prefix list")
            self.categories[cat.name] = cat
        self.category_names = tuple(self.categories)
        self._order = {name: k for k, name in enumerate(self.category_names)}
        for cat in self.categories.values():
            if cat.supersedes is not None and cat.supersedes not in self.categories:
                raise ValidationError(
                    f"category '{cat.name}' supersedes unknown category '{cat.supersedes}'"
                )
        self._check_acyclic()
        # prefix -> (category, order) per ICD version, longest prefix wins.
        self._by_version = {9: {}, 10: {}}
        for name, cat in self.categories.items():
            for version, prefixes in ((9, cat.icd9), (10, cat.icd10)):
                for p in prefixes:
                    key = normalize_code(p)
                    existing = self._by_version[version].get(key)
                    if existing is None or self._order[name] < self._order[existing]:
                        self._by_version[version][key] = name

    def _check_acyclic(self):
        for start in self.categories:
            seen = set()
            node = start
            while node is not None:
                if node in seen:
                    raise ValidationError(f"hierarchy cycle involving '{start}'")
                seen.add(node)
                node = self.categories[node].supersedes

    def match(self, code: str, icd_version: int) -> Optional[str]:
        """Category of a code, or None when it is not a Charlson condition."""
        if icd_version not in (9, 10):
            raise ValidationError(f"icd_version must be 9 or 10, got {icd_version}")
        norm = normalize_code(code)
        table = self._by_version[icd_version]
        for length in range(len(norm), 0, -1):
            hit = table.get(norm[:length])
            if hit is not None:
                return hit
        return None

    def weight(self, name: str) -> int:
        return self.categories[name].weight


def normalize_code(code: str) -> str:
    return str(code).replace(".", "").strip().upper()


def load_charlson_table(path) -> CharlsonTable:
    """Load a table from CSV with ';'-separated prefix lists."""
    df = pd.read_csv(path, dtype=str, keep_default_na=False)
    required = ["category", "weight", "icd9_prefixes", "icd10_prefixes", "supersedes"]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise ValidationError(f"Charlson table {path} is missing columns: {missing}")
    cats = []
    for row in df.itertuples(index=False):
        cats.append(
            CharlsonCategory(
                name=row.category.strip(),
                weight=int(row.weight),
                icd9=tuple(p for p in row.icd9_prefixes.split(";") if p),
                icd10=tuple(p for p in row.icd10_prefixes.split(";") if p),
                supersedes=row.supersedes.strip() or None,
            )
        )
    return CharlsonTable(cats)


_DEFAULT_TABLE = None


def default_charlson_table() -> CharlsonTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        with resources.as_file(resources.files("worklife.data") / DEFAULT_TABLE_RESOURCE) as p:
            _DEFAULT_TABLE = load_charlson_table(p)
    return _DEFAULT_TABLE


@dataclass(frozen=True)
class CciSeries:
    """Cumulative scores of one person at successive age cutoffs."""

    person_id: int
    scores: dict  # cutoff age -> score


def _apply_hierarchy(names: set, table: CharlsonTable) -> set:
    dropped = set()
    for name in names:
        target = table.categories[name].supersedes
        if target is not None and target in names:
            dropped.add(target)
    return names - dropped


def cci_at_cutoff(records, birth_year: int, cutoff_age: int, table: Optional[CharlsonTable] = None) -> int:
    """Score one person's records using events up to ``cutoff_age``.

    ``records`` is an iterable of DiagnosisRecord (or (event_year,
    icd_version, code) tuples). Unmatchable codes are ignored; the count of
    ignored records is available through cci_at_cutoff_detailed.
    """
    score, _ = cci_at_cutoff_detailed(records, birth_year, cutoff_age, table)
    return score


def cci_at_cutoff_detailed(records, birth_year, cutoff_age, table=None):
    table = table or default_charlson_table()
    present = set()
    unmatched = 0
    for rec in records:
        if isinstance(rec, tuple):
            rec = DiagnosisRecord(0, *rec)
        if rec.event_year - birth_year > cutoff_age:
            continue
        name = table.match(rec.code, rec.icd_version)
        if name is None:
            unmatched += 1
        else:
            present.add(name)
    counted = _apply_hierarchy(present, table)
    return sum(table.weight(n) for n in counted), unmatched


def cci_series(
    diagnoses: pd.DataFrame,
    birth_years: Mapping,
    table: Optional[CharlsonTable] = None,
    cutoffs: Iterable[int] = CUTOFF_AGES,
) -> pd.DataFrame:
    """Cumulative CCI for every person at each age cutoff.

    Arguments:
        diagnoses: DataFrame with columns person_id, event_year,
            icd_version, code (may be empty).
        birth_years: mapping or Series person_id -> birth year; every person
            in it gets a row per cutoff even with no diagnoses.
        table: CharlsonTable (default: the shipped Quan 2005 table).
        cutoffs: age cutoffs, default 19..50.

    Returns:
        long DataFrame (person_id, cutoff_age, score), nondecreasing in
        cutoff_age within person.
    """
    table = table or default_charlson_table()
    cutoffs = sorted(int(c) for c in cutoffs)
    if isinstance(birth_years, pd.Series):
        birth_years = birth_years.to_dict()

    # First age at which each category is present, per person.
    first_age: dict = {}
    for rec in diagnoses.itertuples(index=False):
        person = int(rec.person_id)
        if person not in birth_years:
            continue
        name = table.match(rec.code, int(rec.icd_version))
        if name is None:
            continue
        age = int(rec.event_year) - int(birth_years[person])
        ages = first_age.setdefault(person, {})
        if name not in ages or age < ages[name]:
            ages[name] = age

    rows = {"person_id": [], "cutoff_age": [], "score": []}
    for person in sorted(birth_years):
        ages = first_age.get(int(person), {})
        for cutoff in cutoffs:
            present = {n for n, a in ages.items() if a <= cutoff}
            counted = _apply_hierarchy(present, table)
            rows["person_id"].append(int(person))
            rows["cutoff_age"].append(cutoff)
            rows["score"].append(sum(table.weight(n) for n in counted))
    return pd.DataFrame(rows)


def attach_cci_outcome(panel_df: pd.DataFrame, series: pd.DataFrame, column: str = "cci") -> pd.DataFrame:
    """Merge the cumulative score at each row's attained age onto a panel.

    Ages outside the cutoff grid clamp to its ends, so a 17-year-old row
    gets the score at the lowest cutoff and a 60-year-old row the score at
    the highest.
    """
    lo, hi = series["cutoff_age"].min(), series["cutoff_age"].max()
    out = panel_df.copy()
    age = (out["year"] - out["birth_year"]).clip(lo, hi)
    key = pd.MultiIndex.from_arrays([out["person_id"], age])
    lookup = series.set_index(["person_id", "cutoff_age"])["score"]
    out[column] = lookup.reindex(key).to_numpy(dtype=float)
    return out
