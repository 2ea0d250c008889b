"""
Decomposition of mean log-earnings growth between consecutive horizons.

Between horizons t-1 and t, every person employed at either end belongs to
exactly one of four groups: stayers (same main employer at both ends),
movers (employed at both ends, different employer), entrants (employed at
t only), and exiters (employed at t-1 only). Writing E for the employed
sets, C for the continuers (stayers plus movers), n_t = |entrants|/|E_t|
and x_{t-1} = |exiters|/|E_{t-1}|, the change in mean log earnings
decomposes exactly as

    mean(y_t | E_t) - mean(y_{t-1} | E_{t-1})
        = s_S * mean(dy | stayers) + s_M * mean(dy | movers)
        + n_t * (mean(y_t | entrants) - mean(y_t | C))
        - x_{t-1} * (mean(y_{t-1} | exiters) - mean(y_{t-1} | C)),

with s_S, s_M the stayer and mover shares among continuers. Entrants earn
less than continuers, so their term is typically negative; exiters also
earn less, and removing them pushes the mean up, so their term is
typically positive. Contributions are cumulated over horizons per group
of a person-level partition (for example bottom versus top decile of an
index).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd
from numpy.random import SeedSequence, default_rng

from .errors import ValidationError
from .panel import HORIZON_CAP, Panel

COMPONENTS = ("stayer", "mover", "entrant", "exiter")


@dataclass
class GrowthDecomposition:
    """Per-horizon contributions and shares for one group."""

    group: object
    horizons: np.ndarray           # t = 1..H
    delta: np.ndarray              # change in mean log earnings at each t
    contributions: dict            # component -> per-horizon contribution
    cumulative: dict               # component -> running sum
    shares: dict                   # component -> share of the relevant base
    employment_shares: dict        # component -> share of persons at t among E_t or E_{t-1}
    defined: np.ndarray            # False where a horizon had an empty base

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for comp in COMPONENTS:
            for i, t in enumerate(self.horizons):
                rows.append(
                    {
                        "group": self.group,
                        "horizon": int(t),
                        "component": comp,
                        "contribution": self.contributions[comp][i],
                        "cumulative": self.cumulative[comp][i],
                        "share": self.shares[comp][i],
                        "delta_total": self.delta[i],
                        "defined": bool(self.defined[i]),
                    }
                )
        return pd.DataFrame(rows)


def _log_earnings_matrix(panel: Panel, horizons: Sequence[int]):
    """(persons x horizons 0..H) log annual earnings, NaN when not employed."""
    df = panel.df
    h_max = max(horizons)
    h = (df["year"] - df["graduation_year"]).to_numpy(np.int64)
    ok = (h >= 0) & (h <= h_max)
    sub = df[ok]
    h = h[ok]
    persons, p_idx = np.unique(sub["person_id"].to_numpy(np.int64), return_inverse=True)

    earn = sub["annual_earnings"].to_numpy(float)
    employed = sub["firm_id"].notna().to_numpy() & (earn > 0)

    y = np.full((len(persons), h_max + 1), np.nan)
    firm = np.full((len(persons), h_max + 1), -1, dtype=np.int64)
    rows_emp = employed
    y[p_idx[rows_emp], h[rows_emp]] = np.log(earn[rows_emp])
    firm[p_idx[rows_emp], h[rows_emp]] = sub["firm_id"].to_numpy(float)[rows_emp].astype(np.int64)
    return persons, y, firm


def _decompose_matrices(y: np.ndarray, firm: np.ndarray, horizons: np.ndarray, group):
    emp = ~np.isnan(y)
    n_t = emp.sum(axis=0).astype(float)

    delta = np.full(len(horizons), np.nan)
    contributions = {c: np.full(len(horizons), np.nan) for c in COMPONENTS}
    shares = {c: np.full(len(horizons), np.nan) for c in COMPONENTS}
    employment_shares = {c: np.full(len(horizons), np.nan) for c in COMPONENTS}
    defined = np.zeros(len(horizons), dtype=bool)

    for i, t in enumerate(horizons):
        e_now, e_prev = emp[:, t], emp[:, t - 1]
        cont = e_now & e_prev
        if n_t[t] == 0 or n_t[t - 1] == 0 or not cont.any():
            continue
        stay = cont & (firm[:, t] == firm[:, t - 1])
        move = cont & ~stay
        entrant = e_now & ~e_prev
        exiter = e_prev & ~e_now

        n_cont = float(cont.sum())
        s_stay = stay.sum() / n_cont
        s_move = move.sum() / n_cont
        frac_in = entrant.sum() / n_t[t]
        frac_out = exiter.sum() / n_t[t - 1]

        d_stay = float(np.mean(y[stay, t] - y[stay, t - 1])) if stay.any() else 0.0
        d_move = float(np.mean(y[move, t] - y[move, t - 1])) if move.any() else 0.0
        cont_now = float(np.mean(y[cont, t]))
        cont_prev = float(np.mean(y[cont, t - 1]))

        c_stay = s_stay * d_stay
        c_move = s_move * d_move
        c_in = frac_in * (float(np.mean(y[entrant, t])) - cont_now) if entrant.any() else 0.0
        c_out = -frac_out * (float(np.mean(y[exiter, t - 1])) - cont_prev) if exiter.any() else 0.0

        delta[i] = float(np.mean(y[e_now, t]) - np.mean(y[e_prev, t - 1]))
        contributions["stayer"][i] = c_stay
        contributions["mover"][i] = c_move
        contributions["entrant"][i] = c_in
        contributions["exiter"][i] = c_out
        shares["stayer"][i] = s_stay
        shares["mover"][i] = s_move
        shares["entrant"][i] = frac_in
        shares["exiter"][i] = frac_out
        employment_shares["stayer"][i] = stay.sum() / n_t[t]
        employment_shares["mover"][i] = move.sum() / n_t[t]
        employment_shares["entrant"][i] = frac_in
        employment_shares["exiter"][i] = exiter.sum() / n_t[t - 1]
        defined[i] = True

    cumulative = {}
    for comp in COMPONENTS:
        filled = np.where(np.isnan(contributions[comp]), 0.0, contributions[comp])
        cumulative[comp] = np.cumsum(filled)
    return GrowthDecomposition(
        group=group,
        horizons=horizons.copy(),
        delta=delta,
        contributions=contributions,
        cumulative=cumulative,
        shares=shares,
        employment_shares=employment_shares,
        defined=defined,
    )


def decompose_growth(
    panel: Panel,
    group_assignment: Mapping,
    horizons: Sequence[int] = tuple(range(1, HORIZON_CAP + 1)),
) -> dict:
    """Four-way growth decomposition per group.

    Arguments:
        panel: trajectory-filtered panel (employment read off firm_id and
            positive earnings; log annual earnings is the outcome).
        group_assignment: mapping or Series person_id -> group label;
            persons without a label are excluded.
        horizons: the t values to decompose (each compares t-1 to t).

    Returns:
        dict group label -> GrowthDecomposition. Horizons whose employed
        set is empty at either end are flagged undefined (NaN).
    """
    horizons = np.asarray(sorted(horizons), dtype=int)
    if horizons[0] < 1:
        raise ValidationError("decomposition horizons start at 1")
    if isinstance(group_assignment, pd.Series):
        group_assignment = group_assignment.to_dict()

    persons, y, firm = _log_earnings_matrix(panel, horizons)
    labels = np.array([group_assignment.get(int(p)) for p in persons], dtype=object)
    out = {}
    for group in sorted({g for g in labels if g is not None}, key=str):
        sel = labels == group
        out[group] = _decompose_matrices(y[sel], firm[sel], horizons, group)
    return out


def decile_groups(panel: Panel, index: str = "EA_PGI", deciles: Sequence[int] = (1, 10)) -> pd.Series:
    """Assign persons in the requested index deciles to group labels.

    Deciles are 1..10 over the person-level index distribution; persons
    outside the requested deciles get no label.
    """
    first = panel.df.groupby("person_id")[index].first()
    edges = np.quantile(first.to_numpy(float), np.linspace(0, 1, 11))
    edges[0], edges[-1] = -np.inf, np.inf
    which = np.digitize(first.to_numpy(float), edges[1:-1], right=True) + 1
    labels = pd.Series(which, index=first.index, name="decile")
    return labels[labels.isin(list(deciles))].map(lambda d: f"decile{d}")


@dataclass
class DecompositionBands:
    """Percentile confidence bands for cumulative contributions."""

    group: object
    horizons: np.ndarray
    lo: dict                 # component -> lower band per horizon
    hi: dict
    n_reps: int
    replicates: Optional[dict] = None   # component -> (n_reps x H) array


def bootstrap_decomposition(
    panel: Panel,
    group_assignment: Mapping,
    horizons: Sequence[int] = tuple(range(1, HORIZON_CAP + 1)),
    n_reps: int = 500,
    seed: int = 0,
    alpha: float = 0.05,
    keep_replicates: bool = False,
) -> dict:
    """Percentile bands for cumulative contributions by person bootstrap.

    Whole person histories are resampled with replacement from the pooled
    panel (labels travel with the person), the cumulative contributions
    are recomputed per replicate, and the 2.5/97.5 percentile band is
    reported per group, component and horizon. Deterministic given the
    seed; replicate r uses the r-th spawned child of SeedSequence(seed).
    """
    if n_reps < 2:
        raise ValidationError("need at least 2 bootstrap replicates")
    horizons = np.asarray(sorted(horizons), dtype=int)
    if isinstance(group_assignment, pd.Series):
        group_assignment = group_assignment.to_dict()

    persons, y, firm = _log_earnings_matrix(panel, horizons)
    labels = np.array([group_assignment.get(int(p)) for p in persons], dtype=object)
    labelled = labels != None  # noqa: E711  (object-array comparison)
    y, firm, labels = y[labelled], firm[labelled], labels[labelled]
    groups = sorted(set(labels), key=str)
    n = len(y)
    if n == 0:
        raise ValidationError("no labelled persons to resample")

    seeds = SeedSequence(seed).spawn(n_reps)
    acc = {g: {c: np.empty((n_reps, len(horizons))) for c in COMPONENTS} for g in groups}
    for r in range(n_reps):
        rng = default_rng(seeds[r])
        draw = rng.integers(0, n, n)
        lab = labels[draw]
        for g in groups:
            sel = draw[lab == g]
            dec = _decompose_matrices(y[sel], firm[sel], horizons, g)
            for c in COMPONENTS:
                acc[g][c][r] = dec.cumulative[c]

    out = {}
    for g in groups:
        lo = {c: np.nanpercentile(acc[g][c], 100 * alpha / 2, axis=0) for c in COMPONENTS}
        hi = {c: np.nanpercentile(acc[g][c], 100 * (1 - alpha / 2), axis=0) for c in COMPONENTS}
        out[g] = DecompositionBands(
            group=g,
            horizons=horizons.copy(),
            lo=lo,
            hi=hi,
            n_reps=n_reps,
            replicates={c: acc[g][c] for c in COMPONENTS} if keep_replicates else None,
        )
    return out
