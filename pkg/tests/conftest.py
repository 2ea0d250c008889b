import numpy as np
import pandas as pd
import pytest

import worklife as wl


def panel_row(
    person_id,
    year,
    firm_id=1,
    log_monthly=None,
    annual_earnings=None,
    months_worked=12,
    birth_year=1970,
    gender=0,
    education_level="tertiary",
    graduation_year=2000,
    biobank="THL",
    **extra,
):
    """One panel row; pass log_monthly to set earnings = exp(y) * months."""
    employed = firm_id is not None
    if not employed:
        months_worked = 0
        annual_earnings = 0.0
    elif annual_earnings is None:
        annual_earnings = float(np.exp(log_monthly) * months_worked)
    row = dict(
        person_id=person_id,
        year=year,
        birth_year=birth_year,
        gender=gender,
        firm_id=firm_id if employed else np.nan,
        annual_earnings=annual_earnings,
        months_worked=months_worked,
        education_level=education_level,
        education_field=100,
        institution_id=1,
        graduation_year=graduation_year,
        biobank=biobank,
    )
    row.update(extra)
    return row


def build_panel(rows):
    return wl.make_panel(pd.DataFrame(rows))


@pytest.fixture(scope="session")
def hand_akm_panel():
    """Two workers, two firms, solvable by hand from the normal equations."""
    rows = [
        panel_row(1, 2000, firm_id=1, log_monthly=1.0),
        panel_row(1, 2001, firm_id=2, log_monthly=2.0),
        panel_row(2, 2000, firm_id=2, log_monthly=1.5),
        panel_row(2, 2001, firm_id=2, log_monthly=1.5),
    ]
    return build_panel(rows)


@pytest.fixture(scope="session")
def mobility_hand_panel():
    """Stayer 1.0->1.2, mover 1.0->1.5, exiter from 0.5, entrant at 0.6."""
    rows = []
    for pid, pattern in enumerate(
        [((10, 1.0), (10, 1.2)), ((11, 1.0), (12, 1.5)), ((13, 0.5), None), (None, (14, 0.6))],
        start=1,
    ):
        for t, spell in enumerate(pattern):
            if spell is None:
                rows.append(panel_row(pid, 2000 + t, firm_id=None))
            else:
                firm, y = spell
                rows.append(panel_row(pid, 2000 + t, firm_id=firm, annual_earnings=float(np.exp(y))))
    return build_panel(rows)


@pytest.fixture(scope="session")
def sim_bundle():
    """Mid-size simulated panel with mobility, shared across tests."""
    cfg = wl.SimConfig(n_workers=600, n_firms=30, n_years=12, seed=101, noise_sd=0.1)
    panel, truth = wl.simulate_panel(cfg)
    return cfg, panel, truth
