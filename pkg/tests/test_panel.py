import numpy as np
import pandas as pd
import pytest

import worklife as wl
from worklife.panel import (
    EmploymentSpell,
    PersonYearRecord,
    monthly_earnings,
    yearly_median_monthly_earnings,
)

from conftest import build_panel, panel_row

HEADER = (
    "person_id,year,birth_year,gender,firm_id,annual_earnings,months_worked,"
    "education_level,education_field,institution_id,graduation_year,biobank,EA_PGI"
)


def write_files(tmp_path, rows, deflator_rows=("2005,1.0",)):
    panel = tmp_path / "panel.csv"
    panel.write_text("\n".join([HEADER, *rows]) + "\n")
    deflator = tmp_path / "deflator.csv"
    deflator.write_text("\n".join(["year,deflator", *deflator_rows]) + "\n")
    return panel, deflator


class TestLoadPanel:
    def test_identity_deflator_keeps_earnings(self, tmp_path):
        rows = [
            f"{p},2005,1980,0,7,1000,12,secondary,,,2000,THL,0.1" for p in (1, 2, 3)
        ]
        panel = wl.load_panel(*write_files(tmp_path, rows))
        assert panel.n_obs == 3
        assert (panel.df["annual_earnings"] == 1000.0).all()
        assert panel.index_columns == ("EA_PGI",)

    def test_deflator_divides(self, tmp_path):
        rows = ["1,2005,1980,0,7,1000,12,secondary,,,2000,THL,0.0"]
        panel = wl.load_panel(*write_files(tmp_path, rows, deflator_rows=("2005,2.0",)))
        assert panel.df["annual_earnings"].iloc[0] == pytest.approx(500.0)

    def test_duplicate_person_year_names_both_rows(self, tmp_path):
        rows = [
            "1,2005,1980,0,7,1000,12,secondary,,,2000,THL,0.0",
            "1,2005,1980,0,8,900,12,secondary,,,2000,THL,0.0",
        ]
        with pytest.raises(wl.PanelFormatError, match=r"rows 2, 3"):
            wl.load_panel(*write_files(tmp_path, rows))

    def test_missing_column(self, tmp_path):
        panel = tmp_path / "panel.csv"
        panel.write_text("person_id,year\n1,2005\n")
        deflator = tmp_path / "deflator.csv"
        deflator.write_text("year,deflator\n2005,1.0\n")
        with pytest.raises(wl.PanelFormatError, match="missing columns"):
            wl.load_panel(panel, deflator)

    def test_non_numeric_field_reports_row(self, tmp_path):
        rows = [
            "1,2005,1980,0,7,1000,12,secondary,,,2000,THL,0.0",
            "2,2005,1980,0,7,oops,12,secondary,,,2000,THL,0.0",
        ]
        with pytest.raises(wl.PanelFormatError, match="row 3.*annual_earnings"):
            wl.load_panel(*write_files(tmp_path, rows))

    def test_deflator_gap_rejected(self, tmp_path):
        rows = ["1,2005,1980,0,7,1000,12,secondary,,,2000,THL,0.0"]
        with pytest.raises(wl.PanelFormatError, match="gap"):
            wl.load_panel(*write_files(tmp_path, rows, deflator_rows=("2003,1.0", "2005,1.0")))

    def test_deflator_must_cover_panel_years(self, tmp_path):
        rows = ["1,2006,1980,0,7,1000,12,secondary,,,2000,THL,0.0"]
        with pytest.raises(wl.PanelFormatError, match="not covered"):
            wl.load_panel(*write_files(tmp_path, rows, deflator_rows=("2005,1.0",)))

    def test_nonemployment_row_roundtrip(self, tmp_path):
        rows = [
            "1,2005,1980,0,,0,0,secondary,,,2000,THL,0.0",
            "1,2006,1980,0,7,1200,12,secondary,,,2000,THL,0.0",
        ]
        panel = wl.load_panel(*write_files(tmp_path, rows, deflator_rows=("2005,1.0", "2006,1.0")))
        assert panel.df["firm_id"].isna().iloc[0]
        assert panel.df["months_worked"].iloc[0] == 0

    def test_deflation_and_filtering_commute(self, tmp_path):
        rng = np.random.default_rng(0)
        rows = []
        for p in range(1, 60):
            rows.append(
                f"{p},2005,{1950 + p % 40},0,{p % 6 + 1},{1000 + 100 * rng.integers(0, 9)},12,secondary,,,2000,THL,0.0"
            )
        panel_infl = wl.load_panel(*write_files(tmp_path, rows, deflator_rows=("2005,1.25",)))
        spec = wl.FilterSpec(min_firm_size=2, min_age=20, max_age=60)
        filtered = wl.apply_akm_filters(panel_infl, spec)
        # Scaling all earnings by a constant cannot change which rows pass.
        panel_flat = wl.load_panel(*write_files(tmp_path, rows, deflator_rows=("2005,1.0",)))
        filtered_flat = wl.apply_akm_filters(panel_flat, spec)
        assert filtered.df["person_id"].tolist() == filtered_flat.df["person_id"].tolist()
        np.testing.assert_allclose(
            filtered.df["annual_earnings"] * 1.25, filtered_flat.df["annual_earnings"]
        )


class TestMonthlyEarnings:
    def rec(self, earnings, months):
        return PersonYearRecord(1, 2005, 1980, 0, 1, earnings, months, "secondary", 2000)

    def test_division(self):
        assert monthly_earnings(self.rec(24000, 12)) == pytest.approx(2000)
        assert monthly_earnings(self.rec(9000, 4)) == pytest.approx(2250)

    def test_zero_months_undefined(self):
        rec = PersonYearRecord(1, 2005, 1980, 0, None, 0.0, 0, "secondary", 2000)
        assert monthly_earnings(rec) is None


class TestMainEmployer:
    def test_max_earnings(self):
        assert wl.select_main_employer([EmploymentSpell(1, 100), EmploymentSpell(2, 300)]) == 2

    def test_tie_breaks_to_smaller_firm(self):
        assert wl.select_main_employer([EmploymentSpell(5, 200), EmploymentSpell(3, 200)]) == 3

    def test_singleton(self):
        assert wl.select_main_employer([EmploymentSpell(9, 50)]) == 9

    def test_empty_is_none(self):
        assert wl.select_main_employer([]) is None

    def test_ended_spells_ignored(self):
        spells = [EmploymentSpell(1, 500, ongoing_at_year_end=False), EmploymentSpell(2, 100)]
        assert wl.select_main_employer(spells) == 2

    def test_accepts_tuples(self):
        assert wl.select_main_employer([(4, 10.0), (2, 30.0)]) == 2


class TestAkmFilters:
    def make(self, n_per_firm=10, extra=()):
        rows = []
        pid = 1
        for firm in (1, 2):
            for _ in range(n_per_firm):
                rows.append(panel_row(pid, 2005, firm_id=firm, annual_earnings=24000.0, birth_year=1975))
                pid += 1
        rows.extend(extra)
        return build_panel(rows)

    def test_no_op_when_everything_passes(self):
        panel = self.make()
        out = wl.apply_akm_filters(panel, wl.FilterSpec())
        assert out.n_obs == panel.n_obs

    def test_age_bound(self):
        young = panel_row(99, 2005, firm_id=1, annual_earnings=24000.0, birth_year=1986)  # age 19
        panel = self.make(extra=[young])
        out = wl.apply_akm_filters(panel, wl.FilterSpec())
        assert 99 not in set(out.df["person_id"])

    def test_small_firm_dropped(self):
        rows = [panel_row(p, 2005, firm_id=1, annual_earnings=24000.0, birth_year=1975) for p in range(1, 11)]
        rows += [panel_row(p, 2005, firm_id=2, annual_earnings=24000.0, birth_year=1975) for p in range(11, 15)]
        panel = build_panel(rows)
        out = wl.apply_akm_filters(panel, wl.FilterSpec(min_firm_size=5))
        assert set(out.df["firm_id"].astype(int)) == {1}

    def test_earnings_floor_uses_prefilter_median(self):
        rows = [panel_row(p, 2005, firm_id=1, annual_earnings=24000.0, birth_year=1975) for p in range(1, 11)]
        rows.append(panel_row(20, 2005, firm_id=1, annual_earnings=2400.0, birth_year=1975))
        panel = build_panel(rows)
        out = wl.apply_akm_filters(panel, wl.FilterSpec(min_firm_size=1))
        # 2400/12 = 200 per month < 0.5 * median (2000/month).
        assert 20 not in set(out.df["person_id"])

    def test_months_minimum(self):
        short = panel_row(50, 2005, firm_id=1, annual_earnings=24000.0, months_worked=3, birth_year=1975)
        panel = self.make(extra=[short])
        out = wl.apply_akm_filters(panel, wl.FilterSpec(min_months=4, min_firm_size=1))
        assert 50 not in set(out.df["person_id"])

    def test_idempotent_given_fixed_median(self):
        rng = np.random.default_rng(3)
        rows = [
            panel_row(p, 2005, firm_id=int(rng.integers(1, 4)), annual_earnings=float(rng.uniform(5000, 40000)),
                      birth_year=1975)
            for p in range(1, 80)
        ]
        panel = build_panel(rows)
        median = yearly_median_monthly_earnings(panel)
        spec = wl.FilterSpec(min_firm_size=3)
        once = wl.apply_akm_filters(panel, spec, yearly_median=median)
        twice = wl.apply_akm_filters(once, spec, yearly_median=median)
        pd.testing.assert_frame_equal(once.df, twice.df)

    def test_empty_result_warns(self):
        panel = self.make(n_per_firm=2)
        with pytest.warns(UserWarning, match="empty"):
            out = wl.apply_akm_filters(panel, wl.FilterSpec(min_firm_size=50))
        assert out.n_obs == 0


class TestTrajectoryFilters:
    def test_secondary_without_followup_dropped(self):
        rows = [
            panel_row(1, 2000 + t, education_level="secondary", birth_year=1981, graduation_year=2000,
                      log_monthly=1.0)
            for t in range(10)  # last seen at age 29
        ]
        rows += [
            panel_row(2, 2000 + t, education_level="tertiary", birth_year=1981, graduation_year=2000,
                      log_monthly=1.0)
            for t in range(10)
        ]
        panel = build_panel(rows)
        out = wl.apply_trajectory_filters(panel, wl.FilterSpec())
        assert set(out.df["person_id"]) == {2}

    def test_secondary_observed_past_30_retained(self):
        rows = [
            panel_row(1, 2000 + t, education_level="secondary", birth_year=1975, graduation_year=2000,
                      log_monthly=1.0)
            for t in range(8)  # last seen at age 32
        ]
        panel = build_panel(rows)
        out = wl.apply_trajectory_filters(panel, wl.FilterSpec())
        assert out.n_persons == 1

    def test_zero_income_years_retained(self):
        rows = [
            panel_row(1, 2000, firm_id=None, birth_year=1968),
            panel_row(1, 2001, firm_id=None, birth_year=1968),
            panel_row(1, 2002, firm_id=None, birth_year=1968),
        ]
        out = wl.apply_trajectory_filters(build_panel(rows), wl.FilterSpec())
        assert out.n_obs == 3
        assert (out.df["annual_earnings"] == 0).all()

    def test_horizon_cap_and_pregraduation(self):
        rows = [panel_row(1, 1999, log_monthly=1.0, birth_year=1960)]
        rows += [panel_row(1, 2000 + t, log_monthly=1.0, birth_year=1960) for t in range(30)]
        out = wl.apply_trajectory_filters(build_panel(rows), wl.FilterSpec())
        h = out.df["year"] - out.df["graduation_year"]
        assert h.min() == 0 and h.max() == 25
