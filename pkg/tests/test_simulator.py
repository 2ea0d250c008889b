import numpy as np
import pandas as pd
import pytest
from scipy import stats

import worklife as wl


class TestDeterminism:
    def test_same_seed_identical_panel(self):
        cfg = wl.SimConfig(n_workers=120, n_firms=10, n_years=8, seed=9)
        a, ta = wl.simulate_panel(cfg)
        b, tb = wl.simulate_panel(cfg)
        assert a.df.to_csv(index=False) == b.df.to_csv(index=False)
        pd.testing.assert_series_equal(ta.theta, tb.theta)
        pd.testing.assert_series_equal(ta.psi, tb.psi)

    def test_same_seed_identical_diagnoses(self):
        cfg = wl.SimConfig(n_workers=80, n_firms=8, n_years=8, seed=3, diagnosis_hazard=0.05)
        panel, _ = wl.simulate_panel(cfg)
        a = wl.simulate_diagnoses(cfg, panel)
        b = wl.simulate_diagnoses(cfg, panel)
        pd.testing.assert_frame_equal(a, b)

    def test_noise_seed_changes_only_noise(self):
        base = wl.SimConfig(n_workers=60, n_firms=8, n_years=8, seed=5, noise_sd=0.2)
        other = wl.SimConfig(n_workers=60, n_firms=8, n_years=8, seed=5, noise_sd=0.2, noise_seed=99)
        pa, ta = wl.simulate_panel(base)
        pb, tb = wl.simulate_panel(other)
        pd.testing.assert_series_equal(ta.theta, tb.theta)
        assert pa.df["firm_id"].equals(pb.df["firm_id"])
        employed = pa.df["firm_id"].notna()
        assert not np.allclose(
            pa.df.loc[employed, "annual_earnings"], pb.df.loc[employed, "annual_earnings"]
        )


class TestDgp:
    def test_zero_noise_is_exactly_additive(self):
        cfg = wl.SimConfig(
            n_workers=50, n_firms=2, n_years=6, seed=2, noise_sd=0.0,
            base_mobility_rate=0.0, nonemployment_rate=0.0, partial_months_prob=0.3,
        )
        panel, truth = wl.simulate_panel(cfg)
        observed = np.log(panel.df["annual_earnings"] / panel.df["months_worked"])
        np.testing.assert_allclose(observed, truth.systematic_log_monthly, atol=1e-12)

    def test_null_pgi_effects_show_no_earnings_gradient(self):
        cfg = wl.SimConfig(
            n_workers=10_000, n_firms=40, n_years=6, seed=17,
            pgi_effect_on_theta=0.0, pgi_effect_on_mobility=0.0, nonemployment_rate=0.0,
        )
        panel, _ = wl.simulate_panel(cfg)
        person = panel.df.groupby("person_id").agg(
            pgi=("EA_PGI", "first"), earn=("annual_earnings", "mean")
        )
        lo = person[person["pgi"] <= person["pgi"].quantile(0.2)]["earn"]
        hi = person[person["pgi"] >= person["pgi"].quantile(0.8)]["earn"]
        t_stat, _ = stats.ttest_ind(lo, hi, equal_var=False)
        assert abs(t_stat) < 3

    def test_indices_standardized(self):
        cfg = wl.SimConfig(n_workers=4000, n_firms=20, n_years=4, seed=23)
        panel, _ = wl.simulate_panel(cfg)
        n = 4000
        person = panel.df.groupby("person_id").first()
        for col in ("EA_PGI", "PC1", "PC5", "PC10"):
            assert abs(person[col].mean()) < 5 / np.sqrt(n)
            assert abs(person[col].var(ddof=0) - 1) < 10 / np.sqrt(n)

    def test_mobility_connects_most_firms(self):
        cfg = wl.SimConfig(n_workers=1000, n_firms=40, n_years=10, seed=31, base_mobility_rate=0.1)
        panel, _ = wl.simulate_panel(cfg)
        graph = wl.build_graph(panel)
        if graph.component_sizes[0].n_firms <= 0.9 * cfg.n_firms:
            pytest.fail(f"largest component too small:\n{graph.histogram()}")

    def test_ground_truth_covers_everyone(self):
        cfg = wl.SimConfig(n_workers=90, n_firms=7, n_years=5, seed=13)
        panel, truth = wl.simulate_panel(cfg)
        assert set(panel.df["person_id"]) <= set(truth.theta.index)
        assert set(panel.df["firm_id"].dropna().astype(int)) <= set(truth.psi.index)

    def test_injected_slope_recorded(self):
        cfg = wl.SimConfig(n_workers=40, n_firms=5, n_years=8, seed=1, pgi_trajectory_slope=0.02)
        _, truth = wl.simulate_panel(cfg)
        assert truth.beta_t["EA_PGI"][3] == pytest.approx(0.06)

    def test_infeasible_config_rejected(self):
        with pytest.raises(wl.ValidationError):
            wl.SimConfig(n_workers=10, n_firms=1, n_years=5)
        with pytest.raises(wl.ValidationError):
            wl.SimConfig(base_mobility_rate=1.5)

    def test_calibration_helpers(self):
        a = wl.theta_effect_for_correlation(0.115, 0.3)
        assert a / np.sqrt(a**2 + 0.3**2) == pytest.approx(0.115)
        lam = wl.years_edu_effect_for_r2(0.071, 0.6)
        p = 0.6
        implied = lam**2 / (16 * p * (1 - p) + lam**2 + 1.5**2)
        assert implied == pytest.approx(0.071)


class TestDiagnoses:
    def test_zero_hazard_empty(self):
        cfg = wl.SimConfig(n_workers=50, n_firms=5, n_years=5, seed=7, diagnosis_hazard=0.0)
        panel, _ = wl.simulate_panel(cfg)
        events = wl.simulate_diagnoses(cfg, panel)
        assert events.empty

    def test_sure_event_fires_once_for_everyone(self):
        cfg = wl.SimConfig(n_workers=50, n_firms=5, n_years=5, seed=7)
        panel, _ = wl.simulate_panel(cfg)
        events = wl.simulate_diagnoses(cfg, panel, hazards={"dementia": 1.0})
        assert len(events) == 50
        assert events["person_id"].nunique() == 50
        first_year = panel.df.groupby("person_id")["year"].min()
        assert (events.set_index("person_id")["event_year"] == first_year).all()
        table = wl.default_charlson_table()
        assert all(table.match(c, 10) == "dementia" for c in events["code"])

    def test_unknown_category_rejected(self):
        cfg = wl.SimConfig(n_workers=10, n_firms=3, n_years=3, seed=1)
        panel, _ = wl.simulate_panel(cfg)
        with pytest.raises(wl.ValidationError):
            wl.simulate_diagnoses(cfg, panel, hazards={"not_a_condition": 0.5})
