import numpy as np
import pandas as pd
import pytest

import worklife as wl
from worklife.akm import _EffectsSystem, build_covariates

from conftest import build_panel, panel_row

HAND_SPEC = wl.AkmSpec(periods=((2000, 2001),), covariates="none", solver_tol=1e-12)


def simulate_connected(seed=11, noise_sd=0.1, n_workers=400, n_firms=25, n_years=14, **kw):
    cfg = wl.SimConfig(
        n_workers=n_workers, n_firms=n_firms, n_years=n_years, seed=seed, noise_sd=noise_sd, **kw
    )
    panel, truth = wl.simulate_panel(cfg)
    filtered = wl.apply_akm_filters(panel, wl.FilterSpec())
    connected = wl.largest_connected_set(filtered, wl.build_graph(filtered))
    period = (int(connected.years[0]), int(connected.years[-1]))
    return connected, truth, wl.AkmSpec(periods=(period,), solver_tol=1e-11)


def dense_objective(panel, period, covariates="default"):
    """Least-squares objective from a dense full-dummy solve (oracle)."""
    from worklife.panel import log_monthly_earnings

    df = panel.df[(panel.df["year"] >= period[0]) & (panel.df["year"] <= period[1])]
    y = log_monthly_earnings(df)
    df = df[y.notna() & df["firm_id"].notna()]
    y = y.loc[df.index].to_numpy(float)
    persons, p_idx = np.unique(df["person_id"], return_inverse=True)
    firms, f_idx = np.unique(df["firm_id"].astype(np.int64), return_inverse=True)
    d = np.zeros((len(df), len(persons)))
    d[np.arange(len(df)), p_idx] = 1.0
    f = np.zeros((len(df), len(firms)))
    f[np.arange(len(df)), f_idx] = 1.0
    blocks = [d, f]
    if covariates == "default":
        x, _ = build_covariates(df)
        blocks.insert(0, x)
    a = np.hstack(blocks)
    coef, *_ = np.linalg.lstsq(a, y, rcond=None)
    resid = y - a @ coef
    return float(resid @ resid)


class TestHandInstance:
    def test_hand_solved_effects(self, hand_akm_panel):
        fit = wl.fit_akm(hand_akm_panel, HAND_SPEC)[0]
        assert fit.theta.loc[1] == pytest.approx(1.75, abs=1e-9)
        assert fit.theta.loc[2] == pytest.approx(1.25, abs=1e-9)
        assert fit.psi.loc[1] == pytest.approx(-0.75, abs=1e-9)
        assert fit.psi.loc[2] == pytest.approx(0.25, abs=1e-9)
        assert fit.psi.loc[2] - fit.psi.loc[1] == pytest.approx(1.0, abs=1e-9)
        assert fit.r2 == pytest.approx(1.0)
        assert np.abs(fit.rows["resid"]).max() < 1e-9

    def test_normalization_is_observation_weighted(self, hand_akm_panel):
        fit = wl.fit_akm(hand_akm_panel, HAND_SPEC)[0]
        psi_rows = fit.psi.reindex(fit.rows["firm_id"]).to_numpy()
        assert abs(psi_rows.mean()) < 1e-12

    def test_hand_variance_decomposition(self, hand_akm_panel):
        fit = wl.fit_akm(hand_akm_panel, HAND_SPEC)[0]
        vd = wl.variance_decomposition(fit)
        assert vd.var_y == pytest.approx(0.125)
        assert vd.components["var_theta"] == pytest.approx(0.0625, abs=1e-9)
        assert vd.components["var_psi"] == pytest.approx(0.1875, abs=1e-9)
        assert vd.components["cov_theta_psi_x2"] == pytest.approx(-0.125, abs=1e-9)
        assert vd.components["var_resid"] == pytest.approx(0.0, abs=1e-12)


class TestRecovery:
    def test_zero_noise_exact_recovery(self):
        connected, truth, spec = simulate_connected(seed=21, noise_sd=0.0)
        fit = wl.fit_akm(connected, spec)[0]
        diff = fit.theta - truth.theta.loc[fit.theta.index]
        aligned = diff - diff.mean()
        assert np.abs(aligned).max() < 1e-6
        diff_psi = fit.psi - truth.psi.loc[fit.psi.index]
        assert np.abs(diff_psi - diff_psi.mean()).max() < 1e-6

    def test_noisy_recovery_correlates(self):
        connected, truth, spec = simulate_connected(
            seed=25, noise_sd=0.1, n_workers=1500, n_firms=50, n_years=12
        )
        fit = wl.fit_akm(connected, spec)[0]
        corr = np.corrcoef(fit.theta, truth.theta.loc[fit.theta.index])[0, 1]
        assert corr > 0.95

    def test_record_order_invariance(self):
        connected, _, spec = simulate_connected(seed=23, n_workers=150, n_firms=12, n_years=6)
        fit_a = wl.fit_akm(connected, spec)[0]
        shuffled = connected.df.sample(frac=1.0, random_state=5)
        panel_b = wl.make_panel(shuffled, deflator=connected.deflator)
        fit_b = wl.fit_akm(panel_b, spec)[0]
        assert np.abs(fit_a.theta - fit_b.theta).max() < 1e-10
        assert np.abs(fit_a.psi - fit_b.psi).max() < 1e-10

    def test_gauge_invariance_from_shifted_warm_start(self):
        connected, _, spec = simulate_connected(seed=24, n_workers=150, n_firms=12, n_years=6)
        fit = wl.fit_akm(connected, spec)[0]
        shifted = (fit.theta + 5.0, fit.psi - 5.0)
        refit = wl.fit_akm(connected, spec, warm_start=shifted)[0]
        assert np.abs(refit.theta - fit.theta).max() < 1e-8
        assert np.abs(refit.psi - fit.psi).max() < 1e-8

    def test_normal_equations_satisfied(self):
        connected, _, spec = simulate_connected(seed=25, n_workers=200, n_firms=15, n_years=8)
        fit = wl.fit_akm(connected, spec)[0]
        assert fit.converged
        assert fit.gradient_norm_rel < spec.solver_tol

    def test_dense_oracle_objective_match(self):
        for seed in (31, 32, 33, 34, 35):
            connected, _, spec = simulate_connected(
                seed=seed, n_workers=60, n_firms=8, n_years=6, noise_sd=0.15
            )
            fit = wl.fit_akm(connected, spec)[0]
            oracle = dense_objective(connected, spec.periods[0])
            assert fit.objective == pytest.approx(oracle, rel=1e-8)

    def test_linear_age_collinearity_dropped_and_reported(self):
        connected, _, spec = simulate_connected(seed=26, n_workers=200, n_firms=15, n_years=8)
        fit = wl.fit_akm(connected, spec)[0]
        # One direction per education level is structurally redundant.
        assert len(fit.dropped_columns) >= 2

    def test_non_convergence_diagnostic(self):
        connected, _, spec = simulate_connected(seed=27, n_workers=150, n_firms=12, n_years=6)
        tight = wl.AkmSpec(periods=spec.periods, solver_tol=1e-14, max_iter=2)
        with pytest.raises(wl.ConvergenceError):
            wl.fit_akm(connected, tight)

    def test_multi_component_normalization(self):
        # Two disconnected blocks; psi must be demeaned within each.
        rows = []
        for p in range(1, 7):
            rows.append(panel_row(p, 2000, firm_id=1 + (p % 2), log_monthly=1.0 + 0.1 * p))
            rows.append(panel_row(p, 2001, firm_id=1 + ((p + 1) % 2), log_monthly=1.1 + 0.1 * p))
        for p in range(7, 13):
            rows.append(panel_row(p, 2000, firm_id=11 + (p % 2), log_monthly=3.0 + 0.1 * p))
            rows.append(panel_row(p, 2001, firm_id=11 + ((p + 1) % 2), log_monthly=3.1 + 0.1 * p))
        panel = build_panel(rows)
        fit = wl.fit_akm(panel, wl.AkmSpec(periods=((2000, 2001),), covariates="none", solver_tol=1e-12))[0]
        comp = pd.Series(fit.component_of_firm)
        rows_df = fit.rows.assign(psi=fit.psi.reindex(fit.rows["firm_id"]).to_numpy())
        for label in comp.unique():
            in_comp = rows_df["firm_id"].map(comp) == label
            assert abs(rows_df.loc[in_comp, "psi"].mean()) < 1e-10


class TestStandardize:
    def test_moments_and_scale_stored(self, sim_bundle):
        _, panel, _ = sim_bundle
        filtered = wl.apply_akm_filters(panel, wl.FilterSpec())
        connected = wl.largest_connected_set(filtered, wl.build_graph(filtered))
        spec = wl.AkmSpec(periods=((int(connected.years[0]), int(connected.years[-1])),))
        fit = wl.standardize_indices(wl.fit_akm(connected, spec)[0], connected)
        persons = connected.df["person_id"].unique()
        vals = fit.theta_std.reindex(persons).dropna()
        assert abs(vals.mean()) < 1e-10
        assert abs(vals.std(ddof=0) - 1) < 1e-10
        assert fit.theta_scale is not None

    def test_idempotent_and_shift_invariant(self, hand_akm_panel):
        fit = wl.fit_akm(hand_akm_panel, HAND_SPEC)[0]
        once = wl.standardize_indices(fit, hand_akm_panel)
        import dataclasses

        shifted = dataclasses.replace(fit, theta=fit.theta + 3.0)
        again = wl.standardize_indices(shifted, hand_akm_panel)
        assert np.abs(once.theta_std - again.theta_std).max() < 1e-12
        restd = wl.standardize_indices(
            dataclasses.replace(fit, theta=once.theta_std, psi=once.psi_std), hand_akm_panel
        )
        assert np.abs(restd.theta_std - once.theta_std).max() < 1e-12

    def test_zero_variance_rejected(self):
        rows = [
            panel_row(1, 2000, firm_id=1, log_monthly=1.0),
            panel_row(1, 2001, firm_id=2, log_monthly=1.0),
            panel_row(2, 2000, firm_id=2, log_monthly=1.0),
        ]
        panel = build_panel(rows)
        fit = wl.fit_akm(panel, HAND_SPEC)[0]
        with pytest.raises(wl.ValidationError, match="zero variance"):
            wl.standardize_indices(fit, panel)


class TestVarianceDecomposition:
    def test_identity_on_noisy_fit(self, sim_bundle):
        _, panel, _ = sim_bundle
        filtered = wl.apply_akm_filters(panel, wl.FilterSpec())
        connected = wl.largest_connected_set(filtered, wl.build_graph(filtered))
        spec = wl.AkmSpec(periods=((int(connected.years[0]), int(connected.years[-1])),))
        vd = wl.variance_decomposition(wl.fit_akm(connected, spec)[0])
        assert sum(vd.components.values()) == pytest.approx(vd.var_y, rel=1e-8)
        assert sum(vd.shares.values()) == pytest.approx(1.0, rel=1e-8)

    def test_constant_outcome_all_zero(self):
        rows = [
            panel_row(1, 2000, firm_id=1, log_monthly=2.0),
            panel_row(1, 2001, firm_id=2, log_monthly=2.0),
            panel_row(2, 2000, firm_id=2, log_monthly=2.0),
            panel_row(2, 2001, firm_id=2, log_monthly=2.0),
        ]
        fit = wl.fit_akm(build_panel(rows), HAND_SPEC)[0]
        vd = wl.variance_decomposition(fit)
        assert vd.var_y == pytest.approx(0.0, abs=1e-15)
        for name in ("var_theta", "var_psi", "var_resid"):
            assert vd.components[name] == pytest.approx(0.0, abs=1e-12)

    def test_independent_mobility_gives_small_sorting_share(self):
        # No earnings floor: selecting on theta + psi would itself induce
        # covariance between the effects in the retained rows.
        cfg = wl.SimConfig(n_workers=900, n_firms=30, n_years=12, seed=41, noise_sd=0.0)
        panel, truth = wl.simulate_panel(cfg)
        filtered = wl.apply_akm_filters(
            panel, wl.FilterSpec(min_earnings_fraction_of_median=0.0, min_firm_size=1, min_months=1)
        )
        connected = wl.largest_connected_set(filtered, wl.build_graph(filtered))
        period = (int(connected.years[0]), int(connected.years[-1]))
        fit = wl.fit_akm(connected, wl.AkmSpec(periods=(period,), solver_tol=1e-11))[0]
        vd = wl.variance_decomposition(fit)
        assert abs(vd.shares["cov_theta_psi_x2"]) / 2 < 0.02
        assert vd.shares["var_resid"] < 1e-10


class TestCrossPeriod:
    def test_self_correlation_one(self, hand_akm_panel):
        fit = wl.fit_akm(hand_akm_panel, HAND_SPEC)[0]
        agree = wl.cross_period_agreement(fit, fit)
        assert agree.corr_theta == pytest.approx(1.0)
        assert agree.corr_psi == pytest.approx(1.0)

    def test_scale_invariance(self, hand_akm_panel):
        import dataclasses

        fit = wl.fit_akm(hand_akm_panel, HAND_SPEC)[0]
        doubled = dataclasses.replace(fit, theta=fit.theta * 2.0)
        agree = wl.cross_period_agreement(fit, doubled)
        assert agree.corr_theta == pytest.approx(1.0)

    def test_disjoint_fits_rejected(self, hand_akm_panel):
        import dataclasses

        fit = wl.fit_akm(hand_akm_panel, HAND_SPEC)[0]
        other = dataclasses.replace(
            fit,
            theta=pd.Series([1.0, 2.0], index=pd.Index([91, 92], name="person_id")),
            psi=pd.Series([0.5, -0.5], index=pd.Index([77, 78], name="firm_id")),
        )
        with pytest.raises(wl.ValidationError):
            wl.cross_period_agreement(fit, other)

    def test_two_noisy_fits_of_same_truth_agree(self):
        cfg = wl.SimConfig(n_workers=5000, n_firms=200, n_years=12, seed=55, noise_sd=0.3)
        cfg_b = wl.SimConfig(n_workers=5000, n_firms=200, n_years=12, seed=55, noise_sd=0.3, noise_seed=777)
        fits = []
        for c in (cfg, cfg_b):
            panel, _ = wl.simulate_panel(c)
            filtered = wl.apply_akm_filters(panel, wl.FilterSpec())
            connected = wl.largest_connected_set(filtered, wl.build_graph(filtered))
            spec = wl.AkmSpec(periods=((int(connected.years[0]), int(connected.years[-1])),))
            fits.append(wl.fit_akm(connected, spec)[0])
        agree = wl.cross_period_agreement(fits[0], fits[1])
        assert agree.corr_theta > 0.7
        assert len(agree.theta_bins) == 20


class TestEffectsSystem:
    def test_projection_removes_group_structure(self):
        rng = np.random.default_rng(0)
        p_idx = rng.integers(0, 12, 200)
        f_idx = rng.integers(0, 6, 200)
        system = _EffectsSystem(p_idx, f_idx, 12, 6)
        target = np.ones(200)  # constants live in the effects span
        resid, _, ok = system.residualize(target, 1e-12, 2000)
        assert ok
        assert np.abs(resid).max() < 1e-9
