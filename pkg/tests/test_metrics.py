"""Metric oracles: delivery ratios, delays, fairness, losses."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from loracell import analytic
from loracell.metrics import (
    MetricsError,
    compute_report,
    delays,
    fairness,
    fairness_categories,
    jain_index,
    loss_decomposition,
    reliability,
    retx_distribution,
)
from loracell.scenario import ScenarioConfig, SfDistribution

SF7_ONLY = SfDistribution((1.0, 0.0, 0.0, 0.0, 0.0, 0.0))
SF12_ONLY = SfDistribution((0.0, 0.0, 0.0, 0.0, 0.0, 1.0))


def solved(**kw):
    cfg = ScenarioConfig(**kw)
    return analytic.solve(cfg), cfg


def random_config(rng) -> ScenarioConfig:
    return ScenarioConfig(
        lambda_total=float(10 ** rng.uniform(-2, 1.5)),
        alpha=float(rng.uniform(0.05, 1.0)),
        p_unconfirmed=SfDistribution(tuple(rng.dirichlet(np.ones(6)))),
        p_confirmed=SfDistribution(tuple(rng.dirichlet(np.ones(6)))),
        h=int(rng.integers(1, 9)),
        m=int(rng.integers(1, 9)),
        tau1=int(rng.integers(0, 2)),
        tau2=int(rng.integers(0, 2)),
    )


class TestReliability:
    def test_perfect_uplink_gives_unit_ratios(self):
        state, cfg = solved(lambda_total=0.0, alpha=0.5, m=4, h=3)
        uu, cu, cd, *_ = reliability(state, cfg)
        assert uu == pytest.approx(1.0)
        assert cu == pytest.approx(1.0)
        assert cd == pytest.approx(1.0)

    def test_single_sf_geometric_sum(self):
        # Success 0.5 per attempt, two copies: 0.5 + 0.25.
        state, cfg = solved(lambda_total=0.0, alpha=0.0, h=2,
                            p_unconfirmed=SF7_ONLY)
        doctored = analytic.SteadyState(
            s_ul=np.full(6, 0.5), s_dl=np.ones(6), s_int=state.s_int,
            s_tx=state.s_tx, f_tx1=state.f_tx1, f_tx2=state.f_tx2,
            s_int_ack1=state.s_int_ack1, s_sb1=state.s_sb1, s_sb2=state.s_sb2,
            rates=state.rates, sb1=state.sb1, sb2=state.sb2, demod=state.demod,
            iterations=1, residual=0.0, converged=True)
        uu, *_ = reliability(doctored, cfg)
        assert uu == pytest.approx(0.75, abs=1e-12)

    def test_moderate_confirmed_load_beats_point_nine(self):
        state, cfg = solved(lambda_total=1.0, alpha=1.0, m=8)
        _, cu, cd, *_ = reliability(state, cfg)
        assert cu > 0.9
        assert cd <= cu

    def test_closed_forms_match(self):
        state, cfg = solved(lambda_total=2.0, alpha=0.4, m=5, h=3)
        uu, cu, cd, uu_i, cu_i, cd_i = reliability(state, cfg)
        assert uu_i == pytest.approx(1 - (1 - state.s_ul) ** cfg.h, abs=1e-12)
        assert cu_i == pytest.approx(1 - (1 - state.s_ul) ** cfg.m, abs=1e-12)
        q = state.s_ul * state.s_dl
        assert cd_i == pytest.approx(1 - (1 - q) ** cfg.m, abs=1e-12)


class TestDelays:
    def test_single_attempt_certain_success_is_pure_airtime(self):
        state, cfg = solved(lambda_total=0.0, alpha=0.5, m=1,
                            p_confirmed=SF7_ONLY)
        delta_ul, _ = delays(state, cfg)
        assert delta_ul == pytest.approx(0.051, abs=1e-12)

    def test_inter_transmission_time_sf12(self):
        # Duty-cycle silence plus mean timeout: 100 * 1.318 + 2 s.
        state, cfg = solved(lambda_total=0.0, alpha=1.0, m=2,
                            p_confirmed=SF12_ONLY, delta_sb1=99.0, mu_retx=2.0)
        gamma_12 = (cfg.delta_sb1 + 1) * cfg.airtimes.t_data[5] + cfg.mu_retx
        assert gamma_12 == pytest.approx(133.8, abs=1e-9)

    def test_ack_window_term_single_branch(self):
        # Zero load: every ACK is served in the first window one second in.
        state, cfg = solved(lambda_total=0.0, alpha=1.0, m=1,
                            p_confirmed=SF7_ONLY)
        assert state.s_sb1[0] == pytest.approx(1.0)
        assert state.s_sb2 == 0.0
        _, delta_dl = delays(state, cfg)
        assert delta_dl == pytest.approx(0.051 + 1.0 + 0.041, abs=1e-12)

    def test_requires_confirmed_traffic(self):
        state, cfg = solved(lambda_total=1.0, alpha=0.0)
        with pytest.raises(MetricsError, match="alpha"):
            delays(state, cfg)

    def test_retry_terms_match_direct_expansion(self):
        state, cfg = solved(lambda_total=1.0, alpha=1.0, m=4)
        delta_ul, delta_dl = delays(state, cfg)
        t_data = np.array(cfg.airtimes.t_data)
        gamma = (cfg.delta_sb1 + 1) * t_data + cfg.mu_retx
        t_ack1 = np.array(cfg.airtimes.t_ack1)
        t_ack2 = np.array(cfg.airtimes.t_ack2)
        phi = state.s_sb1 * (1 + t_ack1) + state.s_sb2 * (2 + t_ack2)
        p_ul, p_dl = analytic.attempt_distributions(state.s_ul, state.s_dl, cfg.m)
        want_ul = want_dl = 0.0
        for i in range(6):
            for j in range(cfg.m):
                want_ul += (cfg.p_confirmed.p[i] * p_ul[i, j] / p_ul[i].sum()
                            * (t_data[i] + j * gamma[i]))
                want_dl += (cfg.p_confirmed.p[i] * p_dl[i, j] / p_dl[i].sum()
                            * (t_data[i] + j * gamma[i] + (j + 1) * phi[i]))
        assert delta_ul == pytest.approx(want_ul, abs=1e-12)
        assert delta_dl == pytest.approx(want_dl, abs=1e-12)


class TestFairness:
    def test_equal_shares_perfectly_fair(self):
        assert jain_index([0.5, 0.5]) == pytest.approx(1.0)

    def test_single_user_hogging_hits_lower_bound(self):
        assert jain_index([1.0, 0.0]) == pytest.approx(0.5)

    def test_hand_value(self):
        assert jain_index([0.9, 0.3, 0.6]) == pytest.approx(3.24 / 3.78, abs=1e-12)
        assert jain_index([0.9, 0.3, 0.6]) == pytest.approx(0.857, abs=5e-4)

    def test_all_zero_rejected(self):
        with pytest.raises(MetricsError):
            jain_index([0.0, 0.0])

    def test_empty_rejected(self):
        with pytest.raises(MetricsError):
            jain_index([])

    @given(st.lists(st.floats(min_value=1e-3, max_value=1.0), min_size=2, max_size=12),
           st.floats(min_value=0.1, max_value=100.0))
    @settings(max_examples=80)
    def test_scale_invariance(self, x, scale):
        assert jain_index(x) == pytest.approx(jain_index([v * scale for v in x]),
                                              rel=1e-9)

    def test_equal_proxies_give_unit_index(self):
        state, cfg = solved(lambda_total=0.0, alpha=0.5)
        assert fairness(state, cfg) == pytest.approx(1.0)

    def test_empty_categories_excluded(self):
        state, cfg = solved(lambda_total=0.5, alpha=1.0, p_confirmed=SF7_ONLY)
        x = fairness_categories(state, cfg)
        assert len(x) == 1  # only the confirmed SF7 population exists
        assert fairness(state, cfg) == pytest.approx(1.0)

    def test_unconfirmed_only_uses_six_categories(self):
        state, cfg = solved(lambda_total=0.5, alpha=0.0)
        assert len(fairness_categories(state, cfg)) == 6


class TestRetxDistribution:
    def test_certain_success_all_first_attempt(self):
        state, cfg = solved(lambda_total=0.0, alpha=1.0, m=4)
        shares = retx_distribution(state, cfg)
        assert shares[0] == pytest.approx(1.0)
        assert np.all(shares[1:] == pytest.approx(0.0))

    def test_geometric_hand_case(self):
        state, cfg = solved(lambda_total=0.0, alpha=1.0, m=2, p_confirmed=SF7_ONLY)
        doctored = analytic.SteadyState(
            s_ul=np.full(6, 0.5), s_dl=np.ones(6), s_int=state.s_int,
            s_tx=state.s_tx, f_tx1=state.f_tx1, f_tx2=state.f_tx2,
            s_int_ack1=state.s_int_ack1, s_sb1=state.s_sb1, s_sb2=state.s_sb2,
            rates=state.rates, sb1=state.sb1, sb2=state.sb2, demod=state.demod,
            iterations=1, residual=0.0, converged=True)
        shares = retx_distribution(doctored, cfg)
        assert shares == pytest.approx([0.5, 0.25, 0.25], abs=1e-12)

    def test_shares_always_sum_to_one(self):
        rng = np.random.default_rng(5)
        for _ in range(40):
            cfg = random_config(rng)
            state = analytic.solve(cfg, tol=1e-8)
            shares = retx_distribution(state, cfg)
            assert shares.sum() == pytest.approx(1.0, abs=1e-9)
            assert np.all(shares >= 0.0)
            assert len(shares) == cfg.m + 1

    def test_requires_confirmed_traffic(self):
        state, cfg = solved(lambda_total=1.0, alpha=0.0)
        with pytest.raises(MetricsError):
            retx_distribution(state, cfg)


class TestLossDecomposition:
    def test_zero_traffic_no_losses(self):
        state, cfg = solved(lambda_total=0.0)
        assert loss_decomposition(state, cfg) == pytest.approx((0.0, 0.0, 0.0))

    def test_telescoping_identity(self):
        # Losses by cause plus the mean uplink success cover everything.
        rng = np.random.default_rng(17)
        for _ in range(40):
            cfg = random_config(rng)
            state = analytic.solve(cfg, tol=1e-10)
            f_nmd, f_gwtx, f_int = loss_decomposition(state, cfg)
            mean_success = float(state.rates.d @ state.s_ul)
            assert f_nmd + f_gwtx + f_int + mean_success == pytest.approx(1.0, abs=1e-12)

    def test_monotone_in_load_for_confirmed_cell(self):
        # The causes form nested filters, so the cumulative shares grow with
        # load even where a single cause's share shrinks because an earlier
        # filter starts absorbing the traffic first.
        values = []
        for lam in np.logspace(-2, 1, 12):
            state, cfg = solved(lambda_total=float(lam), alpha=1.0, m=8)
            values.append(loss_decomposition(state, cfg))
        arr = np.array(values)
        nmd, gwtx, fint = arr[:, 0], arr[:, 1], arr[:, 2]
        assert np.all(np.diff(nmd) >= -1e-9)
        assert np.all(np.diff(nmd + gwtx) >= -1e-9)
        assert np.all(np.diff(nmd + gwtx + fint) >= -1e-9)
        # Before the demodulator bank saturates each share grows on its own.
        early = arr[:8]
        for k in range(3):
            assert np.all(np.diff(early[:, k]) >= -1e-9)


class TestReport:
    def test_cd_never_exceeds_cu(self):
        rng = np.random.default_rng(23)
        for _ in range(60):
            cfg = random_config(rng)
            state = analytic.solve(cfg, tol=1e-8)
            report = compute_report(state, cfg)
            assert report.cd <= report.cu + 1e-12

    def test_uplink_ratios_non_increasing_in_load(self):
        uus, cus = [], []
        for lam in np.logspace(-2, 2, 15):
            state, cfg = solved(lambda_total=float(lam), alpha=0.3, m=8, h=2)
            report = compute_report(state, cfg)
            uus.append(report.uu)
            cus.append(report.cu)
        assert np.all(np.diff(uus) <= 1e-9)
        assert np.all(np.diff(cus) <= 1e-9)

    def test_unconfirmed_only_report_has_no_confirmed_metrics(self):
        state, cfg = solved(lambda_total=1.0, alpha=0.0)
        report = compute_report(state, cfg)
        assert report.delta_ul is None
        assert report.delta_dl is None
        assert report.retx_dist is None
        assert 0.0 <= report.uu <= 1.0

    def test_report_serializes_to_plain_dict(self):
        state, cfg = solved(lambda_total=1.0, alpha=1.0, m=4)
        doc = compute_report(state, cfg).to_dict()
        assert set(doc) == {"uu", "cu", "cd", "uu_per_sf", "cu_per_sf", "cd_per_sf",
                            "delta_ul", "delta_dl", "jain", "retx_dist",
                            "f_nmd", "f_gwtx", "f_int"}
        assert isinstance(doc["retx_dist"], list)
        assert len(doc["retx_dist"]) == cfg.m + 1
