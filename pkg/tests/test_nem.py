from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import catchmix.nem as nem_mod
from catchmix.dataset import AlignedPanel, align_panel
from catchmix.errors import EmptyComponent, FixedPointDiverged, LengthMismatch
from catchmix.lattice import adjacency_from_edges
from catchmix.model import MixtureParams, fitted_from_labels, sum_squared_error
from catchmix.nem import (
    Responsibilities,
    _e_step_core,
    e_step,
    fit_nem,
    hathaway_criterion,
    loglik_matrix,
    m_step,
    penalty_G,
    site_loglik,
)
from catchmix.potts import LabelField, same_label_edges
from catchmix.seasonal import basis_from_labels, decompose_panel
from catchmix.simgen import SimSpec, simulate_catchment, recovery_score

from datetime import date, timedelta


def make_panel(values):
    values = np.asarray(values, dtype=float)
    return AlignedPanel(
        tuple(f"S{i}" for i in range(values.shape[0])),
        date(2020, 1, 6),
        timedelta(days=7),
        values,
    )


def toy_problem(seed=0, n=6, t_len=104, period=26, k=2, gap=5.0):
    rng = np.random.default_rng(seed)
    labels = np.array([i % k for i in range(n)])
    t = np.arange(t_len, dtype=float)
    rows = []
    for i in range(n):
        amp = 1.0 + labels[i]
        rows.append(gap * labels[i] + amp * np.sin(2 * np.pi * t / period) + 0.3 * rng.normal(size=t_len))
    panel = make_panel(np.vstack(rows))
    bases = decompose_panel(panel.values, panel.site_ids, period)
    basis = basis_from_labels(bases, labels, k)
    params = m_step(panel, Responsibilities(np.eye(k)[labels]), basis)
    return panel, bases, basis, params, labels


class TestSiteLoglik:
    def test_zero_residuals(self, ):
        panel, bases, basis, params, labels = toy_problem()
        t_len = panel.n_times
        curve = params.component_curve(0, basis)
        p1 = MixtureParams(params.mu0, params.b_trend, params.b_seas, np.ones_like(params.nu), params.pi)
        assert site_loglik(curve, 0, p1, basis) == pytest.approx(-0.5 * t_len * np.log(2 * np.pi))

    def test_doubling_variance(self):
        panel, bases, basis, params, labels = toy_problem()
        t_len = panel.n_times
        curve = params.component_curve(0, basis)
        p1 = MixtureParams(params.mu0, params.b_trend, params.b_seas, np.ones_like(params.nu), params.pi)
        p2 = MixtureParams(params.mu0, params.b_trend, params.b_seas, 2 * np.ones_like(params.nu), params.pi)
        drop = site_loglik(curve, 0, p1, basis) - site_loglik(curve, 0, p2, basis)
        assert drop == pytest.approx(0.5 * t_len * np.log(2.0))

    def test_against_per_point_density_oracle(self):
        panel, bases, basis, params, labels = toy_problem(seed=3)
        y = panel.values[1]
        for k in range(2):
            mean = params.component_curve(k, basis)
            nu = float(params.nu[k])
            per_point = -0.5 * np.log(2 * np.pi * nu) - (y - mean) ** 2 / (2 * nu)
            assert site_loglik(y, k, params, basis) == pytest.approx(per_point.sum(), rel=1e-12)

    def test_matrix_matches_scalar(self):
        panel, bases, basis, params, labels = toy_problem(seed=4)
        ll = loglik_matrix(panel.values, params, basis)
        for i in (0, 3):
            for k in (0, 1):
                assert ll[i, k] == pytest.approx(site_loglik(panel.values[i], k, params, basis), rel=1e-12)


class TestPenalty:
    def test_hard_labels_on_cycle(self, cycle4):
        c = np.eye(3)[[1, 1, 2, 2]]
        assert penalty_G(Responsibilities(c), cycle4) == pytest.approx(4.0)

    def test_uniform_rows(self, grid33):
        for k in (2, 4):
            c = np.full((9, k), 1.0 / k)
            assert penalty_G(Responsibilities(c), grid33) == pytest.approx(2 * grid33.n_edges / k)

    def test_edgeless(self):
        a = adjacency_from_edges(3, [])
        c = np.eye(2)[[0, 1, 0]]
        assert penalty_G(Responsibilities(c), a) == 0.0

    @given(st.lists(st.integers(0, 2), min_size=4, max_size=4))
    def test_hard_equals_twice_edge_stat(self, labels):
        a = adjacency_from_edges(4, [(0, 1), (1, 2), (2, 3), (0, 2)])
        c = np.eye(3)[labels]
        z = LabelField(np.array(labels), 3)
        assert penalty_G(Responsibilities(c), a) == pytest.approx(2.0 * same_label_edges(z, a))

    def test_length_mismatch(self, path4):
        with pytest.raises(LengthMismatch):
            penalty_G(Responsibilities(np.eye(2)), path4)


class TestEStep:
    def test_lambda_zero_is_standard_posterior(self, ):
        panel, bases, basis, params, labels = toy_problem(seed=5)
        a = adjacency_from_edges(panel.n_sites, [(i, i + 1) for i in range(panel.n_sites - 1)])
        c = e_step(panel, params, basis, a, lam=0.0).c
        ll = loglik_matrix(panel.values, params, basis)
        logw = np.log(params.pi)[None, :] + ll
        expected = np.exp(logw - logw.max(axis=1, keepdims=True))
        expected /= expected.sum(axis=1, keepdims=True)
        assert np.allclose(c, expected, atol=1e-14)

    def test_symmetric_isolated_site(self):
        # equal mixing, mirrored likelihoods, no neighbors: perfect split
        ll = np.array([[ -5.0, -5.0]])
        a = adjacency_from_edges(1, [])
        c = _e_step_core(ll, np.log(np.array([0.5, 0.5])), a, lam=1.0).c
        assert np.allclose(c, [[0.5, 0.5]])

    def test_neighbor_pull_is_directional(self):
        # middle site is torn; both neighbors strongly favor component 0
        ll = np.array([[0.0, -40.0], [0.0, 0.0], [0.0, -40.0]])
        a = adjacency_from_edges(3, [(0, 1), (1, 2)])
        logpi = np.log(np.array([0.5, 0.5]))
        c0 = _e_step_core(ll, logpi, a, lam=0.0).c
        c1 = _e_step_core(ll, logpi, a, lam=1.0).c
        assert c1[1, 0] > c0[1, 0]
        assert c0[1, 0] == pytest.approx(0.5)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        ll = rng.normal(size=(8, 3)) * 5
        a = adjacency_from_edges(8, [(i, (i + 1) % 8) for i in range(8)])
        c = _e_step_core(ll, np.log(np.full(3, 1 / 3)), a, lam=0.7).c
        assert np.allclose(c.sum(axis=1), 1.0, atol=1e-12)

    def test_fixed_point_divergence_raises(self, monkeypatch):
        monkeypatch.setattr(nem_mod, "_FIXED_POINT_MAX_ITERS", 1)
        ll = np.array([[0.0, -3.0], [-3.0, 0.0], [0.0, -3.0]])
        a = adjacency_from_edges(3, [(0, 1), (1, 2)])
        with pytest.raises(FixedPointDiverged):
            _e_step_core(ll, np.log(np.array([0.5, 0.5])), a, lam=2.0)


class TestMStep:
    def test_hard_labels_are_per_cluster_ols(self):
        panel, bases, basis, params, labels = toy_problem(seed=6)
        c = Responsibilities(np.eye(2)[labels])
        out = m_step(panel, c, basis)
        for k in range(2):
            members = panel.values[labels == k]
            design = basis.design(k)
            stacked_y = members.ravel()
            stacked_x = np.tile(design, (members.shape[0], 1))
            coef, *_ = np.linalg.lstsq(stacked_x, stacked_y, rcond=None)
            assert np.allclose([out.mu0[k], out.b_trend[k], out.b_seas[k]], coef, atol=1e-8)
            resid = stacked_y - stacked_x @ coef
            assert out.nu[k] == pytest.approx(float(np.mean(resid**2)), rel=1e-8)

    def test_single_component_constant_series(self):
        values = np.full((3, 104), 4.2)
        panel = make_panel(values)
        bases = decompose_panel(values, panel.site_ids, 26)
        labels = np.zeros(3, dtype=int)
        basis = basis_from_labels(bases, labels, 2)
        c = np.zeros((3, 2))
        c[:, 0] = 1.0 - 1e-6
        c[:, 1] = 1e-6
        out = m_step(panel, Responsibilities(c), basis)
        assert out.mu0[0] == pytest.approx(4.2)
        assert out.b_trend[0] == pytest.approx(0.0, abs=1e-6)
        assert out.b_seas[0] == pytest.approx(0.0, abs=1e-6)
        assert out.nu[0] > 0  # floored, never exactly zero

    def test_weighted_matches_lstsq_oracle(self):
        rng = np.random.default_rng(9)
        panel, bases, basis, params, labels = toy_problem(seed=7)
        w = rng.uniform(0.05, 0.95, size=(panel.n_sites, 1))
        c = Responsibilities(np.hstack([w, 1 - w]))
        out = m_step(panel, c, basis)
        for k in range(2):
            design = basis.design(k)
            wk = c.c[:, k]
            rows = np.vstack([np.sqrt(wi) * design for wi in wk])
            y = np.concatenate([np.sqrt(wi) * panel.values[i] for i, wi in enumerate(wk)])
            coef, *_ = np.linalg.lstsq(rows, y, rcond=None)
            assert np.allclose([out.mu0[k], out.b_trend[k], out.b_seas[k]], coef, atol=1e-8)

    def test_empty_component_raises(self):
        panel, bases, basis, params, labels = toy_problem(seed=8)
        c = np.zeros((panel.n_sites, 2))
        c[:, 0] = 1.0
        with pytest.raises(EmptyComponent):
            m_step(panel, Responsibilities(c), basis)


def reference_em(panel, a, n_components, labels0, site_bases, max_iters=100, tol=1e-6):
    """Plain EM twin: same loop shape as fit_nem with the penalty removed."""
    basis = basis_from_labels(site_bases, labels0, n_components)
    c = np.eye(n_components)[labels0]
    params = m_step(panel, Responsibilities(c), basis)
    ll = loglik_matrix(panel.values, params, basis)
    u_prev = -np.inf
    trace = []
    for _ in range(max_iters):
        logw = np.log(params.pi)[None, :] + ll
        c_new = np.exp(logw - logw.max(axis=1, keepdims=True))
        c_new /= c_new.sum(axis=1, keepdims=True)
        if hathaway_criterion(ll, c_new, params.pi, a, 0.0) < hathaway_criterion(ll, c, params.pi, a, 0.0):
            c_new = c
        params = m_step(panel, Responsibilities(c_new), basis)
        ll = loglik_matrix(panel.values, params, basis)
        u = hathaway_criterion(ll, c_new, params.pi, a, 0.0)
        hard = np.argmax(c_new, axis=1)
        basis_new = basis_from_labels(site_bases, hard, n_components, previous=basis)
        params_new = m_step(panel, Responsibilities(c_new), basis_new)
        ll_new = loglik_matrix(panel.values, params_new, basis_new)
        u_new = hathaway_criterion(ll_new, c_new, params_new.pi, a, 0.0)
        if u_new >= u:
            basis, params, ll, u = basis_new, params_new, ll_new, u_new
        c = c_new
        trace.append(u)
        if u - u_prev < tol:
            break
        u_prev = u
    return np.argmax(c, axis=1), params, trace


class TestFitNem:
    def _scenario(self, seed):
        spec = SimSpec(n_sites=9, n_components=2, delta=0.8, n_times=104, period=26, seed=seed)
        return simulate_catchment(spec)

    def test_lambda_zero_equals_classical_em(self):
        sim = self._scenario(11)
        panel = align_panel(sim.dataset)
        site_bases = decompose_panel(panel.values, panel.site_ids, 26)
        labels0 = np.array([i % 2 for i in range(9)])
        fit = fit_nem(panel, sim.adjacency, lam=0.0, n_components=2, init=labels0,
                      period=26, site_bases=site_bases, seed=0)
        ref_labels, ref_params, ref_trace = reference_em(panel, sim.adjacency, 2, labels0, site_bases)
        assert np.array_equal(fit.map_labels, ref_labels)
        assert np.allclose(fit.params.mu0, ref_params.mu0, rtol=1e-10)
        assert np.allclose(fit.params.nu, ref_params.nu, rtol=1e-10)
        assert np.allclose(fit.diagnostics["objective_trace"], ref_trace, rtol=1e-10)

    def test_objective_trace_non_decreasing(self):
        for seed in range(4):
            sim = self._scenario(seed)
            fit = fit_nem(sim.dataset, sim.adjacency, lam=1.0, n_components=2,
                          period=26, seed=seed, restarts=2)
            tr = fit.diagnostics["objective_trace"]
            assert all(tr[i + 1] >= tr[i] - 1e-8 for i in range(len(tr) - 1)), tr

    def test_lambda_zero_ignores_adjacency(self):
        sim = self._scenario(13)
        panel = align_panel(sim.dataset)
        site_bases = decompose_panel(panel.values, panel.site_ids, 26)
        labels0 = np.array([i % 2 for i in range(9)])
        empty = adjacency_from_edges(9, [])
        fit_a = fit_nem(panel, sim.adjacency, lam=0.0, n_components=2, init=labels0,
                        period=26, site_bases=site_bases)
        fit_b = fit_nem(panel, empty, lam=0.0, n_components=2, init=labels0,
                        period=26, site_bases=site_bases)
        assert np.array_equal(fit_a.map_labels, fit_b.map_labels)
        assert np.allclose(fit_a.params.mu0, fit_b.params.mu0)
        assert fit_a.sse == pytest.approx(fit_b.sse)

    def test_recovery_on_separated_data(self):
        spec = SimSpec(n_sites=16, n_components=3, delta=1.0, n_times=156, period=52, seed=21)
        sim = simulate_catchment(spec)
        fit = fit_nem(sim.dataset, sim.adjacency, lam=1.0, n_components=3, seed=2, restarts=4)
        assert recovery_score(sim.truth, fit.map_labels) >= 0.9

    def test_sse_matches_fitted(self):
        sim = self._scenario(17)
        panel = align_panel(sim.dataset)
        fit = fit_nem(panel, sim.adjacency, lam=0.5, n_components=2, period=26, seed=3, restarts=2)
        assert fit.sse == pytest.approx(sum_squared_error(panel.values, fit.fitted))
