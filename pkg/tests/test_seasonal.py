from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from catchmix.errors import EmptyComponent, SeriesTooShort, SpanTooSmall
from catchmix.seasonal import (
    basis_from_labels,
    default_spans,
    landuse_basis,
    loess_smooth,
    stl_decompose,
)


def rms(a):
    return float(np.sqrt(np.mean(np.square(a))))


class TestLoess:
    def test_constant_is_fixed_point(self):
        y = np.full(50, 3.7)
        x = np.arange(50.0)
        for span in (0.2, 0.5, 1.0):
            assert np.allclose(loess_smooth(y, x, span), 3.7, atol=1e-12)

    def test_exact_on_linear(self):
        x = np.arange(80.0)
        y = 2.0 - 0.3 * x
        for span in (0.1, 0.4, 1.0):
            assert np.max(np.abs(loess_smooth(y, x, span, degree=1) - y)) < 1e-10

    def test_polynomial_idempotence(self):
        x = np.arange(60.0)
        y = 1.0 + 0.05 * x + 0.002 * x**2
        out = loess_smooth(y, x, 0.5, degree=2)
        assert np.max(np.abs(out - y)) < 1e-8

    def test_degree0_on_constant(self):
        x = np.arange(30.0)
        assert np.allclose(loess_smooth(np.full(30, 5.0), x, 0.3, degree=0), 5.0)

    def test_noisy_sine_rmse(self):
        rng = np.random.default_rng(42)
        n = 200
        x = np.arange(n, dtype=float)
        clean = np.sin(2 * np.pi * x / 52)
        y = clean + rng.normal(0, 0.1, n)
        fitted = loess_smooth(y, x, span=0.1, degree=1)
        assert rms(fitted - clean) < 0.1

    def test_matches_reference_lowess(self):
        # independent implementation of the same local regression
        from statsmodels.nonparametric.smoothers_lowess import lowess

        rng = np.random.default_rng(7)
        n = 163
        x = np.arange(n, dtype=float)
        y = np.sin(2 * np.pi * x / 40) + 0.3 * rng.normal(size=n)
        for span in (0.13, 0.31, 0.8):
            mine = loess_smooth(y, x, span, degree=1)
            ref = lowess(y, x, frac=span, it=0, return_sorted=False)
            assert np.max(np.abs(mine - ref)) < 1e-10, span

    def test_span_too_small(self):
        x = np.arange(20.0)
        with pytest.raises(SpanTooSmall):
            loess_smooth(x, x, span=0.05, degree=2)
        with pytest.raises(SpanTooSmall):
            loess_smooth(x, x, span=0.0)


class TestStl:
    def test_constant_series(self):
        sb = stl_decompose(np.full(120, 2.5), period=52)
        assert sb.f_const == pytest.approx(2.5)
        assert sb.trend_scale == pytest.approx(0.0, abs=1e-9)
        assert sb.seasonal_scale == pytest.approx(0.0, abs=1e-9)

    def test_planted_trend_and_sine(self):
        t = np.arange(260, dtype=float)
        y = 2.0 + 0.01 * t + np.sin(2 * np.pi * t / 52)
        sb = stl_decompose(y, period=52)
        corr = np.corrcoef(sb.seasonal_component, np.sin(2 * np.pi * t / 52))[0, 1]
        assert corr >= 0.99
        trend = sb.f_const + sb.trend_component
        true_trend = 2.0 + 0.01 * t
        assert rms(trend - true_trend) <= 0.05 * rms(true_trend)

    def test_reconstruction_identity(self):
        rng = np.random.default_rng(5)
        for _ in range(5):
            n = int(rng.integers(104, 310))
            y = rng.normal(size=n).cumsum() + 3 * np.sin(2 * np.pi * np.arange(n) / 52)
            sb = stl_decompose(y, period=52)
            assert np.max(np.abs(sb.reconstruct() - y)) <= 1e-10

    def test_unit_norm_shapes(self):
        rng = np.random.default_rng(6)
        y = rng.normal(size=208) + np.sin(2 * np.pi * np.arange(208) / 52)
        sb = stl_decompose(y, period=52)
        assert np.linalg.norm(sb.f_trend) == pytest.approx(1.0, abs=1e-12)
        assert np.linalg.norm(sb.f_seasonal) == pytest.approx(1.0, abs=1e-12)

    def test_seasonal_cycle_means_near_zero(self):
        rng = np.random.default_rng(8)
        t = np.arange(260, dtype=float)
        y = 1.0 + 0.02 * t + 2 * np.sin(2 * np.pi * t / 52) + 0.3 * rng.normal(size=260)
        sb = stl_decompose(y, period=52)
        seasonal = sb.seasonal_component
        for c in range(260 // 52):
            cycle_mean = seasonal[c * 52 : (c + 1) * 52].mean()
            assert abs(cycle_mean) <= 1e-6 * max(sb.seasonal_scale, 1e-12)

    def test_matches_reference_stl_trend(self):
        from statsmodels.tsa.seasonal import STL

        rng = np.random.default_rng(7)
        t = np.arange(260, dtype=float)
        y = 2.0 + 0.01 * t + np.sin(2 * np.pi * t / 52) + rng.normal(0, 0.2, 260)
        sb = stl_decompose(y, period=52)
        ref = STL(y, period=52, seasonal=7, robust=False).fit(inner_iter=2, outer_iter=0)
        my_trend = sb.f_const + sb.trend_component
        assert rms(my_trend - ref.trend) <= 0.05 * rms(ref.trend)
        # seasonal parts should agree closely too
        assert rms(sb.seasonal_component - ref.seasonal) < 0.05

    def test_series_too_short(self):
        with pytest.raises(SeriesTooShort):
            stl_decompose(np.ones(103), period=52)

    def test_default_spans(self):
        n_s, n_t, n_l = default_spans(52)
        assert n_s == 7 and n_t % 2 == 1 and n_l % 2 == 1
        assert n_t >= 1.5 * 52 / (1 - 1.5 / 7)
        assert n_l >= 52


def _basis_fixture(rng, n_sites=5, n=104, period=26):
    t = np.arange(n, dtype=float)
    bases = []
    for i in range(n_sites):
        y = (
            float(rng.normal(2, 1))
            + 0.01 * float(rng.normal()) * t
            + float(rng.uniform(0.5, 2)) * np.sin(2 * np.pi * t / period)
            + 0.1 * rng.normal(size=n)
        )
        bases.append(stl_decompose(y, period=period, site_id=f"S{i}"))
    return bases


class TestLanduseBasis:
    def test_single_member_exact(self):
        bases = _basis_fixture(np.random.default_rng(0))
        labels = np.array([0, 1, 1, 1, 1])
        out = landuse_basis(bases, labels, 0, 3)
        assert np.allclose(out, bases[0].seasonal_component)

    def test_two_member_mean(self):
        bases = _basis_fixture(np.random.default_rng(1))
        labels = np.array([0, 0, 1, 1, 1])
        out = landuse_basis(bases, labels, 0, 2)
        expected = 0.5 * (bases[0].trend_component + bases[1].trend_component)
        assert np.allclose(out, expected)

    def test_empty_component(self):
        bases = _basis_fixture(np.random.default_rng(2))
        with pytest.raises(EmptyComponent):
            landuse_basis(bases, np.zeros(5, dtype=int), 1, 2)

    def test_member_order_invariance(self):
        bases = _basis_fixture(np.random.default_rng(3))
        labels = np.array([0, 0, 0, 1, 1])
        out1 = landuse_basis(bases, labels, 0, 3)
        perm = [2, 0, 1, 3, 4]
        out2 = landuse_basis([bases[i] for i in perm], labels[perm], 0, 3)
        assert np.allclose(out1, out2)

    def test_label_equivariance(self):
        bases = _basis_fixture(np.random.default_rng(4))
        labels = np.array([0, 1, 0, 2, 1])
        b1 = basis_from_labels(bases, labels, 3)
        relabel = np.array([2, 0, 1])  # k -> relabel[k]
        b2 = basis_from_labels(bases, relabel[labels], 3)
        for k in range(3):
            assert np.allclose(b1.trend[k], b2.trend[relabel[k]])
            assert np.allclose(b1.seasonal[k], b2.seasonal[relabel[k]])
            assert b1.counts[k] == b2.counts[relabel[k]]

    def test_empty_group_keeps_previous(self):
        bases = _basis_fixture(np.random.default_rng(5))
        full = basis_from_labels(bases, np.array([0, 0, 1, 1, 1]), 2)
        collapsed = basis_from_labels(bases, np.ones(5, dtype=int), 2, previous=full)
        assert collapsed.counts[0] == 0
        assert np.allclose(collapsed.trend[0], full.trend[0])
        assert np.allclose(collapsed.const[0], full.const[0])
