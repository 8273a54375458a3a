import math

import numpy as np
import pytest

from featurescope.errors import DomainError
from featurescope.numutil import RngState, log_vmf_norm_const, sample_vmf
from featurescope.vmf import (
    KAPPA_MAX,
    KappaTable,
    VmfParams,
    build_kappa_table,
    constant_kappa_table,
    estimate_kappa_mle,
    isotonic_non_decreasing,
    kappa_lookup,
    kappa_slope,
    revised_log_likelihood,
    vmf_log_pdf,
)


def random_rotation(g: np.random.Generator, d: int) -> np.ndarray:
    q, r = np.linalg.qr(g.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


class TestVmfLogPdf:
    def test_uniform_on_sphere(self):
        params = VmfParams(mu=np.array([1.0, 0.0, 0.0]), kappa=0.0)
        want = math.log(1.0 / (4 * math.pi))
        for f in [np.array([0.0, 2.0, 0.0]), np.array([1.0, 1.0, 1.0])]:
            assert vmf_log_pdf(f, params) == pytest.approx(want, abs=1e-9)

    def test_parallel_direction_d3(self):
        params = VmfParams(mu=np.array([0.0, 0.0, 1.0]), kappa=2.0)
        want = math.log(2.0 / (4 * math.pi * math.sinh(2.0))) + 2.0
        assert vmf_log_pdf(np.array([0.0, 0.0, 5.0]), params) == pytest.approx(want, abs=1e-10)

    def test_rotation_invariance(self):
        g = np.random.default_rng(2)
        for _ in range(10):
            mu = g.standard_normal(4)
            mu /= np.linalg.norm(mu)
            f = g.standard_normal(4)
            rot = random_rotation(g, 4)
            before = vmf_log_pdf(f, VmfParams(mu=mu, kappa=3.5))
            after = vmf_log_pdf(rot @ f, VmfParams(mu=rot @ mu, kappa=3.5))
            assert after == pytest.approx(before, abs=1e-9)

    def test_zero_vector_error(self):
        with pytest.raises(DomainError):
            vmf_log_pdf(np.zeros(3), VmfParams(mu=np.array([1.0, 0.0, 0.0]), kappa=1.0))


class TestEstimateKappaMle:
    def test_symmetric_cancellation(self):
        e1 = np.array([1.0, 0.0, 0.0])
        samples = np.array([e1, -e1] * 10)
        assert estimate_kappa_mle(samples, 3) == 0.0

    def test_identical_samples_capped(self):
        samples = np.tile(np.array([0.0, 1.0, 0.0]), (5, 1))
        assert estimate_kappa_mle(samples, 3) == KAPPA_MAX

    def test_round_trip(self):
        rng = RngState(3)
        mu = np.array([0.0, 0.0, 1.0])
        draws = np.array([sample_vmf(mu, 100.0, rng) for _ in range(10_000)])
        est = estimate_kappa_mle(draws, 3)
        assert abs(est - 100.0) / 100.0 < 0.05

    def test_rotation_invariance(self):
        g = np.random.default_rng(4)
        rng = RngState(11)
        mu = np.array([1.0, 0.0, 0.0, 0.0])
        draws = np.array([sample_vmf(mu, 7.0, rng) for _ in range(500)])
        rot = random_rotation(g, 4)
        a = estimate_kappa_mle(draws, 4)
        b = estimate_kappa_mle(draws @ rot.T, 4)
        assert b == pytest.approx(a, abs=1e-9)

    def test_errors(self):
        with pytest.raises(DomainError):
            estimate_kappa_mle(np.zeros((3, 3)), 3)
        with pytest.raises(DomainError):
            estimate_kappa_mle(np.ones((1, 3)), 3)


class TestIsotonic:
    def test_already_monotone_unchanged(self):
        v = [1.0, 2.0, 3.0]
        np.testing.assert_array_equal(isotonic_non_decreasing(v), v)

    def test_single_violation_pooled(self):
        np.testing.assert_allclose(isotonic_non_decreasing([1.0, 3.0, 2.0]),
                                   [1.0, 2.5, 2.5])

    def test_projection_properties(self):
        g = np.random.default_rng(5)
        for _ in range(25):
            v = g.standard_normal(12)
            out = isotonic_non_decreasing(v)
            assert np.all(np.diff(out) >= -1e-12)
            # mean preserved by PAVA with unit weights
            assert out.mean() == pytest.approx(v.mean(), abs=1e-12)


class TestBuildKappaTable:
    def test_noise_only_strength_small_kappa(self):
        table = build_kappa_table(3, 1.0, np.array([0.0, 1.0, 5.0]), 10_000, RngState(0))
        assert table.kappas[0] < 0.1

    def test_strong_signal_matches_small_angle_limit(self):
        grid = np.geomspace(0.25, 20.0, 48)
        table = build_kappa_table(3, 1.0, grid, 10_000, RngState(42))
        k10 = kappa_lookup(table, 10.0)
        assert abs(k10 - 100.0) / 100.0 < 0.20

    def test_sigma_doubling_reduces_kappa(self):
        grid = np.geomspace(1.0, 10.0, 12)
        narrow = build_kappa_table(3, 1.0, grid, 10_000, RngState(1))
        wide = build_kappa_table(3, 2.0, grid, 10_000, RngState(2))
        assert np.all(wide.kappas < narrow.kappas)

    def test_monotone_after_isotonic_pass(self):
        table = build_kappa_table(4, 0.7, np.geomspace(1e-3, 8.0, 64), 500, RngState(9))
        assert np.all(np.diff(table.kappas) >= 0.0)

    def test_empty_grid_error(self):
        with pytest.raises(DomainError):
            build_kappa_table(3, 1.0, np.array([]), 1000, RngState(0))

    def test_small_sample_count_error(self):
        with pytest.raises(DomainError):
            build_kappa_table(3, 1.0, np.array([1.0]), 99, RngState(0))


class TestKappaLookup:
    def table(self):
        return KappaTable(dim=3, sigma=1.0, strengths=np.array([1.0, 2.0, 4.0]),
                          kappas=np.array([1.0, 5.0, 9.0]), sample_count=100)

    def test_grid_point_exact(self):
        t = self.table()
        assert kappa_lookup(t, 2.0) == 5.0

    def test_midpoint_mean(self):
        t = self.table()
        assert kappa_lookup(t, 1.5) == pytest.approx(3.0, abs=1e-12)

    def test_clamped_outside(self):
        t = self.table()
        assert kappa_lookup(t, 100.0) == 9.0
        assert kappa_lookup(t, 0.0) == 1.0

    def test_slope_inside_and_outside(self):
        t = self.table()
        assert kappa_slope(t, 1.5) == pytest.approx(4.0)
        assert kappa_slope(t, 3.0) == pytest.approx(2.0)
        assert kappa_slope(t, 0.5) == 0.0
        assert kappa_slope(t, 5.0) == 0.0

    def test_vectorized(self):
        t = self.table()
        np.testing.assert_allclose(kappa_lookup(t, np.array([1.0, 1.5, 9.0])),
                                   [1.0, 3.0, 9.0])

    def test_table_invariant_validation(self):
        with pytest.raises(DomainError):
            KappaTable(dim=3, sigma=1.0, strengths=np.array([1.0, 1.0]),
                       kappas=np.array([1.0, 2.0]), sample_count=100)
        with pytest.raises(DomainError):
            KappaTable(dim=3, sigma=1.0, strengths=np.array([1.0, 2.0]),
                       kappas=np.array([2.0, 1.0]), sample_count=100)


class TestRevisedLogLikelihood:
    def table(self):
        return KappaTable(dim=3, sigma=1.0, strengths=np.array([1.0, 2.0, 4.0]),
                          kappas=np.array([2.0, 6.0, 12.0]), sample_count=100)

    def test_parallel_at_grid_point(self):
        t = self.table()
        mu = np.array([1.0, 0.0, 0.0])
        f = 2.0 * mu
        want = log_vmf_norm_const(3, 6.0) + 6.0
        assert revised_log_likelihood(f, mu, t) == pytest.approx(want, abs=1e-12)

    def test_scaling_changes_only_kappa(self):
        t = self.table()
        mu = np.array([0.0, 1.0, 0.0])
        f = np.array([0.3, 0.9, 0.1])
        f = f / np.linalg.norm(f)  # strength 1
        cos = float(f @ mu)
        a = revised_log_likelihood(f, mu, t)
        b = revised_log_likelihood(2.0 * f, mu, t)
        assert a == pytest.approx(log_vmf_norm_const(3, 2.0) + 2.0 * cos, abs=1e-12)
        assert b == pytest.approx(log_vmf_norm_const(3, 6.0) + 6.0 * cos, abs=1e-12)

    def test_monotone_in_cosine(self):
        t = self.table()
        f = np.array([1.0, 1.0, 0.0])
        mu_near = np.array([1.0, 0.0, 0.0])
        mu_far = np.array([0.0, 0.0, 1.0])
        assert revised_log_likelihood(f, mu_near, t) > revised_log_likelihood(f, mu_far, t)

    def test_maximized_at_own_direction(self):
        t = self.table()
        g = np.random.default_rng(8)
        for _ in range(20):
            f = g.standard_normal(3) * 2.0
            own = f / np.linalg.norm(f)
            best = revised_log_likelihood(f, own, t)
            probe = g.standard_normal(3)
            probe /= np.linalg.norm(probe)
            assert revised_log_likelihood(f, probe, t) <= best + 1e-12

    def test_zero_vector_error(self):
        with pytest.raises(DomainError):
            revised_log_likelihood(np.zeros(3), np.array([1.0, 0.0, 0.0]), self.table())


def test_constant_table_lookup():
    t = constant_kappa_table(3, 7.0)
    assert kappa_lookup(t, 0.01) == 7.0
    assert kappa_lookup(t, 500.0) == 7.0
    assert kappa_slope(t, 1.0) == 0.0
