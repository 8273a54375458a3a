import math

import numpy as np
import pytest

from featurescope.errors import DegenerateComponentError, DomainError
from featurescope.mixture import (
    MixtureModel,
    average_log_likelihood,
    best_permutation_cosines,
    em_e_step,
    em_m_step,
    fit_em,
    posterior,
)
from featurescope.numutil import RngState, sample_vmf
from featurescope.vmf import KappaTable, constant_kappa_table, kappa_lookup

from conftest import unit_rows


def simple_model(kappa=5.0, priors=None, dirs=None, dim=3):
    table = constant_kappa_table(dim, kappa)
    if dirs is None:
        dirs = np.eye(dim)[: (2 if priors is None else len(priors))]
    if priors is None:
        priors = np.full(len(dirs), 1.0 / len(dirs))
    return MixtureModel(priors=np.asarray(priors, float), directions=np.asarray(dirs, float),
                        kappa_table=table)


class TestPosterior:
    def test_single_category(self):
        model = simple_model(priors=[1.0], dirs=[[1.0, 0.0, 0.0]])
        np.testing.assert_allclose(posterior(np.array([0.3, 0.2, 0.1]), model), [1.0])

    def test_equiangular_symmetry(self):
        model = simple_model()
        g = np.array([1.0, 1.0, 0.0])
        np.testing.assert_allclose(posterior(g, model), [0.5, 0.5], atol=1e-12)

    def test_hand_computed_example(self):
        table = KappaTable(dim=3, sigma=1.0, strengths=np.array([1.0, 2.0, 3.0]),
                           kappas=np.array([5.0, 5.0, 5.0]), sample_count=100)
        model = MixtureModel(priors=np.array([0.5, 0.5]),
                             directions=np.array([[1.0, 0, 0], [0, 1.0, 0]]),
                             kappa_table=table)
        got = posterior(np.array([2.0, 0.0, 0.0]), model)
        want = [1.0 / (1.0 + math.exp(-5.0)), 1.0 / (1.0 + math.exp(5.0))]
        np.testing.assert_allclose(got, want, atol=1e-12)
        assert got[0] == pytest.approx(0.993307, abs=1e-6)

    def test_sums_to_one(self):
        g = np.random.default_rng(0)
        model = simple_model(kappa=30.0, priors=[0.2, 0.3, 0.5], dirs=np.eye(3))
        for _ in range(25):
            p = posterior(g.standard_normal(3), model)
            assert abs(p.sum() - 1.0) < 1e-9

    def test_log_shift_invariance(self):
        # multiplying every unnormalized score by a positive constant shifts
        # all log scores by one additive offset; the posterior is unchanged
        from featurescope.mixture import _log_scores
        from featurescope.numutil import softmax

        model = simple_model(kappa=3.0)
        g = np.array([[0.5, -0.2, 0.8]])
        scores = _log_scores(g, model)
        np.testing.assert_allclose(softmax(scores + 987.0, axis=1),
                                   softmax(scores, axis=1), atol=1e-12)
        np.testing.assert_allclose(softmax(scores, axis=1)[0],
                                   posterior(g[0], model), atol=1e-14)

    def test_argmax_invariant_to_rescaling_with_constant_table(self):
        model = simple_model(kappa=4.0, priors=[0.3, 0.7])
        g = np.random.default_rng(1)
        for _ in range(20):
            x = g.standard_normal(3)
            a = posterior(x, model)
            b = posterior(7.3 * x, model)
            assert np.argmax(a) == np.argmax(b)
            np.testing.assert_allclose(a, b, atol=1e-12)

    def test_zero_vector_error(self):
        with pytest.raises(DomainError):
            posterior(np.zeros(3), simple_model())


class TestEStep:
    def test_single_category_all_ones(self):
        model = simple_model(priors=[1.0], dirs=[[0.0, 0.0, 1.0]])
        G = np.random.default_rng(2).standard_normal((6, 3))
        R = em_e_step(model, G)
        np.testing.assert_allclose(R, np.ones((6, 1)))

    def test_bisector_symmetry(self):
        model = simple_model()
        G = np.array([[1.0, 1.0, 0.0], [2.0, 2.0, 0.0]])
        R = em_e_step(model, G)
        np.testing.assert_allclose(R[:, 0], R[:, 1], atol=1e-12)

    def test_matches_posterior_rowwise(self):
        g = np.random.default_rng(3)
        model = simple_model(kappa=12.0, priors=[0.25, 0.25, 0.5], dirs=unit_rows(g, 3, 3))
        G = g.standard_normal((10, 3)) * 2.0
        R = em_e_step(model, G)
        for i in range(10):
            np.testing.assert_allclose(R[i], posterior(G[i], model), atol=1e-12)


class TestMStep:
    def test_all_mass_single_category(self):
        # the massless second component gets prior 0 and a placeholder
        # direction; the first is the normalized resultant
        table = constant_kappa_table(3, 5.0)
        G = np.array([[2.0, 0, 0], [3.0, 0, 0], [1.0, 0, 0]])
        R = np.column_stack([np.ones(3), np.zeros(3)])
        model = em_m_step(R, G, table)
        np.testing.assert_allclose(model.directions[0], [1.0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(model.priors, [1.0, 0.0], atol=1e-12)

    def test_trivial_alignment(self):
        table = constant_kappa_table(3, 5.0)
        G = np.array([[2.0, 0, 0], [3.0, 0, 0], [1.0, 0, 0], [0.0, 1.0, 0.0]])
        R = np.array([[1.0, 0], [1.0, 0], [1.0, 0], [0.0, 1.0]])
        model = em_m_step(R, G, table)
        np.testing.assert_allclose(model.directions[0], [1.0, 0, 0], atol=1e-12)
        np.testing.assert_allclose(model.priors, [0.75, 0.25], atol=1e-12)

    def test_exact_cancellation_degenerate(self):
        table = constant_kappa_table(3, 5.0)
        G = np.array([[1.0, 0, 0], [-1.0, 0, 0]])
        R = np.array([[1.0, 0.0], [1.0, 0.0]])
        with pytest.raises(DegenerateComponentError):
            em_m_step(R, G, table)

    def test_matches_straight_line_oracle(self):
        # independent loop-based implementation of the same update
        g = np.random.default_rng(5)
        table = constant_kappa_table(4, 3.0)
        n, C, d = 12, 3, 4
        G = g.standard_normal((n, d)) * 1.5
        R = g.random((n, C))
        R /= R.sum(axis=1, keepdims=True)
        model = em_m_step(R, G, table)

        mu_want = np.zeros((C, d))
        for y in range(C):
            acc = np.zeros(d)
            for i in range(n):
                l = np.linalg.norm(G[i])
                o = G[i] / l
                acc += kappa_lookup(table, l) * R[i, y] * o
            mu_want[y] = acc / np.linalg.norm(acc)
        pi_want = R.mean(axis=0)
        np.testing.assert_allclose(model.directions, mu_want, atol=1e-10)
        np.testing.assert_allclose(model.priors, pi_want / pi_want.sum(), atol=1e-10)


class TestFitEm:
    def make_mixture_data(self, n=3000, kappa_true=50.0, seed=123):
        rng = RngState(seed)
        true_dirs = np.eye(3)
        G = []
        for i in range(n):
            direction = sample_vmf(true_dirs[i % 3], kappa_true, rng)
            G.append(direction * rng.generator.uniform(0.5, 3.0))
        return np.asarray(G), true_dirs

    def test_synthetic_recovery(self):
        G, true_dirs = self.make_mixture_data()
        table = constant_kappa_table(3, 50.0)
        res = fit_em(G, 3, table)
        cosines = best_permutation_cosines(true_dirs, res.model.directions)
        assert np.all(cosines >= 0.95)

    def test_log_likelihood_monotone(self):
        G, _ = self.make_mixture_data(n=600, seed=7)
        table = constant_kappa_table(3, 50.0)
        res = fit_em(G, 3, table, tol=1e-12, max_iters=40)
        diffs = np.diff(res.trace)
        assert np.all(diffs >= -1e-8)

    def test_single_component_mean_direction(self):
        g = np.random.default_rng(9)
        G = g.standard_normal((50, 3)) + np.array([4.0, 0.0, 0.0])
        table = constant_kappa_table(3, 10.0)
        res = fit_em(G, 1, table, max_iters=5)
        # kappa-weighted mean direction of the data, reached after one step
        norms = np.linalg.norm(G, axis=1)
        acc = (kappa_lookup(table, norms)[:, None] * (G / norms[:, None])).sum(axis=0)
        np.testing.assert_allclose(res.model.directions[0], acc / np.linalg.norm(acc),
                                   atol=1e-9)
        np.testing.assert_allclose(res.model.priors, [1.0])

    def test_requires_enough_samples(self):
        table = constant_kappa_table(3, 5.0)
        with pytest.raises(DomainError):
            fit_em(np.ones((2, 3)), 3, table)

    def test_average_log_likelihood_finite(self):
        G, _ = self.make_mixture_data(n=120, seed=5)
        table = constant_kappa_table(3, 50.0)
        res = fit_em(G, 3, table)
        assert math.isfinite(average_log_likelihood(res.model, G))
