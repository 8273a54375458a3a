import numpy as np
import pytest

from featurescope.errors import DomainError, SizeError, UndefinedCorrelationError
from featurescope.importance import (
    ImportanceConfig,
    ImportanceWeights,
    LinearSoftmaxHead,
    exact_shapley,
    fit_importance,
    importance_kl_loss,
    importance_shapley_correlation,
    project_l1,
    raw_region_score,
)
from featurescope.numutil import RngState, grad_check
from featurescope.region_embed import RegionalBatch
from featurescope.synth import gen_regional_batch

from conftest import make_regional_spec


def small_batch(seed=0, n=5, K=4, C=3, H=2, W=2):
    g = RngState(seed).generator
    maps = g.standard_normal((n, K, H, W)) + 0.3
    logits = g.standard_normal((n, C)) * 2.0
    return RegionalBatch(maps=maps, logits=logits, labels=g.integers(0, C, n),
                         ids=[f"s{i}" for i in range(n)])


class TestRawRegionScore:
    def test_uniform_v_parallel(self):
        K = 4
        f = np.array([1.0, 2.0, 3.0, 4.0])
        v = np.full(K, 1.0 / K)
        got = raw_region_score(f, f, v, kappa_tilde=80.0)
        assert got == pytest.approx(80.0 / K, abs=1e-12)

    def test_disjoint_supports(self):
        a = np.array([1.0, 1.0, 0.0, 0.0])
        b = np.array([0.0, 0.0, 1.0, 1.0])
        assert raw_region_score(a, b, np.full(4, 0.25), 1000.0) == 0.0

    def test_hand_computed(self):
        a = np.array([1.0, 0.0, 1.0, 0.0])
        b = np.array([1.0, 1.0, 0.0, 0.0])
        v = np.array([0.4, 0.3, 0.2, 0.1])
        # a/|a| . b/|b| channelwise: [0.5*0.4, 0, 0, 0] summed, scaled by 10
        want = 10.0 * (0.4 * (1 / np.sqrt(2)) * (1 / np.sqrt(2)))
        assert raw_region_score(a, b, v, 10.0) == pytest.approx(want, abs=1e-12)

    def test_rescaling_invariance(self):
        g = np.random.default_rng(0)
        a, b = g.standard_normal(5), g.standard_normal(5)
        v = project_l1(g.random(5))
        base = raw_region_score(a, b, v, 7.0)
        assert raw_region_score(3.0 * a, b, v, 7.0) == pytest.approx(base, rel=1e-12)
        assert raw_region_score(a, 0.01 * b, v, 7.0) == pytest.approx(base, rel=1e-12)

    def test_zero_vector_error(self):
        with pytest.raises(DomainError):
            raw_region_score(np.zeros(3), np.ones(3), np.full(3, 1 / 3), 1.0)


class TestProjectL1:
    def test_basic(self):
        np.testing.assert_allclose(project_l1(np.array([1.0, 1.0, 2.0, 0.0])),
                                   [0.25, 0.25, 0.5, 0.0])

    def test_absolute_value_first(self):
        np.testing.assert_allclose(project_l1(np.array([-1.0, 1.0])), [0.5, 0.5])

    def test_zero_fallback_with_warning(self):
        with pytest.warns(UserWarning):
            out = project_l1(np.zeros(2))
        np.testing.assert_allclose(out, [0.5, 0.5])

    def test_output_invariants(self):
        g = np.random.default_rng(1)
        for _ in range(50):
            out = project_l1(g.standard_normal(9))
            assert np.all(out >= 0.0)
            assert abs(out.sum() - 1.0) < 1e-9


class TestImportanceKlLoss:
    def test_two_samples_forced_zero(self):
        batch = small_batch(n=2)
        R, K = batch.regions, batch.maps.shape[1]
        w = np.full((2, R), 1.0 / R)
        v = np.full((2, K), 1.0 / K)
        loss, gw, gv, _ = importance_kl_loss(batch, w, v, ImportanceConfig(kappa_tilde=50.0))
        assert loss == pytest.approx(0.0, abs=1e-12)

    def test_identical_samples_symmetric(self):
        one = RngState(3).generator.standard_normal((1, 4, 2, 2)) + 0.5
        maps = np.repeat(one, 4, axis=0)
        logits = np.tile(np.array([1.0, 0.0, -1.0]), (4, 1))
        batch = RegionalBatch(maps=maps, logits=logits, labels=np.zeros(4, int),
                              ids=list("abcd"))
        R, K = batch.regions, 4
        w = np.full((4, R), 1.0 / R)
        v = np.full((4, K), 1.0 / K)
        loss, gw, gv, _ = importance_kl_loss(batch, w, v, ImportanceConfig(kappa_tilde=50.0))
        assert np.isfinite(loss)
        assert np.linalg.norm(gw) < 1e-12
        assert np.linalg.norm(gv) < 1e-12

    @pytest.mark.parametrize("seed", range(5))
    def test_grad_check_fixed_matches(self, seed):
        batch = small_batch(seed=seed + 10)
        n, R, K = batch.n, batch.regions, batch.maps.shape[1]
        g = RngState(seed).generator
        w = np.vstack([project_l1(g.random(R)) for _ in range(n)])
        v = np.vstack([project_l1(g.random(K)) for _ in range(n)])
        cfg = ImportanceConfig(kappa_tilde=6.0, kappa_p=5.0)
        _, _, _, matches = importance_kl_loss(batch, w, v, cfg)

        def unpack(p):
            return p[: n * R].reshape(n, R), p[n * R:].reshape(n, K)

        def loss_fn(p):
            wi, vi = unpack(p)
            return importance_kl_loss(batch, wi, vi, cfg, matches=matches)[0]

        def grad_fn(p):
            wi, vi = unpack(p)
            _, gw, gv, _ = importance_kl_loss(batch, wi, vi, cfg, matches=matches)
            return np.concatenate([gw.ravel(), gv.ravel()])

        p0 = np.concatenate([w.ravel(), v.ravel()])
        rep = grad_check(loss_fn, grad_fn, p0, eps=1e-5)
        assert rep.max_relative_error < 1e-4

    def test_zero_region_error(self):
        batch = small_batch()
        batch.maps[0, :, 0, 0] = 0.0
        R, K = batch.regions, batch.maps.shape[1]
        with pytest.raises(DomainError):
            importance_kl_loss(batch, np.full((batch.n, R), 1.0 / R),
                               np.full((batch.n, K), 1.0 / K), ImportanceConfig())


class TestFitImportance:
    def test_signal_regions_get_top_mass(self):
        spec = make_regional_spec()
        batch = gen_regional_batch(spec, 24, RngState(5))
        cfg = ImportanceConfig(kappa_tilde=64.0, learning_rate=0.02, iterations=60, seed=0)
        fit = fit_importance(batch, cfg)
        wbar = np.mean([wt.w for wt in fit.weights], axis=0)
        signal = {0, 5}  # cells (0,0) and (1,2) on the 3x3 grid, row-major
        assert set(np.argsort(wbar)[-2:]) == signal
        assert fit.loss_trace[-1] <= fit.loss_trace[0]

    def test_signal_regions_also_get_top_shapley(self):
        # the exact attribution agrees with the fitted weights about which
        # grid cells carry the class signal
        spec = make_regional_spec()
        batch = gen_regional_batch(spec, 24, RngState(5))
        head = LinearSoftmaxHead(spec.head_region, mode="logit")
        F = batch.regional()
        baseline = F.reshape(-1, spec.channels).mean(axis=0)
        phi_bar = np.zeros(batch.regions)
        for i in range(batch.n):
            rep = exact_shapley(F[i], head, int(batch.labels[i]), baseline="mean",
                                baseline_values=baseline)
            phi_bar += rep.phi
        assert set(np.argsort(phi_bar)[-2:]) == {0, 5}

    def test_all_signal_mask_near_uniform(self):
        all_cells = [(r, c) for r in range(3) for c in range(3)]
        spec = make_regional_spec(signal_cells=all_cells)
        batch = gen_regional_batch(spec, 24, RngState(6))
        cfg = ImportanceConfig(kappa_tilde=64.0, learning_rate=0.02, iterations=60, seed=0)
        fit = fit_importance(batch, cfg)
        ratios = [wt.w.max() / wt.w.min() for wt in fit.weights]
        assert np.mean(ratios) < 3.0

    def test_single_region(self):
        g = RngState(7).generator
        batch = RegionalBatch(maps=g.standard_normal((4, 5, 1, 1)) + 0.5,
                              logits=g.standard_normal((4, 3)),
                              labels=np.zeros(4, int), ids=list("abcd"))
        fit = fit_importance(batch, ImportanceConfig())
        for wt in fit.weights:
            np.testing.assert_array_equal(wt.w, [1.0])

    def test_seeded_determinism(self):
        batch = small_batch(seed=8)
        cfg = ImportanceConfig(kappa_tilde=20.0, iterations=10, seed=3)
        a = fit_importance(batch, cfg)
        b = fit_importance(batch, cfg)
        for wa, wb in zip(a.weights, b.weights):
            np.testing.assert_array_equal(wa.w, wb.w)
            np.testing.assert_array_equal(wa.v, wb.v)
        assert a.loss_trace == b.loss_trace

    def test_invariants_on_random_fits(self):
        for seed in range(10):
            batch = small_batch(seed=seed + 100, n=4, K=3)
            fit = fit_importance(batch, ImportanceConfig(kappa_tilde=15.0,
                                                         iterations=5, seed=seed))
            for wt in fit.weights:
                assert np.all(wt.w >= 0) and abs(wt.w.sum() - 1.0) < 1e-9
                assert np.all(wt.v >= 0) and abs(wt.v.sum() - 1.0) < 1e-9


class TestExactShapley:
    def test_dummy_region_zero(self):
        # head that ignores region content entirely beyond region 0
        class PickHead:
            def describe(self):
                return "first-region-only"

            def score(self, regional, target):
                return float(regional[0, target])

        g = np.random.default_rng(0)
        fmap = g.standard_normal((4, 3))
        rep = exact_shapley(fmap, PickHead(), target=1, baseline="zero")
        assert rep.phi[1] == 0.0
        assert rep.phi[2] == 0.0
        assert rep.phi[3] == 0.0

    def test_symmetry_axiom(self):
        head = LinearSoftmaxHead(np.ones((2, 3)), mode="logit")
        fmap = np.array([[1.0, 2.0, 3.0],
                         [1.0, 2.0, 3.0],
                         [0.0, 1.0, 0.0]])
        rep = exact_shapley(fmap, head, target=0, baseline="zero")
        assert rep.phi[0] == pytest.approx(rep.phi[1], abs=1e-12)

    def test_linearity_additive_game(self):
        # linear head + zero baseline: val(S) = sum_{r in S} c_r, so phi = c
        K = 3
        weights = np.zeros((2, K))
        weights[0] = [1.0, 2.0, 3.0]
        head = LinearSoftmaxHead(weights, mode="logit")
        fmap = np.array([[3.0, 0.0, 0.0],
                         [0.0, 1.5, 0.0],
                         [0.0, 0.0, 2.0]])
        rep = exact_shapley(fmap, head, target=0, baseline="zero")
        # val(S) = mean over 3 regions of contributions: c_r = w . f_r / 3
        want = np.array([3.0 * 1.0, 1.5 * 2.0, 2.0 * 3.0]) / 3.0
        np.testing.assert_allclose(rep.phi, want, atol=1e-12)

    def test_efficiency_residual(self):
        g = np.random.default_rng(1)
        head = LinearSoftmaxHead(g.standard_normal((3, 5)), mode="prob")
        fmap = g.standard_normal((8, 5))
        base = g.standard_normal(5)
        rep = exact_shapley(fmap, head, target=2, baseline="mean", baseline_values=base)
        assert rep.efficiency_residual < 1e-8

    def test_region_limit(self):
        head = LinearSoftmaxHead(np.ones((2, 3)))
        with pytest.raises(SizeError):
            exact_shapley(np.ones((17, 3)), head, target=0, baseline="zero")

    def test_mean_baseline_requires_values(self):
        head = LinearSoftmaxHead(np.ones((2, 3)))
        with pytest.raises(DomainError):
            exact_shapley(np.ones((3, 3)), head, target=0, baseline="mean")


class TestImportanceShapleyCorrelation:
    def test_proportional(self):
        phi = np.array([0.1, 0.4, 0.5])
        assert importance_shapley_correlation(2.0 * phi, phi) == pytest.approx(1.0, abs=1e-12)

    def test_anti_correlated(self):
        phi = np.array([1.0, 2.0, 3.0])
        w = np.array([3.0, 2.0, 1.0])
        assert importance_shapley_correlation(w, phi) == pytest.approx(-1.0, abs=1e-12)

    def test_zero_variance_error(self):
        with pytest.raises(UndefinedCorrelationError):
            importance_shapley_correlation(np.ones(4), np.arange(4.0))


def test_importance_weights_validation():
    with pytest.raises(DomainError):
        ImportanceWeights(w=np.array([0.5, 0.6]), v=np.array([1.0]))
    with pytest.raises(DomainError):
        ImportanceWeights(w=np.array([1.0]), v=np.array([-0.5, 1.5]))
