import math

import numpy as np
import pytest

from coalign import data as D
from coalign import model as M
from coalign import objectives
from coalign.errors import UsageError
from coalign.numerics import sgd_momentum_step


def separable_batch(rng, n_per=10):
    x = np.vstack([rng.normal((-2, 0), 0.4, (n_per, 2)), rng.normal((2, 0), 0.4, (n_per, 2))])
    y = np.repeat([0, 1], n_per)
    return x, y


def identity_model(dim, temperature):
    params = M.init_model(dim, (dim,), dim, temperature=temperature, seed=0)
    w, b = params.layers[0]
    w.value[...] = np.eye(dim)
    b.value[...] = 0.0
    params.prototypes.value[...] = np.eye(dim)
    return params


class TestSourceClassificationLoss:
    def test_untrained_near_uniform(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(40, 2))
        y = rng.integers(0, 4, 40)
        params = M.init_model(2, (32, 16), 4, temperature=1.0, seed=0)
        loss = objectives.source_classification_loss(params, x, y)
        assert loss == pytest.approx(np.log(4), abs=0.1)

    def test_overfit_toy_set(self):
        rng = np.random.default_rng(1)
        x, y = separable_batch(rng)
        params = M.init_model(2, (8, 4), 2, temperature=0.1, seed=0)
        lrs = {b.name: 0.05 for b in params.all_blocks()}
        for _ in range(500):
            loss = objectives.source_classification_loss(params, x, y)
            sgd_momentum_step(params.all_blocks(), lrs, 0.9)
        assert loss < 0.05

    def test_duplicated_batch_same_loss(self):
        rng = np.random.default_rng(2)
        x, y = separable_batch(rng)
        params = M.init_model(2, (8, 4), 2, seed=0)
        single = objectives.source_classification_loss(params, x, y)
        params.zero_grads()
        double = objectives.source_classification_loss(
            params, np.vstack([x, x]), np.concatenate([y, y])
        )
        params.zero_grads()
        assert double == pytest.approx(single, abs=1e-12)

    def test_empty_batch(self):
        params = M.init_model(2, (4,), 2, seed=0)
        with pytest.raises(UsageError):
            objectives.source_classification_loss(params, np.zeros((0, 2)), np.zeros(0, dtype=int))


class TestSelfTrainingLoss:
    def test_all_zero_mask_reduces_to_supervised(self):
        rng = np.random.default_rng(3)
        x, y = separable_batch(rng)
        tgt = rng.normal(size=(8, 2))
        params = M.init_model(2, (8, 4), 2, seed=1)
        supervised = objectives.source_classification_loss(params, x, y)
        grads = {b.name: b.grad.copy() for b in params.all_blocks()}
        params.zero_grads()
        l_st, l_sc, l_pseudo = objectives.self_training_loss(
            params, x, y, tgt, np.zeros(8, dtype=int), np.zeros(8)
        )
        assert l_st == supervised
        assert l_pseudo == 0.0
        for b in params.all_blocks():
            assert np.array_equal(b.grad, grads[b.name])

    def test_saturated_model_target_term_vanishes(self):
        params = identity_model(3, temperature=0.05)
        tgt = np.eye(3)  # each sample sits exactly on its prototype
        pseudo = np.arange(3)
        l_st, l_sc, l_pseudo = objectives.self_training_loss(
            params, np.eye(3), np.arange(3), tgt, pseudo, np.ones(3)
        )
        assert l_pseudo == pytest.approx(0.0, abs=1e-6)

    def test_hand_built_two_sample_case(self):
        # identity features, identity prototypes, T=1: each cross-entropy is
        # ln(1 + e^-1) because the correct logit is 1 and the other is 0
        params = identity_model(2, temperature=1.0)
        src_x = np.array([[1.0, 0.0]])
        tgt_x = np.array([[0.0, 1.0]])
        l_st, l_sc, l_pseudo = objectives.self_training_loss(
            params, src_x, np.array([0]), tgt_x, np.array([1]), np.ones(1)
        )
        hand = math.log(1.0 + math.exp(-1.0))
        assert l_sc == pytest.approx(hand, abs=1e-12)
        assert l_pseudo == pytest.approx(hand, abs=1e-12)
        assert l_st == pytest.approx(2 * hand, abs=1e-12)

    def test_breakdown_identity(self):
        rng = np.random.default_rng(4)
        x, y = separable_batch(rng)
        tgt = rng.normal(size=(12, 2))
        params = M.init_model(2, (8, 4), 2, seed=2)
        mask = (rng.random(12) > 0.5).astype(np.float64)
        l_st, l_sc, l_pseudo = objectives.self_training_loss(
            params, x, y, tgt, rng.integers(0, 2, 12), mask
        )
        assert abs(l_st - (l_sc + l_pseudo)) < 1e-9


class TestEntropyObjective:
    def test_alpha_zero_no_gradients(self):
        rng = np.random.default_rng(5)
        params = M.init_model(2, (8, 4), 3, seed=0)
        objectives.entropy_objective(params, rng.normal(size=(6, 2)), 0.0)
        for b in params.all_blocks():
            assert np.array_equal(b.grad, np.zeros_like(b.grad))

    def test_sign_contract_bitwise(self):
        rng = np.random.default_rng(6)
        params = M.init_model(2, (8, 4), 3, seed=0)
        tgt = rng.normal(size=(10, 2))
        alpha = 0.1

        from coalign.numerics import mean_entropy

        cache = M.forward_full(params, tgt)
        _, d_logits = mean_entropy(cache.probs)
        M.backward_head(params, cache, d_logits, 1.0, 1.0)
        naive = {b.name: b.grad.copy() for b in params.all_blocks()}
        params.zero_grads()

        objectives.entropy_objective(params, tgt, alpha)
        assert np.array_equal(params.prototypes.grad, -alpha * naive["prototypes"])
        for b in params.extractor_blocks():
            assert np.array_equal(b.grad, alpha * naive[b.name])

    def test_single_step_directions(self):
        # classifier step raises the batch entropy, extractor step lowers it
        rng = np.random.default_rng(7)
        x, y = separable_batch(rng, 20)
        tgt = rng.normal(0, 1.5, size=(30, 2))
        params = M.init_model(2, (8, 4), 2, temperature=0.3, seed=0)
        lrs = {b.name: 0.05 for b in params.all_blocks()}
        for _ in range(100):
            objectives.source_classification_loss(params, x, y)
            sgd_momentum_step(params.all_blocks(), lrs, 0.9)

        from coalign.numerics import mean_entropy

        def entropy_now():
            return mean_entropy(M.classify(params, tgt).probabilities)[0]

        snapshot = [b.value.copy() for b in params.all_blocks()]
        h0 = entropy_now()
        objectives.entropy_objective(params, tgt, 0.5)
        sgd_momentum_step(params.all_blocks(), {b.name: (0.05 if b.name == "prototypes" else 0.0) for b in params.all_blocks()}, 0.0)
        assert entropy_now() > h0
        for b, v in zip(params.all_blocks(), snapshot):
            b.value[...] = v
            b.momentum[...] = 0.0
        objectives.entropy_objective(params, tgt, 0.5)
        sgd_momentum_step(params.all_blocks(), {b.name: (0.0 if b.name in ("prototypes", "domain.weight", "domain.bias") else 0.05) for b in params.all_blocks()}, 0.0)
        assert entropy_now() < h0


class TestCombinedBackward:
    def test_matches_sum_of_separate_passes(self):
        rng = np.random.default_rng(8)
        x, y = separable_batch(rng)
        tgt = rng.normal(size=(12, 2))
        pseudo = rng.integers(0, 2, 12)
        mask = (rng.random(12) > 0.4).astype(np.float64)
        alpha = 0.1

        params = M.init_model(2, (8, 4), 2, seed=3)
        objectives.self_training_loss(params, x, y, tgt, pseudo, mask)
        st_grads = {b.name: b.grad.copy() for b in params.all_blocks()}
        params.zero_grads()
        objectives.entropy_objective(params, tgt, alpha)
        h_grads = {b.name: b.grad.copy() for b in params.all_blocks()}
        params.zero_grads()

        objectives.self_training_loss(params, x, y, tgt, pseudo, mask)
        objectives.entropy_objective(params, tgt, alpha)
        for b in params.all_blocks():
            assert np.abs(b.grad - (st_grads[b.name] + h_grads[b.name])).max() < 1e-10


class TestDomainAlignment:
    def test_reversal_contract_scales_exactly(self):
        rng = np.random.default_rng(12)
        src = rng.normal(size=(10, 2))
        tgt = rng.normal(size=(10, 2)) + 1.0

        def extractor_grads(lam):
            params = M.init_model(2, (8, 4), 2, seed=4)
            params.domain_head[0].value[...] = rng.normal(size=(4, 2)) * 0.1
            objectives.domain_alignment_loss(params, src, tgt, grl_lambda=lam)
            return {b.name: b.grad.copy() for b in params.extractor_blocks()}

        rng_state = rng.bit_generator.state
        g_full = extractor_grads(1.0)
        rng.bit_generator.state = rng_state
        g_scaled = extractor_grads(0.7)
        for name in g_full:
            # two accumulations (source and target batch) reassociate the
            # scaling, so exactness here is per-accumulation, not per-sum
            assert np.allclose(g_scaled[name], 0.7 * g_full[name], rtol=1e-13, atol=1e-18)

    def test_loss_and_accuracy_ranges(self):
        rng = np.random.default_rng(13)
        params = M.init_model(2, (8, 4), 2, seed=5)
        loss, accuracy = objectives.domain_alignment_loss(
            params, rng.normal(size=(8, 2)), rng.normal(size=(8, 2)))
        assert loss == pytest.approx(np.log(2), abs=1e-9)  # zero-initialized head
        assert 0.0 <= accuracy <= 1.0


class TestJsDiagnostics:
    def test_identical_distributions(self):
        p = np.array([0.3, 0.7])
        assert objectives.js_label_bound(p, p) == 0.0

    def test_disjoint_one_hots(self):
        bound = objectives.js_label_bound(np.array([1.0, 0.0]), np.array([0.0, 1.0]))
        assert bound == pytest.approx(0.5 * np.log(2), abs=1e-12)

    def test_symmetry(self):
        rng = np.random.default_rng(9)
        p = objectives.label_distribution(rng.random(5))
        q = objectives.label_distribution(rng.random(5))
        assert objectives.js_label_bound(p, q) == pytest.approx(objectives.js_label_bound(q, p), abs=1e-15)

    def test_nonnegative_and_zero_iff_equal_distance(self):
        rng = np.random.default_rng(10)
        for _ in range(20):
            p = objectives.label_distribution(rng.random(4))
            q = objectives.label_distribution(rng.random(4))
            d = objectives.js_distance(p, q)
            assert objectives.js_label_bound(p, q, d_js_features=d) == pytest.approx(0.0, abs=1e-15)
            assert objectives.js_label_bound(p, q, d_js_features=0.2) >= 0.0

    def test_monotone_along_shift_interpolation(self):
        c = 6
        uniform = np.full(c, 1.0 / c)
        previous = -1.0
        for degree in (0.0, 20.0, 40.0, 60.0, 80.0, 100.0):
            spec = D.ShiftSpec(pareto_alpha=1.0, direction=D.DIRECTION_TARGET, degree=degree, budget=600)
            bound = objectives.js_label_bound(uniform, D.shift_proportions(c, spec))
            assert bound >= previous
            previous = bound

    def test_js_distance_bounds(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            p = objectives.label_distribution(rng.random(5))
            q = objectives.label_distribution(rng.random(5))
            assert 0.0 <= objectives.js_distance(p, q) <= np.sqrt(np.log(2)) + 1e-12
