import math

import numpy as np
import pytest

from coalign import model as M
from coalign import selftrain
from coalign.errors import EstimationError
from coalign.selftrain import K_SCHEDULE_PRESETS, KSchedule


def oracle_select(labels, confidence, k, num_classes):
    """Independent reference: plain python sort per class, same rounding rule
    (ceil of k percent, at least the ceil's implicit 1 when k > 0)."""
    mask = [0] * len(labels)
    for cls in range(num_classes):
        members = [i for i in range(len(labels)) if labels[i] == cls]
        if k <= 0 or not members:
            continue
        if float(k).is_integer():
            quota = (int(k) * len(members) + 99) // 100
        else:
            quota = math.ceil(k * len(members) / 100.0)
        ordered = sorted(members, key=lambda i: (-confidence[i], i))
        for i in ordered[:quota]:
            mask[i] = 1
    return np.array(mask)


class TestAssignPseudoLabels:
    def test_one_hot_prediction(self):
        d = 3
        params = M.init_model(d, (d,), d, seed=0)
        w, b = params.layers[0]
        w.value[...] = np.eye(d)
        b.value[...] = 0.0
        params.prototypes.value[...] = np.eye(d)
        params = params
        x = np.zeros((1, d))
        x[0, 1] = 1.0
        labels, conf = selftrain.assign_pseudo_labels(params, x)
        assert labels[0] == 1
        assert conf[0] > 0.99

    def test_uniform_tie_goes_to_class_zero(self):
        d = 4
        params = M.init_model(d, (d,), d, temperature=1.0, seed=0)
        w, b = params.layers[0]
        w.value[...] = np.eye(d)
        b.value[...] = 0.0
        params.prototypes.value[...] = np.eye(d)
        labels, conf = selftrain.assign_pseudo_labels(params, np.ones((1, d)))
        assert labels[0] == 0
        assert conf[0] == pytest.approx(0.25, abs=1e-12)

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        params = M.init_model(2, (8, 4), 3, seed=7)
        x = rng.normal(size=(20, 2))
        l1, c1 = selftrain.assign_pseudo_labels(params, x)
        l2, c2 = selftrain.assign_pseudo_labels(params, x)
        assert np.array_equal(l1, l2)
        assert np.array_equal(c1, c2)


class TestSelectTopKPerClass:
    def test_ten_samples_k30(self):
        rng = np.random.default_rng(1)
        conf = rng.random(10)
        labels = np.zeros(10, dtype=int)
        out = selftrain.select_top_k_per_class(labels, conf, 30.0, 1)
        assert out.mask.sum() == 3
        top3 = set(np.argsort(-conf)[:3])
        assert set(np.flatnonzero(out.mask)) == top3

    def test_k_zero_all_unmasked(self):
        out = selftrain.select_top_k_per_class(np.zeros(5, dtype=int), np.ones(5), 0.0, 1)
        assert out.mask.sum() == 0

    def test_k_hundred_all_masked(self):
        rng = np.random.default_rng(2)
        out = selftrain.select_top_k_per_class(rng.integers(0, 3, 20), rng.random(20), 100.0, 3)
        assert out.mask.sum() == 20

    def test_matches_oracle_with_ties(self):
        rng = np.random.default_rng(3)
        for trial in range(50):
            n = int(rng.integers(5, 60))
            c = int(rng.integers(2, 6))
            labels = rng.integers(0, c, n)
            confidence = np.round(rng.random(n), 1)  # heavy ties
            k = float(rng.choice([0, 5, 10, 25, 50, 100, 33.4]))
            out = selftrain.select_top_k_per_class(labels, confidence, k, c)
            assert np.array_equal(out.mask, oracle_select(labels, confidence, k, c)), (
                trial, n, c, k)

    def test_per_class_quota_invariant(self):
        rng = np.random.default_rng(4)
        labels = rng.integers(0, 4, 100)
        conf = rng.random(100)
        out = selftrain.select_top_k_per_class(labels, conf, 15.0, 4)
        for cls in range(4):
            members = labels == cls
            expected = math.ceil(0.15 * members.sum())
            assert out.mask[members].sum() == expected
            selected = conf[members & (out.mask == 1)]
            skipped = conf[members & (out.mask == 0)]
            if selected.size and skipped.size:
                assert selected.min() >= skipped.max()

    def test_permutation_invariance(self):
        rng = np.random.default_rng(5)
        labels = rng.integers(0, 3, 40)
        conf = rng.random(40)  # distinct with probability 1
        out = selftrain.select_top_k_per_class(labels, conf, 40.0, 3)
        perm = rng.permutation(40)
        permuted = selftrain.select_top_k_per_class(labels[perm], conf[perm], 40.0, 3)
        assert np.array_equal(permuted.mask, out.mask[perm])

    def test_every_class_represented_unlike_global_top_k(self):
        # class 1 has uniformly lower confidence; a global top-30% would
        # exclude it entirely, per-class selection cannot
        labels = np.array([0] * 10 + [1] * 10)
        conf = np.concatenate([np.linspace(0.9, 0.99, 10), np.linspace(0.1, 0.2, 10)])
        out = selftrain.select_top_k_per_class(labels, conf, 30.0, 2)
        global_top = np.zeros(20, dtype=int)
        global_top[np.argsort(-conf)[:6]] = 1
        assert global_top[labels == 1].sum() == 0
        assert out.mask[labels == 1].sum() == 3
        assert out.mask[labels == 0].sum() == 3


class TestEstimateTargetDistribution:
    def test_balanced_selection(self):
        pseudo = selftrain.PseudoLabelSet(
            labels=np.array([0, 0, 1, 1]), confidence=np.ones(4), mask=np.ones(4, dtype=int),
            k=100.0, num_classes=2)
        assert np.array_equal(selftrain.estimate_target_distribution(pseudo), [0.5, 0.5])

    def test_single_class_one_hot(self):
        pseudo = selftrain.PseudoLabelSet(
            labels=np.array([2, 2, 2]), confidence=np.ones(3), mask=np.ones(3, dtype=int),
            k=100.0, num_classes=4)
        assert np.array_equal(selftrain.estimate_target_distribution(pseudo), [0, 0, 1, 0])

    def test_hand_counted_seven_samples(self):
        labels = np.array([0, 1, 1, 2, 2, 2, 0])
        mask = np.array([1, 1, 0, 1, 1, 1, 0])
        pseudo = selftrain.PseudoLabelSet(labels, np.ones(7), mask, 50.0, 3)
        assert np.allclose(selftrain.estimate_target_distribution(pseudo), [1 / 5, 1 / 5, 3 / 5])

    def test_no_selection_raises(self):
        pseudo = selftrain.PseudoLabelSet(np.array([0]), np.ones(1), np.zeros(1, dtype=int), 0.0, 1)
        with pytest.raises(EstimationError):
            selftrain.estimate_target_distribution(pseudo)

    def test_output_is_valid_distribution(self):
        rng = np.random.default_rng(6)
        labels = rng.integers(0, 5, 80)
        mask = (rng.random(80) > 0.3).astype(np.int64)
        pseudo = selftrain.PseudoLabelSet(labels, rng.random(80), mask, 70.0, 5)
        dist = selftrain.estimate_target_distribution(pseudo)
        assert (dist >= 0).all()
        assert dist.sum() == pytest.approx(1.0, abs=1e-9)


class TestKSchedule:
    def test_default_epoch_zero(self):
        assert selftrain.advance_k(KSchedule(), 0) == 5.0

    def test_default_epoch_four(self):
        assert selftrain.advance_k(KSchedule(), 4) == 25.0

    def test_clamps_at_max(self):
        assert selftrain.advance_k(KSchedule(), 100) == 30.0

    def test_presets(self):
        assert K_SCHEDULE_PRESETS["default"] == KSchedule(5, 5, 30)
        assert K_SCHEDULE_PRESETS["fast-start"] == KSchedule(20, 5, 50)
        assert K_SCHEDULE_PRESETS["low-cap"] == KSchedule(5, 5, 10)

    def test_nondecreasing(self):
        ks = [selftrain.advance_k(KSchedule(), e) for e in range(40)]
        assert all(b >= a for a, b in zip(ks, ks[1:]))

    def test_negative_epoch(self):
        with pytest.raises(ValueError):
            selftrain.advance_k(KSchedule(), -1)


def test_pseudo_csv_dump(tmp_path):
    pseudo = selftrain.PseudoLabelSet(
        labels=np.array([1, 0]), confidence=np.array([0.75, 0.5]),
        mask=np.array([1, 0]), k=10.0, num_classes=2)
    path = tmp_path / "pseudo.csv"
    selftrain.write_pseudo_csv(pseudo, path)
    lines = path.read_text().strip().splitlines()
    assert lines[0] == "sample,pseudo_label,confidence,mask"
    assert lines[1] == "0,1,0.75,1"
    assert lines[2] == "1,0,0.5,0"
