import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from bloomdet.errors import LabelError, NoAdversaryError
from bloomdet.losses import (
    EPS,
    detector_loss,
    discriminator_loss,
    heg_adversarial_label,
    hng_loss,
    hsi_detector_loss,
    hsi_per_category_losses,
)

from _fd import check_gradients


def bce_ref(s, y, eps=EPS):
    s = min(max(s, eps), 1.0 - eps)
    return -(y * math.log(s) + (1.0 - y) * math.log(1.0 - s))


class TestDetectorLoss:
    def test_matches_scalar_reference(self):
        scores = [0.9, 0.2, 0.5, 0.7]
        labels = [1, 0, 1, 0]
        lv = detector_loss(scores, labels)
        expected = [bce_ref(s, y) for s, y in zip(scores, labels)]
        np.testing.assert_allclose(lv.per_example, expected, rtol=1e-12)
        assert lv.scalar == pytest.approx(np.mean(expected), rel=1e-12)

    def test_scalar_label_broadcasts(self):
        lv = detector_loss([0.3, 0.6], 1.0)
        assert lv.per_example.shape == (2,)
        assert lv.per_example[0] == pytest.approx(-math.log(0.3))

    def test_perfect_scores_clamp_counted(self):
        lv = detector_loss([1.0, 0.0], [1, 0])
        assert lv.clamp_events == 2
        assert lv.scalar == pytest.approx(-math.log(1.0 - EPS), rel=1e-6)

    def test_tensor_attached_only_when_grad_flows(self):
        t = torch.tensor([0.4, 0.6], requires_grad=True)
        assert detector_loss(t, 1.0).tensor is not None
        assert detector_loss([0.4, 0.6], 1.0).tensor is None

    @given(
        st.lists(st.floats(0.01, 0.99), min_size=1, max_size=30),
        st.integers(0, 1),
    )
    @settings(max_examples=40, deadline=None)
    def test_scalar_is_mean_of_per_example(self, scores, label):
        lv = detector_loss(scores, float(label))
        assert lv.scalar == pytest.approx(float(lv.per_example.mean()), abs=1e-6)


class TestTwoTermLosses:
    def test_discriminator_equal_lengths_pairwise(self):
        real = [0.8, 0.6]
        gen = [0.3, 0.1]
        lv = discriminator_loss(real, gen)
        expected = [
            bce_ref(r, 1) + bce_ref(g, 0) for r, g in zip(real, gen)
        ]
        np.testing.assert_allclose(lv.per_example, expected, rtol=1e-12)
        assert lv.scalar == pytest.approx(np.mean(expected), rel=1e-12)

    def test_discriminator_unequal_lengths_mean_identity(self):
        real = [0.8, 0.6, 0.7]
        gen = [0.3]
        lv = discriminator_loss(real, gen)
        term = np.mean([bce_ref(r, 1) for r in real]) + bce_ref(0.3, 0)
        assert lv.scalar == pytest.approx(float(lv.per_example.mean()), rel=1e-9)
        assert lv.scalar == pytest.approx(term, rel=1e-9)

    def test_hng_loss_reference(self):
        det = [0.2, 0.9]
        disc = [0.6, 0.4]
        lv = hng_loss(det, disc)
        expected = [bce_ref(d, 1) + bce_ref(f, 1) for d, f in zip(det, disc)]
        np.testing.assert_allclose(lv.per_example, expected, rtol=1e-12)

    def test_hng_loss_shape_mismatch_rejected(self):
        with pytest.raises(LabelError):
            hng_loss([0.2, 0.9], [0.6])

    def test_empty_rejected(self):
        with pytest.raises(LabelError):
            discriminator_loss([], [0.5])


class TestHsiLoss:
    def test_one_hot_reference(self):
        scores = np.array([[0.7, 0.2, 0.4]])
        lv = hsi_detector_loss(scores, [0])
        expected = bce_ref(0.7, 1) + bce_ref(0.2, 0) + bce_ref(0.4, 0)
        assert lv.per_example[0] == pytest.approx(expected, rel=1e-12)

    def test_label_validation(self):
        s = np.full((2, 3), 0.5)
        with pytest.raises(LabelError):
            hsi_detector_loss(s, [0, 3])
        with pytest.raises(LabelError):
            hsi_detector_loss(s, [0, -1])
        with pytest.raises(LabelError):
            hsi_detector_loss(s, [0.5, 1.0])
        with pytest.raises(LabelError):
            hsi_detector_loss(np.full(3, 0.5), [0, 1, 2])

    def test_per_category_matrix_closed_form(self):
        rng = np.random.default_rng(0)
        s = rng.uniform(0.05, 0.95, size=(4, 5))
        mat = hsi_per_category_losses(s)
        for b in range(4):
            for lab in range(5):
                direct = hsi_detector_loss(s[b : b + 1], [lab]).per_example[0]
                assert mat[b, lab] == pytest.approx(direct, rel=1e-9)


class TestHegLabel:
    def test_exhaustive_grid(self):
        values = (0.0, 0.5, 1.0, 2.0)
        for a in values:
            for b in values:
                for c in values:
                    for d in values:
                        vec = [a, b, c, d]
                        for true in range(4):
                            got = heg_adversarial_label(vec, true)
                            candidates = [i for i in range(4) if i != true]
                            best = max(candidates, key=lambda i: (vec[i], -i))
                            assert got == best

    def test_tie_breaks_low_index(self):
        assert heg_adversarial_label([1.0, 1.0, 1.0], true_category=0) == 1
        assert heg_adversarial_label([1.0, 1.0, 1.0], true_category=1) == 0

    def test_two_category_forced(self):
        assert heg_adversarial_label([5.0, 0.1], true_category=0) == 1

    def test_single_category_rejected(self):
        with pytest.raises(NoAdversaryError):
            heg_adversarial_label([1.0], true_category=0)

    def test_bad_true_category(self):
        with pytest.raises(LabelError):
            heg_adversarial_label([1.0, 2.0], true_category=2)


class TestLossGradients:
    def test_detector_loss_fd(self):
        rng = np.random.default_rng(1)
        s = torch.tensor(rng.uniform(0.05, 0.95, size=12), dtype=torch.float64)
        y = torch.tensor(rng.integers(0, 2, size=12), dtype=torch.float64)
        check_gradients(lambda: detector_loss(s, y), [s], rng, probes_per_tensor=12)

    def test_discriminator_loss_fd(self):
        rng = np.random.default_rng(2)
        r = torch.tensor(rng.uniform(0.05, 0.95, size=6), dtype=torch.float64)
        g = torch.tensor(rng.uniform(0.05, 0.95, size=9), dtype=torch.float64)
        check_gradients(lambda: discriminator_loss(r, g), [r, g], rng)

    def test_hng_loss_fd(self):
        rng = np.random.default_rng(3)
        d = torch.tensor(rng.uniform(0.05, 0.95, size=7), dtype=torch.float64)
        f = torch.tensor(rng.uniform(0.05, 0.95, size=7), dtype=torch.float64)
        check_gradients(lambda: hng_loss(d, f), [d, f], rng)

    def test_hsi_loss_fd(self):
        rng = np.random.default_rng(4)
        s = torch.tensor(rng.uniform(0.05, 0.95, size=(5, 4)), dtype=torch.float64)
        y = torch.tensor([0, 3, 1, 2, 2])
        check_gradients(lambda: hsi_detector_loss(s, y), [s], rng, probes_per_tensor=20)
