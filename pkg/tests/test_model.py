import math

import numpy as np
import pytest

from critmp import criticality as crit
from critmp import model


def random_label(rng, n=16, k=2, p=10):
    lab = np.zeros((n, n, 1 + k * p))
    lab[..., 0] = np.where(rng.random((n, n)) < 0.3, rng.random((n, n)), 0.0)
    for j in range(k):
        h = rng.random((n, n, p)) ** 3
        lab[..., 1 + j * p:1 + (j + 1) * p] = h / h.sum(-1, keepdims=True)
    return lab


def finite_difference(f, x, h=1e-5):
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f(x)
        x[i] = old - h
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


@pytest.mark.parametrize("z, q, want", [(1.0, 1.0, math.log(2)), (0.0, 7.0, math.log(2)), (1.0, 2.0, 2 * math.log(2))])
def test_loss_cr_values(z, q, want):
    assert model.loss_cr(np.zeros((1, 1)), np.array([[z]]), q) == pytest.approx(want, abs=1e-12)


def test_loss_cr_stable_at_extremes():
    val = model.loss_cr(np.array([[800.0, -800.0]]), np.array([[1.0, 0.0]]), 1.0)
    assert val == 0.0
    assert math.isfinite(model.loss_cr(np.array([[-800.0]]), np.array([[1.0]]), 1.0))


def test_loss_cr_monotone_against_target():
    xs = np.linspace(-10, 10, 41)
    pos = [model.loss_cr(np.array([[x]]), np.array([[1.0]]), 2.0) for x in xs]
    neg = [model.loss_cr(np.array([[x]]), np.array([[0.0]]), 2.0) for x in xs]
    assert np.all(np.diff(pos) < 0) and np.all(np.diff(neg) > 0)


def test_loss_cr_shape_mismatch():
    with pytest.raises(ValueError):
        model.loss_cr(np.zeros((2, 2)), np.zeros((2, 3)), 1.0)


def test_default_q():
    z = np.zeros((4, 4))
    assert model.default_q(z) == 100.0
    z[0, :2] = 1.0
    assert model.default_q(z) == 7.0
    assert model.default_q(np.ones((3, 3))) == 1.0


def test_loss_joint_uniform_one_hot():
    t = np.zeros((1, 10))
    t[0, 3] = 1
    assert model.loss_joint(np.zeros((1, 10)), t) == pytest.approx(math.log(10), abs=1e-12)


def test_loss_joint_saturated():
    t = np.zeros((1, 10))
    t[0, 3] = 1
    z = np.zeros((1, 10))
    z[0, 3] = 30.0
    assert model.loss_joint(z, t) < 1e-9


def test_loss_joint_naive_oracle():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(7, 5))
    t = rng.random((7, 5))
    t /= t.sum(-1, keepdims=True)
    naive = np.mean([-np.sum(t[i] * np.log(np.exp(z[i]) / np.exp(z[i]).sum())) for i in range(7)])
    assert model.loss_joint(z, t) == pytest.approx(naive, abs=1e-12)


def test_loss_joint_rejects_unnormalised():
    with pytest.raises(ValueError):
        model.loss_joint(np.zeros((2, 4)), np.full((2, 4), 0.3))


def test_loss_joint_masks_cells():
    t = np.full((2, 4), 0.25)
    t[1] = [1, 2, 3, 4]  # masked out, so never checked
    z = np.zeros((2, 4))
    assert model.loss_joint(z, t, np.array([True, False])) == pytest.approx(math.log(4))


def test_loss_total_zero_joint_robot():
    rng = np.random.default_rng(1)
    x, lab = rng.normal(size=(4, 4, 1)), rng.random((4, 4, 1))
    assert model.loss_total(x, lab, 2.0) == model.loss_cr(x[..., 0], lab[..., 0], 2.0)


def test_loss_total_decomposition():
    rng = np.random.default_rng(2)
    lab = random_label(rng)
    x = rng.normal(size=lab.shape)
    mask = lab[..., 0] > 0
    want = model.loss_cr(x[..., 0], lab[..., 0], 3.0)
    want += model.loss_joint(x[..., 1:11], lab[..., 1:11], mask)
    want += model.loss_joint(x[..., 11:21], lab[..., 11:21], mask)
    assert model.loss_total(x, lab, 3.0) == pytest.approx(want, abs=1e-12)


def test_saturated_logits_near_zero():
    lab = np.zeros((3, 3, 1 + 2 * 4))
    lab[..., 0] = np.eye(3)
    lab[..., 1] = 1.0
    lab[..., 5] = 1.0
    x = np.where(lab > 0.5, 30.0, -30.0)
    assert model.loss_total(x, lab, 1.0, p=4) <= 1e-6


def test_saturated_logits_beat_random_probes():
    rng = np.random.default_rng(3)
    lab = np.zeros((4, 4, 1 + 4))
    lab[..., 0] = rng.random((4, 4)) < 0.5
    lab[np.arange(4)[:, None], np.arange(4)[None, :], 1 + rng.integers(0, 4, (4, 4))] = 1.0
    best = model.loss_total(np.where(lab > 0.5, 30.0, -30.0), lab, 1.0, p=4)
    for _ in range(50):
        assert model.loss_total(rng.uniform(-30, 30, lab.shape), lab, 1.0, p=4) >= best


def test_gradient_examples():
    g = model.loss_gradients(np.zeros((1, 1, 1)), np.ones((1, 1, 1)), q=1.0, p=1)
    assert g[0, 0, 0] == -0.5
    lab = np.array([[[1.0, 1.0, 0.0]]])
    g = model.loss_gradients(np.zeros((1, 1, 3)), lab, q=1.0, p=2)
    assert np.allclose(g[0, 0, 1:], [-0.5, 0.5])


@pytest.mark.parametrize("seed", range(5))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    lab = random_label(rng, n=4, k=2, p=5)
    x = rng.normal(scale=2, size=lab.shape)
    q = 4.0
    got = model.loss_gradients(x, lab, q, p=5)
    fd = finite_difference(lambda v: model.loss_total(v, lab, q, p=5), x.copy())
    rel = np.abs(got - fd) / np.maximum(np.abs(fd), 1e-8)
    assert np.max(np.where(np.abs(fd) > 1e-8, rel, np.abs(got - fd))) < 1e-4


# ---------------------------------------------------------------- predictor


def test_predictor_from_label_file(tmp_path):
    rng = np.random.default_rng(0)
    lab = random_label(rng, n=6, k=1, p=10).astype(np.float32)
    crit.write_label(tmp_path / "l.bin", lab, 10, 1)
    pred = model.Predictor.from_label_file(tmp_path / "l.bin")
    inp = np.zeros((6, 6, 4), np.float32)
    out = model.predict(pred, inp)
    assert out.tobytes() == lab.tobytes()
    assert model.predict(pred, inp).tobytes() == out.tobytes()


def test_predictor_uniform_payload():
    lab = np.zeros((3, 3, 21), np.float32)
    lab[..., 1:] = 0.1
    out = model.predict(model.Predictor("tabular", lab, 10, 2), np.zeros((3, 3, 5)))
    assert np.allclose(out[..., 1:], 0.1)


def test_predictor_shape_checks():
    pred = model.Predictor("tabular", np.zeros((3, 3, 11), np.float32), 10, 1)
    with pytest.raises(ValueError):
        model.predict(pred, np.zeros((4, 4, 4)))
    with pytest.raises(ValueError):
        model.predict(pred, np.zeros((3, 3, 5)))


def test_external_predictor_sanitised():
    raw = np.zeros((2, 2, 5), np.float32)
    raw[..., 0] = 3.0
    raw[0, 0, 1:] = [-1, 2, 2, 0]
    out = model.predict(model.Predictor("external", raw, 4, 1), np.zeros((2, 2, 4)))
    assert np.all(out[..., 0] == 1.0)
    assert np.allclose(out[0, 0, 1:], [0, 0.5, 0.5, 0])
    assert np.allclose(out[1, 1, 1:], 0.25)
