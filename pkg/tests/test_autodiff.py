import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hardgap import autodiff as ad
from hardgap.autodiff import Tensor


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


def test_sigmoid_and_bce_at_half():
    assert ad.sigmoid(Tensor(0.0)).item() == 0.5
    for y in (0.0, 1.0):
        assert ad.bce(Tensor([0.5]), [y]).item() == pytest.approx(math.log(2))
        assert ad.bce_with_logits(Tensor([0.0]), [y]).item() == pytest.approx(math.log(2))


def test_masked_bce_all_false():
    for fn in (ad.bce, ad.bce_with_logits):
        x = leaf(np.full((3, 4), 0.3))
        loss = fn(x, np.ones((3, 4)), mask=np.zeros((3, 4), bool))
        loss.backward()
        assert loss.item() == 0.0
        assert np.all(x.grad == 0)


def test_masked_terms_have_exactly_zero_grad():
    rng = np.random.default_rng(0)
    x = leaf(rng.normal(size=(5, 6)))
    mask = rng.random((5, 6)) < 0.5
    ad.bce_with_logits(x, rng.integers(0, 2, (5, 6)), mask=mask).backward()
    assert np.all(x.grad[~mask] == 0) and np.all(x.grad[mask] != 0)


def test_sum_and_relu_grads():
    x = leaf(np.arange(-3.0, 3.0).reshape(2, 3))
    x.sum().backward()
    assert np.array_equal(x.grad, np.ones((2, 3)))
    y = leaf([-1.0, 0.0, 2.0])
    ad.relu(y).sum().backward()
    assert y.grad.tolist() == [0.0, 0.0, 1.0]


def test_grad_accumulates_over_reuse():
    x = leaf([1.0, 2.0])
    (x * x + x).sum().backward()
    assert x.grad.tolist() == [3.0, 5.0]


def test_backward_twice_errors():
    x = leaf([1.0])
    loss = (x * 2.0).sum()
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_shape_mismatch_and_empty_axis():
    with pytest.raises(ValueError):
        ad.matmul(leaf(np.ones((2, 3))), leaf(np.ones((2, 3))))
    with pytest.raises(ValueError):
        ad.softmax(leaf(np.ones((2, 0))))
    with pytest.raises(ValueError):
        ad.layernorm(leaf(np.ones((2, 0))), leaf(np.ones(0)), leaf(np.zeros(0)))


def test_layernorm_antisymmetric_pairs_scale():
    a = np.array([0.3, -1.7, 2.5])
    z = np.stack([a, -a], axis=1).reshape(-1)
    out = ad.layernorm(Tensor(z), Tensor(np.ones(6)), Tensor(np.zeros(6)), eps=0.0).numpy()
    ratio = out / z
    assert ratio.min() > 0 and np.ptp(ratio) < 1e-12


def _rel_errors(analytic, numeric):
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)


def check_grads(build, params, h=1e-4):
    """Compare tape grads against central differences for every parameter array."""
    loss = build()
    for p in params:
        p.grad = None
    loss.backward()
    errs = []
    for p in params:
        num = ad.numerical_grad(lambda: build().item(), p.data, h)
        errs.append(_rel_errors(p.grad, num).reshape(-1))
    e = np.concatenate(errs)
    assert np.mean(e < 1e-4) >= 0.95
    assert e.max() < 1e-2


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_mlp_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(6, 4))
    y = rng.integers(0, 2, size=(6, 1))
    w1, b1 = leaf(rng.normal(size=(4, 8))), leaf(rng.normal(size=8) * 0.1)
    w2, b2 = leaf(rng.normal(size=(8, 1))), leaf(rng.normal(size=1) * 0.1)

    def build():
        h = ad.relu(ad.matmul(Tensor(x), w1) + b1)
        return ad.bce_with_logits(ad.matmul(h, w2) + b2, y)

    check_grads(build, [w1, b1, w2, b2])


def test_attention_layernorm_chain_finite_differences():
    rng = np.random.default_rng(3)
    x = leaf(rng.normal(size=(2, 5, 4)))
    wq, wk = leaf(rng.normal(size=(4, 4))), leaf(rng.normal(size=(4, 4)))
    g, b = leaf(1 + 0.1 * rng.normal(size=4)), leaf(0.1 * rng.normal(size=4))
    tgt = rng.random((2, 5, 4))

    def build():
        q, k = ad.matmul(x, wq), ad.matmul(x, wk)
        att = ad.softmax(ad.matmul(q, ad.transpose(k, (0, 2, 1))) * 0.5)
        h = ad.layernorm(ad.matmul(att, x) + x, g, b)
        return ad.mean((h - Tensor(tgt)) * (h - Tensor(tgt)))

    check_grads(build, [x, wq, wk, g, b])


def test_embedding_and_concat_grads():
    w = leaf(np.arange(6.0).reshape(3, 2))
    e = ad.embedding(w, np.array([0, 2, 2]))
    ad.concat([e, e[:, :1]], axis=-1).sum().backward()
    assert w.grad.tolist() == [[2.0, 1.0], [0.0, 0.0], [4.0, 2.0]]


def test_adam_first_step_is_lr():
    for g in (0.01, 5.0, -300.0):
        p = {"p": np.array([1.0])}
        ad.adam_step(p, {"p": np.array([g])}, {}, lr=1e-3)
        assert abs(abs(1.0 - p["p"][0]) - 1e-3) < 1e-6


def test_adam_zero_grads_no_change():
    p = {"p": np.array([0.7, -0.2])}
    state = {}
    for _ in range(5):
        ad.adam_step(p, {"p": np.zeros(2)}, state)
    assert p["p"].tolist() == [0.7, -0.2]


def test_adam_nan_aborts():
    with pytest.raises(FloatingPointError, match="w"):
        ad.adam_step({"w": np.zeros(2)}, {"w": np.array([np.nan, 0.0])}, {})


def test_adam_quadratic_bowl():
    p = leaf([1.0])
    opt = ad.Adam({"p": p}, lr=1e-3)
    for _ in range(10_000):
        opt.zero_grad()
        (p * p).sum().backward()
        opt.step()
    assert abs(p.data[0]) < 1e-3


def test_training_loop_deterministic():
    def run():
        rng = np.random.default_rng(11)
        w = ad.parameter((3, 1), rng, 0.5)
        x, y = rng.normal(size=(16, 3)), rng.integers(0, 2, (16, 1))
        opt = ad.Adam({"w": w}, lr=1e-2)
        for _ in range(50):
            opt.zero_grad()
            ad.bce_with_logits(ad.matmul(Tensor(x), w), y).backward()
            opt.step()
        return w.data.copy()

    assert np.array_equal(run(), run())
