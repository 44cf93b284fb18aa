import numpy as np
import pytest

from spkattr import autodiff as ad
from spkattr.errors import NumericError
from spkattr.optim import AdamW


def test_zero_grad_zero_decay_is_noop():
    p = ad.tensor([1.0, -2.0, 3.0], requires_grad=True)
    opt = AdamW({"p": p}, lr=0.1, weight_decay=0.0)
    before = p.data.copy()
    p.grad = np.zeros_like(p.data)
    opt.step()
    assert np.array_equal(p.data, before)


def test_single_step_descends_quadratic():
    x = ad.tensor([1.0], requires_grad=True)
    opt = AdamW({"x": x}, lr=0.1, weight_decay=0.0)
    loss = ad.sum_all(ad.mul(x, x))
    ad.backward(loss)
    opt.step()
    assert x.data[0] < 1.0


def test_two_d_quadratic_converges():
    rng = np.random.default_rng(42)
    x = ad.tensor(rng.normal(size=2) * 2.0, requires_grad=True)
    opt = AdamW({"x": x}, lr=0.1, weight_decay=0.0)
    for _ in range(200):
        opt.zero_grad()
        loss = ad.sum_all(ad.mul(x, x))
        ad.backward(loss)
        opt.step()
    assert np.linalg.norm(x.data) <= 1e-2


def test_nan_gradient_names_parameter():
    p = ad.tensor([1.0], requires_grad=True)
    opt = AdamW({"weights.head": p})
    p.grad = np.array([np.nan])
    with pytest.raises(NumericError, match="weights.head"):
        opt.step()


def test_deterministic_given_inputs():
    def run():
        p = ad.tensor([0.5, -0.5], requires_grad=True)
        opt = AdamW({"p": p}, lr=0.05, weight_decay=0.01)
        for step in range(10):
            opt.zero_grad()
            loss = ad.sum_all(ad.mul(ad.sub(p, np.array([1.0, 2.0])), ad.sub(p, np.array([1.0, 2.0]))))
            ad.backward(loss)
            opt.step()
        return p.data.copy()

    a, b = run(), run()
    assert np.array_equal(a, b)


def test_state_roundtrip_resumes_bit_exact():
    def make():
        p = ad.tensor([0.3, 0.7], requires_grad=True)
        return p, AdamW({"p": p}, lr=0.02)

    def one_step(p, opt):
        opt.zero_grad()
        loss = ad.sum_all(ad.mul(p, p))
        ad.backward(loss)
        opt.step()

    p1, opt1 = make()
    for _ in range(5):
        one_step(p1, opt1)
    saved = {k: v.copy() for k, v in opt1.state_arrays().items()}
    saved_data = p1.data.copy()
    saved_step = opt1.step_count
    for _ in range(3):
        one_step(p1, opt1)

    p2, opt2 = make()
    p2.data = saved_data.copy()
    opt2.params = {"p": p2}
    opt2.load_state_arrays(saved, saved_step)
    for _ in range(3):
        one_step(p2, opt2)

    assert np.array_equal(p1.data, p2.data)
