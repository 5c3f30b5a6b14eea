import numpy as np
import pytest

from timeop.model import Model, NumericError
from timeop.optim import Adam
from toy import TOY_BATCH, gradcheck, toy_model

KW = dict(lam=0.5, gamma=0.01, sigma_min=10.0)


def test_score_cases():
    m = toy_model()
    fwd = m.forward()
    fwd.fused[0] = 0.0
    assert m.score(fwd, [0], [1])[0] == 0.0
    fwd.fused[:] = 0.0
    fwd.fused[0, 0] = 1.0
    fwd.fused[m.n_users + 2, 0] = 1.0
    fwd.beta[0] = [1.0, 0.0]
    assert m.score(fwd, [0], [2])[0] == 1.0


def test_score_decomposes_over_modalities():
    m = toy_model()
    fwd = m.forward()
    users, items = np.array([0, 1, 2, 3]), np.array([2, 3, 0, 1])
    D = m.dim
    fu, fi = fwd.fused[users], fwd.fused[m.n_users + items]
    expect = sum(fwd.beta[users, c] * (fu[:, c * D:(c + 1) * D] * fi[:, c * D:(c + 1) * D]).sum(axis=1)
                 for c in range(m.M))
    np.testing.assert_allclose(m.score(fwd, users, items), expect, atol=1e-10)
    np.testing.assert_allclose(m.score_all(fwd, users)[np.arange(4), items], expect, atol=1e-10)


@pytest.mark.parametrize("dtype,tol", [(np.float64, 1e-5), (np.float32, 1e-3)])
def test_full_gradient_check(dtype, tol):
    m = toy_model(dtype, hidden=8)
    errors, grads = gradcheck(m, *TOY_BATCH, **KW)
    assert all(g.dtype == dtype for g in grads.values())
    assert max(errors.values()) <= tol, errors


def test_gradient_check_several_negatives():
    m = toy_model(np.float64, hidden=6)
    users, pos, _ = TOY_BATCH
    neg = np.array([[3, 2], [0, 3], [1, 0], [2, 1]])
    errors, _ = gradcheck(m, users, pos, neg, **KW)
    assert max(errors.values()) <= 1e-5, errors


def test_pure_bce_when_regularizers_off():
    m = toy_model()
    br, grads = m.loss_and_grads(*TOY_BATCH, lam=0.0, gamma=0.0)
    assert br.total == br.rec
    br2, grads2 = m.loss_and_grads(*TOY_BATCH, lam=0.0, gamma=0.0, sigma_min=5.0)
    for k in grads:
        np.testing.assert_array_equal(grads[k], grads2[k])


def test_gamma_doubling_doubles_l2_gradient():
    m = toy_model()
    _, g0 = m.loss_and_grads(*TOY_BATCH, lam=0.1, gamma=0.0)
    _, g1 = m.loss_and_grads(*TOY_BATCH, lam=0.1, gamma=0.01)
    _, g2 = m.loss_and_grads(*TOY_BATCH, lam=0.1, gamma=0.02)
    for k in g0:
        np.testing.assert_allclose(g2[k] - g0[k], 2 * (g1[k] - g0[k]), atol=1e-14)


def test_total_is_sum_of_parts():
    br, _ = toy_model().loss_and_grads(*TOY_BATCH, lam=0.3, gamma=0.02)
    assert br.total == pytest.approx(br.rec + 0.3 * br.div + 0.02 * br.l2, rel=1e-12)


def test_nan_names_parameter_group():
    m = toy_model()
    m.params["gate_user.w1"][0, 0] = np.nan
    with pytest.raises(NumericError, match="gate"):
        m.loss_and_grads(*TOY_BATCH)


def test_parameter_storage_dtype():
    m = toy_model(np.float32)
    assert all(v.dtype == np.float32 for v in m.params.values())
    assert isinstance(m, Model)


def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    Adam(lr=0.1).step(p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_is_lr_sign():
    p = {"w": np.array([1.0, 1.0, 1.0])}
    opt = Adam(lr=1e-3)
    opt.step(p, {"w": np.array([0.5, -3.0, 1e-3])})
    np.testing.assert_allclose(p["w"] - 1.0, [-1e-3, 1e-3, -1e-3], rtol=1e-4)
    assert opt.step_count == 1


def test_adam_decreases_quadratic():
    p = {"w": np.array([3.0, -1.0])}
    opt = Adam(lr=0.1)
    f0 = float((p["w"] ** 2).sum())
    for _ in range(2):
        opt.step(p, {"w": 2 * p["w"]})
    assert float((p["w"] ** 2).sum()) < f0


def test_adam_keeps_float32_storage():
    p = {"w": np.ones(3, dtype=np.float32)}
    opt = Adam(lr=0.1)
    opt.step(p, {"w": np.ones(3, dtype=np.float32)})
    assert p["w"].dtype == np.float32 and opt.m["w"].dtype == np.float64
