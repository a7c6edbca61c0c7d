from fractions import Fraction

import numpy as np
import pytest

from sag import oracle
from sag.bounds import score_interval
from sag.bounds import sag_ball
from sag.erm import RegularizedObjective, approx_solve, data_domain_bound, exact_solve, surrogates, synthetic
from sag.errors import DomainEscapeError, EncodingBudgetError, ProtocolError
from sag.sbc import (EncryptedBall, SbcConfig, ScalePlan, ball_to_real, bound_eval, bound_eval_many,
                     decode_ball, encrypt_weights, load_weights, save_weights, sbc, sqrt_upper_bound,
                     truncation_steps)
from sag.transport import PartyRole, run_pair


def _setup(family, n=6, d=3, K=4, seed=0, lam=1.0):
    data = synthetic(family, n, d, seed)
    obj = RegularizedObjective.from_dataset(data, lam, family)
    w_hat = approx_solve(obj, "coarse")
    bound = data_domain_bound(family, lam, data.X, obj.y)
    return data, obj, w_hat, SbcConfig(family, lam, K, bound)


def _secure_ball(sa, sb, data, obj, w_hat, config):
    wa = encrypt_weights(sa, w_hat[:data.d_A])
    wb = encrypt_weights(sb, w_hat[data.d_A:])
    return run_pair(lambda: sbc(sa, data.X_A, wa, config), lambda: sbc(sb, data.X_B, wb, config, y=obj.y))


def test_scale_plan_values():
    p = ScalePlan("logistic", 10_000, 20, 0.5)
    assert (p.score, p.value, p.slope, p.gap, p.grad, p.center, p.radius) == (2, 4, 2, 5, 4, 5, 10)
    assert p.inv_n == 500 and p.grad_coef == 10_000 and p.half_w == 10_000**4 // 2
    assert p.gap_coef == 20_000 * 10_000**4
    e = ScalePlan("exponential", 10_000, 20, 1.0)
    assert (e.value, e.center, e.radius) == (5, 6, 12)


def test_scale_plan_budget():
    p = ScalePlan("logistic", 10_000, 20, 1.0)
    with pytest.raises(EncodingBudgetError):
        p.check(2**150, 10.0, 4)
    p.check(2**256, 10.0, 4)
    with pytest.raises(EncodingBudgetError):
        ScalePlan("logistic", 10_001, 20, 1.0).check(2**512, 1.0, 1)


def test_truncation_steps():
    assert truncation_steps(10, 10_000, 60) == [10_000**4, 10_000**4, 10_000**2]
    assert truncation_steps(3, 10_000, 16) == [10_000] * 3
    with pytest.raises(EncodingBudgetError):
        truncation_steps(2, 10_000, 8)


def test_sqrt_upper_bound_dominates():
    g = sqrt_upper_bound(16, 100.0, 1e-4)
    s = np.concatenate([np.arange(0, 1e-2, 1e-4), np.linspace(0.01, 100, 5000)])
    assert np.all(g(s) >= np.sqrt(s) - 1e-15)
    assert g(0.0) == 0.0


@pytest.mark.parametrize("family", ["logistic", "poisson", "exponential"])
def test_sbc_matches_oracles(session_pair, keys, family):
    data, obj, w_hat, config = _setup(family, seed=1)
    sa, sb = session_pair()
    ball_a, ball_b = _secure_ball(sa, sb, data, obj, w_hat, config)
    m, r2 = decode_ball(ball_a, ball_b, keys[0][1], keys[1][1])
    mq, r2q = oracle.plain_sbc_quantized(data.X_A, data.X_B, obj.y, w_hat, config)
    assert (m, r2) == (mq, r2q)
    assert r2 >= 0
    enc = ball_to_real(m, r2, ball_a.center_scale, ball_a.radius_scale, config.magnification)
    ref = oracle.plain_sbc_real(data.X, obj.y, w_hat, config)
    d = data.d
    assert np.max(np.abs(enc.center - ref.center)) <= 10 * d / config.magnification
    assert abs(enc.radius_sq - ref.radius_sq) <= 10 * d / config.magnification


@pytest.mark.parametrize("leader", [PartyRole.A, PartyRole.B])
def test_bound_eval_matches_oracle(session_pair, keys, leader):
    data, obj, w_hat, config = _setup("logistic", seed=2)
    w_star = exact_solve(obj)
    sa, sb = session_pair()
    ball_a, ball_b = _secure_ball(sa, sb, data, obj, w_hat, config)
    m, r2 = decode_ball(ball_a, ball_b, keys[0][1], keys[1][1])
    enc = ball_to_real(m, r2, ball_a.center_scale, ball_a.radius_scale, config.magnification)
    for j, x in enumerate(data.X[:3]):
        ra, rb = run_pair(lambda: bound_eval(sa, x[:data.d_A], ball_a, config, leader, instance=j),
                          lambda: bound_eval(sb, x[data.d_A:], ball_b, config, leader, instance=j))
        res, other = (ra, rb) if leader is PartyRole.A else (rb, ra)
        assert other is None
        assert (res.lb_int, res.ub_int) == oracle.plain_bound_quantized(x, m, r2, config)
        exact = score_interval(x, enc)
        assert res.lb <= exact.lb and exact.ub <= res.ub
        assert res.lb <= float(x @ w_star) <= res.ub


def test_bound_eval_many_and_persistence(session_pair, keys, tmp_path):
    data, obj, w_hat, config = _setup("logistic", seed=3)
    sa, sb = session_pair()
    ball_a, ball_b = _secure_ball(sa, sb, data, obj, w_hat, config)
    ball_a.save(tmp_path / "a.ball")
    loaded = EncryptedBall.load(tmp_path / "a.ball")
    assert [c.value for c in loaded.center] == [c.value for c in ball_a.center]
    assert loaded.radius_sq.value == ball_a.radius_sq.value
    qa, qb = data.X_A[:2], data.X_B[:2]
    ra, rb = run_pair(lambda: bound_eval_many(sa, qa, loaded, config), lambda: bound_eval_many(sb, qb, ball_b, config))
    assert len(ra) == 2 and all(r is None for r in rb)


def test_weights_file_roundtrip(session_pair, keys, tmp_path):
    sa, _ = session_pair()
    cts = encrypt_weights(sa, [0.5, -0.25])
    save_weights(tmp_path / "w.bin", cts)
    back = load_weights(tmp_path / "w.bin")
    assert [keys[1][1].decrypt_signed(c) for c in back] == [5000, -2500]


def test_sbc_escape_aborts(session_pair):
    data, obj, w_hat, _ = _setup("logistic", seed=4)
    config = SbcConfig("logistic", 1.0, 4, 0.01)
    sa, sb = session_pair()
    with pytest.raises(DomainEscapeError):
        _secure_ball(sa, sb, data, obj, w_hat * 0 + 1.0, config)


def test_sbc_rejects_mismatched_weights(session_pair):
    data, obj, w_hat, config = _setup("logistic")
    sa, _ = session_pair()
    with pytest.raises(ProtocolError):
        sbc(sa, data.X_A, encrypt_weights(sa, [0.1] * (data.d_A + 1)), config)


def test_degenerate_single_instance(session_pair, keys):
    X = np.array([[0.5, -0.25]])
    config = SbcConfig("logistic", 1.0, 1, 2.0)
    sa, sb = session_pair()
    w_zero = np.zeros(2)
    ball_a, ball_b = run_pair(lambda: sbc(sa, X[:, :1], encrypt_weights(sa, [0.0]), config),
                              lambda: sbc(sb, X[:, 1:], encrypt_weights(sb, [0.0]), config, y=[1.0]))
    m, r2 = decode_ball(ball_a, ball_b, keys[0][1], keys[1][1])
    enc = ball_to_real(m, r2, ball_a.center_scale, ball_a.radius_scale, config.magnification)
    lower, upper = surrogates("logistic", 1, 2.0)
    ref = sag_ball(X, [1.0], w_zero, 1.0, "logistic", lower, upper)
    assert np.max(np.abs(enc.center - ref.center)) <= 20 / config.magnification
    assert abs(enc.radius_sq - ref.radius_sq) <= 20 / config.magnification


def test_zero_radius_gives_point_interval(session_pair):
    config = SbcConfig("logistic", 1.0, 4, 2.0)
    sa, sb = session_pair()
    M = config.magnification
    plan = config.plan(1)
    # center blocks m_A = 0.3, m_B = -0.2; radius shares -5 and 5 sum to zero
    ball_a = EncryptedBall(PartyRole.A, [sa.peer_encrypt(3 * M**plan.center // 10)], sa.peer_encrypt(-5),
                           plan.center, plan.radius, M)
    ball_b = EncryptedBall(PartyRole.B, [sb.peer_encrypt(-2 * M**plan.center // 10)], sb.peer_encrypt(5),
                           plan.center, plan.radius, M)
    ra, _ = run_pair(lambda: bound_eval(sa, [0.5], ball_a, config), lambda: bound_eval(sb, [0.25], ball_b, config))
    assert ra.lb_exact == ra.ub_exact == Fraction(1, 10)
