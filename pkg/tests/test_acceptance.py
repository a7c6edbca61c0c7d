"""End-to-end acceptance checks, one test per criterion.

Each test prints one ``ACCEPTANCE <n> PASS|FAIL`` line as it finishes, and the lines are
repeated together in the terminal summary.  Run only these with
``pytest tests/test_acceptance.py -v``.
"""

import json
import random
import socket
import subprocess
import sys
import time
from fractions import Fraction
from math import isqrt

import numpy as np
import pytest

from sag import crypto, oracle
from sag.bounds import sag_ball, score_interval
from sag.cli import bench
from sag.crypto import FixedPointCodec
from sag.erm import (RegularizedObjective, approx_solve, data_domain_bound, domain_bound, exact_solve,
                     export_csv, ingest_csv, surrogates, synthetic)
from sag.piecewise import quantize
from sag.primitives import EncryptedShare, secure_compare
from sag.sbc import EncryptedBall, SbcConfig, ball_to_real, bound_eval, decode_ball, encrypt_weights, sbc
from sag.spl import spl
from sag.transport import PartyRole, SessionParams, memory_session_pair, run_pair


@pytest.fixture(scope="module")
def keys256():
    return crypto.keygen(256), crypto.keygen(256)


# -- 1 ------------------------------------------------------------------------------

def test_paillier_algebra(report, keys256):
    (pk, sk), _ = keys256
    rng = random.Random(1)
    n = int(pk.n)
    t0 = time.perf_counter()
    bad = 0
    for _ in range(1000):
        a, b = rng.randrange(n), rng.randrange(n)
        ea, eb = pk.encrypt(a), pk.encrypt(b)
        bad += sk.decrypt(ea + eb) != (a + b) % n
        bad += sk.decrypt(ea * b) != a * b % n
    for _ in range(1000):
        m = rng.randrange(n)
        bad += sk.decrypt(pk.encrypt(m)) != m
    elapsed = time.perf_counter() - t0
    ok = bad == 0 and elapsed < 30
    report(1, ok, f"{bad} mismatches over 3000 checks, {elapsed:.1f} s (< 30 s)")
    assert ok


# -- 2 ------------------------------------------------------------------------------

def _sc_check(keys, bits, pairs):
    sa, sb = memory_session_pair(keys[0], keys[1], SessionParams(cmp_bits=bits), timeout=600)
    try:
        va, vb = [p[0] for p in pairs], [p[1] for p in pairs]
        ta, tb = run_pair(lambda: secure_compare(sa, va), lambda: secure_compare(sb, vb))
    finally:
        sa.close()
        sb.close()
    expected = [int(a > b) for a, b in pairs]
    got_a = [keys[1][1].decrypt(c) for c in ta]
    got_b = [keys[0][1].decrypt(c) for c in tb]
    return sum(x != e for x, e in zip(got_a, expected)) + sum(x != e for x, e in zip(got_b, expected))


def test_secure_comparison(report, keys256):
    t0 = time.perf_counter()
    exhaustive = [(a, b) for a in range(-128, 128) for b in range(-128, 128)]
    bad8 = _sc_check(keys256, 8, exhaustive)
    rng = random.Random(2)
    lim = 1 << 59
    wide = [(rng.randrange(-lim, lim), rng.randrange(-lim, lim)) for _ in range(10_000)]
    wide[:50] = [(v, v) for v, _ in wide[:50]]  # ties
    bad60 = _sc_check(keys256, 60, wide)
    elapsed = time.perf_counter() - t0
    ok = bad8 == 0 and bad60 == 0 and elapsed < 600
    report(2, ok, f"{len(exhaustive)} 8-bit pairs: {bad8} wrong; 10^4 60-bit pairs: {bad60} wrong; {elapsed:.0f} s (< 600 s)")
    assert ok


# -- 3 ------------------------------------------------------------------------------

def test_spl_fidelity(report, keys256):
    M = 10**6
    bound = 10.0
    # inputs at scale 1 keep every breakpoint below 2^25, so 28-bit comparisons suffice
    params = SessionParams(magnification=M, cmp_bits=28)
    codec = FixedPointCodec(M)
    rng = random.Random(3)
    sk_a, sk_b = keys256[0][1], keys256[1][1]
    exact_bad = real_bad = partition_bad = runs = 0
    worst = Fraction(0)
    sa, sb = memory_session_pair(keys256[0], keys256[1], params, timeout=600)
    try:
        for family in ("logistic", "poisson", "exponential"):
            for K in (2, 10, 100):
                lower, upper = surrogates(family, K, bound)
                funcs = [quantize(lower, codec, 1, 2, "down"), quantize(upper, codec, 1, 2, "up")]
                real = [lower, upper]
                for _ in range(200):
                    s = rng.randrange(-int(bound * M), int(bound * M) + 1)
                    a = rng.randrange(-10**7, 10**7)
                    sha = EncryptedShare(sa.peer_encrypt(a), PartyRole.A, 1)
                    shb = EncryptedShare(sb.peer_encrypt(s - a), PartyRole.B, 1)
                    ra, rb = run_pair(lambda: spl(sa, sha, funcs), lambda: spl(sb, shb, funcs))
                    runs += 1
                    for k, g in enumerate(funcs):
                        total = sk_b.decrypt_signed(ra[k].ct) + sk_a.decrypt_signed(rb[k].ct)
                        exact_bad += total != oracle.plain_spl(s, g)
                        err = abs(Fraction(total, M**g.out_scale) - oracle.plain_spl(Fraction(s, M), real[k]))
                        worst = max(worst, err)
                        real_bad += err > Fraction(2, M)
                    for o in sa.state[("spl", None)].indicators:
                        partition_bad += sum(sk_b.decrypt(c) for c in o) != 1
    finally:
        sa.close()
        sb.close()
    ok = exact_bad == 0 and real_bad == 0 and partition_bad == 0
    report(3, ok, f"{runs} SPL runs x 2 surrogates: {exact_bad} inexact, {real_bad} beyond 2/M "
                  f"(worst {float(worst):.2e}), {partition_bad} broken partitions")
    assert ok


# -- 4 ------------------------------------------------------------------------------

def test_ball_containment(report):
    trials = failures = 0
    worst = -np.inf
    for seed in range(50):
        data = synthetic("logistic", 100, 5, seed)
        for lam in (0.1, 1.0, 10.0):
            obj = RegularizedObjective.from_dataset(data, lam)
            w_star = exact_solve(obj, tol=1e-12)
            bound = data_domain_bound("logistic", lam, data.X, obj.y)
            for quality in ("coarse", "medium", "fine"):
                w_hat = approx_solve(obj, quality, bound=bound)
                for K in (10, 100):
                    lower, upper = surrogates("logistic", K, bound)
                    b = sag_ball(data.X, obj.y, w_hat, lam, "logistic", lower, upper)
                    excess = float(np.sum((w_star - b.center) ** 2)) - b.radius_sq
                    worst = max(worst, excess)
                    failures += excess > 1e-6
                    trials += 1
    ok = trials == 900 and failures == 0
    report(4, ok, f"{trials - failures}/{trials} balls contain w* (max ||w*-m||^2 - r^2 = {worst:.2e})")
    assert ok


# -- 5 ------------------------------------------------------------------------------

def test_degenerate_collapse(report):
    data = synthetic("logistic", 100, 5, seed=0)
    obj = RegularizedObjective.from_dataset(data, 1.0)
    w_star = exact_solve(obj, tol=1e-12)
    b = sag_ball(data.X, obj.y, w_star, 1.0, "logistic")
    dev = float(np.max(np.abs(b.center - w_star)))
    ok = b.radius <= 1e-6 and dev <= 1e-6
    report(5, ok, f"r = {b.radius:.1e}, max |m - w*| = {dev:.1e} (both <= 1e-6)")
    assert ok


# -- 6 and 7 ------------------------------------------------------------------------

@pytest.fixture(scope="module")
def fixed_problem():
    full = synthetic("logistic", 300, 5, seed=42, signal=4.0)
    train = full.head(100)
    obj = RegularizedObjective.from_dataset(train, 0.1)
    w_star = exact_solve(obj, tol=1e-12)
    bound = data_domain_bound("logistic", 0.1, train.X, obj.y)
    w_hat = {q: approx_solve(obj, q, bound=bound) for q in ("coarse", "medium", "fine")}
    return train, obj, w_star, bound, w_hat, full.X[100:]


def _intervals(problem, K, quality):
    train, obj, _, bound, w_hat, test = problem
    lower, upper = surrogates("logistic", K, bound)
    b = sag_ball(train.X, obj.y, w_hat[quality], obj.lam, "logistic", lower, upper)
    return [score_interval(x, b) for x in test]


def test_monotone_tightening(report, fixed_problem):
    by_k = [float(np.mean([iv.width for iv in _intervals(fixed_problem, K, "medium")[:20]])) for K in (10, 100, 1000)]
    by_q = [float(np.mean([iv.width for iv in _intervals(fixed_problem, 100, q)[:20]]))
            for q in ("coarse", "medium", "fine")]
    ok = by_k[0] > by_k[1] > by_k[2] and by_q[0] > by_q[1] > by_q[2]
    report(6, ok, "mean width K=10/100/1000: " + " > ".join(f"{v:.4f}" for v in by_k)
           + "; coarse/medium/fine: " + " > ".join(f"{v:.4f}" for v in by_q))
    assert ok


def test_certification(report, fixed_problem):
    w_star, test = fixed_problem[2], fixed_problem[5]
    truth = np.sign(test @ w_star)
    rates, wrong = [], 0
    for K in (10, 100, 1000):
        ivs = _intervals(fixed_problem, K, "fine")
        certified = 0
        for iv, t in zip(ivs, truth):
            if iv.lb > 0 or iv.ub < 0:
                certified += 1
                wrong += (1 if iv.lb > 0 else -1) != t
        rates.append(certified / len(ivs))
    ok = wrong == 0 and rates[2] >= rates[1] >= rates[0]
    report(7, ok, f"{wrong} wrong certified labels; rate K=10/100/1000: " + ", ".join(f"{r:.3f}" for r in rates))
    assert ok


# -- 8 and 9 ------------------------------------------------------------------------

def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


@pytest.fixture(scope="module")
def socket_run(tmp_path_factory):
    """Two ``sag run`` processes over loopback, n=20, d=4, K=10, 256-bit keys."""
    root = tmp_path_factory.mktemp("acc8")
    data = synthetic("logistic", 20, 4, seed=8)
    obj = RegularizedObjective.from_dataset(data, 1.0)
    w_hat = approx_solve(obj, "medium")
    export_csv(root / "a.csv", data.X_A, ["a0", "a1"])
    export_csv(root / "b.csv", data.X_B, ["b0", "b1"], y=data.y, label="y")
    (root / "w.json").write_text(json.dumps(w_hat.tolist()))
    t0 = time.perf_counter()
    run = lambda *a: subprocess.run([sys.executable, "-m", "sag", *a], cwd=root, check=True, capture_output=True)
    run("keygen", "--bits", "256", "--out", "ka")
    run("keygen", "--bits", "256", "--out", "kb")
    port = _free_port()
    common = ["--no-scale", "--weights", "w.json", "--dims", "4", "-K", "10", "--lambda", "1.0"]
    pa = subprocess.Popen([sys.executable, "-m", "sag", "run", "--role", "A", "--listen", f"127.0.0.1:{port}",
                           "--keys", "ka", "--data", "a.csv", "--out", "ball_a", *common],
                          cwd=root, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    pb = subprocess.Popen([sys.executable, "-m", "sag", "run", "--role", "B", "--connect", f"127.0.0.1:{port}",
                           "--keys", "kb", "--data", "b.csv", "--label", "y", "--out", "ball_b", *common],
                          cwd=root, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
    rc = (pa.wait(900), pb.wait(900))
    elapsed = time.perf_counter() - t0
    assert rc == (0, 0), pa.stderr.read() + pb.stderr.read()
    return root, w_hat, elapsed


def test_encrypted_ball_equivalence(report, socket_run):
    root, w_hat, elapsed = socket_run
    sk_a, sk_b = crypto.load_key(root / "ka.key"), crypto.load_key(root / "kb.key")
    ball_a, ball_b = EncryptedBall.load(root / "ball_a"), EncryptedBall.load(root / "ball_b")
    m, r2 = decode_ball(ball_a, ball_b, sk_a, sk_b)
    part_a, part_b = ingest_csv(root / "a.csv", "A", scale=False), ingest_csv(root / "b.csv", "B", {"label": "y"}, scale=False)
    config = SbcConfig("logistic", 1.0, 10, domain_bound("logistic", 1.0, 4))
    mq, r2q = oracle.plain_sbc_quantized(part_a.X, part_b.X, part_b.y, w_hat, config)
    exact = (m, r2) == (mq, r2q)
    enc = ball_to_real(m, r2, ball_a.center_scale, ball_a.radius_scale, config.magnification)
    X = np.hstack([part_a.X, part_b.X])
    ref = oracle.plain_sbc_real(X, part_b.y, w_hat, config)
    tol = 10 * 4 / config.magnification
    dev = max(float(np.max(np.abs(enc.center - ref.center))), abs(enc.radius_sq - ref.radius_sq))
    ok = exact and dev <= tol and elapsed < 600
    report(8, ok, f"quantized oracle exact: {exact}; real-mode max deviation {dev:.1e} (<= {tol:.0e}); "
                  f"wall time {elapsed:.0f} s (< 600 s)")
    assert ok


def _frac_sqrt_upper(q: Fraction, digits: int = 40) -> Fraction:
    scale = 10**digits
    return Fraction(isqrt(q.numerator * scale * scale // q.denominator) + 1, scale)


def _frac_sqrt_lower(q: Fraction, digits: int = 40) -> Fraction:
    scale = 10**digits
    return Fraction(isqrt(q.numerator * scale * scale // q.denominator), scale)


def test_bound_conservativeness(report, keys256):
    data = synthetic("logistic", 20, 4, seed=9)
    obj = RegularizedObjective.from_dataset(data, 1.0)
    w_hat = approx_solve(obj, "medium")
    config = SbcConfig("logistic", 1.0, 10, domain_bound("logistic", 1.0, 4), sqrt_pieces=64)
    sa, sb = memory_session_pair(keys256[0], keys256[1], SessionParams(), timeout=600)
    queries = synthetic("logistic", 12, 4, seed=99).X
    contained, worst_ratio = 0, 0.0
    try:
        wa, wb = encrypt_weights(sa, w_hat[:2]), encrypt_weights(sb, w_hat[2:])
        ball_a, ball_b = run_pair(lambda: sbc(sa, data.X_A, wa, config), lambda: sbc(sb, data.X_B, wb, config, y=obj.y))
        m, r2 = decode_ball(ball_a, ball_b, keys256[0][1], keys256[1][1])
        M = config.magnification
        center = [Fraction(v, M**ball_a.center_scale) for v in m]
        radius_sq = Fraction(r2, M**ball_a.radius_scale)
        for j, x in enumerate(queries):
            res, _ = run_pair(lambda: bound_eval(sa, x[:2], ball_a, config, instance=j),
                              lambda: bound_eval(sb, x[2:], ball_b, config, instance=j))
            # the exact interval for the decoded ball, on the query as the protocol encodes it
            xq = [Fraction(FixedPointCodec(M).to_fixed(float(v), 1), M) for v in x]
            mid = sum(a * b for a, b in zip(xq, center))
            half_sq = sum(a * a for a in xq) * radius_sq
            hi, lo = _frac_sqrt_upper(half_sq), _frac_sqrt_lower(half_sq)
            inside = res.lb_exact <= mid - hi and mid + hi <= res.ub_exact
            contained += inside
            worst_ratio = max(worst_ratio, float((res.ub_exact - res.lb_exact) / (2 * lo)))
    finally:
        sa.close()
        sb.close()
    ok = contained == len(queries) and worst_ratio <= 1.1
    report(9, ok, f"{contained}/{len(queries)} intervals contain the exact one; worst width ratio {worst_ratio:.4f} (<= 1.1)")
    assert ok


# -- 10 -----------------------------------------------------------------------------

def test_scaling(report):
    rows = bench([10, 40], n=4, d=4, key_bits=256, repeats=2, workers=1)
    ratio = rows[1]["seconds_per_instance"] / rows[0]["seconds_per_instance"]
    ok = 2.5 <= ratio <= 6
    report(10, ok, f"per-instance time K=10 {rows[0]['seconds_per_instance']:.3f} s, K=40 "
                   f"{rows[1]['seconds_per_instance']:.3f} s, ratio {ratio:.2f} (in [2.5, 6])")
    assert ok
