import random

import pytest
from hypothesis import given, settings, strategies as st

from sag import primitives as P
from sag.errors import ComparisonRangeError, EncodingBudgetError, ProtocolError
from sag.primitives import EncryptedShare
from sag.transport import PartyRole, run_pair


def _decrypt_results(keys, ta, tb):
    """A's outputs are under B's key and vice versa."""
    return [keys[1][1].decrypt(c) for c in ta], [keys[0][1].decrypt(c) for c in tb]


def test_compare_edges(session_pair, keys):
    sa, sb = session_pair(cmp_bits=8)
    pairs = [(-128, 127), (127, -128), (0, 0), (5, 4), (4, 5), (-1, -1), (127, 127), (-128, -128)]
    va, vb = zip(*pairs)
    ta, tb = run_pair(lambda: P.secure_compare(sa, va), lambda: P.secure_compare(sb, vb))
    expected = [int(a > b) for a, b in pairs]
    assert _decrypt_results(keys, ta, tb) == (expected, expected)
    assert sa.counters["comparisons"] == len(pairs)


@given(st.lists(st.tuples(st.integers(-2**15, 2**15 - 1), st.integers(-2**15, 2**15 - 1)), min_size=1, max_size=12))
@settings(max_examples=15, deadline=None)
def test_compare_random(keys, pairs):
    from sag.transport import SessionParams, memory_session_pair
    sa, sb = memory_session_pair(keys[0], keys[1], SessionParams(cmp_bits=16))
    try:
        va, vb = zip(*pairs)
        ta, tb = run_pair(lambda: P.secure_compare(sa, va), lambda: P.secure_compare(sb, vb))
        expected = [int(a > b) for a, b in pairs]
        assert _decrypt_results(keys, ta, tb) == (expected, expected)
    finally:
        sa.close()
        sb.close()


def test_compare_range_checked(session_pair):
    sa, _ = session_pair(cmp_bits=8)
    with pytest.raises(ComparisonRangeError):
        P.secure_compare(sa, [128])


def test_compare_batches_beyond_chunk(session_pair, keys, monkeypatch):
    monkeypatch.setattr(P, "MAX_COMPARE_BATCH", 5)
    sa, sb = session_pair(cmp_bits=8)
    va = [random.randrange(-100, 100) for _ in range(13)]
    vb = [random.randrange(-100, 100) for _ in range(13)]
    ta, _ = run_pair(lambda: P.secure_compare(sa, va), lambda: P.secure_compare(sb, vb))
    assert [keys[1][1].decrypt(c) for c in ta] == [int(a > b) for a, b in zip(va, vb)]


@pytest.mark.parametrize("holder", [PartyRole.A, PartyRole.B])
def test_secure_mul(session_pair, keys, holder):
    sa, sb = session_pair()
    own, helper_key = (sa, keys[1][1]) if holder is PartyRole.A else (sb, keys[0][1])
    values = [(3, -7), (0, 99), (-12345, -6789), (2**40, 3)]
    pairs = [(own.peer_encrypt(a), own.peer_encrypt(b)) for a, b in values]
    ra, rb = run_pair(lambda: P.secure_mul(sa, pairs if holder is PartyRole.A else None, holder),
                      lambda: P.secure_mul(sb, pairs if holder is PartyRole.B else None, holder))
    res = ra if holder is PartyRole.A else rb
    assert [helper_key.decrypt_signed(c) for c in res] == [a * b for a, b in values]


@pytest.mark.parametrize("holder", [PartyRole.A, PartyRole.B])
@pytest.mark.parametrize("mode", ["floor", "ceil"])
def test_secure_truncate(session_pair, keys, holder, mode):
    sa, sb = session_pair(cmp_bits=20)
    own, key = (sa, keys[1][1]) if holder is PartyRole.A else (sb, keys[0][1])
    zs = [-50, -8, -7, -1, 0, 1, 6, 7, 8, 49999, -49999]
    cts = [own.peer_encrypt(z) for z in zs]
    ra, rb = run_pair(lambda: P.secure_truncate(sa, cts if holder is PartyRole.A else None, 7, 50_000, holder, mode),
                      lambda: P.secure_truncate(sb, cts if holder is PartyRole.B else None, 7, 50_000, holder, mode))
    res = ra if holder is PartyRole.A else rb
    expected = [z // 7 if mode == "floor" else -(-z // 7) for z in zs]
    assert [key.decrypt_signed(c) for c in res] == expected


def test_truncate_rejects_bad_divisor(session_pair):
    sa, _ = session_pair(cmp_bits=8)
    with pytest.raises(Exception):
        P.secure_truncate(sa, [sa.peer_encrypt(1)], 1000, 10)


def test_truncate_budget(session_pair):
    sa, _ = session_pair()
    with pytest.raises(EncodingBudgetError):
        P.secure_truncate(sa, [sa.peer_encrypt(1)], 7, 2**300)


def test_split_sums(session_pair):
    sa, sb = session_pair()
    for v in (-999, 0, 123456789):
        ct = sa.peer_encrypt(v)
        pa, pb = run_pair(lambda: P.randomized_split(sa, ct, mask_bits=40),
                          lambda: P.randomized_split(sb, None, mask_bits=40))
        assert pa + pb == v


@pytest.mark.parametrize("receiver", [PartyRole.A, PartyRole.B])
def test_unify(session_pair, keys, receiver):
    sa, sb = session_pair()
    sha = EncryptedShare(sa.peer_encrypt(10), PartyRole.A, 2)
    shb = EncryptedShare(sb.peer_encrypt(-52), PartyRole.B, 2)
    ua, ub = run_pair(lambda: P.unify_shares(sa, sha, receiver), lambda: P.unify_shares(sb, shb, receiver))
    got, none = (ua, ub) if receiver is PartyRole.A else (ub, ua)
    key = keys[1][1] if receiver is PartyRole.A else keys[0][1]
    assert none is None
    assert key.decrypt_signed(got.ct) == -42
    assert got.stage_scale == 2


def test_unify_rejects_scale_mismatch(session_pair):
    sa, sb = session_pair()
    sha = EncryptedShare(sa.peer_encrypt(1), PartyRole.A, 2)
    shb = EncryptedShare(sb.peer_encrypt(1), PartyRole.B, 3)
    with pytest.raises(ProtocolError):
        run_pair(lambda: P.unify_shares(sa, sha), lambda: P.unify_shares(sb, shb))


def test_unify_random_pairs(session_pair, keys):
    sa, sb = session_pair()
    rng = random.Random(4)
    pairs = [(rng.randrange(-2**100, 2**100), rng.randrange(-2**100, 2**100)) for _ in range(500)]
    pairs[0] = (3, 4)
    pairs[1] = (17, 0)
    for j, (a, b) in enumerate(pairs):
        sha = EncryptedShare(sa.peer_encrypt(a), PartyRole.A, 1)
        shb = EncryptedShare(sb.peer_encrypt(b), PartyRole.B, 1)
        ua, _ = run_pair(lambda: P.unify_shares(sa, sha, instance=j), lambda: P.unify_shares(sb, shb, instance=j))
        assert keys[1][1].decrypt_signed(ua.ct) == a + b


def test_mul_random_pairs(session_pair, keys):
    sa, sb = session_pair()
    rng = random.Random(6)
    values = [(rng.randrange(-2**80, 2**80), rng.randrange(-2**80, 2**80)) for _ in range(500)]
    values[:3] = [(6, 7), (5, 0), (5, 1)]
    pairs = [(sa.peer_encrypt(a), sa.peer_encrypt(b)) for a, b in values]
    ra, _ = run_pair(lambda: P.secure_mul(sa, pairs), lambda: P.secure_mul(sb, None))
    assert [keys[1][1].decrypt_signed(c) for c in ra] == [a * b for a, b in values]


def test_split_mask_is_uniform(session_pair, keys):
    sa, sb = session_pair()
    half = int(keys[1][0].n) // 2
    ct = sa.peer_encrypt(0)
    counts = [0] * 10
    for _ in range(10_000):
        pa, pb = run_pair(lambda: P.randomized_split(sa, ct), lambda: P.randomized_split(sb, None))
        assert pa + pb == 0
        counts[pa * 10 // half] += 1
    chi2 = sum((c - 1000) ** 2 / 1000 for c in counts)
    assert chi2 < 27.9  # 99.9% quantile, 9 degrees of freedom


def test_comparison_transcript_shape_independent_of_inputs(session_pair):
    from sag.transport import ProtocolId

    def received_sizes(q_a):
        sa, sb = session_pair(cmp_bits=16)
        run_pair(lambda: P.secure_compare(sa, [q_a]), lambda: P.secure_compare(sb, [100]))
        return [(r.step_id, r.nbytes) for r in sb.transcript
                if r.direction == "recv" and r.protocol_id == ProtocolId.COMPARE]

    assert received_sizes(101) == received_sizes(30000)
    assert received_sizes(-5) == received_sizes(-30000)
