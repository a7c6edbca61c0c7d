"""Two-party building blocks over Paillier: share unification, randomized splitting,
secure comparison, secure multiplication and exact secure truncation.

Every function here is written SPMD-style: both parties call it with their own
session and their own inputs; ``sess.role`` decides which half runs.  Inputs that
only one party has are ``None`` on the other side.  A ciphertext a party holds is
always encrypted under the *other* party's key, so it cannot read it.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass
from typing import Optional, Sequence

from gmpy2 import mpz

from .crypto import Ciphertext
from .errors import ComparisonRangeError, EncodingBudgetError, ProtocolError
from .transport import PartyRole, ProtocolId, ProtocolSession

_sysrand = secrets.SystemRandom()

# Frames carry at most 65535 integers; keep comparison batches well below that.
MAX_COMPARE_BATCH = 1024


@dataclass(frozen=True)
class EncryptedShare:
    """A party's additive share of a secret, encrypted under the other party's key."""

    ct: Ciphertext
    owner: PartyRole
    stage_scale: int


def _width(*cts: Ciphertext) -> int:
    return max((int(c.pk.nsquare).bit_length() + 7) // 8 for c in cts)


# -- unification -------------------------------------------------------------------

def unify_shares(sess: ProtocolSession, share: EncryptedShare, receiver: PartyRole = PartyRole.A,
                 instance: Optional[int] = None) -> Optional[EncryptedShare]:
    """Merge two encrypted shares into one ciphertext of their sum held by ``receiver``.

    The sender masks its share with ``R`` drawn from ``Z_{N/4}``, so the receiver only
    ever decrypts ``s_sender - R``.
    """
    pid = ProtocolId.UNIFY
    if sess.role != receiver:
        bound = min(int(sess.public_key.n), int(sess.peer_key.n)) // 4
        r = secrets.randbelow(bound)
        masked = (share.ct - r).rerandomize()
        enc_r = sess.own_encrypt(r)
        sess.send(pid, 0, (share.stage_scale, masked, enc_r), instance, _width(masked, enc_r))
        return None
    msg = sess.recv(pid, 0, instance)
    scale, masked, enc_r = msg.payload
    if scale != share.stage_scale:
        raise ProtocolError(f"unify: stage scale mismatch ({share.stage_scale} vs peer {scale})")
    diff = sess.decrypt_signed(sess.own_ct(masked))
    total = share.ct + diff + sess.peer_ct(enc_r)
    return EncryptedShare(total, receiver, share.stage_scale)


# -- randomized split --------------------------------------------------------------

def randomized_split(sess: ProtocolSession, ct: Optional[Ciphertext], holder: PartyRole = PartyRole.A,
                     mask_bits: Optional[int] = None, instance: Optional[int] = None) -> int:
    """Turn ``E(s)`` at ``holder`` into plaintext integer shares ``p_holder + p_other = s``.

    ``p_holder`` is uniform on ``[0, 2**mask_bits)`` (on ``Z_{N/2}`` when ``mask_bits``
    is None).  As long as ``|s|`` is far below the mask range, the equality holds over
    the integers, not just modulo N.
    """
    pid = ProtocolId.SPLIT
    if sess.role == holder:
        bound = (1 << mask_bits) if mask_bits is not None else int(sess.peer_key.n) // 2
        r = secrets.randbelow(bound)
        sess.send_cts(pid, 0, [(ct - r).rerandomize()], instance)
        return r
    (masked,) = sess.recv_cts(pid, 0, instance, own=True)
    return sess.decrypt_signed(masked)


# -- secure comparison -------------------------------------------------------------

def _bits_msb_first(v: int, width: int) -> list[int]:
    return [(v >> i) & 1 for i in range(width - 1, -1, -1)]


def secure_compare(sess: ProtocolSession, values: Sequence[int], instance: Optional[int] = None) -> list[Ciphertext]:
    """Batched SC: party A supplies ``q_A[k]``, party B ``q_B[k]``; both receive
    encryptions (under the peer's key) of ``t_k = I[q_A[k] > q_B[k]]``.

    DGK-style bitwise comparison over Paillier.  Operands are shifted to
    ``[0, 2^l)`` and then mapped to ``a' = 2a`` / ``b' = 2b + 1`` so ties cannot occur.
    Party A blinds every bit test with a random sign ``s``, which makes B's view of
    the outcome a one-time pad of the result bit.
    """
    ell = sess.cmp_bits
    limit = 1 << (ell - 1)
    for v in values:
        if not -limit <= v < limit:
            raise ComparisonRangeError(f"comparison operand {v} exceeds {ell}-bit range")
    out: list[Ciphertext] = []
    for start in range(0, len(values), MAX_COMPARE_BATCH):
        chunk = [int(v) + limit for v in values[start:start + MAX_COMPARE_BATCH]]
        out.extend(_compare_batch(sess, chunk, ell, instance))
    sess.count("comparisons", len(values))
    return out


def _compare_batch(sess: ProtocolSession, shifted: list[int], ell: int, instance) -> list[Ciphertext]:
    pid = ProtocolId.COMPARE
    width = ell + 1
    count = len(shifted)
    if sess.role is PartyRole.B:
        bits = []
        for v in shifted:
            bits.extend(_bits_msb_first(2 * v + 1, width))
        sess.send_cts(pid, 0, [sess.own_encrypt(b) for b in bits], instance)
        blinded = sess.recv_cts(pid, 1, instance, own=True)
        enc_delta_a = sess.recv_cts(pid, 2, instance, own=False)
        delta_b = []
        for k in range(count):
            tests = blinded[k * width:(k + 1) * width]
            delta_b.append(int(any(sess.private_key.decrypt(c) == 0 for c in tests)))
        sess.send_cts(pid, 3, [sess.own_encrypt(d) for d in delta_b], instance)
        # t = delta_A xor delta_B
        return [(1 - e) if d else e for d, e in zip(delta_b, enc_delta_a)]

    enc_bits = sess.recv_cts(pid, 0, instance, own=False)
    if len(enc_bits) != count * width:
        raise ProtocolError("comparison: peer sent a different batch size")
    pk = sess.peer_key
    n = int(pk.n)
    blinded: list[Ciphertext] = []
    delta_a = []
    for k, v in enumerate(shifted):
        a_bits = _bits_msb_first(2 * v, width)
        sign = _sysrand.choice((1, -1))
        delta_a.append(1 if sign == 1 else 0)
        prefix = Ciphertext(mpz(1), pk)  # E(0): running sum of a_j xor b_j above bit i
        tests = []
        for i, a_i in enumerate(a_bits):
            e_b = enc_bits[k * width + i]
            neg_b = -e_b
            # c_i = a_i - b_i + s + 3 * sum_{j above i} (a_j xor b_j)
            c = neg_b + (a_i + sign) + Ciphertext(prefix.value ** 3 % pk.nsquare, pk)
            r = secrets.randbelow(n - 1) + 1
            tests.append((c * r).rerandomize())
            prefix = prefix + ((neg_b + 1) if a_i else e_b)
        _sysrand.shuffle(tests)
        blinded.extend(tests)
    sess.send_cts(pid, 1, blinded, instance)
    sess.send_cts(pid, 2, [sess.own_encrypt(d) for d in delta_a], instance)
    enc_delta_b = sess.recv_cts(pid, 3, instance, own=False)
    return [(1 - e) if d else e for d, e in zip(delta_a, enc_delta_b)]


def compare_one(sess: ProtocolSession, value: int, instance: Optional[int] = None) -> Ciphertext:
    return secure_compare(sess, [value], instance)[0]


# -- secure multiplication ---------------------------------------------------------

def secure_mul(sess: ProtocolSession, pairs: Optional[Sequence[tuple[Ciphertext, Ciphertext]]],
               holder: PartyRole = PartyRole.A, instance: Optional[int] = None) -> Optional[list[Ciphertext]]:
    """``holder`` turns ``[(E(a), E(b)), ...]`` into ``[E(ab), ...]`` with one round trip.

    Blind, let the key owner decrypt and multiply, then strip the cross terms:
    ``(a+ra)(b+rb) - a rb - b ra - ra rb = ab (mod N)``.
    """
    pid = ProtocolId.MULTIPLY
    if sess.role != holder:
        masked = sess.recv_cts(pid, 0, instance, own=True)
        n = int(sess.public_key.n)
        prods = []
        for i in range(0, len(masked), 2):
            x = sess.private_key.decrypt(masked[i])
            y = sess.private_key.decrypt(masked[i + 1])
            prods.append(sess.own_encrypt(x * y % n))
        sess.send_cts(pid, 1, prods, instance)
        sess.count("multiplications", len(prods))
        return None
    n = int(sess.peer_key.n)
    masks = []
    outgoing = []
    for a, b in pairs:
        ra, rb = secrets.randbelow(n), secrets.randbelow(n)
        masks.append((ra, rb))
        outgoing += [(a + ra).rerandomize(), (b + rb).rerandomize()]
    sess.send_cts(pid, 0, outgoing, instance)
    prods = sess.recv_cts(pid, 1, instance, own=False)
    result = []
    for (a, b), (ra, rb), p in zip(pairs, masks, prods):
        result.append(p - a * rb - b * ra - (ra * rb % n))
    return result


# -- exact truncation --------------------------------------------------------------

def secure_truncate(sess: ProtocolSession, cts: Optional[Sequence[Ciphertext]], divisor: int,
                    magnitude_bound: int, holder: PartyRole = PartyRole.A, mode: str = "floor",
                    instance: Optional[int] = None) -> Optional[list[Ciphertext]]:
    """Exact ``floor(z / D)`` (or ``ceil``) of encrypted signed values ``|z| <= magnitude_bound``.

    The holder masks ``z' = z + kD`` with ``R`` from ``Z_{N/4}``; the key owner splits
    ``z' + R`` into quotient and remainder by ``D``; one secure comparison of the two
    remainders recovers the borrow, so the result is exact rather than off by one.
    """
    if mode not in ("floor", "ceil"):
        raise ValueError("mode must be 'floor' or 'ceil'")
    limit = 1 << (sess.cmp_bits - 1)
    if not 1 < divisor <= limit:
        raise ComparisonRangeError(f"divisor must lie in (1, 2^{sess.cmp_bits - 1}]")
    pid = ProtocolId.TRUNCATE
    k = magnitude_bound // divisor + 1
    shift = k * divisor + (divisor - 1 if mode == "ceil" else 0)
    if sess.role != holder:
        masked = sess.recv_cts(pid, 0, instance, own=True)
        highs, lows = [], []
        for c in masked:
            z = sess.private_key.decrypt(c)
            highs.append(z // divisor)
            lows.append(z % divisor)
        sess.send_cts(pid, 1, [sess.own_encrypt(h) for h in highs], instance)
        # the key owner's operand is its remainder in either orientation
        secure_compare(sess, lows, instance)
        return None
    n = int(sess.peer_key.n)
    if 4 * (magnitude_bound + shift + divisor) >= n:
        raise EncodingBudgetError("truncation offset does not fit in Z_N with masking headroom")
    masks = [secrets.randbelow(n // 4) for _ in cts]
    sess.send_cts(pid, 0, [(c + (shift + r)).rerandomize() for c, r in zip(cts, masks)], instance)
    highs = sess.recv_cts(pid, 1, instance, own=False)
    lows = [r % divisor for r in masks]
    if holder is PartyRole.A:
        # t = I[r_lo > c_lo] is the borrow directly
        borrows = secure_compare(sess, lows, instance)
    else:
        # A holds c_lo: I[c_lo > r_lo - 1] = 1 - borrow
        borrows = [1 - t for t in secure_compare(sess, [lo - 1 for lo in lows], instance)]
    return [h - (r // divisor + k) - b for h, r, b in zip(highs, masks, borrows)]
