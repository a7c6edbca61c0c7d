"""Encrypted ball computation (SBC) and encrypted score bounds.

Party A holds features ``X_A`` and ``E_pkB(w_A)`` (its block of the candidate
solution, unreadable to A); party B holds ``X_B``, the labels and ``E_pkA(w_B)``.
:func:`sbc` leaves each party with its block of the ball center and an additive
share of the squared radius, all encrypted under the other party's key.
:func:`bound_eval` turns a ball and a split query vector into ``[LB, UB]`` revealed to
one party only.

Every quantity is an integer at a fixed power of the magnification ``M``; the
:class:`ScalePlan` names those powers and the public integer constants that move
values between them.
"""

from __future__ import annotations

import functools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .crypto import Ciphertext, FixedPointCodec, PaillierPrivateKey, PaillierPublicKey, _pack_ints, _unpack_ints
from .erm import LossFamily, base_function, surrogates
from .errors import DomainEscapeError, EncodingBudgetError, ProtocolError
from .piecewise import PiecewiseLinear, QuantizedPiecewise, quantize
from .primitives import EncryptedShare, secure_mul, secure_truncate, unify_shares
from .spl import clear_state, spc, spl
from .transport import PartyRole, ProtocolId, ProtocolSession

BALL_MAGIC = b"SAGB1"
WEIGHTS_MAGIC = b"SAGW1"


# -- scale bookkeeping ------------------------------------------------------------

@dataclass(frozen=True)
class ScalePlan:
    """Stage scales of the encrypted pipeline.

    ``x`` and ``w`` enter at scale 1, so scores are at scale 2.  Surrogate slopes are
    quantized at ``slope_scale``; every homomorphic product with a plaintext at scale
    ``k`` adds ``k``; the division by ``n`` is the exponent ``round(M/n)`` (scale +1).
    """

    family: LossFamily
    M: int
    n: int
    lam: float
    slope_scale: int = 2

    def __post_init__(self):
        object.__setattr__(self, "family", LossFamily.parse(self.family))

    @property
    def weighted(self) -> int:
        # exponential losses carry the label as a factor on u, one extra scale
        return 1 if self.family is LossFamily.EXPONENTIAL else 0

    @property
    def score(self) -> int:
        return 2

    @property
    def value(self) -> int:
        return self.score + self.slope_scale + self.weighted

    @property
    def slope(self) -> int:
        return self.slope_scale + self.weighted

    @property
    def gap(self) -> int:
        return self.value + 1

    @property
    def grad(self) -> int:
        return self.slope + 2

    @property
    def center(self) -> int:
        return self.grad + 1

    @property
    def radius(self) -> int:
        return 2 * self.center

    @property
    def inv_n(self) -> int:
        return round(Fraction(self.M, self.n))

    @property
    def half_w(self) -> int:
        # w at scale 1 -> w/2 at the center's scale
        return self.M ** self.grad // 2

    @property
    def grad_coef(self) -> int:
        return round(Fraction(self.M) / (2 * Fraction(self.lam)))

    @property
    def gap_coef(self) -> int:
        return round(Fraction(self.M) / Fraction(self.lam)) * self.M ** (self.radius - self.gap - 1)

    def check(self, n_modulus: int, worst_radius_sq: float, d: int) -> None:
        """Static budget check of the deepest values against ``N/2``."""
        if self.M % 2:
            raise EncodingBudgetError("magnification must be even")
        if self.inv_n == 0 or self.grad_coef == 0:
            raise EncodingBudgetError("magnification too small for this n or lambda")
        worst = Fraction(worst_radius_sq) * max(d, 1) * self.M ** (self.radius + 2)
        if 2 * worst >= n_modulus:
            raise EncodingBudgetError(
                f"worst-case value needs {int(2 * worst).bit_length()} bits; key modulus has {int(n_modulus).bit_length()}"
            )


def _sqrt_lattice(pieces: int, top: int) -> list[int]:
    """Integer breakpoints ``0, 1, ..., top`` spaced geometrically after the first."""
    ratio = top ** (1.0 / (pieces - 1))
    out = [0, 1]
    for k in range(1, pieces):
        nxt = top if k == pieces - 1 else max(out[-1] + 1, round(ratio ** k))
        if nxt > top or (k < pieces - 1 and nxt >= top):
            raise ValueError("too many sqrt pieces for the input range")
        out.append(nxt)
    return out


def sqrt_upper_bound(pieces: int, s_max: float, unit: float) -> PiecewiseLinear:
    """Piecewise-linear upper bound of ``sqrt`` on the lattice ``{0, unit, 2 unit, ...}``.

    The first piece is the line through the origin and ``(unit, sqrt(unit))``, exact on
    both lattice points and with intercept 0.  The others are tangents (which over-
    approximate a concave function everywhere) at the geometric means of geometrically
    spaced breakpoints, where the tangent-to-sqrt ratio is smallest.
    """
    if pieces < 2:
        raise ValueError("sqrt bound needs at least 2 pieces")
    top = round(s_max / unit)
    lattice = _sqrt_lattice(pieces, top)
    slopes = [math.sqrt(unit) / unit]
    intercepts = [0.0]
    for a, b in zip(lattice[1:], lattice[2:]):
        c = math.sqrt(a * b) * unit
        slopes.append(0.5 / math.sqrt(c))
        intercepts.append(0.5 * math.sqrt(c))
    return PiecewiseLinear([v * unit for v in lattice], slopes, intercepts, "upper")


@dataclass(frozen=True)
class SbcConfig:
    """Public parameters both parties agree on."""

    family: LossFamily
    lam: float
    pieces: int
    bound: float
    magnification: int = 10_000
    sqrt_pieces: int = 64
    sqrt_max: float = 1e4
    label_max: float = 1.0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "family", LossFamily.parse(self.family))

    def plan(self, n: int) -> ScalePlan:
        return ScalePlan(self.family, self.magnification, n, self.lam)

    @property
    def codec(self) -> FixedPointCodec:
        return FixedPointCodec(self.magnification)

    def surrogates(self) -> tuple[QuantizedPiecewise, QuantizedPiecewise]:
        return _quantized_surrogates(self.family, self.pieces, self.bound, self.magnification)

    def sqrt_bar(self) -> QuantizedPiecewise:
        return _quantized_sqrt(self.sqrt_pieces, self.sqrt_max, self.magnification, self.plan(1).center - 1)

    def worst_radius_sq(self, d: int) -> float:
        """Crude upper bound on ``r^2`` used by the budget check."""
        u = base_function(self.family)
        B = self.bound
        umax = max(abs(float(u.f(-B))), abs(float(u.f(B))), 1.0) * max(self.label_max, 1.0)
        dumax = max(abs(float(u.df(-B))), abs(float(u.df(B))), 1.0) * max(self.label_max, 1.0) + self.label_max + 1
        h = B / 2 + dumax / (2 * self.lam)
        return 4 * (d * h * h + 2 * umax / self.lam)


@functools.lru_cache(maxsize=64)
def _quantized_surrogates(family, pieces, bound, M):
    lower, upper = surrogates(family, pieces, bound)
    codec = FixedPointCodec(M)
    return quantize(lower, codec, 2, 2, "down"), quantize(upper, codec, 2, 2, "up")


@functools.lru_cache(maxsize=16)
def _quantized_sqrt(pieces, s_max, M, slope_scale):
    g = sqrt_upper_bound(pieces, s_max, 1.0 / M ** 2)
    return quantize(g, FixedPointCodec(M), 2, slope_scale, "up")


# -- encrypted ball ---------------------------------------------------------------

@dataclass
class EncryptedBall:
    """One party's half of the ball: its center block and its radius share.

    The ciphertexts are under the *other* party's key (``peer_key``).
    """

    role: PartyRole
    center: list[Ciphertext]
    radius_sq: Ciphertext
    center_scale: int
    radius_scale: int
    magnification: int

    @property
    def peer_key(self) -> PaillierPublicKey:
        return self.radius_sq.pk

    def to_bytes(self) -> bytes:
        pk = self.peer_key
        head = _pack_ints([0 if self.role is PartyRole.A else 1, self.magnification, self.center_scale,
                           self.radius_scale, len(self.center), pk.n, pk.g])
        return BALL_MAGIC + head + _pack_ints([c.value for c in self.center] + [self.radius_sq.value])

    @classmethod
    def from_bytes(cls, data: bytes) -> "EncryptedBall":
        if data[:5] != BALL_MAGIC:
            raise ValueError("not an encrypted ball file (bad magic)")
        (role, M, cs, rs, d, n, g), off = _unpack_ints(data, 7, 5)
        pk = PaillierPublicKey(n, g)
        vals, _ = _unpack_ints(data, d + 1, off)
        cts = [Ciphertext(v, pk) for v in vals]
        return cls(PartyRole.A if role == 0 else PartyRole.B, cts[:d], cts[d], cs, rs, M)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: Union[str, Path]) -> "EncryptedBall":
        return cls.from_bytes(Path(path).read_bytes())


def save_weights(path: Union[str, Path], cts: Sequence[Ciphertext]) -> None:
    pk = cts[0].pk
    Path(path).write_bytes(WEIGHTS_MAGIC + _pack_ints([len(cts), pk.n, pk.g] + [c.value for c in cts]))


def load_weights(path: Union[str, Path]) -> list[Ciphertext]:
    data = Path(path).read_bytes()
    if data[:5] != WEIGHTS_MAGIC:
        raise ValueError("not an encrypted weights file (bad magic)")
    (d, n, g), off = _unpack_ints(data, 3, 5)
    pk = PaillierPublicKey(n, g)
    vals, _ = _unpack_ints(data, d, off)
    return [Ciphertext(v, pk) for v in vals]


def encrypt_weights(sess: ProtocolSession, w_block, magnification: Optional[int] = None) -> list[Ciphertext]:
    """Encrypt this party's block of ``w_hat`` at scale 1 under the peer's key."""
    codec = FixedPointCodec(magnification or sess.M)
    return [sess.peer_encrypt(codec.to_fixed(float(w), 1)) for w in np.ravel(w_block)]


def decode_ball(ball_a: EncryptedBall, ball_b: EncryptedBall, sk_a: PaillierPrivateKey,
                sk_b: PaillierPrivateKey) -> tuple[list[int], int]:
    """Integer center (A's block then B's) and squared radius; test and audit helper."""
    m = [sk_b.decrypt_signed(c) for c in ball_a.center] + [sk_a.decrypt_signed(c) for c in ball_b.center]
    r2 = sk_b.decrypt_signed(ball_a.radius_sq) + sk_a.decrypt_signed(ball_b.radius_sq)
    return m, r2


def ball_to_real(m: Sequence[int], r2: int, center_scale: int, radius_scale: int, M: int):
    from .bounds import BallBound

    return BallBound(np.array([v / M ** center_scale for v in m]), r2 / M ** radius_scale)


# -- label encodings --------------------------------------------------------------

def label_terms(family: LossFamily, y, plan: ScalePlan) -> tuple[list[int], list[int]]:
    """Integer ``c_i`` at the slope scale and label weights at scale 1 (1s unless exponential)."""
    M = plan.M
    ys = [Fraction(float(v)) for v in np.ravel(y)]
    if family is LossFamily.LOGISTIC:
        c = [round((v - 1) * M ** plan.slope) for v in ys]
    elif family is LossFamily.POISSON:
        c = [round(v * M ** plan.slope) for v in ys]
    else:
        c = [M ** plan.slope for _ in ys]
    weights = [round(v * M) for v in ys] if family is LossFamily.EXPONENTIAL else [1] * len(ys)
    return c, weights


def quantize_features(X, M: int) -> list[list[int]]:
    codec = FixedPointCodec(M)
    return [[codec.to_fixed(float(v), 1) for v in row] for row in np.atleast_2d(X)]


def _dot(cts: Sequence[Ciphertext], coeffs: Sequence[int], zero: Ciphertext) -> Ciphertext:
    acc = zero
    for c, k in zip(cts, coeffs):
        if k:
            acc = acc + c * k
    return acc


# -- secure ball computation ------------------------------------------------------

def sbc(sess: ProtocolSession, X, w_cts: Sequence[Ciphertext], config: SbcConfig, y=None,
        workers: Optional[int] = None) -> EncryptedBall:
    """Run the secure ball computation (both parties call this).

    ``X`` is this party's ``n x d_X`` feature block (already scaled to ``[-1, 1]``),
    ``w_cts`` its block of ``w_hat`` encrypted under the peer's key, and ``y`` the
    labels (party B only).
    """
    pid = ProtocolId.SBC
    role = sess.role
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n, d_own = X.shape
    if len(w_cts) != d_own:
        raise ProtocolError(f"{len(w_cts)} weight ciphertexts for {d_own} features")
    if sess.M != config.magnification:
        raise ProtocolError("session and config disagree on the magnification")
    family = config.family
    plan = config.plan(n)
    lower_q, upper_q = config.surrogates()

    sess.send(pid, 0, (n, d_own))
    n_peer, d_peer = sess.recv(pid, 0).payload
    if n_peer != n:
        raise ProtocolError(f"instance count mismatch: {n} here, {n_peer} at peer")
    d = d_own + d_peer
    plan.check(min(int(sess.public_key.n), int(sess.peer_key.n)), config.worst_radius_sq(d), d)

    M = plan.M
    xq = quantize_features(X, M)
    zero = sess.peer_encrypt(0)

    # labels: B publishes E_pkB(c_i) (or E_pkB(y_i) for the exponential weights) to A
    if role is PartyRole.B:
        if y is None:
            raise ProtocolError("party B must supply the labels")
        c_int, y_int = label_terms(family, y, plan)
        payload = y_int if family is LossFamily.EXPONENTIAL else c_int
        sess.send_cts(pid, 1, [sess.own_encrypt(v % sess.public_key.n) for v in payload])
    else:
        label_cts = sess.recv_cts(pid, 1, own=False)
        if len(label_cts) != n:
            raise ProtocolError("label vector length does not match n")

    weighted = family is LossFamily.EXPONENTIAL

    def instance(i: int):
        s_ct = _dot(w_cts, xq[i], zero)
        lo, up = spl(sess, EncryptedShare(s_ct, role, plan.score), (lower_q, upper_q), instance=i)
        gp = spc(sess, 0, instance=i).ct
        lo_ct, up_ct, esc = lo.ct, up.ct, up.escape
        if weighted:
            if role is PartyRole.A:
                yc = label_cts[i]
                lo_ct, up_ct, gp = secure_mul(sess, [(lo_ct, yc), (up_ct, yc), (gp, yc)], PartyRole.A, i)
            else:
                secure_mul(sess, None, PartyRole.A, i)
                lo_ct, up_ct, gp = lo_ct * y_int[i], up_ct * y_int[i], gp * y_int[i]
        clear_state(sess, i)
        return lo_ct, up_ct, gp, esc

    n_workers = workers if workers is not None else config.workers
    if n_workers and n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            per_instance = list(pool.map(instance, range(n)))
    else:
        per_instance = [instance(i) for i in range(n)]

    gap = zero
    escapes = zero
    diffs = []
    for i, (lo_ct, up_ct, gp, esc) in enumerate(per_instance):
        gap = gap + up_ct - lo_ct
        escapes = escapes + esc
        if role is PartyRole.A:
            diffs.append(gp - label_cts[i] if not weighted else gp - M ** plan.slope)
        else:
            diffs.append(gp - c_int[i])
    gap = gap * plan.inv_n

    center, half = [], []
    for k in range(d_own):
        g_k = _dot(diffs, [row[k] for row in xq], zero) * plan.inv_n
        w_part = w_cts[k] * plan.half_w
        g_part = g_k * plan.grad_coef
        center.append(w_part - g_part)
        half.append(w_part + g_part)

    squares = None
    for holder in (PartyRole.A, PartyRole.B):
        if role is holder:
            squares = secure_mul(sess, [(h, h) for h in half], holder)
        else:
            secure_mul(sess, None, holder)
    radius_sq = _dot(squares, [1] * len(squares), zero) + gap * plan.gap_coef

    # reveal only the number of scores that left the upper surrogate's domain
    if role is PartyRole.A:
        sess.send_cts(pid, 2, [escapes.rerandomize()])
        (count,) = sess.recv(pid, 3).payload
    else:
        (enc,) = sess.recv_cts(pid, 2, own=True)
        count = sess.private_key.decrypt(enc)
        sess.send(pid, 3, (count,))
    if count:
        raise DomainEscapeError(
            f"{count} score(s) x_i^T w_hat fall outside the surrogate domain [-{config.bound}, {config.bound}]")
    sess.count("sbc")
    return EncryptedBall(role, center, radius_sq, plan.center, plan.radius, M)


# -- bound evaluation -------------------------------------------------------------

@dataclass(frozen=True)
class BoundResult:
    lb_int: int
    ub_int: int
    scale: int
    magnification: int

    @property
    def lb_exact(self) -> Fraction:
        return Fraction(self.lb_int, self.magnification ** self.scale)

    @property
    def ub_exact(self) -> Fraction:
        return Fraction(self.ub_int, self.magnification ** self.scale)

    @property
    def lb(self) -> float:
        return float(self.lb_exact)

    @property
    def ub(self) -> float:
        return float(self.ub_exact)

    @property
    def decision(self) -> str:
        if self.lb_int > 0:
            return "positive"
        if self.ub_int < 0:
            return "negative"
        return "unknown"


def truncation_steps(total_power: int, M: int, cmp_bits: int) -> list[int]:
    """Split division by ``M**total_power`` into divisors that fit one comparison."""
    per = 0
    while M ** (per + 1) <= 1 << (cmp_bits - 1):
        per += 1
    if per == 0:
        raise EncodingBudgetError("magnification exceeds the comparison bit width")
    steps = []
    left = total_power
    while left > 0:
        k = min(per, left)
        steps.append(M ** k)
        left -= k
    return steps


def product_bound(config: SbcConfig, ball: EncryptedBall, d: int) -> int:
    """Magnitude bound on ``||x||^2 r^2`` at scale ``radius + 2`` (features in [-1, 1])."""
    return int(math.ceil(config.worst_radius_sq(d) * d)) * config.magnification ** (ball.radius_scale + 2)


def bound_eval(sess: ProtocolSession, x_own, ball: EncryptedBall, config: SbcConfig,
               leader: PartyRole = PartyRole.A, d_total: Optional[int] = None,
               instance: Optional[int] = None) -> Optional[BoundResult]:
    """Bounds on ``x^T w*`` for a query split like the features; only ``leader`` learns them.

    The helper gathers ``E(x^T m)``, ``E(||x||^2)`` and ``E(r^2)`` under the leader's
    key, multiplies, truncates the product to scale 2 (rounding up), evaluates the
    public sqrt upper bound under SPL and returns ``E(x^T m -+ sqrt_bar)``.
    """
    pid = ProtocolId.BOUND
    role = sess.role
    helper = leader.other
    M = ball.magnification
    if M != sess.M:
        raise ProtocolError("ball and session disagree on the magnification")
    xq = [FixedPointCodec(M).to_fixed(float(v), 1) for v in np.ravel(x_own)]
    if len(xq) != len(ball.center):
        raise ProtocolError(f"query block has {len(xq)} entries, ball block has {len(ball.center)}")
    zero = sess.peer_encrypt(0)
    out_scale = ball.center_scale + 1

    center = unify_shares(sess, EncryptedShare(_dot(ball.center, xq, zero), role, out_scale), helper, instance)
    r2 = unify_shares(sess, EncryptedShare(ball.radius_sq, role, ball.radius_scale), helper, instance)
    norm_own = sum(v * v for v in xq)
    if role is leader:
        sess.send_cts(pid, 0, [sess.own_encrypt(norm_own)], instance)
    else:
        (norm_peer,) = sess.recv_cts(pid, 0, instance, own=False)
        norm = norm_peer + norm_own

    d = d_total if d_total is not None else 2 * len(xq)
    bound = product_bound(config, ball, d)
    if role is helper:
        (prod,) = secure_mul(sess, [(norm, r2.ct)], helper, instance)
    else:
        secure_mul(sess, None, helper, instance)
    for D in truncation_steps(ball.radius_scale, M, sess.cmp_bits):
        if role is helper:
            (prod,) = secure_truncate(sess, [prod], D, bound, helper, "ceil", instance)
        else:
            secure_truncate(sess, None, D, bound, helper, "ceil", instance)
        bound = bound // D + 1

    sqrt_q = config.sqrt_bar()
    if sqrt_q.out_scale != out_scale:
        raise ProtocolError("sqrt bound scale does not match the center scale")
    share = prod if role is helper else zero
    (res,) = spl(sess, EncryptedShare(share, role, 2), [sqrt_q], instance)
    clear_state(sess, instance)
    root = unify_shares(sess, res.share, helper, instance)

    if role is helper:
        ub = (center.ct + root.ct).rerandomize()
        lb = (center.ct - root.ct).rerandomize()
        sess.send_cts(pid, 1, [lb, ub, res.escape.rerandomize()], instance)
        (escaped,) = sess.recv(pid, 2, instance).payload
        if escaped:
            raise DomainEscapeError("||x||^2 r^2 exceeds the sqrt bound's domain")
        sess.count("bounds")
        return None
    lb_ct, ub_ct, esc_ct = sess.recv_cts(pid, 1, instance, own=True)
    escaped = sess.private_key.decrypt(esc_ct)
    sess.send(pid, 2, (escaped,), instance)
    if escaped:
        raise DomainEscapeError("||x||^2 r^2 exceeds the sqrt bound's domain")
    sess.count("bounds")
    return BoundResult(sess.decrypt_signed(lb_ct), sess.decrypt_signed(ub_ct), out_scale, M)


def bound_eval_many(sess: ProtocolSession, queries, ball: EncryptedBall, config: SbcConfig,
                    leader: PartyRole = PartyRole.A, d_total: Optional[int] = None) -> list[Optional[BoundResult]]:
    return [bound_eval(sess, q, ball, config, leader, d_total, instance=j) for j, q in enumerate(np.atleast_2d(queries))]
