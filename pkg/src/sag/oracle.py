"""Plaintext references for every secure protocol.

Each function comes in two modes.  ``quantized`` mirrors the integer pipeline step for
step, so a correct protocol matches it exactly.  ``real`` uses rational or float
arithmetic with no fixed point, so its distance to the quantized mode measures
rounding drift alone.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from .bounds import BallBound, sag_ball
from .crypto import FixedPointCodec
from .erm import LossFamily, check_labels, surrogates
from .piecewise import PiecewiseConstant, PiecewiseLinear, QuantizedPiecewise
from .sbc import SbcConfig, label_terms, quantize_features, sqrt_upper_bound, truncation_steps


def plain_compare(a: int, b: int) -> int:
    return int(a > b)


def plain_mul(a: int, b: int, n: Optional[int] = None) -> int:
    return a * b if n is None else a * b % n


def _indicators(breakpoints: Sequence, s) -> list[int]:
    """One-hot piece selection with end pieces absorbing out-of-domain inputs."""
    K = len(breakpoints) - 1
    t = [int(s >= T) for T in breakpoints[:-1]] + [int(s > breakpoints[-1])]
    if K == 1:
        return [1]
    return [1 - t[1]] + [t[j] - t[j + 1] for j in range(1, K - 1)] + [t[K - 1]]


def plain_spl(s, g: Union[PiecewiseLinear, QuantizedPiecewise]):
    """``sum_j o_j(s) (alpha_j s + beta_j)``: exact integer for a quantized ``g``,
    exact rational (as a Fraction) for a real one."""
    o = _indicators(g.breakpoints, s)
    if isinstance(g, QuantizedPiecewise):
        return sum(oj * (a * int(s) + b) for oj, a, b in zip(o, g.slopes, g.intercepts))
    s = Fraction(s)
    return sum(oj * (Fraction(a) * s + Fraction(b)) for oj, a, b in zip(o, g.slopes, g.intercepts))


def plain_spc(s, g: Union[PiecewiseLinear, QuantizedPiecewise, PiecewiseConstant]):
    values = g.values if isinstance(g, PiecewiseConstant) else g.slopes
    o = _indicators(g.breakpoints, s)
    if isinstance(g, QuantizedPiecewise):
        return sum(oj * a for oj, a in zip(o, values))
    return sum(oj * Fraction(a) for oj, a in zip(o, values))


def plain_indicators(s, g) -> list[int]:
    return _indicators(g.breakpoints, s)


# -- ball -----------------------------------------------------------------------

def plain_sbc_quantized(X_A, X_B, y, w_hat, config: SbcConfig) -> tuple[list[int], int]:
    """Integer center and squared radius exactly as the encrypted pipeline computes them."""
    family = config.family
    X_A = np.atleast_2d(np.asarray(X_A, dtype=float))
    X_B = np.atleast_2d(np.asarray(X_B, dtype=float))
    n = X_A.shape[0]
    plan = config.plan(n)
    M = plan.M
    lower_q, upper_q = config.surrogates()
    y = check_labels(family, y)
    c_int, y_int = label_terms(family, y, plan)
    xq = [ra + rb for ra, rb in zip(quantize_features(X_A, M), quantize_features(X_B, M))]
    codec = FixedPointCodec(M)
    wq = [codec.to_fixed(float(v), 1) for v in np.ravel(w_hat)]
    d = len(wq)
    gap = 0
    diffs = []
    for i in range(n):
        s = sum(a * b for a, b in zip(xq[i], wq))
        wy = y_int[i] if family is LossFamily.EXPONENTIAL else 1
        gap += wy * (plain_spl(s, upper_q) - plain_spl(s, lower_q))
        diffs.append(wy * plain_spc(s, lower_q) - c_int[i])
    gap *= plan.inv_n
    center, r2 = [], 0
    for k in range(d):
        g_k = sum(di * xq[i][k] for i, di in enumerate(diffs)) * plan.inv_n
        center.append(wq[k] * plan.half_w - g_k * plan.grad_coef)
        h = wq[k] * plan.half_w + g_k * plan.grad_coef
        r2 += h * h
    r2 += gap * plan.gap_coef
    return center, r2


def plain_sbc_real(X, y, w_hat, config: SbcConfig, quantize_inputs: bool = True) -> BallBound:
    """The real-arithmetic ball for the same surrogates.

    With ``quantize_inputs`` the features and ``w_hat`` are first rounded to the
    pipeline's input precision, so the comparison isolates arithmetic rounding from
    input rounding (which can move a score across a surrogate kink).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w_hat = np.asarray(w_hat, dtype=float)
    if quantize_inputs:
        M = config.magnification
        X = np.array(quantize_features(X, M), dtype=float) / M
        codec = FixedPointCodec(M)
        w_hat = np.array([codec.to_fixed(float(v), 1) for v in w_hat], dtype=float) / M
    lower, upper = surrogates(config.family, config.pieces, config.bound)
    y = check_labels(config.family, y)
    return sag_ball(X, y, w_hat, config.lam, config.family, lower, upper)


def decode_ball(center: Sequence[int], r2: int, config: SbcConfig, n: int = 1) -> BallBound:
    plan = config.plan(n)
    M = plan.M
    return BallBound(np.array([Fraction(v, M ** plan.center) for v in center], dtype=float),
                     float(Fraction(r2, M ** plan.radius)))


# -- bounds ---------------------------------------------------------------------

def plain_bound_quantized(x, center: Sequence[int], r2: int, config: SbcConfig, cmp_bits: int = 60) -> tuple[int, int]:
    """``(LB, UB)`` integers at the center scale + 1, as the secure bound evaluation
    computes them (ceil-truncated product, quantized sqrt bound)."""
    plan = config.plan(1)
    M = plan.M
    codec = FixedPointCodec(M)
    xq = [codec.to_fixed(float(v), 1) for v in np.ravel(x)]
    mid = sum(a * b for a, b in zip(xq, center))
    prod = sum(v * v for v in xq) * r2
    for D in truncation_steps(plan.radius, M, cmp_bits):
        prod = -((-prod) // D)
    root = plain_spl(prod, config.sqrt_bar())
    return mid - root, mid + root


def plain_bound_real(x, ball: BallBound, config: Optional[SbcConfig] = None) -> tuple[float, float]:
    """Exact interval ``x^T m -+ ||x|| r``; with ``config`` the sqrt is replaced by the
    real (unquantized) sqrt upper bound, giving the widened interval."""
    x = np.asarray(x, dtype=float)
    mid = float(x @ ball.center)
    if config is None:
        half = float(np.linalg.norm(x)) * ball.radius
    else:
        M = config.magnification
        g = sqrt_upper_bound(config.sqrt_pieces, config.sqrt_max, 1.0 / M ** 2)
        half = float(g.eval(float(x @ x) * max(ball.radius_sq, 0.0)))
    return mid - half, mid + half
