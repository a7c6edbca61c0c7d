"""Secure evaluation of piecewise-linear functions (SPL) and their slopes (SPC).

Given additive encrypted shares of ``s`` (party A holds ``E_pkB(s_A)``, party B holds
``E_pkA(s_B)``), :func:`spl` returns shares ``g_A + g_B = g(s)`` for one or more
quantized functions of the same ``s``.  The split of ``s`` and the piece indicators
are computed once per call; :func:`spc` reuses those indicators to produce ``g'(s)``
with no further interaction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .crypto import Ciphertext
from .errors import ComparisonRangeError, ProtocolOrderError
from .piecewise import QuantizedPiecewise
from .primitives import EncryptedShare, randomized_split, secure_compare, unify_shares
from .transport import PartyRole, ProtocolSession


@dataclass
class SplResult:
    """This party's share ``E_peer(g_X)`` of ``g(s)`` at ``stage_scale``."""

    share: EncryptedShare
    escape: Ciphertext  # E_peer(number of domain ends exceeded: 0 when T_0 <= s <= T_K)

    @property
    def ct(self) -> Ciphertext:
        return self.share.ct

    @property
    def stage_scale(self) -> int:
        return self.share.stage_scale


@dataclass
class _Evaluation:
    funcs: tuple[QuantizedPiecewise, ...]
    indicators: list[list[Ciphertext]]


def _indicators(t: list[Ciphertext]) -> list[Ciphertext]:
    """Piece indicators from ``t_j = I[s >= T_j]`` (j < K) and ``t_K = I[s > T_K]``.

    The first and last pieces absorb inputs below ``T_0`` / above ``T_K``, so exactly
    one indicator is 1 for every ``s``.
    """
    K = len(t) - 1
    if K == 1:
        return [Ciphertext(t[0].pk.g_pow(1), t[0].pk)]
    out = [1 - t[1]]
    out += [t[j] - t[j + 1] for j in range(1, K - 1)]
    out.append(t[K - 1])
    return out


def spl(sess: ProtocolSession, share: EncryptedShare, funcs: Sequence[QuantizedPiecewise],
        instance: Optional[int] = None) -> list[SplResult]:
    """Evaluate every function in ``funcs`` at the shared ``s``; one result per function.

    All functions must take their input at ``share.stage_scale``.  Party A ends with
    ``E_pkB(g_A)`` where ``g_A = sum_j o_j (alpha_j p_A + beta_j)``; party B with
    ``E_pkA(g_B)`` where ``g_B = sum_j o_j alpha_j p_B``.
    """
    funcs = tuple(funcs)
    ell = sess.cmp_bits
    headroom = 1 << (ell - 3)
    for g in funcs:
        if g.in_scale != share.stage_scale:
            raise ComparisonRangeError(
                f"function expects inputs at scale {g.in_scale}, share is at scale {share.stage_scale}")
        if max(abs(g.breakpoints[0]), abs(g.breakpoints[-1])) >= headroom:
            raise ComparisonRangeError(f"breakpoints exceed the {ell}-bit comparison budget")

    unified = unify_shares(sess, share, PartyRole.A, instance)
    if sess.role is PartyRole.A:
        p = randomized_split(sess, unified.ct, PartyRole.A, ell - 2, instance)
        operands = [p for g in funcs for _ in g.breakpoints]
    else:
        p = randomized_split(sess, None, PartyRole.A, ell - 2, instance)
        operands = []
        for g in funcs:
            operands += [t - 1 - p for t in g.breakpoints[:-1]]
            operands.append(g.breakpoints[-1] - p)
    t_all = secure_compare(sess, operands, instance)

    results: list[SplResult] = []
    indicators: list[list[Ciphertext]] = []
    pos = 0
    for g in funcs:
        t = t_all[pos:pos + g.K + 1]
        pos += g.K + 1
        o = [c.rerandomize() for c in _indicators(t)]
        indicators.append(o)
        if sess.role is PartyRole.A:
            coeffs = [a * p + b for a, b in zip(g.slopes, g.intercepts)]
        else:
            coeffs = [a * p for a in g.slopes]
        acc = o[0] * coeffs[0]
        for c, k in zip(o[1:], coeffs[1:]):
            acc = acc + c * k
        escape = (1 - t[0]) + t[g.K]
        results.append(SplResult(EncryptedShare(acc, sess.role, g.out_scale), escape))
    sess.state[("spl", instance)] = _Evaluation(funcs, indicators)
    sess.count("spl", len(funcs))
    return results


def spc(sess: ProtocolSession, func_index: int = 0, instance: Optional[int] = None) -> EncryptedShare:
    """``E_peer(g'(s))`` for the ``func_index``-th function of the last SPL on this stream.

    Both parties hold the indicator encryptions, so each computes the full value
    ``prod_j E(o_j)^{alpha_j}`` locally, at the function's ``slope_scale``.
    """
    ev = sess.state.get(("spl", instance))
    if ev is None:
        raise ProtocolOrderError(f"spc on stream {instance} requires a preceding spl evaluation")
    g = ev.funcs[func_index]
    o = ev.indicators[func_index]
    acc = o[0] * g.slopes[0]
    for c, a in zip(o[1:], g.slopes[1:]):
        acc = acc + c * a
    sess.count("spc")
    return EncryptedShare(acc, sess.role, g.slope_scale)


def clear_state(sess: ProtocolSession, instance: Optional[int] = None) -> None:
    sess.state.pop(("spl", instance), None)
