"""Piecewise-linear surrogates of convex scalar functions.

A :class:`PiecewiseLinear` with breakpoints ``T_0 < ... < T_K`` uses piece ``j`` on
``[T_{j-1}, T_j)``; the last piece also owns ``T_K``.  Tangent constructions give lower
bounds of a convex function, chord constructions give upper bounds.  :func:`quantize`
turns a real-coefficient function into the integer form evaluated under encryption.
"""

from __future__ import annotations

import bisect
import json
import logging
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np

from .crypto import FixedPointCodec
from .errors import ConstructionError, EncodingBudgetError

log = logging.getLogger(__name__)

KINDS = ("lower", "upper", "generic")


@dataclass(frozen=True)
class ConvexScalarFunction:
    """A scalar function given by its value and a subderivative."""

    name: str
    f: Callable[[float], float]
    df: Callable[[float], float]
    convex: bool = True

    def __call__(self, s):
        return self.f(s)


def _as_tuple(xs) -> tuple[float, ...]:
    return tuple(float(x) for x in xs)


@dataclass(frozen=True)
class PiecewiseConstant:
    breakpoints: tuple[float, ...]
    values: tuple[float, ...]

    def piece_index(self, s: float) -> int:
        return _piece_index(self.breakpoints, s)

    def eval(self, s):
        return _eval_pieces(self.breakpoints, self.values, None, s)


@dataclass(frozen=True)
class PiecewiseLinear:
    breakpoints: tuple[float, ...]
    slopes: tuple[float, ...]
    intercepts: tuple[float, ...]
    kind: str = "generic"

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", _as_tuple(self.breakpoints))
        object.__setattr__(self, "slopes", _as_tuple(self.slopes))
        object.__setattr__(self, "intercepts", _as_tuple(self.intercepts))
        k = len(self.slopes)
        if k < 1 or len(self.intercepts) != k or len(self.breakpoints) != k + 1:
            raise ConstructionError("need K >= 1 pieces with K+1 breakpoints")
        if any(b <= a for a, b in zip(self.breakpoints, self.breakpoints[1:])):
            raise ConstructionError("breakpoints must be strictly increasing")
        if self.kind not in KINDS:
            raise ConstructionError(f"kind must be one of {KINDS}")

    @property
    def K(self) -> int:
        return len(self.slopes)

    @property
    def domain(self) -> tuple[float, float]:
        return self.breakpoints[0], self.breakpoints[-1]

    def piece_index(self, s: float) -> int:
        return _piece_index(self.breakpoints, s)

    def escapes(self, s) -> int:
        """Number of inputs outside ``[T_0, T_K]``."""
        arr = np.atleast_1d(np.asarray(s, dtype=float))
        lo, hi = self.domain
        return int(np.count_nonzero((arr < lo) | (arr > hi)))

    def eval(self, s):
        """Evaluate at ``s`` (scalar or array).

        Outside the domain, lower and generic bounds extend their end pieces and upper
        bounds clamp ``s`` to the domain; either way the escape is logged.
        """
        n_out = self.escapes(s)
        if n_out:
            log.warning("%s piecewise function evaluated at %d point(s) outside %s", self.kind, n_out, self.domain)
        clamp = self.domain if self.kind == "upper" else None
        return _eval_pieces(self.breakpoints, self.slopes, self.intercepts, s, clamp)

    __call__ = eval

    def derivative(self) -> PiecewiseConstant:
        return PiecewiseConstant(self.breakpoints, self.slopes)

    def eval_derivative(self, s):
        return self.derivative().eval(s)

    def continuity_residuals(self) -> list[float]:
        return [
            abs(self.slopes[j] * t + self.intercepts[j] - (self.slopes[j + 1] * t + self.intercepts[j + 1]))
            for j, t in enumerate(self.breakpoints[1:-1])
        ]

    def to_json(self) -> str:
        return json.dumps({
            "breakpoints": list(self.breakpoints),
            "slopes": list(self.slopes),
            "intercepts": list(self.intercepts),
            "kind": self.kind,
        })

    @classmethod
    def from_json(cls, text: str) -> "PiecewiseLinear":
        doc = json.loads(text)
        return cls(doc["breakpoints"], doc["slopes"], doc["intercepts"], doc.get("kind", "generic"))


def _piece_index(breakpoints: Sequence, s) -> int:
    k = len(breakpoints) - 1
    return min(max(bisect.bisect_right(breakpoints, s, 1, k) - 1, 0), k - 1)


def _eval_pieces(breakpoints, slopes, intercepts, s, clamp=None):
    arr = np.asarray(s, dtype=float)
    if clamp is not None:
        arr = np.clip(arr, *clamp)
    inner = np.asarray(breakpoints[1:-1], dtype=float)
    idx = np.searchsorted(inner, arr, side="right")
    out = np.asarray(slopes)[idx]
    if intercepts is not None:
        out = out * arr + np.asarray(intercepts)[idx]
    return float(out) if out.ndim == 0 else out


def _check_domain(lo: float, hi: float, K: int) -> None:
    if K < 1:
        raise ConstructionError("piece count K must be >= 1")
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise ConstructionError(f"invalid domain [{lo}, {hi}]")


def tangent_lower_bound(u: ConvexScalarFunction, K: int, lo: float = -10.0, hi: float = 10.0) -> PiecewiseLinear:
    """Max of ``K`` tangents of convex ``u``, touching at the midpoints of a uniform grid.

    Interior breakpoints sit where consecutive tangents cross, which is what makes the
    result continuous; each tangency point lies inside its own piece.
    """
    _check_domain(lo, hi, K)
    if not u.convex:
        raise ConstructionError(f"{u.name} is not convex; tangents do not give a lower bound")
    grid = np.linspace(lo, hi, K + 1)
    centers = (grid[:-1] + grid[1:]) / 2
    slopes = [float(u.df(c)) for c in centers]
    intercepts = [float(u.f(c)) - a * c for a, c in zip(slopes, centers)]
    scale = max(1.0, max(abs(a) for a in slopes))
    breaks = [lo]
    for j in range(K - 1):
        da = slopes[j + 1] - slopes[j]
        if da < -1e-12 * scale:
            raise ConstructionError(f"{u.name}: subderivative decreases near s={centers[j]:.4g}; not convex")
        if da <= 1e-12 * scale:
            t = float(grid[j + 1])  # (numerically) parallel tangents: u is linear here
        else:
            t = (intercepts[j] - intercepts[j + 1]) / da
            t = min(max(t, float(centers[j])), float(centers[j + 1]))
        breaks.append(t)
    breaks.append(hi)
    return PiecewiseLinear(breaks, slopes, intercepts, "lower")


def chord_upper_bound(u: ConvexScalarFunction, K: int, lo: float = -10.0, hi: float = 10.0) -> PiecewiseLinear:
    """Linear interpolation of convex ``u`` at ``K+1`` uniform breakpoints."""
    _check_domain(lo, hi, K)
    if not u.convex:
        raise ConstructionError(f"{u.name} is not convex; chords do not give an upper bound")
    grid = np.linspace(lo, hi, K + 1)
    vals = [float(u.f(t)) for t in grid]
    slopes = [(vals[j + 1] - vals[j]) / (grid[j + 1] - grid[j]) for j in range(K)]
    if any(b < a - 1e-9 * max(1.0, abs(a)) for a, b in zip(slopes, slopes[1:])):
        raise ConstructionError(f"{u.name}: chord slopes decrease; not convex")
    intercepts = [vals[j] - slopes[j] * grid[j] for j in range(K)]
    return PiecewiseLinear(grid, slopes, intercepts, "upper")


# -- integer form -----------------------------------------------------------------

@dataclass(frozen=True)
class QuantizedPiecewise:
    """Integer breakpoints (scale ``in_scale``), slopes (scale ``slope_scale``) and
    intercepts (scale ``in_scale + slope_scale``) of a piecewise-linear function."""

    breakpoints: tuple[int, ...]
    slopes: tuple[int, ...]
    intercepts: tuple[int, ...]
    magnification: int
    in_scale: int
    slope_scale: int
    kind: str = "generic"

    @property
    def K(self) -> int:
        return len(self.slopes)

    @property
    def out_scale(self) -> int:
        return self.in_scale + self.slope_scale

    def piece_index(self, s: int) -> int:
        return _piece_index(self.breakpoints, s)

    def escaped(self, s: int) -> bool:
        return s < self.breakpoints[0] or s > self.breakpoints[-1]

    def eval_int(self, s: int) -> int:
        """Exact integer value at an integer input using the extended end pieces,
        which is what the secure evaluation computes."""
        j = self.piece_index(s)
        return self.slopes[j] * s + self.intercepts[j]

    def derivative_int(self, s: int) -> int:
        return self.slopes[self.piece_index(s)]

    def dequantize(self) -> PiecewiseLinear:
        m = self.magnification
        return PiecewiseLinear(
            [t / m ** self.in_scale for t in self.breakpoints],
            [a / m ** self.slope_scale for a in self.slopes],
            [b / m ** self.out_scale for b in self.intercepts],
            self.kind,
        )

    def max_abs_coefficient(self) -> int:
        return max(abs(v) for v in (*self.breakpoints, *self.slopes, *self.intercepts))

    def scale_slopes(self, factor: int) -> "QuantizedPiecewise":
        """Multiply slopes and intercepts by a positive integer (keeps either bound valid)."""
        if factor <= 0:
            raise ValueError("scaling factor must be positive")
        return QuantizedPiecewise(self.breakpoints, tuple(a * factor for a in self.slopes),
                                  tuple(b * factor for b in self.intercepts), self.magnification,
                                  self.in_scale, self.slope_scale, self.kind)


def quantize(g: PiecewiseLinear, codec: FixedPointCodec, in_scale: int = 1, slope_scale: int = 2,
             direction: Optional[str] = None) -> QuantizedPiecewise:
    """Round ``g`` to integers.

    ``direction=None`` rounds each coefficient to nearest.  ``"up"``/``"down"`` round
    slopes to nearest and then push each intercept so that the integer piece dominates
    (or is dominated by) the original piece's line on every integer input of the
    quantized piece.  That is what keeps a bound built from globally valid lines (the
    tangents of a convex or concave function) valid after rounding.
    """
    if direction not in (None, "up", "down"):
        raise ValueError("direction must be None, 'up' or 'down'")
    M = codec.M
    bq = [int(codec.to_fixed(t, in_scale)) for t in g.breakpoints]
    if any(b <= a for a, b in zip(bq, bq[1:])):
        raise ConstructionError("breakpoints collide after quantization; use a finer magnification")
    aq = [int(codec.to_fixed(a, slope_scale)) for a in g.slopes]
    out = in_scale + slope_scale
    if direction is None:
        cq = [int(codec.to_fixed(b, out)) for b in g.intercepts]
    else:
        cq = []
        K = g.K
        for j in range(K):
            lo = bq[j]
            hi = bq[j + 1] if j == K - 1 else bq[j + 1] - 1
            alpha, beta = Fraction(g.slopes[j]), Fraction(g.intercepts[j])
            gaps = []
            for e in (lo, hi):
                exact = (alpha * Fraction(e, M ** in_scale) + beta) * M ** out
                gaps.append(exact - aq[j] * e)
            cq.append(math.ceil(max(gaps)) if direction == "up" else math.floor(min(gaps)))
    q = QuantizedPiecewise(tuple(bq), tuple(aq), tuple(cq), M, in_scale, slope_scale, g.kind)
    if codec.N is not None and 2 * q.max_abs_coefficient() >= codec.N:
        raise EncodingBudgetError("quantized coefficients exceed the signed plaintext range")
    return q


def integer_function(breakpoints: Sequence[int], slopes: Sequence[int], intercepts: Sequence[int],
                     magnification: int = 1, in_scale: int = 0, slope_scale: int = 0,
                     kind: str = "generic") -> QuantizedPiecewise:
    """A function whose coefficients are already integers (no rounding involved)."""
    if any(b <= a for a, b in zip(breakpoints, breakpoints[1:])):
        raise ConstructionError("breakpoints must be strictly increasing")
    if len(breakpoints) != len(slopes) + 1 or len(slopes) != len(intercepts):
        raise ConstructionError("need K+1 breakpoints for K pieces")
    return QuantizedPiecewise(tuple(int(b) for b in breakpoints), tuple(int(a) for a in slopes),
                              tuple(int(c) for c in intercepts), magnification, in_scale, slope_scale, kind)
