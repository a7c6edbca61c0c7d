"""Plaintext ball bounds on the exact minimizer and the score intervals they imply.

With surrogates ``phi <= l <= psi`` and any candidate ``w_hat``, the minimizer of
``lam/2 ||w||^2 + (1/n) sum l(y_i, x_i^T w)`` lies in the ball with center
``m = (w_hat - gradPhi/lam) / 2`` and squared radius
``||(w_hat + gradPhi/lam) / 2||^2 + (Psi - Phi) / lam``.  Every linear score
``eta^T w*`` then lies in ``eta^T m +- ||eta|| r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .erm import LossFamily, base_function, label_slope, label_weight
from .errors import DomainEscapeError, InvariantError
from .piecewise import PiecewiseLinear

RADIUS_TOLERANCE = 1e-9


@dataclass(frozen=True)
class SurrogateAggregates:
    Phi: float
    Psi: float
    gradPhi: np.ndarray


@dataclass(frozen=True)
class BallBound:
    center: np.ndarray
    radius_sq: float

    @property
    def radius(self) -> float:
        return math.sqrt(max(self.radius_sq, 0.0))

    def contains(self, w, slack: float = 0.0) -> bool:
        return float(np.sum((np.asarray(w) - self.center) ** 2)) <= self.radius_sq + slack


@dataclass(frozen=True)
class ScoreInterval:
    lb: float
    ub: float
    eta: np.ndarray

    @property
    def width(self) -> float:
        return self.ub - self.lb

    def __contains__(self, value: float) -> bool:
        return self.lb <= value <= self.ub


@dataclass(frozen=True)
class Certification:
    decision: str  # "positive", "negative" or "unknown"
    interval: ScoreInterval
    probability: Optional[tuple[float, float]] = None


def aggregates(X, y, w_hat, family, lower: Optional[PiecewiseLinear] = None,
               upper: Optional[PiecewiseLinear] = None) -> SurrogateAggregates:
    """Means of the surrogate losses at ``w_hat`` and the gradient of the lower one.

    ``lower``/``upper`` replace the nonlinear part ``u``; ``None`` means the true ``u``.
    An upper surrogate evaluated outside its domain would no longer dominate the
    loss, so that raises :class:`DomainEscapeError`.
    """
    family = LossFamily.parse(family)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    w_hat = np.asarray(w_hat, dtype=float)
    if X.shape[1] != w_hat.shape[0]:
        raise ValueError(f"dimension mismatch: X has {X.shape[1]} columns, w_hat has {w_hat.shape[0]}")
    y = np.asarray(y, dtype=float)
    s = X @ w_hat
    u = base_function(family)
    wy = label_weight(family, y)
    c = label_slope(family, y)
    lo_vals = u.f(s) if lower is None else lower.eval(s)
    lo_grad = u.df(s) if lower is None else lower.eval_derivative(s)
    if upper is None:
        up_vals = u.f(s)
    else:
        if upper.escapes(s):
            raise DomainEscapeError(f"{upper.escapes(s)} score(s) fall outside the upper surrogate's domain {upper.domain}")
        up_vals = upper.eval(s)
    Phi = float(np.mean(wy * lo_vals - c * s))
    Psi = float(np.mean(wy * up_vals - c * s))
    grad = X.T @ (wy * lo_grad - c) / X.shape[0]
    return SurrogateAggregates(Phi, Psi, grad)


def ball(w_hat, lam: float, agg: SurrogateAggregates) -> BallBound:
    if not lam > 0:
        raise ValueError("lambda must be positive")
    w_hat = np.asarray(w_hat, dtype=float)
    scaled = agg.gradPhi / lam
    center = 0.5 * (w_hat - scaled)
    half = 0.5 * (w_hat + scaled)
    radius_sq = float(half @ half) + (agg.Psi - agg.Phi) / lam
    if radius_sq < -RADIUS_TOLERANCE:
        raise InvariantError(f"negative squared radius {radius_sq}: surrogates are not ordered")
    return BallBound(center, radius_sq)


def sag_ball(X, y, w_hat, lam: float, family, lower=None, upper=None) -> BallBound:
    return ball(w_hat, lam, aggregates(X, y, w_hat, family, lower, upper))


def score_interval(eta, b: BallBound) -> ScoreInterval:
    eta = np.asarray(eta, dtype=float)
    mid = float(eta @ b.center)
    half = float(np.linalg.norm(eta)) * b.radius
    return ScoreInterval(mid - half, mid + half, eta)


def coefficient_bounds(b: BallBound) -> list[ScoreInterval]:
    """Intervals for each coordinate of ``w*`` (``eta`` = unit vectors)."""
    d = b.center.shape[0]
    return [score_interval(np.eye(d)[h], b) for h in range(d)]


def _sigmoid(z: float) -> float:
    if z >= 0:
        return 1.0 / (1.0 + math.exp(-z))
    e = math.exp(z)
    return e / (1.0 + e)


def decide(interval: ScoreInterval, family=LossFamily.LOGISTIC) -> Certification:
    if interval.lb > 0:
        decision = "positive"
    elif interval.ub < 0:
        decision = "negative"
    else:
        decision = "unknown"
    prob = None
    if LossFamily.parse(family) is LossFamily.LOGISTIC:
        prob = (_sigmoid(interval.lb), _sigmoid(interval.ub))
    return Certification(decision, interval, prob)


def certify(x_tilde, b: BallBound, family=LossFamily.LOGISTIC) -> Certification:
    """Sign decision on ``x_tilde^T w*`` plus, for logistic, the class-probability interval."""
    return decide(score_interval(x_tilde, b), family)
