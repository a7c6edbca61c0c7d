"""L2-regularized empirical risk minimization for three GLM-style losses.

Every loss is written as ``l(y, s) = w(y) * u(s) - c(y) * s`` with ``s = x^T w``, a
convex ``u`` that carries all the nonlinearity and a label-dependent linear part:

============  ===================  ======  ========
family        u(s)                 w(y)    c(y)
============  ===================  ======  ========
logistic      log(1 + exp(-s))     1       y - 1
poisson       exp(s)               1       y
exponential   exp(-s)              y       1
============  ===================  ======  ========

Logistic labels live in {0, 1} internally (so the loss is the usual negative
log-likelihood); labels given as {-1, +1} are converted on ingestion.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .errors import LabelDomainError, OracleFailure
from .piecewise import ConvexScalarFunction, PiecewiseLinear, chord_upper_bound, tangent_lower_bound

log = logging.getLogger(__name__)


class LossFamily(enum.Enum):
    LOGISTIC = "logistic"
    POISSON = "poisson"
    EXPONENTIAL = "exponential"

    @classmethod
    def parse(cls, value: Union[str, "LossFamily"]) -> "LossFamily":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ValueError(f"unknown loss family {value!r}; choose from {[f.value for f in cls]}") from None


def _logistic_u(s):
    return np.logaddexp(0.0, -np.asarray(s, dtype=float))


def _logistic_du(s):
    return -1.0 / (1.0 + np.exp(np.asarray(s, dtype=float)))


_BASE = {
    LossFamily.LOGISTIC: ConvexScalarFunction("log(1+exp(-s))", _logistic_u, _logistic_du),
    LossFamily.POISSON: ConvexScalarFunction("exp(s)", np.exp, np.exp),
    LossFamily.EXPONENTIAL: ConvexScalarFunction("exp(-s)", lambda s: np.exp(-np.asarray(s, dtype=float)),
                                                 lambda s: -np.exp(-np.asarray(s, dtype=float))),
}


def base_function(family: LossFamily) -> ConvexScalarFunction:
    return _BASE[LossFamily.parse(family)]


def check_labels(family: LossFamily, y) -> np.ndarray:
    """Validate labels and map them to the internal convention."""
    family = LossFamily.parse(family)
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise LabelDomainError("labels must be finite")
    if family is LossFamily.LOGISTIC:
        vals = set(np.unique(y).tolist())
        if vals <= {0.0, 1.0}:
            return y
        if vals <= {-1.0, 1.0}:
            return (y + 1) / 2
        raise LabelDomainError(f"logistic labels must be in {{0,1}} or {{-1,+1}}, got {sorted(vals)[:5]}")
    if family is LossFamily.POISSON and np.any(y < 0):
        raise LabelDomainError("poisson labels must be non-negative")
    if family is LossFamily.EXPONENTIAL and np.any(y <= 0):
        raise LabelDomainError("exponential labels must be positive")
    return y


def label_weight(family: LossFamily, y):
    """Factor ``w(y)`` multiplying ``u``."""
    y = np.asarray(y, dtype=float)
    return y.copy() if LossFamily.parse(family) is LossFamily.EXPONENTIAL else np.ones_like(y)


def label_slope(family: LossFamily, y):
    """``c(y)`` in the linear part ``-c(y) * s``."""
    family = LossFamily.parse(family)
    y = np.asarray(y, dtype=float)
    if family is LossFamily.LOGISTIC:
        return y - 1.0
    if family is LossFamily.POISSON:
        return y.copy()
    return np.ones_like(y)


def loss_eval(family, y, s):
    family = LossFamily.parse(family)
    u = base_function(family)
    return label_weight(family, y) * u.f(s) - label_slope(family, y) * np.asarray(s, dtype=float)


def loss_grad(family, y, s):
    """Derivative of the loss with respect to the score ``s``."""
    family = LossFamily.parse(family)
    u = base_function(family)
    return label_weight(family, y) * u.df(s) - label_slope(family, y)


def surrogates(family, K: int, bound: float) -> tuple[PiecewiseLinear, PiecewiseLinear]:
    """Tangent lower and chord upper piecewise bounds of ``u`` on ``[-bound, bound]``."""
    u = base_function(family)
    return tangent_lower_bound(u, K, -bound, bound), chord_upper_bound(u, K, -bound, bound)


def weight_bound(family, lam: float, mean_loss_at_zero: Optional[float] = None) -> float:
    """Norm bound on the minimizer: ``lam/2 ||w*||^2 <= P(w*) <= P(0) = mean_i l(y_i, 0)``.

    For logistic and poisson ``l(y, 0)`` does not depend on the data; for exponential
    it is the mean label, which must then be supplied.
    """
    family = LossFamily.parse(family)
    if mean_loss_at_zero is None:
        if family is LossFamily.EXPONENTIAL:
            raise ValueError("exponential family needs the mean label to bound the weights")
        mean_loss_at_zero = math.log(2.0) if family is LossFamily.LOGISTIC else 1.0
    return math.sqrt(2.0 * mean_loss_at_zero / lam)


def domain_bound(family, lam: float, d: int, mean_loss_at_zero: Optional[float] = None,
                 margin: float = 1.5) -> float:
    """Public bound on ``|x^T w|`` for features scaled to ``[-1, 1]``.

    ``||x|| <= sqrt(d)`` and ``||w|| <= weight_bound``; ``margin`` leaves room for
    approximate solutions whose norm overshoots the exact one.
    """
    return margin * math.sqrt(d) * weight_bound(family, lam, mean_loss_at_zero)


def data_domain_bound(family, lam: float, X, y, margin: float = 1.5) -> float:
    """Tighter bound from the data at hand: ``max ||x_i|| * weight_bound``."""
    family = LossFamily.parse(family)
    at_zero = float(np.mean(loss_eval(family, y, 0.0)))
    radius = float(np.max(np.linalg.norm(np.atleast_2d(X), axis=1), initial=0.0))
    return margin * max(radius, 1e-12) * weight_bound(family, lam, at_zero)


# -- datasets ---------------------------------------------------------------------

@dataclass
class VerticalDataset:
    """Instances shared by index; party A owns the first ``d_A`` columns, B the rest and ``y``."""

    X_A: np.ndarray
    X_B: np.ndarray
    y: np.ndarray
    scaling: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X_A = np.atleast_2d(np.asarray(self.X_A, dtype=float))
        self.X_B = np.atleast_2d(np.asarray(self.X_B, dtype=float))
        self.y = np.asarray(self.y, dtype=float)
        if not (self.X_A.shape[0] == self.X_B.shape[0] == self.y.shape[0]):
            raise ValueError("parties disagree on the number of instances")

    @property
    def X(self) -> np.ndarray:
        return np.hstack([self.X_A, self.X_B])

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d_A(self) -> int:
        return self.X_A.shape[1]

    @property
    def d(self) -> int:
        return self.X_A.shape[1] + self.X_B.shape[1]

    def head(self, n: int) -> "VerticalDataset":
        return VerticalDataset(self.X_A[:n], self.X_B[:n], self.y[:n], dict(self.scaling))


def synthetic(family="logistic", n: int = 100, d: int = 5, seed: int = 0, d_A: Optional[int] = None,
              signal: float = 2.0) -> VerticalDataset:
    """Random features in ``[-1, 1]`` with labels drawn from the family's model."""
    family = LossFamily.parse(family)
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1, 1, size=(n, d))
    w = rng.normal(size=d)
    w *= signal / max(np.linalg.norm(w), 1e-12)
    s = X @ w
    if family is LossFamily.LOGISTIC:
        y = (rng.uniform(size=n) < 1 / (1 + np.exp(-s))).astype(float)
    elif family is LossFamily.POISSON:
        y = rng.poisson(np.exp(s)).astype(float)
    else:
        # exponential with rate exp(-s): mean exp(s)
        y = rng.exponential(np.exp(s))
    d_A = d // 2 if d_A is None else d_A
    return VerticalDataset(X[:, :d_A], X[:, d_A:], y)


def _scale_columns(M: np.ndarray, names: Sequence[str]) -> tuple[np.ndarray, dict]:
    out = np.zeros_like(M)
    meta = {}
    for k, name in enumerate(names):
        lo, hi = float(M[:, k].min()), float(M[:, k].max())
        meta[name] = [lo, hi]
        if hi > lo:
            out[:, k] = 2 * (M[:, k] - lo) / (hi - lo) - 1
        else:
            log.warning("column %r is constant; scaled to 0", name)
    return out, meta


@dataclass
class PartyData:
    """One party's share of a vertically partitioned dataset after ingestion."""

    role: str
    X: np.ndarray
    columns: list[str]
    scaling: dict
    y: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.X.shape[0]


def ingest_csv(path: Union[str, Path], role: str, schema: Optional[dict] = None, scale: bool = True) -> PartyData:
    """Read a party's CSV (header row, comma separated).

    ``schema`` may name the ``features`` to use and the ``label`` column (party B only);
    by default every non-label column is a feature.  Features are min-max scaled to
    ``[-1, 1]`` per column.
    """
    schema = schema or {}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = [h.strip() for h in rows[0]], [r for r in rows[1:] if r]
    label = schema.get("label")
    if label is not None and label not in header:
        raise ValueError(f"{path}: label column {label!r} not found")
    features = schema.get("features") or [h for h in header if h != label]
    idx = [header.index(f) for f in features]
    try:
        X = np.array([[float(r[i]) for i in idx] for r in body], dtype=float).reshape(len(body), len(idx))
        y = np.array([float(r[header.index(label)]) for r in body]) if label is not None else None
    except ValueError as exc:
        raise ValueError(f"{path}: non-numeric cell ({exc})") from None
    meta = {}
    if scale and X.size:
        X, meta = _scale_columns(X, features)
    return PartyData(str(role), X, list(features), meta, y)


def apply_scaling(X, columns: Sequence[str], scaling: dict) -> np.ndarray:
    """Map raw rows into the ``[-1, 1]`` feature space fixed at ingestion."""
    X = np.atleast_2d(np.asarray(X, dtype=float)).copy()
    for k, name in enumerate(columns):
        if name not in scaling:
            continue
        lo, hi = scaling[name]
        X[:, k] = 2 * (X[:, k] - lo) / (hi - lo) - 1 if hi > lo else 0.0
    return X


def export_csv(path: Union[str, Path], X: np.ndarray, columns: Sequence[str], y=None, label: str = "y") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(list(columns) + ([label] if y is not None else []))
        for i, row in enumerate(np.atleast_2d(X)):
            w.writerow([repr(float(v)) for v in row] + ([repr(float(y[i]))] if y is not None else []))


def save_manifest(path: Union[str, Path], data: PartyData) -> None:
    Path(path).write_text(json.dumps({"role": data.role, "n": data.n, "columns": data.columns,
                                      "scaling": data.scaling}, indent=2))


# -- objective and solvers --------------------------------------------------------

@dataclass
class RegularizedObjective:
    """``lam/2 ||w||^2 + (1/n) sum_i l(y_i, x_i^T w)``."""

    lam: float
    family: LossFamily
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        self.family = LossFamily.parse(self.family)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = check_labels(self.family, self.y)

    @classmethod
    def from_dataset(cls, data: VerticalDataset, lam: float, family="logistic") -> "RegularizedObjective":
        return cls(lam, family, data.X, data.y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def value(self, w) -> float:
        s = self.X @ w
        return 0.5 * self.lam * float(w @ w) + float(np.mean(loss_eval(self.family, self.y, s)))

    def grad(self, w) -> np.ndarray:
        s = self.X @ w
        return self.lam * w + self.X.T @ loss_grad(self.family, self.y, s) / self.n

    def hessian(self, w) -> np.ndarray:
        s = self.X @ w
        if self.family is LossFamily.LOGISTIC:
            p = 1 / (1 + np.exp(-s))
            curv = p * (1 - p)
        elif self.family is LossFamily.POISSON:
            curv = np.exp(s)
        else:
            curv = self.y * np.exp(-s)
        return self.lam * np.eye(self.X.shape[1]) + (self.X.T * curv) @ self.X / self.n


def exact_solve(obj: RegularizedObjective, tol: float = 1e-10, max_iter: int = 100,
                w0: Optional[np.ndarray] = None) -> np.ndarray:
    """Newton's method with backtracking on the smooth, strongly convex objective.

    Stops once ``||grad|| <= tol``; raises :class:`OracleFailure` otherwise.
    """
    w = np.zeros(obj.X.shape[1]) if w0 is None else np.array(w0, dtype=float)
    f = obj.value(w)
    for _ in range(max_iter):
        g = obj.grad(w)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return w
        step = np.linalg.solve(obj.hessian(w), -g)
        t = 1.0
        slack = 1e-13 * max(1.0, abs(f))  # objective values this close are float noise
        while True:
            w_new = w + t * step
            f_new = obj.value(w_new)
            if f_new <= f + 1e-4 * t * float(g @ step) + slack or t < 1e-10:
                break
            t *= 0.5
        w, f = w_new, f_new
    if float(np.linalg.norm(obj.grad(w))) <= tol:
        return w
    raise OracleFailure(f"exact solver did not reach ||grad|| <= {tol} in {max_iter} iterations")


QUALITY_PIECES = {"coarse": 4, "medium": 16, "fine": 128}


def approx_solve(obj: RegularizedObjective, quality: Optional[str] = "medium",
                 bound: Optional[float] = None) -> np.ndarray:
    """Minimizer of the objective with ``u`` replaced by its ``K``-piece tangent lower bound.

    ``quality`` picks ``K`` (coarse 4, medium 16, fine 128); ``None`` uses the true
    loss and returns the exact minimizer.  The surrogate problem is a QP, solved with
    cvxpy in epigraph form.
    """
    if quality is None:
        return exact_solve(obj)
    if quality not in QUALITY_PIECES:
        raise ValueError(f"quality must be one of {sorted(QUALITY_PIECES)} or None")
    import cvxpy as cp

    K = QUALITY_PIECES[quality]
    if bound is None:
        bound = data_domain_bound(obj.family, obj.lam, obj.X, obj.y)
    lower, _ = surrogates(obj.family, K, bound)
    weights = label_weight(obj.family, obj.y)
    c = label_slope(obj.family, obj.y)
    n, d = obj.X.shape
    w = cp.Variable(d)
    t = cp.Variable(n)
    s = obj.X @ w
    a = np.asarray(lower.slopes)
    b = np.asarray(lower.intercepts)
    cons = [cp.reshape(t, (n, 1), order="C") >= cp.reshape(s, (n, 1), order="C") @ a.reshape(1, -1) + b.reshape(1, -1)]
    problem = cp.Problem(cp.Minimize(0.5 * obj.lam * cp.sum_squares(w) + (weights @ t - c @ s) / n), cons)
    try:
        problem.solve(solver=cp.CLARABEL)
    except cp.error.SolverError as exc:
        raise OracleFailure(f"surrogate solver failed: {exc}") from exc
    if w.value is None or problem.status not in ("optimal", "optimal_inaccurate"):
        raise OracleFailure(f"surrogate solver status {problem.status}")
    return np.asarray(w.value, dtype=float)


def gradient_steps(obj: RegularizedObjective, steps: int, lr: Optional[float] = None) -> np.ndarray:
    """A deliberately rough solution: a few plain gradient steps from zero."""
    w = np.zeros(obj.X.shape[1])
    if lr is None:
        lr = 1.0 / (obj.lam + float(np.linalg.norm(obj.X, 2) ** 2) / obj.n)
    for _ in range(steps):
        w = w - lr * obj.grad(w)
    return w
