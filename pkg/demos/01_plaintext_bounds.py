"""Sandwiching a loss with piecewise-linear surrogates and bounding the exact minimizer.

Everything here runs in the clear; the secure pipeline computes the same quantities
on encrypted data.  Run with ``python demos/01_plaintext_bounds.py``.
"""

# %%
import numpy as np

from sag.bounds import certify, sag_ball, score_interval
from sag.erm import (RegularizedObjective, approx_solve, base_function, data_domain_bound, exact_solve,
                     surrogates, synthetic)

# %% [markdown]
# A small logistic problem: 100 training rows, 5 features in [-1, 1], and 40 held-out rows.

# %%
full = synthetic("logistic", 140, 5, seed=7, signal=4.0)
train, held_out = full.head(100), full.X[100:]
lam = 0.1
obj = RegularizedObjective.from_dataset(train, lam)
w_star = exact_solve(obj)
print("exact minimizer:", np.round(w_star, 4))

# %% [markdown]
# Tangents give a lower surrogate, chords an upper one.  Both only need to hold on the
# range scores can reach, which follows from lambda and the feature norms.

# %%
bound = data_domain_bound("logistic", lam, train.X, obj.y)
u = base_function("logistic")
grid = np.linspace(-bound, bound, 4001)
for K in (4, 16, 64):
    lower, upper = surrogates("logistic", K, bound)
    gap = upper(grid) - lower(grid)
    print(f"K={K:3d}  max gap {gap.max():.5f}  lower <= u: {bool(np.all(lower(grid) <= u.f(grid) + 1e-12))}")

# %% [markdown]
# Any candidate solution yields a ball around the exact one.  Better candidates and
# finer surrogates shrink it.

# %%
for quality in ("coarse", "medium", "fine"):
    w_hat = approx_solve(obj, quality, bound=bound)
    for K in (10, 100, 1000):
        lower, upper = surrogates("logistic", K, bound)
        ball = sag_ball(train.X, obj.y, w_hat, lam, "logistic", lower, upper)
        assert ball.contains(w_star, slack=1e-9)
        print(f"{quality:>6}  K={K:4d}  radius {ball.radius:.4f}  ||w_hat - w*|| {np.linalg.norm(w_hat - w_star):.4f}")

# %% [markdown]
# Certification: a held-out label is decided when its whole score interval sits on one
# side of zero.  The decisions always agree with the exact model.

# %%
w_hat = approx_solve(obj, "fine", bound=bound)
lower, upper = surrogates("logistic", 1000, bound)
ball = sag_ball(train.X, obj.y, w_hat, lam, "logistic", lower, upper)
decided = 0
for x in held_out:
    c = certify(x, ball)
    if c.decision != "unknown":
        decided += 1
        assert (c.decision == "positive") == (x @ w_star > 0)
print(f"certified {decided} of {len(held_out)} held-out rows")
iv = score_interval(held_out[0], ball)
print(f"first row: score in [{iv.lb:.4f}, {iv.ub:.4f}], exact {held_out[0] @ w_star:.4f}")
