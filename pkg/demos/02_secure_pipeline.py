"""Two parties compute the ball and score bounds without revealing their data.

Party A holds two feature columns, party B the other two plus the labels.  Both halves
run in this process over an in-memory channel; ``sag run`` does the same over TCP.
"""

# %%
import time

import numpy as np

from sag import oracle
from sag.bounds import score_interval
from sag.crypto import keygen
from sag.erm import RegularizedObjective, approx_solve, domain_bound, exact_solve, synthetic
from sag.sbc import SbcConfig, ball_to_real, bound_eval, decode_ball, encrypt_weights, sbc
from sag.transport import SessionParams, memory_session_pair, run_pair

# %% [markdown]
# Public parameters: loss, lambda, number of surrogate pieces and the magnification M
# of the fixed-point encoding.  256-bit keys keep the demo quick; use 1024+ bits for real data.

# %%
data = synthetic("logistic", 20, 4, seed=3, signal=6.0)
lam = 0.2
obj = RegularizedObjective.from_dataset(data, lam)
w_star = exact_solve(obj)
w_hat = approx_solve(obj, "fine")
config = SbcConfig("logistic", lam, 30, domain_bound("logistic", lam, data.d))
keys_a, keys_b = keygen(256), keygen(256)
sa, sb = memory_session_pair(keys_a, keys_b, SessionParams(pieces=30))

# %% [markdown]
# Each party encrypts its block of w_hat under the other's key, then both run the
# secure ball computation.  Each ends with encrypted shares of the center and radius.

# %%
t0 = time.perf_counter()
wa = encrypt_weights(sa, w_hat[:data.d_A])
wb = encrypt_weights(sb, w_hat[data.d_A:])
ball_a, ball_b = run_pair(lambda: sbc(sa, data.X_A, wa, config),
                          lambda: sbc(sb, data.X_B, wb, config, y=obj.y))
print(f"secure ball: {time.perf_counter() - t0:.1f} s, {sa.counters['comparisons']} comparisons")

# %% [markdown]
# Only for checking: pooling both private keys decodes the ball, which matches the
# integer reference exactly and the real-arithmetic ball closely.

# %%
m, r2 = decode_ball(ball_a, ball_b, keys_a[1], keys_b[1])
assert (m, r2) == oracle.plain_sbc_quantized(data.X_A, data.X_B, obj.y, w_hat, config)
ball = ball_to_real(m, r2, ball_a.center_scale, ball_a.radius_scale, config.magnification)
ref = oracle.plain_sbc_real(data.X, obj.y, w_hat, config)
print("center deviation from real arithmetic:", np.abs(ball.center - ref.center).max())
print("w* inside the decoded ball:", ball.contains(w_star))

# %% [markdown]
# Bounds for new rows.  Party A (the leader) learns [LB, UB]; B learns nothing.

# %%
test = synthetic("logistic", 5, 4, seed=11).X
for j, x in enumerate(test):
    res, _ = run_pair(lambda: bound_eval(sa, x[:2], ball_a, config, instance=j),
                      lambda: bound_eval(sb, x[2:], ball_b, config, instance=j))
    exact = score_interval(x, ball)
    print(f"row {j}: [{res.lb:+.4f}, {res.ub:+.4f}] ({res.decision}); plaintext ball gives "
          f"[{exact.lb:+.4f}, {exact.ub:+.4f}]; x^T w* = {x @ w_star:+.4f}")
sa.close()
sb.close()
