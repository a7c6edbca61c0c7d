"""How the secure ball's cost grows with the number of surrogate pieces K.

Each instance needs one secure comparison per breakpoint of each surrogate, so the
time per instance should grow about linearly in K.
"""

# %%
from sag.cli import bench

rows = bench([5, 10, 20, 40], n=3, d=4, key_bits=256)
base = rows[0]
for r in rows:
    print(f"K={r['K']:3d}  {r['seconds_per_instance']:.3f} s/instance  "
          f"{r['comparisons']:4d} comparisons  x{r['seconds_per_instance'] / base['seconds_per_instance']:.2f}")
