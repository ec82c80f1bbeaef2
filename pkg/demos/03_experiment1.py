"""Closed-loop voltage regulation at one operating point (experiment 1).

    python3 demos/03_experiment1.py [1am|7am|1pm|7pm]
"""

import sys
import time

import numpy as np

from voltmpc import bundled_spec, load_network, run

op = sys.argv[1] if len(sys.argv) > 1 else "7am"
t0 = time.perf_counter()
res = run(bundled_spec(f"experiment1_{op}"), network=load_network())
elapsed = time.perf_counter() - t0

t = np.array([r.time for r in res.trace])
V = np.array([r.v for r in res.trace])
pf = np.array([r.pf for r in res.trace])
s = res.summary
print(f"{res.spec.name}: {len(t) - 1} samples in {elapsed:.1f} s")
print(f"voltage range {V.min():.4f} .. {V.max():.4f} p.u., "
      f"after 60 s {V[t > 60].min():.4f} .. {V[t > 60].max():.4f}")
print(f"power factors {pf.min():.3f} .. {pf.max():.3f}; final {np.round(pf[-1], 3)}")
print(f"time outside [0.9, 1.1]: {s['total_violation_s']:.0f} s summed over nodes")
print(f"largest slacks: eps_lo {s['eps_lo_max']:.2e}, eps_hi {s['eps_hi_max']:.2e}")
for k in (0, 5, 30, len(t) - 1):
    print(f"  t={t[k]:5.0f} s  Vmax={V[k].max():.4f}  eps_hi={res.trace[k].eps_hi:.2e}")
