"""Load disconnection with and without the tap supervisor (experiment 2).

    python3 demos/04_experiment2_oltc.py
"""

import numpy as np

from voltmpc import bundled_spec, load_network, run

network = load_network()
results = {name: run(bundled_spec(f"experiment2_oltc_{name}"), network=network)
           for name in ("off", "on")}

for name, res in results.items():
    s = res.summary
    worst = max(s["time_above_s"], key=s["time_above_s"].get)
    print(f"OLTC {name:3s}: worst node {worst} above 1.1 p.u. for {s['time_above_s'][worst]:.0f} s, "
          f"Vmax {s['v_max']:.4f}, tap commands {res.tap_commands}")

on = results["on"]
t = np.array([r.time for r in on.trace])
eps = np.array([r.eps_hi for r in on.trace])
tap = np.array([r.tap for r in on.trace])
Vmax = np.array([max(r.v) for r in on.trace])
print("\n time   Vmax    eps_hi  tap")
for k in np.flatnonzero((t >= 170) & (t <= 320) & (t % 10 == 0)):
    print(f"{t[k]:5.0f}  {Vmax[k]:.4f}  {eps[k]:.2e}  {tap[k]:+d}")
