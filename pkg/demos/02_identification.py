"""Identify the impulse-response model of the closed-loop plant and check it.

    python3 demos/02_identification.py [op_point]
"""

import sys

import numpy as np

from voltmpc import load_network
from voltmpc.sysid import benchmark_factory, identify_benchmark, validate_linearity

op = sys.argv[1] if len(sys.argv) > 1 else "7am"
network = load_network()
model = identify_benchmark(network, op, M=90)
ch = model.channels
print(f"model at {op}: M={model.M}, T={model.T:g} s, "
      f"{model.ny} outputs, {model.nu} inputs, {model.nd} measured disturbances")
print(f"exhaustion ratio |g_M| / max|g| = {model.exhaustion_ratio():.2e}")

# steady-state gain of each power factor on each controlled voltage
gain = model.g.sum(axis=0)
print("\nsteady-state dV/dpf [p.u. per unit pf]")
print("      " + " ".join(f"{u:>7s}" for u in ch.inputs))
for i, y in enumerate(ch.outputs):
    print(f"{y:5s} " + " ".join(f"{x:7.3f}" for x in gain[i]))

# feeders are decoupled behind the ideal substation busbar
y_feeder = np.array([network.buses[y[2:]].feeder for y in ch.outputs])
u_feeder = np.array([network.buses[network.generator(u[3:]).bus].feeder for u in ch.inputs])
cross = np.abs(gain[y_feeder[:, None] != u_feeder[None, :]]).max()
print(f"\nlargest cross-feeder gain: {cross:.1e}")

rep = validate_linearity(model, benchmark_factory(network, op), (-0.01, -0.02), (0.025, 0.05))
print(f"linearity: pf channels {rep.input_deviation.max():.3f}, "
      f"disturbance channels {rep.disturbance_deviation.max():.3f} (relative deviation)")
