"""Load the benchmark feeder and solve the load flow at each operating point.

    python3 demos/01_network_and_power_flow.py
"""

import numpy as np

from voltmpc import load_network, operating_point, solve, to_per_unit
from voltmpc.plant_sim import CONTROLLED_NODES
from voltmpc.power_flow import losses

network = load_network()
net = to_per_unit(network)
print(f"{len(network.buses)} buses, {len(network.loads)} loads, {len(network.generators)} DGs, "
      f"base {network.s_base_mva:g} MVA / {network.v_base_kv:g} kV (Zbase {net.z_base_ohm:g} ohm)")
for feeder in (1, 2):
    print(f"feeder {feeder}: {network.feeder_length_km(feeder):.2f} km of line")

idx = [net.index[b] for b in CONTROLLED_NODES]
print("\nunity power factor, nominal tap")
print("op     " + " ".join(f"{b:>6s}" for b in CONTROLLED_NODES) + "   loss[MW]  iters")
for op in network.operating_points:
    sol = solve(net, operating_point(network, op, net))
    print(f"{op:6s} " + " ".join(f"{v:6.4f}" for v in sol.vm[idx])
          + f"   {losses(sol, net) * network.s_base_mva:8.4f}  {sol.iterations:5d}")

# voltage rise at the feeder ends when the PV plants are at full output
sol = solve(net, operating_point(network, "1pm", net))
worst = int(np.argmax(sol.vm))
print(f"\nhighest voltage at 1pm: {sol.vm[worst]:.4f} p.u. at {net.bus_ids[worst]}")
