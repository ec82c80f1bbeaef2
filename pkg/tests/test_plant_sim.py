import math

import numpy as np
import pytest

from voltmpc.plant_sim import (CONTROLLED_NODES, Event, EventSchedule, PlantConfig,
                               PlantDivergence, PlantSimulator, SettlingError, q_reference)
from voltmpc.power_flow import solve

from oracles import gauss_seidel

ONES = np.ones(8)


def settled(network, op="7am", pf=ONES, **cfg):
    sim = PlantSimulator(network, op, PlantConfig(**cfg))
    sim.run_to_steady_state(pf)
    return sim


def test_q_reference():
    assert q_reference(np.array([1.0]), np.array([1.0]))[0] == 0.0
    assert abs(q_reference(np.array([1.0]), np.array([0.6]))[0]) == pytest.approx(4 / 3, rel=1e-14)
    # absorption by default, injection with sign -1
    assert q_reference(np.array([1.0]), np.array([0.6]), 1)[0] < 0
    assert q_reference(np.array([1.0]), np.array([0.6]), -1)[0] > 0


def test_unity_pf_equals_load_flow(network):
    sim = settled(network)
    m = sim.step(ONES)
    assert np.all(m.dg_q == 0)
    ref = solve(sim.net, sim.injections(sim.state), sim.v_slack(0), tol=1e-12)
    ctrl = [sim.net.index[b] for b in CONTROLLED_NODES]
    assert np.max(np.abs(m.v - ref.vm[ctrl])) < 1e-7


def test_load_step_lowers_local_voltage(network):
    sim = settled(network)
    sim.set_schedule([Event(20.0, "N32.2", "scale", 0.5)])
    before = sim.measure().v
    trace = [sim.step(ONES) for _ in range(11)]
    assert trace[9].events == (Event(20.0, "N32.2", "scale", 0.5),)
    j = CONTROLLED_NODES.index("N32")
    assert trace[8].v[j] == before[j]
    assert trace[9].v[j] < before[j]
    # magnitude from the independent oracle
    ref = gauss_seidel(sim.net.admittance_matrix(), sim.injections(sim.state).s, sim.v_slack())
    assert abs(trace[9].v[j] - abs(ref[sim.net.index["N32"]])) < 1e-7


def test_idempotent_after_convergence(network):
    sim = settled(network)
    a, b = sim.step(ONES), sim.step(ONES)
    assert np.max(np.abs(a.v - b.v)) < 1e-12


@pytest.mark.parametrize("op", ["1am", "7am", "1pm", "7pm"])
def test_tap_reduce_lowers_every_feeder_voltage(network, op):
    sim = settled(network, op)
    before = sim.state.solution.vm.copy()
    sim.step(ONES, tap_cmd=+1)
    after = sim.state.solution.vm
    assert sim.state.tap == 1
    assert np.all(after[1:] < before[1:])


def test_tap_saturation(network):
    sim = settled(network)
    for _ in range(8):
        sim.step(ONES, tap_cmd=-1)
    assert sim.state.tap == -6
    assert sim.v_slack() == pytest.approx(1.02 / (1 - 0.09))
    with pytest.raises(ValueError):
        sim.step(ONES, tap_cmd=2)


def test_avr_lag_geometric(network):
    sim = settled(network, capability_limit=False)
    pf = np.full(8, 0.8)
    a = math.exp(-2.0 / 6.0)
    q_ref = q_reference(sim.state.dg_p / sim.s_base, pf)
    e0 = np.abs(sim.state.q - q_ref)
    for k in range(1, 15):
        sim.step(pf)
        assert np.all(np.abs(sim.state.q - q_ref) <= a ** k * e0 * (1 + 1e-12) + 1e-15)


@pytest.mark.parametrize("sign", [1, -1])
def test_reactive_sign_setting(network, sign):
    # absorption (+1) lowers and injection (-1) raises every controlled voltage
    base = settled(network, reactive_sign=sign)
    v0 = base.step(ONES).v
    base.run_to_steady_state(np.full(8, 0.9))
    v1 = base.step(np.full(8, 0.9)).v
    assert np.all(np.sign(v1 - v0) == -sign)
    assert np.all(np.sign(base.state.q) == -sign)


def test_capability_limit(network):
    sim = settled(network, "1pm")
    sim.step(np.full(8, 0.6))
    assert np.all(np.abs(sim.state.q) <= sim.q_capability() + 1e-15)
    free = settled(network, "1pm", capability_limit=False)
    free.step(np.full(8, 0.6))
    assert np.abs(free.state.q).sum() > np.abs(sim.state.q).sum()


def test_instant_avr_settles_in_one_step(network):
    sim = PlantSimulator(network, "7am", PlantConfig(tau_avr=0.0))
    assert sim.run_to_steady_state(np.full(8, 0.9)) == 1


def test_lag_settling_within_scalar_bound(network):
    sim = settled(network)
    pf = np.full(8, 0.95)
    q_ref = q_reference(sim.state.dg_p / sim.s_base, pf)
    q_ref = np.clip(q_ref, -sim.q_capability(), sim.q_capability())
    e0 = np.abs(sim.state.q - q_ref).max()
    a = math.exp(-2.0 / 6.0)
    n = sim.run_to_steady_state(pf)
    # voltages move at most ~|dV/dq| * a^k * e0; sensitivity below 1 p.u./p.u.
    bound = math.ceil(math.log(1e-9 / e0) / math.log(a)) + 1
    assert 1 < n <= bound


def test_settle_errors(network):
    sim = PlantSimulator(network, "7am")
    sim.set_schedule([Event(10.0, "N08", "scale", 1.0)])
    with pytest.raises(SettlingError):
        sim.run_to_steady_state(ONES)
    sim2 = PlantSimulator(network, "7am")
    with pytest.raises(SettlingError):
        sim2.run_to_steady_state(np.full(8, 0.7), max_steps=3)


def test_events_exactly_once_and_replay(network):
    events = [Event(4.0, "DG2", "set", 1.75), Event(4.0, "N08", "disconnect"),
              Event(10.0, "DG8", "scale", -0.5)]

    def replay():
        sim = settled(network)
        sim.set_schedule(events)
        return [sim.step(np.full(8, 0.9)) for _ in range(8)]

    a, b = replay(), replay()
    fired = [e for m in a for e in m.events]
    assert fired == events
    assert all(np.array_equal(x.v, y.v) for x, y in zip(a, b))


def test_event_application(network):
    sim = settled(network)
    k = network.op_index("7am")
    sim.set_schedule([Event(2.0, "N08", "disconnect"), Event(2.0, "DG2", "set", 1.75),
                      Event(2.0, "N16", "scale", -0.5)])
    sim.step(ONES)
    i8 = sim.load_ids.index("N08")
    i16 = sim.load_ids.index("N16")
    assert sim.state.load_p[i8] == 0 and sim.state.load_q[i8] == 0
    assert sim.state.dg_p[sim.dg_ids.index("DG2")] == 1.75
    assert sim.state.load_p[i16] == pytest.approx(0.5 * network.load("N16").p_mw[k])


def test_event_validation():
    with pytest.raises(ValueError):
        Event(-1.0, "N08", "scale", 0.1)
    with pytest.raises(ValueError):
        Event(1.0, "N08", "scale", -1.0)
    with pytest.raises(ValueError):
        Event(1.0, "N08", "explode")
    with pytest.raises(ValueError):
        EventSchedule([Event(5.0, "N08", "disconnect"), Event(1.0, "N08", "disconnect")])


def test_pf_bounds_enforced(network):
    sim = PlantSimulator(network, "7am")
    with pytest.raises(ValueError):
        sim.step(np.full(8, 0.5))
    with pytest.raises(KeyError):
        sim.set_schedule([Event(1.0, "N99", "disconnect")])


def test_divergence_carries_state_dump(network):
    sim = settled(network)
    sim.set_schedule([Event(2.0, "N08", "set", 400.0)])
    with pytest.raises(PlantDivergence) as info:
        sim.step(ONES)
    assert info.value.state["load_p_mw"]["N08"] == 400.0
    assert info.value.state["time"] == 2.0


def test_measured_disturbances(network):
    sim = settled(network)
    m = sim.measure()
    p = np.array([network.generator(g).p_mw[1] for g in ("DG1", "DG2", "DG3")]) / 50
    assert np.array_equal(m.d[:3], p)
    assert np.all(m.d[3:] == 0)
