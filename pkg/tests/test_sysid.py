import numpy as np
import pytest

from voltmpc.plant_sim import PlantConfig
from voltmpc.sysid import (ChannelRegistry, IdentificationError, ImpulseResponseModel, LtiPlant,
                           benchmark_factory, identify, identify_benchmark, validate_linearity)

M = 40


def first_order():
    return LtiPlant([[0.5]], [[1.0]], [[1.0]])


def underdamped():
    r, th = 0.85, 0.6
    A = r * np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    return LtiPlant(A, [[1.0], [0.0]], [[1.0, 0.3]])


def pure_delay():
    # y(k) = u(k-3): three-stage shift register
    A = np.diag([1.0, 1.0], -1)
    return LtiPlant(A, [[1.0], [0.0], [0.0]], [[0.0, 0.0, 1.0]])


def closed_form_first_order(M):
    return 0.5 ** np.arange(M)


def closed_form_underdamped(M):
    # g_i = C A^(i-1) B with A = r R(th): A^(i-1) B = r^(i-1) [cos, sin] of (i-1) th
    i = np.arange(M)
    return 0.85 ** i * (np.cos(0.6 * i) + 0.3 * np.sin(0.6 * i))


def closed_form_delay(M):
    g = np.zeros(M)
    g[2] = 1.0
    return g


@pytest.mark.parametrize("make,oracle", [(first_order, closed_form_first_order),
                                         (underdamped, closed_form_underdamped),
                                         (pure_delay, closed_form_delay)])
@pytest.mark.parametrize("amp", [1.0, 0.37])
def test_lti_identification_exact(make, oracle, amp):
    model = identify(make, M, [amp])
    ref = oracle(M)
    got = model.g[:, 0, 0]
    assert np.max(np.abs(got - ref)) <= 1e-10 * np.abs(ref).max()


def test_disturbance_channels_on_lti():
    make = lambda: LtiPlant([[0.5]], [[1.0]], [[1.0]], Bd=[[2.0, -1.0]])
    model = identify(make, 10, [1.0], [0.5, 3.0])
    i = np.arange(10)
    assert np.allclose(model.gamma[:, 0, 0], 2 * 0.5 ** i, rtol=0, atol=1e-14)
    assert np.allclose(model.gamma[:, 0, 1], -0.5 ** i, rtol=0, atol=1e-14)


def test_superposition_on_lti(rng):

    model = identify(underdamped, 200, [1.0])
    u1, u2 = rng.normal(size=(60, 1)), rng.normal(size=(60, 1))

    def run(u):
        plant = underdamped()
        return np.array([plant.advance(x) for x in u])

    assert np.max(np.abs(run(u1 + u2) - run(u1) - run(u2))) < 1e-10
    assert np.max(np.abs(model.simulate(u1) - run(u1))) < 1e-10


def test_identification_round_trip_reproduces_pulse():
    model = identify(underdamped, M, [0.2])
    u = np.zeros((M, 1))
    u[0] = 0.2
    plant = underdamped()
    recorded = np.array([plant.advance(x) for x in u])
    assert np.max(np.abs(model.simulate(u) - recorded)) < 1e-15


def test_argument_errors():
    with pytest.raises(ValueError):
        identify(first_order, 5, [0.0])
    with pytest.raises(ValueError):
        identify(first_order, 5, [1.0, 1.0])


def test_divergence_names_channel(network):
    cfg = PlantConfig(pf_tol=1e-30)  # cannot be met: every pulse step fails
    with pytest.raises(IdentificationError, match="pf_DG1"):
        identify_benchmark(network, "7am", 3, cfg=cfg)


def test_linearity_report_lti():
    model = identify(first_order, M, [1.0])
    assert validate_linearity(model, first_order, (1.0, 2.0)).max_deviation < 1e-15
    assert validate_linearity(model, first_order, (0.3, 0.3)).max_deviation == 0.0


def test_benchmark_dimensions_and_exhaustion(model_7am):
    assert model_7am.g.shape == (90, 11, 8)
    assert model_7am.gamma.shape == (90, 11, 6)
    assert model_7am.T == 2.0
    assert model_7am.exhaustion_ratio() < 0.01
    assert model_7am.channels.outputs[4] == "V_N18"
    assert model_7am.channels.disturbances == ("P_DG1", "P_DG2", "P_DG3",
                                               "Q_DG1", "Q_DG2", "Q_DG3")


def test_power_factor_sign(model_7am):
    # absorbing more reactive power (lower pf) lowers voltage: dV/dpf > 0 in steady state
    dc = model_7am.g.sum(axis=0)
    assert dc[4, 0] > 0
    assert np.all(dc >= -1e-12)


def test_split_feeders_do_not_couple(network):
    # behind an ideal slack the feeders are galvanically independent
    model = identify_benchmark(network, "7am", 20, cfg=PlantConfig(pf_tol=1e-14))
    f1_out, f2_out = slice(0, 5), slice(5, 11)
    f1_dg, f2_dg = [0, 1, 2, 6, 7], [3, 4, 5]
    assert np.all(model.g[:, f1_out][:, :, f2_dg] == 0)
    assert np.all(model.g[:, f2_out][:, :, f1_dg] == 0)
    assert np.all(model.gamma[:, f2_out] == 0)


def test_benchmark_linearity_baseline(network, model_7am):
    factory = benchmark_factory(network, "7am")
    small = model_7am.__class__(model_7am.g[:30], model_7am.gamma[:30], 2.0, model_7am.channels,
                                "7am", model_7am.y_op, model_7am.u_op, model_7am.d_op)
    rep = validate_linearity(small, factory, (-0.01, -0.02), (0.025, 0.05))
    # pf pulses start at pf = 1 where tan(acos(pf)) is strongly curved
    assert 0.2 < rep.input_deviation.max() < 0.35
    assert rep.disturbance_deviation.max() < 0.05


def test_serialization_round_trip(model_7am, tmp_path):
    path = model_7am.save(tmp_path / "m.json")
    back = ImpulseResponseModel.load(path)
    assert np.array_equal(back.g, model_7am.g)
    assert np.array_equal(back.gamma, model_7am.gamma)
    assert np.array_equal(back.y_op, model_7am.y_op)
    assert back.channels == model_7am.channels and back.T == model_7am.T
    with pytest.raises(ValueError):
        ImpulseResponseModel.from_dict({"format": "other"})


def test_registry_rejects_duplicates():
    with pytest.raises(ValueError):
        ChannelRegistry(("a", "a"), ("u",), ())
