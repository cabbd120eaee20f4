import numpy as np
import pytest

from legged_est import logio, metrics, nmn, pipeline, sim
from legged_est.pipeline import ConfigError, RunConfig

from conftest import constant_model


@pytest.fixture(scope="module")
def trot():
    log = sim.generate(sim.TerrainConfig(duration=3.0, profile="slippery", slip_probability=0.3), seed=5, noise=sim.SensorNoise())
    return logio.sensor_log_from_sim(log), logio.ground_truth_from_sim(log)


@pytest.fixture(scope="module")
def clean():
    log = sim.generate(sim.TerrainConfig(duration=4.0), seed=2)
    return logio.sensor_log_from_sim(log), logio.ground_truth_from_sim(log)


def kinds(result):
    return {kind for _, kind, _ in result.events}


def test_truth_contact_closure(clean):
    log, gt = clean
    res = pipeline.run(log, RunConfig("truth-contact"), gt=gt)
    a = metrics.ate(res.trajectory, gt.trajectory())
    assert a[0] < 1e-6 and a[2] < 1e-6


def test_v_only_never_uses_kinematics(trot):
    log, gt = trot
    res = pipeline.run(log, RunConfig("v-only"), model=constant_model(), gt=gt)
    assert "velocity" in kinds(res)
    assert kinds(res).isdisjoint({"kinematics", "add", "remove", "slip"})


def test_c_only_never_uses_velocity(trot):
    log, gt = trot
    res = pipeline.run(log, RunConfig("c-only"), model=constant_model(), gt=gt)
    assert "kinematics" in kinds(res) and "velocity" not in kinds(res)


@pytest.mark.parametrize("variant", ["grf", "truth-contact"])
def test_baselines_never_use_velocity(trot, variant):
    log, gt = trot
    res = pipeline.run(log, RunConfig(variant), gt=gt)
    assert "kinematics" in kinds(res) and "velocity" not in kinds(res)


def test_proposed_stacks_both_measurements(trot):
    log, gt = trot
    res = pipeline.run(log, RunConfig("proposed"), model=constant_model(), gt=gt)
    per_tick = {}
    for t, kind, _ in res.events:
        per_tick.setdefault(t, set()).add(kind)
    assert any({"kinematics", "velocity"} <= k for k in per_tick.values())


def test_velocity_gate_blocks_slow_outputs(trot):
    log, gt = trot
    res = pipeline.run(log, RunConfig("v-only"), model=constant_model(velocity=(0.05, 0.05, 0.0)), gt=gt)
    assert "velocity" not in kinds(res)


def test_contact_threshold_on_network_output(trot):
    log, gt = trot
    res = pipeline.run(log, RunConfig("c-only"), model=constant_model(logits=(5, -5, 5, -5)), gt=gt)
    assert {f for _, kind, f in res.events if kind == "kinematics"} == {0, 2}
    assert res.contacts[:, [0, 2]].all() and not res.contacts[:, [1, 3]].any()


def test_kinematics_events_match_tracked_contacts(trot):
    log, gt = trot
    res = pipeline.run(log, RunConfig("grf"), gt=gt)
    tracked = set()
    for _, kind, foot in res.events:
        if kind == "add":
            assert foot not in tracked
            tracked.add(foot)
        elif kind == "remove":
            tracked.remove(foot)
        elif kind == "kinematics":
            assert foot in tracked
    times = [t for t, _, _ in res.events]
    assert times == sorted(times)


def test_slip_rejection_flag(trot):
    log, gt = trot
    on = pipeline.run(log, RunConfig("truth-contact", slip_rejection=True), gt=gt)
    off = pipeline.run(log, RunConfig("truth-contact", slip_rejection=False), gt=gt)
    assert on.event_counts().get("slip", 0) > 0
    assert "slip" not in kinds(off)
    slip_feet = {f for _, kind, f in on.events if kind == "slip"}
    assert slip_feet <= set(np.flatnonzero(gt.slip.any(axis=0)))


def test_run_is_deterministic(trot):
    log, gt = trot
    a = pipeline.run(log, RunConfig("proposed"), model=constant_model(), gt=gt)
    b = pipeline.run(log, RunConfig("proposed"), model=constant_model(), gt=gt)
    assert np.array_equal(a.trajectory.p, b.trajectory.p)
    assert np.array_equal(a.trajectory.R, b.trajectory.R)
    assert a.events == b.events


def test_initialization_sources(clean):
    log, gt = clean
    short = logio.SensorLog(log.header, log.t[:5], {k: v[:5] for k, v in log.channels.items()})
    res = pipeline.run(short, RunConfig("grf"))
    assert np.allclose(res.trajectory.p[0], 0.0) and np.allclose(res.trajectory.R[0], np.eye(3))
    R0 = np.diag([1.0, -1.0, -1.0])
    res = pipeline.run(short, RunConfig("grf"), init=(R0, np.zeros(3), np.ones(3)))
    assert np.allclose(res.trajectory.R[0], R0)


def test_grf_variant_requires_grf_channel(clean):
    log, _ = clean
    stripped = logio.SensorLog(log.header, log.t, {k: v for k, v in log.channels.items() if k != "grf"})
    with pytest.raises(ConfigError, match="grf"):
        pipeline.run(stripped, RunConfig("grf"))


def test_incompatible_configurations(clean, tmp_path):
    log, _ = clean
    with pytest.raises(ConfigError, match="ground truth"):
        pipeline.run(log, RunConfig("truth-contact"))
    with pytest.raises(ConfigError, match="network model"):
        pipeline.run(log, RunConfig("proposed"))
    with pytest.raises(ConfigError, match="unknown variant"):
        RunConfig("dead-reckoning")
    with pytest.raises(ConfigError, match="does not exist"):
        RunConfig("proposed", model_path=str(tmp_path / "missing.json"))
    one = logio.SensorLog(log.header, log.t[:1], {k: v[:1] for k, v in log.channels.items()})
    with pytest.raises(ConfigError, match="two records"):
        pipeline.run(one, RunConfig("grf"))


def test_model_loaded_from_path(trot, tmp_path):
    log, gt = trot
    path = tmp_path / "m.json"
    nmn.save_model(constant_model(), path)
    a = pipeline.run(log, RunConfig("v-only", model_path=str(path)), gt=gt)
    b = pipeline.run(log, RunConfig("v-only"), model=constant_model(), gt=gt)
    assert np.array_equal(a.trajectory.v, b.trajectory.v)


def test_events_json_lines():
    text = pipeline.events_to_json([(0.0, "add", 1), (0.002, "velocity", None)])
    assert text.splitlines() == ['{"t": 0.0, "type": "add", "foot": 1}', '{"t": 0.002, "type": "velocity", "foot": null}']
