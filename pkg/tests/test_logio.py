import json

import numpy as np
import pytest

from legged_est import logio, sim
from legged_est.metrics import Trajectory


@pytest.fixture(scope="module")
def simlog():
    return sim.generate(sim.TerrainConfig(duration=0.5, profile="slippery"), seed=4, noise=sim.SensorNoise())


def test_sensor_log_roundtrip_is_exact(tmp_path, simlog):
    path = tmp_path / "a.jsonl"
    logio.save_sim(simlog, path)
    log = logio.read_sensor_log(path)
    mem = logio.sensor_log_from_sim(simlog)
    assert np.array_equal(log.t, simlog.t)
    for name in ("accel", "gyro", "q", "dq", "q_des", "grf"):
        assert np.array_equal(log[name], mem[name]), name
    assert np.array_equal(log.nmn_inputs(), simlog.nmn_inputs())
    assert log.header["schema_version"] == logio.SCHEMA_VERSION
    assert log.header["seed"] == 4 and log.header["rate"] == sim.RATE


def test_ground_truth_sidecar(tmp_path, simlog):
    path = tmp_path / "a.jsonl"
    logio.save_sim(simlog, path)
    gt = logio.read_ground_truth(tmp_path / "a.gt.jsonl")
    assert np.array_equal(gt.t, simlog.t)
    assert np.array_equal(gt.R, simlog.gt_R)
    assert np.array_equal(gt.p, simlog.gt_p)
    assert np.array_equal(gt.contact, simlog.contact)
    assert gt.trajectory().p.shape == (len(simlog), 3)


def test_record_channel_order(tmp_path, simlog):
    path = tmp_path / "a.jsonl"
    logio.save_sim(simlog, path)
    with open(path) as fh:
        header = json.loads(fh.readline())
        record = json.loads(fh.readline())
    assert list(record) == ["t", "accel", "gyro", "q", "dq", "q_des", "grf"]
    assert header["channels"] == list(record)[1:]


def test_optional_channels_absent(tmp_path, simlog):
    path = tmp_path / "b.jsonl"
    chans = {k: getattr(simlog, k) for k in logio.SENSOR_CHANNELS}
    logio.write_sensor_log(path, {}, simlog.t, chans)
    log = logio.read_sensor_log(path)
    assert not log.has("grf") and log.has("q")


def test_embedded_ground_truth_channels(tmp_path, simlog):
    path = tmp_path / "c.jsonl"
    chans = {k: getattr(simlog, k) for k in logio.SENSOR_CHANNELS}
    chans.update(gt_R=simlog.gt_R.reshape(-1, 9), gt_v=simlog.gt_v, gt_p=simlog.gt_p)
    logio.write_sensor_log(path, {}, simlog.t, chans)
    log = logio.read_sensor_log(path)
    assert np.array_equal(log["gt_R"].reshape(-1, 3, 3), simlog.gt_R)


def test_estimate_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    R = np.stack([np.linalg.qr(rng.normal(size=(3, 3)))[0] for _ in range(5)])
    R *= np.sign(np.linalg.det(R))[:, None, None]
    traj = Trajectory(np.arange(5) * 0.002, R, rng.normal(size=(5, 3)), rng.normal(size=(5, 3)))
    logio.write_estimate(tmp_path / "e.jsonl", {"variant": "x"}, traj, {"bias_gyro": np.zeros((5, 3))})
    back = logio.read_estimate(tmp_path / "e.jsonl")
    for name in ("t", "R", "v", "p"):
        assert np.array_equal(getattr(back, name), getattr(traj, name))


def _write(path, lines):
    path.write_text("".join(json.dumps(x) + "\n" for x in lines))


GOOD_RECORD = {"t": 0.0, "accel": [0] * 3, "gyro": [0] * 3, "q": [0] * 12, "dq": [0] * 12, "q_des": [0] * 12}


@pytest.mark.parametrize(
    "lines, match",
    [
        ([{"kind": "ground-truth", "schema_version": 1}, GOOD_RECORD], "expected a sensor-log"),
        ([{"kind": "sensor-log", "schema_version": 99}, GOOD_RECORD], "schema_version"),
        ([{"kind": "sensor-log", "schema_version": 1}], "no records"),
        ([{"kind": "sensor-log", "schema_version": 1}, {**GOOD_RECORD, "q": [0] * 11}], "'q'"),
        ([{"kind": "sensor-log", "schema_version": 1}, {k: v for k, v in GOOD_RECORD.items() if k != "dq"}], "'dq'"),
        ([{"kind": "sensor-log", "schema_version": 1}, GOOD_RECORD, GOOD_RECORD], "increase"),
    ],
)
def test_schema_errors(tmp_path, lines, match):
    path = tmp_path / "bad.jsonl"
    _write(path, lines)
    with pytest.raises(logio.SchemaError, match=match):
        logio.read_sensor_log(path)


def test_malformed_and_empty_files(tmp_path):
    bad = tmp_path / "x.jsonl"
    bad.write_text('{"kind": "sensor-log"\n')
    with pytest.raises(logio.SchemaError, match="malformed"):
        logio.read_sensor_log(bad)
    empty = tmp_path / "y.jsonl"
    empty.write_text("")
    with pytest.raises(logio.SchemaError, match="empty"):
        logio.read_sensor_log(empty)
