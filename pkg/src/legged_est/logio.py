"""JSON Lines sensor logs, ground-truth sidecars and estimate files.

Each file starts with a header object; every following line is one record.
Sensor record channel order: t, accel[3], gyro[3], q[12], dq[12], q_des[12],
grf[4] (optional), gt_R[9] / gt_v[3] / gt_p[3] (optional).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .metrics import Trajectory

SCHEMA_VERSION = 1
LOG_KIND = "sensor-log"
GT_KIND = "ground-truth"
EST_KIND = "estimate"
SENSOR_CHANNELS = {"accel": 3, "gyro": 3, "q": 12, "dq": 12, "q_des": 12}
OPTIONAL_CHANNELS = {"grf": 4, "gt_R": 9, "gt_v": 3, "gt_p": 3}


class SchemaError(ValueError):
    """A log file does not follow the expected layout."""


@dataclass
class SensorLog:
    header: dict
    t: np.ndarray
    channels: dict[str, np.ndarray] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.t)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.channels[name]

    def has(self, name: str) -> bool:
        return name in self.channels

    def nmn_inputs(self) -> np.ndarray:
        return np.concatenate([self.channels[k] for k in SENSOR_CHANNELS], axis=1)


@dataclass
class GroundTruth:
    header: dict
    t: np.ndarray
    R: np.ndarray
    v: np.ndarray
    p: np.ndarray
    contact: np.ndarray
    slip: np.ndarray

    def trajectory(self) -> Trajectory:
        return Trajectory(self.t, self.R, self.v, self.p)


def _header(kind: str, **extra) -> dict:
    return {"kind": kind, "schema_version": SCHEMA_VERSION, **extra}


def _write_lines(path: Path, header: dict, rows) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for row in rows:
            fh.write(json.dumps(row) + "\n")


def _read_lines(path: str | Path, kind: str) -> tuple[dict, list[dict]]:
    try:
        with open(path) as fh:
            lines = [json.loads(line) for line in fh if line.strip()]
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path}: malformed JSON line ({exc})") from exc
    if not lines:
        raise SchemaError(f"{path}: empty file")
    header = lines[0]
    if header.get("kind") != kind:
        raise SchemaError(f"{path}: expected a {kind} file, found {header.get('kind')!r}")
    if header.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"{path}: unsupported schema_version {header.get('schema_version')!r}")
    return header, lines[1:]


def _column(records: list[dict], name: str, width: int, path) -> np.ndarray:
    try:
        arr = np.array([r[name] for r in records], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: channel {name!r} missing or malformed") from exc
    if arr.shape != (len(records), width):
        raise SchemaError(f"{path}: channel {name!r} must have {width} values per record")
    return arr


def _times(records, path) -> np.ndarray:
    try:
        t = np.array([r["t"] for r in records], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"{path}: every record needs a numeric 't'") from exc
    if len(t) > 1 and not np.all(np.diff(t) > 0):
        raise SchemaError(f"{path}: timestamps must increase")
    return t


def write_sensor_log(path, header_extra: dict, t, channels: dict[str, np.ndarray]) -> None:
    names = [k for k in SENSOR_CHANNELS] + [k for k in OPTIONAL_CHANNELS if k in channels]
    header = _header(LOG_KIND, channels=names, **header_extra)
    rows = (
        {"t": float(t[k]), **{name: channels[name][k].ravel().tolist() for name in names}} for k in range(len(t))
    )
    _write_lines(Path(path), header, rows)


def read_sensor_log(path) -> SensorLog:
    header, records = _read_lines(path, LOG_KIND)
    if not records:
        raise SchemaError(f"{path}: no records")
    t = _times(records, path)
    channels = {name: _column(records, name, w, path) for name, w in SENSOR_CHANNELS.items()}
    for name, w in OPTIONAL_CHANNELS.items():
        if name in records[0]:
            channels[name] = _column(records, name, w, path)
    return SensorLog(header, t, channels)


def write_ground_truth(path, header_extra: dict, t, R, v, p, contact, slip) -> None:
    header = _header(GT_KIND, **header_extra)
    rows = (
        {
            "t": float(t[k]),
            "R": R[k].ravel().tolist(),
            "v": v[k].tolist(),
            "p": p[k].tolist(),
            "contact": [bool(c) for c in contact[k]],
            "slip": [bool(c) for c in slip[k]],
        }
        for k in range(len(t))
    )
    _write_lines(Path(path), header, rows)


def read_ground_truth(path) -> GroundTruth:
    header, records = _read_lines(path, GT_KIND)
    if not records:
        raise SchemaError(f"{path}: no records")
    t = _times(records, path)
    R = _column(records, "R", 9, path).reshape(-1, 3, 3)
    return GroundTruth(
        header,
        t,
        R,
        _column(records, "v", 3, path),
        _column(records, "p", 3, path),
        _column(records, "contact", 4, path).astype(bool),
        _column(records, "slip", 4, path).astype(bool),
    )


def write_estimate(path, header_extra: dict, traj: Trajectory, extra: dict[str, np.ndarray] | None = None) -> None:
    extra = extra or {}
    header = _header(EST_KIND, **header_extra)
    rows = (
        {
            "t": float(traj.t[k]),
            "R": traj.R[k].ravel().tolist(),
            "v": traj.v[k].tolist(),
            "p": traj.p[k].tolist(),
            **{name: np.asarray(arr[k]).tolist() for name, arr in extra.items()},
        }
        for k in range(len(traj))
    )
    _write_lines(Path(path), header, rows)


def read_estimate(path) -> Trajectory:
    _, records = _read_lines(path, EST_KIND)
    if not records:
        raise SchemaError(f"{path}: no records")
    t = _times(records, path)
    return Trajectory(t, _column(records, "R", 9, path).reshape(-1, 3, 3), _column(records, "v", 3, path), _column(records, "p", 3, path))


def save_sim(log, path, gt_path=None) -> None:
    """Write a simulated log and its ground-truth sidecar."""
    path = Path(path)
    gt_path = Path(gt_path) if gt_path else path.with_suffix(".gt.jsonl")
    extra = {k: v for k, v in log.header.items()}
    write_sensor_log(
        path,
        extra,
        log.t,
        {"accel": log.accel, "gyro": log.gyro, "q": log.q, "dq": log.dq, "q_des": log.q_des, "grf": log.grf},
    )
    write_ground_truth(gt_path, extra, log.t, log.gt_R, log.gt_v, log.gt_p, log.contact, log.slip)


def sensor_log_from_sim(log) -> SensorLog:
    """In-memory equivalent of writing and re-reading a simulated log."""
    return SensorLog(
        dict(log.header),
        log.t.copy(),
        {"accel": log.accel, "gyro": log.gyro, "q": log.q, "dq": log.dq, "q_des": log.q_des, "grf": log.grf},
    )


def ground_truth_from_sim(log) -> GroundTruth:
    return GroundTruth(dict(log.header), log.t.copy(), log.gt_R, log.gt_v, log.gt_p, log.contact, log.slip)
