"""Trajectory error metrics: ATE and windowed relative error."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import lie

PAIR_TOLERANCE = 2e-3  # s


@dataclass
class Trajectory:
    t: np.ndarray
    R: np.ndarray
    v: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.R = np.asarray(self.R, dtype=float).reshape(-1, 3, 3)
        self.v = np.asarray(self.v, dtype=float).reshape(-1, 3)
        self.p = np.asarray(self.p, dtype=float).reshape(-1, 3)
        n = len(self.t)
        if not (len(self.R) == len(self.v) == len(self.p) == n):
            raise ValueError("trajectory arrays differ in length")
        if n > 1 and not np.all(np.diff(self.t) > 0):
            raise ValueError("timestamps must be strictly increasing")
        resid = np.abs(np.einsum("kji,kjl->kil", self.R, self.R) - np.eye(3)).max(initial=0.0)
        if resid > 1e-6:
            raise ValueError(f"invalid rotation in trajectory (residual {resid:.1e})")

    def __len__(self) -> int:
        return len(self.t)

    def subset(self, idx) -> "Trajectory":
        return Trajectory(self.t[idx], self.R[idx], self.v[idx], self.p[idx])

    def transformed(self, Ra: np.ndarray, ta: np.ndarray) -> "Trajectory":
        """Apply the world transform x -> Ra x + ta."""
        return Trajectory(self.t, Ra @ self.R, self.v @ Ra.T, self.p @ Ra.T + ta)


@dataclass
class ErrorReport:
    ate_pos: float
    ate_vel: float
    ate_ori: float
    re_pos: float
    re_vel: float
    re_ori: float

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @staticmethod
    def csv_header() -> list[str]:
        return [f.name for f in fields(ErrorReport)]

    def csv_row(self) -> list[float]:
        return [getattr(self, name) for name in self.csv_header()]


def pair(est: Trajectory, gt: Trajectory, tol: float = PAIR_TOLERANCE):
    """Indices (i_est, i_gt) of nearest-neighbour pairs closer than ``tol``."""
    if len(est) == 0 or len(gt) == 0:
        raise ValueError("no paired samples")
    if len(gt) == 1:
        j = np.zeros(len(est), int)
    else:
        j = np.clip(np.searchsorted(gt.t, est.t), 1, len(gt) - 1)
        left = gt.t[j - 1]
        j = np.where(np.abs(est.t - left) <= np.abs(gt.t[j] - est.t), j - 1, j)
    ok = np.abs(gt.t[j] - est.t) <= tol + 1e-12
    if not ok.any():
        raise ValueError("no paired samples")
    return np.flatnonzero(ok), j[ok]


def _alignment(R_est, p_est, R_gt, p_gt):
    Ra = R_gt @ R_est.T
    return Ra, p_gt - Ra @ p_est


def align_initial(est: Trajectory, gt: Trajectory) -> Trajectory:
    """Rigidly move ``est`` so its first paired pose coincides with ground truth."""
    ie, ig = pair(est, gt)
    Ra, ta = _alignment(est.R[ie[0]], est.p[ie[0]], gt.R[ig[0]], gt.p[ig[0]])
    return est.transformed(Ra, ta)


def _errors(est: Trajectory, gt: Trajectory, ie, ig):
    dp = np.linalg.norm(est.p[ie] - gt.p[ig], axis=1)
    dv = np.linalg.norm(est.v[ie] - gt.v[ig], axis=1)
    dR = np.einsum("kji,kjl->kil", gt.R[ig], est.R[ie])
    try:
        do = np.linalg.norm(lie.so3_log_batch(dR), axis=1)
    except lie.LieError:
        do = np.array([np.linalg.norm(lie.so3_log(r, check=False)) for r in dR])
    return dp, dv, do


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def ate(est: Trajectory, gt: Trajectory) -> tuple[float, float, float]:
    """RMSE of position, velocity and orientation errors over paired samples.

    No alignment is applied here; call ``align_initial`` first if needed.
    """
    ie, ig = pair(est, gt)
    return tuple(_rms(e) for e in _errors(est, gt, ie, ig))


def error_series(est: Trajectory, gt: Trajectory):
    """Per-sample (t, pos, vel, ori) errors for plotting."""
    ie, ig = pair(est, gt)
    return (est.t[ie], *_errors(est, gt, ie, ig))


def relative_error(
    est: Trajectory,
    gt: Trajectory,
    window: float = 10.0,
    stride: float = 1.0,
    aggregate: str = "rmse",
) -> tuple[float, float, float]:
    """End-of-window errors after re-aligning at each window start."""
    if aggregate not in ("rmse", "mean"):
        raise ValueError("aggregate must be 'rmse' or 'mean'")
    ie, ig = pair(est, gt)
    t = gt.t[ig]
    if t[-1] - t[0] < window - 1e-9:
        raise ValueError(f"trajectory shorter than the {window} s window")
    errs = []
    start = t[0]
    while start + window <= t[-1] + 1e-9:
        a = int(np.argmin(np.abs(t - start)))
        b = int(np.argmin(np.abs(t - (start + window))))
        Ra, ta = _alignment(est.R[ie[a]], est.p[ie[a]], gt.R[ig[a]], gt.p[ig[a]])
        Re = Ra @ est.R[ie[b]]
        errs.append(
            (
                np.linalg.norm(Ra @ est.p[ie[b]] + ta - gt.p[ig[b]]),
                np.linalg.norm(Ra @ est.v[ie[b]] - gt.v[ig[b]]),
                np.linalg.norm(lie.so3_log(gt.R[ig[b]].T @ Re, check=False)),
            )
        )
        start += stride
    errs = np.array(errs)
    if aggregate == "mean":
        return tuple(float(x) for x in errs.mean(axis=0))
    return tuple(_rms(errs[:, i]) for i in range(3))


def evaluate(est: Trajectory, gt: Trajectory, window: float = 10.0, stride: float = 1.0, aggregate: str = "rmse"):
    """Full report: initial alignment, ATE, and windowed RE (NaN if too short)."""
    aligned = align_initial(est, gt)
    a = ate(aligned, gt)
    try:
        r = relative_error(aligned, gt, window, stride, aggregate)
    except ValueError:
        r = (float("nan"),) * 3
    return ErrorReport(*a, *r)


def reports_to_csv(rows: list[tuple[str, ErrorReport]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", *ErrorReport.csv_header()])
    for name, rep in rows:
        w.writerow([name, *(repr(float(x)) for x in rep.csv_row())])
    return buf.getvalue()


def csv_to_reports(text: str) -> list[tuple[str, ErrorReport]]:
    reader = csv.DictReader(io.StringIO(text))
    return [(r["name"], ErrorReport(*(float(r[k]) for k in ErrorReport.csv_header()))) for r in reader]
