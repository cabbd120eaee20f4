"""Offline estimator: sensor log in, estimated trajectory out.

Per tick ``k`` the loop:

1. propagates the filter from ``t[k-1]`` with the IMU sample held from
   ``k-1`` (contact noise inflated for feet whose estimated velocity exceeds
   the slip threshold, if slip rejection is on),
2. adds or removes contact points on contact-decision edges,
3. runs one stacked update: leg kinematics for every tracked foot and, when
   the low-passed network velocity passes the gate, a body-velocity update.

Network outputs for the whole log are computed up front; the GRU is causal,
so this equals per-tick streaming.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import contact as cm
from . import ekf, nmn
from .kinematics import LegChain, default_chain, fk_batch
from .lie import skew
from .logio import GroundTruth, SensorLog
from .metrics import Trajectory

VARIANTS = ("proposed", "c-only", "v-only", "grf", "truth-contact")
NEEDS_MODEL = ("proposed", "c-only", "v-only")
USES_KINEMATICS = ("proposed", "c-only", "grf", "truth-contact")
USES_VELOCITY = ("proposed", "v-only")


class ConfigError(ValueError):
    """Run configuration does not fit the log or is inconsistent."""


@dataclass
class RunConfig:
    variant: str = "proposed"
    slip_rejection: bool = True
    noise: ekf.NoiseConfig = field(default_factory=ekf.NoiseConfig)
    model_path: str | None = None
    contact_threshold: float = cm.CONTACT_THRESHOLD
    velocity_gate: float = cm.VELOCITY_GATE
    slip_threshold: float = cm.SLIP_THRESHOLD
    slip_factor: float = cm.SLIP_FACTOR
    grf_threshold: float = cm.GRF_THRESHOLD
    contact_cutoff: float = cm.CONTACT_CUTOFF
    velocity_cutoff: float = cm.VELOCITY_CUTOFF
    grf_cutoff: float = cm.GRF_CUTOFF

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; choose from {', '.join(VARIANTS)}")
        if self.model_path is not None and not Path(self.model_path).exists():
            raise ConfigError(f"model file {self.model_path} does not exist")
        if isinstance(self.noise, dict):
            self.noise = ekf.NoiseConfig(**self.noise)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RunResult:
    trajectory: Trajectory
    events: list[tuple[float, str, int | None]]
    contacts: np.ndarray  # (T, 4) decisions used by the filter
    bias_gyro: np.ndarray
    bias_accel: np.ndarray

    def event_counts(self) -> dict[str, int]:
        out: dict[str, int] = {}
        for _, kind, _ in self.events:
            out[kind] = out.get(kind, 0) + 1
        return out


def contact_decisions(
    cfg: RunConfig, log: SensorLog, dt: float, model: nmn.NmnModel | None, gt: GroundTruth | None
):
    """(T, 4) contact flags and the low-passed network velocity (or None)."""
    v_filt = None
    c_filt = None
    if cfg.variant in NEEDS_MODEL:
        if model is None:
            raise ConfigError(f"variant {cfg.variant!r} needs a network model")
        c_hat, v_hat = nmn.run_sequence(model, log.nmn_inputs())
        c_filt = cm.lpf_filter(c_hat, dt, cfg.contact_cutoff)
        v_filt = cm.lpf_filter(v_hat, dt, cfg.velocity_cutoff)
    if cfg.variant in ("proposed", "c-only"):
        flags = cm.nmn_contact(c_filt, cfg.contact_threshold)
    elif cfg.variant == "grf":
        if not log.has("grf"):
            raise ConfigError("variant 'grf' needs a log with a grf channel")
        flags = cm.lpf_filter(log["grf"], dt, cfg.grf_cutoff) >= cfg.grf_threshold
    elif cfg.variant == "truth-contact":
        if gt is None:
            raise ConfigError("variant 'truth-contact' needs ground truth")
        flags = np.asarray(gt.contact, bool)
    else:
        flags = np.zeros((len(log), 4), bool)
    return flags, v_filt


def foot_speeds(s: ekf.FilterState, hp: np.ndarray, J: np.ndarray, dq_legs: np.ndarray, gyro) -> np.ndarray:
    """World-frame speeds of the feet given (legs, 3) positions and joint rates."""
    w = gyro - s.bias_gyro
    body = hp @ skew(w).T + np.einsum("lij,lj->li", J, dq_legs)
    return np.linalg.norm(s.v + body @ s.R.T, axis=1)


def run(
    log: SensorLog,
    cfg: RunConfig,
    model: nmn.NmnModel | None = None,
    gt: GroundTruth | None = None,
    chain: LegChain | None = None,
    init: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
) -> RunResult:
    """Run one estimator variant over a log.

    The initial pose comes from ``init`` (R, v, p), else from the first
    ground-truth sample, else identity at rest.
    """
    chain = chain or default_chain()
    if model is None and cfg.model_path is not None:
        model = nmn.load_model(cfg.model_path)
    t = log.t
    if len(t) < 2:
        raise ConfigError("log needs at least two records")
    dt_nominal = float(np.median(np.diff(t)))
    flags, v_filt = contact_decisions(cfg, log, dt_nominal, model, gt)
    use_kin = cfg.variant in USES_KINEMATICS
    use_vel = cfg.variant in USES_VELOCITY
    noise = cfg.noise

    if init is None and gt is not None:
        init = (gt.R[0], gt.v[0], gt.p[0])
    s = ekf.init_state(noise, *(init or (None, None, None)), t=float(t[0]))

    accel, gyro, q, dq = log["accel"], log["gyro"], log["q"], log["dq"]
    feet, jac = fk_batch(chain, q)
    dq_legs = dq.reshape(n_ticks := len(t), 4, -1)
    n = n_ticks
    Rs = np.empty((n, 3, 3))
    vs = np.empty((n, 3))
    ps = np.empty((n, 3))
    bg = np.empty((n, 3))
    ba = np.empty((n, 3))
    events: list[tuple[float, str, int | None]] = []
    active = np.zeros(4, bool)

    for k in range(n):
        if k > 0:
            contact_noise = None
            if cfg.slip_rejection and s.contacts:
                contact_noise = {}
                speed = foot_speeds(s, feet[k - 1], jac[k - 1], dq_legs[k - 1], gyro[k - 1])
                for foot in s.contacts:
                    if speed[foot] > cfg.slip_threshold:
                        contact_noise[foot] = noise.contact * cfg.slip_factor
                        events.append((float(t[k]), "slip", foot))
            s = ekf.propagate(s, ekf.ImuSample(accel[k - 1], gyro[k - 1]), float(t[k] - t[k - 1]), noise, contact_noise or None)

        if use_kin:
            for foot in range(4):
                if flags[k, foot] and not active[foot]:
                    s = ekf.add_contact(s, foot, q[k], chain, noise, fk=(feet[k, foot], jac[k, foot]))
                    events.append((float(t[k]), "add", foot))
                elif active[foot] and not flags[k, foot]:
                    s = ekf.remove_contact(s, foot)
                    events.append((float(t[k]), "remove", foot))
            active = flags[k].copy()

        blocks = []
        kinds: list[tuple[str, int | None]] = []
        if use_kin and s.contacts:
            tracked = sorted(s.contacts)
            blocks.append(ekf.stacked_kinematics(s, tracked, feet[k, tracked], jac[k, tracked], noise))
            kinds.extend(("kinematics", f) for f in tracked)
        if use_vel and cm.velocity_gate(v_filt[k], cfg.velocity_gate):
            o = ekf.velocity_observation(s, v_filt[k], noise)
            blocks.append((o.H, o.innovation, o.N))
            kinds.append(("velocity", None))
        if blocks:
            if len(blocks) == 1:
                H, z, N = blocks[0]
            else:
                H = np.vstack([b[0] for b in blocks])
                z = np.concatenate([b[1] for b in blocks])
                N = np.zeros((len(z), len(z)))
                N[: len(blocks[0][1]), : len(blocks[0][1])] = blocks[0][2]
                N[len(blocks[0][1]) :, len(blocks[0][1]) :] = blocks[1][2]
            updated = ekf.apply_stacked(s, H, z, N)
            if updated is s:
                events.append((float(t[k]), "skip", None))
            else:
                events.extend((float(t[k]), kind, foot) for kind, foot in kinds)
            s = updated

        Rs[k], vs[k], ps[k], bg[k], ba[k] = s.R, s.v, s.p, s.bias_gyro, s.bias_accel

    traj = Trajectory(t.copy(), Rs, vs, ps)
    return RunResult(traj, events, flags if use_kin else np.zeros_like(flags), bg, ba)


def events_to_json(events) -> str:
    return "\n".join(json.dumps({"t": t, "type": kind, "foot": foot}) for t, kind, foot in events) + "\n"
