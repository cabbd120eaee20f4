"""Deterministic kinematic trot generator with consistent IMU and encoder streams.

The body follows a smooth commanded-velocity reference through a PD tracking
law. Body-frame specific force and angular rate are held constant over each
estimator tick (500 Hz) and the pose is integrated in closed form for that
held input, so a strapdown integrator fed the noise-free IMU reproduces the
ground truth to rounding error. Feet are planted exactly during stance except
for injected slip intervals (and sinking on the soft profile); joint angles
come from analytic inverse kinematics of the body-frame foot positions.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import lie
from .kinematics import LegChain, WorkspaceError, ik_params, default_chain

GRAVITY = np.array([0.0, 0.0, -9.81])
RATE = 500.0
COMMAND_RATE = 4000.0
TROT_OFFSETS = (0.0, 0.5, 0.5, 0.0)  # FL, FR, RL, RR
Q_DES_LEAD = 0.02  # s


@dataclass
class TerrainConfig:
    profile: str = "flat"  # flat | slippery | soft
    duration: float = 10.0
    command: str = "random"  # random | constant | zero
    max_speed: float = 0.8
    max_yaw_rate: float = 0.5
    command_interval: float = 2.0
    constant_velocity: tuple[float, float, float] = (0.5, 0.0, 0.0)  # vx, vy (body), yaw rate
    gait_period: float = 0.5
    duty_factor: float = 0.6
    body_height: float = 0.35
    swing_height: float = 0.08
    slip_probability: float = 0.01
    slip_speed: float = 0.8
    slip_duration: float = 0.1
    sink_depth: float = 0.03
    sink_tau: float = 0.05
    mass: float = 30.0
    link_scale_range: float = 0.0  # domain randomization: +- fraction of link lengths
    imu_rate: float = RATE

    def __post_init__(self):
        if self.profile not in ("flat", "slippery", "soft"):
            raise ValueError(f"unknown terrain profile {self.profile!r}")
        if self.command not in ("random", "constant", "zero"):
            raise ValueError(f"unknown command profile {self.command!r}")
        if not 0.0 <= self.slip_probability <= 1.0:
            raise ValueError("slip_probability must lie in [0, 1]")
        if not 0.0 < self.duty_factor < 1.0:
            raise ValueError("duty_factor must lie in (0, 1)")
        if self.duration <= 0 or self.gait_period <= 0 or self.imu_rate <= 0:
            raise ValueError("durations and rates must be positive")
        self.constant_velocity = tuple(float(x) for x in self.constant_velocity)

    @property
    def slips_enabled(self) -> bool:
        return self.profile == "slippery" and self.slip_probability > 0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SensorNoise:
    """Standard deviations of per-sample sensor noise and constant IMU biases."""

    gyro: float = 0.01
    accel: float = 0.1
    encoder: float = 0.001
    joint_velocity: float = 0.05
    gyro_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    accel_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @classmethod
    def off(cls) -> "SensorNoise":
        return cls(0.0, 0.0, 0.0, 0.0)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class SimLog:
    """Sensor streams and ground truth on the estimator clock."""

    t: np.ndarray
    accel: np.ndarray
    gyro: np.ndarray
    q: np.ndarray
    dq: np.ndarray
    q_des: np.ndarray  # previous joint target, q_des_{t-1}
    grf: np.ndarray
    gt_R: np.ndarray
    gt_v: np.ndarray
    gt_p: np.ndarray
    gt_omega: np.ndarray
    gt_accel: np.ndarray  # noise-free held specific force
    contact: np.ndarray
    slip: np.ndarray
    foot_world: np.ndarray
    header: dict = field(default_factory=dict)
    plans: list = field(default_factory=list, repr=False)
    truth_chain: LegChain | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.t)

    @property
    def dt(self) -> float:
        return 1.0 / RATE

    @property
    def v_body(self) -> np.ndarray:
        return np.einsum("tji,tj->ti", self.gt_R, self.gt_v)

    def nmn_inputs(self) -> np.ndarray:
        return np.concatenate([self.accel, self.gyro, self.q, self.dq, self.q_des], axis=1)

    def body_state_at(self, t: float):
        """Continuous-time (R, v, p, omega) inside the held-input interval."""
        k = min(int(np.floor(t * RATE + 1e-9)), len(self.t) - 1)
        tau = t - self.t[k]
        R, v, p = integrate_held(self.gt_R[k], self.gt_v[k], self.gt_p[k], self.gt_omega[k], self.gt_accel[k], tau)
        return R, v, p, self.gt_omega[k]

    def joint_angles_at(self, t: float) -> np.ndarray:
        """Noise-free joint angles at an arbitrary time, for differencing checks."""
        R, _, p, _ = self.body_state_at(t)
        ts = np.array([t])
        feet = np.stack([plan.position(ts)[0] for plan in self.plans])
        body = (feet - p) @ R
        return ik_batch(self.truth_chain, body[None])[0]


def integrate_held(R, v, p, omega, accel, dt):
    """Exact pose update for a body-frame rate and specific force held over dt."""
    phi = np.asarray(omega) * dt
    a = np.asarray(accel)
    R1 = R @ lie.so3_exp(phi)
    v1 = v + R @ lie.so3_left_jacobian(phi) @ a * dt + GRAVITY * dt
    p1 = p + v * dt + R @ lie.so3_gamma2(phi) @ a * dt**2 + 0.5 * GRAVITY * dt**2
    return R1, v1, p1


def _smoothstep(u):
    return u * u * (3.0 - 2.0 * u)


def _min_jerk(u):
    return u**3 * (10.0 - 15.0 * u + 6.0 * u * u)


def _min_jerk_rate(u):
    return 30.0 * u * u * (1.0 - u) ** 2


class CommandReference:
    """Commanded body pose on a fine grid (4 kHz) from a velocity profile."""

    def __init__(self, cfg: TerrainConfig, rng: np.random.Generator):
        self.cfg = cfg
        n = int(round((cfg.duration + 2.0) * COMMAND_RATE)) + 1
        t = np.arange(n) / COMMAND_RATE
        if cfg.command == "zero":
            cmd = np.zeros((n, 3))
        elif cfg.command == "constant":
            cmd = np.outer(_smoothstep(np.clip(t, 0.0, 1.0)), cfg.constant_velocity)
        else:
            n_knots = int(np.ceil(t[-1] / cfg.command_interval)) + 2
            knots = np.zeros((n_knots, 3))
            speed = rng.uniform(0.2, 1.0, n_knots) * cfg.max_speed
            heading = rng.uniform(-np.pi, np.pi, n_knots)
            heading[::2] = rng.uniform(-0.4, 0.4, len(heading[::2]))  # mostly forward
            knots[:, 0] = speed * np.cos(heading)
            knots[:, 1] = 0.5 * speed * np.sin(heading)
            knots[:, 2] = rng.uniform(-1, 1, n_knots) * cfg.max_yaw_rate
            knots[0] = 0.0
            seg = t / cfg.command_interval
            i = np.minimum(seg.astype(int), n_knots - 2)
            u = _smoothstep(seg - i)[:, None]
            cmd = knots[i] * (1 - u) + knots[i + 1] * u
        self.t = t
        self.cmd = cmd
        speed_frac = np.clip(np.linalg.norm(cmd[:, :2], axis=1) / max(cfg.max_speed, 1e-9), 0.0, 1.0)
        dt = 1.0 / COMMAND_RATE
        yaw = np.concatenate([[0.0], np.cumsum(0.5 * (cmd[1:, 2] + cmd[:-1, 2]) * dt)])
        c, s = np.cos(yaw), np.sin(yaw)
        vw = np.stack([c * cmd[:, 0] - s * cmd[:, 1], s * cmd[:, 0] + c * cmd[:, 1]], axis=1)
        w_gait = 2 * np.pi / cfg.gait_period
        height = cfg.body_height + 0.01 * speed_frac * np.sin(2 * w_gait * t)
        xy = np.concatenate([[[0.0, 0.0]], np.cumsum(0.5 * (vw[1:] + vw[:-1]) * dt, axis=0)])
        self.p = np.column_stack([xy, height])
        self.v = np.gradient(self.p, dt, axis=0)
        self.a = np.gradient(self.v, dt, axis=0)
        self.yaw = yaw
        self.roll = 0.03 * speed_frac * np.sin(w_gait * t)
        self.pitch = 0.02 * speed_frac * np.sin(w_gait * t + 1.0)
        self.gait = cfg.command != "zero"

    def index(self, t: float) -> int:
        return min(int(round(t * COMMAND_RATE)), len(self.t) - 1)

    def rotation(self, i):
        """Commanded attitude yaw * roll * pitch at grid index (or index array) ``i``."""
        z = np.zeros(np.shape(i))
        Rz, _, _ = lie.so3_maps_batch(np.stack([z, z, self.yaw[i]], axis=-1))
        Rx, _, _ = lie.so3_maps_batch(np.stack([self.roll[i], z, z], axis=-1))
        Ry, _, _ = lie.so3_maps_batch(np.stack([z, self.pitch[i], z], axis=-1))
        return Rz @ Rx @ Ry


@dataclass
class Stance:
    t0: float
    t1: float
    foothold: np.ndarray
    slip_t0: float = np.inf
    slip_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    slip_duration: float = 0.0
    sink_depth: float = 0.0
    sink_tau: float = 1.0


class FootPlan:
    """Piecewise world-frame foot trajectory: stance (with slip/sink) and swing."""

    def __init__(self, stances: list[Stance], swing_height: float):
        self.stances = stances
        self.swing_height = swing_height

    def _stance_offset(self, st: Stance, t):
        ds = np.clip(t - st.slip_t0, 0.0, st.slip_duration)[:, None] * st.slip_velocity
        sliding = (t >= st.slip_t0) & (t < st.slip_t0 + st.slip_duration)
        vel = np.where(sliding[:, None], st.slip_velocity, 0.0)
        if st.sink_depth > 0:
            e = np.exp(-np.maximum(t - st.t0, 0.0) / st.sink_tau)
            ds = ds - np.outer(st.sink_depth * (1 - e), [0, 0, 1])
            vel = vel - np.outer(st.sink_depth * e / st.sink_tau, [0, 0, 1])
        return ds, vel, sliding

    def evaluate(self, t: np.ndarray):
        """(position, velocity, in_stance, slipping) at times ``t``."""
        t = np.asarray(t, dtype=float)
        pos = np.zeros((len(t), 3))
        vel = np.zeros((len(t), 3))
        stance = np.zeros(len(t), bool)
        slip = np.zeros(len(t), bool)
        for j, st in enumerate(self.stances):
            m = (t >= st.t0) & (t < st.t1)
            if np.any(m):
                ds, dv, sl = self._stance_offset(st, t[m])
                pos[m] = st.foothold + ds
                vel[m] = dv
                stance[m] = True
                slip[m] = sl
            if j + 1 < len(self.stances):
                nxt = self.stances[j + 1]
                m = (t >= st.t1) & (t < nxt.t0)
                if np.any(m):
                    A = st.foothold + self._stance_offset(st, np.array([st.t1]))[0][0]
                    B = nxt.foothold
                    T = nxt.t0 - st.t1
                    u = (t[m] - st.t1) / T
                    bump = 64.0 * u**3 * (1 - u) ** 3
                    dbump = 64.0 * 3 * u**2 * (1 - u) ** 2 * (1 - 2 * u)
                    pos[m] = A + np.outer(_min_jerk(u), B - A)
                    pos[m, 2] += self.swing_height * bump
                    vel[m] = np.outer(_min_jerk_rate(u) / T, B - A)
                    vel[m, 2] += self.swing_height * dbump / T
        return pos, vel, stance, slip

    def position(self, t):
        return self.evaluate(t)[0]


def nominal_feet_body(chain: LegChain, height: float) -> np.ndarray:
    """Body-frame feet straight below the hip roll plane at a standing height."""
    feet = []
    for leg in chain.legs:
        prm = ik_params(leg)
        feet.append(prm.hip + np.array([0.0, prm.lateral, -height]))
    return np.array(feet)


def plan_feet(
    cfg: TerrainConfig, ref: CommandReference, chain: LegChain, rng: np.random.Generator
) -> list[FootPlan]:
    nominal = nominal_feet_body(chain, cfg.body_height)
    p0 = ref.p[0]
    R0 = ref.rotation(0)
    end = cfg.duration + 1.0
    plans = []
    for i in range(len(chain.legs)):
        start_world = p0 + R0 @ nominal[i]
        start_world[2] = 0.0
        if not ref.gait:
            plans.append(FootPlan([Stance(-1.0, end + 1.0, start_world)], cfg.swing_height))
            continue
        T, duty = cfg.gait_period, cfg.duty_factor
        off = TROT_OFFSETS[i]
        # stance windows [ (n - off) T, (n - off + duty) T )
        n0 = int(np.floor(off)) - 1
        stances = []
        n = n0
        while True:
            t0 = (n - off) * T
            t1 = t0 + duty * T
            n += 1
            if t1 <= 0.0:
                continue
            if t0 > end:
                break
            if t0 <= 0.0:
                hold = start_world
            else:
                tm = 0.5 * (t0 + t1)
                k = ref.index(tm)
                yaw = ref.yaw[k]
                Rz = lie.so3_exp([0.0, 0.0, yaw])
                hold = ref.p[k] + Rz @ nominal[i]
                hold[2] = 0.0
            st = Stance(t0, t1, hold)
            if cfg.slips_enabled and t0 > 0.0 and rng.random() < cfg.slip_probability:
                latest = t1 - cfg.slip_duration
                if latest > t0:
                    ang = rng.uniform(-np.pi, np.pi)
                    st.slip_t0 = rng.uniform(t0, latest)
                    st.slip_duration = cfg.slip_duration
                    st.slip_velocity = cfg.slip_speed * np.array([np.cos(ang), np.sin(ang), 0.0])
            if cfg.profile == "soft" and t0 > 0.0:
                st.sink_depth = cfg.sink_depth
                st.sink_tau = cfg.sink_tau
            stances.append(st)
        plans.append(FootPlan(stances, cfg.swing_height))
    return plans


def track_reference(cfg: TerrainConfig, ref: CommandReference, n: int, kp: float = 100.0, kd: float = 20.0):
    """Drive the body along the reference with held per-tick IMU inputs.

    Attitude tracks the command deadbeat (the held rate maps one commanded
    attitude onto the next); translation follows a PD law on the reference.
    """
    dt = 1.0 / RATE
    step = int(round(COMMAND_RATE / RATE))
    idx = np.arange(n + 1) * step
    Rs = ref.rotation(idx)
    omegas = lie.so3_log_batch(np.einsum("kji,kjl->kil", Rs[:-1], Rs[1:])) / dt
    _, Jl, G2 = lie.so3_maps_batch(omegas * dt)
    Rs = Rs[:-1]
    # world-frame response to a world-frame specific force held over the tick
    B1 = Rs @ Jl @ Rs.transpose(0, 2, 1) * dt
    B2 = Rs @ G2 @ Rs.transpose(0, 2, 1) * dt**2
    vs = np.empty((n, 3))
    ps = np.empty((n, 3))
    f_world = np.empty((n, 3))
    v = ref.v[0].copy()
    p = ref.p[0].copy()
    a_ref, v_ref, p_ref = ref.a[idx[:-1]], ref.v[idx[:-1]], ref.p[idx[:-1]]
    g_dv, g_dp = GRAVITY * dt, 0.5 * GRAVITY * dt**2
    for k in range(n):
        vs[k], ps[k] = v, p
        f = a_ref[k] + kp * (p_ref[k] - p) + kd * (v_ref[k] - v) - GRAVITY
        f_world[k] = f
        p = p + v * dt + B2[k] @ f + g_dp
        v = v + B1[k] @ f + g_dv
    accels = np.einsum("kji,kj->ki", Rs, f_world)
    return Rs, vs, ps, omegas, accels


def ik_batch(chain: LegChain, feet_body: np.ndarray) -> np.ndarray:
    """Vectorized analytic IK over (T, 4, 3) body-frame feet."""
    T = feet_body.shape[0]
    q = np.empty((T, 3 * len(chain.legs)))
    for i, leg in enumerate(chain.legs):
        prm = ik_params(leg)
        rel = feet_body[:, i] - prm.hip
        x, y, z = rel[:, 0], rel[:, 1], rel[:, 2]
        r2 = y * y + z * z - prm.lateral**2
        L1, L2 = prm.thigh, prm.shank
        if np.any(r2 <= 0):
            raise WorkspaceError(f"leg {i}: foot inside the hip offset circle")
        zp = -np.sqrt(r2)
        q1 = np.arctan2(z, y) - np.arctan2(zp, prm.lateral)
        q1 = (q1 + np.pi) % (2 * np.pi) - np.pi
        D = (x * x + zp * zp - L1 * L1 - L2 * L2) / (2 * L1 * L2)
        if np.any(np.abs(D) > 1.0):
            raise WorkspaceError(f"leg {i}: foot target out of reach")
        q3 = -np.arccos(D)
        q2 = np.arctan2(-x, -zp) - np.arctan2(L2 * np.sin(q3), L1 + L2 * np.cos(q3))
        q[:, 3 * i : 3 * i + 3] = np.column_stack([q1, q2, q3])
    return q


def leg_jacobian_batch(chain: LegChain, q: np.ndarray) -> np.ndarray:
    """(T, 4, 3, 3) per-leg Jacobians for roll-pitch-pitch legs."""
    T = q.shape[0]
    out = np.empty((T, len(chain.legs), 3, 3))
    ex = np.array([1.0, 0, 0])
    for i, leg in enumerate(chain.legs):
        prm = ik_params(leg)
        q1, q2, q3 = q[:, 3 * i], q[:, 3 * i + 1], q[:, 3 * i + 2]
        c1, s1 = np.cos(q1), np.sin(q1)
        # roll frame axes
        ey = np.stack([np.zeros(T), c1, s1], axis=1)
        ez = np.stack([np.zeros(T), -s1, c1], axis=1)
        o2 = prm.hip + prm.lateral * ey
        knee = -prm.thigh * (np.sin(q2)[:, None] * ex + np.cos(q2)[:, None] * ez)
        shin = -prm.shank * (np.sin(q2 + q3)[:, None] * ex + np.cos(q2 + q3)[:, None] * ez)
        o3 = o2 + knee
        foot = o3 + shin
        out[:, i, :, 0] = np.cross(ex, foot - prm.hip)
        out[:, i, :, 1] = np.cross(ey, foot - o2)
        out[:, i, :, 2] = np.cross(ey, foot - o3)
    return out


def synthesize_imu(log: SimLog, noise: SensorNoise, rng: np.random.Generator):
    """Noisy (accel, gyro) from the held specific force and body rate."""
    n = len(log)
    accel = log.gt_accel + np.asarray(noise.accel_bias) + rng.normal(size=(n, 3)) * noise.accel
    gyro = log.gt_omega + np.asarray(noise.gyro_bias) + rng.normal(size=(n, 3)) * noise.gyro
    return accel, gyro


def synthesize_joints(feet_body: np.ndarray, feet_body_vel: np.ndarray, chain: LegChain):
    """Noise-free (q, dq, q_des_prev) from body-frame foot positions/velocities."""
    q = ik_batch(chain, feet_body)
    J = leg_jacobian_batch(chain, q)
    dq = np.linalg.solve(J, feet_body_vel[..., None])[..., 0].reshape(len(q), -1)
    target = q + Q_DES_LEAD * dq
    q_des = np.vstack([q[:1], target[:-1]])
    return q, dq, q_des


def _grf(stance_phase: np.ndarray, in_stance: np.ndarray, mass: float) -> np.ndarray:
    w = np.where(in_stance, np.sin(np.pi * np.clip(stance_phase, 0, 1)) + 1e-3, 0.0)
    total = w.sum(axis=1, keepdims=True)
    return mass * 9.81 * w / np.where(total > 0, total, 1.0)


def _hold(x: np.ndarray, rate: float) -> np.ndarray:
    """Zero-order hold of a 500 Hz stream down to ``rate``."""
    if rate >= RATE:
        return x
    t = np.arange(len(x)) / RATE
    src = np.floor(np.floor(t * rate + 1e-9) / rate * RATE + 1e-9).astype(int)
    return x[src]


def generate(
    cfg: TerrainConfig,
    seed: int,
    chain: LegChain | None = None,
    noise: SensorNoise | None = None,
) -> SimLog:
    """Synthesize one labeled trajectory. Same (cfg, seed) -> identical arrays."""
    chain = chain or default_chain()
    noise = noise or SensorNoise.off()
    ss = np.random.SeedSequence(seed)
    rng_cmd, rng_feet, rng_noise, rng_dr = (np.random.default_rng(s) for s in ss.spawn(4))

    truth_chain = chain
    if cfg.link_scale_range > 0:
        f = 1.0 + rng_dr.uniform(-cfg.link_scale_range, cfg.link_scale_range, size=(len(chain.legs), 3))
        truth_chain = chain.scaled(f)

    ref = CommandReference(cfg, rng_cmd)
    plans = plan_feet(cfg, ref, truth_chain, rng_feet)
    n = int(round(cfg.duration * RATE))
    t = np.arange(n) / RATE
    Rs, vs, ps, omegas, accels = track_reference(cfg, ref, n)

    feet = np.empty((n, 4, 3))
    feet_vel = np.empty((n, 4, 3))
    stance = np.empty((n, 4), bool)
    slip = np.empty((n, 4), bool)
    phase = np.zeros((n, 4))
    for i, plan in enumerate(plans):
        feet[:, i], feet_vel[:, i], stance[:, i], slip[:, i] = plan.evaluate(t)
        for st in plan.stances:
            m = (t >= st.t0) & (t < st.t1)
            phase[m, i] = (t[m] - st.t0) / (st.t1 - st.t0)

    rel = feet - ps[:, None, :]
    feet_body = np.einsum("tji,tkj->tki", Rs, rel)
    # d/dt R^T (f - p) = R^T (df - v) - omega x body
    rel_vel = feet_vel - vs[:, None, :]
    feet_body_vel = np.einsum("tji,tkj->tki", Rs, rel_vel) - np.cross(omegas[:, None, :], feet_body)
    q, dq, q_des = synthesize_joints(feet_body, feet_body_vel, truth_chain)

    grf = _grf(phase, stance, cfg.mass)
    log = SimLog(
        t=t,
        accel=accels.copy(),
        gyro=omegas.copy(),
        q=q,
        dq=dq,
        q_des=q_des,
        grf=grf,
        gt_R=Rs,
        gt_v=vs,
        gt_p=ps,
        gt_omega=omegas,
        gt_accel=accels,
        contact=stance,
        slip=slip,
        foot_world=feet,
        header={
            "rate": RATE,
            "imu_rate": cfg.imu_rate,
            "seed": int(seed),
            "terrain": cfg.to_dict(),
            "sensor_noise": noise.to_dict(),
        },
        plans=plans,
        truth_chain=truth_chain,
    )
    accel, gyro = synthesize_imu(log, noise, rng_noise)
    log.accel = _hold(accel, cfg.imu_rate)
    log.gyro = _hold(gyro, cfg.imu_rate)
    log.q = q + rng_noise.normal(size=q.shape) * noise.encoder
    log.dq = dq + rng_noise.normal(size=dq.shape) * noise.joint_velocity
    return log
