"""World-centric right-invariant EKF with contact points and IMU biases.

The state is an SE_{2+N}(3) element ``X = [R v p d_1 .. d_N]`` plus gyro and
accelerometer biases. The covariance is kept in right-invariant error
coordinates ``[R, v, p, d_1..d_N, b_g, b_a]`` with the convention
``eta = X_hat X^-1`` and bias error ``b_hat - b``.

All operations are pure: they return a new :class:`FilterState`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import _kernels, lie
from .kinematics import LegChain, fk_and_jacobian

log = logging.getLogger(__name__)

MAX_DT = 0.05
COND_LIMIT = 1e12


@dataclass
class NoiseConfig:
    """Continuous-time noise densities and initial covariances (scalars times I)."""

    gyro: float = 1e-5
    accel: float = 1e-1
    contact: float = 1e-4
    encoder: float = 1e-6
    nmn_velocity: float = 10**-5.5
    gyro_bias: float = 1e-10
    accel_bias: float = 1e-10
    init_rot: float = 1e-8
    init_vel: float = 1e-8
    init_pos: float = 1e-8
    init_gyro_bias: float = 1e-10
    init_accel_bias: float = 1e-10
    gravity: tuple[float, float, float] = (0.0, 0.0, -9.81)

    def __post_init__(self):
        for name, value in asdict(self).items():
            if name != "gravity" and not value > 0:
                raise ValueError(f"noise entry {name} must be positive, got {value}")
        self.gravity = tuple(float(x) for x in self.gravity)

    @property
    def g(self) -> np.ndarray:
        return np.asarray(self.gravity, dtype=float)

    @classmethod
    def from_json(cls, path: str | Path) -> "NoiseConfig":
        with open(path) as fh:
            return cls(**json.load(fh))

    def to_json(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(asdict(self), fh, indent=2)


@dataclass
class ImuSample:
    accel: np.ndarray
    gyro: np.ndarray
    t: float = 0.0


@dataclass
class FilterState:
    X: np.ndarray
    bias_gyro: np.ndarray
    bias_accel: np.ndarray
    P: np.ndarray
    contacts: dict[int, int] = field(default_factory=dict)  # foot -> column of X
    t: float = 0.0

    @property
    def R(self) -> np.ndarray:
        return self.X[:3, :3]

    @property
    def v(self) -> np.ndarray:
        return self.X[:3, 3]

    @property
    def p(self) -> np.ndarray:
        return self.X[:3, 4]

    @property
    def num_contacts(self) -> int:
        return self.X.shape[0] - 5

    def contact_position(self, foot: int) -> np.ndarray:
        return self.X[:3, self.contacts[foot]]

    def copy(self) -> "FilterState":
        return FilterState(
            self.X.copy(),
            self.bias_gyro.copy(),
            self.bias_accel.copy(),
            self.P.copy(),
            dict(self.contacts),
            self.t,
        )


def _tangent_index(column: int) -> int:
    """Start of the error block belonging to a translational column of X."""
    return 3 * (column - 2)


def init_state(
    noise: NoiseConfig | None = None,
    R0: np.ndarray | None = None,
    v0: np.ndarray | None = None,
    p0: np.ndarray | None = None,
    t: float = 0.0,
) -> FilterState:
    noise = noise or NoiseConfig()
    R0 = np.eye(3) if R0 is None else np.asarray(R0, dtype=float)
    v0 = np.zeros(3) if v0 is None else np.asarray(v0, dtype=float)
    p0 = np.zeros(3) if p0 is None else np.asarray(p0, dtype=float)
    diag = np.repeat(
        [noise.init_rot, noise.init_vel, noise.init_pos, noise.init_gyro_bias, noise.init_accel_bias],
        3,
    )
    return FilterState(lie.make_element(R0, v0, p0), np.zeros(3), np.zeros(3), np.diag(diag), {}, t)


def error_dynamics(s: FilterState, g: np.ndarray) -> np.ndarray:
    """Linear right-invariant error dynamics matrix A (bias columns included)."""
    return _kernels.error_dynamics(s.X, np.asarray(g, dtype=float))


def transition_matrix(A: np.ndarray, dt: float) -> np.ndarray:
    """exp(A dt); the series terminates because A^4 = 0 for this structure."""
    return _kernels.transition(np.ascontiguousarray(A, dtype=float), float(dt))


def _nav_noise(s: FilterState, noise: NoiseConfig, contact_noise: dict[int, float] | None) -> np.ndarray:
    q = np.empty(s.P.shape[0] - 6)
    q[0:3] = noise.gyro
    q[3:6] = noise.accel
    q[6:9] = 0.0
    for foot, col in s.contacts.items():
        i = _tangent_index(col)
        q[i : i + 3] = noise.contact if contact_noise is None else contact_noise.get(foot, noise.contact)
    return q


def _process_noise(
    s: FilterState, noise: NoiseConfig, contact_noise: dict[int, float] | None
) -> np.ndarray:
    """Continuous noise covariance mapped into right-invariant error coordinates."""
    return _kernels.process_noise(s.X, _nav_noise(s, noise, contact_noise), noise.gyro_bias, noise.accel_bias)


def propagate(
    s: FilterState,
    imu: ImuSample,
    dt: float,
    noise: NoiseConfig,
    contact_noise: dict[int, float] | None = None,
) -> FilterState:
    """Strapdown propagation of the mean and covariance over ``dt`` seconds.

    The IMU sample is held constant over the interval and the mean is
    integrated exactly for that held input. ``contact_noise`` overrides the
    contact-point noise density per foot (slip rejection). Covariance uses
    ``Phi (P + Q dt) Phi^T``.
    """
    if dt == 0.0:
        return s.copy()
    if not 0.0 < dt <= MAX_DT:
        raise ValueError(f"dt must lie in (0, {MAX_DT}], got {dt}")
    X, P = _kernels.propagate(
        s.X,
        s.P,
        s.bias_gyro,
        s.bias_accel,
        np.asarray(imu.gyro, dtype=float),
        np.asarray(imu.accel, dtype=float),
        float(dt),
        noise.g,
        _nav_noise(s, noise, contact_noise),
        noise.gyro_bias,
        noise.accel_bias,
    )
    return FilterState(X, s.bias_gyro.copy(), s.bias_accel.copy(), P, dict(s.contacts), s.t + dt)


def add_contact(
    s: FilterState, foot: int, q: np.ndarray, chain: LegChain, noise: NoiseConfig, fk=None
) -> FilterState:
    """Append a contact point at the forward-kinematics foot position.

    ``fk`` optionally supplies a precomputed (foot position, Jacobian) pair.
    """
    if foot in s.contacts:
        raise KeyError(f"foot {foot} already tracked")
    hp, J = fk if fk is not None else fk_and_jacobian(chain, q, foot)
    R = s.R
    n_old = s.X.shape[0]
    X = np.eye(n_old + 1)
    X[:n_old, :n_old] = s.X
    X[:3, n_old] = s.p + R @ hp

    dim = s.P.shape[0]
    g0 = dim - 6  # new block goes before the biases
    F = np.zeros((dim + 3, dim))
    F[:g0, :g0] = np.eye(g0)
    F[g0 : g0 + 3, 6:9] = np.eye(3)
    F[g0 + 3 :, g0:] = np.eye(6)
    RJ = R @ J
    P = F @ s.P @ F.T
    P[g0 : g0 + 3, g0 : g0 + 3] += noise.encoder * (RJ @ RJ.T)
    contacts = dict(s.contacts)
    contacts[foot] = n_old
    return FilterState(X, s.bias_gyro.copy(), s.bias_accel.copy(), 0.5 * (P + P.T), contacts, s.t)


def remove_contact(s: FilterState, foot: int) -> FilterState:
    if foot not in s.contacts:
        raise KeyError(f"foot {foot} is not tracked")
    col = s.contacts[foot]
    keep_x = [i for i in range(s.X.shape[0]) if i != col]
    X = s.X[np.ix_(keep_x, keep_x)]
    i = _tangent_index(col)
    keep_p = [k for k in range(s.P.shape[0]) if not i <= k < i + 3]
    P = s.P[np.ix_(keep_p, keep_p)]
    contacts = {f: (c - 1 if c > col else c) for f, c in s.contacts.items() if f != foot}
    return FilterState(X, s.bias_gyro.copy(), s.bias_accel.copy(), P, contacts, s.t)


@dataclass
class Observation:
    """One right-invariant observation: innovation rows, H rows and noise."""

    kind: str
    foot: int | None
    H: np.ndarray
    innovation: np.ndarray
    N: np.ndarray


def kinematics_observation(
    s: FilterState, foot: int, q: np.ndarray, chain: LegChain, noise: NoiseConfig, fk=None
) -> Observation:
    if foot not in s.contacts:
        raise KeyError(f"foot {foot} is not tracked")
    hp, J = fk if fk is not None else fk_and_jacobian(chain, q, foot)
    col = s.contacts[foot]
    dim = s.P.shape[0]
    H = np.zeros((3, dim))
    H[:, 6:9] = -np.eye(3)
    i = _tangent_index(col)
    H[:, i : i + 3] = np.eye(3)
    R = s.R
    # Pi X_hat Y with Y = [h_p; 0; 1; .. -1 at the contact column ..]
    z = R @ hp + s.p - s.X[:3, col]
    RJ = R @ J
    return Observation("kinematics", foot, H, z, noise.encoder * (RJ @ RJ.T))


def velocity_observation(s: FilterState, v_meas: np.ndarray, noise: NoiseConfig) -> Observation:
    v_meas = np.asarray(v_meas, dtype=float)
    if not np.all(np.isfinite(v_meas)):
        raise ValueError("velocity measurement is not finite")
    dim = s.P.shape[0]
    H = np.zeros((3, dim))
    H[:, 3:6] = np.eye(3)
    R = s.R
    # Pi X_hat Y with Y = [v_b; -1; 0; ..]
    z = R @ v_meas - s.v
    return Observation("velocity", None, H, z, noise.nmn_velocity * (R @ R.T))


def apply_observations(s: FilterState, obs: list[Observation]) -> FilterState:
    """Joint Kalman update for stacked observations (Joseph covariance form).

    Returns the prior unchanged when the innovation covariance is numerically
    singular.
    """
    if not obs:
        raise ValueError("at least one observation is required")
    if len(obs) == 1:
        H, z, N = obs[0].H, obs[0].innovation, obs[0].N
    else:
        H = np.vstack([o.H for o in obs])
        z = np.concatenate([o.innovation for o in obs])
        m = len(z)
        N = np.zeros((m, m))
        r = 0
        for o in obs:
            k = len(o.innovation)
            N[r : r + k, r : r + k] = o.N
            r += k
    return apply_stacked(s, H, z, N)


def apply_stacked(s: FilterState, H: np.ndarray, z: np.ndarray, N: np.ndarray) -> FilterState:
    """Kalman update from an already stacked (H, innovation, N) triple."""
    ok, X, P, bg, ba = _kernels.update(
        s.X,
        s.P,
        s.bias_gyro,
        s.bias_accel,
        np.ascontiguousarray(H, dtype=float),
        np.ascontiguousarray(z, dtype=float),
        np.ascontiguousarray(N, dtype=float),
        COND_LIMIT,
    )
    if not ok:
        log.warning("skipping update at t=%.4f: innovation covariance is singular", s.t)
        return s
    return FilterState(X, bg, ba, P, dict(s.contacts), s.t)


def stacked_kinematics(
    s: FilterState, feet: list[int], hps: np.ndarray, jacs: np.ndarray, noise: NoiseConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(H, innovation, N) of leg-kinematics observations for several feet.

    ``hps`` (k, 3) are body-frame foot positions and ``jacs`` (k, 3, j) the
    matching leg Jacobians. Same rows as stacking ``kinematics_observation``.
    """
    k = len(feet)
    dim = s.P.shape[0]
    R = s.R
    H = np.zeros((3 * k, dim))
    cols = [s.contacts[f] for f in feet]
    RJ = R @ jacs
    N = np.zeros((3 * k, 3 * k))
    rows = np.arange(3 * k)
    H[rows, 6 + rows % 3] = -1.0
    H[rows, np.repeat([_tangent_index(c) for c in cols], 3) + rows % 3] = 1.0
    for r in range(k):
        N[3 * r : 3 * r + 3, 3 * r : 3 * r + 3] = noise.encoder * (RJ[r] @ RJ[r].T)
    z = (hps @ R.T + s.p - s.X[:3, cols].T).ravel()
    return H, z, N


def update_kinematics(
    s: FilterState, foot: int, q: np.ndarray, chain: LegChain, noise: NoiseConfig
) -> FilterState:
    return apply_observations(s, [kinematics_observation(s, foot, q, chain, noise)])


def update_velocity(s: FilterState, v_meas: np.ndarray, noise: NoiseConfig) -> FilterState:
    return apply_observations(s, [velocity_observation(s, v_meas, noise)])


def stacked_update(
    s: FilterState,
    kinematic: list[tuple[int, np.ndarray]],
    velocity: np.ndarray | None,
    chain: LegChain,
    noise: NoiseConfig,
) -> FilterState:
    """Single update with all leg-kinematics observations and an optional
    body-velocity observation stacked. Only equals sequential updates in the
    linear limit."""
    obs = [kinematics_observation(s, foot, q, chain, noise) for foot, q in kinematic]
    if velocity is not None:
        obs.append(velocity_observation(s, velocity, noise))
    return apply_observations(s, obs)


def measurement_vector_kinematics(s: FilterState, foot: int, hp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(Y, b) of the right-invariant leg-kinematics observation."""
    n = s.X.shape[0]
    Y = np.zeros(n)
    Y[:3] = hp
    Y[4] = 1.0
    Y[s.contacts[foot]] = -1.0
    b = np.zeros(n)
    b[4] = 1.0
    b[s.contacts[foot]] = -1.0
    return Y, b


def measurement_vector_velocity(s: FilterState, v_body: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(Y, b) of the right-invariant body-velocity observation."""
    n = s.X.shape[0]
    Y = np.zeros(n)
    Y[:3] = v_body
    Y[3] = -1.0
    b = np.zeros(n)
    b[3] = -1.0
    return Y, b


def with_time(s: FilterState, t: float) -> FilterState:
    return replace(s.copy(), t=t)
