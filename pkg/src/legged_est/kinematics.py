"""Leg kinematics for a quadruped with serial revolute chains.

Each leg is a list of revolute joints ``(axis, offset)`` followed by a foot
offset. A joint first translates by ``offset`` in its parent frame and then
rotates about ``axis``. All outputs are expressed in the body (IMU) frame.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .lie import skew, so3_exp, so3_maps_batch


class WorkspaceError(ValueError):
    """Foot target outside the reachable workspace of a leg."""


@dataclass
class Leg:
    name: str
    axes: np.ndarray  # (J, 3) unit vectors
    offsets: np.ndarray  # (J, 3)
    foot_offset: np.ndarray  # (3,)

    @property
    def num_joints(self) -> int:
        return len(self.axes)


@dataclass
class LegChain:
    legs: list[Leg]
    _starts: list[int] = field(init=False, repr=False)

    def __post_init__(self):
        starts, k = [], 0
        for leg in self.legs:
            norms = np.linalg.norm(leg.axes, axis=1)
            if np.any(np.abs(norms - 1.0) > 1e-9):
                raise ValueError(f"leg {leg.name}: joint axes must be unit vectors")
            starts.append(k)
            k += leg.num_joints
        self._starts = starts
        self.num_joints = k

    def q_slice(self, leg: int) -> slice:
        s = self._starts[leg]
        return slice(s, s + self.legs[leg].num_joints)

    @classmethod
    def from_dict(cls, data: dict) -> "LegChain":
        legs = []
        for item in data["legs"]:
            joints = item["joints"]
            legs.append(
                Leg(
                    name=item.get("name", f"leg{len(legs)}"),
                    axes=np.array([j["axis"] for j in joints], dtype=float).reshape(-1, 3),
                    offsets=np.array([j["offset"] for j in joints], dtype=float).reshape(-1, 3),
                    foot_offset=np.array(item["foot_offset"], dtype=float),
                )
            )
        return cls(legs)

    def to_dict(self) -> dict:
        return {
            "legs": [
                {
                    "name": leg.name,
                    "joints": [
                        {"axis": a.tolist(), "offset": o.tolist()}
                        for a, o in zip(leg.axes, leg.offsets)
                    ],
                    "foot_offset": leg.foot_offset.tolist(),
                }
                for leg in self.legs
            ]
        }

    def scaled(self, factors: np.ndarray) -> "LegChain":
        """Copy with per-leg link lengths (everything below the hip) scaled."""
        legs = []
        for leg, f in zip(self.legs, np.atleast_2d(factors)):
            offsets = leg.offsets.copy()
            offsets[1:] *= f[: len(offsets) - 1, None]
            legs.append(Leg(leg.name, leg.axes.copy(), offsets, leg.foot_offset * f[-1]))
        return LegChain(legs)


def load_chain(path: str | Path) -> LegChain:
    with open(path) as fh:
        return LegChain.from_dict(json.load(fh))


def default_chain() -> LegChain:
    text = resources.files("legged_est.data").joinpath("robot.json").read_text()
    return LegChain.from_dict(json.loads(text))


def _walk(leg: Leg, q_leg: np.ndarray):
    """Yield per-joint (origin, world axis) and return the foot pose."""
    R = np.eye(3)
    p = np.zeros(3)
    origins, axes = [], []
    for axis, offset, angle in zip(leg.axes, leg.offsets, q_leg):
        p = p + R @ offset
        origins.append(p)
        axes.append(R @ axis)
        R = R @ so3_exp(axis * angle)
    foot = p + R @ leg.foot_offset
    return foot, R, origins, axes


def fk_position(chain: LegChain, q: np.ndarray, leg: int) -> np.ndarray:
    foot, _, _, _ = _walk(chain.legs[leg], np.asarray(q)[chain.q_slice(leg)])
    return foot


def fk_orientation(chain: LegChain, q: np.ndarray, leg: int) -> np.ndarray:
    _, R, _, _ = _walk(chain.legs[leg], np.asarray(q)[chain.q_slice(leg)])
    return R


def jacobian(chain: LegChain, q: np.ndarray, leg: int) -> np.ndarray:
    return fk_and_jacobian(chain, q, leg)[1]


def fk_and_jacobian(chain: LegChain, q: np.ndarray, leg: int) -> tuple[np.ndarray, np.ndarray]:
    """Foot position and its 3 x num_joints Jacobian in one pass."""
    sl = chain.q_slice(leg)
    foot, _, origins, axes = _walk(chain.legs[leg], np.asarray(q)[sl])
    J = np.zeros((3, chain.num_joints))
    for k, (o, a) in enumerate(zip(origins, axes)):
        J[:, sl.start + k] = skew(a) @ (foot - o)
    return foot, J


def fk_batch(chain: LegChain, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Feet (T, legs, 3) and leg-local Jacobian blocks (T, legs, 3, joints).

    Requires every leg to have the same number of joints.
    """
    q = np.atleast_2d(np.asarray(q, dtype=float))
    T = len(q)
    nj = {leg.num_joints for leg in chain.legs}
    if len(nj) != 1:
        raise ValueError("fk_batch needs legs with equal joint counts")
    nj = nj.pop()
    feet = np.empty((T, len(chain.legs), 3))
    jac = np.empty((T, len(chain.legs), 3, nj))
    for i, leg in enumerate(chain.legs):
        qi = q[:, chain.q_slice(i)]
        R = np.broadcast_to(np.eye(3), (T, 3, 3))
        p = np.zeros((T, 3))
        origins, axes = [], []
        for j, (axis, offset) in enumerate(zip(leg.axes, leg.offsets)):
            p = p + R @ offset
            origins.append(p)
            axes.append(R @ axis)
            R = R @ so3_maps_batch(np.outer(qi[:, j], axis))[0]
        foot = p + R @ leg.foot_offset
        feet[:, i] = foot
        for j, (o, a) in enumerate(zip(origins, axes)):
            jac[:, i, :, j] = np.cross(a, foot - o)
    return feet, jac


def foot_velocity_world(
    chain: LegChain,
    q: np.ndarray,
    dq: np.ndarray,
    omega: np.ndarray,
    R: np.ndarray,
    v: np.ndarray,
    leg: int,
) -> np.ndarray:
    """World-frame velocity of a foot given body motion and joint rates."""
    foot, J = fk_and_jacobian(chain, q, leg)
    return v + R @ (skew(omega) @ foot + J @ dq)


@dataclass(frozen=True)
class IkParams:
    hip: np.ndarray
    lateral: float
    thigh: float
    shank: float


def ik_params(leg: Leg) -> IkParams:
    ok = (
        leg.num_joints == 3
        and np.allclose(leg.axes, [[1, 0, 0], [0, 1, 0], [0, 1, 0]])
        and np.allclose(leg.offsets[1, [0, 2]], 0.0)
        and np.allclose(leg.offsets[2, :2], 0.0)
        and np.allclose(leg.foot_offset[:2], 0.0)
    )
    if not ok:
        raise ValueError(f"leg {leg.name}: analytic IK needs a roll-pitch-pitch leg")
    return IkParams(leg.offsets[0], leg.offsets[1, 1], -leg.offsets[2, 2], -leg.foot_offset[2])


def inverse_kinematics(chain: LegChain, foot: np.ndarray, leg: int) -> np.ndarray:
    """Joint angles (roll, pitch, knee) placing the foot at a body-frame point.

    Knee angles are non-positive (knee points backward).
    """
    prm = ik_params(chain.legs[leg])
    x, y, z = np.asarray(foot, dtype=float) - prm.hip
    r2 = y * y + z * z - prm.lateral**2
    if r2 <= 0.0:
        raise WorkspaceError(f"leg {leg}: foot inside the hip offset circle")
    zp = -np.sqrt(r2)
    q1 = np.arctan2(z, y) - np.arctan2(zp, prm.lateral)
    q1 = (q1 + np.pi) % (2 * np.pi) - np.pi
    L1, L2 = prm.thigh, prm.shank
    D = (x * x + zp * zp - L1 * L1 - L2 * L2) / (2 * L1 * L2)
    if abs(D) > 1.0:
        raise WorkspaceError(f"leg {leg}: foot target at distance out of reach")
    q3 = -np.arccos(D)
    q2 = np.arctan2(-x, -zp) - np.arctan2(L2 * np.sin(q3), L1 + L2 * np.cos(q3))
    return np.array([q1, q2, q3])


def inverse_kinematics_all(chain: LegChain, feet: np.ndarray) -> np.ndarray:
    return np.concatenate([inverse_kinematics(chain, feet[i], i) for i in range(len(chain.legs))])
