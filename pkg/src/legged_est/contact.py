"""Signal conditioning and contact logic between measurements and the filter."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CONTACT_THRESHOLD = 0.5
GRF_THRESHOLD = 40.0  # N
GRF_CUTOFF = 10.0  # Hz
CONTACT_CUTOFF = 40.0  # Hz
VELOCITY_CUTOFF = 10.0  # Hz
VELOCITY_GATE = 0.1  # m/s
SLIP_THRESHOLD = 0.4  # m/s
SLIP_FACTOR = 10.0


@dataclass
class LpfState:
    cutoff: float
    y: np.ndarray | None = None

    def __post_init__(self):
        if not self.cutoff > 0:
            raise ValueError("cutoff frequency must be positive")

    @property
    def initialized(self) -> bool:
        return self.y is not None

    @property
    def tau(self) -> float:
        return 1.0 / (2.0 * np.pi * self.cutoff)


def lpf_step(s: LpfState, x, dt: float) -> tuple[LpfState, np.ndarray]:
    """First-order low-pass step; the first call passes the input through."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    if s.y is None:
        y = x.copy()
    else:
        alpha = dt / (dt + s.tau)
        y = s.y + alpha * (x - s.y)
    return LpfState(s.cutoff, y), y


def lpf_filter(x: np.ndarray, dt: float, cutoff: float) -> np.ndarray:
    """Filter a whole (T, ...) sequence."""
    s = LpfState(cutoff)
    out = np.empty_like(np.asarray(x, dtype=float))
    for k, xk in enumerate(x):
        s, out[k] = lpf_step(s, xk, dt)
    return out


def nmn_contact(c_filtered, threshold: float = CONTACT_THRESHOLD) -> np.ndarray:
    return np.asarray(c_filtered) >= threshold


def grf_contact(force_z, dt: float, threshold: float = GRF_THRESHOLD, cutoff: float = GRF_CUTOFF):
    """Contact flag(s) from a force history, evaluated at the last sample.

    ``force_z`` is (T,) for one foot or (T, feet) for several.
    """
    filtered = lpf_filter(np.asarray(force_z, dtype=float), dt, cutoff)
    return filtered[-1] >= threshold


def velocity_gate(v_filtered, gate: float = VELOCITY_GATE) -> bool:
    return bool(np.linalg.norm(v_filtered) > gate)


def slip_reject(
    foot_vel_world, base_cov: float, threshold: float = SLIP_THRESHOLD, factor: float = SLIP_FACTOR
) -> float:
    """Contact-point noise density, inflated when the foot is sliding."""
    if np.linalg.norm(foot_vel_world) > threshold:
        return base_cov * factor
    return base_cov


@dataclass
class ContactDecision:
    in_contact: np.ndarray
    source: list[str]
    slip: np.ndarray = field(default_factory=lambda: np.zeros(4, bool))

    def __post_init__(self):
        self.in_contact = np.asarray(self.in_contact, bool)
        self.slip = np.asarray(self.slip, bool) & self.in_contact
