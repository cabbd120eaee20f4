"""SO(3) and SE_n(3) primitives.

A group element is a ``(3 + n) x (3 + n)`` float array laid out as::

    [[R, c_1, ..., c_n],
     [0,   I_n        ]]

with ``n >= 1`` translational columns sharing one rotation. For the filter
state the columns are velocity, position and the tracked contact points.
Tangent vectors are ordered ``[phi, rho_1, ..., rho_n]`` (length ``3 + 3n``).
"""

from __future__ import annotations

import math

import numpy as np

SMALL_ANGLE = 1e-8


class LieError(ValueError):
    """Raised on dimension mismatches or malformed group elements."""


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def vee(m: np.ndarray) -> np.ndarray:
    return np.array([m[2, 1], m[0, 2], m[1, 0]])


def so3_exp(w: np.ndarray) -> np.ndarray:
    """Rodrigues formula, with a second-order series below ``SMALL_ANGLE``."""
    w = np.asarray(w, dtype=float)
    theta = np.sqrt(w @ w)
    W = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * (W @ W)
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * W
        + ((1.0 - np.cos(theta)) / theta**2) * (W @ W)
    )


def so3_log(R: np.ndarray, check: bool = True) -> np.ndarray:
    """Principal logarithm of a rotation, ``|result| <= pi``."""
    R = np.asarray(R, dtype=float)
    if check:
        resid = np.max(np.abs(R.T @ R - np.eye(3)))
        if resid > 1e-6 or np.linalg.det(R) < 0:
            raise LieError(f"not a rotation (orthonormality residual {resid:.2e})")
    s = 0.5 * vee(R - R.T)
    sin_t = np.sqrt(s @ s)
    cos_t = 0.5 * (np.trace(R) - 1.0)
    theta = np.arctan2(sin_t, cos_t)
    if theta < SMALL_ANGLE:
        return s * (1.0 + theta**2 / 6.0)
    if np.pi - theta < 1e-3:
        # axis from the symmetric part; sin(theta) is too small to divide by
        B = 0.5 * (R + R.T) - cos_t * np.eye(3)
        i = int(np.argmax(np.diag(B)))
        u = B[:, i] / np.sqrt(B[i, i])
        u /= np.linalg.norm(u)
        if u @ s < 0:
            u = -u
        return theta * u
    return (theta / sin_t) * s


def so3_left_jacobian(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    theta = np.sqrt(w @ w)
    W = skew(w)
    if theta < SMALL_ANGLE:
        return np.eye(3) + 0.5 * W + (W @ W) / 6.0
    return (
        np.eye(3)
        + ((1.0 - np.cos(theta)) / theta**2) * W
        + ((theta - np.sin(theta)) / theta**3) * (W @ W)
    )


def so3_gamma2(w: np.ndarray) -> np.ndarray:
    """Second integral of the rotation: ``sum_k W^k / (k + 2)!``."""
    w = np.asarray(w, dtype=float)
    theta = np.sqrt(w @ w)
    W = skew(w)
    if theta < 1e-4:
        return 0.5 * np.eye(3) + W / 6.0 + (W @ W) / 24.0
    return (
        0.5 * np.eye(3)
        + ((theta - np.sin(theta)) / theta**3) * W
        + ((theta**2 + 2.0 * np.cos(theta) - 2.0) / (2.0 * theta**4)) * (W @ W)
    )


def so3_maps(w: np.ndarray):
    """(exp, left Jacobian, Gamma2) of one rotation vector, sharing the work."""
    x, y, z = float(w[0]), float(w[1]), float(w[2])
    t2 = x * x + y * y + z * z
    theta = math.sqrt(t2)
    if theta < 1e-2:
        a = 1 - t2 / 6 + t2 * t2 / 120
        b = 0.5 - t2 / 24 + t2 * t2 / 720
        c = 1 / 6 - t2 / 120 + t2 * t2 / 5040
        d = 1 / 24 - t2 / 720 + t2 * t2 / 40320
    else:
        sn, cs = math.sin(theta), math.cos(theta)
        a = sn / theta
        b = (1 - cs) / t2
        c = (theta - sn) / (t2 * theta)
        d = (t2 + 2 * cs - 2) / (2 * t2 * t2)
    W = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    W2 = W @ W
    eye = np.eye(3)
    return eye + a * W + b * W2, eye + b * W + c * W2, 0.5 * eye + c * W + d * W2


def renormalize(R: np.ndarray) -> np.ndarray:
    """Nearest rotation in the Frobenius sense (idempotent on rotations)."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.linalg.det(U @ Vt)])
    return U @ D @ Vt


def num_columns(X: np.ndarray) -> int:
    dim = X.shape[0]
    if X.ndim != 2 or X.shape[1] != dim or dim < 4:
        raise LieError(f"bad group element shape {X.shape}")
    return dim - 3


def identity(n: int) -> np.ndarray:
    return np.eye(3 + n)


def make_element(R: np.ndarray, *columns: np.ndarray) -> np.ndarray:
    n = len(columns)
    X = np.eye(3 + n)
    X[:3, :3] = R
    for i, c in enumerate(columns):
        X[:3, 3 + i] = c
    return X


def sek3_exp(xi: np.ndarray) -> np.ndarray:
    """Closed-form exponential of a ``3 + 3n`` tangent vector."""
    xi = np.asarray(xi, dtype=float)
    if xi.ndim != 1 or xi.size < 6 or xi.size % 3:
        raise LieError(f"tangent vector of length {xi.size} is not 3 + 3n")
    n = xi.size // 3 - 1
    phi = xi[:3]
    X = np.eye(3 + n)
    R, Jl, _ = so3_maps(phi)
    X[:3, :3] = R
    X[:3, 3:] = Jl @ xi[3:].reshape(n, 3).T
    return X


def sek3_log(X: np.ndarray) -> np.ndarray:
    n = num_columns(X)
    phi = so3_log(X[:3, :3])
    rho = np.linalg.solve(so3_left_jacobian(phi), X[:3, 3:])
    return np.concatenate([phi, rho.T.reshape(3 * n)])


def hat(xi: np.ndarray) -> np.ndarray:
    """Lie algebra matrix of a tangent vector."""
    xi = np.asarray(xi, dtype=float)
    n = xi.size // 3 - 1
    M = np.zeros((3 + n, 3 + n))
    M[:3, :3] = skew(xi[:3])
    M[:3, 3:] = xi[3:].reshape(n, 3).T
    return M


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise LieError(f"dimension mismatch {a.shape} vs {b.shape}")
    num_columns(a)


def compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_pair(a, b)
    return a @ b


def inverse(a: np.ndarray) -> np.ndarray:
    num_columns(a)
    R = a[:3, :3]
    out = np.eye(a.shape[0])
    out[:3, :3] = R.T
    out[:3, 3:] = -R.T @ a[:3, 3:]
    return out


def adjoint(a: np.ndarray) -> np.ndarray:
    """Adjoint so that ``exp(Ad_a xi) a == a exp(xi)``."""
    n = num_columns(a)
    R = a[:3, :3]
    Ad = np.zeros((3 + 3 * n, 3 + 3 * n))
    for i in range(n + 1):
        Ad[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = R
    Ad[3:, :3] = (skew_batch(a[:3, 3:].T) @ R).reshape(3 * n, 3)
    return Ad


def is_element(X: np.ndarray, tol: float = 1e-9) -> bool:
    try:
        n = num_columns(X)
    except LieError:
        return False
    R = X[:3, :3]
    return (
        np.allclose(R.T @ R, np.eye(3), atol=tol)
        and abs(np.linalg.det(R) - 1.0) < tol
        and np.all(X[3:, :3] == 0.0)
        and np.array_equal(X[3:, 3:], np.eye(n))
    )


def _coefficients(theta: np.ndarray):
    """sin/cos series coefficients a, b, c, d of the SO(3) maps, stable near 0."""
    t2 = theta * theta
    small = theta < 1e-2
    ts = np.where(small, 1.0, theta)
    a = np.where(small, 1 - t2 / 6 + t2 * t2 / 120, np.sin(ts) / ts)
    b = np.where(small, 0.5 - t2 / 24 + t2 * t2 / 720, (1 - np.cos(ts)) / ts**2)
    c = np.where(small, 1 / 6 - t2 / 120 + t2 * t2 / 5040, (ts - np.sin(ts)) / ts**3)
    d = np.where(small, 1 / 24 - t2 / 720 + t2 * t2 / 40320, (ts**2 + 2 * np.cos(ts) - 2) / (2 * ts**4))
    return a, b, c, d


def skew_batch(w: np.ndarray) -> np.ndarray:
    W = np.zeros(w.shape[:-1] + (3, 3))
    W[..., 0, 1], W[..., 0, 2] = -w[..., 2], w[..., 1]
    W[..., 1, 0], W[..., 1, 2] = w[..., 2], -w[..., 0]
    W[..., 2, 0], W[..., 2, 1] = -w[..., 1], w[..., 0]
    return W


def so3_maps_batch(w: np.ndarray):
    """(exp, left Jacobian, Gamma2) for a stack of rotation vectors (..., 3)."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w, axis=-1)
    a, b, c, d = (x[..., None, None] for x in _coefficients(theta))
    W = skew_batch(w)
    W2 = W @ W
    eye = np.eye(3)
    return eye + a * W + b * W2, eye + b * W + c * W2, 0.5 * eye + c * W + d * W2


def so3_log_batch(R: np.ndarray) -> np.ndarray:
    """Logarithm of a stack of rotations with angles well below pi."""
    s = 0.5 * np.stack([R[..., 2, 1] - R[..., 1, 2], R[..., 0, 2] - R[..., 2, 0], R[..., 1, 0] - R[..., 0, 1]], axis=-1)
    sin_t = np.linalg.norm(s, axis=-1)
    cos_t = 0.5 * (np.trace(R, axis1=-2, axis2=-1) - 1.0)
    theta = np.arctan2(sin_t, cos_t)
    if np.any(np.pi - theta < 1e-3):
        raise LieError("so3_log_batch needs angles away from pi")
    small = theta < 1e-2
    safe = np.where(small, 1.0, sin_t)
    scale = np.where(small, 1 + theta**2 / 6 + 7 * theta**4 / 360, theta / safe)
    return s * scale[..., None]
