"""Compiled numeric kernels for the filter's per-tick work.

Arrays follow the layouts documented in ``lie`` and ``ekf``: a group element
with ``n`` translational columns, covariance ordered
``[rotation, columns..., gyro bias, accel bias]``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def skew(w):
    out = np.zeros((3, 3))
    out[0, 1], out[0, 2] = -w[2], w[1]
    out[1, 0], out[1, 2] = w[2], -w[0]
    out[2, 0], out[2, 1] = -w[1], w[0]
    return out


@njit(cache=True)
def so3_maps(w):
    """(exp, left Jacobian, Gamma2) of a rotation vector."""
    t2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2]
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
    W = skew(w)
    W2 = W @ W
    eye = np.eye(3)
    return eye + a * W + b * W2, eye + b * W + c * W2, 0.5 * eye + c * W + d * W2


@njit(cache=True)
def adjoint(X):
    n = X.shape[0] - 3
    R = np.ascontiguousarray(X[:3, :3])
    Ad = np.zeros((3 + 3 * n, 3 + 3 * n))
    for i in range(n + 1):
        Ad[3 * i : 3 * i + 3, 3 * i : 3 * i + 3] = R
    for i in range(n):
        col = np.ascontiguousarray(X[:3, 3 + i])
        Ad[3 + 3 * i : 6 + 3 * i, :3] = skew(col) @ R
    return Ad


@njit(cache=True)
def error_dynamics(X, g):
    n = X.shape[0] - 3
    dim = 3 + 3 * n + 6
    bg, ba = dim - 6, dim - 3
    R = np.ascontiguousarray(X[:3, :3])
    A = np.zeros((dim, dim))
    A[3:6, 0:3] = skew(g)
    for i in range(3):
        A[6 + i, 3 + i] = 1.0
    A[0:3, bg : bg + 3] = -R
    for j in range(n):
        col = np.ascontiguousarray(X[:3, 3 + j])
        A[3 + 3 * j : 6 + 3 * j, bg : bg + 3] = -(skew(col) @ R)
    A[3:6, ba : ba + 3] = -R
    return A


@njit(cache=True)
def transition(A, dt):
    Adt = A * dt
    Adt2 = Adt @ Adt
    return np.eye(A.shape[0]) + Adt + 0.5 * Adt2 + (Adt2 @ Adt) / 6.0


@njit(cache=True)
def process_noise(X, q_nav, q_bg, q_ba):
    nav = q_nav.shape[0]
    dim = nav + 6
    Ad = adjoint(X)
    Q = np.zeros((dim, dim))
    Q[:nav, :nav] = (Ad * q_nav) @ Ad.T
    for i in range(3):
        Q[nav + i, nav + i] = q_bg
        Q[nav + 3 + i, nav + 3 + i] = q_ba
    return Q


@njit(cache=True)
def propagate(X, P, bg, ba, gyro, accel, dt, g, q_nav, q_bg, q_ba):
    """Mean (exact for held input) and covariance over dt."""
    A = error_dynamics(X, g)
    Phi = transition(A, dt)
    Pn = Phi @ (P + process_noise(X, q_nav, q_bg, q_ba) * dt) @ Phi.T
    Pn = 0.5 * (Pn + Pn.T)
    w = (gyro - bg) * dt
    a = accel - ba
    R = np.ascontiguousarray(X[:3, :3])
    v = X[:3, 3].copy()
    p = X[:3, 4].copy()
    dR, Jl, G2 = so3_maps(w)
    Xn = X.copy()
    Xn[:3, :3] = R @ dR
    Xn[:3, 3] = v + (R @ (Jl @ a)) * dt + g * dt
    Xn[:3, 4] = p + v * dt + (R @ (G2 @ a)) * dt * dt + 0.5 * g * dt * dt
    return Xn, Pn


@njit(cache=True)
def sek3_exp(xi):
    n = xi.shape[0] // 3 - 1
    phi = xi[:3].copy()
    R, Jl, _ = so3_maps(phi)
    X = np.eye(3 + n)
    X[:3, :3] = R
    for j in range(n):
        X[:3, 3 + j] = Jl @ xi[3 + 3 * j : 6 + 3 * j]
    return X


@njit(cache=True)
def update(X, P, bg, ba, H, z, N, cond_limit):
    """Joseph-form Kalman update. Returns ok=False (and inputs) if S is singular."""
    PHt = P @ H.T
    S = H @ PHt + N
    if not np.all(np.isfinite(S)):
        return False, X, P, bg, ba
    eig = np.linalg.eigvalsh(0.5 * (S + S.T))
    if eig[0] <= 0 or eig[-1] / eig[0] > cond_limit:
        return False, X, P, bg, ba
    K = np.linalg.solve(S, PHt.T).T
    delta = K @ z
    dim = P.shape[0]
    Xn = sek3_exp(delta[: dim - 6].copy()) @ X
    IKH = np.eye(dim) - K @ H
    Pn = IKH @ P @ IKH.T + K @ N @ K.T
    return True, Xn, 0.5 * (Pn + Pn.T), bg + delta[dim - 6 : dim - 3], ba + delta[dim - 3 :]
