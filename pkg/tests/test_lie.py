import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from legged_est import lie


def series_expm(M, terms=30):
    out = np.eye(M.shape[0])
    term = np.eye(M.shape[0])
    for k in range(1, terms):
        term = term @ M / k
        out = out + term
    return out


def random_element(rng, n):
    return lie.make_element(lie.so3_exp(rng.normal(size=3)), *rng.normal(size=(n, 3)))


def test_skew_cases():
    assert np.array_equal(lie.skew(np.zeros(3)), np.zeros((3, 3)))
    assert np.array_equal(lie.skew(np.array([1.0, 0, 0])), [[0, 0, 0], [0, 0, -1], [0, 1, 0]])
    rng = np.random.default_rng(0)
    for _ in range(100):
        v, w = rng.normal(size=(2, 3))
        assert np.allclose(lie.skew(v) @ w, np.cross(v, w), atol=1e-14)


def test_so3_exp_cases():
    assert np.array_equal(lie.so3_exp(np.zeros(3)), np.eye(3))
    R = lie.so3_exp(np.array([np.pi / 2, 0, 0]))
    assert np.allclose(R @ [0, 1, 0], [0, 0, 1], atol=1e-15)


def test_so3_log_cases():
    assert np.array_equal(lie.so3_log(np.eye(3)), np.zeros(3))
    w = lie.so3_log(np.diag([-1.0, -1.0, 1.0]))
    assert abs(np.linalg.norm(w) - np.pi) < 1e-12
    assert np.allclose(abs(w[2]), np.pi) and np.allclose(w[:2], 0)
    with pytest.raises(lie.LieError):
        lie.so3_log(np.diag([1.0, 1.0, 1.1]))


def test_so3_roundtrip():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        u = rng.normal(size=3)
        w = u / np.linalg.norm(u) * rng.uniform(0, np.pi - 0.1)
        assert np.max(np.abs(lie.so3_log(lie.so3_exp(w)) - w)) < 1e-10


@pytest.mark.parametrize("theta", [0.0, 1e-12, 1e-9, 1e-7, 1e-4, np.pi - 1e-4, np.pi - 1e-7])
def test_so3_roundtrip_edge_angles(theta):
    u = np.array([0.3, -0.5, 0.8])
    w = u / np.linalg.norm(u) * theta
    assert np.max(np.abs(lie.so3_log(lie.so3_exp(w)) - w)) < 1e-8


def test_exp_matches_series_and_jacobians():
    rng = np.random.default_rng(2)
    for _ in range(50):
        w = rng.normal(size=3)
        W = lie.skew(w)
        assert np.max(np.abs(lie.so3_exp(w) - series_expm(W))) < 1e-12
        # left Jacobian = sum W^k/(k+1)!, gamma2 = sum W^k/(k+2)!
        J = sum(np.linalg.matrix_power(W, k) / math.factorial(k + 1) for k in range(30))
        G2 = sum(np.linalg.matrix_power(W, k) / math.factorial(k + 2) for k in range(30))
        assert np.max(np.abs(lie.so3_left_jacobian(w) - J)) < 1e-12
        assert np.max(np.abs(lie.so3_gamma2(w) - G2)) < 1e-12
        small = w * 1e-5
        Ws = lie.skew(small)
        G2s = 0.5 * np.eye(3) + Ws / 6 + Ws @ Ws / 24
        assert np.max(np.abs(lie.so3_gamma2(small) - G2s)) < 1e-15


def test_sek3_exp_cases():
    assert np.array_equal(lie.sek3_exp(np.zeros(12)), np.eye(6))
    xi = np.concatenate([np.zeros(3), [1, 2, 3, 4, 5, 6, 7, 8, 9]])
    X = lie.sek3_exp(xi)
    assert np.array_equal(X[:3, :3], np.eye(3))
    assert np.array_equal(X[:3, 3:], xi[3:].reshape(3, 3).T)
    with pytest.raises(lie.LieError):
        lie.sek3_exp(np.zeros(7))


def test_sek3_exp_vs_series():
    rng = np.random.default_rng(3)
    for n in (1, 2, 3, 6):
        for _ in range(20):
            xi = rng.normal(size=3 + 3 * n)
            xi *= rng.uniform(0, 5) / np.linalg.norm(xi)
            assert np.max(np.abs(lie.sek3_exp(xi) - series_expm(lie.hat(xi), 40))) < 1e-10


def test_group_operations():
    rng = np.random.default_rng(4)
    for _ in range(100):
        a, b, c = (random_element(rng, 3) for _ in range(3))
        assert np.max(np.abs(lie.compose(a, lie.inverse(a)) - np.eye(6))) < 1e-10
        assert np.max(np.abs(lie.inverse(lie.inverse(a)) - a)) < 1e-12
        assert np.array_equal(lie.compose(np.eye(6), b), b)
        lhs = lie.compose(lie.compose(a, b), c)
        rhs = lie.compose(a, lie.compose(b, c))
        assert np.max(np.abs(lhs - rhs)) < 1e-12
        assert lie.is_element(lie.compose(a, b))
    with pytest.raises(lie.LieError):
        lie.compose(np.eye(5), np.eye(6))


def test_adjoint_defining_equation():
    rng = np.random.default_rng(5)
    for _ in range(100):
        a = random_element(rng, 4)
        xi = rng.normal(size=15) * 0.5
        lhs = lie.sek3_exp(lie.adjoint(a) @ xi) @ a
        rhs = a @ lie.sek3_exp(xi)
        assert np.max(np.abs(lhs - rhs)) < 1e-8


def test_renormalize_idempotent():
    rng = np.random.default_rng(6)
    R = lie.so3_exp(rng.normal(size=3)) + 1e-4 * rng.normal(size=(3, 3))
    R1 = lie.renormalize(R)
    assert np.allclose(R1.T @ R1, np.eye(3), atol=1e-12)
    assert abs(np.linalg.det(R1) - 1) < 1e-12
    assert np.max(np.abs(lie.renormalize(R1) - R1)) < 1e-14


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, 3, elements=st.floats(-3, 3)), arrays(np.float64, 3, elements=st.floats(-3, 3)))
def test_exp_composition_stays_on_group(w1, w2):
    R = lie.so3_exp(w1) @ lie.so3_exp(w2)
    assert np.allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1) < 1e-9
