import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lwvoc.controller import (ALPHABETA, DQ, ControllerGains, Setpoints, amplitude_fn,
                              block_projector, controller_rhs, frequency_fn, polar_rhs,
                              projector_from, wrap_angle)
from lwvoc.network import J2, NetworkSpec, rotation, table1_network

W50 = 2 * math.pi * 50


@pytest.fixture(scope="module")
def ring():
    spec = table1_network()
    return spec, Setpoints.derive(spec, 20.0, 1.1780, W50), ControllerGains(0.1, 0.03, 3)


def test_amplitude_fn_examples():
    assert amplitude_fn(20.0, 20.0, 0.1) == 0.0
    assert amplitude_fn(0.0, 20.0, 0.1) == pytest.approx(-0.1)
    assert amplitude_fn(40.0, 20.0, 0.1) == pytest.approx(0.1)
    with pytest.raises(ValueError, match="must be positive"):
        amplitude_fn(1.0, 0.0, 0.1)


def test_frequency_fn_examples():
    assert frequency_fn(0.4, 0.4, 0.03, W50, ALPHABETA) == pytest.approx(-W50)
    assert frequency_fn(0.4, 0.4, 0.03, W50, DQ) == 0.0
    assert frequency_fn(0.6, 0.5, 0.03, W50, DQ) == pytest.approx(0.003)
    with pytest.raises(ValueError):
        frequency_fn(0.0, 0.0, 0.03, W50, "abc")


@pytest.mark.parametrize("x, expected", [(0.0, 0.0), (3 * math.pi, math.pi),
                                         (-1.5 * math.pi, 0.5 * math.pi), (-math.pi, math.pi)])
def test_wrap_angle(x, expected):
    assert wrap_angle(x) == pytest.approx(expected, abs=1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50))
def test_frequency_is_2pi_periodic(theta, ref):
    base = frequency_fn(theta, ref, 0.03, W50, DQ)
    # wrap is discontinuous at +-pi; stay away from the cut
    if abs(abs(wrap_angle(theta - ref)) - math.pi) > 1e-6:
        assert frequency_fn(theta + 2 * math.pi, ref, 0.03, W50, DQ) == pytest.approx(base, abs=1e-9)
        assert frequency_fn(theta, ref + 2 * math.pi, 0.03, W50, DQ) == pytest.approx(base, abs=1e-9)
    assert -math.pi < wrap_angle(theta) <= math.pi


def test_projector_examples():
    np.testing.assert_allclose(projector_from([1, 0]), [[0, 0], [0, 1]])
    np.testing.assert_allclose(projector_from([1, 1]), [[0.5, -0.5], [-0.5, 0.5]])
    with pytest.raises(ValueError):
        projector_from([0, 0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=2, max_size=8).filter(lambda v: len(v) % 2 == 0))
def test_projector_properties(v):
    v = np.array(v)
    if np.linalg.norm(v) < 1e-3:
        return
    for P in (projector_from(v),) + ((block_projector(v),) if np.all(
            np.linalg.norm(v.reshape(-1, 2), axis=1) > 1e-3) else ()):
        np.testing.assert_allclose(P @ P, P, atol=1e-12)
        np.testing.assert_allclose(P, P.T, atol=1e-12)
        np.testing.assert_allclose(P @ v, 0, atol=1e-12 * np.linalg.norm(v) + 1e-12)
        ev = np.linalg.eigvalsh(P)
        assert np.all(np.minimum(np.abs(ev), np.abs(ev - 1)) < 1e-12)
    assert np.linalg.matrix_rank(projector_from(v)) == v.size - 1


def test_gains_validation():
    g = ControllerGains([0.1, 0.2], [0.03, 0.01])
    assert g.gamma_max == 0.2 and g.alpha_max == 0.03
    with pytest.raises(ValueError, match="gamma must be positive"):
        ControllerGains(0.0, 0.1, 2)
    with pytest.raises(ValueError, match="alpha must be positive"):
        ControllerGains(0.1, -1, 2)


def test_setpoints_derived(ring):
    spec, sp, _ = ring
    np.testing.assert_allclose(sp.u_dq[:2], 20 * np.array([math.cos(1.178), math.sin(1.178)]))
    np.testing.assert_allclose(sp.L @ sp.v_dq, sp.u_dq, rtol=1e-12)
    assert Setpoints.derive(spec, 20.0, 3 * math.pi, W50).theta0_star[0] == pytest.approx(math.pi)
    with pytest.raises(ValueError):
        Setpoints.derive(spec, -1.0, 0.0, W50)


def test_dq_rhs_vanishes_at_steady_state(ring):
    _, sp, g = ring
    du = controller_rhs(sp.u_dq, sp.v_dq, sp, g, 0.0, DQ)
    assert np.abs(du).max() <= 1e-12 * np.linalg.norm(sp.u_dq)


@pytest.mark.parametrize("t", [0.0, 0.0123, 0.77])
def test_alphabeta_orbit_is_harmonic(ring, t):
    _, sp, g = ring
    R = np.kron(np.eye(3), rotation(sp.omega_star * t).T)
    u, v = R @ sp.u_dq, R @ sp.v_dq
    du = controller_rhs(u, v, sp, g, t, ALPHABETA)
    np.testing.assert_allclose(du, sp.omega_star * np.kron(np.eye(3), J2) @ u, atol=1e-9)


def test_single_node_angle_error():
    spec = NetworkSpec(1, [], C=1e-3, G=0.5)
    sp = Setpoints.derive(spec, 20.0, 0.0, W50)
    g = ControllerGains(0.1, 0.03)
    u = 20 * np.array([math.cos(0.1), math.sin(0.1)])
    du = controller_rhs(u, np.zeros(2), sp, g, 0.0, DQ)
    np.testing.assert_allclose(du, -0.003 * J2 @ u, atol=1e-14)


def test_rhs_batches(ring):
    _, sp, g = ring
    rng = np.random.default_rng(0)
    u, v = rng.normal(size=(4, 5, 6)), rng.normal(size=(4, 5, 6))
    batch = controller_rhs(u, v, sp, g, 0.01, ALPHABETA)
    assert batch.shape == u.shape
    np.testing.assert_allclose(batch[2, 3], controller_rhs(u[2, 3], v[2, 3], sp, g, 0.01, ALPHABETA))


def test_rhs_at_origin_is_finite(ring):
    _, sp, g = ring
    assert not controller_rhs(np.zeros(6), np.zeros(6), sp, g, 0.0, ALPHABETA).any()


def test_polar_rhs_examples():
    spec = NetworkSpec(1, [], C=1e-3, G=0.5)
    sp = Setpoints.derive(spec, 20.0, 0.0, W50)
    g = ControllerGains(0.1, 0.03)
    dr, dth = polar_rhs([20.0], [0.0], sp, g)
    assert dr[0] == 0.0 and dth[0] == pytest.approx(W50)
    dr, _ = polar_rhs([40.0], [0.0], sp, g)
    assert dr[0] == pytest.approx(-0.2 * 20)
    _, dth = polar_rhs([20.0], [0.1], sp, g)
    assert dth[0] == pytest.approx(W50 - 0.003)
    with pytest.raises(ValueError):
        polar_rhs([0.0], [0.0], sp, g)
