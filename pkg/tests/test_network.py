import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lwvoc.network import (I2, J2, NetworkError, NetworkSpec, NumericalSingularityError,
                           block_rotation, build_impedances, build_incidence, extend_planar,
                           impedance_matrix, network_impedance_L, rotation, solve_steady_state,
                           table1_network)

W50 = 2 * math.pi * 50


def test_incidence_single_edge():
    spec = NetworkSpec(2, [(1, 2)], C=1, G=1)
    np.testing.assert_array_equal(build_incidence(spec), [[1], [-1]])


def test_incidence_ring_columns_sum_to_zero():
    B = build_incidence(table1_network())
    assert B.shape == (3, 3)
    np.testing.assert_array_equal(B.sum(axis=0), 0)


def test_incidence_path_by_hand():
    spec = NetworkSpec(3, [(1, 2), (2, 3)], C=1, G=1)
    np.testing.assert_array_equal(build_incidence(spec), [[1, 0], [-1, 1], [0, -1]])


@pytest.mark.parametrize("edges, needle", [([(1, 1)], "edge 1 is a self-loop"),
                                           ([(1, 2), (2, 2)], "edge 2 is a self-loop"),
                                           ([(1, 4)], "out of range")])
def test_bad_edges_are_rejected(edges, needle):
    with pytest.raises(NetworkError, match=needle):
        NetworkSpec(3, edges, C=1, G=1)


@pytest.mark.parametrize("kw, msg", [(dict(G=-1.0), "conductance must be positive"),
                                     (dict(C=0.0), "capacitance must be positive"),
                                     (dict(R_O=0.0), "line resistance must be positive"),
                                     (dict(L_O=-1e-5), "line inductance must be positive")])
def test_positivity(kw, msg):
    args = dict(C=1e-3, G=0.5, R_O=0.2, L_O=5e-5) | kw
    with pytest.raises(NetworkError, match=msg):
        NetworkSpec(2, [(1, 2)], **args)


def test_spec_is_immutable():
    spec = table1_network()
    with pytest.raises(ValueError):
        spec.G[0] = 3.0
    changed = spec.with_conductance(1, 1.0)
    assert spec.G[0] == 0.5 and changed.G[0] == 1.0
    assert changed != spec and spec == table1_network()


def test_extend_planar_examples():
    np.testing.assert_array_equal(extend_planar([[1], [-1]]), np.vstack([I2, -I2]))
    np.testing.assert_array_equal(extend_planar(np.eye(2)), np.eye(4))
    Bx = extend_planar(build_incidence(table1_network()))
    assert Bx.shape == (6, 6)
    for i in range(3):
        for e in range(3):
            block = Bx[2 * i:2 * i + 2, 2 * e:2 * e + 2]
            assert any(np.array_equal(block, s * I2) for s in (1, -1, 0))
    # planar column sums vanish: (1_n kron I2)^T B = 0
    np.testing.assert_array_equal(np.kron(np.ones((3, 1)), I2).T @ Bx, 0)


def test_impedance_blocks_table1():
    Z_G, Z_O = build_impedances(table1_network(), W50)
    np.testing.assert_allclose(Z_G[:2, :2], [[0.5, -0.31416], [0.31416, 0.5]], atol=5e-6)
    np.testing.assert_allclose(Z_O[:2, :2], [[0.2, -0.015708], [0.015708, 0.2]], atol=5e-7)


def test_zero_frequency_is_pure_conductance():
    Z_G, _ = build_impedances(table1_network(), 0.0)
    np.testing.assert_array_equal(Z_G, 0.5 * np.eye(6))


def test_L_without_lines_is_Z_G():
    spec = NetworkSpec(2, [], C=1e-3, G=[0.5, 0.7])
    Z_G, Z_O = build_impedances(spec, W50)
    np.testing.assert_array_equal(network_impedance_L(Z_G, Z_O, np.zeros((4, 0))), Z_G)


def test_L_two_nodes_against_direct_inverse():
    spec = NetworkSpec(2, [(1, 2)], C=1e-3, G=0.5, R_O=0.2, L_O=5e-5)
    L = impedance_matrix(spec, W50)
    # line admittance y = 1/(R + j w L_O) as a 2x2 real block
    z = complex(0.2, 5e-5 * W50)
    y = 1 / z
    Y = np.array([[y.real, -y.imag], [y.imag, y.real]])
    zg = np.array([[0.5, -1e-3 * W50], [1e-3 * W50, 0.5]])
    expected = np.block([[zg + Y, -Y], [-Y, zg + Y]])
    np.testing.assert_allclose(L, expected, rtol=1e-12)
    assert np.linalg.eigvals(-L).real.max() < 0


def test_L_ring_symmetric_part_positive_definite():
    L = impedance_matrix(table1_network(), W50)
    assert L.shape == (6, 6)
    assert np.linalg.eigvalsh(L + L.T).min() > 0


def test_singular_line_impedance_is_reported():
    Z_G = np.eye(2)
    with pytest.raises(NumericalSingularityError):
        network_impedance_L(Z_G, np.zeros((2, 2)), np.eye(2))


def test_steady_state_single_node_closed_form():
    spec = NetworkSpec(1, [], C=1e-3, G=0.5)
    v, i = solve_steady_state([20.0, 0.0], spec, W50)
    zg = np.array([[0.5, -1e-3 * W50], [1e-3 * W50, 0.5]])
    np.testing.assert_allclose(v, np.linalg.solve(zg, [20.0, 0.0]), rtol=1e-12)
    assert np.linalg.norm(v) == pytest.approx(20 / math.hypot(0.5, 1e-3 * W50), rel=1e-12)
    assert np.linalg.norm(v) == pytest.approx(33.87, abs=5e-3)
    assert i.shape == (0,)


def test_steady_state_zero_input():
    v, i = solve_steady_state(np.zeros(6), table1_network(), W50)
    assert not v.any() and not i.any()


def test_rotation_conventions():
    np.testing.assert_allclose(rotation(0.3) @ rotation(0.4), rotation(0.7), atol=1e-12)
    np.testing.assert_allclose(rotation(0.3) @ rotation(0.3).T, I2, atol=1e-12)
    assert np.linalg.det(rotation(1.1)) == pytest.approx(1.0)
    assert block_rotation(0.2, 3).shape == (6, 6)


@st.composite
def random_specs(draw):
    n = draw(st.integers(1, 5))
    pairs = [(i, j) for i in range(1, n + 1) for j in range(1, n + 1) if i < j]
    edges = draw(st.lists(st.sampled_from(pairs), max_size=6)) if pairs else []
    m = len(edges)
    pos = st.floats(1e-3, 10.0)
    return NetworkSpec(n, edges, C=draw(st.lists(st.floats(1e-5, 1e-2), min_size=n, max_size=n)),
                       G=draw(st.lists(pos, min_size=n, max_size=n)),
                       R_O=draw(st.lists(pos, min_size=m, max_size=m)),
                       L_O=draw(st.lists(st.floats(1e-6, 1e-3), min_size=m, max_size=m)))


@settings(max_examples=60, deadline=None)
@given(random_specs(), st.floats(0.0, 1000.0))
def test_network_invariants(spec, omega):
    Z_G, Z_O = build_impedances(spec, omega)
    L = network_impedance_L(Z_G, Z_O, extend_planar(build_incidence(spec)))
    Jn = np.kron(np.eye(spec.n), J2)
    # every block of the form a I2 + b J2, so L commutes with the planar J
    np.testing.assert_allclose(L @ Jn, Jn @ L, atol=1e-9 * max(1.0, np.abs(L).max()))
    # adding the line term cannot lower the symmetric part below 2 G
    assert np.linalg.eigvalsh(L + L.T).min() >= 2 * spec.G.min() * (1 - 1e-9)
    assert np.linalg.eigvals(-L).real.max() < 0
