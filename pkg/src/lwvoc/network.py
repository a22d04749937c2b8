"""Graph-structured converter network: incidence, planar extension, impedances.

States are stacked per node, ``[v_1, ..., v_n]`` with each ``v_k`` a 2-vector,
so a scalar node-by-edge matrix ``M`` is lifted to planar form as
``kron(M, I2)``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

I2 = np.eye(2)
J2 = np.array([[0.0, -1.0], [1.0, 0.0]])


class NetworkError(ValueError):
    """Invalid network description."""


class NumericalSingularityError(ArithmeticError):
    """A matrix that must be invertible is (numerically) singular."""


def rotation(angle: float) -> np.ndarray:
    """Frame rotation ``R(angle) = [[cos, sin], [-sin, cos]]``."""
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, s], [-s, c]])


def planar_J(count: int) -> np.ndarray:
    return np.kron(np.eye(count), J2)


def block_rotation(angle: float, count: int) -> np.ndarray:
    return np.kron(np.eye(count), rotation(angle))


def _per_item(value, count: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = np.full(count, float(arr))
    if arr.shape != (count,):
        raise NetworkError(f"{name} must be a scalar or a list of length {count}, got shape {arr.shape}")
    arr = arr.copy()
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class NetworkSpec:
    """Converter nodes joined by series R-L lines.

    ``edges`` are 1-based ordered pairs ``(i, j)``: the line current is
    positive when flowing from ``i`` to ``j``. Per-node ``C`` (lumped output
    and line-shunt capacitance) and ``G`` (load conductance); per-edge
    ``R_O`` and ``L_O``. ``C_O`` is carried for reference only, it is
    already part of ``C``.
    """

    n: int
    edges: tuple[tuple[int, int], ...]
    C: np.ndarray
    G: np.ndarray
    R_O: np.ndarray
    L_O: np.ndarray
    C_O: np.ndarray

    def __init__(self, n: int, edges: Sequence[Sequence[int]] = (), *, C, G,
                 R_O=1.0, L_O=1.0, C_O=0.0):
        if int(n) != n or n < 1:
            raise NetworkError(f"node count must be a positive integer, got {n!r}")
        n = int(n)
        edge_list = []
        for idx, edge in enumerate(edges):
            if len(edge) != 2:
                raise NetworkError(f"edge {idx + 1} must be a pair of node indices")
            i, j = (int(x) for x in edge)
            if not (1 <= i <= n and 1 <= j <= n):
                raise NetworkError(f"edge {idx + 1} endpoint out of range 1..{n}: ({i}, {j})")
            if i == j:
                raise NetworkError(f"edge {idx + 1} is a self-loop at node {i}")
            edge_list.append((i, j))
        m = len(edge_list)
        C = _per_item(C, n, "C")
        G = _per_item(G, n, "G")
        R_O = _per_item(R_O, m, "R_O")
        L_O = _per_item(L_O, m, "L_O")
        C_O = _per_item(C_O, m, "C_O")
        if np.any(C <= 0):
            raise NetworkError("capacitance must be positive")
        if np.any(G <= 0):
            raise NetworkError("conductance must be positive")
        if np.any(R_O <= 0):
            raise NetworkError("line resistance must be positive")
        if np.any(L_O <= 0):
            raise NetworkError("line inductance must be positive")
        if np.any(C_O < 0):
            raise NetworkError("line capacitance must be non-negative")
        for name, val in [("n", n), ("edges", tuple(edge_list)), ("C", C), ("G", G),
                          ("R_O", R_O), ("L_O", L_O), ("C_O", C_O)]:
            object.__setattr__(self, name, val)

    @property
    def m(self) -> int:
        return len(self.edges)

    def with_conductance(self, node: int, value: float) -> "NetworkSpec":
        """Copy with the load conductance of ``node`` (1-based) replaced."""
        if not 1 <= node <= self.n:
            raise NetworkError(f"node {node} out of range 1..{self.n}")
        G = np.array(self.G)
        G[node - 1] = value
        return NetworkSpec(self.n, self.edges, C=self.C, G=G, R_O=self.R_O,
                           L_O=self.L_O, C_O=self.C_O)

    def with_line_inductance_scaled(self, scale: float) -> "NetworkSpec":
        return NetworkSpec(self.n, self.edges, C=self.C, G=self.G, R_O=self.R_O,
                           L_O=np.asarray(self.L_O) * scale, C_O=self.C_O)

    def __eq__(self, other):
        if not isinstance(other, NetworkSpec):
            return NotImplemented
        return (self.n == other.n and self.edges == other.edges
                and all(np.array_equal(getattr(self, f), getattr(other, f))
                        for f in ("C", "G", "R_O", "L_O", "C_O")))

    __hash__ = None  # type: ignore[assignment]


def build_incidence(spec: NetworkSpec) -> np.ndarray:
    """Signed node-by-edge incidence: +1 where an edge leaves, -1 where it enters."""
    B = np.zeros((spec.n, spec.m))
    for e, (i, j) in enumerate(spec.edges):
        B[i - 1, e] = 1.0
        B[j - 1, e] = -1.0
    return B


def extend_planar(M) -> np.ndarray:
    """Replace each scalar entry by that multiple of ``I2`` (per-node stacking)."""
    return np.kron(np.asarray(M, dtype=float), I2)


def _blocks(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Block diagonal of ``a_k I2 + b_k J2``."""
    count = len(a)
    out = np.zeros((2 * count, 2 * count))
    for k in range(count):
        out[2 * k:2 * k + 2, 2 * k:2 * k + 2] = a[k] * I2 + b[k] * J2
    return out


def build_impedances(spec: NetworkSpec, omega: float) -> tuple[np.ndarray, np.ndarray]:
    """Node and line impedance matrices in the frame rotating at ``omega``.

    Returns ``(Z_G, Z_O)`` with blocks ``G I2 + C omega J2`` per node and
    ``R_O I2 + L_O omega J2`` per edge.
    """
    Z_G = _blocks(spec.G, spec.C * omega)
    Z_O = _blocks(spec.R_O, spec.L_O * omega)
    return Z_G, Z_O


def network_impedance_L(Z_G: np.ndarray, Z_O: np.ndarray, B_ext: np.ndarray) -> np.ndarray:
    """``L = Z_G + B Z_O^{-1} B^T``; raises if ``Z_O`` is singular or ``-L`` is not Hurwitz."""
    if Z_O.size == 0:
        L = np.array(Z_G, dtype=float)
    else:
        try:
            cond = np.linalg.cond(Z_O)
        except np.linalg.LinAlgError as exc:
            raise NumericalSingularityError("line impedance matrix is singular") from exc
        if not np.isfinite(cond) or cond > 1e14:
            raise NumericalSingularityError(f"line impedance matrix is singular (cond={cond:.3g})")
        L = Z_G + B_ext @ np.linalg.solve(Z_O, B_ext.T)
    if np.max(np.linalg.eigvals(-L).real) >= 0:
        raise NumericalSingularityError("-L is not Hurwitz")
    return L


def impedance_matrix(spec: NetworkSpec, omega: float) -> np.ndarray:
    Z_G, Z_O = build_impedances(spec, omega)
    return network_impedance_L(Z_G, Z_O, extend_planar(build_incidence(spec)))


def solve_steady_state(u_dq, spec: NetworkSpec, omega: float, *, rtol: float = 1e-9):
    """Voltages and line currents sustained by the injected dq currents ``u_dq``.

    ``v = L^{-1} u`` and ``i = Z_O^{-1} B^T v``. The residual of the network
    equations is checked against ``rtol``; the zero input gives the zero
    solution.
    """
    u_dq = np.asarray(u_dq, dtype=float)
    Z_G, Z_O = build_impedances(spec, omega)
    B = extend_planar(build_incidence(spec))
    L = network_impedance_L(Z_G, Z_O, B)
    v = np.linalg.solve(L, u_dq)
    i = np.linalg.solve(Z_O, B.T @ v) if spec.m else np.zeros(0)
    res = np.concatenate([-Z_G @ v - B @ i + u_dq, -Z_O @ i + B.T @ v])
    scale = max(np.linalg.norm(np.concatenate([u_dq, v, i])), np.finfo(float).tiny)
    if np.linalg.norm(res) > rtol * scale:
        raise NumericalSingularityError(
            f"steady-state residual {np.linalg.norm(res) / scale:.3e} exceeds {rtol:g}")
    return v, i


def table1_network(edges: Sequence[Sequence[int]] = ((1, 2), (2, 3), (3, 1))) -> NetworkSpec:
    """The three-converter test network (ring by default)."""
    return NetworkSpec(3, edges, C=1e-3, G=0.5, R_O=0.2, L_O=5e-5, C_O=1e-8)


__all__ = [
    "I2", "J2", "NetworkError", "NumericalSingularityError", "NetworkSpec",
    "rotation", "planar_J", "block_rotation", "build_incidence", "extend_planar",
    "build_impedances", "network_impedance_L", "impedance_matrix",
    "solve_steady_state", "table1_network",
]
