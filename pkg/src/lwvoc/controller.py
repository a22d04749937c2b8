"""(lambda-omega) virtual oscillator control.

Each converter current ``u_k`` obeys::

    du_k/dt = -(lambda_k I2 + w_k J2) u_k - Pi_k v_k

with amplitude function ``lambda_k = gamma_k (r_k / r*_k - 1)`` and an
angle-based frequency function ``w_k``. In the stationary (alphabeta) frame
``w_k = alpha_k wrap(theta_k - theta*_k(t)) - omega*`` with
``theta*_k(t) = omega* t + theta0*_k``; in the dq frame rotating at
``omega*`` the ``-omega*`` offset drops out and ``theta*_k = theta0*_k``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .network import (I2, J2, NetworkSpec, build_impedances, build_incidence,
                      extend_planar, network_impedance_L, solve_steady_state)

ALPHABETA = "alphabeta"
DQ = "dq"
FRAMES = (ALPHABETA, DQ)


def wrap_angle(x):
    """Map angles to ``(-pi, pi]``."""
    return np.pi - np.mod(np.pi - np.asarray(x, dtype=float), 2 * np.pi)


def _check_frame(frame: str) -> None:
    if frame not in FRAMES:
        raise ValueError(f"frame must be one of {FRAMES}, got {frame!r}")


def amplitude_fn(r, r_star, gamma):
    """Radial gain ``gamma (r / r* - 1)``."""
    r_star = np.asarray(r_star, dtype=float)
    if np.any(r_star <= 0):
        raise ValueError("reference amplitude r* must be positive")
    return np.asarray(gamma) * (np.asarray(r) / r_star - 1.0)


def frequency_fn(theta, theta_star, alpha, omega_star, frame=DQ):
    """Rotation rate fed back by the oscillator.

    ``theta_star`` is the reference angle valid in ``frame``: time varying
    (``omega* t + theta0*``) for alphabeta, constant for dq.
    """
    _check_frame(frame)
    w = np.asarray(alpha) * wrap_angle(np.asarray(theta) - np.asarray(theta_star))
    return w - omega_star if frame == ALPHABETA else w


def projector_from(v_ref) -> np.ndarray:
    """``I - v v^T / (v^T v)``: orthogonal projector onto the complement of ``v_ref``."""
    v = np.asarray(v_ref, dtype=float).ravel()
    vv = float(v @ v)
    if vv == 0.0:
        raise ValueError("projector reference vector must be nonzero")
    return np.eye(v.size) - np.outer(v, v) / vv


def block_projector(v_ref) -> np.ndarray:
    """Block-diagonal per-node projectors built from a stacked planar vector."""
    v = np.asarray(v_ref, dtype=float).reshape(-1, 2)
    n = len(v)
    P = np.zeros((2 * n, 2 * n))
    for k in range(n):
        P[2 * k:2 * k + 2, 2 * k:2 * k + 2] = projector_from(v[k])
    return P


@dataclass(frozen=True)
class ControllerGains:
    """Per-node amplitude gains ``gamma`` and frequency gains ``alpha`` (1/s)."""

    gamma: np.ndarray
    alpha: np.ndarray

    def __init__(self, gamma, alpha, n: int | None = None):
        gamma = np.atleast_1d(np.asarray(gamma, dtype=float))
        alpha = np.atleast_1d(np.asarray(alpha, dtype=float))
        if n is not None:
            gamma = np.broadcast_to(gamma, (n,)).copy()
            alpha = np.broadcast_to(alpha, (n,)).copy()
        if gamma.shape != alpha.shape:
            raise ValueError("gamma and alpha must have one entry per node")
        if np.any(gamma <= 0):
            raise ValueError("amplitude gain gamma must be positive")
        if np.any(alpha <= 0):
            raise ValueError("frequency gain alpha must be positive")
        gamma.flags.writeable = False
        alpha.flags.writeable = False
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "alpha", alpha)

    @property
    def gamma_max(self) -> float:
        return float(self.gamma.max())

    @property
    def alpha_max(self) -> float:
        return float(self.alpha.max())


@dataclass(frozen=True)
class Setpoints:
    """Desired amplitudes/angles and the network steady state they induce.

    Build with :meth:`derive`; the voltage reference is always obtained from
    the network as ``v*_dq = L^{-1} u*_dq``, never supplied directly.
    """

    r_star: np.ndarray
    theta0_star: np.ndarray
    omega_star: float
    u_dq: np.ndarray
    v_dq: np.ndarray
    i_dq: np.ndarray
    L: np.ndarray

    @classmethod
    def derive(cls, spec: NetworkSpec, r_star, theta0_star, omega_star: float) -> "Setpoints":
        n = spec.n
        r_star = np.broadcast_to(np.asarray(r_star, dtype=float), (n,)).copy()
        if np.any(r_star <= 0):
            raise ValueError("reference amplitude r* must be positive")
        theta0 = wrap_angle(np.broadcast_to(np.asarray(theta0_star, dtype=float), (n,)))
        u = np.column_stack([r_star * np.cos(theta0), r_star * np.sin(theta0)]).ravel()
        v, i = solve_steady_state(u, spec, omega_star)
        Z_G, Z_O = build_impedances(spec, omega_star)
        L = network_impedance_L(Z_G, Z_O, extend_planar(build_incidence(spec)))
        arrays = dict(r_star=r_star, theta0_star=theta0, u_dq=u, v_dq=v, i_dq=i, L=L)
        for a in arrays.values():
            a.flags.writeable = False
        return cls(omega_star=float(omega_star), **arrays)

    @property
    def n(self) -> int:
        return len(self.r_star)

    @property
    def projector_dq(self) -> np.ndarray:
        """Block-diagonal voltage projector used by the controller (dq frame)."""
        return block_projector(self.v_dq)

    @property
    def projector_u(self) -> np.ndarray:
        """Full projector onto the orthogonal complement of ``u*_dq``."""
        return projector_from(self.u_dq)

    @cached_property
    def v_unit(self) -> np.ndarray:
        """Per-node unit vectors along ``v*_dq``, shape ``(n, 2)``."""
        v = self.v_dq.reshape(-1, 2)
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    def reference_angle(self, t: float = 0.0, frame: str = ALPHABETA) -> np.ndarray:
        _check_frame(frame)
        return self.theta0_star + (self.omega_star * t if frame == ALPHABETA else 0.0)


def _as_nodes(x, n):
    x = np.asarray(x, dtype=float)
    return x.reshape(x.shape[:-1] + (n, 2))


def polar_angle(u_nodes, fallback):
    """Per-node angle of ``u`` (shape ``(..., n, 2)``); ``fallback`` where ``u_k = 0``."""
    th = np.arctan2(u_nodes[..., 1], u_nodes[..., 0])
    return np.where((u_nodes[..., 0] == 0) & (u_nodes[..., 1] == 0), fallback, th)


def controller_rhs(u, v_c, sp: Setpoints, g: ControllerGains, t: float = 0.0,
                   frame: str = DQ) -> np.ndarray:
    """Time derivative of the stacked converter currents.

    ``u`` and ``v_c`` are stacked planar vectors (length ``2n``), optionally
    with leading batch axes. In the alphabeta frame the voltage projector
    follows the rotating reference ``v*_c(t) = R(omega* t)^T v*_dq``.
    """
    _check_frame(frame)
    n = sp.n
    uu = _as_nodes(u, n)
    vv = _as_nodes(v_c, n)
    theta_ref = sp.reference_angle(t, frame)
    r = np.hypot(uu[..., 0], uu[..., 1])
    theta = polar_angle(uu, theta_ref)
    lam = amplitude_fn(r, sp.r_star, g.gamma)
    w = frequency_fn(theta, theta_ref, g.alpha, sp.omega_star, frame)
    e = sp.v_unit
    if frame == ALPHABETA:
        c, s = np.cos(sp.omega_star * t), np.sin(sp.omega_star * t)
        e = np.column_stack([c * e[:, 0] - s * e[:, 1], s * e[:, 0] + c * e[:, 1]])
    Ju = np.stack([-uu[..., 1], uu[..., 0]], axis=-1)
    proj_v = vv - np.sum(vv * e, axis=-1, keepdims=True) * e
    du = -lam[..., None] * uu - w[..., None] * Ju - proj_v
    return du.reshape(np.shape(u))


def polar_rhs(r, theta, sp: Setpoints, g: ControllerGains, t: float = 0.0):
    """Decoupled oscillator (``v_c = 0``) in polar coordinates, alphabeta frame.

    Returns ``(dr/dt, dtheta/dt)`` with ``dr/dt = -r lambda`` and
    ``dtheta/dt = omega* - alpha wrap(theta - theta*(t))``.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("polar form requires r > 0")
    theta_ref = sp.reference_angle(t, ALPHABETA)
    dr = -r * amplitude_fn(r, sp.r_star, g.gamma)
    dtheta = -frequency_fn(theta, theta_ref, g.alpha, sp.omega_star, ALPHABETA)
    return dr, dtheta


__all__ = [
    "ALPHABETA", "DQ", "FRAMES", "wrap_angle", "amplitude_fn", "frequency_fn",
    "projector_from", "block_projector", "ControllerGains", "Setpoints",
    "polar_angle", "controller_rhs", "polar_rhs",
]
