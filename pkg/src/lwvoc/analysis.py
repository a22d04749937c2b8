"""Stability certificates and trajectory diagnostics for the reduced dq model."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .controller import (ALPHABETA, DQ, ControllerGains, Setpoints, polar_angle, projector_from,
                         wrap_angle)
from .dynamics import Trajectory, line_time_constant, rotate_samples
from .network import J2, NetworkSpec, solve_steady_state

DEFAULT_TAU_STAR = 1e-3


@dataclass
class StabilityReport:
    """Certificate quantities; times in s, rates in 1/s."""

    tau: float
    tau_star: float
    eps: float
    xi1: float
    xi2: float
    beta1: float
    beta2: float
    zeta: float
    gamma_max: float
    alpha_max: float
    alpha_star: float
    eps_bound: float
    assumption1_ok: bool
    alpha_gain_ok: bool
    amplitude_gain_ok: bool
    time_scale_ok: bool

    @property
    def condition1_ok(self) -> bool:
        return self.alpha_gain_ok and self.amplitude_gain_ok and self.time_scale_ok

    @property
    def all_ok(self) -> bool:
        return self.assumption1_ok and self.condition1_ok

    def as_dict(self) -> dict:
        d = asdict(self)
        d["condition1_ok"] = self.condition1_ok
        d["all_ok"] = self.all_ok
        return d


def check_assumption1(spec: NetworkSpec, omega: float, tau_star: float = DEFAULT_TAU_STAR):
    """Worst line time constant against the time-scale bound ``tau_star``."""
    if tau_star <= 0:
        raise ValueError("tau_star must be positive")
    tau = line_time_constant(spec, omega)
    return tau, tau < tau_star


def node_time_constant(spec: NetworkSpec, omega: float) -> float:
    """Largest ``C / sqrt(C^2 omega^2 + G^2)`` over the nodes."""
    return float(np.max(spec.C / np.sqrt(spec.C ** 2 * omega ** 2 + spec.G ** 2)))


def range_basis(P: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Orthonormal basis of ``range(P)`` from an SVD."""
    U, s, _ = np.linalg.svd(P)
    rank = int(np.sum(s > tol * max(1.0, s[0])))
    return U[:, :rank]


def amplitude_gain_matrix(sp: Setpoints, gamma_max: float) -> np.ndarray:
    """Symmetrised ``Pi (gamma_max I - Pi_dq L^-1) + (.)^T Pi``."""
    Pi = sp.projector_u
    X = gamma_max * np.eye(2 * sp.n) - sp.projector_dq @ np.linalg.inv(sp.L)
    return Pi @ X + X.T @ Pi


def compute_xi1(sp: Setpoints, gamma_max: float) -> float:
    """Largest ``xi1`` with ``M <= -xi1 Pi`` on ``range(Pi)``."""
    P = range_basis(sp.projector_u)
    if P.shape[1] != 2 * sp.n - 1:
        raise ArithmeticError("projector basis is rank deficient")
    M = amplitude_gain_matrix(sp, gamma_max)
    return float(-np.linalg.eigvalsh(P.T @ M @ P).max())


def alpha_star_blocks(sp: Setpoints, g: ControllerGains, k: int, alpha: float, delta: float,
                      ratio: float = 1.0):
    """Per-node matrices ``(D1_k, D2_k)`` of the angle-term bound.

    Diagonal blocks of ``M1 + M1^T - (P* M1 + M1^T P*)`` and
    ``P* M2 + M2^T P*`` with ``P* = u* u*^T / |u*|^2``, ``M1 = gamma r/r* I``
    and ``M2 = alpha delta J2`` at node ``k``; ``ratio`` is ``r_k / r*_k``.
    """
    q = sp.r_star[k] ** 2 / float(sp.u_dq @ sp.u_dq)
    th = sp.theta0_star[k]
    c, s = math.cos(th), math.sin(th)
    gam = g.gamma[k]
    ee = np.array([[c * c, c * s], [c * s, s * s]])
    D1 = 2 * gam * ratio * (np.eye(2) - q * ee)
    D2 = alpha * delta * q * np.array([[2 * s * c, s * s - c * c], [s * s - c * c, -2 * s * c]])
    return D1, D2


def _alpha_ok(sp, g, k, alpha, tol=0.0):
    for delta in (-math.pi, math.pi):
        D1, D2 = alpha_star_blocks(sp, g, k, alpha, delta)
        if np.linalg.eigvalsh(D1 - D2).min() < -tol:
            return False
    return True


def compute_alpha_star(sp: Setpoints, g: ControllerGains, rtol: float = 1e-6) -> float:
    """Largest frequency gain keeping every ``D1_k - D2_k`` positive semidefinite.

    The angle deviation ranges over ``[-pi, pi]``; the blocks are affine in
    it, so the two end points decide. Bisection per node, minimum over nodes.
    """
    best = math.inf
    for k in range(sp.n):
        scale = 2 * g.gamma[k]
        tol = 1e-12 * scale
        if not _alpha_ok(sp, g, k, 1e-12 * scale, tol):
            return 0.0
        lo, hi = 0.0, scale
        while _alpha_ok(sp, g, k, hi, tol):
            lo, hi = hi, 2 * hi
            if hi > 1e12 * scale:
                break
        while hi - lo > rtol * hi:
            mid = 0.5 * (lo + hi)
            if _alpha_ok(sp, g, k, mid, tol):
                lo = mid
            else:
                hi = mid
        best = min(best, lo)
    return float(best)


def alpha_star_closed_form(sp: Setpoints, g: ControllerGains) -> float:
    """``min_k 2 gamma_k sqrt(1 - q_k) / (pi q_k)`` with ``q_k = r*_k^2 / |u*|^2``."""
    q = sp.r_star ** 2 / float(sp.u_dq @ sp.u_dq)
    return float(np.min(2 * g.gamma * np.sqrt(np.clip(1 - q, 0, None)) / (np.pi * q)))


def compute_condition1(spec: NetworkSpec, sp: Setpoints, g: ControllerGains,
                       omega: float | None = None, tau_star: float = DEFAULT_TAU_STAR
                       ) -> StabilityReport:
    omega = sp.omega_star if omega is None else omega
    L = sp.L
    L_inv = np.linalg.inv(L)
    xi2 = float(np.linalg.eigvalsh(L + L.T).min())
    zeta = float(np.linalg.norm(L_inv, 2))
    gmax = g.gamma_max
    beta1 = 1.0
    beta2 = zeta ** 2 + gmax * zeta
    xi1 = compute_xi1(sp, gmax)
    eps = node_time_constant(spec, omega)
    # the bound needs xi1 > 0; otherwise it is reported as 0 so that the
    # printed inequality eps < rhs fails exactly when the flag does
    eps_bound = xi1 * xi2 / (xi1 * zeta + beta1 * beta2) if xi1 > 0 else 0.0
    alpha_star = compute_alpha_star(sp, g)
    tau, a1 = check_assumption1(spec, omega, tau_star)
    return StabilityReport(
        tau=tau, tau_star=tau_star, eps=eps, xi1=xi1, xi2=xi2, beta1=beta1, beta2=beta2,
        zeta=zeta, gamma_max=gmax, alpha_max=g.alpha_max, alpha_star=alpha_star,
        eps_bound=eps_bound, assumption1_ok=bool(a1),
        alpha_gain_ok=bool(g.alpha_max < alpha_star), amplitude_gain_ok=bool(xi1 > 0),
        time_scale_ok=bool(eps < eps_bound),
    )


def mixing_weight(report: StabilityReport) -> float:
    """Weight ``d = beta1 / (beta1 + beta2)`` for the composite function ``W``."""
    return report.beta1 / (report.beta1 + report.beta2)


def step2_matrix(report: StabilityReport, d: float) -> np.ndarray:
    """Quadratic form bounding the derivative of ``W`` in (distance, |y|)."""
    off = -0.5 * (1 - d) * report.beta1 - 0.5 * d * report.beta2
    return np.array([[-2 * (1 - d) * report.xi1, off],
                     [off, -d * (report.xi2 / report.eps - report.zeta)]])


@dataclass
class ConditionSample:
    """Outcome of :func:`sample_condition1_sets`."""

    accepted: list
    draws: int


def random_parameter_set(rng: np.random.Generator, omega: float = 2 * math.pi * 50):
    """One random chain or ring network with setpoints and gains.

    Node count 2..4, capacitance 1e-4..1e-2 F (log-uniform), conductance
    0.2..2 S, line resistance 0.05..1 Ohm, line inductance 1e-6..1e-4 H,
    gamma 1e-3..1 and alpha up to the gamma value.
    """
    n = int(rng.integers(2, 5))
    edges = [(k, k + 1) for k in range(1, n)]
    if n > 2 and rng.random() < 0.5:
        edges.append((n, 1))
    m = len(edges)
    spec = NetworkSpec(n, edges, C=10 ** rng.uniform(-4, -2, n), G=rng.uniform(0.2, 2, n),
                       R_O=rng.uniform(0.05, 1, m), L_O=10 ** rng.uniform(-6, -4, m))
    sp = Setpoints.derive(spec, rng.uniform(5, 30, n), rng.uniform(-np.pi, np.pi, n), omega)
    gamma = 10 ** rng.uniform(-3, 0)
    g = ControllerGains(gamma, gamma * rng.uniform(1e-3, 1), n)
    return spec, sp, g


def sample_condition1_sets(count: int, rng: np.random.Generator, max_draws: int = 2000
                           ) -> ConditionSample:
    """Rejection-sample up to ``count`` parameter sets passing Condition 1."""
    accepted = []
    draws = 0
    while len(accepted) < count and draws < max_draws:
        draws += 1
        spec, sp, g = random_parameter_set(rng)
        if compute_condition1(spec, sp, g).condition1_ok:
            accepted.append((spec, sp, g))
    return ConditionSample(accepted, draws)


@dataclass
class OriginLinearization:
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    unstable_count: int

    @property
    def lemma2_holds(self) -> bool:
        return self.unstable_count >= 2


def jacobian_at_origin(spec: NetworkSpec, sp: Setpoints, g: ControllerGains) -> OriginLinearization:
    """``blockdiag(gamma_k I2 + alpha_k theta*_k J2) - Pi_dq L^-1`` and its spectrum."""
    A = np.zeros((2 * sp.n, 2 * sp.n))
    for k in range(sp.n):
        A[2 * k:2 * k + 2, 2 * k:2 * k + 2] = g.gamma[k] * np.eye(2) + g.alpha[k] * sp.theta0_star[k] * J2
    Jac = A - sp.projector_dq @ np.linalg.inv(sp.L)
    ev = np.linalg.eigvals(Jac)
    return OriginLinearization(Jac, ev, int(np.sum(ev.real > 0)))


def directional_jacobians(sp: Setpoints, g: ControllerGains, rays: int = 8, seed: int = 0):
    """Linearisations at the origin approached along random directions.

    The angle feedback is discontinuous at ``u = 0``; along a ray with
    per-node angles ``phi_k`` it contributes ``-alpha_k wrap(phi_k - theta*_k) J2``.
    """
    rng = np.random.default_rng(seed)
    M = sp.projector_dq @ np.linalg.inv(sp.L)
    out = []
    for _ in range(rays):
        phi = rng.uniform(-np.pi, np.pi, sp.n)
        A = np.zeros_like(M)
        for k in range(sp.n):
            w = g.alpha[k] * wrap_angle(phi[k] - sp.theta0_star[k])
            A[2 * k:2 * k + 2, 2 * k:2 * k + 2] = g.gamma[k] * np.eye(2) - w * J2
        ev = np.linalg.eigvals(A - M)
        out.append(OriginLinearization(A - M, ev, int(np.sum(ev.real > 0))))
    return out


def lyapunov_values(u_dq, v_dq, sp: Setpoints, d: float = 0.5):
    """``(V1, Z, V2, W)`` at a dq state; batch axes allowed in front.

    ``V1 = u^T Pi u``, ``Z = 1/2 sum (1 - r_k/r*_k)^2``,
    ``V2 = 1/2 y^T y`` with ``y = v - L^{-1} u``, ``W = (1-d) V1 + d V2``.
    """
    if not 0 < d < 1:
        raise ValueError("mixing weight d must lie in (0, 1)")
    u = np.asarray(u_dq, dtype=float)
    v = np.asarray(v_dq, dtype=float)
    ustar = sp.u_dq / np.linalg.norm(sp.u_dq)
    V1 = np.sum(u * u, axis=-1) - (u @ ustar) ** 2
    uu = u.reshape(u.shape[:-1] + (-1, 2))
    r = np.hypot(uu[..., 0], uu[..., 1])
    Z = 0.5 * np.sum((1 - r / sp.r_star) ** 2, axis=-1)
    y = v - u @ np.linalg.inv(sp.L).T
    V2 = 0.5 * np.sum(y * y, axis=-1)
    return V1, Z, V2, (1 - d) * V1 + d * V2


def dist_to_Su(u_dq, sp: Setpoints):
    """Distance to the two-point set ``{u*_dq, -u*_dq}``."""
    u = np.asarray(u_dq, dtype=float)
    return np.minimum(np.linalg.norm(u - sp.u_dq, axis=-1), np.linalg.norm(u + sp.u_dq, axis=-1))


@dataclass
class DroopSample:
    """Per-node power quantities; arrays of shape ``(..., n)``."""

    P: np.ndarray
    Q: np.ndarray
    P_ref: np.ndarray
    Q_ref: np.ndarray
    r: np.ndarray
    theta: np.ndarray
    t: float | np.ndarray = 0.0


def _nodes(x, n):
    x = np.asarray(x, dtype=float)
    return x.reshape(x.shape[:-1] + (n, 2))


def _reference_dirs(sp: Setpoints, t, frame):
    """Unit voltage references, shape ``(n, 2)`` or ``(len(t), n, 2)``."""
    e = sp.v_unit
    if frame == DQ:
        return e
    t = np.asarray(t, dtype=float)
    return rotate_samples(np.atleast_1d(t), np.broadcast_to(e.ravel(), (np.size(t), 2 * sp.n)),
                          sp.omega_star, inverse=True).reshape(np.shape(t) + (sp.n, 2))


def _theta_ref(sp: Setpoints, t, frame):
    """Reference angles broadcastable against ``(..., n)`` for scalar or sampled ``t``."""
    if frame == DQ:
        return sp.theta0_star
    t = np.asarray(t, dtype=float)
    return sp.theta0_star + sp.omega_star * t[..., None]


def droop_quantities(u, v_c, sp: Setpoints, frame: str = ALPHABETA, t=0.0) -> DroopSample:
    """``P = u^T v``, ``Q = u^T J2 v`` and their components along ``v*``."""
    n = sp.n
    uu, vv = _nodes(u, n), _nodes(v_c, n)
    e = _reference_dirs(sp, t, frame)
    Ju = np.stack([-uu[..., 1], uu[..., 0]], axis=-1)
    ve = np.sum(vv * e, axis=-1)
    P = np.sum(uu * vv, axis=-1)
    # u^T J2 v = -(J2 u)^T v
    Q = -np.sum(Ju * vv, axis=-1)
    P_ref = np.sum(uu * e, axis=-1) * ve
    Q_ref = -np.sum(Ju * e, axis=-1) * ve
    r = np.hypot(uu[..., 0], uu[..., 1])
    theta = polar_angle(uu, _theta_ref(sp, t, frame))
    return DroopSample(P, Q, P_ref, Q_ref, r, theta, t)


@dataclass
class DroopResidual:
    """Maximum absolute residuals of the amplitude and angle droop identities."""

    amplitude: np.ndarray
    angle: np.ndarray
    amplitude_scale: np.ndarray
    angle_scale: np.ndarray
    skipped: int = 0
    flagged_nodes: list = field(default_factory=list)

    @property
    def amplitude_rel(self) -> np.ndarray:
        return self.amplitude / self.amplitude_scale

    @property
    def angle_rel(self) -> np.ndarray:
        return self.angle / self.angle_scale


def droop_rates(u, v_c, sp: Setpoints, g: ControllerGains, t):
    """Right-hand sides of the amplitude and angle droop identities (alphabeta).

    ``dr/dt = -gamma r (r/r* - 1) + (-P + P_ref) / r`` and
    ``dtheta/dt = omega* - alpha wrap(theta - theta*) + (Q - Q_ref) / r^2``.
    """
    ds = droop_quantities(u, v_c, sp, ALPHABETA, t)
    r = ds.r
    theta_ref = _theta_ref(sp, t, ALPHABETA)
    dr = -g.gamma * r * (r / sp.r_star - 1) + (-ds.P + ds.P_ref) / r
    dth = sp.omega_star - g.alpha * wrap_angle(ds.theta - theta_ref) + (ds.Q - ds.Q_ref) / r ** 2
    return dr, dth, ds


def verify_droop_identity(traj: Trajectory, sp: Setpoints, g: ControllerGains,
                          r_floor: float = 1e-6) -> DroopResidual:
    """Compare central-difference ``dr/dt``, ``dtheta/dt`` with the droop identities.

    Samples where ``r_k < r_floor * r*_k`` are skipped (identity undefined).
    """
    if traj.frame != ALPHABETA:
        raise ValueError("droop identities are checked on alphabeta trajectories")
    if len(traj) < 3:
        raise ValueError("need at least three samples")
    t = traj.t
    h = t[1] - t[0]
    uu = _nodes(traj.u, sp.n)
    r = np.hypot(uu[..., 0], uu[..., 1])
    theta = np.unwrap(np.arctan2(uu[..., 1], uu[..., 0]), axis=0)
    dr_fd = (r[2:] - r[:-2]) / (2 * h)
    dth_fd = (theta[2:] - theta[:-2]) / (2 * h)
    dr, dth, _ = droop_rates(traj.u[1:-1], traj.v[1:-1], sp, g, t[1:-1])
    ok = np.all(r >= r_floor * sp.r_star, axis=-1)
    mask = ok[1:-1] & ok[:-2] & ok[2:]
    skipped = int(np.sum(~mask))
    if not mask.any():
        raise ValueError("amplitude below floor at every sample")
    res_r = np.abs(dr_fd - dr)[mask].max(axis=0)
    res_th = np.abs(dth_fd - dth)[mask].max(axis=0)
    scale_r = np.maximum(np.abs(dr[mask]).max(axis=0), g.gamma * sp.r_star)
    scale_th = np.maximum(np.abs(dth[mask]).max(axis=0), sp.omega_star)
    flagged = sorted({int(k) + 1 for k in np.nonzero(~np.all(r >= r_floor * sp.r_star, axis=0))[0]})
    return DroopResidual(res_r, res_th, scale_r, scale_th, skipped, flagged)


__all__ = [
    "DEFAULT_TAU_STAR", "StabilityReport", "solve_steady_state", "check_assumption1",
    "node_time_constant", "range_basis", "amplitude_gain_matrix", "compute_xi1",
    "alpha_star_blocks", "compute_alpha_star", "alpha_star_closed_form", "compute_condition1",
    "mixing_weight", "step2_matrix", "ConditionSample", "random_parameter_set",
    "sample_condition1_sets", "OriginLinearization", "jacobian_at_origin",
    "directional_jacobians", "lyapunov_values", "dist_to_Su", "DroopSample",
    "droop_quantities", "DroopResidual", "droop_rates", "verify_droop_identity",
    "projector_from",
]
