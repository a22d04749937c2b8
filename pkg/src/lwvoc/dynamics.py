"""Closed-loop models, frame transforms and a fixed-step RK4 integrator.

Three model fidelities share one flat state layout ``[u, v, i]``:

``alphabeta``
    full model in the stationary frame (controller + capacitors + lines);
``dq``
    the same model in the frame rotating at ``omega*``;
``reduced``
    dq model with line currents on their quasi-steady value
    ``i = Z_O^{-1} B^T v``, so ``C dv/dt = -L v + u`` and ``i`` is absent.

A fourth kind, ``decoupled``, integrates only the oscillators with
``v_c = 0`` (alphabeta frame); its ``v`` slot is carried but frozen.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .controller import ALPHABETA, DQ, ControllerGains, Setpoints, controller_rhs
from .network import (NetworkSpec, build_impedances, build_incidence, extend_planar,
                      network_impedance_L, rotation)

MODEL_KINDS = ("alphabeta", "dq", "reduced", "decoupled")
DEFAULT_STRIDE = 20
DEFAULT_DT = {"alphabeta": 1e-6, "dq": 1e-6, "reduced": 1e-5, "decoupled": 1e-5}


class IntegrationDiverged(RuntimeError):
    def __init__(self, last_good_time: float):
        super().__init__(f"non-finite state after t = {last_good_time:.9g} s")
        self.last_good_time = last_good_time


@dataclass
class SystemState:
    """Stacked planar state; arrays may carry leading batch axes."""

    u: np.ndarray
    v: np.ndarray
    i: np.ndarray | None = None
    frame: str = DQ
    t: float = 0.0

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        self.v = np.asarray(self.v, dtype=float)
        if self.i is not None:
            self.i = np.asarray(self.i, dtype=float)
        if self.frame not in (ALPHABETA, DQ):
            raise ValueError(f"unknown frame {self.frame!r}")
        if self.u.shape != self.v.shape:
            raise ValueError(f"u and v shapes differ: {self.u.shape} vs {self.v.shape}")

    @property
    def n(self) -> int:
        return self.u.shape[-1] // 2

    def flat(self) -> np.ndarray:
        parts = [self.u, self.v] + ([self.i] if self.i is not None else [])
        return np.concatenate(parts, axis=-1)

    @classmethod
    def from_flat(cls, x, n: int, m: int | None, frame: str, t: float) -> "SystemState":
        x = np.asarray(x)
        i = x[..., 4 * n:4 * n + 2 * m] if m is not None else None
        return cls(x[..., :2 * n], x[..., 2 * n:4 * n], i, frame, t)


@dataclass
class Trajectory:
    """Samples of a run at a uniform output stride."""

    t: np.ndarray
    x: np.ndarray
    n: int
    m: int | None
    frame: str
    model: str
    dt: float
    stride: int
    scenario_id: str = ""
    final: SystemState | None = None
    steps: int = 0

    @property
    def u(self) -> np.ndarray:
        return self.x[..., :2 * self.n]

    @property
    def v(self) -> np.ndarray:
        return self.x[..., 2 * self.n:4 * self.n]

    @property
    def i(self) -> np.ndarray | None:
        if self.m is None:
            return None
        return self.x[..., 4 * self.n:4 * self.n + 2 * self.m]

    def state(self, k: int) -> SystemState:
        return SystemState.from_flat(self.x[k], self.n, self.m, self.frame, float(self.t[k]))

    def __len__(self) -> int:
        return len(self.t)


@dataclass
class Model:
    """A right-hand side plus what the compiled integrator needs to rebuild it.

    ``A`` and ``in_scale`` describe the linear network part
    ``d[v; i]/dt = A [v; i] + in_scale * u``.
    """

    kind: str
    frame: str
    n: int
    m: int | None
    rhs: Callable[[float, np.ndarray], np.ndarray] = field(repr=False)
    sp: Setpoints | None = field(default=None, repr=False)
    gains: ControllerGains | None = field(default=None, repr=False)
    A: np.ndarray | None = field(default=None, repr=False)
    in_scale: np.ndarray | None = field(default=None, repr=False)


def _line_blocks(spec: NetworkSpec, omega: float):
    Z_G, Z_O = build_impedances(spec, omega)
    B = extend_planar(build_incidence(spec))
    inv_C = np.repeat(1.0 / spec.C, 2)
    inv_L = np.repeat(1.0 / spec.L_O, 2)
    return Z_G, Z_O, B, inv_C, inv_L


def build_model(kind: str, spec: NetworkSpec, sp: Setpoints, g: ControllerGains) -> Model:
    """Right-hand side for one model fidelity.

    ``sp`` holds the controller references; it may come from a different
    (nominal) network than ``spec``, as after a load step.
    """
    n, m = spec.n, spec.m
    if kind not in MODEL_KINDS:
        raise ValueError(f"model kind must be one of {MODEL_KINDS}, got {kind!r}")
    if sp.n != n:
        raise ValueError(f"setpoints have {sp.n} nodes, network has {n}")

    if kind in ("alphabeta", "dq"):
        omega = sp.omega_star if kind == "dq" else 0.0
        frame = DQ if kind == "dq" else ALPHABETA
        Z_G, Z_O, B, inv_C, inv_L = _line_blocks(spec, omega)
        # d[v; i]/dt = A [v; i] + [u / C; 0]
        A = np.block([[-inv_C[:, None] * Z_G, -inv_C[:, None] * B],
                      [inv_L[:, None] * B.T, -inv_L[:, None] * Z_O]])
        At = A.T.copy()

        def rhs(t, x):
            u = x[..., :2 * n]
            vi = x[..., 2 * n:]
            du = controller_rhs(u, x[..., 2 * n:4 * n], sp, g, t, frame)
            dvi = vi @ At
            dvi[..., :2 * n] += u * inv_C
            return np.concatenate([du, dvi], axis=-1)

        return Model(kind, frame, n, m, rhs, sp, g, A, inv_C)

    if kind == "reduced":
        Z_G, Z_O = build_impedances(spec, sp.omega_star)
        L = network_impedance_L(Z_G, Z_O, extend_planar(build_incidence(spec)))
        inv_C = np.repeat(1.0 / spec.C, 2)
        A = -inv_C[:, None] * L
        At = A.T.copy()

        def rhs(t, x):
            u = x[..., :2 * n]
            v = x[..., 2 * n:]
            du = controller_rhs(u, v, sp, g, t, DQ)
            return np.concatenate([du, v @ At + u * inv_C], axis=-1)

        return Model(kind, DQ, n, None, rhs, sp, g, A, inv_C)

    zero = np.zeros(2 * n)

    def rhs(t, x):
        u = x[..., :2 * n]
        du = controller_rhs(u, zero, sp, g, t, ALPHABETA)
        return np.concatenate([du, np.zeros_like(u)], axis=-1)

    return Model(kind, ALPHABETA, n, None, rhs, sp, g, np.zeros((2 * n, 2 * n)), np.zeros(2 * n))


def _state_derivative(kind, s: SystemState, spec, sp, g) -> SystemState:
    model = build_model(kind, spec, sp, g)
    if s.frame != model.frame:
        raise ValueError(f"{kind} model expects a {model.frame} state, got {s.frame}")
    if s.n != spec.n:
        raise ValueError(f"state has {s.n} nodes, network has {spec.n}")
    if model.m is not None and (s.i is None or s.i.shape[-1] != 2 * spec.m):
        raise ValueError(f"{kind} model needs line currents of length {2 * spec.m}")
    if model.m is None and s.i is not None:
        raise ValueError(f"{kind} model has no line currents")
    dx = model.rhs(s.t, s.flat())
    return SystemState.from_flat(dx, spec.n, model.m, s.frame, s.t)


def full_rhs_alphabeta(s: SystemState, spec, sp, g) -> SystemState:
    """Derivative of the full stationary-frame model."""
    return _state_derivative("alphabeta", s, spec, sp, g)


def full_rhs_dq(s: SystemState, spec, sp, g) -> SystemState:
    """Derivative of the full rotating-frame model."""
    return _state_derivative("dq", s, spec, sp, g)


def reduced_rhs(s: SystemState, spec, sp, g) -> SystemState:
    """Derivative of the reduced (quasi-steady lines) rotating-frame model."""
    return _state_derivative("reduced", s, spec, sp, g)


def boundary_layer_rhs(y, A) -> np.ndarray:
    return -(np.asarray(A) @ np.asarray(y))


def _rotate_stacked(x, R):
    x = np.asarray(x, dtype=float)
    xx = x.reshape(x.shape[:-1] + (-1, 2))
    return (xx @ R.T).reshape(x.shape)


def to_dq(s: SystemState, omega: float) -> SystemState:
    """Rotate every planar sub-vector by ``R(omega t)``."""
    if s.frame != ALPHABETA:
        raise ValueError("to_dq expects an alphabeta state")
    R = rotation(omega * s.t)
    i = None if s.i is None else _rotate_stacked(s.i, R)
    return SystemState(_rotate_stacked(s.u, R), _rotate_stacked(s.v, R), i, DQ, s.t)


def from_dq(s: SystemState, omega: float) -> SystemState:
    if s.frame != DQ:
        raise ValueError("from_dq expects a dq state")
    R = rotation(omega * s.t).T
    i = None if s.i is None else _rotate_stacked(s.i, R)
    return SystemState(_rotate_stacked(s.u, R), _rotate_stacked(s.v, R), i, ALPHABETA, s.t)


def rotate_samples(t, x, omega: float, inverse: bool = False) -> np.ndarray:
    """Apply ``R(omega t_k)`` (or its transpose) to every planar pair of sample ``x[k]``."""
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    c = np.cos(omega * t)
    s = np.sin(omega * t)
    if inverse:
        s = -s
    shape = (len(t),) + (1,) * (x.ndim - 2) + (1,)
    c = c.reshape(shape)
    s = s.reshape(shape)
    xx = x.reshape(x.shape[:-1] + (-1, 2))
    a, b = xx[..., 0], xx[..., 1]
    out = np.stack([c * a + s * b, -s * a + c * b], axis=-1)
    return out.reshape(x.shape)


def trajectory_to_alphabeta(traj: Trajectory, omega: float) -> Trajectory:
    if traj.frame == ALPHABETA:
        return traj
    x = rotate_samples(traj.t, traj.x, omega, inverse=True)
    final = None
    if traj.final is not None:
        final = from_dq(traj.final, omega)
    return Trajectory(traj.t, x, traj.n, traj.m, ALPHABETA, traj.model, traj.dt,
                      traj.stride, traj.scenario_id, final, traj.steps)


def trajectory_to_dq(traj: Trajectory, omega: float) -> Trajectory:
    if traj.frame == DQ:
        return traj
    x = rotate_samples(traj.t, traj.x, omega)
    final = None if traj.final is None else to_dq(traj.final, omega)
    return Trajectory(traj.t, x, traj.n, traj.m, DQ, traj.model, traj.dt,
                      traj.stride, traj.scenario_id, final, traj.steps)


def _step_count(span: float, dt: float) -> int:
    steps = span / dt
    k = int(round(steps))
    if abs(steps - k) > 1e-6 * max(1.0, steps):
        raise ValueError(f"interval {span!r} is not a whole number of steps of {dt!r}")
    return k


def _rk4(segments, x0, t0, dt, stride):
    """Run consecutive ``(rhs, steps)`` segments on one global step grid."""
    total = sum(k for _, k in segments)
    n_out = total // stride + 1
    x = np.array(x0, dtype=float)
    out = np.empty((n_out,) + x.shape)
    out[0] = x
    j = 0
    done = 0
    h = dt
    for f, steps in segments:
        for _ in range(steps):
            t = t0 + done * h
            k1 = f(t, x)
            k2 = f(t + 0.5 * h, x + 0.5 * h * k1)
            k3 = f(t + 0.5 * h, x + 0.5 * h * k2)
            k4 = f(t + h, x + h * k3)
            x_new = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            if not np.isfinite(x_new).all():
                raise IntegrationDiverged(t)
            x = x_new
            done += 1
            if done % stride == 0:
                j += 1
                out[j] = x
    times = t0 + dt * stride * np.arange(n_out)
    return times, out, x, done


def _compiled_ok(models) -> bool:
    first = models[0]
    return all(m.A is not None and m.sp is first.sp and m.gains is first.gains for m in models)


def _rk4_compiled(models, steps, x0, t0, dt, stride):
    from ._kernels import rk4_run

    first = models[0]
    sp, g = first.sp, first.gains
    seg_A = np.ascontiguousarray(np.stack([m.A for m in models]), dtype=float)
    seg_steps = np.asarray(steps, dtype=np.int64)
    total = int(seg_steps.sum())
    n_out = total // stride + 1
    x0 = np.asarray(x0, dtype=float)
    batch = x0.reshape(-1, x0.shape[-1])
    out = np.empty((n_out,) + batch.shape)
    finals = np.empty_like(batch)
    done = total
    buf = np.empty((n_out, batch.shape[-1]))
    for b in range(batch.shape[0]):
        k, diverged = rk4_run(batch[b].copy(), t0, dt, stride, seg_steps, seg_A, first.n,
                              first.frame == ALPHABETA, first.kind == "decoupled",
                              sp.r_star, sp.theta0_star, g.gamma, g.alpha, sp.omega_star,
                              np.ascontiguousarray(sp.v_unit), first.in_scale, buf)
        if diverged:
            raise IntegrationDiverged(t0 + k * dt)
        out[:, b] = buf
        finals[b] = buf[-1] if total % stride == 0 else np.nan
        done = k
    out = out.reshape((n_out,) + x0.shape)
    times = t0 + dt * stride * np.arange(n_out)
    x_final = finals.reshape(x0.shape)
    if total % stride:
        # final state is off the sample grid; recompute it from the last sample
        tail = total - (n_out - 1) * stride
        last_models, last_steps = _tail_segments(models, steps, total - tail)
        _, _, x_final, _ = _rk4_compiled(last_models, last_steps, out[-1], times[-1], dt, tail)
    return times, out, x_final, done


def _tail_segments(models, steps, skip):
    """Segments remaining after the first ``skip`` steps."""
    out_m, out_s = [], []
    for m, k in zip(models, steps):
        if skip >= k:
            skip -= k
            continue
        out_m.append(m)
        out_s.append(k - skip)
        skip = 0
    return out_m, out_s


def integrate(model: Model, x0: SystemState, t_end: float, dt: float | None = None,
              stride: int = DEFAULT_STRIDE, *, scenario_id: str = "", compiled: bool = True) -> Trajectory:
    """Classical fixed-step RK4 from ``x0.t`` to ``t_end``.

    Models from :func:`build_model` run through a compiled loop; pass
    ``compiled=False`` (or a hand-made :class:`Model`) for the numpy loop.
    """
    return integrate_piecewise([(x0.t, model)], x0, t_end, dt, stride,
                               scenario_id=scenario_id, compiled=compiled)


def integrate_piecewise(schedule: Sequence[tuple[float, Model]], x0: SystemState, t_end: float,
                        dt: float | None = None, stride: int = DEFAULT_STRIDE, *,
                        scenario_id: str = "", compiled: bool = True) -> Trajectory:
    """Integrate with the model switched at given times.

    ``schedule`` is a list of ``(start_time, model)`` sorted by time, the
    first starting at ``x0.t``. Switch times must lie on the step grid; the
    integrator restarts cleanly at each one.
    """
    if not schedule:
        raise ValueError("empty model schedule")
    first = schedule[0][1]
    dt = DEFAULT_DT[first.kind] if dt is None else float(dt)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if stride < 1 or int(stride) != stride:
        raise ValueError("stride must be a positive integer")
    t0 = float(x0.t)
    if t_end <= t0:
        raise ValueError("t_end must be after the initial time")
    if x0.frame != first.frame:
        raise ValueError(f"{first.kind} model expects a {first.frame} state, got {x0.frame}")
    if abs(schedule[0][0] - t0) > 1e-12 * max(1.0, abs(t0)):
        raise ValueError("first schedule entry must start at the initial time")
    segments = []
    bounds = [s for s, _ in schedule] + [t_end]
    for (start, model), stop in zip(schedule, bounds[1:]):
        if model.frame != first.frame or model.n != first.n or model.m != first.m:
            raise ValueError("all scheduled models must share frame and state layout")
        if stop < start or stop > t_end:
            raise ValueError("schedule times must be increasing and within the run")
        if start > t0:
            _step_count(start - t0, dt)
        segments.append((model.rhs, _step_count(stop - start, dt)))
    models = [m for _, m in schedule]
    if compiled and _compiled_ok(models):
        times, out, x_final, steps = _rk4_compiled(models, [k for _, k in segments], x0.flat(),
                                                   t0, dt, int(stride))
    else:
        times, out, x_final, steps = _rk4(segments, x0.flat(), t0, dt, int(stride))
    final = SystemState.from_flat(x_final, first.n, first.m, first.frame, t0 + steps * dt)
    return Trajectory(times, out, first.n, first.m, first.frame, first.kind, dt, int(stride),
                      scenario_id, final, steps)


def slow_manifold_currents(v_dq, spec: NetworkSpec, omega: float) -> np.ndarray:
    """Quasi-steady line currents ``Z_O^{-1} B^T v`` (dq frame)."""
    Z_G, Z_O = build_impedances(spec, omega)
    B = extend_planar(build_incidence(spec))
    if spec.m == 0:
        return np.zeros(np.shape(v_dq)[:-1] + (0,))
    M = np.linalg.solve(Z_O, B.T)
    return np.asarray(v_dq) @ M.T


def line_time_constant(spec: NetworkSpec, omega: float) -> float:
    """Largest ``L_O / sqrt(L_O^2 omega^2 + R_O^2)`` over the edges (0 without lines)."""
    if spec.m == 0:
        return 0.0
    return float(np.max(spec.L_O / np.sqrt(spec.L_O ** 2 * omega ** 2 + spec.R_O ** 2)))


@dataclass
class DeviationReport:
    eps: float
    t_end: float
    max_dev: float
    rms_dev: float
    max_dev_u: float
    max_dev_v: float
    times: np.ndarray = field(repr=False)
    deviation: np.ndarray = field(repr=False)


def compare_full_reduced(spec: NetworkSpec, sp: Setpoints, g: ControllerGains, x0: SystemState,
                         t_end: float, *, dt_full: float = 1e-6, dt_reduced: float = 1e-5,
                         sample_dt: float = 1e-4, on_manifold: bool = True) -> DeviationReport:
    """Distance between full dq and reduced trajectories from one initial state.

    ``x0`` is a dq state; its line currents are replaced by their slow
    manifold value unless ``on_manifold`` is false (then ``x0.i`` is used).
    """
    if x0.frame != DQ:
        raise ValueError("compare_full_reduced expects a dq initial state")
    i0 = slow_manifold_currents(x0.v, spec, sp.omega_star) if on_manifold or x0.i is None else x0.i
    full0 = SystemState(x0.u, x0.v, i0, DQ, x0.t)
    red0 = SystemState(x0.u, x0.v, None, DQ, x0.t)
    s_full = _step_count(sample_dt, dt_full)
    s_red = _step_count(sample_dt, dt_reduced)
    full = integrate(build_model("dq", spec, sp, g), full0, t_end, dt_full, s_full)
    red = integrate(build_model("reduced", spec, sp, g), red0, t_end, dt_reduced, s_red)
    k = min(len(full), len(red))
    n = spec.n
    d = full.x[:k, ..., :4 * n] - red.x[:k]
    dev = np.linalg.norm(d, axis=-1)
    return DeviationReport(
        eps=line_time_constant(spec, sp.omega_star),
        t_end=float(t_end),
        max_dev=float(dev.max()),
        rms_dev=float(np.sqrt(np.mean(dev ** 2))),
        max_dev_u=float(np.linalg.norm(d[..., :2 * n], axis=-1).max()),
        max_dev_v=float(np.linalg.norm(d[..., 2 * n:], axis=-1).max()),
        times=full.t[:k],
        deviation=dev,
    )


@dataclass(frozen=True)
class LoadStep:
    """Set node ``node`` (1-based) to conductance ``G`` from ``time`` on."""

    time: float
    node: int
    G: float


def simulate(kind: str, spec: NetworkSpec, sp: Setpoints, g: ControllerGains, x0: SystemState,
             t_end: float, dt: float | None = None, stride: int = DEFAULT_STRIDE,
             events: Sequence[LoadStep] = (), scenario_id: str = "") -> Trajectory:
    """Integrate ``kind`` with piecewise-constant load steps.

    The controller keeps the references in ``sp`` across steps; only the
    network parameters change.
    """
    schedule = [(x0.t, build_model(kind, spec, sp, g))]
    current = spec
    for ev in sorted(events, key=lambda e: e.time):
        if not x0.t <= ev.time <= t_end:
            raise ValueError(f"event time {ev.time} outside [{x0.t}, {t_end}]")
        current = current.with_conductance(ev.node, ev.G)
        model = build_model(kind, current, sp, g)
        if math.isclose(ev.time, schedule[-1][0]):
            schedule[-1] = (schedule[-1][0], model)
        else:
            schedule.append((ev.time, model))
    return integrate_piecewise(schedule, x0, t_end, dt, stride, scenario_id=scenario_id)


def steady_state(sp: Setpoints, kind: str, t: float = 0.0) -> SystemState:
    """State on the synchronous orbit at time ``t`` in the frame of ``kind``."""
    i = None if kind in ("reduced", "decoupled") else sp.i_dq
    s = SystemState(sp.u_dq, sp.v_dq, i, DQ, t)
    if kind in ("alphabeta", "decoupled"):
        s = from_dq(s, sp.omega_star)
    return s


__all__ = [
    "MODEL_KINDS", "DEFAULT_DT", "DEFAULT_STRIDE", "IntegrationDiverged", "SystemState", "Trajectory", "Model",
    "build_model", "full_rhs_alphabeta", "full_rhs_dq", "reduced_rhs", "boundary_layer_rhs",
    "to_dq", "from_dq", "rotate_samples", "trajectory_to_alphabeta", "trajectory_to_dq",
    "integrate", "integrate_piecewise", "slow_manifold_currents", "line_time_constant",
    "DeviationReport", "compare_full_reduced", "LoadStep", "simulate", "steady_state",
]
