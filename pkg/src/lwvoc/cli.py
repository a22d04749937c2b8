"""Command-line front end: ``lwvoc <command> --scenario FILE``.

Commands
--------
simulate          integrate the scenario and write ``<id>.csv``
load-step         simulate with extra ``--step-g NODE:VALUE:TIME`` events
check-stability   certificate report (``--strict`` turns a failure into exit 4)
steady-state      table of ``v*_dq`` and ``i*_dq``
sweep-epsilon     full vs reduced deviation for scaled line inductances

Each command writes an aligned text report and a ``.kv`` twin
(``key=value`` lines) next to its data files, plus the fully resolved
scenario as ``<id>.resolved.scn``.

CSV columns are ``t`` and, per node ``k``: ``u_alpha_k, u_beta_k,
v_alpha_k, v_beta_k, r_k, theta_k, theta_raw_k, P_k, Q_k``. ``theta_k`` is
the tracking error ``wrap(theta_raw_k - omega* t - theta0*_k)``. Values
are always in the stationary frame, whatever model was integrated. With
``--with-lines`` the columns ``i_alpha_e, i_beta_e`` follow for every edge.

Exit codes: 0 success, 2 scenario error, 3 numerical failure, 4 stability
check failed under ``--strict``.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import StabilityReport, compute_condition1, droop_quantities
from .controller import ALPHABETA, DQ, wrap_angle
from .dynamics import (IntegrationDiverged, LoadStep, SystemState, Trajectory, compare_full_reduced,
                       simulate, trajectory_to_alphabeta)
from .network import NetworkError, NumericalSingularityError
from .scenario import SCENARIO_MODELS, Scenario, ScenarioError, parse_scenario

EXIT_OK = 0
EXIT_SCENARIO = 2
EXIT_NUMERICAL = 3
EXIT_UNSTABLE = 4

NUMBER_FORMAT = "%.12g"


# --- reports ---------------------------------------------------------------

def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return NUMBER_FORMAT % value
    return str(value)


def write_report(path_stem: Path, title: str, items: Sequence[tuple[str, object]],
                 kv_items: Sequence[tuple[str, object]] | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.txt`` (aligned) and ``<stem>.kv``; returns both paths.

    ``kv_items`` replaces ``items`` in the machine-readable file when given.
    """
    width = max((len(k) for k, _ in items), default=0)
    lines = [title, "=" * len(title)]
    lines += [f"{k.ljust(width)}  {_fmt(v)}" for k, v in items]
    txt = path_stem.parent / (path_stem.name + ".txt")
    kv = path_stem.parent / (path_stem.name + ".kv")
    txt.write_text("\n".join(lines) + "\n", encoding="utf-8")
    kv_items = items if kv_items is None else kv_items
    kv.write_text("".join(f"{k}={_fmt(v)}\n" for k, v in kv_items), encoding="utf-8")
    return txt, kv


@dataclass
class RunReport:
    scenario_id: str
    wall_time: float
    model: str
    dt: float
    steps: int
    samples: int
    final_r: np.ndarray
    final_angle_error: np.ndarray
    paths: list[Path] = field(default_factory=list)

    def items(self) -> list[tuple[str, object]]:
        out: list[tuple[str, object]] = [
            ("scenario", self.scenario_id), ("model", self.model), ("dt", self.dt),
            ("steps", self.steps), ("samples", self.samples),
            ("wall_time_s", round(self.wall_time, 3)),
        ]
        for k, (r, th) in enumerate(zip(self.final_r, self.final_angle_error), start=1):
            out += [(f"final_r_{k}", float(r)), (f"final_angle_error_{k}", float(th))]
        return out


# --- CSV -------------------------------------------------------------------

def csv_header(n: int, m: int | None) -> list[str]:
    cols = ["t"]
    for k in range(1, n + 1):
        cols += [f"{name}_{k}" for name in
                 ("u_alpha", "u_beta", "v_alpha", "v_beta", "r", "theta", "theta_raw", "P", "Q")]
    for e in range(1, (m or 0) + 1):
        cols += [f"i_alpha_{e}", f"i_beta_{e}"]
    return cols


def trajectory_table(traj: Trajectory, sp, with_lines: bool) -> tuple[list[str], np.ndarray]:
    """Stationary-frame columns for every sample of ``traj``."""
    ab = trajectory_to_alphabeta(traj, sp.omega_star)
    n = ab.n
    u = ab.u.reshape(len(ab), n, 2)
    v = ab.v.reshape(len(ab), n, 2)
    dq = droop_quantities(ab.u, ab.v, sp, ALPHABETA, ab.t)
    raw = np.arctan2(u[..., 1], u[..., 0])
    err = wrap_angle(raw - sp.theta0_star - sp.omega_star * ab.t[:, None])
    per_node = np.stack([u[..., 0], u[..., 1], v[..., 0], v[..., 1], dq.r, err, raw, dq.P, dq.Q],
                        axis=-1).reshape(len(ab), -1)
    blocks = [ab.t[:, None], per_node]
    m = None
    if with_lines:
        if ab.i is None:
            raise ScenarioError("--with-lines needs a model with line states (alphabeta or dq)")
        m = ab.m
        blocks.append(ab.i)
    return csv_header(n, m), np.hstack(blocks)


def write_csv(path: Path, header: list[str], rows: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        np.savetxt(fh, rows, fmt=NUMBER_FORMAT, delimiter=",", header=",".join(header), comments="")


# --- commands --------------------------------------------------------------

def _out_dir(scn: Scenario) -> Path:
    out = Path(scn.out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ScenarioError(f"output.dir: cannot create {out}: {exc.strerror}") from exc
    return out


def _echo(scn: Scenario, out: Path) -> Path:
    path = out / f"{scn.id}.resolved.scn"
    path.write_text(scn.echo(), encoding="utf-8")
    return path


def cmd_simulate(scn: Scenario) -> RunReport:
    out = _out_dir(scn)
    sp = scn.setpoints()
    x0 = scn.initial_state(sp)
    start = time.perf_counter()
    traj = simulate(scn.model, scn.spec, sp, scn.gains, x0, scn.t_end, scn.dt, scn.stride,
                    scn.events, scenario_id=scn.id)
    wall = time.perf_counter() - start
    header, rows = trajectory_table(traj, sp, scn.with_lines)
    csv_path = out / f"{scn.id}.csv"
    write_csv(csv_path, header, rows)
    n = scn.spec.n
    last = rows[-1, 1:1 + 9 * n].reshape(n, 9)
    report = RunReport(scn.id, wall, scn.model, scn.dt, traj.steps, len(traj),
                       last[:, 4], last[:, 5])
    report.paths = [csv_path, _echo(scn, out)]
    report.paths += write_report(out / f"{scn.id}.simulate", f"simulate {scn.id}", report.items())
    return report


def check_items(rep: StabilityReport) -> list[tuple[str, object]]:
    def verdict(ok):
        return "pass" if ok else "fail"

    return [
        ("tau", rep.tau), ("eps", rep.eps), ("xi1", rep.xi1), ("xi2", rep.xi2),
        ("beta1", rep.beta1), ("beta2", rep.beta2), ("zeta", rep.zeta),
        ("alpha_star", rep.alpha_star), ("gamma_max", rep.gamma_max), ("alpha_max", rep.alpha_max),
        ("assumption1", f"{verdict(rep.assumption1_ok)}  tau={_fmt(rep.tau)} < tau_star={_fmt(rep.tau_star)}"),
        ("alpha_gain", f"{verdict(rep.alpha_gain_ok)}  alpha_max={_fmt(rep.alpha_max)} < alpha_star={_fmt(rep.alpha_star)}"),
        ("amplitude_gain", f"{verdict(rep.amplitude_gain_ok)}  0 < xi1={_fmt(rep.xi1)}"),
        ("time_scale", f"{verdict(rep.time_scale_ok)}  eps={_fmt(rep.eps)} < bound={_fmt(rep.eps_bound)}"),
        ("condition1_ok", rep.condition1_ok), ("all_ok", rep.all_ok),
    ]


def cmd_check(scn: Scenario) -> tuple[StabilityReport, list[Path]]:
    out = _out_dir(scn)
    rep = compute_condition1(scn.spec, scn.setpoints(), scn.gains, tau_star=scn.tau_star)
    paths = list(write_report(out / f"{scn.id}.check", f"check-stability {scn.id}",
                              check_items(rep), list(rep.as_dict().items())))
    return rep, paths + [_echo(scn, out)]


def steady_state_items(scn: Scenario) -> list[tuple[str, object]]:
    sp = scn.setpoints()
    items: list[tuple[str, object]] = []
    v = sp.v_dq.reshape(-1, 2)
    amp = np.hypot(v[:, 0], v[:, 1])
    ang = np.arctan2(v[:, 1], v[:, 0])
    for k in range(scn.spec.n):
        items += [(f"v_d_{k + 1}", v[k, 0]), (f"v_q_{k + 1}", v[k, 1]),
                  (f"v_amplitude_{k + 1}", amp[k]), (f"v_angle_{k + 1}", ang[k])]
    i = sp.i_dq.reshape(-1, 2)
    for e in range(scn.spec.m):
        items += [(f"i_d_{e + 1}", i[e, 0]), (f"i_q_{e + 1}", i[e, 1])]
    ref_amp = scn.reference.get("v_amplitude")
    if ref_amp is not None:
        dev = float(np.max(np.abs(amp - ref_amp)) / ref_amp)
        items += [("reference_v_amplitude", ref_amp), ("v_amplitude_rel_deviation", dev)]
    ref_ang = scn.reference.get("v_angle")
    if ref_ang is not None:
        dev = float(np.max(np.abs(wrap_angle(ang - ref_ang))))
        items += [("reference_v_angle", ref_ang), ("v_angle_deviation_rad", dev)]
    return items


def cmd_steady_state(scn: Scenario) -> tuple[list[tuple[str, object]], list[Path]]:
    out = _out_dir(scn)
    items = steady_state_items(scn)
    paths = list(write_report(out / f"{scn.id}.steady", f"steady-state {scn.id}", items))
    return items, paths + [_echo(scn, out)]


def sweep_rows(scn: Scenario, scales: Sequence[float]) -> np.ndarray:
    """``(scale, eps, max deviation, rms deviation)`` per line-inductance scale."""
    if any(s <= 0 for s in scales):
        raise ScenarioError("sweep.scales: expected positive numbers")
    sw = scn.sweep
    rows = []
    for scale in scales:
        spec = scn.spec.with_line_inductance_scaled(scale)
        scaled = dataclasses.replace(scn, spec=spec, model=DQ,
                                     initial=dataclasses.replace(scn.initial, kind="perturbed",
                                                                 node=1, dv=sw.dv),
                                     t_start=0.0)
        sp = scaled.setpoints()
        x0 = scaled.initial_state(sp)
        rep = compare_full_reduced(spec, sp, scn.gains, SystemState(x0.u, x0.v, None, DQ, 0.0),
                                   sw.t_end, sample_dt=sw.sample_dt)
        rows.append((scale, rep.eps, rep.max_dev, rep.rms_dev))
    return np.array(rows)


def cmd_sweep_epsilon(scn: Scenario, scales: Sequence[float] | None = None) -> tuple[np.ndarray, list[Path]]:
    out = _out_dir(scn)
    rows = sweep_rows(scn, scn.sweep.scales if scales is None else scales)
    csv_path = out / f"{scn.id}.sweep.csv"
    write_csv(csv_path, ["scale", "eps", "max_dev", "rms_dev"], rows)
    items: list[tuple[str, object]] = []
    for k, (scale, eps, dmax, drms) in enumerate(rows, start=1):
        items += [(f"scale_{k}", scale), (f"eps_{k}", eps), (f"max_dev_{k}", dmax),
                  (f"rms_dev_{k}", drms)]
    for k in range(1, len(rows)):
        items.append((f"dev_ratio_over_eps_ratio_{k + 1}",
                      (rows[k, 2] / rows[0, 2]) / (rows[k, 1] / rows[0, 1])))
    paths = [csv_path, *write_report(out / f"{scn.id}.sweep", f"sweep-epsilon {scn.id}", items)]
    return rows, paths + [_echo(scn, out)]


# --- argument handling -----------------------------------------------------

def parse_step(text: str) -> LoadStep:
    try:
        node, value, when = text.split(":")
        return LoadStep(float(when), int(node), float(value))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected NODE:VALUE:TIME, got {text!r}") from None


def parse_scales(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", required=True, metavar="PATH", help="scenario file")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    common.add_argument("--dt", type=float, help="integrator step (s)")
    common.add_argument("--t-end", type=float, help="final time (s)")
    common.add_argument("--stride", type=int, help="keep every STRIDE-th step")
    common.add_argument("--frame", choices=SCENARIO_MODELS, help="model to integrate")
    common.add_argument("--with-lines", action="store_true", default=None,
                        help="append line currents to the CSV")
    common.add_argument("--strict", action="store_true",
                        help="exit 4 when the stability check fails")

    parser = argparse.ArgumentParser(prog="lwvoc", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="integrate a scenario")
    ls = sub.add_parser("load-step", parents=[common], help="simulate with extra load steps")
    ls.add_argument("--step-g", type=parse_step, action="append", default=[],
                    metavar="NODE:VALUE:TIME", help="set node conductance at a time (repeatable)")
    sub.add_parser("check-stability", parents=[common], help="stability certificate")
    sub.add_parser("steady-state", parents=[common], help="steady-state voltages and currents")
    sw = sub.add_parser("sweep-epsilon", parents=[common], help="singular-perturbation sweep")
    sw.add_argument("--scales", type=parse_scales, metavar="S1,S2,...",
                    help="line-inductance scales (default: sweep.scales)")
    return parser


def apply_overrides(scn: Scenario, args: argparse.Namespace) -> Scenario:
    changes = {}
    if args.out is not None:
        changes["out_dir"] = args.out
    if args.dt is not None:
        changes["dt"] = args.dt
    if args.t_end is not None:
        changes["t_end"] = args.t_end
    if args.stride is not None:
        changes["stride"] = args.stride
    if args.frame is not None and args.frame != scn.model:
        if scn.initial.kind == "explicit":
            raise ScenarioError("--frame cannot change the model of an explicit initial state")
        changes["model"] = args.frame
    if args.with_lines:
        changes["with_lines"] = True
    steps = list(getattr(args, "step_g", []))
    for ev in steps:
        if not 1 <= ev.node <= scn.spec.n:
            raise ScenarioError(f"--step-g: node {ev.node} out of range 1..{scn.spec.n}")
        if ev.G <= 0:
            raise ScenarioError("conductance must be positive")
    if steps:
        changes["events"] = scn.events + tuple(steps)
    scn = dataclasses.replace(scn, **changes)
    if scn.dt <= 0 or scn.stride < 1 or scn.t_end <= scn.t_start:
        raise ScenarioError("--dt and --stride must be positive and --t-end must exceed t_start")
    for ev in scn.events:
        if not scn.t_start <= ev.time <= scn.t_end:
            raise ScenarioError(f"event time {ev.time} outside [{scn.t_start}, {scn.t_end}]")
    return scn


def _print_items(title: str, items) -> None:
    width = max(len(k) for k, _ in items)
    print(title)
    for k, v in items:
        print(f"  {k.ljust(width)}  {_fmt(v)}")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        scn = apply_overrides(parse_scenario(args.scenario), args)
        if args.command in ("simulate", "load-step"):
            rep = cmd_simulate(scn)
            _print_items(f"{args.command} {scn.id}", rep.items())
            print("wrote " + ", ".join(str(p) for p in rep.paths))
        elif args.command == "check-stability":
            rep, paths = cmd_check(scn)
            _print_items(f"check-stability {scn.id}", check_items(rep))
            if args.strict and not rep.all_ok:
                return EXIT_UNSTABLE
        elif args.command == "steady-state":
            items, _ = cmd_steady_state(scn)
            _print_items(f"steady-state {scn.id}", items)
        else:
            rows, paths = cmd_sweep_epsilon(scn, args.scales)
            print("scale,eps,max_dev,rms_dev")
            for row in rows:
                print(",".join(NUMBER_FORMAT % x for x in row))
    except (ScenarioError, NetworkError) as exc:
        print(f"lwvoc: scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except IntegrationDiverged as exc:
        print(f"lwvoc: integration diverged: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (NumericalSingularityError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"lwvoc: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
