"""Scenario files: a TOML key tree describing one experiment.

Grammar (every key not marked *required* has the default shown)::

    id = "<file stem>"

    [network]                      # required
    n = 3                          # required, integer >= 1
    edges = [[1, 2], [2, 3]]       # 1-based node pairs, default []
    C = 1e-3                       # required; scalar or one value per node
    G = 0.5                        # required; scalar or one value per node
    R_O = 1.0                      # scalar or one value per edge
    L_O = 1.0
    C_O = 0.0

    [controller]                   # required
    gamma = 0.1                    # required; scalar or per node
    alpha = 0.03                   # required; scalar or per node

    [setpoints]                    # required
    r_star = 20.0                  # required; scalar or per node
    theta0_star = 0.0              # scalar or per node (rad)
    omega_star = 314.159...        # required (rad/s)

    [simulation]
    model = "alphabeta"            # alphabeta | dq | reduced
    dt = <1e-6 full, 1e-5 reduced>
    t_start = 0.0
    t_end = 1.0
    stride = 20

    [simulation.initial]
    kind = "steady"                # steady | perturbed | explicit
    node = 1                       # perturbed: node whose voltage is offset
    dv = [0.0, 0.0]                # perturbed: dq offset added to v*_k
    u = [...]                      # explicit: 2n values, model frame
    v = [...]                      # explicit: 2n values, model frame
    i = [...]                      # explicit: 2m values (full models only)

    [[events]]                     # zero or more load steps
    time = 0.5
    node = 1
    G = 1.0

    [output]
    dir = "out"
    with_lines = false

    [check]
    tau_star = 1e-3

    [sweep]
    scales = [1.0, 0.5, 0.25]      # L_O multipliers for sweep-epsilon
    t_end = 0.05
    sample_dt = 1e-4
    dv = [5.0, 0.0]                # dq offset of node 1 voltage at t = 0

    [reference]                    # optional published values, for comparison
    v_amplitude = 175.0
    v_angle = -2.463

Unknown keys are rejected so that typos do not silently fall back to
defaults.
"""
from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import tomlkit

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .controller import ALPHABETA, DQ, ControllerGains, Setpoints
from .dynamics import DEFAULT_DT, DEFAULT_STRIDE, LoadStep, SystemState, from_dq, slow_manifold_currents
from .network import NetworkError, NetworkSpec

SCENARIO_MODELS = ("alphabeta", "dq", "reduced")
INITIAL_KINDS = ("steady", "perturbed", "explicit")

_ALLOWED = {
    "": {"id", "network", "controller", "setpoints", "simulation", "events", "output",
         "check", "sweep", "reference"},
    "network": {"n", "edges", "C", "G", "R_O", "L_O", "C_O"},
    "controller": {"gamma", "alpha"},
    "setpoints": {"r_star", "theta0_star", "omega_star"},
    "simulation": {"model", "dt", "t_start", "t_end", "stride", "initial"},
    "simulation.initial": {"kind", "node", "dv", "u", "v", "i"},
    "events": {"time", "node", "G"},
    "output": {"dir", "with_lines"},
    "check": {"tau_star"},
    "sweep": {"scales", "t_end", "sample_dt", "dv"},
    "reference": {"v_amplitude", "v_angle"},
}


class ScenarioError(ValueError):
    """A scenario file that cannot be turned into a valid :class:`Scenario`."""


@dataclass(frozen=True)
class InitialCondition:
    kind: str = "steady"
    node: int = 1
    dv: tuple[float, float] = (0.0, 0.0)
    u: tuple[float, ...] | None = None
    v: tuple[float, ...] | None = None
    i: tuple[float, ...] | None = None


@dataclass(frozen=True)
class SweepConfig:
    scales: tuple[float, ...] = (1.0, 0.5, 0.25)
    t_end: float = 0.05
    sample_dt: float = 1e-4
    dv: tuple[float, float] = (5.0, 0.0)


@dataclass(frozen=True)
class Scenario:
    id: str
    spec: NetworkSpec
    gains: ControllerGains
    r_star: np.ndarray
    theta0_star: np.ndarray
    omega_star: float
    model: str = ALPHABETA
    dt: float = DEFAULT_DT[ALPHABETA]
    t_start: float = 0.0
    t_end: float = 1.0
    stride: int = DEFAULT_STRIDE
    initial: InitialCondition = InitialCondition()
    events: tuple[LoadStep, ...] = ()
    out_dir: str = "out"
    with_lines: bool = False
    tau_star: float = 1e-3
    sweep: SweepConfig = SweepConfig()
    reference: dict = field(default_factory=dict)

    def setpoints(self) -> Setpoints:
        """References derived from the nominal (pre-event) network."""
        return Setpoints.derive(self.spec, self.r_star, self.theta0_star, self.omega_star)

    def initial_state(self, sp: Setpoints | None = None) -> SystemState:
        """Initial state in the frame of ``self.model`` at ``t_start``."""
        sp = self.setpoints() if sp is None else sp
        ic = self.initial
        frame = DQ if self.model in ("dq", "reduced") else ALPHABETA
        full = self.model != "reduced"
        if ic.kind == "explicit":
            i = np.array(ic.i) if full else None
            return SystemState(np.array(ic.u), np.array(ic.v), i, frame, self.t_start)
        v = np.array(sp.v_dq)
        if ic.kind == "perturbed":
            v[2 * (ic.node - 1):2 * ic.node] += ic.dv
        # line currents start on their quasi-steady value for the (perturbed) voltage
        i = slow_manifold_currents(v, self.spec, self.omega_star) if full else None
        s = SystemState(sp.u_dq, v, i, DQ, self.t_start)
        return from_dq(s, self.omega_star) if frame == ALPHABETA else s

    def resolved(self) -> dict:
        """The scenario as a plain key tree with every default filled in."""
        def arr(a):
            return [float(x) for x in np.asarray(a)]

        ic = self.initial
        initial: dict[str, Any] = {"kind": ic.kind}
        if ic.kind == "perturbed":
            initial.update(node=ic.node, dv=list(ic.dv))
        elif ic.kind == "explicit":
            initial.update(u=list(ic.u), v=list(ic.v))
            if ic.i is not None:
                initial["i"] = list(ic.i)
        tree = {
            "id": self.id,
            "network": {"n": self.spec.n, "edges": [list(e) for e in self.spec.edges],
                        "C": arr(self.spec.C), "G": arr(self.spec.G), "R_O": arr(self.spec.R_O),
                        "L_O": arr(self.spec.L_O), "C_O": arr(self.spec.C_O)},
            "controller": {"gamma": arr(self.gains.gamma), "alpha": arr(self.gains.alpha)},
            "setpoints": {"r_star": arr(self.r_star), "theta0_star": arr(self.theta0_star),
                          "omega_star": self.omega_star},
            "simulation": {"model": self.model, "dt": self.dt, "t_start": self.t_start,
                           "t_end": self.t_end, "stride": self.stride, "initial": initial},
            "events": [{"time": e.time, "node": e.node, "G": e.G} for e in self.events],
            "output": {"dir": self.out_dir, "with_lines": self.with_lines},
            "check": {"tau_star": self.tau_star},
            "sweep": {"scales": list(self.sweep.scales), "t_end": self.sweep.t_end,
                      "sample_dt": self.sweep.sample_dt, "dv": list(self.sweep.dv)},
        }
        if self.reference:
            tree["reference"] = dict(self.reference)
        return tree

    def echo(self) -> str:
        return tomlkit.dumps(self.resolved())


# --- parsing helpers -------------------------------------------------------

def _key(section: str, name: str) -> str:
    return f"{section}.{name}" if section else name


def _check_keys(table: dict, section: str) -> None:
    unknown = sorted(set(table) - _ALLOWED[section])
    if unknown:
        raise ScenarioError(f"unknown key: {_key(section, unknown[0])}")


def _table(tree: dict, section: str, required: bool) -> dict:
    parent, _, name = section.rpartition(".")
    node = tree
    for part in filter(None, parent.split(".")):
        node = node[part]
    if name not in node:
        if required:
            raise ScenarioError(f"missing key: {section}")
        return {}
    value = node[name]
    if not isinstance(value, dict):
        raise ScenarioError(f"{section}: expected a table")
    _check_keys(value, section)
    return value


def _required(table: dict, section: str, name: str):
    if name not in table:
        raise ScenarioError(f"missing key: {_key(section, name)}")
    return table[name]


def _number(value, key: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{key}: expected a number, got {type(value).__name__}")
    return float(value)


def _integer(value, key: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"{key}: expected an integer, got {type(value).__name__}")
    return value


def _numbers(value, key: str, length: int | None = None) -> list[float]:
    if not isinstance(value, list):
        raise ScenarioError(f"{key}: expected a list of numbers")
    out = [_number(x, f"{key}[{k}]") for k, x in enumerate(value)]
    if length is not None and len(out) != length:
        raise ScenarioError(f"{key}: expected {length} values, got {len(out)}")
    return out


def _scalar_or_list(value, key: str, length: int):
    if isinstance(value, list):
        return np.array(_numbers(value, key, length))
    return _number(value, key)


def _string(value, key: str, choices=None) -> str:
    if not isinstance(value, str):
        raise ScenarioError(f"{key}: expected a string, got {type(value).__name__}")
    if choices is not None and value not in choices:
        raise ScenarioError(f"{key}: expected one of {', '.join(choices)}, got {value!r}")
    return value


def _node(value, key: str, n: int) -> int:
    k = _integer(value, key)
    if not 1 <= k <= n:
        raise ScenarioError(f"{key}: node {k} out of range 1..{n}")
    return k


def _parse_network(tree: dict) -> NetworkSpec:
    # an absent table is reported through its first required key
    net = _table(tree, "network", required=False)
    n = _integer(_required(net, "network", "n"), "network.n")
    if n < 1:
        raise ScenarioError("network.n: expected an integer >= 1")
    edges_raw = net.get("edges", [])
    if not isinstance(edges_raw, list):
        raise ScenarioError("network.edges: expected a list of [i, j] pairs")
    edges = []
    for k, e in enumerate(edges_raw):
        if not isinstance(e, list) or len(e) != 2:
            raise ScenarioError(f"network.edges[{k}]: expected a pair [i, j]")
        edges.append((_integer(e[0], f"network.edges[{k}][0]"),
                      _integer(e[1], f"network.edges[{k}][1]")))
    m = len(edges)
    kw = {name: _scalar_or_list(_required(net, "network", name), f"network.{name}", n)
          for name in ("C", "G")}
    for name, default in (("R_O", 1.0), ("L_O", 1.0), ("C_O", 0.0)):
        kw[name] = _scalar_or_list(net.get(name, default), f"network.{name}", m)
    try:
        return NetworkSpec(n, edges, **kw)
    except NetworkError as exc:
        raise ScenarioError(str(exc)) from exc


def _parse_initial(sim: dict, n: int, m: int, model: str) -> InitialCondition:
    if "initial" not in sim:
        return InitialCondition()
    ini = sim["initial"]
    if not isinstance(ini, dict):
        raise ScenarioError("simulation.initial: expected a table")
    _check_keys(ini, "simulation.initial")
    kind = _string(ini.get("kind", "steady"), "simulation.initial.kind", INITIAL_KINDS)
    if kind == "steady":
        return InitialCondition()
    if kind == "perturbed":
        node = _node(ini.get("node", 1), "simulation.initial.node", n)
        dv = _numbers(_required(ini, "simulation.initial", "dv"), "simulation.initial.dv", 2)
        return InitialCondition(kind, node=node, dv=tuple(dv))
    u = _numbers(_required(ini, "simulation.initial", "u"), "simulation.initial.u", 2 * n)
    v = _numbers(_required(ini, "simulation.initial", "v"), "simulation.initial.v", 2 * n)
    i = None
    if model != "reduced":
        i = tuple(_numbers(_required(ini, "simulation.initial", "i"), "simulation.initial.i", 2 * m))
    return InitialCondition(kind, u=tuple(u), v=tuple(v), i=i)


def parse_scenario_text(text: str, default_id: str = "scenario") -> Scenario:
    try:
        tree = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"not a valid scenario file: {exc}") from exc
    _check_keys(tree, "")
    spec = _parse_network(tree)
    n, m = spec.n, spec.m

    ctl = _table(tree, "controller", required=True)
    try:
        gains = ControllerGains(
            _scalar_or_list(_required(ctl, "controller", "gamma"), "controller.gamma", n),
            _scalar_or_list(_required(ctl, "controller", "alpha"), "controller.alpha", n), n)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc

    spt = _table(tree, "setpoints", required=True)
    r_star = np.broadcast_to(
        _scalar_or_list(_required(spt, "setpoints", "r_star"), "setpoints.r_star", n), (n,)).copy()
    if np.any(r_star <= 0):
        raise ScenarioError("setpoints.r_star: reference amplitude must be positive")
    theta0 = np.broadcast_to(
        _scalar_or_list(spt.get("theta0_star", 0.0), "setpoints.theta0_star", n), (n,)).copy()
    omega = _number(_required(spt, "setpoints", "omega_star"), "setpoints.omega_star")
    if omega <= 0:
        raise ScenarioError("setpoints.omega_star: expected a positive angular frequency")

    sim = _table(tree, "simulation", required=False)
    model = _string(sim.get("model", ALPHABETA), "simulation.model", SCENARIO_MODELS)
    dt = _number(sim.get("dt", DEFAULT_DT[model]), "simulation.dt")
    t_start = _number(sim.get("t_start", 0.0), "simulation.t_start")
    t_end = _number(sim.get("t_end", 1.0), "simulation.t_end")
    stride = _integer(sim.get("stride", DEFAULT_STRIDE), "simulation.stride")
    if dt <= 0:
        raise ScenarioError("simulation.dt: expected a positive step")
    if t_end <= t_start:
        raise ScenarioError("simulation.t_end: must exceed simulation.t_start")
    if stride < 1:
        raise ScenarioError("simulation.stride: expected an integer >= 1")
    initial = _parse_initial(sim, n, m, model)

    raw_events = tree.get("events", [])
    if not isinstance(raw_events, list):
        raise ScenarioError("events: expected an array of tables ([[events]])")
    events = []
    for k, ev in enumerate(raw_events):
        key = f"events[{k}]"
        if not isinstance(ev, dict):
            raise ScenarioError(f"{key}: expected a table")
        _check_keys(ev, "events")
        time = _number(_required(ev, key, "time"), f"{key}.time")
        if not t_start <= time <= t_end:
            raise ScenarioError(f"{key}.time: {time} outside [{t_start}, {t_end}]")
        G = _number(_required(ev, key, "G"), f"{key}.G")
        if G <= 0:
            raise ScenarioError("conductance must be positive")
        events.append(LoadStep(time, _node(_required(ev, key, "node"), f"{key}.node", n), G))

    out = _table(tree, "output", required=False)
    out_dir = _string(out.get("dir", "out"), "output.dir")
    with_lines = out.get("with_lines", False)
    if not isinstance(with_lines, bool):
        raise ScenarioError("output.with_lines: expected true or false")

    chk = _table(tree, "check", required=False)
    tau_star = _number(chk.get("tau_star", 1e-3), "check.tau_star")
    if tau_star <= 0:
        raise ScenarioError("check.tau_star: expected a positive time")

    sw = _table(tree, "sweep", required=False)
    scales = _numbers(sw.get("scales", [1.0, 0.5, 0.25]), "sweep.scales")
    if not scales or any(s <= 0 for s in scales):
        raise ScenarioError("sweep.scales: expected a non-empty list of positive numbers")
    sweep = SweepConfig(tuple(scales), _number(sw.get("t_end", 0.05), "sweep.t_end"),
                        _number(sw.get("sample_dt", 1e-4), "sweep.sample_dt"),
                        tuple(_numbers(sw.get("dv", [5.0, 0.0]), "sweep.dv", 2)))

    ref = _table(tree, "reference", required=False)
    reference = {k: _number(v, f"reference.{k}") for k, v in ref.items()}

    sid = _string(tree.get("id", default_id), "id")
    return Scenario(sid, spec, gains, r_star, theta0, omega, model, dt, t_start, t_end, stride,
                    initial, tuple(events), out_dir, with_lines, tau_star, sweep, reference)


def parse_scenario(path) -> Scenario:
    """Read and validate a scenario file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {path}: {exc.strerror}") from exc
    except UnicodeDecodeError as exc:
        raise ScenarioError(f"scenario {path} is not UTF-8 text") from exc
    return parse_scenario_text(text, default_id=path.stem)


def bundled_scenario_path(name: str = "three_converter.scn") -> Path:
    """Path of a scenario shipped with the package; the ``.scn`` suffix is optional."""
    if not name.endswith(".scn"):
        name += ".scn"
    return Path(str(resources.files("lwvoc") / "scenarios" / name))


__all__ = [
    "ScenarioError", "Scenario", "InitialCondition", "SweepConfig", "SCENARIO_MODELS",
    "parse_scenario", "parse_scenario_text", "bundled_scenario_path",
]
