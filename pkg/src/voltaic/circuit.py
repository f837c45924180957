"""Ideal nonlinear resistive networks: graph, energy, pinning and feasibility.

A network is a set of nodes joined by four kinds of ideal branches:

* ``R j k g``   linear resistor of conductance ``g > 0``
* ``CS j k i``  current source driving ``i`` amperes from ``j`` to ``k``
* ``VS j k v``  voltage source imposing ``v_j = v_k + v``
* ``D j k``     ideal diode imposing ``v_j <= v_k``

The steady state is the minimiser of :func:`energy` over the feasible set of
potentials allowed by the diodes and voltage sources.  Voltage sources must
form a single tree hanging off the ground node, so their potentials can be
read off directly (:func:`pin_potentials`).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import NamedTuple

import numpy as np

from .errors import InfeasibleBounds, NetlistError

Resistor = tuple[int, int, float]
CurrentSource = tuple[int, int, float]
VoltageSource = tuple[int, int, float]
Diode = tuple[int, int]


@dataclass(frozen=True)
class CircuitGraph:
    """Immutable description of a network; validated on construction."""

    n_nodes: int
    ground: int = 0
    resistors: tuple[Resistor, ...] = ()
    current_sources: tuple[CurrentSource, ...] = ()
    voltage_sources: tuple[VoltageSource, ...] = ()
    diodes: tuple[Diode, ...] = ()

    def __post_init__(self):
        # normalise to tuples of plain python numbers so instances hash and compare cleanly
        object.__setattr__(self, "resistors", tuple((int(j), int(k), float(g)) for j, k, g in self.resistors))
        object.__setattr__(self, "current_sources", tuple((int(j), int(k), float(i)) for j, k, i in self.current_sources))
        object.__setattr__(self, "voltage_sources", tuple((int(j), int(k), float(v)) for j, k, v in self.voltage_sources))
        object.__setattr__(self, "diodes", tuple((int(j), int(k)) for j, k in self.diodes))
        _validate(self)

    @cached_property
    def _pinning(self) -> tuple[np.ndarray, np.ndarray]:
        v = np.zeros(self.n_nodes)
        pinned = np.zeros(self.n_nodes, dtype=bool)
        adj: list[list[tuple[int, float]]] = [[] for _ in range(self.n_nodes)]
        for j, k, v0 in self.voltage_sources:
            # v_j = v_k + v0
            adj[k].append((j, v0))
            adj[j].append((k, -v0))
        pinned[self.ground] = True
        queue = deque([self.ground])
        while queue:
            a = queue.popleft()
            for b, dv in adj[a]:
                if not pinned[b]:
                    v[b] = v[a] + dv
                    pinned[b] = True
                    queue.append(b)
        v.setflags(write=False)
        pinned.setflags(write=False)
        return v, pinned

    @property
    def pinned_mask(self) -> np.ndarray:
        return self._pinning[1]

    @property
    def free_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self._pinning[1])

    @cached_property
    def conductance_sums(self) -> np.ndarray:
        """Total incident conductance per node."""
        G = np.zeros(self.n_nodes)
        for j, k, g in self.resistors:
            G[j] += g
            G[k] += g
        return G

    @cached_property
    def injected_currents(self) -> np.ndarray:
        """Net current driven into each node by the current sources."""
        inj = np.zeros(self.n_nodes)
        for j, k, i in self.current_sources:
            inj[k] += i
            inj[j] -= i
        return inj

    @cached_property
    def adjacency(self) -> list["NodeLinks"]:
        """Per-node resistor neighbours and diode partners, for coordinate updates."""
        links = [NodeLinks([], [], 0.0, 0.0, [], []) for _ in range(self.n_nodes)]
        for j, k, g in self.resistors:
            links[j].neighbors.append(k)
            links[j].conductances.append(g)
            links[k].neighbors.append(j)
            links[k].conductances.append(g)
        for a, link in enumerate(links):
            link.total_conductance = float(sum(link.conductances))
            link.injected = float(self.injected_currents[a])
        for j, k in self.diodes:
            links[k].below.append(j)
            links[j].above.append(k)
        return links

    @cached_property
    def laplacian(self) -> np.ndarray:
        """Dense conductance Laplacian (Hessian of the energy)."""
        H = np.zeros((self.n_nodes, self.n_nodes))
        for j, k, g in self.resistors:
            H[j, j] += g
            H[k, k] += g
            H[j, k] -= g
            H[k, j] -= g
        return H


@dataclass
class NodeLinks:
    neighbors: list
    conductances: list
    total_conductance: float
    injected: float
    below: list  # j with diode (j, k): v_j <= v_k
    above: list  # m with diode (k, m): v_k <= v_m


@dataclass
class PotentialState:
    """Node potentials plus the mask of nodes fixed by the voltage-source tree."""

    v: np.ndarray
    pinned: np.ndarray

    def copy(self) -> "PotentialState":
        return PotentialState(self.v.copy(), self.pinned.copy())


class Violation(NamedTuple):
    kind: str  # "D" or "VS"
    j: int
    k: int
    amount: float


def _validate(graph: CircuitGraph) -> None:
    n = graph.n_nodes
    if n < 1:
        raise NetlistError("circuit needs at least one node")

    def check_index(idx, what):
        if not 0 <= idx < n:
            raise NetlistError(f"{what}: node index {idx} outside [0, {n})")

    check_index(graph.ground, "ground")
    groups = (
        ("R", graph.resistors),
        ("CS", graph.current_sources),
        ("VS", graph.voltage_sources),
        ("D", graph.diodes),
    )
    for kind, branches in groups:
        for b in branches:
            j, k = b[0], b[1]
            check_index(j, kind)
            check_index(k, kind)
            if j == k:
                raise NetlistError(f"{kind} branch connects node {j} to itself")
            if kind == "R" and not b[2] > 0:
                raise NetlistError(f"resistor ({j}, {k}) has non-positive conductance {b[2]}")
            if kind != "D" and not np.isfinite(b[2]):
                raise NetlistError(f"{kind} branch ({j}, {k}) has a non-finite value")

    # voltage sources: a forest (no cycles) whose every edge hangs off ground
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for j, k, _ in graph.voltage_sources:
        rj, rk = find(j), find(k)
        if rj == rk:
            raise NetlistError(f"voltage sources form a loop through ({j}, {k}); they must form a tree")
        parent[rj] = rk
    root = find(graph.ground)
    for j, k, _ in graph.voltage_sources:
        if find(j) != root:
            raise NetlistError(
                f"voltage source ({j}, {k}) is not connected to ground through other voltage sources"
            )

    pinned = np.array([find(a) == root for a in range(n)])
    degree = np.zeros(n, dtype=int)
    for j, k, _ in graph.resistors:
        degree[j] += 1
        degree[k] += 1
    lonely = np.flatnonzero(~pinned & (degree == 0))
    if lonely.size:
        raise NetlistError(f"free node {int(lonely[0])} has no incident resistor")

    # every free island must reach a pinned node through resistors, else E has a flat direction
    rparent = list(range(n))

    def rfind(a):
        while rparent[a] != a:
            rparent[a] = rparent[rparent[a]]
            a = rparent[a]
        return a

    for j, k, _ in graph.resistors:
        rparent[rfind(j)] = rfind(k)
    anchored = {rfind(a) for a in range(n) if pinned[a]}
    for a in range(n):
        if not pinned[a] and rfind(a) not in anchored:
            raise NetlistError(f"free node {a} is not connected to any pinned node through resistors")


# ---------------------------------------------------------------------------
# netlist text format

def parse_netlist(text: str) -> CircuitGraph:
    """Parse the line-oriented netlist format into a validated graph."""
    n_nodes = None
    ground = None
    branches = {"R": [], "CS": [], "VS": [], "D": []}
    origin = {}
    arity = {"R": 3, "CS": 3, "VS": 3, "D": 2}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        key = tokens[0].upper()
        args = tokens[1:]
        if n_nodes is None and key != "NODES":
            raise NetlistError("NODES must be the first directive", lineno)
        if key == "NODES":
            if n_nodes is not None:
                raise NetlistError("duplicate NODES directive", lineno)
            n_nodes = _int_args(args, 1, lineno)[0]
            if n_nodes < 1:
                raise NetlistError("NODES must be positive", lineno)
        elif key == "GROUND":
            if ground is not None:
                raise NetlistError("duplicate GROUND directive", lineno)
            ground = _int_args(args, 1, lineno)[0]
            _check_node(ground, n_nodes, lineno)
        elif key in arity:
            if len(args) != arity[key]:
                raise NetlistError(f"{key} expects {arity[key]} arguments, got {len(args)}", lineno)
            j, k = _int_args(args[:2], 2, lineno)
            _check_node(j, n_nodes, lineno)
            _check_node(k, n_nodes, lineno)
            if key == "D":
                branches[key].append((j, k))
            else:
                try:
                    value = float(args[2])
                except ValueError:
                    raise NetlistError(f"bad numeric value {args[2]!r}", lineno) from None
                if key == "R" and not value > 0:
                    raise NetlistError(f"resistor conductance must be > 0, got {args[2]}", lineno)
                branches[key].append((j, k, value))
            origin[(key, len(branches[key]) - 1)] = lineno
        else:
            raise NetlistError(f"unknown directive {tokens[0]!r}", lineno)

    if n_nodes is None:
        raise NetlistError("missing NODES directive")
    if ground is None:
        raise NetlistError("missing GROUND directive")
    try:
        return CircuitGraph(
            n_nodes=n_nodes,
            ground=ground,
            resistors=tuple(branches["R"]),
            current_sources=tuple(branches["CS"]),
            voltage_sources=tuple(branches["VS"]),
            diodes=tuple(branches["D"]),
        )
    except NetlistError as exc:
        line = _locate(str(exc), branches, origin)
        raise NetlistError(str(exc), line) from None


def _int_args(args, count, lineno):
    if len(args) != count:
        raise NetlistError(f"expected {count} integer argument(s), got {len(args)}", lineno)
    try:
        return [int(a) for a in args]
    except ValueError:
        raise NetlistError(f"bad integer in {' '.join(args)!r}", lineno) from None


def _check_node(idx, n_nodes, lineno):
    if not 0 <= idx < n_nodes:
        raise NetlistError(f"dangling node index {idx} (NODES {n_nodes})", lineno)


def _locate(message, branches, origin):
    # best effort: point at the voltage source named in a topology error
    if "voltage source" in message:
        for idx, (j, k, _) in enumerate(branches["VS"]):
            if f"({j}, {k})" in message:
                return origin.get(("VS", idx))
    return None


def serialize_netlist(graph: CircuitGraph) -> str:
    """Inverse of :func:`parse_netlist`; floats are written with ``repr`` so values round-trip exactly."""
    lines = [f"NODES {graph.n_nodes}", f"GROUND {graph.ground}"]
    lines += [f"VS {j} {k} {v!r}" for j, k, v in graph.voltage_sources]
    lines += [f"R {j} {k} {g!r}" for j, k, g in graph.resistors]
    lines += [f"CS {j} {k} {i!r}" for j, k, i in graph.current_sources]
    lines += [f"D {j} {k}" for j, k in graph.diodes]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# energy and feasibility

def energy(graph: CircuitGraph, state: PotentialState | np.ndarray) -> float:
    """Half the resistor power plus the current-source power."""
    v = state.v if isinstance(state, PotentialState) else np.asarray(state, dtype=float)
    total = 0.0
    if graph.resistors:
        j, k, g = _columns(graph.resistors)
        total += 0.5 * float(np.sum(g * (v[j] - v[k]) ** 2))
    if graph.current_sources:
        j, k, i = _columns(graph.current_sources)
        total += float(np.sum(i * (v[j] - v[k])))
    return total


def _columns(branches):
    arr = np.asarray(branches, dtype=float)
    return arr[:, 0].astype(int), arr[:, 1].astype(int), arr[:, 2]


def pin_potentials(graph: CircuitGraph) -> PotentialState:
    """Ground at 0, voltage-source tree nodes at their implied potentials, free nodes at 0."""
    v, pinned = graph._pinning
    return PotentialState(v.copy(), pinned.copy())


def check_feasible(graph: CircuitGraph, state: PotentialState, tol: float = 1e-9) -> tuple[bool, list[Violation]]:
    """Return whether ``state`` lies in the feasible set, listing every offending branch."""
    v = state.v
    violations = []
    for j, k in graph.diodes:
        excess = v[j] - v[k]
        if excess > tol:
            violations.append(Violation("D", j, k, float(excess)))
    for j, k, v0 in graph.voltage_sources:
        err = abs(v[j] - v[k] - v0)
        if err > tol:
            violations.append(Violation("VS", j, k, float(err)))
    return not violations, violations


@dataclass
class DiodeBounds:
    """Tightest interval each node can occupy given the pinned potentials and diode chains."""

    lower: np.ndarray
    upper: np.ndarray
    lower_src: list = field(default_factory=list)
    upper_src: list = field(default_factory=list)


def diode_bounds(graph: CircuitGraph) -> DiodeBounds:
    """Propagate pinned potentials along diode chains.

    ``lower[k]`` is the largest pinned potential that must sit below ``k`` and
    ``upper[k]`` the smallest that must sit above it.  The feasible set is
    non-empty exactly when ``lower <= upper`` everywhere.
    """
    v, pinned = graph._pinning
    n = graph.n_nodes
    lower = np.where(pinned, v, -np.inf)
    upper = np.where(pinned, v, np.inf)
    lower_src: list = [None] * n
    upper_src: list = [None] * n
    for _ in range(n + 1):
        changed = False
        for j, k in graph.diodes:
            if lower[j] > lower[k]:
                lower[k] = lower[j]
                lower_src[k] = (j, k)
                changed = True
            if upper[k] < upper[j]:
                upper[j] = upper[k]
                upper_src[j] = (j, k)
                changed = True
        if not changed:
            break
    return DiodeBounds(lower, upper, lower_src, upper_src)


def feasible_start(graph: CircuitGraph, tol: float = 1e-12) -> PotentialState:
    """Pinned potentials with free nodes at 0, moved just enough to satisfy every diode.

    Raises :class:`InfeasibleBounds` when no feasible configuration exists.
    """
    state = pin_potentials(graph)
    if not graph.diodes:
        return state
    bounds = diode_bounds(graph)
    scale = tol * max(1.0, float(np.max(np.abs(state.v))))
    bad = np.flatnonzero(bounds.lower > bounds.upper + scale)
    if bad.size:
        # name a free node when one is squeezed: its two diodes explain the conflict
        free_bad = bad[~state.pinned[bad]]
        k = int(free_bad[0] if free_bad.size else bad[0])
        raise InfeasibleBounds(k, float(bounds.lower[k]), float(bounds.upper[k]),
                               bounds.lower_src[k], bounds.upper_src[k])
    free = ~state.pinned
    state.v[free] = np.clip(0.0, bounds.lower[free], bounds.upper[free])
    return state
