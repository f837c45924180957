"""Exact coordinate descent for the steady state of an arbitrary network.

Each node update minimises the energy along one free coordinate in closed
form: the conductance-weighted average of the neighbours (plus injected
current) clipped to the interval allowed by the incident diodes.  Sweeps
update the free nodes in place, Gauss-Seidel style.

Single-coordinate moves cannot leave a corner where a diode between two
free nodes binds: neither endpoint may move alone although moving both
together lowers the energy.  Near degenerate corners they also crawl.  So
when a sweep stalls, two group moves are tried before declaring
convergence: :func:`face_step` merges the endpoints of (nearly) closed
diodes and minimises the energy exactly on that face, and
:func:`escape_step` looks for a descent direction in the cone allowed by the
binding diodes (a linear program whose vertices move whole groups of nodes
by the same amount).  Both finish with an exact, feasibility-limited line
search, so the energy still never increases.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum
from typing import TextIO

import numpy as np

from scipy.optimize import linprog

from .circuit import CircuitGraph, PotentialState, energy, feasible_start
from .errors import InfeasibleBounds, InfeasibleProblem


class SweepOrder(str, Enum):
    ASCENDING = "asc"
    RANDOM = "rand"


@dataclass
class SolveOptions:
    max_sweeps: int = 10000
    tol: float = 1e-9
    order: SweepOrder = SweepOrder.ASCENDING
    rng_seed: int = 0
    escape: bool = True

    def __post_init__(self):
        self.order = SweepOrder(self.order)
        if self.max_sweeps < 1:
            raise ValueError("max_sweeps must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")


@dataclass
class SolveReport:
    sweeps_run: int = 0
    final_energy: float = float("nan")
    energy_trace: list[float] = field(default_factory=list)
    delta_trace: list[float] = field(default_factory=list)
    converged: bool = False
    max_delta_v: float = float("inf")
    escapes: int = 0

    def write_trace(self, fh: TextIO) -> None:
        """Write the per-sweep trace as CSV: sweep,energy,max_delta_v."""
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["sweep", "energy", "max_delta_v"])
        for t, (e, d) in enumerate(zip(self.energy_trace, self.delta_trace), start=1):
            writer.writerow([t, repr(e), repr(d)])


def update_node(graph: CircuitGraph, state: PotentialState, k: int) -> float:
    """Move free node ``k`` to its energy-minimising potential; returns the new value."""
    link = graph.adjacency[k]
    v = state.v
    num = link.injected
    for j, g in zip(link.neighbors, link.conductances):
        num += g * v[j]
    p = num / link.total_conductance
    v_min = -np.inf
    lo_src = None
    for j in link.below:
        if v[j] > v_min:
            v_min, lo_src = v[j], (j, k)
    v_max = np.inf
    hi_src = None
    for m in link.above:
        if v[m] < v_max:
            v_max, hi_src = v[m], (k, m)
    if v_min > v_max:
        raise InfeasibleBounds(k, float(v_min), float(v_max), lo_src, hi_src)
    new = min(max(v_min, p), v_max)
    v[k] = new
    return new


def sweep(graph: CircuitGraph, state: PotentialState, order=None) -> float:
    """Update every free node once, in ``order`` (default ascending); returns max |dv|."""
    if order is None:
        order = graph.free_nodes
    v = state.v
    biggest = 0.0
    for k in order:
        old = v[k]
        new = update_node(graph, state, int(k))
        d = abs(new - old)
        if d > biggest:
            biggest = d
    return biggest


def solve(graph: CircuitGraph, options: SolveOptions | None = None,
          state: PotentialState | None = None) -> tuple[PotentialState, SolveReport]:
    """Run sweeps until the largest update falls below ``options.tol``.

    Starts from the pinned potentials with free nodes at 0 (nudged into the
    diode bounds when 0 is infeasible) unless an initial feasible ``state``
    is supplied.
    """
    options = options or SolveOptions()
    try:
        if state is None:
            state = feasible_start(graph)
        else:
            state = state.copy()
    except InfeasibleBounds as exc:
        raise InfeasibleProblem(exc) from exc

    rng = np.random.default_rng(options.rng_seed)
    free = graph.free_nodes
    report = SolveReport()
    for t in range(options.max_sweeps):
        order = rng.permutation(free) if options.order is SweepOrder.RANDOM else free
        try:
            delta = sweep(graph, state, order)
        except InfeasibleBounds as exc:
            raise InfeasibleProblem(exc) from exc
        report.sweeps_run = t + 1
        report.energy_trace.append(energy(graph, state))
        report.delta_trace.append(delta)
        if delta < options.tol or free.size == 0:
            # group moves below the sweep tolerance are rounding noise, not progress
            step = 0.0
            if options.escape and graph.diodes and free.size:
                step = face_step(graph, state)
                if step <= options.tol:
                    step = escape_step(graph, state)
            if step > options.tol:
                report.escapes += 1
                delta = max(delta, step)
                report.energy_trace[-1] = energy(graph, state)
            else:
                report.max_delta_v = delta
                report.delta_trace[-1] = delta
                report.converged = True
                break
        report.delta_trace[-1] = delta
        report.max_delta_v = delta
    report.final_energy = report.energy_trace[-1] if report.energy_trace else energy(graph, state)
    return state, report


def escape_step(graph: CircuitGraph, state: PotentialState, binding_tol: float = 1e-6,
                slope_tol: float = 1e-12) -> float:
    """Take one exact line-minimisation step along the steepest feasible group move.

    Diodes within ``binding_tol`` (relative to the largest potential) of
    equality count as binding when the direction is chosen, so nearly closed
    diodes move with their group instead of cutting every step short; the
    line search still honours the true gaps.  Returns the largest potential
    change made, or 0.0 when no feasible descent direction exists.
    """
    pinned = state.pinned
    v = state.v
    scale = max(1.0, float(np.max(np.abs(v))))
    tight = []
    for j, k in graph.diodes:
        if not pinned[j] and not pinned[k] and v[j] - v[k] >= -binding_tol * scale:
            tight.append((j, k))
    if not tight:
        return 0.0

    free = graph.free_nodes
    col = {int(node): i for i, node in enumerate(free)}
    grad = graph.laplacian @ v - graph.injected_currents
    lo = np.full(free.size, -1.0)
    hi = np.full(free.size, 1.0)
    for j, k in graph.diodes:
        if v[j] - v[k] < -binding_tol * scale:
            continue
        if pinned[j] and not pinned[k]:
            lo[col[k]] = 0.0
        elif pinned[k] and not pinned[j]:
            hi[col[j]] = 0.0
    rows = np.zeros((len(tight), free.size))
    for r, (j, k) in enumerate(tight):
        rows[r, col[j]] = 1.0
        rows[r, col[k]] = -1.0
    res = linprog(grad[free], A_ub=rows, b_ub=np.zeros(len(tight)),
                  bounds=list(zip(lo, hi)), method="highs")
    if res.status != 0:
        return 0.0
    slope = float(res.fun)
    if slope >= -slope_tol * max(1.0, float(np.max(np.abs(grad[free])))):
        return 0.0

    d = np.zeros(graph.n_nodes)
    d[free] = np.round(res.x, 12)
    t = _line_search(graph, v, d)
    if t <= 0.0:
        return 0.0
    v += t * d
    return float(t * np.max(np.abs(d)))

def _line_search(graph: CircuitGraph, v: np.ndarray, d: np.ndarray, t_max: float = np.inf) -> float:
    """Exact minimiser of E(v + t d) over 0 <= t <= t_max, shortened to keep every diode satisfied."""
    grad = graph.laplacian @ v - graph.injected_currents
    slope = float(grad @ d)
    if slope >= 0.0:
        return 0.0
    curvature = float(d @ graph.laplacian @ d)
    t = -slope / curvature if curvature > 0 else t_max
    t = min(t, t_max)
    for j, k in graph.diodes:
        rate = d[j] - d[k]
        if rate > 0:
            t = min(t, max(0.0, (v[k] - v[j]) / rate))
    return t if np.isfinite(t) else 0.0


def face_step(graph: CircuitGraph, state: PotentialState, tight_tol: float = 1e-6) -> float:
    """Move toward the energy minimiser on the face where every nearly closed diode is closed.

    Endpoints of diodes within ``tight_tol`` (relative) of equality are merged
    into groups; the reduced Laplacian system over the free groups is solved
    directly.  Returns the largest potential change made (0.0 if none).
    """
    v, pinned = state.v, state.pinned
    n = graph.n_nodes
    scale = max(1.0, float(np.max(np.abs(v))))
    parent = list(range(n))
    value = {int(a): float(v[a]) for a in np.flatnonzero(pinned)}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for j, k in graph.diodes:
        if v[j] - v[k] < -tight_tol * scale:
            continue
        rj, rk = find(j), find(k)
        if rj == rk:
            continue
        if rj in value and rk in value:
            if abs(value[rj] - value[rk]) > 1e-12 * scale:
                continue
        if rj in value:
            rj, rk = rk, rj
        parent[rj] = rk       # a pinned root stays the root
    roots = np.array([find(a) for a in range(n)])
    free_roots = sorted({int(r) for r in roots} - set(value))
    if not free_roots:
        return 0.0
    col = {r: i for i, r in enumerate(free_roots)}
    m = len(free_roots)
    A = np.zeros((m, m))
    rhs = np.zeros(m)
    inj = graph.injected_currents
    for a in range(n):
        r = int(roots[a])
        if r in col:
            rhs[col[r]] += inj[a]
    for j, k, g in graph.resistors:
        rj, rk = int(roots[j]), int(roots[k])
        if rj == rk:
            continue
        for p, q in ((rj, rk), (rk, rj)):
            if p in col:
                A[col[p], col[p]] += g
                if q in col:
                    A[col[p], col[q]] -= g
                else:
                    rhs[col[p]] += g * value[q]
    try:
        x = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        return 0.0
    target = v.copy()
    for a in range(n):
        r = int(roots[a])
        if not pinned[a]:
            target[a] = x[col[r]] if r in col else value[r]
    d = target - v
    if not np.any(d):
        return 0.0
    t = _line_search(graph, v, d, 1.0)
    if t <= 0.0:
        return 0.0
    v += t * d
    return float(t * np.max(np.abs(d)))
