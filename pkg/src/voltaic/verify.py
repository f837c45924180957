"""Random-network cross-validation of the coordinate-descent solver against the oracle."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import TextIO

import numpy as np

from .circuit import CircuitGraph, feasible_start
from .errors import InfeasibleBounds, InfeasibleProblem, NoFeasibleActiveSet
from .oracle import kkt_residual, solve_enumerate
from .solver import SolveOptions, SweepOrder, solve


def random_circuit(rng: np.random.Generator, max_nodes: int = 12, max_diodes: int = 8,
                   min_nodes: int = 3, feasible: bool = True) -> CircuitGraph:
    """Draw a valid network mixing voltage sources, current sources, resistors and diodes.

    A random resistor spanning tree keeps every node anchored; a random subset of
    nodes is pinned through a voltage-source tree rooted at ground.  With
    ``feasible`` set, draws whose diodes make the feasible set empty are rejected.
    """
    while True:
        n = int(rng.integers(min_nodes, max_nodes + 1))
        order = rng.permutation(n)
        resistors = []
        for pos in range(1, n):
            j, k = int(order[pos]), int(order[rng.integers(pos)])
            resistors.append((j, k, _conductance(rng)))
        for _ in range(int(rng.integers(0, n + 1))):
            j, k = rng.choice(n, size=2, replace=False)
            resistors.append((int(j), int(k), _conductance(rng)))

        n_pinned = int(rng.integers(0, max(1, n // 3) + 1))
        pinned = [0]
        sources = []
        for node in rng.permutation(np.arange(1, n))[:n_pinned]:
            parent = int(rng.choice(pinned))
            sources.append((int(node), parent, float(rng.uniform(-2.0, 2.0))))
            pinned.append(int(node))

        currents = []
        for _ in range(int(rng.integers(0, 4))):
            j, k = rng.choice(n, size=2, replace=False)
            currents.append((int(j), int(k), float(rng.uniform(-1.0, 1.0))))

        diodes = []
        for _ in range(int(rng.integers(0, max_diodes + 1))):
            j, k = rng.choice(n, size=2, replace=False)
            diodes.append((int(j), int(k)))

        graph = CircuitGraph(n, 0, tuple(resistors), tuple(currents), tuple(sources), tuple(diodes))
        if not feasible:
            return graph
        try:
            feasible_start(graph)
        except InfeasibleBounds:
            continue
        return graph


def _conductance(rng):
    return float(np.exp(rng.uniform(np.log(0.2), np.log(5.0))))


@dataclass
class VerifyRow:
    seed: int
    n_nodes: int
    n_diodes: int
    max_abs_diff: float
    kkt_residual: float
    status: str = "ok"


def verify_instance(graph: CircuitGraph, seed: int, solver_tol: float = 1e-13,
                    max_sweeps: int = 200000) -> VerifyRow:
    options = SolveOptions(max_sweeps=max_sweeps, tol=solver_tol, order=SweepOrder.ASCENDING, rng_seed=seed)
    try:
        state, _ = solve(graph, options)
    except InfeasibleProblem:
        state = None
    try:
        ref = solve_enumerate(graph)
    except NoFeasibleActiveSet:
        ref = None
    if state is None or ref is None:
        agree = state is None and ref is None
        return VerifyRow(seed, graph.n_nodes, len(graph.diodes), 0.0 if agree else float("inf"),
                         0.0 if agree else float("inf"), "infeasible" if agree else "mismatch")
    diff = float(np.max(np.abs(state.v - ref.v)))
    kkt = kkt_residual(graph, state).worst
    return VerifyRow(seed, graph.n_nodes, len(graph.diodes), diff, kkt)


def run_suite(count: int, max_nodes: int = 12, max_diodes: int = 8, seed: int = 0,
              solver_tol: float = 1e-13) -> list[VerifyRow]:
    """Solve ``count`` random networks both ways; instance ``i`` uses seed ``seed + i``."""
    rows = []
    for i in range(count):
        s = seed + i
        graph = random_circuit(np.random.default_rng(s), max_nodes=max_nodes, max_diodes=max_diodes)
        rows.append(verify_instance(graph, s, solver_tol))
    return rows


def write_rows(rows: list[VerifyRow], fh: TextIO) -> None:
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["seed", "n_nodes", "n_diodes", "max_abs_diff", "kkt_residual"])
    for r in rows:
        writer.writerow([r.seed, r.n_nodes, r.n_diodes, f"{r.max_abs_diff:.3e}", f"{r.kkt_residual:.3e}"])
