"""Brute-force reference solver and KKT certificate for small networks.

The steady state is characterised by the KKT conditions of the energy
minimisation: stationarity of the Lagrangian, with diode currents as
non-negative multipliers of the diode inequalities and voltage-source
currents as free multipliers of the equalities.  For a guessed set of
conducting ("on") diodes the conditions reduce to one linear system, so
enumerating subsets finds the exact solution.  This module shares no code
path with :mod:`voltaic.solver` beyond the graph itself.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import lsq_linear

from .circuit import CircuitGraph, PotentialState
from .errors import EnumerationBudgetExceeded, NoFeasibleActiveSet

log = logging.getLogger(__name__)

MAX_ENUMERATED_DIODES = 20
BINDING_TOL = 1e-7


@dataclass
class ActiveSetSolution:
    v: np.ndarray
    on_diodes: tuple[int, ...]
    diode_currents: np.ndarray
    vs_currents: np.ndarray
    residuals: dict = field(default_factory=dict)

    def state(self, graph: CircuitGraph) -> PotentialState:
        return PotentialState(self.v.copy(), graph.pinned_mask.copy())


@dataclass
class KktReport:
    stationarity: float
    primal_violation: float
    min_multiplier: float
    binding: list[tuple[int, int]]
    diode_currents: np.ndarray
    vs_currents: np.ndarray

    @property
    def worst(self) -> float:
        return max(self.stationarity, self.primal_violation)


def _constraint_rows(graph: CircuitGraph, diode_idx) -> tuple[np.ndarray, np.ndarray]:
    """Equality rows: ground reference, voltage sources, then the chosen diodes."""
    n = graph.n_nodes
    rows = [np.eye(n)[graph.ground]]
    rhs = [0.0]
    for j, k, v0 in graph.voltage_sources:
        r = np.zeros(n)
        r[j], r[k] = 1.0, -1.0
        rows.append(r)
        rhs.append(v0)
    for d in diode_idx:
        j, k = graph.diodes[d]
        r = np.zeros(n)
        r[j], r[k] = 1.0, -1.0
        rows.append(r)
        rhs.append(0.0)
    return np.array(rows), np.array(rhs)


def _solve_equality_qp(graph: CircuitGraph, active):
    n = graph.n_nodes
    C, d = _constraint_rows(graph, active)
    m = C.shape[0]
    K = np.zeros((n + m, n + m))
    K[:n, :n] = graph.laplacian
    K[:n, n:] = C.T
    K[n:, :n] = C
    rhs = np.concatenate([graph.injected_currents, d])
    if np.linalg.matrix_rank(K) < n + m:
        return None
    sol = np.linalg.solve(K, rhs)
    return sol[:n], sol[n:]


def enumerate_active_sets(graph: CircuitGraph, tol: float = 1e-9, first_only: bool = False):
    """Yield every diode subset whose equality-constrained optimum satisfies the KKT conditions.

    Subsets are visited in increasing cardinality.
    """
    nd = len(graph.diodes)
    if nd > MAX_ENUMERATED_DIODES:
        raise EnumerationBudgetExceeded(f"{nd} diodes exceeds the enumeration budget of {MAX_ENUMERATED_DIODES}")
    n_vs = len(graph.voltage_sources)
    for size in range(nd + 1):
        for active in itertools.combinations(range(nd), size):
            out = _solve_equality_qp(graph, active)
            if out is None:
                log.debug("skipping singular active set %s", active)
                continue
            v, mult = out
            scale = tol * max(1.0, float(np.max(np.abs(v))))
            lam = mult[1 + n_vs:]
            if lam.size and lam.min() < -scale:
                continue
            off = [i for i in range(nd) if i not in active]
            if off:
                jj = np.array([graph.diodes[i][0] for i in off])
                kk = np.array([graph.diodes[i][1] for i in off])
                if np.max(v[jj] - v[kk]) > scale:
                    continue
            yield ActiveSetSolution(
                v=v,
                on_diodes=active,
                diode_currents=lam,
                vs_currents=mult[1:1 + n_vs],
                residuals={"ground_multiplier": float(mult[0])},
            )
            if first_only:
                return


def solve_enumerate(graph: CircuitGraph, tol: float = 1e-9) -> ActiveSetSolution:
    """Exact steady state by active-set enumeration (at most 2**|diodes| linear solves)."""
    for sol in enumerate_active_sets(graph, tol, first_only=True):
        sol.residuals.update(_report_fields(kkt_residual(graph, sol.v)))
        return sol
    raise NoFeasibleActiveSet("no diode active set satisfies the KKT conditions: the feasible set is empty")


def _report_fields(rep: KktReport) -> dict:
    return {"stationarity": rep.stationarity, "primal_violation": rep.primal_violation,
            "min_multiplier": rep.min_multiplier}


def kkt_residual(graph: CircuitGraph, state: PotentialState | np.ndarray,
                 tol: float = BINDING_TOL) -> KktReport:
    """Certify a candidate steady state.

    Diodes within ``tol`` volts of equality are treated as binding; the best
    non-negative binding-diode currents and free voltage-source currents are
    recovered by bounded least squares, and the leftover Lagrangian gradient
    is reported as the stationarity residual.
    """
    v = state.v if isinstance(state, PotentialState) else np.asarray(state, dtype=float)
    grad = graph.laplacian @ v - graph.injected_currents

    primal = 0.0
    binding = []
    for idx, (j, k) in enumerate(graph.diodes):
        gap = v[j] - v[k]
        primal = max(primal, gap)
        if abs(gap) <= tol:
            binding.append(idx)
    for j, k, v0 in graph.voltage_sources:
        primal = max(primal, abs(v[j] - v[k] - v0))

    C, _ = _constraint_rows(graph, binding)
    n_free_mult = 1 + len(graph.voltage_sources)
    lb = np.concatenate([np.full(n_free_mult, -np.inf), np.zeros(len(binding))])
    ub = np.full(C.shape[0], np.inf)
    fit = lsq_linear(C.T, -grad, bounds=(lb, ub), method="bvls", tol=1e-14)
    mult = fit.x
    resid = grad + C.T @ mult
    lam = mult[n_free_mult:]
    return KktReport(
        stationarity=float(np.max(np.abs(resid))),
        primal_violation=float(primal),
        min_multiplier=float(lam.min()) if lam.size else 0.0,
        binding=[graph.diodes[i] for i in binding],
        diode_currents=lam,
        vs_currents=mult[1:n_free_mult],
    )
