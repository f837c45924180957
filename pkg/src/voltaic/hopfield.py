"""Layered continuous Hopfield networks with hard-sigmoid units, plus the map
that rewrites a resistive circuit as an ideal Hopfield energy.

A DHN unit minimises its own energy exactly at s = clip(u, 0, 1), u being
its net input; as with DRNs, layers of equal parity are updated together.
Unlike a DRN the joint energy need not be convex, so block descent may
settle slowly or at one of several minima.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .circuit import CircuitGraph, PotentialState
from .container import read_container, write_container
from .errors import NonConvexNudge, ZeroConductanceNode

MAGIC = b"DHN1"


def hard_sigmoid(u):
    return np.clip(u, 0.0, 1.0)


@dataclass
class DhnModel:
    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        for l, (W, b) in enumerate(zip(self.weights, self.biases), start=1):
            if W.shape != (self.sizes[l - 1], self.sizes[l]) or b.shape != (self.sizes[l],):
                raise ValueError(f"layer {l}: parameter shapes do not match sizes")

    @property
    def L(self) -> int:
        return len(self.sizes) - 1

    @property
    def n_weights(self) -> int:
        return sum(W.size for W in self.weights)

    def copy(self) -> "DhnModel":
        return DhnModel(self.sizes, [W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def save(self, path) -> None:
        write_container(path, MAGIC, self.sizes, 1.0, np.ones(self.L), self.weights, self.biases)

    @classmethod
    def load(cls, path) -> "DhnModel":
        sizes, _, _, weights, biases = read_container(path, MAGIC)
        return cls(tuple(sizes), weights, biases)


def init_dhn(sizes, rng_seed: int = 0) -> DhnModel:
    """Signed uniform weights U(-c, c), c = 1/sqrt(N_in); zero biases."""
    rng = np.random.default_rng(rng_seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        c = math.sqrt(1.0 / n_in)
        weights.append(rng.uniform(-c, c, size=(n_in, n_out)))
        biases.append(np.zeros(n_out))
    return DhnModel(tuple(sizes), weights, biases)


@dataclass
class DhnStates:
    S: list[np.ndarray]
    energy_trace: list[np.ndarray] = field(default_factory=list)
    iterations: int = 0

    @property
    def output(self) -> np.ndarray:
        return self.S[-1]

    def copy(self) -> "DhnStates":
        return DhnStates([s.copy() for s in self.S], [], self.iterations)


def net_input(model: DhnModel, S, l: int) -> np.ndarray:
    u = S[l - 1] @ model.weights[l - 1] + model.biases[l - 1]
    if l < model.L:
        u = u + S[l + 1] @ model.weights[l].T
    return u


def hopfield_update(model: DhnModel, S, l: int, k: int) -> float:
    """Exact single-unit update s_k = clip(sum_j w_jk s_j + b_k, 0, 1), in place."""
    u = S[l - 1] @ model.weights[l - 1][:, k] + model.biases[l - 1][k]
    if l < model.L:
        u = u + S[l + 1] @ model.weights[l][k, :]
    S[l][..., k] = hard_sigmoid(u)
    return S[l][..., k]


def _layer_update(model, S, l, beta, targets):
    u = net_input(model, S, l)
    if l == model.L and beta != 0.0:
        # unit self-energy s^2/2 plus beta/2 (s - y)^2
        u = (u + beta * targets) / (1.0 + beta)
    S[l] = hard_sigmoid(u)


def dhn_block_descent(model: DhnModel, x, beta: float = 0.0, targets=None, iters: int = 15,
                      init: DhnStates | None = None, record_energy: bool = False,
                      tol: float | None = None) -> DhnStates:
    """Even/odd layer-group sweeps with the input layer clamped to raw x."""
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if beta != 0.0 and 1.0 + beta <= 0.0:
        raise NonConvexNudge(f"1 + beta = {1.0 + beta:.3g} <= 0")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if init is None:
        states = DhnStates([x] + [np.zeros((x.shape[0], n)) for n in model.sizes[1:]])
    else:
        states = init.copy()
        states.S[0] = x
    groups = [[l for l in range(1, model.L + 1) if l % 2 == 0],
              [l for l in range(1, model.L + 1) if l % 2 == 1]]
    if record_energy:
        states.energy_trace.append(dhn_energy(model, states.S, beta, targets))
    for t in range(iters):
        moved = 0.0
        for group in groups:
            for l in group:
                old = states.S[l]
                _layer_update(model, states.S, l, beta, targets)
                if tol is not None:
                    moved = max(moved, float(np.max(np.abs(states.S[l] - old))))
            if record_energy:
                states.energy_trace.append(dhn_energy(model, states.S, beta, targets))
        states.iterations = t + 1
        if tol is not None and moved < tol:
            break
    return states


def dhn_energy(model: DhnModel, S, beta: float = 0.0, targets=None) -> np.ndarray:
    """Per-sample ideal Hopfield energy of the non-input units, plus the nudge term."""
    total = np.zeros(S[0].shape[0])
    for l in range(1, model.L + 1):
        s = S[l]
        total += 0.5 * np.sum(s * s, axis=1)
        total -= np.sum((S[l - 1] @ model.weights[l - 1]) * s, axis=1)
        total -= s @ model.biases[l - 1]
    if beta != 0.0:
        total += 0.5 * beta * np.sum((S[-1] - targets) ** 2, axis=1)
    return total


def dhn_predict(model: DhnModel, x, iters: int = 15) -> np.ndarray:
    return np.argmax(dhn_block_descent(model, x, iters=iters).output, axis=1)


@dataclass
class HopfieldMapping:
    """Result of rewriting a circuit in scaled variables s = sqrt(G) v."""
    scale: np.ndarray           # sqrt(G_j) per node
    edges: list[tuple[int, int, float]]   # (j, k, w_jk), one per resistor
    b: np.ndarray
    fixed: dict[int, float]     # pinned nodes: s value implied by the voltage sources
    diodes: list[tuple[int, int, float, float]]   # (j, k, 1/sqrt(G_j), 1/sqrt(G_k)): s_j/sqrt(G_j) <= s_k/sqrt(G_k)

    def to_s(self, v) -> np.ndarray:
        v = v.v if isinstance(v, PotentialState) else np.asarray(v, dtype=float)
        return self.scale * v

    @property
    def W(self) -> np.ndarray:
        n = self.scale.size
        W = np.zeros((n, n))
        for j, k, w in self.edges:
            W[j, k] += w
            W[k, j] += w
        return W

    def energy(self, s) -> float:
        """Ideal Hopfield energy: 1/2 sum s^2 - sum over resistors w s_j s_k - sum b s."""
        s = np.asarray(s, dtype=float)
        pair = sum(w * s[j] * s[k] for j, k, w in self.edges)
        return float(0.5 * s @ s - pair - self.b @ s)


def resistive_to_hopfield(graph: CircuitGraph) -> HopfieldMapping:
    G = graph.conductance_sums
    if np.any(G <= 0):
        j = int(np.argmin(G))
        raise ZeroConductanceNode(f"node {j} has no incident resistor (G_j = 0)")
    scale = np.sqrt(G)
    edges = [(j, k, g / (scale[j] * scale[k])) for j, k, g in graph.resistors]
    b = graph.injected_currents / scale
    pinned_v, pinned = graph._pinning
    fixed = {int(j): float(scale[j] * pinned_v[j]) for j in np.flatnonzero(pinned)}
    diodes = [(j, k, 1.0 / scale[j], 1.0 / scale[k]) for j, k in graph.diodes]
    return HopfieldMapping(scale, edges, b, fixed, diodes)
