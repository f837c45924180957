"""Deep resistive networks: layered circuits solved by exact block coordinate descent.

Layer 0 holds the input voltage sources (each input appears twice, at +A x
and -A x).  Hidden units carry a diode to ground: 1-based even units are
excitatory (v >= 0) and odd ones inhibitory (v <= 0), which in 0-based
arrays means index 1, 3, 5, ... is excitatory.  Output units are
unconstrained and can be tied to target voltages through a nudging branch.

Units in one layer only talk to the adjacent layers, so every layer of the
same parity can be set to its exact conditional minimiser at once.

Optional bidirectional amplifiers with per-layer gains a[l] turn the state
into amplified voltages; in the rescaled coordinates v / c[l] (c is the
running product of gains) the network is again a plain resistive circuit,
which is how :func:`drn_to_circuit` flattens it.  Bias currents enter that
rescaled circuit as b / c[l], giving the energy term -b v / c[l]**2; the
nudge term is beta / (2 c[L]**2) (v - y)**2.  Both reduce to the usual
terms when every gain is 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .circuit import CircuitGraph
from .container import read_container, write_container
from .errors import NonConvexNudge, ZeroDenominator

MAGIC = b"DRN1"


def excitatory_mask(n: int) -> np.ndarray:
    """True where a hidden unit is excitatory (1-based even index)."""
    return np.arange(n) % 2 == 1


@dataclass
class DrnModel:
    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    gains: np.ndarray
    A: float = 1.0

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        self.gains = np.asarray(self.gains, dtype=float)
        if len(self.sizes) < 2:
            raise ValueError("a DRN needs at least an input and an output layer")
        if len(self.weights) != self.L or len(self.biases) != self.L or self.gains.shape != (self.L,):
            raise ValueError("weights, biases and gains must have one entry per layer")
        for l, (W, b) in enumerate(zip(self.weights, self.biases), start=1):
            if W.shape != (self.sizes[l - 1], self.sizes[l]) or b.shape != (self.sizes[l],):
                raise ValueError(f"layer {l}: parameter shapes do not match sizes")
        if np.any(self.gains <= 0) or self.A <= 0:
            raise ValueError("gains and A must be positive")

    @property
    def L(self) -> int:
        return len(self.sizes) - 1

    @property
    def amplified(self) -> bool:
        return bool(np.any(self.gains != 1.0))

    @property
    def scales(self) -> np.ndarray:
        """c[0..L]: cumulative gain products, c[0] = 1."""
        return np.concatenate([[1.0], np.cumprod(self.gains)])

    @property
    def n_weights(self) -> int:
        return sum(W.size for W in self.weights)

    def copy(self) -> "DrnModel":
        return DrnModel(self.sizes, [W.copy() for W in self.weights], [b.copy() for b in self.biases],
                        self.gains.copy(), self.A)

    def save(self, path) -> None:
        write_container(path, MAGIC, self.sizes, self.A, self.gains, self.weights, self.biases)

    @classmethod
    def load(cls, path) -> "DrnModel":
        sizes, A, gains, weights, biases = read_container(path, MAGIC)
        return cls(tuple(sizes), weights, biases, gains, A)


def init_weights(sizes, rng_seed: int = 0, A: float = 1.0, gains=None) -> DrnModel:
    """Kaiming-style uniform draw truncated at zero: g = max(0, w), w ~ U(-c, c), c = 1/sqrt(N_in)."""
    rng = np.random.default_rng(rng_seed)
    sizes = tuple(int(s) for s in sizes)
    if min(sizes) < 1:
        raise ValueError("layer sizes must be >= 1")
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        c = math.sqrt(1.0 / n_in)
        weights.append(np.maximum(0.0, rng.uniform(-c, c, size=(n_in, n_out))))
        biases.append(np.zeros(n_out))
    gains = np.ones(len(sizes) - 1) if gains is None else np.asarray(gains, dtype=float)
    return DrnModel(sizes, weights, biases, gains, A)


def encode_input(x, A: float) -> np.ndarray:
    """Interleave +A x and -A x: v[2k-1] = +A x_k, v[2k] = -A x_k (1-based)."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape[:-1] + (2 * x.shape[-1],))
    out[..., 0::2] = A * x
    out[..., 1::2] = -A * x
    return out


class NudgeMode(str, Enum):
    OPEN = "open"
    CLOSED = "closed"


@dataclass
class NudgeSpec:
    beta: float = 0.0
    targets: np.ndarray | None = None
    mode: NudgeMode = NudgeMode.OPEN

    def __post_init__(self):
        self.mode = NudgeMode(self.mode)
        if self.mode is NudgeMode.CLOSED and self.targets is None:
            raise ValueError("closed nudging needs targets")

    @property
    def effective_beta(self) -> float:
        return float(self.beta) if self.mode is NudgeMode.CLOSED else 0.0

    @classmethod
    def closed(cls, beta: float, targets) -> "NudgeSpec":
        return cls(beta, np.asarray(targets, dtype=float), NudgeMode.CLOSED)


OPEN = NudgeSpec()


@dataclass
class LayerStateBatch:
    V: list[np.ndarray]
    denominators: list[np.ndarray | None]
    energy_trace: list[np.ndarray] = field(default_factory=list)
    iterations: int = 0

    @property
    def output(self) -> np.ndarray:
        return self.V[-1]

    def copy(self) -> "LayerStateBatch":
        return LayerStateBatch([v.copy() for v in self.V], list(self.denominators), [], self.iterations)


def layer_denominators(model: DrnModel, beta: float = 0.0) -> list[np.ndarray | None]:
    """Row-sum denominators per layer (index 0 unused); raises if any unit lacks conductance."""
    dens: list[np.ndarray | None] = [None]
    for l in range(1, model.L + 1):
        d = model.weights[l - 1].sum(axis=0)
        if l < model.L:
            d = d + model.weights[l].sum(axis=1)
        elif beta != 0.0:
            d = d + beta
            if np.any(d <= 0):
                k = int(np.argmin(d))
                raise NonConvexNudge(f"output unit {k}: conductance sum + beta = {d[k]:.3g} <= 0")
        if np.any(d <= 0):
            k = int(np.argmin(d))
            raise ZeroDenominator(f"layer {l} unit {k} has no incident conductance")
        dens.append(d)
    return dens


def _denominator(model, states, l, beta, cached):
    if cached and states.denominators[l] is not None:
        return states.denominators[l]
    return layer_denominators(model, beta)[l]


def hidden_block_update(model: DrnModel, states: LayerStateBatch, l: int, cached: bool = True,
                        use_amplifiers: bool | None = None) -> np.ndarray:
    """Set every unit of hidden layer l to its clipped conditional minimiser."""
    amp = model.amplified if use_amplifiers is None else use_amplifiers
    V = states.V
    W, W_next = model.weights[l - 1], model.weights[l]
    if amp:
        num = model.gains[l - 1] * (V[l - 1] @ W) + (V[l + 1] / model.gains[l]) @ W_next.T
    else:
        num = V[l - 1] @ W + V[l + 1] @ W_next.T
    p = (num + model.biases[l - 1]) / _denominator(model, states, l, 0.0, cached)
    V[l] = np.where(excitatory_mask(model.sizes[l]), np.maximum(0.0, p), np.minimum(0.0, p))
    return V[l]


def output_update(model: DrnModel, states: LayerStateBatch, nudge: NudgeSpec = OPEN, cached: bool = True,
                  use_amplifiers: bool | None = None) -> np.ndarray:
    amp = model.amplified if use_amplifiers is None else use_amplifiers
    L = model.L
    beta = nudge.effective_beta
    V = states.V
    num = V[L - 1] @ model.weights[L - 1]
    if amp:
        num = model.gains[L - 1] * num
    num = num + model.biases[L - 1]
    if beta != 0.0:
        num = num + beta * nudge.targets
    V[L] = num / _denominator(model, states, L, beta, cached)
    return V[L]


def init_states(model: DrnModel, V0: np.ndarray, nudge: NudgeSpec = OPEN, cached: bool = True) -> LayerStateBatch:
    V0 = np.atleast_2d(np.asarray(V0, dtype=float))
    V = [V0] + [np.zeros((V0.shape[0], n)) for n in model.sizes[1:]]
    dens = layer_denominators(model, nudge.effective_beta) if cached else [None] * (model.L + 1)
    return LayerStateBatch(V, dens)


def block_descent(model: DrnModel, V0, nudge: NudgeSpec = OPEN, iters: int = 4,
                  init: LayerStateBatch | None = None, cached: bool = True,
                  record_energy: bool = False, tol: float | None = None,
                  use_amplifiers: bool | None = None) -> LayerStateBatch:
    """Alternate even-layer and odd-layer block updates ``iters`` times.

    Starts from zero hidden/output states unless ``init`` is given (its
    layers are copied; layer 0 is always reset to V0).  With ``tol`` set the
    loop stops early once no potential moved by more than tol in an iteration.
    """
    if iters < 1:
        raise ValueError("iters must be >= 1")
    if init is None:
        states = init_states(model, V0, nudge, cached)
    else:
        states = init.copy()
        states.V[0] = np.atleast_2d(np.asarray(V0, dtype=float))
        states.denominators = (layer_denominators(model, nudge.effective_beta) if cached
                               else [None] * (model.L + 1))
    groups = [[l for l in range(1, model.L + 1) if l % 2 == 0],
              [l for l in range(1, model.L + 1) if l % 2 == 1]]
    if record_energy:
        states.energy_trace.append(drn_energy(model, states.V, nudge))
    for t in range(iters):
        moved = 0.0
        for group in groups:
            for l in group:
                old = states.V[l]
                if l == model.L:
                    new = output_update(model, states, nudge, cached, use_amplifiers)
                else:
                    new = hidden_block_update(model, states, l, cached, use_amplifiers)
                if tol is not None and new.size:
                    moved = max(moved, float(np.max(np.abs(new - old))))
            if record_energy:
                states.energy_trace.append(drn_energy(model, states.V, nudge))
        states.iterations = t + 1
        if tol is not None and moved < tol:
            break
    return states


def drn_energy(model: DrnModel, V, nudge: NudgeSpec = OPEN) -> np.ndarray:
    """Per-sample total energy, including bias and nudge terms."""
    c = model.scales
    n = V[0].shape[0]
    total = np.zeros(n)
    for l in range(1, model.L + 1):
        a = V[l - 1] / c[l - 1]
        b = V[l] / c[l]
        W = model.weights[l - 1]
        total += 0.5 * _pairwise_energy(a, b, W)
        total -= b @ model.biases[l - 1] / c[l]
    beta = nudge.effective_beta
    if beta != 0.0:
        total += 0.5 * beta * np.sum((V[-1] - nudge.targets) ** 2, axis=1) / c[-1] ** 2
    return total


def _pairwise_energy(a, b, W, chunk_elems: int = 1 << 22):
    # sum_jk W_jk (a_j - b_k)^2 per row, computed from explicit differences so
    # small energy changes are not lost to cancellation
    out = np.empty(a.shape[0])
    step = max(1, chunk_elems // max(1, W.size))
    for s in range(0, a.shape[0], step):
        d = a[s:s + step, :, None] - b[s:s + step, None, :]
        out[s:s + step] = np.einsum("njk,jk->n", d * d, W)
    return out


def output_cost(model: DrnModel, V_out, targets) -> np.ndarray:
    """dF/dbeta: the squared error scaled by 1/c[L]**2 (plain squared error when gains are 1)."""
    return 0.5 * np.sum((V_out - targets) ** 2, axis=1) / model.scales[-1] ** 2


def predict(model: DrnModel, x, iters: int = 4) -> np.ndarray:
    """Class index per sample: argmax of the free-state outputs (ties go to the lowest index)."""
    states = block_descent(model, encode_input(np.atleast_2d(x), model.A), OPEN, iters)
    return np.argmax(states.output, axis=1)


@dataclass
class FlatDrn:
    graph: CircuitGraph
    node_ids: list[np.ndarray]

    def layers(self, model: DrnModel, v: np.ndarray) -> list[np.ndarray]:
        """Map circuit potentials back to (amplified) layer states, one sample."""
        c = model.scales
        return [v[ids] * c[l] for l, ids in enumerate(self.node_ids)]


def drn_to_circuit(model: DrnModel, x, nudge: NudgeSpec = OPEN) -> FlatDrn:
    """Emit the explicit network for one input vector (targets, if any, are one row).

    Node 0 is ground.  Amplified models are emitted in the rescaled
    coordinates v / c[l]; :meth:`FlatDrn.layers` undoes the scaling.
    """
    beta = nudge.effective_beta
    if beta < 0:
        raise ValueError("a resistor-based nudging branch needs beta >= 0")
    c = model.scales
    V0 = encode_input(np.asarray(x, dtype=float).ravel(), model.A)
    if V0.size != model.sizes[0]:
        raise ValueError(f"input encodes to {V0.size} values, model expects {model.sizes[0]}")
    node_ids, nxt = [], 1
    for n in model.sizes:
        node_ids.append(np.arange(nxt, nxt + n))
        nxt += n
    vs = [(int(node), 0, float(v)) for node, v in zip(node_ids[0], V0)]
    resistors, diodes, currents = [], [], []
    for l in range(1, model.L + 1):
        W = model.weights[l - 1]
        for j, k in zip(*np.nonzero(W > 0)):
            resistors.append((int(node_ids[l - 1][j]), int(node_ids[l][k]), float(W[j, k])))
        for k, b in enumerate(model.biases[l - 1]):
            if b != 0.0:
                currents.append((0, int(node_ids[l][k]), float(b / c[l])))
        if l < model.L:
            exc = excitatory_mask(model.sizes[l])
            for k, node in enumerate(node_ids[l]):
                diodes.append((0, int(node)) if exc[k] else (int(node), 0))
    if beta > 0:
        y = np.asarray(nudge.targets, dtype=float).ravel()
        for k, node in enumerate(node_ids[-1]):
            t = nxt + k
            vs.append((t, 0, float(y[k] / c[-1])))
            resistors.append((t, int(node), beta))
        nxt += model.sizes[-1]
    graph = CircuitGraph(nxt, 0, tuple(resistors), tuple(currents), tuple(vs), tuple(diodes))
    return FlatDrn(graph, node_ids)
