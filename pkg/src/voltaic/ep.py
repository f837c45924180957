"""Equilibrium propagation: phase orchestration, contrastive updates, SGD loop
and finite-difference checks of the contrastive gradient.

Every parameter update has the form

    delta = -eta * (dE/dtheta(s2) - dE/dtheta(s1)) / (beta2 - beta1)

for two equilibria s1, s2 reached at nudging strengths beta1 < beta2 or
beta1 > beta2: (0, +beta) for the positive variant, (0, -beta) for the
negative one and (-beta, +beta) for the centered one.  For a resistor
dE/dg = (v_j - v_k)**2 / 2, so the one-sided rule is the familiar
eta / (2 beta) * (drop0**2 - dropbeta**2).
"""

from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable

import numpy as np

from .data import Dataset, make_targets
from .drn import (OPEN, DrnModel, NudgeSpec, block_descent, drn_energy, encode_input,
                  output_cost)
from .errors import ConfigError, NonFiniteState, ToleranceExceeded
from .hopfield import DhnModel, dhn_block_descent, dhn_energy

log = logging.getLogger(__name__)

CONVERGED_TOL = 1e-14
CONVERGED_MAX_ITERS = 200000


class Variant(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    CENTERED = "centered"


@dataclass
class EpConfig:
    beta: float
    T: int
    K: int
    lr: tuple[float, ...]
    variant: Variant = Variant.CENTERED
    decay: float = 1.0
    batch_size: int = 4
    epochs: int = 1
    target_amplitude: float = 1.0
    clip_conductances: bool = True
    seed: int = 0

    def __post_init__(self):
        self.variant = Variant(self.variant)
        self.lr = tuple(float(v) for v in self.lr)
        if not self.beta > 0:
            raise ConfigError("beta must be > 0")
        if self.T < 1 or self.K < 1:
            raise ConfigError("T and K must be >= 1")
        if any(v <= 0 for v in self.lr):
            raise ConfigError("learning rates must be > 0")
        if not 0 < self.decay <= 1:
            raise ConfigError("decay must lie in (0, 1]")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")

    @classmethod
    def from_run_config(cls, rc) -> "EpConfig":
        return cls(rc.beta, rc.T, rc.K, rc.lr, rc.variant, rc.decay, rc.batch_size, rc.epochs,
                   rc.target_amplitude, rc.clip_conductances, rc.seed)


# -- model adapters ----------------------------------------------------------

class _DrnEngine:
    physical = True     # conductances must stay >= 0

    def __init__(self, model: DrnModel):
        self.model = model

    def encode(self, x):
        return encode_input(np.atleast_2d(x), self.model.A)

    def relax(self, inp, beta, Y, iters, init=None, tol=None):
        nudge = OPEN if beta == 0.0 else NudgeSpec.closed(beta, Y)
        return block_descent(self.model, inp, nudge, iters, init=init, tol=tol)

    def outputs(self, states):
        return states.V[-1]

    def energy(self, states, beta, Y):
        nudge = OPEN if beta == 0.0 else NudgeSpec.closed(beta, Y)
        return drn_energy(self.model, states.V, nudge)

    def cost(self, states, Y):
        return output_cost(self.model, states.V[-1], Y)

    def param_grads(self, states):
        """Batch-mean dE/dW and dE/db per layer."""
        m = self.model
        c = m.scales
        n = states.V[0].shape[0]
        out = []
        for l in range(1, m.L + 1):
            a = states.V[l - 1] / c[l - 1]
            b = states.V[l] / c[l]
            gW = 0.5 * (np.sum(a * a, axis=0)[:, None] + np.sum(b * b, axis=0)[None, :] - 2.0 * a.T @ b) / n
            gb = -np.sum(b, axis=0) / (n * c[l])
            out.append((gW, gb))
        return out


class _DhnEngine:
    physical = False

    def __init__(self, model: DhnModel):
        self.model = model

    def encode(self, x):
        return np.atleast_2d(np.asarray(x, dtype=float))

    def relax(self, inp, beta, Y, iters, init=None, tol=None):
        return dhn_block_descent(self.model, inp, beta, Y, iters, init=init, tol=tol)

    def outputs(self, states):
        return states.S[-1]

    def energy(self, states, beta, Y):
        return dhn_energy(self.model, states.S, beta, Y)

    def cost(self, states, Y):
        return 0.5 * np.sum((states.S[-1] - Y) ** 2, axis=1)

    def param_grads(self, states):
        n = states.S[0].shape[0]
        return [(-(states.S[l - 1].T @ states.S[l]) / n, -np.sum(states.S[l], axis=0) / n)
                for l in range(1, self.model.L + 1)]


def engine_for(model):
    if isinstance(model, DrnModel):
        return _DrnEngine(model)
    if isinstance(model, DhnModel):
        return _DhnEngine(model)
    raise TypeError(f"unsupported model type {type(model).__name__}")


# -- one training step -------------------------------------------------------

def _check_finite(arr, phase):
    if not np.all(np.isfinite(arr)):
        raise NonFiniteState(f"non-finite potentials in the {phase} phase")


def phase_betas(variant: Variant, beta: float) -> tuple[float, float]:
    variant = Variant(variant)
    if variant is Variant.POSITIVE:
        return 0.0, beta
    if variant is Variant.NEGATIVE:
        return 0.0, -beta
    return -beta, beta


def contrastive_deltas(grads1, grads2, beta1, beta2, lr):
    scale = 1.0 / (beta2 - beta1)
    return [(-eta * (gW2 - gW1) * scale, -eta * (gb2 - gb1) * scale)
            for eta, (gW1, gb1), (gW2, gb2) in zip(lr, grads1, grads2)]


@dataclass
class StepResult:
    deltas: list[tuple[np.ndarray, np.ndarray]]
    loss: float          # mean free-state cost over the batch
    errors: int          # misclassified samples in the batch (free state)
    free_outputs: np.ndarray


def ep_step(model, x, Y, config: EpConfig, lr=None, labels=None) -> StepResult:
    """Free phase (T iterations), nudged phase(s) (K iterations from the free state), contrastive deltas."""
    eng = engine_for(model)
    inp = eng.encode(x)
    Y = np.atleast_2d(Y)
    free = eng.relax(inp, 0.0, None, config.T)
    out = eng.outputs(free)
    _check_finite(out, "free")
    b1, b2 = phase_betas(config.variant, config.beta)
    phases = {}
    for beta in {b1, b2}:
        if beta == 0.0:
            phases[beta] = free
        else:
            phases[beta] = eng.relax(inp, beta, Y, config.K, init=free)
            _check_finite(eng.outputs(phases[beta]), f"beta={beta:g}")
    deltas = contrastive_deltas(eng.param_grads(phases[b1]), eng.param_grads(phases[b2]), b1, b2,
                                config.lr if lr is None else lr)
    loss = float(np.mean(0.5 * np.sum((out - Y) ** 2, axis=1)))
    truth = np.argmax(Y, axis=1) if labels is None else np.asarray(labels)
    errors = int(np.sum(np.argmax(out, axis=1) != truth))
    return StepResult(deltas, loss, errors, out)


def apply_deltas(model, deltas, clip_conductances: bool = True) -> None:
    physical = isinstance(model, DrnModel)
    for l, (dW, db) in enumerate(deltas):
        model.weights[l] += dW
        model.biases[l] += db
        if physical and clip_conductances:
            np.maximum(model.weights[l], 0.0, out=model.weights[l])


# -- training loop -----------------------------------------------------------

@dataclass
class TrainMetrics:
    rows: list[dict] = field(default_factory=list)

    def append(self, epoch, train_loss, train_err, test_err, seconds, lrs):
        if self.rows and epoch <= self.rows[-1]["epoch"]:
            raise ValueError("metrics rows must be appended in epoch order")
        self.rows.append({"epoch": epoch, "train_loss": train_loss, "train_err": train_err,
                          "test_err": test_err, "seconds": seconds, "lrs": tuple(lrs)})

    def write_csv(self, fh) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "train_loss", "train_err", "test_err", "seconds"])
        for r in self.rows:
            writer.writerow([r["epoch"], repr(r["train_loss"]), repr(r["train_err"]),
                             repr(r["test_err"]), f"{r['seconds']:.3f}"])

    @classmethod
    def read_csv(cls, path) -> "TrainMetrics":
        m = cls()
        with open(path, newline="") as fh:
            for r in csv.DictReader(fh):
                m.rows.append({"epoch": int(r["epoch"]), "train_loss": float(r["train_loss"]),
                               "train_err": float(r["train_err"]), "test_err": float(r["test_err"]),
                               "seconds": float(r["seconds"]), "lrs": ()})
        return m


def epoch_lrs(config: EpConfig, epoch: int) -> tuple[float, ...]:
    """Learning rates in force during ``epoch`` (0-based): eta * decay**epoch."""
    return tuple(eta * config.decay ** epoch for eta in config.lr)


def train(model, train_set: Dataset, config: EpConfig, test_set: Dataset | None = None,
          start_epoch: int = 0, metrics: TrainMetrics | None = None,
          checkpoint: Callable[[object, TrainMetrics, int], None] | None = None,
          progress: Callable[[str], None] | None = None):
    """Mini-batch SGD with EP deltas.  Returns (model, metrics); ``model`` is updated in place.

    Epoch ``e`` shuffles with a generator seeded by (seed, e), so a run resumed
    at ``start_epoch`` sees the same batches as an uninterrupted one.  The
    ``checkpoint`` callback runs after every epoch and, with the last good
    parameters, before an exception propagates.
    """
    if len(train_set) == 0:
        raise ValueError("training set is empty")
    metrics = metrics or TrainMetrics()
    epoch = start_epoch
    try:
        for epoch in range(start_epoch, config.epochs):
            t0 = time.perf_counter()
            lrs = epoch_lrs(config, epoch)
            order = np.random.default_rng([config.seed, epoch]).permutation(len(train_set))
            loss_sum, err_sum = 0.0, 0
            for s in range(0, len(order), config.batch_size):
                idx = order[s:s + config.batch_size]
                Y = make_targets(train_set.labels[idx], train_set.classes, config.target_amplitude)
                res = ep_step(model, train_set.images[idx], Y, config, lrs, train_set.labels[idx])
                apply_deltas(model, res.deltas, config.clip_conductances)
                loss_sum += res.loss * idx.size
                err_sum += res.errors
            test_err = float("nan")
            if test_set is not None:
                _, test_err = evaluate(model, test_set, config.T, config.target_amplitude)
            metrics.append(epoch + 1, loss_sum / len(order), 100.0 * err_sum / len(order), test_err,
                           time.perf_counter() - t0, lrs)
            if progress:
                r = metrics.rows[-1]
                progress(f"epoch {r['epoch']}: train_loss={r['train_loss']:.5f} "
                         f"train_err={r['train_err']:.2f}% test_err={r['test_err']:.2f}% ({r['seconds']:.1f}s)")
            if checkpoint:
                checkpoint(model, metrics, epoch + 1)
    except BaseException:
        if checkpoint:
            log.warning("training aborted in epoch %d; writing checkpoint", epoch + 1)
            checkpoint(model, metrics, epoch)
        raise
    return model, metrics


def evaluate(model, dataset: Dataset, T: int, amplitude: float = 1.0, batch: int = 1000) -> tuple[float, float]:
    """Free-state inference with T iterations; returns (mean cost, error %)."""
    eng = engine_for(model)
    loss_sum, wrong = 0.0, 0
    for s in range(0, len(dataset), batch):
        x = dataset.images[s:s + batch]
        labels = dataset.labels[s:s + batch]
        out = eng.outputs(eng.relax(eng.encode(x), 0.0, None, T))
        Y = make_targets(labels, dataset.classes, amplitude)
        loss_sum += float(np.sum(0.5 * np.sum((out - Y) ** 2, axis=1)))
        wrong += int(np.sum(np.argmax(out, axis=1) != labels))
    n = max(1, len(dataset))
    return loss_sum / n, 100.0 * wrong / n


# -- contrastive function and gradient checks -----------------------------------

def converged_state(model, x, beta=0.0, Y=None, init=None):
    eng = engine_for(model)
    return eng.relax(eng.encode(x), beta, Y, CONVERGED_MAX_ITERS, init=init, tol=CONVERGED_TOL)


def equilibrium_value(model, x, beta, Y, free=None) -> float:
    """G(beta): batch-mean minimum of F(beta, .) from a converged solve."""
    eng = engine_for(model)
    if free is None:
        free = converged_state(model, x)
    st = free if beta == 0.0 else converged_state(model, x, beta, Y, init=free)
    return float(np.mean(eng.energy(st, beta, Y)))


def contrastive_loss(model, x, Y, beta: float, T=None, K=None) -> float:
    """L_beta = (G(beta) - G(0)) / beta with fully converged solves.

    T and K are accepted for interface symmetry with training but ignored:
    both phases run to tolerance so that truncation does not blur the value.
    """
    if beta == 0.0:
        raise ValueError("beta must be nonzero")
    free = converged_state(model, x)
    eng = engine_for(model)
    g0 = float(np.mean(eng.energy(free, 0.0, None)))
    return (equilibrium_value(model, x, beta, Y, free) - g0) / beta


def centered_contrastive_loss(model, x, Y, beta: float) -> float:
    free = converged_state(model, x)
    return (equilibrium_value(model, x, beta, Y, free) - equilibrium_value(model, x, -beta, Y, free)) / (2 * beta)


def free_cost(model, x, Y) -> float:
    """C at the free equilibrium (the quantity EP differentiates; scaled by 1/c_L**2 with amplifiers)."""
    eng = engine_for(model)
    return float(np.mean(eng.cost(converged_state(model, x), Y)))


def converged_deltas(model, x, Y, beta: float, variant: Variant, eta: float = 1.0):
    eng = engine_for(model)
    free = converged_state(model, x)
    b1, b2 = phase_betas(variant, beta)
    st = {0.0: free}
    for b in {b1, b2} - {0.0}:
        st[b] = converged_state(model, x, b, Y, init=free)
    return contrastive_deltas(eng.param_grads(st[b1]), eng.param_grads(st[b2]), b1, b2, [eta] * model.L)


def _flatten(pairs, mask=None):
    parts = []
    for l, (W, b) in enumerate(pairs):
        parts.append(W.ravel() if mask is None else W.ravel()[mask[l]])
        parts.append(b.ravel())
    return np.concatenate(parts)


def finite_difference(model, fn: Callable[[object], float], h: float = 1e-5, mask=None):
    """Central differences of fn(model) for every bias and every weight selected by ``mask``."""
    grads = []
    for l in range(model.L):
        for arr, sel in ((model.weights[l], None if mask is None else mask[l]), (model.biases[l], None)):
            flat = arr.reshape(-1)
            idx = np.arange(flat.size) if sel is None else np.flatnonzero(sel)
            g = np.empty(idx.size)
            for i, p in enumerate(idx):
                old = flat[p]
                flat[p] = old + h
                up = fn(model)
                flat[p] = old - h
                down = fn(model)
                flat[p] = old
                g[i] = (up - down) / (2 * h)
            grads.append(g)
    return np.concatenate(grads)


def _rel(a, b) -> float:
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


@dataclass
class GradCheckReport:
    betas: list[float]
    identity_error: dict          # (variant, beta) -> norm-wise relative error vs FD of the contrastive function
    centered_error: dict          # beta -> max |centered estimate - dC/dtheta|
    ratios: list[float]           # centered_error[beta_i] / centered_error[beta_{i+1}]
    bounds: list[tuple[float, float, float, float]]   # (beta, L_beta, C, L_-beta)
    binding_units: int
    active_set_changes: dict = field(default_factory=dict)   # beta -> hidden units whose clipping differs from the free state
    identity_tol: float = 1e-5
    ratio_range: tuple[float, float] = (2.5, 6.0)
    bound_tol: float = 1e-8

    @property
    def identity_ok(self) -> bool:
        return all(e <= self.identity_tol for e in self.identity_error.values())

    @property
    def ratios_ok(self) -> bool:
        lo, hi = self.ratio_range
        return all(lo <= r <= hi for r in self.ratios)

    @property
    def bounds_ok(self) -> bool:
        return all(lb <= c + self.bound_tol and c <= ub + self.bound_tol for _, lb, c, ub in self.bounds)

    @property
    def passed(self) -> bool:
        return self.identity_ok and self.ratios_ok and self.bounds_ok

    def lines(self) -> list[str]:
        out = [f"binding hidden units in the free state: {self.binding_units}"]
        for beta, n in self.active_set_changes.items():
            out.append(f"units changing clip state at +/-{beta:g}: {n}")
        for (variant, beta), e in sorted(self.identity_error.items(), key=lambda t: (t[0][1], t[0][0])):
            out.append(f"identity {variant:<8} beta={beta:<8g} rel_err={e:.3e}")
        for beta, e in self.centered_error.items():
            out.append(f"centered beta={beta:<8g} |est - dC/dtheta|={e:.3e}")
        for r in self.ratios:
            out.append(f"error ratio {r:.3f}")
        out.append(f"{'beta':>8} {'L_beta':>16} {'C':>16} {'L_-beta':>16}")
        for beta, lb, c, ub in self.bounds:
            out.append(f"{beta:8g} {lb:16.10f} {c:16.10f} {ub:16.10f}")
        return out


def gradcheck_instance(sizes, seed: int, A: float = 1.0, amplitude: float = 1.0):
    """A small DRN with strictly positive conductances (so central differences stay
    physical) and small random biases, plus one input and a one-hot target."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        c = np.sqrt(1.0 / n_in)
        weights.append(rng.uniform(0.2 * c, c, size=(n_in, n_out)))
        biases.append(rng.normal(0.0, 0.1 * c, size=n_out))
    model = DrnModel(tuple(sizes), weights, biases, np.ones(len(sizes) - 1), A)
    rng = np.random.default_rng(seed + 1)
    x = rng.uniform(0.0, 1.0, size=(1, sizes[0] // 2))
    Y = make_targets(rng.integers(sizes[-1], size=1), sizes[-1], amplitude)
    return model, x, Y


def ep_gradient_check(model, x, Y, betas=(0.1, 0.05, 0.025), h: float = 1e-5, raise_on_fail: bool = False,
                      identity_tol: float = 1e-5) -> GradCheckReport:
    """Compare converged EP deltas with finite differences.

    (a) for each variant and beta, -delta/eta against the central difference of
    the matching contrastive function (one-sided L_beta or the centered one);
    (b) centered estimates against dC/dtheta, with the error ratio between
    consecutive betas; (c) the bound chain L_beta <= C <= L_-beta.
    Weights at exactly zero conductance are left out of the differences.
    """
    betas = [float(b) for b in betas]
    if any(b <= 0 for b in betas):
        raise ValueError("betas must be > 0")
    if model.n_weights > 200:
        log.warning("gradient check on %d weights will be slow", model.n_weights)
    mask = [W.ravel() != 0.0 for W in model.weights] if isinstance(model, DrnModel) else None

    true_grad = finite_difference(model, lambda m: free_cost(m, x, Y), h, mask)
    identity, centered, bounds = {}, {}, []
    for beta in betas:
        for variant in Variant:
            est = -_flatten(converged_deltas(model, x, Y, beta, variant), mask)
            if variant is Variant.CENTERED:
                fd = finite_difference(model, lambda m: centered_contrastive_loss(m, x, Y, beta), h, mask)
                centered[beta] = float(np.max(np.abs(est - true_grad)))
            else:
                b = beta if variant is Variant.POSITIVE else -beta
                fd = finite_difference(model, lambda m: contrastive_loss(m, x, Y, b), h, mask)
            identity[(variant.value, beta)] = _rel(est, fd)
        bounds.append((beta, contrastive_loss(model, x, Y, beta), free_cost(model, x, Y),
                       contrastive_loss(model, x, Y, -beta)))
    ratios = [centered[a] / centered[b] for a, b in zip(betas[:-1], betas[1:])]
    report = GradCheckReport(betas, identity, centered, ratios, bounds, _binding_units(model, x),
                             {b: _clip_changes(model, x, Y, b) for b in betas}, identity_tol=identity_tol)
    if raise_on_fail and not report.passed:
        raise ToleranceExceeded("gradient check failed:\n" + "\n".join(report.lines()), report)
    return report


def _clip_pattern(states):
    return np.concatenate([(v == 0.0).ravel() for v in states.V[1:-1]])


def _clip_changes(model, x, Y, beta) -> int:
    """Hidden units whose clipped/unclipped status differs between the free and the +/-beta equilibria."""
    if not isinstance(model, DrnModel) or model.L < 2:
        return 0
    free = converged_state(model, x)
    base = _clip_pattern(free)
    changed = np.zeros_like(base)
    for b in (beta, -beta):
        changed |= _clip_pattern(converged_state(model, x, b, Y, init=free)) != base
    return int(changed.sum())


def _binding_units(model, x) -> int:
    if not isinstance(model, DrnModel) or model.L < 2:
        return 0
    st = converged_state(model, x)
    return int(sum(np.sum(v == 0.0) for v in st.V[1:-1]))
