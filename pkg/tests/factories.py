"""Random small models shared by the unit and acceptance tests."""

import numpy as np

from voltaic.drn import DrnModel
from voltaic.hopfield import DhnModel


def random_drn(rng, max_units=6, max_hidden=3, max_hidden_total=12, amplified=False, bias=True):
    n_hidden = int(rng.integers(0, max_hidden + 1))
    sizes = [2 * int(rng.integers(1, 4))]
    budget = max_hidden_total
    for _ in range(n_hidden):
        n = int(rng.integers(1, min(max_units, budget) + 1)) if budget > 0 else 0
        if n == 0:
            break
        sizes.append(n)
        budget -= n
    sizes.append(int(rng.integers(1, max_units + 1)))
    L = len(sizes) - 1
    weights = [rng.uniform(0.1, 1.0, size=(a, b)) * (rng.random((a, b)) > 0.2)
               for a, b in zip(sizes[:-1], sizes[1:])]
    for W in weights:
        W[:, W.sum(axis=0) == 0] = 0.5      # keep every unit connected
        W[W.sum(axis=1) == 0, :] = 0.5
    biases = [rng.normal(0, 0.3, size=b) if bias else np.zeros(b) for b in sizes[1:]]
    gains = rng.uniform(0.5, 3.0, size=L) if amplified else np.ones(L)
    return DrnModel(tuple(sizes), weights, biases, gains, A=float(rng.uniform(0.5, 3)))


def random_dhn(rng, max_units=6, max_layers=3):
    sizes = [int(rng.integers(1, max_units + 1)) for _ in range(int(rng.integers(2, max_layers + 2)))]
    weights = [rng.normal(0, 0.8, size=(a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
    biases = [rng.normal(0, 0.5, size=b) for b in sizes[1:]]
    return DhnModel(tuple(sizes), weights, biases)
