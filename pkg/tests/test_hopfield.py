import numpy as np
import pytest
from hypothesis import given, strategies as st

from factories import random_dhn
from oracles import brute_energy, feasible_walk
from voltaic.circuit import CircuitGraph, feasible_start
from voltaic.drn import DrnModel
from voltaic.errors import ModelFormatError, NonConvexNudge, ZeroConductanceNode
from voltaic.hopfield import (DhnModel, dhn_block_descent, dhn_energy, dhn_predict, hard_sigmoid,
                              hopfield_update, init_dhn, resistive_to_hopfield)
from voltaic.verify import random_circuit

seeds = st.integers(0, 2**31 - 1)


@pytest.mark.parametrize("b, expected", [(0.7, 0.7), (1.5, 1.0), (-0.2, 0.0)])
def test_update_with_zero_weights(b, expected):
    m = DhnModel((2, 1), [np.zeros((2, 1))], [np.array([b])])
    S = [np.array([[0.3, 0.9]]), np.zeros((1, 1))]
    assert hopfield_update(m, S, 1, 0)[0] == pytest.approx(expected)


def test_hard_sigmoid():
    assert hard_sigmoid(np.array([-1.0, 0.25, 3.0])).tolist() == [0.0, 0.25, 1.0]


def test_single_layer_converges_in_one_iteration():
    rng = np.random.default_rng(0)
    m = init_dhn((5, 3), rng_seed=1)
    x = rng.random((4, 5))
    one = dhn_block_descent(m, x, iters=1).output
    many = dhn_block_descent(m, x, iters=40).output
    assert np.array_equal(one, many)


def test_input_clamped_to_raw_values():
    m = init_dhn((3, 4, 2), rng_seed=0)
    x = np.array([[0.1, 0.5, 0.9]])
    st_ = dhn_block_descent(m, x, iters=3)
    assert np.array_equal(st_.S[0], x)


def test_layer_update_agrees_with_unit_updates():
    # units of one layer do not interact, so the vectorised layer step equals unit-by-unit updates
    rng = np.random.default_rng(2)
    m = random_dhn(rng, max_layers=2)
    x = rng.random((3, m.sizes[0]))
    st_ = dhn_block_descent(m, x, iters=1)
    S = [x] + [np.zeros((3, n)) for n in m.sizes[1:]]
    groups = [[l for l in range(1, m.L + 1) if l % 2 == 0], [l for l in range(1, m.L + 1) if l % 2 == 1]]
    for group in groups:
        for l in group:
            for k in range(m.sizes[l]):
                hopfield_update(m, S, l, k)
    for a, b in zip(st_.S, S):
        np.testing.assert_allclose(a, b, atol=1e-15)


@given(seeds)
def test_energy_monotone_and_states_bounded(seed):
    rng = np.random.default_rng(seed)
    m = random_dhn(rng)
    x = rng.random((3, m.sizes[0]))
    beta = float(rng.choice([0.0, 0.5, -0.3]))
    Y = rng.random((3, m.sizes[-1]))
    st_ = dhn_block_descent(m, x, beta, Y, iters=10, record_energy=True)
    E = np.array(st_.energy_trace)
    assert np.all(np.diff(E, axis=0) <= 1e-9 * np.maximum(1.0, np.abs(E[:-1])))
    for s in st_.S[1:]:
        assert np.all((s >= 0) & (s <= 1))


@given(seeds)
def test_fixed_point_is_unitwise_optimal(seed):
    rng = np.random.default_rng(seed)
    m = random_dhn(rng)
    x = rng.random((1, m.sizes[0]))
    st_ = dhn_block_descent(m, x, iters=20000, tol=1e-14)
    E0 = dhn_energy(m, st_.S)[0]
    for l in range(1, m.L + 1):
        for k in range(m.sizes[l]):
            for eps in (1e-3, -1e-3):
                S = [s.copy() for s in st_.S]
                S[l][0, k] = np.clip(S[l][0, k] + eps, 0.0, 1.0)
                assert dhn_energy(m, S)[0] >= E0 - 1e-12


def test_nonconvex_nudge():
    m = init_dhn((2, 2), rng_seed=0)
    with pytest.raises(NonConvexNudge):
        dhn_block_descent(m, np.zeros((1, 2)), beta=-1.0, targets=np.zeros((1, 2)))


def test_predict_shape():
    m = init_dhn((4, 5, 3), rng_seed=0)
    assert dhn_predict(m, np.random.default_rng(0).random((7, 4))).shape == (7,)


def test_save_load(tmp_path):
    m = init_dhn((4, 5, 3), rng_seed=9)
    p = tmp_path / "h.bin"
    m.save(p)
    back = DhnModel.load(p)
    assert back.sizes == m.sizes
    for a, b in zip(back.weights + back.biases, m.weights + m.biases):
        assert np.array_equal(a, b)
    with pytest.raises(ModelFormatError):
        DrnModel.load(p)


# -- change of variables ------------------------------------------------------------

def test_mapping_single_resistor():
    two = CircuitGraph(2, 0, resistors=((0, 1, 4.0),))
    mp = resistive_to_hopfield(two)
    assert mp.scale.tolist() == [2.0, 2.0]
    assert mp.edges == [(0, 1, 1.0)]
    assert np.all(mp.b == 0)


def test_mapping_zero_conductance_node():
    g = CircuitGraph(3, 0, resistors=((0, 1, 1.0),), voltage_sources=((2, 0, 1.0),))
    with pytest.raises(ZeroConductanceNode):
        resistive_to_hopfield(g)


def test_mapping_pinned_values_and_diodes():
    g = CircuitGraph(3, 0, resistors=((1, 2, 1.0), (2, 0, 3.0)), voltage_sources=((1, 0, 2.0),),
                     diodes=((0, 2),))
    mp = resistive_to_hopfield(g)
    assert mp.fixed[1] == pytest.approx(2.0)            # sqrt(1) * 2 V
    assert mp.fixed[0] == 0.0
    j, k, cj, ck = mp.diodes[0]
    assert (j, k) == (0, 2) and ck == pytest.approx(0.5)


def test_energy_identity_random_circuits():
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        g = random_circuit(rng)
        if np.any(g.conductance_sums <= 0):
            continue
        mp = resistive_to_hopfield(g)
        start = feasible_start(g).v
        diffs = []
        for _ in range(30):
            v = feasible_walk(g, start, rng, steps=20)
            diffs.append(brute_energy(g, v) - mp.energy(mp.to_s(v)))
        worst = max(worst, max(diffs) - min(diffs))
    assert worst < 1e-8
