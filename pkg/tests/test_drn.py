import numpy as np
import pytest
from hypothesis import given, strategies as st

from factories import random_drn
from voltaic.circuit import energy
from voltaic.data import synthetic_blobs
from voltaic.drn import (DrnModel, NudgeSpec, OPEN, block_descent, drn_energy,
                         drn_to_circuit, encode_input, excitatory_mask, hidden_block_update,
                         init_states, init_weights, output_update, predict)
from voltaic.ep import EpConfig, train
from voltaic.errors import ModelFormatError, NonConvexNudge, ZeroDenominator
from voltaic.oracle import solve_enumerate
from voltaic.solver import SolveOptions, solve

seeds = st.integers(0, 2**31 - 1)


def one_hidden(parity_index):
    # input 1 V through g=1 to a two-unit hidden layer; unit ``parity_index`` probed
    W1 = np.array([[1.0, 1.0]])
    W2 = np.array([[1.0], [1.0]])
    m = DrnModel((1, 2, 1), [W1, W2], [np.zeros(2), np.zeros(1)], np.ones(2))
    s = init_states(m, np.array([[1.0]]))
    hidden_block_update(m, s, 1)
    return s.V[1][0, parity_index]


# -- init / encode --------------------------------------------------------------

def test_init_nonnegative():
    m = init_weights((20, 30, 10), rng_seed=1)
    assert all(np.all(W >= 0) for W in m.weights)
    assert all(np.all(b == 0) for b in m.biases)
    assert np.all(m.gains == 1)


def test_init_scale():
    m = init_weights((4, 200), rng_seed=2)
    nz = m.weights[0][m.weights[0] > 0]
    assert nz.max() < 0.5


def test_init_zero_fraction():
    m = init_weights((100, 1000), rng_seed=3)
    frac = np.mean(m.weights[0] == 0)
    assert frac == pytest.approx(0.5, abs=0.05)


@pytest.mark.parametrize("x, A, expected", [
    ([0.5], 100, [50, -50]),
    ([0.0, 0.0], 7, [0, 0, 0, 0]),
    ([1, 0], 2, [2, -2, 0, 0]),
])
def test_encode(x, A, expected):
    assert np.array_equal(encode_input(np.array(x), A), np.array(expected, dtype=float))


def test_excitatory_parity():
    # 1-based even = excitatory, i.e. 0-based odd
    assert excitatory_mask(4).tolist() == [False, True, False, True]


# -- block updates ----------------------------------------------------------------

def test_hidden_update_even_unit():
    assert one_hidden(1) == pytest.approx(0.5)


def test_hidden_update_odd_unit_clipped():
    assert one_hidden(0) == 0.0


def output_model():
    return DrnModel((1, 1), [np.array([[3.0]])], [np.zeros(1)], np.ones(1))


@pytest.mark.parametrize("nudge, expected", [
    (OPEN, 2.0),
    (NudgeSpec.closed(1.0, [[0.0]]), 1.5),
    (NudgeSpec.closed(-0.5, [[0.0]]), 2.4),
])
def test_output_update(nudge, expected):
    m = output_model()
    s = init_states(m, np.array([[2.0]]), nudge)
    assert output_update(m, s, nudge)[0, 0] == pytest.approx(expected)


def test_nonconvex_nudge_rejected():
    m = output_model()
    with pytest.raises(NonConvexNudge):
        block_descent(m, np.array([[2.0]]), NudgeSpec.closed(-3.0, [[0.0]]))


def test_zero_denominator():
    m = DrnModel((2, 2), [np.array([[1.0, 0.0], [1.0, 0.0]])], [np.zeros(2)], np.ones(1))
    with pytest.raises(ZeroDenominator):
        block_descent(m, np.zeros((1, 2)))


def test_iters_must_be_positive():
    with pytest.raises(ValueError):
        block_descent(output_model(), np.zeros((1, 1)), iters=0)


def test_no_hidden_layer_exact_in_one_iteration():
    rng = np.random.default_rng(0)
    for _ in range(10):
        m = random_drn(rng, max_hidden=0)
        V0 = encode_input(rng.random((3, m.sizes[0] // 2)), m.A)
        one = block_descent(m, V0, iters=1).output
        many = block_descent(m, V0, iters=50).output
        assert np.array_equal(one, many)


@given(seeds)
def test_block_update_matches_flattened_fixed_point(seed):
    rng = np.random.default_rng(seed)
    m = random_drn(rng, amplified=bool(seed % 2))
    x = rng.random(m.sizes[0] // 2)
    nudge = NudgeSpec.closed(0.7, rng.normal(size=(1, m.sizes[-1]))) if seed % 3 == 0 else OPEN
    st_ = block_descent(m, encode_input(x[None], m.A), nudge, iters=20000, tol=1e-14)
    flat = drn_to_circuit(m, x, nudge)
    state, rep = solve(flat.graph, SolveOptions(tol=1e-14, max_sweeps=200000))
    for a, b in zip(st_.V, flat.layers(m, state.v)):
        np.testing.assert_allclose(a[0], b, atol=1e-6)


@given(seeds)
def test_sign_constraints_every_half_step(seed):
    rng = np.random.default_rng(seed)
    m = random_drn(rng, max_hidden=3)
    V0 = encode_input(rng.random((4, m.sizes[0] // 2)), m.A)
    s = init_states(m, V0)
    for _ in range(5):
        for parity in (0, 1):
            for l in range(1, m.L):
                if l % 2 == parity:
                    hidden_block_update(m, s, l)
                    exc = excitatory_mask(m.sizes[l])
                    assert np.all(s.V[l][:, exc] >= 0) and np.all(s.V[l][:, ~exc] <= 0)


@given(seeds)
def test_energy_monotone_per_half_step(seed):
    rng = np.random.default_rng(seed)
    m = random_drn(rng, amplified=bool(seed % 2))
    V0 = encode_input(rng.random((3, m.sizes[0] // 2)), m.A)
    nudge = NudgeSpec.closed(float(rng.uniform(-0.05, 1.0)), rng.normal(size=(3, m.sizes[-1])))
    s = block_descent(m, V0, nudge, iters=8, record_energy=True)
    E = np.array(s.energy_trace)
    scale = np.maximum(1.0, np.abs(E).max(axis=0))
    assert np.all(np.diff(E, axis=0) <= 1e-9 * scale)


def test_energy_matches_flattened_circuit():
    rng = np.random.default_rng(4)
    for i in range(20):
        m = random_drn(rng, amplified=bool(i % 2))
        x = rng.random(m.sizes[0] // 2)
        y = rng.normal(size=(1, m.sizes[-1]))
        nudge = NudgeSpec.closed(0.4, y)
        s = block_descent(m, encode_input(x[None], m.A), nudge, iters=3)
        flat = drn_to_circuit(m, x, nudge)
        v = np.zeros(flat.graph.n_nodes)
        c = m.scales
        for l, ids in enumerate(flat.node_ids):
            v[ids] = s.V[l][0] / c[l]
        v[flat.node_ids[-1][-1] + 1:] = y[0] / c[-1]
        # target nodes sit at y / c_L, so the nudge branch is the scaled nudge term
        assert drn_energy(m, s.V, nudge)[0] == pytest.approx(energy(flat.graph, v), abs=1e-10)


def test_amplifier_path_bitwise_with_unit_gains():
    rng = np.random.default_rng(5)
    for _ in range(20):
        m = random_drn(rng)
        V0 = encode_input(rng.random((3, m.sizes[0] // 2)), m.A)
        nudge = NudgeSpec.closed(0.3, rng.normal(size=(3, m.sizes[-1])))
        a = block_descent(m, V0, nudge, iters=6, use_amplifiers=True)
        b = block_descent(m, V0, nudge, iters=6, use_amplifiers=False)
        for x, y in zip(a.V, b.V):
            assert np.array_equal(x, y)


def test_denominator_caching_is_invisible():
    rng = np.random.default_rng(6)
    for _ in range(10):
        m = random_drn(rng, amplified=True)
        V0 = encode_input(rng.random((2, m.sizes[0] // 2)), m.A)
        a = block_descent(m, V0, iters=5, cached=True)
        b = block_descent(m, V0, iters=5, cached=False)
        for x, y in zip(a.V, b.V):
            assert np.array_equal(x, y)


def test_fixed_point_matches_oracle():
    rng = np.random.default_rng(7)
    for i in range(15):
        m = random_drn(rng, amplified=bool(i % 2))
        x = rng.random(m.sizes[0] // 2)
        s = block_descent(m, encode_input(x[None], m.A), iters=50000, tol=1e-14)
        flat = drn_to_circuit(m, x)
        ref = solve_enumerate(flat.graph)
        for a, b in zip(s.V, flat.layers(m, ref.v)):
            np.testing.assert_allclose(a[0], b, atol=1e-6)


# -- flattening ------------------------------------------------------------------

def test_flatten_linear_drn():
    m = DrnModel((2, 1), [np.array([[1.0], [2.0]])], [np.zeros(1)], np.ones(1))
    g = drn_to_circuit(m, [0.3]).graph
    assert len(g.voltage_sources) == 2
    assert len(g.resistors) == 2
    assert len(g.diodes) == 0


def test_flatten_diode_orientation():
    W1 = np.ones((2, 2))
    m = DrnModel((2, 2, 1), [W1, np.ones((2, 1))], [np.zeros(2), np.zeros(1)], np.ones(2))
    flat = drn_to_circuit(m, [0.5])
    odd_node, even_node = flat.node_ids[1]      # 1-based units 1 (inhibitory) and 2 (excitatory)
    assert (odd_node, 0) in flat.graph.diodes
    assert (0, even_node) in flat.graph.diodes


def test_flatten_rejects_negative_beta():
    with pytest.raises(ValueError):
        drn_to_circuit(output_model(), [1.0], NudgeSpec.closed(-0.1, [[0.0]]))


# -- predict / persistence ----------------------------------------------------------

def test_predict_argmax_and_ties():
    # zero input, tiny conductances: each output settles at bias / conductance sum
    W = np.full((2, 3), 1e-12)
    m = DrnModel((2, 3), [W], [np.array([0.1, 0.9, 0.3]) * 2e-12], np.ones(1))
    assert predict(m, np.zeros(1)).tolist() == [1]
    m.biases[0][:] = 0
    assert predict(m, np.zeros(1)).tolist() == [0]


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    m = random_drn(rng, amplified=True)
    p = tmp_path / "m.bin"
    m.save(p)
    back = DrnModel.load(p)
    assert back.sizes == m.sizes and back.A == m.A
    assert np.array_equal(back.gains, m.gains)
    for a, b in zip(back.weights + back.biases, m.weights + m.biases):
        assert np.array_equal(a, b)


def test_load_bad_magic(tmp_path):
    p = tmp_path / "m.bin"
    output_model().save(p)
    raw = bytearray(p.read_bytes())
    raw[0:4] = b"XXXX"
    p.write_bytes(bytes(raw))
    with pytest.raises(ModelFormatError):
        DrnModel.load(p)


def test_load_truncated(tmp_path):
    p = tmp_path / "m.bin"
    output_model().save(p)
    p.write_bytes(p.read_bytes()[:-3])
    with pytest.raises(ModelFormatError):
        DrnModel.load(p)


@pytest.mark.slow
def test_trained_xs_shape_settles_in_four_iterations():
    data = synthetic_blobs(1000, 784, 10, seed=0, spread=0.3)
    m = init_weights((1568, 100, 10), rng_seed=0, A=100.0)
    cfg = EpConfig(beta=1.0, T=4, K=4, lr=(0.006, 0.006), decay=0.99, batch_size=4, epochs=1)
    train(m, data, cfg)
    V0 = encode_input(data.images[:200], m.A)
    short = block_descent(m, V0, iters=4)
    long = block_descent(m, V0, iters=100)
    worst = max(float(np.max(np.abs(a - b))) for a, b in zip(short.V, long.V))
    assert worst < 1e-6
