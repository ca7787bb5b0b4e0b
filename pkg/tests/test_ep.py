import math

import numpy as np
import pytest
from scipy import integrate, optimize

from qmlbench import ep
from qmlbench.ep import (
    EPConfig,
    EPNetwork,
    EPState,
    decide,
    energy,
    ep_update,
    free_phase,
    nudged_phase,
    one_hot_targets,
    rho,
    stationarity_residual,
    train_ep,
)

TIGHT = dict(free_iters=20000, nudged_iters=20000, tol=1e-13)


def small_net(sizes, seed, gain=1.0, bias_scale=0.3):
    net = EPNetwork.init(sizes, seed, gain)
    rng = np.random.default_rng(seed + 100)
    for b in net.biases:
        b[:] = rng.normal(0, bias_scale, b.shape)
    return net


def cost(net, x, y, cfg):
    d = free_phase(net, x, cfg).output - y
    return 0.5 * float(d @ d)


# ---------------------------------------------------------------- energy


def test_energy_zero_net():
    net = EPNetwork((3, 2), [np.zeros((3, 2))], [np.zeros(2)])
    assert energy(net, EPState([np.zeros(2)], np.zeros(3))) == 0.0


def test_energy_single_connection():
    net = EPNetwork((1, 1), [np.array([[1.0]])], [np.zeros(1)])
    # input unit is clamped at 0.5 and has no rho term; the hidden unit at 0.5 does
    e = energy(net, EPState([np.array([0.5])], np.array([0.5])))
    r = 0.5 * math.atanh(0.5) + 0.5 * math.log(0.75)
    assert e == pytest.approx(-0.25 + r, abs=1e-15)


def test_energy_two_free_units():
    # both ends of the edge free: a 0-input layer feeding two chained units
    net = EPNetwork((1, 1, 1), [np.zeros((1, 1)), np.array([[1.0]])], [np.zeros(1), np.zeros(1)])
    e = energy(net, EPState([np.array([0.5]), np.array([0.5])], np.array([0.0])))
    r = 0.5 * math.atanh(0.5) + 0.5 * math.log(0.75)
    assert e == pytest.approx(-0.25 + 2 * r, abs=1e-15)


def test_rho_matches_quadrature():
    for s in np.linspace(-0.99, 0.99, 41):
        q, _ = integrate.quad(np.arctanh, 0.0, s, epsabs=1e-13)
        assert rho(s) == pytest.approx(q, abs=1e-10)


def test_energy_random_net_matches_quadrature():
    rng = np.random.default_rng(0)
    net = small_net((5, 4, 3), 1)
    layers = [rng.uniform(-0.9, 0.9, 4), rng.uniform(-0.9, 0.9, 3)]
    x = rng.normal(size=5)
    coupling = x @ net.weights[0] @ layers[0] + layers[0] @ net.weights[1] @ layers[1]
    bias = sum(b @ s for b, s in zip(net.biases, layers))
    prim = sum(integrate.quad(np.arctanh, 0, v)[0] for s in layers for v in s)
    assert energy(net, EPState(layers, x)) == pytest.approx(-coupling - bias + prim, abs=1e-6)


def test_energy_domain_error():
    net = EPNetwork((1, 1), [np.ones((1, 1))], [np.zeros(1)])
    with pytest.raises(ValueError):
        energy(net, EPState([np.array([1.0])], np.array([0.0])))


# ---------------------------------------------------------------- relaxation


def test_free_phase_zero_net():
    net = EPNetwork((3, 4, 2), [np.zeros((3, 4)), np.zeros((4, 2))], [np.zeros(4), np.zeros(2)])
    st = free_phase(net, np.ones(3))
    assert st.converged and st.sweeps == 1
    assert all(np.all(s == 0) for s in st.layers)


def test_free_phase_scalar_tanh2():
    net = EPNetwork((1, 1), [np.array([[2.0]])], [np.zeros(1)])
    st = free_phase(net, np.array([1.0]), EPConfig(layer_sizes=(1, 1), **TIGHT))
    root = optimize.bisect(lambda s: s - math.tanh(2.0), -1, 1, xtol=1e-15)
    assert st.output[0] == pytest.approx(root, abs=1e-10)
    assert st.output[0] == pytest.approx(0.964, abs=1e-3)


def test_energy_non_increasing_along_sweeps():
    net = small_net((6, 5, 4, 2), 3, gain=0.8)
    x = np.random.default_rng(3).normal(size=6)
    trace = []
    free_phase(net, x, EPConfig(layer_sizes=net.layer_sizes), trace=trace)
    energies = [energy(net, EPState(layers, x)) for layers in trace]
    assert len(energies) > 2
    assert np.all(np.diff(energies) <= 1e-9)


def test_nudged_beta_to_zero_limit():
    net = small_net((4, 3, 2), 4)
    x = np.random.default_rng(4).normal(size=4)
    cfg = EPConfig(layer_sizes=net.layer_sizes, **TIGHT)
    f = free_phase(net, x, cfg)
    n = nudged_phase(net, x, np.array([0.85, -0.85]), 1e-6, f, cfg)
    assert max(np.max(np.abs(a - b)) for a, b in zip(f.layers, n.layers)) < 1e-5


def test_nudged_scalar_bisection():
    net = EPNetwork((1, 1), [np.zeros((1, 1))], [np.zeros(1)])
    cfg = EPConfig(layer_sizes=(1, 1), **TIGHT)
    n = nudged_phase(net, np.array([0.0]), np.array([0.85]), 0.1, config=cfg)
    root = optimize.bisect(lambda s: s - math.tanh(0.1 * (0.85 - s)), -1, 1, xtol=1e-15)
    assert n.output[0] == pytest.approx(root, abs=1e-10)
    assert n.output[0] == pytest.approx(0.078, abs=1e-3)


def _nudge_pair(seed, gain, rng):
    net = small_net((4, 5, 2), seed, gain=gain)
    x = rng.normal(size=4)
    y = np.where(rng.random(2) < 0.5, 0.85, -0.85)
    cfg = EPConfig(layer_sizes=net.layer_sizes, **TIGHT)
    f = free_phase(net, x, cfg)
    return f.output, nudged_phase(net, x, y, 0.01, f, cfg).output, y


def test_nudge_reduces_output_error():
    # the response to the nudge is a positive-definite block applied to (y - s*),
    # so the output displacement always has a positive projection on (y - s*)
    rng = np.random.default_rng(5)
    for seed in range(50):
        f, n, y = _nudge_pair(seed, 1.0, rng)
        assert (n - f) @ (y - f) > 0
        assert np.sum((n - y) ** 2) < np.sum((f - y) ** 2)


def test_nudge_moves_each_output_toward_target_when_weakly_coupled():
    rng = np.random.default_rng(6)
    for seed in range(50):
        f, n, y = _nudge_pair(seed, 0.3, rng)
        np.testing.assert_array_equal(np.sign(n - f), np.sign(y - f))


def test_nudged_requires_positive_beta():
    net = small_net((2, 2), 0)
    with pytest.raises(ValueError):
        nudged_phase(net, np.zeros(2), np.zeros(2), 0.0)


def test_stationarity_on_random_small_nets():
    rng = np.random.default_rng(6)
    checked = 0
    for seed in range(100):
        sizes = (int(rng.integers(2, 6)), int(rng.integers(2, 6)), int(rng.integers(2, 5)), 2)
        net = small_net(sizes, seed, gain=float(rng.uniform(0.2, 1.0)))
        st = free_phase(net, rng.normal(size=sizes[0]))
        if st.converged:
            checked += 1
            assert stationarity_residual(net, st) < 1e-3
    assert checked >= 90


def test_batched_free_phase_matches_single():
    net = small_net((4, 6, 2), 7)
    xs = np.random.default_rng(7).normal(size=(5, 4))
    cfg = EPConfig(layer_sizes=net.layer_sizes, **TIGHT)
    batch = free_phase(net, xs, cfg).output
    for k in range(5):
        np.testing.assert_allclose(batch[k], free_phase(net, xs[k], cfg).output, atol=1e-10)


# ---------------------------------------------------------------- update rule


def test_update_zero_when_states_equal():
    net = small_net((3, 2), 0)
    st = free_phase(net, np.ones(3))
    dW, db = ep_update(st, st, 0.1, 0.5)
    assert all(np.all(d == 0) for d in dW + db)


def test_update_scalar_arithmetic():
    free = EPState([np.array([0.5]), np.array([0.5])], np.array([0.0]))
    nudged = EPState([np.array([0.6]), np.array([0.6])], np.array([0.0]))
    dW, db = ep_update(free, nudged, 0.1, 1.0)
    assert dW[1][0, 0] == pytest.approx(1.1, abs=1e-12)
    assert db[0][0] == pytest.approx(1.0, abs=1e-12)


def fd_relative_errors(seed):
    net = small_net((4, 3, 2), seed)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=4)
    y = np.array([0.85, -0.85])
    cfg = EPConfig(layer_sizes=(4, 3, 2), **TIGHT)
    beta = 1e-3
    f = free_phase(net, x, cfg)
    n = nudged_phase(net, x, y, beta, f, cfg)
    dW, db = ep_update(f, n, beta, 1.0)
    h = 1e-6
    rel = []
    for p, d in zip(net.params(), dW + db):
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            cp = cost(net, x, y, cfg)
            p[idx] = old - h
            cm = cost(net, x, y, cfg)
            p[idx] = old
            g = -(cp - cm) / (2 * h)  # the EP delta estimates the negative gradient
            rel.append(abs(d[idx] - g) / max(abs(g), 1e-12))
    return np.array(rel)


def test_ep_delta_matches_finite_differences():
    rel = fd_relative_errors(3)
    assert rel.size == 4 * 3 + 3 * 2 + 3 + 2
    assert np.mean(rel <= 0.05) >= 0.9
    assert rel.max() <= 0.2


# ---------------------------------------------------------------- prediction and training


def test_decide_examples():
    np.testing.assert_array_equal(decide([[0.8, -0.3], [-0.1, 0.4], [0.2, 0.2]]), [0, 1, 0])


def test_targets():
    np.testing.assert_array_equal(one_hot_targets([0, 1]), [[0.85, -0.85], [-0.85, 0.85]])


def two_blob_features(n, seed):
    rng = np.random.default_rng(seed)
    x = np.zeros((2 * n, 20))
    x[:n, :2] = rng.normal([-1.5, -1.5], 0.5, (n, 2))
    x[n:, :2] = rng.normal([1.5, 1.5], 0.5, (n, 2))
    return x, np.r_[np.zeros(n, int), np.ones(n, int)]


def test_train_two_blobs():
    x, y = two_blob_features(60, 0)
    xv, yv = two_blob_features(20, 1)
    cfg = EPConfig(max_epochs=30, layer_sizes=(20, 32, 16, 2))
    net = train_ep(x, y, xv, yv, cfg)
    assert net.metadata["best_valid_accuracy"] >= 0.95
    assert net.metadata["epochs_run"] <= 30
    assert all(np.all(np.isfinite(p)) for p in net.params())


def test_train_deterministic_and_early_stops():
    x, y = two_blob_features(20, 2)
    xv, yv = two_blob_features(10, 3)
    cfg = EPConfig(max_epochs=60, patience=3, layer_sizes=(20, 8, 2))
    a = train_ep(x, y, xv, yv, cfg)
    b = train_ep(x, y, xv, yv, cfg)
    for p, q in zip(a.params(), b.params()):
        np.testing.assert_array_equal(p, q)
    # separable blobs saturate validation accuracy, so patience ends the run early
    assert a.metadata["epochs_run"] < 60


def test_train_rejects_single_class():
    x, _ = two_blob_features(5, 0)
    with pytest.raises(ValueError):
        train_ep(x, np.zeros(10, int), x, np.r_[np.zeros(5, int), np.ones(5, int)])


def test_cosine_schedule():
    assert ep.cosine_lr(0.05, 0, 100) == pytest.approx(0.05)
    assert ep.cosine_lr(0.05, 50, 100) == pytest.approx(0.025)
    assert ep.cosine_lr(0.05, 100, 100) == pytest.approx(0.0, abs=1e-15)


def test_network_json_round_trip(tmp_path):
    net = small_net((4, 3, 2), 1)
    net.save(tmp_path / "n.json")
    again = EPNetwork.load(tmp_path / "n.json")
    for p, q in zip(net.params(), again.params()):
        np.testing.assert_array_equal(p, q)


def test_config_validation():
    with pytest.raises(ValueError):
        EPConfig(beta=0)
    with pytest.raises(ValueError):
        EPConfig(momentum=1.0)
    with pytest.raises(ValueError):
        EPConfig(patience=0)
