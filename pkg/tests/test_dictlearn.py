import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from koopmatch.dynsys import SamplePairs, get_system, sample_pairs
from koopmatch.edmd import matrix_log, multinomial_dictionary, project_generator
from koopmatch.dictlearn import (
    MlpDictionary,
    TrainConfig,
    combined_loss,
    grad_check,
    kstep,
    load_checkpoint,
    loss_and_grad,
    save_checkpoint,
    similarity_step,
    spectrum_gap,
    train,
)

BOX = ([-1, -1], [1, 1])
SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])
DIAG = np.diag([1.0, -1.0])


def data(sid="vdp", n=30, dt=0.1, seed=0):
    return sample_pairs(get_system(sid), BOX, n, dt, seed)


def random_k(seed, n=8):
    return np.random.default_rng(seed).normal(size=(n, n)) / 3


# network ------------------------------------------------------------------


def test_network_layout():
    net = MlpDictionary.init(0)
    assert net.n == 8 and net.fixed_prefix == 3
    Z = np.random.default_rng(0).uniform(-1, 1, (6, 2))
    out = net(Z)
    assert out.shape == (6, 8) and np.all(np.isfinite(out))
    np.testing.assert_array_equal(out[:, 0], 1.0)
    np.testing.assert_array_equal(out[:, 1:3], Z)


def test_network_has_even_features():
    # with nonzero biases the learned outputs are not odd functions
    net = MlpDictionary.init(0)
    Z = np.random.default_rng(1).uniform(-1, 1, (20, 2))
    assert np.max(np.abs(net(Z)[:, 3:] + net(-Z)[:, 3:])) > 1e-3


def test_as_dictionary():
    net = MlpDictionary.init(2)
    d = net.as_dictionary()
    Z = np.random.default_rng(0).uniform(-1, 1, (5, 2))
    np.testing.assert_array_equal(d(Z), net(Z))
    np.testing.assert_array_equal(d(Z) @ d.selection_matrix().T, Z)


# loss ---------------------------------------------------------------------


def test_loss_identity_zero_dt():
    d = data(dt=0.0)
    net = MlpDictionary.init(0)
    assert combined_loss(np.eye(8), np.eye(8), net, d, d) == 0.0


def test_loss_exact_linear_dictionary():
    sys = get_system("lindiag")
    lin = multinomial_dictionary(2, 2)
    dt = 0.1
    X = np.random.default_rng(0).uniform(-1, 1, (50, 2))
    d = SamplePairs(X, sys.analytic_flow(X, dt), dt, 0)
    K = expm(project_generator(sys, lin).k * dt)
    assert combined_loss(K, K, lin, d, d) <= 1e-12


def test_loss_random_k_positive():
    d = data()
    assert combined_loss(random_k(0), random_k(1), MlpDictionary.init(0), d, d) > 0


def test_loss_validation():
    d = data()
    net = MlpDictionary.init(0)
    with pytest.raises(ValueError):
        combined_loss(np.eye(3), np.eye(8), net, d, d)
    empty = SamplePairs(np.zeros((0, 2)), np.zeros((0, 2)), 0.1, 0)
    with pytest.raises(ValueError):
        combined_loss(np.eye(8), np.eye(8), net, empty, d)


# kstep --------------------------------------------------------------------


def test_kstep_zero_dt_identity():
    d = data(n=200, dt=0.0)
    np.testing.assert_allclose(kstep(MlpDictionary.init(0), d, ridge=0.0).k, np.eye(8), atol=1e-8)


def test_kstep_lindiag_eigenvalues():
    d = data("lindiag", n=200, dt=0.01)
    k = kstep(MlpDictionary.init(0), d)
    lam = np.linalg.eigvals(matrix_log(k.k) / 0.01)
    for a in (1.0, -0.5):
        assert np.min(np.abs(lam - a)) <= 1e-3


def test_kstep_singular_gram():
    X = np.random.default_rng(0).uniform(-1, 1, (5, 2))
    with pytest.raises(np.linalg.LinAlgError):
        kstep(MlpDictionary.init(0), SamplePairs(X, X, 0.1, 0), ridge=0.0)  # 5 samples, 8 features


# gradient -----------------------------------------------------------------


@pytest.mark.parametrize("seed", [0, 1, 2])
@pytest.mark.parametrize("eps", [1e-4, 1e-6])
def test_grad_check(seed, eps):
    d1, d2 = data("vdp", seed=seed), data("lindiag", seed=seed + 10)
    err = grad_check(MlpDictionary.init(seed), random_k(seed), random_k(seed + 1), (d1, d2), eps=eps, seed=seed)
    assert err <= 1e-5


def test_grad_check_zero_data():
    empty = SamplePairs(np.zeros((0, 2)), np.zeros((0, 2)), 0.1, 0)
    net = MlpDictionary.init(0)
    J, g = loss_and_grad(random_k(0), random_k(1), net, empty, empty)
    assert J == 0.0 and not np.any(g)
    assert grad_check(net, random_k(0), random_k(1), (empty, empty)) == 0.0


def test_grad_check_eps_range():
    d = data()
    with pytest.raises(ValueError):
        grad_check(MlpDictionary.init(0), np.eye(8), np.eye(8), (d, d), eps=1e-2)


def test_backprop_matches_directional_derivative():
    # independent oracle: derivative of J along a random direction in theta
    d1, d2 = data("vdp", seed=4), data("lindiag", seed=5)
    net = MlpDictionary.init(4)
    K1, K2 = random_k(4), random_k(5)
    _, g = loss_and_grad(K1, K2, net, d1, d2)
    v = np.random.default_rng(9).normal(size=g.size)
    h = 1e-6
    jp = combined_loss(K1, K2, net.with_theta(net.theta + h * v), d1, d2)
    jm = combined_loss(K1, K2, net.with_theta(net.theta - h * v), d1, d2)
    assert abs((jp - jm) / (2 * h) - g @ v) <= 1e-6 * abs(g @ v)


# similarity step -----------------------------------------------------------


def test_similarity_identical_matrices():
    K = random_k(3, 4)
    a, b, st_ = similarity_step(K, K)
    assert st_.residual <= 1e-10
    assert np.linalg.norm(st_.p) ** 2 >= 1 - 1e-12
    np.testing.assert_array_equal(a.k, K)


def test_similarity_example5():
    a, b, st_ = similarity_step(SWAP, DIAG)
    assert st_.residual <= 1e-6
    assert np.linalg.norm(st_.p) ** 2 >= 1 - 1e-12 and st_.cond < 1e8
    P = st_.p
    # any P with P SWAP = DIAG P has rows proportional to (1, 1) and (1, -1)
    assert abs(P[0, 0] - P[0, 1]) <= 1e-6 and abs(P[1, 0] + P[1, 1]) <= 1e-6


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 1000))
def test_similarity_monotone(seed):
    d1, d2 = data("vdp", n=40, seed=seed), data("lindiag", n=40, seed=seed + 1)
    net = MlpDictionary.init(seed)
    k1, k2 = kstep(net, d1), kstep(net, d2)
    a, b, st_ = similarity_step(k1, k2, net, d1, d2, beta=100.0, seed=seed)
    assert st_.objective_end <= st_.objective_start
    # the initial P is the normalised Gaussian draw from the same seed
    P0 = np.random.default_rng(seed).standard_normal((8, 8))
    P0 /= np.linalg.norm(P0)
    r0 = np.linalg.norm(P0 @ k1.k - k2.k @ P0)
    assert st_.residual <= r0
    assert np.linalg.norm(st_.p) ** 2 >= 1 - 1e-12


def test_similarity_beta_zero_is_plain_fit():
    d1, d2 = data("vdp", n=60, seed=1), data("lindiag", n=60, seed=2)
    net = MlpDictionary.init(1)
    a, b, st_ = similarity_step(random_k(0), random_k(1), net, d1, d2, beta=0.0)
    np.testing.assert_allclose(a.k, kstep(net, d1, ridge=0.0).k, atol=1e-6)
    np.testing.assert_allclose(b.k, kstep(net, d2, ridge=0.0).k, atol=1e-6)


def test_similarity_negative_beta():
    with pytest.raises(ValueError):
        similarity_step(SWAP, DIAG, beta=-1.0)


# training -----------------------------------------------------------------


def test_train_zero_iterations():
    d1, d2 = data("vdp", n=40, seed=1), data("lindiag", n=40, seed=2)
    cfg = TrainConfig(iters=0, seed=3)
    net, k1, k2, hist = train(d1, d2, cfg)
    np.testing.assert_array_equal(net.theta, MlpDictionary.init(3).theta)
    np.testing.assert_array_equal(k1.k, kstep(net, d1).k)
    assert hist.J == []


def test_train_identical_systems_spectrum_gap():
    d = data("lindiag", n=100, dt=0.1, seed=0)
    net, k1, k2, hist = train(d, d, TrainConfig(iters=60, sim_every=20, seed=0))
    assert spectrum_gap(k1, k2) <= 1e-3
    assert not hist.aborted


def test_train_deterministic_and_prefix_fixed():
    d1, d2 = data("vdp", n=60, seed=1), data("lindiag", n=60, seed=2)
    cfg = TrainConfig(iters=30, sim_every=10, seed=5)
    a = train(d1, d2, cfg)
    b = train(d1, d2, cfg)
    assert a[0].theta.tobytes() == b[0].theta.tobytes()
    assert a[1].k.tobytes() == b[1].k.tobytes()
    assert a[3].J == b[3].J
    Z = np.random.default_rng(0).uniform(-1, 1, (10, 2))
    before, after = MlpDictionary.init(5)(Z)[:, :3], a[0](Z)[:, :3]
    assert before.tobytes() == after.tobytes()


def test_train_soft_monotonicity():
    d1 = data("vdp", n=200, seed=1)
    d2 = data("lindiag", n=200, seed=2)
    _, _, _, hist = train(d1, d2, TrainConfig(iters=200, sim_every=50, seed=0))
    J = np.array(hist.J)
    assert np.max(J[20:] / J[:-20]) <= 1.05


def test_train_history_csv(tmp_path):
    d1, d2 = data("vdp", n=40, seed=1), data("lindiag", n=40, seed=2)
    _, _, _, hist = train(d1, d2, TrainConfig(iters=5, sim_every=2))
    p = tmp_path / "h.csv"
    hist.to_csv(p)
    rows = p.read_text().splitlines()
    assert rows[0] == "iter,J,sim_residual,spectrum_gap" and len(rows) == 6


def test_train_config_validation():
    for bad in ({"lr": 0}, {"beta": -1}, {"iters": -1}, {"optimizer": "sgd"}):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_train_empty_data():
    empty = SamplePairs(np.zeros((0, 2)), np.zeros((0, 2)), 0.1, 0)
    with pytest.raises(ValueError):
        train(empty, data(), TrainConfig(iters=1))


def test_checkpoint_roundtrip(tmp_path):
    d = data()
    net = MlpDictionary.init(7)
    k1, k2 = kstep(net, d), kstep(net, d)
    p = tmp_path / "ck.json"
    save_checkpoint(p, net, k1, k2, TrainConfig())
    net2, a, b = load_checkpoint(p)
    assert net2.theta.tobytes() == net.theta.tobytes()
    assert a.k.tobytes() == k1.k.tobytes() and a.dt == k1.dt


def test_checkpoint_version(tmp_path):
    p = tmp_path / "ck.json"
    p.write_text('{"version": "old"}')
    with pytest.raises(ValueError):
        load_checkpoint(p)
