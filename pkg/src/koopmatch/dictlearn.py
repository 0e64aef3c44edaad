"""Shared dictionary learning for two systems.

The dictionary is ``Psi(z) = (1, z1, z2, net(z))`` where ``net`` is a small
tanh MLP. Training alternates closed-form Koopman fits for both systems
with gradient steps on the combined loss

    J = mean ||Psi(x') - K1 Psi(x)||^2 + mean ||Psi(y') - K2 Psi(y)||^2,

and from time to time a similarity step that pulls ``K1`` and ``K2``
towards matrices related by ``P K1 = K2 P``.
"""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .dynsys import SamplePairs
from .edmd import Dictionary, KoopmanMatrix, _ls_koopman, left_eigens, pair_spectra, SpectrumError

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = "koopmatch-mlp/1"


# --------------------------------------------------------------------------
# network
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MlpDictionary:
    """Fixed prefix ``(1, z1, z2)`` followed by ``n_out`` tanh-MLP outputs."""

    theta: np.ndarray = field(repr=False)
    width: int = 32
    depth: int = 3
    n_out: int = 5
    input_dim: int = 2

    @classmethod
    def init(cls, seed: int, width: int = 32, depth: int = 3, n_out: int = 5, input_dim: int = 2):
        """Weights and biases uniform in ``+-1/sqrt(fan_in)``.

        Nonzero biases matter: with zero biases the tanh network is an odd
        function and cannot produce even-degree features.
        """
        rng = np.random.default_rng(seed)
        parts = []
        for fan_in, fan_out in _layer_sizes(input_dim, width, depth, n_out):
            bound = 1.0 / np.sqrt(fan_in)
            parts.append(rng.uniform(-bound, bound, fan_out * fan_in))
            parts.append(rng.uniform(-bound, bound, fan_out))
        return cls(np.concatenate(parts), width, depth, n_out, input_dim)

    def __post_init__(self):
        expected = sum(i * o + o for i, o in _layer_sizes(self.input_dim, self.width, self.depth, self.n_out))
        theta = np.asarray(self.theta, dtype=float)
        if theta.shape != (expected,):
            raise ValueError(f"theta must have {expected} entries")
        object.__setattr__(self, "theta", theta)

    @property
    def n(self) -> int:
        return 1 + self.input_dim + self.n_out

    @property
    def fixed_prefix(self) -> int:
        return 1 + self.input_dim

    def with_theta(self, theta) -> "MlpDictionary":
        return MlpDictionary(np.array(theta, dtype=float), self.width, self.depth, self.n_out, self.input_dim)

    def layers(self):
        out, k = [], 0
        for fan_in, fan_out in _layer_sizes(self.input_dim, self.width, self.depth, self.n_out):
            W = self.theta[k : k + fan_in * fan_out].reshape(fan_out, fan_in)
            k += fan_in * fan_out
            b = self.theta[k : k + fan_out]
            k += fan_out
            out.append((W, b))
        return out

    def _forward(self, X):
        acts = [X]
        layers = self.layers()
        for W, b in layers[:-1]:
            acts.append(np.tanh(acts[-1] @ W.T + b))
        W, b = layers[-1]
        return acts, acts[-1] @ W.T + b

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        shape = X.shape[:-1]
        flat = X.reshape(-1, self.input_dim)
        _, out = self._forward(flat)
        psi = np.concatenate([np.ones((len(flat), 1)), flat, out], axis=1)
        return psi.reshape(shape + (self.n,))

    def backward(self, X, dpsi) -> np.ndarray:
        """Gradient with respect to ``theta`` of ``sum(dpsi * Psi(X))``."""
        acts, _ = self._forward(X)
        layers = self.layers()
        delta = dpsi[:, self.fixed_prefix :]
        grads = []
        for li in range(len(layers) - 1, -1, -1):
            W, _ = layers[li]
            a_in = acts[li]
            grads.append((delta.sum(axis=0), delta.T @ a_in))
            if li:
                delta = (delta @ W) * (1.0 - a_in**2)
        flat = []
        for gb, gW in reversed(grads):
            flat.append(gW.ravel())
            flat.append(gb)
        return np.concatenate(flat)

    def as_dictionary(self) -> Dictionary:
        names = ("1",) + tuple(f"z{i + 1}" for i in range(self.input_dim)) + tuple(
            f"nn{i + 1}" for i in range(self.n_out)
        )
        return Dictionary(
            self.n, self.input_dim, self.__call__, self.fixed_prefix, "mlp",
            tuple(range(1, 1 + self.input_dim)), None, names,
        )


def _layer_sizes(input_dim, width, depth, n_out):
    sizes = [input_dim] + [width] * depth + [n_out]
    return list(zip(sizes[:-1], sizes[1:]))


# --------------------------------------------------------------------------
# loss, K-step, gradient
# --------------------------------------------------------------------------


def _as_matrix(k):
    return np.asarray(k.k if isinstance(k, KoopmanMatrix) else k, dtype=float)


def _system_loss(K, PX, PY):
    R = PY - PX @ K.T
    return float(np.sum(R * R) / len(PX)) if len(PX) else 0.0, R


def combined_loss(k1, k2, dictionary: MlpDictionary, data1: SamplePairs, data2: SamplePairs) -> float:
    """Per-sample mean residual of both systems, summed."""
    K1, K2 = _as_matrix(k1), _as_matrix(k2)
    if K1.shape != (dictionary.n,) * 2 or K2.shape != (dictionary.n,) * 2:
        raise ValueError("Koopman matrices do not match the dictionary size")
    if len(data1) == 0 or len(data2) == 0:
        raise ValueError("combined loss needs nonempty data for both systems")
    j1, _ = _system_loss(K1, dictionary(data1.x), dictionary(data1.x_next))
    j2, _ = _system_loss(K2, dictionary(data2.x), dictionary(data2.x_next))
    return j1 + j2


def loss_and_grad(k1, k2, dictionary: MlpDictionary, data1: SamplePairs, data2: SamplePairs):
    """``(J, dJ/dtheta)`` by backpropagation; empty data contributes nothing."""
    g = np.zeros_like(dictionary.theta)
    total = 0.0
    for K, data in ((_as_matrix(k1), data1), (_as_matrix(k2), data2)):
        M = len(data)
        if M == 0:
            continue
        PX, PY = dictionary(data.x), dictionary(data.x_next)
        j, R = _system_loss(K, PX, PY)
        total += j
        # d/dPsi(x') = 2R/M, d/dPsi(x) = -2 R K / M
        g += dictionary.backward(data.x_next, 2.0 * R / M)
        g += dictionary.backward(data.x, -2.0 * (R @ K) / M)
    return total, g


def kstep(dictionary, data: SamplePairs, ridge: float = 1e-8) -> KoopmanMatrix:
    """Closed-form Koopman fit with the current dictionary."""
    if len(data) == 0:
        raise ValueError("kstep needs at least one sample pair")
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    K = _ls_koopman(dictionary(data.x), dictionary(data.x_next), ridge)
    return KoopmanMatrix(K, "discrete", "least_squares", data.dt)


def grad_check(dictionary: MlpDictionary, k1, k2, data, eps: float = 1e-5, n_params: int = 50, seed: int = 0) -> float:
    """Max relative error of backprop against central differences on random parameters.

    ``data`` is the pair ``(data1, data2)``. Entries where both gradients
    vanish count as exact.
    """
    if not 1e-8 <= eps <= 1e-4:
        raise ValueError("eps must lie in [1e-8, 1e-4]")
    data1, data2 = data
    _, g = loss_and_grad(k1, k2, dictionary, data1, data2)
    rng = np.random.default_rng(seed)
    idx = rng.choice(g.size, size=min(n_params, g.size), replace=False)
    worst = 0.0
    for i in idx:
        th = dictionary.theta.copy()
        th[i] += eps
        jp, _ = loss_and_grad(k1, k2, dictionary.with_theta(th), data1, data2)
        th[i] -= 2 * eps
        jm, _ = loss_and_grad(k1, k2, dictionary.with_theta(th), data1, data2)
        fd = (jp - jm) / (2 * eps)
        scale = max(abs(fd), abs(g[i]))
        if scale > 0:
            worst = max(worst, abs(fd - g[i]) / scale)
    return worst


# --------------------------------------------------------------------------
# similarity step
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SimilarityState:
    p: np.ndarray
    residual: float
    cond: float
    objective_start: float
    objective_end: float
    iterations: int
    decreased: bool = True

    @property
    def ill_conditioned(self) -> bool:
        return not self.cond < 1e8


def _sim_objective(A, B, P, beta, quad1, quad2):
    S = P @ A - B @ P
    return beta * float(np.sum(S * S)) + _quad_loss(A, *quad1) + _quad_loss(B, *quad2)


def _quad_stats(dictionary, data):
    """Sufficient statistics of ``mean ||Psi(x') - K Psi(x)||^2`` as a quadratic in K."""
    if data is None or len(data) == 0:
        return None
    PX, PY = dictionary(data.x), dictionary(data.x_next)
    M = len(PX)
    return (PX.T @ PX / M, PY.T @ PX / M, float(np.sum(PY * PY) / M))


def _quad_loss(K, G=None, C=None, E=None):
    if G is None:
        return 0.0
    return E - 2.0 * float(np.sum(K * C)) + float(np.sum((K @ G) * K))


def _ab_step(P, beta, A, B, quad1, quad2):
    """Exact minimiser over the free blocks of (A, B) for fixed P.

    The objective is quadratic, so the half-gradient is affine in the free
    unknowns; its matrix is assembled column by column and solved in the
    least-squares sense. A block without data is held fixed.
    """
    N = P.shape[0]
    free = [q is not None for q in (quad1, quad2)]
    if not any(free):
        return A, B

    def half_grad(Av, Bv, with_data=True):
        S = P @ Av - Bv @ P
        ga = beta * P.T @ S
        gb = -beta * S @ P.T
        if with_data:
            if free[0]:
                ga = ga + Av @ quad1[0]
            if free[1]:
                gb = gb + Bv @ quad2[0]
        return [g.ravel() for g, f in zip((ga, gb), free) if f]

    Z = np.zeros((N, N))
    cols = []
    for blk in (0, 1):
        if not free[blk]:
            continue
        for k in range(N * N):
            E = np.zeros(N * N)
            E[k] = 1.0
            E = E.reshape(N, N)
            cols.append(np.concatenate(half_grad(E, Z) if blk == 0 else half_grad(Z, E)))
    Mat = np.stack(cols, axis=1)
    # constant part: the fixed block enters through the penalty only
    const = np.concatenate(half_grad(Z if free[0] else A, Z if free[1] else B, with_data=False))
    targets = np.concatenate([q[1].ravel() for q, f in zip((quad1, quad2), free) if f])
    sol = np.linalg.lstsq(Mat, targets - const, rcond=None)[0]
    out = [A, B]
    k = 0
    for blk in (0, 1):
        if free[blk]:
            out[blk] = sol[k : k + N * N].reshape(N, N)
            k += N * N
    return out[0], out[1]


def _p_step(A, B, P, inner: int = 1000):
    """``inner`` projected-gradient steps on ``||P A - B P||_F^2`` over ``||P||_F = 1``.

    The objective is homogeneous of degree two, so on ``||P||_F >= 1`` the
    minimum sits on the unit sphere. With step ``1 / lambda_max`` each
    normalised gradient step applies the filter ``1 - lambda / lambda_max``
    to the eigen-coordinates of the quadratic form, which never raises the
    Rayleigh quotient. The steps are applied in closed form. Components of
    the start inside a (near) null space are kept, so an invertible start
    stays invertible when exact similarity transforms exist.
    """
    N = A.shape[0]
    # row-major vec: vec(P A) = (I kron A^T) vec(P), vec(B P) = (B kron I) vec(P)
    L = np.kron(np.eye(N), A.T) - np.kron(B, np.eye(N))
    w, V = np.linalg.eigh(L.T @ L)
    w = np.clip(w, 0.0, None)
    if w[-1] <= 0:
        return P
    c = V.T @ P.ravel()
    c = c * (1.0 - w / w[-1]) ** inner
    nrm = np.linalg.norm(c)
    if not nrm > 0:
        return P
    return (V @ c / nrm).reshape(N, N)


def similarity_step(
    k1,
    k2,
    dictionary=None,
    data1: Optional[SamplePairs] = None,
    data2: Optional[SamplePairs] = None,
    beta: float = 100.0,
    seed: int = 0,
    max_iter: int = 200,
    rtol: float = 1e-12,
):
    """Local minimiser of ``beta ||P A - B P||^2 + J(A, B)`` with ``||P||_F^2 >= 1``.

    Block-coordinate descent from ``(K1, K2, P_random)``: the (A, B) block
    is solved exactly as a linear least-squares problem and the P block by
    projected gradient on the unit sphere; each block update is accepted
    only if it does not raise the objective. Without data (``data1``/``data2`` None) the matching
    matrix is held fixed. ``beta = 0`` reduces to the plain fits.

    Returns ``(K1', K2', SimilarityState)``; if the objective failed to
    decrease, the inputs come back unchanged with ``decreased=False``.
    """
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    A0, B0 = _as_matrix(k1), _as_matrix(k2)
    N = A0.shape[0]
    quad1 = _quad_stats(dictionary, data1) if dictionary is not None else None
    quad2 = _quad_stats(dictionary, data2) if dictionary is not None else None
    q1 = quad1 or (None,) * 3
    q2 = quad2 or (None,) * 3

    def objective(A, B, P):
        return _sim_objective(A, B, P, beta, q1, q2)

    rng = np.random.default_rng(seed)
    P = rng.standard_normal((N, N))
    P /= np.linalg.norm(P)

    A, B = A0.copy(), B0.copy()
    f_start = f_prev = objective(A, B, P)
    it = 0
    for it in range(1, max_iter + 1):
        if beta > 0:
            P_new = _p_step(A, B, P)
            if objective(A, B, P_new) <= objective(A, B, P):
                P = P_new
        A_new, B_new = _ab_step(P, beta, A, B, quad1, quad2)
        if objective(A_new, B_new, P) <= objective(A, B, P):
            A, B = A_new, B_new
        f = objective(A, B, P)
        converged = f_prev - f <= rtol * max(abs(f_prev), 1e-300)
        f_prev = f
        if converged:
            break
    decreased = f_prev <= f_start
    if not decreased:
        log.warning("similarity step did not decrease the objective; returning inputs")
        A, B = A0, B0
    S = P @ A - B @ P
    state = SimilarityState(P, float(np.linalg.norm(S)), float(np.linalg.cond(P)), f_start, f_prev, it, decreased)
    dt = getattr(k1, "dt", None)
    mode = getattr(k1, "mode", "discrete")
    if mode == "discrete" and dt is None:
        dt = 0.0
    return (
        KoopmanMatrix(A, mode, "least_squares", dt),
        KoopmanMatrix(B, mode, "least_squares", dt),
        state,
    )


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    ridge: float = 1e-8
    beta: float = 100.0
    iters: int = 5000
    sim_every: int = 50
    seed: int = 0
    batch: Optional[int] = None
    width: int = 32
    optimizer: str = "adam"

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")
        if self.iters < 0 or self.sim_every < 0:
            raise ValueError("iters and sim_every must be nonnegative")
        if self.optimizer not in ("gd", "adam"):
            raise ValueError("optimizer must be 'gd' or 'adam'")


@dataclass
class History:
    iter: list = field(default_factory=list)
    J: list = field(default_factory=list)
    sim_residual: list = field(default_factory=list)
    spectrum_gap: list = field(default_factory=list)
    aborted: bool = False
    last_state: Optional[SimilarityState] = None

    def append(self, i, J, sim, gap):
        self.iter.append(i)
        self.J.append(J)
        self.sim_residual.append(sim)
        self.spectrum_gap.append(gap)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "J", "sim_residual", "spectrum_gap"])
            for row in zip(self.iter, self.J, self.sim_residual, self.spectrum_gap):
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def spectrum_gap(k1, k2) -> float:
    """Largest distance between optimally paired eigenvalues."""
    try:
        s1, s2 = left_eigens(k1), left_eigens(k2)
        perm = pair_spectra(s1, s2, np.inf)
    except (SpectrumError, np.linalg.LinAlgError):
        return float("nan")
    return float(np.max(np.abs(s1.eigenvalues - s2.eigenvalues[perm])))


def _fit_pair(dictionary, data1, data2, cfg, it):
    """Least-squares K for both systems, then the similarity step when due.

    Returns ``(k1, k2, k1_ls, k2_ls, state)``; the ``_ls`` matrices are the
    plain fits before the similarity step.
    """
    k1 = kstep(dictionary, data1, cfg.ridge)
    k2 = kstep(dictionary, data2, cfg.ridge)
    state = None
    s1, s2 = k1, k2
    if cfg.sim_every and cfg.beta > 0 and it % cfg.sim_every == 0:
        s1, s2, state = similarity_step(
            k1, k2, dictionary, data1, data2, cfg.beta, seed=cfg.seed + it
        )
    return s1, s2, k1, k2, state


def _minibatch(data: SamplePairs, idx):
    return SamplePairs(data.x[idx], data.x_next[idx], data.dt, data.seed)


def train(sys1_data: SamplePairs, sys2_data: SamplePairs, cfg: TrainConfig, dictionary: Optional[MlpDictionary] = None):
    """Alternate K-steps (plus periodic similarity steps) with gradient steps.

    Returns ``(dictionary, K1, K2, history)``. The returned matrices are the
    plain least-squares fits for the final dictionary. When ``beta > 0`` and
    ``sim_every > 0`` a closing similarity step is still run and its state
    is kept in ``history.last_state`` as the exit diagnostic for ``P``; the
    similarity-adjusted matrices themselves are discarded because they
    trade fit accuracy for similarity. Training stops early if the
    least-squares loss climbs above ten times its running minimum (floored at
    1e-6 of the initial loss, so noise at the resolution limit is ignored).
    ``history.J`` records that least-squares loss.
    """
    if len(sys1_data) == 0 or len(sys2_data) == 0:
        raise ValueError("both data sets must be nonempty")
    net = dictionary or MlpDictionary.init(cfg.seed, width=cfg.width)
    rng = np.random.default_rng(cfg.seed)
    hist = History()
    m_t = np.zeros_like(net.theta)
    v_t = np.zeros_like(net.theta)
    b1, b2, eps = 0.9, 0.999, 1e-8
    j_min = np.inf
    best = net
    state = None
    sim = float("nan")
    for it in range(cfg.iters):
        k1, k2, k1_ls, k2_ls, st = _fit_pair(net, sys1_data, sys2_data, cfg, it)
        if st is not None:
            state = st
            sim = st.residual
        d1, d2 = sys1_data, sys2_data
        if cfg.batch is not None:
            if cfg.batch < len(d1):
                d1 = _minibatch(d1, rng.choice(len(d1), cfg.batch, replace=False))
            if cfg.batch < len(d2):
                d2 = _minibatch(d2, rng.choice(len(d2), cfg.batch, replace=False))
        J, g = loss_and_grad(k1, k2, net, d1, d2)
        # history and divergence use the plain least-squares fit, since the
        # similarity step trades J for similarity on purpose
        J_fit = J
        if st is not None:
            J_fit, g_ls = loss_and_grad(k1_ls, k2_ls, net, d1, d2)
            # the similarity-adjusted gradient is typically orders of magnitude
            # larger; clipping it to the plain gradient's norm keeps its
            # direction without letting it dominate the optimizer moments
            gn, cap = np.linalg.norm(g), np.linalg.norm(g_ls)
            if gn > cap > 0:
                g = g * (cap / gn)
        hist.append(it, J_fit, sim, spectrum_gap(k1_ls, k2_ls))
        if it == 0:
            j_floor = 1e-6 * J_fit
        if J_fit < j_min:
            j_min, best = J_fit, net
        elif J_fit > 10 * max(j_min, j_floor):
            log.warning("training diverged at iteration %d (J=%.3g, min %.3g)", it, J_fit, j_min)
            hist.aborted = True
            net = best
            break
        if cfg.optimizer == "gd":
            step = cfg.lr * g
        else:
            m_t = b1 * m_t + (1 - b1) * g
            v_t = b2 * v_t + (1 - b2) * g * g
            mh = m_t / (1 - b1 ** (it + 1))
            vh = v_t / (1 - b2 ** (it + 1))
            step = cfg.lr * mh / (np.sqrt(vh) + eps)
        net = net.with_theta(net.theta - step)

    k1 = kstep(net, sys1_data, cfg.ridge)
    k2 = kstep(net, sys2_data, cfg.ridge)
    if cfg.beta > 0 and cfg.sim_every:
        _, _, state = similarity_step(k1, k2, net, sys1_data, sys2_data, cfg.beta, seed=cfg.seed + cfg.iters)
    hist.last_state = state
    return net, k1, k2, hist


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


def save_checkpoint(path, net: MlpDictionary, k1, k2, cfg: Optional[TrainConfig] = None) -> None:
    """JSON checkpoint with a version tag; floats are written with repr precision."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "width": net.width,
        "depth": net.depth,
        "n_out": net.n_out,
        "input_dim": net.input_dim,
        "theta": [float(v) for v in net.theta],
        "k1": _as_matrix(k1).tolist(),
        "k2": _as_matrix(k2).tolist(),
        "dt": getattr(k1, "dt", None),
        "config": asdict(cfg) if cfg is not None else None,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)


def load_checkpoint(path):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')!r}")
    net = MlpDictionary(np.array(doc["theta"]), doc["width"], doc["depth"], doc["n_out"], doc["input_dim"])
    dt = doc.get("dt")
    k1 = KoopmanMatrix(np.array(doc["k1"]), "discrete", "least_squares", dt)
    k2 = KoopmanMatrix(np.array(doc["k2"]), "discrete", "least_squares", dt)
    return net, k1, k2
