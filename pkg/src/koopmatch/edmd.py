"""Finite-dimensional Koopman projections.

Conventions
-----------
A ``KoopmanMatrix`` ``K`` acts on the dictionary column ``Psi`` so that the
observable ``a^T Psi`` is mapped to ``a^T K Psi``. For sampled data this
means ``Psi(x') ~ K Psi(x)``; left eigenvectors ``v`` with ``v^T K = mu v^T``
give eigenfunctions ``v^T Psi``.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .dynsys import SamplePairs, SystemSpec

log = logging.getLogger(__name__)


class ClosureError(ValueError):
    """The generator maps a dictionary element outside the dictionary span."""


class SpectrumError(ValueError):
    """Eigen-decomposition or spectrum pairing could not be completed."""


# --------------------------------------------------------------------------
# dictionaries
# --------------------------------------------------------------------------


def cantor_pair(m: int, n: int) -> int:
    return (m + n) * (m + n + 1) // 2 + n


def cantor_unpair(j: int) -> tuple:
    w = (math.isqrt(8 * j + 1) - 1) // 2
    n = j - w * (w + 1) // 2
    return (w - n, n)


@dataclass(frozen=True)
class Dictionary:
    """A finite list of observables ``Psi = (psi_1, ..., psi_N)``.

    ``evaluate`` maps points of shape ``(..., dim)`` to ``(..., n)``.
    ``coordinate_index[k]`` is the position of the coordinate map ``z_k``,
    which makes the selection matrix ``B`` with ``B Psi(z) = z``.
    ``exponents`` is set for monomial dictionaries only.
    """

    n: int
    dim: int
    evaluate: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    fixed_prefix: int
    kind: str
    coordinate_index: tuple
    exponents: Optional[tuple] = None
    names: tuple = ()

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.dim:
            raise ValueError(f"dictionary expects points of dimension {self.dim}")
        return self.evaluate(X)

    def selection_matrix(self) -> np.ndarray:
        B = np.zeros((self.dim, self.n))
        for k, j in enumerate(self.coordinate_index):
            B[k, j] = 1.0
        return B

    def gram_min_singular(self, box=(-1.0, 1.0), n_probe: int = 200, seed: int = 0) -> float:
        """Smallest singular value of the probe Gram matrix (linear independence check)."""
        rng = np.random.default_rng(seed)
        lo, hi = box
        P = lo + (hi - lo) * rng.random((n_probe, self.dim))
        Phi = self(P)
        G = Phi.T @ Phi / n_probe
        return float(np.linalg.svd(G, compute_uv=False)[-1])


def monomial_dictionary(exponents: Sequence[Sequence[int]], kind: str = "custom") -> Dictionary:
    exps = tuple(tuple(int(e) for e in ex) for ex in exponents)
    dim = len(exps[0])
    if any(len(e) != dim for e in exps):
        raise ValueError("all exponent tuples need the same length")
    coord = []
    for k in range(dim):
        unit = tuple(1 if i == k else 0 for i in range(dim))
        if unit not in exps:
            raise ValueError(f"coordinate map z{k + 1} missing from dictionary")
        coord.append(exps.index(unit))
    E = np.array(exps, dtype=float)

    def evaluate(X):
        out = np.ones(X.shape[:-1] + (len(exps),))
        for i in range(dim):
            col = E[:, i]
            if np.any(col):
                out = out * X[..., i : i + 1] ** col
        return out

    names = tuple(
        "*".join(f"z{i + 1}^{e}" if e > 1 else f"z{i + 1}" for i, e in enumerate(ex) if e) or "1"
        for ex in exps
    )
    prefix = 0
    while prefix < len(exps) and sum(exps[prefix]) <= 1:
        prefix += 1
    return Dictionary(len(exps), dim, evaluate, prefix, kind, tuple(coord), exps, names)


def multinomial_dictionary(d: int, max_index: int) -> Dictionary:
    """Bivariate monomials ``z1^m z2^n`` indexed by the Cantor pairing.

    Entry ``j`` (1-based) is the monomial with ``c(m, n) = j``; the constant
    ``(0, 0)`` is skipped, so the list starts ``z1, z2, z1^2, z1 z2, ...``.
    """
    if d != 2:
        raise ValueError("the Cantor-indexed multinomial dictionary is bivariate (d=2)")
    if max_index < 2:
        raise ValueError("max_index must be at least 2 so both coordinate maps are present")
    return monomial_dictionary([cantor_unpair(j) for j in range(1, max_index + 1)], "multinomial")


# --------------------------------------------------------------------------
# Koopman matrices
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class KoopmanMatrix:
    k: np.ndarray
    mode: str  # "generator" or "discrete"
    provenance: str  # "analytic" or "least_squares"
    dt: Optional[float] = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.k)):
            raise ValueError("Koopman matrix has non-finite entries")
        if self.mode == "discrete" and not (self.dt is not None and self.dt >= 0):
            raise ValueError("discrete Koopman matrices need dt >= 0")

    @property
    def n(self) -> int:
        return self.k.shape[0]

    def to_json(self) -> dict:
        return {
            "mode": self.mode,
            "provenance": self.provenance,
            "dt": self.dt,
            "k": complex_to_json(self.k),
        }


def complex_to_json(a):
    a = np.asarray(a)
    if a.ndim == 0:
        return [float(a.real), float(a.imag)]
    return [complex_to_json(x) for x in a]


def complex_from_json(obj) -> np.ndarray:
    arr = np.asarray(obj, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def _degree_complete(exps) -> bool:
    degs = [sum(e) for e in exps]
    top = max(degs)
    dim = len(exps[0])
    needed = set()
    for total in range(min(degs), top + 1):
        for e in np.ndindex(*(total + 1,) * dim):
            if sum(e) == total:
                needed.add(tuple(e))
    return needed <= set(exps)


def project_generator(sys: SystemSpec, dictionary: Dictionary, truncate: bool = False) -> KoopmanMatrix:
    """Exact matrix of ``F . grad`` on a monomial dictionary.

    Row ``j`` holds the expansion coefficients of ``F . grad psi_j``. With
    ``truncate=False`` any produced monomial outside the dictionary raises
    ``ClosureError``. ``truncate=True`` drops such terms; this is only
    allowed when the field vanishes at the origin and the dictionary holds
    every monomial up to its top degree, because then the kept block is an
    exact leading block of the infinite triangular matrix and its left
    eigenvectors are truncations of exact ones.
    """
    if sys.polynomial is None:
        raise ValueError(f"system {sys.id} has no polynomial representation")
    if dictionary.exponents is None:
        raise ValueError("generator projection needs a monomial dictionary")
    exps = dictionary.exponents
    if len(exps[0]) != sys.dim:
        raise ValueError("dictionary and system dimensions differ")
    if truncate:
        if any(sum(e) == 0 for comp in sys.polynomial for e in comp):
            raise ClosureError("truncation requires a field without constant terms")
        if not _degree_complete(exps):
            raise ClosureError("truncation requires a degree-complete monomial dictionary")
    index = {e: i for i, e in enumerate(exps)}
    K = np.zeros((len(exps), len(exps)))
    for j, e in enumerate(exps):
        for i, comp in enumerate(sys.polynomial):
            if e[i] == 0:
                continue
            for fe, c in comp.items():
                prod = tuple(
                    e[k] + fe[k] - (1 if k == i else 0) for k in range(sys.dim)
                )
                coef = e[i] * c
                if coef == 0:
                    continue
                if prod in index:
                    K[j, index[prod]] += coef
                elif not truncate:
                    raise ClosureError(
                        f"F.grad({dictionary.names[j]}) produces monomial {prod} "
                        "outside the dictionary"
                    )
    return KoopmanMatrix(K, "generator", "analytic")


def edmd_fit(pairs: SamplePairs, dictionary: Dictionary, ridge: float = 1e-8) -> KoopmanMatrix:
    """Regularised least-squares Koopman matrix from snapshot pairs.

    ``G = mean Psi(x) Psi(x)^T`` and ``A = mean Psi(x) Psi(x')^T``; the
    normal-equation solution ``(G + ridge I)^{-1} A`` is transposed into the
    row-action convention of this module.
    """
    if ridge < 0:
        raise ValueError("ridge must be nonnegative")
    M = len(pairs)
    if M == 0:
        raise ValueError("edmd_fit needs at least one sample pair")
    PX = dictionary(pairs.x)
    PY = dictionary(pairs.x_next)
    return KoopmanMatrix(_ls_koopman(PX, PY, ridge), "discrete", "least_squares", pairs.dt)


def _ls_koopman(PX, PY, ridge):
    M, N = PX.shape
    if M < N:
        warnings.warn(f"underdetermined EDMD fit: {M} samples for {N} dictionary elements")
    G = PX.T @ PX / M
    A = PX.T @ PY / M
    Gr = G + ridge * np.eye(N)
    if ridge == 0 and np.linalg.cond(Gr) > 1e14:
        raise np.linalg.LinAlgError("singular Gram matrix with ridge=0")
    return np.linalg.solve(Gr, A).T


def discrete_to_generator(mu, dt: float):
    """Principal-branch ``log(mu)/dt``."""
    return np.log(np.asarray(mu, dtype=complex)) / dt


def matrix_log(k: np.ndarray) -> np.ndarray:
    """Principal matrix logarithm through the eigendecomposition."""
    w, R = np.linalg.eig(k)
    return R @ np.diag(np.log(w.astype(complex))) @ np.linalg.inv(R)


# --------------------------------------------------------------------------
# spectra
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SpectralDecomposition:
    """Left eigen-decomposition ``V K = diag(eigenvalues) V``.

    Rows of ``left_vectors`` are canonicalised (by default unit norm with the
    first nonzero entry real positive). Repeated eigenvalues (``cluster`` ids shared) get the reduced
    row-echelon basis of their left eigenspace; ``pivots`` records the
    leading index of each row.
    """

    eigenvalues: np.ndarray
    left_vectors: np.ndarray
    distinct: bool
    min_gap: float
    clusters: np.ndarray
    pivots: np.ndarray

    @property
    def n(self) -> int:
        return self.eigenvalues.size

    def residual(self, k: np.ndarray) -> float:
        V = self.left_vectors
        return float(np.max(np.linalg.norm(V @ k - self.eigenvalues[:, None] * V, axis=1)))

    def rescaled(self, scales) -> "SpectralDecomposition":
        """Copy with row ``j`` multiplied by ``scales[j]`` (canonical form dropped)."""
        s = np.asarray(scales, dtype=complex)
        return SpectralDecomposition(
            self.eigenvalues, self.left_vectors * s[:, None], self.distinct,
            self.min_gap, self.clusters, self.pivots,
        )

    def to_json(self) -> dict:
        return {
            "eigenvalues": complex_to_json(self.eigenvalues),
            "left_vectors": complex_to_json(self.left_vectors),
            "distinct": self.distinct,
            "min_gap": self.min_gap,
        }


def _canonical_row(v: np.ndarray, normalize: str = "unit", tol: float = 1e-12) -> np.ndarray:
    """Fix the free scale of a left eigenvector.

    ``unit``: Euclidean norm 1, first nonzero entry real positive.
    ``max``: largest entry of modulus 1, last nonzero entry real positive.
    """
    nz = np.flatnonzero(np.abs(v) > tol * np.abs(v).max())
    if normalize == "unit":
        v = v / np.linalg.norm(v)
        lead = v[nz[0]]
    elif normalize == "max":
        v = v / np.abs(v).max()
        lead = v[nz[-1]]
    else:
        raise ValueError(f"unknown normalization {normalize!r}")
    return v * (abs(lead) / lead)


def _rref(M: np.ndarray, tol: float):
    M = np.array(M, dtype=complex, copy=True)
    rows, cols = M.shape
    r, pivots = 0, []
    for c in range(cols):
        if r == rows:
            break
        p = r + int(np.argmax(np.abs(M[r:, c])))
        if abs(M[p, c]) < tol:
            continue
        M[[r, p]] = M[[p, r]]
        M[r] /= M[r, c]
        for i in range(rows):
            if i != r:
                M[i] -= M[i, c] * M[r]
        pivots.append(c)
        r += 1
    return M[:r], pivots


def left_eigens(
    k: KoopmanMatrix | np.ndarray, gap_tol: float = 1e-8, normalize: str = "unit"
) -> SpectralDecomposition:
    """Full left eigen-decomposition with deterministic canonical form.

    Eigenvalues are sorted by decreasing real part, then decreasing imaginary
    part. Eigenvalues closer than ``gap_tol * ||K||`` form a cluster; a
    cluster whose left eigenspace is smaller than its size (a Jordan block)
    raises ``SpectrumError``. ``normalize`` is passed to the row
    canonicalisation (``unit`` or ``max``).
    """
    K = np.asarray(k.k if isinstance(k, KoopmanMatrix) else k)
    if not np.all(np.isfinite(K)):
        raise SpectrumError("matrix has non-finite entries")
    N = K.shape[0]
    scale = max(np.linalg.norm(K, 2), 1e-300)
    try:
        w = np.linalg.eigvals(K)
    except np.linalg.LinAlgError as exc:
        raise SpectrumError(f"eigensolver failed: {exc}") from exc
    w = w[np.lexsort((-w.imag, -w.real))]
    thresh = gap_tol * scale
    gaps = np.abs(w[:, None] - w[None, :]) + np.diag(np.full(N, np.inf))
    min_gap = float(gaps.min()) if N > 1 else math.inf

    cluster_of = -np.ones(N, dtype=int)
    cid = 0
    for i in range(N):
        if cluster_of[i] >= 0:
            continue
        members = [i]
        cluster_of[i] = cid
        # transitive closure so chains of near-equal values end up together
        stack = [i]
        while stack:
            a = stack.pop()
            for b in np.flatnonzero((np.abs(w - w[a]) < thresh) & (cluster_of < 0)):
                cluster_of[b] = cid
                members.append(b)
                stack.append(b)
        cid += 1

    eig_out = np.empty(N, dtype=complex)
    V = np.empty((N, N), dtype=complex)
    pivots = np.empty(N, dtype=int)
    clusters = np.empty(N, dtype=int)
    row = 0
    for c in range(cid):
        members = np.flatnonzero(cluster_of == c)
        m = members.size
        lam = w[members].mean()
        # left null space of K - lam I, via the right null space of its transpose
        _, s, Vh = np.linalg.svd((K - lam * np.eye(N)).T)
        if m > 1 and s[N - m] > 1e-6 * scale:
            raise SpectrumError(
                f"eigenvalue {lam:.6g} has algebraic multiplicity {m} but a smaller "
                "left eigenspace (non-diagonalizable)"
            )
        basis = Vh[N - m :].conj()
        if m == 1:
            vecs = [_canonical_row(basis[0], normalize)]
            piv = [int(np.flatnonzero(np.abs(vecs[0]) > 1e-12 * np.abs(vecs[0]).max())[0])]
        else:
            R, piv = _rref(basis, 1e-9)
            if len(piv) < m:
                raise SpectrumError(f"degenerate left eigenspace for eigenvalue {lam:.6g}")
            vecs = [_canonical_row(r, normalize) for r in R]
        for v, p in zip(vecs, piv):
            eig_out[row] = lam if m > 1 else w[members[0]]
            V[row] = v
            pivots[row] = p
            clusters[row] = c
            row += 1

    return SpectralDecomposition(eig_out, V, bool(min_gap >= thresh), min_gap, clusters, pivots)


def pair_spectra(s1: SpectralDecomposition, s2: SpectralDecomposition, tol: float) -> np.ndarray:
    """Permutation ``perm`` so that row ``perm[j]`` of ``s2`` pairs with row ``j`` of ``s1``.

    Greedy nearest-eigenvalue matching seeds an optimal assignment on the
    ``|lambda_i - lambda_j|`` cost; rows inside a repeated-eigenvalue cluster
    are then paired by echelon pivot.
    """
    if s1.n != s2.n:
        raise SpectrumError("spectra of different sizes cannot be paired")
    cost = np.abs(s1.eigenvalues[:, None] - s2.eigenvalues[None, :])
    greedy = _greedy_assignment(cost)
    rows, cols = linear_sum_assignment(cost)
    perm = np.empty(s1.n, dtype=int)
    perm[rows] = cols
    if cost[np.arange(s1.n), greedy].sum() <= cost[np.arange(s1.n), perm].sum():
        perm = greedy
    worst = cost[np.arange(s1.n), perm].max() if s1.n else 0.0
    if worst > tol:
        j = int(np.argmax(cost[np.arange(s1.n), perm]))
        raise SpectrumError(
            f"eigenvalue {s1.eigenvalues[j]:.6g} has no partner within {tol:g} "
            f"(closest {s2.eigenvalues[perm[j]]:.6g})"
        )
    for c in np.unique(s1.clusters):
        mine = np.flatnonzero(s1.clusters == c)
        if mine.size < 2:
            continue
        theirs = perm[mine]
        perm[mine[np.argsort(s1.pivots[mine], kind="stable")]] = theirs[
            np.argsort(s2.pivots[theirs], kind="stable")
        ]
    return perm


def _greedy_assignment(cost: np.ndarray) -> np.ndarray:
    n = cost.shape[0]
    perm = -np.ones(n, dtype=int)
    taken = np.zeros(n, dtype=bool)
    for flat in np.argsort(cost, axis=None, kind="stable"):
        i, j = divmod(int(flat), n)
        if perm[i] < 0 and not taken[j]:
            perm[i] = j
            taken[j] = True
    return perm
