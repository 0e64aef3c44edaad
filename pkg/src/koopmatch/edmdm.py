"""Matching through finite Koopman projections.

Given projections ``K1, K2`` of two systems onto a shared dictionary
``Psi``, paired left eigenvectors ``V1, V2`` and a matching pair
``z2 = h(z1)``, the map is ``h(z) = B V2^{-1} D V1 Psi(z)``. ``B`` selects
the coordinate maps from ``Psi`` and ``D`` fixes the free scale of every
eigenfunction from the matching pair.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .dynsys import Domain
from .edmd import (
    Dictionary,
    KoopmanMatrix,
    SpectralDecomposition,
    SpectrumError,
    complex_to_json,
    left_eigens,
    pair_spectra,
)
from .keig import grid
from .matching import TransformMap

log = logging.getLogger(__name__)

A5_THRESHOLD = 1e-10


class MatchingPointError(ValueError):
    """Some eigenfunction vanishes at the matching point, so its scale is not fixed."""

    def __init__(self, modes, values):
        self.modes = list(modes)
        self.values = list(values)
        super().__init__(
            f"eigenfunction(s) {self.modes} vanish at the matching point "
            f"(|v^T Psi(z1)| = {[f'{abs(v):.3g}' for v in self.values]}); choose another point"
        )


class ReconstructionError(RuntimeError):
    """Ill-conditioned eigenvector matrix or non-real reconstruction."""


@dataclass(frozen=True)
class MatchingPoint:
    z1: np.ndarray
    z2: np.ndarray

    def __post_init__(self):
        z1 = np.atleast_1d(np.asarray(self.z1, dtype=float))
        z2 = np.atleast_1d(np.asarray(self.z2, dtype=float))
        if z1.shape != z2.shape or z1.ndim != 1:
            raise ValueError("matching point components must be vectors of equal dimension")
        if not (np.all(np.isfinite(z1)) and np.all(np.isfinite(z2))):
            raise ValueError("matching point must be finite")
        object.__setattr__(self, "z1", z1)
        object.__setattr__(self, "z2", z2)


@dataclass(frozen=True)
class MatchResult:
    d_diag: np.ndarray
    h_matrix: np.ndarray
    h_map: TransformMap = field(repr=False)
    eigenvalues1: np.ndarray = field(repr=False)
    eigenvalues2: np.ndarray = field(repr=False)
    perm: np.ndarray = field(repr=False)
    denominators: np.ndarray = field(repr=False)
    similarity_residual: float = 0.0
    imag_residue: float = 0.0
    distinct: bool = True

    def to_json(self) -> dict:
        return {
            "d_diag": complex_to_json(self.d_diag),
            "h_matrix": complex_to_json(self.h_matrix),
            "eigenvalues1": complex_to_json(self.eigenvalues1),
            "eigenvalues2": complex_to_json(self.eigenvalues2),
            "perm": [int(p) for p in self.perm],
            "denominators": complex_to_json(self.denominators),
            "similarity_residual": self.similarity_residual,
            "imag_residue": self.imag_residue,
            "distinct": self.distinct,
        }


def compute_d(
    v1: SpectralDecomposition,
    v2: SpectralDecomposition,
    dictionary: Dictionary,
    mp: MatchingPoint,
    perm=None,
    threshold: float = A5_THRESHOLD,
) -> np.ndarray:
    """``D_jj = (v2_j . Psi(z2)) / (v1_j . Psi(z1))`` with rows aligned by ``perm``."""
    perm = np.arange(v1.n) if perm is None else np.asarray(perm)
    num = v2.left_vectors[perm] @ dictionary(mp.z2)
    den = v1.left_vectors @ dictionary(mp.z1)
    bad = np.flatnonzero(np.abs(den) < threshold)
    if bad.size:
        raise MatchingPointError(bad, den[bad])
    return num / den


def reconstruct_h(
    b: np.ndarray,
    v1: SpectralDecomposition,
    v2: SpectralDecomposition,
    d_diag,
    dictionary: Dictionary,
    perm=None,
    probe_box=(-1.0, 1.0),
    imag_tol: Optional[float] = 1e-6,
):
    """Assemble ``H = B V2^{-1} D V1`` and the map ``z -> Re(H Psi(z))``.

    Returns ``(h_map, H, imag_residue)``; the residue is the largest
    imaginary part of ``H Psi`` on a probe grid over ``probe_box``.
    """
    perm = np.arange(v1.n) if perm is None else np.asarray(perm)
    V1 = v1.left_vectors
    V2 = v2.left_vectors[perm]
    cond = np.linalg.cond(V2)
    if not cond < 1e10:
        raise ReconstructionError(f"paired eigenvector matrix of system 2 is ill-conditioned (cond={cond:.3g})")
    H = np.asarray(b) @ np.linalg.solve(V2, np.asarray(d_diag)[:, None] * V1)
    probe = grid([probe_box[0]] * dictionary.dim, [probe_box[1]] * dictionary.dim, 21)
    imag = float(np.max(np.abs((dictionary(probe) @ H.T).imag)))
    if imag_tol is not None and imag > imag_tol:
        raise ReconstructionError(f"reconstructed map has imaginary residue {imag:.3g} > {imag_tol:g}")

    def forward(Z):
        return (dictionary(np.asarray(Z, dtype=float)) @ H.T).real

    dom = Domain("whole", dictionary.dim, lambda x: np.all(np.isfinite(x), axis=-1))
    return TransformMap(forward, None, dom, "B V2^-1 D V1 Psi"), H, imag


def edmdm_pipeline(
    k1: KoopmanMatrix,
    k2: KoopmanMatrix,
    dictionary: Dictionary,
    mp: MatchingPoint,
    pair_tol: float = 1e-8,
    allow_degenerate: bool = False,
    imag_tol: Optional[float] = 1e-6,
    probe_box=(-1.0, 1.0),
    normalize: str = "unit",
) -> MatchResult:
    """Left eigenvectors, spectrum pairing, ``D`` from the matching point, then ``h``.

    A repeated eigenvalue makes the pairing ambiguous, so it is refused
    unless ``allow_degenerate`` is set; repeated eigenvalues are then paired
    through the echelon basis of their eigenspaces. ``normalize`` fixes the
    eigenvector scale and therefore ``D``; ``h`` does not depend on it.
    """
    if k1.n != dictionary.n or k2.n != dictionary.n:
        raise ValueError("both Koopman matrices must act on the given dictionary")
    if k1.mode != k2.mode or (k1.mode == "discrete" and k1.dt != k2.dt):
        raise ValueError("Koopman matrices must share mode and time step")
    if mp.z1.size != dictionary.dim:
        raise ValueError("matching point dimension differs from the dictionary input dimension")
    s1, s2 = left_eigens(k1, normalize=normalize), left_eigens(k2, normalize=normalize)
    distinct = s1.distinct and s2.distinct
    if not distinct and not allow_degenerate:
        raise SpectrumError(
            f"non-distinct spectrum (min gaps {s1.min_gap:.3g}, {s2.min_gap:.3g}); "
            "pass allow_degenerate=True to pair repeated eigenvalues by eigenspace echelon form"
        )
    perm = pair_spectra(s1, s2, pair_tol)
    d = compute_d(s1, s2, dictionary, mp, perm)
    h_map, H, imag = reconstruct_h(
        dictionary.selection_matrix(), s1, s2, d, dictionary, perm, probe_box, imag_tol
    )
    sim = float(np.max(np.abs(s1.eigenvalues - s2.eigenvalues[perm]))) if s1.n else 0.0
    den = s1.left_vectors @ dictionary(mp.z1)
    return MatchResult(d, H, h_map, s1.eigenvalues, s2.eigenvalues[perm], perm, den, sim, imag, distinct)
