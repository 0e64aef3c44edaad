"""Matching maps ``h = G2^{-1} o G1`` built from eigenfunction stacks.

A ``TransformMap`` is vectorised and total: points outside its domain map
to NaN rows, and ``domain`` reports membership per point. Calling the map
directly (``h(x)``) additionally raises ``DomainError`` for rejected points.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dynsys import DEFAULT_TOL, Domain, DomainError, SystemSpec, flow_times
from .keig import EigenStack, Eigenfunction, InitialSurface, fd_jacobian, grid

__all__ = [
    "EigenStack", "Eigenfunction", "InitialSurface", "MatchError", "TransformMap",
    "DefectReport", "build_match", "newton_invert", "identity_map", "conjugacy_defect",
    "defect_report", "pushforward_field", "compose",
]

log = logging.getLogger(__name__)

IMAG_TOL = 1e-9
HONESTY_TOL = 1e-9


class MatchError(ValueError):
    """The stacks cannot be matched (eigenvalues differ, dimensions differ)."""


@dataclass(frozen=True)
class TransformMap:
    """An evaluable map ``h`` with optional inverse and a per-point domain."""

    forward: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    inverse: Optional[Callable[[np.ndarray], np.ndarray]] = field(repr=False)
    domain: Domain = field(repr=False)
    label: str = ""

    @property
    def dim(self) -> int:
        return self.domain.dim

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = self.evaluate(x)
        bad = ~np.all(np.isfinite(y), axis=-1)
        if np.any(bad):
            raise DomainError(f"{np.count_nonzero(bad)} point(s) outside the domain of {self.label or 'h'}")
        return y

    def evaluate(self, x) -> np.ndarray:
        """Forward map with NaN rows outside the domain."""
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            inside = self.domain(x)
            y = np.asarray(self.forward(x), dtype=float)
        return np.where(inside[..., None], y, np.nan)

    def invert(self, y) -> np.ndarray:
        if self.inverse is None:
            raise ValueError(f"{self.label or 'map'} has no inverse")
        with np.errstate(all="ignore"):
            return np.asarray(self.inverse(np.asarray(y, dtype=float)), dtype=float)

    def jacobian(self, x) -> np.ndarray:
        return fd_jacobian(self.evaluate, np.asarray(x, dtype=float))

    def jacobian_condition(self, points) -> np.ndarray:
        J = self.jacobian(np.atleast_2d(points))
        with np.errstate(all="ignore"):
            return np.array([np.linalg.cond(j) if np.all(np.isfinite(j)) else np.inf for j in J])

    def roundtrip_error(self, points) -> float:
        X = np.atleast_2d(np.asarray(points, dtype=float))
        return float(np.nanmax(np.linalg.norm(self.invert(self.evaluate(X)) - X, axis=-1)))


def identity_map(dim: int) -> TransformMap:
    dom = Domain("whole", dim, lambda x: np.all(np.isfinite(x), axis=-1))
    return TransformMap(lambda x: np.array(x, dtype=float), lambda y: np.array(y, dtype=float), dom, "identity")


# --------------------------------------------------------------------------
# stack inversion
# --------------------------------------------------------------------------


def newton_invert(
    stack: EigenStack,
    z,
    guess=None,
    box=None,
    n_grid: int = 21,
    tol: float = 1e-12,
    max_iter: int = 50,
) -> np.ndarray:
    """Solve ``G(y) = z`` for real ``y`` by batched Newton with an FD Jacobian.

    Initial guesses come from ``guess`` (array, or a callable of ``z``) or
    else from the best residual on an ``n_grid**d`` grid over ``box``
    (default: the stack's probe box). Newton iterates stay near their start,
    which is the branch-selection rule. Non-converged rows are NaN.
    """
    Z = np.atleast_2d(np.asarray(z, dtype=complex)).real
    d = stack.dim

    def G(Y):
        return stack.raw(Y).real

    if guess is not None:
        Y = np.array(guess(Z) if callable(guess) else np.broadcast_to(guess, Z.shape), dtype=float)
    else:
        if box is None:
            if stack.probe is None:
                raise ValueError("Newton inversion needs a guess or a search box")
            box = stack.probe
        cand = grid(box[0], box[1], n_grid)
        gc = G(cand)
        ok = np.all(np.isfinite(gc), axis=1)
        cand, gc = cand[ok], gc[ok]
        dist = np.linalg.norm(gc[None, :, :] - Z[:, None, :], axis=-1)
        Y = cand[np.argmin(dist, axis=1)].copy()

    scale = np.maximum(1.0, np.linalg.norm(Z, axis=1))
    done = np.zeros(len(Z), dtype=bool)
    with np.errstate(all="ignore"):
        R = G(Y) - Z
        for _ in range(max_iter):
            rn = np.linalg.norm(R, axis=1)
            done = rn <= tol * scale
            active = ~done & np.isfinite(rn)
            if not np.any(active):
                break
            J = fd_jacobian(G, Y[active])
            try:
                step = np.linalg.solve(J, R[active][..., None])[..., 0]
            except np.linalg.LinAlgError:
                step = np.stack([np.linalg.lstsq(j, r, rcond=None)[0] for j, r in zip(J, R[active])])
            # damped update: halve until the residual decreases
            Ya, ra = Y[active], rn[active]
            t = np.ones(len(Ya))
            for _ in range(30):
                trial = Ya - t[:, None] * step
                Rt = G(trial) - Z[active]
                better = np.linalg.norm(Rt, axis=1) < ra
                if np.all(better | (t < 1e-8)):
                    break
                t = np.where(better, t, t / 2)
            Y[active] = trial
            R[active] = Rt
        rn = np.linalg.norm(R, axis=1)
        done = rn <= tol * scale
    Y[~done] = np.nan
    return Y


# --------------------------------------------------------------------------
# matching
# --------------------------------------------------------------------------


def build_match(
    g1: EigenStack,
    g2: EigenStack,
    guess=None,
    box=None,
    n_grid: int = 21,
    lam_tol: float = 1e-9,
) -> TransformMap:
    """``h = G2^{-1} o G1`` for componentwise matched stacks.

    The domain is the set of ``x`` in the domain of ``G1`` whose value has
    negligible imaginary part, lies in the range of ``G2`` (the inversion
    converges) and satisfies ``|G2(h(x)) - G1(x)| <= 1e-9 max(1, |G1(x)|)``.
    """
    if g1.dim != g2.dim:
        raise MatchError("stacks have different dimensions")
    diff = np.abs(g1.eigenvalues - g2.eigenvalues)
    if np.any(diff > lam_tol):
        raise MatchError(
            f"eigenvalues are not matched componentwise: {g1.eigenvalues} vs {g2.eigenvalues}"
        )

    def forward_raw(X):
        X = np.asarray(X, dtype=float)
        shape = X.shape
        flat = X.reshape(-1, g1.dim)
        with np.errstate(all="ignore"):
            Z = g1.raw(flat)
            real = np.all(np.abs(Z.imag) <= IMAG_TOL * np.maximum(1.0, np.abs(Z.real)), axis=1)
            Z = np.where(real[:, None], Z.real, np.nan)
            if g2.closed_inverse is not None:
                Y = np.asarray(g2.closed_inverse(Z.astype(complex)), dtype=float).reshape(flat.shape)
            else:
                Y = np.full(flat.shape, np.nan)
                ok = np.all(np.isfinite(Z), axis=1)
                if np.any(ok):
                    gs = guess[ok] if isinstance(guess, np.ndarray) and guess.ndim == 2 else guess
                    Y[ok] = newton_invert(g2, Z[ok], gs, box, n_grid)
            back = g2.raw(Y).real
        err = np.linalg.norm(back - Z, axis=1)
        honest = err <= HONESTY_TOL * np.maximum(1.0, np.linalg.norm(Z, axis=1))
        Y[~honest] = np.nan
        return Y.reshape(shape)

    inverse = None
    if g1.closed_inverse is not None:
        def inverse(Y):
            Y = np.asarray(Y, dtype=float)
            with np.errstate(all="ignore"):
                return np.asarray(g1.closed_inverse(g2.raw(Y)), dtype=float)

    def contains(X):
        X = np.asarray(X, dtype=float)
        with np.errstate(all="ignore"):
            return g1.domain(X) & np.all(np.isfinite(forward_raw(X)), axis=-1)

    dom = Domain("match", g1.dim, contains, {"g1": g1.label, "g2": g2.label})
    return TransformMap(forward_raw, inverse, dom, f"G2^-1 o G1 [{g1.label} -> {g2.label}]")


# --------------------------------------------------------------------------
# verification
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DefectReport:
    defect: float
    retained: int
    skipped: int
    per_sample: np.ndarray = field(repr=False)


def defect_report(
    h: TransformMap,
    sys1: SystemSpec,
    sys2: SystemSpec,
    samples,
    horizon: float = 1.0,
    steps: int = 10,
    tol: float = DEFAULT_TOL,
) -> DefectReport:
    """Sup-norm discrepancy ``|h(S1_t x) - S2_t(h(x))|`` at ``t_j = j horizon/steps``.

    Samples whose trajectories leave either domain (or blow up) are skipped
    and counted.
    """
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    if steps < 1:
        raise ValueError("steps must be positive")
    times = np.linspace(0.0, horizon, steps + 1)
    hx = h.evaluate(X)
    keep = np.all(np.isfinite(hx), axis=1)
    err = np.full(len(X), np.nan)
    if np.any(keep):
        A = flow_times(sys1, X[keep], times, tol)
        B = flow_times(sys2, hx[keep], times, tol)
        hA = h.evaluate(A)
        with np.errstate(invalid="ignore"):
            ok = (
                np.all(np.isfinite(hA), axis=(0, 2))
                & np.all(np.isfinite(B), axis=(0, 2))
                & np.all(sys1.domain(A), axis=0)
                & np.all(sys2.domain(B), axis=0)
            )
        e = np.max(np.linalg.norm(hA - B, axis=2), axis=0)
        sub = np.where(ok, e, np.nan)
        err[np.flatnonzero(keep)] = sub
    retained = int(np.count_nonzero(np.isfinite(err)))
    if retained == 0:
        raise DomainError("every sample left the domain of h within the horizon")
    return DefectReport(float(np.nanmax(err)), retained, len(X) - retained, err)


def conjugacy_defect(h, sys1, sys2, samples, horizon: float = 1.0, steps: int = 10) -> float:
    return defect_report(h, sys1, sys2, samples, horizon, steps).defect


def pushforward_field(h: TransformMap, sys1: SystemSpec, y) -> np.ndarray:
    """``Dh(x) F1(x)`` at ``x = h^{-1}(y)``: the field ``h`` induces on its range."""
    y = np.asarray(y, dtype=float)
    x = h.invert(y)
    if not np.all(np.isfinite(x)):
        raise DomainError("point(s) not invertible into the domain of h")
    J = fd_jacobian(h.evaluate, x)
    if not np.all(np.isfinite(J)):
        raise DomainError("FD stencil leaves the domain of h")
    return np.einsum("...ij,...j->...i", J, sys1.field(x))


def compose(h_outer: TransformMap, h_inner: TransformMap, samples=None) -> TransformMap:
    """``h_outer o h_inner``; the domain is the preimage intersection, per point."""
    if h_outer.dim != h_inner.dim:
        raise ValueError("maps have different dimensions")

    def fwd(X):
        return h_outer.evaluate(h_inner.evaluate(X))

    inverse = None
    if h_outer.inverse is not None and h_inner.inverse is not None:
        def inverse(Y):
            return h_inner.invert(h_outer.invert(Y))

    def contains(X):
        return np.all(np.isfinite(fwd(np.asarray(X, dtype=float))), axis=-1)

    dom = Domain("composite", h_inner.dim, contains)
    out = TransformMap(fwd, inverse, dom, f"({h_outer.label}) o ({h_inner.label})")
    if samples is not None and not np.any(dom(np.atleast_2d(samples))):
        raise DomainError("range of the inner map misses the domain of the outer map on all samples")
    return out
