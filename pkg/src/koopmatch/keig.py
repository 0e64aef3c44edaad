"""Koopman eigenfunctions: closed forms, 1D quadrature and characteristics.

A Koopman eigenfunction ``g`` with eigenvalue ``lam`` solves the linear PDE
``grad g . F = lam g``. In one dimension it is an integrating factor,
``g(x) = exp(lam * int dx / F)``. In higher dimensions the PDE is solved by
carrying data ``g0`` from a transverse surface along trajectories:
``g(S_s(sigma)) = g0(sigma) exp(lam s)``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .dynsys import (
    DEFAULT_TOL,
    Domain,
    DomainError,
    SystemSpec,
    flow,
    get_system,
    integrate,
    lower_bounded,
    nonzero_point,
    open_orthant,
    punctured,
    quad2d_conjugacy,
    quad2d_conjugacy_inverse,
    whole_space,
)

PROVENANCES = ("closed_form", "quadrature_1d", "characteristics", "edmd_reconstructed")


class SingularPathError(ValueError):
    """The vector field vanishes on the quadrature path."""


class CharacteristicError(RuntimeError):
    """A characteristic never reaches the initial surface, or meets it tangentially."""


@dataclass(frozen=True)
class Eigenfunction:
    """A Koopman eigenpair ``(lam, g)``.

    ``eval`` is vectorised, mapping points ``(..., d)`` to values ``(...)``.
    """

    lam: complex
    eval: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    domain: Domain = field(repr=False)
    provenance: str = "closed_form"
    label: str = ""

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self.domain.check(x)
        with np.errstate(all="ignore"):
            return np.asarray(self.eval(x))

    def scaled(self, c: complex) -> "Eigenfunction":
        """``c * g``, the same member of the equivalence class."""
        f = self.eval
        return Eigenfunction(self.lam, lambda x: c * f(x), self.domain, self.provenance, self.label)


@dataclass(frozen=True)
class InitialSurface:
    """Codimension-one surface ``{implicit = 0}`` carrying eigenfunction data.

    Both callables are vectorised over leading axes.
    """

    dim: int
    implicit: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    data: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    transversality_check: bool = True


@dataclass(frozen=True)
class EigenStack:
    """``G = [g_1, ..., g_d]^T`` together with an optional closed inverse.

    ``probe`` is a ``(lo, hi)`` box of interior points on which the stack is
    well defined; tests and the CLI draw samples from it.
    """

    entries: tuple
    closed_inverse: Optional[Callable[[np.ndarray], np.ndarray]] = field(default=None, repr=False)
    domain: Optional[Domain] = field(default=None, repr=False)
    label: str = ""
    probe: Optional[tuple] = None

    def __post_init__(self):
        if not self.entries:
            raise ValueError("empty eigenfunction stack")
        lam = self.eigenvalues
        if np.any(np.abs(lam) == 0):
            raise ValueError("stack eigenvalues must be nonzero")
        if lam.size > 1 and np.unique(lam).size < lam.size:
            raise ValueError("stack eigenvalues must be pairwise distinct")
        if self.domain is None:
            object.__setattr__(self, "domain", self.entries[0].domain)

    @property
    def dim(self) -> int:
        return len(self.entries)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([g.lam for g in self.entries], dtype=complex)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        self.domain.check(x)
        with np.errstate(all="ignore"):
            return np.stack([np.asarray(g.eval(x), dtype=complex) for g in self.entries], axis=-1)

    def raw(self, x) -> np.ndarray:
        """Evaluate without the domain check (NaN outside)."""
        x = np.asarray(x, dtype=float)
        with np.errstate(all="ignore"):
            out = np.stack([np.asarray(g.eval(x), dtype=complex) for g in self.entries], axis=-1)
        return np.where(self.domain(x)[..., None], out, np.nan)

    def jacobian(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return fd_jacobian(self.raw, x)

    def jacobian_condition(self, points) -> np.ndarray:
        J = self.jacobian(np.atleast_2d(points))
        return np.array([np.linalg.cond(j) for j in J])

    def probe_points(self, n_side: int = 10) -> np.ndarray:
        if self.probe is None:
            raise ValueError("stack has no declared probe box")
        return grid(self.probe[0], self.probe[1], n_side)


def grid(lo, hi, n_side: int) -> np.ndarray:
    """Tensor grid of ``n_side**d`` points in the box ``[lo, hi]``."""
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    axes = [np.linspace(a, b, n_side) for a, b in zip(lo, hi)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, lo.size)


def fd_step(x: np.ndarray) -> np.ndarray:
    return 1e-6 * np.maximum(1.0, np.linalg.norm(x, axis=-1))


def fd_jacobian(f, x: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian of a vectorised map; shape ``(..., m, d)``."""
    x = np.asarray(x, dtype=float)
    h = fd_step(x)[..., None]
    cols = []
    for i in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[i] = 1.0
        cols.append((np.asarray(f(x + h * e)) - np.asarray(f(x - h * e))) / (2 * h))
    return np.stack(cols, axis=-1)


# --------------------------------------------------------------------------
# residual
# --------------------------------------------------------------------------


def keig_residual(sys: SystemSpec, g: Eigenfunction, points) -> float:
    """Max of ``|grad g . F - lam g|`` over ``points`` (central differences).

    Every stencil point must lie in both domains.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    if X.shape[-1] != sys.dim:
        raise ValueError("points have the wrong dimension")
    h = fd_step(X)[:, None]
    grads = []
    for i in range(sys.dim):
        e = np.zeros(sys.dim)
        e[i] = 1.0
        up, dn = X + h * e, X - h * e
        for P in (up, dn):
            inside = sys.domain(P) & g.domain(P)
            if not np.all(inside):
                bad = X[~inside][0]
                raise DomainError(f"point {bad.tolist()} too close to the domain boundary for FD")
        grads.append((g(up) - g(dn)) / (2 * h[:, 0]))
    grad = np.stack(grads, axis=-1)
    F = sys.field(X)
    res = np.abs(np.sum(grad * F, axis=-1) - g.lam * g(X))
    return float(np.max(res)) if res.size else 0.0


# --------------------------------------------------------------------------
# one dimension: integrating factor
# --------------------------------------------------------------------------


def _check_path(F, a: float, b: float, n: int = 401) -> None:
    s = np.linspace(a, b, n)
    f = np.asarray(F(s[:, None]))[:, 0]
    if np.any(np.abs(f) < 1e-12) or np.any(np.sign(f[1:]) != np.sign(f[:-1])):
        raise SingularPathError(f"F vanishes between {a} and {b}")


def keig_1d_quadrature(sys: SystemSpec, lam: complex, x_ref: float, x: float, g0: complex = 1.0) -> complex:
    """``g(x) = g0 * exp(lam * int_{x_ref}^{x} ds / F(s))`` for a scalar field."""
    if sys.dim != 1:
        raise ValueError("quadrature eigenfunctions need a one-dimensional system")
    x_ref, x = float(x_ref), float(x)
    sys.domain.check(np.array([x_ref]))
    sys.domain.check(np.array([x]))
    if x == x_ref:
        return complex(g0)
    _check_path(sys.field, x_ref, x)
    integral, _ = quad(
        lambda s: 1.0 / float(sys.field(np.array([s]))[0]),
        x_ref, x, epsabs=1e-13, epsrel=1e-13, limit=200,
    )
    return complex(g0) * np.exp(complex(lam) * integral)


def quadrature_eigenfunction(sys: SystemSpec, lam: complex, x_ref: float) -> Eigenfunction:
    """Eigenfunction normalised by ``g(x_ref) = 1``, evaluated by quadrature."""

    def ev(X):
        X = np.asarray(X, dtype=float)
        flat = X.reshape(-1)
        out = np.array([keig_1d_quadrature(sys, lam, x_ref, v) for v in flat])
        return out.reshape(X.shape[:-1])

    # the eigenfunction lives on the connected piece containing x_ref
    side = sys.domain
    if sys.domain.kind == "punctured":
        side = open_orthant([1 if x_ref > 0 else -1])
    return Eigenfunction(complex(lam), ev, side, "quadrature_1d", f"quad({sys.id})")


# --------------------------------------------------------------------------
# characteristics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CharacteristicSolution:
    value: complex
    sigma: np.ndarray
    s: float


def _implicit_scalar(surface: InitialSurface, x: np.ndarray) -> float:
    return float(np.asarray(surface.implicit(x[None]))[0])


def trace_characteristic(
    sys: SystemSpec,
    lam: complex,
    surface: InitialSurface,
    x,
    t_max: float = 50.0,
    tol: float = DEFAULT_TOL,
    chunk: float = 1.0,
) -> CharacteristicSolution:
    """Follow the trajectory through ``x`` in both time directions to the surface.

    The nearest crossing in time is refined with Brent's method to
    ``|implicit| <= 1e-10``. With ``x = S_s(sigma)`` the result is
    ``g0(sigma) * exp(lam * s)``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (surface.dim,) or surface.dim != sys.dim:
        raise ValueError("point, surface and system dimensions must agree")
    phi0 = _implicit_scalar(surface, x)
    if abs(phi0) <= 1e-10:
        sigma, tau = x.copy(), 0.0
    else:
        best = None
        for direction in (1.0, -1.0):
            hit = _first_crossing(sys, surface, x, direction, t_max, tol, chunk, best)
            if hit is not None and (best is None or abs(hit[1]) < abs(best[1])):
                best = hit
        if best is None:
            raise CharacteristicError(f"no crossing of the initial surface within |s| <= {t_max} from {x.tolist()}")
        sigma, tau = best
    if surface.transversality_check:
        _check_transverse(sys, surface, sigma)
    val = complex(np.asarray(surface.data(sigma[None]))[0]) * np.exp(-complex(lam) * tau)
    return CharacteristicSolution(val, sigma, -tau)


def _first_crossing(sys, surface, x, direction, t_max, tol, chunk, best):
    t0, state = 0.0, x
    phi_prev = _implicit_scalar(surface, x)
    limit = t_max if best is None else min(t_max, abs(best[1]))
    while t0 < limit:
        span = min(chunk, limit - t0)
        traj = integrate(sys, state, direction * span, tol)
        phis = np.asarray(surface.implicit(traj.states))
        for k in range(1, len(traj.times)):
            if not np.isfinite(phis[k]):
                return None
            if phis[k] == 0 or np.sign(phis[k]) != np.sign(phi_prev if k == 1 else phis[k - 1]):
                base = traj.states[k - 1]
                ta, tb = traj.times[k - 1], traj.times[k]

                def phi_at(t):
                    if t == ta:
                        return float(phis[k - 1])
                    return _implicit_scalar(surface, flow(sys, base[None], t - ta, tol)[0])

                tc = brentq(phi_at, ta, tb, xtol=1e-14, rtol=4 * np.finfo(float).eps, maxiter=200)
                sigma = flow(sys, base[None], tc - ta, tol)[0]
                if abs(_implicit_scalar(surface, sigma)) > 1e-10:
                    # fall back to bisection accuracy check on the implicit value
                    raise CharacteristicError("could not locate the surface crossing to 1e-10")
                return sigma, t0 * direction + tc
        if traj.terminated_early:
            return None
        phi_prev = phis[-1]
        state = traj.final
        t0 += span
    return None


def _check_transverse(sys, surface, sigma):
    grad = fd_jacobian(lambda p: np.asarray(surface.implicit(p))[..., None], sigma[None])[0, 0]
    F = sys.field(sigma[None])[0]
    denom = np.linalg.norm(grad) * np.linalg.norm(F)
    if denom == 0 or abs(grad @ F) < 1e-8 * denom:
        raise CharacteristicError(f"flow is tangent to the initial surface at {sigma.tolist()}")


def keig_characteristics(
    sys: SystemSpec, lam: complex, surface: InitialSurface, x, t_max: float = 50.0
) -> complex:
    return trace_characteristic(sys, lam, surface, x, t_max).value


def characteristics_eigenfunction(
    sys: SystemSpec, lam: complex, surface: InitialSurface, domain: Optional[Domain] = None, t_max: float = 50.0
) -> Eigenfunction:
    def ev(X):
        X = np.asarray(X, dtype=float)
        flat = X.reshape(-1, sys.dim)
        out = np.array([keig_characteristics(sys, lam, surface, p, t_max) for p in flat])
        return out.reshape(X.shape[:-1])

    return Eigenfunction(complex(lam), ev, domain or sys.domain, "characteristics", f"char({sys.id})")


# --------------------------------------------------------------------------
# closed-form catalog
# --------------------------------------------------------------------------


def _ef(lam, fn, domain, label):
    return Eigenfunction(complex(lam), fn, domain, "closed_form", label)


def _q_pair(q: str):
    """Initial-data function ``q`` on the rectifier's transverse line and its inverse."""
    if q == "id":
        return (lambda u: u), (lambda w: w), -math.inf
    if q == "q2":
        lo = math.log(10.0)
        return (lambda u: -np.log(np.exp(u) - 10.0)), (lambda w: np.log(10.0 + np.exp(-w))), lo
    raise ValueError(f"unknown q choice {q!r}; use 'id' or 'q2'")


def appb2_rho(x, a, b):
    return x[..., 0] ** 2 + np.abs(x[..., 1]) ** (2 * a / b)


def catalog_eigenstack(
    system_id: str,
    params: Optional[dict] = None,
    lambdas: Optional[Sequence[complex]] = None,
    q: str = "id",
    variant: str = "complete",
) -> EigenStack:
    """Closed-form eigenfunction stacks for the catalog systems.

    ``lambdas`` defaults to the system rates for linear fields, to
    ``(1, -0.5)`` for the rectified plane (matching ``lindiag``) and to
    ``(1, 2)`` for the appendix fields. ``q`` picks the initial data of the
    rectified plane. ``variant`` selects the initial data for ``appB2``:
    ``complete`` (``g0 = 1`` then ``g0 = x``), ``g0_one`` or ``g0_x``.
    """
    sys = get_system(system_id, params)
    p = sys.params

    if system_id == "quad1d":
        (lam,) = lambdas if lambdas is not None else (1.0,)
        dom = punctured(1)
        g = _ef(lam, lambda x: np.exp(-lam / x[..., 0]), dom, "exp(-lam/x)")

        def inv(z):
            w = z[..., 0].real
            return (-lam / np.log(np.where(w > 0, w, np.nan)))[..., None]

        return EigenStack((g,), inv, dom, "quad1d", ((0.3,), (3.0,)))

    if system_id == "lin1d":
        a = p["a"]
        (lam,) = lambdas if lambdas is not None else (a,)
        dom = open_orthant([1])
        g = _ef(lam, lambda x: x[..., 0] ** (lam / a), dom, "x^(lam/a)")

        def inv(z):
            w = z[..., 0].real
            return (np.where(w > 0, w, np.nan) ** (a / lam))[..., None]

        return EigenStack((g,), inv, dom, "lin1d", ((0.2,), (3.0,)))

    if system_id == "rect1d":
        (lam,) = lambdas if lambdas is not None else (1.0,)
        dom = whole_space(1)
        g = _ef(lam, lambda x: np.exp(lam * x[..., 0]), dom, "exp(lam y)")

        def inv(z):
            w = z[..., 0].real
            return (np.log(np.where(w > 0, w, np.nan)) / lam)[..., None]

        return EigenStack((g,), inv, dom, "rect1d", ((-2.0,), (2.0,)))

    if system_id == "lindiag":
        lam = tuple(lambdas) if lambdas is not None else (p["a1"], p["a2"])
        if not np.allclose(lam, (p["a1"], p["a2"])):
            raise ValueError("state observers of lindiag carry the rates a1, a2 as eigenvalues")
        dom = whole_space(2)
        g1 = _ef(lam[0], lambda x: x[..., 0], dom, "y1")
        g2 = _ef(lam[1], lambda x: x[..., 1], dom, "y2")
        return EigenStack((g1, g2), lambda z: z.real, dom, "lindiag", ((-1.0, -1.0), (1.0, 1.0)))

    if system_id == "quad2d":
        lam = (p["a1"], p["a2"])
        if lambdas is not None and not np.allclose(lambdas, lam):
            raise ValueError("quad2d closed-form eigenfunctions carry the rates a1, a2")
        dom = whole_space(2)
        g1 = _ef(lam[0], lambda x: quad2d_conjugacy(x)[..., 0], dom, "x1-x2^2")
        g2 = _ef(lam[1], lambda x: quad2d_conjugacy(x)[..., 1], dom, "-x1^2+x2+2x1x2^2-x2^4")
        return EigenStack(
            (g1, g2), lambda z: quad2d_conjugacy_inverse(z.real), dom, "quad2d",
            ((-1.0, -1.0), (1.0, 1.0)),
        )

    if system_id == "rect2d":
        l1, l2 = lambdas if lambdas is not None else (1.0, -0.5)
        if l1 == l2:
            raise ValueError("rectifier eigenvalues must differ (lambda1 != lambda2)")
        qf, qinv, lo = _q_pair(q)
        dom = lower_bounded([-math.inf, lo]) if math.isfinite(lo) else whole_space(2)
        g1 = _ef(l1, lambda y: np.exp(l1 * y[..., 0] + qf(y[..., 1])), dom, f"exp(l1 y1 + q(y2)) q={q}")
        g2 = _ef(l2, lambda y: np.exp(l2 * y[..., 0] + qf(y[..., 1])), dom, f"exp(l2 y1 + q(y2)) q={q}")

        def inv(z):
            # log branch: both components must be positive, NaN otherwise
            z = np.where(z.real > 0, z.real, np.nan)
            lz1, lz2 = np.log(z[..., 0]), np.log(z[..., 1])
            y1 = (lz1 - lz2) / (l1 - l2)
            y2 = qinv((l1 * lz2 - l2 * lz1) / (l1 - l2))
            return np.stack([y1, y2], axis=-1)

        probe_lo = (-1.0, lo + 0.5 if math.isfinite(lo) else -1.0)
        probe_hi = (1.0, lo + 2.0 if math.isfinite(lo) else 1.0)
        return EigenStack((g1, g2), inv, dom, f"rect2d[q={q}]", (probe_lo, probe_hi))

    if system_id == "appB1":
        l1, l2 = lambdas if lambdas is not None else (1.0, 2.0)
        dom = Domain(
            "quadrant-punctured", 2,
            lambda x: np.all(np.isfinite(x), axis=-1) & (x[..., 0] != 0) & (x[..., 1] != 0),
        )

        def s_of(x):
            return (x[..., 1] - x[..., 0]) / x[..., 1]

        # g0 = 1 and g0(u) = u on the line x = y, where u = x^2 / y
        g1 = _ef(l1, lambda x: np.exp(l1 * s_of(x)), dom, "exp(l s)")
        g2 = _ef(l2, lambda x: x[..., 0] ** 2 / x[..., 1] * np.exp(l2 * s_of(x)), dom, "(x^2/y) exp(l s)")

        def inv(z):
            z = z.real
            s = np.log(z[..., 0]) / l1
            u = z[..., 1] * np.exp(-l2 * s)
            x = u / (1 - s)
            return np.stack([x, x / (1 - s)], axis=-1)

        return EigenStack((g1, g2), inv, dom, "appB1", ((0.5, 1.2), (1.5, 2.5)))

    if system_id == "appB2":
        a, b = p["a"], p["b"]
        l1, l2 = lambdas if lambdas is not None else (a, b)
        dom = nonzero_point(2)

        def radial(lam):
            return lambda x: appb2_rho(x, a, b) ** (lam / (2 * a))

        def with_x(lam):
            return lambda x: x[..., 0] * appb2_rho(x, a, b) ** (lam / (2 * a) - 0.5)

        upper = lower_bounded([-math.inf, 0.0])
        if variant == "complete":
            g1 = _ef(l1, radial(l1), upper, "rho^(l/2a)")
            g2 = _ef(l2, with_x(l2), upper, "x rho^(l/2a - 1/2)")

            def inv(z):
                z = z.real
                rho = z[..., 0] ** (2 * a / l1)
                x = z[..., 1] * rho ** (0.5 - l2 / (2 * a))
                return np.stack([x, _appb2_y(rho, x, a, b)], axis=-1)

            return EigenStack((g1, g2), inv, upper, "appB2", ((-1.0, 0.3), (1.0, 1.5)))
        if variant == "g0_one":
            g1 = _ef(l1, radial(l1), dom, "rho^(l1/2a)")
            g2 = _ef(l2, radial(l2), dom, "rho^(l2/2a)")
            return EigenStack((g1, g2), None, dom, "appB2[g0=1]", ((0.3, 0.3), (1.2, 1.2)))
        if variant == "g0_x":
            g1 = _ef(l1, with_x(l1), dom, "x rho^(l1/2a - 1/2)")
            g2 = _ef(l2, with_x(l2), dom, "x rho^(l2/2a - 1/2)")

            def inv(z):
                z = z.real
                z = np.where((z[..., 0] * z[..., 1] > 0)[..., None], z, np.nan)
                rho = (z[..., 0] / z[..., 1]) ** (2 * a / (l1 - l2))
                x = z[..., 0] * rho ** (0.5 - l1 / (2 * a))
                return np.stack([x, _appb2_y(rho, x, a, b)], axis=-1)

            return EigenStack((g1, g2), inv, dom, "appB2[g0=x]", ((0.3, 0.3), (1.2, 1.2)))
        raise ValueError(f"unknown appB2 variant {variant!r}")

    raise KeyError(f"no closed-form eigenfunction stack for {system_id!r}")


def _appb2_y(rho, x, a, b):
    """Nonnegative branch of ``|y| = (rho - x^2)^(b/2a)``; NaN off the range."""
    gap = rho - x**2
    gap = np.where((gap < 0) & (gap > -1e-12 * rho), 0.0, gap)
    with np.errstate(invalid="ignore"):
        return np.where(gap >= 0, np.abs(gap) ** (b / (2 * a)), np.nan)


def save_grid_csv(g: Eigenfunction, points, path) -> None:
    """Write ``x1,...,xd,re_g,im_g`` rows for plotting level sets."""
    X = np.atleast_2d(np.asarray(points, dtype=float))
    vals = np.asarray(g(X), dtype=complex)
    d = X.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(d)] + ["re_g", "im_g"])
        for x, v in zip(X, vals):
            w.writerow([repr(float(c)) for c in x] + [repr(float(v.real)), repr(float(v.imag))])
