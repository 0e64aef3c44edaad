"""Laplace averages and level-set continuation.

For an observable ``f`` and a Koopman eigenvalue ``lam`` the Laplace average

    f*(x) = (1/T) int_0^T f(S_t x) exp(-lam t) dt

is, for ``T -> inf``, an eigenfunction with eigenvalue ``lam``. Level sets
``{|f*| = c}`` of such an average are traced by predictor-corrector
continuation and can serve as initial surfaces for the characteristics
solver in :mod:`koopmatch.keig`.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dynsys import IntegrationError, SystemSpec
from .keig import InitialSurface, fd_jacobian

log = logging.getLogger(__name__)


class LaplaceError(RuntimeError):
    """Trajectory blow-up or overflow of the weighted integrand."""


class ContinuationError(RuntimeError):
    """Corrector divergence or a critical point of ``|f*|`` on the level set."""


def coordinate_observable(i: int) -> Callable[[np.ndarray], np.ndarray]:
    """``f(x) = x_i`` (0-based), vectorised over leading axes."""

    def f(X):
        return np.asarray(X, dtype=float)[..., i]

    f.__name__ = f"x{i + 1}"
    return f


@dataclass(frozen=True)
class LaplaceConfig:
    """Observable, eigenvalue and quadrature settings of a Laplace average.

    ``direction`` is ``"forward"`` or ``"backward"``; ``None`` picks
    backward for ``Re(lam) > 0`` (unstable linearisation) and forward
    otherwise. ``step`` is the fixed RK4 step, which is also the
    quadrature step.
    """

    f: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    lam: complex
    T: float = 100.0
    direction: Optional[str] = None
    step: float = 0.1

    def __post_init__(self):
        if not (np.isfinite(self.T) and self.T > 0):
            raise ValueError("T must be finite and positive")
        if not (0 < self.step < self.T / 10):
            raise ValueError("step must satisfy 0 < step < T/10")
        if not np.isfinite(complex(self.lam)):
            raise ValueError("lam must be finite")
        object.__setattr__(self, "lam", complex(self.lam))
        if self.direction is None:
            object.__setattr__(self, "direction", "backward" if self.lam.real > 0 else "forward")
        if self.direction not in ("forward", "backward"):
            raise ValueError("direction must be 'forward' or 'backward'")

    def with_T(self, T: float) -> "LaplaceConfig":
        return LaplaceConfig(self.f, self.lam, T, self.direction, self.step)


def linearization_eigenvalues(sys: SystemSpec, x_fixed) -> np.ndarray:
    """Eigenvalues of the finite-difference Jacobian of ``F`` at ``x_fixed``, by descending real part."""
    x = np.asarray(x_fixed, dtype=float)
    J = fd_jacobian(lambda X: sys.field(np.atleast_2d(X)).reshape(np.shape(X)), x)
    w = np.linalg.eigvals(J)
    return w[np.lexsort((-w.imag, -w.real))]


def laplace_average(cfg: LaplaceConfig, sys: SystemSpec, x) -> np.ndarray:
    """Time-averaged Laplace integral at one point or a batch of points.

    Trajectory and integral advance together with classical RK4 of step
    ``cfg.step`` (Simpson's rule on the weighted observable). Backward mode
    uses ``(1/T) int_0^T f(S_{-t} x) exp(lam t) dt``. Returns a complex
    scalar for a single point and an array for a batch.
    """
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    if X.shape[-1] != sys.dim:
        raise ValueError(f"points must have dimension {sys.dim}")
    sgn = 1.0 if cfg.direction == "forward" else -1.0
    n = int(round(cfg.T / cfg.step))
    h = sgn * cfg.T / n
    lam = cfg.lam
    F = sys.field

    def g(Z, t):
        return np.asarray(cfg.f(Z), dtype=float) * np.exp(-lam * t)

    q = np.zeros(len(X), dtype=complex)
    t = 0.0
    with np.errstate(all="ignore"):
        for _ in range(n):
            k1 = F(X)
            X2 = X + 0.5 * h * k1
            k2 = F(X2)
            X3 = X + 0.5 * h * k2
            k3 = F(X3)
            X4 = X + h * k3
            k4 = F(X4)
            q += (h / 6.0) * (g(X, t) + 2.0 * g(X2, t + 0.5 * h) + 2.0 * g(X3, t + 0.5 * h) + g(X4, t + h))
            X = X + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
            if not np.all(np.isfinite(X)):
                raise LaplaceError(f"trajectory blew up before |t| = {cfg.T:g}")
    if not np.all(np.isfinite(q)):
        raise LaplaceError("weighted integrand overflowed; check the sign of Re(lam) and the direction")
    out = sgn * q / cfg.T
    return out[0] if single else out


# --------------------------------------------------------------------------
# level sets
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LevelSet:
    """Ordered polyline on ``{|f*| = c}``; a closed set does not repeat its first vertex."""

    points: np.ndarray
    c: float
    closed: bool

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValueError("level-set points must have shape (n, 2)")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x1", "x2"])
            for p in self.points:
                w.writerow([repr(float(p[0])), repr(float(p[1]))])


def _abs_and_grad(cfg, sys, x):
    """``|f*(x)|`` and its central-difference gradient from one batched average."""
    hs = 1e-6 * max(1.0, float(np.max(np.abs(x))))
    stencil = np.array([x, x + [hs, 0], x - [hs, 0], x + [0, hs], x - [0, hs]])
    v = np.abs(laplace_average(cfg, sys, stencil))
    grad = np.array([v[1] - v[2], v[3] - v[4]]) / (2 * hs)
    return float(v[0]), grad


def levelset_continuation(
    cfg: LaplaceConfig,
    sys: SystemSpec,
    x0,
    step: Optional[float] = None,
    max_points: int = 2000,
    rtol: float = 1e-3,
    max_newton: int = 8,
) -> LevelSet:
    """Trace the connected part of ``{|f*| = |f*(x0)|}`` through ``x0``.

    A tangent predictor of length ``step`` is followed by Newton
    corrections along the gradient. Newton aims for ``1e-3 * rtol * c`` and
    a vertex is accepted once ``||f*| - c| <= rtol * c``. On
    corrector failure the step is halved (floor 1e-5). The curve is closed
    once a vertex returns within ``step/2`` of ``x0`` after at least ten
    vertices. The default step is 1% of the bounding-box diagonal,
    estimated as ``2 sqrt(2) c / |grad|f*||`` at ``x0``.
    """
    if sys.dim != 2:
        raise ValueError("level-set continuation is planar (dim = 2)")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (2,):
        raise ValueError("x0 must be a point in the plane")
    c, grad = _abs_and_grad(cfg, sys, x0)
    gnorm = float(np.linalg.norm(grad))
    if not c > 0:
        raise ContinuationError("|f*(x0)| = 0: the zero level is not a curve")
    if not gnorm > 1e-12 * max(1.0, c):
        raise ContinuationError("vanishing gradient of |f*| at x0 (critical point of the level set)")
    if step is None:
        step = 0.01 * 2.0 * np.sqrt(2.0) * c / gnorm
    if not step > 0:
        raise ValueError("step must be positive")
    base_step = float(step)
    tol = rtol * c

    pts = [x0.copy()]
    x, g = x0.copy(), grad
    closed = False
    h = base_step
    while len(pts) < max_points:
        tangent = np.array([-g[1], g[0]]) / np.linalg.norm(g)
        y = x + h * tangent
        ok = False
        for k in range(max_newton):
            v, gy = _abs_and_grad(cfg, sys, y)
            gn2 = float(gy @ gy)
            if not gn2 > (1e-12 * max(1.0, c)) ** 2:
                raise ContinuationError(f"vanishing gradient of |f*| near {y.tolist()}")
            ok = abs(v - c) <= tol and np.linalg.norm(y - x) <= 2.0 * h
            # Newton converges quadratically, so aim well inside the
            # acceptance band instead of stopping at its edge
            if abs(v - c) <= 1e-3 * tol or k == max_newton - 1:
                break
            y = y - (v - c) * gy / gn2
        if not ok:
            h *= 0.5
            if h < 1e-5:
                raise ContinuationError(f"corrector diverged near {x.tolist()} (step below 1e-5)")
            continue
        if len(pts) >= 10 and np.linalg.norm(y - x0) <= base_step / 2:
            closed = True
            break
        pts.append(y)
        x, g = y, gy
        h = min(base_step, 2.0 * h)
    if not closed:
        log.warning("level set did not close within %d points", max_points)
    return LevelSet(np.array(pts), c, closed)


# --------------------------------------------------------------------------
# initial surface from a polyline
# --------------------------------------------------------------------------


def _segments(points, closed):
    P = np.asarray(points, dtype=float)
    Q = np.roll(P, -1, axis=0) if closed else P[1:]
    return (P if closed else P[:-1]), Q


def _cross2(a, b):
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


def _self_intersects(A, B, closed) -> bool:
    m = len(A)
    d = B - A
    for i in range(m):
        j = np.arange(i + 2, m)
        if closed and i == 0:
            j = j[j != m - 1]
        if j.size == 0:
            continue
        r, s = d[i], d[j]
        den = _cross2(r[None], s)
        qp = A[j] - A[i]
        with np.errstate(all="ignore"):
            t = _cross2(qp, s) / den
            u = _cross2(qp, r[None]) / den
        if np.any((den != 0) & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)):
            return True
    return False


def _project(X, A, B, cum):
    """Distance, arc-length coordinate and signed side of ``X`` against segments ``A -> B``."""
    X = np.asarray(X, dtype=float)
    d = B - A
    L2 = np.einsum("ij,ij->i", d, d)
    rel = X[..., None, :] - A
    t = np.clip(np.einsum("...ij,ij->...i", rel, d) / L2, 0.0, 1.0)
    foot = A + t[..., None] * d
    dist = np.linalg.norm(X[..., None, :] - foot, axis=-1)
    k = np.argmin(dist, axis=-1)
    idx = np.expand_dims(k, -1)
    dmin = np.take_along_axis(dist, idx, -1)[..., 0]
    tk = np.take_along_axis(t, idx, -1)[..., 0]
    s = cum[k] + tk * np.sqrt(L2[k])
    side = np.sign(_cross2(d[k], X - A[k]))
    return dmin, s, side


def _inside(X, P):
    """Even-odd rule for a closed polygon with vertices ``P``."""
    X = np.asarray(X, dtype=float)
    x, y = X[..., 0:1], X[..., 1:2]
    xa, ya = P[:, 0], P[:, 1]
    xb, yb = np.roll(xa, -1), np.roll(ya, -1)
    with np.errstate(all="ignore"):
        cross = ((ya > y) != (yb > y)) & (x < (xb - xa) * (y - ya) / (yb - ya) + xa)
    return np.count_nonzero(cross, axis=-1) % 2 == 1


def surface_from_levelset(ls: LevelSet, g0_values, transversality_check: bool = True) -> InitialSurface:
    """Initial surface on the polyline of ``ls`` carrying per-vertex data.

    The implicit function is the distance to the polyline, negative inside
    a closed curve (or left of an open one). Data are interpolated
    linearly in arc length between vertices.
    """
    P = ls.points
    if len(P) < 3:
        raise ValueError("a level-set polyline needs at least three vertices")
    g0 = np.asarray(g0_values, dtype=complex)
    if g0.shape != (len(P),):
        raise ValueError("g0_values must hold one value per vertex")
    if not np.all(np.isfinite(g0)):
        raise ValueError("g0_values must be finite")
    A, B = _segments(P, ls.closed)
    if np.any(np.linalg.norm(B - A, axis=1) == 0):
        raise ValueError("polyline has repeated consecutive vertices")
    if _self_intersects(A, B, ls.closed):
        raise ValueError("self-intersecting polyline")
    lengths = np.linalg.norm(B - A, axis=1)
    cum = np.concatenate([[0.0], np.cumsum(lengths)])
    knots = np.concatenate([g0, g0[:1]]) if ls.closed else g0

    def implicit(X):
        dist, _, side = _project(X, A, B, cum)
        if ls.closed:
            return np.where(_inside(X, P), -dist, dist)
        return -side * dist

    def data(X):
        _, s, _ = _project(X, A, B, cum)
        return np.interp(s, cum, knots.real) + 1j * np.interp(s, cum, knots.imag)

    return InitialSurface(2, implicit, data, transversality_check)


def characteristic_from_laplace(cfg: LaplaceConfig, sys: SystemSpec, ls: LevelSet, modulus: bool = False):
    """Surface data taken from the Laplace average on the vertices of ``ls``.

    With ``modulus`` the data are ``|f*|`` (an eigenfunction for ``Re(lam)``),
    otherwise ``f*`` itself.
    """
    vals = laplace_average(cfg, sys, ls.points)
    return surface_from_levelset(ls, np.abs(vals) if modulus else vals)


__all__ = [
    "ContinuationError",
    "IntegrationError",
    "LaplaceConfig",
    "LaplaceError",
    "LevelSet",
    "characteristic_from_laplace",
    "coordinate_observable",
    "laplace_average",
    "levelset_continuation",
    "linearization_eigenvalues",
    "surface_from_levelset",
]
