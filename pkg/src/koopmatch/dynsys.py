"""Vector fields, flows and sampled data for the catalog systems.

Every field in the catalog is vectorised over leading axes: ``field(X)``
accepts an array of shape ``(..., d)`` and returns the same shape. The
integrator below is an embedded Dormand-Prince 5(4) pair that advances a
whole batch of initial conditions with a shared step size, which is what
ensemble work (sampling, defect checks, Laplace averages) needs.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from dataclasses import field as dc_field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy.linalg import expm

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DEFAULT_MAX_NORM = 1e8


class DomainError(ValueError):
    """A point lies outside the set where a map or field is defined."""


class IntegrationError(RuntimeError):
    """The integrator could not start or produced non-finite values."""


# --------------------------------------------------------------------------
# domains
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Domain:
    """Predicate-based domain descriptor.

    ``contains`` is vectorised: it maps ``(..., d)`` points to a boolean array
    of shape ``(...)``.
    """

    kind: str
    dim: int
    contains: Callable[[np.ndarray], np.ndarray] = dc_field(compare=False, repr=False)
    params: Mapping[str, object] = dc_field(default_factory=dict, compare=False)

    def __call__(self, x) -> np.ndarray:
        return self.contains(np.asarray(x, dtype=float))

    def check(self, x) -> None:
        if not np.all(self(x)):
            raise DomainError(f"point {np.asarray(x).tolist()} outside {self.kind} domain")


def whole_space(dim: int) -> Domain:
    return Domain("whole", dim, lambda x: np.all(np.isfinite(x), axis=-1))


def box_domain(lo: Sequence[float], hi: Sequence[float]) -> Domain:
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)

    def contains(x):
        return np.all((x >= lo) & (x <= hi), axis=-1)

    return Domain("box", lo.size, contains, {"lo": lo.tolist(), "hi": hi.tolist()})


def punctured(dim: int, coord: int = 0) -> Domain:
    """All points whose ``coord`` component is nonzero."""

    def contains(x):
        return np.all(np.isfinite(x), axis=-1) & (x[..., coord] != 0.0)

    return Domain("punctured", dim, contains, {"coord": coord})


def open_orthant(signs: Sequence[int]) -> Domain:
    """Open quadrant/orthant with the given coordinate signs (+1/-1)."""
    s = np.asarray(signs, dtype=float)

    def contains(x):
        return np.all(x * s > 0.0, axis=-1)

    return Domain("orthant", s.size, contains, {"signs": s.tolist()})


def lower_bounded(bounds: Sequence[float]) -> Domain:
    """Points with every coordinate strictly above the given bound."""
    b = np.asarray(bounds, dtype=float)

    def contains(x):
        return np.all(np.isfinite(x), axis=-1) & np.all(x > b, axis=-1)

    return Domain("halfspace", b.size, contains, {"bounds": b.tolist()})


def nonzero_point(dim: int) -> Domain:
    """Whole space minus the origin."""

    def contains(x):
        return np.all(np.isfinite(x), axis=-1) & np.any(x != 0.0, axis=-1)

    return Domain("punctured", dim, contains, {"removed": "origin"})


# --------------------------------------------------------------------------
# systems
# --------------------------------------------------------------------------

Polynomial = Mapping[tuple, float]


@dataclass(frozen=True)
class SystemSpec:
    """An autonomous vector field ``x' = F(x)`` on ``R^dim``.

    ``polynomial`` optionally holds the field as one ``{exponents: coef}``
    mapping per component; it enables exact generator projections.
    """

    id: str
    dim: int
    params: Mapping[str, float]
    field: Callable[[np.ndarray], np.ndarray] = dc_field(repr=False)
    domain: Domain = dc_field(repr=False)
    analytic_flow: Optional[Callable[[np.ndarray, float], np.ndarray]] = dc_field(
        default=None, repr=False
    )
    polynomial: Optional[tuple] = dc_field(default=None, repr=False)


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    terminated_early: bool = False
    reason: Optional[str] = None

    def __post_init__(self):
        if self.times.shape[0] != self.states.shape[0]:
            raise ValueError("times and states must have equal length")
        dt = np.diff(self.times)
        if dt.size and not (np.all(dt > 0) or np.all(dt < 0)):
            raise ValueError("times must be strictly monotone")

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def to_csv(self, path) -> None:
        d = self.states.shape[1]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"x{i + 1}" for i in range(d)])
            for t, x in zip(self.times, self.states):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in x])


@dataclass(frozen=True)
class SamplePairs:
    x: np.ndarray
    x_next: np.ndarray
    dt: float
    seed: int
    discarded: int = 0

    def __post_init__(self):
        if self.x.shape != self.x_next.shape:
            raise ValueError("x and x_next must have the same shape")
        if self.dt < 0:
            raise ValueError("dt must be nonnegative")

    def __len__(self) -> int:
        return self.x.shape[0]


# --------------------------------------------------------------------------
# catalog
# --------------------------------------------------------------------------


def _stack(*cols):
    return np.stack(cols, axis=-1)


def _quad1d(params):
    def F(x):
        return x**2

    def flow(x0, t):
        with np.errstate(divide="ignore", invalid="ignore"):
            out = x0 / (1.0 - x0 * t)
        # past the movable singularity the formula jumps branches
        return np.where(x0 * t < 1.0, out, np.nan)

    poly = ({(2,): 1.0},)
    return SystemSpec("quad1d", 1, params, F, punctured(1), flow, poly)


def _lin1d(params):
    a = params["a"]

    def F(x):
        return a * x

    def flow(x0, t):
        return np.exp(a * t) * x0

    return SystemSpec("lin1d", 1, params, F, whole_space(1), flow, ({(1,): a},))


def _lindiag(params):
    a = np.array([params["a1"], params["a2"]])

    def F(x):
        return a * x

    def flow(x0, t):
        return np.exp(a * t) * x0

    poly = ({(1, 0): a[0]}, {(0, 1): a[1]})
    return SystemSpec("lindiag", 2, params, F, whole_space(2), flow, poly)


def _lin2d(params):
    A = np.array([[params["a11"], params["a12"]], [params["a21"], params["a22"]]])

    def F(x):
        return np.asarray(x) @ A.T

    def flow(x0, t):
        x0 = np.asarray(x0, dtype=float)
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return x0 @ expm(A * t).T
        # per-row times, broadcast against the leading axes of x0
        tb = np.broadcast_to(t[..., 0] if t.shape[-1:] == (1,) else t, x0.shape[:-1])
        E = np.stack([expm(A * s) for s in tb.ravel()]).reshape(tb.shape + (2, 2))
        return np.einsum("...ij,...j->...i", E, x0)

    poly = tuple({e: c for e, c in (((1, 0), A[i, 0]), ((0, 1), A[i, 1])) if c != 0} for i in range(2))
    return SystemSpec("lin2d", 2, params, F, whole_space(2), flow, poly)


def quad2d_conjugacy(x):
    """Polynomial map taking the quadratic system to its diagonal form."""
    x1, x2 = x[..., 0], x[..., 1]
    return _stack(x1 - x2**2, -(x1**2) + x2 + 2 * x1 * x2**2 - x2**4)


def quad2d_conjugacy_inverse(y):
    y1, y2 = y[..., 0], y[..., 1]
    return _stack(y1 + y1**4 + 2 * y1**2 * y2 + y2**2, y1**2 + y2)


def _quad2d(params):
    a1, a2 = params["a1"], params["a2"]
    poly = (
        {
            (1, 0): a1,
            (0, 2): -a1 + 2 * a2,
            (2, 1): 4 * a1 - 2 * a2,
            (1, 3): -8 * a1 + 4 * a2,
            (0, 5): 4 * a1 - 2 * a2,
        },
        {
            (0, 1): a2,
            (2, 0): 2 * a1 - a2,
            (1, 2): -4 * a1 + 2 * a2,
            (0, 4): 2 * a1 - a2,
        },
    )

    def F(x):
        x1, x2 = x[..., 0], x[..., 1]
        u = x1 - x2**2
        f1 = a1 * u * (1 + 4 * x1 * x2 - 4 * x2**3) - 2 * a2 * x2 * (u**2 - x2)
        f2 = 2 * a1 * u**2 - a2 * (u**2 - x2)
        return _stack(f1, f2)

    rates = np.array([a1, a2])

    def flow(x0, t):
        return quad2d_conjugacy_inverse(np.exp(rates * t) * quad2d_conjugacy(x0))

    return SystemSpec("quad2d", 2, params, F, whole_space(2), flow, poly)


def _rect1d(params):
    def F(x):
        return np.ones_like(x)

    def flow(x0, t):
        return x0 + t

    return SystemSpec("rect1d", 1, params, F, whole_space(1), flow, ({(0,): 1.0},))


def _rect2d(params):
    def F(x):
        out = np.zeros_like(x)
        out[..., 0] = 1.0
        return out

    def flow(x0, t):
        out = np.array(x0, dtype=float, copy=True)
        t = np.asarray(t, dtype=float)
        out[..., 0] += t[..., 0] if t.shape[-1:] == (1,) else t
        return out

    return SystemSpec(
        "rect2d", 2, params, F, whole_space(2), flow, ({(0, 0): 1.0}, {})
    )


def _vdp(params):
    mu = params["mu"]

    # inverted stability: origin attracting, limit cycle repelling
    def F(x):
        x1, x2 = x[..., 0], x[..., 1]
        return _stack(x2, -mu * (1 - x1**2) * x2 - x1)

    poly = ({(0, 1): 1.0}, {(0, 1): -mu, (2, 1): mu, (1, 0): -1.0})
    return SystemSpec("vdp", 2, params, F, whole_space(2), None, poly)


def _appb1(params):
    # The factor 2 makes the field agree with its closed-form flow
    # x0^2/(x0 - t y0); with y^2/x alone, y/x would be conserved instead.
    def F(x):
        x1, x2 = x[..., 0], x[..., 1]
        return _stack(x2, 2 * x2**2 / x1)

    def flow(x0, t):
        x1, x2 = x0[..., 0], x0[..., 1]
        den = x1 - t * x2
        with np.errstate(divide="ignore", invalid="ignore"):
            out = _stack(x1**2 / den, x1**2 * x2 / den**2)
        ok = (den / x1) > 0
        return np.where(ok[..., None], out, np.nan)

    return SystemSpec("appB1", 2, params, F, punctured(2, 0), flow)


def _appb2(params):
    rates = np.array([params["a"], params["b"]])

    def F(x):
        return rates * x

    def flow(x0, t):
        return np.exp(rates * t) * x0

    poly = ({(1, 0): rates[0]}, {(0, 1): rates[1]})
    return SystemSpec("appB2", 2, params, F, whole_space(2), flow, poly)


def vdp_transform(x, a, b):
    """Componentwise ``ln(a + exp(b x))`` used to build the transformed system."""
    return np.log(a + np.exp(b * np.asarray(x, dtype=float)))


def vdp_transform_inverse(y, a, b):
    y = np.asarray(y, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.log(np.exp(y) - a) / b


def _tvdp(params):
    mu, a, b = params["mu"], params["a"], params["b"]
    base = _vdp({"mu": mu})

    def F(y):
        x = vdp_transform_inverse(y, a, b)
        e = np.exp(b * x)
        jac = b * e / (a + e)
        return jac * base.field(x)

    return SystemSpec(
        "tvdp", 2, params, F, lower_bounded([math.log(a)] * 2), None
    )


_CATALOG = {
    "quad1d": (_quad1d, {}),
    "lin1d": (_lin1d, {"a": 1.0}),
    "lindiag": (_lindiag, {"a1": 1.0, "a2": -0.5}),
    "lin2d": (_lin2d, {"a11": 0.0, "a12": 1.0, "a21": 1.0, "a22": 0.0}),
    "quad2d": (_quad2d, {"a1": 1.0, "a2": -0.5}),
    "rect1d": (_rect1d, {}),
    "rect2d": (_rect2d, {}),
    "vdp": (_vdp, {"mu": 1.0}),
    "appB1": (_appb1, {}),
    "appB2": (_appb2, {"a": 1.0, "b": 2.0}),
    "tvdp": (_tvdp, {"mu": 1.0, "a": 1.2, "b": -1.5}),
}


def catalog_ids() -> list:
    return sorted(_CATALOG)


def get_system(system_id: str, params: Optional[Mapping[str, float]] = None) -> SystemSpec:
    """Build a catalog system from its id and an optional parameter object.

    Unknown parameter names are rejected; missing ones take catalog defaults.
    """
    try:
        factory, defaults = _CATALOG[system_id]
    except KeyError:
        raise KeyError(f"unknown system {system_id!r}; known: {catalog_ids()}") from None
    params = dict(params or {})
    extra = set(params) - set(defaults)
    if extra:
        raise ValueError(f"unknown parameters for {system_id}: {sorted(extra)}")
    merged = {**defaults, **{k: float(v) for k, v in params.items()}}
    return factory(merged)


def evaluate_field(sys: SystemSpec, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (sys.dim,):
        raise ValueError(f"expected points of dimension {sys.dim}, got shape {x.shape}")
    sys.domain.check(x)
    return np.asarray(sys.field(x), dtype=float)


def evaluate_polynomial(poly: Sequence[Polynomial], x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = []
    for comp in poly:
        acc = np.zeros(x.shape[:-1])
        for exps, c in comp.items():
            term = np.full(x.shape[:-1], float(c))
            for i, e in enumerate(exps):
                if e:
                    term = term * x[..., i] ** e
            acc = acc + term
        out.append(acc)
    return np.stack(out, axis=-1)


# --------------------------------------------------------------------------
# Dormand-Prince 5(4)
# --------------------------------------------------------------------------

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array(
    [5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40]
)
_E = _B5 - _B4

ALIVE, BLOWUP, NONFINITE = 0, 1, 2
_REASONS = {BLOWUP: "blow-up", NONFINITE: "non-finite field"}


def _initial_step(f, x, k0, direction, tol):
    scale = tol + tol * np.abs(x)
    d0 = np.sqrt(np.nanmean((x / scale) ** 2))
    d1 = np.sqrt(np.nanmean((k0 / scale) ** 2))
    h = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    return direction * min(h, 0.1)


class _BatchStepper:
    """Shared-step DP5(4) over a batch of states; rows that blow up are frozen."""

    def __init__(self, f, x0, tol, max_norm, h=None, atol=None):
        self.f = f
        self.tol = tol
        self.atol = atol
        self.max_norm = max_norm
        self.x = np.array(x0, dtype=float, copy=True)
        self.status = np.zeros(self.x.shape[0], dtype=int)
        self.t = 0.0
        with np.errstate(all="ignore"):
            self.k0 = np.asarray(f(self.x), dtype=float)
        self.h = h

    def _freeze(self, rows, code):
        self.status[rows] = code
        self.x[rows] = np.nan
        self.k0[rows] = 0.0

    def advance_to(self, t_target, max_steps=2_000_000, record=None):
        span = t_target - self.t
        if span == 0.0:
            return
        direction = 1.0 if span > 0 else -1.0
        alive = self.status == ALIVE
        if self.h is None or np.sign(self.h) != direction:
            self.h = _initial_step(self.f, self.x[alive], self.k0[alive], direction, self.tol)
        steps = 0
        while (t_target - self.t) * direction > 0:
            alive = self.status == ALIVE
            if not alive.any():
                return
            steps += 1
            if steps > max_steps:
                raise IntegrationError("maximum number of steps exceeded")
            remaining = t_target - self.t
            last = abs(self.h) >= abs(remaining)
            h = remaining if last else self.h
            xa = self.x[alive]
            ks = [self.k0[alive]]
            with np.errstate(all="ignore"):
                for i in range(1, 7):
                    xi = xa + h * sum(a * k for a, k in zip(_A[i], ks) if a != 0.0)
                    ks.append(np.asarray(self.f(xi), dtype=float))
                x_new = xa + h * sum(b * k for b, k in zip(_B5, ks) if b != 0.0)
                err = h * sum(e * k for e, k in zip(_E, ks) if e != 0.0)
                if self.atol is None:
                    scale = self.tol + self.tol * np.maximum(np.abs(xa), np.abs(x_new))
                else:
                    # relative to the row size, so decaying states keep their digits
                    size = np.maximum(np.abs(xa), np.abs(x_new))
                    size = np.maximum(size, np.max(np.abs(xa), axis=1, keepdims=True))
                    scale = self.atol + self.tol * size
                row_err = np.max(np.abs(err) / scale, axis=1)
            bad = ~np.isfinite(row_err) | ~np.all(np.isfinite(x_new), axis=1)
            row_err[bad] = np.inf
            err_norm = row_err.max() if row_err.size else 0.0
            min_h = 1e-14 * max(1.0, abs(self.t))
            if err_norm <= 1.0:
                self.t = t_target if last else self.t + h
                self.x[alive] = x_new
                self.k0[alive] = ks[6]
                fac = 5.0 if err_norm == 0 else min(5.0, max(0.2, 0.9 * err_norm**-0.2))
                if not last:
                    self.h = h * fac
                elif fac > 1.0:
                    self.h = direction * max(abs(self.h), abs(h) * fac)
                else:
                    self.h = direction * min(abs(self.h), abs(h) * fac)
                norms = np.linalg.norm(self.x, axis=1)
                over = (self.status == ALIVE) & ~(norms <= self.max_norm)
                if over.any():
                    if record is not None:
                        record(self.t, self.x.copy(), over)
                    self._freeze(np.flatnonzero(over), BLOWUP)
                if record is not None:
                    record(self.t, self.x, None)
                continue
            h_new = h * max(0.1, 0.9 * err_norm**-0.2) if np.isfinite(err_norm) else h * 0.1
            if abs(h_new) < min_h:
                # singularity reached: freeze the offending rows and carry on
                idx = np.flatnonzero(alive)[row_err > 1.0]
                big = np.linalg.norm(xa[row_err > 1.0], axis=1) > 1e3
                codes = np.where(big, BLOWUP, NONFINITE)
                for r, c in zip(idx, codes):
                    self._freeze([r], c)
                continue
            self.h = h_new


def integrate(
    sys: SystemSpec,
    x0,
    t_end: float,
    tol: float = DEFAULT_TOL,
    *,
    t_eval: Optional[Sequence[float]] = None,
    max_norm: float = DEFAULT_MAX_NORM,
) -> Trajectory:
    """Integrate one trajectory from ``x0`` over ``[0, t_end]``.

    Every accepted step is recorded unless ``t_eval`` is given, in which case
    states are reported at exactly those times (steps are clipped to hit
    them). Blow-up past ``max_norm`` ends the run with
    ``terminated_early=True``.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if not math.isfinite(t_end):
        raise ValueError("t_end must be finite")
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if x0.shape != (sys.dim,):
        raise ValueError(f"x0 must have shape ({sys.dim},)")
    if not np.all(np.isfinite(x0)) or np.linalg.norm(x0) > max_norm:
        raise IntegrationError("initial state already beyond the blow-up cap")
    with np.errstate(all="ignore"):
        f0 = np.asarray(sys.field(x0[None]), dtype=float)
    if not np.all(np.isfinite(f0)):
        raise IntegrationError(f"non-finite field value at x0={x0.tolist()}")

    stepper = _BatchStepper(sys.field, x0[None], tol, max_norm)
    times, states = [0.0], [x0.copy()]

    if t_eval is None:

        def rec(t, x, over):
            if over is not None or np.all(np.isfinite(x[0])):
                times.append(t)
                states.append(x[0].copy())

        stepper.advance_to(float(t_end), record=rec)
    else:
        t_eval = np.asarray(t_eval, dtype=float)
        for t in t_eval:
            if t == 0.0:
                continue
            stepper.advance_to(float(t))
            if stepper.status[0] != ALIVE:
                break
            times.append(float(t))
            states.append(stepper.x[0].copy())

    code = int(stepper.status[0])
    # drop duplicate timestamps from the blow-up record
    t_arr = np.asarray(times)
    keep = np.concatenate([[True], np.diff(t_arr) != 0])
    return Trajectory(
        t_arr[keep],
        np.asarray(states)[keep],
        terminated_early=code != ALIVE,
        reason=_REASONS.get(code),
    )


def flow(
    sys: SystemSpec,
    X,
    t: float,
    tol: float = DEFAULT_TOL,
    max_norm: float = DEFAULT_MAX_NORM,
) -> np.ndarray:
    """Advance a batch of states ``X`` (shape ``(n, d)``) by time ``t``.

    Rows that blow up or hit a non-finite field value come back as NaN.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0 or t == 0:
        return X.copy()
    stepper = _BatchStepper(sys.field, X, tol, max_norm)
    stepper.advance_to(float(t))
    return stepper.x


def flow_times(
    sys: SystemSpec,
    X,
    times: Sequence[float],
    tol: float = DEFAULT_TOL,
    max_norm: float = DEFAULT_MAX_NORM,
    atol: Optional[float] = None,
) -> np.ndarray:
    """States of a batch at each of the monotone ``times``; shape ``(T, n, d)``.

    By default the error scale is ``tol * (1 + |x|)`` per component. With
    ``atol`` given it is ``atol + tol * max(|x_i|, max_j |x_j|)``, which keeps
    relative accuracy on trajectories that decay towards a fixed point.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty((len(times),) + X.shape)
    stepper = _BatchStepper(sys.field, X, tol, max_norm, atol=atol)
    for i, t in enumerate(times):
        stepper.advance_to(float(t))
        out[i] = stepper.x
    return out


def sample_pairs(
    sys: SystemSpec,
    box,
    n: int,
    dt: float,
    seed: int,
    tol: float = DEFAULT_TOL,
) -> SamplePairs:
    """Draw ``n`` uniform states in ``box`` and advance each by ``dt``.

    ``box`` is a ``(lo, hi)`` pair of coordinate bounds. Pairs whose
    trajectory blows up within ``dt`` are dropped with a warning.
    """
    if n < 0 or dt < 0:
        raise ValueError("n and dt must be nonnegative")
    lo, hi = (np.asarray(b, dtype=float) for b in box)
    if lo.shape != (sys.dim,) or hi.shape != (sys.dim,):
        raise ValueError("box bounds must match the system dimension")
    corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(sys.dim, -1).T
    probe = np.concatenate([corners, (lo + hi)[None] / 2])
    if not np.all(sys.domain(probe)):
        raise DomainError(f"sampling box {lo.tolist()}..{hi.tolist()} leaves the domain of {sys.id}")
    rng = np.random.default_rng(seed)
    x = lo + (hi - lo) * rng.random((n, sys.dim))
    if n == 0:
        empty = np.zeros((0, sys.dim))
        return SamplePairs(empty, empty.copy(), float(dt), seed)
    x_next = flow(sys, x, dt, tol)
    ok = np.all(np.isfinite(x_next), axis=1)
    dropped = int((~ok).sum())
    if dropped:
        log.warning("sample_pairs(%s): discarded %d pairs that blew up within dt", sys.id, dropped)
    return SamplePairs(x[ok], x_next[ok], float(dt), seed, dropped)
