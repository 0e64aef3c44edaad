import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from koopmatch.dynsys import DomainError, get_system
from koopmatch.keig import (
    CharacteristicError,
    Eigenfunction,
    InitialSurface,
    SingularPathError,
    catalog_eigenstack,
    characteristics_eigenfunction,
    grid,
    keig_1d_quadrature,
    keig_characteristics,
    keig_residual,
    quadrature_eigenfunction,
    save_grid_csv,
    trace_characteristic,
)

STACKS = [
    ("quad1d", {}),
    ("lin1d", {}),
    ("rect1d", {}),
    ("lindiag", {}),
    ("quad2d", {}),
    ("rect2d", {"q": "id"}),
    ("rect2d", {"q": "q2"}),
    ("appB1", {}),
    ("appB2", {}),
    ("appB2", {"variant": "g0_one"}),
    ("appB2", {"variant": "g0_x"}),
]
IDS = [f"{s}-{'-'.join(kw.values()) or 'default'}" for s, kw in STACKS]


def ones(x):
    return np.ones(np.asarray(x).shape[:-1])


# residuals -----------------------------------------------------------------


@pytest.mark.parametrize("sid,kw", STACKS, ids=IDS)
def test_catalog_residual(sid, kw):
    st_ = catalog_eigenstack(sid, **kw)
    sys = get_system(sid)
    P = st_.probe_points(100 if sys.dim == 1 else 10)
    assert P.shape[0] == 100
    for g in st_.entries:
        assert keig_residual(sys, g, P) <= 1e-6


def test_quad2d_first_eigenfunction_residual():
    g = catalog_eigenstack("quad2d").entries[0]
    assert keig_residual(get_system("quad2d"), g, grid((-1, -1), (1, 1), 21)) <= 1e-6


def test_constant_function_has_zero_residual():
    sys = get_system("vdp")
    g = Eigenfunction(0.0, ones, sys.domain)
    assert keig_residual(sys, g, grid((-1, -1), (1, 1), 5)) == 0.0


def test_perturbed_eigenfunction_residual_large():
    a1, a2 = 1.0, 2.0
    sys = get_system("quad2d", {"a1": a1, "a2": a2})
    g1 = catalog_eigenstack("quad2d", {"a1": a1, "a2": a2}).entries[0]
    pert = Eigenfunction(a1, lambda x: g1.eval(x) + 0.1 * x[..., 0] ** 2, g1.domain)
    G = grid((-1, -1), (1, 1), 11)
    # direct oracle: the perturbation alone contributes 0.1 * (2 x1 F1 - a1 x1^2)
    F = sys.field(G)
    direct = np.abs(0.1 * (2 * G[:, 0] * F[:, 0] - a1 * G[:, 0] ** 2))
    r = keig_residual(sys, pert, G)
    assert r > 0.05
    assert abs(r - direct.max()) <= 1e-6 * (1 + direct.max())


def test_residual_rejects_boundary_points():
    g = catalog_eigenstack("quad1d").entries[0]
    with pytest.raises(DomainError):
        keig_residual(get_system("quad1d"), g, [[0.0]])


@settings(max_examples=20, deadline=None)
@given(c=st.complex_numbers(min_magnitude=1e-3, max_magnitude=1e3, allow_nan=False, allow_infinity=False))
def test_scalar_multiple_is_eigenfunction(c):
    sys = get_system("quad2d")
    g = catalog_eigenstack("quad2d").entries[1].scaled(c)
    assert keig_residual(sys, g, grid((-1, -1), (1, 1), 6)) <= 1e-6 * abs(c)


# flow property ------------------------------------------------------------


@pytest.mark.parametrize("sid,kw", STACKS, ids=IDS)
@pytest.mark.parametrize("t", [0.1, 0.5])
def test_eigenfunction_flow_property(sid, kw, t):
    stack = catalog_eigenstack(sid, **kw)
    sys = get_system(sid)
    lo, hi = stack.probe
    X = np.random.default_rng(5).uniform(lo, hi, (50, sys.dim))
    Y = sys.analytic_flow(X, t)
    ok = np.all(np.isfinite(Y), axis=1) & stack.domain(Y)
    # only appB1 and quad1d have trajectories that leave the domain in time t
    assert ok.sum() >= 25
    for g in stack.entries:
        lhs = np.asarray(g(Y[ok]))
        rhs = np.exp(g.lam * t) * np.asarray(g(X[ok]))
        assert np.all(np.abs(lhs - rhs) <= 1e-6 * (1 + np.abs(rhs)))


# stacks -------------------------------------------------------------------


def test_quad2d_stack_formula():
    stack = catalog_eigenstack("quad2d")
    X = np.random.default_rng(0).uniform(-1, 1, (20, 2))
    x1, x2 = X.T
    want = np.column_stack([x1 - x2**2, -(x1**2) + x2 + 2 * x1 * x2**2 - x2**4])
    np.testing.assert_allclose(stack(X).real, want, atol=1e-14)


def test_lindiag_identity_stack():
    X = np.random.default_rng(0).uniform(-1, 1, (10, 2))
    np.testing.assert_array_equal(catalog_eigenstack("lindiag")(X).real, X)


def test_rect2d_inverse_example():
    stack = catalog_eigenstack("rect2d", lambdas=(1.0, 2.0))
    y = stack.closed_inverse(np.array([[math.e, math.e**2]], dtype=complex))
    np.testing.assert_allclose(y, [[1.0, 0.0]], atol=1e-14)


@pytest.mark.parametrize("sid,kw", [s for s in STACKS if s[1].get("variant") != "g0_one"])
def test_closed_inverse_roundtrip(sid, kw):
    stack = catalog_eigenstack(sid, **kw)
    P = stack.probe_points(6)
    np.testing.assert_allclose(stack.closed_inverse(stack(P)), P, atol=1e-9)


@pytest.mark.parametrize("sid,kw", [s for s in STACKS if s[1].get("variant") != "g0_one" and get_system(s[0]).dim == 2])
def test_stack_jacobian_nonsingular(sid, kw):
    stack = catalog_eigenstack(sid, **kw)
    assert np.max(stack.jacobian_condition(stack.probe_points(5))) < 1e10


def test_g0_one_stack_has_singular_jacobian():
    stack = catalog_eigenstack("appB2", variant="g0_one")
    assert np.min(stack.jacobian_condition(stack.probe_points(4))) > 1e10


def test_stack_rejects_repeated_eigenvalues():
    with pytest.raises(ValueError):
        catalog_eigenstack("rect2d", lambdas=(1.0, 1.0))


def test_unknown_stack():
    with pytest.raises(KeyError):
        catalog_eigenstack("vdp")


def test_grid_csv(tmp_path):
    g = catalog_eigenstack("quad2d").entries[0]
    p = tmp_path / "g.csv"
    save_grid_csv(g, grid((-1, -1), (1, 1), 3), p)
    lines = p.read_text().splitlines()
    assert lines[0] == "x1,x2,re_g,im_g" and len(lines) == 10


# quadrature --------------------------------------------------------------


def test_quadrature_quad1d_value():
    v = keig_1d_quadrature(get_system("quad1d"), 1.0, 1.0, 2.0)
    assert abs(v - math.exp(0.5)) <= 1e-10


def test_quadrature_lin1d_value():
    v = keig_1d_quadrature(get_system("lin1d", {"a": 1.0}), 1.0, 1.0, 3.0)
    assert abs(v - 3.0) <= 1e-10


def test_quadrature_rect1d_value():
    v = keig_1d_quadrature(get_system("rect1d"), 2.0, 0.0, 1.5)
    assert abs(v - math.exp(3.0)) <= 1e-9


def test_quadrature_singular_path():
    with pytest.raises((SingularPathError, DomainError)):
        keig_1d_quadrature(get_system("quad1d"), 1.0, -1.0, 1.0)
    with pytest.raises(SingularPathError):
        keig_1d_quadrature(get_system("lin1d"), 1.0, -1.0, 1.0)


@settings(max_examples=30, deadline=None)
@given(x=st.floats(0.5, 5.0), lam=st.sampled_from([0.5, 1.0, 2.0]))
def test_quadrature_matches_closed_form(x, lam):
    v = keig_1d_quadrature(get_system("quad1d"), lam, 1.0, x)
    assert abs(v - math.exp(-lam / x) * math.exp(lam)) <= 1e-8 * (1 + abs(v))


def test_quadrature_eigenfunction_residual():
    g = quadrature_eigenfunction(get_system("quad1d"), 1.0, 1.0)
    assert keig_residual(get_system("quad1d"), g, np.linspace(0.6, 4.0, 12)[:, None]) <= 1e-6


# characteristics ----------------------------------------------------------


def test_characteristics_appB1_example():
    diag = InitialSurface(2, lambda x: x[..., 0] - x[..., 1], ones)
    v = keig_characteristics(get_system("appB1"), 1.0, diag, [2.0, 1.0])
    assert abs(v - math.exp(-1.0)) <= 1e-8


def test_characteristics_on_surface_returns_data():
    circ = InitialSurface(2, lambda x: x[..., 0] ** 2 + x[..., 1] ** 2 - 1.0, lambda x: 3.0 + x[..., 0])
    x = np.array([math.cos(0.4), math.sin(0.4)])
    sol = trace_characteristic(get_system("appB2", {"a": 1.0, "b": 1.0}), 1.0, circ, x)
    assert abs(sol.s) <= 1e-9 and abs(sol.value - (3.0 + x[0])) <= 1e-9


def test_characteristics_appB2_closed_form():
    circ = InitialSurface(2, lambda x: x[..., 0] ** 2 + np.abs(x[..., 1]) - 1.0, ones)
    v = keig_characteristics(get_system("appB2", {"a": 1.0, "b": 2.0}), 1.0, circ, [2.0, 0.0])
    assert abs(v - 2.0) <= 1e-8


def test_characteristics_tangent_surface():
    # the x1 axis is invariant under (a x, b y), so the flow never crosses y = 1 from it
    line = InitialSurface(2, lambda x: x[..., 1] - 1.0, ones)
    with pytest.raises(CharacteristicError):
        keig_characteristics(get_system("appB2"), 1.0, line, [1.0, 0.0], t_max=5.0)


def test_quadrature_and_characteristics_agree_in_1d():
    sys = get_system("quad1d")
    point = InitialSurface(1, lambda x: x[..., 0] - 1.0, ones)
    gc = characteristics_eigenfunction(sys, 1.0, point)
    gq = quadrature_eigenfunction(sys, 1.0, 1.0)
    X = np.linspace(0.6, 3.0, 9)[:, None]
    ratio = gc(X) / gq(X)
    assert np.max(np.abs(ratio - ratio[0])) <= 1e-8


def test_characteristics_eigenfunction_matches_closed_form():
    sys = get_system("appB1")
    diag = InitialSurface(2, lambda x: x[..., 0] - x[..., 1], ones)
    g = characteristics_eigenfunction(sys, 1.0, diag, catalog_eigenstack("appB1").domain)
    closed = catalog_eigenstack("appB1").entries[0]
    P = grid((1.5, 0.5), (2.5, 1.0), 4)
    np.testing.assert_allclose(g(P), closed(P), atol=1e-8)
