import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from koopmatch.dynsys import (
    DomainError,
    IntegrationError,
    catalog_ids,
    evaluate_field,
    evaluate_polynomial,
    flow,
    get_system,
    integrate,
    sample_pairs,
    vdp_transform,
    vdp_transform_inverse,
)

ANALYTIC = ["quad1d", "lin1d", "lindiag", "lin2d", "quad2d", "rect1d", "rect2d", "appB1", "appB2"]


def test_catalog_lists_every_system():
    assert set(ANALYTIC) | {"vdp", "tvdp"} == set(catalog_ids())


def test_unknown_system_and_parameter_rejected():
    with pytest.raises(KeyError):
        get_system("nope")
    with pytest.raises(ValueError):
        get_system("vdp", {"nu": 1.0})


# field values --------------------------------------------------------------


def test_quad1d_field():
    assert evaluate_field(get_system("quad1d"), [2.0])[0] == 4.0


def test_lindiag_field_at_ones():
    s = get_system("lindiag", {"a1": 0.7, "a2": -3.0})
    np.testing.assert_array_equal(evaluate_field(s, [1.0, 1.0]), [0.7, -3.0])


def test_vdp_fixed_point():
    np.testing.assert_array_equal(evaluate_field(get_system("vdp"), [0.0, 0.0]), [0.0, 0.0])


def test_field_outside_domain():
    with pytest.raises(DomainError):
        evaluate_field(get_system("quad1d"), [0.0])


@pytest.mark.parametrize("sid", [s for s in ANALYTIC + ["vdp"] if get_system(s).polynomial is not None])
def test_polynomial_form_matches_field(sid):
    s = get_system(sid)
    X = np.random.default_rng(1).uniform(-1, 1, (50, s.dim))
    np.testing.assert_allclose(evaluate_polynomial(s.polynomial, X), s.field(X), atol=1e-12)


def test_vdp_transform_roundtrip():
    x = np.random.default_rng(0).uniform(-2, 2, (20, 2))
    np.testing.assert_allclose(vdp_transform_inverse(vdp_transform(x, 1.2, -1.5), 1.2, -1.5), x, atol=1e-12)


# integration ---------------------------------------------------------------


def test_quad1d_half_time():
    tr = integrate(get_system("quad1d"), [1.0], 0.5)
    assert not tr.terminated_early
    assert abs(tr.final[0] - 2.0) < 1e-8


def test_lin1d_exponential():
    tr = integrate(get_system("lin1d", {"a": 1.0}), [1.0], 1.0)
    assert abs(tr.final[0] - math.e) < 1e-8


def test_quad1d_blowup_terminates_near_singularity():
    tr = integrate(get_system("quad1d"), [1.0], 2.0)
    assert tr.terminated_early
    assert abs(tr.times[-1] - 1.0) < 1e-3


def test_integrate_t_eval_reports_exact_times():
    tr = integrate(get_system("lin1d"), [1.0], 1.0, t_eval=[0.0, 0.25, 0.5, 1.0])
    np.testing.assert_array_equal(tr.times, [0.0, 0.25, 0.5, 1.0])
    np.testing.assert_allclose(tr.states[:, 0], np.exp(tr.times), rtol=1e-9)


def test_integrate_rejects_bad_input():
    s = get_system("lin1d")
    with pytest.raises(ValueError):
        integrate(s, [1.0], 1.0, tol=0.0)
    with pytest.raises(ValueError):
        integrate(s, [1.0, 2.0], 1.0)
    with pytest.raises(IntegrationError):
        integrate(s, [np.inf], 1.0)


def test_trajectory_csv(tmp_path):
    tr = integrate(get_system("lindiag"), [1.0, 1.0], 0.2, t_eval=[0.1, 0.2])
    p = tmp_path / "t.csv"
    tr.to_csv(p)
    rows = p.read_text().splitlines()
    assert rows[0] == "t,x1,x2" and len(rows) == 4


@settings(max_examples=25, deadline=None)
@given(
    x=st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5)),
    t1=st.floats(0.0, 1.0),
    t2=st.floats(0.0, 1.0),
)
def test_semigroup_property(x, t1, t2):
    s = get_system("vdp")
    tol = 1e-10
    a = flow(s, flow(s, [x], t1, tol), t2, tol)
    b = flow(s, [x], t1 + t2, tol)
    assume(np.all(np.isfinite(b)))  # the inverted oscillator blows up outside its basin
    scale = 1.0 + np.abs(b)
    assert np.all(np.abs(a - b) <= 10 * tol * scale)


@pytest.mark.parametrize("sid", ANALYTIC)
def test_analytic_flow_satisfies_field(sid):
    # central difference in t of the closed-form flow equals F(S_t x)
    s = get_system(sid)
    rng = np.random.default_rng(7)
    lo, hi = {"appB1": (0.5, 1.0), "quad1d": (0.2, 1.0)}.get(sid, (-1.0, 1.0))
    X = rng.uniform(lo, hi, (100, s.dim))
    if sid == "appB1":
        X[:, 1] = -X[:, 1]  # moving away from the singular line
    T = rng.uniform(0.0, 0.5, 100)[:, None]
    h = 1e-5
    fd = (s.analytic_flow(X, T + h) - s.analytic_flow(X, T - h)) / (2 * h)
    F = s.field(s.analytic_flow(X, T))
    err = np.abs(fd - F) / (1 + np.abs(F))
    assert np.max(err) <= 1e-6


@pytest.mark.parametrize("sid", ["lindiag", "quad2d", "appB2", "lin2d"])
def test_integrator_matches_analytic_flow(sid):
    s = get_system(sid)
    X = np.random.default_rng(2).uniform(-0.5, 0.5, (20, s.dim))
    np.testing.assert_allclose(flow(s, X, 0.7), s.analytic_flow(X, 0.7), atol=1e-8, rtol=1e-8)


def test_flow_marks_blowup_as_nan():
    out = flow(get_system("quad1d"), [[1.0], [0.1]], 2.0)
    assert np.isnan(out[0, 0]) and np.isfinite(out[1, 0])


# sample pairs --------------------------------------------------------------


def test_sample_pairs_zero_dt_is_identity():
    p = sample_pairs(get_system("vdp"), ([-1, -1], [1, 1]), 5, 0.0, seed=3)
    np.testing.assert_array_equal(p.x, p.x_next)


def test_sample_pairs_empty():
    p = sample_pairs(get_system("vdp"), ([-1, -1], [1, 1]), 0, 0.1, seed=3)
    assert len(p) == 0


def test_sample_pairs_reintegration():
    s = get_system("vdp", {"mu": 1.0})
    p = sample_pairs(s, ([-0.5, -0.5], [0.5, 0.5]), 100, 0.1, seed=0)
    assert len(p) == 100
    for x, xn in zip(p.x, p.x_next):
        assert np.linalg.norm(integrate(s, x, 0.1).final - xn) <= 1e-8


def test_sample_pairs_deterministic():
    s = get_system("vdp")
    a = sample_pairs(s, ([-1, -1], [1, 1]), 50, 0.1, seed=11)
    b = sample_pairs(s, ([-1, -1], [1, 1]), 50, 0.1, seed=11)
    assert a.x.tobytes() == b.x.tobytes() and a.x_next.tobytes() == b.x_next.tobytes()


def test_sample_pairs_box_outside_domain():
    with pytest.raises(DomainError):
        sample_pairs(get_system("quad1d"), ([-1.0], [1.0]), 10, 0.1, seed=0)


def test_sample_pairs_discards_blowups():
    p = sample_pairs(get_system("quad1d"), ([0.5], [3.0]), 50, 1.0, seed=0)
    assert p.discarded > 0 and len(p) + p.discarded == 50
