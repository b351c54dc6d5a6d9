import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvxjet.envelope import second_difference_ratio
from cvxjet.errors import Infeasible, SpanDeficient, SpanNotContained
from cvxjet.extend import (ExtendOptions, build_model, extend_c11loc, extend_c1omega,
                           extend_nonconvex, extend_quadratic_phi, extend_with_projection,
                           model_from_dict, model_seminorm_bound, mu_upper_bound,
                           reduce_jets, rho_k_estimate)
from cvxjet.fixtures import (abs_closed_form, abs_jets, convex_suite, monotone_violation_1d,
                             projected_instance)
from cvxjet.jets import JetSet, Modulus, Subspace


def fd_gradient(model, x, h=1e-6):
    n = x.shape[1]
    out = np.empty_like(x)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        out[:, i] = (model.value(x + e) - model.value(x - e)) / (2 * h)
    return out


def test_options_validation():
    with pytest.raises(ValueError):
        ExtendOptions(a=0.0)
    with pytest.raises(ValueError):
        ExtendOptions(k_max=0)
    with pytest.raises(ValueError):
        ExtendOptions(inner="bogus")


def test_abs_global_model():
    m = extend_c11loc(abs_jets(), ExtendOptions(inner="global"))
    assert m.global_M == pytest.approx(1.0)
    x = np.linspace(-2, 2, 401)[:, None]
    np.testing.assert_allclose(m.value(x), abs_closed_form(x[:, 0]), atol=1e-10)


@pytest.mark.parametrize("method", ["ak", "phi", "global", "projected", "c1omega"])
def test_interpolation_small_suite(method):
    for inst in convex_suite(4, seed=11):
        js = inst.jets
        m = build_model(js, method)
        r = m.evaluate(js.points)
        np.testing.assert_allclose(r.values, js.values, atol=1e-8 * (1 + np.abs(js.values).max()))
        np.testing.assert_allclose(fd_gradient(m, js.points), js.gradients, atol=1e-4)


def test_convexity_midpoints(rng):
    inst = convex_suite(1, seed=12)[0]
    m = build_model(inst.jets, "ak")
    assert second_difference_ratio(m.value, np.zeros(inst.jets.dim), 6.0, 2000) >= -1e-8


def test_span_deficient():
    js = JetSet.from_arrays([[0.0, 0.0], [1.0, 0.0]], [0.0, 0.5], [[0.0, 0.0], [1.0, 0.0]])
    with pytest.raises(SpanDeficient):
        extend_c11loc(js)
    m = extend_with_projection(js)
    assert m.lift.X.dim == 1
    np.testing.assert_allclose(m.value(js.points), js.values, atol=1e-10)


def test_infeasible_raises_with_witness():
    with pytest.raises(Infeasible) as e:
        extend_c11loc(monotone_violation_1d())
    assert e.value.witness["kind"] in ("value", "tangency")


def test_projection_recovers_subspace_and_slope(rng):
    inst = projected_instance(rng, 2)
    m = extend_with_projection(inst.jets)
    assert m.lift.X.equals(inst.X)
    np.testing.assert_allclose(m.lift.v, inst.v, atol=1e-10)
    x = rng.uniform(-2, 2, (20, 3))
    w = inst.X.Q @ rng.normal(size=3)
    np.testing.assert_allclose(m.value(x + w) - m.value(x), np.full(20, w @ inst.v), atol=1e-9)


def test_projection_rejects_small_X():
    js = convex_suite(1, seed=1)[0].jets
    if js.dim < 2:
        js = projected_instance(np.random.default_rng(0), 2).jets
    X = Subspace.from_vectors(np.eye(js.dim)[:1])
    with pytest.raises(SpanNotContained):
        extend_with_projection(js, X)


def test_reduce_jets_merges_equal_projections():
    js = JetSet.from_arrays([[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]], [0.0, 1.0, 1.5],
                            [[0.0, 1.0], [0.0, 1.0], [2.0, 1.0]])
    X = Subspace.from_vectors([[1.0, 0.0]])
    red = reduce_jets(js, X, [0.0, 1.0])
    assert len(red.jets) == 2
    assert red.index.tolist() == [0, 0, 1]


def test_c1omega_identity_matches_ak_half_weight(rng):
    js = convex_suite(1, seed=21)[0].jets
    m1 = extend_c1omega(js, Modulus.identity(), options=ExtendOptions(a=1.0))
    m2 = build_model(js, "ak", ExtendOptions(a=0.5))
    x = rng.uniform(-3, 3, (100, js.dim))
    np.testing.assert_allclose(m1.value(x), m2.value(x), atol=1e-9)


def test_c1omega_power_modulus_interpolates():
    js = convex_suite(1, seed=22)[0].jets
    m = extend_c1omega(js, Modulus.power(0.5))
    np.testing.assert_allclose(m.value(js.points), js.values, atol=1e-8)


def test_nonconvex_interpolates_concave_data():
    x = np.array([[-1.0], [0.0], [1.5]])
    js = JetSet.from_arrays(x, -x[:, 0] ** 2, -2 * x)
    m = extend_nonconvex(js)
    r = m.evaluate(x)
    np.testing.assert_allclose(r.values, js.values, atol=1e-8)
    np.testing.assert_allclose(fd_gradient(m, x), js.gradients, atol=1e-4)
    assert not m.convex


def test_quadratic_phi_interpolates():
    js = abs_jets()
    m = extend_quadratic_phi(js, [1.0, 1.0])
    np.testing.assert_allclose(m.value(js.points), js.values, atol=1e-12)
    assert "user-phi" in m.flags


def test_manifest_round_trip(rng):
    js = convex_suite(1, seed=31)[0].jets
    m = build_model(js, "ak")
    back = model_from_dict(m.to_dict())
    x = rng.uniform(-2, 2, (30, js.dim))
    np.testing.assert_allclose(back.value(x), m.value(x), atol=1e-12)


@settings(max_examples=10)
@given(st.integers(0, 1000))
def test_rho_below_seminorm_bound(seed):
    inst = convex_suite(1, seed=seed)[0]
    m = build_model(inst.jets, "ak")
    for k in (1, 2):
        assert rho_k_estimate(m, k, samples=150) <= model_seminorm_bound(m, k) + 1e-6


def test_mu_upper_bound_abs():
    # A_1 = 2 so hess phi = 2 A I has norm 4
    assert mu_upper_bound(abs_jets(), 1) == pytest.approx(4.0)
