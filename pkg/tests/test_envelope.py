import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cvxjet.envelope import (CaratheodoryOracle, EnvelopeEvaluator, GFunction, OracleBudget,
                             PieceFunction, QuadraticBlock, RadialBlock, biconj_eval,
                             caratheodory_oracle, conjugate_eval, g_eval,
                             second_difference_ratio)
from cvxjet.fixtures import abs_closed_form
from cvxjet.jets import Modulus


def lower_hull_1d(x, y):
    """Lower convex hull of sampled points by the monotone chain, then interpolation."""
    hull = []
    for p in zip(x, y):
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            if (x2 - x1) * (p[1] - y1) - (y2 - y1) * (p[0] - x1) <= 0:
                hull.pop()
            else:
                break
        hull.append(p)
    h = np.array(hull)
    return lambda q: np.interp(q, h[:, 0], h[:, 1])


def abs_g():
    return GFunction([QuadraticBlock([[-1.0], [1.0]], [1.0, 1.0], [[-1.0], [1.0]], 1.0)])


def test_abs_envelope_closed_form():
    ev = EnvelopeEvaluator(abs_g())
    x = np.linspace(-3, 3, 121)[:, None]
    r = ev.evaluate(x)
    np.testing.assert_allclose(r.values, abs_closed_form(x[:, 0]), atol=1e-10)
    np.testing.assert_allclose(r.gradients[:, 0], x[:, 0], atol=1e-7)
    assert not any(r.flags)


@given(st.integers(0, 10_000))
def test_envelope_vs_hull_oracle_1d(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(2, 6))
    y = np.sort(rng.uniform(-3, 3, m))
    g = GFunction([QuadraticBlock(y[:, None], rng.normal(size=m), rng.normal(size=(m, 1)),
                                  rng.uniform(0.5, 4.0, m))])
    grid = np.linspace(-12, 12, 200001)
    hull = lower_hull_1d(grid, g_eval(g, grid[:, None])[0])
    q = rng.uniform(-4, 4, 40)
    F = EnvelopeEvaluator(g).value(q[:, None])
    np.testing.assert_allclose(F, hull(q), atol=1e-6 * (1 + np.abs(F).max()))


def test_envelope_below_g_and_convex(rng):
    g = GFunction([QuadraticBlock(rng.uniform(-2, 2, (6, 2)), rng.normal(size=6),
                                  rng.normal(size=(6, 2)), rng.uniform(1, 3, 6))])
    ev = EnvelopeEvaluator(g)
    x = rng.uniform(-3, 3, (300, 2))
    assert np.all(ev.value(x) <= g_eval(g, x)[0] + 1e-10)
    assert second_difference_ratio(ev.value, np.zeros(2), 4.0, 500) >= -1e-8


def test_weights_reproduce_point(rng):
    g = GFunction([QuadraticBlock(rng.uniform(-2, 2, (5, 2)), rng.normal(size=5),
                                  rng.normal(size=(5, 2)), 2.0)])
    x = rng.uniform(-2, 2, (50, 2))
    r = EnvelopeEvaluator(g).evaluate(x)
    np.testing.assert_allclose(r.weights.sum(axis=1), 1.0)
    recon = np.einsum("bn,bni->bi", r.weights, r.touching)
    np.testing.assert_allclose(recon, x, atol=1e-6)


def test_conjugate_quadratic_closed_form():
    g = abs_g()
    v = np.array([[0.0], [0.5], [2.0]])
    vals, approx = conjugate_eval(g, v)
    # max over pieces of <v, y> - t + |v - xi|^2 / 2
    expect = np.max([[-vv - 1 + 0.5 * (vv + 1) ** 2, vv - 1 + 0.5 * (vv - 1) ** 2]
                     for vv in v[:, 0]], axis=1)
    np.testing.assert_allclose(vals, expect)
    assert not approx


def test_radial_block_conjugate_vs_grid():
    blk = RadialBlock([[0.0]], [0.0], [[0.0]], 1.0, 1.0, Modulus.power(0.5))
    g = GFunction([blk])
    x = np.linspace(-20, 20, 400001)[:, None]
    px = g.piece_values(x)[:, 0]
    for v in (0.3, 1.7, -2.5):
        grid_sup = float(np.max(v * x[:, 0] - px))
        assert float(conjugate_eval(g, [[v]])[0][0]) == pytest.approx(grid_sup, rel=1e-6, abs=1e-8)


def test_biconj_eval_single_point():
    F, grad, v = biconj_eval(EnvelopeEvaluator(abs_g()), np.array([0.3]))
    assert F == pytest.approx(0.5 * 0.09 + 0.5)
    assert grad[0] == pytest.approx(0.3, abs=1e-7)


def test_oracle_upper_bounds_envelope():
    g = abs_g()
    ev = EnvelopeEvaluator(g)
    for x in (-0.5, 0.0, 0.7):
        o = caratheodory_oracle(g, np.array([x]))
        assert o >= ev.value([[x]])[0] - 1e-9
        assert o == pytest.approx(float(abs_closed_form(x)), abs=1e-6)


def test_oracle_outside_box_is_flagged():
    pf = PieceFunction([(lambda x: np.sum(x * x, 1), lambda x: 2 * x)], 1)
    o = CaratheodoryOracle(pf, [-1.0], [1.0], OracleBudget(resolution=101))
    r = o(np.array([5.0]))
    assert r.flagged and np.isinf(r.value)


def test_chunking_consistent(rng):
    g = GFunction([QuadraticBlock(rng.uniform(-2, 2, (4, 1)), rng.normal(size=4),
                                  rng.normal(size=(4, 1)), 1.5)])
    x = rng.uniform(-3, 3, (5000, 1))
    a = EnvelopeEvaluator(g).value(x)
    b = np.concatenate([EnvelopeEvaluator(g).value(x[i:i + 7]) for i in range(0, 5000, 7)])
    np.testing.assert_allclose(a, b, atol=1e-11)


def test_oracle_two_paraboloids_common_tangent():
    # vertices at +-1 with depth 0: the common tangent is the line 0
    g = GFunction([QuadraticBlock([[-1.0], [1.0]], [0.0, 0.0], [[0.0], [0.0]], 2.0)])
    assert caratheodory_oracle(g, np.array([0.0])) == pytest.approx(0.0, abs=1e-5)
    assert EnvelopeEvaluator(g).value([[0.0]])[0] == pytest.approx(0.0, abs=1e-10)


def test_oracle_single_quadratic_is_exact():
    g = GFunction([QuadraticBlock([[0.5, -0.5]], [1.0], [[0.2, 0.1]], 3.0)])
    x = np.array([0.3, 0.4])
    assert caratheodory_oracle(g, x) == pytest.approx(float(g_eval(g, x[None])[0][0]), abs=1e-6)
