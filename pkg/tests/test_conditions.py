import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cvxjet.conditions import (Ball, augment, coercivity_witness, global_cw_constant,
                               minimal_extension, pair_constant, semiglobal_constants,
                               whitney_seminorm)
from cvxjet.errors import DuplicatePoint, SpanMismatch
from cvxjet.fixtures import (abs_jets, convex_suite, monotone_violation_1d,
                             monotone_violation_2d)
from cvxjet.jets import Jet, JetSet, Subspace


def brute_pair(z, y, xs):
    """Largest ``2(c + <d,u>)/|u|^2`` over sample points ``xs``."""
    u = xs - y.point
    c = z.value + z.gradient @ (y.point - z.point) - y.value
    d = z.gradient - y.gradient
    uu = np.einsum("bi,bi->b", u, u)
    keep = uu > 1e-14
    return float(np.max(2.0 * (c + u[keep] @ d) / uu[keep]))


def test_abs_global_constant():
    js = abs_jets()
    assert global_cw_constant(js) == pytest.approx(1.0)
    rep = semiglobal_constants(js, k_max=3)
    assert [a for _, a in rep.a_sequence] == [2.0, 2.0, 2.0]
    assert rep.feasible and rep.span_dim == 1


def test_pair_constant_matches_dense_sampling_1d():
    z = Jet([-1.0], 1.0, [-1.0])
    y = Jet([1.0], 1.0, [1.0])
    xs = np.linspace(-30, 30, 600001)[:, None]
    assert pair_constant(z, y) == pytest.approx(brute_pair(z, y, xs), rel=1e-6)


@given(st.integers(0, 10_000))
def test_pair_constant_ball_vs_sampling(seed):
    rng = np.random.default_rng(seed)
    inst = convex_suite(1, seed=seed)[0]
    js = inst.jets
    if js.dim != 2:
        return
    z, y = js.jets[0], js.jets[1]
    R = 4.0
    ang = rng.uniform(0, 2 * np.pi, 4000)
    rad = R * np.sqrt(rng.uniform(0, 1, 4000))
    xs = np.stack([rad * np.cos(ang), rad * np.sin(ang)], 1)
    val = pair_constant(z, y, Ball(R))
    # the sup over samples is a lower bound and the unrestricted value an upper bound
    assert val >= brute_pair(z, y, xs) - 1e-9 * (1 + val)
    assert val <= pair_constant(z, y) * (1 + 1e-12)


def test_pair_constant_infinite_for_positive_c():
    z = Jet([0.0], 1.0, [0.0])
    y = Jet([1.0], 0.0, [0.0])
    assert math.isinf(pair_constant(z, y))


def test_pair_constant_on_subspace_requires_containment():
    z = Jet([0.0, 0.0], 0.0, [0.0, 1.0])
    y = Jet([1.0, 0.0], 0.0, [0.0, 0.0])
    X = Subspace.from_vectors([[1.0, 0.0]])
    assert math.isinf(pair_constant(z, y, subspace=X))


@pytest.mark.parametrize("js", [monotone_violation_1d(), monotone_violation_2d()])
def test_violations_have_witness(js):
    rep = semiglobal_constants(js, k_max=2)
    assert not rep.feasible
    w = rep.infeasibility_witness
    assert w["kind"] in ("value", "tangency")
    assert set(w) >= {"z", "y", "x", "z_point"}


def test_a_sequence_monotone_and_floored():
    for inst in convex_suite(10, seed=7):
        rep = semiglobal_constants(inst.jets)
        a = np.array([v for _, v in rep.a_sequence])
        raw = np.array([v for _, v in rep.a_raw])
        assert np.all(a >= 2.0)
        assert np.all(np.diff(a) >= 0)
        assert np.all(a >= raw)


def test_semiglobal_bounded_by_global():
    for inst in convex_suite(10, seed=8):
        rep = semiglobal_constants(inst.jets)
        assert max(v for _, v in rep.a_raw) <= rep.global_constant * (1 + 1e-9)


def test_whitney_seminorm_k0():
    js = abs_jets()
    assert whitney_seminorm(js, 0) == pytest.approx(2.0)


@given(st.lists(st.floats(-3, 3), min_size=1, max_size=5))
def test_minimal_extension_interpolates_convex_data(xs):
    js = abs_jets()
    m = minimal_extension(js, np.array(xs)[:, None])
    # max of the two tangent lines of |x| at +-1 is |x|
    np.testing.assert_allclose(m, np.abs(xs), atol=1e-12)


def test_coercivity_witness_for_abs():
    w = coercivity_witness(abs_jets())
    assert w is not None and w.delta >= 0.5


def test_no_coercivity_for_affine():
    js = JetSet.from_arrays([[0.0], [1.0]], [0.0, 1.0], [[1.0], [1.0]])
    assert coercivity_witness(js) is None


def test_augment_checks():
    js = JetSet.from_arrays([[0.0, 0.0], [1.0, 0.0]], [0.0, 0.5], [[0.0, 0.0], [1.0, 0.0]])
    X = Subspace.full(2)
    with pytest.raises(SpanMismatch):
        augment(js, [], X)
    out = augment(js, [Jet([0.0, 3.0], 4.5, [0.0, 3.0])], X)
    assert out.auxiliary_mask.tolist() == [False, False, True]
    with pytest.raises(DuplicatePoint):
        augment(js, [Jet([0.0, 0.0], 0.0, [0.0, 1.0])], X)
