import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cvxjet.repro import (Prop31Config, check_inequalities, fixture_jets, h_functions,
                          jet_value, mu_bound_table, phi_coefficient, run, sample_regions)

SMALL = Prop31Config(j_values=(1, 2), grid_n=41, samples_per_region=5, k_max=2, rho_samples=80)


def test_phi_coefficient():
    np.testing.assert_allclose(phi_coefficient([0.1, 0.4, 1.0, -3.0]), [5.0, 1.25, 1.25, 1.25])


def test_jet_values():
    f, g = jet_value(2, np.array([1.0, 1.0, -1.0, 3.0]), np.array([2.0, 4.0, 5.0, 0.5]))
    np.testing.assert_allclose(f, [1.0, 2.0, 4.0, 3.0])
    np.testing.assert_allclose(g, [[1, 0], [0, 2], [0, 2], [1, 0]])


def test_regions_lie_in_E():
    for pts in sample_regions(3, Prop31Config()).values():
        u, v = pts[:, 0], pts[:, 1]
        on_e1 = np.abs(u) >= np.exp(v)
        on_e2 = (np.abs(u) == 1) & (v == np.round(v)) & (v >= 1)
        assert np.all(on_e1 | on_e2)


@given(st.integers(1, 5), st.floats(-3, 1), st.floats(0, 4))
def test_h_vanishes_at_own_point(j, v, extra):
    u = math.exp(v) + extra
    A = float(phi_coefficient(u))
    hs = h_functions(j, u, v, A, np.array(u), np.array(v))
    i = 2
    assert hs[i] == pytest.approx(0.0, abs=1e-12)


def test_inequalities_nonnegative_small():
    mins = check_inequalities(SMALL)
    assert min(mins.values()) >= -1e-9


def test_fixture_base_and_interpolation():
    js = fixture_jets(1, SMALL)
    np.testing.assert_array_equal(js.base.point, [1.0, 1.0])
    assert mu_bound_table(js, 2)[0] == pytest.approx(2.0)


def test_run_small():
    out = run(SMALL)
    assert out["A_at_(1,1)"] == 1.25
    for row in out["table"]:
        assert row["interp_value_err"] < 1e-8
        assert all(m <= lim for m, lim in zip(row["mu_bound"], row["mu_limit"]))
        assert len(row["rho"]) == SMALL.k_max
