"""Smooth maximum, the convex approximation ``psi`` of ``m`` and the ``phi_y`` family.

``theta_delta`` is ``|.|`` convolved with a polynomial bump
``K(w) = c_p (1 - w^2)^p`` supported on ``[-delta, delta]``. On that
interval it is an even polynomial; outside it is exactly ``|t|``. With
``p = 2`` the result is C^3.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.polynomial import Polynomial

from .conditions import FeasibilityReport, k_of
from .errors import Infeasible
from .jets import JetSet


def _exact_coeffs(order: int):
    """Rational coefficients of ``Theta`` on ``[0, 1]`` for kernel ``(1 - w^2)^p``.

    ``Theta'' = 2K``, ``Theta'(0) = 0`` and ``Theta(1) = 1``; the result is even.
    """
    from math import comb

    k = [Fraction(0)] * (2 * order + 1)
    for j in range(order + 1):
        k[2 * j] = Fraction(comb(order, j) * (-1) ** j)
    mass = 2 * sum(c / (i + 1) for i, c in enumerate(k))
    k = [c / mass for c in k]
    # integrate 2K twice from 0 (Theta'(0) = 0 by symmetry)
    d1 = [Fraction(0)] + [2 * c / (i + 1) for i, c in enumerate(k)]
    th = [Fraction(0)] + [c / (i + 1) for i, c in enumerate(d1)]
    th[0] = 1 - sum(th)
    return th


@lru_cache(maxsize=8)
def _profile(order: int):
    """Polynomials for ``Theta, Theta', Theta''`` in ``|u|`` on ``[0, 1]`` (``delta = 1``)."""
    th = Polynomial([float(c) for c in _exact_coeffs(order)])
    d1 = th.deriv()
    return th, d1, d1.deriv()


@dataclass(frozen=True)
class ThetaDelta:
    """Even convex smoothing of ``|t|`` that is exact for ``|t| >= delta``.

    Parameters
    ----------
    delta : float
        Half-width of the smoothing window, must be positive.
    order : int
        Kernel exponent ``p``; the function is ``C^{p+1}``.
    """

    delta: float
    order: int = 2

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.order not in (1, 2, 3):
            raise ValueError("order must be 1, 2 or 3")

    def __call__(self, t):
        return theta_eval(self, t)

    def derivative(self, t, nu: int = 1):
        return theta_eval(self, t, nu)

    @property
    def at_zero(self) -> float:
        return float(self.delta * _profile(self.order)[0](0.0))


def theta_eval(td: ThetaDelta, t, nu: int = 0):
    """Evaluate ``theta_delta`` or its ``nu``-th derivative (``nu <= 2``)."""
    t = np.asarray(t, dtype=float)
    u = t / td.delta
    inside = np.abs(u) < 1.0
    poly = _profile(td.order)[nu]
    ua = np.minimum(np.abs(u), 1.0)
    if nu == 0:
        return np.where(inside, td.delta * poly(ua), np.abs(t))
    if nu == 1:
        return np.where(inside, np.sign(u) * poly(ua), np.sign(t))
    return np.where(inside, poly(ua) / td.delta, 0.0)


def smooth_max(td: ThetaDelta, a, b):
    """``M_delta(a, b) = (a + b + theta_delta(a - b)) / 2``."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    # outside the window the formula is max(a, b); return it without rounding
    return np.where(np.abs(a - b) >= td.delta, np.maximum(a, b),
                    0.5 * (a + b + theta_eval(td, a - b)))


def smooth_max_grad(td: ThetaDelta, a, b):
    """Partial derivatives ``(dM/da, dM/db)``."""
    s = theta_eval(td, np.asarray(a, float) - np.asarray(b, float), 1)
    return 0.5 * (1.0 + s), 0.5 * (1.0 - s)


def _smooth_max_full(td, fa, ga, Ha, fb, gb, Hb):
    """Value, gradient and Hessian of ``M_delta(f, g)`` from those of ``f, g``."""
    r = fa - fb
    s1 = theta_eval(td, r, 1)
    s2 = theta_eval(td, r, 2)
    val = smooth_max(td, fa, fb)
    wa, wb = 0.5 * (1 + s1), 0.5 * (1 - s1)
    grad = wa[:, None] * ga + wb[:, None] * gb
    dg = ga - gb
    hess = (wa[:, None, None] * Ha + wb[:, None, None] * Hb
            + 0.5 * s2[:, None, None] * dg[:, :, None] * dg[:, None, :])
    return val, grad, hess


@dataclass(frozen=True)
class PsiApprox:
    """Smooth convex ``psi`` with ``m <= psi <= m + 1/2`` for a finite max of affines.

    ``psi`` is the left fold of ``M_delta`` over the affine pieces sorted
    lexicographically by ``(slope, intercept)``, with ``delta = 1/N``.
    """

    slopes: np.ndarray
    intercepts: np.ndarray
    delta_used: float
    order: int = 2

    @property
    def theta(self) -> ThetaDelta:
        return ThetaDelta(self.delta_used, self.order)

    def m(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        return np.max(x @ self.slopes.T + self.intercepts, axis=1)

    def evaluate(self, x, hessian: bool = False):
        """Value, gradient and optionally Hessian of ``psi`` at rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, float))
        B, n = x.shape
        td = self.theta
        aff = x @ self.slopes.T + self.intercepts
        zero_h = np.zeros((B, n, n))
        f = aff[:, 0]
        g = np.broadcast_to(self.slopes[0], (B, n)).copy()
        H = zero_h.copy()
        for i in range(1, len(self.intercepts)):
            gi = np.broadcast_to(self.slopes[i], (B, n))
            if hessian:
                f, g, H = _smooth_max_full(td, f, g, H, aff[:, i], gi, zero_h)
            else:
                wa, wb = smooth_max_grad(td, f, aff[:, i])
                f = smooth_max(td, f, aff[:, i])
                g = wa[:, None] * g + wb[:, None] * gi
        return (f, g, H) if hessian else (f, g)

    def __call__(self, x):
        return self.evaluate(x)[0]


def psi_build(source, order: int = 2) -> PsiApprox:
    """Build ``psi`` from a jet set or from ``(slopes, intercepts)``.

    Parameters
    ----------
    source : JetSet or tuple of arrays
        Affine pieces ``t_y + <xi_y, x - y>`` or explicit ``(slopes, intercepts)``.
    order : int
        Kernel exponent passed to :class:`ThetaDelta`.
    """
    if isinstance(source, JetSet):
        slopes = source.gradients
        intercepts = source.values - np.einsum("yi,yi->y", slopes, source.points)
    else:
        slopes, intercepts = source
        slopes = np.atleast_2d(np.asarray(slopes, float))
        intercepts = np.asarray(intercepts, float).reshape(-1)
    if len(intercepts) == 0:
        raise ValueError("psi_build needs at least one affine piece")
    keys = np.column_stack([slopes, intercepts])
    idx = np.lexsort(keys.T[::-1])
    slopes, intercepts = slopes[idx], intercepts[idx]
    N = len(intercepts)
    return PsiApprox(slopes.copy(), intercepts.copy(), 1.0 / N, order)


@dataclass(frozen=True)
class PhiFamily:
    """The functions ``phi_y`` attached to each jet.

    ``phi_y(x) = A |x - y|^2`` on ``B(0, 3k(y))`` and
    ``M_{1/8}(A |x - y|^2, psi(x) - t_y - <xi_y, x - y>)`` outside,
    with ``A = A_{k(y)}``.
    """

    points: np.ndarray
    values: np.ndarray
    gradients: np.ndarray
    ks: np.ndarray
    A: np.ndarray
    psi: PsiApprox
    switch: ThetaDelta = field(default_factory=lambda: ThetaDelta(1.0 / 8.0))

    def __len__(self) -> int:
        return len(self.values)

    def evaluate(self, i: int, x, hessian: bool = False):
        """Value, gradient (and Hessian) of ``phi_i`` at rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, float))
        B, n = x.shape
        y = self.points[i]
        A = self.A[i]
        r = x - y
        qv = A * np.einsum("bi,bi->b", r, r)
        qg = 2.0 * A * r
        qH = np.broadcast_to(2.0 * A * np.eye(n), (B, n, n)).copy()
        far = np.linalg.norm(x, axis=1) > 3.0 * self.ks[i]
        val, grad, H = qv.copy(), qg.copy(), qH
        if np.any(far):
            xf = x[far]
            if hessian:
                pv, pg, pH = self.psi.evaluate(xf, hessian=True)
            else:
                pv, pg = self.psi.evaluate(xf)
                pH = np.zeros((len(xf), n, n))
            bv = pv - self.values[i] - (xf - y) @ self.gradients[i]
            bg = pg - self.gradients[i]
            v2, g2, H2 = _smooth_max_full(self.switch, qv[far], qg[far], qH[far], bv, bg, pH)
            val[far], grad[far], H[far] = v2, g2, H2
        return (val, grad, H) if hessian else (val, grad)

    def quadratic_agrees(self, i: int, x) -> np.ndarray:
        """True where ``phi_i`` equals its quadratic branch exactly."""
        x = np.atleast_2d(np.asarray(x, float))
        y = self.points[i]
        near = np.linalg.norm(x, axis=1) <= 3.0 * self.ks[i]
        r = x - y
        qv = self.A[i] * np.einsum("bi,bi->b", r, r)
        bv = self.psi(x) - self.values[i] - r @ self.gradients[i]
        return near | (qv - bv >= self.switch.delta)


def monotone_a(report: FeasibilityReport) -> np.ndarray:
    a = np.array([v for _, v in report.a_sequence], float)
    if not np.all(np.isfinite(a)):
        raise Infeasible("feasibility report has infinite A_k", report.infeasibility_witness)
    return np.maximum.accumulate(a)


def phi_build(js: JetSet, report: FeasibilityReport, psi: Optional[PsiApprox] = None) -> PhiFamily:
    """Assemble the ``phi_y`` family from a feasibility report.

    Raises
    ------
    Infeasible
        If any ``A_k`` is infinite.
    """
    a = monotone_a(report)
    psi = psi if psi is not None else psi_build(js)
    radii = np.linalg.norm(js.points, axis=1)
    ks = np.array([k_of(r) for r in radii], int)
    if ks.max() > len(a):
        raise ValueError(f"report has k_max={len(a)} but a jet needs k={ks.max()}")
    return PhiFamily(js.points, js.values, js.gradients, ks, a[ks - 1], psi)
