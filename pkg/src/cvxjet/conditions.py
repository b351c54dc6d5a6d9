"""Feasibility constants and certificates for convex jet extension.

The central quantity is the pair constant: the least ``A >= 0`` with

    t_z + <xi_z, x - z>  <=  t_y + <xi_y, x - y> + (A/2) |x - y|^2

for all ``x`` in a ball (or everywhere). Writing ``c = t_z + <xi_z, y - z> - t_y``
and ``d = xi_z - xi_y`` the constraint on ``u = x - y`` reads
``c + <d, u> <= (A/2)|u|^2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, DuplicatePoint, SpanMismatch
from .jets import (Jet, JetSet, Subspace, concat,
                   span_of_gradient_differences, validate)

GOLDEN_TOL = 1e-10
SWEEP_POINTS = 2048
# floating-point slack used to decide c = 0 and d = 0
REL_ZERO = 1e-12


@dataclass(frozen=True)
class Ball:
    """Closed ball ``B(center, radius)``; ``center=None`` means the origin."""

    radius: float
    center: Optional[np.ndarray] = None


def _pair_terms(z: Jet, y: Jet):
    if z.dim != y.dim:
        raise DimensionMismatch("pair_constant needs jets of equal dimension")
    c = z.value + float(z.gradient @ (y.point - z.point)) - y.value
    d = z.gradient - y.gradient
    c_scale = 1.0 + abs(z.value) + abs(y.value) + float(
        np.linalg.norm(z.gradient) * np.linalg.norm(y.point - z.point))
    d_scale = 1.0 + float(np.linalg.norm(z.gradient) + np.linalg.norm(y.gradient))
    return c, d, REL_ZERO * c_scale, REL_ZERO * d_scale


def _ratio(c, d, u):
    """``2(c + <d,u>)/|u|^2`` for rows of ``u``."""
    uu = np.einsum("...i,...i->...", u, u)
    num = 2.0 * (c + u @ d)
    with np.errstate(divide="ignore", invalid="ignore"):
        r = num / uu
    return np.where(uu > 0, r, np.where(num > 0, np.inf, -np.inf))


def _golden_max(f, a, b, tol=GOLDEN_TOL):
    gr = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = b - gr * (b - a)
    x2 = a + gr * (b - a)
    f1, f2 = f(x1), f(x2)
    while b - a > tol:
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - gr * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + gr * (b - a)
            f2 = f(x2)
    xm = 0.5 * (a + b)
    return xm, f(xm)


def _sphere_sup(c, d, y, center, radius):
    """Sup of the ratio over ``|x - center| = radius`` with ``u = x - y``.

    The objective depends on ``x`` only through ``<d, x>`` and ``<y, x>``,
    so the maximiser lies in the plane spanned by ``d`` and ``y - center``.
    """
    n = y.shape[0]
    yc = y - center
    if n == 1:
        xs = center + np.array([[radius], [-radius]])
        return float(np.max(_ratio(c, d, xs - y)))
    basis = []
    for w in (d, yc, *np.eye(n)):
        w = np.asarray(w, float).copy()
        for b in basis:
            w -= (w @ b) * b
        nw = np.linalg.norm(w)
        if nw > 1e-12 * (1.0 + np.linalg.norm(d) + np.linalg.norm(yc)):
            basis.append(w / nw)
        if len(basis) == 2:
            break
    e1, e2 = basis

    def f(phi):
        x = center + radius * (np.cos(phi) * e1 + np.sin(phi) * e2)
        return float(_ratio(c, d, (x - y)[None, :])[0])

    phis = np.linspace(-np.pi, np.pi, SWEEP_POINTS, endpoint=False)
    xs = center + radius * (np.cos(phis)[:, None] * e1 + np.sin(phis)[:, None] * e2)
    vals = _ratio(c, d, xs - y)
    i = int(np.argmax(vals))
    if not np.isfinite(vals[i]):
        return float(vals[i])
    h = 2.0 * np.pi / SWEEP_POINTS
    _, fbest = _golden_max(f, phis[i] - h, phis[i] + h)
    return max(float(vals[i]), fbest)


def _pair_value(c, d, c_tol, d_tol, y, ball: Optional[Ball]):
    """Core of :func:`pair_constant` in whatever coordinates are given."""
    dn = float(np.linalg.norm(d))
    y_in = True
    center = np.zeros_like(y)
    if ball is not None:
        if ball.center is not None:
            center = np.asarray(ball.center, float)
        y_in = float(np.linalg.norm(y - center)) <= ball.radius * (1 + 1e-12)
    if y_in:
        if dn <= d_tol:
            return 0.0 if c <= c_tol else math.inf
        if c > -c_tol:
            return math.inf
        unrestricted = dn * dn / (2.0 * abs(c))
        if ball is None:
            return unrestricted
        ustar = (2.0 * abs(c) / dn) * (d / dn)
        if np.linalg.norm(y + ustar - center) <= ball.radius:
            return unrestricted
    elif dn <= d_tol and c <= c_tol:
        return 0.0
    return max(0.0, _sphere_sup(c, d, y, center, ball.radius))


def pair_constant(z: Jet, y: Jet, ball: Optional[Ball] = None,
                  subspace: Optional[Subspace] = None) -> float:
    """Least ``A >= 0`` making the tangent plane at ``z`` lie below the paraboloid at ``y``.

    Parameters
    ----------
    z, y : Jet
    ball : Ball, optional
        Restrict ``x`` to this ball (in projected coordinates when a
        subspace is given, i.e. ``x`` ranges over ``P^{-1}(ball)``).
    subspace : Subspace, optional
        Replace ``|x - y|`` by ``|P(x - y)|``.

    Returns
    -------
    float
        ``math.inf`` when no constant works.
    """
    c, d, c_tol, d_tol = _pair_terms(z, y)
    if subspace is None:
        return _pair_value(c, d, c_tol, d_tol, y.point, ball)
    B = subspace.basis
    if np.linalg.norm(d - B @ (B.T @ d)) > d_tol:
        return math.inf
    yb = y.point @ B
    if B.shape[1] == 0:
        return 0.0 if c <= c_tol else math.inf
    return _pair_value(c, d @ B, c_tol, d_tol, yb, ball)


def _unrestricted_matrix(js: JetSet):
    """Closed-form pair constants for all ordered pairs (vectorised)."""
    X, t, G = js.points, js.values, js.gradients
    diff = X[None, :, :] - X[:, None, :]           # y - z  indexed [z, y]
    C = t[:, None] + np.einsum("zi,zyi->zy", G, diff) - t[None, :]
    D = G[:, None, :] - G[None, :, :]
    dn = np.linalg.norm(D, axis=-1)
    gn = np.linalg.norm(G, axis=1)
    c_tol = REL_ZERO * (1 + np.abs(t)[:, None] + np.abs(t)[None, :]
                        + gn[:, None] * np.linalg.norm(diff, axis=-1))
    d_tol = REL_ZERO * (1 + gn[:, None] + gn[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        val = dn * dn / (2.0 * np.abs(C))
    out = np.where(dn <= d_tol, np.where(C <= c_tol, 0.0, np.inf),
                   np.where(C > -c_tol, np.inf, val))
    np.fill_diagonal(out, 0.0)
    return out, C, D


def global_cw_constant(js: JetSet) -> float:
    """Least global constant over all ordered pairs (``inf`` if none)."""
    if len(js) < 2:
        return 0.0
    out, _, _ = _unrestricted_matrix(js)
    return float(np.max(out))


@dataclass
class FeasibilityReport:
    """Outcome of the feasibility checks.

    Attributes
    ----------
    global_constant : float
        Least ``M`` for the global tangent/paraboloid inequality.
    a_sequence : list of (int, float)
        Monotone envelope of ``A_k``, each at least 2.
    a_raw : list of (int, float)
        Pairwise suprema before flooring and monotone envelope.
    span_dim : int
    infeasibility_witness : dict or None
    """

    global_constant: float
    a_sequence: list
    a_raw: list
    span_dim: int
    infeasibility_witness: Optional[dict] = None
    coercivity: Optional["CoercivityWitness"] = None
    notes: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.infeasibility_witness is None and all(
            math.isfinite(a) for _, a in self.a_sequence)

    @property
    def k_max(self) -> int:
        return self.a_sequence[-1][0] if self.a_sequence else 0

    def A(self, k: int) -> float:
        """``A_k`` from the monotone sequence."""
        if k < 1 or k > self.k_max:
            raise IndexError(f"A_{k} not computed (k_max={self.k_max})")
        return self.a_sequence[k - 1][1]

    def to_dict(self) -> dict:
        def num(v):
            return v if math.isfinite(v) else "inf"

        d = {"global_M": num(self.global_constant),
             "A": [[k, num(a)] for k, a in self.a_sequence],
             "span_dim": self.span_dim,
             "witness": self.infeasibility_witness}
        if self.coercivity is not None:
            d["coercivity"] = self.coercivity.to_dict()
        if self.notes:
            d["notes"] = list(self.notes)
        return d


def default_k_max(js: JetSet, X: Optional[Subspace] = None) -> int:
    pts = js.points if X is None else js.points @ X.basis
    r = float(np.max(np.linalg.norm(pts, axis=1))) if pts.size else 0.0
    return int(math.ceil(r)) + 1


def k_of(r: float) -> int:
    """First positive integer ``k`` with ``r <= k``."""
    return max(1, int(math.ceil(r - 1e-12)))


def _witness(js: JetSet, zi: int, yi: int, kind: str) -> dict:
    return {"z": zi, "y": yi, "x": js.jets[yi].point.tolist(),
            "z_point": js.jets[zi].point.tolist(), "kind": kind}


def semiglobal_constants(js: JetSet, X: Optional[Subspace] = None,
                         k_max: Optional[int] = None) -> FeasibilityReport:
    """Semi-global constants ``A_1 .. A_kmax`` with ``x`` restricted to ``B(0, 4k)``.

    Parameters
    ----------
    js : JetSet
        All jets, auxiliary ones included.
    X : Subspace, optional
        Projection subspace, ambient space by default.
    k_max : int, optional
        Defaults to ``ceil(max |P y|) + 1``.
    """
    n = js.dim
    if X is None:
        X = Subspace.full(n)
    if k_max is None:
        k_max = default_k_max(js, X)
    if k_max < 1:
        raise ValueError("k_max must be at least 1")
    N = len(js)
    B = X.basis
    radii = np.linalg.norm(js.points @ B, axis=1)
    glob = global_cw_constant(js)
    raw = np.zeros(k_max)
    witness = None
    full = X.dim == n
    unres = None
    if full and N > 1:
        unres, Cm, Dm = _unrestricted_matrix(js)
    for yi in range(N):
        kmin = k_of(radii[yi])
        if kmin > k_max:
            continue
        y = js.jets[yi]
        for zi in range(N):
            if zi == yi:
                continue
            z = js.jets[zi]
            if unres is not None and unres[zi, yi] == 0.0:
                continue
            prev = None
            for k in range(kmin, k_max + 1):
                # once the unrestricted maximiser lies inside the ball the value is final
                if prev is not None and unres is not None and prev == unres[zi, yi]:
                    val = prev
                else:
                    val = pair_constant(z, y, Ball(4.0 * k), None if full else X)
                prev = val
                if val > raw[k - 1]:
                    raw[k - 1] = val
                if math.isinf(val) and witness is None:
                    c, d, c_tol, _ = _pair_terms(z, y)
                    witness = _witness(js, zi, yi, "value" if c > c_tol else "tangency")
    floored = np.maximum(raw, 2.0)
    mono = np.maximum.accumulate(floored)
    ks = range(1, k_max + 1)
    return FeasibilityReport(
        global_constant=glob,
        a_sequence=[(k, float(a)) for k, a in zip(ks, mono)],
        a_raw=[(k, float(a)) for k, a in zip(ks, raw)],
        span_dim=span_of_gradient_differences(js).dim,
        infeasibility_witness=witness)


def whitney_seminorm(js: JetSet, k: int, center=None) -> float:
    """Whitney-type seminorm of the jet on ``E`` intersected with ``B(x0, k)``.

    For ``k = 0`` this is ``|f(x0)| + |G(x0)|``.
    """
    base = js.base
    if k == 0:
        return abs(base.value) + float(np.linalg.norm(base.gradient))
    x0 = base.point if center is None else np.asarray(center, float)
    X, t, G = js.points, js.values, js.gradients
    keep = np.linalg.norm(X - x0, axis=1) <= k + 1e-12
    X, t, G = X[keep], t[keep], G[keep]
    if len(t) < 2:
        return 0.0
    diff = X[:, None, :] - X[None, :, :]      # x - y indexed [x, y]
    dist2 = np.einsum("xyi,xyi->xy", diff, diff)
    taylor = t[:, None] - t[None, :] - np.einsum("yi,xyi->xy", G, diff)
    gdiff = np.linalg.norm(G[:, None, :] - G[None, :, :], axis=-1)
    off = ~np.eye(len(t), dtype=bool)
    r1 = 2.0 * np.abs(taylor[off]) / dist2[off]
    r2 = gdiff[off] / np.sqrt(dist2[off])
    return float(max(r1.max(), r2.max()))


def minimal_extension(js: JetSet, x) -> np.ndarray:
    """``m(x) = max_y t_y + <xi_y, x - y>`` for rows of ``x``."""
    x = np.atleast_2d(np.asarray(x, float))
    aff = js.values - np.einsum("yi,yi->y", js.gradients, js.points)
    return np.max(x @ js.gradients.T + aff, axis=1)


@dataclass(frozen=True)
class CoercivityWitness:
    """Certificate ``m(x) - m(x0) - <v, x - x0> >= delta |x - x0| - 1/delta`` on a grid."""

    v: np.ndarray
    delta: float
    base: np.ndarray
    grid_radius: float

    def to_dict(self) -> dict:
        return {"v": np.asarray(self.v).tolist(), "delta": self.delta,
                "base": np.asarray(self.base).tolist(),
                "grid_radius": self.grid_radius, "certified_on": "grid"}


@dataclass(frozen=True)
class CoercivityGrid:
    """Sampling used to certify coercivity.

    Points lie on ``n_dirs`` directions around the base at radii from a
    geometric ladder up to ``max(radius, 4/delta**2)`` so that a failure of
    the linear lower bound is visible for every tested ``delta``.
    """

    radius: float = 10.0
    n_dirs: int = 64
    n_radii: int = 40
    seed: int = 0

    def directions(self, n: int) -> np.ndarray:
        if n == 1:
            return np.array([[1.0], [-1.0]])
        if n == 2:
            a = np.linspace(0, 2 * np.pi, self.n_dirs, endpoint=False)
            return np.stack([np.cos(a), np.sin(a)], axis=1)
        rng = np.random.default_rng(self.seed)
        w = rng.standard_normal((self.n_dirs * (n - 1), n))
        w = np.vstack([w, np.eye(n), -np.eye(n)])
        return w / np.linalg.norm(w, axis=1, keepdims=True)

    def points(self, base, delta: float) -> np.ndarray:
        n = base.shape[0]
        rmax = max(self.radius, 4.0 / delta ** 2)
        radii = np.concatenate([np.linspace(0, self.radius, self.n_radii),
                                np.geomspace(max(self.radius, 1e-3), rmax, self.n_radii)])
        dirs = self.directions(n)
        return base + (radii[:, None, None] * dirs[None, :, :]).reshape(-1, n)


DELTA_LADDER = tuple(2.0 ** -i for i in range(21))


def _passes(js, v, delta, base, m0, grid) -> float:
    x = grid.points(base, delta)
    r = np.linalg.norm(x - base, axis=1)
    lhs = minimal_extension(js, x) - m0 - (x - base) @ v
    return float(np.min(lhs - delta * r + 1.0 / delta))


def _best_delta(js, v, base, m0, grid):
    for i, dlt in enumerate(DELTA_LADDER):
        slack = _passes(js, v, dlt, base, m0, grid)
        if slack >= -1e-8:
            return i, slack
    return len(DELTA_LADDER), -math.inf


def coercivity_witness(js: JetSet, grid: Optional[CoercivityGrid] = None,
                       base=None, max_sweeps: int = 30) -> Optional[CoercivityWitness]:
    """Search a slope ``v`` and the largest ladder ``delta`` certifying coercivity.

    Parameters
    ----------
    js : JetSet
    grid : CoercivityGrid, optional
    base : array_like, optional
        Base point; defaults to the jet set's base point. The value
        ``m(base)`` stands in for ``f(base)``.

    Returns
    -------
    CoercivityWitness or None
        None when no ``delta >= 2**-20`` passes.
    """
    grid = grid or CoercivityGrid()
    base = js.base.point if base is None else np.asarray(base, float)
    m0 = float(minimal_extension(js, base)[0])
    G = js.gradients
    lo, hi = G.min(axis=0), G.max(axis=0)
    v = G.mean(axis=0)
    best = _best_delta(js, v, base, m0, grid)
    step = 0.5 * float(np.max(hi - lo)) if len(G) > 1 else 0.0
    for _ in range(max_sweeps):
        if step < 1e-6:
            break
        improved = False
        for i in range(js.dim):
            for s in (1.0, -1.0):
                w = v.copy()
                w[i] = np.clip(w[i] + s * step, lo[i], hi[i])
                cand = _best_delta(js, w, base, m0, grid)
                if (cand[0], -cand[1]) < (best[0], -best[1]):
                    v, best, improved = w, cand, True
        if not improved:
            step *= 0.5
    if best[0] >= len(DELTA_LADDER):
        return None
    return CoercivityWitness(v, DELTA_LADDER[best[0]], base, grid.radius)


def augment(js: JetSet, aux: Sequence[Jet], X: Subspace) -> JetSet:
    """Add auxiliary jets and check that gradient differences span ``X``.

    Raises
    ------
    DuplicatePoint
        An auxiliary point coincides with an existing point.
    SpanMismatch
        The augmented span differs from ``X``.
    """
    aux = [Jet(a.point, a.value, a.gradient, True) for a in aux]
    out = concat(js, aux)
    rep = validate(out)
    if rep.duplicates:
        raise DuplicatePoint(f"auxiliary point duplicates an existing point: {rep.duplicates}")
    Y = span_of_gradient_differences(out)
    if not Y.equals(X):
        raise SpanMismatch(f"augmented span has dimension {Y.dim}, expected {X.dim}")
    return out


def decompose_min_ext(js: JetSet) -> tuple[Subspace, np.ndarray]:
    """Subspace of gradient differences and slope ``v = Q_X(xi_base)``."""
    X = span_of_gradient_differences(js)
    v = X.Q @ js.base.gradient
    return X, v
