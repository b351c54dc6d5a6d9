"""Convex envelope ``F = conv(g)`` of a finite minimum of convex pieces.

``g(x) = min_i p_i(x)`` where every piece ``p_i`` is convex and coercive.
Then ``g*(v) = max_i p_i*(v)`` and

    F(x) = sup_v  <x, v> - max_i p_i*(v),

a strongly concave maximisation whose maximiser is ``grad F(x)``. It is
solved in epigraph form

    min_{v, s}  s - <x, v>   subject to   p_i*(v) <= s,

by a primal-dual interior point method vectorised over query points. The
multipliers are the Caratheodory weights of ``x`` and ``grad p_i*(v)`` are
the touching points.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import linprog
from scipy.spatial import ConvexHull, QhullError

from .jets import JetSet, Modulus
from .smoothing import PhiFamily

FLAG_APPROX = "approximate"
FLAG_NONCONV = "nonconvergence"
FLAG_FALLBACK = "generic-conjugate"


# ----------------------------------------------------------------------------
# pieces


class QuadraticBlock:
    """Tilted paraboloids ``t + <xi, x - y> + (M/2)|x - y|^2``."""

    exact_conjugate = True

    def __init__(self, y, t, xi, M):
        self.y = np.atleast_2d(np.asarray(y, float))
        self.t = np.asarray(t, float).reshape(-1)
        self.xi = np.asarray(xi, float).reshape(self.y.shape)
        self.M = np.broadcast_to(np.asarray(M, float), self.t.shape).copy()
        if np.any(self.M <= 0):
            raise ValueError("curvatures must be positive")

    def __len__(self):
        return len(self.t)

    @property
    def dim(self):
        return self.y.shape[1]

    def values(self, x):
        r = x[:, None, :] - self.y[None]
        return (self.t + np.einsum("bni,ni->bn", r, self.xi)
                + 0.5 * self.M * np.einsum("bni,bni->bn", r, r))

    def grads(self, x):
        r = x[:, None, :] - self.y[None]
        return self.xi[None] + self.M[None, :, None] * r

    def conj(self, v):
        """Closed form ``<v, y> - t + |v - xi|^2 / (2M)`` with gradient and Hessian."""
        w = v[:, None, :] - self.xi[None]
        val = v @ self.y.T - self.t + 0.5 * np.einsum("bni,bni->bn", w, w) / self.M
        grad = self.y[None] + w / self.M[None, :, None]
        n = self.dim
        hess = np.broadcast_to((1.0 / self.M)[None, :, None, None] * np.eye(n),
                               (len(v), len(self), n, n))
        return val, grad, hess

    def minorant(self):
        return self

    def agrees(self, xt):
        return np.ones(xt.shape[:2], bool)

    def describe(self):
        return [{"type": "quadratic", "y": yy.tolist(), "t": float(tt), "xi": xx.tolist(),
                 "M": float(mm)} for yy, tt, xx, mm in zip(self.y, self.t, self.xi, self.M)]


class RadialBlock:
    """Pieces ``t + <xi, x - y> + (K/2)|x - y|^2 + a*theta(|x - y|)``.

    ``theta`` is the primitive of a modulus ``omega``. The conjugate reduces
    to the scalar equation ``s = K rho + a omega(rho)`` with ``s = |v - xi|``.
    """

    exact_conjugate = True

    def __init__(self, y, t, xi, K, a: float, modulus: Modulus):
        self.y = np.atleast_2d(np.asarray(y, float))
        self.t = np.asarray(t, float).reshape(-1)
        self.xi = np.asarray(xi, float).reshape(self.y.shape)
        self.K = np.broadcast_to(np.asarray(K, float), self.t.shape).copy()
        self.a = float(a)
        self.modulus = modulus

    def __len__(self):
        return len(self.t)

    @property
    def dim(self):
        return self.y.shape[1]

    def values(self, x):
        r = x[:, None, :] - self.y[None]
        rn = np.sqrt(np.einsum("bni,bni->bn", r, r))
        return (self.t + np.einsum("bni,ni->bn", r, self.xi) + 0.5 * self.K * rn * rn
                + self.a * self.modulus.theta(rn))

    def grads(self, x):
        r = x[:, None, :] - self.y[None]
        rn = np.sqrt(np.einsum("bni,bni->bn", r, r))
        with np.errstate(invalid="ignore", divide="ignore"):
            radial = np.where(rn > 0, self.modulus.omega(rn) / rn, 0.0)
        return self.xi[None] + (self.K[None, :, None] + self.a * radial[..., None]) * r

    def _rho(self, s):
        """Solve ``s = K rho + a omega(rho)`` by bisection then Newton."""
        K = np.broadcast_to(self.K, s.shape)
        lo = np.zeros_like(s)
        hi = s / K
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            f = K * mid + self.a * self.modulus.omega(mid) - s
            lo = np.where(f < 0, mid, lo)
            hi = np.where(f < 0, hi, mid)
        rho = 0.5 * (lo + hi)
        for _ in range(2):
            dw = self.modulus.domega(rho)
            ok = np.isfinite(dw) & (rho > 0)
            f = K * rho + self.a * self.modulus.omega(rho) - s
            step = np.where(ok, f / (K + self.a * np.where(ok, dw, 0.0)), 0.0)
            rho = np.clip(rho - step, lo, hi)
        return rho

    def conj(self, v):
        w = v[:, None, :] - self.xi[None]
        s = np.sqrt(np.einsum("bni,bni->bn", w, w))
        rho = self._rho(s)
        K = self.K[None]
        val = (v @ self.y.T - self.t + s * rho - 0.5 * K * rho * rho
               - self.a * self.modulus.theta(rho))
        tiny = s <= 1e-300
        with np.errstate(invalid="ignore", divide="ignore"):
            e = np.where(tiny[..., None], 0.0, w / np.where(tiny, 1.0, s)[..., None])
            ratio = np.where(tiny, 0.0, rho / np.where(tiny, 1.0, s))
        grad = self.y[None] + rho[..., None] * e
        dw = self.modulus.domega(rho)
        drho = np.where(np.isfinite(dw), 1.0 / (K + self.a * np.where(np.isfinite(dw), dw, 0.0)), 0.0)
        n = self.dim
        eye = np.eye(n)
        ee = e[..., :, None] * e[..., None, :]
        ratio = np.where(tiny, drho, ratio)
        hess = drho[..., None, None] * ee + ratio[..., None, None] * (eye - ee)
        return val, grad, hess

    def minorant(self):
        return None

    def agrees(self, xt):
        return np.zeros(xt.shape[:2], bool)

    def describe(self):
        return [{"type": "radial", "y": yy.tolist(), "t": float(tt), "xi": xx.tolist(),
                 "K": float(kk), "a": self.a, "omega": self.modulus.describe()}
                for yy, tt, xx, kk in zip(self.y, self.t, self.xi, self.K)]


class PhiBlock:
    """Pieces ``t + <xi, x - y> + phi_y(x) + a|x - y|^2`` with ``phi_y`` from a :class:`PhiFamily`.

    The conjugate has no closed form; it is computed by a damped Newton
    iteration on ``p(x) - <v, x>``. Since ``phi_y >= A|x - y|^2`` with
    equality near the data, the paraboloid of curvature ``2(A + a)`` is an
    exact minorant that coincides with the piece wherever ``phi_y`` is on its
    quadratic branch.
    """

    exact_conjugate = False

    def __init__(self, family: PhiFamily, a: float):
        self.family = family
        self.a = float(a)
        self.y = family.points
        self.t = family.values
        self.xi = family.gradients

    def __len__(self):
        return len(self.t)

    @property
    def dim(self):
        return self.y.shape[1]

    def _piece(self, i, x, hessian=False):
        out = self.family.evaluate(i, x, hessian)
        r = x - self.y[i]
        val = self.t[i] + r @ self.xi[i] + out[0] + self.a * np.einsum("bi,bi->b", r, r)
        grad = self.xi[i] + out[1] + 2.0 * self.a * r
        if not hessian:
            return val, grad
        return val, grad, out[2] + 2.0 * self.a * np.eye(self.dim)

    def values(self, x):
        return np.stack([self._piece(i, x)[0] for i in range(len(self))], axis=1)

    def grads(self, x):
        return np.stack([self._piece(i, x)[1] for i in range(len(self))], axis=1)

    def conj(self, v, max_iter: int = 50):
        B, n = v.shape
        N = len(self)
        val = np.empty((B, N))
        grad = np.empty((B, N, n))
        hess = np.empty((B, N, n, n))
        curv = 2.0 * (self.family.A + self.a)
        for i in range(N):
            x = self.y[i] + (v - self.xi[i]) / curv[i]
            for _ in range(max_iter):
                f, g, H = self._piece(i, x, True)
                r = g - v
                if np.all(np.linalg.norm(r, axis=1) <= 1e-13 * (1.0 + np.linalg.norm(v, axis=1))):
                    break
                step = np.linalg.solve(H, r[..., None])[..., 0]
                obj = f - np.einsum("bi,bi->b", v, x)
                alpha = np.ones(B)
                for _ in range(30):
                    xn = x - alpha[:, None] * step
                    fn = self._piece(i, xn)[0] - np.einsum("bi,bi->b", v, xn)
                    bad = fn > obj - 1e-4 * alpha * np.einsum("bi,bi->b", r, step) + 1e-15 * np.abs(obj)
                    if not np.any(bad):
                        break
                    alpha = np.where(bad, 0.5 * alpha, alpha)
                x = x - alpha[:, None] * step
            f, g, H = self._piece(i, x, True)
            val[:, i] = np.einsum("bi,bi->b", v, x) - f
            grad[:, i] = x
            hess[:, i] = np.linalg.inv(H)
        return val, grad, hess

    def minorant(self):
        return QuadraticBlock(self.y, self.t, self.xi, 2.0 * (self.family.A + self.a))

    def agrees(self, xt):
        return np.stack([self.family.quadratic_agrees(i, xt[:, i]) for i in range(len(self))],
                        axis=1)

    def describe(self):
        return [{"type": "phi", "y": yy.tolist(), "t": float(tt), "xi": xx.tolist(),
                 "A": float(aa), "k": int(kk), "a": self.a}
                for yy, tt, xx, aa, kk in zip(self.y, self.t, self.xi, self.family.A,
                                              self.family.ks)]


@dataclass
class GFunction:
    """``g(x) = min`` over all pieces of the given blocks.

    Parameters
    ----------
    blocks : list
        Piece blocks sharing one dimension.
    jets : JetSet, optional
        Data the pieces were built from; used for ``m`` and restarts.
    """

    blocks: list
    jets: Optional[JetSet] = None

    @property
    def dim(self) -> int:
        return self.blocks[0].dim

    def __len__(self) -> int:
        return sum(len(b) for b in self.blocks)

    @property
    def exact_conjugate(self) -> bool:
        return all(b.exact_conjugate for b in self.blocks)

    def piece_values(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        return np.concatenate([b.values(x) for b in self.blocks], axis=1)

    def piece_grads(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        return np.concatenate([b.grads(x) for b in self.blocks], axis=1)

    def conj(self, v):
        parts = [b.conj(v) for b in self.blocks]
        return tuple(np.concatenate([p[k] for p in parts], axis=1) for k in range(3))

    def conj_values(self, v) -> np.ndarray:
        return np.concatenate([b.conj(v)[0] for b in self.blocks], axis=1)

    def minorant(self) -> Optional["GFunction"]:
        mins = [b.minorant() for b in self.blocks]
        if any(m is None for m in mins):
            return None
        return GFunction(mins, self.jets)

    def agrees(self, xt) -> np.ndarray:
        out, k = [], 0
        for b in self.blocks:
            out.append(b.agrees(xt[:, k:k + len(b)]))
            k += len(b)
        return np.concatenate(out, axis=1)

    def m(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, float))
        if self.jets is None:
            raise ValueError("GFunction has no jets attached")
        js = self.jets
        aff = js.values - np.einsum("yi,yi->y", js.gradients, js.points)
        return np.max(x @ js.gradients.T + aff, axis=1)

    def describe(self) -> list:
        return [d for b in self.blocks for d in b.describe()]


def g_eval(g: GFunction, x) -> tuple[np.ndarray, np.ndarray]:
    """Exact minimum over pieces and the index of the minimising piece."""
    vals = g.piece_values(x)
    idx = np.argmin(vals, axis=1)
    return vals[np.arange(len(idx)), idx], idx


def conjugate_eval(g: GFunction, v) -> tuple[np.ndarray, bool]:
    """``g*(v) = max_i p_i*(v)``.

    Returns
    -------
    values : ndarray
    approximate : bool
        True when some piece conjugate was computed numerically.
    """
    v = np.atleast_2d(np.asarray(v, float))
    val, _, _ = g.conj(v)
    return val.max(axis=1), not g.exact_conjugate


# ----------------------------------------------------------------------------
# dual solver


@dataclass(frozen=True)
class SolverSettings:
    """Interior point settings.

    ``tol`` bounds the complementarity gap relative to ``1 + |F|``.
    """

    tol: float = 1e-13
    res_tol: float = 1e-9
    max_iter: int = 200
    centering: float = 0.1
    chunk: int = 2048
    weight_floor: float = 1e-9


@dataclass
class DualSolution:
    v: np.ndarray
    s: np.ndarray
    lam: np.ndarray
    gap: np.ndarray
    converged: np.ndarray
    iterations: int


def _initial_v(g, x, grads_at_x, vals_at_x, k: int = 6):
    """Best dual point among gradients and data slopes of nearby pieces.

    Candidates are ``grad p_i(x)`` and ``xi_i`` for the ``k`` lowest pieces
    at ``x`` and the ``k`` pieces with the closest centres. The first
    candidate is the gradient of the lowest piece.
    """
    B, N = vals_at_x.shape
    rows = np.arange(B)
    low = np.argsort(vals_at_x, axis=1, kind="stable")[:, :min(k, N)]
    cands = [grads_at_x[rows[:, None], low]]
    centres = np.concatenate([b.y for b in g.blocks])
    slopes = np.concatenate([b.xi for b in g.blocks])
    d = np.einsum("bni,bni->bn", x[:, None] - centres[None], x[:, None] - centres[None])
    near = np.argsort(d, axis=1, kind="stable")[:, :min(k, N)]
    cands += [slopes[low], slopes[near], grads_at_x[rows[:, None], near]]
    C = np.concatenate(cands, axis=1)
    m = C.shape[1]
    flat = C.reshape(-1, x.shape[1])
    step = max(1, 4_000_000 // max(N, 1))
    val = np.concatenate([g.conj_values(flat[i:i + step]).max(axis=1)
                          for i in range(0, len(flat), step)]).reshape(B, m)
    dual = np.einsum("bi,bci->bc", x, C) - val
    dual[~np.isfinite(dual)] = -np.inf
    best = np.argmax(dual, axis=1)
    return C[rows, best]


def _ipm(conj, x, v0, st: SolverSettings) -> DualSolution:
    """Primal-dual interior point for ``min s - <x, v>`` s.t. ``l_i(v) <= s``."""
    B, n = x.shape
    v = v0.copy()
    val, grad, hess = conj(v)
    hess = np.array(hess)
    N = val.shape[1]
    lmax = val.max(axis=1)
    spread = lmax - val.min(axis=1)
    s = lmax + 1.0 + 0.1 * spread
    sig = s[:, None] - val
    lam = (1.0 / sig) / np.sum(1.0 / sig, axis=1, keepdims=True)
    conv = np.zeros(B, bool)
    stalled = np.zeros(B, bool)
    # centering per row: short steps mean the iterate left the central path
    sigma = np.full(B, st.centering)
    gap = np.full(B, np.inf)
    it = 0
    xnorm = 1.0 + np.linalg.norm(x, axis=1)
    for it in range(1, st.max_iter + 1):
        act = np.nonzero(~conv & ~stalled)[0]
        if act.size == 0:
            break
        xa, va, sa, la = x[act], v[act], s[act], lam[act]
        vl, gr, hs = val[act], grad[act], hess[act]
        # slacks at roundoff level are clamped so active pieces do not stall the step
        eps = 1e-14 * (1.0 + np.abs(sa) + np.abs(vl).max(axis=1))
        sg = np.maximum(sa[:, None] - vl, eps[:, None])
        rv = np.einsum("bn,bni->bi", la, gr) - xa
        rs = 1.0 - la.sum(axis=1)
        gp = np.einsum("bn,bn->b", la, sg)
        gap[act] = gp
        done = ((gp <= st.tol * (1.0 + np.abs(sa)))
                & (np.linalg.norm(rv, axis=1) <= st.res_tol * xnorm[act])
                & (np.abs(rs) <= st.res_tol))
        conv[act[done]] = True
        if it % 10 == 0:
            # near tied pieces slow the iteration down; try to finish early
            near = act[~done & (gp <= 1e-3 * (1.0 + np.abs(sa)))]
            if near.size:
                _polish(conj, x, v, s, lam, gap, conv, st, rows=near, full=False)
                hit = conv[act] & ~done
                if np.any(hit):
                    h = act[hit]
                    val[h], grad[h], hess[h] = conj(v[h])
                    done = done | hit
        # gap closed but residuals lag: leave to the active-set polish
        stuck = ~done & (gp <= np.maximum(st.tol * (1.0 + np.abs(sa)), 100.0 * eps))
        stalled[act[stuck]] = True
        keep = ~done & ~stuck
        if not np.any(keep):
            continue
        act = act[keep]
        eps = eps[keep]
        xa, va, sa, la = xa[keep], va[keep], sa[keep], la[keep]
        vl, gr, hs, sg, rv, rs, gp = vl[keep], gr[keep], hs[keep], sg[keep], rv[keep], rs[keep], gp[keep]
        mu = sigma[act] * gp / N
        d = la / sg
        a = mu[:, None] / sg - la
        H = (np.einsum("bn,bnij->bij", la, hs)
             + np.einsum("bn,bni,bnj->bij", d, gr, gr))
        bvec = np.einsum("bn,bni->bi", d, gr)
        c0 = d.sum(axis=1)
        K = np.zeros((len(act), n + 1, n + 1))
        K[:, :n, :n] = H
        K[:, :n, n] = -bvec
        K[:, n, :n] = bvec
        K[:, n, n] = -c0
        rhs = np.empty((len(act), n + 1))
        rhs[:, :n] = -rv - np.einsum("bn,bni->bi", a, gr)
        rhs[:, n] = -rs - a.sum(axis=1)
        try:
            sol = np.linalg.solve(K, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError:
            sol = (np.linalg.pinv(K) @ rhs[..., None])[..., 0]
        dv, ds = sol[:, :n], sol[:, n]
        dl = a - d * (ds[:, None] - np.einsum("bni,bi->bn", gr, dv))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(dl < 0, -la / dl, np.inf)
        alpha = np.minimum(1.0, 0.995 * ratio.min(axis=1))
        # backtrack until the slacks stay positive, re-evaluating only failing rows
        floor = np.where(sg > 10 * eps[:, None], 0.005 * sg, -eps[:, None])
        vn = va + alpha[:, None] * dv
        sn = sa + alpha * ds
        valn, grn, hsn = conj(vn)
        hsn = np.array(hsn)
        bad = np.nonzero(np.any(sn[:, None] - valn <= floor, axis=1))[0]
        for _ in range(60):
            if bad.size == 0:
                break
            alpha[bad] *= 0.5
            vn[bad] = va[bad] + alpha[bad, None] * dv[bad]
            sn[bad] = sa[bad] + alpha[bad] * ds[bad]
            vb_, gb_, hb_ = conj(vn[bad])
            valn[bad], grn[bad], hsn[bad] = vb_, gb_, hb_
            still = np.any(sn[bad, None] - vb_ <= floor[bad], axis=1)
            bad = bad[still]
        # a collapsed step means roundoff has taken over: leave to the polish
        stalled[act[alpha <= 1e-12]] = True
        sigma[act] = np.where(alpha >= 0.5, st.centering, np.where(alpha >= 0.1, 0.5, 0.9))
        v[act] = vn
        s[act] = sn
        lam[act] = np.maximum(la + alpha[:, None] * dl, 1e-300)
        val[act], grad[act], hess[act] = valn, grn, hsn
    if not np.all(conv):
        _polish(conj, x, v, s, lam, gap, conv, st)
    return DualSolution(v, s, lam, gap, conv, it)


def _polish(conj, x, v, s, lam, gap, conv, st: SolverSettings, steps: int = 8,
            rows=None, full: bool = True):
    """Newton on the KKT system restricted to a guessed active set.

    Used for rows where the interior point iteration stalls or crawls
    through many nearly tied pieces. Active sets tried are the pieces with
    non-negligible weight and, since at most ``n + 1`` pieces are needed,
    the ``m`` heaviest or least slack pieces for ``m = 1 .. n + 1``. A row
    is accepted only if the weights are nonnegative and no piece is violated.
    """
    n = x.shape[1]
    N = lam.shape[1]
    if rows is None:
        rows = np.nonzero(~conv)[0]
    rows = np.asarray(rows)

    def run(pick):
        todo = rows[~conv[rows]]
        for lo in range(0, todo.size, 512):
            r = todo[lo:lo + 512]
            idx, valid = pick(r)
            _polish_rows(conj, x, v, s, lam, gap, conv, st, r, steps, idx, valid)

    def heavy(r):
        lr = lam[r]
        keep = lr > 1e-8 * lr.max(axis=1, keepdims=True)
        k = int(keep.sum(axis=1).max())
        idx = np.argsort(-np.where(keep, lr, -1.0), axis=1, kind="stable")[:, :k]
        return idx, np.take_along_axis(keep, idx, axis=1)

    if full:
        run(heavy)
    for key in (lambda r: -lam[r], lambda r: s[r, None] - conj(v[r])[0]):
        for m in range(1, min(n + 1, N) + 1):
            if np.all(conv[rows]):
                return

            def top(r, m=m, key=key):
                idx = np.argsort(key(r), axis=1, kind="stable")[:, :m]
                return idx, np.ones(idx.shape, bool)
            run(top)


def _polish_rows(conj, x, v, s, lam, gap, conv, st, rows, steps, idx, valid):
    """Newton steps for rows ``rows`` with active pieces ``idx`` (padding where ``~valid``)."""
    B = rows.size
    n = x.shape[1]
    k = idx.shape[1]
    xb = x[rows]
    vb, sb = v[rows].copy(), s[rows].copy()
    lb = np.where(valid, np.take_along_axis(lam[rows], idx, axis=1), 0.0)
    tot = lb.sum(axis=1, keepdims=True)
    uni = valid / np.maximum(valid.sum(axis=1, keepdims=True), 1)
    lb = np.where(tot > 0, lb / np.where(tot > 0, tot, 1.0), uni)
    xnorm = 1.0 + np.linalg.norm(xb, axis=1)
    eye = np.eye(k)
    done = np.zeros(B, bool)
    for _ in range(steps):
        val, gr, hs = conj(vb)
        va = np.take_along_axis(val, idx, axis=1)
        ga = np.take_along_axis(gr, idx[..., None], axis=1)
        ha = np.take_along_axis(np.asarray(hs), idx[..., None, None], axis=1)
        r1 = np.einsum("bk,bki->bi", lb, ga) - xb
        r2 = np.where(valid, va - sb[:, None], 0.0)
        r3 = 1.0 - lb.sum(axis=1)
        scale = 1e-11 * (1.0 + np.abs(sb) + np.abs(va).max(axis=1))
        done = ((np.linalg.norm(r1, axis=1) <= st.res_tol * xnorm) & (np.abs(r3) <= st.res_tol)
                & np.all(np.abs(r2) <= scale[:, None], axis=1))
        if np.all(done):
            break
        K = np.zeros((B, n + 1 + k, n + 1 + k))
        K[:, :n, :n] = np.einsum("bk,bkij->bij", lb, ha)
        K[:, :n, n + 1:] = np.swapaxes(np.where(valid[..., None], ga, 0.0), 1, 2)
        K[:, n + 1:, :n] = np.where(valid[..., None], ga, 0.0)
        K[:, n + 1:, n] = np.where(valid, -1.0, 0.0)
        K[:, n, n + 1:] = np.where(valid, 1.0, 0.0)
        K[:, n + 1:, n + 1:] = np.where(valid[:, :, None], 0.0, eye[None])
        rhs = -np.concatenate([r1, -r3[:, None], r2], axis=1)
        with np.errstate(all="ignore"):
            try:
                d = np.linalg.solve(K, rhs[..., None])[..., 0]
            except np.linalg.LinAlgError:
                d = (np.linalg.pinv(K) @ rhs[..., None])[..., 0]
        d = np.where(done[:, None] | ~np.isfinite(d), 0.0, d)
        vb += d[:, :n]
        sb += d[:, n]
        lb = np.where(valid, lb + d[:, n + 1:], 0.0)
    val = conj(vb)[0]
    tol = 1e-11 * (1.0 + np.abs(sb) + np.abs(val).max(axis=1))
    ok = done & np.all(lb >= 0, axis=1) & (val.max(axis=1) <= sb + tol)
    ok &= np.all(np.isfinite(vb), axis=1)
    r = rows[ok]
    full = np.zeros((ok.sum(), lam.shape[1]))
    np.put_along_axis(full, idx[ok], lb[ok], axis=1)
    v[r], s[r], lam[r] = vb[ok], sb[ok], full
    gap[r] = 0.0
    conv[r] = True


@dataclass
class EnvelopeResult:
    """Batch output of :meth:`EnvelopeEvaluator.evaluate`."""

    values: np.ndarray
    gradients: np.ndarray
    gaps: np.ndarray
    flags: list
    weights: np.ndarray
    touching: np.ndarray


class EnvelopeEvaluator:
    """Evaluate ``F = conv(g)`` and ``grad F`` through the dual problem.

    For blocks without a closed-form conjugate but with an exact quadratic
    minorant the minorant envelope is computed first. If all touching
    points with non-negligible weight lie where the piece equals its
    minorant, the two envelopes coincide at ``x`` and the result is exact.
    Remaining points are solved with numerically computed conjugates and
    flagged ``approximate``.
    """

    def __init__(self, g: GFunction, settings: Optional[SolverSettings] = None):
        self.g = g
        self.settings = settings or SolverSettings()

    @property
    def dim(self) -> int:
        return self.g.dim

    def _solve(self, g: GFunction, x):
        vals = g.piece_values(x)
        grads = g.piece_grads(x)
        v0 = _initial_v(g, x, grads, vals)
        # single piece certificate: min_i p_i(x) is an upper bound and the
        # dual at v = grad p_i(x) a lower bound; equal bounds settle the row
        val0, tg0, _ = g.conj(v0)
        upper = vals.min(axis=1)
        lower = np.einsum("bi,bi->b", x, v0) - val0.max(axis=1)
        done = upper - lower <= self.settings.tol * (1.0 + np.abs(upper))
        B, N = vals.shape
        idx = np.argmin(vals, axis=1)
        lam = np.zeros((B, N))
        lam[np.arange(B), idx] = 1.0
        sol = DualSolution(v0.copy(), upper.copy(), lam, np.maximum(upper - lower, 0.0),
                           done.copy(), 0)
        F = lower.copy()
        tgrad = tg0.copy()
        rest = np.nonzero(~done)[0]
        if rest.size:
            sub = _ipm(g.conj, x[rest], v0[rest], self.settings)
            val, tg, _ = g.conj(sub.v)
            F[rest] = np.einsum("bi,bi->b", x[rest], sub.v) - val.max(axis=1)
            tgrad[rest] = tg
            sol.v[rest], sol.s[rest], sol.lam[rest] = sub.v, sub.s, sub.lam
            sol.gap[rest], sol.converged[rest] = sub.gap, sub.converged
            sol.iterations = sub.iterations
        w = sol.lam / sol.lam.sum(axis=1, keepdims=True)
        return F, sol, w, tgrad

    def _chunk(self, x):
        B = len(x)
        flags = [[] for _ in range(B)]
        g = self.g
        if g.exact_conjugate:
            F, sol, w, tp = self._solve(g, x)
        else:
            mg = g.minorant()
            if mg is not None:
                F, sol, w, tp = self._solve(mg, x)
                heavy = w > self.settings.weight_floor
                ok = np.all(g.agrees(tp) | ~heavy, axis=1)
            else:
                ok = np.zeros(B, bool)
                F = np.empty(B)
                sol = None
            bad = np.nonzero(~ok)[0]
            if bad.size:
                F2, sol2, w2, tp2 = self._solve(g, x[bad])
                if sol is None:
                    F, sol, w, tp = F2, sol2, w2, tp2
                else:
                    F[bad] = F2
                    sol.v[bad], sol.gap[bad], sol.converged[bad] = sol2.v, sol2.gap, sol2.converged
                    w[bad], tp[bad] = w2, tp2
                for i in bad:
                    flags[i].append(FLAG_APPROX)
        for i in np.nonzero(~sol.converged)[0]:
            flags[i].append(FLAG_NONCONV)
        gaps = sol.gap.copy()
        grads = sol.v.copy()
        if all(isinstance(b, QuadraticBlock) for b in g.blocks):
            gaps = np.maximum(_primal_value(g, x, w) - F, 0.0)
        else:
            # the dual can be flat where a piece is not strongly convex; the
            # touching point is then sharp and grad p_i there is the gradient
            rows = np.arange(B)
            top = np.argmax(w, axis=1)
            at = tp[rows, top].copy()
            # with all weight on one piece x itself is the touching point
            single = w[rows, top] >= 1.0 - 1e-9
            at[single] = x[single]
            grads = g.piece_grads(at)[rows, top]
        return EnvelopeResult(F, grads, gaps, flags, w, tp)

    def evaluate(self, x) -> EnvelopeResult:
        """Evaluate at the rows of ``x`` (shape ``(B, n)`` or ``(n,)``)."""
        x = np.atleast_2d(np.asarray(x, float))
        if x.shape[1] != self.dim:
            x = x.reshape(-1, self.dim)
        parts = [self._chunk(x[i:i + self.settings.chunk])
                 for i in range(0, len(x), self.settings.chunk)]
        if len(parts) == 1:
            return parts[0]
        return EnvelopeResult(
            np.concatenate([p.values for p in parts]),
            np.concatenate([p.gradients for p in parts]),
            np.concatenate([p.gaps for p in parts]),
            [f for p in parts for f in p.flags],
            np.concatenate([p.weights for p in parts]),
            np.concatenate([p.touching for p in parts]))

    def value(self, x) -> np.ndarray:
        return self.evaluate(x).values

    def gradient(self, x) -> np.ndarray:
        return self.evaluate(x).gradients


def _primal_value(g: GFunction, x, w) -> np.ndarray:
    """Upper bound ``min_v sum_i w_i ...`` for quadratic pieces at fixed weights.

    With ``p_i = y_i - xi_i/M_i`` and ``c_i = |xi_i|^2/(2M_i) - t_i`` the
    envelope equals ``min_w |x - sum w p|^2 / (2 sum w/M) - sum w c``.
    """
    y = np.concatenate([b.y for b in g.blocks])
    t = np.concatenate([b.t for b in g.blocks])
    xi = np.concatenate([b.xi for b in g.blocks])
    M = np.concatenate([b.M for b in g.blocks])
    p = y - xi / M[:, None]
    c = 0.5 * np.einsum("ni,ni->n", xi, xi) / M - t
    W = w @ (1.0 / M)
    r = x - w @ p
    return 0.5 * np.einsum("bi,bi->b", r, r) / W - w @ c


def biconj_eval(ev: EnvelopeEvaluator, x):
    """``F(x)``, ``grad F(x)`` and the dual maximiser ``v*`` at one point.

    Raises
    ------
    NonConvergence
        Never; a non-converged point is returned with the flag set in
        :meth:`EnvelopeEvaluator.evaluate`.
    """
    r = ev.evaluate(np.asarray(x, float)[None, :])
    return float(r.values[0]), r.gradients[0].copy(), r.gradients[0].copy()


# ----------------------------------------------------------------------------
# Caratheodory oracle


class PieceFunction:
    """Minimum of smooth convex pieces given as callables.

    Parameters
    ----------
    pieces : list of (f, grad)
        Vectorised callables on arrays of shape ``(B, n)``.
    dim : int
    """

    def __init__(self, pieces: Sequence, dim: int):
        self.pieces = list(pieces)
        self._dim = dim

    @property
    def dim(self):
        return self._dim

    def __len__(self):
        return len(self.pieces)

    def piece_values(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        return np.stack([f(x) for f, _ in self.pieces], axis=1)

    def piece_grads(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        return np.stack([gf(x) for _, gf in self.pieces], axis=1)

    def composed(self, basis) -> "PieceFunction":
        """The function ``x -> self(basis.T @ x)`` on the ambient space."""
        B = np.asarray(basis, float)
        pieces = [(lambda x, f=f: f(x @ B), lambda x, gf=gf: gf(x @ B) @ B.T)
                  for f, gf in self.pieces]
        return PieceFunction(pieces, B.shape[0])


@dataclass
class OracleResult:
    value: float
    points: np.ndarray
    weights: np.ndarray
    flagged: bool = False


@dataclass
class OracleBudget:
    """Grid resolution per axis and column generation settings."""

    resolution: Optional[int] = None
    margin: float = 1.5
    refine: bool = True
    maxiter: int = 60
    newton_steps: int = 40
    gap_tol: float = 1e-7


def _default_resolution(n: int) -> int:
    return {1: 4001, 2: 161, 3: 41}.get(n, 15)


class CaratheodoryOracle:
    """Upper bound on ``conv(g)(x)`` from explicit convex combinations.

    The graph of ``g`` is sampled on a box grid and its lower convex hull
    gives ``n+1`` points whose combination reaches ``x``. These seed a
    column generation: the linear program over candidate points
    ``min sum l_i g(z_i)`` with ``sum l_i (z_i, 1) = (x, 1)`` is solved,
    and its duals ``(v, s)`` price new points by minimising each convex
    piece minus ``<v, .>``. Every iterate is a feasible combination, so the
    returned value is always an upper bound.
    """

    def __init__(self, g, lo, hi, budget: Optional[OracleBudget] = None):
        self.g = g
        self.budget = budget or OracleBudget()
        n = g.dim
        self.lo = np.asarray(lo, float).reshape(n)
        self.hi = np.asarray(hi, float).reshape(n)
        res = self.budget.resolution or _default_resolution(n)
        axes = [np.linspace(l, h, res) for l, h in zip(self.lo, self.hi)]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        vals = g.piece_values(grid)
        self.grid = grid
        self.piece = np.argmin(vals, axis=1)
        self.gvals = vals[np.arange(len(grid)), self.piece]
        pts = np.column_stack([grid, self.gvals])
        try:
            hull = ConvexHull(pts, qhull_options="Qt Qbb Qc")
        except QhullError:
            hull = ConvexHull(pts, qhull_options="QJ")
        lower = hull.equations[:, n] < -1e-9
        self.facets = hull.simplices[lower]
        # barycentric maps of the projected facets; degenerate ones dropped
        T = self.grid[self.facets]                       # (F, n+1, n)
        A = np.concatenate([np.transpose(T, (0, 2, 1)), np.ones((len(T), 1, n + 1))], axis=1)
        keep = np.abs(np.linalg.det(A)) > 1e-14 * np.prod(self.hi - self.lo)
        self.facets = self.facets[keep]
        self.bary = np.linalg.inv(A[keep])

    @classmethod
    def around(cls, g, points, budget: Optional[OracleBudget] = None):
        budget = budget or OracleBudget()
        pts = np.atleast_2d(np.asarray(points, float))
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        span = np.maximum(hi - lo, 1.0)
        return cls(g, lo - budget.margin * span, hi + budget.margin * span, budget)

    def hull_value(self, x) -> tuple[float, np.ndarray, np.ndarray]:
        x = np.asarray(x, float)
        lam_all = self.bary @ np.append(x, 1.0)          # (F, n+1)
        k = int(np.argmax(lam_all.min(axis=1)))
        verts = self.facets[k]
        lam = lam_all[k]
        return float(lam @ self.gvals[verts]), verts, lam

    def __call__(self, x) -> OracleResult:
        x = np.asarray(x, float).reshape(-1)
        n = len(x)
        inside = np.all(x >= self.lo - 1e-12) and np.all(x <= self.hi + 1e-12)
        if not inside:
            return OracleResult(math.inf, np.empty((0, n)), np.empty(0), True)
        hv, verts, lam = self.hull_value(x)
        best = OracleResult(hv, self.grid[verts].copy(), lam, False)
        if not self.budget.refine:
            return best
        return self._columns(x, self.grid[verts].copy(), best)

    def _piece_argmin(self, v, Z):
        """Damped Newton on ``p_j(z) - <v, z>`` for every piece ``j`` at once.

        Hessians come from central differences of the piece gradients.
        """
        N, n = Z.shape
        rows = np.arange(N)

        def val(Z):
            return self.g.piece_values(Z)[rows, rows] - Z @ v

        def grad(Z):
            return self.g.piece_grads(Z)[rows, rows] - v

        f = val(Z)
        for _ in range(self.budget.newton_steps):
            G = grad(Z)
            if np.max(np.abs(G)) <= 1e-10 * (1.0 + np.abs(v).max()):
                break
            h = 1e-6 * (1.0 + np.abs(Z).max())
            H = np.empty((N, n, n))
            for i in range(n):
                e = np.zeros(n)
                e[i] = h
                H[:, :, i] = (grad(Z + e) - grad(Z - e)) / (2 * h)
            H = 0.5 * (H + np.transpose(H, (0, 2, 1))) + 1e-12 * np.eye(n)
            d = -np.einsum("nij,nj->ni", np.linalg.pinv(H), G)
            bad = ~np.isfinite(d).all(axis=1) | (np.einsum("ni,ni->n", d, G) >= 0)
            d[bad] = -G[bad]
            t = np.ones(N)
            for _ in range(40):
                Zn = Z + t[:, None] * d
                fn = val(Zn)
                ok = fn <= f + 1e-4 * t * np.einsum("ni,ni->n", d, G)
                if ok.all():
                    break
                t = np.where(ok, t, 0.5 * t)
            step = np.abs(Zn - Z).max()
            Z, f = Zn, np.minimum(fn, f)
            if step <= 1e-12 * (1.0 + np.abs(Z).max()):
                break
        return Z

    def _columns(self, x, pts, best: OracleResult) -> OracleResult:
        n = len(x)
        # x itself covers the case where one piece already is the envelope
        cols = list(pts) + [x.copy()]
        N = len(self.g)
        seeds = np.tile(x, (N, 1))
        stall = 0
        for _ in range(self.budget.maxiter):
            P = np.array(cols)
            gv = np.min(self.g.piece_values(P), axis=1)
            A = np.vstack([P.T, np.ones(len(P))])
            res = linprog(gv, A_eq=A, b_eq=np.append(x, 1.0), bounds=(0, None),
                          method="highs")
            if res.status != 0:
                break
            lam = res.x
            # the LP solver's own tolerances end progress near 1e-8
            stall = stall + 1 if res.fun > best.value - 1e-12 * (1.0 + abs(best.value)) else 0
            if res.fun < best.value:
                keep = lam > 0
                best = OracleResult(float(res.fun), P[keep], lam[keep], False)
            y = res.eqlin.marginals
            v, s = y[:n], y[n]
            Z = self._piece_argmin(v, seeds)
            seeds = Z
            rc = np.min(self.g.piece_values(Z), axis=1) - Z @ v - s
            # the duals certify conv(g)(x) >= LP value + min(rc); a stall
            # is accepted once the certified gap is small
            gap = -rc.min() / (1.0 + abs(best.value))
            if gap <= self.budget.gap_tol or (stall >= 8 and gap <= 1e3 * self.budget.gap_tol):
                return best
            new = rc < 0
            cols.extend(Z[new])
        best.flagged = True
        return best


def caratheodory_oracle(g, x, budget: Optional[OracleBudget] = None) -> float:
    """Upper bound on ``conv(g)(x)`` by explicit ``(n+1)``-point combinations."""
    x = np.asarray(x, float).reshape(-1)
    pts = [x]
    if getattr(g, "jets", None) is not None:
        pts.append(g.jets.points)
    elif hasattr(g, "blocks"):
        pts.extend(b.y for b in g.blocks)
    oracle = CaratheodoryOracle.around(g, np.vstack(pts), budget)
    return oracle(x).value


@dataclass
class ProjectionCheck:
    max_error: float
    ambient: np.ndarray
    reduced: np.ndarray
    passed: bool


def conv_projection_check(psi_X: PieceFunction, basis, samples, tol: float = 1e-4,
                          budget: Optional[OracleBudget] = None, box=None) -> ProjectionCheck:
    """Compare ``conv(psi o P)`` in ambient coordinates with ``conv_X(psi)`` at ``P x``.

    Parameters
    ----------
    psi_X : PieceFunction
        Function on ``X`` in basis coordinates.
    basis : ndarray, shape (n, d)
        Orthonormal basis of ``X``.
    samples : ndarray, shape (m, n)
    box : tuple of arrays, optional
        Ambient ``(lo, hi)`` for the ambient oracle grid.
    """
    B = np.asarray(basis, float)
    samples = np.atleast_2d(np.asarray(samples, float))
    amb = psi_X.composed(B)
    if box is None:
        lo = samples.min(axis=0) - 3.0
        hi = samples.max(axis=0) + 3.0
    else:
        lo, hi = box
    o_amb = CaratheodoryOracle(amb, lo, hi, budget)
    red = samples @ B
    o_red = CaratheodoryOracle(psi_X, red.min(axis=0) - 3.0, red.max(axis=0) + 3.0, budget)
    a = np.array([o_amb(x).value for x in samples])
    r = np.array([o_red(z).value for z in red])
    err = float(np.max(np.abs(a - r)))
    return ProjectionCheck(err, a, r, err <= tol)


def second_difference_ratio(fn: Callable, center, radius: float, samples: int = 2000,
                            seed: int = 0) -> float:
    """Max of ``(f(x+h) + f(x-h) - 2 f(x)) / |h|^2`` over random ``x, x +- h`` in a ball."""
    rng = np.random.default_rng(seed)
    center = np.asarray(center, float)
    n = center.shape[0]

    def ball(m, r):
        d = rng.standard_normal((m, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return d * (r * rng.random(m) ** (1.0 / n))[:, None]

    x = center + ball(samples, radius / 2)
    h = ball(samples, radius / 2)
    h[np.linalg.norm(h, axis=1) < 1e-6] += 1e-3
    f0, fp, fm = fn(x), fn(x + h), fn(x - h)
    return float(np.max((fp + fm - 2.0 * f0) / np.einsum("bi,bi->b", h, h)))
