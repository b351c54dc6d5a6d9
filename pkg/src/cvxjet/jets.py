"""Jets, jet sets, subspaces and moduli of continuity.

A 1-jet on a finite set ``E`` assigns to every point ``y`` a value ``t_y``
and a gradient ``xi_y``. Everything downstream consumes :class:`JetSet`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidJetSet, UnsupportedModulus

DUPLICATE_TOL = 1e-12
SPAN_RTOL = 1e-9


@dataclass(frozen=True)
class Jet:
    """A point with a prescribed value and gradient.

    Parameters
    ----------
    point : ndarray, shape (n,)
    value : float
    gradient : ndarray, shape (n,)
    is_auxiliary : bool
        True for the extra points added to enlarge the gradient span.
    """

    point: np.ndarray
    value: float
    gradient: np.ndarray
    is_auxiliary: bool = False

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.point, dtype=float)).copy()
        g = np.atleast_1d(np.asarray(self.gradient, dtype=float)).copy()
        if p.ndim != 1 or g.shape != p.shape:
            raise DimensionMismatch(
                f"point shape {p.shape} and gradient shape {g.shape} differ")
        p.flags.writeable = False
        g.flags.writeable = False
        object.__setattr__(self, "point", p)
        object.__setattr__(self, "gradient", g)
        object.__setattr__(self, "value", float(self.value))

    @property
    def dim(self) -> int:
        return self.point.shape[0]

    def to_dict(self) -> dict:
        return {"point": self.point.tolist(), "value": self.value,
                "gradient": self.gradient.tolist(),
                "auxiliary": bool(self.is_auxiliary)}


@dataclass(frozen=True)
class ValidationReport:
    """Problems found by :func:`validate`; empty lists mean a valid set."""

    duplicates: list = field(default_factory=list)
    dimension_mismatches: list = field(default_factory=list)
    non_finite: list = field(default_factory=list)
    bad_base_point: bool = False

    @property
    def ok(self) -> bool:
        return not (self.duplicates or self.dimension_mismatches
                    or self.non_finite or self.bad_base_point)

    def messages(self) -> list[str]:
        out = [f"duplicate points at indices {i} and {j}" for i, j in self.duplicates]
        out += [f"jet {i} has dimension {d}" for i, d in self.dimension_mismatches]
        out += [f"jet {i} has non-finite entries" for i in self.non_finite]
        if self.bad_base_point:
            out.append("base point index out of range")
        return out


@dataclass(frozen=True)
class JetSet:
    """Finite collection of jets of a common dimension.

    Construction does not validate; call :func:`validate` or
    :meth:`checked` before relying on the invariants.
    """

    dim: int
    jets: tuple
    base_point_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "jets", tuple(self.jets))
        object.__setattr__(self, "dim", int(self.dim))
        object.__setattr__(self, "base_point_index", int(self.base_point_index))

    def __len__(self) -> int:
        return len(self.jets)

    @property
    def points(self) -> np.ndarray:
        return np.array([j.point for j in self.jets], dtype=float).reshape(len(self), self.dim)

    @property
    def values(self) -> np.ndarray:
        return np.array([j.value for j in self.jets], dtype=float)

    @property
    def gradients(self) -> np.ndarray:
        return np.array([j.gradient for j in self.jets], dtype=float).reshape(len(self), self.dim)

    @property
    def auxiliary_mask(self) -> np.ndarray:
        return np.array([j.is_auxiliary for j in self.jets], dtype=bool)

    @property
    def base(self) -> Jet:
        return self.jets[self.base_point_index]

    def checked(self) -> "JetSet":
        """Return self after validation, raising on the first problem."""
        rep = validate(self)
        if not rep.ok:
            raise InvalidJetSet("; ".join(rep.messages()))
        return self

    def without(self, index: int) -> "JetSet":
        """Drop one jet, keeping the base point when possible."""
        jets = self.jets[:index] + self.jets[index + 1:]
        base = self.base_point_index
        if base > index:
            base -= 1
        elif base == index:
            base = 0
        return JetSet(self.dim, jets, base)

    @classmethod
    def from_arrays(cls, points, values, gradients, base_point_index: int = 0,
                    auxiliary=None) -> "JetSet":
        pts = np.asarray(points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        grads = np.asarray(gradients, dtype=float).reshape(pts.shape)
        vals = np.asarray(values, dtype=float).reshape(-1)
        aux = np.zeros(len(vals), bool) if auxiliary is None else np.asarray(auxiliary, bool)
        jets = [Jet(p, v, g, bool(a)) for p, v, g, a in zip(pts, vals, grads, aux)]
        return cls(pts.shape[1], jets, base_point_index)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "base_point": self.base_point_index,
                "jets": [j.to_dict() for j in self.jets]}

    @classmethod
    def from_dict(cls, data: dict) -> "JetSet":
        try:
            dim = int(data["dim"])
            jets = [Jet(j["point"], j["value"], j["gradient"], bool(j.get("auxiliary", False)))
                    for j in data["jets"]]
            base = int(data.get("base_point", 0))
        except (KeyError, TypeError) as exc:
            raise InvalidJetSet(f"malformed jet-set document: {exc}") from exc
        if not jets:
            raise InvalidJetSet("jet set is empty")
        return cls(dim, jets, base)


def load_jetset(path) -> JetSet:
    """Read a jet set from the JSON schema used by the CLI."""
    with open(Path(path), encoding="utf-8") as fh:
        return JetSet.from_dict(json.load(fh))


def dump_jetset(js: JetSet, path) -> None:
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(js.to_dict(), fh, indent=2)


def validate(js: JetSet) -> ValidationReport:
    """Check dimensions, finiteness, base index and distinctness of points.

    Returns
    -------
    ValidationReport
        Lists every problem found; never raises.
    """
    mism = [(i, j.dim) for i, j in enumerate(js.jets) if j.dim != js.dim]
    nonfin = [i for i, j in enumerate(js.jets)
              if not (np.isfinite(j.value) and np.all(np.isfinite(j.point))
                      and np.all(np.isfinite(j.gradient)))]
    dups = []
    good = [i for i, j in enumerate(js.jets) if j.dim == js.dim and i not in nonfin]
    if len(good) > 1:
        pts = np.array([js.jets[i].point for i in good])
        d = np.linalg.norm(pts[:, None, :] - pts[None, :, :], axis=-1)
        ii, jj = np.nonzero(np.triu(d <= DUPLICATE_TOL, k=1))
        dups = [(good[a], good[b]) for a, b in zip(ii, jj)]
    bad_base = not (0 <= js.base_point_index < len(js.jets))
    if len(js.jets) == 0:
        bad_base = True
    return ValidationReport(dups, mism, nonfin, bad_base)


@dataclass(frozen=True)
class Subspace:
    """Linear subspace of R^n given by an orthonormal basis.

    Parameters
    ----------
    dim_ambient : int
    basis : ndarray, shape (n, d)
        Orthonormal columns spanning the subspace. ``d`` may be zero.
    """

    dim_ambient: int
    basis: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float).reshape(int(self.dim_ambient), -1).copy()
        b.flags.writeable = False
        object.__setattr__(self, "basis", b)
        object.__setattr__(self, "dim_ambient", int(self.dim_ambient))

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    @property
    def P(self) -> np.ndarray:
        return self.basis @ self.basis.T

    @property
    def Q(self) -> np.ndarray:
        return np.eye(self.dim_ambient) - self.P

    @classmethod
    def full(cls, n: int) -> "Subspace":
        return cls(n, np.eye(n))

    @classmethod
    def zero(cls, n: int) -> "Subspace":
        return cls(n, np.zeros((n, 0)))

    @classmethod
    def from_vectors(cls, vectors, n: int | None = None, rtol: float = SPAN_RTOL,
                     scale: float | None = None) -> "Subspace":
        """Orthonormal basis of the span of the given vectors via SVD.

        Singular values below ``rtol * max(scale, 1)`` are treated as zero;
        ``scale`` defaults to the largest vector norm.
        """
        V = np.asarray(vectors, dtype=float)
        if n is None:
            n = V.shape[-1]
        V = V.reshape(-1, n)
        if V.shape[0] == 0:
            return cls.zero(n)
        if scale is None:
            scale = float(np.max(np.linalg.norm(V, axis=1)))
        cutoff = rtol * max(scale, 1.0)
        _, s, vt = np.linalg.svd(V, full_matrices=False)
        r = int(np.sum(s > cutoff))
        basis = vt[:r].T
        # deterministic sign: largest-magnitude entry of each column positive
        for c in range(r):
            k = np.argmax(np.abs(basis[:, c]))
            if basis[k, c] < 0:
                basis[:, c] *= -1
        return cls(n, basis)

    def contains(self, other: "Subspace", tol: float = 1e-8) -> bool:
        if other.dim == 0:
            return True
        return bool(np.max(np.abs(self.Q @ other.basis)) <= tol)

    def equals(self, other: "Subspace", tol: float = 1e-8) -> bool:
        return self.dim == other.dim and self.contains(other, tol)

    def to_dict(self) -> dict:
        return {"dim_ambient": self.dim_ambient, "basis": self.basis.T.tolist()}


def project(X: Subspace, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Project onto a subspace.

    Parameters
    ----------
    X : Subspace
    x : array_like, shape (n,) or (m, n)

    Returns
    -------
    px : ndarray
        Ambient vector ``P(x)``.
    coords : ndarray
        Coordinates of ``P(x)`` in the basis of ``X``.
    qx : ndarray
        Complement ``Q(x) = x - P(x)``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != X.dim_ambient:
        raise DimensionMismatch(f"expected last axis {X.dim_ambient}, got {x.shape[-1]}")
    coords = x @ X.basis
    px = coords @ X.basis.T
    return px, coords, x - px


def span_of_gradient_differences(js: JetSet) -> Subspace:
    """Span of ``{xi_y - xi_z}`` over the jet set.

    The differences against the base gradient are orthogonalised by SVD
    with cutoff ``1e-9 * max(max |xi|, 1)``.
    """
    G = js.gradients
    scale = float(np.max(np.linalg.norm(G, axis=1))) if len(G) else 0.0
    D = G - G[js.base_point_index]
    return Subspace.from_vectors(D, js.dim, SPAN_RTOL, scale)


def principal_angle(a: Subspace, b: Subspace) -> float:
    """Largest principal angle between two subspaces of equal dimension."""
    if a.dim != b.dim:
        return float(np.pi / 2)
    if a.dim == 0:
        return 0.0
    s = np.linalg.svd(a.basis.T @ b.basis, compute_uv=False)
    return float(np.arccos(np.clip(np.min(s), -1.0, 1.0)))


@dataclass(frozen=True)
class Modulus:
    """Concave modulus of continuity ``omega`` and its primitive ``theta``.

    Parameters
    ----------
    kind : {"power", "identity", "table"}
    alpha : float
        Exponent for ``kind="power"``; ``omega(t) = t**alpha``.
    table_t, table_w : tuple of float
        Samples of ``omega`` for ``kind="table"``, starting at ``(0, 0)``.
        Interpolated linearly and continued with the last slope.
    """

    kind: str
    alpha: float = 1.0
    table_t: tuple = ()
    table_w: tuple = ()

    def __post_init__(self):
        if self.kind == "power":
            if not (0.0 < self.alpha <= 1.0):
                raise UnsupportedModulus(f"power exponent must lie in (0, 1], got {self.alpha}")
        elif self.kind == "identity":
            object.__setattr__(self, "alpha", 1.0)
        elif self.kind == "table":
            t = np.asarray(self.table_t, float)
            w = np.asarray(self.table_w, float)
            if t.shape != w.shape or t.size < 2:
                raise UnsupportedModulus("table needs at least two matching samples")
            if t[0] != 0.0 or w[0] != 0.0:
                raise UnsupportedModulus("table must start at (0, 0)")
            if np.any(np.diff(t) <= 0):
                raise UnsupportedModulus("table abscissae must be strictly increasing")
            if np.any(np.diff(w) < 0):
                raise UnsupportedModulus("table values must be nondecreasing")
            slopes = np.diff(w) / np.diff(t)
            if np.any(np.diff(slopes) > 1e-12 * max(1.0, slopes.max())):
                raise UnsupportedModulus("table must be concave")
            if slopes[-1] <= 0:
                raise UnsupportedModulus("table must be unbounded (positive final slope)")
            object.__setattr__(self, "table_t", tuple(t.tolist()))
            object.__setattr__(self, "table_w", tuple(w.tolist()))
        else:
            raise UnsupportedModulus(f"unknown modulus kind {self.kind!r}")

    @classmethod
    def power(cls, alpha: float) -> "Modulus":
        return cls("power", alpha)

    @classmethod
    def identity(cls) -> "Modulus":
        return cls("identity")

    @classmethod
    def table(cls, t: Sequence[float], w: Sequence[float]) -> "Modulus":
        return cls("table", 1.0, tuple(t), tuple(w))

    @classmethod
    def parse(cls, spec: str) -> "Modulus":
        """Parse ``power:alpha``, ``identity`` or ``table:path``.

        The table file holds two whitespace-separated columns ``t omega``.
        """
        if spec == "identity":
            return cls.identity()
        kind, _, arg = spec.partition(":")
        if kind == "power":
            return cls.power(float(arg))
        if kind == "table":
            data = np.loadtxt(arg, ndmin=2)
            return cls.table(data[:, 0], data[:, 1])
        raise UnsupportedModulus(f"cannot parse modulus {spec!r}")

    @property
    def is_quadratic(self) -> bool:
        """True when ``theta(t) = t**2 / 2``."""
        return self.kind == "identity" or (self.kind == "power" and self.alpha == 1.0)

    def _table(self):
        t = np.asarray(self.table_t)
        w = np.asarray(self.table_w)
        s = np.diff(w) / np.diff(t)
        # theta at the knots
        th = np.concatenate([[0.0], np.cumsum(0.5 * (w[1:] + w[:-1]) * np.diff(t))])
        return t, w, s, th

    def omega(self, t):
        t = np.abs(np.asarray(t, float))
        if self.kind != "table":
            return t ** self.alpha
        kt, kw, s, _ = self._table()
        i = np.clip(np.searchsorted(kt, t, side="right") - 1, 0, len(s) - 1)
        return kw[i] + s[i] * (t - kt[i])

    def domega(self, t):
        """Derivative of ``omega``; right derivative at the table knots."""
        t = np.abs(np.asarray(t, float))
        if self.kind != "table":
            if self.alpha == 1.0:
                return np.ones_like(t)
            with np.errstate(divide="ignore"):
                return np.where(t > 0, self.alpha * t ** (self.alpha - 1.0), np.inf)
        kt, _, s, _ = self._table()
        i = np.clip(np.searchsorted(kt, t, side="right") - 1, 0, len(s) - 1)
        return s[i]

    def theta(self, t):
        """Primitive ``theta(t) = int_0^|t| omega``."""
        t = np.abs(np.asarray(t, float))
        if self.kind != "table":
            return t ** (1.0 + self.alpha) / (1.0 + self.alpha)
        kt, kw, s, th = self._table()
        i = np.clip(np.searchsorted(kt, t, side="right") - 1, 0, len(s) - 1)
        dt = t - kt[i]
        return th[i] + kw[i] * dt + 0.5 * s[i] * dt * dt

    def describe(self) -> str:
        if self.kind == "table":
            return f"table({len(self.table_t)} samples)"
        if self.kind == "identity":
            return "identity"
        return f"power({self.alpha:g})"


def jets_from_function(f, grad, points, base_point_index: int = 0) -> JetSet:
    """Sample a jet set from a function and its gradient."""
    pts = np.atleast_2d(np.asarray(points, float))
    vals = [float(f(p)) for p in pts]
    grads = [np.asarray(grad(p), float) for p in pts]
    return JetSet.from_arrays(pts, vals, grads, base_point_index)


def with_base(js: JetSet, index: int) -> JetSet:
    return replace(js, base_point_index=index)


def concat(js: JetSet, extra: Iterable[Jet]) -> JetSet:
    return JetSet(js.dim, tuple(js.jets) + tuple(extra), js.base_point_index)
