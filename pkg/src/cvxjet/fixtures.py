"""Reference instances shared by the test suite and the scripts."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .jets import JetSet, Subspace
from .surface import NormalData


def abs_jets() -> JetSet:
    """``|x|`` on ``{-1, 1}``."""
    return JetSet.from_arrays([[-1.0], [1.0]], [1.0, 1.0], [[-1.0], [1.0]])


def abs_closed_form(x) -> np.ndarray:
    """Envelope of the two unit-curvature paraboloids through the ``|x|`` jets.

    Expanding either paraboloid gives ``x^2/2 + 1/2``.
    """
    x = np.asarray(x, float)
    return 0.5 * x ** 2 + 0.5


@dataclass(frozen=True)
class ConvexInstance:
    """Jets of ``c1|x|^2 + c2|x|^4 + <b, x> + c0`` at scattered points."""

    jets: JetSet
    c1: float
    c2: float
    b: np.ndarray
    c0: float

    def f(self, x):
        x = np.atleast_2d(x)
        r2 = np.einsum("bi,bi->b", x, x)
        return self.c1 * r2 + self.c2 * r2 ** 2 + x @ self.b + self.c0

    def grad(self, x):
        x = np.atleast_2d(x)
        r2 = np.einsum("bi,bi->b", x, x)
        return (2.0 * self.c1 + 4.0 * self.c2 * r2)[:, None] * x + self.b


def random_convex_instance(rng: np.random.Generator, n=None, m=None) -> ConvexInstance:
    """Random instance with ``n`` in 1..3 and ``n + 1 <= m <= 8`` separated points."""
    n = int(rng.integers(1, 4)) if n is None else n
    m = int(rng.integers(n + 1, 9)) if m is None else m
    pts = []
    while len(pts) < m:
        p = rng.uniform(-2.0, 2.0, n)
        if all(np.linalg.norm(p - q) > 0.2 for q in pts):
            pts.append(p)
    P = np.array(pts)
    inst = ConvexInstance(None, float(rng.uniform(0.2, 2.0)), float(rng.uniform(0.0, 0.5)),
                          rng.normal(size=n), float(rng.normal()))
    js = JetSet.from_arrays(P, inst.f(P), inst.grad(P))
    return ConvexInstance(js, inst.c1, inst.c2, inst.b, inst.c0)


def convex_suite(count: int = 50, seed: int = 2024) -> list:
    rng = np.random.default_rng(seed)
    return [random_convex_instance(rng) for _ in range(count)]


@dataclass(frozen=True)
class ProjectedInstance:
    """Jets of ``F0(x) = c(B^T x) + <v, x>`` in ``R^3`` with ``v`` orthogonal to ``X``."""

    jets: JetSet
    X: Subspace
    v: np.ndarray
    c1: float
    c2: float

    def f(self, x):
        z = np.atleast_2d(x) @ self.X.basis
        r2 = np.einsum("bi,bi->b", z, z)
        return self.c1 * r2 + self.c2 * r2 ** 2 + np.atleast_2d(x) @ self.v

    def grad(self, x):
        z = np.atleast_2d(x) @ self.X.basis
        r2 = np.einsum("bi,bi->b", z, z)
        return ((2.0 * self.c1 + 4.0 * self.c2 * r2)[:, None] * z) @ self.X.basis.T + self.v


def projected_instance(rng: np.random.Generator, k: int, m: int = 6) -> ProjectedInstance:
    """``X`` of dimension ``k`` (1 or 2) in ``R^3`` at random orientation."""
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    X = Subspace.from_vectors(Q[:, :k].T, 3)
    v = X.Q @ rng.normal(size=3)
    pts = rng.uniform(-2.0, 2.0, (m, 3))
    inst = ProjectedInstance(None, X, v, float(rng.uniform(0.3, 2.0)), float(rng.uniform(0.0, 0.3)))
    js = JetSet.from_arrays(pts, inst.f(pts), inst.grad(pts))
    return ProjectedInstance(js, X, v, inst.c1, inst.c2)


def monotone_violation_1d() -> JetSet:
    """Slope drops from 1 to 0 while moving right: not convex."""
    return JetSet.from_arrays([[0.0], [1.0]], [0.0, 1.0], [[1.0], [0.0]])


def monotone_violation_2d() -> JetSet:
    return JetSet.from_arrays([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], [0.0, 1.0, 0.0],
                              [[1.0, 0.0], [0.0, 0.0], [1.0, 0.0]])


def circle_normals() -> NormalData:
    """The four axis points of the unit circle with outward normals."""
    p = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
    return NormalData(p, p.copy())
