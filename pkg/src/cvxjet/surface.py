"""Convex hypersurfaces through given points with given unit normals.

The surface is the zero set of a convex extension of the jet ``(0, N)``.
Its level set is extracted by bisection along rays cast from an interior
point, which gives one crossing per ray because sublevel sets are convex.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .errors import InvalidJetSet, NoInteriorPoint, ZeroGradient
from .extend import ExtendOptions, ExtensionModel, ModelEval, extend_with_projection
from .jets import Jet, JetSet, Subspace

UNIT_TOL = 1e-8


@dataclass(frozen=True)
class NormalData:
    """Points with outward unit normals, plus optional auxiliary pairs.

    Parameters
    ----------
    points : ndarray, shape (m, n)
    normals : ndarray, shape (m, n)
    X : Subspace, optional
        Coercive directions; defaults to the span of normal differences.
    aux : tuple of (point, normal)
    """

    points: np.ndarray
    normals: np.ndarray
    X: Optional[Subspace] = None
    aux: tuple = ()

    def __post_init__(self):
        p = np.atleast_2d(np.asarray(self.points, float))
        nrm = np.asarray(self.normals, float).reshape(p.shape)
        bad = np.abs(np.linalg.norm(nrm, axis=1) - 1.0) > UNIT_TOL
        if np.any(bad):
            raise InvalidJetSet(f"normals {np.nonzero(bad)[0].tolist()} are not unit vectors")
        object.__setattr__(self, "points", p)
        object.__setattr__(self, "normals", nrm)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def jets(self) -> JetSet:
        return JetSet.from_arrays(self.points, np.zeros(len(self.points)), self.normals)

    def aux_jets(self) -> list:
        return [Jet(p, 0.0, q, True) for p, q in self.aux]

    @classmethod
    def from_dict(cls, data: dict) -> "NormalData":
        try:
            pts = np.asarray(data["points"], float)
            nrm = np.asarray(data["normals"], float)
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidJetSet(f"malformed normal-data document: {exc}") from exc
        X = None
        if data.get("X") is not None:
            n = pts.shape[1]
            X = Subspace.from_vectors(np.asarray(data["X"], float).reshape(-1, n), n)
        aux = tuple((np.asarray(a["point"], float), np.asarray(a["normal"], float))
                    for a in data.get("aux", []))
        return cls(pts, nrm, X, aux)

    def to_dict(self) -> dict:
        d = {"points": self.points.tolist(), "normals": self.normals.tolist()}
        if self.X is not None:
            d["X"] = self.X.basis.T.tolist()
        if self.aux:
            d["aux"] = [{"point": np.asarray(p).tolist(), "normal": np.asarray(q).tolist()}
                        for p, q in self.aux]
        return d


class FunctionModel:
    """Wrap an explicit function and gradient in the model query interface.

    Parameters
    ----------
    f : callable
        Maps an ``(m, n)`` array to ``(m,)`` values.
    grad : callable
        Maps an ``(m, n)`` array to ``(m, n)`` gradients.
    dim : int
    """

    def __init__(self, f: Callable, grad: Callable, dim: int, jets: Optional[JetSet] = None):
        self.f = f
        self.grad = grad
        self.dim = int(dim)
        self.jets = jets

    def evaluate(self, x) -> ModelEval:
        x = np.atleast_2d(np.asarray(x, float)).reshape(-1, self.dim)
        return ModelEval(np.asarray(self.f(x), float), np.asarray(self.grad(x), float),
                         np.zeros(len(x)), [[] for _ in range(len(x))])

    def value(self, x):
        return self.evaluate(x).values

    def gradient(self, x):
        return self.evaluate(x).gradients


def surface_from_normals(nd: NormalData, options: Optional[ExtendOptions] = None
                         ) -> ExtensionModel:
    """Convex ``F`` with ``F = 0`` and ``grad F = N`` at the given points.

    Raises
    ------
    Infeasible
        The tangent-plane inequalities fail for the data.
    ZeroGradient
        ``grad F`` vanishes at a data point after construction.
    """
    js = nd.jets().checked()
    model = extend_with_projection(js, nd.X, nd.aux_jets(), options)
    g = model.gradient(nd.points)
    if np.any(np.linalg.norm(g, axis=1) < 1e-8):
        raise ZeroGradient("extension has a vanishing gradient at a data point")
    return model


def tangency_residuals(model, nd: NormalData) -> np.ndarray:
    """Angle in radians between ``grad F / |grad F|`` and the prescribed normals."""
    g = model.gradient(nd.points)
    u = g / np.linalg.norm(g, axis=1, keepdims=True)
    return np.arccos(np.clip(np.einsum("ij,ij->i", u, nd.normals), -1.0, 1.0))


# ----------------------------------------------------------------------------
# extraction


@dataclass
class LevelSetMesh:
    """Extracted zero set.

    Attributes
    ----------
    dimension : int
    vertices : ndarray, shape (m, n)
    cells : ndarray
        Segments ``(m, 2)`` in 2D, triangles ``(m, 3)`` in 3D.
    normals : ndarray
        ``grad F / |grad F|`` at the vertices.
    residuals : ndarray
        ``F`` at the vertices.
    interior : ndarray
        Ray origin.
    dropped : list of int
        Rays that left the box before crossing zero.
    """

    dimension: int
    vertices: np.ndarray
    cells: np.ndarray
    normals: np.ndarray
    residuals: np.ndarray
    interior: np.ndarray
    dropped: list = field(default_factory=list)
    ray_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, int))

    def distance_to(self, points) -> np.ndarray:
        """Distance from each point to the polyline (2D) or to the nearest vertex (3D)."""
        p = np.atleast_2d(np.asarray(points, float))
        if self.dimension != 2 or len(self.cells) == 0:
            d = np.linalg.norm(p[:, None] - self.vertices[None], axis=-1)
            return d.min(axis=1)
        a = self.vertices[self.cells[:, 0]]
        b = self.vertices[self.cells[:, 1]]
        ab = b - a
        L = np.einsum("si,si->s", ab, ab)
        t = np.einsum("psi,si->ps", p[:, None] - a[None], ab) / np.where(L > 0, L, 1.0)
        t = np.clip(t, 0.0, 1.0)
        q = a[None] + t[..., None] * ab[None]
        return np.linalg.norm(p[:, None] - q, axis=-1).min(axis=1)

    def stats(self) -> dict:
        r = np.abs(self.residuals)
        return {"dimension": self.dimension, "vertices": int(len(self.vertices)),
                "cells": int(len(self.cells)),
                "max_abs_residual": float(r.max()) if r.size else 0.0,
                "mean_abs_residual": float(r.mean()) if r.size else 0.0,
                "dropped_rays": list(map(int, self.dropped)),
                "interior_point": self.interior.tolist()}


def icosphere(level: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit icosphere with ``level`` midpoint subdivisions."""
    t = (1.0 + math.sqrt(5.0)) / 2.0
    v = np.array([[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
                  [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
                  [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]], float)
    f = np.array([[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
                  [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
                  [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
                  [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]])
    verts = list(v / np.linalg.norm(v, axis=1, keepdims=True))
    for _ in range(level):
        cache: dict = {}

        def mid(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                m = verts[i] + verts[j]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]
        nf = []
        for a, b, c in f:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            nf += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        f = np.array(nf)
    return np.array(verts), f


def find_interior_point(model, lo, hi, starts: Optional[Sequence] = None) -> np.ndarray:
    """Multi-start bounded minimisation of ``F``; returns a point with ``F < 0``.

    Raises
    ------
    NoInteriorPoint
        If the best value found is nonnegative.
    """
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    n = lo.size
    cands = [0.5 * (lo + hi)]
    jets = getattr(model, "jets", None)
    if jets is not None:
        cands.append(np.clip(jets.points.mean(axis=0), lo, hi))
    if starts is not None:
        cands += [np.asarray(s, float) for s in starts]
    corners = np.array(np.meshgrid(*[[0.0, 1.0]] * n)).reshape(n, -1).T
    cands += list(lo + 0.9 * corners * (hi - lo) + 0.05 * (hi - lo))
    best_x, best_f = None, math.inf
    for x0 in cands:
        res = minimize(lambda x: float(model.value(x[None])[0]), x0,
                       jac=lambda x: model.gradient(x[None])[0],
                       method="L-BFGS-B", bounds=list(zip(lo, hi)))
        if res.fun < best_f:
            best_x, best_f = res.x, float(res.fun)
        if best_f < 0:
            break
    if best_f >= 0:
        raise NoInteriorPoint(f"min F = {best_f:g} >= 0 on the box")
    return best_x


def _exit_time(x0, dirs, lo, hi) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        tl = np.where(dirs < 0, (lo - x0) / dirs, np.inf)
        th = np.where(dirs > 0, (hi - x0) / dirs, np.inf)
    return np.minimum(tl, th).min(axis=1)


def level_set_extract(model, bbox, resolution: int = 128, rtol: float = 1e-10,
                      interior=None) -> LevelSetMesh:
    """Zero set of a convex model inside ``bbox = (lo, hi)``.

    Parameters
    ----------
    model
        Anything with ``dim``, ``value`` and ``gradient``.
    bbox : tuple of array_like
    resolution : int
        Number of rays in 2D; icosphere subdivision level in 3D.
    rtol : float
        Bisection stops when the bracket is below ``rtol`` times the ray length.
    interior : array_like, optional
        Ray origin; found by minimisation when omitted.

    Raises
    ------
    NoInteriorPoint
    ValueError
        Dimension other than 2 or 3.
    """
    lo, hi = (np.asarray(b, float) for b in bbox)
    n = model.dim
    if n not in (2, 3):
        raise ValueError("level-set extraction needs dimension 2 or 3")
    x0 = find_interior_point(model, lo, hi) if interior is None else np.asarray(interior, float)
    if model.value(x0[None])[0] >= 0:
        raise NoInteriorPoint("given interior point has F >= 0")
    if n == 2:
        ang = 2.0 * np.pi * np.arange(resolution) / resolution
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        faces = None
    else:
        dirs, faces = icosphere(int(resolution))
    tmax = _exit_time(x0, dirs, lo, hi)
    fend = model.value(x0 + tmax[:, None] * dirs)
    hit = fend > 0
    a = np.zeros(len(dirs))
    b = tmax.copy()
    idx = np.nonzero(hit)[0]
    iters = int(math.ceil(math.log2(1.0 / rtol))) + 1
    for _ in range(iters):
        m = 0.5 * (a[idx] + b[idx])
        fm = model.value(x0 + m[:, None] * dirs[idx])
        pos = fm > 0
        b[idx] = np.where(pos, m, b[idx])
        a[idx] = np.where(pos, a[idx], m)
    t = 0.5 * (a + b)
    verts_all = x0 + t[:, None] * dirs
    keep = np.nonzero(hit)[0]
    remap = -np.ones(len(dirs), int)
    remap[keep] = np.arange(len(keep))
    verts = verts_all[keep]
    ev = model.evaluate(verts) if len(verts) else None
    res = ev.values if ev is not None else np.zeros(0)
    g = ev.gradients if ev is not None else np.zeros((0, n))
    nrm = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    if n == 2:
        segs = [(remap[i], remap[(i + 1) % len(dirs)]) for i in range(len(dirs))
                if hit[i] and hit[(i + 1) % len(dirs)]]
        cells = np.array(segs, int).reshape(-1, 2)
    else:
        ok = np.all(hit[faces], axis=1)
        cells = remap[faces[ok]]
    return LevelSetMesh(n, verts, cells, nrm, res, x0,
                        dropped=np.nonzero(~hit)[0].tolist(), ray_ids=keep)


# ----------------------------------------------------------------------------
# writers


def write_polyline_csv(mesh: LevelSetMesh, path) -> None:
    """Rows ``x,y,nx,ny`` in ray order."""
    if mesh.dimension != 2:
        raise ValueError("polyline output is 2D only")
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        fh.write("x,y,nx,ny\n")
        for p, q in zip(mesh.vertices.tolist(), mesh.normals.tolist()):
            fh.write(f"{p[0]!r},{p[1]!r},{q[0]!r},{q[1]!r}\n")


def write_obj(mesh: LevelSetMesh, path) -> None:
    """Wavefront OBJ with vertex normals."""
    if mesh.dimension != 3:
        raise ValueError("OBJ output is 3D only")
    with open(Path(path), "w", encoding="utf-8", newline="\n") as fh:
        for p in mesh.vertices.tolist():
            fh.write(f"v {p[0]!r} {p[1]!r} {p[2]!r}\n")
        for q in mesh.normals.tolist():
            fh.write(f"vn {q[0]!r} {q[1]!r} {q[2]!r}\n")
        for a, b, c in (mesh.cells + 1).tolist():
            fh.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")


def write_sidecar(mesh: LevelSetMesh, path, extra: Optional[dict] = None) -> None:
    data = mesh.stats()
    if extra:
        data.update(extra)
    with open(Path(path), "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
