"""Convex (and not necessarily convex) extensions of 1-jets.

Every method builds ``g = min_y piece_y`` and evaluates ``F = conv(g)``
through :class:`~cvxjet.envelope.EnvelopeEvaluator`.

* ``ak``: quadratic pieces of curvature ``A_k(y) + 4 max|xi| + 2a``.
* ``global``: quadratic pieces of curvature equal to the least global constant.
* ``phi``: pieces ``t + <xi, x - y> + phi_y(x) + a|x - y|^2``.
* ``c1omega``: quadratic pieces plus ``a theta(|x - y|)`` for a modulus ``omega``.
* ``projected``: any of the above in the coordinates of a subspace ``X``,
  lifted by ``F(x) = F_X(P x) + <v, x>``.
* ``nonconvex``: the convex pipeline applied to ``(f + psi, G + grad psi)``
  followed by subtraction of ``psi``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import qmc

from .conditions import (CoercivityGrid, FeasibilityReport, augment, coercivity_witness,
                         k_of, semiglobal_constants)
from .envelope import (EnvelopeEvaluator, GFunction, PhiBlock, QuadraticBlock,
                       RadialBlock, SolverSettings)
from .errors import (IllDefinedReduction, Infeasible, InvalidJetSet, SpanDeficient,
                     SpanNotContained, SpanUnfixable)
from .jets import Jet, JetSet, Modulus, Subspace, span_of_gradient_differences
from .smoothing import phi_build

METHODS = ("ak", "phi", "global", "projected", "c1omega", "nonconvex")
# tolerance for merging jets with the same projection
MERGE_TOL = 1e-10
CONSISTENCY_TOL = 1e-8
R_CAP = 2.0 ** 20


@dataclass(frozen=True)
class ExtendOptions:
    """Construction options.

    Parameters
    ----------
    a : float
        Weight of the extra ``a|x - y|^2`` term, must be positive.
    k_max : int, optional
        Largest ball index for the ``A_k`` table.
    inner : {"ak", "phi", "global"}
        Formula used inside the subspace for the projected and nonconvex paths.
    settings : SolverSettings
    """

    a: float = 0.5
    k_max: Optional[int] = None
    inner: str = "ak"
    settings: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError(f"a must be positive, got {self.a}")
        if self.k_max is not None and self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.inner not in ("ak", "phi", "global"):
            raise ValueError(f"unknown inner method {self.inner!r}")

    def to_dict(self) -> dict:
        return {"a": self.a, "k_max": self.k_max, "inner": self.inner,
                "tol": self.settings.tol}


@dataclass(frozen=True)
class Lift:
    """``F(x) = F_X(B^T x) + <v, x>`` for an orthonormal basis ``B`` of ``X``."""

    X: Subspace
    v: np.ndarray

    def to_dict(self) -> dict:
        return {"X_basis": self.X.basis.T.tolist(), "v": np.asarray(self.v).tolist()}


@dataclass(frozen=True)
class ReducedJetSet:
    """Jets in the coordinates of ``X`` after removing the slope ``v``.

    ``index`` maps every input jet to its reduced jet.
    """

    X: Subspace
    v: np.ndarray
    jets: JetSet
    index: np.ndarray


def reduce_jets(js: JetSet, X: Subspace, v) -> ReducedJetSet:
    """Coordinates ``z = B^T y``, values ``t - <v, y>`` and gradients ``B^T (xi - v)``.

    Jets with the same projection are merged.

    Raises
    ------
    SpanNotContained
        Some ``xi - v`` leaves ``X``.
    IllDefinedReduction
        Two jets with the same projection carry different gradients.
    Infeasible
        Same projection and gradient but different reduced values.
    """
    v = np.asarray(v, float)
    B = X.basis
    G = js.gradients - v
    scale = 1.0 + float(np.max(np.abs(js.gradients)))
    if np.max(np.abs(G - (G @ B) @ B.T), initial=0.0) > CONSISTENCY_TOL * scale:
        raise SpanNotContained("gradient differences leave the subspace X")
    z = js.points @ B
    fb = js.values - js.points @ v
    gb = G @ B
    reps: list[int] = []
    index = np.empty(len(js), int)
    for i in range(len(js)):
        hit = -1
        for r, j in enumerate(reps):
            if np.linalg.norm(z[i] - z[j]) <= MERGE_TOL * (1.0 + np.linalg.norm(z[j])):
                hit = r
                break
        if hit < 0:
            reps.append(i)
            index[i] = len(reps) - 1
            continue
        j = reps[hit]
        if np.linalg.norm(gb[i] - gb[j]) > CONSISTENCY_TOL * scale:
            raise IllDefinedReduction(
                f"jets {j} and {i} share a projection but have different gradients")
        if abs(fb[i] - fb[j]) > CONSISTENCY_TOL * (1.0 + abs(fb[j])):
            raise Infeasible(f"jets {j} and {i} share a projection but have different values",
                             {"z": j, "y": i, "x": js.jets[i].point.tolist(),
                              "z_point": js.jets[j].point.tolist(), "kind": "value"})
        index[i] = hit
    aux = js.auxiliary_mask
    red = [Jet(z[j], fb[j], gb[j], bool(np.all(aux[index == r])))
           for r, j in enumerate(reps)]
    base = int(index[js.base_point_index])
    return ReducedJetSet(X, v, JetSet(X.dim, red, base), index)


# ----------------------------------------------------------------------------
# subtrahend for the nonconvex path


@dataclass(frozen=True)
class LadderPsi:
    """``psi(x) = sum_k (1 + M_{8k}) (|R(x - c)| - (k - 1))_+^2``.

    ``ladder[j-1]`` is ``M_j``; indices past the end reuse the last value.
    Sums over ``k`` use prefix sums, so large ``R`` costs nothing extra.
    """

    ladder: tuple
    center: np.ndarray
    R: float = 1.0

    def __post_init__(self):
        lad = tuple(float(m) for m in self.ladder)
        if not lad or any(m < 0 or not math.isfinite(m) for m in lad):
            raise ValueError("M_k ladder must be nonempty, finite and nonnegative")
        object.__setattr__(self, "ladder", lad)
        object.__setattr__(self, "center", np.asarray(self.center, float))

    def rescaled(self, R: float) -> "LadderPsi":
        return replace(self, R=float(R))

    def coefficient(self, k):
        k = np.asarray(k, int)
        j = np.minimum(8 * k, len(self.ladder)) - 1
        return 1.0 + np.asarray(self.ladder)[j]

    def _sums(self, K):
        """``S_p(K) = sum_{k<=K} c_k k^p`` for ``p = 0, 1, 2``."""
        kc = len(self.ladder) // 8
        ks = np.arange(1, kc + 1)
        c = self.coefficient(ks) if kc else np.zeros(0)
        pre = [np.concatenate([[0.0], np.cumsum(c * ks ** p)]) for p in range(3)]
        clast = 1.0 + self.ladder[-1]
        Kh = np.minimum(K, kc)
        out = [pre[p][Kh] for p in range(3)]
        # tail k = kc+1..K with constant coefficient
        Kt = np.maximum(K, kc).astype(float)
        a = float(kc)
        out[0] = out[0] + clast * (Kt - a)
        out[1] = out[1] + clast * (Kt * (Kt + 1) - a * (a + 1)) / 2.0
        out[2] = out[2] + clast * (Kt * (Kt + 1) * (2 * Kt + 1) - a * (a + 1) * (2 * a + 1)) / 6.0
        return out

    def evaluate(self, x):
        """Value and gradient at rows of ``x``."""
        x = np.atleast_2d(np.asarray(x, float))
        u = self.R * (x - self.center)
        r = np.linalg.norm(u, axis=1)
        # terms with k - 1 < r
        K = np.floor(r).astype(int) + 1
        K = np.where(r == np.floor(r), K - 1, K)
        K = np.maximum(K, 0)
        s0, s1, s2 = self._sums(K)
        rp = r + 1.0
        val = rp * rp * s0 - 2.0 * rp * s1 + s2
        dr = 2.0 * (rp * s0 - s1)
        with np.errstate(invalid="ignore", divide="ignore"):
            e = np.where(r[:, None] > 0, u / np.where(r > 0, r, 1.0)[:, None], 0.0)
        return val, self.R * dr[:, None] * e

    def to_dict(self) -> dict:
        return {"ladder": list(self.ladder), "center": self.center.tolist(), "R": self.R}


@dataclass(frozen=True)
class ZeroPsi:
    """``psi = 0``; the nonconvex path then reduces to the convex one."""

    dim: int

    def rescaled(self, R: float) -> "ZeroPsi":
        return self

    def evaluate(self, x):
        x = np.atleast_2d(np.asarray(x, float))
        return np.zeros(len(x)), np.zeros_like(x)

    def to_dict(self) -> dict:
        return {"zero": True}


# ----------------------------------------------------------------------------
# model


@dataclass
class ModelEval:
    values: np.ndarray
    gradients: np.ndarray
    gaps: np.ndarray
    flags: list


@dataclass
class ExtensionModel:
    """A constructed extension ``F`` with value and gradient queries.

    Attributes
    ----------
    method : str
    dim : int
        Ambient dimension.
    a : float
    A : list of (int, float)
        Monotone ``A_k`` table used by the construction (empty for ``global``).
    evaluator : EnvelopeEvaluator or None
        Works in ``X`` coordinates when ``lift`` is set; ``None`` when ``X = {0}``.
    lift : Lift or None
    psi : LadderPsi, ZeroPsi or None
    constant : float
        Value of ``F_X`` when ``X = {0}``.
    """

    method: str
    dim: int
    a: float
    A: list
    evaluator: Optional[EnvelopeEvaluator]
    jets: JetSet
    options: ExtendOptions
    lift: Optional[Lift] = None
    psi: Optional[object] = None
    constant: float = 0.0
    report: Optional[FeasibilityReport] = None
    inner_jets: Optional[JetSet] = None
    global_M: Optional[float] = None
    curvatures: Optional[np.ndarray] = None
    flags: list = field(default_factory=list)
    build_args: dict = field(default_factory=dict)

    def evaluate(self, x) -> ModelEval:
        x = np.atleast_2d(np.asarray(x, float))
        if x.shape[1] != self.dim:
            x = x.reshape(-1, self.dim)
        B = len(x)
        z = x if self.lift is None else x @ self.lift.X.basis
        if self.evaluator is None:
            vals = np.full(B, self.constant)
            grads = np.zeros((B, z.shape[1]))
            gaps = np.zeros(B)
            flags = [[] for _ in range(B)]
        else:
            r = self.evaluator.evaluate(z)
            vals, grads, gaps, flags = r.values, r.gradients, r.gaps, r.flags
        if self.lift is not None:
            vals = vals + x @ self.lift.v
            grads = grads @ self.lift.X.basis.T + self.lift.v
        if self.psi is not None:
            pv, pg = self.psi.evaluate(x)
            vals = vals - pv
            grads = grads - pg
        return ModelEval(vals, grads, gaps, flags)

    def value(self, x) -> np.ndarray:
        return self.evaluate(x).values

    def gradient(self, x) -> np.ndarray:
        return self.evaluate(x).gradients

    def __call__(self, x):
        return self.value(x)

    @property
    def convex(self) -> bool:
        return self.method != "nonconvex"

    def to_dict(self) -> dict:
        """JSON manifest; :func:`model_from_dict` rebuilds the same model."""
        lift = self.lift.to_dict() if self.lift is not None else None
        return {"method": self.method, "a": self.a,
                "A": [[k, a if math.isfinite(a) else "inf"] for k, a in self.A],
                "global_M": self.global_M, "lift": lift,
                "psi": None if self.psi is None else self.psi.to_dict(),
                "flags": list(self.flags), "dim": self.dim,
                "options": self.options.to_dict(),
                "build": self.build_args,
                "jets": self.jets.to_dict()}


def model_from_dict(data: dict) -> ExtensionModel:
    """Rebuild a model from its manifest by rerunning the construction."""
    js = JetSet.from_dict(data["jets"])
    o = data.get("options", {})
    opts = ExtendOptions(a=float(o.get("a", 0.5)), k_max=o.get("k_max"),
                         inner=o.get("inner", "ak"),
                         settings=SolverSettings(tol=float(o.get("tol", 1e-13))))
    b = data.get("build", {})
    return build_model(js, data["method"], opts, **_decode_build(b, js.dim))


def _encode_modulus(m: Modulus) -> dict:
    return {"kind": m.kind, "alpha": m.alpha, "t": list(m.table_t), "w": list(m.table_w)}


def _decode_build(b: dict, n: int) -> dict:
    out = {}
    if b.get("X") is not None:
        out["X"] = Subspace(n, np.asarray(b["X"], float).reshape(-1, n).T)
    if b.get("aux"):
        out["aux"] = [Jet(a["point"], a["value"], a["gradient"], True) for a in b["aux"]]
    if b.get("omega") is not None:
        m = b["omega"]
        out["omega"] = Modulus(m["kind"], m["alpha"], tuple(m["t"]), tuple(m["w"]))
    if b.get("mks") is not None:
        out["mks"] = b["mks"]
    if b.get("psi_zero"):
        out["psi"] = ZeroPsi(n)
    return out


# ----------------------------------------------------------------------------
# construction


def _quadratic_core(js: JetSet, method: str, a: float, k_max, omega=None):
    """Pieces in full-span coordinates; returns ``(g, report, curvatures, global_M)``."""
    n = js.dim
    span = span_of_gradient_differences(js)
    if span.dim < n:
        raise SpanDeficient(
            f"gradient differences span dimension {span.dim} < {n}; "
            "use extend_with_projection")
    report = semiglobal_constants(js, k_max=k_max)
    if not report.feasible:
        raise Infeasible("jets admit no convex extension", report.infeasibility_witness)
    y, t, xi = js.points, js.values, js.gradients
    gnorm = float(np.max(np.linalg.norm(xi, axis=1)))
    ks = np.array([k_of(r) for r in np.linalg.norm(y, axis=1)], int)
    if ks.max() > report.k_max:
        report = semiglobal_constants(js, k_max=int(ks.max()))
    A = np.array([report.A(int(k)) for k in ks])
    if method == "global":
        M = report.global_constant
        if not math.isfinite(M):
            raise Infeasible("global constant is infinite", report.infeasibility_witness)
        M = max(M, 1e-12)
        return GFunction([QuadraticBlock(y, t, xi, np.full(len(t), M))]), report, None, M
    if method == "ak":
        curv = A + 4.0 * gnorm + 2.0 * a
        return GFunction([QuadraticBlock(y, t, xi, curv)]), report, curv, None
    if method == "c1omega":
        K = A + 4.0 * gnorm
        return GFunction([RadialBlock(y, t, xi, K, a, omega)]), report, K, None
    if method == "phi":
        fam = phi_build(js, report)
        return GFunction([PhiBlock(fam, a)], js), report, 2.0 * (fam.A + a), None
    raise ValueError(f"unknown method {method!r}")


def build_model(js: JetSet, method: str, options: Optional[ExtendOptions] = None,
                X: Optional[Subspace] = None, aux: Sequence[Jet] = (),
                omega: Optional[Modulus] = None, mks=None, psi=None) -> ExtensionModel:
    """Dispatch on ``method``; used by the CLI and for manifest round trips."""
    options = options or ExtendOptions()
    if method in ("ak", "phi", "global"):
        return extend_c11loc(js, replace(options, inner=method))
    if method == "projected":
        return extend_with_projection(js, X, aux, options)
    if method == "c1omega":
        return extend_c1omega(js, omega or Modulus.identity(), X, aux, options)
    if method == "nonconvex":
        return extend_nonconvex(js, mks=mks, psi=psi, options=options)
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def extend_c11loc(js: JetSet, options: Optional[ExtendOptions] = None) -> ExtensionModel:
    """Convex extension when the gradient differences span the whole space.

    ``options.inner`` selects the formula: ``ak`` (default) uses quadratic
    pieces of curvature ``A_k(y) + 4 max|xi| + 2a``; ``phi`` uses the smooth
    ``phi_y`` family; ``global`` uses the least global constant.

    Raises
    ------
    SpanDeficient
        The gradient differences do not span ``R^n``.
    Infeasible
        Some pair constant is infinite; the witness is attached.
    """
    options = options or ExtendOptions()
    js = js.checked()
    method = options.inner
    g, report, curv, M = _quadratic_core(js, method, options.a, options.k_max)
    ev = EnvelopeEvaluator(g, options.settings)
    flags = [] if g.exact_conjugate else ["approximate-capable"]
    return ExtensionModel(method, js.dim, options.a, list(report.a_sequence), ev, js, options,
                          report=report, inner_jets=js, global_M=M, curvatures=curv,
                          flags=flags)


def extend_quadratic_phi(js: JetSet, A, options: Optional[ExtendOptions] = None
                         ) -> ExtensionModel:
    """Extension with user-given quadratic ``phi_y = A_y |x - y|^2``.

    The pieces are paraboloids of curvature ``2(A_y + a)``. The caller is
    responsible for the tangent-plane inequality; interpolation holds when it does.
    """
    options = options or ExtendOptions()
    js = js.checked()
    A = np.broadcast_to(np.asarray(A, float), (len(js),)).copy()
    if np.any(A < 0) or not np.all(np.isfinite(A)):
        raise ValueError("phi coefficients must be finite and nonnegative")
    if span_of_gradient_differences(js).dim < js.dim:
        raise SpanDeficient("gradient differences do not span R^n")
    curv = 2.0 * (A + options.a)
    g = GFunction([QuadraticBlock(js.points, js.values, js.gradients, curv)])
    return ExtensionModel("phi", js.dim, options.a, [], EnvelopeEvaluator(g, options.settings),
                          js, options, inner_jets=js, curvatures=curv,
                          flags=["user-phi"])


def _reduced_model(js: JetSet, X: Optional[Subspace], aux: Sequence[Jet],
                   options: ExtendOptions, method: str, inner: str,
                   omega: Optional[Modulus] = None) -> ExtensionModel:
    js = js.checked()
    n = js.dim
    Y = span_of_gradient_differences(js)
    if X is None:
        X = Y
    if not X.contains(Y):
        raise SpanNotContained(f"gradient span (dim {Y.dim}) is not contained in X (dim {X.dim})")
    if aux or Y.dim < X.dim:
        full = augment(js, list(aux), X)
    else:
        full = js
    v = X.Q @ full.base.gradient
    red = reduce_jets(full, X, v)
    build = {"X": X.basis.T.tolist(),
             "aux": [j.to_dict() for j in aux]}
    if omega is not None:
        build["omega"] = _encode_modulus(omega)
    lift = Lift(X, v)
    if X.dim == 0:
        c = float(red.jets.values[0])
        return ExtensionModel(method, n, options.a, [], None, js, options, lift=lift,
                              constant=c, inner_jets=red.jets, flags=["affine"],
                              build_args=build)
    g, report, curv, M = _quadratic_core(red.jets, inner, options.a, options.k_max, omega)
    ev = EnvelopeEvaluator(g, options.settings)
    flags = [] if g.exact_conjugate else ["approximate-capable"]
    return ExtensionModel(method, n, options.a, list(report.a_sequence), ev, js, options,
                          lift=lift, report=report, inner_jets=red.jets, global_M=M,
                          curvatures=curv, flags=flags, build_args=build)


def extend_with_projection(js: JetSet, X: Optional[Subspace] = None, aux: Sequence[Jet] = (),
                           options: Optional[ExtendOptions] = None) -> ExtensionModel:
    """Extension whose coercive directions are a subspace ``X``.

    Parameters
    ----------
    js : JetSet
    X : Subspace, optional
        Defaults to the span of the gradient differences.
    aux : sequence of Jet
        Extra jets needed when the gradient span is smaller than ``X``.
    options : ExtendOptions
        ``options.inner`` selects the formula used inside ``X``.

    Returns
    -------
    ExtensionModel
        With ``F(x + w) = F(x) + <v, w>`` for ``w`` orthogonal to ``X``.
    """
    options = options or ExtendOptions()
    return _reduced_model(js, X, aux, options, "projected", options.inner)


def extend_c1omega(js: JetSet, omega: Modulus, X: Optional[Subspace] = None,
                   aux: Sequence[Jet] = (), options: Optional[ExtendOptions] = None
                   ) -> ExtensionModel:
    """Extension with pieces ``t + <xi, x - y> + (K/2)|P(x - y)|^2 + a theta(|P(x - y)|)``.

    ``K = A_k(y) + 4 max|xi|`` and ``theta`` is the primitive of ``omega``.
    With ``omega(t) = t`` this is the ``ak`` formula at half the weight ``a``.
    """
    options = options or ExtendOptions()
    if X is None and not aux and span_of_gradient_differences(js).dim == js.dim:
        X = Subspace.full(js.dim)
    return _reduced_model(js, X, aux, options, "c1omega", "c1omega", omega)


def default_ladder(js: JetSet, center, k_top: int) -> list:
    """Whitney-type seminorms ``M_j`` for ``j = 1..k_top`` as a stand-in for ``Lip(grad F|B_j)``."""
    from .conditions import whitney_seminorm
    return [max(whitney_seminorm(js, j, center), 0.0) for j in range(1, k_top + 1)]


def _affine_base(js: JetSet) -> int:
    """Index of a jet ``x0`` such that ``{y - x0}`` spans ``R^n``."""
    P = js.points
    for i in range(len(js)):
        D = P - P[i]
        if np.linalg.matrix_rank(D, tol=1e-10 * (1.0 + np.abs(P).max())) == js.dim:
            return i
    raise InvalidJetSet("the nonconvex path needs n + 1 affinely independent points")


def extend_nonconvex(js: JetSet, mks: Optional[Sequence[float]] = None, psi=None,
                     options: Optional[ExtendOptions] = None) -> ExtensionModel:
    """``C^{1,1}_loc`` extension of an arbitrary jet as ``conv(...) - psi``.

    Parameters
    ----------
    js : JetSet
        Needs ``n + 1`` affinely independent points.
    mks : sequence of float, optional
        Ladder ``M_1, M_2, ...`` of local Lipschitz bounds; extended with
        its last value. Defaults to Whitney-type seminorms of the data.
    psi : object, optional
        Explicit subtrahend with ``evaluate`` and ``rescaled``; overrides ``mks``.

    Raises
    ------
    SpanUnfixable
        The shifted gradients do not span ``R^n`` for any ``R <= 2**20``.
    Infeasible
        The shifted jet admits no convex extension.
    """
    options = options or ExtendOptions()
    js = js.checked()
    n = js.dim
    i0 = _affine_base(js)
    x0 = js.points[i0]
    build: dict = {}
    if psi is None:
        if mks is None:
            r = float(np.max(np.linalg.norm(js.points - x0, axis=1)))
            mks = default_ladder(js, x0, 8 * (int(math.floor(r)) + 2))
        psi = LadderPsi(tuple(mks), x0)
        build["mks"] = list(psi.ladder)
    elif isinstance(psi, ZeroPsi):
        build["psi_zero"] = True
    R = 1.0
    while True:
        p = psi.rescaled(R)
        pv, pg = p.evaluate(js.points)
        shifted = JetSet.from_arrays(js.points, js.values + pv, js.gradients + pg,
                                     js.base_point_index, js.auxiliary_mask)
        if span_of_gradient_differences(shifted).dim == n:
            break
        if isinstance(psi, ZeroPsi) or R >= R_CAP:
            raise SpanUnfixable(f"shifted gradients do not span R^{n} (R = {R:g})")
        R *= 2.0
    inner = extend_c11loc(shifted, options)
    model = replace(inner, method="nonconvex", jets=js, psi=p, build_args=build,
                    flags=list(inner.flags) + ([f"rescaled R={R:g}"] if R > 1 else []))
    return model


# ----------------------------------------------------------------------------
# seminorm estimates


def _ball_samples(n: int, count: int, seed: int) -> np.ndarray:
    """Scrambled Sobol points in the unit ball."""
    m = max(4, int(math.ceil(math.log2(max(count, 2) * (2.0 ** n)))))
    pts = qmc.Sobol(n, scramble=True, seed=seed).random_base2(m) * 2.0 - 1.0
    pts = pts[np.linalg.norm(pts, axis=1) <= 1.0]
    return pts[:count]


def rho_k_estimate(model, k: int, samples: int = 400, seed: int = 0, center=None,
                   refine: int = 6, min_sep: float = 1e-3) -> float:
    """Sampled lower bound on the Lipschitz constant of ``grad F`` on ``B(x0, k)``.

    For ``k = 0`` returns ``|F(x0)| + |grad F(x0)|``. ``x0`` defaults to the
    base point of the model's jets. Pairs closer than ``min_sep * k`` are
    skipped so that solver noise in the gradients is not amplified.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    x0 = model.jets.base.point if center is None else np.asarray(center, float)
    if k == 0:
        r = model.evaluate(x0[None])
        return float(abs(r.values[0]) + np.linalg.norm(r.gradients[0]))
    n = model.dim
    rng = np.random.default_rng(seed)
    pts = x0 + k * _ball_samples(n, samples, seed)
    grads = model.gradient(pts)
    best, bx, bz = 0.0, None, None
    for i in range(0, len(pts), 256):
        dx = np.linalg.norm(pts[i:i + 256, None] - pts[None], axis=-1)
        dg = np.linalg.norm(grads[i:i + 256, None] - grads[None], axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            q = np.where(dx > min_sep * k, dg / dx, 0.0)
        j = np.unravel_index(np.argmax(q), q.shape)
        if q[j] > best:
            best, bx, bz = float(q[j]), pts[i + j[0]], pts[j[1]]
    if bx is None:
        return 0.0
    # refine around the incumbent pair with shrinking perturbations
    for _ in range(refine):
        h = max(0.5 * np.linalg.norm(bx - bz), 2.0 * min_sep * k)
        cand = bx + h * rng.standard_normal((64, n)) / math.sqrt(n)
        off = cand - x0
        nrm = np.linalg.norm(off, axis=1)
        cand = np.where((nrm > k)[:, None], x0 + off * (k / np.maximum(nrm, 1e-300))[:, None], cand)
        g = model.gradient(np.vstack([bx[None], cand]))
        dx = np.linalg.norm(cand - bx, axis=1)
        dg = np.linalg.norm(g[1:] - g[0], axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            q = np.where(dx > min_sep * k, dg / dx, 0.0)
        j = int(np.argmax(q))
        if q[j] > best:
            best, bz = float(q[j]), cand[j]
    return best


def eta_radius(R: float, nu: Callable[[float], float], a: float, R0: float) -> float:
    """Radius beyond which jets do not affect the infimum on ``B(0, R)``."""
    return R + (R + R0) * math.sqrt(1.0 + nu(R) / (2.0 * a))


def seminorm_bound(nu: Callable[[float], float], delta: float, n: int, k: float, z0_data,
                   a: float = 0.5, eta: Optional[Callable[[float], float]] = None) -> float:
    """Upper bound on ``Lip(grad F | B(0, k))`` from the construction constants.

    Parameters
    ----------
    nu : callable
        Nondecreasing bound ``R -> M_R`` on the Lipschitz constants of ``grad phi_y``.
    delta : float
        Coercivity constant of the minimal extension at ``z0``.
    n : int
        Dimension.
    k : float
        Radius, taken as at least ``|z0|``.
    z0_data : tuple
        ``(|z0|, f(z0), |G(z0)|)``.
    a : float
    eta : callable, optional
        Defaults to ``R + (R + |z0|) sqrt(1 + nu(R)/2a)``.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    R0, f0, g0 = (float(t) for t in z0_data)
    k = max(float(k), R0)
    if eta is None:
        eta = lambda R: eta_radius(R, nu, a, R0)  # noqa: E731
    inner = (n + 1) * (k + (n + 1) * (abs(f0) + 2 * k * g0 + 2 * k * k * nu(k)) / delta
                       + 1.0 / delta ** 2)
    return (n + 1) * nu(eta(inner))


def model_nu(model: ExtensionModel) -> tuple[Callable[[float], float], float]:
    """``(nu, a)`` for a model built from quadratic pieces.

    ``nu(R)`` is the largest Lipschitz constant of ``grad phi_y`` over jets
    in ``B(0, R)``. Pieces of curvature ``c`` are read as
    ``phi_y + a|x - y|^2`` with ``phi_y = ((c - 2a)/2)|x - y|^2``; for the
    global formula ``a = M/4`` is used.
    """
    js = model.inner_jets
    if model.method == "nonconvex":
        raise ValueError("seminorm bound is not defined for the nonconvex path")
    if model.global_M is not None:
        a = model.global_M / 4.0
        c = np.full(len(js), model.global_M / 2.0)
    elif model.curvatures is not None and model.options.inner == "ak" and model.method != "c1omega":
        a = model.a
        c = np.asarray(model.curvatures) - 2.0 * a
    else:
        raise ValueError(f"no closed-form nu for method {model.method!r}")
    r = np.linalg.norm(js.points, axis=1)
    order = np.argsort(r)
    rs, cs = r[order], np.maximum.accumulate(c[order])
    rmin = float(rs[0])

    def nu(R: float) -> float:
        i = np.searchsorted(rs, max(R, rmin) + 1e-12, side="right") - 1
        return float(cs[i])
    return nu, a


def model_seminorm_bound(model: ExtensionModel, k: float,
                         grid: Optional[CoercivityGrid] = None) -> float:
    """:func:`seminorm_bound` with constants read off a quadratic-piece model.

    The bound is for the function inside ``X`` (if any); the lift does not
    increase the Lipschitz constant. Returns ``inf`` when no coercivity
    constant is found.
    """
    if model.evaluator is None:
        return 0.0
    js = model.inner_jets
    nu, a = model_nu(model)
    z0 = js.base
    wit = coercivity_witness(js, grid=grid, base=z0.point)
    if wit is None:
        return math.inf
    data = (float(np.linalg.norm(z0.point)), z0.value, float(np.linalg.norm(z0.gradient)))
    return seminorm_bound(nu, wit.delta, js.dim, k, data, a)


def mu_upper_bound(js: JetSet, k: int, report: Optional[FeasibilityReport] = None,
                   center=None, samples: int = 2000, seed: int = 0) -> float:
    """Upper bound on the trace functional ``mu_k`` from the constructed ``phi_y`` family.

    Largest sampled spectral norm of ``hess phi_y`` on ``B(x0, k)`` over jets
    with ``|y - x0| <= k``. ``x0`` defaults to the origin.
    """
    report = report or semiglobal_constants(js)
    fam = phi_build(js, report)
    n = js.dim
    x0 = np.zeros(n) if center is None else np.asarray(center, float)
    pts = x0 + k * _ball_samples(n, samples, seed)
    sel = np.nonzero(np.linalg.norm(js.points - x0, axis=1) <= k + 1e-12)[0]
    best = 0.0
    for i in sel:
        _, _, H = fam.evaluate(int(i), pts, hessian=True)
        best = max(best, float(np.max(np.linalg.norm(H, ord=2, axis=(1, 2)))))
    return best
