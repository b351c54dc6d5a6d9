"""Finite reproduction of the seminorm counterexample in the plane.

The set is ``E = E1 u E2`` with ``E1 = {|x| >= e^y}`` and
``E2 = {(+-1, n) : n = 1, 2, ...}``. For each ``j`` the jet is ``|x|`` with
gradient ``(sign x, 0)`` on ``E1`` and on ``E2`` up to height ``j + 1``, and
``2(y - j - 1)`` with gradient ``(0, 2)`` above. Quadratic functions
``phi = A |.|^2`` with ``A = max(1/(2|u|), 5/4)`` certify convex extendability.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .extend import ExtendOptions, extend_quadratic_phi, rho_k_estimate
from .jets import JetSet

REGIONS = ("E1-", "E1+", "E2-", "E2+", "E2top")


@dataclass(frozen=True)
class Prop31Config:
    """Sampling and truncation parameters.

    ``E1`` is truncated to ``|x| <= x_max``, ``|y| <= y_max`` and ``E2`` to ``y <= y_max``.
    """

    j_values: tuple = (1, 2, 3, 4, 5)
    x_max: float = 4.0
    y_max: int = 8
    n_y: int = 7
    n_x: int = 2
    samples_per_region: int = 30
    v_spread: float = 3.0
    grid_n: int = 201
    grid_half: float = 10.0
    k_max: int = 3
    rho_samples: int = 300
    seed: int = 0


def phi_coefficient(u) -> np.ndarray:
    """``A = max(1/(2|u|), 5/4)``."""
    u = np.abs(np.asarray(u, float))
    return np.maximum(0.5 / u, 1.25)


def jet_value(j: int, u, v):
    """Value and gradient of the ``j``-th jet at points of ``E``."""
    u = np.asarray(u, float)
    v = np.asarray(v, float)
    top = (np.abs(u) == 1.0) & (v > j + 1) & (np.abs(u) < np.exp(v))
    f = np.where(top, 2.0 * (v - j - 1), np.abs(u))
    g = np.where(top[:, None], np.array([0.0, 2.0]),
                 np.stack([np.sign(u), np.zeros_like(u)], axis=1))
    return f, g


def sample_regions(j: int, cfg: Prop31Config) -> dict:
    """Points ``(u, v)`` drawn from each region of ``E`` for the ``j``-th jet.

    ``E2`` regions are finite; all of their points up to the sample count are used.
    """
    rng = np.random.default_rng(cfg.seed + j)
    m = cfg.samples_per_region
    out = {}
    for name, s in (("E1-", -1.0), ("E1+", 1.0)):
        v = rng.uniform(-cfg.v_spread, cfg.v_spread, m)
        u = s * (np.exp(v) + rng.uniform(0.0, 5.0, m))
        out[name] = np.stack([u, v], axis=1)
    low = np.arange(1, j + 2, dtype=float)[:m]
    out["E2-"] = np.stack([-np.ones_like(low), low], axis=1)
    out["E2+"] = np.stack([np.ones_like(low), low], axis=1)
    hi = np.arange(j + 2, j + 2 + (m + 1) // 2, dtype=float)
    top = np.concatenate([np.stack([np.ones_like(hi), hi], 1), np.stack([-np.ones_like(hi), hi], 1)])
    out["E2top"] = top[:m]
    return out


def h_functions(j: int, u: float, v: float, A: float, x, y) -> dict:
    """The differences ``piece - tangent plane`` that must be nonnegative.

    Returns the ones relevant to the region of ``(u, v)`` keyed by index 1..9.
    """
    q = A * ((x - u) ** 2 + (y - v) ** 2)
    lin = 2.0 * (y - j - 1)
    ax = np.abs(x)
    if abs(u) == 1.0 and float(v).is_integer() and v >= 1:
        if v > j + 1:
            return {9: lin + q - ax}
        if u < 0:
            return {5: -x + q - ax, 7: -x + q - lin}
        return {6: x + q - ax, 8: x + q - lin}
    if u < 0:
        return {1: -x + q - ax, 3: -x + q - lin}
    return {2: x + q - ax, 4: x + q - lin}


def check_inequalities(cfg: Prop31Config) -> dict:
    """Minimum of each ``h_i`` over the grid, samples and ``j`` values."""
    t = np.linspace(-cfg.grid_half, cfg.grid_half, cfg.grid_n)
    X, Y = np.meshgrid(t, t, indexing="ij")
    mins = {i: math.inf for i in range(1, 10)}
    for j in cfg.j_values:
        for pts in sample_regions(j, cfg).values():
            for u, v in pts:
                A = float(phi_coefficient(u))
                for i, h in h_functions(j, float(u), float(v), A, X, Y).items():
                    mins[i] = min(mins[i], float(h.min()))
    return mins


def fixture_jets(j: int, cfg: Prop31Config) -> JetSet:
    """Finite sample of ``E`` with the ``j``-th jet, base point ``(1, 1)``."""
    pts = []
    for v in np.linspace(-cfg.v_spread, min(cfg.v_spread, math.log(cfg.x_max)), cfg.n_y):
        for u in np.linspace(math.exp(v), cfg.x_max, cfg.n_x):
            pts += [(u, v), (-u, v)]
    for n in range(1, cfg.y_max + 1):
        pts += [(1.0, float(n)), (-1.0, float(n))]
    P = np.unique(np.array(pts), axis=0)
    f, g = jet_value(j, P[:, 0], P[:, 1])
    base = int(np.nonzero((P[:, 0] == 1.0) & (P[:, 1] == 1.0))[0][0])
    return JetSet.from_arrays(P, f, g, base)


def mu_bound_table(js: JetSet, k_max: int) -> list:
    """``sup 2A`` over jets in ``B(0, k)``; ``k = 0`` gives ``|f| + |G|`` at the base."""
    A = phi_coefficient(js.points[:, 0])
    r = np.linalg.norm(js.points, axis=1)
    out = [abs(js.base.value) + float(np.linalg.norm(js.base.gradient))]
    for k in range(1, k_max + 1):
        sel = r <= k + 1e-12
        out.append(float(2.0 * A[sel].max()) if np.any(sel) else 0.0)
    return out


def run(cfg: Prop31Config = Prop31Config(), options: ExtendOptions = ExtendOptions()) -> dict:
    """Check the inequalities, build every ``F_j`` and tabulate seminorm estimates."""
    mins = check_inequalities(cfg)
    rows = []
    for j in cfg.j_values:
        js = fixture_jets(j, cfg)
        model = extend_quadratic_phi(js, phi_coefficient(js.points[:, 0]), options)
        ev = model.evaluate(js.points)
        mu = mu_bound_table(js, cfg.k_max)
        rho = [rho_k_estimate(model, k, samples=cfg.rho_samples, seed=cfg.seed,
                              center=np.zeros(2)) for k in range(1, cfg.k_max + 1)]
        rows.append({
            "j": j, "jets": len(js),
            "interp_value_err": float(np.max(np.abs(ev.values - js.values))),
            "interp_grad_err": float(np.max(np.abs(ev.gradients - js.gradients))),
            "mu_bound": mu,
            "mu_limit": [max(math.exp(k), 3.0) for k in range(cfg.k_max + 1)],
            "rho": rho})
    return {"config": asdict(cfg), "h_min": {str(i): v for i, v in mins.items()},
            "A_at_(1,1)": float(phi_coefficient(1.0)), "table": rows}
