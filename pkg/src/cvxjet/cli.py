"""Command line interface.

Exit codes are 0 on success, 2 when the data admit no extension and 1 for
input, output and other operational errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import repro
from .conditions import coercivity_witness, semiglobal_constants
from .envelope import SolverSettings, conjugate_eval
from .errors import CvxJetError, IllDefinedReduction, Infeasible
from .extend import METHODS, ExtendOptions, build_model, model_from_dict
from .jets import Jet, JetSet, Modulus, Subspace
from .surface import (NormalData, level_set_extract, surface_from_normals, tangency_residuals,
                      write_obj, write_polyline_csv, write_sidecar)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


@dataclass(frozen=True)
class RunConfig:
    """Parsed command line.

    Parameters
    ----------
    command : str
    input : Path or None
    output : Path or None
    a : float
        Must be positive.
    k_max : int or None
        At least 1 when given.
    tol : float
        In ``(0, 1e-2]``.
    seed : int
    resolution : int
    method : str
    omega : str
    mk : Path or None
    """

    command: str
    input: Optional[Path] = None
    output: Optional[Path] = None
    a: float = 0.5
    k_max: Optional[int] = None
    tol: float = 1e-13
    seed: int = 0
    resolution: int = 128
    method: str = "ak"
    omega: str = "identity"
    mk: Optional[Path] = None
    points: Optional[str] = None
    lo: Optional[str] = None
    hi: Optional[str] = None
    j_max: int = 5

    def __post_init__(self):
        if not self.a > 0:
            raise ValueError("--a must be positive")
        if self.k_max is not None and self.k_max < 1:
            raise ValueError("--k-max must be at least 1")
        if not 0 < self.tol <= 1e-2:
            raise ValueError("--tol must lie in (0, 1e-2]")
        if self.resolution < 1:
            raise ValueError("--resolution must be positive")
        if self.method not in METHODS:
            raise ValueError(f"--method must be one of {METHODS}")

    def options(self) -> ExtendOptions:
        inner = self.method if self.method in ("ak", "phi", "global") else "ak"
        return ExtendOptions(a=self.a, k_max=self.k_max, inner=inner,
                             settings=SolverSettings(tol=self.tol))


def _num(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    return v


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return _num(obj)


def _emit(obj, path: Optional[Path] = None) -> None:
    text = json.dumps(_clean(obj), indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _read_json(path: Path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def load_input(path: Path) -> tuple[JetSet, Optional[Subspace], list]:
    """Jet set plus the optional ``X`` (list of spanning vectors) and ``aux`` jets."""
    data = _read_json(path)
    js = JetSet.from_dict(data)
    X = None
    if data.get("X") is not None:
        X = Subspace.from_vectors(np.asarray(data["X"], float).reshape(-1, js.dim), js.dim)
    aux = [Jet(a["point"], a["value"], a["gradient"], True) for a in data.get("aux", [])]
    return js, X, aux


def _parse_points(text: str, n: int) -> np.ndarray:
    """Points as ``x1,x2;y1,y2`` or a path to a whitespace separated table."""
    p = Path(text)
    if p.exists():
        return np.loadtxt(p, ndmin=2, delimiter=None).reshape(-1, n)
    rows = [[float(t) for t in r.split(",")] for r in text.split(";") if r.strip()]
    return np.asarray(rows, float).reshape(-1, n)


def _vector(text: Optional[str], n: int, default: float) -> np.ndarray:
    if text is None:
        return np.full(n, default)
    vals = [float(t) for t in text.split(",")]
    return np.full(n, vals[0]) if len(vals) == 1 else np.asarray(vals, float)


def _model(cfg: RunConfig):
    """A model from a manifest (has ``method``) or a fresh build from a jet file."""
    data = _read_json(cfg.input)
    if "method" in data and "jets" in data and isinstance(data["jets"], dict):
        return model_from_dict(data)
    js, X, aux = load_input(cfg.input)
    kw = {}
    if cfg.method in ("projected", "c1omega"):
        kw.update(X=X, aux=aux)
    if cfg.method == "c1omega":
        kw["omega"] = Modulus.parse(cfg.omega)
    if cfg.method == "nonconvex" and cfg.mk is not None:
        kw["mks"] = np.loadtxt(cfg.mk, ndmin=1).tolist()
    return build_model(js, cfg.method, cfg.options(), **kw)


# ----------------------------------------------------------------------------
# commands


def cmd_check(cfg: RunConfig) -> int:
    js, X, aux = load_input(cfg.input)
    js = js.checked()
    report = semiglobal_constants(js, X=X, k_max=cfg.k_max)
    out = report.to_dict()
    out["feasible"] = report.feasible
    if report.feasible:
        w = coercivity_witness(js)
        out["coercivity"] = None if w is None else w.to_dict()
    _emit(out, cfg.output)
    return EXIT_OK if report.feasible else EXIT_INFEASIBLE


def cmd_extend(cfg: RunConfig) -> int:
    model = _model(cfg)
    _emit(model.to_dict(), cfg.output)
    return EXIT_OK


def cmd_eval(cfg: RunConfig) -> int:
    model = _model(cfg)
    if cfg.points is None:
        x = model.jets.points
    else:
        x = _parse_points(cfg.points, model.dim)
    ev = model.evaluate(x)
    _emit({"points": x, "values": ev.values, "gradients": ev.gradients,
           "gaps": ev.gaps, "flags": ev.flags}, cfg.output)
    return EXIT_OK


def grid_points(n: int, lo, hi, resolution: int) -> np.ndarray:
    """Tensor grid with ``resolution`` nodes per axis, last axis fastest."""
    axes = [np.linspace(lo[i], hi[i], resolution) for i in range(n)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def cmd_grid(cfg: RunConfig) -> int:
    model = _model(cfg)
    n = model.dim
    x = grid_points(n, _vector(cfg.lo, n, -2.0), _vector(cfg.hi, n, 2.0), cfg.resolution)
    ev = model.evaluate(x)
    head = ([f"x{i + 1}" for i in range(n)] + ["F"] + [f"dF{i + 1}" for i in range(n)]
            + ["gap", "flags"])
    out = sys.stdout if cfg.output is None else open(cfg.output, "w", newline="", encoding="utf-8")
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(head)
        for p, f, g, gap, fl in zip(x, ev.values, ev.gradients, ev.gaps, ev.flags):
            w.writerow([repr(float(t)) for t in p] + [repr(float(f))]
                       + [repr(float(t)) for t in g] + [repr(float(gap)), "|".join(fl)])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


def cmd_surface(cfg: RunConfig) -> int:
    nd = NormalData.from_dict(_read_json(cfg.input))
    model = surface_from_normals(nd, cfg.options())
    n = nd.dim
    if n not in (2, 3):
        raise ValueError("surface extraction needs dimension 2 or 3")
    span = np.ptp(nd.points, axis=0).max() if len(nd.points) > 1 else 1.0
    centre = nd.points.mean(axis=0)
    lo = _vector(cfg.lo, n, 0.0) if cfg.lo else centre - 2.0 * max(span, 1.0)
    hi = _vector(cfg.hi, n, 0.0) if cfg.hi else centre + 2.0 * max(span, 1.0)
    res = cfg.resolution if n == 2 else min(cfg.resolution, 6)
    mesh = level_set_extract(model, (lo, hi), resolution=res)
    tang = tangency_residuals(model, nd)
    dist = mesh.distance_to(nd.points)
    extra = {"tangency_rad": tang, "distance_to_points": dist, "model": model.to_dict()}
    if cfg.output is None:
        _emit({**mesh.stats(), **extra, "vertices": mesh.vertices, "normals": mesh.normals})
        return EXIT_OK
    if n == 2:
        write_polyline_csv(mesh, cfg.output)
    else:
        write_obj(mesh, cfg.output)
    write_sidecar(mesh, Path(str(cfg.output) + ".json"), _clean(extra))
    return EXIT_OK


def cmd_repro_prop31(cfg: RunConfig) -> int:
    pc = repro.Prop31Config(j_values=tuple(range(1, cfg.j_max + 1)),
                            k_max=cfg.k_max or 3, seed=cfg.seed)
    _emit(repro.run(pc, replace(cfg.options(), inner="ak")), cfg.output)
    return EXIT_OK


def cmd_conjugate(cfg: RunConfig) -> int:
    model = _model(cfg)
    if model.evaluator is None:
        raise ValueError("model is affine; it has no envelope to conjugate")
    g = model.evaluator.g
    v = _parse_points(cfg.points, g.dim) if cfg.points else np.zeros((1, g.dim))
    vals, approx = conjugate_eval(g, v)
    _emit({"v": v, "g_star": vals, "approximate": approx,
           "coordinates": "ambient" if model.lift is None else "reduced"}, cfg.output)
    return EXIT_OK


COMMANDS = {"check": cmd_check, "extend": cmd_extend, "eval": cmd_eval, "grid": cmd_grid,
            "surface": cmd_surface, "repro-prop31": cmd_repro_prop31,
            "conjugate": cmd_conjugate}


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1 so that 2 keeps meaning infeasible."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cvxjet", description="Convex extensions of 1-jets.")
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("input", nargs="?", type=Path,
                   help="jet-set JSON, model manifest or normal-data JSON")
    p.add_argument("-o", "--output", type=Path)
    p.add_argument("--a", type=float, default=0.5)
    p.add_argument("--k-max", type=int)
    p.add_argument("--tol", type=float, default=1e-13)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resolution", type=int, default=None)
    p.add_argument("--method", choices=METHODS, default="ak")
    p.add_argument("--omega", default="identity", help="power:ALPHA, identity or table:PATH")
    p.add_argument("--mk", type=Path, help="file with M_1, M_2, ... for --method nonconvex")
    p.add_argument("--points", help="x1,x2;y1,y2 or a whitespace separated file")
    p.add_argument("--lo", help="lower box corner, comma separated or one number")
    p.add_argument("--hi", help="upper box corner")
    p.add_argument("--j-max", type=int, default=5)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        res = args.resolution
        if res is None:
            res = 401 if args.command == "grid" else 128
        cfg = RunConfig(args.command, args.input, args.output, args.a, args.k_max, args.tol,
                        args.seed, res, args.method, args.omega, args.mk, args.points,
                        args.lo, args.hi, args.j_max)
        if cfg.input is None and cfg.command != "repro-prop31":
            raise ValueError(f"{cfg.command} needs an input file")
        return COMMANDS[cfg.command](cfg)
    except (Infeasible, IllDefinedReduction) as exc:
        witness = getattr(exc, "witness", None)
        _emit({"feasible": False, "error": str(exc), "witness": witness})
        return EXIT_INFEASIBLE
    except (OSError, ValueError, KeyError, CvxJetError) as exc:
        sys.stderr.write(f"cvxjet: error: {exc}\n")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
