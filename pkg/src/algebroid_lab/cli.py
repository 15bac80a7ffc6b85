"""Command-line front end.

Every command prints one JSON document to stdout (sorted keys, floats with
17 significant digits).  Exit codes: 0 success, 1 validation failure,
2 numerical non-convergence.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

from . import __version__, catalog
from . import expr as ex
from .algebroid import AlgebroidError, anchor_rank, axiom_residuals, isotropy
from .liealg import LieAlgebra, ad_exp, by_name, ce_cohomology_dims, center, d_squared_residual
from .monodromy import (DEFAULT_EPS, DEFAULT_QMAX, Lattice, LeafData, QuadratureError, VerdictThresholds,
                        integrability_verdict, lattice_discreteness, monodromy_lattice, profile_csv,
                        rn_profile)
from .paths import (geodesic, is_homotopy, parallel_transport, reparametrization_variation,
                    validate_apath, detect_period, left_unit_variation)
from .poisson import poisson_jacobi_residual
from .specfile import LoadedSpec, SpecError, load_leaf_file, load_spec

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 1, 2
THREADS_ENV = "ALGEBROID_LAB_THREADS"


# ---------------------------------------------------------------------------
# deterministic JSON


def _encode(obj: Any) -> str:
    if obj is None:
        return "null"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return '"nan"'
        if math.isinf(v):
            return '"inf"' if v > 0 else '"-inf"'
        text = format(v, ".17g")
        return text
    if isinstance(obj, str):
        import json
        return json.dumps(obj)
    if isinstance(obj, dict):
        items = sorted((str(k), v) for k, v in obj.items())
        return "{" + ", ".join(f"{_encode(k)}: {_encode(v)}" for k, v in items) + "}"
    if isinstance(obj, np.ndarray):
        return _encode(obj.tolist())
    if isinstance(obj, (list, tuple)):
        return "[" + ", ".join(_encode(v) for v in obj) + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dumps(obj: Any) -> str:
    return _encode(obj)


# ---------------------------------------------------------------------------
# helpers


def _floats(text: str) -> list[float]:
    text = text.strip()
    if not text:
        return []
    try:
        return [ex.evaluate(ex.parse(t), {}) for t in text.split(",")]
    except ex.ExprError as err:
        raise SpecError(f"bad number list {text!r}: {err}") from None


def _grid(text: str) -> tuple[int, int]:
    parts = text.replace("x", ",").split(",")
    if len(parts) != 2:
        raise SpecError(f"grid must look like 200,400 (got {text!r})")
    return int(parts[0]), int(parts[1])


@contextmanager
def _executor() -> Iterator:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        threads = max(1, int(raw))
    except ValueError:
        threads = 1
    if threads == 1:
        yield map
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        yield pool.map  # preserves input order


def _load(args) -> LoadedSpec:
    if getattr(args, "catalog", None):
        if args.spec:
            raise SpecError("give either a spec file or --catalog, not both")
        bundle = catalog.build(args.catalog, catalog.parse_params(args.param or []))
        return LoadedSpec("catalog", bundle, {"mode": "catalog", "name": args.catalog})
    if not args.spec:
        raise SpecError("a spec file or --catalog NAME is required")
    return load_spec(args.spec)


def _point(spec: LoadedSpec, text: str | None) -> np.ndarray:
    A = spec.bundle.algebroid
    if text is None:
        if len(spec.bundle.default_point) != A.n:
            raise SpecError("--point is required for this input")
        return np.array(spec.bundle.default_point, dtype=float)
    p = np.array(_floats(text), dtype=float)
    if p.shape != (A.n,):
        raise SpecError(f"--point needs {A.n} coordinates")
    return p


def _fiber(spec: LoadedSpec, text: str) -> np.ndarray:
    v = np.array(_floats(text), dtype=float)
    if v.shape != (spec.bundle.algebroid.k,):
        raise SpecError(f"--v needs {spec.bundle.algebroid.k} entries")
    return v


def _leaf(spec: LoadedSpec, args, x: np.ndarray) -> LeafData:
    src = getattr(args, "spheres", "builtin")
    if src and src != "builtin":
        return load_leaf_file(src, spec.bundle.algebroid)
    return spec.bundle.leaf_for(x)


def _lattice(spec: LoadedSpec, args, x: np.ndarray) -> Lattice:
    leaf = _leaf(spec, args, x)
    return monodromy_lattice(spec.bundle.algebroid, x, leaf.spheres, leaf.splitting, leaf.frame,
                             _grid(args.grid))


# ---------------------------------------------------------------------------
# commands


def cmd_axioms(args) -> tuple[dict, int]:
    spec = _load(args)
    A = spec.bundle.algebroid
    res = axiom_residuals(A, args.points, args.seed)
    out = {"algebroid": A.name, **res.as_dict(), "seed": args.seed, "tol": args.tol}
    passed = res.passed(args.tol)
    if spec.bundle.poisson is not None:
        pj = poisson_jacobi_residual(spec.bundle.poisson, args.points, args.seed)
        out["poisson_jacobi"] = pj
        passed = passed and pj < args.tol
    out["passed"] = passed
    return out, EXIT_OK if passed else EXIT_INVALID


def cmd_isotropy(args) -> tuple[dict, int]:
    spec = _load(args)
    A = spec.bundle.algebroid
    x = _point(spec, args.point)
    iso = isotropy(A, x)
    rank = anchor_rank(A, x)
    out = {"point": x, **iso.as_dict(), "anchor_rank": rank.rank,
           "orbit_tangent_basis": rank.orbit_tangent_basis.T,
           "center_dim": int(center(iso.algebra).shape[1]) if iso.dim else 0,
           "isotropy_label": spec.bundle.isotropy_label(x)}
    return out, EXIT_OK


def cmd_geodesic(args) -> tuple[dict, int]:
    spec = _load(args)
    A = spec.bundle.algebroid
    x = _point(spec, args.point)
    v = _fiber(spec, args.v)
    path = geodesic(A, v, x, args.N, args.t_max)
    out = {"start": x, "v": v, "endpoint": path.end, "t_max": args.t_max, "N": args.N,
           "apath_residual": validate_apath(A, path)}
    if args.period:
        out["period"] = detect_period(A, v, x, args.t_max, args.N)
    if args.out:
        path.to_csv(args.out)
        out["csv"] = str(args.out)
    return out, EXIT_OK


def cmd_homotopy(args) -> tuple[dict, int]:
    spec = _load(args)
    A = spec.bundle.algebroid
    x = _point(spec, args.point)
    v = _fiber(spec, args.v)
    path = geodesic(A, v, x, args.N)
    var = reparametrization_variation(path, M=args.M) if args.family == "reparam" else left_unit_variation(path, M=args.M)
    res = is_homotopy(A, var, args.tol)
    return {"family": args.family, "grid": [args.M, args.N], "tol": args.tol, **res.as_dict()}, EXIT_OK


def cmd_transport(args) -> tuple[dict, int]:
    spec = _load(args)
    A = spec.bundle.algebroid
    x = _point(spec, args.point) if A.n else np.zeros(0)
    v = _fiber(spec, args.v)
    path = geodesic(A, v, x, args.N)
    U = parallel_transport(A, path, args.connection)
    out = {"connection": args.connection, "N": args.N, "transport": U}
    if A.n == 0 and args.connection == "adjoint":
        g = LieAlgebra(A.structure_tensor(np.zeros(0)))
        out["ad_exp_error"] = float(np.linalg.norm(U - ad_exp(g, v), 2))
    return out, EXIT_OK


def _report(spec: LoadedSpec, args, x: np.ndarray, transversal: Sequence[float]) -> dict:
    bundle = spec.bundle
    A = bundle.algebroid
    thresholds = VerdictThresholds(eps=args.eps, q_max=args.qmax)
    lattice = _lattice(spec, args, x)
    samples = []
    if transversal:
        if bundle.point_at is None or bundle.leaf_parameter is None:
            raise SpecError("this input has no leaf parameter; --transversal is not available")
        base = bundle.leaf_parameter(x)
        pts = [bundle.point_at(x, val) for val in transversal]

        def one(p):
            leaf = bundle.leaf_for(p)
            L = monodromy_lattice(A, p, leaf.spheres, leaf.splitting, leaf.frame, _grid(args.grid))
            return lattice_discreteness(L, args.eps, args.qmax).r_N

        with _executor() as mapper:
            rns = list(mapper(one, pts))
        samples = [(abs(val - base), r) for val, r in zip(transversal, rns)]
    report = integrability_verdict(A, x, lattice, samples, thresholds, bundle.isotropy_label(x))
    return report.as_dict()


def cmd_monodromy(args) -> tuple[dict, int]:
    spec = _load(args)
    x = _point(spec, args.point)
    lattice = _lattice(spec, args, x)
    disc = lattice_discreteness(lattice, args.eps, args.qmax)
    out = {"point": x, "generators": lattice.generators, "generator_labels": list(lattice.labels),
           "generator_errors": lattice.errors, "r_N": disc.r_N, "discrete": disc.discrete,
           "discreteness": disc.as_dict(), "grid": list(_grid(args.grid))}
    bundle = spec.bundle
    if bundle.expected_generators:
        out["expected_generators"] = bundle.expected_at(bundle.leaf_parameter(x) if bundle.leaf_parameter else 0.0)
    return out, EXIT_OK


def cmd_verdict(args) -> tuple[dict, int]:
    spec = _load(args)
    x = _point(spec, args.point)
    return _report(spec, args, x, _floats(args.transversal or "")), EXIT_OK


def cmd_profile(args) -> tuple[dict, int]:
    spec = _load(args)
    bundle = spec.bundle
    x = _point(spec, args.point)
    radii = _floats(args.radii or "")
    if radii and bundle.point_at is None:
        raise SpecError("this input has no leaf parameter to vary")
    pts = [bundle.point_at(x, r) for r in radii]
    with _executor() as mapper:
        entries = rn_profile(bundle.algebroid, pts, bundle.leaf_for, _grid(args.grid), args.eps, args.qmax,
                             map_fn=mapper)
    text = profile_csv(entries, radii)
    if args.out:
        Path(args.out).write_text(text)
    rows = [{"r": r, "point": list(e.point), "r_N": e.r_N, "generators": e.generators, "status": e.status,
             "error": e.error} for r, e in zip(radii, entries)]
    return {"rows": rows, "csv": str(args.out) if args.out else None}, EXIT_OK


def cmd_cohomology(args) -> tuple[dict, int]:
    if args.algebra:
        g = by_name(args.algebra)
    else:
        spec = _load(args)
        A = spec.bundle.algebroid
        if A.n != 0:
            raise SpecError("cohomology needs a Lie algebra (an algebroid over a point)")
        g = LieAlgebra(A.structure_tensor(np.zeros(0)), A.name)
    return {"algebra": g.name, "dim": g.dim, "betti": ce_cohomology_dims(g),
            "d_squared_residual": d_squared_residual(g)}, EXIT_OK


def cmd_catalog(args) -> tuple[dict, int]:
    if args.action == "list":
        return {"entries": [{"name": k, "description": e.description, "params": sorted(e.params)}
                            for k, e in sorted(catalog.CATALOG.items())]}, EXIT_OK
    if not args.name:
        raise SpecError("catalog show needs a name")
    bundle = catalog.build(args.name, catalog.parse_params(args.param or []))
    return bundle.summary(), EXIT_OK


# ---------------------------------------------------------------------------


def _input_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("spec", nargs="?", help="JSON spec file")
    p.add_argument("--catalog", help="catalog entry name instead of a spec file")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="catalog parameter (repeatable)")


def _lattice_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--point", help="comma-separated base point (use --point=-1,0,0 for a leading minus)")
    p.add_argument("--spheres", default="builtin", help="'builtin' or a JSON file with a leaf description")
    p.add_argument("--grid", default="200,400", help="quadrature grid N_theta,N_phi")
    p.add_argument("--eps", type=float, default=DEFAULT_EPS)
    p.add_argument("--qmax", type=float, default=DEFAULT_QMAX)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="algebroid-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("axioms", help="sample the anchor and Jacobi identities")
    _input_args(p)
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-8)
    p.set_defaults(func=cmd_axioms)

    p = sub.add_parser("isotropy", help="isotropy Lie algebra and anchor rank at a point")
    _input_args(p)
    p.add_argument("--point")
    p.set_defaults(func=cmd_isotropy)

    p = sub.add_parser("geodesic", help="integrate a geodesic A-path")
    _input_args(p)
    p.add_argument("--point")
    p.add_argument("--v", required=True, help="comma-separated fiber vector")
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--t-max", type=float, default=1.0)
    p.add_argument("--period", action="store_true", help="also detect the first return time up to t-max")
    p.add_argument("--out", help="write the path as CSV")
    p.set_defaults(func=cmd_geodesic)

    p = sub.add_parser("homotopy", help="check a reparametrization family of a geodesic")
    _input_args(p)
    p.add_argument("--point")
    p.add_argument("--v", required=True)
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--M", type=int, default=100)
    p.add_argument("--family", choices=["reparam", "unit"], default="reparam")
    p.add_argument("--tol", type=float, default=1e-5)
    p.set_defaults(func=cmd_homotopy)

    p = sub.add_parser("transport", help="parallel transport along a geodesic")
    _input_args(p)
    p.add_argument("--point")
    p.add_argument("--v", required=True)
    p.add_argument("--N", type=int, default=1000)
    p.add_argument("--connection", choices=["flat", "adjoint"], default="adjoint")
    p.set_defaults(func=cmd_transport)

    p = sub.add_parser("monodromy", help="monodromy lattice at a point")
    _input_args(p)
    _lattice_args(p)
    p.set_defaults(func=cmd_monodromy)

    p = sub.add_parser("verdict", help="integrability report at a point")
    _input_args(p)
    _lattice_args(p)
    p.add_argument("--transversal", help="comma-separated leaf-parameter values near the point")
    p.set_defaults(func=cmd_verdict)

    p = sub.add_parser("profile", help="r_N along a family of leaves")
    _input_args(p)
    _lattice_args(p)
    p.add_argument("--radii", default="", help="comma-separated leaf-parameter values")
    p.add_argument("--out", help="CSV output path")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("cohomology", help="Chevalley-Eilenberg Betti numbers of a Lie algebra")
    _input_args(p)
    p.add_argument("--algebra", help="named algebra: su2, heisenberg, abelian1..3")
    p.set_defaults(func=cmd_cohomology)

    p = sub.add_parser("catalog", help="list or show catalog entries")
    p.add_argument("action", choices=["list", "show"])
    p.add_argument("name", nargs="?")
    p.add_argument("--param", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_catalog)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        out, code = args.func(args)
    except QuadratureError as err:
        print(dumps({"error": str(err), "kind": "numerical"}))
        print(f"error: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SpecError, catalog.CatalogError, AlgebroidError, ex.ExprError, ValueError) as err:
        print(dumps({"error": str(err), "kind": "validation"}))
        print(f"error: {err}", file=sys.stderr)
        return EXIT_INVALID
    print(dumps(out))
    return code


if __name__ == "__main__":
    sys.exit(main())
