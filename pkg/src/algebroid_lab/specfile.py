"""JSON spec files describing an algebroid, a Poisson structure or a catalog entry.

All indices in spec files are 0-based.  Expressions are strings in the
grammar of :mod:`algebroid_lab.expr`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from . import catalog
from . import expr as ex
from .algebroid import LocalAlgebroid
from .catalog import ExampleBundle
from .monodromy import CenterFrame, LeafData, SphereMap, Splitting, pseudo_inverse_splitting
from .poisson import PoissonStructure, cotangent_algebroid

SPEC_VERSION = 1
MODES = ("algebroid", "poisson", "catalog")


class SpecError(ValueError):
    def __init__(self, message: str, location: str = ""):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)


@dataclass(frozen=True, eq=False)
class LoadedSpec:
    mode: str
    bundle: ExampleBundle
    raw: dict


def _expr(value: Any, where: str) -> ex.Expr:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return ex.const(float(value))
    if not isinstance(value, str):
        raise SpecError("expected an expression string or number", where)
    try:
        return ex.parse(value)
    except ex.ExprSyntaxError as err:
        raise SpecError(f"{err} (offset {err.offset})", where) from None
    except ex.ExprError as err:
        raise SpecError(str(err), where) from None


def _require(doc: dict, key: str, where: str) -> Any:
    if key not in doc:
        raise SpecError(f"missing field {key!r}", where)
    return doc[key]


def _int(value: Any, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise SpecError("expected an integer", where)
    return value


def _coords(doc: dict, n: int) -> list[str]:
    coords = _require(doc, "coords", "coords")
    if not isinstance(coords, list) or len(coords) != n or not all(isinstance(c, str) for c in coords):
        raise SpecError(f"expected a list of {n} names", "coords")
    return coords


def _box(doc: dict, n: int) -> list[tuple[float, float]] | None:
    box = doc.get("chart_box")
    if box is None:
        return None
    if not isinstance(box, list) or len(box) != n:
        raise SpecError(f"expected {n} intervals", "chart_box")
    out = []
    for i, iv in enumerate(box):
        if not isinstance(iv, list) or len(iv) != 2:
            raise SpecError("expected [lo, hi]", f"chart_box[{i}]")
        out.append((float(iv[0]), float(iv[1])))
    return out


def _leaf(doc: dict | None, A: LocalAlgebroid, where: str = "leaf") -> LeafData | None:
    if doc is None:
        return None
    spheres = []
    for s_idx, s in enumerate(doc.get("spheres", [])):
        loc = f"{where}.spheres[{s_idx}]"
        comps = _require(s, "components", loc)
        if not isinstance(comps, list) or len(comps) != A.n:
            raise SpecError(f"expected {A.n} components", loc)
        spheres.append(SphereMap.build([_expr(c, f"{loc}.components[{i}]") for i, c in enumerate(comps)],
                                       s.get("label", f"sphere {s_idx}")))
    sigma: Splitting | None = None
    split = doc.get("splitting")
    if split == "pseudo-inverse" or (isinstance(split, dict) and "metric" in split):
        metric = np.asarray(split["metric"], dtype=float) if isinstance(split, dict) else None
        sigma = pseudo_inverse_splitting(A, None, metric)
    elif isinstance(split, list):
        if len(split) != A.k:
            raise SpecError(f"expected {A.k} rows", f"{where}.splitting")
        sigma = Splitting.from_matrix(A, [[_expr(v, f"{where}.splitting[{i}][{a}]") for a, v in enumerate(row)]
                                          for i, row in enumerate(split)])
    elif split is not None:
        raise SpecError("expected a k x n matrix, 'pseudo-inverse' or {'metric': ...}", f"{where}.splitting")
    frame = None
    if "center_frame" in doc:
        vecs = doc["center_frame"]
        frame = CenterFrame.build([[_expr(v, f"{where}.center_frame[{p}][{i}]") for i, v in enumerate(vec)]
                                   for p, vec in enumerate(vecs)])
    if spheres and (sigma is None or frame is None):
        raise SpecError("spheres need a splitting and a center_frame", where)
    return LeafData(tuple(spheres), sigma, frame)


def load_spec_doc(doc: dict) -> LoadedSpec:
    if not isinstance(doc, dict):
        raise SpecError("spec file must be a JSON object")
    version = doc.get("version", SPEC_VERSION)
    if version != SPEC_VERSION:
        raise SpecError(f"unsupported version {version!r}", "version")
    mode = _require(doc, "mode", "")
    if mode not in MODES:
        raise SpecError(f"mode must be one of {MODES}", "mode")

    if mode == "catalog":
        name = _require(doc, "name", "")
        params = {k: str(v) for k, v in doc.get("params", {}).items()}
        try:
            bundle = catalog.build(name, params)
        except (catalog.CatalogError, ex.ExprError) as err:
            raise SpecError(str(err), "name") from None
        return LoadedSpec(mode, bundle, doc)

    n = _int(_require(doc, "n", ""), "n")
    coords = _coords(doc, n)
    box = _box(doc, n)
    if mode == "poisson":
        entries = {}
        for idx, item in enumerate(_require(doc, "bivector", "")):
            loc = f"bivector[{idx}]"
            i, j = _int(_require(item, "i", loc), loc + ".i"), _int(_require(item, "j", loc), loc + ".j")
            if not i < j:
                raise SpecError("bivector entries need i < j", loc)
            entries[(i, j)] = _expr(_require(item, "expr", loc), loc + ".expr")
        try:
            P = PoissonStructure.build(coords, entries, box, doc.get("name", "poisson"))
            A = cotangent_algebroid(P, check=False)
        except ValueError as err:
            raise SpecError(str(err), "bivector") from None
    else:
        k = _int(_require(doc, "k", ""), "k")
        anchor_doc = _require(doc, "anchor", "")
        if not isinstance(anchor_doc, list) or len(anchor_doc) != k:
            raise SpecError(f"expected {k} rows", "anchor")
        anchor = []
        for i, row in enumerate(anchor_doc):
            if not isinstance(row, list) or len(row) != n:
                raise SpecError(f"expected {n} entries", f"anchor[{i}]")
            anchor.append([_expr(v, f"anchor[{i}][{a}]") for a, v in enumerate(row)])
        structure = {}
        for idx, item in enumerate(doc.get("structure", [])):
            loc = f"structure[{idx}]"
            i = _int(_require(item, "i", loc), loc + ".i")
            j = _int(_require(item, "j", loc), loc + ".j")
            l = _int(_require(item, "k", loc), loc + ".k")
            if not j < l:
                raise SpecError("structure entries need j < k", loc)
            structure[(i, j, l)] = _expr(_require(item, "expr", loc), loc + ".expr")
        try:
            A = LocalAlgebroid.build(coords, anchor, structure, box, doc.get("name", "algebroid"), rank=k)
        except ValueError as err:
            raise SpecError(str(err)) from None
        P = None
    leaf = _leaf(doc.get("leaf"), A)
    bundle = ExampleBundle(doc.get("name", mode), A, P, description=f"{mode} spec file",
                           leaf_for=(lambda x, leaf=leaf: leaf) if leaf else (lambda x: catalog.NO_LEAF),
                           default_point=tuple(float(v) for v in doc.get("point", [])))
    return LoadedSpec(mode, bundle, doc)


def load_spec(path: str | Path) -> LoadedSpec:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as err:
        raise SpecError(f"invalid JSON: {err.msg} (line {err.lineno}, column {err.colno})", str(path)) from None
    except OSError as err:
        raise SpecError(str(err), str(path)) from None
    return load_spec_doc(doc)


def load_leaf_file(path: str | Path, A: LocalAlgebroid) -> LeafData:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise SpecError(str(err), str(path)) from None
    return _leaf(doc.get("leaf", doc), A, "spheres file")
