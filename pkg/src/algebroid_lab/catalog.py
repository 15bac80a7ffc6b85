"""Ready-made algebroids with their leaves, splittings and expected lattices."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from . import expr as ex
from .algebroid import AxiomError, LocalAlgebroid, frame_residuals
from .expr import Expr, ExprLike
from .liealg import LieAlgebra, by_name
from .monodromy import CenterFrame, LeafData, SphereMap, Splitting
from .poisson import PoissonStructure, cotangent_algebroid

TH, PH = ex.var("theta"), ex.var("phi")
NO_LEAF = LeafData((), None, None)


class CatalogError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ExampleBundle:
    name: str
    algebroid: LocalAlgebroid
    poisson: PoissonStructure | None = None
    params: Mapping[str, object] = field(default_factory=dict)
    description: str = ""
    leaf_for: Callable[[np.ndarray], LeafData] = lambda x: NO_LEAF
    leaf_parameter: Callable[[np.ndarray], float] | None = None
    leaf_parameter_name: str = ""
    point_at: Callable[[np.ndarray, float], np.ndarray] | None = None
    expected_generators: tuple[Expr, ...] = ()
    isotropy_label: Callable[[np.ndarray], str | None] = lambda x: None
    default_point: tuple[float, ...] = ()

    def summary(self) -> dict:
        A = self.algebroid
        return {
            "name": self.name,
            "description": self.description,
            "params": {k: (v if isinstance(v, (int, float, str)) else str(v)) for k, v in self.params.items()},
            "n": A.n,
            "k": A.k,
            "coords": list(A.coords),
            "chart_box": [list(b) for b in A.chart_box],
            "anchor": [[str(e) for e in row] for row in A.anchor],
            "structure": [{"i": i, "j": j, "k": l, "expr": str(e)} for (i, j, l), e in sorted(A.structure.items())],
            "poisson": None if self.poisson is None else
            [{"i": i, "j": j, "expr": str(e)} for (i, j), e in sorted(self.poisson.entries.items())],
            "leaf_parameter": self.leaf_parameter_name or None,
            "expected_generators": [str(e) for e in self.expected_generators],
            "default_point": list(self.default_point),
        }

    def expected_at(self, value: float) -> list[float]:
        env = {self.leaf_parameter_name: float(value)} if self.leaf_parameter_name else {}
        return [ex.evaluate(e, env) for e in self.expected_generators]


def _const(value: ExprLike) -> float:
    e = ex.parse(value) if isinstance(value, str) else ex.as_expr(value)
    return ex.evaluate(e, {})


# ---------------------------------------------------------------------------


def tangent(n: int = 3) -> ExampleBundle:
    n = int(n)
    if n < 1:
        raise CatalogError("tangent bundle needs n >= 1")
    coords = [f"x{i + 1}" for i in range(n)]
    anchor = [[1.0 if a == i else 0.0 for a in range(n)] for i in range(n)]
    A = LocalAlgebroid.build(coords, anchor, {}, [(-1.0, 1.0)] * n, f"tangent({n})")
    return ExampleBundle("tangent", A, params={"n": n}, description="tangent bundle of R^n",
                         isotropy_label=lambda x: "trivial", default_point=(0.0,) * n)


def lie_algebra(g: LieAlgebra | str = "su2") -> ExampleBundle:
    g = by_name(g) if isinstance(g, str) else g
    m = g.dim
    structure = {(i, j, l): float(g.constants[i, j, l])
                 for i in range(m) for j in range(m) for l in range(j + 1, m) if g.constants[i, j, l] != 0.0}
    A = LocalAlgebroid.build([], [[] for _ in range(m)], structure, [], f"lie_algebra({g.name})", rank=m)
    return ExampleBundle("lie_algebra", A, params={"g": g.name}, description="Lie algebra over a point")


def action_algebroid(g: LieAlgebra | str, generators: Sequence[Sequence[ExprLike]], coords: Sequence[str],
                     chart_box: Sequence[Sequence[float]] | None = None, tol: float = 1e-8) -> ExampleBundle:
    """Trivial bundle M x g with anchor v -> generator field of v; requires a Lie homomorphism."""
    g = by_name(g) if isinstance(g, str) else g
    m = g.dim
    if len(generators) != m:
        raise CatalogError(f"need {m} generator fields, got {len(generators)}")
    structure = {(i, j, l): float(g.constants[i, j, l])
                 for i in range(m) for j in range(m) for l in range(j + 1, m) if g.constants[i, j, l] != 0.0}
    A = LocalAlgebroid.build(coords, generators, structure, chart_box, f"action({g.name})", rank=m)
    rng = np.random.default_rng(0)
    anchor_res, _ = frame_residuals(A, A.sample_points(50, rng))
    worst = float(np.abs(anchor_res).max(initial=0.0))
    if worst >= tol:
        raise AxiomError(f"generator fields do not realize the bracket (residual {worst:.3e})")
    return ExampleBundle("action_algebroid", A, params={"g": g.name}, description="action algebroid")


def rotation_action() -> ExampleBundle:
    x, y, z = map(ex.var, "xyz")
    fields = [[0.0, z, -y], [-z, 0.0, x], [y, -x, 0.0]]
    return action_algebroid("su2", fields, "xyz", [(-2.0, 2.0)] * 3)


def vector_field_algebroid(X: Sequence[ExprLike], coords: Sequence[str],
                           chart_box: Sequence[Sequence[float]] | None = None) -> ExampleBundle:
    """Line bundle with [f, g] = f X(g) - X(f) g."""
    A = LocalAlgebroid.build(coords, [list(X)], {}, chart_box, "vector_field", rank=1)
    return ExampleBundle("vector_field", A, params={"X": [str(ex.as_expr(c)) for c in X]},
                         description="line bundle generated by a vector field")


def two_form_algebroid(coords: Sequence[str], omega: Mapping[tuple[int, int], ExprLike],
                       chart_box: Sequence[Sequence[float]] | None = None, tol: float = 1e-8,
                       name: str = "two_form") -> LocalAlgebroid:
    """TM + R with [(X,f),(Y,g)] = ([X,Y], X(g) - Y(f) + omega(X,Y)); omega must be closed."""
    n = len(coords)
    anchor = [[1.0 if a == i else 0.0 for a in range(n)] for i in range(n)] + [[0.0] * n]
    structure = {}
    for (a, b), w in omega.items():
        if a == b:
            continue
        structure[(n, a, b) if a < b else (n, b, a)] = ex.as_expr(w) if a < b else -ex.as_expr(w)
    A = LocalAlgebroid.build(coords, anchor, structure, chart_box, name, rank=n + 1)
    # closedness of omega is the Jacobi identity of this bracket
    _, jac = frame_residuals(A, A.sample_points(100, np.random.default_rng(0)))
    worst = float(np.abs(jac).max(initial=0.0))
    if worst >= tol:
        raise AxiomError(f"two-form is not closed (d omega residual {worst:.3e})")
    return A


def s2xs2(lam: ExprLike = 1.0) -> ExampleBundle:
    lam_v = _const(lam)
    coords = ["th1", "ph1", "th2", "ph2"]
    th1, th2 = ex.var("th1"), ex.var("th2")
    omega = {(0, 1): ex.sin(th1), (2, 3): lam_v * ex.sin(th2)}
    box = [(0.05, math.pi - 0.05), (0.0, 2 * math.pi)] * 2
    A = two_form_algebroid(coords, omega, box, name=f"s2xs2({lam_v:g})")
    n = 4
    sigma = Splitting.from_matrix(A, [[1.0 if a == i else 0.0 for a in range(n)] for i in range(n)] + [[0.0] * n],
                                  "obvious")
    frame = CenterFrame.build([[0.0] * n + [1.0]], ["e_L"])

    def leaf_for(x):
        x = np.asarray(x, dtype=float)
        first = SphereMap.build([TH, PH, x[2], x[3]], "first factor")
        second = SphereMap.build([x[0], x[1], TH, PH], "second factor")
        return LeafData((first, second), sigma, frame)

    return ExampleBundle(
        "s2xs2", A, params={"lambda": str(lam) if isinstance(lam, str) else lam_v},
        description="two-form algebroid on S2 x S2 with omega = dS + lambda dS",
        leaf_for=leaf_for, expected_generators=(ex.const(-4 * math.pi), ex.const(-4 * math.pi * lam_v)),
        isotropy_label=lambda x: "R" if _is_rational(lam_v) else "R (non-discrete quotient)",
        default_point=(1.0, 1.0, 1.0, 1.0))


def _is_rational(v: float, q_max: int = 10 ** 6) -> bool:
    from fractions import Fraction
    f = Fraction(v).limit_denominator(q_max)
    return abs(float(f) - v) < 1e-12 * max(1.0, abs(v))


# ---------------------------------------------------------------------------
# su(2)* and its rescalings


def linear_su2_poisson(chart_box=None) -> PoissonStructure:
    x, y, z = map(ex.var, "xyz")
    return PoissonStructure.build("xyz", {(0, 1): z, (1, 2): x, (2, 0): y},
                                  chart_box or [(-2.1, 2.1)] * 3, "su2*")


def su2_rescaled(a: ExprLike = "1") -> ExampleBundle:
    """a(r) times the linear Poisson structure of su(2)*; ``a`` is an expression in r."""
    a_expr = ex.parse(a) if isinstance(a, str) else ex.as_expr(a)
    extra = ex.free_vars(a_expr) - {"r"}
    if extra:
        raise CatalogError(f"a(r) may only depend on r, found {sorted(extra)}")
    for r in (0.25, 0.5, 1.0, 1.5, 2.0):
        if not ex.evaluate(a_expr, {"r": r}) > 0:
            raise CatalogError(f"a(r) must be positive for r > 0 (a({r}) <= 0)")
    x, y, z = map(ex.var, "xyz")
    r_x = ex.sqrt(x * x + y * y + z * z)
    a_x = ex.substitute(a_expr, {"r": r_x})
    P = linear_su2_poisson().scaled(a_x, "su2_rescaled")
    A = cotangent_algebroid(P, check=False)
    # sigma(X) = X cross x / (a r^2): the Euclidean right inverse of rho = a (x cross .)
    k_ = 1 / (a_x * (x * x + y * y + z * z))
    sigma = Splitting.from_matrix(A, [[0.0, z * k_, -y * k_], [-z * k_, 0.0, x * k_], [y * k_, -x * k_, 0.0]],
                                  "catalog")
    frame = CenterFrame.build([[x / r_x, y / r_x, z / r_x]], ["n"])
    r = ex.var("r")
    a_prime = ex.diff(a_expr, "r")
    # signed value is d/dr of the leaf area 4 pi r / a(r)
    generator = 4 * ex.PI * (a_expr - r * a_prime) / (a_expr * a_expr)

    def radius(p):
        return float(np.linalg.norm(p))

    def leaf_for(p):
        R = radius(p)
        if R == 0.0:
            return NO_LEAF
        sphere = SphereMap.build([R * ex.sin(TH) * ex.cos(PH), R * ex.sin(TH) * ex.sin(PH), R * ex.cos(TH)],
                                 f"S2(r={R:.17g})")
        return LeafData((sphere,), sigma, frame)

    def point_at(p, value):
        p = np.asarray(p, dtype=float)
        R = radius(p)
        direction = p / R if R else np.array([0.0, 0.0, 1.0])
        return direction * float(value)

    def label(p):
        R = radius(p)
        if R == 0.0:
            return "SU(2)" if ex.evaluate(a_expr, {"r": 0.0}) != 0 else "R^3"
        g = ex.evaluate(generator, {"r": R})
        return "R" if abs(g) < 1e-12 else "S^1"

    return ExampleBundle(
        "su2_rescaled", A, P, params={"a": str(a) if isinstance(a, str) else str(a_expr)},
        description="a(r) times the linear Poisson structure on su(2)*",
        leaf_for=leaf_for, leaf_parameter=radius, leaf_parameter_name="r", point_at=point_at,
        expected_generators=(generator,), isotropy_label=label, default_point=(0.0, 0.0, 1.0))


def heisenberg(surface: str = "sphere") -> ExampleBundle:
    """Heisenberg-Poisson manifold S x R with bracket t {f, g}_S."""
    t = ex.var("t")
    if surface == "sphere":
        th = ex.var("th")
        coords = ["th", "ph", "t"]
        P = PoissonStructure.build(coords, {(0, 1): t / ex.sin(th)},
                                   [(0.1, math.pi - 0.1), (0.0, 2 * math.pi), (-3.0, 3.0)], "heisenberg(S2)")
        A = cotangent_algebroid(P, check=False)
        s = ex.sin(th) / t
        sigma = Splitting.from_matrix(A, [[0.0, s, 0.0], [-s, 0.0, 0.0], [0.0, 0.0, 0.0]], "catalog")
        # d(log t) is a flat frame of the centre along each leaf
        frame = CenterFrame.build([[0.0, 0.0, 1 / t]], ["dlog t"])
        expected = (-4 * ex.PI / t,)

        def leaf_for(p):
            if p[2] == 0.0:
                return NO_LEAF
            return LeafData((SphereMap.build([TH, PH, float(p[2])], f"S2 x {{t={p[2]:.17g}}}"),), sigma, frame)

        default = (1.0, 1.0, 1.0)
    elif surface == "plane":
        coords = ["u", "v", "t"]
        P = PoissonStructure.build(coords, {(0, 1): t}, [(-2.0, 2.0), (-2.0, 2.0), (-3.0, 3.0)], "heisenberg(R2)")
        A = cotangent_algebroid(P, check=False)
        expected = ()

        def leaf_for(p):
            return NO_LEAF

        default = (0.0, 0.0, 1.0)
    else:
        raise CatalogError(f"unknown surface {surface!r}; use 'sphere' or 'plane'")

    def point_at(p, value):
        q = np.array(p, dtype=float)
        q[2] = float(value)
        return q

    return ExampleBundle(
        "heisenberg", A, P, params={"surface": surface},
        description=f"Heisenberg-Poisson manifold over the {surface}",
        leaf_for=leaf_for, leaf_parameter=lambda p: float(p[2]), leaf_parameter_name="t", point_at=point_at,
        expected_generators=expected,
        isotropy_label=lambda p: ("R^3 (Heisenberg fibre)" if p[2] == 0 else ("S^1" if surface == "sphere" else "R")),
        default_point=default)


# ---------------------------------------------------------------------------
# registry


@dataclass(frozen=True)
class CatalogEntry:
    builder: Callable[..., ExampleBundle]
    params: Mapping[str, Callable[[str], object]]
    description: str


def _vf_param(text: str) -> list[str]:
    return [s.strip() for s in text.split(",")]


CATALOG: dict[str, CatalogEntry] = {
    "tangent": CatalogEntry(tangent, {"n": int}, "tangent bundle of R^n"),
    "lie_algebra": CatalogEntry(lie_algebra, {"g": str}, "Lie algebra over a point (su2, heisenberg, abelianN)"),
    "action_su2": CatalogEntry(rotation_action, {}, "su(2) acting on R^3 by rotations"),
    "vector_field": CatalogEntry(
        lambda X="1": vector_field_algebroid([ex.parse(X)] if isinstance(X, str) else X, ["x"], [(-1.0, 1.0)]),
        {"X": str}, "line bundle over R generated by X d/dx"),
    "s2xs2": CatalogEntry(s2xs2, {"lambda": str}, "two-form algebroid over S2 x S2"),
    "su2_rescaled": CatalogEntry(su2_rescaled, {"a": str}, "a(r) times the su(2)* Poisson structure"),
    "heisenberg": CatalogEntry(heisenberg, {"surface": str}, "Heisenberg-Poisson manifold over S2 or R2"),
}

_ALIASES = {"lambda": "lam"}


def build(name: str, params: Mapping[str, str] | None = None) -> ExampleBundle:
    try:
        entry = CATALOG[name]
    except KeyError:
        raise CatalogError(f"unknown catalog entry {name!r}; known: {sorted(CATALOG)}") from None
    kwargs = {}
    for key, raw in (params or {}).items():
        if key not in entry.params:
            raise CatalogError(f"{name} has no parameter {key!r}; accepted: {sorted(entry.params)}")
        try:
            kwargs[_ALIASES.get(key, key)] = entry.params[key](raw)
        except ValueError as err:
            raise CatalogError(f"bad value for {key}: {err}") from None
    return entry.builder(**kwargs)


def parse_params(items: Sequence[str]) -> dict[str, str]:
    out = {}
    for item in items:
        if "=" not in item:
            raise CatalogError(f"parameter {item!r} must look like key=value")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def all_examples() -> list[ExampleBundle]:
    """One instance of each of the seven constructors."""
    x = ex.var("x")
    return [
        tangent(3),
        lie_algebra("su2"),
        rotation_action(),
        vector_field_algebroid([x * x + 1], ["x"], [(-1.0, 1.0)]),
        s2xs2(0.6),
        su2_rescaled("exp(r^2/2)"),
        heisenberg("sphere"),
    ]
