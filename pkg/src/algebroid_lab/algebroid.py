"""Lie algebroids over a single coordinate chart.

A rank-k algebroid over an n-dimensional chart is given by its anchor
``b^a_i(x)`` (``rho(e_i) = b^a_i d/dx^a``) and structure functions
``c^i_{jk}(x)`` (``[e_j, e_k] = c^i_{jk} e_i``) with respect to a constant
frame ``e_1..e_k``.  All indices are 0-based in code.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np

from . import expr as ex
from .expr import Expr, ExprLike
from .liealg import RANK_RTOL, LieAlgebra, null_space

TIME = "time"
DEFAULT_TOL = 1e-8


class AlgebroidError(ValueError):
    pass


class AxiomError(AlgebroidError):
    def __init__(self, message: str, residuals: "AxiomResiduals | None" = None):
        self.residuals = residuals
        super().__init__(message)


class IsotropyError(AlgebroidError):
    pass


@dataclass(frozen=True)
class Section:
    """k expression components; may depend on the coordinates and on ``time``."""

    components: tuple[Expr, ...]

    def __init__(self, components: Sequence[ExprLike]):
        object.__setattr__(self, "components", tuple(ex.as_expr(c) for c in components))

    def __len__(self) -> int:
        return len(self.components)

    @classmethod
    def frame(cls, k: int, i: int) -> Section:
        return cls([1.0 if j == i else 0.0 for j in range(k)])

    @classmethod
    def zero(cls, k: int) -> Section:
        return cls([0.0] * k)

    def __add__(self, other: Section) -> Section:
        return Section([a + b for a, b in zip(self.components, other.components)])

    def __sub__(self, other: Section) -> Section:
        return Section([a - b for a, b in zip(self.components, other.components)])

    def scale(self, f: ExprLike) -> Section:
        f = ex.as_expr(f)
        return Section([f * c for c in self.components])

    def compiled(self, coords: Sequence[str]) -> Callable[[np.ndarray, float | np.ndarray], np.ndarray]:
        fn = ex.compile_exprs(self.components, list(coords) + [TIME])
        n = len(coords)

        def evaluate(x: np.ndarray, time: float | np.ndarray = 0.0) -> np.ndarray:
            x = np.asarray(x, dtype=float)
            batch = np.broadcast_shapes(x.shape[:-1], np.shape(time))
            vals = fn(*[x[..., a] for a in range(n)], time)
            return np.moveaxis(np.broadcast_to(vals, (len(self.components),) + batch), 0, -1)

        return evaluate

    def evaluate(self, coords: Sequence[str], x: Sequence[float], time: float = 0.0) -> np.ndarray:
        env = dict(zip(coords, map(float, x)))
        env[TIME] = float(time)
        return np.array([ex.evaluate(c, env) for c in self.components])


def _normalize_structure(structure: Mapping[tuple[int, int, int], ExprLike], k: int) -> dict[tuple[int, int, int], Expr]:
    out: dict[tuple[int, int, int], Expr] = {}
    for (i, j, l), value in structure.items():
        if not (0 <= i < k and 0 <= j < k and 0 <= l < k):
            raise AlgebroidError(f"structure index {(i, j, l)} out of range for rank {k}")
        e = ex.as_expr(value)
        if j == l:
            if not e.is_zero():
                raise AlgebroidError(f"c^{i}_{{{j}{l}}} must vanish (antisymmetry)")
            continue
        key, val = ((i, j, l), e) if j < l else ((i, l, j), -e)
        if key in out:
            raise AlgebroidError(f"structure function {key} given twice")
        if not val.is_zero():
            out[key] = val
    return out


@dataclass(frozen=True, eq=False)
class LocalAlgebroid:
    """Anchor matrix plus structure functions over a coordinate box."""

    coords: tuple[str, ...]
    anchor: tuple[tuple[Expr, ...], ...]
    structure: Mapping[tuple[int, int, int], Expr] = field(repr=False)
    chart_box: tuple[tuple[float, float], ...] = ()
    name: str = ""

    @classmethod
    def build(
        cls,
        coords: Sequence[str],
        anchor: Sequence[Sequence[ExprLike]],
        structure: Mapping[tuple[int, int, int], ExprLike] | None = None,
        chart_box: Sequence[Sequence[float]] | None = None,
        name: str = "",
        rank: int | None = None,
    ) -> LocalAlgebroid:
        """``anchor[i][a]`` is ``b^a_i``; ``structure[(i, j, k)]`` is ``c^i_{jk}``."""
        coords = tuple(coords)
        n = len(coords)
        rows = tuple(tuple(ex.as_expr(v) for v in row) for row in anchor)
        k = len(rows) if rank is None else rank
        if len(rows) != k:
            raise AlgebroidError(f"anchor has {len(rows)} rows, expected rank {k}")
        for row in rows:
            if len(row) != n:
                raise AlgebroidError(f"anchor row has {len(row)} entries, expected {n}")
        if len(set(coords)) != n:
            raise AlgebroidError("coordinate names must be distinct")
        if TIME in coords:
            raise AlgebroidError(f"{TIME!r} is reserved for the time variable of sections")
        box = tuple((float(lo), float(hi)) for lo, hi in (chart_box or [(-1.0, 1.0)] * n))
        if len(box) != n or any(lo >= hi for lo, hi in box):
            raise AlgebroidError("chart_box needs one increasing interval per coordinate")
        struct = _normalize_structure(structure or {}, k)
        allowed = set(coords)
        for e in [v for row in rows for v in row] + list(struct.values()):
            extra = ex.free_vars(e) - allowed
            if extra:
                raise AlgebroidError(f"unknown variable(s) {sorted(extra)} in algebroid data")
        return cls(coords, rows, struct, box, name)

    @property
    def n(self) -> int:
        return len(self.coords)

    @property
    def k(self) -> int:
        return len(self.anchor)

    def c(self, i: int, j: int, l: int) -> Expr:
        if j == l:
            return ex.ZERO
        if j < l:
            return self.structure.get((i, j, l), ex.ZERO)
        return -self.structure.get((i, l, j), ex.ZERO)

    def b(self, a: int, i: int) -> Expr:
        return self.anchor[i][a]

    def with_structure(self, key: tuple[int, int, int], value: ExprLike) -> LocalAlgebroid:
        struct = dict(self.structure)
        i, j, l = key
        if j > l:
            key, value = (i, l, j), -ex.as_expr(value)
        struct[key] = ex.as_expr(value)
        return LocalAlgebroid.build(self.coords, self.anchor, struct, self.chart_box, self.name, rank=self.k)

    def perturbed(self, key: tuple[int, int, int], delta: float) -> LocalAlgebroid:
        i, j, l = key
        return self.with_structure(key, self.c(i, j, l) + delta)

    # -- vectorized numerics ------------------------------------------------

    def _evaluator(self, exprs: list[Expr], shape: tuple[int, ...]) -> Callable[[np.ndarray], np.ndarray]:
        fn = ex.compile_exprs(exprs, self.coords)
        n = self.n

        def evaluate(x: np.ndarray) -> np.ndarray:
            x = np.asarray(x, dtype=float)
            if x.shape[-1] != n:
                raise AlgebroidError(f"points must have {n} coordinates, got shape {x.shape}")
            if x.ndim == 1:  # single point: skip the batch bookkeeping
                return fn(*x).reshape(shape)
            batch = x.shape[:-1]
            vals = fn(*[x[..., a] for a in range(n)])
            if vals.ndim == 1:  # no coordinates: constants only
                vals = vals.reshape((len(exprs),) + (1,) * len(batch))
            vals = np.broadcast_to(vals, (len(exprs),) + batch)
            return np.moveaxis(vals, 0, -1).reshape(batch + shape)

        return evaluate

    @cached_property
    def _anchor_eval(self):
        exprs = [self.anchor[i][a] for a in range(self.n) for i in range(self.k)]
        return self._evaluator(exprs, (self.n, self.k))

    @cached_property
    def _anchor_jac_eval(self):
        exprs = [ex.diff(self.anchor[i][a], self.coords[c])
                 for a in range(self.n) for i in range(self.k) for c in range(self.n)]
        return self._evaluator(exprs, (self.n, self.k, self.n))

    @cached_property
    def _structure_eval(self):
        k = self.k
        exprs = [self.c(i, j, l) for i in range(k) for j in range(k) for l in range(k)]
        return self._evaluator(exprs, (k, k, k))

    @cached_property
    def _structure_jac_eval(self):
        k = self.k
        exprs = [ex.diff(self.c(i, j, l), self.coords[a])
                 for i in range(k) for j in range(k) for l in range(k) for a in range(self.n)]
        return self._evaluator(exprs, (k, k, k, self.n))

    def anchor_matrix(self, x: np.ndarray) -> np.ndarray:
        """``B[..., a, i] = b^a_i(x)`` so that ``rho(alpha) = B @ alpha``."""
        return self._anchor_eval(x)

    def anchor_jacobian(self, x: np.ndarray) -> np.ndarray:
        """``D[..., a, i, c] = d b^a_i / d x^c``."""
        return self._anchor_jac_eval(x)

    def structure_tensor(self, x: np.ndarray) -> np.ndarray:
        """``C[..., i, j, l] = c^i_{jl}(x)``."""
        return self._structure_eval(x)

    def structure_jacobian(self, x: np.ndarray) -> np.ndarray:
        return self._structure_jac_eval(x)

    def sample_points(self, num: int, rng: np.random.Generator) -> np.ndarray:
        lo = np.array([b[0] for b in self.chart_box])
        hi = np.array([b[1] for b in self.chart_box])
        return lo + (hi - lo) * rng.random((num, self.n))

    def in_chart(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo = np.array([b[0] for b in self.chart_box])
        hi = np.array([b[1] for b in self.chart_box])
        return np.all((x >= lo) & (x <= hi), axis=-1)


# ---------------------------------------------------------------------------
# sections


def _check_rank(A: LocalAlgebroid, *sections: Section) -> None:
    for s in sections:
        if len(s) != A.k:
            raise AlgebroidError(f"section has {len(s)} components, algebroid rank is {A.k}")


def anchor_field(A: LocalAlgebroid, alpha: Section) -> tuple[Expr, ...]:
    """rho(alpha) as n expression components."""
    _check_rank(A, alpha)
    comps = []
    for a in range(A.n):
        total: Expr = ex.ZERO
        for i in range(A.k):
            total = total + A.b(a, i) * alpha.components[i]
        comps.append(total)
    return tuple(comps)


def derivative_along(A: LocalAlgebroid, alpha: Section, f: ExprLike) -> Expr:
    """rho(alpha)(f) = sum b^a_j alpha^j df/dx^a."""
    f = ex.as_expr(f)
    total: Expr = ex.ZERO
    for a, comp in enumerate(anchor_field(A, alpha)):
        if comp.is_zero():
            continue
        total = total + comp * ex.diff(f, A.coords[a])
    return total


def anchor_apply(A: LocalAlgebroid, alpha: Section, x: Sequence[float], time: float = 0.0) -> np.ndarray:
    """Tangent vector rho(alpha)(x)."""
    _check_rank(A, alpha)
    B = A.anchor_matrix(np.asarray(x, dtype=float))
    value = B @ alpha.evaluate(A.coords, x, time)
    if not np.all(np.isfinite(value)):
        raise ex.ExprDomainError(f"anchor undefined at {list(x)}")
    return value


def bracket(A: LocalAlgebroid, alpha: Section, beta: Section) -> Section:
    """[alpha, beta]^i = c^i_{jk} alpha^j beta^k + rho(alpha)(beta^i) - rho(beta)(alpha^i)."""
    _check_rank(A, alpha, beta)
    out = []
    for i in range(A.k):
        total: Expr = ex.ZERO
        for (ii, j, l), cijl in A.structure.items():
            if ii != i:
                continue
            total = total + cijl * (alpha.components[j] * beta.components[l]
                                    - alpha.components[l] * beta.components[j])
        total = total + derivative_along(A, alpha, beta.components[i])
        total = total - derivative_along(A, beta, alpha.components[i])
        out.append(total)
    return Section(out)


def evaluate_section(A: LocalAlgebroid, s: Section, points: np.ndarray, time: float = 0.0) -> np.ndarray:
    return s.compiled(A.coords)(np.asarray(points, dtype=float), time)


# ---------------------------------------------------------------------------
# axioms


@dataclass(frozen=True)
class AxiomResiduals:
    max_anchor_compat: float
    max_jacobi: float
    num_points: int
    resampled: int = 0

    def passed(self, tol: float = DEFAULT_TOL) -> bool:
        return self.max_anchor_compat < tol and self.max_jacobi < tol

    def as_dict(self) -> dict:
        return {"max_anchor_compat": self.max_anchor_compat, "max_jacobi": self.max_jacobi,
                "num_points": self.num_points, "resampled": self.resampled}


def frame_residuals(A: LocalAlgebroid, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pointwise anchor-morphism and Jacobi residuals on the constant frame.

    Returns arrays of shape ``(..., n, k, k)`` and ``(..., k, k, k, k)``.
    """
    B = A.anchor_matrix(x)
    dB = A.anchor_jacobian(x)
    C = A.structure_tensor(x)
    dC = A.structure_jacobian(x)
    # [rho e_j, rho e_l]^a = b^c_j d_c b^a_l - b^c_l d_c b^a_j
    vf = np.einsum("...cj,...alc->...ajl", B, dB)
    vf = vf - np.swapaxes(vf, -1, -2)
    rho_bracket = np.einsum("...ijl,...ai->...ajl", C, B)
    anchor_res = vf - rho_bracket
    # [e_i,[e_j,e_l]]^p = c^m_{jl} c^p_{im} + b^a_i d_a c^p_{jl}
    t = np.einsum("...mjl,...pim->...pijl", C, C) + np.einsum("...ai,...pjla->...pijl", B, dC)
    cyc = t + np.moveaxis(t, (-3, -2, -1), (-2, -1, -3)) + np.moveaxis(t, (-3, -2, -1), (-1, -3, -2))
    return anchor_res, cyc


def axiom_residuals(A: LocalAlgebroid, num_points: int = 100, seed: int = 0, max_retries: int = 20) -> AxiomResiduals:
    """Sample the anchor-morphism and Jacobi identities at random chart points."""
    if num_points < 1:
        raise AlgebroidError("num_points must be >= 1")
    rng = np.random.default_rng(seed)
    points = A.sample_points(num_points, rng)
    resampled = 0
    for _ in range(max_retries + 1):
        anchor_res, jac = frame_residuals(A, points)
        anchor_pt = np.abs(anchor_res).reshape(num_points, -1)
        jac_pt = np.abs(jac).reshape(num_points, -1)
        bad = ~(np.all(np.isfinite(anchor_pt), axis=1) & np.all(np.isfinite(jac_pt), axis=1))
        if not bad.any():
            break
        resampled += int(bad.sum())
        points[bad] = A.sample_points(int(bad.sum()), rng)
    else:
        raise AxiomError("structure functions undefined at sampled points after retries")
    a_max = float(anchor_pt.max()) if anchor_pt.size else 0.0
    j_max = float(jac_pt.max()) if jac_pt.size else 0.0
    return AxiomResiduals(a_max, j_max, num_points, resampled)


def leibniz_residual(
    A: LocalAlgebroid,
    alpha: Section,
    beta: Section,
    f: ExprLike,
    points: np.ndarray,
    bracket_fn: Callable[[LocalAlgebroid, Section, Section], Section] = bracket,
) -> float:
    """max |[alpha, f beta] - f [alpha, beta] - rho(alpha)(f) beta| over ``points``."""
    f = ex.as_expr(f)
    lhs = bracket_fn(A, alpha, beta.scale(f))
    rhs = bracket_fn(A, alpha, beta).scale(f) + beta.scale(derivative_along(A, alpha, f))
    diff = evaluate_section(A, lhs - rhs, points)
    return float(np.max(np.abs(diff))) if diff.size else 0.0


# ---------------------------------------------------------------------------
# pointwise linear algebra


@dataclass(frozen=True)
class AnchorRank:
    rank: int
    orbit_tangent_basis: np.ndarray
    singular_values: np.ndarray


def anchor_rank(A: LocalAlgebroid, x: Sequence[float], rtol: float = RANK_RTOL) -> AnchorRank:
    B = A.anchor_matrix(np.asarray(x, dtype=float))
    if B.size == 0:
        return AnchorRank(0, np.zeros((A.n, 0)), np.zeros(0))
    u, s, _ = np.linalg.svd(B)
    rank = int(np.sum(s > rtol * (s[0] + 1.0)))
    return AnchorRank(rank, u[:, :rank].copy(), s)


@dataclass(frozen=True)
class LieAlgebraData:
    """Isotropy algebra: constants in a kernel basis, plus that basis in the fiber."""

    algebra: LieAlgebra
    basis: np.ndarray
    closure_residual: float

    @property
    def dim(self) -> int:
        return self.algebra.dim

    def as_dict(self) -> dict:
        return {"dim": self.dim, "basis": self.basis.T.tolist(),
                "structure_constants": self.algebra.constants.tolist(),
                "closure_residual": self.closure_residual}


def kernel_basis(B: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal kernel basis of B, canonicalized to be close to coordinate axes."""
    import scipy.linalg

    k = B.shape[1]
    raw = null_space(B, rtol) if B.size else np.eye(k)
    m = raw.shape[1]
    if m == 0 or m == k:
        return np.eye(k)[:, :m] if m == k else raw
    proj = raw @ raw.T
    _, _, piv = scipy.linalg.qr(proj, pivoting=True)
    q, _ = np.linalg.qr(proj[:, np.sort(piv[:m])])
    for col in range(m):
        idx = np.argmax(np.abs(q[:, col]))
        if q[idx, col] < 0:
            q[:, col] = -q[:, col]
    return q


def isotropy(A: LocalAlgebroid, x: Sequence[float], tol: float = DEFAULT_TOL) -> LieAlgebraData:
    """Isotropy Lie algebra Ker(rho_x) with the bracket induced by c(x)."""
    x = np.asarray(x, dtype=float)
    B = A.anchor_matrix(x)
    C = A.structure_tensor(x)
    if not (np.all(np.isfinite(B)) and np.all(np.isfinite(C))):
        raise ex.ExprDomainError(f"algebroid data undefined at {x.tolist()}")
    K = kernel_basis(B)
    # brackets of kernel vectors: derivative terms drop because rho vanishes on them
    brk = np.einsum("ijl,jq,lr->iqr", C, K, K)
    coeffs = np.einsum("iq,irs->qrs", K, brk)  # K orthonormal
    recon = np.einsum("iq,qrs->irs", K, coeffs)
    closure = float(np.max(np.abs(recon - brk))) if brk.size else 0.0
    if closure > tol * max(1.0, float(np.max(np.abs(C), initial=0.0))):
        raise IsotropyError(f"bracket does not close on kernel (residual {closure:.3e})")
    anchor_leak = float(np.max(np.abs(B @ brk.reshape(A.k, -1)))) if brk.size and B.size else 0.0
    if anchor_leak > tol * max(1.0, float(np.max(np.abs(B), initial=0.0))):
        raise IsotropyError(f"bracket does not close on kernel (anchor residual {anchor_leak:.3e})")
    coeffs = 0.5 * (coeffs - np.swapaxes(coeffs, 1, 2))
    return LieAlgebraData(LieAlgebra(coeffs, "isotropy"), K, closure)
