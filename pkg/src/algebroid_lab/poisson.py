"""Poisson bivectors, their cotangent algebroids and contravariant integrals.

Conventions: ``{f, g} = sum pi^{ij} d_i f d_j g``; the anchor sends ``dx^i``
to ``sum_a pi^{ia} d_a`` so that ``rho(df) = X_f`` with ``X_f(g) = {f, g}``,
and the frame bracket is ``[dx^i, dx^j] = d pi^{ij}``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.integrate
import scipy.optimize

from . import expr as ex
from .algebroid import TIME, AlgebroidError, LocalAlgebroid
from .expr import Expr, ExprLike
from .paths import APath, _cutoff_functions, concatenate, derivative4

CotangentPath = APath


class PoissonError(AlgebroidError):
    pass


@dataclass(frozen=True, eq=False)
class PoissonStructure:
    coords: tuple[str, ...]
    entries: Mapping[tuple[int, int], Expr] = field(repr=False)
    chart_box: tuple[tuple[float, float], ...] = ()
    name: str = ""

    @classmethod
    def build(cls, coords: Sequence[str], entries: Mapping[tuple[int, int], ExprLike],
              chart_box: Sequence[Sequence[float]] | None = None, name: str = "") -> PoissonStructure:
        """``entries[(i, j)]`` is ``pi^{ij}``; either ordering of a pair may be given, not both."""
        coords = tuple(coords)
        n = len(coords)
        upper: dict[tuple[int, int], Expr] = {}
        for (i, j), value in entries.items():
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise PoissonError(f"bivector index {(i, j)} invalid for dimension {n}")
            e = ex.as_expr(value)
            key, val = ((i, j), e) if i < j else ((j, i), -e)
            if key in upper:
                raise PoissonError(f"bivector entry {key} given twice")
            upper[key] = val
        extra = ex.vars_in(upper.values()) - set(coords)
        if extra:
            raise PoissonError(f"unknown variable(s) {sorted(extra)} in bivector")
        box = tuple((float(lo), float(hi)) for lo, hi in (chart_box or [(-1.0, 1.0)] * n))
        return cls(coords, upper, box, name)

    @property
    def n(self) -> int:
        return len(self.coords)

    def pi(self, i: int, j: int) -> Expr:
        if i == j:
            return ex.ZERO
        if i < j:
            return self.entries.get((i, j), ex.ZERO)
        return -self.entries.get((j, i), ex.ZERO)

    def matrix(self) -> list[list[Expr]]:
        return [[self.pi(i, j) for j in range(self.n)] for i in range(self.n)]

    def scaled(self, factor: ExprLike, name: str = "") -> PoissonStructure:
        f = ex.as_expr(factor)
        return PoissonStructure.build(self.coords, {k: f * v for k, v in self.entries.items()},
                                      self.chart_box, name or self.name)

    @cached_property
    def _eval(self):
        n = self.n
        fn = ex.compile_exprs([self.pi(i, j) for i in range(n) for j in range(n)]
                              + [ex.diff(self.pi(i, j), c) for i in range(n) for j in range(n) for c in self.coords],
                              self.coords)

        def evaluate(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            x = np.asarray(x, dtype=float)
            batch = x.shape[:-1]
            vals = np.broadcast_to(fn(*[x[..., a] for a in range(n)]), (n * n + n ** 3,) + batch)
            vals = np.moveaxis(vals, 0, -1)
            return vals[..., : n * n].reshape(batch + (n, n)), vals[..., n * n:].reshape(batch + (n, n, n))

        return evaluate

    def evaluate(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """``(P[..., i, j], dP[..., i, j, c])`` at the given points."""
        return self._eval(x)

    def sample_points(self, num: int, rng: np.random.Generator) -> np.ndarray:
        lo = np.array([b[0] for b in self.chart_box])
        hi = np.array([b[1] for b in self.chart_box])
        return lo + (hi - lo) * rng.random((num, self.n))


def poisson_bracket(P: PoissonStructure, f: ExprLike, g: ExprLike) -> Expr:
    f, g = ex.as_expr(f), ex.as_expr(g)
    total: Expr = ex.ZERO
    for (i, j), p in P.entries.items():
        fi, fj = ex.diff(f, P.coords[i]), ex.diff(f, P.coords[j])
        gi, gj = ex.diff(g, P.coords[i]), ex.diff(g, P.coords[j])
        total = total + p * (fi * gj - fj * gi)
    return total


def jacobi_tensor(P: PoissonStructure, x: np.ndarray) -> np.ndarray:
    """Cyclic sum over (l, j, k) of pi^{la} d_a pi^{jk}."""
    p, dp = P.evaluate(x)
    t = np.einsum("...la,...jka->...ljk", p, dp)
    return t + np.moveaxis(t, (-3, -2, -1), (-2, -1, -3)) + np.moveaxis(t, (-3, -2, -1), (-1, -3, -2))


def poisson_jacobi_residual(P: PoissonStructure, num_points: int = 100, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    pts = P.sample_points(num_points, rng)
    res = np.abs(jacobi_tensor(P, pts))
    finite = np.all(np.isfinite(res.reshape(num_points, -1)), axis=1)
    if not finite.any():
        raise PoissonError("bivector undefined at every sampled point")
    return float(res[finite].max(initial=0.0))


def cotangent_algebroid(P: PoissonStructure, check: bool = True, tol: float = 1e-8,
                        num_points: int = 100, seed: int = 0) -> LocalAlgebroid:
    if check:
        res = poisson_jacobi_residual(P, num_points, seed)
        if not res < tol:
            raise PoissonError(f"bivector fails the Jacobi identity (residual {res:.3e})")
    n = P.n
    anchor = [[P.pi(i, a) for a in range(n)] for i in range(n)]
    structure: dict[tuple[int, int, int], Expr] = {}
    for (i, j), p in P.entries.items():
        for m, c in enumerate(P.coords):
            d = ex.diff(p, c)
            if not d.is_zero():
                structure[(m, i, j)] = d
    return LocalAlgebroid.build(P.coords, anchor, structure, P.chart_box, P.name or "cotangent", rank=n)


def hamiltonian_vf(P: PoissonStructure, f: ExprLike) -> tuple[Expr, ...]:
    """X_f with X_f(g) = {f, g}."""
    f = ex.as_expr(f)
    grads = [ex.diff(f, c) for c in P.coords]
    comps = []
    for a in range(P.n):
        total: Expr = ex.ZERO
        for i in range(P.n):
            if not grads[i].is_zero():
                total = total + P.pi(i, a) * grads[i]
        comps.append(total)
    return tuple(comps)


def apply_vf(coords: Sequence[str], X: Sequence[ExprLike], g: ExprLike) -> Expr:
    g = ex.as_expr(g)
    total: Expr = ex.ZERO
    for c, comp in zip(coords, X):
        total = total + ex.as_expr(comp) * ex.diff(g, c)
    return total


def lie_derivative_bivector(P: PoissonStructure, X: Sequence[ExprLike]) -> list[list[Expr]]:
    """(L_X pi)^{ij} = X(pi^{ij}) - pi^{aj} d_a X^i - pi^{ia} d_a X^j."""
    X = [ex.as_expr(c) for c in X]
    n = P.n
    dX = [[ex.diff(X[i], P.coords[a]) for a in range(n)] for i in range(n)]
    out = []
    for i in range(n):
        row = []
        for j in range(n):
            total = apply_vf(P.coords, X, P.pi(i, j))
            for a in range(n):
                total = total - P.pi(a, j) * dX[i][a] - P.pi(i, a) * dX[j][a]
            row.append(total)
        out.append(row)
    return out


def is_poisson_vf(P: PoissonStructure, X: Sequence[ExprLike], points: np.ndarray) -> float:
    """max |(L_X pi)^{ij}| over points."""
    L = lie_derivative_bivector(P, X)
    fn = ex.compile_exprs([e for row in L for e in row], P.coords)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    vals = fn(*[pts[:, a] for a in range(P.n)])
    return float(np.abs(vals).max(initial=0.0))


def _field_values(coords: Sequence[str], X: Sequence[ExprLike], x: np.ndarray, t: np.ndarray | None = None) -> np.ndarray:
    names = list(coords) + [TIME]
    fn = ex.compile_exprs(list(X), names)
    time = np.zeros(len(x)) if t is None else t
    vals = fn(*[x[:, a] for a in range(x.shape[1])], time)
    return np.moveaxis(np.broadcast_to(vals, (len(X), len(x))), 0, -1)


def integral_along(P: PoissonStructure, X: Sequence[ExprLike], a: CotangentPath) -> float:
    """Integral of the pairing <a(t), X(gamma(t))> over [0, 1] (composite Simpson)."""
    vals = _field_values(P.coords, X, a.x)
    integrand = np.einsum("ja,ja->j", a.a, vals)
    return float(scipy.integrate.simpson(integrand, x=a.t))


# ---------------------------------------------------------------------------
# moment map


OneForm = Callable[[np.ndarray, np.ndarray], np.ndarray]


def one_form(coords: Sequence[str], components: Sequence[ExprLike]) -> OneForm:
    """Time-dependent 1-form from expressions in the coordinates and ``time``."""
    fn = ex.compile_exprs(list(components), list(coords) + [TIME])
    n = len(components)

    def eta(t: np.ndarray, x: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        x = np.asarray(x, dtype=float)
        vals = fn(*[x[..., a] for a in range(x.shape[-1])], t)
        return np.moveaxis(np.broadcast_to(vals, (n,) + np.broadcast_shapes(x.shape[:-1], t.shape)), 0, -1)

    return eta


def bump_one_forms(coords: Sequence[str]) -> list[OneForm]:
    """dx^i t(1-t) and x^j dx^i t(1-t): vanish at t = 0 and t = 1."""
    n = len(coords)
    bump = ex.var(TIME) * (1 - ex.var(TIME))
    forms = []
    for i in range(n):
        forms.append(one_form(coords, [bump if a == i else 0.0 for a in range(n)]))
    for i in range(n):
        for j in range(n):
            comp = ex.var(coords[j]) * bump
            forms.append(one_form(coords, [comp if a == i else 0.0 for a in range(n)]))
    return forms


def moment_J(P: PoissonStructure, a: CotangentPath, eta: OneForm,
             anchor: LocalAlgebroid | None = None) -> float:
    """<J(a), eta> = integral of <gamma' - pi#(a), eta(t, gamma(t))> dt."""
    A = anchor or cotangent_algebroid(P, check=False)
    sharp = np.einsum("jai,ji->ja", A.anchor_matrix(a.x), a.a)
    gdot = derivative4(a.x, a.h)
    integrand = np.einsum("ja,ja->j", gdot - sharp, eta(a.t, a.x))
    return float(scipy.integrate.simpson(integrand, x=a.t))


def _inverse(fn: Callable[[np.ndarray], np.ndarray], s: np.ndarray) -> np.ndarray:
    out = np.empty_like(s)
    for idx, target in enumerate(s):
        if target <= 0.0:
            out[idx] = 0.0
        elif target >= 1.0:
            out[idx] = 1.0
        else:
            out[idx] = scipy.optimize.brentq(lambda u: float(fn(np.array(u))) - target, 0.0, 1.0, xtol=1e-14)
    return out


def j_cocycle_additivity_check(P: PoissonStructure, a0: CotangentPath, a1: CotangentPath,
                               eta_family: Sequence[OneForm], cutoff: ExprLike | None = None) -> float:
    """max over eta of |J(a1 . a0)(eta) - J(a0)(eta_0) - J(a1)(eta_1)|.

    ``eta_0`` and ``eta_1`` are eta pulled back along the time changes used
    by :func:`concatenate`, so the identity holds exactly in the continuum.
    """
    A = cotangent_algebroid(P, check=False)
    joined = concatenate(a0, a1, cutoff)
    tau, _ = _cutoff_functions(cutoff)
    s0 = _inverse(tau, a0.t)
    s1 = _inverse(tau, a1.t)
    worst = 0.0
    for eta in eta_family:
        j = moment_J(P, joined, eta, A)
        j0 = moment_J(P, a0, lambda t, x: eta(s0 / 2, x), A)
        j1 = moment_J(P, a1, lambda t, x: eta((1 + s1) / 2, x), A)
        worst = max(worst, abs(j - j0 - j1))
    return worst
