"""Splittings, curvature, monodromy lattices and the integrability verdict.

Curvature follows ``Omega(X, Y) = sigma([X, Y]) - [sigma X, sigma Y]``.  When
sigma is a k x n matrix field ``S`` and X, Y are tangent to the leaf this is
the tensor

    Omega(X, Y) = (D_Y S) X - (D_X S) Y - c(S X, S Y),

which is what the quadrature evaluates.  :func:`curvature` computes the same
quantity through the symbolic algebroid bracket as an independent route.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Sequence

import numpy as np

from . import expr as ex
from .algebroid import (AlgebroidError, LocalAlgebroid, Section, anchor_rank, bracket,
                        isotropy)
from .expr import Expr, ExprLike
from .liealg import RANK_RTOL, center

THETA, PHI = "theta", "phi"
DEFAULT_GRID = (200, 400)
DEFAULT_EPS = 1e-9
DEFAULT_QMAX = 1e6
GCD_NOISE_FACTOR = 10.0
SIGN_CONVENTION = "Omega(X,Y) = sigma([X,Y]) - [sigma(X), sigma(Y)]"


class MonodromyError(AlgebroidError):
    pass


class SplittingError(MonodromyError):
    pass


class LocalSystemError(MonodromyError):
    pass


class QuadratureError(MonodromyError):
    pass


# ---------------------------------------------------------------------------
# splittings


@dataclass(frozen=True, eq=False)
class Splitting:
    """Right inverse of the anchor on leaf tangent vectors.

    Either ``matrix`` (k rows of n expressions, ``sigma(d/dx^a) = sum_i
    matrix[i][a] e_i``) or ``metric`` (constant positive-definite k x k fiber
    metric, sigma = metric-least-squares inverse of the anchor) is set.
    """

    A: LocalAlgebroid
    matrix: tuple[tuple[Expr, ...], ...] | None = None
    metric: np.ndarray | None = None
    label: str = ""

    @classmethod
    def from_matrix(cls, A: LocalAlgebroid, rows: Sequence[Sequence[ExprLike]], label: str = "") -> Splitting:
        mat = tuple(tuple(ex.as_expr(v) for v in row) for row in rows)
        if len(mat) != A.k or any(len(r) != A.n for r in mat):
            raise SplittingError(f"splitting matrix must be {A.k} x {A.n}")
        extra = ex.vars_in(v for r in mat for v in r) - set(A.coords)
        if extra:
            raise SplittingError(f"unknown variable(s) {sorted(extra)} in splitting")
        return cls(A, mat, None, label)

    def is_symbolic(self) -> bool:
        return self.matrix is not None

    @cached_property
    def _sym_eval(self):
        A = self.A
        vals = [self.matrix[i][a] for i in range(A.k) for a in range(A.n)]
        ders = [ex.diff(self.matrix[i][a], c) for i in range(A.k) for a in range(A.n) for c in A.coords]
        f0 = A._evaluator(vals, (A.k, A.n))
        f1 = A._evaluator(ders, (A.k, A.n, A.n))
        return f0, f1

    @cached_property
    def _weight(self) -> np.ndarray:
        g = np.asarray(self.metric, dtype=float)
        w, v = np.linalg.eigh(g)
        if np.any(w <= 0):
            raise SplittingError("fiber metric must be positive definite")
        return (v / np.sqrt(w)) @ v.T  # g^{-1/2}

    def evaluate(self, x: np.ndarray, derivative: bool = True) -> tuple[np.ndarray, np.ndarray | None]:
        """``S[..., i, a]`` and optionally ``dS[..., i, a, c] = d S^i_a / dx^c``."""
        if self.matrix is not None:
            f0, f1 = self._sym_eval
            return f0(x), (f1(x) if derivative else None)
        W = self._weight
        M = self.A.anchor_matrix(x) @ W  # n x k
        Mp = np.linalg.pinv(M, rcond=RANK_RTOL)
        S = W @ Mp
        if not derivative:
            return S, None
        dM = np.einsum("...aic,ij->...ajc", self.A.anchor_jacobian(x), W)
        n, k = M.shape[-2:]
        P_row = np.eye(n) - M @ Mp  # projector onto coker
        P_col = np.eye(k) - Mp @ M
        dMc = np.moveaxis(dM, -1, -3)  # [..., c, a, j]
        MpT = np.swapaxes(Mp, -1, -2)[..., None, :, :]
        Mp_ = Mp[..., None, :, :]
        dMT = np.swapaxes(dMc, -1, -2)
        dMp = (-Mp_ @ dMc @ Mp_
               + Mp_ @ MpT @ dMT @ P_row[..., None, :, :]
               + P_col[..., None, :, :] @ dMT @ MpT @ Mp_)
        dS = np.moveaxis(W @ dMp, -3, -1)
        return S, dS

    def section(self, X: Sequence[ExprLike]) -> Section:
        """sigma(X) as a section, for a vector field X (symbolic splittings only)."""
        if self.matrix is None:
            raise SplittingError("symbolic sections need a matrix splitting")
        comps = []
        for i in range(self.A.k):
            total: Expr = ex.ZERO
            for a, Xa in enumerate(X):
                total = total + self.matrix[i][a] * ex.as_expr(Xa)
            comps.append(total)
        return Section(comps)


def pseudo_inverse_splitting(A: LocalAlgebroid, leaf_points: np.ndarray | Callable[[int], np.ndarray] | None = None,
                             metric: np.ndarray | None = None, label: str = "pseudo-inverse",
                             num_samples: int = 32) -> Splitting:
    """Metric least-squares right inverse of the anchor; checks constant rank on leaf samples."""
    g = np.eye(A.k) if metric is None else np.asarray(metric, dtype=float)
    if g.shape != (A.k, A.k) or not np.allclose(g, g.T):
        raise SplittingError("metric must be a symmetric k x k matrix")
    sigma = Splitting(A, None, g, label)
    _ = sigma._weight
    if leaf_points is not None:
        pts = leaf_points(num_samples) if callable(leaf_points) else np.atleast_2d(leaf_points)
        ranks = {anchor_rank(A, p).rank for p in pts}
        if len(ranks) > 1:
            raise SplittingError(f"anchor rank varies over the leaf samples: {sorted(ranks)}")
    return sigma


def splitting_residual(sigma: Splitting, points: np.ndarray) -> float:
    """max |rho(sigma(X)) - X| over orbit tangent vectors X at the points."""
    A = sigma.A
    worst = 0.0
    for p in np.atleast_2d(points):
        U = anchor_rank(A, p).orbit_tangent_basis
        if U.size == 0:
            continue
        S, _ = sigma.evaluate(p, derivative=False)
        worst = max(worst, float(np.abs(A.anchor_matrix(p) @ S @ U - U).max()))
    return worst


# ---------------------------------------------------------------------------
# curvature


def curvature_tensor(A: LocalAlgebroid, sigma: Splitting, x: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Omega(X, Y) at (batches of) points for tangent vectors X, Y."""
    return _curvature_terms(A, sigma, x, X, Y)[0]


def _curvature_terms(A, sigma, x, X, Y):
    S, dS = sigma.evaluate(x)
    C = A.structure_tensor(x)
    SX = np.einsum("...ia,...a->...i", S, X)
    SY = np.einsum("...ia,...a->...i", S, Y)
    t1 = np.einsum("...iac,...a,...c->...i", dS, X, Y)
    t2 = np.einsum("...iac,...a,...c->...i", dS, Y, X)
    t3 = np.einsum("...ijl,...j,...l->...i", C, SX, SY)
    return t1 - t2 - t3, np.abs(t1) + np.abs(t2) + np.abs(t3)


def vector_field_bracket(coords: Sequence[str], X: Sequence[ExprLike], Y: Sequence[ExprLike]) -> list[Expr]:
    X = [ex.as_expr(v) for v in X]
    Y = [ex.as_expr(v) for v in Y]
    out = []
    for a in range(len(coords)):
        total: Expr = ex.ZERO
        for c, name in enumerate(coords):
            total = total + X[c] * ex.diff(Y[a], name) - Y[c] * ex.diff(X[a], name)
        out.append(total)
    return out


def curvature(A: LocalAlgebroid, sigma: Splitting, X: Sequence[ExprLike], Y: Sequence[ExprLike],
              x: Sequence[float]) -> np.ndarray:
    """sigma([X, Y]) - [sigma X, sigma Y] at x, through the symbolic bracket."""
    XY = vector_field_bracket(A.coords, X, Y)
    omega = sigma.section(XY) - bracket(A, sigma.section(X), sigma.section(Y))
    return omega.evaluate(A.coords, x)


# ---------------------------------------------------------------------------
# spheres and centre frames


@dataclass(frozen=True, eq=False)
class SphereMap:
    """Map (theta, phi) -> chart point representing a class in pi_2 of a leaf."""

    components: tuple[Expr, ...]
    label: str = ""
    theta_range: tuple[float, float] = (0.0, math.pi)
    phi_range: tuple[float, float] = (0.0, 2 * math.pi)

    @classmethod
    def build(cls, components: Sequence[ExprLike], label: str = "",
              theta_range: tuple[float, float] = (0.0, math.pi),
              phi_range: tuple[float, float] = (0.0, 2 * math.pi)) -> SphereMap:
        comps = tuple(ex.as_expr(c) for c in components)
        extra = ex.vars_in(comps) - {THETA, PHI}
        if extra:
            raise MonodromyError(f"sphere map may only use theta and phi, found {sorted(extra)}")
        return cls(comps, label, tuple(map(float, theta_range)), tuple(map(float, phi_range)))

    def reversed(self) -> SphereMap:
        lo, hi = self.phi_range
        flipped = ex.var(PHI) * -1.0 + (lo + hi)
        comps = tuple(ex.substitute(c, {PHI: flipped}) for c in self.components)
        return SphereMap(comps, self.label + " (reversed)", self.theta_range, self.phi_range)

    @cached_property
    def _eval(self):
        comps = list(self.components)
        dth = [ex.diff(c, THETA) for c in comps]
        dph = [ex.diff(c, PHI) for c in comps]
        return ex.compile_exprs(comps + dth + dph, [THETA, PHI])

    def evaluate(self, theta: np.ndarray, phi: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        n = len(self.components)
        shape = np.broadcast_shapes(np.shape(theta), np.shape(phi))
        vals = np.broadcast_to(self._eval(theta, phi), (3 * n,) + shape)
        vals = np.moveaxis(vals, 0, -1)
        return vals[..., :n], vals[..., n:2 * n], vals[..., 2 * n:]


@dataclass(frozen=True, eq=False)
class CenterFrame:
    """Fiber vector fields (k rows per frame vector) trivializing the centre along a leaf."""

    vectors: tuple[tuple[Expr, ...], ...]
    labels: tuple[str, ...] = ()

    @classmethod
    def build(cls, vectors: Sequence[Sequence[ExprLike]], labels: Sequence[str] = ()) -> CenterFrame:
        vecs = tuple(tuple(ex.as_expr(v) for v in row) for row in vectors)
        labels = tuple(labels) or tuple(f"z{i + 1}" for i in range(len(vecs)))
        return cls(vecs, labels)

    @property
    def d(self) -> int:
        return len(self.vectors)

    def evaluator(self, A: LocalAlgebroid):
        exprs = [self.vectors[p][i] for i in range(A.k) for p in range(self.d)]
        ders = [ex.diff(self.vectors[p][i], c) for i in range(A.k) for p in range(self.d) for c in A.coords]
        return A._evaluator(exprs, (A.k, self.d)), A._evaluator(ders, (A.k, self.d, A.n))


def sphere_samples(sphere: SphereMap, num: int = 12) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    th = np.linspace(*sphere.theta_range, num + 2)[1:-1]
    ph = np.linspace(*sphere.phi_range, num, endpoint=False)
    T, P = np.meshgrid(th, ph, indexing="ij")
    x, xt, xp = sphere.evaluate(T.ravel(), P.ravel())
    return x, xt, xp


@dataclass(frozen=True)
class CenterCheck:
    residual: float
    ok: bool
    message: str = ""


def center_check(A: LocalAlgebroid, sigma: Splitting, points: np.ndarray, tol: float = 1e-8) -> CenterCheck:
    """Distance of Omega values from the centre of the isotropy algebra."""
    worst = 0.0
    for p in np.atleast_2d(np.asarray(points, dtype=float)):
        U = anchor_rank(A, p).orbit_tangent_basis
        if U.shape[1] < 2:
            continue
        iso = isotropy(A, p)
        Z = iso.basis @ center(iso.algebra) if iso.dim else np.zeros((A.k, 0))
        proj = Z @ np.linalg.pinv(Z) if Z.size else np.zeros((A.k, A.k))
        for q in range(U.shape[1]):
            for r in range(q + 1, U.shape[1]):
                om = curvature_tensor(A, sigma, p, U[:, q], U[:, r])
                scale = max(1.0, float(np.abs(om).max()))
                worst = max(worst, float(np.abs(om - proj @ om).max()) / scale)
    ok = worst <= tol
    return CenterCheck(worst, ok, "" if ok else "Lemma hypothesis violated: curvature is not centre-valued")


def frame_check(A: LocalAlgebroid, sigma: Splitting, frame: CenterFrame, points: np.ndarray,
                tangents: np.ndarray) -> float:
    """Largest violation of: frame in Ker(rho), central, and flat along the given tangents.

    Flatness means [sigma(X), z] = c(sigma X, z) + D_X z = 0 for X tangent to the leaf.
    """
    f0, f1 = frame.evaluator(A)
    F, dF = f0(points), f1(points)
    B = A.anchor_matrix(points)
    C = A.structure_tensor(points)
    S, _ = sigma.evaluate(points, derivative=False)
    scale = 1.0 + np.abs(F).max(initial=0.0)
    kernel = np.abs(np.einsum("...ai,...ip->...ap", B, F)).max(initial=0.0)
    SX = np.einsum("...ia,...a->...i", S, tangents)
    flat = np.einsum("...ijl,...j,...lp->...ip", C, SX, F) + np.einsum("...ipc,...c->...ip", dF, tangents)
    # central: [z, w] = 0 for every w in Ker(rho); test against all kernel directions at once
    comm = np.einsum("...ijl,...jp->...ilp", C, F)
    worst_central = 0.0
    for idx in range(len(points)):
        K = np.linalg.svd(B[idx])[2][np.linalg.matrix_rank(B[idx], tol=RANK_RTOL * (1 + np.abs(B[idx]).max())):].T
        worst_central = max(worst_central, float(np.abs(np.einsum("ilp,lq->ipq", comm[idx], K)).max(initial=0.0)))
    return float(max(kernel, np.abs(flat).max(initial=0.0), worst_central) / scale)


# ---------------------------------------------------------------------------
# quadrature


@dataclass(frozen=True)
class CurvatureIntegral:
    value: np.ndarray
    error: float
    scale: float
    frame_residual: float
    grid: tuple[int, int]


def _quadrature(A, sigma, sphere, f0, grid, rule):
    n_th, n_ph = grid
    lo, hi = sphere.theta_range
    p_lo, p_hi = sphere.phi_range
    if rule == "gauss":
        nodes, weights = np.polynomial.legendre.leggauss(n_th)
        th = 0.5 * (hi - lo) * nodes + 0.5 * (hi + lo)
        w_th = 0.5 * (hi - lo) * weights
    elif rule == "midpoint":
        th = lo + (np.arange(n_th) + 0.5) * (hi - lo) / n_th
        w_th = np.full(n_th, (hi - lo) / n_th)
    else:
        raise ValueError(f"unknown quadrature rule {rule!r}")
    ph = p_lo + (np.arange(n_ph) + 0.5) * (p_hi - p_lo) / n_ph
    w_ph = (p_hi - p_lo) / n_ph
    T, P = np.meshgrid(th, ph, indexing="ij")
    x, xt, xp = sphere.evaluate(T, P)
    om, mag = _curvature_terms(A, sigma, x, xt, xp)
    F = f0(x)  # [..., k, d]
    coef = np.einsum("...pi,...i->...p", np.linalg.pinv(F), om)
    resid = np.abs(np.einsum("...ip,...p->...i", F, coef) - om)
    if not (np.all(np.isfinite(coef)) and np.all(np.isfinite(mag))):
        raise QuadratureError("curvature undefined at quadrature nodes")
    w = w_th[:, None] * w_ph
    # pairwise summation through numpy keeps the reduction order fixed
    value = np.einsum("tp,tpd->d", w, coef)
    scale = float(np.einsum("tp,tpi->", w, mag))
    rel = float(resid.max(initial=0.0) / (1.0 + np.abs(om).max(initial=0.0)))
    return value, scale, rel


def integrate_curvature(
    A: LocalAlgebroid,
    sigma: Splitting,
    sphere: SphereMap,
    frame: CenterFrame,
    grid: tuple[int, int] = DEFAULT_GRID,
    rule: str = "gauss",
    tol: float = 1e-6,
    frame_tol: float = 1e-8,
) -> CurvatureIntegral:
    """Integral of Omega(d_theta x, d_phi x) over the sphere, in centre-frame coordinates.

    The error estimate is the difference to a half-size grid (Richardson
    extrapolated for the midpoint rule).
    """
    n_th, n_ph = map(int, grid)
    if n_th < 2 or n_ph < 2:
        raise QuadratureError("grid needs at least 2 x 2 nodes")
    f0, _ = frame.evaluator(A)
    xs, xts, xps = sphere_samples(sphere, 6)
    fr = frame_check(A, sigma, frame, xs, xts)
    fr = max(fr, frame_check(A, sigma, frame, xs, xps))
    if fr > frame_tol:
        raise LocalSystemError(f"centre frame is not a flat central frame along the sphere (residual {fr:.3e})")
    value, scale, rel = _quadrature(A, sigma, sphere, f0, (n_th, n_ph), rule)
    if rel > frame_tol:
        raise LocalSystemError(f"curvature leaves the span of the centre frame (residual {rel:.3e})")
    coarse, _, _ = _quadrature(A, sigma, sphere, f0, (max(2, n_th // 2), max(2, n_ph // 2)), rule)
    if rule == "midpoint":
        err = float(np.abs(value - coarse).max(initial=0.0)) / 3.0
        value = value + (value - coarse) / 3.0
    else:
        err = float(np.abs(value - coarse).max(initial=0.0))
    if err > tol * max(1.0, float(np.abs(value).max(initial=0.0))):
        raise QuadratureError(f"quadrature did not converge (error estimate {err:.3e})")
    return CurvatureIntegral(value, err, scale, rel, (n_th, n_ph))


# ---------------------------------------------------------------------------
# lattices


@dataclass(frozen=True, eq=False)
class Lattice:
    generators: np.ndarray  # (m, d)
    labels: tuple[str, ...] = ()
    errors: np.ndarray | None = None  # absolute noise per generator

    def __post_init__(self) -> None:
        g = np.asarray(self.generators, dtype=float)
        if g.ndim == 1:
            g = g[:, None]
        elif g.ndim != 2:
            g = g.reshape(len(g), -1)
        object.__setattr__(self, "generators", g)

    @property
    def d(self) -> int:
        return self.generators.shape[1]

    def noise(self) -> np.ndarray:
        mach = 64 * np.finfo(float).eps * np.linalg.norm(self.generators, axis=1)
        if self.errors is None:
            return mach
        return np.maximum(np.asarray(self.errors, dtype=float), mach)


@dataclass(frozen=True)
class Discreteness:
    status: str  # discrete | indiscrete | unknown
    r_N: float
    minimal_generator: list[float] | None
    reason: str

    @property
    def discrete(self) -> bool | None:
        return {"discrete": True, "indiscrete": False}.get(self.status)

    def as_dict(self) -> dict:
        return {"status": self.status, "discrete": self.discrete, "r_N": self.r_N,
                "minimal_generator": self.minimal_generator, "reason": self.reason}


def _euclid_pair(g0: float, d0: float, g1: float, d1: float, eps: float, q_max: float):
    """Tolerant Euclid on two reals; returns (status, gcd, noise, reason)."""
    u, v = (1, 0), (0, 1)
    a, b = g0, g1
    while True:
        noise_b = abs(v[0]) * d0 + abs(v[1]) * d1
        if abs(b) <= noise_b:
            noise_a = abs(u[0]) * d0 + abs(u[1]) * d1
            return "commensurable", abs(a), noise_a, ""
        if abs(b) < eps:
            return "indiscrete", abs(b), noise_b, f"integer combination of size {abs(b):.3e} below eps"
        if max(abs(v[0]), abs(v[1])) > q_max:
            rel = max(d0 / abs(g0), d1 / abs(g1)) if g0 and g1 else 1.0
            if rel * q_max ** 2 <= 1.0:
                return "indiscrete", 0.0, noise_b, f"no rational relation with denominator <= {q_max:g}"
            return "unknown", abs(b), noise_b, "precision insufficient to rule out a rational relation"
        q = math.floor(a / b)
        w = (u[0] - q * v[0], u[1] - q * v[1])
        r = math.fsum([w[0] * g0, w[1] * g1])
        u, v, a, b = v, w, b, r


def _discreteness_1d(values: np.ndarray, noise: np.ndarray, eps: float, q_max: float) -> Discreteness:
    keep = np.abs(values) > noise
    values, noise = values[keep], noise[keep]
    if values.size == 0:
        return Discreteness("discrete", math.inf, None, "trivial lattice")
    order = np.argsort(-np.abs(values), kind="stable")
    g, dg = float(abs(values[order[0]])), float(noise[order[0]])
    for idx in order[1:]:
        status, g_new, d_new, reason = _euclid_pair(g, dg, float(abs(values[idx])), float(noise[idx]), eps, q_max)
        if status != "commensurable":
            return Discreteness(status, 0.0 if status == "indiscrete" else g_new, None, reason)
        if g_new < GCD_NOISE_FACTOR * d_new:
            # the gcd is as small as its own error bar: the relation is an artefact of the noise
            return Discreteness("unknown", g_new, None, f"reduced generator {g_new:.3e} not resolved above noise")
        g, dg = g_new, max(d_new, 64 * np.finfo(float).eps * g_new)
    if g < eps:
        return Discreteness("indiscrete", 0.0, None, f"reduced generator {g:.3e} below eps")
    return Discreteness("discrete", g, [g], "commensurable generators")


def lattice_discreteness(L: Lattice, eps: float = DEFAULT_EPS, q_max: float = DEFAULT_QMAX) -> Discreteness:
    gens = L.generators
    noise = L.noise()
    if gens.size == 0:
        return Discreteness("discrete", math.inf, None, "trivial lattice")
    norms = np.linalg.norm(gens, axis=1)
    keep = norms > noise
    gens, noise, norms = gens[keep], noise[keep], norms[keep]
    if len(gens) == 0:
        return Discreteness("discrete", math.inf, None, "trivial lattice")
    if L.d == 1:
        res = _discreteness_1d(gens[:, 0], noise, eps, q_max)
        return res
    u = gens[np.argmax(norms)] / norms.max()
    off_line = np.linalg.norm(gens - np.outer(gens @ u, u), axis=1)
    if np.all(off_line <= noise + 1e-12 * norms):
        res = _discreteness_1d(gens @ u, noise, eps, q_max)
        mg = None if res.minimal_generator is None else (res.minimal_generator[0] * u).tolist()
        return Discreteness(res.status, res.r_N, mg, res.reason + " (collinear)")
    return _discreteness_nd(gens, noise, eps, q_max)


def _discreteness_nd(gens: np.ndarray, noise: np.ndarray, eps: float, q_max: float) -> Discreteness:
    rank = np.linalg.matrix_rank(gens, tol=float(noise.max()) + 1e-12 * float(np.abs(gens).max()))
    vecs = [g.copy() for g in gens]
    noises = list(noise)
    coeff = [1.0] * len(vecs)
    changed = True
    while changed:
        changed = False
        vecs_order = sorted(range(len(vecs)), key=lambda i: np.linalg.norm(vecs[i]))
        for jj in vecs_order:
            for ii in range(len(vecs)):
                if ii == jj:
                    continue
                vj = vecs[jj]
                nj = float(vj @ vj)
                if nj == 0.0:
                    continue
                q = round(float(vecs[ii] @ vj) / nj)
                if q == 0:
                    continue
                new = vecs[ii] - q * vj
                if np.linalg.norm(new) < np.linalg.norm(vecs[ii]) - 1e-15:
                    vecs[ii] = new
                    noises[ii] = noises[ii] + abs(q) * noises[jj]
                    coeff[ii] = coeff[ii] + abs(q) * coeff[jj]
                    changed = True
        alive = [i for i in range(len(vecs)) if np.linalg.norm(vecs[i]) > noises[i]]
        vecs = [vecs[i] for i in alive]
        noises = [noises[i] for i in alive]
        coeff = [coeff[i] for i in alive]
        if any(np.linalg.norm(v) < eps for v in vecs):
            return Discreteness("indiscrete", 0.0, None, "integer combination below eps")
        if max(coeff, default=0.0) > q_max:
            return Discreteness("unknown", min(np.linalg.norm(v) for v in vecs), None,
                                "reduction did not stabilize within the coefficient bound")
    if len(vecs) > rank:
        return Discreteness("unknown", min(np.linalg.norm(v) for v in vecs), None,
                            "more reduced generators than the rank")
    best = min(range(len(vecs)), key=lambda i: np.linalg.norm(vecs[i]))
    return Discreteness("discrete", float(np.linalg.norm(vecs[best])), vecs[best].tolist(),
                        "pairwise-reduced basis")


# ---------------------------------------------------------------------------
# pipeline


@dataclass(frozen=True, eq=False)
class LeafData:
    """Everything needed to compute the monodromy lattice at one point."""

    spheres: tuple[SphereMap, ...]
    splitting: Splitting | None
    frame: CenterFrame | None


def monodromy_lattice(A: LocalAlgebroid, x: Sequence[float], spheres: Sequence[SphereMap],
                      sigma: Splitting | None, frame: CenterFrame | None,
                      grid: tuple[int, int] = DEFAULT_GRID, rule: str = "gauss") -> Lattice:
    """One generator per sphere.  ``x`` is only used for labelling and sanity checks."""
    if not spheres:
        return Lattice(np.zeros((0, frame.d if frame else 1)), ())
    if sigma is None or frame is None:
        raise MonodromyError("spheres given without a splitting and centre frame")
    gens, errs, labels = [], [], []
    for s in spheres:
        res = integrate_curvature(A, sigma, s, frame, grid, rule)
        gens.append(res.value)
        errs.append(max(res.error, 64 * np.finfo(float).eps * res.scale))
        labels.append(s.label)
    return Lattice(np.array(gens), tuple(labels), np.array(errs))


@dataclass(frozen=True)
class ProfileEntry:
    point: tuple[float, ...]
    r_N: float
    generators: list[list[float]]
    status: str
    error: str = ""


def rn_profile(A: LocalAlgebroid, sample_points: Sequence[Sequence[float]],
               leaf_for: Callable[[np.ndarray], LeafData], grid: tuple[int, int] = DEFAULT_GRID,
               eps: float = DEFAULT_EPS, q_max: float = DEFAULT_QMAX,
               map_fn: Callable = map) -> list[ProfileEntry]:
    """r_N at each point; failures are recorded in the entry instead of raised."""

    def one(p):
        p = np.asarray(p, dtype=float)
        try:
            leaf = leaf_for(p)
            L = monodromy_lattice(A, p, leaf.spheres, leaf.splitting, leaf.frame, grid)
            disc = lattice_discreteness(L, eps, q_max)
            return ProfileEntry(tuple(p.tolist()), disc.r_N, L.generators.tolist(), disc.status)
        except (AlgebroidError, ex.ExprError, np.linalg.LinAlgError) as err:
            return ProfileEntry(tuple(p.tolist()), math.nan, [], "error", str(err))

    return list(map_fn(one, sample_points))


def profile_csv(entries: Sequence[ProfileEntry], leaf_parameter: Sequence[float] | None = None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    n = len(entries[0].point) if entries else 0
    head = (["r"] if leaf_parameter is not None else []) + [f"x_{i + 1}" for i in range(n)]
    w.writerow(head + ["r_N", "generator", "status"])
    for idx, e in enumerate(entries):
        gen = e.generators[0][0] if e.generators and len(e.generators[0]) == 1 else (
            json.dumps(e.generators) if e.generators else "")
        row = ([format(leaf_parameter[idx], ".17g")] if leaf_parameter is not None else [])
        row += [format(v, ".17g") for v in e.point]
        row += [_fmt(e.r_N), _fmt(gen) if isinstance(gen, float) else gen, e.status]
        w.writerow(row)
    return buf.getvalue()


def _fmt(v: float) -> str:
    if math.isinf(v):
        return "inf"
    return format(v, ".17g")


# ---------------------------------------------------------------------------
# verdict


VERDICTS = ("integrable-at-x", "obstruction-(i)", "obstruction-(ii)", "inconclusive")


@dataclass(frozen=True)
class VerdictThresholds:
    eps: float = DEFAULT_EPS
    q_max: float = DEFAULT_QMAX
    closest_fraction: float = 0.5
    min_slope: float = 0.5

    def as_dict(self) -> dict:
        return {"eps": self.eps, "q_max": self.q_max, "closest_fraction": self.closest_fraction,
                "min_slope": self.min_slope}


@dataclass(frozen=True)
class IntegrabilityReport:
    point: tuple[float, ...]
    lattice: Lattice
    discreteness: Discreteness
    transversal: tuple[tuple[float, float], ...]
    verdict: str
    trend: dict = field(default_factory=dict)
    thresholds: VerdictThresholds = VerdictThresholds()
    isotropy_label: str | None = None

    @property
    def r_N(self) -> float:
        return self.discreteness.r_N

    @property
    def integrable(self) -> bool | None:
        if self.verdict == "integrable-at-x":
            return True
        if self.verdict.startswith("obstruction"):
            return False
        return None

    def as_dict(self) -> dict:
        return {
            "point": list(self.point),
            "generators": self.lattice.generators.tolist(),
            "generator_labels": list(self.lattice.labels),
            "generator_errors": None if self.lattice.errors is None else np.asarray(self.lattice.errors).tolist(),
            "r_N": self.r_N,
            "discrete": self.discreteness.discrete,
            "discreteness": self.discreteness.as_dict(),
            "transversal": [{"distance": d, "r_N": r} for d, r in self.transversal],
            "trend": self.trend,
            "verdict": self.verdict,
            "integrable": self.integrable,
            "thresholds": self.thresholds.as_dict(),
            "sign_convention": SIGN_CONVENTION,
            "isotropy_label": self.isotropy_label,
        }

    def to_json(self) -> str:
        from .cli import dumps
        return dumps(self.as_dict())


def transversal_trend(samples: Sequence[tuple[float, float]], th: VerdictThresholds) -> dict:
    """Decide whether r_N tends to 0 as the distance to the leaf tends to 0.

    Samples sharing a distance are merged by their minimum.  Among the
    closest fraction of distance levels, the values must decrease towards
    the leaf and fit r_N ~ distance^p with p >= min_slope; any value below
    eps counts as reaching 0.
    """
    levels: dict[float, float] = {}
    for dist, r in samples:
        if not np.isfinite(dist) or dist <= 0 or math.isnan(r):
            continue
        levels[dist] = min(levels.get(dist, math.inf), r)
    dists = sorted(levels, reverse=True)
    if not dists:
        return {"tends_to_zero": False, "levels": 0, "slope": None, "monotone": None}
    m = max(2, math.ceil(len(dists) * th.closest_fraction)) if len(dists) >= 2 else 1
    close = dists[-m:]
    vals = [levels[d] for d in close]
    if any(v < th.eps for v in vals):
        return {"tends_to_zero": True, "levels": len(close), "slope": None, "monotone": None,
                "min_value": min(vals)}
    if len(close) < 2 or any(math.isinf(v) for v in vals):
        return {"tends_to_zero": False, "levels": len(close), "slope": None, "monotone": None,
                "min_value": min(vals)}
    monotone = all(v1 < v0 for v0, v1 in zip(vals, vals[1:]))
    slope = float(np.polyfit(np.log(close), np.log(vals), 1)[0])
    return {"tends_to_zero": bool(monotone and slope >= th.min_slope), "levels": len(close),
            "slope": slope, "monotone": monotone, "min_value": min(vals)}


def integrability_verdict(
    A: LocalAlgebroid,
    x: Sequence[float],
    lattice: Lattice,
    transversal_samples: Sequence[tuple[float, float]] = (),
    thresholds: VerdictThresholds = VerdictThresholds(),
    isotropy_label: str | None = None,
) -> IntegrabilityReport:
    """Combine the lattice at x with transversal (distance, r_N) samples."""
    disc = lattice_discreteness(lattice, thresholds.eps, thresholds.q_max)
    trend = transversal_trend(transversal_samples, thresholds)
    if disc.status == "indiscrete":
        verdict = "obstruction-(i)"
    elif disc.status == "unknown":
        verdict = "inconclusive"
    elif trend["tends_to_zero"]:
        verdict = "obstruction-(ii)"
    else:
        verdict = "integrable-at-x"
    samples = tuple((float(d), float(r)) for d, r in sorted(transversal_samples, key=lambda s: -s[0]))
    return IntegrabilityReport(tuple(float(v) for v in x), lattice, disc, samples, verdict, trend,
                               thresholds, isotropy_label)


def aggregate_verdict(reports: Sequence[IntegrabilityReport]) -> str:
    """Whole-chart verdict: non-integrable if any point is obstructed."""
    if any(r.integrable is False for r in reports):
        return "non-integrable"
    if reports and all(r.integrable for r in reports):
        return "integrable"
    return "inconclusive"
