"""Finite-dimensional Lie algebras given by structure constants.

Constants are stored as an array ``f`` of shape ``(m, m, m)`` with
``[e_j, e_k] = f[i, j, k] e_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

RANK_RTOL = 1e-9


class LieAlgebraError(ValueError):
    pass


@dataclass(frozen=True)
class LieAlgebra:
    constants: np.ndarray
    name: str = ""

    def __post_init__(self) -> None:
        f = np.asarray(self.constants, dtype=float)
        if f.ndim != 3 or len(set(f.shape)) != 1:
            raise LieAlgebraError(f"structure constants must have shape (m, m, m), got {f.shape}")
        if not np.allclose(f, -np.swapaxes(f, 1, 2), atol=1e-12, rtol=0):
            raise LieAlgebraError("structure constants are not antisymmetric in the lower indices")
        f.setflags(write=False)
        object.__setattr__(self, "constants", f)

    @property
    def dim(self) -> int:
        return self.constants.shape[0]

    def bracket(self, v: np.ndarray, w: np.ndarray) -> np.ndarray:
        return np.einsum("ijk,j,k->i", self.constants, v, w)

    def ad(self, v: np.ndarray) -> np.ndarray:
        """Matrix of ``w -> [v, w]``."""
        return np.einsum("ijk,j->ik", self.constants, np.asarray(v, dtype=float))

    @classmethod
    def from_brackets(cls, dim: int, brackets: dict[tuple[int, int], dict[int, float]], name: str = "") -> LieAlgebra:
        """Build from ``{(j, k): {i: coeff}}`` with j < k (0-based)."""
        f = np.zeros((dim, dim, dim))
        for (j, k), out in brackets.items():
            for i, value in out.items():
                f[i, j, k] += value
                f[i, k, j] -= value
        return cls(f, name)


def su2() -> LieAlgebra:
    # [e1,e2]=e3, [e2,e3]=e1, [e3,e1]=e2
    return LieAlgebra.from_brackets(3, {(0, 1): {2: 1.0}, (1, 2): {0: 1.0}, (0, 2): {1: -1.0}}, "su2")


def abelian(m: int) -> LieAlgebra:
    return LieAlgebra(np.zeros((m, m, m)), f"abelian{m}")


def heisenberg() -> LieAlgebra:
    return LieAlgebra.from_brackets(3, {(0, 1): {2: 1.0}}, "heisenberg")


NAMED = {"su2": su2, "heisenberg": heisenberg, "abelian1": lambda: abelian(1),
         "abelian2": lambda: abelian(2), "abelian3": lambda: abelian(3)}


def by_name(name: str) -> LieAlgebra:
    try:
        return NAMED[name]()
    except KeyError:
        raise LieAlgebraError(f"unknown Lie algebra {name!r}; known: {sorted(NAMED)}") from None


def jacobi_check(g: LieAlgebra) -> float:
    """Largest entry of the cyclic sum [e_j,[e_k,e_l]] + cyclic, over all triples."""
    f = g.constants
    if g.dim == 0:
        return 0.0
    # T[i, j, k, l] = [e_j, [e_k, e_l]]^i = f[i, j, m] f[m, k, l]
    t = np.einsum("ijm,mkl->ijkl", f, f)
    cyc = t + np.transpose(t, (0, 2, 3, 1)) + np.transpose(t, (0, 3, 1, 2))
    return float(np.max(np.abs(cyc)))


def null_space(mat: np.ndarray, rtol: float = RANK_RTOL) -> np.ndarray:
    """Orthonormal basis (as columns) of the kernel of ``mat``.

    Singular values below ``rtol * (s_max + 1)`` count as zero.
    """
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    cols = mat.shape[1]
    if mat.size == 0:
        return np.eye(cols)
    _, s, vt = np.linalg.svd(mat)
    tol = rtol * ((s[0] if s.size else 0.0) + 1.0)
    rank = int(np.sum(s > tol))
    return vt[rank:].T.copy()


def matrix_rank(mat: np.ndarray, rtol: float = RANK_RTOL) -> int:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if mat.size == 0:
        return 0
    s = np.linalg.svd(mat, compute_uv=False)
    return int(np.sum(s > rtol * (s[0] + 1.0)))


def center(g: LieAlgebra) -> np.ndarray:
    """Basis (columns) of the center ``{v : ad_v = 0}``."""
    m = g.dim
    # rows indexed by (i, k), columns by j:  sum_j f[i, j, k] v_j = 0
    stacked = np.transpose(g.constants, (0, 2, 1)).reshape(m * m, m)
    return null_space(stacked)


# ---------------------------------------------------------------------------
# Chevalley-Eilenberg complex with trivial coefficients


def exterior_basis(m: int, degree: int) -> list[tuple[int, ...]]:
    return list(combinations(range(m), degree))


def ce_differential(g: LieAlgebra, degree: int) -> np.ndarray:
    """Matrix of d: Λ^degree g* -> Λ^(degree+1) g* in lexicographic bases.

    (dω)(x_0..x_p) = Σ_{a<b} (-1)^{a+b} ω([x_a, x_b], x_0..x̂_a..x̂_b..x_p).
    """
    m = g.dim
    f = g.constants
    src = exterior_basis(m, degree)
    dst = exterior_basis(m, degree + 1)
    index = {s: n for n, s in enumerate(src)}
    d = np.zeros((len(dst), len(src)))
    for row, tup in enumerate(dst):
        for a in range(len(tup)):
            for b in range(a + 1, len(tup)):
                rest = tup[:a] + tup[a + 1:b] + tup[b + 1:]
                sign_ab = -1.0 if (a + b) % 2 else 1.0
                for mm in range(m):
                    coeff = f[mm, tup[a], tup[b]]
                    if coeff == 0.0 or mm in rest:
                        continue
                    # reorder (mm, rest...) into increasing order
                    moves = sum(1 for r in rest if r < mm)
                    key = tuple(sorted(rest + (mm,)))
                    sign = -1.0 if moves % 2 else 1.0
                    d[row, index[key]] += sign_ab * sign * coeff
    return d


def ce_differentials(g: LieAlgebra) -> list[np.ndarray]:
    return [ce_differential(g, p) for p in range(g.dim)]


def ce_cohomology_dims(g: LieAlgebra) -> list[int]:
    """Betti numbers of H^p(g) with trivial coefficients, p = 0..m."""
    m = g.dim
    ds = ce_differentials(g)
    ranks = [matrix_rank(d) for d in ds]
    betti = []
    for p in range(m + 1):
        dim_p = math.comb(m, p)
        rank_out = ranks[p] if p < m else 0
        rank_in = ranks[p - 1] if p > 0 else 0
        betti.append(dim_p - rank_out - rank_in)
    return betti


def d_squared_residual(g: LieAlgebra) -> float:
    ds = ce_differentials(g)
    worst = 0.0
    for d0, d1 in zip(ds, ds[1:]):
        prod = d1 @ d0
        if prod.size:
            worst = max(worst, float(np.max(np.abs(prod))))
    return worst


# ---------------------------------------------------------------------------
# exponential of ad


def expm(a: np.ndarray, tol: float = 1e-16) -> np.ndarray:
    """Matrix exponential by scaling and squaring with a truncated Taylor series."""
    a = np.asarray(a, dtype=float)
    n = a.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    norm = np.linalg.norm(a, 1)
    squarings = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    scaled = a / (2.0 ** squarings)
    result = np.eye(n)
    term = np.eye(n)
    for k in range(1, 40):
        term = term @ scaled / k
        result = result + term
        if np.linalg.norm(term, 1) <= tol * np.linalg.norm(result, 1):
            break
    for _ in range(squarings):
        result = result @ result
    return result


def ad_exp(g: LieAlgebra, v: np.ndarray) -> np.ndarray:
    return expm(g.ad(v))


def spectral_bound(g: LieAlgebra, v: np.ndarray, norm: np.ndarray | None = None) -> float:
    """Operator norm of ad_v for the norm |w|^2 = wᵀ N w (Euclidean by default)."""
    ad = g.ad(v)
    if g.dim == 0:
        return 0.0
    if norm is None:
        return float(np.linalg.norm(ad, 2))
    chol = np.linalg.cholesky(np.asarray(norm, dtype=float))  # N = L Lᵀ
    # |w|_N = |Lᵀ w|, so ||ad|| = ||Lᵀ ad L^{-T}||_2
    conj = chol.T @ ad @ np.linalg.inv(chol.T)
    return float(np.linalg.norm(conj, 2))
