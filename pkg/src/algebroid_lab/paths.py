"""A-paths, A-homotopies and related ODE solvers.

Everything is fixed-step RK4 on a uniform time grid.  Values of a path
between grid nodes (needed for the RK4 half steps) come from a four point
cubic interpolation, which keeps the overall scheme fourth order.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.interpolate
import scipy.optimize

from . import expr as ex
from .algebroid import AlgebroidError, LocalAlgebroid, Section

DEFAULT_N = 1000
ENDPOINT_TOL = 1e-9


class ChartExitError(AlgebroidError):
    def __init__(self, time: float, point: np.ndarray):
        self.time = float(time)
        self.point = np.asarray(point)
        super().__init__(f"trajectory left the chart box at t={self.time:.6g} (x={self.point.tolist()})")


class EndpointError(AlgebroidError):
    pass


@dataclass(frozen=True, eq=False)
class APath:
    t: np.ndarray
    x: np.ndarray
    a: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=float)
        x = np.asarray(self.x, dtype=float).reshape(len(t), -1)
        a = np.asarray(self.a, dtype=float).reshape(len(t), -1)
        if len(t) < 2:
            raise ValueError("a path needs at least two samples")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "a", a)

    @property
    def N(self) -> int:
        return len(self.t) - 1

    @property
    def h(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def start(self) -> np.ndarray:
        return self.x[0]

    @property
    def end(self) -> np.ndarray:
        return self.x[-1]

    @classmethod
    def constant(cls, x0: Sequence[float], k: int, N: int = DEFAULT_N) -> APath:
        t = np.linspace(0.0, 1.0, N + 1)
        x = np.tile(np.asarray(x0, dtype=float), (N + 1, 1))
        return cls(t, x, np.zeros((N + 1, k)))

    def with_fiber(self, a: np.ndarray) -> APath:
        return APath(self.t, self.x, a)

    def reversed(self) -> APath:
        return APath(self.t, self.x[::-1], -self.a[::-1])

    def to_csv(self, target: str | Path | io.TextIOBase | None = None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n, k = self.x.shape[1], self.a.shape[1]
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(n)] + [f"a_{i + 1}" for i in range(k)])
        for j in range(len(self.t)):
            w.writerow([format(v, ".17g") for v in (self.t[j], *self.x[j], *self.a[j])])
        text = buf.getvalue()
        if isinstance(target, (str, Path)):
            Path(target).write_text(text)
        elif target is not None:
            target.write(text)
        return text

    @classmethod
    def from_csv(cls, source: str | Path) -> APath:
        text = Path(source).read_text() if not str(source).lstrip().startswith("t,") else str(source)
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        n = sum(1 for h in header if h.startswith("x_"))
        data = np.array(body, dtype=float).reshape(len(body), len(header))
        return cls(data[:, 0], data[:, 1:1 + n], data[:, 1 + n:])


@dataclass(frozen=True, eq=False)
class Variation:
    """Family of A-paths on an (eps, t) grid: ``x[i, j]``, ``a[i, j]``."""

    eps: np.ndarray
    t: np.ndarray
    x: np.ndarray
    a: np.ndarray

    @classmethod
    def from_paths(cls, paths: Sequence[APath], eps: Sequence[float] | None = None) -> Variation:
        if not paths:
            raise ValueError("empty variation")
        e = np.linspace(0.0, 1.0, len(paths)) if eps is None else np.asarray(eps, dtype=float)
        t = paths[0].t
        for p in paths:
            if p.t.shape != t.shape or not np.allclose(p.t, t, rtol=0, atol=1e-14):
                raise ValueError("all paths of a variation must share the time grid")
        return cls(e, t, np.stack([p.x for p in paths]), np.stack([p.a for p in paths]))

    def slice(self, i: int) -> APath:
        return APath(self.t, self.x[i], self.a[i])

    def endpoint_drift(self) -> float:
        drift0 = np.abs(self.x[:, 0] - self.x[0, 0]).max(initial=0.0)
        drift1 = np.abs(self.x[:, -1] - self.x[0, -1]).max(initial=0.0)
        return float(max(drift0, drift1))


@dataclass(frozen=True, eq=False)
class BField:
    eps: np.ndarray
    t: np.ndarray
    b: np.ndarray

    @property
    def end_values(self) -> np.ndarray:
        return self.b[:, -1]

    def max_end(self) -> float:
        return float(np.linalg.norm(self.end_values, axis=-1).max(initial=0.0))


# ---------------------------------------------------------------------------
# finite differences and interpolation helpers


def derivative4(values: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order finite-difference derivative along axis 0."""
    f = np.asarray(values, dtype=float)
    m = f.shape[0]
    if m < 5:
        return np.gradient(f, h, axis=0, edge_order=min(2, m - 1) if m > 2 else 1)
    d = np.empty_like(f)
    # written in differences so that constant data gives exactly zero
    d[2:-2] = (8 * (f[3:-1] - f[1:-3]) - (f[4:] - f[:-4])) / (12 * h)
    d[0] = (48 * (f[1] - f[0]) - 36 * (f[2] - f[0]) + 16 * (f[3] - f[0]) - 3 * (f[4] - f[0])) / (12 * h)
    d[1] = (-3 * (f[0] - f[1]) + 18 * (f[2] - f[1]) - 6 * (f[3] - f[1]) + (f[4] - f[1])) / (12 * h)
    d[-1] = -(48 * (f[-2] - f[-1]) - 36 * (f[-3] - f[-1]) + 16 * (f[-4] - f[-1]) - 3 * (f[-5] - f[-1])) / (12 * h)
    d[-2] = -(-3 * (f[-1] - f[-2]) + 18 * (f[-3] - f[-2]) - 6 * (f[-4] - f[-2]) + (f[-5] - f[-2])) / (12 * h)
    return d


def midpoints(values: np.ndarray, axis: int = 0) -> np.ndarray:
    """Cubic-interpolated values half way between consecutive samples."""
    f = np.moveaxis(np.asarray(values, dtype=float), axis, 0)
    m = f.shape[0]
    if m < 4:
        out = 0.5 * (f[:-1] + f[1:])
    else:
        out = np.empty((m - 1,) + f.shape[1:])
        out[1:-1] = (-f[:-3] + 9 * f[1:-2] + 9 * f[2:-1] - f[3:]) / 16
        out[0] = (5 * f[0] + 15 * f[1] - 5 * f[2] + f[3]) / 16
        out[-1] = (5 * f[-1] + 15 * f[-2] - 5 * f[-3] + f[-4]) / 16
    return np.moveaxis(out, 0, axis)


# ---------------------------------------------------------------------------
# integrators


def _rk4_flow(
    A: LocalAlgebroid,
    fiber: Callable[[float, np.ndarray], np.ndarray],
    x0: np.ndarray,
    t: np.ndarray,
    check_chart: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Integrate xdot = B(x) fiber(t, x); return base and fiber samples."""
    x0 = np.asarray(x0, dtype=float)
    xs = np.empty((len(t),) + x0.shape)
    xs[0] = x0

    def field(s: float, x: np.ndarray) -> np.ndarray:
        return np.einsum("...ai,...i->...a", A.anchor_matrix(x), fiber(s, x))

    x = x0
    for j in range(len(t) - 1):
        h = t[j + 1] - t[j]
        k1 = field(t[j], x)
        k2 = field(t[j] + h / 2, x + h / 2 * k1)
        k3 = field(t[j] + h / 2, x + h / 2 * k2)
        k4 = field(t[j + 1], x + h * k3)
        x = x + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(x)) or (check_chart and A.n and not np.all(A.in_chart(x))):
            raise ChartExitError(t[j + 1], x)
        xs[j + 1] = x
    fib = np.stack([fiber(t[j], xs[j]) for j in range(len(t))])
    return xs, fib


def _as_point(A: LocalAlgebroid, x0: Sequence[float] | None) -> np.ndarray:
    x = np.zeros(0) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (A.n,):
        raise AlgebroidError(f"base point must have {A.n} coordinates")
    if A.n and not A.in_chart(x):
        raise ChartExitError(0.0, x)
    return x


def integrate_section(
    A: LocalAlgebroid,
    xi: Section,
    x0: Sequence[float] | None = None,
    N: int = DEFAULT_N,
    t_max: float = 1.0,
) -> APath:
    """A-path induced by a time-dependent section: xdot = rho(xi_t)(x), a = xi_t(x)."""
    if len(xi) != A.k:
        raise AlgebroidError(f"section has {len(xi)} components, algebroid rank is {A.k}")
    x0 = _as_point(A, x0)
    fn = xi.compiled(A.coords)
    t = np.linspace(0.0, t_max, N + 1)
    xs, fib = _rk4_flow(A, lambda s, x: fn(x, s), x0, t)
    return APath(t, xs, fib)


def geodesic(
    A: LocalAlgebroid,
    v: Sequence[float],
    x0: Sequence[float] | None = None,
    N: int = DEFAULT_N,
    t_max: float = 1.0,
) -> APath:
    """Geodesic of the flat frame connection: constant fiber value v."""
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape != (A.k,):
        raise AlgebroidError(f"fiber vector must have {A.k} entries")
    x0 = _as_point(A, x0)
    t = np.linspace(0.0, t_max, N + 1)
    xs, fib = _rk4_flow(A, lambda s, x: np.broadcast_to(v, x.shape[:-1] + (A.k,)), x0, t)
    return APath(t, xs, fib)


def exp_endpoint(A: LocalAlgebroid, v: Sequence[float], x0: Sequence[float] | None = None,
                 N: int = DEFAULT_N) -> tuple[np.ndarray, APath]:
    path = geodesic(A, v, x0, N)
    return path.end.copy(), path


def validate_apath(A: LocalAlgebroid, p: APath) -> float:
    """max_j |rho(a_j)(x_j) - xdot_j| with xdot from fourth-order differences."""
    if A.n == 0:
        return 0.0
    rho_a = np.einsum("jai,ji->ja", A.anchor_matrix(p.x), p.a)
    xdot = derivative4(p.x, p.h)
    return float(np.abs(rho_a - xdot).max())


# ---------------------------------------------------------------------------
# homotopies


def solve_b_field(
    A: LocalAlgebroid,
    var: Variation,
    connection: Callable[[np.ndarray], np.ndarray] | None = None,
) -> BField:
    """Solve d_t b = d_eps a + T(a, b), b(eps, 0) = 0, on every eps slice.

    With the flat frame connection T(a, b)^i = -c^i_{jk}(x) a^j b^k.  A
    non-flat connection may be given as ``connection(x) -> G[..., i, c, j]``
    (so that nabla_{d/dx^c} e_j = G[i, c, j] e_i); the equation then reads
    d_t b = d_eps a + G(d_eps x - rho(b), a) - c(a, b).
    """
    eps, t = var.eps, var.t
    if len(eps) < 2:
        return BField(eps, t, np.zeros_like(var.a))
    da = np.gradient(var.a, eps, axis=0, edge_order=2 if len(eps) > 2 else 1)
    dx = np.gradient(var.x, eps, axis=0, edge_order=2 if len(eps) > 2 else 1) if connection else None

    def nodes(j: int):
        return var.x[:, j], var.a[:, j], da[:, j], (dx[:, j] if dx is not None else None)

    mid_x, mid_a, mid_da = midpoints(var.x, 1), midpoints(var.a, 1), midpoints(da, 1)
    mid_dx = midpoints(dx, 1) if dx is not None else None

    def rhs(x, a, d_a, d_x, b):
        out = d_a - np.einsum("eijl,ej,el->ei", A.structure_tensor(x), a, b)
        if connection is not None:
            rho_b = np.einsum("eai,ei->ea", A.anchor_matrix(x), b)
            out = out + np.einsum("eicj,ec,ej->ei", connection(x), d_x - rho_b, a)
        return out

    b = np.zeros((len(eps), len(t), A.k))
    cur = b[:, 0]
    for j in range(len(t) - 1):
        h = t[j + 1] - t[j]
        m = (mid_x[:, j], mid_a[:, j], mid_da[:, j], mid_dx[:, j] if mid_dx is not None else None)
        k1 = rhs(*nodes(j), cur)
        k2 = rhs(*m, cur + h / 2 * k1)
        k3 = rhs(*m, cur + h / 2 * k2)
        k4 = rhs(*nodes(j + 1), cur + h * k3)
        cur = cur + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        b[:, j + 1] = cur
    return BField(eps, t, b)


@dataclass(frozen=True)
class HomotopyResult:
    is_homotopy: bool
    max_b_end: float
    b_field: BField

    def as_dict(self) -> dict:
        return {"is_homotopy": self.is_homotopy, "max_b_end": self.max_b_end}


def is_homotopy(A: LocalAlgebroid, var: Variation, tol: float = 1e-5,
                connection: Callable[[np.ndarray], np.ndarray] | None = None) -> HomotopyResult:
    drift = var.endpoint_drift()
    if drift > ENDPOINT_TOL:
        raise EndpointError(f"endpoints not fixed (drift {drift:.3e})")
    field = solve_b_field(A, var, connection)
    worst = field.max_end()
    return HomotopyResult(worst < tol, worst, field)


# ---------------------------------------------------------------------------
# reparametrization and concatenation


def smoothstep_cutoff() -> ex.Expr:
    """s(s(t)) with s(t) = t^2 (3 - 2t); its derivative vanishes to second order at 0 and 1."""
    t = ex.var("t")
    s = t * t * (3 - 2 * t)
    return ex.substitute(s, {"t": s})


def _cutoff_functions(cutoff: ex.Expr | None) -> tuple[Callable, Callable]:
    c = smoothstep_cutoff() if cutoff is None else ex.as_expr(cutoff)
    extra = ex.free_vars(c) - {"t"}
    if extra:
        raise ValueError(f"cutoff may only depend on t, found {sorted(extra)}")
    f = ex.compile_exprs([c, ex.diff(c, "t")], ["t"])
    return (lambda s: f(s)[0]), (lambda s: f(s)[1])


def _interpolants(p: APath):
    return (scipy.interpolate.CubicSpline(p.t, p.x, axis=0),
            scipy.interpolate.CubicSpline(p.t, p.a, axis=0))


def reparametrize(p: APath, sigma: Callable[[np.ndarray], np.ndarray],
                  dsigma: Callable[[np.ndarray], np.ndarray]) -> APath:
    """The A-path t -> sigma'(t) a(sigma(t)) over x(sigma(t)); sigma maps [0,1] onto [0,1]."""
    xs, as_ = _interpolants(p)
    t = p.t
    s = np.clip(sigma(t), t[0], t[-1])
    return APath(t, xs(s), dsigma(t)[:, None] * as_(s))


def reparametrization_variation(p: APath, cutoff: ex.Expr | None = None, M: int = 100,
                                sigma: tuple[Callable, Callable] | None = None) -> Variation:
    """Variation eps -> a^{tau_eps} with tau_eps = (1 - eps) id + eps tau."""
    tau, dtau = sigma if sigma is not None else _cutoff_functions(cutoff)
    eps = np.linspace(0.0, 1.0, M + 1)
    paths = [reparametrize(p, lambda s, e=e: (1 - e) * s + e * tau(s),
                           lambda s, e=e: (1 - e) + e * dtau(s)) for e in eps]
    return Variation.from_paths(paths, eps)


def concatenate(a0: APath, a1: APath, cutoff: ex.Expr | None = None, N: int | None = None) -> APath:
    """Run a0 on [0, 1/2] and a1 on [1/2, 1], both reparametrized by the cutoff."""
    if a0.x.shape[1] != a1.x.shape[1] or a0.a.shape[1] != a1.a.shape[1]:
        raise AlgebroidError("paths live on different algebroids")
    gap = float(np.abs(a0.end - a1.start).max(initial=0.0))
    if gap > ENDPOINT_TOL:
        raise EndpointError(f"end of first path does not match start of second (gap {gap:.3e})")
    tau, dtau = _cutoff_functions(cutoff)
    N = N or max(a0.N, a1.N)
    if N % 2:
        N += 1
    t = np.linspace(0.0, 1.0, N + 1)
    first, second = t <= 0.5, t > 0.5
    x = np.empty((N + 1, a0.x.shape[1]))
    a = np.empty((N + 1, a0.a.shape[1]))
    for mask, p, s in ((first, a0, 2 * t), (second, a1, 2 * t - 1)):
        xs, as_ = _interpolants(p)
        u = np.clip(tau(s[mask]), 0.0, 1.0)
        x[mask] = xs(u)
        a[mask] = 2 * dtau(s[mask])[:, None] * as_(u)
    return APath(t, x, a)


def left_unit_variation(p: APath, cutoff: ex.Expr | None = None, M: int = 100) -> Variation:
    """Variation from p to concatenate(constant path at p's start, p)."""
    tau, dtau = _cutoff_functions(cutoff)

    def sigma(s):
        return np.where(s > 0.5, tau(np.clip(2 * s - 1, 0.0, 1.0)), 0.0)

    def dsigma(s):
        return np.where(s > 0.5, 2 * dtau(np.clip(2 * s - 1, 0.0, 1.0)), 0.0)

    return reparametrization_variation(p, M=M, sigma=(sigma, dsigma))


# ---------------------------------------------------------------------------
# parallel transport and periods


def _connection_matrices(A: LocalAlgebroid, connection) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    if connection == "flat":
        return lambda a, x: np.zeros(a.shape[:-1] + (A.k, A.k))
    if connection == "adjoint":
        # nabla_a u = [a, u] on constant frame sections, i.e. Gamma = -ad_a
        return lambda a, x: -np.einsum("...ijl,...j->...il", A.structure_tensor(x), a)
    if callable(connection):
        return connection
    raise ValueError(f"unknown connection {connection!r}")


def parallel_transport(A: LocalAlgebroid, path: APath, connection="flat") -> np.ndarray:
    """Fundamental matrix at t=1 of udot = -Gamma(a(t), x(t)) u."""
    gamma = _connection_matrices(A, connection)
    G = gamma(path.a, path.x)
    Gm = gamma(midpoints(path.a), midpoints(path.x))
    u = np.eye(A.k)
    for j in range(path.N):
        h = path.t[j + 1] - path.t[j]
        k1 = -G[j] @ u
        k2 = -Gm[j] @ (u + h / 2 * k1)
        k3 = -Gm[j] @ (u + h / 2 * k2)
        k4 = -G[j + 1] @ (u + h * k3)
        u = u + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return u


def flow_jacobian_sup(A: LocalAlgebroid, v: np.ndarray, points: np.ndarray) -> float:
    """Largest spectral norm of d/dx (B(x) v) over the given points."""
    dB = A.anchor_jacobian(points)
    jac = np.einsum("...aic,i->...ac", dB, np.asarray(v, dtype=float))
    return float(np.linalg.norm(jac, 2, axis=(-2, -1)).max(initial=0.0))


def detect_period(
    A: LocalAlgebroid,
    v: Sequence[float],
    x0: Sequence[float],
    t_max: float,
    N: int = DEFAULT_N,
    tol: float = 1e-6,
) -> float | None:
    """First return time of the geodesic from (x0, v), or None if it does not close."""
    v = np.asarray(v, dtype=float)
    x0 = _as_point(A, x0)
    path = geodesic(A, v, x0, N, t_max)
    h = path.h

    def field(x):
        return A.anchor_matrix(x) @ v

    def state_at(j: int, s: float) -> np.ndarray:
        # RK4 from node j over a sub-step of length s
        x = path.x[j]
        k1 = field(x)
        k2 = field(x + s / 2 * k1)
        k3 = field(x + s / 2 * k2)
        k4 = field(x + s * k3)
        return x + s / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

    d = np.linalg.norm(path.x - x0, axis=1)
    speed0 = np.linalg.norm(field(x0))
    if speed0 == 0.0:
        return None
    # leave a neighbourhood first, then look for the first local minimum of |x - x0|
    away = np.nonzero(d > 10 * speed0 * h)[0]
    if away.size == 0:
        return None
    for j in range(int(away[0]) + 1, N):
        if not (d[j] <= d[j - 1] and d[j] <= d[j + 1]):
            continue
        if d[j] > 10 * speed0 * h:
            continue

        # (x - x0) . F(x) changes sign from - to + across the minimum
        def g(s: float) -> float:
            x = state_at(j - 1, s)
            return float((x - x0) @ field(x))

        if g(0.0) > 0 or g(2 * h) < 0:
            continue
        s_star = scipy.optimize.brentq(g, 0.0, 2 * h, xtol=1e-15)
        x_star = state_at(j - 1, s_star)
        f_star = field(x_star)
        cos = float(f_star @ field(x0)) / (np.linalg.norm(f_star) * speed0)
        if np.linalg.norm(x_star - x0) < tol and cos > 1 - 1e-6:
            return float(path.t[j - 1] + s_star)
    return None
