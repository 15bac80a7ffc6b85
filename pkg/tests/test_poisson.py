
import numpy as np
import pytest

from algebroid_lab import catalog
from algebroid_lab import expr as ex
from algebroid_lab.algebroid import Section, anchor_apply, axiom_residuals, bracket, evaluate_section
from algebroid_lab.paths import (Variation, geodesic, integrate_section, is_homotopy, left_unit_variation,
                                 reparametrization_variation)
from algebroid_lab.poisson import (PoissonError, PoissonStructure, bump_one_forms, cotangent_algebroid,
                                   hamiltonian_vf, integral_along, is_poisson_vf, j_cocycle_additivity_check,
                                   moment_J, one_form, poisson_bracket, poisson_jacobi_residual)

XYZ = ("x", "y", "z")


@pytest.fixture(scope="module")
def su2p():
    return catalog.linear_su2_poisson()


@pytest.fixture(scope="module")
def su2_alg(su2p):
    return cotangent_algebroid(su2p)


def _random_path(A, rng, N=1000):
    terms = lambda: " + ".join(f"{rng.uniform(-0.6, 0.6):.4f}*{m}" for m in ("1", "x", "y*z", "sin(time)"))
    xi = Section([terms() for _ in range(A.k)])
    return integrate_section(A, xi, rng.uniform(-0.8, 0.8, A.n), N)


def test_jacobi_residual():
    const = PoissonStructure.build(["q1", "q2", "p1", "p2"], {(0, 2): 1, (1, 3): 1})
    assert poisson_jacobi_residual(const) == 0
    assert poisson_jacobi_residual(catalog.linear_su2_poisson()) < 1e-10
    bad = PoissonStructure.build(XYZ, {(0, 1): "z", (0, 2): "x"})
    assert poisson_jacobi_residual(bad) >= 1e-3
    with pytest.raises(PoissonError):
        cotangent_algebroid(bad)


def test_quadratic_example_is_poisson():
    # pi^12 = x3^2, pi^13 = x2: the cyclic sum is -pi^22 + 2 x3 pi^33 = 0
    P = PoissonStructure.build(["x1", "x2", "x3"], {(0, 1): "x3^2", (0, 2): "x2"})
    assert poisson_jacobi_residual(P) < 1e-12


def test_cotangent_su2(su2p, su2_alg):
    pts = np.random.default_rng(0).uniform(-1, 1, (10, 3))
    dxdy = bracket(su2_alg, Section.frame(3, 0), Section.frame(3, 1))
    assert np.allclose(evaluate_section(su2_alg, dxdy, pts), [0, 0, 1])
    for p in pts:
        x, y, z = p
        assert np.allclose(anchor_apply(su2_alg, Section.frame(3, 0), p), [0, z, -y])


def test_cotangent_constant_symplectic():
    P = PoissonStructure.build(["q", "p"], {(0, 1): 1})
    A = cotangent_algebroid(P)
    B = A.anchor_matrix(np.array([0.3, 0.4]))
    assert abs(np.linalg.det(B)) == pytest.approx(1)
    assert not A.structure


def test_rescaled_anchor(su2_alg):
    bundle = catalog.su2_rescaled("exp(r^2/2)")
    pts = np.random.default_rng(1).uniform(-1.5, 1.5, (20, 3))
    a = np.exp(np.sum(pts ** 2, axis=1) / 2)
    assert np.allclose(bundle.algebroid.anchor_matrix(pts), a[:, None, None] * su2_alg.anchor_matrix(pts))


def test_koszul_identities(su2p, su2_alg):
    P = su2p.scaled("1 + x^2 + y^2 + z^2")
    A = cotangent_algebroid(P)
    pts = np.random.default_rng(2).uniform(-1, 1, (15, 3))
    f, g = ex.parse("x*y + sin(z)"), ex.parse("z^2 - x")
    df = Section([ex.diff(f, c) for c in XYZ])
    dg = Section([ex.diff(g, c) for c in XYZ])
    fg = poisson_bracket(P, f, g)
    dfg = Section([ex.diff(fg, c) for c in XYZ])
    assert np.abs(evaluate_section(A, bracket(A, df, dg) - dfg, pts)).max() < 1e-12
    Xf = hamiltonian_vf(P, f)
    for p in pts:
        assert np.allclose(anchor_apply(A, df, p), [ex.evaluate(c, dict(zip(XYZ, p))) for c in Xf])


def test_hamiltonian_vf(su2p):
    assert all(c.is_zero() for c in hamiltonian_vf(su2p, "3.0"))
    Z = hamiltonian_vf(su2p, "z")
    env = {"x": 0.3, "y": -0.7, "z": 0.2}
    assert [ex.evaluate(c, env) for c in Z] == pytest.approx([-0.7, -0.3, 0.0])
    # X_z(x) = {z, x} = y
    assert ex.evaluate(poisson_bracket(su2p, "z", "x"), env) == pytest.approx(-0.7)
    casimir = hamiltonian_vf(su2p, "x^2 + y^2 + z^2")
    pts = np.random.default_rng(3).uniform(-1, 1, (10, 3))
    f = ex.compile_exprs(list(casimir), XYZ)
    assert np.abs(f(*pts.T)).max() < 1e-14


def test_is_poisson_vf(su2p):
    pts = np.random.default_rng(4).uniform(-1, 1, (20, 3))
    assert is_poisson_vf(su2p, hamiltonian_vf(su2p, "x*y + exp(z)"), pts) < 1e-10
    assert is_poisson_vf(su2p, ["0", "0", "0"], pts) == 0
    euler = is_poisson_vf(su2p, list(XYZ), pts)
    assert euler == pytest.approx(np.abs(pts).max(), rel=1e-12)


def test_integral_along(su2p, su2_alg):
    rng = np.random.default_rng(5)
    p = _random_path(su2_alg, rng)
    assert integral_along(su2p, ["0", "0", "0"], p) == 0
    X = ["y*z", "x", "1"]
    assert integral_along(su2p, X, p.with_fiber(2 * p.a)) == pytest.approx(2 * integral_along(su2p, X, p), rel=1e-14)


def test_hamiltonian_integral_depends_on_endpoints(su2p, su2_alg):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(20):
        p = _random_path(su2_alg, rng)
        h = ex.parse(f"{rng.uniform(-1, 1):.3f}*x*y + sin(z) + {rng.uniform(-1, 1):.3f}*x^2")
        hv = ex.compile_exprs([h], XYZ)
        dh = hv(*p.end)[0] - hv(*p.start)[0]
        # with rho(df) = X_f and X_f(g) = {f, g}: <a, X_h> = -dh/dt along the path
        worst = max(worst, abs(integral_along(su2p, hamiltonian_vf(su2p, h), p) + dh))
    assert worst < 1e-6


def test_integral_homotopy_invariance(su2p, su2_alg):
    rng = np.random.default_rng(7)
    fields = [hamiltonian_vf(su2p, "x*y + exp(z)"), hamiltonian_vf(su2p, "z"), ["y", "-x", "0"]]
    pts = rng.uniform(-1, 1, (10, 3))
    assert all(is_poisson_vf(su2p, X, pts) < 1e-8 for X in fields)
    p = geodesic(su2_alg, [0.4, -0.6, 0.9], [0.5, 0.2, -0.4], N=1000)
    t = p.t
    # add a kernel-valued loop phi(t) gamma(t) with zero mean; the base path is unchanged
    bump = [p.with_fiber(p.a + e * np.sin(2 * np.pi * t)[:, None] * p.x) for e in np.linspace(0, 1, 101)]
    variations = [reparametrization_variation(p, M=100), left_unit_variation(p, M=100),
                  Variation.from_paths(bump)]
    for var in variations:
        res = is_homotopy(su2_alg, var)
        assert res.is_homotopy
        for X in fields:
            assert abs(integral_along(su2p, X, var.slice(0)) - integral_along(su2p, X, var.slice(-1))) < 1e-4


def test_moment_map(su2p, su2_alg):
    rng = np.random.default_rng(8)
    etas = bump_one_forms(XYZ)[:10]
    for _ in range(3):
        p = _random_path(su2_alg, rng)
        assert max(abs(moment_J(su2p, p, eta, su2_alg)) for eta in etas) < 1e-5
    p = _random_path(su2_alg, rng)
    off = p.with_fiber(np.zeros_like(p.a))
    assert max(abs(moment_J(su2p, off, eta, su2_alg)) for eta in etas) > 1e-3
    zero = one_form(XYZ, ["0", "0", "0"])
    assert moment_J(su2p, off, zero, su2_alg) == 0


def test_one_forms_vanish_at_ends():
    for eta in bump_one_forms(XYZ):
        x = np.array([[0.3, 0.2, 0.1], [0.5, -0.5, 0.2]])
        assert np.allclose(eta(np.array([0.0, 1.0]), x), 0)


def test_j_additivity(su2p, su2_alg):
    rng = np.random.default_rng(9)
    etas = bump_one_forms(XYZ)
    a0 = _random_path(su2_alg, rng)
    a1 = integrate_section(su2_alg, Section(["0.3", "x", "-0.2*sin(time)"]), a0.end, 1000)
    assert j_cocycle_additivity_check(su2p, a0, a1, etas) < 1e-5
    b0 = a0.with_fiber(np.zeros_like(a0.a))
    b1 = a1.with_fiber(a1.a * 0.5 + 0.1)
    assert j_cocycle_additivity_check(su2p, b0, b1, etas) < 1e-4
    assert j_cocycle_additivity_check(su2p, b0, b0.reversed(), etas) < 1e-4


def test_casimir_preserving_perturbations():
    rng = np.random.default_rng(10)
    base = catalog.linear_su2_poisson(chart_box=[(-1, 1)] * 3)
    for _ in range(50):
        c = rng.uniform(0, 0.5, 3)
        factor = f"1 + {c[0]:.4f}*(x^2+y^2+z^2) + {c[1]:.4f}*(x^2+y^2+z^2)^2 + {c[2]:.4f}*sin(x^2+y^2+z^2)"
        P = base.scaled(factor)
        assert poisson_jacobi_residual(P, 30) < 1e-10
        assert axiom_residuals(cotangent_algebroid(P), 30).passed(1e-8)


def test_anchor_skew(su2p):
    A = cotangent_algebroid(su2p.scaled("exp(x*y)"))
    pts = np.random.default_rng(11).uniform(-1, 1, (10, 3))
    B = A.anchor_matrix(pts)
    assert np.array_equal(B, -np.swapaxes(B, 1, 2))
