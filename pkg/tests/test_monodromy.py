import math
from fractions import Fraction

import numpy as np
import pytest

from algebroid_lab import catalog
from algebroid_lab import expr as ex
from algebroid_lab.monodromy import (CenterFrame, Lattice, LocalSystemError, QuadratureError, SphereMap, Splitting,
                                     VerdictThresholds, aggregate_verdict, center_check, curvature,
                                     curvature_tensor, integrability_verdict, integrate_curvature,
                                     lattice_discreteness, monodromy_lattice, profile_csv,
                                     pseudo_inverse_splitting, rn_profile, splitting_residual, transversal_trend)
from algebroid_lab.poisson import cotangent_algebroid
from oracles import min_positive_combination

TH, PH = ex.var("theta"), ex.var("phi")


def rescaled_generator(a, r, h=1e-6):
    # closed form of the signed generator 4 pi (a - r a') / a^2
    ap = (a(r + h) - a(r - h)) / (2 * h)
    return 4 * math.pi * (a(r) - r * ap) / a(r) ** 2


@pytest.fixture(scope="module")
def gauss_bundle():
    return catalog.su2_rescaled("exp(r^2/2)")


def _lattice_at(bundle, p, grid=(200, 400)):
    leaf = bundle.leaf_for(np.asarray(p, dtype=float))
    return monodromy_lattice(bundle.algebroid, p, leaf.spheres, leaf.splitting, leaf.frame, grid)


def test_catalog_splittings_are_right_inverses(gauss_bundle):
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1.5, 1.5, (20, 3))
    sigma = gauss_bundle.leaf_for(pts[0]).splitting
    assert splitting_residual(sigma, pts) < 1e-12
    s2 = catalog.s2xs2(0.6)
    assert splitting_residual(s2.leaf_for(np.ones(4)).splitting, s2.algebroid.sample_points(10, rng)) < 1e-14
    hz = catalog.heisenberg()
    assert splitting_residual(hz.leaf_for(np.ones(3)).splitting, hz.algebroid.sample_points(10, rng)) < 1e-12


def test_pseudo_inverse_matches_catalog(gauss_bundle):
    A = gauss_bundle.algebroid
    pinv = pseudo_inverse_splitting(A, np.array([[0.0, 0.6, 0.8], [0.8, 0.0, 0.6], [0.36, 0.48, 0.8]]))
    cat = gauss_bundle.leaf_for(np.ones(3)).splitting
    pts = np.random.default_rng(1).uniform(-1, 1, (10, 3))
    S1, dS1 = pinv.evaluate(pts)
    S2, dS2 = cat.evaluate(pts)
    assert np.allclose(S1, S2, atol=1e-12)
    assert np.allclose(dS1, dS2, atol=1e-9)
    with pytest.raises(Exception):
        pseudo_inverse_splitting(A, np.array([[0.0, 0.0, 0.0], [0.0, 0.0, 1.0]]))


def test_curvature_tangent_is_zero():
    A = catalog.tangent(3).algebroid
    sigma = Splitting.from_matrix(A, np.eye(3).tolist())
    X, Y = np.array([1.0, 0.2, 0.0]), np.array([0.0, 1.0, -0.3])
    assert np.all(curvature_tensor(A, sigma, np.zeros(3), X, Y) == 0)


def test_curvature_two_form_is_minus_omega():
    A = catalog.s2xs2(0.6).algebroid
    bundle = catalog.s2xs2(0.6)
    sigma = bundle.leaf_for(np.ones(4)).splitting
    p = np.array([0.7, 1.0, 1.3, 2.0])
    X, Y = np.array([1.0, 0, 0, 0]), np.array([0, 1.0, 0, 0])
    om = curvature_tensor(A, sigma, p, X, Y)
    assert np.allclose(om, [0, 0, 0, 0, -math.sin(0.7)])
    Z, W = np.array([0, 0, 1.0, 0]), np.array([0, 0, 0, 1.0])
    assert curvature_tensor(A, sigma, p, Z, W)[-1] == pytest.approx(-0.6 * math.sin(1.3))
    assert curvature_tensor(A, sigma, p, X, Z)[-1] == 0


def test_curvature_su2_closed_form(gauss_bundle):
    A = gauss_bundle.algebroid
    sigma = gauss_bundle.leaf_for(np.ones(3)).splitting
    rng = np.random.default_rng(2)
    fields = [["-y", "x", "0"], ["z", "0", "-x"]]
    for p in rng.uniform(-1.2, 1.2, (5, 3)):
        r = np.linalg.norm(p)
        a = math.exp(r * r / 2)
        ap = r * a
        X = np.array([-p[1], p[0], 0.0])
        Y = np.array([p[2], 0.0, -p[0]])
        num = curvature_tensor(A, sigma, p, X, Y)
        sym = curvature(A, sigma, fields[0], fields[1], p)
        assert np.allclose(num, sym, atol=1e-12)
        # density (a - r a') / (a^2 r^2) per unit outward area, along the unit normal;
        # integrated over the sphere this is the generator 4 pi (a - r a') / a^2
        area = p @ np.cross(X, Y) / r
        expected = (a - r * ap) / (a * a * r * r) * area * (p / r)
        assert np.allclose(num, expected, atol=1e-12)


def test_center_check_flags_bad_splitting():
    A = cotangent_algebroid(catalog.linear_su2_poisson())
    good = catalog.su2_rescaled("1").leaf_for(np.ones(3)).splitting
    pts = np.random.default_rng(3).uniform(-1, 1, (5, 3))
    assert center_check(A, Splitting.from_matrix(A, good.matrix), pts).ok
    # an extra x^2 entry makes the curvature leave the isotropy line spanned by x
    x, y, z = map(ex.var, "xyz")
    twisted = Splitting.from_matrix(A, [[0.0, z, -y], [-z + x * x, 0.0, x], [y, -x, 0.0]])
    res = center_check(A, twisted, pts)
    assert not res.ok
    assert "Lemma hypothesis violated" in res.message


@pytest.mark.parametrize("r", [0.5, 1.0, 2.0])
def test_linear_su2_generator(r):
    bundle = catalog.su2_rescaled("1")
    L = _lattice_at(bundle, [0.0, 0.0, r])
    assert abs(L.generators[0, 0]) == pytest.approx(4 * math.pi, rel=1e-4)


@pytest.mark.parametrize("r", [0.5, 0.9, 1.1, 2.0])
def test_rescaled_generator(gauss_bundle, r):
    L = _lattice_at(gauss_bundle, [r * 0.6, 0.0, r * 0.8])
    expected = rescaled_generator(lambda s: math.exp(s * s / 2), r)
    assert L.generators[0, 0] == pytest.approx(expected, rel=1e-4)
    assert abs(L.generators[0, 0]) == pytest.approx(4 * math.pi * abs(r * r - 1) * math.exp(-r * r / 2), rel=1e-4)


def test_orientation_reversal(gauss_bundle):
    p = np.array([0.0, 0.0, 1.5])
    leaf = gauss_bundle.leaf_for(p)
    s = leaf.spheres[0]
    fwd = integrate_curvature(gauss_bundle.algebroid, leaf.splitting, s, leaf.frame).value
    back = integrate_curvature(gauss_bundle.algebroid, leaf.splitting, s.reversed(), leaf.frame).value
    assert np.allclose(back, -fwd, rtol=1e-10)


def test_splitting_independence(gauss_bundle):
    A = gauss_bundle.algebroid
    p = np.array([0.0, 0.0, 1.5])
    leaf = gauss_bundle.leaf_for(p)
    base = integrate_curvature(A, leaf.splitting, leaf.spheres[0], leaf.frame).value
    # add a kernel-valued term: sigma' = sigma + n (x) df for a function f
    x, y, z = map(ex.var, "xyz")
    r = ex.sqrt(x * x + y * y + z * z)
    df = [ex.diff(x * y + ex.sin(z), c) for c in "xyz"]
    shifted = [[m + (v / r) * d for m, d in zip(row, df)] for row, v in zip(leaf.splitting.matrix, (x, y, z))]
    other = integrate_curvature(A, Splitting.from_matrix(A, shifted), leaf.spheres[0], leaf.frame).value
    assert abs(other[0] - base[0]) < 1e-4
    pinv = pseudo_inverse_splitting(A)
    assert abs(integrate_curvature(A, pinv, leaf.spheres[0], leaf.frame).value[0] - base[0]) < 1e-4


def test_midpoint_richardson(gauss_bundle):
    p = np.array([0.0, 0.0, 0.7])
    leaf = gauss_bundle.leaf_for(p)
    expected = rescaled_generator(lambda s: math.exp(s * s / 2), 0.7)
    errs = []
    for n in (20, 40, 80):
        res = integrate_curvature(gauss_bundle.algebroid, leaf.splitting, leaf.spheres[0], leaf.frame,
                                  (n, 2 * n), rule="midpoint", tol=1e-2)
        errs.append(abs(res.value[0] - expected))
    assert errs[2] < errs[1] < errs[0]
    assert errs[2] < 1e-6


def test_r_n_constant_along_leaf(gauss_bundle):
    rng = np.random.default_rng(4)
    vals = []
    for _ in range(4):
        d = rng.normal(size=3)
        L = _lattice_at(gauss_bundle, 1.3 * d / np.linalg.norm(d), (60, 120))
        vals.append(lattice_discreteness(L).r_N)
    assert max(vals) - min(vals) < 1e-9 * vals[0]


def test_quadrature_errors(gauss_bundle):
    leaf = gauss_bundle.leaf_for(np.array([0.0, 0.0, 1.5]))
    A = gauss_bundle.algebroid
    with pytest.raises(QuadratureError):
        integrate_curvature(A, leaf.splitting, leaf.spheres[0], leaf.frame, (1, 1))
    with pytest.raises(QuadratureError):
        integrate_curvature(A, leaf.splitting, leaf.spheres[0], leaf.frame, (4, 8), tol=1e-12)
    wrong = CenterFrame.build([["1", "0", "0"]])
    with pytest.raises(LocalSystemError):
        integrate_curvature(A, leaf.splitting, leaf.spheres[0], wrong)


def test_sphere_map_validation():
    with pytest.raises(Exception):
        SphereMap.build([TH, ex.var("x"), PH])


# ---------------------------------------------------------------------------
# lattices


def test_discreteness_examples():
    assert lattice_discreteness(Lattice(np.zeros((0, 1)))).r_N == math.inf
    assert lattice_discreteness(Lattice([0.0])).r_N == math.inf
    d = lattice_discreteness(Lattice([4 * math.pi, 4 * math.pi * 0.6]))
    assert d.status == "discrete"
    assert d.r_N == pytest.approx(4 * math.pi / 5, rel=1e-12)
    assert lattice_discreteness(Lattice([4 * math.pi, 4 * math.pi * math.sqrt(2)])).status == "indiscrete"
    noisy = Lattice([1.0, math.sqrt(2)], errors=[1e-3, 1e-3])
    assert lattice_discreteness(noisy).status == "unknown"
    two = lattice_discreteness(Lattice([[2.0, 0.0], [0.0, 3.0], [2.0, 3.0]]))
    assert two.status == "discrete" and two.r_N == pytest.approx(2.0)


def test_discreteness_matches_gcd_oracle():
    rng = np.random.default_rng(5)
    # small numerators and denominators keep the Bezout coefficients inside the search bound
    for num in (2, 2, 2, 3, 3):
        base = rng.uniform(0.5, 5.0)
        fracs = [Fraction(int(rng.integers(1, 8)), int(rng.integers(1, 8))) for _ in range(num)]
        gens = [base * float(f) for f in fracs]
        oracle = min_positive_combination(gens, bound=60, tol=1e-9)
        got = lattice_discreteness(Lattice(gens))
        assert got.status == "discrete"
        assert got.r_N == pytest.approx(oracle, rel=1e-9)


def test_transversal_trend():
    th = VerdictThresholds()
    lin = [(d, 3 * d) for d in (0.5, 0.25, 0.125, 0.0625)]
    assert transversal_trend(lin, th)["tends_to_zero"]
    flat = [(d, 2.0 + d) for d in (0.5, 0.25, 0.125, 0.0625)]
    assert not transversal_trend(flat, th)["tends_to_zero"]
    # levels merge by their minimum
    merged = transversal_trend([(0.1, 5.0), (0.1, 0.1), (0.05, 0.05)], th)
    assert merged["min_value"] == 0.05 and merged["tends_to_zero"]
    assert not transversal_trend([], th)["tends_to_zero"]


def test_verdicts(gauss_bundle):
    A = gauss_bundle.algebroid
    L = _lattice_at(gauss_bundle, [0, 0, 1.0])
    samples = []
    for m in range(1, 9):
        for r in (1 + 2.0 ** -m, 1 - 2.0 ** -m):
            samples.append((2.0 ** -m, lattice_discreteness(_lattice_at(gauss_bundle, [0, 0, r], (40, 80))).r_N))
    rep = integrability_verdict(A, [0, 0, 1.0], L, samples)
    assert rep.verdict == "obstruction-(ii)" and rep.integrable is False
    ok = integrability_verdict(A, [0, 0, 0.5], _lattice_at(gauss_bundle, [0, 0, 0.5]),
                               [(0.1, 5.0), (0.05, 5.1)])
    assert ok.verdict == "integrable-at-x"
    s2 = catalog.s2xs2(math.sqrt(2))
    bad = integrability_verdict(s2.algebroid, np.ones(4), _lattice_at(s2, np.ones(4)))
    assert bad.verdict == "obstruction-(i)"
    assert aggregate_verdict([ok, bad]) == "non-integrable"
    assert aggregate_verdict([ok]) == "integrable"
    assert '"verdict":"obstruction-(i)"' in bad.to_json().replace(" ", "")


def test_rn_profile(gauss_bundle):
    pts = [[0, 0, 0.5], [0, 0, 1.0], [0, 0, 2.0], [0, 0, 0]]
    prof = rn_profile(gauss_bundle.algebroid, pts, gauss_bundle.leaf_for, (60, 120))
    assert prof[0].r_N == pytest.approx(abs(rescaled_generator(lambda s: math.exp(s * s / 2), 0.5)), rel=1e-6)
    assert prof[1].r_N == math.inf
    assert prof[3].r_N == math.inf and prof[3].generators == []
    text = profile_csv(prof, [0.5, 1.0, 2.0, 0.0])
    assert text.splitlines()[0] == "r,x_1,x_2,x_3,r_N,generator,status"
    assert ",inf," in text.splitlines()[2]
