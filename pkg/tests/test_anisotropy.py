import numpy as np
import pytest

from atwflow.anisotropy import (
    AnisotropyError,
    DegenerateGradientError,
    EuclideanAnisotropy,
    RiemannianAnisotropy,
    SmoothedLpAnisotropy,
    SpaceModulatedAnisotropy,
    curvature,
    curvature_from_interface,
    dual_structure,
    finsler_reweight,
    from_spec,
    numeric_polar,
    unit_ball_volume,
)

MODELS = {
    "euclid": EuclideanAnisotropy(),
    "riemannian": RiemannianAnisotropy(a11=4.0, a22=1.0),
    "riemannian_x": RiemannianAnisotropy(a11="2 + sin(x)", a12=0.2, a22=1.0),
    "lp": SmoothedLpAnisotropy(q=4.0, eps=0.05),
    "modulated": SpaceModulatedAnisotropy(EuclideanAnisotropy(), "1 + 0.5*sin(x)"),
}


def sample_points(n, seed=0):
    rng = np.random.default_rng(seed)
    xy = rng.uniform(-0.8, 0.8, size=(n, 2))
    p = rng.normal(size=(n, 2))
    p = p[np.hypot(p[:, 0], p[:, 1]) > 1e-3]
    return xy[: len(p)], p


def test_euclidean_value():
    assert MODELS["euclid"].value(np.zeros(2), np.array([3.0, 4.0])) == pytest.approx(5.0)


def test_riemannian_closed_form():
    assert MODELS["riemannian"].value(np.zeros(2), np.array([1.0, 0.0])) == pytest.approx(2.0)


def test_smoothed_lp_value_bounds():
    lp = MODELS["lp"]
    v = lp.value(np.zeros(2), np.array([1.0, 1.0]))
    base = 2.0 ** 0.25
    assert base <= v <= base + lp.eps * 2.0


def test_smoothed_lp_against_support_function_roundtrip():
    # brute force: tabulate the polar on a fine grid of directions, then
    # recover the value as the support function of the polar ball
    lp = MODELS["lp"]
    p = np.array([1.0, 1.0])
    n = 2048
    theta = np.linspace(0, 2 * np.pi, n, endpoint=False)
    u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    polar_tab = numeric_polar(lp, np.zeros(2), u)
    recovered = np.max(u @ p / polar_tab)
    assert recovered == pytest.approx(lp.value(np.zeros(2), p), rel=1e-5)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_homogeneity_and_bounds(name):
    model = MODELS[name]
    xy, p = sample_points(1000, seed=1)
    v = model.value(xy, p)
    for s in (0.0, 0.37, 2.9):
        assert np.allclose(model.value(xy, s * p), s * v, rtol=1e-12, atol=1e-13)
    theta = np.linspace(0, 2 * np.pi, 100, endpoint=False)
    un = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    vals = model.value(xy[:50, None, :], un[None, :, :])
    lam = model.ellipticity_bound(xy[:50])
    assert np.all(vals <= lam + 1e-9)
    assert np.all(vals >= 1.0 / lam - 1e-9)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_midpoint_convexity(name):
    model = MODELS[name]
    rng = np.random.default_rng(7)
    xy = rng.uniform(-0.8, 0.8, size=(1000, 2))
    p = rng.normal(size=(1000, 2))
    q = rng.normal(size=(1000, 2))
    mid = model.value(xy, (p + q) / 2)
    assert np.all(mid <= (model.value(xy, p) + model.value(xy, q)) / 2 + 1e-12)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_derivatives_match_finite_differences(name):
    model = MODELS[name]
    xy, p = sample_points(40, seed=2)
    d = 1e-5
    eye = np.eye(2)
    gp = model.grad_p(xy, p)
    hp = model.hess_p(xy, p)
    gx = model.grad_x_grad_p(xy, p)
    for i in range(2):
        fd_g = (model.value(xy, p + d * eye[i]) - model.value(xy, p - d * eye[i])) / (2 * d)
        assert np.allclose(gp[:, i], fd_g, rtol=1e-4, atol=1e-6)
        fd_h = (model.grad_p(xy, p + d * eye[i]) - model.grad_p(xy, p - d * eye[i])) / (2 * d)
        assert np.allclose(hp[:, :, i], fd_h, rtol=1e-4, atol=1e-4)
        fd_x = (model.grad_p(xy + d * eye[i], p) - model.grad_p(xy - d * eye[i], p)) / (2 * d)
        assert np.allclose(gx[:, i, :], fd_x, rtol=1e-4, atol=1e-4)


@pytest.mark.parametrize("name", sorted(MODELS))
def test_euler_identity_and_homogeneous_derivatives(name):
    model = MODELS[name]
    xy, p = sample_points(200, seed=3)
    val = model.value(xy, p)
    gp = model.grad_p(xy, p)
    assert np.allclose(np.einsum("ni,ni->n", gp, p), val, rtol=1e-10, atol=1e-12)
    # grad_p is 0-homogeneous, hess_p is (-1)-homogeneous
    assert np.allclose(model.grad_p(xy, 3.1 * p), gp, rtol=1e-10, atol=1e-12)
    assert np.allclose(model.hess_p(xy, 2.0 * p), model.hess_p(xy, p) / 2.0,
                       rtol=1e-10, atol=1e-12)


def test_gradient_rejects_zero():
    with pytest.raises(DegenerateGradientError):
        MODELS["euclid"].grad_p(np.zeros(2), np.zeros(2))


def test_non_spd_riemannian_rejected():
    with pytest.raises(AnisotropyError):
        RiemannianAnisotropy(a11=1.0, a12=2.0, a22=1.0)


def test_polar_euclid_self_dual():
    xy, p = sample_points(50, seed=4)
    assert np.allclose(MODELS["euclid"].polar(xy, p), MODELS["euclid"].value(xy, p))


def test_polar_zero():
    assert MODELS["lp"].polar(np.zeros(2), np.zeros(2)) == pytest.approx(0.0)
    assert MODELS["riemannian"].polar(np.zeros(2), np.zeros(2)) == pytest.approx(0.0)


def test_riemannian_polar_is_inverse_matrix():
    model = MODELS["riemannian"]
    xi = np.array([1.0, 0.0])
    assert model.polar(np.zeros(2), xi) == pytest.approx(0.5)
    # against the angular-sweep fallback
    xy, p = sample_points(20, seed=5)
    assert np.allclose(
        model.polar(xy, p), numeric_polar(model, xy, p), rtol=1e-6, atol=1e-9
    )


@pytest.mark.parametrize("name", sorted(MODELS))
def test_duality_inequality_and_gradient_equality(name):
    model = MODELS[name]
    xy, p = sample_points(1000, seed=6)
    rng = np.random.default_rng(8)
    xi = rng.normal(size=p.shape)
    lhs = np.einsum("ni,ni->n", p, xi)
    rhs = model.value(xy, p) * model.polar(xy, xi)
    assert np.all(lhs <= rhs * (1 + 1e-9) + 1e-12)
    # equality at xi = grad_p: polar(grad_p) = 1
    gp = model.grad_p(xy[:100], p[:100])
    assert np.allclose(model.polar(xy[:100], gp), 1.0, atol=1e-4)


@pytest.mark.parametrize("name", ["euclid", "riemannian", "lp"])
def test_polar_involution(name):
    model = MODELS[name]
    theta = np.linspace(0, 2 * np.pi, 64, endpoint=False)
    u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    n = 1024
    th2 = np.linspace(0, 2 * np.pi, n, endpoint=False)
    v = np.stack([np.cos(th2), np.sin(th2)], axis=-1)
    polar_v = model.polar(np.zeros(2), v)
    bipolar = np.max(u @ v.T / polar_v[None, :], axis=1)
    assert np.allclose(bipolar, model.value(np.zeros(2), u), rtol=2e-4)


def test_reversal_identities():
    model = MODELS["riemannian_x"]
    rev = model.reversed()
    xy, p = sample_points(100, seed=9)
    assert np.allclose(rev.value(xy, p), model.value(xy, -p))
    # polar of the reversal equals the reversal of the polar
    assert np.allclose(rev.polar(xy, p), model.polar(xy, -p))
    assert rev.reversed() is model


def test_curvature_circle():
    R = 0.5
    xy = np.array([R, 0.0])
    g = -xy / R
    X = -(np.eye(2) - np.outer(xy, xy) / R**2) / R
    assert curvature(MODELS["euclid"], xy, g, X) == pytest.approx(1.0 / R)


def test_curvature_affine_is_zero():
    g = np.array([0.7, -0.2])
    X = np.zeros((2, 2))
    for name in ("euclid", "riemannian", "lp"):
        assert curvature(MODELS[name], np.array([0.3, 0.1]), g, X) == pytest.approx(0.0, abs=1e-12)


def test_curvature_rejects_zero_gradient():
    with pytest.raises(DegenerateGradientError):
        curvature(MODELS["euclid"], np.zeros(2), np.zeros(2), np.zeros((2, 2)))


def test_space_modulated_line_curvature():
    # phi = m(x)|p| with linear-ish m: flat interface curvature equals the
    # normal derivative of m; oracle by finite differences in x of grad_p
    model = SpaceModulatedAnisotropy(EuclideanAnisotropy(), "1 + 0.25*x")
    nu = np.array([1.0, 0.0])
    xy = np.array([0.2, -0.1])
    H = curvature(model, xy, -nu, np.zeros((2, 2)))
    assert H == pytest.approx(0.25, abs=1e-12)
    d = 1e-6
    fd = sum(
        (model.grad_p(xy + d * e, nu)[i] - model.grad_p(xy - d * e, nu)[i]) / (2 * d)
        for i, e in enumerate(np.eye(2))
    )
    assert H == pytest.approx(fd, abs=1e-6)


def test_curvature_from_interface_matches_hamiltonian_form():
    model = MODELS["riemannian"]
    nu = np.array([np.cos(0.7), np.sin(0.7)])
    kappa = 2.3
    a = curvature_from_interface(model, np.zeros(2), nu, kappa)
    tau = np.array([-nu[1], nu[0]])
    X = -kappa * np.outer(tau, tau)
    b = curvature(model, np.zeros(2), -nu, X)
    assert a == pytest.approx(b, rel=1e-12)


def test_finsler_reweight_euclidean_identity():
    fr = finsler_reweight(MODELS["euclid"])
    assert unit_ball_volume(MODELS["euclid"]) == pytest.approx(np.pi, rel=1e-6)
    assert fr.modulation(0.0, 0.0) == pytest.approx(1.0, rel=1e-6)


def test_finsler_reweight_riemannian():
    # unit ball of the metric is the ellipse {p . A p <= 1}: area pi/sqrt(det A)
    model = MODELS["riemannian"]
    vol = unit_ball_volume(model)
    assert vol == pytest.approx(np.pi / 2.0, rel=1e-6)
    fr = finsler_reweight(model)
    assert fr.modulation(0.0, 0.0) == pytest.approx(2.0, rel=1e-6)
    p = np.array([0.3, 0.4])
    assert fr.value(np.zeros(2), p) == pytest.approx(2.0 * model.value(np.zeros(2), p), rel=1e-6)


def test_finsler_reweight_constant_for_position_free():
    fr = finsler_reweight(MODELS["lp"])
    a = fr.modulation(0.0, 0.0)
    b = fr.modulation(0.5, -0.3)
    assert a == pytest.approx(b, rel=1e-12)


def test_dual_structure_factorization():
    pts = np.zeros((3, 3, 2))
    s = dual_structure(MODELS["riemannian"], pts)
    assert s.base == "euclid"
    rng = np.random.default_rng(11)
    p = rng.normal(size=(3, 3, 2))
    assert np.allclose(s.base_value(s.apply(p)), MODELS["riemannian"].value(pts, p))
    s2 = dual_structure(MODELS["lp"], pts)
    assert s2.base == "lp" and s2.q == 4.0


def test_from_spec_validation():
    m = from_spec({"family": "riemannian", "a11": 4, "a22": 1})
    assert isinstance(m, RiemannianAnisotropy)
    with pytest.raises(AnisotropyError):
        from_spec({"family": "nope"})
    with pytest.raises(AnisotropyError):
        from_spec({"family": "euclidean", "bogus": 1})
    mod = from_spec({"family": "euclidean", "modulation": "1 + 0.5*sin(x)"})
    assert isinstance(mod, SpaceModulatedAnisotropy)
