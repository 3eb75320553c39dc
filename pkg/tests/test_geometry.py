import numpy as np
import pytest

from atwflow.anisotropy import EuclideanAnisotropy, RiemannianAnisotropy
from atwflow.geometry import (
    SetState,
    build_shape_level,
    disk_level,
    ellipse_level,
    extract_interface,
    fit_interface_curvature,
    halfplane_level,
    hausdorff_distance,
    interface_quadrature,
    perimeter_phi,
    regression_smooth_polyline,
    symmetric_difference_area,
)
from atwflow.grid import Grid

GRID = Grid((256, 256), 1.0 / 256)


def test_disk_interface_closed_and_oriented():
    st = SetState.from_level(GRID, disk_level(GRID, (0.5, 0.5), 0.3))
    polys = st.interfaces()
    assert len(polys) == 1 and polys[0].closed
    mids, nus, lens = interface_quadrature(polys)
    radial = mids - 0.5
    radial /= np.hypot(radial[:, 0], radial[:, 1])[:, None]
    assert np.min(np.einsum("ni,ni->n", nus, radial)) > 0.99


def test_disk_perimeter_within_one_percent():
    st = SetState.from_level(GRID, disk_level(GRID, (0.5, 0.5), 0.3))
    p = perimeter_phi(st, EuclideanAnisotropy())
    assert p == pytest.approx(2 * np.pi * 0.3, rel=1e-2)


def test_riemannian_perimeter_of_disk():
    # P_phi(disk) = integral of sqrt(nu . A nu): for A=diag(4,1) on a circle
    st = SetState.from_level(GRID, disk_level(GRID, (0.5, 0.5), 0.25))
    phi = RiemannianAnisotropy(a11=4.0, a22=1.0)
    theta = np.linspace(0, 2 * np.pi, 20000, endpoint=False)
    exact = 0.25 * np.trapezoid(
        np.sqrt(4 * np.cos(theta) ** 2 + np.sin(theta) ** 2), dx=2 * np.pi / 20000
    )
    assert perimeter_phi(st, phi) == pytest.approx(exact, rel=1e-2)


def test_halfplane_open_polyline():
    st = SetState.from_level(GRID, halfplane_level(GRID, (1, 0), 0.5))
    polys = st.interfaces()
    assert len(polys) == 1 and not polys[0].closed
    assert perimeter_phi(st, EuclideanAnisotropy()) == pytest.approx(1.0, rel=2e-2)


def test_curvature_fit_circle():
    st = SetState.from_level(GRID, disk_level(GRID, (0.5, 0.5), 0.3))
    kappa, nufit = fit_interface_curvature(st.interfaces()[0], window=16 / 256)
    assert np.median(np.abs(kappa * 0.3 - 1.0)) < 0.01
    assert np.abs(kappa * 0.3 - 1.0).max() < 0.05


def test_curvature_sign_for_hole():
    level = -disk_level(GRID, (0.5, 0.5), 0.3)  # complement of a disk
    st = SetState.from_level(GRID, level)
    kappa, _ = fit_interface_curvature(st.interfaces()[0], window=16 / 256)
    assert np.median(kappa) < -2.0  # concave boundary seen from the set


def test_shape_grammar_union_difference():
    spec = {
        "type": "difference",
        "of": [
            {"type": "disk", "center": [0.5, 0.5], "radius": 0.3},
            {"type": "disk", "center": [0.5, 0.5], "radius": 0.15},
        ],
    }
    st = SetState.from_level(GRID, build_shape_level(GRID, spec))
    assert st.area() == pytest.approx(np.pi * (0.3**2 - 0.15**2), rel=2e-2)
    assert len(st.interfaces()) == 2


def test_complement_classification():
    st = SetState.from_level(GRID, -disk_level(GRID, (0.5, 0.5), 0.2))
    assert st.kind == "complement"
    assert st.complement().kind == "bounded"


def test_ellipse_area():
    st = SetState.from_level(GRID, ellipse_level(GRID, (0.5, 0.5), 0.3, 0.18, 0.4))
    assert st.area() == pytest.approx(np.pi * 0.3 * 0.18, rel=2e-2)


def test_regression_smoothing_preserves_circle():
    st = SetState.from_level(GRID, disk_level(GRID, (0.5, 0.5), 0.3))
    poly = st.interfaces()[0]
    sm = regression_smooth_polyline(poly, half_window=10)
    r = np.hypot(sm.points[:, 0] - 0.5, sm.points[:, 1] - 0.5)
    assert abs(r.mean() - 0.3) * 256 < 0.02  # no systematic shrinkage


def test_hausdorff_and_symmetric_difference():
    a = SetState.from_level(GRID, disk_level(GRID, (0.5, 0.5), 0.3))
    b = SetState.from_level(GRID, disk_level(GRID, (0.5, 0.5), 0.28))
    assert hausdorff_distance(a.interfaces(), b.interfaces()) == pytest.approx(0.02, abs=2 / 256)
    assert symmetric_difference_area(a, b) == pytest.approx(
        np.pi * (0.3**2 - 0.28**2), rel=0.05
    )
