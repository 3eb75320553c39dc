"""Executable forms of the geometric identities: weak curvature, the
distributional evolution laws, curvature monotonicity and submodularity."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .anisotropy import Anisotropy, curvature_from_interface
from .distance import signed_distance
from .geometry import (
    Polyline,
    SetState,
    fit_interface_curvature,
    interface_quadrature,
    perimeter_phi,
)
from .grid import Grid, bilinear_sample
from .relax import Forcing, SolverParams, discrete_perimeter


def _bump(r):
    """C^2 compact bump on [-1, 1]."""
    return np.where(np.abs(r) < 1.0, (1.0 - np.minimum(r * r, 1.0)) ** 3, 0.0)


def _bump_d(r):
    return np.where(
        np.abs(r) < 1.0, -6.0 * r * (1.0 - np.minimum(r * r, 1.0)) ** 2, 0.0
    )


class TestField:
    """Vector field X = b((x-c)/s) e_k with analytic Jacobian."""

    def __init__(self, center, scale, axis):
        self.c = np.asarray(center, dtype=float)
        self.s = float(scale)
        self.axis = int(axis)

    def __call__(self, pts):
        r = (pts - self.c) / self.s
        val = _bump(r[..., 0]) * _bump(r[..., 1])
        out = np.zeros(pts.shape)
        out[..., self.axis] = val
        return out

    def jacobian(self, pts):
        r = (pts - self.c) / self.s
        bx, by = _bump(r[..., 0]), _bump(r[..., 1])
        dbx, dby = _bump_d(r[..., 0]) / self.s, _bump_d(r[..., 1]) / self.s
        J = np.zeros(pts.shape + (2,))
        J[..., self.axis, 0] = dbx * by
        J[..., self.axis, 1] = bx * dby
        return J


def _interface_bumps(polys, scales, margin=1.2):
    """Two-scale lattice of bump fields whose supports meet the interface."""
    pts = np.concatenate([p.points for p in polys])
    fields = []
    for s in scales:
        lo = pts.min(axis=0) - s
        hi = pts.max(axis=0) + s
        nx = max(2, int(np.ceil((hi[0] - lo[0]) / s)) + 1)
        ny = max(2, int(np.ceil((hi[1] - lo[1]) / s)) + 1)
        for cx in lo[0] + s * np.arange(nx):
            for cy in lo[1] + s * np.arange(ny):
                d = np.hypot(pts[:, 0] - cx, pts[:, 1] - cy)
                if d.min() < margin * s:
                    fields.append(TestField((cx, cy), s, 0))
                    fields.append(TestField((cx, cy), s, 1))
    return fields


@dataclass
class WeakCurvatureFit:
    midpoints: np.ndarray
    normals: np.ndarray
    lengths: np.ndarray
    h_weak: np.ndarray
    h_pointwise: np.ndarray
    residual: float
    n_fields: int
    n_modes: int


def weak_curvature(
    state: SetState,
    phi: Anisotropy,
    scales: tuple[float, float] | None = None,
    fourier_modes: int = 10,
    curvature_window: float | None = None,
) -> WeakCurvatureFit:
    """Fit the distributional curvature against compact test fields.

    Both sides of the representation identity are assembled by midpoint
    quadrature over the interface polylines; the unknown curvature lives in
    a per-loop arc-length Fourier basis and is solved in least squares.
    The pointwise formula evaluated on a local quadratic fit of the
    interface is returned alongside for cross-checks.
    """
    polys = [p for p in state.interfaces() if len(p.points) >= 32]
    if not polys:
        raise ValueError("interface too coarse for a curvature fit")
    grid = state.grid
    if scales is None:
        span = max(
            float(np.ptp(np.concatenate([p.points for p in polys])[:, 0])),
            float(np.ptp(np.concatenate([p.points for p in polys])[:, 1])),
        )
        scales = (0.45 * span, 0.22 * span)
    fields = _interface_bumps(polys, scales)

    seg_data = []
    basis_cols = []
    col0 = 0
    for p in polys:
        mids, nus, lens = p.segments()
        arc = np.concatenate([[0.0], np.cumsum(lens)])[:-1] + 0.5 * lens
        total = float(lens.sum())
        nmodes = min(fourier_modes, max(1, len(lens) // 8))
        cols = [np.ones_like(arc)]
        for k in range(1, nmodes + 1):
            cols.append(np.cos(2 * np.pi * k * arc / total))
            cols.append(np.sin(2 * np.pi * k * arc / total))
        theta = np.stack(cols, axis=-1)
        seg_data.append((mids, nus, lens, theta, col0))
        basis_cols.append(theta.shape[1])
        col0 += theta.shape[1]
    ncols = col0

    A = np.zeros((len(fields), ncols))
    b = np.zeros(len(fields))
    for m, X in enumerate(fields):
        for mids, nus, lens, theta, c0 in seg_data:
            Xv = X(mids)
            J = X.jacobian(mids)
            taus = np.stack([-nus[:, 1], nus[:, 0]], axis=-1)
            div_tau = np.einsum("ni,nij,nj->n", taus, J, taus)
            # anisotropic surface divergence: grad_x phi . X + phi div_tau X
            # minus the tangential slope term grad_p phi . P (grad X)^T nu,
            # which only drops out when grad_p phi is parallel to nu
            gxphi = _grad_x_phi(phi, mids, nus)
            gp = phi.grad_p(mids, nus)
            jtn = np.einsum("nji,nj->ni", J, nus)
            jtn_t = jtn - nus * np.einsum("ni,ni->n", nus, jtn)[:, None]
            lhs = np.sum(
                lens
                * (
                    np.einsum("ni,ni->n", gxphi, Xv)
                    + phi.value(mids, nus) * div_tau
                    - np.einsum("ni,ni->n", gp, jtn_t)
                )
            )
            b[m] += lhs
            nux = np.einsum("ni,ni->n", nus, Xv)
            A[m, c0 : c0 + theta.shape[1]] += (lens * nux) @ theta

    coef, *_ = np.linalg.lstsq(A, b, rcond=None)
    resid = float(np.linalg.norm(A @ coef - b) / max(np.linalg.norm(b), 1e-300))

    mids_all, nus_all, lens_all, h_weak, h_point = [], [], [], [], []
    window = curvature_window or 16.0 * grid.spacing
    for (mids, nus, lens, theta, c0), p in zip(seg_data, polys):
        h_w = theta @ coef[c0 : c0 + theta.shape[1]]
        kappa, nufit = fit_interface_curvature(p, window)
        h_p = curvature_from_interface(phi, mids, nufit, kappa)
        mids_all.append(mids)
        nus_all.append(nus)
        lens_all.append(lens)
        h_weak.append(h_w)
        h_point.append(h_p)
    return WeakCurvatureFit(
        midpoints=np.concatenate(mids_all),
        normals=np.concatenate(nus_all),
        lengths=np.concatenate(lens_all),
        h_weak=np.concatenate(h_weak),
        h_pointwise=np.concatenate(h_point),
        residual=resid,
        n_fields=len(fields),
        n_modes=ncols,
    )


def _grad_x_phi(phi: Anisotropy, pts, nus, step=1e-6):
    """x-gradient of phi(x, nu) by central differences (exact enough for
    the expression-grammar families; kept numeric to stay family-agnostic)."""
    out = np.zeros_like(pts)
    for i, e in enumerate((np.array([step, 0.0]), np.array([0.0, step]))):
        out[:, i] = (phi.value(pts + e, nus) - phi.value(pts - e, nus)) / (2 * step)
    return out


class SpaceTimeBump:
    """eta(x, t) = b((x-c)/s) * (1 - t/T)^2, compactly supported in [0, T)."""

    def __init__(self, center, scale, horizon):
        self.c = np.asarray(center, dtype=float)
        self.s = float(scale)
        self.T = float(horizon)

    def value(self, pts, t):
        r = (pts - self.c) / self.s
        return _bump(r[..., 0]) * _bump(r[..., 1]) * (1.0 - t / self.T) ** 2

    def dt(self, pts, t):
        r = (pts - self.c) / self.s
        return _bump(r[..., 0]) * _bump(r[..., 1]) * (-2.0 / self.T) * (1.0 - t / self.T)


def distributional_laws_check(
    trace,
    phi: Anisotropy,
    psi: Anisotropy,
    forcing: Forcing | None = None,
    test_fields: list | None = None,
    params: SolverParams | None = None,
) -> dict:
    """Defects of the weak curvature and volume-velocity laws on a trace.

    Needs a trace recorded at every step. The curvature law compares the
    interface integrals of the discrete velocity against fitted curvature
    minus forcing; the volume law compares the space-time volume derivative
    against the mobility-weighted velocity flux.
    """
    forcing = forcing or Forcing(0.0)
    par = params or SolverParams()
    states = trace.states
    times = trace.times
    if len(states) < 3:
        raise ValueError("need at least three recorded states")
    h = times[1] - times[0]
    if any(abs((tb - ta) - h) > 1e-12 for ta, tb in zip(times[:-1], times[1:])):
        raise ValueError("laws check needs stride-1 recording")
    grid = states[0].grid
    T = times[-1]
    if test_fields is None:
        c = np.concatenate([p.points for p in states[0].interfaces()]).mean(axis=0)
        span = 2.5 * max(
            np.ptp(np.concatenate([p.points for p in states[0].interfaces()])[:, 0]),
            1e-3,
        )
        test_fields = [
            SpaceTimeBump(c, 0.8 * span, T),
            SpaceTimeBump(c + np.array([0.12 * span, 0.0]), 0.6 * span, T),
            SpaceTimeBump(c + np.array([0.0, -0.1 * span]), 0.7 * span, T),
        ]

    lawA_lhs = np.zeros(len(test_fields))
    lawA_rhs = np.zeros(len(test_fields))
    lawB_lhs = np.zeros(len(test_fields))
    lawB_rhs = np.zeros(len(test_fields))
    pts_grid = grid.points()
    area = grid.cell_area

    # the discrete flow is constant on [t_k, t_k + h); the time part of the
    # volume integral is integrated exactly over each interval (the test
    # functions decay on the scale of the whole horizon, so a one-sided
    # sample would alias badly at coarse step counts)
    for k in range(len(states)):
        t0 = times[k]
        t1 = times[k] + h
        cur = states[k]
        for m, eta in enumerate(test_fields):
            dvals = eta.value(pts_grid, min(t1, T)) - eta.value(pts_grid, t0)
            lawB_lhs[m] += float(dvals[cur.indicator].sum()) * area
    for m, eta in enumerate(test_fields):
        lawB_lhs[m] += float(
            np.sum(eta.value(pts_grid, 0.0)[states[0].indicator])
        ) * area

    for k in range(1, len(states)):
        t = times[k]
        prev, cur = states[k - 1], states[k]
        if cur.empty:
            break
        sd = signed_distance(prev, psi, band=None,
                             tol_factor=par.eikonal_tol,
                             max_sweeps=par.eikonal_max_sweeps)
        mids, nus, lens = interface_quadrature(cur.interfaces())
        v = bilinear_sample(grid, sd.values, mids) / h
        fit = weak_curvature(cur, phi)
        f_mid = forcing(mids[:, 0], mids[:, 1], t)
        psi_nu = psi.value(mids, fit.normals)
        for m, eta in enumerate(test_fields):
            # the exact telescoping of the volume side weights step k by
            # eta at t_k, so the flux side must sample there as well
            ev = eta.value(mids, t)
            lawA_lhs[m] += -h * np.sum(lens * v * ev)
            lawA_rhs[m] += h * np.sum(lens * (fit.h_weak - f_mid) * ev)
            lawB_rhs[m] += -h * np.sum(lens * psi_nu * v * ev)

    scaleA = np.maximum(np.maximum(np.abs(lawA_lhs), np.abs(lawA_rhs)), 1e-12)
    scaleB = np.maximum(np.maximum(np.abs(lawB_lhs), np.abs(lawB_rhs)), 1e-12)
    defA = np.abs(lawA_lhs - lawA_rhs) / scaleA
    defB = np.abs(lawB_lhs - lawB_rhs) / scaleB
    return {
        "curvature_law_defect": float(defA.max()),
        "velocity_law_defect": float(defB.max()),
        "curvature_law_defects": defA.tolist(),
        "velocity_law_defects": defB.tolist(),
        "curvature_law_sides": (lawA_lhs.tolist(), lawA_rhs.tolist()),
        "velocity_law_sides": (lawB_lhs.tolist(), lawB_rhs.tolist()),
        "n_fields": len(test_fields),
    }


def monotonicity_check(phi: Anisotropy, inner: dict, outer: dict, point, normal):
    """Pointwise curvature comparison of two analytic shapes tangent at a point.

    Shapes are dicts {"kappa": value} of the Euclidean curvature at the
    touching point (same outward normal). Returns both curvatures; the outer
    set's cannot exceed the inner's.
    """
    pt = np.asarray(point, dtype=float)
    nu = np.asarray(normal, dtype=float)
    nu = nu / np.hypot(*nu)
    h_inner = float(curvature_from_interface(phi, pt, nu, inner["kappa"]))
    h_outer = float(curvature_from_interface(phi, pt, nu, outer["kappa"]))
    return {
        "h_inner": h_inner,
        "h_outer": h_outer,
        "satisfied": h_outer <= h_inner + 1e-12,
    }


def submodularity_check(
    a: SetState, b: SetState, phi: Anisotropy, structure=None
) -> dict:
    """Perimeter submodularity of union/intersection for a pair of sets.

    Returns slacks for the interface-quadrature perimeter and for the
    solver's discrete total variation (positive slack = inequality holds).
    """
    grid = a.grid
    union = SetState.from_indicator(grid, a.indicator | b.indicator)
    inter = SetState.from_indicator(grid, a.indicator & b.indicator)

    def poly_p(s):
        return perimeter_phi(s, phi) if not (s.empty or s.full) else 0.0

    p_slack = poly_p(a) + poly_p(b) - poly_p(union) - poly_p(inter)
    if structure is None:
        from .anisotropy import dual_structure

        structure = dual_structure(phi, grid.points())
    d_slack = (
        discrete_perimeter(a, structure)
        + discrete_perimeter(b, structure)
        - discrete_perimeter(union, structure)
        - discrete_perimeter(inter, structure)
    )
    return {"polyline_slack": p_slack, "discrete_slack": d_slack}
