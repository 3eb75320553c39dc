"""Anisotropy families: surface tensions and mobilities with exact derivatives.

Every family is closed form, so polars, p-derivatives and x-derivatives are
available analytically (position dependence enters through the expression
grammar and is differentiated symbolically). Points ``xy`` and vectors ``p``
are arrays with a trailing axis of length 2; all evaluators broadcast.
"""

from __future__ import annotations

import numpy as np

from .expressions import Const, Expr, parse


class AnisotropyError(ValueError):
    pass


class DegenerateGradientError(AnisotropyError):
    """Raised when a p-derivative is requested at p = 0."""


def _split(v):
    v = np.asarray(v, dtype=float)
    return v[..., 0], v[..., 1]


def _require_nonzero(p):
    p = np.asarray(p, dtype=float)
    n = np.hypot(p[..., 0], p[..., 1])
    if np.any(n == 0.0):
        raise DegenerateGradientError("p-derivatives undefined at p = 0")
    return p


class Anisotropy:
    """Base interface: value, p-derivatives, x-cross derivative and polar."""

    symmetric = True  # all builtin families satisfy value(x,-p) = value(x,p)

    def value(self, xy, p):
        raise NotImplementedError

    def grad_p(self, xy, p):
        raise NotImplementedError

    def hess_p(self, xy, p):
        raise NotImplementedError

    def grad_x_grad_p(self, xy, p):
        """Cross derivative, [..., i, j] = d_{x_i} d_{p_j} value."""
        raise NotImplementedError

    def polar(self, xy, xi):
        """Dual gauge: sup{ xi . p : value(xy, p) <= 1 }."""
        raise NotImplementedError

    @property
    def position_dependent(self) -> bool:
        return False

    def reversed(self) -> "Anisotropy":
        return ReversedAnisotropy(self)

    # -- sampled metadata -------------------------------------------------

    def unit_range(self, xy=None, n: int = 720):
        """(min, max) of value over unit directions at the given points."""
        theta = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        if xy is None:
            xy = np.zeros(2)
        pts = np.asarray(xy, dtype=float).reshape(-1, 2)
        vals = self.value(pts[:, None, :], u[None, :, :])
        return float(vals.min()), float(vals.max())

    def ellipticity_bound(self, xy=None, n: int = 720) -> float:
        lo, hi = self.unit_range(xy, n)
        if lo <= 0:
            raise AnisotropyError("anisotropy not bounded below on unit circle")
        return max(hi, 1.0 / lo)

    def lipschitz_estimate(self, points, n: int = 32, step: float = 1e-5) -> float:
        """Sampled x-Lipschitz constant of value on unit directions."""
        theta = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
        u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
        pts = np.asarray(points, dtype=float).reshape(-1, 2)
        worst = 0.0
        for e in (np.array([step, 0.0]), np.array([0.0, step])):
            a = self.value(pts[:, None, :] + e, u[None, :, :])
            b = self.value(pts[:, None, :] - e, u[None, :, :])
            worst = max(worst, float(np.max(np.abs(a - b))) / (2 * step))
        return worst


class EuclideanAnisotropy(Anisotropy):
    """value(x, p) = |p|."""

    def value(self, xy, p):
        px, py = _split(p)
        return np.hypot(px, py)

    def grad_p(self, xy, p):
        p = _require_nonzero(p)
        return p / self.value(xy, p)[..., None]

    def hess_p(self, xy, p):
        p = _require_nonzero(p)
        n = self.value(xy, p)
        u = p / n[..., None]
        eye = np.eye(2)
        return (eye - u[..., :, None] * u[..., None, :]) / n[..., None, None]

    def grad_x_grad_p(self, xy, p):
        p = np.asarray(p, dtype=float)
        return np.zeros(np.broadcast(np.asarray(xy, dtype=float), p).shape + (2,))

    def polar(self, xy, xi):
        return self.value(xy, xi)


class RiemannianAnisotropy(Anisotropy):
    """value(x, p) = sqrt(p . A(x) p) with A(x) symmetric positive definite.

    Entries may be constants or grammar expressions of x, y.
    """

    def __init__(self, a11=1.0, a12=0.0, a22=1.0):
        self.a11 = parse(a11)
        self.a12 = parse(a12)
        self.a22 = parse(a22)
        self._check_spd(np.array([[0.0, 0.0], [1.0, 1.0], [-1.0, 0.5]]))

    @property
    def position_dependent(self) -> bool:
        return not all(isinstance(e, Const) for e in (self.a11, self.a12, self.a22))

    def matrix(self, xy):
        x, y = _split(xy)
        shape = np.broadcast(x, y).shape
        A = np.empty(shape + (2, 2))
        A[..., 0, 0] = self.a11(x, y)
        A[..., 0, 1] = A[..., 1, 0] = self.a12(x, y)
        A[..., 1, 1] = self.a22(x, y)
        return A

    def _check_spd(self, pts):
        A = self.matrix(pts)
        det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] ** 2
        if np.any(A[..., 0, 0] <= 0) or np.any(det <= 0):
            raise AnisotropyError("Riemannian matrix not positive definite")

    def matrix_dx(self, xy):
        """d A / d x_i, shape (..., 2, 2, 2) indexed [i][row][col]."""
        x, y = _split(xy)
        shape = np.broadcast(x, y).shape
        dA = np.zeros(shape + (2, 2, 2))
        for i, var in enumerate(("x", "y")):
            dA[..., i, 0, 0] = self.a11.diff(var)(x, y)
            dA[..., i, 0, 1] = dA[..., i, 1, 0] = self.a12.diff(var)(x, y)
            dA[..., i, 1, 1] = self.a22.diff(var)(x, y)
        return dA

    def value(self, xy, p):
        p = np.asarray(p, dtype=float)
        A = self.matrix(xy)
        Ap = np.einsum("...ij,...j->...i", A, p)
        q = np.einsum("...i,...i->...", p, Ap)
        if np.any(q < 0):
            raise AnisotropyError("Riemannian matrix not positive definite")
        return np.sqrt(q)

    def grad_p(self, xy, p):
        p = _require_nonzero(p)
        A = self.matrix(xy)
        Ap = np.einsum("...ij,...j->...i", A, p)
        return Ap / self.value(xy, p)[..., None]

    def hess_p(self, xy, p):
        p = _require_nonzero(p)
        A = self.matrix(xy)
        Ap = np.einsum("...ij,...j->...i", A, p)
        v = self.value(xy, p)
        return A / v[..., None, None] - (
            Ap[..., :, None] * Ap[..., None, :]
        ) / (v**3)[..., None, None]

    def grad_x_grad_p(self, xy, p):
        p = _require_nonzero(p)
        A = self.matrix(xy)
        dA = self.matrix_dx(xy)
        Ap = np.einsum("...ij,...j->...i", A, p)
        v = self.value(xy, p)
        dAp = np.einsum("...iab,...b->...ia", dA, p)
        pdAp = np.einsum("...a,...ia->...i", p, dAp)
        return dAp / v[..., None, None] - (
            Ap[..., None, :] * pdAp[..., :, None]
        ) / (2.0 * v**3)[..., None, None]

    def inverse_matrix(self, xy):
        A = self.matrix(xy)
        det = A[..., 0, 0] * A[..., 1, 1] - A[..., 0, 1] ** 2
        inv = np.empty_like(A)
        inv[..., 0, 0] = A[..., 1, 1]
        inv[..., 1, 1] = A[..., 0, 0]
        inv[..., 0, 1] = inv[..., 1, 0] = -A[..., 0, 1]
        return inv / det[..., None, None]

    def polar(self, xy, xi):
        xi = np.asarray(xi, dtype=float)
        inv = self.inverse_matrix(xy)
        return np.sqrt(
            np.einsum("...i,...ij,...j->...", xi, inv, xi)
        )


def lp_value(p, q, eps):
    px, py = _split(p)
    r = np.hypot(px, py)
    s = np.abs(px) ** q + np.abs(py) ** q + eps * r**q
    return s ** (1.0 / q)


def lp_grad(p, q, eps):
    px, py = _split(p)
    r = np.hypot(px, py)
    s = np.abs(px) ** q + np.abs(py) ** q + eps * r**q
    ds = np.stack(
        [
            q * np.sign(px) * np.abs(px) ** (q - 1) + q * eps * r ** (q - 2) * px,
            q * np.sign(py) * np.abs(py) ** (q - 1) + q * eps * r ** (q - 2) * py,
        ],
        axis=-1,
    )
    return (1.0 / q) * (s ** (1.0 / q - 1.0))[..., None] * ds


def lp_hess(p, q, eps):
    px, py = _split(p)
    r = np.hypot(px, py)
    s = np.abs(px) ** q + np.abs(py) ** q + eps * r**q
    ds = np.stack(
        [
            q * np.sign(px) * np.abs(px) ** (q - 1) + q * eps * r ** (q - 2) * px,
            q * np.sign(py) * np.abs(py) ** (q - 1) + q * eps * r ** (q - 2) * py,
        ],
        axis=-1,
    )
    pvec = np.stack([px, py], axis=-1)
    eye = np.eye(2)
    d2s = (
        q * (q - 1) * np.stack(
            [np.abs(px) ** (q - 2), np.abs(py) ** (q - 2)], axis=-1
        )[..., :, None] * eye
        + q * eps * (q - 2) * (r ** (q - 4))[..., None, None]
        * pvec[..., :, None] * pvec[..., None, :]
        + q * eps * (r ** (q - 2))[..., None, None] * eye
    )
    c1 = (1.0 / q) * (1.0 / q - 1.0) * s ** (1.0 / q - 2.0)
    c2 = (1.0 / q) * s ** (1.0 / q - 1.0)
    return (
        c1[..., None, None] * ds[..., :, None] * ds[..., None, :]
        + c2[..., None, None] * d2s
    )


class SmoothedLpAnisotropy(Anisotropy):
    """value(p) = (|p1|^q + |p2|^q + eps |p|^q)^(1/q), q >= 2, eps > 0.

    The eps |p|^q term keeps the restriction to the unit circle uniformly
    elliptic, which a bare q-norm with q > 2 loses at the axes.
    """

    def __init__(self, q: float = 4.0, eps: float = 0.05):
        if q < 2:
            raise AnisotropyError(f"exponent must be >= 2, got {q}")
        if eps <= 0:
            raise AnisotropyError(f"smoothing must be positive, got {eps}")
        self.q = float(q)
        self.eps = float(eps)

    def value(self, xy, p):
        return lp_value(p, self.q, self.eps)

    def grad_p(self, xy, p):
        return lp_grad(_require_nonzero(p), self.q, self.eps)

    def hess_p(self, xy, p):
        return lp_hess(_require_nonzero(p), self.q, self.eps)

    def grad_x_grad_p(self, xy, p):
        p = np.asarray(p, dtype=float)
        return np.zeros(np.broadcast(np.asarray(xy, dtype=float), p).shape + (2,))

    def polar(self, xy, xi):
        return numeric_polar(self, xy, xi)


class SpaceModulatedAnisotropy(Anisotropy):
    """value(x, p) = m(x) * base(x, p) with a positive scalar modulation."""

    def __init__(self, base: Anisotropy, modulation):
        self.base = base
        self.modulation = parse(modulation)

    @property
    def position_dependent(self) -> bool:
        return True

    def _m(self, xy):
        x, y = _split(xy)
        m = self.modulation(x, y)
        if np.any(np.asarray(m) <= 0):
            raise AnisotropyError("modulation must be positive on the domain")
        return m

    def _dm(self, xy):
        x, y = _split(xy)
        return np.stack(
            [self.modulation.diff("x")(x, y) * np.ones_like(x),
             self.modulation.diff("y")(x, y) * np.ones_like(y)],
            axis=-1,
        )

    def value(self, xy, p):
        return self._m(xy) * self.base.value(xy, p)

    def grad_p(self, xy, p):
        return np.asarray(self._m(xy))[..., None] * self.base.grad_p(xy, p)

    def hess_p(self, xy, p):
        return np.asarray(self._m(xy))[..., None, None] * self.base.hess_p(xy, p)

    def grad_x_grad_p(self, xy, p):
        m = np.asarray(self._m(xy))
        dm = self._dm(xy)
        gb = self.base.grad_p(xy, p)
        return (
            dm[..., :, None] * gb[..., None, :]
            + m[..., None, None] * self.base.grad_x_grad_p(xy, p)
        )

    def polar(self, xy, xi):
        return self.base.polar(xy, xi) / self._m(xy)


class ReversedAnisotropy(Anisotropy):
    """value(x, p) = wrapped(x, -p); polar reverses accordingly."""

    def __init__(self, wrapped: Anisotropy):
        self.wrapped = wrapped

    @property
    def position_dependent(self) -> bool:
        return self.wrapped.position_dependent

    def value(self, xy, p):
        return self.wrapped.value(xy, -np.asarray(p, dtype=float))

    def grad_p(self, xy, p):
        return -self.wrapped.grad_p(xy, -np.asarray(p, dtype=float))

    def hess_p(self, xy, p):
        return self.wrapped.hess_p(xy, -np.asarray(p, dtype=float))

    def grad_x_grad_p(self, xy, p):
        return -self.wrapped.grad_x_grad_p(xy, -np.asarray(p, dtype=float))

    def polar(self, xy, xi):
        return self.wrapped.polar(xy, -np.asarray(xi, dtype=float))

    def reversed(self) -> Anisotropy:
        return self.wrapped


def numeric_polar(model: Anisotropy, xy, xi, n: int = 4096):
    """Generic polar via an angular sweep plus one vertex refinement.

    Maximizes xi . u / value(xy, u) over unit directions; the refinement is a
    Newton step on the discrete derivative through the best three samples,
    re-evaluated exactly at the refined angle.
    """
    xi = np.asarray(xi, dtype=float)
    xy = np.asarray(xy, dtype=float)
    shape = np.broadcast(xy, xi).shape[:-1]
    xi_b = np.broadcast_to(xi, shape + (2,)).reshape(-1, 2)
    xy_b = np.broadcast_to(xy, shape + (2,)).reshape(-1, 2)
    theta = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    out = np.empty(xi_b.shape[0])
    chunk = max(1, 2_000_000 // n)
    for s in range(0, xi_b.shape[0], chunk):
        e = min(s + chunk, xi_b.shape[0])
        vals = np.einsum("mk,nk->mn", xi_b[s:e], u) / model.value(
            xy_b[s:e, None, :], u[None, :, :]
        )
        k = np.argmax(vals, axis=1)
        rows = np.arange(e - s)
        f0 = vals[rows, k]
        fm = vals[rows, (k - 1) % n]
        fp = vals[rows, (k + 1) % n]
        denom = fm - 2.0 * f0 + fp
        with np.errstate(invalid="ignore", divide="ignore"):
            dt = np.where(np.abs(denom) > 1e-300, 0.5 * (fm - fp) / denom, 0.0)
        dt = np.clip(dt, -1.0, 1.0) * (2.0 * np.pi / n)
        th = theta[k] + dt
        ur = np.stack([np.cos(th), np.sin(th)], axis=-1)
        fr = np.einsum("mk,mk->m", xi_b[s:e], ur) / model.value(xy_b[s:e], ur)
        out[s:e] = np.maximum(f0, fr)
    out[np.hypot(xi_b[:, 0], xi_b[:, 1]) == 0.0] = 0.0
    return out.reshape(shape) if shape else float(out[0])


def unit_ball_volume(model: Anisotropy, xy=(0.0, 0.0), n: int = 4096) -> float:
    """Area of {p : value(xy, p) <= 1}, the local unit ball of the induced
    path metric (whose lengths are measured by the polar)."""
    theta = np.linspace(0.0, 2.0 * np.pi, n, endpoint=False)
    u = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    r = 1.0 / model.value(np.asarray(xy, dtype=float), u)
    return float(0.5 * np.sum(r**2) * (2.0 * np.pi / n))


class _BallVolumeModulation(Expr):
    """omega_2 / |B(x)| as a grammar-compatible expression (numeric)."""

    def __init__(self, model: Anisotropy, n: int = 2048, fd_step: float = 1e-5):
        self.model = model
        self.n = n
        self.fd_step = fd_step

    def __call__(self, x, y, t=0.0):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast(x, y).shape
        xb = np.broadcast_to(x, shape).ravel()
        yb = np.broadcast_to(y, shape).ravel()
        out = np.array(
            [
                np.pi / unit_ball_volume(self.model, (xi, yi), self.n)
                for xi, yi in zip(xb, yb)
            ]
        )
        return out.reshape(shape) if shape else float(out[0])

    def diff(self, var):
        return _FDDeriv(self, var, self.fd_step)

    def __str__(self):
        return "ball_volume_modulation"


class _FDDeriv(Expr):
    def __init__(self, f: Expr, var: str, step: float):
        self.f, self.var, self.step = f, var, step

    def __call__(self, x, y, t=0.0):
        h = self.step
        if self.var == "x":
            return (self.f(x + h, y, t) - self.f(x - h, y, t)) / (2 * h)
        if self.var == "y":
            return (self.f(x, y + h, t) - self.f(x, y - h, t)) / (2 * h)
        return np.zeros_like(np.asarray(x, dtype=float))

    def diff(self, var):
        return _FDDeriv(self, var, self.step)

    def __str__(self):
        return f"d{self.var}({self.f})"


def finsler_reweight(model: Anisotropy, n: int = 4096) -> SpaceModulatedAnisotropy:
    """Rescale by omega_2 / |B(x)| so surface measure matches the intrinsic
    Hausdorff measure of the metric induced by the polar."""
    if not model.position_dependent:
        mod = Const(np.pi / unit_ball_volume(model, (0.0, 0.0), n))
    else:
        mod = _BallVolumeModulation(model, n=min(n, 2048))
    return SpaceModulatedAnisotropy(model, mod)


def curvature(model: Anisotropy, xy, grad, hess):
    """Pointwise anisotropic curvature of {u >= u(x)} from grad u and hess u.

    Positive for a convex set with outer normal -grad/|grad|.
    """
    g = np.asarray(grad, dtype=float)
    n = np.hypot(g[..., 0], g[..., 1])
    if np.any(n == 0.0):
        raise DegenerateGradientError("curvature undefined where grad u = 0")
    cross = model.grad_x_grad_p(xy, -g)
    hp = model.hess_p(xy, -g)
    return (
        cross[..., 0, 0]
        + cross[..., 1, 1]
        - np.einsum("...ij,...ij->...", hp, np.asarray(hess, dtype=float))
    )


def curvature_from_interface(model: Anisotropy, xy, nu, kappa):
    """Pointwise curvature from an interface point: outer normal nu and
    Euclidean curvature kappa (positive for convex sets)."""
    nu = np.asarray(nu, dtype=float)
    tau = np.stack([-nu[..., 1], nu[..., 0]], axis=-1)
    cross = model.grad_x_grad_p(xy, nu)
    hp = model.hess_p(xy, nu)
    tHt = np.einsum("...i,...ij,...j->...", tau, hp, tau)
    return cross[..., 0, 0] + cross[..., 1, 1] + np.asarray(kappa) * tHt


class DualStructure:
    """Linear factorization value(x, p) = base(M(x) p) used by the dual solver.

    Euclidean and Riemannian families reduce to a Euclidean base (exact ball
    projection after absorbing M into the gradient operator); smoothed q-norm
    keeps its own base and needs the generic convex projection.
    """

    def __init__(self, base: str, M: np.ndarray, q=None, eps=None):
        self.base = base
        self.M = M
        self.q = q
        self.eps = eps

    @property
    def m_norm(self) -> float:
        """Max spectral norm of M over the grid (symmetric 2x2)."""
        a = self.M[..., 0, 0]
        b = self.M[..., 0, 1]
        c = self.M[..., 1, 1]
        half = 0.5 * (a + c)
        rad = np.sqrt((0.5 * (a - c)) ** 2 + b**2)
        return float(np.max(half + rad))

    def base_value(self, v):
        if self.base == "euclid":
            return np.hypot(v[..., 0], v[..., 1])
        return lp_value(v, self.q, self.eps)

    def apply(self, v):
        return np.einsum("...ij,...j->...i", self.M, v)


def _sqrtm_spd(A):
    a = A[..., 0, 0]
    b = A[..., 0, 1]
    c = A[..., 1, 1]
    s = np.sqrt(a * c - b * b)
    t = np.sqrt(a + c + 2.0 * s)
    M = np.empty_like(A)
    M[..., 0, 0] = (a + s) / t
    M[..., 0, 1] = M[..., 1, 0] = b / t
    M[..., 1, 1] = (c + s) / t
    return M


def dual_structure(model: Anisotropy, points: np.ndarray) -> DualStructure:
    """Resolve the linear factorization of a model on grid points (ny, nx, 2)."""
    if isinstance(model, ReversedAnisotropy):
        # builtin bases are symmetric in p, so reversal leaves the factorization
        return dual_structure(model.wrapped, points)
    if isinstance(model, SpaceModulatedAnisotropy):
        inner = dual_structure(model.base, points)
        m = np.asarray(model._m(points))
        return DualStructure(
            inner.base, m[..., None, None] * inner.M, q=inner.q, eps=inner.eps
        )
    shape = np.asarray(points).shape[:-1]
    eye = np.broadcast_to(np.eye(2), shape + (2, 2)).copy()
    if isinstance(model, EuclideanAnisotropy):
        return DualStructure("euclid", eye)
    if isinstance(model, RiemannianAnisotropy):
        return DualStructure("euclid", _sqrtm_spd(model.matrix(points)))
    if isinstance(model, SmoothedLpAnisotropy):
        return DualStructure("lp", eye, q=model.q, eps=model.eps)
    raise AnisotropyError(f"no dual factorization for {type(model).__name__}")


_FAMILIES = {
    "euclidean": EuclideanAnisotropy,
    "riemannian": RiemannianAnisotropy,
    "smoothed_lp": SmoothedLpAnisotropy,
}


def from_spec(spec) -> Anisotropy:
    """Build a model from a JSON-style dict, e.g.
    {"family": "riemannian", "a11": 4, "a22": 1, "modulation": "1 + 0.5*sin(x)"}.
    """
    if isinstance(spec, Anisotropy):
        return spec
    if isinstance(spec, str):
        spec = {"family": spec}
    spec = dict(spec)
    family = spec.pop("family", "euclidean").lower()
    modulation = spec.pop("modulation", None)
    reverse = spec.pop("reversed", False)
    if family not in _FAMILIES:
        raise AnisotropyError(f"unknown anisotropy family {family!r}")
    if family == "euclidean":
        model = EuclideanAnisotropy()
        if spec:
            raise AnisotropyError(f"unexpected parameters {sorted(spec)} for euclidean")
    elif family == "riemannian":
        model = RiemannianAnisotropy(
            a11=spec.pop("a11", 1.0), a12=spec.pop("a12", 0.0), a22=spec.pop("a22", 1.0)
        )
        if spec:
            raise AnisotropyError(f"unexpected parameters {sorted(spec)} for riemannian")
    else:
        model = SmoothedLpAnisotropy(
            q=spec.pop("q", 4.0), eps=spec.pop("eps", 0.05)
        )
        if spec:
            raise AnisotropyError(f"unexpected parameters {sorted(spec)} for smoothed_lp")
    if modulation is not None:
        model = SpaceModulatedAnisotropy(model, modulation)
    if reverse:
        model = model.reversed()
    return model
