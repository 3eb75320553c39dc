"""Uniform cell-centered grid on a rectangular box."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class GridError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Cell-centered square-cell grid.

    Arrays living on the grid have shape ``(ny, nx)`` indexed ``[j, i]``
    with ``x = origin[0] + (i + 0.5) * spacing`` and likewise for y.
    """

    shape: tuple[int, int]  # (ny, nx)
    spacing: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        ny, nx = self.shape
        if ny < 4 or nx < 4:
            raise GridError(f"grid too small: {self.shape}")
        if self.spacing <= 0:
            raise GridError(f"spacing must be positive, got {self.spacing}")

    @classmethod
    def from_box(cls, origin, extents, shape) -> "Grid":
        ny, nx = shape
        dx = extents[0] / nx
        dy = extents[1] / ny
        if abs(dx - dy) > 1e-12 * max(dx, dy):
            raise GridError(f"cells must be square: dx={dx}, dy={dy}")
        return cls(shape=(ny, nx), spacing=dx, origin=(origin[0], origin[1]))

    @property
    def ny(self) -> int:
        return self.shape[0]

    @property
    def nx(self) -> int:
        return self.shape[1]

    @property
    def extents(self) -> tuple[float, float]:
        return (self.nx * self.spacing, self.ny * self.spacing)

    @property
    def cell_area(self) -> float:
        return self.spacing * self.spacing

    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.origin[0] + (np.arange(self.nx) + 0.5) * self.spacing
        y = self.origin[1] + (np.arange(self.ny) + 0.5) * self.spacing
        return x, y

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return (X, Y) center coordinates, each of shape (ny, nx)."""
        x, y = self.axes()
        return np.meshgrid(x, y)

    def points(self) -> np.ndarray:
        """Cell centers stacked as an (ny, nx, 2) array."""
        X, Y = self.centers()
        return np.stack([X, Y], axis=-1)

    def frame_mask(self, width: int = 1) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        m[:width, :] = True
        m[-width:, :] = True
        m[:, :width] = True
        m[:, -width:] = True
        return m

    def zeros(self) -> np.ndarray:
        return np.zeros(self.shape)

    def subgrid(self, jslice: slice, islice: slice) -> "Grid":
        j0 = jslice.start or 0
        i0 = islice.start or 0
        ny = (jslice.stop if jslice.stop is not None else self.ny) - j0
        nx = (islice.stop if islice.stop is not None else self.nx) - i0
        origin = (
            self.origin[0] + i0 * self.spacing,
            self.origin[1] + j0 * self.spacing,
        )
        return Grid(shape=(ny, nx), spacing=self.spacing, origin=origin)


def forward_gradient(w: np.ndarray, spacing: float) -> np.ndarray:
    """Forward-difference gradient, zero on the trailing row/column.

    Returns an array of shape (ny, nx, 2) ordered (d/dx, d/dy).
    """
    gx = np.zeros_like(w)
    gy = np.zeros_like(w)
    gx[:, :-1] = (w[:, 1:] - w[:, :-1]) / spacing
    gy[:-1, :] = (w[1:, :] - w[:-1, :]) / spacing
    return np.stack([gx, gy], axis=-1)


def backward_divergence(xi: np.ndarray, spacing: float) -> np.ndarray:
    """Negative adjoint of :func:`forward_gradient`.

    Satisfies sum(xi * grad(w)) == -sum(div(xi) * w) exactly for fields with
    the trailing-edge convention of forward_gradient.
    """
    xix = xi[..., 0]
    xiy = xi[..., 1]
    div = np.zeros(xi.shape[:2])
    div[:, 0] += xix[:, 0]
    div[:, 1:-1] += xix[:, 1:-1] - xix[:, :-2]
    div[:, -1] += -xix[:, -2]
    div[0, :] += xiy[0, :]
    div[1:-1, :] += xiy[1:-1, :] - xiy[:-2, :]
    div[-1, :] += -xiy[-2, :]
    return div / spacing


def diagonal_gradient(w: np.ndarray, spacing: float) -> np.ndarray:
    """One-sided differences along the two lattice diagonals.

    Component 0 differences along (1, 1), component 1 along (-1, 1), both
    normalized by the diagonal length; zero on the trailing row/column. For
    smooth fields this equals the gradient rotated by 45 degrees.
    """
    s = spacing * np.sqrt(2.0)
    d1 = np.zeros_like(w)
    d2 = np.zeros_like(w)
    d1[:-1, :-1] = (w[1:, 1:] - w[:-1, :-1]) / s
    d2[:-1, :-1] = (w[1:, :-1] - w[:-1, 1:]) / s
    return np.stack([d1, d2], axis=-1)


def diagonal_divergence(xi: np.ndarray, spacing: float) -> np.ndarray:
    """Negative adjoint of :func:`diagonal_gradient`."""
    s = spacing * np.sqrt(2.0)
    d1 = xi[..., 0]
    d2 = xi[..., 1]
    div = np.zeros(xi.shape[:2])
    div[:-1, :-1] += d1[:-1, :-1]
    div[1:, 1:] -= d1[:-1, :-1]
    div[:-1, 1:] += d2[:-1, :-1]
    div[1:, :-1] -= d2[:-1, :-1]
    return div / s


def bilinear_sample(grid: "Grid", values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Sample a cell-centered field at physical points (n, 2), clamped at edges."""
    from scipy.ndimage import map_coordinates

    pts = np.asarray(pts, dtype=float)
    ci = (pts[..., 0] - grid.origin[0]) / grid.spacing - 0.5
    cj = (pts[..., 1] - grid.origin[1]) / grid.spacing - 0.5
    return map_coordinates(values, [cj, ci], order=1, mode="nearest")


def central_gradient(u: np.ndarray, spacing: float) -> np.ndarray:
    """Central-difference gradient with one-sided edges, shape (ny, nx, 2)."""
    gy, gx = np.gradient(u, spacing)
    return np.stack([gx, gy], axis=-1)


def hessian(u: np.ndarray, spacing: float) -> np.ndarray:
    """Central-difference Hessian, shape (ny, nx, 2, 2)."""
    g = central_gradient(u, spacing)
    gxx = central_gradient(g[..., 0], spacing)
    gyy = central_gradient(g[..., 1], spacing)
    H = np.empty(u.shape + (2, 2))
    H[..., 0, 0] = gxx[..., 0]
    H[..., 0, 1] = 0.5 * (gxx[..., 1] + gyy[..., 0])
    H[..., 1, 0] = H[..., 0, 1]
    H[..., 1, 1] = gyy[..., 1]
    return H
