"""Structured 2D quadrilateral grids for unit-cell and panel analyses.

Nodes are numbered row-major (x index fastest), each node carries two
degrees of freedom (2*node for x, 2*node + 1 for y). Elements are bilinear
quadrilaterals with counterclockwise connectivity.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class StructuredGrid:
    """Uniform rectangular mesh of nx-by-ny quadrilateral elements.

    Boundary index arrays list node ids including corners; ``corners`` holds
    the four corner ids ordered (0,0), (nx,0), (nx,ny), (0,ny).
    """

    nx: int
    ny: int
    width: float
    height: float
    coords: np.ndarray = field(repr=False)       # (nnode, 2)
    elements: np.ndarray = field(repr=False)     # (ne, 4) ccw node ids
    left: np.ndarray = field(repr=False)
    right: np.ndarray = field(repr=False)
    bottom: np.ndarray = field(repr=False)
    top: np.ndarray = field(repr=False)
    corners: np.ndarray = field(repr=False)

    @property
    def cell_size(self) -> float:
        """Edge length for square cells (width == height)."""
        return self.width

    @property
    def nnode(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def ndof(self) -> int:
        return 2 * self.nnode

    @property
    def nelem(self) -> int:
        return self.nx * self.ny

    @property
    def hx(self) -> float:
        return self.width / self.nx

    @property
    def hy(self) -> float:
        return self.height / self.ny

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def centroid(self) -> np.ndarray:
        return self.coords.mean(axis=0)

    def node_id(self, i: int, j: int) -> int:
        return j * (self.nx + 1) + i

    def element_dofs(self) -> np.ndarray:
        """(ne, 8) global dof indices per element, ordered (n1x,n1y,...,n4y)."""
        n = self.elements
        dofs = np.empty((n.shape[0], 8), dtype=np.int64)
        dofs[:, 0::2] = 2 * n
        dofs[:, 1::2] = 2 * n + 1
        return dofs


def build_rect_grid(nx: int, ny: int, width: float, height: float) -> StructuredGrid:
    """Mesh the rectangle [0, width] x [0, height] with nx-by-ny elements."""
    if nx < 2 or ny < 2:
        raise ValueError(f"need at least 2 elements per direction, got {nx}x{ny}")
    if width <= 0.0 or height <= 0.0:
        raise ValueError(f"domain size must be positive, got {width} x {height}")

    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    xg, yg = np.meshgrid(xs, ys)               # shape (ny+1, nx+1)
    coords = np.column_stack([xg.ravel(), yg.ravel()])

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    n00 = jj * (nx + 1) + ii
    elements = np.column_stack([
        n00.ravel(),
        n00.ravel() + 1,
        n00.ravel() + nx + 2,
        n00.ravel() + nx + 1,
    ]).astype(np.int64)

    j_all = np.arange(ny + 1)
    i_all = np.arange(nx + 1)
    left = j_all * (nx + 1)
    right = j_all * (nx + 1) + nx
    bottom = i_all.copy()
    top = ny * (nx + 1) + i_all
    corners = np.array([0, nx, ny * (nx + 1) + nx, ny * (nx + 1)], dtype=np.int64)

    return StructuredGrid(nx=nx, ny=ny, width=width, height=height,
                          coords=coords, elements=elements,
                          left=left, right=right, bottom=bottom, top=top,
                          corners=corners)


def build_grid(nx: int, ny: int, cell_size: float) -> StructuredGrid:
    """Square unit cell [0, cell_size]^2 with nx-by-ny elements."""
    return build_rect_grid(nx, ny, cell_size, cell_size)
