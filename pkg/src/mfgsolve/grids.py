"""Uniform state and time grids.

The state space is the truncated box [-L, L]^d, d in {1, 2}, with npts
nodes per axis and spacing dx = 2L/(npts-1).  Measures are stored as cell
masses attached to nodes (time-slice weights sum to one); densities are
mass / dx^d when needed.  Time is the uniform grid t_k = k*dt on [0, T]
with dt = T/K.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, ValidationError


@dataclass(frozen=True)
class StateGrid:
    dim: int
    half_width: float
    npts: int

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValidationError("state dimension must be 1 or 2, got %r" % (self.dim,))
        if not (self.half_width > 0):
            raise ValidationError("half_width must be positive, got %r" % (self.half_width,))
        if self.npts < 3:
            raise ValidationError("need at least 3 nodes per axis, got %r" % (self.npts,))

    @property
    def dx(self):
        return 2.0 * self.half_width / (self.npts - 1)

    @property
    def n_nodes(self):
        return self.npts ** self.dim

    @property
    def axis(self):
        """Node coordinates along one axis, shape (npts,)."""
        return -self.half_width + self.dx * np.arange(self.npts)

    @property
    def nodes(self):
        """All node coordinates, shape (n_nodes, dim), row-major in axis order."""
        ax = self.axis
        if self.dim == 1:
            return ax[:, None]
        x1, x2 = np.meshgrid(ax, ax, indexing="ij")
        return np.column_stack([x1.ravel(), x2.ravel()])

    @property
    def cell_volume(self):
        return self.dx ** self.dim

    @property
    def diameter(self):
        return 2.0 * self.half_width * np.sqrt(self.dim)

    def flat_index(self, i1, i2=None):
        if self.dim == 1:
            return np.asarray(i1)
        return np.asarray(i1) * self.npts + np.asarray(i2)

    def nearest_index(self, points):
        """Flat index of the node nearest each point; points shape (N, dim) or (N,)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] == self.dim and pts.shape[1] != self.dim:
            pts = pts.T
        if pts.shape[1] != self.dim:
            raise GridMismatchError(
                "points have dimension %d, grid has dimension %d" % (pts.shape[1], self.dim)
            )
        idx_axis = np.clip(
            np.rint((pts + self.half_width) / self.dx).astype(np.int64), 0, self.npts - 1
        )
        if self.dim == 1:
            return idx_axis[:, 0]
        return idx_axis[:, 0] * self.npts + idx_axis[:, 1]

    def same_as(self, other):
        return (
            self.dim == other.dim
            and self.npts == other.npts
            and np.isclose(self.half_width, other.half_width, rtol=0, atol=0)
        )

    def require_same(self, other, what="object"):
        if not self.same_as(other):
            raise GridMismatchError("%s lives on a different state grid" % (what,))


@dataclass(frozen=True)
class TimeGrid:
    horizon: float
    steps: int

    def __post_init__(self):
        if not (self.horizon > 0):
            raise ValidationError("horizon must be positive, got %r" % (self.horizon,))
        if self.steps < 1:
            raise ValidationError("need at least one time step, got %r" % (self.steps,))

    @property
    def dt(self):
        return self.horizon / self.steps

    @property
    def times(self):
        return self.dt * np.arange(self.steps + 1)

    def same_as(self, other):
        return self.steps == other.steps and np.isclose(
            self.horizon, other.horizon, rtol=0, atol=0
        )

    def require_same(self, other, what="object"):
        if not self.same_as(other):
            raise GridMismatchError("%s lives on a different time grid" % (what,))
