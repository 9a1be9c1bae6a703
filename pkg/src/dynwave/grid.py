"""Tensor-product lattices on the annulus (2-D) and the radial interval (1-D).

Conventions used by every consumer:

- bulk fields are arrays of shape (nr, ntheta) in 2-D and (nr,) in 1-D, with
  radial index 0 on the dynamic inner boundary and index nr-1 on the outer
  Dirichlet boundary;
- the surface field IS the inner row of the bulk array (shared storage), so
  the trace identity costs nothing and cannot drift;
- time levels t_k = t0 + k dt, k = 0..nt.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import ConfigurationError

_TWO_PI = 2.0 * math.pi


@dataclasses.dataclass(frozen=True)
class Grid:
    dim: int
    r1: float
    r2: float
    nr: int
    ntheta: int
    dt: float
    nt: int
    gamma_arc: tuple = (0.0, _TWO_PI)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigurationError(f"grid dimension must be 1 or 2, got {self.dim}")
        if not (0 < self.r1 < self.r2):
            raise ConfigurationError(f"need 0 < r1 < r2, got r1={self.r1}, r2={self.r2}")
        if self.nr < 5:
            raise ConfigurationError("need at least 5 radial nodes for the stencils")
        if self.dim == 2 and self.ntheta < 8:
            raise ConfigurationError("need at least 8 angular nodes")
        if self.dim == 1 and self.ntheta != 1:
            raise ConfigurationError("1-D grids must have ntheta = 1")
        if self.dt <= 0 or self.nt < 2:
            raise ConfigurationError("need dt > 0 and nt >= 2")
        lo, hi = self.gamma_arc
        if not (0.0 <= lo < hi <= _TWO_PI + 1e-12):
            raise ConfigurationError(f"gamma_arc must satisfy 0 <= lo < hi <= 2*pi, got {self.gamma_arc}")

    # -- construction ------------------------------------------------------

    @classmethod
    def make(cls, dim, r1, r2, nr, T, ntheta=1, d=1.0, delta=1.0, cfl_safety=0.5,
             gamma_arc=(0.0, _TWO_PI), dt=None):
        """Build a grid for horizon T, choosing dt from the CFL bound.

        dt is the largest value of the form T/nt not exceeding
        cfl_safety * min(dr, r1*dtheta) / sqrt(max(d, delta)).  Passing dt
        explicitly bypasses the rounding but still enforces the bound.
        """
        if T <= 0:
            raise ConfigurationError(f"horizon T must be positive, got {T}")
        dr = (r2 - r1) / (nr - 1)
        h_min = dr if dim == 1 else min(dr, r1 * _TWO_PI / ntheta)
        dt_max = cfl_safety * h_min / math.sqrt(max(d, delta))
        if dt is None:
            nt = max(2, int(math.ceil(T / dt_max)))
            dt = T / nt
        else:
            if dt > dt_max:
                raise ConfigurationError(
                    f"dt = {dt:g} violates the CFL bound; admissible dt <= {dt_max:g}"
                )
            nt = max(2, int(round(T / dt)))
            if abs(nt * dt - T) > 1e-9 * T:
                raise ConfigurationError(f"dt = {dt:g} does not divide T = {T:g}")
        return cls(dim=dim, r1=r1, r2=r2, nr=nr, ntheta=(1 if dim == 1 else ntheta),
                   dt=dt, nt=nt, gamma_arc=tuple(gamma_arc))

    def check_cfl(self, d, delta, cfl_safety=0.5):
        h_min = self.dr if self.dim == 1 else min(self.dr, self.r1 * self.dtheta)
        dt_max = cfl_safety * h_min / math.sqrt(max(d, delta))
        if self.dt > dt_max * (1 + 1e-12):
            raise ConfigurationError(
                f"dt = {self.dt:g} violates the CFL bound for speeds "
                f"(d={d:g}, delta={delta:g}); admissible dt <= {dt_max:g}"
            )

    def with_horizon(self, T, d=1.0, delta=1.0, cfl_safety=0.5):
        """Same spatial lattice, fresh time axis for a new horizon."""
        return Grid.make(self.dim, self.r1, self.r2, self.nr, T, ntheta=self.ntheta,
                         d=d, delta=delta, cfl_safety=cfl_safety, gamma_arc=self.gamma_arc)

    # -- coordinates -------------------------------------------------------

    @property
    def dr(self):
        return (self.r2 - self.r1) / (self.nr - 1)

    @property
    def dtheta(self):
        return _TWO_PI / self.ntheta if self.dim == 2 else 0.0

    @property
    def T(self):
        return self.nt * self.dt

    @property
    def r(self):
        return self.r1 + self.dr * np.arange(self.nr)

    @property
    def theta(self):
        return self.dtheta * np.arange(self.ntheta)

    @property
    def shape(self):
        return (self.nr,) if self.dim == 1 else (self.nr, self.ntheta)

    def times(self, t0=0.0):
        return t0 + self.dt * np.arange(self.nt + 1)

    def nodes(self):
        """Cartesian coordinates of every bulk node, shape (*shape, dim)."""
        if self.dim == 1:
            return self.r[:, None]
        rr = self.r[:, None]
        th = self.theta[None, :]
        return np.stack([rr * np.cos(th), rr * np.sin(th)], axis=-1)

    def inner_nodes(self):
        return self.nodes()[0]

    def outer_nodes(self):
        return self.nodes()[-1]

    # -- quadrature --------------------------------------------------------

    def bulk_weights(self):
        """Trapezoid-in-r quadrature weights, including the polar Jacobian in 2-D."""
        wr = np.full(self.nr, self.dr)
        wr[0] = wr[-1] = 0.5 * self.dr
        if self.dim == 1:
            return wr
        return (wr * self.r)[:, None] * np.full((1, self.ntheta), self.dtheta)

    def surface_weights(self):
        """Measure on the inner boundary: arclength in 2-D, counting in 1-D."""
        if self.dim == 1:
            return np.array([1.0])
        return np.full(self.ntheta, self.r1 * self.dtheta)

    def outer_weights(self):
        if self.dim == 1:
            return np.array([1.0])
        return np.full(self.ntheta, self.r2 * self.dtheta)

    def time_weights(self, n_levels=None):
        n = self.nt + 1 if n_levels is None else n_levels
        w = np.full(n, self.dt)
        w[0] = w[-1] = 0.5 * self.dt
        return w

    def integrate_bulk(self, field):
        return float(np.sum(self.bulk_weights() * field))

    def integrate_surface(self, ring):
        return float(np.sum(self.surface_weights() * ring))

    # -- boundary stencils -------------------------------------------------

    def normal_derivative_outer(self, field):
        """Outward normal derivative on the outer boundary (one-sided, order 2)."""
        f = np.asarray(field)
        if self.dim == 1:
            return (3 * f[..., -1] - 4 * f[..., -2] + f[..., -3]) / (2 * self.dr)
        return (3 * f[..., -1, :] - 4 * f[..., -2, :] + f[..., -3, :]) / (2 * self.dr)

    def normal_derivative_inner(self, field):
        """Outward normal derivative on the inner boundary (points toward the origin)."""
        f = np.asarray(field)
        if self.dim == 1:
            return (3 * f[..., 0] - 4 * f[..., 1] + f[..., 2]) / (2 * self.dr)
        return (3 * f[..., 0, :] - 4 * f[..., 1, :] + f[..., 2, :]) / (2 * self.dr)

    # -- observation arc ---------------------------------------------------

    def gamma_mask(self, body):
        """Outer-boundary nodes where the weight base flows outward, cut to gamma_arc.

        A node qualifies when grad psi0 . (x/|x|) >= 0 there; for centered
        convex bodies that is the whole outer circle.
        """
        pts = np.atleast_2d(self.outer_nodes().reshape(-1, self.dim))
        grad = np.atleast_2d(body.psi0_gradient(pts))
        radial = np.sum(grad * pts, axis=1) / self.r2
        mask = radial >= 0.0
        if self.dim == 2:
            lo, hi = self.gamma_arc
            th = self.theta
            mask &= (th >= lo - 1e-12) & (th <= hi + 1e-12)
        return mask

    def gamma_weights(self, mask):
        return self.outer_weights()[: mask.size][mask]

    # -- output ------------------------------------------------------------

    def dump_bulk_csv(self, field, path, header="value"):
        nodes = self.nodes().reshape(-1, self.dim)
        cols = [nodes[:, i] for i in range(self.dim)] + [np.asarray(field).ravel()]
        names = ["x", "y"][: self.dim] + [header]
        _write_csv(path, names, np.column_stack(cols))

    def dump_surface_csv(self, ring, path, header="value"):
        nodes = np.atleast_2d(self.inner_nodes().reshape(-1, self.dim))
        cols = [nodes[:, i] for i in range(self.dim)] + [np.atleast_1d(ring)]
        names = ["x", "y"][: self.dim] + [header]
        _write_csv(path, names, np.column_stack(cols))


def _write_csv(path, names, table):
    np.savetxt(path, table, fmt="%.17g", delimiter=",",
               header=",".join(names), comments="")
