"""Leapfrog solver for the bulk wave equation coupled to a dynamic boundary.

Bulk:    y_tt = d Lap y - q_bulk y + f          on the annulus / interval
Surface: y_tt = delta LB y - d dnu y - q_surf y + g   on the inner boundary
Outer:   y = v (Dirichlet data, zero unless controlled)

The inner-boundary row of the state array IS the surface unknown, advanced by
its own leapfrog driven by the one-sided normal-flux stencil into the bulk
(variant "ghost" instead eliminates a ghost ring by imposing the bulk
equation at the boundary node as well).  The spatial operator is assembled
once as a sparse matrix, which is what makes the hand-written transpose of
the full time loop exact to roundoff: every conjugate-gradient consumer
downstream (inverse source, HUM) relies on that exactness.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse as sp

from .errors import BlowUpError, ConfigurationError, ExtensionMismatchError

_BLOWUP = 1e12


@dataclasses.dataclass(frozen=True)
class Coefficients:
    """Wave speeds and static potentials; q fields may be scalars or node arrays."""

    d: float
    delta: float
    q_bulk: object = 0.0
    q_surf: object = 0.0

    def __post_init__(self):
        if self.d <= 0 or self.delta <= 0:
            raise ConfigurationError("speeds d and delta must be positive")


@dataclasses.dataclass
class Trajectory:
    """Time levels t0 + k dt stacked along axis 0; shape (nt+1, *grid.shape)."""

    grid: object
    t0: float
    data: np.ndarray

    @property
    def n_levels(self):
        return self.data.shape[0]

    @property
    def times(self):
        return self.t0 + self.grid.dt * np.arange(self.n_levels)

    @property
    def surface(self):
        return self.data[:, 0] if self.grid.dim == 1 else self.data[:, 0, :]


def _as_node_array(value, shape):
    arr = np.broadcast_to(np.asarray(value, float), shape)
    return np.array(arr)


class WaveOperator:
    """Spatial operator, source injections and boundary bookkeeping for one grid.

    Assembles L with the convention accel = L y + Sf f + Sg g, where the outer
    Dirichlet row of L is empty (those nodes are assigned, not advanced), the
    inner row carries the surface equation, and Sf / Sg route the bulk and
    surface sources to their rows.
    """

    def __init__(self, grid, coeffs, variant="one_sided"):
        if variant not in ("one_sided", "ghost"):
            raise ConfigurationError(f"unknown flux variant {variant!r}")
        grid.check_cfl(coeffs.d, coeffs.delta, cfl_safety=0.5)
        self.grid = grid
        self.coeffs = coeffs
        self.variant = variant
        self.n = int(np.prod(grid.shape))
        self.n_ring = grid.ntheta if grid.dim == 2 else 1
        self.ring_idx = np.arange(self.n_ring)
        self.outer_idx = np.arange(self.n - self.n_ring, self.n)
        self.free = np.ones(self.n, bool)
        self.free[self.outer_idx] = False
        self._assemble()
        self.LT = self.L.T.tocsr()
        self.SfT = self.Sf.T.tocsr()
        self.SgT = self.Sg.T.tocsr()

    # -- assembly ----------------------------------------------------------

    def _assemble(self):
        g, c = self.grid, self.coeffs
        dr = g.dr
        q_bulk = _as_node_array(c.q_bulk, g.shape).ravel()
        q_surf = _as_node_array(c.q_surf, (self.n_ring,))
        rows, cols, vals = [], [], []
        sf_rows, sf_vals = [], []
        sg_vals = np.ones(self.n_ring)

        def add(r, cidx, v):
            rows.append(r)
            cols.append(cidx)
            vals.append(v)

        if g.dim == 1:
            for i in range(1, g.nr - 1):
                add(i, i - 1, c.d / dr**2)
                add(i, i, -2 * c.d / dr**2 - q_bulk[i])
                add(i, i + 1, c.d / dr**2)
                sf_rows.append(i)
                sf_vals.append(1.0)
            if self.variant == "one_sided":
                add(0, 0, -3 * c.d / (2 * dr) - q_surf[0])
                add(0, 1, 4 * c.d / (2 * dr))
                add(0, 2, -c.d / (2 * dr))
            else:
                a_g = -c.d * (0.5 / dr + 1.0 / dr**2)
                cg = -(c.d / (2 * dr)) / a_g
                add(0, 0, cg * (-2 * c.d / dr**2 + q_surf[0] - q_bulk[0]) - q_surf[0])
                add(0, 1, c.d / (2 * dr) + cg * (c.d / dr**2 - c.d / (2 * dr)))
                sf_rows.append(0)
                sf_vals.append(cg)
                sg_vals[0] = 1.0 - cg
        else:
            nth = g.ntheta
            dth = g.dtheta
            r = g.r

            def fid(i, j):
                return i * nth + (j % nth)

            for i in range(1, g.nr - 1):
                crm = c.d * (1.0 / dr**2 - 1.0 / (2 * r[i] * dr))
                crp = c.d * (1.0 / dr**2 + 1.0 / (2 * r[i] * dr))
                cth = c.d / (r[i] ** 2 * dth**2)
                for j in range(nth):
                    here = fid(i, j)
                    add(here, fid(i - 1, j), crm)
                    add(here, fid(i + 1, j), crp)
                    add(here, fid(i, j - 1), cth)
                    add(here, fid(i, j + 1), cth)
                    add(here, here, -2 * c.d / dr**2 - 2 * cth - q_bulk[here])
                    sf_rows.append(here)
                    sf_vals.append(1.0)
            lb = c.delta / (g.r1**2 * dth**2)
            if self.variant == "one_sided":
                for j in range(nth):
                    add(j, fid(0, j - 1), lb)
                    add(j, fid(0, j + 1), lb)
                    add(j, j, -2 * lb - q_surf[j] - 3 * c.d / (2 * dr))
                    add(j, fid(1, j), 4 * c.d / (2 * dr))
                    add(j, fid(2, j), -c.d / (2 * dr))
            else:
                # eliminate the ghost ring by also imposing the bulk equation at r1
                a_g = -c.d * (0.5 / dr + 1.0 / dr**2 - 0.5 / (g.r1 * dr))
                cg = -(c.d / (2 * dr)) / a_g
                for j in range(nth):
                    t_n = lb + cg * ((c.d - c.delta) / (g.r1**2 * dth**2))
                    add(j, fid(0, j - 1), t_n)
                    add(j, fid(0, j + 1), t_n)
                    center = (-2 * lb - q_surf[j]
                              + cg * (-2 * c.d / dr**2
                                      - 2 * (c.d - c.delta) / (g.r1**2 * dth**2)
                                      + q_surf[j] - q_bulk[j]))
                    add(j, j, center)
                    add(j, fid(1, j), c.d / (2 * dr) + cg * (c.d / dr**2 + c.d / (2 * g.r1 * dr) - c.d / (2 * dr)))
                    sf_rows.append(j)
                    sf_vals.append(cg)
                    sg_vals[j] = 1.0 - cg
        self.L = sp.csr_matrix((vals, (rows, cols)), shape=(self.n, self.n))
        self.Sf = sp.csr_matrix((sf_vals, (sf_rows, sf_rows)), shape=(self.n, self.n))
        self.Sg = sp.csr_matrix(
            (sg_vals, (self.ring_idx, self.ring_idx)), shape=(self.n, self.n_ring)
        )

    # -- source plumbing ----------------------------------------------------

    def _source_at(self, f, g_src, level, t):
        acc = None
        if f is not None:
            fv = f(t) if callable(f) else f[level]
            acc = self.Sf @ np.asarray(fv, float).ravel()
        if g_src is not None:
            gv = g_src(t) if callable(g_src) else g_src[level]
            term = self.Sg @ np.atleast_1d(np.asarray(gv, float))
            acc = term if acc is None else acc + term
        return acc

    # -- forward / backward solves ------------------------------------------

    def solve(self, y0, v0, f=None, g=None, bc_mask=None, bc_values=None,
              t0=0.0, blowup=_BLOWUP):
        """March nt leapfrog steps from value y0 and velocity v0 at t0.

        f: bulk source, array (nt+1, *shape) or callable t -> array.
        g: surface source, array (nt+1, n_ring) or callable.
        bc_mask / bc_values: Dirichlet data on the selected outer nodes,
        values shaped (nt+1, mask.sum()); unselected outer nodes stay zero.
        """
        grid = self.grid
        nt, dt = grid.nt, grid.dt
        bc_cols = self._bc_columns(bc_mask)
        out = np.empty((nt + 1, self.n))
        y = np.asarray(y0, float).ravel().copy()
        y[~self.free] = 0.0
        if bc_values is not None:
            y[bc_cols] = bc_values[0]
        out[0] = y
        accel = self.L @ y
        src = self._source_at(f, g, 0, t0)
        if src is not None:
            accel = accel + src
        y1 = y + dt * np.asarray(v0, float).ravel() + 0.5 * dt**2 * accel
        y1[~self.free] = 0.0
        if bc_values is not None:
            y1[bc_cols] = bc_values[1]
        peak = np.abs(y1).max()
        if not np.isfinite(peak) or peak > blowup:
            raise BlowUpError(1, peak)
        out[1] = y1
        prev, cur = y, y1
        for nlev in range(1, nt):
            accel = self.L @ cur
            src = self._source_at(f, g, nlev, t0 + nlev * dt)
            if src is not None:
                accel = accel + src
            nxt = 2 * cur - prev + dt**2 * accel
            nxt[~self.free] = 0.0
            if bc_values is not None:
                nxt[bc_cols] = bc_values[nlev + 1]
            peak = np.abs(nxt).max()
            if not np.isfinite(peak) or peak > blowup:
                raise BlowUpError(nlev + 1, peak)
            out[nlev + 1] = nxt
            prev, cur = cur, nxt
        return Trajectory(grid=grid, t0=t0, data=out.reshape((nt + 1,) + grid.shape))

    def solve_backward(self, yT, vT, f=None, g=None, t0=0.0):
        """Solve backward from data (value yT, velocity vT) at t0 + nt*dt.

        Homogeneous Dirichlet outer boundary.  Implemented as the exact time
        mirror of the forward recursion, so a forward solve followed by a
        backward solve from its terminal read reproduces the trajectory to
        roundoff.
        """
        nt, dt = self.grid.nt, self.grid.dt
        t_end = t0 + nt * dt
        fm = self._mirror_source(f, nt, t_end)
        gm = self._mirror_source(g, nt, t_end)
        mirrored = self.solve(yT, -np.asarray(vT, float), f=fm, g=gm, t0=0.0)
        return Trajectory(grid=self.grid, t0=t0, data=mirrored.data[::-1].copy())

    @staticmethod
    def _mirror_source(src, nt, t_end):
        if src is None:
            return None
        if callable(src):
            return lambda tau: src(t_end - tau)
        return np.asarray(src)[::-1]

    def _bc_columns(self, bc_mask):
        if bc_mask is None:
            return self.outer_idx
        return self.outer_idx[np.atleast_1d(bc_mask)]

    # -- exact transpose of solve -------------------------------------------

    def solve_transpose(self, seeds, bc_mask=None, want_sources=False):
        """Transpose of the linear map (y0, v0, f, g, v) -> trajectory.

        seeds: cotangent array shaped like the trajectory data.  Returns a
        dict with 'y0', 'v0', 'bc' (levels x outer-mask) and, when requested,
        dense 'f' / 'g' cotangents.  Matches solve() to roundoff; the
        inner-product identity is the package-wide gate for every CG loop.
        """
        grid = self.grid
        nt, dt = grid.nt, grid.dt
        bc_cols = self._bc_columns(bc_mask)
        ybar = np.array(seeds, float).reshape(nt + 1, self.n).copy()
        vbar = np.empty((nt + 1, bc_cols.size))
        fbar = np.zeros((nt + 1, self.n)) if want_sources else None
        gbar = np.zeros((nt + 1, self.n_ring)) if want_sources else None
        for nlev in range(nt, 0, -1):
            vbar[nlev] = ybar[nlev][bc_cols]
            ubar = ybar[nlev].copy()
            ubar[~self.free] = 0.0
            if nlev >= 2:
                ybar[nlev - 1] += 2 * ubar + dt**2 * (self.LT @ ubar)
                ybar[nlev - 2] -= ubar
                if want_sources:
                    fbar[nlev - 1] = dt**2 * (self.SfT @ ubar)
                    gbar[nlev - 1] = dt**2 * (self.SgT @ ubar)
            else:
                ybar[0] += ubar + 0.5 * dt**2 * (self.LT @ ubar)
                v0bar = dt * ubar
                if want_sources:
                    fbar[0] = 0.5 * dt**2 * (self.SfT @ ubar)
                    gbar[0] = 0.5 * dt**2 * (self.SgT @ ubar)
        vbar[0] = ybar[0][bc_cols]
        y0bar = ybar[0].copy()
        y0bar[~self.free] = 0.0
        out = {"y0": y0bar.reshape(grid.shape),
               "v0": v0bar.reshape(grid.shape),
               "bc": vbar}
        if want_sources:
            out["f"] = fbar.reshape((nt + 1,) + grid.shape)
            out["g"] = gbar
        return out

    # -- state reads ----------------------------------------------------------

    def terminal_read(self, traj, f=None, g=None):
        """Value and discrete velocity at the last level.

        The velocity read is chosen so that solve_backward from this pair
        retraces the trajectory exactly (time reversibility at the discrete
        level, not just in the limit).
        """
        nt, dt = self.grid.nt, self.grid.dt
        yN = traj.data[nt].ravel()
        accel = self.L @ yN
        src = self._source_at(f, g, nt, traj.t0 + nt * dt)
        if src is not None:
            accel = accel + src
        vel = (yN - traj.data[nt - 1].ravel()) / dt + 0.5 * dt * accel
        vel[~self.free] = 0.0
        val = yN.copy()
        val[~self.free] = 0.0
        return val.reshape(self.grid.shape), vel.reshape(self.grid.shape)

    def terminal_read_seeds(self, val_bar, vel_bar):
        """Cotangent seeds (levels nt, nt-1) for the terminal_read map."""
        nt, dt = self.grid.nt, self.grid.dt
        seeds = np.zeros((nt + 1, self.n))
        vb = np.asarray(vel_bar, float).ravel().copy()
        vb[~self.free] = 0.0
        ub = np.asarray(val_bar, float).ravel().copy()
        ub[~self.free] = 0.0
        seeds[nt] = ub + vb / dt + 0.5 * dt * (self.LT @ vb)
        seeds[nt - 1] = -vb / dt
        return seeds.reshape((nt + 1,) + self.grid.shape)

    def initial_read(self, traj, f=None, g=None):
        """Value and discrete velocity at the first level (inverse of the Taylor start)."""
        dt = self.grid.dt
        y0 = traj.data[0].ravel()
        accel = self.L @ y0
        src = self._source_at(f, g, 0, traj.t0)
        if src is not None:
            accel = accel + src
        vel = (traj.data[1].ravel() - y0) / dt - 0.5 * dt * accel
        vel[~self.free] = 0.0
        val = y0.copy()
        val[~self.free] = 0.0
        return val.reshape(self.grid.shape), vel.reshape(self.grid.shape)

    # -- discrete PDE residual ------------------------------------------------

    def residual_sources(self, traj):
        """Recover (f, g) as the residual of the trajectory under the scheme.

        This is the definition of the audited sources, not a measurement: at
        interior time levels a trajectory produced by solve() returns its own
        input sources to roundoff.  Time ends use one-sided second
        differences; the Dirichlet rows carry no equation and report zero.
        Requires the one_sided variant, whose rows separate f from g.
        """
        if self.variant != "one_sided":
            raise ConfigurationError("residual splitting requires the one_sided variant")
        grid = self.grid
        nt = traj.n_levels - 1
        dt = grid.dt
        if nt < 3:
            raise ConfigurationError("residual recovery needs at least 4 time levels")
        y = traj.data.reshape(nt + 1, self.n)
        acc = np.empty_like(y)
        acc[1:nt] = (y[2:] - 2 * y[1:nt] + y[:nt - 1]) / dt**2
        acc[0] = (2 * y[0] - 5 * y[1] + 4 * y[2] - y[3]) / dt**2
        acc[nt] = (2 * y[nt] - 5 * y[nt - 1] + 4 * y[nt - 2] - y[nt - 3]) / dt**2
        resid = acc - y @ self.LT
        g_src = resid[:, self.ring_idx].copy()
        f_src = resid
        f_src[:, self.ring_idx] = 0.0
        f_src[:, self.outer_idx] = 0.0
        return f_src.reshape((nt + 1,) + grid.shape), g_src


# -- trajectory utilities ----------------------------------------------------


def flux_trace(traj, mask):
    """Outward normal derivative on the masked outer-boundary nodes, per level."""
    grid = traj.grid
    flux = grid.normal_derivative_outer(traj.data)
    if grid.dim == 1:
        flux = flux[:, None]
    return flux[:, np.atleast_1d(mask)]


def flux_trace_seeds(op, mask, w):
    """Transpose of flux_trace: scatter arc cotangents onto trajectory seeds."""
    w = np.asarray(w, float)
    n_lev = w.shape[0]
    seeds = np.zeros((n_lev, op.n))
    cols = op.outer_idx[np.atleast_1d(mask)]
    c = 1.0 / (2.0 * op.grid.dr)
    seeds[:, cols] += 3.0 * c * w
    seeds[:, cols - op.n_ring] += -4.0 * c * w
    seeds[:, cols - 2 * op.n_ring] += c * w
    return seeds.reshape((n_lev,) + op.grid.shape)


def d_dt(series, dt):
    """Time derivative along axis 0: centered inside, one-sided order 2 at the ends."""
    series = np.asarray(series, float)
    out = np.empty_like(series)
    out[1:-1] = (series[2:] - series[:-2]) / (2 * dt)
    out[0] = (-3 * series[0] + 4 * series[1] - series[2]) / (2 * dt)
    out[-1] = (3 * series[-1] - 4 * series[-2] + series[-3]) / (2 * dt)
    return out


def odd_extend(traj, tol=1e-9):
    """Reflect a trajectory starting at t = 0 to the symmetric window.

    value(-t) = -value(t); requires the t = 0 slice to vanish (relative to
    the trajectory scale), otherwise the extension would be discontinuous.
    """
    if abs(traj.t0) > 1e-12:
        raise ExtensionMismatchError(f"trajectory must start at t = 0, got t0 = {traj.t0}")
    scale = max(np.abs(traj.data).max(), 1e-300)
    worst = np.abs(traj.data[0]).max()
    if worst > tol * scale:
        raise ExtensionMismatchError(
            f"t = 0 slice is nonzero (max {worst:.3e} vs scale {scale:.3e}); "
            "odd extension needs zero initial values"
        )
    n = traj.n_levels - 1
    ext = np.concatenate([-traj.data[:0:-1], traj.data], axis=0)
    return Trajectory(grid=traj.grid, t0=-n * traj.grid.dt, data=ext)


def _gradient_sq(grid, level):
    """|grad y|^2 on bulk nodes: second-order radial, periodic angular in 2-D."""
    dr = grid.dr
    gr = np.empty_like(level)
    gr[1:-1] = (level[2:] - level[:-2]) / (2 * dr)
    gr[0] = (-3 * level[0] + 4 * level[1] - level[2]) / (2 * dr)
    gr[-1] = (3 * level[-1] - 4 * level[-2] + level[-3]) / (2 * dr)
    total = gr**2
    if grid.dim == 2:
        gth = (np.roll(level, -1, axis=1) - np.roll(level, 1, axis=1)) / (2 * grid.dtheta)
        total = total + (gth / grid.r[:, None]) ** 2
    return total


def surface_gradient(grid, ring):
    """Tangential derivative of a surface field; identically zero in 1-D."""
    if grid.dim == 1:
        return np.zeros_like(np.atleast_1d(ring))
    return (np.roll(ring, -1, axis=-1) - np.roll(ring, 1, axis=-1)) / (2 * grid.dtheta * grid.r1)


def time_derivative_levels(traj):
    return d_dt(traj.data, traj.grid.dt)


def energy_series(traj, coeffs):
    """Bulk + surface quadratic-form energy at each time level.

    E = 1/2 (|y_t|^2 + d |grad y|^2) over the bulk plus
        1/2 (|y_t|^2 + delta |tangential grad|^2) over the inner boundary.
    """
    grid = traj.grid
    wb = grid.bulk_weights()
    ws = grid.surface_weights()
    yt = time_derivative_levels(traj)
    out = np.empty(traj.n_levels)
    for k in range(traj.n_levels):
        lev = traj.data[k]
        bulk = 0.5 * np.sum(wb * (yt[k] ** 2 + coeffs.d * _gradient_sq(grid, lev)))
        ring = lev[0] if grid.dim == 2 else lev[0:1]
        ring_t = yt[k][0] if grid.dim == 2 else yt[k][0:1]
        surf = 0.5 * np.sum(ws * (ring_t**2 + coeffs.delta * surface_gradient(grid, ring) ** 2))
        out[k] = bulk + surf
    return out


def energy_i2_series(traj, coeffs):
    """Unhalved energy with the potential terms |q y|^2 included (I^2 form)."""
    grid = traj.grid
    wb = grid.bulk_weights()
    ws = grid.surface_weights()
    q_bulk = _as_node_array(coeffs.q_bulk, grid.shape)
    q_surf = _as_node_array(coeffs.q_surf, (grid.ntheta if grid.dim == 2 else 1,))
    yt = time_derivative_levels(traj)
    out = np.empty(traj.n_levels)
    for k in range(traj.n_levels):
        lev = traj.data[k]
        bulk = np.sum(wb * (yt[k] ** 2 + coeffs.d * _gradient_sq(grid, lev)
                            + (q_bulk * lev) ** 2))
        ring = lev[0] if grid.dim == 2 else lev[0:1]
        ring_t = yt[k][0] if grid.dim == 2 else yt[k][0:1]
        surf = np.sum(ws * (ring_t**2 + coeffs.delta * surface_gradient(grid, ring) ** 2
                            + (q_surf * ring) ** 2))
        out[k] = bulk + surf
    return out
