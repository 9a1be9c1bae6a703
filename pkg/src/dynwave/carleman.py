"""Term-by-term audit of the weighted energy inequality.

Both sides of the inequality are assembled as named integrals of a supplied
trajectory: the left side carries the weighted solution energies, the right
side the sources (recovered as discrete residuals of the trajectory), the
flux observation on the outer arc, and the eight time-boundary terms.  All
integrands share the factor exp(2 s phi), which overflows for modest (s,
lambda); the audit therefore factors out exp(2 s anchor) with anchor =
max(phi) and stores only the rescaled integrals plus the log of the common
factor.  Ratios are invariant under the choice of anchor.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import wave_solver
from .errors import ConfigurationError, WeightOverflowError
from .wave_solver import WaveOperator
from .weights import require_feasible, tangential_coefficient

_LHS_TERMS = ("bulk_y", "bulk_grad", "bulk_dt", "surf_y", "surf_dt", "surf_flux",
              "surf_tangential")
_RHS_TERMS = ("source_bulk", "source_surf", "obs_gamma",
              "bulk_energy_minus_T", "bulk_energy_plus_T",
              "bulk_y_minus_T", "bulk_y_plus_T",
              "surf_dt_minus_T", "surf_dt_plus_T",
              "surf_y_minus_T", "surf_y_plus_T")

DEFAULT_S_VALUES = (2.0, 4.0, 8.0, 16.0, 32.0)
DEFAULT_LAM_VALUES = (1.0, 2.0, 4.0)


@dataclasses.dataclass
class CarlemanLedger:
    """One (s, lambda) evaluation: named integrals, their common log factor, ratio."""

    s: float
    lam: float
    lhs: dict
    rhs: dict
    scale: float
    ratio: float
    tangential_coef: float

    @property
    def lhs_total(self):
        return sum(self.lhs.values())

    @property
    def rhs_total(self):
        return sum(self.rhs.values())


def _require_ring_matches_body(grid, body):
    if grid.dim == 1:
        bad = abs(float(body.boundary_radius(np.array([[1.0]]))) - grid.r1)
    else:
        dirs = np.stack([np.cos(grid.theta), np.sin(grid.theta)], axis=1)
        bad = np.abs(np.atleast_1d(body.boundary_radius(dirs)) - grid.r1).max()
    if bad > 1e-9:
        raise ConfigurationError(
            "the solver lattice requires the inner boundary to be the circle "
            f"r = r1; body deviates by {bad:.3e}"
        )


class _AuditFields:
    """Everything (s, lambda)-independent: squared fields, residuals, quadrature."""

    def __init__(self, traj, coeffs, body, cert):
        grid = traj.grid
        _require_ring_matches_body(grid, body)
        half = -traj.t0
        if abs(traj.times[-1] - half) > 1e-9 * max(1.0, half):
            raise ConfigurationError(
                f"audit expects a symmetric window (-T, T); got [{traj.t0:g}, {traj.times[-1]:g}]"
            )
        op = WaveOperator(grid, coeffs, variant="one_sided")
        f_res, g_res = op.residual_sources(traj)

        self.grid = grid
        self.half_window = half
        self.times = traj.times
        self.n_levels = traj.n_levels
        self.psi0_bulk = body.psi0(grid.nodes().reshape(-1, grid.dim)).reshape(grid.shape)
        self.w_bulk = grid.bulk_weights()
        self.w_surf = grid.surface_weights()
        self.gamma = grid.gamma_mask(body)
        self.w_gamma = grid.gamma_weights(self.gamma)
        self.w_time = grid.time_weights(self.n_levels)

        yt = wave_solver.time_derivative_levels(traj)
        self.y_sq = traj.data**2
        self.yt_sq = yt**2
        self.grad_sq = np.stack(
            [wave_solver._gradient_sq(grid, lev) for lev in traj.data]
        )
        ring = traj.surface
        ring_t = yt[:, 0] if grid.dim == 2 else yt[:, 0:1]
        self.ring_sq = np.atleast_2d(ring.reshape(self.n_levels, -1)) ** 2
        self.ring_t_sq = ring_t.reshape(self.n_levels, -1) ** 2
        self.ring_grad_sq = np.stack(
            [wave_solver.surface_gradient(grid, lev) for lev in np.atleast_2d(ring.reshape(self.n_levels, -1))]
        ) ** 2
        self.flux_inner_sq = grid.normal_derivative_inner(traj.data).reshape(self.n_levels, -1) ** 2
        self.flux_gamma_sq = wave_solver.flux_trace(traj, self.gamma) ** 2
        self.f_sq = f_res**2
        self.g_sq = g_res**2
        # ring value of psi0 for the surface weight (constant 1 up to sampling)
        self.psi0_ring = (self.psi0_bulk[0] if grid.dim == 2 else self.psi0_bulk[0:1])
        outer_psi = np.atleast_1d(self.psi0_bulk[-1])
        self.psi0_gamma = outer_psi[np.atleast_1d(self.gamma)]


def evaluate(traj, params, body, cert, coeffs, anchor=None, enforce_feasible=True,
             prepared=None):
    """Assemble the audit ledger for one (s, lambda) pair.

    anchor is the absolute phi value factored out of every integrand (default
    max(phi) over the lattice); shifting it rescales all integrals by the
    same factor and leaves the ratio untouched.  Pass enforce_feasible=False
    to audit parameter sets that violate a gate (e.g. delta < d to watch the
    tangential coefficient change sign).
    """
    if enforce_feasible:
        require_feasible(params, cert, tangential=(traj.grid.dim == 2))
    pf = prepared if prepared is not None else _AuditFields(traj, coeffs, body, cert)
    if abs(pf.half_window - params.T) > 1e-9 * max(1.0, params.T):
        raise ConfigurationError(
            f"trajectory window half-length {pf.half_window:g} != params.T {params.T:g}"
        )
    s, lam = params.s, params.lam

    # the discrete max of psi over the lattice: the time grid need not contain
    # t = 0, and anchoring above the attained max underflows every integrand
    t_sq_min = float(np.min(pf.times**2))
    psi_max = pf.psi0_bulk.max() + params.c1 - params.beta * t_sq_min
    if 3.0 * lam * psi_max > 690.0:
        raise WeightOverflowError(
            f"lam * max(psi) = {lam * psi_max:.1f} makes phi^3 overflow float64"
        )
    phi_max = np.exp(lam * psi_max)
    anchor_phi = phi_max if anchor is None else float(anchor)
    if 2.0 * s * (phi_max - anchor_phi) > 690.0:
        raise WeightOverflowError(
            f"anchor {anchor_phi:.3g} sits too far below max(phi) = {phi_max:.3g}"
        )
    scale = 2.0 * s * anchor_phi

    lhs = dict.fromkeys(_LHS_TERMS, 0.0)
    rhs = dict.fromkeys(_RHS_TERMS, 0.0)
    tang = tangential_coefficient(cert.c_prime, params.d, params.delta, params.beta)

    n = pf.n_levels
    for k in range(n):
        t = pf.times[k]
        shift = -params.beta * t**2 + params.c1
        phi_b = np.exp(lam * (pf.psi0_bulk + shift))
        w_exp_b = np.exp(2.0 * s * (phi_b - anchor_phi))
        phi_s = np.exp(lam * (pf.psi0_ring + shift))
        w_exp_s = np.exp(2.0 * s * (phi_s - anchor_phi))
        wt = pf.w_time[k]

        slp_b = s * lam * phi_b * w_exp_b
        cube_b = (s * lam * phi_b) ** 3 * w_exp_b
        slp_s = s * lam * phi_s * w_exp_s
        cube_s = (s * lam * phi_s) ** 3 * w_exp_s

        lhs["bulk_y"] += wt * np.sum(pf.w_bulk * cube_b * pf.y_sq[k])
        lhs["bulk_grad"] += wt * np.sum(pf.w_bulk * slp_b * pf.grad_sq[k])
        lhs["bulk_dt"] += wt * np.sum(pf.w_bulk * slp_b * pf.yt_sq[k])
        lhs["surf_y"] += wt * np.sum(pf.w_surf * cube_s * pf.ring_sq[k])
        lhs["surf_dt"] += wt * np.sum(pf.w_surf * slp_s * pf.ring_t_sq[k])
        lhs["surf_flux"] += wt * np.sum(pf.w_surf * slp_s * pf.flux_inner_sq[k])
        lhs["surf_tangential"] += tang * wt * np.sum(
            pf.w_surf * slp_s * pf.ring_grad_sq[k]
        )

        rhs["source_bulk"] += wt * np.sum(pf.w_bulk * w_exp_b * pf.f_sq[k])
        rhs["source_surf"] += wt * np.sum(pf.w_surf * w_exp_s * pf.g_sq[k])
        phi_g = np.exp(lam * (pf.psi0_gamma + shift))
        w_exp_g = np.exp(2.0 * s * (phi_g - anchor_phi))
        rhs["obs_gamma"] += wt * np.sum(pf.w_gamma * s * lam * phi_g * w_exp_g
                                        * pf.flux_gamma_sq[k])

        if k == 0 or k == n - 1:
            tag = "minus_T" if k == 0 else "plus_T"
            rhs[f"bulk_energy_{tag}"] = float(
                np.sum(pf.w_bulk * slp_b * (pf.yt_sq[k] + pf.grad_sq[k]))
            )
            rhs[f"bulk_y_{tag}"] = float(np.sum(pf.w_bulk * cube_b * pf.y_sq[k]))
            rhs[f"surf_dt_{tag}"] = float(np.sum(pf.w_surf * slp_s * pf.ring_t_sq[k]))
            rhs[f"surf_y_{tag}"] = float(np.sum(pf.w_surf * cube_s * pf.ring_sq[k]))

    lhs_total = sum(lhs.values())
    rhs_total = sum(rhs.values())
    ratio = lhs_total / rhs_total if rhs_total > 0 else 0.0
    return CarlemanLedger(s=s, lam=lam, lhs=lhs, rhs=rhs,
                          scale=float(scale), ratio=float(ratio),
                          tangential_coef=float(tang))


def scan(traj, params, body, cert, coeffs, s_values=DEFAULT_S_VALUES,
         lam_values=DEFAULT_LAM_VALUES, threads=1, enforce_feasible=True,
         stability_rtol=0.10):
    """Evaluate the ledger over an (s, lambda) lattice and find where it settles.

    Returns {"ledgers": [...], "stable_pair": (s1, lam1) or None}.  The stable
    pair is the smallest (lambda-major order) pair from which the ratio
    changes by less than stability_rtol under every further doubling of s.
    """
    s_values = sorted(float(v) for v in s_values)
    lam_values = sorted(float(v) for v in lam_values)
    prepared = _AuditFields(traj, coeffs, body, cert)
    pairs = [(s, lam) for lam in lam_values for s in s_values]

    def one(pair):
        s, lam = pair
        p = dataclasses.replace(params, s=s, lam=lam)
        return evaluate(traj, p, body, cert, coeffs, prepared=prepared,
                        enforce_feasible=enforce_feasible)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            ledgers = list(pool.map(one, pairs))
    else:
        ledgers = [one(p) for p in pairs]

    stable = None
    for lam in lam_values:
        ratios = [led.ratio for led in ledgers if led.lam == lam]
        for i, s in enumerate(s_values[:-1]):
            tail = ratios[i:]
            ok = all(
                abs(tail[j + 1] - tail[j]) <= stability_rtol * abs(tail[j])
                for j in range(len(tail) - 1)
                if tail[j] != 0.0
            ) and all(t != 0.0 for t in tail)
            if ok:
                stable = (s, lam)
                break
        if stable:
            break
    return {"ledgers": ledgers, "stable_pair": stable}


def ring_tangential_derivatives(grid, ring_values):
    """First and second arclength derivatives of a field on the inner circle."""
    vals = np.atleast_1d(np.asarray(ring_values, float))
    if grid.dim == 1:
        return np.zeros_like(vals), np.zeros_like(vals)
    ds = grid.r1 * grid.dtheta
    first = (np.roll(vals, -1) - np.roll(vals, 1)) / (2 * ds)
    second = (np.roll(vals, -1) - 2 * vals + np.roll(vals, 1)) / ds**2
    return first, second


def tangential_flatness(body, grid):
    """Max tangential first/second derivative of psi0 along the inner boundary.

    The gauge-squared weight is constant (= 1) on the body boundary, so both
    values vanish up to interpolation error; a translated classical weight
    like |x - x0|^2 does not share this property, which is the reason the
    gauge construction survives on the dynamic boundary.
    """
    nodes = np.atleast_2d(grid.inner_nodes().reshape(-1, grid.dim))
    vals = np.atleast_1d(body.psi0(nodes))
    first, second = ring_tangential_derivatives(grid, vals)
    return {"max_grad": float(np.abs(first).max()),
            "max_hess": float(np.abs(second).max())}
