"""Separable-source recovery from time-differentiated boundary flux data.

The data map runs the coupled system from rest with sources a(x) r(t) in the
bulk and b(x) r(t) on the dynamic boundary, then reads d/dt of the outward
normal derivative on the observation arc.  Recovery solves the Tikhonov
normal equations for that linear map matrix-free; the adjoint is the exact
discrete transpose of the forward map, and an inner-product self test gates
every reconstruction.
"""

import dataclasses
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.sparse as sp

from . import wave_solver
from .errors import AdjointConsistencyError, ConfigurationError
from .wave_solver import WaveOperator, d_dt, flux_trace, flux_trace_seeds
from .weights import beta_window, minimal_time


@dataclasses.dataclass(frozen=True)
class SeparableSource:
    """Product source: bulk a(x) r(t), surface b(x) r(t), with r(0) = 1.

    r is sampled on the solver's time levels, so the source at level k is
    (r[k] a, r[k] b) and the t = 0 slice is exactly (a, b).  Admissibility is
    the profile bound max |r'| <= c0, which transfers the pointwise bound
    c0 |f(x, 0)| to the time derivative of the whole source.
    """

    a: np.ndarray
    b: np.ndarray
    r: np.ndarray
    c0: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, float))
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, float)))
        object.__setattr__(self, "r", np.asarray(self.r, float))
        if self.r.ndim != 1 or self.r.size < 2:
            raise ConfigurationError("temporal profile must be a 1-d sample array")
        if abs(self.r[0] - 1.0) > 1e-9:
            raise ConfigurationError(
                f"temporal profile must start at 1, got r[0] = {self.r[0]!r}"
            )
        if self.c0 <= 0:
            raise ConfigurationError(f"admissibility constant must be positive, got {self.c0}")

    @classmethod
    def from_profile(cls, grid, a, b, profile, c0=1.0):
        """Sample a callable profile on the grid's time levels."""
        return cls(a=a, b=b, r=profile(grid.times(0.0)), c0=c0)


def check_admissible(source, dt, c0=None):
    """max |r'| <= c0 with the same discrete derivative the data map uses."""
    bound = source.c0 if c0 is None else c0
    return float(np.abs(d_dt(source.r, dt)).max()) <= bound


def _time_derivative_matrix(n, dt):
    # sparse form of d_dt: centered rows inside, one-sided order-2 ends
    if n < 3:
        raise ConfigurationError("time derivative needs at least 3 levels")
    d = sp.lil_matrix((n, n))
    inv = 1.0 / (2.0 * dt)
    for k in range(1, n - 1):
        d[k, k - 1] = -inv
        d[k, k + 1] = inv
    d[0, 0], d[0, 1], d[0, 2] = -3 * inv, 4 * inv, -inv
    d[n - 1, n - 1], d[n - 1, n - 2], d[n - 1, n - 3] = 3 * inv, -4 * inv, inv
    return d.tocsr()


class MeasurementMap:
    """Linear map (a, b) -> d/dt of the outward flux on the arc, and its adjoint.

    The adjoint is assembled as the Euclidean transpose of every stage
    (profile injection, time march, flux stencil, time derivative) wrapped in
    the quadrature weights of the two inner-product spaces: spatial fields on
    the bulk-plus-surface side, arc-times-window on the data side.
    """

    def __init__(self, grid, coeffs, body, r, gamma=None, variant="one_sided", op=None):
        self.grid = grid
        self.op = op if op is not None else WaveOperator(grid, coeffs, variant=variant)
        if self.op.grid is not grid and self.op.grid != grid:
            raise ConfigurationError("operator was assembled for a different grid")
        self.r = np.asarray(r, float)
        if self.r.shape != (grid.nt + 1,):
            raise ConfigurationError(
                f"profile has {self.r.size} samples, grid has {grid.nt + 1} levels"
            )
        self.gamma = grid.gamma_mask(body) if gamma is None else np.asarray(gamma, bool)
        if not self.gamma.any():
            raise ConfigurationError("observation arc contains no outer nodes")
        self.w_bulk = grid.bulk_weights()
        self.w_surf = grid.surface_weights()
        self.w_gamma = grid.gamma_weights(self.gamma)
        self.w_time = grid.time_weights()
        self.deriv = _time_derivative_matrix(grid.nt + 1, grid.dt)
        self.deriv_t = self.deriv.T.tocsr()
        self.n_gamma = int(np.atleast_1d(self.gamma).sum())
        self._certified = None

    def forward(self, a, b):
        a = np.asarray(a, float).reshape(self.grid.shape)
        b = np.atleast_1d(np.asarray(b, float))
        n_lev = self.grid.nt + 1
        f = (self.r[:, None] * a.ravel()[None, :]).reshape((n_lev,) + self.grid.shape)
        g = self.r[:, None] * b[None, :]
        zero = np.zeros(self.grid.shape)
        traj = self.op.solve(zero, zero, f=f, g=g)
        return self.deriv @ flux_trace(traj, self.gamma)

    def adjoint(self, m):
        m = np.asarray(m, float).reshape(self.grid.nt + 1, self.n_gamma)
        w = self.deriv_t @ (self.w_time[:, None] * self.w_gamma[None, :] * m)
        seeds = flux_trace_seeds(self.op, self.gamma, w)
        bar = self.op.solve_transpose(seeds, want_sources=True)
        fbar = bar["f"].reshape(self.grid.nt + 1, -1)
        a_bar = (self.r[:, None] * fbar).sum(axis=0) / self.w_bulk.ravel()
        b_bar = (self.r[:, None] * bar["g"]).sum(axis=0) / self.w_surf
        return a_bar.reshape(self.grid.shape), b_bar

    # -- inner products ------------------------------------------------------

    def dot_fields(self, x, y):
        return float(np.sum(self.w_bulk * x[0] * y[0]) + np.sum(self.w_surf * x[1] * y[1]))

    def dot_data(self, m1, m2):
        return float(np.sum(self.w_time[:, None] * self.w_gamma[None, :] * m1 * m2))

    def norm_fields(self, x):
        return float(np.sqrt(max(self.dot_fields(x, x), 0.0)))

    def norm_data(self, m):
        return float(np.sqrt(max(self.dot_data(m, m), 0.0)))

    def source_norm(self, source):
        """Space-time norm of (a r, b r) under the grid quadrature."""
        r_sq = float(np.sum(self.w_time * source.r**2))
        return float(np.sqrt(r_sq * self.dot_fields((source.a, source.b),
                                                    (source.a, source.b))))

    # -- adjoint gate ----------------------------------------------------------

    def self_test(self, n_pairs=10, tol=1e-8, seed=20260815):
        """<F x, m> vs <x, F* m> on random pairs; raises when the gate fails."""
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(n_pairs):
            a = rng.standard_normal(self.grid.shape)
            b = rng.standard_normal(self.w_surf.shape)
            m = rng.standard_normal((self.grid.nt + 1, self.n_gamma))
            lhs = self.dot_data(self.forward(a, b), m)
            rhs = self.dot_fields((a, b), self.adjoint(m))
            rel = abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300)
            worst = max(worst, rel)
        if worst > tol:
            raise AdjointConsistencyError(
                f"inner-product identity off by {worst:.3e} (gate {tol:.1e})"
            )
        self._certified = worst
        return worst


def forward_measure(source, grid, coeffs, body, gamma=None, variant="one_sided"):
    """Data of a separable source: one solve from rest, flux on the arc, d/dt."""
    mm = MeasurementMap(grid, coeffs, body, source.r, gamma=gamma, variant=variant)
    return mm.forward(source.a, source.b)


def adjoint_measure(m, grid, coeffs, body, r, gamma=None, variant="one_sided"):
    mm = MeasurementMap(grid, coeffs, body, r, gamma=gamma, variant=variant)
    return mm.adjoint(m)


# -- Tikhonov reconstruction ---------------------------------------------------


@dataclasses.dataclass(frozen=True)
class ReconstructionConfig:
    alpha: float = 1e-8
    cg_tol: float = 1e-10
    cg_max_iters: int = 400

    def __post_init__(self):
        if self.alpha < 0:
            raise ConfigurationError(f"regularization weight must be >= 0, got {self.alpha}")
        if not (0 < self.cg_tol < 1):
            raise ConfigurationError(f"cg_tol must lie in (0, 1), got {self.cg_tol}")
        if self.cg_max_iters < 1:
            raise ConfigurationError("cg_max_iters must be at least 1")


@dataclasses.dataclass
class ReconstructionResult:
    a: np.ndarray
    b: np.ndarray
    residuals: np.ndarray
    converged: bool
    iterations: int
    alpha: float


def reconstruct(m_obs, mmap, config=ReconstructionConfig()):
    """Minimize |F(a,b) - m|^2 + alpha |(a,b)|^2 by CG on the normal equations.

    Matrix-free: each iteration is one forward and one adjoint solve.  The
    adjoint gate runs once per map before the first solve.  Stagnation is not
    an exception; the result carries the residual history and converged flag.
    """
    if mmap._certified is None:
        mmap.self_test()
    rhs = mmap.adjoint(m_obs)
    rhs_norm = mmap.norm_fields(rhs)
    a = np.zeros(mmap.grid.shape)
    b = np.zeros(mmap.w_surf.shape)
    if rhs_norm == 0.0:
        return ReconstructionResult(a=a, b=b, residuals=np.array([0.0]),
                                    converged=True, iterations=0, alpha=config.alpha)

    def apply(x):
        na, nb = mmap.adjoint(mmap.forward(x[0], x[1]))
        return na + config.alpha * x[0], nb + config.alpha * x[1]

    res = (rhs[0].copy(), rhs[1].copy())
    p = (res[0].copy(), res[1].copy())
    rr = mmap.dot_fields(res, res)
    history = [np.sqrt(rr) / rhs_norm]
    x = (a, b)
    converged = False
    iters = 0
    for iters in range(1, config.cg_max_iters + 1):
        ap = apply(p)
        denom = mmap.dot_fields(p, ap)
        if denom <= 0:
            break
        step = rr / denom
        x = (x[0] + step * p[0], x[1] + step * p[1])
        res = (res[0] - step * ap[0], res[1] - step * ap[1])
        rr_new = mmap.dot_fields(res, res)
        history.append(np.sqrt(rr_new) / rhs_norm)
        if history[-1] <= config.cg_tol:
            converged = True
            break
        p = (res[0] + (rr_new / rr) * p[0], res[1] + (rr_new / rr) * p[1])
        rr = rr_new
    return ReconstructionResult(a=x[0], b=x[1], residuals=np.array(history),
                                converged=converged, iterations=iters,
                                alpha=config.alpha)


def reconstruct_discrepancy(m_obs, mmap, noise_norm, config=ReconstructionConfig(),
                            alphas=None, tau=1.1):
    """Morozov choice: largest alpha whose data residual drops to tau * noise.

    Walks a descending alpha grid and stops at the first fit within the noise
    level; if none reaches it the smallest alpha wins.  Returns (result,
    per-alpha table of (alpha, data_residual)).
    """
    if alphas is None:
        alphas = np.geomspace(1e-1, 1e-9, 9)
    alphas = np.sort(np.asarray(alphas, float))[::-1]
    target = tau * noise_norm
    table = []
    best = None
    for alpha in alphas:
        cfg = dataclasses.replace(config, alpha=float(alpha))
        result = reconstruct(m_obs, mmap, cfg)
        misfit = mmap.norm_data(mmap.forward(result.a, result.b) - m_obs)
        table.append((float(alpha), misfit))
        best = result
        if misfit <= target:
            break
    return best, np.array(table)


# -- empirical stability study ---------------------------------------------------


@dataclasses.dataclass
class LipschitzReport:
    ratios: np.ndarray
    source_norms: np.ndarray
    data_norms: np.ndarray
    T: float
    t_min: float
    t_exceeds_min: bool
    beta_window_nonempty: bool
    n_samples: int
    seed: int
    c0: float

    def summary(self):
        r = self.ratios
        return {"min": float(r.min()), "max": float(r.max()),
                "median": float(np.median(r)),
                "spread": float(r.max() / r.min()) if r.min() > 0 else float("inf")}

    def to_dict(self):
        out = {"T": self.T, "t_min": self.t_min,
               "t_exceeds_min": self.t_exceeds_min,
               "beta_window_nonempty": self.beta_window_nonempty,
               "n_samples": self.n_samples, "seed": self.seed, "c0": self.c0,
               "ratios": [float(v) for v in self.ratios]}
        out.update(self.summary())
        return out


def _sample_source(grid, rng, c0):
    # bulk amplitude: a few Gaussian bumps kept away from both radii so the
    # boundary rows (invisible to the data map) carry nothing
    span = grid.r2 - grid.r1
    n_bump = int(rng.integers(1, 4))
    if grid.dim == 1:
        a = np.zeros(grid.nr)
        for _ in range(n_bump):
            center = grid.r1 + span * rng.uniform(0.25, 0.75)
            width = span * rng.uniform(0.06, 0.15)
            a += rng.uniform(-1, 1) * np.exp(-0.5 * ((grid.r - center) / width) ** 2)
        b = rng.uniform(-1.0, 1.0, size=1)
    else:
        nodes = grid.nodes()
        a = np.zeros(grid.shape)
        for _ in range(n_bump):
            rad = grid.r1 + span * rng.uniform(0.25, 0.75)
            ang = rng.uniform(0, 2 * np.pi)
            center = np.array([rad * np.cos(ang), rad * np.sin(ang)])
            width = span * rng.uniform(0.06, 0.15)
            dist_sq = np.sum((nodes - center) ** 2, axis=-1)
            a += rng.uniform(-1, 1) * np.exp(-0.5 * dist_sq / width**2)
        modes = np.arange(4)
        coef_c = rng.uniform(-1, 1, size=4)
        coef_s = rng.uniform(-1, 1, size=4)
        b = coef_c @ np.cos(np.outer(modes, grid.theta)) \
            + coef_s @ np.sin(np.outer(modes, grid.theta))
    # profile 1 + sum c_k (cos(w_k t) - 1): equals 1 at t = 0 by construction,
    # then rescaled into the admissible slope budget
    T = grid.T
    omegas = np.pi * np.arange(1, 4) / T
    coefs = rng.uniform(-1, 1, size=3)
    slope_cap = float(np.sum(np.abs(coefs) * omegas))
    if slope_cap > 0:
        coefs *= 0.95 * c0 / max(slope_cap, 0.95 * c0)
    times = grid.times(0.0)
    r = 1.0 + np.sum(coefs[:, None] * (np.cos(np.outer(omegas, times)) - 1.0), axis=0)
    return SeparableSource(a=a, b=b, r=r, c0=c0)


def lipschitz_experiment(grid, coeffs, body, cert, n_samples, seed,
                         c0=1.0, gamma=None, threads=1, require_feasible=False):
    """Ratio |(f, g)| / |data| over seeded random admissible sources.

    The window enters through the grid; the report carries the minimal
    certified window and the feasibility flags rather than enforcing them, so
    contrast runs below the threshold stay possible.  Deterministic for fixed
    (seed, grid, coefficients).
    """
    tangential = grid.dim == 2
    t_min = minimal_time(cert, coeffs.d, coeffs.delta, tangential=tangential)
    T = grid.T
    try:
        beta_window(cert, coeffs.d, coeffs.delta, T, tangential=tangential)
        window_ok = True
    except Exception:
        window_ok = False
    if require_feasible and T <= t_min:
        raise ConfigurationError(
            f"window T = {T:g} does not exceed the minimal certified time {t_min:g}"
        )
    op = WaveOperator(grid, coeffs, variant="one_sided")
    streams = np.random.SeedSequence(seed).spawn(n_samples)

    def one(stream):
        rng = np.random.default_rng(stream)
        src = _sample_source(grid, rng, c0)
        mm = MeasurementMap(grid, coeffs, body, src.r, gamma=gamma, op=op)
        data = mm.forward(src.a, src.b)
        s_norm = mm.source_norm(src)
        d_norm = mm.norm_data(data)
        ratio = s_norm / d_norm if d_norm > 0 else float("inf")
        return ratio, s_norm, d_norm

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one, streams))
    else:
        rows = [one(s) for s in streams]
    ratios = np.array([r[0] for r in rows])
    return LipschitzReport(ratios=ratios,
                           source_norms=np.array([r[1] for r in rows]),
                           data_norms=np.array([r[2] for r in rows]),
                           T=float(T), t_min=float(t_min),
                           t_exceeds_min=bool(T > t_min),
                           beta_window_nonempty=window_ok,
                           n_samples=n_samples, seed=seed, c0=c0)
