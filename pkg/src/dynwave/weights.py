"""Carleman weight construction and feasibility arithmetic.

The weight is phi = exp(lam * psi) with psi(x, t) = psi0(x) - beta t^2 + c1.
All feasibility gates reduce to arithmetic on the four certified geometry
constants (rho, c_prime, d0, d1).  The tangential gate (the bracket
c_prime*d*(delta-d) - 8*beta*delta staying positive) only binds when the
dynamic boundary has tangential directions, i.e. in dimension >= 2.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import ConfigurationError, EmptyBetaWindowError, InfeasibleConfigError, WeightOverflowError

_LOG_MAX = 700.0  # exp argument ceiling for float64


@dataclasses.dataclass(frozen=True)
class WeightParams:
    """Bulk speed d, surface speed delta, and the weight knobs (beta, c1, lam, s, T)."""

    d: float
    delta: float
    beta: float
    c1: float
    lam: float
    s: float
    T: float

    def __post_init__(self):
        for name in ("d", "delta", "beta", "lam", "s", "T"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")


def tangential_coefficient(c_prime, d, delta, beta):
    """Coefficient multiplying the tangential-gradient term on the inequality LHS.

    Positive exactly when beta < c_prime*d*(delta-d)/(8*delta); a negative
    value means the tangential term changes sides and the estimate degrades.
    """
    return c_prime * d * (delta - d) - 8.0 * beta * delta


def minimal_time(cert, d, delta, tangential=True):
    """Smallest horizon T* above which a nonempty beta window exists.

    T* = sqrt(d1^2 - d0^2) / min(sqrt(rho d), sqrt(c_prime d (delta-d)/(8 delta))).
    With tangential=False (1-D dynamic boundary: no tangential directions)
    the second branch is vacuous and only sqrt(rho d) enters.
    """
    if d <= 0 or delta <= 0:
        raise ConfigurationError("speeds d and delta must be positive")
    speed = math.sqrt(cert.rho * d)
    if tangential:
        if delta <= d:
            raise InfeasibleConfigError(
                f"surface speed delta = {delta:g} must exceed bulk speed d = {d:g}"
            )
        speed = min(speed, math.sqrt(cert.c_prime * d * (delta - d) / (8.0 * delta)))
    return math.sqrt(cert.d1**2 - cert.d0**2) / speed


def beta_window(cert, d, delta, T, tangential=True):
    """Open interval of admissible beta values for horizon T.

    Returns (lo, hi) with lo = (d1^2 - d0^2)/T^2 and hi the convexity /
    tangential cap.  Raises EmptyBetaWindowError when T <= T*.
    """
    if T <= 0:
        raise ConfigurationError(f"horizon T must be positive, got {T}")
    lo = (cert.d1**2 - cert.d0**2) / T**2
    hi = cert.rho * d
    if tangential:
        if delta <= d:
            raise InfeasibleConfigError(
                f"surface speed delta = {delta:g} must exceed bulk speed d = {d:g}"
            )
        hi = min(hi, cert.c_prime * d * (delta - d) / (8.0 * delta))
    # gate on the same arithmetic as minimal_time so that nonemptiness is
    # equivalent to T > T* without a stray ulp at the boundary
    t_star = minimal_time(cert, d, delta, tangential)
    if T <= t_star or lo >= hi:
        raise EmptyBetaWindowError(lo, hi, t_star)
    return lo, hi


def pick_c1(cert, beta, T, margin=0.1):
    """Shift keeping psi > 1 on the closed space-time cylinder."""
    if margin <= 0:
        raise ConfigurationError(f"margin must be positive, got {margin}")
    return 1.0 + beta * T**2 - cert.d0**2 + margin


def feasibility(params, cert, tangential=True):
    """Per-gate pass flags for a parameter set against a certificate."""
    flags = {
        "certificate_ok": cert.all_pass,
        "delta_gt_d": (params.delta > params.d) if tangential else True,
        "psi_above_one": params.c1 > 1.0 + params.beta * params.T**2 - cert.d0**2,
    }
    try:
        lo, hi = beta_window(cert, params.d, params.delta, params.T, tangential)
        flags["beta_window_nonempty"] = True
        flags["beta_in_window"] = lo < params.beta < hi
    except (EmptyBetaWindowError, InfeasibleConfigError):
        flags["beta_window_nonempty"] = False
        flags["beta_in_window"] = False
    return flags


def require_feasible(params, cert, tangential=True):
    flags = feasibility(params, cert, tangential)
    bad = [k for k, v in flags.items() if not v]
    if bad:
        raise InfeasibleConfigError(f"infeasible weight parameters: {', '.join(bad)}")


def eval_weights(params, body, x, t):
    """Pointwise weight bundle at positions x and times t.

    Returns a dict with psi, phi = exp(lam psi), the time derivatives of psi,
    the spatial gradient/Hessian of psi (equal to those of psi0), the chain
    rule derivatives of phi, and b_psi = |dpsi/dt|^2 - d |grad psi|^2.
    x may be (dim,) or (n, dim); t scalar or (n,).
    """
    x = np.atleast_2d(np.asarray(x, float))
    t = np.broadcast_to(np.asarray(t, float), (x.shape[0],))
    psi = body.psi0(x) - params.beta * t**2 + params.c1
    arg = params.lam * psi
    if np.max(arg) > _LOG_MAX:
        raise WeightOverflowError(
            f"lam * psi reaches {np.max(arg):.3g}; exp overflows float64"
        )
    phi = np.exp(arg)
    grad_psi = body.psi0_gradient(x)
    dpsi_dt = -2.0 * params.beta * t
    return {
        "psi": psi,
        "phi": phi,
        "dpsi_dt": dpsi_dt,
        "d2psi_dt2": np.full_like(t, -2.0 * params.beta),
        "grad_psi": grad_psi,
        "hess_psi": body.psi0_hessian(x),
        "dphi_dt": params.lam * phi * dpsi_dt,
        "grad_phi": params.lam * phi[:, None] * grad_psi,
        "d2phi_dt2": params.lam * phi * (-2.0 * params.beta + params.lam * dpsi_dt**2),
        "b_psi": dpsi_dt**2 - params.d * np.sum(grad_psi**2, axis=1),
    }
