"""Convex inner bodies, the gauge-squared weight base and its certificate.

The weight base psi0(x) = gauge(x)^2 is the square of the Minkowski gauge of
the inner body.  Everything downstream (weight feasibility, minimal horizon,
beta windows) consumes the four constants certified here: the convexity
modulus rho, the inner-boundary flux floor c_prime, and the gauge range
[d0, d1] over the closed annulus.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from .errors import ConfigurationError, InvalidBodyError, SingularChartError

_FD_STEP = 1e-4


class ConvexBody:
    """Centered convex body given as ball, ellipsoid, or sampled radial profile.

    The radial profile kind stores boundary radii at uniformly spaced angles
    and evaluates in between with trigonometric interpolation, so the gauge is
    smooth and exactly positively homogeneous.  Profiles are 2-D only.
    """

    def __init__(self, kind, dim, radius=None, semi_axes=None, profile=None):
        if dim not in (1, 2, 3):
            raise InvalidBodyError(f"dimension must be 1, 2 or 3, got {dim}")
        self.kind = kind
        self.dim = dim
        self.radius = radius
        self.semi_axes = None if semi_axes is None else np.asarray(semi_axes, float)
        self.profile = None if profile is None else np.asarray(profile, float)
        if kind == "ball":
            if radius is None or radius <= 0:
                raise InvalidBodyError(f"ball radius must be positive, got {radius}")
        elif kind == "ellipsoid":
            if self.semi_axes is None or self.semi_axes.shape != (dim,):
                raise InvalidBodyError("ellipsoid needs one semi-axis per dimension")
            if np.any(self.semi_axes <= 0):
                raise InvalidBodyError("ellipsoid semi-axes must be positive")
        elif kind == "radial_profile":
            if dim != 2:
                raise InvalidBodyError("radial profiles are supported in 2-D only")
            if self.profile is None or self.profile.ndim != 1 or self.profile.size < 4:
                raise InvalidBodyError("radial profile needs >= 4 samples")
            if np.any(self.profile <= 0):
                raise InvalidBodyError("radial profile samples must be positive")
        else:
            raise InvalidBodyError(f"unknown body kind {kind!r}")

    @classmethod
    def ball(cls, dim, radius):
        return cls("ball", dim, radius=radius)

    @classmethod
    def ellipsoid(cls, semi_axes):
        semi_axes = np.atleast_1d(np.asarray(semi_axes, float))
        return cls("ellipsoid", semi_axes.size, semi_axes=semi_axes)

    @classmethod
    def radial_profile(cls, samples):
        return cls("radial_profile", 2, profile=samples)

    def boundary_radius(self, direction):
        """Distance from the origin to the body boundary along unit directions."""
        direction = np.atleast_2d(np.asarray(direction, float))
        if self.kind == "ball":
            r = np.full(direction.shape[0], float(self.radius))
        elif self.kind == "ellipsoid":
            # boundary along u at radius 1/sqrt(sum (u_i/a_i)^2)
            r = 1.0 / np.sqrt(np.sum((direction / self.semi_axes) ** 2, axis=1))
        else:
            theta = np.arctan2(direction[:, 1], direction[:, 0])
            r = self._profile_interp(theta)
        return r if r.size > 1 else float(r[0])

    def _profile_interp(self, theta):
        # trigonometric interpolation of the uniformly sampled boundary radius
        m = self.profile.size
        coeff = np.fft.rfft(self.profile) / m
        k = np.arange(coeff.size)
        phase = np.exp(1j * np.outer(np.atleast_1d(theta), k))
        scale = np.full(coeff.size, 2.0)
        scale[0] = 1.0
        if m % 2 == 0:
            scale[-1] = 1.0
        return (phase @ (scale * coeff)).real

    def gauge(self, x):
        """Minkowski gauge: the smallest t > 0 with x inside t * body."""
        x = np.asarray(x, float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if pts.shape[1] != self.dim:
            raise ConfigurationError(
                f"points have dimension {pts.shape[1]}, body has {self.dim}"
            )
        norms = np.linalg.norm(pts, axis=1)
        out = np.zeros(pts.shape[0])
        nz = norms > 0
        if np.any(nz):
            dirs = pts[nz] / norms[nz, None]
            out[nz] = norms[nz] / np.atleast_1d(self.boundary_radius(dirs))
        return float(out[0]) if single else out

    def psi0(self, x):
        """Squared gauge, the spatial part of the Carleman weight."""
        g = self.gauge(x)
        return g * g

    def psi0_gradient(self, x, h=_FD_STEP):
        """Gradient of psi0; analytic for ball/ellipsoid, central FD for profiles."""
        x = np.asarray(x, float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        if self.kind == "ball":
            grad = 2.0 * pts / self.radius**2
        elif self.kind == "ellipsoid":
            grad = 2.0 * pts / self.semi_axes**2
        else:
            grad = self._fd_gradient(pts, h)
        return grad[0] if single else grad

    def psi0_hessian(self, x, h=_FD_STEP):
        """Hessian of psi0; analytic for ball/ellipsoid, central FD for profiles."""
        x = np.asarray(x, float)
        single = x.ndim == 1
        pts = np.atleast_2d(x)
        n = pts.shape[0]
        if self.kind == "ball":
            hess = np.broadcast_to(
                (2.0 / self.radius**2) * np.eye(self.dim), (n, self.dim, self.dim)
            ).copy()
        elif self.kind == "ellipsoid":
            hess = np.broadcast_to(
                np.diag(2.0 / self.semi_axes**2), (n, self.dim, self.dim)
            ).copy()
        else:
            hess = self._fd_hessian(pts, h)
        return hess[0] if single else hess

    def _check_fd_step(self, pts, h):
        if h <= 0:
            raise ConfigurationError(f"finite-difference step must be positive, got {h}")
        # step must survive rounding at the evaluation points
        if np.any(np.abs(pts) + h == np.abs(pts)):
            raise ConfigurationError(
                f"finite-difference step {h:g} underflows at |x| ~ {np.abs(pts).max():g}"
            )

    def _fd_gradient(self, pts, h):
        self._check_fd_step(pts, h)
        grad = np.zeros_like(pts)
        for i in range(self.dim):
            e = np.zeros(self.dim)
            e[i] = h
            grad[:, i] = (self.psi0(pts + e) - self.psi0(pts - e)) / (2 * h)
        return grad

    def _fd_hessian(self, pts, h):
        self._check_fd_step(pts, h)
        n = pts.shape[0]
        hess = np.zeros((n, self.dim, self.dim))
        f0 = self.psi0(pts)
        for i in range(self.dim):
            ei = np.zeros(self.dim)
            ei[i] = h
            hess[:, i, i] = (self.psi0(pts + ei) - 2 * f0 + self.psi0(pts - ei)) / h**2
            for j in range(i + 1, self.dim):
                ej = np.zeros(self.dim)
                ej[j] = h
                mixed = (
                    self.psi0(pts + ei + ej)
                    - self.psi0(pts + ei - ej)
                    - self.psi0(pts - ei + ej)
                    + self.psi0(pts - ei - ej)
                ) / (4 * h**2)
                hess[:, i, j] = mixed
                hess[:, j, i] = mixed
        return hess


@dataclasses.dataclass(frozen=True)
class DomainSpec:
    """Annulus between the inner body boundary and the outer sphere |x| = outer_radius."""

    body: ConvexBody
    outer_radius: float

    def __post_init__(self):
        dirs = _unit_directions(self.body.dim, 256)
        rmax = np.max(np.atleast_1d(self.body.boundary_radius(dirs)))
        if rmax >= self.outer_radius:
            raise ConfigurationError(
                f"inner body (max radius {rmax:.6g}) must sit strictly inside "
                f"the outer sphere of radius {self.outer_radius:.6g}"
            )


@dataclasses.dataclass
class GeometryCertificate:
    """Sampled constants and per-property checks for a weight base."""

    rho: float
    c_prime: float
    d0: float
    d1: float
    checks: list

    @property
    def all_pass(self):
        return all(c["pass"] for c in self.checks)

    def to_dict(self):
        return dataclasses.asdict(self)


def _unit_directions(dim, n):
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
        return np.stack([np.cos(th), np.sin(th)], axis=1)
    # Fibonacci sphere, deterministic and near-uniform
    i = np.arange(n) + 0.5
    phi = np.arccos(1 - 2 * i / n)
    golden = np.pi * (1 + 5**0.5)
    th = golden * i
    return np.stack(
        [np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)], axis=1
    )


def certify(domain, n_bulk=10000, n_boundary=1000):
    """Certify the weight base of a domain by dense deterministic sampling.

    Sweeps the closed annulus on a direction-by-radius lattice and the inner
    boundary on a direction lattice.  Returns a GeometryCertificate with

    - rho:     half the smallest Hessian eigenvalue of psi0 over the annulus,
    - c_prime: min |normal derivative of psi0| over the inner boundary,
    - d0, d1:  min / max gauge over the closed annulus,

    plus pass/fail checks (worst witness point each) for: psi0 = 1 on the
    inner boundary, nonvanishing gradient, strong convexity, and strictly
    negative outward normal derivative on the inner boundary.
    """
    body = domain.body
    dim = body.dim
    if dim == 1:
        n_dir = 2
    else:
        n_dir = max(16, int(math.ceil(math.sqrt(n_bulk))))
    n_rad = max(2, int(math.ceil(n_bulk / n_dir)))
    dirs = _unit_directions(dim, n_dir)
    r_inner = np.atleast_1d(body.boundary_radius(dirs))

    # bulk lattice covering both boundaries: rows = radius fractions, one column per direction
    fracs = np.linspace(0.0, 1.0, n_rad)[:, None]
    radii = r_inner[None, :] + fracs * (domain.outer_radius - r_inner[None, :])
    pts = (radii[..., None] * dirs[None, :, :]).reshape(-1, dim)

    gauges = body.gauge(pts)
    grads = body.psi0_gradient(pts)
    grad_norms = np.linalg.norm(grads, axis=1)
    hess = body.psi0_hessian(pts)
    eigmin = np.linalg.eigvalsh(hess)[:, 0]

    bdirs = _unit_directions(dim, max(2, n_boundary))
    bpts = np.atleast_1d(body.boundary_radius(bdirs))[:, None] * bdirs
    bpsi = body.psi0(bpts)
    bgrad = body.psi0_gradient(bpts)
    # outward normal of the annulus on the inner boundary points against grad psi0
    normal_flux = -np.linalg.norm(bgrad, axis=1)

    def worst(points, values, idx):
        return {"point": [float(v) for v in points[idx]], "value": float(values[idx])}

    i_psi = int(np.argmax(np.abs(bpsi - 1.0)))
    i_grad = int(np.argmin(grad_norms))
    i_eig = int(np.argmin(eigmin))
    i_flux = int(np.argmax(normal_flux))

    checks = [
        {
            "name": "psi0_equals_one_on_inner_boundary",
            "pass": bool(np.abs(bpsi - 1.0).max() < 1e-8),
            "witness": worst(bpts, bpsi, i_psi),
        },
        {
            "name": "gradient_nonvanishing",
            "pass": bool(grad_norms[i_grad] > 1e-12),
            "witness": worst(pts, grad_norms, i_grad),
        },
        {
            "name": "hessian_strong_convexity",
            "pass": bool(eigmin[i_eig] > 0.0),
            "witness": worst(pts, eigmin, i_eig),
        },
        {
            "name": "inner_normal_derivative_negative",
            "pass": bool(normal_flux[i_flux] < 0.0),
            "witness": worst(bpts, normal_flux, i_flux),
        },
    ]
    return GeometryCertificate(
        rho=float(0.5 * eigmin.min()),
        c_prime=float(np.abs(normal_flux).min()),
        d0=float(gauges.min()),
        d1=float(gauges.max()),
        checks=checks,
    )


def counterexample_surface_hessian(theta, phi, frame="coordinate"):
    """Surface Hessian on the unit sphere of zeta(x) = |x - (0,0,2)|^2.

    Evaluates in the chart (theta, phi) -> (cos t sin p, sin t sin p, cos p)
    via the chart second derivatives minus the Christoffel correction of the
    round metric.  The squared-distance function of a ball centered away from
    the origin is NOT 2x the identity on the sphere: the exact matrix is
    diag(4 sin(phi)^2 cos(phi), 4 cos(phi)) in coordinate components, which is
    what kills naive attempts to reuse flat-space convexity on the boundary.

    frame="orthonormal" rescales to the physical orthonormal frame (divides
    the theta-theta entry by sin(phi)^2).  Returns the 2x2 matrix and its
    spectral distance to 2*identity.
    """
    if frame not in ("coordinate", "orthonormal"):
        raise ConfigurationError(f"unknown frame {frame!r}")
    sp, cp = math.sin(phi), math.cos(phi)
    if abs(sp) < 1e-9:
        raise SingularChartError(f"chart is singular at phi = {phi:.6g} (poles)")
    st, ct = math.sin(theta), math.cos(theta)
    x0 = np.array([0.0, 0.0, 2.0])

    pos = np.array([ct * sp, st * sp, cp])
    d_th = np.array([-st * sp, ct * sp, 0.0])
    d_ph = np.array([ct * cp, st * cp, -sp])
    d_thth = np.array([-ct * sp, -st * sp, 0.0])
    d_thph = np.array([-st * cp, ct * cp, 0.0])
    d_phph = np.array([-ct * sp, -st * sp, -cp])

    # chain rule: zeta has spatial gradient 2(x - x0) and constant Hessian 2I
    grad3 = 2.0 * (pos - x0)
    first = {"theta": grad3 @ d_th, "phi": grad3 @ d_ph}

    def second(di, dj, dij):
        return 2.0 * (di @ dj) + grad3 @ dij

    hess = np.array(
        [
            [second(d_th, d_th, d_thth), second(d_th, d_ph, d_thph)],
            [second(d_th, d_ph, d_thph), second(d_ph, d_ph, d_phph)],
        ]
    )
    # round-metric Christoffels: G^phi_thth = -sin cos, G^theta_thph = cot
    hess[0, 0] -= (-sp * cp) * first["phi"]
    cot = cp / sp
    hess[0, 1] -= cot * first["theta"]
    hess[1, 0] = hess[0, 1]

    if frame == "orthonormal":
        hess = hess / np.array([[sp * sp, sp], [sp, 1.0]])
    deviation = float(np.linalg.norm(hess - 2.0 * np.eye(2), 2))
    return {"matrix": hess, "deviation": deviation}
