"""Experiment configuration: TOML parsing, validation, builder helpers.

DEFAULTS below is the one table holding every default and tolerance the
command line uses; a config file only needs to override what it cares about.
Unknown sections or keys are rejected with the full list of offenders, so a
typo cannot silently fall back to a default.
"""

import math

try:
    import tomllib
except ModuleNotFoundError:
    import tomli as tomllib

from .errors import ConfigurationError
from .geometry import ConvexBody, DomainSpec
from .grid import Grid
from .wave_solver import Coefficients

_REQUIRED = object()

TWO_PI = 2.0 * math.pi

# section -> key -> (default, type tuple, predicate or None)
# predicates return an error fragment for bad values, None when fine
DEFAULTS = {
    "domain": {
        "kind": (_REQUIRED, str, lambda v: None if v in ("ball", "ellipsoid", "radial_profile") else "must be ball, ellipsoid or radial_profile"),
        "dim": (_REQUIRED, int, lambda v: None if v in (1, 2, 3) else "must be 1, 2 or 3"),
        "radius": (None, (int, float), lambda v: None if v is None or v > 0 else "must be positive"),
        "semi_axes": (None, list, None),
        "profile": (None, list, None),
        "outer_radius": (_REQUIRED, (int, float), lambda v: None if v > 0 else "must be positive"),
    },
    "coefficients": {
        "d": (1.0, (int, float), lambda v: None if v > 0 else "must be positive"),
        "delta": (2.0, (int, float), lambda v: None if v > 0 else "must be positive"),
        "q_bulk": (0.0, (int, float), None),
        "q_surf": (0.0, (int, float), None),
    },
    "grid": {
        "nr": (_REQUIRED, int, lambda v: None if v >= 5 else "must be at least 5"),
        "ntheta": (None, int, lambda v: None if v is None or v >= 8 else "must be at least 8"),
        "T": (_REQUIRED, (int, float), lambda v: None if v > 0 else "must be positive"),
        "cfl_safety": (0.5, (int, float), lambda v: None if 0 < v <= 1 else "must lie in (0, 1]"),
        "gamma_arc": ([0.0, TWO_PI], list, lambda v: None if len(v) == 2 else "needs [lo, hi]"),
        "dt": (None, (int, float), lambda v: None if v is None or v > 0 else "must be positive"),
    },
    "weights": {
        "beta": (None, (int, float), lambda v: None if v is None or v > 0 else "must be positive"),
        "c1": (None, (int, float), None),
        "lam": (2.0, (int, float), lambda v: None if v > 0 else "must be positive"),
        "s_values": ([1.0, 2.0, 4.0, 8.0, 16.0], list, lambda v: None if len(v) >= 2 else "needs at least two entries"),
        "lam_values": ([1.0, 2.0, 4.0], list, lambda v: None if len(v) >= 1 else "needs at least one entry"),
    },
    "certify": {
        "n_bulk": (10000, int, lambda v: None if v >= 100 else "must be at least 100"),
        "n_boundary": (1000, int, lambda v: None if v >= 16 else "must be at least 16"),
    },
    "counterexample": {
        "n_phi": (50, int, lambda v: None if v >= 3 else "must be at least 3"),
        "phi_min": (0.1, (int, float), lambda v: None if 0 < v < math.pi else "must lie in (0, pi)"),
        "phi_max": (math.pi - 0.1, (int, float), lambda v: None if 0 < v < math.pi else "must lie in (0, pi)"),
        "theta": (0.0, (int, float), None),
    },
    "audit": {
        "center_frac": (0.5, (int, float), lambda v: None if 0 < v < 1 else "must lie in (0, 1)"),
        "width_frac": (0.15, (int, float), lambda v: None if 0 < v < 0.5 else "must lie in (0, 0.5)"),
        "enforce_feasible": (True, bool, None),
    },
    "invert": {
        "alpha": (1e-8, (int, float), lambda v: None if v >= 0 else "must be nonnegative"),
        "cg_tol": (1e-10, (int, float), lambda v: None if v > 0 else "must be positive"),
        "cg_max_iters": (400, int, lambda v: None if v >= 1 else "must be positive"),
        "noise": (0.0, (int, float), lambda v: None if v >= 0 else "must be nonnegative"),
        "tau": (1.1, (int, float), lambda v: None if v > 1 else "must exceed 1"),
        "n_samples": (20, int, lambda v: None if v >= 1 else "must be positive"),
        "c0": (1.0, (int, float), lambda v: None if v > 0 else "must be positive"),
    },
    "observability": {
        "multipliers": ([0.5, 0.75, 1.0, 1.25, 1.5], list, lambda v: None if len(v) >= 2 else "needs at least two entries"),
        "power_tol": (1e-5, (int, float), lambda v: None if v > 0 else "must be positive"),
        "max_iters": (150, int, lambda v: None if v >= 2 else "must be at least 2"),
        "r_cutoff": (8, int, lambda v: None if v >= 1 else "must be positive"),
        "theta_cutoff": (4, int, lambda v: None if v >= 0 else "must be nonnegative"),
        "t_cutoff": (16, int, lambda v: None if v >= 1 else "must be positive"),
        "hum": (False, bool, None),
        "hum_t_factor": (1.25, (int, float), lambda v: None if v > 0 else "must be positive"),
        "hum_cg_tol": (1e-8, (int, float), lambda v: None if v > 0 else "must be positive"),
        "hum_max_iters": (2000, int, lambda v: None if v >= 1 else "must be positive"),
    },
}


class ExperimentConfig:
    """Validated view of a TOML experiment file with defaults filled in."""

    def __init__(self, raw):
        problems = []
        for section in raw:
            if section not in DEFAULTS:
                problems.append(section)
                continue
            for key in raw[section]:
                if key not in DEFAULTS[section]:
                    problems.append(f"{section}.{key}")
        if problems:
            raise ConfigurationError("unknown config keys: " + ", ".join(sorted(problems)))

        self.sections = {}
        missing, bad = [], []
        for section, keys in DEFAULTS.items():
            got = raw.get(section, {})
            out = {}
            for key, (default, types, check) in keys.items():
                if key in got:
                    val = got[key]
                    if isinstance(val, bool) and types is not bool:
                        bad.append(f"{section}.{key}: must not be a boolean")
                    elif not isinstance(val, types):
                        bad.append(f"{section}.{key}: wrong type {type(val).__name__}")
                    elif check is not None:
                        msg = check(val)
                        if msg:
                            bad.append(f"{section}.{key}: {msg}")
                    out[key] = val
                elif default is _REQUIRED:
                    missing.append(f"{section}.{key}")
                else:
                    out[key] = default
            self.sections[section] = out
        if missing:
            raise ConfigurationError("missing required config keys: " + ", ".join(missing))
        if bad:
            raise ConfigurationError("invalid config values: " + "; ".join(bad))
        self._cross_validate()

    def __getitem__(self, section):
        return self.sections[section]

    def _cross_validate(self):
        dom = self.sections["domain"]
        kind, dim = dom["kind"], dom["dim"]
        if kind == "ball" and dom["radius"] is None:
            raise ConfigurationError("domain.radius is required for kind = ball")
        if kind == "ellipsoid" and dom["semi_axes"] is None:
            raise ConfigurationError("domain.semi_axes is required for kind = ellipsoid")
        if kind == "radial_profile" and dom["profile"] is None:
            raise ConfigurationError("domain.profile is required for kind = radial_profile")
        g = self.sections["grid"]
        if g["ntheta"] is None:
            g["ntheta"] = 1 if dim == 1 else 64
        ce = self.sections["counterexample"]
        if ce["phi_min"] >= ce["phi_max"]:
            raise ConfigurationError("counterexample.phi_min must be below phi_max")

    # -- builders ---------------------------------------------------------------

    def build_body(self):
        dom = self.sections["domain"]
        if dom["kind"] == "ball":
            return ConvexBody.ball(dom["dim"], float(dom["radius"]))
        if dom["kind"] == "ellipsoid":
            axes = dom["semi_axes"]
            if len(axes) != dom["dim"]:
                raise ConfigurationError("domain.semi_axes length must equal domain.dim")
            return ConvexBody.ellipsoid(axes)
        return ConvexBody.radial_profile(dom["profile"])

    def build_domain(self):
        return DomainSpec(self.build_body(), float(self.sections["domain"]["outer_radius"]))

    def build_coeffs(self):
        c = self.sections["coefficients"]
        return Coefficients(d=float(c["d"]), delta=float(c["delta"]),
                            q_bulk=float(c["q_bulk"]), q_surf=float(c["q_surf"]))

    def build_grid(self, T=None):
        """Solver lattice for the annulus; requires a ball inner body.

        The ring nodes sit on the circle |x| = r1, which is the inner boundary
        only when the body is a centered ball.
        """
        dom, g, c = self.sections["domain"], self.sections["grid"], self.sections["coefficients"]
        if dom["kind"] != "ball":
            raise ConfigurationError(
                "solver experiments need domain.kind = ball (the lattice ring "
                "must coincide with the inner boundary)"
            )
        if dom["dim"] == 3:
            raise ConfigurationError("solver experiments support dim 1 and 2 only")
        return Grid.make(dom["dim"], float(dom["radius"]), float(dom["outer_radius"]),
                         g["nr"], float(T if T is not None else g["T"]),
                         ntheta=g["ntheta"], d=float(c["d"]), delta=float(c["delta"]),
                         cfl_safety=float(g["cfl_safety"]),
                         gamma_arc=tuple(float(x) for x in g["gamma_arc"]),
                         dt=(None if g["dt"] is None else float(g["dt"])))

    def resolved(self):
        """Plain nested dict of every setting after defaults, for report embedding."""
        return {s: dict(v) for s, v in self.sections.items()}


def load_config(path):
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config file {path} is not valid TOML: {exc}") from exc
    return ExperimentConfig(raw)
