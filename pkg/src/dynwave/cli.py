"""Command-line entry point: five experiment families, reproducible reports.

Every subcommand reads one TOML config, writes its artifacts into --out, and
finishes with a report.json embedding the fully resolved config and a build
identifier, so a result can always be traced back to the exact settings that
produced it.  All floating-point output is printed with repr-faithful %.17g,
and every random draw goes through the --seed flag; rerunning a command with
the same config and seed reproduces the output files byte for byte.
"""

import argparse
import dataclasses
import json
import math
import pathlib
import subprocess
import sys

import numpy as np

from . import __version__
from . import carleman
from .config import load_config
from .errors import DynwaveError
from .geometry import certify, counterexample_surface_hessian
from .inverse_source import (MeasurementMap, ReconstructionConfig, _sample_source,
                             lipschitz_experiment, reconstruct,
                             reconstruct_discrepancy)
from .observability import filtered_constant, hum_control, observability_sweep
from .wave_solver import Trajectory
from .weights import WeightParams, beta_window, minimal_time, pick_c1


def _fmt(x):
    if isinstance(x, float):
        return "%.17g" % x
    return str(x)


def write_csv(path, header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    pathlib.Path(path).write_text("\n".join(lines) + "\n")


def build_identifier():
    """git-describe style line for the report; falls back to the bare version."""
    here = pathlib.Path(__file__).resolve().parent
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=here, capture_output=True, text=True, timeout=10)
        tag = out.stdout.strip() if out.returncode == 0 else ""
    except OSError:
        tag = ""
    return f"dynwave {__version__}" + (f" {tag}" if tag else "")


class _JsonEncoder(json.JSONEncoder):
    def default(self, o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer, np.bool_)):
            return o.item()
        if dataclasses.is_dataclass(o):
            return dataclasses.asdict(o)
        return super().default(o)


def write_report(out_dir, subcommand, cfg, seed, payload):
    report = {
        "subcommand": subcommand,
        "build": build_identifier(),
        "seed": seed,
        "config": cfg.resolved(),
        "results": payload,
    }
    (out_dir / "report.json").write_text(
        json.dumps(report, indent=2, sort_keys=True, cls=_JsonEncoder) + "\n"
    )


def _log(args, msg):
    if args.verbose:
        print(msg, file=sys.stderr)


# -- subcommands -------------------------------------------------------------------


def cmd_certify_geometry(cfg, args, out_dir):
    domain = cfg.build_domain()
    c = cfg["certify"]
    cert = certify(domain, n_bulk=c["n_bulk"], n_boundary=c["n_boundary"])
    co = cfg["coefficients"]
    tangential = cfg["domain"]["dim"] >= 2
    t_star = minimal_time(cert, co["d"], co["delta"], tangential=tangential)
    T = float(cfg["grid"]["T"])
    window = None
    beta_mid = None
    c1_suggested = None
    if T > t_star:
        lo, hi = beta_window(cert, co["d"], co["delta"], T, tangential=tangential)
        window = [lo, hi]
        beta_mid = 0.5 * (lo + hi)
        c1_suggested = pick_c1(cert, beta_mid, T)
    payload = {
        "certificate": cert.to_dict(),
        "t_star": t_star,
        "two_t_star": 2.0 * t_star,
        "T": T,
        "beta_window": window,
        "beta_suggested": beta_mid,
        "c1_suggested": c1_suggested,
    }
    (out_dir / "certificate.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True, cls=_JsonEncoder) + "\n"
    )
    _log(args, f"rho={cert.rho:.6g} c_prime={cert.c_prime:.6g} "
               f"d0={cert.d0:.6g} d1={cert.d1:.6g} T*={t_star:.6g}")
    return payload


def cmd_counterexample(cfg, args, out_dir):
    ce = cfg["counterexample"]
    phis = np.linspace(ce["phi_min"], ce["phi_max"], ce["n_phi"])
    rows = []
    worst = 0.0
    for phi in phis:
        coord = counterexample_surface_hessian(ce["theta"], float(phi), frame="coordinate")
        frame = counterexample_surface_hessian(ce["theta"], float(phi), frame="orthonormal")
        hc, hf = coord["matrix"], frame["matrix"]
        rows.append((float(phi),
                     hc[0, 0], hc[0, 1], hc[1, 1],
                     hf[0, 0], hf[0, 1], hf[1, 1],
                     coord["deviation"], frame["deviation"]))
        worst = max(worst, frame["deviation"])
    write_csv(out_dir / "counterexample.csv",
              ("phi", "h_tt_coord", "h_tp_coord", "h_pp_coord",
               "h_tt_frame", "h_tp_frame", "h_pp_frame",
               "deviation_coord", "deviation_frame"),
              rows)
    mid = counterexample_surface_hessian(ce["theta"], math.pi / 2, frame="orthonormal")
    _log(args, f"max frame deviation from 2I: {worst:.6g}; at phi=pi/2: {mid['deviation']:.6g}")
    return {"n_phi": ce["n_phi"], "max_deviation_frame": worst,
            "deviation_at_equator": mid["deviation"],
            "matrix_at_equator": mid["matrix"]}


def _audit_trajectory(grid, T, au):
    """Deterministic separable trajectory on the symmetric window (-T, T)."""
    span = grid.r2 - grid.r1
    center = grid.r1 + au["center_frac"] * span
    width = au["width_frac"] * span
    k = 3.0 * np.pi / (4.0 * span)
    radial = np.cos(k * (grid.r - grid.r1)) * np.exp(-0.5 * ((grid.r - center) / width) ** 2)
    prof = radial if grid.dim == 1 else np.outer(radial, np.cos(2.0 * grid.theta))
    times = -T + grid.dt * np.arange(grid.nt + 1)
    tau = np.exp(-0.5 * (times / (0.35 * T)) ** 2) * np.cos(1.3 * times)
    data = tau.reshape((-1,) + (1,) * grid.dim) * prof[None]
    return Trajectory(grid=grid, t0=-T, data=data)


def cmd_audit_carleman(cfg, args, out_dir):
    body = cfg.build_body()
    cert = certify(cfg.build_domain(), n_bulk=cfg["certify"]["n_bulk"],
                   n_boundary=cfg["certify"]["n_boundary"])
    coeffs = cfg.build_coeffs()
    w = cfg["weights"]
    T = float(cfg["grid"]["T"])
    tangential = cfg["domain"]["dim"] == 2
    if w["beta"] is None:
        lo, hi = beta_window(cert, coeffs.d, coeffs.delta, T, tangential=tangential)
        beta = 0.5 * (lo + hi)
    else:
        beta = float(w["beta"])
    c1 = pick_c1(cert, beta, T) if w["c1"] is None else float(w["c1"])
    # the audit wants the symmetric window (-T, T): build the lattice over a
    # horizon of 2T and shift its origin
    grid = cfg.build_grid(T=2.0 * T)
    traj = _audit_trajectory(grid, T, cfg["audit"])
    params = WeightParams(d=coeffs.d, delta=coeffs.delta, beta=beta, c1=c1,
                          lam=float(w["lam"]), s=float(w["s_values"][0]), T=T)
    res = carleman.scan(traj, params, body, cert, coeffs,
                        s_values=w["s_values"], lam_values=w["lam_values"],
                        threads=args.threads,
                        enforce_feasible=cfg["audit"]["enforce_feasible"])
    ledgers = res["ledgers"]

    term_names = list(ledgers[0].lhs) + list(ledgers[0].rhs)
    rows = []
    for led in ledgers:
        for name in led.lhs:
            rows.append((led.s, led.lam, "lhs", name, led.lhs[name]))
        for name in led.rhs:
            rows.append((led.s, led.lam, "rhs", name, led.rhs[name]))
    write_csv(out_dir / "ledger.csv", ("s", "lam", "side", "term", "value"), rows)
    write_csv(out_dir / "scan.csv",
              ("s", "lam", "lhs_total", "rhs_total", "ratio", "scale", "tangential_coef"),
              [(led.s, led.lam, led.lhs_total, led.rhs_total, led.ratio,
                led.scale, led.tangential_coef) for led in ledgers])
    _log(args, f"stable pair: {res['stable_pair']}")
    return {"beta": beta, "c1": c1, "T": T, "stable_pair": res["stable_pair"],
            "n_ledgers": len(ledgers), "terms": term_names,
            "ratios": [(led.s, led.lam, led.ratio) for led in ledgers]}


def cmd_invert_source(cfg, args, out_dir):
    body = cfg.build_body()
    cert = certify(cfg.build_domain(), n_bulk=cfg["certify"]["n_bulk"],
                   n_boundary=cfg["certify"]["n_boundary"])
    coeffs = cfg.build_coeffs()
    grid = cfg.build_grid()
    inv = cfg["invert"]

    rng = np.random.default_rng(args.seed)
    source = _sample_source(grid, rng, inv["c0"])
    mmap = MeasurementMap(grid, coeffs, body, source.r)
    m_true = mmap.forward(source.a, source.b)

    rcfg = ReconstructionConfig(alpha=float(inv["alpha"]), cg_tol=float(inv["cg_tol"]),
                                cg_max_iters=inv["cg_max_iters"])
    if inv["noise"] > 0:
        scale = inv["noise"] * np.sqrt(np.mean(m_true**2))
        pert = scale * rng.standard_normal(m_true.shape)
        m_obs = m_true + pert
        noise_norm = mmap.norm_data(pert)
        result, table = reconstruct_discrepancy(m_obs, mmap, noise_norm, rcfg,
                                                tau=float(inv["tau"]))
        discrepancy = [(a, m) for a, m in table]
    else:
        m_obs = m_true
        noise_norm = 0.0
        result = reconstruct(m_obs, mmap, rcfg)
        discrepancy = None

    da, db = result.a - source.a, result.b - source.b
    err = np.sqrt(mmap.dot_fields((da, db), (da, db)))
    nrm = np.sqrt(mmap.dot_fields((source.a, source.b), (source.a, source.b)))
    rel_err = err / nrm if nrm > 0 else float("nan")

    if grid.dim == 1:
        write_csv(out_dir / "reconstruction_a.csv", ("r", "a_true", "a_rec"),
                  [(grid.r[i], source.a[i], result.a[i]) for i in range(grid.nr)])
        write_csv(out_dir / "reconstruction_b.csv", ("b_true", "b_rec"),
                  [(float(source.b[0]), float(np.atleast_1d(result.b)[0]))])
    else:
        rows_a = []
        for i in range(grid.nr):
            for j in range(grid.ntheta):
                rows_a.append((grid.r[i], grid.theta[j],
                               source.a[i, j], result.a[i, j]))
        write_csv(out_dir / "reconstruction_a.csv", ("r", "theta", "a_true", "a_rec"), rows_a)
        write_csv(out_dir / "reconstruction_b.csv", ("theta", "b_true", "b_rec"),
                  [(grid.theta[j], source.b[j], result.b[j])
                   for j in range(grid.ntheta)])

    rep = lipschitz_experiment(grid, coeffs, body, cert, inv["n_samples"], args.seed,
                               c0=inv["c0"], threads=args.threads)
    write_csv(out_dir / "lipschitz.csv", ("sample", "source_norm", "data_norm", "ratio"),
              [(k, rep.source_norms[k], rep.data_norms[k], rep.ratios[k])
               for k in range(rep.n_samples)])
    _log(args, f"rel err {rel_err:.4g}; lipschitz max ratio {max(rep.ratios):.4g}")
    return {"relative_error": rel_err, "alpha": result.alpha,
            "cg_iterations": result.iterations, "cg_converged": result.converged,
            "noise_norm": noise_norm, "discrepancy_table": discrepancy,
            "lipschitz": rep.to_dict()}


def cmd_observability_sweep(cfg, args, out_dir):
    body = cfg.build_body()
    cert = certify(cfg.build_domain(), n_bulk=cfg["certify"]["n_bulk"],
                   n_boundary=cfg["certify"]["n_boundary"])
    coeffs = cfg.build_coeffs()
    grid = cfg.build_grid()
    ob = cfg["observability"]

    sweep = observability_sweep(grid, coeffs, body, cert,
                                multipliers=tuple(float(m) for m in ob["multipliers"]),
                                power_tol=float(ob["power_tol"]),
                                max_iters=ob["max_iters"], seed=args.seed,
                                r_cutoff=ob["r_cutoff"], theta_cutoff=ob["theta_cutoff"],
                                t_cutoff=ob["t_cutoff"], threads=args.threads)
    write_csv(out_dir / "obs_sweep.csv", ("T", "c_obs_raw", "c_obs_filtered"),
              [(f.T, r.c_obs, f.c_obs)
               for r, f in zip(sweep["raw"], sweep["filtered"])])
    payload = {
        "two_t_star": sweep["two_t_star"],
        "windows": [{"multiplier": m, "raw": r.to_dict(), "filtered": f.to_dict()}
                    for m, r, f in zip(sweep["multipliers"], sweep["raw"],
                                       sweep["filtered"])],
    }
    if ob["hum"]:
        T_c = ob["hum_t_factor"] * sweep["two_t_star"]
        g = grid.with_horizon(T_c, d=coeffs.d, delta=coeffs.delta)
        xi = (g.r - g.r1) / (g.r2 - g.r1)
        y0 = np.sin(np.pi * xi)
        if g.dim == 2:
            y0 = np.outer(y0, np.cos(g.theta))
        ctrl = hum_control(g, coeffs, body, (y0, np.zeros(g.shape)), cert=cert,
                           cg_tol=float(ob["hum_cg_tol"]), max_iters=ob["hum_max_iters"])
        payload["hum"] = {
            "T": float(g.T),
            "terminal_energy_ratio": ctrl.terminal_energy_ratio,
            "converged": ctrl.converged,
            "iterations": ctrl.iterations,
            "uncontrolled_energy": ctrl.uncontrolled_energy,
            "controlled_energy": ctrl.controlled_energy,
            "final_residual": (float(ctrl.cg_residual_history[-1])
                               if len(ctrl.cg_residual_history) else float("nan")),
            "outside_guarantee": ctrl.outside_guarantee,
        }
        _log(args, f"hum terminal ratio {ctrl.terminal_energy_ratio:.3g}")
    filt = [f.c_obs for f in sweep["filtered"]]
    _log(args, "filtered c_obs: " + " ".join("%.4g" % v for v in filt))
    return payload


_SUBCOMMANDS = {
    "certify-geometry": cmd_certify_geometry,
    "counterexample": cmd_counterexample,
    "audit-carleman": cmd_audit_carleman,
    "invert-source": cmd_invert_source,
    "observability-sweep": cmd_observability_sweep,
}


def make_parser():
    parser = argparse.ArgumentParser(prog="dynwave",
                                     description="wave experiments on annular domains")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML experiment file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    out_dir = pathlib.Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        cfg = load_config(args.config)
        payload = _SUBCOMMANDS[args.subcommand](cfg, args, out_dir)
        write_report(out_dir, args.subcommand, cfg, args.seed, payload)
    except DynwaveError as exc:
        err = {"error": type(exc).__name__, "message": str(exc),
               "subcommand": args.subcommand}
        print(json.dumps(err, sort_keys=True))
        (out_dir / "error.json").write_text(json.dumps(err, indent=2, sort_keys=True) + "\n")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
