"""Command-line front end.

Every subcommand writes its outputs into the output directory (``--out``,
else $GRAVCOLLAPSE_OUTPUT_DIR, else the working directory) followed by a
``<command>_manifest.json`` listing parameters, seed and file digests.

Exit codes: 0 success, 2 configuration error, 3 numerical failure or I/O
error, 4 inconclusive statistics.
"""
from __future__ import annotations

import argparse
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from importlib import metadata

import numpy as np

from . import __version__
from .errors import CollapseError, ConfigurationError, InconclusiveStatistics
from .io import (RunManifest, emit_csv, emit_json, json_bytes, output_dir, parse_config)
from .rates import (DecoherenceKernel, collapse_rate_cm, collapse_rate_point, dissipative_coeffs,
                    energy_trajectory, figure1_dataset, heating_rate, noise_temperature)
from .units import CONSTANTS, PRESET_NAMES, preset

SWEEP_AXES = ("R0", "m_r", "mass", "radius", "gamma", "r_c")
SWEEP_TARGETS = ("rates", "heating", "dissipative", "temperature")
MAX_SWEEP_POINTS = 100_000


def _tool_version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return __version__


# --- parameter resolution --------------------------------------------------

def _raw_config(args) -> dict:
    raw = {}
    if getattr(args, "config", None):
        import json
        from pathlib import Path
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise ConfigurationError(f"config: {exc}") from None
    if getattr(args, "preset", None):
        raw["preset"] = args.preset
        raw.setdefault("model", preset(args.preset).model)
    if getattr(args, "model", None):
        raw["model"] = args.model
    raw.setdefault("model", "dp")
    for key in ("R0", "m_r", "gamma", "r_c", "mass", "radius"):
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    return raw


def _add_physical(p, mass_default=None):
    p.add_argument("--config", help="JSON config file")
    p.add_argument("--preset", choices=PRESET_NAMES)
    p.add_argument("--model", choices=("dp", "csl"))
    p.add_argument("--mass", default=mass_default, help='particle mass, e.g. "1amu"')
    p.add_argument("--R0", help='DP cut-off, e.g. "1e-15 m"')
    p.add_argument("--m-r", dest="m_r", help="DP reference mass")
    p.add_argument("--gamma", help='CSL strength, e.g. "1e-36 m^3/s"')
    p.add_argument("--r-c", dest="r_c", help="CSL correlation length")


# --- subcommands -----------------------------------------------------------

def cmd_rates(args, out):
    cfg = parse_config(_raw_config(args))
    m = cfg.mass if cfg.mass is not None else CONSTANTS.amu
    params = cfg.params
    result = {
        "model": params.model,
        "mass_kg": m,
        "lambda": collapse_rate_point(params.model, m, params),
        "lambda_dp": collapse_rate_point("dp", m, params),
        "lambda_csl": collapse_rate_point("csl", m, params),
        "units": "1/s",
    }
    if cfg.body is not None:
        result["lambda_cm"] = collapse_rate_cm(params.model, cfg.body, params)
        result["body"] = cfg.echo["body"]
    path = emit_json(out / "rates.json", result)
    return result, [path], cfg.echo


def cmd_heating(args, out):
    cfg = parse_config(_raw_config(args))
    m = cfg.mass if cfg.mass is not None else CONSTANTS.proton_mass
    h = heating_rate(m, cfg.params.dp.R0)
    result = {"mass_kg": m, "R0_m": cfg.params.dp.R0, "power_W": h.power,
              "temperature_rate_K_per_s": h.temperature_rate, "convention": h.convention}
    return result, [emit_json(out / "heating.json", result)], cfg.echo


def cmd_dissipative(args, out):
    cfg = parse_config(_raw_config(args))
    m = cfg.mass if cfg.mass is not None else CONSTANTS.proton_mass
    dp = cfg.params.dp
    co = dissipative_coeffs(m, dp)
    result = {"mass_kg": m, "R0_m": dp.R0, "m_r_kg": dp.m_r, "k": co.k,
              "gamma_W": co.gamma, "xi_per_s": co.xi, "T_K": co.T}
    if dp.m_r > 0:
        result["T_times_mr_amu_R0sq"] = co.T * (dp.m_r / CONSTANTS.amu) * dp.R0**2
    return result, [emit_json(out / "dissipative.json", result)], cfg.echo


def cmd_fig1(args, out):
    cfg = parse_config(_raw_config(args))
    data = figure1_dataset(cfg.params.dp, cfg.params.csl, CONSTANTS.amu, args.points,
                           args.x_min, args.x_max)
    rows = zip(data.distance, data.tau_lambda_dp, data.tau_lambda_csl)
    path = emit_csv(out / "fig1.csv", ["delta_over_d", "tau_lambda_dp", "tau_lambda_csl"], rows)
    result = {"points": args.points, "x_min": args.x_min, "x_max": args.x_max,
              "tau_lambda_at_x_max": {"dp": float(data.tau_lambda_dp[-1]),
                                      "csl": float(data.tau_lambda_csl[-1])}}
    return result, [path], {**cfg.echo, "points": args.points}


def cmd_decohere(args, out):
    from .master import (DensityMatrixGrid, Grid1D, KineticOperator, build_decoherence_matrix,
                         coherence_profile, gaussian_packet, propagate, propagate_analytic_free,
                         trace_distance)
    spacing = args.spacing if args.spacing else args.box / args.sites
    grid = Grid1D(args.sites, spacing)
    kernel = DecoherenceKernel(args.model, 1.0, 1.0)
    kinetic = KineticOperator(None if args.no_kinetic else args.kinetic_mass)
    psi = (gaussian_packet(grid, -args.separation / 2, args.width)
           + gaussian_packet(grid, args.separation / 2, args.width))
    rho0 = DensityMatrixGrid.from_wavefunction(grid, psi, kinetic.mass)
    D = build_decoherence_matrix(kernel, grid)
    n_steps = int(round(args.t_final / args.dt))
    state = propagate(rho0, D, kinetic, args.dt, n_steps)
    state.validate()
    analytic = propagate_analytic_free(rho0, n_steps * args.dt, kernel, kinetic)
    deltas, prof = coherence_profile(state)
    x = grid.x
    files = [
        emit_csv(out / "coherence.csv", ["delta", "mean_abs_rho"], zip(deltas, prof)),
        emit_csv(out / "rho.csv", ["x_i", "x_j", "re", "im"],
                 ((x[i], x[j], state.rho[i, j].real, state.rho[i, j].imag)
                  for i in range(grid.n_sites) for j in range(grid.n_sites))),
    ]
    result = {"model": args.model, "time": state.time, "trace": state.trace.real,
              "min_eigenvalue": state.min_eigenvalue(),
              "trace_distance_to_closed_form": trace_distance(state, analytic)}
    files.append(emit_json(out / "decohere.json", result))
    return result, files, {"grid": {"n_sites": grid.n_sites, "spacing": spacing},
                           "kinetic_mass": kinetic.mass, "separation": args.separation,
                           "width": args.width, "dt": args.dt, "t_final": args.t_final,
                           "model": args.model, "units": "scaled (hbar=1, Lambda=1, d=1)"}


def cmd_unravel(args, out):
    from .master import (DensityMatrixGrid, Grid1D, KineticOperator, build_decoherence_matrix,
                         propagate, trace_distance)
    from .sse import (WaveFunctionLattice, build_noise_covariance, collapse_statistics,
                      run_ensemble, two_site_superposition)
    import warnings
    grid = Grid1D(args.sites, args.spacing)
    kernel = DecoherenceKernel(args.model, 1.0, 1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        noise = build_noise_covariance(kernel, grid)
    kinetic = KineticOperator(args.kinetic_mass) if args.kinetic_mass else None
    left, right = args.left, args.right if args.right is not None else args.sites - 1 - args.left
    echo = {"model": args.model, "sites": args.sites, "spacing": args.spacing,
            "n_traj": args.n_traj, "t_final": args.t_final, "dt": args.dt,
            "kinetic_mass": args.kinetic_mass, "left": left, "right": right,
            "weight": args.weight, "seed": args.seed}
    psi0 = two_site_superposition(grid, left, right, args.weight)
    if args.collapse:
        st = collapse_statistics(psi0, noise, args.t_final, args.n_traj, args.seed, dt=args.dt,
                                 kinetic=kinetic)
        result = {"freq_left": st.freq_left, "freq_right": st.freq_right,
                  "n_left": st.n_left, "n_right": st.n_right, "n_unresolved": st.n_unresolved,
                  "ci_left": st.ci_left, "ci_right": st.ci_right, "stderr_left": st.stderr_left,
                  "chi2_pvalue": st.chi2_pvalue, "inconclusive": st.inconclusive,
                  "weight_left": args.weight}
        files = [emit_json(out / "collapse.json", result)]
        if st.inconclusive:
            raise _Inconclusive(result, files, echo)
        return result, files, echo
    psi0 = WaveFunctionLattice(grid, psi0.psi, None if kinetic is None else kinetic.mass)
    res = run_ensemble(psi0, noise, kinetic, args.t_final, args.n_traj, args.seed, dt=args.dt)
    D = build_decoherence_matrix(kernel, grid)
    rho0 = DensityMatrixGrid.from_wavefunction(grid, psi0.psi, None)
    ref = propagate(rho0, D, kinetic or KineticOperator(None), args.dt,
                    int(round(args.t_final / args.dt)))
    x = grid.x
    rho = res.mean_rho.rho
    files = [emit_csv(out / "mean_rho.csv", ["x_i", "x_j", "re", "im"],
                      ((x[i], x[j], rho[i, j].real, rho[i, j].imag)
                       for i in range(grid.n_sites) for j in range(grid.n_sites)))]
    result = {"n_traj": res.n_traj, "seed": res.seed,
              "statistics": {k: {"mean": v[0], "stderr": v[1]} for k, v in res.statistics.items()},
              "trace_distance_to_master_equation": trace_distance(res.mean_rho, ref),
              "bound": 5.0 / math.sqrt(res.n_traj)}
    files.append(emit_json(out / "unravel.json", result))
    return result, files, echo


def cmd_relax(args, out):
    from .dissipative import (DissipativeKernel, KickSampler, MomentumEnsemble, evolve_ensemble,
                              thermalization_test)
    from .rates import DissipativeCoefficients
    kernel = DissipativeKernel(m=args.scaled_mass, k=args.k)
    co = kernel.coefficients()
    if co.xi == 0 and args.t_final is None:
        raise ConfigurationError("k = 0 has no relaxation time; pass --t-final")
    t_final = args.t_final if args.t_final is not None else 10.0 / co.xi
    T_ref = co.T if co.xi > 0 else 1.0
    E0 = args.energy_factor * 1.5 * T_ref
    p0 = math.sqrt(2.0 * kernel.m * E0)
    ens = MomentumEnsemble.shell(args.particles, p0, args.seed)
    sampler = None
    if args.sampler == "table":
        sampler = KickSampler(kernel, p_max=args.table_p_max or 8.0 * max(p0, math.sqrt(kernel.m * T_ref)))
    final, series = evolve_ensemble(ens, kernel, t_final, args.seed + 1, sampler=sampler)
    closed = energy_trajectory(E0, series.times, DissipativeCoefficients(co.gamma, co.xi, co.T, kernel.k))
    files = [emit_csv(out / "energy.csv", ["t", "mean_energy", "stderr", "closed_form"],
                      zip(series.times, series.mean, series.stderr, np.atleast_1d(closed)))]
    speeds = np.linalg.norm(final.momenta, axis=1)
    counts, edges = np.histogram(speeds, bins=args.bins)
    files.append(emit_csv(out / "speeds.csv", ["p_lo", "p_hi", "count"],
                          zip(edges[:-1], edges[1:], counts)))
    result = {"k": kernel.k, "gamma": co.gamma, "xi": co.xi, "T": co.T, "t_final": t_final,
              "E0": E0, "final_mean_energy": float(series.mean[-1])}
    if co.xi > 0:
        th = thermalization_test(final, kernel, co.T)
        result.update(T_estimate=th.T_estimate, T_stderr=th.T_stderr,
                      ks_statistic=th.ks_statistic, ks_pvalue=th.ks_pvalue)
    files.append(emit_json(out / "relax.json", result))
    echo = {"k": args.k, "scaled_mass": args.scaled_mass, "particles": args.particles,
            "energy_factor": args.energy_factor, "t_final": t_final, "sampler": args.sampler,
            "units": "scaled (hbar=kB=R0=1, k=0 rate of unit mass = 1)"}
    return result, files, echo


def _sweep_values(args):
    from .units import parse_quantity
    if args.log_range:
        start, stop, count = args.log_range
        start, stop, count = parse_quantity(start), parse_quantity(stop), int(count)
        if not (start > 0 and stop > 0):
            raise ConfigurationError("log-range bounds must be positive")
        values = np.geomspace(start, stop, count)
    elif args.values:
        values = np.array([parse_quantity(v) for v in args.values])
    else:
        raise ConfigurationError("sweep needs --values or --log-range")
    if values.size > MAX_SWEEP_POINTS:
        raise ConfigurationError(f"sweep has {values.size} points; the limit is {MAX_SWEEP_POINTS}")
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise ConfigurationError("sweep values must be finite and non-negative")
    return values


def _sweep_point(base_raw, axis, value, target):
    raw = dict(base_raw)
    raw[axis] = f"{float(value)!r} {_SWEEP_UNITS[axis]}"
    cfg = parse_config(raw)
    p = cfg.params
    if target == "rates":
        m = cfg.mass if cfg.mass is not None else CONSTANTS.amu
        row = [collapse_rate_point(p.model, m, p)]
        if cfg.body is not None:
            row.append(collapse_rate_cm(p.model, cfg.body, p))
        return row
    if target == "heating":
        m = cfg.mass if cfg.mass is not None else CONSTANTS.proton_mass
        h = heating_rate(m, p.dp.R0)
        return [h.power, h.temperature_rate]
    if target == "dissipative":
        m = cfg.mass if cfg.mass is not None else CONSTANTS.proton_mass
        co = dissipative_coeffs(m, p.dp)
        return [co.gamma, co.xi, co.T if p.dp.m_r > 0 else math.inf]
    T = noise_temperature(p.dp.m_r, p.dp.R0)
    T = math.inf if not isinstance(T, float) else T
    return [T, T * (p.dp.m_r / CONSTANTS.amu) * p.dp.R0**2]


_SWEEP_UNITS = {"R0": "m", "m_r": "kg", "mass": "kg", "radius": "m", "gamma": "m^3/s", "r_c": "m"}
_SWEEP_COLUMNS = {"rates": ["lambda"], "heating": ["power_W", "temperature_rate_K_per_s"],
                  "dissipative": ["gamma_W", "xi_per_s", "T_K"],
                  "temperature": ["T_K", "T_times_mr_amu_R0sq"]}


def cmd_sweep(args, out):
    values = _sweep_values(args)
    base = _raw_config(args)
    with ThreadPoolExecutor(max_workers=max(1, os.cpu_count() or 1)) as pool:
        rows = list(pool.map(lambda v: _sweep_point(base, args.axis, v, args.target), values))
    cols = list(_SWEEP_COLUMNS[args.target])
    if args.target == "rates" and rows and len(rows[0]) == 2:
        cols.append("lambda_cm")
    path = emit_csv(out / "sweep.csv", [f"{args.axis}_SI", *cols],
                    ([v, *r] for v, r in zip(values, rows)))
    result = {"axis": args.axis, "target": args.target, "points": int(values.size)}
    return result, [path], {**base, "axis": args.axis, "target": args.target,
                            "values": values.tolist()}


class _Inconclusive(InconclusiveStatistics):
    def __init__(self, result, files, echo):
        super().__init__("more than 10% of trajectories unresolved; run flagged inconclusive")
        self.payload = (result, files, echo)


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="gravcollapse",
                                 description="Collapse-model rates, decoherence and relaxation runs")
    ap.add_argument("--version", action="version", version=_tool_version())
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (default ${'{'}GRAVCOLLAPSE_OUTPUT_DIR{'}'} or .)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--quiet", action="store_true", help="do not echo the result JSON")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rates", parents=[common], help="one-particle and centre-of-mass collapse rates")
    _add_physical(p)
    p.add_argument("--radius", help="rigid-body radius; --mass is then the body mass")
    p.set_defaults(func=cmd_rates)

    p = sub.add_parser("heating", parents=[common], help="energy growth of the non-dissipative model")
    _add_physical(p)
    p.set_defaults(func=cmd_heating)

    p = sub.add_parser("dissipative", parents=[common], help="gamma, xi and temperature")
    _add_physical(p)
    p.set_defaults(func=cmd_dissipative)

    p = sub.add_parser("fig1", parents=[common], help="damping time vs distance for DP and CSL")
    _add_physical(p)
    p.add_argument("--points", type=int, default=200)
    p.add_argument("--x-min", type=float, default=0.1)
    p.add_argument("--x-max", type=float, default=50.0)
    p.set_defaults(func=cmd_fig1)

    p = sub.add_parser("decohere", parents=[common], help="master equation on a 1D grid (scaled units)")
    p.add_argument("--model", choices=("dp", "csl"), default="dp")
    p.add_argument("--sites", type=int, default=64)
    p.add_argument("--box", type=float, default=28.0)
    p.add_argument("--spacing", type=float)
    p.add_argument("--kinetic-mass", type=float, default=2.0)
    p.add_argument("--no-kinetic", action="store_true")
    p.add_argument("--separation", type=float, default=4.0)
    p.add_argument("--width", type=float, default=1.0)
    p.add_argument("--t-final", type=float, default=3.0)
    p.add_argument("--dt", type=float, default=0.01)
    p.set_defaults(func=cmd_decohere)

    p = sub.add_parser("unravel", parents=[common], help="stochastic trajectories on a lattice")
    p.add_argument("--model", choices=("dp", "csl"), default="dp")
    p.add_argument("--sites", type=int, default=16)
    p.add_argument("--spacing", type=float, default=1.25)
    p.add_argument("--n-traj", type=int, default=2000)
    p.add_argument("--t-final", type=float, default=3.0)
    p.add_argument("--dt", type=float, default=1e-3)
    p.add_argument("--kinetic-mass", type=float)
    p.add_argument("--left", type=int, default=4)
    p.add_argument("--right", type=int)
    p.add_argument("--weight", type=float, default=0.5, help="|a|^2 of the left site")
    p.add_argument("--collapse", action="store_true", help="report collapse frequencies")
    p.set_defaults(func=cmd_unravel)

    p = sub.add_parser("relax", parents=[common], help="dissipative jump process (scaled units)")
    p.add_argument("--k", type=float, default=1.0)
    p.add_argument("--scaled-mass", type=float, default=1.0)
    p.add_argument("--particles", type=int, default=10_000)
    p.add_argument("--energy-factor", type=float, default=5.0,
                   help="initial energy in units of (3/2) T")
    p.add_argument("--t-final", type=float)
    p.add_argument("--sampler", choices=("exact", "table"), default="exact")
    p.add_argument("--table-p-max", type=float)
    p.add_argument("--bins", type=int, default=50)
    p.set_defaults(func=cmd_relax)

    p = sub.add_parser("sweep", parents=[common], help="evaluate a target along one parameter axis")
    _add_physical(p)
    p.add_argument("--radius")
    p.add_argument("--axis", choices=SWEEP_AXES, required=True)
    p.add_argument("--target", choices=SWEEP_TARGETS, required=True)
    p.add_argument("--values", nargs="+")
    p.add_argument("--log-range", nargs=3, metavar=("START", "STOP", "COUNT"))
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    out = output_dir(args.out)
    start = time.perf_counter()
    code = 0
    try:
        try:
            result, files, echo = args.func(args, out)
        except _Inconclusive as exc:
            result, files, echo = exc.payload
            print(f"gravcollapse: {exc}", file=sys.stderr)
            code = exc.exit_code
        manifest = RunManifest(args.command, {"resolved": echo, "argv": vars_clean(args)},
                               args.seed, _tool_version())
        for f in files:
            manifest.add_output(f)
        manifest.wall_time = time.perf_counter() - start
        manifest.write(out / f"{args.command}_manifest.json")
    except CollapseError as exc:
        print(f"gravcollapse: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"gravcollapse: I/O error: {exc}", file=sys.stderr)
        return 3
    if not args.quiet:
        sys.stdout.write(json_bytes(result).decode("utf-8"))
    return code


def vars_clean(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


if __name__ == "__main__":
    sys.exit(main())
