"""Command-line entry point: ``stochavg <subcommand> --config FILE --out DIR``.

Every subcommand reads a JSON config (see :mod:`stochavg.config`), writes its
outputs into DIR together with ``manifest.json`` and exits with

* 0 on success,
* 2 on a malformed or invalid config (nothing is written),
* 3 when the simulation blows up or a numerical solve fails.
"""

import argparse
import hashlib
import json
import os
import platform
import shutil
import sys
import tempfile
import time

import numpy as np
import scipy

from . import __version__
from .averaging import (AverageField, SystemModel, Trajectory, integrate_continuous_average,
                        iterate_discrete_average, iterate_original)
from .config import ConfigError, EXPERIMENT_KINDS, config_hash, emit_config, load_config, with_seed
from .dynamic_es import (DynamicESParams, ReducedMap, StabilityError, average_field,
                         eigenvalues_closed_form, eigenvalues_numeric, jacobian,
                         jacobian_entries, linear_test_plant, reduced_model,
                         run_dynamic_experiment, solve_average_equilibrium, stability_threshold)
from .metrics import (AveragingExperiment, EnvelopeSpec, _jsonable, averaging_rate_study,
                      envelope_exceedance, exceedance_probability, horizon_steps, sup_deviation)
from .numerics import ConvergenceError, ExplosionError, gaussian_expectation
from .plotting import read_trajectory_column, write_plot_data, write_svg
from .processes import gaussian_sine_moment, make_process
from .static_es import (ESStaticParams, StaticMap, average_error_field, error_model,
                        run_static_experiment, static_streams)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3

_G = {"identity": lambda y: y, "sin": np.sin, "sin2": lambda y: np.sin(y) ** 2}


def _noise(cfg):
    n = cfg.get("noise")
    return None if n is None else (float(n["sigma1"]), float(n["bound"]))


def _static_parts(cfg, epsilon=1.0):
    smap = StaticMap(**cfg["map"])
    params = ESStaticParams(cfg["amplitude"], epsilon, cfg["probe_sigma"], _noise(cfg),
                            cfg.get("initial_estimate", 0.0))
    return smap, params


def _dynamic_parts(cfg, epsilon=None):
    rmap = ReducedMap.polynomial(cfg["varsigma"])
    eps = cfg.get("epsilon", 0.0) if epsilon is None else epsilon
    params = DynamicESParams(cfg["gain"], cfg["w1"], cfg["w2"], cfg["amplitude"], eps,
                             cfg["probe_sigma"], _noise(cfg))
    return rmap, params


def build_system(cfg, epsilon, seed):
    """(model, average, perturbation template) for the ``system`` section of a config."""
    sysc = cfg["system"]
    kind = sysc["kind"]
    pert = cfg.get("perturbation")
    if kind == "linear":
        if pert is None:
            raise ConfigError("perturbation: required for a linear system")
        A = np.asarray(sysc["A"], dtype=float)
        b = np.asarray(sysc["b"], dtype=float)
        n = len(b)
        if A.ndim != 2 or A.shape != (n, n):
            raise ConfigError(f"system/A: expected a {n}x{n} matrix to match b")
        g = _G[sysc.get("g", "identity")]
        process = make_process(pert, seed=seed)

        def field(x, y):
            return np.asarray(x) @ A.T + np.asarray(g(np.asarray(y, dtype=float)))[..., None] * b

        mean_g = process.expect(g)
        average = AverageField.closed_form(lambda x: np.asarray(x, dtype=float) @ A.T + mean_g * b)
        return SystemModel(n, field, epsilon, name="linear"), average, process
    if pert is not None:
        raise ConfigError(f"perturbation: not allowed for system kind {kind!r} "
                          "(its probe and noise are built in)")
    if kind == "static-error":
        smap, params = _static_parts(sysc, epsilon)
        return error_model(smap, params), average_error_field(smap, params), \
            static_streams(params, seed)
    rmap, params = _dynamic_parts(sysc, epsilon)
    return reduced_model(rmap, params), average_field(rmap, params), static_streams(params, seed)


def _x0(cfg, model):
    x0 = np.asarray(cfg["x0"], dtype=float)
    if x0.shape != (model.dimension,):
        raise ConfigError(f"x0: expected {model.dimension} entries, got {x0.size}")
    return x0


def _write_json(path, payload):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_series(path, header, rows):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for k, row in enumerate(rows):
            fh.write(",".join([str(k)] + [format(float(v), ".17g") for v in row]) + "\n")


# Each command gets the validated config, the output staging dir and thread count.

def cmd_simulate(cfg, out, threads):
    model, _, process = build_system(cfg, cfg["epsilon"], cfg["seed"])
    x0 = _x0(cfg, model)
    traj = iterate_original(model, process.spawn(0), x0, cfg["steps"])
    traj.to_csv(os.path.join(out, "x_hat.csv"))
    _write_json(os.path.join(out, "summary.json"), {
        "epsilon": cfg["epsilon"], "steps": cfg["steps"], "final_state": traj.states[-1],
        "max_norm": float(np.max(np.linalg.norm(traj.states, axis=1)))})


def cmd_average(cfg, out, threads):
    model, average, process = build_system(cfg, cfg["epsilon"], cfg["seed"])
    x0 = _x0(cfg, model)
    steps = cfg["steps"]
    if "n_avg" in cfg:
        average = AverageField.empirical(model, process.spawn(10**6), cfg["n_avg"])
    orig = iterate_original(model, process.spawn(0), x0, steps)
    disc = iterate_discrete_average(average, cfg["epsilon"], x0, steps)
    orig.to_csv(os.path.join(out, "x_hat.csv"))
    disc.to_csv(os.path.join(out, "average.csv"))
    summary = {"epsilon": cfg["epsilon"], "steps": steps,
               "average_kind": average.kind,
               "sup_deviation": sup_deviation(orig, disc, steps)}
    horizon = cfg.get("horizon", cfg["epsilon"] * steps)
    if horizon > 0:
        grid = integrate_continuous_average(average, x0, horizon, cfg.get("rk4_step", 1e-3))
        grid.to_csv(os.path.join(out, "continuous.csv"))
        summary["continuous_final_state"] = grid.states[-1]
    _write_json(os.path.join(out, "summary.json"), summary)


def cmd_verify_averaging(cfg, out, threads):
    eps = cfg["epsilons"]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigError("epsilons: must be strictly descending")
    model, average, process = build_system(cfg, eps[0], cfg["seed"])
    if "n_avg" in cfg:
        average = AverageField.empirical(model, process.spawn(10**6), cfg["n_avg"])
    exp = AveragingExperiment(model, average, process, _x0(cfg, model))
    R, N = cfg["replications"], cfg["horizon"]
    study = averaging_rate_study(exp, eps, N, R, threads)
    study.to_csv(os.path.join(out, "rate_study.csv"))
    medians = np.array(study.medians)
    summary = {"epsilons": eps, "horizon": N, "replications": R, "medians": medians,
               "blowups": [len(r.blowups) for r in study.rows]}
    ok = np.isfinite(medians) & (medians > 0)
    if ok.sum() >= 2:
        summary["log_log_slope"] = float(np.polyfit(np.log(np.asarray(eps)[ok]),
                                                    np.log(medians[ok]), 1)[0])
    if "delta" in cfg:
        summary["exceedance"] = [
            dict(zip(("estimate", "std_error", "blowups"),
                     exceedance_probability(exp.with_epsilon(e), cfg["delta"],
                                            horizon_steps(N, e), R, threads)))
            for e in eps]
    if "envelope" in cfg:
        env = cfg["envelope"]
        if not env["gamma"] < 1:
            raise ConfigError("envelope/gamma: must be < 1")
        spec = EnvelopeSpec(env["c"], env["gamma"], env["delta"])
        res = envelope_exceedance(exp, spec, horizon_steps(N, eps[0]), R, threads)
        summary["envelope_exceedance"] = dict(zip(("estimate", "std_error", "blowups"), res))
    _write_json(os.path.join(out, "summary.json"), summary)


def cmd_es_static(cfg, out, threads):
    smap, params = _static_parts(cfg, cfg["epsilon"])
    run = run_static_experiment(smap, params, cfg["steps"], seed=cfg["seed"],
                                band=cfg.get("band", 0.25))
    run.x_hat.to_csv(os.path.join(out, "x_hat.csv"))
    _write_series(os.path.join(out, "y.csv"), ["k", "y"], run.y[:, None])
    _write_json(os.path.join(out, "summary.json"), run.summary)


def cmd_es_dynamic(cfg, out, threads):
    rmap, params = _dynamic_parts(cfg)
    plant_cfg = cfg.get("plant")
    system, after, theta_star = rmap, False, 0.0
    if plant_cfg is not None:
        theta_star = plant_cfg.get("theta_star", 0.0)
        system = linear_test_plant(rmap, theta_star, plant_cfg.get("y_star", 0.0),
                                   plant_cfg.get("pole", 0.5))
        after = plant_cfg.get("measure_after_update", False)
    run = run_dynamic_experiment(system, params, cfg["steps"], seed=cfg["seed"],
                                 initial=tuple(cfg.get("initial", (0.0, 0.0, 0.0))),
                                 theta_star=theta_star, measure_after_update=after)
    _write_series(os.path.join(out, "reduced.csv"), ["k", "theta_tilde", "xi", "zeta_tilde"],
                  run.reduced.states)
    if run.closed_loop is not None:
        n = run.closed_loop.shape[1] - 3
        _write_series(os.path.join(out, "closedloop.csv"),
                      ["k", "theta_tilde", "xi", "zeta_tilde"] + [f"x_{i}" for i in range(n)],
                      run.closed_loop)
    _write_json(os.path.join(out, "summary.json"), run.summary)


def cmd_stability(cfg, out, threads):
    rmap, params = _dynamic_parts(cfg)
    eq = solve_average_equilibrium(rmap, params)
    j21, j31 = jacobian_entries(rmap, params, eq)
    payload = {"equilibrium": {"theta": eq.theta, "xi": eq.xi, "zeta": eq.zeta,
                               "residual": eq.residual},
               "b1": eq.b1, "b2": eq.b2, "J21": j21, "J31": j31,
               "epsilon_threshold": stability_threshold(rmap, params, equilibrium=eq)}
    if params.epsilon > 0:
        closed = eigenvalues_closed_form(params, j21)
        numeric = eigenvalues_numeric(jacobian(rmap, params, eq))
        payload["epsilon"] = params.epsilon
        payload["eigenvalues"] = [[z.real, z.imag] for z in closed]
        payload["eigenvalues_numeric"] = [[complex(z).real, complex(z).imag] for z in numeric]
        payload["spectral_radius"] = float(max(abs(z) for z in closed))
    _write_json(os.path.join(out, "stability.json"), payload)


def cmd_moments(cfg, out, threads):
    sigma = cfg["sigma"]
    rows = {}
    for p in (1, 2, 3, 4):
        quad = gaussian_expectation(lambda y, p=p: np.sin(y) ** p, sigma)
        rows[str(p)] = {"closed_form": gaussian_sine_moment(sigma, p), "quadrature": quad}
    _write_json(os.path.join(out, "moments.json"), {"sigma": sigma, "sin_moments": rows})


def cmd_plot(cfg, out, threads):
    column = cfg.get("column", "x_0")
    try:
        k, vals = read_trajectory_column(cfg["input"], column)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"input: {exc}") from None
    write_plot_data(os.path.join(out, "plot.dat"), k, vals)
    write_svg(os.path.join(out, "plot.svg"), k, vals, reference=cfg.get("reference"),
              title=f"{os.path.basename(cfg['input'])}: {column}")


COMMANDS = {"simulate": cmd_simulate, "average": cmd_average,
            "verify-averaging": cmd_verify_averaging, "es-static": cmd_es_static,
            "es-dynamic": cmd_es_dynamic, "stability": cmd_stability, "moments": cmd_moments,
            "plot": cmd_plot}


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _manifest(cfg, stage, wall):
    files = {name: _sha256(os.path.join(stage, name)) for name in sorted(os.listdir(stage))}
    return {"config_sha256": config_hash(cfg), "seed": cfg["seed"],
            "experiment": cfg["experiment"], "wall_time_s": wall,
            "versions": {"stochavg": __version__, "numpy": np.__version__,
                         "scipy": scipy.__version__, "python": platform.python_version()},
            "files": files}


HELP = {
    "simulate": "iterate X_{k+1} = X_k + eps f(X_k, Y_{k+1})",
    "average": "original iteration plus its discrete and continuous averages",
    "verify-averaging": "sup-deviation rate study and exceedance probabilities over an eps sweep",
    "es-static": "stochastic extremum seeking on a static quadratic map",
    "es-dynamic": "reduced (and optionally closed-loop) dynamic extremum seeking",
    "stability": "average equilibrium, Jacobian eigenvalues and the stable step-size bound",
    "moments": "closed-form and quadrature sine moments E sin^i(v)",
    "plot": "plot data and SVG for one trajectory column",
}


def build_parser():
    parser = argparse.ArgumentParser(prog="stochavg", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"stochavg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENT_KINDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", required=name != "plot", help="JSON config file")
        p.add_argument("--out", default=None, help="output directory (default: config 'output' or ./out)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for replications")
        if name == "plot":
            p.add_argument("--input", help="trajectory CSV (instead of a config)")
            p.add_argument("--column", default=None, help="CSV column (default: x_0)")
            p.add_argument("--reference", type=float, default=None, help="draw a line here (e.g. x*)")
    return parser


def _plot_config(args):
    if args.config is not None:
        cfg = load_config(args.config, "plot")
    elif args.input is not None:
        cfg = {"experiment": "plot", "input": args.input}
    else:
        raise ConfigError("plot needs --config or --input")
    if args.column is not None:
        cfg["column"] = args.column
    if args.reference is not None:
        cfg["reference"] = args.reference
    return cfg


def run(argv=None):
    """Run the CLI; returns the exit code."""
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
        cfg = _plot_config(args) if args.command == "plot" else load_config(args.config,
                                                                            args.command)
        cfg = with_seed(cfg, args.seed)
        cfg.setdefault("seed", 0)
        if not 0 <= cfg["seed"] < 2**64:
            raise ConfigError("seed: must be in [0, 2^64)")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or cfg.get("output") or "out"
    t0 = time.perf_counter()
    with tempfile.TemporaryDirectory(prefix="stochavg-") as stage:
        try:
            COMMANDS[args.command](cfg, stage, args.threads)
        except ConfigError as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except ExplosionError as exc:
            print(f"blow-up: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        except (ConvergenceError, StabilityError) as exc:
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        except ValueError as exc:
            # parameter combinations the schema cannot express (e.g. a non-ergodic chain)
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        with open(os.path.join(stage, "config.json"), "w", encoding="utf-8") as fh:
            fh.write(emit_config(cfg))
        manifest = _manifest(cfg, stage, time.perf_counter() - t0)
        os.makedirs(out, exist_ok=True)
        for name in os.listdir(stage):
            shutil.copyfile(os.path.join(stage, name), os.path.join(out, name))
    _write_json(os.path.join(out, "manifest.json"), manifest)
    print(f"wrote {len(manifest['files']) + 1} files to {out}")
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))
