"""Command-line interface: ``graph-deblur {gen-graph,diffuse,solve,experiment}``.

Exit codes: 0 success, 1 unexpected failure, 2 usage or validation error,
3 infeasible problem (fidelity radius below the achievable residual).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import experiments as ex
from .graphs import GraphConstructionError, load_graph, save_graph, spectral_decompose
from .lifting import build_lifted_operator, diffuse_and_measure
from .proximal import InfeasibleProblemError
from .solvers import default_epsilon, solve_convex, solve_ssparse

SCHEMA = ex.SCHEMA
EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2, 3

log = logging.getLogger("graph_deblur")


class UsageError(ValueError):
    pass


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _nonneg_float(text):
    value = float(text)
    if not value >= 0:
        raise argparse.ArgumentTypeError(f"expected a nonnegative number, got {text}")
    return value


def _float_list(text):
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _int_range(text):
    """``"1-5"`` or ``"1,2,4"``."""
    try:
        if "-" in text:
            lo, hi = (int(t) for t in text.split("-"))
            return list(range(lo, hi + 1))
        return [int(t) for t in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a range like 1-5 or 1,2,3, got {text!r}")


def _write_json(path, data) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1))


def _write_csv(path, body: str, config: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"# {SCHEMA} config={json.dumps(config, sort_keys=True)}\n"
    path.write_text(header + body)


def _graph_params(args) -> dict:
    if args.kind == "sensor":
        return {"k": args.k}
    return {"c": args.communities, "p_in": args.p_in, "p_out": args.p_out}


def _add_graph_flags(p):
    p.add_argument("--k", type=_positive_int, default=6, help="sensor graph: neighbours per node")
    p.add_argument("--communities", type=_positive_int, default=4, help="community graph: blocks")
    p.add_argument("--p-in", type=float, default=0.3, help="community graph: intra-block edge prob")
    p.add_argument("--p-out", type=float, default=0.01, help="community graph: inter-block edge prob")


def _add_signal_flags(p):
    p.add_argument("--sparsity", type=_positive_int, default=3, help="number of sources S")
    p.add_argument("--h", type=_float_list, default=list(ex.DEFAULT_FILTER),
                   help="true filter taps, comma separated")
    p.add_argument("--noise-sigma", type=_nonneg_float, default=0.1)
    p.add_argument("--amplitude-rule", choices=("fixed", "uniform"), default="fixed")
    p.add_argument("--seed", type=int, default=0)


def _add_solver_flags(p):
    p.add_argument("--rho0", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--epsilon", type=_nonneg_float)
    p.add_argument("--tau", type=_nonneg_float)
    p.add_argument("--max-iter", type=_positive_int)
    p.add_argument("--tol", type=float)
    p.add_argument("--scale-rule", choices=("h0=1", "unit-h"))


def _solver_configs(args, ssparse_base=ex.SSPARSE_CONFIG):
    overrides = {k: getattr(args, k) for k in ("rho0", "eta", "tau", "max_iter", "tol", "scale_rule")
                 if getattr(args, k, None) is not None}
    try:
        convex = ex.CONVEX_CONFIG.with_(**{k: v for k, v in overrides.items() if k != "eta"})
        ssparse = ssparse_base.with_(**overrides)
    except ValueError as exc:
        raise UsageError(str(exc))
    return convex, ssparse


# -- subcommands ---------------------------------------------------------------

def cmd_gen_graph(args) -> int:
    params = _graph_params(args)
    g = ex.make_graph(args.kind, args.n, seed=args.seed, **params)
    save_graph(g, args.out, kind=args.kind, seed=args.seed, params=params)
    print(f"wrote {args.kind} graph with {g.n} nodes and {len(g.edges())} edges to {args.out}")
    return EXIT_OK


def _synthesize(sd, args):
    rng_seed = args.seed
    x = ex.make_sparse_source(sd.n, args.sparsity, args.amplitude_rule,
                              seed=ex.role_rng(rng_seed, ex.ROLE_SOURCE))
    meas = diffuse_and_measure(sd, args.h, x, args.noise_sigma,
                               seed=ex.role_rng(rng_seed, ex.ROLE_NOISE))
    return x, meas


def cmd_diffuse(args) -> int:
    g = load_graph(args.graph)
    sd = spectral_decompose(g, normalize=not args.no_normalize)
    x, meas = _synthesize(sd, args)
    _write_json(args.out, {
        "schema": SCHEMA,
        "kind": "measurement",
        "config": {"graph": str(args.graph), "sparsity": args.sparsity, "h_true": args.h,
                   "noise_sigma": args.noise_sigma, "amplitude_rule": args.amplitude_rule,
                   "seed": args.seed, "normalize": not args.no_normalize},
        "x_true": x.tolist(),
        "h_true": list(args.h),
        "support": [int(i) for i in np.flatnonzero(x)],
        "noise_sigma": args.noise_sigma,
        "y": meas.y.tolist(),
        "y_hat": meas.y_hat.tolist(),
    })
    print(f"wrote measurement to {args.out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    g = load_graph(args.graph)
    sd = spectral_decompose(g, normalize=not args.no_normalize)
    x_true = h_true = None
    noise_sigma = None
    if args.synthesize:
        x_true, meas = _synthesize(sd, args)
        y_hat = meas.y_hat
        h_true = list(args.h)
        noise_sigma = args.noise_sigma
    elif args.measurement:
        data = json.loads(Path(args.measurement).read_text())
        y_hat = np.asarray(data["y_hat"], dtype=float)
        if y_hat.shape != (g.n,):
            raise UsageError(f"measurement has {y_hat.size} entries, graph has {g.n} nodes")
        x_true = None if data.get("x_true") is None else np.asarray(data["x_true"])
        h_true = data.get("h_true")
        noise_sigma = data.get("noise_sigma")
    else:
        raise UsageError("give --measurement PATH or --synthesize")

    model_L = args.model_L or (len(h_true) if h_true else len(ex.DEFAULT_FILTER))
    lifted = build_lifted_operator(sd, model_L)
    convex_cfg, ssparse_cfg = _solver_configs(args)
    if args.trace:
        convex_cfg = convex_cfg.with_(trace_path=args.trace)
        ssparse_cfg = ssparse_cfg.with_(trace_path=args.trace)

    if args.method == "convex":
        cfg = convex_cfg
        result = solve_convex(lifted, y_hat, cfg)
        init_desc = None
    else:
        epsilon = args.epsilon
        if epsilon is None:
            if noise_sigma is None:
                raise UsageError("--epsilon is required when the noise level is unknown")
            epsilon = default_epsilon(noise_sigma, g.n)
        cfg = ssparse_cfg.with_(sparsity_S=args.sparsity, epsilon=epsilon)
        init_desc = args.init
        if args.init == "convex":
            Z0 = solve_convex(lifted, y_hat, convex_cfg).Z_final
        elif args.init == "random":
            Z0 = ex.role_rng(args.seed, ex.ROLE_INIT).standard_normal((g.n, model_L))
        else:
            prev = json.loads(Path(args.init).read_text())
            Z0 = np.asarray(prev["Z_final"], dtype=float)
            if Z0.shape != (g.n, model_L):
                raise UsageError(f"--init matrix has shape {Z0.shape}, expected {(g.n, model_L)}")
        result = solve_ssparse(lifted, y_hat, cfg, Z0)

    out = {
        "schema": SCHEMA,
        "kind": "deconv-result",
        "method": args.method,
        "config": {**asdict(cfg), "graph": str(args.graph), "model_L": model_L,
                   "measurement": args.measurement, "synthesize": args.synthesize,
                   "init": init_desc, "seed": args.seed, "normalize": not args.no_normalize},
        "x_hat": result.x_hat.tolist(),
        "h_hat": result.h_hat.tolist(),
        "Z_final": result.Z_final.tolist(),
        "support": [int(i) for i in result.support()],
        "fidelity_residual": result.fidelity_residual,
        "consensus_gap": result.consensus_gap,
        "iterations": result.iterations,
        "converged": result.converged,
        "scale_rule": result.scale_rule,
    }
    if x_true is not None:
        out["x_true"] = np.asarray(x_true).tolist()
        out["h_true"] = h_true
        out["rmse"] = ex.rmse(result.x_hat, x_true)
    _write_json(args.out, out)
    msg = f"{args.method}: {result.iterations} iterations, converged={result.converged}"
    if "rmse" in out:
        msg += f", rmse={out['rmse']:.4g}"
    print(msg)
    return EXIT_OK


def cmd_experiment(args) -> int:
    out_dir = Path(args.out_dir)
    if args.name == "recovery-matrix":
        convex_cfg, ssparse_cfg = _solver_configs(args, ex.RECOVERY_SSPARSE_CONFIG)
        init_rule = "convex-solution" if args.init == "convex" else "random"
        report = ex.run_recovery_matrix(
            S_range=args.s_range, L_range=args.l_range, trials_per_cell=args.trials_per_cell,
            init_rule=init_rule, graph_kind=args.graph, n=args.n, seed=args.seed,
            noise_sigma=args.noise_sigma if args.noise_sigma is not None else ex.RECOVERY_NOISE,
            epsilon=args.epsilon, convex_cfg=convex_cfg, ssparse_cfg=ssparse_cfg,
            workers=args.workers)
        stem = f"recovery-matrix_{args.graph}_{args.init}"
        report.write_json(out_dir / f"{stem}.json")
        _write_csv(out_dir / f"{stem}.csv", report.matrix_csv(), report.config)
        _write_csv(out_dir / f"{stem}_trials.csv", report.trials_csv(), report.config)
        M = ex.matrix_array(report)
        print(f"r_restore ({args.init} init), rows S={args.s_range}, columns L={args.l_range}")
        for S, row in zip(args.s_range, M):
            print(f"S={S:<3}" + " ".join(f"{v:6.3f}" for v in row))
        print(f"grid mean: {ex.grid_mean(report):.4f}")
        return EXIT_OK

    convex_cfg, ssparse_cfg = _solver_configs(args)
    kinds = ("sensor", "community") if args.graph == "both" else (args.graph,)
    runner = ex.run_experiment_matched if args.name == "matched" else ex.run_experiment_mismatched
    kwargs = dict(trials=args.trials, seed=args.seed, n=args.n, sparsity_S=args.sparsity,
                  noise_sigma=args.noise_sigma if args.noise_sigma is not None else 0.1,
                  epsilon=args.epsilon, amplitude_rule=args.amplitude_rule,
                  convex_cfg=convex_cfg, ssparse_cfg=ssparse_cfg, workers=args.workers)
    if args.name == "mismatched":
        kwargs["model_L"] = args.model_L or 5
    lines = []
    for kind in kinds:
        report = runner(kind, **kwargs)
        stem = f"{args.name}_{kind}"
        report.write_json(out_dir / f"{stem}.json")
        _write_csv(out_dir / f"{stem}.csv", report.trials_csv(), report.config)
        table = report.table().splitlines()
        lines = lines or table[:2]
        lines.append(table[2])
    print("\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graph-deblur",
                                     description="Blind deconvolution of sparse sources on graphs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-graph", help="generate a random sensor or community graph")
    p.add_argument("--kind", choices=("sensor", "community"), required=True)
    p.add_argument("--n", type=_positive_int, help="node count (default 64 sensor, 100 community)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    _add_graph_flags(p)
    p.set_defaults(func=cmd_gen_graph)

    p = sub.add_parser("diffuse", help="plant sparse sources on a graph and diffuse them")
    p.add_argument("--graph", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--no-normalize", action="store_true", help="use the raw adjacency matrix")
    _add_signal_flags(p)
    p.set_defaults(func=cmd_diffuse)

    p = sub.add_parser("solve", help="run one deconvolution")
    p.add_argument("--graph", required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--measurement", help="measurement JSON written by 'diffuse'")
    src.add_argument("--synthesize", action="store_true", help="draw a synthetic instance")
    p.add_argument("--method", choices=("convex", "ssparse"), default="ssparse")
    p.add_argument("--init", default="convex",
                   help="S-sparse start: 'convex', 'random' or a previous result JSON")
    p.add_argument("--model-L", type=_positive_int, help="filter order assumed by the solver")
    p.add_argument("--trace", help="write the per-iteration trace CSV here")
    p.add_argument("--out", required=True)
    p.add_argument("--no-normalize", action="store_true")
    _add_signal_flags(p)
    _add_solver_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("experiment", help="reproduce a synthetic experiment")
    p.add_argument("name", choices=("matched", "mismatched", "recovery-matrix"))
    p.add_argument("--graph", choices=("sensor", "community", "both"), default="sensor")
    p.add_argument("--n", type=_positive_int)
    p.add_argument("--trials", type=_positive_int, default=30)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--sparsity", type=_positive_int, default=3)
    p.add_argument("--noise-sigma", type=_nonneg_float)
    p.add_argument("--amplitude-rule", choices=("fixed", "uniform"), default="fixed")
    p.add_argument("--model-L", type=_positive_int, help="mismatched: solver filter order")
    p.add_argument("--init", choices=("convex", "random"), default="convex",
                   help="recovery-matrix: S-sparse initialization")
    p.add_argument("--s-range", type=_int_range, default=list(range(1, 6)))
    p.add_argument("--l-range", type=_int_range, default=list(range(1, 6)))
    p.add_argument("--trials-per-cell", type=_positive_int, default=20)
    p.add_argument("--workers", type=_positive_int, default=1)
    p.add_argument("--out-dir", default="results")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InfeasibleProblemError as exc:
        print(f"error: infeasible problem: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (UsageError, ValueError, GraphConstructionError, FileNotFoundError, KeyError,
            json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception:  # noqa: BLE001
        log.exception("unexpected failure")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
