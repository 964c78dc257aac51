"""Command-line surface and experiment harness.

Subcommands: gen, exact, mf, moments, learn, experiment. All numeric output
is printed with 12 significant digits; CSV files use LF newlines, comma
separators, and '.' decimal points, so a repeated invocation with the same
flags and seed is byte-identical.

Exit codes: 0 success, 2 usage error, 3 input-format error, 4 solver
non-convergence when --strict is set.
"""

from __future__ import annotations

import argparse
import csv
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import decimation, estimators, learning, meanfield, svg
from .exact import enumerate_model
from .expansion import estimate
from .model import (
    ModelFormatError,
    chain_edges,
    load_model,
    load_patterns,
    load_structure,
    random_model,
    save_model,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_FORMAT = 3
EXIT_NONCONVERGED = 4


def _fmt(x) -> str:
    return format(float(x), ".12g")


@dataclass(frozen=True)
class ExperimentRow:
    """One sweep trial; estimate fields are None when the solve diverged."""

    trial: int
    seed: int
    log_z_exact: float
    log_z_first: float | None
    log_z_second: float | None
    e_first: float | None
    e_second: float | None
    delta: float | None
    converged: bool
    iterations: int


def _solver_kwargs(args) -> dict:
    kwargs = {}
    for name in ("schedule", "damping", "tol", "max_iter"):
        if getattr(args, name, None) is not None:
            kwargs[name] = getattr(args, name)
    return kwargs


def cmd_gen(args) -> int:
    edges = None
    if args.topology == "custom":
        if not args.edges:
            raise ValueError("gen: --topology custom requires --edges FILE")
        n_struct, edges = load_structure(args.edges)
        if n_struct != args.nodes:
            raise ValueError(
                f"gen: --edges file declares {n_struct} nodes but --nodes is {args.nodes}"
            )
    model = random_model(args.nodes, args.topology, args.sigma, args.seed, edges)
    save_model(model, args.output)
    print(f"wrote {args.output}")
    return EXIT_OK


def cmd_exact(args) -> int:
    model = load_model(args.model)
    summary = enumerate_model(model, args.max_nodes)
    print(f"log_z {_fmt(summary.log_z)}")
    if args.moments:
        for i in range(model.n):
            print(f"mean {i} {_fmt(summary.means[i])}")
        for i in range(model.n):
            for j in range(i + 1, model.n):
                print(f"corr {i} {j} {_fmt(summary.pair_moments[i, j])}")
    return EXIT_OK


def cmd_mf(args) -> int:
    model = load_model(args.model)
    solver = meanfield.solve_tap if args.criterion == "tap" else meanfield.solve_bound
    init = None
    if args.init == "random":
        rng = np.random.default_rng(args.seed)
        init = meanfield.FactorisedParams.from_theta(rng.normal(0.0, 1.0, model.n))
    report = solver(
        model,
        init=init,
        schedule=args.updates,
        damping=args.damping,
        tol=args.tol,
        max_iter=args.max_iter,
        restarts=args.restarts,
        seed=args.seed,
    )
    surface = meanfield.factorised_surface(model, report.params)
    if args.order == 1:
        print(f"bound {_fmt(estimate(surface, 1).total)}")
    else:
        est = estimate(surface, 2)
        print(f"first_order {_fmt(est.log_z0 + est.term1)}")
        print(f"correction {_fmt(est.term2)}")
        print(f"total {_fmt(est.total)}")
    print(f"converged {'true' if report.converged else 'false'}")
    print(f"iterations {report.iterations}")
    if args.strict and not report.converged:
        print("mf: solver did not converge", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_moments(args) -> int:
    model = load_model(args.model)
    est = estimators.estimate_moments(model, args.method, clamp_physical=args.clamp_physical)
    for i in range(model.n):
        flag = " *" if est.physicality_flags[i, i] else ""
        print(f"mean {i} {_fmt(est.means[i])}{flag}")
    for i in range(model.n):
        for j in range(i + 1, model.n):
            flag = " *" if est.physicality_flags[i, j] else ""
            print(f"corr {i} {j} {_fmt(est.correlations[i, j])}{flag}")
    if est.nonconverged.any():
        print(f"nonconverged_entries {int(est.nonconverged.sum())}")
    if args.output:
        _write_moment_csv(model, args.output, args.max_nodes)
        print(f"wrote {args.output}")
    if args.strict and est.nonconverged.any():
        return EXIT_NONCONVERGED
    return EXIT_OK


def _write_moment_csv(model, path, max_nodes) -> None:
    exact, variational, ratio1, ratio2 = estimators.moment_table(model, max_nodes)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["i", "j", "exact", "variational", "ratio1", "ratio2", "flags"])
        for i in range(model.n):
            for j in range(i, model.n):
                if exact is not None:
                    value = exact.means[i] if i == j else exact.pair_moments[i, j]
                    exact_field = _fmt(value)
                else:
                    exact_field = ""
                flags = ";".join(
                    est.method
                    for est in (variational, ratio1, ratio2)
                    if est.physicality_flags[i, j]
                )
                row = [i, j, exact_field]
                for est in (variational, ratio1, ratio2):
                    value = est.means[i] if i == j else est.correlations[i, j]
                    row.append(_fmt(value))
                row.append(flags)
                writer.writerow(row)


def cmd_learn(args) -> int:
    patterns = load_patterns(args.patterns)
    config = learning.LearningConfig(
        n_visible=args.visible,
        n_hidden=args.hidden,
        eta=args.eta,
        updates=args.updates,
        free_stats=args.free_stats,
        batch_mode=args.mode,
        init_sigma=args.init_sigma,
        seed=args.seed,
    )
    model, trace = learning.train(config, patterns)
    with open(args.output, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [
                "update", "exact_bound", "first_bound", "second_bound",
                "grad_norm", "clamped_nonconv", "free_nonconv",
            ]
        )
        for rec in trace.records:
            writer.writerow(
                [
                    rec.update,
                    _fmt(rec.exact_bound) if rec.exact_bound is not None else "",
                    _fmt(rec.first_bound),
                    _fmt(rec.second_bound),
                    _fmt(rec.grad_norm),
                    rec.clamped_nonconv,
                    rec.free_nonconv,
                ]
            )
    last = trace.records[-1]
    if last.exact_bound is not None:
        print(f"final_exact_bound {_fmt(last.exact_bound)}")
    print(f"final_first_bound {_fmt(last.first_bound)}")
    print(f"final_second_bound {_fmt(last.second_bound)}")
    print(f"wrote {args.output}")
    return EXIT_OK


def _run_trial(task) -> ExperimentRow:
    trial, base_seed, nodes, sigma, approx, edges, max_nodes = task
    seed = base_seed + trial
    model = random_model(nodes, "full", sigma, seed)
    log_z_exact = enumerate_model(model, max_nodes).log_z
    if approx == "factorised":
        report = meanfield.solve_bound(model)
        converged = report.converged
        iterations = report.iterations
        surface = meanfield.factorised_surface(model, report.params) if converged else None
    else:
        state = decimation.solve_generalized_mf(model, edges)
        converged = state.report.converged
        iterations = state.report.iterations
        surface = decimation.decimatable_surface(model, state) if converged else None
    if not converged:
        return ExperimentRow(
            trial, seed, log_z_exact, None, None, None, None, None, False, iterations
        )
    first = estimate(surface, 1).total
    second = estimate(surface, 2).total
    record = estimators.error_record(log_z_exact, first, second)
    return ExperimentRow(
        trial, seed, log_z_exact, first, second,
        record.e_first.value, record.e_second.value, record.paired_delta,
        True, iterations,
    )


def run_experiment(
    trials: int,
    nodes: int,
    approx: str = "factorised",
    structure=None,
    sigma: float = 1.0,
    seed: int = 0,
    jobs: int = 1,
    max_nodes: int = 24,
) -> list[ExperimentRow]:
    """Run the sweep and return rows in trial order.

    Per trial: draw a fresh fully connected Normal(0, sigma^2) model with
    seed base+trial, fit the chosen tractable family, and compare the order-1
    and order-2 estimates against exact enumeration. Trials are independent,
    so they may run in parallel without changing the result.
    """
    if approx not in ("factorised", "decimatable"):
        raise ValueError("approx must be 'factorised' or 'decimatable'")
    edges = None
    if approx == "decimatable":
        edges = tuple(structure) if structure is not None else chain_edges(nodes)
    tasks = [(t, seed, nodes, sigma, approx, edges, max_nodes) for t in range(trials)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_run_trial, tasks, chunksize=max(1, trials // (4 * jobs))))
    return [_run_trial(task) for task in tasks]


def _write_experiment_csv(rows, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(
            [
                "trial", "seed", "log_z_exact", "log_z_first", "log_z_second",
                "e_first", "e_second", "delta", "converged", "iterations",
            ]
        )
        for row in rows:
            writer.writerow(
                [
                    row.trial,
                    row.seed,
                    _fmt(row.log_z_exact),
                    _fmt(row.log_z_first) if row.converged else "",
                    _fmt(row.log_z_second) if row.converged else "",
                    _fmt(row.e_first) if row.converged else "",
                    _fmt(row.e_second) if row.converged else "",
                    _fmt(row.delta) if row.converged else "",
                    "true" if row.converged else "false",
                    row.iterations,
                ]
            )


def experiment_summary(csv_path) -> dict:
    """Summary statistics recomputed from a written sweep CSV.

    Reading the rounded CSV back is the single source for the footer, so an
    external reader recomputing the same statistics matches it exactly.
    """
    e_first, e_second, deltas = [], [], []
    nonconverged = 0
    with open(csv_path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            if row["converged"] == "true":
                e_first.append(abs(float(row["e_first"])))
                e_second.append(abs(float(row["e_second"])))
                deltas.append(float(row["delta"]))
            else:
                nonconverged += 1
    count = len(deltas)
    return {
        "converged": count,
        "nonconverged": nonconverged,
        "mean_abs_e_first": sum(e_first) / count if count else float("nan"),
        "mean_abs_e_second": sum(e_second) / count if count else float("nan"),
        "mean_delta": sum(deltas) / count if count else float("nan"),
    }


def cmd_experiment(args) -> int:
    structure = None
    if args.structure:
        n_struct, structure = load_structure(args.structure)
        if n_struct != args.nodes:
            raise ValueError(
                f"experiment: --structure declares {n_struct} nodes but --nodes is {args.nodes}"
            )
    rows = run_experiment(
        trials=args.trials,
        nodes=args.nodes,
        approx=args.approx,
        structure=structure,
        sigma=args.sigma,
        seed=args.seed,
        jobs=args.jobs,
        max_nodes=args.max_nodes,
    )
    _write_experiment_csv(rows, args.output)
    summary = experiment_summary(args.output)
    print(f"trials {args.trials}")
    print(f"converged {summary['converged']}")
    print(f"nonconverged {summary['nonconverged']}")
    print(f"mean_abs_e_first {_fmt(summary['mean_abs_e_first'])}")
    print(f"mean_abs_e_second {_fmt(summary['mean_abs_e_second'])}")
    print(f"mean_delta {_fmt(summary['mean_delta'])}")
    if args.hist:
        converged = [r for r in rows if r.converged]
        svg.render_histograms(
            args.hist,
            [
                ("relative error, first order", [r.e_first for r in converged]),
                ("relative error, second order", [r.e_second for r in converged]),
                ("paired difference", [r.delta for r in converged]),
            ],
            bins=args.bins,
        )
        print(f"wrote {args.hist}")
    if args.strict and summary["nonconverged"]:
        return EXIT_NONCONVERGED
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bmapprox",
        description="Approximate Boltzmann machine normalizing constants, moments, and learning curves.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a random model file")
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--topology", choices=["full", "chain", "custom"], default="full")
    p.add_argument("--edges", help="structure file for --topology custom")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("exact", help="exact log Z by enumeration")
    p.add_argument("model")
    p.add_argument("--moments", action="store_true", help="also print means and pair moments")
    p.add_argument("--max-nodes", type=int, default=24, dest="max_nodes")
    p.set_defaults(func=cmd_exact)

    p = sub.add_parser("mf", help="factorised fixed point and truncated estimates")
    p.add_argument("model")
    p.add_argument("--order", type=int, choices=[1, 2], default=1)
    p.add_argument("--criterion", choices=["bound", "tap"], default="bound")
    p.add_argument("--updates", choices=["sync", "async"], default="sync")
    p.add_argument("--damping", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=10_000, dest="max_iter")
    p.add_argument("--init", choices=["default", "random"], default="default")
    p.add_argument("--restarts", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_mf)

    p = sub.add_parser("moments", help="moment estimates for a model")
    p.add_argument("model")
    p.add_argument("--method", choices=list(estimators.METHODS), default="ratio2")
    p.add_argument("--clamp-physical", action="store_true", dest="clamp_physical")
    p.add_argument("-o", "--output", help="write a comparison CSV of all methods")
    p.add_argument("--max-nodes", type=int, default=24, dest="max_nodes")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_moments)

    p = sub.add_parser("learn", help="train on a pattern file and write the bound trace")
    p.add_argument("--visible", type=int, required=True)
    p.add_argument("--hidden", type=int, required=True)
    p.add_argument("--patterns", required=True)
    p.add_argument("--eta", type=float, default=0.05)
    p.add_argument("--updates", type=int, default=200)
    p.add_argument("--free-stats", choices=["factorised", "ratio2"], default="factorised",
                   dest="free_stats")
    p.add_argument("--mode", choices=["batch", "per-pattern"], default="batch")
    p.add_argument("--init-sigma", type=float, default=0.1, dest="init_sigma")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("experiment", help="sweep random models and compare estimate orders")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--nodes", type=int, required=True)
    p.add_argument("--approx", choices=["factorised", "decimatable"], default="factorised")
    p.add_argument("--structure", help="edge-set file for --approx decimatable (default chain)")
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--hist", help="write SVG histograms of the error columns")
    p.add_argument("--bins", type=int, default=30)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--max-nodes", type=int, default=24, dest="max_nodes")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ModelFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
