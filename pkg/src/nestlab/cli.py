"""Command line entry points.

Subcommands mirror the pipeline stages: design, simulate, identify, recover,
evaluate, compare.  Designs and models travel as JSON, choice counts as CSV;
see the package README for the file schemas.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import designs, harness, identify, metrics, model, recovery, sampling


def _cmd_design(args) -> int:
    if args.scheme == "balanced":
        design = designs.slice_design(designs.balanced_enumeration(args.n, args.base))
    elif args.scheme == "naive":
        design = designs.slice_design(designs.naive_encoding(args.n, args.base))
    elif args.scheme == "random":
        count = args.num_assortments or args.base * designs.code_length(args.n, args.base)
        design = designs.randomized_design(
            args.n, count, size_rule=args.size_rule, rng=args.seed
        )
    elif args.scheme == "loo":
        design = designs.leave_one_out_design(args.n)
    elif args.scheme == "incremental":
        design = designs.incremental_design(args.n, rng=args.seed)
    else:
        raise ValueError(f"unknown scheme {args.scheme!r}")
    unseparated = designs.verify_separation(design)
    if unseparated:
        print(f"warning: {len(unseparated)} ordered pairs unseparated", file=sys.stderr)
    designs.save_design(design, args.out)
    print(f"wrote {args.out} ({design.num_experiments} experiments)")
    return 0


def _cmd_simulate(args) -> int:
    design = designs.load_design(args.design)
    if args.model:
        truth = model.load_model(args.model)
    else:
        truth = model.generate_ground_truth(
            design.n, np.random.default_rng(args.generate_seed), outside=not args.no_outside
        )
        if args.save_model:
            model.save_model(truth, args.save_model)
            print(f"wrote {args.save_model}")
    allocation = sampling.allocate_customers(args.customers, design.num_experiments + 1)
    table = sampling.sample_choices(truth, design, allocation, args.seed)
    sampling.save_counts(table, args.out)
    print(f"wrote {args.out} ({args.customers} customers)")
    return 0


def _write_edges(edges, path: str) -> None:
    n = edges.n
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item", *range(1, n + 1)])
        for i in range(1, n + 1):
            writer.writerow([i, *(f"{edges.get(i, j):.10g}" for j in range(1, n + 1))])


def _cmd_identify(args) -> int:
    design = designs.load_design(args.design)
    table = sampling.load_counts(args.counts, design.n)
    if args.mode == "exact":
        bf = identify.boost_factors_from_counts(table)
        if table.outside:
            edges, partition = identify.exact_identify_with_outside(bf, design, tol=args.tol)
        else:
            edges, partition = identify.exact_identify_without_outside(bf, design, tol=args.tol)
    else:
        threshold = args.threshold
        if args.mode == "ztheorem" and threshold is None:
            pairs = identify.theorem_pair_count(design.n, design.num_experiments)
            threshold = identify.theorem_z_threshold(pairs, args.delta)
            print(f"z threshold {threshold:.4f} (K = {pairs})", file=sys.stderr)
        config = identify.TestConfig(
            alpha=args.alpha,
            beta=args.beta,
            z_threshold=threshold if args.mode == "ztheorem" else None,
            delta=args.delta,
            C=args.C,
        )
        if table.outside:
            edges, partition = identify.noisy_identify_with_outside(table, design, config)
        else:
            edges, partition = identify.noisy_identify_without_outside(table, design, config)
    with open(args.out_partition, "w") as fh:
        json.dump({"n": partition.n, "nests": [list(nest) for nest in partition.nests]}, fh, indent=2)
        fh.write("\n")
    print(f"wrote {args.out_partition} ({partition.num_nests} nests)")
    if args.out_edges:
        _write_edges(edges, args.out_edges)
        print(f"wrote {args.out_edges}")
    return 0


def _load_partition(path: str) -> model.NestPartition:
    with open(path) as fh:
        data = json.load(fh)
    return model.NestPartition(data["nests"])


def _cmd_recover(args) -> int:
    design = designs.load_design(args.design)
    table = sampling.load_counts(args.counts, design.n)
    partition = _load_partition(args.partition)
    if args.exact:
        probs = sampling.empirical_probabilities(table)
        fitted = recovery.recover_all(probs, partition, design)
    else:
        fit = recovery.recover_least_squares(table, partition, design)
        for flag in fit.flags:
            print(f"note: {flag}", file=sys.stderr)
        fitted = fit.model
    model.save_model(fitted, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    truth = model.load_model(args.true)
    estimate = model.load_model(args.est)
    report: dict = {
        "rand_index": metrics.rand_index(truth.partition, estimate.partition)
    }
    if truth.n <= metrics.EXHAUSTIVE_LIMIT:
        report["rmse_soft"] = metrics.rmse_soft(truth, estimate)
    if args.design:
        design = designs.load_design(args.design)
        assortments = (design.control, *design.experiments)
        true_probs = [model.choice_probabilities(truth, a) for a in assortments]
        est_probs = [model.choice_probabilities(estimate, a) for a in assortments]
        report["rmse_soft_restricted"] = metrics.rmse_soft_restricted(true_probs, est_probs)
    print(json.dumps(report, indent=2))
    return 0


def _cmd_compare(args) -> int:
    config = harness.load_config(args.config)
    if args.output_dir:
        config = harness.config_from_dict({**config.to_dict(), "output_dir": args.output_dir})
    report = harness.compare_designs(config)
    if config.output_dir:
        print(f"wrote {config.output_dir}/summary.json")
    else:
        print(json.dumps(report.summary(), indent=2))
    if report.assumption_violations:
        for line in report.assumption_violations:
            print(f"assumption violation: {line}", file=sys.stderr)
        return 2
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="nestlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("design", help="construct an experiment design")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--base", type=int, default=2)
    p.add_argument(
        "--scheme",
        choices=["balanced", "naive", "random", "loo", "incremental"],
        default="balanced",
    )
    p.add_argument("--num-assortments", type=int, default=None)
    p.add_argument("--size-rule", choices=["uniform_3_6", "half"], default="uniform_3_6")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="design.json")
    p.set_defaults(func=_cmd_design)

    p = sub.add_parser("simulate", help="sample choice counts from a model")
    p.add_argument("--design", required=True)
    p.add_argument("--model", default=None, help="model JSON; omit to generate one")
    p.add_argument("--generate-seed", type=int, default=0)
    p.add_argument("--no-outside", action="store_true", help="generated model drops the outside option")
    p.add_argument("--save-model", default=None)
    p.add_argument("--customers", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="counts.csv")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("identify", help="estimate the nest partition from counts")
    p.add_argument("--counts", required=True)
    p.add_argument("--design", required=True)
    p.add_argument("--mode", choices=["exact", "noisy", "ztheorem"], default="noisy")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--tol", type=float, default=identify.EXACT_TOLERANCE)
    p.add_argument("--threshold", type=float, default=None, help="explicit |z| cutoff")
    p.add_argument("--delta", type=float, default=0.1)
    p.add_argument("--C", type=float, default=25.0)
    p.add_argument("--out-partition", default="partition.json")
    p.add_argument("--out-edges", default=None)
    p.set_defaults(func=_cmd_identify)

    p = sub.add_parser("recover", help="fit nest parameters given a partition")
    p.add_argument("--counts", required=True)
    p.add_argument("--design", required=True)
    p.add_argument("--partition", required=True)
    p.add_argument("--exact", action="store_true", help="treat frequencies as exact")
    p.add_argument("--out", default="model.json")
    p.set_defaults(func=_cmd_recover)

    p = sub.add_parser("evaluate", help="score an estimated model against the truth")
    p.add_argument("--true", required=True)
    p.add_argument("--est", required=True)
    p.add_argument("--design", default=None, help="adds the design-restricted score")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("compare", help="run a design comparison grid from a config")
    p.add_argument("--config", required=True)
    p.add_argument("--output-dir", default=None)
    p.set_defaults(func=_cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
