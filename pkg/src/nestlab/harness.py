"""End-to-end simulation pipeline and design comparison grid.

One pipeline run is: build a design, split the customer budget, sample
choices, identify the nest partition from the counts, fit parameters by
least squares, and score the fit against the ground truth.  The comparison
grid repeats this over instances x schemes x budgets with per-cell seeds, so
any cell is reproducible in isolation, and writes one CSV per budget plus a
summary JSON of means and confidence intervals.
"""

from __future__ import annotations

import csv
import json
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .designs import (
    ExperimentDesign,
    balanced_enumeration,
    incremental_design,
    leave_one_out_design,
    naive_encoding,
    randomized_design,
    slice_design,
)
from .identify import (
    TestConfig,
    boost_factors,
    exact_identify_with_outside,
    exact_identify_without_outside,
    noisy_identify_with_outside,
    noisy_identify_without_outside,
)
from .metrics import confidence_interval, rand_index, rmse_soft, rmse_soft_restricted
from .model import (
    ChoiceProbabilities,
    NestPartition,
    NestedLogitModel,
    choice_probabilities,
    check_general_position,
    generate_ground_truth,
)
from .recovery import recover_all, recover_least_squares
from .sampling import (
    ChoiceCountTable,
    allocate_customers,
    empirical_probabilities,
    sample_choices,
)

DESIGN_SCHEMES = ("slice", "slice_naive", "random", "loo", "incremental")
BASELINE_SCHEMES = ("default_two_nest", "point_estimate")


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings for one comparison grid."""

    n: int = 16
    b: int = 2
    schemes: tuple[str, ...] = ("slice", "random", "default_two_nest")
    T_list: tuple[int, ...] = (9000, 90000, 450000)
    instances: int = 50
    seed: int = 0
    outside: bool = True
    mode: str = "noisy"  # or "exact": identification from exact probabilities
    alpha: float = 0.05
    beta: float | None = None
    num_random_assortments: int | None = None  # defaults to the slice count b*L
    size_rule: str = "half"
    output_dir: str | None = None

    def __post_init__(self):
        valid = set(DESIGN_SCHEMES) | set(BASELINE_SCHEMES)
        bad = [s for s in self.schemes if s not in valid]
        if bad:
            raise ValueError(f"unknown schemes {bad}; expected one of {sorted(valid)}")
        if self.mode not in ("noisy", "exact"):
            raise ValueError(f"mode must be 'noisy' or 'exact', got {self.mode!r}")

    def test_config(self) -> TestConfig:
        return TestConfig(alpha=self.alpha, beta=self.beta)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "b": self.b,
            "schemes": list(self.schemes),
            "T_list": list(self.T_list),
            "instances": self.instances,
            "seed": self.seed,
            "outside": self.outside,
            "mode": self.mode,
            "alpha": self.alpha,
            "beta": self.beta,
            "num_random_assortments": self.num_random_assortments,
            "size_rule": self.size_rule,
            "output_dir": self.output_dir,
        }


def config_from_dict(data: dict) -> ExperimentConfig:
    known = {f for f in ExperimentConfig.__dataclass_fields__}
    extra = set(data) - known
    if extra:
        raise ValueError(f"unknown config fields: {sorted(extra)}")
    data = dict(data)
    for key in ("schemes", "T_list"):
        if key in data:
            data[key] = tuple(data[key])
    return ExperimentConfig(**data)


def load_config(path: str) -> ExperimentConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def default_two_nest_partition(n: int) -> NestPartition:
    """The fixed strawman grouping: first half of the items versus the rest."""
    half = n // 2
    return NestPartition([tuple(range(1, half + 1)), tuple(range(half + 1, n + 1))])


class PointEstimatePredictor:
    """Empirical choice frequencies; only answers for observed assortments."""

    def __init__(self, table: ChoiceCountTable):
        probs = empirical_probabilities(table)
        self._by_assortment = {cp.assortment: cp for cp in probs}

    def probabilities(self, assortment) -> ChoiceProbabilities:
        key = tuple(sorted(set(int(i) for i in assortment)))
        try:
            return self._by_assortment[key]
        except KeyError:
            raise ValueError(f"assortment {key} was never offered") from None

    def observed_assortments(self) -> list[tuple[int, ...]]:
        return sorted(self._by_assortment)


def point_estimate_baseline(table: ChoiceCountTable) -> PointEstimatePredictor:
    return PointEstimatePredictor(table)


@dataclass
class PipelineResult:
    instance: int
    scheme: str
    T: int
    partition: NestPartition | None
    rmse_soft: float
    rand_index: float
    rmse_soft_restricted: float
    failed: bool = False
    flags: tuple[str, ...] = ()


def build_design(
    scheme: str, n: int, b: int, config: ExperimentConfig, rng: np.random.Generator
) -> ExperimentDesign:
    if scheme in ("slice", *BASELINE_SCHEMES):
        return slice_design(balanced_enumeration(n, b))
    if scheme == "slice_naive":
        return slice_design(naive_encoding(n, b))
    if scheme == "random":
        encoding = balanced_enumeration(n, b)
        count = config.num_random_assortments or b * encoding.length
        return randomized_design(n, count, size_rule=config.size_rule, rng=rng)
    if scheme == "loo":
        return leave_one_out_design(n)
    if scheme == "incremental":
        return incremental_design(n, rng)
    raise ValueError(f"unknown scheme {scheme!r}")


def _identify(table, design, config: ExperimentConfig, truth: NestedLogitModel):
    if config.mode == "exact":
        probs = [choice_probabilities(truth, items) for items in (design.control, *design.experiments)]
        bf = boost_factors(probs[0], probs[1:], labels=design.labels)
        if truth.outside:
            return exact_identify_with_outside(bf, design)[1]
        return exact_identify_without_outside(bf, design)[1]
    if truth.outside:
        return noisy_identify_with_outside(table, design, config.test_config())[1]
    return noisy_identify_without_outside(table, design, config.test_config())[1]


def run_pipeline(
    truth: NestedLogitModel,
    scheme: str,
    T: int,
    config: ExperimentConfig,
    seed: int,
    instance: int = 0,
) -> PipelineResult:
    """Design, sample, identify, recover, and score one grid cell.

    Baseline schemes reuse the slice design's data: default_two_nest skips
    identification in favor of a fixed half split, and point_estimate skips
    modeling entirely, so it only gets the restricted score.
    """
    n = truth.n
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xD5)))
    design = build_design(scheme, n, config.b, config, rng)
    allocation = allocate_customers(T, design.num_experiments + 1)
    table = sample_choices(truth, design, allocation, seed)
    true_probs = [
        choice_probabilities(truth, items)
        for items in (design.control, *design.experiments)
    ]
    flags: list[str] = []

    if scheme == "point_estimate":
        predictor = point_estimate_baseline(table)
        est_probs = [predictor.probabilities(items) for items in (design.control, *design.experiments)]
        restricted = rmse_soft_restricted(true_probs, est_probs)
        return PipelineResult(
            instance=instance,
            scheme=scheme,
            T=T,
            partition=None,
            rmse_soft=float("nan"),
            rand_index=float("nan"),
            rmse_soft_restricted=restricted,
        )

    try:
        if scheme == "default_two_nest":
            partition = default_two_nest_partition(n)
        else:
            partition = _identify(table, design, config, truth)
        if config.mode == "exact":
            estimate = recover_all(true_probs, partition, design)
        else:
            fit = recover_least_squares(table, partition, design)
            estimate = fit.model
            flags.extend(fit.flags)
    except Exception as exc:  # noqa: BLE001  degraded cell, scored as a failure
        return PipelineResult(
            instance=instance,
            scheme=scheme,
            T=T,
            partition=None,
            rmse_soft=float("nan"),
            rand_index=float("nan"),
            rmse_soft_restricted=float("nan"),
            failed=True,
            flags=(f"{type(exc).__name__}: {exc}",),
        )

    est_probs = [
        choice_probabilities(estimate, items)
        for items in (design.control, *design.experiments)
    ]
    return PipelineResult(
        instance=instance,
        scheme=scheme,
        T=T,
        partition=partition,
        rmse_soft=rmse_soft(truth, estimate),
        rand_index=rand_index(truth.partition, partition),
        rmse_soft_restricted=rmse_soft_restricted(true_probs, est_probs),
        flags=tuple(flags),
    )


def _cell_seed(master: int, instance: int, scheme: str, T: int) -> int:
    mix = np.random.SeedSequence(
        (master, instance, zlib.crc32(scheme.encode()), T)
    )
    return int(mix.generate_state(1, dtype=np.uint64)[0])


def _instance_models(config: ExperimentConfig) -> list[NestedLogitModel]:
    models = []
    for i in range(config.instances):
        rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0xA11CE, i)))
        models.append(generate_ground_truth(config.n, rng, outside=config.outside))
    return models


def _run_cell(args) -> PipelineResult:
    truth, scheme, T, config, seed, instance = args
    return run_pipeline(truth, scheme, T, config, seed, instance)


@dataclass
class CompareReport:
    config: ExperimentConfig
    results: list[PipelineResult]
    assumption_violations: list[str] = field(default_factory=list)

    def cell(self, scheme: str, T: int) -> list[PipelineResult]:
        return [r for r in self.results if r.scheme == scheme and r.T == T]

    def summary(self) -> dict:
        out: dict = {"config": self.config.to_dict(), "cells": []}
        for scheme in self.config.schemes:
            for T in self.config.T_list:
                rows = self.cell(scheme, T)
                entry: dict = {
                    "scheme": scheme,
                    "T": T,
                    "runs": len(rows),
                    "failures": sum(r.failed for r in rows),
                }
                for name in ("rmse_soft", "rand_index", "rmse_soft_restricted"):
                    vals = [getattr(r, name) for r in rows if not np.isnan(getattr(r, name))]
                    if len(vals) >= 2:
                        mean, low, high = confidence_interval(vals)
                        entry[name] = {"mean": mean, "ci_low": low, "ci_high": high}
                out["cells"].append(entry)
        out["assumption_violations"] = self.assumption_violations
        return out


def compare_designs(config: ExperimentConfig) -> CompareReport:
    """Run the full comparison grid and optionally write its reports.

    Ground-truth instances are generated once and shared by every scheme and
    budget; general-position violations against the slice design get flagged
    (they void the identification guarantees, so the CLI exits nonzero).
    NESTLAB_THREADS > 1 distributes cells across processes.
    """
    models = _instance_models(config)
    slice_ref = slice_design(balanced_enumeration(config.n, config.b))
    violations = []
    for i, truth in enumerate(models):
        for label, k_a, k_b in check_general_position(truth, slice_ref):
            violations.append(
                f"instance {i}: nests {k_a} and {k_b} share a multiplier under {label}"
            )

    cells = [
        (models[i], scheme, T, config, _cell_seed(config.seed, i, scheme, T), i)
        for i in range(config.instances)
        for scheme in config.schemes
        for T in config.T_list
    ]
    threads = int(os.environ.get("NESTLAB_THREADS", "1"))
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_cell, cells, chunksize=1))
    else:
        results = [_run_cell(c) for c in cells]

    report = CompareReport(config=config, results=results, assumption_violations=violations)
    if config.output_dir:
        write_report(report, config.output_dir)
    return report


def write_report(report: CompareReport, output_dir: str) -> None:
    os.makedirs(output_dir, exist_ok=True)
    for T in report.config.T_list:
        path = os.path.join(output_dir, f"results_T{T}.csv")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                [
                    "instance",
                    "scheme",
                    "T",
                    "rmse_soft",
                    "rand_index",
                    "rmse_soft_restricted",
                    "failed",
                    "partition",
                ]
            )
            for r in report.results:
                if r.T != T:
                    continue
                groups = (
                    "|".join(",".join(str(i) for i in nest) for nest in r.partition.nests)
                    if r.partition is not None
                    else ""
                )
                writer.writerow(
                    [
                        r.instance,
                        r.scheme,
                        r.T,
                        f"{r.rmse_soft:.10g}",
                        f"{r.rand_index:.10g}",
                        f"{r.rmse_soft_restricted:.10g}",
                        int(r.failed),
                        groups,
                    ]
                )
    with open(os.path.join(output_dir, "summary.json"), "w") as fh:
        json.dump(report.summary(), fh, indent=2)
        fh.write("\n")
