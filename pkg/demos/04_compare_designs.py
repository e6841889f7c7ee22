"""Benchmark the slice design against a randomized design and a fixed baseline.

Every arm sees the same ground-truth stores and the same total customer
budget; only the assortments differ.  Scores are averaged over instances
with 95% confidence intervals.
"""

from nestlab.harness import ExperimentConfig, compare_designs

config = ExperimentConfig(
    n=12,
    b=2,
    schemes=("slice", "random", "default_two_nest"),
    T_list=(8_000, 80_000),
    instances=15,
    seed=12,
)

report = compare_designs(config)
summary = report.summary()

for T in config.T_list:
    print(f"\ntotal customers T = {T}")
    print(f"{'scheme':18s} {'rmse_soft':>22s} {'rand index':>22s}")
    for scheme in config.schemes:
        cell = report.cell(scheme, T)
        stats = next(
            c for c in summary["cells"] if c["scheme"] == scheme and c["T"] == T
        )
        r, d = stats["rmse_soft"], stats["rand_index"]
        print(
            f"{scheme:18s} {r['mean']:.4f} [{r['ci_low']:.4f}, {r['ci_high']:.4f}]"
            f"  {d['mean']:.4f} [{d['ci_low']:.4f}, {d['ci_high']:.4f}]"
        )

# compare_designs(config) with config.output_dir set writes one CSV of raw
# rows per budget plus this summary as JSON; the CLI does the same thing:
#   nestlab compare --config config.json --output-dir results/
