"""Command line interface: ``aspus test | simulate | bench-type1 | bench-power | bench-timing``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import os
import sys

import numpy as np

from . import bench
from .coxnull import DEFAULT_MAX_ITER, DEFAULT_TOL, ConvergenceError, fit_null
from .score_engine import build_weight_table
from .simgen import Scenario, build_scenario, write_truth
from .spu import GammaGrid, PermPlan, scan, write_results
from .survdata import (DataError, load_dataset, load_genemap, load_pathwaymap, write_dataset,
                       write_genemap, write_pathwaymap)


def _gammas(text):
    return tuple(math.inf if t.strip().lower() in ("inf", "infinity") else float(t) for t in text.split(","))


def _add_plan(p, B=500, seed=True):
    g = p.add_argument_group("permutations")
    g.add_argument("--B", type=int, default=B, help="total permutations (default %(default)s)")
    g.add_argument("--B-init", type=int, default=40, help="first-stage permutations (default %(default)s)")
    g.add_argument("--theta", type=float, default=0.1, help="continue past B-init if interim p < theta")
    if seed:
        g.add_argument("--seed", type=int, default=0)
    g.add_argument("--plus-one", action="store_true", help="use (1 + count) / (B + 1) p-values")
    g.add_argument("--as-printed", action="store_true",
                   help="count permutations with p_min at least as large as observed (reference only)")


def _plan(args):
    return PermPlan(B=args.B, B_init=min(args.B_init, args.B), theta=args.theta, seed=args.seed,
                    plus_one=args.plus_one, as_printed=args.as_printed)


def cmd_test(args):
    ds = load_dataset(args.geno, args.pheno, args.covar)
    genemap = load_genemap(args.genemap, ds)
    nm = fit_null(ds, tol=args.tol, max_iter=args.max_iter)
    logging.info("null fit: beta=%s converged=%s iters=%d", nm.beta, nm.converged, nm.iters)
    wt = build_weight_table(ds, nm, allow_unconverged=args.allow_unconverged)
    if args.pathways:
        units = load_pathwaymap(args.pathways, genemap)
        grid = GammaGrid.pathway(_gammas(args.gammas or "1,2,4,8"), _gammas(args.gene_gammas))
    else:
        units = genemap
        grid = GammaGrid.gene(_gammas(args.gammas or "1,2,4,8,inf"))
    results = scan(ds, wt, units, grid, _plan(args), workers=args.workers)
    write_results(results, args.out)
    logging.info("wrote %d results to %s", len(results), args.out)


def _scenario(args, seed=None):
    return Scenario(
        n=args.n, unit=args.unit, n_snps=args.n_snps, n_causal=args.n_causal,
        n_genes=args.n_genes,
        snps_per_gene=tuple(args.snps_per_gene) if len(args.snps_per_gene) == 2 else args.snps_per_gene[0],
        n_causal_genes=args.n_causal_genes, ld=args.ld, effect_a=args.effect,
        n_covar=args.n_covar, covar_beta=args.covar_beta, event_target=args.event_target,
        drop_causal=args.drop_causal, seed=args.seed if seed is None else seed,
    )


def _add_scenario(p, effect=0.0):
    g = p.add_argument_group("scenario")
    g.add_argument("--n", type=int, default=1000)
    g.add_argument("--unit", choices=("gene", "pathway"), default="gene")
    g.add_argument("--n-snps", type=int, default=10)
    g.add_argument("--n-causal", type=int, default=1)
    g.add_argument("--n-genes", type=int, default=20)
    g.add_argument("--snps-per-gene", type=int, nargs="+", default=[2, 20],
                   help="fixed size, or an inclusive LO HI range")
    g.add_argument("--n-causal-genes", type=int, default=5)
    g.add_argument("--ld", choices=("independent", "correlated"), default="independent")
    g.add_argument("--effect", type=float, default=effect, help="mean causal effect size a")
    g.add_argument("--n-covar", type=int, default=2)
    g.add_argument("--covar-beta", type=float, default=0.1)
    g.add_argument("--event-target", type=float, default=0.6)
    g.add_argument("--drop-causal", action="store_true")


def cmd_simulate(args):
    sc = _scenario(args)
    out = build_scenario(sc)
    os.makedirs(args.out_dir, exist_ok=True)
    d = args.out_dir
    write_dataset(out.dataset, os.path.join(d, "geno.csv"), os.path.join(d, "pheno.csv"),
                  os.path.join(d, "covar.csv"))
    write_genemap(out.genemap, out.dataset.snp_ids, os.path.join(d, "genemap.csv"))
    if out.pathwaymap is not None:
        write_pathwaymap(out.pathwaymap, os.path.join(d, "pathway.csv"))
    write_truth(out.truth, os.path.join(d, "truth.csv"))
    meta = json.loads(sc.to_json())
    meta.update(tau=out.truth.tau, realized_event_rate=out.truth.event_rate)
    with open(os.path.join(d, "scenario.json"), "w") as fh:
        json.dump(meta, fh, indent=2)
    logging.info("simulated %s -> %s (event rate %.3f)", out.dataset.geno.shape, d, out.truth.event_rate)


def _add_bench(p):
    p.add_argument("--replicates", "-R", type=int, default=200)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--master-seed", type=int, default=2024)
    p.add_argument("--out-dir", default=".")


def _progress(done, total):
    logging.info("%d / %d replicates", done, total)


def _write_bench(res, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    bench.write_results_csv(res, os.path.join(out_dir, "results.csv"))
    bench.write_qq_csv(res, os.path.join(out_dir, "qq.csv"))
    bench.write_diagnostics_csv(res, os.path.join(out_dir, "diagnostics.csv"))
    for c in res.cells:
        print(f"{c.label}: rate={c.rate:.4f} [{c.ci_low:.4f}, {c.ci_high:.4f}] "
              f"perms={c.mean_perms:.1f} t={c.mean_runtime * 1e3:.1f}ms")
    for d in res.diagnostics:
        print(f"{d['lower']} -> {d['higher']}: {d['power_lower']:.3f} -> {d['power_higher']:.3f} "
              f"(p={d['p_increase']:.3g})")


def _plan_b(args):
    return PermPlan(B=args.B, B_init=min(args.B_init, args.B), theta=args.theta, seed=0,
                    plus_one=args.plus_one, as_printed=args.as_printed)


def cmd_bench_type1(args):
    cells = bench.type1_cells(args.unit, tuple(args.lds), tuple(args.sizes), n=args.n,
                              drop_causal=args.drop_causal)
    spec = bench.ExperimentSpec(cells, args.replicates, args.alpha, _plan_b(args), args.workers,
                                args.master_seed)
    _write_bench(bench.run_type1(spec, _progress), args.out_dir)


def cmd_bench_power(args):
    cells = bench.power_cells(tuple(args.n_causal), tuple(args.sizes), tuple(args.effects), args.ld,
                              n=args.n)
    spec = bench.ExperimentSpec(cells, args.replicates, args.alpha, _plan_b(args), args.workers,
                                args.master_seed)
    _write_bench(bench.run_power(spec, _progress), args.out_dir)


def cmd_bench_timing(args):
    res = bench.run_timing(args.n, args.n_snps, args.B, args.replicates)
    row = res.row()
    row["scaling_ratio_80_over_40"] = bench.permutation_scaling(args.n, args.n_snps)
    row["early_stop_median_ratio"] = float(np.median(bench.early_stop_savings(args.n, args.n_snps, genes=5)))
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "results.csv"), "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(row))
        w.writeheader()
        w.writerow(row)
    for k, v in row.items():
        print(f"{k}: {v}")


def build_parser():
    parser = argparse.ArgumentParser(prog="aspus", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("test", help="gene or pathway scan of CSV data")
    p.add_argument("--geno", required=True)
    p.add_argument("--pheno", required=True)
    p.add_argument("--covar")
    p.add_argument("--genemap", required=True)
    p.add_argument("--pathways", help="gene_id,pathway_id[,weight]; switches to pathway tests")
    p.add_argument("--gammas", help="SNP-level exponents, e.g. 1,2,4,8,inf")
    p.add_argument("--gene-gammas", default="1,2,4,8", help="gene-level exponents for pathways")
    p.add_argument("--tol", type=float, default=DEFAULT_TOL)
    p.add_argument("--max-iter", type=int, default=DEFAULT_MAX_ITER)
    p.add_argument("--allow-unconverged", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="results.csv")
    _add_plan(p)
    p.set_defaults(func=cmd_test)

    p = sub.add_parser("simulate", help="write one simulated replicate as CSV files")
    _add_scenario(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bench-type1", help="Type I error over null cells")
    p.add_argument("--unit", choices=("gene", "pathway"), default="gene")
    p.add_argument("--lds", nargs="+", default=["independent", "correlated"])
    p.add_argument("--sizes", type=int, nargs="+", default=[10, 50], help="SNPs per gene")
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--drop-causal", action="store_true")
    _add_bench(p)
    _add_plan(p, seed=False)
    p.set_defaults(func=cmd_bench_type1)

    p = sub.add_parser("bench-power", help="power over gene-based alternative cells")
    p.add_argument("--n-causal", type=int, nargs="+", default=[1, 3, 5])
    p.add_argument("--sizes", type=int, nargs="+", default=[10, 50, 100])
    p.add_argument("--effects", type=float, nargs="+", default=list(bench.EFFECT_SIZES[1:]))
    p.add_argument("--ld", choices=("independent", "correlated"), default="correlated")
    p.add_argument("--n", type=int, default=1000)
    _add_bench(p)
    _add_plan(p, seed=False)
    p.set_defaults(func=cmd_bench_power)

    p = sub.add_parser("bench-timing", help="runtime and memory of one gene test")
    p.add_argument("--n", type=int, default=2000)
    p.add_argument("--n-snps", type=int, default=80)
    p.add_argument("--B", type=int, default=500)
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=cmd_bench_timing)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (DataError, ConvergenceError, ValueError) as exc:
        print(f"aspus: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
