"""Command-line pipeline: impute, scan, map, ald, simulate, rerun.

Every run writes a ``manifest.json`` into its output directory recording
the resolved configuration; ``admixscan rerun manifest.json`` replays it.
Errors surface as a JSON record on stderr and a nonzero exit code.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, fileio, kernels
from .errors import AdmixscanError
from .glm import TRAIT_KINDS
from .mapping import (
    DEFAULT_DELTA,
    DEFAULT_SUBSET_CAP,
    ald_correlation,
    reported_subsets,
    stage1_scan,
    stage2_joint,
)
from .sampler import HmmHyperparams, run_mcmc
from .simulate import (
    BINARY_C_VALUES,
    CONTINUOUS_C_VALUES,
    SimScenario,
)
from .studies import multilocus_study, null_study, power_study, _wrap_draws

log = logging.getLogger(__name__)


def _default_workers():
    env = os.environ.get("ADMIXSCAN_WORKERS", "").strip()
    return int(env) if env else None


def _add_common(parser):
    parser.add_argument("--out-dir", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=0)


def _add_trait_args(parser):
    parser.add_argument("--phenotype", required=True)
    parser.add_argument("--trait-kind", choices=TRAIT_KINDS, default="continuous")
    parser.add_argument(
        "--covariates",
        default=None,
        help="comma-separated covariate column names (default: all)",
    )
    parser.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    parser.add_argument("--workers", type=int, default=_default_workers())


def build_parser():
    parser = argparse.ArgumentParser(
        prog="admixscan",
        description="Local-ancestry imputation and Bayes-factor admixture scan",
    )
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("impute", help="sample local-ancestry draws from genotypes")
    p.add_argument("--panel", required=True)
    p.add_argument("--genotypes", required=True)
    p.add_argument("--position-unit", choices=fileio.POSITION_UNITS, default="morgans")
    p.add_argument("--cm-per-mb", type=float, default=1.0)
    p.add_argument("--lam", type=float, default=6.0, help="recombinations per Morgan")
    p.add_argument("--mu0", type=float, default=1e-4)
    p.add_argument("--rho0", type=float, default=0.8)
    p.add_argument("--nu0", type=float, default=0.01)
    p.add_argument("--mh-sigma", type=float, default=50.0)
    p.add_argument("--burn-in", type=int, default=500)
    p.add_argument("--n-draws", type=int, default=200)
    p.add_argument("--thin", type=int, default=10)
    _add_common(p)

    p = sub.add_parser("scan", help="stage-1 per-locus Bayes-factor scan")
    p.add_argument("--draws", required=True)
    _add_trait_args(p)
    _add_common(p)

    p = sub.add_parser("map", help="two-stage scan with joint subset refits")
    p.add_argument("--draws", required=True)
    _add_trait_args(p)
    p.add_argument("--max-cardinality", type=int, default=None)
    p.add_argument("--subset-cap", type=int, default=DEFAULT_SUBSET_CAP)
    _add_common(p)

    p = sub.add_parser("ald", help="ancestry correlation matrix from draws")
    p.add_argument("--draws", required=True)
    _add_common(p)

    p = sub.add_parser("simulate", help="replicated simulation studies")
    p.add_argument(
        "--scenario", choices=("null", "single_locus", "multilocus"), required=True
    )
    p.add_argument("--trait-kind", choices=("continuous", "binary"),
                   default="continuous")
    p.add_argument("--n-subjects", type=int, default=1000)
    p.add_argument("--n-loci", type=int, default=1000)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--c-values", default=None,
                   help="comma-separated effect multipliers (single_locus)")
    p.add_argument("--c", type=float, default=None,
                   help="effect multiplier (multilocus)")
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--delta", type=float, default=DEFAULT_DELTA)
    p.add_argument("--max-cardinality", type=int, default=2)
    p.add_argument("--workers", type=int, default=_default_workers())
    _add_common(p)

    p = sub.add_parser("rerun", help="replay a run from its manifest")
    p.add_argument("manifest")
    p.add_argument("--out-dir", default=None,
                   help="override the recorded output directory")
    return parser


def _outdir(args):
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _manifest_config(args, skip=("command", "verbose", "func")):
    return {
        k: v for k, v in vars(args).items() if k not in skip and v is not None
    }


def _load_trait_for_draws(args, draws):
    names = args.covariates.split(",") if args.covariates else None
    subject_ids, trait, dropped = fileio.read_phenotypes(
        args.phenotype, args.trait_kind, covariates=names
    )
    draws, trait = fileio.align_trait_to_draws(draws, subject_ids, trait)
    return draws, trait, dropped


def cmd_impute(args):
    out = _outdir(args)
    panel = fileio.read_panel(
        args.panel, position_unit=args.position_unit, cm_per_mb=args.cm_per_mb
    )
    genotypes, marker_ids = fileio.read_genotypes(args.genotypes)
    genotypes = fileio.align_genotypes_to_panel(genotypes, marker_ids, panel)
    hyper = HmmHyperparams(
        lam=args.lam,
        mu0=args.mu0,
        rho0=args.rho0,
        nu0=args.nu0,
        mh_sigma=args.mh_sigma,
        burn_in=args.burn_in,
        n_draws=args.n_draws,
        thin=args.thin,
        seed=args.seed,
    )
    draws = run_mcmc(genotypes, panel, hyper)
    fileio.save_draws(draws, out / "draws.adx")
    fileio.write_manifest(out / "manifest.json", "impute", _manifest_config(args))
    log.info("wrote %s (%d draws)", out / "draws.adx", draws.m)
    return 0


def cmd_scan(args):
    out = _outdir(args)
    draws = fileio.load_draws(args.draws)
    draws, trait, _ = _load_trait_for_draws(args, draws)
    result = stage1_scan(draws, trait, delta=args.delta, workers=args.workers)
    fileio.write_stage1_table(result, draws, out / "stage1.tsv")
    fileio.write_manifest(out / "manifest.json", "scan", _manifest_config(args))
    return 0


def cmd_map(args):
    out = _outdir(args)
    draws = fileio.load_draws(args.draws)
    draws, trait, _ = _load_trait_for_draws(args, draws)
    stage1 = stage1_scan(draws, trait, delta=args.delta, workers=args.workers)
    result = stage2_joint(
        stage1,
        draws,
        trait,
        max_cardinality=args.max_cardinality,
        subset_cap=args.subset_cap,
        workers=args.workers,
    )
    fileio.write_stage1_table(result, draws, out / "stage1.tsv")
    fileio.write_stage2_table(
        result, out / "stage2.tsv", reported=reported_subsets(result)
    )
    fileio.write_manifest(out / "manifest.json", "map", _manifest_config(args))
    return 0


def cmd_ald(args):
    out = _outdir(args)
    draws = fileio.load_draws(args.draws)
    corr, flagged = ald_correlation(draws)
    fileio.write_ald_matrix(corr, draws.marker_ids, out / "ald.tsv")
    if flagged:
        log.warning("%d constant loci zeroed in the correlation matrix", len(flagged))
    fileio.write_manifest(out / "manifest.json", "ald", _manifest_config(args))
    return 0


def _simulate_null(args, out):
    res = null_study(
        args.n_subjects,
        args.n_loci,
        args.replicates,
        args.trait_kind,
        args.alpha,
        args.delta,
        args.seed,
        workers=args.workers,
    )
    fileio.write_rows_table(res.rows, out / "replicates.tsv")
    fileio.write_rows_table(
        [
            {
                "aggregate_rate": res.aggregate_rate,
                "median_rate": res.median_rate,
                "max_rate": float(res.rates.max()),
                "delta": res.delta,
            }
        ],
        out / "summary.tsv",
    )


def _simulate_single_locus(args, out):
    if args.c_values:
        c_values = tuple(float(c) for c in args.c_values.split(","))
    else:
        c_values = (
            CONTINUOUS_C_VALUES
            if args.trait_kind == "continuous"
            else BINARY_C_VALUES
        )
    res = power_study(
        args.n_subjects,
        c_values,
        args.replicates,
        args.trait_kind,
        args.alpha,
        args.delta,
        args.seed,
    )
    fileio.write_rows_table(res.rows, out / "replicates.tsv")
    fileio.write_rows_table(
        [
            {"c": c, "power": p, "delta": res.delta}
            for c, p in zip(res.c_values, res.power)
        ],
        out / "summary.tsv",
    )


def _simulate_multilocus(args, out):
    c = args.c if args.c is not None else (
        0.7 if args.trait_kind == "continuous" else 0.35
    )
    res = multilocus_study(
        args.n_subjects,
        args.replicates,
        args.trait_kind,
        c,
        args.delta,
        args.seed,
        max_cardinality=args.max_cardinality,
        workers=args.workers,
    )
    fileio.write_rows_table(res.rows, out / "replicates.tsv")
    fileio.write_rows_table(
        [
            {
                "stage1_region_rate": res.stage1_region_rate,
                "stage2_region_rate": res.stage2_region_rate,
                "stage1_reg3_rate": res.stage1_reg3_rate,
                "stage2_reg3_rate": res.stage2_reg3_rate,
                "pair_top_rate": res.pair_top_rate,
                "pair_covered_rate": res.pair_covered_rate,
            }
        ],
        out / "summary.tsv",
    )


def _simulate_example_dataset(args, out):
    """Emit one replicate's dataset in pipeline formats for reuse."""
    from .simulate import (
        build_artificial_chromosome,
        sample_ancestry_hwe,
        simulate_traits,
    )

    rng = np.random.default_rng(args.seed)
    n = args.n_subjects
    if args.scenario == "multilocus":
        chromo = build_artificial_chromosome(n, rng)
        s = chromo.s
        causal = list(chromo.causal)
        trait = simulate_traits(
            s[:, causal],
            args.trait_kind,
            args.alpha if args.alpha else 1.0,
            args.c if args.c is not None else (
                0.7 if args.trait_kind == "continuous" else 0.35
            ),
            chromo.paap[causal],
            rng,
        )
        marker_ids = [f"L{j:03d}" for j in range(s.shape[1])]
    else:
        paap = rng.uniform(0.5, 0.95, size=args.n_loci)
        s = sample_ancestry_hwe(paap, n, rng)
        if args.scenario == "single_locus":
            c = args.c if args.c is not None else 0.4
            trait = simulate_traits(
                s[:, [0]], args.trait_kind, args.alpha, c, paap[[0]], rng
            )
        else:
            trait = simulate_traits(
                np.empty((n, 0)), args.trait_kind, args.alpha, 0.0,
                np.empty(0), rng
            )
        marker_ids = [f"L{j:03d}" for j in range(s.shape[1])]
    subject_ids = [f"S{i:05d}" for i in range(n)]
    draws = _wrap_draws(s, marker_ids=marker_ids)
    draws.subject_ids = subject_ids
    fileio.save_draws(draws, out / "dataset_draws.adx")
    fileio.write_phenotypes(subject_ids, trait, out / "dataset_phenotype.tsv")


def cmd_simulate(args):
    out = _outdir(args)
    scenario = SimScenario(
        kind=args.scenario,
        n_subjects=args.n_subjects,
        n_loci=args.n_loci,
        alpha=args.alpha,
        c=args.c if args.c is not None else 0.0,
        trait_kind=args.trait_kind,
        n_replicates=args.replicates,
        seed=args.seed,
    )
    (out / "scenario.json").write_text(scenario.to_json() + "\n")
    if args.scenario == "null":
        _simulate_null(args, out)
    elif args.scenario == "single_locus":
        _simulate_single_locus(args, out)
    else:
        _simulate_multilocus(args, out)
    _simulate_example_dataset(args, out)
    fileio.write_manifest(out / "manifest.json", "simulate", _manifest_config(args))
    return 0


def cmd_rerun(args):
    record = fileio.read_manifest(args.manifest)
    command = record["command"]
    config = dict(record["config"])
    if args.out_dir is not None:
        config["out_dir"] = args.out_dir
    argv = [command]
    for key, value in config.items():
        flag = "--" + key.replace("_", "-")
        argv.extend([flag, str(value)])
    return main(argv)


_HANDLERS = {
    "impute": cmd_impute,
    "scan": cmd_scan,
    "map": cmd_map,
    "ald": cmd_ald,
    "simulate": cmd_simulate,
    "rerun": cmd_rerun,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    log.debug("kernel backend: %s", kernels.active_backend())
    try:
        return _HANDLERS[args.command](args)
    except (AdmixscanError, OSError, ValueError) as exc:
        json.dump(
            {"error": type(exc).__name__, "message": str(exc)},
            sys.stderr,
        )
        sys.stderr.write("\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
