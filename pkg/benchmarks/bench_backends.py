"""Benchmark the numba kernels against the pure-numpy fallback.

Times each hot kernel and a full sampler sweep on a synthetic problem,
once per available backend, and prints a comparison table.

    python3 benchmarks/bench_backends.py --subjects 500 --loci 800 --repeat 5
"""
import argparse
import time

import numpy as np

from admixscan import kernels
from admixscan.hmm import AimPanel, GenotypeMatrix
from admixscan.sampler import (
    HmmHyperparams,
    derive_priors,
    initial_state,
    impute_missing_genotypes,
    sample_ancestry_paths,
    sample_recombination_counts,
    update_allele_freqs,
    update_gamma,
    update_rho,
)


def build_problem(n_subjects, n_loci, seed=0):
    rng = np.random.default_rng(seed)
    panel = AimPanel(
        marker_ids=[f"m{j}" for j in range(n_loci)],
        chrom=np.repeat(np.arange(1, 5), n_loci // 4 + 1)[:n_loci],
        position=np.tile(np.cumsum(rng.uniform(0.01, 0.04, n_loci)), 1),
        p_a0=rng.uniform(0.7, 0.95, n_loci),
        p_b0=rng.uniform(0.05, 0.3, n_loci),
    )
    x = rng.integers(0, 3, size=(n_subjects, n_loci)).astype(np.int8)
    x[rng.random((n_subjects, n_loci)) < 0.05] = -1
    genotypes = GenotypeMatrix(
        x=x, subject_ids=[f"s{i}" for i in range(n_subjects)]
    )
    return panel, genotypes


def bench_kernels(panel, genotypes, repeat):
    hyper = HmmHyperparams(seed=1)
    derived = derive_priors(genotypes, panel, hyper)
    rng = np.random.default_rng(2)
    state = initial_state(genotypes, panel, derived, rng)
    n_sub, n_loc = genotypes.x.shape
    u = rng.random((n_sub, n_loc))
    state.x_imp = kernels.impute_genotypes(
        state.x_imp, derived.missing_mask, state.s, state.p_a, state.p_b, u
    )

    tasks = {
        "ffbs_paths": lambda: kernels.ffbs_paths(
            state.x_imp, state.r, panel.chrom_start, state.p_a, state.p_b,
            state.rho, u,
        ),
        "recombination_counts": lambda: kernels.recombination_counts(
            state.s, panel.chrom_start, state.gamma, state.rho, u
        ),
        "impute_genotypes": lambda: kernels.impute_genotypes(
            state.x_imp, derived.missing_mask, state.s, state.p_a,
            state.p_b, u,
        ),
        "genotype_state_counts": lambda: kernels.genotype_state_counts(
            state.s, state.x_imp
        ),
        "ancestry_count_stats": lambda: kernels.ancestry_count_stats(
            state.s, state.r, panel.chrom_start
        ),
    }
    times = {}
    for name, fn in tasks.items():
        fn()  # warm up (includes jit compilation on the numba backend)
        best = min(_timed(fn) for _ in range(repeat))
        times[name] = best
    return times


def bench_sweep(panel, genotypes, repeat):
    hyper = HmmHyperparams(seed=1)
    derived = derive_priors(genotypes, panel, hyper)
    rng = np.random.default_rng(3)
    state = initial_state(genotypes, panel, derived, rng)
    n_sub = genotypes.n_subjects

    def one_sweep():
        impute_missing_genotypes(state, derived.missing_mask, rng)
        sample_ancestry_paths(state, panel.chrom_start, rng)
        sample_recombination_counts(state, panel.chrom_start, rng)
        update_gamma(state, derived, n_sub, rng)
        update_rho(state, derived, panel.chrom_start, rng)
        update_allele_freqs(state, panel, rng)

    one_sweep()
    return min(_timed(one_sweep) for _ in range(repeat))


def _timed(fn):
    start = time.perf_counter()
    fn()
    return time.perf_counter() - start


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--subjects", type=int, default=500)
    parser.add_argument("--loci", type=int, default=800)
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    panel, genotypes = build_problem(args.subjects, args.loci)
    backends = kernels.available_backends()
    results = {}
    for backend in backends:
        kernels.set_backend(backend)
        results[backend] = bench_kernels(panel, genotypes, args.repeat)
        results[backend]["full_sweep"] = bench_sweep(
            panel, genotypes, args.repeat
        )

    print(
        f"\nproblem: {args.subjects} subjects x {args.loci} loci, "
        f"best of {args.repeat}\n"
    )
    header = f"{'kernel':24s}" + "".join(f"{b:>12s}" for b in backends)
    if len(backends) > 1:
        header += f"{'speedup':>10s}"
    print(header)
    for name in results[backends[0]]:
        row = f"{name:24s}"
        for backend in backends:
            row += f"{results[backend][name] * 1e3:11.2f}m"
        if len(backends) > 1:
            ratio = results["numpy"][name] / results["numba"][name]
            row += f"{ratio:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
