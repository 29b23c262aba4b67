"""Two-stage association scan over imputed ancestry draws.

Stage 1 fits one locus at a time, averages the Bayes factor over the
retained imputations, and selects loci whose averaged log10 Bayes factor
clears the threshold.  Stage 2 refits every subset of the selected loci
jointly and ranks the subsets.  Both stages are embarrassingly parallel
and reduce deterministically, so results do not depend on worker count.
"""
from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDesignError
from .glm import TraitData, center_ancestries, fit_glm
from .qnm import BfValue, average_bf, bf_for_fit

DEFAULT_DELTA = 2.0
DEFAULT_SUBSET_CAP = 4096


@dataclass
class LocusScan:
    locus_id: str
    index: int
    log10_bf: float
    selected: bool
    n_imputations_used: int
    flag: str | None = None


@dataclass
class SubsetScan:
    indices: tuple
    locus_ids: tuple
    log10_bf: float
    rank: int


@dataclass
class ScanResult:
    stage1: list
    delta: float
    m: int
    stage2: list | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def selected_indices(self):
        return [r.index for r in self.stage1 if r.selected]


def _locus_label(draws, j):
    if draws.marker_ids is not None:
        return str(draws.marker_ids[j])
    return str(j)


def _bf_over_imputations(draws, trait, columns):
    """Averaged Bayes factor for one locus set across all imputations."""
    values = []
    for m in range(draws.m):
        raw = draws.draws[m][:, columns]
        try:
            design = center_ancestries(raw, locus_ids=list(columns))
            fit = fit_glm(trait, design)
        except DegenerateDesignError as exc:
            values.append(BfValue.flagged(str(exc), p=len(columns)))
            continue
        values.append(bf_for_fit(fit, trait.n_subjects))
    return average_bf(values), sum(1 for v in values if v.flag is None)


def _map_tasks(worker, tasks, workers):
    if workers is not None and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(worker, tasks))
    return [worker(t) for t in tasks]


def stage1_scan(draws, trait: TraitData, delta=DEFAULT_DELTA, workers=None) -> ScanResult:
    """Marginal scan: one Bayes factor per locus, averaged over imputations."""
    if draws.n_subjects != trait.n_subjects:
        raise ValueError(
            f"draws cover {draws.n_subjects} subjects, trait has {trait.n_subjects}"
        )

    def scan_one(j):
        avg, n_used = _bf_over_imputations(draws, trait, [j])
        selected = avg.flag is None and avg.log10_bf > delta
        return LocusScan(
            locus_id=_locus_label(draws, j),
            index=j,
            log10_bf=avg.log10_bf,
            selected=selected,
            n_imputations_used=n_used,
            flag=avg.flag,
        )

    stage1 = _map_tasks(scan_one, range(draws.n_loci), workers)
    skipped = [r.locus_id for r in stage1 if r.flag is not None]
    return ScanResult(
        stage1=stage1,
        delta=delta,
        m=draws.m,
        diagnostics={"skipped_loci": skipped},
    )


def _count_subsets(n, max_cardinality):
    return sum(math.comb(n, k) for k in range(1, max_cardinality + 1))


def stage2_joint(stage1_result: ScanResult, draws, trait: TraitData,
                 max_cardinality=None, subset_cap=DEFAULT_SUBSET_CAP,
                 workers=None) -> ScanResult:
    """Joint refits over all subsets of the stage-1 selections, ranked.

    With exactly one selected locus there is nothing to combine and the
    stage-1 entry is passed through unchanged.
    """
    selected = stage1_result.selected_indices
    result = ScanResult(
        stage1=stage1_result.stage1,
        delta=stage1_result.delta,
        m=stage1_result.m,
        diagnostics=dict(stage1_result.diagnostics),
    )
    if not selected:
        result.stage2 = []
        return result
    if len(selected) == 1:
        only = next(r for r in result.stage1 if r.index == selected[0])
        result.stage2 = [
            SubsetScan(
                indices=(only.index,),
                locus_ids=(only.locus_id,),
                log10_bf=only.log10_bf,
                rank=1,
            )
        ]
        return result

    k_max = len(selected) if max_cardinality is None else min(max_cardinality, len(selected))
    n_subsets = _count_subsets(len(selected), k_max)
    if n_subsets > subset_cap:
        raise ValueError(
            f"{n_subsets} candidate subsets exceed the cap of {subset_cap}; "
            "raise delta or lower max_cardinality"
        )
    subsets = [
        combo
        for k in range(1, k_max + 1)
        for combo in itertools.combinations(sorted(selected), k)
    ]

    def scan_subset(combo):
        avg, _ = _bf_over_imputations(draws, trait, list(combo))
        return combo, avg

    scored = _map_tasks(scan_subset, subsets, workers)
    usable = [(combo, avg) for combo, avg in scored if avg.flag is None]
    dropped = [
        {"subset": list(combo), "flag": avg.flag}
        for combo, avg in scored
        if avg.flag is not None
    ]
    usable.sort(key=lambda item: (-item[1].log10_bf, item[0]))
    result.stage2 = [
        SubsetScan(
            indices=combo,
            locus_ids=tuple(_locus_label(draws, j) for j in combo),
            log10_bf=avg.log10_bf,
            rank=rank,
        )
        for rank, (combo, avg) in enumerate(usable, start=1)
    ]
    if dropped:
        result.diagnostics["skipped_subsets"] = dropped
    return result


def reported_subsets(result: ScanResult, delta=None):
    """Subsets above the threshold that beat every subset they overlap.

    A subset is reported when it clears the threshold and no higher-ranked
    subset shares a locus with it: a weak singleton never surfaces if some
    stronger combination containing it exists.  This is the reporting rule
    used to score the multilocus benchmark.
    """
    if result.stage2 is None:
        raise ValueError("run stage 2 before asking for reported subsets")
    delta = result.delta if delta is None else delta
    dominated = set()
    out = []
    for entry in result.stage2:
        if not dominated.intersection(entry.indices) and entry.log10_bf > delta:
            out.append(entry)
        dominated.update(entry.indices)
    return out


def ald_correlation(draws):
    """Locus-by-locus ancestry correlation, pooling subjects over imputations.

    Constant loci get a zero row/column and are listed in the returned
    flags; the diagonal is exactly one.
    """
    m, n_sub, n_loc = draws.draws.shape
    if m * n_sub < 2:
        raise ValueError("need at least two pooled rows to correlate")
    pooled = draws.draws.reshape(m * n_sub, n_loc).astype(np.float64)
    sd = pooled.std(axis=0)
    constant = np.flatnonzero(sd == 0.0)
    safe = pooled.copy()
    if constant.size:
        # give constant columns unit variance noiselessly; zero them after
        safe[0, constant] += 1.0
    corr = np.corrcoef(safe, rowvar=False)
    corr = np.atleast_2d(corr)
    if constant.size:
        corr[constant, :] = 0.0
        corr[:, constant] = 0.0
    np.fill_diagonal(corr, 1.0)
    return corr, list(constant)
