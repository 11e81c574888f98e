"""Reference rankers the pipeline is evaluated against.

Two deterministic baselines (utility-greedy with and without group bounds)
and two randomized ones that decompose an LP marginal with the classical
Birkhoff-von Neumann procedure, so their support rankings satisfy group
bounds only in aggregate.
"""

from __future__ import annotations

import numpy as np

from . import lp
from .flows import birkhoff_decompose
from .model import Instance, Policy, RankingMatrix
from .pipeline import RankingPolicy, pad_instance, strip_padding


class GreedyDeadEnd(RuntimeError):
    """The greedy ranker ran out of eligible items mid-block."""


def _single(entries, instance, provenance) -> RankingPolicy:
    return RankingPolicy(
        policy=Policy(((1.0, RankingMatrix(entries)),)),
        provenance=provenance,
        instance_fingerprint=instance.fingerprint(),
        decomposition_terms=1,
    )


def baseline_unconstrained(instance: Instance) -> RankingPolicy:
    """Top-n items by utility, best first; ignores every fairness bound."""
    m, n = instance.m, instance.n
    entries = np.zeros((m, n), dtype=np.int8)
    for pos in range(n):
        entries[pos, pos] = 1  # items are stored sorted by utility
    return _single(entries, instance, "unconstrained")


def baseline_greedy_group_fair(instance: Instance) -> RankingPolicy:
    """Fill positions in order with the best item the group bounds allow.

    At each position the best unplaced item is taken whose placement keeps
    every containing group under its cap and leaves the block's remaining
    lower bounds completable.  Deterministic; group-fair by construction.
    """
    m, n = instance.m, instance.n
    groups = instance.groups
    entries = np.zeros((m, n), dtype=np.int8)
    placed = np.zeros(m, dtype=bool)
    containing = [
        [l for l, g in enumerate(groups) if i in g.member_set] for i in range(m)
    ]
    maximal = [
        l
        for l, g in enumerate(groups)
        if not any(
            g.member_set < groups[other].member_set for other in range(len(groups))
        )
    ]

    for j, block in enumerate(instance.blocks):
        counts = np.zeros(len(groups), dtype=int)
        for slot, pos in enumerate(sorted(block)):
            left_after = len(block) - slot - 1
            chosen = -1
            for i in range(m):  # ascending index == nonincreasing utility
                if placed[i]:
                    continue
                if any(counts[l] + 1 > instance.U[j, l] for l in containing[i]):
                    continue
                trial = counts.copy()
                for l in containing[i]:
                    trial[l] += 1
                deficits = np.maximum(instance.L[j] - trial, 0)
                avail = np.array(
                    [
                        sum(
                            1
                            for t in groups[l].members
                            if not placed[t] and t != i
                        )
                        for l in range(len(groups))
                    ]
                )
                if np.any(deficits > left_after) or np.any(deficits > avail):
                    continue
                if sum(deficits[l] for l in maximal) > left_after:
                    continue
                chosen = i
                break
            if chosen < 0:
                raise GreedyDeadEnd(
                    f"no eligible item for position {pos+1} (block {j+1})"
                )
            placed[chosen] = True
            entries[chosen, pos] = 1
            for l in containing[chosen]:
                counts[l] += 1
        deficits = np.maximum(instance.L[j] - counts, 0)
        if np.any(deficits > 0):
            raise GreedyDeadEnd(f"block {j+1} ended below a group lower bound")
    return _single(entries, instance, "greedy-group-fair")


def _bvn_policy(instance: Instance, program_builder, provenance) -> RankingPolicy:
    padded = pad_instance(instance)
    sol = lp.solve_or_raise(program_builder(padded))
    decomposition = birkhoff_decompose(sol.D)
    support = tuple(
        (w, strip_padding(R, instance.n)) for w, R in decomposition.support
    )
    return RankingPolicy(
        policy=Policy(support),
        provenance=provenance,
        instance_fingerprint=instance.fingerprint(),
        lp_objective=sol.objective,
        decomposition_terms=len(support),
    )


def baseline_bvn_if(instance: Instance) -> RankingPolicy:
    """BvN rounding of the individual-fairness-only marginal."""
    return _bvn_policy(instance, lp.build_individual_program, "bvn-individual")


def baseline_bvn_gf_if(instance: Instance) -> RankingPolicy:
    """BvN rounding of the combined marginal; group bounds hold only in
    aggregate, so individual support rankings may break them."""
    return _bvn_policy(instance, lp.build_combined_program, "bvn-individual-group")
