"""Evaluation metrics for ranking policies.

Three headline numbers, each in [0, 1]: the probability a sampled ranking
breaks any group bound, the average relative shortfall of block-membership
probabilities against their lower bounds, and expected utility normalized
by the unconstrained optimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import Instance
from .pipeline import RankingPolicy, project_g


@dataclass(frozen=True)
class MetricsReport:
    g_violation: float
    i_violation: float
    utility_norm: float
    expected_utility: float
    u_max: float
    g_breakdown: dict = field(default_factory=dict)   # (block, group gid) -> prob
    i_breakdown: np.ndarray | None = None             # per (item, block) shortfall


def _ranking_group_counts(R_entries, instance):
    """(q, p) group-member counts per block for one ranking."""
    q, p = instance.q, instance.p
    out = np.zeros((q, p), dtype=int)
    for j, block in enumerate(instance.blocks):
        cols = list(block)
        for l, g in enumerate(instance.groups):
            out[j, l] = int(R_entries[list(g.members)][:, cols].sum())
    return out


def ranking_is_group_fair(R_entries, instance) -> bool:
    counts = _ranking_group_counts(R_entries, instance)
    return bool(np.all(counts >= instance.L) and np.all(counts <= instance.U))


def unconstrained_optimum(instance: Instance) -> float:
    """Utility of the best unconstrained ranking (sorted assignment)."""
    v_real = instance.v[: instance.n_real]
    return float(instance.rho[: v_real.shape[0]] @ v_real)


def compute_metrics(
    policy: RankingPolicy,
    instance: Instance,
    g_mode: str = "exact",
    samples: int = 10000,
    seed: int = 0,
) -> MetricsReport:
    """Evaluate a policy exactly over its support.

    ``g_mode='sampled'`` estimates the group-violation probability from
    draws instead of decomposition weights, for cross-checking.
    """
    support = policy.policy.support
    weights = policy.policy.weights()

    violates = np.array(
        [0.0 if ranking_is_group_fair(R.entries, instance) else 1.0 for _, R in support]
    )
    if g_mode == "exact":
        g_violation = float(weights @ violates)
    elif g_mode == "sampled":
        rng = np.random.default_rng(seed)
        idx = rng.choice(len(weights), size=samples, p=weights / weights.sum())
        g_violation = float(violates[idx].mean())
    else:
        raise ValueError(f"unknown g_mode {g_mode!r}")

    g_breakdown = {}
    for j in range(instance.q):
        for l, g in enumerate(instance.groups):
            prob = 0.0
            for w, R in support:
                c = int(R.entries[list(g.members)][:, list(instance.blocks[j])].sum())
                if not (instance.L[j, l] <= c <= instance.U[j, l]):
                    prob += w
            g_breakdown[(j, g.gid)] = prob

    marginal = np.zeros((instance.m, instance.n))
    for w, R in support:
        marginal += w * R.entries[:, : instance.n]
    P = project_g(marginal, instance.blocks)
    with np.errstate(divide="ignore", invalid="ignore"):
        shortfall = np.where(instance.C > 0, np.maximum(1.0 - P / instance.C, 0.0), 0.0)
    i_violation = float(shortfall.mean())

    expected = policy.expected_utility(instance)
    u_max = unconstrained_optimum(instance)
    return MetricsReport(
        g_violation=g_violation,
        i_violation=i_violation,
        utility_norm=expected / u_max if u_max > 0 else 0.0,
        expected_utility=expected,
        u_max=u_max,
        g_breakdown=g_breakdown,
        i_breakdown=shortfall,
    )


CSV_HEADER = (
    "dataset,algorithm,phi,gamma,g_violation,i_violation,utility_norm,"
    "runtime_ms,T_terms,status"
)


def metrics_csv_row(
    dataset: str,
    algorithm: str,
    phi: float,
    gamma: float,
    report: MetricsReport | None,
    runtime_ms: float,
    terms: int,
    status: str = "ok",
) -> str:
    if report is None:
        body = ",,"
    else:
        body = (
            f"{report.g_violation:.6f},{report.i_violation:.6f},"
            f"{report.utility_norm:.6f}"
        )
    return (
        f"{dataset},{algorithm},{phi:g},{gamma:g},{body},"
        f"{runtime_ms:.1f},{terms},{status}"
    )
