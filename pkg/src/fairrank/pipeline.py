"""The end-to-end sampling pipeline: solve, project, decompose, refine.

Given a feasible instance, the pipeline computes an optimal marginal over
(item, position) placements, projects it to (item, block) mass, decomposes
that into integral group-fair matchings, and refines each matching into a
ranking by sorting the block's items by utility.  The resulting policy is a
convex combination of rankings, every one of which meets the group bounds,
whose mixture meets the individual bounds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import lp
from .bounds import alpha_bound_blocks
from .flows import build_network, decompose_matching
from .model import (
    Instance,
    Matching,
    MatchingMarginal,
    Policy,
    RankingMatrix,
    ValidationError,
    validate,
)


class PipelineError(RuntimeError):
    pass


def pad_instance(instance: Instance) -> Instance:
    """Square the instance: extra positions in one unconstrained block.

    The m - n padding positions form one extra block with vacuous bounds and
    strictly smaller discounts; they absorb unplaced items so that matchings
    assign every item, and they are excluded from utility accounting via
    ``n_real``.
    """
    m, n = instance.m, instance.n
    if n == m:
        return instance
    extra = m - n
    last = instance.v[-1]
    v_pad = np.concatenate([instance.v, last * 0.5 ** np.arange(1, extra + 1)])
    blocks = instance.blocks + (tuple(range(n, m)),)
    p = instance.p
    L = np.vstack([instance.L, np.zeros((1, p), dtype=int)]) if p else np.zeros((instance.q + 1, 0), dtype=int)
    U = np.vstack([instance.U, np.full((1, p), extra, dtype=int)]) if p else np.zeros((instance.q + 1, 0), dtype=int)
    C = np.hstack([instance.C, np.zeros((m, 1))])
    A = np.hstack([instance.A, np.ones((m, 1))])
    return Instance(
        m=m,
        n=m,
        rho=instance.rho,
        v=v_pad,
        blocks=blocks,
        groups=instance.groups,
        L=L,
        U=U,
        C=C,
        A=A,
        item_ids=instance.item_ids,
        n_real=instance.n_real,
    )


def project_g(D, blocks) -> np.ndarray:
    """Collapse position marginals to block marginals: sum within each block."""
    e = np.asarray(D.entries if hasattr(D, "entries") else D, dtype=float)
    out = np.empty((e.shape[0], len(blocks)))
    for j, b in enumerate(blocks):
        out[:, j] = e[:, list(b)].sum(axis=1)
    return out


def refine_f(M: Matching, rho, blocks) -> RankingMatrix:
    """Order each block's matched items by nonincreasing utility.

    Ties are broken by the lower index (the lower original id, for instances
    built the standard way), so refinement is a function and projecting the
    result recovers ``M`` exactly.
    """
    rho = np.asarray(rho, dtype=float)
    n = sum(len(b) for b in blocks)
    entries = np.zeros((M.entries.shape[0], n), dtype=np.int8)
    for j, block in enumerate(blocks):
        members = sorted(M.items_in_block(j), key=lambda i: (-rho[i], i))
        if len(members) != len(block):
            raise PipelineError(f"block {j+1} holds {len(members)} items, needs {len(block)}")
        for pos, item in zip(sorted(block), members):
            entries[item, pos] = 1
    return RankingMatrix(entries)


def strip_padding(R: RankingMatrix, n_real: int) -> RankingMatrix:
    """Drop padding columns; items parked there become unplaced."""
    return RankingMatrix(R.entries[:, :n_real]) if R.entries.shape[1] > n_real else R


@dataclass(frozen=True, eq=False)
class RankingPolicy:
    """A samplable distribution over rankings plus its provenance."""

    policy: Policy                  # over RankingMatrix
    provenance: str
    instance_fingerprint: str
    lp_objective: float = float("nan")
    decomposition_terms: int = 0

    def marginal(self) -> np.ndarray:
        return self.policy.mean_entries()

    def expected_utility(self, instance: Instance) -> float:
        rho, v = instance.rho, instance.v[: instance.n_real]
        total = 0.0
        for w, R in self.policy.support:
            total += w * float(rho @ R.entries[:, : instance.n_real] @ v)
        return total


def _check_outputs(instance, padded, policy, lp_objective):
    """Verify the fairness and utility guarantees on the actual output."""
    for _, R in policy.support:
        for j in range(instance.q):
            for l, g in enumerate(instance.groups):
                members = list(g.members)
                got = int(R.entries[members][:, list(instance.blocks[j])].sum())
                if not (instance.L[j, l] <= got <= instance.U[j, l]):
                    raise PipelineError(
                        f"output ranking breaks group bound ({j+1},{g.gid}): "
                        f"{got} outside [{instance.L[j, l]}, {instance.U[j, l]}]"
                    )
    marg = np.zeros((instance.m, instance.n))
    for w, R in policy.support:
        marg += w * R.entries[:, : instance.n]
    block_mass = project_g(marg, instance.blocks)
    if np.any(block_mass < instance.C - 1e-6) or np.any(block_mass > instance.A + 1e-6):
        raise PipelineError("policy marginal breaks an individual bound beyond 1e-6")

    expected = 0.0
    v = instance.v[: instance.n_real]
    for w, R in policy.support:
        expected += w * float(instance.rho @ R.entries[:, : instance.n_real] @ v)
    bound = alpha_bound_blocks(padded.v, padded.blocks, n_real=padded.n_real)
    if expected < bound * lp_objective - 1e-6 - 1e-9 * abs(lp_objective):
        raise PipelineError(
            f"expected utility {expected:.9g} fell below the guaranteed "
            f"{bound:.6g} fraction of the optimum {lp_objective:.9g}"
        )


def run_main_algorithm(instance: Instance, *, check: bool = True) -> RankingPolicy:
    """Solve-project-decompose-refine; returns the fair ranking policy.

    Raises on invalid instances, infeasible programs, and decomposition
    failures.  With ``check`` (the default), the fairness and utility guarantees
    are verified on the concrete output before returning.
    """
    violations = validate(instance)
    if violations:
        raise ValidationError(violations)
    padded = pad_instance(instance)
    problem = lp.build_combined_program(padded)
    sol = lp.solve_or_raise(problem)
    m_hat = MatchingMarginal(
        project_g(sol.D, padded.blocks), tuple(padded.block_sizes())
    )
    net = build_network(padded)
    result = decompose_matching(m_hat, net)
    support = []
    for w, M in result.policy.support:
        R = strip_padding(refine_f(M, padded.rho, padded.blocks), instance.n)
        support.append((w, R))
    ranking_policy = RankingPolicy(
        policy=Policy(tuple(support)),
        provenance="lp-project-decompose-refine",
        instance_fingerprint=instance.fingerprint(),
        lp_objective=sol.objective,
        decomposition_terms=len(result.policy),
    )
    if check:
        _check_outputs(instance, padded, ranking_policy.policy, sol.objective)
    return ranking_policy


def sample(policy: RankingPolicy, seed) -> RankingMatrix:
    """Draw one ranking; identical seeds give identical draws."""
    rng = np.random.default_rng(seed)
    weights = policy.policy.weights()
    t = int(rng.choice(len(weights), p=weights / weights.sum()))
    return policy.policy.support[t][1]


def sample_many(policy: RankingPolicy, seed, count: int):
    rng = np.random.default_rng(seed)
    weights = policy.policy.weights()
    idx = rng.choice(len(weights), size=count, p=weights / weights.sum())
    return [policy.policy.support[int(t)][1] for t in idx]


# ---------------------------------------------------------------------------
# policy files: {weight, sparse entries} with 1-indexed positions/original ids

def policy_to_dict(rp: RankingPolicy, instance: Instance) -> dict:
    return {
        "provenance": rp.provenance,
        "instance_fingerprint": rp.instance_fingerprint,
        "m": instance.m,
        "n": instance.n,
        "item_ids": list(instance.item_ids),
        "support": [
            {
                "weight": w,
                "entries": [
                    [int(instance.item_ids[i]), int(j) + 1]
                    for i, j in zip(*np.nonzero(R.entries))
                ],
            }
            for w, R in rp.policy.support
        ],
    }


def save_policy(rp: RankingPolicy, instance: Instance, path) -> None:
    Path(path).write_text(json.dumps(policy_to_dict(rp, instance), indent=1))


def load_policy(path) -> RankingPolicy:
    raw = json.loads(Path(path).read_text())
    id_to_row = {int(v): k for k, v in enumerate(raw["item_ids"])}
    support = []
    for term in raw["support"]:
        entries = np.zeros((raw["m"], raw["n"]), dtype=np.int8)
        for item_id, pos in term["entries"]:
            entries[id_to_row[int(item_id)], int(pos) - 1] = 1
        support.append((float(term["weight"]), RankingMatrix(entries)))
    return RankingPolicy(
        policy=Policy(tuple(support)),
        provenance=raw.get("provenance", "file"),
        instance_fingerprint=raw.get("instance_fingerprint", ""),
    )
