"""Shared fixtures: reference instances and a random feasible-instance maker."""

from __future__ import annotations

import numpy as np
import pytest

from fairrank import build_instance
from fairrank.model import Instance


def dcg(n: int) -> np.ndarray:
    return 1.0 / np.log2(2 + np.arange(n))


def fractional_vertex_instance() -> Instance:
    """The 4-item regression fixture whose combined program has a unique
    fractional optimum.

    Four items with utilities 1.0 > 0.7 > 0.5 > 0.3 held by original ids
    1, 4, 3, 2; blocks {1,2} and {3}; the pair {1, 2} capped at one member
    in the first block; every item must reach the first block with
    probability 1/2 and item 3 must reach the second with probability 1/2.
    """
    return build_instance(
        rho=[1.0, 0.3, 0.5, 0.7],
        v=dcg(3),
        blocks=[[0, 1], [2]],
        groups=[("G1", [0, 1])],
        L=[[0], [0]],
        U=[[1], [4]],
        C=[[0.5, 0.0], [0.5, 0.0], [0.5, 0.5], [0.5, 0.0]],
        A=np.ones((4, 2)),
    )


def fractional_vertex_optimum_original_order() -> np.ndarray:
    """The unique optimal marginal of the fixture, rows in original id order."""
    return np.array(
        [
            [0.5, 0.0, 0.5, 0.0],
            [0.0, 0.5, 0.0, 0.5],
            [0.0, 0.5, 0.5, 0.0],
            [0.5, 0.0, 0.0, 0.5],
        ]
    )


def to_internal_rows(instance: Instance, original_rows: np.ndarray) -> np.ndarray:
    """Permute a matrix given in original-id row order to internal order."""
    ids = np.array(instance.item_ids, dtype=int)
    return original_rows[ids - 1]


def tightness_instance() -> Instance:
    """Two valuable and two worthless items, only the first position paying,
    every item required in each half with probability exactly one half."""
    return build_instance(
        rho=[1.0, 1.0, 0.0, 0.0],
        v=[1.0, 0.0, 0.0, 0.0],
        blocks=[[0, 1], [2, 3]],
        groups=[],
        L=np.zeros((2, 0), dtype=int),
        U=np.zeros((2, 0), dtype=int),
        C=np.full((4, 2), 0.5),
        A=np.ones((4, 2)),
    )


def random_laminar_groups(rng: np.random.Generator, m: int, depth: int = 3):
    """A random laminar family over a subset of the items, up to ``depth``."""
    groups = []
    counter = [0]

    def split(members, level):
        if level >= depth or len(members) < 2 or rng.random() < 0.3:
            return
        k = int(rng.integers(2, min(3, len(members)) + 1))
        parts = np.array_split(rng.permutation(members), k)
        for part in parts:
            if len(part) == 0:
                continue
            counter[0] += 1
            groups.append((f"g{counter[0]}", [int(x) for x in part]))
            split(list(part), level + 1)

    top = list(rng.choice(m, size=max(2, int(0.8 * m)), replace=False))
    split(top, 0)
    if not groups:
        counter[0] += 1
        groups.append((f"g{counter[0]}", top[: max(1, len(top) // 2)]))
    return groups


def random_ranking_entries(rng, m, n):
    e = np.zeros((m, n), dtype=np.int8)
    items = rng.permutation(m)[:n]
    for pos, item in enumerate(items):
        e[item, pos] = 1
    return e


def random_feasible_instance(rng: np.random.Generator, m_max: int = 30):
    """Instance guaranteed feasible: bounds built around witness rankings.

    Group bounds enclose the per-block group counts of a handful of witness
    permutations; individual lower bounds are a scaled-down copy of the
    witness mixture's block marginal.  The witness mixture itself then
    satisfies everything, so the combined program is nonempty.
    """
    m = int(rng.integers(4, m_max + 1))
    n = int(rng.integers(2, m + 1))
    rho = np.sort(rng.uniform(0.0, 1.0, size=m))[::-1]
    v = dcg(n)

    cuts = sorted(rng.choice(np.arange(1, n), size=min(int(rng.integers(0, 3)), n - 1), replace=False).tolist())
    bounds = [0] + cuts + [n]
    blocks = [list(range(bounds[i], bounds[i + 1])) for i in range(len(bounds) - 1)]
    q = len(blocks)

    groups = random_laminar_groups(rng, m)
    p = len(groups)

    witnesses = [random_ranking_entries(rng, m, n) for _ in range(4)]
    counts = np.zeros((len(witnesses), q, p), dtype=int)
    for w, e in enumerate(witnesses):
        padded_mass = e.copy()
        for j, b in enumerate(blocks):
            for l, (_, members) in enumerate(groups):
                counts[w, j, l] = padded_mass[members][:, b].sum()
    L = np.maximum(counts.min(axis=0) - rng.integers(0, 2, size=(q, p)), 0)
    U = counts.max(axis=0) + rng.integers(0, 2, size=(q, p))

    mixture = np.mean([e.astype(float) for e in witnesses], axis=0)
    P = np.stack([mixture[:, b].sum(axis=1) for b in blocks], axis=1)
    gamma = float(rng.uniform(0.3, 1.0))
    C = gamma * P
    A = np.ones((m, q))

    return build_instance(
        rho=rho, v=v, blocks=blocks, groups=groups, L=L, U=U, C=C, A=A
    )


@pytest.fixture
def regression_instance():
    return fractional_vertex_instance()


@pytest.fixture
def tight_instance():
    return tightness_instance()
