"""Constructing fairness-constraint matrices.

Individual lower bounds come from an uncertainty model over utilities: the
probability that an item's true utility ranks it inside each block, scaled
by a relaxation factor gamma.  Group bounds come from representation
presets.  Prefix-style constraints from other formulations are converted to
block form at the cost of a bounded additive slack.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import truncnorm

from .model import Group, RankingMatrix, build_instance

MC_CHUNK = 4096  # trials per RNG substream; fixed so results are
                 # reproducible no matter how chunks are scheduled


@dataclass(frozen=True)
class UncertainUtilityModel:
    """True utilities are mu + noise, independently per item."""

    mu: np.ndarray
    sigma: np.ndarray
    family: str = "normal"        # 'normal' | 'truncated-normal'
    S: float | None = None        # range scale, when utilities are uniform draws

    def __post_init__(self):
        object.__setattr__(self, "mu", np.asarray(self.mu, dtype=float))
        sigma = np.broadcast_to(
            np.asarray(self.sigma, dtype=float), self.mu.shape
        ).copy()
        if np.any(sigma < 0):
            raise ValueError("sigma must be nonnegative")
        object.__setattr__(self, "sigma", sigma)
        if self.family not in ("normal", "truncated-normal"):
            raise ValueError(f"unknown family {self.family!r}")

    @property
    def m(self) -> int:
        return self.mu.shape[0]

    def draw(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """(count, m) utility samples."""
        if self.family == "normal":
            return rng.normal(self.mu, self.sigma, size=(count, self.m))
        out = np.tile(self.mu, (count, 1))
        pos = self.sigma > 0
        if np.any(pos):
            # truncate at +-4 sigma and renormalize; stays sub-gaussian
            draws = truncnorm.rvs(
                -4.0,
                4.0,
                loc=self.mu[pos],
                scale=self.sigma[pos],
                size=(count, int(pos.sum())),
                random_state=rng,
            )
            out[:, pos] = draws
        return out


@dataclass(frozen=True)
class ConstraintBundle:
    L: np.ndarray
    U: np.ndarray
    C: np.ndarray
    A: np.ndarray
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "L": np.asarray(self.L).tolist(),
            "U": np.asarray(self.U).tolist(),
            "C": np.asarray(self.C).tolist(),
            "A": np.asarray(self.A).tolist(),
            "provenance": dict(self.provenance),
        }


def rank_positions(values: np.ndarray) -> np.ndarray:
    """Position of each item when sorted by nonincreasing value.

    Ties go to the lower item index, so results are deterministic even for
    degenerate (sigma = 0) models.  Works on a (trials, m) batch.
    """
    values = np.atleast_2d(values)
    order = np.argsort(-values, axis=1, kind="stable")
    pos = np.empty_like(order)
    rows = np.arange(values.shape[0])[:, None]
    pos[rows, order] = np.arange(values.shape[1])[None, :]
    return pos


def build_C_gaussian(
    model: UncertainUtilityModel,
    blocks,
    gamma: float,
    trials: int = 20000,
    seed=None,
) -> np.ndarray:
    """Monte-Carlo block-membership probabilities, scaled by gamma.

    Per trial, draw all utilities, sort, and count which block each item's
    rank falls into.  Rank mass outside the given blocks (beyond the listed
    positions) is simply not counted, which matches normalizing row sums
    over the full padded block set: they total 1 at gamma = 1.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 0 <= gamma <= 1:
        raise ValueError("gamma must lie in [0, 1]")
    if seed is None:
        raise ValueError("a seed is mandatory for reproducible constraints")
    m = model.m
    q = len(blocks)
    block_of_pos = np.full(m, -1, dtype=int)
    for j, b in enumerate(blocks):
        for t in b:
            block_of_pos[t] = j

    counts = np.zeros((m, q), dtype=np.int64)
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    seqs = seed.spawn(math.ceil(trials / MC_CHUNK))
    left = trials
    for seq in seqs:
        take = min(MC_CHUNK, left)
        left -= take
        rng = np.random.default_rng(seq)
        pos = rank_positions(model.draw(rng, take))
        bid = block_of_pos[pos]  # (take, m)
        for j in range(q):
            counts[:, j] += (bid == j).sum(axis=0)
    return gamma * counts / trials


def auto_sigma(mu, k: int) -> float:
    """Smallest sigma with, on average, at least k/2 other items within it.

    The count for item i is |{i' != i : |mu_i' - mu_i| <= sigma}|; the mean
    over items must reach k/2.  The minimizer is attained at a pairwise
    distance, so it is found exactly by searching the sorted distances.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    mu = np.asarray(mu, dtype=float)
    m = mu.shape[0]
    target = k / 2.0
    diffs = np.abs(mu[:, None] - mu[None, :])
    off = diffs[~np.eye(m, dtype=bool)]

    def mean_count(sig):
        return float((off <= sig + 1e-15).sum()) / m

    if mean_count(0.0) >= target:
        return 0.0
    candidates = np.unique(off)
    lo, hi = 0, candidates.size - 1
    if mean_count(candidates[hi]) < target:
        raise ValueError(f"no sigma reaches an average of {target} neighbors")
    while lo < hi:
        mid = (lo + hi) // 2
        if mean_count(candidates[mid]) >= target:
            hi = mid
        else:
            lo = mid + 1
    return float(candidates[lo])


def preset_group_bounds(kind: str, blocks, groups, m: int, phi: float | None = None):
    """(L, U) for equal / proportional representation or phi-capped bounds."""
    q, p = len(blocks), len(groups)
    sizes = [len(b) for b in blocks]
    gsizes = [len(g.members if isinstance(g, Group) else g[1]) for g in groups]
    L = np.zeros((q, p), dtype=int)
    U = np.zeros((q, p), dtype=int)
    if kind == "equal":
        for j in range(q):
            L[j, :] = sizes[j] // p
            U[j, :] = -(-sizes[j] // p)
    elif kind == "proportional":
        for j in range(q):
            for l in range(p):
                L[j, l] = sizes[j] * gsizes[l] // m
                U[j, l] = -(-(sizes[j] * gsizes[l]) // m)
    elif kind == "phi-upper":
        if phi is None or not (1 <= phi <= p):
            raise ValueError(f"phi must lie in [1, p={p}]")
        for j in range(q):
            U[j, :] = math.ceil(phi * sizes[j] / p)
    else:
        raise ValueError(f"unknown preset {kind!r}")
    for j in range(q):
        for l in range(p):
            if L[j, l] > min(sizes[j], gsizes[l]):
                raise ValueError(
                    f"preset infeasible at block {j+1}, group {l+1}: lower "
                    f"bound {L[j, l]} exceeds min(block, group) size"
                )
        if L[j].sum() > sizes[j]:
            raise ValueError(
                f"preset infeasible at block {j+1}: lower bounds sum to "
                f"{int(L[j].sum())} > block size {sizes[j]}"
            )
    return L, U


# ---------------------------------------------------------------------------
# prefix -> block conversions (two-position blocks)

def _prefix_group_counts(R: RankingMatrix, groups):
    """(n, p) cumulative group counts over ranking prefixes."""
    e = R.entries
    n = e.shape[1]
    out = np.zeros((n, len(groups)), dtype=int)
    for l, g in enumerate(groups):
        members = list(g.members if isinstance(g, Group) else g[1])
        out[:, l] = e[members].sum(axis=0).cumsum()
    return out


def prefix_to_block_group(L_pre, U_pre, R_pre: RankingMatrix, groups):
    """Block bounds (k = 2) pinned to a witness of the prefix constraints.

    Any ranking meeting the returned bounds violates the original prefix
    bounds by at most 1 additively.
    """
    L_pre = np.asarray(L_pre, dtype=int)
    U_pre = np.asarray(U_pre, dtype=int)
    n = R_pre.entries.shape[1]
    if n % 2:
        raise ValueError("prefix conversion needs an even number of positions")
    counts = _prefix_group_counts(R_pre, groups)
    if np.any(counts < L_pre) or np.any(counts > U_pre):
        bad = np.argwhere((counts < L_pre) | (counts > U_pre))[0]
        raise ValueError(
            f"witness ranking breaks prefix bound at position {bad[0]+1}, "
            f"group {bad[1]+1}"
        )
    q = n // 2
    per_block = counts[1::2].copy()
    per_block[1:] -= counts[1::2][:-1]
    return per_block.copy(), per_block.copy()


def prefix_to_block_individual(C_pre, D_pre) -> np.ndarray:
    """Block lower bounds (k = 2) from a witness marginal of prefix bounds.

    Any distribution meeting the returned (C, 1) block bounds violates the
    prefix bounds by at most max(C_pre) additively.
    """
    C_pre = np.asarray(C_pre, dtype=float)
    D = np.asarray(D_pre.entries if hasattr(D_pre, "entries") else D_pre, dtype=float)
    n = D.shape[1]
    if n % 2:
        raise ValueError("prefix conversion needs an even number of positions")
    cum = D.cumsum(axis=1)
    if np.any(cum < C_pre - 1e-9):
        i, j = np.argwhere(cum < C_pre - 1e-9)[0]
        raise ValueError(
            f"witness marginal breaks prefix bound at item {i+1}, position {j+1}"
        )
    return D[:, 0::2] + D[:, 1::2]


# ---------------------------------------------------------------------------
# the uniform-means generative model

def generate_uniform_means_instance(
    m: int,
    n: int,
    k: int,
    S: float,
    sigma_max: float,
    seed,
    trials: int = 20000,
):
    """Instance with uniform-[0, S] mean utilities and Gaussian uncertainty.

    Individual lower bounds are the full (gamma = 1) block-membership
    probabilities, upper bounds are vacuous, and there are no group bounds.
    Returns the instance together with the generating model.
    """
    if n > 0.9 * m:
        raise ValueError("n must stay below 0.9 m for the generative model")
    if n % k:
        raise ValueError("k must divide n")
    root = np.random.SeedSequence(seed)
    mu_seq, c_seq = root.spawn(2)
    rng = np.random.default_rng(mu_seq)
    mu = rng.uniform(0.0, S, size=m)
    model = UncertainUtilityModel(mu=mu, sigma=sigma_max, S=S)
    blocks = [list(range(j * k, (j + 1) * k)) for j in range(n // k)]
    q = len(blocks)
    C = build_C_gaussian(model, blocks, gamma=1.0, trials=trials, seed=c_seq)
    instance = build_instance(
        rho=mu,
        v=1.0 / np.log2(2 + np.arange(n)),
        blocks=blocks,
        groups=[],
        L=np.zeros((q, 0), dtype=int),
        U=np.zeros((q, 0), dtype=int),
        C=C,
        A=np.ones((m, q)),
    )
    return instance, model
