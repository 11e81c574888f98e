"""Closed-form lower bounds on the pipeline's utility ratio.

The sampled policy's expected utility is guaranteed to be at least an
``alpha`` fraction of the constrained optimum.  Three closed forms are
provided: the general per-block minimum, the equal-block-size form, and a
sharper form when utilities lie within a (1 + delta) multiplicative range.
"""

from __future__ import annotations

import numpy as np


def chebyshev_order_gap(x, y) -> float:
    """z * sum(x_i y_i) - sum(x) * sum(y) for same-sorted x and y.

    Nonnegative whenever x and y are sorted the same way (the order
    inequality underpinning the per-block utility argument).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    z = x.shape[0]
    return float(z * (x * y).sum() - x.sum() * y.sum())


def alpha_bound_blocks(v, blocks, n_real=None) -> float:
    """min over blocks of (sum of the block's discounts) / (size * first).

    Blocks made purely of padding positions (at or beyond ``n_real``) carry
    no reportable utility and are skipped, as are blocks whose leading
    discount is zero (they cannot contribute utility at all).
    """
    v = np.asarray(v, dtype=float)
    best = 1.0
    for b in blocks:
        first = min(b)
        if n_real is not None and first >= n_real:
            continue
        if v[first] <= 0:
            continue
        ratio = v[list(b)].sum() / (len(b) * v[first])
        best = min(best, ratio)
    return best


def alpha_bound_k(v, k: int) -> float:
    """(v_1 + ... + v_k) / (k * v_1): the equal-block-size bound."""
    v = np.asarray(v, dtype=float)
    if k < 1 or k > v.shape[0]:
        raise ValueError(f"k={k} out of range for {v.shape[0]} discounts")
    return float(v[:k].sum() / (k * v[0]))


def alpha_bound_delta(v, k: int, delta: float) -> float:
    """(1 + delta) / (1 + k v_1 delta / (v_1 + ... + v_k)).

    Dominates ``alpha_bound_k`` for every delta >= 0 and tends to 1 as the
    utility range shrinks (delta -> 0).
    """
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    v = np.asarray(v, dtype=float)
    top = v[:k].sum()
    return float((1.0 + delta) / (1.0 + k * v[0] * delta / top))
