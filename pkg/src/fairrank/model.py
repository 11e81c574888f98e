"""Domain types, validation, and instance file I/O.

Conventions used throughout the package:

* items and positions are 0-indexed internally, 1-indexed in files;
* items are stored sorted by nonincreasing utility, ties broken by original
  id, with the original ids retained in ``Instance.item_ids``;
* all marginal-sum invariants are checked against the global ``TOLERANCE``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

# Absolute tolerance for marginal-sum invariants.  LP solvers return
# approximately feasible points, so exact sums cannot be demanded.
TOLERANCE = 1e-8


def set_tolerance(value: float) -> None:
    """Adjust the global numeric tolerance (rarely needed)."""
    global TOLERANCE
    TOLERANCE = float(value)


class ValidationError(ValueError):
    """A domain object failed one or more structural invariants."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations) or "invalid object")


class ParseError(ValueError):
    """An instance file could not be parsed."""


def _frozen(a, dtype=float) -> np.ndarray:
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class Group:
    """A protected set of items.  ``members`` holds internal item indices."""

    gid: str
    members: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "members", tuple(sorted(set(self.members))))

    @property
    def member_set(self) -> frozenset:
        return frozenset(self.members)


@dataclass(frozen=True, eq=False)
class Instance:
    """A fair-ranking problem instance.

    Fields follow the problem data: ``m`` items with utilities ``rho``
    (nonincreasing), ``n`` positions with discounts ``v`` (nonincreasing),
    disjoint position ``blocks`` covering all positions, a laminar family of
    item ``groups``, per-(block, group) integer bounds ``L``/``U`` and
    per-(item, block) probability bounds ``C``/``A``.

    ``n_real`` marks how many positions carry reportable utility; positions
    at index >= n_real are padding added by the pipeline and never
    contribute to reported utility or objective coefficients.
    """

    m: int
    n: int
    rho: np.ndarray
    v: np.ndarray
    blocks: tuple[tuple[int, ...], ...]
    groups: tuple[Group, ...]
    L: np.ndarray
    U: np.ndarray
    C: np.ndarray
    A: np.ndarray
    item_ids: tuple = None
    n_real: int = None

    def __post_init__(self):
        object.__setattr__(self, "m", int(self.m))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "rho", _frozen(self.rho))
        object.__setattr__(self, "v", _frozen(self.v))
        object.__setattr__(
            self, "blocks", tuple(tuple(int(t) for t in b) for b in self.blocks)
        )
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "L", _frozen(self.L, dtype=int))
        object.__setattr__(self, "U", _frozen(self.U, dtype=int))
        object.__setattr__(self, "C", _frozen(self.C))
        object.__setattr__(self, "A", _frozen(self.A))
        if self.item_ids is None:
            object.__setattr__(self, "item_ids", tuple(range(1, self.m + 1)))
        else:
            object.__setattr__(self, "item_ids", tuple(self.item_ids))
        if self.n_real is None:
            object.__setattr__(self, "n_real", self.n)

    @property
    def q(self) -> int:
        return len(self.blocks)

    @property
    def p(self) -> int:
        return len(self.groups)

    def block_sizes(self) -> np.ndarray:
        return np.array([len(b) for b in self.blocks], dtype=int)

    def real_blocks(self) -> tuple[tuple[int, ...], ...]:
        """Blocks made only of real (non-padding) positions."""
        return tuple(b for b in self.blocks if all(t < self.n_real for t in b))

    def fingerprint(self) -> str:
        payload = {
            "m": self.m,
            "n": self.n,
            "n_real": self.n_real,
            "rho": self.rho.tolist(),
            "v": self.v.tolist(),
            "blocks": [list(b) for b in self.blocks],
            "groups": [[g.gid, list(g.members)] for g in self.groups],
            "L": self.L.tolist(),
            "U": self.U.tolist(),
            "C": self.C.tolist(),
            "A": self.A.tolist(),
        }
        blob = json.dumps(payload, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def validate(instance: Instance) -> list[str]:
    """Check every structural invariant; return a list of violations.

    The list is empty iff the instance is valid.  This never raises: it is
    the reporting half of validation, used both by loading and by tests that
    deliberately construct broken instances.
    """
    inst = instance
    out = []
    if inst.n > inst.m:
        out.append(f"n={inst.n} exceeds m={inst.m}")
    if inst.rho.shape != (inst.m,):
        out.append(f"rho has shape {inst.rho.shape}, expected ({inst.m},)")
    elif np.any(inst.rho < 0):
        bad = int(np.argmax(inst.rho < 0))
        out.append(f"rho[{bad}] is negative")
    elif np.any(np.diff(inst.rho) > 1e-12):
        out.append("rho is not sorted nonincreasing (use build_instance)")
    if inst.v.shape != (inst.n,):
        out.append(f"v has shape {inst.v.shape}, expected ({inst.n},)")
    else:
        if np.any(inst.v < 0):
            out.append("v has negative entries")
        if np.any(np.diff(inst.v) > 1e-12):
            j = int(np.argmax(np.diff(inst.v) > 1e-12))
            out.append(f"v not nonincreasing at positions {j+1},{j+2}")

    seen = set()
    first_pos = -1
    for j, b in enumerate(inst.blocks):
        if not b:
            out.append(f"block {j+1} is empty")
            continue
        if list(b) != sorted(b):
            out.append(f"block {j+1} positions are not sorted")
        if seen & set(b):
            out.append(f"block {j+1} overlaps an earlier block")
        seen |= set(b)
        if b[0] < first_pos:
            out.append(f"block {j+1} starts before block {j}")
        first_pos = b[0]
    if inst.n <= inst.m and seen != set(range(inst.n)):
        out.append("blocks do not partition the position set")

    gids = [g.gid for g in inst.groups]
    if len(set(gids)) != len(gids):
        out.append("duplicate group ids")
    for g in inst.groups:
        if any(i < 0 or i >= inst.m for i in g.members):
            out.append(f"group {g.gid} has out-of-range members")
    for a in range(len(inst.groups)):
        for b in range(a + 1, len(inst.groups)):
            ga, gb = inst.groups[a].member_set, inst.groups[b].member_set
            if ga & gb and not (ga <= gb or gb <= ga):
                out.append(
                    f"groups {inst.groups[a].gid},{inst.groups[b].gid} "
                    "overlap without nesting (family is not laminar)"
                )

    q, p = len(inst.blocks), len(inst.groups)
    if inst.L.shape != (q, p) or inst.U.shape != (q, p):
        out.append(f"L/U must have shape ({q},{p})")
    else:
        bad = np.argwhere(inst.L > inst.U)
        for j, l in bad:
            out.append(f"L[{j+1},{l+1}]={inst.L[j, l]} exceeds U={inst.U[j, l]}")
        if np.any(inst.L < 0):
            out.append("L has negative entries")
    if inst.C.shape != (inst.m, q) or inst.A.shape != (inst.m, q):
        out.append(f"C/A must have shape ({inst.m},{q})")
    else:
        if np.any(inst.C < -1e-12):
            out.append("C has negative entries")
        if np.any(inst.A > 1 + 1e-12):
            out.append("A has entries above 1")
        bad = np.argwhere(inst.C > inst.A + 1e-12)
        for i, j in bad[:5]:
            out.append(f"C[{i+1},{j+1}]={inst.C[i, j]:.6g} exceeds A={inst.A[i, j]:.6g}")
    if not (0 < inst.n_real <= inst.n):
        out.append(f"n_real={inst.n_real} out of range")
    return out


def build_instance(
    rho,
    v,
    blocks,
    groups,
    L,
    U,
    C,
    A,
    item_ids=None,
    n_real=None,
) -> Instance:
    """Assemble and validate an Instance, sorting items by utility.

    ``groups`` is a sequence of (gid, member indices) pairs or ``Group``
    objects referring to the order the items are passed in.  Rows of ``C``
    and ``A`` use the same order; everything is remapped to the internal
    sorted order.  Raises ``ValidationError`` if any invariant fails.
    """
    rho = np.asarray(rho, dtype=float)
    m = rho.shape[0]
    order = np.lexsort((np.arange(m), -rho))
    new_index = np.empty(m, dtype=int)
    new_index[order] = np.arange(m)

    if item_ids is None:
        item_ids = tuple(range(1, m + 1))
    item_ids = tuple(item_ids[i] for i in order)

    mapped_groups = []
    for g in groups:
        if isinstance(g, Group):
            gid, members = g.gid, g.members
        else:
            gid, members = g
        mapped_groups.append(Group(str(gid), tuple(int(new_index[i]) for i in members)))

    C = np.asarray(C, dtype=float).reshape(m, -1)[order]
    A = np.asarray(A, dtype=float).reshape(m, -1)[order]

    inst = Instance(
        m=m,
        n=len(np.asarray(v, dtype=float)),
        rho=rho[order],
        v=v,
        blocks=blocks,
        groups=mapped_groups,
        L=L,
        U=U,
        C=C,
        A=A,
        item_ids=item_ids,
        n_real=n_real,
    )
    violations = validate(inst)
    if violations:
        raise ValidationError(violations)
    return inst


# ---------------------------------------------------------------------------
# matrices over (item, position) and (item, block)


@dataclass(frozen=True, eq=False)
class RankingMatrix:
    """0/1 assignment of items to positions: unit column sums, row sums <= 1."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries)
        if not np.all((e == 0) | (e == 1)):
            raise ValidationError(["ranking entries must be 0/1"])
        e = e.astype(np.int8)
        if not np.all(e.sum(axis=0) == 1):
            raise ValidationError(["some position has no unique item"])
        if np.any(e.sum(axis=1) > 1):
            raise ValidationError(["some item is placed at several positions"])
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def shape(self):
        return self.entries.shape

    def item_at(self, position: int) -> int:
        return int(np.argmax(self.entries[:, position]))

    def position_of(self, item: int) -> int | None:
        row = self.entries[item]
        return int(np.argmax(row)) if row.any() else None


@dataclass(frozen=True, eq=False)
class Matching:
    """0/1 assignment of items to blocks: column j sums to the block size."""

    entries: np.ndarray
    block_sizes: tuple[int, ...]

    def __post_init__(self):
        e = np.asarray(self.entries)
        if not np.all((e == 0) | (e == 1)):
            raise ValidationError(["matching entries must be 0/1"])
        e = e.astype(np.int8)
        sizes = tuple(int(s) for s in self.block_sizes)
        if np.any(e.sum(axis=1) > 1):
            raise ValidationError(["some item is matched to several blocks"])
        if not np.all(e.sum(axis=0) == np.array(sizes)):
            raise ValidationError(["block occupancy does not match block sizes"])
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)
        object.__setattr__(self, "block_sizes", sizes)

    def items_in_block(self, j: int) -> list[int]:
        return [int(i) for i in np.flatnonzero(self.entries[:, j])]


@dataclass(frozen=True, eq=False)
class MarginalD:
    """Fractional item-position marginals: unit column sums, row sums <= 1."""

    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        tol = TOLERANCE
        if np.any(e < -tol) or np.any(e > 1 + tol):
            raise ValidationError(["marginal entries outside [0,1]"])
        if np.any(np.abs(e.sum(axis=0) - 1) > max(tol, 50 * np.finfo(float).eps * e.shape[0])):
            j = int(np.argmax(np.abs(e.sum(axis=0) - 1)))
            raise ValidationError([f"column {j+1} sums to {e.sum(axis=0)[j]:.12g}, not 1"])
        if np.any(e.sum(axis=1) > 1 + tol * max(1, e.shape[1])):
            raise ValidationError(["some row sums above 1"])
        e = e.copy()
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)

    @property
    def shape(self):
        return self.entries.shape


@dataclass(frozen=True, eq=False)
class MatchingMarginal:
    """Fractional item-block marginals: column j sums to the block size."""

    entries: np.ndarray
    block_sizes: tuple[int, ...]

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        sizes = tuple(int(s) for s in self.block_sizes)
        tol = TOLERANCE * max(1, e.shape[0])
        if np.any(e < -TOLERANCE) or np.any(e > 1 + TOLERANCE):
            raise ValidationError(["marginal entries outside [0,1]"])
        if np.any(np.abs(e.sum(axis=0) - np.array(sizes, dtype=float)) > tol):
            raise ValidationError(["block mass does not match block sizes"])
        if np.any(e.sum(axis=1) > 1 + tol):
            raise ValidationError(["some row sums above 1"])
        e = e.copy()
        e.setflags(write=False)
        object.__setattr__(self, "entries", e)


@dataclass(frozen=True, eq=False)
class Policy:
    """A convex combination of rankings or matchings: the samplable output."""

    support: tuple

    def __post_init__(self):
        support = tuple((float(w), obj) for w, obj in self.support)
        if not support:
            raise ValidationError(["policy support is empty"])
        weights = np.array([w for w, _ in support])
        if np.any(weights <= 0):
            raise ValidationError(["policy weights must be positive"])
        if abs(weights.sum() - 1.0) > 1e-9:
            raise ValidationError([f"policy weights sum to {weights.sum():.12g}"])
        object.__setattr__(self, "support", support)

    def __len__(self):
        return len(self.support)

    def weights(self) -> np.ndarray:
        return np.array([w for w, _ in self.support])

    def mean_entries(self) -> np.ndarray:
        """Weighted average of the support objects' entry matrices."""
        acc = np.zeros(self.support[0][1].entries.shape, dtype=float)
        for w, obj in self.support:
            acc += w * obj.entries
        return acc


def utility(R: RankingMatrix, rho, v) -> float:
    """Utility of a ranking: sum of rho_i * v_j over placed (i, j) pairs."""
    rho = np.asarray(rho, dtype=float)
    v = np.asarray(v, dtype=float)
    e = R.entries
    if e.shape != (rho.shape[0], v.shape[0]):
        raise ValueError(
            f"dimension mismatch: ranking {e.shape}, rho {rho.shape}, v {v.shape}"
        )
    return float(rho @ e @ v)


# ---------------------------------------------------------------------------
# instance file I/O (positions and items are 1-indexed in files)

_REQUIRED_FIELDS = ("m", "n", "rho", "v", "blocks", "groups", "L", "U", "C", "A")


def load_instance(path) -> Instance:
    """Load and validate an instance from its JSON file format."""
    text = Path(path).read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    missing = [f for f in _REQUIRED_FIELDS if f not in raw]
    if missing:
        raise ParseError(f"{path}: missing field(s) {', '.join(missing)}")
    try:
        groups = [
            (g["id"], [int(i) - 1 for i in g["members"]]) for g in raw["groups"]
        ]
        blocks = [[int(t) - 1 for t in b] for b in raw["blocks"]]
        return build_instance(
            rho=raw["rho"],
            v=raw["v"],
            blocks=blocks,
            groups=groups,
            L=raw["L"],
            U=raw["U"],
            C=raw["C"],
            A=raw["A"],
        )
    except ValidationError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"{path}: malformed instance data: {exc}") from exc


def save_instance(instance: Instance, path) -> None:
    """Write an instance back to the JSON file format, in original item order."""
    ids = instance.item_ids
    if sorted(ids) == list(range(1, instance.m + 1)):
        order = np.argsort(np.array(ids))
    else:
        order = np.arange(instance.m)
    back = np.empty(instance.m, dtype=int)
    back[order] = np.arange(instance.m)
    payload = {
        "m": instance.m,
        "n": instance.n,
        "rho": instance.rho[order].tolist(),
        "v": instance.v.tolist(),
        "blocks": [[t + 1 for t in b] for b in instance.blocks],
        "groups": [
            {"id": g.gid, "members": sorted(int(back[i]) + 1 for i in g.members)}
            for g in instance.groups
        ],
        "L": instance.L.tolist(),
        "U": instance.U.tolist(),
        "C": instance.C[order].tolist(),
        "A": instance.A[order].tolist(),
    }
    Path(path).write_text(json.dumps(payload, indent=1))
