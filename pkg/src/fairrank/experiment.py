"""Synthetic data, experiment grids, and report emission.

A grid run sweeps (phi, gamma) cells over a dataset, runs each configured
algorithm per cell, and appends one CSV row per (cell, algorithm) with the
three fairness/utility metrics.  Scatter figures of the headline trade-offs
are rendered next to the CSV.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import baselines
from .constraints import auto_sigma, build_C_gaussian, preset_group_bounds, UncertainUtilityModel
from .lp import InfeasibleProgramError
from .metrics import CSV_HEADER, compute_metrics, metrics_csv_row
from .model import Instance, build_instance
from .pipeline import run_main_algorithm

ALGORITHMS = {
    "main": run_main_algorithm,
    "unconstrained": baselines.baseline_unconstrained,
    "greedy": baselines.baseline_greedy_group_fair,
    "bvn-if": baselines.baseline_bvn_if,
    "bvn-gf-if": baselines.baseline_bvn_gf_if,
}


@dataclass(frozen=True)
class ItemTable:
    """Items with estimated utilities and (laminar) group labels."""

    ids: tuple
    utility: np.ndarray
    labels: tuple  # per item: tuple of group labels (possibly several, nested)

    def __post_init__(self):
        object.__setattr__(self, "utility", np.asarray(self.utility, dtype=float))

    @property
    def m(self) -> int:
        return len(self.ids)

    def group_names(self) -> list[str]:
        seen = []
        for labs in self.labels:
            for lab in labs:
                if lab not in seen:
                    seen.append(lab)
        return seen

    def groups(self) -> list[tuple[str, list[int]]]:
        return [
            (name, [i for i, labs in enumerate(self.labels) if name in labs])
            for name in self.group_names()
        ]


def gen_synthetic(
    m: int = 100,
    majority_frac: float = 0.6,
    mu_major: float = 0.7,
    mu_minor: float = 0.35,
    sigma: float = 0.2,
    seed=0,
) -> ItemTable:
    """Two-group synthetic items: utilities normal around the group mean,
    clipped to [0, 1]; the first group holds ``majority_frac`` of items."""
    if not 0 < majority_frac < 1:
        raise ValueError("majority_frac must lie strictly between 0 and 1")
    rng = np.random.default_rng(seed)
    n_major = round(m * majority_frac)
    util = np.concatenate(
        [
            rng.normal(mu_major, sigma, size=n_major),
            rng.normal(mu_minor, sigma, size=m - n_major),
        ]
    ).clip(0.0, 1.0)
    labels = tuple(
        ("G1",) if i < n_major else ("G2",) for i in range(m)
    )
    return ItemTable(ids=tuple(range(1, m + 1)), utility=util, labels=labels)


def load_items_csv(path) -> ItemTable:
    """Read an item table: columns id, utility, groups ('|'-separated)."""
    ids, utils, labels = [], [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ids.append(row["id"])
            utils.append(float(row["utility"]))
            labels.append(tuple(x for x in row["groups"].split("|") if x))
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate item ids")
    table = ItemTable(ids=tuple(ids), utility=np.array(utils), labels=tuple(labels))
    # group structure must be laminar for the pipeline's guarantee to hold
    member_sets = {name: frozenset(members) for name, members in table.groups()}
    names = list(member_sets)
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            ga, gb = member_sets[names[a]], member_sets[names[b]]
            if ga & gb and not (ga <= gb or gb <= ga):
                raise ValueError(
                    f"{path}: groups {names[a]!r} and {names[b]!r} overlap "
                    "without nesting; only laminar families are supported"
                )
    return table


def save_items_csv(table: ItemTable, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "utility", "groups"])
        for i in range(table.m):
            writer.writerow(
                [table.ids[i], f"{table.utility[i]:.10g}", "|".join(table.labels[i])]
            )


def subsample_items(table: ItemTable, m: int, n: int, p: int, seed, retries: int = 1000) -> ItemTable:
    """Uniform subset of size m with at least n/p items from every group."""
    if m > table.m:
        raise ValueError(f"cannot draw {m} items from {table.m}")
    quota = -(-n // p)
    names = table.group_names()
    for name, members in table.groups():
        if len(members) < quota and name in names:
            raise ValueError(f"group {name!r} has fewer than {quota} items overall")
    rng = np.random.default_rng(seed)
    for _ in range(retries):
        pick = np.sort(rng.choice(table.m, size=m, replace=False))
        chosen_labels = [table.labels[i] for i in pick]
        ok = all(
            sum(1 for labs in chosen_labels if name in labs) >= quota
            for name in names
        )
        if ok:
            return ItemTable(
                ids=tuple(table.ids[i] for i in pick),
                utility=table.utility[pick],
                labels=tuple(chosen_labels),
            )
    raise ValueError("could not satisfy the per-group quota within retry budget")


def make_cell_instance(
    table: ItemTable,
    n: int,
    k: int,
    phi: float,
    gamma: float,
    trials: int = 20000,
    seed=0,
) -> Instance:
    """Assemble one grid cell's instance from an item table.

    Blocks are consecutive runs of k positions; group caps follow the phi
    preset; individual lower bounds come from the Gaussian-uncertainty model
    with the data-driven sigma, relaxed by gamma.
    """
    if n % k:
        raise ValueError("k must divide n")
    blocks = [list(range(j * k, (j + 1) * k)) for j in range(n // k)]
    groups = table.groups()
    L, U = preset_group_bounds("phi-upper", blocks, groups, table.m, phi=phi)
    sig = auto_sigma(table.utility, k)
    model = UncertainUtilityModel(mu=table.utility, sigma=sig)
    C = build_C_gaussian(model, blocks, gamma=gamma, trials=trials, seed=seed)
    return build_instance(
        rho=table.utility,
        v=1.0 / np.log2(2 + np.arange(n)),
        blocks=blocks,
        groups=groups,
        L=L,
        U=U,
        C=C,
        A=np.ones((table.m, len(blocks))),
        item_ids=table.ids,
    )


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: dict = field(default_factory=lambda: {"kind": "synthetic"})
    n: int = 40
    k: int = 20
    phis: tuple = (1.0, 1.5, 2.0)
    gammas: tuple = (0.0, 0.5, 1.0)
    algorithms: tuple = tuple(ALGORITHMS)
    trials: int = 20000
    seed: int = 1
    draws: int = 1
    workers: int = 1

    def __post_init__(self):
        p = self._p_hint()
        for phi in self.phis:
            if not 1 <= phi <= p:
                raise ValueError(f"phi={phi} outside [1, p={p}]")
        for gamma in self.gammas:
            if not 0 <= gamma <= 1:
                raise ValueError(f"gamma={gamma} outside [0, 1]")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        unknown = set(self.algorithms) - set(ALGORITHMS)
        if unknown:
            raise ValueError(f"unknown algorithms: {sorted(unknown)}")

    def _p_hint(self) -> int:
        return int(self.dataset.get("p", 2))

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        raw = json.loads(Path(path).read_text())
        return cls(
            dataset=raw.get("dataset", {"kind": "synthetic"}),
            n=raw.get("n", 40),
            k=raw.get("k", 20),
            phis=tuple(raw.get("phi", (1.0, 1.5, 2.0))),
            gammas=tuple(raw.get("gamma", (0.0, 0.5, 1.0))),
            algorithms=tuple(raw.get("algorithms", tuple(ALGORITHMS))),
            trials=raw.get("trials", 20000),
            seed=raw.get("seed", 1),
            draws=raw.get("draws", 1),
            workers=raw.get("workers", 1),
        )


def _dataset_table(config: ExperimentConfig, draw: int) -> tuple[str, ItemTable]:
    ds = config.dataset
    kind = ds.get("kind", "synthetic")
    if kind == "synthetic":
        table = gen_synthetic(
            m=ds.get("m", 100),
            majority_frac=ds.get("majority_frac", 0.6),
            mu_major=ds.get("mu_major", 0.7),
            mu_minor=ds.get("mu_minor", 0.35),
            sigma=ds.get("sigma", 0.2),
            seed=config.seed + draw,
        )
        return "synthetic", table
    if kind == "csv":
        table = load_items_csv(ds["path"])
        if "m" in ds:
            table = subsample_items(
                table,
                ds["m"],
                config.n,
                len(table.group_names()),
                seed=config.seed + draw,
            )
        return Path(ds["path"]).stem, table
    raise ValueError(f"unknown dataset kind {kind!r}")


def _run_cell(args):
    config, draw, phi, gamma = args
    name, table = _dataset_table(config, draw)
    instance = make_cell_instance(
        table,
        config.n,
        config.k,
        phi,
        gamma,
        trials=config.trials,
        seed=config.seed * 7919 + draw,
    )
    rows = []
    cell_results = {}
    for alg in config.algorithms:
        t0 = time.perf_counter()
        try:
            policy = ALGORITHMS[alg](instance)
            report = compute_metrics(policy, instance)
            elapsed = (time.perf_counter() - t0) * 1000
            rows.append(
                metrics_csv_row(
                    name, alg, phi, gamma, report, elapsed,
                    policy.decomposition_terms,
                )
            )
            cell_results[alg] = report
        except (InfeasibleProgramError, baselines.GreedyDeadEnd) as exc:
            elapsed = (time.perf_counter() - t0) * 1000
            rows.append(
                metrics_csv_row(
                    name, alg, phi, gamma, None, elapsed, 0, status="infeasible"
                )
            )
            cell_results[alg] = exc
    return (draw, phi, gamma), rows, cell_results


def run_grid(config: ExperimentConfig, out_dir) -> dict:
    """Run every (draw, phi, gamma, algorithm) cell; write CSV and figures.

    Returns a summary dict with per-cell reports and the failure count.
    Results are merged in cell-key order so reruns with the same seeds give
    byte-identical CSV bodies apart from the runtime column.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = [
        (config, draw, phi, gamma)
        for draw in range(config.draws)
        for phi in config.phis
        for gamma in config.gammas
    ]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            raw = list(pool.map(_run_cell, cells))
    else:
        raw = [_run_cell(c) for c in cells]
    raw.sort(key=lambda item: item[0])

    lines = [CSV_HEADER]
    results = {}
    failures = 0
    for key, rows, cell_results in raw:
        lines.extend(rows)
        results[key] = cell_results
        failures += sum(1 for r in cell_results.values() if isinstance(r, Exception))
    (out / "results.csv").write_text("\n".join(lines) + "\n")

    from .plotting import plot_tradeoffs  # deferred: matplotlib is heavy

    plot_tradeoffs(out / "results.csv", out)
    return {"results": results, "failures": failures, "csv": str(out / "results.csv")}
