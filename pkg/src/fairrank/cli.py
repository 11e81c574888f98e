"""Command-line interface.

Subcommands: ``solve`` an instance into a ranking policy, ``sample``
rankings from a saved policy, ``gen-constraints`` for building constraint
bundles, ``gen-data`` for synthetic item tables, and ``experiment`` for the
full grid with CSV and figures.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import numpy as np

from . import lp
from .constraints import (
    ConstraintBundle,
    UncertainUtilityModel,
    auto_sigma,
    build_C_gaussian,
    preset_group_bounds,
)
from .experiment import (
    ExperimentConfig,
    gen_synthetic,
    load_items_csv,
    run_grid,
    save_items_csv,
)
from .model import load_instance
from .pipeline import (
    load_policy,
    pad_instance,
    run_main_algorithm,
    sample_many,
    save_policy,
)


@click.group()
def main():
    """Sample group-fair rankings from individually-fair distributions."""


@main.command()
@click.option("--instance", "instance_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--dump-lp", "lp_path", type=click.Path(), default=None,
              help="Also write the solved program in LP interchange format.")
def solve(instance_path, out_path, lp_path):
    """Compute the fair ranking policy for an instance file."""
    instance = load_instance(instance_path)
    if lp_path:
        problem = lp.build_combined_program(pad_instance(instance))
        Path(lp_path).write_text(lp.to_lp_text(problem))
    try:
        policy = run_main_algorithm(instance)
    except lp.InfeasibleProgramError as exc:
        raise click.ClickException(f"instance is infeasible: {exc}") from exc
    save_policy(policy, instance, out_path)
    click.echo(
        f"policy with {policy.decomposition_terms} rankings written to {out_path}"
    )


@main.command()
@click.option("--policy", "policy_path", required=True, type=click.Path(exists=True))
@click.option("--seed", required=True, type=int)
@click.option("--count", default=1, type=int, show_default=True)
def sample(policy_path, seed, count):
    """Draw rankings; one CSV line per draw, item ids in position order."""
    policy = load_policy(policy_path)
    ids = json.loads(Path(policy_path).read_text())["item_ids"]
    for R in sample_many(policy, seed, count):
        line = [str(ids[R.item_at(j)]) for j in range(R.entries.shape[1])]
        click.echo(",".join(line))


@main.command("gen-constraints")
@click.option("--items", "items_path", required=True, type=click.Path(exists=True))
@click.option("--n", required=True, type=int)
@click.option("--k", required=True, type=int)
@click.option("--preset", default="phi-upper",
              type=click.Choice(["equal", "proportional", "phi-upper"]),
              show_default=True)
@click.option("--phi", default=None, type=float)
@click.option("--gamma", default=1.0, type=float, show_default=True)
@click.option("--trials", default=20000, type=int, show_default=True)
@click.option("--seed", required=True, type=int)
@click.option("--sigma", default=None, type=float,
              help="Uncertainty scale; defaults to the data-driven value.")
@click.option("--out", "out_path", required=True, type=click.Path())
def gen_constraints(items_path, n, k, preset, phi, gamma, trials, seed, sigma, out_path):
    """Build a constraint bundle (L, U, C, A) from an item table."""
    table = load_items_csv(items_path)
    if n % k:
        raise click.UsageError("k must divide n")
    blocks = [list(range(j * k, (j + 1) * k)) for j in range(n // k)]
    groups = table.groups()
    L, U = preset_group_bounds(preset, blocks, groups, table.m, phi=phi)
    if sigma is None:
        sigma = auto_sigma(table.utility, k)
    model = UncertainUtilityModel(mu=table.utility, sigma=sigma)
    C = build_C_gaussian(model, blocks, gamma=gamma, trials=trials, seed=seed)
    bundle = ConstraintBundle(
        L=L,
        U=U,
        C=C,
        A=np.ones((table.m, len(blocks))),
        provenance={
            "preset": preset,
            "phi": phi,
            "gamma": gamma,
            "trials": trials,
            "seed": seed,
            "sigma": sigma,
        },
    )
    Path(out_path).write_text(json.dumps(bundle.to_dict(), indent=1))
    click.echo(f"constraint bundle written to {out_path}")


@main.group("gen-data")
def gen_data():
    """Dataset generators."""


@gen_data.command()
@click.option("--m", default=100, type=int, show_default=True)
@click.option("--majority-frac", default=0.6, type=float, show_default=True)
@click.option("--mu-major", default=0.7, type=float, show_default=True)
@click.option("--mu-minor", default=0.35, type=float, show_default=True)
@click.option("--sigma", default=0.2, type=float, show_default=True)
@click.option("--seed", required=True, type=int)
@click.option("--out", "out_path", required=True, type=click.Path())
def synthetic(m, majority_frac, mu_major, mu_minor, sigma, seed, out_path):
    """Two-group synthetic item table."""
    table = gen_synthetic(m, majority_frac, mu_major, mu_minor, sigma, seed)
    save_items_csv(table, out_path)
    click.echo(f"{m} items written to {out_path}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def experiment(config_path, out_dir):
    """Run the (phi, gamma) grid; exit nonzero if any cell failed."""
    config = ExperimentConfig.from_json(config_path)
    summary = run_grid(config, out_dir)
    click.echo(f"results: {summary['csv']} ({summary['failures']} failed cells)")
    if summary["failures"]:
        sys.exit(1)


if __name__ == "__main__":
    main()
