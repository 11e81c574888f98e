"""Linear programs over ranking marginals.

Two programs are built here. The individual-fairness program maximizes
rho' D v over marginals D with unit column sums, row sums <= 1, and
per-(item, block) mass bounds C <= sum_{t in B_j} D_it <= A.  The combined
program adds per-(block, group) bounds L <= sum_{i in G_l} sum_{t in B_j}
D_it <= U.  Solving is delegated to HiGHS dual simplex so that optima are
basic (vertex) solutions, which the regression tests rely on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .model import Instance, MarginalD, TOLERANCE


class InfeasibleProgramError(RuntimeError):
    """The program has no feasible marginal.

    Carries any closed-form certificates found (constraint rows that are
    jointly unsatisfiable), so callers can report why fairness bounds clash
    instead of silently relaxing them.
    """

    def __init__(self, message, certificates=()):
        self.certificates = list(certificates)
        if self.certificates:
            message += " [" + "; ".join(self.certificates) + "]"
        super().__init__(message)


class SolverFailure(RuntimeError):
    """The LP solver stopped without a verdict (iteration/numerical limit)."""


@dataclass(frozen=True)
class Row:
    """One two-sided constraint over the flattened D variables."""

    kind: str            # 'col_sum' | 'row_sum' | 'indiv' | 'group'
    key: tuple           # identifying indices, e.g. (i, j) for 'indiv'
    cols: np.ndarray     # variable indices (i * n + t)
    lb: float | None
    ub: float | None


@dataclass(frozen=True)
class LpProblem:
    m: int
    n: int
    c: np.ndarray                      # objective, maximize c.x
    rows: tuple[Row, ...]
    structural_constraints: int        # side count before pruning vacuous rows
    block_sizes: tuple[int, ...]
    group_sizes: tuple[int, ...]
    has_group_rows: bool

    @property
    def n_vars(self) -> int:
        return self.m * self.n


@dataclass(frozen=True)
class LpSolution:
    D: MarginalD
    objective: float
    status: str            # 'optimal' | 'infeasible' | 'numerical-failure'
    is_vertex: bool
    max_violation: float = 0.0


def _objective(instance: Instance) -> np.ndarray:
    c = np.outer(instance.rho, instance.v)
    c[:, instance.n_real:] = 0.0  # padding positions carry no utility
    return c.ravel()


def _base_rows(instance: Instance):
    m, n = instance.m, instance.n
    rows = []
    for t in range(n):
        rows.append(Row("col_sum", (t,), np.arange(m) * n + t, 1.0, 1.0))
    for i in range(m):
        rows.append(Row("row_sum", (i,), i * n + np.arange(n), None, 1.0))
    for j, block in enumerate(instance.blocks):
        bcols = np.array(block, dtype=int)
        cap = min(1.0, float(len(block)))
        for i in range(m):
            lb = float(instance.C[i, j])
            ub = float(instance.A[i, j])
            lb_side = lb if lb > 0 else None
            ub_side = ub if ub < cap else None
            if lb_side is None and ub_side is None:
                continue
            rows.append(Row("indiv", (i, j), i * n + bcols, lb_side, ub_side))
    return rows


def _group_rows(instance: Instance):
    n = instance.n
    rows = []
    for j, block in enumerate(instance.blocks):
        bcols = np.array(block, dtype=int)
        for l, g in enumerate(instance.groups):
            lb = float(instance.L[j, l])
            ub = float(instance.U[j, l])
            vac_ub = min(len(block), len(g.members))
            lb_side = lb if lb > 0 else None
            ub_side = ub if ub < vac_ub else None
            if lb_side is None and ub_side is None:
                continue
            cols = (np.array(g.members, dtype=int)[:, None] * n + bcols[None, :]).ravel()
            rows.append(Row("group", (j, l), cols, lb_side, ub_side))
    return rows


def build_individual_program(instance: Instance) -> LpProblem:
    """Individual-fairness-only program over ranking marginals."""
    m, n, q = instance.m, instance.n, instance.q
    return LpProblem(
        m=m,
        n=n,
        c=_objective(instance),
        rows=tuple(_base_rows(instance)),
        structural_constraints=n + m + 2 * m * q,
        block_sizes=tuple(instance.block_sizes()),
        group_sizes=tuple(len(g.members) for g in instance.groups),
        has_group_rows=False,
    )


def build_combined_program(instance: Instance) -> LpProblem:
    """Combined program: individual bounds plus per-(block, group) bounds."""
    m, n, q, p = instance.m, instance.n, instance.q, instance.p
    rows = _base_rows(instance) + _group_rows(instance)
    return LpProblem(
        m=m,
        n=n,
        c=_objective(instance),
        rows=tuple(rows),
        structural_constraints=n + m + 2 * m * q + 2 * q * p,
        block_sizes=tuple(instance.block_sizes()),
        group_sizes=tuple(len(g.members) for g in instance.groups),
        has_group_rows=True,
    )


def _assemble(problem: LpProblem):
    nv = problem.n_vars
    eq_rows, eq_rhs, ub_rows, ub_rhs = [], [], [], []
    for row in problem.rows:
        data = np.ones(row.cols.size)
        if row.lb is not None and row.ub is not None and row.lb == row.ub:
            eq_rows.append((row.cols, data))
            eq_rhs.append(row.ub)
            continue
        if row.ub is not None:
            ub_rows.append((row.cols, data))
            ub_rhs.append(row.ub)
        if row.lb is not None:
            ub_rows.append((row.cols, -data))
            ub_rhs.append(-row.lb)

    def to_csr(entries):
        indptr = [0]
        indices, values = [], []
        for cols, data in entries:
            indices.append(cols)
            values.append(data)
            indptr.append(indptr[-1] + cols.size)
        if not indices:
            return None
        return sp.csr_matrix(
            (np.concatenate(values), np.concatenate(indices), np.array(indptr)),
            shape=(len(entries), nv),
        )

    return to_csr(eq_rows), np.array(eq_rhs), to_csr(ub_rows), np.array(ub_rhs)


def infeasibility_certificates(problem: LpProblem) -> list[str]:
    """Closed-form reasons the program cannot be feasible, if any."""
    certs = []
    lower_by_block = {}
    lower_by_item = {}
    for row in problem.rows:
        if row.kind == "indiv" and row.lb is not None:
            i, j = row.key
            lower_by_block[j] = lower_by_block.get(j, 0.0) + row.lb
            lower_by_item[i] = lower_by_item.get(i, 0.0) + row.lb
        if row.kind == "group" and row.lb is not None:
            j, l = row.key
            cap = min(problem.block_sizes[j], problem.group_sizes[l])
            if row.lb > cap:
                certs.append(
                    f"group row (block {j+1}, group {l+1}): lower bound "
                    f"{row.lb:g} exceeds capacity {cap}"
                )
    for j, total in lower_by_block.items():
        if total > problem.block_sizes[j] + TOLERANCE:
            certs.append(
                f"individual lower bounds of block {j+1} sum to {total:.6g} "
                f"> block size {problem.block_sizes[j]}"
            )
    for i, total in lower_by_item.items():
        if total > 1 + TOLERANCE:
            certs.append(
                f"individual lower bounds of item {i+1} sum to {total:.6g} > 1"
            )
    # group caps clashing with individual lower bounds: sum of C over the
    # group's rows in a block must fit under U.
    lower_by_cell = {}
    for row in problem.rows:
        if row.kind == "indiv" and row.lb is not None:
            lower_by_cell[row.key] = row.lb
    for row in problem.rows:
        if row.kind == "group" and row.ub is not None:
            j, l = row.key
            member_items = set(int(c) // problem.n for c in row.cols)
            needed = sum(
                lb for (i, jj), lb in lower_by_cell.items()
                if jj == j and i in member_items
            )
            if needed > row.ub + TOLERANCE:
                certs.append(
                    f"group cap (block {j+1}, group {l+1}) = {row.ub:g} but "
                    f"individual lower bounds of its members sum to {needed:.6g}"
                )
    return certs


def solve(problem: LpProblem) -> LpSolution:
    """Solve to a basic (vertex) optimum; never report failures as optimal."""
    A_eq, b_eq, A_ub, b_ub = _assemble(problem)
    res = linprog(
        -problem.c,
        A_ub=A_ub,
        b_ub=b_ub if A_ub is not None else None,
        A_eq=A_eq,
        b_eq=b_eq if A_eq is not None else None,
        bounds=(0, 1),
        method="highs-ds",
        options={
            "primal_feasibility_tolerance": 1e-9,
            "dual_feasibility_tolerance": 1e-9,
        },
    )
    if res.status == 2:
        return LpSolution(
            D=None, objective=float("nan"), status="infeasible", is_vertex=False
        )
    if res.status != 0:
        return LpSolution(
            D=None, objective=float("nan"), status="numerical-failure", is_vertex=False
        )
    x = np.clip(res.x, 0.0, 1.0)
    max_violation = 0.0
    for row in problem.rows:
        val = float(x[row.cols].sum())
        if row.lb is not None:
            max_violation = max(max_violation, row.lb - val)
        if row.ub is not None:
            max_violation = max(max_violation, val - row.ub)
    D = MarginalD(x.reshape(problem.m, problem.n))
    return LpSolution(
        D=D,
        objective=float(problem.c @ x),
        status="optimal",
        is_vertex=True,
        max_violation=max_violation,
    )


def solve_or_raise(problem: LpProblem) -> LpSolution:
    """Like ``solve`` but turns non-optimal statuses into hard errors."""
    sol = solve(problem)
    if sol.status == "infeasible":
        raise InfeasibleProgramError(
            "fairness constraints admit no distribution over rankings",
            infeasibility_certificates(problem),
        )
    if sol.status != "optimal":
        raise SolverFailure("LP solver failed before reaching an optimum")
    return sol


def to_lp_text(problem: LpProblem) -> str:
    """Render the program in CPLEX LP interchange format for external checks."""
    n = problem.n

    def var(idx: int) -> str:
        return f"d_{idx // n + 1}_{idx % n + 1}"

    lines = ["Maximize", " obj:"]
    terms = [
        f" {'+' if coef >= 0 else '-'} {abs(coef):.12g} {var(k)}"
        for k, coef in enumerate(problem.c)
        if coef != 0
    ]
    lines.extend("  " + t for t in terms)
    lines.append("Subject To")
    for r, row in enumerate(problem.rows):
        expr = " + ".join(var(int(k)) for k in row.cols)
        name = f"{row.kind}_{'_'.join(str(int(k) + 1) for k in row.key)}"
        if row.lb is not None and row.ub is not None and row.lb == row.ub:
            lines.append(f" {name}: {expr} = {row.ub:.12g}")
            continue
        if row.ub is not None:
            lines.append(f" {name}_ub: {expr} <= {row.ub:.12g}")
        if row.lb is not None:
            lines.append(f" {name}_lb: {expr} >= {row.lb:.12g}")
    lines.append("Bounds")
    for k in range(problem.n_vars):
        lines.append(f" 0 <= {var(k)} <= 1")
    lines.append("End")
    return "\n".join(lines) + "\n"
