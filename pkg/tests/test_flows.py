"""Network construction, vertex oracle, fair decomposition, and BvN."""

import itertools

import numpy as np
import pytest

from fairrank import build_instance, pad_instance
from fairrank.flows import (
    DecompositionError,
    birkhoff_decompose,
    build_forest,
    build_network,
    decompose_matching,
    vertex_oracle,
)
from fairrank.lp import build_combined_program, solve_or_raise
from fairrank.model import MatchingMarginal
from fairrank.pipeline import project_g

from conftest import (
    dcg,
    fractional_vertex_instance,
    fractional_vertex_optimum_original_order,
    random_feasible_instance,
    to_internal_rows,
)


def _vacuous_instance(m=4, sizes=(2, 2)):
    n = sum(sizes)
    blocks, start = [], 0
    for s in sizes:
        blocks.append(list(range(start, start + s)))
        start += s
    q = len(blocks)
    return build_instance(
        rho=np.linspace(1.0, 0.1, m), v=dcg(n), blocks=blocks, groups=[],
        L=np.zeros((q, 0)), U=np.zeros((q, 0)),
        C=np.zeros((m, q)), A=np.ones((m, q)),
    )


def _all_fair_matchings(instance):
    """Brute force: every 0/1 item-block assignment meeting all bounds."""
    m, q = instance.m, instance.q
    sizes = instance.block_sizes()
    found = []
    for assignment in itertools.product(range(q), repeat=m):
        e = np.zeros((m, q), dtype=np.int8)
        for i, j in enumerate(assignment):
            e[i, j] = 1
        if not np.all(e.sum(axis=0) == sizes):
            continue
        ok = True
        for j in range(q):
            for l, g in enumerate(instance.groups):
                c = e[list(g.members), j].sum()
                if not instance.L[j, l] <= c <= instance.U[j, l]:
                    ok = False
        if ok:
            found.append(e)
    return found


class TestForest:
    def test_nested_chain(self):
        inst = build_instance(
            rho=[0.9, 0.8, 0.7, 0.1], v=dcg(4), blocks=[[0, 1], [2, 3]],
            groups=[("outer", [0, 1, 2]), ("inner", [0, 1])],
            L=np.zeros((2, 2)), U=np.full((2, 2), 4),
            C=np.zeros((4, 2)), A=np.ones((4, 2)),
        )
        forest = build_forest(inst)
        assert forest.parent == (-1, 0)         # inner's parent is outer
        assert forest.minimal_group == (1, 1, 0, -1)

    def test_nested_item_routes_through_chain(self):
        inst = build_instance(
            rho=[0.9, 0.8, 0.7, 0.1], v=dcg(4), blocks=[[0, 1], [2, 3]],
            groups=[("outer", [0, 1, 2]), ("inner", [0, 1])],
            L=np.zeros((2, 2)), U=np.full((2, 2), 4),
            C=np.zeros((4, 2)), A=np.ones((4, 2)),
        )
        net = build_network(inst)
        # item 0's arc for block 0 lands on the inner group node, whose arc
        # leads to the outer node, whose arc leads to the root node
        a_item = net.arcs[net.item_arc[0, 0]]
        a_inner = net.arcs[net.group_arc[(1, 0)]]
        a_outer = net.arcs[net.group_arc[(0, 0)]]
        assert a_item[1] == a_inner[0]
        assert a_inner[1] == a_outer[0]


class TestBuildNetwork:
    def test_requires_padded(self):
        inst = fractional_vertex_instance()
        with pytest.raises(DecompositionError, match="padded"):
            build_network(inst)

    def test_group_arc_bounds_follow_caps(self):
        padded = pad_instance(fractional_vertex_instance())
        net = build_network(padded)
        _, _, lo, up = net.arcs[net.group_arc[(0, 0)]]
        assert (lo, up) == (0, 1)

    def test_vacuous_groups_reduce_to_b_matching(self):
        inst = _vacuous_instance()
        net = build_network(inst)
        assert net.group_arc == {}

    def test_children_bounds_exceeding_parent_detected(self):
        inst = build_instance(
            rho=[0.9, 0.8, 0.7, 0.1], v=dcg(4), blocks=[[0, 1], [2, 3]],
            groups=[("a", [0, 1]), ("b", [2, 3])],
            L=[[2, 2], [0, 0]], U=[[2, 2], [2, 2]],
            C=np.zeros((4, 2)), A=np.ones((4, 2)),
        )
        with pytest.raises(DecompositionError, match="lower bounds sum"):
            build_network(inst)


class TestVertexOracle:
    def test_integral_input_returned_unchanged(self):
        inst = _vacuous_instance()
        net = build_network(inst)
        e = np.zeros((4, 2), dtype=np.int8)
        e[[0, 1], 0] = 1
        e[[2, 3], 1] = 1
        M = vertex_oracle(e.astype(float), net)
        np.testing.assert_array_equal(M.entries, e)

    def test_fixture_marginal_yields_contract_matching(self):
        inst = fractional_vertex_instance()
        padded = pad_instance(inst)
        net = build_network(padded)
        expected = to_internal_rows(inst, fractional_vertex_optimum_original_order())
        x = project_g(expected, padded.blocks)
        M = vertex_oracle(x, net)
        # contract: integral, fractional entries free, integral entries kept,
        # group throughput within the surrounding integers of its mass
        assert set(np.unique(M.entries)) <= {0, 1}
        members = list(padded.groups[0].members)
        s = x[members, 0].sum()
        got = M.entries[members, 0].sum()
        assert np.floor(s - 1e-7) <= got <= np.ceil(s + 1e-7)
        # brute-force check: M is one of the fair matchings consistent with x
        consistent = [
            e for e in _all_fair_matchings(padded)
            if np.all(e[x <= 1e-7] == 0) and np.all(e[x >= 1 - 1e-7] == 1)
        ]
        assert any(np.array_equal(M.entries, e) for e in consistent)

    def test_single_fractional_cycle_picks_a_diagonal(self):
        inst = _vacuous_instance(m=4, sizes=(2, 2))
        net = build_network(inst)
        x = np.array(
            [[1, 0], [0, 1], [0.5, 0.5], [0.5, 0.5]], dtype=float
        )
        M = vertex_oracle(x, net)
        assert M.entries[0, 0] == 1 and M.entries[1, 1] == 1
        # both diagonals satisfy the contract; brute-force both
        assert M.entries[2, 0] + M.entries[3, 0] == 1

    def test_out_of_polytope_reported(self):
        inst = build_instance(
            rho=[0.9, 0.8, 0.7, 0.1], v=dcg(4), blocks=[[0, 1], [2, 3]],
            groups=[("a", [0, 1])], L=[[0], [0]], U=[[1], [2]],
            C=np.zeros((4, 2)), A=np.ones((4, 2)),
        )
        net = build_network(inst)
        bad = np.array([[1, 0], [1, 0], [0, 1], [0, 1]], dtype=float)
        with pytest.raises(DecompositionError):
            vertex_oracle(bad, net)


class TestDecomposeMatching:
    def test_integral_input_single_term(self):
        inst = _vacuous_instance()
        net = build_network(inst)
        e = np.zeros((4, 2), dtype=np.int8)
        e[[0, 3], 0] = 1
        e[[1, 2], 1] = 1
        res = decompose_matching(e.astype(float), net)
        assert len(res.policy) == 1
        assert res.policy.support[0][0] == pytest.approx(1.0)

    def test_fixture_marginal_two_halves(self):
        inst = fractional_vertex_instance()
        padded = pad_instance(inst)
        net = build_network(padded)
        sol = solve_or_raise(build_combined_program(padded))
        x = MatchingMarginal(
            project_g(sol.D, padded.blocks), tuple(padded.block_sizes())
        )
        res = decompose_matching(x, net)
        assert len(res.policy) == 2
        assert sorted(w for w, _ in res.policy.support) == pytest.approx([0.5, 0.5])
        # brute force: the only pair of fair matchings averaging to x
        fair = _all_fair_matchings(padded)
        pairs = [
            (a, b)
            for ai, a in enumerate(fair)
            for b in fair[ai + 1:]
            if np.allclose(0.5 * (a + b), x.entries, atol=1e-8)
        ]
        assert len(pairs) == 1
        got = {tuple(M.entries.ravel()) for _, M in res.policy.support}
        want = {tuple(p.ravel()) for p in pairs[0]}
        assert got == want
        assert res.residual <= 1e-8

    def test_uniform_marginal_reconstructs(self):
        inst = _vacuous_instance(m=4, sizes=(2, 2))
        net = build_network(inst)
        x = np.full((4, 2), 0.5)
        res = decompose_matching(x, net)
        recon = sum(w * M.entries for w, M in res.policy.support)
        np.testing.assert_allclose(recon, x, atol=1e-8)
        assert res.residual <= 1e-8

    def test_random_mixtures_reconstruct_and_stay_fair(self):
        rng = np.random.default_rng(11)
        for _ in range(30):
            inst = random_feasible_instance(rng, m_max=12)
            padded = pad_instance(inst)
            net = build_network(padded)
            sol = solve_or_raise(build_combined_program(padded))
            x = project_g(sol.D, padded.blocks)
            res = decompose_matching(x, net)
            recon = sum(w * M.entries for w, M in res.policy.support)
            np.testing.assert_allclose(recon, x, atol=1e-8)
            m, q, p = padded.m, padded.q, padded.p
            assert len(res.policy) <= m * q + q * p + 1
            for _, M in res.policy.support:
                for j in range(q):
                    for l, g in enumerate(padded.groups):
                        c = int(M.entries[list(g.members), j].sum())
                        assert padded.L[j, l] <= c <= padded.U[j, l]

    def test_iteration_limit_is_enforced(self):
        inst = _vacuous_instance(m=4, sizes=(2, 2))
        net = build_network(inst)
        x = np.full((4, 2), 0.5)
        res = decompose_matching(x, net)
        assert res.iterations <= 4 * 2 + 2 * 1 + 1


class TestBirkhoff:
    def test_permutation_single_term(self):
        P = np.eye(3)
        policy = birkhoff_decompose(P)
        assert len(policy) == 1
        assert policy.support[0][0] == pytest.approx(1.0)

    def test_fixture_unique_two_rankings(self):
        inst = fractional_vertex_instance()
        padded = pad_instance(inst)
        sol = solve_or_raise(build_combined_program(padded))
        policy = birkhoff_decompose(sol.D)
        assert len(policy) == 2
        assert sorted(w for w, _ in policy.support) == pytest.approx([0.5, 0.5])
        pi_a = to_internal_rows(
            inst,
            np.array(
                [[0, 0, 1, 0], [0, 0, 0, 1], [0, 1, 0, 0], [1, 0, 0, 0]], dtype=int
            ),
        )
        pi_b = to_internal_rows(inst, np.eye(4, dtype=int))
        got = {tuple(R.entries.ravel()) for _, R in policy.support}
        assert got == {tuple(pi_a.ravel()), tuple(pi_b.ravel())}
        # the identity-order term packs both protected items into block one
        members = list(padded.groups[0].members)
        assert pi_b[members][:, [0, 1]].sum() == 2 > padded.U[0, 0]

    def test_uniform_three_by_three(self):
        D = np.full((3, 3), 1 / 3)
        policy = birkhoff_decompose(D)
        recon = sum(w * R.entries for w, R in policy.support)
        np.testing.assert_allclose(recon, D, atol=1e-8)
        assert sum(w for w, _ in policy.support) == pytest.approx(1.0)

    def test_not_doubly_stochastic_rejected(self):
        with pytest.raises(DecompositionError, match="doubly stochastic"):
            birkhoff_decompose(np.array([[0.5, 0.4], [0.5, 0.5]]))

    def test_term_bound_on_random_doubly_stochastic(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            m = int(rng.integers(3, 8))
            D = np.full((m, m), 1.0 / m)
            for _ in range(20):  # random doubly stochastic via mixing perms
                perm = np.zeros((m, m))
                perm[np.arange(m), rng.permutation(m)] = 1
                w = rng.uniform(0, 0.3)
                D = (1 - w) * D + w * perm
            policy = birkhoff_decompose(D)
            assert len(policy) <= m * m + 1
            recon = sum(w * R.entries for w, R in policy.support)
            np.testing.assert_allclose(recon, D, atol=1e-8)
