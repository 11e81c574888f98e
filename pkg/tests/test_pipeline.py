"""Padding, projection, refinement, the main algorithm, and sampling."""

import numpy as np
import pytest

from fairrank import (
    build_instance,
    pad_instance,
    project_g,
    refine_f,
    run_main_algorithm,
    sample,
    sample_many,
)
from fairrank.bounds import chebyshev_order_gap
from fairrank.model import Matching
from fairrank.pipeline import load_policy, save_policy

from conftest import (
    dcg,
    fractional_vertex_instance,
    fractional_vertex_optimum_original_order,
    random_feasible_instance,
    to_internal_rows,
)


class TestPadInstance:
    def test_square_instance_unchanged(self, tight_instance):
        assert pad_instance(tight_instance) is tight_instance

    def test_padding_shape_and_vacuous_bounds(self):
        inst = build_instance(
            rho=[0.9, 0.7, 0.5, 0.1], v=dcg(2), blocks=[[0], [1]],
            groups=[("g", [0, 1])], L=[[0], [0]], U=[[1], [1]],
            C=np.zeros((4, 2)), A=np.ones((4, 2)),
        )
        padded = pad_instance(inst)
        assert padded.n == 4 and padded.q == 3
        assert padded.blocks[2] == (2, 3)
        assert padded.L[2, 0] == 0 and padded.U[2, 0] == 2
        assert np.all(padded.C[:, 2] == 0) and np.all(padded.A[:, 2] == 1)
        assert padded.n_real == 2
        # padding discounts stay strictly below the last real one
        assert padded.v[2] < padded.v[1] and padded.v[3] < padded.v[2]

    def test_padded_matchings_place_every_item(self):
        inst = fractional_vertex_instance()
        padded = pad_instance(inst)
        rp = run_main_algorithm(inst)
        # every support ranking of the padded run placed all items somewhere;
        # after stripping, unplaced items are exactly the padded ones
        for _, R in rp.policy.support:
            assert R.entries.sum() == inst.n


class TestProjection:
    def test_identity_assignment(self):
        D = np.eye(4)
        out = project_g(D, [(0, 1), (2, 3)])
        np.testing.assert_array_equal(
            out, [[1, 0], [1, 0], [0, 1], [0, 1]]
        )

    def test_fixture_marginal_block_mass(self, regression_instance):
        padded = pad_instance(regression_instance)
        pi = to_internal_rows(
            regression_instance, fractional_vertex_optimum_original_order()
        )
        out = project_g(pi, padded.blocks)
        np.testing.assert_allclose(out.sum(axis=1), np.ones(4))
        np.testing.assert_allclose(out.sum(axis=0), [2, 1, 1])

    def test_linearity(self):
        rng = np.random.default_rng(0)
        blocks = [(0, 1), (2,)]
        d1, d2 = rng.uniform(size=(4, 3)), rng.uniform(size=(4, 3))
        a = 0.3
        np.testing.assert_allclose(
            project_g(a * d1 + (1 - a) * d2, blocks),
            a * project_g(d1, blocks) + (1 - a) * project_g(d2, blocks),
        )


class TestRefine:
    def test_higher_utility_takes_earlier_position(self):
        rho = [0.9, 0.2]
        M = Matching([[1], [1]], block_sizes=(2,))
        R = refine_f(M, rho, [(0, 1)])
        assert R.item_at(0) == 0 and R.item_at(1) == 1

    def test_tie_broken_by_original_id(self):
        inst = build_instance(
            rho=[0.5, 0.5], v=[1.0, 0.5], blocks=[[0, 1]], groups=[],
            L=np.zeros((1, 0)), U=np.zeros((1, 0)),
            C=np.zeros((2, 1)), A=np.ones((2, 1)),
        )
        M = Matching([[1], [1]], block_sizes=(2,))
        R = refine_f(M, inst.rho, inst.blocks)
        assert inst.item_ids[R.item_at(0)] == 1

    def test_unsorted_utilities_still_ordered(self):
        M = Matching([[1], [1], [1]], block_sizes=(3,))
        R = refine_f(M, [0.2, 0.9, 0.5], [(0, 1, 2)])
        assert [R.item_at(j) for j in range(3)] == [1, 2, 0]

    def test_projection_inverts_refinement(self):
        rng = np.random.default_rng(9)
        for _ in range(50):
            m = int(rng.integers(2, 8))
            cuts = sorted(set(rng.integers(1, m, size=rng.integers(0, 2)).tolist()))
            bounds = [0] + cuts + [m]
            blocks = [tuple(range(bounds[i], bounds[i + 1])) for i in range(len(bounds) - 1)]
            order = rng.permutation(m)
            e = np.zeros((m, len(blocks)), dtype=np.int8)
            start = 0
            for j, b in enumerate(blocks):
                for i in order[start:start + len(b)]:
                    e[i, j] = 1
                start += len(b)
            M = Matching(e, block_sizes=tuple(len(b) for b in blocks))
            rho = np.sort(rng.uniform(size=m))[::-1]
            R = refine_f(M, rho, blocks)
            np.testing.assert_array_equal(project_g(R.entries, blocks), M.entries)


class TestMainAlgorithm:
    def test_fixture_policy(self, regression_instance):
        rp = run_main_algorithm(regression_instance)
        assert rp.decomposition_terms == 2
        marg = rp.marginal()
        np.testing.assert_allclose(marg[:, :2].sum(axis=1), 0.5, atol=1e-9)
        members = list(regression_instance.groups[0].members)
        for _, R in rp.policy.support:
            assert R.entries[members][:, [0, 1]].sum() <= 1

    def test_unconstrained_instance_gives_sorted_ranking(self):
        inst = build_instance(
            rho=[0.9, 0.7, 0.5, 0.1], v=dcg(3), blocks=[[0, 1], [2]],
            groups=[], L=np.zeros((2, 0)), U=np.zeros((2, 0)),
            C=np.zeros((4, 2)), A=np.ones((4, 2)),
        )
        rp = run_main_algorithm(inst)
        assert rp.decomposition_terms == 1
        R = rp.policy.support[0][1]
        assert [R.item_at(j) for j in range(3)] == [0, 1, 2]

    def test_guarantees_on_random_instances(self):
        rng = np.random.default_rng(21)
        for _ in range(20):
            inst = random_feasible_instance(rng, m_max=14)
            rp = run_main_algorithm(inst)  # check=True verifies the bullets
            marg = rp.marginal()
            mass = project_g(marg, inst.blocks)
            assert np.all(mass >= inst.C - 1e-6)
            assert np.all(mass <= inst.A + 1e-6)

    def test_infeasible_propagates(self):
        from fairrank.lp import InfeasibleProgramError

        inst = build_instance(
            rho=[0.9, 0.5], v=[1.0, 0.5], blocks=[[0], [1]], groups=[],
            L=np.zeros((2, 0)), U=np.zeros((2, 0)),
            C=np.array([[0.9, 0.0], [0.9, 0.0]]), A=np.ones((2, 2)),
        )
        with pytest.raises(InfeasibleProgramError):
            run_main_algorithm(inst)


class TestSampling:
    def test_single_term_always_same(self, regression_instance):
        rp = run_main_algorithm(regression_instance)
        single = type(rp)(
            policy=type(rp.policy)(((1.0, rp.policy.support[0][1]),)),
            provenance="test",
            instance_fingerprint="",
        )
        draws = {tuple(sample(single, s).entries.ravel()) for s in range(5)}
        assert len(draws) == 1

    def test_seed_determinism(self, regression_instance):
        rp = run_main_algorithm(regression_instance)
        a = sample(rp, 1234)
        b = sample(rp, 1234)
        np.testing.assert_array_equal(a.entries, b.entries)

    def test_empirical_frequencies_match_weights(self, regression_instance):
        rp = run_main_algorithm(regression_instance)
        n_draws = 100_000
        draws = sample_many(rp, 77, n_draws)
        first = rp.policy.support[0][1]
        hits = sum(1 for R in draws if np.array_equal(R.entries, first.entries))
        # three-sigma binomial band around one half
        sigma = (0.25 / n_draws) ** 0.5
        assert abs(hits / n_draws - 0.5) <= 3 * sigma


class TestPolicyFiles:
    def test_round_trip(self, regression_instance, tmp_path):
        rp = run_main_algorithm(regression_instance)
        path = tmp_path / "policy.json"
        save_policy(rp, regression_instance, path)
        again = load_policy(path)
        assert len(again.policy) == len(rp.policy)
        got = {
            (round(w, 12), tuple(R.entries.ravel()))
            for w, R in again.policy.support
        }
        want = {
            (round(w, 12), tuple(R.entries.ravel()))
            for w, R in rp.policy.support
        }
        assert got == want


class TestChebyshevHelper:
    def test_gap_nonnegative_for_sorted_vectors(self):
        rng = np.random.default_rng(123)
        for _ in range(200):
            z = int(rng.integers(1, 12))
            x = np.sort(rng.uniform(-5, 5, z))[::-1]
            y = np.sort(rng.uniform(-5, 5, z))[::-1]
            assert chebyshev_order_gap(x, y) >= -1e-12
