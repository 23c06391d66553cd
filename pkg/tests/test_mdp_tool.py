import itertools
from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from tests.helpers import full_coverage_dataset
from tools.env_tool import collect, monte_carlo_return
from tools.errors import DomainMismatchError, RejectedInputError
from tools.mdp_tool import (
    BoundConstants,
    PolicyTable,
    TabularMDP,
    ValueTables,
    bound_constants,
    empirical_mdp,
    expected_return,
    greedy_policy,
    lemma1_bound,
    load_mdp,
    occupancy,
    perturb_kernel,
    policy_evaluation,
    policy_kernel,
    prop1_bound,
    random_policy,
    save_mdp,
    tight_lemma1_pair,
    tv_sup,
    value_iteration,
)


class TestTabularMDP:
    def test_rejects_rows_not_summing_to_one(self):
        P = np.array([[[0.5, 0.4]], [[0.0, 1.0]]])
        with pytest.raises(RejectedInputError):
            TabularMDP(P=P, r=np.zeros((2, 1)), rho0=np.array([1.0, 0.0]), gamma=0.9)

    def test_rejects_gamma_outside_open_interval(self, chain_mdp):
        for gamma in (0.0, 1.0, 1.5):
            with pytest.raises(RejectedInputError):
                TabularMDP(P=chain_mdp.P, r=chain_mdp.r, rho0=chain_mdp.rho0, gamma=gamma)

    def test_rejects_reward_above_bound(self, chain_mdp):
        with pytest.raises(RejectedInputError):
            TabularMDP(P=chain_mdp.P, r=chain_mdp.r, rho0=chain_mdp.rho0, gamma=0.5, r_max=0.5)

    def test_r_max_defaults_to_largest_reward(self, chain_mdp):
        assert chain_mdp.r_max == 1.0

    def test_arrays_are_read_only(self, chain_mdp):
        assert not chain_mdp.P.flags.writeable
        with pytest.raises(ValueError):
            chain_mdp.r[0, 0] = 5.0

    def test_with_kernel_keeps_everything_else(self, make_random_mdp, rng):
        mdp = make_random_mdp()
        other = perturb_kernel(mdp, rng, 0.3)
        assert_array_equal(other.r, mdp.r)
        assert_array_equal(other.rho0, mdp.rho0)
        assert other.gamma == mdp.gamma
        assert not np.array_equal(other.P, mdp.P)


class TestValueIteration:
    def test_two_state_chain(self, chain_mdp):
        values, policy = value_iteration(chain_mdp)
        assert_allclose(values.V, [1.0, 2.0], atol=1e-8)
        assert_array_equal(policy.pi, [[1.0], [1.0]])

    def test_zero_reward_gives_zero_values(self, make_random_mdp):
        mdp = make_random_mdp()
        zero = TabularMDP(P=mdp.P, r=np.zeros_like(mdp.r), rho0=mdp.rho0, gamma=mdp.gamma)
        values, _ = value_iteration(zero)
        assert_allclose(values.V, 0.0, atol=1e-12)

    def test_matches_exhaustive_policy_search(self, make_random_mdp):
        mdp = make_random_mdp(n_states=5, n_actions=3)
        values, policy = value_iteration(mdp)
        best = np.full(mdp.n_states, -np.inf)
        for actions in itertools.product(range(mdp.n_actions), repeat=mdp.n_states):
            V = policy_evaluation(mdp, PolicyTable.deterministic(np.array(actions), mdp.n_actions)).V
            best = np.maximum(best, V)
        assert_allclose(values.V, best, atol=1e-6)
        assert_allclose(policy_evaluation(mdp, policy).V, best, atol=1e-6)

    def test_bellman_residual_within_tolerance(self, make_random_mdp):
        mdp = make_random_mdp(n_states=8, n_actions=4, gamma=0.95)
        values, _ = value_iteration(mdp, tol=1e-10)
        backup = (mdp.r + mdp.gamma * (mdp.P @ values.V)).max(axis=1)
        assert np.max(np.abs(backup - values.V)) <= 1e-10

    def test_ties_go_to_lowest_action(self):
        P = np.zeros((1, 3, 1))
        P[0, :, 0] = 1.0
        mdp = TabularMDP(P=P, r=np.array([[0.5, 1.0, 1.0]]), rho0=np.array([1.0]), gamma=0.9)
        _, policy = value_iteration(mdp)
        assert_array_equal(policy.pi, [[0.0, 1.0, 0.0]])

    def test_action_mask_restricts_the_max(self, make_random_mdp):
        mdp = make_random_mdp()
        mask = np.zeros((mdp.n_states, mdp.n_actions), dtype=bool)
        mask[:, 1] = True
        values, policy = value_iteration(mdp, action_mask=mask)
        assert_array_equal(policy.pi[:, 1], 1.0)
        only_one = policy_evaluation(mdp, PolicyTable.deterministic(np.ones(mdp.n_states, dtype=int),
                                                                    mdp.n_actions))
        assert_allclose(values.V, only_one.V, atol=1e-8)

    def test_greedy_policy_respects_mask(self):
        Q = np.array([[3.0, 1.0, 2.0]])
        policy = greedy_policy(Q, np.array([[False, True, True]]))
        assert_array_equal(policy.pi, [[0.0, 0.0, 1.0]])


class TestPolicyEvaluation:
    def test_self_loop_constant_reward(self):
        P = np.ones((1, 1, 1))
        mdp = TabularMDP(P=P, r=np.array([[0.3]]), rho0=np.array([1.0]), gamma=0.8)
        values = policy_evaluation(mdp, PolicyTable.uniform(1, 1))
        assert_allclose(values.V, [0.3 / 0.2], rtol=1e-12)

    def test_q_and_advantage_consistency(self, make_random_mdp, rng):
        mdp = make_random_mdp()
        pi = random_policy(rng, mdp.n_states, mdp.n_actions)
        values = policy_evaluation(mdp, pi)
        assert_allclose(values.Q, mdp.r + mdp.gamma * (mdp.P @ values.V), atol=1e-12)
        assert_allclose(values.A, values.Q - values.V[:, None], atol=1e-12)
        assert_allclose((pi.pi * values.A).sum(axis=1), 0.0, atol=1e-10)

    def test_agrees_with_monte_carlo(self, make_random_mdp, rng):
        mdp = make_random_mdp(n_states=4, n_actions=2, gamma=0.8)
        pi = random_policy(rng, mdp.n_states, mdp.n_actions)
        mean, stderr = monte_carlo_return(mdp, pi, n_rollouts=100_000, seed=7)
        assert abs(mean - expected_return(mdp, pi)) <= 4 * stderr + 1e-6

    def test_rejects_mismatched_policy(self, make_random_mdp):
        mdp = make_random_mdp(n_states=5, n_actions=3)
        with pytest.raises(RejectedInputError):
            policy_evaluation(mdp, PolicyTable.uniform(4, 3))

    def test_expected_return_invariant_under_state_relabelling(self, make_random_mdp, rng):
        mdp = make_random_mdp()
        pi = random_policy(rng, mdp.n_states, mdp.n_actions)
        perm = rng.permutation(mdp.n_states)
        relabelled = TabularMDP(P=mdp.P[perm][:, :, perm], r=mdp.r[perm], rho0=mdp.rho0[perm],
                                gamma=mdp.gamma, r_max=mdp.r_max)
        assert expected_return(relabelled, PolicyTable(pi.pi[perm])) == pytest.approx(
            expected_return(mdp, pi), abs=1e-10)


class TestOccupancy:
    def test_total_mass(self, make_random_mdp, rng):
        mdp = make_random_mdp(gamma=0.95)
        pi = random_policy(rng, mdp.n_states, mdp.n_actions)
        occ = occupancy(mdp, pi)
        assert occ.d.sum() == pytest.approx(1.0 / (1.0 - mdp.gamma), rel=1e-10)
        assert_allclose(occ.sa.sum(axis=1), occ.d, atol=1e-12)

    def test_tiny_discount_recovers_start_distribution(self, make_random_mdp, rng):
        mdp = make_random_mdp(gamma=1e-6)
        occ = occupancy(mdp, random_policy(rng, mdp.n_states, mdp.n_actions))
        assert_allclose(occ.d, mdp.rho0, atol=1e-5)

    def test_matches_truncated_series(self, make_random_mdp, rng):
        mdp = make_random_mdp(gamma=0.7)
        pi = random_policy(rng, mdp.n_states, mdp.n_actions)
        P_pi, _ = policy_kernel(mdp, pi)
        mass, series = mdp.rho0.copy(), np.zeros(mdp.n_states)
        for t in range(200):
            series += mdp.gamma ** t * mass
            mass = mass @ P_pi
        assert_allclose(occupancy(mdp, pi).d, series, atol=1e-8)

    def test_performance_difference_identity(self, make_random_mdp, rng):
        for _ in range(50):
            mdp = make_random_mdp(n_states=6, n_actions=3, gamma=0.9)
            mu = random_policy(rng, mdp.n_states, mdp.n_actions)
            pi = random_policy(rng, mdp.n_states, mdp.n_actions)
            d_mu = occupancy(mdp, mu).d
            adv = policy_evaluation(mdp, pi).A
            rhs = float(np.sum(d_mu[:, None] * mu.pi * adv))
            lhs = expected_return(mdp, mu) - expected_return(mdp, pi)
            assert lhs == pytest.approx(rhs, abs=1e-6)


class TestTvSup:
    def test_identical_kernels(self, make_random_mdp):
        mdp = make_random_mdp()
        assert tv_sup(mdp, mdp) == 0.0

    def test_half_mass_moved(self):
        base = TabularMDP(P=np.array([[[1.0, 0.0]], [[0.0, 1.0]]]), r=np.zeros((2, 1)),
                          rho0=np.array([1.0, 0.0]), gamma=0.9)
        half = base.with_kernel(np.array([[[0.5, 0.5]], [[0.0, 1.0]]]))
        disjoint = base.with_kernel(np.array([[[0.0, 1.0]], [[0.0, 1.0]]]))
        assert tv_sup(base, half) == pytest.approx(0.5)
        assert tv_sup(base, disjoint) == pytest.approx(1.0)

    def test_symmetric_and_triangle(self, make_random_mdp, rng):
        a = make_random_mdp()
        b = perturb_kernel(a, rng, 0.4)
        c = perturb_kernel(a, rng, 0.7)
        assert tv_sup(a, b) == pytest.approx(tv_sup(b, a))
        assert tv_sup(a, c) <= tv_sup(a, b) + tv_sup(b, c) + 1e-12

    def test_mismatched_rewards_rejected(self, make_random_mdp):
        a = make_random_mdp()
        b = TabularMDP(P=a.P, r=-a.r, rho0=a.rho0, gamma=a.gamma, r_max=a.r_max)
        with pytest.raises(DomainMismatchError):
            tv_sup(a, b)


class TestBounds:
    def test_constants_at_half_discount(self):
        constants = bound_constants(0.5, 1.0)
        assert constants.C1 == pytest.approx(4.0)
        assert constants.C2 == pytest.approx(12.0)

    def test_lemma1_identical_domains(self, make_random_mdp, rng):
        mdp = make_random_mdp()
        report = lemma1_bound(mdp, mdp, random_policy(rng, mdp.n_states, mdp.n_actions))
        assert report.lhs == pytest.approx(0.0, abs=1e-12)
        assert report.rhs == 0.0
        assert report.holds

    def test_lemma1_holds_on_random_pairs(self, make_random_mdp, rng):
        for _ in range(100):
            src = make_random_mdp(n_states=5, n_actions=3, gamma=float(rng.uniform(0.5, 0.95)))
            tar = perturb_kernel(src, rng, float(rng.uniform(0.0, 1.0)))
            report = lemma1_bound(src, tar, random_policy(rng, src.n_states, src.n_actions))
            assert report.slack >= -1e-9, report.to_dict()

    def test_lemma1_is_nearly_tight(self):
        src, tar = tight_lemma1_pair(0.9, delta=1e-3)
        report = lemma1_bound(src, tar, PolicyTable.uniform(2, 1))
        assert report.holds
        assert report.lhs / report.rhs > 0.95

    def test_halved_constant_is_caught_on_tight_pair(self):
        src, tar = tight_lemma1_pair(0.9, delta=1e-3)
        true = bound_constants(0.9, 1.0)
        halved = BoundConstants(C1=0.5 * true.C1, C2=true.C2)
        assert not lemma1_bound(src, tar, PolicyTable.uniform(2, 1), halved).holds

    def test_prop1_without_shift_or_optimality_gap(self, make_random_mdp):
        mdp = make_random_mdp()
        _, pi_star = value_iteration(mdp)
        report = prop1_bound(mdp, mdp, pi_star, pi_star)
        assert report.components["SubOpt"] == pytest.approx(0.0, abs=1e-9)
        assert report.components["eps_opt"] == pytest.approx(0.0, abs=1e-9)
        assert report.holds

    def test_prop1_holds_on_random_pairs(self, make_random_mdp, rng):
        from tools.learner_tool import in_sample_optimal
        for i in range(40):
            src = make_random_mdp(n_states=5, n_actions=3, gamma=0.9)
            tar = perturb_kernel(src, rng, float(rng.uniform(0.0, 0.8)))
            data = collect(src, random_policy(rng, 5, 3), n=300, seed=i)
            pi_insrc, _ = in_sample_optimal(src, data)
            pi = random_policy(rng, 5, 3)
            assert prop1_bound(src, tar, pi, pi_insrc).holds


class TestEmpiricalMdp:
    def test_counts_become_probabilities(self, make_random_mdp):
        mdp = make_random_mdp(n_states=3, n_actions=2)
        data = full_coverage_dataset(mdp, repeats=2)
        emp = empirical_mdp(data)
        assert_allclose(emp.P.sum(axis=2), 1.0)
        assert_allclose(emp.r, mdp.r)
        s_next = mdp.P.argmax(axis=2)
        assert_array_equal(emp.P.argmax(axis=2), s_next)

    def test_unseen_pairs_self_loop(self, make_random_mdp):
        mdp = make_random_mdp(n_states=3, n_actions=2)
        data = full_coverage_dataset(mdp)
        keep = np.flatnonzero(~((data.s == 1) & (data.a == 0)))
        emp = empirical_mdp(data.subset(keep))
        assert emp.P[1, 0, 1] == 1.0
        assert emp.r[1, 0] == 0.0


class TestPersistence:
    def test_round_trip_is_exact(self, make_random_mdp, tmp_path):
        mdp = make_random_mdp(n_states=4, n_actions=2, gamma=0.93)
        loaded = load_mdp(save_mdp(mdp, tmp_path / "mdp.txt"))
        assert_array_equal(loaded.P, mdp.P)
        assert_array_equal(loaded.r, mdp.r)
        assert_array_equal(loaded.rho0, mdp.rho0)
        assert loaded.gamma == mdp.gamma
        assert loaded.r_max == mdp.r_max
        assert loaded.name == mdp.name

    @pytest.mark.parametrize("name", ["grid 6x6 ~0.6", "it's=odd", ""])
    def test_names_with_spaces_and_quotes_survive(self, make_random_mdp, tmp_path, name):
        mdp = replace(make_random_mdp(n_states=3, n_actions=2), name=name)
        loaded = load_mdp(save_mdp(mdp, tmp_path / "mdp.txt"))
        assert loaded.name == name
        assert_array_equal(loaded.P, mdp.P)

    def test_multiline_names_are_rejected(self, make_random_mdp, tmp_path):
        mdp = replace(make_random_mdp(n_states=3, n_actions=2), name="a\nb")
        with pytest.raises(RejectedInputError):
            save_mdp(mdp, tmp_path / "mdp.txt")

    def test_rejects_foreign_file(self, tmp_path):
        path = tmp_path / "other.txt"
        path.write_text("hello\n")
        with pytest.raises(RejectedInputError):
            load_mdp(path)


def test_value_tables_enforce_advantage_definition():
    with pytest.raises(RejectedInputError):
        ValueTables(Q=np.zeros((2, 2)), V=np.zeros(2), A=np.ones((2, 2)))
