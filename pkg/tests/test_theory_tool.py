import numpy as np
import pytest

from tools.env_tool import collect
from tools.errors import RejectedInputError
from tools.learner_tool import fit_iql, fit_sql, reweight_policy
from tools.mdp_tool import PolicyTable, perturb_kernel, policy_evaluation, random_policy, tight_lemma1_pair
from tools.theory_tool import (
    IDENTICAL_OFFSET,
    INSTANCE_KINDS,
    TIGHT_EVERY,
    TheoryTool,
    check_lemma1,
    check_pdl_identity,
    check_prop1,
    check_prop2_bound,
    check_prop3_identity,
    run_theory_suite,
)

CHECKS = ["lemma1", "prop1", "pdl_identity", "prop2", "prop3_identity"]


@pytest.fixture
def instance(make_random_mdp, rng):
    src = make_random_mdp(n_states=5, n_actions=3, gamma=0.9)
    tar = perturb_kernel(src, rng, 0.5)
    mu = random_policy(rng, 5, 3)
    data = collect(src, mu, 150, seed=11)
    return src, tar, mu, data


class TestChecks:
    def test_lemma1_and_prop1(self, instance, rng):
        src, tar, _, data = instance
        pi = random_policy(rng, 5, 3)
        assert check_lemma1(src, tar, pi).holds
        report = check_prop1(src, tar, pi, data)
        assert report.holds
        assert report.components["eps_opt"] >= -1e-9

    def test_pdl_identity(self, instance, rng):
        src, _, mu, _ = instance
        report = check_pdl_identity(src, mu, random_policy(rng, 5, 3))
        assert report.kind == "identity"
        assert report.holds

    def test_prop2_is_tight_when_policy_equals_behavior(self, instance):
        src, _, mu, data = instance
        report = check_prop2_bound(src, data, mu, mu)
        assert report.components["slack_constant"] == 0.0
        assert report.components["gap"] == pytest.approx(0.0, abs=1e-9)
        assert report.holds

    def test_prop2_holds_for_advantage_weighted_improvement(self, instance):
        src, _, mu, data = instance
        improved = reweight_policy(mu, policy_evaluation(src, mu).A, beta=2.0)
        report = check_prop2_bound(src, data, improved, mu)
        assert report.components["assumption_satisfied"] == 1.0
        assert report.components["eps_kl"] > 0.0
        assert report.holds

    @pytest.mark.parametrize("beta", [0.5, 3.0, 20.0])
    def test_one_reweighting_step_from_empirical_behavior_improves(self, instance, beta):
        src, _, _, data = instance
        counts = data.counts()
        seen = counts.sum(axis=1, keepdims=True) > 0
        mu_hat = PolicyTable(np.where(seen, counts / np.maximum(counts.sum(axis=1, keepdims=True), 1.0),
                                      1.0 / src.n_actions))
        improved = reweight_policy(mu_hat, policy_evaluation(src, mu_hat).A, beta=beta)
        report = check_prop2_bound(src, data, improved, mu_hat)
        assert report.components["assumption_satisfied"] == 1.0
        assert report.components["assumption_state_min"] >= -1e-9
        assert report.holds

    @pytest.mark.parametrize("fit", [fit_iql, fit_sql])
    def test_prop3_identity(self, instance, fit):
        src, _, _, data = instance
        report = check_prop3_identity(src, data, fit(data))
        assert report.holds, report.to_dict()

    def test_report_dict(self, instance, rng):
        src, tar, _, _ = instance
        payload = check_lemma1(src, tar, random_policy(rng, 5, 3)).to_dict()
        assert set(payload) == {"name", "kind", "lhs", "rhs", "slack", "tol", "holds", "components"}
        assert payload["slack"] == pytest.approx(payload["rhs"] - payload["lhs"])


class TestSuite:
    def test_all_checks_hold(self):
        result = run_theory_suite(seed=0, n_instances=20)
        summary = result.summary
        assert list(summary["check"]) == CHECKS
        assert list(summary.columns) == ["check", "kind", "instances", "min_slack", "max_slack", "holds_count"]
        assert (summary["instances"] == 20).all()
        assert result.all_hold
        assert len(result.rows) == 5 * 20

    def test_same_seed_same_summary(self):
        a = run_theory_suite(seed=3, n_instances=6).summary
        b = run_theory_suite(seed=3, n_instances=6).summary
        assert a.equals(b)

    def test_halved_c1_is_detected(self):
        result = run_theory_suite(seed=0, n_instances=10, c1_scale=0.5)
        lemma1 = result.summary.set_index("check").loc["lemma1"]
        assert lemma1["holds_count"] < lemma1["instances"]
        assert not result.all_hold

    def test_tight_pair_is_close_to_the_bound(self):
        src, tar = tight_lemma1_pair(0.5)
        report = check_lemma1(src, tar, random_policy(np.random.default_rng(0), 2, 1))
        assert report.lhs / report.rhs > 0.99

    def test_identical_domains_have_no_dynamics_gap(self):
        result = run_theory_suite(seed=2, n_instances=TIGHT_EVERY + IDENTICAL_OFFSET + 1)
        identical = [row for row in result.rows if row["instance_kind"] == "src_equals_tar"]
        assert {row["instance"] for row in identical} == {IDENTICAL_OFFSET, TIGHT_EVERY + IDENTICAL_OFFSET}
        for row in identical:
            if row["name"] == "lemma1":
                assert row["components"]["tv_sup"] == 0.0
                assert row["lhs"] == pytest.approx(0.0, abs=1e-12)
                assert row["rhs"] == 0.0
            elif row["name"] == "prop1":
                assert row["components"]["tv_sup"] == 0.0
                assert row["components"]["dyn_term"] == 0.0
        assert {row["instance_kind"] for row in result.rows} == set(INSTANCE_KINDS)
        assert result.all_hold

    def test_rejects_empty_suite(self):
        with pytest.raises(RejectedInputError):
            run_theory_suite(n_instances=0)


class TestTheoryTool:
    def test_bench_envelope(self):
        tool = TheoryTool()
        result = tool.run('bench', seed=1, n_instances=5)
        assert result['success'] and result['all_hold']
        assert set(result['summary']['check']) == set(CHECKS)

    def test_failures_are_envelopes(self):
        tool = TheoryTool()
        assert not tool.run('bench', n_instances=0)['success']
        assert tool.run('prove')['error'] == 'Unknown action: prove'
