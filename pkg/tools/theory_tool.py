"""Numerical checks of the performance bounds and identities.

Every check returns a BoundReport. Occupancies follow the unnormalized
convention of ``mdp_tool.occupancy``.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
from scipy.special import rel_entr

from .env_tool import Dataset, collect
from .errors import RejectedInputError
from .learner_tool import (
    IqlConfig,
    PretrainedCritic,
    SqlConfig,
    fit_iql,
    fit_sql,
    in_sample_optimal,
    reweight_policy,
)
from .mdp_tool import (
    BoundConstants,
    BoundReport,
    PolicyTable,
    TabularMDP,
    bound_constants,
    expected_return,
    lemma1_bound,
    occupancy,
    perturb_kernel,
    policy_evaluation,
    prop1_bound,
    random_mdp,
    random_policy,
    tight_lemma1_pair,
)

logger = logging.getLogger(__name__)

IDENTITY_TOL = 1e-6
ASSUMPTION_TOL = 1e-9
SUITE_GAMMAS = (0.5, 0.9)
TIGHT_EVERY = 10
IDENTICAL_OFFSET = 5
INSTANCE_KINDS = ("tight", "src_equals_tar", "perturbed")


def check_lemma1(src: TabularMDP, tar: TabularMDP, pi: PolicyTable,
                 constants: Optional[BoundConstants] = None) -> BoundReport:
    return lemma1_bound(src, tar, pi, constants)


def check_prop1(src: TabularMDP, tar: TabularMDP, pi: PolicyTable, data_src: Dataset,
                constants: Optional[BoundConstants] = None) -> BoundReport:
    pi_insrc, _ = in_sample_optimal(src, data_src)
    return prop1_bound(src, tar, pi, pi_insrc, constants)


def check_pdl_identity(mdp: TabularMDP, mu: PolicyTable, pi_ref: PolicyTable) -> BoundReport:
    """J(mu) - J(pi_ref) against the occupancy-weighted advantage of pi_ref under mu."""
    j_mu = expected_return(mdp, mu)
    j_ref = expected_return(mdp, pi_ref)
    rhs = float(np.sum(occupancy(mdp, mu).sa * policy_evaluation(mdp, pi_ref).A))
    return BoundReport(name="pdl_identity", kind="identity", lhs=j_mu - j_ref, rhs=rhs, tol=IDENTITY_TOL,
                       components={"J_mu": j_mu, "J_ref": j_ref})


def _max_state_kl(p: np.ndarray, q: np.ndarray) -> float:
    forward = rel_entr(p, q).sum(axis=1)
    backward = rel_entr(q, p).sum(axis=1)
    return float(np.max(np.maximum(forward, backward)))


def check_prop2_bound(mdp_src: TabularMDP, data_src: Dataset, pi: PolicyTable,
                      mu: PolicyTable) -> BoundReport:
    """J(pi) - J(pi*_insrc) >= E_{d_mu, mu}[A_{pi*_insrc}] - 2 gamma eps_max sqrt(eps_kl) / (1 - gamma)^2.

    Both forms of the improvement assumption are reported: the pointwise
    min over observed (s, a) of (pi - mu) A_mu, and the per-state sum of it.
    The inequality itself needs only the per-state form.
    """
    pi_insrc, _ = in_sample_optimal(mdp_src, data_src)
    a_mu = policy_evaluation(mdp_src, mu).A
    a_star = policy_evaluation(mdp_src, pi_insrc).A
    d_mu = occupancy(mdp_src, mu)

    gain = (pi.pi - mu.pi) * a_mu
    observed = data_src.support()
    pointwise = float(gain[observed].min()) if observed.any() else 0.0
    observed_states = observed.any(axis=1)
    per_state = float(gain.sum(axis=1)[observed_states].min()) if observed_states.any() else 0.0

    lhs = expected_return(mdp_src, pi) - expected_return(mdp_src, pi_insrc)
    rhs_term = float(np.sum(d_mu.sa * a_star))
    eps_max = float(np.max(np.abs(np.sum(pi.pi * a_mu, axis=1))))
    eps_kl = _max_state_kl(mu.pi, pi.pi)
    gamma = mdp_src.gamma
    constant = 0.0 if eps_max == 0.0 else 2.0 * gamma * eps_max * np.sqrt(eps_kl) / (1.0 - gamma) ** 2
    return BoundReport(
        name="prop2",
        kind="lower_bound",
        lhs=lhs,
        rhs=rhs_term - constant,
        tol=ASSUMPTION_TOL,
        components={
            "rhs_term": rhs_term,
            "gap": lhs - rhs_term,
            "slack_constant": constant,
            "eps_max": eps_max,
            "eps_kl": eps_kl,
            "assumption_pointwise_min": pointwise,
            "assumption_state_min": per_state,
            "assumption_satisfied": float(per_state >= -ASSUMPTION_TOL),
        },
    )


def check_prop3_identity(mdp_src: TabularMDP, data_src: Dataset, critic: PretrainedCritic) -> BoundReport:
    """Advantage error of the critic against pi*_insrc, split through pi_pre."""
    pi_insrc, _ = in_sample_optimal(mdp_src, data_src)
    mu = data_src.behavior
    weights = occupancy(mdp_src, mu).sa
    a_hat = critic.values.A
    a_star = policy_evaluation(mdp_src, pi_insrc).A
    a_pre = policy_evaluation(mdp_src, critic.policy).A
    delta_j = expected_return(mdp_src, pi_insrc) - expected_return(mdp_src, critic.policy)
    estimation = float(np.sum(weights * (a_hat - a_pre)))
    return BoundReport(
        name="prop3_identity",
        kind="identity",
        lhs=float(np.sum(weights * (a_hat - a_star))),
        rhs=delta_j + estimation,
        tol=IDENTITY_TOL,
        components={"delta_J": delta_j, "estimation_error": estimation},
    )


@dataclass
class SuiteResult:
    summary: pd.DataFrame
    rows: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def all_hold(self) -> bool:
        return bool(self.summary["holds_count"].eq(self.summary["instances"]).all())


def _instance(rng: np.random.Generator, i: int):
    """(kind, src, tar) for the i-th suite instance."""
    gamma = SUITE_GAMMAS[i % len(SUITE_GAMMAS)]
    if i % TIGHT_EVERY == 0:
        src, tar = tight_lemma1_pair(gamma)
        return "tight", src, tar
    n_states = int(rng.integers(2, 7))
    n_actions = int(rng.integers(2, 4))
    src = random_mdp(rng, n_states, n_actions, gamma, name=f"suite{i}-src")
    if i % TIGHT_EVERY == IDENTICAL_OFFSET:
        return "src_equals_tar", src, src.with_kernel(src.P, f"suite{i}-tar")
    tar = perturb_kernel(src, rng, float(rng.uniform(0.0, 1.0)), name=f"suite{i}-tar")
    return "perturbed", src, tar


def run_theory_suite(seed: int = 0, n_instances: int = 200, c1_scale: float = 1.0) -> SuiteResult:
    """Every check over randomized domain pairs.

    Every TIGHT_EVERY-th instance is a pair on which the first bound is nearly
    tight, so shrinking C1 via ``c1_scale`` < 1 makes that check fail. Instances
    IDENTICAL_OFFSET past those share one kernel between the two domains.
    """
    if n_instances < 1:
        raise RejectedInputError(f"n_instances must be at least 1, got {n_instances}")
    rng = np.random.default_rng(seed)
    rows: List[Dict[str, Any]] = []
    for i in range(n_instances):
        kind, src, tar = _instance(rng, i)
        pi = random_policy(rng, src.n_states, src.n_actions)
        mu = random_policy(rng, src.n_states, src.n_actions)
        data_src = collect(src, mu, int(rng.integers(20, 200)), seed=int(rng.integers(2**31)))
        base = bound_constants(src.gamma, src.r_max)
        scaled = BoundConstants(C1=c1_scale * base.C1, C2=base.C2)

        a_mu = policy_evaluation(src, mu).A
        improved = reweight_policy(mu, a_mu, beta=float(rng.uniform(0.5, 5.0)))
        critic = fit_iql(data_src, IqlConfig(iters=2000)) if i % 2 else fit_sql(data_src, SqlConfig(iters=2000))

        reports = [
            check_lemma1(src, tar, pi, scaled),
            check_prop1(src, tar, pi, data_src),
            check_pdl_identity(src, mu, pi),
            check_prop2_bound(src, data_src, improved, mu),
            check_prop3_identity(src, data_src, critic),
        ]
        for report in reports:
            rows.append({"instance": i, "instance_kind": kind, "gamma": src.gamma, "n_states": src.n_states,
                         "n_actions": src.n_actions, **report.to_dict()})

    frame = pd.DataFrame(rows)
    summary = (
        frame.groupby("name", sort=False)
        .agg(kind=("kind", "first"), instances=("holds", "size"), min_slack=("slack", "min"),
             max_slack=("slack", "max"), holds_count=("holds", "sum"))
        .reset_index()
        .rename(columns={"name": "check"})
    )
    summary["holds_count"] = summary["holds_count"].astype(int)
    failed = summary.loc[summary["holds_count"] < summary["instances"], "check"].tolist()
    if failed:
        logger.warning("theory suite (seed %d, c1_scale %g): failing checks %s", seed, c1_scale, failed)
    else:
        logger.info("theory suite (seed %d): all %d instances hold", seed, n_instances)
    return SuiteResult(summary=summary, rows=rows)


class TheoryTool:
    """Tool for running the bound and identity checks."""

    name = "theory_bench"
    description = "Verify the performance bounds and identities on randomized tabular MDP pairs"

    def __init__(self):
        self.result: Optional[SuiteResult] = None

    def bench(self, seed: int = 0, n_instances: int = 200, c1_scale: float = 1.0) -> Dict[str, Any]:
        try:
            self.result = run_theory_suite(seed, n_instances, c1_scale)
            summary = self.result.summary
            return {
                'success': True,
                'all_hold': self.result.all_hold,
                'summary': summary,
                'message': f"Ran {len(summary)} checks on {n_instances} instances: "
                           f"{'all hold' if self.result.all_hold else 'FAILURES present'}"
            }
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def run(self, action: str, **kwargs) -> Dict[str, Any]:
        actions = {
            'bench': lambda: self.bench(kwargs.get('seed', 0), kwargs.get('n_instances', 200),
                                        kwargs.get('c1_scale', 1.0)),
        }

        if action not in actions:
            return {'success': False, 'error': f'Unknown action: {action}'}

        return actions[action]()
