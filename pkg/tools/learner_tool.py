"""Tabular in-sample offline learners.

IQL and SQL share one weighted fixed point over dataset aggregates:

    Q(s, a) = sum_i w_i (r_i + gamma (1 - done_i) V(s'_i)) / sum_i w_i
    V(s)    = state value of Q(s, .) under the learner's in-sample rule

where the sums run over records at (s, a). IQL uses the weighted
tau-expectile, SQL the root of the sparse in-sample objective. Pairs never
seen in the data carry Q = V (zero advantage); states never seen carry V = 0.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from .env_tool import Dataset
from .errors import RejectedInputError, UndefinedMetricError
from .mdp_tool import PolicyTable, TabularMDP, ValueTables, value_iteration

logger = logging.getLogger(__name__)

LEARNERS = ("iql", "sql")
CRITIC_FILE_MAGIC = "# pretrained-critic v1"


@dataclass(frozen=True)
class IqlConfig:
    tau: float = 0.7
    beta: float = 3.0
    iters: int = 5000
    tol: float = 1e-10

    def __post_init__(self):
        if not 0.0 < self.tau < 1.0:
            raise RejectedInputError(f"tau must lie in (0, 1), got {self.tau}")
        _check_common(self.beta, self.iters, self.tol)


@dataclass(frozen=True)
class SqlConfig:
    alpha: float = 0.01
    beta: float = 3.0
    iters: int = 5000
    tol: float = 1e-10

    def __post_init__(self):
        if not self.alpha > 0.0:
            raise RejectedInputError(f"alpha must be positive, got {self.alpha}")
        _check_common(self.beta, self.iters, self.tol)


def _check_common(beta: float, iters: int, tol: float) -> None:
    if not beta > 0.0:
        raise RejectedInputError(f"beta must be positive, got {beta}")
    if iters < 1:
        raise RejectedInputError(f"iters must be at least 1, got {iters}")
    if not tol > 0.0:
        raise RejectedInputError(f"tol must be positive, got {tol}")


@dataclass(frozen=True, eq=False)
class PretrainedCritic:
    values: ValueTables
    policy: PolicyTable
    learner: str
    residuals: Tuple[float, ...] = ()
    converged: bool = True


@dataclass(frozen=True)
class AdvantageErrorReport:
    value: float
    n_kept: int
    n_excluded: int
    eps_denom: float


def _expectile_rows(Q: np.ndarray, W: np.ndarray, tau: float) -> np.ndarray:
    """Weighted tau-expectile of each row of Q; NaN where a row has no weight.

    The first-order condition is piecewise linear in v, so every split of the
    sorted row gives one closed-form candidate; the exact root is the
    candidate with the smallest residual.
    """
    order = np.argsort(Q, axis=1, kind="stable")
    q = np.take_along_axis(Q, order, axis=1)
    w = np.take_along_axis(W, order, axis=1)
    w_lo, s_lo = np.cumsum(w, axis=1), np.cumsum(w * q, axis=1)
    w_hi, s_hi = w_lo[:, -1:] - w_lo, s_lo[:, -1:] - s_lo
    with np.errstate(divide="ignore", invalid="ignore"):
        cand = (tau * s_hi + (1.0 - tau) * s_lo) / (tau * w_hi + (1.0 - tau) * w_lo)
        diff = Q[:, None, :] - cand[:, :, None]
        resid = np.abs((W[:, None, :] * np.where(diff > 0, tau, 1.0 - tau) * diff).sum(axis=2))
    return _pick_root(cand, resid, W)


def _sql_rows(Q: np.ndarray, W: np.ndarray, alpha: float) -> np.ndarray:
    """Root of sum_a w (1 + (Q - v) / 2 alpha)_+ = sum_a w for each row."""
    order = np.argsort(-Q, axis=1, kind="stable")
    q = np.take_along_axis(Q, order, axis=1)
    w = np.take_along_axis(W, order, axis=1)
    w_top, s_top = np.cumsum(w, axis=1), np.cumsum(w * q, axis=1)
    w_tot = w_top[:, -1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        cand = (s_top - 2.0 * alpha * (w_tot - w_top)) / w_top
        diff = Q[:, None, :] - cand[:, :, None]
        resid = np.abs((W[:, None, :] * np.maximum(1.0 + diff / (2.0 * alpha), 0.0)).sum(axis=2) - w_tot)
    return _pick_root(cand, resid, W)


def _pick_root(cand: np.ndarray, resid: np.ndarray, W: np.ndarray) -> np.ndarray:
    resid = np.where(np.isfinite(cand) & np.isfinite(resid), resid, np.inf)
    best = np.argmin(resid, axis=1)
    out = cand[np.arange(cand.shape[0]), best]
    out[W.sum(axis=1) <= 0] = np.nan
    return out


def _as_row(values: Any, weights: Optional[Any]) -> Tuple[np.ndarray, np.ndarray]:
    q = np.atleast_1d(np.asarray(values, dtype=float))
    w = np.ones_like(q) if weights is None else np.atleast_1d(np.asarray(weights, dtype=float))
    if q.ndim != 1 or q.size == 0 or w.shape != q.shape:
        raise RejectedInputError("values must be a nonempty vector with matching weights")
    if np.any(w < 0) or w.sum() <= 0 or not np.all(np.isfinite(q)):
        raise RejectedInputError("weights must be nonnegative with positive sum and values finite")
    return q[None, :], w[None, :]


def expectile(values: Any, tau: float, weights: Optional[Any] = None) -> float:
    """Weighted empirical tau-expectile of a sample."""
    if not 0.0 < tau < 1.0:
        raise RejectedInputError(f"tau must lie in (0, 1), got {tau}")
    q, w = _as_row(values, weights)
    return float(_expectile_rows(q, w, tau)[0])


def sql_value(values: Any, alpha: float, weights: Optional[Any] = None) -> float:
    """Minimizer of the sparse in-sample value objective for one state."""
    if not alpha > 0.0:
        raise RejectedInputError(f"alpha must be positive, got {alpha}")
    q, w = _as_row(values, weights)
    return float(_sql_rows(q, w, alpha)[0])


def weighted_counts(data: Dataset, weights: Optional[np.ndarray] = None) -> np.ndarray:
    w = np.ones(len(data)) if weights is None else np.asarray(weights, dtype=float)
    out = np.zeros((data.n_states, data.n_actions))
    np.add.at(out, (data.s, data.a), w)
    return out


def fit_weighted_iql(data: Dataset, weights: Optional[np.ndarray], value_rule: str,
                     param: float, beta: float, iters: int, tol: float,
                     learner: Optional[str] = None) -> PretrainedCritic:
    """Weighted in-sample fixed point shared by every learner in the bench."""
    if len(data) == 0:
        raise RejectedInputError("cannot fit a critic on an empty dataset")
    w = np.ones(len(data)) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (len(data),) or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise RejectedInputError("record weights must be finite, nonnegative and one per record")

    n_states, n_actions = data.n_states, data.n_actions
    W = weighted_counts(data, w)
    reward_sum = np.zeros_like(W)
    np.add.at(reward_sum, (data.s, data.a), w * data.r)
    carry = np.zeros((n_states, n_actions, n_states))
    np.add.at(carry, (data.s, data.a, data.s_next), w * (~data.done))

    seen = W > 0
    safe = np.where(seen, W, 1.0)
    R_bar = reward_sum / safe
    M_bar = carry / safe[:, :, None]
    state_values = {"expectile": _expectile_rows, "sql": _sql_rows}[value_rule]

    Q = np.zeros((n_states, n_actions))
    V = np.zeros(n_states)
    residuals = []
    converged = False
    for _ in range(iters):
        Q_next = R_bar + data.gamma * (M_bar @ V)
        V_next = np.nan_to_num(state_values(Q_next, W, param), nan=0.0)
        Q_next = np.where(seen, Q_next, V_next[:, None])
        delta = float(max(np.max(np.abs(Q_next - Q)), np.max(np.abs(V_next - V))))
        residuals.append(delta)
        Q, V = Q_next, V_next
        if delta <= tol:
            converged = True
            break
    if not converged:
        logger.warning("%s fixed point stopped after %d iterations (residual %.3e)",
                       learner or value_rule, iters, residuals[-1])

    values = ValueTables.from_qv(Q, V)
    policy = awr_extract(data, values, beta, weights=w)
    return PretrainedCritic(values=values, policy=policy, learner=learner or value_rule,
                            residuals=tuple(residuals), converged=converged)


def fit_iql(data: Dataset, cfg: IqlConfig = IqlConfig()) -> PretrainedCritic:
    return fit_weighted_iql(data, None, "expectile", cfg.tau, cfg.beta, cfg.iters, cfg.tol, learner="iql")


def fit_sql(data: Dataset, cfg: SqlConfig = SqlConfig()) -> PretrainedCritic:
    return fit_weighted_iql(data, None, "sql", cfg.alpha, cfg.beta, cfg.iters, cfg.tol, learner="sql")


def pretrain(data: Dataset, learner: str, cfg: Union[IqlConfig, SqlConfig, None] = None) -> PretrainedCritic:
    if learner == "iql":
        return fit_iql(data, cfg or IqlConfig())
    if learner == "sql":
        return fit_sql(data, cfg or SqlConfig())
    raise RejectedInputError(f"unknown learner {learner!r}; expected one of {LEARNERS}")


def awr_extract(data: Dataset, adv: ValueTables, beta: float,
                weights: Optional[np.ndarray] = None) -> PolicyTable:
    """pi(a|s) proportional to count(s, a) * exp(beta * A(s, a)) over observed actions."""
    if not beta > 0.0:
        raise RejectedInputError(f"beta must be positive, got {beta}")
    W = weighted_counts(data, weights)
    seen = W > 0
    logits = np.where(seen, beta * adv.A, -np.inf)
    top = logits.max(axis=1, keepdims=True)
    observed = seen.any(axis=1)
    top[~observed] = 0.0
    unnorm = np.where(seen, W * np.exp(logits - top), 0.0)
    total = unnorm.sum(axis=1, keepdims=True)
    uniform = np.full_like(unnorm, 1.0 / data.n_actions)
    pi = np.where(observed[:, None], unnorm / np.where(total > 0, total, 1.0), uniform)
    n_unobserved = int((~observed).sum())
    if n_unobserved:
        logger.debug("awr extraction: %d states without data use the uniform policy", n_unobserved)
    return PolicyTable(pi)


def reweight_policy(mu: PolicyTable, adv: np.ndarray, beta: float) -> PolicyTable:
    """One exact advantage-weighted step: pi proportional to mu * exp(beta * A)."""
    if not beta > 0.0:
        raise RejectedInputError(f"beta must be positive, got {beta}")
    A = np.asarray(adv, dtype=float)
    support = mu.pi > 0
    logits = np.where(support, beta * A, -np.inf)
    unnorm = np.where(support, mu.pi * np.exp(logits - logits.max(axis=1, keepdims=True)), 0.0)
    return PolicyTable(unnorm / unnorm.sum(axis=1, keepdims=True))


def in_sample_optimal(mdp: TabularMDP, data: Dataset) -> Tuple[PolicyTable, ValueTables]:
    """Best policy restricted to actions seen at each state; unseen states use all actions."""
    if len(data) == 0:
        raise RejectedInputError("in-sample optimum needs a nonempty dataset")
    if (data.n_states, data.n_actions) != (mdp.n_states, mdp.n_actions):
        raise RejectedInputError("dataset shape does not match the MDP")
    values, policy = value_iteration(mdp, action_mask=data.support())
    return policy, values


def advantage_error(est: ValueTables, truth: ValueTables, data: Dataset,
                    eps_denom: Optional[float] = None) -> AdvantageErrorReport:
    """Mean relative advantage error over dataset records with |A_true| >= eps_denom."""
    if eps_denom is not None and not eps_denom > 0.0:
        raise RejectedInputError(f"eps_denom must be positive, got {eps_denom}")
    a_true = truth.A[data.s, data.a]
    a_est = est.A[data.s, data.a]
    if eps_denom is None:
        eps_denom = 1e-3 * float(np.max(np.abs(a_true))) if len(data) else 0.0
    keep = (np.abs(a_true) >= eps_denom) & (a_true != 0.0)
    n_kept = int(keep.sum())
    if n_kept == 0:
        raise UndefinedMetricError("every record fell under the advantage denominator guard")
    value = float(np.mean((a_est[keep] - a_true[keep]) / a_true[keep]))
    return AdvantageErrorReport(value=value, n_kept=n_kept, n_excluded=len(data) - n_kept,
                                eps_denom=float(eps_denom))


def min_max_normalize(values: np.ndarray) -> np.ndarray:
    """Scale to [0, 1]; constant input maps to 0.5."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        return values.copy()
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.full_like(values, 0.5)
    return (values - lo) / (hi - lo)


def normalized_advantage(critic: PretrainedCritic, data: Dataset) -> np.ndarray:
    """Per-record advantage of the critic, min-max scaled over ``data``."""
    return min_max_normalize(critic.values.A[data.s, data.a])


def _fmt(values: np.ndarray) -> str:
    return " ".join(format(float(x), ".17g") for x in np.ravel(values))


def save_critic(critic: PretrainedCritic, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_states, n_actions = critic.values.Q.shape
    lines = [
        CRITIC_FILE_MAGIC,
        f"learner={critic.learner} n_states={n_states} n_actions={n_actions} "
        f"converged={int(critic.converged)} iterations={len(critic.residuals)}",
        f"V {_fmt(critic.values.V)}",
    ]
    lines += [f"Q {s} {_fmt(critic.values.Q[s])}" for s in range(n_states)]
    lines += [f"pi {s} {_fmt(critic.policy.pi[s])}" for s in range(n_states)]
    path.write_text("\n".join(lines) + "\n")
    return path


def load_critic(path: Union[str, Path]) -> PretrainedCritic:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != CRITIC_FILE_MAGIC:
        raise RejectedInputError(f"{path} is not a critic file")
    header = dict(item.split("=", 1) for item in lines[1].split())
    n_states, n_actions = int(header["n_states"]), int(header["n_actions"])
    V = np.array(lines[2].split()[1:], dtype=float)
    Q = np.zeros((n_states, n_actions))
    pi = np.zeros((n_states, n_actions))
    for line in lines[3:]:
        tag, s, *rest = line.split()
        (Q if tag == "Q" else pi)[int(s)] = np.array(rest, dtype=float)
    return PretrainedCritic(values=ValueTables.from_qv(Q, V), policy=PolicyTable(pi),
                            learner=header["learner"], converged=header["converged"] == "1")


class LearnerTool:
    """Tool for pre-training offline critics."""

    name = "offline_learner"
    description = "Pre-train IQL or SQL critics on offline datasets and extract AWR policies"

    def __init__(self):
        self.critic: Optional[PretrainedCritic] = None

    def pretrain(self, data: Dataset, learner: str = "sql",
                 cfg: Union[IqlConfig, SqlConfig, None] = None) -> Dict[str, Any]:
        try:
            self.critic = pretrain(data, learner, cfg)
            residual = self.critic.residuals[-1] if self.critic.residuals else 0.0
            return {
                'success': True,
                'learner': learner,
                'iterations': len(self.critic.residuals),
                'converged': self.critic.converged,
                'message': f"Pre-trained {learner.upper()} on {len(data)} transitions "
                           f"({len(self.critic.residuals)} iterations, residual {residual:.2e})"
            }
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def save(self, path: Union[str, Path]) -> Dict[str, Any]:
        if self.critic is None:
            return {'success': False, 'error': 'No critic trained'}
        try:
            out = save_critic(self.critic, path)
            return {'success': True, 'path': str(out), 'message': f"Critic saved to {out}"}
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def run(self, action: str, **kwargs) -> Dict[str, Any]:
        actions = {
            'pretrain': lambda: self.pretrain(kwargs.get('data'), kwargs.get('learner', 'sql'), kwargs.get('cfg')),
            'save': lambda: self.save(kwargs.get('path', 'critic.txt')),
        }

        if action not in actions:
            return {'success': False, 'error': f'Unknown action: {action}'}

        return actions[action]()
