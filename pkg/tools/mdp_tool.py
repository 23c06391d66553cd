"""Exact tabular MDP machinery.

Everything here is a pure function of immutable inputs: value iteration,
exact policy evaluation, discounted occupancy, kernel TV distance and the
performance bounds that compare two domains differing only in P.

Occupancy convention: ``occupancy`` returns the UNNORMALIZED discounted
state visitation d(s) = sum_t gamma^t Pr(s_t = s), which sums to
1 / (1 - gamma). Under this convention the performance-difference identity
J(mu) - J(pi) = sum_s d_mu(s) sum_a mu(a|s) A_pi(s, a) holds with no extra
factor.
"""

import logging
import shlex
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from .errors import DomainMismatchError, RejectedInputError

logger = logging.getLogger(__name__)

PROB_ATOL = 1e-12
SOLVER_TOL = 1e-10
DIRECT_SOLVE_MAX_STATES = 200
MDP_FILE_MAGIC = "# tabular-mdp v1"


def _frozen(values: Any) -> np.ndarray:
    out = np.array(values, dtype=float, copy=True)
    out.setflags(write=False)
    return out


def _check_distribution_rows(table: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(table)):
        raise RejectedInputError(f"{what} contains non-finite entries")
    if np.any(table < 0.0) or np.any(table > 1.0):
        raise RejectedInputError(f"{what} has entries outside [0, 1]")
    sums = table.sum(axis=-1)
    worst = float(np.max(np.abs(sums - 1.0))) if sums.size else 0.0
    if worst > PROB_ATOL:
        raise RejectedInputError(f"{what} rows do not sum to 1 (max deviation {worst:.3e})")


@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Finite MDP (S, A, P, r, rho0, gamma) with an explicit reward bound."""

    P: np.ndarray
    r: np.ndarray
    rho0: np.ndarray
    gamma: float
    r_max: Optional[float] = None
    name: str = "mdp"

    def __post_init__(self):
        P, r, rho0 = _frozen(self.P), _frozen(self.r), _frozen(self.rho0)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or P.shape[0] == 0 or P.shape[1] == 0:
            raise RejectedInputError(f"P must have shape (S, A, S), got {P.shape}")
        n_states, n_actions = P.shape[0], P.shape[1]
        if r.shape != (n_states, n_actions):
            raise RejectedInputError(f"r must have shape {(n_states, n_actions)}, got {r.shape}")
        if rho0.shape != (n_states,):
            raise RejectedInputError(f"rho0 must have shape {(n_states,)}, got {rho0.shape}")
        if not np.all(np.isfinite(r)):
            raise RejectedInputError("r contains non-finite entries")
        gamma = float(self.gamma)
        if not np.isfinite(gamma) or not 0.0 < gamma < 1.0:
            raise RejectedInputError(f"gamma must lie in (0, 1), got {self.gamma}")
        _check_distribution_rows(P, "P")
        _check_distribution_rows(rho0, "rho0")

        r_max = float(np.max(np.abs(r))) if self.r_max is None else float(self.r_max)
        if not np.isfinite(r_max) or r_max < 0.0:
            raise RejectedInputError(f"r_max must be a nonnegative real, got {self.r_max}")
        if np.max(np.abs(r)) > r_max + PROB_ATOL:
            raise RejectedInputError(f"|r| exceeds r_max={r_max}")

        object.__setattr__(self, "P", P)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "rho0", rho0)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "r_max", r_max)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @property
    def n_actions(self) -> int:
        return self.P.shape[1]

    def with_kernel(self, P: np.ndarray, name: Optional[str] = None) -> "TabularMDP":
        """Same rewards, start distribution and discount under a new kernel."""
        return replace(self, P=P, name=name or self.name)


@dataclass(frozen=True, eq=False)
class PolicyTable:
    pi: np.ndarray

    def __post_init__(self):
        pi = _frozen(self.pi)
        if pi.ndim != 2 or pi.shape[0] == 0 or pi.shape[1] == 0:
            raise RejectedInputError(f"policy must have shape (S, A), got {pi.shape}")
        _check_distribution_rows(pi, "policy")
        object.__setattr__(self, "pi", pi)

    @property
    def n_states(self) -> int:
        return self.pi.shape[0]

    @property
    def n_actions(self) -> int:
        return self.pi.shape[1]

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "PolicyTable":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions: np.ndarray, n_actions: int) -> "PolicyTable":
        actions = np.asarray(actions, dtype=int)
        pi = np.zeros((actions.shape[0], n_actions))
        pi[np.arange(actions.shape[0]), actions] = 1.0
        return cls(pi)

    def check_compatible(self, mdp: TabularMDP) -> None:
        if self.pi.shape != (mdp.n_states, mdp.n_actions):
            raise RejectedInputError(
                f"policy shape {self.pi.shape} does not match MDP {(mdp.n_states, mdp.n_actions)}"
            )


@dataclass(frozen=True, eq=False)
class ValueTables:
    """Q, V and A = Q - V for one policy or learner."""

    Q: np.ndarray
    V: np.ndarray
    A: np.ndarray

    def __post_init__(self):
        Q, V, A = _frozen(self.Q), _frozen(self.V), _frozen(self.A)
        if Q.ndim != 2 or V.shape != (Q.shape[0],) or A.shape != Q.shape:
            raise RejectedInputError(f"inconsistent value table shapes Q{Q.shape} V{V.shape} A{A.shape}")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(V))):
            raise RejectedInputError("value tables contain non-finite entries")
        if np.max(np.abs(A - (Q - V[:, None]))) > PROB_ATOL:
            raise RejectedInputError("A must equal Q - V elementwise")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "A", A)

    @classmethod
    def from_qv(cls, Q: np.ndarray, V: np.ndarray) -> "ValueTables":
        Q = np.asarray(Q, dtype=float)
        V = np.asarray(V, dtype=float)
        return cls(Q=Q, V=V, A=Q - V[:, None])


@dataclass(frozen=True, eq=False)
class OccupancyVector:
    d: np.ndarray
    sa: np.ndarray


@dataclass(frozen=True)
class BoundConstants:
    C1: float
    C2: float


@dataclass(frozen=True)
class BoundReport:
    """Both sides of a bound or identity.

    kind 'bound' checks lhs <= rhs, 'lower_bound' checks lhs >= rhs and
    'identity' checks lhs == rhs, each up to ``tol``.
    """

    name: str
    kind: str
    lhs: float
    rhs: float
    tol: float
    components: Dict[str, float] = field(default_factory=dict)

    @property
    def slack(self) -> float:
        if self.kind == "bound":
            return self.rhs - self.lhs
        if self.kind == "lower_bound":
            return self.lhs - self.rhs
        return abs(self.lhs - self.rhs)

    @property
    def holds(self) -> bool:
        if self.kind == "identity":
            return self.slack <= self.tol
        return self.slack >= -self.tol

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "kind": self.kind,
            "lhs": float(self.lhs),
            "rhs": float(self.rhs),
            "slack": float(self.slack),
            "tol": float(self.tol),
            "holds": bool(self.holds),
            "components": {k: float(v) for k, v in self.components.items()},
        }


def bound_constants(gamma: float, r_max: float) -> BoundConstants:
    scale = r_max / (1.0 - gamma) ** 2
    return BoundConstants(C1=2.0 * gamma * scale, C2=(2.0 * gamma + 2.0) * scale)


def _resolve_mask(action_mask: Optional[np.ndarray], mdp: TabularMDP) -> np.ndarray:
    if action_mask is None:
        return np.ones((mdp.n_states, mdp.n_actions), dtype=bool)
    mask = np.asarray(action_mask, dtype=bool)
    if mask.shape != (mdp.n_states, mdp.n_actions):
        raise RejectedInputError(f"action mask shape {mask.shape} does not match MDP")
    mask = mask.copy()
    mask[~mask.any(axis=1)] = True
    return mask


def greedy_policy(Q: np.ndarray, action_mask: Optional[np.ndarray] = None,
                  atol: float = 1e-10) -> PolicyTable:
    """Deterministic greedy policy; ties within ``atol`` go to the lowest action index."""
    Q = np.asarray(Q, dtype=float)
    mask = np.ones(Q.shape, dtype=bool) if action_mask is None else np.asarray(action_mask, dtype=bool)
    masked = np.where(mask, Q, -np.inf)
    best = masked.max(axis=1, keepdims=True)
    actions = (masked >= best - atol).argmax(axis=1)
    return PolicyTable.deterministic(actions, Q.shape[1])


def value_iteration(mdp: TabularMDP, tol: float = SOLVER_TOL,
                    action_mask: Optional[np.ndarray] = None,
                    max_iters: int = 200_000) -> Tuple[ValueTables, PolicyTable]:
    """Optimal values by value iteration.

    With ``action_mask`` the max at each state runs over the masked actions
    only; states whose mask row is empty fall back to the full action set.
    The returned V has Bellman residual at most ``tol``.
    """
    if not tol > 0:
        raise RejectedInputError(f"tol must be positive, got {tol}")
    mask = _resolve_mask(action_mask, mdp)
    V = np.zeros(mdp.n_states)
    for _ in range(max_iters):
        Q = mdp.r + mdp.gamma * (mdp.P @ V)
        V_next = np.where(mask, Q, -np.inf).max(axis=1)
        delta = float(np.max(np.abs(V_next - V)))
        V = V_next
        if delta <= tol:
            break
    else:
        logger.warning("value iteration on %s stopped after %d iterations (delta %.3e)",
                       mdp.name, max_iters, delta)
    Q = mdp.r + mdp.gamma * (mdp.P @ V)
    return ValueTables.from_qv(Q, V), greedy_policy(Q, mask)


def _solve_discounted(K: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    """Solve x = b + gamma * K x."""
    n = K.shape[0]
    if n <= DIRECT_SOLVE_MAX_STATES:
        return np.linalg.solve(np.eye(n) - gamma * K, b)
    x = b.copy()
    while True:
        x_next = b + gamma * (K @ x)
        if np.max(np.abs(x_next - x)) <= SOLVER_TOL:
            return x_next
        x = x_next


def policy_kernel(mdp: TabularMDP, pi: PolicyTable) -> Tuple[np.ndarray, np.ndarray]:
    """State-to-state kernel P_pi and expected reward r_pi under ``pi``."""
    pi.check_compatible(mdp)
    P_pi = np.einsum("sa,sat->st", pi.pi, mdp.P)
    r_pi = np.sum(pi.pi * mdp.r, axis=1)
    return P_pi, r_pi


def policy_evaluation(mdp: TabularMDP, pi: PolicyTable) -> ValueTables:
    P_pi, r_pi = policy_kernel(mdp, pi)
    V = _solve_discounted(P_pi, r_pi, mdp.gamma)
    Q = mdp.r + mdp.gamma * (mdp.P @ V)
    return ValueTables.from_qv(Q, V)


def expected_return(mdp: TabularMDP, pi: PolicyTable) -> float:
    return float(mdp.rho0 @ policy_evaluation(mdp, pi).V)


def occupancy(mdp: TabularMDP, pi: PolicyTable) -> OccupancyVector:
    P_pi, _ = policy_kernel(mdp, pi)
    d = _solve_discounted(P_pi.T, mdp.rho0, mdp.gamma)
    return OccupancyVector(d=d, sa=d[:, None] * pi.pi)


def check_same_domain(src: TabularMDP, tar: TabularMDP) -> None:
    """Raise unless the two MDPs differ in their transition kernels only."""
    if src.P.shape != tar.P.shape:
        raise DomainMismatchError(f"shape mismatch: {src.P.shape} vs {tar.P.shape}")
    if not np.array_equal(src.r, tar.r):
        raise DomainMismatchError("reward tables differ")
    if not np.array_equal(src.rho0, tar.rho0):
        raise DomainMismatchError("initial distributions differ")
    if src.gamma != tar.gamma:
        raise DomainMismatchError(f"discounts differ: {src.gamma} vs {tar.gamma}")
    if src.r_max != tar.r_max:
        raise DomainMismatchError(f"reward bounds differ: {src.r_max} vs {tar.r_max}")


def tv_sup(src: TabularMDP, tar: TabularMDP) -> float:
    check_same_domain(src, tar)
    return float(0.5 * np.abs(src.P - tar.P).sum(axis=2).max())


def lemma1_bound(src: TabularMDP, tar: TabularMDP, pi: PolicyTable,
                 constants: Optional[BoundConstants] = None) -> BoundReport:
    """|J_tar(pi) - J_src(pi)| <= C1 * sup TV."""
    tv = tv_sup(src, tar)
    constants = constants or bound_constants(src.gamma, src.r_max)
    j_src = expected_return(src, pi)
    j_tar = expected_return(tar, pi)
    return BoundReport(
        name="lemma1",
        kind="bound",
        lhs=abs(j_tar - j_src),
        rhs=constants.C1 * tv,
        tol=1e-9,
        components={"J_src": j_src, "J_tar": j_tar, "tv_sup": tv, "C1": constants.C1},
    )


def prop1_bound(src: TabularMDP, tar: TabularMDP, pi: PolicyTable, pi_insrc: PolicyTable,
                constants: Optional[BoundConstants] = None) -> BoundReport:
    """SubOpt <= value misalignment + C2 * sup TV + eps_opt."""
    tv = tv_sup(src, tar)
    constants = constants or bound_constants(src.gamma, src.r_max)
    _, pi_star_tar = value_iteration(tar)
    _, pi_star_src = value_iteration(src)

    subopt = abs(expected_return(tar, pi) - expected_return(tar, pi_star_tar))
    j_src_pi = expected_return(src, pi)
    j_src_insrc = expected_return(src, pi_insrc)
    j_src_star = expected_return(src, pi_star_src)
    value_misalignment = abs(j_src_pi - j_src_insrc)
    dyn_term = constants.C2 * tv
    eps_opt = j_src_star - j_src_insrc
    return BoundReport(
        name="prop1",
        kind="bound",
        lhs=subopt,
        rhs=value_misalignment + dyn_term + eps_opt,
        tol=1e-9,
        components={
            "SubOpt": subopt,
            "value_misalignment": value_misalignment,
            "dyn_term": dyn_term,
            "eps_opt": eps_opt,
            "tv_sup": tv,
            "C2": constants.C2,
        },
    )


def terminal_states(mdp: TabularMDP) -> np.ndarray:
    """Boolean mask of absorbing zero-reward states."""
    idx = np.arange(mdp.n_states)
    self_loop = np.all(mdp.P[idx, :, idx] == 1.0, axis=1)
    return self_loop & np.all(mdp.r == 0.0, axis=1)


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float,
               r_max: float = 1.0, concentration: float = 0.5, name: str = "random") -> TabularMDP:
    P = rng.dirichlet(np.full(n_states, concentration), size=(n_states, n_actions))
    P /= P.sum(axis=2, keepdims=True)
    r = rng.uniform(-r_max, r_max, size=(n_states, n_actions))
    rho0 = rng.dirichlet(np.ones(n_states))
    return TabularMDP(P=P, r=r, rho0=rho0 / rho0.sum(), gamma=gamma, r_max=r_max, name=name)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int,
                  concentration: float = 1.0) -> PolicyTable:
    pi = rng.dirichlet(np.full(n_actions, concentration), size=n_states)
    return PolicyTable(pi / pi.sum(axis=1, keepdims=True))


def perturb_kernel(mdp: TabularMDP, rng: np.random.Generator, magnitude: float,
                   name: Optional[str] = None) -> TabularMDP:
    """Mix every kernel row with a random row; r, rho0 and gamma are kept."""
    if not 0.0 <= magnitude <= 1.0:
        raise RejectedInputError(f"magnitude must lie in [0, 1], got {magnitude}")
    noise = rng.dirichlet(np.ones(mdp.n_states), size=(mdp.n_states, mdp.n_actions))
    P = (1.0 - magnitude) * mdp.P + magnitude * noise
    P /= P.sum(axis=2, keepdims=True)
    return mdp.with_kernel(P, name or f"{mdp.name}~{magnitude:g}")


def tight_lemma1_pair(gamma: float, r_max: float = 1.0,
                      delta: float = 1e-3) -> Tuple[TabularMDP, TabularMDP]:
    """Two-state pair on which Lemma 1 is tight as delta -> 0.

    State 0 pays +r_max and state 1 pays -r_max, both absorbing in the
    source; the target leaks ``delta`` mass from 0 to 1 each step.
    """
    r = np.array([[r_max], [-r_max]])
    rho0 = np.array([1.0, 0.0])
    P_src = np.array([[[1.0, 0.0]], [[0.0, 1.0]]])
    P_tar = np.array([[[1.0 - delta, delta]], [[0.0, 1.0]]])
    src = TabularMDP(P=P_src, r=r, rho0=rho0, gamma=gamma, r_max=r_max, name="tight-src")
    return src, src.with_kernel(P_tar, "tight-tar")


def empirical_mdp(data: Any, rho0: Optional[np.ndarray] = None,
                  name: str = "empirical") -> TabularMDP:
    """Maximum-likelihood MDP from the counts of a dataset.

    ``data`` needs ``s``, ``a``, ``r``, ``s_next`` columns plus ``n_states``,
    ``n_actions`` and ``gamma``. Unobserved pairs self-loop with zero reward.
    """
    n_states, n_actions = data.n_states, data.n_actions
    counts = np.zeros((n_states, n_actions, n_states))
    np.add.at(counts, (data.s, data.a, data.s_next), 1.0)
    reward_sum = np.zeros((n_states, n_actions))
    np.add.at(reward_sum, (data.s, data.a), data.r)
    n_sa = counts.sum(axis=2)
    seen = n_sa > 0

    P = np.zeros_like(counts)
    P[seen] = counts[seen] / n_sa[seen][:, None]
    unseen_s, unseen_a = np.nonzero(~seen)
    P[unseen_s, unseen_a, unseen_s] = 1.0
    r = np.where(seen, reward_sum / np.maximum(n_sa, 1.0), 0.0)
    if rho0 is None:
        rho0 = np.full(n_states, 1.0 / n_states)
    return TabularMDP(P=P, r=r, rho0=rho0, gamma=data.gamma, name=name)


def _fmt(values: np.ndarray) -> str:
    return " ".join(format(float(x), ".17g") for x in np.ravel(values))


def save_mdp(mdp: TabularMDP, path: Union[str, Path]) -> Path:
    if "\n" in mdp.name:
        raise RejectedInputError(f"MDP name {mdp.name!r} spans lines")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        MDP_FILE_MAGIC,
        f"n_states={mdp.n_states} n_actions={mdp.n_actions} gamma={mdp.gamma!r} "
        f"r_max={mdp.r_max!r} name={shlex.quote(mdp.name)}",
        f"rho0 {_fmt(mdp.rho0)}",
    ]
    for s in range(mdp.n_states):
        for a in range(mdp.n_actions):
            lines.append(f"P {s} {a} {_fmt(mdp.P[s, a])}")
    for s in range(mdp.n_states):
        lines.append(f"r {s} {_fmt(mdp.r[s])}")
    path.write_text("\n".join(lines) + "\n")
    return path


def load_mdp(path: Union[str, Path]) -> TabularMDP:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != MDP_FILE_MAGIC:
        raise RejectedInputError(f"{path} is not a tabular MDP file")
    header = dict(item.split("=", 1) for item in shlex.split(lines[1]))
    n_states, n_actions = int(header["n_states"]), int(header["n_actions"])
    P = np.full((n_states, n_actions, n_states), np.nan)
    r = np.full((n_states, n_actions), np.nan)
    rho0 = None
    for line in lines[2:]:
        tag, *rest = line.split()
        if tag == "rho0":
            rho0 = np.array(rest, dtype=float)
        elif tag == "P":
            P[int(rest[0]), int(rest[1])] = np.array(rest[2:], dtype=float)
        elif tag == "r":
            r[int(rest[0])] = np.array(rest[1:], dtype=float)
        else:
            raise RejectedInputError(f"unknown line tag {tag!r} in {path}")
    if rho0 is None:
        raise RejectedInputError(f"{path} has no rho0 line")
    return TabularMDP(P=P, r=r, rho0=rho0, gamma=float(header["gamma"]),
                      r_max=float(header["r_max"]), name=header.get("name", "mdp"))
