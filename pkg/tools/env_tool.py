import logging
import shlex
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from .errors import RejectedInputError
from .mdp_tool import (
    PolicyTable,
    TabularMDP,
    expected_return,
    policy_kernel,
    save_mdp,
    terminal_states,
    tv_sup,
    value_iteration,
)

logger = logging.getLogger(__name__)

ACTION_STAY, ACTION_UP, ACTION_RIGHT, ACTION_DOWN, ACTION_LEFT = range(5)
N_GRID_ACTIONS = 5
_MOVES = {
    ACTION_STAY: (0, 0),
    ACTION_UP: (0, -1),
    ACTION_RIGHT: (1, 0),
    ACTION_DOWN: (0, 1),
    ACTION_LEFT: (-1, 0),
}
_LATERAL = {
    ACTION_UP: (ACTION_RIGHT, ACTION_LEFT),
    ACTION_DOWN: (ACTION_RIGHT, ACTION_LEFT),
    ACTION_RIGHT: (ACTION_UP, ACTION_DOWN),
    ACTION_LEFT: (ACTION_UP, ACTION_DOWN),
}

DOMAINS = ("source", "target")
QUALITIES = ("random", "medium", "expert", "mixture")
SHIFT_KINDS = ("action_block", "kernel_perturb", "sharpen")
DATASET_COLUMNS = ["s", "a", "r", "s_next", "done", "domain", "quality"]

Cell = Tuple[int, int]


@dataclass(frozen=True)
class GridSpec:
    """Gridworld layout. Cells are (x, y); state index is y * width + x."""

    width: int
    height: int
    terminal_cells: Tuple[Cell, ...] = ()
    reward_map: Dict[Cell, float] = field(default_factory=dict)
    slip_prob: float = 0.0
    gamma: float = 0.9
    seed: int = 0
    start_cells: Optional[Tuple[Cell, ...]] = None


@dataclass(frozen=True)
class ShiftSpec:
    """Dynamics shift applied to a base kernel.

    ``affected`` holds action ids or (s, a) pairs; empty means every pair.
    Absorbing zero-reward states are never shifted.

    action_block mixes a row toward the ``stay_action`` row, kernel_perturb
    toward seeded Dirichlet noise and sharpen toward its most likely next
    state. Sharpen leaves pairs that can reach an absorbing state alone.
    """

    kind: str = "action_block"
    affected: Tuple[Any, ...] = ()
    magnitude: float = 0.0
    seed: int = 0
    stay_action: int = ACTION_STAY


@dataclass(frozen=True)
class BehaviorSpec:
    """Behavior policy recipe.

    epsilon softens the greedy optimum toward uniform. For 'medium' a None
    epsilon is calibrated so the return sits halfway between random and
    expert.
    """

    quality: str = "random"
    epsilon: Optional[float] = None
    components: Tuple["BehaviorSpec", ...] = ()
    mixture_weights: Tuple[float, ...] = ()


@dataclass(frozen=True)
class DatasetRecord:
    s: int
    a: int
    r: float
    s_next: int
    done: bool
    domain: str
    quality: str


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-stored offline transitions with their known behavior policy."""

    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    s_next: np.ndarray
    done: np.ndarray
    domain: np.ndarray
    quality: np.ndarray
    behavior: PolicyTable
    gamma: float
    mdp_id: str = "mdp"
    seed: int = 0

    def __post_init__(self):
        columns = {
            "s": np.array(self.s, dtype=np.int64),
            "a": np.array(self.a, dtype=np.int64),
            "r": np.array(self.r, dtype=float),
            "s_next": np.array(self.s_next, dtype=np.int64),
            "done": np.array(self.done, dtype=bool),
            "domain": np.array(self.domain, dtype=object),
            "quality": np.array(self.quality, dtype=object),
        }
        n = len(columns["s"])
        for key, col in columns.items():
            if col.shape != (n,):
                raise RejectedInputError(f"column {key} has shape {col.shape}, expected ({n},)")
            col.setflags(write=False)
            object.__setattr__(self, key, col)

        n_states, n_actions = self.behavior.n_states, self.behavior.n_actions
        if n:
            for key, bound in (("s", n_states), ("s_next", n_states), ("a", n_actions)):
                col = columns[key]
                if col.min() < 0 or col.max() >= bound:
                    raise RejectedInputError(f"{key} ids outside [0, {bound})")
            if not np.all(np.isfinite(columns["r"])):
                raise RejectedInputError("rewards contain non-finite entries")
            if np.any(self.behavior.pi[columns["s"], columns["a"]] <= 0.0):
                raise RejectedInputError("a record's action has zero behavior probability")
            bad = set(columns["domain"]) - set(DOMAINS)
            if bad:
                raise RejectedInputError(f"unknown domain labels {sorted(bad)}")
        object.__setattr__(self, "gamma", float(self.gamma))

    def __len__(self) -> int:
        return len(self.s)

    @property
    def n_states(self) -> int:
        return self.behavior.n_states

    @property
    def n_actions(self) -> int:
        return self.behavior.n_actions

    def record(self, i: int) -> DatasetRecord:
        return DatasetRecord(int(self.s[i]), int(self.a[i]), float(self.r[i]), int(self.s_next[i]),
                             bool(self.done[i]), str(self.domain[i]), str(self.quality[i]))

    def counts(self) -> np.ndarray:
        """Visit counts per (s, a)."""
        out = np.zeros((self.n_states, self.n_actions))
        np.add.at(out, (self.s, self.a), 1.0)
        return out

    def support(self) -> np.ndarray:
        return self.counts() > 0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "s": self.s,
            "a": self.a,
            "r": self.r,
            "s_next": self.s_next,
            "done": self.done.astype(int),
            "domain": self.domain,
            "quality": self.quality,
        }, columns=DATASET_COLUMNS)

    def subset(self, index: np.ndarray) -> "Dataset":
        return Dataset(self.s[index], self.a[index], self.r[index], self.s_next[index], self.done[index],
                       self.domain[index], self.quality[index], self.behavior, self.gamma,
                       self.mdp_id, self.seed)

    @classmethod
    def empty(cls, n_states: int, n_actions: int, gamma: float, domain: str = "source",
              mdp_id: str = "empty") -> "Dataset":
        none_i = np.zeros(0, dtype=np.int64)
        return cls(none_i, none_i, np.zeros(0), none_i, np.zeros(0, dtype=bool),
                   np.zeros(0, dtype=object), np.zeros(0, dtype=object),
                   PolicyTable.uniform(n_states, n_actions), gamma, mdp_id)


def cell_index(spec: GridSpec, cell: Cell) -> int:
    x, y = cell
    if not (0 <= x < spec.width and 0 <= y < spec.height):
        raise RejectedInputError(f"cell {cell} outside a {spec.width}x{spec.height} grid")
    return y * spec.width + x


def _step(spec: GridSpec, s: int, action: int) -> int:
    x, y = s % spec.width, s // spec.width
    dx, dy = _MOVES[action]
    nx, ny = x + dx, y + dy
    if 0 <= nx < spec.width and 0 <= ny < spec.height:
        return ny * spec.width + nx
    return s


def make_gridworld(spec: GridSpec) -> TabularMDP:
    """Slippery gridworld with rewards paid on entering a cell."""
    if spec.width < 1 or spec.height < 1:
        raise RejectedInputError(f"degenerate grid {spec.width}x{spec.height}")
    if not 0.0 <= spec.slip_prob < 1.0:
        raise RejectedInputError(f"slip_prob must lie in [0, 1), got {spec.slip_prob}")

    n_states = spec.width * spec.height
    cell_reward = np.zeros(n_states)
    for cell, value in spec.reward_map.items():
        cell_reward[cell_index(spec, tuple(cell))] = float(value)
    terminal = np.zeros(n_states, dtype=bool)
    for cell in spec.terminal_cells:
        terminal[cell_index(spec, tuple(cell))] = True

    P = np.zeros((n_states, N_GRID_ACTIONS, n_states))
    for s in range(n_states):
        if terminal[s]:
            P[s, :, s] = 1.0
            continue
        P[s, ACTION_STAY, s] = 1.0
        for action, lateral in _LATERAL.items():
            P[s, action, _step(spec, s, action)] += 1.0 - spec.slip_prob
            for side in lateral:
                P[s, action, _step(spec, s, side)] += spec.slip_prob / 2.0

    r = P @ cell_reward
    r[terminal] = 0.0

    if spec.start_cells:
        rho0 = np.zeros(n_states)
        rho0[[cell_index(spec, tuple(c)) for c in spec.start_cells]] = 1.0
    else:
        rho0 = (~terminal).astype(float) if not terminal.all() else np.ones(n_states)
    rho0 /= rho0.sum()

    r_max = float(np.max(np.abs(cell_reward))) if cell_reward.size else 0.0
    name = f"grid{spec.width}x{spec.height}-slip{spec.slip_prob:g}"
    return TabularMDP(P=P, r=r, rho0=rho0, gamma=spec.gamma, r_max=r_max, name=name)


def _affected_mask(base: TabularMDP, shift: ShiftSpec) -> np.ndarray:
    if not shift.affected:
        mask = np.ones((base.n_states, base.n_actions), dtype=bool)
    else:
        mask = np.zeros((base.n_states, base.n_actions), dtype=bool)
        for item in shift.affected:
            if np.ndim(item) == 0:
                a = int(item)
                if not 0 <= a < base.n_actions:
                    raise RejectedInputError(f"affected action {a} outside [0, {base.n_actions})")
                mask[:, a] = True
            else:
                s, a = (int(v) for v in item)
                if not (0 <= s < base.n_states and 0 <= a < base.n_actions):
                    raise RejectedInputError(f"affected pair {(s, a)} out of range")
                mask[s, a] = True
    mask[terminal_states(base)] = False
    return mask


def apply_shift(base: TabularMDP, shift: ShiftSpec) -> TabularMDP:
    if not 0.0 <= shift.magnitude <= 1.0:
        raise RejectedInputError(f"shift magnitude must lie in [0, 1], got {shift.magnitude}")
    if shift.kind not in SHIFT_KINDS:
        raise RejectedInputError(f"unknown shift kind {shift.kind!r}")
    name = f"{base.name}|{shift.kind}{shift.magnitude:g}"
    if shift.magnitude == 0.0:
        return base.with_kernel(base.P.copy(), name)

    mask = _affected_mask(base, shift)
    m = shift.magnitude
    P = base.P.copy()
    ss, aa = np.nonzero(mask)
    if shift.kind == "action_block":
        if not 0 <= shift.stay_action < base.n_actions:
            raise RejectedInputError(f"stay action {shift.stay_action} out of range")
        P[ss, aa] = (1.0 - m) * base.P[ss, aa] + m * base.P[ss, shift.stay_action]
    elif shift.kind == "sharpen":
        keep = base.P[ss, aa][:, terminal_states(base)].sum(axis=1) > 0
        ss, aa = ss[~keep], aa[~keep]
        top = np.zeros((len(ss), base.n_states))
        top[np.arange(len(ss)), base.P[ss, aa].argmax(axis=1)] = 1.0
        P[ss, aa] = (1.0 - m) * base.P[ss, aa] + m * top
    else:
        rng = np.random.default_rng(shift.seed)
        noise = rng.dirichlet(np.ones(base.n_states), size=(base.n_states, base.n_actions))
        P[ss, aa] = (1.0 - m) * base.P[ss, aa] + m * noise[ss, aa]
        P[ss, aa] /= P[ss, aa].sum(axis=1, keepdims=True)
    return base.with_kernel(P, name)


def epsilon_greedy(greedy: PolicyTable, epsilon: float) -> PolicyTable:
    n_actions = greedy.n_actions
    return PolicyTable((1.0 - epsilon) * greedy.pi + epsilon / n_actions)


def calibrate_medium_epsilon(mdp: TabularMDP, greedy: PolicyTable, fraction: float = 0.5,
                             xtol: float = 1e-6) -> float:
    """Epsilon whose return is ``fraction`` of the way from uniform to expert."""
    j_expert = expected_return(mdp, greedy)
    j_random = expected_return(mdp, PolicyTable.uniform(mdp.n_states, mdp.n_actions))
    if not j_expert > j_random:
        logger.warning("medium calibration on %s has no spread (expert %.4f, random %.4f); using epsilon 0.5",
                       mdp.name, j_expert, j_random)
        return 0.5
    target = j_random + fraction * (j_expert - j_random)
    return float(brentq(lambda eps: expected_return(mdp, epsilon_greedy(greedy, eps)) - target,
                        0.0, 1.0, xtol=xtol))


def make_behavior(mdp: TabularMDP, spec: BehaviorSpec) -> PolicyTable:
    if spec.quality not in QUALITIES:
        raise RejectedInputError(f"unknown behavior quality {spec.quality!r}")
    if spec.epsilon is not None and not 0.0 <= spec.epsilon <= 1.0:
        raise RejectedInputError(f"epsilon must lie in [0, 1], got {spec.epsilon}")

    if spec.quality == "random":
        return PolicyTable.uniform(mdp.n_states, mdp.n_actions)
    if spec.quality == "mixture":
        if not spec.components or len(spec.components) != len(spec.mixture_weights):
            raise RejectedInputError("mixture behavior needs one weight per component")
        weights = np.asarray(spec.mixture_weights, dtype=float)
        if np.any(weights < 0) or weights.sum() <= 0:
            raise RejectedInputError("mixture weights must be nonnegative with positive sum")
        weights = weights / weights.sum()
        pi = sum(w * make_behavior(mdp, c).pi for w, c in zip(weights, spec.components))
        return PolicyTable(pi / pi.sum(axis=1, keepdims=True))

    _, greedy = value_iteration(mdp)
    if spec.quality == "expert":
        return epsilon_greedy(greedy, spec.epsilon or 0.0)
    epsilon = spec.epsilon
    if epsilon is None:
        epsilon = calibrate_medium_epsilon(mdp, greedy)
        logger.info("calibrated medium epsilon on %s: %.4f", mdp.name, epsilon)
    return epsilon_greedy(greedy, epsilon)


def episode_horizon(gamma: float) -> int:
    return int(np.ceil(np.log(1e-6) / np.log(gamma)))


def _draw(cumulative: np.ndarray, u: float) -> int:
    return int(np.searchsorted(cumulative, u * cumulative[-1], side="right"))


def collect(mdp: TabularMDP, mu: PolicyTable, n: int, seed: int,
            domain: str = "source", quality: str = "random") -> Dataset:
    """Episodic rollouts from rho0 under ``mu``.

    An episode ends on entering a terminal state or after
    ``episode_horizon(gamma)`` steps.
    """
    if n < 0:
        raise RejectedInputError(f"n must be nonnegative, got {n}")
    mu.check_compatible(mdp)
    rng = np.random.default_rng(seed)
    horizon = episode_horizon(mdp.gamma)
    terminal = terminal_states(mdp)
    cum_rho = np.cumsum(mdp.rho0)
    cum_pi = np.cumsum(mu.pi, axis=1)
    cum_P = np.cumsum(mdp.P, axis=2)

    s_col = np.zeros(n, dtype=np.int64)
    a_col = np.zeros(n, dtype=np.int64)
    next_col = np.zeros(n, dtype=np.int64)
    done_col = np.zeros(n, dtype=bool)
    s, t = _draw(cum_rho, rng.random()), 0
    for i in range(n):
        a = _draw(cum_pi[s], rng.random())
        s_next = _draw(cum_P[s, a], rng.random())
        done = bool(terminal[s_next])
        s_col[i], a_col[i], next_col[i], done_col[i] = s, a, s_next, done
        t += 1
        if done or t >= horizon:
            s, t = _draw(cum_rho, rng.random()), 0
        else:
            s = s_next
    return Dataset(
        s=s_col, a=a_col, r=mdp.r[s_col, a_col], s_next=next_col, done=done_col,
        domain=np.full(n, domain, dtype=object), quality=np.full(n, quality, dtype=object),
        behavior=mu, gamma=mdp.gamma, mdp_id=mdp.name, seed=seed,
    )


def mix(datasets: Sequence[Dataset]) -> Dataset:
    """Concatenate datasets, keeping per-record labels.

    The stored behavior is the count-weighted mixture of the components.
    """
    if not datasets:
        raise RejectedInputError("mix needs at least one dataset")
    if len(datasets) == 1:
        return datasets[0]
    first = datasets[0]
    for other in datasets[1:]:
        if (other.n_states, other.n_actions) != (first.n_states, first.n_actions) or other.gamma != first.gamma:
            raise RejectedInputError("cannot mix datasets over different MDP shapes or discounts")

    sizes = np.array([len(d) for d in datasets], dtype=float)
    weights = sizes / sizes.sum() if sizes.sum() > 0 else np.full(len(datasets), 1.0 / len(datasets))
    behavior = sum(w * d.behavior.pi for w, d in zip(weights, datasets))
    mdp_ids = list(dict.fromkeys(d.mdp_id for d in datasets))
    return Dataset(
        s=np.concatenate([d.s for d in datasets]),
        a=np.concatenate([d.a for d in datasets]),
        r=np.concatenate([d.r for d in datasets]),
        s_next=np.concatenate([d.s_next for d in datasets]),
        done=np.concatenate([d.done for d in datasets]),
        domain=np.concatenate([d.domain for d in datasets]),
        quality=np.concatenate([d.quality for d in datasets]),
        behavior=PolicyTable(behavior / behavior.sum(axis=1, keepdims=True)),
        gamma=first.gamma,
        mdp_id="+".join(mdp_ids),
        seed=first.seed,
    )


def medium_expert(mdp: TabularMDP, n: int, seed: int, domain: str = "source") -> Dataset:
    """50-50 concatenation of medium and expert data."""
    medium = collect(mdp, make_behavior(mdp, BehaviorSpec("medium")), n // 2, seed, domain, "medium")
    expert = collect(mdp, make_behavior(mdp, BehaviorSpec("expert")), n - n // 2, seed + 1, domain, "expert")
    return mix([medium, expert])


def episode_state_profile(mdp: TabularMDP, mu: PolicyTable) -> np.ndarray:
    """Long-run fraction of records at each state under ``collect``."""
    P_pi, _ = policy_kernel(mdp, mu)
    keep = ~terminal_states(mdp)
    mass = mdp.rho0.copy()
    visits = np.zeros(mdp.n_states)
    for _ in range(episode_horizon(mdp.gamma)):
        visits += mass
        mass = (mass @ P_pi) * keep
        if mass.sum() < 1e-15:
            break
    return visits / visits.sum()


def monte_carlo_return(mdp: TabularMDP, pi: PolicyTable, n_rollouts: int, seed: int,
                       horizon: Optional[int] = None) -> Tuple[float, float]:
    """Mean discounted return over vectorized rollouts and its standard error."""
    pi.check_compatible(mdp)
    rng = np.random.default_rng(seed)
    horizon = horizon or int(np.ceil(np.log(1e-8) / np.log(mdp.gamma)))
    cum_pi = np.cumsum(pi.pi, axis=1)
    cum_P = np.cumsum(mdp.P, axis=2)

    def draw(cum_rows: np.ndarray) -> np.ndarray:
        u = rng.random(cum_rows.shape[0]) * cum_rows[:, -1]
        return np.minimum((cum_rows <= u[:, None]).sum(axis=1), cum_rows.shape[1] - 1)

    states = draw(np.broadcast_to(np.cumsum(mdp.rho0), (n_rollouts, mdp.n_states)))
    returns = np.zeros(n_rollouts)
    discount = 1.0
    for _ in range(horizon):
        actions = draw(cum_pi[states])
        returns += discount * mdp.r[states, actions]
        states = draw(cum_P[states, actions])
        discount *= mdp.gamma
    return float(returns.mean()), float(returns.std(ddof=1) / np.sqrt(n_rollouts))


def _label(column: np.ndarray, default: str) -> str:
    values = list(dict.fromkeys(column))
    if not values:
        return default
    return values[0] if len(values) == 1 else "mixed"


def save_dataset(data: Dataset, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    behavior = ";".join(format(float(x), ".17g") for x in data.behavior.pi.ravel())
    header = (
        f"# count={len(data)} mdp_id={shlex.quote(data.mdp_id)} "
        f"domain={shlex.quote(_label(data.domain, 'none'))} "
        f"quality={shlex.quote(_label(data.quality, 'none'))} seed={data.seed} n_states={data.n_states} "
        f"n_actions={data.n_actions} gamma={data.gamma!r} behavior={behavior}"
    )
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        data.to_frame().to_csv(fh, index=False, float_format="%.17g", lineterminator="\n")
    return path


def load_dataset(path: Union[str, Path]) -> Dataset:
    path = Path(path)
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
    if not first.startswith("# count="):
        raise RejectedInputError(f"{path} has no dataset header")
    header = dict(item.split("=", 1) for item in shlex.split(first[2:]))
    n_states, n_actions = int(header["n_states"]), int(header["n_actions"])
    behavior = np.array(header["behavior"].split(";"), dtype=float).reshape(n_states, n_actions)
    frame = pd.read_csv(path, skiprows=1, dtype={"domain": str, "quality": str}, keep_default_na=False)
    if len(frame) != int(header["count"]):
        raise RejectedInputError(f"{path}: header count {header['count']} but {len(frame)} records")
    return Dataset(
        s=frame["s"].to_numpy(dtype=np.int64),
        a=frame["a"].to_numpy(dtype=np.int64),
        r=frame["r"].to_numpy(dtype=float),
        s_next=frame["s_next"].to_numpy(dtype=np.int64),
        done=frame["done"].to_numpy(dtype=int).astype(bool),
        domain=frame["domain"].to_numpy(dtype=object),
        quality=frame["quality"].to_numpy(dtype=object),
        behavior=PolicyTable(behavior),
        gamma=float(header["gamma"]),
        mdp_id=header["mdp_id"],
        seed=int(header["seed"]),
    )


class EnvTool:
    """Tool for building domain pairs and offline datasets."""

    name = "env_builder"
    description = "Build gridworld source/target pairs, behavior policies and offline datasets"

    def __init__(self):
        self.mdps: Dict[str, TabularMDP] = {}
        self.datasets: Dict[str, Dataset] = {}

    def make_mdps(self, grid: GridSpec, shift: ShiftSpec) -> Dict[str, Any]:
        """Build the target (base) MDP and the shifted source MDP."""
        try:
            target = make_gridworld(grid)
            source = apply_shift(target, shift)
            self.mdps = {"target": target, "source": source}
            tv = tv_sup(source, target)
            return {
                'success': True,
                'n_states': target.n_states,
                'n_actions': target.n_actions,
                'tv_sup': tv,
                'message': f"Built {target.name} with shifted source (sup TV {tv:.4f})"
            }
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def collect_dataset(self, key: str, mdp_key: str, behavior: BehaviorSpec, n: int, seed: int,
                        domain: str, quality: Optional[str] = None) -> Dict[str, Any]:
        if mdp_key not in self.mdps:
            return {'success': False, 'error': f'No MDP named {mdp_key}'}
        try:
            mdp = self.mdps[mdp_key]
            mu = make_behavior(mdp, behavior)
            data = collect(mdp, mu, n, seed, domain, quality or behavior.quality)
            self.datasets[key] = data
            return {
                'success': True,
                'records': len(data),
                'message': f"Collected {len(data)} {domain} transitions ({quality or behavior.quality}) into {key}"
            }
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def save(self, out_dir: Union[str, Path]) -> Dict[str, Any]:
        try:
            out_dir = Path(out_dir)
            files: List[str] = []
            for key, mdp in self.mdps.items():
                files.append(str(save_mdp(mdp, out_dir / f"{key}_mdp.txt")))
            for key, data in self.datasets.items():
                files.append(str(save_dataset(data, out_dir / f"{key}.csv")))
            return {'success': True, 'files': files, 'message': f"Wrote {len(files)} files to {out_dir}"}
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def run(self, action: str, **kwargs) -> Dict[str, Any]:
        """Main entry point for the tool."""
        actions = {
            'make_mdps': lambda: self.make_mdps(kwargs.get('grid'), kwargs.get('shift', ShiftSpec())),
            'collect': lambda: self.collect_dataset(
                kwargs.get('key', 'data'), kwargs.get('mdp_key', 'target'),
                kwargs.get('behavior', BehaviorSpec()), kwargs.get('n', 0), kwargs.get('seed', 0),
                kwargs.get('domain', 'target'), kwargs.get('quality')),
            'save': lambda: self.save(kwargs.get('out_dir', 'output')),
        }

        if action not in actions:
            return {'success': False, 'error': f'Unknown action: {action}'}

        return actions[action]()
