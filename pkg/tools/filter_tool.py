import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from .env_tool import Dataset, mix
from .errors import RejectedInputError, UndefinedMetricError
from .learner_tool import (
    IqlConfig,
    PretrainedCritic,
    fit_iql,
    fit_weighted_iql,
    normalized_advantage,
    weighted_counts,
)
from .mdp_tool import PolicyTable, TabularMDP, ValueTables, expected_return, value_iteration
from .score_tool import score_dataset

logger = logging.getLogger(__name__)

WEIGHT_MODES = ("indicator_times_g", "indicator_only")
BASELINES = ("merge_all", "dynamics_only", "value_only", "target_only")
QUANTILE_CONVENTION = "top_k_ceil_index_ties"


@dataclass(frozen=True)
class FilterConfig:
    """Filtering knobs. ``lam`` is written ``lambda`` in config files."""

    lam: float = 0.7
    xi: float = 0.5
    weight_mode: str = "indicator_times_g"
    quantile_convention: str = QUANTILE_CONVENTION

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise RejectedInputError(f"lambda must lie in [0, 1], got {self.lam}")
        if not 0.0 < self.xi <= 1.0:
            raise RejectedInputError(f"xi must lie in (0, 1], got {self.xi}")
        if self.weight_mode not in WEIGHT_MODES:
            raise RejectedInputError(f"weight_mode must be one of {WEIGHT_MODES}, got {self.weight_mode!r}")
        if self.quantile_convention != QUANTILE_CONVENTION:
            raise RejectedInputError(f"only the {QUANTILE_CONVENTION!r} quantile convention is supported")


@dataclass(frozen=True)
class SelectionReport:
    threshold: float
    selected_count: int
    total: int
    composition: Dict[str, int] = field(default_factory=dict)
    mean_g_selected: float = float("nan")

    def to_dict(self) -> Dict[str, Any]:
        return {
            "threshold": float(self.threshold),
            "selected_count": int(self.selected_count),
            "total": int(self.total),
            "composition": {str(k): int(v) for k, v in self.composition.items()},
            "mean_g_selected": float(self.mean_g_selected),
        }


@dataclass(frozen=True, eq=False)
class TrainReport:
    method: str
    values: ValueTables
    policy: PolicyTable
    residuals: Tuple[float, ...]
    converged: bool
    J_tar: Optional[float] = None
    normalized_score: Optional[float] = None
    selection: Optional[SelectionReport] = None
    config: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "method": self.method,
            "config": dict(self.config),
            "converged": bool(self.converged),
            "iterations": len(self.residuals),
            "residuals": [float(r) for r in self.residuals],
            "J_tar": None if self.J_tar is None else float(self.J_tar),
            "normalized_score": None if self.normalized_score is None else float(self.normalized_score),
            "selection": None if self.selection is None else self.selection.to_dict(),
        }

    def to_yaml(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=True, default_flow_style=False)

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_yaml())
        return path


def combined_score(h_norm: Any, a_norm: Any, lam: float) -> Any:
    """g = lam * h_norm + (1 - lam) * a_norm."""
    h = np.asarray(h_norm, dtype=float)
    a = np.asarray(a_norm, dtype=float)
    if not 0.0 <= lam <= 1.0:
        raise RejectedInputError(f"lambda must lie in [0, 1], got {lam}")
    for label, arr in (("h_norm", h), ("a_norm", a)):
        if arr.size and (np.any(arr < 0.0) or np.any(arr > 1.0) or not np.all(np.isfinite(arr))):
            raise RejectedInputError(f"{label} must lie in [0, 1]")
    g = lam * h + (1.0 - lam) * a
    g = np.clip(g, 0.0, 1.0)
    return float(g) if g.ndim == 0 else g


def select_top_quantile(g: Any, xi: float,
                        labels: Optional[Sequence[str]] = None) -> Tuple[np.ndarray, SelectionReport]:
    """Keep the ceil(xi * N) highest scores; equal scores go to the lower index first."""
    g = np.asarray(getattr(g, "normalized", g), dtype=float)
    if g.ndim != 1 or g.size == 0:
        raise RejectedInputError("selection needs a nonempty score vector")
    if not 0.0 < xi <= 1.0:
        raise RejectedInputError(f"xi must lie in (0, 1], got {xi}")
    n = g.size
    k = max(1, min(n, int(np.ceil(xi * n - 1e-9))))
    order = np.lexsort((np.arange(n), -g))
    chosen = order[:k]
    mask = np.zeros(n, dtype=bool)
    mask[chosen] = True

    composition: Dict[str, int] = {}
    if labels is not None:
        counts = pd.Series(np.asarray(labels, dtype=object)[mask]).value_counts()
        composition = {str(label): int(counts[label]) for label in sorted(counts.index)}
    report = SelectionReport(threshold=float(g[order[k - 1]]), selected_count=k, total=n,
                             composition=composition, mean_g_selected=float(g[mask].mean()))
    return mask, report


def normalized_score(J: float, J_random: float, J_expert: float) -> float:
    if J_expert == J_random:
        raise UndefinedMetricError("expert and random reference returns coincide")
    return 100.0 * (J - J_random) / (J_expert - J_random)


def reference_returns(mdp: TabularMDP) -> Tuple[float, float]:
    """(J_random, J_expert) on ``mdp``: uniform policy and the optimum."""
    _, expert = value_iteration(mdp)
    j_random = expected_return(mdp, PolicyTable.uniform(mdp.n_states, mdp.n_actions))
    return j_random, expected_return(mdp, expert)


def source_weights(d_src: Dataset, critic: PretrainedCritic, model: Any,
                   fcfg: FilterConfig) -> Tuple[np.ndarray, np.ndarray, SelectionReport]:
    """Per-record source weights, combined scores and the selection report."""
    h = score_dataset(model, d_src).normalized
    a = normalized_advantage(critic, d_src)
    g = combined_score(h, a, fcfg.lam)
    mask, report = select_top_quantile(g, fcfg.xi, d_src.quality)
    weights = mask * g if fcfg.weight_mode == "indicator_times_g" else mask.astype(float)
    return weights, g, report


def _report(method: str, critic: PretrainedCritic, target_mdp: Optional[TabularMDP],
            references: Optional[Tuple[float, float]], selection: Optional[SelectionReport],
            config: Dict[str, Any]) -> TrainReport:
    J_tar = expected_return(target_mdp, critic.policy) if target_mdp is not None else None
    score = None
    if J_tar is not None and references is not None:
        score = normalized_score(J_tar, *references)
    return TrainReport(method=method, values=critic.values, policy=critic.policy,
                       residuals=critic.residuals, converged=critic.converged, J_tar=J_tar,
                       normalized_score=score, selection=selection, config=config)


def train_dvdf(d_tar: Dataset, d_src: Dataset, critic: PretrainedCritic, model: Any,
               fcfg: FilterConfig = FilterConfig(), icfg: IqlConfig = IqlConfig(),
               target_mdp: Optional[TabularMDP] = None,
               references: Optional[Tuple[float, float]] = None,
               method: str = "dvdf") -> TrainReport:
    """Filtered, weighted IQL on the target data plus the selected source data.

    ``target_mdp`` is used only to evaluate the learned policy.
    """
    config = {"lambda": fcfg.lam, "xi": fcfg.xi, "weight_mode": fcfg.weight_mode,
              "tau": icfg.tau, "beta": icfg.beta}
    if len(d_src) == 0:
        fit = fit_iql(d_tar, icfg)
        return _report(method, fit, target_mdp, references, None, config)

    w_src, _, selection = source_weights(d_src, critic, model, fcfg)
    union = mix([d_tar, d_src]) if len(d_tar) else d_src
    weights = np.concatenate([np.ones(len(d_tar)), w_src])
    W = weighted_counts(union, weights)
    stranded = int(((W.sum(axis=1) == 0) & (weighted_counts(union).sum(axis=1) > 0)).sum())
    if stranded:
        logger.warning("%s: %d states keep no weighted data and fall back to the uniform policy", method, stranded)

    fit = fit_weighted_iql(union, weights, "expectile", icfg.tau, icfg.beta, icfg.iters, icfg.tol, learner=method)
    logger.info("%s selected %d/%d source records (threshold %.4f)",
                method, selection.selected_count, selection.total, selection.threshold)
    return _report(method, fit, target_mdp, references, selection, config)


def run_baseline(kind: str, d_tar: Dataset, d_src: Dataset, critic: PretrainedCritic, model: Any,
                 fcfg: FilterConfig = FilterConfig(), icfg: IqlConfig = IqlConfig(),
                 target_mdp: Optional[TabularMDP] = None,
                 references: Optional[Tuple[float, float]] = None) -> TrainReport:
    if kind == "dynamics_only":
        return train_dvdf(d_tar, d_src, critic, model, replace(fcfg, lam=1.0), icfg, target_mdp, references, kind)
    if kind == "value_only":
        return train_dvdf(d_tar, d_src, critic, model, replace(fcfg, lam=0.0), icfg, target_mdp, references, kind)
    config = {"tau": icfg.tau, "beta": icfg.beta}
    if kind == "merge_all":
        union = mix([d_tar, d_src])
        fit = fit_iql(union, icfg)
        selection = None
        if len(d_src):
            _, selection = select_top_quantile(np.ones(len(d_src)), 1.0, d_src.quality)
        return _report(kind, fit, target_mdp, references, selection, config)
    if kind == "target_only":
        return _report(kind, fit_iql(d_tar, icfg), target_mdp, references, None, config)
    raise RejectedInputError(f"unknown baseline {kind!r}; expected one of {BASELINES}")


class FilterTool:
    """Tool for running filtered training and its baselines."""

    name = "dvdf_filter"
    description = "Select source transitions by combined dynamics/value score and train the target policy"

    def __init__(self):
        self.reports: List[TrainReport] = []

    def train(self, **kwargs) -> Dict[str, Any]:
        try:
            report = train_dvdf(**kwargs)
            self.reports.append(report)
            return self._envelope(report)
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def baseline(self, kind: str, **kwargs) -> Dict[str, Any]:
        try:
            report = run_baseline(kind, **kwargs)
            self.reports.append(report)
            return self._envelope(report)
        except Exception as e:
            return {'success': False, 'error': str(e)}

    @staticmethod
    def _envelope(report: TrainReport) -> Dict[str, Any]:
        j = "n/a" if report.J_tar is None else f"{report.J_tar:.4f}"
        return {
            'success': True,
            'report': report,
            'J_tar': report.J_tar,
            'normalized_score': report.normalized_score,
            'message': f"{report.method}: J_tar {j} after {len(report.residuals)} iterations"
        }

    def run(self, action: str, **kwargs) -> Dict[str, Any]:
        """Main entry point for the tool."""
        actions = {
            'train': lambda: self.train(**kwargs),
            'baseline': lambda: self.baseline(kwargs.pop('kind', 'merge_all'), **kwargs),
        }

        if action not in actions:
            return {'success': False, 'error': f'Unknown action: {action}'}

        return actions[action]()
