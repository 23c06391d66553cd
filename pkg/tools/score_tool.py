"""Dynamics-alignment scoring.

The learned scorer is h(s, a, s') = exp(<phi(s, a), psi(s')> + b(s, a)). The
embeddings are fit by full-batch descent on the softmax cross-entropy that
ranks a target next state above a next state drawn from the source data at
the same (s, a). In the default 'exact' negative mode the draw is summed out
against the empirical source next-state distribution instead of sampled;
'sampled' keeps fixed draws and allows several negatives per positive.

A slice of the target records is held out and training keeps the embeddings
from the epoch with the lowest held-out loss. The softmax leaves one free
offset per (s, a); after training b(s, a) is set so that h, averaged under
the source next-state distribution, equals the share of target transitions
landing where the source data also lands. That makes h an estimate of
P_tar / P_src, and it stays near zero at (s, a) where every source outcome is
one the target never produced.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import logsumexp, softmax
from scipy.stats import mannwhitneyu

from .env_tool import Dataset
from .errors import RejectedInputError, TrainingDivergedError, UndefinedMetricError
from .learner_tool import min_max_normalize
from .mdp_tool import TabularMDP

logger = logging.getLogger(__name__)

SCORE_FILE_MAGIC = "# score-model v1"
NEGATIVE_MODES = ("exact", "sampled")
MAX_DIVERGENCE_RETRIES = 5
MAX_BACKTRACKS = 60
MAX_STEP_GROWTH = 16.0


@dataclass(frozen=True)
class NceConfig:
    """Scorer training knobs.

    ``holdout`` is the fraction of target records kept out of the gradient
    and used for early stopping; training ends after ``patience`` epochs
    without a new best held-out loss. ``holdout=0`` trains on everything for
    the full ``epochs``.
    """

    k: int = 16
    negatives_per_positive: int = 1
    epochs: int = 500
    step_size: float = 1.0
    seed: int = 0
    init_scale: float = 0.01
    calibrate: bool = True
    negative_mode: str = "exact"
    holdout: float = 0.2
    patience: int = 25

    def __post_init__(self):
        if self.k < 1:
            raise RejectedInputError(f"k must be at least 1, got {self.k}")
        if self.negatives_per_positive < 1:
            raise RejectedInputError(f"negatives_per_positive must be at least 1, got {self.negatives_per_positive}")
        if self.epochs < 0 or not self.step_size > 0.0:
            raise RejectedInputError("epochs must be nonnegative and step_size positive")
        if self.negative_mode not in NEGATIVE_MODES:
            raise RejectedInputError(f"negative_mode must be one of {NEGATIVE_MODES}, got {self.negative_mode!r}")
        if self.negative_mode == "exact" and self.negatives_per_positive != 1:
            raise RejectedInputError("exact negatives sum out a single draw; use negative_mode 'sampled' "
                                     "for more than one negative per positive")
        if not 0.0 <= self.holdout < 1.0:
            raise RejectedInputError(f"holdout must lie in [0, 1), got {self.holdout}")
        if self.patience < 1:
            raise RejectedInputError(f"patience must be at least 1, got {self.patience}")


@dataclass(frozen=True, eq=False)
class ScoreModel:
    phi: np.ndarray
    psi: np.ndarray
    bias: np.ndarray
    trained: bool = False
    final_loss: float = float("nan")
    losses: Tuple[float, ...] = ()
    val_losses: Tuple[float, ...] = ()
    best_epoch: int = 0

    @property
    def k(self) -> int:
        return self.psi.shape[1]

    def log_score(self, s: np.ndarray, a: np.ndarray, s_next: np.ndarray) -> np.ndarray:
        return np.einsum("nk,nk->n", self.phi[s, a], self.psi[s_next]) + self.bias[s, a]

    def score(self, s: np.ndarray, a: np.ndarray, s_next: np.ndarray) -> np.ndarray:
        return np.exp(self.log_score(np.asarray(s), np.asarray(a), np.asarray(s_next)))


@dataclass(frozen=True, eq=False)
class ExactBayesScorer:
    """h*(s, a, s') = P_tar / (P_tar + c * P_src), zero where both vanish."""

    table: np.ndarray
    c: float

    def score(self, s: np.ndarray, a: np.ndarray, s_next: np.ndarray) -> np.ndarray:
        return self.table[np.asarray(s), np.asarray(a), np.asarray(s_next)]


@dataclass(frozen=True, eq=False)
class ScoreTable:
    values: np.ndarray
    normalized: np.ndarray


def empirical_next_distribution(data: Dataset, n_states: Optional[int] = None,
                                n_actions: Optional[int] = None) -> np.ndarray:
    """Row-normalized next-state counts per (s, a); rows without data are zero."""
    n_states = n_states or data.n_states
    n_actions = n_actions or data.n_actions
    counts = np.zeros((n_states, n_actions, n_states))
    np.add.at(counts, (data.s, data.a, data.s_next), 1.0)
    totals = counts.sum(axis=2, keepdims=True)
    return np.divide(counts, totals, out=np.zeros_like(counts), where=totals > 0)


def exact_bayes_score(tar: TabularMDP, src_empirical_next: np.ndarray, c: float = 1.0) -> ExactBayesScorer:
    src_next = np.asarray(src_empirical_next, dtype=float)
    if src_next.shape != tar.P.shape:
        raise RejectedInputError(f"source next-state table {src_next.shape} does not match {tar.P.shape}")
    if not c > 0.0:
        raise RejectedInputError(f"negatives ratio must be positive, got {c}")
    denom = tar.P + c * src_next
    table = np.divide(tar.P, denom, out=np.zeros_like(denom), where=denom > 0)
    return ExactBayesScorer(table=table, c=float(c))


def _draw_negatives(d_tar: Dataset, d_src: Dataset, n_neg: int, rng: np.random.Generator) -> np.ndarray:
    """Source next states for every target record, matched on (s, a) when possible."""
    n_actions = d_tar.n_actions
    src_ctx = d_src.s * n_actions + d_src.a
    order = np.argsort(src_ctx, kind="stable")
    n_ctx = d_tar.n_states * n_actions
    counts = np.bincount(src_ctx, minlength=n_ctx)
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])

    tar_ctx = d_tar.s * n_actions + d_tar.a
    u = rng.random((len(d_tar), n_neg))
    have = counts[tar_ctx] > 0
    local = starts[tar_ctx][:, None] + np.floor(u * counts[tar_ctx][:, None]).astype(np.int64)
    anywhere = np.floor(u * len(d_src)).astype(np.int64)
    picked = np.where(have[:, None], order[np.minimum(local, len(d_src) - 1)], anywhere)
    return d_src.s_next[picked]


def _source_negatives(d_src: Dataset) -> pd.DataFrame:
    """(ctx, neg, p): empirical source next-state distribution per (s, a).

    Contexts the source never visits fall back to the source next-state
    marginal, like the sampled fallback to any source record.
    """
    n_actions = d_src.n_actions
    frame = pd.DataFrame({"ctx": d_src.s * n_actions + d_src.a, "neg": d_src.s_next})
    dist = frame.groupby(["ctx", "neg"]).size().rename("p").reset_index()
    dist["p"] = dist["p"] / dist.groupby("ctx")["p"].transform("sum")
    marginal = frame["neg"].value_counts(normalize=True).rename("p").rename_axis("neg").reset_index()
    unseen = np.setdiff1d(np.arange(d_src.n_states * n_actions), dist["ctx"].unique())
    fallback = marginal.merge(pd.DataFrame({"ctx": unseen}), how="cross")
    return pd.concat([dist, fallback[["ctx", "neg", "p"]]], ignore_index=True)


class _NceObjective:
    """Weighted softmax cross-entropy over unique (context, positive, negatives) rows."""

    def __init__(self, ctx: np.ndarray, nexts: np.ndarray, weight: np.ndarray, n_ctx: int, n_states: int):
        self.ctx = np.asarray(ctx, dtype=np.int64)
        self.nexts = np.asarray(nexts, dtype=np.int64)
        self.weight = np.asarray(weight, dtype=float) / np.sum(weight)
        floor = self.weight.min()
        ctx_freq = np.bincount(self.ctx, weights=self.weight, minlength=n_ctx)
        state_freq = np.bincount(self.nexts.ravel(), weights=np.repeat(self.weight, self.nexts.shape[1]),
                                 minlength=n_states) / self.nexts.shape[1]
        self.scale_phi = 1.0 / np.maximum(ctx_freq, floor)[:, None]
        self.scale_psi = 1.0 / np.maximum(state_freq, floor)[:, None]

    @classmethod
    def sampled(cls, ctx: np.ndarray, nexts: np.ndarray, n_ctx: int, n_states: int) -> "_NceObjective":
        """Rows from fixed negative draws; repeated rows are merged into weights."""
        unique, counts = np.unique(np.column_stack([ctx, nexts]), axis=0, return_counts=True)
        return cls(unique[:, 0], unique[:, 1:], counts, n_ctx, n_states)

    @classmethod
    def exact(cls, ctx: np.ndarray, positives: np.ndarray, negatives: pd.DataFrame,
              n_ctx: int, n_states: int) -> "_NceObjective":
        """Rows for every (positive, source next state) pair, weighted by count times source probability."""
        pos = (pd.DataFrame({"ctx": ctx, "pos": positives})
               .groupby(["ctx", "pos"]).size().rename("n").reset_index())
        pairs = pos.merge(negatives, on="ctx", how="inner")
        return cls(pairs["ctx"].to_numpy(), pairs[["pos", "neg"]].to_numpy(),
                   (pairs["n"] * pairs["p"]).to_numpy(), n_ctx, n_states)

    def logits(self, phi: np.ndarray, psi: np.ndarray) -> np.ndarray:
        return np.einsum("mk,mjk->mj", phi[self.ctx], psi[self.nexts])

    def loss(self, phi: np.ndarray, psi: np.ndarray) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            F = self.logits(phi, psi)
            return float(np.sum(self.weight * (logsumexp(F, axis=1) - F[:, 0])))

    def grad(self, phi: np.ndarray, psi: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        F = self.logits(phi, psi)
        G = softmax(F, axis=1)
        G[:, 0] -= 1.0
        G *= self.weight[:, None]
        g_phi = np.zeros_like(phi)
        np.add.at(g_phi, self.ctx, np.einsum("mj,mjk->mk", G, psi[self.nexts]))
        g_psi = np.zeros_like(psi)
        k = phi.shape[1]
        np.add.at(g_psi, self.nexts.ravel(), (G[:, :, None] * phi[self.ctx][:, None, :]).reshape(-1, k))
        return g_phi, g_psi


@dataclass(frozen=True)
class _Descent:
    phi: np.ndarray
    psi: np.ndarray
    losses: List[float]
    val_losses: List[float]
    best_epoch: int


def _descend(objective: _NceObjective, phi: np.ndarray, psi: np.ndarray, cfg: NceConfig,
             validation: Optional[_NceObjective] = None) -> _Descent:
    """Row-preconditioned gradient descent with backtracking.

    Each row of phi and psi moves against its gradient scaled by the inverse
    frequency of that row in the batch. A step is accepted only if it does
    not raise the loss, so the recorded losses are nonincreasing. After an
    accepted step the step size doubles, up to MAX_STEP_GROWTH times the
    configured one; a rejected trial halves it. A non-finite trial loss also
    halves it, and more than MAX_DIVERGENCE_RETRIES of those in one epoch is
    fatal.

    With a ``validation`` objective the embeddings of the epoch with the
    lowest held-out loss are returned, and descent stops once ``patience``
    epochs pass without a new best.
    """
    loss = objective.loss(phi, psi)
    if not np.isfinite(loss):
        raise TrainingDivergedError("initial NCE loss is not finite")
    losses = [loss]
    val_losses = [validation.loss(phi, psi)] if validation is not None else []
    best = (0, phi, psi)
    step = cfg.step_size
    for epoch in range(cfg.epochs):
        g_phi, g_psi = objective.grad(phi, psi)
        d_phi, d_psi = objective.scale_phi * g_phi, objective.scale_psi * g_psi
        accepted = False
        non_finite = 0
        for _ in range(MAX_BACKTRACKS):
            phi_try = phi - step * d_phi
            psi_try = psi - step * d_psi
            trial = objective.loss(phi_try, psi_try)
            if not np.isfinite(trial):
                non_finite += 1
                if non_finite > MAX_DIVERGENCE_RETRIES:
                    raise TrainingDivergedError(
                        f"NCE loss stayed non-finite after {MAX_DIVERGENCE_RETRIES} step halvings")
                logger.warning("non-finite NCE loss at epoch %d; halving step to %.3e", epoch, step / 2)
                step /= 2.0
                continue
            if trial <= loss:
                accepted = True
                break
            step /= 2.0
        if not accepted:
            break
        phi, psi, loss = phi_try, psi_try, trial
        losses.append(loss)
        step = min(2.0 * step, MAX_STEP_GROWTH * cfg.step_size)
        if validation is None:
            best = (len(losses) - 1, phi, psi)
            continue
        val_losses.append(validation.loss(phi, psi))
        if val_losses[-1] < val_losses[best[0]]:
            best = (len(losses) - 1, phi, psi)
        elif len(losses) - 1 - best[0] >= cfg.patience:
            logger.debug("held-out NCE loss flat for %d epochs; keeping epoch %d", cfg.patience, best[0])
            break
    best_epoch, phi, psi = best
    return _Descent(phi=phi, psi=psi, losses=losses, val_losses=val_losses, best_epoch=best_epoch)


def _calibration_bias(phi: np.ndarray, psi: np.ndarray, d_src: Dataset, d_tar: Dataset) -> np.ndarray:
    """Offsets making E_{s' ~ P_src(.|s, a)} h(s, a, s') equal the target mass on the source support.

    That mass is the share of target records at (s, a) whose next state the
    source data also reached there, floored at half a record. It is one where
    either dataset never visits (s, a).
    """
    src_next = empirical_next_distribution(d_src)
    marginal = np.bincount(d_src.s_next, minlength=d_src.n_states) / len(d_src)
    seen = src_next.sum(axis=2) > 0
    weights = np.where(seen[:, :, None], src_next, marginal[None, None, :])

    visits = d_tar.counts().astype(float)
    shared = np.zeros_like(visits)
    on_support = src_next[d_tar.s, d_tar.a, d_tar.s_next] > 0
    np.add.at(shared, (d_tar.s[on_support], d_tar.a[on_support]), 1.0)
    mass = np.ones_like(visits)
    both = seen & (visits > 0)
    mass[both] = np.maximum(shared[both], 0.5) / visits[both]

    logits = np.einsum("sak,tk->sat", phi, psi)
    with np.errstate(divide="ignore"):
        return np.log(mass) - logsumexp(logits, b=weights, axis=2)


def _objective(d: Dataset, d_src: Dataset, cfg: NceConfig, rng: np.random.Generator,
               negatives: Optional[pd.DataFrame]) -> _NceObjective:
    n_states, n_actions = d.n_states, d.n_actions
    ctx = d.s * n_actions + d.a
    if negatives is not None:
        return _NceObjective.exact(ctx, d.s_next, negatives, n_states * n_actions, n_states)
    drawn = _draw_negatives(d, d_src, cfg.negatives_per_positive, rng)
    return _NceObjective.sampled(ctx, np.column_stack([d.s_next, drawn]), n_states * n_actions, n_states)


def train_nce(d_tar: Dataset, d_src: Dataset, cfg: NceConfig = NceConfig()) -> ScoreModel:
    if len(d_tar) == 0 or len(d_src) == 0:
        raise RejectedInputError("NCE training needs nonempty target and source datasets")
    if (d_tar.n_states, d_tar.n_actions) != (d_src.n_states, d_src.n_actions):
        raise RejectedInputError("target and source datasets have different shapes")

    n_states, n_actions = d_tar.n_states, d_tar.n_actions
    rng = np.random.default_rng(cfg.seed)
    n_val = int(round(cfg.holdout * len(d_tar)))
    if n_val >= len(d_tar):
        n_val = 0
    order = rng.permutation(len(d_tar))
    train_part = d_tar.subset(np.sort(order[n_val:]))
    negatives = _source_negatives(d_src) if cfg.negative_mode == "exact" else None
    objective = _objective(train_part, d_src, cfg, rng, negatives)
    validation = None
    if n_val:
        validation = _objective(d_tar.subset(np.sort(order[:n_val])), d_src, cfg, rng, negatives)

    phi = cfg.init_scale * rng.standard_normal((n_states * n_actions, cfg.k))
    psi = cfg.init_scale * rng.standard_normal((n_states, cfg.k))
    run = _descend(objective, phi, psi, cfg, validation)
    logger.info("NCE trained for %d epochs (%s negatives, kept epoch %d): loss %.6f -> %.6f",
                len(run.losses) - 1, cfg.negative_mode, run.best_epoch, run.losses[0], run.losses[run.best_epoch])

    phi = run.phi.reshape(n_states, n_actions, cfg.k)
    bias = _calibration_bias(phi, run.psi, d_src, d_tar) if cfg.calibrate else np.zeros((n_states, n_actions))
    return ScoreModel(phi=phi, psi=run.psi, bias=bias, trained=True,
                      final_loss=run.losses[run.best_epoch], losses=tuple(run.losses),
                      val_losses=tuple(run.val_losses), best_epoch=run.best_epoch)


def nce_loss(model: ScoreModel, d_tar: Dataset, negatives: np.ndarray) -> float:
    """Mean softmax cross-entropy of ``model`` on target positives with given negatives."""
    F = np.column_stack([
        np.einsum("nk,nk->n", model.phi[d_tar.s, d_tar.a], model.psi[col])
        for col in np.column_stack([d_tar.s_next, negatives]).T
    ])
    return float(np.mean(logsumexp(F, axis=1) - F[:, 0]))


def score_dataset(model: Any, data: Dataset) -> ScoreTable:
    values = np.asarray(model.score(data.s, data.a, data.s_next), dtype=float)
    return ScoreTable(values=values, normalized=min_max_normalize(values))


def roc_auc(positive: np.ndarray, negative: np.ndarray) -> float:
    """Probability that a positive outranks a negative, ties counting one half."""
    positive, negative = np.asarray(positive, dtype=float), np.asarray(negative, dtype=float)
    if positive.size == 0 or negative.size == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    statistic = mannwhitneyu(positive, negative, alternative="two-sided").statistic
    return float(statistic / (positive.size * negative.size))


def _fmt(values: np.ndarray) -> str:
    return " ".join(format(float(x), ".17g") for x in np.ravel(values))


def save_score_model(model: ScoreModel, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_states, n_actions, k = model.phi.shape
    lines = [
        SCORE_FILE_MAGIC,
        f"k={k} n_states={n_states} n_actions={n_actions} trained={int(model.trained)} "
        f"final_loss={model.final_loss!r} best_epoch={model.best_epoch}",
    ]
    for s in range(n_states):
        for a in range(n_actions):
            lines.append(f"phi {s} {a} {_fmt(model.phi[s, a])}")
    lines += [f"psi {s} {_fmt(model.psi[s])}" for s in range(n_states)]
    lines += [f"bias {s} {_fmt(model.bias[s])}" for s in range(n_states)]
    if model.losses:
        lines.append(f"losses {_fmt(model.losses)}")
    if model.val_losses:
        lines.append(f"val_losses {_fmt(model.val_losses)}")
    path.write_text("\n".join(lines) + "\n")
    return path


def load_score_model(path: Union[str, Path]) -> ScoreModel:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != SCORE_FILE_MAGIC:
        raise RejectedInputError(f"{path} is not a score model file")
    header = dict(item.split("=", 1) for item in lines[1].split())
    k, n_states, n_actions = int(header["k"]), int(header["n_states"]), int(header["n_actions"])
    phi = np.zeros((n_states, n_actions, k))
    psi = np.zeros((n_states, k))
    bias = np.zeros((n_states, n_actions))
    curves: Dict[str, Tuple[float, ...]] = {"losses": (), "val_losses": ()}
    for line in lines[2:]:
        tag, *rest = line.split()
        if tag == "phi":
            phi[int(rest[0]), int(rest[1])] = np.array(rest[2:], dtype=float)
        elif tag == "psi":
            psi[int(rest[0])] = np.array(rest[1:], dtype=float)
        elif tag == "bias":
            bias[int(rest[0])] = np.array(rest[1:], dtype=float)
        elif tag in curves:
            curves[tag] = tuple(float(x) for x in rest)
        else:
            raise RejectedInputError(f"unknown line tag {tag!r} in {path}")
    return ScoreModel(phi=phi, psi=psi, bias=bias, trained=header["trained"] == "1",
                      final_loss=float(header["final_loss"]), best_epoch=int(header.get("best_epoch", 0)),
                      **curves)


class ScoreTool:
    """Tool for training and applying dynamics-alignment scorers."""

    name = "dynamics_scorer"
    description = "Train contrastive dynamics scores between target and source data and score transitions"

    def __init__(self):
        self.model: Optional[ScoreModel] = None

    def train(self, d_tar: Dataset, d_src: Dataset, cfg: Optional[NceConfig] = None) -> Dict[str, Any]:
        try:
            self.model = train_nce(d_tar, d_src, cfg or NceConfig())
            return {
                'success': True,
                'epochs': len(self.model.losses) - 1,
                'final_loss': self.model.final_loss,
                'best_epoch': self.model.best_epoch,
                'message': f"Trained score model (k={self.model.k}) to loss {self.model.final_loss:.4f} "
                           f"(kept epoch {self.model.best_epoch})"
            }
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def score(self, data: Dataset) -> Dict[str, Any]:
        if self.model is None:
            return {'success': False, 'error': 'No score model trained'}
        try:
            table = score_dataset(self.model, data)
            return {
                'success': True,
                'scores': table,
                'message': f"Scored {len(data)} transitions (raw range {table.values.min():.3g}..{table.values.max():.3g})"
                if len(data) else "Scored 0 transitions"
            }
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def save(self, path: Union[str, Path]) -> Dict[str, Any]:
        if self.model is None:
            return {'success': False, 'error': 'No score model trained'}
        try:
            out = save_score_model(self.model, path)
            return {'success': True, 'path': str(out), 'message': f"Score model saved to {out}"}
        except Exception as e:
            return {'success': False, 'error': str(e)}

    def run(self, action: str, **kwargs) -> Dict[str, Any]:
        actions = {
            'train': lambda: self.train(kwargs.get('d_tar'), kwargs.get('d_src'), kwargs.get('cfg')),
            'score': lambda: self.score(kwargs.get('data')),
            'save': lambda: self.save(kwargs.get('path', 'score_model.txt')),
        }

        if action not in actions:
            return {'success': False, 'error': f'Unknown action: {action}'}

        return actions[action]()
