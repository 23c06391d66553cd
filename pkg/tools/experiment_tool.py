"""Configuration-driven experiment runner.

A run builds the target gridworld and its shifted source twin, collects the
target and source datasets, pre-trains the critic on the source data, trains
the dynamics scorer and then trains DVDF plus the configured baselines, one
row per (config, seed, method).
"""

import hashlib
import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from itertools import repeat
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import yaml

from .env_tool import (
    BehaviorSpec,
    Dataset,
    GridSpec,
    ShiftSpec,
    apply_shift,
    collect,
    load_dataset,
    make_behavior,
    make_gridworld,
    mix,
    save_dataset,
)
from .errors import ConfigError, RejectedInputError, exit_code_for
from .filter_tool import BASELINES, FilterConfig, TrainReport, reference_returns, run_baseline, train_dvdf
from .learner_tool import LEARNERS, IqlConfig, PretrainedCritic, SqlConfig, load_critic, pretrain, save_critic
from .mdp_tool import TabularMDP, load_mdp, save_mdp, tv_sup
from .score_tool import NceConfig, ScoreModel, load_score_model, save_score_model, score_dataset, train_nce

logger = logging.getLogger(__name__)

RESULTS_HEADER = "# dvdf-bench results schema v1"
RESULT_COLUMNS = [
    "config_hash", "experiment", "seed", "method", "lambda", "xi", "J_tar", "normalized_score",
    "J_random", "J_expert", "selected_count", "source_count", "composition", "error",
]
TIMING_COLUMNS = ["config_hash", "seed", "stage", "wall_time_s"]
METHODS = ("dvdf",) + BASELINES
SWEEP_PARAMS = ("lambda", "xi")
KERNELS = ("target", "source")
HASH_EXCLUDED = ("output_dir", "max_workers")


@dataclass(frozen=True)
class SourceComponent:
    """One slice of the source dataset.

    ``kernel`` picks the dynamics the slice is collected under: 'target' is
    the unshifted base, 'source' the shifted twin.
    """

    quality: str = "random"
    fraction: float = 1.0
    kernel: str = "target"
    label: Optional[str] = None
    epsilon: Optional[float] = None

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise RejectedInputError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise RejectedInputError(f"fraction must lie in (0, 1], got {self.fraction}")

    @property
    def record_label(self) -> str:
        if self.label:
            return self.label
        return f"shifted-{self.quality}" if self.kernel == "source" else self.quality


@dataclass(frozen=True)
class DatasetConfig:
    n_tar: int = 5000
    n_src: int = 50000
    target_quality: str = "medium"
    target_epsilon: Optional[float] = None
    source_components: Tuple[SourceComponent, ...] = (SourceComponent(),)

    def __post_init__(self):
        if self.n_tar < 1:
            raise RejectedInputError(f"n_tar must be positive, got {self.n_tar}")
        if not self.n_tar < self.n_src:
            raise RejectedInputError(f"n_tar ({self.n_tar}) must be smaller than n_src ({self.n_src})")
        if not self.source_components:
            raise RejectedInputError("at least one source component is required")
        total = sum(c.fraction for c in self.source_components)
        if abs(total - 1.0) > 1e-9:
            raise RejectedInputError(f"source component fractions sum to {total}, expected 1")

    def component_sizes(self) -> List[int]:
        """Per-component record counts; the last component takes the rounding remainder."""
        sizes = [int(round(c.fraction * self.n_src)) for c in self.source_components[:-1]]
        return sizes + [self.n_src - sum(sizes)]


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    env: GridSpec
    shift: Union[ShiftSpec, Tuple[ShiftSpec, ...]] = ShiftSpec()
    datasets: DatasetConfig = DatasetConfig()
    learner: str = "sql"
    iql: IqlConfig = IqlConfig()
    sql: SqlConfig = SqlConfig()
    nce: NceConfig = NceConfig()
    filter: FilterConfig = FilterConfig()
    methods: Tuple[str, ...] = ("dvdf", "merge_all", "dynamics_only", "value_only")
    seeds: Tuple[int, ...] = tuple(range(10))
    max_workers: int = 1
    output_dir: str = "results"

    @property
    def shifts(self) -> Tuple[ShiftSpec, ...]:
        """Shifts in the order they are applied to the target kernel."""
        return self.shift if isinstance(self.shift, tuple) else (self.shift,)

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("seeds must be a nonempty list")
        if self.learner not in LEARNERS:
            raise ConfigError(f"learner must be one of {LEARNERS}, got {self.learner!r}")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown or not self.methods:
            raise ConfigError(f"methods must be a nonempty subset of {METHODS}, got {list(self.methods)}")
        if self.max_workers < 1:
            raise ConfigError(f"max_workers must be at least 1, got {self.max_workers}")

    @property
    def critic_config(self) -> Union[IqlConfig, SqlConfig]:
        return self.sql if self.learner == "sql" else self.iql


@dataclass(frozen=True)
class ResultRow:
    config_hash: str
    experiment: str
    seed: int
    method: str
    lam: float = float("nan")
    xi: float = float("nan")
    J_tar: float = float("nan")
    normalized_score: float = float("nan")
    J_random: float = float("nan")
    J_expert: float = float("nan")
    selected_count: int = 0
    source_count: int = 0
    composition: str = ""
    error: str = ""
    wall_time: float = 0.0

    def to_record(self) -> Dict[str, Any]:
        """CSV record; wall time is kept out so results stay byte-stable."""
        record = asdict(self)
        record["lambda"] = record.pop("lam")
        record.pop("wall_time")
        return {column: record[column] for column in RESULT_COLUMNS}


# -- configuration -----------------------------------------------------------

def _cells(value: Any) -> Tuple[Tuple[int, int], ...]:
    return tuple((int(c[0]), int(c[1])) for c in (value or ()))


def _reward_map(value: Any) -> Dict[Tuple[int, int], float]:
    if isinstance(value, Mapping):
        raise ConfigError("env.reward_map must be a list of [x, y, reward] triples")
    return {(int(x), int(y)): float(r) for x, y, r in (value or ())}


def _affected(value: Any) -> Tuple[Any, ...]:
    return tuple(int(v) if np.ndim(v) == 0 else (int(v[0]), int(v[1])) for v in (value or ()))


def _build(cls, raw: Any, where: str, convert: Optional[Dict[str, Callable[[Any], Any]]] = None,
           renames: Optional[Dict[str, str]] = None):
    """Instantiate ``cls`` from a mapping, rejecting keys it does not declare."""
    if raw is None:
        raw = {}
    if not isinstance(raw, Mapping):
        raise ConfigError(f"{where}: expected a mapping, got {type(raw).__name__}")
    renames = renames or {}
    allowed = {f.name for f in fields(cls)} - set(renames.values()) | set(renames)
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    convert = convert or {}
    try:
        kwargs = {renames.get(key, key): convert[key](value) if key in convert else value
                  for key, value in raw.items()}
        return cls(**kwargs)
    except ConfigError:
        raise
    except (RejectedInputError, TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def _components(value: Any) -> Tuple[SourceComponent, ...]:
    if not isinstance(value, list):
        raise ConfigError("datasets.source_components must be a list")
    return tuple(_build(SourceComponent, item, f"datasets.source_components[{i}]")
                 for i, item in enumerate(value))


def _shifts(value: Any) -> Union[ShiftSpec, Tuple[ShiftSpec, ...]]:
    if isinstance(value, list):
        if not value:
            raise ConfigError("shift list must not be empty")
        return tuple(_build(ShiftSpec, item, f"shift[{i}]", {"affected": _affected})
                     for i, item in enumerate(value))
    return _build(ShiftSpec, value, "shift", {"affected": _affected})


def parse_config(raw: Any) -> ExperimentConfig:
    """Validated ExperimentConfig from a parsed YAML document."""
    if not isinstance(raw, Mapping):
        raise ConfigError("experiment config must be a mapping")
    sections = {
        "env": lambda v: _build(GridSpec, v, "env", {
            "terminal_cells": _cells, "start_cells": lambda c: _cells(c) or None, "reward_map": _reward_map,
        }),
        "shift": _shifts,
        "datasets": lambda v: _build(DatasetConfig, v, "datasets", {"source_components": _components}),
        "iql": lambda v: _build(IqlConfig, v, "iql"),
        "sql": lambda v: _build(SqlConfig, v, "sql"),
        "nce": lambda v: _build(NceConfig, v, "nce"),
        "filter": lambda v: _build(FilterConfig, v, "filter", renames={"lambda": "lam"}),
        "methods": lambda v: tuple(str(m) for m in v),
        "seeds": lambda v: tuple(int(s) for s in v),
    }
    if "env" not in raw:
        raise ConfigError("config needs an env section")
    cfg = _build(ExperimentConfig, raw, "config", sections)
    try:
        build_domains(cfg)
    except (RejectedInputError, TypeError, ValueError) as e:
        raise ConfigError(f"env/shift: {e}") from e
    return cfg


def load_config(path: Union[str, Path]) -> ExperimentConfig:
    """Read a YAML config; DVDF_OUTPUT_DIR / DVDF_MAX_WORKERS fill keys the file omits."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"{path} is not valid YAML: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path} does not hold a mapping")
    raw.setdefault("name", path.stem)
    if "output_dir" not in raw and os.getenv("DVDF_OUTPUT_DIR"):
        raw["output_dir"] = os.environ["DVDF_OUTPUT_DIR"]
    if "max_workers" not in raw and os.getenv("DVDF_MAX_WORKERS"):
        try:
            raw["max_workers"] = int(os.environ["DVDF_MAX_WORKERS"])
        except ValueError as e:
            raise ConfigError(f"DVDF_MAX_WORKERS must be an integer: {e}") from e
    cfg = parse_config(raw)
    logger.debug("loaded config %s (hash %s)", path, config_hash(cfg))
    return cfg


def _shift_to_dict(shift: ShiftSpec) -> Dict[str, Any]:
    return {
        "kind": shift.kind,
        "affected": [v if np.ndim(v) == 0 else list(v) for v in shift.affected],
        "magnitude": float(shift.magnitude),
        "seed": shift.seed,
        "stay_action": shift.stay_action,
    }


def config_to_dict(cfg: ExperimentConfig) -> Dict[str, Any]:
    env = cfg.env
    filter_cfg = asdict(cfg.filter)
    filter_cfg["lambda"] = filter_cfg.pop("lam")
    return {
        "name": cfg.name,
        "env": {
            "width": env.width,
            "height": env.height,
            "terminal_cells": [list(c) for c in env.terminal_cells],
            "reward_map": [[x, y, float(r)] for (x, y), r in sorted(env.reward_map.items())],
            "slip_prob": float(env.slip_prob),
            "gamma": float(env.gamma),
            "seed": env.seed,
            "start_cells": None if env.start_cells is None else [list(c) for c in env.start_cells],
        },
        "shift": [_shift_to_dict(s) for s in cfg.shift] if isinstance(cfg.shift, tuple) else _shift_to_dict(cfg.shift),
        "datasets": {
            **{k: v for k, v in asdict(cfg.datasets).items() if k != "source_components"},
            "source_components": [asdict(c) for c in cfg.datasets.source_components],
        },
        "learner": cfg.learner,
        "iql": asdict(cfg.iql),
        "sql": asdict(cfg.sql),
        "nce": asdict(cfg.nce),
        "filter": filter_cfg,
        "methods": list(cfg.methods),
        "seeds": list(cfg.seeds),
        "max_workers": cfg.max_workers,
        "output_dir": cfg.output_dir,
    }


def config_hash(cfg: ExperimentConfig) -> str:
    data = {k: v for k, v in config_to_dict(cfg).items() if k not in HASH_EXCLUDED}
    canonical = yaml.safe_dump(data, sort_keys=True, default_flow_style=False)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def dump_config(cfg: ExperimentConfig, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=True, default_flow_style=False))
    return path


# -- pipeline stages ---------------------------------------------------------

def _stage_seed(seed: int, offset: int) -> int:
    return 1000 * int(seed) + offset


def build_domains(cfg: ExperimentConfig) -> Tuple[TabularMDP, TabularMDP]:
    """(target, source): the base gridworld and its shifted twin."""
    target = make_gridworld(cfg.env)
    source = target
    for shift in cfg.shifts:
        source = apply_shift(source, shift)
    return target, source


def generate_datasets(cfg: ExperimentConfig, seed: int, target: TabularMDP,
                      source: TabularMDP) -> Tuple[Dataset, Dataset]:
    dc = cfg.datasets
    mu_tar = make_behavior(target, BehaviorSpec(dc.target_quality, dc.target_epsilon))
    d_tar = collect(target, mu_tar, dc.n_tar, _stage_seed(seed, 1), "target", dc.target_quality)

    parts = []
    for j, (component, n) in enumerate(zip(dc.source_components, dc.component_sizes())):
        mdp = source if component.kernel == "source" else target
        mu = make_behavior(mdp, BehaviorSpec(component.quality, component.epsilon))
        parts.append(collect(mdp, mu, n, _stage_seed(seed, 10 + j), "source", component.record_label))
    return d_tar, mix(parts)


def pretrain_critic(cfg: ExperimentConfig, d_src: Dataset) -> PretrainedCritic:
    return pretrain(d_src, cfg.learner, cfg.critic_config)


def train_score_model(cfg: ExperimentConfig, seed: int, d_tar: Dataset, d_src: Dataset) -> ScoreModel:
    return train_nce(d_tar, d_src, replace(cfg.nce, seed=cfg.nce.seed + int(seed)))


def train_method(cfg: ExperimentConfig, method: str, d_tar: Dataset, d_src: Dataset,
                 critic: PretrainedCritic, model: ScoreModel, target: TabularMDP,
                 references: Tuple[float, float]) -> TrainReport:
    if method == "dvdf":
        return train_dvdf(d_tar, d_src, critic, model, cfg.filter, cfg.iql, target, references)
    return run_baseline(method, d_tar, d_src, critic, model, cfg.filter, cfg.iql, target, references)


def _format_composition(composition: Mapping[str, int]) -> str:
    return ";".join(f"{label}={count}" for label, count in sorted(composition.items()))


def parse_composition(text: Any) -> Dict[str, int]:
    if not isinstance(text, str) or not text:
        return {}
    return {label: int(count) for label, count in (item.split("=", 1) for item in text.split(";"))}


def _row(cfg_hash: str, cfg: ExperimentConfig, seed: int, report: TrainReport,
         references: Tuple[float, float], n_src: int, wall_time: float) -> ResultRow:
    selection = report.selection
    return ResultRow(
        config_hash=cfg_hash,
        experiment=cfg.name,
        seed=int(seed),
        method=report.method,
        lam=float(report.config.get("lambda", float("nan"))),
        xi=float(report.config.get("xi", 1.0 if report.method == "merge_all" else float("nan"))),
        J_tar=float(report.J_tar),
        normalized_score=float(report.normalized_score),
        J_random=float(references[0]),
        J_expert=float(references[1]),
        selected_count=selection.selected_count if selection else 0,
        source_count=n_src,
        composition=_format_composition(selection.composition) if selection else "",
        wall_time=wall_time,
    )


def _run_seed(configs: Sequence[ExperimentConfig], seed: int) -> Tuple[List[ResultRow], List[Dict[str, Any]]]:
    """Every config variant on one seed. Variants share env, data, critic and scorer."""
    base = configs[0]
    hashes = [config_hash(c) for c in configs]
    rows: List[ResultRow] = []
    timings: List[Dict[str, Any]] = []

    def timed(stage: str, fn, *args):
        start = time.perf_counter()
        out = fn(*args)
        elapsed = time.perf_counter() - start
        timings.append({"config_hash": hashes[0], "seed": int(seed), "stage": stage, "wall_time_s": elapsed})
        return out, elapsed

    try:
        logger.info("[%s seed %d] gen", base.name, seed)
        (target, source), _ = timed("domains", build_domains, base)
        references, _ = timed("references", reference_returns, target)
        (d_tar, d_src), _ = timed("gen", generate_datasets, base, seed, target, source)
        logger.info("[%s seed %d] pretrain (%s on %d records)", base.name, seed, base.learner, len(d_src))
        critic, _ = timed("pretrain", pretrain_critic, base, d_src)
        logger.info("[%s seed %d] score", base.name, seed)
        model, _ = timed("score", train_score_model, base, seed, d_tar, d_src)
        for cfg, cfg_hash in zip(configs, hashes):
            for method in cfg.methods:
                logger.info("[%s seed %d] train %s", cfg.name, seed, method)
                report, elapsed = timed(method, train_method, cfg, method, d_tar, d_src, critic, model,
                                        target, references)
                timings[-1]["config_hash"] = cfg_hash
                rows.append(_row(cfg_hash, cfg, seed, report, references, len(d_src), elapsed))
    except Exception as e:
        logger.error("[%s seed %d] aborted: %s", base.name, seed, e)
        for cfg, cfg_hash in zip(configs, hashes):
            rows.append(ResultRow(config_hash=cfg_hash, experiment=cfg.name, seed=int(seed), method="error",
                                  lam=cfg.filter.lam, xi=cfg.filter.xi, error=f"{type(e).__name__}: {e}"))
    return rows, timings


def _run_all(configs: Sequence[ExperimentConfig]) -> Tuple[List[ResultRow], List[Dict[str, Any]]]:
    base = configs[0]
    seeds = list(base.seeds)
    if base.max_workers > 1 and len(seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(base.max_workers, len(seeds))) as pool:
            outputs = list(pool.map(_run_seed, repeat(list(configs)), seeds))
    else:
        outputs = [_run_seed(configs, seed) for seed in seeds]
    rows = [row for seed_rows, _ in outputs for row in seed_rows]
    timings = [t for _, seed_timings in outputs for t in seed_timings]
    return rows, timings


# -- results files -----------------------------------------------------------

def results_frame(rows: Sequence[ResultRow]) -> pd.DataFrame:
    return pd.DataFrame([row.to_record() for row in rows], columns=RESULT_COLUMNS)


def write_results(rows: Sequence[ResultRow], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(RESULTS_HEADER + "\n")
        results_frame(rows).to_csv(fh, index=False, float_format="%.17g", na_rep="", lineterminator="\n")
    return path


def read_results(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    with open(path) as fh:
        first = fh.readline().rstrip("\n")
    if first != RESULTS_HEADER:
        raise RejectedInputError(f"{path} is not a results file (header {first!r})")
    frame = pd.read_csv(path, skiprows=1, dtype={"config_hash": str, "composition": str, "error": str})
    missing = [c for c in RESULT_COLUMNS if c not in frame.columns]
    if missing:
        raise RejectedInputError(f"{path} lacks columns {missing}")
    frame[["composition", "error"]] = frame[["composition", "error"]].fillna("")
    return frame


def write_timings(timings: Sequence[Dict[str, Any]], path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(list(timings), columns=TIMING_COLUMNS).to_csv(path, index=False, lineterminator="\n")
    return path


# -- public runners ----------------------------------------------------------

def run_experiment(cfg: ExperimentConfig, write: bool = True) -> List[ResultRow]:
    """Full pipeline for every seed; writes results.csv and timings.csv under output_dir."""
    rows, timings = _run_all([cfg])
    n_errors = sum(row.method == "error" for row in rows)
    if write:
        out = Path(cfg.output_dir)
        write_results(rows, out / "results.csv")
        write_timings(timings, out / "timings.csv")
        dump_config(cfg, out / "config.yaml")
        logger.info("wrote %d rows (%d errors) to %s", len(rows), n_errors, out / "results.csv")
    return rows


def sweep_configs(base: ExperimentConfig, param: str, values: Sequence[float]) -> List[ExperimentConfig]:
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {param!r}")
    if not values:
        raise ConfigError("sweep needs at least one value")
    key = "lam" if param == "lambda" else "xi"
    configs = []
    for value in values:
        try:
            fcfg = replace(base.filter, **{key: float(value)})
        except RejectedInputError as e:
            raise ConfigError(f"sweep value {value!r}: {e}") from e
        configs.append(replace(base, filter=fcfg, methods=("dvdf",)))
    return configs


def run_sweep(base: ExperimentConfig, param: str, values: Sequence[float], write: bool = True) -> List[ResultRow]:
    """DVDF at each value of ``param``; per-seed data, critic and scorer are shared across values."""
    configs = sweep_configs(base, param, values)
    rows, timings = _run_all(configs)
    if write:
        out = Path(base.output_dir)
        write_results(rows, out / f"sweep_{param}.csv")
        write_timings(timings, out / f"sweep_{param}_timings.csv")
        logger.info("wrote %s sweep over %s to %s", param, list(values), out / f"sweep_{param}.csv")
    return rows


# -- directional self-checks -------------------------------------------------

def _as_frame(rows: Union[pd.DataFrame, Sequence[ResultRow]]) -> pd.DataFrame:
    return rows if isinstance(rows, pd.DataFrame) else results_frame(rows)


def composition_fraction(frame: pd.DataFrame, label: str) -> pd.Series:
    """Per-row share of selected records that carry ``label``."""
    def share(row) -> float:
        counts = parse_composition(row["composition"])
        total = sum(counts.values())
        return counts.get(label, 0) / total if total else float("nan")
    return frame.apply(share, axis=1) if len(frame) else pd.Series(dtype=float)


def motivating_checks(rows: Union[pd.DataFrame, Sequence[ResultRow]],
                      shifted_label: str = "shifted-expert") -> Dict[str, Any]:
    """Mean-return ordering, per-seed wins and selected-set composition."""
    frame = _as_frame(rows)
    frame = frame[frame["method"] != "error"]
    means = frame.groupby("method")["J_tar"].mean().to_dict()
    by_seed = frame.pivot_table(index="seed", columns="method", values="J_tar", aggfunc="first")
    checks: Dict[str, Any] = {"mean_J_tar": means, "n_seeds": int(by_seed.shape[0])}

    order = ["dvdf", "value_only", "dynamics_only"]
    if all(m in means for m in order):
        checks["ordering_holds"] = bool(means["dvdf"] > means["value_only"] > means["dynamics_only"])
    if {"dvdf", "dynamics_only"} <= set(by_seed.columns):
        wins = int((by_seed["dvdf"] > by_seed["dynamics_only"]).sum())
        checks["dvdf_wins_over_dynamics_only"] = wins
        checks["wins_hold"] = wins >= int(np.ceil(0.9 * by_seed.shape[0]))
    for method in ("dvdf", "dynamics_only"):
        part = frame[frame["method"] == method]
        if len(part):
            checks[f"{method}_shifted_fraction"] = float(composition_fraction(part, shifted_label).mean())
    if "dvdf_shifted_fraction" in checks and "dynamics_only_shifted_fraction" in checks:
        checks["composition_holds"] = bool(checks["dvdf_shifted_fraction"] >= 0.2
                                           and checks["dynamics_only_shifted_fraction"] < 0.05)
    verdicts = [v for k, v in checks.items() if k.endswith(("_hold", "_holds"))]
    checks["passes"] = bool(verdicts) and all(verdicts)
    return checks


def sweep_checks(rows: Union[pd.DataFrame, Sequence[ResultRow]], param: str) -> Dict[str, Any]:
    """Mean J_tar per swept value and whether the best value is interior."""
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {param!r}")
    frame = _as_frame(rows)
    frame = frame[frame["method"] != "error"]
    means = frame.groupby(param)["J_tar"].mean().sort_index()
    if means.empty:
        return {"means": {}, "passes": False}
    best = float(means.idxmax())
    checks: Dict[str, Any] = {"means": {float(k): float(v) for k, v in means.items()}, "best": best}
    if param == "lambda":
        checks["passes"] = bool(len(means) > 2 and best not in (float(means.index[0]), float(means.index[-1])))
    else:
        if 1.0 in means.index and 0.5 in means.index:
            checks["passes"] = bool(means[0.5] >= means[1.0])
        else:
            checks["passes"] = False
    return checks


# -- per-stage workspace -----------------------------------------------------

def seed_dir(cfg: ExperimentConfig, seed: int, out_dir: Optional[Union[str, Path]] = None) -> Path:
    return Path(out_dir or cfg.output_dir) / f"seed_{int(seed)}"


def stage_gen(cfg: ExperimentConfig, seed: int, out_dir: Optional[Union[str, Path]] = None) -> Dict[str, Path]:
    folder = seed_dir(cfg, seed, out_dir)
    target, source = build_domains(cfg)
    d_tar, d_src = generate_datasets(cfg, seed, target, source)
    logger.info("generated %d target and %d source records (sup TV %.4f)", len(d_tar), len(d_src),
                tv_sup(source, target))
    return {
        "target_mdp": save_mdp(target, folder / "target_mdp.txt"),
        "source_mdp": save_mdp(source, folder / "source_mdp.txt"),
        "d_tar": save_dataset(d_tar, folder / "d_tar.csv"),
        "d_src": save_dataset(d_src, folder / "d_src.csv"),
    }


def _load_generated(cfg: ExperimentConfig, seed: int, out_dir) -> Tuple[TabularMDP, Dataset, Dataset]:
    folder = seed_dir(cfg, seed, out_dir)
    if not (folder / "d_src.csv").exists():
        logger.info("no generated data in %s; running gen first", folder)
        stage_gen(cfg, seed, out_dir)
    return load_mdp(folder / "target_mdp.txt"), load_dataset(folder / "d_tar.csv"), load_dataset(folder / "d_src.csv")


def stage_pretrain(cfg: ExperimentConfig, seed: int, out_dir=None) -> Dict[str, Path]:
    _, _, d_src = _load_generated(cfg, seed, out_dir)
    critic = pretrain_critic(cfg, d_src)
    return {"critic": save_critic(critic, seed_dir(cfg, seed, out_dir) / "critic.txt")}


def stage_score(cfg: ExperimentConfig, seed: int, out_dir=None) -> Dict[str, Path]:
    _, d_tar, d_src = _load_generated(cfg, seed, out_dir)
    model = train_score_model(cfg, seed, d_tar, d_src)
    folder = seed_dir(cfg, seed, out_dir)
    table = score_dataset(model, d_src)
    scores = d_src.to_frame()[["s", "a", "s_next", "quality"]].assign(h=table.values, h_norm=table.normalized)
    scores.to_csv(folder / "scores.csv", index=False, float_format="%.17g", lineterminator="\n")
    return {"score_model": save_score_model(model, folder / "score_model.txt"), "scores": folder / "scores.csv"}


def stage_train(cfg: ExperimentConfig, seed: int, method: str = "dvdf", out_dir=None) -> Dict[str, Any]:
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
    target, d_tar, d_src = _load_generated(cfg, seed, out_dir)
    folder = seed_dir(cfg, seed, out_dir)
    if not (folder / "critic.txt").exists():
        stage_pretrain(cfg, seed, out_dir)
    if not (folder / "score_model.txt").exists():
        stage_score(cfg, seed, out_dir)
    critic = load_critic(folder / "critic.txt")
    model = load_score_model(folder / "score_model.txt")
    report = train_method(cfg, method, d_tar, d_src, critic, model, target, reference_returns(target))
    name = "dvdf.yaml" if method == "dvdf" else f"baseline_{method}.yaml"
    return {"report": report, "path": report.save(folder / name)}


class ExperimentTool:
    """Tool for running pipeline stages, full experiments and sweeps."""

    name = "experiment_runner"
    description = "Run DVDF experiments from YAML configs: staged pipeline, multi-seed runs and parameter sweeps"

    def __init__(self):
        self.config: Optional[ExperimentConfig] = None
        self.rows: List[ResultRow] = []

    @staticmethod
    def _failure(e: BaseException) -> Dict[str, Any]:
        return {'success': False, 'error': str(e), 'error_type': type(e).__name__, 'exit_code': exit_code_for(e)}

    def load(self, path: Union[str, Path]) -> Dict[str, Any]:
        try:
            self.config = load_config(path)
            return {
                'success': True,
                'config': self.config,
                'config_hash': config_hash(self.config),
                'message': f"Loaded config {self.config.name} ({len(self.config.seeds)} seeds)"
            }
        except Exception as e:
            return self._failure(e)

    def _require_config(self) -> ExperimentConfig:
        if self.config is None:
            raise ConfigError("no config loaded")
        return self.config

    def stage(self, stage: str, seed: int, out_dir: Optional[str] = None,
              method: str = "dvdf") -> Dict[str, Any]:
        try:
            cfg = self._require_config()
            if stage == "gen":
                files = stage_gen(cfg, seed, out_dir)
            elif stage == "pretrain":
                files = stage_pretrain(cfg, seed, out_dir)
            elif stage == "score":
                files = stage_score(cfg, seed, out_dir)
            else:
                out = stage_train(cfg, seed, method, out_dir)
                report = out["report"]
                return {
                    'success': True,
                    'files': {'report': str(out["path"])},
                    'J_tar': report.J_tar,
                    'normalized_score': report.normalized_score,
                    'message': f"{method} on seed {seed}: J_tar {report.J_tar:.4f}, "
                               f"normalized score {report.normalized_score:.1f}"
                }
            return {
                'success': True,
                'files': {k: str(v) for k, v in files.items()},
                'message': f"{stage} for seed {seed} wrote {len(files)} files"
            }
        except Exception as e:
            return self._failure(e)

    def experiment(self, out_dir: Optional[str] = None) -> Dict[str, Any]:
        try:
            cfg = self._require_config()
            if out_dir:
                cfg = replace(cfg, output_dir=str(out_dir))
            self.rows = run_experiment(cfg)
            n_errors = sum(r.method == "error" for r in self.rows)
            return {
                'success': True,
                'rows': len(self.rows),
                'errors': n_errors,
                'checks': motivating_checks(self.rows),
                'results_path': str(Path(cfg.output_dir) / "results.csv"),
                'message': f"Ran {len(cfg.seeds)} seeds: {len(self.rows)} rows, {n_errors} aborted"
            }
        except Exception as e:
            return self._failure(e)

    def sweep(self, param: str, values: Sequence[float], out_dir: Optional[str] = None) -> Dict[str, Any]:
        try:
            cfg = self._require_config()
            if out_dir:
                cfg = replace(cfg, output_dir=str(out_dir))
            self.rows = run_sweep(cfg, param, values)
            return {
                'success': True,
                'rows': len(self.rows),
                'checks': sweep_checks(self.rows, param),
                'results_path': str(Path(cfg.output_dir) / f"sweep_{param}.csv"),
                'message': f"Swept {param} over {len(values)} values"
            }
        except Exception as e:
            return self._failure(e)

    def run(self, action: str, **kwargs) -> Dict[str, Any]:
        """Dispatch a pipeline stage, run or sweep by name."""
        actions = {
            'load': lambda: self.load(kwargs.get('path', '')),
            'gen': lambda: self.stage('gen', kwargs.get('seed', 0), kwargs.get('out_dir')),
            'pretrain': lambda: self.stage('pretrain', kwargs.get('seed', 0), kwargs.get('out_dir')),
            'score': lambda: self.stage('score', kwargs.get('seed', 0), kwargs.get('out_dir')),
            'train': lambda: self.stage('train', kwargs.get('seed', 0), kwargs.get('out_dir'), 'dvdf'),
            'baseline': lambda: self.stage('train', kwargs.get('seed', 0), kwargs.get('out_dir'),
                                           kwargs.get('method', 'merge_all')),
            'run': lambda: self.experiment(kwargs.get('out_dir')),
            'sweep': lambda: self.sweep(kwargs.get('param', 'lambda'), kwargs.get('values', []),
                                        kwargs.get('out_dir')),
        }

        if action not in actions:
            return {'success': False, 'error': f'Unknown action: {action}'}

        return actions[action]()
