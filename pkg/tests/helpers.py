import numpy as np

from tools.env_tool import Dataset
from tools.mdp_tool import PolicyTable


def full_coverage_dataset(mdp, domain="source", quality="random", repeats=1):
    """One record per (s, a), repeated; s_next is the most likely successor."""
    s = np.tile(np.repeat(np.arange(mdp.n_states), mdp.n_actions), repeats)
    a = np.tile(np.arange(mdp.n_actions), mdp.n_states * repeats)
    s_next = mdp.P[s, a].argmax(axis=1)
    n = len(s)
    return Dataset(s, a, mdp.r[s, a], s_next, np.zeros(n, dtype=bool),
                   np.full(n, domain, dtype=object), np.full(n, quality, dtype=object),
                   PolicyTable.uniform(mdp.n_states, mdp.n_actions), mdp.gamma, mdp.name, 0)


def tiny_config(output_dir, **overrides):
    """Raw config for a pipeline small enough to run inside a unit test."""
    raw = {
        "name": "tiny",
        "env": {"width": 3, "height": 3, "terminal_cells": [[2, 2]], "reward_map": [[2, 2, 1.0]],
                "slip_prob": 0.1, "gamma": 0.9},
        "shift": {"kind": "action_block", "affected": [2], "magnitude": 0.6},
        "datasets": {
            "n_tar": 100,
            "n_src": 400,
            "target_quality": "medium",
            "source_components": [
                {"quality": "random", "fraction": 0.5, "kernel": "target"},
                {"quality": "expert", "fraction": 0.5, "kernel": "source"},
            ],
        },
        "learner": "sql",
        "iql": {"iters": 2000},
        "sql": {"iters": 2000},
        "nce": {"k": 4, "epochs": 20},
        "filter": {"lambda": 0.7, "xi": 0.5},
        "methods": ["dvdf", "merge_all", "dynamics_only", "value_only"],
        "seeds": [0, 1],
        "output_dir": str(output_dir),
    }
    raw.update(overrides)
    return raw


def synthetic_rows(j_by_method, seeds=(0, 1, 2), lam=0.7, xi=0.5, composition="random=6;shifted-expert=4"):
    """ResultRows with J_tar = j_by_method[method] + 0.01 * seed."""
    from tools.experiment_tool import ResultRow

    rows = []
    for seed in seeds:
        for method, j in j_by_method.items():
            rows.append(ResultRow(config_hash="abc123def456", experiment="synthetic", seed=seed, method=method,
                                  lam=lam, xi=xi, J_tar=j + 0.01 * seed, normalized_score=10.0 * j,
                                  J_random=0.0, J_expert=10.0, selected_count=10, source_count=20,
                                  composition=composition))
    return rows
