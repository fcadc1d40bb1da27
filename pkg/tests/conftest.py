import numpy as np
import pytest

from qdecay import GridworldSpec, build_gridworld, solve_q_star
from qdecay.mdp import Mdp


@pytest.fixture(scope="session")
def grid():
    return build_gridworld(GridworldSpec(gamma=0.1))


@pytest.fixture(scope="session")
def grid_q(grid):
    return solve_q_star(grid)


@pytest.fixture(scope="session")
def grid99():
    return build_gridworld(GridworldSpec(gamma=0.99))


def random_mdp(rng, S=3, A=2, gamma=0.7, sparse=False):
    P = rng.random((S, A, S))
    if sparse:
        P *= rng.random((S, A, S)) < 0.5
        P[..., 0] += 1e-3
    P /= P.sum(axis=2, keepdims=True)
    R = rng.normal(size=(S, A, S))
    return Mdp(P, R, gamma)


def deterministic_mdp(S=4, A=2, gamma=0.5, seed=0):
    rng = np.random.default_rng(seed)
    P = np.zeros((S, A, S))
    P[np.arange(S)[:, None], np.arange(A)[None, :], rng.integers(0, S, (S, A))] = 1.0
    return Mdp(P, rng.normal(size=(S, A)), gamma)


SMALL = {
    "compare_schedules": dict(schedules=["const:0.05", "poly:0.05,0.65", "pd2z:0.05,1", "pd2z:0.05,2"],
                              n=300, B=20, options={"stride": 10}),
    "final_error_vs_n": dict(schedules=["const:0.05", "pd2z:0.05,1"], n_grid=[100, 200, 400], B=10),
    "qq_invariance": dict(schedules=["pd2z:0.05,1", "poly:0.05,0.65"], n=200, B=100,
                          options={"qq_points": 10, "noise_m": 2000}),
    "clt_qq": dict(schedules=["pd2z:0.05,1"], n_grid=[200, 400], B=200, options={"directions": 2, "noise_m": 2000}),
    "pr_vs_tailpr": dict(schedules=["pd2z:0.05,1"], n_grid=[200, 400], B=20),
    "reward_sweep": dict(mdp={"gridworld": {"gamma": 0.9}}, schedules=["const:{eta}", "poly:{eta},0.65", "pd2z:{eta},1"],
                         n=300, B=4, options={"eta_grid": [0.1, 0.5], "initial_episodes": 10, "final_episodes": 20,
                                              "rollout_horizon": 10}),
    "bounds_check": dict(schedules=["pd2z:0.05,1"], n=300, B=10,
                         options={"lemma_gammas": [0.1, 0.9], "lemma_ns": [100], "noise_m": 2000,
                                  "margin_trials": 20, "stride": 10}),
    "bootstrap_coverage": dict(schedules=["pd2z:0.05,1"], n=200, B=20,
                               options={"B_boot": 30, "plugin": True, "noise_m": 2000}),
}


def small_config(kind, **overrides):
    """Reduced-scale config for ``kind`` that runs in about a second."""
    from qdecay.experiments import ExperimentConfig

    data = {"kind": kind, "seed": 7, **SMALL[kind], **overrides}
    return ExperimentConfig(**data)
