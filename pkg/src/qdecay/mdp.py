"""Finite MDPs, the exact Bellman operator and the value-iteration oracle.

Q-functions are flat float arrays of length ``D = S * A`` laid out as
``index(s, a) = s * A + a``.  Rewards are stored per transition,
``reward[s, a, s']``, which covers both state-action rewards and the
move-dependent penalties of the gridworld.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateMarginError, InvalidArgumentError, NumericFailureError

__all__ = [
    "RewardNoise",
    "Mdp",
    "Policy",
    "as_qtable",
    "exact_bellman",
    "solve_q_star",
    "greedy_policy",
    "policy_kernel",
    "linearization_matrix",
    "state_values",
    "action_classes",
    "optimal_margin",
    "save_mdp",
    "load_mdp",
    "mdp_to_dict",
    "mdp_from_dict",
]

PROB_TOL = 1e-12


@dataclass(frozen=True)
class RewardNoise:
    """Additive centred reward noise, drawn independently per (s, a) per step.

    ``kind`` is ``"none"``, ``"gaussian"`` (``scale`` is the standard
    deviation) or ``"student_t"`` (``scale * T_df``; only moments of order
    below ``df`` are finite).
    """

    kind: str = "none"
    scale: float = 0.0
    df: float | None = None

    def __post_init__(self):
        if self.kind not in ("none", "gaussian", "student_t"):
            raise InvalidArgumentError(f"unknown reward noise kind {self.kind!r}")
        if self.scale < 0 or not math.isfinite(self.scale):
            raise InvalidArgumentError("reward noise scale must be finite and >= 0")
        if self.kind == "student_t" and (self.df is None or self.df <= 2):
            raise InvalidArgumentError("student_t reward noise needs df > 2")

    @property
    def active(self) -> bool:
        return self.kind != "none" and self.scale > 0

    @property
    def variance(self) -> float:
        if not self.active:
            return 0.0
        if self.kind == "gaussian":
            return self.scale**2
        return self.scale**2 * self.df / (self.df - 2.0)

    def sample(self, rng: np.random.Generator, shape) -> np.ndarray:
        if not self.active:
            return np.zeros(shape)
        if self.kind == "gaussian":
            return self.scale * rng.standard_normal(shape)
        return self.scale * rng.standard_t(self.df, shape)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "scale": self.scale}
        if self.df is not None:
            out["df"] = self.df
        return out


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mdp:
    """Discounted finite MDP ``(S, A, P, R, gamma)``.

    ``transition`` has shape ``(S, A, S)``.  ``reward`` may be given per
    state-action pair, shape ``(S, A)``, or per transition, shape
    ``(S, A, S)``; it is stored in the latter form.
    """

    transition: np.ndarray
    reward: np.ndarray
    gamma: float
    reward_noise: RewardNoise = field(default_factory=RewardNoise)

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2] or min(P.shape) < 1:
            raise InvalidArgumentError(f"transition must have shape (S, A, S); got {P.shape}")
        S, A, _ = P.shape
        if not np.all(np.isfinite(P)) or np.any(P < 0):
            raise InvalidArgumentError("transition entries must be finite and nonnegative")
        row_err = np.max(np.abs(P.sum(axis=2) - 1.0))
        if row_err > PROB_TOL:
            raise InvalidArgumentError(f"transition rows must sum to 1 (max error {row_err:.3g})")
        R = np.asarray(self.reward, dtype=float)
        if R.shape == (S, A):
            R = np.repeat(R[:, :, None], S, axis=2)
        if R.shape != (S, A, S):
            raise InvalidArgumentError(f"reward must have shape (S, A) or (S, A, S); got {R.shape}")
        if not np.all(np.isfinite(R)):
            raise InvalidArgumentError("rewards must be finite")
        if not (0.0 < self.gamma < 1.0):
            raise InvalidArgumentError(f"gamma must lie in (0, 1); got {self.gamma}")
        if not isinstance(self.reward_noise, RewardNoise):
            raise InvalidArgumentError("reward_noise must be a RewardNoise")
        object.__setattr__(self, "transition", _readonly(P))
        object.__setattr__(self, "reward", _readonly(R))
        object.__setattr__(self, "gamma", float(self.gamma))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    @property
    def dim(self) -> int:
        return self.n_states * self.n_actions

    @property
    def mean_reward(self) -> np.ndarray:
        """Expected one-step reward, shape ``(S, A)``."""
        return np.einsum("ijk,ijk->ij", self.transition, self.reward)

    @property
    def transition_matrix(self) -> np.ndarray:
        """``P`` as a ``(D, S)`` matrix with rows indexed by ``s * A + a``."""
        return self.transition.reshape(self.dim, self.n_states)

    @property
    def max_abs_reward(self) -> float:
        return float(np.max(np.abs(self.reward)))

    def index(self, s: int, a: int) -> int:
        return s * self.n_actions + a

    def shifted(self, kappa: float) -> "Mdp":
        """Same MDP with every reward increased by ``kappa``."""
        return Mdp(self.transition, self.reward + kappa, self.gamma, self.reward_noise)


@dataclass(frozen=True, eq=False)
class Policy:
    """Deterministic policy: ``action[s]`` is the action taken in state ``s``."""

    action: np.ndarray
    n_actions: int

    def __post_init__(self):
        a = np.asarray(self.action)
        if a.ndim != 1 or not np.issubdtype(a.dtype, np.integer):
            raise InvalidArgumentError("policy actions must be a 1-d integer array")
        if np.any(a < 0) or np.any(a >= self.n_actions):
            raise InvalidArgumentError("policy action index out of range")
        a = a.astype(np.int64, copy=True)
        a.setflags(write=False)
        object.__setattr__(self, "action", a)

    def __eq__(self, other):
        return (
            isinstance(other, Policy)
            and self.n_actions == other.n_actions
            and np.array_equal(self.action, other.action)
        )

    def __hash__(self):
        return hash((self.n_actions, self.action.tobytes()))


def as_qtable(q, dim: int) -> np.ndarray:
    """Validate ``q`` as a finite length-``dim`` Q-table and return it as floats."""
    q = np.asarray(q, dtype=float)
    if q.shape != (dim,):
        raise InvalidArgumentError(f"Q-table must have shape ({dim},); got {q.shape}")
    if not np.all(np.isfinite(q)):
        raise InvalidArgumentError("Q-table entries must be finite")
    return q


def state_values(q: np.ndarray, n_actions: int) -> np.ndarray:
    """``V(s) = max_a Q(s, a)``; works on batches with the Q axis last."""
    q = np.asarray(q)
    return q.reshape(q.shape[:-1] + (-1, n_actions)).max(axis=-1)


def exact_bellman(mdp: Mdp, q) -> np.ndarray:
    """``(BQ)(s,a) = rbar(s,a) + gamma * sum_s' P(s'|s,a) max_a' Q(s',a')``."""
    q = as_qtable(q, mdp.dim)
    v = state_values(q, mdp.n_actions)
    return mdp.mean_reward.ravel() + mdp.gamma * (mdp.transition_matrix @ v)


def solve_q_star(mdp: Mdp, tol: float = 1e-12, max_iter: int = 1_000_000) -> np.ndarray:
    """Q* by value iteration.

    Returns the last iterate ``Q`` whose measured residual ``|BQ - Q|_inf``
    is at most ``tol``, so the result certifies itself.
    """
    if not tol > 0:
        raise InvalidArgumentError("tol must be positive")
    rbar = mdp.mean_reward.ravel()
    P = mdp.transition_matrix
    q = np.zeros(mdp.dim)
    residual = math.inf
    for it in range(max_iter):
        bq = rbar + mdp.gamma * (P @ state_values(q, mdp.n_actions))
        residual = float(np.max(np.abs(bq - q)))
        if residual <= tol:
            return q
        q = bq
    raise NumericFailureError(
        f"value iteration did not reach tol={tol:g} in {max_iter} iterations "
        f"(residual {residual:.3g})",
        step=max_iter,
        residual=residual,
    )


def greedy_policy(q, n_actions: int) -> Policy:
    """Per-state argmax of ``q``; ties go to the smallest action index."""
    q = np.asarray(q, dtype=float)
    if q.ndim != 1 or n_actions < 1 or q.size % n_actions:
        raise InvalidArgumentError("Q-table length must be a multiple of n_actions")
    return Policy(np.argmax(q.reshape(-1, n_actions), axis=1), n_actions)


def policy_kernel(mdp: Mdp, policy: Policy) -> np.ndarray:
    """``H^pi`` with ``H[(s,a),(s',a')] = P(s'|s,a) * 1{a' = pi(s')}``."""
    if policy.n_actions != mdp.n_actions or policy.action.shape != (mdp.n_states,):
        raise InvalidArgumentError("policy does not match the MDP")
    S, A = mdp.n_states, mdp.n_actions
    H = np.zeros((mdp.dim, mdp.dim))
    cols = np.arange(S) * A + policy.action
    H[:, cols] = mdp.transition_matrix
    return H


def linearization_matrix(mdp: Mdp, q_star) -> np.ndarray:
    """``G = I - gamma * H^{pi*}`` where ``pi*`` is greedy for ``q_star``."""
    q_star = as_qtable(q_star, mdp.dim)
    H = policy_kernel(mdp, greedy_policy(q_star, mdp.n_actions))
    return np.eye(mdp.dim) - mdp.gamma * H


def action_classes(mdp: Mdp) -> np.ndarray:
    """Label actions that are indistinguishable in a state.

    Two actions in state ``s`` share a label when their transition rows and
    reward rows coincide exactly.  Returns an ``(S, A)`` integer array whose
    entry is the smallest action index of the class.
    """
    S, A = mdp.n_states, mdp.n_actions
    labels = np.empty((S, A), dtype=np.int64)
    for s in range(S):
        for a in range(A):
            labels[s, a] = a
            for b in range(a):
                if np.array_equal(mdp.transition[s, a], mdp.transition[s, b]) and np.array_equal(
                    mdp.reward[s, a], mdp.reward[s, b]
                ):
                    labels[s, a] = labels[s, b]
                    break
    return labels


def optimal_margin(mdp: Mdp, q_star, tol: float = 1e-9) -> float:
    """Smallest gap between the best action and the best inequivalent action.

    States whose actions are all equivalent impose no constraint.  Raises
    :class:`DegenerateMarginError` if an optimal action is tied with an
    inequivalent one.
    """
    q = as_qtable(q_star, mdp.dim).reshape(mdp.n_states, mdp.n_actions)
    labels = action_classes(mdp)
    best = np.argmax(q, axis=1)
    gaps = []
    for s in range(mdp.n_states):
        others = labels[s] != labels[s, best[s]]
        if not np.any(others):
            continue
        gaps.append(q[s, best[s]] - np.max(q[s, others]))
    if not gaps:
        return math.inf
    delta = float(min(gaps))
    if delta <= tol:
        raise DegenerateMarginError(f"optimal actions are tied (margin {delta:.3g})")
    return delta


# ---------------------------------------------------------------------------
# serialization


def mdp_to_dict(mdp: Mdp) -> dict:
    S, A = mdp.n_states, mdp.n_actions
    out = {
        "format": "qdecay-mdp",
        "version": 1,
        "n_states": S,
        "n_actions": A,
        "gamma": mdp.gamma,
        "reward_noise": mdp.reward_noise.to_dict(),
        "transitions": mdp.transition_matrix.tolist(),
        "mean_rewards": mdp.mean_reward.ravel().tolist(),
    }
    if not np.all(mdp.reward == mdp.reward[:, :, :1]):
        out["rewards"] = mdp.reward.reshape(S * A, S).tolist()
    return out


def mdp_from_dict(data: dict) -> Mdp:
    try:
        S, A = int(data["n_states"]), int(data["n_actions"])
        P = np.asarray(data["transitions"], dtype=float).reshape(S, A, S)
        if "rewards" in data:
            R = np.asarray(data["rewards"], dtype=float).reshape(S, A, S)
        else:
            R = np.asarray(data["mean_rewards"], dtype=float).reshape(S, A)
        noise = RewardNoise(**data.get("reward_noise", {}))
        return Mdp(P, R, float(data["gamma"]), noise)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, InvalidArgumentError):
            raise
        raise InvalidArgumentError(f"malformed MDP description: {exc}") from exc


def save_mdp(mdp: Mdp, path) -> Path:
    """Write ``mdp`` as JSON; floats use shortest round-trip repr."""
    path = Path(path)
    path.write_text(json.dumps(mdp_to_dict(mdp), indent=1) + "\n", encoding="utf-8")
    return path


def load_mdp(path) -> Mdp:
    path = Path(path)
    return mdp_from_dict(json.loads(path.read_text(encoding="utf-8")))
