"""Synchronous Q-learning driven by a generative model.

Each step samples one next state (and reward noise) independently for every
(s, a) pair, forms the empirical Bellman target and moves the iterate by a
convex combination::

    Q_t = (1 - eta_t) Q_{t-1} + eta_t * Bhat_t Q_{t-1}

Chains are simulated in vectorized batches; chain ``i`` always consumes the
random stream keyed by ``(seed, domain, purpose, i)``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NumericFailureError
from .mdp import Mdp, as_qtable, exact_bellman, state_values
from .rng import BlockStreams, Purpose
from .schedules import Schedule, admissible_eta_bound, tail_window

__all__ = [
    "RECORD_MODES",
    "SAMPLING_MODES",
    "SamplingTable",
    "RunConfig",
    "Trajectory",
    "ChainBatch",
    "empirical_bellman",
    "q_step",
    "run_chain",
    "run_chains",
    "bellman_noise_sample",
    "bellman_noise_samples",
    "estimate_noise_cov",
    "exact_noise_cov",
    "map_chunks",
]

RECORD_MODES = ("final_only", "error_series", "tail_iterates", "full")
SAMPLING_MODES = ("independent", "shared-uniform")
CHUNK = 250


@dataclass(frozen=True, eq=False)
class SamplingTable:
    """Inverse-CDF tables for drawing ``s'`` and ``R(s, a, s')`` per (s, a).

    Row ``d`` lists the support of ``P(.|s, a)`` in increasing state order;
    a uniform ``u`` selects outcome ``k = #{j : u > cum_j}``.
    """

    support: np.ndarray  # (D, K) next-state indices
    thresholds: np.ndarray  # (D, K-1) cumulative probabilities; padding is 2.0
    rewards: np.ndarray  # (D, K)
    n_states: int
    n_actions: int
    gamma: float

    @classmethod
    def from_mdp(cls, mdp: Mdp) -> "SamplingTable":
        P = mdp.transition_matrix
        R = mdp.reward.reshape(mdp.dim, mdp.n_states)
        rows = [np.flatnonzero(P[d] > 0) for d in range(mdp.dim)]
        K = max(len(r) for r in rows)
        support = np.zeros((mdp.dim, K), dtype=np.int64)
        thresholds = np.full((mdp.dim, K - 1), 2.0)
        rewards = np.zeros((mdp.dim, K))
        for d, idx in enumerate(rows):
            m = len(idx)
            support[d, :m] = idx
            support[d, m:] = idx[-1]
            rewards[d, :m] = R[d, idx]
            rewards[d, m:] = R[d, idx[-1]]
            thresholds[d, : m - 1] = np.cumsum(P[d, idx])[: m - 1]
        return cls(support, thresholds, rewards, mdp.n_states, mdp.n_actions, mdp.gamma)

    def draw(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Map uniforms of shape ``(B, D)`` (or ``(B, 1)``, shared) to next states and rewards."""
        D, K = self.support.shape
        k = np.zeros(u.shape[:-1] + (D,), dtype=np.int64)
        for j in range(K - 1):
            k += u > self.thresholds[:, j]
        k += np.arange(D) * K
        return self.support.ravel()[k], self.rewards.ravel()[k]

    def target(self, q: np.ndarray, u: np.ndarray, noise=None) -> np.ndarray:
        """Empirical Bellman targets for a batch of Q-tables ``q`` of shape ``(B, D)``.

        Same outcome rule as :meth:`draw`, evaluated outcome by outcome.
        """
        cols = self._columns()
        v = _row_max(q, self.n_actions)
        sup, rew, thr = cols[0]
        out = self.gamma * v[:, sup]
        out += rew
        for sup, rew, thr in cols[1:]:
            alt = self.gamma * v[:, sup]
            alt += rew
            np.copyto(out, alt, where=u > thr)
        if noise is not None:
            out += noise
        return out

    def _columns(self):
        cached = self.__dict__.get("_cols")
        if cached is None:
            K = self.support.shape[1]
            cached = [
                (
                    np.ascontiguousarray(self.support[:, j]),
                    np.ascontiguousarray(self.rewards[:, j]),
                    None if j == 0 else np.ascontiguousarray(self.thresholds[:, j - 1]),
                )
                for j in range(K)
            ]
            object.__setattr__(self, "_cols", cached)
        return cached


def _row_max(q: np.ndarray, n_actions: int) -> np.ndarray:
    """``max_a Q(s, a)`` for a ``(B, D)`` batch, unrolled over actions."""
    q3 = q.reshape(q.shape[0], -1, n_actions)
    v = q3[:, :, 0].copy()
    for a in range(1, n_actions):
        np.maximum(v, q3[:, :, a], out=v)
    return v


def _check_sampling(sampling: str) -> None:
    if sampling not in SAMPLING_MODES:
        raise InvalidArgumentError(f"sampling must be one of {SAMPLING_MODES}")


def _uniform_width(sampling: str, dim: int) -> int:
    return 1 if sampling == "shared-uniform" else dim


def empirical_bellman(mdp: Mdp, q, rng: np.random.Generator, sampling: str = "independent") -> np.ndarray:
    """One draw of ``Bhat Q``; unbiased for ``exact_bellman(mdp, q)``."""
    _check_sampling(sampling)
    q = as_qtable(q, mdp.dim)
    table = SamplingTable.from_mdp(mdp)
    u = rng.random((1, _uniform_width(sampling, mdp.dim)))
    noise = None
    if mdp.reward_noise.active:
        noise = mdp.reward_noise.sample(rng, (1, mdp.dim))
    return table.target(q[None, :], u, noise)[0]


def q_step(q, eta: float, bhat) -> np.ndarray:
    """``(1 - eta) * q + eta * bhat`` for ``eta`` in [0, 1]."""
    if not 0.0 <= eta <= 1.0:
        raise InvalidArgumentError(f"learning rate {eta} outside [0, 1]")
    q = np.asarray(q, dtype=float)
    bhat = np.asarray(bhat, dtype=float)
    if q.shape != bhat.shape:
        raise InvalidArgumentError("q and bhat shapes differ")
    return (1.0 - eta) * q + eta * bhat


def bellman_noise_samples(
    mdp: Mdp, q_star, m: int, rng: np.random.Generator, sampling: str = "independent"
) -> np.ndarray:
    """``m`` draws of ``Z = Bhat Q* - B Q*`` as an ``(m, D)`` array."""
    _check_sampling(sampling)
    q_star = as_qtable(q_star, mdp.dim)
    table = SamplingTable.from_mdp(mdp)
    bq = exact_bellman(mdp, q_star)
    u = rng.random((m, _uniform_width(sampling, mdp.dim)))
    noise = mdp.reward_noise.sample(rng, (m, mdp.dim)) if mdp.reward_noise.active else None
    q = np.broadcast_to(q_star, (m, mdp.dim))
    return table.target(q, u, noise) - bq


def bellman_noise_sample(mdp: Mdp, q_star, rng: np.random.Generator, sampling: str = "independent") -> np.ndarray:
    return bellman_noise_samples(mdp, q_star, 1, rng, sampling)[0]


def estimate_noise_cov(
    mdp: Mdp, q_star, m: int, rng: np.random.Generator, sampling: str = "independent"
) -> np.ndarray:
    """Empirical covariance (divisor ``m - 1``) of ``m`` Bellman-noise draws."""
    if m < 2:
        raise InvalidArgumentError("need at least two samples for a covariance")
    z = bellman_noise_samples(mdp, q_star, m, rng, sampling)
    zc = z - z.mean(axis=0)
    cov = zc.T @ zc / (m - 1)
    return 0.5 * (cov + cov.T)


def exact_noise_cov(mdp: Mdp, q_star) -> np.ndarray:
    """Exact ``Cov(Z)`` under independent per-(s, a) sampling (diagonal).

    The target for pair ``d`` is ``R(d, s') + gamma V*(s') + noise``; its
    variance over ``s' ~ P(.|d)`` plus the reward-noise variance is the
    diagonal, and distinct pairs are independent.
    """
    q_star = as_qtable(q_star, mdp.dim)
    v = state_values(q_star, mdp.n_actions)
    P = mdp.transition_matrix
    R = mdp.reward.reshape(mdp.dim, mdp.n_states)
    y = R + mdp.gamma * v[None, :]
    mean = np.sum(P * y, axis=1)
    var = np.sum(P * (y - mean[:, None]) ** 2, axis=1) + mdp.reward_noise.variance
    return np.diag(var)


# ---------------------------------------------------------------------------
# chains


@dataclass(frozen=True, eq=False)
class RunConfig:
    """One Q-learning run.

    ``n`` is the horizon the schedule is built for and ``steps`` (``n0``) the
    number of updates actually performed.  ``tail`` is the number of final
    iterates kept in ``tail_iterates`` mode; by default the tail window with
    ``c = 1`` and the schedule's ``nu`` (1 for other kinds).
    """

    mdp: Mdp
    schedule: Schedule
    n: int
    steps: int | None = None
    q0: object = 0.0
    seed: int = 0
    record: str = "final_only"
    tail: int | None = None
    sampling: str = "independent"
    p: float = 2.0
    unsafe: bool = False
    domain: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise InvalidArgumentError("horizon n must be positive")
        steps = self.n if self.steps is None else int(self.steps)
        if not 1 <= steps <= self.n:
            raise InvalidArgumentError(f"steps must lie in [1, n]; got {steps}")
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "schedule", self.schedule.with_horizon(self.n))
        if self.record not in RECORD_MODES:
            raise InvalidArgumentError(f"record must be one of {RECORD_MODES}")
        _check_sampling(self.sampling)
        if self.schedule.eta > 1.0:
            raise InvalidArgumentError("base learning rate must not exceed 1")
        bound = admissible_eta_bound(self.mdp.gamma, self.p)
        if not self.unsafe and self.schedule.eta >= bound:
            raise InvalidArgumentError(
                f"eta={self.schedule.eta} is not below the admissible bound {bound:.6g} "
                f"for gamma={self.mdp.gamma}, p={self.p}; set unsafe=True to override"
            )
        if self.record == "tail_iterates":
            tail = self.tail
            if tail is None:
                tail = tail_window(self.n, self.schedule.nu or 1.0, 1.0)[0]
            object.__setattr__(self, "tail", min(int(tail), steps))
            if self.tail < 1:
                raise InvalidArgumentError("tail must be positive")
        as_qtable(self.initial_q(), self.mdp.dim)

    def initial_q(self) -> np.ndarray:
        q0 = np.asarray(self.q0, dtype=float)
        if q0.ndim == 0:
            return np.full(self.mdp.dim, float(q0))
        return q0.copy()


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded output of one chain.

    ``iterates`` holds rows for ``t = first_index .. steps`` (all of them in
    ``full`` mode, the tail in ``tail_iterates`` mode).  ``errors[t]`` is
    ``|Q_t - Q*|_inf`` for ``t = 0 .. steps``.  ``iterate_sum`` is
    ``sum_{t=1}^{steps} Q_t`` and is always available.
    """

    final: np.ndarray
    steps: int
    horizon: int
    record: str
    etas: np.ndarray
    iterate_sum: np.ndarray
    errors: np.ndarray | None = None
    iterates: np.ndarray | None = None
    first_index: int | None = None
    prefix_sup: float | None = None
    seed: int = 0
    chain: int = 0
    domain: int = 0


@dataclass(frozen=True, eq=False)
class ChainBatch:
    """Outputs of several chains stacked along a leading axis."""

    chains: np.ndarray
    final: np.ndarray  # (B, D)
    steps: int
    horizon: int
    record: str
    etas: np.ndarray
    iterate_sum: np.ndarray  # (B, D)
    errors: np.ndarray | None = None  # (B, steps + 1)
    iterates: np.ndarray | None = None  # (B, T, D)
    first_index: int | None = None
    prefix_sup: np.ndarray | None = None  # (B,)
    seed: int = 0
    domain: int = 0

    def __len__(self) -> int:
        return len(self.chains)

    def trajectory(self, i: int) -> Trajectory:
        return Trajectory(
            final=self.final[i],
            steps=self.steps,
            horizon=self.horizon,
            record=self.record,
            etas=self.etas,
            iterate_sum=self.iterate_sum[i],
            errors=None if self.errors is None else self.errors[i],
            iterates=None if self.iterates is None else self.iterates[i],
            first_index=self.first_index,
            prefix_sup=None if self.prefix_sup is None else float(self.prefix_sup[i]),
            seed=self.seed,
            chain=int(self.chains[i]),
            domain=self.domain,
        )

    @staticmethod
    def concat(parts: list["ChainBatch"]) -> "ChainBatch":
        first = parts[0]

        def cat(name):
            vals = [getattr(p, name) for p in parts]
            return None if vals[0] is None else np.concatenate(vals, axis=0)

        return ChainBatch(
            chains=cat("chains"),
            final=cat("final"),
            steps=first.steps,
            horizon=first.horizon,
            record=first.record,
            etas=first.etas,
            iterate_sum=cat("iterate_sum"),
            errors=cat("errors"),
            iterates=cat("iterates"),
            first_index=first.first_index,
            prefix_sup=cat("prefix_sup"),
            seed=first.seed,
            domain=first.domain,
        )


def map_chunks(fn, chains, threads: int = 1, chunk: int = CHUNK) -> list:
    """Apply ``fn`` to fixed-size chunks of ``chains`` and return results in order.

    Chunk boundaries depend only on ``chunk``, never on ``threads``.
    """
    chains = np.asarray(chains, dtype=np.int64)
    pieces = [chains[i : i + chunk] for i in range(0, len(chains), chunk)]
    if threads <= 1 or len(pieces) == 1:
        return [fn(p) for p in pieces]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, pieces))


def _noise_kind(mdp: Mdp):
    noise = mdp.reward_noise
    if noise.kind == "gaussian":
        return "normal"
    return lambda g, size: g.standard_t(noise.df, size)


def _simulate(config: RunConfig, chains: np.ndarray, q_star, prefix_reference, observer) -> ChainBatch:
    mdp = config.mdp
    D, B, steps = mdp.dim, len(chains), config.steps
    table = SamplingTable.from_mdp(mdp)
    etas = config.schedule.rates(steps)
    q = np.tile(config.initial_q(), (B, 1))
    uniforms = BlockStreams(
        config.seed, Purpose.TRANSITION, chains, (_uniform_width(config.sampling, D),), domain=config.domain
    )
    noise_streams = None
    if mdp.reward_noise.active:
        noise_streams = BlockStreams(config.seed, Purpose.REWARD, chains, (D,), _noise_kind(mdp), config.domain)
        scale = mdp.reward_noise.scale

    errors = iterates = prefix_sup = partial = None
    first_index = None
    if config.record == "error_series":
        errors = np.empty((B, steps + 1))
        errors[:, 0] = np.abs(q - q_star).max(axis=1)
    if config.record == "full":
        first_index = 1
        iterates = np.empty((B, steps, D))
    elif config.record == "tail_iterates":
        first_index = steps - config.tail + 1
        iterates = np.empty((B, config.tail, D))
    if prefix_reference is not None:
        prefix_sup = np.zeros(B)
        partial = np.zeros((B, D))
    total = np.zeros((B, D))
    # |Q_t|_inf <= max(|Q_0|_inf, r_max / (1 - gamma)) holds for eta <= 1 when rewards are deterministic
    limit = math.inf
    if not mdp.reward_noise.active:
        limit = max(float(np.abs(q).max(initial=0.0)), mdp.max_abs_reward / (1.0 - mdp.gamma)) * (1 + 1e-12)

    for t in range(1, steps + 1):
        eta = float(etas[t - 1])
        noise = None
        if noise_streams is not None:
            noise = scale * noise_streams.next()
        bhat = table.target(q, uniforms.next(), noise)
        q = (1.0 - eta) * q + eta * bhat
        if not np.isfinite(q).all():
            raise NumericFailureError(f"non-finite Q iterate at step {t} (eta={eta:g})", step=t)
        if limit < math.inf and np.abs(q).max() > limit:
            raise NumericFailureError(f"Q iterate left the stable range at step {t}", step=t)
        total += q
        if errors is not None:
            errors[:, t] = np.abs(q - q_star).max(axis=1)
        if iterates is not None and t >= first_index:
            iterates[:, t - first_index] = q
        if partial is not None:
            partial += q - prefix_reference
            np.maximum(prefix_sup, np.abs(partial).max(axis=1), out=prefix_sup)
        if observer is not None:
            observer(t, q, chains)

    return ChainBatch(
        chains=np.asarray(chains, dtype=np.int64),
        final=q,
        steps=steps,
        horizon=config.n,
        record=config.record,
        etas=etas,
        iterate_sum=total,
        errors=errors,
        iterates=iterates,
        first_index=first_index,
        prefix_sup=prefix_sup,
        seed=config.seed,
        domain=config.domain,
    )


def run_chains(
    config: RunConfig,
    chains,
    q_star=None,
    *,
    threads: int = 1,
    prefix_reference=None,
    observer=None,
) -> ChainBatch:
    """Run independent chains ``chains`` (integer ids) under ``config``.

    ``prefix_reference`` enables the online statistic
    ``max_t |sum_{l<=t} (Q_l - reference)|_inf``.  ``observer(t, q, ids)``
    is called after every step with the current batch of iterates.
    """
    chains = np.atleast_1d(np.asarray(chains, dtype=np.int64))
    if config.record == "error_series":
        if q_star is None:
            raise InvalidArgumentError("error_series recording needs q_star")
        q_star = as_qtable(q_star, config.mdp.dim)
    if prefix_reference is not None:
        prefix_reference = as_qtable(prefix_reference, config.mdp.dim)
    if config.record == "full":
        need = len(chains) * config.steps * config.mdp.dim * 8
        if need > 4 * 2**30:
            raise InvalidArgumentError(f"full recording would need {need / 2**30:.1f} GiB")
    parts = map_chunks(
        lambda ids: _simulate(config, ids, q_star, prefix_reference, observer), chains, threads=threads
    )
    return ChainBatch.concat(parts)


def run_chain(config: RunConfig, q_star=None, chain: int = 0, prefix_reference=None) -> Trajectory:
    """Run a single chain; identical to row ``chain`` of a batched run."""
    return run_chains(config, [chain], q_star, prefix_reference=prefix_reference).trajectory(0)
