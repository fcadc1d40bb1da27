"""Tail Polyak-Ruppert averaging, the Gaussian coupling chain and its statistics.

The coupling chain mirrors the linearized Q-learning error::

    Y_t = (I - eta_t G) Y_{t-1} + eta_t * aleph_t,   Y_0 = 0,
    aleph_t ~ N(0, Gamma),  G = I - gamma H^{pi*},  Gamma = Cov(Bellman noise)

and bootstrap quantiles of sup-norm partial-sum statistics are read off
independent replicas of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import InvalidArgumentError, NumericFailureError
from .mdp import Mdp, as_qtable, greedy_policy, linearization_matrix
from .qlearning import ChainBatch, Trajectory, estimate_noise_cov, exact_noise_cov, map_chunks
from .rng import BlockStreams, Purpose, stream
from .schedules import Schedule, tail_window

__all__ = [
    "TailPrEstimate",
    "GaussianChainConfig",
    "STATISTICS",
    "tail_pr_average",
    "full_pr_average",
    "factorize_cov",
    "gaussian_chain",
    "run_gaussian_chains",
    "sup_norm_statistic",
    "prefix_sup_statistic",
    "tail_mean_sup_statistic",
    "batch_statistic",
    "QuantileTable",
    "bootstrap_quantiles",
    "type7_quantiles",
    "QQPairs",
    "qq_pairs",
    "normal_qq_correlation",
    "ks_distance",
    "CltProjections",
    "clt_projections",
    "random_unit_directions",
    "coupling_inputs",
]

STATISTICS = ("suffix_sup", "prefix_sup", "tail_mean_sup")
_FSUM_WINDOW = 10_000


# ---------------------------------------------------------------------------
# averaging


@dataclass(frozen=True, eq=False)
class TailPrEstimate:
    """Mean of the last ``window`` iterates.

    ``q_bar`` has shape ``(D,)`` for one chain or ``(B, D)`` for a batch.
    ``scaling`` is ``n^(nu / (2 (nu + 1)))``, the CLT normalisation.
    """

    q_bar: np.ndarray
    window: int
    k_n: int
    nu: float
    c: float
    n: int
    scaling: float


def _tail_bounds(steps: int, horizon: int, nu: float, c: float) -> tuple[int, int]:
    window, _ = tail_window(horizon, nu, c)
    window = min(window, steps)
    return window, steps - window + 1


def _exact_mean(block: np.ndarray) -> np.ndarray:
    """Mean over axis -2; exactly rounded sums for long windows."""
    if block.shape[-2] < _FSUM_WINDOW:
        return block.mean(axis=-2)
    flat = block.reshape(-1, block.shape[-2], block.shape[-1])
    out = np.array(
        [[math.fsum(flat[b, :, d]) for d in range(flat.shape[2])] for b in range(flat.shape[0])]
    )
    return (out / block.shape[-2]).reshape(block.shape[:-2] + block.shape[-1:])


def tail_pr_average(traj: Trajectory | ChainBatch, nu: float, c: float = 1.0) -> TailPrEstimate:
    """Average the last ``floor(c n^(nu/(nu+1)))`` recorded iterates.

    The window size is set by the horizon ``n``; when the run stopped early
    (``steps < n``) the window ends at the last step taken.
    """
    window, k_n = _tail_bounds(traj.steps, traj.horizon, nu, c)
    if traj.iterates is None or traj.first_index is None or traj.first_index > k_n:
        raise InvalidArgumentError(
            f"tail window [{k_n}, {traj.steps}] is not covered by the recorded iterates"
        )
    start = k_n - traj.first_index
    block = traj.iterates[..., start : start + window, :]
    return TailPrEstimate(
        q_bar=_exact_mean(block),
        window=window,
        k_n=k_n,
        nu=nu,
        c=c,
        n=traj.horizon,
        scaling=traj.horizon ** (nu / (2.0 * (nu + 1.0))),
    )


def full_pr_average(traj: Trajectory | ChainBatch) -> np.ndarray:
    """Mean of all iterates ``Q_1 .. Q_steps``."""
    if traj.iterates is not None and traj.record == "full":
        return _exact_mean(traj.iterates)
    if traj.iterate_sum is None:
        raise InvalidArgumentError("trajectory carries neither full iterates nor their running sum")
    return traj.iterate_sum / traj.steps


# ---------------------------------------------------------------------------
# Gaussian coupling chain


@dataclass(frozen=True, eq=False)
class GaussianChainConfig:
    """Inputs of the Gaussian coupling chain."""

    G: np.ndarray
    gamma_cov: np.ndarray
    schedule: Schedule
    n: int
    seed: int = 0
    steps: int | None = None
    domain: int = 0

    def __post_init__(self):
        G = np.asarray(self.G, dtype=float)
        cov = np.asarray(self.gamma_cov, dtype=float)
        if G.ndim != 2 or G.shape[0] != G.shape[1] or cov.shape != G.shape:
            raise InvalidArgumentError("G and gamma_cov must be square matrices of equal size")
        if not np.allclose(cov, cov.T, atol=1e-12, rtol=0):
            raise InvalidArgumentError("gamma_cov must be symmetric")
        steps = self.n if self.steps is None else int(self.steps)
        if not 1 <= steps <= self.n:
            raise InvalidArgumentError("steps must lie in [1, n]")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "gamma_cov", cov)
        object.__setattr__(self, "steps", steps)
        object.__setattr__(self, "schedule", self.schedule.with_horizon(self.n))

    @property
    def dim(self) -> int:
        return self.G.shape[0]


def factorize_cov(cov: np.ndarray) -> np.ndarray:
    """Return ``L`` with ``L L^T = cov`` after flooring tiny negative eigenvalues.

    Refuses matrices with an eigenvalue below ``-1e-8 * trace / D``.
    """
    cov = np.asarray(cov, dtype=float)
    cov = 0.5 * (cov + cov.T)
    w, V = np.linalg.eigh(cov)
    floor = -1e-8 * max(np.trace(cov), 0.0) / cov.shape[0]
    if w.min() < floor or (floor == 0.0 and w.min() < -1e-300):
        raise NumericFailureError(f"covariance is indefinite (smallest eigenvalue {w.min():.3g})")
    return V * np.sqrt(np.clip(w, 0.0, None))


def _simulate_gaussian(cfg: GaussianChainConfig, chains, L, tail, prefix) -> ChainBatch:
    B, D, steps = len(chains), cfg.dim, cfg.steps
    etas = cfg.schedule.rates(steps)
    normals = BlockStreams(cfg.seed, Purpose.GAUSSIAN, chains, (D,), "normal", cfg.domain)
    y = np.zeros((B, D))
    eye = np.eye(D)
    Lt = L.T
    total = np.zeros((B, D))
    iterates = prefix_sup = partial = None
    first_index = None
    if tail is not None:
        first_index = steps - tail + 1
        iterates = np.empty((B, tail, D))
    if prefix:
        prefix_sup = np.zeros(B)
        partial = np.zeros((B, D))
    for t in range(1, steps + 1):
        eta = float(etas[t - 1])
        A = eye - eta * cfg.G
        y = y @ A.T + eta * (normals.next() @ Lt)
        total += y
        if iterates is not None and t >= first_index:
            iterates[:, t - first_index] = y
        if partial is not None:
            partial += y
            np.maximum(prefix_sup, np.abs(partial).max(axis=1), out=prefix_sup)
    if not np.isfinite(y).all():
        raise NumericFailureError("Gaussian chain produced non-finite values", step=steps)
    return ChainBatch(
        chains=np.asarray(chains, dtype=np.int64),
        final=y,
        steps=steps,
        horizon=cfg.n,
        record="tail_iterates" if tail is not None else "final_only",
        etas=etas,
        iterate_sum=total,
        iterates=iterates,
        first_index=first_index,
        prefix_sup=prefix_sup,
        seed=cfg.seed,
        domain=cfg.domain,
    )


def run_gaussian_chains(
    cfg: GaussianChainConfig, chains, *, tail: int | None = None, prefix: bool = False, threads: int = 1
) -> ChainBatch:
    """Simulate independent coupling chains; keeps the last ``tail`` values of each."""
    L = factorize_cov(cfg.gamma_cov)
    if tail is not None:
        tail = min(int(tail), cfg.steps)
    chains = np.atleast_1d(np.asarray(chains, dtype=np.int64))
    parts = map_chunks(lambda ids: _simulate_gaussian(cfg, ids, L, tail, prefix), chains, threads=threads)
    return ChainBatch.concat(parts)


def gaussian_chain(cfg: GaussianChainConfig, chain: int = 0) -> np.ndarray:
    """Full path ``Y_1 .. Y_steps`` of one coupling chain, shape ``(steps, D)``."""
    return run_gaussian_chains(cfg, [chain], tail=cfg.steps).iterates[0]


def coupling_inputs(
    mdp: Mdp, q_ref, *, m: int = 100_000, seed: int = 0, exact: bool = False, sampling: str = "independent"
) -> tuple[np.ndarray, np.ndarray]:
    """``(G, Gamma)`` linearized at ``q_ref``.

    ``q_ref`` is Q* in oracle mode or a plug-in estimate such as the tail
    average; the greedy policy of ``q_ref`` defines ``G``.  ``Gamma`` is the
    empirical noise covariance from ``m`` draws, or the exact diagonal one
    when ``exact`` is set (independent sampling only).
    """
    q_ref = as_qtable(q_ref, mdp.dim)
    G = linearization_matrix(mdp, q_ref)
    if exact:
        if sampling != "independent":
            raise InvalidArgumentError("exact noise covariance assumes independent sampling")
        return G, exact_noise_cov(mdp, q_ref)
    return G, estimate_noise_cov(mdp, q_ref, m, stream(seed, Purpose.NOISE), sampling)


# ---------------------------------------------------------------------------
# sup-norm partial-sum statistics


def _centered(iterates, reference) -> np.ndarray:
    x = np.asarray(iterates, dtype=float)
    if x.ndim < 2 or x.shape[-2] == 0:
        raise InvalidArgumentError("need a nonempty (T, D) sequence of iterates")
    return x - np.asarray(reference, dtype=float)


def sup_norm_statistic(iterates, reference=0.0):
    """``max_t |sum_{l=t}^{end} (x_l - reference)|_inf`` over the given index range.

    Suffix sums are accumulated backwards from the last index.  Leading
    batch axes are kept.
    """
    x = _centered(iterates, reference)
    suffix = np.cumsum(x[..., ::-1, :], axis=-2)
    return np.abs(suffix).max(axis=(-2, -1))


def prefix_sup_statistic(iterates, reference=0.0):
    """``max_t |sum_{l=first}^{t} (x_l - reference)|_inf``."""
    x = _centered(iterates, reference)
    return np.abs(np.cumsum(x, axis=-2)).max(axis=(-2, -1))


def tail_mean_sup_statistic(iterates, reference=0.0):
    """``|mean_l (x_l - reference)|_inf``."""
    x = _centered(iterates, reference)
    return np.abs(x.mean(axis=-2)).max(axis=-1)


def batch_statistic(batch: ChainBatch, statistic: str, nu: float, c: float = 1.0, reference=0.0) -> np.ndarray:
    """Evaluate ``statistic`` for every chain of ``batch``.

    ``suffix_sup`` and ``tail_mean_sup`` use the tail window
    ``[k_n, steps]``; ``prefix_sup`` needs the online value recorded during
    the run.
    """
    if statistic == "prefix_sup":
        if batch.prefix_sup is None:
            raise InvalidArgumentError("batch was run without prefix tracking")
        return batch.prefix_sup
    if statistic not in STATISTICS:
        raise InvalidArgumentError(f"unknown statistic {statistic!r}")
    window, k_n = _tail_bounds(batch.steps, batch.horizon, nu, c)
    if batch.iterates is None or batch.first_index > k_n:
        raise InvalidArgumentError("batch does not cover the tail window")
    start = k_n - batch.first_index
    block = batch.iterates[:, start : start + window]
    if statistic == "suffix_sup":
        return sup_norm_statistic(block, reference)
    return tail_mean_sup_statistic(block, reference)


# ---------------------------------------------------------------------------
# quantiles, QQ and KS


def type7_quantiles(sample, probs) -> np.ndarray:
    """Linear interpolation of order statistics (Hyndman-Fan type 7)."""
    return np.quantile(np.asarray(sample, dtype=float), np.asarray(probs, dtype=float), method="linear")


@dataclass(frozen=True, eq=False)
class QuantileTable:
    statistic: str
    n: int
    nu: float
    c: float
    B: int
    seed: int
    quantiles: list
    samples: np.ndarray | None = field(default=None, repr=False)

    def value(self, p: float) -> float:
        for prob, v in self.quantiles:
            if prob == p:
                return v
        raise KeyError(p)

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "n": self.n,
            "nu": self.nu,
            "c": self.c,
            "B": self.B,
            "seed": self.seed,
            "quantiles": [[float(p), float(v)] for p, v in self.quantiles],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "QuantileTable":
        return cls(
            statistic=data["statistic"],
            n=int(data["n"]),
            nu=float(data["nu"]),
            c=float(data["c"]),
            B=int(data["B"]),
            seed=int(data["seed"]),
            quantiles=[(float(p), float(v)) for p, v in data["quantiles"]],
        )


def bootstrap_quantiles(
    cfg: GaussianChainConfig,
    B: int,
    probs,
    statistic: str = "suffix_sup",
    *,
    nu: float = 1.0,
    c: float = 1.0,
    threads: int = 1,
) -> QuantileTable:
    """Quantiles of ``statistic`` over ``B`` independent coupling chains."""
    if statistic not in STATISTICS:
        raise InvalidArgumentError(f"unknown statistic {statistic!r}")
    probs = [float(p) for p in probs]
    if any(not 0 < p < 1 for p in probs):
        raise InvalidArgumentError("probabilities must lie in (0, 1)")
    if B < 1:
        raise InvalidArgumentError("B must be positive")
    tail = None
    if statistic != "prefix_sup":
        tail = _tail_bounds(cfg.steps, cfg.n, nu, c)[0]
    batch = run_gaussian_chains(cfg, np.arange(B), tail=tail, prefix=statistic == "prefix_sup", threads=threads)
    sample = batch_statistic(batch, statistic, nu, c)
    values = type7_quantiles(sample, probs)
    return QuantileTable(
        statistic=statistic,
        n=cfg.n,
        nu=nu,
        c=c,
        B=B,
        seed=cfg.seed,
        quantiles=[(p, float(v)) for p, v in zip(probs, values)],
        samples=sample,
    )


def _pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    a = a - a.mean()
    b = b - b.mean()
    denom = math.sqrt(float(a @ a) * float(b @ b))
    if denom == 0.0:
        return None
    return float(a @ b) / denom


@dataclass(frozen=True, eq=False)
class QQPairs:
    probs: np.ndarray
    a: np.ndarray
    b: np.ndarray
    correlation: float | None


def qq_pairs(sample_a, sample_b, k: int = 100) -> QQPairs:
    """Type-7 quantiles of both samples at ``p_i = i / (k + 1)``, ``i = 1..k``.

    ``correlation`` is the Pearson correlation of the pairs, ``None`` when
    either side is constant.
    """
    if k < 2:
        raise InvalidArgumentError("k must be at least 2")
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size == 0 or b.size == 0:
        raise InvalidArgumentError("samples must be nonempty")
    probs = np.arange(1, k + 1) / (k + 1)
    qa, qb = type7_quantiles(a, probs), type7_quantiles(b, probs)
    return QQPairs(probs, qa, qb, _pearson(qa, qb))


def normal_qq_correlation(sample) -> float | None:
    """Correlation of sorted data with normal scores at Blom positions."""
    x = np.sort(np.asarray(sample, dtype=float))
    m = x.size
    scores = stats.norm.ppf((np.arange(1, m + 1) - 0.375) / (m + 0.25))
    return _pearson(x, scores)


def ks_distance(sample_a, sample_b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic."""
    return float(stats.ks_2samp(np.asarray(sample_a), np.asarray(sample_b)).statistic)


# ---------------------------------------------------------------------------
# CLT projections


def random_unit_directions(dim: int, k: int, seed: int = 0) -> np.ndarray:
    """``k`` independent directions uniform on the unit sphere in ``R^dim``."""
    g = stream(seed, Purpose.DIRECTIONS).standard_normal((k, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


@dataclass(frozen=True, eq=False)
class CltProjections:
    """Per-direction samples ``scaling * u^T (Qbar - Q*)``.

    ``raw`` and ``studentized`` have shape ``(K, B)``; a direction with zero
    sample variance is flagged in ``degenerate`` and its studentized row is
    all zeros.
    """

    raw: np.ndarray
    studentized: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    degenerate: np.ndarray

    def qq_correlations(self) -> list:
        return [None if d else normal_qq_correlation(row) for row, d in zip(self.studentized, self.degenerate)]


def clt_projections(estimates, q_star, scaling: float, directions) -> CltProjections:
    est = np.atleast_2d(np.asarray(estimates, dtype=float))
    q_star = as_qtable(q_star, est.shape[1])
    U = np.atleast_2d(np.asarray(directions, dtype=float))
    if U.shape[1] != est.shape[1]:
        raise InvalidArgumentError("directions must have the Q-table dimension")
    if np.any(np.abs(np.linalg.norm(U, axis=1) - 1.0) > 1e-10):
        raise InvalidArgumentError("directions must be unit vectors")
    raw = scaling * (U @ (est - q_star).T)
    mean = raw.mean(axis=1)
    sd = raw.std(axis=1, ddof=1) if raw.shape[1] > 1 else np.zeros(raw.shape[0])
    degenerate = ~(sd > 1e-300)
    safe = np.where(degenerate, 1.0, sd)
    studentized = np.where(degenerate[:, None], 0.0, (raw - mean[:, None]) / safe[:, None])
    return CltProjections(raw, studentized, mean, sd, degenerate)
