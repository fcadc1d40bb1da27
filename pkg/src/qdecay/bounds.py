"""Explicit constants and finite-sample error bounds, with numeric checks of
the summation lemmas they rest on."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from .errors import InvalidArgumentError
from .mdp import Mdp, as_qtable, greedy_policy, optimal_margin, policy_kernel, action_classes
from .qlearning import bellman_noise_samples
from .rng import Purpose, stream
from .schedules import Schedule, admissible_eta_bound

__all__ = [
    "BoundParams",
    "constants_c",
    "bound_constants",
    "regime_threshold",
    "mse_bound",
    "poly_bound_reference",
    "iteration_complexity",
    "lemma_sum_check",
    "lemma_sum_scan",
    "lemma_integral_check",
    "MarginReport",
    "margin_and_lipschitz",
    "estimate_theta",
]


@dataclass(frozen=True)
class BoundParams:
    """Inputs of the PD2Z mean-square error bound.

    ``theta_p_root`` is ``Theta_p^(1/p)``, the p-th moment root of the
    Euclidean norm of the Bellman noise; ``init_gap`` is ``|Q_0 - Q*|_2``.
    """

    eta: float
    gamma: float
    p: float
    nu: float
    n: int
    theta_p_root: float
    init_gap: float

    def __post_init__(self):
        if self.theta_p_root < 0 or self.init_gap < 0:
            raise InvalidArgumentError("theta_p_root and init_gap must be nonnegative")
        if self.n < 1:
            raise InvalidArgumentError("n must be positive")
        constants_c(self.eta, self.gamma, self.p)

    @property
    def c3(self) -> float:
        return constants_c(self.eta, self.gamma, self.p)[2]


def constants_c(eta: float, gamma: float, p: float = 2.0) -> tuple[float, float, float]:
    """``(c1, c2, c3)`` with ``c3 = (eta c1 - eta^2 c2) / (2 eta)``."""
    if not (0 < eta < admissible_eta_bound(gamma, p)):
        raise InvalidArgumentError(f"eta={eta} is not admissible for gamma={gamma}, p={p}")
    c1 = 2.0 * (1.0 - gamma)
    c2 = (1.0 - gamma) ** 2 + 2.0 * (p - 1.0) * gamma**2
    c3 = (eta * c1 - eta**2 * c2) / (2.0 * eta)
    return c1, c2, c3


def bound_constants(c: float, nu: float, p: float, eta: float) -> tuple[float, float]:
    r"""``(C1, C2)``.

    C1 = 2^{nu(p+1)} (1 + 2^{-p} Gamma(nu p + 1)) / c
    C2 = eta^p 4^{nu p} exp(2^{nu+1}/(nu+1)) (nu+1)^{(p-1) nu/(nu+1)}
         (c eta)^{-(nu p + 1)/(nu + 1)} Gamma((nu p + 1)/(nu + 1))
    """
    if not (0 < c < 1):
        raise InvalidArgumentError("c must lie in (0, 1)")
    if nu < 1.0 / p:
        raise InvalidArgumentError("nu must be at least 1/p")
    if not eta > 0:
        raise InvalidArgumentError("eta must be positive")
    C1 = 2.0 ** (nu * (p + 1)) * (1.0 + 2.0**-p * math.gamma(nu * p + 1)) / c
    a = (nu * p + 1) / (nu + 1)
    C2 = (
        eta**p
        * 4.0 ** (nu * p)
        * math.exp(2.0 ** (nu + 1) / (nu + 1))
        * (nu + 1) ** ((p - 1) * nu / (nu + 1))
        * (c * eta) ** (-a)
        * math.gamma(a)
    )
    return C1, C2


def regime_threshold(c_eta: float, nu: float, n: int) -> float:
    """``t* = n - 2 (c eta)^{-1/(nu+1)} n^{nu/(nu+1)}``; ``t <= t*`` is transient."""
    return n - 2.0 / c_eta ** (1.0 / (nu + 1)) * n ** (nu / (nu + 1))


def mse_bound(params: BoundParams, t: int) -> tuple[float, str]:
    """Bound on ``(E |Q_{t,n} - Q*|_2^2)^(1/2)`` for the PD2Z schedule.

    Returns ``(value, regime)`` with regime ``"transient"`` or
    ``"convergence"``.  ``C1`` and ``C2`` are evaluated at ``c3`` and exponent 2.
    """
    n, nu, eta = params.n, params.nu, params.eta
    if not 1 <= t <= n:
        raise InvalidArgumentError(f"t={t} outside [1, {n}]")
    c3 = params.c3
    forget = math.exp(-c3 * eta * t * (1.0 - 1.0 / n) ** nu) * params.init_gap
    C1, C2 = bound_constants(c3, nu, 2.0, eta)
    scale = 2.0 * math.sqrt(params.p - 1.0) * params.theta_p_root
    if t <= regime_threshold(c3 * eta, nu, n):
        # the bound is stated for nu >= 1/p, below the default schedule range
        eta_t = eta * (1.0 - t / n) ** nu
        return forget + scale * math.sqrt(C1) * math.sqrt(eta_t), "transient"
    return forget + scale * math.sqrt(C2) * n ** (-nu / (2.0 * (nu + 1))), "convergence"


def poly_bound_reference(t, alpha: float, c: float, init_gap: float, K: float = 1.0):
    """Display curve ``exp(-c t^(1-alpha)) init_gap + K t^(-alpha/2)``.

    Not a certified bound: ``K`` is an arbitrary display constant.
    """
    if not (0.5 < alpha < 1):
        raise InvalidArgumentError("alpha must lie in (1/2, 1)")
    t = np.asarray(t, dtype=float)
    out = np.exp(-c * t ** (1 - alpha)) * init_gap + K * t ** (-alpha / 2)
    return float(out) if out.ndim == 0 else out


def iteration_complexity(epsilon: float, gamma: float, nu: float, init_gap: float) -> dict:
    """Order-of-magnitude step count with all implied constants set to one."""
    if not epsilon > 0:
        raise InvalidArgumentError("epsilon must be positive")
    if not (0 < gamma < 1) or not nu > 0:
        raise InvalidArgumentError("need gamma in (0, 1) and nu > 0")
    term1 = (1 - gamma) ** -2 * math.log(init_gap / epsilon) if init_gap > 0 else 0.0
    term2 = (1 - gamma) ** -(4 + 2 / nu) * epsilon ** (-2 * (nu + 1) / nu)
    return {"term1": term1, "term2": term2, "total": term1 + term2, "diagnostic_only": True}


# ---------------------------------------------------------------------------
# lemma checks


def _lemma_rhs(c, eta, nu, p, n, C1, C2, t, eta_t) -> tuple[float, str]:
    if t <= regime_threshold(c * eta, nu, n):
        return C1 * eta_t ** (p - 1), "transient"
    return C2 * n ** (-nu * (p - 1) / (nu + 1)), "convergence"


def lemma_sum_scan(c: float, eta: float, nu: float, p: float, n: int) -> list[dict]:
    """Evaluate the weighted-sum lemma at every ``t = 1..n``.

    ``lhs(t) = sum_{s<=t} eta_s^p prod_{j=s+1}^t (1 - c eta_j)`` is built by
    the recursion ``lhs(t) = (1 - c eta_t) lhs(t-1) + eta_t^p``.  Every term
    is nonnegative, so the recursion loses at most ``O(t)`` ulps.
    """
    if not 0 < c * eta < 1:
        raise InvalidArgumentError("need 0 < c * eta < 1")
    if nu < 1 or p < 1:
        raise InvalidArgumentError("need nu >= 1 and p >= 1")
    C1, C2 = bound_constants(c, nu, p, eta)
    etas = Schedule("pd2z", eta, nu=nu, horizon=n).rates(n)
    rows = []
    lhs = 0.0
    for t in range(1, n + 1):
        e = float(etas[t - 1])
        lhs = (1.0 - c * e) * lhs + e**p
        rhs, regime = _lemma_rhs(c, eta, nu, p, n, C1, C2, t, e)
        rows.append({"t": t, "lhs": lhs, "rhs": rhs, "regime": regime, "holds": lhs <= rhs})
    return rows


def lemma_sum_check(c: float, eta: float, nu: float, p: float, n: int, t: int) -> tuple[float, float, bool]:
    """``(lhs, rhs, holds)`` at a single ``t``; the lhs is an exactly rounded sum."""
    if not 1 <= t <= n:
        raise InvalidArgumentError(f"t={t} outside [1, {n}]")
    if not 0 < c * eta < 1:
        raise InvalidArgumentError("need 0 < c * eta < 1")
    C1, C2 = bound_constants(c, nu, p, eta)
    etas = Schedule("pd2z", eta, nu=nu, horizon=n).rates(t)
    log_keep = np.log1p(-c * etas)
    # prod_{j=s+1}^t (1 - c eta_j) = exp(tail sums of log factors)
    tail = np.concatenate([np.cumsum(log_keep[::-1])[::-1][1:], [0.0]])
    lhs = math.fsum((etas**p * np.exp(tail)).tolist())
    rhs, _ = _lemma_rhs(c, eta, nu, p, n, C1, C2, t, float(etas[-1]))
    return lhs, rhs, lhs <= rhs


def lemma_integral_check(f, kappa: float, grid_max: float | None = None) -> tuple[float, float, bool]:
    """Compare ``sum_k f(k) e^{-kappa k}`` with ``kappa/(1-e^{-kappa}) int_0^inf f(u) e^{-kappa u} du``.

    ``f`` must be vectorized and nondecreasing; monotonicity is checked on
    a grid.  ``holds`` allows a relative slack of 1e-12 for rounding, which
    matters when ``f`` is constant and the two sides agree exactly.
    """
    if not kappa > 0:
        raise InvalidArgumentError("kappa must be positive")
    span = grid_max if grid_max is not None else 60.0 / kappa
    grid = np.linspace(0.0, span, 2001)
    vals = np.asarray(f(grid), dtype=float)
    if np.any(vals < 0) or np.any(np.diff(vals) < -1e-12 * np.maximum(1.0, np.abs(vals[1:]))):
        raise InvalidArgumentError("f must be nonnegative and nondecreasing")

    total, k0, block = 0.0, 0, 4096
    while True:
        k = np.arange(k0, k0 + block, dtype=float)
        part = math.fsum((np.asarray(f(k), dtype=float) * np.exp(-kappa * k)).tolist())
        total += part
        k0 += block
        if part <= 1e-18 * total or k0 > 10**8:
            break

    integral, _ = integrate.quad(lambda u: float(f(np.float64(u))) * math.exp(-kappa * u), 0, np.inf,
                                 epsabs=0.0, epsrel=1e-12, limit=500)
    bound = kappa / (-math.expm1(-kappa)) * integral
    return total, bound, total <= bound * (1 + 1e-12)


# ---------------------------------------------------------------------------
# margin condition


@dataclass(frozen=True)
class MarginReport:
    delta: float
    L: float
    trials: int
    violations: int
    max_ratio: float

    @property
    def holds(self) -> bool:
        return self.violations == 0


def _class_constant_noise(labels: np.ndarray, raw: np.ndarray) -> np.ndarray:
    """Copy each class representative's value to its equivalent actions."""
    out = raw.reshape(labels.shape).copy()
    rows = np.arange(labels.shape[0])[:, None]
    return out[rows, labels].ravel()


def margin_and_lipschitz(
    mdp: Mdp, q_star, *, trials: int = 1000, radius: float | None = None, seed: int = 0
) -> MarginReport:
    """Margin ``Delta``, ``L = 4 / Delta`` and a randomized check of

        |(H^{pi_Q} - H^{pi*})(Q - Q*)|_inf <= L |Q - Q*|_inf^2

    on ``trials`` tables with ``|Q - Q*|_inf = radius`` (default ``Delta``).
    Perturbations are equal across equivalent actions, so ties among them
    resolve the same way as in Q*.
    """
    q_star = as_qtable(q_star, mdp.dim)
    delta = optimal_margin(mdp, q_star)
    L = 4.0 / delta
    r = delta if radius is None else float(radius)
    if not math.isfinite(r) or r <= 0:
        raise InvalidArgumentError("radius must be positive and finite")
    labels = action_classes(mdp)
    H_star = policy_kernel(mdp, greedy_policy(q_star, mdp.n_actions))
    rng = stream(seed, Purpose.AUX)
    violations, worst = 0, 0.0
    for _ in range(trials):
        u = _class_constant_noise(labels, rng.uniform(-1.0, 1.0, mdp.dim))
        u *= r / np.abs(u).max()
        q = q_star + u
        diff = q - q_star
        H = policy_kernel(mdp, greedy_policy(q, mdp.n_actions))
        lhs = float(np.abs((H - H_star) @ diff).max())
        rhs = L * float(np.abs(diff).max()) ** 2
        worst = max(worst, lhs / rhs)
        if lhs > rhs:
            violations += 1
    return MarginReport(delta, L, trials, violations, worst)


def estimate_theta(mdp: Mdp, q_star, *, p: float = 2.0, m: int = 100_000, seed: int = 0,
                   sampling: str = "independent") -> float:
    """``Theta_p^(1/p)`` estimated as ``(mean |Z|_2^p)^(1/p)`` over ``m`` noise draws."""
    z = bellman_noise_samples(mdp, q_star, m, stream(seed, Purpose.NOISE), sampling)
    return float(np.mean(np.linalg.norm(z, axis=1) ** p) ** (1.0 / p))
