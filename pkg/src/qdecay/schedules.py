"""Learning-rate schedules and the tail-averaging window attached to them."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidArgumentError

__all__ = [
    "Schedule",
    "parse_schedule",
    "admissible_eta_bound",
    "tail_window",
    "snap_floor",
]

KINDS = ("const", "poly", "pd2z")


@dataclass(frozen=True)
class Schedule:
    """A learning-rate rule.

    * ``const``: ``eta``
    * ``poly``: ``eta * t**(-alpha)`` with ``alpha`` in (1/2, 1)
    * ``pd2z``: ``eta * (1 - t/n)**nu`` with ``nu >= 1`` and horizon ``n``

    ``nu`` in ``[1/p, 1)`` is accepted only with ``allow_small_nu``; the
    error-bound constants are not guaranteed there.
    """

    kind: str
    eta: float
    alpha: float | None = None
    nu: float | None = None
    horizon: int | None = None
    allow_small_nu: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgumentError(f"unknown schedule kind {self.kind!r}")
        if not (self.eta > 0 and math.isfinite(self.eta)):
            raise InvalidArgumentError("eta must be positive")
        if self.kind == "poly":
            if self.alpha is None or not (0.5 < self.alpha < 1.0):
                raise InvalidArgumentError("polynomial schedule needs alpha in (1/2, 1)")
        if self.kind == "pd2z":
            if self.nu is None or not math.isfinite(self.nu) or self.nu <= 0:
                raise InvalidArgumentError("pd2z schedule needs nu > 0")
            if self.nu < 1 and not self.allow_small_nu:
                raise InvalidArgumentError("pd2z needs nu >= 1 (pass allow_small_nu for nu in [1/p, 1))")
        if self.horizon is not None and self.horizon < 1:
            raise InvalidArgumentError("horizon must be a positive integer")

    def with_horizon(self, n: int) -> "Schedule":
        return replace(self, horizon=int(n))

    @property
    def label(self) -> str:
        if self.kind == "const":
            return f"const:{self.eta:g}"
        if self.kind == "poly":
            return f"poly:{self.eta:g},{self.alpha:g}"
        return f"pd2z:{self.eta:g},{self.nu:g}"

    def __str__(self) -> str:
        return self.label

    def _horizon(self) -> int:
        if self.horizon is None:
            raise InvalidArgumentError("pd2z schedule has no horizon; call with_horizon(n)")
        return self.horizon

    def rate(self, t: int) -> float:
        """Learning rate used at step ``t``."""
        if self.kind == "const":
            if t < 0:
                raise InvalidArgumentError("t must be nonnegative")
            return self.eta
        if self.kind == "poly":
            if t < 1:
                raise InvalidArgumentError("polynomial schedule is defined for t >= 1")
            return self.eta * t ** (-self.alpha)
        n = self._horizon()
        if not 0 <= t <= n:
            raise InvalidArgumentError(f"t={t} outside [0, {n}]")
        return self.eta * (1.0 - t / n) ** self.nu

    def rates(self, steps: int) -> np.ndarray:
        """Rates for ``t = 1..steps`` as an array (entry ``t-1`` is step ``t``)."""
        t = np.arange(1, steps + 1, dtype=float)
        if self.kind == "const":
            return np.full(steps, self.eta)
        if self.kind == "poly":
            return self.eta * t ** (-self.alpha)
        n = self._horizon()
        if steps > n:
            raise InvalidArgumentError(f"{steps} steps exceed the pd2z horizon {n}")
        return self.eta * (1.0 - t / n) ** self.nu


def parse_schedule(text: str, horizon: int | None = None) -> Schedule:
    """Parse ``const:0.05``, ``poly:0.05,0.65`` or ``pd2z:0.05,1``."""
    try:
        kind, _, args = text.strip().partition(":")
        values = [float(v) for v in args.split(",")] if args else []
    except ValueError as exc:
        raise InvalidArgumentError(f"cannot parse schedule {text!r}") from exc
    kind = kind.lower()
    expected = {"const": 1, "poly": 2, "pd2z": 2, "ld2z": 1}
    if kind not in expected or len(values) != expected[kind]:
        raise InvalidArgumentError(f"cannot parse schedule {text!r}")
    if kind == "const":
        return Schedule("const", values[0], horizon=horizon)
    if kind == "poly":
        return Schedule("poly", values[0], alpha=values[1], horizon=horizon)
    if kind == "ld2z":
        return Schedule("pd2z", values[0], nu=1.0, horizon=horizon)
    return Schedule("pd2z", values[0], nu=values[1], horizon=horizon)


def admissible_eta_bound(gamma: float, p: float = 2.0) -> float:
    """Strict upper bound ``2(1-g) / ((1-g)^2 + 2(p-1)g^2)`` on the base rate."""
    if not (0 < gamma < 1):
        raise InvalidArgumentError("gamma must lie in (0, 1)")
    if p < 2:
        raise InvalidArgumentError("p must be >= 2")
    return 2 * (1 - gamma) / ((1 - gamma) ** 2 + 2 * (p - 1) * gamma**2)


def snap_floor(x: float, tol: float = 1e-9) -> int:
    """``floor(x)``, except values within ``tol`` of an integer snap to it."""
    r = round(x)
    if abs(x - r) <= tol * max(1.0, abs(x)):
        return int(r)
    return math.floor(x)


def tail_window(n: int, nu: float, c: float = 1.0) -> tuple[int, int]:
    """``(window, k_n)`` with ``window = floor(c n^(nu/(nu+1)))`` and ``k_n = n - window + 1``."""
    if n < 1:
        raise InvalidArgumentError("n must be a positive integer")
    if not (c > 0 and nu > 0):
        raise InvalidArgumentError("c and nu must be positive")
    window = snap_floor(c * math.exp(nu / (nu + 1.0) * math.log(n)))
    if window < 1:
        raise InvalidArgumentError(f"tail window is empty for n={n}, nu={nu}, c={c}")
    window = min(window, n)
    return window, n - window + 1
