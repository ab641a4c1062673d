"""Closed-form guarantees for averaged SGD on self-concordant losses.

Every evaluator is a pure function of an explicit :class:`BoundContext`.
Notation: ``gamma`` step size, ``n`` number of steps, ``R`` radius,
``dist0_sq = ||theta_0 - theta*||^2``, ``mu`` the lowest eigenvalue of the
Hessian at the optimum and ``p`` a moment order.

The ``corollary*`` functions evaluate the same guarantees already
specialized to ``gamma = 1 / (2 R^2 sqrt(N))`` and ``n = N``; they are
written out separately so they can cross-check the general evaluators.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ValidityRangeError

TRANSFER_LIMIT = 0.75
ADAPTIVE_VALIDITY = 500.0


@dataclass(frozen=True)
class BoundContext:
    gamma: float
    n: int
    R: float
    dist0_sq: float
    mu: float = 0.0
    p: int = 1

    def __post_init__(self):
        for name in ("gamma", "R", "dist0_sq", "mu"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if not (self.gamma > 0 and self.R > 0):
            raise ValueError("gamma and R must be positive")
        if self.n < 1 or self.p < 1:
            raise ValueError("n and p must be positive integers")
        if self.dist0_sq < 0 or self.mu < 0:
            raise ValueError("dist0_sq and mu must be nonnegative")

    @classmethod
    def for_horizon(cls, N, R, dist0_sq, mu=0.0, p=1):
        """Context for the constant step ``1 / (2 R^2 sqrt(N))`` run for ``N`` steps."""
        return cls(gamma=1.0 / (2.0 * R * R * math.sqrt(N)), n=N, R=R,
                   dist0_sq=dist0_sq, mu=mu, p=p)

    @property
    def dist0(self) -> float:
        return math.sqrt(self.dist0_sq)

    @property
    def square_const(self) -> float:
        return 2.0 * self.gamma * self.R ** 2 * math.sqrt(self.n)

    @property
    def triangle_const(self) -> float:
        rn = math.sqrt(self.n)
        return 3.0 * self.dist0_sq / (self.gamma * rn) + 3.0 * self.dist0 / (self.gamma * self.R * rn)


@dataclass(frozen=True)
class BoundReport:
    """One comparison of an empirical estimate against an analytic bound.

    ``margin`` is ``analytic_value - empirical_value`` (negative when
    violated).  ``ci_upper``, when given, is the value tested against the
    bound instead of the point estimate.
    """

    bound_name: str
    analytic_value: float
    empirical_value: float
    horizon: int = 0
    param: float | None = None
    ci_upper: float | None = None
    note: str = ""

    @property
    def tested_value(self) -> float:
        return self.empirical_value if self.ci_upper is None else self.ci_upper

    @property
    def violated(self) -> bool:
        return self.tested_value > self.analytic_value

    @property
    def margin(self) -> float:
        return self.analytic_value - self.tested_value

    def to_row(self) -> dict:
        return {"bound_name": self.bound_name, "horizon": self.horizon, "param": self.param,
                "analytic_value": self.analytic_value, "empirical_value": self.empirical_value,
                "ci_upper": self.ci_upper, "violated": self.violated, "margin": self.margin,
                "note": self.note}


# ----------------------------------------------------------------------
# expectation bounds


def prop1_bound(ctx: BoundContext) -> float:
    """Bound on ``E f(avg_n) - f*`` with constant step size."""
    return ctx.dist0_sq / (2.0 * ctx.gamma * ctx.n) + ctx.gamma * ctx.R ** 2 / 2.0


def prop2_moment_bound(ctx: BoundContext) -> float:
    """Bound on ``E(2 gamma n [f(avg_n) - f*] + ||theta_n - theta*||^2)^p``."""
    return (3.0 * ctx.dist0_sq + 20.0 * ctx.n * ctx.p * ctx.gamma ** 2 * ctx.R ** 2) ** ctx.p


def appendixF_bound(ctx: BoundContext, p: int | None = None) -> float:
    """Sharper constants for the same moment as :func:`prop2_moment_bound`, ``p`` in {1, 2, 3}."""
    p = ctx.p if p is None else p
    a, nb = ctx.dist0_sq, ctx.n * ctx.gamma ** 2 * ctx.R ** 2
    if p == 1:
        return a + nb
    if p == 2:
        return (a + 9.0 * nb) ** 2
    if p == 3:
        return (a + 20.0 * nb) ** 3
    raise ValidityRangeError(f"sharper moment constants exist only for p in {{1,2,3}} (got {p}); "
                             "use prop2_moment_bound")


def prop4_gradient_moment_bound(ctx: BoundContext) -> float:
    """Bound on ``(E ||f'(avg_n)||^(2p))^(1/(2p))``."""
    g, n, R, p = ctx.gamma, ctx.n, ctx.R, ctx.p
    rn = math.sqrt(n)
    inner = (8.0 * math.sqrt(p) + 4.0 * p / rn + 40.0 * R * R * g * p * rn
             + 3.0 * ctx.dist0_sq / (g * rn) + 3.0 * ctx.dist0 / (g * R * rn))
    return R / rn * inner


def prop5_selfconcordance_transfer(grad_norm: float, mu: float, R: float):
    """``(||theta - theta*||^2, f(theta) - f*)`` bounds from a gradient norm.

    Returns ``None`` when ``grad_norm * R / mu`` exceeds 3/4.
    """
    if not mu > 0:
        raise ValueError("mu must be positive")
    if grad_norm * R / mu > TRANSFER_LIMIT:
        return None
    return 4.0 * grad_norm ** 2 / mu ** 2, 2.0 * grad_norm ** 2 / mu


def prop5_unconditional(grad_norm: float, mu: float, R: float, dist: float) -> float:
    """``f(theta) - f* <= (1 + R ||theta - theta*||) ||f'(theta)||^2 / mu`` for any theta."""
    if not mu > 0:
        raise ValueError("mu must be positive")
    return (1.0 + R * dist) * grad_norm ** 2 / mu


def prop6_valid(ctx: BoundContext) -> bool:
    """Whether ``mu sqrt(N) / R >= 500``."""
    return ctx.mu * math.sqrt(ctx.n) / ctx.R >= ADAPTIVE_VALIDITY


def prop6_adaptive_bounds(ctx: BoundContext):
    """Bounds on ``E f(avg_N) - f*`` and ``E ||avg_N - theta*||^2`` that scale as ``1/(mu N)``."""
    if not ctx.mu > 0:
        raise ValueError("mu must be positive")
    N, R, a = ctx.n, ctx.R, ctx.R * ctx.dist0
    return (R * R / (N * ctx.mu) * (5.0 * a + 15.0) ** 4,
            R * R / (N * ctx.mu ** 2) * (6.0 * a + 21.0) ** 4)


# ----------------------------------------------------------------------
# tail bounds


def prop3_tail_threshold(ctx: BoundContext, t: float):
    """Thresholds ``(gap, dist_sq)`` each exceeded with probability at most ``2 e^-t``."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    g, n, R2 = ctx.gamma, ctx.n, ctx.R ** 2
    return (30.0 * g * R2 * t + 3.0 * ctx.dist0_sq / (g * n),
            60.0 * n * g * g * R2 * t + 6.0 * ctx.dist0_sq)


def tail_probability(t: float) -> float:
    return 2.0 * math.exp(-t)


def lemma1_tail_from_moments(A: float, B: float, t: float, n: int):
    """Threshold and probability for ``X >= 0`` with ``E X^p <= (A + B p)^p``, ``p <= n``."""
    if t < 0 or t > n / 2.0:
        raise ValidityRangeError(f"t = {t} outside the validity range [0, n/2] with n = {n}")
    return 3.0 * B * t + 2.0 * A, 2.0 * math.exp(-t)


def lemma2_tail_from_moments(A: float, B: float, C: float, t: float, n: int):
    """Threshold and probability for ``E X^p <= (A sqrt(p) + B p + C)^(2p)``, ``p <= n``."""
    if t < 0 or t > n:
        raise ValidityRangeError(f"t = {t} outside the validity range [0, n] with n = {n}")
    return (2.0 * A * math.sqrt(t) + 2.0 * B * t + 2.0 * C) ** 2, 4.0 * math.exp(-t)


def gradient_tail_threshold(ctx: BoundContext, t: float):
    """Threshold for ``||f'(avg_n)||`` exceeded with probability at most ``4 e^-t``.

    Derived for ``t <= n/4``; beyond that the trivial bound ``||f'|| <= R``
    makes the pair hold as well, and ``R`` is returned when smaller.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    rn = math.sqrt(ctx.n)
    thr = 2.0 * ctx.R / rn * (10.0 * math.sqrt(t) + 40.0 * ctx.R ** 2 * ctx.gamma * t * rn
                              + ctx.triangle_const)
    if t > ctx.n / 4.0:
        thr = min(thr, ctx.R)
    return thr, 4.0 * math.exp(-t)


def almost_sure_potential_bound(ctx: BoundContext, quadratic=True) -> float:
    """Deterministic bound on the potential ``A_n``: ``3 dist0^2 + 5 n^2 gamma^2 R^2``.

    ``quadratic=False`` gives the variant with ``n`` instead of ``n^2``.
    """
    factor = ctx.n ** 2 if quadratic else ctx.n
    return 3.0 * ctx.dist0_sq + 5.0 * factor * ctx.gamma ** 2 * ctx.R ** 2


# ----------------------------------------------------------------------
# specialized forms for gamma = 1 / (2 R^2 sqrt(N))


def corollary2(N, R, dist0_sq) -> float:
    return R * R * dist0_sq / math.sqrt(N) + 1.0 / (4.0 * math.sqrt(N))


def corollary3(N, R, dist0_sq, p):
    """Moment bounds for the gap and for ``||theta_N - theta*||^2``."""
    return ((3.0 * R * R * dist0_sq + 5.0 * p) / math.sqrt(N)) ** p, (3.0 * dist0_sq + 5.0 * p / (R * R)) ** p


def corollary4(N, R, dist0_sq, t):
    return (15.0 * t / math.sqrt(N) + 6.0 * R * R * dist0_sq / math.sqrt(N),
            15.0 * t / (R * R) + 6.0 * dist0_sq)


def corollary6(N, R, dist0_sq, p=1) -> float:
    d0 = math.sqrt(dist0_sq)
    return R / math.sqrt(N) * (8.0 * math.sqrt(p) + 4.0 * p / math.sqrt(N) + 20.0 * p
                               + 6.0 * R * R * dist0_sq + 6.0 * R * d0)
