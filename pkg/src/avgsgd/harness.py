"""Synthetic data, Monte-Carlo replication and comparison against the bounds."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.special import expit
from scipy.stats import binomtest, linregress

from . import bounds as B
from .data import Dataset
from .errors import ConfigError, RateFitError
from .oracle import OptimumCertificate
from .sgd import RunConfig, ScheduleKind, make_generator, simulate, step_size

REPLICATE_BLOCK = 256
BOOTSTRAP_RESAMPLES = 1000


class DataKind(str, Enum):
    WELL_SPECIFIED_LOGISTIC = "WellSpecifiedLogistic"
    MISSPECIFIED_LOGISTIC = "MisspecifiedLogistic"
    ROBUST_REGRESSION = "RobustRegression"
    TWO_POINT_TOY = "TwoPointToy"


@dataclass(frozen=True)
class DataGenSpec:
    """Recipe for a synthetic dataset.

    Features have covariance eigenvalues proportional to
    ``correlation_decay**k`` in a random orthonormal basis.  With
    ``feature_law="signs"`` each feature is ``R Q (s * w)`` for Rademacher
    ``w``, so every norm equals ``R``; ``"gaussian"`` draws Gaussian
    features and rejects those outside the ball.

    ``label_mode="conditional"`` replaces sampled binary labels by both
    labels with their conditional probabilities as sampling weights, which
    makes ``theta_true`` the exact risk minimizer in the well-specified case.
    When ``theta_true`` is omitted it is ``Q (theta_scale * random signs)``.
    """

    kind: DataKind
    dimension: int = 1
    radius: float = 1.0
    dataset_size: int = 2
    seed: int = 0
    correlation_decay: float = 1.0
    theta_true: tuple | None = None
    theta_scale: float = 1.0
    label_mode: str = "sampled"
    feature_law: str = "signs"
    gaussian_scale: float = 0.5
    noise_scale: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "kind", DataKind(self.kind))
        if self.theta_true is not None:
            object.__setattr__(self, "theta_true", tuple(float(v) for v in self.theta_true))
            if len(self.theta_true) != self.dimension:
                raise ConfigError("theta_true length must equal dimension", field="theta_true")
        if self.dimension < 1 or self.dataset_size < 1:
            raise ConfigError("dimension and dataset_size must be positive", field="dimension")
        if not self.radius > 0:
            raise ConfigError("radius must be positive", field="radius")
        if not self.correlation_decay > 0:
            raise ConfigError("correlation_decay must be positive", field="correlation_decay")
        if self.label_mode not in ("sampled", "conditional"):
            raise ConfigError("label_mode must be 'sampled' or 'conditional'", field="label_mode")
        if self.feature_law not in ("signs", "gaussian"):
            raise ConfigError("feature_law must be 'signs' or 'gaussian'", field="feature_law")
        if self.label_mode == "conditional" and self.kind is DataKind.ROBUST_REGRESSION:
            raise ConfigError("regression data has no conditional label mode", field="label_mode")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind"] = self.kind.value
        d["theta_true"] = None if self.theta_true is None else list(self.theta_true)
        return d


def _clip_to_ball(X, R):
    norms = np.linalg.norm(X, axis=1)
    over = norms > R
    while np.any(over):
        X[over] *= np.nextafter(R / norms[over], 0.0)[:, None]
        norms = np.linalg.norm(X, axis=1)
        over = norms > R
    return X


def _features(spec: DataGenSpec, rng, n):
    d, R = spec.dimension, spec.radius
    lam = spec.correlation_decay ** np.arange(d, dtype=float)
    s = np.sqrt(lam / lam.sum())
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    if spec.feature_law == "signs":
        W = rng.choice([-1.0, 1.0], size=(n, d))
        X = R * (W * s) @ Q.T
    else:
        rows, drawn = [], 0
        while sum(len(r) for r in rows) < n:
            batch = max(n, 1024)
            Z = R * math.sqrt(spec.gaussian_scale) * (rng.standard_normal((batch, d)) * s) @ Q.T
            drawn += batch
            keep = Z[np.linalg.norm(Z, axis=1) <= R]
            rows.append(keep)
            accepted = sum(len(r) for r in rows)
            if drawn >= 100 * n and accepted < 0.01 * drawn:
                raise ConfigError(f"rejection sampling accepted {accepted} of {drawn} draws; "
                                  "the feature law is infeasible for this radius",
                                  field="gaussian_scale")
        X = np.vstack(rows)[:n]
    return _clip_to_ball(X, R), Q


def generate_dataset(spec: DataGenSpec) -> Dataset:
    """Deterministic dataset for ``spec``; every feature norm is at most ``radius``."""
    meta = {"generator": spec.to_dict()}
    if spec.kind is DataKind.TWO_POINT_TOY:
        x = np.zeros(spec.dimension)
        x[0] = spec.radius
        meta["theta_true"] = [0.0] * spec.dimension
        return Dataset(np.vstack([x, x]), [1.0, -1.0], radius=spec.radius, meta=meta)

    rng = make_generator(spec.seed, (0,))
    X, Q = _features(spec, rng, spec.dataset_size)
    if spec.theta_true is not None:
        theta = np.array(spec.theta_true)
    else:
        theta = Q @ (spec.theta_scale * rng.choice([-1.0, 1.0], size=spec.dimension))
    meta["theta_true"] = theta.tolist()
    u = X @ theta

    if spec.kind is DataKind.ROBUST_REGRESSION:
        y = u + rng.laplace(scale=spec.noise_scale, size=len(u))
        return Dataset(X, y, radius=spec.radius, meta=meta)

    if spec.kind is DataKind.WELL_SPECIFIED_LOGISTIC:
        prob = expit(u)
    else:
        # log-odds cubic in the margin: the logistic model is misspecified
        prob = expit(u ** 3)
    if spec.label_mode == "conditional":
        n = len(u)
        return Dataset(np.vstack([X, X]), np.r_[np.ones(n), -np.ones(n)], radius=spec.radius,
                       weights=np.r_[prob, 1.0 - prob], meta=meta)
    y = np.where(rng.random(len(u)) < prob, 1.0, -1.0)
    return Dataset(X, y, radius=spec.radius, meta=meta)


# ----------------------------------------------------------------------
# replicates


class Statistic(str, Enum):
    GAP = "gap"  # f(avg_N) - f*
    DIST_LAST = "dist_last"  # ||theta_N - theta*||^2
    DIST_AVG = "dist_avg"  # ||avg_N - theta*||^2
    GRAD_SQ = "grad_sq"  # ||f'(avg_N)||^2
    POTENTIAL = "potential"  # 2 gamma N gap + ||theta_N - theta*||^2


@dataclass(frozen=True)
class ReplicateSet:
    """Terminal statistics of ``m`` independent runs against one certificate.

    Gaps are clipped at zero: they can only be negative by rounding, since
    ``f*`` is certified to ``grad_norm_at_star``.
    """

    horizon: int
    gamma: float
    streams: tuple
    certificate: OptimumCertificate
    values: dict = field(repr=False)

    @property
    def num_replicates(self) -> int:
        return len(self.streams)

    def __getitem__(self, stat) -> np.ndarray:
        return self.values[Statistic(stat)]

    def to_csv(self, path, header_lines=()):
        stats = list(Statistic)
        lines = [f"# {h}" for h in header_lines]
        lines.append(",".join(["replicate"] + [s.value for s in stats]))
        for i in range(self.num_replicates):
            lines.append(",".join([str(i)] + [repr(float(self.values[s][i])) for s in stats]))
        Path(path).write_text("\n".join(lines) + "\n")
        return path


def _statistics(config: RunConfig, cert, final_theta, final_avg, gamma):
    model, data = config.model, config.dataset
    ts = np.asarray(cert.theta_star)
    gap = np.maximum(model.risk_many(data, final_avg) - cert.f_star, 0.0)
    dl = np.sum((final_theta - ts) ** 2, axis=1)
    da = np.sum((final_avg - ts) ** 2, axis=1)
    gs = np.sum(model.risk_gradient_many(data, final_avg) ** 2, axis=1)
    N = config.horizon
    return {Statistic.GAP: gap, Statistic.DIST_LAST: dl, Statistic.DIST_AVG: da,
            Statistic.GRAD_SQ: gs, Statistic.POTENTIAL: 2.0 * gamma * N * gap + dl}


def run_replicates(config: RunConfig, m: int, cert: OptimumCertificate, threads=1,
                   block=REPLICATE_BLOCK) -> ReplicateSet:
    """Run replicates ``0..m-1`` of ``config`` and summarize them against ``cert``.

    Replicates are simulated in fixed blocks of ``block`` so the result does
    not depend on ``threads``.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if len(np.asarray(cert.theta_star)) != config.model.dimension:
        raise ConfigError("certificate does not match the model dimension", field="certificate")
    cfg = replace(config, trace=False)
    chunks = [list(range(s, min(s + block, m))) for s in range(0, m, block)]

    def work(chunk):
        return simulate(cfg, [(r,) for r in chunk], record=False)

    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]
    final_theta = np.vstack([r.final_theta for r in results])
    final_avg = np.vstack([r.final_average for r in results])
    gamma = _constant_gamma(config)
    values = _statistics(config, cert, final_theta, final_avg, gamma)
    for v in values.values():
        v.setflags(write=False)
    streams = tuple(config.stream + (r,) for r in range(m))
    return ReplicateSet(config.horizon, gamma, streams, cert, values)


def _constant_gamma(config: RunConfig) -> float:
    return step_size(config.schedule, 1) if config.schedule.kind is ScheduleKind.CONSTANT_HORIZON \
        else float("nan")


# ----------------------------------------------------------------------
# estimators


@dataclass(frozen=True)
class MomentEstimate:
    value: float
    ci_low: float
    ci_high: float

    @property
    def half_width(self) -> float:
        return 0.5 * (self.ci_high - self.ci_low)


@dataclass(frozen=True)
class TailEstimate:
    value: float
    count: int
    trials: int
    ci_low: float
    ci_high: float


def _as_samples(source, statistic):
    if isinstance(source, ReplicateSet):
        return np.asarray(source[statistic], dtype=float)
    return np.asarray(source, dtype=float)


def empirical_moment(source, statistic=Statistic.GAP, p=1, resamples=BOOTSTRAP_RESAMPLES,
                     seed=0, level=0.95) -> MomentEstimate:
    """Mean of ``statistic**p`` with a percentile bootstrap interval.

    ``source`` is a :class:`ReplicateSet` or a plain array of samples.
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    x = _as_samples(source, statistic) ** p
    value = float(x.mean())
    if len(x) < 2 or np.all(x == x[0]):
        return MomentEstimate(value, value, value)
    rng = np.random.default_rng(seed)
    means = np.empty(resamples)
    for i in range(resamples):
        means[i] = x[rng.integers(0, len(x), len(x))].mean()
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2])
    return MomentEstimate(value, float(lo), float(hi))


def empirical_tail(source, statistic=Statistic.GAP, threshold=0.0, level=0.95) -> TailEstimate:
    """Fraction of samples ``>= threshold`` with a Clopper-Pearson interval."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    x = _as_samples(source, statistic)
    k = int(np.count_nonzero(x >= threshold))
    ci = binomtest(k, len(x)).proportion_ci(confidence_level=level, method="exact")
    return TailEstimate(k / len(x), k, len(x), float(ci.low), float(ci.high))


@dataclass(frozen=True)
class RateFit:
    horizons: tuple
    estimates: tuple
    slope: float
    intercept: float
    slope_stderr: float

    def to_dict(self):
        return asdict(self)


def fit_rate(horizons, estimator) -> RateFit:
    """Least-squares slope of ``log estimate`` against ``log N``.

    ``estimator`` is either a callable ``N -> estimate`` or a sequence of
    estimates aligned with ``horizons``.
    """
    horizons = [int(h) for h in horizons]
    if len(horizons) < 4:
        raise RateFitError("need at least 4 horizons")
    if any(b <= a for a, b in zip(horizons, horizons[1:])):
        raise RateFitError("horizons must be strictly increasing")
    if horizons[0] < 1 or horizons[-1] / horizons[0] < 100:
        raise RateFitError("horizons must span at least two decades")
    est = [float(estimator(N)) for N in horizons] if callable(estimator) else [float(e) for e in estimator]
    if len(est) != len(horizons):
        raise RateFitError("one estimate per horizon is required")
    if any(not (e > 0) or not math.isfinite(e) for e in est):
        raise RateFitError("estimates must be positive and finite to take logarithms")
    res = linregress(np.log(horizons), np.log(est))
    return RateFit(tuple(horizons), tuple(est), float(res.slope), float(res.intercept),
                   float(res.stderr))


# ----------------------------------------------------------------------
# bound sweeps


DEFAULT_BOUNDS = ("prop1", "prop2", "appendixF", "prop3", "prop4", "prop6")


def _ctx(rs: ReplicateSet, config: RunConfig, p=1):
    cert = rs.certificate
    dist0_sq = float(np.sum((config.theta0 - np.asarray(cert.theta_star)) ** 2))
    return B.BoundContext(gamma=rs.gamma, n=rs.horizon, R=config.model.radius,
                          dist0_sq=dist0_sq, mu=cert.mu, p=p)


def reports_for(rs: ReplicateSet, config: RunConfig, bounds=DEFAULT_BOUNDS,
                p_grid=(1, 2, 3), t_grid=(0.5, 1.0, 2.0, 3.0)) -> list:
    """Compare one :class:`ReplicateSet` against the selected bounds."""
    N = rs.horizon
    ctx = _ctx(rs, config)
    out = []
    if "prop1" in bounds:
        e = empirical_moment(rs, Statistic.GAP, 1)
        out.append(B.BoundReport("prop1", B.prop1_bound(ctx), e.value, N, None, e.ci_high))
    for p in p_grid:
        cp = replace(ctx, p=p)
        e = None
        if "prop2" in bounds or "appendixF" in bounds:
            e = empirical_moment(rs, Statistic.POTENTIAL, p)
        if "prop2" in bounds:
            out.append(B.BoundReport("prop2", B.prop2_moment_bound(cp), e.value, N, p, e.ci_high))
        if "appendixF" in bounds and p in (1, 2, 3):
            out.append(B.BoundReport("appendixF", B.appendixF_bound(cp, p), e.value, N, p, e.ci_high))
    if "prop3" in bounds:
        for t in t_grid:
            thr_gap, thr_dist = B.prop3_tail_threshold(ctx, t)
            prob = B.tail_probability(t)
            tg = empirical_tail(rs, Statistic.GAP, thr_gap)
            td = empirical_tail(rs, Statistic.DIST_LAST, thr_dist)
            out.append(B.BoundReport("prop3_gap", prob, tg.value, N, t, tg.ci_high,
                                     note=f"threshold={thr_gap!r}"))
            out.append(B.BoundReport("prop3_dist", prob, td.value, N, t, td.ci_high,
                                     note=f"threshold={thr_dist!r}"))
    if "prop4" in bounds:
        e = empirical_moment(rs, Statistic.GRAD_SQ, 1)
        out.append(B.BoundReport("prop4", B.prop4_gradient_moment_bound(ctx), math.sqrt(e.value),
                                 N, 1, math.sqrt(e.ci_high)))
    if "prop6" in bounds:
        if ctx.mu > 0 and B.prop6_valid(ctx):
            b_gap, b_dist = B.prop6_adaptive_bounds(ctx)
            eg = empirical_moment(rs, Statistic.GAP, 1)
            ed = empirical_moment(rs, Statistic.DIST_AVG, 1)
            out.append(B.BoundReport("prop6_gap", b_gap, eg.value, N, None, eg.ci_high))
            out.append(B.BoundReport("prop6_dist", b_dist, ed.value, N, None, ed.ci_high))
        else:
            e = empirical_moment(rs, Statistic.GAP, 1)
            out.append(B.BoundReport("prop6_fallback_prop1", B.prop1_bound(ctx), e.value, N, None,
                                     e.ci_high, note="mu*sqrt(N)/R < 500; constant-step bound used"))
    return out


def bound_sweep(make_config, horizons, cert: OptimumCertificate, m: int,
                bounds=DEFAULT_BOUNDS, threads=1, p_grid=(1, 2, 3),
                t_grid=(0.5, 1.0, 2.0, 3.0)) -> list:
    """One :class:`ReplicateSet` per horizon, compared against every selected bound.

    ``make_config(N)`` returns the :class:`RunConfig` for horizon ``N``;
    it must use the constant step schedule the bounds are stated for.
    """
    reports = []
    for N in horizons:
        config = make_config(N)
        if config.schedule.kind is not ScheduleKind.CONSTANT_HORIZON:
            raise ConfigError("bound sweeps need the constant_horizon schedule", field="schedule")
        rs = run_replicates(config, m, cert, threads=threads)
        reports += reports_for(rs, config, bounds, p_grid, t_grid)
    return reports


REPORT_FIELDS = ("bound_name", "horizon", "param", "analytic_value", "empirical_value",
                 "ci_upper", "violated", "margin", "note")


def write_reports_csv(reports, path, header_lines=()):
    path = Path(path)
    with path.open("w", newline="") as fh:
        for h in header_lines:
            fh.write(f"# {h}\n")
        w = csv.DictWriter(fh, fieldnames=REPORT_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            row = r.to_row()
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path


def write_reports_json(reports, path, extra=None):
    payload = dict(extra or {})
    payload["reports"] = [r.to_row() for r in reports]
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return path
