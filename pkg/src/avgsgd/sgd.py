"""Stochastic gradient recursion with online iterate averaging.

The recursion is ``theta_n = theta_{n-1} - gamma_n f_n'(theta_{n-1})`` with no
projection, and the averaged iterate ``avg_n`` is the mean of
``theta_0, ..., theta_{n-1}``.

Random streams
--------------
Every run owns a Philox (counter-based, 64-bit) generator seeded with
``SeedSequence(seed, spawn_key=stream)``.  Replicate ``r`` of a run uses
``stream + (r,)``, so replicates never share a stream and any one of them
can be regenerated on its own.  Observation indices are drawn in blocks of
``INDEX_BLOCK`` uniforms, independently of the horizon, so a stream's
sequence of observations does not depend on how long the run is.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .data import Dataset
from .errors import NonFiniteError, StreamExhaustedError
from .losses import LossModel

INDEX_BLOCK = 1024


class ScheduleKind(str, Enum):
    CONSTANT_HORIZON = "constant_horizon"
    DECAYING = "decaying"
    DOUBLING = "doubling"


@dataclass(frozen=True)
class StepSchedule:
    """Step-size rule ``gamma_n`` scaled by ``1 / (2 R^2)``.

    ``doubling_base`` selects the block constant of the doubling schedule:
    ``"upper"`` uses ``1/sqrt(2^(p+1))`` on ``n in (2^p, 2^(p+1)]`` and
    ``"lower"`` uses ``1/sqrt(2^p)``.
    """

    kind: ScheduleKind
    radius: float
    horizon: int | None = None
    doubling_base: str = "upper"

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.kind is ScheduleKind.CONSTANT_HORIZON and not (self.horizon and self.horizon >= 1):
            raise ValueError("constant_horizon schedule needs a positive horizon")
        if self.doubling_base not in ("upper", "lower"):
            raise ValueError("doubling_base must be 'upper' or 'lower'")

    @classmethod
    def constant(cls, radius, horizon):
        return cls(ScheduleKind.CONSTANT_HORIZON, radius, horizon)


def _doubling_scale(n, base):
    # n in (2^p, 2^(p+1)]  <=>  p = ceil(log2 n) - 1
    p = math.ceil(math.log2(n)) - 1 if n > 1 else -1
    return 2.0 ** (p + 1) if base == "upper" else 2.0 ** max(p, 0)


def step_size(schedule: StepSchedule, n: int) -> float:
    if n < 1:
        raise ValueError("step index n must be >= 1")
    scale = 1.0 / (2.0 * schedule.radius ** 2)
    if schedule.kind is ScheduleKind.CONSTANT_HORIZON:
        if n > schedule.horizon:
            raise ValueError(f"step {n} beyond the horizon {schedule.horizon} of a constant schedule")
        return scale / math.sqrt(schedule.horizon)
    if schedule.kind is ScheduleKind.DECAYING:
        return scale / math.sqrt(n)
    return scale / math.sqrt(_doubling_scale(n, schedule.doubling_base))


def step_sizes(schedule: StepSchedule, horizon: int) -> np.ndarray:
    """``gamma_1 .. gamma_horizon`` as an array."""
    if schedule.kind is ScheduleKind.CONSTANT_HORIZON:
        step_size(schedule, horizon)
        return np.full(horizon, step_size(schedule, 1))
    return np.array([step_size(schedule, n) for n in range(1, horizon + 1)])


def sgd_step(theta, grad, gamma):
    """One unprojected step ``theta - gamma * grad``."""
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if theta.shape != grad.shape:
        raise ValueError(f"theta shape {theta.shape} != grad shape {grad.shape}")
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(grad)) and math.isfinite(gamma)):
        raise NonFiniteError("sgd_step received non-finite input")
    return theta - gamma * grad


def _average_step(avg, theta_prev, n):
    return theta_prev / n + avg * ((n - 1) / n)


def update_average(avg, theta_prev, n: int):
    """Return ``avg_n = theta_{n-1}/n + (n-1)/n * avg_{n-1}``.

    At ``n = 1`` the previous average is ignored and ``theta_0`` is returned.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    theta_prev = np.asarray(theta_prev, dtype=float)
    if n == 1:
        return theta_prev.copy()
    return _average_step(np.asarray(avg, dtype=float), theta_prev, n)


# ----------------------------------------------------------------------
# data sources


def make_generator(seed: int, stream=()) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(s) for s in stream))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class SampledSource:
    """i.i.d. draws (with replacement) from ``dataset``'s sampling distribution."""

    dataset: Dataset

    def index_blocks(self, rng: np.random.Generator):
        cdf = np.cumsum(self.dataset.probabilities)
        cdf[-1] = 1.0
        last = len(cdf) - 1
        while True:
            u = rng.random(INDEX_BLOCK)
            yield np.minimum(np.searchsorted(cdf, u, side="right"), last)


@dataclass(frozen=True)
class SequentialSource:
    """Each row of ``dataset`` exactly once, in order; the stream is finite."""

    dataset: Dataset

    def index_blocks(self, rng=None):
        n = len(self.dataset)
        for start in range(0, n, INDEX_BLOCK):
            yield np.arange(start, min(start + INDEX_BLOCK, n))


# ----------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to reproduce one trajectory.

    ``certificate`` (an :class:`avgsgd.oracle.OptimumCertificate`) enables
    the per-step martingale trace when ``trace`` is true.
    """

    model: LossModel
    schedule: StepSchedule
    data_source: SampledSource | SequentialSource
    horizon: int
    seed: int = 0
    theta0: np.ndarray | None = None
    record_stride: int = 1
    stream: tuple = ()
    certificate: object = None
    trace: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.record_stride < 1:
            raise ValueError("record_stride must be >= 1")
        theta0 = np.zeros(self.model.dimension) if self.theta0 is None else np.array(self.theta0, float)
        if theta0.shape != (self.model.dimension,):
            raise ValueError(f"theta0 has shape {theta0.shape}, expected ({self.model.dimension},)")
        theta0.setflags(write=False)
        object.__setattr__(self, "theta0", theta0)
        object.__setattr__(self, "stream", tuple(self.stream))
        if self.trace and self.certificate is None:
            raise ValueError("martingale trace requires a certificate")

    @property
    def dataset(self) -> Dataset:
        return self.data_source.dataset

    def recorded_steps(self) -> np.ndarray:
        steps = list(range(self.record_stride, self.horizon + 1, self.record_stride))
        if not steps or steps[-1] != self.horizon:
            steps.append(self.horizon)
        return np.array(steps)

    def replicate(self, r: int) -> "RunConfig":
        return replace(self, stream=self.stream + (r,))


@dataclass(frozen=True)
class MartingaleTrace:
    """Per-step quantities for steps ``n = 1..N`` (index ``n - 1``).

    ``gap_prev`` is ``f(theta_{n-1}) - f*``, ``dist_prev_sq`` and
    ``dist_sq`` are ``||theta_{n-1} - theta*||^2`` and ``||theta_n - theta*||^2``,
    ``martingale`` is ``M_n`` and ``potential`` is ``A_n`` (``A_0 = dist0_sq``).
    """

    gamma: np.ndarray
    radius: float
    gap_prev: np.ndarray
    dist_prev_sq: np.ndarray
    dist_sq: np.ndarray
    martingale: np.ndarray
    potential: np.ndarray
    dist0_sq: float

    def descent_slack(self) -> np.ndarray:
        """RHS minus LHS of the per-step convexity inequality; nonnegative when it holds."""
        g = self.gamma
        return (self.dist_prev_sq - self.dist_sq + g ** 2 * self.radius ** 2
                + self.martingale - 2.0 * g * self.gap_prev)

    def almost_sure_bound(self, quadratic=True) -> np.ndarray:
        """``3 dist0^2 + 5 n^2 gamma^2 R^2`` (or the ``5 n`` variant) per step."""
        n = np.arange(1, len(self.gamma) + 1, dtype=float)
        factor = n ** 2 if quadratic else n
        return 3.0 * self.dist0_sq + 5.0 * factor * self.gamma ** 2 * self.radius ** 2

    def excursion_bound(self) -> np.ndarray:
        """``||theta_0 - theta*|| + sum_k gamma_k R`` per step."""
        return math.sqrt(self.dist0_sq) + np.cumsum(self.gamma) * self.radius


@dataclass(frozen=True)
class Trajectory:
    config: RunConfig
    steps: np.ndarray
    iterates: np.ndarray
    averages: np.ndarray
    final_theta: np.ndarray
    final_average: np.ndarray
    trace: MartingaleTrace | None = None

    def __post_init__(self):
        for name in ("steps", "iterates", "averages", "final_theta", "final_average"):
            getattr(self, name).setflags(write=False)

    def to_csv(self, path, certificate=None, components=True, header_lines=()):
        """Write one row per recorded step.

        Columns are ``step``, then iterate and average components (or their
        norms when ``components`` is false), then ``f_gap`` and ``grad_norm``
        of the average when a certificate is available.
        """
        cert = certificate if certificate is not None else self.config.certificate
        d = self.iterates.shape[1]
        if components:
            cols = [f"theta_{j}" for j in range(d)] + [f"avg_{j}" for j in range(d)]
        else:
            cols = ["theta_norm", "avg_norm"]
        if cert is not None:
            cols += ["f_gap", "grad_norm"]
            model, data = self.config.model, self.config.dataset
            gaps = model.risk_many(data, self.averages) - cert.f_star
            gnorms = np.linalg.norm(model.risk_gradient_many(data, self.averages), axis=1)
        lines = [f"# {h}" for h in header_lines]
        lines.append(",".join(["step"] + cols))
        for i, step in enumerate(self.steps):
            if components:
                vals = list(self.iterates[i]) + list(self.averages[i])
            else:
                vals = [np.linalg.norm(self.iterates[i]), np.linalg.norm(self.averages[i])]
            if cert is not None:
                vals += [gaps[i], gnorms[i]]
            lines.append(",".join([str(int(step))] + [repr(float(v)) for v in vals]))
        Path(path).write_text("\n".join(lines) + "\n")
        return path

    def to_dict(self) -> dict:
        cfg = self.config
        out = {
            "family": cfg.model.family.value,
            "radius": cfg.model.radius,
            "schedule": {"kind": cfg.schedule.kind.value, "horizon": cfg.schedule.horizon,
                         "doubling_base": cfg.schedule.doubling_base},
            "horizon": cfg.horizon,
            "seed": cfg.seed,
            "stream": list(cfg.stream),
            "record_stride": cfg.record_stride,
            "theta0": cfg.theta0.tolist(),
            "steps": self.steps.tolist(),
            "iterates": self.iterates.tolist(),
            "averages": self.averages.tolist(),
            "final_theta": self.final_theta.tolist(),
            "final_average": self.final_average.tolist(),
        }
        if self.trace is not None:
            t = self.trace
            out["trace"] = {
                "gamma": t.gamma.tolist(), "radius": t.radius, "dist0_sq": t.dist0_sq,
                "gap_prev": t.gap_prev.tolist(), "dist_prev_sq": t.dist_prev_sq.tolist(),
                "dist_sq": t.dist_sq.tolist(), "martingale": t.martingale.tolist(),
                "potential": t.potential.tolist(),
            }
        return out

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")
        return path


@dataclass
class BatchResult:
    """Raw output of a batch of replicates sharing one configuration."""

    steps: np.ndarray
    iterates: np.ndarray  # (m, k, d)
    averages: np.ndarray  # (m, k, d)
    final_theta: np.ndarray  # (m, d)
    final_average: np.ndarray  # (m, d)
    trace: dict | None = field(default=None)


def simulate(config: RunConfig, streams, record=True) -> BatchResult:
    """Run one trajectory per entry of ``streams`` in lockstep.

    Each stream key is appended to ``config.stream`` to seed its generator;
    the arithmetic for a replicate does not depend on how many others run
    alongside it.
    """
    model = config.model
    data = config.dataset
    X, y = data.X, data.y
    N = config.horizon
    m = len(streams)
    gammas = step_sizes(config.schedule, N)
    rngs = [make_generator(config.seed, config.stream + tuple(s)) for s in streams]
    blocks = [config.data_source.index_blocks(rng) for rng in rngs]

    theta = np.tile(config.theta0, (m, 1))
    avg = theta.copy()
    rec_steps = config.recorded_steps() if record else np.array([N])
    k = len(rec_steps)
    iterates = np.empty((m, k, model.dimension))
    averages = np.empty((m, k, model.dimension))
    rec_pos = 0

    tracing = config.trace
    if tracing:
        cert = config.certificate
        theta_star = np.asarray(cert.theta_star)
        R2 = model.radius ** 2
        gap_prev = np.empty((m, N))
        dist_prev = np.empty((m, N))
        dist_now = np.empty((m, N))
        mart = np.empty((m, N))
        pot = np.empty((m, N))
        A = np.full(m, float(np.sum((config.theta0 - theta_star) ** 2)))

    block = None
    for n in range(1, N + 1):
        col = (n - 1) % INDEX_BLOCK
        if col == 0:
            try:
                block = np.stack([next(b) for b in blocks])
            except StopIteration:
                raise StreamExhaustedError(
                    f"data stream exhausted at step {n} of {N}", step=n) from None
        if col >= block.shape[1]:
            raise StreamExhaustedError(f"data stream exhausted at step {n} of {N}", step=n)
        idx = block[:, col]
        avg = theta.copy() if n == 1 else _average_step(avg, theta, n)
        grad = model.batch_gradient(theta, X[idx], y[idx])
        gamma = gammas[n - 1]
        if tracing:
            diff = theta - theta_star
            full = model.risk_gradient_many(data, theta)
            gap_prev[:, n - 1] = model.risk_many(data, theta) - cert.f_star
            dist_prev[:, n - 1] = np.einsum("ij,ij->i", diff, diff)
            M = -2.0 * gamma * np.einsum("ij,ij->i", diff, grad - full)
            A = A + gamma ** 2 * R2 + M
            mart[:, n - 1] = M
            pot[:, n - 1] = A
        theta = theta - gamma * grad
        if tracing:
            diff = theta - theta_star
            dist_now[:, n - 1] = np.einsum("ij,ij->i", diff, diff)
        if n == rec_steps[rec_pos]:
            iterates[:, rec_pos] = theta
            averages[:, rec_pos] = avg
            rec_pos += 1

    trace = None
    if tracing:
        trace = {"gamma": gammas, "gap_prev": gap_prev, "dist_prev_sq": dist_prev,
                 "dist_sq": dist_now, "martingale": mart, "potential": pot,
                 "dist0_sq": float(np.sum((config.theta0 - theta_star) ** 2))}
    return BatchResult(rec_steps, iterates, averages, theta, avg, trace)


def _trajectory(config: RunConfig, res: BatchResult, i: int) -> Trajectory:
    trace = None
    if res.trace is not None:
        t = res.trace
        trace = MartingaleTrace(
            gamma=t["gamma"], radius=config.model.radius, gap_prev=t["gap_prev"][i],
            dist_prev_sq=t["dist_prev_sq"][i], dist_sq=t["dist_sq"][i],
            martingale=t["martingale"][i], potential=t["potential"][i], dist0_sq=t["dist0_sq"])
    return Trajectory(config=config, steps=res.steps.copy(), iterates=res.iterates[i].copy(),
                      averages=res.averages[i].copy(), final_theta=res.final_theta[i].copy(),
                      final_average=res.final_average[i].copy(), trace=trace)


def run(config: RunConfig) -> Trajectory:
    """Run the averaged recursion described by ``config``."""
    return _trajectory(config, simulate(config, [()]), 0)


def run_many(config: RunConfig, m: int):
    """Trajectories for replicates ``0..m-1`` of ``config``."""
    res = simulate(config, [(r,) for r in range(m)])
    return [_trajectory(config.replicate(r), res, r) for r in range(m)]
