"""Generalized-linear loss families and their derivatives.

Every family except the multinomial one depends on the parameter only
through the margin ``u = <x, theta>``; those share one code path built on
scalar link derivatives.  The multinomial family uses the block one-hot
feature map ``Phi(x, y) = e_y (x) x`` so ``theta`` stacks one weight vector
per class.

The ``radius`` of a :class:`LossModel` plays two roles at once: it bounds
every per-sample gradient and it is the generalized self-concordance
constant.  For a feature bound ``B`` the smallest radius that certifies
both is ``RADIUS_FACTOR[family] * B``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit, logsumexp, softmax

from .data import Dataset, Observation
from .errors import (DegenerateSegmentError, DimensionError, InvalidObservationError,
                     NonFiniteError)


class LossFamily(str, Enum):
    LOGISTIC = "logistic"
    SQRT_BINARY = "sqrt_binary"
    LOG_COSH = "log_cosh"
    MULTINOMIAL = "multinomial"
    # Negative control for the self-concordance check; gradients are unbounded.
    QUADRATIC = "quadratic"


BINARY_FAMILIES = (LossFamily.LOGISTIC, LossFamily.SQRT_BINARY)

# logistic: |phi'''| <= phi'', |phi'| <= 1.
# sqrt_binary: |phi'''| <= 1.5 phi'', |phi'| < 2.
# log_cosh: |phi'''| <= 2 phi'', |phi'| < 1.
# multinomial (block one-hot): scores spread <= sqrt(2) ||x|| ||v||, ||e_y - p|| <= sqrt(2).
RADIUS_FACTOR = {
    LossFamily.LOGISTIC: 1.0,
    LossFamily.SQRT_BINARY: 2.0,
    LossFamily.LOG_COSH: 2.0,
    LossFamily.MULTINOMIAL: math.sqrt(2.0),
    LossFamily.QUADRATIC: 1.0,
}


@dataclass(frozen=True)
class SegmentCheckResult:
    max_ratio: float
    num_probes: int
    guard_floor: float
    ratios: tuple = ()


@dataclass(frozen=True)
class LossModel:
    """A loss family on ``dimension`` parameters with constant ``radius``.

    For the multinomial family ``dimension = n_classes * feature_dim``.
    """

    family: LossFamily
    radius: float
    dimension: int
    n_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "family", LossFamily(self.family))
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if self.dimension < 1:
            raise ValueError("dimension must be a positive integer")
        if self.family is LossFamily.MULTINOMIAL:
            if self.n_classes < 2 or self.dimension % self.n_classes:
                raise DimensionError("multinomial dimension must be n_classes * feature_dim")

    @classmethod
    def for_features(cls, family, feature_radius, feature_dim, n_classes=2):
        """Model whose radius certifies (A2) and (A4) for features bounded by ``feature_radius``."""
        family = LossFamily(family)
        dim = feature_dim * n_classes if family is LossFamily.MULTINOMIAL else feature_dim
        return cls(family, RADIUS_FACTOR[family] * float(feature_radius), dim, n_classes)

    @classmethod
    def for_dataset(cls, family, dataset: Dataset, n_classes=2):
        return cls.for_features(family, dataset.radius, dataset.feature_dim, n_classes)

    @property
    def feature_dim(self) -> int:
        if self.family is LossFamily.MULTINOMIAL:
            return self.dimension // self.n_classes
        return self.dimension

    @property
    def is_margin_family(self) -> bool:
        return self.family is not LossFamily.MULTINOMIAL

    # ------------------------------------------------------------------
    # scalar link derivatives in the margin u (margin families only)

    def link(self, u, y):
        u = np.asarray(u, dtype=float)
        y = np.asarray(y, dtype=float)
        fam = self.family
        if fam is LossFamily.LOGISTIC:
            z = y * u
            return np.maximum(-z, 0.0) + np.log1p(np.exp(-np.abs(z)))
        if fam is LossFamily.SQRT_BINARY:
            return -y * u + np.hypot(1.0, u)
        if fam is LossFamily.LOG_COSH:
            r = np.abs(y - u)
            return r + np.log1p(np.exp(-2.0 * r)) - math.log(2.0)
        if fam is LossFamily.QUADRATIC:
            return 0.5 * (y - u) ** 2
        raise TypeError(f"{fam} has no scalar link")

    def link_d1(self, u, y):
        fam = self.family
        if fam is LossFamily.LOGISTIC:
            return -y * expit(-y * u)
        if fam is LossFamily.SQRT_BINARY:
            return -y + u / np.hypot(1.0, u)
        if fam is LossFamily.LOG_COSH:
            return -np.tanh(y - u)
        if fam is LossFamily.QUADRATIC:
            return u - y
        raise TypeError(f"{fam} has no scalar link")

    def link_d2(self, u, y):
        fam = self.family
        if fam is LossFamily.LOGISTIC:
            return expit(u) * expit(-u)
        if fam is LossFamily.SQRT_BINARY:
            return np.hypot(1.0, u) ** -3
        if fam is LossFamily.LOG_COSH:
            e = np.exp(-2.0 * np.abs(y - u))
            return 4.0 * e / (1.0 + e) ** 2
        if fam is LossFamily.QUADRATIC:
            return np.ones_like(np.asarray(u + y, dtype=float))
        raise TypeError(f"{fam} has no scalar link")

    # ------------------------------------------------------------------
    # vectorized per-sample quantities

    def _scores(self, X, theta):
        K = self.n_classes
        return X @ np.reshape(theta, (K, -1)).T

    def values(self, X, y, theta):
        """Per-row losses, shape (n,)."""
        if self.is_margin_family:
            return self.link(X @ theta, y)
        S = self._scores(X, theta)
        cls = y.astype(int)
        return logsumexp(S, axis=1) - S[np.arange(len(cls)), cls]

    def per_sample_gradients(self, X, y, theta):
        """Per-row gradients, shape (n, dimension)."""
        if self.is_margin_family:
            return self.link_d1(X @ theta, y)[:, None] * X
        S = self._scores(X, theta)
        coef = softmax(S, axis=1)
        coef[np.arange(len(y)), y.astype(int)] -= 1.0
        return (coef[:, :, None] * X[:, None, :]).reshape(len(y), -1)

    def batch_gradient(self, thetas, X, y):
        """Row-wise gradients for paired rows: ``thetas[i]`` with ``(X[i], y[i])``."""
        if self.is_margin_family:
            u = np.einsum("ij,ij->i", X, thetas)
            return self.link_d1(u, y)[:, None] * X
        m = thetas.shape[0]
        S = np.einsum("ikp,ip->ik", thetas.reshape(m, self.n_classes, -1), X)
        coef = softmax(S, axis=1)
        coef[np.arange(m), y.astype(int)] -= 1.0
        return (coef[:, :, None] * X[:, None, :]).reshape(m, -1)

    def per_sample_hvp(self, X, y, theta, v):
        if self.is_margin_family:
            return (self.link_d2(X @ theta, y) * (X @ v))[:, None] * X
        P = softmax(self._scores(X, theta), axis=1)
        dS = self._scores(X, v)
        inner = P * (dS - np.sum(P * dS, axis=1, keepdims=True))
        return (inner[:, :, None] * X[:, None, :]).reshape(len(y), -1)

    # ------------------------------------------------------------------
    # expected risk under a dataset's sampling distribution

    def risk(self, data: Dataset, theta) -> float:
        return float(data.probabilities @ self.values(data.X, data.y, np.asarray(theta, float)))

    def risk_many(self, data: Dataset, thetas) -> np.ndarray:
        """Risk at each row of ``thetas`` (shape (m, dimension))."""
        thetas = np.atleast_2d(thetas)
        p = data.probabilities
        if self.is_margin_family:
            U = thetas @ data.X.T
            return self.link(U, data.y[None, :]) @ p
        m, K = thetas.shape[0], self.n_classes
        S = np.einsum("np,mkp->mnk", data.X, thetas.reshape(m, K, -1))
        cls = data.y.astype(int)
        vals = logsumexp(S, axis=2) - S[:, np.arange(len(cls)), cls]
        return vals @ p

    def risk_gradient(self, data: Dataset, theta) -> np.ndarray:
        return self.risk_gradient_many(data, np.atleast_2d(theta))[0]

    def risk_gradient_many(self, data: Dataset, thetas) -> np.ndarray:
        thetas = np.atleast_2d(thetas)
        p = data.probabilities
        if self.is_margin_family:
            U = thetas @ data.X.T
            return (self.link_d1(U, data.y[None, :]) * p) @ data.X
        m, K = thetas.shape[0], self.n_classes
        S = np.einsum("np,mkp->mnk", data.X, thetas.reshape(m, K, -1))
        coef = softmax(S, axis=2)
        coef[:, np.arange(len(data.y)), data.y.astype(int)] -= 1.0
        coef *= p[None, :, None]
        return np.einsum("mnk,np->mkp", coef, data.X).reshape(m, -1)

    def risk_hvp(self, data: Dataset, theta, v) -> np.ndarray:
        G = self.per_sample_hvp(data.X, data.y, np.asarray(theta, float), np.asarray(v, float))
        return data.probabilities @ G

    def risk_hessian(self, data: Dataset, theta) -> np.ndarray:
        theta = np.asarray(theta, float)
        p = data.probabilities
        X = data.X
        if self.is_margin_family:
            c = p * self.link_d2(X @ theta, data.y)
            H = (X * c[:, None]).T @ X
        else:
            P = softmax(self._scores(X, theta), axis=1)
            A = P[:, :, None] * np.eye(self.n_classes)[None] - P[:, :, None] * P[:, None, :]
            A *= p[:, None, None]
            H = np.einsum("nab,ni,nj->aibj", A, X, X).reshape(self.dimension, self.dimension)
        return 0.5 * (H + H.T)


# ----------------------------------------------------------------------
# per-observation operations


def _check_theta(model: LossModel, theta, name="theta"):
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.dimension,):
        raise DimensionError(f"{name} has shape {theta.shape}, model expects ({model.dimension},)")
    if not np.all(np.isfinite(theta)):
        raise NonFiniteError(f"{name} contains non-finite entries")
    return theta


def _check_obs(model: LossModel, obs: Observation):
    if obs.features.shape != (model.feature_dim,):
        raise DimensionError(
            f"features have shape {obs.features.shape}, model expects ({model.feature_dim},)")
    if not np.all(np.isfinite(obs.features)) or not math.isfinite(obs.label):
        raise NonFiniteError("observation contains non-finite entries")
    if model.family in BINARY_FAMILIES and obs.label not in (-1.0, 1.0):
        raise InvalidObservationError(f"binary label must be -1 or +1, got {obs.label}")
    if model.family is LossFamily.MULTINOMIAL:
        if not obs.label.is_integer() or not 0 <= obs.label < model.n_classes:
            raise InvalidObservationError(f"class label {obs.label} outside 0..{model.n_classes - 1}")


def _rows(obs):
    return obs.features[None, :], np.array([obs.label])


def loss_value(model: LossModel, obs: Observation, theta) -> float:
    theta = _check_theta(model, theta)
    _check_obs(model, obs)
    X, y = _rows(obs)
    return float(model.values(X, y, theta)[0])


def loss_gradient(model: LossModel, obs: Observation, theta) -> np.ndarray:
    theta = _check_theta(model, theta)
    _check_obs(model, obs)
    X, y = _rows(obs)
    return model.per_sample_gradients(X, y, theta)[0]


def loss_hvp(model: LossModel, obs: Observation, theta, v) -> np.ndarray:
    theta = _check_theta(model, theta)
    v = _check_theta(model, v, "v")
    _check_obs(model, obs)
    X, y = _rows(obs)
    return model.per_sample_hvp(X, y, theta, v)[0]


def segment_curvature(model: LossModel, data: Dataset, theta1, theta2, t):
    """Second directional derivative of the risk along ``theta2 - theta1`` at ``t``."""
    v = np.asarray(theta2, float) - np.asarray(theta1, float)
    theta = np.asarray(theta1, float) + t * v
    return float(v @ model.risk_hvp(data, theta, v))


def check_self_concordance(model: LossModel, theta1, theta2, probes: int, data: Dataset,
                           guard_floor=None, fd_step=1e-4) -> SegmentCheckResult:
    """Probe ``|phi'''(t)| <= R ||theta2 - theta1|| phi''(t)`` on ``t in [0, 1]``.

    ``phi(t)`` is the risk of ``data`` along the segment.  The curvature
    ``phi''`` comes from exact Hessian-vector products and ``phi'''`` from a
    central difference of ``phi''`` with step ``fd_step``.  Probes where
    ``phi''`` is below ``guard_floor`` (default ``1e-10 R^2``) are skipped.
    """
    if probes < 3:
        raise ValueError("need at least 3 probes")
    theta1 = _check_theta(model, theta1, "theta1")
    theta2 = _check_theta(model, theta2, "theta2")
    length = float(np.linalg.norm(theta2 - theta1))
    if length == 0.0:
        raise ValueError("theta1 and theta2 must differ")
    if guard_floor is None:
        guard_floor = 1e-10 * model.radius ** 2
    ratios = []
    for t in np.linspace(0.0, 1.0, probes):
        d2 = segment_curvature(model, data, theta1, theta2, t)
        if d2 < guard_floor:
            continue
        d3 = (segment_curvature(model, data, theta1, theta2, t + fd_step)
              - segment_curvature(model, data, theta1, theta2, t - fd_step)) / (2 * fd_step)
        ratios.append(abs(d3) / (model.radius * length * d2))
    if not ratios:
        raise DegenerateSegmentError(
            f"all {probes} probes have curvature below guard floor {guard_floor:g}")
    return SegmentCheckResult(float(max(ratios)), len(ratios), float(guard_floor), tuple(ratios))
