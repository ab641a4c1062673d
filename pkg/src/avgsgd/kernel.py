"""The stochastic gradient recursion in dual form.

With ``theta_0 = 0`` every iterate is a combination ``theta_n = sum_i alpha_i x_i``
of the observations seen so far, and the new weight only needs kernel
evaluations against the support:

    u_n     = sum_{i<n} alpha_i K(x_i, x_n)
    alpha_n = -gamma_n phi_n'(u_n)

For the multinomial family ``alpha_i`` is a vector with one entry per class.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import softmax

from .data import Dataset, Observation, read_libsvm
from .errors import ConfigError, DimensionError, StreamExhaustedError
from .losses import LossFamily, LossModel
from .sgd import RunConfig, make_generator, step_sizes


@dataclass(frozen=True)
class KernelFunction:
    """``linear``: <a, b>;  ``gaussian``: exp(-||a - b||^2 / (2 bandwidth^2))."""

    kind: str = "linear"
    bandwidth: float | None = None

    def __post_init__(self):
        if self.kind not in ("linear", "gaussian"):
            raise ValueError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "gaussian" and not (self.bandwidth and self.bandwidth > 0):
            raise ValueError("gaussian kernel needs a positive bandwidth")

    def __call__(self, A, B) -> np.ndarray:
        """Kernel matrix between the rows of ``A`` and ``B``."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if A.shape[1] != B.shape[1]:
            raise DimensionError("kernel arguments have different feature dimensions")
        G = A @ B.T
        if self.kind == "linear":
            return G
        sq = np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * G
        return np.exp(-np.maximum(sq, 0.0) / (2.0 * self.bandwidth ** 2))

    def gram(self, X) -> np.ndarray:
        K = self(X, X)
        return 0.5 * (K + K.T)

    def to_dict(self):
        return {"kind": self.kind, "bandwidth": self.bandwidth}


class DualState:
    """Append-only dual weights and support of a kernel SGD run.

    ``gram_cache_rows`` bounds the number of cached kernel rows (least
    recently used rows are evicted); ``None`` keeps every row, ``0``
    disables caching.
    """

    def __init__(self, kernel: KernelFunction, n_classes=1, theta0=None,
                 gram_cache_rows=None, dataset_path=None):
        if theta0 is not None and np.any(np.asarray(theta0) != 0):
            raise ConfigError("the dual recursion requires theta0 = 0", field="theta0")
        self.kernel = kernel
        self.n_classes = n_classes
        self.dataset_path = dataset_path
        self._alphas: list[np.ndarray] = []
        self._support: list[np.ndarray] = []
        self.support_indices: list[int] | None = [] if dataset_path is not None else None
        self.kernel_evaluations = 0
        self.gram_cache_rows = gram_cache_rows
        self._cache: OrderedDict[int, np.ndarray] = OrderedDict()

    def __len__(self):
        return len(self._alphas)

    @property
    def alphas(self) -> np.ndarray:
        if not self._alphas:
            return np.zeros((0,) if self.n_classes == 1 else (0, self.n_classes))
        return np.array(self._alphas)

    @property
    def support(self) -> np.ndarray:
        return np.array(self._support)

    def gram_row(self, n: int):
        """Cached ``K(x_i, x_n)`` for ``i < n`` (1-based step ``n``), or ``None``."""
        row = self._cache.get(n)
        if row is not None:
            self._cache.move_to_end(n)
        return row

    def _store_row(self, n, row):
        if self.gram_cache_rows == 0:
            return
        self._cache[n] = row
        if self.gram_cache_rows is not None:
            while len(self._cache) > self.gram_cache_rows:
                self._cache.popitem(last=False)

    def evict(self):
        self._cache.clear()

    def averaged_alphas(self) -> np.ndarray:
        """Weights of the averaged iterate (mean of ``theta_0..theta_{n-1}``)."""
        n = len(self)
        if n == 0:
            return self.alphas
        w = (n - np.arange(1, n + 1)) / n
        a = self.alphas
        return a * (w if a.ndim == 1 else w[:, None])

    def to_dict(self) -> dict:
        out = {"kernel": self.kernel.to_dict(), "n_classes": self.n_classes,
               "alphas": self.alphas.tolist()}
        if self.support_indices is not None:
            out["dataset_path"] = self.dataset_path
            out["support_indices"] = list(self.support_indices)
        else:
            out["support"] = self.support.tolist()
        return out

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")
        return path

    @classmethod
    def from_dict(cls, d, dataset: Dataset | None = None) -> "DualState":
        kernel = KernelFunction(**d["kernel"])
        state = cls(kernel, n_classes=d["n_classes"], dataset_path=d.get("dataset_path"))
        if "support_indices" in d:
            if dataset is None:
                dataset = read_libsvm(d["dataset_path"])
            state.support_indices = list(d["support_indices"])
            state._support = [dataset.X[i].copy() for i in state.support_indices]
        else:
            state._support = [np.asarray(x, dtype=float) for x in d["support"]]
        state._alphas = [np.asarray(a, dtype=float) if np.ndim(a) else float(a) for a in d["alphas"]]
        return state

    @classmethod
    def from_json(cls, path, dataset=None) -> "DualState":
        return cls.from_dict(json.loads(Path(path).read_text()), dataset=dataset)


def _dual_weight(model: LossModel, u, label, gamma):
    if model.family is LossFamily.MULTINOMIAL:
        coef = softmax(u)
        coef[int(label)] -= 1.0
        return -gamma * coef
    return float(-gamma * model.link_d1(u, label))


def kernel_sgd_step(state: DualState, obs: Observation, gamma: float, model: LossModel,
                    index: int | None = None) -> DualState:
    """Append the weight of one new observation; earlier weights are untouched."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    x = obs.features
    if state._support and x.shape != state._support[0].shape:
        raise DimensionError("observation dimension differs from the support")
    n = len(state) + 1
    if state._support:
        row = state.kernel(np.array(state._support), x[None, :])[:, 0]
        state.kernel_evaluations += len(row)
        state._store_row(n, row)
        u = row @ state.alphas
    else:
        u = np.zeros(state.n_classes) if state.n_classes > 1 else 0.0
    state._alphas.append(_dual_weight(model, u, obs.label, gamma))
    state._support.append(x.copy())
    if state.support_indices is not None:
        state.support_indices.append(-1 if index is None else int(index))
    return state


def predict(state: DualState, kernel: KernelFunction | None, x, averaged=False):
    """``sum_i alpha_i K(x_i, x)``; a vector of class scores for multinomial states."""
    kernel = kernel or state.kernel
    x = np.asarray(x, dtype=float)
    if len(state) == 0:
        return np.zeros(state.n_classes) if state.n_classes > 1 else 0.0
    if x.shape != state._support[0].shape:
        raise DimensionError("query dimension differs from the support")
    row = kernel(state.support, x[None, :])[:, 0]
    a = state.averaged_alphas() if averaged else state.alphas
    out = row @ a
    return out if state.n_classes > 1 else float(out)


def kernel_run(config: RunConfig, kernel: KernelFunction, gram_cache_rows=None) -> DualState:
    """Dual counterpart of :func:`avgsgd.sgd.run`, consuming the same index stream."""
    if np.any(config.theta0 != 0):
        raise ConfigError("the dual recursion requires theta0 = 0", field="theta0")
    model = config.model
    data = config.dataset
    K = model.n_classes if model.family is LossFamily.MULTINOMIAL else 1
    state = DualState(kernel, n_classes=K, gram_cache_rows=gram_cache_rows,
                      dataset_path=data.source_path)
    gammas = step_sizes(config.schedule, config.horizon)
    blocks = config.data_source.index_blocks(make_generator(config.seed, config.stream))
    n = 0
    for block in blocks:
        for i in block:
            if n == config.horizon:
                return state
            kernel_sgd_step(state, data[int(i)], gammas[n], model, index=int(i))
            n += 1
        if n == config.horizon:
            return state
    if n < config.horizon:
        raise StreamExhaustedError(f"data stream exhausted at step {n + 1} of {config.horizon}",
                                   step=n + 1)
    return state
