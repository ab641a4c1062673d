"""Observations, finite datasets and the libsvm-style file format.

A :class:`Dataset` is a finite collection of labeled rows together with a
sampling distribution over them (uniform unless ``weights`` is given).  The
objective ``f`` used throughout the package is the expected loss under that
distribution, so a stream of i.i.d. draws from the dataset has exactly
``f'`` as the conditional mean of its stochastic gradients.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, InvalidObservationError

# Relative slack allowed when certifying that ||x|| <= R.
NORM_SLACK = 1e-12


@dataclass(frozen=True)
class Observation:
    """One labeled data point."""

    features: np.ndarray
    label: float

    def __post_init__(self):
        x = np.asarray(self.features, dtype=float)
        if x.ndim != 1:
            raise DimensionError(f"features must be a vector, got shape {x.shape}")
        object.__setattr__(self, "features", x)
        object.__setattr__(self, "label", float(self.label))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.features))


class Dataset:
    """Finite set of observations with a sampling distribution.

    Parameters
    ----------
    X : array of shape (n, p)
        Feature rows.
    y : array of shape (n,)
        Labels (+/-1 for binary families, class indices for multinomial,
        real responses for regression).
    radius : float, optional
        Certified bound on the feature norms.  Defaults to the observed
        maximum; a declared radius smaller than the data raises.
    weights : array of shape (n,), optional
        Nonnegative sampling weights; normalized internally.
    meta : dict, optional
        Free-form provenance (generator spec, true parameter, ...).
    """

    def __init__(self, X, y, radius=None, weights=None, meta=None, source_path=None):
        X = np.array(X, dtype=float, ndmin=2)
        y = np.asarray(y, dtype=float).reshape(-1)
        if X.shape[0] != y.shape[0]:
            raise DimensionError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if X.shape[0] == 0:
            raise InvalidObservationError("dataset must be nonempty")
        norms = np.linalg.norm(X, axis=1)
        max_norm = float(norms.max())
        if radius is None:
            radius = max_norm
        radius = float(radius)
        if max_norm > radius * (1 + NORM_SLACK):
            raise InvalidObservationError(
                f"feature norm {max_norm:.17g} exceeds declared radius {radius:.17g}")
        if weights is not None:
            weights = np.asarray(weights, dtype=float).reshape(-1)
            if weights.shape != y.shape:
                raise DimensionError("weights must have one entry per row")
            if np.any(weights < 0) or not np.all(np.isfinite(weights)) or weights.sum() <= 0:
                raise InvalidObservationError("weights must be finite, nonnegative, not all zero")
        X.setflags(write=False)
        y.setflags(write=False)
        self.X = X
        self.y = y
        self.radius = radius
        self.weights = weights
        self.meta = dict(meta or {})
        self.source_path = source_path
        if weights is None:
            probs = np.full(len(y), 1.0 / len(y))
        else:
            probs = weights / weights.sum()
        probs.setflags(write=False)
        self.probabilities = probs

    @classmethod
    def from_observations(cls, observations, radius=None, **kwargs) -> "Dataset":
        observations = list(observations)
        X = np.stack([o.features for o in observations])
        y = np.array([o.label for o in observations])
        return cls(X, y, radius=radius, **kwargs)

    def __len__(self):
        return self.X.shape[0]

    def __getitem__(self, i) -> Observation:
        return Observation(self.X[i], self.y[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def feature_dim(self) -> int:
        return self.X.shape[1]

    @property
    def is_uniform(self) -> bool:
        return self.weights is None

    def digest(self) -> str:
        """SHA-256 over features, labels and sampling weights."""
        h = hashlib.sha256()
        for arr in (self.X, self.y, self.probabilities):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        h.update(repr(self.X.shape).encode())
        return h.hexdigest()

    def concatenate(self, other: "Dataset") -> "Dataset":
        """Stack two datasets; the result samples each row by its weight."""
        w1 = self.weights if self.weights is not None else np.ones(len(self))
        w2 = other.weights if other.weights is not None else np.ones(len(other))
        weights = None if (self.weights is None and other.weights is None) else np.r_[w1, w2]
        return Dataset(np.vstack([self.X, other.X]), np.r_[self.y, other.y],
                       radius=max(self.radius, other.radius), weights=weights)


@dataclass
class DatasetSidecar:
    """Metadata stored next to a libsvm file."""

    radius: float
    dimension: int
    size: int
    generator: dict = field(default_factory=dict)
    weights: list | None = None


def _format_float(v: float) -> str:
    return repr(float(v))


def write_libsvm(dataset: Dataset, path, generator=None):
    """Write ``path`` in libsvm format plus a ``path.json`` sidecar.

    Rows are ``label index:value ...`` with 1-based indices; zero entries
    are omitted.  Floats are written with ``repr`` so reading back is exact.
    """
    path = Path(path)
    lines = []
    for x, label in zip(dataset.X, dataset.y):
        label_txt = str(int(label)) if float(label).is_integer() else _format_float(label)
        parts = [label_txt]
        parts += [f"{j + 1}:{_format_float(v)}" for j, v in enumerate(x) if v != 0.0]
        lines.append(" ".join(parts))
    path.write_text("\n".join(lines) + "\n")
    sidecar = {
        "radius": dataset.radius,
        "dimension": dataset.feature_dim,
        "size": len(dataset),
        "generator": generator if generator is not None else dataset.meta.get("generator", {}),
    }
    if dataset.weights is not None:
        sidecar["weights"] = [float(w) for w in dataset.weights]
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    return path


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_libsvm(path, dimension=None) -> Dataset:
    """Read a libsvm file; the sidecar, when present, supplies radius and weights."""
    path = Path(path)
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
    dimension = dimension or meta.get("dimension")
    labels, rows = [], []
    max_index = 0
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        labels.append(float(tokens[0]))
        entries = {}
        for tok in tokens[1:]:
            try:
                idx, val = tok.split(":")
                idx = int(idx)
            except ValueError as exc:
                raise InvalidObservationError(f"{path}:{lineno}: malformed entry {tok!r}") from exc
            if idx < 1:
                raise InvalidObservationError(f"{path}:{lineno}: indices are 1-based")
            entries[idx - 1] = float(val)
            max_index = max(max_index, idx)
        rows.append(entries)
    dimension = int(dimension or max_index)
    if max_index > dimension:
        raise DimensionError(f"index {max_index} exceeds dimension {dimension}")
    X = np.zeros((len(rows), dimension))
    for i, entries in enumerate(rows):
        for j, v in entries.items():
            X[i, j] = v
    return Dataset(X, labels, radius=meta.get("radius"), weights=meta.get("weights"),
                   meta={"generator": meta.get("generator", {})}, source_path=str(path))
