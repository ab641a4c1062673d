"""Ground truth for the bounds: the risk minimizer, its value and curvature."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import linprog
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .data import Dataset
from .errors import ConvergenceError, DimensionError, MinimumNotAttainedError
from .losses import BINARY_FAMILIES, LossFamily, LossModel

DENSE_THRESHOLD = 512
ARMIJO = 1e-4


@dataclass(frozen=True)
class OptimumCertificate:
    theta_star: np.ndarray
    f_star: float
    grad_norm_at_star: float
    mu: float
    hessian_condition_estimate: float
    converged: bool
    tolerance: float = 0.0
    max_eigenvalue: float = 0.0
    iterations: int = 0
    family: str = ""
    dataset_digest: str = ""

    def to_dict(self) -> dict:
        out = asdict(self)
        out["theta_star"] = np.asarray(self.theta_star).tolist()
        return out

    @classmethod
    def from_dict(cls, d) -> "OptimumCertificate":
        d = dict(d)
        d["theta_star"] = np.array(d["theta_star"], dtype=float)
        return cls(**d)

    def to_json(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")
        return path

    @classmethod
    def from_json(cls, path) -> "OptimumCertificate":
        return cls.from_dict(json.loads(Path(path).read_text()))


def full_gradient(model: LossModel, dataset: Dataset, theta) -> np.ndarray:
    """Mean per-sample gradient under the dataset's sampling distribution."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (model.dimension,):
        raise DimensionError(f"theta has shape {theta.shape}, expected ({model.dimension},)")
    if dataset.feature_dim != model.feature_dim:
        raise DimensionError("dataset feature dimension does not match the model")
    return model.risk_gradient(dataset, theta)


def lowest_hessian_eigenvalue(model: LossModel, dataset: Dataset, theta,
                              dense_threshold=DENSE_THRESHOLD, method="auto") -> float:
    """Smallest eigenvalue of the risk Hessian at ``theta``, clipped at 0.

    ``method`` is ``"dense"``, ``"iterative"`` (Lanczos on Hessian-vector
    products) or ``"auto"`` (dense up to ``dense_threshold`` parameters).
    """
    theta = np.asarray(theta, dtype=float)
    d = model.dimension
    if method == "auto":
        method = "dense" if d <= dense_threshold else "iterative"
    if method == "dense":
        return max(float(np.linalg.eigvalsh(model.risk_hessian(dataset, theta))[0]), 0.0)
    if d < 2:
        raise ValueError("iterative path needs at least 2 parameters")
    op = LinearOperator((d, d), matvec=lambda v: model.risk_hvp(dataset, theta, np.ravel(v)),
                        dtype=float)
    try:
        vals = eigsh(op, k=1, which="SA", tol=1e-13, maxiter=50 * d,
                     v0=np.ones(d) / math.sqrt(d), return_eigenvectors=False)
    except ArpackNoConvergence as exc:
        raise ConvergenceError("Lanczos iteration did not converge",
                               residual=getattr(exc, "eigenvalues", None)) from exc
    return max(float(vals[0]), 0.0)


def _recession_lp(model: LossModel, dataset: Dataset):
    """Largest total margin gain over directions that never increase any loss.

    Positive means a direction of recession exists, so the risk has no
    minimizer.  Only classification families can have one.
    """
    keep = dataset.probabilities > 0
    X, y = dataset.X[keep], dataset.y[keep]
    if model.family in BINARY_FAMILIES:
        Z = y[:, None] * X
    elif model.family is LossFamily.MULTINOMIAL:
        K, p = model.n_classes, model.feature_dim
        rows = []
        for x, label in zip(X, y.astype(int)):
            for c in range(K):
                if c == label:
                    continue
                r = np.zeros(K * p)
                r[label * p:(label + 1) * p] = x
                r[c * p:(c + 1) * p] = -x
                rows.append(r)
        Z = np.array(rows)
    else:
        return 0.0
    res = linprog(-Z.sum(axis=0), A_ub=-Z, b_ub=np.zeros(len(Z)),
                  bounds=[(-1.0, 1.0)] * Z.shape[1], method="highs")
    return -res.fun if res.status == 0 else 0.0


def _newton_direction(H, g):
    w, V = np.linalg.eigh(H)
    keep = w > 1e-14 * max(w[-1], 1e-300)
    if not np.any(keep):
        return -g
    coef = (V[:, keep].T @ g) / w[keep]
    return -(V[:, keep] @ coef)


def solve_batch(model: LossModel, dataset: Dataset, theta_init=None, tol=None,
                max_iter=200, norm_cap=None, check_recession=True) -> OptimumCertificate:
    """Minimize the risk by damped Newton with Armijo backtracking.

    Raises :class:`MinimumNotAttainedError` when the data admit a direction
    of recession (checked by a linear program for classification losses) or
    when an iterate leaves the ball of radius ``norm_cap`` (``1e6 / R``).
    """
    if len(dataset) == 0:
        raise ValueError("dataset must be nonempty")
    R = model.radius
    tol = 1e-10 * R if tol is None else tol
    norm_cap = 1e6 / R if norm_cap is None else norm_cap
    if check_recession:
        gain = _recession_lp(model, dataset)
        if gain > 1e-9 * R * len(dataset):
            raise MinimumNotAttainedError(
                f"risk has a direction of recession (margin gain {gain:.3g}); minimum not attained")
    theta = np.zeros(model.dimension) if theta_init is None else np.array(theta_init, dtype=float)
    f = model.risk(dataset, theta)
    g = model.risk_gradient(dataset, theta)
    it = 0
    while np.linalg.norm(g) > tol and it < max_iter:
        it += 1
        d = _newton_direction(model.risk_hessian(dataset, theta), g)
        slope = float(g @ d)
        if slope >= 0:
            d, slope = -g, -float(g @ g)
        step = 1.0
        accepted = False
        if -slope < 1e-20:
            accepted = True
        else:
            for _ in range(60):
                f_new = model.risk(dataset, theta + step * d)
                if f_new <= f + ARMIJO * step * slope:
                    accepted = True
                    break
                step *= 0.5
        if not accepted:
            break
        theta = theta + step * d
        if np.linalg.norm(theta) > norm_cap:
            raise MinimumNotAttainedError(
                f"iterate norm {np.linalg.norm(theta):.3g} exceeded cap {norm_cap:.3g}; "
                "minimum not attained")
        f = model.risk(dataset, theta)
        g = model.risk_gradient(dataset, theta)
    gnorm = float(np.linalg.norm(g))
    eigs = np.linalg.eigvalsh(model.risk_hessian(dataset, theta)) if model.dimension <= DENSE_THRESHOLD else None
    if eigs is not None:
        mu, lam_max = max(float(eigs[0]), 0.0), float(eigs[-1])
    else:
        mu = lowest_hessian_eigenvalue(model, dataset, theta)
        lam_max = float("nan")
    cond = lam_max / mu if mu > 0 else math.inf
    return OptimumCertificate(theta_star=theta, f_star=float(f), grad_norm_at_star=gnorm, mu=mu,
                              hessian_condition_estimate=cond, converged=gnorm <= tol,
                              tolerance=float(tol), max_eigenvalue=lam_max, iterations=it,
                              family=model.family.value, dataset_digest=dataset.digest())


class CertificateCache:
    """Directory of certificates keyed by dataset digest, family and radius."""

    def __init__(self, directory):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, model: LossModel, dataset: Dataset) -> Path:
        return self.directory / f"{dataset.digest()[:32]}-{model.family.value}-{model.radius!r}.json"

    def get(self, model, dataset):
        path = self._path(model, dataset)
        return OptimumCertificate.from_json(path) if path.exists() else None

    def put(self, model, dataset, cert: OptimumCertificate):
        return cert.to_json(self._path(model, dataset))

    def solve(self, model, dataset, **kwargs) -> OptimumCertificate:
        cert = self.get(model, dataset)
        if cert is None:
            cert = solve_batch(model, dataset, **kwargs)
            self.put(model, dataset, cert)
        return cert
