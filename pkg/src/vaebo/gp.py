"""Gaussian process regression over latent points.

Squared-exponential kernel with one shared length-scale. Targets are
standardized before fitting; hyperparameters are picked by maximizing the log
marginal likelihood over a fixed grid, so fitting is deterministic and
derivative-free.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

JITTERS = (0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class GpFitError(RuntimeError):
    pass


@dataclass(frozen=True)
class GpOptions:
    """Hyperparameter grid. Length-scales are multiplied by sqrt(dim) when ``scale_by_dim``."""

    length_scales: tuple = (0.1, 0.25, 0.5, 1.0, 2.0, 4.0)
    signal_variances: tuple = (0.5, 1.0, 2.0)
    noises: tuple = (1e-6, 1e-4, 1e-2)
    scale_by_dim: bool = True


@dataclass(eq=False)
class GpModel:
    inputs: np.ndarray
    targets: np.ndarray  # standardized
    y_mean: float
    y_std: float
    length_scale: float
    signal_variance: float
    noise: float
    chol: np.ndarray | None
    alpha: np.ndarray | None
    jitter: float = 0.0
    log_marginal_likelihood: float = float("nan")

    @property
    def constant(self) -> bool:
        return self.chol is None

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


def _factor(sq: np.ndarray, y: np.ndarray, ls: float, sv: float, noise: float):
    n = len(y)
    base = sv * np.exp(-0.5 * sq / (ls * ls))
    for jitter in JITTERS:
        K = base + (noise + jitter) * np.eye(n)
        try:
            L = np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            continue
        alpha = cho_solve((L, True), y)
        lml = -0.5 * y @ alpha - np.log(np.diag(L)).sum() - 0.5 * n * math.log(2 * math.pi)
        return L, alpha, jitter, float(lml)
    return None


def fit(inputs, targets, options: GpOptions | None = None) -> GpModel:
    """Fit a GP to latent points ``inputs`` (n, D) and scalar ``targets``."""
    options = options or GpOptions()
    X = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    y = np.asarray(targets, dtype=np.float64).ravel()
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} inputs but {y.shape[0]} targets")
    if X.shape[0] < 2:
        raise ValueError("need at least two training points")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("training data must be finite")

    y_mean = float(y.mean())
    y_std = float(y.std())
    if y_std <= 1e-12 * max(1.0, abs(y_mean)):
        # constant targets: predict the mean everywhere
        return GpModel(X, np.zeros_like(y), y_mean, 1.0, float("inf"), 0.0,
                       min(options.noises), None, None)
    ys = (y - y_mean) / y_std

    sq = _sqdist(X, X)
    scale = math.sqrt(X.shape[1]) if options.scale_by_dim else 1.0
    best = None
    for ls in options.length_scales:
        for sv in options.signal_variances:
            for noise in options.noises:
                res = _factor(sq, ys, ls * scale, sv, noise)
                if res is None:
                    continue
                if best is None or res[3] > best[0][3]:
                    best = (res, ls * scale, sv, noise)
    if best is None:
        raise GpFitError("Cholesky factorization failed for every hyperparameter setting "
                         f"even with jitter up to {JITTERS[-1]:g}")
    (L, alpha, jitter, lml), ls, sv, noise = best
    return GpModel(X, ys, y_mean, y_std, ls, sv, noise, L, alpha, jitter, lml)


def predict_batch(model: GpModel, Z, standardized: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Posterior mean and standard deviation (noise included) at each row of ``Z``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    if Z.shape[1] != model.dim:
        raise ValueError(f"query dimension {Z.shape[1]} != training dimension {model.dim}")
    if model.constant:
        mean = np.zeros(Z.shape[0])
        std = np.full(Z.shape[0], math.sqrt(model.noise))
    else:
        Ks = model.signal_variance * np.exp(-0.5 * _sqdist(Z, model.inputs) / model.length_scale**2)
        mean = Ks @ model.alpha
        v = solve_triangular(model.chol, Ks.T, lower=True)
        var = model.signal_variance + model.noise - (v * v).sum(0)
        std = np.sqrt(np.maximum(var, 0.0))
    if standardized:
        return mean, std
    return mean * model.y_std + model.y_mean, std * model.y_std


def predict(model: GpModel, z) -> tuple[float, float]:
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1:
        raise ValueError("predict expects a single latent point")
    m, s = predict_batch(model, z[None, :])
    return float(m[0]), float(s[0])


def loo_residuals(model: GpModel) -> np.ndarray:
    """Closed-form leave-one-out residuals (observed minus predicted), original units."""
    if model.constant:
        return np.zeros(len(model.targets))
    Kinv = cho_solve((model.chol, True), np.eye(len(model.targets)))
    return model.alpha / np.diag(Kinv) * model.y_std


def write_diagnostics_csv(model: GpModel, path) -> None:
    res = loo_residuals(model)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["field", "value"])
        for key in ("length_scale", "signal_variance", "noise", "jitter", "y_mean", "y_std",
                    "log_marginal_likelihood"):
            w.writerow([key, repr(float(getattr(model, key)))])
        for i, r in enumerate(res):
            w.writerow([f"loo_residual_{i}", repr(float(r))])
