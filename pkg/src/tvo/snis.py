"""Self-normalized importance sampling over a shared sample set.

One set of log importance weights ``log w_i = log p(x, z_i) - log q(z_i|x)``
drawn from the proposal is reweighted for any ``beta`` by softmaxing
``beta * log w`` per datapoint.  The resulting S-atom family is itself an
exponential family in ``beta``, so the estimated mean ``eta`` is exactly
nondecreasing and all weighted reductions happen in log space with max
subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

__all__ = [
    "LogWeightGrid",
    "SnisWeights",
    "snis_normalize",
    "snis_eta",
    "snis_var",
    "snis_log_normalizer",
    "iwae_bound",
]


class LogWeightGrid:
    """S x N matrix of log importance weights (S samples per N datapoints)."""

    def __init__(self, log_w):
        lw = np.atleast_2d(np.asarray(log_w, dtype=float))
        if lw.ndim != 2 or lw.size == 0:
            raise ValueError("log_w must be a nonempty S x N matrix")
        if not np.all(np.isfinite(lw)):
            raise ValueError("log_w entries must be finite")
        self.log_w = lw

    @property
    def n_samples(self) -> int:
        return self.log_w.shape[0]

    @property
    def n_datapoints(self) -> int:
        return self.log_w.shape[1]

    def to_csv(self, path) -> None:
        # rows = samples, columns = datapoints
        np.savetxt(path, self.log_w, fmt="%.17g", delimiter=",")

    @classmethod
    def from_csv(cls, path) -> "LogWeightGrid":
        return cls(np.loadtxt(path, delimiter=",", ndmin=2))

    def __repr__(self) -> str:
        return f"LogWeightGrid(S={self.n_samples}, N={self.n_datapoints})"


@dataclass(frozen=True)
class SnisWeights:
    """Column-normalized weights for one beta; each column sums to 1."""

    normalized: np.ndarray
    beta: float

    def __post_init__(self):
        w = np.asarray(self.normalized, dtype=float)
        object.__setattr__(self, "normalized", w)
        if np.any(w < 0.0):
            raise ValueError("normalized weights must be nonnegative")
        if np.any(np.abs(w.sum(axis=0) - 1.0) > 1e-10):
            raise ValueError("each column must sum to 1 within 1e-10")


def _check_snis_beta(beta: float) -> float:
    beta = float(beta)
    if not np.isfinite(beta) or beta < 0.0:
        raise ValueError("beta must be finite and nonnegative")
    return beta


def snis_normalize(grid: LogWeightGrid, beta: float) -> SnisWeights:
    """Softmax of beta * log_w per column, with max subtraction."""
    beta = _check_snis_beta(beta)
    scaled = beta * grid.log_w
    scaled = scaled - scaled.max(axis=0, keepdims=True)
    w = np.exp(scaled)
    return SnisWeights(w / w.sum(axis=0, keepdims=True), beta)


def snis_eta(grid: LogWeightGrid, beta: float) -> np.ndarray:
    """Per-datapoint estimate of the expected log weight under pi_beta."""
    w = snis_normalize(grid, beta).normalized
    return np.sum(w * grid.log_w, axis=0)


def snis_var(grid: LogWeightGrid, beta: float) -> np.ndarray:
    """Per-datapoint weighted population variance of the log weights."""
    w = snis_normalize(grid, beta).normalized
    mean = np.sum(w * grid.log_w, axis=0)
    centered = grid.log_w - mean
    return np.maximum(np.sum(w * centered * centered, axis=0), 0.0)


def snis_log_normalizer(grid: LogWeightGrid, beta: float) -> np.ndarray:
    """Per-datapoint log (1/S sum_i w_i^beta).

    This is the log normalizer of the empirical S-atom family; at beta = 0
    it is exactly 0 and at beta = 1 it is the importance-weighted bound.
    """
    beta = _check_snis_beta(beta)
    return logsumexp(beta * grid.log_w, axis=0) - np.log(grid.n_samples)


def iwae_bound(grid: LogWeightGrid) -> np.ndarray:
    """Per-datapoint log-mean-exp of the weights (direct estimate at beta = 1)."""
    return logsumexp(grid.log_w, axis=0) - np.log(grid.n_samples)
