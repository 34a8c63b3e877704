"""Partition schedules over [0, 1] for the path bounds.

Four strategies produce the sorted points {beta_k}: plain linear spacing,
log-uniform spacing above a chosen beta_1, moment spacing (equal steps in
the mean parameter eta, inverted by bisection), and coarse-grained linear
binning that allocates a point budget across knot intervals proportionally
to sqrt(width * eta rise).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Schedule",
    "EtaEvaluator",
    "BisectionWarning",
    "linear_schedule",
    "log_uniform_schedule",
    "moments_schedule",
    "coarse_grained_schedule",
]

_NUDGE = 1e-9


class BisectionWarning(UserWarning):
    """Raised as a warning when bisection hits its iteration cap."""


@dataclass(frozen=True)
class Schedule:
    """Sorted partition of [0, 1] with K = len(betas) - 1 intervals."""

    betas: tuple

    def __post_init__(self):
        betas = tuple(float(b) for b in self.betas)
        object.__setattr__(self, "betas", betas)
        if len(betas) < 2:
            raise ValueError("schedule needs at least the two endpoints")
        if betas[0] != 0.0 or betas[-1] != 1.0:
            raise ValueError("schedule must start at 0 and end at 1")
        if np.any(np.diff(betas) <= 0.0):
            raise ValueError("schedule betas must be strictly increasing")

    @property
    def K(self) -> int:
        return len(self.betas) - 1

    def as_array(self) -> np.ndarray:
        return np.asarray(self.betas, dtype=float)

    def with_point(self, beta: float) -> "Schedule":
        """Refined schedule with one extra interior point."""
        beta = float(beta)
        if not 0.0 < beta < 1.0:
            raise ValueError("inserted point must be interior")
        if beta in self.betas:
            return self
        return Schedule(tuple(sorted(self.betas + (beta,))))

    def to_json(self) -> list:
        return list(self.betas)

    def __iter__(self):
        return iter(self.betas)


class EtaEvaluator:
    """Memoizing wrapper around a beta -> pooled eta map.

    Wraps either an exact path (its ``eta`` method) or a batch-mean SNIS
    estimate on a fixed weight grid; the underlying map must be
    nondecreasing in beta, which is asserted at every probed point.
    """

    def __init__(self, fn):
        if isinstance(fn, EtaEvaluator):
            fn = fn._fn
        self._fn = fn
        self._cache: dict[float, float] = {}
        self._probes: list[tuple[float, float]] = []

    @classmethod
    def from_path(cls, path) -> "EtaEvaluator":
        return cls(lambda b: float(path.eta(b)))

    @classmethod
    def from_grid(cls, grid) -> "EtaEvaluator":
        from .snis import snis_eta

        return cls(lambda b: float(np.mean(snis_eta(grid, b))))

    def __call__(self, beta: float) -> float:
        beta = float(beta)
        if beta not in self._cache:
            val = float(self._fn(beta))
            for b0, v0 in self._probes:
                if (beta - b0) * (val - v0) < -1e-9:
                    raise ValueError("eta evaluator is not nondecreasing in beta")
            self._probes.append((beta, val))
            self._cache[beta] = val
        return self._cache[beta]


def _as_evaluator(eta) -> EtaEvaluator:
    if isinstance(eta, EtaEvaluator):
        return eta
    if callable(eta):
        return EtaEvaluator(eta)
    if hasattr(eta, "eta"):
        return EtaEvaluator.from_path(eta)
    if hasattr(eta, "log_w"):
        return EtaEvaluator.from_grid(eta)
    raise TypeError("expected an EtaEvaluator, callable, exact path, or weight grid")


def linear_schedule(K: int) -> Schedule:
    """beta_k = k / K."""
    K = int(K)
    if K < 1:
        raise ValueError("K must be at least 1")
    return Schedule(tuple(np.linspace(0.0, 1.0, K + 1)))


def log_uniform_schedule(K: int, beta1: float) -> Schedule:
    """beta_1 fixed; beta_1 .. beta_K geometrically spaced up to 1."""
    K = int(K)
    beta1 = float(beta1)
    if K < 2:
        raise ValueError("K must be at least 2 for log-uniform spacing")
    if not 0.0 < beta1 < 1.0:
        raise ValueError("beta1 must lie strictly inside (0, 1)")
    interior = np.geomspace(beta1, 1.0, K)
    interior[-1] = 1.0
    return Schedule((0.0,) + tuple(interior))


def _enforce_increasing(interior: list[float]) -> list[float]:
    """Nudge duplicate/colliding interior points apart while staying in (0, 1)."""
    out = []
    prev = 0.0
    for b in interior:
        b = min(max(b, prev + _NUDGE), 1.0 - _NUDGE)
        if b <= prev:
            b = prev + _NUDGE
        out.append(b)
        prev = b
    return out


def moments_schedule(eta, K: int, tol: float | None = None, max_iter: int = 60) -> Schedule:
    """Schedule whose eta-images are equally spaced between eta(0) and eta(1).

    For each interior k, bisects on beta until |eta(beta) - target_k| <= tol
    with target_k = (1 - k/K) * eta(0) + (k/K) * eta(1).  tol defaults to
    1e-3 of the eta span; an absolute threshold (for instance 0.1 nats) may
    be passed instead.  If the iteration cap is hit, the current midpoint is
    used and a BisectionWarning is issued.
    """
    K = int(K)
    if K < 1:
        raise ValueError("K must be at least 1")
    evaluator = _as_evaluator(eta)
    eta0 = evaluator(0.0)
    eta1 = evaluator(1.0)
    if eta1 < eta0 - 1e-9:
        raise ValueError("eta(1) < eta(0): evaluator is not a valid path mean")
    span = eta1 - eta0
    if tol is None:
        tol = max(1e-3 * span, 1e-12)
    tol = float(tol)
    if tol <= 0.0:
        raise ValueError("tol must be positive")

    interior = []
    for k in range(1, K):
        frac = k / K
        target = (1.0 - frac) * eta0 + frac * eta1
        lo, hi = 0.0, 1.0
        mid = 0.5
        converged = False
        for _ in range(int(max_iter)):
            mid = 0.5 * (lo + hi)
            val = evaluator(mid)
            if abs(val - target) <= tol:
                converged = True
                break
            if val > target:
                hi = mid
            else:
                lo = mid
        if not converged:
            warnings.warn(
                f"bisection for target {k}/{K} unconverged after {max_iter} steps",
                BisectionWarning,
            )
        interior.append(mid)
    return Schedule((0.0, *_enforce_increasing(interior), 1.0))


def coarse_grained_schedule(eta, K: int, J: int = 20) -> Schedule:
    """Linear binning with budget K_j proportional to sqrt(width * eta rise).

    [0, 1] is split into J equal knot intervals; interval j receives K_j
    sub-intervals by largest-remainder rounding of the sqrt costs, and its
    points are linearly spaced.  A flat curve (all eta rises zero) has
    degenerate costs and falls back to plain linear spacing.
    """
    K, J = int(K), int(J)
    if J < 1:
        raise ValueError("J must be at least 1")
    if K < J:
        raise ValueError("K must be at least J")
    if J == 1:
        return linear_schedule(K)
    evaluator = _as_evaluator(eta)
    knots = np.linspace(0.0, 1.0, J + 1)
    etas = np.array([evaluator(b) for b in knots])
    if etas[-1] < etas[0] - 1e-9:
        raise ValueError("eta(1) < eta(0): evaluator is not a valid path mean")
    rises = np.maximum(np.diff(etas), 0.0)  # clamp SNIS noise
    costs = np.sqrt(np.diff(knots) * rises)
    total = costs.sum()
    if total <= 0.0:
        return linear_schedule(K)

    quotas = K * costs / total
    alloc = np.floor(quotas).astype(int)
    remainder = K - alloc.sum()
    order = np.argsort(-(quotas - alloc), kind="stable")
    for idx in order[:remainder]:
        alloc[idx] += 1
    if alloc[-1] == 0:
        alloc[int(np.argmax(alloc))] -= 1
        alloc[-1] = 1

    betas = [0.0]
    for j in range(J):
        if alloc[j] == 0:
            continue
        lo, hi = knots[j], knots[j + 1]
        betas.extend(np.linspace(lo, hi, alloc[j] + 1)[1:])
    betas[-1] = 1.0
    return Schedule((betas[0], *_enforce_increasing(betas[1:-1]), betas[-1]))
