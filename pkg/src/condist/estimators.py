"""Raw conditional-distribution estimators and rate-optimal hyper-parameters.

The r-box estimator collects targets whose features fall in a sup-norm
ball of radius r around the boundary-clamped query

    beta(x) = r ∨ x ∧ (1 - r)   (entrywise),

so the ball keeps full radius r inside [0,1]^{d_X}.  The k-NN estimator
collects the targets of the k nearest features (ties uniform at random)
via the exact or the partition-backed search.  Empty r-boxes fall back
to the Lebesgue measure on the unit target box.

The sample-size-optimal choices are

    r ~ M^{-1/(d_X+2)}           (d_Y <= 2),   M^{-1/(d_X+d_Y)}  (d_Y >= 3)
    k ~ M^{ 2/(d_X+2)}           (d_Y <= 2),   M^{d_Y/(d_X+d_Y)} (d_Y >= 3)

up to a user scale constant c (the theory fixes orders, not constants).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, DiscreteMeasure, clustered_empirical
from .errors import InvalidArgument
from .nns import RbspPart, anns_knn, exact_knn


@dataclass(frozen=True)
class RBoxScheme:
    r: float

    def __post_init__(self):
        if not 0.0 < self.r < 0.5:
            raise InvalidArgument(f"r must lie in (0, 1/2), got {self.r}")


@dataclass(frozen=True)
class KnnScheme:
    k: int
    parts: list[RbspPart] | None = None  # None: exact search backend
    metric: str = "max"

    def __post_init__(self):
        if self.k < 1:
            raise InvalidArgument("k must be >= 1")


def rbox_estimate(data: Dataset, x, scheme: RBoxScheme) -> DiscreteMeasure:
    """Empirical measure of targets in the clamped r-ball around x."""
    q = np.asarray(x, dtype=np.float64).reshape(-1)
    if q.size != data.d_x:
        raise InvalidArgument(f"query has dimension {q.size}, expected {data.d_x}")
    if np.any(q < 0.0) or np.any(q > 1.0):
        raise InvalidArgument("r-box queries must lie in the unit feature box")
    beta = np.clip(q, scheme.r, 1.0 - scheme.r)
    members = np.flatnonzero(np.abs(data.xs - beta[None, :]).max(axis=1) <= scheme.r)
    return clustered_empirical(data, members)


def knn_estimate(data: Dataset, x, scheme: KnnScheme,
                 rng: np.random.Generator) -> DiscreteMeasure:
    """Empirical measure of the k nearest targets; exactly k atoms."""
    if scheme.parts is None:
        idx = exact_knn(data, x, scheme.k, rng, metric=scheme.metric)
    else:
        idx = anns_knn(scheme.parts, data, x, scheme.k, rng, metric=scheme.metric)
    return DiscreteMeasure.atoms(data.ys[idx])


def _check_rate_args(m: int, c: float) -> None:
    if m < 2:
        raise InvalidArgument("m must be >= 2")
    if c <= 0.0:
        raise InvalidArgument("scale constant must be positive")


def optimal_r(m: int, d_x: int, d_y: int, c: float = 1.0) -> float:
    """Rate-optimal box radius, clamped into (0, 1/2)."""
    _check_rate_args(m, c)
    expo = 1.0 / (d_x + 2) if d_y <= 2 else 1.0 / (d_x + d_y)
    return float(min(c * m ** (-expo), np.nextafter(0.5, 0.0)))


def optimal_k(m: int, d_x: int, d_y: int, c: float = 1.0) -> int:
    """Rate-optimal neighbor count, rounded and clamped into [1, m]."""
    _check_rate_args(m, c)
    expo = 2.0 / (d_x + 2) if d_y <= 2 else d_y / (d_x + d_y)
    return int(min(max(int(np.rint(c * m ** expo)), 1), m))
