"""Exact k-nearest-neighbor search and randomized binary space partitioning.

Exact search ranks samples by distance to the query (sup-norm by
default, l1 optionally) and breaks ties at the k-th distance uniformly
at random.

The approximate search (ANNS-RBSP) repeatedly bisects the per-axis
sorted index arrays of the dataset: each slice picks a random axis
(overridden to the longest rectangle edge when the edge ratio exceeds
``r_edge``), draws a ratio p ~ U([ratio_low, ratio_high]), splits the
axis-sorted member order at floor(p*n) (clamped to [1, n-1]), and
recomputes the children's bounding rectangles.  Rectangles are tight
over their members by default, so they may overlap; queries are routed
to the containing rectangle of smallest volume (ties to the first), or
to the nearest rectangle in sup-norm when no rectangle contains them.
A part is not sliced further when the worst-case child would drop below
``min_part`` members, so partitions may stop early and hold fewer than
2^depth parts.

The excess-distance diagnostic

    Delta = mean_i [ mean_j ||X'_ij - q_i||_1 - mean_j ||X_ij - q_i||_1 ]

compares ANNS neighbors X' against exact neighbors X.  Inside the
diagnostic both searches select by l1 (the norm the formula measures),
which makes Delta >= 0 hold for every realization, not just on average.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset
from .errors import InvalidArgument


@dataclass(frozen=True)
class RbspParams:
    depth: int = 5
    queries_per_part: int = 8
    ratio_low: float = 0.45
    ratio_high: float = 0.55
    r_edge: float = 5.0
    min_part: int = 64
    tight_rects: bool = True  # False: children split the parent rectangle instead

    def __post_init__(self):
        if not (0.0 < self.ratio_low <= self.ratio_high < 1.0):
            raise InvalidArgument("need 0 < ratio_low <= ratio_high < 1")
        if self.depth < 0:
            raise InvalidArgument("depth must be >= 0")
        if self.r_edge <= 1.0:
            raise InvalidArgument("r_edge must exceed 1")
        if self.min_part < 1:
            raise InvalidArgument("min_part must be >= 1")
        if self.queries_per_part < 1:
            raise InvalidArgument("queries_per_part must be >= 1")


@dataclass(frozen=True)
class RbspPart:
    """Member indices plus the bounding rectangle (rows: per-axis min, max)."""

    indices: np.ndarray
    rect: np.ndarray  # (2, d_x)

    @property
    def size(self) -> int:
        return self.indices.size

    def contains(self, query: np.ndarray) -> bool:
        return bool(np.all(query >= self.rect[0]) and np.all(query <= self.rect[1]))

    def volume(self) -> float:
        return float(np.prod(self.rect[1] - self.rect[0]))


def _distances(xs: np.ndarray, query: np.ndarray, metric: str) -> np.ndarray:
    diff = np.abs(xs - query[None, :])
    if metric == "max":
        return diff.max(axis=1)
    if metric == "l1":
        return diff.sum(axis=1)
    raise InvalidArgument(f"unknown metric {metric!r} (use 'max' or 'l1')")


def _select_k(dists: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Positions of the k smallest distances, k-th ties broken uniformly."""
    n = dists.size
    if k == n:
        return np.arange(n)
    part = np.argpartition(dists, k - 1)[:k]
    kth = dists[part].max()
    strict = np.flatnonzero(dists < kth)
    tied = np.flatnonzero(dists == kth)
    slots = k - strict.size
    if tied.size > slots:
        tied = rng.choice(tied, size=slots, replace=False)
    return np.concatenate([strict, tied])


def exact_knn(data: Dataset, query: np.ndarray, k: int,
              rng: np.random.Generator, metric: str = "max") -> np.ndarray:
    """Indices of the k nearest samples to ``query``."""
    if not 1 <= k <= data.m:
        raise InvalidArgument(f"k must lie in [1, {data.m}], got {k}")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.size != data.d_x:
        raise InvalidArgument(f"query has dimension {q.size}, expected {data.d_x}")
    return _select_k(_distances(data.xs, q, metric), k, rng)


def _tight_rect(xs: np.ndarray, idx: np.ndarray) -> np.ndarray:
    pts = xs[idx]
    return np.stack([pts.min(axis=0), pts.max(axis=0)])


def _slice_lists(sorted_lists, rect, xs, params: RbspParams, rng, n_total):
    """One bisection of a part given its per-axis sorted member lists."""
    n = sorted_lists[0].size
    d = len(sorted_lists)
    axis = int(rng.integers(d))
    edges = rect[1] - rect[0]
    emin, emax = edges.min(), edges.max()
    if emin <= 0.0:
        ratio = np.inf if emax > 0.0 else 1.0
    else:
        ratio = emax / emin
    if ratio > params.r_edge:
        axis = int(np.argmax(edges))
    p = rng.uniform(params.ratio_low, params.ratio_high)
    cut = min(max(int(np.floor(p * n)), 1), n - 1)
    left_axis = sorted_lists[axis][:cut]
    right_axis = sorted_lists[axis][cut:]
    in_left = np.zeros(n_total, dtype=bool)
    in_left[left_axis] = True
    left_lists, right_lists = [], []
    for a in range(d):
        if a == axis:
            left_lists.append(left_axis)
            right_lists.append(right_axis)
        else:
            lst = sorted_lists[a]
            mask = in_left[lst]
            left_lists.append(lst[mask])
            right_lists.append(lst[~mask])
    if params.tight_rects:
        rect_l = _tight_rect(xs, left_axis)
        rect_r = _tight_rect(xs, right_axis)
    else:
        # Split the parent rectangle at the gap midpoint on the cut axis.
        mid = 0.5 * (xs[left_axis, axis].max() + xs[right_axis, axis].min())
        rect_l, rect_r = rect.copy(), rect.copy()
        rect_l[1, axis] = mid
        rect_r[0, axis] = mid
    return (left_lists, rect_l), (right_lists, rect_r)


def _part_sorted_lists(part: RbspPart, data: Dataset):
    mask = np.zeros(data.m, dtype=bool)
    mask[part.indices] = True
    return [data.sorted_idx[a][mask[data.sorted_idx[a]]] for a in range(data.d_x)]


def rbsp_slice(part: RbspPart, data: Dataset, params: RbspParams,
               rng: np.random.Generator) -> tuple[RbspPart, RbspPart]:
    """Bisect one part into two, recomputing bounding rectangles."""
    if part.size < 2:
        raise InvalidArgument("cannot slice a part with fewer than 2 members")
    lists = _part_sorted_lists(part, data)
    (ll, rl), (rr_lists, rr_rect) = _slice_lists(lists, part.rect, data.xs, params, rng, data.m)
    return (RbspPart(indices=ll[0], rect=rl),
            RbspPart(indices=rr_lists[0], rect=rr_rect))


def _can_slice(n: int, params: RbspParams) -> bool:
    if n < 2:
        return False
    lo_cut = min(max(int(np.floor(params.ratio_low * n)), 1), n - 1)
    hi_cut = min(max(int(np.floor(params.ratio_high * n)), 1), n - 1)
    return min(lo_cut, n - hi_cut) >= params.min_part


def rbsp_partition(data: Dataset, params: RbspParams,
                   rng: np.random.Generator) -> list[RbspPart]:
    """Repeatedly slice the dataset ``depth`` times (with early stops)."""
    if data.m < params.min_part:
        raise InvalidArgument(
            f"dataset has {data.m} samples, below min_part={params.min_part}")
    lists = [data.sorted_idx[a] for a in range(data.d_x)]
    state = [(lists, _tight_rect(data.xs, lists[0]))]
    for _ in range(params.depth):
        nxt = []
        for lst, rect in state:
            if _can_slice(lst[0].size, params):
                left, right = _slice_lists(lst, rect, data.xs, params, rng, data.m)
                nxt.append(left)
                nxt.append(right)
            else:
                nxt.append((lst, rect))
        state = nxt
    return [RbspPart(indices=lst[0], rect=rect) for lst, rect in state]


def route_query(parts: list[RbspPart], query: np.ndarray) -> int:
    """Index of the part serving ``query``: smallest containing rectangle,
    else nearest rectangle in sup-norm."""
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    containing = [i for i, p in enumerate(parts) if p.contains(q)]
    if containing:
        vols = np.array([parts[i].volume() for i in containing])
        return containing[int(np.argmin(vols))]
    dists = np.array([
        np.maximum(np.maximum(p.rect[0] - q, q - p.rect[1]), 0.0).max()
        for p in parts
    ])
    return int(np.argmin(dists))


def anns_knn(parts: list[RbspPart], data: Dataset, query: np.ndarray, k: int,
             rng: np.random.Generator, metric: str = "max") -> np.ndarray:
    """Exact k-NN restricted to the part that serves the query."""
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.size != data.d_x:
        raise InvalidArgument(f"query has dimension {q.size}, expected {data.d_x}")
    part = parts[route_query(parts, q)]
    if part.size < k:
        raise InvalidArgument(
            f"routed part holds {part.size} members, fewer than k={k}")
    local = _select_k(_distances(data.xs[part.indices], q, metric), k, rng)
    return part.indices[local]


def _mean_sorted_dist(xs: np.ndarray, idx: np.ndarray, q: np.ndarray) -> float:
    # Summing in sorted order makes identical candidate multisets produce
    # bitwise-identical means (Delta == 0 exactly at depth 0).
    d = np.sort(np.abs(xs[idx] - q[None, :]).sum(axis=1))
    return float(d.sum() / d.size)


def anns_delta(data: Dataset, queries: np.ndarray, k: int, params: RbspParams,
               rng: np.random.Generator) -> float:
    """Mean excess l1 neighbor distance of ANNS-RBSP over exact search."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if queries.shape[0] < 1:
        raise InvalidArgument("need at least one query")
    parts = rbsp_partition(data, params, rng)
    total = 0.0
    for q in queries:
        approx = anns_knn(parts, data, q, k, rng, metric="l1")
        exact = exact_knn(data, q, k, rng, metric="l1")
        total += _mean_sorted_dist(data.xs, approx, q) - _mean_sorted_dist(data.xs, exact, q)
    return total / queries.shape[0]
