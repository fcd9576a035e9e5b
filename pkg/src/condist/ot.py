"""Wasserstein-1 machinery on discrete measures.

Ground metric is l1 throughout.  Between two uniformly weighted atom
sets the W1 distance is the optimal transport cost

    min_T  sum_ij T_ij C_ij,   C_ij = ||y~_i - y_j||_1,
    s.t.   row sums 1/k,  column sums 1/n,  T >= 0,

and three routes to it are provided, each checking the others:

* ``sinkhorn_plan``       entropic approximation with the rescaled
                          kernel  K~ = exp(-C / (c~ eps)),
                          c~ = min_i max_j C_ij, and alternating scaling
                          updates from uniform initial potentials.  A
                          fixed iteration budget is used; the achieved
                          marginal residual is reported, never iterated
                          on.  Underflow surfaces as NumericFailure with
                          the iteration index rather than being patched.
* ``exact_assignment_w1`` exact optimum for k = n via an O(k^3)
                          assignment solver (an optimal plan is then a
                          permutation divided by k).
* ``sorted_w1_1d``        1-d closed form: sort both samples, match in
                          order.

``sparsify_plan`` is the hard reduction used late in training: the
row-wise argmax entries set to 1/k give T^, the column-wise ones give
T_check, and the result is  gamma T^ + (1-gamma) T_check  (ties to the
lowest index).  ``atom_gradient`` differentiates the transport cost in
the atom positions with the plan held fixed:

    grad_j = sum_i T_ij sign(y_j - y~_i)        (entrywise, sign(0)=0).

``cdf_w1`` evaluates W1 between one-dimensional laws as the trapezoidal
approximation of  integral |F - G|.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import InvalidArgument, NumericFailure

_CTILDE_FLOOR = 1e-12
# Largest exponent magnitude the rescaled kernel may reach.  exp(-708)
# underflows in float64 and the scaling update then overflows; the c~
# floor below keeps every kernel entry representable, which is the whole
# point of the rescaling.  It only engages when one source atom is close
# to the entire target cloud while another is far (collapse degenerates).
_LOG_CAP = 700.0


@dataclass(frozen=True)
class SinkhornConfig:
    """Entropic regularizer, iteration budget and the c~ normalization flag."""

    eps: float
    n_iter: int
    normalize: bool = True

    def __post_init__(self):
        if self.eps <= 0.0:
            raise InvalidArgument("eps must be positive")
        if self.n_iter < 1:
            raise InvalidArgument("n_iter must be >= 1")


@dataclass(frozen=True)
class SinkhornResult:
    plan: np.ndarray
    cost: float
    marginal_residual: float


def _atoms_2d(points, name: str) -> np.ndarray:
    a = np.asarray(points, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if a.ndim != 2 or a.shape[0] < 1:
        raise InvalidArgument(f"{name} must be a nonempty (n, d) array")
    return a


def l1_cost_matrix(src, dst) -> np.ndarray:
    """Entrywise l1 distances, shape (len(src), len(dst))."""
    s = _atoms_2d(src, "src")
    d = _atoms_2d(dst, "dst")
    if s.shape[1] != d.shape[1]:
        raise InvalidArgument(
            f"dimension mismatch: src has d={s.shape[1]}, dst has d={d.shape[1]}")
    return np.abs(s[:, None, :] - d[None, :, :]).sum(axis=2)


def sinkhorn_batched(c: np.ndarray, cfg: SinkhornConfig):
    """Run Sinkhorn on a stack of cost matrices, shape (B, k, n).

    Returns (plans, costs, residuals).  All matrices share the iteration
    budget; each gets its own c~ rescaling.
    """
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 3 or c.shape[1] < 1 or c.shape[2] < 1:
        raise InvalidArgument("cost stack must have shape (B, k, n) with k, n >= 1")
    b, k, n = c.shape
    if cfg.normalize:
        ctilde = c.max(axis=2).min(axis=1)
        ctilde = np.maximum.reduce([ctilde,
                                    c.max(axis=(1, 2)) / (_LOG_CAP * cfg.eps),
                                    np.full(b, _CTILDE_FLOOR)])
    else:
        ctilde = np.ones(b)
    kern = np.exp(-c / (ctilde[:, None, None] * cfg.eps))
    u0 = np.full((b, k), 1.0 / k)
    v0 = np.full((b, n), 1.0 / n)
    v = v0.copy()
    for it in range(1, cfg.n_iter + 1):
        u = u0 / np.einsum("bkn,bn->bk", kern, v)
        if not np.isfinite(u).all():
            raise NumericFailure("sinkhorn scaling diverged (zero kernel row)",
                                 iteration=it, component="sinkhorn")
        v = v0 / np.einsum("bkn,bk->bn", kern, u)
        if not np.isfinite(v).all():
            raise NumericFailure("sinkhorn scaling diverged (zero kernel column)",
                                 iteration=it, component="sinkhorn")
    plans = u[:, :, None] * kern * v[:, None, :]
    costs = np.einsum("bkn,bkn->b", plans, c)
    res_row = np.abs(plans.sum(axis=2) - 1.0 / k).max(axis=1)
    res_col = np.abs(plans.sum(axis=1) - 1.0 / n).max(axis=1)
    return plans, costs, np.maximum(res_row, res_col)


def sinkhorn_plan(c: np.ndarray, cfg: SinkhornConfig) -> SinkhornResult:
    """Approximate transport plan and cost for a single cost matrix."""
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.size == 0:
        raise InvalidArgument("cost matrix must be a nonempty 2-d array")
    plans, costs, residuals = sinkhorn_batched(c[None], cfg)
    return SinkhornResult(plan=plans[0], cost=float(costs[0]),
                          marginal_residual=float(residuals[0]))


def sparsify_plan(plan: np.ndarray, gamma: float) -> np.ndarray:
    """Mix of the row-argmax and column-argmax hard reductions of a plan."""
    t = np.asarray(plan, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] != t.shape[1]:
        raise InvalidArgument(f"sparsification needs a square plan, got {t.shape}")
    if not 0.0 <= gamma <= 1.0:
        raise InvalidArgument("gamma must lie in [0, 1]")
    k = t.shape[0]
    rows = np.zeros_like(t)
    rows[np.arange(k), t.argmax(axis=1)] = 1.0 / k
    cols = np.zeros_like(t)
    cols[t.argmax(axis=0), np.arange(k)] = 1.0 / k
    return gamma * rows + (1.0 - gamma) * cols


def sparsify_batched(plans: np.ndarray, gamma: float) -> np.ndarray:
    """Vectorized :func:`sparsify_plan` over a (B, k, k) stack."""
    t = np.asarray(plans, dtype=np.float64)
    if t.ndim != 3 or t.shape[1] != t.shape[2]:
        raise InvalidArgument(f"sparsification needs square plans, got {t.shape}")
    if not 0.0 <= gamma <= 1.0:
        raise InvalidArgument("gamma must lie in [0, 1]")
    b, k, _ = t.shape
    bi = np.arange(b)[:, None]
    ki = np.arange(k)[None, :]
    rows = np.zeros_like(t)
    rows[bi, ki, t.argmax(axis=2)] = 1.0 / k
    cols = np.zeros_like(t)
    cols[bi, t.argmax(axis=1), ki] = 1.0 / k
    return gamma * rows + (1.0 - gamma) * cols


def exact_assignment_w1(src, dst):
    """Exact W1 between two equal-size uniform atom sets.

    Returns (cost, permutation): permutation[i] is the dst index matched
    to src atom i; cost is the mean l1 length of the matched pairs.
    """
    s = _atoms_2d(src, "src")
    d = _atoms_2d(dst, "dst")
    if s.shape != d.shape:
        raise InvalidArgument(f"size mismatch: src {s.shape} vs dst {d.shape}")
    c = l1_cost_matrix(s, d)
    row, col = linear_sum_assignment(c)
    perm = np.empty(s.shape[0], dtype=np.int64)
    perm[row] = col
    return float(c[row, col].mean()), perm


def sorted_w1_1d(src, dst) -> float:
    """1-d closed form: mean absolute gap between order statistics."""
    s = np.asarray(src, dtype=np.float64).reshape(-1)
    d = np.asarray(dst, dtype=np.float64).reshape(-1)
    if s.size != d.size or s.size == 0:
        raise InvalidArgument(f"size mismatch: {s.size} vs {d.size}")
    return float(np.abs(np.sort(s) - np.sort(d)).mean())


def cdf_w1(f, g, lo: float, hi: float, resolution: int = 4001) -> float:
    """Trapezoidal approximation of  integral_lo^hi |F(t) - G(t)| dt.

    Both CDFs must be (numerically) supported inside [lo, hi]; empirical
    measures enter as step CDFs, e.g. via :func:`step_cdf`.
    """
    if hi <= lo:
        raise InvalidArgument("need hi > lo")
    if resolution < 2:
        raise InvalidArgument("resolution must be >= 2")
    grid = np.linspace(lo, hi, resolution)
    diff = np.abs(np.asarray(f(grid), dtype=np.float64)
                  - np.asarray(g(grid), dtype=np.float64))
    h = (hi - lo) / (resolution - 1)
    return float(h * (diff.sum() - 0.5 * (diff[0] + diff[-1])))


def step_cdf(atoms):
    """Right-continuous empirical CDF of a 1-d sample, as a callable."""
    a = np.sort(np.asarray(atoms, dtype=np.float64).reshape(-1))
    if a.size == 0:
        raise InvalidArgument("empty atom list has no CDF")
    n = a.size

    def f(t):
        return np.searchsorted(a, np.asarray(t, dtype=np.float64), side="right") / n

    return f


def atom_gradient(plan: np.ndarray, src, dst) -> np.ndarray:
    """Gradient of the transport cost in the dst atoms, plan held fixed.

    grad[j] = sum_i plan[i, j] * sign(dst[j] - src[i]), entrywise, with
    the subgradient choice sign(0) = 0.
    """
    t = np.asarray(plan, dtype=np.float64)
    s = _atoms_2d(src, "src")
    d = _atoms_2d(dst, "dst")
    if s.shape[1] != d.shape[1]:
        raise InvalidArgument("src and dst dimension mismatch")
    if t.shape != (s.shape[0], d.shape[0]):
        raise InvalidArgument(
            f"plan shape {t.shape} does not match atoms ({s.shape[0]}, {d.shape[0]})")
    return np.einsum("ij,ijd->jd", t, np.sign(d[None, :, :] - s[:, None, :]))
