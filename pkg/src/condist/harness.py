"""Experiment drivers: rate curves, variance checks, error profiles,
projected-error histograms, partition benchmarks, and the worst-case
bound arithmetic.

Every driver is deterministic given its master seed: per-task random
streams come from :func:`condist.rng.substream`, datasets are keyed by
their own seeds, and result rows are emitted in a fixed order, so CSV
outputs are byte-identical across reruns.

Errors against ground truth are one-dimensional W1 distances computed
by trapezoidal integration of |F - G| between CDFs (:func:`ot.cdf_w1`);
empirical measures enter as step CDFs and the integration window is the
kernel's padded target range, widened to cover any stray atoms.
"""

from __future__ import annotations

import json
import sys
import zlib
from dataclasses import dataclass

import numpy as np

from . import __version__
from .core import Dataset, DiscreteMeasure, EvalMeasure
from .errors import InvalidArgument
from .estimators import KnnScheme, RBoxScheme, knn_estimate, optimal_k, optimal_r, rbox_estimate
from .nns import RbspParams, anns_delta, anns_knn, exact_knn, rbsp_partition
from .ot import cdf_w1, step_cdf
from .rng import substream
from .synthetic import Model3, sample_dataset, true_cdf_1d

CDF_RESOLUTION = 4001
GRID_POINTS_1D = 201
MC_POINTS_3D = 2000


# ---------------------------------------------------------------------------
# W1 against analytic truth


def _window(kernel, measure: DiscreteMeasure | None, pad: float = 1e-6):
    lo, hi = kernel.target_bounds()
    if measure is not None and not measure.is_lebesgue:
        lo = min(lo, float(measure.points.min()) - pad)
        hi = max(hi, float(measure.points.max()) + pad)
    elif measure is not None and measure.is_lebesgue:
        lo, hi = min(lo, 0.0), max(hi, 1.0)
    return lo, hi


def w1_vs_truth(kernel, x: float, measure: DiscreteMeasure,
                resolution: int = CDF_RESOLUTION) -> float:
    """W1 between the analytic conditional law at x and a discrete measure."""
    lo, hi = _window(kernel, measure)
    return cdf_w1(lambda t: true_cdf_1d(kernel, x, t), measure.cdf(), lo, hi, resolution)


# ---------------------------------------------------------------------------
# rate curves


def _mean_w1(kernel, data: Dataset, scheme, eval_measure: EvalMeasure,
             rng, resolution: int) -> float:
    """Eval-averaged W1 error of a raw scheme.

    1-d target kernels are scored against the analytic conditional CDF;
    the 3-d kernel is scored through random unit-l1 projections, one per
    evaluation point.  Evaluation points live on [0,1]^d and are mapped
    affinely onto the kernel's feature box.
    """
    lo, hi = kernel.feature_low, kernel.feature_high
    queries = lo + (hi - lo) * eval_measure.points
    errs = np.empty(eval_measure.n)
    for i, x in enumerate(queries):
        if isinstance(scheme, KnnScheme):
            measure = knn_estimate(data, x, scheme, rng)
        else:
            measure = rbox_estimate(data, x, scheme)
        if isinstance(kernel, Model3):
            a_vec = random_l1_direction(rng)
            errs[i] = projected_w1(kernel, x, a_vec, measure.points, resolution)
        else:
            errs[i] = w1_vs_truth(kernel, float(x[0]), measure, resolution)
    return float(errs.mean())


def mean_error_curve(kernel, scheme: str, ms, seeds, eval_measure: EvalMeasure,
                     *, scale_c: float = 1.0, k_override: int | None = None,
                     r_override: float | None = None,
                     resolution: int = CDF_RESOLUTION) -> list[dict]:
    """Rows (M, seed, mean_w) of the eval-averaged W1 error per cell."""
    if scheme not in ("knn", "rbox"):
        raise InvalidArgument(f"unknown scheme {scheme!r}")
    rows = []
    for m in ms:
        for seed in seeds:
            data = sample_dataset(kernel, m, seed)
            if scheme == "knn":
                k = k_override if k_override is not None else optimal_k(
                    m, kernel.d_x, kernel.d_y, scale_c)
                sch = KnnScheme(k=k)
            else:
                r = r_override if r_override is not None else optimal_r(
                    m, kernel.d_x, kernel.d_y, scale_c)
                sch = RBoxScheme(r=r)
            rng = substream(seed, m, 1)
            rows.append({"M": m, "seed": seed,
                         "mean_w": _mean_w1(kernel, data, sch, eval_measure, rng, resolution)})
    return rows


def fit_loglog_slope(rows) -> tuple[float, float, float]:
    """Least squares of log(seed-mean error) on log(M): (slope, intercept, R^2)."""
    by_m: dict[int, list[float]] = {}
    for row in rows:
        by_m.setdefault(int(row["M"]), []).append(float(row["mean_w"]))
    if len(by_m) < 3:
        raise InvalidArgument("need at least 3 distinct M values")
    ms = np.array(sorted(by_m))
    ys = np.log(np.array([np.mean(by_m[m]) for m in ms]))
    xs = np.log(ms.astype(np.float64))
    if np.ptp(xs) == 0.0:
        raise InvalidArgument("degenerate spread in M")
    a = np.stack([xs, np.ones_like(xs)], axis=1)
    coef, *_ = np.linalg.lstsq(a, ys, rcond=None)
    slope, intercept = float(coef[0]), float(coef[1])
    resid = ys - a @ coef
    ss_tot = float(((ys - ys.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float((resid ** 2).sum()) / ss_tot
    return slope, intercept, r2


# ---------------------------------------------------------------------------
# variance bounds


@dataclass(frozen=True)
class VarianceResult:
    samples: np.ndarray
    sample_variance: float
    bound: float


def variance_bound(scheme: str, m: int, k: int | None, d_x: int,
                   c_lower: float = 1.0, c_upper: float = 1.0) -> float:
    """Variance bound: 1/k for the k-NN scheme, 4^{d_X+1} C^2 / (c^2 (M+1))
    for the r-box scheme."""
    if scheme == "knn":
        if k is None or k < 1:
            raise InvalidArgument("knn variance bound needs k >= 1")
        return 1.0 / k
    if scheme == "rbox":
        return (4.0 ** (d_x + 1)) * c_upper ** 2 / (c_lower ** 2 * (m + 1))
    raise InvalidArgument(f"unknown scheme {scheme!r}")


def variance_check(kernel, scheme: str, m: int, param, repeats: int,
                   eval_measure: EvalMeasure, *, master_seed: int = 0,
                   seeds=None, resolution: int = CDF_RESOLUTION) -> VarianceResult:
    """Sample variance of the integrated error across repeated datasets."""
    if repeats < 50:
        raise InvalidArgument("variance check needs at least 50 repeats")
    if seeds is None:
        seeds = [int(substream(master_seed, 2, i).integers(2 ** 63)) for i in range(repeats)]
    if len(seeds) != repeats:
        raise InvalidArgument("seed list length must equal repeats")
    samples = np.empty(repeats)
    for i, seed in enumerate(seeds):
        data = sample_dataset(kernel, m, seed)
        sch = KnnScheme(k=int(param)) if scheme == "knn" else RBoxScheme(r=float(param))
        rng = substream(seed, m, 3)
        samples[i] = _mean_w1(kernel, data, sch, eval_measure, rng, resolution)
    k = int(param) if scheme == "knn" else None
    return VarianceResult(samples=samples,
                          sample_variance=float(np.var(samples, ddof=1)),
                          bound=variance_bound(scheme, m, k, kernel.d_x))


# ---------------------------------------------------------------------------
# per-x error profiles


def error_vs_x(kernel, estimators, x_grid, *, resolution: int = CDF_RESOLUTION) -> list[dict]:
    """Rows (x, estimator, w1) for named estimators over a 1-d grid.

    ``estimators`` maps name -> fn(x, rng) returning a DiscreteMeasure or
    a CDF callable (the latter covers the analytic truth and networks
    evaluated through their atom step CDFs upstream).
    """
    if kernel.d_x != 1:
        raise InvalidArgument("error profile is defined for 1-d kernels")
    rows = []
    for name, fn in estimators.items():
        # zlib.crc32 is a stable digest; Python's hash() is salted per process
        rng = substream(0, zlib.crc32(name.encode()), 5)
        for x in np.asarray(x_grid, dtype=np.float64).reshape(-1):
            got = fn(float(x), rng)
            if isinstance(got, DiscreteMeasure):
                w1 = w1_vs_truth(kernel, float(x), got, resolution)
            else:
                lo, hi = _window(kernel, None)
                w1 = cdf_w1(lambda t: true_cdf_1d(kernel, float(x), t), got, lo, hi, resolution)
            rows.append({"x": float(x), "estimator": name, "w1": w1})
    return rows


# ---------------------------------------------------------------------------
# projected errors (model3)


def random_l1_direction(rng: np.random.Generator, d: int = 3) -> np.ndarray:
    vec = rng.standard_normal(d)
    return vec / np.abs(vec).sum()


def projected_w1(kernel3: Model3, x: np.ndarray, a_vec: np.ndarray,
                 atoms: np.ndarray, resolution: int = CDF_RESOLUTION) -> float:
    """W1 between the projected atoms and the analytic projected law."""
    proj = np.asarray(atoms) @ np.asarray(a_vec)
    lo, hi = np.inf, -np.inf
    for mat, v in ((kernel3.a, kernel3.v), (kernel3.a_prime, kernel3.v_prime)):
        mean = float(a_vec @ np.cos(mat @ x))
        scale = 0.1 * float(np.linalg.norm(np.cos(v @ x).T @ a_vec))
        lo = min(lo, mean - 8.0 * scale - 1e-3)
        hi = max(hi, mean + 8.0 * scale + 1e-3)
    lo = min(lo, float(proj.min()) - 1e-6)
    hi = max(hi, float(proj.max()) + 1e-6)
    return cdf_w1(lambda t: kernel3.projected_cdf(x, a_vec, t), step_cdf(proj),
                  lo, hi, resolution)


def projected_error_histogram(kernel3: Model3, estimators, n_queries: int,
                              bins: int, rng: np.random.Generator, *,
                              bin_range: tuple[float, float] = (0.0, 0.1),
                              resolution: int = 2001):
    """Binned projected W1 errors for model3 estimators.

    Returns (rows, raw): rows are (estimator, bin_index, bin_lo, bin_hi,
    count) with overflow folded into the rightmost bin; raw holds the
    per-query errors.  All estimators see the same query points and
    projection vectors.
    """
    if not isinstance(kernel3, Model3):
        raise InvalidArgument("projected histogram is defined for model3")
    queries = rng.uniform(-0.5, 0.5, size=(n_queries, 3))
    vecs = np.array([random_l1_direction(rng) for _ in range(n_queries)])
    raw = []
    errs = {name: np.empty(n_queries) for name in estimators}
    for i in range(n_queries):
        for name, fn in estimators.items():
            measure = fn(queries[i], rng)
            errs[name][i] = projected_w1(kernel3, queries[i], vecs[i],
                                         measure.points, resolution)
            raw.append({"estimator": name, "query": i, "w1": float(errs[name][i])})
    edges = np.linspace(bin_range[0], bin_range[1], bins + 1)
    rows = []
    for name in estimators:
        counts, _ = np.histogram(errs[name], bins=edges)
        counts[-1] += int((errs[name] > bin_range[1]).sum())
        for b in range(bins):
            rows.append({"estimator": name, "bin_index": b,
                         "bin_lo": float(edges[b]), "bin_hi": float(edges[b + 1]),
                         "count": int(counts[b])})
    return rows, raw


# ---------------------------------------------------------------------------
# worst-case bound pieces


def sup_w_bound(int_err: float, lip_true: float, lip_net: float, d_x: int) -> float:
    """(d+1)^{1/(d+1)} (L + L_net)^{d/(d+1)} int_err^{1/(d+1)}."""
    if min(int_err, lip_true, lip_net) < 0.0 or d_x < 1:
        raise InvalidArgument("bound inputs must be nonnegative, d_x >= 1")
    d = float(d_x)
    return ((d + 1.0) ** (1.0 / (d + 1.0))
            * (lip_true + lip_net) ** (d / (d + 1.0))
            * int_err ** (1.0 / (d + 1.0)))


def query_coverage_w1(points, resolution: int = CDF_RESOLUTION) -> float:
    """W1 between Uniform[0,1] and the empirical measure of query points."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1)
    if pts.size == 0:
        raise InvalidArgument("need at least one query point")
    return cdf_w1(lambda t: np.clip(np.asarray(t, dtype=np.float64), 0.0, 1.0),
                  step_cdf(pts), 0.0, 1.0, resolution)


# ---------------------------------------------------------------------------
# partition benchmark


def ann_benchmark(m: int, d_x: int, k: int, depth: int, seed: int, *,
                  n_sims: int = 100, n_batch: int = 256,
                  params: RbspParams | None = None):
    """Delta statistics and wall times for one uniform-feature dataset.

    Returns (summary_row, sample_rows): the summary carries mean/median/
    p95 of the n_sims Delta draws plus wall-clock milliseconds of one
    exact and one partition-backed search pass.
    """
    import time

    from .core import dataset_from_arrays

    rng = substream(seed, m, d_x)
    xs = rng.uniform(0.0, 1.0, size=(m, d_x))
    data = dataset_from_arrays(xs, np.zeros((m, 1)), seed=seed)
    if params is None:
        params = RbspParams(depth=depth, min_part=max(k, 64))
    else:
        params = RbspParams(depth=depth, queries_per_part=params.queries_per_part,
                            ratio_low=params.ratio_low, ratio_high=params.ratio_high,
                            r_edge=params.r_edge, min_part=max(params.min_part, k),
                            tight_rects=params.tight_rects)
    deltas = np.empty(n_sims)
    for s in range(n_sims):
        sim_rng = substream(seed, m, d_x, s)
        queries = sim_rng.uniform(0.0, 1.0, size=(n_batch, d_x))
        deltas[s] = anns_delta(data, queries, k, params, sim_rng)
    timing_rng = substream(seed, m, d_x, n_sims)
    queries = timing_rng.uniform(0.0, 1.0, size=(n_batch, d_x))
    t0 = time.perf_counter()
    for q in queries:
        exact_knn(data, q, k, timing_rng, metric="l1")
    t1 = time.perf_counter()
    parts = rbsp_partition(data, params, timing_rng)
    for q in queries:
        anns_knn(parts, data, q, k, timing_rng, metric="l1")
    t2 = time.perf_counter()
    summary = {
        "M": m, "d_x": d_x, "k": k, "depth": depth, "seed": seed,
        "delta_mean": float(deltas.mean()),
        "delta_p50": float(np.quantile(deltas, 0.5)),
        "delta_p95": float(np.quantile(deltas, 0.95)),
        "wall_ms_exact": (t1 - t0) * 1e3,
        "wall_ms_anns": (t2 - t1) * 1e3,
    }
    samples = [{"M": m, "d_x": d_x, "k": k, "depth": depth, "seed": seed,
                "sim": s, "delta": float(deltas[s])} for s in range(n_sims)]
    return summary, samples


# ---------------------------------------------------------------------------
# delimited output


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def write_csv(path, header, rows) -> None:
    """Write rows (dicts keyed by header) with round-trip float formatting."""
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(row[col]) for col in header))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def run_manifest(command: str, config: dict) -> dict:
    import scipy

    return {
        "command": command,
        "config": config,
        "versions": {
            "condist": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": sys.version.split()[0],
        },
    }


def write_manifest(path, command: str, config: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(run_manifest(command, config), fh, sort_keys=True, indent=2)
        fh.write("\n")
