"""Command-line experiment driver.

Subcommands: gen, estimate, rates, variance, error-vs-x, project-hist,
ann-bench, train, eval.  Every subcommand reads an optional flat
key-value config file (YAML mapping, keys listed in the README) via
``--config``; explicit flags override config values.  Each run writes
its outputs plus a JSON manifest (config echo, seeds, versions) next to
the primary output.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import harness, neural
from .core import EvalMeasure, load_dataset, save_dataset
from .errors import CondistError, InvalidArgument
from .estimators import KnnScheme, RBoxScheme, knn_estimate, optimal_k, optimal_r, rbox_estimate
from .harness import write_csv, write_manifest
from .neural import (TrainConfig, reference_schedules, avg_abs_derivative,
                     empirical_lipschitz, lipnet_forward_batch, load_checkpoint,
                     save_checkpoint, stdnet_forward_batch, train)
from .nns import RbspParams
from .ot import step_cdf
from .rng import substream
from .synthetic import Model3, kernel_by_name, sample_dataset


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as fh:
        cfg = yaml.safe_load(fh) or {}
    if not isinstance(cfg, dict):
        raise InvalidArgument("config file must be a flat key-value mapping")
    return cfg


class _Resolver:
    """Flag value if given, else config value, else default."""

    def __init__(self, args: argparse.Namespace, config: dict):
        self.args = args
        self.config = config
        self.effective: dict = {}

    def get(self, key: str, default=None, cast=None):
        val = getattr(self.args, key.replace("-", "_"), None)
        if val is None:
            val = self.config.get(key, default)
        if val is not None and cast is not None:
            val = cast(val)
        self.effective[key] = val
        return val


def _kernel_from(res: _Resolver):
    return kernel_by_name(
        res.get("kernel", "intro_uniform"),
        model2_threshold=res.get("model2-threshold", None,
                                 cast=lambda v: None if v is None else float(v)),
        model3_seed=res.get("model3-seed", None,
                            cast=lambda v: None if v is None else int(v)),
    )


def _parse_int_list(text: str) -> list[int]:
    return [int(tok) for tok in str(text).replace(" ", "").split(",") if tok]


def _parse_floats(text: str) -> np.ndarray:
    return np.array([float(tok) for tok in str(text).replace(" ", "").split(",") if tok])


def _manifest_for(out_path: str, command: str, res: _Resolver) -> None:
    write_manifest(Path(out_path).with_suffix(Path(out_path).suffix + ".manifest.json"),
                   command, res.effective)


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen(res: _Resolver) -> int:
    kernel = _kernel_from(res)
    m = res.get("m", 1000, int)
    seed = res.get("seed", 0, int)
    out = res.get("out", "dataset.bin")
    data = sample_dataset(kernel, m, seed)
    save_dataset(data, out)
    csv_out = res.get("csv", None)
    if csv_out:
        header = [f"x{i}" for i in range(data.d_x)] + [f"y{i}" for i in range(data.d_y)]
        rows = [dict(zip(header, list(data.xs[i]) + list(data.ys[i])))
                for i in range(data.m)]
        write_csv(csv_out, header, rows)
    _manifest_for(out, "gen", res)
    print(f"wrote {out} ({m} samples, d_x={data.d_x}, d_y={data.d_y})")
    return 0


def _cmd_estimate(res: _Resolver) -> int:
    data = load_dataset(res.get("data", None))
    x = _parse_floats(res.get("x", "0.5"))
    scheme_name = res.get("scheme", "knn")
    rng = substream(res.get("seed", 0, int), 11)
    if scheme_name == "knn":
        measure = knn_estimate(data, x, KnnScheme(k=res.get("k", 10, int)), rng)
    elif scheme_name == "rbox":
        measure = rbox_estimate(data, x, RBoxScheme(r=res.get("r", 0.1, float)))
    else:
        raise InvalidArgument(f"unknown scheme {scheme_name!r}")
    fmt = res.get("format", "csv")
    out = res.get("out", None)
    if fmt == "json":
        payload = {"kind": "lebesgue-box" if measure.is_lebesgue else "atoms",
                   "d_y": measure.d_y,
                   "points": [] if measure.is_lebesgue else measure.points.tolist()}
        text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
        Path(out).write_text(text) if out else sys.stdout.write(text)
    else:
        header = ["kind", "atom_index"] + [f"y{i}" for i in range(measure.d_y)]
        if measure.is_lebesgue:
            rows = [dict({"kind": "lebesgue-box", "atom_index": -1},
                         **{f"y{i}": float("nan") for i in range(measure.d_y)})]
        else:
            rows = [dict({"kind": "atoms", "atom_index": j},
                         **{f"y{i}": measure.points[j, i] for i in range(measure.d_y)})
                    for j in range(measure.n_atoms)]
        if out:
            write_csv(out, header, rows)
        else:
            sys.stdout.write(",".join(header) + "\n")
            for row in rows:
                sys.stdout.write(",".join(harness._fmt(row[c]) for c in header) + "\n")
    if out:
        _manifest_for(out, "estimate", res)
    return 0


def _eval_measure_for(kernel, res: _Resolver) -> EvalMeasure:
    if kernel.d_x == 1:
        return EvalMeasure.grid(1, res.get("eval-points", harness.GRID_POINTS_1D, int))
    n = res.get("eval-points", harness.MC_POINTS_3D, int)
    return EvalMeasure.monte_carlo(kernel.d_x, n, substream(res.get("seed", 0, int), 50))


def _cmd_rates(res: _Resolver) -> int:
    kernel = _kernel_from(res)
    scheme = res.get("scheme", "knn")
    ms = _parse_int_list(res.get("m-list", "1024,2048,4096"))
    n_seeds = res.get("seeds", 10, int)
    seed0 = res.get("seed", 0, int)
    seeds = list(range(seed0, seed0 + n_seeds))
    eval_measure = _eval_measure_for(kernel, res)
    rows = harness.mean_error_curve(
        kernel, scheme, ms, seeds, eval_measure,
        scale_c=res.get("scale-c", 1.0, float),
        k_override=res.get("k", None, lambda v: None if v is None else int(v)),
        r_override=res.get("r", None, lambda v: None if v is None else float(v)))
    out = res.get("out", "rates.csv")
    write_csv(out, ["M", "seed", "mean_w"], rows)
    slope, intercept, r2 = harness.fit_loglog_slope(rows)
    summary = {"slope": slope, "intercept": intercept, "r_squared": r2}
    Path(out).with_suffix(".summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")
    _manifest_for(out, "rates", res)
    print(f"slope={slope:.4f} intercept={intercept:.4f} R2={r2:.4f}")
    return 0


def _cmd_variance(res: _Resolver) -> int:
    kernel = _kernel_from(res)
    scheme = res.get("scheme", "knn")
    m = res.get("m", 10000, int)
    param = res.get("k", None, lambda v: None if v is None else int(v)) if scheme == "knn" \
        else res.get("r", None, lambda v: None if v is None else float(v))
    if param is None:
        param = optimal_k(m, kernel.d_x, kernel.d_y) if scheme == "knn" \
            else optimal_r(m, kernel.d_x, kernel.d_y)
    repeats = res.get("repeats", 200, int)
    eval_measure = _eval_measure_for(kernel, res)
    result = harness.variance_check(kernel, scheme, m, param, repeats, eval_measure,
                                    master_seed=res.get("seed", 0, int))
    out = res.get("out", "variance.csv")
    rows = [{"M": m, "scheme": scheme, "param": param, "repeat": i, "int_w": v}
            for i, v in enumerate(result.samples)]
    write_csv(out, ["M", "scheme", "param", "repeat", "int_w"], rows)
    summary = {"sample_variance": result.sample_variance, "bound": result.bound,
               "within_bound": bool(result.sample_variance <= result.bound)}
    Path(out).with_suffix(".summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")
    _manifest_for(out, "variance", res)
    print(f"variance={result.sample_variance:.3e} bound={result.bound:.3e}")
    return 0


def _raw_estimators(res: _Resolver, data):
    """Parse --estimators 'knn:100,rbox:0.05' into measure factories."""
    spec = res.get("estimators", "knn:100")
    out = {}
    for tok in str(spec).split(","):
        tok = tok.strip()
        if not tok:
            continue
        name, _, arg = tok.partition(":")
        if name == "knn":
            sch = KnnScheme(k=int(arg))
            out[f"knn_{arg}"] = lambda x, rng, sch=sch: knn_estimate(
                data, np.atleast_1d(x), sch, rng)
        elif name == "rbox":
            sch = RBoxScheme(r=float(arg))
            out[f"rbox_{arg}"] = lambda x, rng, sch=sch: rbox_estimate(
                data, np.atleast_1d(x), sch)
        else:
            raise InvalidArgument(f"unknown estimator token {tok!r}")
    return out


def _checkpoint_estimator(path: str):
    params, _, _ = load_checkpoint(path)
    forward = lipnet_forward_batch if isinstance(params, neural.LipNetParams) \
        else stdnet_forward_batch

    def fn(x, rng):
        atoms, _ = forward(params, np.atleast_1d(x)[None, :] if np.ndim(x) else
                           np.array([[x]]))
        return step_cdf(atoms[0][:, 0])

    return params, fn


def _cmd_error_vs_x(res: _Resolver) -> int:
    kernel = _kernel_from(res)
    data_path = res.get("data", None)
    if data_path:
        data = load_dataset(data_path)
    else:
        data = sample_dataset(kernel, res.get("m", 10000, int), res.get("seed", 0, int))
    estimators = _raw_estimators(res, data)
    ckpt = res.get("checkpoint", None)
    if ckpt:
        _, fn = _checkpoint_estimator(ckpt)
        estimators["lipnet"] = fn
    grid = np.linspace(0.0, 1.0, res.get("grid", 101, int))
    rows = harness.error_vs_x(kernel, estimators, grid)
    out = res.get("out", "error_vs_x.csv")
    write_csv(out, ["x", "estimator", "w1"], rows)
    _manifest_for(out, "error-vs-x", res)
    print(f"wrote {out} ({len(rows)} rows)")
    return 0


def _cmd_project_hist(res: _Resolver) -> int:
    kernel = _kernel_from(res)
    if not isinstance(kernel, Model3):
        raise InvalidArgument("project-hist requires --kernel model3")
    m = res.get("m", 100000, int)
    seed = res.get("seed", 0, int)
    data = sample_dataset(kernel, m, seed)
    k = res.get("k", 300, int)
    estimators = {f"knn_{k}": lambda x, rng: knn_estimate(data, x, KnnScheme(k=k), rng)}
    ckpt = res.get("checkpoint", None)
    if ckpt:
        params, _, _ = load_checkpoint(ckpt)

        def net_fn(x, rng, params=params):
            atoms, _ = lipnet_forward_batch(params, np.asarray(x)[None, :])
            from .core import DiscreteMeasure
            return DiscreteMeasure.atoms(atoms[0])

        estimators["lipnet"] = net_fn
    rows, raw = harness.projected_error_histogram(
        kernel, estimators, res.get("n-queries", 1000, int),
        res.get("bins", 20, int), substream(seed, 17))
    out = res.get("out", "proj_hist.csv")
    write_csv(out, ["estimator", "bin_index", "bin_lo", "bin_hi", "count"], rows)
    raw_out = res.get("raw-out", None)
    if raw_out:
        write_csv(raw_out, ["estimator", "query", "w1"], raw)
    _manifest_for(out, "project-hist", res)
    print(f"wrote {out}")
    return 0


def _cmd_ann_bench(res: _Resolver) -> int:
    m = res.get("m", 100000, int)
    d_x = res.get("d-x", 3, int)
    k = res.get("k", 300, int)
    depth = res.get("depth", 5, int)
    seed0 = res.get("seed", 0, int)
    n_seeds = res.get("seeds", 1, int)
    summaries, samples = [], []
    for seed in range(seed0, seed0 + n_seeds):
        summary, rows = harness.ann_benchmark(
            m, d_x, k, depth, seed,
            n_sims=res.get("n-sims", 100, int),
            n_batch=res.get("n-batch", 256, int))
        summaries.append(summary)
        samples.extend(rows)
    out = res.get("out", "ann_bench.csv")
    write_csv(out, ["M", "d_x", "k", "depth", "seed", "delta_mean", "delta_p50",
                    "delta_p95", "wall_ms_exact", "wall_ms_anns"], summaries)
    samples_out = res.get("samples-out", None)
    if samples_out:
        write_csv(samples_out, ["M", "d_x", "k", "depth", "seed", "sim", "delta"], samples)
    _manifest_for(out, "ann-bench", res)
    print(f"wrote {out}")
    return 0


def _train_config_from(res: _Resolver, kernel) -> TrainConfig:
    epochs = res.get("epochs", 1500, int)
    sched = reference_schedules(epochs)
    use_anns = bool(res.get("use-anns", kernel.d_x > 1))
    k = res.get("k", 100, int)
    return TrainConfig(
        k=k, epochs=epochs,
        n_batch=res.get("n-batch", 100, int),
        lr=res.get("lr", 1e-3, float),
        eps_schedule=sched["eps_schedule"],
        sinkhorn_iters=sched["sinkhorn_iters"],
        sparsity_start=sched["sparsity_start"],
        gamma=res.get("gamma", 0.5, float),
        rbsp=RbspParams(depth=res.get("depth", 5, int), min_part=max(k, 64)),
        use_anns=use_anns,
        seed=res.get("seed", 0, int),
        n_hidden=res.get("n-hidden", 5, int),
        l_scale=res.get("l-scale", 0.1, float),
        tau=res.get("tau", 1e-3, float),
        arch=res.get("arch", "lipnet"),
        feature_low=float(kernel.feature_low[0]),
        feature_high=float(kernel.feature_high[0]),
    )


def _cmd_train(res: _Resolver) -> int:
    kernel = _kernel_from(res)
    data_path = res.get("data", None)
    seed = res.get("seed", 0, int)
    if data_path:
        data = load_dataset(data_path)
    else:
        data = sample_dataset(kernel, res.get("m", 10000, int), seed)
    cfg = _train_config_from(res, kernel)
    params, losses = train(data, cfg, substream(cfg.seed, 23))
    out = res.get("out", "checkpoint.bin")
    save_checkpoint(out, params, seed=cfg.seed, epochs_done=cfg.epochs)
    loss_out = res.get("loss-out", str(Path(out).with_suffix(".loss.csv")))
    write_csv(loss_out, ["epoch", "loss"],
              [{"epoch": i + 1, "loss": float(v)} for i, v in enumerate(losses)])
    _manifest_for(out, "train", res)
    print(f"wrote {out}; final loss {losses[-1]:.6f}")
    return 0


def _cmd_eval(res: _Resolver) -> int:
    kernel = _kernel_from(res)
    ckpt = res.get("checkpoint", None)
    if ckpt is None:
        raise InvalidArgument("eval requires --checkpoint")
    params, ckpt_seed, _ = load_checkpoint(ckpt)
    out = res.get("out", "eval.csv")
    grid_n = res.get("grid", 101, int)
    summary: dict = {}
    if isinstance(kernel, Model3):
        x = _parse_floats(res.get("x", "0.12,-0.33,0.1"))
        n_vecs = res.get("proj-vectors", 4, int)
        rng = substream(res.get("seed", 0, int), 29)
        rows = []
        atoms, _ = lipnet_forward_batch(params, x[None, :])
        for vi in range(n_vecs):
            a_vec = harness.random_l1_direction(rng)
            w1 = harness.projected_w1(kernel, x, a_vec, atoms[0])
            rows.append({"vector": vi, "a0": a_vec[0], "a1": a_vec[1], "a2": a_vec[2],
                         "w1": w1})
        write_csv(out, ["vector", "a0", "a1", "a2", "w1"], rows)
        summary["mean_projected_w1"] = float(np.mean([r["w1"] for r in rows]))
        proj_out = res.get("proj-cdf-out", None)
        if proj_out:
            crows = []
            rng2 = substream(res.get("seed", 0, int), 29)
            for vi in range(n_vecs):
                a_vec = harness.random_l1_direction(rng2)
                proj = atoms[0] @ a_vec
                lo, hi = proj.min() - 0.5, proj.max() + 0.5
                ts = np.linspace(lo, hi, 201)
                truth = kernel.projected_cdf(x, a_vec, ts)
                emp = step_cdf(proj)(ts)
                for t, ft, fe in zip(ts, truth, emp):
                    crows.append({"panel": vi, "t": float(t), "series": "truth", "F": float(ft)})
                    crows.append({"panel": vi, "t": float(t), "series": "lipnet", "F": float(fe)})
            write_csv(proj_out, ["panel", "t", "series", "F"], crows)
    else:
        grid = np.linspace(0.0, 1.0, grid_n)
        forward = lipnet_forward_batch if isinstance(params, neural.LipNetParams) \
            else stdnet_forward_batch
        atoms, _ = forward(params, grid[:, None])
        estimators = {"lipnet": lambda x, rng: step_cdf(
            atoms[np.argmin(np.abs(grid - x))][:, 0])}
        data_path = res.get("data", None)
        if data_path:
            data = load_dataset(data_path)
            k = res.get("k", params.n_atom, int)
            estimators[f"knn_{k}"] = lambda x, rng: knn_estimate(
                data, np.atleast_1d(x), KnnScheme(k=k), rng)
        rows = harness.error_vs_x(kernel, estimators, grid)
        write_csv(out, ["x", "estimator", "w1"], rows)
        net_errors = np.array([r["w1"] for r in rows if r["estimator"] == "lipnet"])
        summary["mean_w1"] = float(net_errors.mean())
        summary["max_w1"] = float(net_errors.max())
        pair_rng = substream(res.get("seed", 0, int), 31)
        pairs = pair_rng.uniform(0.0, 1.0, size=(200, 2, 1))
        lip_hat = empirical_lipschitz(params, pairs) if isinstance(params, neural.LipNetParams) else float("nan")
        summary["lipschitz_hat"] = lip_hat
        lip_true = kernel.lipschitz_constant
        if lip_true is not None and np.isfinite(lip_hat):
            summary["sup_w_bound"] = harness.sup_w_bound(
                summary["mean_w1"], lip_true, lip_hat, kernel.d_x)
            summary["bound_dominates"] = bool(summary["max_w1"]
                                              <= summary["sup_w_bound"] * 1.05)
        atoms_out = res.get("atoms-out", None)
        if atoms_out:
            arows = [{"x": float(grid[i]), "atom": j, "y": float(atoms[i, j, 0])}
                     for i in range(grid_n) for j in range(params.n_atom)]
            write_csv(atoms_out, ["x", "atom", "y"], arows)
        deriv_out = res.get("deriv-out", None)
        if deriv_out:
            prof = avg_abs_derivative(params, grid)
            write_csv(deriv_out, ["x", "avg_abs_der"],
                      [{"x": float(grid[i]), "avg_abs_der": float(prof[i])}
                       for i in range(grid_n)])
    Path(out).with_suffix(".summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")
    _manifest_for(out, "eval", res)
    print(json.dumps(summary, sort_keys=True))
    return 0


_COMMANDS = {
    "gen": _cmd_gen,
    "estimate": _cmd_estimate,
    "rates": _cmd_rates,
    "variance": _cmd_variance,
    "error-vs-x": _cmd_error_vs_x,
    "project-hist": _cmd_project_hist,
    "ann-bench": _cmd_ann_bench,
    "train": _cmd_train,
    "eval": _cmd_eval,
}

_FLAGS: dict[str, list[tuple[str, type | None]]] = {
    "gen": [("kernel", str), ("m", int), ("seed", int), ("out", str), ("csv", str),
            ("model2-threshold", float), ("model3-seed", int)],
    "estimate": [("data", str), ("x", str), ("scheme", str), ("k", int), ("r", float),
                 ("seed", int), ("format", str), ("out", str)],
    "rates": [("kernel", str), ("scheme", str), ("m-list", str), ("seeds", int),
              ("seed", int), ("eval-points", int), ("scale-c", float), ("k", int),
              ("r", float), ("out", str), ("model2-threshold", float), ("model3-seed", int)],
    "variance": [("kernel", str), ("scheme", str), ("m", int), ("k", int), ("r", float),
                 ("repeats", int), ("seed", int), ("eval-points", int), ("out", str),
                 ("model2-threshold", float), ("model3-seed", int)],
    "error-vs-x": [("kernel", str), ("data", str), ("m", int), ("seed", int),
                   ("estimators", str), ("checkpoint", str), ("grid", int), ("out", str),
                   ("model2-threshold", float), ("model3-seed", int)],
    "project-hist": [("kernel", str), ("m", int), ("seed", int), ("k", int),
                     ("n-queries", int), ("bins", int), ("checkpoint", str),
                     ("out", str), ("raw-out", str), ("model3-seed", int)],
    "ann-bench": [("m", int), ("d-x", int), ("k", int), ("depth", int), ("seed", int),
                  ("seeds", int), ("n-sims", int), ("n-batch", int), ("out", str),
                  ("samples-out", str)],
    "train": [("kernel", str), ("data", str), ("m", int), ("k", int), ("epochs", int),
              ("n-batch", int), ("lr", float), ("gamma", float), ("depth", int),
              ("use-anns", None), ("seed", int), ("n-hidden", int), ("l-scale", float),
              ("tau", float), ("arch", str), ("out", str), ("loss-out", str),
              ("model2-threshold", float), ("model3-seed", int)],
    "eval": [("kernel", str), ("checkpoint", str), ("data", str), ("k", int),
             ("grid", int), ("seed", int), ("x", str), ("proj-vectors", int),
             ("out", str), ("atoms-out", str), ("deriv-out", str),
             ("proj-cdf-out", str), ("model2-threshold", float), ("model3-seed", int)],
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="condist",
                                     description="conditional distribution experiments")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, flags in _FLAGS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None,
                       help="flat YAML key-value file; flags override")
        for flag, typ in flags:
            if typ is None:
                p.add_argument(f"--{flag}", action="store_const", const=True, default=None)
            else:
                p.add_argument(f"--{flag}", type=typ, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    res = _Resolver(args, _load_config(args.config))
    try:
        return _COMMANDS[args.command](res)
    except CondistError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
