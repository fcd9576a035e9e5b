"""Lipschitz-regular atom network, manual backprop, and the training loop.

The network maps a feature point to N_atom equally weighted movable
atoms in the target space (a Lagrangian discretization of a measure).
Layers:

    input    u = N^{-1} diag(min(1, 1/r^)) ELU(W x + b)
    hidden   u = u - h^ W^T ELU(W u + b)            (x5 by default)
    output   y = L d_Y^{-1} diag(min(1, 1/r^)) (W u + b)

r^ are momentum-tracked row-wise l1 norms of W (input/output layers);
h^ tracks 2/sigma(W)^2 through power iteration with momentum (hidden
layers).  With exact coefficients every layer is 1-Lipschitz (l1 for
input/output, l2 for hidden); the tracked states lag the weights during
training, which is what lets the fitted map stretch locally.  All
normalizer states are constants during differentiation: backprop treats
h^ and r^ as frozen.

One power-iteration-with-momentum update per layer per epoch:

    v  = W u^ / ||W u^||          u = W^T v / ||W^T v||
    h  = 2 / (sum_i (W u . v)_i)^2
    h^ <- tau h^ + (1 - tau) h    u^ <- tau u^ + (1 - tau) u, renormalized

(tau = 1e-3 by default; the blended u^ is renormalized to unit length to
keep the next matrix-vector product well-posed).  Row norm states use
the same momentum: r^ <- tau r^ + (1 - tau) |W|_1-row.

Training (per epoch): optionally rebuild the random binary space
partition and draw a fixed number of query points uniformly inside each
part rectangle (or draw the whole batch uniformly over the feature box
and search exactly); collect the k nearest targets per query; run the
forward pass; solve the entropic transport problem per query with the
scheduled regularizer/iteration budget and the cost normalization;
optionally sparsify the plan; form atom gradients with the plan frozen;
backpropagate; apply one Adam step.  The loss trace records the mean
transport cost per epoch (before sparsification).

A plain residual ReLU baseline without any normalization ("stdnet",
no batch norm) shares the same training loop for comparison runs.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .core import Dataset
from .errors import FormatError, InvalidArgument, NumericFailure
from .nns import RbspParams, exact_knn, rbsp_partition, _select_k, _distances
from .ot import SinkhornConfig, exact_assignment_w1, sinkhorn_batched, sparsify_batched


# ---------------------------------------------------------------------------
# parameters


@dataclass
class PowerIterState:
    h_hat: float
    u_hat: np.ndarray
    tau: float = 1e-3


@dataclass
class NormedLayer:
    w: np.ndarray
    b: np.ndarray
    row_norm: np.ndarray  # momentum-tracked |W|_1 row sums


@dataclass
class HiddenLayer:
    w: np.ndarray
    b: np.ndarray
    power: PowerIterState


@dataclass
class LipNetParams:
    input: NormedLayer
    hidden: list[HiddenLayer]
    output: NormedLayer
    l_scale: float
    d_x: int
    d_y: int
    n_atom: int
    n_neuron: int
    tau: float

    def param_items(self):
        yield "input.w", self.input.w
        yield "input.b", self.input.b
        for i, layer in enumerate(self.hidden):
            yield f"hidden.{i}.w", layer.w
            yield f"hidden.{i}.b", layer.b
        yield "output.w", self.output.w
        yield "output.b", self.output.b


def row_l1_norms(w: np.ndarray) -> np.ndarray:
    return np.abs(w).sum(axis=1)


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


def power_iter_update(w: np.ndarray, state: PowerIterState,
                      tau: float | None = None) -> PowerIterState:
    """One power-iteration-with-momentum update of the 2/sigma^2 estimate."""
    t = state.tau if tau is None else tau
    wu = w @ state.u_hat
    nrm = np.linalg.norm(wu)
    if not np.isfinite(nrm) or nrm == 0.0:
        raise NumericFailure("power iteration hit a zero product vector",
                             component="power_iteration")
    v = wu / nrm
    wtv = w.T @ v
    nrm2 = np.linalg.norm(wtv)
    if not np.isfinite(nrm2) or nrm2 == 0.0:
        raise NumericFailure("power iteration hit a zero product vector",
                             component="power_iteration")
    u = wtv / nrm2
    rayleigh = float(v @ (w @ u))
    h = 2.0 / rayleigh ** 2
    h_hat = t * state.h_hat + (1.0 - t) * h
    u_blend = t * state.u_hat + (1.0 - t) * u
    u_nrm = np.linalg.norm(u_blend)
    if u_nrm == 0.0:
        raise NumericFailure("power iteration momentum collapsed to zero",
                             component="power_iteration")
    return PowerIterState(h_hat=h_hat, u_hat=u_blend / u_nrm, tau=state.tau)


def _warm_power_state(w: np.ndarray, rng: np.random.Generator, tau: float,
                      warmup: int = 50) -> PowerIterState:
    u0 = rng.standard_normal(w.shape[1])
    state = PowerIterState(h_hat=1.0, u_hat=u0 / np.linalg.norm(u0), tau=tau)
    for _ in range(warmup):
        state = power_iter_update(w, state, tau=0.0)
    return state


def init_lipnet(d_x: int, d_y: int, n_atom: int, n_neuron: int, n_hidden: int,
                l_scale: float, tau: float, rng: np.random.Generator,
                atom_positions: np.ndarray | None = None) -> LipNetParams:
    """Glorot-uniform weights, warm-started normalizer states.

    Two departures from plain Glorot/zero-bias initialization, both
    needed for the transport objective to be well-posed at epoch 1:
    the output layer weights start at scale 1/n_neuron so its row l1
    norms sit below the min(1, 1/r^) clamp (Glorot would start them an
    order of magnitude above it and freeze the output scale), and when
    ``atom_positions`` (n_atom, d_y) is given the output biases place
    the initial atoms there.  Collapsed atoms make the cost-matrix
    normalization c~ = min_i max_j C_ij degenerate as soon as one data
    target sits near the collapse point, underflowing the scaled kernel.
    """
    w_in = _glorot(rng, (n_neuron, d_x))
    input_layer = NormedLayer(w=w_in, b=np.zeros(n_neuron), row_norm=row_l1_norms(w_in))
    hidden = []
    for _ in range(n_hidden):
        w = _glorot(rng, (n_neuron, n_neuron))
        hidden.append(HiddenLayer(w=w, b=np.zeros(n_neuron),
                                  power=_warm_power_state(w, rng, tau)))
    d_out = d_y * n_atom
    w_out = rng.uniform(-1.0 / n_neuron, 1.0 / n_neuron, size=(d_out, n_neuron))
    row_norm = row_l1_norms(w_out)
    b_out = np.zeros(d_out)
    if atom_positions is not None:
        pos = np.asarray(atom_positions, dtype=np.float64).reshape(d_out)
        b_out = pos * d_y / (l_scale * np.minimum(1.0, 1.0 / row_norm))
    output_layer = NormedLayer(w=w_out, b=b_out, row_norm=row_norm)
    return LipNetParams(input=input_layer, hidden=hidden, output=output_layer,
                        l_scale=l_scale, d_x=d_x, d_y=d_y, n_atom=n_atom,
                        n_neuron=n_neuron, tau=tau)


def _fresh_power_estimate(w: np.ndarray, state: PowerIterState):
    """One power-iteration refinement of (u, h) from the current u^."""
    wu = w @ state.u_hat
    nrm = np.linalg.norm(wu)
    if not np.isfinite(nrm) or nrm == 0.0:
        raise NumericFailure("power iteration hit a zero product vector",
                             component="power_iteration")
    v = wu / nrm
    wtv = w.T @ v
    u = wtv / np.linalg.norm(wtv)
    h = 2.0 / float(v @ (w @ u)) ** 2
    return u, h


def refresh_normalizers(params: LipNetParams) -> None:
    """Per-epoch paced update of all normalizer states, in place.

    The per-epoch blend keeps the weight (1 - tau) on the *old* state:
    with tau = 1e-3 the tracked norms trail the moving weights by
    ~1/tau epochs.  That trailing slack is what lets the fitted map
    exceed the nominal layer bounds locally; tracking the fresh
    estimate each epoch instead (the single-update convention of
    power_iter_update) clamps the network to its exact-normalizer
    envelope, whose atom velocity is bounded by ~L/sqrt(N_neuron) and
    cannot follow any data; see the ledger for the measured collapse.
    """
    tau = params.tau
    for layer in params.hidden:
        u, h = _fresh_power_estimate(layer.w, layer.power)
        u_blend = (1.0 - tau) * layer.power.u_hat + tau * u
        layer.power = PowerIterState(
            h_hat=(1.0 - tau) * layer.power.h_hat + tau * h,
            u_hat=u_blend / np.linalg.norm(u_blend),
            tau=layer.power.tau)
    for nl in (params.input, params.output):
        nl.row_norm = (1.0 - tau) * nl.row_norm + tau * row_l1_norms(nl.w)


# ---------------------------------------------------------------------------
# forward / backward


def _elu(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, z, np.expm1(z))


def _elu_prime(z: np.ndarray) -> np.ndarray:
    return np.where(z > 0.0, 1.0, np.exp(z))


def lipnet_forward_batch(params: LipNetParams, xs: np.ndarray):
    """Atoms for a batch of feature points; returns (B, n_atom, d_y) + cache."""
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    if xs.shape[1] != params.d_x:
        raise InvalidArgument(f"inputs have dimension {xs.shape[1]}, expected {params.d_x}")
    c_in = np.minimum(1.0, 1.0 / params.input.row_norm)
    z0 = xs @ params.input.w.T + params.input.b
    u = (_elu(z0) * c_in) / params.n_neuron
    layers = []
    for layer in params.hidden:
        z = u @ layer.w.T + layer.b
        s = _elu(z)
        layers.append((u, z, s))
        u = u - layer.power.h_hat * (s @ layer.w)
    c_out = np.minimum(1.0, 1.0 / params.output.row_norm)
    pre = u @ params.output.w.T + params.output.b
    out = (params.l_scale / params.d_y) * (pre * c_out)
    atoms = out.reshape(xs.shape[0], params.n_atom, params.d_y)
    if not np.isfinite(atoms).all():
        raise NumericFailure("network output is not finite", component="forward")
    cache = {"xs": xs, "z0": z0, "c_in": c_in, "layers": layers, "u_last": u,
             "c_out": c_out}
    return atoms, cache


def lipnet_backward_batch(params: LipNetParams, cache, grad_atoms: np.ndarray):
    """Gradients of sum_b <grad_atoms_b, atoms_b> w.r.t. all weights/biases.

    Normalizer states (h^, r^) are treated as constants.
    """
    grad_atoms = np.asarray(grad_atoms, dtype=np.float64)
    b = cache["xs"].shape[0]
    if grad_atoms.shape != (b, params.n_atom, params.d_y):
        raise InvalidArgument(
            f"grad_atoms shape {grad_atoms.shape} != {(b, params.n_atom, params.d_y)}")
    grads: dict[str, np.ndarray] = {}
    g_flat = grad_atoms.reshape(b, -1)
    pre_grad = g_flat * (params.l_scale / params.d_y) * cache["c_out"]
    grads["output.w"] = pre_grad.T @ cache["u_last"]
    grads["output.b"] = pre_grad.sum(axis=0)
    g = pre_grad @ params.output.w
    for i in range(len(params.hidden) - 1, -1, -1):
        layer = params.hidden[i]
        u_in, z, s = cache["layers"][i]
        q = _elu_prime(z) * (-(layer.power.h_hat) * (g @ layer.w.T))
        grads[f"hidden.{i}.w"] = q.T @ u_in - layer.power.h_hat * (s.T @ g)
        grads[f"hidden.{i}.b"] = q.sum(axis=0)
        g = g + q @ layer.w
    g0 = g * (cache["c_in"] / params.n_neuron)
    q0 = _elu_prime(cache["z0"]) * g0
    grads["input.w"] = q0.T @ cache["xs"]
    grads["input.b"] = q0.sum(axis=0)
    return grads


def lipnet_forward(params: LipNetParams, x):
    """Single-point forward pass: (n_atom, d_y) atoms plus the cache."""
    atoms, cache = lipnet_forward_batch(params, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return atoms[0], cache


def lipnet_backward(params: LipNetParams, cache, grad_atoms: np.ndarray):
    """Single-point backward pass matching :func:`lipnet_forward`."""
    return lipnet_backward_batch(params, cache, np.asarray(grad_atoms)[None, :, :])


# ---------------------------------------------------------------------------
# plain residual baseline (no normalization, no batch norm)


@dataclass
class StdNetParams:
    w_in: np.ndarray
    b_in: np.ndarray
    hidden: list[tuple[np.ndarray, np.ndarray]]
    w_out: np.ndarray
    b_out: np.ndarray
    d_x: int
    d_y: int
    n_atom: int
    n_neuron: int

    def param_items(self):
        yield "input.w", self.w_in
        yield "input.b", self.b_in
        for i, (w, b) in enumerate(self.hidden):
            yield f"hidden.{i}.w", w
            yield f"hidden.{i}.b", b
        yield "output.w", self.w_out
        yield "output.b", self.b_out


def init_stdnet(d_x, d_y, n_atom, n_neuron, n_hidden, rng,
                atom_positions: np.ndarray | None = None) -> StdNetParams:
    b_out = np.zeros(d_y * n_atom) if atom_positions is None \
        else np.asarray(atom_positions, dtype=np.float64).reshape(d_y * n_atom)
    return StdNetParams(
        w_in=_glorot(rng, (n_neuron, d_x)), b_in=np.zeros(n_neuron),
        hidden=[(_glorot(rng, (n_neuron, n_neuron)), np.zeros(n_neuron))
                for _ in range(n_hidden)],
        w_out=_glorot(rng, (d_y * n_atom, n_neuron)), b_out=b_out,
        d_x=d_x, d_y=d_y, n_atom=n_atom, n_neuron=n_neuron)


def stdnet_forward_batch(params: StdNetParams, xs: np.ndarray):
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    z0 = xs @ params.w_in.T + params.b_in
    u = np.maximum(z0, 0.0)
    layers = []
    for w, b_vec in params.hidden:
        z = u @ w.T + b_vec
        layers.append((u, z))
        u = u + np.maximum(z, 0.0)
    out = u @ params.w_out.T + params.b_out
    atoms = out.reshape(xs.shape[0], params.n_atom, params.d_y)
    if not np.isfinite(atoms).all():
        raise NumericFailure("network output is not finite", component="forward")
    return atoms, {"xs": xs, "z0": z0, "layers": layers, "u_last": u}


def stdnet_backward_batch(params: StdNetParams, cache, grad_atoms: np.ndarray):
    b = cache["xs"].shape[0]
    g_flat = np.asarray(grad_atoms, dtype=np.float64).reshape(b, -1)
    grads = {"output.w": g_flat.T @ cache["u_last"], "output.b": g_flat.sum(axis=0)}
    g = g_flat @ params.w_out
    for i in range(len(params.hidden) - 1, -1, -1):
        w, _ = params.hidden[i]
        u_in, z = cache["layers"][i]
        q = (z > 0.0) * g
        grads[f"hidden.{i}.w"] = q.T @ u_in
        grads[f"hidden.{i}.b"] = q.sum(axis=0)
        g = g + q @ w
    q0 = (cache["z0"] > 0.0) * g
    grads["input.w"] = q0.T @ cache["xs"]
    grads["input.b"] = q0.sum(axis=0)
    return grads


def stdnet_forward(params: StdNetParams, x):
    atoms, cache = stdnet_forward_batch(params, np.asarray(x, dtype=np.float64).reshape(1, -1))
    return atoms[0], cache


def stdnet_backward(params: StdNetParams, cache, grad_atoms: np.ndarray):
    return stdnet_backward_batch(params, cache, np.asarray(grad_atoms)[None, :, :])


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params, grads: dict[str, np.ndarray], state: AdamState, lr: float):
    """Bias-corrected Adam update, in place on the parameter arrays."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** state.t
    corr2 = 1.0 - b2 ** state.t
    for name, arr in params.param_items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(arr)
            state.v[name] = np.zeros_like(arr)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        arr -= lr * (state.m[name] / corr1) / (np.sqrt(state.v[name] / corr2) + state.eps)
    return params, state


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    """Hyper-parameters and schedules for one training run.

    Schedules are tuples of (last_epoch, value) pairs applied to 1-based
    epochs; the final pair must have last_epoch None (open-ended) so the
    schedule covers every epoch.  ``sparsity_start`` is the epoch after
    which the transport plan is sparsified (None: never).
    """

    k: int
    epochs: int
    n_batch: int = 100
    n_atom: int | None = None           # defaults to k; must equal k
    lr: float = 1e-3
    eps_schedule: tuple = ((None, 0.1),)
    sinkhorn_iters: tuple = ((None, 5),)
    sparsity_start: int | None = None
    gamma: float = 0.5
    rbsp: RbspParams = field(default_factory=RbspParams)
    use_anns: bool = False
    seed: int = 0
    n_neuron: int | None = None         # defaults to 2k
    n_hidden: int = 5
    l_scale: float = 0.1
    tau: float = 1e-3
    arch: str = "lipnet"
    normalize_sinkhorn: bool = True
    feature_low: float = 0.0
    feature_high: float = 1.0
    knn_metric: str = "max"

    def __post_init__(self):
        if self.n_atom is not None and self.n_atom != self.k:
            raise InvalidArgument("the atom count must equal k")
        if self.epochs < 1:
            raise InvalidArgument("epochs must be >= 1")
        for sched in (self.eps_schedule, self.sinkhorn_iters):
            if len(sched) == 0 or sched[-1][0] is not None:
                raise InvalidArgument("schedules must end with an open-ended entry")
        if self.arch not in ("lipnet", "stdnet"):
            raise InvalidArgument(f"unknown arch {self.arch!r}")

    @property
    def atoms(self) -> int:
        return self.k if self.n_atom is None else self.n_atom

    @property
    def neurons(self) -> int:
        return 2 * self.k if self.n_neuron is None else self.n_neuron


def reference_schedules(epochs: int) -> dict:
    """Canonical schedule breakpoints (100/500 out of 5000) scaled to ``epochs``."""
    b1 = max(1, round(epochs * 100 / 5000))
    b2 = max(b1 + 1, round(epochs * 500 / 5000))
    return {
        "eps_schedule": ((b1, 1.0), (b2, 0.1), (None, 0.05)),
        "sinkhorn_iters": ((b2, 5), (None, 10)),
        "sparsity_start": b2,
    }


def schedule_value(schedule, epoch: int):
    for until, value in schedule:
        if until is None or epoch <= until:
            return value
    raise InvalidArgument("schedule does not cover epoch")


def _part_query_batch(parts, data, k, qpp, metric, rng):
    """queries_per_part uniform draws inside each part rectangle + their k-NN."""
    queries, targets = [], []
    for part in parts:
        lo, hi = part.rect[0], part.rect[1]
        pts = rng.uniform(lo, hi, size=(qpp, lo.size))
        sub_xs = data.xs[part.indices]
        for q in pts:
            local = _select_k(_distances(sub_xs, q, metric), k, rng)
            queries.append(q)
            targets.append(data.ys[part.indices[local]])
    return np.array(queries), np.array(targets)


def train(data: Dataset, cfg: TrainConfig, rng: np.random.Generator):
    """Fit the atom network to the k-NN raw estimator; returns (params, loss trace)."""
    k, n_atom, n_neuron = cfg.k, cfg.atoms, cfg.neurons
    if k > data.m:
        raise InvalidArgument(f"k={k} exceeds dataset size {data.m}")
    # Initial atoms sit at a random sample of dataset targets, spread like
    # the data; see init_lipnet on why collapsed atoms are not viable.
    atom_positions = data.ys[rng.choice(data.m, size=n_atom, replace=False)]
    if cfg.arch == "lipnet":
        params = init_lipnet(data.d_x, data.d_y, n_atom, n_neuron, cfg.n_hidden,
                             cfg.l_scale, cfg.tau, rng, atom_positions=atom_positions)
        fwd, bwd = lipnet_forward_batch, lipnet_backward_batch
    else:
        params = init_stdnet(data.d_x, data.d_y, n_atom, n_neuron, cfg.n_hidden, rng,
                             atom_positions=atom_positions)
        fwd, bwd = stdnet_forward_batch, stdnet_backward_batch
    adam = AdamState()
    rbsp = cfg.rbsp if cfg.rbsp.min_part >= max(k, 64) else replace(cfg.rbsp, min_part=max(k, 64))
    losses = np.empty(cfg.epochs)
    for epoch in range(1, cfg.epochs + 1):
        try:
            if cfg.arch == "lipnet":
                refresh_normalizers(params)
            if cfg.use_anns:
                parts = rbsp_partition(data, rbsp, rng)
                queries, targets = _part_query_batch(
                    parts, data, k, rbsp.queries_per_part, cfg.knn_metric, rng)
            else:
                queries = rng.uniform(cfg.feature_low, cfg.feature_high,
                                      size=(cfg.n_batch, data.d_x))
                targets = np.array([
                    data.ys[exact_knn(data, q, k, rng, metric=cfg.knn_metric)]
                    for q in queries])
            atoms, cache = fwd(params, queries)
            costs = np.abs(targets[:, :, None, :] - atoms[:, None, :, :]).sum(axis=3)
            sk_cfg = SinkhornConfig(eps=schedule_value(cfg.eps_schedule, epoch),
                                    n_iter=schedule_value(cfg.sinkhorn_iters, epoch),
                                    normalize=cfg.normalize_sinkhorn)
            plans, batch_costs, _ = sinkhorn_batched(costs, sk_cfg)
            loss = float(batch_costs.mean())
            if not np.isfinite(loss):
                raise NumericFailure("loss is not finite", component="sinkhorn")
            if cfg.sparsity_start is not None and epoch > cfg.sparsity_start:
                plans = sparsify_batched(plans, cfg.gamma)
            signs = np.sign(atoms[:, None, :, :] - targets[:, :, None, :])
            grad_atoms = np.einsum("bij,bijd->bjd", plans, signs) / queries.shape[0]
            grads = bwd(params, cache, grad_atoms)
            for g in grads.values():
                if not np.isfinite(g).all():
                    raise NumericFailure("parameter gradient is not finite",
                                         component="backward")
            adam_step(params, grads, adam, cfg.lr)
        except NumericFailure as err:
            raise NumericFailure(str(err), epoch=epoch,
                                 component=err.component) from err
        losses[epoch - 1] = loss
    return params, losses


# ---------------------------------------------------------------------------
# diagnostics


def empirical_lipschitz(params: LipNetParams, probe_pairs) -> float:
    """Max W1 ratio over probe pairs; a lower estimate of the true constant."""
    pairs = np.asarray(probe_pairs, dtype=np.float64)
    if pairs.ndim == 2:
        pairs = pairs[:, :, None]
    best = 0.0
    a_atoms, _ = lipnet_forward_batch(params, pairs[:, 0, :])
    b_atoms, _ = lipnet_forward_batch(params, pairs[:, 1, :])
    for i in range(pairs.shape[0]):
        dx = np.abs(pairs[i, 0] - pairs[i, 1]).max()
        if dx == 0.0:
            continue
        w, _ = exact_assignment_w1(a_atoms[i], b_atoms[i])
        best = max(best, w / dx)
    return best


def avg_abs_derivative(params, x_grid) -> np.ndarray:
    """Mean |d atom / dx| across atoms at each grid point (d_X = 1)."""
    grid = np.asarray(x_grid, dtype=np.float64).reshape(-1)
    if grid.size < 3:
        raise InvalidArgument("derivative grid needs at least 3 points")
    forward = lipnet_forward_batch if isinstance(params, LipNetParams) else stdnet_forward_batch
    if params.d_x != 1:
        raise InvalidArgument("derivative profile is defined for d_X = 1")
    atoms, _ = forward(params, grid[:, None])
    deriv = np.gradient(atoms, grid, axis=0)
    return np.abs(deriv).mean(axis=(1, 2))


# ---------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"LIPCKPT\x00"
_CKPT_VERSION = 1
_CKPT_HEADER = struct.Struct("<8sII5IdddQQ")
_ARCH_CODE = {"lipnet": 0, "stdnet": 1}


def save_checkpoint(path, params, *, seed: int = 0, epochs_done: int = 0) -> None:
    """Versioned binary checkpoint: header, f64 parameter blocks, normalizer
    states, and the RNG position (seed + completed epochs)."""
    arch = "lipnet" if isinstance(params, LipNetParams) else "stdnet"
    n_hidden = len(params.hidden)
    l_scale = params.l_scale if arch == "lipnet" else 0.0
    tau = params.tau if arch == "lipnet" else 0.0
    header = _CKPT_HEADER.pack(_CKPT_MAGIC, _CKPT_VERSION, _ARCH_CODE[arch],
                               params.d_x, params.d_y, params.n_atom,
                               params.n_neuron, n_hidden, l_scale, tau, 0.0,
                               seed, epochs_done)
    blocks: list[np.ndarray] = []
    if arch == "lipnet":
        blocks += [params.input.w, params.input.b, params.input.row_norm]
        for layer in params.hidden:
            blocks += [layer.w, layer.b, np.array([layer.power.h_hat]), layer.power.u_hat]
        blocks += [params.output.w, params.output.b, params.output.row_norm]
    else:
        blocks += [params.w_in, params.b_in]
        for w, b_vec in params.hidden:
            blocks += [w, b_vec]
        blocks += [params.w_out, params.b_out]
    with open(path, "wb") as fh:
        fh.write(header)
        for blk in blocks:
            fh.write(np.ascontiguousarray(blk, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Load a checkpoint; returns (params, seed, epochs_done)."""
    raw = open(path, "rb").read()
    if len(raw) < _CKPT_HEADER.size:
        raise FormatError("checkpoint too short for header")
    (magic, version, arch_code, d_x, d_y, n_atom, n_neuron, n_hidden,
     l_scale, tau, _pad, seed, epochs_done) = _CKPT_HEADER.unpack_from(raw, 0)
    if magic != _CKPT_MAGIC:
        raise FormatError(f"bad checkpoint magic {magic!r}")
    if version != _CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}, expected {_CKPT_VERSION}")
    body = np.frombuffer(raw, dtype="<f8", offset=_CKPT_HEADER.size)
    pos = 0

    def take(*shape):
        nonlocal pos
        n = int(np.prod(shape))
        if pos + n > body.size:
            raise FormatError("checkpoint truncated")
        out = body[pos:pos + n].reshape(shape).copy()
        pos += n
        return out

    d_out = d_y * n_atom
    if arch_code == _ARCH_CODE["lipnet"]:
        input_layer = NormedLayer(take(n_neuron, d_x), take(n_neuron), take(n_neuron))
        hidden = []
        for _ in range(n_hidden):
            w = take(n_neuron, n_neuron)
            b_vec = take(n_neuron)
            h_hat = float(take(1)[0])
            u_hat = take(n_neuron)
            hidden.append(HiddenLayer(w=w, b=b_vec,
                                      power=PowerIterState(h_hat=h_hat, u_hat=u_hat, tau=tau)))
        output_layer = NormedLayer(take(d_out, n_neuron), take(d_out), take(d_out))
        params = LipNetParams(input=input_layer, hidden=hidden, output=output_layer,
                              l_scale=l_scale, d_x=d_x, d_y=d_y, n_atom=n_atom,
                              n_neuron=n_neuron, tau=tau)
    else:
        params = StdNetParams(
            w_in=take(n_neuron, d_x), b_in=take(n_neuron),
            hidden=[(take(n_neuron, n_neuron), take(n_neuron)) for _ in range(n_hidden)],
            w_out=take(d_out, n_neuron), b_out=take(d_out),
            d_x=d_x, d_y=d_y, n_atom=n_atom, n_neuron=n_neuron)
    if pos != body.size:
        raise FormatError("checkpoint has trailing data")
    return params, seed, epochs_done
