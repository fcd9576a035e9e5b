import numpy as np
import pytest

from condist.errors import FormatError, InvalidArgument, NumericFailure
from condist.neural import (AdamState, HiddenLayer, LipNetParams, NormedLayer,
                            PowerIterState, TrainConfig, adam_step,
                            reference_schedules, avg_abs_derivative,
                            empirical_lipschitz, init_lipnet, init_stdnet,
                            lipnet_backward, lipnet_backward_batch,
                            lipnet_forward, lipnet_forward_batch,
                            load_checkpoint, power_iter_update,
                            save_checkpoint, schedule_value, stdnet_backward,
                            stdnet_forward, train)
from condist.rng import substream
from condist.synthetic import Model1, sample_dataset


def _fd_check(params, forward, backward, coeffs, x, tol=1e-4, h=1e-6):
    """Max relative error of analytic grads vs central finite differences."""
    atoms, cache = forward(params, x)
    grads = backward(params, cache, coeffs)
    worst = 0.0
    for name, arr in params.param_items():
        g = grads[name]
        it = np.nditer(arr, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            keep = arr[ix]
            arr[ix] = keep + h
            up, _ = forward(params, x)
            arr[ix] = keep - h
            dn, _ = forward(params, x)
            arr[ix] = keep
            fd = ((up - dn) * coeffs).sum() / (2.0 * h)
            rel = abs(fd - g[ix]) / max(abs(fd), abs(g[ix]), 1e-6)
            worst = max(worst, rel)
    assert worst <= tol, f"max relative gradient error {worst}"
    return worst


# ---------------------------------------------------------------------------
# forward pass


def test_forward_output_shape():
    params = init_lipnet(2, 3, 5, 8, 2, 0.1, 1e-3, substream(0))
    atoms, _ = lipnet_forward(params, [0.3, 0.7])
    assert atoms.shape == (5, 3)


def test_forward_linear_in_output_scale():
    params = init_lipnet(1, 1, 4, 8, 2, 0.1, 1e-3, substream(1))
    a1, _ = lipnet_forward(params, [0.4])
    params.l_scale = 0.2
    a2, _ = lipnet_forward(params, [0.4])
    np.testing.assert_allclose(a2, 2.0 * a1, rtol=1e-12)


def test_forward_zero_hidden_weights_are_identity_layers():
    rng = substream(2)
    params = init_lipnet(1, 1, 4, 8, 3, 0.1, 1e-3, rng)
    for layer in params.hidden:
        layer.w[:] = 0.0
        layer.b[:] = 0.0
    x = np.array([0.6])
    atoms, _ = lipnet_forward(params, x)
    # replicate input layer + output layer by hand
    c_in = np.minimum(1.0, 1.0 / params.input.row_norm)
    z0 = params.input.w @ x + params.input.b
    u = np.where(z0 > 0, z0, np.expm1(z0)) * c_in / 8
    c_out = np.minimum(1.0, 1.0 / params.output.row_norm)
    expect = 0.1 * c_out * (params.output.w @ u + params.output.b)
    np.testing.assert_allclose(atoms.ravel(), expect, atol=1e-15)


def test_forward_rejects_wrong_dimension():
    params = init_lipnet(2, 1, 4, 8, 1, 0.1, 1e-3, substream(3))
    with pytest.raises(InvalidArgument):
        lipnet_forward(params, [0.5])


# ---------------------------------------------------------------------------
# power iteration


def test_power_iter_diagonal_fixed_point():
    w = np.diag([2.0, 1.0])
    state = PowerIterState(h_hat=0.5, u_hat=np.array([1.0, 0.0]), tau=0.0)
    new = power_iter_update(w, state, tau=0.0)
    assert abs(new.h_hat - 0.5) < 1e-15  # h* = 2 / sigma^2 = 0.5
    np.testing.assert_allclose(new.u_hat, [1.0, 0.0])


def test_power_iter_identity():
    w = np.eye(3)
    state = PowerIterState(h_hat=1.0, u_hat=np.array([0.6, 0.8, 0.0]), tau=0.0)
    new = power_iter_update(w, state, tau=0.0)
    assert abs(new.h_hat - 2.0) < 1e-15


def test_power_iter_converges_to_svd_oracle():
    for s in range(5):
        w = substream(s, 20).standard_normal((64, 64))
        sigma = np.linalg.svd(w, compute_uv=False)[0]
        rng = substream(s, 21)
        u0 = rng.standard_normal(64)
        state = PowerIterState(h_hat=1.0, u_hat=u0 / np.linalg.norm(u0), tau=1e-3)
        for _ in range(10_000):
            state = power_iter_update(w, state)
        assert abs(state.h_hat - 2.0 / sigma ** 2) * sigma ** 2 <= 1e-6


def test_power_iter_rejects_zero_matrix():
    state = PowerIterState(h_hat=1.0, u_hat=np.array([1.0, 0.0]), tau=1e-3)
    with pytest.raises(NumericFailure):
        power_iter_update(np.zeros((2, 2)), state)


def test_hidden_layer_contraction_with_exact_coefficient():
    # exact 2/sigma^2 makes the layer 1-Lipschitz in l2
    rng = substream(30)
    w = rng.standard_normal((16, 16))
    b = rng.standard_normal(16)
    h = 2.0 / np.linalg.svd(w, compute_uv=False)[0] ** 2

    def f(x):
        s = w @ x + b
        s = np.where(s > 0, s, np.expm1(s))
        return x - h * (w.T @ s)

    for _ in range(1000):
        a = rng.standard_normal(16)
        c = rng.standard_normal(16)
        assert np.linalg.norm(f(a) - f(c)) <= (1 + 1e-6) * np.linalg.norm(a - c)


# ---------------------------------------------------------------------------
# backward pass


def test_backward_zero_gradient_gives_zero():
    params = init_lipnet(1, 1, 4, 8, 2, 0.1, 1e-3, substream(4))
    atoms, cache = lipnet_forward(params, [0.5])
    grads = lipnet_backward(params, cache, np.zeros_like(atoms))
    assert all(np.all(g == 0.0) for g in grads.values())


def test_backward_single_linear_layer_hand_derivation():
    # no hidden layers; pick x so the input ELU is in its linear region
    rng = substream(5)
    params = init_lipnet(1, 1, 2, 4, 0, 0.1, 1e-3, rng)
    params.input.w[:] = np.abs(params.input.w)
    x = np.array([0.5])
    atoms, cache = lipnet_forward(params, x)
    coeffs = np.array([[1.0], [2.0]])
    grads = lipnet_backward(params, cache, coeffs)
    c_out = np.minimum(1.0, 1.0 / params.output.row_norm)
    u = cache["u_last"][0]
    expect_wout = (coeffs.ravel() * 0.1 * c_out)[:, None] * u[None, :]
    np.testing.assert_allclose(grads["output.w"], expect_wout, atol=1e-14)
    np.testing.assert_allclose(grads["output.b"], coeffs.ravel() * 0.1 * c_out,
                               atol=1e-14)


def test_lipnet_gradcheck_full_network():
    rng = substream(6)
    params = init_lipnet(1, 1, 4, 6, 2, 0.1, 1e-3, rng,
                         atom_positions=rng.uniform(-1, 1, size=(4, 1)))
    coeffs = substream(7).standard_normal((4, 1))
    worst = _fd_check(params, lipnet_forward, lipnet_backward, coeffs,
                      np.array([0.37]))
    assert worst <= 1e-4


def test_stdnet_gradcheck():
    rng = substream(8)
    params = init_stdnet(1, 1, 3, 5, 2, rng,
                         atom_positions=rng.uniform(-1, 1, size=(3, 1)))
    coeffs = substream(9).standard_normal((3, 1))
    worst = _fd_check(params, stdnet_forward, stdnet_backward, coeffs,
                      np.array([0.41]))
    assert worst <= 1e-4


def test_backward_shape_mismatch():
    params = init_lipnet(1, 1, 4, 8, 1, 0.1, 1e-3, substream(10))
    _, cache = lipnet_forward(params, [0.5])
    with pytest.raises(InvalidArgument):
        lipnet_backward_batch(params, cache, np.zeros((1, 3, 1)))


# ---------------------------------------------------------------------------
# Adam


def _tiny_params(seed=11):
    return init_lipnet(1, 1, 2, 4, 1, 0.1, 1e-3, substream(seed))


def test_adam_zero_gradient_keeps_parameters():
    params = _tiny_params()
    before = {n: a.copy() for n, a in params.param_items()}
    grads = {n: np.zeros_like(a) for n, a in params.param_items()}
    adam_step(params, grads, AdamState(), 1e-3)
    for n, a in params.param_items():
        np.testing.assert_array_equal(a, before[n])


def test_adam_first_step_magnitude():
    params = _tiny_params(12)
    before = {n: a.copy() for n, a in params.param_items()}
    grads = {n: substream(13).standard_normal(a.shape) + 3.0
             for n, a in params.param_items()}
    adam_step(params, grads, AdamState(), 1e-3)
    for n, a in params.param_items():
        step = a - before[n]
        assert np.all(np.abs(step) <= 1e-3 + 1e-9)
        big = np.abs(grads[n]) > 1e-3
        np.testing.assert_allclose(np.abs(step[big]), 1e-3, rtol=1e-4)


def test_adam_deterministic():
    runs = []
    for _ in range(2):
        params = _tiny_params(14)
        state = AdamState()
        for t in range(5):
            grads = {n: substream(t, 15).standard_normal(a.shape)
                     for n, a in params.param_items()}
            adam_step(params, grads, state, 1e-3)
        runs.append({n: a.copy() for n, a in params.param_items()})
    for n in runs[0]:
        np.testing.assert_array_equal(runs[0][n], runs[1][n])


# ---------------------------------------------------------------------------
# training loop


def _desk_cfg(epochs=30, k=16, **over):
    base = dict(k=k, epochs=epochs, n_batch=16, seed=3,
                **reference_schedules(epochs))
    base.update(over)
    return TrainConfig(**base)


def test_train_smoke_finite():
    data = sample_dataset(Model1(), 1000, 1)
    cfg = _desk_cfg(epochs=3, k=32, n_neuron=32)
    params, losses = train(data, cfg, substream(1, 23))
    assert np.isfinite(losses).all()
    for _, arr in params.param_items():
        assert np.isfinite(arr).all()


def test_train_deterministic():
    data = sample_dataset(Model1(), 600, 2)
    cfg = _desk_cfg(epochs=4, k=8, n_neuron=16)
    _, l1 = train(data, cfg, substream(9, 23))
    _, l2 = train(data, cfg, substream(9, 23))
    np.testing.assert_array_equal(l1, l2)


def test_train_loss_finite_across_seeds_full_schedule():
    # exercises all schedule phases incl. sparsity at desk scale
    data = sample_dataset(Model1(), 1000, 4)
    for seed in range(5):
        cfg = _desk_cfg(epochs=60, k=16, n_neuron=24, seed=seed)
        _, losses = train(data, cfg, substream(seed, 23))
        assert np.isfinite(losses).all()


def test_train_anns_backend():
    data = sample_dataset(Model1(), 3000, 5)
    cfg = _desk_cfg(epochs=3, k=8, n_neuron=16, use_anns=True,
                    rbsp=__import__("condist.nns", fromlist=["RbspParams"]).RbspParams(
                        depth=2, queries_per_part=4, min_part=64))
    params, losses = train(data, cfg, substream(4, 23))
    assert np.isfinite(losses).all()


def test_train_stdnet_arch():
    data = sample_dataset(Model1(), 500, 6)
    cfg = _desk_cfg(epochs=3, k=8, n_neuron=16, arch="stdnet")
    _, losses = train(data, cfg, substream(5, 23))
    assert np.isfinite(losses).all()
    _, again = train(data, cfg, substream(5, 23))
    np.testing.assert_array_equal(losses, again)


def test_train_config_validation():
    with pytest.raises(InvalidArgument):
        TrainConfig(k=8, epochs=2, n_atom=9)
    with pytest.raises(InvalidArgument):
        TrainConfig(k=8, epochs=2, eps_schedule=((10, 1.0),))
    with pytest.raises(InvalidArgument):
        TrainConfig(k=8, epochs=0)


def test_schedule_lookup():
    sched = ((30, 1.0), (150, 0.1), (None, 0.05))
    assert schedule_value(sched, 1) == 1.0
    assert schedule_value(sched, 30) == 1.0
    assert schedule_value(sched, 31) == 0.1
    assert schedule_value(sched, 151) == 0.05


def test_reference_schedule_scaling():
    sched = reference_schedules(1500)
    assert sched["eps_schedule"] == ((30, 1.0), (150, 0.1), (None, 0.05))
    assert sched["sinkhorn_iters"] == ((150, 5), (None, 10))
    assert sched["sparsity_start"] == 150
    full = reference_schedules(5000)
    assert full["eps_schedule"] == ((100, 1.0), (500, 0.1), (None, 0.05))


# ---------------------------------------------------------------------------
# diagnostics


def _constant_net():
    params = init_lipnet(1, 1, 3, 4, 1, 0.1, 1e-3, substream(16))
    params.input.w[:] = 0.0
    for layer in params.hidden:
        layer.w[:] = 0.0
        layer.b[:] = 0.0
    params.output.w[:] = 0.0
    params.output.b[:] = 5.0
    params.output.row_norm[:] = 1e-9
    return params


def test_empirical_lipschitz_constant_net_is_zero():
    pairs = substream(17).uniform(0, 1, size=(50, 2, 1))
    assert empirical_lipschitz(_constant_net(), pairs) == 0.0


def test_empirical_lipschitz_identity_construction():
    # atoms(x) = x for every atom: ratio exactly 1
    n = 4
    params = init_lipnet(1, 1, 2, n, 0, float(n), 1e-3, substream(18))
    params.input.w[:] = 1.0
    params.input.b[:] = 0.0
    params.input.row_norm[:] = 1.0
    params.output.w[:] = 0.0
    params.output.w[:, 0] = 1.0
    params.output.b[:] = 0.0
    params.output.row_norm[:] = 1.0
    pairs = substream(19).uniform(0.01, 1.0, size=(50, 2, 1))
    assert abs(empirical_lipschitz(params, pairs) - 1.0) <= 1e-9


def test_empirical_lipschitz_monotone_in_probe_set():
    params = init_lipnet(1, 1, 4, 8, 2, 0.1, 1e-3, substream(20),
                         atom_positions=substream(21).uniform(-1, 1, (4, 1)))
    pairs = substream(22).uniform(0, 1, size=(60, 2, 1))
    small = empirical_lipschitz(params, pairs[:20])
    large = empirical_lipschitz(params, pairs)
    assert large >= small


def test_avg_abs_derivative_constant_net_is_zero():
    grid = np.linspace(0, 1, 21)
    np.testing.assert_allclose(avg_abs_derivative(_constant_net(), grid), 0.0,
                               atol=1e-12)


def test_avg_abs_derivative_identity_net_is_one():
    n = 4
    params = init_lipnet(1, 1, 2, n, 0, float(n), 1e-3, substream(23))
    params.input.w[:] = 1.0
    params.input.row_norm[:] = 1.0
    params.output.w[:] = 0.0
    params.output.w[:, 0] = 1.0
    params.output.row_norm[:] = 1.0
    grid = np.linspace(0.1, 1.0, 19)
    np.testing.assert_allclose(avg_abs_derivative(params, grid), 1.0, atol=1e-9)


def test_avg_abs_derivative_needs_three_points():
    with pytest.raises(InvalidArgument):
        avg_abs_derivative(_constant_net(), [0.0, 1.0])


def test_output_row_normalization_bound():
    # with exactly computed row norms the effective output rows have
    # l1 norm at most L / d_y
    params = init_lipnet(1, 1, 4, 8, 1, 0.1, 1e-3, substream(24))
    params.output.w *= 37.0  # push the rows well past the clamp
    params.output.row_norm = np.abs(params.output.w).sum(axis=1)
    c = np.minimum(1.0, 1.0 / params.output.row_norm)
    eff = params.l_scale / params.d_y * c[:, None] * params.output.w
    assert np.abs(eff).sum(axis=1).max() <= params.l_scale / params.d_y + 1e-12


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip(tmp_path):
    rng = substream(25)
    params = init_lipnet(2, 3, 4, 8, 2, 0.1, 1e-3, rng,
                         atom_positions=rng.uniform(-1, 1, (4, 3)))
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, params, seed=77, epochs_done=42)
    back, seed, done = load_checkpoint(path)
    assert (seed, done) == (77, 42)
    for (n1, a1), (n2, a2) in zip(params.param_items(), back.param_items()):
        assert n1 == n2
        np.testing.assert_array_equal(a1, a2)
    np.testing.assert_array_equal(params.input.row_norm, back.input.row_norm)
    for la, lb in zip(params.hidden, back.hidden):
        assert la.power.h_hat == lb.power.h_hat
        np.testing.assert_array_equal(la.power.u_hat, lb.power.u_hat)


def test_checkpoint_stdnet_round_trip(tmp_path):
    params = init_stdnet(1, 1, 3, 6, 2, substream(26))
    path = tmp_path / "std.ckpt"
    save_checkpoint(path, params, seed=1, epochs_done=2)
    back, _, _ = load_checkpoint(path)
    for (n1, a1), (n2, a2) in zip(params.param_items(), back.param_items()):
        np.testing.assert_array_equal(a1, a2)


def test_checkpoint_truncation_detected(tmp_path):
    params = init_lipnet(1, 1, 2, 4, 1, 0.1, 1e-3, substream(27))
    path = tmp_path / "net.ckpt"
    save_checkpoint(path, params)
    blob = path.read_bytes()
    path.write_bytes(blob[:-16])
    with pytest.raises(FormatError):
        load_checkpoint(path)
