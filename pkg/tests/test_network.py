"""Network tests: direct-convolution oracle, finite-difference gradients,
optimizer identities, and file round trips."""

import numpy as np
import pytest

from mlao.network import (
    FormatError,
    Hyper,
    _conv_forward,
    _gmax_forward,
    _gmax_scatter,
    _maxpool_backward,
    _maxpool_forward,
    adamw_step,
    count_parameters,
    forward,
    forward_batch,
    init_model,
    init_train_state,
    load_model,
    loss_and_grad,
    parameter_count,
    save_model,
)
from mlao.pseudopsf import PseudoStack


def _direct_conv(x, w, b):
    """O(everything) reference: 3x3 same-pad convolution, zero padding."""
    bs, cin, h, wd = x.shape
    cout = w.shape[0]
    out = np.zeros((bs, cout, h, wd))
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    for n in range(bs):
        for co in range(cout):
            for i in range(h):
                for j in range(wd):
                    acc = 0.0
                    for ci in range(cin):
                        for di in range(3):
                            for dj in range(3):
                                acc += w[co, ci, di, dj] * xp[n, ci, i + di, j + dj]
                    out[n, co, i, j] = acc + b[co]
    return out


def test_conv_matches_direct_reference():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 3, 6, 6))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    got, _ = _conv_forward(x, w, b)
    np.testing.assert_allclose(got, _direct_conv(x, w, b), atol=1e-12)


def test_parameter_count_table():
    for m in (2, 4, 10, 18, 28):
        for n in (5, 7, 8, 9):
            model = init_model(np.random.default_rng(0), m, n)
            count = parameter_count(model)
            assert count == count_parameters(m, n)
            assert 28000 <= count <= 32000
    assert count_parameters(2, 9) == 28689


def test_init_determinism_and_zero_biases():
    a = init_model(np.random.default_rng(42), 4, 5)
    b = init_model(np.random.default_rng(42), 4, 5)
    for (na, pa), (nb, pb) in zip(a.params().items(), b.params().items()):
        assert na == nb
        np.testing.assert_array_equal(pa, pb)
    for bias in (*a.conv_b, a.fc1_b, a.out_b):
        assert not bias.any()
    # storage contract: every value exactly representable in float32
    for p in a.params().values():
        np.testing.assert_array_equal(p, p.astype(np.float32).astype(np.float64))


def test_forward_shapes_and_input_tap():
    rng = np.random.default_rng(3)
    model = init_model(rng, 2, 5)
    x = rng.uniform(0.0, 2.0, (3, 2, 32, 32))
    out, cache = forward_batch(model, x, want_cache=True)
    assert out.shape == (3, 5)
    # the first tap section is the per-channel global max of the raw input
    np.testing.assert_array_equal(cache["concat"][:, :2], x.max(axis=(2, 3)))
    with pytest.raises(ValueError):
        forward_batch(model, x[:, :, :16, :16])
    with pytest.raises(ValueError):
        forward_batch(model, x[:, :1])


def test_forward_returns_mode_vector():
    rng = np.random.default_rng(5)
    model = init_model(rng, 2, 5, scheme_tag="ast2", corrected_modes=(5, 6, 7, 8, 11))
    stack = PseudoStack(channels=rng.standard_normal((2, 32, 32)), scheme_tag="ast2")
    vec = forward(model, stack)
    assert vec.modes == (5, 6, 7, 8, 11)
    with pytest.raises(ValueError):
        forward(model, PseudoStack(channels=stack.channels, scheme_tag="2n"))


def test_pool_and_gmax_tie_break_first_index():
    x = np.ones((1, 1, 4, 4))
    out, idx = _maxpool_forward(x)
    assert (idx == 0).all()
    back = _maxpool_backward(np.ones((1, 1, 2, 2)), idx, 4, 4)
    expect = np.zeros((4, 4))
    expect[0, 0] = expect[0, 2] = expect[2, 0] = expect[2, 2] = 1.0
    np.testing.assert_array_equal(back[0, 0], expect)
    tap, tidx = _gmax_forward(x)
    assert tap[0, 0] == 1.0 and tidx[0, 0] == 0
    scat = _gmax_scatter(np.array([[2.0]]), tidx, (1, 1, 4, 4))
    assert scat[0, 0, 0, 0] == 2.0 and scat.sum() == 2.0


def _loss_and_routing(model, x, labels, hyper):
    """Loss plus the argmax routing (pool and global-max indices).

    The loss surface is piecewise smooth: it has kinks wherever a max
    changes its winning index (and where an L1 term crosses zero). A
    finite difference only estimates the derivative where the function is
    smooth across the whole stencil, so the check below compares routing
    at w-h, w, w+h and skips entries whose stencil straddles a kink.
    """
    out, cache = forward_batch(model, x, want_cache=True)
    diff = out - labels
    loss = float(np.sqrt(np.mean(diff * diff)))
    params = model.params()
    for name in model.weight_names():
        w = params[name]
        loss += hyper.l1 * float(np.abs(w).sum()) + hyper.l2 * float((w * w).sum())
    routing = [blk["pidx"] for blk in cache["blocks"]]
    routing += [meta[0] for meta in cache["tap_meta"]]
    return loss, routing


def _same_routing(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def test_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    model = init_model(rng, 2, 5)
    hyper = Hyper(l1=1e-6, l2=1e-5)
    h = 1e-4
    # several independent batches: a kink's location depends on the input,
    # so an entry whose stencil straddles a pooling kink on one batch is
    # almost always smooth on another
    batches = []
    for _ in range(4):
        x = 0.5 * rng.standard_normal((2, 2, 32, 32))
        labels = rng.standard_normal((2, 5))
        loss0, grads = loss_and_grad(model, x, labels, hyper)
        base_loss, routing = _loss_and_routing(model, x, labels, hyper)
        assert loss0 == pytest.approx(base_loss, rel=1e-12)
        batches.append((x, labels, grads, routing))
    params = model.params()
    worst = 0.0
    regularized = set(model.weight_names())
    for name, p in params.items():
        flat = p.reshape(-1)
        quota = min(6, flat.size)
        checked = 0
        for k in rng.permutation(flat.size):
            if checked >= quota:
                break
            orig = flat[k]
            if name in regularized and abs(orig) <= 2 * h:  # L1 kink in stencil
                continue
            for x, labels, grads, routing in batches:
                flat[k] = orig + h
                lp, rp = _loss_and_routing(model, x, labels, hyper)
                flat[k] = orig - h
                lm, rm = _loss_and_routing(model, x, labels, hyper)
                flat[k] = orig
                if not (_same_routing(rp, routing) and _same_routing(rm, routing)):
                    continue
                fd = (lp - lm) / (2 * h)
                an = grads[name].reshape(-1)[k]
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-8))
                checked += 1
                break
        assert checked >= quota, f"{name}: only {checked} smooth stencils found"
    assert worst < 1e-4, f"worst relative gradient error {worst:.3e}"


def test_zero_residual_gradient_is_pure_regularizer():
    rng = np.random.default_rng(13)
    model = init_model(rng, 2, 5)
    x = rng.uniform(0.0, 1.0, (2, 2, 32, 32))
    out, _ = forward_batch(model, x)
    hyper = Hyper(l1=1e-6, l2=1e-5)
    loss, grads = loss_and_grad(model, x, out, hyper)
    for name in ("conv1_b", "conv4_b", "fc1_b", "out_b"):
        assert not grads[name].any()
    w = model.fc1_w
    np.testing.assert_allclose(
        grads["fc1_w"], hyper.l1 * np.sign(w) + 2 * hyper.l2 * w, atol=1e-15
    )
    reg = sum(
        hyper.l1 * np.abs(model.params()[n]).sum()
        + hyper.l2 * (model.params()[n] ** 2).sum()
        for n in model.weight_names()
    )
    assert loss == pytest.approx(reg)


def test_adamw_zero_grad_is_pure_decay():
    p0 = np.array([1.0, -2.0, 0.5], dtype=np.float64)
    params = {"w": p0.copy()}
    hyper = Hyper(lr=0.1, weight_decay=0.01)
    state = init_train_state_like(params, hyper)
    adamw_step(params, {"w": np.zeros(3)}, state)
    expect = (p0 * (1 - 0.1 * 0.01)).astype(np.float32).astype(np.float64)
    np.testing.assert_array_equal(params["w"], expect)


def init_train_state_like(params, hyper):
    class _Stub:
        def __init__(self, p):
            self._p = p

        def params(self):
            return self._p

    return init_train_state(_Stub(params), hyper)


def test_adamw_quadratic_convergence():
    params = {"w": np.array([0.0])}
    hyper = Hyper(lr=0.1, weight_decay=0.0)
    state = init_train_state_like(params, hyper)
    for _ in range(500):
        grad = {"w": 2.0 * (params["w"] - 3.0)}
        adamw_step(params, grad, state)
    assert abs(params["w"][0] - 3.0) < 1e-3


def test_training_step_reduces_loss_on_fixed_batch():
    rng = np.random.default_rng(17)
    model = init_model(rng, 2, 5)
    x = 0.5 * rng.standard_normal((8, 2, 32, 32))
    labels = 0.3 * rng.standard_normal((8, 5))
    hyper = Hyper(lr=3e-3)
    state = init_train_state(model, hyper)
    params = model.params()
    first, _ = loss_and_grad(model, x, labels, hyper)
    loss = first
    for _ in range(30):
        loss, grads = loss_and_grad(model, x, labels, hyper)
        adamw_step(params, grads, state)
    assert loss < 0.7 * first


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(23)
    model = init_model(rng, 4, 5, scheme_tag="ast4", corrected_modes=(5, 6, 7, 8, 11))
    # take a few optimizer steps so saved values are not just init values
    x = rng.standard_normal((2, 4, 32, 32))
    labels = rng.standard_normal((2, 5))
    state = init_train_state(model)
    for _ in range(3):
        _, grads = loss_and_grad(model, x, labels)
        adamw_step(model.params(), grads, state)
    path = tmp_path / "model.bin"
    save_model(path, model)
    loaded = load_model(path)
    assert loaded.n_channels == 4 and loaded.n_modes == 5
    assert loaded.scheme_tag == "ast4"
    assert loaded.corrected_modes == (5, 6, 7, 8, 11)
    for name, p in model.params().items():
        np.testing.assert_array_equal(loaded.params()[name], p)
    # resaving the loaded model reproduces the file byte for byte
    path2 = tmp_path / "model2.bin"
    save_model(path2, loaded)
    assert path.read_bytes() == path2.read_bytes()


def test_load_rejects_bad_files(tmp_path):
    rng = np.random.default_rng(29)
    model = init_model(rng, 2, 5, scheme_tag="ast2", corrected_modes=(5, 6, 7, 8, 11))
    path = tmp_path / "model.bin"
    save_model(path, model)
    data = path.read_bytes()

    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTMAGIC" + data[8:])
    with pytest.raises(FormatError):
        load_model(bad)
    bad.write_bytes(data[: len(data) // 2])
    with pytest.raises(FormatError):
        load_model(bad)
    bad.write_bytes(data + b"\x00")
    with pytest.raises(FormatError):
        load_model(bad)
    with pytest.raises(FormatError):
        load_model(path, expect_channels=4)
    with pytest.raises(FormatError):
        load_model(path, expect_modes=9)
    with pytest.raises(FormatError):
        load_model(path, expect_scheme="2n")


def test_init_rejects_degenerate_geometry():
    with pytest.raises(ValueError):
        init_model(np.random.default_rng(0), 0, 5)
    with pytest.raises(ValueError):
        init_model(np.random.default_rng(0), 2, 0)
