import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from posetok.errors import InvalidArgument, ShapeError
from posetok.nn import tensor as T
from posetok.nn.checkpoint import load_checkpoint, save_checkpoint
from posetok.nn.layers import MLP, Conv1d, Linear, ResBlock
from posetok.nn.optim import SGD, Adam, AdamState, adam_step

from .helpers import numeric_grad, rel_err


def check_grad(fn, *shapes, seed=0, tol=1e-6, positive=False):
    """Compare autograd against central differences for ``sum(w * fn(*xs))``."""
    rng = np.random.default_rng(seed)
    xs = [rng.uniform(0.5, 2.0, size=s) if positive else rng.normal(size=s) for s in shapes]
    out_shape = fn(*[T.Tensor(x) for x in xs]).shape
    w = rng.normal(size=out_shape)
    ts = [T.Tensor(x, requires_grad=True) for x in xs]
    T.tsum(fn(*ts) * w).backward()
    for i, x in enumerate(xs):

        def f(xi, i=i):
            args = [T.Tensor(xi if j == i else xs[j]) for j in range(len(xs))]
            return float(np.sum(w * fn(*args).data))

        assert rel_err(ts[i].grad, numeric_grad(f, x)) < tol, f"argument {i}"


def naive_conv1d(x, w, b):
    """Oracle: direct loops over batch, output channel and position."""
    bsz, cin, length = x.shape
    cout, _, k = w.shape
    pad = k // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad)))
    out = np.zeros((bsz, cout, length))
    for n in range(bsz):
        for o in range(cout):
            for l in range(length):
                out[n, o, l] = np.sum(xp[n, :, l : l + k] * w[o]) + b[o]
    return out


class TestOpGradients:
    @pytest.mark.parametrize(
        "fn, shapes",
        [
            (T.add, [(3, 4), (4,)]),
            (T.sub, [(3, 1), (1, 4)]),
            (T.mul, [(2, 3), (2, 3)]),
            (T.matmul, [(2, 3, 4), (4, 5)]),
            (T.cross, [(5, 3), (5, 3)]),
            (lambda a, b: T.concat([a, b], axis=1), [(2, 3), (2, 2)]),
            (lambda a, b: T.stack([a, b], axis=-1), [(2, 3), (2, 3)]),
            (lambda a, b: T.maximum(a, b), [(4, 3), (4, 3)]),
        ],
        ids=["add", "sub", "mul", "matmul", "cross", "concat", "stack", "maximum"],
    )
    def test_binary(self, fn, shapes):
        check_grad(fn, *shapes)

    @pytest.mark.parametrize(
        "fn",
        [T.exp, T.tanh, T.gelu, T.sin, T.cos, T.tabs, T.relu, lambda a: T.softmax(a, -1), lambda a: T.norm(a, -1)],
        ids=["exp", "tanh", "gelu", "sin", "cos", "abs", "relu", "softmax", "norm"],
    )
    def test_unary(self, fn):
        check_grad(fn, (3, 5))

    @pytest.mark.parametrize("fn", [T.log, T.sqrt, lambda a: 1.0 / a, lambda a: a**1.5], ids=["log", "sqrt", "rdiv", "pow"])
    def test_unary_positive(self, fn):
        check_grad(fn, (3, 4), positive=True)

    @pytest.mark.parametrize(
        "fn",
        [
            lambda a: a[1:, ::2],
            lambda a: a[np.array([0, 2, 0])],
            lambda a: T.take_rows(a, np.array([[1, 1], [0, 2]])),
            lambda a: T.reshape(a, (4, 3)),
            lambda a: T.transpose(a, (1, 0)),
            lambda a: T.mean(a, axis=0),
            lambda a: T.tsum(a, axis=1, keepdims=True),
        ],
        ids=["slice", "fancy", "take_rows", "reshape", "transpose", "mean", "sum"],
    )
    def test_indexing_and_reductions(self, fn):
        check_grad(fn, (3, 4))

    def test_conv1d(self):
        check_grad(T.conv1d, (2, 3, 7), (4, 3, 3), (4,))
        check_grad(lambda x, w: T.conv1d(x, w), (1, 2, 5), (3, 2, 5))

    def test_reused_node_accumulates(self):
        x = T.Tensor(np.array([1.0, 2.0]), requires_grad=True)
        y = x * x + x
        T.tsum(y * y).backward()
        np.testing.assert_allclose(x.grad, 2 * (x.data**2 + x.data) * (2 * x.data + 1))

    def test_stop_gradient(self):
        x = T.Tensor(np.ones(3), requires_grad=True)
        T.tsum(x * T.stop_gradient(x * 3.0)).backward()
        np.testing.assert_allclose(x.grad, 3.0)


class TestOpValues:
    @given(arrays(np.float64, 10, elements=st.floats(-6, 6)))
    def test_gelu_near_exact_erf_form(self, x):
        exact = np.array([0.5 * v * (1 + math.erf(v / math.sqrt(2))) for v in x])
        np.testing.assert_allclose(T.gelu(T.Tensor(x)).data, exact, atol=1e-3)

    def test_conv1d_matches_loops(self, rng):
        x, w, b = rng.normal(size=(3, 4, 9)), rng.normal(size=(5, 4, 3)), rng.normal(size=5)
        out = T.conv1d(T.Tensor(x), T.Tensor(w), T.Tensor(b)).data
        np.testing.assert_allclose(out, naive_conv1d(x, w, b), atol=1e-12)

    def test_softmax_is_stable(self):
        out = T.softmax(T.Tensor(np.array([[1000.0, 1000.0, -1000.0]]))).data
        np.testing.assert_allclose(out, [[0.5, 0.5, 0.0]])

    def test_float32_preserved(self):
        x = T.Tensor(np.ones((2, 3), dtype=np.float32))
        assert (T.gelu(x) * 2.0 + 1.0).dtype == np.float32


class TestErrors:
    def test_backward_needs_seed_for_vectors(self):
        with pytest.raises(InvalidArgument):
            T.Tensor(np.ones(3), requires_grad=True).backward()

    @pytest.mark.parametrize(
        "fn",
        [
            lambda: T.add(T.Tensor(np.ones(3)), np.ones(4)),
            lambda: T.matmul(T.Tensor(np.ones((2, 3))), np.ones((2, 3))),
            lambda: T.conv1d(T.Tensor(np.ones((1, 2, 4))), T.Tensor(np.ones((1, 3, 3)))),
            lambda: T.conv1d(T.Tensor(np.ones((1, 2, 4))), T.Tensor(np.ones((1, 2, 2)))),
            lambda: T.reshape(T.Tensor(np.ones(5)), (2, 3)),
        ],
        ids=["broadcast", "matmul", "conv-channels", "conv-even", "reshape"],
    )
    def test_shape_errors(self, fn):
        with pytest.raises(ShapeError):
            fn()

    def test_no_grad_records_nothing(self):
        x = T.Tensor(np.ones(2), requires_grad=True)
        with T.no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_debug_nan(self):
        with T.debug_nan(), np.errstate(invalid="ignore"), pytest.raises(FloatingPointError):
            T.log(T.Tensor(np.array([-1.0])))


class TestLayers:
    def test_linear_and_mlp_shapes(self, rng):
        x = T.Tensor(rng.normal(size=(4, 7)))
        assert Linear(7, 3, rng)(x).shape == (4, 3)
        assert MLP(7, 16, 2, rng)(x).shape == (4, 2)

    def test_parameter_discovery_order(self, rng):
        block = ResBlock(4, rng)
        names = [n for n, _ in block.named_parameters()]
        assert names == ["conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias"]

    def test_state_dict_roundtrip(self, rng):
        a, b = Conv1d(3, 5, rng), Conv1d(3, 5, rng)
        b.load_state_dict(a.state_dict())
        x = T.Tensor(rng.normal(size=(2, 3, 6)))
        np.testing.assert_array_equal(a(x).data, b(x).data)

    def test_load_state_dict_errors(self, rng):
        lin = Linear(2, 2, rng)
        with pytest.raises(KeyError):
            lin.load_state_dict({})
        with pytest.raises(ValueError):
            lin.load_state_dict({"weight": np.zeros((3, 3)), "bias": np.zeros(2)})


class TestOptimizers:
    def test_adam_matches_hand_update(self):
        # oracle: the textbook bias-corrected recurrence written out for two steps
        p = np.array([1.0, -2.0])
        grads = [np.array([0.5, -1.0]), np.array([0.1, 0.3])]
        state = AdamState(learning_rate=0.1)
        m = v = np.zeros(2)
        expected = p.copy()
        for t, g in enumerate(grads, start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            expected = expected - 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
            adam_step(state, [p], [g])
        np.testing.assert_allclose(p, expected, rtol=1e-14)

    def test_adam_first_step_is_lr_sign(self):
        x = T.Tensor(np.array([3.0, -3.0]), requires_grad=True)
        opt = Adam([x], lr=0.5)
        T.tsum(x * x).backward()
        opt.step()
        np.testing.assert_allclose(x.data, [2.5, -2.5], atol=1e-7)

    def test_adam_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adam_step(AdamState(), [np.zeros(2)], [np.zeros(3)])

    @pytest.mark.parametrize("momentum", [0.0, 0.9])
    def test_sgd_geometric_oracle(self, momentum):
        # on f = x^2 / 2 heavy ball follows v' = m v + x, x' = x - lr v
        x = T.Tensor(np.array([1.0]), requires_grad=True)
        opt = SGD([x], lr=0.1, momentum=momentum)
        xr, vr = 1.0, 0.0
        for _ in range(20):
            opt.zero_grad()
            T.tsum(0.5 * x * x).backward()
            opt.step()
            vr = momentum * vr + xr
            xr = xr - 0.1 * vr
        assert x.data[0] == pytest.approx(xr, rel=1e-12)

    def test_adam_minimizes_quadratic(self, rng):
        target = rng.normal(size=5)
        x = T.Tensor(np.zeros(5), requires_grad=True)
        opt = Adam([x], lr=0.05)
        for _ in range(500):
            opt.zero_grad()
            d = x - target
            T.tsum(d * d).backward()
            opt.step()
        np.testing.assert_allclose(x.data, target, atol=1e-3)


class TestCheckpoint:
    def test_roundtrip_preserves_dtype_and_values(self, tmp_path, rng):
        tensors = {"a": rng.normal(size=(2, 3)).astype(np.float32), "b": rng.normal(size=(4,)), "s": np.float64(3.5)}
        save_checkpoint(tmp_path / "ck", tensors, {"note": "x"})
        back, meta = load_checkpoint(tmp_path / "ck.json")
        assert meta == {"note": "x"}
        for k, v in tensors.items():
            assert back[k].dtype == np.asarray(v).dtype
            np.testing.assert_array_equal(back[k], v)

    def test_blob_is_little_endian(self, tmp_path):
        save_checkpoint(tmp_path / "ck.json", {"x": np.array([1.0], dtype=np.float32)})
        assert (tmp_path / "ck.bin").read_bytes() == bytes.fromhex("0000803f")

    def test_unknown_dtype(self, tmp_path):
        path = save_checkpoint(tmp_path / "ck.json", {"x": np.zeros(1)})
        path.write_text(path.read_text().replace('"f64"', '"i8"'))
        from posetok.errors import DataError

        with pytest.raises(DataError):
            load_checkpoint(path)
