import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dkseld.autodiff import Adam, Linear, Parameter, Tensor, adam_step, load_checkpoint, no_grad, save_checkpoint
from dkseld.autodiff import functional as F
from dkseld.autodiff.nn import MultiHeadSelfAttention, mhsa
from dkseld.errors import ConfigurationError, ContractError, DimensionError, FormatError

from grad_cases import block_cases, check, operator_cases

OPS = operator_cases()
BLOCKS = block_cases()


@pytest.mark.parametrize("name", sorted(OPS))
def test_operator_gradcheck(name):
    fn, inputs = OPS[name]
    assert check(fn, inputs) <= 1e-5


@pytest.mark.parametrize("name", sorted(BLOCKS))
def test_block_gradcheck(name):
    fn, inputs = BLOCKS[name]
    assert check(fn, inputs) <= 1e-5


def _naive_conv(x, w, b, d):
    bsz, c, t, f = x.shape
    co, _, k, _ = w.shape
    p = d * (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros((bsz, co, t, f))
    for n in range(bsz):
        for o in range(co):
            for i in range(t):
                for j in range(f):
                    acc = b[o]
                    for ci in range(c):
                        for u in range(k):
                            for v in range(k):
                                acc += w[o, ci, u, v] * xp[n, ci, i + d * u, j + d * v]
                    out[n, o, i, j] = acc
    return out


def test_conv_identity_kernel(rng):
    x = rng.standard_normal((2, 3, 5, 4))
    w = np.eye(3).reshape(3, 3, 1, 1)
    np.testing.assert_array_equal(F.conv2d(Tensor(x), Tensor(w)).data, x)


def test_conv_dilation_two_receptive_field():
    x = np.zeros((1, 1, 11, 11))
    x[0, 0, 5, 5] = 1.0
    y = F.conv2d(Tensor(x), Tensor(np.ones((1, 1, 3, 3))), dilation=2).data[0, 0]
    rows, cols = np.nonzero(y)
    assert rows.max() - rows.min() + 1 == 5
    assert cols.max() - cols.min() + 1 == 5


@pytest.mark.parametrize("d", [1, 2])
def test_conv_matches_naive_loops(rng, d):
    x = rng.standard_normal((2, 3, 5, 5))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    got = F.conv2d(Tensor(x), Tensor(w), Tensor(b), dilation=d).data
    np.testing.assert_allclose(got, _naive_conv(x, w, b, d), atol=1e-12)


def test_conv_channel_mismatch(rng):
    with pytest.raises(DimensionError):
        F.conv2d(Tensor(rng.standard_normal((1, 2, 3, 3))), Tensor(rng.standard_normal((1, 3, 3, 3))))


def test_global_pool_examples(rng):
    np.testing.assert_array_equal(F.global_avg_pool_tf(Tensor(np.full((2, 3, 4, 5), 2.5))).data, 2.5)
    x = rng.standard_normal((2, 3, 1, 1))
    np.testing.assert_array_equal(F.global_avg_pool_tf(Tensor(x)).data, x[:, :, 0, 0])
    x = rng.standard_normal((2, 3, 6, 7))
    np.testing.assert_allclose(F.global_avg_pool_tf(Tensor(x)).data, x.mean(axis=(2, 3)), atol=1e-12)


def test_softmax_relu_examples():
    np.testing.assert_array_equal(F.softmax(Tensor([[1.3, 1.3]]), axis=1).data, [[0.5, 0.5]])
    np.testing.assert_array_equal(F.relu(Tensor([-1.0, 2.0])).data, [0.0, 2.0])
    with pytest.raises(DimensionError):
        F.softmax(Tensor(np.ones((2, 2))), axis=2)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, (3, 5), elements=st.floats(-50, 50)))
def test_softmax_is_a_distribution(x):
    s = F.softmax(Tensor(x), axis=-1).data
    assert np.all(s >= 0)
    np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-12)


def test_layer_norm_moments(rng):
    x = rng.standard_normal((4, 3, 16)) * 5 + 2
    y = F.layer_norm(Tensor(x), Tensor(np.ones(16)), Tensor(np.zeros(16)), eps=0.0).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-10)


def _identity_linear(d):
    lin = Linear(d, d, np.random.default_rng(0), dtype=np.float64)
    lin.weight.data = np.eye(d)
    lin.bias.data = np.zeros(d)
    return lin


def test_mhsa_single_token_is_value_projection(rng):
    d = 6
    ident = [_identity_linear(d) for _ in range(3)]
    wv = Linear(d, d, rng, dtype=np.float64)
    x = Tensor(rng.standard_normal((2, 1, d)))
    out = mhsa(x, 2, ident[0], ident[1], wv, ident[2]).data
    np.testing.assert_allclose(out, wv(x).data, atol=1e-12)


def test_mhsa_matches_matrix_form(rng):
    b, t, d, h = 2, 5, 8, 2
    layer = MultiHeadSelfAttention(d, h, rng, dtype=np.float64)
    x = rng.standard_normal((b, t, d))
    got, attn = mhsa(Tensor(x), h, layer.wq, layer.wk, layer.wv, layer.wo, return_attention=True)
    np.testing.assert_allclose(attn.sum(axis=-1), 1.0, atol=1e-12)

    def proj(lin, v):
        return v @ lin.weight.data.T + lin.bias.data

    q, k, v = proj(layer.wq, x), proj(layer.wk, x), proj(layer.wv, x)
    dh = d // h
    heads = []
    for i in range(h):
        sl = slice(i * dh, (i + 1) * dh)
        s = q[..., sl] @ np.swapaxes(k[..., sl], 1, 2) / np.sqrt(dh)
        s = np.exp(s - s.max(axis=-1, keepdims=True))
        s /= s.sum(axis=-1, keepdims=True)
        heads.append(s @ v[..., sl])
    expected = proj(layer.wo, np.concatenate(heads, axis=-1))
    np.testing.assert_allclose(got.data, expected, atol=1e-10)


def test_mhsa_heads_must_divide(rng):
    with pytest.raises(ConfigurationError):
        MultiHeadSelfAttention(6, 4, rng)


def test_mse_examples(rng):
    p = rng.standard_normal((3, 4))
    assert F.mse(Tensor(p), p).item() == 0.0
    assert F.mse(Tensor(p + 1.0), p).item() == pytest.approx(1.0, abs=1e-12)
    q = rng.standard_normal((3, 4))
    assert F.mse(Tensor(p), q).item() == pytest.approx(((p - q) ** 2).sum() / 12, rel=1e-14)
    with pytest.raises(DimensionError):
        F.mse(Tensor(p), q[:2])


def test_mse_gradient_is_analytic(rng):
    p = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    q = rng.standard_normal((3, 4))
    F.mse(p, q).backward()
    np.testing.assert_allclose(p.grad, 2 * (p.data - q) / 12, atol=1e-15)


def test_backward_contracts(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()
    loss = F.sum(x * x)
    loss.backward()
    with pytest.raises(ContractError):
        loss.backward()
    with pytest.raises(ContractError):
        F.sum(Tensor(np.ones(3))).backward()


def test_gradients_accumulate_over_shared_use(rng):
    x = Tensor(rng.standard_normal(4), requires_grad=True)
    F.sum(x * x + x).backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_no_grad_records_nothing(rng):
    x = Tensor(rng.standard_normal(3), requires_grad=True)
    with no_grad():
        y = F.sum(x * x)
    assert not y.requires_grad


def test_forward_deterministic(rng):
    x = Tensor(rng.standard_normal((1, 4, 5, 5)))
    w = Tensor(rng.standard_normal((4, 4, 3, 3)))
    assert np.array_equal(F.conv2d(x, w, dilation=2).data, F.conv2d(x, w, dilation=2).data)


def test_adam_zero_gradient_keeps_params():
    p = Parameter(np.array([1.0, -2.0]))
    adam_step([p], [np.zeros(2)], lr=0.1, step=1)
    np.testing.assert_array_equal(p.data, [1.0, -2.0])


def test_adam_first_step_is_signed_lr():
    p = Parameter(np.array([1.0, -2.0, 0.5]))
    adam_step([p], [np.array([3.0, -0.01, 200.0])], lr=0.1, step=1)
    np.testing.assert_allclose(p.data - [1.0, -2.0, 0.5], [-0.1, 0.1, -0.1], rtol=1e-5)


def test_adam_converges_on_square():
    w = Parameter(np.array([1.0]))
    opt = Adam([w], lr=0.1)
    for _ in range(100):
        opt.zero_grad()
        F.sum(w * w).backward()
        opt.step()
    assert abs(w.data[0]) < 0.05


def test_adam_rejects_nonpositive_lr():
    with pytest.raises(ConfigurationError):
        Adam([Parameter(np.zeros(1))], lr=0.0)
    with pytest.raises(ConfigurationError):
        adam_step([Parameter(np.zeros(1))], [np.zeros(1)], lr=-1.0, step=1)


def test_checkpoint_round_trip_and_tamper(tmp_path, rng):
    state = {"a.weight": rng.standard_normal((3, 4)).astype(np.float32), "b": np.ones(2, np.float32)}
    save_checkpoint(tmp_path / "m.ck", state, {"note": 1})
    back, meta = load_checkpoint(tmp_path / "m.ck")
    assert list(back) == list(state) and meta == {"note": 1}
    for k in state:
        np.testing.assert_array_equal(back[k], state[k])
    raw = bytearray((tmp_path / "m.ck").read_bytes())
    raw[-1] ^= 0xFF
    (tmp_path / "bad.ck").write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "bad.ck")
