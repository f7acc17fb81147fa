import numpy as np
import pytest

from semiconv import tensor as T
from semiconv.tensor import Tensor, NumericError


def conv2d_bruteforce(x, w, stride=1, padding="zero", pad=0):
    """Independent direct-summation convolution oracle."""
    c_out, c_in, kh, kw = w.shape
    ph, pw = (pad, pad) if isinstance(pad, int) else pad
    if padding == "zero":
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)))
    else:
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw)), mode="wrap")
    hout = (xp.shape[1] - kh) // stride + 1
    wout = (xp.shape[2] - kw) // stride + 1
    out = np.zeros((c_out, hout, wout))
    for o in range(c_out):
        for y in range(hout):
            for xx in range(wout):
                acc = 0.0
                for c in range(c_in):
                    for i in range(kh):
                        for j in range(kw):
                            acc += xp[c, y * stride + i, xx * stride + j] * w[o, c, i, j]
                out[o, y, xx] = acc
    return out


# -- elementwise ----------------------------------------------------------

def test_add():
    out = T.add(Tensor([1.0, 2.0]), Tensor([3.0, 4.0]))
    assert np.array_equal(out.data, [4.0, 6.0])


def test_relu():
    out = T.relu(Tensor([-1.0, 0.0, 2.0]))
    assert np.array_equal(out.data, [0.0, 0.0, 2.0])


def test_exp_grad_at_zero():
    a = Tensor(np.zeros(()), requires_grad=True)
    T.exp(a).backward()
    assert a.grad == 1.0


def test_elementwise_dispatch():
    out = T.elementwise("mul", Tensor([2.0]), Tensor([3.0]))
    assert out.data[0] == 6.0
    with pytest.raises(ValueError):
        T.elementwise("add", Tensor([1.0]))
    with pytest.raises(ValueError):
        T.elementwise("relu", Tensor([1.0]), Tensor([1.0]))
    with pytest.raises(ValueError):
        T.elementwise("matmul", Tensor([1.0]), Tensor([1.0]))


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        T.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))


def test_scalar_broadcasting():
    out = Tensor([1.0, 2.0]) * 3.0
    assert np.array_equal(out.data, [3.0, 6.0])
    a = Tensor([1.0, 2.0], requires_grad=True)
    s = Tensor(2.0, requires_grad=True)
    T.tsum(a * s).backward()
    assert np.array_equal(a.grad, [2.0, 2.0])
    assert s.grad == 3.0


def test_log_sqrt_domain_errors():
    with pytest.raises(ValueError):
        T.log(Tensor([1.0, -1.0]))
    with pytest.raises(ValueError):
        T.log(Tensor([0.0]))
    with pytest.raises(ValueError):
        T.sqrt(Tensor([-4.0]))


def test_nonfinite_is_an_error():
    with np.errstate(over="ignore", divide="ignore"):
        with pytest.raises(NumericError):
            T.exp(Tensor([1000.0]))
        with pytest.raises(NumericError):
            T.div(Tensor([1.0]), Tensor([0.0]))


# -- reductions -------------------------------------------------------------

def test_softmax_symmetry():
    out = T.softmax(Tensor([0.0, 0.0]))
    assert np.allclose(out.data, [0.5, 0.5], atol=0, rtol=0)


def test_l2norm_rows_345():
    out = T.l2norm_rows(Tensor([[3.0, 4.0]]), eps=0.0)
    assert np.array_equal(out.data, [5.0])


def test_mean():
    assert T.mean(Tensor([1.0, 2.0, 3.0])).item() == 2.0


def test_reduce_dispatch_and_empty_axis():
    a = Tensor(np.arange(6.0).reshape(2, 3))
    assert T.reduce("sum", a).item() == 15.0
    assert np.array_equal(T.reduce("mean", a, axes=0).data, [1.5, 2.5, 3.5])
    with pytest.raises(ValueError):
        T.reduce("sum", Tensor(np.zeros((0, 2))), axes=0)
    with pytest.raises(ValueError):
        T.reduce("prod", a)


# -- conv2d -----------------------------------------------------------------

def test_conv2d_identity_1x1():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((3, 5, 7))
    w = np.zeros((3, 3, 1, 1))
    for c in range(3):
        w[c, c, 0, 0] = 1.0
    out = T.conv2d(Tensor(x), Tensor(w))
    assert np.array_equal(out.data, x)


def test_conv2d_ones_center():
    x = np.ones((1, 3, 3))
    w = np.ones((1, 1, 3, 3))
    out = T.conv2d(Tensor(x), Tensor(w), pad=1)
    expected = conv2d_bruteforce(x, w, pad=1)
    assert out.data[0, 1, 1] == 9.0
    assert np.allclose(out.data, expected, atol=1e-12, rtol=0)


@pytest.mark.parametrize("padding,pad,stride", [
    ("zero", 1, 1), ("zero", 0, 1), ("circular", 1, 1),
    ("zero", 1, 2), ("circular", 2, 1), ("zero", (1, 2), 1),
])
def test_conv2d_matches_bruteforce(padding, pad, stride):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((2, 6, 8))
    w = rng.standard_normal((3, 2, 3, 5))
    out = T.conv2d(Tensor(x), Tensor(w), stride=stride, padding=padding, pad=pad)
    expected = conv2d_bruteforce(x, w, stride=stride, padding=padding, pad=pad)
    assert out.data.shape == expected.shape
    assert np.allclose(out.data, expected, atol=1e-12, rtol=0)


def test_conv2d_weight_grad_finite_differences():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((2, 5, 5))
    w0 = rng.standard_normal((3, 2, 3, 3)) * 0.5

    def f(w):
        return T.tsum(T.conv2d(Tensor(x), w, pad=1))

    assert T.grad_check(f, Tensor(w0), h=1e-5) < 1e-6


def test_conv2d_input_grad_finite_differences():
    rng = np.random.default_rng(4)
    x0 = rng.standard_normal((2, 4, 4))
    w = rng.standard_normal((2, 2, 3, 3)) * 0.5

    def f(x):
        return T.tsum(T.mul(T.conv2d(x, Tensor(w), padding="circular", pad=1),
                            T.conv2d(x, Tensor(w), padding="circular", pad=1)))

    assert T.grad_check(f, Tensor(x0), h=1e-5) < 1e-6


def test_conv2d_validation():
    x, w = Tensor(np.zeros((2, 4, 4))), Tensor(np.zeros((1, 2, 3, 3)))
    with pytest.raises(ValueError):
        T.conv2d(x, Tensor(np.zeros((1, 3, 3, 3))))  # channel mismatch
    with pytest.raises(ValueError):
        T.conv2d(x, Tensor(np.zeros((1, 2, 2, 2))))  # even kernel
    with pytest.raises(ValueError):
        T.conv2d(Tensor(np.zeros((1, 2, 2))), Tensor(np.zeros((1, 1, 5, 5))))
    assert T.conv2d(x, w, pad=1).data.shape == (1, 4, 4)
    assert T.same_pad(5) == 2


def test_conv2d_circular_shift_equivariance():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((2, 8, 9))
    w = rng.standard_normal((3, 2, 3, 3))
    out = T.conv2d(Tensor(x), Tensor(w), padding="circular", pad=1).data
    for dy, dx in [(1, 0), (0, 3), (5, 2)]:
        xs = np.roll(x, (dy, dx), axis=(1, 2))
        outs = T.conv2d(Tensor(xs), Tensor(w), padding="circular", pad=1).data
        assert np.max(np.abs(outs - np.roll(out, (dy, dx), axis=(1, 2)))) < 1e-9


# -- shape ops ----------------------------------------------------------------

def test_index_select_accumulates_duplicates():
    a = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
    out = T.index_select(a, 1, [0, 2, 0])
    assert np.array_equal(out.data, [[0.0, 2.0, 0.0], [3.0, 5.0, 3.0]])
    T.tsum(out).backward()
    assert np.array_equal(a.grad, [[2.0, 0.0, 1.0], [2.0, 0.0, 1.0]])


def test_broadcast_to_backward_sums():
    a = Tensor(np.array([[1.0], [2.0]]), requires_grad=True)
    out = T.broadcast_to(a, (2, 3))
    assert out.data.shape == (2, 3)
    T.tsum(out).backward()
    assert np.array_equal(a.grad, [[3.0], [3.0]])


def test_clamp_gradient_mask():
    a = Tensor(np.array([-1.0, 0.5, 2.0]), requires_grad=True)
    T.tsum(T.clamp(a, 0.0, 1.0)).backward()
    assert np.array_equal(a.grad, [0.0, 1.0, 0.0])


def test_scale_gradient():
    a = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    T.tsum(T.scale_gradient(a, 0.25)).backward()
    assert np.array_equal(a.grad, [0.25, 0.25])
    b = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    assert T.scale_gradient(b, 1.0) is b  # exact identity at factor 1


# -- grad_check harness -------------------------------------------------------

def test_grad_check_quadratic():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    out = T.tsum(T.mul(x, x))
    out.backward()
    assert np.allclose(x.grad, [2.0, 4.0], atol=0, rtol=0)
    assert T.grad_check(lambda t: T.tsum(T.mul(t, t)), Tensor([1.0, 2.0])) < 1e-7


def test_grad_check_relu_strictly_positive():
    assert T.grad_check(lambda t: T.tsum(T.relu(t)), Tensor([0.5, 1.5, 2.0])) < 1e-7


def test_grad_check_constant_function():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    f = Tensor(np.array(3.0), requires_grad=True) * 1.0
    # f never touches x: gradient must be exactly zero
    assert T.grad_check(lambda t: Tensor(np.array(3.0)) * 1.0, Tensor([1.0, 2.0])) == 0.0
    del x, f


def test_grad_check_rejects_bad_inputs():
    with pytest.raises(ValueError):
        T.grad_check(lambda t: t, Tensor([1.0, 2.0]))  # non-scalar output
    with pytest.raises(ValueError):
        T.grad_check(lambda t: T.tsum(t), Tensor([1.0]), h=1e-2)


OPS_FOR_GRADCHECK = [
    ("add", lambda t: T.tsum(T.add(t, Tensor(np.full(t.shape, 0.7))))),
    ("sub", lambda t: T.tsum(T.sub(Tensor(np.full(t.shape, 0.7)), t))),
    ("mul", lambda t: T.tsum(T.mul(t, t))),
    ("div", lambda t: T.tsum(T.div(1.0, T.add(T.mul(t, t), 2.0)))),
    ("exp", lambda t: T.tsum(T.exp(t))),
    ("log", lambda t: T.tsum(T.log(T.add(T.mul(t, t), 1.0)))),
    ("sqrt", lambda t: T.tsum(T.sqrt(T.add(T.mul(t, t), 1.0)))),
    ("sigmoid", lambda t: T.tsum(T.sigmoid(t))),
    ("softmax", lambda t: T.tsum(T.mul(T.softmax(t, axis=0), Tensor(np.arange(t.size, dtype=float))))),
    ("l2norm", lambda t: T.tsum(T.l2norm_rows(T.reshape(t, (2, -1))))),
    ("mean", lambda t: T.mean(T.mul(t, t))),
]


@pytest.mark.parametrize("name,f", OPS_FOR_GRADCHECK, ids=[n for n, _ in OPS_FOR_GRADCHECK])
def test_grad_check_all_ops(name, f):
    # randomized inputs bounded away from non-smooth points
    for seed in range(5):
        rng = np.random.default_rng(100 + seed)
        x = rng.uniform(0.2, 1.5, size=8) * rng.choice([-1.0, 1.0], size=8)
        if name in ("log", "sqrt"):
            x = np.abs(x) + 0.5
        assert T.grad_check(f, Tensor(x)) < 1e-4


def test_forward_backward_bit_reproducible():
    def run():
        rng = np.random.default_rng(42)
        x = Tensor(rng.standard_normal((2, 6, 6)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)), requires_grad=True)
        h = T.relu(T.conv2d(x, w, padding="circular", pad=1))
        loss = T.mean(T.mul(h, h))
        loss.backward()
        return loss.item(), w.grad.copy()

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    assert np.array_equal(g1, g2)


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        Tensor([1.0, 2.0], requires_grad=True).backward()


def test_item_requires_single_element():
    with pytest.raises(ValueError):
        Tensor([1.0, 2.0]).item()
