import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dettoken import diffcore as dc
from dettoken.diffcore import Graph, Tensor, backward, check_grad, finite_diff_grad
from dettoken.diffcore import checkpoint as ckpt


def leaf(a):
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def test_square_grad():
    x = leaf(3.0)
    with Graph() as g:
        y = x * x
    grads = backward(g, y)
    assert grads[x] == pytest.approx(6.0)


def test_softmax_sum_has_zero_grad():
    x = leaf([0.0, 0.0, 0.0])
    with Graph() as g:
        y = dc.softmax(x).sum()
    np.testing.assert_allclose(backward(g, y)[x], 0.0, atol=1e-15)


def test_ce_of_softmax_matches_finite_differences():
    rng = np.random.default_rng(0)
    W = leaf(rng.normal(size=(3, 3)))
    v = Tensor(rng.normal(size=(3, 1)))

    def f(W):
        p = dc.softmax((W @ v).reshape(1, 3))
        return -dc.log(p[0, 2])
    res = check_grad("ce-softmax", f, [W], h=1e-5, tol=1e-5)
    assert res.ok, res.line()


def test_finite_diff_examples():
    np.testing.assert_allclose(finite_diff_grad(lambda x: x.sum(), np.array([1.0, -2.0, 7.0])), 1.0, atol=1e-9)
    np.testing.assert_allclose(finite_diff_grad(lambda x: x[0] * x[1], np.array([2.0, 5.0])), [5.0, 2.0], atol=1e-8)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_finite_diff_reports_nonfinite_coordinate():
    with pytest.raises(FloatingPointError, match="coordinate"):
        finite_diff_grad(lambda x: np.log(x).sum(), np.array([1.0, 1e-6]), h=1e-5)


def test_non_scalar_loss_rejected():
    x = leaf([1.0, 2.0])
    with Graph() as g:
        y = x * 2.0
    with pytest.raises(ValueError):
        backward(g, y)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_reports_primitive():
    x = leaf([0.0, 1.0])
    with Graph() as g:
        y = dc.log(x * 0.0 + x).sum()
    with pytest.raises(FloatingPointError, match="log"):
        backward(g, y)


def test_unreached_leaf_gets_zero():
    x, z = leaf([1.0]), leaf([[2.0, 3.0]])
    with Graph() as g:
        y = (x * 4.0).sum()
    grads = backward(g, y, wrt=[x, z])
    np.testing.assert_array_equal(grads[z], np.zeros((1, 2)))


def _rand(rng, shape, away_from_zero=False):
    a = rng.normal(size=shape)
    if away_from_zero:
        a = np.where(np.abs(a) < 1e-2, 0.5, a)
    return a


# (name, builder(rng) -> (fn, inputs))
def _primitive_cases():
    cases = {}

    def two(shape_a, shape_b, op):
        def build(rng):
            return op, [leaf(_rand(rng, shape_a)), leaf(_rand(rng, shape_b))]
        return build

    def one(shape, op, away=False, positive=False):
        def build(rng):
            a = _rand(rng, shape, away)
            if positive:
                a = np.abs(a) + 0.5
            return op, [leaf(a)]
        return build

    cases["add"] = two((3, 4), (4,), lambda a, b: ((a + b) * (a + b)).sum())
    cases["sub"] = two((3, 4), (3, 4), lambda a, b: ((a - b) * a).sum())
    cases["mul"] = two((2, 3), (2, 3), lambda a, b: (a * b * a).sum())
    cases["div"] = two((2, 3), (2, 3), lambda a, b: (a / (b * b + 1.0)).sum())
    cases["matmul"] = two((2, 3, 4), (2, 4, 5), lambda a, b: (dc.matmul(a, b) * dc.matmul(a, b)).sum())
    cases["matmul_shared_rhs"] = two((2, 3, 4), (4, 5), lambda a, b: dc.gelu(dc.matmul(a, b)).sum())
    cases["exp"] = one((5,), lambda a: dc.exp(a).sum())
    cases["log"] = one((5,), lambda a: (dc.log(a) * dc.log(a)).sum(), positive=True)
    cases["abs"] = one((6,), lambda a: (dc.tabs(a) * a).sum(), away=True)
    cases["relu"] = one((6,), lambda a: (dc.relu(a) * a).sum(), away=True)
    cases["gelu"] = one((6,), lambda a: (dc.gelu(a) * a).sum())
    cases["sigmoid"] = one((6,), lambda a: (dc.sigmoid(a) * a).sum())
    cases["softmax"] = one((3, 5), lambda a: (dc.softmax(a) * a).sum())
    cases["log_softmax"] = one((3, 5), lambda a: (dc.log_softmax(a) * a).sum())
    cases["transpose"] = one((2, 3, 4), lambda a: (dc.transpose(a, (2, 0, 1)) * np.arange(24.0).reshape(4, 2, 3)).sum())
    cases["reshape"] = one((2, 6), lambda a: (a.reshape(3, 4) * np.arange(12.0).reshape(3, 4)).sum())
    cases["slice"] = one((4, 5), lambda a: (a[1:3, ::2] * a[1:3, ::2]).sum())
    cases["gather"] = one((4, 3), lambda a: (dc.gather(a, [0, 2, 2, 3]) * np.arange(12.0).reshape(4, 3)).sum())
    cases["concat"] = two((2, 3), (1, 3), lambda a, b: (dc.concat([a, b, a]) * np.arange(15.0).reshape(5, 3)).sum())
    cases["masked_fill"] = one((3, 3), lambda a: (dc.softmax(dc.masked_fill(a, np.triu(np.ones((3, 3)), 1), -1e9)) * a).sum())
    cases["sum_mean"] = one((3, 4), lambda a: (a.sum(axis=0) * a.mean(axis=0)).sum())
    cases["max"] = one((4, 5), lambda a: (dc.amax(a, axis=-1) * np.arange(4.0)).sum())
    cases["maximum_minimum"] = two((6,), (6,), lambda a, b: (dc.maximum(a, b) * 2.0 + dc.minimum(a, b) * a).sum())

    def ln(rng):
        return (lambda x, g, b: (dc.layer_norm(x, g, b) * np.arange(12.0).reshape(3, 4)).sum(),
                [leaf(_rand(rng, (3, 4))), leaf(1 + 0.1 * _rand(rng, (4,))), leaf(_rand(rng, (4,)))])
    cases["layer_norm"] = ln

    def ce(rng):
        t = np.array([1, 0, 4])
        return (lambda a: (dc.cross_entropy(a, t) * np.array([1.0, 0.5, 2.0])).sum(), [leaf(_rand(rng, (3, 5)))])
    cases["cross_entropy"] = ce

    def bce(rng):
        t = np.array([1.0, 0.0, 1.0, 0.0])
        return (lambda a: dc.bce_with_logits(a, t).sum(), [leaf(3 * _rand(rng, (4,)))])
    cases["bce"] = bce
    return cases


PRIMITIVES = _primitive_cases()


def _separate_ties(inputs):
    # keep max/min/relu/abs probes at least 1e-3 away from their kinks
    if len(inputs) == 2 and inputs[0].shape == inputs[1].shape:
        a, b = inputs[0].data, inputs[1].data
        close = np.abs(a - b) < 1e-3
        b[close] += 0.1


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_primitive_gradcheck(name, seed):
    fn, inputs = PRIMITIVES[name](np.random.default_rng(seed))
    _separate_ties(inputs)
    res = check_grad(name, fn, inputs)
    assert res.ok, res.line()


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_gradient_is_linear(seed):
    rng = np.random.default_rng(seed)
    x = leaf(rng.normal(size=(3, 4)))
    w = Tensor(rng.normal(size=(4, 2)))

    def f1(x):
        return dc.gelu(x @ w).sum()

    def f2(x):
        return (dc.softmax(x) * x).sum()

    grads = []
    for f in (f1, f2, lambda x: f1(x) + f2(x)):
        x.zero_grad()
        with Graph() as g:
            y = f(x)
        grads.append(backward(g, y)[x])
    np.testing.assert_allclose(grads[0] + grads[1], grads[2], rtol=1e-12, atol=1e-12)


def test_backward_is_repeatable_and_keeps_forward_values():
    rng = np.random.default_rng(5)
    x = leaf(rng.normal(size=(4, 4)))
    with Graph() as g:
        h = dc.softmax(x @ x) * x
        y = dc.layer_norm(h, Tensor(np.ones(4)), Tensor(np.zeros(4))).sum() + h.sum()
    before = [n.data.copy() for n in g.nodes]
    g1 = backward(g, y)[x].copy()
    x.zero_grad()
    g2 = backward(g, y)[x].copy()
    np.testing.assert_array_equal(g1, g2)
    for b, n in zip(before, g.nodes):
        np.testing.assert_array_equal(b, n.data)


def test_graph_is_topological():
    x = leaf([1.0, 2.0])
    with Graph() as g:
        y = dc.exp(x * 3.0).sum() + x.sum()
    pos = {id(n): i for i, n in enumerate(g.nodes)}
    for i, n in enumerate(g.nodes):
        for p in n.parents:
            assert pos.get(id(p), -1) < i


def test_no_recording_outside_graph():
    x = leaf([1.0])
    y = x * 2.0
    assert y.is_leaf and not y.requires_grad


def test_rng_streams_are_reproducible_and_independent():
    a = dc.Rng(7).derive("mllm").normal((3,))
    b = dc.Rng(7).derive("mllm").normal((3,))
    c = dc.Rng(7).derive("det").normal((3,))
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {"mllm.w": rng.normal(size=(3, 4)).astype(np.float32),
               "det.bias": rng.normal(size=(5,)).astype(np.float32),
               "det.scalar_like": np.array([1.5], dtype=np.float32),
               "unicode.é": rng.normal(size=(2, 1, 3)).astype(np.float32)}
    path = tmp_path / "m.lnna"
    ckpt.save(path, tensors)
    blob = path.read_bytes()
    assert blob[:4] == b"LNNA"
    back = ckpt.load(path)
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].tobytes() == tensors[k].tobytes()
    assert ckpt.dumps(back) == blob


def test_checkpoint_rejects_bad_magic():
    with pytest.raises(ckpt.CheckpointError):
        ckpt.loads(b"NOPE" + bytes(8))
