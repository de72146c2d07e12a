import numpy as np
import pytest

from palp_lab.diffcore import (
    Function,
    GradientError,
    NonFiniteError,
    Tape,
    Tensor,
    add,
    affine,
    bag_mean,
    check_grad,
    concat,
    dot,
    fd_grad,
    grad,
    matmul,
    mse,
    mul,
    reshape,
    scale,
    silu,
    sub,
    time_features,
    tsum,
)

N_CASES = 100


def _weights(rng, shape):
    return Tensor(rng.standard_normal(shape))


def _cases(rng):
    """name -> (objective, params) for every primitive; objectives reduce to a scalar with dot."""
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
    m, v = rng.standard_normal((2, 3)), rng.standard_normal(3)
    w, bias = rng.standard_normal((5, 4)), rng.standard_normal(5)
    t = rng.uniform(0.0, 20.0, size=3)
    table = rng.standard_normal((4, 2))
    out_34 = _weights(rng, (3, 4))
    out_35 = _weights(rng, (3, 5))
    out_2 = _weights(rng, (2,))
    out_32 = _weights(rng, (3, 2))
    out_38 = _weights(rng, (3, 8))
    out_66 = _weights(rng, (6, 4))
    out_43 = _weights(rng, (4, 3))
    factor = float(rng.uniform(-3.0, 3.0))
    return {
        "add": (lambda p: dot(out_34, add(p["a"], p["b"])), {"a": a, "b": b}),
        "sub": (lambda p: dot(out_34, sub(p["a"], p["b"])), {"a": a, "b": b}),
        "mul": (lambda p: dot(out_34, mul(p["a"], p["b"])), {"a": a, "b": b}),
        "scale": (lambda p: dot(out_34, scale(p["a"], factor)), {"a": a}),
        "matmul": (lambda p: dot(out_2, matmul(p["m"], p["v"])), {"m": m, "v": v}),
        "affine": (lambda p: dot(out_35, affine(p["a"], p["w"], p["bias"])), {"a": a, "w": w, "bias": bias}),
        "silu": (lambda p: dot(out_34, silu(p["a"])), {"a": a}),
        "sum": (lambda p: tsum(mul(p["a"], p["a"])), {"a": a}),
        "mse": (lambda p: mse(p["a"], p["b"]), {"a": a, "b": b}),
        "dot": (lambda p: dot(p["a"], p["b"]), {"a": a, "b": b}),
        "concat": (lambda p: dot(out_66, concat([p["a"], p["b"]], axis=0)), {"a": a, "b": b}),
        "reshape": (lambda p: dot(out_43, reshape(p["a"], (4, 3))), {"a": a}),
        "bag_mean": (lambda p: dot(out_32, bag_mean(p["table"], [[0], [1, 2], [0, 3, 3]])), {"table": table}),
        "time_features": (lambda p: dot(out_38, time_features(p["t"], 8)), {"t": t}),
    }


def test_primitive_gradients_match_finite_differences():
    worst = {}
    for seed in range(N_CASES):
        for name, (objective, params) in _cases(np.random.default_rng(seed)).items():
            report = check_grad(objective, params, tol=1e-6)
            worst[name] = max(worst.get(name, 0.0), report.max_rel_err)
            assert report.passed, f"{name} (seed {seed}): max_rel_err={report.max_rel_err:.3e}"
    assert set(worst) == {
        "add", "sub", "mul", "scale", "matmul", "affine", "silu", "sum", "mse", "dot",
        "concat", "reshape", "bag_mean", "time_features",
    }


def test_constants_are_not_recorded():
    tape = Tape()
    x = tape.leaf(np.ones(3), name="x")
    c = add(Tensor(np.ones(3)), Tensor(np.ones(3)))
    assert not c.is_tracked
    assert len(tape) == 0

    y = add(x, c)
    assert y.is_tracked
    assert len(tape) == 1


def test_grad_of_unreached_leaf_is_zero():
    tape = Tape()
    x = tape.leaf(np.array([1.0, 2.0]), name="x")
    unused = tape.leaf(np.array([[3.0]]), name="unused")
    root = dot(x, x)
    grads = grad(root, [x, unused])
    np.testing.assert_array_equal(grads[x], [2.0, 4.0])
    np.testing.assert_array_equal(grads[unused], np.zeros((1, 1)))


def test_grad_accumulates_over_shared_subexpressions():
    tape = Tape()
    x = tape.leaf(np.array(3.0), name="x")
    y = mul(x, x)
    root = add(y, y)
    assert grad(root, [x])[x] == pytest.approx(12.0)


def test_grad_rejects_non_scalar_root():
    tape = Tape()
    x = tape.leaf(np.ones(2))
    with pytest.raises(GradientError):
        grad(scale(x, 2.0), [x])


def test_grad_rejects_foreign_and_untracked_leaves():
    tape, other = Tape(), Tape()
    x = tape.leaf(np.ones(2))
    y = other.leaf(np.ones(2))
    root = dot(x, x)
    with pytest.raises(GradientError):
        grad(root, [y])
    frozen = tape.leaf(np.ones(2), trainable=False)
    with pytest.raises(GradientError):
        grad(dot(x, frozen), [frozen])
    with pytest.raises(GradientError):
        grad(Tensor(1.0), [x])


def test_mixing_tapes_is_an_error():
    with pytest.raises(GradientError):
        add(Tape().leaf(np.ones(2)), Tape().leaf(np.ones(2)))


def test_non_finite_values_are_rejected():
    with pytest.raises(NonFiniteError):
        Tensor(np.array([1.0, np.nan]))
    with pytest.raises(NonFiniteError):
        with np.errstate(over="ignore"):
            mul(Tensor(1e200), Tensor(1e200))


def test_shape_errors():
    with pytest.raises(ValueError):
        mse(Tensor(np.ones(2)), Tensor(np.ones(3)))
    with pytest.raises(ValueError):
        affine(Tensor(np.ones(3)), Tensor(np.ones((2, 4))))
    with pytest.raises(ValueError):
        time_features(Tensor(np.ones(2)), 3)


class _BadSquare(Function):
    name = "bad_square"

    def forward(self, ctx, a):
        ctx.save(a=a)
        return a * a

    def backward(self, ctx, grad_output):
        return (grad_output * ctx.saved["a"],)


def test_check_grad_flags_a_wrong_backward():
    params = {"x": np.array([1.0, -2.0, 0.5])}
    report = check_grad(lambda p: tsum(_BadSquare()(p["x"])), params)
    assert not report.passed
    assert report.worst_param == "x"

    good = check_grad(lambda p: tsum(mul(p["x"], p["x"])), params)
    assert good.passed
    assert good.n_coordinates == 3


def test_fd_grad_leaves_inputs_untouched():
    params = {"x": np.array([0.3, -1.2])}
    estimate = fd_grad(lambda p: dot(p["x"], p["x"]), params)
    np.testing.assert_allclose(estimate["x"], [0.6, -2.4], atol=1e-8)
    np.testing.assert_array_equal(params["x"], [0.3, -1.2])
    with pytest.raises(ValueError):
        fd_grad(lambda p: dot(p["x"], p["x"]), params, h=0.0)


def test_fd_grad_of_simple_functions():
    square = fd_grad(lambda p: mul(p["x"], p["x"]), {"x": np.array(1.0)})
    assert square["x"] == pytest.approx(2.0, abs=1e-9)
    constant = fd_grad(lambda p: 4.0, {"x": np.ones((2, 3))})
    np.testing.assert_array_equal(constant["x"], np.zeros((2, 3)))


def test_check_grad_on_constant_and_empty_objectives():
    params = {"x": np.ones(2)}
    for objective in (lambda p: 3.0, lambda p: Tensor(3.0)):
        report = check_grad(objective, params)
        assert report.passed
        assert report.max_rel_err == 0.0
    assert check_grad(lambda p: 1.0, {}).passed


def test_grad_is_linear_in_the_root():
    rng = np.random.default_rng(8)
    tape = Tape()
    x = tape.leaf(rng.standard_normal(4), name="x")
    w = Tensor(rng.standard_normal(4))
    first, second = dot(x, w), tsum(mul(x, x))
    total = grad(add(first, second), [x])[x]
    np.testing.assert_array_equal(total, grad(first, [x])[x] + grad(second, [x])[x])


def test_grad_is_bit_deterministic():
    def run():
        rng = np.random.default_rng(9)
        tape = Tape()
        weight = tape.leaf(rng.standard_normal((3, 5)), name="weight")
        x = Tensor(rng.standard_normal((4, 5)))
        root = mse(silu(affine(x, weight)), Tensor(rng.standard_normal((4, 3))))
        return grad(root, [weight])[weight]

    assert run().tobytes() == run().tobytes()
