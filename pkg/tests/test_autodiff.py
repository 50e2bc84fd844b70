"""Unit tests for the reverse-mode engine: primitives, tape, checkpoints."""

import os

import numpy as np
import pytest

from laneformer.autodiff import (
    GradCheckReport,
    NondeterministicFunctionError,
    ParameterRegistry,
    ShapeError,
    Tensor,
    add,
    backpropagate,
    concat,
    gather_rows,
    grad_check,
    layer_norm,
    load_checkpoint,
    matmul,
    multiply,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    row_softmax,
    save_checkpoint,
    scale,
    smooth_l1,
    subtract,
    transpose,
    uniform_init,
)


def _scalarize(t, rng):
    # mix all entries so every input element carries gradient
    w = Tensor(rng.normal(size=t.data.shape))
    return reduce_sum(multiply(t, w))


def test_matmul_value_oracle():
    out = matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[5.0], [6.0]]))
    assert out.data.tolist() == [[17.0], [39.0]]


def test_matmul_shape_error():
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError):
        matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 1))))


def test_primitive_gradients_match_finite_differences():
    # every primitive, 100 seeds each, against central differences
    checks = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        a34 = rng.normal(size=(3, 4))
        b43 = rng.normal(size=(4, 3))
        b34 = rng.normal(size=(3, 4))
        row = rng.normal(size=(1, 4))
        sm_mask = rng.random((3, 4)) < 0.6
        sm_mask[:, 0] = True   # no empty rows

        specs = [
            ("matmul", lambda a, b: matmul(a, b), [a34, b43]),
            ("matmul_t", lambda a, b: matmul(a, b, transpose_b=True), [a34, b34]),
            ("add", lambda a, b: add(a, b), [a34, b34]),
            ("add_bcast", lambda a, b: add(a, b), [a34, row]),
            ("subtract", lambda a, b: subtract(a, b), [a34, b34]),
            ("multiply", lambda a, b: multiply(a, b), [a34, b34]),
            ("multiply_bcast", lambda a, b: multiply(a, b), [a34, row]),
            ("scale", lambda a: scale(a, -1.7), [a34]),
            # kink inputs nudged away from 0 so finite differences stay valid
            ("relu", lambda a: relu(a), [np.where(np.abs(a34) < 0.05, 0.3, a34)]),
            ("softmax", lambda a: row_softmax(a), [a34]),
            ("softmax_mask", lambda a: row_softmax(a, mask=sm_mask), [a34]),
            ("layer_norm", lambda x, g, b: layer_norm(x, g, b),
             [a34, rng.normal(size=4), rng.normal(size=4)]),
            ("smooth_l1", lambda a: smooth_l1(a, delta=1.0),
             [np.where(np.abs(np.abs(a34) - 1.0) < 0.05, 0.5, a34)]),
            ("reduce_sum", lambda a: reduce_sum(a), [a34]),
            ("reduce_sum_ax", lambda a: reduce_sum(a, axis=1, keepdims=True), [a34]),
            ("reduce_mean", lambda a: reduce_mean(a, axis=0), [a34]),
            ("concat0", lambda a, b: concat([a, b], axis=0), [a34, b34]),
            ("concat1", lambda a, b: concat([a, b], axis=1), [a34, b34]),
            ("gather", lambda a: gather_rows(a, [2, 0, 2]), [a34]),
            ("transpose", lambda a: transpose(a), [a34]),
            ("reshape", lambda a: reshape(a, (4, 3)), [a34]),
        ]
        for name, fn, arrays in specs:
            def f(*ts, fn=fn):
                out = fn(*ts)
                w = np.random.default_rng(1234).normal(size=out.data.shape)
                return reduce_sum(multiply(out, Tensor(w)))

            report = grad_check(f, [Tensor(a.copy()) for a in arrays],
                                h=1e-6, tol=1e-6)
            assert report.passed, (
                f"seed {seed}: {name} max rel error {report.max_error:.2e}")
            checks += 1
    assert checks == 100 * 21


def test_row_softmax_rows_sum_to_one():
    rng = np.random.default_rng(0)
    for _ in range(20):
        x = rng.normal(scale=5.0, size=(6, 7))
        mask = rng.random((6, 7)) < 0.7
        mask[:, 0] = True
        p = row_softmax(Tensor(x), mask=mask)
        assert np.abs(p.data.sum(axis=1) - 1.0).max() < 1e-12
        assert (p.data[~mask] == 0.0).all()


def test_row_softmax_empty_row_raises():
    mask = np.ones((2, 3), dtype=bool)
    mask[1] = False
    with pytest.raises(ValueError, match="empty attention row"):
        row_softmax(Tensor(np.zeros((2, 3))), mask=mask)


def test_diamond_graph_accumulates_once():
    # y = sum(x*x + x*x) touches x through two paths; gradient is 4x
    x = Tensor(np.array([[1.0, 2.0]]), requires_grad=True)
    left = multiply(x, x)
    right = multiply(x, x)
    loss = reduce_sum(add(left, right))
    backpropagate(loss)
    assert np.allclose(x.grad, 4.0 * x.data)


def test_constant_subgraphs_are_pruned():
    a = Tensor(np.ones((2, 2)))           # no grad
    const = matmul(a, a)
    assert const._parents == () and const._backward is None
    assert not const.requires_grad

    b = Tensor(np.ones((2, 2)), requires_grad=True)
    out = reduce_sum(add(const, b))
    backpropagate(out)
    assert np.array_equal(b.grad, np.ones((2, 2)))
    assert a.grad is None


def test_backpropagate_requires_scalar():
    x = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backpropagate(add(x, x))


def test_grad_check_zero_tolerance_fails():
    # finite differences are never exact, even for a correct linear layer
    rng = np.random.default_rng(3)
    w = Tensor(rng.normal(size=(4, 3)))

    def f(x):
        return reduce_sum(matmul(x, w))

    report = grad_check(f, [Tensor(rng.normal(size=(2, 4)))], tol=0.0)
    assert isinstance(report, GradCheckReport)
    assert not report.passed
    assert report.max_error > 0.0


def test_grad_check_rejects_nondeterministic_function():
    state = {"calls": 0}

    def f(x):
        state["calls"] += 1
        return reduce_sum(scale(x, float(state["calls"])))

    with pytest.raises(NondeterministicFunctionError):
        grad_check(f, [Tensor(np.ones((2, 2)))])


def test_registry_rejects_duplicates():
    reg = ParameterRegistry()
    reg.add("w", Tensor(np.ones(2)))
    with pytest.raises(ValueError, match="duplicate"):
        reg.add("w", Tensor(np.ones(2)))


def test_uniform_init_bounds():
    rng = np.random.default_rng(0)
    vals = uniform_init(rng, 16, (1000,))
    assert np.abs(vals).max() <= 0.25
    assert np.abs(vals).max() > 0.2   # actually fills the range


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(7)
    reg = ParameterRegistry()
    reg.add("layer.w", Tensor(rng.normal(size=(3, 5))))
    reg.add("layer.b", Tensor(rng.normal(size=(1, 5))))
    path = os.path.join(tmp_path, "m.ckpt")
    save_checkpoint(path, reg, seed=42)

    reg2 = ParameterRegistry()
    reg2.add("layer.w", Tensor(np.zeros((3, 5))))
    reg2.add("layer.b", Tensor(np.zeros((1, 5))))
    seed = load_checkpoint(path, reg2)
    assert seed == 42
    assert np.array_equal(reg2["layer.w"].data, reg["layer.w"].data)
    assert np.array_equal(reg2["layer.b"].data, reg["layer.b"].data)

    # same values -> byte-identical file
    path2 = os.path.join(tmp_path, "m2.ckpt")
    save_checkpoint(path2, reg2, seed=42)
    assert open(path, "rb").read() == open(path2, "rb").read()


def test_checkpoint_shape_mismatch(tmp_path):
    reg = ParameterRegistry()
    reg.add("w", Tensor(np.zeros((2, 2))))
    path = os.path.join(tmp_path, "m.ckpt")
    save_checkpoint(path, reg, seed=0)
    other = ParameterRegistry()
    other.add("w", Tensor(np.zeros((3, 2))))
    with pytest.raises(ValueError, match="shape mismatch"):
        load_checkpoint(path, other)


def test_checkpoint_bad_magic(tmp_path):
    path = os.path.join(tmp_path, "junk.ckpt")
    with open(path, "wb") as fh:
        fh.write(b"NOPE" + b"\x00" * 32)
    with pytest.raises(ValueError, match="not a checkpoint"):
        load_checkpoint(path, ParameterRegistry())
