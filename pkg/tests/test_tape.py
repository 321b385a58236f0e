"""Autodiff engine checks: forward values against loop oracles, gradients
against central finite differences, bit-identical replay, and error paths."""

import numpy as np
import pytest

from fedssa import tape as tp
from fedssa.errors import ContractError, NumericError, ShapeError
from helpers import central_diff, naive_matmul, rel_err

# --- forward values -----------------------------------------------------------


def test_matmul_matches_triple_loop_oracle():
    rng = np.random.default_rng(0)
    for _ in range(5):
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal((3, 5))
        t = tp.Tape()
        va = t.leaf(a, "a")
        vb = t.leaf(b, "b")
        out = tp.matmul(va, vb)
        assert rel_err(out.value, naive_matmul(a, b)) < 1e-12


def test_elementwise_forward_values():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 4))
    t = tp.Tape()
    v = t.leaf(x, "x")
    assert np.allclose(tp.exp(v).value, np.exp(x))
    assert np.allclose(tp.tanh(v).value, np.tanh(x))
    assert np.allclose(tp.square(v).value, x * x)
    assert np.allclose(tp.absval(v).value, np.abs(x))
    assert np.allclose(tp.sigmoid(v).value, 1.0 / (1.0 + np.exp(-x)))
    assert np.allclose(tp.softplus(v).value, np.logaddexp(0.0, x))
    assert np.allclose(tp.mean_rows(v).value, x.mean(axis=0, keepdims=True))
    assert np.allclose(tp.sum_all(v).value, np.array([[x.sum()]]))


def test_sigmoid_is_stable_for_large_inputs():
    t = tp.Tape()
    v = t.leaf(np.array([[800.0, -800.0]]), "x")
    out = tp.sigmoid(v).value
    assert np.all(np.isfinite(out))
    assert out[0, 0] == pytest.approx(1.0)
    assert out[0, 1] == pytest.approx(0.0)


def test_softplus_is_stable_for_large_inputs():
    t = tp.Tape()
    v = t.leaf(np.array([[800.0, -800.0]]), "x")
    out = tp.softplus(v).value
    assert np.all(np.isfinite(out))
    assert out[0, 0] == pytest.approx(800.0)
    assert out[0, 1] == pytest.approx(0.0)


# --- gradient battery against finite differences ------------------------------


def _grad_check(build, arrays, tol=1e-6):
    """build(tape, {name: Var}) -> scalar Var; compares grad to central FD."""

    def run_value(vals):
        t = tp.Tape()
        leaves = {k: t.leaf(v, k) for k, v in vals.items()}
        return float(build(t, leaves).value[0, 0])

    t = tp.Tape()
    leaves = {k: t.leaf(v, k) for k, v in arrays.items()}
    loss = build(t, leaves)
    got = tp.grad(t, loss)
    want = central_diff(lambda vals: run_value(vals), arrays)
    worst = max(rel_err(got[leaves[k]], want[k]) for k in arrays)
    assert worst < tol, f"gradient mismatch {worst}"


def test_grad_matmul_chain():
    rng = np.random.default_rng(2)
    arrays = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal((4, 2))}
    _grad_check(lambda t, lv: tp.sum_all(tp.matmul(lv["a"], lv["b"])), arrays)


def test_grad_add_mul_scale():
    rng = np.random.default_rng(3)
    arrays = {"a": rng.standard_normal((2, 3)), "b": rng.standard_normal((2, 3))}
    _grad_check(
        lambda t, lv: tp.sum_all(tp.scale(tp.mul(tp.add(lv["a"], lv["b"]), lv["a"]), 0.7)),
        arrays)


def test_grad_transpose_reshape():
    rng = np.random.default_rng(4)
    arrays = {"a": rng.standard_normal((2, 6))}
    _grad_check(
        lambda t, lv: tp.sum_all(tp.square(tp.reshape(tp.transpose(lv["a"]), (3, 4)))),
        arrays)


def test_grad_log_exp_sqrt():
    rng = np.random.default_rng(5)
    arrays = {"a": rng.standard_normal((3, 3))}

    def build(t, lv):
        pos = tp.add(tp.softplus(lv["a"]), t.leaf(np.full((3, 3), 0.1), "c_shift"))
        return tp.sum_all(tp.add(tp.log(pos), tp.sqrt(pos)))

    def build_outer(t, lv):
        pos = tp.add(tp.softplus(lv["a"]), 0.1 * np.ones((3, 3)))
        return tp.sum_all(tp.add(tp.log(pos), tp.sqrt(pos)))

    _grad_check(build_outer, arrays)


def test_grad_tanh_sigmoid_softplus_mean():
    rng = np.random.default_rng(6)
    arrays = {"a": rng.standard_normal((4, 3))}
    _grad_check(
        lambda t, lv: tp.sum_all(tp.mean_rows(
            tp.mul(tp.tanh(lv["a"]), tp.sigmoid(tp.softplus(lv["a"]))))),
        arrays)


def test_grad_absval_away_from_kink():
    rng = np.random.default_rng(7)
    a = rng.standard_normal((3, 3))
    a[np.abs(a) < 0.2] = 0.5
    _grad_check(lambda t, lv: tp.sum_all(tp.absval(lv["a"])), {"a": a})


def test_grad_clip_strict_interior_and_exterior():
    a = np.array([[-2.0, -0.5, 0.3, 0.9, 2.5]])
    t = tp.Tape()
    v = t.leaf(a, "a")
    loss = tp.sum_all(tp.clip(v, -1.0, 1.0))
    g = tp.grad(t, loss)[v]
    assert np.array_equal(g, np.array([[0.0, 1.0, 1.0, 1.0, 0.0]]))


def test_grad_unused_leaf_is_zero():
    t = tp.Tape()
    a = t.leaf(np.ones((2, 2)), "a")
    b = t.leaf(np.ones((3, 1)), "b")
    loss = tp.sum_all(tp.square(a))
    g = tp.grad(t, loss)
    assert np.array_equal(g[b], np.zeros((3, 1)))
    assert np.array_equal(g[a], 2.0 * np.ones((2, 2)))


def test_grad_leaf_used_twice_accumulates():
    arrays = {"a": np.array([[1.5, -0.4], [0.2, 2.0]])}
    _grad_check(lambda t, lv: tp.sum_all(tp.mul(lv["a"], lv["a"])), arrays)


def test_grad_constant_operand_gets_no_gradient():
    rng = np.random.default_rng(8)
    a = rng.standard_normal((2, 3))
    const = rng.standard_normal((3, 2))
    t = tp.Tape()
    v = t.leaf(a, "a")
    loss = tp.sum_all(tp.matmul(v, const))
    g = tp.grad(t, loss)
    assert set(g.keys()) == {v}
    want = central_diff(lambda vals: float(vals["a"] @ const @ np.ones((2, 1))
                                           @ np.ones((1, 1))
                                           if False else (vals["a"] @ const).sum()),
                        {"a": a})
    assert rel_err(g[v], want["a"]) < 1e-6


RANDOM_OPS = ("add", "mul", "tanh", "sigmoid", "softplus", "square",
              "scale", "transpose", "exp_damped", "log_safe", "sqrt_safe",
              "absval", "matmul_const")


def _random_composition(rng):
    """Random chain of 6 ops over two leaves, reduced to a scalar."""
    shape = (int(rng.integers(2, 5)), int(rng.integers(2, 5)))
    a0 = rng.standard_normal(shape)
    b0 = rng.standard_normal(shape)
    ops = [RANDOM_OPS[int(rng.integers(len(RANDOM_OPS)))] for _ in range(6)]
    consts = {i: rng.standard_normal() for i in range(6)}
    mats = {}

    def build(t, lv):
        x = lv["a"]
        other = lv["b"]
        for i, op in enumerate(ops):
            if op == "add":
                x = tp.add(x, other) if x.shape == other.shape else tp.tanh(x)
            elif op == "mul":
                x = tp.mul(x, other) if x.shape == other.shape else tp.sigmoid(x)
            elif op == "scale":
                x = tp.scale(x, consts[i])
            elif op == "transpose":
                x = tp.transpose(x)
            elif op == "exp_damped":
                x = tp.exp(tp.scale(tp.tanh(x), 0.5))
            elif op == "log_safe":
                x = tp.log(tp.add(tp.softplus(x), 0.1 * np.ones(x.shape)))
            elif op == "sqrt_safe":
                x = tp.sqrt(tp.add(tp.square(x), 0.1 * np.ones(x.shape)))
            elif op == "matmul_const":
                key = (i, x.shape[1])
                if key not in mats:
                    mats[key] = np.random.default_rng(100 + i).standard_normal(
                        (x.shape[1], x.shape[1]))
                x = tp.matmul(x, mats[key])
            else:
                x = getattr(tp, op)(x)
        return tp.sum_all(tp.mean_rows(x))

    return build, {"a": a0, "b": b0}


@pytest.mark.parametrize("seed", range(25))
def test_grad_random_composition_battery(seed):
    rng = np.random.default_rng(1000 + seed)
    build, arrays = _random_composition(rng)
    _grad_check(build, arrays, tol=1e-4)


# --- replay and determinism ----------------------------------------------------


def test_replay_is_bit_identical():
    rng = np.random.default_rng(9)
    build, arrays = _random_composition(rng)
    t = tp.Tape()
    leaves = {k: t.leaf(v, k) for k, v in arrays.items()}
    loss = build(t, leaves)
    before = [node.value.tobytes() for node in t.nodes]
    replayed = t.replay()
    after = [v.tobytes() for v in replayed]
    assert before == after
    assert loss.value.tobytes() == replayed[loss.index].tobytes()


def test_grad_is_deterministic():
    rng = np.random.default_rng(10)
    build, arrays = _random_composition(rng)
    t = tp.Tape()
    leaves = {k: t.leaf(v, k) for k, v in arrays.items()}
    loss = build(t, leaves)
    g1 = tp.grad(t, loss)
    g2 = tp.grad(t, loss)
    for leaf in leaves.values():
        assert g1[leaf].tobytes() == g2[leaf].tobytes()


# --- error paths ----------------------------------------------------------------


def test_leaf_rejects_bad_inputs():
    t = tp.Tape()
    with pytest.raises(ShapeError):
        t.leaf(np.ones(3), "vec")
    with pytest.raises(NumericError):
        t.leaf(np.array([[np.nan]]), "nan")


def test_matmul_shape_mismatch():
    t = tp.Tape()
    a = t.leaf(np.ones((2, 3)), "a")
    b = t.leaf(np.ones((2, 3)), "b")
    with pytest.raises(ShapeError):
        tp.matmul(a, b)


def test_log_rejects_nonpositive():
    t = tp.Tape()
    a = t.leaf(np.array([[0.0, 1.0]]), "a")
    with pytest.raises(NumericError):
        tp.log(a)


def test_sqrt_rejects_negative():
    t = tp.Tape()
    a = t.leaf(np.array([[-1e-12]]), "a")
    with pytest.raises(NumericError):
        tp.sqrt(a)


def test_grad_requires_scalar_loss():
    t = tp.Tape()
    a = t.leaf(np.ones((2, 2)), "a")
    out = tp.square(a)
    with pytest.raises(ShapeError):
        tp.grad(t, out)


def test_grad_rejects_foreign_tape():
    t1 = tp.Tape()
    t2 = tp.Tape()
    a = t1.leaf(np.ones((1, 1)), "a")
    loss = tp.sum_all(a)
    with pytest.raises(ContractError):
        tp.grad(t2, loss)


def test_mixing_tapes_raises():
    t1 = tp.Tape()
    t2 = tp.Tape()
    a = t1.leaf(np.ones((2, 2)), "a")
    b = t2.leaf(np.ones((2, 2)), "b")
    with pytest.raises(ContractError):
        tp.add(a, b)
