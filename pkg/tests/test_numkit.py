import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mainzsl import numkit as nk
from mainzsl.errors import ContractError, DataError, DegenerateBatchError, DimensionError, NumericError
from mainzsl.numkit import ops


def test_linear_hand_cases():
    np.testing.assert_array_equal(nk.linear(np.array([1.0, 2.0]), np.eye(2), np.zeros(2)), [1, 2])
    np.testing.assert_array_equal(nk.linear(np.array([1.0, 1.0]), np.array([[2.0, 3.0]]), np.array([1.0])), [6])


def test_linear_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.normal(size=5)
    params = {"W": rng.normal(size=(5, 5)), "b": rng.normal(size=5)}

    def f(p):
        return ops.sum(ops.square(nk.linear(x, p["W"], p["b"])))

    assert nk.grad_check(f, params).max_rel_err < 1e-6


def test_linear_shape_mismatch():
    with pytest.raises(DimensionError):
        nk.linear(np.ones(3), np.ones((2, 2)), np.zeros(2))


def test_activations():
    np.testing.assert_array_equal(nk.activate(np.array([-1.0, 0.0, 2.0]), "relu"), [0, 0, 2])
    np.testing.assert_array_equal(nk.activate(np.array([0.0]), "sigmoid"), [0.5])
    np.testing.assert_array_equal(nk.activate(np.array([3.5, -1.0]), "identity"), [3.5, -1])
    with pytest.raises(Exception):
        nk.activate(np.zeros(2), "tanh")


def test_softmax_cases():
    np.testing.assert_allclose(nk.softmax(np.zeros(3)), [1 / 3] * 3, atol=1e-15)
    out = nk.softmax(np.array([1000.0, 1000.0]))
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, [0.5, 0.5])
    np.testing.assert_allclose(nk.softmax(np.log([1.0, 3.0])), [0.25, 0.75], atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50)), st.floats(-100, 100))
def test_softmax_sums_to_one_and_is_shift_invariant(s, c):
    p = nk.softmax(s)
    assert abs(p.sum() - 1.0) < 1e-12
    np.testing.assert_allclose(nk.softmax(s + c), p, atol=1e-12)


def test_batch_norm_train_statistics():
    rng = np.random.default_rng(1)
    X = rng.normal(3.0, 2.0, size=(50, 4))
    out = nk.batch_norm(X, nk.BatchNormState.create(4))
    assert np.abs(out.mean(axis=0)).max() < 1e-10
    np.testing.assert_allclose(out.var(axis=0), 1.0, atol=1e-4)


def test_batch_norm_zero_gamma_gives_beta():
    st_ = nk.BatchNormState.create(3)
    st_.gamma[:] = 0.0
    st_.beta[:] = [1.0, -2.0, 0.5]
    out = nk.batch_norm(np.random.default_rng(0).normal(size=(6, 3)), st_)
    np.testing.assert_array_equal(out, np.tile([1.0, -2.0, 0.5], (6, 1)))


def test_batch_norm_eval_hand_formula():
    st_ = nk.BatchNormState(np.array([2.0, 0.5]), np.array([1.0, -1.0]), np.array([1.0, 2.0]),
                            np.array([4.0, 0.25]), mode="eval")
    X = np.array([[3.0, 2.5], [-1.0, 1.0]])
    eps = st_.epsilon
    want = (X - [1.0, 2.0]) / np.sqrt(np.array([4.0, 0.25]) + eps) * [2.0, 0.5] + [1.0, -1.0]
    np.testing.assert_allclose(nk.batch_norm(X, st_), want, rtol=1e-14)


def test_batch_norm_updates_running_stats_and_rejects_single_row():
    st_ = nk.BatchNormState.create(2)
    X = np.array([[0.0, 2.0], [2.0, 4.0]])
    nk.batch_norm(X, st_)
    np.testing.assert_allclose(st_.running_mean, 0.1 * np.array([1.0, 3.0]))
    np.testing.assert_allclose(st_.running_var, 0.9 + 0.1 * np.array([1.0, 1.0]))
    with pytest.raises(DegenerateBatchError):
        nk.batch_norm(np.ones((1, 2)), st_)


def test_backward_trivial_cases():
    tape = nk.Tape()
    w = tape.param(np.array([1.5]), "w")
    g = nk.backward(tape, ops.sum(ops.mul(w, np.array([2.0]))))
    np.testing.assert_array_equal(g["w"], [2.0])

    tape = nk.Tape()
    w = tape.param(np.array(0.0), "w")
    g = nk.backward(tape, nk.activate(w, "sigmoid"))
    assert g["w"] == pytest.approx(0.25)


def test_backward_contracts():
    tape = nk.Tape()
    w = tape.param(np.ones(3), "w")
    unused = tape.param(np.ones(2), "unused")
    g = nk.backward(tape, ops.sum(w))
    np.testing.assert_array_equal(g["unused"], np.zeros(2))
    with pytest.raises(ContractError):
        nk.backward(tape, ops.mul(w, 2.0))
    with pytest.raises(ContractError):
        nk.backward(nk.Tape(), ops.sum(w))
    assert unused.shape == (2,)


def test_batch_norm_gradients():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(6, 3))
    proj = rng.normal(size=(6, 3))
    for mode in ("train", "eval"):
        def f(p, mode=mode):
            st_ = nk.BatchNormState(p["gamma"], p["beta"], np.full(3, 0.2), np.full(3, 1.5), mode=mode)
            return ops.sum(ops.mul(nk.batch_norm(p["X"], st_), proj))

        params = {"X": X, "gamma": rng.normal(size=3), "beta": rng.normal(size=3)}
        assert nk.grad_check(f, params).max_rel_err < 1e-6


def test_softmax_cross_entropy_gradient():
    rng = np.random.default_rng(3)
    labels = np.array([0, 2, 1, 2])
    rep = nk.grad_check(lambda p: nk.softmax_cross_entropy(p["s"], labels), {"s": rng.normal(size=(4, 3))})
    assert rep.max_rel_err < 1e-6


def test_l2_normalize_rows_gradient():
    rng = np.random.default_rng(4)
    w = rng.normal(size=(3, 4))
    rep = nk.grad_check(lambda p: ops.sum(ops.mul(nk.l2_normalize_rows(p["x"]), w)), {"x": rng.normal(size=(3, 4))})
    assert rep.max_rel_err < 1e-6


def test_adam_first_step():
    p, st_ = nk.adam_update({"w": np.array([1.0])}, {"w": np.array([1.0])}, nk.AdamState(), 0.1)
    assert p["w"][0] - 1.0 == pytest.approx(-0.1, rel=1e-6)
    assert st_.step_count == 1


def test_adam_zero_gradient_and_inputs_untouched():
    params = {"w": np.array([1.0, -2.0])}
    p, _ = nk.adam_update(params, {"w": np.zeros(2)}, nk.AdamState(), 0.1)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    g = {"w": np.ones(2)}
    state = nk.AdamState()
    nk.adam_update(params, g, state, 0.1)
    np.testing.assert_array_equal(params["w"], [1.0, -2.0])
    assert state.step_count == 0 and not state.m


def test_adam_descends_quadratic():
    A = np.diag([1.0, 3.0])
    p = {"w": np.array([2.0, -1.0])}
    st_ = nk.AdamState()
    losses = [float(p["w"] @ A @ p["w"])]
    for _ in range(2):
        p, st_ = nk.adam_update(p, {"w": 2 * A @ p["w"]}, st_, 0.05)
        losses.append(float(p["w"] @ A @ p["w"]))
    assert losses[0] > losses[1] > losses[2]


def test_optimizer_guards():
    with pytest.raises(DimensionError):
        nk.sgd_update({"w": np.ones(2)}, {"w": np.ones(3)}, 0.1)
    with pytest.raises(DimensionError):
        nk.adam_update({"w": np.ones(2)}, {}, nk.AdamState(), 0.1)
    with pytest.raises(NumericError):
        nk.sgd_update({"w": np.ones(2)}, {"w": np.array([1.0, np.nan])}, 0.1)


def test_grad_check_square():
    rep = nk.grad_check(lambda p: ops.sum(ops.square(p["w"])), {"w": np.array(3.0)})
    assert rep.max_rel_err < 1e-9


def test_grad_check_three_class_cross_entropy():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(5, 4))
    y = np.array([0, 1, 2, 1, 0])
    rep = nk.grad_check(lambda p: nk.softmax_cross_entropy(nk.linear(x, p["W"], p["b"]), y),
                        {"W": rng.normal(size=(3, 4)), "b": rng.normal(size=3)})
    assert rep.max_rel_err < 1e-6


def test_grad_check_flags_corrupted_gradient():
    w = np.array([1.0, -2.0, 0.5])
    rep = nk.grad_check(lambda p: ops.sum(ops.square(p["w"])), {"w": w}, analytic={"w": 1.1 * 2 * w})
    assert rep.max_rel_err == pytest.approx(0.1, rel=1e-6)
    assert rep.worst_param == "w"
    assert not rep.passed(1e-4)


def test_input_validation():
    with pytest.raises(DimensionError):
        nk.as_matrix([1.0, 2.0])
    with pytest.raises(DataError):
        nk.as_matrix([[1.0, np.inf]])
    with pytest.raises(DataError):
        nk.as_vector([0.0, np.nan])
