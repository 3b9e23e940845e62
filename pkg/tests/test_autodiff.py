import numpy as np
import pytest
from gradcheck_cases import OP_CASES, check_op, fd_gradient, max_rel_err

from msbi import autodiff as ad
from msbi.autodiff import GradCheckReport, Node, ParamStore, ShapeError, Tape, grad_check
from msbi.rng import RngState


@pytest.mark.parametrize("name, builder, shapes", OP_CASES, ids=[c[0] for c in OP_CASES])
@pytest.mark.parametrize("seed", [0, 1, 2])
def test_adjoints_match_finite_differences(name, builder, shapes, seed):
    assert check_op(builder, shapes, seed) < 1e-4


def test_matmul_identity():
    a = np.arange(9.0).reshape(3, 3)
    assert np.array_equal(ad.matmul(np.eye(3), a), a)


def test_sum_exp_hand_value():
    tape = Tape()
    x = tape.watch(np.zeros(2))
    out = ad.reduce_sum(ad.exp(x))
    assert float(out.value) == pytest.approx(2.0)


def test_concat_values():
    assert np.array_equal(ad.concat([np.array([1.0]), np.array([2.0, 3.0])]), [1.0, 2.0, 3.0])


def test_backward_linear_map_gradient():
    """d/dW of sum(W @ x) is x broadcast across rows."""
    tape = Tape()
    w = tape.watch(RngState(0).standard_normal((3, 4)))
    x = np.array([1.0, 2.0, 3.0, 4.0])
    ad.backward(ad.reduce_sum(ad.matmul(w, x.reshape(4, 1))))
    assert np.allclose(w.grad, np.tile(x, (3, 1)))


def test_backward_requires_scalar_root():
    tape = Tape()
    x = tape.watch(np.zeros(3))
    with pytest.raises(ShapeError):
        ad.backward(x + 1.0)


def test_unused_parameter_has_no_gradient():
    tape = Tape()
    used = tape.watch(np.array(2.0))
    unused = tape.watch(np.array(5.0))
    ad.backward(used * used)
    assert unused.grad is None
    assert float(used.grad) == pytest.approx(4.0)


def test_gradient_accumulates_across_reuse():
    tape = Tape()
    x = tape.watch(np.array(3.0))
    ad.backward(x * x + x)
    assert float(x.grad) == pytest.approx(7.0)


def test_construction_order_of_independent_subgraphs():
    """Permuting independent subgraph construction leaves gradients intact."""

    def run(swap):
        tape = Tape()
        a = tape.watch(np.array([1.0, -2.0, 0.5]))
        b = tape.watch(np.array([[0.3, 1.2], [-0.7, 0.4]]))
        if swap:
            right = ad.reduce_sum(ad.tanh(b))
            left = ad.reduce_sum(a * a)
        else:
            left = ad.reduce_sum(a * a)
            right = ad.reduce_sum(ad.tanh(b))
        ad.backward(left + right)
        return a.grad.copy(), b.grad.copy()

    ga0, gb0 = run(False)
    ga1, gb1 = run(True)
    assert np.max(np.abs(ga0 - ga1)) < 1e-12
    assert np.max(np.abs(gb0 - gb1)) < 1e-12


def test_mixed_array_node_arithmetic_stays_on_tape():
    """ndarray op Node must dispatch to Node's reflected operator."""
    tape = Tape()
    x = tape.watch(np.ones((2, 2)))
    for result in (np.full((2, 2), 2.0) * x, np.ones((2, 2)) + x, np.ones((2, 2)) - x):
        assert isinstance(result, Node)
    ad.backward(ad.reduce_sum(np.full((2, 2), 3.0) * x))
    assert np.array_equal(x.grad, np.full((2, 2), 3.0))


def test_nodes_from_different_tapes_rejected():
    a = Tape().watch(np.zeros(2))
    b = Tape().watch(np.zeros(2))
    with pytest.raises(ValueError, match="tapes"):
        a + b


def test_sorted_mean_permutation_invariant_bitwise():
    rng = RngState(13)
    x = rng.standard_normal((4, 7, 3))
    perm = rng.permutation(7)
    assert np.array_equal(ad.sorted_mean(x, axis=1), ad.sorted_mean(x[:, perm, :], axis=1))


def test_sorted_mean_gradient_routes_through_sort():
    x = np.array([[3.0, 1.0, 2.0]]).T[None, :, :]  # (1, 3, 1), distinct values
    tape = Tape()
    node = tape.watch(x)
    out = ad.sorted_mean(node, axis=1)
    weights = np.array([[1.0]])
    ad.backward(ad.reduce_sum(out * weights))
    assert np.allclose(node.grad, np.full_like(x, 1.0 / 3.0))


def test_log_clamp_keeps_gradients_finite():
    tape = Tape()
    x = tape.watch(np.array([0.0, 1.0]))
    out = ad.reduce_sum(ad.log(x + 0.0))
    ad.backward(out)
    assert np.all(np.isfinite(x.grad))


def test_shape_error_names_op():
    with pytest.raises(ShapeError) as err:
        ad.matmul(np.zeros((2, 3)), np.zeros((2, 3)))
    assert "matmul" in str(err.value)


def test_gather_cols_and_slice_cols_values():
    x = np.arange(8.0).reshape(2, 4)
    assert np.array_equal(ad.gather_cols(x, np.array([3, 0])), x[:, [3, 0]])
    assert np.array_equal(ad.slice_cols(x, 1, 3), x[:, 1:3])


# -- ParamStore ------------------------------------------------------------


def test_param_store_flat_roundtrip():
    store = ParamStore({"w": np.arange(6.0).reshape(2, 3), "b": np.array([1.0, 2.0])})
    flat = store.flat()
    assert flat.shape == (8,)
    store.set_flat(flat * 2.0)
    assert np.array_equal(store["w"], np.arange(6.0).reshape(2, 3) * 2.0)
    assert np.array_equal(store["b"], [2.0, 4.0])


def test_param_store_duplicate_and_missing_names():
    store = ParamStore({"w": np.zeros(2)})
    with pytest.raises(KeyError):
        store.add("w", np.zeros(2))
    with pytest.raises(KeyError):
        store["missing"] = np.zeros(2)
    with pytest.raises(ShapeError):
        store["w"] = np.zeros(3)


def test_param_store_save_load_identical(tmp_path):
    rng = RngState(21)
    store = ParamStore(
        {"layer.w": rng.standard_normal((4, 3)), "layer.b": rng.standard_normal(3)}
    )
    store.save(tmp_path / "ckpt")
    loaded = ParamStore.load(tmp_path / "ckpt")
    assert loaded.names() == store.names()
    for name in store.names():
        assert np.array_equal(loaded[name], store[name])


def test_param_store_save_is_deterministic(tmp_path):
    store = ParamStore({"a": np.arange(4.0), "b": np.ones((2, 2))})
    store.save(tmp_path / "one")
    store.save(tmp_path / "two")
    for name in ("manifest.json", "t0000.msbi", "t0001.msbi"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


def test_grads_flat_orders_like_flat():
    store = ParamStore({"a": np.array([1.0, 2.0]), "b": np.array([[3.0]])})
    tape = Tape()
    nodes = store.as_nodes(tape)
    ad.backward(ad.reduce_sum(nodes["a"] * np.array([10.0, 20.0])) + ad.reduce_sum(nodes["b"] * 0.0))
    grads = store.grads_flat(nodes)
    assert np.array_equal(grads, [10.0, 20.0, 0.0])


# -- grad_check machinery ----------------------------------------------------


def test_grad_check_quadratic_is_nearly_exact():
    store = ParamStore({"p": np.array([1.0, 2.0])})

    def f(params):
        return ad.reduce_sum(params["p"] * params["p"])

    report = grad_check(f, store, n_probes=2)
    assert isinstance(report, GradCheckReport)
    assert report.passed
    assert report.max_rel_err < 1e-8


def test_grad_check_constant_function():
    store = ParamStore({"p": np.ones(3)})

    def f(params):
        return ad.reduce_sum(params["p"] * 0.0)

    report = grad_check(f, store)
    assert report.passed
    assert report.max_rel_err < 1e-5


def test_grad_check_flags_wrong_gradient():
    """A function whose Node path disagrees with its plain path must fail."""
    store = ParamStore({"p": np.array([0.5, -0.3])})

    def f(params):
        p = params["p"]
        if isinstance(p, Node):
            return ad.reduce_sum(p * 2.0)
        return float(np.sum(np.asarray(p) * 3.0))

    report = grad_check(f, store)
    assert not report.passed


def test_grad_check_rejects_nonfinite():
    store = ParamStore({"p": np.array([1.0])})

    def f(params):
        return ad.log(params["p"] - 1.0) if isinstance(params["p"], Node) else np.array(np.nan)

    with pytest.raises(FloatingPointError):
        grad_check(
            f, ParamStore({"p": np.array([np.inf])})
        )


def test_fd_oracle_self_check():
    """The test-suite oracle itself differentiates a known function correctly."""
    grad = fd_gradient(lambda x: float(np.sum(x**3)), np.array([1.0, 2.0]))
    assert max_rel_err(grad, np.array([3.0, 12.0])) < 1e-8
