"""Finite-difference oracle and the op registry shared by gradient tests.

Each case builds an expression from watched inputs using one op under test
(plus trivially-correct glue where the op needs a constrained domain). The
same builder runs on plain arrays for the numeric passes, so the oracle is
independent of the tape.
"""

import numpy as np

from msbi import autodiff as ad
from msbi.rng import RngState


def fd_gradient(f, x, h=1e-5):
    """Central finite differences of a scalar function at ``x``, elementwise."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"], order="C")
    while not it.finished:
        idx = it.multi_index
        plus = x.copy()
        plus[idx] += h
        minus = x.copy()
        minus[idx] -= h
        grad[idx] = (f(plus) - f(minus)) / (2.0 * h)
        it.iternext()
    return grad


def max_rel_err(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1.0)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_op(builder, shapes, seed, tol=1e-4):
    """Max relative error between tape gradients and central differences."""
    rng = RngState(seed)
    inputs = [rng.substream("x", i).standard_normal(shape) for i, shape in enumerate(shapes)]
    tape = ad.Tape()
    nodes = [tape.watch(x) for x in inputs]
    out = builder(*nodes)
    weights = rng.substream("w").standard_normal(ad.value_of(out).shape)
    ad.backward(ad.reduce_sum(out * weights))

    worst = 0.0
    for i, x in enumerate(inputs):

        def scalar(perturbed, i=i):
            args = list(inputs)
            args[i] = perturbed
            return float(np.sum(ad.value_of(builder(*args)) * weights))

        analytic = nodes[i].grad
        if analytic is None:
            analytic = np.zeros(x.shape)
        worst = max(worst, max_rel_err(analytic, fd_gradient(scalar, x)))
    return worst


# One entry per adjoint rule: (name, builder, input shapes). Builders keep
# constrained ops (log, div) away from their singularities.
OP_CASES = [
    ("add", lambda a, b: a + b, [(3, 4), (3, 4)]),
    ("add_broadcast_row", lambda a, b: a + b, [(3, 4), (4,)]),
    ("add_broadcast_col", lambda a, b: a + b, [(3, 4), (3, 1)]),
    ("radd_array", lambda a: np.full((3, 4), 0.7) + a, [(3, 4)]),
    ("sub", lambda a, b: a - b, [(4,), (4,)]),
    ("rsub_scalar", lambda a: 1.0 - a, [(2, 3)]),
    ("mul", lambda a, b: a * b, [(3, 4), (3, 4)]),
    ("mul_broadcast", lambda a, b: a * b, [(3, 4), (4,)]),
    ("rmul_array", lambda a: np.linspace(-1, 1, 12).reshape(3, 4) * a, [(3, 4)]),
    ("neg", lambda a: -a, [(5,)]),
    ("div", lambda a, b: a / (0.1 * b + 3.0), [(3, 3), (3, 3)]),
    ("rdiv", lambda a: 2.0 / (0.1 * a + 3.0), [(4,)]),
    ("matmul", lambda a, b: ad.matmul(a, b), [(3, 4), (4, 2)]),
    ("rmatmul_array", lambda a: np.eye(3) @ a, [(3, 2)]),
    ("exp", lambda a: ad.exp(0.5 * a), [(3, 4)]),
    ("log", lambda a: ad.log(a * a + 0.5), [(3, 4)]),
    ("tanh", lambda a: ad.tanh(a), [(3, 4)]),
    ("softplus", lambda a: ad.softplus(a), [(3, 4)]),
    ("reduce_sum_all", lambda a: ad.reduce_sum(a), [(3, 4)]),
    ("reduce_sum_axis0", lambda a: ad.reduce_sum(a, axis=0), [(3, 4)]),
    ("reduce_sum_keepdims", lambda a: ad.reduce_sum(a, axis=1, keepdims=True), [(3, 4)]),
    ("reduce_mean_all", lambda a: ad.reduce_mean(a), [(2, 5)]),
    ("reduce_mean_axis1", lambda a: ad.reduce_mean(a, axis=1), [(2, 5)]),
    ("sorted_mean", lambda a: ad.sorted_mean(a, axis=1), [(2, 5, 3)]),
    ("concat_axis0", lambda a, b: ad.concat([a, b], axis=0), [(2, 3), (4, 3)]),
    ("concat_axis1", lambda a, b: ad.concat([a, b], axis=1), [(2, 2), (2, 3)]),
    ("reshape", lambda a: ad.reshape(a, (3, 2)), [(2, 3)]),
    ("transpose2d", lambda a: ad.transpose2d(a), [(2, 4)]),
    ("gather_cols", lambda a: ad.gather_cols(a, np.array([2, 0, 1, 2])), [(3, 4)]),
    ("slice_cols", lambda a: ad.slice_cols(a, 1, 3), [(3, 5)]),
]
