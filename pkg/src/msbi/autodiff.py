"""Tape-based reverse-mode differentiation over float64 numpy arrays.

Nodes record onto a :class:`Tape` in construction order, which is already a
topological order, so :func:`backward` is a single reverse sweep.  Every op
also accepts plain ndarrays (returning an ndarray), so the same network code
serves gradient-tracked training and fast inference.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy.special import expit

from .tensorio import FORMAT_VERSION, read_tensor, write_tensor

__all__ = [
    "Tape",
    "Node",
    "ShapeError",
    "backward",
    "matmul",
    "exp",
    "log",
    "tanh",
    "softplus",
    "reduce_sum",
    "reduce_mean",
    "sorted_mean",
    "concat",
    "reshape",
    "transpose2d",
    "gather_cols",
    "slice_cols",
    "value_of",
    "ParamStore",
    "GradCheckReport",
    "grad_check",
]

_TINY = 1e-300


class ShapeError(ValueError):
    def __init__(self, op: str, detail: str):
        super().__init__(f"{op}: {detail}")


class Tape:
    """Ordered record of nodes for one forward pass."""

    def __init__(self):
        self._nodes: list[Node] = []

    def __len__(self) -> int:
        return len(self._nodes)

    def watch(self, value: np.ndarray, name: str | None = None) -> "Node":
        """Register a leaf whose gradient should be accumulated."""
        return Node(np.asarray(value, dtype=np.float64), "leaf", (), self, name=name)


class Node:
    __slots__ = ("value", "grad", "op", "parents", "tape", "name", "_backward")

    # Keep numpy from broadcasting over Node operands; reflected operators
    # on Node must win so mixed array/Node arithmetic stays on the tape.
    __array_ufunc__ = None

    def __init__(self, value, op, parents, tape, backward_fn=None, name=None):
        self.value = value
        self.grad = None
        self.op = op
        self.parents = parents
        self.tape = tape
        self.name = name
        self._backward = backward_fn
        tape._nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(op={self.op!r}, shape={self.value.shape})"

    # Arithmetic operators lift plain arrays/scalars to constants.
    def __add__(self, other):
        return _add(self, other)

    def __radd__(self, other):
        return _add(other, self)

    def __sub__(self, other):
        return _sub(self, other)

    def __rsub__(self, other):
        return _sub(other, self)

    def __mul__(self, other):
        return _mul(self, other)

    def __rmul__(self, other):
        return _mul(other, self)

    def __truediv__(self, other):
        return _div(self, other)

    def __rtruediv__(self, other):
        return _div(other, self)

    def __neg__(self):
        return _mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def value_of(x) -> np.ndarray:
    return x.value if isinstance(x, Node) else np.asarray(x, dtype=np.float64)


def _tape_of(*args) -> Tape | None:
    tape = None
    for a in args:
        if isinstance(a, Node):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ValueError("operands belong to different tapes")
    return tape


def _accumulate(node: "Node", g: np.ndarray) -> None:
    node.grad = g if node.grad is None else node.grad + g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that numpy broadcasting introduced or stretched."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    squeeze = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if squeeze:
        g = g.sum(axis=squeeze, keepdims=True)
    return g


def backward(root: Node) -> None:
    """Reverse sweep from a scalar root; visits each node exactly once."""
    if root.value.shape != ():
        raise ShapeError("backward", f"root must be scalar, got shape {root.value.shape}")
    root.grad = np.ones(())
    for node in reversed(root.tape._nodes):
        if node.grad is None or node._backward is None:
            continue
        node._backward(node.grad)


# -- elementwise and arithmetic ops ---------------------------------------


def _binary(op_name, a, b, forward, grad_a, grad_b):
    av, bv = value_of(a), value_of(b)
    try:
        out = forward(av, bv)
    except ValueError as err:
        raise ShapeError(op_name, f"shapes {av.shape} and {bv.shape}: {err}") from None
    tape = _tape_of(a, b)
    if tape is None:
        return out

    def backward_fn(g):
        if isinstance(a, Node):
            _accumulate(a, _unbroadcast(grad_a(g, av, bv), av.shape))
        if isinstance(b, Node):
            _accumulate(b, _unbroadcast(grad_b(g, av, bv), bv.shape))

    return Node(out, op_name, tuple(p for p in (a, b) if isinstance(p, Node)), tape, backward_fn)


def _add(a, b):
    return _binary("add", a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def _sub(a, b):
    return _binary("sub", a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def _mul(a, b):
    return _binary(
        "mul", a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x
    )


def _clamped(d: np.ndarray) -> np.ndarray:
    # Denominators within (-1e-300, 1e-300) are pushed to the nearest bound.
    return np.where(np.abs(d) < _TINY, np.where(d < 0, -_TINY, _TINY), d)


def _div(a, b):
    def forward(x, y):
        return x / _clamped(y)

    def grad_a(g, x, y):
        return g / _clamped(y)

    def grad_b(g, x, y):
        yc = _clamped(y)
        return np.where(np.abs(y) >= _TINY, -g * x / (yc * yc), 0.0)

    return _binary("div", a, b, forward, grad_a, grad_b)


def matmul(a, b):
    av, bv = value_of(a), value_of(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ShapeError("matmul", f"requires 2-d operands, got {av.shape} @ {bv.shape}")
    if av.shape[1] != bv.shape[0]:
        raise ShapeError("matmul", f"inner dimensions differ: {av.shape} @ {bv.shape}")
    out = av @ bv
    tape = _tape_of(a, b)
    if tape is None:
        return out

    def backward_fn(g):
        if isinstance(a, Node):
            _accumulate(a, g @ bv.T)
        if isinstance(b, Node):
            _accumulate(b, av.T @ g)

    return Node(out, "matmul", tuple(p for p in (a, b) if isinstance(p, Node)), tape, backward_fn)


def _unary(op_name, x, forward, grad_fn):
    xv = value_of(x)
    out = forward(xv)
    if not isinstance(x, Node):
        return out

    def backward_fn(g):
        _accumulate(x, grad_fn(g, xv, out))

    return Node(out, op_name, (x,), x.tape, backward_fn)


def exp(x):
    return _unary("exp", x, np.exp, lambda g, xv, out: g * out)


def log(x):
    """Natural log with the input clamped below at 1e-300."""

    def forward(xv):
        return np.log(np.maximum(xv, _TINY))

    def grad_fn(g, xv, out):
        return np.where(xv > _TINY, g / np.maximum(xv, _TINY), 0.0)

    return _unary("log", x, forward, grad_fn)


def tanh(x):
    return _unary("tanh", x, np.tanh, lambda g, xv, out: g * (1.0 - out * out))


def softplus(x):
    def forward(xv):
        return np.logaddexp(0.0, xv)

    return _unary("softplus", x, forward, lambda g, xv, out: g * expit(xv))


# -- reductions ------------------------------------------------------------


def _expand_reduced(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(g, shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def reduce_sum(x, axis=None, keepdims=False):
    xv = value_of(x)
    out = xv.sum(axis=axis, keepdims=keepdims)
    if not isinstance(x, Node):
        return out

    def backward_fn(g):
        _accumulate(x, _expand_reduced(g, xv.shape, axis, keepdims))

    return Node(out, "sum", (x,), x.tape, backward_fn)


def reduce_mean(x, axis=None, keepdims=False):
    xv = value_of(x)
    out = xv.mean(axis=axis, keepdims=keepdims)
    if not isinstance(x, Node):
        return out
    count = xv.size if axis is None else xv.shape[axis]

    def backward_fn(g):
        _accumulate(x, _expand_reduced(g, xv.shape, axis, keepdims) / count)

    return Node(out, "mean", (x,), x.tape, backward_fn)


def sorted_mean(x, axis: int):
    """Mean over ``axis`` with addends summed in sorted order.

    The sorted accumulation order makes the result bitwise invariant to
    permutations along ``axis``; the gradient is the usual uniform 1/n.
    """
    xv = value_of(x)
    if not -xv.ndim <= axis < xv.ndim:
        raise ShapeError("sorted_mean", f"axis {axis} invalid for shape {xv.shape}")
    out = np.sort(xv, axis=axis).mean(axis=axis)
    if not isinstance(x, Node):
        return out
    count = xv.shape[axis]

    def backward_fn(g):
        _accumulate(x, _expand_reduced(g, xv.shape, axis, False) / count)

    return Node(out, "sorted_mean", (x,), x.tape, backward_fn)


# -- structural ops ---------------------------------------------------------


def concat(parts: list, axis: int = 0):
    values = [value_of(p) for p in parts]
    try:
        out = np.concatenate(values, axis=axis)
    except ValueError as err:
        raise ShapeError("concat", f"shapes {[v.shape for v in values]}: {err}") from None
    tape = _tape_of(*parts)
    if tape is None:
        return out
    offsets = np.cumsum([0] + [v.shape[axis] for v in values])

    def backward_fn(g):
        moved = np.moveaxis(g, axis, 0)
        for part, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            if isinstance(part, Node):
                _accumulate(part, np.moveaxis(moved[lo:hi], 0, axis))

    return Node(out, "concat", tuple(p for p in parts if isinstance(p, Node)), tape, backward_fn)


def reshape(x, shape):
    xv = value_of(x)
    try:
        out = xv.reshape(shape)
    except ValueError as err:
        raise ShapeError("reshape", f"{xv.shape} -> {shape}: {err}") from None
    if not isinstance(x, Node):
        return out

    def backward_fn(g):
        _accumulate(x, g.reshape(xv.shape))

    return Node(out, "reshape", (x,), x.tape, backward_fn)


def transpose2d(x):
    xv = value_of(x)
    if xv.ndim != 2:
        raise ShapeError("transpose2d", f"requires a 2-d array, got {xv.shape}")
    out = xv.T
    if not isinstance(x, Node):
        return out

    def backward_fn(g):
        _accumulate(x, g.T)

    return Node(out, "transpose2d", (x,), x.tape, backward_fn)


def gather_cols(x, indices):
    xv = value_of(x)
    idx = np.asarray(indices, dtype=np.intp)
    if xv.ndim != 2:
        raise ShapeError("gather_cols", f"requires a 2-d array, got {xv.shape}")
    if idx.ndim != 1 or np.any(idx < 0) or np.any(idx >= xv.shape[1]):
        raise ShapeError("gather_cols", f"indices invalid for {xv.shape[1]} columns")
    out = xv[:, idx]
    if not isinstance(x, Node):
        return out

    def backward_fn(g):
        buf = np.zeros_like(xv)
        np.add.at(buf, (slice(None), idx), g)
        _accumulate(x, buf)

    return Node(out, "gather_cols", (x,), x.tape, backward_fn)


def slice_cols(x, start: int, stop: int):
    xv = value_of(x)
    if xv.ndim != 2:
        raise ShapeError("slice_cols", f"requires a 2-d array, got {xv.shape}")
    if not 0 <= start <= stop <= xv.shape[1]:
        raise ShapeError("slice_cols", f"[{start}:{stop}] invalid for {xv.shape[1]} columns")
    out = xv[:, start:stop]
    if not isinstance(x, Node):
        return out

    def backward_fn(g):
        buf = np.zeros_like(xv)
        buf[:, start:stop] = g
        _accumulate(x, buf)

    return Node(out, "slice_cols", (x,), x.tape, backward_fn)


# -- parameter store ---------------------------------------------------------


class ParamStore:
    """Ordered, named float64 parameter tensors with a flat view."""

    def __init__(self, tensors: Mapping[str, np.ndarray] | None = None):
        self._tensors: dict[str, np.ndarray] = {}
        if tensors:
            for name, value in tensors.items():
                self.add(name, value)

    def add(self, name: str, value: np.ndarray) -> None:
        if name in self._tensors:
            raise KeyError(f"parameter {name!r} already present")
        self._tensors[name] = np.array(value, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name not in self._tensors:
            raise KeyError(f"parameter {name!r} not present")
        arr = np.asarray(value, dtype=np.float64)
        if arr.shape != self._tensors[name].shape:
            raise ShapeError("param_store", f"{name}: {self._tensors[name].shape} -> {arr.shape}")
        self._tensors[name] = arr.copy()

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return list(self._tensors)

    def items(self):
        return self._tensors.items()

    @property
    def size(self) -> int:
        return sum(v.size for v in self._tensors.values())

    def copy(self) -> "ParamStore":
        return ParamStore({k: v.copy() for k, v in self._tensors.items()})

    def flat(self) -> np.ndarray:
        if not self._tensors:
            return np.zeros(0)
        return np.concatenate([v.ravel() for v in self._tensors.values()])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (self.size,):
            raise ShapeError("param_store", f"flat vector {flat.shape} != ({self.size},)")
        offset = 0
        for name, value in self._tensors.items():
            self._tensors[name] = flat[offset : offset + value.size].reshape(value.shape).copy()
            offset += value.size

    def as_nodes(self, tape: Tape) -> dict[str, Node]:
        return {name: tape.watch(value, name=name) for name, value in self._tensors.items()}

    def grads_flat(self, nodes: Mapping[str, Node]) -> np.ndarray:
        parts = []
        for name, value in self._tensors.items():
            grad = nodes[name].grad
            parts.append(np.zeros(value.size) if grad is None else grad.ravel())
        return np.concatenate(parts) if parts else np.zeros(0)

    # -- checkpointing -----------------------------------------------------

    def save(self, directory: str | Path) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for i, (name, value) in enumerate(self._tensors.items()):
            filename = f"t{i:04d}.msbi"
            write_tensor(directory / filename, value)
            entries.append(
                {
                    "name": name,
                    "file": filename,
                    "shape": list(value.shape),
                    "dtype": "float64",
                }
            )
        manifest = {"format_version": FORMAT_VERSION, "entries": entries}
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "ParamStore":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        if manifest.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')}")
        store = cls()
        for entry in manifest["entries"]:
            value = read_tensor(directory / entry["file"])
            if list(value.shape) != entry["shape"]:
                raise ValueError(f"checkpoint entry {entry['name']} shape mismatch")
            store.add(entry["name"], value)
        return store


# -- finite-difference gradient checking -------------------------------------


class GradCheckReport:
    """Per-probe comparison of analytic and central-difference gradients."""

    def __init__(self, entries: list[tuple[str, tuple, float, float, float]], tol: float):
        self.entries = entries
        self.tol = tol

    @property
    def max_rel_err(self) -> float:
        return max((e[4] for e in self.entries), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tol

    def worst_per_param(self) -> dict[str, float]:
        worst: dict[str, float] = {}
        for name, _idx, _a, _n, rel in self.entries:
            worst[name] = max(worst.get(name, 0.0), rel)
        return worst

    def __repr__(self):
        return f"GradCheckReport(max_rel_err={self.max_rel_err:.3e}, passed={self.passed})"


def grad_check(
    f: Callable,
    store: ParamStore,
    h: float = 1e-5,
    tol: float = 1e-4,
    n_probes: int = 20,
    rng: np.random.Generator | None = None,
) -> GradCheckReport:
    """Compare analytic gradients of ``f`` with central finite differences.

    ``f`` maps a name->tensor mapping to a scalar; it receives Node values
    for the analytic pass and plain arrays for the perturbed evaluations.
    ``n_probes`` parameter entries are sampled uniformly at random.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    tape = Tape()
    nodes = store.as_nodes(tape)
    out = f(nodes)
    if not isinstance(out, Node):
        raise TypeError("f must return a tape Node when given Node parameters")
    if not np.isfinite(out.value):
        raise FloatingPointError(f"f evaluated to non-finite value {out.value}")
    backward(out)
    analytic = {
        name: (nodes[name].grad if nodes[name].grad is not None else np.zeros(store[name].shape))
        for name in store.names()
    }

    names = store.names()
    sizes = np.array([store[name].size for name in names])
    total = int(sizes.sum())
    if total == 0:
        return GradCheckReport([], tol)
    flat_probes = rng.choice(total, size=min(n_probes, total), replace=False)
    bounds = np.cumsum(sizes)

    def eval_plain(tensors: dict[str, np.ndarray]) -> float:
        result = f(tensors)
        if isinstance(result, Node):
            result = result.value
        return float(result)

    entries = []
    for flat_index in sorted(flat_probes):
        which = int(np.searchsorted(bounds, flat_index, side="right"))
        name = names[which]
        offset = flat_index - (bounds[which - 1] if which else 0)
        idx = np.unravel_index(offset, store[name].shape)

        plus = {k: v.copy() for k, v in store.items()}
        plus[name][idx] += h
        minus = {k: v.copy() for k, v in store.items()}
        minus[name][idx] -= h
        numeric = (eval_plain(plus) - eval_plain(minus)) / (2.0 * h)
        a = float(analytic[name][idx])
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-6)
        entries.append((name, idx, a, numeric, rel))
    return GradCheckReport(entries, tol)
