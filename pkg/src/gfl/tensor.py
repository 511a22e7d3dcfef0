"""Dense reverse-mode automatic differentiation on float64 numpy arrays.

Every differentiable operation in the models goes through the functions in
this module.  An operation whose inputs participate in gradients records an
:class:`Op` carrying a global sequence number; :class:`Tape` collects the ops
reachable from a loss and replays them in exact reverse execution order.

Example
-------
>>> x = Tensor([1.0, 2.0, 3.0], grad_enabled=True)
>>> loss = tsum(x * x)
>>> grads = backward(loss)
>>> grads[x]
array([2., 4., 6.])
"""

from __future__ import annotations

import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Op", "Tape", "Gradients", "ShapeError", "TapeError",
    "matmul", "transpose", "add", "sub", "mul", "scale", "relu", "sigmoid",
    "exp", "log", "row_softmax", "row_log_softmax", "gather_rows", "mean_rows",
    "max_rows", "tsum", "frobenius_sq", "reshape", "concat_rows",
    "gcn_normalize", "row_l2_normalize", "backward", "grad", "gradcheck",
    "stable_sigmoid",
]

_SEQ = itertools.count()


class ShapeError(ValueError):
    """Operand shapes do not conform for an operation."""


class TapeError(RuntimeError):
    """Invalid use of the tape (non-scalar loss, empty tape, bad values)."""


def stable_sigmoid(x):
    # tanh form never overflows and gives exactly 0.5 at 0
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


class Tensor:
    """A float64 array that can take part in reverse-mode differentiation.

    ``grad_enabled`` marks a leaf whose gradient is wanted.  Outputs of
    recorded operations carry a reference to the :class:`Op` that made them.
    """

    __slots__ = ("data", "grad_enabled", "grad", "name", "_op", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, grad_enabled: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if any(d <= 0 for d in arr.shape):
            raise ShapeError(f"tensor dimensions must be positive, got {arr.shape}")
        self.data = arr
        self.grad_enabled = bool(grad_enabled)
        self.grad = None
        self.name = name
        self._op: Op | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def requires_grad(self) -> bool:
        return self.grad_enabled or self._op is not None

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, grad_enabled={self.grad_enabled})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


class Op:
    """One executed operation: its inputs and the rule mapping the output
    gradient to input gradients."""

    __slots__ = ("name", "inputs", "vjp", "seq")

    def __init__(self, name, inputs, vjp):
        self.name = name
        self.inputs = inputs
        self.vjp = vjp
        self.seq = next(_SEQ)

    def __repr__(self) -> str:
        return f"Op({self.name}, seq={self.seq})"


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(name: str, out: np.ndarray, inputs: tuple[Tensor, ...], vjp) -> Tensor:
    t = Tensor.__new__(Tensor)
    t.data = out
    t.grad = None
    t.name = None
    t._op = None
    t.grad_enabled = False
    if any(x.requires_grad for x in inputs):
        t._op = Op(name, inputs, vjp)
    return t


def _same_shape(name: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{name}: shape mismatch {a.shape} vs {b.shape}")


def _need_2d(name: str, *ts: Tensor) -> None:
    for t in ts:
        if t.data.ndim != 2:
            raise ShapeError(f"{name}: expected a 2-d operand, got shape {t.shape}")


# ---------------------------------------------------------------------------
# operations

def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _need_2d("matmul", a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ {a.shape} vs {b.shape}")
    A, B = a.data, b.data
    return _record("matmul", A @ B, (a, b), lambda g: (g @ B.T, A.T @ g))


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    _need_2d("transpose", a)
    return _record("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)
    return _record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("sub", a, b)
    return _record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("mul", a, b)
    A, B = a.data, b.data
    return _record("mul", A * B, (a, b), lambda g: (g * B, g * A))


def scale(a, c: float) -> Tensor:
    a = _as_tensor(a)
    c = float(c)
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return _record("relu", np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    s = stable_sigmoid(a.data)
    return _record("sigmoid", s, (a,), lambda g: (g * s * (1.0 - s),))


def exp(a) -> Tensor:
    a = _as_tensor(a)
    e = np.exp(a.data)
    return _record("exp", e, (a,), lambda g: (g * e,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    if not np.all(a.data > 0):
        raise TapeError(f"log: non-positive value {a.data.min():g} in operand {a.shape}")
    X = a.data
    return _record("log", np.log(X), (a,), lambda g: (g / X,))


def row_softmax(a) -> Tensor:
    a = _as_tensor(a)
    _need_2d("row_softmax", a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)

    return _record("row_softmax", s, (a,), vjp)


def row_log_softmax(a) -> Tensor:
    a = _as_tensor(a)
    _need_2d("row_log_softmax", a)
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def vjp(g):
        return (g - s * g.sum(axis=1, keepdims=True),)

    return _record("row_log_softmax", out, (a,), vjp)


def gather_rows(a, index: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    _need_2d("gather_rows", a)
    idx = np.asarray(index, dtype=np.intp).reshape(-1)
    if idx.size == 0:
        raise ShapeError("gather_rows: empty index list")
    if idx.min() < 0 or idx.max() >= a.shape[0]:
        raise ShapeError(f"gather_rows: index out of range for shape {a.shape}")
    n = a.shape[0]

    def vjp(g):
        out = np.zeros((n, g.shape[1]))
        np.add.at(out, idx, g)
        return (out,)

    return _record("gather_rows", a.data[idx], (a,), vjp)


def mean_rows(a) -> Tensor:
    a = _as_tensor(a)
    _need_2d("mean_rows", a)
    n = a.shape[0]
    if n == 1:
        out = a.data.copy()
    else:
        out = a.data.mean(axis=0, keepdims=True)
    return _record("mean_rows", out, (a,), lambda g: (np.repeat(g / n, n, axis=0),))


def max_rows(a) -> Tensor:
    a = _as_tensor(a)
    _need_2d("max_rows", a)
    # np.argmax picks the first maximal row: deterministic tie-break
    arg = np.argmax(a.data, axis=0)
    cols = np.arange(a.shape[1])
    out = a.data[arg, cols][None, :]
    shape = a.shape

    def vjp(g):
        res = np.zeros(shape)
        res[arg, cols] = g[0]
        return (res,)

    return _record("max_rows", out, (a,), vjp)


def tsum(a) -> Tensor:
    a = _as_tensor(a)
    shape = a.shape
    return _record("sum", np.array(a.data.sum()), (a,), lambda g: (np.full(shape, float(g)),))


def frobenius_sq(a) -> Tensor:
    a = _as_tensor(a)
    X = a.data
    return _record("frobenius_sq", np.array(np.sum(X * X)), (a,), lambda g: (2.0 * float(g) * X,))


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape)) != a.data.size:
        raise ShapeError(f"reshape: cannot reshape {a.shape} to {shape}")
    old = a.shape
    return _record("reshape", a.data.reshape(shape).copy(), (a,), lambda g: (g.reshape(old),))


def concat_rows(parts: Sequence) -> Tensor:
    ts = tuple(_as_tensor(p) for p in parts)
    if not ts:
        raise ShapeError("concat_rows: no operands")
    _need_2d("concat_rows", *ts)
    width = ts[0].shape[1]
    for t in ts[1:]:
        if t.shape[1] != width:
            raise ShapeError(f"concat_rows: column mismatch {ts[0].shape} vs {t.shape}")
    bounds = np.cumsum([0] + [t.shape[0] for t in ts])

    def vjp(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(ts)))

    return _record("concat_rows", np.vstack([t.data for t in ts]), ts, vjp)


def gcn_normalize(a) -> Tensor:
    """D^{-1/2} (A + I) D^{-1/2} with D the row sums of A + I.

    Differentiable in A, so pooled adjacencies of coarser levels can be
    propagated over.  Entries of A must be nonnegative.
    """
    a = _as_tensor(a)
    _need_2d("gcn_normalize", a)
    if a.shape[0] != a.shape[1]:
        raise ShapeError(f"gcn_normalize: expected a square matrix, got {a.shape}")
    S = a.data + np.eye(a.shape[0])
    d = S.sum(axis=1)
    if not np.all(d > 0):
        raise TapeError("gcn_normalize: nonpositive degree")
    r = 1.0 / np.sqrt(d)
    N = r[:, None] * S * r[None, :]

    def vjp(g):
        gd = -0.5 / d * ((g * N).sum(axis=1) + (g * N).sum(axis=0))
        return (g * np.outer(r, r) + gd[:, None],)

    return _record("gcn_normalize", N, (a,), vjp)


def row_l2_normalize(a) -> Tensor:
    """Scale each row to unit Euclidean norm; zero rows are an error."""
    a = _as_tensor(a)
    _need_2d("row_l2_normalize", a)
    X = a.data
    norms = np.sqrt((X * X).sum(axis=1, keepdims=True))
    if np.any(norms == 0):
        raise TapeError("row_l2_normalize: zero row")
    Y = X / norms

    def vjp(g):
        return ((g - Y * (g * Y).sum(axis=1, keepdims=True)) / norms,)

    return _record("row_l2_normalize", Y, (a,), vjp)


# ---------------------------------------------------------------------------
# backward pass

class Tape:
    """The operations that produced ``output``, in execution order."""

    def __init__(self, output: Tensor):
        self.output = output
        outputs: dict[int, Tensor] = {}
        ops: list[Op] = []
        stack = [output]
        while stack:
            t = stack.pop()
            op = t._op
            if op is None or id(op) in outputs:
                continue
            outputs[id(op)] = t
            ops.append(op)
            stack.extend(op.inputs)
        ops.sort(key=lambda o: o.seq)
        self.ops = ops
        self._outputs = outputs

    def __len__(self) -> int:
        return len(self.ops)

    def output_of(self, op: Op) -> Tensor:
        return self._outputs[id(op)]


class Gradients:
    """Gradient store keyed by tensor identity."""

    def __init__(self):
        self._grads: dict[int, np.ndarray] = {}
        self._tensors: dict[int, Tensor] = {}

    def _accumulate(self, t: Tensor, g: np.ndarray) -> None:
        k = id(t)
        if k in self._grads:
            self._grads[k] = self._grads[k] + g
        else:
            self._grads[k] = np.array(g, dtype=np.float64).reshape(t.shape)
            self._tensors[k] = t

    def __getitem__(self, t: Tensor) -> np.ndarray:
        g = self._grads.get(id(t))
        if g is None:
            return np.zeros(t.shape)
        return g

    def __contains__(self, t: Tensor) -> bool:
        return id(t) in self._grads

    def leaves(self) -> list[Tensor]:
        return [t for t in self._tensors.values() if t._op is None and t.grad_enabled]


def _run_backward(loss: Tensor) -> Gradients:
    if loss.data.size != 1:
        raise TapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    tape = Tape(loss)
    if len(tape) == 0:
        raise TapeError("backward: empty tape (loss does not depend on any grad-enabled tensor)")
    store = Gradients()
    store._accumulate(loss, np.ones(loss.shape))
    for op in reversed(tape.ops):
        out = tape.output_of(op)
        if id(out) not in store._grads:
            continue
        g_out = store._grads[id(out)]
        for inp, g in zip(op.inputs, op.vjp(g_out)):
            if inp.requires_grad:
                store._accumulate(inp, g)
    return store


def backward(loss: Tensor) -> Gradients:
    """Back-propagate from a scalar ``loss``.

    Sets ``.grad`` on every grad-enabled leaf reached and returns the store.
    The tape is not consumed: running backward again on the same loss gives
    identical gradients (``.grad`` is overwritten, never accumulated).
    """
    store = _run_backward(loss)
    for leaf in store.leaves():
        leaf.grad = store[leaf].copy()
    return store


def grad(loss: Tensor, wrt: Iterable[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` for each tensor in ``wrt`` without touching
    ``.grad``; tensors that do not participate get zeros."""
    store = _run_backward(loss)
    return [store[t].copy() for t in wrt]


def gradcheck(f: Callable[..., Tensor], point, step: float = 1e-5,
              coords: dict[int, np.ndarray] | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``point`` is a Tensor or a sequence of Tensors passed positionally to
    ``f``.  The error per coordinate is ``|analytic - numeric| /
    max(1, |numeric|)``.  ``coords`` optionally restricts the check, mapping
    the position of an argument to the flat indices to probe.
    """
    if step <= 0:
        raise ValueError("gradcheck: step must be positive")
    single = isinstance(point, Tensor) or not isinstance(point, (list, tuple))
    base = [point] if single else list(point)
    base = [np.array(_as_tensor(p).data, dtype=np.float64) for p in base]

    args = [Tensor(b, grad_enabled=True) for b in base]
    y = f(*args)
    _check_finite(y, "analytic evaluation")
    if y.requires_grad:
        analytic = grad(y, args)
    else:
        analytic = [np.zeros(b.shape) for b in base]

    def value(i, flat, delta):
        vals = [Tensor(b) for b in base]
        pert = base[i].copy().reshape(-1)
        pert[flat] += delta
        vals[i] = Tensor(pert.reshape(base[i].shape))
        out = f(*vals)
        _check_finite(out, f"evaluation at argument {i}, coordinate {flat}")
        return out.item()

    worst = 0.0
    for i, b in enumerate(base):
        idx = range(b.size) if coords is None or i not in coords else coords[i]
        a_flat = analytic[i].reshape(-1)
        for flat in idx:
            num = (value(i, flat, step) - value(i, flat, -step)) / (2.0 * step)
            err = abs(a_flat[flat] - num) / max(1.0, abs(num))
            worst = max(worst, err)
    return worst


def _check_finite(t: Tensor, where: str) -> None:
    if not np.all(np.isfinite(t.data)):
        raise TapeError(f"gradcheck: non-finite value during {where}")
