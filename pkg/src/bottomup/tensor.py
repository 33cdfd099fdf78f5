"""Dense float64 tensors with reverse-mode automatic differentiation.

Storage is a row-major numpy array per tensor; everything is 64-bit so
finite-difference checks at 1e-6 are meaningful. Ops record their parent
tensors and a vector-Jacobian closure; `DiffGraph` captures the
topologically ordered record behind one output and sweeps it exactly once
in reverse. Tensors are immutable after construction, except parameter
updates between graph builds (mutating `.data` invalidates graphs already
recorded against it). Graph construction is single-threaded by contract;
finished tensors are safe to read from any thread.

Broadcasting is deliberately minimal: same-shape elementwise ops, scalar
scale/shift, a trailing-axis bias add, and the row-table add used by the
positional encoding. Anything wider raises.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tensor",
    "DiffGraph",
    "ShapeMismatch",
    "GraphError",
    "no_grad",
    "grad",
    "matmul",
    "linear",
    "linear_relu",
    "relu",
    "sigmoid",
    "softplus",
    "absval",
    "sum_all",
    "mean_all",
    "reshape",
    "flip_axis",
    "add_bias",
    "add_row_table",
    "append_channels",
    "take_rows",
    "softmax",
    "finite_diff_gradient",
    "finite_diff_check",
]


class ShapeMismatch(ValueError):
    """Raised when operand shapes do not conform."""


class GraphError(RuntimeError):
    """Raised on contract violations of the differentiation record."""


_GRAD_ENABLED = True


class no_grad:
    """Context manager that disables graph recording inside its body."""

    def __enter__(self):
        global _GRAD_ENABLED
        self._prev = _GRAD_ENABLED
        _GRAD_ENABLED = False
        return self

    def __exit__(self, *exc):
        global _GRAD_ENABLED
        _GRAD_ENABLED = self._prev
        return False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise GraphError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self):
        return self.data

    def backward(self):
        """Accumulate d(self)/d(leaf) into `.grad` of every leaf."""
        DiffGraph(self).backward()

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars go through scale/shift, tensors must match shape
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, float(other))
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, -float(other))
        return sub(self, other)

    def __rsub__(self, other):
        return shift(neg(self), float(other))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __abs__(self):
        return absval(self)


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(data, parents, vjp):
    out = Tensor(data)
    out.requires_grad = True
    out._parents = tuple(parents)
    out._vjp = vjp
    return out


def _tracking(*tensors):
    return _GRAD_ENABLED and any(t.requires_grad for t in tensors)


def _same_shape(a, b, opname):
    if a.shape != b.shape:
        raise ShapeMismatch(f"{opname}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# primitives


def add(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "add")
    out = a.data + b.data
    if not _tracking(a, b):
        return Tensor(out)
    na, nb = a.requires_grad, b.requires_grad

    def vjp(g):
        return (g if na else None, g if nb else None)

    return _record(out, (a, b), vjp)


def sub(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "sub")
    out = a.data - b.data
    if not _tracking(a, b):
        return Tensor(out)
    na, nb = a.requires_grad, b.requires_grad

    def vjp(g):
        return (g if na else None, -g if nb else None)

    return _record(out, (a, b), vjp)


def neg(a):
    a = _as_tensor(a)
    if not _tracking(a):
        return Tensor(-a.data)
    return _record(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape(a, b, "mul")
    out = a.data * b.data
    if not _tracking(a, b):
        return Tensor(out)
    na, nb = a.requires_grad, b.requires_grad
    ad, bd = a.data, b.data

    def vjp(g):
        return (g * bd if na else None, g * ad if nb else None)

    return _record(out, (a, b), vjp)


def scale(a, c):
    a = _as_tensor(a)
    c = float(c)
    if not _tracking(a):
        return Tensor(a.data * c)
    return _record(a.data * c, (a,), lambda g: (g * c,))


def shift(a, c):
    a = _as_tensor(a)
    if not _tracking(a):
        return Tensor(a.data + c)
    return _record(a.data + c, (a,), lambda g: (g,))


def matmul(a, b):
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch(
            f"matmul needs two matrices, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(
            f"matmul: inner dimensions disagree for {a.shape} @ {b.shape}"
        )
    out = a.data @ b.data
    if not _tracking(a, b):
        return Tensor(out)
    na, nb = a.requires_grad, b.requires_grad
    ad, bd = a.data, b.data

    def vjp(g):
        return (g @ bd.T if na else None, ad.T @ g if nb else None)

    return _record(out, (a, b), vjp)


def relu(a):
    a = _as_tensor(a)
    out = np.maximum(a.data, 0.0)
    if not _tracking(a):
        return Tensor(out)
    mask = a.data > 0.0

    def vjp(g):
        return (g * mask,)

    return _record(out, (a,), vjp)


def _stable_sigmoid(x):
    # one exp evaluation; exp(-|x|) never overflows
    t = np.exp(-np.abs(x))
    denom = 1.0 + t
    return np.where(x >= 0, 1.0 / denom, t / denom)


def sigmoid(a):
    a = _as_tensor(a)
    out = _stable_sigmoid(a.data)
    if not _tracking(a):
        return Tensor(out)

    def vjp(g):
        return (g * out * (1.0 - out),)

    return _record(out, (a,), vjp)


def softplus(a):
    """log(1 + exp(x)), computed without overflow for large |x|."""
    a = _as_tensor(a)
    x = a.data
    t = np.exp(-np.abs(x))
    out = np.maximum(x, 0.0) + np.log1p(t)
    if not _tracking(a):
        return Tensor(out)
    denom = 1.0 + t
    sig = np.where(x >= 0, 1.0 / denom, t / denom)

    def vjp(g):
        return (g * sig,)

    return _record(out, (a,), vjp)


def absval(a):
    a = _as_tensor(a)
    out = np.abs(a.data)
    if not _tracking(a):
        return Tensor(out)
    sgn = np.sign(a.data)

    def vjp(g):
        return (g * sgn,)

    return _record(out, (a,), vjp)


def sum_all(a):
    a = _as_tensor(a)
    out = np.asarray(a.data.sum())
    if not _tracking(a):
        return Tensor(out)
    shape = a.shape

    def vjp(g):
        return (np.full(shape, float(g)),)

    return _record(out, (a,), vjp)


def mean_all(a):
    a = _as_tensor(a)
    n = a.data.size
    out = np.asarray(a.data.sum() / n)
    if not _tracking(a):
        return Tensor(out)
    shape = a.shape

    def vjp(g):
        return (np.full(shape, float(g) / n),)

    return _record(out, (a,), vjp)


def reshape(a, shape):
    a = _as_tensor(a)
    out = a.data.reshape(shape)
    if not _tracking(a):
        return Tensor(out)
    orig = a.shape

    def vjp(g):
        return (g.reshape(orig),)

    return _record(out, (a,), vjp)


def flip_axis(a, axis):
    a = _as_tensor(a)
    out = np.ascontiguousarray(np.flip(a.data, axis=axis))

    if not _tracking(a):
        return Tensor(out)

    def vjp(g):
        return (np.ascontiguousarray(np.flip(g, axis=axis)),)

    return _record(out, (a,), vjp)


def linear(x, w, b):
    """x @ w + b in one op; the bias add lands in the matmul buffer."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0] \
            or b.shape != (w.shape[1],):
        raise ShapeMismatch(
            f"linear: {x.shape} @ {w.shape} + {b.shape} does not conform")
    out = x.data @ w.data
    out += b.data
    if not _tracking(x, w, b):
        return Tensor(out)
    nx, nw, nb = x.requires_grad, w.requires_grad, b.requires_grad
    xd, wd = x.data, w.data

    def vjp(g):
        return (g @ wd.T if nx else None,
                xd.T @ g if nw else None,
                g.sum(axis=0) if nb else None)

    return _record(out, (x, w, b), vjp)


def linear_relu(x, w, b):
    """relu(x @ w + b) fused; saves two temporaries on the training path."""
    x, w, b = _as_tensor(x), _as_tensor(w), _as_tensor(b)
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0] \
            or b.shape != (w.shape[1],):
        raise ShapeMismatch(
            f"linear_relu: {x.shape} @ {w.shape} + {b.shape} does not conform")
    out = x.data @ w.data
    out += b.data
    np.maximum(out, 0.0, out=out)
    if not _tracking(x, w, b):
        return Tensor(out)
    nx, nw, nb = x.requires_grad, w.requires_grad, b.requires_grad
    xd, wd = x.data, w.data

    def vjp(g):
        gh = np.where(out > 0.0, g, 0.0)
        return (gh @ wd.T if nx else None,
                xd.T @ gh if nw else None,
                gh.sum(axis=0) if nb else None)

    return _record(out, (x, w, b), vjp)


def add_bias(x, b):
    """x[..., c] + b[c]."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"add_bias: {x.shape} with bias {b.shape}")
    out = x.data + b.data
    if not _tracking(x, b):
        return Tensor(out)
    nx, nb = x.requires_grad, b.requires_grad
    c = b.shape[0]

    def vjp(g):
        gb = g.reshape(-1, c).sum(axis=0) if nb else None
        return (g if nx else None, gb)

    return _record(out, (x, b), vjp)


def add_row_table(x, table):
    """x[b, i, j, c] + table[i, c]: same per-row offset for every column."""
    x = _as_tensor(x)
    tab = np.asarray(table, dtype=np.float64)
    if x.data.ndim != 4 or tab.ndim != 2 or x.shape[1] != tab.shape[0] \
            or x.shape[3] != tab.shape[1]:
        raise ShapeMismatch(f"add_row_table: {x.shape} with table {tab.shape}")
    out = x.data + tab[None, :, None, :]
    if not _tracking(x):
        return Tensor(out)

    def vjp(g):
        return (g,)

    return _record(out, (x,), vjp)


def append_channels(x, extra):
    """Concatenate constant channels onto the trailing axis of x."""
    x = _as_tensor(x)
    ex = np.asarray(extra, dtype=np.float64)
    if ex.shape[:-1] != x.shape[:-1]:
        raise ShapeMismatch(f"append_channels: {x.shape} with extra {ex.shape}")
    out = np.concatenate([x.data, ex], axis=-1)
    if not _tracking(x):
        return Tensor(out)
    c = x.shape[-1]

    def vjp(g):
        return (np.ascontiguousarray(g[..., :c]),)

    return _record(out, (x,), vjp)


def take_rows(x, idx):
    """Gather rows of a matrix; adjoint scatter-adds back."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise ShapeMismatch(f"take_rows needs a matrix, got {x.shape}")
    idx = np.asarray(idx, dtype=np.intp)
    out = x.data[idx]
    if not _tracking(x):
        return Tensor(out)
    n = x.shape[0]

    def vjp(g):
        buf = np.zeros((n, x.shape[1]))
        np.add.at(buf, idx, g)
        return (buf,)

    return _record(out, (x,), vjp)


def softmax(a):
    """Softmax of a vector, max-subtracted for stability."""
    a = _as_tensor(a)
    if a.data.ndim != 1:
        raise ShapeMismatch(f"softmax expects a vector, got shape {a.shape}")
    m = a.data.max()
    e = np.exp(a.data - m)
    out = e / e.sum()
    if not _tracking(a):
        return Tensor(out)

    def vjp(g):
        return (out * (g - float(np.dot(g, out))),)

    return _record(out, (a,), vjp)


# ---------------------------------------------------------------------------
# backward sweep


def _topo_order(root):
    order = []
    visited = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, it = stack[-1]
        advanced = False
        for p in it:
            if id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


class DiffGraph:
    """Topologically ordered record of the ops behind one scalar output.

    `nodes` lists every reachable tensor with operands before their users;
    `backward()` visits each node exactly once, accumulating shared-operand
    gradients by summation.
    """

    def __init__(self, output):
        if not isinstance(output, Tensor):
            raise GraphError("DiffGraph root must be a Tensor")
        if output.data.size != 1:
            raise GraphError(
                f"backward needs a scalar output, got shape {output.shape}"
            )
        self.output = output
        self.nodes = _topo_order(output)

    def _sweep(self):
        grads = {id(self.output): np.ones_like(self.output.data)}
        leaf_grads = {}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._vjp is None:
                if node.requires_grad:
                    leaf_grads[node] = g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None:
                    continue
                key = id(parent)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg
        return leaf_grads

    def backward(self):
        """Run the reverse sweep, accumulating into each leaf's `.grad`."""
        leaf_grads = self._sweep()
        for leaf, g in leaf_grads.items():
            leaf.grad = g if leaf.grad is None else leaf.grad + g
        return leaf_grads


def grad(output, wrt):
    """d(output)/d(t) for each tensor in `wrt`, without touching `.grad`."""
    leaf_grads = {id(t): g for t, g in DiffGraph(output)._sweep().items()}
    out = []
    for t in wrt:
        g = leaf_grads.get(id(t))
        out.append(np.zeros_like(t.data) if g is None else g)
    return out


# ---------------------------------------------------------------------------
# finite differences


def finite_diff_gradient(f, x, h=1e-5):
    """Central-difference gradient of a scalar function of an array."""
    if h <= 0:
        raise ValueError("finite difference step must be positive")
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = out.reshape(-1)
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f(x))
            flat[i] = orig - h
            fm = float(f(x))
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
    return out


def finite_diff_check(f, x, h=1e-5):
    """Max over elements of |analytic - numeric| / max(1, |analytic|).

    `f` maps a Tensor to a scalar Tensor; the numeric side re-evaluates f
    on perturbed copies so it never sees the recorded graph.
    """
    xt = x if isinstance(x, Tensor) else Tensor(x, requires_grad=True)
    if not xt.requires_grad:
        raise GraphError("finite_diff_check input must require gradients")
    analytic = grad(f(xt), [xt])[0]
    numeric = finite_diff_gradient(lambda arr: f(Tensor(arr)).item(),
                                   xt.data.copy(), h)
    denom = np.maximum(1.0, np.abs(analytic))
    return float(np.max(np.abs(analytic - numeric) / denom))
