"""Reverse-mode autodiff on numpy arrays.

A Tape is an append-only list of primitive operations; Var wraps an array
value plus its node id. backward() walks the list once in reverse insertion
order and is an error to call twice without re-recording. Constants mix
freely with Vars in every primitive, and the module-level dispatchers (exp,
log1p, clip, vsum, ...) fall back to plain numpy when no Var is involved, so
the same arithmetic code can run as a primal pass or a recorded pass.
"""

import numpy as np


def _unbroadcast(g, shape):
    # reduce a broadcasted gradient back to the operand's shape
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, (gd, sd) in enumerate(zip(g.shape, shape)):
        if sd == 1 and gd != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g.reshape(shape)


class Var:
    """A tape node: primal value plus position in the recording."""

    __slots__ = ("value", "tape", "idx")

    # make ndarray <op> Var defer to our reflected operators instead of
    # producing object arrays
    __array_ufunc__ = None

    def __init__(self, value, tape, idx):
        self.value = value
        self.tape = tape
        self.idx = idx

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(idx={self.idx}, shape={self.value.shape})"

    # arithmetic; every op records onto the owning tape
    def __add__(self, o):
        return _binary(self, o, lambda a, b: a + b,
                       lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, o):
        return _binary(self, o, lambda a, b: a - b,
                       lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, o):
        return _binary(o, self, lambda a, b: a - b,
                       lambda g, a, b: g, lambda g, a, b: -g)

    def __mul__(self, o):
        return _binary(self, o, lambda a, b: a * b,
                       lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __truediv__(self, o):
        return _binary(self, o, lambda a, b: a / b,
                       lambda g, a, b: g / b, lambda g, a, b: -g * a / (b * b))

    def __rtruediv__(self, o):
        return _binary(o, self, lambda a, b: a / b,
                       lambda g, a, b: g / b, lambda g, a, b: -g * a / (b * b))

    def __neg__(self):
        return _unary(self, lambda a: -a, lambda g, a: -g)

    def __pow__(self, p):
        p = float(p)
        return _unary(self, lambda a: a ** p, lambda g, a: g * p * a ** (p - 1.0))

    def __matmul__(self, o):
        return matmul(self, o)

    def __rmatmul__(self, o):
        return matmul(o, self)

    def __getitem__(self, key):
        v = self.value[key]

        def vjp(g, a=self.value, key=key):
            out = np.zeros_like(a)
            np.add.at(out, key, g)
            return out

        return self.tape._emit(np.asarray(v, dtype=np.float64), (self.idx,), (vjp,))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.value.shape
        return _unary(self, lambda a: a.reshape(shape),
                      lambda g, a: g.reshape(old))

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return vmean(self, axis=axis, keepdims=keepdims)


class Grads:
    """Gradient lookup for the Vars of one backward pass."""

    def __init__(self, slots, shapes):
        self._slots = slots
        self._shapes = shapes

    def __getitem__(self, var):
        g = self._slots[var.idx]
        if g is None:
            return np.zeros(self._shapes[var.idx])
        return g


class Tape:
    def __init__(self):
        self._parents = []  # tuple of parent ids (None for constants) per node
        self._vjps = []     # tuple of callables per node, aligned with parents
        self._shapes = []
        self._done = False

    def __len__(self):
        return len(self._parents)

    def var(self, value):
        """Register a leaf (a parameter or constant you want gradients for)."""
        return self._emit(np.asarray(value, dtype=np.float64), (), ())

    def _emit(self, value, parents, vjps):
        if self._done:
            raise RuntimeError("tape was already differentiated; build a fresh one")
        idx = len(self._parents)
        self._parents.append(parents)
        self._vjps.append(vjps)
        self._shapes.append(value.shape)
        return Var(value, self, idx)

    def backward(self, root, seed=None):
        """Accumulate d(root)/d(node) for every node; one shot per tape."""
        if self._done:
            raise RuntimeError("backward may run only once per recording")
        self._done = True
        slots = [None] * len(self._parents)
        if seed is None:
            if root.value.size != 1:
                raise ValueError("backward root must be scalar unless a seed is given")
            seed = np.ones_like(root.value)
        slots[root.idx] = np.asarray(seed, dtype=np.float64)
        for i in range(root.idx, -1, -1):
            g = slots[i]
            if g is None:
                continue
            for pid, vjp in zip(self._parents[i], self._vjps[i]):
                if pid is None:
                    continue
                c = vjp(g)
                slots[pid] = c if slots[pid] is None else slots[pid] + c
        return Grads(slots, self._shapes)


def _coerce(x):
    if isinstance(x, Var):
        return x.value, x
    return np.asarray(x, dtype=np.float64), None


def _find_tape(*xs):
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    return None


def _unary(x, fwd, vjp):
    xv, xvar = _coerce(x)
    out = fwd(xv)
    if xvar is None:
        return out

    def wrapped(g, a=xv):
        return _unbroadcast(vjp(g, a), a.shape)

    return xvar.tape._emit(np.asarray(out, dtype=np.float64), (xvar.idx,), (wrapped,))


def _binary(a, b, fwd, vjp_a, vjp_b):
    av, avar = _coerce(a)
    bv, bvar = _coerce(b)
    out = fwd(av, bv)
    tape = _find_tape(a, b)
    if tape is None:
        return out
    if avar is not None and bvar is not None and avar.tape is not bvar.tape:
        raise ValueError("operands recorded on different tapes")
    parents, vjps = [], []
    if avar is not None:
        parents.append(avar.idx)
        vjps.append(lambda g, av=av, bv=bv: _unbroadcast(vjp_a(g, av, bv), av.shape))
    else:
        parents.append(None)
        vjps.append(None)
    if bvar is not None:
        parents.append(bvar.idx)
        vjps.append(lambda g, av=av, bv=bv: _unbroadcast(vjp_b(g, av, bv), bv.shape))
    else:
        parents.append(None)
        vjps.append(None)
    return tape._emit(np.asarray(out, dtype=np.float64), tuple(parents), tuple(vjps))


# ---- dispatchers: work on Var or ndarray ----------------------------------

def exp(x):
    return _unary(x, np.exp, lambda g, a: g * np.exp(a)) if isinstance(x, Var) else np.exp(x)


def log(x):
    return _unary(x, np.log, lambda g, a: g / a) if isinstance(x, Var) else np.log(x)


def log1p(x):
    return _unary(x, np.log1p, lambda g, a: g / (1.0 + a)) if isinstance(x, Var) else np.log1p(x)


def sqrt(x):
    if isinstance(x, Var):
        return _unary(x, np.sqrt, lambda g, a: g * 0.5 / np.sqrt(a))
    return np.sqrt(x)


def sin(x):
    return _unary(x, np.sin, lambda g, a: g * np.cos(a)) if isinstance(x, Var) else np.sin(x)


def cos(x):
    return _unary(x, np.cos, lambda g, a: -g * np.sin(a)) if isinstance(x, Var) else np.cos(x)


def tanh(x):
    if isinstance(x, Var):
        return _unary(x, np.tanh, lambda g, a: g * (1.0 - np.tanh(a) ** 2))
    return np.tanh(x)


def _softplus_np(x):
    # stable ln(1+e^x) = max(x,0) + log1p(exp(-|x|))
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sigmoid_np(x):
    # evaluated on the side that keeps exp() bounded
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def softplus(x):
    if isinstance(x, Var):
        return _unary(x, _softplus_np,
                      lambda g, a: g * _sigmoid_np(np.asarray(a, dtype=np.float64)))
    return _softplus_np(x)


def relu(x):
    if isinstance(x, Var):
        return _unary(x, lambda a: np.maximum(a, 0.0),
                      lambda g, a: g * (a > 0.0))
    return np.maximum(x, 0.0)


def absval(x):
    if isinstance(x, Var):
        return _unary(x, np.abs, lambda g, a: g * np.sign(a))
    return np.abs(x)


def maximum(a, b):
    if isinstance(a, Var) or isinstance(b, Var):
        return _binary(a, b, np.maximum,
                       lambda g, av, bv: g * (av >= bv),
                       lambda g, av, bv: g * (bv > av))
    return np.maximum(a, b)


def minimum(a, b):
    if isinstance(a, Var) or isinstance(b, Var):
        return _binary(a, b, np.minimum,
                       lambda g, av, bv: g * (av <= bv),
                       lambda g, av, bv: g * (bv < av))
    return np.minimum(a, b)


def clip(x, lo, hi):
    # pass-through subgradient strictly inside [lo, hi], zero outside
    if isinstance(x, Var):
        return _unary(x, lambda a: np.clip(a, lo, hi),
                      lambda g, a: g * ((a >= lo) & (a <= hi)))
    return np.clip(x, lo, hi)


def where(cond, a, b):
    cond = np.asarray(cond, dtype=bool)
    if isinstance(a, Var) or isinstance(b, Var):
        return _binary(a, b, lambda av, bv: np.where(cond, av, bv),
                       lambda g, av, bv: g * cond,
                       lambda g, av, bv: g * ~cond)
    return np.where(cond, a, b)


def vsum(x, axis=None, keepdims=False):
    if not isinstance(x, Var):
        return np.sum(x, axis=axis, keepdims=keepdims)
    shape = x.value.shape

    def vjp(g, a=None):
        if axis is None:
            return np.broadcast_to(g, shape).copy()
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            gs = list(np.shape(g))
            for ax in sorted(a % len(shape) for a in axes):
                gs.insert(ax, 1)
            g = np.reshape(g, gs)
        return np.broadcast_to(g, shape).copy()

    return _unary(x, lambda a: np.sum(a, axis=axis, keepdims=keepdims),
                  lambda g, a: vjp(g))


def vmean(x, axis=None, keepdims=False):
    if not isinstance(x, Var):
        return np.mean(x, axis=axis, keepdims=keepdims)
    shape = x.value.shape
    if axis is None:
        n = int(np.prod(shape)) if shape else 1
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([shape[a] for a in axes]))
    return vsum(x, axis=axis, keepdims=keepdims) / float(n)


def matmul(a, b):
    av, avar = _coerce(a)
    bv, bvar = _coerce(b)
    if avar is None and bvar is None:
        return av @ bv
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul on the tape supports 2-D operands only")
    return _binary(a, b, lambda x, y: x @ y,
                   lambda g, x, y: g @ y.T,
                   lambda g, x, y: x.T @ g)


def gather(x, idx):
    """Row gather along axis 0: out = x[idx]; backward scatter-adds."""
    idx = np.asarray(idx)
    if not isinstance(x, Var):
        return x[idx]
    xv = x.value
    out = xv[idx]

    def vjp(g, a=xv, idx=idx):
        acc = np.zeros_like(a)
        np.add.at(acc, idx, g)
        return acc

    return x.tape._emit(np.asarray(out, dtype=np.float64), (x.idx,), (vjp,))


def concat(parts, axis=0):
    if not any(isinstance(p, Var) for p in parts):
        return np.concatenate(parts, axis=axis)
    tape = _find_tape(*parts)
    vals = [p.value if isinstance(p, Var) else np.asarray(p, dtype=np.float64)
            for p in parts]
    out = np.concatenate(vals, axis=axis)
    offsets = np.cumsum([0] + [v.shape[axis] for v in vals])
    parents, vjps = [], []
    for k, p in enumerate(parts):
        if isinstance(p, Var):
            lo, hi = offsets[k], offsets[k + 1]

            def vjp(g, lo=lo, hi=hi):
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                return g[tuple(sl)]

            parents.append(p.idx)
            vjps.append(vjp)
        else:
            parents.append(None)
            vjps.append(None)
    return tape._emit(out, tuple(parents), tuple(vjps))


def value_of(x):
    """Primal value of a Var, or the array itself."""
    return x.value if isinstance(x, Var) else np.asarray(x)


def grad_check(fn, point, step=1e-6):
    """Max relative error between the tape gradient of fn and central
    differences, coordinate-wise.

    fn takes one Var and returns a scalar Var. A large returned error at a
    kink (e.g. |x| at 0) is the expected signal for non-differentiability.
    """
    point = np.asarray(point, dtype=np.float64)
    tape = Tape()
    x = tape.var(point)
    y = fn(x)
    g = tape.backward(y)[x]

    def primal(p):
        t = Tape()
        return float(value_of(fn(t.var(p))))

    num = np.zeros_like(point)
    flat = point.ravel()
    nf = num.ravel()
    for i in range(flat.size):
        e = np.zeros_like(flat)
        e[i] = step
        nf[i] = (primal((flat + e).reshape(point.shape))
                 - primal((flat - e).reshape(point.shape))) / (2.0 * step)
    denom = np.maximum(np.maximum(np.abs(g), np.abs(num)), 1e-8)
    return float(np.max(np.abs(g - num) / denom))
