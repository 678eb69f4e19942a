"""Reverse-mode automatic differentiation on a write-once tape.

Every scalar produced while recording is an individual tape node, so the
gradient of a recorded output is defined with respect to each input entry.
Nodes are created in topological order and stored in vectorized chunks
(one chunk = one operation applied to a block of nodes), which keeps the
Python overhead of recording and of the reverse sweep proportional to the
number of *operations*, not the number of scalars.

The public surface:

* ``Tape``             -- owns the node arena, checkpoint regions, backward.
* ``AdValue``          -- an array (or scalar) of live tape nodes.
* module functions     -- ``exp``, ``minimum``, ``sum_last``, ``linear`` ...
  They accept either ``AdValue`` or plain numpy input and fall back to
  numpy when nothing is being recorded, so numerical code can be written
  once and run with or without a tape.

Subgradient conventions, fixed so tests are deterministic: d|x|/dx is
sign(x) with 0 at x = 0; min/max route the gradient to the selected
argument with ties going to the first one.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import special as _sp

__all__ = [
    "Tape", "AdValue", "Gradients", "DomainError", "TapeError",
    "value_of", "is_recorded",
    "absolute", "exp", "log", "log1p", "sqrt", "sin", "cos", "tanh", "erf",
    "power", "minimum", "maximum", "softplus",
    "sum_all", "sum_last", "amax_all", "amin_all", "amax_last", "amin_last",
    "linear", "apply_matrix", "scatter_add", "concat", "stack",
]

_INV_SQRT_PI2 = 2.0 / math.sqrt(math.pi)


class TapeError(RuntimeError):
    """Misuse of the tape (markers, foreign values, missing output)."""


class DomainError(ValueError):
    """An elementary operation was evaluated outside its domain."""


def _as_array(x):
    return np.asarray(x, dtype=np.float64)


def value_of(x):
    """Plain numpy value of ``x`` whether or not it is recorded."""
    return x.val if isinstance(x, AdValue) else _as_array(x)


def is_recorded(x) -> bool:
    return isinstance(x, AdValue)


class AdValue:
    """An array of live tape nodes: values plus per-element node indices.

    Scalars are represented with shape ``()``.  Indexing, reshaping and
    stacking are free (pure index bookkeeping, nothing is recorded).
    """

    __slots__ = ("tape", "val", "idx", "_lo")

    # keep numpy from consuming us in mixed expressions
    __array_ufunc__ = None

    def __init__(self, tape, val, idx, lo=None):
        self.tape = tape
        self.val = val
        self.idx = idx
        self._lo = lo  # start node when idx is a fresh contiguous range

    # -- metadata ------------------------------------------------------
    @property
    def shape(self):
        return self.val.shape

    @property
    def size(self):
        return self.val.size

    @property
    def ndim(self):
        return self.val.ndim

    def item(self):
        return self.val.item()

    def __float__(self):
        return self.val.item()

    def __repr__(self):
        return f"AdValue(shape={self.val.shape}, val={self.val!r})"

    # -- free structural ops ------------------------------------------
    def __getitem__(self, key):
        return AdValue(self.tape, self.val[key], self.idx[key])

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return AdValue(self.tape, self.val.reshape(shape),
                       self.idx.reshape(shape), self._lo)

    def ravel(self):
        return self.reshape(self.size)

    @property
    def T(self):
        return AdValue(self.tape, self.val.T, self.idx.T)

    def broadcast_to(self, shape):
        return AdValue(self.tape, np.broadcast_to(self.val, shape),
                       np.broadcast_to(self.idx, shape))

    # -- comparisons read values only (masks are fixed when recorded) --
    def __lt__(self, other):
        return self.val < value_of(other)

    def __le__(self, other):
        return self.val <= value_of(other)

    def __gt__(self, other):
        return self.val > value_of(other)

    def __ge__(self, other):
        return self.val >= value_of(other)

    # -- arithmetic ----------------------------------------------------
    def __neg__(self):
        return _unary("neg", self)

    def __abs__(self):
        return _unary("abs", self)

    def __add__(self, other):
        return _binary("add", self, other)

    def __radd__(self, other):
        return _binary("add", other, self)

    def __sub__(self, other):
        return _binary("sub", self, other)

    def __rsub__(self, other):
        return _binary("sub", other, self)

    def __mul__(self, other):
        return _binary("mul", self, other)

    def __rmul__(self, other):
        return _binary("mul", other, self)

    def __truediv__(self, other):
        return _binary("div", self, other)

    def __rtruediv__(self, other):
        return _binary("div", other, self)

    def __pow__(self, p):
        return power(self, p)


# ---------------------------------------------------------------------
# chunks
# ---------------------------------------------------------------------

class _Chunk:
    __slots__ = ("out_lo", "n")

    def backward(self, adj, values):  # pragma: no cover - interface
        raise NotImplementedError

    def replay(self, values):  # pragma: no cover - interface
        raise NotImplementedError


def _accum(adj, ref, g):
    """Accumulate gradient ``g`` into the slots described by ``ref``.

    ``ref`` is either ``("contig", lo, n)`` for a fresh contiguous block
    (plain slice add) or ``("idx", array)`` for scattered parents, which
    may repeat after broadcasting and therefore need unbuffered add.
    """
    if ref is None:
        return
    if ref[0] == "contig":
        _, lo, n = ref
        adj[lo:lo + n] += g.ravel()
    else:
        np.add.at(adj, ref[1].ravel(), g.ravel())


def _parent_ref(x: AdValue, bcast_shape):
    """Reference used by backward to reach ``x``'s nodes.

    Uses the cheap contiguous form when no broadcasting happened and the
    operand was a fresh chunk output.
    """
    if x.val.shape == bcast_shape and x._lo is not None:
        return ("contig", x._lo, x.size)
    idx = np.broadcast_to(x.idx, bcast_shape)
    return ("idx", idx)


def _gather_parent(ref, values, const, shape):
    if ref is None:
        return const.reshape(shape) if const is not None else None
    if ref[0] == "contig":
        _, lo, n = ref
        return values[lo:lo + n].reshape(shape)
    return values[ref[1]]


_UNARY_FWD = {
    "neg": lambda a: -a,
    "abs": np.abs,
    "exp": np.exp,
    "log": np.log,
    "log1p": np.log1p,
    "sqrt": np.sqrt,
    "sin": np.sin,
    "cos": np.cos,
    "tanh": np.tanh,
    "erf": _sp.erf,
}


class _Unary(_Chunk):
    __slots__ = ("code", "a_ref", "out_lo", "n", "shape")

    def __init__(self, code, a_ref, out_lo, n, shape):
        self.code = code
        self.a_ref = a_ref
        self.out_lo = out_lo
        self.n = n
        self.shape = shape

    def replay(self, values):
        a = _gather_parent(self.a_ref, values, None, self.shape)
        values[self.out_lo:self.out_lo + self.n] = \
            _UNARY_FWD[self.code](a).ravel()

    def backward(self, adj, values):
        g = adj[self.out_lo:self.out_lo + self.n].reshape(self.shape)
        a = _gather_parent(self.a_ref, values, None, self.shape)
        code = self.code
        if code == "neg":
            d = -g
        elif code == "abs":
            d = g * np.sign(a)
        elif code == "exp":
            out = values[self.out_lo:self.out_lo + self.n].reshape(self.shape)
            d = g * out
        elif code == "log":
            d = g / a
        elif code == "log1p":
            d = g / (1.0 + a)
        elif code == "sqrt":
            out = values[self.out_lo:self.out_lo + self.n].reshape(self.shape)
            d = g * (0.5 / out)
        elif code == "sin":
            d = g * np.cos(a)
        elif code == "cos":
            d = -g * np.sin(a)
        elif code == "tanh":
            out = values[self.out_lo:self.out_lo + self.n].reshape(self.shape)
            d = g * (1.0 - out * out)
        elif code == "erf":
            d = g * (_INV_SQRT_PI2 * np.exp(-a * a))
        else:  # pragma: no cover
            raise AssertionError(code)
        _accum(adj, self.a_ref, d)


class _PowConst(_Chunk):
    __slots__ = ("a_ref", "p", "out_lo", "n", "shape")

    def __init__(self, a_ref, p, out_lo, n, shape):
        self.a_ref = a_ref
        self.p = p
        self.out_lo = out_lo
        self.n = n
        self.shape = shape

    def replay(self, values):
        a = _gather_parent(self.a_ref, values, None, self.shape)
        values[self.out_lo:self.out_lo + self.n] = (a ** self.p).ravel()

    def backward(self, adj, values):
        g = adj[self.out_lo:self.out_lo + self.n].reshape(self.shape)
        a = _gather_parent(self.a_ref, values, None, self.shape)
        _accum(adj, self.a_ref, g * (self.p * a ** (self.p - 1.0)))


_BINARY_FWD = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "min": np.minimum,
    "max": np.maximum,
}


class _Binary(_Chunk):
    __slots__ = ("code", "a_ref", "a_const", "b_ref", "b_const",
                 "out_lo", "n", "shape")

    def __init__(self, code, a_ref, a_const, b_ref, b_const,
                 out_lo, n, shape):
        self.code = code
        self.a_ref = a_ref
        self.a_const = a_const
        self.b_ref = b_ref
        self.b_const = b_const
        self.out_lo = out_lo
        self.n = n
        self.shape = shape

    def replay(self, values):
        a = _gather_parent(self.a_ref, values, self.a_const, self.shape)
        b = _gather_parent(self.b_ref, values, self.b_const, self.shape)
        values[self.out_lo:self.out_lo + self.n] = \
            _BINARY_FWD[self.code](a, b).ravel()

    def backward(self, adj, values):
        g = adj[self.out_lo:self.out_lo + self.n].reshape(self.shape)
        code = self.code
        if code == "add":
            _accum(adj, self.a_ref, g)
            _accum(adj, self.b_ref, g)
            return
        if code == "sub":
            _accum(adj, self.a_ref, g)
            _accum(adj, self.b_ref, -g)
            return
        a = _gather_parent(self.a_ref, values, self.a_const, self.shape)
        b = _gather_parent(self.b_ref, values, self.b_const, self.shape)
        if code == "mul":
            _accum(adj, self.a_ref, g * b)
            _accum(adj, self.b_ref, g * a)
        elif code == "div":
            _accum(adj, self.a_ref, g / b)
            if self.b_ref is not None:
                _accum(adj, self.b_ref, -g * a / (b * b))
        elif code == "min":
            take_a = a <= b  # ties go to the first argument
            _accum(adj, self.a_ref, g * take_a)
            _accum(adj, self.b_ref, g * ~take_a)
        elif code == "max":
            take_a = a >= b
            _accum(adj, self.a_ref, g * take_a)
            _accum(adj, self.b_ref, g * ~take_a)
        else:  # pragma: no cover
            raise AssertionError(code)


class _Reduce(_Chunk):
    """sum / max / min along the last axis of a (m, r) index block."""

    __slots__ = ("code", "a_ref", "a_idx2d", "out_lo", "m", "r", "sel")

    def __init__(self, code, a_ref, a_idx2d, out_lo, m, r, sel):
        self.code = code
        self.a_ref = a_ref          # accumulation reference (full block)
        self.a_idx2d = a_idx2d      # (m, r) node indices for replay/select
        self.out_lo = out_lo
        self.m = m
        self.r = r
        self.sel = sel              # flat selected parent ids (max/min)

    def replay(self, values):
        a = values[self.a_idx2d]
        if self.code == "sum":
            out = a.sum(axis=1)
        elif self.code == "max":
            arg = np.argmax(a, axis=1)
            self.sel = self.a_idx2d[np.arange(self.m), arg]
            out = a[np.arange(self.m), arg]
        else:
            arg = np.argmin(a, axis=1)
            self.sel = self.a_idx2d[np.arange(self.m), arg]
            out = a[np.arange(self.m), arg]
        values[self.out_lo:self.out_lo + self.m] = out

    def backward(self, adj, values):
        g = adj[self.out_lo:self.out_lo + self.m]
        if self.code == "sum":
            _accum(adj, self.a_ref, np.broadcast_to(g[:, None],
                                                    (self.m, self.r)))
        else:
            np.add.at(adj, self.sel, g)


class _Linear(_Chunk):
    """y[r, :] = x[r, :] @ W.T + b for a block of rows."""

    __slots__ = ("x_ref", "x_idx", "x_const", "w_ref", "w_idx", "w_const",
                 "b_ref", "b_const", "out_lo", "rows", "nout", "nin")

    def __init__(self, x_ref, x_idx, x_const, w_ref, w_idx, w_const,
                 b_ref, b_const, out_lo, rows, nout, nin):
        self.x_ref = x_ref
        self.x_idx = x_idx
        self.x_const = x_const
        self.w_ref = w_ref
        self.w_idx = w_idx
        self.w_const = w_const
        self.b_ref = b_ref
        self.b_const = b_const
        self.out_lo = out_lo
        self.rows = rows
        self.nout = nout
        self.nin = nin

    def _xw(self, values):
        x = values[self.x_idx] if self.x_idx is not None else self.x_const
        w = values[self.w_idx] if self.w_idx is not None else self.w_const
        return x, w

    def replay(self, values):
        x, w = self._xw(values)
        y = x @ w.T
        if self.b_const is not None:
            y = y + self.b_const
        elif self.b_ref is not None:
            y = y + _gather_parent(self.b_ref, values, None, (self.nout,))
        values[self.out_lo:self.out_lo + self.rows * self.nout] = y.ravel()

    def backward(self, adj, values):
        g = adj[self.out_lo:self.out_lo + self.rows * self.nout]
        g = g.reshape(self.rows, self.nout)
        x, w = self._xw(values)
        if self.x_ref is not None:
            _accum(adj, self.x_ref, g @ w)
        if self.w_ref is not None:
            _accum(adj, self.w_ref, g.T @ x)
        if self.b_ref is not None:
            _accum(adj, self.b_ref, g.sum(axis=0))


class _ScatterAdd(_Chunk):
    """y[seg[i]] += x[i] into a fresh block of ``out_n`` nodes."""

    __slots__ = ("a_ref", "a_idx", "seg", "out_lo", "out_n")

    def __init__(self, a_ref, a_idx, seg, out_lo, out_n):
        self.a_ref = a_ref
        self.a_idx = a_idx
        self.seg = seg
        self.out_lo = out_lo
        self.out_n = out_n

    def replay(self, values):
        out = np.zeros(self.out_n)
        np.add.at(out, self.seg, values[self.a_idx])
        values[self.out_lo:self.out_lo + self.out_n] = out

    def backward(self, adj, values):
        g = adj[self.out_lo:self.out_lo + self.out_n]
        _accum(adj, self.a_ref, g[self.seg])


class _Const(_Chunk):
    """Lifted constant block; replayable so regions may discard it."""

    __slots__ = ("vals", "out_lo", "n")

    def __init__(self, vals, out_lo):
        self.vals = vals
        self.out_lo = out_lo
        self.n = vals.size

    def replay(self, values):
        values[self.out_lo:self.out_lo + self.n] = self.vals.ravel()

    def backward(self, adj, values):
        pass


class _Region:
    __slots__ = ("chunk_lo", "chunk_hi", "node_lo", "node_hi", "keep_idx")

    def __init__(self, chunk_lo, node_lo):
        self.chunk_lo = chunk_lo
        self.chunk_hi = None
        self.node_lo = node_lo
        self.node_hi = None
        self.keep_idx = None


# ---------------------------------------------------------------------
# tape
# ---------------------------------------------------------------------

class Gradients:
    """Adjoints of one backward sweep, queried per recorded value."""

    def __init__(self, tape, adj):
        self._tape = tape
        self._adj = adj

    def wrt(self, x) -> np.ndarray:
        if not isinstance(x, AdValue):
            raise TapeError("constants carry no adjoint")
        if x.tape is not self._tape:
            raise TapeError("value was recorded on a different tape")
        return self._adj[x.idx].copy()

    def __getitem__(self, x):
        return self.wrt(x)


class Tape:
    """Growable arena of nodes; records chunks and runs reverse sweeps."""

    def __init__(self):
        self.n_nodes = 0
        self._cap = 1024
        self.values = np.empty(self._cap)
        self.chunks: list[_Chunk] = []
        self._regions: list[_Region] = []
        self._open_region: _Region | None = None

    # -- node allocation ----------------------------------------------
    def _alloc(self, n: int) -> int:
        lo = self.n_nodes
        self.n_nodes += n
        if self.n_nodes > self._cap:
            while self._cap < self.n_nodes:
                self._cap *= 2
            new = np.empty(self._cap)
            new[:lo] = self.values[:lo]
            self.values = new
        return lo

    def _emit(self, out_vals: np.ndarray) -> AdValue:
        # np.array keeps 0-d shapes (ascontiguousarray would promote
        # them to 1-d) and guarantees an owned C-contiguous buffer
        out_vals = np.array(out_vals, dtype=np.float64)
        n = out_vals.size
        lo = self._alloc(n)
        self.values[lo:lo + n] = out_vals.ravel()
        idx = np.arange(lo, lo + n, dtype=np.int64).reshape(out_vals.shape)
        return AdValue(self, out_vals, idx, lo)

    def input(self, values, parameter: bool = False) -> AdValue:
        """Create leaf nodes from ``values`` (copied onto the tape).

        Inputs must be created outside checkpoint regions (they have no
        producing chunk to replay from)."""
        out = self._emit(_as_array(values))
        if parameter:
            # leaves are their own chunk-less inputs; nothing else needed
            pass
        return out

    def lift_const(self, values) -> AdValue:
        """Put a constant block on the tape through a replayable chunk
        (zero adjoint; safe inside checkpoint regions)."""
        vals = np.ascontiguousarray(_as_array(values))
        out = self._emit(vals)
        self.chunks.append(_Const(vals, out._lo))
        return out

    # -- spec-style string dispatch -------------------------------------
    def record(self, op: str, *args):
        """Record a named elementary operation; returns an ``AdValue``."""
        table = {
            "+": lambda a, b: _binary("add", a, b),
            "-": lambda a, b: _binary("sub", a, b),
            "−": lambda a, b: _binary("sub", a, b),
            "*": lambda a, b: _binary("mul", a, b),
            "×": lambda a, b: _binary("mul", a, b),
            "/": lambda a, b: _binary("div", a, b),
            "÷": lambda a, b: _binary("div", a, b),
            "pow": power,
            "exp": exp,
            "log": log,
            "sin": sin,
            "cos": cos,
            "sqrt": sqrt,
            "abs": absolute,
            "min": minimum,
            "max": maximum,
            "tanh": tanh,
            "erf": erf,
        }
        if op not in table:
            raise TapeError(f"unknown operation {op!r}")
        return table[op](*args)

    # -- checkpoint regions ---------------------------------------------
    def begin_checkpoint(self) -> None:
        if self._open_region is not None:
            raise TapeError("nested checkpoint regions are not supported")
        self._open_region = _Region(len(self.chunks), self.n_nodes)

    def end_checkpoint(self, *keep) -> None:
        """Close the open region.

        ``keep`` lists the recorded values that escape the region (for a
        solver step: the new state).  Everything else recorded inside the
        region has its stored value discarded now and recomputed on the
        fly during ``backward``.
        """
        region = self._open_region
        if region is None:
            raise TapeError("end_checkpoint without begin_checkpoint")
        self._open_region = None
        region.chunk_hi = len(self.chunks)
        region.node_hi = self.n_nodes
        if region.chunk_hi == region.chunk_lo:
            return  # empty region: no-op
        kept = [np.asarray(k.idx).ravel() for k in keep
                if isinstance(k, AdValue)]
        keep_idx = (np.unique(np.concatenate(kept)) if kept
                    else np.empty(0, dtype=np.int64))
        keep_idx = keep_idx[(keep_idx >= region.node_lo)
                            & (keep_idx < region.node_hi)]
        region.keep_idx = keep_idx
        self._regions.append(region)
        self._invalidate(region)

    def _invalidate(self, region: _Region) -> None:
        kept = self.values[region.keep_idx].copy()
        self.values[region.node_lo:region.node_hi] = np.nan
        self.values[region.keep_idx] = kept

    def _replay(self, region: _Region) -> None:
        for ci in range(region.chunk_lo, region.chunk_hi):
            self.chunks[ci].replay(self.values)

    class _RegionContext:
        def __init__(self, tape):
            self._tape = tape
            self._keep = []

        def keep(self, *vals):
            self._keep.extend(vals)

        def __enter__(self):
            self._tape.begin_checkpoint()
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc_type is None:
                self._tape.end_checkpoint(*self._keep)
            else:
                self._tape._open_region = None
            return False

    def checkpoint_region(self) -> "_RegionContext":
        """Context-manager form of the begin/end markers."""
        return Tape._RegionContext(self)

    # -- backward --------------------------------------------------------
    def backward(self, output: AdValue) -> Gradients:
        """One reverse sweep from a scalar output; returns all adjoints."""
        if not isinstance(output, AdValue):
            raise TapeError("output is not on the tape")
        if output.tape is not self:
            raise TapeError("output is not on this tape")
        if output.size != 1:
            raise TapeError("backward needs a scalar output")
        if self._open_region is not None:
            raise TapeError("unbalanced checkpoint markers")
        adj = np.zeros(self.n_nodes)
        adj[output.idx.item()] = 1.0

        regions = {r.chunk_hi - 1: r for r in self._regions}
        starts = {r.chunk_lo: r for r in self._regions}
        for ci in range(len(self.chunks) - 1, -1, -1):
            if ci in regions:
                self._replay(regions[ci])
            self.chunks[ci].backward(adj, self.values)
            if ci in starts:
                self._invalidate(starts[ci])
        return Gradients(self, adj)


# ---------------------------------------------------------------------
# recording helpers
# ---------------------------------------------------------------------

def _find_tape(*xs):
    for x in xs:
        if isinstance(x, AdValue):
            return x.tape
    return None


def _unary(code, x):
    if not isinstance(x, AdValue):
        return _UNARY_FWD[code](_as_array(x))
    a = x.val
    if code == "log" and np.any(a <= 0.0):
        raise DomainError(f"log of non-positive argument (min {a.min()})")
    if code == "sqrt" and np.any(a < 0.0):
        raise DomainError(f"sqrt of negative argument (min {a.min()})")
    out_vals = _UNARY_FWD[code](a)
    out = x.tape._emit(out_vals)
    x.tape.chunks.append(
        _Unary(code, _parent_ref(x, out_vals.shape),
               out._lo, out.size, out_vals.shape))
    return out


def _binary(code, a, b):
    tape = _find_tape(a, b)
    if tape is None:
        return _BINARY_FWD[code](_as_array(a), _as_array(b))
    a_is = isinstance(a, AdValue)
    b_is = isinstance(b, AdValue)
    av = a.val if a_is else _as_array(a)
    bv = b.val if b_is else _as_array(b)
    if code == "div" and np.any(bv == 0.0):
        raise DomainError("division by zero while recording")
    out_vals = _BINARY_FWD[code](av, bv)
    shape = out_vals.shape
    a_ref = _parent_ref(a, shape) if a_is else None
    b_ref = _parent_ref(b, shape) if b_is else None
    a_const = None if a_is else np.ascontiguousarray(
        np.broadcast_to(av, shape))
    b_const = None if b_is else np.ascontiguousarray(
        np.broadcast_to(bv, shape))
    out = tape._emit(out_vals)
    tape.chunks.append(_Binary(code, a_ref, a_const, b_ref, b_const,
                               out._lo, out.size, shape))
    return out


# -- public elementwise functions --------------------------------------

def absolute(x):
    return _unary("abs", x)


def exp(x):
    return _unary("exp", x)


def log(x):
    return _unary("log", x)


def log1p(x):
    return _unary("log1p", x)


def sqrt(x):
    return _unary("sqrt", x)


def sin(x):
    return _unary("sin", x)


def cos(x):
    return _unary("cos", x)


def tanh(x):
    return _unary("tanh", x)


def erf(x):
    return _unary("erf", x)


def power(x, p):
    if isinstance(p, AdValue):
        # general exponent: a**b = exp(b log a)
        return exp(_binary("mul", p, log(x)))
    p = float(p)
    if not isinstance(x, AdValue):
        return _as_array(x) ** p
    out_vals = x.val ** p
    out = x.tape._emit(out_vals)
    x.tape.chunks.append(
        _PowConst(_parent_ref(x, out_vals.shape), p,
                  out._lo, out.size, out_vals.shape))
    return out


def minimum(a, b):
    return _binary("min", a, b)


def maximum(a, b):
    return _binary("max", a, b)


def softplus(x):
    """log(1 + e^x), computed in the overflow-safe split form."""
    return maximum(x, 0.0) + log1p(exp(-absolute(x)))


# -- reductions ---------------------------------------------------------

def _reduce(code, x, keep_last):
    if not isinstance(x, AdValue):
        x = _as_array(x)
        fn = {"sum": np.sum, "max": np.max, "min": np.min}[code]
        return fn(x, axis=-1) if keep_last else fn(x)
    if keep_last:
        m = int(np.prod(x.shape[:-1])) if x.ndim > 1 else 1
        r = x.shape[-1]
        out_shape = x.shape[:-1]
    else:
        m, r = 1, x.size
        out_shape = ()
    if r == 0:
        raise TapeError("reduction over an empty axis")
    idx2d = np.ascontiguousarray(x.idx.reshape(m, r))
    vals2d = x.val.reshape(m, r)
    if code == "sum":
        out_vals = vals2d.sum(axis=1)
        sel = None
    elif code == "max":
        arg = np.argmax(vals2d, axis=1)
        sel = idx2d[np.arange(m), arg]
        out_vals = vals2d[np.arange(m), arg]
    else:
        arg = np.argmin(vals2d, axis=1)
        sel = idx2d[np.arange(m), arg]
        out_vals = vals2d[np.arange(m), arg]
    out = x.tape._emit(out_vals.reshape(out_shape))
    a_ref = _parent_ref(x.reshape(m, r), (m, r))
    x.tape.chunks.append(_Reduce(code, a_ref, idx2d, out._lo, m, r, sel))
    return out


def sum_all(x):
    return _reduce("sum", x, keep_last=False)


def sum_last(x):
    return _reduce("sum", x, keep_last=True)


def amax_all(x):
    return _reduce("max", x, keep_last=False)


def amin_all(x):
    return _reduce("min", x, keep_last=False)


def amax_last(x):
    return _reduce("max", x, keep_last=True)


def amin_last(x):
    return _reduce("min", x, keep_last=True)


# -- linear algebra -----------------------------------------------------

def linear(x, w, b=None):
    """``y = x @ w.T (+ b)`` with any mix of recorded/plain operands.

    ``x`` has shape (..., nin); ``w`` has shape (nout, nin); the result
    has shape (..., nout).
    """
    tape = _find_tape(x, w, b)
    xv = value_of(x)
    wv = value_of(w)
    lead = xv.shape[:-1]
    nin = xv.shape[-1]
    nout = wv.shape[0]
    if tape is None:
        y = xv.reshape(-1, nin) @ wv.T
        if b is not None:
            y = y + value_of(b)
        return y.reshape(lead + (nout,))
    rows = int(np.prod(lead)) if lead else 1
    x2 = xv.reshape(rows, nin)
    y = x2 @ wv.T
    bv = None
    if b is not None:
        bv = value_of(b).reshape(nout)
        y = y + bv
    out = tape._emit(y.reshape(lead + (nout,)))

    x_ref = x_idx = x_const = None
    if isinstance(x, AdValue):
        x_flat = x.reshape(rows, nin)
        x_ref = _parent_ref(x_flat, (rows, nin))
        x_idx = np.ascontiguousarray(x_flat.idx)
    else:
        x_const = np.ascontiguousarray(x2)
    w_ref = w_idx = w_const = None
    if isinstance(w, AdValue):
        w_ref = _parent_ref(w, wv.shape)
        w_idx = np.ascontiguousarray(w.idx)
    else:
        w_const = np.ascontiguousarray(wv)
    b_ref = b_const = None
    if isinstance(b, AdValue):
        b_ref = _parent_ref(b.reshape(nout), (nout,))
    elif b is not None:
        b_const = bv
    tape.chunks.append(_Linear(x_ref, x_idx, x_const, w_ref, w_idx, w_const,
                               b_ref, b_const, out._lo, rows, nout, nin))
    return out


def apply_matrix(a, x):
    """``y[..., i] = sum_j a[i, j] x[..., j]`` with a constant matrix."""
    return linear(x, a)


def scatter_add(x, seg, size):
    """Sum entries of ``x`` into ``size`` bins given by ``seg``."""
    seg = np.asarray(seg, dtype=np.int64).ravel()
    if not isinstance(x, AdValue):
        out = np.zeros(size)
        np.add.at(out, seg, _as_array(x).ravel())
        return out
    flat = x.ravel()
    out_vals = np.zeros(size)
    np.add.at(out_vals, seg, flat.val)
    out = x.tape._emit(out_vals)
    x.tape.chunks.append(
        _ScatterAdd(_parent_ref(flat, (flat.size,)),
                    np.ascontiguousarray(flat.idx), seg, out._lo, size))
    return out


def concat(parts, axis=0):
    """Concatenate recorded/plain arrays; free when all are recorded."""
    tape = _find_tape(*parts)
    if tape is None:
        return np.concatenate([_as_array(p) for p in parts], axis=axis)
    vals, idxs = [], []
    for p in parts:
        if isinstance(p, AdValue):
            vals.append(p.val)
            idxs.append(p.idx)
        else:
            lifted = tape.lift_const(p)
            vals.append(lifted.val)
            idxs.append(lifted.idx)
    return AdValue(tape, np.concatenate(vals, axis=axis),
                   np.concatenate(idxs, axis=axis))


def stack(parts, axis=0):
    tape = _find_tape(*parts)
    if tape is None:
        return np.stack([_as_array(p) for p in parts], axis=axis)
    vals, idxs = [], []
    for p in parts:
        if isinstance(p, AdValue):
            vals.append(p.val)
            idxs.append(p.idx)
        else:
            lifted = tape.lift_const(p)
            vals.append(lifted.val)
            idxs.append(lifted.idx)
    return AdValue(tape, np.stack(vals, axis=axis), np.stack(idxs, axis=axis))
