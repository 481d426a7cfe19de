"""Scalar reverse-mode differentiation on an explicitly recorded tape.

A :class:`Tape` records every elementary operation performed on its
:class:`Node` handles, in execution order, as a flat struct-of-arrays
program. Gradients come from a single reverse sweep in strict reverse tape
order, which makes them deterministic and exactly reproducible. A recorded
tape can be compiled once and re-run with fresh leaf values, so an
optimization loop pays the Python recording cost only once.

Two kinds of leaves exist: parameters (the quantities differentiated
against) and data leaves (per-trial constants such as measurements that can
be rebound between replays). Both are ``leaf`` nodes on the tape; only
their bookkeeping differs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import NonFiniteValueError, StructuralError

_OP_NAMES = {
    kernels.OP_LEAF: "leaf",
    kernels.OP_CONST: "const",
    kernels.OP_ADD: "add",
    kernels.OP_SUB: "sub",
    kernels.OP_MUL: "mul",
    kernels.OP_DIV: "div",
    kernels.OP_NEG: "neg",
    kernels.OP_EXP: "exp",
    kernels.OP_TANH: "tanh",
    kernels.OP_LOG: "log",
    kernels.OP_POWI: "pow-const",
}

_REAL_TYPES = (int, float, np.integer, np.floating)


@dataclass
class ParamVector:
    """Ordered parameter values with optional labels."""

    values: np.ndarray
    names: list[str] | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 1 or self.values.size < 1:
            raise StructuralError("ParamVector needs at least one value")
        if not np.all(np.isfinite(self.values)):
            raise StructuralError("ParamVector values must be finite")
        if self.names is not None and len(self.names) != self.values.size:
            raise StructuralError("names length must match values length")

    def __len__(self):
        return self.values.size


@dataclass(frozen=True)
class TapeNode:
    """Read-only view of one recorded operation."""

    op_kind: str
    parents: tuple[int, ...]
    local_partials: tuple[float, ...]
    value: float


class Node:
    """Handle to one tape position; supports arithmetic that records itself."""

    __slots__ = ("tape", "idx")

    def __init__(self, tape: "Tape", idx: int):
        self.tape = tape
        self.idx = idx

    @property
    def value(self) -> float:
        return self.tape._val[self.idx]

    def _coerce(self, other):
        if isinstance(other, Node):
            if other.tape is not self.tape:
                raise StructuralError("cannot mix nodes from different tapes")
            return other
        if isinstance(other, _REAL_TYPES):
            return self.tape.const(float(other))
        return NotImplemented

    def __add__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self.tape._binary(kernels.OP_ADD, self, o)

    __radd__ = __add__

    def __sub__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self.tape._binary(kernels.OP_SUB, self, o)

    def __rsub__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self.tape._binary(kernels.OP_SUB, o, self)

    def __mul__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self.tape._binary(kernels.OP_MUL, self, o)

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self.tape._binary(kernels.OP_DIV, self, o)

    def __rtruediv__(self, other):
        o = self._coerce(other)
        if o is NotImplemented:
            return NotImplemented
        return self.tape._binary(kernels.OP_DIV, o, self)

    def __neg__(self):
        return self.tape._unary(kernels.OP_NEG, self)

    def __pow__(self, k):
        if not isinstance(k, (int, np.integer)):
            raise StructuralError("tape exponents must be integer constants")
        return self.tape._unary(kernels.OP_POWI, self, aux=float(k))

    def __repr__(self):
        return f"Node({self.idx}: {_OP_NAMES[self.tape._ops[self.idx]]}={self.value!r})"


class Tape:
    """Append-only record of scalar operations in topological order."""

    __slots__ = ("_ops", "_pa", "_pb", "_aux", "_val",
                 "param_pos", "input_pos", "out_idx")

    def __init__(self):
        self._ops: list[int] = []
        self._pa: list[int] = []
        self._pb: list[int] = []
        self._aux: list[float] = []
        self._val: list[float] = []
        self.param_pos: list[int] = []
        self.input_pos: list[int] = []
        self.out_idx: int | None = None

    def __len__(self):
        return len(self._ops)

    # -- recording ---------------------------------------------------------

    def _push(self, op, a, b, aux, value) -> Node:
        idx = len(self._ops)
        if not (value > -math.inf and value < math.inf):
            raise NonFiniteValueError(
                f"non-finite value at tape position {idx} (op {_OP_NAMES[op]})",
                position=idx)
        self._ops.append(op)
        self._pa.append(a)
        self._pb.append(b)
        self._aux.append(aux)
        self._val.append(value)
        return Node(self, idx)

    def leaf(self, value: float) -> Node:
        """Record a parameter leaf (differentiated against)."""
        node = self._push(kernels.OP_LEAF, -1, -1, 0.0, float(value))
        self.param_pos.append(node.idx)
        return node

    def input(self, value: float) -> Node:
        """Record a data leaf whose value can be rebound between replays."""
        node = self._push(kernels.OP_LEAF, -1, -1, 0.0, float(value))
        self.input_pos.append(node.idx)
        return node

    def const(self, value: float) -> Node:
        return self._push(kernels.OP_CONST, -1, -1, float(value), float(value))

    def _binary(self, op, a: Node, b: Node) -> Node:
        va = self._val[a.idx]
        vb = self._val[b.idx]
        if op == kernels.OP_ADD:
            v = va + vb
        elif op == kernels.OP_SUB:
            v = va - vb
        elif op == kernels.OP_MUL:
            v = va * vb
        else:
            v = math.inf if vb == 0.0 else va / vb
        return self._push(op, a.idx, b.idx, 0.0, v)

    def _unary(self, op, a: Node, aux: float = 0.0) -> Node:
        va = self._val[a.idx]
        if op == kernels.OP_NEG:
            v = -va
        elif op == kernels.OP_EXP:
            v = math.inf if va > kernels._EXP_MAX else math.exp(va)
        elif op == kernels.OP_TANH:
            v = math.tanh(va)
        elif op == kernels.OP_LOG:
            v = math.nan if va <= 0.0 else math.log(va)
        else:  # OP_POWI
            k = int(aux)
            v = math.inf if (va == 0.0 and k < 1) else va ** k
        return self._push(op, a.idx, -1, aux, v)

    # -- inspection ---------------------------------------------------------

    def node(self, idx: int) -> TapeNode:
        """Materialize the stored record of one node, partials included."""
        op = self._ops[idx]
        parents = tuple(p for p in (self._pa[idx], self._pb[idx]) if p >= 0)
        vals = [self._val[p] for p in parents]
        if op in (kernels.OP_LEAF, kernels.OP_CONST):
            partials = ()
        elif op == kernels.OP_ADD:
            partials = (1.0, 1.0)
        elif op == kernels.OP_SUB:
            partials = (1.0, -1.0)
        elif op == kernels.OP_MUL:
            partials = (vals[1], vals[0])
        elif op == kernels.OP_DIV:
            partials = (1.0 / vals[1], -vals[0] / (vals[1] * vals[1]))
        elif op == kernels.OP_NEG:
            partials = (-1.0,)
        elif op == kernels.OP_EXP:
            partials = (self._val[idx],)
        elif op == kernels.OP_TANH:
            t = self._val[idx]
            partials = (1.0 - t * t,)
        elif op == kernels.OP_LOG:
            partials = (1.0 / vals[0],)
        else:
            k = int(self._aux[idx])
            partials = (k * vals[0] ** (k - 1),)
        return TapeNode(_OP_NAMES[op], parents, partials, self._val[idx])

    # -- replay -------------------------------------------------------------

    def compile(self, out: Node | None = None) -> "CompiledTape":
        out_idx = out.idx if out is not None else self.out_idx
        if out_idx is None:
            out_idx = len(self._ops) - 1
        return CompiledTape(
            ops=np.array(self._ops, dtype=np.int32),
            pa=np.array(self._pa, dtype=np.int32),
            pb=np.array(self._pb, dtype=np.int32),
            aux=np.array(self._aux, dtype=float),
            trace_values=np.array(self._val, dtype=float),
            param_pos=np.array(self.param_pos, dtype=np.int32),
            input_pos=np.array(self.input_pos, dtype=np.int32),
            out_idx=int(out_idx),
        )


@dataclass
class CompiledTape:
    """Frozen tape arrays ready for repeated evaluation."""

    ops: np.ndarray
    pa: np.ndarray
    pb: np.ndarray
    aux: np.ndarray
    trace_values: np.ndarray
    param_pos: np.ndarray
    input_pos: np.ndarray
    out_idx: int

    def __len__(self):
        return self.ops.shape[0]

    def make_buffers(self):
        n = len(self)
        values = self.trace_values.copy()
        return values, np.empty(n), np.empty(n), np.empty(n)

    def run(self, params, inputs=None, want_grad=True):
        """Evaluate (and optionally differentiate) at fresh leaf values.

        Allocates its own scratch buffers, so concurrent calls are safe.
        """
        params = np.asarray(params, dtype=float)
        if params.shape[0] != self.param_pos.shape[0]:
            raise StructuralError(
                f"expected {self.param_pos.shape[0]} parameters, got {params.shape[0]}")
        values, la, lb, adj = self.make_buffers()
        values[self.param_pos] = params
        if inputs is not None:
            inputs = np.asarray(inputs, dtype=float)
            if inputs.shape[0] != self.input_pos.shape[0]:
                raise StructuralError(
                    f"expected {self.input_pos.shape[0]} data values, got {inputs.shape[0]}")
            values[self.input_pos] = inputs
        bad = kernels.forward_range(self.ops, self.pa, self.pb, self.aux,
                                    values, la, lb, 0, len(self))
        if bad >= 0:
            raise NonFiniteValueError(
                f"non-finite value at tape position {bad} "
                f"(op {_OP_NAMES[int(self.ops[bad])]})", position=int(bad))
        value = float(values[self.out_idx])
        if not want_grad:
            return value, None
        kernels.backward_range(self.pa, self.pb, la, lb, adj, 0, self.out_idx)
        return value, adj[self.param_pos].copy()


# ---------------------------------------------------------------------------
# Scalar helpers that work on both Nodes and plain floats, so the same model
# code can run recorded or eagerly.
# ---------------------------------------------------------------------------


def exp(x):
    if isinstance(x, Node):
        return x.tape._unary(kernels.OP_EXP, x)
    if x > kernels._EXP_MAX:
        return math.inf
    return math.exp(x)


def tanh(x):
    if isinstance(x, Node):
        return x.tape._unary(kernels.OP_TANH, x)
    return math.tanh(x)


def log(x):
    if isinstance(x, Node):
        return x.tape._unary(kernels.OP_LOG, x)
    return math.nan if x <= 0.0 else math.log(x)


def powi(x, k: int):
    if isinstance(x, Node):
        return x ** int(k)
    return x ** int(k)


def sigmoid(x):
    """Logistic function built from tanh, valid on nodes and floats."""
    return 0.5 * (tanh(x * 0.5) + 1.0)


def softplus(x):
    """log(1 + exp(x)); smooth positive reparameterization."""
    return log(1.0 + exp(x))


def inv_softplus(y: float) -> float:
    """Float-only inverse of softplus, for initializing raw parameters."""
    if y <= 0:
        raise ValueError("softplus output is strictly positive")
    return math.log(math.expm1(y))


# ---------------------------------------------------------------------------
# Module-level operations
# ---------------------------------------------------------------------------


def _as_values(params) -> np.ndarray:
    if isinstance(params, ParamVector):
        return params.values
    return np.asarray(params, dtype=float)


def tape_eval(expr, params):
    """Record ``expr`` at ``params``; return (plain value, tape).

    ``expr`` receives a list of scalar handles and must combine them with the
    supported operations only. The returned value is identical, bit for bit,
    to evaluating the same expression on plain floats in the same order.
    """
    values = _as_values(params)
    tape = Tape()
    leaves = [tape.leaf(v) for v in values]
    out = expr(leaves)
    if not isinstance(out, Node):
        out = tape.const(float(out))
    tape.out_idx = out.idx
    return out.value, tape


def grad(tape: Tape, wrt) -> np.ndarray:
    """Exact gradient of the tape output with respect to its parameter leaves."""
    values = _as_values(wrt)
    if len(tape.param_pos) != values.shape[0]:
        raise StructuralError(
            f"tape has {len(tape.param_pos)} parameter leaves, got {values.shape[0]} values")
    for pos, v in zip(tape.param_pos, values):
        if tape._val[pos] != v:
            raise StructuralError(
                "parameter values do not match the ones the tape was recorded at")
    compiled = tape.compile()
    _, g = compiled.run(values, want_grad=True)
    return g


def finite_diff_gradient(expr, params, step: float) -> np.ndarray:
    """Central-difference gradient oracle evaluated on plain floats."""
    if step <= 0:
        raise ValueError("step must be positive")
    values = _as_values(params)
    out = np.empty(values.shape[0])
    for j in range(values.shape[0]):
        hi = values.copy()
        lo = values.copy()
        hi[j] += step
        lo[j] -= step
        f_hi = float(expr(list(hi)))
        f_lo = float(expr(list(lo)))
        if not (math.isfinite(f_hi) and math.isfinite(f_lo)):
            raise NonFiniteValueError(
                f"non-finite evaluation while perturbing coordinate {j}")
        out[j] = (f_hi - f_lo) / (2.0 * step)
    return out
