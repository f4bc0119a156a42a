#!/usr/bin/env python3
"""
Dense vector/matrix primitives with tape-based reverse-mode gradients.

Every operation accepts plain numpy arrays or TapeNodes. With arrays only it
evaluates directly; as soon as one operand is a TapeNode the result is
recorded on that node's tape so `backward` can walk it later. Inputs of shape
(n,) are single vectors, (batch, n) are row batches.
"""

from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Union

import numpy as np

from ..errors import NonFiniteError, ShapeError

DTYPE = np.float64
# finite differences evaluate the loss at this precision; on platforms where
# long double is plain double it degrades to float64
EXTENDED = np.longdouble

# Row-major 64-bit real matrix; numpy carries rows/cols/data for us.
DenseMatrix = np.ndarray


@dataclass(eq=False)
class LayerParams:
    """Weight (out_dim x in_dim) and bias (out_dim) of one fully connected layer.

    Compared and hashed by identity so a layer can key a gradient table.
    """
    weight: DenseMatrix
    bias: np.ndarray

    def __post_init__(self):
        self.weight = as_real(self.weight)
        self.bias = as_real(self.bias)
        if self.weight.ndim != 2:
            raise ShapeError('layer weight rank', 2, self.weight.ndim)
        if self.bias.shape != (self.weight.shape[0],):
            raise ShapeError('layer bias shape', (self.weight.shape[0],), self.bias.shape)

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    @classmethod
    def zeros(cls, out_dim: int, in_dim: int) -> 'LayerParams':
        return cls(np.zeros((out_dim, in_dim), dtype=DTYPE), np.zeros(out_dim, dtype=DTYPE))

    def copy(self) -> 'LayerParams':
        return LayerParams(self.weight.copy(), self.bias.copy())

    def arrays(self):
        return (self.weight, self.bias)

    def same_values(self, other: 'LayerParams') -> bool:
        """Bit-exact comparison of weights and biases"""
        return (self.weight.shape == other.weight.shape
                and self.weight.tobytes() == other.weight.tobytes()
                and self.bias.tobytes() == other.bias.tobytes())


class TapeNode:
    """One recorded operation: its tag, parent nodes, forward value and vjp."""

    __slots__ = ('tape', 'index', 'op', 'value', 'parents', 'vjp')

    def __init__(self, tape, index, op, value, parents, vjp):
        self.tape = tape
        self.index = index
        self.op = op
        self.value = value
        self.parents = parents
        self.vjp = vjp

    @property
    def shape(self):
        return np.shape(self.value)

    def __repr__(self):
        return f'TapeNode(op={self.op!r}, index={self.index}, shape={self.shape})'


class Tape:
    """Append-only record of one differentiable computation.

    Nodes are appended in evaluation order, which is a topological order, so
    backward only has to walk the list in reverse. One tape per training step.
    """

    def __init__(self):
        self.nodes: List[TapeNode] = []
        self._params: Dict[int, tuple] = {}

    def record(self, op: str, value, parents=(), vjp=None) -> TapeNode:
        _check_finite(value, op)
        node = TapeNode(self, len(self.nodes), op, value, tuple(parents), vjp)
        self.nodes.append(node)
        return node

    def constant(self, value) -> TapeNode:
        return self.record('const', np.asarray(value, dtype=DTYPE))

    def param(self, layer: LayerParams):
        """Leaf nodes (weight, bias) for a layer, created once per tape"""
        entry = self._params.get(id(layer))
        if entry is None:
            w = self.record('param.weight', layer.weight)
            b = self.record('param.bias', layer.bias)
            entry = self._params[id(layer)] = (layer, w, b)
        return entry[1], entry[2]

    @property
    def layers(self) -> List[LayerParams]:
        return [entry[0] for entry in self._params.values()]

    def __len__(self):
        return len(self.nodes)


Operand = Union[np.ndarray, float, TapeNode]


def _check_finite(value, op):
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f'non-finite value produced by {op}')


def _tape_of(*operands) -> Optional[Tape]:
    for operand in operands:
        if isinstance(operand, TapeNode):
            return operand.tape
    return None


def _lift(tape: Tape, operand) -> TapeNode:
    if isinstance(operand, TapeNode):
        if operand.tape is not tape:
            raise ValueError('operands recorded on different tapes')
        return operand
    return tape.constant(operand)


def as_real(x) -> np.ndarray:
    """At least float64; wider floats such as EXTENDED pass through unchanged"""
    arr = np.asarray(x)
    return arr.astype(np.promote_types(arr.dtype, DTYPE), copy=False)


def value_of(operand) -> np.ndarray:
    return operand.value if isinstance(operand, TapeNode) else as_real(operand)


def _unbroadcast(grad, shape):
    """Sum a broadcast gradient back down to `shape`"""
    while np.ndim(grad) > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and np.shape(grad)[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def affine_forward(layer: LayerParams, x: Operand):
    """weight . x + bias, rowwise for a batch"""
    xv = value_of(x)
    if xv.ndim not in (1, 2) or xv.shape[-1] != layer.in_dim:
        raise ShapeError('affine_forward input dim', layer.in_dim, xv.shape[-1] if xv.ndim else xv.shape)
    out = xv @ layer.weight.T + layer.bias
    tape = _tape_of(x)
    if tape is None:
        _check_finite(out, 'affine')
        return out
    x_node = _lift(tape, x)
    w_node, b_node = tape.param(layer)
    weight = layer.weight

    def vjp(g):
        if xv.ndim == 1:
            return g @ weight, np.outer(g, xv), g
        return g @ weight, g.T @ xv, g.sum(axis=0)

    return tape.record('affine', out, (x_node, w_node, b_node), vjp)


def relu_forward(x: Operand):
    """Elementwise max(0, x); the subgradient at exactly 0 is 0"""
    xv = value_of(x)
    out = np.maximum(xv, 0.0)
    tape = _tape_of(x)
    if tape is None:
        return out
    mask = xv > 0.0
    return tape.record('relu', out, (_lift(tape, x),), lambda g: (g * mask,))


def squared_error(u: Operand, v: Operand, reduction: str = 'mean'):
    """Squared error between u and v reduced over the last axis"""
    uv, vv = value_of(u), value_of(v)
    if uv.shape != vv.shape:
        raise ShapeError('distance operand shape', uv.shape, vv.shape)
    diff = uv - vv
    n = diff.shape[-1] if diff.ndim else 1
    if reduction == 'mean':
        out = np.mean(diff * diff, axis=-1)
        coeff = 2.0 / n
    elif reduction == 'sum':
        out = np.sum(diff * diff, axis=-1)
        coeff = 2.0
    else:
        raise ValueError(f'unknown reduction {reduction!r}')
    tape = _tape_of(u, v)
    if tape is None:
        return out
    u_node, v_node = _lift(tape, u), _lift(tape, v)

    def vjp(g):
        gu = np.expand_dims(g, -1) * (coeff * diff)
        return gu, -gu

    return tape.record('sq_error', out, (u_node, v_node), vjp)


def hinge(d_pos: Operand, d_neg: Operand, margin: float):
    """max(0, d_pos - d_neg + margin), elementwise"""
    pv, nv = value_of(d_pos), value_of(d_neg)
    gap = pv - nv + margin
    out = np.maximum(gap, 0.0)
    tape = _tape_of(d_pos, d_neg)
    if tape is None:
        return out
    mask = gap > 0.0

    def vjp(g):
        gm = g * mask
        return _unbroadcast(gm, pv.shape), _unbroadcast(-gm, nv.shape)

    return tape.record('hinge', out, (_lift(tape, d_pos), _lift(tape, d_neg)), vjp)


def add(*terms: Operand):
    """Sum of equally shaped operands"""
    if not terms:
        raise ValueError('add needs at least one operand')
    values = [value_of(t) for t in terms]
    out = values[0]
    for v in values[1:]:
        out = out + v
    tape = _tape_of(*terms)
    if tape is None:
        return out
    shapes = [v.shape for v in values]
    nodes = tuple(_lift(tape, t) for t in terms)
    return tape.record('add', out, nodes,
                       lambda g: tuple(_unbroadcast(g, s) for s in shapes))


def mean(x: Operand):
    """Mean over every entry, giving a scalar"""
    xv = value_of(x)
    if xv.size == 0:
        raise ShapeError('mean operand size', '>= 1', 0)
    out = np.asarray(xv.mean())
    tape = _tape_of(x)
    if tape is None:
        return out
    shape, size = xv.shape, xv.size
    return tape.record('mean', out, (_lift(tape, x),),
                       lambda g: (np.full(shape, g / size),))


def backward(final: TapeNode, wrt: Optional[Sequence[LayerParams]] = None) -> Dict[LayerParams, LayerParams]:
    """Gradient of a scalar tape node with respect to layer parameters.

    `wrt` defaults to every layer the tape touched; layers in `wrt` that the
    scalar never reached get zero gradients.
    """
    if not isinstance(final, TapeNode):
        raise TypeError('backward needs a TapeNode')
    if np.ndim(final.value) != 0:
        raise ShapeError('backward target', 'scalar', np.shape(final.value))
    tape = final.tape
    adjoints = {final.index: np.ones((), dtype=DTYPE)}
    for node in reversed(tape.nodes[:final.index + 1]):
        grad = adjoints.get(node.index)
        if grad is None or node.vjp is None:
            continue
        for parent, parent_grad in zip(node.parents, node.vjp(grad)):
            if parent_grad is None:
                continue
            prev = adjoints.get(parent.index)
            adjoints[parent.index] = parent_grad if prev is None else prev + parent_grad

    layers = tape.layers if wrt is None else list(wrt)
    grads = {}
    for layer in layers:
        entry = tape._params.get(id(layer))
        gw = gb = None
        if entry is not None:
            gw = adjoints.get(entry[1].index)
            gb = adjoints.get(entry[2].index)
        grads[layer] = LayerParams(
            np.zeros_like(layer.weight) if gw is None else np.array(gw, dtype=DTYPE),
            np.zeros_like(layer.bias) if gb is None else np.array(gb, dtype=DTYPE),
        )
    return grads


def _central_difference(loss_fn: Callable, arg, flat: np.ndarray, epsilon: float) -> np.ndarray:
    grad = np.zeros(flat.size, dtype=DTYPE)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        f_plus = EXTENDED(loss_fn(arg))
        flat[i] = orig - epsilon
        f_minus = EXTENDED(loss_fn(arg))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NonFiniteError(f'non-finite loss while perturbing coordinate {i}')
        grad[i] = (f_plus - f_minus) / (2 * EXTENDED(epsilon))
    return grad


def finite_diff_gradient(loss_fn: Callable, params, epsilon: float = 1e-5):
    """Central-difference gradient estimate; never touches a tape.

    `params` is either an array (loss_fn receives a perturbed working copy of
    it) or a sequence of LayerParams (loss_fn receives a list of perturbed
    copies, and a list of gradient LayerParams is returned in the same order).
    The copies are EXTENDED precision, so a loss_fn built from this module's
    operations keeps float64 roundoff out of the differences; return the loss
    without converting it to float.
    """
    if not epsilon > 0:
        raise ValueError(f'epsilon must be positive, got {epsilon}')
    if isinstance(params, LayerParams):
        params = [params]
    is_layers = (isinstance(params, (list, tuple)) and len(params) > 0
                 and all(isinstance(p, LayerParams) for p in params))
    if not is_layers:
        p = np.array(params, dtype=EXTENDED)
        base = float(loss_fn(p.copy()))
        if not np.isfinite(base):
            raise NonFiniteError('non-finite loss at the unperturbed point')
        return _central_difference(loss_fn, p, p.reshape(-1), epsilon).reshape(p.shape)

    layers = [LayerParams(layer.weight.astype(EXTENDED), layer.bias.astype(EXTENDED)) for layer in params]
    base = float(loss_fn(layers))
    if not np.isfinite(base):
        raise NonFiniteError('non-finite loss at the unperturbed point')
    result = []
    for layer in layers:
        gw = _central_difference(loss_fn, layers, layer.weight.reshape(-1), epsilon)
        gb = _central_difference(loss_fn, layers, layer.bias, epsilon)
        result.append(LayerParams(gw.reshape(layer.weight.shape), gb))
    return result


def relative_error(a, b) -> np.ndarray:
    """|a - b| / max(1e-8, |a| + |b|), elementwise"""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    return np.abs(a - b) / np.maximum(1e-8, np.abs(a) + np.abs(b))


def max_relative_error(grads_a: Sequence[LayerParams], grads_b: Sequence[LayerParams]) -> float:
    worst = 0.0
    for ga, gb in zip(grads_a, grads_b):
        for xa, xb in zip(ga.arrays(), gb.arrays()):
            if xa.size:
                worst = max(worst, float(relative_error(xa, xb).max()))
    return worst
