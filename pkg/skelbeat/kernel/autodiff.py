"""Reverse-mode automatic differentiation over dense float64 arrays.

A ComputeGraph is a tape: nodes are appended in construction order, which is
a topological order because an op node can only reference existing nodes.
forward() evaluates the tape and keeps every intermediate value, backward()
walks it in reverse and accumulates gradients by summation.

Example:
    >>> graph = ComputeGraph()
    >>> x = graph.input('x', np.array([3.0]))
    >>> y = graph.sum(graph.square(x))
    >>> graph.forward()
    array(9.)
    >>> graph.backward(y, [x])[0]
    array([6.])
"""
import logging
from typing import Callable, Dict, List, Mapping, Sequence, Union

import numpy as np
from scipy.special import logsumexp as _logsumexp, softmax as _softmax

logger = logging.getLogger(__name__)

ArrayLike = Union[np.ndarray, float, int, Sequence]


class AutodiffError(Exception):
    """Base error of the autodiff core."""


class ShapeError(AutodiffError):
    """Operands of an op have incompatible shapes."""

    def __init__(self, op: str, shapes: Sequence[tuple], detail: str = ''):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        message = "op '%s' got incompatible shapes %s" % (
            op, ', '.join(str(s) for s in self.shapes))
        if detail:
            message += ': ' + detail
        super().__init__(message)


class BackwardError(AutodiffError):
    """backward() called before forward() or with an invalid output."""


class GradientCheckError(AutodiffError):
    """Gradient check hit a non-finite value or a non-scalar function."""


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum grad over the axes that were broadcast to reach its shape."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(ax for ax, size in enumerate(shape)
                 if size == 1 and grad.shape[ax] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# --- op registry -------------------------------------------------------------

OPS: Dict[str, 'Op'] = {}


def register(cls):
    OPS[cls.name] = cls()
    return cls


class Op:
    """Forward and local backward rule of one operation."""
    name: str = None

    def forward(self, *values, **attrs) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad, values, out, **attrs) -> tuple:
        """Gradients with respect to every parent value."""
        raise NotImplementedError


@register
class MatMul(Op):
    name = 'matmul'

    def forward(self, a, b):
        if a.ndim not in (1, 2) or b.ndim != 2 or a.shape[-1] != b.shape[0]:
            raise ShapeError(self.name, [a.shape, b.shape])
        return a @ b

    def backward(self, grad, values, out):
        a, b = values
        grad_a = grad @ b.T
        grad_b = np.outer(a, grad) if a.ndim == 1 else a.T @ grad
        return grad_a, grad_b


class _Elementwise(Op):
    func = None

    def forward(self, a, b):
        try:
            return self.func(a, b)
        except ValueError as ex:
            raise ShapeError(self.name, [a.shape, b.shape]) from ex


@register
class Add(_Elementwise):
    name = 'add'
    func = staticmethod(np.add)

    def backward(self, grad, values, out):
        a, b = values
        return unbroadcast(grad, a.shape), unbroadcast(grad, b.shape)


@register
class Sub(_Elementwise):
    name = 'sub'
    func = staticmethod(np.subtract)

    def backward(self, grad, values, out):
        a, b = values
        return unbroadcast(grad, a.shape), unbroadcast(-grad, b.shape)


@register
class Mul(_Elementwise):
    name = 'mul'
    func = staticmethod(np.multiply)

    def backward(self, grad, values, out):
        a, b = values
        return unbroadcast(grad * b, a.shape), unbroadcast(grad * a, b.shape)


@register
class Scale(Op):
    name = 'scale'

    def forward(self, a, factor):
        return a * factor

    def backward(self, grad, values, out, factor):
        return (grad * factor,)


@register
class Affine(Op):
    """x @ w + b"""
    name = 'affine'

    def forward(self, x, w, b):
        if x.ndim not in (1, 2) or w.ndim != 2 or x.shape[-1] != w.shape[0] \
                or b.shape != (w.shape[1],):
            raise ShapeError(self.name, [x.shape, w.shape, b.shape])
        return x @ w + b

    def backward(self, grad, values, out):
        x, w, b = values
        grad_x = grad @ w.T
        grad_w = np.outer(x, grad) if x.ndim == 1 else x.T @ grad
        grad_b = grad if grad.ndim == 1 else grad.sum(axis=0)
        return grad_x, grad_w, grad_b


@register
class Relu(Op):
    name = 'relu'

    def forward(self, a):
        return np.maximum(a, 0.0)

    def backward(self, grad, values, out):
        # subgradient 0 at the kink
        return (grad * (values[0] > 0.0),)


@register
class Tanh(Op):
    name = 'tanh'

    def forward(self, a):
        return np.tanh(a)

    def backward(self, grad, values, out):
        return (grad * (1.0 - out * out),)


@register
class Square(Op):
    name = 'square'

    def forward(self, a):
        return a * a

    def backward(self, grad, values, out):
        return (2.0 * values[0] * grad,)


class _Reduction(Op):

    @staticmethod
    def _expand(grad, shape, axis):
        if axis is not None:
            grad = np.expand_dims(grad, axis)
        return np.broadcast_to(grad, shape)


@register
class Sum(_Reduction):
    name = 'sum'

    def forward(self, a, axis=None):
        return np.sum(a, axis=axis)

    def backward(self, grad, values, out, axis=None):
        return (np.array(self._expand(grad, values[0].shape, axis)),)


@register
class Mean(_Reduction):
    name = 'mean'

    def forward(self, a, axis=None):
        return np.mean(a, axis=axis)

    def backward(self, grad, values, out, axis=None):
        a = values[0]
        count = a.size if axis is None else a.shape[axis]
        return (self._expand(grad, a.shape, axis) / count,)


@register
class LogSumExp(Op):
    """log-sum-exp over the last axis"""
    name = 'logsumexp'

    def forward(self, a):
        return np.asarray(_logsumexp(a, axis=-1))

    def backward(self, grad, values, out):
        return (np.expand_dims(grad, -1) * _softmax(values[0], axis=-1),)


def _check_labels(op, logits, labels):
    labels = np.asarray(labels)
    if logits.ndim == 1:
        expected = ()
    elif logits.ndim == 2:
        expected = (logits.shape[0],)
    else:
        raise ShapeError(op, [logits.shape, labels.shape])
    if labels.shape != expected:
        raise ShapeError(op, [logits.shape, labels.shape])
    if not np.issubdtype(labels.dtype, np.integer):
        raise AutodiffError("op '%s' needs integer labels" % op)
    if np.any(labels < 0) or np.any(labels >= logits.shape[-1]):
        raise AutodiffError("op '%s' got labels outside [0, %d)"
                            % (op, logits.shape[-1]))
    return labels


def _one_hot(logits, labels):
    hot = np.zeros_like(logits)
    if logits.ndim == 1:
        hot[labels] = 1.0
    else:
        hot[np.arange(logits.shape[0]), labels] = 1.0
    return hot


@register
class SoftmaxCrossEntropy(Op):
    """Cross-entropy of softmax(logits) with integer labels, batch mean."""
    name = 'softmax_ce'

    def forward(self, logits, labels):
        labels = _check_labels(self.name, logits, labels)
        picked = np.sum(logits * _one_hot(logits, labels), axis=-1)
        return np.mean(_logsumexp(logits, axis=-1) - picked)

    def backward(self, grad, values, out, labels):
        logits = values[0]
        count = 1 if logits.ndim == 1 else logits.shape[0]
        local = _softmax(logits, axis=-1) - _one_hot(logits, labels)
        return (grad * local / count,)


@register
class Select(Op):
    """logits[..., label] per row"""
    name = 'select'

    def forward(self, logits, labels):
        labels = _check_labels(self.name, logits, labels)
        return np.sum(logits * _one_hot(logits, labels), axis=-1)

    def backward(self, grad, values, out, labels):
        logits = values[0]
        return (np.expand_dims(grad, -1) * _one_hot(logits, labels),)


@register
class Reshape(Op):
    name = 'reshape'

    def forward(self, a, shape):
        try:
            return a.reshape(shape)
        except ValueError as ex:
            raise ShapeError(self.name, [a.shape, shape]) from ex

    def backward(self, grad, values, out, shape):
        return (grad.reshape(values[0].shape),)


# --- graph -------------------------------------------------------------------

class Node:
    """One record of a ComputeGraph tape."""
    __slots__ = ('graph', 'index', 'kind', 'op', 'parents', 'attrs', 'name',
                 'value')

    LEAF_KINDS = ('input', 'param', 'const')

    def __init__(self, graph, index, kind, op=None, parents=(), attrs=None,
                 name=None, value=None):
        self.graph = graph
        self.index = index
        self.kind = kind
        self.op = op
        self.parents = tuple(parents)
        self.attrs = attrs or {}
        self.name = name
        self.value = value

    @property
    def is_leaf(self) -> bool:
        return self.kind in self.LEAF_KINDS

    @property
    def shape(self):
        return None if self.value is None else self.value.shape

    def _wrap(self, other):
        return other if isinstance(other, Node) else self.graph.constant(other)

    def __add__(self, other):
        return self.graph.add(self, self._wrap(other))

    def __radd__(self, other):
        return self.graph.add(self._wrap(other), self)

    def __sub__(self, other):
        return self.graph.sub(self, self._wrap(other))

    def __rsub__(self, other):
        return self.graph.sub(self._wrap(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.graph.scale(self, other)
        return self.graph.mul(self, self._wrap(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return self.graph.scale(self, -1.0)

    def __matmul__(self, other):
        return self.graph.matmul(self, self._wrap(other))

    def __repr__(self):
        label = self.name or self.op or self.kind
        return "<Node %d %s %s>" % (self.index, label, self.shape)


class ComputeGraph:
    """Tape of leaf and op nodes in topological order.

    Graph instances are not thread safe; use one graph per thread.
    """

    def __init__(self):
        self.nodes: List[Node] = []
        self._inputs: Dict[str, Node] = {}
        self._forward_done = False

    def __len__(self):
        return len(self.nodes)

    # leaves
    def _leaf(self, kind, name, value):
        node = Node(self, len(self.nodes), kind, name=name,
                    value=None if value is None
                    else np.array(value, dtype=np.float64))
        self.nodes.append(node)
        self._forward_done = False
        return node

    def input(self, name: str, value: ArrayLike = None) -> Node:
        """Feedable leaf, value may be given now or via forward(feeds)."""
        if name in self._inputs:
            raise AutodiffError("input '%s' already defined" % name)
        node = self._leaf('input', name, value)
        self._inputs[name] = node
        return node

    def param(self, name: str, value: ArrayLike) -> Node:
        return self._leaf('param', name, value)

    def constant(self, value: ArrayLike) -> Node:
        return self._leaf('const', None, value)

    # ops
    def apply(self, op: str, *parents: Node, **attrs) -> Node:
        if op not in OPS:
            raise AutodiffError("unknown op '%s'" % op)
        for parent in parents:
            if parent.graph is not self:
                raise AutodiffError("op '%s' mixes nodes of different "
                                    "graphs" % op)
        node = Node(self, len(self.nodes), 'op', op=op,
                    parents=[p.index for p in parents], attrs=attrs)
        self.nodes.append(node)
        self._forward_done = False
        return node

    def matmul(self, a, b):
        return self.apply('matmul', a, b)

    def add(self, a, b):
        return self.apply('add', a, b)

    def sub(self, a, b):
        return self.apply('sub', a, b)

    def mul(self, a, b):
        return self.apply('mul', a, b)

    def scale(self, a, factor: float):
        return self.apply('scale', a, factor=float(factor))

    def affine(self, x, w, b):
        return self.apply('affine', x, w, b)

    def relu(self, a):
        return self.apply('relu', a)

    def tanh(self, a):
        return self.apply('tanh', a)

    def square(self, a):
        return self.apply('square', a)

    def sum(self, a, axis: int = None):
        return self.apply('sum', a, axis=axis)

    def mean(self, a, axis: int = None):
        return self.apply('mean', a, axis=axis)

    def logsumexp(self, a):
        return self.apply('logsumexp', a)

    def softmax_ce(self, logits, labels):
        return self.apply('softmax_ce', logits, labels=np.asarray(labels))

    def select(self, logits, labels):
        return self.apply('select', logits, labels=np.asarray(labels))

    def reshape(self, a, shape):
        return self.apply('reshape', a, shape=tuple(shape))

    # evaluation
    def forward(self, feeds: Mapping[str, ArrayLike] = None,
                output: Node = None) -> np.ndarray:
        """Evaluate the tape and keep all intermediate values.

        Args:
            feeds: values for input leaves by name
            output: node whose value is returned, defaults to the last node

        Raises:
            ShapeError: on incompatible operands
        """
        for name, value in (feeds or {}).items():
            if name not in self._inputs:
                raise AutodiffError("no input named '%s'" % name)
            self._inputs[name].value = np.array(value, dtype=np.float64)
        for node in self.nodes:
            if node.is_leaf:
                if node.value is None:
                    raise AutodiffError("input '%s' has no value" % node.name)
                continue
            values = [self.nodes[i].value for i in node.parents]
            node.value = np.asarray(
                OPS[node.op].forward(*values, **node.attrs), dtype=np.float64)
        self._forward_done = True
        if not self.nodes:
            raise AutodiffError("empty graph")
        return (output or self.nodes[-1]).value

    def backward(self, output: Node, wrt: Sequence[Node],
                 seed: ArrayLike = None) -> List[np.ndarray]:
        """Gradients of output with respect to the requested nodes.

        Args:
            output: node to differentiate, scalar unless seed is given
            wrt: nodes to return gradients for; unreachable nodes get zeros
            seed: upstream gradient of output, defaults to ones

        Raises:
            BackwardError: if forward() has not run on the current tape
        """
        if not self._forward_done:
            raise BackwardError("backward called before forward")
        if output.graph is not self:
            raise BackwardError("output belongs to another graph")
        grads: List[Union[np.ndarray, None]] = [None] * len(self.nodes)
        grads[output.index] = np.ones_like(output.value) if seed is None \
            else np.broadcast_to(np.asarray(seed, dtype=np.float64),
                                 output.value.shape).copy()
        for node in reversed(self.nodes[:output.index + 1]):
            grad = grads[node.index]
            if grad is None or node.is_leaf:
                continue
            values = [self.nodes[i].value for i in node.parents]
            parent_grads = OPS[node.op].backward(
                grad, values, node.value, **node.attrs)
            for parent, parent_grad in zip(node.parents, parent_grads):
                if grads[parent] is None:
                    grads[parent] = np.array(parent_grad, dtype=np.float64)
                else:
                    grads[parent] = grads[parent] + parent_grad
        return [np.zeros_like(node.value) if grads[node.index] is None
                else grads[node.index] for node in wrt]


def forward_ops(graph: ComputeGraph, feeds: Mapping[str, ArrayLike] = None,
                output: Node = None) -> np.ndarray:
    return graph.forward(feeds, output)


def backward(graph: ComputeGraph, output: Node,
             wrt: Sequence[Node]) -> List[np.ndarray]:
    return graph.backward(output, wrt)


def grad_check(function: Callable[[ComputeGraph, Node], Node],
               point: ArrayLike, step: float = 1e-5) -> float:
    """Compare backward() with central finite differences.

    Args:
        function: builds a scalar output from (graph, input node)
        point: where to check
        step: finite difference step in [1e-7, 1e-3]

    Returns:
        max over components of |analytic - numeric| / (|analytic| + 1e-12)
    """
    if not 1e-7 <= step <= 1e-3:
        raise ValueError("step %g outside [1e-7, 1e-3]" % step)
    point = np.array(point, dtype=np.float64)

    def evaluate(x):
        graph = ComputeGraph()
        x_node = graph.input('x', x)
        out = function(graph, x_node)
        value = graph.forward(output=out)
        for node in graph.nodes:
            if node.value is not None and not np.all(np.isfinite(node.value)):
                raise GradientCheckError(
                    "non-finite value at %r during gradient check" % node)
        if value.size != 1:
            raise GradientCheckError("function must be scalar valued, got "
                                     "shape %s" % (value.shape,))
        return graph, x_node, out, float(value)

    graph, x_node, out, _ = evaluate(point)
    analytic = graph.backward(out, [x_node])[0]
    numeric = np.empty_like(point)
    for i in range(point.size):
        shifted = point.copy()
        shifted.flat[i] = point.flat[i] + step
        upper = evaluate(shifted)[3]
        shifted.flat[i] = point.flat[i] - step
        lower = evaluate(shifted)[3]
        numeric.flat[i] = (upper - lower) / (2.0 * step)
    error = np.abs(analytic - numeric) / (np.abs(analytic) + 1e-12)
    return float(np.max(error)) if error.size else 0.0
