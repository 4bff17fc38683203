# SPDX-FileCopyrightText: 2026 mimo-pilot-design contributors
# SPDX-License-Identifier: Apache-2.0
#
# Reverse-mode differentiation on an explicit tape.
#
# Every primitive works on real float64 arrays with an optional leading sample axis. Complex
# quantities are carried as (re, im) pairs of tape values (ComplexValue), so all gradients are plain
# real gradients. A parameter that is used at several sites of the tape (e.g. a pilot matrix that
# appears both in the transmission and in the interference cancellation) receives the sum of the
# gradients of all sites.
#
from dataclasses import dataclass
from typing import Callable
from typing import Dict
from typing import Iterable
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from .core import DimensionError
from .core import NonFiniteGradientError
from .core import TapeError

RELU = "relu"
IDENTITY = "identity"
ACTIVATIONS = (RELU, IDENTITY)

GradientMap = Dict[str, np.ndarray]


class Value:
    """
    A real array living on a tape. Constants do not require gradients, parameters and everything
    computed from a parameter do.
    """

    def __init__(self, data: np.ndarray, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Value(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Value):
    """
    A trainable array identified by a unique dotted name (e.g. "dnn1.hidden2.weight").
    """

    def __init__(self, name: str, data: np.ndarray):
        super().__init__(np.array(data, dtype=np.float64), requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name}, shape={self.shape})"


@dataclass
class Node:
    op: str
    inputs: Tuple[Value, ...]
    output: Value
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes that were broadcast to produce it."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """
    Append-only record of primitive operations.

    `registry` maps every parameter name to the indices of the nodes that consume it. With
    enabled=False nothing is recorded and the tape is a plain evaluator.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.nodes: List[Node] = []
        self.registry: Dict[str, List[int]] = {}
        self.parameters: Dict[str, Parameter] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def constant(self, data: np.ndarray) -> Value:
        return Value(data, requires_grad=False)

    def _record(self, op: str, inputs: Tuple[Value, ...], data: np.ndarray, backward) -> Value:
        requires_grad = any(value.requires_grad for value in inputs)
        out = Value(data, requires_grad=requires_grad)
        if self.enabled and requires_grad:
            index = len(self.nodes)
            self.nodes.append(Node(op=op, inputs=inputs, output=out, backward=backward))
            for value in inputs:
                if isinstance(value, Parameter):
                    previous = self.parameters.setdefault(value.name, value)
                    if previous is not value:
                        raise TapeError(f"two different parameters are named {value.name}")
                    self.registry.setdefault(value.name, []).append(index)
        return out

    ############################
    # Primitives
    ############################
    def add(self, a: Value, b: Value) -> Value:
        def backward(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return self._record("add", (a, b), a.data + b.data, backward)

    def sub(self, a: Value, b: Value) -> Value:
        def backward(g):
            return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

        return self._record("sub", (a, b), a.data - b.data, backward)

    def scale(self, a: Value, factor: float) -> Value:
        def backward(g):
            return (factor * g,)

        return self._record("scale", (a,), factor * a.data, backward)

    def kron_apply(self, A: Value, v: Value) -> Value:
        """
        (A^T (x) I_N) v for a real M x L matrix A and v of length N*M, computed as vec(V A) with
        V = unvec(v) (N x M) and never materializing the Kronecker product.
        """
        if A.data.ndim != 2:
            raise DimensionError(f"kron_apply expects a matrix, got shape {A.shape}")
        rows, cols = A.shape
        if v.shape[-1] % rows:
            raise DimensionError(f"input of length {v.shape[-1]} does not fit a {rows}-row pilot")
        n = v.shape[-1] // rows
        batched = v.data.ndim == 2
        V = np.atleast_2d(v.data).reshape(-1, rows, n)  # V[b, m, i] = H[i, m]
        out = np.einsum("bmi,ml->bli", V, A.data).reshape(-1, cols * n)

        def backward(g):
            G = np.atleast_2d(g).reshape(-1, cols, n)
            grad_A = np.einsum("bmi,bli->ml", V, G)
            grad_v = np.einsum("ml,bli->bmi", A.data, G).reshape(-1, rows * n)
            return grad_A, grad_v if batched else grad_v[0]

        return self._record("kron_apply", (A, v), out if batched else out[0], backward)

    def linear(self, x: Value, weight: Value, bias: Value) -> Value:
        """x W^T + b"""
        if x.shape[-1] != weight.shape[1]:
            raise DimensionError(f"layer expects {weight.shape[1]} inputs, got {x.shape[-1]}")

        def backward(g):
            grad_x = g @ weight.data
            if g.ndim == 1:
                grad_w = np.outer(g, x.data)
                grad_b = g
            else:
                grad_w = g.T @ x.data
                grad_b = g.sum(axis=0)
            return grad_x, grad_w, grad_b

        return self._record("linear", (x, weight, bias), x.data @ weight.data.T + bias.data, backward)

    def relu(self, x: Value) -> Value:
        # derivative at exactly 0 is 0
        mask = x.data > 0.0

        def backward(g):
            return (g * mask,)

        return self._record("relu", (x,), np.where(mask, x.data, 0.0), backward)

    def concat(self, values: Sequence[Value]) -> Value:
        """Concatenate along the last axis."""
        sizes = [value.shape[-1] for value in values]
        bounds = np.cumsum(sizes)[:-1]

        def backward(g):
            return tuple(np.split(g, bounds, axis=-1))

        return self._record("concat", tuple(values), np.concatenate([v.data for v in values], axis=-1), backward)

    def slice(self, x: Value, start: int, stop: int) -> Value:
        """x[..., start:stop]"""

        def backward(g):
            grad = np.zeros_like(x.data)
            grad[..., start:stop] = g
            return (grad,)

        return self._record("slice", (x,), x.data[..., start:stop], backward)

    def sum_squares(self, x: Value) -> Value:
        def backward(g):
            return (2.0 * g * x.data,)

        return self._record("sum_squares", (x,), np.sum(x.data * x.data), backward)


def backward(tape: Tape, loss_gradient_seed: float = 1.0, loss: Optional[Value] = None) -> GradientMap:
    """
    Propagate d(loss)/d(loss) = loss_gradient_seed back through the tape in exact reverse order.

    `loss` defaults to the output of the last recorded node. Returns a gradient for every parameter
    used on the tape; parameters used at several sites get the sum of the site gradients.
    """
    if not tape.nodes:
        raise TapeError("backward called before a forward pass was recorded")
    if loss is None:
        loss = tape.nodes[-1].output

    grads: Dict[int, np.ndarray] = {id(loss): np.full(loss.shape, float(loss_gradient_seed))}
    for node in reversed(tape.nodes):
        grad = grads.pop(id(node.output), None)
        if grad is None:
            continue
        for value, input_grad in zip(node.inputs, node.backward(grad)):
            if input_grad is None or not value.requires_grad:
                continue
            key = id(value)
            grads[key] = input_grad if key not in grads else grads[key] + input_grad

    return {name: grads.get(id(param), np.zeros_like(param.data)) for name, param in tape.parameters.items()}


def sgd_step(params: Iterable[Parameter], gradients: GradientMap, step_size: float, step: int = 0) -> List[Parameter]:
    """
    theta <- theta - step_size * gradient, in place. Parameters without a gradient are left alone.
    """
    updated = []
    for param in params:
        grad = gradients.get(param.name)
        if grad is not None:
            grad = np.asarray(grad, dtype=np.float64)
            if grad.shape != param.shape:
                raise DimensionError(f"gradient of {param.name} has shape {grad.shape}, expected {param.shape}")
            if not np.all(np.isfinite(grad)):
                raise NonFiniteGradientError(step, param.name)
            new_data = param.data - step_size * grad
            if not np.all(np.isfinite(new_data)):
                raise NonFiniteGradientError(step, param.name, "update overflowed")
            param.data = new_data
        updated.append(param)
    return updated


class DenseLayer:
    """
    activation(W x + b) with W of shape (out, in).
    """

    def __init__(self, weight: Parameter, bias: Parameter, activation: str = RELU):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation}, expected one of {ACTIVATIONS}")
        if weight.data.ndim != 2 or bias.shape != (weight.shape[0],):
            raise DimensionError(f"inconsistent layer shapes: weight {weight.shape}, bias {bias.shape}")
        self.weight = weight
        self.bias = bias
        self.activation = activation

    @classmethod
    def create(
        cls, name: str, fan_in: int, fan_out: int, activation: str, rng: np.random.Generator
    ) -> "DenseLayer":
        """Weights uniform on +-sqrt(6 / (fan_in + fan_out)), zero biases."""
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weight = Parameter(f"{name}.weight", rng.uniform(-limit, limit, size=(fan_out, fan_in)))
        bias = Parameter(f"{name}.bias", np.zeros(fan_out))
        return cls(weight, bias, activation)

    @property
    def fan_in(self) -> int:
        return self.weight.shape[1]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[0]

    def parameters(self) -> List[Parameter]:
        return [self.weight, self.bias]


def forward_dense(layer: DenseLayer, input: Value, tape: Tape) -> Value:
    out = tape.linear(input, layer.weight, layer.bias)
    if layer.activation == RELU:
        out = tape.relu(out)
    return out


############################
# Complex values as real pairs
############################
@dataclass
class ComplexValue:
    re: Value
    im: Value

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.re.shape

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data


def complex_constant(tape: Tape, data: np.ndarray) -> ComplexValue:
    data = np.asarray(data)
    return ComplexValue(tape.constant(data.real), tape.constant(np.imag(data)))


def complex_add(tape: Tape, a: ComplexValue, b: ComplexValue) -> ComplexValue:
    return ComplexValue(tape.add(a.re, b.re), tape.add(a.im, b.im))


def complex_sub(tape: Tape, a: ComplexValue, b: ComplexValue) -> ComplexValue:
    return ComplexValue(tape.sub(a.re, b.re), tape.sub(a.im, b.im))


def complex_kron_apply(tape: Tape, A_re: Value, A_im: Value, v: ComplexValue) -> ComplexValue:
    """(A^T (x) I_N) v for complex A = A_re + j A_im, built from four real products."""
    re = tape.sub(tape.kron_apply(A_re, v.re), tape.kron_apply(A_im, v.im))
    im = tape.add(tape.kron_apply(A_re, v.im), tape.kron_apply(A_im, v.re))
    return ComplexValue(re, im)


def pack(tape: Tape, value: ComplexValue) -> Value:
    """Complex vector of length n -> real vector [all real parts, all imaginary parts] of length 2n."""
    return tape.concat([value.re, value.im])


def unpack(tape: Tape, value: Value) -> ComplexValue:
    """Inverse of pack()."""
    if value.shape[-1] % 2:
        raise DimensionError(f"cannot unpack a real vector of odd length {value.shape[-1]}")
    n = value.shape[-1] // 2
    return ComplexValue(tape.slice(value, 0, n), tape.slice(value, n, 2 * n))
