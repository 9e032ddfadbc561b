"""
Minimal tape-based reverse-mode automatic differentiation on numpy arrays,
plus the multilayer perceptron, Adam and checkpoint plumbing built on it.

Every operation records its parents and a closure mapping the output gradient
to parent gradients. ``Tensor.backward`` walks the recorded graph in reverse
topological order. Only leaves (tensors without parents) keep a ``.grad``, and
repeated backward passes accumulate into it until ``zero_grad``.
"""
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .error import DataLoadError, ShapeError

CHECKPOINT_MAGIC = b"CFPINET1"
ACTIVATIONS = {"relu": 0}


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float64 array node in the differentiation graph."""

    def __init__(self, data, requires_grad: bool = False, parents: Tuple["Tensor", ...] = (),
                 backward_fn: Optional[Callable] = None, op: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward_fn = backward_fn
        self.op = op
        self.grad = np.zeros_like(self.data) if requires_grad and not parents else None

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def is_leaf(self) -> bool:
        return not self._parents

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op or 'leaf'}, requires_grad={self.requires_grad})"

    def zero_grad(self) -> None:
        if self.requires_grad and self.is_leaf:
            self.grad = np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _make(data, parents: Sequence["Tensor"], backward_fn: Callable, op: str) -> "Tensor":
        if any(p.requires_grad for p in parents):
            return Tensor(data, True, tuple(parents), backward_fn, op)
        return Tensor(data)

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(a.data + b.data, (a, b),
                            lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,), "neg")

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(a.data * b.data, (a, b),
                            lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                            "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)
        a, b = self, other
        return Tensor._make(
            a.data / b.data, (a, b),
            lambda g: (_unbroadcast(g / b.data, a.shape),
                       _unbroadcast(-g * a.data / (b.data * b.data), b.shape)),
            "div")

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
            raise ShapeError(f"Cannot multiply {a.shape} by {b.shape}")
        return Tensor._make(a.data @ b.data, (a, b),
                            lambda g: (g @ b.data.T, a.data.T @ g), "matmul")

    def __getitem__(self, index):
        a = self

        def backward(g):
            full = np.zeros_like(a.data)
            np.add.at(full, index, g)
            return (full,)

        return Tensor._make(a.data[index], (a,), backward, "index")

    def relu(self) -> "Tensor":
        mask = self.data > 0
        return Tensor._make(self.data * mask, (self,), lambda g: (g * mask,), "relu")

    def exp(self) -> "Tensor":
        out = np.exp(self.data)
        return Tensor._make(out, (self,), lambda g: (g * out,), "exp")

    def log(self) -> "Tensor":
        a = self.data
        return Tensor._make(np.log(a), (self,), lambda g: (g / a,), "log")

    def square(self) -> "Tensor":
        a = self.data
        return Tensor._make(a * a, (self,), lambda g: (2.0 * a * g,), "square")

    def abs(self) -> "Tensor":
        sign = np.sign(self.data)
        return Tensor._make(np.abs(self.data), (self,), lambda g: (g * sign,), "abs")

    def maximum(self, floor: float) -> "Tensor":
        """Elementwise max with a constant; no gradient where the floor is active."""
        mask = self.data > floor
        return Tensor._make(np.where(mask, self.data, floor), (self,), lambda g: (g * mask,), "maximum")

    def clip(self, low: float, high: float) -> "Tensor":
        mask = (self.data >= low) & (self.data <= high)
        return Tensor._make(np.clip(self.data, low, high), (self,), lambda g: (g * mask,), "clip")

    def huber(self, kappa: float = 1.0) -> "Tensor":
        """0.5 x^2 inside |x| <= kappa, kappa (|x| - 0.5 kappa) outside."""
        a = self.data
        inside = np.abs(a) <= kappa
        out = np.where(inside, 0.5 * a * a, kappa * (np.abs(a) - 0.5 * kappa))
        slope = np.where(inside, a, kappa * np.sign(a))
        return Tensor._make(out, (self,), lambda g: (g * slope,), "huber")

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        shape = self.shape

        def backward(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return Tensor._make(self.data.sum(axis=axis, keepdims=keepdims), (self,), backward, "sum")

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        count = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def reshape(self, *shape) -> "Tensor":
        original = self.shape
        return Tensor._make(self.data.reshape(*shape), (self,), lambda g: (g.reshape(original),), "reshape")

    def logsumexp(self, axis: int = -1, keepdims: bool = False) -> "Tensor":
        a = self.data
        peak = np.max(a, axis=axis, keepdims=True)
        peak = np.where(np.isfinite(peak), peak, 0.0)
        shifted = np.exp(a - peak)
        total = shifted.sum(axis=axis, keepdims=True)
        out = np.log(total) + peak
        softmax = shifted / total

        def backward(g):
            if not keepdims:
                g = np.expand_dims(g, axis)
            return (g * softmax,)

        return Tensor._make(out if keepdims else np.squeeze(out, axis=axis), (self,), backward, "logsumexp")

    def log_softmax(self, axis: int = -1) -> "Tensor":
        return self - self.logsumexp(axis=axis, keepdims=True)

    # -- reverse pass -------------------------------------------------------

    def backward(self, inputs: Optional[Sequence["Tensor"]] = None) -> None:
        """
        Propagate d(self)/d(leaf) into every reachable leaf's ``.grad``.
        With ``inputs`` given, only those tensors receive gradients.
        """
        if self.data.size != 1:
            raise ShapeError(f"backward() needs a scalar loss, got shape {self.shape}")
        if not self.requires_grad:
            return
        targets = None if inputs is None else {id(t) for t in inputs}
        grads: Dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(_topological_order(self)):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.is_leaf:
                if targets is None or id(node) in targets:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if targets is not None and id(node) in targets:
                node.grad = g.copy() if node.grad is None else node.grad + g
            for parent, parent_grad in zip(node._parents, node._backward_fn(g)):
                if parent_grad is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = parent_grad if key not in grads else grads[key] + parent_grad


def _topological_order(root: Tensor) -> List[Tensor]:
    order: List[Tensor] = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward, "concat")


class Linear:
    """Affine layer x @ weight + bias with fan-in scaled uniform initialization."""

    def __init__(self, fan_in: int, fan_out: int, rng: Optional[np.random.Generator] = None):
        if rng is None:
            weight = np.zeros((fan_in, fan_out))
            bias = np.zeros(fan_out)
        else:
            bound = 1.0 / np.sqrt(fan_in)
            weight = rng.uniform(-bound, bound, size=(fan_in, fan_out))
            bias = rng.uniform(-bound, bound, size=fan_out)
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(bias, requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class Mlp:
    """ReLU multilayer perceptron; the last layer is linear."""

    def __init__(self, widths: Sequence[int], rng: Optional[np.random.Generator] = None,
                 activation: str = "relu"):
        widths = [int(w) for w in widths]
        if len(widths) < 2 or any(w < 1 for w in widths):
            raise ShapeError(f"Invalid layer widths {widths}")
        if activation not in ACTIVATIONS:
            raise ShapeError(f"Unsupported activation {activation!r}")
        self.widths = widths
        self.activation = activation
        self.layers = [Linear(i, o, rng) for i, o in zip(widths[:-1], widths[1:])]

    @property
    def input_width(self) -> int:
        return self.widths[0]

    @property
    def output_width(self) -> int:
        return self.widths[-1]

    def forward(self, x) -> Tensor:
        x = as_tensor(x)
        if x.data.ndim == 1:
            x = x.reshape(1, -1)
        if x.shape[-1] != self.input_width:
            raise ShapeError(f"Network expects input width {self.input_width}, got {x.shape[-1]}")
        for index, layer in enumerate(self.layers):
            x = layer(x)
            if index < len(self.layers) - 1:
                x = x.relu()
        return x

    __call__ = forward

    def parameters(self) -> List[Tensor]:
        params = []
        for layer in self.layers:
            params.extend((layer.weight, layer.bias))
        return params

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def flat_parameters(self) -> np.ndarray:
        return np.concatenate([p.data.ravel() for p in self.parameters()])

    def load_flat_parameters(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        expected = sum(p.data.size for p in self.parameters())
        if flat.size != expected:
            raise ShapeError(f"Expected {expected} parameters, got {flat.size}")
        offset = 0
        for p in self.parameters():
            p.data = flat[offset:offset + p.data.size].reshape(p.data.shape).copy()
            offset += p.data.size
        self.zero_grad()

    def copy(self) -> "Mlp":
        clone = Mlp(self.widths, None, self.activation)
        clone.load_flat_parameters(self.flat_parameters())
        return clone


def value_and_input_gradient(fn: Callable[[Tensor], Tensor], x: np.ndarray,
                             columns=None) -> Tuple[np.ndarray, np.ndarray]:
    """
    Evaluate a per-row scalar head and d(output)/d(input) for every row.

    Rows must not interact inside ``fn`` (true for MLPs), so the gradient of
    the summed output gives each row's own input gradient. Parameters are left
    untouched.
    """
    x_t = Tensor(np.atleast_2d(np.asarray(x, dtype=np.float64)), requires_grad=True)
    out = fn(x_t)
    if out.data.ndim == 2:
        if out.shape[1] != 1:
            raise ShapeError(f"Input gradient needs a scalar head, got output shape {out.shape}")
        values = out.data[:, 0]
    else:
        values = out.data
    out.sum().backward(inputs=[x_t])
    grad = x_t.grad if x_t.grad is not None else np.zeros_like(x_t.data)
    if columns is not None:
        grad = grad[:, columns]
    return values.copy(), grad


def input_gradient(fn: Callable[[Tensor], Tensor], x: np.ndarray, columns=None) -> np.ndarray:
    """d(output)/d(input) restricted to ``columns`` (e.g. the action slice)."""
    return value_and_input_gradient(fn, x, columns)[1]


@dataclass
class AdamState:
    """Adam moments, step count and hyperparameters."""
    m: List[np.ndarray]
    v: List[np.ndarray]
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], lr: float = 1e-3, **kwargs) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], lr, **kwargs)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("Parameter, gradient and moment lists differ in length")
    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ShapeError(f"Gradient shape {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return state


class Adam:
    """Adam over a list of leaf tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, **kwargs):
        self.params = list(params)
        self.state = AdamState.for_params([p.data for p in self.params], lr, **kwargs)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        adam_step([p.data for p in self.params],
                  [p.grad if p.grad is not None else np.zeros_like(p.data) for p in self.params],
                  self.state)


def polyak_update(target: Mlp, online: Mlp, rate: float) -> None:
    """target <- (1 - rate) target + rate online, parameter by parameter."""
    for t, o in zip(target.parameters(), online.parameters()):
        t.data *= (1.0 - rate)
        t.data += rate * o.data


def _paths(path) -> Tuple[Path, Path]:
    path = Path(path)
    base = path.with_suffix("") if path.suffix in (".bin", ".json") else path
    return base.with_suffix(".bin"), base.with_suffix(".json")


def save_checkpoint(net: Mlp, path, metadata: Optional[Dict] = None) -> Path:
    """
    Write ``<path>.bin`` (magic, widths, activation, little-endian float64
    parameters in layer order) and a ``<path>.json`` metadata sidecar.
    """
    bin_path, json_path = _paths(path)
    bin_path.parent.mkdir(parents=True, exist_ok=True)
    header = CHECKPOINT_MAGIC + struct.pack("<I", len(net.widths))
    header += struct.pack(f"<{len(net.widths)}I", *net.widths)
    header += struct.pack("<B", ACTIVATIONS[net.activation])
    with open(bin_path, "wb") as f:
        f.write(header)
        f.write(net.flat_parameters().astype("<f8").tobytes())
    with open(json_path, "w") as f:
        json.dump(metadata or {}, f, indent=2, sort_keys=True)
    return bin_path


def load_checkpoint(path) -> Tuple[Mlp, Dict]:
    bin_path, json_path = _paths(path)
    try:
        raw = bin_path.read_bytes()
        metadata = json.loads(json_path.read_text()) if json_path.exists() else {}
    except (OSError, json.JSONDecodeError) as e:
        raise DataLoadError(f"Cannot read checkpoint {bin_path}", cause=e) from e
    if not raw.startswith(CHECKPOINT_MAGIC):
        raise DataLoadError(f"{bin_path} is not a network checkpoint")
    offset = len(CHECKPOINT_MAGIC)
    try:
        (count,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        widths = list(struct.unpack_from(f"<{count}I", raw, offset))
        offset += 4 * count
        (code,) = struct.unpack_from("<B", raw, offset)
        offset += 1
    except struct.error as e:
        raise DataLoadError(f"Truncated checkpoint header in {bin_path}", cause=e) from e
    activation = {v: k for k, v in ACTIVATIONS.items()}.get(code)
    if activation is None:
        raise DataLoadError(f"Unknown activation code {code} in {bin_path}")
    net = Mlp(widths, None, activation)
    flat = np.frombuffer(raw, dtype="<f8", offset=offset)
    try:
        net.load_flat_parameters(flat)
    except ShapeError as e:
        raise DataLoadError(f"Checkpoint {bin_path} payload does not match its widths", cause=e) from e
    return net, metadata
