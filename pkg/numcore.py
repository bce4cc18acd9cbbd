"""### Noyau numérique différentiable

Tenseurs denses (float32 par défaut) et différentiation automatique en mode
inverse : chaque opération enregistre ses entrées et une fonction qui renvoie
les gradients de ses entrées. Toutes les briques apprenables du dépôt
(encodeur, dictionnaire, HCVAE, assemblage, estimateurs CLUB) reposent sur ce
module.

## Contrat
- Les gradients s'accumulent dans `Tensor.grad` : l'appelant les remet à zéro
  (`Module.zero_grad`) avant chaque `backward`. Pas de dérivée seconde.
- Les tableaux `data` ne sont jamais modifiés par les opérations ; seul
  l'optimiseur remplace les valeurs des paramètres.
- `precision(np.float64)` bascule temporairement la précision (utilisé par
  `check_gradients` pour les différences finies).
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit

_STATE = {"dtype": np.float32}

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class ShapeError(ValueError):
    """Dimensions incompatibles ou perte non scalaire."""


@contextlib.contextmanager
def precision(dtype) -> Iterator[None]:
    """Changer temporairement le type flottant des tenseurs créés."""

    previous = _STATE["dtype"]
    _STATE["dtype"] = np.dtype(dtype).type
    try:
        yield
    finally:
        _STATE["dtype"] = previous


def current_dtype():
    return _STATE["dtype"]


class Tensor:
    """Tableau dense avec suivi optionnel du gradient."""

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = np.asarray(data, dtype=current_dtype())
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.op = "leaf"
        self._parents: Tuple[Tensor, ...] = ()
        self._tracked: Tuple[bool, ...] = ()
        self._backward: Optional[BackwardFn] = None

    # -- propriétés ---------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return int(self.data.size)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() exige un tenseur à un élément, forme reçue {self.shape}.")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # -- opérateurs ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    # -- raccourcis ---------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def relu(self) -> "Tensor":
        return relu(self)

    def sigmoid(self) -> "Tensor":
        return sigmoid(self)

    def exp(self) -> "Tensor":
        return exp(self)

    def log(self) -> "Tensor":
        return log(self)

    def backward(self) -> None:
        backward(self)


class Parameter(Tensor):
    """Tenseur apprenable enregistré par `Module.named_parameters`."""

    def __init__(self, data) -> None:
        super().__init__(data, requires_grad=True)


# ---------------------------------------------------------------------------
# Graphe
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GraphNode:
    op: str
    input_ids: Tuple[int, ...]
    output_id: int


@dataclass
class Graph:
    """Nœuds du graphe enregistré, en ordre topologique (entrées d'abord)."""

    nodes: List[GraphNode]
    tensors: List[Tensor] = field(repr=False, default_factory=list)


def trace(root: Tensor) -> Graph:
    """Ordonner topologiquement le graphe qui a produit `root` (parcours itératif)."""

    ordered: List[Tensor] = []
    visited = set()
    stack: List[Tuple[Tensor, bool]] = [(root, False)]

    while stack:
        node, expanded = stack.pop()
        if expanded:
            ordered.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    nodes = [
        GraphNode(node.op, tuple(id(parent) for parent in node._parents), id(node))
        for node in ordered
    ]
    return Graph(nodes=nodes, tensors=ordered)


def backward(loss: Tensor) -> None:
    """Rétropropager depuis une perte scalaire vers les feuilles `requires_grad`.

    Le suivi de chaque entrée est celui en vigueur à la construction du nœud :
    un paramètre gelé par `frozen` au moment du calcul ne reçoit rien.
    """

    if loss.data.size != 1:
        raise ShapeError(f"backward() exige une perte scalaire, forme reçue {loss.shape}.")
    if not loss.requires_grad:
        return

    graph = trace(loss)
    pending: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}

    for node in reversed(graph.tensors):
        grad = pending.pop(id(node), None)
        if grad is None:
            continue

        if node._backward is None:
            grad = np.array(grad, dtype=node.data.dtype).reshape(node.shape)
            node.grad = grad if node.grad is None else node.grad + grad
            continue

        for parent, tracked, parent_grad in zip(node._parents, node._tracked, node._backward(grad)):
            if parent_grad is None or not tracked:
                continue
            key = id(parent)
            pending[key] = pending[key] + parent_grad if key in pending else parent_grad


# ---------------------------------------------------------------------------
# Opérations
# ---------------------------------------------------------------------------


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _result(data, parents: Sequence[Tensor], backward_fn: BackwardFn, op: str) -> Tensor:
    out = Tensor(data)
    if any(parent.requires_grad for parent in parents):
        out.requires_grad = True
        out.op = op
        out._parents = tuple(parents)
        out._tracked = tuple(parent.requires_grad for parent in parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Ramener un gradient diffusé à la forme de l'entrée."""

    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _result(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        ),
        "div",
    )


def power(a: Tensor, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _result(
        a.data**exponent,
        (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1),),
        "power",
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Produit matriciel 2D : (m×k) · (k×n) → (m×n)."""

    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul : dimensions incompatibles {a.shape} et {b.shape}.")
    return _result(
        a.data @ b.data,
        (a, b),
        lambda g: (g @ b.data.T, a.data.T @ g),
        "matmul",
    )


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def sigmoid(a: Tensor) -> Tensor:
    s = expit(a.data)
    return _result(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def exp(a: Tensor) -> Tensor:
    e = np.exp(a.data)
    return _result(e, (a,), lambda g: (g * e,), "exp")


def log(a: Tensor) -> Tensor:
    return _result(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def clip(a: Tensor, low: float, high: float) -> Tensor:
    """Borner les valeurs ; le gradient ne passe qu'à l'intérieur de [low, high]."""

    inside = (a.data >= low) & (a.data <= high)
    return _result(np.clip(a.data, low, high), (a,), lambda g: (g * inside,), "clip")


def _expand_reduced(g: np.ndarray, shape, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    return _result(
        a.data.sum(axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (_expand_reduced(g, a.shape, axis, keepdims),),
        "sum",
    )


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return _result(
        a.data.mean(axis=axis, keepdims=keepdims),
        (a,),
        lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,),
        "mean",
    )


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Softmax stabilisé par soustraction du maximum le long de `axis`."""

    if axis >= a.ndim or axis < -a.ndim:
        raise ShapeError(f"softmax : axe {axis} invalide pour un tenseur de rang {a.ndim}.")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)
    return _result(
        s,
        (a,),
        lambda g: (s * (g - (g * s).sum(axis=axis, keepdims=True)),),
        "softmax",
    )


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    return _result(
        out,
        (a,),
        lambda g: (g - np.exp(out) * g.sum(axis=axis, keepdims=True),),
        "log_softmax",
    )


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    boundaries = np.cumsum(sizes)[:-1]
    return _result(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, boundaries, axis=axis)),
        "concat",
    )


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    return concat([expand_dims(t, axis) for t in tensors], axis=axis)


def expand_dims(a: Tensor, axis: int) -> Tensor:
    shape = list(a.shape)
    position = axis if axis >= 0 else len(shape) + 1 + axis
    shape.insert(position, 1)
    return reshape(a, tuple(shape))


def reshape(a: Tensor, shape) -> Tensor:
    return _result(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a: Tensor, axes=None) -> Tensor:
    axes = tuple(axes) if axes is not None else tuple(reversed(range(a.ndim)))
    inverse = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), (a,), lambda g: (g.transpose(inverse),), "transpose")


def index(a: Tensor, key) -> Tensor:
    def _backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        np.add.at(full, key, g)
        return (full,)

    return _result(a.data[key], (a,), _backward, "index")


def stop_gradient(a: Tensor) -> Tensor:
    """Identité en avant, gradient nul en arrière."""

    return Tensor(as_tensor(a).data)


def straight_through(a: Tensor, value: Tensor) -> Tensor:
    """Valeur exacte de `value` en avant, gradient transmis tel quel à `a` en arrière."""

    a, value = as_tensor(a), as_tensor(value)
    if a.shape != value.shape:
        raise ShapeError(f"Estimateur direct : formes {a.shape} et {value.shape}.")
    return _result(value.data.copy(), (a,), lambda g: (g,), "straight_through")


def gaussian_sample(mean_: Tensor, log_var: Tensor, noise: np.ndarray) -> Tensor:
    """Tirage reparamétré `mean + exp(log_var / 2) * noise`, bruit fourni par l'appelant."""

    return mean_ + exp(log_var * 0.5) * Tensor(noise)


def mse(a: Tensor, b: Tensor) -> Tensor:
    diff = as_tensor(a) - as_tensor(b)
    return mean(diff * diff)


# -- convolutions -----------------------------------------------------------


def _im2col(x: np.ndarray, kernel: int, stride: int, padding: int) -> Tuple[np.ndarray, int, int]:
    n, c, _, _ = x.shape
    padded = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    out_h, out_w = windows.shape[2], windows.shape[3]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c * kernel * kernel)
    return cols, out_h, out_w


def _col2im(
    cols: np.ndarray,
    shape: Tuple[int, int, int, int],
    kernel: int,
    stride: int,
    padding: int,
    out_h: int,
    out_w: int,
) -> np.ndarray:
    n, c, h, w = shape
    padded = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    blocks = cols.reshape(n, out_h, out_w, c, kernel, kernel).transpose(0, 3, 4, 5, 1, 2)
    for i in range(kernel):
        for j in range(kernel):
            padded[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += blocks[:, :, i, j]
    return padded[:, :, padding : padding + h, padding : padding + w]


def conv2d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """Convolution 2D (N, Cin, H, W) × (Cout, Cin, k, k), pas 1 ou 2, bourrage nul."""

    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d : entrée {x.shape} incompatible avec le noyau {weight.shape}.")
    n = x.shape[0]
    c_out, _, kernel, _ = weight.shape
    cols, out_h, out_w = _im2col(x.data, kernel, stride, padding)
    w_mat = weight.data.reshape(c_out, -1)
    out = cols @ w_mat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(n, out_h, out_w, c_out).transpose(0, 3, 1, 2)

    def _backward(g):
        g_mat = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        grad_w = (g_mat.T @ cols).reshape(weight.shape)
        grad_x = _col2im(g_mat @ w_mat, x.shape, kernel, stride, padding, out_h, out_w)
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(g_mat.sum(axis=0))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, _backward, "conv2d")


def conv_transpose2d(
    x: Tensor,
    weight: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 2,
    padding: int = 1,
    output_padding: int = 1,
) -> Tensor:
    """Convolution transposée (N, Cin, h, w) × (Cin, Cout, k, k), adjointe de `conv2d`."""

    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[0]:
        raise ShapeError(f"conv_transpose2d : entrée {x.shape} incompatible avec le noyau {weight.shape}.")
    n, c_in, h, w = x.shape
    _, c_out, kernel, _ = weight.shape
    out_h = (h - 1) * stride - 2 * padding + kernel + output_padding
    out_w = (w - 1) * stride - 2 * padding + kernel + output_padding
    x_mat = x.data.transpose(0, 2, 3, 1).reshape(-1, c_in)
    w_mat = weight.data.reshape(c_in, -1)
    out = _col2im(x_mat @ w_mat, (n, c_out, out_h, out_w), kernel, stride, padding, h, w)
    if bias is not None:
        out = out + bias.data.reshape(1, -1, 1, 1)

    def _backward(g):
        cols, _, _ = _im2col(g, kernel, stride, padding)
        grad_x = (cols @ w_mat.T).reshape(n, h, w, c_in).transpose(0, 3, 1, 2)
        grad_w = (x_mat.T @ cols).reshape(weight.shape)
        grads = [grad_x, grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, _backward, "conv_transpose2d")


# ---------------------------------------------------------------------------
# Modules et optimisation
# ---------------------------------------------------------------------------


class Module:
    """Conteneur de paramètres, parcouru dans l'ordre de déclaration des attributs."""

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            full_name = f"{prefix}{name}"
            if isinstance(value, Parameter):
                yield full_name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(prefix=f"{full_name}.")
            elif isinstance(value, (list, tuple)):
                for position, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(prefix=f"{full_name}.{position}.")

    def parameters(self) -> List[Parameter]:
        return [param for _, param in self.named_parameters()]

    def parameter_count(self) -> int:
        return sum(param.size for param in self.parameters())

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.grad = None

    def state_dict(self) -> Dict[str, np.ndarray]:
        return {name: param.data.copy() for name, param in self.named_parameters()}

    def load_state_dict(self, state: Dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"Paramètres absents de l'état fourni : {', '.join(missing)}.")
        for name, param in own.items():
            values = np.asarray(state[name])
            if values.shape != param.shape:
                raise ShapeError(f"Paramètre {name} : forme {values.shape} au lieu de {param.shape}.")
            param.data = values.astype(param.data.dtype)


@contextlib.contextmanager
def frozen(module: Module) -> Iterator[Module]:
    """Couper temporairement le suivi du gradient sur les paramètres d'un module."""

    params = module.parameters()
    for param in params:
        param.requires_grad = False
    try:
        yield module
    finally:
        for param in params:
            param.requires_grad = True


def _uniform(rng: np.random.Generator, bound: float, shape) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class Linear(Module):
    """Application affine appliquée ligne par ligne : (B, in) → (B, out)."""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator) -> None:
        bound = 1.0 / np.sqrt(in_features)
        self.weight = Parameter(_uniform(rng, bound, (in_features, out_features)))
        self.bias = Parameter(_uniform(rng, bound, (out_features,)))

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


class Conv2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 1,
        padding: int = 0,
    ) -> None:
        bound = 1.0 / np.sqrt(in_channels * kernel * kernel)
        self.weight = Parameter(_uniform(rng, bound, (out_channels, in_channels, kernel, kernel)))
        self.bias = Parameter(_uniform(rng, bound, (out_channels,)))
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class ConvTranspose2d(Module):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: int,
        rng: np.random.Generator,
        stride: int = 2,
        padding: int = 1,
        output_padding: int = 1,
    ) -> None:
        bound = 1.0 / np.sqrt(out_channels * kernel * kernel)
        self.weight = Parameter(_uniform(rng, bound, (in_channels, out_channels, kernel, kernel)))
        self.bias = Parameter(_uniform(rng, bound, (out_channels,)))
        self.stride = stride
        self.padding = padding
        self.output_padding = output_padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv_transpose2d(
            x,
            self.weight,
            self.bias,
            stride=self.stride,
            padding=self.padding,
            output_padding=self.output_padding,
        )


class AdamW:
    """Adam à décroissance de poids découplée."""

    def __init__(
        self,
        params: Sequence[Parameter],
        lr: float = 1e-3,
        betas: Tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 0.01,
    ) -> None:
        self.params = list(params)
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.steps = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for param in self.params:
            param.grad = None

    def step(self) -> None:
        self.steps += 1
        beta1, beta2 = self.betas
        correction1 = 1.0 - beta1**self.steps
        correction2 = 1.0 - beta2**self.steps

        for param, m, v in zip(self.params, self._m, self._v):
            if param.grad is None:
                continue
            grad = param.grad
            m *= beta1
            m += (1.0 - beta1) * grad
            v *= beta2
            v += (1.0 - beta2) * grad * grad
            decayed = param.data * (1.0 - self.lr * self.weight_decay)
            update = self.lr * (m / correction1) / (np.sqrt(v / correction2) + self.eps)
            param.data = (decayed - update).astype(param.data.dtype)


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    """Borner la norme globale des gradients ; renvoie la norme avant écrêtage."""

    grads = [p.grad for p in params if p.grad is not None]
    if not grads:
        return 0.0
    total = float(np.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads)))
    if total > max_norm > 0:
        scale = max_norm / (total + 1e-12)
        for param in params:
            if param.grad is not None:
                param.grad = param.grad * scale
    return total


# ---------------------------------------------------------------------------
# Contrôle des gradients
# ---------------------------------------------------------------------------


@dataclass
class GradientReport:
    max_rel_error: float
    passed: bool
    analytic: np.ndarray = field(repr=False)
    numeric: np.ndarray = field(repr=False)


def check_gradients(
    f: Callable[[Tensor], Tensor],
    x: Tensor,
    eps: float = 1e-4,
    tol: float = 1e-3,
) -> GradientReport:
    """Comparer le gradient automatique aux différences finies centrées.

    Le calcul se fait en float64. L'erreur relative d'un élément vaut
    `|a - n| / max(|a|, |n|, 1e-3)`. Les différences finies ne voient pas
    `stop_gradient` : un désaccord y est attendu et signalé tel quel.
    """

    if not 1e-6 < eps < 1e-2:
        raise ValueError(f"eps doit appartenir à ]1e-6, 1e-2[, reçu {eps}.")

    with precision(np.float64):
        base = np.asarray(x.data, dtype=np.float64)
        probe = Tensor(base.copy(), requires_grad=True)
        out = f(probe)
        if out.data.size != 1:
            raise ShapeError(f"check_gradients : f doit renvoyer un scalaire, forme reçue {out.shape}.")
        backward(out)
        analytic = probe.grad if probe.grad is not None else np.zeros_like(base)

        numeric = np.zeros_like(base)
        for position in range(base.size):
            shifted = base.copy()
            shifted.flat[position] += eps
            upper = f(Tensor(shifted)).item()
            shifted.flat[position] -= 2 * eps
            lower = f(Tensor(shifted)).item()
            numeric.flat[position] = (upper - lower) / (2 * eps)

    denominator = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    errors = np.abs(analytic - numeric) / denominator
    max_error = float(errors.max()) if errors.size else 0.0
    return GradientReport(max_rel_error=max_error, passed=max_error < tol, analytic=analytic, numeric=numeric)
