"""Dense tensors, deterministic randomness, and differentiable primitives.

Tensors are thin wrappers over C-contiguous numpy arrays with an explicit
precision tag (f32/f64). Every primitive ships a hand-written
vector-Jacobian product; a central finite-difference routine serves as the
independent gradient oracle against which the VJPs are checked.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import NumericError, PrecisionError, ShapeError

_DTYPES = {"f32": np.float32, "f64": np.float64}
_TAGS = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}


class Tensor:
    """Dense row-major numeric array with an f32/f64 precision tag."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        if data.dtype not in _TAGS:
            raise PrecisionError(f"unsupported dtype {data.dtype}; use f32 or f64")
        self.data = np.ascontiguousarray(data)

    @staticmethod
    def zeros(shape, elem: str = "f64") -> "Tensor":
        return Tensor(np.zeros(shape, dtype=_dtype(elem)))

    @staticmethod
    def from_list(values, elem: str = "f64") -> "Tensor":
        return Tensor(np.array(values, dtype=_dtype(elem)))

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def elem(self) -> str:
        return _TAGS[self.data.dtype]

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def nbytes(self) -> int:
        return self.data.nbytes

    def copy(self) -> "Tensor":
        return Tensor(self.data.copy())

    def to_precision(self, elem: str) -> "Tensor":
        return Tensor(self.data.astype(_dtype(elem)))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.data).all())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, elem={self.elem})"


def _dtype(elem: str):
    try:
        return _DTYPES[elem]
    except KeyError:
        raise PrecisionError(f"unknown precision tag {elem!r}; use f32 or f64")


def check_finite(t: Tensor, context: str = "tensor") -> None:
    """Raise NumericError if any element is NaN or Inf."""
    if not t.is_finite():
        raise NumericError(f"non-finite values in {context} (shape {t.shape})")


def _same_precision(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.dtype != b.data.dtype:
        raise PrecisionError(f"{op}: mixed precision {a.elem} vs {b.elem}")


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; shapes and precision tags must match."""
    _same_precision(a, b, "add")
    if a.shape != b.shape:
        raise ShapeError(f"add: shape {a.shape} vs {b.shape}")
    return Tensor(a.data + b.data)


# ---------------------------------------------------------------------------
# Matrix product
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a [m x k] and b [k x n]."""
    _same_precision(a, b, "matmul")
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions differ, {a.shape} vs {b.shape}")
    return Tensor(a.data @ b.data)


def matmul_vjp(a: Tensor, b: Tensor, g: Tensor) -> tuple[Tensor, Tensor]:
    """Reverse-mode derivative of matmul: grad_a = g @ b^T, grad_b = a^T @ g."""
    _same_precision(a, b, "matmul_vjp")
    _same_precision(a, g, "matmul_vjp")
    if g.shape != (a.shape[0], b.shape[1]):
        raise ShapeError(f"matmul_vjp: grad shape {g.shape} vs output {(a.shape[0], b.shape[1])}")
    return Tensor(g.data @ b.data.T), Tensor(a.data.T @ g.data)


# ---------------------------------------------------------------------------
# Elementwise kernels
# ---------------------------------------------------------------------------

# tanh-form gelu constant; derivative is closed-form in terms of tanh(u)
_GELU_CUBIC = 0.044715
_GELU_SCALE = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class Kernel:
    """Named elementwise kernel with a fixed scalar parameter."""

    name: str
    c: float = 0.0


GELU = Kernel("gelu")


def scale(c: float) -> Kernel:
    return Kernel("scale", float(c))


def add_const(c: float) -> Kernel:
    return Kernel("add_const", float(c))


def _gelu(x: np.ndarray) -> np.ndarray:
    u = _GELU_SCALE * (x + _GELU_CUBIC * x * x * x)
    return 0.5 * x * (1.0 + np.tanh(u))


def _gelu_derivative(x: np.ndarray) -> np.ndarray:
    u = _GELU_SCALE * (x + _GELU_CUBIC * x * x * x)
    t = np.tanh(u)
    du = _GELU_SCALE * (1.0 + 3.0 * _GELU_CUBIC * x * x)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du


def kernel_apply(kernel: Kernel, x: np.ndarray) -> np.ndarray:
    if kernel.name == "gelu":
        return _gelu(x)
    if kernel.name == "scale":
        return x * x.dtype.type(kernel.c)
    if kernel.name == "add_const":
        return x + x.dtype.type(kernel.c)
    raise ShapeError(f"unknown kernel {kernel.name!r}")


def kernel_derivative(kernel: Kernel, x: np.ndarray) -> np.ndarray:
    if kernel.name == "gelu":
        return _gelu_derivative(x)
    if kernel.name == "scale":
        return np.full_like(x, kernel.c)
    if kernel.name == "add_const":
        return np.ones_like(x)
    raise ShapeError(f"unknown kernel {kernel.name!r}")


def map_unary(kernel: Kernel, x: Tensor) -> Tensor:
    """Apply a named elementwise kernel (gelu, scale(c), add_const(c))."""
    return Tensor(kernel_apply(kernel, x.data))


def map_unary_vjp(kernel: Kernel, x: Tensor, g: Tensor) -> Tensor:
    """Elementwise chain rule: grad_x = kernel'(x) * g."""
    _same_precision(x, g, "map_unary_vjp")
    if x.shape != g.shape:
        raise ShapeError(f"map_unary_vjp: shape {x.shape} vs grad {g.shape}")
    return Tensor(kernel_derivative(kernel, x.data) * g.data)


# ---------------------------------------------------------------------------
# Row softmax
# ---------------------------------------------------------------------------

def softmax_rows(x: Tensor) -> Tensor:
    """Exp-normalize each row with max-subtraction for stability."""
    if len(x.shape) != 2 or x.shape[1] < 1:
        raise ShapeError(f"softmax_rows: expected 2-D input with n >= 1, got {x.shape}")
    return Tensor(_softmax_rows(x.data))


def _softmax_rows(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_vjp(y: Tensor, g: Tensor) -> Tensor:
    """VJP of softmax_rows given its output y: row = y * (g - <g, y>)."""
    _same_precision(y, g, "softmax_rows_vjp")
    if y.shape != g.shape:
        raise ShapeError(f"softmax_rows_vjp: shape {y.shape} vs grad {g.shape}")
    return Tensor(_softmax_rows_vjp(y.data, g.data))


def _softmax_rows_vjp(y: np.ndarray, g: np.ndarray) -> np.ndarray:
    dot = (g * y).sum(axis=1, keepdims=True)
    return y * (g - dot)


# ---------------------------------------------------------------------------
# Finite-difference gradient oracle
# ---------------------------------------------------------------------------

def finite_difference_grad(f: Callable[[Tensor], float], x: Tensor,
                           eps: float = 1e-5) -> Tensor:
    """Central-difference gradient of a scalar function, one coordinate at a time.

    Deliberately naive: this is the independent oracle for every analytic
    VJP in the package, so it shares no code with them.
    """
    if eps <= 0:
        raise NumericError(f"finite_difference_grad: eps must be positive, got {eps}")
    flat = x.data.reshape(-1).copy()
    grad = np.zeros_like(flat)
    for j in range(flat.size):
        orig = flat[j]
        flat[j] = orig + eps
        f_plus = float(f(Tensor(flat.reshape(x.shape).copy())))
        flat[j] = orig - eps
        f_minus = float(f(Tensor(flat.reshape(x.shape).copy())))
        flat[j] = orig
        if not (math.isfinite(f_plus) and math.isfinite(f_minus)):
            raise NumericError(
                f"finite_difference_grad: non-finite evaluation at coordinate {j}")
        grad[j] = (f_plus - f_minus) / (2.0 * eps)
    return Tensor(grad.reshape(x.shape))


# ---------------------------------------------------------------------------
# Deterministic randomness
# ---------------------------------------------------------------------------

# splitmix64 constants (Steele, Lea & Flood); counter-based so draws vectorize
_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix64(z: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = (z ^ (z >> np.uint64(30))) * _MIX1
        z = (z ^ (z >> np.uint64(27))) * _MIX2
        return z ^ (z >> np.uint64(31))


def _fnv1a(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


class Prng:
    """Counter-based splitmix64 generator; one instance per consumer.

    Identical seeds produce identical bit streams on every platform because
    the state transition is pure 64-bit integer arithmetic. Child generators
    are derived from (seed, label) so independent subsystems never share a
    stream.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & _MASK64
        self._counter = 0

    def child(self, label: str) -> "Prng":
        return Prng(int(_mix64(np.uint64(self.seed ^ _fnv1a(label)))))

    def next_u64(self, n: int) -> np.ndarray:
        ks = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        with np.errstate(over="ignore"):
            return _mix64(ks * _GAMMA + np.uint64(self.seed))

    def uniform(self, n: int) -> np.ndarray:
        # top 53 bits -> doubles in (0, 1]; strictly positive so log() is safe
        bits = self.next_u64(n) >> np.uint64(11)
        return (bits.astype(np.float64) + 1.0) * (2.0 ** -53)

    def normal(self, shape, elem: str = "f64") -> Tensor:
        """Standard normal tensor via Box-Muller on the uniform stream."""
        n = int(np.prod(shape)) if shape else 1
        pairs = (n + 1) // 2
        u1 = self.uniform(pairs)
        u2 = self.uniform(pairs)
        r = np.sqrt(-2.0 * np.log(u1))
        theta = 2.0 * np.pi * u2
        z = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
        return Tensor(z.reshape(shape).astype(_dtype(elem)))

    def integers(self, n: int, upper: int) -> np.ndarray:
        """n integers in [0, upper) by rejection-free modulo (upper << 2^64)."""
        return (self.next_u64(n) % np.uint64(upper)).astype(np.int64)
