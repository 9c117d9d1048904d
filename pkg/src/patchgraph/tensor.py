"""Dense float64 tensors with reverse-mode automatic differentiation.

A small tape-based kernel: each op records its parents and a backward
closure; ``Tensor.backward()`` topologically sorts the tape and
accumulates gradients. Everything is 2-D (matrices) or scalar-shaped
(1x1), which is all the model needs. Also hosts the one-sided Jacobi SVD,
the adaptive-moment optimizer, the seeded RNG, and the checkpoint
container.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import NoConvergence, NonFiniteInput, ShapeMismatch


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1, 1)
        elif arr.ndim == 1:
            arr = arr.reshape(1, -1)
        elif arr.ndim != 2:
            raise ShapeMismatch(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._backward = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ShapeMismatch("backward() starts from a scalar (1x1) tensor")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs(*tensors: Tensor) -> bool:
    return any(t.requires_grad for t in tensors)


def _make(data, parents, backward, requires: bool) -> Tensor:
    out = Tensor(data, requires_grad=requires)
    if requires:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce a gradient back to `shape` after row/column broadcasting."""
    if g.shape == shape:
        return g
    out = g
    if shape[0] == 1 and g.shape[0] != 1:
        out = out.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        out = out.sum(axis=1, keepdims=True)
    if out.shape != tuple(shape):
        raise ShapeMismatch(f"cannot reduce gradient {g.shape} to {shape}")
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    req = _needs(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward, req)


def add(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "add")
    req = _needs(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), backward, req)


def sub(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "sub")
    req = _needs(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), backward, req)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise product; operands may broadcast along rows or columns."""
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "mul")
    req = _needs(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), backward, req)


def div(a: Tensor, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_broadcast(a, b, "div")
    req = _needs(a, b)

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g / b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return _make(a.data / b.data, (a, b), backward, req)


def scale(a: Tensor, c: float) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * c)

    return _make(a.data * c, (a,), backward, a.requires_grad)


def _check_broadcast(a: Tensor, b: Tensor, op: str):
    for axis in (0, 1):
        if a.shape[axis] != b.shape[axis] and a.shape[axis] != 1 and b.shape[axis] != 1:
            raise ShapeMismatch(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _make(a.data * mask, (a,), backward, a.requires_grad)


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / a.data)

    return _make(np.log(a.data), (a,), backward, a.requires_grad)


def transpose(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _make(a.data.T.copy(), (a,), backward, a.requires_grad)


def softmax_rows(a: Tensor) -> Tensor:
    """Row-wise softmax, stabilized by subtracting each row's max."""
    a = _as_tensor(a)
    if not np.all(np.isfinite(a.data)):
        raise NonFiniteInput("softmax_rows input contains non-finite entries")
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            dot = (g * y).sum(axis=1, keepdims=True)
            a._accumulate((g - dot) * y)

    return _make(y, (a,), backward, a.requires_grad)


def column_norms(a: Tensor) -> Tensor:
    """Euclidean norm of each column, as a 1 x k row."""
    a = _as_tensor(a)
    norms = np.sqrt((a.data * a.data).sum(axis=0, keepdims=True))

    def backward(g):
        if a.requires_grad:
            safe = np.where(norms == 0.0, 1.0, norms)
            a._accumulate(a.data / safe * g)

    return _make(norms, (a,), backward, a.requires_grad)


def concat_cols(parts: list[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    rows = parts[0].shape[0]
    for p in parts:
        if p.shape[0] != rows:
            raise ShapeMismatch("concat_cols: row counts differ")
    req = _needs(*parts)
    widths = [p.shape[1] for p in parts]

    def backward(g):
        offset = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p._accumulate(g[:, offset : offset + w])
            offset += w

    return _make(np.concatenate([p.data for p in parts], axis=1), parts, backward, req)


def concat_rows(parts: list[Tensor]) -> Tensor:
    parts = [_as_tensor(p) for p in parts]
    cols = parts[0].shape[1]
    for p in parts:
        if p.shape[1] != cols:
            raise ShapeMismatch("concat_rows: column counts differ")
    req = _needs(*parts)
    heights = [p.shape[0] for p in parts]

    def backward(g):
        offset = 0
        for p, h in zip(parts, heights):
            if p.requires_grad:
                p._accumulate(g[offset : offset + h, :])
            offset += h

    return _make(np.concatenate([p.data for p in parts], axis=0), parts, backward, req)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, start:stop] = g
            a._accumulate(full)

    return _make(a.data[:, start:stop].copy(), (a,), backward, a.requires_grad)


def slice_rows(a: Tensor, start: int, stop: int) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[start:stop, :] = g
            a._accumulate(full)

    return _make(a.data[start:stop, :].copy(), (a,), backward, a.requires_grad)


def take_rows(a: Tensor, indices) -> Tensor:
    """Gather rows by index (embedding lookup); gradients scatter-add."""
    a = _as_tensor(a)
    idx = np.asarray(indices, dtype=np.int64)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accumulate(full)

    return _make(a.data[idx, :], (a,), backward, a.requires_grad)


def mean_rows(a: Tensor) -> Tensor:
    """Column means as a 1 x k row."""
    a = _as_tensor(a)
    n = a.shape[0]

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.repeat(g, n, axis=0) / n)

    return _make(a.data.mean(axis=0, keepdims=True), (a,), backward, a.requires_grad)


def total_sum(a: Tensor) -> Tensor:
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.data, g[0, 0]))

    return _make(a.data.sum(), (a,), backward, a.requires_grad)


def pick(a: Tensor, row: int, col: int) -> Tensor:
    """Select one entry as a 1x1 tensor."""
    a = _as_tensor(a)

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[row, col] = g[0, 0]
            a._accumulate(full)

    return _make(a.data[row, col], (a,), backward, a.requires_grad)


# --- singular value decomposition (one-sided Jacobi) ---


def svd(w, max_sweeps: int = 60, tol: float = 1e-14):
    """One-sided Jacobi SVD of a matrix.

    Returns (U, s, X) with ``w = U @ diag(s) @ X.T``; U and X have
    orthonormal columns, s is non-negative and descending. Rotations are
    applied to column pairs until all pairwise column dot products are
    negligible; columns of the rotated matrix are then the left singular
    vectors scaled by the singular values. Zero columns (rank deficiency)
    get an orthonormal completion.
    """
    a = w.data.copy() if isinstance(w, Tensor) else np.array(w, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeMismatch("svd expects a matrix")
    if not np.all(np.isfinite(a)):
        raise NonFiniteInput("svd input contains non-finite entries")
    d, k = a.shape
    if d < k:
        u, s, x = svd(a.T, max_sweeps=max_sweeps, tol=tol)
        return x, s, u

    m = a.copy()
    v = np.eye(k)
    scale_ref = max(np.linalg.norm(a), 1e-300)
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(k):
            for j in range(i + 1, k):
                ci, cj = m[:, i], m[:, j]
                bij = float(ci @ cj)
                aii = float(ci @ ci)
                ajj = float(cj @ cj)
                off = max(off, abs(bij) / max(np.sqrt(aii * ajj), 1e-300))
                if abs(bij) <= tol * np.sqrt(aii * ajj) or bij == 0.0:
                    continue
                tau = (ajj - aii) / (2.0 * bij)
                t = np.sign(tau) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                if tau == 0.0:
                    t = 1.0
                cs = 1.0 / np.sqrt(1.0 + t * t)
                sn = cs * t
                gi = cs * m[:, i] - sn * m[:, j]
                gj = sn * m[:, i] + cs * m[:, j]
                m[:, i], m[:, j] = gi, gj
                vi = cs * v[:, i] - sn * v[:, j]
                vj = sn * v[:, i] + cs * v[:, j]
                v[:, i], v[:, j] = vi, vj
        if off <= 1e-12:
            break
    else:
        raise NoConvergence(f"jacobi svd did not converge in {max_sweeps} sweeps")

    s = np.sqrt((m * m).sum(axis=0))
    order = np.argsort(-s, kind="stable")
    s = s[order]
    m = m[:, order]
    v = v[:, order]

    u = np.zeros((d, k))
    cutoff = 1e-13 * scale_ref
    good = s > cutoff
    u[:, good] = m[:, good] / s[good]
    if not np.all(good):
        u = _complete_orthonormal(u, good)
        s = np.where(good, s, 0.0)
    return u, s, v


def _complete_orthonormal(u: np.ndarray, good: np.ndarray) -> np.ndarray:
    """Fill zero columns of u with vectors orthonormal to the rest."""
    d = u.shape[0]
    basis = [u[:, i] for i in np.nonzero(good)[0]]
    fill = np.nonzero(~good)[0]
    cand = 0
    for col in fill:
        while cand < d:
            vec = np.zeros(d)
            vec[cand] = 1.0
            cand += 1
            for b in basis:
                vec -= (vec @ b) * b
            norm = np.linalg.norm(vec)
            if norm > 1e-8:
                vec /= norm
                basis.append(vec)
                u[:, col] = vec
                break
        else:
            raise NoConvergence("could not complete an orthonormal basis")
    return u


# --- optimizer ---


@dataclass
class OptimizerState:
    """Adaptive-moment state with linear warm-up to a constant peak rate."""

    peak_lr: float
    warmup_steps: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def learning_rate(self, step: int) -> float:
        if self.warmup_steps > 0 and step <= self.warmup_steps:
            return self.peak_lr * step / self.warmup_steps
        return self.peak_lr


def optimizer_step(params: dict[str, Tensor], state: OptimizerState):
    """One adaptive-moment update over named parameters with .grad set.

    Parameters without gradients this step still advance their moment
    decay implicitly by being skipped (their moments stay; standard lazy
    handling at desk scale keeps zero-gradient steps cheap and exact for
    the zero-gradient contract: no gradient ever seen means no movement).
    """
    state.step_count += 1
    t = state.step_count
    lr = state.learning_rate(t)
    b1, b2, eps = state.beta1, state.beta2, state.eps
    for name in sorted(params):
        p = params[name]
        g = p.grad
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeMismatch(f"gradient shape {g.shape} != param shape {p.data.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * (g * g)
        mhat = state.m[name] / (1 - b1 ** t)
        vhat = state.v[name] / (1 - b2 ** t)
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)


# --- deterministic RNG ---


class Rng:
    """Seeded generator (PCG64) so identical seeds give identical streams."""

    def __init__(self, seed: int):
        self.gen = np.random.Generator(np.random.PCG64(seed))

    def normal(self, rows: int, cols: int, std: float = 1.0) -> np.ndarray:
        return self.gen.standard_normal((rows, cols)) * std

    def xavier(self, rows: int, cols: int) -> np.ndarray:
        std = np.sqrt(2.0 / (rows + cols))
        return self.gen.standard_normal((rows, cols)) * std

    def permutation(self, n: int) -> np.ndarray:
        return self.gen.permutation(n)

    def integers(self, low: int, high: int) -> int:
        return int(self.gen.integers(low, high))

    def choice(self, seq):
        return seq[self.integers(0, len(seq))]

    def uniform(self) -> float:
        return float(self.gen.random())


# --- checkpoint container ---

_MAGIC = b"PGCK"
_VERSION = 1


def save_checkpoint(path, tensors: dict[str, np.ndarray]):
    """Versioned binary container: named float64 arrays, little-endian,
    written in sorted name order so equal contents give equal bytes."""
    path = Path(path)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<II", _VERSION, len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                f.write(struct.pack("<I", dim))
            f.write(arr.tobytes())


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ShapeMismatch(f"not a checkpoint file: {path}")
        version, count = struct.unpack("<II", f.read(8))
        if version != _VERSION:
            raise ShapeMismatch(f"unsupported checkpoint version {version}")
        out: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", f.read(2))
            name = f.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = tuple(struct.unpack("<I", f.read(4))[0] for _ in range(ndim))
            size = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(f.read(size * 8), dtype="<f8").reshape(shape).copy()
            out[name] = arr
        return out
