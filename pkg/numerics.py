"""numerics.py

Small dense-tensor kernels with tape-based reverse-mode gradients.

Every kernel is a plain function over `Tensor` objects. A tensor created by
`GradTape.parameter` is a leaf bound to that tape; any kernel that touches it
records itself on the same tape, so `backward(tape, loss)` can replay the
recorded ops in reverse order. Tensors without a tape are constants.

All data is float64. Reductions run in numpy's fixed order and scatter
accumulation uses `np.add.at` (sequential, row order), so identical inputs
give bitwise-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from errors import DataValidationError, NumericError

DTYPE = np.float64

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    __slots__ = ("data", "tape", "requires_grad", "name")

    def __init__(
        self,
        data,
        *,
        tape: Optional["GradTape"] = None,
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self.data = np.asarray(data, dtype=DTYPE)
        self.tape = tape
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={list(self.shape)}{label})"


def constant(data) -> Tensor:
    return Tensor(data)


@dataclass
class _Op:
    name: str
    out: Tensor
    parents: Tuple[Tensor, ...]
    backward: BackwardFn


@dataclass
class GradTape:
    """Records ops of one forward pass plus the named parameter leaves."""

    ops: List[_Op] = field(default_factory=list)
    params: Dict[str, Tensor] = field(default_factory=dict)

    def parameter(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise DataValidationError(f"parameter {name!r} registered twice")
        t = Tensor(value, tape=self, requires_grad=True, name=name)
        self.params[name] = t
        return t

    def watch(self, values: Mapping[str, np.ndarray]) -> Dict[str, Tensor]:
        return {k: self.parameter(k, values[k]) for k in values}

    def record(self, name: str, out: Tensor, parents: Tuple[Tensor, ...], backward: BackwardFn) -> None:
        self.ops.append(_Op(name=name, out=out, parents=parents, backward=backward))


def backward(tape: GradTape, loss: Tensor) -> Dict[str, np.ndarray]:
    """Reverse-mode sweep; returns one gradient array per registered parameter.

    Parameters the loss does not depend on get a zero gradient.
    """
    if loss.data.size != 1:
        raise DataValidationError(f"loss must be scalar, got shape {list(loss.shape)}")

    grads: Dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for op in reversed(tape.ops):
        g = grads.pop(id(op.out), None)
        if g is None:
            continue
        for parent, pg in zip(op.parents, op.backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = np.array(pg, dtype=DTYPE, copy=True)

    out: Dict[str, np.ndarray] = {}
    for name, leaf in tape.params.items():
        g = grads.get(id(leaf))
        out[name] = np.zeros_like(leaf.data) if g is None else g.reshape(leaf.data.shape)
    return out


# ---------- internals ----------

def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values in {op}")


def _tape_of(parents: Sequence[Tensor]) -> Optional[GradTape]:
    for p in parents:
        if p.tape is not None:
            return p.tape
    return None


def _result(op: str, data: np.ndarray, parents: Tuple[Tensor, ...], bwd: BackwardFn) -> Tensor:
    _check_finite(data, op)
    tape = _tape_of(parents)
    needs = tape is not None and any(p.requires_grad for p in parents)
    out = Tensor(data, tape=tape, requires_grad=needs)
    if needs:
        tape.record(op, out, parents, bwd)
    return out


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _segment_array(segment_ids, num_segments: Optional[int], rows: int) -> Tuple[np.ndarray, int]:
    ids = np.asarray(segment_ids, dtype=np.int64)
    if ids.shape != (rows,):
        raise DataValidationError(f"expected {rows} segment ids, got shape {list(ids.shape)}")
    if num_segments is None:
        num_segments = int(ids.max()) + 1 if rows else 0
    if rows and (ids.min() < 0 or ids.max() >= num_segments):
        raise DataValidationError(f"segment id out of range [0, {num_segments})")
    return ids, int(num_segments)


# ---------- elementwise ----------

def add(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result("add", a.data + b.data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _result("sub", a.data - b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result("mul", a.data * b.data, (a, b), bwd)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result("scale", a.data * c, (a,), lambda g: (g * c,))


def add_n(xs: Sequence[Tensor]) -> Tensor:
    if not xs:
        raise DataValidationError("add_n needs at least one tensor")
    data = xs[0].data.copy()
    for x in xs[1:]:
        data = data + x.data
    return _result("add_n", data, tuple(xs), lambda g: tuple(g for _ in xs))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z))
    return _result("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


# ---------- linear algebra / shape ----------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DataValidationError(f"matmul shape mismatch {list(a.shape)} @ {list(b.shape)}")

    def bwd(g):
        return g @ b.data.T, a.data.T @ g

    return _result("matmul", a.data @ b.data, (a, b), bwd)


def transpose(x: Tensor) -> Tensor:
    return _result("transpose", x.data.T.copy(), (x,), lambda g: (g.T,))


def concat_cols(xs: Sequence[Tensor]) -> Tensor:
    widths = [x.shape[1] for x in xs]
    bounds = np.cumsum([0] + widths)

    def bwd(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(xs)))

    return _result("concat_cols", np.concatenate([x.data for x in xs], axis=1), tuple(xs), bwd)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    def bwd(g):
        full = np.zeros_like(x.data)
        full[:, start:stop] = g
        return (full,)

    return _result("slice_cols", x.data[:, start:stop].copy(), (x,), bwd)


def gather_rows(x: Tensor, index) -> Tensor:
    """Row gather `x[index]`; the backward pass scatter-adds in index order."""
    idx = np.asarray(index, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[0]):
        raise DataValidationError(f"row index out of range [0, {x.shape[0]})")

    def bwd(g):
        full = np.zeros_like(x.data)
        np.add.at(full, idx, g)
        return (full,)

    return _result("gather_rows", x.data[idx], (x,), bwd)


def gather(x: Tensor, rows, cols) -> Tensor:
    """Elementwise gather `x[rows, cols]` from a rank-2 table."""
    r = np.asarray(rows, dtype=np.int64)
    c = np.asarray(cols, dtype=np.int64)

    def bwd(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (r, c), g)
        return (full,)

    return _result("gather", x.data[r, c], (x,), bwd)


def sum_all(x: Tensor) -> Tensor:
    return _result("sum_all", np.asarray(x.data.sum()), (x,), lambda g: (np.full_like(x.data, float(g)),))


def max_stack(xs: Sequence[Tensor]) -> Tensor:
    """Element-wise maximum across equally shaped tensors (first wins on ties)."""
    if not xs:
        raise DataValidationError("max_stack needs at least one tensor")
    stacked = np.stack([x.data for x in xs])
    winner = np.argmax(stacked, axis=0)

    def bwd(g):
        return tuple(np.where(winner == i, g, 0.0) for i in range(len(xs)))

    return _result("max_stack", stacked.max(axis=0), tuple(xs), bwd)


# ---------- normalizations ----------

def softmax_rows(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise DataValidationError("softmax_rows expects a rank-2 tensor")
    _check_finite(x.data, "softmax_rows input")
    e = np.exp(x.data - x.data.max(axis=1, keepdims=True))
    y = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _result("softmax_rows", y, (x,), bwd)


def scatter_softmax(values: Tensor, segment_ids, num_segments: Optional[int] = None) -> Tensor:
    """Softmax of each column independently within each segment of rows."""
    _check_finite(values.data, "scatter_softmax input")
    v = values.data
    ids, num = _segment_array(segment_ids, num_segments, v.shape[0])

    seg_max = np.full((num,) + v.shape[1:], -np.inf)
    np.maximum.at(seg_max, ids, v)
    e = np.exp(v - seg_max[ids])
    denom = np.zeros((num,) + v.shape[1:])
    np.add.at(denom, ids, e)
    y = e / denom[ids]

    def bwd(g):
        s = np.zeros((num,) + v.shape[1:])
        np.add.at(s, ids, g * y)
        return (y * (g - s[ids]),)

    return _result("scatter_softmax", y, (values,), bwd)


def scatter_sum(values: Tensor, segment_ids, num_segments: int) -> Tensor:
    v = values.data
    ids, num = _segment_array(segment_ids, num_segments, v.shape[0])
    out = np.zeros((num,) + v.shape[1:])
    np.add.at(out, ids, v)
    return _result("scatter_sum", out, (values,), lambda g: (g[ids],))


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Negative log-softmax of `label` for a single (1, C) logit row."""
    x = logits.data
    m = x.max()
    e = np.exp(x - m)
    lse = m + np.log(e.sum())
    probs = e / e.sum()

    def bwd(g):
        d = probs.copy()
        d[0, label] -= 1.0
        return (d * float(g),)

    return _result("cross_entropy", np.asarray(lse - x[0, label]), (logits,), bwd)


# ---------- gradient checking ----------

def finite_difference_report(
    f: Callable[[Mapping[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    *,
    analytic: Mapping[str, np.ndarray],
    eps: float = 1e-6,
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> Dict[str, float]:
    """Worst relative error per parameter group between `analytic` and central differences."""
    if not 1e-7 <= eps <= 1e-3:
        raise DataValidationError(f"eps must lie in [1e-7, 1e-3], got {eps}")

    rng = np.random.default_rng(seed)
    report: Dict[str, float] = {}
    for name in sorted(params):
        base = np.asarray(params[name], dtype=DTYPE)
        coords = np.arange(base.size)
        if max_coords is not None and base.size > max_coords:
            coords = np.sort(rng.choice(base.size, size=max_coords, replace=False))

        worst = 0.0
        for idx in coords:
            trial = dict(params)
            shifted = base.copy()
            shifted.flat[idx] = base.flat[idx] + eps
            trial[name] = shifted
            f_plus = float(f(trial))
            shifted = base.copy()
            shifted.flat[idx] = base.flat[idx] - eps
            trial[name] = shifted
            f_minus = float(f(trial))
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite objective at {name}[{idx}]")

            central = (f_plus - f_minus) / (2.0 * eps)
            err = abs(float(analytic[name].flat[idx]) - central) / max(1.0, abs(central))
            worst = max(worst, err)
        report[name] = worst
    return report


def finite_difference_check(
    f: Callable[[Mapping[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    eps: float = 1e-6,
    *,
    analytic: Mapping[str, np.ndarray],
    max_coords: Optional[int] = None,
    seed: int = 0,
) -> float:
    report = finite_difference_report(f, params, analytic=analytic, eps=eps, max_coords=max_coords, seed=seed)
    return max(report.values(), default=0.0)
