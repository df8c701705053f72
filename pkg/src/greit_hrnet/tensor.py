"""Shape-checked primitives over (batch, channel, height, width) arrays.

Every function accepts plain ``numpy`` arrays or tape :class:`Var` handles.
With arrays it simply computes; with Vars it also records a gradient node.
"""
import numpy as np

from . import instrument
from .autodiff import Var, tape_of, value_of


class ShapeError(ValueError):
    pass


def as_tensor(data, dtype=np.float32):
    """Build a tensor from nested data; precision is chosen here."""
    arr = np.array(data, dtype=dtype)
    if any(d <= 0 for d in arr.shape):
        raise ShapeError(f"dimensions must be positive, got {arr.shape}")
    return arr


def _record(op, inputs, out, vjp):
    tape = tape_of(*inputs)
    if tape is None:
        return out
    return tape.record(op, inputs, out, vjp)


def _broadcast_shape(a, b):
    if a == b:
        return a
    if len(a) != len(b):
        raise ShapeError(f"cannot broadcast {a} with {b}: rank differs")
    out = []
    for da, db in zip(a, b):
        if da != db and 1 not in (da, db):
            raise ShapeError(f"cannot broadcast {a} with {b}")
        out.append(max(da, db))
    return tuple(out)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    axes = tuple(i for i, (gs, s) in enumerate(zip(g.shape, shape)) if s == 1 and gs != 1)
    return g.sum(axis=axes, keepdims=True)


def reshape(x, new_shape):
    xv = value_of(x)
    new_shape = tuple(int(d) for d in new_shape)
    if int(np.prod(new_shape)) != xv.size:
        raise ShapeError(f"cannot reshape {xv.shape} to {new_shape}")
    out = xv.reshape(new_shape)
    return _record("reshape", (x,), out, lambda g: (g.reshape(xv.shape),))


def add(a, b):
    av, bv = value_of(a), value_of(b)
    _broadcast_shape(av.shape, bv.shape)
    out = av + bv
    instrument.add_flops("add", out.size)
    return _record("add", (a, b), out,
                   lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def elem_mul(a, b):
    av, bv = value_of(a), value_of(b)
    _broadcast_shape(av.shape, bv.shape)
    out = av * bv
    instrument.add_flops("mul", out.size)
    return _record("elem_mul", (a, b), out,
                   lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)))


def scale(x, factor):
    """Multiply by a Python scalar."""
    xv = value_of(x)
    out = xv * xv.dtype.type(factor)
    instrument.add_flops("mul", out.size)
    return _record("scale", (x,), out, lambda g: (g * factor,))


def matmul(a, c):
    """Batched ``(b, m, k) @ (b, k, n)``; a batch dim of 1 broadcasts."""
    av, cv = value_of(a), value_of(c)
    if av.ndim != 3 or cv.ndim != 3:
        raise ShapeError(f"matmul expects rank-3 operands, got {av.shape} and {cv.shape}")
    if av.shape[2] != cv.shape[1]:
        raise ShapeError(f"inner dims differ: {av.shape} @ {cv.shape}")
    if av.shape[0] != cv.shape[0] and 1 not in (av.shape[0], cv.shape[0]):
        raise ShapeError(f"batch dims differ: {av.shape} @ {cv.shape}")
    out = np.matmul(av, cv)
    b, m, n = out.shape
    instrument.add_flops("matmul", b * m * n * av.shape[2])

    def vjp(g):
        ga = np.matmul(g, np.swapaxes(cv, 1, 2))
        gc = np.matmul(np.swapaxes(av, 1, 2), g)
        return _unbroadcast(ga, av.shape), _unbroadcast(gc, cv.shape)

    return _record("matmul", (a, c), out, vjp)


def sum_all(x):
    xv = value_of(x)
    out = np.asarray(xv.sum(), dtype=xv.dtype)
    return _record("sum", (x,), out, lambda g: (np.broadcast_to(g, xv.shape).copy(),))


def concat_channels(xs):
    vals = [value_of(x) for x in xs]
    if not vals:
        raise ShapeError("nothing to concatenate")
    ref = vals[0].shape
    for v in vals:
        if v.ndim != 4 or v.shape[0] != ref[0] or v.shape[2:] != ref[2:]:
            raise ShapeError(f"concat needs matching batch/spatial dims, got {[u.shape for u in vals]}")
    out = np.concatenate(vals, axis=1) if len(vals) > 1 else vals[0].copy()
    bounds = np.cumsum([0] + [v.shape[1] for v in vals])

    def vjp(g):
        return tuple(g[:, lo:hi] for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _record("concat", tuple(xs), out, vjp)


def _slice_channels(x, lo, hi):
    xv = value_of(x)
    out = xv[:, lo:hi].copy()

    def vjp(g):
        full = np.zeros_like(xv)
        full[:, lo:hi] = g
        return (full,)

    return _record("slice_channels", (x,), out, vjp)


def split_channels(x, sizes):
    xv = value_of(x)
    sizes = [int(s) for s in sizes]
    if xv.ndim != 4 or sum(sizes) != xv.shape[1] or min(sizes) <= 0:
        raise ShapeError(f"cannot split {xv.shape} into channel blocks {sizes}")
    bounds = np.cumsum([0] + sizes)
    return [_slice_channels(x, lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:])]


def shuffle_permutation(channels, groups):
    """Source channel of each output channel: the transpose-of-groups permutation."""
    if groups <= 0 or channels % groups:
        raise ShapeError(f"{channels} channels not divisible into {groups} groups")
    per = channels // groups
    c = np.arange(channels)
    return (c % groups) * per + c // groups


def shuffle_channels(x, groups):
    xv = value_of(x)
    perm = shuffle_permutation(xv.shape[1], groups)
    out = xv[:, perm]
    inv = np.argsort(perm)
    return _record("shuffle", (x,), out, lambda g: (g[:, inv],))


def is_var(x):
    return isinstance(x, Var)
