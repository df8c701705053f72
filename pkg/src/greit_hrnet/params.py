"""Walking nested parameter structures by hierarchical dotted names.

A parameter tree is any nesting of dataclasses and lists whose leaves are
arrays.  Names are built from field names and list indices, e.g.
``stages.0.modules.1.fuse.paths.0.1.0.conv.weight``.
"""
import dataclasses
import zlib

import numpy as np

from .autodiff import Var
from .nn import BatchNormParams

BUFFER_SUFFIXES = ("running_mean", "running_var", "eps")


def is_learned(name):
    return not name.endswith(BUFFER_SUFFIXES)


def _is_leaf(v):
    return isinstance(v, (np.ndarray, Var))


def _children(node):
    if dataclasses.is_dataclass(node) and not isinstance(node, type):
        for f in dataclasses.fields(node):
            yield f.name, getattr(node, f.name)
    elif isinstance(node, (list, tuple)):
        for i, v in enumerate(node):
            yield str(i), v


def named_tensors(tree, prefix=""):
    """Yield ``(name, array)`` in traversal order, BN epsilon as a 0-d buffer."""
    for key, value in _children(tree):
        name = f"{prefix}.{key}" if prefix else key
        if _is_leaf(value):
            yield name, value
        elif isinstance(tree, BatchNormParams) and key == "eps":
            yield name, np.asarray(value, dtype=np.float32)
        elif dataclasses.is_dataclass(value) or isinstance(value, (list, tuple)):
            yield from named_tensors(value, name)


def tree_map(fn, tree):
    """Rebuild ``tree`` with every array leaf replaced by ``fn(leaf)``."""
    if _is_leaf(tree):
        return fn(tree)
    if dataclasses.is_dataclass(tree) and not isinstance(tree, type):
        changes = {}
        for f in dataclasses.fields(tree):
            v = getattr(tree, f.name)
            if _is_leaf(v) or dataclasses.is_dataclass(v) or isinstance(v, (list, tuple)):
                changes[f.name] = tree_map(fn, v)
        return dataclasses.replace(tree, **changes)
    if isinstance(tree, (list, tuple)):
        return type(tree)(tree_map(fn, v) for v in tree)
    return tree


def leaves(tree):
    out = []
    tree_map(lambda v: out.append(v) or v, tree)
    return out


def unflatten(tree, new_leaves):
    """Inverse of :func:`leaves`: substitute leaves in traversal order."""
    it = iter(new_leaves)
    out = tree_map(lambda _: next(it), tree)
    if next(it, None) is not None:
        raise ValueError("too many leaves for tree")
    return out


def _resolve(tree, parts):
    node = tree
    for p in parts:
        node = node[int(p)] if isinstance(node, (list, tuple)) else getattr(node, p)
    return node


def set_tensor(tree, name, value):
    """Overwrite the tensor at ``name`` in place, keeping its dtype."""
    *parents, last = name.split(".")
    owner = _resolve(tree, parents)
    if isinstance(owner, BatchNormParams) and last == "eps":
        owner.eps = float(np.asarray(value).reshape(()))
        return
    current = _resolve(owner, [last])
    value = np.asarray(value)
    if value.shape != current.shape:
        raise ValueError(f"{name}: shape {value.shape} != {current.shape}")
    if isinstance(owner, list):
        owner[int(last)] = value.astype(current.dtype)
    else:
        setattr(owner, last, value.astype(current.dtype))


def init_random(tree, seed=0):
    """Seeded in-place init; each tensor draws from a stream keyed by its name.

    Conv weights are centered uniform with fan-in scaling; BN statistics stay
    near identity so deep stacks keep a sane dynamic range.
    """
    for name, value in list(named_tensors(tree)):
        if name.endswith(".eps"):
            continue
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        shape, dtype = value.shape, value.dtype
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "weight":
            bound = 1.0 / np.sqrt(max(int(np.prod(shape[1:])), 1))
            new = rng.uniform(-bound, bound, shape)
        elif leaf in ("gamma", "running_var"):
            new = rng.uniform(0.5, 1.5, shape)
        else:  # bias, beta, running_mean
            new = rng.uniform(-0.1, 0.1, shape)
        set_tensor(tree, name, new.astype(dtype))
    return tree
