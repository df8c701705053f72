"""Opt-in hooks for counting primitive FLOPs and observing weighting factors.

Both hooks are off by default, so the inference path pays one context-variable
lookup per primitive and nothing else.
"""
from collections import defaultdict
from contextlib import contextmanager
from contextvars import ContextVar

import numpy as np

_counter = ContextVar("greit_op_counter", default=None)
_probe = ContextVar("greit_weight_probe", default=None)


class OpCounter:
    def __init__(self):
        self.by_kind = defaultdict(int)

    @property
    def total(self):
        return sum(self.by_kind.values())


@contextmanager
def count_ops():
    """Tally MACs / elementwise ops of every primitive executed in the block."""
    counter = OpCounter()
    token = _counter.set(counter)
    try:
        yield counter
    finally:
        _counter.reset(token)


def add_flops(kind, n):
    counter = _counter.get()
    if counter is not None:
        counter.by_kind[kind] += int(n)


@contextmanager
def record_weights():
    """Collect every multiplicative weight tensor produced by a weighting block.

    Yields a list of ``(kind, array)`` pairs, appended in execution order.
    """
    seen = []
    token = _probe.set(seen)
    try:
        yield seen
    finally:
        _probe.reset(token)


def observe(kind, weights):
    seen = _probe.get()
    if seen is not None:
        value = getattr(weights, "value", weights)
        seen.append((kind, np.array(value, copy=True)))
