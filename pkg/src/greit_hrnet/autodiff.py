"""Tape-based reverse-mode differentiation for verifying kernel gradients.

Only the verification paths build a :class:`Tape`; inference calls the same
primitives on plain arrays and never allocates one.  A primitive that sees a
:class:`Var` among its inputs records a node holding its output value and a
vector-Jacobian product closure.
"""
from dataclasses import dataclass

import numpy as np


class TapeError(RuntimeError):
    pass


class Var:
    """Handle to one node of a tape."""

    __slots__ = ("tape", "id")

    def __init__(self, tape, node_id):
        self.tape = tape
        self.id = node_id

    @property
    def value(self):
        return self.tape.values[self.id]

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def grad(self):
        if self.tape.grads is None:
            return None
        return self.tape.grads[self.id]

    def __repr__(self):
        return f"Var(id={self.id}, op={self.tape.ops[self.id]!r}, shape={self.shape})"


class Tape:
    """Append-only record of ``(op, input ids, value, vjp)``.

    Node ids are list positions, so every input id precedes its consumer.
    """

    def __init__(self):
        self.ops = []
        self.inputs = []
        self.values = []
        self.vjps = []
        self.grads = None

    def __len__(self):
        return len(self.ops)

    def leaf(self, value):
        return self._append("leaf", (), np.asarray(value), None)

    def record(self, op, inputs, value, vjp):
        """Append an op node.

        ``inputs`` may mix Vars and constants; ``vjp(g)`` must return one
        gradient (or None) per entry of ``inputs``.
        """
        ids = []
        for x in inputs:
            if isinstance(x, Var):
                if x.tape is not self:
                    raise TapeError("inputs recorded on different tapes")
                ids.append(x.id)
            else:
                ids.append(None)
        return self._append(op, tuple(ids), value, vjp)

    def _append(self, op, ids, value, vjp):
        self.ops.append(op)
        self.inputs.append(ids)
        self.values.append(value)
        self.vjps.append(vjp)
        return Var(self, len(self.ops) - 1)


def tape_of(*xs):
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is None:
                tape = x.tape
            elif x.tape is not tape:
                raise TapeError("inputs recorded on different tapes")
    return tape


def value_of(x):
    return x.value if isinstance(x, Var) else x


def backward(tape, output, seed=None):
    """Reverse-accumulate gradients of ``output`` into ``tape.grads``.

    ``output`` must be scalar unless ``seed`` (an array of its shape) is given.
    Returns the per-node gradient list; unreachable nodes hold None.
    """
    out_id = output.id if isinstance(output, Var) else output
    if not isinstance(out_id, (int, np.integer)) or not 0 <= out_id < len(tape):
        raise TapeError(f"unknown node {output!r}")
    out_value = tape.values[out_id]
    if seed is None:
        if out_value.size != 1:
            raise TapeError("backward from a non-scalar output needs a seed gradient")
        seed = np.ones_like(out_value)
    seed = np.asarray(seed, dtype=out_value.dtype)
    if seed.shape != out_value.shape:
        raise TapeError(f"seed shape {seed.shape} != output shape {out_value.shape}")

    grads = [None] * len(tape)
    grads[out_id] = seed
    for node in range(out_id, -1, -1):
        g = grads[node]
        if g is None or tape.vjps[node] is None:
            continue
        parent_grads = tape.vjps[node](g)
        for pid, pg in zip(tape.inputs[node], parent_grads):
            if pid is None or pg is None:
                continue
            if pid >= node:
                raise TapeError(f"node {node} consumes later node {pid}")
            pg = np.asarray(pg, dtype=tape.values[pid].dtype)
            if pg.shape != tape.values[pid].shape:
                raise TapeError(
                    f"{tape.ops[node]} produced grad {pg.shape} for input of shape "
                    f"{tape.values[pid].shape}"
                )
            grads[pid] = pg if grads[pid] is None else grads[pid] + pg
    tape.grads = grads
    return grads


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    tol: float
    n_checked: int
    worst: tuple = None  # (input index, flat index, analytic, numeric)
    failure: str = None

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        text = f"{status} max_rel_err={self.max_rel_err:.3e} (tol {self.tol:g}, {self.n_checked} elems)"
        if self.failure:
            text += f": {self.failure}"
        return text


def _projection(shape, rng):
    return rng.standard_normal(shape)


def finite_diff_check(f, inputs, eps=1e-5, tol=1e-4, seed=0, max_elems=None):
    """Compare tape gradients of ``f`` against central differences.

    ``f`` maps arrays (or Vars) to one array.  It is reduced to a scalar by a
    fixed random projection so every output element contributes.  Relative
    error per element is ``|a - n| / max(|a|, |n|, 1e-8)``.  With
    ``max_elems`` set, a seeded subset of each input's elements is probed.
    """
    rng = np.random.default_rng(seed)
    inputs = [np.array(x, dtype=np.float64) for x in inputs]

    tape = Tape()
    leaves = [tape.leaf(x) for x in inputs]
    out = f(*leaves)
    if not isinstance(out, Var):
        return GradCheckReport(float("inf"), False, tol, 0, failure="output does not depend on inputs")
    for node, value in enumerate(tape.values):
        if not np.all(np.isfinite(value)):
            return GradCheckReport(
                float("inf"), False, tol, 0,
                failure=f"non-finite value at node {node} ({tape.ops[node]})",
            )
    weights = _projection(out.shape, rng)
    backward(tape, out, seed=weights)
    analytic = [
        leaf.grad if leaf.grad is not None else np.zeros_like(x)
        for leaf, x in zip(leaves, inputs)
    ]

    def loss(args):
        return float(np.sum(np.asarray(f(*args)) * weights))

    worst_err, worst, checked = 0.0, None, 0
    for k, x in enumerate(inputs):
        flat_ids = np.arange(x.size)
        if max_elems is not None and x.size > max_elems:
            flat_ids = np.sort(rng.choice(x.size, size=max_elems, replace=False))
        for idx in flat_ids:
            args = [a.copy() for a in inputs]
            flat = args[k].reshape(-1)
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss(args)
            flat[idx] = orig - eps
            down = loss(args)
            numeric = (up - down) / (2 * eps)
            if not np.isfinite(numeric):
                return GradCheckReport(
                    float("inf"), False, tol, checked,
                    failure=f"non-finite difference at input {k}, element {idx}",
                )
            a = float(analytic[k].reshape(-1)[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            checked += 1
            if err > worst_err or worst is None:
                worst_err, worst = err, (k, int(idx), a, numeric)
    return GradCheckReport(worst_err, worst_err < tol, tol, checked, worst)
