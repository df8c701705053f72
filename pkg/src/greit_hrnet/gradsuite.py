"""Finite-difference checks for every block on small random shapes (float64).

Each case feeds the block's inputs *and* all of its parameter tensors to
:func:`finite_diff_check`, so both input and weight gradients are verified.
"""
import time
from dataclasses import dataclass

import numpy as np

from .autodiff import finite_diff_check
from .blocks import (GroupAssignment, ccw_forward, fuse_branches, gcw_forward,
                     greit_block_forward, gsw_forward, lka_forward, lks_forward,
                     make_conv, make_fuse, make_greit_block, make_gsw, make_lka,
                     make_lks, make_se, make_transition, make_transition_params,
                     se_weighting)
from .nn import conv2d
from .params import init_random, leaves, unflatten
from .tensor import concat_channels, reshape

F64 = np.float64


@dataclass
class CaseResult:
    block: str
    shape: str
    max_rel_err: float
    passed: bool
    n_checked: int
    seconds: float
    failure: str = None


def _pack(outs):
    """Flatten a list of tensors into one (1, total, 1, 1) tensor."""
    if not isinstance(outs, (list, tuple)):
        return outs
    flat = [reshape(o, (1, int(np.prod(getattr(o, "shape", None) or np.shape(o))), 1, 1))
            for o in outs]
    return concat_channels(flat)


def _bundle(fn, params, xs):
    """Wrap ``fn(xs, params)`` as ``f(*xs, *param_leaves)`` plus its initial inputs."""
    nx = len(xs)

    def f(*args):
        return _pack(fn(list(args[:nx]), unflatten(params, args[nx:])))

    return f, list(xs) + leaves(params)


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def _branches(rng, n, widths, hw):
    h, w = hw
    return [_rand(rng, n, widths[i], h >> i, w >> i) for i in range(len(widths))]


def _init(params, rng):
    return init_random(params, int(rng.integers(1 << 30)))


def case_se(rng, cfg):
    n, c, hw = cfg
    p = _init(make_se(c, 4, F64), rng)
    return _bundle(lambda xs, p: se_weighting(xs[0], p), p, [_rand(rng, n, c, *hw)])


def case_ccw(rng, cfg):
    n, widths, hw = cfg
    p = _init(make_se(sum(widths), 4, F64), rng)
    return _bundle(lambda xs, p: ccw_forward(xs, p), p, _branches(rng, n, widths, hw))


def case_gcw(rng, cfg):
    n, widths, hw = cfg
    ga = GroupAssignment()
    groups = ga.groups(len(widths))
    ps = [_init(make_se(sum(widths[i] for i in g), 4, F64), rng) for g in groups]
    if len(ps) == 1:
        ps.append(None)
    return _bundle(lambda xs, p: gcw_forward(xs, ga, p[0], p[1]), ps,
                   _branches(rng, n, widths, hw))


def case_gsw(rng, cfg):
    n, c, hw = cfg
    p = _init(make_gsw(c, 4, None, F64), rng)
    return _bundle(lambda xs, p: gsw_forward(xs[0], p), p, [_rand(rng, n, c, *hw)])


def case_lka(rng, cfg):
    n, c, hw, kernels = cfg
    p = _init(make_lka(c, kernels, F64), rng)
    return _bundle(lambda xs, p: lka_forward(xs[0], p), p, [_rand(rng, n, c, *hw)])


def case_lks(rng, cfg):
    n, stem, hw, kernels = cfg
    p = _init(make_lks(3, stem, stem, 2, kernels, F64), rng)
    return _bundle(lambda xs, p: lks_forward(xs[0], p), p, [_rand(rng, n, 3, *hw)])


def case_greit(rng, cfg):
    n, widths, hw, spatial = cfg
    p = _init(make_greit_block(widths, tuple(range(len(widths))), 2, spatial, 4, 4, (8, 2), F64), rng)
    return _bundle(lambda xs, p: greit_block_forward(xs, p), p, _branches(rng, n, widths, hw))


def case_fuse(rng, cfg):
    n, widths, hw, last = cfg
    p = _init(make_fuse(widths, last, F64), rng)
    return _bundle(lambda xs, p: fuse_branches(xs, p, is_last_stage=last), p,
                   _branches(rng, n, widths, hw))


def case_head(rng, cfg):
    n, c, k, hw = cfg
    p = _init(make_conv(c, k, 1, bias=True, dtype=F64), rng)
    return _bundle(lambda xs, p: conv2d(xs[0], p), p, [_rand(rng, n, c, *hw)])


def case_transition(rng, cfg):
    n, pre, cur, hw = cfg
    p = _init(make_transition_params(pre, cur, F64), rng)
    return _bundle(lambda xs, p: make_transition(xs, p), p, _branches(rng, n, pre, hw))


# Three tiny configurations per block.
CASES = {
    "se": (case_se, [(1, 4, (3, 3)), (2, 6, (2, 4)), (1, 8, (4, 2))]),
    "ccw": (case_ccw, [(1, (2, 4), (4, 4)), (2, (3, 2, 4), (8, 4)), (1, (2, 2, 2, 4), (8, 8))]),
    "gcw": (case_gcw, [(1, (2, 3), (4, 4)), (1, (2, 2, 4), (8, 4)), (2, (2, 2, 2, 2), (8, 8))]),
    "gsw": (case_gsw, [(1, 4, (3, 3)), (2, 6, (4, 2)), (1, 8, (2, 5))]),
    "lka": (case_lka, [(1, 2, (5, 5), (3, 3, 2)), (1, 3, (6, 4), (5, 7, 3)), (2, 2, (4, 4), (3, 5, 2))]),
    "lks": (case_lks, [(1, 4, (8, 8), (3, 3, 2)), (1, 6, (8, 4), (5, 7, 3)), (2, 4, (4, 8), (3, 5, 2))]),
    "greit": (case_greit, [(1, (4,), (4, 4), "gsw"), (1, (4, 6), (4, 4), "gsw"),
                           (2, (4, 4), (4, 4), "gap")]),
    "fuse": (case_fuse, [(1, (2, 4), (4, 4), False), (1, (2, 3, 4), (8, 8), False),
                         (1, (2, 4, 6), (8, 4), True)]),
    "head": (case_head, [(1, 4, 3, (3, 3)), (2, 3, 2, (2, 4)), (1, 6, 5, (4, 4))]),
    "transition": (case_transition, [(1, (3,), (2, 4), (4, 4)), (1, (2, 4), (2, 4, 6), (8, 8)),
                                     (2, (2, 3, 4), (2, 3, 4, 6), (8, 8))]),
}
BLOCKS = tuple(CASES)


def run_block(block, seed=0, tol=1e-4, max_elems=12):
    if block not in CASES:
        raise ValueError(f"unknown block {block!r}; choose from {', '.join(BLOCKS)} or all")
    builder, configs = CASES[block]
    results = []
    for k, cfg in enumerate(configs):
        rng = np.random.default_rng([seed, k, len(block)])
        f, inputs = builder(rng, cfg)
        t0 = time.perf_counter()
        rep = finite_diff_check(f, inputs, tol=tol, seed=seed + k, max_elems=max_elems)
        results.append(CaseResult(block, _describe(cfg), rep.max_rel_err, rep.passed,
                                  rep.n_checked, time.perf_counter() - t0, rep.failure))
    return results


def run_suite(blocks=BLOCKS, seed=0, tol=1e-4, max_elems=12):
    out = []
    for b in blocks:
        out.extend(run_block(b, seed, tol, max_elems))
    return out


def _describe(cfg):
    return " ".join(str(v).replace(" ", "") for v in cfg)


def format_table(results):
    lines = [f"{'block':<11}{'case':<28}{'max_rel_err':>12}{'checked':>9}  result"]
    for r in results:
        verdict = "PASS" if r.passed else "FAIL" + (f" ({r.failure})" if r.failure else "")
        lines.append(f"{r.block:<11}{r.shape:<28}{r.max_rel_err:>12.2e}{r.n_checked:>9}  {verdict}")
    return "\n".join(lines)
