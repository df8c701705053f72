"""Building blocks: SE gating, cross-resolution and grouped channel weighting,
global spatial weighting, large kernel attention, the stem, the Greit block,
branch fusion and stage transitions.

A BranchSet is a plain list of NCHW tensors; branch ``i`` runs at
``1 / 2**i`` of branch 0's resolution.
"""
from dataclasses import dataclass
from typing import List, Optional, Union

import numpy as np

from . import instrument
from .autodiff import value_of
from .nn import (BatchNormParams, Conv2dParams, ConvBNAct, adaptive_avg_pool,
                 conv2d, conv_bn_act, global_avg_pool, relu, sigmoid,
                 upsample_nearest)
from .tensor import (ShapeError, concat_channels, elem_mul, matmul, reshape,
                     shuffle_channels, split_channels, add)


# ---------------------------------------------------------------- parameters

@dataclass
class SEParams:
    reduce: Conv2dParams   # 1x1, C -> max(C // r, 1), with bias
    expand: Conv2dParams   # 1x1, back to C, with bias

    @property
    def channels(self):
        return self.reduce.in_channels


@dataclass
class GSWParams:
    to_cprime: Conv2dParams   # 1x1, C -> C'
    to_one: Conv2dParams      # 1x1, C' -> 1
    se: SEParams              # over the C-vector of global spatial responses


@dataclass
class GAPWeightingParams:
    """Pooled spatial weighting used by the Lite-HRNet baseline."""
    se: SEParams


@dataclass
class LKAParams:
    dw: Conv2dParams    # depthwise k x k
    dwd: Conv2dParams   # depthwise dilated
    pw: Conv2dParams    # 1x1


@dataclass
class LKSParams:
    stem_conv: ConvBNAct          # 3x3 stride 2, 3 -> stem width
    lka: Optional[LKAParams]      # None for the baseline stem
    a_dw: ConvBNAct               # 3x3 depthwise stride 2 + BN
    a_pw: ConvBNAct               # 1x1 + BN + ReLU
    b_expand: ConvBNAct           # 1x1 expand + BN + ReLU
    b_dw: ConvBNAct               # 3x3 depthwise stride 2 + BN
    b_restore: ConvBNAct          # 1x1 restore + BN + ReLU


@dataclass
class GreitBlockParams:
    """One weighting block over a branch group.

    ``weighting`` holds the stacked channel-weighting SE parameters shared by
    the group; ``dw`` and ``spatial`` are per branch.
    """
    branches: tuple
    weighting: List[SEParams]
    dw: List[ConvBNAct]
    spatial: List[Union[GSWParams, GAPWeightingParams]]


@dataclass
class FusePath:
    layers: List[ConvBNAct]
    upsample: int = 1


@dataclass
class RefineParams:
    dw: ConvBNAct
    pw: ConvBNAct


@dataclass
class FuseParams:
    paths: List[List[Optional[FusePath]]]
    refine: Optional[List[RefineParams]] = None


@dataclass
class TransitionParams:
    adapt: List[Optional[List[ConvBNAct]]]
    new: List[ConvBNAct]


@dataclass(frozen=True)
class GroupAssignment:
    high: tuple = (0, 1)
    low: tuple = (2, 3)

    def groups(self, n_branches):
        """Non-empty groups restricted to the branches that exist."""
        out = []
        for g in (self.high, self.low):
            members = tuple(i for i in g if i < n_branches)
            if members:
                out.append(members)
        covered = sorted(i for g in out for i in g)
        if covered != list(range(n_branches)):
            raise ValueError(f"groups {out} do not partition {n_branches} branches")
        return out


# ------------------------------------------------------------------ forward

def se_weights(x, p: SEParams):
    """``sigmoid(expand(relu(reduce(x))))``, evaluated per pixel."""
    if value_of(x).shape[1] != p.channels:
        raise ShapeError(f"SE expects {p.channels} channels, got {value_of(x).shape[1]}")
    return sigmoid(conv2d(relu(conv2d(x, p.reduce)), p.expand))


def se_weighting(x, p: SEParams):
    w = se_weights(x, p)
    instrument.observe("se", w)
    return elem_mul(x, w)


def _ratio(branch, lowest):
    (h, w), (lh, lw) = value_of(branch).shape[2:], value_of(lowest).shape[2:]
    if min(h, w, lh, lw) < 1 or h % lh or w % lw or h // lh != w // lw:
        raise ShapeError(f"branch {h}x{w} is not an integer multiple of {lh}x{lw}")
    return h // lh


def ccw_forward(branches, p: SEParams):
    """Cross-resolution conditional channel weighting.

    All branches are pooled to the lowest resolution and concatenated; SE
    weights computed per pixel there are split back and nearest-upsampled
    onto their branches.
    """
    if not branches:
        raise ShapeError("channel weighting needs at least one branch")
    lowest = branches[-1]
    low_hw = value_of(lowest).shape[2:]
    scales = [_ratio(b, lowest) for b in branches]
    pooled = [adaptive_avg_pool(b, low_hw) for b in branches[:-1]] + [lowest]
    z = concat_channels(pooled)
    w = se_weights(z, p)
    parts = split_channels(w, [value_of(b).shape[1] for b in branches])
    out = []
    for b, part, s in zip(branches, parts, scales):
        wb = upsample_nearest(part, s)
        instrument.observe("ccw", wb)
        out.append(elem_mul(b, wb))
    return out


def gcw_forward(branches, ga: GroupAssignment, p_high: SEParams, p_low: Optional[SEParams]):
    """Grouped channel weighting: cross-resolution weighting inside each group only."""
    if not branches:
        raise ShapeError("grouped weighting needs at least one branch")
    out = list(branches)
    for members, p in zip(ga.groups(len(branches)), (p_high, p_low)):
        res = ccw_forward([branches[i] for i in members], p)
        for i, r in zip(members, res):
            out[i] = r
    return out


def gsw_forward(x, p: GSWParams):
    """Global spatial weighting.

    A one-channel saliency map ``Z`` (HW x 1) is matrix-multiplied with the
    flattened features (C x HW), giving one global response per channel; SE
    on that C-vector yields the per-channel weights applied to ``x``.
    """
    n, c, h, w = value_of(x).shape
    if p.to_cprime.in_channels != c:
        raise ShapeError(f"GSW expects {p.to_cprime.in_channels} channels, got {c}")
    flat = reshape(x, (n, c, h * w))
    saliency = sigmoid(conv2d(relu(conv2d(x, p.to_cprime)), p.to_one))
    z = reshape(saliency, (n, h * w, 1))
    y = reshape(matmul(flat, z), (n, c, 1, 1))
    wts = se_weights(y, p.se)
    instrument.observe("gsw", wts)
    return elem_mul(x, wts)


def gap_weighting(x, p: GAPWeightingParams):
    """Baseline spatial weighting: SE over the globally averaged features."""
    wts = se_weights(global_avg_pool(x), p.se)
    instrument.observe("gap", wts)
    return elem_mul(x, wts)


def spatial_weighting(x, p):
    if isinstance(p, GSWParams):
        return gsw_forward(x, p)
    return gap_weighting(x, p)


def lka_forward(x, p: LKAParams):
    attn = conv2d(conv2d(conv2d(x, p.dw), p.dwd), p.pw)
    if value_of(attn).shape != value_of(x).shape:
        raise ShapeError(f"LKA changed shape {value_of(x).shape} -> {value_of(attn).shape}")
    return elem_mul(attn, x)


def lks_forward(x, p: LKSParams):
    """Stem: 4x downsampling through a two-path split/concat/shuffle block."""
    h, w = value_of(x).shape[2:]
    if h % 4 or w % 4:
        raise ShapeError(f"stem input {h}x{w} must be divisible by 4")
    y = conv_bn_act(x, p.stem_conv)
    half = value_of(y).shape[1] // 2
    a, b = split_channels(y, [half, value_of(y).shape[1] - half])
    if p.lka is not None:
        a = lka_forward(a, p.lka)
    a = conv_bn_act(conv_bn_act(a, p.a_dw), p.a_pw)
    b = conv_bn_act(conv_bn_act(conv_bn_act(b, p.b_expand), p.b_dw), p.b_restore)
    return shuffle_channels(concat_channels([a, b]), 2)


def greit_block_forward(branches, p: GreitBlockParams):
    """Shuffle-style block over one branch group (all branches for the baseline).

    Each branch keeps half its channels untouched; the other halves go
    through the shared channel weighting, a 3x3 depthwise conv and the
    branch's spatial weighting before concat and shuffle.
    """
    if len(branches) != len(p.dw):
        raise ShapeError(f"block built for {len(p.dw)} branches, got {len(branches)}")
    kept, active = [], []
    for b in branches:
        c = value_of(b).shape[1]
        k, a = split_channels(b, [c // 2, c - c // 2])
        kept.append(k)
        active.append(a)
    for se in p.weighting:
        active = ccw_forward(active, se)
    active = [spatial_weighting(conv_bn_act(a, dw), sw)
              for a, dw, sw in zip(active, p.dw, p.spatial)]
    return [shuffle_channels(concat_channels([k, a]), 2) for k, a in zip(kept, active)]


def weighting_layer_forward(branches, blocks: List[GreitBlockParams]):
    out = list(branches)
    for blk in blocks:
        res = greit_block_forward([branches[i] for i in blk.branches], blk)
        for i, r in zip(blk.branches, res):
            out[i] = r
    return out


def _run_layers(x, layers):
    for layer in layers:
        x = conv_bn_act(x, layer)
    return x


def fuse_branches(branches, p: FuseParams, is_last_stage=False):
    """Exchange information across branches by resample-and-add.

    Output branch ``j`` sums every input resampled to its shape, then ReLU.
    In the last stage each branch, from the lowest resolution upward, adds
    the upsampled refined result of the branch below and passes through a
    3x3 depthwise-separable conv; branch ``j > 0`` then carries the width of
    branch ``j - 1``, and only branch 0 is meant to be consumed.
    """
    if len(branches) < 2:
        raise ShapeError("fusion needs at least two branches")
    if len(p.paths) != len(branches):
        raise ShapeError(f"fusion built for {len(p.paths)} branches, got {len(branches)}")
    fused = []
    for j, row in enumerate(p.paths):
        total = None
        for i, path in enumerate(row):
            contrib = branches[i]
            if path is not None:
                contrib = _run_layers(contrib, path.layers)
                if path.upsample > 1:
                    contrib = upsample_nearest(contrib, path.upsample)
            if value_of(contrib).shape != value_of(branches[j]).shape:
                raise ShapeError(f"fusion path {i}->{j} yields {value_of(contrib).shape}")
            total = contrib if total is None else add(total, contrib)
        fused.append(relu(total))
    if not is_last_stage:
        return fused
    if p.refine is None:
        raise ShapeError("last-stage fusion needs refinement convs")
    out = [None] * len(fused)
    below = None
    for j in range(len(fused) - 1, -1, -1):
        s = fused[j]
        if below is not None:
            s = add(s, upsample_nearest(below, 2))
        below = conv_bn_act(conv_bn_act(s, p.refine[j].dw), p.refine[j].pw)
        out[j] = below
    return out


def make_transition(branches, p: TransitionParams):
    """Adapt existing branch widths and spawn one half-resolution branch."""
    if len(branches) >= 4:
        raise ShapeError("already at four branches")
    if len(p.adapt) != len(branches):
        raise ShapeError(f"transition built for {len(p.adapt)} branches, got {len(branches)}")
    out = [b if layers is None else _run_layers(b, layers)
           for b, layers in zip(branches, p.adapt)]
    out.append(_run_layers(branches[-1], p.new))
    return out


# ------------------------------------------------------------------ builders

def _zeros(shape, dtype):
    return np.zeros(shape, dtype=dtype)


def make_conv(cin, cout, k=1, stride=1, padding=None, dilation=1, groups=1, bias=False,
              dtype=np.float32):
    if padding is None:
        padding = dilation * (k - 1) // 2
    return Conv2dParams(_zeros((cout, cin // groups, k, k), dtype),
                        _zeros((cout,), dtype) if bias else None,
                        stride=stride, padding=padding, dilation=dilation, groups=groups)


def make_bn(c, dtype=np.float32, eps=1e-5):
    return BatchNormParams(_zeros((c,), dtype), _zeros((c,), dtype),
                           _zeros((c,), dtype), _zeros((c,), dtype), eps)


def make_layer(cin, cout, k=1, stride=1, groups=1, act=None, dtype=np.float32):
    """Bias-free conv followed by BN and optional activation."""
    return ConvBNAct(make_conv(cin, cout, k, stride, groups=groups, dtype=dtype),
                     make_bn(cout, dtype), act)


def make_dw(c, stride=1, dtype=np.float32):
    return make_layer(c, c, 3, stride, groups=c, dtype=dtype)


def se_hidden(c, ratio):
    return max(c // ratio, 1)


def gsw_cprime(c, divisor=8, minimum=4):
    return max(c // divisor, minimum)


def make_se(c, ratio=8, dtype=np.float32):
    h = se_hidden(c, ratio)
    return SEParams(make_conv(c, h, bias=True, dtype=dtype), make_conv(h, c, bias=True, dtype=dtype))


def make_gsw(c, ratio=8, cprime=None, dtype=np.float32):
    cp = gsw_cprime(c) if cprime is None else cprime
    if cp < 1:
        raise ValueError("C' must be positive")
    return GSWParams(make_conv(c, cp, bias=True, dtype=dtype),
                     make_conv(cp, 1, bias=True, dtype=dtype),
                     make_se(c, ratio, dtype))


def make_gap_weighting(c, ratio=4, dtype=np.float32):
    return GAPWeightingParams(make_se(c, ratio, dtype))


def make_lka(c, kernels=(5, 7, 3), dtype=np.float32):
    k_dw, k_dwd, dil = kernels
    return LKAParams(make_conv(c, c, k_dw, groups=c, bias=True, dtype=dtype),
                     make_conv(c, c, k_dwd, dilation=dil, groups=c, bias=True, dtype=dtype),
                     make_conv(c, c, 1, bias=True, dtype=dtype))


def lka_receptive_field(kernels=(5, 7, 3)):
    """Receptive field of the depthwise -> dilated depthwise chain (stride 1)."""
    k_dw, k_dwd, dil = kernels
    r = 1
    for k, d in ((k_dw, 1), (k_dwd, dil)):
        r += (k - 1) * d
    return r


def make_lks(in_ch=3, stem=32, out=None, expand=2, lka_kernels=(5, 7, 3), dtype=np.float32):
    out = stem if out is None else out
    half = stem // 2
    mid = int(round(half * expand))
    a_out = out - (stem - half)
    return LKSParams(
        stem_conv=make_layer(in_ch, stem, 3, 2, act="relu", dtype=dtype),
        lka=None if lka_kernels is None else make_lka(half, lka_kernels, dtype),
        a_dw=make_dw(half, 2, dtype),
        a_pw=make_layer(half, a_out, act="relu", dtype=dtype),
        b_expand=make_layer(stem - half, mid, act="relu", dtype=dtype),
        b_dw=make_dw(mid, 2, dtype),
        b_restore=make_layer(mid, stem - half, act="relu", dtype=dtype),
    )


def make_greit_block(widths, branch_ids, stack=2, spatial="gsw", se_ratio=8, spatial_ratio=8,
                     cprime_rule=(8, 4), dtype=np.float32):
    """Parameters for one group block; ``widths`` are the group's full branch widths."""
    active = [w - w // 2 for w in widths]
    total = sum(active)
    if spatial == "gsw":
        spatial_params = [make_gsw(c, spatial_ratio, gsw_cprime(c, *cprime_rule), dtype)
                          for c in active]
    elif spatial == "gap":
        spatial_params = [make_gap_weighting(c, spatial_ratio, dtype) for c in active]
    else:
        raise ValueError(f"unknown spatial weighting {spatial!r}")
    return GreitBlockParams(
        branches=tuple(branch_ids),
        weighting=[make_se(total, se_ratio, dtype) for _ in range(stack)],
        dw=[make_dw(c, 1, dtype) for c in active],
        spatial=spatial_params,
    )


def make_fuse(widths, last=False, dtype=np.float32):
    n = len(widths)
    paths = []
    for j in range(n):
        row = []
        for i in range(n):
            if i == j:
                row.append(None)
            elif i > j:
                row.append(FusePath([make_layer(widths[i], widths[j], dtype=dtype)], 2 ** (i - j)))
            else:
                layers = []
                for step in range(j - i):
                    final = step == j - i - 1
                    layers.append(make_dw(widths[i], 2, dtype))
                    layers.append(make_layer(widths[i], widths[j] if final else widths[i],
                                             act=None if final else "relu", dtype=dtype))
                row.append(FusePath(layers))
        paths.append(row)
    refine = None
    if last:
        refine = [RefineParams(make_dw(w, 1, dtype),
                               make_layer(w, widths[j - 1] if j else w, act="relu", dtype=dtype))
                  for j, w in enumerate(widths)]
    return FuseParams(paths, refine)


def make_transition_params(pre_widths, cur_widths, dtype=np.float32):
    if len(cur_widths) != len(pre_widths) + 1:
        raise ValueError("a transition adds exactly one branch")
    adapt = []
    for p, c in zip(pre_widths, cur_widths):
        adapt.append(None if p == c else [make_dw(p, 1, dtype), make_layer(p, c, act="relu", dtype=dtype)])
    src = pre_widths[-1]
    new = [make_dw(src, 2, dtype), make_layer(src, cur_widths[-1], act="relu", dtype=dtype)]
    return TransitionParams(adapt, new)
