"""Greit-HRNet-18/30 and the Lite-HRNet-18 baseline, assembled from blocks."""
import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .autodiff import value_of
from .blocks import (FuseParams, GreitBlockParams, GroupAssignment, LKSParams,
                     TransitionParams, fuse_branches, lks_forward, make_conv,
                     make_fuse, make_greit_block, make_lks,
                     make_transition_params, make_transition, weighting_layer_forward)
from .nn import Conv2dParams, conv2d
from .params import init_random, is_learned, named_tensors
from .tensor import ShapeError

COCO_FLIP_PAIRS = ((1, 2), (3, 4), (5, 6), (7, 8), (9, 10), (11, 12), (13, 14), (15, 16))


@dataclass(frozen=True)
class ArchConfig:
    variant: str = "greit18"
    stage_repetitions: tuple = (1, 2, 4, 2)   # stage 1 is the stem
    blocks_per_basic: int = 2
    widths: tuple = (40, 80, 160, 320)
    stem_width: int = 32
    in_channels: int = 3
    num_keypoints: int = 17
    weighting: str = "gcw"          # gcw | ccw
    gcw_stack: int = 2              # stacked channel-weighting modules per block
    groups: GroupAssignment = field(default_factory=GroupAssignment)
    spatial: str = "gsw"            # gsw | gap
    se_ratio: int = 8               # channel weighting SE
    spatial_ratio: int = 8          # SE inside the spatial weighting
    cprime_rule: tuple = (8, 4)     # GSW C' = max(C // divisor, minimum)
    lka_kernels: Optional[tuple] = (5, 7, 3)   # (dw k, dilated k, dilation); None: no LKA
    stem_expand: float = 2.0

    def __post_init__(self):
        reps = tuple(self.stage_repetitions)
        if len(reps) != 4 or reps[0] != 1 or min(reps) < 1:
            raise ValueError(f"stage repetitions must be (1, r2, r3, r4), got {reps}")
        w = tuple(self.widths)
        if len(w) != 4 or any(b != 2 * a for a, b in zip(w, w[1:])) or min(w) < 2:
            raise ValueError(f"widths must double across four branches, got {w}")
        if self.weighting not in ("gcw", "ccw") or self.spatial not in ("gsw", "gap"):
            raise ValueError(f"unknown block kinds {self.weighting}/{self.spatial}")
        if self.blocks_per_basic < 1 or self.gcw_stack < 1 or self.stem_width < 2:
            raise ValueError("block counts and stem width must be positive")

    @property
    def stage_widths(self):
        return [tuple(self.widths[:s + 2]) for s in range(3)]

    def branch_groups(self, n_branches):
        if self.weighting == "ccw":
            return [tuple(range(n_branches))]
        return self.groups.groups(n_branches)


VARIANTS = {
    "greit18": ArchConfig(),
    "greit30": ArchConfig(variant="greit30", stage_repetitions=(1, 3, 8, 3)),
    "lite18": ArchConfig(variant="lite18", weighting="ccw", gcw_stack=1, spatial="gap",
                         spatial_ratio=4, lka_kernels=None, stem_expand=1.0),
    "lite30": ArchConfig(variant="lite30", stage_repetitions=(1, 3, 8, 3), weighting="ccw",
                         gcw_stack=1, spatial="gap", spatial_ratio=4, lka_kernels=None,
                         stem_expand=1.0),
}


def arch_config(variant, **overrides):
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    return dataclasses.replace(VARIANTS[variant], **overrides)


@dataclass
class ModuleParams:
    """A basic block: ``blocks_per_basic`` weighting layers, then fusion."""
    blocks: List[List[GreitBlockParams]]
    fuse: FuseParams


@dataclass
class StageParams:
    transition: TransitionParams
    modules: List[ModuleParams]


@dataclass
class Network:
    stem: LKSParams
    stages: List[StageParams]
    head: Conv2dParams
    config: ArchConfig = field(default_factory=ArchConfig)

    @property
    def dtype(self):
        return value_of(self.head.weight).dtype


def build_network(cfg: ArchConfig, init="zero", seed=0, dtype=np.float32):
    """Deterministic topology; ``init`` is ``"zero"`` or ``"random"`` (seeded)."""
    stem = make_lks(cfg.in_channels, cfg.stem_width, cfg.stem_width, cfg.stem_expand,
                    cfg.lka_kernels, dtype)
    stages = []
    pre = (cfg.stem_width,)
    for s, widths in enumerate(cfg.stage_widths):
        reps = cfg.stage_repetitions[s + 1]
        modules = []
        for m in range(reps):
            last = s == 2 and m == reps - 1
            layers = []
            for _ in range(cfg.blocks_per_basic):
                layers.append([
                    make_greit_block([widths[i] for i in g], g, cfg.gcw_stack, cfg.spatial,
                                     cfg.se_ratio, cfg.spatial_ratio, tuple(cfg.cprime_rule), dtype)
                    for g in cfg.branch_groups(len(widths))
                ])
            modules.append(ModuleParams(layers, make_fuse(widths, last, dtype)))
        stages.append(StageParams(make_transition_params(pre, widths, dtype), modules))
        pre = widths
    head = make_conv(cfg.widths[0], cfg.num_keypoints, 1, bias=True, dtype=dtype)
    net = Network(stem, stages, head, cfg)
    if init == "random":
        init_random(net, seed)
    elif init != "zero":
        raise ValueError(f"unknown init {init!r}")
    return net


def forward_branches(net: Network, x):
    """Run stem and all stages; returns the final BranchSet."""
    h, w = value_of(x).shape[2:]
    if h % 32 or w % 32:
        raise ShapeError(f"input {h}x{w} must be divisible by 32")
    branches = [lks_forward(x, net.stem)]
    for s, stage in enumerate(net.stages):
        branches = make_transition(branches, stage.transition)
        for m, module in enumerate(stage.modules):
            for layer in module.blocks:
                branches = weighting_layer_forward(branches, layer)
            last = s == len(net.stages) - 1 and m == len(stage.modules) - 1
            branches = fuse_branches(branches, module.fuse, is_last_stage=last)
    return branches


def forward(net: Network, x):
    """Heatmap logits at a quarter of the input resolution."""
    x_val = value_of(x)
    if x_val.ndim != 4 or x_val.shape[1] != net.config.in_channels:
        raise ShapeError(f"expected (N, {net.config.in_channels}, H, W) input, got {x_val.shape}")
    return conv2d(forward_branches(net, x)[0], net.head)


def named_parameters(net: Network, learned_only=False):
    """All tensors (including BN running stats and epsilon), sorted by name."""
    items = sorted(named_tensors(net), key=lambda kv: kv[0])
    if learned_only:
        items = [(k, v) for k, v in items if is_learned(k)]
    return items
