"""Analytical parameter and FLOP accounting.

FLOPs are multiply-accumulates: a conv costs ``out_elems * kH * kW * in/groups``,
a batched matmul ``b * m * n * k``, and every elementwise, activation, norm,
pooling or resampling op one per output element.  Reshape, split, concat and
shuffle are free.  The walk below mirrors the forward pass shape by shape;
``tests/test_accounting.py`` cross-checks it against instrumented execution.
"""
import json
from dataclasses import dataclass, field, asdict
from typing import List

import numpy as np

from .blocks import GSWParams, GroupAssignment
from .network import Network, arch_config, build_network, named_parameters
from .nn import ConvBNAct, _pair


@dataclass
class CostRow:
    name: str
    kind: str
    params: int
    flops: int


@dataclass
class CostReport:
    rows: List[CostRow]
    input_hw: tuple
    batch: int = 1
    trajectory: List[dict] = field(default_factory=list)
    buffers: int = 0

    @property
    def total_params(self):
        return sum(r.params for r in self.rows)

    @property
    def total_flops(self):
        return sum(r.flops for r in self.rows)

    def flops_by_kind(self):
        out = {}
        for r in self.rows:
            out[r.kind] = out.get(r.kind, 0) + r.flops
        return out

    def to_dict(self, per_layer=False):
        d = {
            "input_hw": list(self.input_hw),
            "batch": self.batch,
            "total_params": self.total_params,
            "total_buffers": self.buffers,
            "total_flops": self.total_flops,
            "params_m": round(self.total_params / 1e6, 4),
            "gflops": round(self.total_flops / 1e9, 4),
            "flops_by_kind": self.flops_by_kind(),
            "trajectory": self.trajectory,
        }
        if per_layer:
            d["rows"] = [asdict(r) for r in self.rows]
        return d

    def to_json(self, per_layer=False):
        return json.dumps(self.to_dict(per_layer), indent=2, sort_keys=True)

    def to_text(self, per_layer=False):
        lines = []
        if per_layer:
            width = max(len(r.name) for r in self.rows) + 2
            lines.append(f"{'layer':<{width}}{'kind':<10}{'params':>10}{'flops':>14}")
            for r in self.rows:
                lines.append(f"{r.name:<{width}}{r.kind:<10}{r.params:>10}{r.flops:>14}")
            lines.append("")
        h, w = self.input_hw
        lines.append(f"input        {h}x{w} (batch {self.batch})")
        lines.append(f"params       {self.total_params} ({self.total_params / 1e6:.3f} M)")
        lines.append(f"BN buffers   {self.buffers}")
        lines.append(f"FLOPs (MAC)  {self.total_flops} ({self.total_flops / 1e9:.3f} G)")
        for t in self.trajectory:
            lines.append(f"stage {t['stage']} {t['group']:<5} concat channels {t['channels']}")
        return "\n".join(lines)


class _Walker:
    def __init__(self):
        self.rows = []

    def add(self, name, kind, params=0, flops=0):
        self.rows.append(CostRow(name, kind, int(params), int(flops)))

    def conv(self, name, p, shape):
        n, c, h, w = shape
        w_arr = np.asarray(p.weight)
        o, cg, kh, kw = w_arr.shape
        ho, wo = p.output_hw(h, w)
        params = w_arr.size + (0 if p.bias is None else np.asarray(p.bias).size)
        self.add(name, "conv", params, n * o * ho * wo * kh * kw * cg)
        return (n, o, ho, wo)

    def elementwise(self, name, kind, shape):
        self.add(name, kind, 0, int(np.prod(shape)))
        return shape

    def layer(self, name, layer: ConvBNAct, shape):
        shape = self.conv(f"{name}.conv", layer.conv, shape)
        if layer.bn is not None:
            self.add(f"{name}.bn", "bn", 2 * shape[1], int(np.prod(shape)))
        if layer.act is not None:
            self.elementwise(f"{name}:{layer.act}", "act", shape)
        return shape

    def layers(self, name, layers, shape):
        for k, layer in enumerate(layers):
            shape = self.layer(f"{name}.{k}", layer, shape)
        return shape

    def se_weights(self, name, p, shape):
        s = self.conv(f"{name}.reduce", p.reduce, shape)
        self.elementwise(f"{name}:relu", "act", s)
        s = self.conv(f"{name}.expand", p.expand, s)
        return self.elementwise(f"{name}:sigmoid", "act", s)

    def ccw(self, name, p, shapes):
        n, _, lh, lw = shapes[-1]
        for k, s in enumerate(shapes[:-1]):
            self.elementwise(f"{name}:pool{k}", "pool", (n, s[1], lh, lw))
        self.se_weights(name, p, (n, sum(s[1] for s in shapes), lh, lw))
        for k, s in enumerate(shapes):
            self.elementwise(f"{name}:upsample{k}", "resample", s)
            self.elementwise(f"{name}:mul{k}", "mul", s)
        return shapes

    def spatial(self, name, p, shape):
        n, c, h, w = shape
        if isinstance(p, GSWParams):
            s = self.conv(f"{name}.to_cprime", p.to_cprime, shape)
            self.elementwise(f"{name}:relu", "act", s)
            s = self.conv(f"{name}.to_one", p.to_one, s)
            self.elementwise(f"{name}:sigmoid", "act", s)
            self.add(f"{name}:matmul", "matmul", 0, n * c * h * w)
        else:
            self.elementwise(f"{name}:gap", "pool", (n, c, 1, 1))
        self.se_weights(f"{name}.se", p.se, (n, c, 1, 1))
        return self.elementwise(f"{name}:mul", "mul", shape)

    def lka(self, name, p, shape):
        s = self.conv(f"{name}.dw", p.dw, shape)
        s = self.conv(f"{name}.dwd", p.dwd, s)
        s = self.conv(f"{name}.pw", p.pw, s)
        return self.elementwise(f"{name}:mul", "mul", s)

    def stem(self, name, p, shape):
        s = self.layer(f"{name}.stem_conv", p.stem_conv, shape)
        n, c, h, w = s
        a, b = (n, c // 2, h, w), (n, c - c // 2, h, w)
        if p.lka is not None:
            a = self.lka(f"{name}.lka", p.lka, a)
        a = self.layer(f"{name}.a_pw", p.a_pw, self.layer(f"{name}.a_dw", p.a_dw, a))
        b = self.layer(f"{name}.b_expand", p.b_expand, b)
        b = self.layer(f"{name}.b_restore", p.b_restore, self.layer(f"{name}.b_dw", p.b_dw, b))
        return (n, a[1] + b[1], a[2], a[3])

    def greit_block(self, name, p, shapes):
        active = [(n, c - c // 2, h, w) for n, c, h, w in shapes]
        for k, se in enumerate(p.weighting):
            self.ccw(f"{name}.weighting.{k}", se, active)
        for k, s in enumerate(active):
            s = self.layer(f"{name}.dw.{k}", p.dw[k], s)
            self.spatial(f"{name}.spatial.{k}", p.spatial[k], s)
        return shapes

    def fuse(self, name, p, shapes, last):
        fused = []
        for j, row in enumerate(p.paths):
            for i, path in enumerate(row):
                if path is None:
                    continue
                s = self.layers(f"{name}.paths.{j}.{i}.layers", path.layers, shapes[i])
                if path.upsample > 1:
                    self.elementwise(f"{name}.paths.{j}.{i}:upsample", "resample", shapes[j])
            for k in range(len(row) - 1):
                self.elementwise(f"{name}:add{j}.{k}", "add", shapes[j])
            fused.append(self.elementwise(f"{name}:relu{j}", "act", shapes[j]))
        if not last:
            return fused
        out = [None] * len(fused)
        below = None
        for j in range(len(fused) - 1, -1, -1):
            s = fused[j]
            if below is not None:
                up = (below[0], below[1], s[2], s[3])
                self.elementwise(f"{name}.refine.{j}:upsample", "resample", up)
                self.elementwise(f"{name}.refine.{j}:add", "add", s)
            s = self.layer(f"{name}.refine.{j}.dw", p.refine[j].dw, s)
            below = self.layer(f"{name}.refine.{j}.pw", p.refine[j].pw, s)
            out[j] = below
        return out

    def transition(self, name, p, shapes):
        out = []
        for k, (s, layers) in enumerate(zip(shapes, p.adapt)):
            out.append(s if layers is None else self.layers(f"{name}.adapt.{k}", layers, s))
        out.append(self.layers(f"{name}.new", p.new, shapes[-1]))
        return out


def _trajectory(net: Network):
    rows = []
    for s, stage in enumerate(net.stages):
        for blk in stage.modules[0].blocks[0]:
            rows.append({
                "stage": s + 2,
                "group": _group_name(net.config, blk.branches),
                "branches": list(blk.branches),
                "channels": blk.weighting[0].channels,
            })
    return rows


def _group_name(cfg, members):
    if cfg.weighting == "ccw":
        return "all"
    return "high" if members[0] in cfg.groups.high else "low"


def cost_report(net: Network, input_hw=(256, 192), batch=1):
    h, w = _pair(input_hw)
    cfg = net.config
    walker = _Walker()
    shape = walker.stem("stem", net.stem, (batch, cfg.in_channels, h, w))
    shapes = [shape]
    for s, stage in enumerate(net.stages):
        base = f"stages.{s}"
        shapes = walker.transition(f"{base}.transition", stage.transition, shapes)
        for m, module in enumerate(stage.modules):
            mname = f"{base}.modules.{m}"
            for li, layer in enumerate(module.blocks):
                for bi, blk in enumerate(layer):
                    walker.greit_block(f"{mname}.blocks.{li}.{bi}", blk,
                                       [shapes[i] for i in blk.branches])
            last = s == len(net.stages) - 1 and m == len(stage.modules) - 1
            shapes = walker.fuse(f"{mname}.fuse", module.fuse, shapes, last)
    walker.conv("head", net.head, shapes[0])
    buffers = sum(np.asarray(v).size for k, v in named_parameters(net)
                  if k.endswith(("running_mean", "running_var")))
    return CostReport(walker.rows, (h, w), batch, _trajectory(net), buffers)


def count_params(net: Network):
    return cost_report(net, (256, 192))


def count_flops(net: Network, input_hw, batch=1):
    return cost_report(net, input_hw, batch)


def report_for(variant, input_hw=(256, 192), batch=1, **overrides):
    return cost_report(build_network(arch_config(variant, **overrides)), input_hw, batch)


@dataclass
class GrowthReport:
    method: str
    widths: tuple
    rows: List[dict]

    def stage_channels(self):
        """Per stage, the largest concatenated weighting tensor."""
        out = {}
        for r in self.rows:
            out[r["stage"]] = max(out.get(r["stage"], 0), r["channels"])
        return [out[s] for s in sorted(out)]

    def group_channels(self, group):
        return {r["stage"]: r["channels"] for r in self.rows if r["group"] == group}

    def to_text(self):
        lines = [f"method {self.method}, widths {tuple(self.widths)}"]
        for r in self.rows:
            lines.append(f"stage {r['stage']} {r['group']:<5} branches {r['branches']} channels {r['channels']}")
        return "\n".join(lines)


def channel_growth_report(method, widths=(40, 80, 160, 320), groups=GroupAssignment()):
    """Channel count of the concatenated weighting tensor(s) at stages 2-4.

    ``widths`` are the per-branch channel counts entering the weighting.  The
    built networks weight the active half of each branch, so their measured
    trajectory (``CostReport.trajectory``) is this report for ``widths // 2``.
    """
    if method not in ("ccw", "gcw"):
        raise ValueError(f"method must be ccw or gcw, got {method!r}")
    rows = []
    for stage in (2, 3, 4):
        n = stage
        if method == "ccw":
            member_sets = [("all", tuple(range(n)))]
        else:
            member_sets = [(name, g) for name, g in zip(("high", "low"), groups.groups(n))]
        for name, members in member_sets:
            rows.append({"stage": stage, "group": name, "branches": list(members),
                         "channels": int(sum(widths[i] for i in members))})
    return GrowthReport(method, tuple(widths), rows)
