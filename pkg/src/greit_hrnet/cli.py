"""Command-line entry point: ``python -m greit_hrnet <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data error.  Diagnostics go to
stderr; results go to stdout or ``--out``.
"""
import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import gradsuite
from .accounting import channel_growth_report, cost_report
from .formats import (FormatError, load_image, load_run_config, load_weights,
                      read_keypoint_records, records_to_annotations,
                      records_to_detections, write_keypoints)
from .metrics import COCO_K, ap_ar, pckh
from .network import COCO_FLIP_PAIRS, VARIANTS, arch_config, build_network, forward
from .posedecode import (BoxError, BoxTransform, crop_to_input, decode_heatmaps,
                         extend_box, flip_average, map_to_source)
from .tensor import ShapeError


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _hw(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h <= 0 or w <= 0:
        raise argparse.ArgumentTypeError("input dims must be positive")
    return h, w


def _box(text):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        vals = ()
    if len(vals) != 4:
        raise argparse.ArgumentTypeError(f"expected x,y,w,h, got {text!r}")
    return vals


def build_parser():
    p = _Parser(prog="greit_hrnet", description="Greit-HRNet pose estimation toolkit")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    archs = sorted(VARIANTS)

    c = sub.add_parser("count", help="parameter and FLOP report")
    c.add_argument("--arch", choices=archs, default="greit18")
    c.add_argument("--config", help="JSON run config (overrides --arch)")
    c.add_argument("--input", type=_hw, default=(256, 192), help="HxW")
    c.add_argument("--batch", type=int, default=1)
    c.add_argument("--per-layer", action="store_true")
    c.add_argument("--format", choices=("text", "json"), default="text")
    c.add_argument("--out")

    g = sub.add_parser("growth", help="channel count of the concatenated weighting tensors")
    g.add_argument("--method", choices=("ccw", "gcw"), required=True)
    g.add_argument("--arch", choices=archs, default="greit18")
    g.add_argument("--format", choices=("text", "json"), default="text")
    g.add_argument("--out")

    i = sub.add_parser("infer", help="single-person keypoints inside a box")
    i.add_argument("--arch", choices=archs, default="greit18")
    i.add_argument("--config", help="JSON run config (overrides --arch)")
    i.add_argument("--weights", required=True)
    i.add_argument("--image", required=True)
    i.add_argument("--box", type=_box, required=True, help="x,y,w,h in image pixels")
    i.add_argument("--input", type=_hw, default=None, help="network input HxW")
    i.add_argument("--flip", action="store_true")
    i.add_argument("--out", required=True)

    k = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    k.add_argument("--block", choices=gradsuite.BLOCKS + ("all",), default="all")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--tol", type=float, default=1e-4)
    k.add_argument("--format", choices=("text", "json"), default="text")
    k.add_argument("--out")

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--preds", required=True)
    e.add_argument("--gt", required=True)
    e.add_argument("--metric", choices=("oks", "pckh"), default="oks")
    e.add_argument("--alpha", type=float, default=0.5)
    e.add_argument("--config", help="JSON run config supplying k_consts")
    e.add_argument("--format", choices=("text", "json"), default="text")
    e.add_argument("--out")
    return p


def _emit(text, out):
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def cmd_count(a):
    if a.config:
        rc = load_run_config(a.config)
        cfg = rc.arch_config()
    else:
        cfg = arch_config(a.arch)
    if a.batch < 1:
        raise UsageError("--batch must be positive")
    report = cost_report(build_network(cfg), a.input, a.batch)
    text = report.to_json(a.per_layer) if a.format == "json" else report.to_text(a.per_layer)
    _emit(text, a.out)
    return 0


def cmd_growth(a):
    widths = arch_config(a.arch).widths
    rep = channel_growth_report(a.method, widths)
    if a.format == "json":
        text = json.dumps({"method": rep.method, "widths": list(rep.widths), "rows": rep.rows},
                          indent=2, sort_keys=True)
    else:
        text = rep.to_text()
    _emit(text, a.out)
    return 0


def cmd_infer(a):
    if a.config:
        rc = load_run_config(a.config)
        cfg, flip_pairs, input_hw = rc.arch_config(), rc.flip_pairs, rc.input_size
        mean, std = rc.mean, rc.std
    else:
        rc = None
        cfg, flip_pairs, input_hw = arch_config(a.arch), COCO_FLIP_PAIRS, (256, 192)
        mean = std = None
    if a.input:
        input_hw = a.input
    net = build_network(cfg)
    load_weights(a.weights, net)
    image = load_image(a.image) if rc is None else load_image(a.image, mean, std)
    box = extend_box(a.box)
    bt = BoxTransform.from_box(box, input_hw)
    crop = crop_to_input(image, bt)
    hm = forward(net, crop)
    if a.flip:
        hm = flip_average(hm, forward(net, np.ascontiguousarray(crop[..., ::-1])), flip_pairs)
    coords, scores = decode_heatmaps(hm, quarter_offset=True)
    result = map_to_source(coords[0], scores[0], bt, hm.shape[2:], box=box,
                           meta={"input_size": list(input_hw), "flip": bool(a.flip),
                                 "arch": cfg.variant, "score": "raw_logit"})
    write_keypoints(a.out, [result.to_record(Path(a.image).stem)])
    return 0


def cmd_gradcheck(a):
    blocks = gradsuite.BLOCKS if a.block == "all" else (a.block,)
    results = gradsuite.run_suite(blocks, a.seed, a.tol)
    if a.format == "json":
        text = json.dumps([r.__dict__ for r in results], indent=2, sort_keys=True)
    else:
        text = gradsuite.format_table(results)
    _emit(text, a.out)
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} gradient check(s) failed", file=sys.stderr)
        return 2
    return 0


def _pair_by_image(preds, gts):
    by_id = {}
    for p in preds:
        by_id.setdefault(p["image_id"], []).append(p)
    pairs = []
    for g in gts:
        bucket = by_id.get(g["image_id"])
        if not bucket:
            raise FormatError(f"no prediction for image {g['image_id']!r}")
        pairs.append((bucket.pop(0), g))
    return pairs


def cmd_eval(a):
    pred_records = read_keypoint_records(a.preds)
    gt_records = read_keypoint_records(a.gt)
    if a.metric == "oks":
        k = len(gt_records[0]["keypoints"]) // 3 if gt_records else len(COCO_K)
        rc = load_run_config(a.config) if a.config else None
        if rc is not None and rc.k_consts is not None:
            k_consts = np.asarray(rc.k_consts, dtype=np.float64)
        elif k == len(COCO_K):
            k_consts = COCO_K
        else:
            raise FormatError(f"no default falloff constants for {k} keypoints; set k_consts")
        if len(k_consts) != k:
            raise FormatError(f"{len(k_consts)} falloff constants for {k} keypoints")
        scores = ap_ar(records_to_detections(pred_records), records_to_annotations(gt_records),
                       k_consts)
    else:
        pairs = _pair_by_image(pred_records, gt_records)
        if any("head_size" not in g for _, g in pairs):
            raise FormatError("PCKh ground truth needs a head_size per record")
        preds = np.array([np.reshape(p["keypoints"], (-1, 3)) for p, _ in pairs])
        gts = np.array([np.reshape(g["keypoints"], (-1, 3)) for _, g in pairs])
        if preds.shape != gts.shape:
            raise FormatError(f"prediction shape {preds.shape} != ground truth {gts.shape}")
        heads = [g["head_size"] for _, g in pairs]
        scores = {"PCKh": pckh(preds, gts, heads, a.alpha), "alpha": a.alpha}
    if a.format == "json":
        text = json.dumps(scores, sort_keys=True)
    else:
        text = "\n".join(f"{k:<6}{v:.4f}" for k, v in scores.items())
    _emit(text, a.out)
    return 0


COMMANDS = {"count": cmd_count, "growth": cmd_growth, "infer": cmd_infer,
            "gradcheck": cmd_gradcheck, "eval": cmd_eval}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except (FormatError, BoxError, ShapeError, OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
