"""End to end on synthetic data: crop a box, run the network, decode,
map back to the image and score the result.  Weights are random, so the
keypoints are meaningless; the point is the plumbing.

    python3 demos/03_pipeline.py
"""
import numpy as np

from greit_hrnet import arch_config, build_network, forward
from greit_hrnet.metrics import Annotation, Detection, ap_ar, pckh
from greit_hrnet.network import COCO_FLIP_PAIRS
from greit_hrnet.posedecode import (BoxTransform, crop_to_input, decode_heatmaps,
                                    extend_box, flip_average, gaussian_target,
                                    map_to_source)

rng = np.random.default_rng(0)
image = rng.standard_normal((1, 3, 240, 320)).astype(np.float32)
box = extend_box((100, 40, 90, 150))
bt = BoxTransform.from_box(box, (256, 192))
crop = crop_to_input(image, bt)

net = build_network(arch_config("greit18"), init="random", seed=0)
hm = forward(net, crop)
hm = flip_average(hm, forward(net, np.ascontiguousarray(crop[..., ::-1])), COCO_FLIP_PAIRS)
coords, scores = decode_heatmaps(hm)
pose = map_to_source(coords[0], scores[0], bt, hm.shape[2:], box=box)
print("box", tuple(round(v, 1) for v in box))
print("first three keypoints (x, y, score):\n", pose.keypoints[:3].round(2))

# Decoding a clean Gaussian recovers its center to within a quarter pixel.
target = gaussian_target((20.3, 31.7), 2.0, 64, 48)
xy, _ = decode_heatmaps(target[None, None])
print("\ngaussian at (20.3, 31.7) decodes to", tuple(float(v) for v in xy[0, 0]))

# Score the random prediction against a jittered copy of itself.
gt_kps = np.column_stack([pose.keypoints[:, :2] + rng.normal(0, 3, (17, 2)), np.full(17, 2)])
gt = Annotation("demo", gt_kps, area=box[2] * box[3])
print("\nAP/AR:", ap_ar([Detection("demo", pose.keypoints, 1.0)], [gt]))
print("PCKh@0.5 with head size 20:", pckh(pose.keypoints[None], gt_kps[None], [20.0]))
