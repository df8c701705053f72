"""On-disk formats: GRWT weights, PPM / raw-float images, run config and keypoint JSON.

All binary layouts are little-endian.

GRWT::

    b"GRWT" | u16 version | u32 count
    count x ( u16 name_len | name (utf-8) | u8 dtype (0 = f32) | u8 rank
              | u32 dims[rank] | f32 payload )

Raw float image::

    b"GRAW" | u32 C | u32 H | u32 W | f32 payload (C, H, W)
"""
import dataclasses
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .metrics import Annotation, Detection
from .network import COCO_FLIP_PAIRS, ArchConfig, arch_config, named_parameters
from .params import set_tensor


class FormatError(ValueError):
    """Malformed or mismatching file content."""


class NameMismatchError(FormatError):
    """Stored and expected parameter names differ; both sides are kept in full."""

    def __init__(self, missing, extra):
        self.missing, self.extra = list(missing), list(extra)
        super().__init__(_name_diff(self.missing, self.extra))


WEIGHT_MAGIC = b"GRWT"
WEIGHT_VERSION = 1
RAW_MAGIC = b"GRAW"
MAX_IMAGE_DIM = 1 << 14


# -- weights ---------------------------------------------------------------

def weights_to_bytes(net):
    entries = named_parameters(net)
    out = [WEIGHT_MAGIC, struct.pack("<HI", WEIGHT_VERSION, len(entries))]
    for name, value in entries:
        arr = np.asarray(value, dtype="<f4")   # keeps 0-d buffers 0-d
        raw = name.encode()
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack(f"<BB{arr.ndim}I", 0, arr.ndim, *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def save_weights(net, path):
    with open(path, "wb") as f:
        f.write(weights_to_bytes(net))


class _Reader:
    def __init__(self, data):
        self.data, self.pos = data, 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated file while reading {what}")
        chunk = self.data[self.pos: self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def parse_weights(data):
    """Decode GRWT bytes into an ordered list of ``(name, float32 array)``."""
    r = _Reader(data)
    if r.take(4, "magic") != WEIGHT_MAGIC:
        raise FormatError("bad magic: not a GRWT weight file")
    version, count = r.unpack("<HI", "header")
    if version != WEIGHT_VERSION:
        raise FormatError(f"unsupported weight file version {version}")
    entries, seen = [], set()
    for _ in range(count):
        (n,) = r.unpack("<H", "name length")
        name = r.take(n, "name").decode()
        dtype, rank = r.unpack("<BB", f"{name} header")
        if dtype != 0:
            raise FormatError(f"{name}: unknown dtype code {dtype}")
        dims = r.unpack(f"<{rank}I", f"{name} dims")
        size = int(np.prod(dims, dtype=np.int64))
        payload = r.take(4 * size, f"{name} payload")
        if name in seen:
            raise FormatError(f"duplicate entry {name}")
        seen.add(name)
        entries.append((name, np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float32)))
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after last entry")
    return entries


def load_weights(path, net):
    """Fill ``net`` in place; the stored names must match the network's exactly."""
    with open(path, "rb") as f:
        entries = parse_weights(f.read())
    expected = dict(named_parameters(net))
    stored = dict(entries)
    missing = sorted(set(expected) - set(stored))
    extra = sorted(set(stored) - set(expected))
    if missing or extra:
        raise NameMismatchError(missing, extra)
    for name, value in entries:
        if value.shape != np.shape(expected[name]):
            raise FormatError(f"{name}: stored shape {value.shape} != expected {np.shape(expected[name])}")
        set_tensor(net, name, value)
    return net


def _name_diff(missing, extra, limit=10):
    def show(names):
        head = ", ".join(names[:limit])
        return head + (f", ... ({len(names) - limit} more)" if len(names) > limit else "")
    parts = []
    if missing:
        parts.append(f"missing {len(missing)}: {show(missing)}")
    if extra:
        parts.append(f"unexpected {len(extra)}: {show(extra)}")
    return "parameter names differ; " + "; ".join(parts)


# -- images ----------------------------------------------------------------

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def _ppm_tokens(data, count):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            end = data.find(b"\n", pos)
            if end < 0:
                raise FormatError("malformed PPM header")
            pos = end + 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("malformed PPM header")
        tokens.append(data[start:pos])
    if pos >= len(data) or not data[pos:pos + 1].isspace():
        raise FormatError("malformed PPM header")
    return tokens, pos + 1


def decode_ppm(data):
    """P6 bytes -> float32 (3, H, W) in [0, 1]."""
    tokens, pos = _ppm_tokens(data, 4)
    if tokens[0] != b"P6":
        raise FormatError(f"unsupported PPM magic {tokens[0]!r}")
    try:
        w, h, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError("malformed PPM header") from None
    if maxval != 255:
        raise FormatError(f"only maxval 255 is supported, got {maxval}")
    _check_dims(3, h, w)
    body = data[pos: pos + 3 * h * w]
    if len(body) != 3 * h * w:
        raise FormatError("truncated PPM payload")
    rgb = np.frombuffer(body, dtype=np.uint8).reshape(h, w, 3)
    return rgb.transpose(2, 0, 1).astype(np.float32) / np.float32(255)


def encode_ppm(img):
    """(3, H, W) floats in [0, 1] -> P6 bytes."""
    img = np.asarray(img)
    c, h, w = img.shape
    if c != 3:
        raise FormatError("PPM needs exactly 3 channels")
    px = np.clip(np.rint(img * 255), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    return f"P6\n{w} {h}\n255\n".encode() + px.tobytes()


def _check_dims(c, h, w):
    if not (0 < c <= 4 and 0 < h <= MAX_IMAGE_DIM and 0 < w <= MAX_IMAGE_DIM):
        raise FormatError(f"image dimensions out of range: {c}x{h}x{w}")


def encode_raw(img):
    img = np.asarray(img, dtype="<f4")
    c, h, w = img.shape
    return RAW_MAGIC + struct.pack("<III", c, h, w) + img.tobytes()


def decode_raw(data):
    r = _Reader(data)
    if r.take(4, "magic") != RAW_MAGIC:
        raise FormatError("bad magic: not a raw float image")
    c, h, w = r.unpack("<III", "dims")
    _check_dims(c, h, w)
    payload = r.take(4 * c * h * w, "payload")
    return np.frombuffer(payload, dtype="<f4").reshape(c, h, w).astype(np.float32)


def load_image(path, mean=IMAGENET_MEAN, std=IMAGENET_STD):
    """Returns a (1, 3, H, W) float32 tensor.

    PPM pixels are scaled to [0, 1] and then normalized per channel; raw float
    images are taken as stored.
    """
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] == RAW_MAGIC:
        img = decode_raw(data)
    elif data[:2] == b"P6":
        img = decode_ppm(data)
        m = np.asarray(mean, dtype=np.float32).reshape(3, 1, 1)
        s = np.asarray(std, dtype=np.float32).reshape(3, 1, 1)
        img = (img - m) / s
    else:
        raise FormatError(f"{path}: unrecognized image format")
    if img.shape[0] != 3:
        raise FormatError(f"{path}: expected 3 channels, got {img.shape[0]}")
    return img[None]


# -- run config ------------------------------------------------------------

@dataclass
class RunConfig:
    arch: str = "greit18"
    widths: tuple = (40, 80, 160, 320)
    input_size: tuple = (256, 192)          # H, W
    num_keypoints: int = 17
    lka_kernels: object = (5, 7, 3)
    se_ratio: int = 8
    cprime_rule: tuple = (8, 4)
    flip_pairs: tuple = COCO_FLIP_PAIRS
    k_consts: tuple = None
    mean: tuple = IMAGENET_MEAN
    std: tuple = IMAGENET_STD
    overrides: dict = field(default_factory=dict)

    def arch_config(self) -> ArchConfig:
        base = arch_config(self.arch)
        kw = dict(widths=tuple(self.widths), num_keypoints=self.num_keypoints,
                  se_ratio=self.se_ratio, cprime_rule=tuple(self.cprime_rule))
        if base.lka_kernels is not None:
            kw["lka_kernels"] = None if self.lka_kernels is None else tuple(self.lka_kernels)
        return arch_config(self.arch, **kw, **self.overrides)


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, list) else v


def parse_run_config(text):
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(f"config is not valid JSON: {e}") from None
    if not isinstance(raw, dict):
        raise FormatError("config must be a JSON object")
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise FormatError(f"unknown config keys: {', '.join(unknown)}")
    cfg = RunConfig(**{k: _tuplify(v) for k, v in raw.items()})
    try:
        cfg.arch_config()
    except (TypeError, ValueError) as e:
        raise FormatError(f"config does not describe a valid network: {e}") from None
    return cfg


def load_run_config(path):
    with open(path) as f:
        return parse_run_config(f.read())


def dump_run_config(cfg: RunConfig):
    return json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True)


# -- keypoint JSON ---------------------------------------------------------
# A file is a list of records:
#   {"image_id", "keypoints": [x, y, s] * K, "box": [x, y, w, h], ...}
# Ground-truth records use visibility as the third value and carry "area";
# predictions carry "score" (default: mean keypoint score).

def write_keypoints(path, records):
    with open(path, "w") as f:
        json.dump(records, f, indent=1, sort_keys=True)
        f.write("\n")


def read_keypoint_records(path):
    try:
        with open(path) as f:
            records = json.load(f)
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON: {e}") from None
    if isinstance(records, dict):
        records = [records]
    if not isinstance(records, list):
        raise FormatError(f"{path}: expected a list of keypoint records")
    for i, r in enumerate(records):
        if not isinstance(r, dict) or "image_id" not in r or "keypoints" not in r:
            raise FormatError(f"{path}: record {i} lacks image_id/keypoints")
        if len(r["keypoints"]) % 3:
            raise FormatError(f"{path}: record {i} keypoints length is not a multiple of 3")
    return records


def records_to_detections(records):
    out = []
    for i, r in enumerate(records):
        kp = np.asarray(r["keypoints"], dtype=np.float64).reshape(-1, 3)
        score = r.get("score", float(kp[:, 2].mean()))
        out.append(Detection(r["image_id"], kp, float(score), int(r.get("id", i))))
    return out


def records_to_annotations(records):
    out = []
    for i, r in enumerate(records):
        area = r.get("area")
        if area is None:
            box = r.get("box")
            if box is None:
                raise FormatError(f"ground-truth record {i} has neither area nor box")
            area = float(box[2]) * float(box[3])
        out.append(Annotation(r["image_id"], r["keypoints"], float(area), int(r.get("id", i))))
    return out
