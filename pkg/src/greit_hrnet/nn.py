"""Parameterized layers: convolution, inference batch norm, activations, pooling."""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import instrument
from .tensor import ShapeError, _record
from .autodiff import value_of


def _pair(v):
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def conv_out_size(size, kernel, stride=1, padding=0, dilation=1):
    return (size + 2 * padding - dilation * (kernel - 1) - 1) // stride + 1


@dataclass
class Conv2dParams:
    weight: object                  # (out_ch, in_ch // groups, kH, kW)
    bias: Optional[object] = None   # (out_ch,)
    stride: object = 1
    padding: object = 0
    dilation: object = 1
    groups: int = 1

    def __post_init__(self):
        w = value_of(self.weight)
        if w.ndim != 4:
            raise ShapeError(f"conv weight must be rank 4, got {w.shape}")
        if w.shape[0] % self.groups:
            raise ShapeError(f"out_ch {w.shape[0]} not divisible by groups {self.groups}")
        if min(_pair(self.stride)) < 1 or min(_pair(self.dilation)) < 1 or min(_pair(self.padding)) < 0:
            raise ShapeError("need stride >= 1, dilation >= 1, padding >= 0")

    @property
    def out_channels(self):
        return value_of(self.weight).shape[0]

    @property
    def in_channels(self):
        return value_of(self.weight).shape[1] * self.groups

    @property
    def kernel_size(self):
        return value_of(self.weight).shape[2:]

    def output_hw(self, h, w):
        (kh, kw), (sh, sw) = self.kernel_size, _pair(self.stride)
        (ph, pw), (dh, dw) = _pair(self.padding), _pair(self.dilation)
        return conv_out_size(h, kh, sh, ph, dh), conv_out_size(w, kw, sw, pw, dw)


@dataclass
class BatchNormParams:
    gamma: object
    beta: object
    running_mean: object
    running_var: object
    eps: float = 1e-5


@dataclass
class ConvBNAct:
    """A conv, optionally followed by inference BN and an activation."""
    conv: Conv2dParams
    bn: Optional[BatchNormParams] = None
    act: Optional[str] = None


def _conv_geometry(xv, wv, stride, padding, dilation, groups):
    n, c, h, w = xv.shape
    o, cg, kh, kw = wv.shape
    if c != cg * groups:
        raise ShapeError(f"input has {c} channels, conv expects {cg * groups}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    dh, dw = _pair(dilation)
    ho = conv_out_size(h, kh, sh, ph, dh)
    wo = conv_out_size(w, kw, sw, pw, dw)
    if ho <= 0 or wo <= 0:
        raise ShapeError(f"conv output would be empty for input {xv.shape} and kernel {wv.shape}")
    return (n, c, h, w), (o, cg, kh, kw), (sh, sw), (ph, pw), (dh, dw), (ho, wo)


def _window(a, i, j, dh, dw, sh, sw, ho, wo):
    return a[..., i * dh: i * dh + sh * (ho - 1) + 1: sh, j * dw: j * dw + sw * (wo - 1) + 1: sw]


def conv2d_raw(x, weight, bias=None, stride=1, padding=0, dilation=1, groups=1):
    """Cross-correlation over NCHW input; covers pointwise, depthwise and dilated cases."""
    xv, wv = value_of(x), value_of(weight)
    bv = None if bias is None else value_of(bias)
    (n, c, h, w), (o, cg, kh, kw), (sh, sw), (ph, pw), (dh, dw), (ho, wo) = _conv_geometry(
        xv, wv, stride, padding, dilation, groups)
    g = groups
    og = o // g
    dtype = np.result_type(xv, wv)
    xp = np.pad(xv, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if ph or pw else xv
    xg = xp.reshape(n, g, cg, xp.shape[2], xp.shape[3])
    wg = wv.reshape(g, og, cg, kh, kw)
    depthwise = cg == 1 and og == 1
    out = np.zeros((n, g, og, ho, wo), dtype=dtype)
    for i in range(kh):
        for j in range(kw):
            patch = _window(xg, i, j, dh, dw, sh, sw, ho, wo)
            if depthwise:
                out += patch * wg[None, :, 0, :, i, j, None, None]
            else:
                res = np.matmul(wg[None, :, :, :, i, j], patch.reshape(n, g, cg, ho * wo))
                out += res.reshape(n, g, og, ho, wo)
    out = out.reshape(n, o, ho, wo)
    if bv is not None:
        out += bv.reshape(1, o, 1, 1)
    instrument.add_flops("conv", n * o * ho * wo * kh * kw * cg)

    def vjp(gout):
        gg = gout.reshape(n, g, og, ho, wo)
        gx = np.zeros((n, g, cg) + xp.shape[2:], dtype=gout.dtype)
        gw = np.zeros_like(wg, dtype=gout.dtype)
        for i in range(kh):
            for j in range(kw):
                patch = _window(xg, i, j, dh, dw, sh, sw, ho, wo)
                gslot = _window(gx, i, j, dh, dw, sh, sw, ho, wo)
                if depthwise:
                    gslot += gg * wg[None, :, 0, :, i, j, None, None]
                    gw[:, :, :, i, j] = np.sum(gg * patch, axis=(0, 3, 4))[..., None]
                else:
                    flat_g = gg.reshape(n, g, og, ho * wo)
                    wt = np.swapaxes(wg[:, :, :, i, j], 1, 2)
                    gslot += np.matmul(wt[None], flat_g).reshape(n, g, cg, ho, wo)
                    gw[:, :, :, i, j] = np.einsum("ngop,ngcp->goc", flat_g,
                                                  patch.reshape(n, g, cg, ho * wo))
        gx = gx.reshape(n, c, xp.shape[2], xp.shape[3])
        if ph or pw:
            gx = gx[:, :, ph: ph + h, pw: pw + w]
        grads = [gx, gw.reshape(wv.shape)]
        if bias is not None:
            grads.append(gout.sum(axis=(0, 2, 3)))
        return tuple(grads)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _record("conv2d", inputs, out, vjp)


def conv2d(x, p: Conv2dParams):
    return conv2d_raw(x, p.weight, p.bias, p.stride, p.padding, p.dilation, p.groups)


def batchnorm_infer(x, p: BatchNormParams):
    """Per channel ``(x - mean) / sqrt(var + eps) * gamma + beta``."""
    xv = value_of(x)
    gamma, beta = value_of(p.gamma), value_of(p.beta)
    mean, var = value_of(p.running_mean), value_of(p.running_var)
    c = xv.shape[1]
    if any(t.shape != (c,) for t in (gamma, beta, mean, var)):
        raise ShapeError(f"batchnorm params do not match {c} channels")
    col = (1, c, 1, 1)
    inv_std = 1.0 / np.sqrt(var + var.dtype.type(p.eps))
    centered = xv - mean.reshape(col)
    xhat = centered * inv_std.reshape(col)
    out = xhat * gamma.reshape(col) + beta.reshape(col)
    instrument.add_flops("bn", out.size)

    def vjp(g):
        gx = g * (gamma * inv_std).reshape(col)
        ggamma = np.sum(g * xhat, axis=(0, 2, 3))
        gbeta = np.sum(g, axis=(0, 2, 3))
        gmean = -np.sum(gx, axis=(0, 2, 3))
        gvar = np.sum(g * centered, axis=(0, 2, 3)) * gamma * (-0.5) * inv_std ** 3
        return gx, ggamma, gbeta, gmean, gvar

    return _record("batchnorm", (x, p.gamma, p.beta, p.running_mean, p.running_var), out, vjp)


def relu(x):
    xv = value_of(x)
    out = np.maximum(xv, 0)
    instrument.add_flops("act", out.size)
    return _record("relu", (x,), out, lambda g: (g * (xv > 0),))


def _logistic(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid(x):
    xv = value_of(x)
    out = _logistic(np.asarray(xv))
    instrument.add_flops("act", out.size)
    return _record("sigmoid", (x,), out, lambda g: (g * out * (1 - out),))


def activation(x, kind):
    if kind is None:
        return x
    if kind == "relu":
        return relu(x)
    if kind == "sigmoid":
        return sigmoid(x)
    raise ValueError(f"unknown activation {kind!r}")


def conv_bn_act(x, layer: ConvBNAct):
    y = conv2d(x, layer.conv)
    if layer.bn is not None:
        y = batchnorm_infer(y, layer.bn)
    return activation(y, layer.act)


def global_avg_pool(x):
    xv = value_of(x)
    n, c, h, w = xv.shape
    out = xv.mean(axis=(2, 3), keepdims=True)
    instrument.add_flops("pool", out.size)
    return _record("gap", (x,), out,
                   lambda g: (np.broadcast_to(g / (h * w), xv.shape).copy(),))


def _bin_matrix(size, out_size, dtype):
    m = np.zeros((out_size, size), dtype=dtype)
    for i in range(out_size):
        lo = (i * size) // out_size
        hi = -((-(i + 1) * size) // out_size)
        m[i, lo:hi] = 1.0 / (hi - lo)
    return m


def adaptive_avg_pool(x, out_hw):
    """Average over bins ``[floor(i*H/oH), ceil((i+1)*H/oH))`` along each axis."""
    xv = value_of(x)
    n, c, h, w = xv.shape
    oh, ow = _pair(out_hw)
    if oh <= 0 or ow <= 0:
        raise ShapeError("adaptive pool output dims must be positive")
    if oh > h or ow > w:
        raise ShapeError(f"adaptive pool cannot grow {h}x{w} to {oh}x{ow}")
    if (oh, ow) == (h, w):
        out = xv.copy()
        instrument.add_flops("pool", out.size)
        return _record("aap", (x,), out, lambda g: (g,))
    if h % oh == 0 and w % ow == 0:
        out = xv.reshape(n, c, oh, h // oh, ow, w // ow).mean(axis=(3, 5))
    else:
        mh = _bin_matrix(h, oh, xv.dtype)
        mw = _bin_matrix(w, ow, xv.dtype)
        out = np.einsum("ih,nchw,jw->ncij", mh, xv, mw)
    instrument.add_flops("pool", out.size)

    def vjp(g):
        mh = _bin_matrix(h, oh, g.dtype)
        mw = _bin_matrix(w, ow, g.dtype)
        return (np.einsum("ih,ncij,jw->nchw", mh, g, mw),)

    return _record("aap", (x,), out, vjp)


def upsample_nearest(x, scale):
    xv = value_of(x)
    scale = int(scale)
    if scale < 1:
        raise ShapeError("upsample scale must be >= 1")
    if scale == 1:
        out = xv.copy()
    else:
        out = xv.repeat(scale, axis=2).repeat(scale, axis=3)
    instrument.add_flops("resample", out.size)
    n, c, h, w = xv.shape

    def vjp(g):
        return (g.reshape(n, c, h, scale, w, scale).sum(axis=(3, 5)),)

    return _record("upsample", (x,), out, vjp)
