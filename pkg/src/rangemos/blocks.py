"""Forward reference kernels for the range-view network blocks.

Tensors are ``(C, H, W)`` float64 arrays. Parameters are supplied by the
caller; nothing here is trained.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._validation import check_tensor

SAPL_KERNEL = (2, 4)


def sapl(x, kernel_h=SAPL_KERNEL[0], kernel_w=SAPL_KERNEL[1]):
    """Strip average pooling: mean over non-overlapping ``kernel_h x kernel_w`` blocks."""
    x = check_tensor(x, ndim=3, name="input")
    C, H, W = x.shape
    if kernel_h < 1 or kernel_w < 1:
        raise ValueError(f"kernel must be positive, got {kernel_h}x{kernel_w}")
    if H % kernel_h or W % kernel_w:
        raise ValueError(
            f"input {H}x{W} is not divisible by pooling kernel {kernel_h}x{kernel_w}"
        )
    blocks = x.reshape(C, H // kernel_h, kernel_h, W // kernel_w, kernel_w)
    return blocks.mean(axis=(2, 4))


def pixel_shuffle(x, ratio_h=SAPL_KERNEL[0], ratio_w=SAPL_KERNEL[1]):
    """Rectangular sub-pixel rearrangement ``(C, H, W) -> (C/(rh*rw), H*rh, W*rw)``."""
    x = check_tensor(x, ndim=3, name="input")
    C, H, W = x.shape
    r = ratio_h * ratio_w
    if ratio_h < 1 or ratio_w < 1 or C % r:
        raise ValueError(f"{C} channels not divisible by shuffle ratio {ratio_h}x{ratio_w}")
    out = x.reshape(C // r, ratio_h, ratio_w, H, W).transpose(0, 3, 1, 4, 2)
    return out.reshape(C // r, H * ratio_h, W * ratio_w)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def softmax(z):
    e = np.exp(z - np.max(z))
    return e / e.sum()


def conv1x1(x, weight, bias):
    """Pointwise channel mixing of a ``(C, ...)`` array."""
    return np.tensordot(weight, x, axes=(1, 0)) + bias.reshape((-1,) + (1,) * (x.ndim - 1))


@dataclass
class FusionParams:
    gate_weight: np.ndarray
    gate_bias: np.ndarray
    attn_weight: np.ndarray
    attn_bias: np.ndarray

    def __post_init__(self):
        self.gate_weight = np.asarray(self.gate_weight, dtype=np.float64)
        self.gate_bias = np.asarray(self.gate_bias, dtype=np.float64)
        self.attn_weight = np.asarray(self.attn_weight, dtype=np.float64)
        self.attn_bias = np.asarray(self.attn_bias, dtype=np.float64)
        c_out, c_in = self.gate_weight.shape
        if self.gate_bias.shape != (c_out,):
            raise ValueError(f"gate bias shape {self.gate_bias.shape} != ({c_out},)")
        if self.attn_weight.shape != (c_out, c_out) or self.attn_bias.shape != (c_out,):
            raise ValueError(
                f"attention weights must be ({c_out}, {c_out}) + ({c_out},), got "
                f"{self.attn_weight.shape} + {self.attn_bias.shape}"
            )

    @property
    def channels(self):
        return self.gate_weight.shape

    @classmethod
    def random(cls, channels, rng, scale=1.0):
        return cls(
            rng.normal(0, scale, (channels, channels)),
            rng.normal(0, scale, channels),
            rng.normal(0, scale, (channels, channels)),
            rng.normal(0, scale, channels),
        )

    @classmethod
    def identity(cls, channels):
        z = np.zeros(channels)
        return cls(np.eye(channels), z, np.eye(channels), z.copy())


@dataclass
class FusionResult:
    output: np.ndarray
    gated: np.ndarray
    channel_weights: np.ndarray


def mga_fuse(f_semantic, f_motion, params, return_intermediates=False):
    """Gate motion features with semantic features, then re-weight channels.

    ``gated = sigmoid(conv1x1(f_semantic)) * f_motion``; the channel weights
    are ``C * softmax(conv1x1(mean_hw(gated)))``; the output is
    ``weights * gated + f_motion``.
    """
    fs = check_tensor(f_semantic, ndim=3, name="f_semantic")
    fm = check_tensor(f_motion, ndim=3, name="f_motion")
    if fs.shape != fm.shape:
        raise ValueError(f"feature shapes differ: {fs.shape} vs {fm.shape}")
    C = fm.shape[0]
    if params.channels != (C, C):
        raise ValueError(f"fusion params are {params.channels}, features have {C} channels")

    gated = sigmoid(conv1x1(fs, params.gate_weight, params.gate_bias)) * fm
    pooled = gated.mean(axis=(1, 2))
    weights = softmax(params.attn_weight @ pooled + params.attn_bias) * C
    out = weights[:, None, None] * gated + fm
    if return_intermediates:
        return FusionResult(out, gated, weights)
    return out


# -- tensor fixtures --------------------------------------------------------
# .tensor layout: uint32 C, H, W; float32 data (C, H, W). Little-endian.

def save_tensor(x, path):
    x = np.asarray(x)
    if x.ndim != 3:
        raise ValueError(f"expected a (C, H, W) tensor, got shape {x.shape}")
    with open(path, "wb") as f:
        f.write(np.array(x.shape, dtype="<u4").tobytes())
        f.write(x.astype("<f4").tobytes())


def load_tensor(path):
    raw = Path(path).read_bytes()
    shape = tuple(int(v) for v in np.frombuffer(raw[:12], dtype="<u4"))
    data = np.frombuffer(raw[12:], dtype="<f4")
    if data.size != int(np.prod(shape)):
        raise ValueError(f"{path}: {data.size} values for shape {shape}")
    return data.reshape(shape).astype(np.float64)
