"""Forward-pass kernels for the backward refinement pathway.

Tensors are float64 numpy arrays laid out ``(batch, channels, height, width)``.
Convolution weights are ``(out_ch, in_ch, kh, kw)``; transposed-convolution
weights are ``(out_ch, in_ch, kh, kw)`` as well, so both use the same
``(o, i, r, c)`` convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

__all__ = [
    "as_tensor4",
    "conv2d",
    "relu",
    "concat_channels",
    "split_channels",
    "phase_shift",
    "inverse_phase_shift",
    "subpixel_conv",
    "deconv",
    "subpixel_to_deconv_weights",
    "bilinear_deconv_weights",
    "RefinementConfig",
    "RefinementParams",
    "init_refinement_params",
    "refinement_module",
    "PathwayConfig",
    "PathwayParams",
    "init_pathway_params",
    "refinement_pathway",
]


def as_tensor4(x, name: str = "tensor") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 4 or min(x.shape) < 1:
        raise ValueError(f"{name} must be a non-empty rank-4 array, got shape {x.shape}")
    return x


def _weights(w, name="weights") -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 4 or min(w.shape) < 1:
        raise ValueError(f"{name} must have shape (out_ch, in_ch, kh, kw), got {w.shape}")
    return w


def conv2d(x, w, b=None, pad: int = 0) -> np.ndarray:
    """Stride-1 cross-correlation with symmetric zero padding."""
    x = as_tensor4(x, "input")
    w = _weights(w)
    o, i, kh, kw = w.shape
    if x.shape[1] != i:
        raise ValueError(f"input has {x.shape[1]} channels, kernel expects {i}")
    if pad < 0:
        raise ValueError("pad must be >= 0")
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    if kh > x.shape[2] or kw > x.shape[3]:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {x.shape[2]}x{x.shape[3]}")
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))  # n, i, H', W', kh, kw
    out = np.einsum("nihwyx,oiyx->nohw", windows, w, optimize=True)
    if b is not None:
        b = np.asarray(b, dtype=np.float64)
        if b.shape != (o,):
            raise ValueError(f"bias must have shape ({o},), got {b.shape}")
        out = out + b[None, :, None, None]
    return out


def relu(x) -> np.ndarray:
    return np.maximum(as_tensor4(x), 0.0)


def concat_channels(a, b) -> np.ndarray:
    a = as_tensor4(a, "a")
    b = as_tensor4(b, "b")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(f"cannot concatenate {a.shape} and {b.shape}")
    return np.concatenate([a, b], axis=1)


def split_channels(x, n_first: int) -> tuple[np.ndarray, np.ndarray]:
    x = as_tensor4(x)
    return x[:, :n_first], x[:, n_first:]


def phase_shift(x, k: int) -> np.ndarray:
    """Rearrange ``(n, c*k*k, h, w)`` into ``(n, c, k*h, k*w)``.

    ``out[n, c, k*y + dy, k*x + dx] = in[n, c*k*k + dy*k + dx, y, x]``.
    """
    x = as_tensor4(x)
    if k < 1:
        raise ValueError("upscale factor must be >= 1")
    n, ch, h, w = x.shape
    if ch % (k * k):
        raise ValueError(f"{ch} channels not divisible by k^2 = {k * k}")
    c = ch // (k * k)
    return x.reshape(n, c, k, k, h, w).transpose(0, 1, 4, 2, 5, 3).reshape(n, c, h * k, w * k)


def inverse_phase_shift(y, k: int) -> np.ndarray:
    """Exact inverse of :func:`phase_shift`."""
    y = as_tensor4(y)
    n, c, hk, wk = y.shape
    if hk % k or wk % k:
        raise ValueError(f"spatial dims {hk}x{wk} not divisible by {k}")
    h, w = hk // k, wk // k
    return y.reshape(n, c, h, k, w, k).transpose(0, 1, 3, 5, 2, 4).reshape(n, c * k * k, h, w)


def subpixel_conv(x, w, k: int, b=None, pad: int = 0) -> np.ndarray:
    """Convolution to ``o*k*k`` channels followed by :func:`phase_shift`."""
    return phase_shift(conv2d(x, w, b, pad), k)


def deconv(x, w, stride: int, b=None, crop: tuple[int, int] | None = None) -> np.ndarray:
    """Transposed convolution with weights ``(o, i, kh, kw)``.

    Input pixel ``(y, x)`` scatters ``x * w[:, :, a, c]`` onto full-output
    position ``(stride*y + a, stride*x + c)``. ``crop`` trims
    ``(front, back)`` from each spatial axis of the full output; the default
    splits ``kernel - stride`` so the result is exactly ``stride`` times the
    input size.
    """
    x = as_tensor4(x, "input")
    w = _weights(w)
    o, i, kh, kw = w.shape
    n, ch, h, wd = x.shape
    if ch != i:
        raise ValueError(f"input has {ch} channels, kernel expects {i}")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    if crop is None:
        if kh < stride or kw < stride or kh != kw:
            raise ValueError("default cropping needs a square kernel at least as large as the stride")
        front = (kh - stride) // 2
        crop = (front, kh - stride - front)
    full_h = stride * (h - 1) + kh
    full_w = stride * (wd - 1) + kw
    out_h = full_h - crop[0] - crop[1]
    out_w = full_w - crop[0] - crop[1]
    if out_h < 1 or out_w < 1 or min(crop) < 0:
        raise ValueError(f"crop {crop} incompatible with kernel {kh}x{kw}")
    full = np.zeros((n, o, full_h, full_w))
    # one strided scatter per kernel tap
    contrib = np.einsum("nihw,oiyx->noyxhw", x, w, optimize=True)
    for a in range(kh):
        for c in range(kw):
            full[:, :, a:a + stride * h:stride, c:c + stride * wd:stride] += contrib[:, :, a, c]
    out = full[:, :, crop[0]:crop[0] + out_h, crop[0]:crop[0] + out_w]
    if b is not None:
        out = out + np.asarray(b, dtype=np.float64)[None, :, None, None]
    return np.ascontiguousarray(out)


def subpixel_to_deconv_weights(w, k: int, pad: int) -> tuple[np.ndarray, tuple[int, int]]:
    """Deconvolution weights reproducing ``subpixel_conv(x, w, k, pad=pad)``.

    Sub-kernel ``dy*k + dx`` of every output channel is scattered onto the
    stride phase ``(dy, dx)`` of a ``(k*r, k*c)`` kernel, flipped so that
    scatter and gather agree. Returns the weights and the crop to pass to
    :func:`deconv`.
    """
    w = _weights(w)
    ok2, i, r, c = w.shape
    if ok2 % (k * k):
        raise ValueError(f"{ok2} output channels not divisible by k^2 = {k * k}")
    if r != c:
        raise ValueError("square kernels only")
    if not 0 <= pad <= r - 1:
        raise ValueError(f"pad must lie in [0, {r - 1}]")
    o = ok2 // (k * k)
    sub = w.reshape(o, k, k, i, r, c)  # o, dy, dx, i, u, v
    d = np.zeros((o, i, k * r, k * c))
    for dy in range(k):
        for dx in range(k):
            # tap (u, v) lands at (k*(r-1-u) + dy, k*(c-1-v) + dx)
            d[:, :, dy::k, dx::k] = sub[:, dy, dx, :, ::-1, ::-1]
    edge = k * (r - 1 - pad)
    return d, (edge, edge)


def bilinear_deconv_weights(channels: int, k: int) -> np.ndarray:
    """Fixed bilinear up-sampling kernel of size ``2k``, one per channel."""
    size = 2 * k
    center = k - 0.5 if size % 2 == 0 else k - 1
    og = np.arange(size)
    f1 = 1 - np.abs(og - center) / k
    w = np.zeros((channels, channels, size, size))
    for ch in range(channels):
        w[ch, ch] = np.outer(f1, f1)
    return w


# ---------------------------------------------------------------------------
# Refinement module and pathway

@dataclass(frozen=True)
class RefinementConfig:
    k_h: int
    k_u: int
    k_h_reduced: int
    k_u_reduced: int
    k_d: int
    upscale: int = 2
    kernel: int = 3

    def __post_init__(self):
        for name in ("k_h", "k_u", "k_h_reduced", "k_u_reduced", "k_d", "upscale", "kernel"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.k_h_reduced > self.k_h or self.k_u_reduced > self.k_u:
            raise ValueError("reduced widths cannot exceed input widths")
        if self.kernel % 2 == 0:
            raise ValueError("kernel size must be odd to preserve spatial dims")

    @property
    def pad(self) -> int:
        return self.kernel // 2


@dataclass
class RefinementParams:
    """Weights and biases of one refinement module."""

    lateral_w: np.ndarray
    lateral_b: np.ndarray
    top_w: np.ndarray
    top_b: np.ndarray
    fuse_w: np.ndarray
    fuse_b: np.ndarray
    up_w: np.ndarray
    up_b: np.ndarray

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.__dataclass_fields__}


def _he(rng, shape):
    fan_in = shape[1] * shape[2] * shape[3]
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def init_refinement_params(cfg: RefinementConfig, rng=None) -> RefinementParams:
    """He-normal weights and zero biases from a seeded generator."""
    rng = np.random.default_rng(rng)
    k, s = cfg.kernel, cfg.upscale
    return RefinementParams(
        lateral_w=_he(rng, (cfg.k_h_reduced, cfg.k_h, k, k)),
        lateral_b=np.zeros(cfg.k_h_reduced),
        top_w=_he(rng, (cfg.k_u_reduced, cfg.k_u, k, k)),
        top_b=np.zeros(cfg.k_u_reduced),
        fuse_w=_he(rng, (cfg.k_d, cfg.k_u_reduced + cfg.k_h_reduced, k, k)),
        fuse_b=np.zeros(cfg.k_d),
        up_w=_he(rng, (cfg.k_d * s * s, cfg.k_d, k, k)),
        up_b=np.zeros(cfg.k_d * s * s),
    )


def refinement_module(top_down, lateral, cfg: RefinementConfig, params: RefinementParams) -> np.ndarray:
    """Fuse a top-down and a lateral feature map, then up-sample.

    Both inputs are reduced by conv + ReLU, concatenated (top-down first),
    fused by conv + ReLU to ``k_d`` channels and up-sampled by a sub-pixel
    convolution. Output shape ``(n, k_d, upscale*h, upscale*w)``.
    """
    top_down = as_tensor4(top_down, "top_down")
    lateral = as_tensor4(lateral, "lateral")
    if top_down.shape[1] != cfg.k_u or lateral.shape[1] != cfg.k_h:
        raise ValueError(f"expected {cfg.k_u} top-down and {cfg.k_h} lateral channels, "
                         f"got {top_down.shape[1]} and {lateral.shape[1]}")
    if top_down.shape[0] != lateral.shape[0] or top_down.shape[2:] != lateral.shape[2:]:
        raise ValueError(f"top-down {top_down.shape} and lateral {lateral.shape} disagree spatially")
    p = cfg.pad
    u = relu(conv2d(top_down, params.top_w, params.top_b, p))
    h = relu(conv2d(lateral, params.lateral_w, params.lateral_b, p))
    fused = relu(conv2d(concat_channels(u, h), params.fuse_w, params.fuse_b, p))
    return subpixel_conv(fused, params.up_w, cfg.upscale, params.up_b, p)


@dataclass(frozen=True)
class PathwayConfig:
    """Channel schedule of the backward pathway.

    ``module_channels[0]`` is the width of the top-down seed; module ``j``
    maps ``module_channels[j]`` to ``module_channels[j + 1]`` and uses that
    width for both reductions and the fused map.
    """

    module_channels: tuple[int, ...] = (256, 128, 64, 32)
    lateral_channels: tuple[int, ...] | None = None
    upscale: int = 2
    kernel: int = 3

    def __post_init__(self):
        chans = tuple(int(c) for c in self.module_channels)
        if len(chans) < 2 or min(chans) < 1:
            raise ValueError("need a seed width and at least one module width")
        object.__setattr__(self, "module_channels", chans)
        if self.lateral_channels is not None:
            lat = tuple(int(c) for c in self.lateral_channels)
            if len(lat) != self.n_modules:
                raise ValueError(f"{self.n_modules} modules but {len(lat)} lateral widths")
            object.__setattr__(self, "lateral_channels", lat)

    @classmethod
    def halving(cls, levels: int = 3, top: int = 256, **kw) -> "PathwayConfig":
        if levels < 1:
            raise ValueError("levels must be >= 1")
        chans = [top >> j for j in range(levels + 1)]
        if chans[-1] < 1:
            raise ValueError(f"cannot halve {top} channels {levels} times")
        return cls(tuple(chans), **kw)

    @property
    def n_modules(self) -> int:
        return len(self.module_channels) - 1

    def laterals(self) -> tuple[int, ...]:
        return self.lateral_channels or tuple(self.module_channels[1:])

    def module_configs(self) -> list[RefinementConfig]:
        out = []
        for j, k_h in enumerate(self.laterals()):
            k_u, k_d = self.module_channels[j], self.module_channels[j + 1]
            out.append(RefinementConfig(k_h=k_h, k_u=k_u, k_h_reduced=min(k_d, k_h), k_u_reduced=k_d,
                                        k_d=k_d, upscale=self.upscale, kernel=self.kernel))
        return out


@dataclass
class PathwayParams:
    seed_w: np.ndarray
    seed_b: np.ndarray
    modules: list[RefinementParams] = field(default_factory=list)


def init_pathway_params(cfg: PathwayConfig, rng=None) -> PathwayParams:
    rng = np.random.default_rng(rng)
    k = cfg.kernel
    seed_w = _he(rng, (cfg.module_channels[0], cfg.laterals()[0], k, k))
    mods = [init_refinement_params(m, rng) for m in cfg.module_configs()]
    return PathwayParams(seed_w, np.zeros(cfg.module_channels[0]), mods)


def refinement_pathway(side_features: Sequence[np.ndarray], cfg: PathwayConfig, params: PathwayParams,
                       trace: list | None = None) -> np.ndarray:
    """Run the pathway over lateral features ordered coarse to fine.

    The top-down seed is a conv + ReLU of the coarsest feature to
    ``module_channels[0]`` channels. Each module's output feeds the next as
    its top-down input, so every lateral must be ``upscale`` times larger
    than the one before. When ``trace`` is a list, one
    ``(module, in_shape, out_shape)`` entry is appended per module.
    """
    feats = [as_tensor4(f, f"side feature {j}") for j, f in enumerate(side_features)]
    mods = cfg.module_configs()
    if len(feats) != len(mods) or len(params.modules) != len(mods):
        raise ValueError(f"{len(mods)} modules need {len(mods)} side features and parameter sets")
    top = relu(conv2d(feats[0], params.seed_w, params.seed_b, cfg.kernel // 2))
    for j, (mcfg, mpar, lat) in enumerate(zip(mods, params.modules, feats)):
        if lat.shape[2:] != top.shape[2:]:
            raise ValueError(f"module {j}: lateral spatial dims {lat.shape[2:]} "
                             f"do not match top-down {top.shape[2:]}")
        out = refinement_module(top, lat, mcfg, mpar)
        if trace is not None:
            trace.append((j, top.shape, out.shape))
        top = out
    return top
