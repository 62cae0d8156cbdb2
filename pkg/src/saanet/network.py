"""SAA-Net: spatially strided 3D encoder, angular-deconvolving skips, SAAM, decoder.

Layer names follow the published layer table (``Conv1_1`` ... ``Conv8``) so
checkpoints carry the same names.  Inputs are ``(B, 1, W, H, A)`` tensors.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .lightfield import LightField4D, Orientation, Slice3D, rgb_to_ycbcr, ycbcr_to_rgb
from .saam import SAAM, ConfigError, angular_deconv, upsampled_views


class ShapeError(ValueError):
    """Input dimensions violate the network's divisibility requirements."""


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str  # "conv" or "deconv"
    kernel: tuple[int, int, int]
    stride: tuple[int, int, int]
    c_in: int
    c_out: int
    relu: bool = True

    @property
    def padding(self) -> tuple[int, ...]:
        if self.kind == "deconv":
            # stride-2 spatial deconvs with kernel 4 double exactly; angular
            # deconvs crop their 6-sample overhang symmetrically
            return tuple((k - s) // 2 if s > 1 and k % 2 == 0 else k // 2 for k, s in zip(self.kernel, self.stride))
        return tuple(k // 2 for k in self.kernel)


@dataclass(frozen=True)
class NetworkConfig:
    alpha_a: int = 4
    base_channels: int = 24
    use_saam: bool = True
    use_multiscale_skips: bool = True
    init_std: float = 1e-3

    def __post_init__(self):
        if self.alpha_a < 2:
            raise ConfigError(f"alpha_a must be >= 2, got {self.alpha_a}")
        if (2 * self.base_channels) % 8 != 0:
            raise ConfigError("2 * base_channels must be divisible by 8 for the attention projections")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        kinds = {"alpha_a": int, "base_channels": int, "use_saam": _as_bool,
                 "use_multiscale_skips": _as_bool, "init_std": float}
        return cls(**{k: kinds[k](v) for k, v in d.items() if k in kinds})

    def layer_specs(self) -> list[LayerSpec]:
        return table_layers(self)


def _as_bool(v) -> bool:
    if isinstance(v, str):
        return v.strip().lower() in ("1", "true", "yes", "on")
    return bool(v)


def table_layers(config: NetworkConfig) -> list[LayerSpec]:
    """Per-layer (kernel, stride, channels) list; default widths give 24/48/96."""
    c1, c2, c3 = config.base_channels, 2 * config.base_channels, 4 * config.base_channels
    a = config.alpha_a
    skip_up = config.use_multiscale_skips
    one = (1, 1, 1)
    layers = [
        LayerSpec("Conv1_1", "conv", (3, 1, 3), one, 1, c1),
        LayerSpec("Conv1_2", "conv", (1, 3, 3), one, c1, c1),
        LayerSpec("Conv1_3", "conv", (3, 3, 1), (2, 2, 1), c1, c2),
        LayerSpec("Conv2_1", "conv", (3, 1, 3), one, c2, c2),
        LayerSpec("Conv2_2", "conv", (1, 3, 3), one, c2, c2),
        LayerSpec("Conv2_3", "conv", (3, 1, 1), (2, 1, 1), c2, c3),
        LayerSpec("Conv3_1", "conv", one, one, c3, c2),
        LayerSpec("Conv3_2", "conv", (3, 1, 3), one, c2, c2),
        LayerSpec("Conv3_3", "conv", (1, 3, 3), one, c2, c2),
        LayerSpec("Conv3_4", "conv", (3, 1, 3), one, c2, c2),
        LayerSpec("Conv3_5", "conv", (1, 3, 3), one, c2, c2),
    ]
    if skip_up:
        layers.append(LayerSpec("Deconv4_1", "deconv", (3, 1, 7), (1, 1, a), c1, c1))
    layers.append(LayerSpec("Conv4_2", "conv", one, one, c1, c1))
    if skip_up:
        layers.append(LayerSpec("Deconv5_1", "deconv", (3, 1, 7), (1, 1, a), c2, c2))
    layers += [
        LayerSpec("Conv5_2", "conv", one, one, c2, c2),
        LayerSpec("Conv6_1", "conv", one, one, c2, c3),
        LayerSpec("Deconv6_2", "deconv", (4, 1, 1), (2, 1, 1), c3, c2),
        LayerSpec("Conv6_3", "conv", (3, 1, 3), one, 2 * c2, c2),
        LayerSpec("Conv6_4", "conv", (1, 3, 3), one, c2, c2),
        LayerSpec("Deconv7_1", "deconv", (4, 4, 1), (2, 2, 1), c2, c1),
        LayerSpec("Conv7_2", "conv", (3, 1, 3), one, 2 * c1, c1),
        LayerSpec("Conv7_3", "conv", (1, 3, 3), one, c1, c1),
    ]
    if not skip_up:
        layers.append(LayerSpec("DeconvEnd", "deconv", (3, 1, 7), (1, 1, a), c1, c1))
    layers.append(LayerSpec("Conv8", "conv", (3, 3, 3), one, c1, 1, relu=False))
    return layers


def _make_layer(spec: LayerSpec) -> nn.Module:
    cls = nn.Conv3d if spec.kind == "conv" else nn.ConvTranspose3d
    return cls(spec.c_in, spec.c_out, spec.kernel, stride=spec.stride, padding=spec.padding)


class SAANet(nn.Module):
    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        self.specs = {s.name: s for s in config.layer_specs()}
        for spec in self.specs.values():
            self.add_module(spec.name, _make_layer(spec))
        c2 = 2 * config.base_channels
        if config.use_saam:
            self.SAAM = SAAM(c2, config.alpha_a, upsample=config.use_multiscale_skips)
        elif config.use_multiscale_skips:
            # "w/o SAAM": a plain angular transpose convolution in its place
            self.SAAM_deconv = angular_deconv(c2, config.alpha_a)
        self.last_attention: torch.Tensor | None = None

    def _layer(self, name: str, x: torch.Tensor) -> torch.Tensor:
        y = getattr(self, name)(x)
        return F.relu(y) if self.specs[name].relu else y

    def bottleneck(self, x: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor | None]:
        if self.config.use_saam:
            return self.SAAM(x)
        if self.config.use_multiscale_skips:
            return F.relu(self.SAAM_deconv(x)), None
        return x, None

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        check_input_shape(x.shape[2:])
        f = self._layer
        e1 = f("Conv1_2", f("Conv1_1", x))
        e2 = f("Conv2_2", f("Conv2_1", f("Conv1_3", e1)))
        e3 = f("Conv3_1", f("Conv2_3", e2))
        for name in ("Conv3_2", "Conv3_3", "Conv3_4", "Conv3_5"):
            e3 = f(name, e3)
        if self.config.use_multiscale_skips:
            skip1 = f("Conv4_2", f("Deconv4_1", e1))
            skip2 = f("Conv5_2", f("Deconv5_1", e2))
        else:
            skip1, skip2 = f("Conv4_2", e1), f("Conv5_2", e2)
        mid, self.last_attention = self.bottleneck(e3)
        d = f("Deconv6_2", f("Conv6_1", mid))
        d = f("Conv6_4", f("Conv6_3", torch.cat([d, skip2], dim=1)))
        d = f("Deconv7_1", d)
        d = f("Conv7_3", f("Conv7_2", torch.cat([d, skip1], dim=1)))
        if not self.config.use_multiscale_skips:
            d = f("DeconvEnd", d)
        return f("Conv8", d)

    def output_views(self, n_views: int) -> int:
        return upsampled_views(n_views, self.config.alpha_a)


def init_params(model: nn.Module, std: float, generator: torch.Generator | None = None) -> None:
    """Gaussian(0, std) weights and zero biases for every (de)convolution; SAAM gain at 0."""
    with torch.no_grad():
        for m in model.modules():
            if isinstance(m, (nn.Conv3d, nn.ConvTranspose3d)):
                m.weight.normal_(0.0, std, generator=generator)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, SAAM):
                m.gamma.zero_()


def build_network(config: NetworkConfig, seed: int | None = None) -> SAANet:
    model = SAANet(config)
    gen = torch.Generator().manual_seed(seed) if seed is not None else None
    init_params(model, config.init_std, gen)
    return model


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)


def check_input_shape(shape) -> None:
    w, h, a = shape
    problems = []
    if w % 4:
        problems.append(f"width {w} needs {(-w) % 4} more columns to reach a multiple of 4")
    if h % 2:
        problems.append(f"height {h} needs 1 more row to reach a multiple of 2")
    if a < 2:
        problems.append(f"angular size {a} must be >= 2")
    if problems:
        raise ShapeError("; ".join(problems) + " (pass pad=True to reflect-pad automatically)")


def receptive_field(layer_specs) -> tuple[int, ...]:
    """Theoretical receptive field per dimension of a stack of ``(kernel, stride)`` layers."""
    rf = jump = None
    for kernel, stride in layer_specs:
        if rf is None:
            rf = [1] * len(kernel)
            jump = [1] * len(kernel)
        for i, (k, s) in enumerate(zip(kernel, stride)):
            rf[i] += (k - 1) * jump[i]
            jump[i] *= s
    return tuple(rf or ())


def encoder_receptive_field(config: NetworkConfig | None = None) -> tuple[int, int, int]:
    specs = (config or NetworkConfig()).layer_specs()
    encoder = [s for s in specs if s.name.startswith(("Conv1_", "Conv2_", "Conv3_"))]
    return receptive_field((s.kernel, s.stride) for s in encoder)


# -- inference drivers --------------------------------------------------------

def _run(model: SAANet, arr: np.ndarray) -> np.ndarray:
    param = next(model.parameters())
    x = torch.as_tensor(np.ascontiguousarray(arr), dtype=param.dtype)[None, None]
    with torch.no_grad():
        return model(x)[0, 0].cpu().numpy().astype(np.float64)


def _reflect_pad(arr: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    w, h, _ = arr.shape
    pw, ph = (-w) % 4, (-h) % 2
    if pw or ph:
        arr = np.pad(arr, ((0, pw), (0, ph), (0, 0)), mode="reflect" if min(w, h) > 1 else "edge")
    return arr, (w, h)


def _tile_starts(width: int, tile: int, overlap: int) -> list[int]:
    if tile >= width:
        return [0]
    step = tile - overlap
    starts = list(range(0, width - tile, step))
    starts.append(width - tile)
    return starts


def forward_array(model: SAANet, arr: np.ndarray, *, pad: bool = False,
                  tile_width: int | None = None, overlap: int = 8) -> np.ndarray:
    """Run one reconstruction pass on a ``(W, H, A)`` array.

    ``tile_width`` splits the width into overlapping full-angular chunks that
    are blended linearly across the ``overlap`` columns.
    """
    arr = np.asarray(arr, dtype=np.float64)
    orig_w, orig_h = arr.shape[:2]
    if pad:
        arr, _ = _reflect_pad(arr)
    check_input_shape(arr.shape)
    width = arr.shape[0]
    if tile_width is None or tile_width >= width:
        out = _run(model, arr)
        return out[:orig_w, :orig_h]
    if tile_width % 4 or tile_width <= overlap:
        raise ShapeError(f"tile width {tile_width} must be a multiple of 4 larger than the overlap {overlap}")
    n_out = model.output_views(arr.shape[2])
    acc = np.zeros((width, arr.shape[1], n_out))
    weight = np.zeros(width)
    starts = _tile_starts(width, tile_width, overlap)
    for i, x0 in enumerate(starts):
        tile = _run(model, arr[x0:x0 + tile_width])
        ramp = np.ones(tile_width)
        if i > 0:
            left = min(overlap, starts[i - 1] + tile_width - x0)
            ramp[:left] = np.linspace(0.0, 1.0, left + 2)[1:-1]
        if i < len(starts) - 1:
            right = min(overlap, x0 + tile_width - starts[i + 1])
            ramp[tile_width - right:] = np.linspace(1.0, 0.0, right + 2)[1:-1]
        acc[x0:x0 + tile_width] += tile * ramp[:, None, None]
        weight[x0:x0 + tile_width] += ramp
    out = acc / weight[:, None, None]
    return out[:orig_w, :orig_h]


def forward(model: SAANet, slc: Slice3D, **kwargs) -> Slice3D:
    out = forward_array(model, slc.data, **kwargs)
    return slc.with_data(np.clip(out, 0.0, 1.0))


def cascade_array(model: SAANet, arr: np.ndarray, passes: int, **kwargs) -> np.ndarray:
    if passes < 1:
        raise ValueError(f"passes must be >= 1, got {passes}")
    for _ in range(passes):
        arr = np.clip(forward_array(model, arr, **kwargs), 0.0, 1.0)
    return arr


def cascade(model: SAANet, slc: Slice3D, passes: int, **kwargs) -> Slice3D:
    return slc.with_data(cascade_array(model, slc.data, passes, **kwargs))


def passes_for_factor(alpha_a: int, factor: int) -> int:
    """Number of cascaded passes giving ``factor``; raises if it is not a power of alpha_a."""
    passes, f = 0, 1
    while f < factor:
        f *= alpha_a
        passes += 1
    if f != factor or passes == 0:
        lo = alpha_a ** max(1, int(math.floor(math.log(max(factor, 1), alpha_a))))
        hi = lo * alpha_a if lo < factor else lo
        options = sorted({lo, hi})
        raise ConfigError(
            f"factor {factor} is not a power of the model's alpha_a={alpha_a}; "
            f"achievable nearby factors: {', '.join(map(str, options))}"
        )
    return passes


def _interp_views(arr: np.ndarray, axis: int, n_out: int) -> np.ndarray:
    n_in = arr.shape[axis]
    src = np.linspace(0.0, n_in - 1, n_out)
    lo = np.clip(np.floor(src).astype(int), 0, n_in - 1)
    hi = np.clip(lo + 1, 0, n_in - 1)
    frac = src - lo
    shape = [1] * arr.ndim
    shape[axis] = n_out
    frac = frac.reshape(shape)
    return np.take(arr, lo, axis=axis) * (1 - frac) + np.take(arr, hi, axis=axis) * frac


def reconstruct_4d(model: SAANet, lf: LightField4D, passes: int = 1, **kwargs) -> LightField4D:
    """Densify every angular axis with at least 2 views: along s first, then along t.

    Only luminance goes through the network; chroma is interpolated linearly
    between views.  A single-row (or single-column) light field is densified
    along its one non-degenerate axis.
    """
    n_s, n_t = lf.angular_res
    if n_s < 2 and n_t < 2:
        raise ShapeError(f"need at least 2 views along one angular axis, got {n_s}x{n_t}")
    ycc = rgb_to_ycbcr(lf.views)  # (S, T, Y, X, 3)
    luma = ycc[..., 0]
    if n_s >= 2:
        # along s for every input t; slices are (X, Y, S)
        rows = [cascade_array(model, luma[:, t].transpose(2, 1, 0), passes, **kwargs) for t in range(n_t)]
        luma = np.stack([r.transpose(2, 1, 0) for r in rows], axis=1)  # (S', T, Y, X)
    if n_t >= 2:
        # along t for every (possibly dense) s; slices are (Y, X, T)
        cols = [cascade_array(model, luma[s].transpose(1, 2, 0), passes, **kwargs) for s in range(luma.shape[0])]
        luma = np.stack([c.transpose(2, 0, 1) for c in cols], axis=0)  # (S', T', Y, X)
    s_out, t_out = luma.shape[:2]
    chroma = _interp_views(_interp_views(ycc[..., 1:], 0, s_out), 1, t_out)
    out = np.concatenate([luma[..., None], chroma], axis=-1)
    return LightField4D(np.clip(ycbcr_to_rgb(out), 0.0, 1.0))
