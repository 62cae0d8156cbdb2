"""Synthetic layered scenes and training-pair construction.

Synthetic scenes are stacks of textured fronto-parallel layers.  A texture
point at canvas column ``u`` of a layer with disparity ``d`` appears at
``x = u + s*d`` in view ``s``; layers are composited back to front.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from scipy.ndimage import gaussian_filter

from .lightfield import Orientation, Slice3D, shear_slice
from .saam import upsampled_views

log = logging.getLogger(__name__)

PATCH_W, PATCH_H, PATCH_STRIDE = 64, 24, 40
MIN_PATCH_VARIANCE = 1e-4
PACKED_MAGIC = b"SAAPAIR1"
# per-view disparities cycled over the default synthetic corpus
CORPUS_DISPARITIES = (-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0)


@dataclass
class LayerSpec:
    seed: int
    disparity: float
    # {"kind": "full"} | {"kind": "band", "start": u0, "width": w}
    # | {"kind": "stripes", "period": p, "duty": f, "phase": u0}
    mask: dict = field(default_factory=lambda: {"kind": "full"})
    blur: float = 1.5
    contrast: tuple[float, float] = (0.1, 0.9)


@dataclass
class SceneSpec:
    layers: list[LayerSpec]  # back to front
    spatial_res: tuple[int, int] = (64, 24)  # (W, H)
    angular_res: int = 17
    # {"layer": k, "amplitude": a, "period": p} -> gain 1 + a*sin(2*pi*s/p)
    non_lambertian: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        layers = [LayerSpec(**{**ly, "contrast": tuple(ly.get("contrast", (0.1, 0.9)))}) for ly in d["layers"]]
        return cls(layers, tuple(d.get("spatial_res", (64, 24))), int(d.get("angular_res", 17)),
                   d.get("non_lambertian"))


CANVAS_MARGIN = 256  # fixed so a layer's texture does not depend on the other layers


def _canvas_margin(spec: SceneSpec) -> int:
    reach = max((abs(ly.disparity) for ly in spec.layers), default=0.0)
    needed = int(np.ceil(reach * (spec.angular_res - 1))) + 2
    if needed > CANVAS_MARGIN:
        raise ValueError(f"disparity range needs a {needed}px margin; at most {CANVAS_MARGIN} supported")
    return CANVAS_MARGIN


def layer_texture(layer: LayerSpec, width: int, height: int, margin: int, seed_offset: int = 0) -> np.ndarray:
    """Band-limited noise on a canvas of ``width + 2*margin`` columns, rescaled to ``layer.contrast``."""
    rng = np.random.default_rng(layer.seed + seed_offset)
    noise = rng.uniform(size=(width + 2 * margin, height))
    smooth = gaussian_filter(noise, layer.blur, mode="wrap")
    lo, hi = smooth.min(), smooth.max()
    unit = (smooth - lo) / (hi - lo) if hi > lo else np.zeros_like(smooth)
    c0, c1 = layer.contrast
    return c0 + (c1 - c0) * unit


def mask_value(mask: dict, u: np.ndarray) -> np.ndarray:
    """Binary opacity at texture coordinate ``u`` (columns relative to the visible origin)."""
    kind = mask.get("kind", "full")
    if kind == "full":
        return np.ones_like(u, dtype=bool)
    if kind == "band":
        return (u >= mask["start"]) & (u < mask["start"] + mask["width"])
    if kind == "stripes":
        phase = (u - mask.get("phase", 0.0)) % mask["period"]
        return phase < mask.get("duty", 0.5) * mask["period"]
    raise ValueError(f"unknown mask kind {kind!r}")


def _sample_rows(texture: np.ndarray, coords: np.ndarray) -> np.ndarray:
    # linear interpolation along the canvas axis; exact on integer coords
    lo = np.floor(coords).astype(int)
    frac = coords - lo
    lo = np.clip(lo, 0, texture.shape[0] - 1)
    hi = np.clip(lo + 1, 0, texture.shape[0] - 1)
    return texture[lo] * (1 - frac)[:, None] + texture[hi] * frac[:, None]


def gen_synthetic_slice(spec: SceneSpec, seed: int = 0) -> tuple[Slice3D, np.ndarray]:
    """Render a ROW slice ``(W, H, S)`` and the per-pixel disparity of the visible layer."""
    width, height = spec.spatial_res
    n_views = spec.angular_res
    margin = _canvas_margin(spec)
    data = np.zeros((width, height, n_views))
    disparity = np.zeros((width, height, n_views))
    xs = np.arange(width, dtype=np.float64)
    textures = [layer_texture(ly, width, height, margin, seed) for ly in spec.layers]
    for k, (layer, tex) in enumerate(zip(spec.layers, textures)):
        for s in range(n_views):
            u = xs - s * layer.disparity
            vals = _sample_rows(tex, u + margin)
            gain = _gain(spec, k, s)
            if gain != 1.0:
                vals = np.clip(vals * gain, 0.0, 1.0)
            opaque = mask_value(layer.mask, u)
            data[opaque, :, s] = vals[opaque]
            disparity[opaque, :, s] = layer.disparity
    return Slice3D(data, Orientation.ROW, 0, {"seed": seed}), disparity


def _gain(spec: SceneSpec, layer_index: int, s: int) -> float:
    nl = spec.non_lambertian
    if not nl or nl.get("layer") != layer_index:
        return 1.0
    return 1.0 + nl["amplitude"] * np.sin(2 * np.pi * s / nl["period"])


def uniform_scene(disparity: float, seed: int, spatial_res=(64, 24), angular_res: int = 17,
                  contrast=(0.1, 0.9), blur: float = 1.5) -> SceneSpec:
    return SceneSpec([LayerSpec(seed, disparity, blur=blur, contrast=tuple(contrast))], tuple(spatial_res), angular_res)


def two_layer_scene(back: float, front: float, seed: int, spatial_res=(64, 24), angular_res: int = 17,
                    period: float = 16.0) -> SceneSpec:
    return SceneSpec(
        [LayerSpec(seed, back), LayerSpec(seed + 7919, front, {"kind": "stripes", "period": period, "duty": 0.5})],
        tuple(spatial_res), angular_res,
    )


# -- training pairs ------------------------------------------------------------

@dataclass(frozen=True)
class PatchPair:
    input: np.ndarray  # (W, H, A_in)
    target: np.ndarray  # (W, H, A_out)
    meta: dict


class DecimationError(ValueError):
    pass


def decimate_angular_array(arr: np.ndarray, alpha_a: int) -> np.ndarray:
    n = arr.shape[-1]
    if (n - 1) % alpha_a:
        raise DecimationError(f"{n} views cannot be decimated by {alpha_a}: (A-1) must be divisible")
    return arr[..., ::alpha_a]


def decimate_angular(slc: Slice3D, alpha_a: int) -> Slice3D:
    return slc.with_data(decimate_angular_array(slc.data, alpha_a))


def crop_origins(extent: int, size: int, stride: int = PATCH_STRIDE) -> range:
    return range(0, extent - size + 1, stride) if extent >= size else range(0)


def _variants(slc: Slice3D, shear_amounts: Iterable[int], min_width: int) -> Iterator[tuple[int, Slice3D]]:
    yield 0, slc
    for d in shear_amounts:
        if slc.data.shape[0] - (slc.angular_size - 1) * abs(d) < min_width:
            continue
        yield d, shear_slice(slc, d)


def make_training_pairs(slices: Iterable[Slice3D], alpha_a: int, in_views: int,
                        shear_amounts: Iterable[int] = (-2, 2), patch=(PATCH_W, PATCH_H),
                        stride: int = PATCH_STRIDE, min_variance: float = MIN_PATCH_VARIANCE) -> Iterator[PatchPair]:
    """Enumerate (input, target) patches in a fixed, reproducible order."""
    shear_amounts = tuple(shear_amounts)
    n_out = upsampled_views(in_views, alpha_a)
    pw, ph = patch
    emitted = 0
    for idx, slc in enumerate(slices):
        if slc.angular_size < n_out:
            continue
        for d, var in _variants(slc, shear_amounts, pw):
            w, h, a = var.data.shape
            for a0 in range(a - n_out + 1):
                for x0 in crop_origins(w, pw, stride):
                    for y0 in crop_origins(h, ph, stride):
                        target = var.data[x0:x0 + pw, y0:y0 + ph, a0:a0 + n_out]
                        if target.var() < min_variance:
                            continue
                        emitted += 1
                        yield PatchPair(
                            np.ascontiguousarray(target[..., ::alpha_a]),
                            np.ascontiguousarray(target),
                            {"source": slc.meta.get("source", idx), "crop": (x0, y0, a0), "shear": d},
                        )
    if emitted == 0:
        log.warning("no valid %dx%d crops in the given slices", pw, ph)


def count_training_pairs(width: int, height: int, n_views: int, alpha_a: int, in_views: int,
                         shear_amounts: Iterable[int] = (-2, 2), patch=(PATCH_W, PATCH_H),
                         stride: int = PATCH_STRIDE) -> int:
    """Closed-form pair count for one slice, ignoring the variance filter."""
    n_out = upsampled_views(in_views, alpha_a)
    if n_views < n_out:
        return 0
    windows = n_views - n_out + 1
    total = 0
    for d in (0, *shear_amounts):
        w = width - (n_views - 1) * abs(d)
        if w < patch[0]:
            continue
        total += len(crop_origins(w, patch[0], stride)) * len(crop_origins(height, patch[1], stride)) * windows
    return total


def write_packed_pairs(pairs: Iterable[PatchPair], path: str | Path, alpha_a: int) -> int:
    """Write pairs as magic + ``<6I`` header (count, W, H, A_in, A_out, alpha_a) + float32 LE tensors."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no pairs to write")
    w, h, a_in = pairs[0].input.shape
    a_out = pairs[0].target.shape[2]
    with open(path, "wb") as fh:
        fh.write(PACKED_MAGIC)
        fh.write(struct.pack("<6I", len(pairs), w, h, a_in, a_out, alpha_a))
        for p in pairs:
            fh.write(p.input.astype("<f4").tobytes())
            fh.write(p.target.astype("<f4").tobytes())
    return len(pairs)


def read_packed_pairs(path: str | Path) -> tuple[np.ndarray, np.ndarray, int]:
    """Return ``(inputs, targets, alpha_a)`` stacked along a leading batch axis."""
    raw = Path(path).read_bytes()
    if raw[:8] != PACKED_MAGIC:
        raise ValueError(f"{path} is not a packed pair file")
    count, w, h, a_in, a_out, alpha_a = struct.unpack_from("<6I", raw, 8)
    n_in, n_out = w * h * a_in, w * h * a_out
    body = np.frombuffer(raw, dtype="<f4", offset=8 + 24)
    if body.size != count * (n_in + n_out):
        raise ValueError(f"{path}: truncated payload")
    body = body.reshape(count, n_in + n_out)
    inputs = body[:, :n_in].reshape(count, w, h, a_in)
    targets = body[:, n_in:].reshape(count, w, h, a_out)
    return inputs.astype(np.float32), targets.astype(np.float32), alpha_a


def corpus_scene(i: int, n_views: int, disparities=CORPUS_DISPARITIES, seed: int = 0,
                 two_layer_every: int = 3, spatial_res=(PATCH_W, PATCH_H)) -> tuple[SceneSpec, int]:
    """Scene ``i`` of a reproducible synthetic corpus and the seed it is rendered with.

    Disparities cycle through ``disparities``; every ``two_layer_every``-th scene
    puts a striped occluder one pixel-per-view in front of the textured plane.
    """
    d = float(disparities[i % len(disparities)])
    s = seed + 101 * i
    if two_layer_every and i % two_layer_every == two_layer_every - 1:
        return two_layer_scene(d, d + 1.0, s, spatial_res=spatial_res, angular_res=n_views), s
    return uniform_scene(d, s, spatial_res=spatial_res, angular_res=n_views), s


def synthetic_pairs(n: int, alpha_a: int = 4, in_views: int = 5, disparities=CORPUS_DISPARITIES,
                    seed: int = 0, two_layer_every: int = 3) -> list[PatchPair]:
    """A small corpus of 64x24 pairs from synthetic scenes with the given per-view disparities."""
    n_out = upsampled_views(in_views, alpha_a)
    pairs = []
    for i in range(n):
        spec, s = corpus_scene(i, n_out, disparities, seed, two_layer_every)
        slc, _ = gen_synthetic_slice(spec, s)
        d = spec.layers[0].disparity
        pairs.append(PatchPair(decimate_angular_array(slc.data, alpha_a), slc.data, {"seed": s, "disparity": d}))
    return pairs
