"""Light field containers, 3D slicing, EPIs, luminance and shearing.

Array conventions used throughout the package:

* a 4D light field stores ``views[s, t, y, x, c]`` with RGB samples in [0, 1];
* a 3D slice stores ``data[w, h, a]``: two spatial axes then the angular axis.
  A ROW slice is ``L(x, y, s)`` at a fixed ``t``; a COL slice is ``L(y, x, t)``
  at a fixed ``s``.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

# full-range BT.601
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
_CB_SCALE = 0.5 / (1.0 - 0.114)
_CR_SCALE = 0.5 / (1.0 - 0.299)

VIEW_PATTERN = "view_{s:02d}_{t:02d}.png"
META_NAME = "meta.json"


class ShearError(ValueError):
    """Raised when a shear would leave no valid columns."""


class Orientation(enum.Enum):
    ROW = "row"  # L(x, y, s), fixed t
    COL = "col"  # L(y, x, t), fixed s


def _check_unit_range(arr: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{what} contains non-finite samples")
    if arr.size and (arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError(f"{what} samples must lie in [0, 1]")


@dataclass(frozen=True)
class LightField4D:
    views: np.ndarray  # (S, T, Y, X, 3)

    def __post_init__(self):
        v = np.asarray(self.views)
        if v.ndim != 5 or v.shape[-1] != 3:
            raise ValueError(f"expected views of shape (S, T, Y, X, 3), got {v.shape}")
        if min(v.shape[:4]) < 1:
            raise ValueError("all light field dimensions must be >= 1")
        _check_unit_range(v, "light field")
        object.__setattr__(self, "views", v)

    @property
    def angular_res(self) -> tuple[int, int]:
        return self.views.shape[0], self.views.shape[1]

    @property
    def spatial_res(self) -> tuple[int, int]:
        return self.views.shape[2], self.views.shape[3]


@dataclass(frozen=True)
class Slice3D:
    data: np.ndarray  # (W, H, A)
    orientation: Orientation = Orientation.ROW
    index: int = 0  # the fixed t (ROW) or s (COL) this slice was cut at
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        d = np.asarray(self.data)
        if d.ndim != 3:
            raise ValueError(f"slice data must be 3D (W, H, A), got {d.shape}")
        _check_unit_range(d, "slice")
        object.__setattr__(self, "data", d)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    @property
    def angular_size(self) -> int:
        return self.data.shape[2]

    def with_data(self, data: np.ndarray, **meta) -> "Slice3D":
        return Slice3D(data, self.orientation, self.index, {**self.meta, **meta})


@dataclass(frozen=True)
class EPI2D:
    data: np.ndarray  # (W, A)
    source_row: int


def rgb_to_luma(rgb) -> np.ndarray | float:
    """Full-range BT.601 luminance of RGB samples (last axis is the channel)."""
    arr = np.asarray(rgb, dtype=np.float64)
    y = arr @ LUMA_WEIGHTS
    return float(y) if y.ndim == 0 else y


def rgb_to_ycbcr(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    y = rgb @ LUMA_WEIGHTS
    cb = 0.5 + _CB_SCALE * (rgb[..., 2] - y)
    cr = 0.5 + _CR_SCALE * (rgb[..., 0] - y)
    return np.stack([y, cb, cr], axis=-1)


def ycbcr_to_rgb(ycc: np.ndarray) -> np.ndarray:
    ycc = np.asarray(ycc, dtype=np.float64)
    y, cb, cr = ycc[..., 0], ycc[..., 1] - 0.5, ycc[..., 2] - 0.5
    r = y + cr / _CR_SCALE
    b = y + cb / _CB_SCALE
    g = (y - LUMA_WEIGHTS[0] * r - LUMA_WEIGHTS[2] * b) / LUMA_WEIGHTS[1]
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


def extract_slices(lf: LightField4D) -> list[Slice3D]:
    """Cut a 4D light field into T ROW slices followed by S COL slices."""
    luma = np.clip(rgb_to_luma(lf.views), 0.0, 1.0)  # (S, T, Y, X)
    n_s, n_t = lf.angular_res
    rows = [
        Slice3D(np.ascontiguousarray(luma[:, t].transpose(2, 1, 0)), Orientation.ROW, t)
        for t in range(n_t)
    ]
    cols = [
        Slice3D(np.ascontiguousarray(luma[s].transpose(1, 2, 0)), Orientation.COL, s)
        for s in range(n_s)
    ]
    return rows + cols


def extract_epi(slc: Slice3D, y: int) -> EPI2D:
    height = slc.data.shape[1]
    if not 0 <= y < height:
        raise IndexError(f"row {y} outside slice of height {height}")
    return EPI2D(slc.data[:, y, :].copy(), y)


def shear_offsets(n_views: int, d: int) -> np.ndarray:
    """Integer source-column offsets per view after re-basing the cropped output.

    ``L_d(x, y, s) = L(x + (s - S/2) d, y, s)``; the ``S/2`` centre only moves
    the output origin, which the crop discards, so relative offsets are
    ``s * d`` shifted to start at zero.
    """
    raw = np.arange(n_views) * d
    return raw - raw.min()


def shear_slice(slc: Slice3D, d: int) -> Slice3D:
    """Shear a slice by an integer number of pixels per view, cropping the border."""
    if int(d) != d:
        raise ShearError(f"only integer shears are supported, got {d}")
    d = int(d)
    width, _, n_views = slc.data.shape
    out_w = width - (n_views - 1) * abs(d)
    if out_w <= 0:
        raise ShearError(f"shear {d} on {n_views} views leaves no columns of a width-{width} slice")
    if d == 0:
        return slc.with_data(slc.data.copy(), shear=0)
    offsets = shear_offsets(n_views, d)
    out = np.stack([slc.data[o:o + out_w, :, s] for s, o in enumerate(offsets)], axis=-1)
    return slc.with_data(out, shear=slc.meta.get("shear", 0) + d)


def load_light_field(directory: str | Path) -> LightField4D:
    """Load a ``view_{s}_{t}.png`` grid validated against its ``meta.json``."""
    directory = Path(directory)
    meta = json.loads((directory / META_NAME).read_text())
    n_s, n_t, height, width = (int(meta[k]) for k in ("S", "T", "Y", "X"))
    found = sorted(directory.glob("view_*_*.png"))
    if len(found) != n_s * n_t:
        raise ValueError(f"{directory}: metadata says {n_s}x{n_t} views, found {len(found)} files")
    views = np.empty((n_s, n_t, height, width, 3))
    for s in range(n_s):
        for t in range(n_t):
            img = np.asarray(Image.open(directory / VIEW_PATTERN.format(s=s, t=t)).convert("RGB"))
            if img.shape[:2] != (height, width):
                raise ValueError(f"view ({s}, {t}) has shape {img.shape[:2]}, expected {(height, width)}")
            views[s, t] = img / 255.0
    return LightField4D(views)


def save_light_field(lf: LightField4D, directory: str | Path, **extra_meta) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    n_s, n_t = lf.angular_res
    height, width = lf.spatial_res
    for s in range(n_s):
        for t in range(n_t):
            img = np.round(lf.views[s, t] * 255.0).astype(np.uint8)
            Image.fromarray(img, "RGB").save(directory / VIEW_PATTERN.format(s=s, t=t))
    meta = {"S": n_s, "T": n_t, "Y": height, "X": width, **extra_meta}
    (directory / META_NAME).write_text(json.dumps(meta, indent=2))
    return directory


def slice_to_light_field(slc: Slice3D) -> LightField4D:
    """Wrap a luminance slice as a gray light field with a single angular row or column."""
    if slc.orientation is Orientation.ROW:
        gray = slc.data.transpose(2, 1, 0)[:, None]  # (S, 1, Y, X)
    else:
        gray = slc.data.transpose(2, 0, 1)[None]  # (1, T, Y, X)
    return LightField4D(np.repeat(gray[..., None], 3, axis=-1))
