"""Radiograph preprocessing: ROI crop, CLAHE, augmentation and resize.

Images are :class:`GrayImage` values (8-bit, row-major).  Every stage is a
pure function; randomness only enters :func:`augment` through an explicit
``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from sklearn.base import BaseEstimator, TransformerMixin


class ImageError(ValueError):
    """Raised for invalid images or preprocessing parameters."""


@dataclass(frozen=True, eq=False)
class GrayImage:
    pixels: np.ndarray  # (height, width) uint8

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or px.shape[0] < 1 or px.shape[1] < 1:
            raise ImageError(f"expected a non-empty 2-D pixel grid, got shape {px.shape}")
        if px.dtype != np.uint8:
            if np.any(px < 0) or np.any(px > 255):
                raise ImageError("pixel values must lie in [0, 255]")
            px = px.astype(np.uint8)
        px = np.ascontiguousarray(px)
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def __eq__(self, other):
        if not isinstance(other, GrayImage):
            return NotImplemented
        return np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash((self.pixels.shape, self.pixels.tobytes()))


@dataclass(frozen=True)
class CropSpec:
    x_frac: float = 0.0
    y_frac: float = 0.0
    w_frac: float = 1.0
    h_frac: float = 1.0

    def __post_init__(self):
        vals = (self.x_frac, self.y_frac, self.w_frac, self.h_frac)
        if any(not 0.0 <= v <= 1.0 for v in vals):
            raise ImageError(f"crop fractions must lie in [0, 1], got {vals}")
        if self.x_frac + self.w_frac > 1.0 + 1e-12 or self.y_frac + self.h_frac > 1.0 + 1e-12:
            raise ImageError("crop rectangle extends past the image border")


@dataclass(frozen=True)
class ClaheParams:
    clip_limit: float = 3.0
    tiles_x: int = 8
    tiles_y: int = 8
    n_bins: int = 256

    def __post_init__(self):
        if not self.clip_limit > 1.0:
            raise ImageError(f"clip_limit must exceed 1.0, got {self.clip_limit}")
        if self.tiles_x < 1 or self.tiles_y < 1:
            raise ImageError("tile grid must be at least 1x1")
        if not 2 <= self.n_bins <= 256:
            raise ImageError(f"n_bins must be in 2..256, got {self.n_bins}")


@dataclass(frozen=True)
class AugmentParams:
    flip_probability: float = 0.5
    zoom_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.flip_probability <= 1.0:
            raise ImageError("flip_probability must lie in [0, 1]")
        if not 0.0 <= self.zoom_fraction < 1.0:
            raise ImageError("zoom_fraction must lie in [0, 1)")


def _round_half_up(x):
    return np.floor(np.asarray(x, dtype=np.float64) + 0.5)


def segment_crop(img: GrayImage, spec: CropSpec) -> GrayImage:
    """Cut the fractional sub-rectangle ``spec`` out of ``img``."""
    x0 = int(_round_half_up(spec.x_frac * img.width))
    y0 = int(_round_half_up(spec.y_frac * img.height))
    w = int(_round_half_up(spec.w_frac * img.width))
    h = int(_round_half_up(spec.h_frac * img.height))
    w = min(w, img.width - x0)
    h = min(h, img.height - y0)
    if w < 1 or h < 1:
        raise ImageError(
            f"crop {spec} of a {img.width}x{img.height} image has zero area after rounding"
        )
    return GrayImage(img.pixels[y0:y0 + h, x0:x0 + w])


def _tile_edges(length: int, n_tiles: int) -> np.ndarray:
    return (np.arange(n_tiles + 1) * length) // n_tiles


def clahe_mappings(img: GrayImage, p: ClaheParams) -> np.ndarray:
    """Per-tile intensity lookup tables, shape ``(tiles_y, tiles_x, 256)``.

    Each tile histogram is clipped at ``clip_limit * tile_pixels / n_bins``;
    the clipped excess is spread uniformly over all bins in a single pass.
    """
    if img.height < p.tiles_y or img.width < p.tiles_x:
        raise ImageError(
            f"image {img.width}x{img.height} is smaller than the {p.tiles_x}x{p.tiles_y} tile grid"
        )
    px = img.pixels
    ye = _tile_edges(img.height, p.tiles_y)
    xe = _tile_edges(img.width, p.tiles_x)
    row_tile = np.repeat(np.arange(p.tiles_y), np.diff(ye))
    col_tile = np.repeat(np.arange(p.tiles_x), np.diff(xe))
    tile_id = row_tile[:, None] * p.tiles_x + col_tile[None, :]
    bins = (px.astype(np.int64) * p.n_bins) >> 8
    n_tiles = p.tiles_y * p.tiles_x
    hist = np.bincount(
        (tile_id * p.n_bins + bins).ravel(), minlength=n_tiles * p.n_bins
    ).reshape(n_tiles, p.n_bins).astype(np.float64)

    tile_pixels = hist.sum(axis=1, keepdims=True)
    threshold = p.clip_limit * tile_pixels / p.n_bins
    excess = np.maximum(hist - threshold, 0.0).sum(axis=1, keepdims=True)
    clipped = np.minimum(hist, threshold)
    # when nothing is clipped the histogram stays integer-exact
    clipped = np.where(excess > 0, clipped + excess / p.n_bins, hist)

    cdf = np.cumsum(clipped, axis=1)
    bin_map = _round_half_up((255.0 * cdf) / cdf[:, -1:])
    bin_map = np.clip(bin_map, 0, 255)
    level_bins = (np.arange(256) * p.n_bins) >> 8
    return bin_map[:, level_bins].reshape(p.tiles_y, p.tiles_x, 256)


def _interp_axis(length: int, n_tiles: int):
    """Lower tile index, upper tile index and upper weight for every coordinate."""
    edges = _tile_edges(length, n_tiles)
    centers = (edges[:-1] + edges[1:] - 1) / 2.0
    coords = np.arange(length, dtype=np.float64)
    hi = np.searchsorted(centers, coords, side="right")
    lo = np.clip(hi - 1, 0, n_tiles - 1)
    hi = np.clip(hi, 0, n_tiles - 1)
    span = centers[hi] - centers[lo]
    safe = np.where(span > 0, span, 1.0)
    w = np.where(span > 0, (coords - centers[lo]) / safe, 0.0)
    return lo, hi, w


def clahe(img: GrayImage, p: ClaheParams = ClaheParams()) -> GrayImage:
    """Contrast limited adaptive histogram equalization.

    Output pixels blend the four surrounding tile mappings bilinearly, with
    tile centres as the interpolation nodes; pixels outside the outermost
    centres use the nearest tile.
    """
    maps = clahe_mappings(img, p)
    px = img.pixels.astype(np.intp)
    y_lo, y_hi, wy = _interp_axis(img.height, p.tiles_y)
    x_lo, x_hi, wx = _interp_axis(img.width, p.tiles_x)

    flat = maps.reshape(-1, 256)
    tx = p.tiles_x
    ylo = (y_lo * tx)[:, None]
    yhi = (y_hi * tx)[:, None]
    xlo = x_lo[None, :]
    xhi = x_hi[None, :]
    tl = flat[ylo + xlo, px]
    tr = flat[ylo + xhi, px]
    bl = flat[yhi + xlo, px]
    br = flat[yhi + xhi, px]
    wx_ = wx[None, :]
    wy_ = wy[:, None]
    top = tl + wx_ * (tr - tl)
    bottom = bl + wx_ * (br - bl)
    out = top + wy_ * (bottom - top)
    return GrayImage(np.clip(_round_half_up(out), 0, 255).astype(np.uint8))


def _bilinear(px: np.ndarray, h: int, w: int) -> np.ndarray:
    src_h, src_w = px.shape
    ys = np.clip((np.arange(h) + 0.5) * (src_h / h) - 0.5, 0, src_h - 1)
    xs = np.clip((np.arange(w) + 0.5) * (src_w / w) - 0.5, 0, src_w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, src_h - 1)
    x1 = np.minimum(x0 + 1, src_w - 1)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    a = px.astype(np.float64)
    top = a[y0][:, x0] * (1 - fx) + a[y0][:, x1] * fx
    bottom = a[y1][:, x0] * (1 - fx) + a[y1][:, x1] * fx
    return top * (1 - fy) + bottom * fy


def resize(img: GrayImage, w: int, h: int) -> GrayImage:
    """Bilinear resize (half-pixel centres, edge clamped)."""
    if w < 1 or h < 1:
        raise ImageError(f"target size must be positive, got {w}x{h}")
    if (h, w) == img.pixels.shape:
        return img
    out = _bilinear(img.pixels, h, w)
    return GrayImage(np.clip(_round_half_up(out), 0, 255).astype(np.uint8))


def mirror(img: GrayImage) -> GrayImage:
    return GrayImage(img.pixels[:, ::-1])


def zoom(img: GrayImage, factor: float) -> GrayImage:
    """Scale about the centre, keeping the original dimensions.

    ``factor > 1`` crops the centre and enlarges it; ``factor < 1`` shrinks
    the image and pads the border by edge replication.
    """
    if factor == 1.0:
        return img
    h, w = img.pixels.shape
    if factor > 1.0:
        ch = max(1, int(_round_half_up(h / factor)))
        cw = max(1, int(_round_half_up(w / factor)))
        y0 = (h - ch) // 2
        x0 = (w - cw) // 2
        return resize(GrayImage(img.pixels[y0:y0 + ch, x0:x0 + cw]), w, h)
    sh = max(1, int(_round_half_up(h * factor)))
    sw = max(1, int(_round_half_up(w * factor)))
    small = resize(img, sw, sh).pixels
    top = (h - sh) // 2
    left = (w - sw) // 2
    padded = np.pad(small, ((top, h - sh - top), (left, w - sw - left)), mode="edge")
    return GrayImage(padded)


def augment(img: GrayImage, p: AugmentParams, rng: np.random.Generator) -> GrayImage:
    """Random horizontal flip followed by a random zoom in ``[1-zf, 1+zf]``.

    Exactly two draws are taken from ``rng`` per call so that the stream
    position does not depend on the outcome.
    """
    flip = rng.random() < p.flip_probability
    factor = rng.uniform(1.0 - p.zoom_fraction, 1.0 + p.zoom_fraction)
    out = mirror(img) if flip else img
    if p.zoom_fraction > 0.0:
        out = zoom(out, float(factor))
    return out


@dataclass(frozen=True)
class PreprocessConfig:
    crop: CropSpec = field(default_factory=CropSpec)
    clahe: ClaheParams = field(default_factory=ClaheParams)
    augment: AugmentParams = field(default_factory=AugmentParams)
    target_width: int = 32
    target_height: int = 32
    augmentation: bool = False

    def to_dict(self) -> dict:
        return {
            "crop": vars(self.crop).copy(),
            "clahe": vars(self.clahe).copy(),
            "augment": vars(self.augment).copy(),
            "target_width": self.target_width,
            "target_height": self.target_height,
            "augmentation": self.augmentation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessConfig":
        return cls(
            crop=CropSpec(**d.get("crop", {})),
            clahe=ClaheParams(**d.get("clahe", {})),
            augment=AugmentParams(**d.get("augment", {})),
            target_width=int(d.get("target_width", 32)),
            target_height=int(d.get("target_height", 32)),
            augmentation=bool(d.get("augmentation", False)),
        )


def preprocess(img: GrayImage, cfg: PreprocessConfig, rng: np.random.Generator | None = None) -> np.ndarray:
    """crop -> CLAHE -> augment -> resize, returned as a ``(h, w, 1)`` array in [0, 1]."""
    out = segment_crop(img, cfg.crop)
    out = clahe(out, cfg.clahe)
    if cfg.augmentation:
        if rng is None:
            rng = np.random.default_rng(cfg.augment.seed)
        out = augment(out, cfg.augment, rng)
    out = resize(out, cfg.target_width, cfg.target_height)
    return (out.pixels.astype(np.float64) / 255.0)[:, :, None]


class Preprocessor(TransformerMixin, BaseEstimator):
    """Transformer wrapping :func:`preprocess` for a sequence of images.

    ``X`` is a sequence of :class:`GrayImage` (or 2-D uint8 arrays); the
    result has shape ``(n, target_height, target_width, 1)``.  With
    augmentation on, a single generator seeded from ``cfg.augment.seed`` is
    consumed in input order.
    """

    def __init__(self, config: PreprocessConfig | None = None):
        self.config = config

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        cfg = self.config or PreprocessConfig()
        rng = np.random.default_rng(cfg.augment.seed)
        images = [x if isinstance(x, GrayImage) else GrayImage(np.asarray(x)) for x in X]
        if not images:
            return np.zeros((0, cfg.target_height, cfg.target_width, 1))
        return np.stack([preprocess(im, cfg, rng) for im in images])


def read_image(path) -> GrayImage:
    """Load a PNG or binary PGM file; colour input is luma-converted (BT.601)."""
    try:
        im = Image.open(path)
    except UnidentifiedImageError as exc:
        raise ImageError(f"{path}: not a readable image") from exc
    with im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            arr = np.asarray(im, dtype=np.float64)
            peak = arr.max() if arr.size and arr.max() > 0 else 1.0
            return GrayImage(np.clip(_round_half_up(arr * 255.0 / peak), 0, 255).astype(np.uint8))
        if im.mode != "L":
            im = im.convert("L")
        return GrayImage(np.array(im, dtype=np.uint8))


def write_image(img: GrayImage, path) -> None:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
        path.write_bytes(header + img.pixels.tobytes())
    else:
        Image.fromarray(np.asarray(img.pixels)).save(path, format="PNG", optimize=False)
