"""Raster types, differential operators, Canny edges, and image formation.

Images are dense float64 rasters in linear light, stored (height, width,
channels) row-major with 1 or 3 channels. The multiplicative model
``composite = reflectance * shading`` is expressed through :func:`hadamard`.

The discrete gradient is a forward difference with replicate boundary
(last column/row of each component is zero). Its adjoint, a backward
difference, is exposed for hand-written backpropagation in the loss
kernels and the gradient-domain solvers.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import cv2
import numpy as np
from scipy import ndimage

from .errors import (
    DecodeError,
    DegenerateRegionError,
    DimensionError,
    FormatError,
    ParameterError,
)

# Rec.709 luminance weights; any fixed convex combination would do as a
# grayscale shading proxy, this is the standard one.
LUMA_WEIGHTS = np.array([0.2126, 0.7152, 0.0722], dtype=np.float64)

CIIF_MAGIC = b"CIIF"

EPS_LOG = 1e-4  # floor before entering log space


@dataclass(frozen=True, eq=False)
class Image:
    """Dense float raster, shape (height, width, channels), channels in {1, 3}.

    Intensity images are finite and nonnegative; rasters that carry signed
    data (difference fields, loss gradients) reuse the same container, so
    nonnegativity is checked only where the intensity contract applies
    (see :meth:`require_intensity`).
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise DimensionError(f"expected (h, w, 1|3) raster, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"empty raster: shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise ParameterError("raster contains non-finite values")
        object.__setattr__(self, "data", np.ascontiguousarray(arr))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def require_intensity(self) -> "Image":
        if (self.data < 0).any():
            raise ParameterError("intensity raster contains negative values")
        return self

    def same_shape(self, other: "Image") -> bool:
        return self.data.shape == other.data.shape


@dataclass(frozen=True, eq=False)
class GradientField:
    """Forward-difference components of a raster; gx and gy share its shape."""

    gx: Image
    gy: Image

    def __post_init__(self):
        if self.gx.data.shape != self.gy.data.shape:
            raise DimensionError("gx and gy shapes differ")


@dataclass(frozen=True)
class EdgeSet:
    """Set of integer (x, y) pixel coordinates on a raster of known size."""

    width: int
    height: int
    pixels: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        px = frozenset((int(x), int(y)) for x, y in self.pixels)
        for x, y in px:
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ParameterError(f"edge pixel ({x}, {y}) outside {self.width}x{self.height}")
        object.__setattr__(self, "pixels", px)

    def __len__(self) -> int:
        return len(self.pixels)

    def mask(self) -> np.ndarray:
        m = np.zeros((self.height, self.width), dtype=bool)
        if self.pixels:
            xs, ys = zip(*self.pixels)
            m[list(ys), list(xs)] = True
        return m

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> "EdgeSet":
        ys, xs = np.nonzero(mask)
        return cls(mask.shape[1], mask.shape[0], frozenset(zip(xs.tolist(), ys.tolist())))


# ---------------------------------------------------------------------------
# pixel-set helpers shared with the metrics and annotation modules

def support_mask(support, width: int, height: int) -> np.ndarray:
    """Boolean (h, w) mask from an EdgeSet, a bool array, or (x, y) pairs."""
    if isinstance(support, EdgeSet):
        if support.width != width or support.height != height:
            raise DimensionError("support raster size mismatch")
        return support.mask()
    if isinstance(support, np.ndarray) and support.dtype == bool:
        if support.shape != (height, width):
            raise DimensionError("support mask shape mismatch")
        return support
    m = np.zeros((height, width), dtype=bool)
    for x, y in support:
        if not (0 <= x < width and 0 <= y < height):
            raise ParameterError(f"support pixel ({x}, {y}) out of bounds")
        m[int(y), int(x)] = True
    return m


# ---------------------------------------------------------------------------
# forward differences and their adjoints on raw (h, w, c) arrays

def fdx(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    out[:, :-1, ...] = a[:, 1:, ...] - a[:, :-1, ...]
    return out


def fdy(a: np.ndarray) -> np.ndarray:
    out = np.zeros_like(a)
    out[:-1, ...] = a[1:, ...] - a[:-1, ...]
    return out


def fdx_adj(u: np.ndarray) -> np.ndarray:
    # transpose of fdx: out[x] = u[x-1] - u[x], first column -u[0],
    # last column u[w-2] (its own u entry never contributes)
    out = np.zeros_like(u)
    if u.shape[1] == 1:
        return out
    out[:, 0, ...] = -u[:, 0, ...]
    out[:, 1:-1, ...] = u[:, :-2, ...] - u[:, 1:-1, ...]
    out[:, -1, ...] = u[:, -2, ...]
    return out


def fdy_adj(u: np.ndarray) -> np.ndarray:
    out = np.zeros_like(u)
    if u.shape[0] == 1:
        return out
    out[0, ...] = -u[0, ...]
    out[1:-1, ...] = u[:-2, ...] - u[1:-1, ...]
    out[-1, ...] = u[-2, ...]
    return out


def gradient(img: Image) -> GradientField:
    """Per-channel forward differences with replicate boundary."""
    return GradientField(Image(fdx(img.data)), Image(fdy(img.data)))


def gradient_magnitude(gf: GradientField) -> Image:
    """Per-pixel sqrt of the summed squared components, channels pooled."""
    sq = np.sum(gf.gx.data ** 2 + gf.gy.data ** 2, axis=2, keepdims=True)
    return Image(np.sqrt(sq))


# ---------------------------------------------------------------------------
# color and composition

def to_luminance(img: Image) -> Image:
    """Rec.709 luminance for RGB; single-channel input passes through."""
    if img.channels == 1:
        return img
    lum = img.data @ LUMA_WEIGHTS
    return Image(lum[:, :, None])


def hadamard(r: Image, s: Image) -> Image:
    """Per-pixel, per-channel product; 1-channel s broadcasts over r."""
    if r.height != s.height or r.width != s.width:
        raise DimensionError(
            f"size mismatch {r.width}x{r.height} vs {s.width}x{s.height}"
        )
    if s.channels not in (1, r.channels):
        raise DimensionError(f"cannot broadcast {s.channels} channels over {r.channels}")
    return Image(r.data * s.data)


def mean_normalize(img: Image, support) -> Image:
    """Scale img so its mean over the support pixels is one.

    One scalar scale per call; for multi-channel rasters the mean pools all
    channels at the support pixels.
    """
    m = support_mask(support, img.width, img.height)
    n = int(m.sum())
    if n == 0:
        raise DegenerateRegionError("empty normalization support")
    mean = float(img.data[m].mean())
    if mean <= 0:
        raise DegenerateRegionError(f"support mean {mean} is not positive")
    return Image(img.data / mean)


# ---------------------------------------------------------------------------
# Canny edge detection

_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.float64) / 8.0
_SOBEL_Y = _SOBEL_X.T

# quantized gradient directions and their unit pixel offsets; ties during
# non-maximum suppression keep the lower-coordinate pixel so a symmetric
# 2-pixel ridge resolves to its left/top side deterministically
_DIR_OFFSETS = {0: (1, 0), 1: (1, 1), 2: (0, 1), 3: (-1, 1)}


def _sobel(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    gx = ndimage.convolve(a, _SOBEL_X, mode="nearest")
    gy = ndimage.convolve(a, _SOBEL_Y, mode="nearest")
    return gx, gy


def canny(img: Image, sigma: float = 1.4, low: float = 0.05, high: float = 0.15) -> EdgeSet:
    """Canny edges of a 1-channel image.

    Gaussian blur, Sobel gradients (normalized so a unit-slope ramp reads
    1.0 per pixel), non-maximum suppression along the quantized gradient
    direction, then double threshold with hysteresis. Thresholds apply to
    the blurred gradient magnitude, strictly.
    """
    if img.channels != 1:
        raise DimensionError("canny expects a 1-channel image; convert to luminance first")
    if not (0 < low < high):
        raise ParameterError(f"thresholds must satisfy 0 < low < high, got ({low}, {high})")

    a = img.data[:, :, 0]
    if sigma > 0:
        a = ndimage.gaussian_filter(a, sigma, mode="nearest")
    gx, gy = _sobel(a)
    mag = np.hypot(gx, gy)

    # quantize direction to 4 bins over [0, pi)
    angle = np.mod(np.arctan2(gy, gx), np.pi)
    dbin = np.mod(np.round(angle / (np.pi / 4)).astype(int), 4)

    h, w = mag.shape
    padded = np.zeros((h + 2, w + 2))
    padded[1:-1, 1:-1] = mag
    keep = np.zeros((h, w), dtype=bool)
    for d, (ox, oy) in _DIR_OFFSETS.items():
        back = padded[1 - oy : 1 - oy + h, 1 - ox : 1 - ox + w]
        fwd = padded[1 + oy : 1 + oy + h, 1 + ox : 1 + ox + w]
        sel = dbin == d
        keep |= sel & (mag > back) & (mag >= fwd)

    weak = keep & (mag > low)
    strong = keep & (mag > high)
    if not strong.any():
        return EdgeSet(w, h, frozenset())

    # hysteresis: keep weak components seeded by at least one strong pixel
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=bool))
    good = np.zeros(n + 1, dtype=bool)
    good[np.unique(labels[strong])] = True
    good[0] = False
    return EdgeSet.from_mask(good[labels])


# ---------------------------------------------------------------------------
# PNG and CIIF codecs

def _srgb_to_linear(x: np.ndarray) -> np.ndarray:
    return np.where(x <= 0.04045, x / 12.92, ((x + 0.055) / 1.055) ** 2.4)


def load_image(data: bytes, colorspace: str = "linear") -> Image:
    """Decode an 8- or 16-bit PNG (gray or RGB; alpha dropped) to [0, 1].

    colorspace "srgb" applies the standard sRGB-to-linear transfer per
    channel after scaling; "linear" takes the stored values as-is.
    """
    if colorspace not in ("srgb", "linear"):
        raise ParameterError(f"unknown colorspace {colorspace!r}")
    raw = cv2.imdecode(np.frombuffer(data, dtype=np.uint8), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DecodeError("could not decode PNG bytes")
    if raw.dtype == np.uint8:
        scale = 255.0
    elif raw.dtype == np.uint16:
        scale = 65535.0
    else:
        raise FormatError(f"unsupported PNG sample type {raw.dtype}")
    arr = raw.astype(np.float64) / scale
    if arr.ndim == 3:
        if arr.shape[2] == 4:
            arr = arr[:, :, :3]
        if arr.shape[2] == 3:
            arr = arr[:, :, ::-1]  # BGR -> RGB
        elif arr.shape[2] != 1:
            raise FormatError(f"unsupported channel count {arr.shape[2]}")
    if colorspace == "srgb":
        arr = _srgb_to_linear(arr)
    return Image(arr)


def save_png(img: Image, exposure: float = 1.0) -> bytes:
    """Encode as 16-bit PNG after clamping exposure-scaled values to [0, 1]."""
    arr = np.clip(img.data * exposure, 0.0, 1.0)
    q = np.round(arr * 65535.0).astype(np.uint16)
    if img.channels == 3:
        q = q[:, :, ::-1]  # RGB -> BGR
    else:
        q = q[:, :, 0]
    ok, buf = cv2.imencode(".png", q)
    if not ok:
        raise FormatError("PNG encoding failed")
    return buf.tobytes()


def save_ciif(img: Image) -> bytes:
    """Lossless float32 blob: magic, u32 width/height/channels, row-major data."""
    header = CIIF_MAGIC + struct.pack("<III", img.width, img.height, img.channels)
    return header + img.data.astype("<f4").tobytes()


def load_ciif(data: bytes) -> Image:
    if len(data) < 16 or data[:4] != CIIF_MAGIC:
        raise FormatError("not a CIIF blob")
    w, h, c = struct.unpack("<III", data[4:16])
    if c not in (1, 3):
        raise FormatError(f"CIIF channel count {c} unsupported")
    expect = 16 + 4 * w * h * c
    if len(data) != expect:
        raise FormatError(f"CIIF payload length {len(data)} != {expect}")
    arr = np.frombuffer(data, dtype="<f4", offset=16).reshape(h, w, c)
    return Image(arr.astype(np.float64))
