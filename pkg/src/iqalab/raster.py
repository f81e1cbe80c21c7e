"""Image representation, file I/O, cropping and training augmentations.

A `Raster` is a channel-major float array in [0, 1] with 1 (gray) or 3
(RGB) channels.  File formats are 8-bit PNG plus binary PPM (P6) and
PGM (P5); no other formats are decoded here, compression artifacts are
synthesized by the distortion module instead of a codec.

The two permitted training augmentations are horizontal reflection and
right-angle rotation.  Both are pixel permutations, so they can never
alter the intensity statistics an observer would score.
"""

from __future__ import annotations

import io
import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    CorruptImageError,
    CropSizeError,
    MissingFileError,
    UnsupportedFormatError,
    UnwritablePathError,
)
from .rng import RngStream

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


class Raster:
    """Channel-major (C, H, W) image with float values in [0, 1]."""

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 3 or data.shape[0] not in (1, 3):
            raise ValueError(f"raster data must be (C,H,W) with C in {{1,3}}, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("raster contains non-finite values")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError("raster values outside [0,1]")
        self.data = data

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    def copy(self) -> "Raster":
        return Raster(self.data.copy())

    def to_rgb(self) -> "Raster":
        if self.channels == 3:
            return self
        return Raster(np.repeat(self.data, 3, axis=0))

    def __eq__(self, other):
        return isinstance(other, Raster) and np.array_equal(self.data, other.data)

    def __repr__(self):
        return f"Raster({self.channels}x{self.height}x{self.width})"


def _read_pnm(raw: bytes) -> np.ndarray:
    """Decode binary PGM (P5) / PPM (P6) into a uint8 (C,H,W) array."""
    pos = 2  # past magic
    fields = []
    while len(fields) < 3:
        # skip whitespace and comments between header fields
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos:pos + 1] == b"#":
            while pos < len(raw) and raw[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise CorruptImageError("truncated PNM header")
        fields.append(raw[start:pos])
    try:
        width, height, maxval = (int(f) for f in fields)
    except ValueError as e:
        raise CorruptImageError(f"bad PNM header: {e}") from None
    if maxval != 255:
        raise UnsupportedFormatError(f"only 8-bit PNM supported, maxval={maxval}")
    pos += 1  # single whitespace after maxval
    channels = 3 if raw[:2] == b"P6" else 1
    need = width * height * channels
    body = raw[pos:pos + need]
    if len(body) < need:
        raise CorruptImageError("truncated PNM pixel data")
    arr = np.frombuffer(body, dtype=np.uint8).reshape(height, width, channels)
    return np.moveaxis(arr, -1, 0)


def _write_pnm(arr: np.ndarray, path: str) -> None:
    channels, height, width = arr.shape
    magic = b"P6" if channels == 3 else b"P5"
    header = magic + f"\n{width} {height}\n255\n".encode("ascii")
    body = np.moveaxis(arr, 0, -1).tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body)


def load_image(path: str) -> Raster:
    """Load an 8-bit PNG / PPM / PGM file as a Raster scaled to [0, 1]."""
    if not os.path.isfile(path):
        raise MissingFileError(f"no such image file: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] == _PNG_MAGIC:
        try:
            img = Image.open(io.BytesIO(raw))
            img.load()
        except (UnidentifiedImageError, OSError, SyntaxError) as e:
            raise CorruptImageError(f"corrupt PNG {path}: {e}") from None
        if img.mode not in ("L", "RGB"):
            raise UnsupportedFormatError(
                f"unsupported PNG mode {img.mode!r} in {path} (8-bit L/RGB only)")
        arr = np.asarray(img, dtype=np.uint8)
        if arr.ndim == 2:
            arr = arr[None, :, :]
        else:
            arr = np.moveaxis(arr, -1, 0)
    elif raw[:2] in (b"P5", b"P6"):
        arr = _read_pnm(raw)
    else:
        raise UnsupportedFormatError(f"unsupported image format in {path}")
    return Raster(arr.astype(np.float64) / 255.0)


def save_image(r: Raster, path: str) -> None:
    """Write a Raster as 8-bit PNG / PPM / PGM, picked by extension."""
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        raise UnwritablePathError(f"parent directory does not exist: {parent}")
    arr = np.rint(r.data * 255.0).astype(np.uint8)
    ext = os.path.splitext(path)[1].lower()
    if ext == ".png":
        if r.channels == 1:
            img = Image.fromarray(arr[0], mode="L")
        else:
            img = Image.fromarray(np.moveaxis(arr, 0, -1), mode="RGB")
        try:
            img.save(path, format="PNG")
        except OSError as e:
            raise UnwritablePathError(f"cannot write {path}: {e}") from None
    elif ext in (".ppm", ".pgm", ".pnm"):
        _write_pnm(arr, path)
    else:
        raise UnsupportedFormatError(f"unsupported output extension {ext!r}")


def random_crop(r: Raster, w: int, h: int, rng: RngStream) -> Raster:
    """Uniformly placed contiguous w x h window of `r`."""
    if w > r.width or h > r.height:
        raise CropSizeError(f"crop {w}x{h} exceeds image {r.width}x{r.height}")
    x0 = int(rng.integers(0, r.width - w + 1))
    y0 = int(rng.integers(0, r.height - h + 1))
    return Raster(r.data[:, y0:y0 + h, x0:x0 + w].copy())


def center_crop(r: Raster, w: int, h: int) -> Raster:
    """Centered w x h window; odd margins are floored."""
    if w > r.width or h > r.height:
        raise CropSizeError(f"crop {w}x{h} exceeds image {r.width}x{r.height}")
    x0 = (r.width - w) // 2
    y0 = (r.height - h) // 2
    return Raster(r.data[:, y0:y0 + h, x0:x0 + w].copy())


def hflip(r: Raster) -> Raster:
    """Horizontal reflection (an involution)."""
    return Raster(r.data[:, :, ::-1].copy())


def rot90(r: Raster, k: int) -> Raster:
    """Rotate by k * 90 degrees counter-clockwise."""
    return Raster(np.rot90(r.data, k % 4, axes=(1, 2)).copy())


# The only augmentations allowed during training.  Scaling, shear,
# contrast, equalization, color and brightness changes are deliberately
# excluded: they alter the perceptual quality being scored.
TRAIN_AUGMENTATIONS = ("horizontal_flip", "right_angle_rotation")
ROTATION_ANGLES = (0, 90, 180, 270)


def augment(r: Raster, rng: RngStream) -> Raster:
    """Random horizontal flip (p=1/2) then a random right-angle rotation.

    Both operations permute pixels, so the multiset of pixel values is
    preserved exactly.
    """
    out = r
    if rng.random() < 0.5:
        out = hflip(out)
    k = int(rng.integers(0, 4))
    if k:
        out = rot90(out, k)
    return out
