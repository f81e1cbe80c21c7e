"""Seeded synthesis of the 25-family x 5-level distortion corpus.

Families, identified by type_id 1..25, grouped by category; the listed
parameter runs level 1 -> 5 and is strictly monotone in severity:

blur
  1 gaussian_blur    sigma            0.8, 1.4, 2.2, 3.4, 5.0
  2 lens_blur        disk radius      1, 2, 3, 5, 7
  3 motion_blur      kernel length    3, 5, 9, 13, 19
color
  4 color_diffusion  chroma sigma     1.0, 2.0, 3.5, 5.5, 8.0
  5 hue_shift        degrees          8, 16, 28, 45, 70
  6 channel_quantize levels/channel   24, 16, 10, 6, 4
  7 saturate_up      chroma gain      1.35, 1.8, 2.4, 3.2, 4.5
  8 saturate_down    chroma gain      0.7, 0.5, 0.34, 0.2, 0.08
compression
  9 block_dct_quant  quant step       0.04, 0.08, 0.14, 0.24, 0.42
 10 band_zero        subbands zeroed  1, 3, 4, 6, 9
noise
 11 white_noise      sigma            0.02, 0.05, 0.09, 0.16, 0.28
 12 colored_noise    sigma            0.03, 0.06, 0.12, 0.20, 0.32
 13 impulse_noise    pixel fraction   0.01, 0.03, 0.07, 0.14, 0.25
 14 speckle          sigma            0.08, 0.16, 0.30, 0.50, 0.80
 15 noise_residual   sigma            0.06, 0.12, 0.22, 0.38, 0.60
luminance
 16 brighten         offset           0.06, 0.12, 0.20, 0.30, 0.42
 17 darken           offset           0.06, 0.12, 0.20, 0.30, 0.42
 18 mean_shift       pull strength    0.25, 0.5, 0.75, 1.0, 1.35
 19 contrast_stretch gain             1.25, 1.6, 2.1, 2.8, 3.8
 20 contrast_compress gain            0.8, 0.62, 0.45, 0.30, 0.18
spatial
 21 pixel_jitter     amplitude (px)   0.6, 1.1, 1.8, 2.8, 4.2
 22 pixelate         block size       2, 3, 5, 8, 13
 23 dither           gray levels      12, 8, 5, 3, 2
 24 patch_erase      patch count      2, 4, 7, 11, 16
 25 oversharpen      unsharp gain     0.8, 1.6, 2.8, 4.5, 7.0

Stochastic families (11-15, 21, 24) draw all their random fields at unit
scale before the level parameter is applied, so with the same seed a
level sweep perturbs the image along the same direction with growing
magnitude.  Chroma-based families (4, 5, 7, 8) are mathematically the
identity on grayscale input.

The per-image corpus seed is mix(base_seed, source index, class index),
making every entry reproducible in isolation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np
from scipy import fft as sfft
from scipy import ndimage

from .errors import (
    DuplicatePathError,
    EmptySourceError,
    ImageTooSmallError,
    ManifestError,
    RangeError,
)
from .raster import Raster, load_image, save_image
from .rng import RngStream, mix

NUM_TYPES = 25
NUM_LEVELS = 5
NUM_CLASSES = NUM_TYPES * NUM_LEVELS
MIN_SIZE = 16

MANIFEST_HEADER = ("source", "distorted", "type_id", "level", "label", "seed")
MANIFEST_NAME = "manifest.csv"


@dataclass(frozen=True)
class DistortionSpec:
    """One corpus class: a family id and a severity level."""

    type_id: int
    level: int

    def __post_init__(self):
        if not (1 <= self.type_id <= NUM_TYPES):
            raise RangeError(f"type_id must be in 1..{NUM_TYPES}, got {self.type_id}")
        if not (1 <= self.level <= NUM_LEVELS):
            raise RangeError(f"level must be in 1..{NUM_LEVELS}, got {self.level}")

    @property
    def label(self) -> str:
        return f"{self.type_id}_{self.level}"

    @property
    def class_index(self) -> int:
        return (self.type_id - 1) * NUM_LEVELS + (self.level - 1)


def label(spec: DistortionSpec) -> str:
    return spec.label


def parse_label(text: str) -> DistortionSpec:
    parts = text.split("_")
    if len(parts) != 2:
        raise RangeError(f"malformed distortion label {text!r}")
    try:
        return DistortionSpec(int(parts[0]), int(parts[1]))
    except ValueError as exc:
        raise RangeError(f"malformed distortion label {text!r}") from exc


def spec_from_class_index(index: int) -> DistortionSpec:
    if not (0 <= index < NUM_CLASSES):
        raise RangeError(f"class index must be in 0..{NUM_CLASSES - 1}, got {index}")
    return DistortionSpec(index // NUM_LEVELS + 1, index % NUM_LEVELS + 1)


FULL_SWEEP = tuple(DistortionSpec(t, l)
                   for t in range(1, NUM_TYPES + 1)
                   for l in range(1, NUM_LEVELS + 1))


# --- kernels ----------------------------------------------------------------

def _gauss_blur(data: np.ndarray, sigma: float) -> np.ndarray:
    radius = max(1, int(np.ceil(3.0 * sigma)))
    t = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    k /= k.sum()
    out = ndimage.convolve1d(data, k, axis=1, mode="nearest")
    return ndimage.convolve1d(out, k, axis=2, mode="nearest")


def _disk_kernel(radius: int) -> np.ndarray:
    t = np.arange(-radius, radius + 1)
    mask = (t[:, None] ** 2 + t[None, :] ** 2) <= radius ** 2
    return mask / mask.sum()


def _chroma_split(data: np.ndarray):
    m = data.mean(axis=0, keepdims=True)
    return m, data - m


def _hue_matrix(degrees: float) -> np.ndarray:
    # rotation about the gray axis (1,1,1)/sqrt(3)
    th = np.deg2rad(degrees)
    a = np.full(3, 1.0 / np.sqrt(3.0))
    cross = np.array([[0, -a[2], a[1]], [a[2], 0, -a[0]], [-a[1], a[0], 0]])
    return np.cos(th) * np.eye(3) + np.sin(th) * cross + (1 - np.cos(th)) * np.outer(a, a)


def _pad_to_multiple(data: np.ndarray, m: int):
    h, w = data.shape[1], data.shape[2]
    ph = (-h) % m
    pw = (-w) % m
    if ph or pw:
        data = np.pad(data, ((0, 0), (0, ph), (0, pw)), mode="edge")
    return data, h, w


def _dwt_axis(a: np.ndarray, axis: int):
    even = a.take(range(0, a.shape[axis], 2), axis=axis)
    odd = a.take(range(1, a.shape[axis], 2), axis=axis)
    s = np.sqrt(2.0)
    return (even + odd) / s, (even - odd) / s


def _idwt_axis(lo: np.ndarray, hi: np.ndarray, axis: int) -> np.ndarray:
    shape = list(lo.shape)
    shape[axis] *= 2
    out = np.empty(shape, dtype=np.float64)
    ev = [slice(None)] * out.ndim
    od = [slice(None)] * out.ndim
    ev[axis] = slice(0, None, 2)
    od[axis] = slice(1, None, 2)
    s = np.sqrt(2.0)
    out[tuple(ev)] = (lo + hi) / s
    out[tuple(od)] = (lo - hi) / s
    return out


_BAND_ORDER = [("hh", 1), ("hl", 1), ("lh", 1),
               ("hh", 2), ("hl", 2), ("lh", 2),
               ("hh", 3), ("hl", 3), ("lh", 3)]


def _band_zero(data: np.ndarray, zero_count: int) -> np.ndarray:
    # 3-scale orthonormal Haar transform; zero the finest subbands first
    padded, h, w = _pad_to_multiple(data, 8)
    bands = {}
    cur = padded
    for lv in (1, 2, 3):
        lo_r, hi_r = _dwt_axis(cur, 1)
        ll, lh = _dwt_axis(lo_r, 2)
        hl, hh = _dwt_axis(hi_r, 2)
        bands[("lh", lv)], bands[("hl", lv)], bands[("hh", lv)] = lh, hl, hh
        cur = ll
    for key in _BAND_ORDER[:zero_count]:
        bands[key] = np.zeros_like(bands[key])
    for lv in (3, 2, 1):
        lo_r = _idwt_axis(cur, bands[("lh", lv)], 2)
        hi_r = _idwt_axis(bands[("hl", lv)], bands[("hh", lv)], 2)
        cur = _idwt_axis(lo_r, hi_r, 1)
    return cur[:, :h, :w]


def _block_dct_quant(data: np.ndarray, step: float) -> np.ndarray:
    padded, h, w = _pad_to_multiple(data, 8)
    c, hp, wp = padded.shape
    blocks = padded.reshape(c, hp // 8, 8, wp // 8, 8).transpose(0, 1, 3, 2, 4)
    coef = sfft.dctn(blocks, type=2, norm="ortho", axes=(-2, -1))
    i = np.arange(8)
    table = step * (1.0 + (i[:, None] + i[None, :]) / 2.0)
    coef = np.round(coef / table) * table
    blocks = sfft.idctn(coef, type=2, norm="ortho", axes=(-2, -1))
    out = blocks.transpose(0, 1, 3, 2, 4).reshape(c, hp, wp)
    return out[:, :h, :w]


def _bayer_matrix(n: int) -> np.ndarray:
    if n == 1:
        return np.zeros((1, 1))
    b = _bayer_matrix(n // 2)
    return np.block([[4 * b + 0, 4 * b + 2], [4 * b + 3, 4 * b + 1]])


_BAYER8 = (_bayer_matrix(8) + 0.5) / 64.0


# --- family implementations --------------------------------------------------
# Each takes (data (C,H,W), level parameter, rng) and returns unclipped floats.

def _f_gaussian_blur(x, p, rng):
    return _gauss_blur(x, p)


def _f_lens_blur(x, p, rng):
    k = _disk_kernel(int(p))
    return np.stack([ndimage.convolve(ch, k, mode="nearest") for ch in x])


def _f_motion_blur(x, p, rng):
    k = np.full(int(p), 1.0 / int(p))
    return ndimage.convolve1d(x, k, axis=2, mode="nearest")


def _f_color_diffusion(x, p, rng):
    m, chroma = _chroma_split(x)
    return m + _gauss_blur(chroma, p)


def _f_hue_shift(x, p, rng):
    if x.shape[0] == 1:
        return x.copy()
    return np.einsum("ij,jhw->ihw", _hue_matrix(p), x)


def _f_channel_quantize(x, p, rng):
    q = int(p) - 1
    return np.round(x * q) / q


def _f_saturate(x, p, rng):
    m, chroma = _chroma_split(x)
    return m + p * chroma


def _f_block_dct_quant(x, p, rng):
    return _block_dct_quant(x, p)


def _f_band_zero(x, p, rng):
    return _band_zero(x, int(p))


def _f_white_noise(x, p, rng):
    return x + p * rng.normal(size=x.shape)


def _f_colored_noise(x, p, rng):
    u = _gauss_blur(rng.normal(size=x.shape), 1.5)
    return x + p * u / u.std()


def _f_impulse_noise(x, p, rng):
    u = rng.random(x.shape[1:])
    salt = rng.random(x.shape[1:]) < 0.5
    out = x.copy()
    hit = u < p
    out[:, hit & salt] = 1.0
    out[:, hit & ~salt] = 0.0
    return out


def _f_speckle(x, p, rng):
    return x * (1.0 + p * rng.normal(size=x.shape))


def _f_noise_residual(x, p, rng):
    noisy = np.clip(x + p * rng.normal(size=x.shape), 0.0, 1.0)
    return _gauss_blur(noisy, 1.2)


def _f_brighten(x, p, rng):
    return x + p


def _f_darken(x, p, rng):
    return x - p


def _f_mean_shift(x, p, rng):
    return x + p * (0.5 - x.mean())


def _f_contrast(x, p, rng):
    return 0.5 + p * (x - 0.5)


def _f_pixel_jitter(x, p, rng):
    h, w = x.shape[1], x.shape[2]
    dy = rng.uniform(-1.0, 1.0, (h, w))
    dx = rng.uniform(-1.0, 1.0, (h, w))
    rows = np.clip(np.arange(h)[:, None] + np.rint(p * dy).astype(int), 0, h - 1)
    cols = np.clip(np.arange(w)[None, :] + np.rint(p * dx).astype(int), 0, w - 1)
    return x[:, rows, cols]


def _f_pixelate(x, p, rng):
    b = int(p)
    h, w = x.shape[1], x.shape[2]
    ri = np.arange(0, h, b)
    ci = np.arange(0, w, b)
    sums = np.add.reduceat(np.add.reduceat(x, ri, axis=1), ci, axis=2)
    rc = np.diff(np.append(ri, h))
    cc = np.diff(np.append(ci, w))
    means = sums / (rc[:, None] * cc[None, :])
    return means.repeat(rc, axis=1).repeat(cc, axis=2)


def _f_dither(x, p, rng):
    q = int(p) - 1
    h, w = x.shape[1], x.shape[2]
    tile = np.tile(_BAYER8, (-(-h // 8), -(-w // 8)))[:h, :w]
    return np.floor(x * q + tile) / q


def _f_patch_erase(x, p, rng):
    h, w = x.shape[1], x.shape[2]
    side = max(2, round(0.12 * min(h, w)))
    # all 16 positions drawn up front so level k erases a prefix of them
    max_patches = 16
    ys = [int(rng.integers(0, h - side + 1)) for _ in range(max_patches)]
    xs = [int(rng.integers(0, w - side + 1)) for _ in range(max_patches)]
    out = x.copy()
    for y0, x0 in zip(ys[: int(p)], xs[: int(p)]):
        out[:, y0:y0 + side, x0:x0 + side] = 0.5
    return out


def _f_oversharpen(x, p, rng):
    return x + p * (x - _gauss_blur(x, 1.5))


@dataclass(frozen=True)
class Family:
    """One distortion family: id, name, category and its 5-level parameter run."""

    type_id: int
    name: str
    category: str
    param_name: str
    params: tuple
    fn: callable


_FAMILIES = (
    Family(1, "gaussian_blur", "blur", "sigma", (0.8, 1.4, 2.2, 3.4, 5.0), _f_gaussian_blur),
    Family(2, "lens_blur", "blur", "radius", (1, 2, 3, 5, 7), _f_lens_blur),
    Family(3, "motion_blur", "blur", "length", (3, 5, 9, 13, 19), _f_motion_blur),
    Family(4, "color_diffusion", "color", "sigma", (1.0, 2.0, 3.5, 5.5, 8.0), _f_color_diffusion),
    Family(5, "hue_shift", "color", "degrees", (8, 16, 28, 45, 70), _f_hue_shift),
    Family(6, "channel_quantize", "color", "levels", (24, 16, 10, 6, 4), _f_channel_quantize),
    Family(7, "saturate_up", "color", "gain", (1.35, 1.8, 2.4, 3.2, 4.5), _f_saturate),
    Family(8, "saturate_down", "color", "gain", (0.7, 0.5, 0.34, 0.2, 0.08), _f_saturate),
    Family(9, "block_dct_quant", "compression", "step", (0.04, 0.08, 0.14, 0.24, 0.42), _f_block_dct_quant),
    Family(10, "band_zero", "compression", "subbands", (1, 3, 4, 6, 9), _f_band_zero),
    Family(11, "white_noise", "noise", "sigma", (0.02, 0.05, 0.09, 0.16, 0.28), _f_white_noise),
    Family(12, "colored_noise", "noise", "sigma", (0.03, 0.06, 0.12, 0.20, 0.32), _f_colored_noise),
    Family(13, "impulse_noise", "noise", "fraction", (0.01, 0.03, 0.07, 0.14, 0.25), _f_impulse_noise),
    Family(14, "speckle", "noise", "sigma", (0.08, 0.16, 0.30, 0.50, 0.80), _f_speckle),
    Family(15, "noise_residual", "noise", "sigma", (0.06, 0.12, 0.22, 0.38, 0.60), _f_noise_residual),
    Family(16, "brighten", "luminance", "offset", (0.06, 0.12, 0.20, 0.30, 0.42), _f_brighten),
    Family(17, "darken", "luminance", "offset", (0.06, 0.12, 0.20, 0.30, 0.42), _f_darken),
    Family(18, "mean_shift", "luminance", "strength", (0.25, 0.5, 0.75, 1.0, 1.35), _f_mean_shift),
    Family(19, "contrast_stretch", "luminance", "gain", (1.25, 1.6, 2.1, 2.8, 3.8), _f_contrast),
    Family(20, "contrast_compress", "luminance", "gain", (0.8, 0.62, 0.45, 0.30, 0.18), _f_contrast),
    Family(21, "pixel_jitter", "spatial", "amplitude", (0.6, 1.1, 1.8, 2.8, 4.2), _f_pixel_jitter),
    Family(22, "pixelate", "spatial", "block", (2, 3, 5, 8, 13), _f_pixelate),
    Family(23, "dither", "spatial", "levels", (12, 8, 5, 3, 2), _f_dither),
    Family(24, "patch_erase", "spatial", "patches", (2, 4, 7, 11, 16), _f_patch_erase),
    Family(25, "oversharpen", "spatial", "gain", (0.8, 1.6, 2.8, 4.5, 7.0), _f_oversharpen),
)

# families whose per-pixel error must grow strictly with level
STRICT_CATEGORIES = ("noise", "blur", "compression")


def catalogue() -> tuple:
    """All 25 family descriptors in type_id order."""
    return _FAMILIES


def family(type_id: int) -> Family:
    if not (1 <= type_id <= NUM_TYPES):
        raise RangeError(f"type_id must be in 1..{NUM_TYPES}, got {type_id}")
    return _FAMILIES[type_id - 1]


def apply(r: Raster, spec: DistortionSpec, rng: RngStream) -> Raster:
    """Distort a raster; same (raster, spec, rng seed) always gives the same pixels."""
    if r.height < MIN_SIZE or r.width < MIN_SIZE:
        raise ImageTooSmallError(
            f"image {r.height}x{r.width} below the {MIN_SIZE}x{MIN_SIZE} distortion minimum")
    fam = family(spec.type_id)
    out = fam.fn(r.data, fam.params[spec.level - 1], rng)
    return Raster(np.clip(out, 0.0, 1.0))


def pixel_rmse(a: Raster, b: Raster) -> float:
    """Full-reference per-pixel RMSE between two equal-shaped rasters."""
    if a.data.shape != b.data.shape:
        raise RangeError(f"shape mismatch: {a.data.shape} vs {b.data.shape}")
    return float(np.sqrt(np.mean((a.data - b.data) ** 2)))


def load_reference_image() -> Raster:
    """The RGB texture card shipped with the package."""
    path = resources.files("iqalab").joinpath("data/reference.png")
    with resources.as_file(path) as p:
        return load_image(p)


# --- corpus generation --------------------------------------------------------

@dataclass(frozen=True)
class CorpusEntry:
    source: str
    distorted: str
    spec: DistortionSpec
    seed: int


@dataclass
class CorpusManifest:
    """Successful corpus entries plus any per-entry write failures."""

    out_dir: Path
    entries: list
    failures: list

    def write_csv(self, path: Path | None = None) -> Path:
        path = Path(path) if path is not None else self.out_dir / MANIFEST_NAME
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(MANIFEST_HEADER)
            for e in self.entries:
                w.writerow([e.source, e.distorted, e.spec.type_id, e.spec.level,
                            e.spec.label, e.seed])
        return path


def read_corpus_manifest(path) -> list:
    """Entries from a corpus manifest CSV; distorted paths stay relative."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(MANIFEST_HEADER):
            raise ManifestError(f"bad corpus manifest header in {path}: {header}")
        out = []
        for row in reader:
            if len(row) != len(MANIFEST_HEADER):
                raise ManifestError(f"bad corpus manifest row in {path}: {row}")
            spec = DistortionSpec(int(row[2]), int(row[3]))
            if spec.label != row[4]:
                raise ManifestError(f"label {row[4]!r} does not match spec {spec.label!r}")
            out.append(CorpusEntry(row[0], row[1], spec, int(row[5])))
    return out


SOURCE_EXTENSIONS = (".png", ".ppm", ".pgm")


def generate_corpus(source_dir, out_dir, specs=None, base_seed: int = 0) -> CorpusManifest:
    """Distort every source image under every spec and write a manifest.

    Output files are named "<stem>_<label>.png".  Per-entry failures are
    collected on the manifest instead of aborting the sweep.
    """
    source_dir = Path(source_dir)
    out_dir = Path(out_dir)
    sources = sorted(p for p in source_dir.iterdir()
                     if p.suffix.lower() in SOURCE_EXTENSIONS) if source_dir.is_dir() else []
    if not sources:
        raise EmptySourceError(f"no source images in {source_dir}")
    stems = [p.stem for p in sources]
    if len(set(stems)) != len(stems):
        raise DuplicatePathError(f"duplicate source stems in {source_dir}")
    if specs is None:
        specs = FULL_SWEEP
    out_dir.mkdir(parents=True, exist_ok=True)
    entries, failures = [], []
    for src_index, src in enumerate(sources):
        try:
            image = load_image(src)
        except Exception as exc:
            failures.append((src.name, "", f"{type(exc).__name__}: {exc}"))
            continue
        for spec in specs:
            seed = mix(base_seed, src_index, spec.class_index)
            name = f"{src.stem}_{spec.label}.png"
            try:
                distorted = apply(image, spec, RngStream(seed))
                save_image(distorted, out_dir / name)
            except Exception as exc:
                failures.append((src.name, name, f"{type(exc).__name__}: {exc}"))
                continue
            entries.append(CorpusEntry(src.name, name, spec, seed))
    manifest = CorpusManifest(out_dir, entries, failures)
    manifest.write_csv()
    return manifest
