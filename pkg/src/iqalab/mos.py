"""Subjective-score aggregation: ratings -> MOS, screening, histograms.

A `RatingTable` holds one score in [0, 1] per (image, observer) pair.
`aggregate` turns it into per-image `MosRecord`s (mean + population
variance).  `screen_outliers` drops whole observers that either
anti-correlate with the leave-one-out consensus or deviate by more than
a z-threshold on too many images.  `mos_histogram` bins MOS values over
[0, 1] with right-closed bins: bin i covers (lo, hi], and 0.0 falls in
the first bin, so {0.0, 0.5, 1.0} with 2 bins counts as [2, 1].

CSV formats:
  ratings    "image_id,observer_id,score,timestamp"
  mos        "image_id,mos,variance,n_raters"
  histogram  "bin_lo,bin_hi,count"
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DegenerateInputError,
    EmptySourceError,
    ManifestError,
    MissingFileError,
    RangeError,
)

RATINGS_HEADER = ("image_id", "observer_id", "score", "timestamp")
MOS_HEADER = ("image_id", "mos", "variance", "n_raters")
HISTOGRAM_HEADER = ("bin_lo", "bin_hi", "count")

DEFAULT_BINS = 100
DEFAULT_Z_THRESHOLD = 3.0
DEFAULT_CORRELATION_FLOOR = 0.5
DEFAULT_Z_FRACTION = 0.2


@dataclass(frozen=True)
class Rating:
    image_id: str
    observer_id: str
    score: float
    timestamp: float = 0.0

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise RangeError(f"score must be in [0, 1], got {self.score}")


class RatingTable:
    """Immutable collection of ratings, one per (image, observer)."""

    def __init__(self, ratings):
        ratings = tuple(ratings)
        seen = set()
        for r in ratings:
            key = (r.image_id, r.observer_id)
            if key in seen:
                raise ManifestError(f"duplicate rating for image {r.image_id!r} "
                                    f"by observer {r.observer_id!r}")
            seen.add(key)
        self.ratings = ratings

    def __len__(self):
        return len(self.ratings)

    @property
    def image_ids(self) -> list:
        return sorted({r.image_id for r in self.ratings})

    @property
    def observer_ids(self) -> list:
        return sorted({r.observer_id for r in self.ratings})

    def by_image(self) -> dict:
        out: dict = {}
        for r in self.ratings:
            out.setdefault(r.image_id, []).append(r)
        return out

    def without_observers(self, observer_ids) -> "RatingTable":
        drop = set(observer_ids)
        return RatingTable(r for r in self.ratings if r.observer_id not in drop)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(RATINGS_HEADER)
            for r in self.ratings:
                w.writerow([r.image_id, r.observer_id, repr(r.score), repr(r.timestamp)])

    @classmethod
    def read_csv(cls, path) -> "RatingTable":
        path = Path(path)
        if not path.is_file():
            raise MissingFileError(f"no ratings file at {path}")
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header != list(RATINGS_HEADER):
                raise ManifestError(f"bad ratings header in {path}: {header}")
            ratings = []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != 4:
                    raise ManifestError(f"bad ratings row in {path}: {row}")
                try:
                    score = float(row[2])
                    timestamp = float(row[3]) if row[3] else 0.0
                except ValueError:
                    raise ManifestError(
                        f"{path}:{lineno}: non-numeric score/timestamp in {row}"
                    ) from None
                ratings.append(Rating(row[0], row[1], score, timestamp))
        return cls(ratings)


@dataclass(frozen=True)
class MosRecord:
    image_id: str
    mos: float
    variance: float
    n_raters: int


def aggregate(table: RatingTable, image_ids=None, variance: str = "population") -> list:
    """Per-image mean opinion score and score variance, sorted by image id."""
    if variance not in ("population", "sample"):
        raise ConfigError(f"variance must be 'population' or 'sample', got {variance!r}")
    ddof = 0 if variance == "population" else 1
    groups = table.by_image()
    ids = sorted(image_ids) if image_ids is not None else table.image_ids
    records = []
    for image_id in ids:
        ratings = groups.get(image_id)
        if not ratings:
            raise EmptySourceError(f"image {image_id!r} has no ratings")
        # canonical observer order so results do not depend on input order
        ratings = sorted(ratings, key=lambda r: r.observer_id)
        scores = np.array([r.score for r in ratings], dtype=np.float64)
        if ddof == 1 and scores.size < 2:
            raise DegenerateInputError(f"sample variance needs >= 2 ratings for {image_id!r}")
        records.append(MosRecord(image_id, float(scores.mean()),
                                 float(scores.var(ddof=ddof)), scores.size))
    return records


def write_mos_csv(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(MOS_HEADER)
        for r in records:
            w.writerow([r.image_id, repr(r.mos), repr(r.variance), r.n_raters])


def read_mos_csv(path) -> list:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"no MOS file at {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(MOS_HEADER):
            raise ManifestError(f"bad MOS header in {path}: {header}")
        out = []
        for row in reader:
            if len(row) != 4:
                raise ManifestError(f"bad MOS row in {path}: {row}")
            out.append(MosRecord(row[0], float(row[1]), float(row[2]), int(row[3])))
    return out


def _pearson(a: np.ndarray, b: np.ndarray) -> float:
    # zero spread on either side means the correlation test cannot pass
    if a.size < 2 or a.std() == 0.0 or b.std() == 0.0:
        return 0.0
    ac = a - a.mean()
    bc = b - b.mean()
    return float(np.sum(ac * bc) / np.sqrt(np.sum(ac ** 2) * np.sum(bc ** 2)))


def screen_outliers(table: RatingTable,
                    z_threshold: float = DEFAULT_Z_THRESHOLD,
                    correlation_floor: float = DEFAULT_CORRELATION_FLOOR,
                    z_fraction: float = DEFAULT_Z_FRACTION):
    """Drop whole observers that disagree with the leave-one-out consensus.

    An observer is rejected when the Pearson correlation between their
    scores and the mean of everyone else falls below correlation_floor,
    or when their |score - consensus| / consensus-std exceeds z_threshold
    on more than z_fraction of the images they rated.  Returns the
    filtered table and the sorted list of rejected observer ids.
    """
    observers = table.observer_ids
    if len(observers) < 3:
        raise DegenerateInputError(f"outlier screening needs >= 3 observers, "
                                   f"got {len(observers)}")
    images = table.image_ids
    col = {o: i for i, o in enumerate(observers)}
    row = {im: i for i, im in enumerate(images)}
    grid = np.full((len(images), len(observers)), np.nan)
    for r in table.ratings:
        grid[row[r.image_id], col[r.observer_id]] = r.score

    rejected = []
    for o in observers:
        j = col[o]
        mine = grid[:, j]
        others = np.delete(grid, j, axis=1)
        with np.errstate(invalid="ignore"):
            loo_mean = np.nanmean(others, axis=1)
            loo_std = np.nanstd(others, axis=1)
        ok = ~np.isnan(mine) & ~np.isnan(loo_mean)
        if not np.any(ok):
            rejected.append(o)
            continue
        if _pearson(mine[ok], loo_mean[ok]) < correlation_floor:
            rejected.append(o)
            continue
        dev = np.abs(mine[ok] - loo_mean[ok])
        std = loo_std[ok]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = np.where(std > 0, dev / np.where(std > 0, std, 1.0),
                         np.where(dev > 0, np.inf, 0.0))
        if np.mean(z > z_threshold) > z_fraction:
            rejected.append(o)
    return table.without_observers(rejected), sorted(rejected)


def mos_histogram(records, bins: int = DEFAULT_BINS) -> np.ndarray:
    """Counts of MOS values over uniform right-closed bins spanning [0, 1]."""
    if bins < 1:
        raise ConfigError(f"bins must be >= 1, got {bins}")
    edges = np.linspace(0.0, 1.0, bins + 1)
    counts = np.zeros(bins, dtype=np.int64)
    for r in records:
        idx = int(np.clip(np.searchsorted(edges, r.mos, side="left") - 1, 0, bins - 1))
        counts[idx] += 1
    return counts


def histogram_edges(bins: int = DEFAULT_BINS) -> np.ndarray:
    if bins < 1:
        raise ConfigError(f"bins must be >= 1, got {bins}")
    return np.linspace(0.0, 1.0, bins + 1)


def write_histogram_csv(records, path, bins: int = DEFAULT_BINS) -> None:
    counts = mos_histogram(records, bins)
    edges = histogram_edges(bins)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTOGRAM_HEADER)
        for i in range(bins):
            w.writerow([repr(float(edges[i])), repr(float(edges[i + 1])), int(counts[i])])
