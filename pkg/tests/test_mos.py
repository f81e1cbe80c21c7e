"""MOS aggregation, outlier screening and histogram tests."""

import numpy as np
import pytest

from iqalab.errors import (
    ConfigError,
    DegenerateInputError,
    EmptySourceError,
    ManifestError,
    RangeError,
)
from iqalab.mos import (
    MosRecord,
    Rating,
    RatingTable,
    aggregate,
    mos_histogram,
    read_mos_csv,
    screen_outliers,
    write_histogram_csv,
    write_mos_csv,
)
from iqalab.rng import RngStream


def make_table(scores_by_image, timestamps=False):
    # scores_by_image: {image_id: {observer_id: score}}
    ratings = []
    t = 0.0
    for image_id, per_obs in scores_by_image.items():
        for obs, score in per_obs.items():
            ratings.append(Rating(image_id, obs, score, t if timestamps else 0.0))
            t += 1.0
    return RatingTable(ratings)


def consensus_table(n_obs, qualities, jitter=0.0):
    # observer o rates image j as qualities[j] + (o - n/2) * jitter
    scores = {}
    for j, q in enumerate(qualities):
        per = {}
        for o in range(n_obs):
            per[f"obs{o:02d}"] = float(np.clip(q + (o - n_obs / 2) * jitter, 0.0, 1.0))
        scores[f"img{j:03d}"] = per
    return make_table(scores)


# --- table invariants -------------------------------------------------------

def test_rating_score_range_enforced():
    with pytest.raises(RangeError):
        Rating("i", "o", 1.2)
    with pytest.raises(RangeError):
        Rating("i", "o", -0.1)


def test_duplicate_rating_rejected():
    with pytest.raises(ManifestError):
        RatingTable([Rating("i", "o", 0.5), Rating("i", "o", 0.6)])


def test_ratings_csv_roundtrip(tmp_path):
    table = make_table({"a": {"o1": 0.25, "o2": 0.75}, "b": {"o1": 1.0}})
    table.write_csv(tmp_path / "r.csv")
    text = (tmp_path / "r.csv").read_text().splitlines()
    assert text[0] == "image_id,observer_id,score,timestamp"
    back = RatingTable.read_csv(tmp_path / "r.csv")
    assert len(back) == 3
    assert back.image_ids == ["a", "b"]
    assert {r.score for r in back.ratings} == {0.25, 0.75, 1.0}


def test_ratings_csv_bad_header(tmp_path):
    (tmp_path / "r.csv").write_text("a,b\n1,2\n")
    with pytest.raises(ManifestError):
        RatingTable.read_csv(tmp_path / "r.csv")


def test_ratings_csv_empty_timestamp_tolerated(tmp_path):
    (tmp_path / "r.csv").write_text(
        "image_id,observer_id,score,timestamp\na,o1,0.5,\n")
    back = RatingTable.read_csv(tmp_path / "r.csv")
    assert back.ratings[0].timestamp == 0.0


def test_ratings_csv_non_numeric_field_is_data_error(tmp_path):
    (tmp_path / "r.csv").write_text(
        "image_id,observer_id,score,timestamp\na,o1,high,0\n")
    with pytest.raises(ManifestError, match="r.csv:2"):
        RatingTable.read_csv(tmp_path / "r.csv")


# --- aggregate ----------------------------------------------------------------

def test_aggregate_constant_scores():
    table = make_table({"a": {f"o{i}": 0.5 for i in range(30)}})
    (rec,) = aggregate(table)
    assert rec.mos == 0.5
    assert rec.variance == 0.0
    assert rec.n_raters == 30


def test_aggregate_hand_population_variance():
    table = make_table({"a": {"o1": 0.0, "o2": 1.0}})
    (rec,) = aggregate(table)
    assert rec.mos == pytest.approx(0.5)
    assert rec.variance == pytest.approx(0.25)


def test_aggregate_sample_variance_flag():
    table = make_table({"a": {"o1": 0.0, "o2": 1.0}})
    (rec,) = aggregate(table, variance="sample")
    assert rec.variance == pytest.approx(0.5)


def test_aggregate_unrated_image_errors():
    table = make_table({"a": {"o1": 0.5}})
    with pytest.raises(EmptySourceError):
        aggregate(table, image_ids=["a", "b"])


def test_aggregate_permutation_invariant():
    rng = RngStream(31)
    ratings = [Rating(f"img{j}", f"obs{o}", float(rng.random()))
               for j in range(5) for o in range(7)]
    recs_a = aggregate(RatingTable(ratings))
    shuffled = list(ratings)
    rng.shuffle(shuffled)
    recs_b = aggregate(RatingTable(shuffled))
    assert recs_a == recs_b


def test_aggregate_matches_numpy_oracle_fuzz():
    rng = RngStream(32)
    for _ in range(30):
        n = int(rng.integers(1, 12))
        scores = rng.random(n)
        table = RatingTable([Rating("x", f"o{i}", float(s)) for i, s in enumerate(scores)])
        (rec,) = aggregate(table)
        assert rec.mos == pytest.approx(float(np.mean(scores)), abs=1e-12)
        assert rec.variance == pytest.approx(float(np.var(scores)), abs=1e-12)
        assert min(scores) <= rec.mos <= max(scores)
        assert rec.variance >= 0.0


# --- screening ------------------------------------------------------------------

def test_screen_identical_observers_keeps_everyone():
    qualities = np.linspace(0.1, 0.9, 20)
    table = consensus_table(30, qualities, jitter=0.0)
    kept, rejected = screen_outliers(table)
    assert rejected == []
    assert len(kept) == len(table)


def test_screen_rejects_anticorrelated_observer():
    qualities = np.linspace(0.1, 0.9, 20)
    table = consensus_table(29, qualities, jitter=0.004)
    bad = [Rating(f"img{j:03d}", "obsbad", float(1.0 - q)) for j, q in enumerate(qualities)]
    table = RatingTable(list(table.ratings) + bad)
    kept, rejected = screen_outliers(table)
    assert rejected == ["obsbad"]
    assert "obsbad" not in kept.observer_ids


def test_screen_rejects_high_z_fraction_observer():
    # correlated overall but wildly off consensus on 30% of images
    qualities = np.linspace(0.05, 0.95, 30)
    table = consensus_table(10, qualities, jitter=0.004)
    scores = []
    for j, q in enumerate(qualities):
        off = 0.35 if j % 3 == 0 else 0.0
        scores.append(Rating(f"img{j:03d}", "obswild", float(np.clip(q + off, 0, 1))))
    table = RatingTable(list(table.ratings) + scores)
    kept, rejected = screen_outliers(table)
    assert rejected == ["obswild"]


def test_screen_requires_three_observers():
    table = make_table({"a": {"o1": 0.5, "o2": 0.6}})
    with pytest.raises(DegenerateInputError):
        screen_outliers(table)


def test_screen_is_idempotent():
    qualities = np.linspace(0.1, 0.9, 20)
    table = consensus_table(29, qualities, jitter=0.004)
    bad = [Rating(f"img{j:03d}", "obsbad", float(1.0 - q)) for j, q in enumerate(qualities)]
    table = RatingTable(list(table.ratings) + bad)
    screened, rejected = screen_outliers(table)
    assert rejected == ["obsbad"]
    again, rejected2 = screen_outliers(screened)
    assert rejected2 == []
    assert len(again) == len(screened)


# --- histogram --------------------------------------------------------------------

def rec(m):
    return MosRecord("x", m, 0.0, 1)


def hist_oracle(values, bins):
    # literal rule: right-closed bins (lo, hi], zero lands in the first bin
    edges = [i / bins for i in range(bins + 1)]
    counts = [0] * bins
    for v in values:
        if v <= edges[1]:
            counts[0] += 1
            continue
        for i in range(1, bins):
            if edges[i] < v <= edges[i + 1]:
                counts[i] += 1
                break
    return counts


def test_histogram_hand_case_right_closed():
    counts = mos_histogram([rec(0.0), rec(0.5), rec(1.0)], bins=2)
    assert counts.tolist() == [2, 1]


def test_histogram_empty_records():
    assert mos_histogram([], bins=4).tolist() == [0, 0, 0, 0]


def test_histogram_counts_conserved():
    rng = RngStream(33)
    records = [rec(float(v)) for v in rng.random(12000)]
    counts = mos_histogram(records, bins=100)
    assert counts.sum() == 12000


def test_histogram_matches_literal_rule_fuzz():
    rng = RngStream(34)
    for _ in range(25):
        bins = int(rng.integers(1, 9))
        values = rng.random(int(rng.integers(1, 40)))
        values = np.round(values, 2)  # hit edges often
        counts = mos_histogram([rec(float(v)) for v in values], bins=bins)
        assert counts.tolist() == hist_oracle(values, bins)


def test_histogram_rejects_zero_bins():
    with pytest.raises(ConfigError):
        mos_histogram([], bins=0)


def test_histogram_csv_format(tmp_path):
    write_histogram_csv([rec(0.0), rec(0.5), rec(1.0)], tmp_path / "h.csv", bins=2)
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "bin_lo,bin_hi,count"
    assert lines[1].split(",") == ["0.0", "0.5", "2"]
    assert lines[2].split(",") == ["0.5", "1.0", "1"]


# --- mos csv ------------------------------------------------------------------------

def test_mos_csv_roundtrip(tmp_path):
    records = [MosRecord("a", 0.125, 0.0625, 4), MosRecord("b", 0.5, 0.0, 1)]
    write_mos_csv(records, tmp_path / "m.csv")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "image_id,mos,variance,n_raters"
    assert read_mos_csv(tmp_path / "m.csv") == records
