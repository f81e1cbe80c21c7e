"""Quality-prediction evaluation metrics and score normalization.

All four metrics compare a predicted score vector against subjective
scores for the same images:

* rmse  - root mean squared error, denominator n-1 by default
* plcc  - Pearson linear correlation (prediction consistency)
* srocc - Spearman rank correlation via average ranks (monotonicity)
* pwrc  - perceptually weighted rank correlation: a pairwise ranking
          score S(T) integrated over a sensory threshold grid, where a
          pair participates only when its subjective gap exceeds T,
          agreement is the sign match of predicted vs subjective
          differences, and pairs are weighted by exp(max score / beta)
          so mistakes among high-quality images cost more.

``normalize_scores`` maps any declared scoring range onto [0, 1] (with
an optional inversion for scales where lower means better) so datasets
with different scales can be pooled or compared.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, RangeError


def _as_pair(predicted, subjective):
    p = np.asarray(predicted, dtype=np.float64)
    s = np.asarray(subjective, dtype=np.float64)
    if p.ndim != 1 or s.ndim != 1 or p.shape != s.shape:
        raise ValueError(f"score vectors must be equal-length 1-D, got {p.shape} vs {s.shape}")
    if p.size < 2:
        raise ValueError("need at least 2 scores")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(s))):
        raise ValueError("scores must be finite")
    return p, s


def rmse(predicted, subjective, denominator: str = "n_minus_1") -> float:
    """sqrt(sum((y_P - y_S)^2) / d) with d = n-1 (default) or n."""
    p, s = _as_pair(predicted, subjective)
    sq = float(np.sum((p - s) ** 2))
    if denominator == "n_minus_1":
        d = p.size - 1
    elif denominator == "n":
        d = p.size
    else:
        raise ValueError(f"denominator must be 'n' or 'n_minus_1', got {denominator!r}")
    return float(np.sqrt(sq / d))


def plcc(predicted, subjective) -> float:
    """Pearson linear correlation coefficient of the two score vectors."""
    p, s = _as_pair(predicted, subjective)
    pc = p - p.mean()
    sc = s - s.mean()
    vp = float(np.dot(pc, pc))
    vs = float(np.dot(sc, sc))
    if vp == 0.0 or vs == 0.0:
        raise DegenerateInputError("zero-variance input to plcc")
    return float(np.dot(pc, sc) / np.sqrt(vp * vs))


def average_ranks(v: np.ndarray) -> np.ndarray:
    """Fractional (average) ranks starting at 1; ties share their mean rank."""
    v = np.asarray(v, dtype=np.float64)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        # positions i..j (0-based) share the mean of ranks i+1..j+1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks


def srocc(predicted, subjective) -> float:
    """Spearman rank correlation: Pearson over average ranks.

    With no ties this equals the closed form 1 - 6*sum(d^2)/(N(N^2-1)).
    """
    p, s = _as_pair(predicted, subjective)
    rp = average_ranks(p)
    rs = average_ranks(s)
    if np.all(rp == rp[0]) or np.all(rs == rs[0]):
        raise DegenerateInputError("all-equal vector has no rank ordering")
    return plcc(rp, rs)


def srocc_closed_form(predicted, subjective) -> float:
    """Tie-free closed form 1 - 6*sum(d^2)/(N(N^2-1)); cross-check only."""
    p, s = _as_pair(predicted, subjective)
    d = average_ranks(p) - average_ranks(s)
    n = p.size
    return float(1.0 - 6.0 * np.sum(d * d) / (n * (n * n - 1)))


@dataclass
class PwrcParams:
    """Threshold grid and importance weighting for the pwrc integral."""
    t_min: float = 0.0
    t_max: float = 1.0
    t_steps: int = 101
    importance_beta: float = 0.2

    def validate(self):
        if not self.t_min < self.t_max:
            raise ValueError("t_min must be < t_max")
        if self.t_steps < 2:
            raise ValueError("t_steps must be >= 2")
        if self.importance_beta <= 0:
            raise ValueError("importance_beta must be > 0")

    @classmethod
    def for_scores(cls, subjective, t_steps: int = 101, importance_beta: float = 0.2):
        """Default grid [0, range of the subjective scores]."""
        s = np.asarray(subjective, dtype=np.float64)
        span = float(s.max() - s.min())
        if span <= 0:
            raise DegenerateInputError("subjective scores have zero range")
        return cls(0.0, span, t_steps, importance_beta)

    def grid(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.t_steps)


def _trapezoid(y: np.ndarray, x: np.ndarray) -> float:
    return float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2.0)


def pwrc(predicted, subjective, params: PwrcParams):
    """Perceptually weighted rank correlation.

    Returns (value, curve) where curve is a list of (T, S(T)) pairs and
    value is the trapezoidal integral of S over [t_min, t_max].  At a
    grid threshold with no active pair S(T) is defined as 0; if no pair
    is active at any threshold the input is degenerate and raises.
    """
    p, s = _as_pair(predicted, subjective)
    params.validate()
    n = p.size
    iu, ju = np.triu_indices(n, k=1)
    ds = s[iu] - s[ju]
    dp = p[iu] - p[ju]
    agree = np.where(np.sign(dp) == np.sign(ds), 1.0, -1.0)
    weight = np.exp(np.maximum(s[iu], s[ju]) / params.importance_beta)
    grid = params.grid()
    svals = np.empty(grid.size)
    any_active = False
    gaps = np.abs(ds)
    for k, t in enumerate(grid):
        active = gaps > t
        if not np.any(active):
            svals[k] = 0.0
            continue
        any_active = True
        w = weight[active]
        svals[k] = float(np.sum(w * agree[active]) / np.sum(w))
    if not any_active:
        raise DegenerateInputError("no active pair at any threshold")
    value = _trapezoid(svals, grid)
    return value, list(zip(grid.tolist(), svals.tolist()))


def normalize_scores(scores, src_lo: float, src_hi: float, invert: bool = False):
    """Affine map of scores from [src_lo, src_hi] onto [0, 1].

    `invert` flips orientation for scales where lower means better
    (DMOS), so 0 is always worst and 1 always best after mapping.
    """
    if not src_lo < src_hi:
        raise RangeError(f"degenerate source range [{src_lo}, {src_hi}]")
    x = np.asarray(scores, dtype=np.float64)
    out = (x - src_lo) / (src_hi - src_lo)
    if invert:
        out = 1.0 - out
    return out


@dataclass
class MetricReport:
    """The four metric values for one evaluation, with the pwrc curve."""
    rmse: float
    plcc: float
    srocc: float
    pwrc: float
    pwrc_params: PwrcParams = field(default_factory=PwrcParams)
    pwrc_curve: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "rmse": self.rmse,
            "plcc": self.plcc,
            "srocc": self.srocc,
            "pwrc": self.pwrc,
            "pwrc_params": {
                "t_min": self.pwrc_params.t_min,
                "t_max": self.pwrc_params.t_max,
                "t_steps": self.pwrc_params.t_steps,
                "importance_beta": self.pwrc_params.importance_beta,
            },
            "pwrc_curve": [[t, sv] for t, sv in self.pwrc_curve],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        pp = d.get("pwrc_params", {})
        return cls(
            rmse=d["rmse"], plcc=d["plcc"], srocc=d["srocc"], pwrc=d["pwrc"],
            pwrc_params=PwrcParams(
                pp.get("t_min", 0.0), pp.get("t_max", 1.0),
                pp.get("t_steps", 101), pp.get("importance_beta", 0.2)),
            pwrc_curve=[(t, sv) for t, sv in d.get("pwrc_curve", [])],
        )

    def write_curve_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["T", "S"])
            for t, sv in self.pwrc_curve:
                w.writerow([repr(t), repr(sv)])


def evaluate_pair(predicted, subjective, pwrc_params: PwrcParams | None = None) -> MetricReport:
    """Compute all four metrics for one predicted/subjective pair."""
    p, s = _as_pair(predicted, subjective)
    if pwrc_params is None:
        pwrc_params = PwrcParams.for_scores(s)
    value, curve = pwrc(p, s, pwrc_params)
    return MetricReport(
        rmse=rmse(p, s),
        plcc=plcc(p, s),
        srocc=srocc(p, s),
        pwrc=value,
        pwrc_params=pwrc_params,
        pwrc_curve=curve,
    )
