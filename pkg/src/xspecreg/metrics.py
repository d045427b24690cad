"""Registration and standalone feature metrics.

Registration quality is summarized by the average corner error (ACE) of the
relative transform H_est^-1 H_gt and the fraction of pairs below fixed pixel
thresholds; failed registrations enter the distribution as +inf.  Feature
metrics follow the usual detector/descriptor evaluation protocol: keypoints
warped outside the shared view are dropped, a keypoint is repeated if a
counterpart lies within correct_dist, and a match is correct if its
reprojection error is strictly below correct_dist.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonInvertible
from .geometry import Homography, apply_homography, corner_set


@dataclass(frozen=True)
class MetricsConfig:
    ace_thresholds: tuple[float, ...] = (2.0, 5.0, 10.0, 25.0)
    correct_dist: float = 3.0
    eval_width: int = 640
    eval_height: int = 512

    def __post_init__(self):
        t = tuple(float(x) for x in self.ace_thresholds)
        if any(x <= 0 for x in t) or list(t) != sorted(t):
            raise ValueError("thresholds must be positive and ascending")
        object.__setattr__(self, "ace_thresholds", t)
        if self.correct_dist <= 0:
            raise ValueError("correct_dist must be positive")


@dataclass
class MetricsReport:
    """Aggregated evaluation results for one method x pipeline run."""

    n_pairs: int
    n_failed: int
    ace_values: list[float]
    thresholds: tuple[float, ...]
    success_fractions: tuple[float, ...]
    repeatability: float
    mscore: float
    mma: float
    mean_ap: float
    n_keypoints: float
    correct_dist: float
    extras: dict = field(default_factory=dict)

    CSV_COLUMNS = (
        "pipeline",
        "n_pairs",
        "n_failed",
        "frac_ace_lt_2",
        "frac_ace_lt_5",
        "frac_ace_lt_10",
        "frac_ace_lt_25",
        "repeatability",
        "mscore",
        "mma",
        "map",
        "n_k",
        "correct_dist",
    )

    def csv_row(self, pipeline: str) -> str:
        def fmt(x) -> str:
            return f"{x:.12g}"

        fields = [pipeline, str(self.n_pairs), str(self.n_failed)]
        fields += [fmt(f) for f in self.success_fractions]
        fields += [
            fmt(self.repeatability),
            fmt(self.mscore),
            fmt(self.mma),
            fmt(self.mean_ap),
            fmt(self.n_keypoints),
            fmt(self.correct_dist),
        ]
        return ",".join(fields)


def ace(h_gt: Homography, h_est: Homography, width: int, height: int) -> float:
    """Average corner reprojection error of H_est^-1 H_gt, in pixels."""
    for h in (h_gt, h_est):
        if h.frame.kind != "pixel":
            raise NonInvertible("ACE needs pixel-frame homographies")
    try:
        rel = np.linalg.solve(h_est.m, h_gt.m)
    except np.linalg.LinAlgError as exc:
        raise NonInvertible(str(exc)) from exc
    corners = corner_set(width, height).coords
    moved = apply_homography(rel, corners)
    return float(np.mean(np.linalg.norm(corners - moved, axis=0)))


def success_fractions(
    ace_values, thresholds=(2.0, 5.0, 10.0, 25.0)
) -> np.ndarray:
    """Fraction of values strictly below each threshold (empty input -> zeros)."""
    vals = np.asarray(list(ace_values), dtype=np.float64)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    if vals.size == 0:
        return np.zeros(len(thresholds))
    return np.array([np.mean(vals < t) for t in thresholds])


def _in_bounds(coords: np.ndarray, width: int, height: int) -> np.ndarray:
    return (
        (coords[0] >= 0)
        & (coords[0] <= width - 1)
        & (coords[1] >= 0)
        & (coords[1] <= height - 1)
    )


def _min_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """For each column of a (2, Na), distance to the nearest column of b."""
    if a.shape[1] == 0:
        return np.zeros(0)
    if b.shape[1] == 0:
        return np.full(a.shape[1], np.inf)
    d2 = (a[0][:, None] - b[0][None, :]) ** 2 + (a[1][:, None] - b[1][None, :]) ** 2
    return np.sqrt(d2.min(axis=1))


def shared_view_keypoints(
    kps_a: np.ndarray,
    kps_b: np.ndarray,
    h_gt: Homography,
    width: int,
    height: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Keep keypoints whose warp into the other image stays inside its bounds."""
    inv = np.linalg.inv(h_gt.m)
    keep_a = _in_bounds(apply_homography(h_gt.m, kps_a), width, height) if kps_a.shape[1] else np.zeros(0, bool)
    keep_b = _in_bounds(apply_homography(inv, kps_b), width, height) if kps_b.shape[1] else np.zeros(0, bool)
    return kps_a[:, keep_a], kps_b[:, keep_b]


def repeatability(
    kps_a: np.ndarray,
    kps_b: np.ndarray,
    h_gt: Homography,
    correct_dist: float = 3.0,
    width: int | None = None,
    height: int | None = None,
) -> float:
    """Symmetric re-detection rate: counterparts within correct_dist after warp."""
    if width is None or height is None:
        if h_gt.frame.kind != "pixel":
            raise NonInvertible("repeatability needs image bounds")
        width, height = h_gt.frame.width, h_gt.frame.height
    a, b = shared_view_keypoints(kps_a, kps_b, h_gt, width, height)
    total = a.shape[1] + b.shape[1]
    if total == 0:
        return 0.0
    warped_a = apply_homography(h_gt.m, a) if a.shape[1] else a
    warped_b = apply_homography(np.linalg.inv(h_gt.m), b) if b.shape[1] else b
    hits_a = int(np.sum(_min_dists(warped_a, b) <= correct_dist))
    hits_b = int(np.sum(_min_dists(warped_b, a) <= correct_dist))
    return (hits_a + hits_b) / total


def match_correctness(
    match_src: np.ndarray,
    match_tgt: np.ndarray,
    h_gt: Homography,
    correct_dist: float = 3.0,
) -> np.ndarray:
    """Boolean per match: reprojection error strictly below correct_dist."""
    if match_src.shape[1] == 0:
        return np.zeros(0, dtype=bool)
    err = np.linalg.norm(apply_homography(h_gt.m, match_src) - match_tgt, axis=0)
    return err < correct_dist


def matching_score(
    kps_a: np.ndarray,
    kps_b: np.ndarray,
    match_src: np.ndarray,
    match_tgt: np.ndarray,
    h_gt: Homography,
    correct_dist: float = 3.0,
    width: int | None = None,
    height: int | None = None,
) -> float:
    """Correct matches over showable detections (the smaller in-view side)."""
    if width is None or height is None:
        if h_gt.frame.kind != "pixel":
            raise NonInvertible("matching score needs image bounds")
        width, height = h_gt.frame.width, h_gt.frame.height
    a, b = shared_view_keypoints(kps_a, kps_b, h_gt, width, height)
    denom = min(a.shape[1], b.shape[1])
    if denom == 0:
        return 0.0
    correct = int(match_correctness(match_src, match_tgt, h_gt, correct_dist).sum())
    return correct / denom


def mma(
    match_src: np.ndarray,
    match_tgt: np.ndarray,
    h_gt: Homography,
    correct_dist: float = 3.0,
) -> float:
    """Mean matching accuracy: correct over reported matches (0 if none)."""
    n = match_src.shape[1]
    if n == 0:
        return 0.0
    return float(match_correctness(match_src, match_tgt, h_gt, correct_dist).sum()) / n


def average_precision(correct: np.ndarray, scores: np.ndarray) -> float:
    """Area under the precision-recall curve of a score-ranked candidate list.

    Candidates are ranked by descending score (ties by input order); recall is
    against the total number of correct candidates in the pool.  Integration
    is trapezoidal from (recall 0, precision 1).
    """
    correct = np.asarray(correct, dtype=bool)
    scores = np.asarray(scores, dtype=np.float64)
    if correct.size == 0 or not correct.any():
        return 0.0
    order = np.lexsort((np.arange(len(scores)), -scores))
    hits = correct[order]
    tp = np.cumsum(hits)
    ranks = np.arange(1, len(hits) + 1)
    precision = tp / ranks
    recall = tp / int(correct.sum())
    prev_r, prev_p, area = 0.0, 1.0, 0.0
    for p, r in zip(precision, recall):
        area += (r - prev_r) * (p + prev_p) / 2.0
        prev_r, prev_p = r, p
    return float(area)


def mean_ap(
    dataset_matches: list[tuple[np.ndarray, np.ndarray, np.ndarray, Homography]],
    correct_dist: float = 3.0,
) -> float:
    """Dataset-pooled AP: entries are (match_src, match_tgt, scores, h_gt)."""
    all_correct: list[np.ndarray] = []
    all_scores: list[np.ndarray] = []
    for match_src, match_tgt, scores, h_gt in dataset_matches:
        all_correct.append(match_correctness(match_src, match_tgt, h_gt, correct_dist))
        all_scores.append(np.asarray(scores, dtype=np.float64))
    if not all_correct:
        return 0.0
    return average_precision(np.concatenate(all_correct), np.concatenate(all_scores))
