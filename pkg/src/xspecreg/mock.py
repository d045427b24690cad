"""Synthetic ideal-feature grids standing in for a trained network.

Keypoints are planted at random subpixel source locations and at their exact
warped target locations.  Detection logits encode each subpixel position
through the bilinear block of the landing pixel (so windowed soft-argmax
recovers the planted location almost exactly); corresponding locations share
a random unit descriptor written into their own window's grid cell;
everything else stays near-uniform dustbin mass and independent random
descriptors.  Corruption knobs inject location jitter, descriptor noise, and
gross outliers for robustness experiments.

Placement is rejection-sampled: each keypoint must sit near its window
center (so its own descriptor cell dominates the bilinear sample) on both
sides, one keypoint per window.  Adversarial homographies that map the
whole valid band outside the target band (e.g. an exact half-cell
translation) cannot be planted and raise after exhausting the attempt
budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .extraction import SoftExtractConfig
from .featuregrid import (
    CELL,
    DUSTBIN,
    DescriptorMap,
    DetectionResponse,
    DetectorTarget,
)
from .geometry import Homography, apply_homography

_STRAY_PROB = 1e-9
_PEAK_HEAT = 0.24
_BETA_FLOOR = 1e-6


@dataclass(frozen=True)
class MockFeatureConfig:
    """Size, keypoint count, and corruption knobs for mock feature synthesis."""

    width: int = 640
    height: int = 512
    n_keypoints: int = 200
    descriptor_channels: int = 64
    location_jitter: float = 0.0
    descriptor_noise: float = 0.0
    outlier_fraction: float = 0.0
    margin: float = 16.0

    def __post_init__(self):
        if self.width % CELL or self.height % CELL:
            raise ShapeMismatch("image size must be divisible by 8")
        if not (0.0 <= self.outlier_fraction <= 1.0):
            raise ValueError("outlier_fraction must be in [0, 1]")


@dataclass
class MockFeatures:
    """Grids for both images plus the planted ground truth."""

    det_src: DetectionResponse
    desc_src: DescriptorMap
    det_tgt: DetectionResponse
    desc_tgt: DescriptorMap
    labels_src: DetectorTarget
    labels_tgt: DetectorTarget
    src_points: np.ndarray  # (2, n) planted source locations
    tgt_points: np.ndarray  # (2, n) planted (possibly corrupted) targets
    outlier_mask: np.ndarray
    descriptors: np.ndarray  # (n, C) shared pair descriptors

    def grids(self):
        return self.det_src, self.desc_src, self.det_tgt, self.desc_tgt


class _Planter:
    """Accumulates planted keypoints for one image and emits the grids."""

    def __init__(self, width: int, height: int, channels: int, rng: np.random.Generator):
        self.width, self.height = width, height
        self.hc, self.wc = height // CELL, width // CELL
        self.heat = np.full((height, width), _STRAY_PROB)
        self.labels = np.full((self.hc, self.wc), DUSTBIN, dtype=np.int64)
        self.best = np.zeros((self.hc, self.wc))
        self.desc = rng.standard_normal((self.hc, self.wc, channels))
        self.desc /= np.linalg.norm(self.desc, axis=2, keepdims=True)
        self.used_windows: set[tuple[int, int]] = set()
        self.t_sa = SoftExtractConfig().softargmax_temperature

    def block(self, u: float, v: float):
        x0, y0 = math.floor(u), math.floor(v)
        fx, fy = u - x0, v - y0
        cells = [
            (x0, y0, (1 - fx) * (1 - fy)),
            (x0 + 1, y0, fx * (1 - fy)),
            (x0, y0 + 1, (1 - fx) * fy),
            (x0 + 1, y0 + 1, fx * fy),
        ]
        return [(x, y, b) for x, y, b in cells if b > 0]

    def can_place(self, u: float, v: float) -> bool:
        """Inside bounds, own window free, and close enough to the window
        center that the keypoint's own descriptor cell dominates its bilinear
        sample (descriptors are written per-cell, so drifting onto a
        neighbouring cell would dilute the planted identity)."""
        if not (0 <= u <= self.width - 1 and 0 <= v <= self.height - 1):
            return False
        fu, fv = u % CELL, v % CELL
        if not (1.5 <= fu <= 5.5 and 1.5 <= fv <= 5.5):
            return False
        window = (int(v // CELL), int(u // CELL))
        return window not in self.used_windows

    def place(self, u: float, v: float, descriptor: np.ndarray) -> None:
        block = self.block(u, v)
        for x, y, beta in block:
            val = _PEAK_HEAT + self.t_sa * math.log(max(beta, _BETA_FLOOR))
            self.heat[y, x] = max(self.heat[y, x], val)
            cy, cx = y // CELL, x // CELL
            if val > self.best[cy, cx]:
                self.best[cy, cx] = val
                self.labels[cy, cx] = (y % CELL) * CELL + (x % CELL)
        window = (int(v // CELL), int(u // CELL))
        self.used_windows.add(window)
        self.desc[window] = descriptor

    def finish(self) -> tuple[DetectionResponse, DescriptorMap, DetectorTarget]:
        cell_heat = self.heat.reshape(
            self.hc, CELL, self.wc, CELL
        ).transpose(0, 2, 1, 3).reshape(self.hc, self.wc, CELL * CELL)
        dustbin = 1.0 - cell_heat.sum(axis=2, keepdims=True)
        probs = np.concatenate([cell_heat, dustbin], axis=2)
        logits = np.log(probs)
        return (
            DetectionResponse(logits),
            DescriptorMap(self.desc),
            DetectorTarget.from_labels(self.labels),
        )


def generate_mock_features(
    h_gt: Homography,
    cfg: MockFeatureConfig | None = None,
    seed: int | None = 0,
) -> MockFeatures:
    """Plant n exact correspondences under h_gt and emit grids for both images.

    Targets land at the exact warped subpixel locations (up to the bilinear
    block floor of 1e-6); corruption is applied per keypoint before planting.
    """
    cfg = cfg or MockFeatureConfig()
    if h_gt.frame.kind != "pixel":
        raise ShapeMismatch("mock generator needs a pixel-frame homography")
    rng = np.random.default_rng(seed)
    src_pl = _Planter(cfg.width, cfg.height, cfg.descriptor_channels, rng)
    tgt_pl = _Planter(cfg.width, cfg.height, cfg.descriptor_channels, rng)

    n_outliers = int(round(cfg.outlier_fraction * cfg.n_keypoints))
    src_pts, tgt_pts, descs, outliers = [], [], [], []
    attempts = 0
    while len(src_pts) < cfg.n_keypoints:
        attempts += 1
        if attempts > 200 * cfg.n_keypoints + 1000:
            raise ValueError("could not place the requested keypoint count")
        u = float(rng.uniform(cfg.margin, cfg.width - 1 - cfg.margin))
        v = float(rng.uniform(cfg.margin, cfg.height - 1 - cfg.margin))
        is_outlier = len(src_pts) < n_outliers
        if is_outlier:
            tu = float(rng.uniform(cfg.margin, cfg.width - 1 - cfg.margin))
            tv = float(rng.uniform(cfg.margin, cfg.height - 1 - cfg.margin))
        else:
            warped = apply_homography(h_gt.m, np.array([[u], [v]]))
            tu, tv = float(warped[0, 0]), float(warped[1, 0])
            if cfg.location_jitter > 0:
                tu += rng.normal(0.0, cfg.location_jitter)
                tv += rng.normal(0.0, cfg.location_jitter)
        if not (
            cfg.margin <= tu <= cfg.width - 1 - cfg.margin
            and cfg.margin <= tv <= cfg.height - 1 - cfg.margin
        ):
            continue
        if not (src_pl.can_place(u, v) and tgt_pl.can_place(tu, tv)):
            continue
        d = rng.standard_normal(cfg.descriptor_channels)
        d /= np.linalg.norm(d)
        d_tgt = d
        if cfg.descriptor_noise > 0:
            d_tgt = d + rng.normal(0.0, cfg.descriptor_noise, d.shape)
            d_tgt = d_tgt / np.linalg.norm(d_tgt)
        src_pl.place(u, v, d)
        tgt_pl.place(tu, tv, d_tgt)
        src_pts.append((u, v))
        tgt_pts.append((tu, tv))
        descs.append(d)
        outliers.append(is_outlier)

    det_s, desc_s, lab_s = src_pl.finish()
    det_t, desc_t, lab_t = tgt_pl.finish()
    return MockFeatures(
        det_src=det_s,
        desc_src=desc_s,
        det_tgt=det_t,
        desc_tgt=desc_t,
        labels_src=lab_s,
        labels_tgt=lab_t,
        src_points=np.array(src_pts).T.reshape(2, -1),
        tgt_points=np.array(tgt_pts).T.reshape(2, -1),
        outlier_mask=np.array(outliers, dtype=bool),
        descriptors=np.array(descs).reshape(-1, cfg.descriptor_channels),
    )
