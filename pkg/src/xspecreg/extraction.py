"""Keypoint extraction: windowed soft-argmax or threshold + NMS.

The soft path emits exactly one keypoint per non-overlapping window (low
quality windows are not filtered; their low scores downweight them later).
The classical path thresholds the heatmap and applies greedy non-maximum
suppression with a Chebyshev radius.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ShapeMismatch
from .featuregrid import (
    DescriptorMap,
    Heatmap,
    bilinear_descriptor,
    bilinear_scalar,
)


@dataclass(frozen=True)
class Keypoint:
    """Subpixel location with a detection score and a unit descriptor."""

    u: float
    v: float
    score: float
    desc: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.desc, dtype=np.float64).copy()
        d.setflags(write=False)
        object.__setattr__(self, "desc", d)

    @property
    def p(self) -> np.ndarray:
        return np.array([self.u, self.v])


@dataclass(frozen=True)
class SoftExtractConfig:
    window: int = 8
    softargmax_temperature: float = 0.01

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.softargmax_temperature <= 0:
            raise ValueError("softargmax_temperature must be positive")


@dataclass(frozen=True)
class ClassicalExtractConfig:
    detection_threshold: float = 0.015
    nms_radius: int = 4
    max_keypoints: int | None = None

    def __post_init__(self):
        if not (0.0 < self.detection_threshold < 1.0):
            raise ValueError("detection_threshold must be in (0, 1)")
        if self.nms_radius < 1:
            raise ValueError("nms_radius must be >= 1")


def window_coordinates(height: int, width: int, window: int):
    """Per-window pixel coordinates: returns (n_windows, window^2, 2) u,v grids."""
    if height % window or width % window:
        raise ShapeMismatch(
            f"window {window} does not divide image size {width}x{height}"
        )
    nwy, nwx = height // window, width // window
    off_v, off_u = np.mgrid[0:window, 0:window]
    base = np.stack([off_u.ravel(), off_v.ravel()], axis=1)  # (w^2, 2) as (u, v)
    wy, wx = np.mgrid[0:nwy, 0:nwx]
    origins = np.stack([wx.ravel() * window, wy.ravel() * window], axis=1)
    return origins[:, None, :] + base[None, :, :]


def soft_extract_arrays(
    heat: np.ndarray, desc: np.ndarray, cfg: SoftExtractConfig
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Array core of extract_soft: (N, 2) coords, (N,) scores, (N, C) descriptors."""
    h, w = heat.shape
    coords_grid = window_coordinates(h, w, cfg.window)
    n = coords_grid.shape[0]
    win = heat.reshape(
        h // cfg.window, cfg.window, w // cfg.window, cfg.window
    ).transpose(0, 2, 1, 3).reshape(n, cfg.window * cfg.window)
    a = win / cfg.softargmax_temperature
    a = a - a.max(axis=1, keepdims=True)
    e = np.exp(a)
    omega = e / e.sum(axis=1, keepdims=True)
    coords = np.einsum("nk,nkc->nc", omega, coords_grid.astype(np.float64))
    scores = bilinear_scalar(heat, coords[:, 0], coords[:, 1])
    descs = bilinear_descriptor(desc, coords[:, 0], coords[:, 1])
    return coords, scores, descs


def extract_soft(
    heatmap: Heatmap, dmap: DescriptorMap, cfg: SoftExtractConfig | None = None
) -> list[Keypoint]:
    """One keypoint per window via spatial soft-argmax of the heatmap."""
    cfg = cfg or SoftExtractConfig()
    if (heatmap.height, heatmap.width) != (
        dmap.values.shape[0] * 8,
        dmap.values.shape[1] * 8,
    ):
        raise ShapeMismatch("heatmap and descriptor map cover different image sizes")
    coords, scores, descs = soft_extract_arrays(heatmap.values, dmap.values, cfg)
    return [
        Keypoint(float(c[0]), float(c[1]), float(s), d)
        for c, s, d in zip(coords, scores, descs)
    ]


def nms_keep_mask(
    coords: np.ndarray, scores: np.ndarray, radius: int
) -> np.ndarray:
    """Greedy NMS by descending score; suppression radius is Chebyshev."""
    order = np.lexsort((np.arange(len(scores)), -scores))
    keep = np.zeros(len(scores), dtype=bool)
    kept_pts = np.empty((len(scores), 2))
    n_kept = 0
    for idx in order:
        p = coords[idx]
        if n_kept:
            cheb = np.abs(kept_pts[:n_kept] - p).max(axis=1)
            if cheb.min() <= radius:
                continue
        keep[idx] = True
        kept_pts[n_kept] = p
        n_kept += 1
    return keep


def extract_classical(
    heatmap: Heatmap, dmap: DescriptorMap, cfg: ClassicalExtractConfig | None = None
) -> list[Keypoint]:
    """Detection threshold followed by greedy NMS; descriptors at integer pixels."""
    cfg = cfg or ClassicalExtractConfig()
    heat = heatmap.values
    vs, us = np.nonzero(heat > cfg.detection_threshold)
    if len(us) == 0:
        return []
    coords = np.stack([us, vs], axis=1).astype(np.float64)
    scores = heat[vs, us]
    keep = nms_keep_mask(coords, scores, cfg.nms_radius)
    coords, scores = coords[keep], scores[keep]
    order = np.lexsort((coords[:, 1], coords[:, 0], -scores))
    coords, scores = coords[order], scores[order]
    if cfg.max_keypoints is not None:
        coords, scores = coords[: cfg.max_keypoints], scores[: cfg.max_keypoints]
    descs = bilinear_descriptor(dmap.values, coords[:, 0], coords[:, 1])
    return [
        Keypoint(float(c[0]), float(c[1]), float(s), d)
        for c, s, d in zip(coords, scores, descs)
    ]


def keypoints_to_arrays(
    kps: list[Keypoint],
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(2, N) coords, (N,) scores, (N, C) descriptors from a keypoint list."""
    if not kps:
        return np.zeros((2, 0)), np.zeros(0), np.zeros((0, 0))
    coords = np.array([[k.u for k in kps], [k.v for k in kps]])
    scores = np.array([k.score for k in kps])
    descs = np.stack([k.desc for k in kps])
    return coords, scores, descs


def save_keypoints(path, kps: list[Keypoint]) -> None:
    """JSON-lines keypoint dump: one {"u","v","score","desc"} object per line."""
    with open(path, "w", encoding="utf-8") as f:
        for k in kps:
            rec = {
                "u": float(k.u),
                "v": float(k.v),
                "score": float(k.score),
                "desc": [float(x) for x in k.desc],
            }
            f.write(json.dumps(rec) + "\n")


def load_keypoints(path) -> list[Keypoint]:
    kps = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            kps.append(
                Keypoint(rec["u"], rec["v"], rec["score"], np.asarray(rec["desc"]))
            )
    return kps
