"""Homographies, coordinate frames, point transforms, and random sampling.

Conventions: the origin sits at the top-left pixel center, u is the column
index and v the row index.  A pixel-frame image of size W x H spans
[0, W-1] x [0, H-1]; the normalized frame maps that span onto [-1, 1]^2.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    DegenerateImageSize,
    FrameMismatch,
    NearInfinitePoint,
    NonInvertible,
)

_W_EPS = 1e-12


@dataclass(frozen=True)
class Frame:
    """Coordinate frame tag: pixel coordinates of a W x H image, or [-1,1]^2."""

    kind: str  # "pixel" | "normalized"
    width: int | None = None
    height: int | None = None

    def __post_init__(self):
        if self.kind not in ("pixel", "normalized"):
            raise ValueError(f"unknown frame kind {self.kind!r}")
        if self.kind == "pixel":
            if self.width is None or self.height is None:
                raise ValueError("pixel frame needs width and height")
            if self.width < 2 or self.height < 2:
                raise DegenerateImageSize(
                    f"image size {self.width}x{self.height} below 2x2"
                )

    @staticmethod
    def pixel(width: int, height: int) -> "Frame":
        return Frame("pixel", int(width), int(height))

    @staticmethod
    def normalized() -> "Frame":
        return Frame("normalized")


def _as_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise ValueError(f"homography matrix must be 3x3, got {m.shape}")
    return m


def scale_fix(m: np.ndarray) -> np.ndarray:
    """Rescale a projective matrix so m[2,2] = 1 (Frobenius-normalize if m22 ~ 0)."""
    m = _as_matrix(m)
    if abs(m[2, 2]) > _W_EPS:
        return m / m[2, 2]
    n = np.linalg.norm(m)
    return m / n if n > 0 else m


@dataclass(frozen=True)
class Homography:
    """An invertible 3x3 projective transform tagged with its coordinate frame."""

    m: np.ndarray
    frame: Frame

    def __post_init__(self):
        m = _as_matrix(self.m).copy()
        if not np.all(np.isfinite(m)):
            raise NonInvertible("homography contains non-finite entries")
        det = np.linalg.det(scale_fix(m))
        if not np.isfinite(det) or abs(det) <= 1e-12:
            raise NonInvertible("homography is numerically singular")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @staticmethod
    def identity(frame: Frame) -> "Homography":
        return Homography(np.eye(3), frame)

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.m), self.frame)

    def scale_fixed(self) -> "Homography":
        return Homography(scale_fix(self.m), self.frame)

    def compose(self, other: "Homography") -> "Homography":
        """self after other: (self @ other) p = self(other(p))."""
        if self.frame != other.frame:
            raise FrameMismatch("cannot compose homographies from different frames")
        return Homography(self.m @ other.m, self.frame)

    def to_json(self) -> dict:
        out = {
            "h": [float(x) for x in scale_fix(self.m).ravel()],
            "frame": self.frame.kind,
        }
        if self.frame.kind == "pixel":
            out["width"] = self.frame.width
            out["height"] = self.frame.height
        return out

    @staticmethod
    def from_json(obj: dict) -> "Homography":
        m = np.asarray(obj["h"], dtype=np.float64).reshape(3, 3)
        if obj["frame"] == "pixel":
            frame = Frame.pixel(obj["width"], obj["height"])
        else:
            frame = Frame.normalized()
        return Homography(m, frame)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_json(), f)

    @staticmethod
    def load(path) -> "Homography":
        with open(path, "r", encoding="utf-8") as f:
            return Homography.from_json(json.load(f))


@dataclass(frozen=True)
class PointSet:
    """2 x N coordinates (row 0 = u, row 1 = v) tagged with their frame."""

    coords: np.ndarray
    frame: Frame

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=np.float64)
        if c.ndim != 2 or c.shape[0] != 2:
            raise ValueError(f"PointSet coords must be (2, N), got {c.shape}")
        if not np.all(np.isfinite(c)):
            raise ValueError("PointSet coords must be finite")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coords", c)

    def __len__(self) -> int:
        return self.coords.shape[1]


def apply_homography(m: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Transform raw (2, N) coordinates by a 3x3 matrix with projective division."""
    m = _as_matrix(m)
    uv = np.asarray(coords, dtype=np.float64)
    hom = m[:, :2] @ uv + m[:, 2:3]
    w = hom[2]
    if np.any(np.abs(w) < _W_EPS):
        raise NearInfinitePoint("transformed point too close to the plane at infinity")
    return hom[:2] / w


def transform_points(h: Homography, p: PointSet) -> PointSet:
    if h.frame != p.frame:
        raise FrameMismatch(f"homography frame {h.frame} != point frame {p.frame}")
    return PointSet(apply_homography(h.m, p.coords), p.frame)


def normalization_matrix(width: int, height: int) -> np.ndarray:
    """Affine map taking (u, v) in pixels to ([-1,1], [-1,1])."""
    if width < 2 or height < 2:
        raise DegenerateImageSize(f"image size {width}x{height} below 2x2")
    return np.array(
        [
            [2.0 / (width - 1), 0.0, -1.0],
            [0.0, 2.0 / (height - 1), -1.0],
            [0.0, 0.0, 1.0],
        ]
    )


def normalize_points(coords: np.ndarray, width: int, height: int) -> np.ndarray:
    t = normalization_matrix(width, height)
    uv = np.asarray(coords, dtype=np.float64)
    return t[:2, :2] @ uv + t[:2, 2:3]


def denormalize_points(coords: np.ndarray, width: int, height: int) -> np.ndarray:
    t = np.linalg.inv(normalization_matrix(width, height))
    uv = np.asarray(coords, dtype=np.float64)
    return t[:2, :2] @ uv + t[:2, 2:3]


def normalize_homography(h: Homography) -> Homography:
    """Conjugate a pixel-frame homography into the [-1,1]^2 frame: T H T^-1."""
    if h.frame.kind != "pixel":
        raise FrameMismatch("normalize_homography needs a pixel-frame homography")
    t = normalization_matrix(h.frame.width, h.frame.height)
    return Homography(t @ h.m @ np.linalg.inv(t), Frame.normalized())


def denormalize_homography(h: Homography, width: int, height: int) -> Homography:
    """Inverse of normalize_homography for a W x H image."""
    if h.frame.kind != "normalized":
        raise FrameMismatch("denormalize_homography needs a normalized homography")
    t = normalization_matrix(width, height)
    return Homography(np.linalg.inv(t) @ h.m @ t, Frame.pixel(width, height))


def corner_set(width: int, height: int) -> PointSet:
    """The four image corners (0,0), (W-1,0), (0,H-1), (W-1,H-1) in pixels."""
    if width < 2 or height < 2:
        raise DegenerateImageSize(f"image size {width}x{height} below 2x2")
    c = np.array(
        [[0.0, width - 1.0, 0.0, width - 1.0], [0.0, 0.0, height - 1.0, height - 1.0]]
    )
    return PointSet(c, Frame.pixel(width, height))

NORMALIZED_CORNERS = np.array([[-1.0, 1.0, -1.0, 1.0], [-1.0, -1.0, 1.0, 1.0]])


@dataclass(frozen=True)
class HomographySamplerConfig:
    """Ranges for random homography perturbations (all centered on identity).

    The sampled transform is T @ R @ S @ P applied to pixel coordinates:
    a center-anchored perspective tilt, then isotropic scale, then rotation,
    then translation.  max_translation_frac is relative to (W-1, H-1).
    """

    max_translation_frac: float = 0.10
    max_rotation_rad: float = math.radians(15.0)
    scale_range: tuple[float, float] = (0.85, 1.15)
    max_perspective: float = 1e-4

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (0.0 < lo <= hi):
            raise ValueError("scale_range must satisfy 0 < lo <= hi")
        if self.max_translation_frac < 0 or self.max_rotation_rad < 0:
            raise ValueError("translation/rotation bounds must be nonnegative")
        if self.max_perspective < 0:
            raise ValueError("max_perspective must be nonnegative")

    @staticmethod
    def zero() -> "HomographySamplerConfig":
        return HomographySamplerConfig(0.0, 0.0, (1.0, 1.0), 0.0)

    def perspective_delta(self, width: int, height: int) -> float:
        """Bound on |w - 1| for the perspective factor over the image."""
        return self.max_perspective * ((width - 1) / 2.0 + (height - 1) / 2.0)

    def corner_displacement_bound(self, width: int, height: int) -> float:
        """Analytic bound on how far any corner can move under a sampled H."""
        r = math.hypot((width - 1) / 2.0, (height - 1) / 2.0)
        delta = self.perspective_delta(width, height)
        if delta >= 1.0:
            return math.inf
        r_after_p = r / (1.0 - delta)
        s_lo, s_hi = self.scale_range
        s_dev = max(abs(s_lo - 1.0), abs(s_hi - 1.0))
        b_p = r * delta / (1.0 - delta)
        b_s = s_dev * r_after_p
        b_r = 2.0 * math.sin(self.max_rotation_rad / 2.0) * r_after_p * s_hi
        b_t = math.hypot(
            self.max_translation_frac * (width - 1),
            self.max_translation_frac * (height - 1),
        )
        return b_p + b_s + b_r + b_t

    def to_json(self) -> dict:
        return {
            "max_translation_frac": self.max_translation_frac,
            "max_rotation_rad": self.max_rotation_rad,
            "scale_range": list(self.scale_range),
            "max_perspective": self.max_perspective,
        }

    @staticmethod
    def from_json(obj: dict) -> "HomographySamplerConfig":
        cfg = HomographySamplerConfig()
        return HomographySamplerConfig(
            max_translation_frac=obj.get(
                "max_translation_frac", cfg.max_translation_frac
            ),
            max_rotation_rad=obj.get("max_rotation_rad", cfg.max_rotation_rad),
            scale_range=tuple(obj.get("scale_range", cfg.scale_range)),
            max_perspective=obj.get("max_perspective", cfg.max_perspective),
        )


def sample_homography(
    cfg: HomographySamplerConfig, width: int, height: int, seed
) -> Homography:
    """Draw a random invertible pixel-frame homography, deterministic per seed."""
    if width < 2 or height < 2:
        raise DegenerateImageSize(f"image size {width}x{height} below 2x2")
    rng = np.random.default_rng(seed)
    cu, cv = (width - 1) / 2.0, (height - 1) / 2.0
    to_center = np.array([[1.0, 0.0, -cu], [0.0, 1.0, -cv], [0.0, 0.0, 1.0]])
    from_center = np.array([[1.0, 0.0, cu], [0.0, 1.0, cv], [0.0, 0.0, 1.0]])

    tx = rng.uniform(-1.0, 1.0) * cfg.max_translation_frac * (width - 1)
    ty = rng.uniform(-1.0, 1.0) * cfg.max_translation_frac * (height - 1)
    theta = rng.uniform(-1.0, 1.0) * cfg.max_rotation_rad
    s = rng.uniform(cfg.scale_range[0], cfg.scale_range[1])
    p6 = rng.uniform(-1.0, 1.0) * cfg.max_perspective
    p7 = rng.uniform(-1.0, 1.0) * cfg.max_perspective

    t = np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])
    c, sn = math.cos(theta), math.sin(theta)
    r = from_center @ np.array(
        [[c, -sn, 0.0], [sn, c, 0.0], [0.0, 0.0, 1.0]]
    ) @ to_center
    sc = from_center @ np.diag([s, s, 1.0]) @ to_center
    persp = from_center @ np.array(
        [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [p6, p7, 1.0]]
    ) @ to_center

    return Homography(t @ r @ sc @ persp, Frame.pixel(width, height))
