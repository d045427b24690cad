"""Decoding of raw detector/descriptor grids and continuous sampling.

A detection response holds one 65-way logit vector per 8x8 image cell
(64 pixel channels plus a dustbin).  Decoding applies a cell-wise softmax,
drops the dustbin, and unpacks channel k to pixel offset (k // 8, k % 8)
inside the cell.  Descriptor grids are semi-dense: one unit vector per cell,
anchored at the cell-center pixel coordinates (8i + 3.5, 8j + 3.5).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import OutOfBounds, ShapeMismatch

CELL = 8
DUSTBIN = 64  # 0-based index of the 65th channel
DESCRIPTOR_CHANNELS = 64  # default descriptor length


@dataclass(frozen=True)
class DetectionResponse:
    """Unnormalized detector output: (H/8, W/8, 65) logits."""

    logits: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.logits, dtype=np.float64)
        if z.ndim != 3 or z.shape[2] != 65:
            raise ShapeMismatch(f"detection logits must be (H/8, W/8, 65), got {z.shape}")
        if not np.all(np.isfinite(z)):
            raise ShapeMismatch("detection logits must be finite")
        z = z.copy()
        z.setflags(write=False)
        object.__setattr__(self, "logits", z)

    @property
    def image_height(self) -> int:
        return self.logits.shape[0] * CELL

    @property
    def image_width(self) -> int:
        return self.logits.shape[1] * CELL


@dataclass(frozen=True)
class Heatmap:
    """Dense per-pixel keypoint probabilities in [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ShapeMismatch(f"heatmap must be 2-D, got {v.shape}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class DescriptorMap:
    """Semi-dense descriptor grid: (H/8, W/8, C) unit vectors."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 3:
            raise ShapeMismatch(f"descriptor map must be 3-D, got {v.shape}")
        norms = np.linalg.norm(v, axis=2)
        if not np.all(np.abs(norms - 1.0) <= 1e-6):
            raise ShapeMismatch("descriptor map rows must have unit L2 norm")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def channels(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class DetectorTarget:
    """One-hot per-cell classification labels, (H/8, W/8, 65)."""

    one_hot: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.one_hot, dtype=np.float64)
        if y.ndim != 3 or y.shape[2] != 65:
            raise ShapeMismatch(f"target must be (H/8, W/8, 65), got {y.shape}")
        if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=2) == 1)):
            raise ShapeMismatch("target must be one-hot per cell")
        y = y.copy()
        y.setflags(write=False)
        object.__setattr__(self, "one_hot", y)

    @property
    def labels(self) -> np.ndarray:
        return np.argmax(self.one_hot, axis=2)

    @staticmethod
    def from_labels(labels: np.ndarray) -> "DetectorTarget":
        labels = np.asarray(labels, dtype=np.int64)
        y = np.zeros(labels.shape + (65,))
        rows, cols = np.indices(labels.shape)
        y[rows, cols, labels] = 1.0
        return DetectorTarget(y)


def cell_softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis, numerically stabilized."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def unpack_cells(cell_values: np.ndarray) -> np.ndarray:
    """Spread (Hc, Wc, 64) per-cell values into a dense (8Hc, 8Wc) image grid."""
    hc, wc, k = cell_values.shape
    if k != CELL * CELL:
        raise ShapeMismatch(f"expected 64 channels, got {k}")
    grid = cell_values.reshape(hc, wc, CELL, CELL)
    return grid.transpose(0, 2, 1, 3).reshape(hc * CELL, wc * CELL)


def pack_cells(dense: np.ndarray) -> np.ndarray:
    """Inverse of unpack_cells: (8Hc, 8Wc) -> (Hc, Wc, 64)."""
    h, w = dense.shape
    if h % CELL or w % CELL:
        raise ShapeMismatch("dense grid dimensions must be divisible by 8")
    grid = dense.reshape(h // CELL, CELL, w // CELL, CELL)
    return grid.transpose(0, 2, 1, 3).reshape(h // CELL, w // CELL, CELL * CELL)


def decode_heatmap(response: DetectionResponse) -> Heatmap:
    """Cell-wise softmax, dustbin dropped, channels unpacked to pixels."""
    probs = cell_softmax(response.logits)
    return Heatmap(unpack_cells(probs[:, :, :DUSTBIN]))


def _bilinear_setup(u, v, width: int, height: int):
    """Corner indices and fractions; degenerate single-cell axes collapse."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    x0 = np.clip(np.floor(u).astype(np.int64), 0, max(width - 2, 0))
    y0 = np.clip(np.floor(v).astype(np.int64), 0, max(height - 2, 0))
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = u - x0
    fy = v - y0
    return x0, y0, x1, y1, fx, fy


def bilinear_scalar(values: np.ndarray, u, v):
    """Bilinear interpolation of a 2-D grid at (possibly vectorized) (u, v)."""
    h, w = values.shape
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(u < 0) or np.any(u > w - 1) or np.any(v < 0) or np.any(v > h - 1):
        raise OutOfBounds("sample coordinate outside the image area")
    x0, y0, x1, y1, fx, fy = _bilinear_setup(u, v, w, h)
    v00 = values[y0, x0]
    v01 = values[y0, x1]
    v10 = values[y1, x0]
    v11 = values[y1, x1]
    top = v00 * (1 - fx) + v01 * fx
    bot = v10 * (1 - fx) + v11 * fx
    return top * (1 - fy) + bot * fy


def bilinear_sample_scalar(heatmap: Heatmap, u: float, v: float) -> float:
    return float(bilinear_scalar(heatmap.values, u, v))


def pixel_to_grid(u, v, grid_height: int, grid_width: int):
    """Map pixel coordinates to descriptor-grid coordinates (cell centers)."""
    gu = (np.asarray(u, dtype=np.float64) - (CELL - 1) / 2.0) / CELL
    gv = (np.asarray(v, dtype=np.float64) - (CELL - 1) / 2.0) / CELL
    return np.clip(gu, 0.0, grid_width - 1.0), np.clip(gv, 0.0, grid_height - 1.0)


def grid_cell_centers(grid_height: int, grid_width: int) -> np.ndarray:
    """Pixel coordinates (2, Hc*Wc) of every descriptor cell center, row-major."""
    gv, gu = np.mgrid[0:grid_height, 0:grid_width]
    u = gu.ravel() * CELL + (CELL - 1) / 2.0
    v = gv.ravel() * CELL + (CELL - 1) / 2.0
    return np.stack([u, v])


def bilinear_descriptor(values: np.ndarray, u, v, renormalize: bool = True):
    """Interpolate C-vectors from a (Hc, Wc, C) grid at pixel coordinates.

    Returns an (N, C) array (or (C,) for scalar input).  Interpolated vectors
    are rescaled back to unit norm unless renormalize is False.
    """
    hc, wc, _ = values.shape
    h, w = hc * CELL, wc * CELL
    scalar = np.isscalar(u) or (np.asarray(u).ndim == 0)
    u = np.atleast_1d(np.asarray(u, dtype=np.float64))
    v = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if np.any(u < 0) or np.any(u > w - 1) or np.any(v < 0) or np.any(v > h - 1):
        raise OutOfBounds("sample coordinate outside the image area")
    gu, gv = pixel_to_grid(u, v, hc, wc)
    x0, y0, x1, y1, fx, fy = _bilinear_setup(gu, gv, wc, hc)
    w00 = (1 - fx) * (1 - fy)
    w01 = fx * (1 - fy)
    w10 = (1 - fx) * fy
    w11 = fx * fy
    raw = (
        values[y0, x0] * w00[:, None]
        + values[y0, x1] * w01[:, None]
        + values[y1, x0] * w10[:, None]
        + values[y1, x1] * w11[:, None]
    )
    if renormalize:
        norms = np.linalg.norm(raw, axis=1, keepdims=True)
        raw = raw / np.maximum(norms, 1e-12)
    return raw[0] if scalar else raw


def bilinear_sample_descriptor(dmap: DescriptorMap, u: float, v: float) -> np.ndarray:
    return bilinear_descriptor(dmap.values, u, v)


# ---------------------------------------------------------------------------
# XSFM binary grid format: magic 'XSFM', u16 version=1, u8 dtype=0 (float32
# little-endian), u8 ndim, ndim x u32 dims, row-major payload.

_MAGIC = b"XSFM"
_VERSION = 1
_DTYPE_F32 = 0


def write_xsfm(path, array: np.ndarray) -> None:
    a = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<HBB", _VERSION, _DTYPE_F32, a.ndim))
        f.write(struct.pack(f"<{a.ndim}I", *a.shape))
        f.write(a.tobytes())


def read_xsfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != _MAGIC:
            raise ValueError(f"not an XSFM file: bad magic {magic!r}")
        version, dtype, ndim = struct.unpack("<HBB", f.read(4))
        if version != _VERSION:
            raise ValueError(f"unsupported XSFM version {version}")
        if dtype != _DTYPE_F32:
            raise ValueError(f"unsupported XSFM dtype code {dtype}")
        dims = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
        count = int(np.prod(dims)) if ndim else 1
        payload = f.read(4 * count)
        if len(payload) != 4 * count:
            raise ValueError("truncated XSFM payload")
        return np.frombuffer(payload, dtype="<f4").reshape(dims).astype(np.float64)
