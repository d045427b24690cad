"""Task-based and direct feature losses.

The task-based losses (corner, Frobenius, transfer) work on normalized
coordinates, build forward and inverse error matrices, pass every element
through a bounded Welsch robustifier, and average all elements into one
scalar.  The direct losses supervise the raw grids: a contrastive hinge on
all source-target descriptor pairs and a weighted per-cell cross-entropy on
the detection logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import EmptyMatches, NonFinite, NonInvertible, ShapeMismatch
from .featuregrid import (
    CELL,
    DetectionResponse,
    DetectorTarget,
    grid_cell_centers,
)
from .geometry import (
    NORMALIZED_CORNERS,
    Homography,
    apply_homography,
    scale_fix,
)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the five loss terms; defaults match the final trained model."""

    corner: float = 0.0
    frobenius: float = 0.0
    transfer: float = 1.0
    descriptor: float = 1.0
    detector: float = 1.0

    def __post_init__(self):
        vals = (self.corner, self.frobenius, self.transfer, self.descriptor, self.detector)
        if any(not np.isfinite(v) or v < 0 for v in vals):
            raise NonFinite("loss weights must be finite and nonnegative")


@dataclass(frozen=True)
class RobustConfig:
    alpha: float = 0.1

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")


@dataclass(frozen=True)
class DescriptorLossConfig:
    positive_margin: float = 1.0
    negative_margin: float = 0.2
    positive_weight: float = 250.0

    def __post_init__(self):
        if not (self.positive_margin > self.negative_margin >= 0.0):
            raise ValueError("need positive_margin > negative_margin >= 0")
        if self.positive_weight <= 0:
            raise ValueError("positive_weight must be positive")


@dataclass(frozen=True)
class DetectorLossWeights:
    """65-vector of per-channel weights; downweights the dustbin by default."""

    w: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        w = self.w
        if w is None:
            w = np.full(65, 64.0 / 65.0)
            w[64] = 1.0 / 65.0
        w = np.asarray(w, dtype=np.float64).copy()
        if w.shape != (65,) or np.any(w <= 0):
            raise ValueError("detector weights must be 65 positive values")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @staticmethod
    def uniform() -> "DetectorLossWeights":
        return DetectorLossWeights(np.ones(65))


@dataclass(frozen=True)
class LossTerms:
    corner: float = 0.0
    frobenius: float = 0.0
    transfer: float = 0.0
    descriptor: float = 0.0
    detector: float = 0.0

    def total(self, weights: LossWeights) -> float:
        return total_loss(self, weights)


def welsch(e, alpha: float = 0.1):
    """Bounded robust penalty 1 - exp(-0.5 (e/alpha)^2)."""
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    e = np.asarray(e, dtype=np.float64)
    out = 1.0 - np.exp(-0.5 * (e / alpha) ** 2)
    return float(out) if out.ndim == 0 else out


def welsch_grad(e, alpha: float = 0.1):
    """d welsch / d e = (e / alpha^2) exp(-0.5 (e/alpha)^2)."""
    e = np.asarray(e, dtype=np.float64)
    out = (e / alpha**2) * np.exp(-0.5 * (e / alpha) ** 2)
    return float(out) if out.ndim == 0 else out


def _relative_composition(h_gt_norm: Homography, h_est_norm: Homography):
    """Scale-fixed H_gt^-1 H_est and its inverse, both in normalized frame."""
    for h in (h_gt_norm, h_est_norm):
        if h.frame.kind != "normalized":
            raise NonInvertible("homography losses need normalized-frame inputs")
    g = scale_fix(h_gt_norm.m)
    e = scale_fix(h_est_norm.m)
    fwd = np.linalg.solve(g, e)
    inv = np.linalg.solve(e, g)
    return fwd, inv


def corner_loss(
    h_gt_norm: Homography, h_est_norm: Homography, alpha: float = 0.1
) -> float:
    """Robustified reprojection error of the normalized image corners.

    Both directions are evaluated and all 16 elements averaged.
    """
    fwd, inv = _relative_composition(h_gt_norm, h_est_norm)
    corners = NORMALIZED_CORNERS
    e_fwd = corners - apply_homography(fwd, corners)
    e_inv = corners - apply_homography(inv, corners)
    return float(np.mean(welsch(np.concatenate([e_fwd, e_inv], axis=1), alpha)))


def frobenius_loss(
    h_gt_norm: Homography, h_est_norm: Homography, alpha: float = 0.1
) -> float:
    """Robustified parameter-space error: H_gt^-1 H_est - I, both directions."""
    fwd, inv = _relative_composition(h_gt_norm, h_est_norm)
    e = np.concatenate([(fwd - np.eye(3)).ravel(), (inv - np.eye(3)).ravel()])
    return float(np.mean(welsch(e, alpha)))


def transfer_loss(
    h_gt_norm: Homography,
    src_norm: np.ndarray,
    pseudo_tgt_norm: np.ndarray,
    alpha: float = 0.1,
) -> float:
    """Robustified reprojection error of matches under the GT homography.

    src_norm and pseudo_tgt_norm are (2, N) normalized coordinates; forward
    and inverse error matrices are pooled into one average over 4N elements.
    """
    if h_gt_norm.frame.kind != "normalized":
        raise NonInvertible("transfer loss needs a normalized-frame homography")
    src_norm = np.asarray(src_norm, dtype=np.float64)
    pseudo_tgt_norm = np.asarray(pseudo_tgt_norm, dtype=np.float64)
    if src_norm.shape[1] == 0:
        raise EmptyMatches("transfer loss needs at least one match")
    if src_norm.shape != pseudo_tgt_norm.shape:
        raise ShapeMismatch("source and pseudo-target point sets differ in shape")
    g = h_gt_norm.m
    e_fwd = apply_homography(g, src_norm) - pseudo_tgt_norm
    e_inv = apply_homography(np.linalg.inv(g), pseudo_tgt_norm) - src_norm
    return float(np.mean(welsch(np.concatenate([e_fwd, e_inv], axis=1), alpha)))


def descriptor_correspondence(
    grid_shape_src: tuple[int, int],
    grid_shape_tgt: tuple[int, int],
    h_gt: Homography,
    radius: float = CELL / 2.0,
) -> np.ndarray:
    """Binary (Ns, Nt) matrix: warped source cell-center within radius px of
    the target cell-center."""
    if h_gt.frame.kind != "pixel":
        raise NonInvertible("correspondence needs a pixel-frame homography")
    src_centers = grid_cell_centers(*grid_shape_src)
    tgt_centers = grid_cell_centers(*grid_shape_tgt)
    warped = apply_homography(h_gt.m, src_centers)
    d2 = (warped[0][:, None] - tgt_centers[0][None, :]) ** 2 + (
        warped[1][:, None] - tgt_centers[1][None, :]
    ) ** 2
    return (d2 <= radius * radius).astype(np.float64)


def descriptor_loss_arrays(
    desc_src: np.ndarray,
    desc_tgt: np.ndarray,
    h_gt: Homography,
    cfg: DescriptorLossConfig | None = None,
) -> float:
    """Contrastive hinge loss over every source-target descriptor cell pair."""
    cfg = cfg or DescriptorLossConfig()
    if desc_src.shape != desc_tgt.shape:
        raise ShapeMismatch("descriptor grids must share a shape")
    hs, ws, c = desc_src.shape
    corr = descriptor_correspondence((hs, ws), (hs, ws), h_gt)
    dots = desc_src.reshape(-1, c) @ desc_tgt.reshape(-1, c).T
    neg = np.maximum(0.0, dots - cfg.negative_margin)
    pos = np.maximum(0.0, cfg.positive_margin - dots)
    loss = (1.0 - corr) * neg + cfg.positive_weight * corr * pos
    return float(loss.mean())


def descriptor_loss(
    map_src, map_tgt, h_gt: Homography, cfg: DescriptorLossConfig | None = None
) -> float:
    ds = map_src.values if hasattr(map_src, "values") else np.asarray(map_src)
    dt = map_tgt.values if hasattr(map_tgt, "values") else np.asarray(map_tgt)
    return descriptor_loss_arrays(ds, dt, h_gt, cfg)


def detector_loss_single(
    logits: np.ndarray, one_hot: np.ndarray, w: np.ndarray
) -> float:
    """Mean weighted cross-entropy over the cells of one image."""
    if logits.shape != one_hot.shape:
        raise ShapeMismatch("logits and labels must share a shape")
    z = logits - logits.max(axis=-1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    per_cell = -(w * one_hot * log_probs).sum(axis=-1)
    return float(per_cell.mean())


def detector_loss(
    responses: tuple[DetectionResponse, DetectionResponse],
    targets: tuple[DetectorTarget, DetectorTarget],
    weights: DetectorLossWeights | None = None,
) -> float:
    """Weighted cross-entropy averaged over all cells of both images."""
    weights = weights or DetectorLossWeights()
    total = 0.0
    n_cells = 0
    for resp, tgt in zip(responses, targets):
        if resp.logits.shape != tgt.one_hot.shape:
            raise ShapeMismatch("response and target shapes differ")
        cells = resp.logits.shape[0] * resp.logits.shape[1]
        total += detector_loss_single(resp.logits, tgt.one_hot, weights.w) * cells
        n_cells += cells
    return total / n_cells


def total_loss(terms: LossTerms, weights: LossWeights) -> float:
    vals = np.array(
        [terms.corner, terms.frobenius, terms.transfer, terms.descriptor, terms.detector]
    )
    if not np.all(np.isfinite(vals)):
        raise NonFinite("loss terms must be finite")
    lam = np.array(
        [weights.corner, weights.frobenius, weights.transfer, weights.descriptor, weights.detector]
    )
    return float(lam @ vals)
