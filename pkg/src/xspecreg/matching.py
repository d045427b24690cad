"""Descriptor comparison and matching.

The differentiable matcher builds, for every source keypoint, a pseudo-target
keypoint: a softmax-weighted combination of all target keypoint locations,
with weights driven by shifted ZNCC similarity at a sharp temperature.  The
pseudo keypoint's score and descriptor are re-interpolated from the target
maps at the blended location.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyTargetSet, ZeroVariance
from .extraction import Keypoint, keypoints_to_arrays
from .featuregrid import DescriptorMap, Heatmap, bilinear_descriptor, bilinear_scalar

_VAR_EPS = 1e-12


@dataclass(frozen=True)
class MatcherConfig:
    temperature: float = 0.01

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


@dataclass(frozen=True)
class Match:
    """A source keypoint paired with its (pseudo-)target keypoint and scores."""

    src: Keypoint
    pseudo_tgt: Keypoint
    score_m: float
    score_in: float | None = None
    weight: float | None = None

    def with_inlier_score(self, score_in: float) -> "Match":
        w = self.src.score * self.pseudo_tgt.score * self.score_m * score_in
        return replace(self, score_in=float(score_in), weight=float(w))


def center_scale(vecs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Zero-mean, unit-(population)-variance rows: returns (scaled rows, sigma)."""
    v = np.asarray(vecs, dtype=np.float64)
    centered = v - v.mean(axis=-1, keepdims=True)
    sigma = np.sqrt(np.mean(centered * centered, axis=-1))
    if np.any(sigma * sigma <= _VAR_EPS):
        raise ZeroVariance("descriptor is numerically constant")
    return centered / sigma[..., None], sigma


def zncc(d1: np.ndarray, d2: np.ndarray) -> float:
    """Zero-normalized cross-correlation of two vectors, in [-1, 1]."""
    a = np.asarray(d1, dtype=np.float64)
    b = np.asarray(d2, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("zncc needs two equal-length 1-D vectors")
    an, _ = center_scale(a)
    bn, _ = center_scale(b)
    return float(np.clip(an @ bn / a.shape[0], -1.0, 1.0))


def zncc_matrix_raw(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs ZNCC without the defensive clip (cheaper on big grids)."""
    an, _ = center_scale(a)
    bn, _ = center_scale(b)
    return an @ bn.T / a.shape[-1]


def zncc_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All-pairs ZNCC between rows of (Na, C) and (Nb, C): (Na, Nb) in [-1, 1]."""
    return np.clip(zncc_matrix_raw(a, b), -1.0, 1.0)


def match_score(d_src: np.ndarray, d_pseudo: np.ndarray) -> float:
    """Shift ZNCC into [0, 1]: (zncc + 1) / 2."""
    return (zncc(d_src, d_pseudo) + 1.0) / 2.0


# weight cutoff for the sparse mixture: entries this many e-foldings below a
# row's best carry relative mass < 2e-11 and cannot move a pseudo keypoint
_LOG_WEIGHT_CUTOFF = 25.0


def soft_match_arrays(
    src_coords: np.ndarray,
    src_descs: np.ndarray,
    tgt_coords: np.ndarray,
    tgt_descs: np.ndarray,
    tgt_heat: np.ndarray,
    tgt_desc_grid: np.ndarray,
    cfg: MatcherConfig,
    return_weights: bool = False,
) -> dict:
    """Array core of the soft matcher.

    src_coords/tgt_coords are (2, N); descriptor rows are (N, C).  Returns a
    dict with pseudo coordinates (2, Ns), pseudo scores, pseudo descriptors,
    and match scores.  The all-pairs similarity is computed in single
    precision (it only ranks and weights mixture members), and the softmax
    mixture is evaluated sparsely over the entries that carry weight; pass
    return_weights=True to also materialize the dense normalized weight
    matrix in double precision.
    """
    if tgt_coords.shape[1] == 0:
        raise EmptyTargetSet("soft matching needs at least one target keypoint")
    sn_all, _ = center_scale(src_descs)
    tn_all, _ = center_scale(tgt_descs)
    c_len = src_descs.shape[1]
    # fold the 1/C and 1/tau scalings into one operand; the +1 shift of the
    # softmax argument cancels against the row normalization
    s_op = (sn_all / (c_len * cfg.temperature)).astype(np.float32)
    a = s_op @ tn_all.astype(np.float32).T  # (Ns, Nt) = zncc / tau
    row_max = a.max(axis=1)

    ns = a.shape[0]
    rows, cols = np.nonzero(a > (row_max[:, None] - np.float32(_LOG_WEIGHT_CUTOFF)))
    vals = np.exp(a[rows, cols].astype(np.float64) - row_max[rows])
    sums = np.bincount(rows, weights=vals, minlength=ns)
    pseudo = np.stack(
        [
            np.bincount(rows, weights=vals * tgt_coords[0, cols], minlength=ns) / sums,
            np.bincount(rows, weights=vals * tgt_coords[1, cols], minlength=ns) / sums,
        ]
    )
    pseudo_scores = bilinear_scalar(tgt_heat, pseudo[0], pseudo[1])
    pseudo_descs = bilinear_descriptor(tgt_desc_grid, pseudo[0], pseudo[1])
    pn, _ = center_scale(pseudo_descs)
    z_pseudo = np.clip(np.einsum("nc,nc->n", sn_all, pn) / c_len, -1.0, 1.0)
    out = {
        "pseudo_coords": pseudo,
        "pseudo_scores": pseudo_scores,
        "pseudo_descs": pseudo_descs,
        "match_scores": (z_pseudo + 1.0) / 2.0,
    }
    if return_weights:
        out["zncc"] = a * np.float32(cfg.temperature)  # float32; ranking only
        weights = np.zeros((ns, a.shape[1]))
        weights[rows, cols] = vals / sums[rows]
        out["weights"] = weights
    return out


def soft_match(
    src: list[Keypoint],
    tgt: list[Keypoint],
    cfg: MatcherConfig | None = None,
    *,
    target_heatmap: Heatmap,
    target_descriptors: DescriptorMap,
) -> list[Match]:
    """Differentiable matching: one pseudo-target per source keypoint.

    Inlier scores and weights are left unset; a downstream scorer fills them.
    """
    cfg = cfg or MatcherConfig()
    if not tgt:
        raise EmptyTargetSet("soft matching needs at least one target keypoint")
    sc, _, sd = keypoints_to_arrays(src)
    tc, _, td = keypoints_to_arrays(tgt)
    out = soft_match_arrays(
        sc, sd, tc, td, target_heatmap.values, target_descriptors.values, cfg
    )
    matches = []
    for i, kp in enumerate(src):
        pseudo = Keypoint(
            float(out["pseudo_coords"][0, i]),
            float(out["pseudo_coords"][1, i]),
            float(out["pseudo_scores"][i]),
            out["pseudo_descs"][i],
        )
        matches.append(Match(kp, pseudo, float(out["match_scores"][i])))
    return matches


def similarity_matrix(
    src_descs: np.ndarray, tgt_descs: np.ndarray, similarity: str
) -> np.ndarray:
    if similarity == "dot":
        return src_descs @ tgt_descs.T
    if similarity == "zncc":
        return zncc_matrix(src_descs, tgt_descs)
    raise ValueError(f"unknown similarity {similarity!r}")


def mutual_nn(
    src: list[Keypoint] | np.ndarray,
    tgt: list[Keypoint] | np.ndarray,
    similarity: str = "dot",
) -> list[tuple[int, int]]:
    """Mutual nearest-neighbour index pairs; ties broken by lowest index."""
    sd = src if isinstance(src, np.ndarray) else keypoints_to_arrays(src)[2]
    td = tgt if isinstance(tgt, np.ndarray) else keypoints_to_arrays(tgt)[2]
    if sd.shape[0] == 0 or td.shape[0] == 0:
        return []
    sim = similarity_matrix(sd, td, similarity)
    best_t = np.argmax(sim, axis=1)
    best_s = np.argmax(sim, axis=0)
    return [(i, int(j)) for i, j in enumerate(best_t) if best_s[j] == i]
