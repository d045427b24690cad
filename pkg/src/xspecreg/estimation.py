"""Homography estimation: inlier scoring, weighted DLT, RANSAC, refinement.

Two end-to-end registration pipelines are provided.  The weighted pipeline
mirrors the differentiable training path (soft extraction, soft matching,
score-weighted estimation) but swaps ground-truth outlier rejection for a
score-weighted RANSAC that assigns binary inlier scores.  The classical
pipeline runs mutual nearest-neighbour matching, plain RANSAC, and damped
least-squares refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    FrameMismatch,
    InsufficientPoints,
    NoConsensus,
    RankDeficient,
    SingularNormalEquations,
)
from .extraction import (
    ClassicalExtractConfig,
    Keypoint,
    SoftExtractConfig,
    extract_classical,
    keypoints_to_arrays,
    soft_extract_arrays,
)
from .featuregrid import DescriptorMap, DetectionResponse, decode_heatmap
from .geometry import Frame, Homography, apply_homography, scale_fix
from .matching import Match, MatcherConfig, mutual_nn, soft_match_arrays

TRAIN_BASE_SIZE = (320, 240)  # (width, height) the default threshold refers to


@dataclass(frozen=True)
class InlierConfig:
    """Soft inlier score parameters: threshold a (pixels) and sharpness b."""

    threshold: float = 50.0
    sharpness: float = 5.0

    def __post_init__(self):
        if self.threshold <= 0 or self.sharpness <= 0:
            raise ValueError("threshold and sharpness must be positive")

    def scaled(self, width: int, height: int) -> "InlierConfig":
        """Scale the pixel threshold linearly with image diagonal."""
        base = math.hypot(*TRAIN_BASE_SIZE)
        factor = math.hypot(width, height) / base
        return InlierConfig(self.threshold * factor, self.sharpness)


@dataclass(frozen=True)
class RansacConfig:
    iterations: int = 2000
    inlier_threshold: float = 3.0
    min_sample: int = 4
    seed: int = 0
    weighted_sampling: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.min_sample != 4:
            raise ValueError("homography estimation needs 4-point minimal samples")


@dataclass
class RegistrationResult:
    """Estimated homography plus per-match data (arrays; see .matches)."""

    h_est: Homography
    inlier_indices: np.ndarray
    src_coords: np.ndarray  # (2, N)
    tgt_coords: np.ndarray  # (2, N) actual or pseudo target locations
    score_k_src: np.ndarray
    score_k_tgt: np.ndarray
    score_m: np.ndarray
    score_in: np.ndarray
    weight: np.ndarray
    src_descs: np.ndarray | None = None
    tgt_descs: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_matches(self) -> int:
        return self.src_coords.shape[1]

    @property
    def matches(self) -> list[Match]:
        out = []
        for i in range(self.n_matches):
            sd = self.src_descs[i] if self.src_descs is not None else np.zeros(0)
            td = self.tgt_descs[i] if self.tgt_descs is not None else np.zeros(0)
            src = Keypoint(
                float(self.src_coords[0, i]),
                float(self.src_coords[1, i]),
                float(self.score_k_src[i]),
                sd,
            )
            tgt = Keypoint(
                float(self.tgt_coords[0, i]),
                float(self.tgt_coords[1, i]),
                float(self.score_k_tgt[i]),
                td,
            )
            out.append(
                Match(
                    src,
                    tgt,
                    float(self.score_m[i]),
                    float(self.score_in[i]),
                    float(self.weight[i]),
                )
            )
        return out

    def to_json(self, include_matches: bool = True) -> dict:
        out = {
            "h_est": self.h_est.to_json(),
            "inlier_indices": [int(i) for i in self.inlier_indices],
            "diagnostics": self.diagnostics,
        }
        if include_matches:
            out["matches"] = {
                "src_u": self.src_coords[0].tolist(),
                "src_v": self.src_coords[1].tolist(),
                "tgt_u": self.tgt_coords[0].tolist(),
                "tgt_v": self.tgt_coords[1].tolist(),
                "score_k_src": self.score_k_src.tolist(),
                "score_k_tgt": self.score_k_tgt.tolist(),
                "score_m": self.score_m.tolist(),
                "score_in": self.score_in.tolist(),
                "weight": self.weight.tolist(),
            }
        return out


def inlier_score(x, cfg: InlierConfig | None = None):
    """Soft sigmoid inlier score: 1 / (1 + exp(b (x/a - 1)))."""
    cfg = cfg or InlierConfig()
    x = np.asarray(x, dtype=np.float64)
    out = 1.0 / (1.0 + np.exp(cfg.sharpness * (x / cfg.threshold - 1.0)))
    return float(out) if out.ndim == 0 else out


def score_inliers_gt(
    matches: list[Match], h_gt: Homography, cfg: InlierConfig | None = None
) -> list[Match]:
    """Ground-truth inlier scoring used during training.

    x is the reprojection error of the pseudo-target against the warped
    source; the match weight becomes the four-score product.
    """
    cfg = cfg or InlierConfig()
    if h_gt.frame.kind != "pixel":
        raise FrameMismatch("ground-truth homography must be in the pixel frame")
    if not matches:
        return []
    src = np.array([[m.src.u for m in matches], [m.src.v for m in matches]])
    tgt = np.array(
        [[m.pseudo_tgt.u for m in matches], [m.pseudo_tgt.v for m in matches]]
    )
    warped = apply_homography(h_gt.m, src)
    x = np.linalg.norm(warped - tgt, axis=0)
    scores = inlier_score(x, cfg)
    return [m.with_inlier_score(float(s)) for m, s in zip(matches, scores)]


def _hartley_transform(coords: np.ndarray) -> np.ndarray:
    """Similarity transform centering points and scaling mean radius to sqrt(2)."""
    centroid = coords.mean(axis=1)
    centered = coords - centroid[:, None]
    mean_dist = np.mean(np.linalg.norm(centered, axis=0))
    if mean_dist < 1e-12:
        raise RankDeficient("correspondences are coincident")
    s = math.sqrt(2.0) / mean_dist
    return np.array(
        [[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]]
    )


def weighted_dlt_matrix(
    src: np.ndarray, dst: np.ndarray, weights: np.ndarray | None = None
) -> np.ndarray:
    """Weighted direct linear transform on (2, N) correspondences.

    Each correspondence contributes two rows scaled by its weight; both point
    sets are Hartley-normalized (over the positive-weight points only, so
    zero-weight correspondences are excluded exactly).  The solution is the
    smallest right singular vector of the stacked system.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = src.shape[1]
    if weights is None:
        weights = np.ones(n)
    weights = np.asarray(weights, dtype=np.float64)
    if np.any(weights < 0):
        raise ValueError("weights must be nonnegative")
    active = weights > 0
    if int(active.sum()) < 4:
        raise InsufficientPoints("weighted DLT needs >= 4 positive-weight points")
    s_pts, d_pts, w = src[:, active], dst[:, active], weights[active]

    ts = _hartley_transform(s_pts)
    td = _hartley_transform(d_pts)
    sx = ts[0, 0] * s_pts[0] + ts[0, 2]
    sy = ts[1, 1] * s_pts[1] + ts[1, 2]
    dx = td[0, 0] * d_pts[0] + td[0, 2]
    dy = td[1, 1] * d_pts[1] + td[1, 2]

    m = int(active.sum())
    a = np.zeros((2 * m, 9))
    a[0::2, 0] = -sx
    a[0::2, 1] = -sy
    a[0::2, 2] = -1.0
    a[0::2, 6] = sx * dx
    a[0::2, 7] = sy * dx
    a[0::2, 8] = dx
    a[1::2, 3] = -sx
    a[1::2, 4] = -sy
    a[1::2, 5] = -1.0
    a[1::2, 6] = sx * dy
    a[1::2, 7] = sy * dy
    a[1::2, 8] = dy
    a *= np.repeat(w, 2)[:, None]

    _, svals, vt = np.linalg.svd(a)
    if svals[-2] <= 1e-10 * max(svals[0], 1e-300):
        raise RankDeficient("degenerate correspondence configuration")
    h_norm = vt[-1].reshape(3, 3)
    return scale_fix(np.linalg.inv(td) @ h_norm @ ts)


def weighted_dlt(
    src: np.ndarray,
    dst: np.ndarray,
    weights: np.ndarray | None = None,
    frame: Frame | None = None,
) -> Homography:
    m = weighted_dlt_matrix(src, dst, weights)
    return Homography(m, frame or Frame.normalized())


def reprojection_errors(m: np.ndarray, src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    hom = m[:, :2] @ src + m[:, 2:3]
    w = hom[2]
    bad = np.abs(w) < 1e-12
    w = np.where(bad, 1.0, w)
    proj = hom[:2] / w
    err = np.linalg.norm(proj - dst, axis=0)
    err[bad] = np.inf
    return err


def _draw_minimal_samples(
    rng: np.random.Generator, n: int, iterations: int, probs: np.ndarray | None
) -> np.ndarray:
    """(iterations, 4) index samples without replacement, optionally weighted.

    Uses exponential-race keys (Efraimidis-Spirakis: top-k of u^(1/w), here
    compared as log(u)/w), which draws exactly from sequential weighted
    sampling without replacement; zero-weight entries get a -inf key and are
    never selected.
    """
    u = rng.random((iterations, n), dtype=np.float32)
    if probs is not None:
        with np.errstate(divide="ignore"):
            np.log(u, out=u)  # u = 0 gives -inf: never selected, like p = 0
            u /= probs.astype(np.float32)[None, :]
    return np.argpartition(-u, 3, axis=1)[:, :4]


def _batched_minimal_dlt(src4: np.ndarray, dst4: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """DLT on (k, 4, 2) minimal samples: (k, 3, 3) models plus a validity mask.

    Hartley normalization is applied per sample; rank-deficient samples are
    flagged invalid instead of raising.
    """

    def normalize(p):
        centroid = p.mean(axis=1, keepdims=True)
        centered = p - centroid
        mean_dist = np.linalg.norm(centered, axis=2).mean(axis=1)
        s = math.sqrt(2.0) / np.maximum(mean_dist, 1e-300)
        return centered * s[:, None, None], s, centroid[:, 0, :]

    sn, ss, sc = normalize(src4)
    dn, ds, dc = normalize(dst4)
    k = src4.shape[0]
    a = np.zeros((k, 8, 9))
    sx, sy = sn[:, :, 0], sn[:, :, 1]
    dx, dy = dn[:, :, 0], dn[:, :, 1]
    a[:, 0::2, 0] = -sx
    a[:, 0::2, 1] = -sy
    a[:, 0::2, 2] = -1.0
    a[:, 0::2, 6] = sx * dx
    a[:, 0::2, 7] = sy * dx
    a[:, 0::2, 8] = dx
    a[:, 1::2, 3] = -sx
    a[:, 1::2, 4] = -sy
    a[:, 1::2, 5] = -1.0
    a[:, 1::2, 6] = sx * dy
    a[:, 1::2, 7] = sy * dy
    a[:, 1::2, 8] = dy
    _, svals, vt = np.linalg.svd(a)
    valid = svals[:, -1] > 1e-10 * np.maximum(svals[:, 0], 1e-300)
    h_norm = vt[:, -1, :].reshape(k, 3, 3)
    # denormalize: T_d^-1 H T_s with analytic similarity inverses
    ts = np.zeros((k, 3, 3))
    ts[:, 0, 0] = ss
    ts[:, 1, 1] = ss
    ts[:, 0, 2] = -ss * sc[:, 0]
    ts[:, 1, 2] = -ss * sc[:, 1]
    ts[:, 2, 2] = 1.0
    td_inv = np.zeros((k, 3, 3))
    td_inv[:, 0, 0] = 1.0 / ds
    td_inv[:, 1, 1] = 1.0 / ds
    td_inv[:, 0, 2] = dc[:, 0]
    td_inv[:, 1, 2] = dc[:, 1]
    td_inv[:, 2, 2] = 1.0
    return td_inv @ h_norm @ ts, valid


def ransac(
    src: np.ndarray,
    dst: np.ndarray,
    cfg: RansacConfig | None = None,
    scores: np.ndarray | None = None,
    frame: Frame | None = None,
) -> tuple[Homography, np.ndarray]:
    """RANSAC homography from (2, N) correspondences.

    With weighted_sampling, minimal samples are drawn with probability
    proportional to the supplied scores (zero-score matches are never drawn).
    The best-consensus model (ties: first found) is re-fit on its inliers
    with an unweighted DLT.  Deterministic for a fixed seed.
    """
    cfg = cfg or RansacConfig()
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    n = src.shape[1]
    if n < 4:
        raise InsufficientPoints(f"RANSAC needs >= 4 matches, got {n}")
    probs = None
    if cfg.weighted_sampling:
        if scores is None:
            raise ValueError("weighted_sampling requires scores")
        scores = np.asarray(scores, dtype=np.float64)
        total = scores.sum()
        if total <= 0 or int((scores > 0).sum()) < 4:
            raise NoConsensus("fewer than 4 matches with positive sampling score")
        probs = scores / total

    rng = np.random.default_rng(cfg.seed)
    samples = _draw_minimal_samples(rng, n, cfg.iterations, probs)
    models, valid = _batched_minimal_dlt(
        src.T[samples], dst.T[samples]
    )

    # consensus counting runs in single precision: it only ranks hypotheses,
    # and the winning model's inlier set is re-derived in double precision
    src_h = np.concatenate([src, np.ones((1, n))]).astype(np.float32)
    dst32 = dst.astype(np.float32)
    models32 = models.astype(np.float32)
    thr2 = np.float32(cfg.inlier_threshold**2)
    counts = np.full(cfg.iterations, -1, dtype=np.int64)
    chunk = 256
    for start in range(0, cfg.iterations, chunk):
        stop = min(start + chunk, cfg.iterations)
        hom = models32[start:stop] @ src_h  # (k, 3, n)
        w = hom[:, 2, :]
        bad_w = np.abs(w) < 1e-12
        w = np.where(bad_w, np.float32(1.0), w)
        du = hom[:, 0, :] / w - dst32[0]
        dv = hom[:, 1, :] / w - dst32[1]
        err2 = du * du + dv * dv
        err2[bad_w] = np.inf
        counts[start:stop] = np.where(
            valid[start:stop], (err2 < thr2).sum(axis=1), -1
        )
    best_iter = int(np.argmax(counts))
    best_count = int(counts[best_iter])
    if best_count < 4:
        raise NoConsensus(f"best consensus has {max(best_count, 0)} < 4 inliers")

    err = reprojection_errors(models[best_iter], src, dst)
    inlier_idx = np.nonzero(err < cfg.inlier_threshold)[0]
    m = weighted_dlt_matrix(src[:, inlier_idx], dst[:, inlier_idx])
    h = Homography(m, frame or Frame.normalized())
    return h, inlier_idx


def _unpack_h(params: np.ndarray) -> np.ndarray:
    return np.append(params, 1.0).reshape(3, 3)


def _residuals_and_jacobian(params: np.ndarray, src: np.ndarray, dst: np.ndarray):
    h = _unpack_h(params)
    x, y = src
    w = h[2, 0] * x + h[2, 1] * y + 1.0
    u = (h[0, 0] * x + h[0, 1] * y + h[0, 2]) / w
    v = (h[1, 0] * x + h[1, 1] * y + h[1, 2]) / w
    r = np.concatenate([u - dst[0], v - dst[1]])
    n = src.shape[1]
    jac = np.zeros((2 * n, 8))
    jac[:n, 0] = x / w
    jac[:n, 1] = y / w
    jac[:n, 2] = 1.0 / w
    jac[:n, 6] = -u * x / w
    jac[:n, 7] = -u * y / w
    jac[n:, 3] = x / w
    jac[n:, 4] = y / w
    jac[n:, 5] = 1.0 / w
    jac[n:, 6] = -v * x / w
    jac[n:, 7] = -v * y / w
    return r, jac


def refine_dls(
    h0: Homography,
    src: np.ndarray,
    dst: np.ndarray,
    max_iterations: int = 100,
    step_tol: float = 1e-10,
) -> Homography:
    """Damped least-squares (Levenberg-Marquardt) reprojection refinement.

    Minimizes the summed squared reprojection error over the 8 free
    parameters (m22 fixed at 1).  Accepted steps never increase the cost.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape[1] < 4:
        raise InsufficientPoints("refinement needs >= 4 correspondences")
    params = scale_fix(h0.m).ravel()[:8]
    r, jac = _residuals_and_jacobian(params, src, dst)
    jac_svals = np.linalg.svd(jac, compute_uv=False)
    if jac_svals[-1] <= 1e-12 * max(jac_svals[0], 1e-300):
        raise SingularNormalEquations("degenerate correspondence configuration")
    cost = float(r @ r)
    lam = 1e-3
    for _ in range(max_iterations):
        jtj = jac.T @ jac
        g = jac.T @ r
        if np.max(np.abs(g)) < 1e-14:
            break
        stepped = False
        delta = np.zeros(8)
        for _ in range(25):
            damped = jtj + lam * np.diag(np.maximum(np.diag(jtj), 1e-12))
            try:
                delta = np.linalg.solve(damped, -g)
            except np.linalg.LinAlgError as exc:
                raise SingularNormalEquations(str(exc)) from exc
            if not np.all(np.isfinite(delta)):
                raise SingularNormalEquations("non-finite LM step")
            trial = params + delta
            r_trial, jac_trial = _residuals_and_jacobian(trial, src, dst)
            cost_trial = float(r_trial @ r_trial)
            if cost_trial <= cost:
                params, r, jac, cost = trial, r_trial, jac_trial, cost_trial
                lam = max(lam / 10.0, 1e-12)
                stepped = True
                break
            lam *= 10.0
        if not stepped or np.linalg.norm(delta) < step_tol:
            break
    return Homography(_unpack_h(params), h0.frame)


def run_weighted_pipeline(
    det_src: DetectionResponse,
    desc_src: DescriptorMap,
    det_tgt: DetectionResponse,
    desc_tgt: DescriptorMap,
    extract_cfg: SoftExtractConfig | None = None,
    matcher_cfg: MatcherConfig | None = None,
    ransac_cfg: RansacConfig | None = None,
) -> RegistrationResult:
    """Soft extraction -> soft matching -> weighted RANSAC -> weighted DLT."""
    extract_cfg = extract_cfg or SoftExtractConfig()
    matcher_cfg = matcher_cfg or MatcherConfig()
    ransac_cfg = ransac_cfg or RansacConfig(weighted_sampling=True)
    if not ransac_cfg.weighted_sampling:
        raise ValueError("the weighted pipeline requires weighted_sampling RANSAC")

    heat_s = decode_heatmap(det_src).values
    heat_t = decode_heatmap(det_tgt).values
    sc, ss, sd = soft_extract_arrays(heat_s, desc_src.values, extract_cfg)
    tc, ts, td = soft_extract_arrays(heat_t, desc_tgt.values, extract_cfg)
    if sc.shape[0] < 4 or tc.shape[0] < 4:
        raise InsufficientPoints("need >= 4 keypoints on each side")

    m = soft_match_arrays(sc.T, sd, tc.T, td, heat_t, desc_tgt.values, matcher_cfg)
    sampling_scores = ss * m["pseudo_scores"] * m["match_scores"]
    frame = Frame.pixel(det_src.image_width, det_src.image_height)
    _, inlier_idx = ransac(
        sc.T, m["pseudo_coords"], ransac_cfg, scores=sampling_scores, frame=frame
    )
    score_in = np.zeros(sc.shape[0])
    score_in[inlier_idx] = 1.0
    weights = sampling_scores * score_in
    h_est = weighted_dlt(
        sc.T[:, inlier_idx],
        m["pseudo_coords"][:, inlier_idx],
        weights[inlier_idx],
        frame=frame,
    )
    inlier_err = reprojection_errors(
        h_est.m, sc.T[:, inlier_idx], m["pseudo_coords"][:, inlier_idx]
    )
    diagnostics = {
        "pipeline": "weighted",
        "n_keypoints_src": int(sc.shape[0]),
        "n_keypoints_tgt": int(tc.shape[0]),
        "n_matches": int(sc.shape[0]),
        "n_inliers": int(len(inlier_idx)),
        "ransac_iterations": ransac_cfg.iterations,
        "mean_inlier_residual_px": float(inlier_err.mean()),
    }
    return RegistrationResult(
        h_est=h_est,
        inlier_indices=inlier_idx,
        src_coords=sc.T,
        tgt_coords=m["pseudo_coords"],
        score_k_src=ss,
        score_k_tgt=m["pseudo_scores"],
        score_m=m["match_scores"],
        score_in=score_in,
        weight=weights,
        src_descs=sd,
        tgt_descs=m["pseudo_descs"],
        diagnostics=diagnostics,
    )


def run_classical_pipeline(
    kps_src: list[Keypoint],
    kps_tgt: list[Keypoint],
    ransac_cfg: RansacConfig | None = None,
    similarity: str = "dot",
    frame: Frame | None = None,
) -> RegistrationResult:
    """Mutual NN matching -> RANSAC -> damped least-squares refinement."""
    ransac_cfg = ransac_cfg or RansacConfig()
    if len(kps_src) < 4 or len(kps_tgt) < 4:
        raise InsufficientPoints("need >= 4 keypoints on each side")
    pairs = mutual_nn(kps_src, kps_tgt, similarity)
    if len(pairs) < 4:
        raise InsufficientPoints(f"only {len(pairs)} mutual matches")
    sc_all, ss_all, sd_all = keypoints_to_arrays(kps_src)
    tc_all, ts_all, td_all = keypoints_to_arrays(kps_tgt)
    si = np.array([i for i, _ in pairs])
    ti = np.array([j for _, j in pairs])
    src, dst = sc_all[:, si], tc_all[:, ti]
    frame = frame or Frame.normalized()
    h0, inlier_idx = ransac(src, dst, ransac_cfg, frame=frame)
    h_est = refine_dls(h0, src[:, inlier_idx], dst[:, inlier_idx])

    sims = np.einsum("nc,nc->n", sd_all[si], td_all[ti])
    score_m = np.clip((sims + 1.0) / 2.0, 0.0, 1.0)
    score_in = np.zeros(len(pairs))
    score_in[inlier_idx] = 1.0
    weights = ss_all[si] * ts_all[ti] * score_m * score_in
    inlier_err = reprojection_errors(
        h_est.m, src[:, inlier_idx], dst[:, inlier_idx]
    )
    diagnostics = {
        "pipeline": "classical",
        "n_keypoints_src": len(kps_src),
        "n_keypoints_tgt": len(kps_tgt),
        "n_matches": len(pairs),
        "n_inliers": int(len(inlier_idx)),
        "ransac_iterations": ransac_cfg.iterations,
        "mean_inlier_residual_px": float(inlier_err.mean()),
        "match_index_pairs": [[int(i), int(j)] for i, j in pairs],
    }
    return RegistrationResult(
        h_est=h_est,
        inlier_indices=inlier_idx,
        src_coords=src,
        tgt_coords=dst,
        score_k_src=ss_all[si],
        score_k_tgt=ts_all[ti],
        score_m=score_m,
        score_in=score_in,
        weight=weights,
        src_descs=sd_all[si],
        tgt_descs=td_all[ti],
        diagnostics=diagnostics,
    )


def classical_pipeline_from_grids(
    det_src: DetectionResponse,
    desc_src: DescriptorMap,
    det_tgt: DetectionResponse,
    desc_tgt: DescriptorMap,
    extract_cfg: ClassicalExtractConfig | None = None,
    ransac_cfg: RansacConfig | None = None,
    similarity: str = "dot",
) -> RegistrationResult:
    """Classical pipeline starting from raw grids (threshold + NMS extraction)."""
    kps_s = extract_classical(decode_heatmap(det_src), desc_src, extract_cfg)
    kps_t = extract_classical(decode_heatmap(det_tgt), desc_tgt, extract_cfg)
    frame = Frame.pixel(det_src.image_width, det_src.image_height)
    return run_classical_pipeline(kps_s, kps_t, ransac_cfg, similarity, frame)
