"""Synthetic pair generation, dataset ingestion, and experiment orchestration.

All randomness flows from one spec seed through per-pair substreams, so a run
is reproducible for any parallelism degree; the XSPEC_THREADS environment
variable caps the worker count.  Per-pair pipeline errors are recorded as
failures (ACE = inf) and never abort a run.
"""

from __future__ import annotations

import functools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ImageLoadError, RegistrationError, ShapeMismatch
from .extraction import (
    ClassicalExtractConfig,
    SoftExtractConfig,
    extract_classical,
    keypoints_to_arrays,
    load_keypoints,
)
from .estimation import (
    RansacConfig,
    RegistrationResult,
    classical_pipeline_from_grids,
    run_classical_pipeline,
    run_weighted_pipeline,
)
from .featuregrid import (
    DescriptorMap,
    DetectionResponse,
    decode_heatmap,
    read_xsfm,
    write_xsfm,
)
from .geometry import Frame, Homography, HomographySamplerConfig, sample_homography
from .matching import MatcherConfig, mutual_nn
from .metrics import (
    MetricsConfig,
    MetricsReport,
    ace,
    mean_ap,
    mma,
    matching_score,
    repeatability,
    success_fractions,
)
from .mock import MockFeatureConfig, generate_mock_features

THREADS_ENV = "XSPEC_THREADS"


def thread_count(requested: int | None = None) -> int:
    cap = os.environ.get(THREADS_ENV, "").strip()
    limit = int(cap) if cap else (os.cpu_count() or 1)
    if requested is not None and requested > 0:
        limit = min(limit, requested)
    return max(1, limit)


# ---------------------------------------------------------------------------
# Image warping and photometric augmentation


@dataclass(frozen=True)
class PhotometricConfig:
    brightness: float = 20.0 / 255.0
    contrast_range: tuple[float, float] = (0.8, 1.2)
    noise_sigma: float = 3.0 / 255.0
    gamma_range: tuple[float, float] = (0.8, 1.2)


@dataclass(frozen=True)
class SyntheticPairConfig:
    """Geometry + photometry + mock-feature knobs for one synthetic pair."""

    width: int = 320
    height: int = 240
    sampler: HomographySamplerConfig = field(default_factory=HomographySamplerConfig)
    photometric: PhotometricConfig | None = field(default_factory=PhotometricConfig)
    n_keypoints: int = 100
    location_jitter: float = 0.0
    descriptor_noise: float = 0.0
    outlier_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.width % 8 or self.height % 8:
            raise ShapeMismatch("pair size must be divisible by 8")


def load_image(source) -> np.ndarray:
    """Grayscale image as float64 in [0, 1] from an array or a PNG/PGM path."""
    if isinstance(source, np.ndarray):
        img = source.astype(np.float64)
        if img.max() > 1.0:
            img = img / 255.0
        return img
    try:
        from PIL import Image

        with Image.open(source) as im:
            return np.asarray(im.convert("L"), dtype=np.float64) / 255.0
    except FileNotFoundError as exc:
        raise ImageLoadError(str(exc)) from exc
    except Exception as exc:  # pillow raises various decode errors
        raise ImageLoadError(f"cannot read image {source}: {exc}") from exc


def warp_image(img: np.ndarray, h: Homography) -> tuple[np.ndarray, np.ndarray]:
    """Bilinear inverse warp: output pixel q samples img at H^-1 q.

    Returns (warped, valid_mask); out-of-view pixels are 0 and masked False.
    """
    hh, ww = img.shape
    inv = np.linalg.inv(h.m)
    vq, uq = np.mgrid[0:hh, 0:ww]
    ones = np.ones_like(uq, dtype=np.float64)
    hom = np.tensordot(inv, np.stack([uq, vq, ones]), axes=1)
    w = hom[2]
    w = np.where(np.abs(w) < 1e-12, 1e-12, w)
    us, vs = hom[0] / w, hom[1] / w
    valid = (us >= 0) & (us <= ww - 1) & (vs >= 0) & (vs <= hh - 1)
    ucl = np.clip(us, 0, ww - 1)
    vcl = np.clip(vs, 0, hh - 1)
    x0 = np.clip(np.floor(ucl).astype(np.int64), 0, ww - 2)
    y0 = np.clip(np.floor(vcl).astype(np.int64), 0, hh - 2)
    fx, fy = ucl - x0, vcl - y0
    top = img[y0, x0] * (1 - fx) + img[y0, x0 + 1] * fx
    bot = img[y0 + 1, x0] * (1 - fx) + img[y0 + 1, x0 + 1] * fx
    out = top * (1 - fy) + bot * fy
    out[~valid] = 0.0
    return out, valid


def apply_photometric(
    img: np.ndarray, cfg: PhotometricConfig, rng: np.random.Generator
) -> np.ndarray:
    gamma = rng.uniform(*cfg.gamma_range)
    contrast = rng.uniform(*cfg.contrast_range)
    brightness = rng.uniform(-cfg.brightness, cfg.brightness)
    out = np.power(np.clip(img, 0.0, 1.0), gamma)
    out = out * contrast + brightness
    if cfg.noise_sigma > 0:
        out = out + rng.normal(0.0, cfg.noise_sigma, out.shape)
    return np.clip(out, 0.0, 1.0)


def make_pair(
    image, cfg: SyntheticPairConfig
) -> tuple[np.ndarray, np.ndarray, Homography]:
    """Warp an image by a random homography and augment the result."""
    img = load_image(image)
    if img.shape != (cfg.height, cfg.width):
        raise ShapeMismatch(
            f"image shape {img.shape} != configured {(cfg.height, cfg.width)}"
        )
    rng = np.random.default_rng(cfg.seed)
    h_gt = sample_homography(
        cfg.sampler, cfg.width, cfg.height, rng.integers(2**63)
    )
    target, _ = warp_image(img, h_gt)
    if cfg.photometric is not None:
        target = apply_photometric(target, cfg.photometric, rng)
    return img, target, h_gt


def procedural_image(width: int, height: int, seed: int = 0) -> np.ndarray:
    """Smooth deterministic test image: coarse random fields upsampled bilinearly."""
    rng = np.random.default_rng(seed)
    img = np.zeros((height, width))
    for cells, gain in ((8, 0.6), (24, 0.3), (64, 0.1)):
        coarse = rng.random((cells + 1, cells + 1))
        vq, uq = np.mgrid[0:height, 0:width]
        gu = uq * cells / (width - 1)
        gv = vq * cells / (height - 1)
        x0 = np.clip(np.floor(gu).astype(np.int64), 0, cells - 1)
        y0 = np.clip(np.floor(gv).astype(np.int64), 0, cells - 1)
        fx, fy = gu - x0, gv - y0
        layer = (
            coarse[y0, x0] * (1 - fx) * (1 - fy)
            + coarse[y0, x0 + 1] * fx * (1 - fy)
            + coarse[y0 + 1, x0] * (1 - fx) * fy
            + coarse[y0 + 1, x0 + 1] * fx * fy
        )
        img += gain * layer
    return np.clip(img, 0.0, 1.0)


# ---------------------------------------------------------------------------
# Experiment specification


@dataclass
class ExperimentSpec:
    """Everything one `eval` run needs; serializable to JSON."""

    pipeline: str = "weighted"  # "classical" | "weighted"
    feature_source: str = "mock"  # "mock" | "files" | "keypoint-lists"
    n_pairs: int = 20
    seed: int = 0
    width: int = 640
    height: int = 512
    n_keypoints: int = 200
    location_jitter: float = 0.0
    descriptor_noise: float = 0.0
    outlier_fraction: float = 0.0
    data_dir: str | None = None
    sampler: HomographySamplerConfig = field(default_factory=HomographySamplerConfig)
    ransac: RansacConfig | None = None
    soft_extract: SoftExtractConfig = field(default_factory=SoftExtractConfig)
    classical_extract: ClassicalExtractConfig = field(
        default_factory=ClassicalExtractConfig
    )
    matcher: MatcherConfig = field(default_factory=MatcherConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    dump_matches: bool = True
    feature_metrics: bool = True
    threads: int | None = None

    def __post_init__(self):
        if self.pipeline not in ("classical", "weighted"):
            raise ValueError("pipeline must be classical or weighted")
        if self.feature_source not in ("mock", "files", "keypoint-lists"):
            raise ValueError("unknown feature source")
        if self.feature_source != "mock" and not self.data_dir:
            raise ValueError(f"feature source {self.feature_source} needs data_dir")
        if self.feature_source == "keypoint-lists" and self.pipeline == "weighted":
            raise ValueError("the weighted pipeline needs grids, not keypoint lists")
        if self.ransac is None:
            self.ransac = RansacConfig(weighted_sampling=self.pipeline == "weighted")

    @staticmethod
    def from_json(obj: dict) -> "ExperimentSpec":
        kwargs = dict(obj)
        if "sampler" in kwargs:
            kwargs["sampler"] = HomographySamplerConfig.from_json(kwargs["sampler"])
        if "ransac" in kwargs:
            kwargs["ransac"] = RansacConfig(**kwargs["ransac"])
        if "soft_extract" in kwargs:
            kwargs["soft_extract"] = SoftExtractConfig(**kwargs["soft_extract"])
        if "classical_extract" in kwargs:
            kwargs["classical_extract"] = ClassicalExtractConfig(
                **kwargs["classical_extract"]
            )
        if "matcher" in kwargs:
            kwargs["matcher"] = MatcherConfig(**kwargs["matcher"])
        if "metrics" in kwargs:
            m = kwargs["metrics"]
            if "ace_thresholds" in m:
                m["ace_thresholds"] = tuple(m["ace_thresholds"])
            kwargs["metrics"] = MetricsConfig(**m)
        return ExperimentSpec(**kwargs)

    @staticmethod
    def load(path) -> "ExperimentSpec":
        with open(path, "r", encoding="utf-8") as f:
            return ExperimentSpec.from_json(json.load(f))


def _pair_seeds(spec_seed: int, pair_index: int) -> tuple[int, int, int]:
    rng = np.random.default_rng([spec_seed, pair_index])
    a, b, c = rng.integers(0, 2**63, size=3)
    return int(a), int(b), int(c)


def _load_pair_grids(data_dir: Path, index: int):
    stem = data_dir / f"{index:03d}"
    det_s = DetectionResponse(read_xsfm(f"{stem}_source_det.xsfm"))
    desc_s = DescriptorMap(read_xsfm(f"{stem}_source_desc.xsfm"))
    det_t = DetectionResponse(read_xsfm(f"{stem}_target_det.xsfm"))
    desc_t = DescriptorMap(read_xsfm(f"{stem}_target_desc.xsfm"))
    h_gt = Homography.load(f"{stem}_h.json")
    return det_s, desc_s, det_t, desc_t, h_gt


def discover_pairs(data_dir: str) -> list[int]:
    suffix = "_h.json"
    out = []
    for p in sorted(Path(data_dir).glob(f"*{suffix}")):
        stem = p.name[: -len(suffix)]
        if stem.isdigit():
            out.append(int(stem))
    return out


@dataclass
class PairOutcome:
    index: int
    h_gt: Homography
    ace_px: float
    failed: bool
    error: str | None
    result: RegistrationResult | None
    feature: dict | None  # per-pair feature metric ingredients


def _feature_metrics_ingredients(
    kps_a, kps_b, h_gt: Homography, cfg: MetricsConfig
) -> dict:
    ca, _, da = keypoints_to_arrays(kps_a)
    cb, _, db = keypoints_to_arrays(kps_b)
    pairs = mutual_nn(kps_a, kps_b, "dot")
    if pairs:
        si = np.array([i for i, _ in pairs])
        ti = np.array([j for _, j in pairs])
        m_src, m_tgt = ca[:, si], cb[:, ti]
        scores = np.einsum("nc,nc->n", da[si], db[ti])
    else:
        m_src = np.zeros((2, 0))
        m_tgt = np.zeros((2, 0))
        scores = np.zeros(0)
    return {
        "kps_a": ca,
        "kps_b": cb,
        "match_src": m_src,
        "match_tgt": m_tgt,
        "match_scores": scores,
        "repeatability": repeatability(ca, cb, h_gt, cfg.correct_dist),
        "mscore": matching_score(ca, cb, m_src, m_tgt, h_gt, cfg.correct_dist),
        "mma": mma(m_src, m_tgt, h_gt, cfg.correct_dist),
        "n_k": 0.5 * (ca.shape[1] + cb.shape[1]),
    }


def run_pair(spec: ExperimentSpec, index: int) -> PairOutcome:
    """Generate (or load) one pair, register it, and compute its metrics."""
    h_seed, feat_seed, ransac_seed = _pair_seeds(spec.seed, index)
    w_img, h_img = spec.width, spec.height
    if spec.feature_source == "mock":
        h_gt = sample_homography(spec.sampler, spec.width, spec.height, h_seed)
        mock_cfg = MockFeatureConfig(
            width=spec.width,
            height=spec.height,
            n_keypoints=spec.n_keypoints,
            location_jitter=spec.location_jitter,
            descriptor_noise=spec.descriptor_noise,
            outlier_fraction=spec.outlier_fraction,
        )
        mf = generate_mock_features(h_gt, mock_cfg, seed=feat_seed)
        grids = mf.grids()
        kp_lists = None
    elif spec.feature_source == "files":
        grids_all = _load_pair_grids(Path(spec.data_dir), index)
        grids, h_gt = grids_all[:4], grids_all[4]
        w_img, h_img = grids[0].image_width, grids[0].image_height
        kp_lists = None
    else:  # keypoint-lists
        stem = Path(spec.data_dir) / f"{index:03d}"
        kp_lists = (
            load_keypoints(f"{stem}_source_kps.jsonl"),
            load_keypoints(f"{stem}_target_kps.jsonl"),
        )
        h_gt = Homography.load(f"{stem}_h.json")
        if h_gt.frame.kind == "pixel":
            w_img, h_img = h_gt.frame.width, h_gt.frame.height
        grids = None

    ransac_cfg = RansacConfig(
        iterations=spec.ransac.iterations,
        inlier_threshold=spec.ransac.inlier_threshold,
        seed=ransac_seed,
        weighted_sampling=spec.ransac.weighted_sampling,
    )
    result: RegistrationResult | None = None
    error = None
    try:
        if spec.pipeline == "weighted":
            result = run_weighted_pipeline(
                *grids,
                extract_cfg=spec.soft_extract,
                matcher_cfg=spec.matcher,
                ransac_cfg=ransac_cfg,
            )
        elif kp_lists is not None:
            result = run_classical_pipeline(
                kp_lists[0],
                kp_lists[1],
                ransac_cfg=ransac_cfg,
                frame=Frame.pixel(w_img, h_img),
            )
        else:
            result = classical_pipeline_from_grids(
                *grids,
                extract_cfg=spec.classical_extract,
                ransac_cfg=ransac_cfg,
            )
        ace_px = ace(h_gt, result.h_est, w_img, h_img)
        failed = False
    except RegistrationError as exc:
        ace_px = math.inf
        failed = True
        error = f"{type(exc).__name__}: {exc}"

    # standalone feature quality, measured with the classical protocol
    if not spec.feature_metrics:
        kps_a = kps_b = []
    elif kp_lists is not None:
        kps_a, kps_b = kp_lists
    elif grids is not None:
        kps_a = extract_classical(
            decode_heatmap(grids[0]), grids[1], spec.classical_extract
        )
        kps_b = extract_classical(
            decode_heatmap(grids[2]), grids[3], spec.classical_extract
        )
    else:
        kps_a = kps_b = []
    feature = (
        _feature_metrics_ingredients(kps_a, kps_b, h_gt, spec.metrics)
        if (kps_a or kps_b)
        else None
    )
    if result is not None and not spec.dump_matches:
        result.src_descs = None  # nothing downstream reads the descriptors
        result.tgt_descs = None
    return PairOutcome(index, h_gt, float(ace_px), failed, error, result, feature)


def run_experiment(spec: ExperimentSpec) -> tuple[MetricsReport, list[dict]]:
    """Run every pair of the spec and aggregate a MetricsReport plus records."""
    if spec.feature_source == "mock":
        indices = list(range(spec.n_pairs))
    else:
        indices = discover_pairs(spec.data_dir)
        if spec.n_pairs:
            indices = indices[: spec.n_pairs]

    workers = thread_count(spec.threads)
    if workers > 1 and len(indices) > 1:
        # worker processes sidestep the GIL; map() preserves pair order, and
        # every pair derives its own seed substream, so the parallelism
        # degree cannot change any result
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(functools.partial(run_pair, spec), indices))
    else:
        outcomes = [run_pair(spec, i) for i in indices]

    ace_values = [o.ace_px for o in outcomes]
    fractions = success_fractions(ace_values, spec.metrics.ace_thresholds)
    feats = [o.feature for o in outcomes if o.feature is not None]
    rep = float(np.mean([f["repeatability"] for f in feats])) if feats else 0.0
    msc = float(np.mean([f["mscore"] for f in feats])) if feats else 0.0
    mmas = float(np.mean([f["mma"] for f in feats])) if feats else 0.0
    n_k = float(np.mean([f["n_k"] for f in feats])) if feats else 0.0
    pooled = [
        (f["match_src"], f["match_tgt"], f["match_scores"], o.h_gt)
        for o, f in ((o, o.feature) for o in outcomes)
        if f is not None
    ]
    m_ap = mean_ap(pooled, spec.metrics.correct_dist) if pooled else 0.0

    report = MetricsReport(
        n_pairs=len(outcomes),
        n_failed=sum(o.failed for o in outcomes),
        ace_values=ace_values,
        thresholds=spec.metrics.ace_thresholds,
        success_fractions=tuple(float(f) for f in fractions),
        repeatability=rep,
        mscore=msc,
        mma=mmas,
        mean_ap=m_ap,
        n_keypoints=n_k,
        correct_dist=spec.metrics.correct_dist,
    )

    records = []
    for o in outcomes:
        rec = {
            "pair": o.index,
            "h_gt": o.h_gt.to_json(),
            "ace_px": o.ace_px if math.isfinite(o.ace_px) else "inf",
            "failed": o.failed,
        }
        if o.error:
            rec["error"] = o.error
        if o.result is not None:
            rec.update(o.result.to_json(include_matches=spec.dump_matches))
        records.append(rec)
    return report, records


def emit_experiment(
    spec: ExperimentSpec, out_dir, make_figures: bool = True
) -> MetricsReport:
    """Run and write metrics.csv + pairs.jsonl (+ figures) into out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report, records = run_experiment(spec)
    csv_path = out / "metrics.csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as f:
        f.write(",".join(MetricsReport.CSV_COLUMNS) + "\n")
        f.write(report.csv_row(spec.pipeline) + "\n")
    with open(out / "pairs.jsonl", "w", encoding="utf-8", newline="\n") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    if make_figures:
        from . import figures

        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        figures.save_ace_histogram(
            report.ace_values, fig_dir / "ace_hist.png", thresholds=report.thresholds
        )
        figures.save_success_fractions(
            report.thresholds, report.success_fractions, fig_dir / "success_fractions.png"
        )
    return report


def write_synth_dataset(cfg: SyntheticPairConfig, n_pairs: int, out_dir) -> None:
    """Emit images, ground-truth homographies, and mock grids for n pairs."""
    from PIL import Image

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i in range(n_pairs):
        pair_cfg = SyntheticPairConfig(
            width=cfg.width,
            height=cfg.height,
            sampler=cfg.sampler,
            photometric=cfg.photometric,
            n_keypoints=cfg.n_keypoints,
            location_jitter=cfg.location_jitter,
            descriptor_noise=cfg.descriptor_noise,
            outlier_fraction=cfg.outlier_fraction,
            seed=int(np.random.default_rng([cfg.seed, i]).integers(2**63)),
        )
        base = procedural_image(cfg.width, cfg.height, seed=pair_cfg.seed)
        source, target, h_gt = make_pair(base, pair_cfg)
        stem = out / f"{i:03d}"
        Image.fromarray((source * 255).round().astype(np.uint8)).save(
            f"{stem}_optical.png"
        )
        Image.fromarray((target * 255).round().astype(np.uint8)).save(
            f"{stem}_thermal.png"
        )
        h_gt.save(f"{stem}_h.json")
        mf = generate_mock_features(
            h_gt,
            MockFeatureConfig(
                width=cfg.width,
                height=cfg.height,
                n_keypoints=cfg.n_keypoints,
                location_jitter=cfg.location_jitter,
                descriptor_noise=cfg.descriptor_noise,
                outlier_fraction=cfg.outlier_fraction,
            ),
            seed=pair_cfg.seed + 1,
        )
        write_xsfm(f"{stem}_source_det.xsfm", mf.det_src.logits)
        write_xsfm(f"{stem}_source_desc.xsfm", mf.desc_src.values)
        write_xsfm(f"{stem}_target_det.xsfm", mf.det_tgt.logits)
        write_xsfm(f"{stem}_target_desc.xsfm", mf.desc_tgt.values)
