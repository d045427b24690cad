"""Command-line interface: register, eval, gradcheck, traintoy, demo-averaging, synth."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np


def _cmd_register(args) -> int:
    from .errors import RegistrationError
    from .estimation import (
        RansacConfig,
        classical_pipeline_from_grids,
        run_weighted_pipeline,
    )
    from .featuregrid import DescriptorMap, DetectionResponse, read_xsfm

    det_s = DetectionResponse(read_xsfm(args.source_det))
    desc_s = DescriptorMap(read_xsfm(args.source_desc))
    det_t = DetectionResponse(read_xsfm(args.target_det))
    desc_t = DescriptorMap(read_xsfm(args.target_desc))
    try:
        if args.pipeline == "weighted":
            result = run_weighted_pipeline(
                det_s,
                desc_s,
                det_t,
                desc_t,
                ransac_cfg=RansacConfig(weighted_sampling=True, seed=args.seed),
            )
        else:
            result = classical_pipeline_from_grids(
                det_s, desc_s, det_t, desc_t, ransac_cfg=RansacConfig(seed=args.seed)
            )
    except RegistrationError as exc:
        print(f"registration failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    payload = result.to_json(include_matches=not args.no_matches)
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2)
    print(f"wrote {args.out} ({result.diagnostics['n_inliers']} inliers)")
    return 0


def _cmd_eval(args) -> int:
    from .harness import ExperimentSpec, emit_experiment

    spec = ExperimentSpec.load(args.spec)
    report = emit_experiment(spec, args.out_dir, make_figures=not args.no_figures)
    print(f"wrote {Path(args.out_dir) / 'metrics.csv'}")
    print(
        f"pairs={report.n_pairs} failed={report.n_failed} "
        + " ".join(
            f"frac<{t:g}px={f:.3f}"
            for t, f in zip(report.thresholds, report.success_fractions)
        )
    )
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import run_gradcheck

    failures = run_gradcheck(trials=args.trials, seed=args.seed, verbose=True)
    return 1 if failures else 0


def _cmd_traintoy(args) -> int:
    from . import figures
    from .gradients import toy_train
    from .losses import LossWeights

    weights = {
        "transfer": LossWeights(0.0, 0.0, 1.0, 0.0, 0.0),
        "corner": LossWeights(1.0, 0.0, 0.0, 0.0, 0.0),
        "frobenius": LossWeights(0.0, 1.0, 0.0, 0.0, 0.0),
        "combo": LossWeights(),
    }[args.loss]
    state = toy_train(weights=weights, steps=args.steps, lr=args.lr, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="\n") as f:
        f.write("step,L_C,L_F,L_T,L_D,L_K,total\n")
        for h in state.history:
            f.write(
                f"{h['step']},{h['corner']:.12g},{h['frobenius']:.12g},"
                f"{h['transfer']:.12g},{h['descriptor']:.12g},"
                f"{h['detector']:.12g},{h['total']:.12g}\n"
            )
    if not args.no_figures:
        figures.save_loss_curves(state.history, out.with_suffix(".png"))
    first, last = state.history[0], state.history[-1]
    print(
        f"wrote {out}; total {first['total']:.6g} -> {last['total']:.6g}, "
        f"match reprojection {last['mean_reprojection_px']:.3f} px"
    )
    return 0


def _cmd_demo_averaging(args) -> int:
    from . import figures
    from .gradients import averaging_effect_demo

    results = []
    for seed in range(args.seeds):
        for objective in ("corner", "transfer"):
            results.append(
                averaging_effect_demo(
                    n_matches=args.matches, seed=seed, objective=objective
                )
            )
    corner = [r for r in results if r["objective"] == "corner"]
    transfer = [r for r in results if r["objective"] == "transfer"]
    averaging_seeds = sum(
        1
        for r in corner
        if r["corner_loss_final"] < 1e-4 and r["mean_transfer_error_final_px"] > 5.0
    )
    summary = {
        "n_seeds": args.seeds,
        "n_matches": args.matches,
        "averaging_effect_seeds": averaging_seeds,
        "median_final_corner_loss": float(
            np.median([r["corner_loss_final"] for r in corner])
        ),
        "median_corner_final_error_px": float(
            np.median([r["mean_transfer_error_final_px"] for r in corner])
        ),
        "median_transfer_final_error_px": float(
            np.median([r["mean_transfer_error_final_px"] for r in transfer])
        ),
    }
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        json.dump({"summary": summary, "runs": results}, f, indent=2)
    if not args.no_figures:
        figures.save_averaging_report(results, out.with_suffix(".png"))
    print(
        f"wrote {out}; averaging effect on {averaging_seeds}/{args.seeds} seeds "
        f"(corner loss < 1e-4 while mean match error > 5 px)"
    )
    return 0


def _cmd_synth(args) -> int:
    from .geometry import HomographySamplerConfig
    from .harness import PhotometricConfig, SyntheticPairConfig, write_synth_dataset

    with open(args.config, "r", encoding="utf-8") as f:
        cfg_json = json.load(f)
    n_pairs = int(cfg_json.pop("n_pairs", 10))
    if "sampler" in cfg_json:
        cfg_json["sampler"] = HomographySamplerConfig.from_json(cfg_json["sampler"])
    if "photometric" in cfg_json:
        p = cfg_json["photometric"]
        cfg_json["photometric"] = None if p is None else PhotometricConfig(**p)
    cfg = SyntheticPairConfig(**cfg_json)
    write_synth_dataset(cfg, n_pairs, args.out_dir)
    print(f"wrote {n_pairs} pairs to {args.out_dir}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="xspecreg",
        description="Cross-spectral feature registration pipelines and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="register one pair of feature grids")
    p.add_argument("--source-det", required=True)
    p.add_argument("--source-desc", required=True)
    p.add_argument("--target-det", required=True)
    p.add_argument("--target-desc", required=True)
    p.add_argument("--pipeline", choices=("classical", "weighted"), default="weighted")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--no-matches", action="store_true", help="omit the match dump")
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("eval", help="run an experiment spec and write reports")
    p.add_argument("--spec", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--trials", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("traintoy", help="toy training on direct parameters")
    p.add_argument(
        "--loss",
        choices=("transfer", "corner", "frobenius", "combo"),
        default="transfer",
    )
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="curve.csv")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_traintoy)

    p = sub.add_parser(
        "demo-averaging", help="reproduce the corner-loss averaging effect"
    )
    p.add_argument("--matches", type=int, default=24)
    p.add_argument("--seeds", type=int, default=20)
    p.add_argument("--out", default="report.json")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=_cmd_demo_averaging)

    p = sub.add_parser("synth", help="write synthetic pairs and mock feature grids")
    p.add_argument("--config", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
