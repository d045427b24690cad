"""Finite-difference verification of every hand-derived backward pass.

Each check perturbs randomly chosen coordinates with central differences
(h = 1e-5 unless noted) and compares against the analytic gradient.  A
coordinate passes when the relative error is below 1e-4 or both values sit
under an absolute floor of 1e-8 (the FD noise level for these loss scales).
"""

from __future__ import annotations

import numpy as np

from .featuregrid import DUSTBIN, cell_softmax, pack_cells, unpack_cells
from .gradients import (
    ToyPairConfig,
    _bilinear_desc_backward,
    _bilinear_desc_forward,
    _bilinear_scalar_backward,
    _bilinear_scalar_forward,
    _center_scale_forward,
    _softargmax_backward,
    _softargmax_forward,
    _zncc_matrix_backward,
    _zncc_matrix_forward,
    forward_total_loss,
    grad_total_loss,
    make_toy_pair,
)
from .extraction import SoftExtractConfig
from .losses import LossWeights

REL_TOL = 1e-4
ABS_FLOOR = 1e-8


def _fd(f, arr: np.ndarray, idx, h: float = 1e-5) -> float:
    orig = arr[idx]
    arr[idx] = orig + h
    up = f()
    arr[idx] = orig - h
    down = f()
    arr[idx] = orig
    return (up - down) / (2.0 * h)


def _agree(fd: float, an: float) -> bool:
    err = abs(fd - an)
    if err <= ABS_FLOOR:
        return True
    return err <= REL_TOL * max(abs(fd), abs(an))


def _spot_check(f, arr, grad, rng, n_coords) -> tuple[bool, str]:
    worst = 0.0
    for _ in range(n_coords):
        idx = tuple(rng.integers(0, s) for s in arr.shape)
        fd = _fd(f, arr, idx)
        an = grad[idx]
        err = abs(fd - an)
        rel = err / max(abs(fd), abs(an), 1e-300)
        if err > ABS_FLOOR:
            worst = max(worst, rel)
        if not _agree(fd, an):
            return False, f"coord {idx}: fd={fd:.6e} analytic={an:.6e}"
    return True, f"worst rel err {worst:.2e}"


def check_softmax_decode(rng) -> tuple[bool, str]:
    logits = rng.standard_normal((2, 3, 65))
    gheat = rng.standard_normal((16, 24))

    def f():
        probs = cell_softmax(logits)
        return float(np.sum(unpack_cells(probs[:, :, :DUSTBIN]) * gheat))

    probs = cell_softmax(logits)
    gp = np.zeros_like(probs)
    gp[:, :, :DUSTBIN] = pack_cells(gheat)
    inner = np.sum(gp * probs, axis=2, keepdims=True)
    grad = probs * (gp - inner)
    return _spot_check(f, logits, grad, rng, 12)


def check_softargmax(rng) -> tuple[bool, str]:
    cfg = SoftExtractConfig(window=8, softargmax_temperature=0.05)
    heat = rng.random((16, 16))
    gc = rng.standard_normal((4, 2))

    def f():
        return float(np.sum(_softargmax_forward(heat, cfg)["coords"] * gc))

    cache = _softargmax_forward(heat, cfg)
    grad = _softargmax_backward(cache, gc, cfg.softargmax_temperature)
    return _spot_check(f, heat, grad, rng, 12)


def check_bilinear_scalar(rng) -> tuple[bool, str]:
    values = rng.random((12, 14))
    coords = np.column_stack(
        [rng.uniform(0.6, 12.4, 6), rng.uniform(0.6, 10.4, 6)]
    )
    gout = rng.standard_normal(6)

    def f():
        return float(np.sum(_bilinear_scalar_forward(values, coords)["out"] * gout))

    cache = _bilinear_scalar_forward(values, coords)
    g_values, g_coords = _bilinear_scalar_backward(cache, gout)
    ok1, m1 = _spot_check(f, values, g_values, rng, 8)
    ok2, m2 = _spot_check(f, coords, g_coords, rng, 8)
    return ok1 and ok2, f"values: {m1}; coords: {m2}"


def check_bilinear_descriptor(rng) -> tuple[bool, str]:
    grid = rng.standard_normal((4, 5, 8))
    grid /= np.linalg.norm(grid, axis=2, keepdims=True)
    coords = np.column_stack([rng.uniform(6.0, 30.0, 5), rng.uniform(6.0, 22.0, 5)])
    gout = rng.standard_normal((5, 8))

    def f():
        return float(np.sum(_bilinear_desc_forward(grid, coords)["out"] * gout))

    cache = _bilinear_desc_forward(grid, coords)
    g_grid, g_coords = _bilinear_desc_backward(cache, gout)
    ok1, m1 = _spot_check(f, grid, g_grid, rng, 8)
    ok2, m2 = _spot_check(f, coords, g_coords, rng, 8)
    return ok1 and ok2, f"grid: {m1}; coords: {m2}"


def check_zncc(rng) -> tuple[bool, str]:
    a = rng.standard_normal((5, 16))
    b = rng.standard_normal((6, 16))
    g = rng.standard_normal((5, 6))

    def f():
        ca = _center_scale_forward(a)
        cb = _center_scale_forward(b)
        return float(np.sum(_zncc_matrix_forward(ca, cb, 16) * g))

    ca = _center_scale_forward(a)
    cb = _center_scale_forward(b)
    z = _zncc_matrix_forward(ca, cb, 16)
    ga, gb = _zncc_matrix_backward(g, z, ca, cb, 16)
    ok1, m1 = _spot_check(f, a, ga, rng, 8)
    ok2, m2 = _spot_check(f, b, gb, rng, 8)
    return ok1 and ok2, f"a: {m1}; b: {m2}"


def check_total_loss(rng, weights: LossWeights, label: str) -> tuple[bool, str]:
    seed = int(rng.integers(2**31))
    params, setup = make_toy_pair(ToyPairConfig(width=48, height=32), seed=seed)
    tape = forward_total_loss(params, setup, weights)
    grads = grad_total_loss(tape)

    worst = 0.0
    for name in ("logits_src", "logits_tgt", "desc_src", "desc_tgt"):
        arr = getattr(params, name)
        grad = getattr(grads, name)

        def f():
            return forward_total_loss(params, setup, weights).total

        for _ in range(5):
            idx = tuple(rng.integers(0, s) for s in arr.shape)
            fd = _fd(f, arr, idx)
            an = grad[idx]
            err = abs(fd - an)
            if err > ABS_FLOOR:
                worst = max(worst, err / max(abs(fd), abs(an), 1e-300))
            if not _agree(fd, an):
                return False, f"{name}{idx}: fd={fd:.6e} analytic={an:.6e}"
    return True, f"{label}: worst rel err {worst:.2e}"


def check_dead_path(rng) -> tuple[bool, str]:
    """Descriptor entries feeding only pinned softmax rows get ~zero gradient.

    In a clean pair every match holds a large ZNCC margin, so at the sharp
    matcher temperature the attention weights are saturated and perturbing a
    target descriptor cannot move any pseudo-target to first order; the
    transfer loss must then be flat along every descriptor coordinate.
    """
    seed = int(rng.integers(2**31))
    params, setup = make_toy_pair(
        ToyPairConfig(width=48, height=32, confusable_fraction=0.0, desc_noise=0.02),
        seed=seed,
    )
    weights = LossWeights(0.0, 0.0, 1.0, 0.0, 0.0)
    tape = forward_total_loss(params, setup, weights)
    grads = grad_total_loss(tape)
    gmax = float(
        max(np.abs(grads.desc_tgt).max(), np.abs(grads.desc_src).max())
    )
    cell = np.unravel_index(np.argmax(np.abs(grads.desc_tgt)), grads.desc_tgt.shape)
    fd = _fd(
        lambda: forward_total_loss(params, setup, weights).total,
        params.desc_tgt,
        cell,
    )
    ok = gmax < 1e-10 and abs(fd) < 1e-8
    return ok, f"max |grad| over descriptor grids {gmax:.2e}, fd at argmax {fd:.2e}"


def run_gradcheck(trials: int = 5, seed: int = 0, verbose: bool = False) -> int:
    """Run every check; returns the number of failures."""
    rng = np.random.default_rng(seed)
    checks = [
        ("softmax-decode", lambda: check_softmax_decode(rng)),
        ("soft-argmax", lambda: check_softargmax(rng)),
        ("bilinear-scalar", lambda: check_bilinear_scalar(rng)),
        ("bilinear-descriptor", lambda: check_bilinear_descriptor(rng)),
        ("zncc", lambda: check_zncc(rng)),
        ("dead-path", lambda: check_dead_path(rng)),
    ]
    for t in range(trials):
        checks.append(
            (
                f"total-loss-base[{t}]",
                lambda: check_total_loss(rng, LossWeights(), "transfer+desc+det"),
            )
        )
    checks.append(
        (
            "total-loss-homography",
            lambda: check_total_loss(
                rng, LossWeights(1.0, 1.0, 1.0, 1.0, 1.0), "all terms"
            ),
        )
    )
    failures = 0
    for name, fn in checks:
        try:
            ok, msg = fn()
        except Exception as exc:  # a crash is a failure, not an abort
            ok, msg = False, f"error: {exc}"
        if not ok:
            failures += 1
        if verbose:
            print(f"{'PASS' if ok else 'FAIL'} {name}: {msg}")
    if verbose:
        print(f"{len(checks)} checks, {failures} failures")
    return failures
