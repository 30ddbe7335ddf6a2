"""End-to-end acceptance criteria. Each test records a PASS/FAIL line that
appears in the pytest terminal summary, then asserts."""

import time

import numpy as np
import pytest

from plantsplat.cli import main
from plantsplat.evaluate import evaluate_views, summarize
from plantsplat.metrics import (FeatureStack, accuracy, lpips_from_features, mae, mape, psnr,
                                r2, ssim)
from plantsplat.optim import TrainConfig, densify_and_prune, fit
from plantsplat.optim.backward import backward
from plantsplat.render.raster import RenderSettings, render, render_reference
from plantsplat.synth import SynthSpec, generate_dataset, generate_scene, plant_batch
from plantsplat.traits import dbscan, extract_traits

from conftest import (FAMILIES, axis_camera, fd_gradient_errors, gradient_case, random_scene,
                      write_frames_fixture)
from test_metrics import naive_lpips
from test_traits import brute_dbscan

TRAITS = ("height_cm", "width1_cm", "width2_cm")


def test_c01_renderer_oracle(record_criterion):
    t0 = time.perf_counter()
    worst = 0.0
    for seed in range(25):
        rng = np.random.default_rng(seed)
        s = random_scene(rng, int(rng.integers(1, 51)))
        cam = axis_camera(32, 32)
        bg = rng.uniform(size=3)
        a = render(s, cam, bg, RenderSettings.exact()).rgb
        b = render_reference(s, cam, bg).rgb
        worst = max(worst, float(np.max(np.abs(a - b))))
    dt = time.perf_counter() - t0
    ok = worst < 1e-5 and dt < 10
    record_criterion(1, "tiled rasterizer vs reference", ok,
                     f"max abs error {worst:.2e} over 25 scenes in {dt:.1f} s")
    assert ok


def test_c02_gradients(record_criterion):
    t0 = time.perf_counter()
    worst = {f: 0.0 for f in FAMILIES}
    kinks = 0
    for seed in range(24):
        scene, cam, target, mask, bg = gradient_case(seed, masked=seed % 2 == 0)
        errors, _, k = fd_gradient_errors(scene, cam, target, mask, 0.2, bg,
                                          RenderSettings.exact())
        for f in FAMILIES:
            worst[f] = max(worst[f], errors[f])
        kinks += sum(k.values())
    dt = time.perf_counter() - t0
    ok = max(worst.values()) < 1e-3 and dt < 60
    detail = ", ".join(f"{f} {e:.1e}" for f, e in worst.items())
    record_criterion(2, "analytic vs finite-difference gradients", ok,
                     f"24 cases, worst relative error {detail}; {kinks} kink-straddling "
                     f"entries excluded; {dt:.1f} s")
    assert ok


def test_c03_masked_null_gradient(record_criterion):
    """Splat 0's footprint is zeroed out of the mask; its gradient must be
    exactly zero while the other splats still learn.

    Training render settings are used: with the 1/255 skip threshold the
    footprint is exactly the set of pixels where the splat alone has nonzero
    coverage. Without it the Gaussian tail reaches every pixel with alphas
    too small to register in the accumulated coverage."""
    checked, failures = 0, []
    for seed in range(20):
        rng = np.random.default_rng(100 + seed)
        s = random_scene(rng, 6, sh_degree=1, spread=0.5, log_scale=(-2.2, -1.4))
        cam = axis_camera(24, 24)
        settings = RenderSettings()
        alone = render(s.subset(np.array([0])), cam, (0, 0, 0), settings).alpha_acc
        mask = (rng.uniform(size=(24, 24)) < 0.8).astype(float)
        mask[alone > 0] = 0.0
        if not np.any(alone > 0) or not mask.any():
            continue
        target = rng.uniform(size=(24, 24, 3))
        g = backward(s, cam, target, mask, 0.2, rng.uniform(size=3), settings).grads
        checked += 1
        for f in FAMILIES:
            if np.any(getattr(g, f)[0] != 0.0):
                failures.append((seed, f))
        assert any(np.any(getattr(g, f)[1:] != 0.0) for f in FAMILIES)
    ok = checked >= 15 and not failures
    record_criterion(3, "masked-loss null gradient", ok,
                     f"{checked} scenes, {len(failures)} nonzero entries for the masked-out "
                     f"splat across {len(FAMILIES)} families")
    assert ok


def test_c04_background_identity(record_criterion):
    empty_px, bad = 0, 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        s = random_scene(rng, int(rng.integers(0, 12)), spread=1.2)
        bg = rng.uniform(size=3)
        out = render(s, axis_camera(24, 24), bg)
        empty = out.alpha_acc == 0
        empty_px += int(empty.sum())
        bad += int(np.count_nonzero(np.any(out.rgb[empty] != bg, axis=-1)))
        bad += int(np.count_nonzero(
            out.rgb != out.splat_color + (1.0 - out.alpha_acc)[..., None] * bg))
    ok = bad == 0 and empty_px > 0
    record_criterion(4, "uncovered pixels equal the background", ok,
                     f"100 renders, {empty_px} uncovered pixels, {bad} mismatches")
    assert ok


def test_c05_pruning_contract(record_criterion):
    low = 0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 80))
        s = random_scene(rng, n, sh_degree=0, dtype=np.float32, opacity=(-4, 3))
        s.grad_accum[:] = rng.exponential(3e-4, n)
        s.obs_count[:] = rng.integers(0, 3, n)
        s.max_screen[:] = rng.uniform(0, 0.2, n)
        new, _, _ = densify_and_prune(s, TrainConfig(), extent=float(rng.uniform(0.5, 5)),
                                      rng=rng)
        low += int(np.count_nonzero(new.opacities < 0.1))
    record_criterion(5, "no survivor below opacity 0.1", low == 0,
                     f"50 refinement states, {low} violations")
    assert low == 0


def _train_and_score(dataset, mode, iterations=2000):
    res = fit(dataset, TrainConfig(iterations=iterations, mode=mode))
    rows = evaluate_views(res.scene, dataset.test)
    return res, rows


def test_c06_synthetic_convergence(record_criterion):
    """Held-out scores are the means over the test views, as in the eval
    report. The worst single view is reported alongside."""
    ds = generate_dataset(SynthSpec()).as_dataset()
    t0 = time.perf_counter()
    res, rows = _train_and_score(ds, "object-centric")
    dt = time.perf_counter() - t0
    unmasked = summarize(evaluate_views(res.scene, ds.test, mask_prediction=False))
    mean = summarize(rows)
    worst = min(rows, key=lambda r: r.psnr)
    ok = mean["psnr"] >= 30 and mean["ssim"] >= 0.95 and dt < 600
    record_criterion(6, "synthetic reconstruction", ok,
                     f"{len(rows)} test views, mean PSNR {mean['psnr']:.2f} dB, mean SSIM "
                     f"{mean['ssim']:.4f}; worst view {worst.view_id} {worst.psnr:.2f} dB / "
                     f"{worst.ssim:.4f}; min SSIM {min(r.ssim for r in rows):.4f}; "
                     f"{len(res.scene)} splats, {dt:.0f} s (unmasked prediction: "
                     f"{unmasked['psnr']:.2f} dB / {unmasked['ssim']:.4f})")
    assert ok


def test_c07_object_centric_efficiency(record_criterion):
    ds = generate_dataset(SynthSpec(clutter=True)).as_dataset()
    base, base_rows = _train_and_score(ds, "baseline")
    oc, oc_rows = _train_and_score(ds, "object-centric")
    nb, no = len(base.scene), len(oc.scene)
    pb, po = summarize(base_rows)["psnr"], summarize(oc_rows)["psnr"]
    fewer = 1.0 - no / nb
    ok = fewer >= 0.30 and oc.wall_time <= base.wall_time and po >= pb
    record_criterion(7, "object-centric vs baseline", ok,
                     f"splats {no} vs {nb} ({100 * fewer:.0f}% fewer), time {oc.wall_time:.0f} "
                     f"vs {base.wall_time:.0f} s, masked PSNR {po:.2f} vs {pb:.2f} dB")
    assert ok


def test_c08_trait_accuracy(record_criterion):
    t0 = time.perf_counter()
    specs = plant_batch(10, seed=7)
    est = {t: [] for t in TRAITS}
    for spec in specs:
        rep = extract_traits(generate_scene(spec).scene)
        for t in TRAITS:
            est[t].append(getattr(rep, t))
    dt = time.perf_counter() - t0
    parts, ok = [], dt < 120
    for t in TRAITS:
        y = [getattr(s, t) for s in specs]
        m, r = mape(y, est[t]), r2(y, est[t])
        ok &= m < 2.0 and r > 0.99
        parts.append(f"{t} MAPE {m:.3f}% R2 {r:.5f}")
    record_criterion(8, "trait accuracy on 10 plants", ok, "; ".join(parts) + f"; {dt:.0f} s")
    assert ok


def test_c09_scale_covariance(record_criterion):
    worst = 0.0
    for spec in plant_batch(3, seed=11):
        pts = generate_scene(spec).scene.positions.astype(np.float64)
        base = extract_traits(pts)
        for k in (0.1, 1.0, 37.0):
            rep = extract_traits(pts * k)
            for t in TRAITS:
                worst = max(worst, abs(getattr(rep, t) / getattr(base, t) - 1.0))
    ok = worst < 1e-9
    record_criterion(9, "scale covariance", ok,
                     f"3 clouds x k in (0.1, 1, 37), worst relative change {worst:.1e}")
    assert ok


def test_c10_metric_vectors(record_criterion):
    rng = np.random.default_rng(0)
    img = rng.uniform(0.1, 1.0, size=(8, 8, 3))
    checks = {
        "psnr identical": psnr(img, img) == float("inf"),
        "psnr 20 dB": abs(psnr(img, img - 0.1) - 20.0) < 1e-9,
        "psnr 30 dB": abs(psnr(img, img - np.sqrt(1e-3)) - 30.0) < 1e-9,
        "ssim identical": abs(ssim(img, img) - 1.0) < 1e-12,
        "ssim constant": abs(ssim(np.zeros((16, 16)), np.ones((16, 16)))
                             - 1e-4 / (1 + 1e-4)) < 1e-12,
        "mae": mae([10, 20, 30], [11, 19, 33]) == 5.0 / 3.0,
        "mape": abs(mape([10, 20, 30], [11, 19, 33]) - 25.0 / 3.0) < 1e-12,
        "accuracy": abs(accuracy([10, 20, 30], [11, 19, 33]) - (100 - 25.0 / 3.0)) < 1e-12,
    }
    worst = 0.0
    for _ in range(20):
        shapes = [tuple(rng.integers(1, 7, 3)) for _ in range(rng.integers(1, 4))]
        w = [rng.uniform(0, 1, c) for (_, _, c) in shapes]
        fa = FeatureStack.from_raw([(i, rng.normal(size=sh), w[i]) for i, sh in enumerate(shapes)])
        fb = FeatureStack.from_raw([(i, rng.normal(size=sh), w[i]) for i, sh in enumerate(shapes)])
        worst = max(worst, abs(lpips_from_features(fa, fb) - naive_lpips(fa, fb)))
    checks["lpips oracle"] = worst < 1e-9
    failed = [k for k, v in checks.items() if not v]
    record_criterion(10, "metric test vectors", not failed,
                     f"{len(checks) - len(failed)}/{len(checks)} fixtures, LPIPS max deviation "
                     f"{worst:.1e}" + (f"; failed: {', '.join(failed)}" if failed else ""))
    assert not failed


def test_c11_dbscan_oracle(record_criterion):
    mismatched = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(1, 201))
        centers = rng.uniform(-2, 2, size=(rng.integers(1, 5), 3))
        pts = centers[rng.integers(0, len(centers), n)] + rng.normal(scale=0.3, size=(n, 3))
        eps, min_pts = float(rng.uniform(0.05, 0.6)), int(rng.integers(1, 9))
        if not np.array_equal(dbscan(pts, eps, min_pts).labels, brute_dbscan(pts, eps, min_pts)):
            mismatched += 1
    record_criterion(11, "DBSCAN vs brute force", mismatched == 0,
                     f"100 point sets, {mismatched} label mismatches")
    assert mismatched == 0


def test_c12_determinism(record_criterion, tmp_path):
    (tmp_path / "spec.yaml").write_text("surface_density: 4000\nimage_width: 32\n"
                                        "image_height: 32\n")
    (tmp_path / "train.yaml").write_text("train:\n  iterations: 150\n  checkpoint_every: 150\n"
                                         "  warmup_iters: 50\n  refine_every: 50\n")
    assert main(["synth", str(tmp_path / "ds"), "--spec", str(tmp_path / "spec.yaml")]) == 0
    for run in ("a", "b"):
        assert main(["train", str(tmp_path / "ds" / "manifest.json"), str(tmp_path / run),
                     "--config", str(tmp_path / "train.yaml"), "--seed", "4",
                     "--threads", "2"]) == 0
    ck = [p.name for p in sorted((tmp_path / "a" / "checkpoints").iterdir())]
    same_ckpt = all((tmp_path / "a" / "checkpoints" / n).read_bytes()
                    == (tmp_path / "b" / "checkpoints" / n).read_bytes() for n in ck)
    images, colmap = write_frames_fixture(tmp_path / "frames")
    for run in ("pa", "pb"):
        assert main(["prepare", str(images), str(colmap), str(tmp_path / run),
                     "--seed", "9"]) == 0
    same_manifest = ((tmp_path / "pa" / "manifest.json").read_bytes()
                     == (tmp_path / "pb" / "manifest.json").read_bytes())
    ok = same_ckpt and same_manifest and len(ck) == 3
    record_criterion(12, "determinism", ok,
                     f"train checkpoints {'identical' if same_ckpt else 'DIFFER'} "
                     f"({', '.join(ck)}); prepare manifest "
                     f"{'identical' if same_manifest else 'DIFFERS'}")
    assert ok
