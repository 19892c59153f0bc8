"""End-to-end acceptance criteria, each against the simulator as oracle.

Every test prints one ``criterion N: PASS|FAIL ...`` line; the lines are
also collected into the pytest terminal summary.
"""

import hashlib
import time

import numpy as np
import pytest

from cirsense.channel_model import (
    CsiSeries,
    DistortionPolicy,
    MotionTrajectory,
    MovingPath,
    PathSpec,
    SystemConfig,
    synth_scene,
)
from cirsense.cli import export_run
from cirsense.domino import align_dominant
from cirsense.dylign import align_dynamic
from cirsense.estimators import coherence_from_delays, rotation_profile, ssnr_report
from cirsense.pipeline import PipelineOptions, run_pipeline
from cirsense.recovery import build_operator, recover_cir, zero_filled_idft
from cirsense.scenes import load_scene

from conftest import ACCEPTANCE_LINES, CFG, D0, LOS, TS, breathing_scene, tap_noise_std

pytestmark = pytest.mark.slow


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def random_statics(rng, k=2):
    out = [PathSpec(1.0, LOS)]
    for _ in range(k):
        g = rng.uniform(0.02, 0.15) * np.exp(2j * np.pi * rng.uniform())
        out.append(PathSpec(g, LOS + rng.uniform(4, 30) * TS))
    return out


def random_target(rng, rel, bpm, amp, gain):
    tr = MotionTrajectory(
        kind="respiration",
        base_delay_s=LOS + rel * TS,
        amplitude_m=amp,
        rate_hz=bpm / 60,
        phase_rad=rng.uniform(0, 2 * np.pi),
    )
    return MovingPath(tr, gain)


def test_1_half_tap_reproduction():
    sc = load_scene("half_tap_validation")
    frames, gt = sc.synthesize()
    t0 = time.perf_counter()
    run = run_pipeline(frames, PipelineOptions(mode="dual", d0_m=sc.d0_m), gt)
    runtime = time.perf_counter() - t0
    (res,) = run.results
    err = abs(res["relative_delay_s"] - res["truth"]["relative_delay_s"]) / TS

    sc.noise_std = 0.0
    frames0, gt0 = sc.synthesize()
    (res0,) = run_pipeline(frames0, PipelineOptions(mode="distance", d0_m=sc.d0_m), gt0).results
    err0 = abs(res0["relative_delay_s"] - res0["truth"]["relative_delay_s"]) / TS

    ok = err <= 0.03 and err0 <= 1 / 150 and runtime <= 10 and abs(res["bpm_error"]) <= 0.25
    report(
        1, ok,
        f"|dtau| {err:.4f} Ts (<= 0.03), noiseless {err0:.5f} Ts (<= {1 / 150:.5f}), "
        f"bpm error {res['bpm_error']:+.3f}, runtime {runtime:.2f} s (<= 10)",
    )


def test_2_domino_exactness():
    rng = np.random.default_rng(2)
    statics = random_statics(rng, 3)
    op = build_operator(CFG)
    cleaned = []
    for seed in (1, 2):
        frames, _ = synth_scene(CFG, statics, [], 100, 10.0, DistortionPolicy(), 0.0, seed=seed)
        assert len(frames) == 1000
        cleaned.append(align_dominant(frames, op).clean.taps)
    taps = cleaned[0]
    mean = taps.mean(axis=1)
    strong = np.abs(mean) >= 1e-4 * np.abs(mean).max()
    cv = np.sqrt(np.mean(np.abs(taps - mean[:, None]) ** 2, axis=1))[strong] / np.abs(mean[strong])
    rel = np.abs(cleaned[0] - cleaned[1]).max() / np.abs(cleaned[0]).max()
    report(2, cv.max() < 1e-6 and rel <= 1e-9, f"max per-tap CV {cv.max():.2e} (< 1e-6), cross-sequence {rel:.2e} (<= 1e-9)")


def test_3_ls_recovery_oracle():
    rng = np.random.default_rng(3)
    op = build_operator(CFG)
    nmse_ls, nmse_zf = [], []
    for _ in range(100):
        h = rng.standard_normal(71) + 1j * rng.standard_normal(71)
        series = CsiSeries(CFG, np.zeros(1), op.forward(h)[None, :])
        ls = recover_cir(op, series).taps[:, 0]
        zf = zero_filled_idft(series).taps[:, 0]
        p = np.sum(np.abs(h) ** 2)
        nmse_ls.append(10 * np.log10(max(np.sum(np.abs(ls - h) ** 2), 1e-300) / p))
        nmse_zf.append(10 * np.log10(np.sum(np.abs(zf - h) ** 2) / p))
    nmse_ls, nmse_zf = np.array(nmse_ls), np.array(nmse_zf)
    ok = nmse_ls.max() < -80 and np.all(nmse_zf > nmse_ls)
    report(3, ok, f"worst LS NMSE {nmse_ls.max():.1f} dB (< -80), best zero-fill {nmse_zf.min():.1f} dB, worse on all 100")


def test_4_respiration_accuracy():
    rng = np.random.default_rng(4)
    errs = []
    for _ in range(50):
        rel, bpm = rng.uniform(1.0, 12.0), rng.uniform(10, 30)
        amp, ssnr, gain = rng.uniform(0.005, 0.012), rng.uniform(10, 25), rng.uniform(0.15, 0.5)
        noise = tap_noise_std(ssnr, gain, int(round(rel)))
        frames, gt = synth_scene(
            CFG, random_statics(rng), [random_target(rng, rel, bpm, amp, gain)], 100, 30.0,
            DistortionPolicy(), noise, seed=int(rng.integers(2**31)), d0_m=D0,
        )
        run = run_pipeline(frames, PipelineOptions(mode="respiration", d0_m=D0), gt)
        errs.append(abs(run.results[0]["bpm_error"]) if run.results and not run.errors else np.inf)
    errs = np.array(errs)
    mae, p90 = errs.mean(), np.percentile(errs, 90)
    report(4, mae <= 0.25 and p90 <= 0.5, f"MAE {mae:.4f} bpm (<= 0.25), p90 {p90:.4f} bpm (<= 0.5), failures {np.isinf(errs).sum()}")


def test_5_distance_accuracy():
    rng = np.random.default_rng(5)
    errs = []
    for _ in range(50):
        rel = rng.integers(1, 12) + rng.uniform()
        ssnr, gain = rng.uniform(15, 25), rng.uniform(0.15, 0.5)
        noise = tap_noise_std(ssnr, gain, int(round(rel)))
        frames, gt = synth_scene(
            CFG, random_statics(rng), [random_target(rng, rel, rng.uniform(10, 30), rng.uniform(0.005, 0.012), gain)],
            100, 20.0, DistortionPolicy(), noise, seed=int(rng.integers(2**31)), d0_m=D0,
        )
        run = run_pipeline(frames, PipelineOptions(mode="distance", d0_m=D0), gt)
        errs.append(abs(run.results[0]["distance_error_m"]) if run.results and not run.errors else np.inf)
    errs = np.array(errs)
    report(5, errs.mean() <= 0.09, f"mean |distance error| {errs.mean():.4f} m (<= 0.09), max {errs.max():.4f} m")


def _ssnr_case(rel, ssnr_db, cfg, seed=0):
    gain = 0.3
    frames, gt = breathing_scene(rel, gain=gain, ssnr_db=ssnr_db, duration_s=20, fs=50, seed=seed, cfg=cfg)
    clean = align_dominant(frames, build_operator(cfg)).clean
    al = align_dynamic(clean)
    return clean, al, gt


def test_6_ssnr_concentration():
    lines, ordered = [], True
    for frac in np.round(np.arange(0, 0.51, 0.1), 1):
        clean, al, _ = _ssnr_case(5.0 + frac, 20.0, CFG, seed=int(frac * 10))
        rep = ssnr_report(clean, al)
        ordered &= rep.ratio_db >= rep.unaligned_ratio_db >= rep.per_subcarrier_ratio_db
        lines.append(f"{frac:.1f}:{rep.ratio_db:.1f}/{rep.unaligned_ratio_db:.1f}/{rep.per_subcarrier_ratio_db:.1f}")

    # on-grid gap: simulator noise floor and true coherence, high SSNR so the
    # best-subcarrier pick is not driven by estimation noise
    gaps = {}
    for label, cfg in (("full band", SystemConfig(active_subcarriers=tuple(range(-256, 256)))), ("default", CFG)):
        clean, al, gt = _ssnr_case(5.0, 40.0, cfg)
        noise_sc = 2 * tap_noise_std(40.0, 0.3, 5, cfg) ** 2
        coh = coherence_from_delays(gt.dynamic_delays_s[:, 0], cfg)
        rep = ssnr_report(clean, al, noise_sc, coherence=coh)
        gaps[label] = rep.ratio_db - rep.per_subcarrier_ratio_db
    target = 10 * np.log10(512)
    theory_default = 10 * np.log10(512 / build_operator(CFG).noise_gain(5))
    ok = ordered and abs(gaps["full band"] - target) <= 1.0 and abs(gaps["default"] - theory_default) <= 1.0
    report(
        6, ok,
        f"ordering aligned>=unaligned>=subcarrier {'holds' if ordered else 'broken'} [{' '.join(lines)}]; "
        f"on-grid gap {gaps['full band']:.2f} dB vs {target:.2f} (full band), "
        f"{gaps['default']:.2f} dB vs {theory_default:.2f} (default subcarriers, noise gain)",
    )


def test_7_slider_spiral():
    sc = load_scene("slider_spiral")
    frames, _ = sc.synthesize()
    clean = align_dominant(frames, build_operator(sc.cfg)).clean
    n_star = align_dynamic(clean, refine=False).tap_index
    turns, radii = rotation_profile(clean.tap(n_star))
    span = abs(turns) * 2 * np.pi
    monotone = len(radii) >= 8 and np.all(np.diff(radii) < 0)
    ok = abs(span - 8.5 * 2 * np.pi) <= 0.2 and monotone
    report(7, ok, f"phase span {span:.3f} rad vs {8.5 * 2 * np.pi:.3f} (+-0.2); per-turn radii {radii[0]:.4f} -> {radii[-1]:.4f}, strictly decreasing: {monotone}")


def _two_targets(rels, bpms, seed, ssnr_db=25.0):
    rng = np.random.default_rng(seed)
    gain = 0.3
    moving = [random_target(rng, r, b, rng.uniform(0.005, 0.01), gain) for r, b in zip(rels, bpms)]
    noise = tap_noise_std(ssnr_db, gain, int(round(min(rels))))
    return synth_scene(CFG, random_statics(rng), moving, 100, 30.0, DistortionPolicy(), noise, seed=seed, d0_m=D0)


def test_8_multi_target():
    rng = np.random.default_rng(8)
    worst_d, worst_b, flagged_wide = 0.0, 0.0, False
    for trial in range(5):
        a = rng.uniform(1.5, 8.0)
        rels = (a, a + rng.uniform(3.0, 6.0))
        bpms = (rng.uniform(10, 18), rng.uniform(20, 30))
        frames, gt = _two_targets(rels, bpms, seed=100 + trial)
        run = run_pipeline(frames, PipelineOptions(mode="multi-target", d0_m=D0, max_targets=2), gt)
        res = run.results
        assert len(res) == 2 and {r["truth"]["target"] for r in res} == {0, 1}
        worst_d = max(worst_d, *(abs(r["distance_error_m"]) for r in res))
        worst_b = max(worst_b, *(abs(r["bpm_error"]) for r in res))
        flagged_wide |= any(r["interference"] for r in res)

    frames, gt = _two_targets((4.0, 5.0), (14.0, 24.0), seed=200)
    near = run_pipeline(frames, PipelineOptions(mode="multi-target", d0_m=D0, max_targets=2), gt).results
    flagged_near = any(r["interference"] for r in near)
    ok = worst_d <= 0.3 and worst_b <= 0.45 and flagged_near and not flagged_wide
    report(8, ok, f"worst distance error {worst_d:.4f} m (<= 0.3), worst rate error {worst_b:.4f} bpm (<= 0.45); 1-tap pair flagged: {flagged_near}")


def test_9_variance_factorization():
    rng = np.random.default_rng(9)
    op = build_operator(CFG)
    rel_err = []
    for i in range(20):
        # closer than ~3 taps the target tilts the tap-0 power peak, and the
        # resulting per-frame shift jitter leaks the strong LoS sidelobe into
        # the target tap (about -10% variance at 2 taps); that is Domino bias,
        # not the variance model under test
        rel = rng.uniform(3.0, 20.0)
        los_gain = rng.uniform(0.8, 1.5) * np.exp(2j * np.pi * rng.uniform())
        gain = rng.uniform(0.1, 0.5) * np.exp(2j * np.pi * rng.uniform())
        tr = MotionTrajectory(
            kind="respiration", base_delay_s=LOS + rel * TS, amplitude_m=rng.uniform(0.002, 0.012),
            rate_hz=rng.uniform(0.15, 0.5), phase_rad=rng.uniform(0, 2 * np.pi),
        )
        frames, gt = synth_scene(
            CFG, [PathSpec(los_gain, LOS)], [MovingPath(tr, gain)], 50, 10.0, DistortionPolicy(), 0.0, seed=i, d0_m=D0
        )
        al = align_dynamic(align_dominant(frames, op).clean)
        alpha = abs(gain / los_gain)
        pbar = abs(op.pulse(0, al.position_taps - gt.relative_delays_s.mean() / TS))
        mu2 = coherence_from_delays(gt.relative_delays_s[:, 0], CFG)
        model = (alpha * pbar) ** 2 * (1 - mu2)
        rel_err.append(abs(al.aligned_variance / model - 1))
    worst = max(rel_err)
    report(9, worst <= 0.05, f"worst relative mismatch {worst:.4f} over 20 noiseless scenes (<= 0.05)")


def _digest(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def test_10_determinism_and_budget(tmp_path):
    hashes = []
    for k in range(2):
        frames, gt = breathing_scene(3.7, ssnr_db=20, duration_s=20, fs=100, seed=10)
        run = run_pipeline(frames, PipelineOptions(mode="dual", d0_m=D0), gt)
        export_run(run, tmp_path / f"r{k}", figures=False)
        hashes.append(
            (hashlib.sha256(frames.values.tobytes()).hexdigest(),)
            + tuple(_digest(tmp_path / f"r{k}" / n) for n in ("results.json", "variance_profile.csv", "shift_curve.csv", "trajectory.csv"))
        )
    same = hashes[0] == hashes[1]

    op = build_operator(CFG)
    frames, _ = breathing_scene(3.7, ssnr_db=20, duration_s=20, fs=100, seed=11)
    assert len(frames) == 2000
    align_dominant(frames, op)  # warm-up
    t0 = time.perf_counter()
    align_dominant(frames, op)
    per_frame_ms = (time.perf_counter() - t0) / len(frames) * 1e3

    t0 = time.perf_counter()
    run = run_pipeline(frames, PipelineOptions(mode="respiration", d0_m=D0))
    resp_s = time.perf_counter() - t0
    assert run.results and run.results[0]["respiration_bpm"] is not None

    ok = same and per_frame_ms <= 10 and resp_s <= 2
    report(10, ok, f"hashes identical: {same}; Domino {per_frame_ms:.3f} ms/frame (<= 10); 2000-frame respiration {resp_s:.3f} s (<= 2)")
