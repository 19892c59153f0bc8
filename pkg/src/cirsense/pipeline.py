"""Recover, clean, align and estimate over one trace, window by window.

Stage failures inside a window become error records; the run continues.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .channel_model import CsiSeries, GroundTruth
from .domino import align_dominant, passthrough
from .dylign import align_dynamic, align_multi
from .errors import ConfigError, PipelineError
from .estimators import (
    Mode,
    SensingResult,
    ellipse_range,
    respiration_rate,
    ssnr_report,
    target_distance,
)
from .recovery import build_operator
from .search import SearchSpec

log = logging.getLogger(__name__)

MODES = ("respiration", "distance", "dual", "multi-target")


@dataclass
class PipelineOptions:
    mode: str = "dual"
    window_s: float | None = None
    overlap: float = 0.5
    domino: bool = True
    dylign: bool = True
    d0_m: float | None = None
    max_targets: int = 2
    search: SearchSpec = field(default_factory=SearchSpec)
    threads: int | None = None
    smooth_s: float = 0.25  # moving average before tap variances

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}", field="mode")
        if self.window_s is not None and self.window_s <= 0:
            raise ConfigError("window length must be positive", field="window_s")
        if not 0 <= self.overlap < 1:
            raise ConfigError("overlap must lie in [0, 1)", field="overlap")
        if self.max_targets < 1:
            raise ConfigError("max_targets must be at least 1", field="max_targets")
        if self.smooth_s < 0:
            raise ConfigError("smoothing length must be non-negative", field="smooth_s")

    @property
    def wants_rate(self):
        return self.mode in ("respiration", "dual", "multi-target")

    @property
    def wants_distance(self):
        return self.mode in ("distance", "dual", "multi-target")


@dataclass
class WindowOutput:
    index: int
    t0: float
    t1: float
    results: list = field(default_factory=list)
    alignments: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    profile_taps: np.ndarray | None = None
    profile: np.ndarray | None = None
    ssnr: list = field(default_factory=list)


@dataclass
class RunOutput:
    windows: list
    n_frames: int
    sample_rate_hz: float
    options: PipelineOptions
    domino_ambiguous: int = 0
    domino_weak: int = 0
    timestamps: np.ndarray | None = None

    @property
    def results(self):
        return [r for w in self.windows for r in w.results]

    @property
    def errors(self):
        return [e for w in self.windows for e in w.errors]


def window_slices(n_frames, sample_rate_hz, window_s=None, overlap=0.5):
    """Frame slices for sliding windows; the whole trace when ``window_s`` is None."""
    if window_s is None:
        return [slice(0, n_frames)]
    w = int(round(window_s * sample_rate_hz))
    if w < 2:
        raise ConfigError("window holds fewer than two frames", field="window_s")
    if w >= n_frames:
        return [slice(0, n_frames)]
    hop = max(1, int(round(w * (1 - overlap))))
    starts = list(range(0, n_frames - w + 1, hop))
    return [slice(s, s + w) for s in starts]


def _error(window, stage, exc, target=None):
    rec = {"window": window, "stage": stage, "error": type(exc).__name__, "message": str(exc)}
    if target is not None:
        rec["target_id"] = target
    return rec


def _truth(gt: GroundTruth, sl, light_speed, d0):
    """Per-target mean relative delay, path length and breathing rate over a window."""
    rel = gt.relative_delays_s[sl].mean(axis=0)
    out = []
    for j, info in enumerate(gt.targets):
        rate = info.get("rate_hz")
        out.append(
            {
                "relative_delay_s": float(rel[j]),
                "distance_m": float(light_speed * rel[j] + d0),
                "bpm": 60.0 * rate if rate is not None and info.get("kind") == "respiration" else None,
            }
        )
    return out


def _process_window(i, sl, clean, opts, cfg, fs, gt):
    t = clean.timestamps
    w = clean.window(sl)
    out = WindowOutput(i, float(t[sl][0]), float(t[sl][-1]))
    try:
        if opts.mode == "multi-target":
            if not opts.dylign:
                raise ConfigError("multi-target mode needs the alignment stage", field="mode")
            aligns = align_multi(w, opts.search, opts.max_targets, smooth_s=opts.smooth_s)
            if not aligns:
                raise PipelineError("no candidate passed the motion gate")
        else:
            aligns = [align_dynamic(w, opts.search, refine=opts.dylign, smooth_s=opts.smooth_s)]
    except PipelineError as exc:
        out.errors.append(_error(i, exc.stage, exc))
        return out
    out.alignments = aligns
    out.profile_taps = aligns[0].profile_taps
    out.profile = aligns[0].variance_profile

    truth = _truth(gt, sl, cfg.light_speed_mps, opts.d0_m if opts.d0_m is not None else gt.d0_m) if gt else None
    mode = Mode.DUAL if opts.mode == "multi-target" else Mode(opts.mode)
    for k, al in enumerate(aligns):
        try:
            rep = ssnr_report(w, al)
            ssnr_db = rep.ratio_db
        except ValueError as exc:
            rep, ssnr_db = None, float("nan")
            out.errors.append(_error(i, "estimators", exc, k))
        out.ssnr.append(rep)
        res = SensingResult(
            mode=mode,
            ssnr_db=float(ssnr_db),
            target_id=k,
            window=(out.t0, out.t1),
            relative_delay_s=float(al.relative_delay_s),
            tap_index=al.tap_index,
            fractional_shift=float(al.fractional_shift),
            interference=bool(al.interference),
        )
        if opts.wants_rate:
            try:
                res.respiration_bpm = float(respiration_rate(al.motion_signal, fs))
            except PipelineError as exc:
                out.errors.append(_error(i, exc.stage, exc, k))
            except ValueError as exc:
                # too short for a rate; only an error when the rate was the point
                if opts.mode == "respiration":
                    out.errors.append(_error(i, "estimators", exc, k))
                else:
                    log.info("window %d: no rate, %s", i, exc)
        if opts.wants_distance:
            try:
                res.distance_m = float(target_distance(al, cfg, opts.d0_m))
                res.ellipse_range_m = ellipse_range(res.distance_m, opts.d0_m)
            except PipelineError as exc:
                out.errors.append(_error(i, exc.stage, exc, k))
        rec = res.to_dict()
        if truth:
            j = int(np.argmin([abs(tr["relative_delay_s"] - al.relative_delay_s) for tr in truth]))
            tr = truth[j]
            rec["truth"] = dict(tr, target=j)
            if res.distance_m is not None:
                rec["distance_error_m"] = res.distance_m - tr["distance_m"]
            if res.respiration_bpm is not None and tr["bpm"] is not None:
                rec["bpm_error"] = res.respiration_bpm - tr["bpm"]
        out.results.append(rec)
    return out


def thread_count(requested=None):
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("CIRS_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"CIRS_THREADS must be an integer, got {env!r}") from None
    return os.cpu_count() or 1


def run_pipeline(frames: CsiSeries, opts: PipelineOptions | None = None, gt: GroundTruth | None = None) -> RunOutput:
    """Full chain on one trace: recover, Domino, Dylign, estimators.

    Parameters
    ----------
    frames : CsiSeries
    opts : PipelineOptions
    gt : GroundTruth, optional
        Adds truth values and errors to each result record.
    """
    opts = opts or PipelineOptions()
    if opts.wants_distance and opts.d0_m is None:
        if gt is not None and gt.d0_m > 0:
            opts.d0_m = gt.d0_m
        else:
            raise ConfigError("distance estimation needs the transceiver separation d0", field="d0_m")
    cfg = frames.cfg
    fs = frames.sample_rate_hz
    op = build_operator(cfg)
    slices = window_slices(len(frames), fs, opts.window_s, opts.overlap)
    run = RunOutput([], len(frames), float(fs), opts, timestamps=frames.timestamps)

    if opts.domino:
        try:
            dom = align_dominant(frames, op, opts.search)
        except PipelineError as exc:
            for i, sl in enumerate(slices):
                w = WindowOutput(i, float(frames.timestamps[sl][0]), float(frames.timestamps[sl][-1]))
                w.errors.append(_error(i, exc.stage, exc))
                run.windows.append(w)
            return run
        clean = dom.clean
        run.domino_ambiguous = dom.n_ambiguous
        run.domino_weak = int(np.count_nonzero(dom.weak_reference))
    else:
        clean = passthrough(frames, op)

    n_threads = min(thread_count(opts.threads), len(slices))
    if n_threads <= 1:
        run.windows = [_process_window(i, sl, clean, opts, cfg, fs, gt) for i, sl in enumerate(slices)]
    else:
        with ThreadPoolExecutor(n_threads) as pool:
            futs = [pool.submit(_process_window, i, sl, clean, opts, cfg, fs, gt) for i, sl in enumerate(slices)]
            run.windows = [f.result() for f in futs]
    return run


def summarize(run: RunOutput):
    """Aggregate error statistics for records that carry ground truth."""
    res = run.results
    d = [abs(r["distance_error_m"]) for r in res if "distance_error_m" in r]
    b = [abs(r["bpm_error"]) for r in res if "bpm_error" in r]
    return {
        "n_results": len(res),
        "n_errors": len(run.errors),
        "mean_abs_distance_error_m": float(np.mean(d)) if d else None,
        "mean_abs_bpm_error": float(np.mean(b)) if b else None,
        "domino_ambiguous_frames": run.domino_ambiguous,
        "domino_weak_frames": run.domino_weak,
    }


def alignment_rows(run: RunOutput):
    """(window, target, AlignmentResult) triples in deterministic order."""
    for w in run.windows:
        for k, al in enumerate(w.alignments):
            yield w.index, k, al
