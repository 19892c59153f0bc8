"""Command-line driver: ``cirsense synth | run | sweep``.

Exit codes: 0 success, 2 configuration error, 3 unreadable input,
4 gate failure in batch mode (whole trace as a single window).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .errors import ConfigError, RankDeficiencyError, TraceFormatError
from .pipeline import MODES, PipelineOptions, alignment_rows, run_pipeline, summarize, thread_count
from .scenes import load_grid, load_scene, load_template
from .trace_io import read_ground_truth, read_trace, write_ground_truth, write_trace

EXIT_OK, EXIT_CONFIG, EXIT_INPUT, EXIT_GATE = 0, 2, 3, 4

log = logging.getLogger("cirsense")


def _clean_json(x):
    if isinstance(x, dict):
        return {k: _clean_json(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean_json(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else None
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(_clean_json(obj), indent=2, sort_keys=True) + "\n")


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _g(x):
    return f"{x:.10g}"


def cmd_synth(args):
    scene = load_scene(args.scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = scene.seed if args.seed is None else args.seed
    frames, gt = scene.synthesize(seed)
    trace = write_trace(out / f"{scene.name}.cirs", frames, scene=scene.name, d0_m=scene.d0_m)
    gt_path = write_ground_truth(out / f"{scene.name}.gt.jsonl", gt)
    print(f"wrote {trace} ({len(frames)} frames) and {gt_path}")
    return EXIT_OK


def export_run(run, out: Path, figures=True, meta=None):
    """Write results.json and the plot CSVs (and PNGs) for one pipeline run."""
    out.mkdir(parents=True, exist_ok=True)
    doc = {
        "meta": meta or {},
        "options": {
            "mode": run.options.mode,
            "window_s": run.options.window_s,
            "domino": run.options.domino,
            "dylign": run.options.dylign,
            "d0_m": run.options.d0_m,
            "max_targets": run.options.max_targets,
        },
        "n_frames": run.n_frames,
        "sample_rate_hz": run.sample_rate_hz,
        "results": run.results,
        "errors": run.errors,
        "ssnr": [
            {"window": w.index, "target_id": k, **rep.to_dict()}
            for w in run.windows
            for k, rep in enumerate(w.ssnr)
            if rep is not None
        ],
        "summary": summarize(run),
    }
    _dump_json(doc, out / "results.json")

    rows = []
    for w in run.windows:
        if w.profile is not None:
            rows += [(w.index, int(n), _g(v)) for n, v in zip(w.profile_taps, w.profile)]
    _write_csv(out / "variance_profile.csv", ["window", "tap", "variance"], rows)

    shift_rows, traj_rows = [], []
    ts = run.timestamps
    for wi, k, al in alignment_rows(run):
        shift_rows += [(wi, k, _g(s), _g(v)) for s, v in zip(al.shift_grid, al.shift_variance)]
        w = run.windows[wi]
        t = ts[(ts >= w.t0) & (ts <= w.t1)] if ts is not None else np.arange(len(al.motion_signal))
        traj_rows += [(wi, k, _g(tt), _g(z.real), _g(z.imag)) for tt, z in zip(t, al.motion_signal)]
    _write_csv(out / "shift_curve.csv", ["window", "target", "shift_taps", "variance"], shift_rows)
    _write_csv(out / "trajectory.csv", ["window", "target", "t_s", "re", "im"], traj_rows)

    if figures and any(w.alignments for w in run.windows):
        from . import plotting

        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        w = next(w for w in run.windows if w.alignments)
        plotting.variance_profile(w.profile_taps, w.profile, fig_dir / "variance_profile.png", [a.tap_index for a in w.alignments])
        plotting.shift_curves(w.alignments, fig_dir / "shift_curve.png")
        plotting.trajectory(w.alignments, fig_dir / "trajectory.png")
    return doc


def cmd_run(args):
    frames, header = read_trace(args.trace)
    gt = read_ground_truth(args.gt) if args.gt else None
    d0 = args.d0 if args.d0 is not None else header.get("d0_m")
    opts = PipelineOptions(
        mode=args.mode,
        window_s=args.window_s,
        domino=not args.no_domino,
        dylign=not args.no_dylign,
        d0_m=d0,
        max_targets=args.max_targets,
    )
    run = run_pipeline(frames, opts, gt)
    meta = {"trace": Path(args.trace).name, "scene": header.get("scene")}
    doc = export_run(run, Path(args.out), figures=not args.no_figures, meta=meta)
    s = doc["summary"]
    print(f"{s['n_results']} result(s), {s['n_errors']} error record(s); written to {args.out}")
    for e in run.errors:
        print(f"  window {e['window']}: {e['stage']} {e['error']}: {e['message']}", file=sys.stderr)
    if args.window_s is None and run.errors:
        return EXIT_GATE
    return EXIT_OK


def _sweep_point(args):
    i, point, seed, scene, grid = args
    frames, gt = scene.synthesize(seed)
    opts = PipelineOptions(mode=grid.mode, window_s=grid.window_s, d0_m=scene.d0_m, threads=1)
    run = run_pipeline(frames, opts, gt)
    s = summarize(run)
    return i, point, seed, s, run.errors


def cmd_sweep(args):
    grid = load_grid(args.grid)
    template_ref = args.template or grid.template
    if template_ref is None:
        raise ConfigError("no scene template given (use --template or 'template:' in the grid)")
    template = load_template(template_ref)
    jobs = []
    for point, scene in grid.scenes(template, name=template.get("name", "sweep")):
        for seed in grid.seeds:
            jobs.append((len(jobs), point, seed, scene, grid))
    if not jobs:
        raise ConfigError("empty grid", field="parameters")
    n = min(thread_count(), len(jobs))
    if n > 1:
        with ThreadPoolExecutor(n) as pool:
            done = list(pool.map(_sweep_point, jobs))
    else:
        done = [_sweep_point(j) for j in jobs]

    keys = list(grid.parameters)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, point, seed, s, errors in done:
        rows.append(
            [point[k] for k in keys]
            + [seed, s["n_results"], s["n_errors"], s["mean_abs_distance_error_m"], s["mean_abs_bpm_error"]]
        )
    cols = keys + ["seed", "n_results", "n_errors", "abs_distance_error_m", "abs_bpm_error"]
    _write_csv(out / "sweep.csv", cols, [[("" if v is None else v) for v in r] for r in rows])

    agg, order = {}, []
    for r in rows:
        key = tuple(r[: len(keys)])
        if key not in agg:
            agg[key] = []
            order.append(key)
        agg[key].append(r)

    def mean(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else None

    agg_rows = []
    for key in order:
        rs = agg[key]
        nk = len(keys)
        agg_rows.append(list(key) + [len(rs), sum(r[nk + 2] for r in rs), mean([r[nk + 3] for r in rs]), mean([r[nk + 4] for r in rs])])
    agg_cols = keys + ["runs", "errors", "mean_abs_distance_error_m", "mean_abs_bpm_error"]
    _write_csv(out / "aggregate.csv", agg_cols, [[("" if v is None else v) for v in r] for r in agg_rows])

    if not args.no_figures and len(keys) == 1 and all(isinstance(k[0], (int, float)) for k in order):
        from . import plotting

        (out / "figures").mkdir(exist_ok=True)
        x = [k[0] for k in order]
        ys, labels = [], []
        for j, lab in ((2, "distance (m)"), (3, "rate (bpm)")):
            y = [r[len(keys) + j] for r in agg_rows]
            if all(v is not None for v in y):
                ys.append(y)
                labels.append(lab)
        if ys:
            plotting.sweep_errors(x, ys, labels, keys[0], out / "figures" / "sweep_errors.png")
    print(f"{len(jobs)} run(s) over {len(order)} grid point(s); written to {out}")
    return EXIT_OK


def build_parser():
    p = argparse.ArgumentParser(prog="cirsense", description="CIR-domain WiFi sensing pipeline")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize a CSI trace and its ground truth")
    s.add_argument("--scene", required=True, help="scene YAML file or bundled scene name")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=None, help="overrides the scene seed")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("run", help="run the sensing pipeline on a trace")
    r.add_argument("--trace", required=True)
    r.add_argument("--gt", help="ground-truth JSON lines for error reporting")
    r.add_argument("--mode", choices=MODES, default="dual")
    r.add_argument("--window-s", type=float, default=None, help="sliding window length; whole trace if omitted")
    r.add_argument("--out", required=True)
    r.add_argument("--d0", type=float, default=None, help="transceiver separation in metres")
    r.add_argument("--max-targets", type=int, default=2)
    r.add_argument("--no-domino", action="store_true", help="skip distortion removal")
    r.add_argument("--no-dylign", action="store_true", help="skip fractional alignment")
    r.add_argument("--no-figures", action="store_true", help="write CSV/JSON only")
    r.set_defaults(func=cmd_run)

    w = sub.add_parser("sweep", help="run a parameter grid over a scene template")
    w.add_argument("--grid", required=True, help="grid YAML file or bundled grid name")
    w.add_argument("--template", help="scene YAML file or bundled scene name")
    w.add_argument("--out", required=True)
    w.add_argument("--no-figures", action="store_true")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, RankDeficiencyError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TraceFormatError as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
