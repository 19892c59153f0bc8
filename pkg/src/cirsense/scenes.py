"""YAML scene descriptions and sweep grids.

A scene fixes the OFDM system, the capture, the geometry, the static and
moving paths, the distortion policy and the noise level. Malformed files
raise :class:`ConfigError` carrying the offending field path and line.

Noise is set either directly (``noise.std``, per real/imaginary component of
each subcarrier) or as a tap-domain SSNR ``noise.ssnr_db``: the ratio of the
weakest target's tap power |alpha|^2 to the LS-recovered tap noise power at
its tap, before hardware distortion.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .channel_model import (
    DistortionPolicy,
    GainModel,
    MotionKind,
    MotionTrajectory,
    MovingPath,
    PathSpec,
    SystemConfig,
    bisector_range,
    bistatic_path_length,
    synth_scene,
)
from .errors import ConfigError
from .recovery import build_operator

_MISSING = object()


def _line_index(text):
    """Map field paths (tuples of keys / indices) to 1-based line numbers."""
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}", line=mark.line + 1 if mark else None) from exc
    lines = {}

    def walk(node, path):
        lines[path] = node.start_mark.line + 1
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                lines[path + (k.value,)] = k.start_mark.line + 1
                walk(v, path + (k.value,))
                lines[path + (k.value,)] = k.start_mark.line + 1
        elif isinstance(node, yaml.SequenceNode):
            for i, v in enumerate(node.value):
                walk(v, path + (i,))

    if root is not None:
        walk(root, ())
    return lines


def _fmt(path):
    out = ""
    for p in path:
        out += f"[{p}]" if isinstance(p, int) else (f".{p}" if out else str(p))
    return out


class _Reader:
    """Typed access to a nested dict with field/line diagnostics."""

    def __init__(self, data, lines, path=()):
        self.data = data
        self.lines = lines
        self.path = path
        self.used = set()

    def error(self, msg, key=None):
        path = self.path + ((key,) if key is not None else ())
        line = None
        for n in range(len(path), -1, -1):
            line = self.lines.get(path[:n])
            if line is not None:
                break
        return ConfigError(msg, field=_fmt(path) or None, line=line)

    def has(self, key):
        return isinstance(self.data, dict) and key in self.data

    def raw(self, key, default=_MISSING):
        if not isinstance(self.data, dict):
            raise self.error("expected a mapping")
        self.used.add(key)
        if key not in self.data:
            if default is _MISSING:
                raise self.error("required field is missing", key)
            return default
        return self.data[key]

    def num(self, key, default=_MISSING, lo=None, hi=None, integer=False, positive=False):
        v = self.raw(key, default)
        if v is None and default is None:
            return None
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.error(f"expected a number, got {v!r}", key)
        if integer and int(v) != v:
            raise self.error(f"expected an integer, got {v!r}", key)
        v = int(v) if integer else float(v)
        if not math.isfinite(v):
            raise self.error("must be finite", key)
        if positive and v <= 0:
            raise self.error(f"must be positive, got {v:g}", key)
        if lo is not None and v < lo or hi is not None and v > hi:
            raise self.error(f"{v:g} outside [{lo}, {hi}]", key)
        return v

    def pair(self, key, default=_MISSING):
        v = self.raw(key, default)
        if isinstance(v, (list, tuple)) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v):
            return (float(v[0]), float(v[1]))
        raise self.error(f"expected a [low, high] pair, got {v!r}", key)

    def sub(self, key, default=_MISSING):
        v = self.raw(key, default)
        if v is None:
            return None
        if not isinstance(v, dict):
            raise self.error("expected a mapping", key)
        return _Reader(v, self.lines, self.path + (key,))

    def items(self, key):
        v = self.raw(key, [])
        if not isinstance(v, list):
            raise self.error("expected a list", key)
        out = []
        for i, item in enumerate(v):
            if not isinstance(item, dict):
                raise _Reader(item, self.lines, self.path + (key, i)).error("expected a mapping")
            out.append(_Reader(item, self.lines, self.path + (key, i)))
        return out

    def choice(self, key, options, default=_MISSING):
        v = self.raw(key, default)
        if v not in options:
            raise self.error(f"expected one of {sorted(options)}, got {v!r}", key)
        return v

    def finish(self):
        if isinstance(self.data, dict):
            extra = [k for k in self.data if k not in self.used]
            if extra:
                raise self.error(f"unknown field {extra[0]!r}", extra[0])

    def gain(self, key, default=_MISSING):
        v = self.raw(key, default)
        if isinstance(v, (int, float)) and not isinstance(v, bool):
            return complex(v)
        if isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v):
            return complex(v[0], v[1])
        if isinstance(v, dict) and set(v) <= {"mag", "phase_rad"} and "mag" in v:
            return v["mag"] * np.exp(1j * v.get("phase_rad", 0.0))
        raise self.error("gain must be a number, [re, im] or {mag, phase_rad}", key)


@dataclass
class Scene:
    name: str
    cfg: SystemConfig
    static_paths: list
    moving: list
    sample_rate_hz: float
    duration_s: float
    d0_m: float
    distortion: DistortionPolicy | None
    noise_std: float
    ssnr_db: float | None = None
    seed: int = 0
    source: dict = field(default_factory=dict, repr=False)

    @property
    def los_delay_s(self):
        return self.d0_m / self.cfg.light_speed_mps

    def synthesize(self, seed=None):
        frames, gt = synth_scene(
            self.cfg,
            self.static_paths,
            self.moving,
            self.sample_rate_hz,
            self.duration_s,
            distortion_policy=self.distortion,
            noise_std=self.noise_std,
            seed=self.seed if seed is None else seed,
            d0_m=self.d0_m,
        )
        gt.meta.update(scene=self.name, ssnr_db=self.ssnr_db)
        return frames, gt


def _system(r):
    if r is None:
        return SystemConfig()
    kw = {}
    for key in ("carrier_freq_hz", "bandwidth_hz", "light_speed_mps"):
        if r.has(key):
            kw[key] = r.num(key, positive=True)
    if r.has("dft_size"):
        kw["dft_size"] = r.num("dft_size", integer=True, positive=True)
    if r.has("subcarriers"):
        v = r.raw("subcarriers")
        if v == "default":
            pass
        elif v == "full":
            n = kw.get("dft_size", 512)
            kw["active_subcarriers"] = tuple(range(-n // 2, n // 2))
        elif isinstance(v, list) and all(isinstance(k, int) for k in v):
            kw["active_subcarriers"] = tuple(v)
        else:
            raise r.error("expected 'default', 'full' or a list of integers", "subcarriers")
    if r.has("tap_set"):
        lo, hi = r.pair("tap_set")
        if lo != int(lo) or hi != int(hi) or hi < lo:
            raise r.error("tap_set must be an ordered integer pair", "tap_set")
        kw["tap_set"] = tuple(range(int(lo), int(hi) + 1))
    r.finish()
    if "active_subcarriers" not in kw and "dft_size" in kw:
        from .channel_model import default_subcarriers

        n = kw["dft_size"]
        kw["active_subcarriers"] = default_subcarriers(n, edge=int(round(250 * n / 512)), dc_guard=2)
    try:
        return SystemConfig(**kw)
    except ConfigError as exc:
        raise r.error(str(exc)) from exc


def _path_length(r, cfg, d0, prefix=""):
    """Total bistatic path length from whichever position key is present."""
    keys = [k for k in ("relative_delay_taps", "relative_path_m", "path_m", "range_m", "delay_s") if r.has(prefix + k)]
    if len(keys) != 1:
        raise r.error(
            "give exactly one of relative_delay_taps, relative_path_m, path_m, range_m, delay_s"
            + (f" (prefixed {prefix!r})" if prefix else "")
        )
    k = keys[0]
    v = r.num(prefix + k, lo=0.0)
    if k == "relative_delay_taps":
        return d0 + v * cfg.tap_length_m
    if k == "relative_path_m":
        return d0 + v
    if k == "path_m":
        return v
    if k == "range_m":
        return float(bistatic_path_length(v, d0))
    return v * cfg.light_speed_mps


def _static_paths(r, cfg, d0):
    items = r.items("static_paths") if r.has("static_paths") else None
    if items is None:
        return [PathSpec(1.0 + 0j, d0 / cfg.light_speed_mps)]
    out = []
    for it in items:
        gain = it.gain("gain")
        length = _path_length(it, cfg, d0)
        it.finish()
        out.append(PathSpec(gain, length / cfg.light_speed_mps))
    if not out:
        raise r.error("needs at least one static path", "static_paths")
    return out


def _target(it, cfg, d0):
    kind = MotionKind(it.choice("motion", {m.value for m in MotionKind}))
    gain_model = GainModel(it.choice("gain_model", {g.value for g in GainModel}, "constant"))
    if it.has("gain"):
        gain = it.gain("gain")
    else:
        law = it.sub("gain_law")
        if law is None:
            raise it.error("give gain or gain_law")
        ref_gain = law.num("ref_gain", positive=True)
        ref_path = law.num("ref_path_m", positive=True)
        exponent = law.num("exponent", 1.0, lo=0.0)
        law.finish()
        gain = None
    c = cfg.light_speed_mps
    kw = {"kind": kind}
    try:
        if kind is MotionKind.LINEAR_SWEEP:
            start = _path_length(it, cfg, d0, "start_")
            if it.has("path_displacement_wavelengths"):
                end = start + it.num("path_displacement_wavelengths") * cfg.wavelength_m
            else:
                end = _path_length(it, cfg, d0, "end_")
            kw.update(
                sweep_start_m=float(bisector_range(start, d0)),
                sweep_end_m=float(bisector_range(end, d0)),
                duration_s=it.num("duration_s", positive=True),
            )
            length = start
        else:
            length = _path_length(it, cfg, d0)
            kw["base_delay_s"] = length / c
            if kind is MotionKind.RESPIRATION:
                kw.update(
                    amplitude_m=it.num("amplitude_m"),
                    rate_hz=it.num("rate_hz") if it.has("rate_hz") else it.num("rate_bpm") / 60.0,
                    phase_rad=it.num("phase_rad", 0.0),
                )
        if length < d0:
            raise it.error(f"path length {length:.4g} m is shorter than the separation d0 = {d0:g} m")
        traj = MotionTrajectory(**kw)
    except ConfigError as exc:
        if exc.line is not None:
            raise
        raise it.error(str(exc).split(": ", 1)[-1], exc.field) from exc
    if gain is None:
        gain = complex(ref_gain * (ref_path / length) ** exponent)
    it.finish()
    return MovingPath(traj, gain, gain_model), length


def parse_scene(text, name="scene") -> Scene:
    """Build a :class:`Scene` from YAML text."""
    lines = _line_index(text)
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError("scene must be a mapping", line=1)
    return build_scene(data, lines, name)


def build_scene(data: dict, lines=None, name="scene") -> Scene:
    r = _Reader(data, lines or {})
    name = str(r.raw("name", name))
    r.raw("description", None)
    cfg = _system(r.sub("system", None))
    cap = r.sub("capture")
    fs = cap.num("sample_rate_hz", lo=50, hi=1000)
    duration = cap.num("duration_s", positive=True)
    cap.finish()
    geo = r.sub("geometry", None)
    d0 = geo.num("d0_m", 0.6, positive=True) if geo else 0.6
    if geo:
        geo.finish()
    static = _static_paths(r, cfg, d0)

    moving, lengths = [], []
    for it in r.items("targets"):
        mp, length = _target(it, cfg, d0)
        moving.append(mp)
        lengths.append(length)

    dr = r.sub("distortion", None)
    policy = None
    if dr is not None:
        d = DistortionPolicy()
        enabled = dr.raw("enabled", True)
        if not isinstance(enabled, bool):
            raise dr.error("expected true or false", "enabled")
        ranges = {k: dr.pair(k, getattr(d, k)) for k in ("beta_range", "theta_range", "eps_taps_range")}
        try:
            policy = DistortionPolicy(**ranges) if enabled else None
        except ConfigError as exc:
            raise dr.error(str(exc).split(": ", 1)[-1], (exc.field or "").split(".")[-1] or None) from exc
    if dr is not None:
        dr.finish()

    nr = r.sub("noise", None)
    noise_std, ssnr = 0.0, None
    if nr is not None:
        if nr.has("std") and nr.has("ssnr_db"):
            raise nr.error("give std or ssnr_db, not both")
        if nr.has("std"):
            noise_std = nr.num("std", lo=0.0)
        elif nr.has("ssnr_db"):
            ssnr = nr.num("ssnr_db", lo=-30, hi=120)
            ref = nr.num("reference_gain", None, positive=True)
            if ref is None and not moving:
                raise nr.error("ssnr_db needs a target or noise.reference_gain")
            noise_std = noise_std_for_ssnr(cfg, ssnr, moving, lengths, ref)
        nr.finish()
    seed = r.num("seed", 0, integer=True, lo=0)
    r.finish()
    return Scene(name, cfg, static, moving, fs, duration, d0, policy, noise_std, ssnr, seed, data)


def noise_std_for_ssnr(cfg, ssnr_db, moving, lengths, reference_gain=None):
    """Per-component noise std giving tap SSNR ``ssnr_db`` for the weakest target."""
    op = build_operator(cfg)
    gamma = 10 ** (ssnr_db / 10)
    if reference_gain is not None:
        amp = reference_gain
        n = int(np.clip(round(min(lengths) / cfg.tap_length_m), cfg.tap_set[0], cfg.tap_set[-1])) if lengths else 0
    else:
        k = int(np.argmin([abs(m.gain) for m in moving]))
        amp = abs(moving[k].gain)
        n = int(np.clip(round(lengths[k] / cfg.tap_length_m), cfg.tap_set[0], cfg.tap_set[-1]))
    return float(amp / math.sqrt(2 * gamma * op.noise_gain(n)))


def bundled_scenes():
    root = resources.files("cirsense") / "data" / "scenes"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def bundled_grids():
    root = resources.files("cirsense") / "data" / "grids"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def _resolve(ref, kind):
    p = Path(ref)
    if p.is_file():
        return p.read_text(), p.stem
    res = resources.files("cirsense") / "data" / kind / f"{ref}.yaml"
    if res.is_file():
        return res.read_text(), str(ref)
    raise ConfigError(f"no such file or bundled {kind[:-1]}: {ref}")


def load_scene_text(ref):
    """YAML text and name for a path or a bundled scene name."""
    return _resolve(ref, "scenes")


def load_scene(ref) -> Scene:
    text, name = load_scene_text(ref)
    return parse_scene(text, name)


def set_path(data, dotted, value):
    """Set ``a.b.0.c`` style keys inside nested dicts / lists, in place."""
    parts = dotted.split(".")
    cur = data
    for i, p in enumerate(parts):
        last = i == len(parts) - 1
        if isinstance(cur, list):
            if not p.isdigit() or int(p) >= len(cur):
                raise ConfigError(f"bad list index {p!r}", field=dotted)
            p = int(p)
        elif not isinstance(cur, dict):
            raise ConfigError("cannot descend into a scalar", field=dotted)
        if last:
            cur[p] = value
        else:
            if isinstance(cur, dict) and p not in cur:
                cur[p] = {}
            cur = cur[p]


@dataclass
class SweepGrid:
    parameters: dict
    seeds: list
    mode: str = "distance"
    window_s: float | None = None
    template: str | None = None

    def points(self):
        """Cartesian product of parameter values, in file order."""
        import itertools

        keys = list(self.parameters)
        for combo in itertools.product(*(self.parameters[k] for k in keys)):
            yield dict(zip(keys, combo))

    def scenes(self, template: dict, name="sweep"):
        for point in self.points():
            data = copy.deepcopy(template)
            for k, v in point.items():
                set_path(data, k, v)
            yield point, build_scene(data, name=name)


def parse_grid(text) -> SweepGrid:
    lines = _line_index(text)
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError("grid must be a mapping", line=1)
    r = _Reader(data, lines)
    params = r.raw("parameters")
    if not isinstance(params, dict) or not params:
        raise r.error("needs at least one parameter", "parameters")
    for k, v in params.items():
        if not isinstance(v, list) or not v:
            raise _Reader(params, lines, ("parameters",)).error("expected a non-empty list of values", k)
    seeds = r.raw("seeds", [0])
    if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
        raise r.error("expected a non-empty list of non-negative integers", "seeds")
    mode = r.choice("mode", {"respiration", "distance", "dual"}, "distance")
    window = r.num("window_s", None, positive=True)
    template = r.raw("template", None)
    r.finish()
    return SweepGrid(params, seeds, mode, window, template)


def load_grid(ref) -> SweepGrid:
    text, _ = _resolve(ref, "grids")
    return parse_grid(text)


def load_template(ref) -> dict:
    text, name = load_scene_text(ref)
    _line_index(text)
    data = yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ConfigError("scene must be a mapping", line=1)
    data.setdefault("name", name)
    return data
