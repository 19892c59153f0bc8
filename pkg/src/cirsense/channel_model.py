"""OFDM multipath channel simulator.

Produces CSI frames from a list of propagation paths, per-frame hardware
distortions (magnitude gain, common phase, common delay shift) and circular
Gaussian noise. Dynamic paths follow bistatic trajectories: the transmitter
and receiver sit at (-d0/2, 0) and (d0/2, 0) and a target moves along the
perpendicular bisector, so its path length is 2*sqrt(y^2 + (d0/2)^2).

The simulator is the ground truth for every downstream stage.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConfigError, SceneError

LIGHT_SPEED = 3.0e8  # rounded value; keeps tap length at 160 MHz at exactly 1.875 m


def default_subcarriers(dft_size=512, edge=250, dc_guard=2):
    """Approximate 802.11ax 160 MHz occupancy: both band edges and DC nulled."""
    if edge >= dft_size // 2:
        raise ConfigError("edge index must be below N/2", field="active_subcarriers")
    neg = range(-edge, -dc_guard)
    pos = range(dc_guard + 1, edge + 1)
    return tuple(neg) + tuple(pos)


@dataclass(frozen=True)
class SystemConfig:
    """OFDM constants and the subcarrier / tap index sets.

    ``sample_interval_s`` and ``subcarrier_spacing_hz`` are derived from the
    bandwidth and DFT size so their defining identities always hold.
    """

    carrier_freq_hz: float = 5.25e9
    bandwidth_hz: float = 160e6
    dft_size: int = 512
    active_subcarriers: tuple = field(default_factory=default_subcarriers)
    tap_set: tuple = tuple(range(-20, 51))
    light_speed_mps: float = LIGHT_SPEED

    def __post_init__(self):
        object.__setattr__(self, "active_subcarriers", tuple(int(k) for k in self.active_subcarriers))
        object.__setattr__(self, "tap_set", tuple(int(n) for n in self.tap_set))
        n = self.dft_size
        if n <= 0 or self.bandwidth_hz <= 0 or self.carrier_freq_hz <= 0:
            raise ConfigError("dft_size, bandwidth_hz and carrier_freq_hz must be positive")
        ks = self.active_subcarriers
        if not ks:
            raise ConfigError("empty subcarrier set", field="active_subcarriers")
        if len(set(ks)) != len(ks):
            raise ConfigError("duplicate subcarrier indices", field="active_subcarriers")
        if min(ks) < -n // 2 or max(ks) > n // 2 - 1:
            raise ConfigError(f"indices must lie in [{-n // 2}, {n // 2 - 1}]", field="active_subcarriers")
        taps = self.tap_set
        if not taps or any(b - a != 1 for a, b in zip(taps, taps[1:])):
            raise ConfigError("tap set must be a contiguous increasing range", field="tap_set")

    @property
    def sample_interval_s(self):
        return 1.0 / self.bandwidth_hz

    @property
    def subcarrier_spacing_hz(self):
        return self.bandwidth_hz / self.dft_size

    @property
    def wavelength_m(self):
        return self.light_speed_mps / self.carrier_freq_hz

    @property
    def tap_length_m(self):
        """Path length covered by one tap (c * Ts)."""
        return self.light_speed_mps * self.sample_interval_s

    @cached_property
    def subcarriers(self):
        return np.asarray(self.active_subcarriers, dtype=float)

    @cached_property
    def taps(self):
        return np.asarray(self.tap_set, dtype=int)

    @property
    def delay_span_s(self):
        ts = self.sample_interval_s
        return self.tap_set[0] * ts, self.tap_set[-1] * ts

    def to_dict(self):
        return {
            "carrier_freq_hz": self.carrier_freq_hz,
            "bandwidth_hz": self.bandwidth_hz,
            "dft_size": self.dft_size,
            "active_subcarriers": list(self.active_subcarriers),
            "tap_set": [self.tap_set[0], self.tap_set[-1]],
            "light_speed_mps": self.light_speed_mps,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "tap_set" in d:
            lo, hi = d["tap_set"][0], d["tap_set"][-1]
            d["tap_set"] = tuple(range(int(lo), int(hi) + 1))
        if "active_subcarriers" in d and d["active_subcarriers"] == "default":
            d["active_subcarriers"] = default_subcarriers(int(d.get("dft_size", 512)))
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown system fields {sorted(unknown)}", field="system")
        return cls(**d)


@dataclass(frozen=True)
class PathSpec:
    gain: complex
    delay_s: float

    def __post_init__(self):
        if self.delay_s < 0:
            raise SceneError("path delay must be non-negative", field="delay_s")


class MotionKind(str, enum.Enum):
    STATIC = "static"
    RESPIRATION = "respiration"
    LINEAR_SWEEP = "linear_sweep"


class GainModel(str, enum.Enum):
    CONSTANT = "constant"
    INVERSE_DISTANCE = "inverse_distance"


def bisector_range(path_length_m, d0_m):
    """Distance from the transceiver midpoint of a point on the bisector."""
    half = 0.5 * np.asarray(path_length_m, dtype=float)
    rng = half**2 - (0.5 * d0_m) ** 2
    if np.any(rng < 0):
        raise SceneError("path length shorter than the transceiver separation")
    return np.sqrt(rng)


def bistatic_path_length(range_m, d0_m):
    y = np.asarray(range_m, dtype=float)
    return 2.0 * np.sqrt(y**2 + (0.5 * d0_m) ** 2)


@dataclass(frozen=True)
class MotionTrajectory:
    """Target motion on the perpendicular bisector of the transceiver pair.

    For ``static`` and ``respiration`` the rest position is given through
    ``base_delay_s`` (total bistatic path length over c). ``linear_sweep``
    moves from ``sweep_start_m`` to ``sweep_end_m`` (ranges from the
    transceiver midpoint) over ``duration_s`` and then holds.
    """

    kind: MotionKind = MotionKind.RESPIRATION
    base_delay_s: float = 0.0
    amplitude_m: float = 0.006
    rate_hz: float = 0.25
    phase_rad: float = 0.0
    sweep_start_m: float = 0.0
    sweep_end_m: float = 0.0
    duration_s: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", MotionKind(self.kind))
        if self.kind is MotionKind.RESPIRATION:
            if not 0.001 <= self.amplitude_m <= 0.02:
                raise SceneError("respiration amplitude must lie in [0.001, 0.02] m", field="amplitude_m")
            if not 0.1 <= self.rate_hz <= 0.7:
                raise SceneError("respiration rate must lie in [0.1, 0.7] Hz", field="rate_hz")
        if self.kind is MotionKind.LINEAR_SWEEP and self.duration_s <= 0:
            raise SceneError("sweep duration must be positive", field="duration_s")

    def ranges(self, t, d0_m, light_speed=LIGHT_SPEED):
        t = np.asarray(t, dtype=float)
        if self.kind is MotionKind.LINEAR_SWEEP:
            frac = np.clip(t / self.duration_s, 0.0, 1.0)
            return self.sweep_start_m + (self.sweep_end_m - self.sweep_start_m) * frac
        y0 = bisector_range(self.base_delay_s * light_speed, d0_m)
        if self.kind is MotionKind.STATIC:
            return np.full_like(t, y0)
        return y0 + self.amplitude_m * np.sin(2 * np.pi * self.rate_hz * t + self.phase_rad)

    def path_lengths(self, t, d0_m, light_speed=LIGHT_SPEED):
        return bistatic_path_length(self.ranges(t, d0_m, light_speed), d0_m)

    def delays(self, t, d0_m, light_speed=LIGHT_SPEED):
        return self.path_lengths(t, d0_m, light_speed) / light_speed


@dataclass(frozen=True)
class MovingPath:
    """A dynamic path: trajectory plus complex gain at its starting path length."""

    trajectory: MotionTrajectory
    gain: complex
    gain_model: GainModel = GainModel.CONSTANT

    def gains(self, path_lengths):
        if GainModel(self.gain_model) is GainModel.CONSTANT:
            return np.full(len(path_lengths), complex(self.gain))
        return complex(self.gain) * path_lengths[0] / path_lengths


@dataclass(frozen=True)
class DistortionState:
    mag_gain: float = 1.0
    phase_offset_rad: float = 0.0
    delay_shift_s: float = 0.0


@dataclass(frozen=True)
class DistortionPolicy:
    """Ranges for the per-frame hardware distortion draw.

    Magnitude is log-uniform over ``beta_range``; phase and delay shift
    (in taps) are uniform. Degenerate ranges give fixed values.
    """

    beta_range: tuple = (0.5, 2.0)
    theta_range: tuple = (0.0, 2 * math.pi)
    eps_taps_range: tuple = (-2.0, 2.0)

    def __post_init__(self):
        lo, hi = self.beta_range
        if lo <= 0 or hi < lo:
            raise ConfigError("beta_range must be positive and ordered", field="distortion.beta_range")
        for name in ("theta_range", "eps_taps_range"):
            a, b = getattr(self, name)
            if b < a:
                raise ConfigError("range must be ordered", field=f"distortion.{name}")

    @classmethod
    def identity(cls):
        return cls(beta_range=(1.0, 1.0), theta_range=(0.0, 0.0), eps_taps_range=(0.0, 0.0))


@dataclass(eq=False)
class Distortions(Sequence):
    """Per-frame distortion draws stored as arrays; indexable as DistortionState."""

    beta: np.ndarray
    theta: np.ndarray
    eps_s: np.ndarray

    def __len__(self):
        return len(self.beta)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return Distortions(self.beta[i], self.theta[i], self.eps_s[i])
        return DistortionState(float(self.beta[i]), float(self.theta[i]), float(self.eps_s[i]))

    @classmethod
    def identity(cls, n):
        return cls(np.ones(n), np.zeros(n), np.zeros(n))


def sample_distortions(seed, policy, n_frames, cfg=None):
    """Draw ``n_frames`` independent distortion states.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    cfg = cfg or SystemConfig()
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    lo, hi = policy.beta_range
    beta = np.exp(rng.uniform(np.log(lo), np.log(hi), n_frames)) if hi > lo else np.full(n_frames, float(lo))
    a, b = policy.theta_range
    theta = rng.uniform(a, b, n_frames) if b > a else np.full(n_frames, float(a))
    a, b = policy.eps_taps_range
    eps = rng.uniform(a, b, n_frames) if b > a else np.full(n_frames, float(a))
    return Distortions(beta, theta, eps * cfg.sample_interval_s)


@dataclass(frozen=True)
class CsiFrame:
    timestamp_s: float
    values: np.ndarray


@dataclass
class CsiSeries:
    """Time-ordered CSI; ``values`` has one row per frame, columns follow ``cfg.active_subcarriers``."""

    cfg: SystemConfig
    timestamps: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.values.ndim != 2 or self.values.shape[1] != len(self.cfg.active_subcarriers):
            raise ValueError(
                f"CSI matrix shape {self.values.shape} does not match {len(self.cfg.active_subcarriers)} subcarriers"
            )
        if len(self.timestamps) != self.values.shape[0]:
            raise ValueError("timestamp count does not match frame count")

    def __len__(self):
        return self.values.shape[0]

    def __getitem__(self, i):
        if isinstance(i, slice):
            return CsiSeries(self.cfg, self.timestamps[i], self.values[i])
        return CsiFrame(float(self.timestamps[i]), self.values[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def sample_rate_hz(self):
        if len(self) < 2:
            return float("nan")
        return (len(self) - 1) / (self.timestamps[-1] - self.timestamps[0])

    @classmethod
    def from_frames(cls, cfg, frames):
        frames = list(frames)
        return cls(cfg, [f.timestamp_s for f in frames], np.stack([f.values for f in frames]))


@dataclass
class GroundTruth:
    """Per-frame truth recorded alongside a synthesized trace."""

    timestamps: np.ndarray
    distortions: Distortions
    los_delay_s: float
    dynamic_delays_s: np.ndarray  # (frames, targets), absolute
    dynamic_gains: np.ndarray  # (frames, targets)
    d0_m: float = 0.0
    noise_std: float = 0.0
    targets: list = field(default_factory=list)
    static_paths: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def relative_delays_s(self):
        return self.dynamic_delays_s - self.los_delay_s

    @property
    def n_targets(self):
        return self.dynamic_delays_s.shape[1]


def _check_span(cfg, delays, eps):
    lo, hi = cfg.delay_span_s
    tol = 1e-15
    total_lo = np.min(delays) + np.min(eps)
    total_hi = np.max(delays) + np.max(eps)
    if total_lo < lo - tol or total_hi > hi + tol:
        raise SceneError(
            f"path delay plus distortion spans [{total_lo / cfg.sample_interval_s:.3f}, "
            f"{total_hi / cfg.sample_interval_s:.3f}] taps, outside the tap set "
            f"[{cfg.tap_set[0]}, {cfg.tap_set[-1]}]"
        )


def _phase_ramp(cfg, delay_s):
    """exp(-j 2 pi (fc + k df) tau) for a column of delays; returns (len(delay), K)."""
    tau = np.atleast_1d(np.asarray(delay_s, dtype=float))[:, None]
    carrier = np.exp(-2j * np.pi * cfg.carrier_freq_hz * tau)
    return carrier * np.exp(-2j * np.pi * cfg.subcarrier_spacing_hz * cfg.subcarriers[None, :] * tau)


def _synthesize(cfg, static_paths, dyn_gains, dyn_delays, dist, noise_std, rng, chunk=2048):
    n_frames = len(dist)
    n_sc = len(cfg.active_subcarriers)
    scale = 1.0 / math.sqrt(cfg.dft_size)
    static = np.zeros(n_sc, dtype=complex)
    for p in static_paths:
        static += complex(p.gain) * _phase_ramp(cfg, p.delay_s)[0]
    out = np.empty((n_frames, n_sc), dtype=complex)
    for start in range(0, n_frames, chunk):
        sl = slice(start, min(start + chunk, n_frames))
        acc = np.broadcast_to(static, (sl.stop - sl.start, n_sc)).copy()
        for j in range(dyn_delays.shape[1]):
            acc += dyn_gains[sl, j, None] * _phase_ramp(cfg, dyn_delays[sl, j])
        common = dist.beta[sl] * np.exp(-1j * dist.theta[sl]) * scale
        out[sl] = common[:, None] * acc * _phase_ramp(cfg, dist.eps_s[sl])
    if noise_std > 0:
        out += noise_std * (rng.standard_normal(out.shape) + 1j * rng.standard_normal(out.shape))
    return out


def synth_csi_frame(cfg, paths, distortion=None, noise_std=0.0, rng=None, timestamp_s=0.0):
    """Synthesize one CSI frame.

    Parameters
    ----------
    cfg : SystemConfig
    paths : list of PathSpec
    distortion : DistortionState, optional
        Defaults to the identity distortion.
    noise_std : float
        Standard deviation of each real/imaginary noise component.
    rng : numpy Generator, optional
        Required only when ``noise_std > 0``.
    """
    if not paths:
        raise SceneError("at least one path is required")
    if noise_std < 0:
        raise ConfigError("noise_std must be non-negative", field="noise_std")
    d = distortion or DistortionState()
    dist = Distortions(np.array([d.mag_gain]), np.array([d.phase_offset_rad]), np.array([d.delay_shift_s]))
    _check_span(cfg, np.array([p.delay_s for p in paths]), dist.eps_s)
    if noise_std > 0 and rng is None:
        rng = np.random.default_rng()
    values = _synthesize(cfg, paths, np.zeros((1, 0)), np.zeros((1, 0)), dist, noise_std, rng)
    return CsiFrame(float(timestamp_s), values[0])


def synth_scene(
    cfg,
    static_paths,
    moving,
    sample_rate_hz,
    duration_s,
    distortion_policy=None,
    noise_std=0.0,
    seed=0,
    d0_m=0.6,
    separable=False,
    los_delay_s=None,
):
    """Synthesize a CSI series for static paths plus moving targets.

    Parameters
    ----------
    moving : list of MovingPath
    distortion_policy : DistortionPolicy or None
        None disables distortions (identity every frame).
    seed : int
        Seeds independent streams for distortions and noise.
    d0_m : float
        Transceiver separation; sets the bistatic geometry.
    los_delay_s : float, optional
        Delay used as the relative-delay reference. Defaults to d0/c.

    Returns
    -------
    (CsiSeries, GroundTruth)
    """
    if not 50 <= sample_rate_hz <= 1000:
        raise ConfigError("sample rate must lie in [50, 1000] Hz", field="capture.sample_rate_hz")
    if duration_s <= 0:
        raise ConfigError("duration must be positive", field="capture.duration_s")
    if noise_std < 0:
        raise ConfigError("noise_std must be non-negative", field="noise")
    if not static_paths and not moving:
        raise SceneError("scene has no paths")
    n_frames = int(round(duration_s * sample_rate_hz))
    t = np.arange(n_frames) / sample_rate_hz
    c = cfg.light_speed_mps

    dyn_delays = np.zeros((n_frames, len(moving)))
    dyn_gains = np.zeros((n_frames, len(moving)), dtype=complex)
    for j, mp in enumerate(moving):
        lengths = mp.trajectory.path_lengths(t, d0_m, c)
        dyn_delays[:, j] = lengths / c
        dyn_gains[:, j] = mp.gains(lengths)

    if separable:
        ts = cfg.sample_interval_s
        for a in range(len(moving)):
            for b in range(a + 1, len(moving)):
                gap = np.min(np.abs(dyn_delays[:, a] - dyn_delays[:, b]))
                if gap < ts:
                    raise SceneError(f"targets {a} and {b} come within {gap / ts:.2f} taps; separable mode needs >= 1")

    seeds = np.random.SeedSequence(seed).spawn(2)
    if distortion_policy is None:
        dist = Distortions.identity(n_frames)
    else:
        dist = sample_distortions(np.random.default_rng(seeds[0]), distortion_policy, n_frames, cfg)

    all_delays = [p.delay_s for p in static_paths]
    if moving:
        all_delays += [dyn_delays.min(), dyn_delays.max()]
    _check_span(cfg, np.array(all_delays), dist.eps_s)

    values = _synthesize(cfg, static_paths, dyn_gains, dyn_delays, dist, noise_std, np.random.default_rng(seeds[1]))
    los = d0_m / c if los_delay_s is None else los_delay_s
    targets = []
    for mp in moving:
        tr = mp.trajectory
        info = {"kind": tr.kind.value, "gain_model": GainModel(mp.gain_model).value}
        if tr.kind is MotionKind.RESPIRATION:
            info.update(rate_hz=tr.rate_hz, amplitude_m=tr.amplitude_m, base_delay_s=tr.base_delay_s)
        elif tr.kind is MotionKind.LINEAR_SWEEP:
            info.update(sweep_start_m=tr.sweep_start_m, sweep_end_m=tr.sweep_end_m, duration_s=tr.duration_s)
        else:
            info.update(base_delay_s=tr.base_delay_s)
        targets.append(info)
    gt = GroundTruth(
        timestamps=t,
        distortions=dist,
        los_delay_s=los,
        dynamic_delays_s=dyn_delays,
        dynamic_gains=dyn_gains,
        d0_m=d0_m,
        noise_std=noise_std,
        targets=targets,
        static_paths=[{"gain": [p.gain.real, p.gain.imag], "delay_s": p.delay_s} for p in map(_as_path, static_paths)],
    )
    return CsiSeries(cfg, t, values), gt


def _as_path(p):
    return PathSpec(complex(p.gain), float(p.delay_s))
