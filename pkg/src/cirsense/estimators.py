"""Respiration rate, target distance and SSNR from an aligned motion signal."""

from __future__ import annotations

import enum
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import uniform_filter1d
from scipy.signal import get_window

from .channel_model import SystemConfig, bisector_range
from .dylign import AlignmentResult
from .errors import InvariantError, NoRespirationError
from .recovery import CirSeries

RESP_BAND_HZ = (0.1, 0.7)


class Mode(str, enum.Enum):
    RESPIRATION = "respiration"
    DISTANCE = "distance"
    DUAL = "dual"


@dataclass
class SensingResult:
    mode: Mode
    ssnr_db: float
    target_id: int = 0
    window: tuple = (0.0, 0.0)
    respiration_bpm: float | None = None
    distance_m: float | None = None
    ellipse_range_m: float | None = None
    relative_delay_s: float | None = None
    tap_index: int | None = None
    fractional_shift: float | None = None
    interference: bool = False

    def to_dict(self):
        d = asdict(self)
        d["mode"] = Mode(self.mode).value
        d["window"] = [float(w) for w in self.window]
        return d


@dataclass
class SsnrReport:
    """Tap-domain and per-subcarrier SSNR for one target.

    ``target_power`` and ``noise_power`` refer to the aligned tap;
    ``unaligned_ratio_db`` repeats the computation on the integer max-variance
    tap and ``per_subcarrier_ratio_db`` on the max-variance subcarrier.
    """

    target_power: float
    noise_power: float
    ratio_db: float
    per_subcarrier_ratio_db: float
    unaligned_ratio_db: float
    noise_floor_sc: float
    noise_source: str

    def to_dict(self):
        return asdict(self)


def _folded_spectrum(x, fs, pad):
    n = len(x)
    m = 1 << int(np.ceil(np.log2(pad * n)))
    spec = np.abs(np.fft.fft(x * get_window("hann", n), m)) ** 2
    k = np.arange(1, m // 2)
    return k * fs / m, spec[k] + spec[m - k]


def _parabolic(y, i):
    if i <= 0 or i >= len(y) - 1:
        return 0.0
    a, b, c = np.log(y[i - 1 : i + 2])
    den = a - 2 * b + c
    return 0.0 if den >= 0 else 0.5 * (a - c) / den


def respiration_rate(
    motion_signal,
    sample_rate_hz,
    smooth_s=0.25,
    band=RESP_BAND_HZ,
    min_peak_db=6.0,
    pad=8,
    harmonics=3,
    candidate_floor=0.2,
    min_periods=2.0,
):
    """Breathing rate in breaths per minute from a complex motion signal.

    The complex mean (static part) is removed, the signal is smoothed with a
    moving average, and a Hann-windowed periodogram is folded so that power
    at +f and -f adds up. Chest displacements of a centimetre rotate the
    signal by several radians, which pushes comparable power into the second
    harmonic; the fundamental is chosen among the strong in-band peaks by the
    summed power at its first ``harmonics`` multiples.

    Raises
    ------
    ValueError
        Signal shorter than ``min_periods`` cycles of the slowest in-band rate.
    NoRespirationError
        No in-band peak exceeds the in-band median by ``min_peak_db``.
    """
    x = np.asarray(motion_signal, dtype=complex)
    fs = float(sample_rate_hz)
    if x.ndim != 1 or len(x) < 8:
        raise ValueError("need a 1-D signal of at least 8 samples")
    if len(x) / fs < min_periods / band[0] * (1 - 1e-9):
        raise ValueError(f"{len(x) / fs:.3g} s is shorter than {min_periods:g} periods at {band[0]:g} Hz")
    x = x - x.mean()
    scale = np.max(np.abs(x))
    if not np.isfinite(scale) or scale == 0:
        raise NoRespirationError("motion signal is constant")
    x = x / scale
    width = max(1, int(round(smooth_s * fs)))
    if width > 1:
        x = uniform_filter1d(x.real, width, mode="nearest") + 1j * uniform_filter1d(x.imag, width, mode="nearest")

    freqs, pf = _folded_spectrum(x, fs, pad)
    lo, hi = band
    inb = np.flatnonzero((freqs >= lo) & (freqs <= hi))
    if len(inb) < 3:
        raise ValueError("window too short to resolve the respiration band")
    p_in = pf[inb]
    peak = p_in.max()
    median = np.median(p_in)
    if peak <= 0 or 10 * np.log10(peak / max(median, 1e-300)) < min_peak_db:
        raise NoRespirationError("no in-band spectral peak above the median")

    i = np.arange(1, len(p_in) - 1)
    local = i[(p_in[i] >= p_in[i - 1]) & (p_in[i] > p_in[i + 1]) & (p_in[i] >= candidate_floor * peak)]
    if len(local) == 0:
        local = np.array([int(np.argmax(p_in))])
    df = freqs[1] - freqs[0]

    def score(j):
        f = freqs[inb[j]]
        total = 0.0
        for h in range(1, harmonics + 1):
            b = int(round(h * f / df)) - 1  # freqs[0] is df
            if b >= len(pf) - 1:
                break
            total += pf[max(b - 1, 0) : b + 2].max()
        return total

    best = max(local, key=lambda j: (score(j), -j))
    g = inb[best]
    return 60.0 * (freqs[g] + _parabolic(pf, g) * df)


def target_distance(result: AlignmentResult, cfg: SystemConfig, d0_m: float) -> float:
    """Total reflected path length c*tau + d0 in metres."""
    if d0_m <= 0:
        raise ValueError("transceiver separation must be positive")
    if result.relative_delay_s < 0:
        raise InvariantError(f"negative relative delay {result.relative_delay_s:.3g} s")
    return cfg.light_speed_mps * result.relative_delay_s + d0_m


def ellipse_range(path_length_m, d0_m):
    """Distance from the transceiver midpoint along the bisector for a given path length."""
    return float(bisector_range(path_length_m, d0_m))


def coherence_from_delays(delays_s, cfg: SystemConfig):
    """|mean exp(-j 2 pi fc tau)|^2 for a delay sequence."""
    return float(np.abs(np.mean(np.exp(-2j * np.pi * cfg.carrier_freq_hz * np.asarray(delays_s)))) ** 2)


def estimate_noise_floor(clean: CirSeries, exclude_taps, guard=3, candidate_taps=(0, 50)):
    """Per-subcarrier noise power from taps away from every target.

    Each tap's variance is divided by its LS noise gain; the median over the
    usable taps is returned. Tap 0 (the normalization reference) is skipped.
    """
    op = clean.op
    var = np.var(clean.taps, axis=1)
    gain = op.noise_gain()
    taps = clean.tap_indices
    ok = (taps >= candidate_taps[0]) & (taps <= candidate_taps[1]) & (taps != 0)
    for n in np.atleast_1d(exclude_taps):
        ok &= np.abs(taps - n) > guard
    if not ok.any():
        raise ValueError("no motion-free taps available for the noise floor")
    return float(np.median(var[ok] / gain[ok]))


def _ratio_db(var, noise, coherence):
    p = max(var - noise, 1e-300)
    if coherence is not None:
        p /= max(1.0 - coherence, 1e-12)
    return p, 10 * np.log10(p / noise)


def ssnr_report(
    clean: CirSeries,
    alignment: AlignmentResult,
    noise_floor_estimate=None,
    coherence=None,
) -> SsnrReport:
    """SSNR of the aligned tap, the unaligned tap and the best subcarrier.

    Parameters
    ----------
    noise_floor_estimate : float, optional
        Per-subcarrier noise power of the clean CSI. Estimated from
        motion-free taps when omitted.
    coherence : float, optional
        Ground-truth |mu|^2. When given, the motion power is corrected for
        the part of the rotation that does not show up as variance.
    """
    op = clean.op
    if noise_floor_estimate is None:
        noise_sc = estimate_noise_floor(clean, [alignment.tap_index])
        source = "estimated"
    else:
        noise_sc = float(noise_floor_estimate)
        source = "supplied"
    if noise_sc <= 0:
        raise ValueError("noise floor must be positive")
    noise_tap = noise_sc * float(op.noise_gain(alignment.tap_index))

    power, ratio = _ratio_db(alignment.aligned_variance, noise_tap, coherence)
    _, unaligned = _ratio_db(alignment.unaligned_variance, noise_tap, coherence)
    if clean.frames is not None:
        sc_var = np.var(clean.frames.values, axis=0).max()
        _, per_sc = _ratio_db(sc_var, noise_sc, coherence)
    else:
        per_sc = float("nan")
    return SsnrReport(power, noise_tap, float(ratio), float(per_sc), float(unaligned), noise_sc, source)


def rotation_profile(motion_signal, centre=None):
    """Signed number of turns and the fitted radius of every complete turn.

    ``centre`` defaults to a circle fit over the whole signal. Each full turn
    of the unwrapped phase gets its own circle fit, which removes the
    per-turn ripple a single fit leaves on a spiral.
    """
    from .dylign import fit_circle

    z = np.asarray(motion_signal, dtype=complex)
    if centre is None:
        centre, _ = fit_circle(z)
    ph = np.unwrap(np.angle(z - centre))
    turns = (ph[-1] - ph[0]) / (2 * np.pi)
    k = np.floor(np.abs(ph - ph[0]) / (2 * np.pi)).astype(int)
    radii = np.array([fit_circle(z[k == i])[1] for i in range(int(k.max()))])
    return float(turns), radii
