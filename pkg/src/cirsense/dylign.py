"""Dynamic-path identification and sub-tap alignment.

The tap with the largest temporal variance carries the moving reflector.
Its delay is refined by shifting the clean CSI in the frequency domain and
re-recovering that tap, keeping the shift that maximizes the variance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import uniform_filter1d

from .errors import EdgeError, MotionGateError
from .recovery import CirSeries
from .search import SearchSpec, pick_nearest_zero

log = logging.getLogger(__name__)


@dataclass
class AlignmentResult:
    """Selected tap, fractional shift and the aligned motion signal.

    Attributes
    ----------
    tap_index : int
        Integer tap with the largest variance (n*).
    fractional_shift : float
        Variance-maximizing shift in taps.
    relative_delay_s : float
        (tap_index + fractional_shift) * Ts, relative to the dominant path.
    motion_signal : ndarray
        Aligned tap over time.
    variance_profile : ndarray
        Per-tap variance over ``profile_taps``.
    coherence : float
        |mean rotation|^2 of the motion term, from a circle fit.
    mean_pulse_gain : float
        Radius of the fitted circle.
    """

    tap_index: int
    fractional_shift: float
    relative_delay_s: float
    motion_signal: np.ndarray
    variance_profile: np.ndarray
    profile_taps: np.ndarray
    coherence: float
    mean_pulse_gain: float
    aligned_variance: float
    unaligned_variance: float
    shift_grid: np.ndarray = field(repr=False, default=None)
    shift_variance: np.ndarray = field(repr=False, default=None)
    interference: bool = False
    circle_centre: complex = 0j

    @property
    def position_taps(self):
        return self.tap_index + self.fractional_shift


def _smooth(x, width, axis):
    if width <= 1:
        return x
    return uniform_filter1d(x.real, width, axis=axis, mode="nearest") + 1j * uniform_filter1d(
        x.imag, width, axis=axis, mode="nearest"
    )


def smoothing_width(clean: CirSeries, smooth_s):
    """Moving-average length in frames for ``smooth_s`` seconds (1 = off)."""
    if not smooth_s or clean.n_frames < 2:
        return 1
    fs = 1.0 / float(np.median(np.diff(clean.timestamps)))
    return max(1, min(int(round(smooth_s * fs)), clean.n_frames // 2))


def tap_variance_profile(clean: CirSeries, window=None, width=1):
    """Mean-removed complex sample variance E|x - mean(x)|^2 of every tap.

    ``window`` is an optional slice (or index array) over frames. With
    ``width`` > 1 each tap is first smoothed by a moving average of that
    many frames, which keeps slow motion and drops most wideband noise.
    """
    taps = clean.taps if window is None else clean.taps[:, window]
    if taps.shape[1] < 2:
        raise ValueError("variance needs at least two frames")
    return np.var(_smooth(taps, width, 1), axis=1)


def fit_circle(z):
    """Algebraic (Kasa) least-squares circle through complex points.

    Returns (centre, radius). Falls back to the mean and RMS spread when
    the points are collinear.
    """
    z = np.asarray(z, dtype=complex)
    x, y = z.real, z.imag
    mx, my = x.mean(), y.mean()
    u, v = x - mx, y - my
    A = np.column_stack([2 * u, 2 * v, np.ones_like(u)])
    b = u**2 + v**2
    sol, *_ = np.linalg.lstsq(A, b, rcond=None)
    cond = np.linalg.cond(A) if len(u) >= 3 else np.inf
    if not np.isfinite(cond) or cond > 1e10:
        return complex(mx, my), float(np.sqrt(np.mean(b)))
    a, c, d = sol
    r2 = d + a**2 + c**2
    return complex(mx + a, my + c), float(np.sqrt(max(r2, 0.0)))


def _coherence(signal):
    centre, radius = fit_circle(signal)
    z = signal - centre
    mag = np.abs(z)
    if radius == 0 or not np.all(mag > 0):
        return 1.0, radius, centre
    return float(np.abs(np.mean(z / mag)) ** 2), radius, centre


def _candidate_range(clean, spec):
    lo, hi = spec.candidate_taps
    tap_lo = clean.tap_offset
    tap_hi = clean.tap_offset + clean.taps.shape[0] - 1
    lo, hi = max(lo, tap_lo), min(hi, tap_hi)
    return np.arange(lo, hi + 1)


def _shifted_tap_variance(clean, n, shifts, width=1):
    """Variance of tap ``n`` re-recovered after shifting the frames by each of ``shifts``."""
    op = clean.op
    A = clean.frames.values * op.row(n)
    V = A @ np.exp(1j * np.outer(op.omega, shifts))
    return np.var(_smooth(V, width, 0), axis=0)


def _shifted_tap(clean, n, shift):
    op = clean.op
    return (clean.frames.values * op.row(n)) @ np.exp(1j * op.omega * shift)


def _gate(profile, spec):
    """Motion-presence check on a candidate-range variance profile."""
    peak = float(np.max(profile))
    median = float(np.median(profile))
    if peak < spec.min_variance or peak < spec.gate_ratio * median:
        raise MotionGateError(
            f"max tap variance {peak:.3g} is below {spec.gate_ratio:g}x the median {median:.3g} "
            f"or the floor {spec.min_variance:.1g}"
        )
    return median


def _align_at(clean, n_star, spec, profile, cand, width=1):
    ts = clean.op.cfg.sample_interval_s
    coarse = spec.coarse_grid()
    vc = _shifted_tap_variance(clean, n_star, coarse, width)
    c_best = float(pick_nearest_zero(vc, coarse))
    fine = np.round(c_best + spec.fine_grid(), 12)
    vf = _shifted_tap_variance(clean, n_star, fine, width)
    shift = float(pick_nearest_zero(vf, fine))
    signal = _shifted_tap(clean, n_star, shift)
    coh, radius, centre = _coherence(signal)
    grid = np.concatenate([coarse, fine])
    var = np.concatenate([vc, vf])
    order = np.argsort(grid, kind="stable")
    return AlignmentResult(
        tap_index=int(n_star),
        fractional_shift=shift,
        relative_delay_s=(n_star + shift) * ts,
        motion_signal=signal,
        variance_profile=profile,
        profile_taps=cand,
        coherence=coh,
        mean_pulse_gain=radius,
        aligned_variance=float(np.var(signal)),
        unaligned_variance=float(np.var(clean.tap(n_star))),
        shift_grid=grid[order],
        shift_variance=var[order],
        circle_centre=centre,
    )


def _require_frames(clean):
    if clean.frames is None or clean.op is None:
        raise ValueError("alignment needs the clean CSI frames and the recovery operator")


def align_dynamic(clean: CirSeries, spec: SearchSpec | None = None, refine=True, smooth_s=None) -> AlignmentResult:
    """Pick the max-variance tap and refine its delay by a coarse-to-fine shift search.

    With ``refine=False`` the integer tap is returned unshifted. ``smooth_s``
    applies a moving average of that length before every variance (profile,
    gate and shift search); the returned motion signal stays unsmoothed.

    Raises
    ------
    MotionGateError
        No tap stands out from the median by ``spec.gate_ratio``.
    EdgeError
        The selected tap is on the candidate range boundary.
    """
    spec = spec or SearchSpec()
    _require_frames(clean)
    width = smoothing_width(clean, smooth_s)
    cand = _candidate_range(clean, spec)
    profile = tap_variance_profile(clean, width=width)[cand - clean.tap_offset]
    _gate(profile, spec)
    n_star = int(cand[int(np.argmax(profile))])  # argmax takes the lower tap on ties
    if n_star in (cand[0], cand[-1]):
        raise EdgeError(f"max-variance tap {n_star} sits on the candidate range boundary")
    if not refine:
        return _unrefined(clean, n_star, profile, cand)
    return _align_at(clean, n_star, spec, profile, cand, width)


def _unrefined(clean, n_star, profile, cand):
    signal = clean.tap(n_star).copy()
    coh, radius, centre = _coherence(signal)
    var = float(np.var(signal))
    return AlignmentResult(
        int(n_star), 0.0, n_star * clean.op.cfg.sample_interval_s, signal, profile, cand,
        coh, radius, var, var, np.zeros(1), np.array([var]), circle_centre=centre,
    )


def align_multi(
    clean: CirSeries,
    spec: SearchSpec | None = None,
    max_targets: int = 2,
    shoulder_ratio: float = 0.1,
    min_separation_taps: float = 2.0,
    smooth_s=None,
) -> list:
    """Align up to ``max_targets`` dynamic paths.

    Candidates are local maxima of the variance profile (a +-1 tap
    neighbourhood) that pass the motion gate, taken in descending variance.
    Two targets closer than ``min_separation_taps`` are flagged
    ``interference``. A second target sitting right next to the first does
    not produce its own local maximum, so after each alignment the variance
    one tap either side of the aligned position is checked as well: for a
    lone path it is close to zero, because the recovery pulse vanishes at
    integer offsets.
    """
    if max_targets < 1:
        raise ValueError("max_targets must be at least 1")
    spec = spec or SearchSpec()
    _require_frames(clean)
    width = smoothing_width(clean, smooth_s)
    cand = _candidate_range(clean, spec)
    profile = tap_variance_profile(clean, width=width)[cand - clean.tap_offset]
    floor = _gate(profile, spec)
    threshold = max(spec.gate_ratio * floor, spec.min_variance)

    inner = np.arange(1, len(cand) - 1)
    is_peak = (profile[inner] >= profile[inner - 1]) & (profile[inner] > profile[inner + 1])
    peaks = inner[is_peak & (profile[inner] >= threshold)]
    peaks = peaks[np.argsort(-profile[peaks], kind="stable")]

    results = []
    for i in peaks:
        if len(results) >= max_targets:
            break
        res = _align_at(clean, int(cand[i]), spec, profile, cand, width)
        if any(abs(res.position_taps - r.position_taps) < 0.5 for r in results):
            continue
        results.append(res)
        side = _shifted_tap_variance(clean, res.tap_index, res.fractional_shift + np.array([-1.0, 1.0]), width)
        k = int(np.argmax(side))
        if side[k] >= shoulder_ratio * res.shift_variance.max() and side[k] >= threshold:
            res.interference = True
            n_nb = res.tap_index + (-1 if k == 0 else 1)
            if len(results) < max_targets and cand[0] < n_nb < cand[-1]:
                nb = _align_at(clean, n_nb, spec, profile, cand, width)
                nb.interference = True
                if abs(nb.position_taps - res.position_taps) >= 0.5:
                    results.append(nb)

    for a in results:
        for b in results:
            if a is not b and abs(a.position_taps - b.position_taps) < min_separation_taps:
                a.interference = b.interference = True
    results.sort(key=lambda r: -r.aligned_variance)
    return results
