"""Least-squares CIR recovery from partial-subcarrier CSI and delay shifting."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg

from .channel_model import CsiSeries, SystemConfig
from .errors import RankDeficiencyError

MAX_CONDITION = 1e8
SHIFT_GUARD_TAPS = 20.0


@dataclass(frozen=True, eq=False)
class PartialDftOperator:
    """Rows of the unitary DFT on the active subcarriers, columns on the tap set.

    ``matrix[k, n] = exp(-2j*pi*k*n/N) / sqrt(N)``; ``pinv`` is the cached LS
    solution operator ``(F^H F)^-1 F^H``.
    """

    cfg: SystemConfig
    matrix: np.ndarray
    pinv: np.ndarray
    condition: float
    omega: np.ndarray = field(repr=False)

    @property
    def tap_offset(self):
        return self.cfg.tap_set[0]

    @property
    def tap_indices(self):
        return self.cfg.taps

    def tap_row(self, n):
        """Row index in ``pinv`` of tap index ``n``."""
        i = int(n) - self.tap_offset
        if not 0 <= i < self.pinv.shape[0]:
            raise IndexError(f"tap {n} outside the tap set")
        return i

    def row(self, n):
        return self.pinv[self.tap_row(n)]

    def forward(self, taps):
        """Map tap vectors (|L| x T) to CSI columns (|K| x T)."""
        return self.matrix @ taps

    def noise_gain(self, n=None):
        """Per-tap noise power for unit per-subcarrier noise power."""
        g = np.sum(np.abs(self.pinv) ** 2, axis=1)
        return g if n is None else g[self.tap_row(n)]

    def pulse(self, n, x):
        """Tap ``n`` response to a unit path at (possibly fractional) tap position ``x``.

        This is the delay-domain pulse the LS recovery implicitly realizes
        for a flat pulse spectrum, without the carrier phase term.
        """
        x = np.atleast_1d(np.asarray(x, dtype=float))
        v = np.exp(-1j * np.outer(x, self.omega)) / np.sqrt(self.cfg.dft_size)
        out = v @ self.row(n)
        return out if out.size > 1 else out[0]


@lru_cache(maxsize=16)
def build_operator(cfg: SystemConfig) -> PartialDftOperator:
    k = cfg.subcarriers
    n = cfg.taps.astype(float)
    if len(n) > len(k):
        raise RankDeficiencyError(f"{len(n)} taps cannot be resolved from {len(k)} subcarriers")
    omega = 2 * np.pi * k / cfg.dft_size
    F = np.exp(-1j * np.outer(omega, n)) / np.sqrt(cfg.dft_size)
    gram = F.conj().T @ F
    cond = float(np.linalg.cond(gram))
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise RankDeficiencyError(f"F^H F condition number {cond:.3g} exceeds {MAX_CONDITION:.0e}")
    factor = scipy.linalg.cho_factor(gram)
    pinv = scipy.linalg.cho_solve(factor, F.conj().T)
    for a in (F, pinv, omega):
        a.setflags(write=False)
    return PartialDftOperator(cfg, F, pinv, cond, omega)


@dataclass
class CirSeries:
    """Recovered taps, one column per frame.

    ``taps[i, t]`` is tap index ``tap_offset + i`` at ``timestamps[t]``.
    ``frames`` keeps the CSI the taps were recovered from so later stages
    can re-recover after a frequency-domain shift.
    """

    tap_offset: int
    taps: np.ndarray
    timestamps: np.ndarray
    frames: CsiSeries | None = None
    op: PartialDftOperator | None = None

    def __post_init__(self):
        if self.taps.shape[1] != len(self.timestamps):
            raise ValueError("column count must equal the number of timestamps")

    @property
    def n_frames(self):
        return self.taps.shape[1]

    @property
    def tap_indices(self):
        return np.arange(self.tap_offset, self.tap_offset + self.taps.shape[0])

    def tap(self, n):
        return self.taps[int(n) - self.tap_offset]

    def window(self, sl):
        frames = self.frames[sl] if self.frames is not None else None
        return CirSeries(self.tap_offset, self.taps[:, sl], self.timestamps[sl], frames, self.op)


def recover_cir(op: PartialDftOperator, frames: CsiSeries) -> CirSeries:
    if frames.values.shape[1] != op.matrix.shape[0]:
        raise ValueError(f"frame length {frames.values.shape[1]} != operator rows {op.matrix.shape[0]}")
    taps = op.pinv @ frames.values.T
    return CirSeries(op.tap_offset, taps, frames.timestamps.copy(), frames, op)


def shift_phasor(cfg, shift_taps):
    """exp(+2j*pi*k*shift/N); scalar shift -> (K,), per-frame shifts -> (T, K)."""
    s = np.asarray(shift_taps, dtype=float)
    omega = 2 * np.pi * cfg.subcarriers / cfg.dft_size
    if s.ndim == 0:
        return np.exp(1j * omega * s)
    return np.exp(1j * np.outer(s, omega))


def delay_shift(frames: CsiSeries, shift_taps) -> CsiSeries:
    """Advance every path by ``shift_taps`` taps (scalar or one value per frame).

    A path at tap position x appears at x - shift after the operation.
    """
    s = np.asarray(shift_taps, dtype=float)
    if np.any(np.abs(s) > SHIFT_GUARD_TAPS):
        raise ValueError(f"|shift| must not exceed the {SHIFT_GUARD_TAPS:g}-tap guard")
    if s.ndim == 1 and len(s) != len(frames):
        raise ValueError("per-frame shift needs one value per frame")
    return CsiSeries(frames.cfg, frames.timestamps, frames.values * shift_phasor(frames.cfg, s))


def zero_filled_idft(frames: CsiSeries) -> CirSeries:
    """Naive CIR: missing subcarriers set to zero, unitary inverse DFT, taps cut to the tap set."""
    cfg = frames.cfg
    n = cfg.dft_size
    full = np.zeros((len(frames), n), dtype=complex)
    full[:, np.mod(np.asarray(cfg.active_subcarriers), n)] = frames.values
    cir = np.fft.ifft(full, axis=1) * np.sqrt(n)
    taps = cir[:, np.mod(cfg.taps, n)].T
    return CirSeries(cfg.tap_set[0], taps, frames.timestamps.copy(), frames, None)
