"""Dominant-path alignment and ratio normalization (hardware distortion removal).

Each frame is shifted so the strongest path lands on tap 0, then every tap
is divided by the aligned tap 0. Magnitude gain, common phase and common
delay shift are shared by all paths, so they cancel in the ratio; what
remains varies only with the scene.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .channel_model import CsiSeries
from .errors import DominoError
from .recovery import CirSeries, PartialDftOperator, recover_cir
from .search import SearchSpec, pick_nearest_zero

log = logging.getLogger(__name__)


@dataclass
class DominoResult:
    """Output of :func:`align_dominant`.

    ``per_frame_shift`` follows the convention of the alignment objective:
    it is the tap offset at which tap 0 is read, i.e. minus the advance
    applied to the frame, and settles at ``-(tau0 + eps) / Ts``.
    """

    clean: CirSeries
    per_frame_shift: np.ndarray
    reference_tap_power: np.ndarray
    dominance_db: np.ndarray
    ambiguous: np.ndarray
    weak_reference: np.ndarray

    @property
    def n_ambiguous(self):
        return int(np.count_nonzero(self.ambiguous))


def _polish(a, omega, s, max_step, iters=8):
    """Newton iterations on |sum_k a_k exp(j w_k s)|^2, started at the grid optimum."""
    w1 = 1j * omega
    w2 = -(omega**2)
    for _ in range(iters):
        c = a * np.exp(1j * np.outer(s, omega))
        g = c.sum(axis=1)
        g1 = c @ w1
        g2 = c @ w2
        d1 = 2 * np.real(np.conj(g) * g1)
        d2 = 2 * np.real(np.abs(g1) ** 2 + np.conj(g) * g2)
        step = np.where(d2 < 0, -d1 / np.where(d2 < 0, d2, -1.0), 0.0)
        step = np.clip(step, -max_step, max_step)
        s = s + step
        if np.max(np.abs(step)) < 1e-13:
            break
    return s


def align_dominant(
    frames: CsiSeries,
    op: PartialDftOperator,
    search: SearchSpec | None = None,
    *,
    margin_db=3.0,
    weak_ratio=1e-4,
    polish=True,
    chunk=2048,
) -> DominoResult:
    """Cancel per-frame (beta, theta, eps) using the dominant static path.

    Parameters
    ----------
    frames : CsiSeries
        Raw CSI, one frame per row.
    op : PartialDftOperator
    search : SearchSpec, optional
        Coarse and fine steps for the tap-0 power search.
    margin_db : float
        Frames whose strongest tap beats the strongest tap outside its
        +-1 neighbourhood by less than this are flagged ``ambiguous``.
    weak_ratio : float
        Frames whose |aligned tap 0|^2 falls to ``weak_ratio`` times the
        median over all frames (a faded or blocked reference) are flagged
        ``weak_reference``.
    polish : bool
        Refine the fine-grid optimum with Newton steps. The grid alone leaves
        up to half a fine step of per-frame misalignment, which shows up as
        frame-to-frame jitter of the static taps.
    """
    search = search or SearchSpec()
    cfg = frames.cfg
    n_frames = len(frames)
    if n_frames == 0:
        raise DominoError("no frames")
    omega = op.omega
    taps_idx = op.tap_indices
    r0 = op.row(0)
    row0 = op.tap_row(0)
    coarse = search.coarse_grid()
    fine = search.fine_grid()
    e_coarse = np.exp(1j * np.outer(omega, coarse))
    e_fine = np.exp(1j * np.outer(omega, fine))

    shift = np.empty(n_frames)
    ref_power = np.empty(n_frames)
    dominance = np.empty(n_frames)
    clean_values = np.empty_like(frames.values)
    clean_taps = np.empty((len(taps_idx), n_frames), dtype=complex)
    idx = np.arange(len(taps_idx))

    for start in range(0, n_frames, chunk):
        sl = slice(start, min(start + chunk, n_frames))
        H = frames.values[sl]
        power = np.abs(H @ op.pinv.T) ** 2
        i0 = np.argmax(power, axis=1)
        p0 = power[np.arange(len(i0)), i0]
        far = np.abs(idx[None, :] - i0[:, None]) > 1
        runner = np.max(np.where(far, power, 0.0), axis=1)
        with np.errstate(divide="ignore"):
            dominance[sl] = 10 * np.log10(p0 / np.maximum(runner, 1e-300))

        a = H * r0
        n0 = taps_idx[i0].astype(float)
        centre = n0 + pick_nearest_zero(np.abs((a * np.exp(1j * np.outer(n0, omega))) @ e_coarse) ** 2, coarse)
        s = centre + pick_nearest_zero(np.abs((a * np.exp(1j * np.outer(centre, omega))) @ e_fine) ** 2, fine)
        if polish:
            s = _polish(a, omega, s, search.fine_step_taps)

        Hs = H * np.exp(1j * np.outer(s, omega))
        ref = Hs @ r0
        safe = np.where(ref == 0, 1.0, ref)
        cv = Hs / safe[:, None]
        cv[ref == 0] = 0.0
        clean_values[sl] = cv
        ct = op.pinv @ cv.T
        ct[row0] = 1.0
        clean_taps[:, sl] = ct
        shift[sl] = -s
        ref_power[sl] = np.abs(ref) ** 2

    weak = (ref_power == 0) | (ref_power <= weak_ratio * np.median(ref_power))
    if weak.all():
        raise DominoError("reference tap vanishes in every frame")
    ambiguous = dominance < margin_db
    if ambiguous.any():
        log.warning("dominant path ambiguous in %d of %d frames", ambiguous.sum(), n_frames)
    if weak.any():
        log.warning("weak reference tap in %d of %d frames", weak.sum(), n_frames)

    clean_frames = CsiSeries(cfg, frames.timestamps, clean_values)
    clean = CirSeries(op.tap_offset, clean_taps, frames.timestamps.copy(), clean_frames, op)
    return DominoResult(clean, shift, ref_power, dominance, ambiguous, weak)


def passthrough(frames: CsiSeries, op: PartialDftOperator) -> CirSeries:
    """Recovered taps without distortion compensation (stage disabled)."""
    return recover_cir(op, frames)
