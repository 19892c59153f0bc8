"""Coarse-to-fine shift grids shared by the two alignment stages."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class SearchSpec:
    """Fractional-shift search settings, all in taps.

    The coarse grid covers ``[-(span + guard), span + guard]``; ``guard``
    defaults to one coarse step so a path sitting just past half a tap from
    the selected tap is still reachable.
    """

    coarse_step_taps: float = 1 / 20
    fine_step_taps: float = 1 / 200
    span_taps: float = 0.5
    guard_taps: float | None = None
    candidate_taps: tuple = (0, 50)
    gate_ratio: float = 10.0
    min_variance: float = 1e-18

    def __post_init__(self):
        if not 0 < self.fine_step_taps < self.coarse_step_taps <= self.span_taps:
            raise ConfigError("need 0 < fine_step < coarse_step <= span", field="search")
        lo, hi = self.candidate_taps
        if hi - lo < 2:
            raise ConfigError("candidate range needs at least three taps", field="search.candidate_taps")

    @property
    def guard(self):
        return self.coarse_step_taps if self.guard_taps is None else self.guard_taps

    def coarse_grid(self):
        return grid_offsets(self.coarse_step_taps, self.span_taps + self.guard)

    def fine_grid(self):
        return grid_offsets(self.fine_step_taps, self.coarse_step_taps)


def grid_offsets(step, half_width):
    k = int(round(half_width / step))
    return np.round(step * np.arange(-k, k + 1), 12)


def pick_nearest_zero(values, offsets):
    """Argmax along the last axis with ties going to the smallest |offset|.

    Returns the winning offsets (same leading shape as ``values``).
    """
    order = np.lexsort((offsets, np.abs(offsets)))
    best = np.argmax(values[..., order], axis=-1)
    return offsets[order][best]
