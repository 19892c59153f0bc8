import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cirsense.channel_model import (
    DistortionPolicy,
    MotionTrajectory,
    MovingPath,
    PathSpec,
    SystemConfig,
    synth_scene,
)
from cirsense.recovery import build_operator

settings.register_profile("ci", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ci")

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


CFG = SystemConfig()
TS = CFG.sample_interval_s
D0 = 0.6
LOS = D0 / CFG.light_speed_mps


@pytest.fixture(scope="session")
def cfg():
    return CFG


@pytest.fixture(scope="session")
def op():
    return build_operator(CFG)


def tap_noise_std(ssnr_db, gain, tap, cfg=CFG):
    """Per-component subcarrier noise std giving tap-domain SSNR ``ssnr_db``."""
    g = build_operator(cfg).noise_gain(tap)
    return abs(gain) / np.sqrt(2 * 10 ** (ssnr_db / 10) * g)


def breathing_scene(
    rel_taps,
    rate_hz=0.25,
    amplitude_m=0.005,
    gain=0.3,
    ssnr_db=None,
    fs=100.0,
    duration_s=20.0,
    distort=True,
    seed=0,
    extra_static=((0.1, 6.7),),
    cfg=CFG,
    phase_rad=0.0,
):
    """One breathing target at ``rel_taps`` taps behind the line-of-sight path."""
    ts = cfg.sample_interval_s
    los = D0 / cfg.light_speed_mps
    static = [PathSpec(1.0, los)] + [PathSpec(g, los + d * ts) for g, d in extra_static]
    tr = MotionTrajectory(
        kind="respiration", base_delay_s=los + rel_taps * ts, amplitude_m=amplitude_m, rate_hz=rate_hz, phase_rad=phase_rad
    )
    noise = 0.0 if ssnr_db is None else tap_noise_std(ssnr_db, gain, int(round(rel_taps)), cfg)
    return synth_scene(
        cfg,
        static,
        [MovingPath(tr, gain)],
        fs,
        duration_s,
        DistortionPolicy() if distort else None,
        noise,
        seed=seed,
        d0_m=D0,
    )
