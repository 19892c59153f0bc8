import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cirsense.channel_model import CsiSeries, DistortionPolicy, PathSpec, synth_scene
from cirsense.domino import align_dominant, passthrough
from cirsense.errors import DominoError
from cirsense.search import SearchSpec

from conftest import CFG, LOS, TS, breathing_scene

STATIC = [PathSpec(1.0, LOS), PathSpec(0.25 - 0.1j, LOS + 4.4 * TS), PathSpec(0.05j, LOS + 11.7 * TS)]


def static_scene(seed, n=200, policy=None):
    return synth_scene(CFG, STATIC, [], 100, n / 100, policy or DistortionPolicy(), 0.0, seed=seed)


def test_static_scene_is_frame_invariant(op):
    frames, _ = static_scene(1)
    res = align_dominant(frames, op)
    taps = res.clean.taps
    mean = taps.mean(axis=1, keepdims=True)
    strong = np.abs(mean[:, 0]) > 1e-3
    cv = np.abs(taps - mean).max(axis=1)[strong] / np.abs(mean[strong, 0])
    assert cv.max() < 1e-9
    np.testing.assert_array_equal(res.clean.tap(0), 1.0)


def test_independent_distortions_give_same_clean_series(op):
    a = align_dominant(static_scene(1)[0], op).clean.taps
    b = align_dominant(static_scene(2)[0], op).clean.taps
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-10 * np.abs(a).max())


def test_per_frame_shift_tracks_delay_distortion(op):
    frames, gt = static_scene(4)
    res = align_dominant(frames, op)
    track = res.per_frame_shift + gt.distortions.eps_s / TS
    assert np.ptp(track) < 1e-9
    assert not res.ambiguous.any() and not res.weak_reference.any()


def test_identity_distortion_matches_plain_ratio(op):
    frames, _ = static_scene(0, n=10, policy=DistortionPolicy.identity())
    res = align_dominant(frames, op)
    raw = passthrough(frames, op)
    np.testing.assert_allclose(res.per_frame_shift, res.per_frame_shift[0], atol=1e-12)
    # identical frames: every clean frame equals the first
    np.testing.assert_allclose(res.clean.taps, res.clean.taps[:, :1] * np.ones((1, 10)), atol=1e-12)
    assert raw.taps.shape == res.clean.taps.shape


def test_grid_only_leaves_jitter_that_polish_removes(op):
    frames, _ = static_scene(5)
    coarse = align_dominant(frames, op, polish=False).clean.taps
    fine = align_dominant(frames, op).clean.taps
    jitter = lambda t: np.abs(t - t.mean(axis=1, keepdims=True)).max()
    assert jitter(fine) < 1e-9 < jitter(coarse)


def test_ambiguous_dominance_is_flagged(op):
    paths = [PathSpec(1.0, LOS), PathSpec(0.95, LOS + 6 * TS)]
    frames, _ = synth_scene(CFG, paths, [], 100, 0.2, DistortionPolicy(), 0.0, seed=0)
    res = align_dominant(frames, op)
    assert res.ambiguous.all()
    assert np.all(res.dominance_db < 3.0)


def test_weak_reference_is_flagged(op):
    frames, _ = static_scene(0, n=5)
    vals = frames.values.copy()
    vals[2] *= 1e-3
    res = align_dominant(CsiSeries(CFG, frames.timestamps, vals), op)
    assert res.weak_reference[2] and res.weak_reference.sum() == 1


def test_all_zero_frames_raise(op):
    with pytest.raises(DominoError):
        align_dominant(CsiSeries(CFG, np.arange(3.0), np.zeros((3, 496))), op)
    with pytest.raises(DominoError):
        align_dominant(CsiSeries(CFG, np.zeros(0), np.zeros((0, 496))), op)


def test_dynamic_scene_preserves_motion_tap(op):
    frames, gt = breathing_scene(3.0, duration_s=5, seed=3)
    res = align_dominant(frames, op)
    var = np.var(res.clean.taps, axis=1)
    assert CFG.tap_set[int(np.argmax(var))] == 3


@given(st.floats(0.1, 10.0), st.floats(-np.pi, np.pi))
def test_common_complex_scale_cancels(mag, phase):
    op = __import__("cirsense.recovery", fromlist=["build_operator"]).build_operator(CFG)
    frames, _ = static_scene(7, n=20)
    scaled = CsiSeries(CFG, frames.timestamps, frames.values * mag * np.exp(1j * phase))
    a = align_dominant(frames, op).clean.taps
    b = align_dominant(scaled, op).clean.taps
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_chunking_does_not_change_output(op):
    frames, _ = static_scene(8, n=50)
    a = align_dominant(frames, op, chunk=7)
    b = align_dominant(frames, op)
    np.testing.assert_allclose(a.per_frame_shift, b.per_frame_shift, rtol=0, atol=1e-13)
    np.testing.assert_allclose(a.clean.taps, b.clean.taps, rtol=0, atol=1e-12)


def test_search_spec_validation():
    from cirsense.errors import ConfigError

    with pytest.raises(ConfigError):
        SearchSpec(coarse_step_taps=0.01, fine_step_taps=0.05)
    with pytest.raises(ConfigError):
        SearchSpec(candidate_taps=(3, 4))
    assert len(SearchSpec().coarse_grid()) == 23
    assert len(SearchSpec().fine_grid()) == 21
