import numpy as np
import pytest

from mcn.errors import DataError, EmptyVideoError
from mcn.features import (
    FeatureFlags,
    Modality,
    Video,
    VideoFeatures,
    build_context_input,
    candidate_inputs,
    context_input_width,
    pool_global,
    pool_local,
    sliding_windows,
    window_inputs,
)
from mcn.moments import Span, enumerate_candidates


def features(frames, frames_per_segment=1, modality=Modality.RGB, num_segments=0):
    return VideoFeatures("v", modality, np.asarray(frames, dtype=float), frames_per_segment, num_segments)


class TestPooling:

    def test_local_and_global(self):
        vf = features([[0.0], [2.0], [4.0], [6.0]], frames_per_segment=2)
        assert vf.num_segments == 2
        np.testing.assert_allclose(pool_local(vf, Span(1, 1)), [5.0])
        np.testing.assert_allclose(pool_global(vf), [3.0])

    def test_last_segment_takes_remainder(self):
        vf = features(np.arange(7.0)[:, None], frames_per_segment=2, num_segments=3)
        np.testing.assert_allclose(pool_local(vf, Span(2, 2)), [5.0])

    def test_whole_video_local_equals_global(self, rng):
        vf = features(rng.normal(size=(12, 3)), frames_per_segment=2)
        np.testing.assert_allclose(pool_local(vf, Span(0, 5)), pool_global(vf))

    def test_empty(self):
        with pytest.raises(EmptyVideoError):
            features(np.zeros((0, 3)))

    def test_not_finite(self):
        with pytest.raises(DataError, match="кадре 1"):
            features([[0.0], [np.nan]])


class TestContextInput:

    def test_layout(self):
        vf = features([[1.0, 1.0], [3.0, 3.0]])
        x = build_context_input(vf, Span(0, 0)).vector
        np.testing.assert_allclose(x, [1.0, 1.0, 2.0, 2.0, 0.0, 0.5])

    @pytest.mark.parametrize("use_global, use_tef", [(False, True), (True, False), (False, False)])
    def test_zero_fill_keeps_width(self, use_global, use_tef):
        vf = features(np.ones((6, 4)))
        flags = FeatureFlags(use_global=use_global, use_tef=use_tef)
        x = build_context_input(vf, Span(1, 2), flags).vector
        assert x.shape == (context_input_width(4, flags),) == (10,)

    def test_compact_drops_slices(self):
        vf = features(np.ones((6, 4)))
        flags = FeatureFlags(use_global=False, use_tef=True, layout="compact")
        x = build_context_input(vf, Span(1, 2), flags).vector
        assert x.shape == (context_input_width(4, flags),) == (6,)

    def test_candidate_rows(self, rng):
        vf = features(rng.normal(size=(6, 3)))
        spans = enumerate_candidates(6)
        rows = candidate_inputs(vf, spans)
        assert rows.shape == (21, 8)
        np.testing.assert_allclose(rows[4], build_context_input(vf, spans[4]).vector)


class TestResegment:

    def test_with_segments(self):
        vf = features(np.arange(12.0)[:, None], frames_per_segment=2)
        five = vf.with_segments(5)
        assert five.num_segments == 5 and five.frames_per_segment == 2
        np.testing.assert_allclose(pool_local(five, Span(4, 4)), [9.5])

    def test_modalities_disagree(self):
        rgb = features(np.ones((6, 2)))
        flow = features(np.ones((5, 2)), modality=Modality.FLOW)
        with pytest.raises(DataError, match="разное число сегментов"):
            Video("v", rgb=rgb, flow=flow)


class TestWindows:

    def test_enumeration(self):
        vf = features(np.arange(10.0)[:, None])
        windows = sliding_windows(vf, window_frames=4, stride_frames=3)
        assert [w.start_frame for w in windows] == [0, 3, 6]
        np.testing.assert_allclose(windows[1].local, [4.5])

    @pytest.mark.parametrize("total, window, stride", [(30, 6, 1), (30, 7, 4), (12, 12, 1)])
    def test_count(self, total, window, stride):
        vf = features(np.zeros((total, 2)))
        assert len(sliding_windows(vf, window, stride)) == (total - window) // stride + 1

    def test_full_window_is_global(self, rng):
        vf = features(rng.normal(size=(8, 3)))
        windows = sliding_windows(vf, 8, 1)
        assert len(windows) == 1
        np.testing.assert_allclose(windows[0].local, pool_global(vf))
        assert windows[0].tef == (0.0, 1.0)

    def test_longer_than_video(self):
        vf = features(np.zeros((5, 2)))
        assert len(sliding_windows(vf, 9, 1)) == 1

    def test_constant_frames_give_equal_inputs(self):
        vf = features(np.ones((10, 3)))
        flags = FeatureFlags(use_tef=False)
        rows = window_inputs(vf, sliding_windows(vf, 3, 2), flags)
        np.testing.assert_allclose(rows, np.broadcast_to(rows[0], rows.shape))
