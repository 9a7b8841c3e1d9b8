import io
import json

import numpy as np
import pytest

from duotrack.geometry import BBox
from duotrack.predictor import MotionPredictor, PredictorConfig
from duotrack.tracker import (Detection, KalmanAdapter, LearnedAdapter,
                              NoMotionAdapter, Track, TrackerConfig, Tracker,
                              TrackState)


def det(cx, cy, w=0.1, h=0.1, conf=0.9):
    return Detection(BBox(cx, cy, w, h), conf)


def tiny_model():
    # untrained model: zero-init head means it predicts a zero offset
    return MotionPredictor(PredictorConfig(d_m=16, layers=1, heads=2, n_past=5),
                           seed=0)


class TestTrack:
    def test_capacity_window(self):
        t = Track(1, 0, BBox(0.5, 0.5, 0.1, 0.1), capacity=3)
        for f in range(1, 6):
            t.append(f, BBox(0.5, 0.5, 0.1, 0.1), pseudo=False)
        assert len(t.history) == 3
        assert [o.frame for o in t.history] == [3, 4, 5]

    def test_rejects_non_increasing_frames(self):
        t = Track(1, 5, BBox(0.5, 0.5, 0.1, 0.1), capacity=3)
        with pytest.raises(ValueError):
            t.append(5, BBox(0.5, 0.5, 0.1, 0.1), pseudo=False)

    def test_drop_trailing_pseudo(self):
        t = Track(1, 0, BBox(0.5, 0.5, 0.1, 0.1), capacity=10)
        t.append(1, BBox(0.5, 0.5, 0.1, 0.1), pseudo=True)
        t.append(2, BBox(0.5, 0.5, 0.1, 0.1), pseudo=True)
        t.drop_trailing_pseudo()
        assert len(t.history) == 1 and not t.history[0].pseudo


class TestAdapters:
    def test_no_motion_returns_last(self):
        t = Track(1, 0, BBox(0.3, 0.7, 0.1, 0.1), capacity=5)
        assert NoMotionAdapter().predict(t) == BBox(0.3, 0.7, 0.1, 0.1)

    def test_learned_single_obs_fallback(self):
        t = Track(1, 0, BBox(0.3, 0.7, 0.1, 0.1), capacity=5)
        assert LearnedAdapter(tiny_model()).predict(t) == BBox(0.3, 0.7, 0.1, 0.1)

    def test_learned_zero_head_predicts_last_box(self):
        t = Track(1, 0, BBox(0.3, 0.7, 0.1, 0.1), capacity=5)
        t.append(1, BBox(0.35, 0.7, 0.1, 0.1), pseudo=False)
        pred = LearnedAdapter(tiny_model()).predict(t)
        assert pred.cx == pytest.approx(0.35, abs=1e-12)
        assert pred.cy == pytest.approx(0.7, abs=1e-12)

    def test_kalman_learns_velocity(self):
        t = Track(1, 0, BBox(0.1, 0.5, 0.1, 0.1), capacity=10)
        adapter = KalmanAdapter()
        pred = adapter.predict(t)
        for f in range(1, 30):
            t.append(f, BBox(0.1 + 0.01 * f, 0.5, 0.1, 0.1), pseudo=False)
            pred = adapter.predict(t)
        assert pred.cx == pytest.approx(0.1 + 0.01 * 30, abs=1e-4)


class TestTracker:
    def test_single_track_no_switches(self):
        tracker = Tracker(NoMotionAdapter())
        ids = set()
        for f in range(100):
            out = tracker.step(f, [det(0.3 + 0.003 * f, 0.5)])
            assert len(out) == 1
            ids.add(out[0][0])
        assert ids == {1}

    def test_low_conf_does_not_spawn(self):
        tracker = Tracker(NoMotionAdapter())
        assert tracker.step(0, [det(0.5, 0.5, conf=0.5)]) == []
        assert tracker.tracks == []

    def test_spawn_at_threshold(self):
        tracker = Tracker(NoMotionAdapter())
        out = tracker.step(0, [det(0.5, 0.5, conf=0.6)])
        assert len(out) == 1

    def test_lost_then_removed_at_t_max(self):
        cfg = TrackerConfig(t_max=5)
        tracker = Tracker(NoMotionAdapter(), cfg)
        tracker.step(0, [det(0.5, 0.5)])
        for f in range(1, 5):
            tracker.step(f, [])
            assert tracker.tracks[0].state == TrackState.LOST
            assert tracker.tracks[0].age == f
        tracker.step(5, [])
        assert tracker.tracks == []

    def test_lost_track_rematches_same_id(self):
        tracker = Tracker(NoMotionAdapter(), TrackerConfig(t_max=30))
        tracker.step(0, [det(0.5, 0.5)])
        for f in range(1, 4):
            tracker.step(f, [])
        out = tracker.step(4, [det(0.5, 0.5)])
        assert out == [(1, BBox(0.5, 0.5, 0.1, 0.1))]
        assert tracker.tracks[0].state == TrackState.ACTIVE
        assert tracker.tracks[0].age == 0

    def test_pseudo_observations_fill_occlusion(self):
        tracker = Tracker(NoMotionAdapter())
        tracker.step(0, [det(0.5, 0.5)])
        tracker.step(1, [])
        hist = tracker.tracks[0].history
        assert [o.pseudo for o in hist] == [False, True]

    def test_purge_pseudo_on_rematch_flag(self):
        cfg = TrackerConfig(purge_pseudo_on_rematch=True)
        tracker = Tracker(NoMotionAdapter(), cfg)
        tracker.step(0, [det(0.5, 0.5)])
        tracker.step(1, [])
        tracker.step(2, [det(0.5, 0.5)])
        assert [o.pseudo for o in tracker.tracks[0].history] == [False, False]

    def test_out_of_order_frames_rejected(self):
        tracker = Tracker(NoMotionAdapter())
        tracker.step(3, [])
        with pytest.raises(ValueError):
            tracker.step(3, [])

    def test_two_targets_keep_ids(self):
        tracker = Tracker(NoMotionAdapter())
        for f in range(50):
            out = tracker.step(f, [det(0.2 + 0.002 * f, 0.3),
                                   det(0.8 - 0.002 * f, 0.7)])
            got = {tid: b.cy for tid, b in out}
            assert got == {1: 0.3, 2: 0.7}

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(9)
            tracker = Tracker(KalmanAdapter(), TrackerConfig())
            trace = []
            for f in range(40):
                dets = [det(0.2 + 0.005 * f + rng.normal(0, 0.004), 0.5),
                        det(0.7 - 0.005 * f + rng.normal(0, 0.004), 0.5)]
                trace.append(tracker.step(f, dets))
            return trace
        assert run() == run()

    def test_diag_stream_jsonl(self):
        buf = io.StringIO()
        tracker = Tracker(NoMotionAdapter(), diag_stream=buf)
        tracker.step(0, [det(0.5, 0.5)])
        tracker.step(1, [det(0.5, 0.5)])
        lines = [json.loads(l) for l in buf.getvalue().splitlines()]
        assert len(lines) == 2
        assert lines[1]["matches"] == [[0, 0]]
        assert lines[1]["n_tracks"] == 1

    def test_history_window_matches_n_past(self):
        tracker = Tracker(NoMotionAdapter(), TrackerConfig(n_past=4))
        for f in range(20):
            tracker.step(f, [det(0.5, 0.5)])
        assert len(tracker.tracks[0].history) == 4
