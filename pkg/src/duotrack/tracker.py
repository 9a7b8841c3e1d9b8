"""Online tracking state machine: predict, associate, update, spawn, kill.

One Tracker instance handles one video sequence.  Motion prediction is
pluggable: the learned predictor, a Kalman filter, or no motion at all.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass

from . import baselines
from .assignment import cost_matrix, hungarian
from .geometry import BBox, decode_offset
from .predictor import MotionPredictor, window_from_boxes


class TrackState(enum.Enum):
    ACTIVE = "active"
    LOST = "lost"
    REMOVED = "removed"


@dataclass
class Observation:
    frame: int
    box: BBox
    pseudo: bool  # True when the box is the track's own prediction


class Track:
    def __init__(self, track_id: int, frame: int, box: BBox, capacity: int):
        self.id = track_id
        self.capacity = capacity
        self.history: list[Observation] = [Observation(frame, box, False)]
        self.state = TrackState.ACTIVE
        self.age = 0  # consecutive frames without a matched detection
        self.predicted: BBox = box  # box expected in the next frame
        self.motion = None  # opaque slot for predictor-owned state

    def append(self, frame: int, box: BBox, pseudo: bool):
        if self.history and frame <= self.history[-1].frame:
            raise ValueError(
                f"track {self.id}: frame {frame} not after {self.history[-1].frame}")
        self.history.append(Observation(frame, box, pseudo))
        if len(self.history) > self.capacity:
            self.history = self.history[-self.capacity:]

    def drop_trailing_pseudo(self):
        while len(self.history) > 1 and self.history[-1].pseudo:
            self.history.pop()

    @property
    def last_box(self) -> BBox:
        return self.history[-1].box


# ---------------------------------------------------------------------------
# motion predictor adapters
# ---------------------------------------------------------------------------

class NoMotionAdapter:
    """The next box is the last box."""

    def predict(self, track: Track) -> BBox:
        return baselines.no_motion_predict(track.last_box)


class KalmanAdapter:
    """SORT-style constant-velocity filter, one state per track.

    Called once at the end of each frame: ingest the new real observation
    (if any), then advance one step and report the prior box.
    """

    def predict(self, track: Track) -> BBox:
        last = track.history[-1]
        if track.motion is None:
            track.motion = baselines.kf_init(last.box)
        elif not last.pseudo:
            track.motion = baselines.kf_update(track.motion, last.box)
        track.motion, box = baselines.kf_predict(track.motion)
        return box


class LearnedAdapter:
    """Windowed learned predictor with a no-motion fallback for 1-long tracks."""

    def __init__(self, model: MotionPredictor):
        self.model = model

    def predict(self, track: Track) -> BBox:
        boxes = [o.box for o in track.history[-self.model.config.n_past:]]
        if len(boxes) < 2:
            return boxes[-1]
        window = window_from_boxes(boxes)
        off = self.model.predict_offset(window)
        return decode_offset(window.base_box, off)


# ---------------------------------------------------------------------------
# tracker
# ---------------------------------------------------------------------------

@dataclass
class TrackerConfig:
    iou_gate: float = 0.3
    t_max: int = 30
    spawn_conf: float = 0.6
    n_past: int = 10
    purge_pseudo_on_rematch: bool = False


@dataclass
class Detection:
    box: BBox
    conf: float


class Tracker:
    def __init__(self, predictor, config: TrackerConfig | None = None,
                 diag_stream=None):
        self.predictor = predictor
        self.config = config or TrackerConfig()
        self.tracks: list[Track] = []
        self._next_id = 1
        self._last_frame = None
        self._diag = diag_stream

    def step(self, frame: int, detections: list[Detection]) -> list[tuple[int, BBox]]:
        """Process one frame; returns (track_id, box) for tracks matched now."""
        if self._last_frame is not None and frame <= self._last_frame:
            raise ValueError(f"frames out of order: {frame} after {self._last_frame}")
        self._last_frame = frame
        cfg = self.config

        predicted = [t.predicted for t in self.tracks]
        det_boxes = [d.box for d in detections]
        costs = cost_matrix(predicted, det_boxes)
        result = hungarian(costs, gate=cfg.iou_gate)
        seen = set()
        for _, j in result.matches:
            if j in seen:
                raise ValueError(f"detection {j} assigned twice")
            seen.add(j)

        outputs = []
        for ti, dj in result.matches:
            track = self.tracks[ti]
            if track.state == TrackState.LOST and cfg.purge_pseudo_on_rematch:
                track.drop_trailing_pseudo()
            track.append(frame, detections[dj].box, pseudo=False)
            track.state = TrackState.ACTIVE
            track.age = 0
            outputs.append((track.id, detections[dj].box))

        for ti in result.unmatched_tracks:
            track = self.tracks[ti]
            track.age += 1
            track.state = TrackState.LOST
            # keep the window advancing through the occlusion
            track.append(frame, track.predicted, pseudo=True)

        for dj in result.unmatched_detections:
            det = detections[dj]
            if det.conf >= cfg.spawn_conf:
                track = Track(self._next_id, frame, det.box, cfg.n_past)
                self._next_id += 1
                self.tracks.append(track)
                outputs.append((track.id, det.box))

        self.tracks = [t for t in self.tracks
                       if not (t.state == TrackState.LOST and t.age >= cfg.t_max)]

        for track in self.tracks:
            track.predicted = self.predictor.predict(track)

        if self._diag is not None:
            self._diag.write(json.dumps({
                "frame": frame,
                "n_tracks": len(self.tracks),
                "n_detections": len(detections),
                "matches": [[i, j] for i, j in result.matches],
                "unmatched_tracks": result.unmatched_tracks,
                "unmatched_detections": result.unmatched_detections,
                "cost_min": float(costs.min()) if costs.size else None,
            }) + "\n")
        return outputs
