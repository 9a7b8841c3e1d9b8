"""MOTChallenge-format ingestion/emission, synthetic scene generation,
training-window extraction, and the training augmentations.

File conventions per sequence directory:
    gt.txt       ground-truth rows "frame,id,bb_left,bb_top,w,h,conf,x,y,z"
    det.txt      detection rows, id = -1
    seqmeta.txt  key=value lines: name, width, height, fps
Pixel boxes are normalized by width/height on load.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import BBox, Offset4, encode_offset
from .predictor import TrajectoryWindow, window_from_boxes


@dataclass
class SceneDetection:
    box: BBox  # normalized
    conf: float
    gt_id: int | None = None


@dataclass
class Scene:
    name: str
    width: int
    height: int
    fps: float
    frames: dict[int, list[SceneDetection]] = field(default_factory=dict)

    def add(self, frame: int, det: SceneDetection):
        self.frames.setdefault(frame, []).append(det)

    def n_frames(self) -> int:
        return max(self.frames) if self.frames else 0

    def total_boxes(self) -> int:
        return sum(len(v) for v in self.frames.values())


# ---------------------------------------------------------------------------
# MOT text i/o
# ---------------------------------------------------------------------------

def read_meta(seq_dir) -> dict:
    path = Path(seq_dir) / "seqmeta.txt"
    if not path.exists():
        raise FileNotFoundError(f"missing sequence metadata: {path}")
    meta = {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        meta[key.strip()] = value.strip()
    for key in ("width", "height"):
        if key not in meta:
            raise ValueError(f"metadata {path} lacks '{key}'")
    return {
        "name": meta.get("name", Path(seq_dir).name),
        "width": int(meta["width"]),
        "height": int(meta["height"]),
        "fps": float(meta.get("fps", 25)),
    }


def write_meta(seq_dir, name: str, width: int, height: int, fps: float):
    path = Path(seq_dir) / "seqmeta.txt"
    path.write_text(f"name={name}\nwidth={width}\nheight={height}\nfps={fps:g}\n")


def parse_mot(path, width: int, height: int, name: str = "", fps: float = 25.0) -> Scene:
    """Parse MOTChallenge CSV rows into a normalized Scene."""
    scene = Scene(name or Path(path).stem, width, height, fps)
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) < 7:
                raise ValueError(f"{path}:{lineno}: expected >= 7 fields, got {len(parts)}")
            try:
                frame = int(parts[0])
                obj_id = int(parts[1])
                left, top, w, h = (float(v) for v in parts[2:6])
                conf = float(parts[6])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: malformed row: {line!r}") from exc
            if frame < 1:
                raise ValueError(f"{path}:{lineno}: frame numbers start at 1")
            if w <= 0 or h <= 0:
                raise ValueError(f"{path}:{lineno}: non-positive box extent")
            box = BBox((left + w / 2.0) / width, (top + h / 2.0) / height,
                       w / width, h / height)
            scene.add(frame, SceneDetection(box, conf, obj_id if obj_id >= 0 else None))
    return scene


def load_scene(seq_dir, which: str = "gt") -> Scene:
    meta = read_meta(seq_dir)
    path = Path(seq_dir) / f"{which}.txt"
    return parse_mot(path, meta["width"], meta["height"], meta["name"], meta["fps"])


def write_mot(rows, path, width: int, height: int):
    """Write (frame, id, BBox normalized, conf) rows, sorted by (frame, id)."""
    lines = []
    for frame, obj_id, box, conf in sorted(rows, key=lambda r: (r[0], r[1])):
        left = (box.cx - box.w / 2.0) * width
        top = (box.cy - box.h / 2.0) * height
        lines.append(f"{frame},{obj_id},{left:.4f},{top:.4f},"
                     f"{box.w * width:.4f},{box.h * height:.4f},{conf:.4f},-1,-1,-1")
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def scene_rows(scene: Scene, use_gt_ids: bool = True):
    for frame in sorted(scene.frames):
        for det in scene.frames[frame]:
            obj_id = det.gt_id if (use_gt_ids and det.gt_id is not None) else -1
            yield (frame, obj_id, det.box, det.conf)


def write_scene(scene: Scene, seq_dir, gt: Scene | None = None):
    """Write a sequence directory: metadata plus det.txt (and gt.txt)."""
    seq_dir = Path(seq_dir)
    seq_dir.mkdir(parents=True, exist_ok=True)
    write_meta(seq_dir, scene.name, scene.width, scene.height, scene.fps)
    write_mot(scene_rows(scene, use_gt_ids=False), seq_dir / "det.txt",
              scene.width, scene.height)
    if gt is not None:
        write_mot(scene_rows(gt, use_gt_ids=True), seq_dir / "gt.txt",
                  scene.width, scene.height)


# ---------------------------------------------------------------------------
# synthetic scenes
# ---------------------------------------------------------------------------

DEFAULT_WIDTH, DEFAULT_HEIGHT, DEFAULT_FPS = 1920, 1080, 25.0

MOTION_KINDS = ("linear", "sinusoidal", "circular", "turn", "crossing-pair")


@dataclass
class SceneSpec:
    name: str
    n_frames: int
    seed: int
    objects: list[dict]  # each: {"kind": ..., **params}
    noise_std: float = 0.01
    drop_rate: float = 0.0
    width: int = DEFAULT_WIDTH
    height: int = DEFAULT_HEIGHT
    fps: float = DEFAULT_FPS

    def __post_init__(self):
        if self.n_frames < 2 or not self.objects:
            raise ValueError("scene spec needs n_frames >= 2 and at least one object")
        for obj in self.objects:
            if obj.get("kind") not in MOTION_KINDS:
                raise ValueError(f"unknown motion kind: {obj.get('kind')!r}")


def _center_path(kind: str, p: dict, n_frames: int):
    """Return cx(t), cy(t) for t = 0..n_frames-1 (normalized coordinates)."""
    t = np.arange(n_frames, dtype=np.float64)
    if kind == "linear":
        cx = p["x0"] + p["vx"] * t
        cy = p["y0"] + p["vy"] * t
    elif kind == "sinusoidal":
        cx = p["x0"] + p["vx"] * t
        cy = p["y0"] + p["amp"] * np.sin(2 * math.pi * t / p["period"] + p.get("phase", 0.0))
    elif kind == "circular":
        w = 2 * math.pi / p["period"]
        cx = p["x0"] + p["radius"] * np.cos(w * t + p.get("phase", 0.0))
        cy = p["y0"] + p["radius"] * np.sin(w * t + p.get("phase", 0.0))
    elif kind == "turn":
        t_turn = p.get("t_turn", n_frames // 2)
        cx = np.where(t < t_turn, p["x0"] + p["vx1"] * t,
                      p["x0"] + p["vx1"] * t_turn + p["vx2"] * (t - t_turn))
        cy = np.where(t < t_turn, p["y0"] + p["vy1"] * t,
                      p["y0"] + p["vy1"] * t_turn + p["vy2"] * (t - t_turn))
    else:
        raise ValueError(kind)
    return np.clip(cx, 0.02, 0.98), np.clip(cy, 0.02, 0.98)


def _expand_objects(spec: SceneSpec):
    """Expand crossing-pair entries into their two constituent paths."""
    expanded = []
    for obj in spec.objects:
        if obj["kind"] == "crossing-pair":
            y0 = obj.get("y0", 0.5)
            speed = obj.get("speed", 0.02)
            amp = obj.get("amp", 0.15)
            period = obj.get("period", 40.0)
            w, h = obj.get("w", 0.08), obj.get("h", 0.12)
            span = speed * (spec.n_frames - 1)
            x_a = 0.5 - span / 2.0
            x_b = 0.5 + span / 2.0
            # opposite-phase sinusoids meeting at mid-sequence
            mid = (spec.n_frames - 1) / 2.0
            phase = -2 * math.pi * mid / period
            expanded.append({"kind": "sinusoidal", "x0": x_a, "vx": speed,
                             "y0": y0, "amp": amp, "period": period,
                             "phase": phase, "w": w, "h": h})
            expanded.append({"kind": "sinusoidal", "x0": x_b, "vx": -speed,
                             "y0": y0, "amp": -amp, "period": period,
                             "phase": phase, "w": w, "h": h})
        else:
            expanded.append(obj)
    return expanded


def synth_scene(spec: SceneSpec) -> tuple[Scene, Scene]:
    """Deterministic ground truth plus its noisy detection view."""
    rng = np.random.default_rng(spec.seed)
    gt = Scene(spec.name, spec.width, spec.height, spec.fps)
    det = Scene(spec.name, spec.width, spec.height, spec.fps)
    for obj_id, obj in enumerate(_expand_objects(spec), start=1):
        w = obj.get("w", 0.08)
        h = obj.get("h", 0.12)
        cx, cy = _center_path(obj["kind"], obj, spec.n_frames)
        for i in range(spec.n_frames):
            frame = i + 1
            box = BBox(float(cx[i]), float(cy[i]), w, h)
            gt.add(frame, SceneDetection(box, 1.0, obj_id))
            if rng.random() < spec.drop_rate:
                continue
            s = spec.noise_std
            nbox = BBox(
                float(np.clip(box.cx + rng.normal(0.0, s) * w, 0.0, 1.0)),
                float(np.clip(box.cy + rng.normal(0.0, s) * h, 0.0, 1.0)),
                float(w * math.exp(rng.normal(0.0, s))),
                float(h * math.exp(rng.normal(0.0, s))),
            )
            det.add(frame, SceneDetection(nbox, float(rng.uniform(0.75, 1.0)), None))
    return gt, det


def benchmark_scene_specs(n_scenes: int, seed: int, n_frames: int = 80,
                          noise_std: float = 0.01, drop_rate: float = 0.1,
                          prefix: str = "scene") -> list[SceneSpec]:
    """Seeded family of nonlinear scenes: one crossing pair plus sinusoidal
    movers per scene, with motion parameters drawn per scene."""
    rng = np.random.default_rng(seed)
    specs = []
    for k in range(n_scenes):
        objects = [{
            "kind": "crossing-pair",
            "y0": float(rng.uniform(0.35, 0.65)),
            "speed": float(rng.uniform(0.015, 0.025)),
            "amp": float(rng.uniform(0.10, 0.18)),
            "period": float(rng.uniform(24, 44)),
            "w": 0.08, "h": 0.12,
        }]
        for _ in range(2):
            up = rng.random() < 0.5
            objects.append({
                "kind": "sinusoidal",
                "x0": float(rng.uniform(0.1, 0.3)) if up else float(rng.uniform(0.7, 0.9)),
                "vx": float(rng.uniform(0.012, 0.022)) * (1 if up else -1),
                "y0": float(rng.uniform(0.15, 0.85)),
                "amp": float(rng.uniform(0.08, 0.16)),
                "period": float(rng.uniform(16, 36)),
                "phase": float(rng.uniform(0, 2 * math.pi)),
                "w": 0.08, "h": 0.12,
            })
        specs.append(SceneSpec(
            name=f"{prefix}_{k:03d}", n_frames=n_frames,
            seed=int(rng.integers(0, 2 ** 31)), objects=objects,
            noise_std=noise_std, drop_rate=drop_rate,
        ))
    return specs


# ---------------------------------------------------------------------------
# training windows and augmentation
# ---------------------------------------------------------------------------

@dataclass
class TrainingSample:
    window: TrajectoryWindow
    target: Offset4


def gt_tracks(scene: Scene) -> dict[int, list[tuple[int, BBox]]]:
    tracks: dict[int, list[tuple[int, BBox]]] = {}
    for frame in sorted(scene.frames):
        for det in scene.frames[frame]:
            if det.gt_id is not None:
                tracks.setdefault(det.gt_id, []).append((frame, det.box))
    return tracks


def extract_windows(scene: Scene, n_past: int = 10):
    """Yield one (window, next-step offset) sample per predictable timestep."""
    for _, obs in sorted(gt_tracks(scene).items()):
        boxes = [b for _, b in obs]
        for i in range(1, len(boxes) - 1):
            window = window_from_boxes(boxes[max(0, i - n_past + 1):i + 1])
            target = encode_offset(boxes[i], boxes[i + 1])
            yield TrainingSample(window, target)


@dataclass
class AugmentPolicy:
    drop_prob: float = 0.1
    jitter: float = 0.05
    random_length: bool = False


def _raw_decode(base: BBox, off: Offset4) -> BBox:
    # exact inverse of encode_offset, no clamping
    return BBox(base.cx + off.d_cx, base.cy + off.d_cy,
                base.w + off.d_w, base.h + off.d_h)


def augment(sample: TrainingSample, policy: AugmentPolicy,
            rng: np.random.Generator) -> TrainingSample:
    """Random drop, spatial jitter, random length; deltas and target are
    recomputed so window invariants hold afterwards."""
    boxes = [BBox(t.cx, t.cy, t.w, t.h) for t in sample.window.tokens]
    next_box = _raw_decode(boxes[-1], sample.target)

    if policy.drop_prob > 0.0 and len(boxes) > 2:
        kept = [b for b in boxes[:-1] if rng.random() >= policy.drop_prob]
        if not kept:
            kept = [boxes[-2]]
        boxes = kept + [boxes[-1]]

    if policy.jitter > 0.0:
        s = policy.jitter
        jittered = []
        for b in boxes:
            jittered.append(BBox(
                b.cx + rng.uniform(-s, s) * b.w,
                b.cy + rng.uniform(-s, s) * b.h,
                b.w * math.exp(rng.uniform(-s, s)),
                b.h * math.exp(rng.uniform(-s, s)),
            ))
        boxes = jittered

    if policy.random_length and len(boxes) > 2:
        keep = int(rng.integers(2, len(boxes) + 1))
        boxes = boxes[-keep:]

    window = window_from_boxes(boxes)
    return TrainingSample(window, encode_offset(boxes[-1], next_box))
