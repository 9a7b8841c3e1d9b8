"""Bounding-box geometry in normalized image coordinates.

All boxes live in center form (cx, cy, w, h) normalized by image width and
height, so everything downstream is resolution independent.
"""

from __future__ import annotations

from dataclasses import dataclass

# Floor for decoded box dimensions; degenerate regressions are clamped, not
# rejected, so the tracker can keep predicting through bad steps.
DIM_FLOOR = 1e-4

# Running count of decode_offset clamp events (diagnostic only).
_clamp_events = 0


def clamp_event_count() -> int:
    return _clamp_events


def reset_clamp_events() -> None:
    global _clamp_events
    _clamp_events = 0


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box, center form, normalized to [0, 1] image extent."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box dimensions must be positive, got w={self.w} h={self.h}")

    @property
    def aspect(self) -> float:
        return self.w / self.h

    def corners(self) -> tuple[float, float, float, float]:
        """(x1, y1, x2, y2) corner form."""
        return (
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        )

    @staticmethod
    def from_corners(x1: float, y1: float, x2: float, y2: float) -> "BBox":
        return BBox((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)


@dataclass(frozen=True)
class Offset4:
    """Signed one-step box deltas (next minus previous), normalized units."""

    d_cx: float
    d_cy: float
    d_w: float
    d_h: float

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.d_cx, self.d_cy, self.d_w, self.d_h)


def iou(a: BBox, b: BBox) -> float:
    """Intersection over union of two boxes, in [0, 1]."""
    ax1, ay1, ax2, ay2 = a.corners()
    bx1, by1, bx2, by2 = b.corners()
    iw = min(ax2, bx2) - max(ax1, bx1)
    ih = min(ay2, by2) - max(ay1, by1)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return inter / union


def encode_offset(prev: BBox, next_: BBox) -> Offset4:
    """Componentwise difference next - prev."""
    return Offset4(
        next_.cx - prev.cx,
        next_.cy - prev.cy,
        next_.w - prev.w,
        next_.h - prev.h,
    )


def decode_offset(base: BBox, off: Offset4) -> BBox:
    """Apply an offset to a base box.

    Centers are clamped into [0, 1] and dimensions floored at DIM_FLOOR;
    clamp events are counted but never raise.
    """
    global _clamp_events
    cx = base.cx + off.d_cx
    cy = base.cy + off.d_cy
    w = base.w + off.d_w
    h = base.h + off.d_h
    clamped = False
    if cx < 0.0 or cx > 1.0:
        cx = min(max(cx, 0.0), 1.0)
        clamped = True
    if cy < 0.0 or cy > 1.0:
        cy = min(max(cy, 0.0), 1.0)
        clamped = True
    if w < DIM_FLOOR:
        w = DIM_FLOOR
        clamped = True
    if h < DIM_FLOOR:
        h = DIM_FLOOR
        clamped = True
    if clamped:
        _clamp_events += 1
    return BBox(cx, cy, w, h)
