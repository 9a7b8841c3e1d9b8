"""IoU cost matrix and gated minimum-cost assignment."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .geometry import BBox, iou


@dataclass
class AssignmentResult:
    matches: list[tuple[int, int]] = field(default_factory=list)
    unmatched_tracks: list[int] = field(default_factory=list)
    unmatched_detections: list[int] = field(default_factory=list)


def cost_matrix(predicted: list[BBox], detections: list[BBox]) -> np.ndarray:
    """C[i, j] = 1 - IoU(pred_i, det_j)."""
    c = np.ones((len(predicted), len(detections)))
    for i, p in enumerate(predicted):
        for j, d in enumerate(detections):
            c[i, j] = 1.0 - iou(p, d)
    return c


def hungarian(cost: np.ndarray, gate: float = 0.0) -> AssignmentResult:
    """Minimum-total-cost matching on a rectangular matrix.

    Matches with cost > 1 - gate are dissolved into the unmatched sets, so
    `gate` is the minimum IoU an accepted pair must have.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n_rows, n_cols = cost.shape
    result = AssignmentResult()
    if n_rows == 0 or n_cols == 0:
        result.unmatched_tracks = list(range(n_rows))
        result.unmatched_detections = list(range(n_cols))
        return result
    if not np.isfinite(cost).all():
        raise ValueError("cost matrix contains non-finite entries")
    rows, cols = linear_sum_assignment(cost)
    matched_rows, matched_cols = set(), set()
    for r, c in sorted(zip(rows, cols)):
        if cost[r, c] > 1.0 - gate + 1e-12:
            continue
        result.matches.append((int(r), int(c)))
        matched_rows.add(int(r))
        matched_cols.add(int(c))
    result.unmatched_tracks = [i for i in range(n_rows) if i not in matched_rows]
    result.unmatched_detections = [j for j in range(n_cols) if j not in matched_cols]
    return result
