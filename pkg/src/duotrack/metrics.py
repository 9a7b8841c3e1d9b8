"""CLEAR metrics (MOTA, FP, FN, IDSW) and IDF1 over two MOT scenes."""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict

import numpy as np
from scipy.optimize import linear_sum_assignment

from .data import Scene
from .geometry import iou

EVAL_IOU_MIN = 0.5


@dataclass
class EvalReport:
    mota: float
    idf1: float
    fp: int
    fn: int
    idsw: int
    gt_count: int
    idtp: int
    idfp: int
    idfn: int

    def as_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def as_text(self) -> str:
        return (f"MOTA {self.mota:7.4f}  IDF1 {self.idf1:7.4f}  "
                f"FP {self.fp:5d}  FN {self.fn:5d}  IDSW {self.idsw:4d}  "
                f"GT {self.gt_count:6d}")


def _frame_items(scene: Scene, frame: int):
    return [(det.gt_id, det.box) for det in scene.frames.get(frame, [])]


def clear_match(gt: Scene, hyp: Scene, iou_min: float = EVAL_IOU_MIN):
    """Per-frame CLEAR correspondence with carry-over of previous matches.

    Returns (fp, fn, idsw, gt_count).  IDSW is counted whenever a gt id's
    matched hypothesis id differs from its most recent previous match.
    """
    fp = fn = idsw = gt_count = 0
    prev_match: dict[int, int] = {}  # gt id -> hyp id from the previous frame
    last_match: dict[int, int] = {}  # gt id -> hyp id at its last matched frame
    frames = sorted(set(gt.frames) | set(hyp.frames))
    for frame in frames:
        gt_items = _frame_items(gt, frame)
        hyp_items = _frame_items(hyp, frame)
        gt_count += len(gt_items)
        gt_ids = [g for g, _ in gt_items]
        hyp_ids = [h for h, _ in hyp_items]
        matches: dict[int, int] = {}
        used_hyp: set[int] = set()
        # carry over still-valid pairs first (ties stay with their track)
        for gi, (g, gbox) in enumerate(gt_items):
            h = prev_match.get(g)
            if h is None or h not in hyp_ids or h in used_hyp:
                continue
            hbox = hyp_items[hyp_ids.index(h)][1]
            if iou(gbox, hbox) >= iou_min:
                matches[g] = h
                used_hyp.add(h)
        # Hungarian on the remainder, gated at iou_min
        rem_gt = [(g, b) for g, b in gt_items if g not in matches]
        rem_hyp = [(h, b) for h, b in hyp_items if h not in used_hyp]
        if rem_gt and rem_hyp:
            cost = np.ones((len(rem_gt), len(rem_hyp)))
            for i, (_, gb) in enumerate(rem_gt):
                for j, (_, hb) in enumerate(rem_hyp):
                    cost[i, j] = 1.0 - iou(gb, hb)
            rows, cols = linear_sum_assignment(cost)
            for r, c in sorted(zip(rows, cols)):
                if cost[r, c] <= 1.0 - iou_min + 1e-12:
                    g, h = rem_gt[r][0], rem_hyp[c][0]
                    matches[g] = h
                    used_hyp.add(h)
        for g, h in matches.items():
            if g in last_match and last_match[g] != h:
                idsw += 1
            last_match[g] = h
        fn += len(gt_items) - len(matches)
        fp += len(hyp_items) - len(used_hyp)
        prev_match = matches
    return fp, fn, idsw, gt_count


def _tracks_by_id(scene: Scene):
    tracks: dict[int, dict[int, object]] = {}
    for frame, dets in scene.frames.items():
        for det in dets:
            if det.gt_id is not None:
                tracks.setdefault(det.gt_id, {})[frame] = det.box
    return tracks


def idf1(gt: Scene, hyp: Scene, iou_min: float = EVAL_IOU_MIN):
    """Identity-F1 from a global trajectory-level bipartite matching that
    maximizes IDTP.  Returns (idf1, idtp, idfp, idfn)."""
    gt_tr = _tracks_by_id(gt)
    hyp_tr = _tracks_by_id(hyp)
    gt_ids = sorted(gt_tr)
    hyp_ids = sorted(hyp_tr)
    total_gt = sum(len(v) for v in gt_tr.values())
    total_hyp = sum(len(v) for v in hyp_tr.values())
    ng, nh = len(gt_ids), len(hyp_ids)
    # overlap[g][h] = frames where both exist and boxes overlap enough
    overlap = np.zeros((ng, nh))
    for i, g in enumerate(gt_ids):
        for j, h in enumerate(hyp_ids):
            common = set(gt_tr[g]) & set(hyp_tr[h])
            overlap[i, j] = sum(1 for f in common
                                if iou(gt_tr[g][f], hyp_tr[h][f]) >= iou_min)
    # pad with dummies so every trajectory may stay unmatched
    size = ng + nh
    cost = np.zeros((size, size))
    for i, g in enumerate(gt_ids):
        cost[i, nh:] = len(gt_tr[g])
        for j, h in enumerate(hyp_ids):
            cost[i, j] = len(gt_tr[g]) + len(hyp_tr[h]) - 2 * overlap[i, j]
    for j, h in enumerate(hyp_ids):
        cost[ng:, j] = len(hyp_tr[h])
    rows, cols = linear_sum_assignment(cost)
    idtp = 0
    for r, c in zip(rows, cols):
        if r < ng and c < nh:
            idtp += int(overlap[r, c])
    idfp = total_hyp - idtp
    idfn = total_gt - idtp
    denom = 2 * idtp + idfp + idfn
    score = (2 * idtp / denom) if denom else 1.0
    return score, idtp, idfp, idfn


def evaluate(gt: Scene, hyp: Scene, iou_min: float = EVAL_IOU_MIN) -> EvalReport:
    fp, fn, idsw, gt_count = clear_match(gt, hyp, iou_min)
    mota = 1.0 - (fn + fp + idsw) / gt_count if gt_count else 1.0
    score, idtp, idfp, idfn = idf1(gt, hyp, iou_min)
    return EvalReport(mota=mota, idf1=score, fp=fp, fn=fn, idsw=idsw,
                      gt_count=gt_count, idtp=idtp, idfp=idfp, idfn=idfn)


def aggregate(reports: list[EvalReport]) -> EvalReport:
    fp = sum(r.fp for r in reports)
    fn = sum(r.fn for r in reports)
    idsw = sum(r.idsw for r in reports)
    gt_count = sum(r.gt_count for r in reports)
    idtp = sum(r.idtp for r in reports)
    idfp = sum(r.idfp for r in reports)
    idfn = sum(r.idfn for r in reports)
    mota = 1.0 - (fn + fp + idsw) / gt_count if gt_count else 1.0
    denom = 2 * idtp + idfp + idfn
    return EvalReport(mota=mota, idf1=(2 * idtp / denom) if denom else 1.0,
                      fp=fp, fn=fn, idsw=idsw, gt_count=gt_count,
                      idtp=idtp, idfp=idfp, idfn=idfn)
