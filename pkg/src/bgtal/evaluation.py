"""Detection metrics: temporal IoU, per-class average precision with greedy
matching, and mAP over threshold grids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# the two conventional tIoU grids: a coarse 0.3-0.7 sweep and a strict
# 0.5-0.95 sweep in 0.05 steps
DEFAULT_TIOU_GRID = (0.3, 0.4, 0.5, 0.6, 0.7)
STRICT_TIOU_GRID = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))


def tiou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Temporal intersection over union of two [start, end) segments."""
    if not (a[0] < a[1] and b[0] < b[1]):
        raise ValueError("segments must have positive length")
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


@dataclass
class ClassAP:
    ap: float
    n_gt: int
    n_pred: int
    defined: bool  # False when there is neither GT nor a prediction


def average_precision(preds: list[tuple[str, float, float, float]],
                      gts: list[tuple[str, float, float]],
                      tiou_thr: float) -> ClassAP:
    """AP for one class. Predictions are (video_id, start, end, score), ground
    truths (video_id, start, end).

    Predictions are visited by descending score (ties: video id, then start);
    each is a true positive iff it overlaps an unmatched same-video ground
    truth at tIoU >= thr (taking the largest-overlap one), and every ground
    truth can be matched once. AP is the exact area under the resulting
    precision-recall staircase, with no interpolation.
    """
    n_gt = len(gts)
    if n_gt == 0 and not preds:
        return ClassAP(ap=0.0, n_gt=0, n_pred=0, defined=False)
    if n_gt == 0:
        return ClassAP(ap=0.0, n_gt=0, n_pred=len(preds), defined=True)
    by_video: dict[str, list[int]] = {}
    for gi, (vid, _, _) in enumerate(gts):
        by_video.setdefault(vid, []).append(gi)
    matched = [False] * n_gt
    order = sorted(range(len(preds)),
                   key=lambda i: (-preds[i][3], preds[i][0], preds[i][1], preds[i][2]))
    tp = np.zeros(len(order))
    for rank, pi in enumerate(order):
        vid, ps, pe, _ = preds[pi]
        best_gi = -1
        best_ov = 0.0
        for gi in by_video.get(vid, ()):
            if matched[gi]:
                continue
            ov = tiou((ps, pe), (gts[gi][1], gts[gi][2]))
            if ov >= tiou_thr and ov > best_ov:
                best_ov = ov
                best_gi = gi
        if best_gi >= 0:
            matched[best_gi] = True
            tp[rank] = 1.0
    cum_tp = np.cumsum(tp)
    ranks = np.arange(1, len(order) + 1)
    ap = float(np.sum(tp * cum_tp / ranks) / n_gt)
    return ClassAP(ap=ap, n_gt=n_gt, n_pred=len(preds), defined=True)


@dataclass
class EvalTable:
    thresholds: tuple[float, ...]
    class_ids: tuple[int, ...]              # classes with >= 1 ground truth
    per_class: dict[float, dict[int, float]]  # thr -> class -> AP
    map_at: dict[float, float]              # thr -> mAP
    avg_map: float

    def to_csv(self, class_names: list[str] | None = None) -> str:
        names = {c: (class_names[c - 1] if class_names else f"class_{c}")
                 for c in self.class_ids}
        header = "tiou," + ",".join(names[c] for c in self.class_ids) + ",mean"
        rows = [header]
        for thr in self.thresholds:
            cells = [f"{thr:g}"]
            cells += [f"{self.per_class[thr][c]:.6f}" for c in self.class_ids]
            cells.append(f"{self.map_at[thr]:.6f}")
            rows.append(",".join(cells))
        rows.append(",".join(["avg"] + [""] * len(self.class_ids) +
                             [f"{self.avg_map:.6f}"]))
        return "\n".join(rows) + "\n"

    def to_json_obj(self) -> dict:
        return {
            "thresholds": list(self.thresholds),
            "class_ids": list(self.class_ids),
            "per_class": {f"{thr:g}": {str(c): ap for c, ap in row.items()}
                          for thr, row in self.per_class.items()},
            "map_at": {f"{thr:g}": v for thr, v in self.map_at.items()},
            "avg_map": self.avg_map,
        }


def map_at(preds_by_class: dict[int, list[tuple[str, float, float, float]]],
           gts_by_class: dict[int, list[tuple[str, float, float]]],
           thresholds) -> EvalTable:
    """mAP per threshold over the classes that have ground truth (a class with
    ground truth but no predictions scores 0; classes with no ground truth are
    excluded from the mean), plus the average over the threshold grid."""
    thresholds = tuple(float(t) for t in thresholds)
    class_ids = tuple(sorted(c for c, g in gts_by_class.items() if g))
    per_class: dict[float, dict[int, float]] = {}
    map_scores: dict[float, float] = {}
    for thr in thresholds:
        row = {c: average_precision(preds_by_class.get(c, []),
                                    gts_by_class[c], thr).ap
               for c in class_ids}
        per_class[thr] = row
        map_scores[thr] = float(np.mean(list(row.values()))) if row else 0.0
    avg = float(np.mean(list(map_scores.values()))) if map_scores else 0.0
    return EvalTable(thresholds=thresholds, class_ids=class_ids,
                     per_class=per_class, map_at=map_scores, avg_map=avg)


def predictions_by_class(preds: list[dict]) -> dict[int, list[tuple[str, float, float, float]]]:
    out: dict[int, list[tuple[str, float, float, float]]] = {}
    for p in preds:
        out.setdefault(int(p["class"]), []).append(
            (p["video_id"], float(p["t_start"]), float(p["t_end"]),
             float(p["score"])))
    return out
