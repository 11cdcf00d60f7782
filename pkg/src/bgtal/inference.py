"""Turn a trained model and a test video into detected action instances:
class thresholding, multi-threshold segment grouping, outer-inner-contrastive
scoring, and class-wise temporal NMS."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .network import CASNet, video_scores

DEFAULT_TAU_CLS = 0.25
DEFAULT_SEG_THRESHOLDS = tuple(round(0.05 * i, 2) for i in range(1, 11))
DEFAULT_NMS_TIOU = 0.5
DEFAULT_OIC_INFLATION = 0.25


@dataclass(frozen=True)
class DetectedInstance:
    t_start_sec: float
    t_end_sec: float
    class_id: int
    score: float

    def __post_init__(self):
        if not self.t_start_sec < self.t_end_sec:
            raise ValueError("instance must have positive duration")
        if self.class_id < 1:
            raise ValueError("class_id must be >= 1")


def oic_score(row: np.ndarray, t_s: int, t_e: int,
              inflation: float = DEFAULT_OIC_INFLATION) -> float:
    """Inner mean of row over [t_s, t_e) minus the pooled mean over two outer
    flanks of ceil(inflation * length) frames each, clipped to the sequence.
    Flank frames that fall outside the sequence are simply absent; with no
    outer frames at all the score is the inner mean."""
    row = np.asarray(row, dtype=np.float64)
    t = row.shape[0]
    if not 0 <= t_s < t_e <= t:
        raise ValueError(f"segment [{t_s}, {t_e}) outside [0, {t}]")
    if not 0 < inflation <= 1:
        raise ValueError("inflation must be in (0, 1]")
    inner = float(row[t_s:t_e].mean())
    flank = math.ceil(inflation * (t_e - t_s))
    outer = np.concatenate([row[max(0, t_s - flank):t_s], row[t_e:t_e + flank]])
    if outer.size == 0:
        return inner
    return inner - float(outer.mean())


def min_max_normalize(row: np.ndarray) -> np.ndarray:
    """Scale a score row to [0, 1]; a constant row maps to all zeros."""
    row = np.asarray(row, dtype=np.float64)
    lo, hi = row.min(), row.max()
    if hi == lo:
        return np.zeros_like(row)
    return (row - lo) / (hi - lo)


def threshold_runs(norm_row: np.ndarray, theta: float) -> list[tuple[int, int]]:
    """Maximal runs of frames with normalized score strictly above theta, as
    half-open [start, end) frame spans."""
    above = norm_row > theta
    runs = []
    start = None
    for i, flag in enumerate(above):
        if flag and start is None:
            start = i
        elif not flag and start is not None:
            runs.append((start, i))
            start = None
    if start is not None:
        runs.append((start, len(above)))
    return runs


def candidate_segments(row: np.ndarray, seg_thresholds,
                       inflation: float = DEFAULT_OIC_INFLATION,
                       ) -> list[tuple[int, int, float]]:
    """Pool threshold-sweep segment candidates for one class row, scored by
    outer-inner contrast of the normalized row. Duplicated spans (found at
    several thresholds) are emitted once."""
    norm = min_max_normalize(row)
    spans: set[tuple[int, int]] = set()
    for theta in seg_thresholds:
        spans.update(threshold_runs(norm, theta))
    return [(s, e, oic_score(norm, s, e, inflation)) for s, e in sorted(spans)]


def tiou_frames(a: tuple[int, int], b: tuple[int, int]) -> float:
    inter = max(0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union if union > 0 else 0.0


def temporal_nms(candidates: list[tuple[int, int, float]],
                 tiou_threshold: float) -> list[tuple[int, int, float]]:
    """Greedy suppression within one class: walk candidates by descending
    score (ties: earlier start first) and drop any whose tIoU with an already
    kept candidate reaches the threshold."""
    kept: list[tuple[int, int, float]] = []
    for s, e, score in sorted(candidates, key=lambda c: (-c[2], c[0], c[1])):
        if all(tiou_frames((s, e), (ks, ke)) < tiou_threshold
               for ks, ke, _ in kept):
            kept.append((s, e, score))
    return kept


def localize(model: CASNet, x, duration_sec: float, k: int,
             tau_cls: float = DEFAULT_TAU_CLS,
             seg_thresholds=DEFAULT_SEG_THRESHOLDS,
             nms_tiou: float = DEFAULT_NMS_TIOU,
             inflation: float = DEFAULT_OIC_INFLATION,
             use_affinity: bool = True,
             branch: str = "suppressed") -> list[DetectedInstance]:
    """Detect action instances in one video.

    The video-level softmax score gates which classes are localized at all;
    per kept class the activation row is min-max normalized and swept over
    seg_thresholds, candidates are scored by outer-inner contrast, and
    class-wise NMS keeps the winners. Frame spans are mapped back to seconds
    on the fixed grid.
    """
    if branch not in ("suppressed", "base"):
        raise ValueError(f"unknown branch {branch!r}")
    x = torch.as_tensor(x, dtype=torch.float64)
    with torch.no_grad():
        res = model.forward(x, use_affinity=use_affinity,
                            compute_suppressed=branch == "suppressed")
        s = res.s_supp if branch == "suppressed" else res.s_base
        scores = torch.softmax(video_scores(s, k), dim=0).numpy()
    s = s.numpy()
    t = s.shape[1]
    out: list[DetectedInstance] = []
    for c in range(1, s.shape[0]):
        if scores[c] < tau_cls:
            continue
        cands = candidate_segments(s[c], seg_thresholds, inflation)
        for fs, fe, score in temporal_nms(cands, nms_tiou):
            out.append(DetectedInstance(
                t_start_sec=fs * duration_sec / t,
                t_end_sec=fe * duration_sec / t,
                class_id=c,
                score=score,
            ))
    return out


def predictions_to_json_obj(video_id: str,
                            instances: list[DetectedInstance]) -> list[dict]:
    return [{"video_id": video_id, "t_start": d.t_start_sec,
             "t_end": d.t_end_sec, "class": d.class_id, "score": d.score}
            for d in instances]


def load_predictions(path: str | Path) -> list[dict]:
    preds = json.loads(Path(path).read_text())
    if not isinstance(preds, list):
        raise ValueError(f"{path}: predictions must be a JSON list")
    required = {"video_id", "t_start", "t_end", "class", "score"}
    for p in preds:
        missing = required - set(p)
        if missing:
            raise ValueError(f"{path}: prediction missing {sorted(missing)}")
    return preds
