"""Click-annotation simulation and the synthetic desk-scale dataset."""

from __future__ import annotations

import warnings
from pathlib import Path

import numpy as np

from .data import (
    Click,
    DatasetManifest,
    FeatureSequence,
    GroundTruthSegment,
    VideoAnnotation,
    VideoEntry,
    save_annotation,
    save_manifest,
    write_feature_file,
)

DEFAULT_DURATION_SEC = 64.0
DEFAULT_T_FIXED = 128


def merge_intervals(intervals: list[tuple[float, float]]) -> list[tuple[float, float]]:
    """Union of possibly overlapping intervals, sorted."""
    merged: list[list[float]] = []
    for s, e in sorted(intervals):
        if merged and s <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], e)
        else:
            merged.append([s, e])
    return [(s, e) for s, e in merged]


def background_gaps(segments: list[GroundTruthSegment],
                    duration_sec: float) -> list[tuple[float, float]]:
    """Maximal background intervals: the complement of the union of action
    segments within [0, duration], including nonzero leading/trailing gaps."""
    gaps = []
    cursor = 0.0
    for s, e in merge_intervals([(g.start_sec, g.end_sec) for g in segments]):
        if s > cursor:
            gaps.append((cursor, s))
        cursor = max(cursor, e)
    if cursor < duration_sec:
        gaps.append((cursor, duration_sec))
    return gaps


def _labels_from_segments(segments: list[GroundTruthSegment], n_classes: int) -> np.ndarray:
    labels = np.zeros(n_classes + 1, dtype=np.int64)
    for g in segments:
        if g.class_id > n_classes:
            raise ValueError(f"segment class {g.class_id} > C={n_classes}")
        labels[g.class_id] = 1
    return labels


def simulate_background_clicks(gt: list[GroundTruthSegment], duration_sec: float,
                               n_classes: int, rng_seed: int, video_id: str = "",
                               t_fixed: int = DEFAULT_T_FIXED) -> VideoAnnotation:
    """Annotate one uniformly placed background click per maximal background
    gap. Gaps shorter than one frame of the t_fixed grid are skipped: they
    cannot be clicked at annotation resolution. A fully action-covered video
    gets zero clicks (with a warning)."""
    if gt and duration_sec < max(g.end_sec for g in gt):
        raise ValueError("duration_sec shorter than the last segment end")
    rng = np.random.default_rng(rng_seed)
    frame_sec = duration_sec / t_fixed
    clicks = []
    for gap_start, gap_end in background_gaps(gt, duration_sec):
        if gap_end - gap_start < frame_sec:
            continue
        clicks.append(Click(t_sec=float(rng.uniform(gap_start, gap_end)), class_id=0))
    if not clicks:
        warnings.warn(f"video {video_id!r}: no clickable background gap",
                      stacklevel=2)
    return VideoAnnotation(
        video_id=video_id,
        labels=_labels_from_segments(gt, n_classes),
        clicks=clicks,
        segments=list(gt),
    )


def simulate_action_clicks(gt: list[GroundTruthSegment], duration_sec: float,
                           n_classes: int, rng_seed: int,
                           video_id: str = "") -> VideoAnnotation:
    """Annotate one uniformly placed click per action instance, carrying the
    instance's class label."""
    if not gt:
        raise ValueError("action-click simulation needs at least one segment")
    rng = np.random.default_rng(rng_seed)
    clicks = [Click(t_sec=float(rng.uniform(g.start_sec, g.end_sec)),
                    class_id=g.class_id) for g in gt]
    return VideoAnnotation(
        video_id=video_id,
        labels=_labels_from_segments(gt, n_classes),
        clicks=clicks,
        segments=list(gt),
    )


def _class_means(n_classes: int, d_in: int, rng: np.random.Generator) -> np.ndarray:
    """Unit-norm mean vectors for background + each class: a random
    orthonormal frame (every pairwise angle is 90 degrees, comfortably past
    the 60-degree separation floor)."""
    if n_classes + 1 > d_in:
        raise ValueError(f"d_in={d_in} too small for {n_classes} classes")
    gauss = rng.standard_normal((d_in, n_classes + 1))
    q, r = np.linalg.qr(gauss)
    # fix signs so the frame is a deterministic function of the rng draws
    return (q * np.sign(np.diag(r))).T.copy()


def _sample_segments(t_fixed: int, n_classes: int, rng: np.random.Generator,
                     frame_sec: float) -> list[GroundTruthSegment]:
    """1-4 non-overlapping instances of one class per video, each 12-24
    frames, separated (and flanked) by background gaps of >= 2 frames.
    Infeasible packings retry with fewer segments."""
    gap_min = 2
    class_id = int(rng.integers(1, n_classes + 1))
    n_seg = int(rng.integers(1, 5))
    while True:
        lengths = rng.integers(12, 25, size=n_seg)
        if lengths.sum() + (n_seg + 1) * gap_min <= t_fixed:
            break
        if n_seg == 1:
            if t_fixed < 12 + 2 * gap_min:
                raise ValueError(f"t_fixed={t_fixed} too short to place one segment")
            continue  # resample a shorter single segment
        n_seg -= 1  # retry with fewer segments
    spare = t_fixed - int(lengths.sum()) - (n_seg + 1) * gap_min
    gaps = gap_min + rng.multinomial(spare, np.full(n_seg + 1, 1.0 / (n_seg + 1)))
    segments = []
    cursor = 0
    for i in range(n_seg):
        cursor += int(gaps[i])
        start = cursor
        cursor += int(lengths[i])
        segments.append(GroundTruthSegment(
            start_sec=start * frame_sec,
            end_sec=cursor * frame_sec,
            class_id=class_id,
        ))
    return segments


def _frame_class_map(segments: list[GroundTruthSegment], t_fixed: int,
                     frame_sec: float) -> np.ndarray:
    frame_class = np.zeros(t_fixed, dtype=np.int64)
    for g in segments:
        a = int(round(g.start_sec / frame_sec))
        b = int(round(g.end_sec / frame_sec))
        frame_class[a:b] = g.class_id
    return frame_class


def generate_synthetic_dataset(out_dir: str | Path, n_train: int, n_test: int,
                               n_classes: int, d_in: int,
                               t_fixed: int = DEFAULT_T_FIXED,
                               sigma: float = 0.1, rng_seed: int = 0,
                               duration_sec: float = DEFAULT_DURATION_SEC,
                               ) -> tuple[Path, Path]:
    """Write a synthetic train/test dataset under ``out_dir``.

    Frames are drawn from per-class Gaussian bumps around well-separated
    unit-norm mean vectors (background has its own mean); ground truth and
    simulated background clicks are recorded in the annotation files. Returns
    the two manifest paths.
    """
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    if d_in < 4:
        raise ValueError("need d_in >= 4")
    out_dir = Path(out_dir)
    master = np.random.SeedSequence(rng_seed)
    mean_seq, train_seq, test_seq = master.spawn(3)
    means = _class_means(n_classes, d_in, np.random.default_rng(mean_seq))
    frame_sec = duration_sec / t_fixed

    manifests = []
    for split, n_videos, split_seq in (("train", n_train, train_seq),
                                       ("test", n_test, test_seq)):
        split_dir = out_dir / split
        (split_dir / "features").mkdir(parents=True, exist_ok=True)
        (split_dir / "annotations").mkdir(parents=True, exist_ok=True)
        entries = []
        for i, child in enumerate(split_seq.spawn(n_videos)):
            rng = np.random.default_rng(child)
            video_id = f"{split}_{i:04d}"
            segments = _sample_segments(t_fixed, n_classes, rng, frame_sec)
            frame_class = _frame_class_map(segments, t_fixed, frame_sec)
            data = means[frame_class].T.copy()
            if sigma > 0:
                data += sigma * rng.standard_normal(data.shape)
            seq = FeatureSequence(video_id, data,
                                  fps_of_snippets=t_fixed / duration_sec)
            write_feature_file(split_dir / "features" / f"{video_id}.feat", seq)
            ann = simulate_background_clicks(
                segments, duration_sec, n_classes,
                rng_seed=int(rng.integers(2**31)), video_id=video_id,
                t_fixed=t_fixed)
            save_annotation(split_dir / "annotations" / f"{video_id}.json", ann)
            entries.append(VideoEntry(
                video_id=video_id,
                feature_path=f"features/{video_id}.feat",
                annotation_path=f"annotations/{video_id}.json",
                duration_sec=duration_sec,
            ))
        manifest = DatasetManifest(
            class_names=[f"class_{c}" for c in range(1, n_classes + 1)],
            t_fixed=t_fixed, videos=entries, root=split_dir)
        save_manifest(split_dir / "manifest.json", manifest)
        manifests.append(split_dir / "manifest.json")
    return manifests[0], manifests[1]
