"""Dataset layout: binary feature files, annotation/manifest JSON, rescaling.

Feature files are a small binary format: a 12-byte header (magic ``FSEQ``,
``d_in`` and ``t_raw`` as little-endian uint32) followed by ``t_raw * d_in``
little-endian float32 values in time-major order (all feature dims of frame 0,
then frame 1, ...). Annotations and manifests are plain JSON, schema-checked
on load and save.
"""

from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

FEATURE_MAGIC = b"FSEQ"
_FEATURE_HEADER = struct.Struct("<4sII")


class FeatureFileError(ValueError):
    """Base error for unreadable binary feature files."""


class MalformedHeaderError(FeatureFileError):
    """Header is truncated or does not start with the expected magic."""


class PayloadSizeError(FeatureFileError):
    """Payload byte count disagrees with the header's d_in * t_raw."""


class NonFiniteValueError(FeatureFileError):
    """Payload contains NaN or infinite values."""


ANNOTATION_SCHEMA = {
    "type": "object",
    "required": ["video_id", "labels", "clicks"],
    "additionalProperties": False,
    "properties": {
        "video_id": {"type": "string", "minLength": 1},
        "labels": {
            "type": "array",
            "items": {"type": "integer", "enum": [0, 1]},
            "minItems": 2,
        },
        "clicks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["t_sec", "class_id"],
                "additionalProperties": False,
                "properties": {
                    "t_sec": {"type": "number", "minimum": 0},
                    "class_id": {"type": "integer", "minimum": 0},
                },
            },
        },
        "segments": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["start_sec", "end_sec", "class_id"],
                "additionalProperties": False,
                "properties": {
                    "start_sec": {"type": "number", "minimum": 0},
                    "end_sec": {"type": "number"},
                    "class_id": {"type": "integer", "minimum": 1},
                },
            },
        },
    },
}

MANIFEST_SCHEMA = {
    "type": "object",
    "required": ["class_names", "t_fixed", "videos"],
    "additionalProperties": False,
    "properties": {
        "class_names": {
            "type": "array",
            "items": {"type": "string", "minLength": 1},
            "minItems": 1,
        },
        "t_fixed": {"type": "integer", "minimum": 2},
        "videos": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["video_id", "feature_path", "annotation_path", "duration_sec"],
                "additionalProperties": False,
                "properties": {
                    "video_id": {"type": "string", "minLength": 1},
                    "feature_path": {"type": "string", "minLength": 1},
                    "annotation_path": {"type": "string", "minLength": 1},
                    "duration_sec": {"type": "number", "exclusiveMinimum": 0},
                },
            },
        },
    },
}


def atomic_write_bytes(path: str | Path, payload: bytes) -> None:
    """Write a file via a same-directory temp file and rename, so a crash
    never leaves a truncated file at the final path."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, path)


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def atomic_write_json(path: str | Path, obj) -> None:
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


@dataclass
class FeatureSequence:
    """Per-video feature matrix with one d_in-dimensional column per snippet."""

    video_id: str
    data: np.ndarray  # (d_in, t_raw) float64
    fps_of_snippets: float | None = None

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"feature data must be 2-D, got shape {self.data.shape}")
        d_in, t_raw = self.data.shape
        if d_in < 1:
            raise ValueError("feature dimension must be positive")
        if t_raw < 1:
            raise ValueError("feature sequence must have at least one snippet")
        if not np.isfinite(self.data).all():
            raise NonFiniteValueError(f"non-finite feature values in {self.video_id!r}")

    @property
    def d_in(self) -> int:
        return self.data.shape[0]

    @property
    def t_raw(self) -> int:
        return self.data.shape[1]


def load_feature_file(path: str | Path, video_id: str | None = None,
                      fps_of_snippets: float | None = None) -> FeatureSequence:
    """Read a binary feature file. The returned matrix is exactly what was
    stored (cast to float64); no normalization is applied."""
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _FEATURE_HEADER.size:
        raise MalformedHeaderError(f"{path}: truncated header ({len(raw)} bytes)")
    magic, d_in, t_raw = _FEATURE_HEADER.unpack_from(raw)
    if magic != FEATURE_MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}")
    if d_in < 1 or t_raw < 1:
        raise MalformedHeaderError(f"{path}: header declares empty matrix {d_in}x{t_raw}")
    payload = raw[_FEATURE_HEADER.size:]
    expect = 4 * d_in * t_raw
    if len(payload) != expect:
        raise PayloadSizeError(
            f"{path}: payload holds {len(payload)} bytes, header implies {expect}")
    flat = np.frombuffer(payload, dtype="<f4")
    if not np.isfinite(flat).all():
        raise NonFiniteValueError(f"{path}: payload contains non-finite values")
    data = flat.reshape(t_raw, d_in).T  # stored time-major
    return FeatureSequence(
        video_id=video_id if video_id is not None else path.stem,
        data=data,
        fps_of_snippets=fps_of_snippets,
    )


def write_feature_file(path: str | Path, seq: FeatureSequence) -> None:
    """Write the binary feature format (float32 on disk, time-major)."""
    header = _FEATURE_HEADER.pack(FEATURE_MAGIC, seq.d_in, seq.t_raw)
    payload = np.ascontiguousarray(seq.data.T, dtype="<f4").tobytes()
    atomic_write_bytes(path, header + payload)


def rescale_to_fixed_length(seq: FeatureSequence, t_fixed: int) -> FeatureSequence:
    """Linearly interpolate every feature dimension onto a fixed-length grid.

    Output column t samples the input at position t * (t_raw - 1) / (t_fixed - 1),
    so the first and last snippets are preserved and t_raw == t_fixed is the
    identity.
    """
    if t_fixed < 2:
        raise ValueError("t_fixed must be >= 2")
    t_raw = seq.t_raw
    if t_raw == 0:
        raise ValueError("empty feature sequence")
    fps = seq.fps_of_snippets
    if fps is not None:
        fps = fps * t_fixed / t_raw
    if t_raw == t_fixed:
        return FeatureSequence(seq.video_id, seq.data.copy(), fps)
    positions = np.linspace(0.0, t_raw - 1, num=t_fixed)
    grid = np.arange(t_raw, dtype=np.float64)
    out = np.empty((seq.d_in, t_fixed), dtype=np.float64)
    for d in range(seq.d_in):
        out[d] = np.interp(positions, grid, seq.data[d])
    return FeatureSequence(seq.video_id, out, fps)


def map_time_to_frame(t_sec: float, duration_sec: float, t_fixed: int) -> int:
    """Place a timestamp on the fixed frame grid: floor(t / duration * T),
    clamped into [0, T - 1]."""
    if duration_sec <= 0:
        raise ValueError("duration_sec must be positive")
    if not 0 <= t_sec <= duration_sec:
        raise ValueError(f"timestamp {t_sec} outside [0, {duration_sec}]")
    frame = math.floor(t_sec / duration_sec * t_fixed)
    return min(max(frame, 0), t_fixed - 1)


@dataclass(frozen=True)
class GroundTruthSegment:
    """One annotated action instance, in seconds. Used only for click
    simulation and evaluation, never for training."""

    start_sec: float
    end_sec: float
    class_id: int

    def __post_init__(self):
        if not 0 <= self.start_sec < self.end_sec:
            raise ValueError(f"invalid segment [{self.start_sec}, {self.end_sec}]")
        if self.class_id < 1:
            raise ValueError("class_id must be >= 1 (0 is background)")


@dataclass(frozen=True)
class Click:
    """A single annotated timestamp. class_id 0 marks a background click;
    class_id >= 1 marks an action click of that class."""

    t_sec: float
    class_id: int


@dataclass
class VideoAnnotation:
    """Video-level labels plus click annotations (timestamps in seconds).

    ``labels`` has length C + 1 with index 0 reserved for the background
    class; it is stored as 0 on disk and set per training branch at loss
    time. Ground-truth segments ride along when available.
    """

    video_id: str
    labels: np.ndarray  # (C+1,) in {0,1}
    clicks: list[Click] = field(default_factory=list)
    segments: list[GroundTruthSegment] | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.shape[0] < 2:
            raise ValueError("labels must be a vector of length C + 1 >= 2")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be 0/1")
        if self.labels[1:].sum() < 1:
            raise ValueError(f"{self.video_id!r}: at least one action class required")

    @property
    def n_classes(self) -> int:
        return self.labels.shape[0] - 1

    def click_vector(self, duration_sec: float, t_fixed: int) -> np.ndarray:
        """Background-click vector on the fixed frame grid: 1 at clicked
        background frames, -1 (unknown) elsewhere. Action clicks are not
        represented here; 0 is reserved for runtime pseudo-labels."""
        b = np.full(t_fixed, -1, dtype=np.int8)
        for c in self.clicks:
            if c.class_id == 0:
                b[map_time_to_frame(c.t_sec, duration_sec, t_fixed)] = 1
        return b

    def to_json_obj(self) -> dict:
        obj = {
            "video_id": self.video_id,
            "labels": [int(v) for v in self.labels],
            "clicks": [{"t_sec": float(c.t_sec), "class_id": int(c.class_id)}
                       for c in self.clicks],
        }
        if self.segments is not None:
            obj["segments"] = [
                {"start_sec": float(s.start_sec), "end_sec": float(s.end_sec),
                 "class_id": int(s.class_id)}
                for s in self.segments
            ]
        return obj


def save_annotation(path: str | Path, ann: VideoAnnotation) -> None:
    obj = ann.to_json_obj()
    jsonschema.validate(obj, ANNOTATION_SCHEMA)
    atomic_write_json(path, obj)


def load_annotation(path: str | Path) -> VideoAnnotation:
    obj = json.loads(Path(path).read_text())
    jsonschema.validate(obj, ANNOTATION_SCHEMA)
    segments = None
    if "segments" in obj:
        segments = [GroundTruthSegment(s["start_sec"], s["end_sec"], s["class_id"])
                    for s in obj["segments"]]
    return VideoAnnotation(
        video_id=obj["video_id"],
        labels=np.asarray(obj["labels"], dtype=np.int64),
        clicks=[Click(c["t_sec"], c["class_id"]) for c in obj["clicks"]],
        segments=segments,
    )


@dataclass(frozen=True)
class VideoEntry:
    video_id: str
    feature_path: str
    annotation_path: str
    duration_sec: float


@dataclass
class DatasetManifest:
    """Index of a dataset directory. Paths are relative to ``root``."""

    class_names: list[str]
    t_fixed: int
    videos: list[VideoEntry]
    root: Path = Path(".")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def feature_file(self, entry: VideoEntry) -> Path:
        return self.root / entry.feature_path

    def annotation_file(self, entry: VideoEntry) -> Path:
        return self.root / entry.annotation_path

    def to_json_obj(self) -> dict:
        return {
            "class_names": list(self.class_names),
            "t_fixed": int(self.t_fixed),
            "videos": [
                {"video_id": v.video_id, "feature_path": v.feature_path,
                 "annotation_path": v.annotation_path,
                 "duration_sec": float(v.duration_sec)}
                for v in self.videos
            ],
        }


def save_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    obj = manifest.to_json_obj()
    jsonschema.validate(obj, MANIFEST_SCHEMA)
    atomic_write_json(path, obj)


def load_manifest(path: str | Path) -> DatasetManifest:
    """Load and validate a manifest: unique video ids, referenced files exist."""
    path = Path(path)
    obj = json.loads(path.read_text())
    jsonschema.validate(obj, MANIFEST_SCHEMA)
    videos = [VideoEntry(v["video_id"], v["feature_path"], v["annotation_path"],
                         v["duration_sec"]) for v in obj["videos"]]
    ids = [v.video_id for v in videos]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate video ids")
    manifest = DatasetManifest(
        class_names=list(obj["class_names"]),
        t_fixed=int(obj["t_fixed"]),
        videos=videos,
        root=path.parent,
    )
    for entry in videos:
        for f in (manifest.feature_file(entry), manifest.annotation_file(entry)):
            if not f.exists():
                raise FileNotFoundError(f"{path}: missing referenced file {f}")
    return manifest


@dataclass
class LoadedVideo:
    """A video ready for training/inference: features rescaled to the fixed
    grid, labels, and the background-click vector on that grid."""

    video_id: str
    features: np.ndarray          # (d_in, t_fixed) float64
    labels: np.ndarray            # (C+1,) in {0,1}
    clicks: np.ndarray            # (t_fixed,) in {-1, 1}
    duration_sec: float
    segments: list[GroundTruthSegment] | None


def load_dataset(manifest: DatasetManifest) -> list[LoadedVideo]:
    out = []
    for entry in manifest.videos:
        seq = load_feature_file(manifest.feature_file(entry), video_id=entry.video_id)
        seq = rescale_to_fixed_length(seq, manifest.t_fixed)
        ann = load_annotation(manifest.annotation_file(entry))
        if ann.video_id != entry.video_id:
            raise ValueError(
                f"annotation id {ann.video_id!r} does not match manifest entry "
                f"{entry.video_id!r}")
        if ann.labels.shape[0] != manifest.n_classes + 1:
            raise ValueError(
                f"{entry.video_id!r}: labels length {ann.labels.shape[0]} != C+1")
        out.append(LoadedVideo(
            video_id=entry.video_id,
            features=seq.data,
            labels=ann.labels,
            clicks=ann.click_vector(entry.duration_sec, manifest.t_fixed),
            duration_sec=entry.duration_sec,
            segments=ann.segments,
        ))
    return out


def ground_truth_by_class(manifest: DatasetManifest) -> dict[int, list[tuple[str, float, float]]]:
    """Collect (video_id, start, end) ground-truth segments per class id."""
    gts: dict[int, list[tuple[str, float, float]]] = {}
    for entry in manifest.videos:
        ann = load_annotation(manifest.annotation_file(entry))
        for seg in ann.segments or []:
            gts.setdefault(seg.class_id, []).append(
                (entry.video_id, seg.start_sec, seg.end_sec))
    return gts
