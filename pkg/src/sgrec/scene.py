"""Scene data model and file formats.

Ground truth, individual detections, and prediction sets are plain frozen
dataclasses over float64 numpy arrays. JSON is the on-disk format for scenes
and predictions; learned weights travel as a JSON manifest plus a raw
little-endian float32 blob. All values written to disk are quantized to
float32 and emitted as shortest round-trip decimals, so save/load is
bit-exact at 32-bit precision.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping

import numpy as np

from .tensor import FeatureMap, FeatureMapSet


class ValidationError(ValueError):
    """An input file or structure violates the data contracts."""


def f32(values) -> np.ndarray:
    """Quantize to float32 precision, returned as float64."""
    return np.asarray(values, dtype=np.float64).astype(np.float32).astype(np.float64)


def _require(cond: bool, message: str):
    if not cond:
        raise ValidationError(message)


def _check_unit_range(arr: np.ndarray, field: str):
    if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0):
        raise ValidationError(f"{field}: coordinates must be finite and inside [0, 1]")


def _check_boxes(boxes: np.ndarray, field: str):
    _check_unit_range(boxes, field)
    for k, (x1, y1, x2, y2) in enumerate(boxes):
        if not (x1 < x2 and y1 < y2):
            raise ValidationError(f"{field}[{k}]: box must satisfy x1 < x2 and y1 < y2")


def member_point_order(points: np.ndarray) -> np.ndarray:
    """Stable ordering of member points by ascending X, then ascending Y."""
    pts = np.asarray(points, dtype=np.float64)
    return np.lexsort((pts[:, 1], pts[:, 0]))


def sort_member_points(points: np.ndarray, boxes: np.ndarray | None = None):
    """Sort points ascending by X (ties by Y); apply the same order to boxes.

    Returns the sorted points, or a (points, boxes) pair when boxes are given.
    """
    pts = np.asarray(points, dtype=np.float64)
    if not np.all(np.isfinite(pts)):
        raise ValueError("member points must be finite")
    order = member_point_order(pts)
    if boxes is None:
        return pts[order]
    return pts[order], np.asarray(boxes, dtype=np.float64)[order]


@dataclass(frozen=True)
class GroundTruthGroup:
    """One annotated social group: activity label, size, member geometry."""

    activity: np.ndarray      # (n_classes,) multi-hot ints
    size: int
    member_points: np.ndarray  # (size, 2) normalized xy, X-sorted
    member_boxes: np.ndarray   # (size, 4) normalized xyxy

    def __post_init__(self):
        object.__setattr__(self, "activity", np.asarray(self.activity, dtype=np.int64))
        object.__setattr__(self, "member_points", np.asarray(self.member_points, dtype=np.float64))
        object.__setattr__(self, "member_boxes", np.asarray(self.member_boxes, dtype=np.float64))

    def validate(self, n_id: int, field: str = "group"):
        _require(self.activity.ndim == 1 and np.isin(self.activity, (0, 1)).all(),
                 f"{field}.activity: must be a 0/1 multi-hot vector")
        _require(int(self.size) >= 1, f"{field}.size: must be >= 1")
        _require(int(self.size) <= n_id,
                 f"{field}.size: {self.size} exceeds the member budget n_id={n_id}")
        _require(self.member_points.shape == (self.size, 2),
                 f"{field}.member_points: expected {self.size} xy pairs")
        _require(self.member_boxes.shape == (self.size, 4),
                 f"{field}.member_boxes: expected {self.size} xyxy boxes")
        _check_unit_range(self.member_points, f"{field}.member_points")
        _check_boxes(self.member_boxes, f"{field}.member_boxes")
        order = member_point_order(self.member_points)
        _require(np.array_equal(order, np.arange(self.size)),
                 f"{field}.member_points: must be sorted ascending by X (ties by Y)")

    @property
    def active_classes(self) -> np.ndarray:
        return np.flatnonzero(self.activity == 1)

    def normalized_size(self, n_id: int) -> float:
        return self.size / n_id


@dataclass(frozen=True)
class SceneGroundTruth:
    """Ground truth for one scene plus its individual detections."""

    image_id: str
    groups: tuple[GroundTruthGroup, ...]
    individual_boxes: np.ndarray   # (n_b, 4)
    individual_scores: np.ndarray  # (n_b,)

    def __post_init__(self):
        object.__setattr__(self, "groups", tuple(self.groups))
        object.__setattr__(self, "individual_boxes",
                           np.asarray(self.individual_boxes, dtype=np.float64).reshape(-1, 4))
        object.__setattr__(self, "individual_scores",
                           np.asarray(self.individual_scores, dtype=np.float64).reshape(-1))

    def validate(self, n_id: int):
        for i, g in enumerate(self.groups):
            g.validate(n_id, field=f"groups[{i}]")
        _require(len(self.individual_boxes) == len(self.individual_scores),
                 "individuals: boxes and scores disagree in length")
        _check_boxes(self.individual_boxes, "individuals.box")
        if self.individual_scores.size:
            _require(bool(np.all((self.individual_scores >= 0.0) & (self.individual_scores <= 1.0))),
                     "individuals.score: must lie in [0, 1]")

    @property
    def n_individuals(self) -> int:
        return len(self.individual_scores)


@dataclass(frozen=True)
class GroupPrediction:
    """One group query's decoded outputs: class probabilities, size, points."""

    activity_probs: np.ndarray  # (n_classes,) in [0, 1]
    size: float                 # normalized group size in [0, 1]
    member_points: np.ndarray   # (n_id, 2) normalized xy

    def __post_init__(self):
        object.__setattr__(self, "activity_probs", np.asarray(self.activity_probs, dtype=np.float64))
        object.__setattr__(self, "size", float(self.size))
        object.__setattr__(self, "member_points", np.asarray(self.member_points, dtype=np.float64))

    def validate(self, n_id: int | None = None, field: str = "prediction"):
        _check_unit_range(self.activity_probs, f"{field}.activity_probs")
        _require(self.activity_probs.ndim == 1 and self.activity_probs.size >= 1,
                 f"{field}.activity_probs: must be a nonempty vector")
        _require(0.0 <= self.size <= 1.0, f"{field}.size: must lie in [0, 1]")
        _require(self.member_points.ndim == 2 and self.member_points.shape[1] == 2,
                 f"{field}.member_points: expected xy pairs")
        if n_id is not None:
            _require(self.member_points.shape[0] == n_id,
                     f"{field}.member_points: expected exactly {n_id} points")
        _check_unit_range(self.member_points, f"{field}.member_points")


@dataclass(frozen=True)
class PredictionSet:
    """All group predictions for one scene."""

    image_id: str
    predictions: tuple[GroupPrediction, ...]

    def __post_init__(self):
        object.__setattr__(self, "predictions", tuple(self.predictions))

    def validate(self, n_id: int | None = None):
        _require(len(self.predictions) >= 1, "predictions: must contain at least one entry")
        counts = {p.member_points.shape[0] for p in self.predictions}
        _require(len(counts) == 1, "predictions: member point counts must be uniform")
        widths = {p.activity_probs.size for p in self.predictions}
        _require(len(widths) == 1, "predictions: class counts must be uniform")
        for i, p in enumerate(self.predictions):
            p.validate(n_id, field=f"predictions[{i}]")

    @property
    def n_members(self) -> int:
        return self.predictions[0].member_points.shape[0]

    @property
    def n_classes(self) -> int:
        return self.predictions[0].activity_probs.size


def _floats(values, field: str) -> np.ndarray:
    try:
        return f32(np.asarray(values, dtype=np.float64))
    except (TypeError, ValueError):
        raise ValidationError(f"{field}: expected numeric values") from None


def scene_to_json(scene: SceneGroundTruth) -> dict:
    return {
        "image_id": scene.image_id,
        "groups": [
            {
                "activity": [int(a) for a in g.activity],
                "size": int(g.size),
                "member_points": [[float(v) for v in p] for p in f32(g.member_points)],
                "member_boxes": [[float(v) for v in b] for b in f32(g.member_boxes)],
            }
            for g in scene.groups
        ],
        "individuals": [
            {"box": [float(v) for v in b], "score": float(s)}
            for b, s in zip(f32(scene.individual_boxes), f32(scene.individual_scores))
        ],
    }


def save_scene(scene: SceneGroundTruth, path):
    Path(path).write_text(json.dumps(scene_to_json(scene), indent=2, sort_keys=True) + "\n")


def scene_from_json(doc: dict, n_id: int, origin: str = "scene") -> SceneGroundTruth:
    _require(isinstance(doc, dict), f"{origin}: top level must be an object")
    for key in ("image_id", "groups", "individuals"):
        _require(key in doc, f"{origin}.{key}: missing required field")
    groups = []
    for i, g in enumerate(doc["groups"]):
        field = f"{origin}.groups[{i}]"
        for key in ("activity", "size", "member_points", "member_boxes"):
            _require(key in g, f"{field}.{key}: missing required field")
        points = _floats(g["member_points"], f"{field}.member_points")
        boxes = _floats(g["member_boxes"], f"{field}.member_boxes")
        _require(points.ndim == 2 and points.shape[1] == 2,
                 f"{field}.member_points: expected xy pairs")
        _require(boxes.shape == (points.shape[0], 4),
                 f"{field}.member_boxes: expected one xyxy box per member point")
        order = member_point_order(points)
        if not np.array_equal(order, np.arange(len(points))):
            warnings.warn(f"{field}.member_points not X-sorted; sorting points and boxes",
                          stacklevel=2)
            points, boxes = points[order], boxes[order]
        group = GroundTruthGroup(
            activity=np.asarray(g["activity"], dtype=np.int64),
            size=int(g["size"]),
            member_points=points,
            member_boxes=boxes,
        )
        group.validate(n_id, field=field)
        groups.append(group)
    ind_boxes = _floats([ind.get("box", ()) for ind in doc["individuals"]] or
                        np.zeros((0, 4)), f"{origin}.individuals.box").reshape(-1, 4)
    ind_scores = _floats([ind.get("score", -1.0) for ind in doc["individuals"]] or
                         np.zeros(0), f"{origin}.individuals.score")
    scene = SceneGroundTruth(
        image_id=str(doc["image_id"]),
        groups=tuple(groups),
        individual_boxes=ind_boxes,
        individual_scores=ind_scores,
    )
    scene.validate(n_id)
    return scene


def load_scene(path, n_id: int) -> SceneGroundTruth:
    path = Path(path)
    doc = json.loads(path.read_text())
    return scene_from_json(doc, n_id, origin=path.name)


def predictions_to_json(preds: PredictionSet) -> dict:
    return {
        "image_id": preds.image_id,
        "predictions": [
            {
                "activity_probs": [float(v) for v in f32(p.activity_probs)],
                "size": float(f32(p.size)),
                "member_points": [[float(v) for v in q] for q in f32(p.member_points)],
            }
            for p in preds.predictions
        ],
    }


def save_predictions(preds: PredictionSet, path):
    Path(path).write_text(json.dumps(predictions_to_json(preds), indent=2, sort_keys=True) + "\n")


def predictions_from_json(doc: dict, n_id: int | None = None,
                          origin: str = "predictions") -> PredictionSet:
    _require(isinstance(doc, dict), f"{origin}: top level must be an object")
    for key in ("image_id", "predictions"):
        _require(key in doc, f"{origin}.{key}: missing required field")
    preds = []
    for i, p in enumerate(doc["predictions"]):
        field = f"{origin}.predictions[{i}]"
        for key in ("activity_probs", "size", "member_points"):
            _require(key in p, f"{field}.{key}: missing required field")
        preds.append(GroupPrediction(
            activity_probs=_floats(p["activity_probs"], f"{field}.activity_probs"),
            size=float(f32(p["size"])),
            member_points=_floats(p["member_points"], f"{field}.member_points").reshape(-1, 2),
        ))
    out = PredictionSet(image_id=str(doc["image_id"]), predictions=tuple(preds))
    out.validate(n_id)
    return out


def load_predictions(path, n_id: int | None = None) -> PredictionSet:
    path = Path(path)
    doc = json.loads(path.read_text())
    return predictions_from_json(doc, n_id, origin=path.name)


# --- weights: JSON manifest + raw little-endian float32 blob ----------------

@dataclass(frozen=True)
class WeightsManifest:
    """Name -> (shape, byte offset) index into a float32 blob."""

    entries: dict[str, tuple[tuple[int, ...], int]]

    def validate(self, blob_size: int | None = None):
        spans = []
        for name, (shape, offset) in self.entries.items():
            count = int(np.prod(shape)) if shape else 1
            _require(offset >= 0 and offset % 4 == 0,
                     f"weights[{name}]: offset must be a nonnegative multiple of 4")
            spans.append((offset, offset + 4 * count, name))
        spans.sort()
        for (_, end_a, name_a), (start_b, _, name_b) in zip(spans, spans[1:]):
            _require(end_a <= start_b, f"weights[{name_a}] overlaps weights[{name_b}]")
        if blob_size is not None and spans:
            _require(spans[-1][1] <= blob_size,
                     f"weights[{spans[-1][2]}]: extends past end of blob")


def save_weights(entries: Mapping[str, np.ndarray], manifest_path, blob_path=None):
    """Write tensors as manifest.json + raw float32 blob (row-major, LE)."""
    manifest_path = Path(manifest_path)
    blob_path = Path(blob_path) if blob_path else manifest_path.with_suffix(".bin")
    index = {}
    chunks = []
    offset = 0
    for name in sorted(entries):
        arr = np.ascontiguousarray(np.asarray(entries[name], dtype=np.float64),
                                   dtype="<f4")
        index[name] = {"shape": list(arr.shape), "offset": offset}
        chunks.append(arr.tobytes())
        offset += arr.nbytes
    blob_path.write_bytes(b"".join(chunks))
    doc = {"blob": blob_path.name, "entries": index}
    manifest_path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_weights(manifest_path) -> dict[str, np.ndarray]:
    """Load a manifest + blob back into float64 arrays."""
    manifest_path = Path(manifest_path)
    doc = json.loads(manifest_path.read_text())
    _require(isinstance(doc, dict) and "entries" in doc, "weights manifest: missing entries")
    blob = (manifest_path.parent / doc.get("blob", manifest_path.stem + ".bin")).read_bytes()
    manifest = WeightsManifest(entries={
        name: (tuple(int(d) for d in meta["shape"]), int(meta["offset"]))
        for name, meta in doc["entries"].items()
    })
    manifest.validate(blob_size=len(blob))
    out = {}
    for name, (shape, offset) in manifest.entries.items():
        count = int(np.prod(shape)) if shape else 1
        flat = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        out[name] = flat.astype(np.float64).reshape(shape)
    return out


# --- feature maps share the weights container --------------------------------

def save_feature_maps(maps: FeatureMapSet, manifest_path, blob_path=None):
    entries = {f"level{i}": f32(lvl.data) for i, lvl in enumerate(maps.levels)}
    save_weights(entries, manifest_path, blob_path)


def load_feature_maps(manifest_path) -> FeatureMapSet:
    entries = load_weights(manifest_path)
    names = sorted(entries, key=lambda n: int(n.removeprefix("level")))
    _require(all(n.startswith("level") for n in names),
             "feature-map manifest: entries must be named level0, level1, ...")
    return FeatureMapSet(tuple(FeatureMap(entries[n]) for n in names))
