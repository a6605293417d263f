"""Deterministic multi-agent group-activity simulator and dataset files.

Six scripted behaviors unfold in a square arena.  Every clip starts with a
shared random-walk warmup so its first frames carry no class information;
the class dynamics only kick in afterwards.  Per-agent features are a
fixed random projection of kinematic descriptors, never of absolute
positions or labels, so models must read the motion itself.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError

CLASS_NAMES = ("converge", "disperse", "follow", "queue", "orbit", "mill")

_DESCRIPTOR_DIM = 8
_ORBIT_RATE = 0.3          # radians per frame
_QUEUE_SPACING = 0.6       # arena units between queue slots
_TEST_STREAM_OFFSET = 1 << 20  # keeps train/test per-clip streams disjoint


@dataclass(frozen=True)
class DatasetSpec:
    """Everything that determines a dataset byte for byte."""

    classes: tuple[str, ...] = CLASS_NAMES
    n_train: int = 2400
    n_test: int = 600
    n_agents: int = 6
    n_frames: int = 20
    feat_dim: int = 16
    arena: float = 10.0
    ambiguity: float = 0.2   # fraction of frames driven by the shared warmup
    speed: float = 0.4
    position_noise: float = 0.05
    feature_noise: float = 0.1
    seed: int = 7

    def __post_init__(self):
        if not 0.0 <= self.ambiguity < 1.0:
            raise DataError(f"ambiguity must be in [0, 1), got {self.ambiguity}")
        if self.feat_dim < _DESCRIPTOR_DIM:
            raise DataError(f"feat_dim must be >= {_DESCRIPTOR_DIM}, got {self.feat_dim}")
        unknown = [c for c in self.classes if c not in CLASS_NAMES]
        if unknown:
            raise DataError(f"unknown classes: {unknown}")

    def projection(self) -> tuple[np.ndarray, np.ndarray]:
        """Frozen feature projection and bias, shared by both splits."""
        rng = np.random.default_rng(self.seed)
        proj = rng.normal(0.0, 1.0 / math.sqrt(_DESCRIPTOR_DIM),
                          (self.feat_dim, _DESCRIPTOR_DIM))
        bias = rng.normal(0.0, 0.5, self.feat_dim)
        return proj, bias

    def ambiguity_frames(self) -> int:
        return int(math.ceil(self.ambiguity * self.n_frames - 1e-9))


@dataclass
class Clip:
    label: int
    positions: np.ndarray       # [T, N, 2] raw arena units
    features: np.ndarray        # [T, N, D]
    positions_norm: np.ndarray  # [T, N, 2] divided by the arena size


@dataclass
class Dataset:
    classes: tuple[str, ...]
    n_agents: int
    n_frames: int
    feat_dim: int
    arena: float
    projection: np.ndarray
    bias: np.ndarray
    clips: list[Clip] = field(default_factory=list)

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def subset(self, labels) -> "Dataset":
        wanted = set(labels)
        return Dataset(self.classes, self.n_agents, self.n_frames, self.feat_dim,
                       self.arena, self.projection, self.bias,
                       [c for c in self.clips if c.label in wanted])


# ---------------------------------------------------------------------------
# dynamics

def _unit(vec: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(vec, axis=-1, keepdims=True)
    return np.where(norm > 1e-12, vec / np.maximum(norm, 1e-12), 0.0)


def _mill_step(pos, spec, rng):
    angles = rng.uniform(0.0, 2.0 * math.pi, pos.shape[0])
    return pos + spec.speed * np.stack([np.cos(angles), np.sin(angles)], axis=1)


def _converge_step(pos, spec, rng):
    center = pos.mean(axis=0)
    offset = center - pos
    dist = np.linalg.norm(offset, axis=1, keepdims=True)
    step = np.minimum(dist, spec.speed)
    return pos + step * _unit(offset)


def _disperse_step(pos, spec, rng):
    center = pos.mean(axis=0)
    away = _unit(pos - center)
    idle = np.all(away == 0.0, axis=1)
    if idle.any():
        angles = rng.uniform(0.0, 2.0 * math.pi, int(idle.sum()))
        away[idle] = np.stack([np.cos(angles), np.sin(angles)], axis=1)
    return pos + spec.speed * away


def _orbit_step(pos, spec, rng):
    center = pos.mean(axis=0)
    c, s = math.cos(_ORBIT_RATE), math.sin(_ORBIT_RATE)
    rot = np.array([[c, -s], [s, c]])
    return center + (pos - center) @ rot.T


def _follow_step(pos, spec, rng, leader: int):
    nxt = pos.copy()
    nxt[leader] = _mill_step(pos[leader:leader + 1], spec, rng)[0]
    others = np.arange(pos.shape[0]) != leader
    offset = pos[leader] - pos[others]
    dist = np.linalg.norm(offset, axis=1, keepdims=True)
    step = np.minimum(dist, spec.speed)
    nxt[others] = pos[others] + step * _unit(offset)
    return nxt


def _queue_step(pos, spec, rng, direction: np.ndarray, ranks: np.ndarray):
    nxt = np.empty_like(pos)
    head = int(np.argmin(ranks))
    nxt[head] = pos[head] + spec.speed * direction
    for i in range(pos.shape[0]):
        if i == head:
            continue
        target = pos[head] - ranks[i] * _QUEUE_SPACING * direction
        offset = target - pos[i]
        dist = np.linalg.norm(offset)
        step = min(dist, spec.speed)
        nxt[i] = pos[i] + step * _unit(offset[None])[0]
    return nxt


def simulate_clip(class_name: str, spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    """Positions [T, N, 2] for one clip of the given behavior.

    The first ceil(ambiguity * T) frames follow the shared random walk for
    every class; the class dynamics start afterwards.  Positions are
    clamped to the arena.
    """
    if class_name not in CLASS_NAMES:
        raise DataError(f"unknown class {class_name!r}")
    n, t = spec.n_agents, spec.n_frames
    warmup = spec.ambiguity_frames()
    pos = rng.uniform(0.25 * spec.arena, 0.75 * spec.arena, (n, 2))
    frames = [pos]
    leader = None
    queue_dir = None
    queue_ranks = None
    for step_idx in range(1, t):
        if step_idx < warmup or class_name == "mill":
            pos = _mill_step(pos, spec, rng)
        else:
            if class_name == "follow" and leader is None:
                leader = int(rng.integers(n))
            if class_name == "queue" and queue_dir is None:
                angle = rng.uniform(0.0, 2.0 * math.pi)
                queue_dir = np.array([math.cos(angle), math.sin(angle)])
                proj = frames[-1] @ queue_dir
                order = np.argsort(-proj, kind="stable")
                queue_ranks = np.empty(n)
                queue_ranks[order] = np.arange(n)
            if class_name == "converge":
                pos = _converge_step(pos, spec, rng)
            elif class_name == "disperse":
                pos = _disperse_step(pos, spec, rng)
            elif class_name == "orbit":
                pos = _orbit_step(pos, spec, rng)
            elif class_name == "follow":
                pos = _follow_step(pos, spec, rng, leader)
            elif class_name == "queue":
                pos = _queue_step(pos, spec, rng, queue_dir, queue_ranks)
        if spec.position_noise > 0.0:
            pos = pos + rng.normal(0.0, spec.position_noise, (n, 2))
        pos = np.clip(pos, 0.0, spec.arena)
        frames.append(pos)
    return np.stack(frames)


def kinematic_descriptors(positions: np.ndarray) -> np.ndarray:
    """Per agent and frame: velocity, speed, heading, and centroid geometry.

    Velocity is a backward difference (zero at the first frame); headings of
    stationary agents are zeroed.  Absolute position never appears.
    """
    t, n, _ = positions.shape
    vel = np.zeros((t, n, 2))
    vel[1:] = positions[1:] - positions[:-1]
    speed = np.linalg.norm(vel, axis=2, keepdims=True)
    heading = np.where(speed > 1e-12, vel / np.maximum(speed, 1e-12), 0.0)
    center = positions.mean(axis=1, keepdims=True)
    offset = center - positions
    center_dist = np.linalg.norm(offset, axis=2, keepdims=True)
    to_center = np.where(center_dist > 1e-12, offset / np.maximum(center_dist, 1e-12), 0.0)
    return np.concatenate([vel, speed, heading, center_dist, to_center], axis=2)


def featurize(positions: np.ndarray, spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    """Features [T, N, D]: ReLU of a frozen projection of the descriptors plus noise."""
    proj, bias = spec.projection()
    desc = kinematic_descriptors(positions)
    feats = np.maximum(desc @ proj.T + bias, 0.0)
    if spec.feature_noise > 0.0:
        feats = feats + rng.normal(0.0, spec.feature_noise, feats.shape)
    return feats


def _clip_rng(spec: DatasetSpec, stream_index: int) -> np.random.Generator:
    return np.random.default_rng(spec.seed ^ stream_index)


def build_split(spec: DatasetSpec, split: str) -> Dataset:
    """Materialize one split; per-clip streams are disjoint across splits."""
    if split == "train":
        count, offset = spec.n_train, 0
    elif split == "test":
        count, offset = spec.n_test, _TEST_STREAM_OFFSET
    else:
        raise DataError(f"unknown split {split!r}")
    proj, bias = spec.projection()
    ds = Dataset(tuple(spec.classes), spec.n_agents, spec.n_frames, spec.feat_dim,
                 spec.arena, proj, bias)
    for i in range(count):
        label = i % len(spec.classes)
        rng = _clip_rng(spec, offset + i)
        positions = simulate_clip(spec.classes[label], spec, rng)
        features = featurize(positions, spec, rng)
        ds.clips.append(Clip(label=label, positions=positions, features=features,
                             positions_norm=positions / spec.arena))
    return ds


# ---------------------------------------------------------------------------
# file format (version 1)

def _fmt(x: float) -> str:
    return format(float(x), ".9g")


def _fmt_array(arr: np.ndarray) -> str:
    if arr.ndim == 1:
        return "[" + ",".join(_fmt(v) for v in arr) + "]"
    return "[" + ",".join(_fmt_array(row) for row in arr) + "]"


def save_dataset(ds: Dataset, path: str) -> None:
    """Write the version-1 JSON format with 9-significant-digit floats."""
    parts = [
        '{"version":1',
        ',"classes":' + json.dumps(list(ds.classes)),
        f',"agents":{ds.n_agents}',
        f',"frames":{ds.n_frames}',
        f',"feat_dim":{ds.feat_dim}',
        f',"arena":{_fmt(ds.arena)}',
        ',"projection":' + _fmt_array(ds.projection),
        ',"bias":' + _fmt_array(ds.bias),
        ',"clips":[',
    ]
    clip_parts = []
    for clip in ds.clips:
        clip_parts.append(
            '{"label":%d,"positions":%s,"features":%s}'
            % (clip.label, _fmt_array(clip.positions), _fmt_array(clip.features))
        )
    parts.append(",".join(clip_parts))
    parts.append("]}")
    with open(path, "w") as fh:
        fh.write("".join(parts))


def generate_dataset(spec: DatasetSpec, train_path: str, test_path: str | None = None) -> None:
    """Generate and write the train split, and optionally the test split."""
    save_dataset(build_split(spec, "train"), train_path)
    if test_path is not None:
        save_dataset(build_split(spec, "test"), test_path)


def _require(condition: bool, where: str, message: str) -> None:
    if not condition:
        raise DataError(f"{where}: {message}")


def load_dataset(path: str) -> Dataset:
    """Load and validate a version-1 dataset file.

    Positions are normalized by the arena for model consumption; the raw
    positions stay available for metric reporting.
    """
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read dataset {path!r}: {exc}") from exc
    _require(isinstance(raw, dict), path, "top-level value must be an object")
    _require(raw.get("version") == 1, "version", f"unsupported version {raw.get('version')!r}")
    for key in ("classes", "agents", "frames", "feat_dim", "arena", "projection", "bias", "clips"):
        _require(key in raw, key, "missing field")
    classes = tuple(raw["classes"])
    n_agents, n_frames, feat_dim = raw["agents"], raw["frames"], raw["feat_dim"]
    arena = float(raw["arena"])
    _require(arena > 0, "arena", "must be positive")
    projection = np.asarray(raw["projection"], dtype=np.float64)
    bias = np.asarray(raw["bias"], dtype=np.float64)
    _require(projection.shape == (feat_dim, _DESCRIPTOR_DIM), "projection",
             f"expected shape ({feat_dim}, {_DESCRIPTOR_DIM}), got {projection.shape}")
    _require(bias.shape == (feat_dim,), "bias", f"expected shape ({feat_dim},), got {bias.shape}")
    ds = Dataset(classes, n_agents, n_frames, feat_dim, arena, projection, bias)
    for idx, rec in enumerate(raw["clips"]):
        where = f"clips[{idx}]"
        _require(isinstance(rec, dict), where, "clip record must be an object")
        label = rec.get("label")
        _require(isinstance(label, int) and 0 <= label < len(classes), f"{where}.label",
                 f"label {label!r} outside [0, {len(classes)})")
        try:
            positions = np.asarray(rec["positions"], dtype=np.float64)
            features = np.asarray(rec["features"], dtype=np.float64)
        except (KeyError, ValueError) as exc:
            raise DataError(f"{where}: bad tensor data ({exc})") from exc
        _require(positions.shape == (n_frames, n_agents, 2), f"{where}.positions",
                 f"expected shape ({n_frames}, {n_agents}, 2), got {positions.shape}")
        _require(features.shape == (n_frames, n_agents, feat_dim), f"{where}.features",
                 f"expected shape ({n_frames}, {n_agents}, {feat_dim}), got {features.shape}")
        _require(bool(np.isfinite(positions).all()), f"{where}.positions", "non-finite values")
        _require(bool(np.isfinite(features).all()), f"{where}.features", "non-finite values")
        _require(bool((positions >= -1e-9).all() and (positions <= arena + 1e-9).all()),
                 f"{where}.positions", "positions outside the arena")
        ds.clips.append(Clip(label=label, positions=positions, features=features,
                             positions_norm=positions / arena))
    return ds


# ---------------------------------------------------------------------------
# hand-crafted statistics oracle (dataset sanity, not part of the model)

def clip_statistics(positions: np.ndarray, first_frame: int, last_frame: int) -> np.ndarray:
    """(mean pairwise-distance trend, mean angular velocity) over a frame range.

    Frames are 1-based inclusive.  These two numbers separate contracting,
    expanding, rotating, and drifting groups.
    """
    if not 1 <= first_frame <= last_frame <= positions.shape[0]:
        raise ShapeError(f"bad frame range [{first_frame}, {last_frame}]")
    seg = positions[first_frame - 1:last_frame]
    diffs = seg[:, :, None, :] - seg[:, None, :, :]
    dists = np.linalg.norm(diffs, axis=-1)
    n = seg.shape[1]
    if n < 2 or seg.shape[0] < 2:
        return np.zeros(2)
    mask = ~np.eye(n, dtype=bool)
    mpd = dists[:, mask].mean(axis=1)
    trend = (mpd[-1] - mpd[0]) / (seg.shape[0] - 1)
    offsets = seg - seg.mean(axis=1, keepdims=True)
    angles = np.arctan2(offsets[..., 1], offsets[..., 0])
    dtheta = np.diff(angles, axis=0)
    dtheta = (dtheta + math.pi) % (2.0 * math.pi) - math.pi
    return np.array([trend, dtheta.mean()])


class NearestCentroidOracle:
    """Nearest class centroid on z-scored clip statistics."""

    def __init__(self, centers: np.ndarray, scale: np.ndarray, labels: list[int]):
        self.centers = centers
        self.scale = scale
        self.labels = labels

    @classmethod
    def fit(cls, dataset: Dataset, first_frame: int, last_frame: int) -> "NearestCentroidOracle":
        stats = np.stack([clip_statistics(c.positions, first_frame, last_frame)
                          for c in dataset.clips])
        labels = sorted({c.label for c in dataset.clips})
        scale = np.maximum(stats.std(axis=0), 1e-9)
        centers = np.stack([
            stats[[c.label == lab for c in dataset.clips]].mean(axis=0) for lab in labels
        ])
        return cls(centers, scale, labels)

    def predict(self, positions: np.ndarray, first_frame: int, last_frame: int) -> int:
        stat = clip_statistics(positions, first_frame, last_frame)
        d = np.linalg.norm((self.centers - stat) / self.scale, axis=1)
        return self.labels[int(np.argmin(d))]

    def accuracy(self, dataset: Dataset, first_frame: int, last_frame: int) -> float:
        hits = sum(
            self.predict(c.positions, first_frame, last_frame) == c.label
            for c in dataset.clips
        )
        return hits / len(dataset.clips)
