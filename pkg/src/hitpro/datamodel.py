"""Core domain types, dataset manifest/binary formats, checkpoint serialization.

On-disk formats:

* ``manifest.json``: one JSON document with a header (``d_in``,
  ``n_cameras_vis``, ``n_cameras_ir``) and a ``tracklets`` list of
  ``{tracklet_id, modality, camera_id, n_frames, feature_file, gt_identity?}``.
* ``<tracklet_id>.f32``: little-endian float32, row-major ``L x d_in``;
  file size is exactly ``4 * L * d_in`` bytes.
* ``checkpoint.hpt``: 4-byte little-endian header length, UTF-8 JSON header,
  then concatenated float32 blobs addressed by named sections.

Datasets and checkpoints are immutable after load and safe to share across
read-only workers.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

CHECKPOINT_FORMAT_VERSION = 1


class DatasetError(RuntimeError):
    """Malformed manifest or feature payload."""


class CheckpointError(RuntimeError):
    """Corrupt or incompatible checkpoint file."""


class Modality(enum.Enum):
    VIS = "VIS"
    IR = "IR"

    @property
    def other(self) -> "Modality":
        return Modality.IR if self is Modality.VIS else Modality.VIS


@dataclass(frozen=True)
class Tracklet:
    """A camera/modality-tagged sequence of frame feature vectors.

    ``gt_identity`` is evaluation-only ground truth; the training path never
    reads it (asserted by the label-blindness test).
    """

    tracklet_id: str
    modality: Modality
    camera_id: int
    frames: np.ndarray  # (L, d_in) float32
    gt_identity: Optional[int] = None

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise DatasetError(
                f"tracklet {self.tracklet_id}: frames must be a non-empty 2-D matrix"
            )
        if self.gt_identity is not None and self.gt_identity < 0:
            raise DatasetError(f"tracklet {self.tracklet_id}: negative gt_identity")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]


@dataclass(frozen=True)
class SubTracklet:
    """One of K contiguous, non-overlapping frame slices of a tracklet."""

    parent: str  # tracklet_id
    k: int
    start: int
    end: int  # half-open [start, end)

    def __post_init__(self):
        if self.end - self.start < 1:
            raise ValueError("sub-tracklet must contain at least one frame")

    def slice_frames(self, tracklet: Tracklet) -> np.ndarray:
        if tracklet.tracklet_id != self.parent:
            raise ValueError("sub-tracklet sliced against a foreign tracklet")
        return tracklet.frames[self.start : self.end]


@dataclass
class Prototype:
    """Unit-norm identity anchor for one tracklet."""

    tracklet_id: str
    modality: Modality
    camera_id: int
    vector: np.ndarray  # (d,) float64, unit norm


class PrototypeStore:
    """Per-(modality, camera) ordered prototype lists with id lookup.

    Order within a camera follows dataset order and is stable for the epoch.
    The store is the one mutable training structure: EMA updates rewrite
    prototype vectors in place.
    """

    def __init__(self, prototypes: list[Prototype]):
        self._groups: dict[tuple[Modality, int], list[Prototype]] = {}
        self._by_id: dict[str, Prototype] = {}
        for p in prototypes:
            if p.tracklet_id in self._by_id:
                raise ValueError(f"duplicate prototype for tracklet {p.tracklet_id}")
            self._groups.setdefault((p.modality, p.camera_id), []).append(p)
            self._by_id[p.tracklet_id] = p

    def group(self, modality: Modality, camera_id: int) -> list[Prototype]:
        return self._groups.get((modality, camera_id), [])

    def cameras(self, modality: Modality) -> list[int]:
        return sorted(c for (m, c) in self._groups if m is modality)

    def modality_prototypes(self, modality: Modality) -> list[Prototype]:
        out: list[Prototype] = []
        for cam in self.cameras(modality):
            out.extend(self.group(modality, cam))
        return out

    def get(self, tracklet_id: str) -> Prototype:
        try:
            return self._by_id[tracklet_id]
        except KeyError:
            raise KeyError(f"no prototype for tracklet {tracklet_id!r}") from None

    def __len__(self) -> int:
        return len(self._by_id)

    def __contains__(self, tracklet_id: str) -> bool:
        return tracklet_id in self._by_id


class PositiveKind(enum.Enum):
    INTRA_MODAL = "INTRA_MODAL"
    CROSS_MODAL = "CROSS_MODAL"


@dataclass(frozen=True)
class WeightedPositiveSet:
    """Accepted target prototypes for one source prototype, with soft weights.

    At most one entry per target camera; weights sum to 1 when non-empty.
    """

    source: str  # source prototype's tracklet_id
    kind: PositiveKind
    entries: tuple[tuple[str, float], ...]  # (target tracklet_id, weight)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def target_ids(self) -> tuple[str, ...]:
        return tuple(t for t, _ in self.entries)


@dataclass(frozen=True)
class TrainConfig:
    """All optimization hyperparameters and ablation toggles.

    Defaults follow the reference training recipe; desk-scale runs override
    sizes and epochs.
    """

    # architecture
    d_in: int = 16
    embed_dim: int = 32
    ffn_dim: int = 64
    pool_hidden_dim: int = 32
    n_tte_layers: int = 2
    seq_len: int = 6
    # prototyping
    n_subtracklets: int = 4  # K
    # temperatures
    loss_temp: float = 0.05
    weight_temp: float = 0.1
    # dynamic threshold schedule
    thresh_init: float = 0.99
    thresh_final: float = 0.90
    # prototype memory
    ema_momentum: float = 0.2
    # loss scheduling
    intra_start_epoch: int = 5
    cross_start_epoch: int = 15
    total_epochs: int = 60
    iters_per_epoch: int = 300
    # batch shape C x P x S
    batch_cameras: int = 2
    batch_tracklets: int = 2
    batch_subs: int = 2
    # optimizer
    lr: float = 0.00035
    sgd_momentum: float = 0.9
    lr_decay_every: int = 20
    lr_decay_factor: float = 0.1
    seed: int = 0
    # ablation toggles
    use_imcc: bool = True
    use_cm: bool = True
    use_hls: bool = True
    use_dts: bool = True
    fixed_threshold: float = 0.7  # used when use_dts is False
    use_swa: bool = True
    # normalization toggles (all on by default; see module docs)
    normalize_embeddings: bool = True
    normalize_prototypes: bool = True
    normalize_ema: bool = True

    def __post_init__(self):
        if not (0.0 < self.thresh_final <= self.thresh_init <= 1.0):
            raise ValueError("need 0 < thresh_final <= thresh_init <= 1")
        if not (0 <= self.intra_start_epoch <= self.cross_start_epoch <= self.total_epochs):
            raise ValueError("need 0 <= intra_start <= cross_start <= total_epochs")
        if self.loss_temp <= 0 or self.weight_temp <= 0:
            raise ValueError("temperatures must be positive")
        if not (0.0 < self.ema_momentum <= 1.0):
            raise ValueError("ema_momentum must be in (0, 1]")
        if self.n_subtracklets < 1:
            raise ValueError("n_subtracklets must be >= 1")
        if self.n_tte_layers not in (0, 1, 2):
            raise ValueError("n_tte_layers must be 0, 1 or 2")

    @property
    def batch_size(self) -> int:
        return self.batch_cameras * self.batch_tracklets * self.batch_subs

    def with_overrides(self, **kwargs) -> "TrainConfig":
        return replace(self, **kwargs)


@dataclass(frozen=True)
class Dataset:
    """Immutable collection of tracklets plus manifest header values."""

    d_in: int
    n_cameras_vis: int
    n_cameras_ir: int
    tracklets: tuple[Tracklet, ...]

    def __post_init__(self):
        by_id: dict[str, Tracklet] = {}
        for t in self.tracklets:
            if t.tracklet_id in by_id:
                raise DatasetError(f"duplicate tracklet_id {t.tracklet_id!r}")
            by_id[t.tracklet_id] = t
            if t.frames.shape[1] != self.d_in:
                raise DatasetError(
                    f"tracklet {t.tracklet_id}: feature dim {t.frames.shape[1]} != d_in {self.d_in}"
                )
            n_cams = self.n_cameras_vis if t.modality is Modality.VIS else self.n_cameras_ir
            if not (0 <= t.camera_id < n_cams):
                raise DatasetError(
                    f"tracklet {t.tracklet_id}: camera_id {t.camera_id} out of range "
                    f"for {t.modality.value} ({n_cams} cameras)"
                )
        object.__setattr__(self, "_by_id", by_id)

    def n_cameras(self, modality: Modality) -> int:
        return self.n_cameras_vis if modality is Modality.VIS else self.n_cameras_ir

    def by_modality(self, modality: Modality) -> list[Tracklet]:
        return [t for t in self.tracklets if t.modality is modality]

    def group(self, modality: Modality, camera_id: int) -> list[Tracklet]:
        return [t for t in self.tracklets if t.modality is modality and t.camera_id == camera_id]

    def get(self, tracklet_id: str) -> Tracklet:
        return self._by_id[tracklet_id]

    @property
    def has_labels(self) -> bool:
        return all(t.gt_identity is not None for t in self.tracklets)


def save_dataset(dataset: Dataset, out_dir: str | Path) -> Path:
    """Write manifest.json plus one .f32 payload per tracklet; returns manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for t in dataset.tracklets:
        feature_file = f"{t.tracklet_id}.f32"
        payload = np.ascontiguousarray(t.frames, dtype="<f4")
        (out / feature_file).write_bytes(payload.tobytes())
        entry = {
            "tracklet_id": t.tracklet_id,
            "modality": t.modality.value,
            "camera_id": t.camera_id,
            "n_frames": t.n_frames,
            "feature_file": feature_file,
        }
        if t.gt_identity is not None:
            entry["gt_identity"] = t.gt_identity
        entries.append(entry)
    manifest = {
        "d_in": dataset.d_in,
        "n_cameras_vis": dataset.n_cameras_vis,
        "n_cameras_ir": dataset.n_cameras_ir,
        "tracklets": entries,
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return manifest_path


def load_dataset(manifest_path: str | Path) -> Dataset:
    """Load a dataset; validates counts, dims and payload sizes against the manifest."""
    manifest_path = Path(manifest_path)
    if manifest_path.is_dir():
        manifest_path = manifest_path / "manifest.json"
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DatasetError(f"malformed manifest {manifest_path}: {exc}") from exc
    for key in ("d_in", "n_cameras_vis", "n_cameras_ir", "tracklets"):
        if key not in manifest:
            raise DatasetError(f"manifest missing required key {key!r}")
    d_in = int(manifest["d_in"])
    base = manifest_path.parent
    tracklets = []
    for entry in manifest["tracklets"]:
        tid = entry["tracklet_id"]
        n_frames = int(entry["n_frames"])
        payload_path = base / entry["feature_file"]
        raw = payload_path.read_bytes()  # missing file raises FileNotFoundError
        expected = 4 * n_frames * d_in
        if len(raw) != expected:
            raise DatasetError(
                f"tracklet {tid}: payload {payload_path.name} holds {len(raw)} bytes, "
                f"manifest implies {expected} (L={n_frames}, d_in={d_in})"
            )
        frames = np.frombuffer(raw, dtype="<f4").reshape(n_frames, d_in)
        tracklets.append(
            Tracklet(
                tracklet_id=tid,
                modality=Modality(entry["modality"]),
                camera_id=int(entry["camera_id"]),
                frames=frames,
                gt_identity=entry.get("gt_identity"),
            )
        )
    return Dataset(
        d_in=d_in,
        n_cameras_vis=int(manifest["n_cameras_vis"]),
        n_cameras_ir=int(manifest["n_cameras_ir"]),
        tracklets=tuple(tracklets),
    )


def _store_sections(store: PrototypeStore):
    """Deterministic (name, tracklet_ids, matrix) triples for a store."""
    out = []
    for modality in (Modality.VIS, Modality.IR):
        for cam in store.cameras(modality):
            protos = store.group(modality, cam)
            ids = [p.tracklet_id for p in protos]
            mat = np.stack([p.vector for p in protos]) if protos else np.zeros((0, 0))
            out.append((f"store.{modality.value}.{cam}", modality, cam, ids, mat))
    return out


def save_checkpoint(params, store: PrototypeStore, epoch: int, path: str | Path) -> None:
    """Serialize encoder parameters plus prototype store; float32 on disk."""
    sections: list[dict] = []
    blobs: list[bytes] = []
    offset = 0

    def add(name: str, arr: np.ndarray):
        nonlocal offset
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        sections.append({"name": name, "shape": list(arr.shape), "offset": offset})
        blobs.append(data)
        offset += len(data)

    for name, arr in params.named_arrays():
        add(f"encoder.{name}", arr)

    store_meta = []
    for name, modality, cam, ids, mat in _store_sections(store):
        add(name, mat)
        store_meta.append({"modality": modality.value, "camera_id": cam, "tracklet_ids": ids})

    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "epoch": int(epoch),
        "encoder": params.dims(),
        "sections": sections,
        "store_groups": store_meta,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path: str | Path):
    """Inverse of :func:`save_checkpoint`; returns ``(params, store, epoch)``."""
    from .encoder import EncoderParams  # deferred to avoid an import cycle

    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise CheckpointError(f"corrupt checkpoint {path}: shorter than header length field")
    (header_len,) = struct.unpack("<I", raw[:4])
    if len(raw) < 4 + header_len:
        raise CheckpointError(f"corrupt checkpoint {path}: truncated header")
    try:
        header = json.loads(raw[4 : 4 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint {path}: bad header ({exc})") from exc
    version = header.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint {path}: format version {version} != {CHECKPOINT_FORMAT_VERSION}"
        )
    blob = raw[4 + header_len :]

    arrays: dict[str, np.ndarray] = {}
    for sec in header["sections"]:
        shape = tuple(sec["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = sec["offset"]
        end = start + 4 * count
        if end > len(blob):
            raise CheckpointError(f"corrupt checkpoint {path}: truncated section {sec['name']}")
        arr = np.frombuffer(blob[start:end], dtype="<f4").reshape(shape).astype(np.float64)
        arrays[sec["name"]] = arr

    encoder_arrays = {
        name[len("encoder.") :]: arr for name, arr in arrays.items() if name.startswith("encoder.")
    }
    params = EncoderParams.from_named_arrays(header["encoder"], encoder_arrays)

    prototypes: list[Prototype] = []
    for group in header["store_groups"]:
        modality = Modality(group["modality"])
        cam = int(group["camera_id"])
        mat = arrays[f"store.{modality.value}.{cam}"]
        for tid, vec in zip(group["tracklet_ids"], mat):
            prototypes.append(
                Prototype(tracklet_id=tid, modality=modality, camera_id=cam, vector=vec.copy())
            )
    return params, PrototypeStore(prototypes), int(header["epoch"])
