"""2 s observation-action chunks and the binary dataset container.

Container layout (all integers little-endian):

    file    := magic "SKYF" | u32 version | record*
    record  := u32 body_length | body
    body    := u32 chunk_id | u32 rollout_id | u32 start_index
               | u16 n_samples | u16 width | u16 height
               | u16 len | utf-8 query | u16 len | utf-8 scene_id
               | n_samples x 14 float32   (state p,v,q(x,y,z,w) then input f_th,omega)
               | n_samples x height x width x 3 uint8   (colormapped heatmaps, row-major)

The manifest is a JSON sidecar next to the container (`<stem>.manifest.json`).
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .dynamics import DT

MAGIC = b"SKYF"
FORMAT_VERSION = 1
DATASET_VERSION = 1
CHUNK_SAMPLES = 40  # 2 s at 20 Hz
RATE_HZ = 20

_HEADER = struct.Struct("<4sI")
_LEN = struct.Struct("<I")
_REC = struct.Struct("<IIIHHH")
_STR = struct.Struct("<H")


class DatasetError(ValueError):
    pass


@dataclass
class DemoChunk:
    chunk_id: int
    rollout_id: int
    start_index: int
    states: np.ndarray  # (40, 10) float32
    inputs: np.ndarray  # (40, 4) float32
    images: np.ndarray  # (40, H, W, 3) uint8
    query: str
    scene_id: str

    def __eq__(self, other):
        if not isinstance(other, DemoChunk):
            return NotImplemented
        return (self.chunk_id, self.rollout_id, self.start_index, self.query, self.scene_id) == (
            other.chunk_id, other.rollout_id, other.start_index, other.query, other.scene_id
        ) and np.array_equal(self.states, other.states) and np.array_equal(self.inputs, other.inputs) \
            and np.array_equal(self.images, other.images)


@dataclass
class DatasetManifest:
    master_seed: int
    scenes: list = field(default_factory=list)
    queries: list = field(default_factory=list)
    # {"rollout_id", "scene", "query", "samples", "reference_duration_s"}
    rollouts: list = field(default_factory=list)
    trajectory_count: int = 0
    total_samples: int = 0
    chunk_count: int = 0
    dropped_samples: int = 0
    failed_rollouts: int = 0
    discarded_trajectories: int = 0
    container_sha256: str = ""
    samples_per_chunk: int = CHUNK_SAMPLES
    rate_hz: int = RATE_HZ
    format_version: int = FORMAT_VERSION
    dataset_version: int = DATASET_VERSION

    @property
    def sample_counts(self) -> list[int]:
        return [int(r["samples"]) for r in self.rollouts]

    @classmethod
    def from_counts(cls, counts: Iterable[int], master_seed: int = 0, **kw) -> "DatasetManifest":
        counts = [int(c) for c in counts]
        m = cls(master_seed=master_seed, **kw)
        m.rollouts = [{"rollout_id": i, "scene": "", "query": "", "samples": c} for i, c in enumerate(counts)]
        m.trajectory_count = len(counts)
        m.total_samples = sum(counts)
        m.chunk_count = sum(c // CHUNK_SAMPLES for c in counts)
        m.dropped_samples = sum(c % CHUNK_SAMPLES for c in counts)
        return m

    def to_dict(self) -> dict:
        d = asdict(self)
        d["manifest_hash"] = manifest_hash(d)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetManifest":
        d = dict(d)
        d.pop("manifest_hash", None)
        if d.get("dataset_version") != DATASET_VERSION:
            raise DatasetError(f"unsupported dataset_version {d.get('dataset_version')!r}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise DatasetError(f"malformed manifest: {exc}") from exc


def manifest_hash(d: dict) -> str:
    body = {k: v for k, v in d.items() if k != "manifest_hash"}
    return hashlib.sha256(json.dumps(body, sort_keys=True, separators=(",", ":")).encode()).hexdigest()


# -- chunking --------------------------------------------------------------

def chunk_rollout(rollout, rollout_id: int = 0, query: str = "", scene_id: str = "",
                  first_chunk_id: int = 0) -> tuple[list[DemoChunk], int]:
    """Split a successful rollout into whole 40-sample chunks.

    Returns (chunks, dropped trailing samples).
    """
    if getattr(rollout, "failed", False):
        raise DatasetError("cannot chunk a failed rollout")
    n = len(rollout)
    states = rollout.state_array().astype(np.float32) if n else np.empty((0, 10), np.float32)
    inputs = rollout.input_array().astype(np.float32) if n else np.empty((0, 4), np.float32)
    if isinstance(rollout.images, np.ndarray):
        images = rollout.images.astype(np.uint8, copy=False)
    elif len(rollout.images):
        images = np.stack([img.rgb_u8() for img in rollout.images])
    else:
        images = np.zeros((n, 0, 0, 3), dtype=np.uint8)
    chunks = []
    for c in range(n // CHUNK_SAMPLES):
        s = c * CHUNK_SAMPLES
        sl = slice(s, s + CHUNK_SAMPLES)
        chunks.append(DemoChunk(first_chunk_id + c, rollout_id, s, states[sl].copy(), inputs[sl].copy(),
                                images[sl].copy(), query, scene_id))
    return chunks, n % CHUNK_SAMPLES


def shuffle_chunks(chunks: list, seed: int) -> list:
    if not chunks:
        return []
    order = np.random.default_rng(seed).permutation(len(chunks))
    return [chunks[i] for i in order]


# -- container -------------------------------------------------------------

def encode_chunk(c: DemoChunk) -> bytes:
    n = c.states.shape[0]
    h, w = (c.images.shape[1], c.images.shape[2]) if c.images.ndim == 4 else (0, 0)
    q = c.query.encode("utf-8")
    s = c.scene_id.encode("utf-8")
    payload = np.concatenate([c.states.astype("<f4"), c.inputs.astype("<f4")], axis=1)
    body = b"".join([
        _REC.pack(c.chunk_id, c.rollout_id, c.start_index, n, w, h),
        _STR.pack(len(q)), q, _STR.pack(len(s)), s,
        payload.tobytes(),
        np.ascontiguousarray(c.images, dtype=np.uint8).tobytes(),
    ])
    return _LEN.pack(len(body)) + body


def container_bytes(chunks: Iterable[DemoChunk]) -> bytes:
    return _HEADER.pack(MAGIC, FORMAT_VERSION) + b"".join(encode_chunk(c) for c in chunks)


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".manifest.json")


def write_dataset(chunks: list, manifest: DatasetManifest, path) -> DatasetManifest:
    """Write the container and its manifest sidecar; fills in the checksum."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = container_bytes(chunks)
    path.write_bytes(data)
    manifest.container_sha256 = hashlib.sha256(data).hexdigest()
    manifest_path(path).write_text(json.dumps(manifest.to_dict(), indent=1, sort_keys=True) + "\n")
    return manifest


def _decode(data: bytes) -> list[tuple[int, DemoChunk]]:
    if len(data) < _HEADER.size:
        raise DatasetError(f"truncated container at byte offset {len(data)}: header incomplete")
    magic, version = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise DatasetError(f"bad magic {magic!r} at byte offset 0")
    if version != FORMAT_VERSION:
        raise DatasetError(f"unsupported container version {version} at byte offset 4")
    off = _HEADER.size
    out = []
    while off < len(data):
        start = off
        if off + _LEN.size > len(data):
            raise DatasetError(f"truncated container at byte offset {off}: record length incomplete")
        (blen,) = _LEN.unpack_from(data, off)
        off += _LEN.size
        end = off + blen
        if end > len(data):
            raise DatasetError(f"truncated container at byte offset {start}: record needs {blen} bytes, "
                               f"{len(data) - off} available")
        try:
            cid, rid, sidx, n, w, h = _REC.unpack_from(data, off)
            p = off + _REC.size
            (ql,) = _STR.unpack_from(data, p)
            query = data[p + 2 : p + 2 + ql].decode("utf-8")
            p += 2 + ql
            (sl,) = _STR.unpack_from(data, p)
            scene = data[p + 2 : p + 2 + sl].decode("utf-8")
            p += 2 + sl
            nf = n * 14 * 4
            ni = n * h * w * 3
            if p + nf + ni != end:
                raise DatasetError(f"record at byte offset {start}: length field {blen} does not match contents")
            payload = np.frombuffer(data, dtype="<f4", count=n * 14, offset=p).reshape(n, 14).astype(np.float32)
            images = np.frombuffer(data, dtype=np.uint8, count=ni, offset=p + nf).reshape(n, h, w, 3).copy()
        except (struct.error, UnicodeDecodeError, ValueError) as exc:
            if isinstance(exc, DatasetError):
                raise
            raise DatasetError(f"corrupt record at byte offset {start}: {exc}") from exc
        out.append((start, DemoChunk(cid, rid, sidx, payload[:, :10].copy(), payload[:, 10:].copy(),
                                     images, query, scene)))
        off = end
    return out


def read_chunks(path) -> list[DemoChunk]:
    return [c for _, c in _decode(Path(path).read_bytes())]


def read_manifest(path) -> DatasetManifest:
    mp = manifest_path(path)
    try:
        return DatasetManifest.from_dict(json.loads(mp.read_text()))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest {mp}: {exc}") from exc


def read_dataset(path) -> tuple[list[DemoChunk], DatasetManifest]:
    return read_chunks(path), read_manifest(path)


class DatasetReader:
    """Random access by chunk position; the offset table is built once."""

    def __init__(self, path):
        self._data = Path(path).read_bytes()
        self._records = _decode(self._data)

    def __len__(self):
        return len(self._records)

    def __getitem__(self, i: int) -> DemoChunk:
        return self._records[i][1]

    def offset(self, i: int) -> int:
        return self._records[i][0]


# -- statistics & verification ----------------------------------------------

def identity_violations(m: DatasetManifest) -> list[str]:
    counts = m.sample_counts
    checks = [
        ("total_samples == sum(rollout samples)", m.total_samples, sum(counts)),
        ("chunk_count == sum(floor(samples / 40))", m.chunk_count, sum(c // CHUNK_SAMPLES for c in counts)),
        ("dropped_samples == sum(samples mod 40)", m.dropped_samples, sum(c % CHUNK_SAMPLES for c in counts)),
        ("total_samples == 40 * chunk_count + dropped_samples", m.total_samples,
         CHUNK_SAMPLES * m.chunk_count + m.dropped_samples),
        ("trajectory_count == number of rollouts", m.trajectory_count, len(counts)),
    ]
    return [f"{name}: {a} != {b}" for name, a, b in checks if a != b]


def dataset_stats(m: DatasetManifest) -> dict:
    bad = identity_violations(m)
    if bad:
        raise DatasetError("manifest identity violated: " + "; ".join(bad))
    n = m.trajectory_count
    mean = m.total_samples / n if n else 0.0
    return {
        "trajectories": n,
        "queries": len(m.queries),
        "scenes": len(m.scenes),
        "total_samples": m.total_samples,
        "chunked_samples": m.chunk_count * CHUNK_SAMPLES,
        "dropped_samples": m.dropped_samples,
        "chunks": m.chunk_count,
        "mean_samples_per_trajectory": mean,
        "mean_duration_s": (mean - 1) * DT if n else 0.0,
        "failed_rollouts": m.failed_rollouts,
        "discarded_trajectories": m.discarded_trajectories,
    }


def verify_dataset(path) -> list[str]:
    """Every container/manifest identity; returns problems, first offender first."""
    path = Path(path)
    try:
        m = read_manifest(path)
    except DatasetError as exc:
        return [str(exc)]
    problems = []
    stored = m.to_dict()
    raw = json.loads(manifest_path(path).read_text())
    if raw.get("manifest_hash") != stored["manifest_hash"]:
        problems.append("manifest hash does not match manifest contents")
    problems += identity_violations(m)
    try:
        data = path.read_bytes()
    except OSError as exc:
        return problems + [f"cannot read container: {exc}"]
    if hashlib.sha256(data).hexdigest() != m.container_sha256:
        problems.append("container checksum does not match manifest")
    try:
        records = _decode(data)
    except DatasetError as exc:
        return problems + [str(exc)]

    if len(records) != m.chunk_count:
        problems.append(f"container holds {len(records)} chunks, manifest says {m.chunk_count}")
    samples = {int(r["rollout_id"]): int(r["samples"]) for r in m.rollouts}
    seen_ids, per_rollout = set(), {}
    for off, c in records:
        where = f"chunk {c.chunk_id} at byte offset {off}"
        if c.chunk_id in seen_ids:
            problems.append(f"{where}: duplicate chunk id")
        seen_ids.add(c.chunk_id)
        if c.states.shape[0] != CHUNK_SAMPLES:
            problems.append(f"{where}: {c.states.shape[0]} samples, expected {CHUNK_SAMPLES}")
        if c.rollout_id not in samples:
            problems.append(f"{where}: unknown rollout {c.rollout_id}")
            continue
        if c.start_index % CHUNK_SAMPLES or c.start_index + CHUNK_SAMPLES > samples[c.rollout_id]:
            problems.append(f"{where}: start index {c.start_index} outside rollout {c.rollout_id}")
        if not np.all(np.isfinite(c.states)) or not np.all(np.isfinite(c.inputs)):
            problems.append(f"{where}: non-finite values")
        qn = np.linalg.norm(c.states[:, 6:10].astype(float), axis=1)
        if np.any(np.abs(qn - 1.0) > 1e-5):
            problems.append(f"{where}: quaternion not unit norm")
        if np.any(c.inputs[:, 0] < 0) or np.any(c.inputs[:, 0] > 1):
            problems.append(f"{where}: thrust outside [0, 1]")
        per_rollout.setdefault(c.rollout_id, []).append(c.start_index)
    for rid, n in samples.items():
        got = sorted(per_rollout.get(rid, []))
        want = list(range(0, (n // CHUNK_SAMPLES) * CHUNK_SAMPLES, CHUNK_SAMPLES))
        if got != want:
            problems.append(f"rollout {rid}: chunk starts {got[:5]}... do not tile {n} samples")
    return problems
