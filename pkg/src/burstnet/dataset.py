"""Labeled burst datasets: generation, shard files, splits, batch iteration.

Layout on disk: one shard per class plus a human-readable manifest.

    manifest.json             canonical (sorted keys, indented) JSON
    class_0000.bin ...        fixed-record binary shards

Shard format: magic ``BSRD``, version u32, sample length u32, record count
u32, then records of L little-endian complex64 (interleaved float32 I/Q).

Every burst is reproducible from (dataset_seed, class_id, record index):
message content, fingerprint, optional interference/noise, and window
offset all draw from seed streams derived from those three values. Each
emitter keeps a fixed over-the-air address (ICAO / ACARS address) derived
from its ID, as a real transmitter would; the rest of each message is
randomized per burst.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import acars, adsb
from .burst import IQBurst
from .channel import add_awgn, finalize_burst, inject_interference
from .fingerprint import apply_fingerprint, make_profile

SHARD_MAGIC = b"BSRD"
SHARD_VERSION = 1
MANIFEST_VERSION = 1

DEFAULT_SAMPLE_RATE = {"acars": 48_000.0, "adsb": 10e6}


class DatasetError(ValueError):
    pass


@dataclass
class DatasetConfig:
    burst_kind: str  # "acars" | "adsb"
    num_classes: int
    per_class_range: tuple[int, int]
    test_per_class: int
    sample_len: int
    seed: int
    sample_rate_hz: float | None = None
    snr_range_db: tuple[float, float] | None = None  # None = clean
    interference_prob: float = 0.0
    interference_power_db: float = 10.0
    text_len: int | None = None  # ACARS only; None = randomized per burst

    def __post_init__(self):
        if self.burst_kind not in ("acars", "adsb"):
            raise DatasetError(f"unknown burst kind {self.burst_kind!r}")
        if self.text_len is not None and not 0 <= self.text_len <= acars.MAX_TEXT_LEN:
            raise DatasetError(
                f"text_len {self.text_len} outside 0..{acars.MAX_TEXT_LEN}")
        if self.num_classes < 2:
            raise DatasetError("num_classes must be >= 2")
        if self.per_class_range[0] <= self.test_per_class:
            raise DatasetError(
                f"per_class_range minimum {self.per_class_range[0]} must exceed "
                f"test_per_class {self.test_per_class} (empty training class)"
            )
        if self.sample_rate_hz is None:
            self.sample_rate_hz = DEFAULT_SAMPLE_RATE[self.burst_kind]


@dataclass
class ClassEntry:
    class_id: int
    emitter_id: str
    shard: str
    count: int
    checksum: int


@dataclass
class DatasetManifest:
    format_version: int
    burst_kind: str
    num_classes: int
    per_class_counts: list[int]
    test_per_class: int
    sample_len: int
    sample_rate_hz: float
    dataset_seed: int
    classes: list[ClassEntry]
    config: dict
    root: Path | None = None

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if k != "root"}
        return json.dumps(d, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str, root: Path | None = None) -> "DatasetManifest":
        d = json.loads(text)
        d["classes"] = [ClassEntry(**c) for c in d["classes"]]
        d["config"] = d.get("config", {})
        return cls(root=root, **d)

    def class_offsets(self) -> list[int]:
        offs, total = [], 0
        for c in self.classes:
            offs.append(total)
            total += c.count
        return offs

    @property
    def total_samples(self) -> int:
        return sum(c.count for c in self.classes)


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    return DatasetManifest.from_json(path.read_text(), root=path.parent)


def _emitter_address(emitter_id: str) -> int:
    return zlib.crc32(emitter_id.encode()) & 0xFFFFFF


def generate_burst(config: DatasetConfig, class_id: int, emitter_id: str,
                   profile, record_idx: int) -> IQBurst:
    """One reproducible labeled burst."""
    seed = config.seed
    msg_rng = np.random.default_rng(np.random.SeedSequence([seed, class_id, record_idx, 0]))
    if config.burst_kind == "acars":
        frame = acars.random_frame(msg_rng, config.text_len)
        frame.address = f".{_emitter_address(emitter_id) % 1_000_000:06d}"
        bits = acars.encode_acars(frame)
        burst = acars.modulate_acars(bits, config.sample_rate_hz)
    else:
        payload = msg_rng.integers(0, 2, size=adsb.PAYLOAD_BITS).astype(np.uint8)
        bits = adsb.encode_adsb(17, _emitter_address(emitter_id), payload)
        burst = adsb.modulate_adsb(bits, config.sample_rate_hz)
    burst.emitter_id = emitter_id
    burst = apply_fingerprint(burst, profile)
    if config.interference_prob > 0.0:
        irng = np.random.default_rng(np.random.SeedSequence([seed, class_id, record_idx, 1]))
        if irng.random() < config.interference_prob:
            burst = inject_interference(burst, 1, config.interference_power_db, irng)
    burst = finalize_burst(
        burst,
        config.sample_len,
        np.random.default_rng(np.random.SeedSequence([seed, class_id, record_idx, 2])),
        allow_crop=True,
    )
    if config.snr_range_db is not None:
        nrng = np.random.default_rng(np.random.SeedSequence([seed, class_id, record_idx, 3]))
        lo, hi = config.snr_range_db
        burst = add_awgn(burst, float(nrng.uniform(lo, hi)), nrng)
    return burst


def _write_shard(path: Path, records: np.ndarray) -> int:
    """records: (count, L) complex64. Returns CRC32 of the payload."""
    count, length = records.shape
    payload = np.ascontiguousarray(records.astype("<c8")).tobytes()
    header = SHARD_MAGIC + struct.pack("<III", SHARD_VERSION, length, count)
    path.write_bytes(header + payload)
    return zlib.crc32(payload)


def read_shard(path: Path) -> np.ndarray:
    blob = Path(path).read_bytes()
    if blob[:4] != SHARD_MAGIC:
        raise DatasetError(f"{path}: not a shard file (bad magic)")
    version, length, count = struct.unpack("<III", blob[4:16])
    if version != SHARD_VERSION:
        raise DatasetError(f"{path}: unsupported shard version {version}")
    expected = 16 + count * length * 8
    if len(blob) != expected:
        raise DatasetError(
            f"{path}: corrupted shard, expected {expected} bytes got {len(blob)} "
            f"(offset {min(len(blob), expected)})"
        )
    return np.frombuffer(blob[16:], dtype="<c8").reshape(count, length)


def generate_dataset(config: DatasetConfig, out_dir) -> DatasetManifest:
    """Generate all shards + manifest under out_dir. Deterministic in seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    count_rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0xC0]))
    lo, hi = config.per_class_range
    counts = [int(count_rng.integers(lo, hi + 1)) for _ in range(config.num_classes)]
    entries = []
    for class_id in range(config.num_classes):
        emitter_id = f"{config.burst_kind}-{config.seed}-{class_id:04d}"
        profile = make_profile(config.seed, emitter_id, config.burst_kind)
        records = np.empty((counts[class_id], config.sample_len), dtype=np.complex64)
        for j in range(counts[class_id]):
            records[j] = generate_burst(config, class_id, emitter_id, profile, j).samples
        shard_name = f"class_{class_id:04d}.bin"
        checksum = _write_shard(out / shard_name, records)
        entries.append(ClassEntry(class_id, emitter_id, shard_name, counts[class_id], checksum))
    manifest = DatasetManifest(
        format_version=MANIFEST_VERSION,
        burst_kind=config.burst_kind,
        num_classes=config.num_classes,
        per_class_counts=counts,
        test_per_class=config.test_per_class,
        sample_len=config.sample_len,
        sample_rate_hz=config.sample_rate_hz,
        dataset_seed=config.seed,
        classes=entries,
        config={
            "per_class_range": list(config.per_class_range),
            "snr_range_db": list(config.snr_range_db) if config.snr_range_db else None,
            "interference_prob": config.interference_prob,
            "interference_power_db": config.interference_power_db,
        },
        root=out,
    )
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


def split(manifest: DatasetManifest) -> tuple[list[int], list[int]]:
    """Stratified seeded split: exactly test_per_class test samples per class."""
    train, test = [], []
    offsets = manifest.class_offsets()
    for entry, offset in zip(manifest.classes, offsets):
        if entry.count < manifest.test_per_class + 1:
            raise DatasetError(
                f"class {entry.class_id} has {entry.count} samples, needs more than "
                f"test_per_class={manifest.test_per_class}"
            )
        rng = np.random.default_rng(
            np.random.SeedSequence([manifest.dataset_seed, 0x5B, entry.class_id])
        )
        picked = set(rng.choice(entry.count, size=manifest.test_per_class, replace=False).tolist())
        for j in range(entry.count):
            (test if j in picked else train).append(offset + j)
    return train, test


def load_all(manifest: DatasetManifest) -> tuple[np.ndarray, np.ndarray]:
    """All records as ((N, L) complex64, (N,) labels), in manifest order."""
    xs, ys = [], []
    for entry in manifest.classes:
        rec = read_shard(manifest.root / entry.shard)
        if rec.shape != (entry.count, manifest.sample_len):
            raise DatasetError(f"{entry.shard}: shape {rec.shape} disagrees with manifest")
        xs.append(rec)
        ys.append(np.full(entry.count, entry.class_id, dtype=np.int64))
    return np.concatenate(xs), np.concatenate(ys)


def to_tensor(records: np.ndarray) -> np.ndarray:
    """(N, L) complex -> (N, 2, L) float64 with I and Q channels."""
    return np.stack([records.real, records.imag], axis=1).astype(np.float64)


class BatchIterator:
    """Seeded, reshuffling epoch iterator over one split of a dataset."""

    def __init__(self, manifest: DatasetManifest, which: str, batch_size: int,
                 shuffle_seed: int = 0, wrap: bool = True):
        if which not in ("train", "test"):
            raise DatasetError(f"split must be 'train' or 'test', got {which!r}")
        train_idx, test_idx = split(manifest)
        self.indices = np.array(train_idx if which == "train" else test_idx)
        records, labels = load_all(manifest)
        self._x = records
        self._y = labels
        self.batch_size = batch_size
        self.shuffle_seed = shuffle_seed
        self.wrap = wrap
        self.epoch = 0
        self._order = self._permutation()
        self._pos = 0

    def _permutation(self):
        rng = np.random.default_rng(np.random.SeedSequence([self.shuffle_seed, self.epoch]))
        return self.indices[rng.permutation(len(self.indices))]

    def next_batch(self) -> tuple[np.ndarray, np.ndarray]:
        if self._pos >= len(self._order):
            if not self.wrap:
                raise StopIteration
            self.epoch += 1
            self._order = self._permutation()
            self._pos = 0
        sel = self._order[self._pos : self._pos + self.batch_size]
        self._pos += len(sel)
        return to_tensor(self._x[sel]), self._y[sel]

    def epoch_batches(self):
        """All batches of exactly one epoch (the last may be short)."""
        start_epoch = self.epoch
        while self.epoch == start_epoch:
            if self._pos >= len(self._order):
                self.epoch += 1
                self._order = self._permutation()
                self._pos = 0
                break
            yield self.next_batch()
