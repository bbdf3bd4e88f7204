"""Dataset ingestion, crop sampling, and synthetic signal generation.

On-disk layout: a CSV manifest (`id,path,target,split`) next to one binary
file per recording. The record format is little-endian throughout:

    magic "BGS1" | u32 version | f64 sampling_rate | u64 n_samples |
    n_samples * f32 samples | u8 initial rhythm tag | u32 n_changepoints |
    per changepoint: u64 sample index + u8 tag (0 normal, 1 AF)

A changepoint's tag applies from its index onward; the leading byte tags
the stretch before the first changepoint.

The synthetic generator stands in for clinical data: regular spike trains
with a pre-spike bump for the normal class, irregular gamma-distributed
beat intervals with a low-amplitude oscillation for the AF class, plus an
optional slice of deliberately intermediate recordings so the uncertainty
machinery has something to reject.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError, UsageError

RECORD_MAGIC = b"BGS1"
RECORD_VERSION = 1
SYNTH_SAMPLING_RATE = 300.0


@dataclass(frozen=True)
class RhythmAnnotation:
    """Piecewise-constant rhythm tags: initial tag plus change indices."""

    initial_tag: int
    changepoints: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        if self.initial_tag not in (0, 1):
            raise ValueError(f"initial tag must be 0 or 1, got {self.initial_tag}")
        prev = -1
        for idx, tag in self.changepoints:
            if tag not in (0, 1):
                raise ValueError(f"changepoint tag must be 0 or 1, got {tag}")
            if idx <= prev:
                raise ValueError("changepoint indices must be strictly increasing")
            prev = idx


@dataclass
class SignalRecord:
    """One recording: samples, rate, target, optional rhythm annotation."""

    id: str
    sampling_rate: float
    samples: np.ndarray
    target: float
    rhythm: RhythmAnnotation | None = None

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        if self.samples.size == 0:
            raise ValueError(f"record {self.id!r}: samples are empty")
        if not (self.sampling_rate > 0):
            raise ValueError(f"record {self.id!r}: sampling rate must be positive")
        if not (0.0 <= self.target <= 1.0):
            raise ValueError(f"record {self.id!r}: target {self.target} outside [0,1]")
        if self.rhythm is not None and self.rhythm.changepoints:
            last = self.rhythm.changepoints[-1][0]
            first = self.rhythm.changepoints[0][0]
            if first < 0 or last >= self.samples.size:
                raise ValueError(
                    f"record {self.id!r}: changepoint outside [0, {self.samples.size})"
                )

    def __len__(self) -> int:
        return int(self.samples.size)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    path: str
    target: float
    split: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    seed: int | None = None


@dataclass
class Dataset:
    records: list[SignalRecord]
    manifest: DatasetManifest

    def _by_split(self, split: str) -> list[SignalRecord]:
        wanted = {e.id for e in self.manifest.entries if e.split == split}
        return [r for r in self.records if r.id in wanted]

    def train_records(self) -> list[SignalRecord]:
        return self._by_split("train")

    def val_records(self) -> list[SignalRecord]:
        return self._by_split("val")


@dataclass(frozen=True)
class CropProvenance:
    record_id: str
    start: int
    resample_factor: float
    flipped: bool
    padded: bool


@dataclass
class CropBatch:
    crops: np.ndarray          # (batch, 1, crop_len) float32
    targets: np.ndarray        # (batch,) float64
    provenance: list[CropProvenance]


@dataclass(frozen=True)
class AugmentConfig:
    resample_min: float = 0.8
    resample_max: float = 1.25


# -- record I/O --------------------------------------------------------------


def write_record(path, record: SignalRecord) -> None:
    rhythm = record.rhythm
    if rhythm is None:
        rhythm = RhythmAnnotation(1 if record.target >= 0.5 else 0, ())
    with open(path, "wb") as fh:
        fh.write(RECORD_MAGIC)
        fh.write(struct.pack("<I", RECORD_VERSION))
        fh.write(struct.pack("<d", float(record.sampling_rate)))
        fh.write(struct.pack("<Q", record.samples.size))
        fh.write(np.ascontiguousarray(record.samples, dtype="<f4").tobytes())
        fh.write(struct.pack("<B", rhythm.initial_tag))
        fh.write(struct.pack("<I", len(rhythm.changepoints)))
        for idx, tag in rhythm.changepoints:
            fh.write(struct.pack("<QB", idx, tag))


def _read_exact(fh, n: int, path, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise DataError(f"{path}: truncated while reading {what}")
    return data


def read_record(path, record_id: str, target: float) -> SignalRecord:
    path = Path(path)
    if not path.exists():
        raise DataError(f"record file missing: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != RECORD_MAGIC:
            raise DataError(f"{path}: malformed header (magic {magic!r})")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, path, "version"))
        if version != RECORD_VERSION:
            raise DataError(f"{path}: unsupported record version {version}")
        (rate,) = struct.unpack("<d", _read_exact(fh, 8, path, "sampling rate"))
        (count,) = struct.unpack("<Q", _read_exact(fh, 8, path, "sample count"))
        samples = np.frombuffer(
            _read_exact(fh, 4 * count, path, "samples"), dtype="<f4").copy()
        (initial_tag,) = struct.unpack("<B", _read_exact(fh, 1, path, "initial tag"))
        (n_cp,) = struct.unpack("<I", _read_exact(fh, 4, path, "changepoint count"))
        cps = []
        for _ in range(n_cp):
            idx, tag = struct.unpack("<QB", _read_exact(fh, 9, path, "changepoint"))
            cps.append((int(idx), int(tag)))
    try:
        rhythm = RhythmAnnotation(int(initial_tag), tuple(cps))
        return SignalRecord(record_id, rate, samples, target, rhythm)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def write_dataset(records: list[SignalRecord], manifest: DatasetManifest,
                  out_dir) -> None:
    out_dir = Path(out_dir)
    (out_dir / "records").mkdir(parents=True, exist_ok=True)
    by_id = {r.id: r for r in records}
    with open(out_dir / "manifest.csv", "w", newline="") as fh:
        if manifest.seed is not None:
            fh.write(f"# split_seed={manifest.seed}\n")
        writer = csv.writer(fh)
        writer.writerow(["id", "path", "target", "split"])
        for entry in manifest.entries:
            writer.writerow([entry.id, entry.path,
                             _format_target(entry.target), entry.split])
            write_record(out_dir / entry.path, by_id[entry.id])


def _format_target(t: float) -> str:
    if t == 0.0:
        return "0"
    if t == 1.0:
        return "1"
    return repr(float(t))


def load_dataset(manifest_path) -> Dataset:
    """Parse a manifest and every record it references, validating both."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise DataError(f"manifest missing: {manifest_path}")
    seed = None
    rows = []
    with open(manifest_path, newline="") as fh:
        lines = []
        for raw in fh:
            if raw.startswith("#"):
                stripped = raw[1:].strip()
                if stripped.startswith("split_seed="):
                    try:
                        seed = int(stripped.split("=", 1)[1])
                    except ValueError as exc:
                        raise DataError(
                            f"{manifest_path}: bad split_seed comment") from exc
                continue
            lines.append(raw)
        reader = csv.reader(lines)
        header = next(reader, None)
        if header != ["id", "path", "target", "split"]:
            raise DataError(
                f"{manifest_path}: expected header id,path,target,split, got {header}"
            )
        for row in reader:
            if len(row) != 4:
                raise DataError(f"{manifest_path}: malformed row {row!r}")
            rows.append(row)
    if not rows:
        raise UsageError(f"{manifest_path}: no records in manifest")
    entries = []
    records = []
    seen = set()
    for rec_id, rel_path, target_s, split in rows:
        if rec_id in seen:
            raise DataError(f"{manifest_path}: duplicate record id {rec_id!r}")
        seen.add(rec_id)
        try:
            target = float(target_s)
        except ValueError as exc:
            raise DataError(
                f"{manifest_path}: bad target {target_s!r} for {rec_id!r}") from exc
        if not (0.0 <= target <= 1.0):
            raise DataError(
                f"{manifest_path}: target {target} for {rec_id!r} outside [0,1]")
        if split not in ("train", "val"):
            raise DataError(
                f"{manifest_path}: unknown split {split!r} for {rec_id!r}")
        entries.append(ManifestEntry(rec_id, rel_path, target, split))
        records.append(read_record(manifest_path.parent / rel_path, rec_id, target))
    return Dataset(records, DatasetManifest(entries, seed))


# -- signal operations -------------------------------------------------------


def _orient_samples(samples: np.ndarray) -> tuple[np.ndarray, bool]:
    """Median-remove, then flip iff the dominant peak points down."""
    med = float(np.median(samples))
    centered = samples - np.float32(med)
    lo = float(centered.min())
    hi = float(centered.max())
    if abs(lo) > abs(hi):
        return -centered, True
    return centered, False


def orient_signal(r: SignalRecord) -> SignalRecord:
    """Return the record with dominant peaks pointing up.

    Removes the sample median, then negates iff |min| > |max| afterwards
    (ties stay unflipped).
    """
    oriented, _ = _orient_samples(r.samples)
    return replace(r, samples=oriented)


def _resample_samples(samples: np.ndarray, factor: float) -> np.ndarray:
    """Linear interpolation onto round(n * factor) points at positions
    j / factor, clamped to the final sample."""
    n = samples.size
    new_n = max(1, int(round(n * factor)))
    positions = np.minimum(np.arange(new_n, dtype=np.float64) / factor, n - 1)
    return np.interp(positions, np.arange(n, dtype=np.float64),
                     samples.astype(np.float64)).astype(np.float32)


def resample(r: SignalRecord, factor: float) -> SignalRecord:
    """Resample to round(n * factor) samples by linear interpolation.

    New sample j sits at original position j / factor; positions past the
    final sample clamp to it. The sampling rate scales by the same factor,
    so the record describes the same physical signal on a new grid.
    """
    factor = float(factor)
    if not (factor > 0.0 and math.isfinite(factor)):
        raise ValueError(f"resample factor must be positive and finite, got {factor}")
    n = r.samples.size
    if factor == 1.0:
        return replace(r)
    new_samples = _resample_samples(r.samples, factor)
    new_n = new_samples.size
    rhythm = r.rhythm
    if rhythm is not None and rhythm.changepoints:
        scaled = []
        prev = -1
        for idx, tag in rhythm.changepoints:
            new_idx = min(new_n - 1, int(round(idx * factor)))
            if new_idx <= prev:
                new_idx = prev + 1
            if new_idx >= new_n:
                break
            scaled.append((new_idx, tag))
            prev = new_idx
        rhythm = RhythmAnnotation(rhythm.initial_tag, tuple(scaled))
    return replace(r, samples=new_samples,
                   sampling_rate=r.sampling_rate * factor, rhythm=rhythm)


def pad_to_length(samples: np.ndarray, length: int) -> np.ndarray:
    """Symmetric edge padding; the odd element goes on the right."""
    deficit = length - samples.size
    if deficit <= 0:
        return samples
    left = deficit // 2
    return np.pad(samples, (left, deficit - left), mode="edge")


def sample_crop_batch(records: list[SignalRecord], batch_size: int,
                      crop_len: int, augment: AugmentConfig | None,
                      rng: np.random.Generator) -> CropBatch:
    """Draw a class-balanced batch of fixed-length crops.

    Half the batch comes from each class; records are picked uniformly
    within their class, so the minority class is simply revisited more
    often. Each crop is oriented, optionally resampled by a random factor,
    and cut at a uniform random start. Records too short for a full crop
    are symmetric-edge-padded and flagged in provenance.
    """
    if batch_size < 2 or batch_size % 2 != 0:
        raise UsageError(f"batch_size must be even and >= 2, got {batch_size}")
    by_class = ([r for r in records if r.target < 0.5],
                [r for r in records if r.target >= 0.5])
    if not by_class[0] or not by_class[1]:
        raise UsageError("both classes must be present to balance a batch")
    crops = np.empty((batch_size, 1, crop_len), dtype=np.float32)
    targets = np.empty(batch_size, dtype=np.float64)
    provenance = []
    half = batch_size // 2
    for i in range(batch_size):
        pool = by_class[0] if i < half else by_class[1]
        record = pool[int(rng.integers(len(pool)))]
        samples, flipped = _orient_samples(record.samples)
        factor = 1.0
        if augment is not None:
            factor = float(rng.uniform(augment.resample_min, augment.resample_max))
            if factor != 1.0:
                samples = _resample_samples(samples, factor)
        padded = samples.size < crop_len
        if padded:
            samples = pad_to_length(samples, crop_len)
        start = int(rng.integers(samples.size - crop_len + 1))
        crops[i, 0, :] = samples[start:start + crop_len]
        targets[i] = record.target
        provenance.append(CropProvenance(record.id, start, factor, flipped, padded))
    return CropBatch(crops, targets, provenance)


def soft_target_for_segment(r: SignalRecord, start: int, length: int) -> float:
    """Fraction of samples in [start, start+length) whose rhythm tag is AF."""
    if r.rhythm is None:
        raise UsageError(f"record {r.id!r} has no rhythm annotation")
    if length < 1 or start < 0 or start + length > len(r):
        raise UsageError(
            f"segment [{start}, {start + length}) outside record of length {len(r)}"
        )
    boundaries = [0] + [idx for idx, _ in r.rhythm.changepoints] + [len(r)]
    tags = [r.rhythm.initial_tag] + [tag for _, tag in r.rhythm.changepoints]
    end = start + length
    af = 0
    for seg_start, seg_end, tag in zip(boundaries[:-1], boundaries[1:], tags):
        if tag == 1:
            af += max(0, min(end, seg_end) - max(start, seg_start))
    return af / length


def sample_changepoint_segments(r: SignalRecord, crop_len: int, n: int,
                                rng: np.random.Generator
                                ) -> list[tuple[int, float]]:
    """Windows containing a rhythm change at a uniform offset.

    Each returned (start, soft target) window covers a uniformly chosen
    changepoint placed at a uniformly random position inside the window,
    clamped so the window stays within the record.
    """
    if r.rhythm is None or not r.rhythm.changepoints:
        raise UsageError(f"record {r.id!r} has no changepoints to sample around")
    if len(r) < crop_len:
        raise UsageError(
            f"record {r.id!r} of length {len(r)} is shorter than crop {crop_len}"
        )
    cps = [idx for idx, _ in r.rhythm.changepoints]
    out = []
    for _ in range(n):
        cp = cps[int(rng.integers(len(cps)))]
        offset = int(rng.integers(crop_len))
        start = min(max(cp - offset, 0), len(r) - crop_len)
        out.append((start, soft_target_for_segment(r, start, crop_len)))
    return out


def sample_changepoint_batch(records: list[SignalRecord], batch_size: int,
                             crop_len: int, rng: np.random.Generator) -> CropBatch:
    """Batch of soft-labeled segments drawn around rhythm changepoints."""
    usable = [r for r in records
              if r.rhythm is not None and r.rhythm.changepoints
              and len(r) >= crop_len]
    if not usable:
        raise UsageError("no records with changepoint annotations and enough length")
    crops = np.empty((batch_size, 1, crop_len), dtype=np.float32)
    targets = np.empty(batch_size, dtype=np.float64)
    provenance = []
    for i in range(batch_size):
        record = usable[int(rng.integers(len(usable)))]
        samples, flipped = _orient_samples(record.samples)
        oriented = replace(record, samples=samples)
        start, target = sample_changepoint_segments(oriented, crop_len, 1, rng)[0]
        crops[i, 0, :] = samples[start:start + crop_len]
        targets[i] = target
        provenance.append(CropProvenance(record.id, start, 1.0, flipped, False))
    return CropBatch(crops, targets, provenance)


def split_dataset(records: list[SignalRecord], train_fraction: float,
                  seed: int) -> DatasetManifest:
    """Stratified random train/val assignment.

    Within each class, a seeded permutation sends the first
    ceil(n * fraction) records to train, adjusted so both splits keep both
    classes whenever a class has at least two members.
    """
    if len(records) < 2:
        raise UsageError("need at least 2 records to split")
    if not (0.0 < train_fraction < 1.0):
        raise UsageError(f"train_fraction must lie in (0,1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    split_of = {}
    for cls in (0, 1):
        members = [r.id for r in records
                   if (1 if r.target >= 0.5 else 0) == cls]
        if not members:
            continue
        order = rng.permutation(len(members))
        n_train = math.ceil(len(members) * train_fraction)
        if len(members) >= 2:
            n_train = min(max(n_train, 1), len(members) - 1)
        for rank, idx in enumerate(order):
            split_of[members[idx]] = "train" if rank < n_train else "val"
    entries = [ManifestEntry(r.id, f"records/{r.id}.bgs", float(r.target),
                             split_of[r.id])
               for r in records]
    return DatasetManifest(entries, seed)


# -- synthetic data ----------------------------------------------------------


def _add_bump(x: np.ndarray, fs: float, center_s: float, sigma_s: float,
              amp: float) -> None:
    """Add a Gaussian bump in place, touching only a local window."""
    n = x.size
    half = max(1, int(round(4 * sigma_s * fs)))
    center = int(round(center_s * fs))
    lo = max(0, center - half)
    hi = min(n, center + half + 1)
    if lo >= hi:
        return
    idx = np.arange(lo, hi)
    t = (idx / fs) - center_s
    x[lo:hi] += amp * np.exp(-0.5 * (t / sigma_s) ** 2)


def _beat_times(rng: np.random.Generator, start_s: float, end_s: float,
                mu_rr: float, blend: float) -> list[float]:
    """Beat instants on [start_s, end_s): regular for blend 0, gamma-
    distributed with growing coefficient of variation as blend -> 1."""
    times = []
    t = start_s + float(rng.uniform(0.0, mu_rr))
    if blend > 0.0:
        cv = max(0.03, blend * float(rng.uniform(0.28, 0.42)))
        shape = 1.0 / (cv * cv)
        scale = mu_rr * cv * cv
    while t < end_s:
        times.append(t)
        if blend == 0.0:
            rr = max(0.4, float(rng.normal(mu_rr, 0.02)))
        else:
            rr = max(0.25, float(rng.gamma(shape, scale)))
        t += rr
    return times


def _synth_segment(x: np.ndarray, rng: np.random.Generator, fs: float,
                   start_s: float, end_s: float, blend: float) -> None:
    """Write one rhythm stretch into x: spikes, optional pre-spike bump,
    optional inter-beat oscillation."""
    mu_rr = float(rng.uniform(0.7, 1.1))
    p_amp = 0.2 * (1.0 - blend)
    f_amp = 0.12 * blend
    for tb in _beat_times(rng, start_s, end_s, mu_rr, blend):
        _add_bump(x, fs, tb, 0.012, float(rng.uniform(0.95, 1.05)))
        if p_amp > 0.0 and tb - 0.16 > start_s:
            _add_bump(x, fs, tb - 0.16, 0.03, p_amp * float(rng.uniform(0.9, 1.1)))
    if f_amp > 0.0:
        freq = float(rng.uniform(5.5, 7.0))
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        lo = int(round(start_s * fs))
        hi = min(x.size, int(round(end_s * fs)))
        t = np.arange(lo, hi) / fs
        x[lo:hi] += f_amp * np.sin(2.0 * np.pi * freq * t + phase)


def synth_generate(n_per_class: int, crop_budget_s: float = 61.0,
                   seed: int = 0, ambiguous_fraction: float = 0.0
                   ) -> list[SignalRecord]:
    """Two-class synthetic dataset at 300 Hz.

    Class 0: regular beat intervals (per-record mean in [0.7, 1.1] s,
    sigma 0.02 s) with a small pre-spike bump. Class 1: gamma-distributed
    intervals with coefficient of variation >= 0.25, no pre-spike bump, and
    a low-amplitude oscillation between beats. Record lengths are uniform
    in [9 s, min(61 s, crop_budget_s)]; crop_budget_s caps the duration so
    desk-scale runs stay fast.

    ambiguous_fraction of each class is generated at an intermediate
    morphology blend (labels kept), producing genuinely borderline records.
    A quarter of all records are polarity-inverted to exercise the
    orientation fix.
    """
    if n_per_class < 1:
        raise UsageError(f"n_per_class must be >= 1, got {n_per_class}")
    if not (0.0 <= ambiguous_fraction <= 1.0):
        raise UsageError("ambiguous_fraction must lie in [0,1]")
    fs = SYNTH_SAMPLING_RATE
    rng = np.random.default_rng(seed)
    max_len = min(61.0, max(9.0, float(crop_budget_s)))
    records = []
    n_ambiguous = int(round(ambiguous_fraction * n_per_class))
    for cls in (0, 1):
        prefix = "af" if cls else "no"
        for i in range(n_per_class):
            # Borderline records sit so close to the class midpoint that
            # their labels are effectively coin flips; they are what the
            # rejection machinery is supposed to catch.
            blend = (float(rng.uniform(0.45, 0.55)) if i < n_ambiguous
                     else float(cls))
            length_s = float(rng.uniform(9.0, max_len))
            n = int(round(length_s * fs))
            x = rng.normal(0.0, 0.03, n)
            _synth_segment(x, rng, fs, 0.0, length_s, blend)
            if rng.random() < 0.25:
                x = -x
            records.append(SignalRecord(
                id=f"{prefix}{i:04d}",
                sampling_rate=fs,
                samples=x.astype(np.float32),
                target=float(cls),
                rhythm=RhythmAnnotation(cls, ()),
            ))
    return records


def synth_generate_changepoints(n_records: int, seed: int = 0,
                                length_range_s: tuple[float, float] = (14.0, 24.0),
                                max_changepoints: int = 3,
                                min_segment_s: float = 2.5
                                ) -> list[SignalRecord]:
    """Recordings whose rhythm switches between the two pure morphologies.

    Each record carries 1..max_changepoints annotated change indices with
    alternating tags; the record target is the overall AF sample fraction.
    """
    if n_records < 1:
        raise UsageError(f"n_records must be >= 1, got {n_records}")
    fs = SYNTH_SAMPLING_RATE
    rng = np.random.default_rng(seed)
    records = []
    for i in range(n_records):
        length_s = float(rng.uniform(*length_range_s))
        n = int(round(length_s * fs))
        n_cp = int(rng.integers(1, max_changepoints + 1))
        cuts = None
        for _ in range(200):
            cand = np.sort(rng.uniform(min_segment_s, length_s - min_segment_s,
                                       size=n_cp))
            gaps = np.diff(np.concatenate(([0.0], cand, [length_s])))
            if (gaps >= min_segment_s).all():
                cuts = cand
                break
        if cuts is None:
            cuts = np.linspace(0.0, length_s, n_cp + 2)[1:-1]
        initial = int(rng.integers(0, 2))
        bounds_s = [0.0, *cuts.tolist(), length_s]
        tags = [(initial + k) % 2 for k in range(len(bounds_s) - 1)]
        x = rng.normal(0.0, 0.03, n)
        for seg_start, seg_end, tag in zip(bounds_s[:-1], bounds_s[1:], tags):
            _synth_segment(x, rng, fs, seg_start, seg_end, float(tag))
        changepoints = tuple(
            (min(n - 1, int(round(c * fs))), tags[k + 1])
            for k, c in enumerate(cuts)
        )
        sample_bounds = [0, *(idx for idx, _ in changepoints), n]
        af_samples = sum(hi - lo for lo, hi, tag
                         in zip(sample_bounds[:-1], sample_bounds[1:], tags)
                         if tag == 1)
        records.append(SignalRecord(
            id=f"cp{i:04d}",
            sampling_rate=fs,
            samples=x.astype(np.float32),
            target=af_samples / n,
            rhythm=RhythmAnnotation(initial, changepoints),
        ))
    return records
