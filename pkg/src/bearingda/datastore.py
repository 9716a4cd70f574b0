"""Dataset container, recording ingestion, segmentation and imbalance protocols.

On disk a dataset is two files sharing a stem::

    <name>.manifest   JSON: format version, domain, classes, per-sample records
    <name>.f32        b"SEGD" + u32 version, then little-endian float32 samples

Record offsets and lengths count float32 values after the 8-byte header.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .errors import FormatError, ParameterError
from .segment import DomainTag, FaultClass, Segment

FORMAT_VERSION = 1
BLOB_MAGIC = b"SEGD"
HEADER_BYTES = 8

WAVEFORM = "waveform"
ENVELOPE_SPECTRUM = "envelope_spectrum"


@dataclass
class Record:
    id: str
    seed: Optional[int] = None
    # carrier id for synthetic samples, source recording for segmented ones
    origin: Optional[str] = None
    offset: Optional[int] = None


@dataclass
class Dataset:
    """Segments plus their provenance records.

    ``kind`` is ``"waveform"`` for raw vibration, ``"envelope_spectrum"`` when
    every segment holds a preprocessed 1000-point spectrum (its sample rate
    and shaft speed then describe the originating waveform).
    """

    segments: list[Segment]
    records: list[Record]
    classes: list[FaultClass]
    domain_tag: DomainTag = DomainTag.RealTarget
    kind: str = WAVEFORM
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.segments) != len(self.records):
            raise ParameterError("one record per segment required")
        self.classes = [FaultClass.parse(c) for c in self.classes]
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            raise ParameterError("duplicate sample ids")
        for s in self.segments:
            if s.label is not None and s.label not in self.classes:
                raise ParameterError(f"label {s.label.name} not in class list")

    def __len__(self) -> int:
        return len(self.segments)

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    def labels(self) -> np.ndarray:
        """Class index into ``classes`` per sample; -1 for unlabeled samples."""
        index = {c: i for i, c in enumerate(self.classes)}
        return np.array([-1 if s.label is None else index[s.label] for s in self.segments], dtype=int)

    def class_counts(self) -> dict[FaultClass, int]:
        counts = {c: 0 for c in self.classes}
        for s in self.segments:
            if s.label is not None:
                counts[s.label] += 1
        return counts

    def array(self, dtype=np.float32) -> np.ndarray:
        """Stack all samples into ``[N, length]`` (requires equal lengths)."""
        lengths = {len(s) for s in self.segments}
        if len(lengths) > 1:
            raise ParameterError(f"segments have differing lengths {sorted(lengths)}")
        if not self.segments:
            return np.zeros((0, 0), dtype)
        return np.stack([s.samples for s in self.segments]).astype(dtype)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        idx = list(indices)
        return replace(self, segments=[self.segments[i] for i in idx],
                       records=[replace(self.records[i]) for i in idx],
                       provenance=dict(self.provenance))

    def without_labels(self) -> "Dataset":
        return replace(self, segments=[replace(s, label=None) for s in self.segments],
                       records=[replace(r) for r in self.records], provenance=dict(self.provenance))


def concat_datasets(parts: Sequence[Dataset], **overrides) -> Dataset:
    if not parts:
        raise ParameterError("nothing to concatenate")
    classes = list(parts[0].classes)
    for p in parts[1:]:
        for c in p.classes:
            if c not in classes:
                classes.append(c)
    base = dict(segments=[s for p in parts for s in p.segments],
                records=[replace(r) for p in parts for r in p.records],
                classes=classes, domain_tag=parts[0].domain_tag, kind=parts[0].kind,
                provenance=dict(parts[0].provenance))
    base.update(overrides)
    return Dataset(**base)


# ------------------------------------------------------------------ container

def _paths(path) -> tuple[Path, Path]:
    p = Path(path)
    stem = p.with_suffix("") if p.suffix in (".manifest", ".f32") else p
    return stem.with_name(stem.name + ".manifest"), stem.with_name(stem.name + ".f32")


def save_dataset(ds: Dataset, path) -> tuple[Path, Path]:
    """Write ``<path>.manifest`` and ``<path>.f32``; returns both paths."""
    manifest_path, blob_path = _paths(path)
    records, chunks, offset = [], [], 0
    for seg, rec in zip(ds.segments, ds.records):
        data = np.asarray(seg.samples, dtype="<f4")
        chunks.append(data.tobytes())
        records.append({
            "id": rec.id,
            "label": None if seg.label is None else seg.label.name,
            "shaft_speed": float(seg.shaft_speed),
            "sample_rate": float(seg.sample_rate),
            "offset": offset,
            "length": int(data.shape[0]),
            "seed": rec.seed,
            "origin": rec.origin,
        })
        offset += data.shape[0]
    manifest = {
        "format_version": FORMAT_VERSION,
        "kind": ds.kind,
        "domain_tag": ds.domain_tag.value,
        "classes": [c.name for c in ds.classes],
        "provenance": ds.provenance,
        "records": records,
    }
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    with open(blob_path, "wb") as fh:
        fh.write(BLOB_MAGIC + struct.pack("<I", FORMAT_VERSION))
        for c in chunks:
            fh.write(c)
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest_path, blob_path


def load_dataset(path) -> Dataset:
    manifest_path, blob_path = _paths(path)
    try:
        with open(manifest_path) as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{manifest_path}: invalid manifest ({exc})") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise FormatError(f"{manifest_path}: unsupported format version {manifest.get('format_version')}")
    blob = Path(blob_path).read_bytes()
    if len(blob) < HEADER_BYTES or blob[:4] != BLOB_MAGIC:
        raise FormatError(f"{blob_path}: bad magic")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"{blob_path}: unsupported blob version {version}")
    payload = len(blob) - HEADER_BYTES
    if payload % 4:
        raise FormatError(f"{blob_path}: truncated blob")
    n_values = payload // 4
    values = np.frombuffer(blob, dtype="<f4", offset=HEADER_BYTES)

    classes = [FaultClass.parse(c) for c in manifest["classes"]]
    domain = DomainTag(manifest["domain_tag"])
    spans = []
    segments, records = [], []
    for r in manifest["records"]:
        off, n = int(r["offset"]), int(r["length"])
        if off < 0 or n <= 0 or off + n > n_values:
            raise FormatError(f"{manifest_path}: record {r['id']!r} lies outside the blob")
        spans.append((off, off + n, r["id"]))
        label = None if r["label"] is None else FaultClass.parse(r["label"])
        if label is not None and label not in classes:
            raise FormatError(f"{manifest_path}: record {r['id']!r} has label outside the class list")
        segments.append(Segment(values[off:off + n].copy(), r["sample_rate"], r["shaft_speed"],
                                label, domain))
        records.append(Record(r["id"], r.get("seed"), r.get("origin"), off))
    spans.sort()
    for (a0, a1, ida), (b0, b1, idb) in zip(spans, spans[1:]):
        if b0 < a1:
            raise FormatError(f"{manifest_path}: records {ida!r} and {idb!r} overlap")
    return Dataset(segments, records, classes, domain, manifest.get("kind", WAVEFORM),
                   manifest.get("provenance", {}))


# ------------------------------------------------------------------ ingestion

@dataclass(frozen=True)
class Recording:
    """One long raw waveform (e.g. a CWRU drive-end channel)."""

    name: str
    samples: np.ndarray
    sample_rate: float
    shaft_speed: float
    label: FaultClass


def load_recordings(manifest_path) -> list[Recording]:
    """Read recordings described by a JSON sidecar.

    The sidecar lists ``{"path", "label", "shaft_speed", "sample_rate"}``
    entries (paths relative to the sidecar); each path is a raw
    little-endian float32 array. Fault sub-types with different spall
    sizes simply share a label.
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path) as fh:
        spec = json.load(fh)
    entries = spec["recordings"] if isinstance(spec, dict) else spec
    out = []
    for e in entries:
        p = (manifest_path.parent / e["path"]).resolve()
        raw = np.fromfile(p, dtype="<f4")
        if raw.size == 0:
            raise FormatError(f"{p}: empty recording")
        out.append(Recording(e.get("name", p.stem), raw.astype(np.float64), float(e["sample_rate"]),
                             float(e["shaft_speed"]), FaultClass.parse(e["label"])))
    return out


def write_recordings(recordings: Sequence[Recording], directory) -> Path:
    """Write recordings as raw float32 files plus a ``recordings.json`` sidecar."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for r in recordings:
        fname = f"{r.name}.f32"
        np.asarray(r.samples, dtype="<f4").tofile(directory / fname)
        entries.append({"name": r.name, "path": fname, "label": r.label.name,
                        "shaft_speed": r.shaft_speed, "sample_rate": r.sample_rate})
    sidecar = directory / "recordings.json"
    with open(sidecar, "w") as fh:
        json.dump({"recordings": entries}, fh, indent=1)
    return sidecar


class SegmentSet(NamedTuple):
    segments: list[Segment]
    offsets: np.ndarray


def segment_recording(raw: np.ndarray, seg_len: int = 4096, count: int = 1200,
                      rng: Optional[np.random.Generator] = None, *, sample_rate: float = 12000.0,
                      shaft_speed: float = 1797.0, label=None,
                      domain_tag: DomainTag = DomainTag.RealTarget) -> SegmentSet:
    """Cut ``count`` segments at uniformly random start offsets (overlap allowed)."""
    raw = np.asarray(raw)
    if raw.ndim != 1 or raw.shape[0] < seg_len:
        raise ParameterError(f"recording of {raw.shape} samples is shorter than seg_len={seg_len}")
    if count < 1 or seg_len < 1:
        raise ParameterError("count and seg_len must be positive")
    rng = np.random.default_rng() if rng is None else rng
    offsets = rng.integers(0, raw.shape[0] - seg_len + 1, size=count)
    segs = [Segment(raw[o:o + seg_len].copy(), sample_rate, shaft_speed, label, domain_tag)
            for o in offsets]
    return SegmentSet(segs, offsets)


def segment_recordings(recordings: Sequence[Recording], per_class: int, rng: np.random.Generator,
                       seg_len: int = 4096, domain_tag: DomainTag = DomainTag.RealTarget,
                       prefix: str = "real") -> Dataset:
    """Sample ``per_class`` segments per label, spread evenly over that label's recordings."""
    by_label: dict[FaultClass, list[Recording]] = {}
    for r in recordings:
        by_label.setdefault(r.label, []).append(r)
    segments, records = [], []
    for label in sorted(by_label):
        recs = by_label[label]
        shares = np.full(len(recs), per_class // len(recs))
        shares[: per_class % len(recs)] += 1
        j = 0
        for rec, share in zip(recs, shares):
            if share == 0:
                continue
            part = segment_recording(rec.samples, seg_len, int(share), rng, sample_rate=rec.sample_rate,
                                     shaft_speed=rec.shaft_speed, label=label, domain_tag=domain_tag)
            for seg, off in zip(part.segments, part.offsets):
                segments.append(seg)
                records.append(Record(f"{prefix}-{label.name}-{j}", origin=rec.name, offset=int(off)))
                j += 1
    return Dataset(segments, records, sorted(by_label), domain_tag)


# ------------------------------------------------------------------ protocols

class HealthySplit(NamedTuple):
    source_pool: Dataset
    target_pool: Dataset
    source_ids: list[str]
    target_ids: list[str]


def upsample(ds: Dataset, count: int, rng: np.random.Generator, prefix: str) -> Dataset:
    """Draw ``count`` samples with replacement; new ids ``<prefix>-<i>`` keep the origin id."""
    if len(ds) == 0:
        raise ParameterError("cannot up-sample an empty dataset")
    picks = rng.integers(0, len(ds), size=count)
    segs = [ds.segments[i] for i in picks]
    recs = [Record(f"{prefix}-{k}", ds.records[i].seed, ds.records[i].id, ds.records[i].offset)
            for k, i in enumerate(picks)]
    return replace(ds, segments=segs, records=recs, provenance=dict(ds.provenance))


def split_healthy(healthy: Dataset, rng: np.random.Generator,
                  upsample_to: Optional[int] = None) -> HealthySplit:
    """Disjoint half/half split of healthy segments (source gets the larger half).

    With ``upsample_to`` both pools are re-sampled with replacement to that
    size; ``source_ids``/``target_ids`` always list the original disjoint ids.
    """
    if len(healthy) < 2:
        raise ParameterError("need at least two healthy segments to split")
    perm = rng.permutation(len(healthy))
    n_src = math.ceil(len(healthy) / 2)
    src = healthy.subset(sorted(perm[:n_src]))
    tgt = healthy.subset(sorted(perm[n_src:]))
    src_ids, tgt_ids = src.ids, tgt.ids
    if upsample_to is not None:
        src = upsample(src, upsample_to, rng, "src-healthy")
        tgt = upsample(tgt, upsample_to, rng, "tgt-healthy")
    return HealthySplit(src, tgt, src_ids, tgt_ids)


class ImbalanceSpec(dict):
    """Per-class keep fraction in (0, 1]; classes not listed keep everything."""

    def __init__(self, fractions: Optional[Mapping] = None, **kw):
        super().__init__()
        for k, v in {**(fractions or {}), **kw}.items():
            v = float(v)
            if not 0 < v <= 1:
                raise ParameterError(f"keep fraction for {k} must lie in (0, 1], got {v}")
            self[FaultClass.parse(k)] = v

    def fraction(self, c: FaultClass) -> float:
        return self.get(FaultClass.parse(c), 1.0)

    @classmethod
    def table3(cls) -> "ImbalanceSpec":
        """100 % healthy, 10 % outer race, 5 % inner race, 1 % rolling element."""
        return cls({FaultClass.Healthy: 1.0, FaultClass.OuterRace: 0.10,
                    FaultClass.InnerRace: 0.05, FaultClass.RollingElement: 0.01})

    @classmethod
    def rolling_element(cls, level: float) -> "ImbalanceSpec":
        """Only the rolling-element class is thinned (balance-level sweep)."""
        return cls({FaultClass.RollingElement: level})


def keep_count(fraction: float, n: int) -> int:
    """``round(fraction * n)`` with halves rounded up."""
    return int(math.floor(fraction * n + 0.5))


class ImbalancedSplit(NamedTuple):
    train: Dataset
    evaluation: Dataset


def subsample_imbalanced(ds: Dataset, spec: ImbalanceSpec, rng: np.random.Generator) -> ImbalancedSplit:
    """Thin each class to ``round(fraction * N_class)`` samples.

    Returns an unlabeled training copy and a labeled evaluation copy that
    reference the same waveforms in the same order.
    """
    labels = [s.label for s in ds.segments]
    if any(l is None for l in labels):
        raise ParameterError("subsampling needs a fully labeled dataset")
    keep: list[int] = []
    for c in ds.classes:
        idx = [i for i, l in enumerate(labels) if l == c]
        if not idx:
            raise ParameterError(f"class {c.name} has no samples")
        k = keep_count(spec.fraction(c), len(idx))
        if k < 1:
            raise ParameterError(f"fraction {spec.fraction(c)} of {len(idx)} {c.name} samples keeps nothing")
        keep.extend(sorted(rng.choice(idx, size=k, replace=False).tolist()))
    evaluation = ds.subset(sorted(keep))
    return ImbalancedSplit(evaluation.without_labels(), evaluation)


# ------------------------------------------------------------------ preprocessing

def preprocess_dataset(ds: Dataset, band=None) -> Dataset:
    """Replace every waveform with its 1000-point envelope spectrum."""
    from . import dsp

    if ds.kind == ENVELOPE_SPECTRUM:
        return ds
    band = dsp.BAND if band is None else tuple(band)
    segs = [s.with_samples(dsp.preprocess(s, band).values) for s in ds.segments]
    return replace(ds, segments=segs, records=[replace(r) for r in ds.records], kind=ENVELOPE_SPECTRUM,
                   provenance={**ds.provenance, "preprocess_band": list(band)})


def describe(ds: Dataset) -> str:
    counts = ", ".join(f"{c.name}={n}" for c, n in ds.class_counts().items())
    unlabeled = sum(s.label is None for s in ds.segments)
    return f"{len(ds)} samples ({ds.kind}, {ds.domain_tag.value}): {counts}, unlabeled={unlabeled}"

