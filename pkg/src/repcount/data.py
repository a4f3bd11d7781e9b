"""Annotated feature sequences, ground-truth density maps and the dataset store.

On disk a dataset is a directory holding ``manifest.json`` (a list of
``{id, length, feature_dim, count, cycles: [[start, end], ...]}`` records)
plus one little-endian float32 row-major file ``<id>.f32`` per sequence.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class CycleSpan:
    start: int
    end: int  # inclusive

    def __len__(self):
        return self.end - self.start + 1

    @property
    def midpoint(self):
        return (self.start + self.end) / 2.0


@dataclass(frozen=True)
class IntervalSpan:
    start: int
    end: int  # inclusive

    def __len__(self):
        return self.end - self.start + 1


@dataclass(frozen=True)
class FeatureSequence:
    """Per-frame features ``(L_raw, D)`` with cycle annotations.

    Construction validates the annotation invariants; the feature array is
    stored read-only.
    """

    id: str
    features: np.ndarray
    cycles: tuple = ()
    count: int = 0

    def __post_init__(self):
        feats = np.array(self.features, dtype=np.float64)
        if feats.ndim != 2:
            raise ValidationError(f"{self.id}: features must be 2-D, got shape {feats.shape}")
        feats.flags.writeable = False
        object.__setattr__(self, "features", feats)
        cycles = tuple(c if isinstance(c, CycleSpan) else CycleSpan(int(c[0]), int(c[1])) for c in self.cycles)
        object.__setattr__(self, "cycles", cycles)
        object.__setattr__(self, "count", int(self.count))
        validate_annotations(self.id, len(feats), cycles, self.count)

    @property
    def length(self):
        return self.features.shape[0]

    @property
    def feature_dim(self):
        return self.features.shape[1]

    def record(self):
        return {
            "id": self.id,
            "length": self.length,
            "feature_dim": self.feature_dim,
            "count": self.count,
            "cycles": [[c.start, c.end] for c in self.cycles],
        }


def validate_annotations(seq_id, length, cycles, count):
    if count < 0:
        raise ValidationError(f"{seq_id}: negative count {count}")
    if count != len(cycles):
        raise ValidationError(f"{seq_id}: count {count} != number of cycle spans {len(cycles)}")
    prev_end = -1
    for c in cycles:
        if not 0 <= c.start <= c.end < length:
            raise ValidationError(f"{seq_id}: cycle [{c.start}, {c.end}] out of range for length {length}")
        if c.start <= prev_end:
            raise ValidationError(f"{seq_id}: cycle spans must be sorted and disjoint")
        prev_end = c.end


@dataclass(frozen=True)
class DensityMap:
    values: np.ndarray
    kind: str = "ground_truth"  # or "predicted"

    @property
    def count(self):
        return float(np.sum(self.values))


def derive_intervals(seq, min_interval_len=1):
    """Maximal frame runs not covered by any cycle, including leading/trailing runs."""
    out = []
    cursor = 0
    for c in seq.cycles:
        if c.start > cursor:
            out.append(IntervalSpan(cursor, c.start - 1))
        cursor = c.end + 1
    if cursor < seq.length:
        out.append(IntervalSpan(cursor, seq.length - 1))
    return [iv for iv in out if len(iv) >= min_interval_len]


def gaussian_bump(length, mu, sigma):
    """Discrete Gaussian on frames ``0..length-1`` renormalised to unit mass."""
    t = np.arange(length, dtype=np.float64)
    bump = np.exp(-0.5 * ((t - mu) / sigma) ** 2)
    return bump / bump.sum()


def gaussianize(seq, L=None):
    """Ground-truth density map: one unit-mass Gaussian per cycle.

    Each bump is centred on the cycle midpoint with ``sigma = len/6`` so that
    +-3 sigma spans the annotated cycle.
    """
    L = seq.length if L is None else int(L)
    g = np.zeros(L)
    for c in seq.cycles:
        g += gaussian_bump(L, c.midpoint, max(len(c), 1) / 6.0)
    return DensityMap(g, "ground_truth")


def resample_index(L_raw, L):
    return (np.arange(L) * L_raw) // L


def resample(seq, L):
    """Uniformly sample ``L`` frames (frame ``i`` takes raw ``floor(i*L_raw/L)``).

    Span boundaries ``j`` map to ``floor(j*L/L_raw)``. Spans pushed into
    their predecessor are shifted right and shrink to a single frame if
    nothing else is left; near the end they are held back so every later
    cycle keeps a frame.
    """
    L = int(L)
    if L < 1:
        raise ValidationError(f"resample target length must be >= 1, got {L}")
    L_raw = seq.length
    if L_raw == 0:
        raise ValidationError(f"{seq.id}: cannot resample an empty sequence")
    if L_raw == L:
        return seq
    feats = seq.features[resample_index(L_raw, L)]
    n = len(seq.cycles)
    if n > L:
        raise ValidationError(f"{seq.id}: {n} cycles do not fit in {L} frames")
    cycles = []
    prev_end = -1
    for h, c in enumerate(seq.cycles):
        last = L - n + h  # leave one frame for each later cycle
        s = min(max(c.start * L // L_raw, prev_end + 1), last)
        e = min(max(c.end * L // L_raw, s), last)
        cycles.append(CycleSpan(s, e))
        prev_end = e
    return FeatureSequence(seq.id, feats, tuple(cycles), seq.count)


# ---------------------------------------------------------------------------
# store
# ---------------------------------------------------------------------------

def save_dataset(sequences, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    records = []
    for seq in sequences:
        seq.features.astype("<f4").tofile(directory / f"{seq.id}.f32")
        records.append(seq.record())
    (directory / "manifest.json").write_text(json.dumps(records, indent=1) + "\n")
    return directory


def load_dataset(directory):
    """Read and validate every sequence listed in ``manifest.json``."""
    directory = Path(directory)
    manifest = directory / "manifest.json"
    if not manifest.is_file():
        raise ValidationError(f"no manifest.json in {directory}")
    try:
        records = json.loads(manifest.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"malformed manifest: {exc}") from exc
    if not isinstance(records, list):
        raise ValidationError("manifest must be a JSON array")
    out = []
    seen = set()
    for rec in records:
        try:
            sid, length, dim = str(rec["id"]), int(rec["length"]), int(rec["feature_dim"])
            count, cycles = int(rec["count"]), [tuple(map(int, c)) for c in rec["cycles"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad manifest record {rec!r}: {exc}") from exc
        if sid in seen:
            raise ValidationError(f"duplicate sequence id {sid}")
        seen.add(sid)
        path = directory / f"{sid}.f32"
        if not path.is_file():
            raise ValidationError(f"missing feature file {path.name}")
        raw = np.fromfile(path, dtype="<f4")
        if raw.size != length * dim:
            raise ValidationError(f"{path.name}: expected {length}x{dim} floats, found {raw.size}")
        feats = raw.reshape(length, dim).astype(np.float64)
        if not np.all(np.isfinite(feats)):
            raise ValidationError(f"{path.name}: non-finite feature values")
        out.append(FeatureSequence(sid, feats, tuple(cycles), count))
    return out
