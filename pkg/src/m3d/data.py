"""Feature datasets, file formats, LOSO split plans and synthetic benchmarks."""

from __future__ import annotations

import csv
import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

UNLABELED = -1

DEFAULT_BANDS = (
    ("delta", 1.0, 3.0),
    ("theta", 4.0, 7.0),
    ("alpha", 8.0, 13.0),
    ("beta", 14.0, 30.0),
    ("gamma", 31.0, 50.0),
)

DE_VARIANCE_FLOOR = 1e-12

BINARY_MAGIC = b"M3DF"
BINARY_VERSION = 1

PROTOCOLS = (
    "cross-subject-single-session-LOSO",
    "cross-subject-cross-session-LOSO",
    "ten-fold-cross-subject",
)
PROTOCOL_ALIASES = {
    "single-session": "cross-subject-single-session-LOSO",
    "cross-session": "cross-subject-cross-session-LOSO",
    "ten-fold": "ten-fold-cross-subject",
}


class DatasetError(ValueError):
    """Raised when a dataset file or array fails validation."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class FeatureDataset:
    """Sample matrix plus per-sample label, subject and session annotations.

    ``labels`` uses ``-1`` for unlabeled samples. Arrays are made read-only
    on construction.
    """

    features: np.ndarray
    labels: np.ndarray
    subject_id: np.ndarray
    session_id: np.ndarray
    class_count: int
    feature_names: Optional[tuple] = None

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise DatasetError(f"features must be 2-D, got shape {x.shape}")
        n, d = x.shape
        if n < 1 or d < 1:
            raise DatasetError(f"need at least one sample and one feature, got {x.shape}")
        bad = ~np.isfinite(x)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise DatasetError(f"non-finite feature value at row {r}, column {c}")
        y = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        subj = np.asarray(self.subject_id, dtype=np.int64).reshape(-1)
        sess = np.asarray(self.session_id, dtype=np.int64).reshape(-1)
        for name, a in (("labels", y), ("subject_id", subj), ("session_id", sess)):
            if a.shape[0] != n:
                raise DatasetError(f"{name} has {a.shape[0]} entries for {n} samples")
        if int(self.class_count) < 2:
            raise DatasetError(f"class_count must be >= 2, got {self.class_count}")
        if ((y < UNLABELED) | (y >= int(self.class_count))).any():
            raise DatasetError(f"labels must lie in [0, {self.class_count}) or be {UNLABELED}")
        names = self.feature_names
        if names is not None:
            names = tuple(str(s) for s in names)
            if len(names) != d:
                raise DatasetError(f"{len(names)} feature names for {d} features")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y))
        object.__setattr__(self, "subject_id", _frozen(subj))
        object.__setattr__(self, "session_id", _frozen(sess))
        object.__setattr__(self, "class_count", int(self.class_count))
        object.__setattr__(self, "feature_names", names)

    @property
    def num_samples(self) -> int:
        return self.features.shape[0]

    @property
    def num_features(self) -> int:
        return self.features.shape[1]

    @property
    def is_labeled(self) -> bool:
        return bool((self.labels != UNLABELED).all())

    def subjects(self) -> np.ndarray:
        return np.unique(self.subject_id)

    def subset(self, mask) -> "FeatureDataset":
        mask = np.asarray(mask)
        return FeatureDataset(
            self.features[mask],
            self.labels[mask],
            self.subject_id[mask],
            self.session_id[mask],
            self.class_count,
            self.feature_names,
        )

    def select(self, subjects=None, sessions=None) -> "FeatureDataset":
        mask = np.ones(self.num_samples, dtype=bool)
        if subjects is not None:
            mask &= np.isin(self.subject_id, list(subjects))
        if sessions is not None:
            mask &= np.isin(self.session_id, list(sessions))
        if not mask.any():
            raise DatasetError(f"no samples for subjects={subjects} sessions={sessions}")
        return self.subset(mask)

    def with_features(self, features, feature_names=None) -> "FeatureDataset":
        return FeatureDataset(
            features, self.labels, self.subject_id, self.session_id,
            self.class_count, feature_names,
        )


@dataclass(frozen=True, eq=False)
class DomainPair:
    """Labeled source domain and a target domain whose labels are held out."""

    source: FeatureDataset
    target: FeatureDataset

    def __post_init__(self):
        if self.source.num_features != self.target.num_features:
            raise DatasetError(
                f"source has {self.source.num_features} features, "
                f"target has {self.target.num_features}"
            )
        if not self.source.is_labeled:
            raise DatasetError("source domain must be fully labeled")
        if self.source.class_count != self.target.class_count:
            raise DatasetError("source and target disagree on class_count")

    @property
    def n(self) -> int:
        return self.source.num_samples

    @property
    def m(self) -> int:
        return self.target.num_samples

    @property
    def class_count(self) -> int:
        return self.source.class_count


@dataclass(frozen=True)
class Fold:
    source_subjects: tuple
    target_subjects: tuple
    sessions: Optional[tuple] = None

    def as_dict(self):
        return {
            "source_subjects": list(self.source_subjects),
            "target_subjects": list(self.target_subjects),
            "sessions": None if self.sessions is None else list(self.sessions),
        }


@dataclass(frozen=True)
class SplitPlan:
    protocol: str
    folds: tuple = field(default_factory=tuple)

    def __len__(self):
        return len(self.folds)

    def domain_pair(self, dataset: FeatureDataset, index: int) -> DomainPair:
        fold = self.folds[index]
        src = dataset.select(fold.source_subjects, fold.sessions)
        tgt = dataset.select(fold.target_subjects, fold.sessions)
        return DomainPair(src, tgt)


# --------------------------------------------------------------------------
# file I/O
# --------------------------------------------------------------------------

def _infer_class_count(labels: np.ndarray, class_count: Optional[int]) -> int:
    if class_count is not None:
        return int(class_count)
    top = int(labels.max()) if labels.size else 0
    return max(2, top + 1)


def load_csv(path, class_count: Optional[int] = None) -> FeatureDataset:
    """Read ``f0,...,f{D-1},label,subject,session`` with a mandatory header."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such dataset file: {path}")
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DatasetError(f"{path}: empty file, header row is mandatory") from None
        header = [h.strip() for h in header]
        if len(header) < 4 or header[-3:] != ["label", "subject", "session"]:
            raise DatasetError(
                f"{path}: malformed header, expected feature columns followed by "
                f"'label,subject,session', got {header[-3:]}"
            )
        d = len(header) - 3
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 3:
                raise DatasetError(f"{path}: line {lineno} has {len(row)} fields, expected {d + 3}")
            rows.append(row)
    if not rows:
        raise DatasetError(f"{path}: no data rows")
    feats = np.empty((len(rows), d))
    meta = np.empty((len(rows), 3), dtype=np.int64)
    for i, row in enumerate(rows):
        for j in range(d):
            try:
                v = float(row[j])
            except ValueError:
                raise DatasetError(f"{path}: row {i}, column {j} ({header[j]}): not a number {row[j]!r}") from None
            if not math.isfinite(v):
                raise DatasetError(f"{path}: row {i}, column {j} ({header[j]}): non-finite value {row[j]!r}")
            feats[i, j] = v
        try:
            meta[i] = [int(float(s)) for s in row[d:]]
        except ValueError:
            raise DatasetError(f"{path}: row {i}: label/subject/session must be integers") from None
    names = header[:d]
    default = [f"f{j}" for j in range(d)]
    return FeatureDataset(
        feats, meta[:, 0], meta[:, 1], meta[:, 2],
        _infer_class_count(meta[:, 0], class_count),
        None if names == default else tuple(names),
    )


def save_csv(dataset: FeatureDataset, path) -> None:
    names = dataset.feature_names or tuple(f"f{j}" for j in range(dataset.num_features))
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names) + ["label", "subject", "session"])
        for i in range(dataset.num_samples):
            # repr() gives the shortest string that round-trips exactly
            w.writerow(
                [repr(float(v)) for v in dataset.features[i]]
                + [int(dataset.labels[i]), int(dataset.subject_id[i]), int(dataset.session_id[i])]
            )


def save_binary(dataset: FeatureDataset, path) -> None:
    """Magic, version, dims, then little-endian float64 features and int64 metadata."""
    names = json.dumps(list(dataset.feature_names) if dataset.feature_names else None).encode()
    with Path(path).open("wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(struct.pack("<IQQIQ", BINARY_VERSION, dataset.num_samples,
                             dataset.num_features, dataset.class_count, len(names)))
        fh.write(names)
        fh.write(dataset.features.astype("<f8").tobytes(order="C"))
        for a in (dataset.labels, dataset.subject_id, dataset.session_id):
            fh.write(a.astype("<i8").tobytes())


def load_binary(path) -> FeatureDataset:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such dataset file: {path}")
    raw = path.read_bytes()
    head = struct.calcsize("<IQQIQ")
    if raw[:4] != BINARY_MAGIC or len(raw) < 4 + head:
        raise DatasetError(f"{path}: not an m3d binary dataset (bad magic)")
    version, n, d, c, nlen = struct.unpack_from("<IQQIQ", raw, 4)
    if version != BINARY_VERSION:
        raise DatasetError(f"{path}: unsupported format version {version}")
    off = 4 + head
    expected = off + nlen + 8 * n * d + 3 * 8 * n
    if len(raw) != expected:
        raise DatasetError(f"{path}: dimension mismatch, expected {expected} bytes, found {len(raw)}")
    names = json.loads(raw[off:off + nlen].decode())
    off += nlen
    feats = np.frombuffer(raw, dtype="<f8", count=n * d, offset=off).reshape(n, d)
    off += 8 * n * d
    meta = np.frombuffer(raw, dtype="<i8", count=3 * n, offset=off).reshape(3, n)
    return FeatureDataset(feats.astype(np.float64), meta[0], meta[1], meta[2], c,
                          None if names is None else tuple(names))


def _format_of(path, fmt):
    if fmt is not None:
        return fmt
    return "binary" if Path(path).suffix in (".bin", ".m3d") else "csv"


def load_dataset(path, format: Optional[str] = None, class_count: Optional[int] = None) -> FeatureDataset:
    fmt = _format_of(path, format)
    if fmt == "csv":
        return load_csv(path, class_count)
    if fmt == "binary":
        ds = load_binary(path)
        if class_count is not None and class_count != ds.class_count:
            ds = FeatureDataset(ds.features, ds.labels, ds.subject_id, ds.session_id,
                                class_count, ds.feature_names)
        return ds
    raise DatasetError(f"unknown dataset format {fmt!r}")


def save_dataset(dataset: FeatureDataset, path, format: Optional[str] = None) -> None:
    fmt = _format_of(path, format)
    if fmt == "csv":
        save_csv(dataset, path)
    elif fmt == "binary":
        save_binary(dataset, path)
    else:
        raise DatasetError(f"unknown dataset format {fmt!r}")


# --------------------------------------------------------------------------
# splits
# --------------------------------------------------------------------------

def make_loso_splits(dataset: FeatureDataset, protocol: str = PROTOCOLS[0],
                     session: Optional[int] = None, seed: int = 0) -> SplitPlan:
    """Build the fold list for one of the evaluation protocols.

    The single-session protocol keeps one session (the lowest id unless
    ``session`` is given); the cross-session protocol pools every session
    of a subject. The ten-fold protocol partitions subjects into ten
    groups after a seeded shuffle.
    """
    protocol = PROTOCOL_ALIASES.get(protocol, protocol)
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}; choose from {PROTOCOLS}")
    subjects = [int(s) for s in dataset.subjects()]
    if len(subjects) < 2:
        raise DatasetError("LOSO needs at least 2 distinct subjects")

    if protocol == "ten-fold-cross-subject":
        k = min(10, len(subjects))
        if k < 10:
            warnings.warn(f"only {len(subjects)} subjects, using {k} folds", stacklevel=2)
        order = np.random.default_rng(seed).permutation(subjects)
        groups = [sorted(int(s) for s in g) for g in np.array_split(order, k)]
        folds = tuple(
            Fold(tuple(s for s in subjects if s not in g), tuple(g)) for g in groups
        )
        return SplitPlan(protocol, folds)

    sessions = None
    if protocol == "cross-subject-single-session-LOSO":
        sess = int(dataset.session_id.min()) if session is None else int(session)
        sessions = (sess,)
        present = set(int(s) for s in np.unique(dataset.subject_id[dataset.session_id == sess]))
        subjects = [s for s in subjects if s in present]
        if len(subjects) < 2:
            raise DatasetError(f"session {sess} has fewer than 2 subjects")
    folds = tuple(
        Fold(tuple(s for s in subjects if s != t), (t,), sessions) for t in subjects
    )
    return SplitPlan(protocol, folds)


# --------------------------------------------------------------------------
# synthetic benchmark
# --------------------------------------------------------------------------

def _block_rotation(d: int, angle: float) -> np.ndarray:
    r = np.eye(d)
    c, s = math.cos(angle), math.sin(angle)
    for i in range(0, d - 1, 2):
        r[i:i + 2, i:i + 2] = [[c, -s], [s, c]]
    return r


def synth_domain_shift(seed: int, n_per_class: int, class_count: int, shift: float,
                       rotation: float, noise: float, n_features: int = 10,
                       separation: float = 2.5) -> DomainPair:
    """Gaussian class blobs with a shifted and rotated copy as the target.

    Class ``c`` is centred at ``separation * e_c``. The target draws fresh
    samples from the same blobs, rotates every coordinate pair by
    ``rotation`` radians and then translates by ``shift`` along the
    normalised all-ones direction.
    """
    if n_per_class < 2 or class_count < 2 or noise <= 0:
        raise ValueError("need n_per_class >= 2, class_count >= 2 and noise > 0")
    if n_features < class_count:
        raise ValueError("n_features must be at least class_count")
    rng = np.random.default_rng(seed)
    means = np.zeros((class_count, n_features))
    means[np.arange(class_count), np.arange(class_count)] = separation
    y = np.repeat(np.arange(class_count), n_per_class)

    def draw():
        return means[y] + noise * rng.standard_normal((y.size, n_features))

    xs = draw()
    xt = draw() @ _block_rotation(n_features, rotation).T
    xt = xt + shift * np.ones(n_features) / math.sqrt(n_features)
    n = y.size
    src = FeatureDataset(xs, y, np.zeros(n), np.zeros(n), class_count)
    tgt = FeatureDataset(xt, y, np.ones(n), np.zeros(n), class_count)
    return DomainPair(src, tgt)


def synth_subjects(seed: int, n_subjects: int, n_per_class: int, class_count: int,
                   shift: float, rotation: float, noise: float, n_features: int = 10,
                   n_sessions: int = 1) -> FeatureDataset:
    """Multi-subject dataset where each subject/session carries its own shift."""
    rng = np.random.default_rng(seed)
    parts = []
    for s in range(n_subjects):
        for k in range(n_sessions):
            sub_seed = int(rng.integers(2**31))
            direction = rng.uniform(-1.0, 1.0)
            pair = synth_domain_shift(sub_seed, n_per_class, class_count,
                                      shift * direction, rotation * direction, noise,
                                      n_features)
            t = pair.target
            parts.append((t.features, t.labels, np.full(t.num_samples, s), np.full(t.num_samples, k)))
    x, y, subj, sess = (np.concatenate(p) for p in zip(*parts))
    return FeatureDataset(x, y, subj, sess, class_count)


# --------------------------------------------------------------------------
# differential entropy features
# --------------------------------------------------------------------------

def band_variance(windows, sample_rate: float, bands) -> np.ndarray:
    """Periodogram power per band, shape ``(window, channel, band)``.

    Power is normalised so that summing over every rfft bin reproduces
    the mean square of the signal (Parseval).
    """
    x = np.asarray(windows, dtype=np.float64)
    if x.ndim != 3:
        raise ValueError(f"windows must be (window, channel, time), got {x.shape}")
    n_t = x.shape[-1]
    nyquist = sample_rate / 2.0
    freqs = np.fft.rfftfreq(n_t, d=1.0 / sample_rate)
    spec = np.abs(np.fft.rfft(x, axis=-1)) ** 2 / n_t**2
    weight = np.full(freqs.size, 2.0)
    weight[0] = 1.0
    if n_t % 2 == 0:
        weight[-1] = 1.0
    out = np.empty(x.shape[:2] + (len(bands),))
    for b, (lo, hi) in enumerate(bands):
        if hi > nyquist or lo < 0 or lo > hi:
            raise ValueError(f"band ({lo}, {hi}) Hz outside [0, Nyquist={nyquist}]")
        sel = (freqs >= lo) & (freqs <= hi)
        if not sel.any():
            raise ValueError(f"band ({lo}, {hi}) Hz holds no frequency bin; window too short")
        out[..., b] = (spec[..., sel] * weight[sel]).sum(axis=-1)
    return out


def extract_de_features(windows, sample_rate: float, bands=None, labels=None,
                        subject_id=0, session_id=0, class_count: int = 2,
                        channel_names: Optional[Sequence[str]] = None) -> FeatureDataset:
    """Differential entropy ``0.5 * ln(2*pi*e*var)`` per channel and band.

    Features are channel-major: index ``channel * n_bands + band``.
    Variances below ``DE_VARIANCE_FLOOR`` are clamped.
    """
    if bands is None:
        band_names = [b[0] for b in DEFAULT_BANDS]
        bands = [(lo, hi) for _, lo, hi in DEFAULT_BANDS]
    else:
        band_names = [f"{lo:g}-{hi:g}Hz" for lo, hi in bands]
    var = band_variance(windows, sample_rate, bands)
    de = 0.5 * np.log(2 * np.pi * np.e * np.maximum(var, DE_VARIANCE_FLOOR))
    n_w, n_ch, n_b = de.shape
    if channel_names is None:
        channel_names = [f"ch{c}" for c in range(n_ch)]
    names = tuple(f"{ch}_{b}" for ch in channel_names for b in band_names)
    labels = np.full(n_w, UNLABELED) if labels is None else labels
    return FeatureDataset(
        de.reshape(n_w, n_ch * n_b), labels,
        np.broadcast_to(subject_id, (n_w,)), np.broadcast_to(session_id, (n_w,)),
        class_count, names,
    )
