"""Datasets: synthetic generators with known structure, and file loaders.

Supported files: CSV (header row, last column an integer label), IDX image
and label files, and event-sequence files (one session per line, event ids
separated by spaces).
"""

from __future__ import annotations

import csv
import io
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .config import FLOAT_DIGITS
from .errors import DimensionError, ParseError, ValidationError

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
HDFS_VOCAB_SIZE = 29


@dataclass
class Dataset:
    xs: np.ndarray
    ys: np.ndarray
    feature_names: list
    n_classes: int
    ground_truth_features: Optional[frozenset] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xs = np.ascontiguousarray(self.xs, dtype=np.float64)
        self.ys = np.asarray(self.ys, dtype=np.int64)
        if self.xs.ndim != 2:
            raise DimensionError(f"xs must be 2-D, got shape {self.xs.shape}")
        if self.ys.shape != (self.xs.shape[0],):
            raise DimensionError(f"{self.xs.shape[0]} samples but {self.ys.size} labels")
        if len(self.feature_names) != self.xs.shape[1]:
            raise DimensionError(
                f"{len(self.feature_names)} feature names for {self.xs.shape[1]} features"
            )

    def __len__(self) -> int:
        return self.xs.shape[0]

    @property
    def dim(self) -> int:
        return self.xs.shape[1]

    def split(self, test_fraction: float = 0.25, seed: int = 0):
        """Seeded random train/test split."""
        order = np.random.default_rng(seed).permutation(len(self))
        n_test = int(round(test_fraction * len(self)))
        test, train = order[:n_test], order[n_test:]
        return self.subset(np.sort(train)), self.subset(np.sort(test))

    def subset(self, idx) -> "Dataset":
        return Dataset(self.xs[idx], self.ys[idx], list(self.feature_names), self.n_classes,
                       self.ground_truth_features, dict(self.meta))


# ---------------------------------------------------------------------------
# generators


def gen_planted_tabular(n: int, dim: int, relevant: Iterable[int], seed: int = 0) -> Dataset:
    """Uniform[-1, 1] features; label is 1 iff the relevant features sum above zero."""
    rel = sorted(set(int(i) for i in relevant))
    if not rel:
        raise ValidationError("relevant feature set must not be empty")
    if rel[0] < 0 or rel[-1] >= dim:
        raise ValidationError(f"relevant features must lie in [0, {dim})")
    rng = np.random.default_rng(seed)
    xs = rng.uniform(-1.0, 1.0, size=(n, dim))
    ys = planted_label(xs, rel)
    names = [f"x{i}" for i in range(dim)]
    return Dataset(xs, ys, names, 2, frozenset(rel))


def planted_label(xs, relevant) -> np.ndarray:
    xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
    return (xs[:, sorted(relevant)].sum(axis=1) > 0.0).astype(np.int64)


@dataclass(frozen=True)
class SequenceWindowSpec:
    window: int = 10
    vocab_size: int = HDFS_VOCAB_SIZE

    def __post_init__(self):
        if self.window < 1:
            raise ValidationError("window must be >= 1")
        if self.vocab_size < 1:
            raise ValidationError("vocab_size must be >= 1")


def one_hot_window(events: Sequence[int], vocab_size: int) -> np.ndarray:
    ev = np.asarray(events, dtype=np.int64)
    x = np.zeros(ev.size * vocab_size)
    x[np.arange(ev.size) * vocab_size + ev] = 1.0
    return x


def decode_window(x, vocab_size: int) -> np.ndarray:
    """Event ids of a flattened one-hot window (argmax per position)."""
    blocks = np.asarray(x, dtype=np.float64).reshape(-1, vocab_size)
    return np.argmax(blocks, axis=1)


def windowize(events: Sequence[int], spec: SequenceWindowSpec) -> Dataset:
    """Sliding windows of one-hot events, each labelled with the event that follows."""
    ev = np.asarray(events, dtype=np.int64)
    if ev.size <= spec.window:
        raise ValidationError(f"need more than {spec.window} events, got {ev.size}")
    bad = np.flatnonzero((ev < 0) | (ev >= spec.vocab_size))
    if bad.size:
        raise ValidationError(
            f"event id {int(ev[bad[0]])} at position {int(bad[0])} outside vocabulary [0, {spec.vocab_size})"
        )
    n = ev.size - spec.window
    xs = np.stack([one_hot_window(ev[i:i + spec.window], spec.vocab_size) for i in range(n)])
    ys = ev[spec.window:]
    names = [f"pos{p}:e{e}" for p in range(spec.window) for e in range(spec.vocab_size)]
    return Dataset(xs, ys, names, spec.vocab_size,
                   meta={"kind": "sequence", "window": spec.window, "vocab_size": spec.vocab_size})


def windowize_sessions(sessions: Sequence[Sequence[int]], spec: SequenceWindowSpec) -> Dataset:
    """Concatenate :func:`windowize` over sessions, skipping sessions that are too short."""
    parts = [windowize(s, spec) for s in sessions if len(s) > spec.window]
    if not parts:
        raise ValidationError(f"no session longer than the window ({spec.window})")
    return Dataset(np.concatenate([p.xs for p in parts]), np.concatenate([p.ys for p in parts]),
                   parts[0].feature_names, spec.vocab_size, meta=dict(parts[0].meta))


def gen_event_sessions(n_sessions: int, vocab_size: int = HDFS_VOCAB_SIZE, length: int = 24,
                       anomaly_rate: float = 0.0, seed: int = 0) -> list:
    """Block-lifecycle-like event sessions driven by a sparse Markov chain.

    Normal sessions follow a chain in which each event has two likely
    successors. With probability ``anomaly_rate`` a session gets one event
    replaced by a uniformly random id.
    """
    if vocab_size < 3:
        raise ValidationError("vocab_size must be at least 3")
    rng = np.random.default_rng(seed)
    chain = np.random.default_rng(seed ^ 0x5EED).integers(0, vocab_size, size=(vocab_size, 2))
    sessions = []
    for _ in range(n_sessions):
        e = int(rng.integers(0, vocab_size))
        seq = [e]
        for _ in range(length - 1):
            e = int(chain[e, 0] if rng.random() < 0.8 else chain[e, 1])
            seq.append(e)
        if rng.random() < anomaly_rate:
            seq[int(rng.integers(1, length))] = int(rng.integers(0, vocab_size))
        sessions.append(seq)
    return sessions


def load_digits_dataset() -> Dataset:
    """The 8x8 handwritten digits bundled with scikit-learn, pixels scaled to [0, 1]."""
    from sklearn.datasets import load_digits

    d = load_digits()
    xs = d.data / 16.0
    names = [f"px{r}_{c}" for r in range(8) for c in range(8)]
    return Dataset(xs, d.target, names, 10, meta={"kind": "image", "shape": [8, 8]})


# ---------------------------------------------------------------------------
# CSV


def load_csv(path) -> Dataset:
    """Read a CSV with a header row and an integer label in the last column.

    Lines starting with ``#`` before the header are skipped.
    """
    with open(path, encoding="utf-8", newline="") as fh:
        text = fh.read()
    return loads_csv(text)


def loads_csv(text: str) -> Dataset:
    lines = text.splitlines()
    skip = 0
    while skip < len(lines) and lines[skip].startswith("#"):
        skip += 1
    reader = csv.reader(io.StringIO("\n".join(lines[skip:])))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("CSV: missing header row") from None
    if len(header) < 2:
        raise ParseError(f"CSV row {skip + 1}: header needs at least one feature and a label column")
    rows, labels = [], []
    for lineno, row in enumerate(reader, start=skip + 2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"CSV row {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            values = [float(v) for v in row[:-1]]
        except ValueError:
            bad = next(v for v in row[:-1] if not _is_float(v))
            raise ParseError(f"CSV row {lineno}: non-numeric cell {bad!r}") from None
        if not all(np.isfinite(values)):
            raise ParseError(f"CSV row {lineno}: non-finite value")
        try:
            label = int(row[-1])
        except ValueError:
            raise ParseError(f"CSV row {lineno}: label {row[-1]!r} is not an integer") from None
        if label < 0:
            raise ParseError(f"CSV row {lineno}: negative label {label}")
        rows.append(values)
        labels.append(label)
    if not rows:
        raise ParseError("CSV: no data rows")
    ys = np.array(labels, dtype=np.int64)
    return Dataset(np.array(rows), ys, header[:-1], int(ys.max()) + 1)


def _is_float(v: str) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False


def dumps_csv(ds: Dataset, comments: Sequence[str] = ()) -> str:
    out = [f"# {c}" for c in comments]
    out.append(",".join(list(ds.feature_names) + ["label"]))
    for x, y in zip(ds.xs, ds.ys):
        out.append(",".join(format(float(v), f".{FLOAT_DIGITS}g") for v in x) + f",{int(y)}")
    return "\n".join(out) + "\n"


def write_csv(ds: Dataset, path, comments: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_csv(ds, comments))


# ---------------------------------------------------------------------------
# IDX


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 4:
        raise ParseError(f"{path}: offset 0: file too short for an IDX header")
    (got,) = struct.unpack(">I", raw[:4])
    if got != magic:
        raise ParseError(f"{path}: offset 0: bad magic 0x{got:08x}, expected 0x{magic:08x}")
    header_end = 4 + 4 * ndim
    if len(raw) < header_end:
        raise ParseError(f"{path}: offset 4: truncated dimension header")
    dims = struct.unpack(f">{ndim}I", raw[4:header_end])
    n_bytes = int(np.prod(dims))
    if len(raw) != header_end + n_bytes:
        raise ParseError(
            f"{path}: offset {header_end}: expected {n_bytes} data bytes, found {len(raw) - header_end}"
        )
    return np.frombuffer(raw, dtype=np.uint8, offset=header_end).reshape(dims)


def load_idx(path_images, path_labels) -> Dataset:
    """MNIST-style IDX pair; pixels scaled to [0, 1] by dividing by 255."""
    images = _read_idx(path_images, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(path_labels, IDX_LABELS_MAGIC, 1)
    if images.shape[0] != labels.shape[0]:
        raise ParseError(f"{path_labels}: offset 4: {labels.shape[0]} labels for {images.shape[0]} images")
    n, rows, cols = images.shape
    xs = images.reshape(n, rows * cols).astype(np.float64) / 255.0
    ys = labels.astype(np.int64)
    names = [f"px{r}_{c}" for r in range(rows) for c in range(cols)]
    n_classes = int(ys.max()) + 1 if n else 1
    return Dataset(xs, ys, names, n_classes, meta={"kind": "image", "shape": [rows, cols]})


def write_idx(images: np.ndarray, labels, path_images, path_labels) -> None:
    """Write uint8 images of shape ``(n, rows, cols)`` and their labels."""
    images = np.asarray(images)
    if images.ndim != 3:
        raise DimensionError(f"images must have shape (n, rows, cols), got {images.shape}")
    img = np.asarray(images, dtype=np.uint8)
    lab = np.asarray(labels, dtype=np.uint8)
    with open(path_images, "wb") as fh:
        fh.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, *img.shape))
        fh.write(img.tobytes())
    with open(path_labels, "wb") as fh:
        fh.write(struct.pack(">II", IDX_LABELS_MAGIC, lab.shape[0]))
        fh.write(lab.tobytes())


# ---------------------------------------------------------------------------
# event-sequence files


def load_sequences(path) -> list:
    """One session per line, space-separated non-negative integer event ids."""
    sessions = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            try:
                seq = [int(t) for t in tokens]
            except ValueError:
                bad = next(t for t in tokens if not t.lstrip("-").isdigit())
                raise ParseError(f"{path}: line {lineno}: non-integer event id {bad!r}") from None
            if min(seq) < 0:
                raise ParseError(f"{path}: line {lineno}: negative event id")
            sessions.append(seq)
    if not sessions:
        raise ParseError(f"{path}: no sessions")
    return sessions


def write_sequences(sessions, path, comments: Sequence[str] = ()) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        for s in sessions:
            fh.write(" ".join(str(int(e)) for e in s) + "\n")
