"""Dataset representation, file I/O, standardization, folds, synthetic data.

On-disk format, chosen to be trivially writable from any conversion script:

* signal file — one ASCII header line ``n_leads L K sample_rate`` followed by
  raw little-endian float64 samples, record-major then lead-major, in the
  row order of the label file;
* label file — CSV with header ``id,fold,<class names...>`` and one 0/1
  multi-hot row per record.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DataError

SIGMA_FLOOR = 1e-8
TRAIN_FOLDS = frozenset(range(1, 9))
VAL_FOLD = 9
TEST_FOLD = 10


@dataclass(frozen=True)
class DatasetHeader:
    n_leads: int
    L: int
    K: int
    class_names: tuple[str, ...]
    sample_rate: int = 100


@dataclass(frozen=True)
class EcgRecord:
    id: str
    signal: np.ndarray  # (n_leads, L) voltages
    labels: np.ndarray  # (K,) multi-hot ints
    fold: int


@dataclass(frozen=True)
class Dataset:
    header: DatasetHeader
    records: tuple[EcgRecord, ...]
    lead_mean: np.ndarray | None = None  # set by standardize()
    lead_std: np.ndarray | None = None

    def __len__(self):
        return len(self.records)

    def signals(self) -> np.ndarray:
        return np.stack([r.signal for r in self.records])

    def label_matrix(self) -> np.ndarray:
        return np.stack([r.labels for r in self.records])


def _validate_record(rec: EcgRecord, header: DatasetHeader, row: int) -> None:
    if rec.signal.shape != (header.n_leads, header.L):
        raise DataError(
            f"record {rec.id} (row {row}): signal shape {rec.signal.shape} != "
            f"({header.n_leads}, {header.L})"
        )
    if not np.isfinite(rec.signal).all():
        raise DataError(f"record {rec.id} (row {row}): non-finite sample")
    if rec.labels.shape != (header.K,) or not np.isin(rec.labels, (0, 1)).all():
        raise DataError(f"record {rec.id} (row {row}): labels must be a {header.K}-long 0/1 row")
    if not 1 <= rec.fold <= 10:
        raise DataError(f"record {rec.id} (row {row}): fold {rec.fold} outside 1..10")


def load_dataset(signal_file, label_file, header: DatasetHeader | None = None) -> Dataset:
    """Materialize a dataset; malformed rows are rejected with their index.

    When ``header`` is given, the files must agree with it (lead count,
    record length, class names); otherwise the files are trusted.
    """
    signal_file, label_file = Path(signal_file), Path(label_file)
    if not signal_file.exists():
        raise DataError(f"signal file not found: {signal_file}")
    if not label_file.exists():
        raise DataError(f"label file not found: {label_file}")

    with open(signal_file, "rb") as fh:
        head_line = fh.readline().decode("ascii", errors="replace").strip()
        blob = fh.read()
    parts = head_line.split()
    if len(parts) != 4:
        raise DataError(f"{signal_file}: header line must be 'n_leads L K sample_rate'")
    try:
        n_leads, L, K, rate = (int(p) for p in parts)
    except ValueError as exc:
        raise DataError(f"{signal_file}: non-integer header field: {head_line!r}") from exc

    with open(label_file, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["id", "fold"]:
        raise DataError(f"{label_file}: first row must be 'id,fold,<class names...>'")
    class_names = tuple(rows[0][2:])
    if len(class_names) != K:
        raise DataError(
            f"{label_file}: {len(class_names)} label columns but signal header declares K={K}"
        )
    if header is not None:
        if (n_leads, L, K) != (header.n_leads, header.L, header.K):
            raise DataError(
                f"{signal_file}: header ({n_leads}, {L}, {K}) does not match the "
                f"expected ({header.n_leads}, {header.L}, {header.K})"
            )
        for name in class_names:
            if name not in header.class_names:
                raise DataError(f"{label_file}: unknown class name {name!r}")
        if tuple(class_names) != tuple(header.class_names):
            raise DataError(f"{label_file}: class columns {class_names} are not in the expected "
                            f"order {header.class_names}")

    n_records = len(rows) - 1
    expected = n_records * n_leads * L * 8
    if len(blob) != expected:
        raise DataError(
            f"{signal_file}: blob holds {len(blob)} bytes, expected {expected} "
            f"for {n_records} records of {n_leads}x{L} float64"
        )
    signals = np.frombuffer(blob, dtype="<f8").reshape(n_records, n_leads, L)

    out_header = DatasetHeader(n_leads=n_leads, L=L, K=K, class_names=class_names,
                               sample_rate=rate)
    records = []
    seen_ids = set()
    for row_idx, row in enumerate(rows[1:]):
        if len(row) != 2 + K:
            raise DataError(f"{label_file} row {row_idx}: expected {2 + K} fields, got {len(row)}")
        rec_id = row[0]
        if rec_id in seen_ids:
            raise DataError(f"{label_file} row {row_idx}: duplicate id {rec_id!r}")
        seen_ids.add(rec_id)
        try:
            fold = int(row[1])
            labels = np.array([int(v) for v in row[2:]], dtype=np.int64)
        except ValueError as exc:
            raise DataError(f"{label_file} row {row_idx}: non-integer fold/label field") from exc
        rec = EcgRecord(id=rec_id, signal=signals[row_idx].copy(), labels=labels, fold=fold)
        _validate_record(rec, out_header, row_idx)
        records.append(rec)
    return Dataset(header=out_header, records=tuple(records))


def save_dataset(ds: Dataset, signal_file, label_file) -> None:
    """Write the two-file format; load(save(ds)) is value-identical."""
    signal_file, label_file = Path(signal_file), Path(label_file)
    signal_file.parent.mkdir(parents=True, exist_ok=True)
    label_file.parent.mkdir(parents=True, exist_ok=True)
    h = ds.header
    with open(signal_file, "wb") as fh:
        fh.write(f"{h.n_leads} {h.L} {h.K} {h.sample_rate}\n".encode("ascii"))
        for rec in ds.records:
            fh.write(np.ascontiguousarray(rec.signal, dtype="<f8").tobytes())
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["id", "fold", *h.class_names])
    for rec in ds.records:
        writer.writerow([rec.id, rec.fold, *(int(v) for v in rec.labels)])
    label_file.write_text(buf.getvalue())


# ---------------------------------------------------------------------------
# Standardization and folds


def fold_split(ds: Dataset) -> tuple[list[EcgRecord], list[EcgRecord], list[EcgRecord]]:
    """Partition records into train (folds 1-8), validation (9), test (10)."""
    train, val, test = [], [], []
    for rec in ds.records:
        if rec.fold in TRAIN_FOLDS:
            train.append(rec)
        elif rec.fold == VAL_FOLD:
            val.append(rec)
        elif rec.fold == TEST_FOLD:
            test.append(rec)
        else:
            raise DataError(f"record {rec.id}: fold {rec.fold} outside 1..10")
    if not val:
        import warnings

        warnings.warn("validation fold (9) is empty", stacklevel=2)
    return train, val, test


def standardize(ds: Dataset) -> Dataset:
    """Shift/scale every lead by statistics pooled over the training folds only.

    Constant leads map to zeros (the scale is floored at a small epsilon).
    """
    train = [r for r in ds.records if r.fold in TRAIN_FOLDS]
    if not train:
        raise DataError("cannot standardize: training folds 1-8 are empty")
    stacked = np.stack([r.signal for r in train])  # (n_train, n_leads, L)
    mean = stacked.mean(axis=(0, 2))
    std = np.maximum(stacked.std(axis=(0, 2)), SIGMA_FLOOR)
    records = tuple(
        replace(r, signal=(r.signal - mean[:, None]) / std[:, None]) for r in ds.records
    )
    return Dataset(header=ds.header, records=records, lead_mean=mean, lead_std=std)


# ---------------------------------------------------------------------------
# Synthetic generator


@dataclass(frozen=True)
class SynthSpec:
    """Deterministic pulse-train generator with one injectable motif per class.

    Class 0 widens every pulse, class 1 doubles the amplitude on designated
    leads, class 2 stretches the inter-pulse interval.  Folds are assigned
    round-robin so a multiple of 10 records splits 80/10/10.
    """

    seed: int = 0
    n_records: int = 750
    n_leads: int = 4
    L: int = 200
    sample_rate: int = 100
    base_amp: float = 1.0
    pulse_width: float = 3.0  # gaussian std, in samples
    interval: float = 40.0  # inter-pulse spacing, in samples
    noise_std: float = 0.1
    wide_factor: float = 2.5
    amp_factor: float = 2.0
    amp_leads: tuple[int, ...] = (0, 1)
    interval_factor: float = 1.5
    marginals: tuple[float, ...] = (0.45, 0.45, 0.45)
    class_names: tuple[str, ...] = ("WIDE", "TALL", "SLOW")


def synth_generate(spec: SynthSpec) -> Dataset:
    """Generate the synthetic dataset; bitwise identical for a fixed seed."""
    if spec.n_records < 1:
        raise DataError("n_records must be >= 1")
    if len(spec.class_names) != 3 or len(spec.marginals) != 3:
        raise DataError("the generator defines exactly 3 motif classes")
    if spec.n_leads < 1 or spec.L < 1:
        raise DataError("n_leads and L must be >= 1")
    for lead in spec.amp_leads:
        if not 0 <= lead < spec.n_leads:
            raise DataError(f"designated lead {lead} outside 0..{spec.n_leads - 1}")

    rng = np.random.default_rng(spec.seed)
    t = np.arange(spec.L, dtype=np.float64)
    records = []
    for r in range(spec.n_records):
        labels = (rng.random(3) < np.asarray(spec.marginals)).astype(np.int64)
        width = spec.pulse_width * (spec.wide_factor if labels[0] else 1.0)
        interval = spec.interval * (spec.interval_factor if labels[2] else 1.0)
        # First pulse sits half an interval in; the baseline (no motifs, no
        # noise) is therefore the same trace for every record.
        centers = np.arange(interval / 2.0, spec.L + 4.0 * width, interval)
        pulse = np.zeros(spec.L)
        for c in centers:
            pulse += np.exp(-0.5 * ((t - c) / width) ** 2)
        amps = np.full(spec.n_leads, spec.base_amp)
        if labels[1]:
            amps[list(spec.amp_leads)] *= spec.amp_factor
        noise = rng.normal(0.0, spec.noise_std, size=(spec.n_leads, spec.L))
        signal = amps[:, None] * pulse[None, :] + noise
        records.append(
            EcgRecord(id=f"synth-{r:05d}", signal=signal, labels=labels, fold=(r % 10) + 1)
        )
    header = DatasetHeader(
        n_leads=spec.n_leads,
        L=spec.L,
        K=3,
        class_names=spec.class_names,
        sample_rate=spec.sample_rate,
    )
    return Dataset(header=header, records=tuple(records))
