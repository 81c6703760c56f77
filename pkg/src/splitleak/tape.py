"""The tape: everything the non-label party legitimately sees, one record per sample.

A training tape holds, for every (epoch, sample) pair, the per-sample gradient
received at the cut (after any defense) and the smashed data that was sent,
plus epoch/batch bookkeeping and the held-out true label used only for
scoring. Storage is columnar; ``entry(i)`` gives a per-record view.

Binary container layout (all little-endian):

    magic    8 bytes  b"SLTAPE01"
    width    u64      cut width (vector length)
    count    u64      number of records
    records  fixed size, count times:
        epoch u64 | batch_index u64 | sample_id u64 | true_label u64
        | cut_gradient f64[width]   (omitted for smashed-only tapes)
        | smashed f64[width]

Whether records carry gradients is inferred from the file size, so the header
stays exactly magic + width + count.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

MAGIC = b"SLTAPE01"
_HEADER = struct.Struct("<8sQQ")


def _record_dtype(width: int, with_gradients: bool) -> np.dtype:
    fields = [("epoch", "<u8"), ("batch_index", "<u8"),
              ("sample_id", "<u8"), ("true_label", "<u8")]
    if with_gradients:
        fields.append(("cut_gradient", "<f8", (width,)))
    fields.append(("smashed", "<f8", (width,)))
    return np.dtype(fields)


@dataclass
class TapeEntry:
    epoch: int
    batch_index: int
    sample_id: int
    true_label: int
    smashed: np.ndarray
    cut_gradient: np.ndarray | None


@dataclass
class Tape:
    epochs: np.ndarray         # (n,) int64
    batch_indices: np.ndarray  # (n,) int64
    sample_ids: np.ndarray     # (n,) int64
    true_labels: np.ndarray    # (n,) int64
    smashed: np.ndarray        # (n, width) float64
    cut_gradients: np.ndarray | None = None  # (n, width) float64, None if not recorded
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.epochs)
        for name in ("batch_indices", "sample_ids", "true_labels"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"{name} length does not match epochs length {n}")
        if self.smashed.ndim != 2 or self.smashed.shape[0] != n:
            raise ValueError(f"smashed must be ({n}, width), got {self.smashed.shape}")
        if self.cut_gradients is not None and self.cut_gradients.shape != self.smashed.shape:
            raise ValueError(
                f"cut_gradients shape {self.cut_gradients.shape} must match "
                f"smashed shape {self.smashed.shape}"
            )

    def __len__(self) -> int:
        return len(self.epochs)

    @property
    def width(self) -> int:
        return self.smashed.shape[1]

    @property
    def has_gradients(self) -> bool:
        return self.cut_gradients is not None

    def entry(self, i: int) -> TapeEntry:
        return TapeEntry(
            epoch=int(self.epochs[i]),
            batch_index=int(self.batch_indices[i]),
            sample_id=int(self.sample_ids[i]),
            true_label=int(self.true_labels[i]),
            smashed=self.smashed[i],
            cut_gradient=None if self.cut_gradients is None else self.cut_gradients[i],
        )

    def __iter__(self) -> Iterator[TapeEntry]:
        return (self.entry(i) for i in range(len(self)))

    def select(self, mask: np.ndarray) -> "Tape":
        return Tape(
            epochs=self.epochs[mask],
            batch_indices=self.batch_indices[mask],
            sample_ids=self.sample_ids[mask],
            true_labels=self.true_labels[mask],
            smashed=self.smashed[mask],
            cut_gradients=None if self.cut_gradients is None else self.cut_gradients[mask],
            metadata=dict(self.metadata),
        )

    def epoch_view(self, epoch: int) -> "Tape":
        return self.select(self.epochs == epoch)

    def save(self, path) -> None:
        dt = _record_dtype(self.width, self.has_gradients)
        records = np.empty(len(self), dtype=dt)
        records["epoch"] = self.epochs
        records["batch_index"] = self.batch_indices
        records["sample_id"] = self.sample_ids
        records["true_label"] = self.true_labels
        if self.has_gradients:
            records["cut_gradient"] = self.cut_gradients
        records["smashed"] = self.smashed
        with open(path, "wb") as f:
            f.write(_HEADER.pack(MAGIC, self.width, len(self)))
            f.write(records.tobytes())

    @staticmethod
    def load(path) -> "Tape":
        with open(path, "rb") as f:
            data = f.read()
        if len(data) < _HEADER.size:
            raise ValueError(f"{path}: truncated tape header")
        magic, width, count = _HEADER.unpack_from(data)
        if magic != MAGIC:
            raise ValueError(f"{path}: bad tape magic {magic!r}")
        body = len(data) - _HEADER.size
        with_grad_size = count * (32 + 16 * width)
        without_grad_size = count * (32 + 8 * width)
        if body == with_grad_size:
            has_gradients = True
        elif body == without_grad_size:
            has_gradients = False
        else:
            raise ValueError(
                f"{path}: body size {body} matches neither gradient layout "
                f"({with_grad_size}) nor smashed-only layout ({without_grad_size})"
            )
        dt = _record_dtype(width, has_gradients)
        records = np.frombuffer(data, dtype=dt, offset=_HEADER.size, count=count)
        return Tape(
            epochs=records["epoch"].astype(np.int64),
            batch_indices=records["batch_index"].astype(np.int64),
            sample_ids=records["sample_id"].astype(np.int64),
            true_labels=records["true_label"].astype(np.int64),
            smashed=np.array(records["smashed"], dtype=np.float64).reshape(count, width),
            cut_gradients=(np.array(records["cut_gradient"], dtype=np.float64)
                           .reshape(count, width) if has_gradients else None),
        )

    def export_csv(self, path) -> None:
        """Lossless text form: vectors as space-joined repr() floats."""
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "batch_index", "sample_id", "true_label",
                             "cut_gradient", "smashed"])
            for e in self:
                grad = "" if e.cut_gradient is None else " ".join(repr(v) for v in e.cut_gradient)
                writer.writerow([e.epoch, e.batch_index, e.sample_id, e.true_label,
                                 grad, " ".join(repr(v) for v in e.smashed)])
