from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from ghvit.errors import DataFormatError

CSV_HEADER = ("epoch", "train_loss", "test_accuracy")


class EpochRecord(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    epoch: int = Field(ge=1)
    train_loss: float
    test_accuracy: float = Field(ge=0.0, le=1.0)

    def to_history_field(self) -> str:
        return f"{self.epoch}:{self.train_loss!r}:{self.test_accuracy!r}"

    @classmethod
    def from_history_field(cls, text: str) -> "EpochRecord":
        epoch, loss, acc = text.split(":")
        return cls(epoch=int(epoch), train_loss=float(loss), test_accuracy=float(acc))


def write_metrics(records: Iterable[EpochRecord], path: Path) -> None:
    """One JSON object per epoch."""
    text = "".join(record.model_dump_json() + "\n" for record in records)
    Path(path).write_text(text, encoding="utf-8")


def read_metrics(path: Path) -> list[EpochRecord]:
    records = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            records.append(EpochRecord.model_validate_json(line))
        except ValidationError as e:
            raise DataFormatError(f"{path}:{lineno}: malformed metrics row: {e.errors()[0]['msg']}") from e
    return records


def records_to_csv(records: Iterable[EpochRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow([r.epoch, repr(r.train_loss), repr(r.test_accuracy)])
    return buf.getvalue()


def parse_csv(text: str, *, source: str = "<csv>") -> list[EpochRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_HEADER:
        raise DataFormatError(f"{source}:1: expected header {','.join(CSV_HEADER)}")
    records = []
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            records.append(EpochRecord(**dict(zip(CSV_HEADER, row, strict=True))))
        except (ValidationError, ValueError) as e:
            raise DataFormatError(f"{source}:{lineno}: malformed row {row}") from e
    return records


def export_csv(metrics_path: Path, out_path: Path) -> int:
    records = read_metrics(metrics_path)
    Path(out_path).write_text(records_to_csv(records), encoding="utf-8")
    return len(records)
