from __future__ import annotations

import pytest

from ghvit.errors import DataFormatError
from ghvit.metrics import EpochRecord, export_csv, parse_csv, read_metrics, records_to_csv, write_metrics

RECORDS = [
    EpochRecord(epoch=1, train_loss=2.302585092994046, test_accuracy=0.1135),
    EpochRecord(epoch=2, train_loss=0.4, test_accuracy=0.9),
]


def test_export_writes_header_and_rows(tmp_path):
    write_metrics(RECORDS, tmp_path / "metrics.jsonl")
    assert export_csv(tmp_path / "metrics.jsonl", tmp_path / "out.csv") == 2
    lines = (tmp_path / "out.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,test_accuracy"
    assert lines[1] == "1,2.302585092994046,0.1135"


def test_export_then_parse_keeps_values(tmp_path):
    assert parse_csv(records_to_csv(RECORDS)) == RECORDS


def test_empty_history_is_header_only(tmp_path):
    write_metrics([], tmp_path / "m.jsonl")
    export_csv(tmp_path / "m.jsonl", tmp_path / "m.csv")
    assert (tmp_path / "m.csv").read_text() == "epoch,train_loss,test_accuracy\n"


def test_malformed_metrics_row_names_line(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text(RECORDS[0].model_dump_json() + "\n" + '{"epoch": 2, "train_loss": "x"}\n')
    with pytest.raises(DataFormatError, match=":2:"):
        read_metrics(path)


def test_malformed_csv_row_names_line():
    with pytest.raises(DataFormatError, match="<csv>:3"):
        parse_csv("epoch,train_loss,test_accuracy\n1,0.5,0.5\n2,0.5\n")


def test_history_field_format():
    assert RECORDS[1].to_history_field() == "2:0.4:0.9"
    assert EpochRecord.from_history_field("2:0.4:0.9") == RECORDS[1]
