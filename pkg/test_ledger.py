import os

import pytest
from openpyxl import load_workbook

import db
from errors import TNGError
from excel_logger import METRIC_HEADERS, METRICS_SHEET, append_metrics, read_metrics
from metrics import metrics_from_counts


@pytest.fixture
def sqlite_ledger(tmp_path, monkeypatch):
    monkeypatch.setattr(db, "DB_PATH", str(tmp_path / "runs.sqlite"))
    monkeypatch.setattr(db, "DATABASE_URL", "")
    db.init_db()


def test_ledger_disabled_without_config(monkeypatch):
    monkeypatch.setattr(db, "DB_PATH", "")
    monkeypatch.setattr(db, "DATABASE_URL", "")
    assert not db.ledger_enabled()


def test_ledger_round_trip(sqlite_ledger):
    assert db.ledger_enabled()
    db.save_run(run_id="r1", command="train", seed=0, config_hash="abc", out_dir="out",
                exit_code=0, manifest={"seeds": [0]})
    db.save_run(run_id="r2", command="eval", seed=1, config_hash="abc", out_dir="out",
                exit_code=0, manifest={"seeds": [1]})
    rows = db.fetch_runs(limit=5)
    assert {r[0] for r in rows} == {"r1", "r2"}
    assert len(db.fetch_runs(limit=1)) == 1
    assert db.fetch_runs(config_hash="zzz") == []


def test_metrics_rows_appended(tmp_path):
    path = str(tmp_path / "m.xlsx")
    m = metrics_from_counts(tp=3, fp=1, tn=5, fn=1)
    append_metrics(run_id="a", model="tng", seed=0, split="test", metrics=m, path=path)
    append_metrics(run_id="a", model="tng", seed=1, split="test", metrics=m, path=path)
    ws = load_workbook(path)[METRICS_SHEET]
    assert [c.value for c in ws[1]] == METRIC_HEADERS
    assert ws.max_row == 3
    row = {h: c.value for h, c in zip(METRIC_HEADERS, ws[3])}
    assert row["seed"] == 1 and row["tp"] == 3
    assert row["accuracy"] == pytest.approx(0.8)
    assert not os.path.exists(path + ".lock")
    assert list(read_metrics(path)["seed"]) == [0, 1]


def test_metrics_refuses_locked_workbook(tmp_path):
    path = str(tmp_path / "m.xlsx")
    open(path + ".lock", "w").close()
    with pytest.raises(TNGError):
        append_metrics(run_id="a", model="tng", seed=0, split="test", metrics=metrics_from_counts(1, 0, 1, 0), path=path)
