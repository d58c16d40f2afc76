from __future__ import annotations

import os
from contextlib import contextmanager
from datetime import datetime
from typing import Iterator, List

import pandas as pd
from openpyxl import Workbook, load_workbook
from openpyxl.worksheet.worksheet import Worksheet

from errors import TNGError
from metrics import METRIC_COLUMNS, Metrics

DEFAULT_XLSX = "tng_metrics.xlsx"

# ---------- Sheet layout ----------
METRICS_SHEET = "metrics"
KEY_HEADERS = ["timestamp", "run_id", "model", "seed", "split"]
COUNT_HEADERS = ["tp", "fp", "tn", "fn"]
METRIC_HEADERS = KEY_HEADERS + COUNT_HEADERS + METRIC_COLUMNS + ["auc_note"]


# ---------- Workbook helpers ----------
def _metrics_sheet(wb: Workbook) -> Worksheet:
    """Return the metrics sheet, creating it or widening an older header row."""
    if METRICS_SHEET not in wb.sheetnames:
        ws = wb.create_sheet(METRICS_SHEET)
        ws.append(METRIC_HEADERS)
        return ws

    ws = wb[METRICS_SHEET]
    header: List[str] = [c.value for c in ws[1] if c.value is not None]
    if not header:
        for col, name in enumerate(METRIC_HEADERS, start=1):
            ws.cell(1, col).value = name
        return ws
    for name in METRIC_HEADERS:
        if name not in header:
            header.append(name)
            ws.cell(1, len(header)).value = name
    return ws


def _open_workbook(path: str) -> Workbook:
    if os.path.exists(path):
        return load_workbook(path)
    wb = Workbook()
    wb.remove(wb.active)
    return wb


@contextmanager
def _workbook_lock(path: str) -> Iterator[None]:
    """Exclusive access through an O_EXCL side file; a held lock fails fast."""
    lock_path = path + ".lock"
    try:
        fd = os.open(lock_path, os.O_CREAT | os.O_EXCL | os.O_RDWR)
    except FileExistsError:
        raise TNGError(f"{path} is locked by another process; remove {lock_path} if stale") from None
    try:
        yield
    finally:
        os.close(fd)
        if os.path.exists(lock_path):
            os.remove(lock_path)


# ---------- Public API ----------
def append_metrics(
    *,
    run_id: str,
    model: str,
    seed: int,
    split: str,
    metrics: Metrics,
    path: str = DEFAULT_XLSX,
) -> None:
    """Append one evaluation row to the metrics sheet."""
    row = {
        "timestamp": datetime.now().isoformat(timespec="seconds"),
        "run_id": run_id,
        "model": model,
        "seed": int(seed),
        "split": split,
        **{k: getattr(metrics, k) for k in COUNT_HEADERS + METRIC_COLUMNS + ["auc_note"]},
    }
    with _workbook_lock(path):
        wb = _open_workbook(path)
        ws = _metrics_sheet(wb)
        ws.append([row.get(c.value) for c in ws[1]])
        wb.save(path)


def read_metrics(path: str = DEFAULT_XLSX) -> pd.DataFrame:
    if not os.path.exists(path):
        return pd.DataFrame(columns=METRIC_HEADERS)
    return pd.read_excel(path, sheet_name=METRICS_SHEET, engine="openpyxl")
