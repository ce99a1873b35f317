import csv
import logging
import threading
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

from pydantic import BaseModel

logger = logging.getLogger(__name__)

Row = Union[BaseModel, Dict[str, object]]


def _format(value) -> object:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return value


class ReportWriter:
    """Single appender for a CSV report and an optional JSON-lines side file.

    Every row is flushed as it is written, so an aborted run leaves the rows it finished.
    """

    def __init__(self, csv_path: Path, columns: Sequence[str], jsonl_path: Optional[Path] = None):
        self.csv_path = Path(csv_path)
        self.columns = list(columns)
        self.jsonl_path = Path(jsonl_path) if jsonl_path is not None else None
        self._lock = threading.Lock()
        self.rows_written = 0

        self.csv_path.parent.mkdir(parents=True, exist_ok=True)
        self._csv_file = self.csv_path.open("w", newline="")
        self._writer = csv.DictWriter(self._csv_file, fieldnames=self.columns, extrasaction="ignore")
        self._writer.writeheader()
        self._csv_file.flush()
        self._jsonl_file = self.jsonl_path.open("w") if self.jsonl_path is not None else None

    def write_row(self, row: Row) -> None:
        values = row.model_dump() if isinstance(row, BaseModel) else dict(row)
        with self._lock:
            self._writer.writerow({column: _format(values.get(column)) for column in self.columns})
            self._csv_file.flush()
            self.rows_written += 1

    def write_rows(self, rows: Sequence[Row]) -> None:
        for row in rows:
            self.write_row(row)

    def write_record(self, record: BaseModel) -> None:
        if self._jsonl_file is None:
            return
        with self._lock:
            self._jsonl_file.write(record.model_dump_json() + "\n")
            self._jsonl_file.flush()

    def close(self) -> None:
        with self._lock:
            if not self._csv_file.closed:
                self._csv_file.close()
                logger.info(f"Report written: {self.csv_path} ({self.rows_written} rows)")
            if self._jsonl_file is not None and not self._jsonl_file.closed:
                self._jsonl_file.close()

    def __enter__(self) -> "ReportWriter":
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc_type is not None:
            logger.error(f"Run aborted after {self.rows_written} report rows: {exc}")
        self.close()


def read_report(path: Path) -> List[Dict[str, str]]:
    with Path(path).open(newline="") as f:
        return list(csv.DictReader(f))
