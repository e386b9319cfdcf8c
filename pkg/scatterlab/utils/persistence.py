import csv
import hashlib
import io
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any, Iterable, Union

from scatterlab.models import RunManifest, SweepRecord

logger = logging.getLogger(__name__)


def atomic_write_text(path: Union[str, Path], text: str) -> Path:
    """
    Write text to path through a temporary file in the same directory.

    The destination is replaced in one os.replace call, so readers only ever
    see the old file or the complete new one.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".part", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def format_value(value: Any) -> str:
    """Shortest round-trip text for floats; booleans as 0/1; None as empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Union[str, Path], header: list[str], rows: Iterable[Iterable[Any]]) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_value(v) for v in row])
    return atomic_write_text(path, buf.getvalue())


def record_row(record: SweepRecord, header: list[str]) -> list[Any]:
    """Row of a sweep record in header order (params, measured, axes, then bookkeeping)."""
    lookup: dict[str, Any] = {"index": record.index, "failed": record.failed}
    lookup.update(record.params)
    lookup.update(record.measured)
    lookup.update(record.axes)
    return [lookup.get(name) for name in header]


def write_records_csv(path: Union[str, Path], header: list[str], records: list[SweepRecord]) -> Path:
    return write_csv(path, header, (record_row(r, header) for r in records))


def write_json(path: Union[str, Path], payload: Any) -> Path:
    return atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def config_hash(config: dict) -> str:
    """sha256 of the canonical JSON form of a config."""
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def write_manifest(out_dir: Union[str, Path], manifest: RunManifest) -> Path:
    path = write_json(Path(out_dir) / "manifest.json", manifest.model_dump(mode="json"))
    logger.info("Manifest written to %s (complete=%s)", path, manifest.complete)
    return path
