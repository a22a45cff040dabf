"""Small shared helpers: canonical JSON, digests, logical dates, errors."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from datetime import date, datetime, timedelta
from decimal import Decimal
from pathlib import Path
from typing import Any, Iterable, Iterator


class GeraError(Exception):
    """Base class for engine errors."""


class ValidationError(GeraError):
    """Bad input or configuration. CLI exit code 1."""


class ConfigError(ValidationError):
    """A configuration file or spec is invalid."""


class IntegrityError(GeraError):
    """Stored state failed a digest or consistency check. CLI exit code 2."""


class MissingDataError(ValidationError):
    """A computation was asked for data that has not been produced."""


def _default(obj: Any) -> Any:
    if isinstance(obj, Decimal):
        return str(obj)
    if isinstance(obj, date):
        return obj.isoformat()
    if isinstance(obj, (set, frozenset)):
        return sorted(obj)
    if hasattr(obj, "to_dict"):
        return obj.to_dict()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def canonical_json(obj: Any) -> str:
    """Sorted-key, whitespace-free JSON. Stable across runs and platforms."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, default=_default)


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def digest_obj(obj: Any) -> str:
    return sha256_hex(canonical_json(obj))


def parse_date(value: str | date) -> date:
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(value)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid date {value!r}: expected YYYY-MM-DD") from exc


def add_days(d: date, n: int) -> date:
    return d + timedelta(days=n)


def days_between(start: date, end: date) -> int:
    return (end - start).days


def date_range(start: date, end: date) -> Iterator[date]:
    d = start
    while d <= end:
        yield d
        d += timedelta(days=1)


def atomic_write(path: Path, data: bytes | str) -> None:
    """Write via a temp file in the same directory, then rename."""
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_ndjson(path: Path, rows: Iterable[Any]) -> None:
    atomic_write(path, "".join(canonical_json(r) + "\n" for r in rows))


def read_ndjson(path: Path) -> list[dict]:
    if not path.exists():
        return []
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def append_ndjson(path: Path, rows: Iterable[Any]) -> int:
    lines = [canonical_json(r) + "\n" for r in rows]
    if not lines:
        return 0
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as fh:
        fh.writelines(lines)
        fh.flush()
        os.fsync(fh.fileno())
    return len(lines)


def load_json(path: Path) -> Any:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# Declared source date formats. Values are strptime patterns; an entry may
# also be given directly as a strptime pattern containing "%".
DATE_TOKENS = {
    "YYYY-MM-DD": "%Y-%m-%d",
    "MM/DD/YYYY": "%m/%d/%Y",
    "DD/MM/YYYY": "%d/%m/%Y",
    "YYYYMMDD": "%Y%m%d",
    "DD-MON-YYYY": "%d-%b-%Y",
    "YYYY-MM-DD HH:MM:SS": "%Y-%m-%d %H:%M:%S",
    "ISO8601": "iso",
}


def parse_temporal(value: str, fmt: str) -> datetime | date | None:
    """Parse ``value`` under one declared format; ``None`` when it does not fit."""
    pattern = DATE_TOKENS.get(fmt, fmt)
    value = value.strip()
    if pattern == "iso":
        text = value[:-1] + "+00:00" if value.endswith("Z") else value
        try:
            if len(text) == 10:
                return date.fromisoformat(text)
            return datetime.fromisoformat(text)
        except ValueError:
            return None
    if "%" not in pattern:
        raise ConfigError(f"unknown date format {fmt!r}")
    try:
        parsed = datetime.strptime(value, pattern)
    except ValueError:
        return None
    if any(tok in pattern for tok in ("%H", "%M", "%S", "%z")):
        return parsed
    return parsed.date()
