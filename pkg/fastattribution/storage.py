"""
File helpers: atomic replacement writes and line-oriented JSON.
"""

import json
import os
import tempfile
from collections.abc import Iterable, Iterator
from pathlib import Path
from typing import Any


def atomic_write_text(path: str | Path, text: str) -> Path:
    """Write text to a temporary sibling file, then rename it over path."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{target.name}.", suffix=".tmp", dir=target.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
            handle.flush()
            os.fsync(handle.fileno())
        Path(tmp_name).replace(target)
    except BaseException:
        Path(tmp_name).unlink(missing_ok=True)
        raise
    return target


def dumps_line(record: dict[str, Any]) -> str:
    """One JSON object on one line, keys sorted, no trailing newline."""
    return json.dumps(record, sort_keys=True, ensure_ascii=False)


def append_lines(path: str | Path, lines: Iterable[str]) -> None:
    """
    Append lines to path, one per line.

    A last line left unterminated by an interrupted write is closed off
    first, so it stays a single corrupt line and new records stay readable.
    """
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("a+b") as handle:
        end = handle.seek(0, os.SEEK_END)
        if end:
            handle.seek(end - 1)
            if handle.read(1) != b"\n":
                handle.write(b"\n")
        handle.write("".join(line + "\n" for line in lines).encode("utf-8"))


def iter_jsonl(path: str | Path) -> Iterator[tuple[int, dict[str, Any] | None, str | None]]:
    """
    Yield ``(line_number, record, error)`` for each non-blank line.

    Exactly one of record and error is set; a corrupt line, including one
    that is not valid UTF-8, does not stop iteration.
    """
    with Path(path).open("rb") as handle:
        for line_number, raw_bytes in enumerate(handle, start=1):
            try:
                raw = raw_bytes.decode("utf-8")
            except UnicodeDecodeError:
                yield line_number, None, "invalid UTF-8"
                continue
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                yield line_number, None, f"invalid JSON: {exc.msg}"
                continue
            if not isinstance(record, dict):
                yield line_number, None, "expected a JSON object"
                continue
            yield line_number, record, None
