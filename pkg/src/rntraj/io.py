"""Versioned text files and atomic writes.

Every file written by the package starts with one header line
``# rntraj/<kind> v<version>``; JSON documents follow it. Floats go through
``repr`` (shortest round-trip), so reloading reproduces float64 values exactly.
"""
from __future__ import annotations

import json
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

FORMAT_VERSION = 1


class FormatError(ValueError):
    pass


def header(kind: str, version: int = FORMAT_VERSION) -> str:
    return f"# rntraj/{kind} v{version}"


def split_header(text: str, kind: str) -> str:
    first, _, body = text.partition("\n")
    if first.strip() != header(kind):
        raise FormatError(f"expected header {header(kind)!r}, found {first.strip()!r}")
    return body


def dumps_document(kind: str, payload: dict) -> str:
    return header(kind) + "\n" + json.dumps(payload, indent=1, sort_keys=False, allow_nan=False) + "\n"


def loads_document(text: str, kind: str) -> dict:
    body = split_header(text, kind)
    try:
        return json.loads(body)
    except json.JSONDecodeError as err:
        raise FormatError(f"{kind}: malformed body: {err}") from None


def read_document(path, kind: str) -> dict:
    return loads_document(Path(path).read_text(encoding="utf-8"), kind)


class AtomicWriter:
    """Stage several files, then move them all into place together.

    Nothing appears at the destination paths unless :meth:`commit` runs.
    """

    def __init__(self):
        self._staged: list[tuple[str, Path]] = []

    def write_text(self, path, text: str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self._staged.append((tmp, path))

    def commit(self) -> None:
        for tmp, path in self._staged:
            os.replace(tmp, path)
        self._staged.clear()

    def discard(self) -> None:
        for tmp, _ in self._staged:
            try:
                os.unlink(tmp)
            except FileNotFoundError:
                pass
        self._staged.clear()


@contextmanager
def atomic_outputs():
    writer = AtomicWriter()
    try:
        yield writer
    except BaseException:
        writer.discard()
        raise
    else:
        writer.commit()


def write_document(path, kind: str, payload: dict) -> None:
    with atomic_outputs() as w:
        w.write_text(path, dumps_document(kind, payload))
