"""Artifact I/O: atomic writes, SHA-256 digests, CSV/JSON helpers.

All floats are serialized with repr() (shortest round-trip form) so identical
pipelines produce byte-identical files, and every writer goes through a
temp-file + os.replace so readers never observe a half-written artifact.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import tempfile
from pathlib import Path


def float_repr(x) -> str:
    return repr(float(x))


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow(row)
    return buf.getvalue()


def write_csv(path: str | Path, header: list[str], rows) -> str:
    """Write a CSV atomically, return its digest."""
    text = csv_text(header, rows)
    atomic_write_text(path, text)
    return sha256_bytes(text.encode("utf-8"))


def json_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def write_json(path: str | Path, obj) -> str:
    """Write JSON (sorted keys) atomically, return its digest."""
    text = json_text(obj)
    atomic_write_text(path, text)
    return sha256_bytes(text.encode("utf-8"))


def read_csv(path: str | Path) -> tuple[list[str], list[list[str]]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty CSV")
    return rows[0], rows[1:]


def read_json(path: str | Path):
    with open(path) as fh:
        return json.load(fh)


def stable_hash_u64(text: str) -> int:
    """First 8 little-endian bytes of sha256(text) as an unsigned int.

    Used to derive per-cell sub-seeds: sub = (root + stable_hash_u64(name)) mod 2^64.
    """
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(root_seed: int, name: str) -> int:
    return (int(root_seed) + stable_hash_u64(name)) % (1 << 64)
