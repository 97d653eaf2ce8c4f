"""Tag-file formats (text CSV and fixed-record binary) and result CSV writers."""

from __future__ import annotations

import io
import math
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ParseError, PreconditionError
from .synthesis import TagStream

MAGIC = b"QCTAG\x00"
VERSION = 1
HEADER = struct.Struct("<6sHQ")  # magic, version, duration_ps
RECORD = np.dtype([("time_ps", "<u8"), ("channel", "u1"), ("reserved", "V7")])
assert HEADER.size == 16 and RECORD.itemsize == 16


def _finish(times: np.ndarray, channels: np.ndarray, duration: int, node: str, allow_unsorted: bool, src: str) -> TagStream:
    stream = TagStream(times, channels, duration, node)
    if not stream.is_sorted():
        if not allow_unsorted:
            bad = int(np.argmax(np.diff(stream.times_ps) < 0)) + 1
            raise PreconditionError(f"{src}: tags are not sorted (tag {bad}); pass the sort option to accept")
        stream = stream.sorted()
    return stream


def dumps_tags_csv(stream: TagStream) -> str:
    buf = io.StringIO()
    buf.write(f"# duration_ps={stream.duration_ps}\n")
    buf.write(f"# node={stream.node_id}\n")
    buf.write("time_ps,channel\n")
    for t, c in zip(stream.times_ps.tolist(), stream.channels.tolist()):
        buf.write(f"{t},{c}\n")
    return buf.getvalue()


def write_tags_csv(stream: TagStream, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(dumps_tags_csv(stream))
    return path


def loads_tags_csv(text: str, node_id: str | None = None, allow_unsorted: bool = False, src: str = "<csv>") -> TagStream:
    duration = None
    node = node_id
    times: list[int] = []
    chans: list[int] = []
    header_seen = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s:
            continue
        if s.startswith("#"):
            key, _, val = s[1:].strip().partition("=")
            if key.strip() == "duration_ps":
                try:
                    duration = int(val.strip())
                except ValueError:
                    raise ParseError(f"{src}:{lineno}: bad duration_ps value {val.strip()!r}") from None
            elif key.strip() == "node" and node_id is None:
                node = val.strip()
            continue
        if not header_seen and s.replace(" ", "") == "time_ps,channel":
            header_seen = True
            continue
        parts = s.split(",")
        if len(parts) != 2:
            raise ParseError(f"{src}:{lineno}: expected 'time_ps,channel', got {s!r}")
        try:
            t, c = int(parts[0]), int(parts[1])
        except ValueError:
            raise ParseError(f"{src}:{lineno}: non-integer field in {s!r}") from None
        if t < 0 or not 0 <= c <= 255:
            raise ParseError(f"{src}:{lineno}: time must be >= 0 and channel in 0..255")
        times.append(t)
        chans.append(c)
    if duration is None:
        raise ParseError(f"{src}:1: missing '# duration_ps=' header")
    return _finish(np.array(times, np.int64), np.array(chans, np.uint8), duration, node or "alice",
                   allow_unsorted, src)


def read_tags_csv(path: str | Path, node_id: str | None = None, allow_unsorted: bool = False) -> TagStream:
    path = Path(path)
    return loads_tags_csv(path.read_text(), node_id, allow_unsorted, str(path))


def dumps_tags_bin(stream: TagStream) -> bytes:
    rec = np.zeros(len(stream), dtype=RECORD)
    rec["time_ps"] = stream.times_ps.astype(np.uint64)
    rec["channel"] = stream.channels
    return HEADER.pack(MAGIC, VERSION, stream.duration_ps) + rec.tobytes()


def write_tags_bin(stream: TagStream, path: str | Path) -> Path:
    path = Path(path)
    path.write_bytes(dumps_tags_bin(stream))
    return path


def loads_tags_bin(data: bytes, node_id: str = "alice", allow_unsorted: bool = False, src: str = "<bin>") -> TagStream:
    if len(data) < HEADER.size:
        raise ParseError(f"{src}: truncated header at byte offset {len(data)} (need {HEADER.size} bytes)")
    magic, version, duration = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ParseError(f"{src}: bad magic at byte offset 0")
    if version != VERSION:
        raise ParseError(f"{src}: unsupported version {version} at byte offset 6")
    body = len(data) - HEADER.size
    if body % RECORD.itemsize:
        n_full = body // RECORD.itemsize
        offset = HEADER.size + n_full * RECORD.itemsize
        raise ParseError(f"{src}: truncated record at byte offset {offset} ({body % RECORD.itemsize} of 16 bytes)")
    rec = np.frombuffer(data, dtype=RECORD, offset=HEADER.size)
    raw = np.frombuffer(data, dtype=np.uint8, offset=HEADER.size).reshape(-1, RECORD.itemsize)[:, 9:]
    if raw.any():
        k = int(np.argmax(raw.any(axis=1)))
        raise ParseError(f"{src}: non-zero reserved bytes at byte offset {HEADER.size + 16 * k + 9}")
    times = rec["time_ps"]
    if times.size and times.max() > np.iinfo(np.int64).max:
        k = int(np.argmax(times > np.iinfo(np.int64).max))
        raise ParseError(f"{src}: time out of range at byte offset {HEADER.size + 16 * k}")
    return _finish(times.astype(np.int64), rec["channel"].copy(), duration, node_id, allow_unsorted, src)


def read_tags_bin(path: str | Path, node_id: str = "alice", allow_unsorted: bool = False) -> TagStream:
    path = Path(path)
    return loads_tags_bin(path.read_bytes(), node_id, allow_unsorted, str(path))


def read_tags(path: str | Path, node_id: str | None = None, allow_unsorted: bool = False) -> TagStream:
    """Read either format, detected from the file's leading bytes."""
    path = Path(path)
    with path.open("rb") as fh:
        head = fh.read(len(MAGIC))
    if head == MAGIC:
        return read_tags_bin(path, node_id or "alice", allow_unsorted)
    return read_tags_csv(path, node_id, allow_unsorted)


def write_tags(stream: TagStream, path: str | Path) -> Path:
    path = Path(path)
    if path.suffix in (".bin", ".tags"):
        return write_tags_bin(stream, path)
    return write_tags_csv(stream, path)


def fmt(x) -> str:
    """Deterministic, round-trippable text for numbers."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return repr(x)
    return str(x)


def dumps_table(columns: Sequence[str], rows: Iterable[Sequence]) -> str:
    lines = [",".join(columns)]
    lines += [",".join(fmt(v) for v in row) for row in rows]
    return "\n".join(lines) + "\n"
