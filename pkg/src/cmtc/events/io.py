"""Event stream containers and the CSV / binary file formats.

Binary layout, little-endian::

    header  b"EVS1", width u16, height u16, count u64          (16 bytes)
    record  t u64, x u16, y u16, p i8, 3 pad bytes             (16 bytes each)

CSV layout: an optional ``# width=W height=H`` line, the header ``t,x,y,p``
and one record per line.
"""
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Union

import numpy as np

EVENT_DTYPE = np.dtype([("t", "<u8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1")])
BINARY_DTYPE = np.dtype({"names": ["t", "x", "y", "p"], "formats": ["<u8", "<u2", "<u2", "i1"],
                         "offsets": [0, 8, 10, 12], "itemsize": 16})
MAGIC = b"EVS1"
HEADER = struct.Struct("<4sHHQ")
CSV_HEADER = "t,x,y,p"


class EventFormatError(ValueError):
    def __init__(self, message: str, offset: int = None, line: int = None):
        where = []
        if line is not None:
            where.append(f"line {line}")
        if offset is not None:
            where.append(f"byte {offset}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)
        self.offset = offset
        self.line = line


class EventRecord(NamedTuple):
    t: int
    x: int
    y: int
    p: int


@dataclass
class EventStream:
    """Time-ordered events from one sensor; ``records`` is an EVENT_DTYPE array."""

    width: int
    height: int
    records: np.ndarray

    def __post_init__(self):
        self.records = np.asarray(self.records, dtype=EVENT_DTYPE)

    def __len__(self) -> int:
        return len(self.records)

    def __getitem__(self, i: int) -> EventRecord:
        r = self.records[i]
        return EventRecord(int(r["t"]), int(r["x"]), int(r["y"]), int(r["p"]))

    @classmethod
    def from_arrays(cls, width, height, t, x, y, p, sort: bool = True) -> "EventStream":
        rec = np.empty(len(t), dtype=EVENT_DTYPE)
        rec["t"], rec["x"], rec["y"], rec["p"] = t, x, y, p
        if sort:
            rec = rec[np.argsort(rec["t"], kind="stable")]
        stream = cls(width, height, rec)
        stream.validate()
        return stream

    def validate(self) -> None:
        r = self.records
        bad = np.flatnonzero((r["x"] >= self.width) | (r["y"] >= self.height))
        if bad.size:
            i = int(bad[0])
            raise EventFormatError(f"record {i} {self[i]} outside {self.width}x{self.height} sensor")
        bad = np.flatnonzero((r["p"] != 1) & (r["p"] != -1))
        if bad.size:
            i = int(bad[0])
            raise EventFormatError(f"record {i} has polarity {int(r['p'][i])}, expected -1 or +1")
        if len(r) > 1 and np.any(np.diff(r["t"].astype(np.int64)) < 0):
            raise EventFormatError("timestamps are not sorted")

    def equals(self, other: "EventStream") -> bool:
        return (self.width, self.height) == (other.width, other.height) and \
            self.records.tobytes() == other.records.tobytes()


def _format_of(path: Path, fmt) -> str:
    if fmt is not None:
        return fmt
    return "csv" if path.suffix.lower() == ".csv" else "binary"


def write_events(stream: EventStream, path: Union[str, Path], format: str = None) -> None:
    path = Path(path)
    fmt = _format_of(path, format)
    if fmt == "binary":
        body = np.zeros(len(stream), dtype=BINARY_DTYPE)
        for f in ("t", "x", "y", "p"):
            body[f] = stream.records[f]
        path.write_bytes(HEADER.pack(MAGIC, stream.width, stream.height, len(stream)) + body.tobytes())
    elif fmt == "csv":
        r = stream.records
        lines = [f"# width={stream.width} height={stream.height}", CSV_HEADER]
        lines.extend(f"{t},{x},{y},{p}" for t, x, y, p in zip(r["t"].tolist(), r["x"].tolist(),
                                                              r["y"].tolist(), r["p"].tolist()))
        path.write_text("\n".join(lines) + "\n")
    else:
        raise ValueError(f"unknown event format {fmt!r}")


def parse_events(path: Union[str, Path], format: str = None, width: int = None, height: int = None) -> EventStream:
    """Read an event file; records come back sorted by time (stable for ties)."""
    path = Path(path)
    fmt = _format_of(path, format)
    if fmt == "binary":
        stream = _parse_binary(path.read_bytes())
    elif fmt == "csv":
        stream = _parse_csv(path.read_text(), width, height)
    else:
        raise ValueError(f"unknown event format {fmt!r}")
    order = np.argsort(stream.records["t"], kind="stable")
    stream.records = stream.records[order]
    return stream


def _parse_binary(buf: bytes) -> EventStream:
    if len(buf) < HEADER.size:
        raise EventFormatError("file shorter than the 16-byte header", offset=len(buf))
    magic, width, height, count = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise EventFormatError(f"bad magic {magic!r}", offset=0)
    body = len(buf) - HEADER.size
    if body % BINARY_DTYPE.itemsize:
        raise EventFormatError("trailing partial record",
                               offset=HEADER.size + body - body % BINARY_DTYPE.itemsize)
    if body // BINARY_DTYPE.itemsize != count:
        raise EventFormatError(f"header declares {count} records but body holds {body // BINARY_DTYPE.itemsize}",
                               offset=HEADER.size)
    raw = np.frombuffer(buf, dtype=BINARY_DTYPE, count=count, offset=HEADER.size)
    rec = np.empty(count, dtype=EVENT_DTYPE)
    for f in ("t", "x", "y", "p"):
        rec[f] = raw[f]
    _check_records(rec, width, height, lambda i: dict(offset=HEADER.size + i * BINARY_DTYPE.itemsize))
    return EventStream(width, height, rec)


def _parse_csv(text: str, width, height) -> EventStream:
    lines = text.splitlines()
    offsets = np.cumsum([0] + [len(line) + 1 for line in lines]).tolist()
    i = 0
    if lines and lines[0].startswith("#"):
        fields = dict(kv.split("=", 1) for kv in lines[0][1:].split() if "=" in kv)
        try:
            width = int(fields.get("width", width))
            height = int(fields.get("height", height))
        except (TypeError, ValueError):
            raise EventFormatError("bad sensor size comment", offset=0, line=1) from None
        i = 1
    if i >= len(lines) or lines[i].strip() != CSV_HEADER:
        raise EventFormatError(f"expected header {CSV_HEADER!r}", offset=offsets[min(i, len(offsets) - 1)], line=i + 1)
    body = [(n, line) for n, line in enumerate(lines[i + 1:], start=i + 1) if line.strip()]
    rec = np.empty(len(body), dtype=EVENT_DTYPE)
    for k, (n, line) in enumerate(body):
        parts = line.split(",")
        try:
            if len(parts) != 4:
                raise ValueError
            t, x, y, p = (int(v) for v in parts)
            if t < 0 or x < 0 or y < 0:
                raise ValueError
            rec[k] = (t, x, y, p)
        except (ValueError, OverflowError):
            raise EventFormatError(f"malformed record {line!r}", offset=offsets[n], line=n + 1) from None
    if width is None or height is None:
        width = int(rec["x"].max()) + 1 if len(rec) else 0
        height = int(rec["y"].max()) + 1 if len(rec) else 0
    _check_records(rec, width, height, lambda k: dict(offset=offsets[body[k][0]], line=body[k][0] + 1))
    return EventStream(width, height, rec)


def _check_records(rec: np.ndarray, width: int, height: int, where) -> None:
    bad = np.flatnonzero((rec["x"] >= width) | (rec["y"] >= height))
    if bad.size:
        k = int(bad[0])
        raise EventFormatError(
            f"record {k} (t={int(rec['t'][k])}, x={int(rec['x'][k])}, y={int(rec['y'][k])}) "
            f"outside {width}x{height} sensor", **where(k))
    bad = np.flatnonzero((rec["p"] != 1) & (rec["p"] != -1))
    if bad.size:
        k = int(bad[0])
        raise EventFormatError(f"record {k} has polarity {int(rec['p'][k])}", **where(k))
