"""Event and ground-truth file formats.

``evcsv``: header ``# evcsv v1 W=<int> H=<int>`` then ``x,y,t_us,p`` lines.
``EVB1``: magic, ``u16 W, u16 H, u64 count``, then packed little-endian
``(u16 x, u16 y, u64 t_us, i8 p)`` records.
"""

from __future__ import annotations

import re
import struct

import numpy as np

from .model import EventOrderError, EventStream, GroundTruthBox, SensorGeometry

EVB_MAGIC = b"EVB1"
EVB_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<u8"), ("p", "i1")])
_HEADER = re.compile(r"^#\s*evcsv\s+v1\s+W=(\d+)\s+H=(\d+)\s*$")


class EventParseError(ValueError):
    pass


def guess_format(path):
    return "bin" if str(path).endswith((".evb", ".bin")) else "csv"


def parse_event_file(path, fmt=None):
    fmt = fmt or guess_format(path)
    if fmt == "csv":
        return _parse_csv(path)
    if fmt == "bin":
        return _parse_bin(path)
    raise ValueError(f"unknown event format {fmt!r} (expected csv or bin)")


def write_event_file(stream, path, fmt=None):
    fmt = fmt or guess_format(path)
    if fmt == "csv":
        _write_csv(stream, path)
    elif fmt == "bin":
        _write_bin(stream, path)
    else:
        raise ValueError(f"unknown event format {fmt!r} (expected csv or bin)")


def _finish(path, geometry, x, y, t, p):
    t = np.asarray(t, dtype=np.int64)
    dec = np.flatnonzero(np.diff(t) < 0)
    if len(dec):
        raise EventOrderError(f"{path}: timestamp decreases at record {dec[0] + 2}")
    p = np.asarray(p, dtype=np.int64)
    bad = np.flatnonzero((p != 1) & (p != -1))
    if len(bad):
        raise ValueError(f"{path}: record {bad[0] + 1} has polarity {p[bad[0]]}, expected +1 or -1")
    return EventStream(x, y, t, p, geometry)


def _parse_csv(path):
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline()
        m = _HEADER.match(header.strip())
        if not m:
            raise EventParseError(f"{path}:1: bad header {header.strip()!r}")
        geometry = SensorGeometry(int(m.group(1)), int(m.group(2)))
        xs, ys, ts, ps = [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(",")
            try:
                if len(parts) != 4:
                    raise ValueError
                x, y, t, p = (int(v) for v in parts)
            except ValueError:
                raise EventParseError(f"{path}:{lineno}: malformed event line {line!r}") from None
            xs.append(x)
            ys.append(y)
            ts.append(t)
            ps.append(p)
    return _finish(path, geometry, xs, ys, ts, ps)


def _write_csv(stream, path):
    g = stream.geometry
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"# evcsv v1 W={g.width} H={g.height}\n")
        cols = np.stack([stream.x, stream.y, stream.t, stream.p.astype(np.int64)], axis=1)
        if len(cols):
            np.savetxt(fh, cols, fmt="%d", delimiter=",")


def _parse_bin(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != EVB_MAGIC:
        raise EventParseError(f"{path}: bad magic {blob[:4]!r}")
    if len(blob) < 16:
        raise EventParseError(f"{path}: truncated header")
    w, h, count = struct.unpack_from("<HHQ", blob, 4)
    body = len(blob) - 16
    if body != count * EVB_RECORD.itemsize:
        full = body // EVB_RECORD.itemsize
        raise EventParseError(f"{path}: record {full + 1} truncated or count mismatch "
                              f"(header says {count}, body holds {body / EVB_RECORD.itemsize:g})")
    rec = np.frombuffer(blob, dtype=EVB_RECORD, count=count, offset=16)
    return _finish(path, SensorGeometry(w, h), rec["x"], rec["y"], rec["t"].astype(np.int64), rec["p"])


def _write_bin(stream, path):
    g = stream.geometry
    rec = np.empty(len(stream), dtype=EVB_RECORD)
    rec["x"], rec["y"], rec["t"], rec["p"] = stream.x, stream.y, stream.t, stream.p
    with open(path, "wb") as fh:
        fh.write(EVB_MAGIC)
        fh.write(struct.pack("<HHQ", g.width, g.height, len(stream)))
        fh.write(rec.tobytes())


def write_gt_file(boxes, path):
    with open(path, "w", encoding="ascii") as fh:
        for b in boxes:
            fh.write(f"{b.window},{b.class_id},{b.x_min},{b.y_min},{b.x_max},{b.y_max}\n")


def parse_gt_file(path):
    out = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                vals = [int(v) for v in line.split(",")]
                if len(vals) != 6:
                    raise ValueError
                out.append(GroundTruthBox(*vals))
            except ValueError:
                raise EventParseError(f"{path}:{lineno}: malformed ground-truth line {line!r}") from None
    return out
