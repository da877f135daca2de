"""Point-cloud readers/writers and the detection report document."""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ParseError, UnsupportedFormat

FORMATS = ("ply-ascii", "ply-binary-little-endian", "xyz", "xyzn")

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


@dataclass
class _Element:
    name: str
    count: int
    props: list = field(default_factory=list)  # (name, dtype) or (name, (count_dt, item_dt))

    @property
    def has_lists(self):
        return any(isinstance(t, tuple) for _, t in self.props)


@dataclass
class PointData:
    """Positions and optional unit normals as read from disk."""

    points: np.ndarray
    normals: Optional[np.ndarray] = None
    comments: list = field(default_factory=list)

    def __len__(self):
        return len(self.points)


def _parse_header(fh):
    magic = fh.readline()
    if magic.strip() != b"ply":
        raise ParseError("missing 'ply' magic", "line 1")
    fmt, elements, comments = None, [], []
    line_no = 1
    while True:
        raw = fh.readline()
        line_no += 1
        if not raw:
            raise ParseError("header ended without end_header", f"line {line_no}")
        try:
            parts = raw.decode("ascii").split()
        except UnicodeDecodeError:
            raise ParseError("non-ascii header", f"line {line_no}") from None
        if not parts:
            continue
        key = parts[0]
        if key == "end_header":
            break
        if key == "format":
            if len(parts) < 2:
                raise ParseError("malformed format line", f"line {line_no}")
            fmt = parts[1]
        elif key in ("comment", "obj_info"):
            comments.append(raw.decode("ascii").rstrip("\r\n")[len(key) + 1:])
        elif key == "element":
            try:
                elements.append(_Element(parts[1], int(parts[2])))
            except (IndexError, ValueError):
                raise ParseError("malformed element line", f"line {line_no}") from None
        elif key == "property":
            if not elements:
                raise ParseError("property before any element", f"line {line_no}")
            try:
                if parts[1] == "list":
                    t = (_PLY_TYPES[parts[2]], _PLY_TYPES[parts[3]])
                    name = parts[4]
                else:
                    t = _PLY_TYPES[parts[1]]
                    name = parts[2]
            except (IndexError, KeyError):
                raise ParseError("malformed property line", f"line {line_no}") from None
            elements[-1].props.append((name, t))
        else:
            raise ParseError(f"unknown header keyword {key!r}", f"line {line_no}")
    if fmt is None:
        raise ParseError("header has no format line", f"line {line_no}")
    return fmt, elements, comments, line_no


def _vertex_arrays(table, where):
    names = table.dtype.names if hasattr(table, "dtype") and table.dtype.names else table.keys()
    for c in "xyz":
        if c not in names:
            raise ParseError(f"vertex element lacks property {c!r}", where)
    X = np.column_stack([np.asarray(table[c], dtype=float) for c in "xyz"])
    N = None
    if all(c in names for c in ("nx", "ny", "nz")):
        N = np.column_stack([np.asarray(table[c], dtype=float) for c in ("nx", "ny", "nz")])
    return X, N


def _read_ply_ascii(fh, elements, header_lines):
    line_no = header_lines
    vertex = None

    def tokens():
        nonlocal line_no
        for raw in fh:
            line_no += 1
            parts = raw.split()
            if parts:
                yield parts

    it = tokens()
    for el in elements:
        cols = {name: [] for name, t in el.props if not isinstance(t, tuple)}
        for _ in range(el.count):
            try:
                parts = next(it)
            except StopIteration:
                raise ParseError(f"file ended inside element {el.name!r}",
                                 f"line {line_no + 1}") from None
            pos = 0
            try:
                for name, t in el.props:
                    if isinstance(t, tuple):
                        pos += 1 + int(parts[pos])
                    else:
                        cols[name].append(float(parts[pos]))
                        pos += 1
            except (IndexError, ValueError):
                raise ParseError(f"malformed {el.name} row", f"line {line_no}") from None
            if pos != len(parts):
                raise ParseError(f"{el.name} row has {len(parts)} values, expected {pos}",
                                 f"line {line_no}")
        if el.name == "vertex":
            vertex = _vertex_arrays({k: np.array(v) for k, v in cols.items()},
                                    f"line {header_lines}")
            break
    return vertex


def _read_ply_binary(fh, elements, fmt):
    if fmt != "binary_little_endian":
        raise UnsupportedFormat(f"PLY format {fmt!r} is not supported")
    data = fh.read()
    start = fh.tell() - len(data)
    off = 0
    for el in elements:
        if not el.has_lists:
            dt = np.dtype([(name, "<" + t) for name, t in el.props])
            need = dt.itemsize * el.count
            if off + need > len(data):
                raise ParseError(
                    f"truncated binary data in element {el.name!r}: need {need} bytes, "
                    f"{len(data) - off} available", f"byte offset {start + len(data)}")
            table = np.frombuffer(data, dtype=dt, count=el.count, offset=off)
            off += need
            if el.name == "vertex":
                return _vertex_arrays(table, f"byte offset {start}")
            continue
        cols = {name: [] for name, t in el.props if not isinstance(t, tuple)}
        for _ in range(el.count):
            for name, t in el.props:
                try:
                    if isinstance(t, tuple):
                        cnt_fmt = "<" + np.dtype(t[0]).char
                        (cnt,) = struct.unpack_from(cnt_fmt, data, off)
                        off += struct.calcsize(cnt_fmt) + int(cnt) * np.dtype(t[1]).itemsize
                        if off > len(data):
                            raise struct.error
                    else:
                        f = "<" + np.dtype(t).char
                        (v,) = struct.unpack_from(f, data, off)
                        cols[name].append(v)
                        off += struct.calcsize(f)
                except struct.error:
                    raise ParseError(f"truncated binary data in element {el.name!r}",
                                     f"byte offset {start + min(off, len(data))}") from None
        if el.name == "vertex":
            return _vertex_arrays({k: np.array(v) for k, v in cols.items()},
                                  f"byte offset {start}")
    return None


def _read_ply(path):
    with open(path, "rb") as fh:
        fmt, elements, comments, header_lines = _parse_header(fh)
        if not any(el.name == "vertex" for el in elements):
            raise ParseError("PLY file has no vertex element", f"line {header_lines}")
        if fmt == "ascii":
            import io as _io
            text = _io.TextIOWrapper(fh, encoding="ascii", errors="strict")
            try:
                result = _read_ply_ascii(text, elements, header_lines)
            except UnicodeDecodeError:
                raise ParseError("non-ascii data in ascii PLY", "body") from None
        else:
            result = _read_ply_binary(fh, elements, fmt)
    X, N = result
    return X, N, comments


def _read_text(path, fmt):
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            s = raw.split("#", 1)[0].split()
            if not s:
                continue
            if width is None:
                width = len(s)
                if fmt == "xyz" and width not in (3, 6):
                    raise ParseError(f"expected 3 columns, got {width}", f"line {line_no}")
                if fmt == "xyzn" and width != 6:
                    raise ParseError(f"expected 6 columns, got {width}", f"line {line_no}")
                if fmt is None and width not in (3, 6):
                    raise ParseError(f"expected 3 or 6 columns, got {width}", f"line {line_no}")
            if len(s) != width:
                raise ParseError(f"expected {width} columns, got {len(s)}", f"line {line_no}")
            try:
                vals = [float(v) for v in s]
            except ValueError:
                raise ParseError("non-numeric value", f"line {line_no}") from None
            bad = [v for v in vals if not math.isfinite(v)]
            if bad:
                raise ParseError("NaN or Inf value", f"line {line_no}")
            rows.append(vals)
    A = np.array(rows, dtype=float).reshape(-1, width or 3)
    X = A[:, :3]
    N = A[:, 3:6] if A.shape[1] == 6 and fmt != "xyz" else None
    return X, N


def detect_format(path) -> str:
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".ply":
        with open(path, "rb") as fh:
            try:
                fmt = _parse_header(fh)[0]
            except ParseError:
                return "ply-ascii"
        return {"ascii": "ply-ascii", "binary_little_endian": "ply-binary-little-endian"}.get(
            fmt, "ply-" + fmt)
    if ext in (".xyz", ".txt", ".pts"):
        return "xyz"
    if ext == ".xyzn":
        return "xyzn"
    raise UnsupportedFormat(f"cannot infer the point format of {path!r}")


def _check_finite(X, N):
    for arr, what in ((X, "coordinate"), (N, "normal")):
        if arr is None:
            continue
        bad = ~np.isfinite(arr).all(axis=1)
        if bad.any():
            i = int(np.argmax(bad))
            raise ParseError(f"NaN or Inf {what}", f"vertex {i}")


def _unit_normals(N):
    if N is None:
        return None
    norms = np.linalg.norm(N, axis=1)
    if np.any(norms < 1e-12):
        raise ParseError("zero-length normal", f"vertex {int(np.argmax(norms < 1e-12))}")
    return N / norms[:, None]


def read_cloud(path, format: Optional[str] = None) -> PointData:
    """Read points (and normals when present) from PLY or whitespace text.

    ``format`` is one of ``FORMATS``; by default it is inferred from the
    extension and PLY header.  Unknown PLY properties and elements are
    skipped.  NaN/Inf values raise :class:`ParseError`.
    """
    fmt = format or detect_format(path)
    if fmt not in FORMATS:
        raise UnsupportedFormat(f"unsupported point format {fmt!r}")
    comments = []
    if fmt.startswith("ply"):
        X, N, comments = _read_ply(path)
    else:
        X, N = _read_text(path, fmt)
    _check_finite(X, N)
    return PointData(X, _unit_normals(N), comments)


def write_ply(path, points, normals=None, comments=(), binary=False):
    """Write a vertex-only PLY (ascii with 17 significant digits, or binary LE).

    ``path`` may also be a binary file object.
    """
    X = np.asarray(points, dtype=float).reshape(-1, 3)
    N = None if normals is None else np.asarray(normals, dtype=float).reshape(-1, 3)
    names = ["x", "y", "z"] + (["nx", "ny", "nz"] if N is not None else [])
    head = ["ply", "format " + ("binary_little_endian" if binary else "ascii") + " 1.0"]
    head += [f"comment {c}" for c in comments]
    head.append(f"element vertex {len(X)}")
    head += [f"property double {n}" for n in names]
    head.append("end_header")
    A = X if N is None else np.hstack([X, N])
    own = not hasattr(path, "write")
    fh = open(path, "wb") if own else path
    try:
        fh.write(("\n".join(head) + "\n").encode("ascii"))
        if binary:
            fh.write(np.ascontiguousarray(A, dtype="<f8").tobytes())
        else:
            lines = (" ".join(format(v, ".17g") for v in row) for row in A)
            fh.write(("\n".join(lines) + ("\n" if len(A) else "")).encode("ascii"))
    finally:
        if own:
            fh.close()


def write_xyz(path, points, normals=None):
    A = np.asarray(points, dtype=float).reshape(-1, 3)
    if normals is not None:
        A = np.hstack([A, np.asarray(normals, dtype=float).reshape(-1, 3)])
    with open(path, "w", encoding="utf-8") as fh:
        for row in A:
            fh.write(" ".join(format(v, ".17g") for v in row) + "\n")


# -- report -------------------------------------------------------------------

@dataclass
class QuadricEntry:
    coefficients: list
    label: str
    score: float
    inlier_count: int

    def to_dict(self):
        return {"coefficients": [float(c) for c in self.coefficients], "class": self.label,
                "score": float(self.score), "inlier_count": int(self.inlier_count)}


@dataclass
class DetectionReport:
    quadrics: list
    planes_removed: list
    config_echo: dict
    seed: int
    frame: str = "raw"
    timings: Optional[dict] = None

    def to_dict(self):
        d = {"seed": int(self.seed), "frame": self.frame,
             "quadrics": [q.to_dict() for q in self.quadrics],
             "planes_removed": [[float(v) for v in p] for p in self.planes_removed],
             "config_echo": dict(self.config_echo)}
        if self.timings is not None:
            d["timings"] = {k: float(v) for k, v in self.timings.items()}
        return d

    @classmethod
    def from_dict(cls, d):
        try:
            quadrics = [QuadricEntry(list(q["coefficients"]), q["class"], q["score"],
                                     q["inlier_count"]) for q in d["quadrics"]]
            return cls(quadrics, [list(p) for p in d["planes_removed"]], dict(d["config_echo"]),
                       int(d["seed"]), d.get("frame", "raw"), d.get("timings"))
        except (KeyError, TypeError) as exc:
            raise ParseError(f"malformed report: {exc}") from None

    def validate(self):
        for q in self.quadrics:
            if len(q.coefficients) != 10:
                raise ValueError("quadric coefficients must have 10 entries")
            if not 0.0 <= q.score <= 1.0:
                raise ValueError("score must lie in [0, 1]")
            if q.inlier_count < 0:
                raise ValueError("inlier_count must be non-negative")
        if not self.config_echo:
            raise ValueError("config_echo must not be empty")


def _dump(v, indent=2, level=0):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(v, dict):
        if not v:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_dump(x, indent, level + 1)}" for k, x in v.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(v, (list, tuple)):
        if not v:
            return "[]"
        if all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in v):
            return "[" + ", ".join(_dump(x, indent, level) for x in v) + "]"
        return "[\n" + ",\n".join(pad + _dump(x, indent, level + 1) for x in v) + "\n" + end + "]"
    if isinstance(v, bool) or v is None:
        return json.dumps(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        if not math.isfinite(v):
            raise ValueError("report values must be finite")
        s = format(v, ".17g")
        if not any(c in s for c in ".en"):
            s += ".0"
        return s
    return json.dumps(v)


def format_document(obj) -> str:
    """JSON text preserving key order, with 17-significant-digit floats."""
    return _dump(obj) + "\n"


def report_text(report: DetectionReport) -> str:
    return format_document(report.to_dict())


def write_report(report: DetectionReport, path):
    report.validate()
    text = report_text(report)
    if path is None or str(path) == "-":
        import sys
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def read_report(path) -> DetectionReport:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid report: {exc.msg}", f"line {exc.lineno}") from None
    return DetectionReport.from_dict(d)
