"""Binary and CSV field files, disk-map files, and flat key-value reports.

Binary fields: 16-byte header (``b"HDL1"``, u32 n_r, u32 n_theta, f32 r_max)
then row-major little-endian float64 values, Re/Im interleaved when complex.
A disk map is a complex field followed by ``b"CMAP"``, u32 n_s, u8 has_deriv
and the float64 lift samples (and derivative samples if present).
"""

from __future__ import annotations

import csv
import struct
from pathlib import Path

import numpy as np

from .grid import DiskGrid

MAGIC = b"HDL1"
MAP_MAGIC = b"CMAP"
_HEADER = struct.Struct("<4sIIf")
_MAP_HEADER = struct.Struct("<4sIB")


class FormatError(ValueError):
    pass


def _grid_from_header(n_r, n_theta, r_max32):
    # the header stores r_max as f32; the shortest decimal of that f32 is the value written
    return DiskGrid(int(n_r), int(n_theta), float(str(np.float32(r_max32))))


def _encode(grid: DiskGrid, values) -> bytes:
    values = np.asarray(values)
    if values.shape != grid.shape:
        raise ValueError(f"field shape {values.shape} does not match grid {grid.shape}")
    head = _HEADER.pack(MAGIC, grid.n_r, grid.n_theta, grid.r_max)
    if np.iscomplexobj(values):
        data = np.ascontiguousarray(values, dtype="<c16")
    else:
        data = np.ascontiguousarray(values, dtype="<f8")
    return head + data.tobytes()


def _decode(blob: bytes, allow_trailer=False):
    if len(blob) < _HEADER.size:
        raise FormatError("file too short for a field header")
    magic, n_r, n_theta, r_max = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}")
    grid = _grid_from_header(n_r, n_theta, r_max)
    body = len(blob) - _HEADER.size
    n = grid.size * 8
    if body == n:
        vals = np.frombuffer(blob, "<f8", grid.size, _HEADER.size)
        return grid, vals.reshape(grid.shape).astype(float), _HEADER.size + n
    if body == 2 * n or (allow_trailer and body > 2 * n):
        vals = np.frombuffer(blob, "<c16", grid.size, _HEADER.size)
        return grid, vals.reshape(grid.shape).astype(complex), _HEADER.size + 2 * n
    raise FormatError(f"payload of {body} bytes does not fit a {grid.shape} field")


def write_field(path, grid: DiskGrid, values) -> None:
    """Write a real or complex node field; ``.csv`` paths get the text export."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        write_field_csv(path, grid, values)
    else:
        path.write_bytes(_encode(grid, values))


def read_field(path):
    """Return ``(grid, values)`` from a binary or CSV field file."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        return read_field_csv(path)
    grid, vals, _ = _decode(path.read_bytes())
    return grid, vals


def write_field_csv(path, grid: DiskGrid, values) -> None:
    values = np.asarray(values)
    cplx = np.iscomplexobj(values)
    with open(path, "w", newline="") as fh:
        fh.write(f"# grid = {grid.n_r}x{grid.n_theta}@{grid.r_max!r}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["r", "theta", "x", "y"] + (["value_re", "value_im"] if cplx else ["value"]))
        z = grid.z
        for i in range(grid.n_r):
            for j in range(grid.n_theta):
                v = values[i, j]
                tail = [repr(float(v.real)), repr(float(v.imag))] if cplx else [repr(float(v))]
                w.writerow([repr(float(grid.r[i])), repr(float(grid.theta[j])),
                            repr(float(z[i, j].real)), repr(float(z[i, j].imag))] + tail)


def read_field_csv(path):
    with open(path, newline="") as fh:
        first = fh.readline()
        if not first.startswith("# grid = "):
            raise FormatError(f"{path}: missing grid comment line")
        from .config import parse_grid

        grid = parse_grid(first.split("=", 1)[1].strip())
        rows = list(csv.reader(fh))
    header, rows = rows[0], rows[1:]
    if len(rows) != grid.size:
        raise FormatError(f"{path}: expected {grid.size} rows, found {len(rows)}")
    data = np.array(rows, dtype=float)
    if header[-1] == "value_im":
        vals = data[:, -2] + 1j * data[:, -1]
    else:
        vals = data[:, -1]
    return grid, vals.reshape(grid.shape)


def write_disk_map(path, h) -> None:
    phi = h.boundary
    has_deriv = phi.derivative is not None
    parts = [_encode(h.grid, np.asarray(h.values, dtype=complex)),
             _MAP_HEADER.pack(MAP_MAGIC, phi.n_s, int(has_deriv)),
             np.ascontiguousarray(phi.lift, dtype="<f8").tobytes()]
    if has_deriv:
        parts.append(np.ascontiguousarray(phi.derivative, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_disk_map(path, target=None):
    """Read a disk map; without ``target`` the hyperbolic metric is attached."""
    from .circle import CircleMap
    from .harmonic import DiskMap
    from .metric import MetricField

    blob = Path(path).read_bytes()
    grid, values, off = _decode(blob, allow_trailer=True)
    if blob[off:off + 4] != MAP_MAGIC:
        raise FormatError(f"{path}: no boundary map after the field")
    _, n_s, has_deriv = _MAP_HEADER.unpack_from(blob, off)
    off += _MAP_HEADER.size
    lift = np.frombuffer(blob, "<f8", n_s, off).astype(float)
    deriv = np.frombuffer(blob, "<f8", n_s, off + 8 * n_s).astype(float) if has_deriv else None
    phi = CircleMap(lift, deriv)
    if target is None:
        target = MetricField.hyperbolic(grid)
    elif not target.grid.compatible(grid):
        raise ValueError("target metric grid does not match the map grid")
    return DiskMap(grid, values, phi, target)


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def format_report(top: dict, sections: list[tuple[str, dict]] = ()) -> str:
    """Flat ``key = value`` lines, then one ``[name]`` block per section."""
    lines = [f"{k} = {_fmt(v)}" for k, v in top.items()]
    for name, body in sections:
        lines.append("")
        lines.append(f"[{name}]")
        lines.extend(f"{k} = {_fmt(v)}" for k, v in body.items())
    return "\n".join(lines) + "\n"


def _parse_value(text: str):
    if text in ("true", "false"):
        return text == "true"
    if text.startswith("[") and text.endswith("]"):
        inner = text[1:-1].strip()
        return [_parse_value(x.strip()) for x in inner.split(",")] if inner else []
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def parse_report(text: str):
    """Inverse of :func:`format_report`: ``(top, [(name, dict), ...])``."""
    top: dict = {}
    sections: list = []
    cur = top
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if line.startswith("[") and line.endswith("]") and "=" not in line:
            cur = {}
            sections.append((line[1:-1], cur))
            continue
        key, _, val = line.partition("=")
        cur[key.strip()] = _parse_value(val.strip())
    return top, sections


def write_report(path, top: dict, sections=()) -> None:
    Path(path).write_text(format_report(top, sections))


def read_report(path):
    return parse_report(Path(path).read_text())
