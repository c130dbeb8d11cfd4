"""Text formats for trajectories, frame operators, rate tables and reports.

Matrix file (``*.txt``)::

    # free comment lines start with '#'
    format lindblad-resign-matrices 1
    dim 2
    points 3
    fields rho
    layout dense
    tol 1e-08
    end_header
    t 0
    rho.re 1 0 0 0
    rho.im 0 0 0 0
    t 0.001
    ...

Header lines are ``key value`` pairs; ``format``, ``dim``, ``points`` and
``fields`` are required.  In the dense layout each field contributes a
``.re`` and ``.im`` line with ``dim*dim`` row-major entries.  In the
sparse layout each field is ``<name>.entries n`` followed by ``n`` lines
``row col re im`` (1-based indices); omitted entries are zero.  Numbers
are written with 17 significant digits so that write-then-read is
bit-exact.

Rate tables are CSV with columns ``grid_index,t,term,target,source,dagger,
rate,capped``; ``target``/``source`` are 1-based levels of
``a = |target><source|`` before the dagger flag is applied.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidDensity, ParseError
from .linalg import validate_density
from .synthesis import JumpSpec, RatedTerm

FORMAT_NAME = "lindblad-resign-matrices"
FORMAT_VERSION = 1


def fmt(x: float) -> str:
    return format(float(x), ".17g")


@dataclass
class MatrixFile:
    header: dict
    times: np.ndarray
    fields: dict

    @property
    def dim(self) -> int:
        return int(self.header["dim"])


def write_matrix_file(path, times, fields: dict, header: dict | None = None,
                      layout: str = "dense", comment: str | None = None):
    if layout not in ("dense", "sparse"):
        raise ValueError(f"unknown layout {layout!r}")
    times = np.asarray(times, dtype=float)
    arrays = {name: np.asarray(v, dtype=complex) for name, v in fields.items()}
    d = next(iter(arrays.values())).shape[1]
    lines = []
    if comment:
        lines += [f"# {c}" for c in comment.splitlines()]
    lines += [
        f"format {FORMAT_NAME} {FORMAT_VERSION}",
        f"dim {d}",
        f"points {times.shape[0]}",
        "fields " + " ".join(arrays),
        f"layout {layout}",
    ]
    for key, value in (header or {}).items():
        lines.append(f"{key} {value}")
    lines.append("end_header")
    for n, t in enumerate(times):
        lines.append(f"t {fmt(t)}")
        for name, arr in arrays.items():
            M = arr[n]
            if layout == "dense":
                lines.append(f"{name}.re " + " ".join(fmt(v) for v in M.real.ravel()))
                lines.append(f"{name}.im " + " ".join(fmt(v) for v in M.imag.ravel()))
            else:
                nz = np.argwhere(M != 0)
                lines.append(f"{name}.entries {len(nz)}")
                for i, j in nz:
                    lines.append(f"{i + 1} {j + 1} {fmt(M[i, j].real)} {fmt(M[i, j].imag)}")
    Path(path).write_text("\n".join(lines) + "\n")


def _floats(path, lineno, tokens, count):
    if len(tokens) != count:
        raise ParseError(path, lineno, f"expected {count} numbers, got {len(tokens)}")
    try:
        return [float(tok) for tok in tokens]
    except ValueError as exc:
        raise ParseError(path, lineno, f"bad number: {exc}") from None


def read_matrix_file(path) -> MatrixFile:
    path = Path(path)
    try:
        raw = path.read_text().splitlines()
    except OSError as exc:
        raise ParseError(path, 0, f"cannot read file: {exc}") from None
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(raw)]
    lines = [(i, ln) for i, ln in lines if ln and not ln.startswith("#")]
    header = {}
    pos = 0
    while pos < len(lines) and lines[pos][1] != "end_header":
        lineno, ln = lines[pos]
        key, _, value = ln.partition(" ")
        header[key] = value.strip()
        pos += 1
    if pos == len(lines):
        raise ParseError(path, len(raw), "missing end_header")
    for key in ("format", "dim", "points", "fields"):
        if key not in header:
            raise ParseError(path, lines[pos][0], f"missing header key {key!r}")
    fmt_name, _, version = header["format"].partition(" ")
    if fmt_name != FORMAT_NAME or version.strip() != str(FORMAT_VERSION):
        raise ParseError(path, lines[0][0], f"unsupported format {header['format']!r}")
    try:
        d = int(header["dim"])
        N = int(header["points"])
    except ValueError:
        raise ParseError(path, lines[0][0], "dim and points must be integers") from None
    names = header["fields"].split()
    layout = header.get("layout", "dense")
    if layout not in ("dense", "sparse"):
        raise ParseError(path, lines[0][0], f"unknown layout {layout!r}")
    pos += 1

    times = np.empty(N)
    fields = {name: np.zeros((N, d, d), dtype=complex) for name in names}

    def take(expect):
        nonlocal pos
        if pos >= len(lines):
            raise ParseError(path, len(raw), f"unexpected end of file, expected {expect!r}")
        lineno, ln = lines[pos]
        pos += 1
        tag, _, rest = ln.partition(" ")
        if tag != expect:
            raise ParseError(path, lineno, f"expected {expect!r}, found {tag!r}")
        return lineno, rest.split()

    for n in range(N):
        lineno, tok = take("t")
        times[n] = _floats(path, lineno, tok, 1)[0]
        for name in names:
            if layout == "dense":
                lineno, tok = take(f"{name}.re")
                re = _floats(path, lineno, tok, d * d)
                lineno, tok = take(f"{name}.im")
                im = _floats(path, lineno, tok, d * d)
                fields[name][n] = (np.array(re) + 1j * np.array(im)).reshape(d, d)
            else:
                lineno, tok = take(f"{name}.entries")
                try:
                    count = int(tok[0]) if len(tok) == 1 else -1
                except ValueError:
                    count = -1
                if count < 0:
                    raise ParseError(path, lineno, "entries needs one nonnegative integer")
                for _ in range(count):
                    if pos >= len(lines):
                        raise ParseError(path, len(raw), "unexpected end of file in entries")
                    lineno, ln = lines[pos]
                    pos += 1
                    parts = ln.split()
                    if len(parts) != 4:
                        raise ParseError(path, lineno, "entry needs 'row col re im'")
                    try:
                        i, j = int(parts[0]) - 1, int(parts[1]) - 1
                    except ValueError:
                        raise ParseError(path, lineno, "row and col must be integers") from None
                    if not (0 <= i < d and 0 <= j < d):
                        raise ParseError(path, lineno, f"entry ({i + 1}, {j + 1}) outside {d}x{d}")
                    re, im = _floats(path, lineno, parts[2:], 2)
                    fields[name][n, i, j] = complex(re, im)
    if pos != len(lines):
        raise ParseError(path, lines[pos][0], "trailing content after last point")
    return MatrixFile(header, times, fields)


def write_trajectory(path, times, rhos, tol: float = 1e-8, layout: str = "dense",
                     comment: str | None = None):
    write_matrix_file(path, times, {"rho": rhos}, {"tol": fmt(tol)}, layout, comment)


def read_trajectory(path):
    """Read and validate a trajectory file.

    Returns ``(times, rhos, header)``; every state must pass
    :func:`validate_density` with the header tolerance (default 1e-8).
    """
    mf = read_matrix_file(path)
    if "rho" not in mf.fields:
        raise ParseError(path, 1, "trajectory file needs a 'rho' field")
    try:
        tol = float(mf.header.get("tol", "1e-8"))
    except ValueError:
        raise ParseError(path, 1, "tol must be a number") from None
    if np.any(np.diff(mf.times) <= 0):
        raise ParseError(path, 1, "time grid must be strictly increasing")
    for n, rho in enumerate(mf.fields["rho"]):
        try:
            validate_density(rho, tol)
        except InvalidDensity as exc:
            raise ParseError(path, 1, f"state {n} (t={mf.times[n]:.17g}): {exc}") from None
    return mf.times, mf.fields["rho"], mf.header


RATE_COLUMNS = ["grid_index", "t", "term", "target", "source", "dagger", "rate", "capped"]


def write_rates(path, times, terms_per_point):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RATE_COLUMNS)
        for n, (t, terms) in enumerate(zip(times, terms_per_point)):
            for k, term in enumerate(terms):
                s = term.spec
                w.writerow([n, fmt(t), k, s.target + 1, s.source + 1, int(s.dagger),
                            fmt(term.rate), int(term.capped)])


def read_rates(path, n_points: int, dim: int):
    """Inverse of :func:`write_rates`; returns a list of RatedTerm lists."""
    out = [[] for _ in range(n_points)]
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        head = next(reader, None)
        if head != RATE_COLUMNS:
            raise ParseError(path, 1, f"expected columns {RATE_COLUMNS}")
        for lineno, row in enumerate(reader, start=2):
            try:
                n = int(row[0])
                spec = JumpSpec(int(row[3]) - 1, int(row[4]) - 1, bool(int(row[5])), dim)
                term = RatedTerm(spec, float(row[6]), bool(int(row[7])))
            except (ValueError, IndexError) as exc:
                raise ParseError(path, lineno, f"bad rate row: {exc}") from None
            if not 0 <= n < n_points:
                raise ParseError(path, lineno, f"grid index {n} outside 0..{n_points - 1}")
            out[n].append(term)
    return out


def write_json(path, data):
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(path, getattr(exc, "lineno", 0), str(exc)) from None


def write_table(path, columns: list, rows):
    """CSV with float cells at 17 significant digits; ``None`` becomes an empty cell."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow(["" if v is None else fmt(v) if isinstance(v, float) else v for v in row])
