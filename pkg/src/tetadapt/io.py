"""ASCII ``.mesh`` / ``.sol`` reading and writing.

Only the keywords needed for tetrahedral meshes are understood::

    MeshVersionFormatted 2
    Dimension 3
    Vertices      n   then n lines  x y z ref
    Triangles     n   then n lines  v1 v2 v3 marker
    Tetrahedra    n   then n lines  v1 v2 v3 v4 ref
    End

Indices are 1-based in files.  Solution files hold one field at vertices,
either a scalar (type 1) or a symmetric tensor (type 3) stored as
m11 m21 m22 m31 m32 m33.
"""
import numpy as np

from .mesh import build_mesh


class ParseError(ValueError):
    """Malformed mesh or solution file; ``line`` is 1-based."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {message}")


def _fmt(x):
    # shortest round-trip text; integral values without the trailing ".0"
    s = repr(float(x))
    return s[:-2] if s.endswith(".0") else s


class _Lines:
    """Token stream over non-empty, non-comment lines with line numbers."""

    def __init__(self, path):
        self.path = path
        with open(path) as fh:
            raw = fh.read().splitlines()
        self.items = []
        for i, text in enumerate(raw, start=1):
            s = text.split("#", 1)[0].strip()
            if s:
                self.items.append((i, s))
        self.pos = 0
        self.last = len(raw)

    def next(self, what):
        if self.pos >= len(self.items):
            raise ParseError(self.path, self.last, f"unexpected end of file, expected {what}")
        item = self.items[self.pos]
        self.pos += 1
        return item

    def error(self, line, msg):
        return ParseError(self.path, line, msg)


def _int(lines, line, tok):
    try:
        return int(tok)
    except ValueError:
        raise lines.error(line, f"expected an integer, got {tok!r}") from None


def _read_block(lines, keyword, ncols, kinds):
    ln, s = lines.next(f"count of {keyword}")
    parts = s.split()
    if len(parts) != 1:
        raise lines.error(ln, f"expected the number of {keyword}")
    n = _int(lines, ln, parts[0])
    if n < 0:
        raise lines.error(ln, f"negative count for {keyword}")
    rows = []
    for _ in range(n):
        ln, s = lines.next(f"{keyword} entry")
        parts = s.split()
        if len(parts) != ncols:
            raise lines.error(ln, f"{keyword} entry needs {ncols} values, got {len(parts)}")
        try:
            rows.append([k(p) for k, p in zip(kinds, parts)])
        except ValueError:
            raise lines.error(ln, f"malformed {keyword} entry: {s!r}") from None
        rows[-1].append(ln)
    return rows


def _check_header(lines):
    seen = {}
    while True:
        ln, s = lines.next("header")
        parts = s.split()
        key = parts[0]
        if key in ("MeshVersionFormatted", "Dimension"):
            val = parts[1] if len(parts) > 1 else lines.next(f"value of {key}")[1]
            seen[key] = (ln, val)
            if key == "Dimension" and val.strip() != "3":
                raise lines.error(ln, f"only Dimension 3 is supported, got {val}")
            if "MeshVersionFormatted" in seen and "Dimension" in seen:
                return
        else:
            raise lines.error(ln, f"expected MeshVersionFormatted/Dimension header, got {key!r}")


def read_mesh(path):
    """Read an ASCII ``.mesh`` file into a :class:`~tetadapt.mesh.Mesh`.

    Raises
    ------
    ParseError
        Unknown keyword, index out of range, truncated section or missing
        ``End``; the message names the offending line.
    """
    lines = _Lines(path)
    _check_header(lines)
    verts = tris = tets = None
    while True:
        ln, s = lines.next("keyword or End")
        key = s.split()[0]
        if key == "End":
            break
        if key == "Vertices":
            verts = _read_block(lines, key, 4, (float, float, float, int))
        elif key == "Triangles":
            tris = _read_block(lines, key, 4, (int, int, int, int))
        elif key == "Tetrahedra":
            tets = _read_block(lines, key, 5, (int, int, int, int, int))
        else:
            raise lines.error(ln, f"unknown keyword {key!r}")
    if verts is None or tets is None:
        raise lines.error(lines.last, "mesh needs both Vertices and Tetrahedra")
    nv = len(verts)
    for block in (tris or []), tets:
        for row in block:
            idx = row[:-2]
            if any(i < 1 or i > nv for i in idx):
                raise lines.error(row[-1], f"vertex index out of range 1..{nv}")
    xyz = np.array([r[:3] for r in verts], dtype=np.float64).reshape(-1, 3)
    vref = np.array([r[3] for r in verts], dtype=np.int64)
    T = np.array([r[:4] for r in tets], dtype=np.int64).reshape(-1, 4) - 1
    tref = np.array([r[4] for r in tets], dtype=np.int64)
    if tris:
        S = np.array([r[:3] for r in tris], dtype=np.int64) - 1
        smark = np.array([r[3] for r in tris], dtype=np.int64)
    else:
        S = smark = None
    return build_mesh(xyz, T, S, smark, vertex_refs=vref, tet_refs=tref)


def write_mesh(path, mesh):
    """Write ``mesh`` (compacted) as an ASCII ``.mesh`` file."""
    xyz, vref, tets, tref, tri, marks = mesh.tables()
    out = ["MeshVersionFormatted 2", "", "Dimension 3", "", "Vertices", str(len(xyz))]
    out += [f"{_fmt(p[0])} {_fmt(p[1])} {_fmt(p[2])} {r}" for p, r in zip(xyz, vref)]
    out += ["", "Triangles", str(len(tri))]
    out += [f"{t[0] + 1} {t[1] + 1} {t[2] + 1} {m}" for t, m in zip(tri, marks)]
    out += ["", "Tetrahedra", str(len(tets))]
    out += [f"{t[0] + 1} {t[1] + 1} {t[2] + 1} {t[3] + 1} {r}" for t, r in zip(tets, tref)]
    out += ["", "End", ""]
    with open(path, "w") as fh:
        fh.write("\n".join(out))


def read_sol(path, n_vertices=None):
    """Read an ASCII ``.sol`` file; returns (n,) scalars or (n, 6) tensors.

    Raises
    ------
    ParseError
        Malformed content, or a count that differs from ``n_vertices``.
    """
    lines = _Lines(path)
    _check_header(lines)
    data = None
    while True:
        ln, s = lines.next("keyword or End")
        key = s.split()[0]
        if key == "End":
            break
        if key != "SolAtVertices":
            raise lines.error(ln, f"unknown keyword {key!r}")
        ln, s = lines.next("number of solution entries")
        n = _int(lines, ln, s.split()[0])
        if n_vertices is not None and n != n_vertices:
            raise lines.error(ln, f"solution has {n} entries but the mesh has {n_vertices} vertices")
        ln, s = lines.next("field types")
        parts = s.split()
        if len(parts) != 2 or parts[0] != "1" or parts[1] not in ("1", "3"):
            raise lines.error(ln, "expected '1 1' (scalar) or '1 3' (symmetric tensor)")
        ncols = 1 if parts[1] == "1" else 6
        vals = np.empty((n, ncols))
        for i in range(n):
            ln, s = lines.next("solution entry")
            row = s.split()
            if len(row) != ncols:
                raise lines.error(ln, f"expected {ncols} values, got {len(row)}")
            try:
                vals[i] = [float(x) for x in row]
            except ValueError:
                raise lines.error(ln, f"malformed solution entry: {s!r}") from None
        data = vals[:, 0] if ncols == 1 else vals
    if data is None:
        raise lines.error(lines.last, "no SolAtVertices section")
    return data


def write_sol(path, values):
    """Write (n,) scalars or (n, 6) symmetric tensors as an ASCII ``.sol`` file."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim == 1:
        kind, rows = "1 1", v[:, None]
    elif v.ndim == 2 and v.shape[1] == 6:
        kind, rows = "1 3", v
    else:
        raise ValueError("values must be (n,) scalars or (n, 6) tensors")
    out = ["MeshVersionFormatted 2", "", "Dimension 3", "", "SolAtVertices", str(len(v)), kind]
    out += [" ".join(_fmt(x) for x in r) for r in rows]
    out += ["", "End", ""]
    with open(path, "w") as fh:
        fh.write("\n".join(out))
