"""Triangle surface meshes: data model, OFF / ASCII-PLY IO, validation and
centroid translation."""
from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEGENERATE_AREA = 1e-12  # m^2
COORD_DIGITS = 9


class MeshError(ValueError):
    """Raised when a mesh violates a structural invariant."""

    def __init__(self, code: str, index: int | None, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.index = index


class MeshFormatError(ValueError):
    """Raised when a mesh file cannot be parsed."""


@dataclass(frozen=True, eq=False)
class SurfaceMesh:
    """Vertices (N, 3) in meters and counterclockwise faces (M, 3).

    Arrays are copied and frozen on construction. Only shapes are checked here;
    use :func:`validate` for the full set of invariants.
    """

    vertices: np.ndarray
    faces: np.ndarray
    name: str = ""

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def with_vertices(self, vertices, name: str | None = None) -> "SurfaceMesh":
        return SurfaceMesh(vertices, self.faces, self.name if name is None else name)

    def face_normals(self) -> np.ndarray:
        """Area-weighted normals, 0.5 * (v1 - v0) x (v2 - v0)."""
        p = self.vertices[self.faces]
        return 0.5 * np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    def face_areas(self) -> np.ndarray:
        return np.linalg.norm(self.face_normals(), axis=1)

    def face_centers(self) -> np.ndarray:
        return self.vertices[self.faces].mean(axis=1)

    def bbox_diagonal(self) -> float:
        if self.n_vertices == 0:
            return 0.0
        return float(np.linalg.norm(self.vertices.max(0) - self.vertices.min(0)))

    def submesh(self, face_mask, name: str | None = None) -> "SurfaceMesh":
        """Mesh made of the selected faces, with unused vertices dropped."""
        faces = self.faces[np.asarray(face_mask)]
        used, inverse = np.unique(faces.ravel(), return_inverse=True)
        return SurfaceMesh(self.vertices[used], inverse.reshape(-1, 3),
                           self.name if name is None else name)

    def __eq__(self, other):
        if not isinstance(other, SurfaceMesh):
            return NotImplemented
        return (np.array_equal(self.vertices, other.vertices)
                and np.array_equal(self.faces, other.faces))

    __hash__ = None


def concatenate(meshes, name: str = "") -> SurfaceMesh:
    """Disjoint union of meshes; vertex blocks keep their input order."""
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += m.n_vertices
    return SurfaceMesh(np.concatenate(verts), np.concatenate(faces), name)


# -- validation --------------------------------------------------------------

@dataclass
class ValidationReport:
    errors: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def is_usable(self) -> bool:
        return not self.errors

    def first_error(self) -> MeshError | None:
        if not self.errors:
            return None
        return MeshError(*self.errors[0])


def validate(mesh: SurfaceMesh) -> ValidationReport:
    """Check every mesh invariant; errors and warnings are (code, index, message)."""
    rep = ValidationReport()
    v, f = mesh.vertices, mesh.faces
    n = len(v)

    bad_v = np.flatnonzero(~np.isfinite(v).all(axis=1))
    for i in bad_v:
        rep.errors.append(("NON_FINITE", int(i), f"vertex {i} has a non-finite coordinate"))

    in_range = ((f >= 0) & (f < n)).all(axis=1)
    for m in np.flatnonzero(~in_range):
        rep.errors.append(("INDEX_OUT_OF_RANGE", int(m),
                           f"face {m} references {f[m].tolist()} with {n} vertices"))

    repeated = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
    for m in np.flatnonzero(repeated):
        rep.errors.append(("REPEATED_INDEX", int(m), f"face {m} repeats a vertex: {f[m].tolist()}"))

    ok = in_range & ~repeated
    if ok.any() and not len(bad_v):
        p = v[f[ok]]
        areas = 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)
        for m, a in zip(np.flatnonzero(ok), areas):
            if not a > DEGENERATE_AREA:
                rep.errors.append(("DEGENERATE_FACE", int(m), f"face {m} has area {a:.3e} m^2"))

    # consistent orientation: a shared edge is traversed once in each direction
    faces_ok = f[ok]
    directed = Counter()
    for tri in faces_ok.tolist():
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            directed[(a, b)] += 1
    flagged = set()
    for m, tri in zip(np.flatnonzero(ok), faces_ok.tolist()):
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            if directed[(a, b)] > 1 and m not in flagged:
                flagged.add(m)
                rep.warnings.append(("ORIENTATION", int(m),
                                     f"edge ({a}, {b}) of face {m} is traversed twice in the same direction"))
            undirected = directed[(a, b)] + directed.get((b, a), 0)
            if undirected > 2 and a < b:
                rep.warnings.append(("NON_MANIFOLD_EDGE", int(m), f"edge ({a}, {b}) is shared by {undirected} faces"))
    return rep


def check(mesh: SurfaceMesh) -> SurfaceMesh:
    """Return `mesh` unchanged or raise the first invariant violation."""
    err = validate(mesh).first_error()
    if err is not None:
        raise err
    return mesh


# -- file IO -----------------------------------------------------------------

def _format_of(path, fmt):
    if fmt:
        fmt = fmt.lower()
    else:
        fmt = Path(path).suffix.lower().lstrip(".")
    if fmt not in ("off", "ply"):
        raise MeshFormatError(f"unknown mesh format {fmt!r} for {path}")
    return fmt


def _tokens(text):
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            yield line


def _parse_off(text):
    lines = _tokens(text)
    try:
        head = next(lines).split()
        if head[0] != "OFF":
            raise MeshFormatError(f"expected OFF header, got {head[0]!r}")
        counts = head[1:] or next(lines).split()
        nv, nf = int(counts[0]), int(counts[1])
        verts = [list(map(float, next(lines).split()[:3])) for _ in range(nv)]
        faces = []
        for m in range(nf):
            row = next(lines).split()
            if int(row[0]) != 3 or len(row) < 4:
                raise MeshFormatError(f"face {m} is not a triangle: {' '.join(row)}")
            faces.append([int(x) for x in row[1:4]])
    except StopIteration:
        raise MeshFormatError("unexpected end of OFF file") from None
    except (IndexError, ValueError) as exc:
        if isinstance(exc, MeshFormatError):
            raise
        raise MeshFormatError(f"malformed OFF file: {exc}") from None
    return np.array(verts, float).reshape(-1, 3), np.array(faces, np.int64).reshape(-1, 3), {}


def _parse_ply(text):
    lines = text.splitlines()
    if not lines or lines[0].strip() != "ply":
        raise MeshFormatError("missing 'ply' magic line")
    elements = []  # [name, count, [(prop, is_list)]]
    i = 1
    try:
        while True:
            words = lines[i].split()
            i += 1
            if not words or words[0] in ("comment", "obj_info"):
                continue
            if words[0] == "format":
                if words[1] != "ascii":
                    raise MeshFormatError(f"only ASCII PLY is supported, got {words[1]}")
            elif words[0] == "element":
                elements.append([words[1], int(words[2]), []])
            elif words[0] == "property":
                is_list = words[1] == "list"
                elements[-1][2].append((words[-1], is_list))
            elif words[0] == "end_header":
                break
            else:
                raise MeshFormatError(f"unexpected header line: {lines[i - 1]}")
    except IndexError:
        raise MeshFormatError("truncated PLY header") from None

    body = [ln.split() for ln in lines[i:] if ln.strip()]
    pos = 0
    verts = faces = None
    extra = {}
    try:
        for name, count, props in elements:
            rows = body[pos:pos + count]
            if len(rows) < count:
                raise MeshFormatError(f"expected {count} {name} rows, found {len(rows)}")
            pos += count
            if name == "vertex":
                names = [p for p, _ in props]
                cols = {p: k for k, p in enumerate(names)}
                data = np.array([[float(x) for x in r[:len(names)]] for r in rows], float).reshape(-1, len(names))
                verts = data[:, [cols["x"], cols["y"], cols["z"]]]
                for p in names:
                    if p not in ("x", "y", "z"):
                        extra[p] = data[:, cols[p]]
            elif name == "face":
                faces = []
                for m, r in enumerate(rows):
                    if int(r[0]) != 3:
                        raise MeshFormatError(f"face {m} is not a triangle")
                    faces.append([int(x) for x in r[1:4]])
                faces = np.array(faces, np.int64).reshape(-1, 3)
    except (KeyError, ValueError, IndexError) as exc:
        if isinstance(exc, MeshFormatError):
            raise
        raise MeshFormatError(f"malformed PLY body: {exc}") from None
    if verts is None or faces is None:
        raise MeshFormatError("PLY file needs vertex and face elements")
    return verts, faces, extra


def load_mesh_with_data(path, fmt: str | None = None, scale: float = 1.0):
    """Like :func:`load_mesh` but also returns extra per-vertex PLY columns."""
    fmt = _format_of(path, fmt)
    text = Path(path).read_text()
    verts, faces, extra = (_parse_off if fmt == "off" else _parse_ply)(text)
    if scale != 1.0:
        verts = verts * scale
    mesh = check(SurfaceMesh(verts, faces, Path(path).stem))
    return mesh, extra


def load_mesh(path, fmt: str | None = None, scale: float = 1.0) -> SurfaceMesh:
    """Read an OFF or ASCII-PLY triangle mesh; `scale` converts units (1e-3 for mm)."""
    return load_mesh_with_data(path, fmt, scale)[0]


def _fmt(x, digits):
    return format(float(x), f".{digits}g")


def save_mesh(mesh: SurfaceMesh, path, fmt: str | None = None, *,
              digits: int = COORD_DIGITS, vertex_data: dict | None = None) -> None:
    """Write `mesh`; extra per-vertex scalars are only supported for PLY."""
    fmt = _format_of(path, fmt)
    vertex_data = vertex_data or {}
    out = []
    if fmt == "off":
        if vertex_data:
            raise MeshFormatError("per-vertex data needs the PLY format")
        out.append("OFF")
        out.append(f"{mesh.n_vertices} {mesh.n_faces} 0")
    else:
        out += ["ply", "format ascii 1.0"]
        if mesh.name:
            out.append(f"comment name {mesh.name}")
        out += [f"element vertex {mesh.n_vertices}",
                "property double x", "property double y", "property double z"]
        out += [f"property double {k}" for k in vertex_data]
        out += [f"element face {mesh.n_faces}", "property list uchar int vertex_indices", "end_header"]
    cols = [np.asarray(vertex_data[k], float) for k in vertex_data]
    for i, p in enumerate(mesh.vertices):
        row = [_fmt(x, digits) for x in p] + [_fmt(c[i], digits) for c in cols]
        out.append(" ".join(row))
    for tri in mesh.faces.tolist():
        out.append(f"3 {tri[0]} {tri[1]} {tri[2]}")
    with open(os.fspath(path), "w") as fh:
        fh.write("\n".join(out) + "\n")


# -- translation operator ----------------------------------------------------

def area_centroid(mesh: SurfaceMesh) -> np.ndarray:
    areas = mesh.face_areas()
    total = areas.sum()
    if mesh.n_faces == 0 or not total > 0:
        raise MeshError("EMPTY_MESH", None, f"mesh {mesh.name!r} has no area")
    return (areas[:, None] * mesh.face_centers()).sum(0) / total


def translate_align(moving: SurfaceMesh, target: SurfaceMesh):
    """Shift `moving` so its area-weighted centroid lands on the target's.

    Returns the translated mesh and the translation vector.
    """
    t = area_centroid(target) - area_centroid(moving)
    return moving.with_vertices(moving.vertices + t), t
