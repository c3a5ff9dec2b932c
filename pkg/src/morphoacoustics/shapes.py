"""Synthetic test geometry: icospheres, ellipsoids and toy head-with-ear subjects."""
from __future__ import annotations

import numpy as np

from .mesh import SurfaceMesh, concatenate


def icosphere(subdivisions: int = 2, radius: float = 1.0, center=(0.0, 0.0, 0.0),
              name: str = "icosphere") -> SurfaceMesh:
    """Subdivided icosahedron; 10 * 4**s + 2 vertices, 20 * 4**s outward faces."""
    phi = (1 + 5 ** 0.5) / 2
    verts = [(-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
             (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
             (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, float) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache = {}

        def midpoint(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    v = radius * np.array(verts) + np.asarray(center, float)
    return SurfaceMesh(v, np.array(faces), name)


def ellipsoid(axes=(1.0, 1.0, 1.0), subdivisions: int = 2, center=(0.0, 0.0, 0.0),
              rotation=None, name: str = "ellipsoid") -> SurfaceMesh:
    """Unit icosphere scaled by `axes`, optionally rotated (3x3), then shifted."""
    s = icosphere(subdivisions)
    v = s.vertices * np.asarray(axes, float)
    if rotation is not None:
        v = v @ np.asarray(rotation, float).T
    return SurfaceMesh(v + np.asarray(center, float), s.faces, name)


def rotation_z(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_x(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def random_mesh(rng: np.random.Generator, n_faces: int, scale: float = 1.0,
                min_area: float = 1e-3) -> SurfaceMesh:
    """Independent random triangles (a triangle soup), all non-degenerate."""
    tris = []
    while len(tris) < n_faces:
        p = rng.normal(size=(3, 3)) * scale
        if 0.5 * np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0])) > min_area * scale ** 2:
            tris.append(p)
    v = np.concatenate(tris)
    return SurfaceMesh(v, np.arange(3 * n_faces).reshape(-1, 3), "random")


def toy_subject(head_radius: float = 0.09, ear_axes=(0.012, 0.004, 0.03),
                ear_tilt: float = 0.0, ear_offset: float = 0.0,
                subdivisions: int = 3, ear_subdivisions: int = 2, label: str = "S"):
    """Sphere "head" with ellipsoid "ears" on +y (left) and -y (right).

    Returns (full, head_torso_no_ears, left_ear). The full mesh is the disjoint
    union [head, left ear, right ear], so the left ear occupies a contiguous
    vertex block right after the head vertices.
    """
    head = icosphere(subdivisions, head_radius, name=f"HT{label}")
    gap = 1.1 * ear_axes[1]
    rot = rotation_z(np.pi / 2) @ rotation_x(ear_tilt) @ rotation_z(-np.pi / 2)
    left = ellipsoid(ear_axes, ear_subdivisions, rotation=rot,
                     center=(ear_offset, head_radius + gap, 0.0), name=f"LE{label}")
    right = ellipsoid(ear_axes, ear_subdivisions,
                      center=(0.0, -(head_radius + gap), 0.0), name=f"RE{label}")
    full = concatenate([head, left, right], name=label)
    return full, head, left
