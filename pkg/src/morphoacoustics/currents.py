"""Surfaces as currents: the kernel mismatch used as the matching data term.

A mesh is represented by its face barycenters c_p and area-weighted normals
n_p. The inner product of two such representations is

    <A, B> = sum_p sum_q k_W(c_p, d_q) n_p . m_q

and the data term is the squared distance |A - B|^2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from .mesh import MeshError, SurfaceMesh, DEGENERATE_AREA

BLOCK = 256  # rows per block in kernel sums; fixes the reduction order


@dataclass(frozen=True)
class CurrentRep:
    centers: np.ndarray
    normals: np.ndarray

    @property
    def source_face_count(self) -> int:
        return len(self.centers)


@dataclass(frozen=True)
class CurrentsParams:
    sigma_W: float
    kernel: str = "gaussian"  # or "cauchy"

    def __post_init__(self):
        if not self.sigma_W > 0:
            raise ValueError(f"sigma_W must be positive, got {self.sigma_W}")
        if self.kernel not in ("gaussian", "cauchy"):
            raise ValueError(f"unknown currents kernel {self.kernel!r}")

    @classmethod
    def default_for(cls, target: SurfaceMesh, **kw) -> "CurrentsParams":
        """sigma_W = 10% of the target bounding-box diagonal."""
        return cls(0.1 * target.bbox_diagonal(), **kw)


def current_of(mesh: SurfaceMesh) -> CurrentRep:
    normals = mesh.face_normals()
    areas = np.linalg.norm(normals, axis=1)
    bad = np.flatnonzero(~(areas > DEGENERATE_AREA))
    if len(bad):
        raise MeshError("DEGENERATE_FACE", int(bad[0]), f"face {bad[0]} has area {areas[bad[0]]:.3e}")
    return CurrentRep(mesh.face_centers(), normals)


def _kernel(sqd, p: CurrentsParams):
    if p.kernel == "gaussian":
        return np.exp(-sqd / p.sigma_W ** 2)
    return 1.0 / (1.0 + sqd / p.sigma_W ** 2)


def _kernel_dsq(k, p: CurrentsParams):
    """d k / d(|x - y|^2) expressed through the kernel value."""
    if p.kernel == "gaussian":
        return -k / p.sigma_W ** 2
    return -k * k / p.sigma_W ** 2


def _sqdist(x, y):
    return cdist(x, y, "sqeuclidean")


def currents_inner(a: CurrentRep, b: CurrentRep, p: CurrentsParams) -> float:
    total = 0.0
    for s in range(0, len(a.centers), BLOCK):
        ca, na = a.centers[s:s + BLOCK], a.normals[s:s + BLOCK]
        sqd = _sqdist(ca, b.centers)
        total += float(np.sum(_kernel(sqd, p) * (na @ b.normals.T)))
    return total


def _clamp(e, scale):
    if e < 0:
        if e > -1e-12 * max(scale, 0.0):
            return 0.0
        raise FloatingPointError(f"negative currents distance {e:.3e} (scale {scale:.3e})")
    return e


def data_term_E(moved: SurfaceMesh, target: CurrentRep, p: CurrentsParams,
                target_norm: float | None = None) -> float:
    """|current(moved) - target|^2; `target_norm` may cache <B, B>."""
    A = current_of(moved)
    bb = currents_inner(target, target, p) if target_norm is None else target_norm
    e = currents_inner(A, A, p) - 2.0 * currents_inner(A, target, p) + bb
    return _clamp(e, bb)


def _grad_centers_normals(A: CurrentRep, B: CurrentRep, p: CurrentsParams):
    """Gradient of <A, B> w.r.t. the centers and normals of A."""
    gc = np.zeros_like(A.centers)
    gn = np.zeros_like(A.normals)
    for s in range(0, len(A.centers), BLOCK):
        ca, na = A.centers[s:s + BLOCK], A.normals[s:s + BLOCK]
        k = _kernel(_sqdist(ca, B.centers), p)
        gn[s:s + BLOCK] = k @ B.normals
        w = 2.0 * _kernel_dsq(k, p) * (na @ B.normals.T)
        gc[s:s + BLOCK] = ca * w.sum(axis=1)[:, None] - w @ B.centers
    return gc, gn


def grad_wrt_vertices(mesh: SurfaceMesh, g_centers, g_normals) -> np.ndarray:
    """Chain rule from per-face (center, normal) gradients to vertex gradients."""
    v = mesh.vertices
    f = mesh.faces
    v0, v1, v2 = v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]
    out = np.zeros_like(v)
    gc3 = g_centers / 3.0
    for col, g in ((0, gc3 + 0.5 * np.cross(v1 - v2, g_normals)),
                   (1, gc3 + 0.5 * np.cross(v2 - v0, g_normals)),
                   (2, gc3 + 0.5 * np.cross(v0 - v1, g_normals))):
        np.add.at(out, f[:, col], g)
    return out


def grad_data_term(moved: SurfaceMesh, target: CurrentRep, p: CurrentsParams) -> np.ndarray:
    """Analytic gradient of :func:`data_term_E` w.r.t. the vertices of `moved`."""
    A = current_of(moved)
    gc_aa, gn_aa = _grad_centers_normals(A, A, p)
    gc_ab, gn_ab = _grad_centers_normals(A, target, p)
    # <A, A> is quadratic in A: both slots contribute equally
    gc = 2.0 * gc_aa - 2.0 * gc_ab
    gn = 2.0 * gn_aa - 2.0 * gn_ab
    return grad_wrt_vertices(moved, gc, gn)
