"""HRTF sets, spatial frequency response surfaces and their spatial correlation.

Also provides an analytic stand-in for simulated HRTFs: the surface pressure on
a rigid sphere due to a unit plane wave, from the classical spherical-harmonic
scattering series.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import SphericalVoronoi
from scipy.special import eval_legendre, spherical_jn, spherical_yn

GRID_MAGIC = "hrtf-grid"
GRID_VERSION = 1
SPEED_OF_SOUND = 343.0  # m/s


class HrtfFormatError(ValueError):
    pass


class SeriesConvergenceError(FloatingPointError):
    pass


def direction_vectors(directions) -> np.ndarray:
    """(azimuth, elevation) in degrees -> unit vectors.

    Azimuth is counterclockwise from +x (front) towards +y (left); elevation is
    measured up from the horizontal plane.
    """
    d = np.radians(np.asarray(directions, float).reshape(-1, 2))
    az, el = d[:, 0], d[:, 1]
    return np.stack([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)], axis=1)


def fibonacci_directions(n: int) -> np.ndarray:
    """Near-uniform (azimuth, elevation) grid of n points."""
    i = np.arange(n) + 0.5
    el = np.degrees(np.arcsin(1.0 - 2.0 * i / n))
    az = np.degrees((i * math.pi * (3.0 - math.sqrt(5.0))) % (2 * math.pi))
    return np.stack([az, el], axis=1)


@dataclass(frozen=True, eq=False)
class HrtfSet:
    directions: np.ndarray  # (D, 2) azimuth, elevation in degrees
    frequencies: np.ndarray  # (F,) Hz, strictly ascending
    values: np.ndarray  # (D, F) complex
    ear: str = "left"
    radius: float = 0.0

    def __post_init__(self):
        dirs = np.array(self.directions, float).reshape(-1, 2)
        freqs = np.array(self.frequencies, float).reshape(-1)
        vals = np.array(self.values, complex).reshape(len(dirs), len(freqs))
        if len(freqs) == 0 or len(dirs) == 0:
            raise ValueError("an HRTF set needs at least one direction and one frequency")
        if np.any(np.diff(freqs) <= 0):
            raise ValueError("frequencies must be strictly ascending")
        if not (np.isfinite(vals.real).all() and np.isfinite(vals.imag).all()) or not np.isfinite(dirs).all():
            raise ValueError("HRTF values and directions must be finite")
        u = direction_vectors(dirs)
        close = np.abs(u @ u.T - 1.0) < 1e-12
        np.fill_diagonal(close, False)
        if close.any():
            i, j = np.argwhere(close)[0]
            raise ValueError(f"duplicate directions at rows {i} and {j}: {dirs[i].tolist()}")
        for name, arr in (("directions", dirs), ("frequencies", freqs), ("values", vals)):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)


@dataclass(frozen=True, eq=False)
class SfrsMap:
    directions: np.ndarray
    gains_db: np.ndarray
    frequency: float


# -- grid file IO ------------------------------------------------------------

def save_hrtf_set(s: HrtfSet, path) -> None:
    """Text grid: magic line, header keys, then one row per direction with
    az el followed by (re, im) for each frequency."""
    lines = [f"{GRID_MAGIC} {GRID_VERSION}",
             f"ear {s.ear}",
             f"radius_m {s.radius!r}",
             "frequencies_hz " + " ".join(repr(float(f)) for f in s.frequencies),
             "data"]
    for (az, el), row in zip(s.directions, s.values):
        cols = [repr(float(az)), repr(float(el))]
        for v in row:
            cols += [repr(float(v.real)), repr(float(v.imag))]
        lines.append(" ".join(cols))
    Path(path).write_text("\n".join(lines) + "\n")


def load_hrtf_set(path) -> HrtfSet:
    lines = [ln.split("#", 1)[0].strip() for ln in Path(path).read_text().splitlines()]
    lines = [ln for ln in lines if ln]
    if not lines or lines[0].split() != [GRID_MAGIC, str(GRID_VERSION)]:
        raise HrtfFormatError(f"{path}: expected '{GRID_MAGIC} {GRID_VERSION}' header")
    header, i = {}, 1
    while i < len(lines) and lines[i] != "data":
        key, _, rest = lines[i].partition(" ")
        header[key] = rest.strip()
        i += 1
    if i == len(lines) or "frequencies_hz" not in header:
        raise HrtfFormatError(f"{path}: missing frequencies_hz or data section")
    try:
        freqs = np.array(header["frequencies_hz"].split(), float)
        rows = np.array([ln.split() for ln in lines[i + 1:]], float)
        if rows.ndim != 2 or rows.shape[1] != 2 + 2 * len(freqs):
            raise HrtfFormatError(f"{path}: each row needs az, el and {len(freqs)} re/im pairs")
        values = rows[:, 2::2] + 1j * rows[:, 3::2]
        return HrtfSet(rows[:, :2], freqs, values, header.get("ear", "left"),
                       float(header.get("radius_m", 0.0)))
    except ValueError as exc:
        if isinstance(exc, HrtfFormatError):
            raise
        raise HrtfFormatError(f"{path}: {exc}") from None


# -- SFRS and correlation ----------------------------------------------------

def _value_at(s: HrtfSet, f: float) -> np.ndarray:
    fr = s.frequencies
    if not fr[0] <= f <= fr[-1]:
        raise ValueError(f"frequency {f} Hz outside [{fr[0]}, {fr[-1]}] Hz")
    j = int(np.searchsorted(fr, f))
    if fr[j] == f:
        return s.values[:, j]
    w = (f - fr[j - 1]) / (fr[j] - fr[j - 1])
    lo, hi = s.values[:, j - 1], s.values[:, j]
    return (1 - w) * lo.real + w * hi.real + 1j * ((1 - w) * lo.imag + w * hi.imag)


def sfrs(s: HrtfSet, f: float) -> SfrsMap:
    """Magnitude gain (dB) over all directions at one frequency."""
    h = _value_at(s, float(f))
    return SfrsMap(s.directions, 20.0 * np.log10(np.abs(h)), float(f))


def solid_angle_weights(directions) -> np.ndarray:
    """Voronoi cell areas on the unit sphere, normalised to sum to one."""
    u = direction_vectors(directions)
    areas = SphericalVoronoi(u, radius=1.0, center=np.zeros(3)).calculate_areas()
    return areas / areas.sum()


def spatial_correlation(a: SfrsMap, b: SfrsMap, weighted: bool = True) -> float | None:
    """Pearson correlation of two dB maps; None when either map is constant."""
    if a.directions.shape != b.directions.shape or not np.array_equal(a.directions, b.directions):
        raise ValueError("SFRS maps are sampled on different directions")
    if len(a.gains_db) < 4:
        raise ValueError("spatial correlation needs at least 4 directions")
    n = len(a.gains_db)
    w = solid_angle_weights(a.directions) if weighted else np.full(n, 1.0 / n)
    da = a.gains_db - w @ a.gains_db
    db = b.gains_db - w @ b.gains_db
    va, vb = w @ (da * da), w @ (db * db)
    if va == 0.0 or vb == 0.0:
        return None
    return float(np.clip((w @ (da * db)) / np.sqrt(va * vb), -1.0, 1.0))


def correlation_curve(A: HrtfSet, B: HrtfSet, freqs, weighted: bool = True):
    """[(f, correlation)] for each requested frequency."""
    if not np.array_equal(A.directions, B.directions):
        raise ValueError("HRTF sets are sampled on different directions")
    return [(float(f), spatial_correlation(sfrs(A, f), sfrs(B, f), weighted)) for f in freqs]


def sfrs_csv(m: SfrsMap) -> str:
    rows = ["az_deg,el_deg,gain_db"]
    rows += [f"{az:.6f},{el:.6f},{g:.9f}" for (az, el), g in zip(m.directions, m.gains_db)]
    return "\n".join(rows) + "\n"


def curve_csv(curve) -> str:
    rows = ["f_hz,correlation"]
    rows += [f"{f:.6f}," + ("undefined" if c is None else f"{c:.10f}") for f, c in curve]
    return "\n".join(rows) + "\n"


# -- rigid-sphere oracle -----------------------------------------------------

def _dh(n, x):
    return spherical_jn(n, x, derivative=True) + 1j * spherical_yn(n, x, derivative=True)


def rigid_sphere_gain(cos_angle, ka: float, extra_terms: int = 12, tol: float = 1e-2) -> np.ndarray:
    """Surface pressure / free-field pressure for a plane wave on a rigid sphere.

    `cos_angle` is the cosine between the source direction and the surface
    point (1 = facing the source). Uses exp(-i w t) time dependence.
    """
    x = float(ka)
    order = int(math.ceil(x)) + extra_terms
    n = np.arange(order + 1)
    coef = (1j ** ((n + 1) % 4)) * (2 * n + 1) / _dh(n, x)
    mags = np.abs(coef)
    if not mags[-1] <= tol * mags.max():
        raise SeriesConvergenceError(f"scattering series not converged at ka={x:.3f} "
                                     f"(last/max term ratio {mags[-1] / mags.max():.2e})")
    # the wave travels towards -s, so the angle to its propagation axis is pi - angle
    c = -np.asarray(cos_angle, float)
    P = eval_legendre(n[:, None], c.reshape(1, -1))
    return ((coef @ P) / x ** 2).reshape(c.shape)


def sphere_hrtf_oracle(radius: float, ear_direction, directions, frequencies,
                       ear: str = "left", c: float = SPEED_OF_SOUND) -> HrtfSet:
    """HRTF set of an ear point on a rigid sphere for plane waves from `directions`."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    freqs = np.asarray(frequencies, float)
    if np.any(freqs <= 0):
        raise ValueError("frequencies must be positive")
    e = np.asarray(ear_direction, float)
    e = e / np.linalg.norm(e)
    cosang = np.clip(direction_vectors(directions) @ e, -1.0, 1.0)
    vals = np.stack([rigid_sphere_gain(cosang, 2 * math.pi * f / c * radius) for f in freqs], axis=1)
    return HrtfSet(directions, freqs, vals, ear, radius)
