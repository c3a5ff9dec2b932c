"""Diffeomorphic matching of surfaces driven by kernel momenta.

Control points x_n(t) carry momenta a_n(t); the velocity at any point x is

    v(t, x) = sum_n k_V(x_n(t), x) a_n(t),   k_V(x, y) = 1 / (1 + |x - y|^2 / sigma_V^2)

Time [0, 1] is split into T equal steps. Momenta are held constant within a
step and every point (controls included) is advanced with one RK4 step. The
matching objective is

    J = gamma * dt * sum_k a_k^T K(x_k) a_k + E(phi_1(source), target)

with E the currents distance, minimised over all momenta by gradient descent
using a hand-written adjoint of the discrete integrator.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist

from .currents import CurrentRep, CurrentsParams, current_of, currents_inner, data_term_E, grad_data_term
from .mesh import SurfaceMesh, check

log = logging.getLogger(__name__)

FIELD_FORMAT = "momentum-field"
FIELD_VERSION = 1


class MatchDivergence(FloatingPointError):
    """The line search could not find a finite, decreasing step."""


# -- kernel and velocity -----------------------------------------------------

def cauchy_kernel(x, y, sigma_V: float):
    x, y = np.asarray(x, float), np.asarray(y, float)
    d = x - y
    return 1.0 / (1.0 + np.sum(d * d, axis=-1) / sigma_V ** 2)


def kernel_matrix(x, y, sigma_V: float) -> np.ndarray:
    """K[i, j] = k_V(x_i, y_j)."""
    return 1.0 / (1.0 + cdist(x, y, "sqeuclidean") / sigma_V ** 2)


def weighted_differences(w, x, y):
    """sum_j w[i, j] (x_i - y_j) for every i."""
    return x * w.sum(axis=1)[:, None] - w @ y


def velocity_at(x, controls, momenta, sigma_V: float) -> np.ndarray:
    """Velocity at one point (3,) or many points (P, 3)."""
    x = np.asarray(x, float)
    pts = np.atleast_2d(x)
    v = kernel_matrix(pts, np.asarray(controls, float), sigma_V) @ np.asarray(momenta, float)
    return v if x.ndim == 2 else v[0]


def _vel(Z, nc, alpha, sigma):
    return kernel_matrix(Z, Z[:nc], sigma) @ alpha


def _vel_vjp(Z, nc, alpha, sigma, lam):
    """Pullback of cotangent `lam` through Z -> K(Z, Z[:nc]) @ alpha."""
    q = Z[:nc]
    K = kernel_matrix(Z, q, sigma)
    g_alpha = K.T @ lam
    w = (lam @ alpha.T) * (-2.0 * K * K / sigma ** 2)
    gZ = weighted_differences(w, Z, q)
    gZ[:nc] += weighted_differences(w.T, q, Z)
    return gZ, g_alpha


def rk4_step(Z, nc, alpha, sigma, h):
    k1 = _vel(Z, nc, alpha, sigma)
    k2 = _vel(Z + 0.5 * h * k1, nc, alpha, sigma)
    k3 = _vel(Z + 0.5 * h * k2, nc, alpha, sigma)
    k4 = _vel(Z + h * k3, nc, alpha, sigma)
    return Z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step_vjp(Z, nc, alpha, sigma, h, lam):
    """Cotangents of (Z, alpha) given the cotangent `lam` of the step output."""
    k1 = _vel(Z, nc, alpha, sigma)
    Z2 = Z + 0.5 * h * k1
    k2 = _vel(Z2, nc, alpha, sigma)
    Z3 = Z + 0.5 * h * k2
    k3 = _vel(Z3, nc, alpha, sigma)
    Z4 = Z + h * k3

    gZ = lam.copy()
    g1, g2, g3, g4 = (h / 6.0) * lam, (h / 3.0) * lam, (h / 3.0) * lam, (h / 6.0) * lam
    dZ, ga = _vel_vjp(Z4, nc, alpha, sigma, g4)
    gZ += dZ
    g3 = g3 + h * dZ
    dZ, da = _vel_vjp(Z3, nc, alpha, sigma, g3)
    ga += da
    gZ += dZ
    g2 = g2 + 0.5 * h * dZ
    dZ, da = _vel_vjp(Z2, nc, alpha, sigma, g2)
    ga += da
    gZ += dZ
    g1 = g1 + 0.5 * h * dZ
    dZ, da = _vel_vjp(Z, nc, alpha, sigma, g1)
    ga += da
    gZ += dZ
    return gZ, ga


# -- momentum fields ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class MomentumField:
    """Control trajectories (T+1, Nc, 3) and per-step momenta (T, Nc, 3)."""

    control_trajectories: np.ndarray
    momenta: np.ndarray
    sigma_V: float
    gamma: float
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        traj = np.array(self.control_trajectories, float)
        mom = np.array(self.momenta, float)
        if traj.ndim != 3 or mom.ndim != 3 or traj.shape[0] != mom.shape[0] + 1 \
                or traj.shape[1:] != mom.shape[1:] or traj.shape[2] != 3:
            raise ValueError(f"inconsistent field shapes {traj.shape} / {mom.shape}")
        if mom.shape[0] < 1:
            raise ValueError("a momentum field needs at least one time step")
        if not (self.sigma_V > 0 and self.gamma > 0):
            raise ValueError("sigma_V and gamma must be positive")
        if not (np.isfinite(traj).all() and np.isfinite(mom).all()):
            raise FloatingPointError("non-finite momentum field")
        traj.flags.writeable = False
        mom.flags.writeable = False
        object.__setattr__(self, "control_trajectories", traj)
        object.__setattr__(self, "momenta", mom)

    @property
    def n_steps(self) -> int:
        return self.momenta.shape[0]

    @property
    def n_controls(self) -> int:
        return self.momenta.shape[1]

    @property
    def controls(self) -> np.ndarray:
        return self.control_trajectories[0]

    @classmethod
    def from_momenta(cls, controls, momenta, sigma_V, gamma, provenance=None):
        """Integrate the control points under `momenta` to build a consistent field."""
        traj = shoot_controls(np.asarray(controls, float), np.asarray(momenta, float), sigma_V)
        return cls(traj, momenta, sigma_V, gamma, dict(provenance or {}))

    @classmethod
    def zeros(cls, controls, n_steps, sigma_V, gamma, provenance=None):
        controls = np.asarray(controls, float)
        return cls.from_momenta(controls, np.zeros((n_steps,) + controls.shape), sigma_V, gamma, provenance)


def shoot_controls(controls, momenta, sigma_V):
    T = len(momenta)
    h = 1.0 / T
    nc = len(controls)
    traj = np.empty((T + 1, nc, 3))
    traj[0] = controls
    for k in range(T):
        traj[k + 1] = rk4_step(traj[k], nc, momenta[k], sigma_V, h)
    return traj


def reversed_field(f: MomentumField) -> MomentumField:
    """Field that runs `f` backwards in time (negated momenta, reversed path)."""
    return MomentumField(f.control_trajectories[::-1], -f.momenta[::-1], f.sigma_V, f.gamma,
                         {**f.provenance, "reversed": not f.provenance.get("reversed", False)})


def _snap(t, T):
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"time {t} outside [0, 1]")
    return int(round(t * T))


def integrate_flow(points, f: MomentumField, t_end: float = 1.0) -> np.ndarray:
    """Transport points from t=0 to t_end; returns (steps+1, P, 3) positions.

    t_end is snapped to the nearest multiple of 1/T. Control positions at the
    start of every step are taken from the stored trajectories.
    """
    y = np.asarray(points, float).reshape(-1, 3)
    steps = _snap(t_end, f.n_steps)
    h = 1.0 / f.n_steps
    nc = f.n_controls
    out = np.empty((steps + 1,) + y.shape)
    out[0] = y
    for k in range(steps):
        Z = np.concatenate([f.control_trajectories[k], out[k]])
        out[k + 1] = rk4_step(Z, nc, f.momenta[k], f.sigma_V, h)[nc:]
    return out


def apply_flow(mesh: SurfaceMesh, fields, name: str | None = None) -> SurfaceMesh:
    """Transport mesh vertices through each field in order, t: 0 -> 1."""
    v = mesh.vertices
    for f in fields:
        v = integrate_flow(v, f, 1.0)[-1]
    return mesh.with_vertices(v, name)


def flow_snapshots(mesh: SurfaceMesh, f: MomentumField, times):
    """Meshes at the requested times with per-vertex cumulative path length."""
    steps = [_snap(t, f.n_steps) for t in times]
    traj = integrate_flow(mesh.vertices, f, max(steps, default=0) / f.n_steps)
    seg = np.linalg.norm(np.diff(traj, axis=0), axis=2)
    arc = np.concatenate([np.zeros((1, mesh.n_vertices)), np.cumsum(seg, axis=0)])
    return [(mesh.with_vertices(traj[s], f"{mesh.name}@t={s / f.n_steps:g}"), arc[s]) for s in steps]


# -- objective ---------------------------------------------------------------

def regularization_energy(f: MomentumField) -> float:
    """dt * sum_k a_k^T K(x_k) a_k, the discrete kinetic energy of the flow."""
    h = 1.0 / f.n_steps
    total = 0.0
    for k in range(f.n_steps):
        x, a = f.control_trajectories[k], f.momenta[k]
        total += float(np.sum(kernel_matrix(x, x, f.sigma_V) * (a @ a.T)))
    return h * total


def objective_J(source: SurfaceMesh, target: CurrentRep, f: MomentumField, cparams: CurrentsParams):
    """(J, reg, E) with J = gamma * reg + E(flowed source, target)."""
    reg = regularization_energy(f)
    E = data_term_E(apply_flow(source, [f]), target, cparams)
    return f.gamma * reg + E, reg, E


class _Problem:
    """Discretised J as a function of the momenta array, with its gradient."""

    def __init__(self, source: SurfaceMesh, target: CurrentRep, cparams: CurrentsParams,
                 sigma_V: float, gamma: float, n_steps: int, control_idx=None):
        self.source = source
        self.target = target
        self.cparams = cparams
        self.sigma = sigma_V
        self.gamma = gamma
        self.T = n_steps
        self.h = 1.0 / n_steps
        self.target_norm = currents_inner(target, target, cparams)
        v = source.vertices
        if control_idx is None:
            self.controls = v.copy()
            self.Z0 = v.copy()
            self.moved = np.arange(len(v))
        else:
            self.controls = v[np.asarray(control_idx)]
            self.Z0 = np.concatenate([self.controls, v])
            self.moved = len(self.controls) + np.arange(len(v))
        self.nc = len(self.controls)

    @property
    def shape(self):
        return (self.T, self.nc, 3)

    def forward(self, alpha):
        Zs = [self.Z0]
        for k in range(self.T):
            Zs.append(rk4_step(Zs[-1], self.nc, alpha[k], self.sigma, self.h))
        return Zs

    def _reg_terms(self, q, a):
        K = kernel_matrix(q, q, self.sigma)
        return K, float(np.sum(K * (a @ a.T)))

    def value(self, alpha, Zs=None):
        if Zs is None:
            Zs = self.forward(alpha)
        reg = self.h * sum(self._reg_terms(Zs[k][:self.nc], alpha[k])[1] for k in range(self.T))
        moved = self.source.with_vertices(Zs[-1][self.moved])
        E = data_term_E(moved, self.target, self.cparams, self.target_norm)
        return self.gamma * reg + E, reg, E

    def value_and_grad(self, alpha):
        Zs = self.forward(alpha)
        J, reg, E = self.value(alpha, Zs)
        moved = self.source.with_vertices(Zs[-1][self.moved])
        lam = np.zeros_like(Zs[-1])
        lam[self.moved] = grad_data_term(moved, self.target, self.cparams)
        grad = np.empty_like(alpha)
        c = self.gamma * self.h
        for k in range(self.T - 1, -1, -1):
            lam, ga = rk4_step_vjp(Zs[k], self.nc, alpha[k], self.sigma, self.h, lam)
            q, a = Zs[k][:self.nc], alpha[k]
            K = kernel_matrix(q, q, self.sigma)
            ga += 2.0 * c * (K @ a)
            w = (a @ a.T) * (-4.0 * K * K / self.sigma ** 2)
            lam[:self.nc] += c * weighted_differences(w, q, q)
            grad[k] = ga
        return (J, reg, E), grad


# -- matching ----------------------------------------------------------------

@dataclass(frozen=True)
class MatchParams:
    """Optimizer settings. None for a kernel width means a scale-relative default:
    sigma_V = 25% of the source bbox diagonal, sigma_W = 10% of the target's."""

    sigma_V: float | None = None
    gamma: float = 0.01
    n_steps: int = 10
    sigma_W: float | None = None
    currents_kernel: str = "gaussian"
    max_iterations: int = 200
    grad_tol: float = 1e-6
    rel_j_tol: float = 1e-6
    armijo: float = 1e-4
    shrink: float = 0.5
    max_halvings: int = 30
    control_stride: int = 1

    def __post_init__(self):
        for name in ("gamma", "grad_tol", "rel_j_tol", "armijo"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        for name in ("sigma_V", "sigma_W"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_steps < 1 or self.max_iterations < 0 or self.control_stride < 1:
            raise ValueError("n_steps and control_stride must be >= 1, max_iterations >= 0")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")

    def resolved(self, source: SurfaceMesh, target: SurfaceMesh) -> "MatchParams":
        return replace(self,
                       sigma_V=self.sigma_V or 0.25 * source.bbox_diagonal(),
                       sigma_W=self.sigma_W or 0.1 * target.bbox_diagonal())

    def currents(self) -> CurrentsParams:
        return CurrentsParams(self.sigma_W, self.currents_kernel)


@dataclass
class MatchReport:
    iterations: int
    initial: dict
    final: dict
    converged: bool
    reason: str
    trace: list
    params: dict

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def E_reduction(self) -> float:
        e0 = self.initial["E"]
        return 1.0 - self.final["E"] / e0 if e0 > 0 else 1.0


def _components(jre):
    return {"J": jre[0], "reg": jre[1], "E": jre[2]}


def match(source: SurfaceMesh, target: SurfaceMesh, params: MatchParams | None = None,
          callback=None):
    """Find momenta flowing `source` onto `target`; returns (field, report)."""
    check(source)
    check(target)
    p = (params or MatchParams()).resolved(source, target)
    idx = None if p.control_stride == 1 else np.arange(0, source.n_vertices, p.control_stride)
    prob = _Problem(source, current_of(target), p.currents(), p.sigma_V, p.gamma, p.n_steps, idx)

    alpha = np.zeros(prob.shape)
    jre, g = prob.value_and_grad(alpha)
    initial = _components(jre)
    J = jre[0]
    trace = [J]
    g0 = float(np.linalg.norm(g))
    gmax = np.max(np.linalg.norm(g, axis=-1)) if g.size else 0.0
    step = 0.1 * p.sigma_V / gmax if gmax > 0 else 0.0
    reason, converged = "max_iterations", False

    for it in range(p.max_iterations + 1):
        gn = float(np.linalg.norm(g))
        if gn == 0.0 or gn <= p.grad_tol * g0:
            reason, converged = "gradient", True
            break
        if it == p.max_iterations:
            break
        t = step
        for _ in range(p.max_halvings):
            trial = alpha - t * g
            try:
                jt = prob.value(trial)
            except FloatingPointError:
                jt = (np.nan,) * 3
            if np.isfinite(jt[0]) and jt[0] <= J - p.armijo * t * gn * gn:
                break
            t *= p.shrink
        else:
            raise MatchDivergence(
                f"line search failed after {p.max_halvings} halvings at iteration {it}: "
                f"J={jre[0]:.6e} reg={jre[1]:.6e} E={jre[2]:.6e}")
        jre_new, g_new = prob.value_and_grad(trial)
        s, y = (trial - alpha).ravel(), (g_new - g).ravel()
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 0 else 2.0 * t
        dJ = J - jre_new[0]
        alpha, g, jre, J = trial, g_new, jre_new, jre_new[0]
        trace.append(J)
        if callback is not None:
            callback(it, jre)
        log.debug("iter %d J=%.6e reg=%.6e E=%.6e step=%.3e", it, *jre, t)
        if dJ <= p.rel_j_tol * abs(J):
            reason, converged = "objective", True
            break

    provenance = {"source": source.name, "target": target.name, **asdict(p)}
    f = MomentumField(np.stack(prob.forward(alpha))[:, :prob.nc], alpha, p.sigma_V, p.gamma, provenance)
    # score the final E on the mesh exactly as apply_flow produces it
    E = data_term_E(apply_flow(source, [f]), prob.target, prob.cparams, prob.target_norm)
    final = _components((p.gamma * jre[1] + E, jre[1], E))
    report = MatchReport(len(trace) - 1, initial, final, converged, reason, trace, asdict(p))
    return f, report


# -- serialisation -----------------------------------------------------------

def save_field(f: MomentumField, path) -> None:
    """Versioned JSON; floats are written with round-trip (17 digit) precision."""
    doc = {
        "format": FIELD_FORMAT,
        "version": FIELD_VERSION,
        "sigma_V": f.sigma_V,
        "gamma": f.gamma,
        "n_steps": f.n_steps,
        "n_controls": f.n_controls,
        "provenance": f.provenance,
        "control_trajectories": f.control_trajectories.tolist(),
        "momenta": f.momenta.tolist(),
    }
    Path(path).write_text(json.dumps(doc, indent=1) + "\n")


def load_field(path) -> MomentumField:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FIELD_FORMAT or doc.get("version") != FIELD_VERSION:
        raise ValueError(f"{path}: not a {FIELD_FORMAT} v{FIELD_VERSION} file")
    f = MomentumField(doc["control_trajectories"], doc["momenta"], doc["sigma_V"], doc["gamma"],
                      doc.get("provenance", {}))
    if f.n_steps != doc["n_steps"] or f.n_controls != doc["n_controls"]:
        raise ValueError(f"{path}: declared sizes do not match the arrays")
    return f
