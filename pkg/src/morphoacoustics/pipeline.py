"""Composite shape transformations between two subjects.

``synth_all`` carries the source's head, torso and left ear onto the target's;
``synth_ear_only`` replaces just the left-ear shape and leaves the head and
torso in place. ``mirror_direction`` runs both with the subjects swapped.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .currents import CurrentsParams, current_of, data_term_E
from .lddmm import MatchParams, MomentumField, apply_flow, match
from .mesh import SurfaceMesh, check, translate_align


class PipelineError(RuntimeError):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class SubjectAssets:
    full: SurfaceMesh
    head_torso: SurfaceMesh
    left_ear: SurfaceMesh
    label: str

    def __post_init__(self):
        if not self.label:
            raise ValueError("subject label must be nonempty")
        names = {"full": self.label, "head_torso": f"HT{self.label}", "left_ear": f"LE{self.label}"}
        for attr, default in names.items():
            m = getattr(self, attr)
            check(m)
            if not m.name:
                object.__setattr__(self, attr, m.with_vertices(m.vertices, default))
        labels = [self.full.name, self.head_torso.name, self.left_ear.name]
        if len(set(labels)) != 3:
            raise ValueError(f"asset labels must be distinct, got {labels}")


@dataclass
class PipelineResult:
    mode: str
    result: SurfaceMesh
    intermediates: dict
    fields: dict
    reports: dict
    stages: list
    far_field: dict | None = None
    extra: dict = field(default_factory=dict)


def _match(stage, source, target, params):
    try:
        return match(source, target, params)
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name
        raise PipelineError(stage, exc) from exc


def synth_all(src: SubjectAssets, tgt: SubjectAssets, params: MatchParams | None = None,
              ear_params: MatchParams | None = None) -> PipelineResult:
    """Head/torso flow, then ear refinement, both applied to the full source mesh."""
    params = params or MatchParams()
    ear_params = ear_params or params
    a, b = src.label, tgt.label
    f_ht, r_ht = _match(f"match(HT{a}, HT{b})", src.head_torso, tgt.head_torso, params)
    le3 = apply_flow(src.left_ear, [f_ht], name=f"LE{a}{b}")
    f_e, r_e = _match(f"match(LE{a}{b}, LE{b})", le3, tgt.left_ear, ear_params)
    result = apply_flow(src.full, [f_ht, f_e], name=f"{a}{b}_all")
    stages = [f"alpha_HT = match(HT{a}, HT{b})",
              f"LE{a}{b} = flow(LE{a}, alpha_HT)",
              f"alpha_E = match(LE{a}{b}, LE{b})",
              f"{a}{b}_all = flow({a}, [alpha_HT, alpha_E])"]
    return PipelineResult("all", result, {"LE3": le3}, {"alpha_HT": f_ht, "alpha_E": f_e},
                          {"alpha_HT": r_ht, "alpha_E": r_e}, stages)


def _in_box(points, box):
    lo, hi = np.asarray(box[0], float), np.asarray(box[1], float)
    return np.all((points >= lo) & (points <= hi), axis=1)


def far_field_report(before: SurfaceMesh, after: SurfaceMesh, f: MomentumField, box) -> dict:
    """Displacement outside the ear box, and a kernel-tail bound for distant vertices.

    For a vertex at distance d from every control position, |k_V| <= sigma_V^2 / d^2,
    so its path length is at most sigma_V^2 / d^2 * sum_n max_t |a_n(t)|. The
    distance is shrunk by the vertex's own motion and the largest control step
    so that RK4 stage positions are covered.
    """
    disp = np.linalg.norm(after.vertices - before.vertices, axis=1)
    outside = ~_in_box(before.vertices, box)
    traj = f.control_trajectories.reshape(-1, 3)
    dist = np.full(before.n_vertices, np.inf)
    for s in range(0, len(traj), 512):
        d = np.linalg.norm(before.vertices[:, None, :] - traj[None, s:s + 512], axis=2)
        dist = np.minimum(dist, d.min(axis=1))
    ctrl_step = float(np.max(np.linalg.norm(np.diff(f.control_trajectories, axis=0), axis=2), initial=0.0))
    alpha_sum = float(np.linalg.norm(f.momenta, axis=2).max(axis=0).sum())
    far = outside & (dist > 10.0 * f.sigma_V)
    d_eff = np.maximum(dist - disp - ctrl_step, 0.0)
    if alpha_sum == 0.0:
        bound = np.zeros(before.n_vertices)
    else:
        with np.errstate(divide="ignore"):
            bound = np.where(d_eff > 0, f.sigma_V ** 2 / d_eff ** 2 * alpha_sum, np.inf)
    return {
        "n_outside": int(outside.sum()),
        "max_displacement_outside": float(disp[outside].max(initial=0.0)),
        "n_far": int(far.sum()),
        "max_displacement_far": float(disp[far].max(initial=0.0)),
        "tail_bound_far": float(bound[far].min(initial=np.inf)) if far.any() else None,
        "bound_respected": bool(np.all(disp[far] <= bound[far])),
        "sigma_V": f.sigma_V,
    }


def synth_ear_only(src: SubjectAssets, tgt_left_ear: SurfaceMesh, params: MatchParams | None = None,
                   ear_region=None, far_field: bool = True) -> PipelineResult:
    """Translate the target ear onto the source ear, match, flow the full source.

    `ear_region` is an axis-aligned box (lo, hi) around the source left ear; it is
    required for the far-field report and for the ear-region data term.
    """
    if far_field and ear_region is None:
        raise ValueError("ear_region is required when the far-field report is requested")
    params = params or MatchParams()
    a = src.label
    b = tgt_left_ear.name or "target ear"
    moved_ear, shift = translate_align(tgt_left_ear, src.left_ear)
    moved_ear = moved_ear.with_vertices(moved_ear.vertices, f"{b}'")
    f_e, r_e = _match(f"match(LE{a}, {b}')", src.left_ear, moved_ear, params)
    tail = b[2:] if b.startswith("LE") else b
    result = apply_flow(src.full, [f_e], name=f"{a}{tail}_ear-only")
    stages = [f"{b}' = translate({b}, LE{a})",
              f"alpha_E = match(LE{a}, {b}')",
              f"{a}{tail}_ear-only = flow({a}, alpha_E)"]
    out = PipelineResult("ear-only", result, {"translated_ear": moved_ear}, {"alpha_E": f_e},
                         {"alpha_E": r_e}, stages, extra={"translation": shift.tolist()})
    if ear_region is not None:
        cp = r_e.params
        cparams = CurrentsParams(cp["sigma_W"], cp["currents_kernel"])
        faces_in = _in_box(src.full.vertices, ear_region)[src.full.faces].all(axis=1)
        target = current_of(moved_ear)
        out.extra["ear_E_before"] = data_term_E(src.full.submesh(faces_in), target, cparams)
        out.extra["ear_E_after"] = data_term_E(result.submesh(faces_in), target, cparams)
    if far_field:
        out.far_field = far_field_report(src.full, result, f_e, ear_region)
    return out


def mirror_direction(src: SubjectAssets, tgt: SubjectAssets, params: MatchParams | None = None,
                     ear_params: MatchParams | None = None, tgt_ear_region=None):
    """Both procedures with roles swapped: (tgt -> src all, tgt -> src ear-only)."""
    res_all = synth_all(tgt, src, params, ear_params)
    res_ear = synth_ear_only(tgt, src.left_ear, ear_params or params, tgt_ear_region,
                             far_field=tgt_ear_region is not None)
    return res_all, res_ear
