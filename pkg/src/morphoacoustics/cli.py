"""Command-line front end.

Exit codes: 0 success, 2 usage, 3 IO/parse error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import hrtf, shapes
from .currents import CurrentsParams, current_of, data_term_E
from .lddmm import MatchParams, apply_flow, flow_snapshots, load_field, match, save_field
from .mesh import MeshError, MeshFormatError, load_mesh, save_mesh
from .pipeline import PipelineError, SubjectAssets, synth_all, synth_ear_only

log = logging.getLogger("morphoacoustics")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4


class UsageError(Exception):
    pass


def sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _emit_params(args, extra=None):
    """Print the effective-parameter block for this run."""
    doc = {"command": args.command, **{k: v for k, v in vars(args).items()
                                         if k not in ("func", "command", "config") and v is not None}}
    doc.update(extra or {})
    print(json.dumps({"effective_parameters": doc}, sort_keys=True, default=str))
    return doc


# -- parameter plumbing ------------------------------------------------------

_MATCH_FLAGS = {
    "sigma_v": "sigma_V", "gamma": "gamma", "steps": "n_steps", "sigma_w": "sigma_W",
    "kernel": "currents_kernel", "max_iter": "max_iterations", "grad_tol": "grad_tol",
    "rel_j_tol": "rel_j_tol", "control_stride": "control_stride",
}


def _add_match_flags(p, prefix=""):
    d = MatchParams()
    p.add_argument(f"--{prefix}sigma-v", type=float, help="velocity kernel width in m (default 25%% of source bbox)")
    p.add_argument(f"--{prefix}gamma", type=float, help=f"regularisation weight (default {d.gamma})")
    p.add_argument(f"--{prefix}steps", type=int, help=f"time steps T (default {d.n_steps})")
    p.add_argument(f"--{prefix}sigma-w", type=float, help="currents kernel width in m (default 10%% of target bbox)")
    p.add_argument(f"--{prefix}kernel", choices=["gaussian", "cauchy"], help="currents kernel")
    p.add_argument(f"--{prefix}max-iter", type=int, help=f"default {d.max_iterations}")
    p.add_argument(f"--{prefix}grad-tol", type=float, help=f"default {d.grad_tol}")
    p.add_argument(f"--{prefix}rel-j-tol", type=float, help=f"default {d.rel_j_tol}")
    p.add_argument(f"--{prefix}control-stride", type=int, help="use every k-th vertex as a control point")


def _match_params(args, config, prefix="", section="match") -> MatchParams:
    vals = dict(config.get(section, {}))
    for flag, name in _MATCH_FLAGS.items():
        v = getattr(args, prefix.replace("-", "_") + flag, None)
        if v is not None:
            vals[name] = v
    known = {f.name for f in fields(MatchParams)}
    unknown = set(vals) - known
    if unknown:
        raise UsageError(f"unknown match parameters in config: {sorted(unknown)}")
    try:
        return MatchParams(**vals)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _load_config(args):
    if getattr(args, "config", None) is None:
        return {}
    return json.loads(Path(args.config).read_text())


def _scale(args):
    return 1e-3 if getattr(args, "mm", False) else 1.0


# -- commands ----------------------------------------------------------------

def cmd_match(args):
    config = _load_config(args)
    params = _match_params(args, config)
    src = load_mesh(args.source, scale=_scale(args))
    tgt = load_mesh(args.target, scale=_scale(args))
    f, report = match(src, tgt, params)
    save_field(f, args.out_field)
    doc = report.to_dict()
    doc["E_reduction"] = report.E_reduction
    doc["inputs"] = {"source": {"path": str(args.source), "sha256": sha256(args.source)},
                     "target": {"path": str(args.target), "sha256": sha256(args.target)}}
    _write_json(args.out_report, doc)
    _emit_params(args, {"match": report.params})
    print(f"E: {report.initial['E']:.6e} -> {report.final['E']:.6e} "
          f"({100 * report.E_reduction:.2f}% reduction) in {report.iterations} iterations ({report.reason})")
    return EXIT_OK


def cmd_flow(args):
    mesh = load_mesh(args.mesh, scale=_scale(args))
    fields_ = [load_field(p) for p in args.fields]
    for path, f in zip(args.fields, fields_):
        src = f.provenance.get("source")
        if f.n_controls != mesh.n_vertices or (src and src != mesh.name):
            log.warning("field %s was learned on %r; transporting %r anyway", path, src, mesh.name)
    out = apply_flow(mesh, fields_, name=f"{mesh.name}_flowed")
    save_mesh(out, args.out, digits=args.digits)
    written = [str(args.out)]
    if args.t:
        if not fields_:
            raise UsageError("--t needs at least one field")
        base = apply_flow(mesh, fields_[:-1])
        prefix = args.snapshot_prefix or str(Path(args.out).with_suffix(""))
        for t, (snap, disp) in zip(args.t, flow_snapshots(base, fields_[-1], args.t)):
            path = f"{prefix}_t{t:.2f}.ply"
            save_mesh(snap, path, digits=args.digits, vertex_data={"displacement": disp})
            written.append(path)
    if args.target:
        tgt = load_mesh(args.target, scale=_scale(args))
        sigma_w = args.sigma_w or 0.1 * tgt.bbox_diagonal()
        e = data_term_E(out, current_of(tgt), CurrentsParams(sigma_w, args.kernel or "gaussian"))
        print(f"E(flowed, target) = {e!r}")
    _emit_params(args, {"outputs": written})
    return EXIT_OK


def _assets(args, side, need_ht):
    paths = {"full": getattr(args, f"{side}_full"), "head_torso": getattr(args, f"{side}_ht"),
             "left_ear": getattr(args, f"{side}_ear")}
    for key, flag in (("full", "full"), ("left_ear", "ear"), ("head_torso", "ht")):
        if paths[key] is None and (key != "head_torso" or need_ht):
            raise UsageError(f"missing asset --{side}-{flag} ({key.replace('_', ' ')} mesh)")
    meshes = {k: load_mesh(p, scale=_scale(args)) if p else None for k, p in paths.items()}
    return meshes, paths


def cmd_synth(args):
    config = _load_config(args)
    params = _match_params(args, config)
    ear_params = _match_params(args, config, prefix="ear-", section="ear_match")
    if not any(getattr(args, "ear_" + k) is not None for k in _MATCH_FLAGS) and "ear_match" not in config:
        ear_params = params
    need_ht = args.mode == "all"
    src_m, src_p = _assets(args, "src", need_ht)
    if args.mode == "all":
        tgt_m, tgt_p = _assets(args, "tgt", True)
    else:
        if args.tgt_ear is None:
            raise UsageError("missing asset --tgt-ear (left ear mesh)")
        tgt_p = {"left_ear": args.tgt_ear}
        tgt_m = {"left_ear": load_mesh(args.tgt_ear, scale=_scale(args))}
    src_ht = src_m["head_torso"] or src_m["full"]
    src = SubjectAssets(src_m["full"], src_ht.with_vertices(src_ht.vertices, f"HT{args.src_label}"),
                        src_m["left_ear"], args.src_label)
    if args.mode == "all":
        tgt = SubjectAssets(tgt_m["full"], tgt_m["head_torso"], tgt_m["left_ear"], args.tgt_label)
        res = synth_all(src, tgt, params, ear_params)
    else:
        box = None
        if args.ear_box:
            box = (np.array(args.ear_box[:3]) * _scale(args), np.array(args.ear_box[3:]) * _scale(args))
        res = synth_ear_only(src, tgt_m["left_ear"], ear_params, ear_region=box, far_field=box is not None)

    out_dir = Path(args.out).parent
    save_mesh(res.result, args.out, digits=args.digits)
    outputs = {"result": {"path": str(args.out), "sha256": sha256(args.out)}}
    for name, f in res.fields.items():
        p = out_dir / f"{Path(args.out).stem}.{name}.field.json"
        save_field(f, p)
        outputs[name] = {"path": str(p), "sha256": sha256(p)}
    for name, m in res.intermediates.items():
        p = out_dir / f"{Path(args.out).stem}.{name}.off"
        save_mesh(m, p, digits=args.digits)
        outputs[name] = {"path": str(p), "sha256": sha256(p)}
    inputs = {f"src.{k}": {"path": str(p), "sha256": sha256(p)} for k, p in src_p.items() if p}
    inputs.update({f"tgt.{k}": {"path": str(p), "sha256": sha256(p)} for k, p in tgt_p.items() if p})
    manifest = {
        "mode": res.mode,
        "stages": res.stages,
        "parameters": {"match": asdict(params), "ear_match": asdict(ear_params)},
        "reports": {k: r.to_dict() for k, r in res.reports.items()},
        "momentum_norms": {k: float(np.abs(f.momenta).max()) for k, f in res.fields.items()},
        "inputs": inputs,
        "outputs": outputs,
        "far_field": res.far_field,
        "extra": res.extra,
    }
    _write_json(args.manifest or out_dir / f"{Path(args.out).stem}.manifest.json", manifest)
    _emit_params(args, {"match": asdict(params), "ear_match": asdict(ear_params)})
    return EXIT_OK


def cmd_sfrs(args):
    s = hrtf.load_hrtf_set(args.hrtf)
    if not s.frequencies[0] <= args.freq <= s.frequencies[-1]:
        raise UsageError(f"--freq {args.freq} Hz outside the set's range "
                         f"[{s.frequencies[0]}, {s.frequencies[-1]}] Hz")
    m = hrtf.sfrs(s, args.freq)
    Path(args.out).write_text(hrtf.sfrs_csv(m))
    _emit_params(args)
    return EXIT_OK


def cmd_corr(args):
    a, b = hrtf.load_hrtf_set(args.a), hrtf.load_hrtf_set(args.b)
    freqs = args.freqs if args.freqs else a.frequencies
    curve = hrtf.correlation_curve(a, b, freqs, weighted=not args.unweighted)
    Path(args.out).write_text(hrtf.curve_csv(curve))
    _emit_params(args, {"weighting": "uniform" if args.unweighted else "voronoi"})
    return EXIT_OK


def cmd_oracle(args):
    dirs = hrtf.fibonacci_directions(args.n_directions)
    s = hrtf.sphere_hrtf_oracle(args.radius, args.ear_direction, dirs, args.freqs, ear=args.ear,
                                c=args.speed_of_sound)
    hrtf.save_hrtf_set(s, args.out)
    _emit_params(args)
    return EXIT_OK


def cmd_fixture(args):
    if args.kind == "sphere":
        m = shapes.icosphere(args.subdivisions, args.radius, name=Path(args.out).stem)
    elif args.kind == "ellipsoid":
        m = shapes.ellipsoid(args.axes, args.subdivisions, name=Path(args.out).stem)
    else:
        m = shapes.random_mesh(np.random.default_rng(args.seed), args.faces)
    save_mesh(m, args.out, digits=17)
    _emit_params(args)
    return EXIT_OK


# -- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="morphoacoustics", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("--digits", type=int, default=17,
                   help="significant digits for mesh coordinates (17 round-trips exactly)")
    sub = p.add_subparsers(dest="command", required=True)

    m = sub.add_parser("match", help="learn momenta mapping SOURCE onto TARGET")
    m.add_argument("source")
    m.add_argument("target")
    m.add_argument("--out-field", required=True)
    m.add_argument("--out-report", required=True)
    m.add_argument("--mm", action="store_true", help="input coordinates are millimetres")
    m.add_argument("--config", help="JSON file with a 'match' section; flags win")
    _add_match_flags(m)
    m.set_defaults(func=cmd_match)

    f = sub.add_parser("flow", help="transport a mesh through one or more momentum fields")
    f.add_argument("mesh")
    f.add_argument("fields", nargs="*")
    f.add_argument("--out", required=True)
    f.add_argument("--t", type=float, nargs="+", help="snapshot times in [0, 1] along the last field")
    f.add_argument("--snapshot-prefix")
    f.add_argument("--target", help="re-score the flowed mesh against this target mesh")
    f.add_argument("--sigma-w", type=float)
    f.add_argument("--kernel", choices=["gaussian", "cauchy"])
    f.add_argument("--mm", action="store_true")
    f.set_defaults(func=cmd_flow)

    s = sub.add_parser("synth", help="run the all / ear-only subject transformation")
    s.add_argument("--mode", choices=["all", "ear-only"], required=True)
    for side in ("src", "tgt"):
        s.add_argument(f"--{side}-full")
        s.add_argument(f"--{side}-ht")
        s.add_argument(f"--{side}-ear")
    s.add_argument("--src-label", default="1")
    s.add_argument("--tgt-label", default="2")
    s.add_argument("--ear-box", type=float, nargs=6, metavar=("X0", "Y0", "Z0", "X1", "Y1", "Z1"),
                   help="axis-aligned box around the source left ear (far-field report)")
    s.add_argument("--out", required=True)
    s.add_argument("--manifest")
    s.add_argument("--mm", action="store_true")
    s.add_argument("--config", help="JSON with 'match' and 'ear_match' sections; flags win")
    _add_match_flags(s)
    _add_match_flags(s, prefix="ear-")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("sfrs", help="SFRS of an HRTF grid at one frequency, as CSV")
    r.add_argument("hrtf")
    r.add_argument("--freq", type=float, required=True)
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_sfrs)

    c = sub.add_parser("corr", help="spatial correlation of two HRTF grids versus frequency")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--freqs", type=float, nargs="+")
    c.add_argument("--unweighted", action="store_true", help="plain Pearson instead of solid-angle weights")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_corr)

    o = sub.add_parser("oracle", help="rigid-sphere HRTF grid")
    o.add_argument("--radius", type=float, required=True)
    o.add_argument("--ear-direction", type=float, nargs=3, default=[0.0, 1.0, 0.0])
    o.add_argument("--ear", default="left")
    o.add_argument("--n-directions", type=int, default=200)
    o.add_argument("--freqs", type=float, nargs="+", required=True)
    o.add_argument("--speed-of-sound", type=float, default=hrtf.SPEED_OF_SOUND)
    o.add_argument("--out", required=True)
    o.set_defaults(func=cmd_oracle)

    x = sub.add_parser("fixture", help="write a synthetic test mesh")
    x.add_argument("kind", choices=["sphere", "ellipsoid", "random"])
    x.add_argument("--subdivisions", type=int, default=2)
    x.add_argument("--radius", type=float, default=1.0)
    x.add_argument("--axes", type=float, nargs=3, default=[1.0, 1.0, 1.0])
    x.add_argument("--faces", type=int, default=10)
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_fixture)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, MeshFormatError, MeshError, hrtf.HrtfFormatError, json.JSONDecodeError) as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (FloatingPointError, PipelineError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
