"""Batch command-line front end.

Every command takes ``--seed``; random streams are split per stage and frame
as ``SeedSequence([seed, crc32(stage_tag), frame_id])``, so outputs do not
depend on how frames are scheduled across ``--jobs`` workers. Settings are
layered: dataclass defaults, then the ``--config`` JSON (either flat or
under a section named after the command), then explicit flags.
"""
from __future__ import annotations

import argparse
import csv
import io as _stdio
import logging
import os
import sys
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .balance import (AnchorSet, PcaAutoencoder, RelevanceConfig, SamplerConfig, default_jitter,
                      fit_pca, reconstruction_error, relevance, sample_latent, select_anchors)
from .body import BodyParams, ParameterError, landmarks, load_model, posed_joints
from .capture import (SimConfig, Sensor, calibrate_wand, fuse_and_cluster, intrinsics, observe,
                      simulate_sensor)
from .corruption import CorruptionConfig, MarkerFrame, apply_pipeline, displace
from .fitter import FitConfig, FitProblem, default_prior, fit
from .heatmap import VIEWS, normalize_frame, pack_maps, render_ortho
from .metrics import evaluate
from .rotations import rodrigues

log = logging.getLogger("mocapsolve")

LOG_ENV = "MOCAPSOLVE_LOG"
REPORT_COLUMNS = ("dataset", "mode", "metric", "value")
REPORT_METRICS = ("rmse", "pck1", "pck3", "pck7", "mae", "rmse3")


# --------------------------------------------------------------- plumbing

def rng_for(seed, tag, frame_id=0):
    """Independent generator for one (seed, stage, frame) triple."""
    if seed < 0:
        raise ParameterError("seed must be non-negative")
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(tag.encode()),
                                                         int(frame_id)]))


def _section(args, name):
    if not args.config:
        return {}
    d = io.read_json(args.config)
    return d.get(name, d) if isinstance(d, dict) else {}


def _build(cls, values):
    known = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ParameterError(f"unknown {cls.__name__} keys: {sorted(unknown)}")

    def tuplify(v):
        return tuple(tuplify(x) for x in v) if isinstance(v, list) else v
    return cls(**{k: tuplify(v) for k, v in values.items()})


def _model(args):
    spec = args.model
    if spec is None or spec.startswith("desk:"):
        layout = "53_18" if spec is None else spec.split(":", 1)[1]
        return load_model(layout=layout)
    return load_model(spec)


def _manifest_path(output):
    p = Path(output)
    return p / "manifest.json" if p.is_dir() else p.with_name(p.name + ".manifest.json")


def _require(args, *names):
    for n in names:
        if getattr(args, n) is None:
            raise ParameterError(f"--{n.replace('_', '-')} is required")


def _parallel(fn, items, jobs, initializer, initargs):
    """Order-preserving map; a single job runs in-process."""
    if jobs <= 1 or len(items) <= 1:
        initializer(*initargs)
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=jobs, initializer=initializer, initargs=initargs) as ex:
        return list(ex.map(fn, items))


_WORKER = {}


def _init_worker(model_spec, payload):
    _WORKER.clear()
    _WORKER["model"] = _model(argparse.Namespace(model=model_spec))
    _WORKER.update(payload)


# ------------------------------------------------------------------ synth

def _random_params(model, rng, theta_range):
    theta = rng.uniform(-theta_range, theta_range, (model.n_joints, 3))
    theta[0] = 0.0
    return BodyParams(rng.normal(0, 0.5, model.n_shape), theta,
                      rng.normal(0, 0.5, 3), rng.normal(0, 0.5, 3))


def cmd_synth(args, man):
    model = _model(args)
    if args.input:
        items = io.read_poses(args.input)
        man.inputs.append(args.input)
    elif args.count:
        items = [(i, _random_params(model, rng_for(args.seed, "synth", i), args.theta_range))
                 for i in range(args.count)]
    else:
        items = [(0, BodyParams.zeros(model))]
    frames = [MarkerFrame.from_landmarks(model, landmarks(model, p), i) for i, p in items]
    man.stage("synthesize")
    poses_out = args.poses_output or _sibling(args.output, ".poses.jsonl")
    io.write_frames(args.output, frames)
    io.write_poses(poses_out, items)
    man.outputs += [args.output, str(poses_out)]


def _sibling(path, suffix):
    p = Path(path)
    return p.with_name(p.name.split(".")[0] + suffix)


# ---------------------------------------------------------------- corrupt

def cmd_corrupt(args, man):
    frames = io.read_frames(args.input)
    man.inputs.append(args.input)
    mode = args.mode or "pipeline"
    out_frames, out_poses = [], []
    if mode == "outliers":
        for f in frames:
            g = displace(f, rng_for(args.seed, "outliers", f.frame_id), args.outlier_fraction,
                         args.outlier_distance)
            out_frames.append(g)
    elif mode == "pipeline":
        config = _build(CorruptionConfig, {**_section(args, "corruption"), "seed": args.seed})
        poses = dict(io.read_poses(args.poses)) if args.poses else {}
        model = _model(args) if poses else None
        for f in frames:
            rng = rng_for(args.seed, "corrupt", f.frame_id)
            params = poses.get(f.frame_id)
            if params is None:
                # without parameters only the marker-level stages can act
                cfg = _build(CorruptionConfig, {**config.to_dict(), "p_shape_aug": 0.0, "p_flip": 0.0})
                params = BodyParams(np.zeros(1), np.zeros((1, 3)))
                _, g, _ = apply_pipeline(params, f, cfg, rng)
            else:
                params, g, _ = apply_pipeline(params, f, config, rng, model=model)
                out_poses.append((f.frame_id, params))
            out_frames.append(g)
    else:
        raise ParameterError(f"corrupt mode must be 'pipeline' or 'outliers', got {mode!r}")
    man.stage("corrupt")
    io.write_frames(args.output, out_frames)
    man.outputs.append(args.output)
    if out_poses:
        poses_out = args.poses_output or _sibling(args.output, ".poses.jsonl")
        io.write_poses(poses_out, out_poses)
        man.outputs.append(str(poses_out))


# ---------------------------------------------------------------- balance

def _variant(name):
    return name.replace("-", "_")


def cmd_balance(args, man):
    model = _model(args)
    cfg = _section(args, "balance")
    if args.action == "sample":
        data = io.read_json(args.input)
        man.inputs.append(args.input)
        ae = PcaAutoencoder.from_dict(data["autoencoder"])
        anchors = AnchorSet.from_dict(data["anchors"])
        sampler = _build(SamplerConfig, {"s": default_jitter(ae, cfg.get("jitter_fraction", 0.1)),
                                         "B": cfg.get("B", 1.0), "mode": args.mode or "slerp"})
        std = np.sqrt(ae.explained_variance) * ae._gain
        items = []
        for i in range(args.count):
            z = sample_latent(anchors, sampler, rng_for(args.seed, "balance-sample", i), std)
            items.append((i, BodyParams(np.zeros(model.n_shape), ae.decode(z))))
        man.stage("sample")
        io.write_poses(args.output, items)
        man.outputs.append(args.output)
        return

    poses = io.read_poses(args.input)
    man.inputs.append(args.input)
    thetas = np.array([p.theta for _, p in poses])
    if args.ae:
        ae = PcaAutoencoder.load(args.ae)
        man.inputs.append(args.ae)
    else:
        ae = fit_pca(thetas, Z=min(int(cfg.get("latent_dim", 32)), len(thetas) - 1),
                     shrinkage=float(cfg.get("shrinkage", 0.0)))
    errors = np.array([reconstruction_error(model, ae, th) for th in thetas])
    man.stage("score")
    if args.action == "anchors":
        anchors = select_anchors(thetas, ae, model, c=float(cfg.get("c", 2.0)),
                                 ids=[i for i, _ in poses], errors=errors)
        io.write_json(args.output, {"autoencoder": ae.to_dict(), "anchors": anchors.to_dict()})
    else:
        rc = RelevanceConfig(variant=_variant(args.variant), sigma=float(cfg.get("sigma", errors.mean())))
        rho = np.atleast_1d(relevance(errors, rc))
        io.write_jsonl(args.output, [{"frame_id": i, "epsilon": float(e), "relevance": float(r)}
                                     for (i, _), e, r in zip(poses, errors, rho)])
    man.outputs.append(args.output)


# ----------------------------------------------------------------- render

def cmd_render(args, man):
    frames = io.read_frames(args.input)
    man.inputs.append(args.input)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    norms = []
    for f in frames:
        labeled = [l is not None for l in f.labels]
        nf = normalize_frame(f.points, labeled if any(labeled) else None)
        for view in VIEWS:
            dm = render_ortho(nf, view)
            io.atomic_write_bytes(out / f"frame_{f.frame_id:06d}_{view}.bin", pack_maps(view, dm.pixels))
        norms.append({"frame_id": f.frame_id, "scale": nf.scale, "center": nf.center.tolist(),
                      "clamped": int(nf.clamped.sum())})
    man.stage("render")
    io.write_jsonl(out / "normalization.jsonl", norms)
    man.outputs.append(str(out))


# -------------------------------------------------------------------- fit

def _fit_mode(name):
    m = (name or "noise_aware").replace("-", "_")
    if m not in ("noise_aware", "plain", "barron"):
        raise ParameterError(f"unknown fit mode {name!r}")
    return m


def _fit_one(record):
    model, config = _WORKER["model"], _WORKER["config"]
    frame = MarkerFrame.from_dict(record)
    problem = FitProblem.from_markers(model, default_prior(model), frame.labels, frame.points)
    res = fit(problem, config)
    d = res.to_dict(frame.frame_id)
    d["mode"] = config.mode
    d["observed"] = [model.landmark_names[i] for i in res.observed]
    return d


def cmd_fit(args, man):
    records = io.read_jsonl(args.input)
    man.inputs.append(args.input)
    config = _build(FitConfig, {**_section(args, "fit"), "mode": _fit_mode(args.mode)})
    results = _parallel(_fit_one, records, args.jobs, _init_worker, (args.model, {"config": config}))
    man.stage("fit")
    results.sort(key=lambda r: r["frame_id"])
    io.write_jsonl(args.output, results)
    man.outputs.append(args.output)


# ------------------------------------------------------------------- eval

def cmd_eval(args, man):
    _require(args, "truth")
    model = _model(args)
    fits = io.read_fits(args.input)
    truth = dict(io.read_poses(args.truth))
    man.inputs += [args.input, args.truth]
    ids = sorted(fits)
    missing = [i for i in ids if i not in truth]
    if missing:
        raise ParameterError(f"no ground truth for frames {missing[:5]}")
    if not ids:
        raise ParameterError("no fit results to evaluate")
    gt = np.array([posed_joints(model, truth[i]) for i in ids])
    est = np.array([posed_joints(model, fits[i][0]) for i in ids])
    gt_rot = np.array([rodrigues(w) for i in ids for w in truth[i].theta])
    est_rot = np.array([rodrigues(w) for i in ids for w in fits[i][0].theta])
    rep = evaluate(gt, est, gt_rot, est_rot)
    modes = sorted({r.get("mode", "unknown") for _, r in fits.values()})
    man.stage("evaluate")
    io.write_json(args.output, {"dataset": args.dataset, "mode": "+".join(modes),
                                "frames": len(ids), **rep.to_dict()})
    man.outputs.append(args.output)


# ----------------------------------------------------------------- report

def report_rows(reports):
    rows = []
    for r in reports:
        for metric in REPORT_METRICS:
            if r.get(metric) is not None:
                rows.append({"dataset": r["dataset"], "mode": r["mode"], "metric": metric,
                             "value": repr(float(r[metric]))})
    return rows


def report_csv(reports):
    buf = _stdio.StringIO()
    w = csv.DictWriter(buf, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(report_rows(reports))
    return buf.getvalue()


def parse_report_csv(text):
    """{(dataset, mode): {metric: value}} from :func:`report_csv` output."""
    out = {}
    for row in csv.DictReader(_stdio.StringIO(text)):
        out.setdefault((row["dataset"], row["mode"]), {})[row["metric"]] = float(row["value"])
    return out


def cmd_report(args, man):
    paths = list(args.input)
    if not paths:
        raise ParameterError("report needs at least one eval output")
    reports = [io.read_json(p) for p in paths]
    man.inputs += paths
    io.atomic_write_text(args.output, report_csv(reports))
    man.outputs.append(args.output)


# ---------------------------------------------------------------- capture

def default_rig(n=3, distance=2.6, focal=900.0, height=1.0):
    """Sensors evenly spaced on a circle, all aimed at the volume center."""
    out = []
    for k in range(n):
        a = 2 * np.pi * k / n
        eye = (distance * np.sin(a), height + 0.4, distance * np.cos(a))
        out.append(Sensor.looking_at(eye, (0.0, height, 0.0), intrinsics(focal, 1280, 960)))
    return out


def _rig(args):
    return io.read_rig(args.rig) if args.rig else default_rig()


def cmd_capture(args, man):
    out = Path(args.output)
    if args.action == "simulate":
        frames = io.read_frames(args.input)
        man.inputs.append(args.input)
        sensors = _rig(args)
        sim = _build(SimConfig, _section(args, "capture"))
        out.mkdir(parents=True, exist_ok=True)
        io.write_rig(out / "rig.json", sensors)
        for f in frames:
            for k, s in enumerate(sensors):
                sf, _ = simulate_sensor(f.points, s, sim, rng_for(args.seed, f"capture-{k}", f.frame_id),
                                        float(f.frame_id))
                io.write_sensor_frame(out / f"frame_{f.frame_id:06d}_sensor_{k}.bin", sf, k)
        if args.wand:
            io.write_json(out / "wand_tracks.json", _wand_tracks(sensors, args))
        man.stage("simulate")
        man.outputs.append(str(out))
    elif args.action == "extract":
        src = Path(args.input)
        sensors = io.read_rig(args.rig or src / "rig.json")
        by_frame = {}
        for p in sorted(src.glob("frame_*_sensor_*.bin")):
            parts = p.stem.split("_")
            by_frame.setdefault(int(parts[1]), []).append(p)
        frames = []
        for fid, paths in sorted(by_frame.items()):
            obs = []
            for p in paths:
                k, sf = io.read_sensor_frame(p, float(fid))
                obs += observe(sf, sensors[k], k)
            frames.append(fuse_and_cluster(obs, args.radius, fid))
        man.stage("extract")
        io.write_frames(out, frames)
        man.inputs.append(str(src))
        man.outputs.append(str(out))
    else:
        data = io.read_json(args.input)
        man.inputs.append(args.input)
        tracks = [{float(t): np.asarray(p, dtype=float) for t, p in tr.items()} for tr in data["tracks"]]
        res = calibrate_wand(tracks)
        base = io.read_rig(args.rig) if args.rig else [None] * len(tracks)
        sensors = []
        for k, (R, t) in enumerate(zip(res.rotations, res.translations)):
            K = base[k].K if base[k] is not None else intrinsics(900.0, 1280, 960)
            sensors.append(Sensor(K, R, t))
        man.stage("calibrate")
        io.write_rig(out, sensors, {"cost_history": [float(c) for c in res.cost_history],
                                    "converged": bool(res.converged)})
        man.outputs.append(str(out))


def _wand_tracks(sensors, args):
    """Wand marker positions seen by each sensor, in that sensor's frame.

    Tracks come straight from the geometry with Gaussian noise rather than
    through rendered images, so they exercise calibration in isolation.
    """
    rng = rng_for(args.seed, "wand", 0)
    X = rng.uniform((-0.8, 0.3, -0.8), (0.8, 1.8, 0.8), (args.wand, 3))
    tracks = []
    for k, s in enumerate(sensors):
        r = rng_for(args.seed, f"wand-{k}", 0)
        local = s.to_sensor(X) + r.normal(0.0, args.wand_noise, X.shape)
        tracks.append({repr(float(t)): p.tolist() for t, p in enumerate(local)})
    return {"tracks": tracks, "truth": [s.to_dict() for s in sensors]}


# ------------------------------------------------------------------ parser

def _common(input_nargs=None):
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", help="model JSON path or desk:<layout> (default desk:53_18)")
    common.add_argument("--config", help="JSON settings, flat or sectioned by command")
    common.add_argument("--input", nargs=input_nargs, help="input file(s) or directory")
    common.add_argument("--output", required=True, help="output file or directory")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    common.add_argument("--mode", help="command-specific mode")
    return common


def build_parser():
    common = _common()

    p = argparse.ArgumentParser(prog="mocapsolve")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="poses -> marker frames")
    s.add_argument("--count", type=int, default=0, help="random poses when no --input")
    s.add_argument("--theta-range", type=float, default=0.5)
    s.add_argument("--poses-output")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("corrupt", parents=[common], help="augment and corrupt frames")
    s.add_argument("--poses", help="pose file enabling shape/flip resynthesis")
    s.add_argument("--poses-output")
    s.add_argument("--outlier-fraction", type=float, default=0.1)
    s.add_argument("--outlier-distance", type=float, default=0.2)
    s.set_defaults(func=cmd_corrupt)

    s = sub.add_parser("balance", parents=[common], help="anchors, tail samples, relevance")
    s.add_argument("action", choices=("anchors", "sample", "relevance"))
    s.add_argument("--ae", help="saved autoencoder JSON (default: PCA of the input poses)")
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--variant", default="exp1p")
    s.set_defaults(func=cmd_balance)

    s = sub.add_parser("render", parents=[common], help="two-view depth maps")
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("fit", parents=[common], help="fit the body model to frames")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("eval", parents=[common], help="score fits against ground truth")
    s.add_argument("--truth", help="ground-truth pose file")
    s.add_argument("--dataset", default="synthetic")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("capture", parents=[common], help="simulated depth-sensor capture")
    s.add_argument("action", choices=("simulate", "extract", "calibrate"))
    s.add_argument("--rig", help="rig JSON (default: 3 sensors on a 2.6 m circle)")
    s.add_argument("--radius", type=float, default=0.01)
    s.add_argument("--wand", type=int, default=0, help="also write this many wand samples")
    s.add_argument("--wand-noise", type=float, default=0.0)
    s.set_defaults(func=cmd_capture)

    s = sub.add_parser("report", parents=[_common("+")], help="eval reports -> flat CSV")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=os.environ.get(LOG_ENV, "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command not in ("synth",) and not args.input:
        print("error: --input is required", file=sys.stderr)
        return 2
    man = io.RunManifest(command=" ".join([args.command] + ([args.action] if hasattr(args, "action") else [])),
                         seed=args.seed, version=__version__,
                         config_paths=[args.config] if args.config else [])
    try:
        args.func(args, man)
    except (ParameterError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    man.write(_manifest_path(args.output))
    return 0


if __name__ == "__main__":
    sys.exit(main())
