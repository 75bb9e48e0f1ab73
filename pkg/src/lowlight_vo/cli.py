"""Command-line entry point: ``lowlight-vo <command> ...``.

Commands compose through files only. Data goes to files (and to stdout with
``--json``); logs go to stderr.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import formats, imu, metrics, pgo, sim, vonet
from .config import ConfigError, PipelineConfig, default_config_json, load_config
from .geometry import Pose, compose, relative_pose
from .gradcheck import run_gradcheck

log = logging.getLogger("lowlight_vo")


class CliError(Exception):
    pass


def _clean(obj):
    """Make a report JSON-safe: NaN/inf -> null, numpy -> builtin."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _emit(args, payload: dict) -> None:
    if args.json:
        sys.stdout.write(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")


def _config(args) -> PipelineConfig:
    return load_config(args.config) if getattr(args, "config", None) else PipelineConfig()


def _require(path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError(f"{p}: {what} not found")
    return p


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_simulate(args) -> dict:
    cfg = _config(args)
    scen = cfg.scenario()
    overrides = {}
    if args.drift is not None:
        d = list(scen.vo_drift)
        d[3] = args.drift
        overrides["vo_drift"] = tuple(d)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        scen = dataclasses.replace(scen, **overrides)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    gt = sim.gen_ground_truth(scen)
    vo = sim.chain_motions(sim.gen_vo(gt, scen))
    series = sim.gen_imu(scen)
    fixes = sim.gen_gnss(scen)
    formats.write_pose_file(gt, out / "gt.txt")
    formats.write_pose_file(vo, out / "vo.txt")
    formats.write_times_file(gt.timestamps, out / "times.txt")
    formats.write_imu_csv(out / "imu.csv", series.t, series.accel, series.gyro)
    formats.write_gnss_csv(out / "gnss.csv", fixes)
    formats.dump_json(
        {
            "version": 1,
            "initial_velocity": [float(x) for x in series.initial_velocity],
            "gravity_compensation": scen.gravity_compensation,
        },
        out / "init.json",
    )
    n_frames = 0
    if args.frames:
        fdir = out / "frames"
        fdir.mkdir(exist_ok=True)
        tex = sim._texture(scen)
        for k, p in enumerate(gt):
            formats.write_pnm(fdir / f"{k:06d}.ppm", sim.render_frame(scen, p, tex))
            n_frames += 1
    log.info("simulated %d keyframes, %d IMU samples into %s", len(gt), len(series), out)
    return {"keyframes": len(gt), "imu_samples": len(series), "gnss_fixes": len(fixes), "frames": n_frames, "out": str(out)}


def _read_init(path) -> tuple[np.ndarray, bool]:
    p = _require(path, "initial-state file")
    try:
        d = json.loads(p.read_text())
        return np.asarray(d["initial_velocity"], dtype=np.float64).reshape(3), bool(d.get("gravity_compensation", False))
    except KeyError as exc:
        raise CliError(f"{p}: missing field {exc.args[0]}") from None
    except (ValueError, TypeError) as exc:
        raise CliError(f"{p}: field initial_velocity: {exc}") from None


def cmd_preintegrate(args) -> dict:
    cfg = _config(args)
    t, acc, gyr = formats.read_imu_csv(_require(args.imu, "IMU CSV"))
    times = formats.read_times_file(_require(args.times, "keyframe times file"))
    if args.init:
        v0, gravity = _read_init(args.init)
    else:
        v0, gravity = np.zeros(3), cfg.imu.gravity_compensation
    try:
        motions = imu.preintegrate_between(t, acc, gyr, times)
    except ValueError as exc:
        raise CliError(f"{args.imu}: {exc}") from None
    formats.dump_json(formats.motions_to_dict(motions, v0, gravity), args.out)
    return {"motions": len(motions), "out": str(args.out)}


def cmd_refine(args) -> dict:
    cfg = _config(args)
    vo_traj = formats.read_pose_file(_require(args.vo, "VO pose file"))
    mpath = _require(args.motions, "motions file")
    try:
        mdata = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{mpath}: invalid JSON ({exc.msg})") from None
    motions, v0, gravity = formats.motions_from_dict(mdata, mpath)
    if len(motions) != len(vo_traj) - 1:
        raise CliError(
            f"{mpath}: field motions: {len(motions)} entries but {args.vo} implies {len(vo_traj) - 1}"
        )
    imu_traj = imu.chain_to_world(motions, Pose.identity(), v0, gravity_compensation=gravity)
    if args.gnss:
        fixes = formats.read_gnss_csv(_require(args.gnss, "GNSS CSV"))
        imu_traj = imu.apply_gnss_correction(imu_traj, fixes, cfg.imu.gnss_drift_rate)
    imu_rel = [relative_pose(imu_traj[k], imu_traj[k + 1]) for k in range(len(imu_traj) - 1)]
    vo_rel = [relative_pose(vo_traj[k], vo_traj[k + 1]) for k in range(len(vo_traj) - 1)]
    lam = cfg.pgo.lam if args.lam is None else args.lam
    graph = pgo.build_graph(vo_rel, imu_rel, lam, cfg.pgo.information_scale * np.eye(6))
    if args.graph:
        pgo.dump_graph(graph, args.graph)
    nodes, report = pgo.lm_solve(graph, cfg.lm)
    anchor = vo_traj[0]
    refined = [compose(anchor, n) for n in nodes]
    formats.write_pose_file(refined, args.out)
    payload = {"version": 1, "lambda": lam, "nodes": len(nodes), "edges": len(graph.edges), **report.to_dict()}
    if args.report:
        formats.dump_json(_clean(payload), args.report)
    log.info("refine: %s after %d iterations, cost %.6g -> %.6g",
             report.termination, report.iterations, report.initial_cost, report.final_cost)
    return payload


def evaluation_report(est, gt, cfg: PipelineConfig) -> tuple[dict, object]:
    rep = {"version": 1, "poses": len(est), "ate": metrics.ate(est, gt, align=False)}
    aligned = None
    try:
        se3 = metrics.umeyama_align(est, gt, with_scale=False, max_dt=cfg.eval.max_dt)
        sim3 = metrics.umeyama_align(est, gt, with_scale=True, max_dt=cfg.eval.max_dt)
        rep["ate_se3"] = se3.rmse_after
        rep["ate_sim3"] = sim3.rmse_after
        rep["alignment"] = {
            "scale": sim3.scale,
            "rotation": sim3.rotation.reshape(-1),
            "translation": sim3.translation,
        }
        aligned = sim3.apply(est)
    except metrics.DegenerateInputError as exc:
        log.warning("alignment skipped: %s", exc)
        rep["ate_se3"] = rep["ate_sim3"] = None
        rep["alignment"] = None
    delta = cfg.eval.rpe_delta
    if len(gt) > delta:
        t_err, r_err = metrics.rpe(est, gt, delta)
        rep["rpe"] = {"delta": delta, "trans": t_err, "rot": r_err}
    else:
        rep["rpe"] = None
    seg = metrics.segment_errors(est, gt, cfg.eval.segment_lengths)
    rep["segments"] = {
        "t_rel": seg.t_rel,
        "r_rel": seg.r_rel,
        "count": seg.n_segments,
        "per_length": {f"{k:g}": {"t_rel": v[0], "r_rel": v[1]} for k, v in seg.per_length.items()},
    }
    return _clean(rep), aligned


def cmd_evaluate(args) -> dict:
    cfg = _config(args)
    times = formats.read_times_file(_require(args.times, "times file")) if args.times else None
    est = formats.read_pose_file(_require(args.est, "estimate pose file"), times, role="estimate")
    gt = formats.read_pose_file(_require(args.gt, "ground-truth pose file"), times, role="groundtruth")
    if len(est) != len(gt):
        raise CliError(f"{args.est}: {len(est)} poses but {args.gt} has {len(gt)}")
    rep, aligned = evaluation_report(est, gt, cfg)
    formats.dump_json(rep, args.out)
    if args.csv:
        formats.write_aligned_csv(args.csv, aligned if aligned is not None else est)
    return rep


def cmd_infer(args) -> dict:
    fdir = _require(args.frames, "frame directory")
    paths = sorted(p for p in fdir.iterdir() if p.suffix.lower() in (".ppm", ".pgm"))
    if len(paths) < 2:
        raise CliError(f"{fdir}: need at least two .ppm/.pgm frames")
    wpath = _require(args.weights, "weight file")
    _require(vonet.manifest_path(wpath), "weight manifest")
    w = vonet.load_weights(wpath)
    frames = [formats.read_pnm(p) for p in paths]
    poses = [Pose.identity()]
    for a, b in zip(frames[:-1], frames[1:]):
        poses.append(compose(poses[-1], vonet.vonet_infer(a, b, w)))
    formats.write_pose_file(poses, args.out)
    return {"frames": len(frames), "out": str(args.out)}


def cmd_init_weights(args) -> dict:
    cfg = _config(args)
    w = vonet.zero_weights(cfg.model) if args.zero else vonet.init_weights(cfg.model, cfg.model_seed)
    vonet.save_weights(w, args.out)
    return {"out": str(args.out), "manifest": str(vonet.manifest_path(args.out)), "zero": bool(args.zero)}


def cmd_gradcheck(args) -> dict:
    res = run_gradcheck(args.instances, args.seed, args.step)
    ok = res.passed(args.tol)
    print(
        f"gradcheck: {res.instances} instances, max relative error {res.max_rel_error:.3e} "
        f"(tol {args.tol:g}) -> {'PASS' if ok else 'FAIL'}",
        file=sys.stderr,
    )
    payload = {"instances": res.instances, "max_rel_error": res.max_rel_error, "tol": args.tol, "passed": ok}
    if not ok:
        raise CliError(f"gradient check failed: worst entry {res.worst[1]} in instance {res.worst[0]}")
    return payload


def cmd_default_config(args) -> dict:
    text = default_config_json()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return {}


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lowlight-vo", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(func=fn)
        sp.add_argument("--json", action="store_true", help="print a JSON summary on stdout")
        return sp

    s = add("simulate", cmd_simulate, "generate a synthetic scenario")
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--drift", type=float, help="VO forward drift per step (m), overrides config")
    s.add_argument("--seed", type=int, help="override sim seed")
    s.add_argument("--frames", action="store_true", help="also render PPM frames")

    s = add("preintegrate", cmd_preintegrate, "IMU CSV -> per-keyframe pre-integrated motions")
    s.add_argument("--config")
    s.add_argument("--imu", required=True)
    s.add_argument("--times", required=True, help="keyframe timestamps, one per line")
    s.add_argument("--init", help="init.json with initial velocity / gravity flag")
    s.add_argument("--out", required=True)

    s = add("refine", cmd_refine, "pose-graph refinement of a VO chain with IMU motions")
    s.add_argument("--config")
    s.add_argument("--vo", required=True)
    s.add_argument("--motions", required=True)
    s.add_argument("--gnss")
    s.add_argument("--lambda", dest="lam", type=float)
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.add_argument("--graph", help="also dump the pose graph as JSON")

    s = add("evaluate", cmd_evaluate, "ATE / RPE / segment errors of est against gt")
    s.add_argument("--config")
    s.add_argument("--est", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--times")
    s.add_argument("--out", required=True)
    s.add_argument("--csv", help="aligned trajectory CSV")

    s = add("infer", cmd_infer, "run the pose regressor over a directory of frames")
    s.add_argument("--frames", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--out", required=True)

    s = add("init-weights", cmd_init_weights, "write seeded (or all-zero) model weights")
    s.add_argument("--config")
    s.add_argument("--zero", action="store_true")
    s.add_argument("--out", required=True)

    s = add("gradcheck", cmd_gradcheck, "finite-difference check of attention gradients")
    s.add_argument("--instances", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--step", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-4)

    s = add("default-config", cmd_default_config, "print the default config JSON")
    s.add_argument("--out")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        payload = args.func(args)
    except (CliError, ConfigError, formats.FormatError) as exc:
        print(f"lowlight-vo {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"lowlight-vo {args.command}: error: {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"lowlight-vo {args.command}: error: {exc}", file=sys.stderr)
        return 2
    _emit(args, payload)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
