"""Command-line entry point: ``posetok <command> [options]``.

Every command accepts ``--seed``, ``--out``, ``--config`` and ``--threads``.
Options come from built-in defaults, then the JSON object in ``--config``,
then flags given on the command line. The resolved set is written to
``<out>/resolved-config.json`` and replaying it with ``--config`` repeats
the run exactly.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

import argparse
import csv
import json
import logging
import sys
from pathlib import Path


from . import biaslab, rotmath, tals
from .camera import FixedFocalCamera, matched_camera
from .errors import PosetokError
from .kinematics import default_skeleton
from .tokenizer import data as tokdata
from .tokenizer.model import TokenizerConfig
from .tokenizer.train import evaluate, load_tokenizer, save_tokenizer, split_dataset, train_tokenizer

log = logging.getLogger("posetok")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

COMMON_DEFAULTS = {"seed": 0, "out": "run", "threads": 1}

DEFAULTS = {
    "gen-data": {"n": 5000, "format": "ptk"},
    "train-tokenizer": {
        "data": None,
        "data_seed": 0,
        "synth_size": 5000,
        "val_fraction": 0.1,
        "iters": 20000,
        "tokenizer": {},
    },
    "eval-tokenizer": {"checkpoint": None, "data": None, "data_seed": 0, "synth_size": 5000, "val_fraction": 0.1},
    "tals-thresholds": {
        "mode": "2d",
        "scenes": 200,
        "camera": "fixed",
        "pred": None,
        "gt": None,
        "validate": None,
    },
    "bias mismatch": {"scenes": 200, "camera": "fixed", "focal_multiplier": None},
    "bias attack": {
        "scenes": 1,
        "iters": 200,
        "w2d": 4.0,
        "w3d": 40.5,
        "margin": 20.0,
        "step_size": 1e-2,
        "decay": 0.999,
        "unfloored": False,
        "svg": True,
    },
}


class UsageError(Exception):
    pass


# -- parsing ------------------------------------------------------------------
def _common(p):
    # defaults are None so that only flags actually given override the config file
    p.add_argument("--seed", type=int, help="random seed (default 0)")
    p.add_argument("--out", help="output directory (default ./run)")
    p.add_argument("--config", help="JSON file of option values; flags take precedence")
    p.add_argument("--threads", type=int, help="worker cap; commands run single-threaded (default 1)")


def build_parser():
    parser = argparse.ArgumentParser(prog="posetok", description="Pose tokenizer and camera-bias experiments.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic pose dataset")
    _common(p)
    p.add_argument("--n", type=int, help="number of poses (default 5000)")
    p.add_argument("--format", choices=["ptk", "jsonl"], help="file format (default ptk)")

    p = sub.add_parser("train-tokenizer", help="train the pose VQ-VAE")
    _common(p)
    p.add_argument("--data", help="'synth' or a PTK1 / JSON-lines pose file")
    p.add_argument("--data-seed", type=int, help="seed of the synthetic manifold (default 0)")
    p.add_argument("--synth-size", type=int, help="poses drawn when --data synth (default 5000)")
    p.add_argument("--val-fraction", type=float, help="held-out fraction (default 0.1)")
    p.add_argument("--iters", type=int, help="training iterations (default 20000)")
    p.add_argument("--codebook-size", type=int, help="number of codes K")
    p.add_argument("--tokens", type=int, help="number of tokens M")
    p.add_argument("--code-dim", type=int, help="code dimension")
    p.add_argument("--width", type=int, help="convolution channels")
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float, help="learning rate")
    p.add_argument("--no-reset", action="store_true", default=None, help="disable dead-code reset")
    p.add_argument("--no-noise", action="store_true", default=None, help="disable input noise")
    p.add_argument("--log-every", type=int)

    p = sub.add_parser("eval-tokenizer", help="evaluate a tokenizer checkpoint")
    _common(p)
    p.add_argument("--checkpoint", help="checkpoint manifest (.json)")
    p.add_argument("--data", help="'synth', 'synth-train', 'synth-val' or a pose file")
    p.add_argument("--data-seed", type=int)
    p.add_argument("--synth-size", type=int)
    p.add_argument("--val-fraction", type=float)

    p = sub.add_parser("tals-thresholds", help="estimate or validate loss-scaling thresholds")
    _common(p)
    p.add_argument("--mode", choices=["2d", "pose"], help="2D keypoint or pose thresholds (default 2d)")
    p.add_argument("--scenes", type=int, help="synthetic scenes for --mode 2d (default 200)")
    p.add_argument("--camera", choices=["fixed", "matched"], help="wrong-camera model (default fixed)")
    p.add_argument("--pred", help="predicted poses for --mode pose")
    p.add_argument("--gt", help="ground-truth poses for --mode pose")
    p.add_argument("--validate", help="only check a thresholds file and exit")

    bias = sub.add_parser("bias", help="camera-bias experiments")
    bsub = bias.add_subparsers(dest="experiment", required=True)
    p = bsub.add_parser("mismatch", help="PCK of ground-truth bodies seen through a wrong camera")
    _common(p)
    p.add_argument("--scenes", type=int, help="number of scenes (default 200)")
    p.add_argument("--camera", choices=["fixed", "matched"])
    p.add_argument("--focal-multiplier", type=float, help="wrong focal as a multiple of the true one")
    p = bsub.add_parser("attack", help="keep 2D aligned while pushing 3D away")
    _common(p)
    p.add_argument("--scenes", type=int, help="number of scenes (default 1)")
    p.add_argument("--iters", type=int, help="iterations (default 200)")
    p.add_argument("--w2d", type=float)
    p.add_argument("--w3d", type=float)
    p.add_argument("--margin", type=float)
    p.add_argument("--step-size", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--unfloored", action="store_true", default=None, help="drop the hinge")
    p.add_argument("--no-svg", dest="svg", action="store_false", default=None)
    return parser


_TOKENIZER_FLAGS = {
    "codebook_size": "codebook_size",
    "tokens": "num_tokens",
    "code_dim": "code_dim",
    "width": "width",
    "batch_size": "batch_size",
    "lr": "learning_rate",
    "log_every": "log_every",
}


def resolve(args):
    """Merge defaults, the config file and explicit flags into one dict."""
    command = args.command if args.command != "bias" else f"bias {args.experiment}"
    resolved = dict(COMMON_DEFAULTS)
    resolved.update(json.loads(json.dumps(DEFAULTS[command])))
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                doc = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(doc, dict):
            raise UsageError("config file must hold a JSON object")
        doc.pop("command", None)
        unknown = set(doc) - set(resolved)
        if unknown:
            raise UsageError(f"unknown config keys for {command}: {sorted(unknown)}")
        resolved.update(doc)
    flags = {k: v for k, v in vars(args).items() if v is not None}
    for key in ("command", "experiment", "config", "verbose"):
        flags.pop(key, None)
    if command == "train-tokenizer":
        tok = dict(resolved.get("tokenizer", {}))
        for flag, field_name in _TOKENIZER_FLAGS.items():
            if flag in flags:
                tok[field_name] = flags.pop(flag)
        if flags.pop("no_reset", None):
            tok["code_reset"] = False
        if flags.pop("no_noise", None):
            tok["noise"] = False
        resolved["tokenizer"] = tok
    resolved.update(flags)
    resolved["command"] = command
    return resolved


# -- helpers ------------------------------------------------------------------
def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "resolved-config.json", cfg)
    return out


def _load_dataset(cfg):
    data = cfg["data"]
    if data is None:
        raise UsageError("--data is required")
    if data.startswith("synth"):
        poses = tokdata.synthetic_pose_manifold(cfg["synth_size"], seed=cfg["data_seed"])
        poses6d = tokdata.to_rot6d(poses)
        train, val = split_dataset(poses6d, cfg["val_fraction"], cfg["data_seed"])
        return {"synth": (train, val), "synth-train": (train, train), "synth-val": (val, val)}.get(data, (train, val))
    poses6d = tokdata.to_rot6d(tokdata.load_poses(data))
    return split_dataset(poses6d, cfg["val_fraction"], cfg["seed"])


def _wrong_camera(name, focal_multiplier=None):
    if name == "matched":
        return matched_camera
    return FixedFocalCamera(focal_multiplier=focal_multiplier)


# -- commands -----------------------------------------------------------------
def cmd_gen_data(cfg):
    out = _out_dir(cfg)
    if cfg["n"] < 1:
        raise UsageError("--n must be positive")
    poses = tokdata.synthetic_pose_manifold(cfg["n"], seed=cfg["seed"])
    if cfg["format"] == "ptk":
        tokdata.write_ptk(out / "poses.ptk", poses)
    else:
        tokdata.write_jsonl(out / "poses.jsonl", poses)
    return EXIT_OK


def cmd_train_tokenizer(cfg):
    if cfg["data"] is None:
        raise UsageError("--data is required")
    tok = dict(cfg["tokenizer"])
    tok["iterations"] = cfg["iters"]
    tok["seed"] = cfg["seed"]
    model_cfg = TokenizerConfig.from_dict(tok)
    train, val = _load_dataset(cfg)
    out = _out_dir(cfg)
    skel = default_skeleton()

    def progress(row):
        log.info("iter %d loss %.5f val_geodesic %s", row["iter"], row["total"], row.get("val_geodesic", ""))

    result = train_tokenizer(train, model_cfg, skel, val, log_path=out / "train_log.csv", progress=progress)
    save_tokenizer(result.model, out / "tokenizer.json")
    summary = {
        "initial_val_geodesic": result.initial_val_geodesic,
        "final": result.final,
        "final_loss": result.history[-1]["total"] if result.history else None,
        "num_train": int(len(train)),
        "num_val": int(len(val)),
    }
    _write_json(out / "summary.json", summary)
    return EXIT_OK


def cmd_eval_tokenizer(cfg):
    if cfg["checkpoint"] is None:
        raise UsageError("--checkpoint is required")
    if cfg["data"] is None:
        raise UsageError("--data is required")
    model, _ = load_tokenizer(cfg["checkpoint"])
    _, val = _load_dataset(cfg)
    out = _out_dir(cfg)
    report = evaluate(model, val, default_skeleton())
    report["num_poses"] = int(len(val))
    _write_json(out / "report.json", report)
    return EXIT_OK


def cmd_tals_thresholds(cfg):
    if cfg["validate"]:
        th = tals.TalsThresholds.load(cfg["validate"])
        print(f"{cfg['validate']}: {len(th.eps_2d)} 2D and {len(th.eps_pose)} pose thresholds, valid")
        return EXIT_OK
    skel = default_skeleton()
    if cfg["mode"] == "pose":
        if not cfg["pred"] or not cfg["gt"]:
            raise UsageError("--mode pose needs --pred and --gt")
        pred = tokdata.load_poses(cfg["pred"])
        gt = tokdata.load_poses(cfg["gt"])
        if pred.shape[1] != skel.num_joints - 1:
            raise UsageError(f"poses have {pred.shape[1]} joints, the skeleton expects {skel.num_joints - 1}")
        out = _out_dir(cfg)
        eps = tals.estimate_thresholds_pose(rotmath.aa_to_rotmat(pred), rotmath.aa_to_rotmat(gt))
        th = tals.TalsThresholds(eps_pose=eps)
        report = {"num_pairs": int(len(pred))}
    else:
        scenes = biaslab.generate_scenes(cfg["scenes"], cfg["seed"], skel)
        out = _out_dir(cfg)
        est = tals.estimate_thresholds_2d(
            [s.gt_pose for s in scenes],
            [s.gt_cam for s in scenes],
            _wrong_camera(cfg["camera"]),
            skel,
            [s.image_size for s in scenes],
        )
        th = tals.TalsThresholds(eps_2d=est.eps)
        report = {"num_scenes": est.num_scenes, "skipped": est.skipped}
    th.save(out / "thresholds.json")
    _write_json(out / "report.json", report)
    return EXIT_OK


def cmd_bias_mismatch(cfg):
    if cfg["scenes"] < 1:
        raise UsageError("--scenes must be positive")
    skel = default_skeleton()
    scenes = biaslab.generate_scenes(cfg["scenes"], cfg["seed"], skel)
    out = _out_dir(cfg)
    report = biaslab.camera_mismatch_experiment(scenes, _wrong_camera(cfg["camera"], cfg["focal_multiplier"]), skel)
    _write_json(out / "mismatch.json", report.to_json())
    with open(out / "per_joint.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["joint", "error_px"])
        for name, err in report.per_joint_error_px.items():
            writer.writerow([name, repr(err)])
    return EXIT_OK


def cmd_bias_attack(cfg):
    if cfg["scenes"] < 1:
        raise UsageError("--scenes must be positive")
    attack_cfg = biaslab.AttackConfig(
        w_2d=cfg["w2d"],
        w_3d=cfg["w3d"],
        margin=cfg["margin"],
        iterations=cfg["iters"],
        step_size=cfg["step_size"],
        decay=cfg["decay"],
        unfloored=cfg["unfloored"],
    )
    skel = default_skeleton()
    scenes = biaslab.generate_scenes(cfg["scenes"], cfg["seed"], skel)
    out = _out_dir(cfg)
    results = []
    for i, scene in enumerate(scenes):
        res = biaslab.adversarial_attack(scene, attack_cfg, skel)
        results.append(res)
        name = "trajectory.csv" if len(scenes) == 1 else f"trajectory_{i:03d}.csv"
        biaslab.write_trajectory_csv(out / name, res)
        if cfg["svg"] and res.trajectory:
            svg = biaslab.svg_polyline_plot(
                {"MPJPE vs 2D error": (res.column("err2d"), res.column("mpjpe"))},
                title=f"scene {i}: 2D alignment vs 3D error",
                xlabel="mean 2D error (image widths)",
                ylabel="MPJPE (mm)",
            )
            (out / name.replace(".csv", ".svg")).write_text(svg, encoding="utf-8")
    checkpoints = tuple(c for c in (100, 200) if c <= attack_cfg.iterations) or (attack_cfg.iterations,)
    summary = biaslab.attack_summary(results, checkpoints=checkpoints)
    _write_json(out / "summary.json", summary)
    return EXIT_OK if not any(r.aborted for r in results) else EXIT_FAILURE


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-tokenizer": cmd_train_tokenizer,
    "eval-tokenizer": cmd_eval_tokenizer,
    "tals-thresholds": cmd_tals_thresholds,
    "bias mismatch": cmd_bias_mismatch,
    "bias attack": cmd_bias_attack,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve(args)
        return COMMANDS[cfg["command"]](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"posetok: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (PosetokError, OSError, ValueError, KeyError) as exc:
        print(f"posetok: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
