"""Command-line pipeline: generate, auto-label, train, infer, evaluate, render.

Exit codes: 0 success, 1 usage error, 2 data error, 3 check failure. Every
command is deterministic given its flags; all artifact writes are atomic.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import autolabel, metrics, model as model_mod, nnet, synthworld, trainer
from .grids import Label, LabelMap, Role
from .model import FusionConfig, load_checkpoint, save_checkpoint
from .pgmio import atomic_write_bytes, read_pgm, write_pgm, write_ppm

MANIFEST_VERSION = 1

LABEL_COLORS = {
    Label.UNK: (0, 0, 0),  # black
    Label.DRI: (0, 255, 0),  # green
    Label.OBS: (255, 0, 0),  # red
    Label.GRE: (255, 255, 0),  # yellow
}
PATH_OVERLAY_COLOR = (0, 0, 255)


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 1, not argparse's 2
        raise UsageError(message)


def _write_json(path: Path, payload) -> None:
    atomic_write_bytes(path, json.dumps(payload, sort_keys=True, indent=2).encode("utf-8"))


def _load_manifest(data_dir: Path) -> dict:
    manifest_path = data_dir / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"{manifest_path}: missing manifest")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("version") != MANIFEST_VERSION:
        raise DataError(f"{manifest_path}: unsupported manifest version")
    return manifest


def _scene_dirs(data_dir: Path, manifest: dict) -> list[Path]:
    return [data_dir / name for name in manifest["scenes"]]


def cmd_synth_gen(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).generate_state(max(args.scenes, 1), np.uint64)
    names = []
    for i in range(args.scenes):
        spec = synthworld.SceneSpec(
            seed=int(seeds[i]),
            rows=args.rows,
            cols=args.cols,
            resolution=args.res,
            road_width=args.road_width,
            grey_width=args.grey_width,
            obstacle_density=args.obstacle_density,
            terrain_roughness=args.terrain_roughness,
            curve_amplitude=args.curve_amplitude,
        )
        name = f"scene_{i:04d}"
        synthworld.save_scene(out / name, synthworld.generate_scene(spec))
        names.append(name)
    manifest = {
        "version": MANIFEST_VERSION,
        "scenes": names,
        "grid": {"rows": args.rows, "cols": args.cols, "resolution": args.res},
        "provenance": {
            "seed": args.seed,
            "road_width": args.road_width,
            "grey_width": args.grey_width,
            "obstacle_density": args.obstacle_density,
            "terrain_roughness": args.terrain_roughness,
            "curve_amplitude": args.curve_amplitude,
        },
    }
    _write_json(out / "manifest.json", manifest)
    print(f"wrote {args.scenes} scenes to {out}")
    return 0


def cmd_autolabel(args) -> int:
    data = Path(args.data)
    manifest = _load_manifest(data)
    params = autolabel.RegionGrowParams(
        t_h=args.t_h, t_a=args.t_a, seed_interval=(args.seed_lo, args.seed_hi)
    )
    for scene_dir in _scene_dirs(data, manifest):
        if not (scene_dir / "trajectory.json").exists():
            raise DataError(f"{scene_dir}: missing trajectory.json")
        rec = synthworld.load_scene(scene_dir)
        hm = rec.heightmap
        vp = autolabel.project_vehicle_path(rec.trajectory, args.vehicle_width, hm.rows, hm.cols, hm.resolution)
        try:
            rg = autolabel.region_grow(hm, params)
        except autolabel.NoSeedsError:
            print(f"warning: {scene_dir.name}: no region-grow seeds, path-only weak labels", file=sys.stderr)
            rg = autolabel.RegionGrowResult(frozenset(), frozenset())
        weak = autolabel.make_weak_labels(hm, rg, vp, use_rg_drivable=args.use_rg_drivable)
        write_pgm(scene_dir / "weak.pgm", weak.labels, 255)
    print(f"auto-labelled {len(manifest['scenes'])} scenes")
    return 0


def _load_train_scenes(data: Path, manifest: dict, need_weak: bool) -> list[trainer.TrainScene]:
    scenes = []
    for scene_dir in _scene_dirs(data, manifest):
        rec = synthworld.load_scene(scene_dir)
        weak = None
        weak_path = scene_dir / "weak.pgm"
        if weak_path.exists():
            codes, _ = read_pgm(weak_path)
            weak = LabelMap(codes, Role.WEAK)
        elif need_weak:
            raise DataError(f"{weak_path}: missing weak labels (run autolabel first)")
        scenes.append(trainer.TrainScene.from_record(rec, weak))
    return scenes


def cmd_train(args) -> int:
    data = Path(args.data)
    manifest = _load_manifest(data)
    mode = trainer.TrainMode(args.mode)
    cfg = trainer.TrainConfig(
        mode=mode,
        human_ratio=args.human_ratio,
        weak_weight=args.weak_weight,
        lr=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        seed=args.seed,
        augment=not args.no_augment,
        split=tuple(args.split),
        widths=tuple(args.widths),
        fusion=FusionConfig(args.alpha1, args.alpha2),
    )
    need_weak = mode in (trainer.TrainMode.WEAK, trainer.TrainMode.SEMI)
    scenes = _load_train_scenes(data, manifest, need_weak)
    result = trainer.train(scenes, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ratio = 0 if mode is trainer.TrainMode.WEAK else int(round(args.human_ratio * 100))
    ckpt = out / f"model_{mode.value}_{ratio:03d}.gzn"
    save_checkpoint(ckpt, result.model, result.fusion)
    lines = [json.dumps(rec, sort_keys=True) for rec in result.log]
    atomic_write_bytes(out / "training_log.jsonl", ("\n".join(lines) + "\n").encode("utf-8"))
    print(f"best epoch {result.best_epoch}; checkpoint {ckpt}")
    return 0


def cmd_infer(args) -> int:
    data = Path(args.data)
    manifest = _load_manifest(data)
    try:
        net, fusion = load_checkpoint(args.checkpoint)
    except (FileNotFoundError, model_mod.CheckpointError) as exc:
        raise DataError(str(exc)) from exc
    out = Path(args.out) if args.out else data
    for scene_dir in _scene_dirs(data, manifest):
        rec = synthworld.load_scene(scene_dir)
        cost, pred = net.predict(rec.heightmap, fusion)
        dest = out / scene_dir.name
        dest.mkdir(parents=True, exist_ok=True)
        write_pgm(dest / "cost.pgm", np.floor(cost.score * 65535.0 + 0.5).astype(np.uint16), 65535)
        write_pgm(dest / "pred.pgm", pred.labels, 255)
        write_pgm(dest / "s1.pgm", np.floor(cost.s1 * 65535.0 + 0.5).astype(np.uint16), 65535)
        write_pgm(dest / "s2.pgm", np.floor(cost.s2 * 65535.0 + 0.5).astype(np.uint16), 65535)
    print(f"inferred {len(manifest['scenes'])} scenes into {out}")
    return 0


def cmd_eval(args) -> int:
    data = Path(args.data)
    manifest = _load_manifest(data)
    pred_root = Path(args.pred) if args.pred else data
    per_scene = {}
    reports = []
    for scene_dir in _scene_dirs(data, manifest):
        pred_path = pred_root / scene_dir.name / "pred.pgm"
        if not pred_path.exists():
            raise DataError(f"{pred_path}: missing prediction")
        rec = synthworld.load_scene(scene_dir)
        codes, _ = read_pgm(pred_path)
        pred = LabelMap(codes, Role.PREDICTION)
        report = metrics.evaluate(pred, rec.human_gt, rec.path_mask)
        per_scene[scene_dir.name] = report.as_dict()
        reports.append(report)
    payload = {"scenes": per_scene, "macro": metrics.aggregate(reports)}
    _write_json(Path(args.out), payload)
    print(f"macro f1_dri={payload['macro']['f1_dri']:.4f} f1_obs={payload['macro']['f1_obs']:.4f}")
    return 0


def cmd_render(args) -> int:
    src = Path(args.infile)
    if not src.exists():
        raise DataError(f"{src}: no such file")
    arr, maxval = read_pgm(src)
    if args.kind == "label":
        rgb = np.zeros((*arr.shape, 3), dtype=np.uint8)
        for label, color in LABEL_COLORS.items():
            rgb[arr == label] = color
    else:  # cost or height: grayscale
        gray = np.floor(arr.astype(np.float64) / maxval * 255.0 + 0.5).astype(np.uint8)
        rgb = np.stack([gray, gray, gray], axis=2)
    if args.path_mask:
        mask, _ = read_pgm(args.path_mask)
        rgb[mask > 0] = PATH_OVERLAY_COLOR
    write_ppm(args.out, rgb)
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    net = model_mod.DualBranchModel.create(args.seed, widths=(3, 4, 4, 3))
    from .grids import HeightMap

    hmap = HeightMap(rng.integers(0, 256, (8, 8)), rng.random((8, 8)) > 0.2)
    human = LabelMap(rng.integers(0, 4, (8, 8)), Role.HUMAN_GT)
    weak = LabelMap(np.where(rng.random((8, 8)) > 0.5, rng.integers(1, 3, (8, 8)), 0), Role.WEAK)

    def loss_and_grad():
        net.zero_grads()
        ld, lo = net.branch_loss(hmap, human, weak, weak_weight=0.4)
        return ld + lo

    report = nnet.gradient_check(loss_and_grad, net.blocks(), tolerance=args.tolerance)
    status = "PASS" if report.passed else "FAIL"
    print(
        f"gradcheck {status}: max rel error {report.max_rel_error:.3e} over "
        f"{report.n_checked} parameters (tolerance {report.tolerance:g})"
    )
    return 0 if report.passed else 3


def build_parser() -> _Parser:
    parser = _Parser(prog="greyzone", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("synth-gen", help="generate a synthetic scene dataset")
    g.add_argument("--scenes", type=int, required=True)
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--rows", type=int, default=64)
    g.add_argument("--cols", type=int, default=64)
    g.add_argument("--res", type=float, default=0.2)
    g.add_argument("--road-width", type=float, default=3.0)
    g.add_argument("--grey-width", type=float, default=1.0)
    g.add_argument("--obstacle-density", type=float, default=4.0)
    g.add_argument("--terrain-roughness", type=float, default=0.3)
    g.add_argument("--curve-amplitude", type=float, default=1.5)
    g.set_defaults(func=cmd_synth_gen)

    a = sub.add_parser("autolabel", help="write weak labels for every scene")
    a.add_argument("--data", required=True)
    a.add_argument("--t-h", type=float, default=0.3, dest="t_h")
    a.add_argument("--t-a", type=float, default=0.6, dest="t_a")
    a.add_argument("--seed-lo", type=float, default=-0.3)
    a.add_argument("--seed-hi", type=float, default=0.3)
    a.add_argument("--vehicle-width", type=float, default=synthworld.VEHICLE_WIDTH)
    a.add_argument("--use-rg-drivable", action="store_true")
    a.set_defaults(func=cmd_autolabel)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--mode", choices=[m.value for m in trainer.TrainMode], required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--human-ratio", type=float, default=1.0)
    t.add_argument("--weak-weight", type=float, default=0.4)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--batch-size", type=int, default=16)
    t.add_argument("--epochs", type=int, default=50)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--split", type=float, nargs=3, default=[0.60, 0.15, 0.25],
                   metavar=("TRAIN", "VAL", "TEST"))
    t.add_argument("--widths", type=int, nargs=4, default=list(model_mod.DEFAULT_WIDTHS))
    t.add_argument("--alpha1", type=float, default=0.5)
    t.add_argument("--alpha2", type=float, default=0.5)
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="write cost/pred/s1/s2 grids per scene")
    i.add_argument("--data", required=True)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--out", default=None)
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--data", required=True)
    e.add_argument("--pred", default=None)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("render", help="render a grid file to a color PPM")
    r.add_argument("--kind", choices=["label", "cost", "height"], required=True)
    r.add_argument("--in", dest="infile", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--path-mask", default=None)
    r.set_defaults(func=cmd_render)

    c = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--tolerance", type=float, default=1e-4)
    c.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entry()
