"""Command-line entry point: ``freebies <subcommand> ...``.

Exit codes: 0 success, 1 domain error (one ``error: ...`` line on stderr),
2 usage error.  Options may also come from a TOML file given by
``--config`` or ``$FREEBIES_CONFIG``; top-level keys apply to every
subcommand, ``[name]`` tables to one.  Flags override the file.
"""
from __future__ import annotations

import argparse
import csv
import io as _stdio
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

from . import __version__
from . import augment, elephant, evaluate, mixup, schedule, syncbn, targets
from . import io as dio
from .core import BBox, DomainError, ObjectLabel, Sample, make_rng, sample_rng

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

CONFIG_ENV = "FREEBIES_CONFIG"


def _emit(obj, out: Path | None = None):
    text = json.dumps(obj, indent=2) + "\n"
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _report(args, **payload) -> dict:
    cfg = {k: (str(v) if isinstance(v, Path) else v)
           for k, v in sorted(vars(args).items()) if k not in ("func", "config")}
    return {"version": __version__, "command": args.command, "config": cfg, **payload}


def _fmt(args) -> str:
    """Explicit ``--format``, else a table on a terminal and JSON elsewhere."""
    if args.format:
        return args.format
    return "table" if sys.stdout.isatty() and not getattr(args, "out", None) else "json"


def _table(headers: Sequence[str], rows: Sequence[Sequence]) -> str:
    cells = [[str(h) for h in headers]] + [[v if isinstance(v, str) else repr(v) for v in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _pmap(fn: Callable, n: int, threads: int) -> list:
    """Ordered parallel map over ``range(n)``; ordering never depends on ``threads``."""
    workers = threads or os.cpu_count() or 1
    if workers == 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, range(n)))


def _sample_of(index: dio.DatasetIndex, entry: dio.DatasetEntry) -> Sample:
    img = dio.load_image(index.image_path(entry))
    if img.shape[:2] != (entry.height, entry.width):
        raise DomainError(f"{entry.file_name}: image is {img.shape[1]}x{img.shape[0]}, "
                          f"annotation says {entry.width}x{entry.height}")
    return Sample(img, list(entry.labels))


# --- subcommands -------------------------------------------------------------

def cmd_version(args):
    _emit({"version": __version__, "rng": "PCG64"})


def cmd_schedule(args):
    scale = args.iters_per_epoch or 1
    s = schedule.LrSchedule(
        base_lr=args.base_lr,
        total_iters=args.total * scale,
        mode=args.mode,
        warmup_iters=args.warmup * scale,
        step_milestones=tuple(m * scale for m in _ints(args.milestones)),
        step_factor=args.factor,
    )
    rows = schedule.emit_schedule_table(s, args.every * scale)
    fmt = _fmt(args)
    if fmt == "table":
        sys.stdout.write(_table(["iter", "lr"], rows))
    elif fmt == "csv":
        buf = _stdio.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "lr"])
        w.writerows((t, repr(lr)) for t, lr in rows)
        text = buf.getvalue()
        if args.out:
            Path(args.out).write_text(text)
        else:
            sys.stdout.write(text)
    else:
        _emit(_report(args, rows=[{"iter": t, "lr": lr} for t, lr in rows]), args.out)


def cmd_shapes(args):
    plan = schedule.plan_shapes(args.stride, args.min_size, args.max_size, args.batches, make_rng(args.seed))
    _emit(_report(args, seed=args.seed, plan=plan.to_dict()), args.out)


def cmd_targets(args):
    if args.sigmoid is not None:
        t = _floats(args.sigmoid)
        vec = targets.smooth_sigmoid_targets(t, args.epsilon, args.negative_mode, args.num_classes)
    else:
        if args.num_classes is None or args.label is None:
            raise DomainError("--num-classes and --label are required without --sigmoid")
        vec = targets.smooth_onehot(args.label, targets.SmoothingConfig(args.num_classes, args.epsilon))
    _emit(_report(args, targets=[float(v) for v in vec]))


def cmd_syncbn(args):
    groups: dict[str, list[float]] = {}
    with open(args.csv, newline="") as f:
        for n, row in enumerate(csv.reader(f), start=1):
            if not row or row[0].strip().startswith("#"):
                continue
            if n == 1 and row[0].strip() == "device_id":
                continue
            if len(row) != 2:
                raise DomainError(f"{args.csv}:{n}: expected 'device_id,value'")
            try:
                groups.setdefault(row[0].strip(), []).append(float(row[1]))
            except ValueError:
                raise DomainError(f"{args.csv}:{n}: bad value {row[1]!r}") from None
    shards = [syncbn.DeviceShard(v, d) for d, v in groups.items()]
    _emit(_report(args, report=syncbn.divergence_report(shards)))


def _write_outputs(args, index, results, extra: dict) -> dict:
    entries = [r[0] for r in results]
    images = [r[1] for r in results]
    out_index = dio.DatasetIndex(index.class_names, entries, args.out_format or index.source_format,
                                 index.category_ids)
    manifest = dio.write_dataset(out_index, images, args.out, out_index.source_format, args.lossy)
    run_meta = {"version": __version__, "command": args.command, "seed": args.seed,
                "rng": "PCG64", "lossy": args.lossy, **extra}
    (Path(args.out) / "run.json").write_text(json.dumps(run_meta, indent=2) + "\n")
    return manifest


def cmd_mixup(args):
    a = dio.read_dataset(args.a)
    b = dio.read_dataset(args.b)
    if a.class_names != b.class_names:
        raise DomainError("datasets use different class vocabularies")
    cfg = mixup.MixupConfig(mixup.BetaParams(args.alpha, args.beta), args.fixed_ratio, args.min_weight)
    partners = mixup.pair_indices(len(a.entries), len(b.entries), make_rng(args.seed), args.pair_strategy)

    def one(i):
        ea, eb = a.entries[i], b.entries[partners[i]]
        mixed, lam = mixup.mix_samples(_sample_of(a, ea), _sample_of(b, eb), cfg, sample_rng(args.seed, i))
        entry = dio.DatasetEntry(ea.image_id, ea.file_name, mixed.width, mixed.height, mixed.labels)
        return entry, mixed.image, lam, eb.file_name

    results = _pmap(one, len(a.entries), args.threads)
    pairs = [{"a": r[0].file_name, "b": r[3], "lambda": r[2]} for r in results]
    params = {"alpha": args.alpha, "beta": args.beta, "fixed_ratio": args.fixed_ratio,
              "min_weight": args.min_weight, "pair_strategy": args.pair_strategy}
    manifest = _write_outputs(args, a, results, {"params": params, "pairs": pairs})
    _emit(_report(args, seed=args.seed, outputs=len(results), pairs=pairs,
                  files=len(manifest["files"])))


def _policy(args) -> augment.AugmentPolicy:
    if args.policy == "multi":
        return augment.AugmentPolicy.multi_stage(args.short_side, args.long_cap)
    return augment.AugmentPolicy.single_stage(args.size, tuple(_floats(args.fill)))


def cmd_augment(args):
    index = dio.read_dataset(args.input)
    policy = _policy(args)

    def one(i):
        e = index.entries[i]
        src = _sample_of(index, e)
        out = augment.apply_policy(src, policy, sample_rng(args.seed, i)).validate()
        entry = dio.DatasetEntry(e.image_id, e.file_name, out.width, out.height, out.labels)
        return entry, out.image, src.image

    results = _pmap(one, len(index.entries), args.threads)
    manifest = _write_outputs(args, index, results, {"policy": policy.to_dict()})
    if args.preview:
        pdir = Path(args.out) / "preview"
        pdir.mkdir(exist_ok=True)
        for entry, after, before in results[: args.preview]:
            stem = Path(entry.file_name).stem
            dio.save_image(before, pdir / f"{stem}_before.png")
            dio.save_image(after, pdir / f"{stem}_after.png")
    _emit(_report(args, seed=args.seed, outputs=len(results), files=len(manifest["files"]),
                  policy=policy.to_dict()))


def _read_gt(path, classes):
    index = dio.read_dataset(path, classes)
    return index, index.records()


def cmd_eval_map(args):
    classes = args.classes.split(",") if args.classes else None
    index, gts = _read_gt(args.gt, classes)
    dets = dio.read_detections(args.dets)
    cfg = evaluate.EvalConfig(args.iou, args.mode)
    k = len(index.class_names)
    m, table = evaluate.mean_ap(dets, gts, cfg, k)
    summary = _report(args, mAP=m, per_class=[
        {"class_id": c, "class_name": index.class_names[c], "ap": ap} for c, ap in table.items()])
    if args.coco:
        cm, per_t = evaluate.coco_map(dets, gts, args.mode, k)
        summary["mAP_50_95"] = cm
        summary["mAP_by_threshold"] = {f"{t:.2f}": v for t, v in per_t.items()}
    if args.out_csv:
        with open(args.out_csv, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["class_id", "class_name", "ap"])
            for row in summary["per_class"]:
                w.writerow([row["class_id"], row["class_name"], repr(row["ap"])])
    if _fmt(args) == "table" and args.out_json is None:
        sys.stdout.write(_table(["class_id", "class", "ap"], [
            (r["class_id"], r["class_name"], r["ap"]) for r in summary["per_class"]]))
        sys.stdout.write(f"mAP {summary['mAP']!r}\n")
    else:
        _emit(summary, args.out_json)


def _table_of(path) -> dict:
    data = json.loads(Path(path).read_text())
    try:
        return {r.get("class_name", r["class_id"]): float(r["ap"]) for r in data["per_class"]}
    except (KeyError, TypeError):
        raise DomainError(f"{path}: not an 'eval map' summary") from None


def cmd_eval_delta(args):
    rows = evaluate.per_class_delta(_table_of(args.a), _table_of(args.b))
    fmt = _fmt(args)
    if fmt == "table":
        sys.stdout.write(_table(["class", "delta"], rows))
    elif fmt == "csv":
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(["class", "delta"])
        w.writerows((c, repr(d)) for c, d in rows)
    else:
        _emit(_report(args, deltas=[{"class": c, "delta": d} for c, d in rows]))


def cmd_elephant_gen(args):
    scene = dio.load_image(args.scene)
    patch = dio.load_image(args.patch)
    mask = dio.load_mask(args.mask) if args.mask else None
    spec = elephant.PatchSpec(patch, mask, args.stride, args.stride_y or args.stride, args.scale)
    frames = elephant.generate_frames(scene, spec, args.class_id)
    out = Path(args.out)
    (out / "frames").mkdir(parents=True, exist_ok=True)

    def one(i):
        f = frames[i]
        name = f"frames/frame_{f.frame_id:05d}.png"
        dio.save_image(f.image, out / name)
        return {"frame_id": f.frame_id, "file": name, "patch_bbox": list(f.patch_bbox.as_tuple()),
                "patch_class_id": f.patch_class_id}

    rows = _pmap(one, len(frames), args.threads)
    manifest = {"version": __version__, "scene": Path(args.scene).name,
                "scene_width": scene.shape[1], "scene_height": scene.shape[0], "frames": rows}
    _emit(manifest, out / "manifest.json")
    _emit(_report(args, frames=len(rows)))


def _clean_objects(path) -> list[ObjectLabel]:
    objs = []
    with open(path) as f:
        for n, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                objs.append(ObjectLabel(BBox(*d["bbox"]), int(d["class_id"])))
            except (ValueError, KeyError, TypeError) as e:
                raise DomainError(f"{path}:{n}: {e}") from None
    return objs


def cmd_elephant_eval(args):
    manifest = json.loads(Path(args.manifest).read_text())
    frames = [elephant.AdversarialFrame(r["frame_id"], BBox(*r["patch_bbox"]), r["patch_class_id"],
                                        None, None) for r in manifest["frames"]]
    by_frame: dict = {}
    for d in dio.read_detections(args.dets):
        by_frame.setdefault(d.image_id, []).append(d)
    report = elephant.robustness_report(_clean_objects(args.clean), frames, by_frame,
                                        evaluate.EvalConfig(args.iou), args.exclude_occluded,
                                        args.clean_source)
    _emit(_report(args, report=report))


# --- parser ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="freebies", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="TOML file of option defaults")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.set_defaults(func=func)
        return sp

    def seeded(sp):
        sp.add_argument("--seed", type=int, default=0, help="master seed (default 0)")

    def threaded(sp):
        sp.add_argument("--threads", type=int, default=0, help="worker threads, 0 = all cores")

    def lossy(sp):
        sp.add_argument("--lossy", action="store_true", help="write JPEG instead of PNG")

    add("version", cmd_version, "print the toolkit version")

    sp = add("schedule", cmd_schedule, "tabulate a learning-rate schedule")
    sp.add_argument("--mode", choices=schedule.MODES, default="cosine")
    sp.add_argument("--base-lr", type=float, default=0.001)
    sp.add_argument("--total", type=int, required=True, help="total iterations (or epochs)")
    sp.add_argument("--warmup", type=int, default=1000, help="warmup iterations (or epochs)")
    sp.add_argument("--milestones", default="", help="comma-separated step milestones")
    sp.add_argument("--factor", type=float, default=0.1, help="step decay factor")
    sp.add_argument("--every", type=int, default=1, help="row spacing")
    sp.add_argument("--iters-per-epoch", type=int, default=None,
                    help="treat --total/--warmup/--milestones/--every as epochs")
    sp.add_argument("--format", choices=("json", "csv", "table"), default=None,
                    help="default: table on a terminal, else json")
    sp.add_argument("--out", type=Path)

    sp = add("shapes", cmd_shapes, "plan random square input sizes per batch")
    sp.add_argument("--stride", type=int, default=32)
    sp.add_argument("--min-size", type=int, default=320)
    sp.add_argument("--max-size", type=int, default=608)
    sp.add_argument("--batches", type=int, required=True)
    sp.add_argument("--out", type=Path)
    seeded(sp)

    sp = add("targets", cmd_targets, "print label-smoothed target vectors")
    sp.add_argument("--num-classes", type=int)
    sp.add_argument("--label", type=int)
    sp.add_argument("--epsilon", type=float, default=0.1)
    sp.add_argument("--sigmoid", help="comma-separated 0/1 targets for a sigmoid head")
    sp.add_argument("--negative-mode", choices=targets.NEGATIVE_MODES, default="epsilon")

    sp = add("syncbn-check", cmd_syncbn, "compare per-device and synchronized BN statistics")
    sp.add_argument("--csv", type=Path, required=True, help="rows of device_id,value")

    sp = add("mixup", cmd_mixup, "mix two datasets pairwise")
    sp.add_argument("--a", type=Path, required=True, help="first dataset (VOC dir or COCO json)")
    sp.add_argument("--b", type=Path, required=True, help="second dataset")
    sp.add_argument("--alpha", type=float, default=1.5)
    sp.add_argument("--beta", type=float, default=1.5)
    sp.add_argument("--fixed-ratio", type=float, default=None)
    sp.add_argument("--min-weight", type=float, default=0.0)
    sp.add_argument("--pair-strategy", choices=("shuffle", "sequential"), default="shuffle")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--out-format", choices=("voc", "coco"), default=None)
    lossy(sp)
    seeded(sp)
    threaded(sp)

    sp = add("augment", cmd_augment, "augment a dataset with a fixed policy")
    sp.add_argument("--input", type=Path, required=True, help="VOC dir or COCO json")
    sp.add_argument("--policy", choices=("single", "multi"), default="single")
    sp.add_argument("--size", type=int, default=416, help="single-stage output size")
    sp.add_argument("--fill", default="0.5,0.5,0.5", help="expansion fill, r,g,b in [0,1]")
    sp.add_argument("--short-side", type=int, default=600)
    sp.add_argument("--long-cap", type=int, default=1000)
    sp.add_argument("--preview", type=int, default=0, help="dump k before/after pairs")
    sp.add_argument("--out", type=Path, required=True)
    sp.add_argument("--out-format", choices=("voc", "coco"), default=None)
    lossy(sp)
    seeded(sp)
    threaded(sp)

    ev = sub.add_parser("eval", help="detection evaluation")
    evsub = ev.add_subparsers(dest="eval_command", required=True)
    sp = evsub.add_parser("map", help="VOC-style mAP")
    sp.set_defaults(func=cmd_eval_map)
    sp.add_argument("--gt", type=Path, required=True, help="VOC dir or COCO json")
    sp.add_argument("--dets", type=Path, required=True, help="detections, JSON lines")
    sp.add_argument("--iou", type=float, default=0.5)
    sp.add_argument("--mode", choices=evaluate.AP_MODES, default="voc07_11point")
    sp.add_argument("--coco", action="store_true", help="also report mAP@[0.5:0.95]")
    sp.add_argument("--classes", help="comma-separated vocabulary for VOC input")
    sp.add_argument("--out-json", type=Path)
    sp.add_argument("--out-csv", type=Path)
    sp.add_argument("--format", choices=("json", "table"), default=None,
                    help="stdout format; default: table on a terminal, else json")
    sp = evsub.add_parser("delta", help="per-class AP differences between two summaries")
    sp.set_defaults(func=cmd_eval_delta)
    sp.add_argument("--a", type=Path, required=True)
    sp.add_argument("--b", type=Path, required=True)
    sp.add_argument("--format", choices=("json", "csv", "table"), default=None,
                    help="default: table on a terminal, else json")

    el = sub.add_parser("elephant", help="sliding-patch robustness harness")
    elsub = el.add_subparsers(dest="elephant_command", required=True)
    sp = elsub.add_parser("gen", help="write sliding-patch frames")
    sp.set_defaults(func=cmd_elephant_gen)
    sp.add_argument("--scene", type=Path, required=True)
    sp.add_argument("--patch", type=Path, required=True)
    sp.add_argument("--mask", type=Path)
    sp.add_argument("--stride", type=int, default=None, help="default: half the patch width")
    sp.add_argument("--stride-y", type=int, default=None, help="default: --stride, else half the patch height")
    sp.add_argument("--scale", type=float, default=1.0)
    sp.add_argument("--class-id", type=int, default=0, help="class id of the pasted object")
    sp.add_argument("--out", type=Path, required=True)
    threaded(sp)
    sp = elsub.add_parser("eval", help="score detections on generated frames")
    sp.set_defaults(func=cmd_elephant_eval)
    sp.add_argument("--manifest", type=Path, required=True)
    sp.add_argument("--dets", type=Path, required=True, help="JSON lines, image_id = frame_id")
    sp.add_argument("--clean", type=Path, required=True, help="JSON lines of {bbox, class_id}")
    sp.add_argument("--clean-source", choices=("annotations", "detections"), default="annotations")
    sp.add_argument("--iou", type=float, default=0.5)
    sp.add_argument("--exclude-occluded", type=float, default=None, metavar="IOU")
    return p


def _subparsers(parser: argparse.ArgumentParser) -> dict[str, argparse.ArgumentParser]:
    out = {}
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for name, sp in action.choices.items():
                out[name] = sp
                for sub_name, sub_sp in _subparsers(sp).items():
                    out[f"{name}.{sub_name}"] = sub_sp
    return out


def _apply_config(parser: argparse.ArgumentParser, path: Path):
    try:
        data = tomllib.loads(Path(path).read_text())
    except (OSError, tomllib.TOMLDecodeError) as e:
        parser.error(f"cannot read config {path}: {e}")
    subs = _subparsers(parser)
    common = {k.replace("-", "_"): v for k, v in data.items() if not isinstance(v, dict)}
    for name, sp in subs.items():
        dests = {a.dest for a in sp._actions}
        table = data
        for part in name.split("."):
            table = table.get(part, {}) if isinstance(table, dict) else {}
        values = dict(common)
        values.update({k.replace("-", "_"): v for k, v in table.items() if not isinstance(v, dict)})
        for a in sp._actions:
            if a.dest in values and a.type is Path:
                values[a.dest] = Path(values[a.dest])
        sp.set_defaults(**{k: v for k, v in values.items() if k in dests})


def run(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, _ = pre.parse_known_args(argv)
    config = known.config or (Path(os.environ[CONFIG_ENV]) if os.environ.get(CONFIG_ENV) else None)
    if config is not None:
        _apply_config(parser, config)
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        args.func(args)
    except (DomainError, OSError) as e:
        msg = str(e).replace("\n", " ")
        print(f"error: {type(e).__name__}: {msg}", file=sys.stderr)
        return 1
    return 0


def main():
    sys.exit(run())
