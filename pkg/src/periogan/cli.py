"""Command-line entry point: ``periogan <verb> ...``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import shutil
import sys
from pathlib import Path

import numpy as np

from . import corpus, padlab, quality, trainer
from .config import DEVICE_ENV, RECIPES, WORKSPACE_ENV, RunConfig, recipe
from .errors import PeriOganError

logger = logging.getLogger("periogan")


class UsageError(Exception):
    pass


def _args_hash(args: argparse.Namespace) -> str:
    d = {k: v for k, v in vars(args).items() if k != "func"}
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _size(text: str | None):
    if text is None:
        return None
    try:
        w, h = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like 320x240, got {text!r}") from None
    return (w, h)


def _fresh_output(path: Path, force: bool) -> None:
    if path.exists():
        if not force:
            raise FileExistsError(f"{path} exists; pass --force to overwrite")
        if path.is_dir():
            shutil.rmtree(path)
        else:
            path.unlink()


def load_image_set(path, size=None) -> tuple[list[str], np.ndarray]:
    """Images from a directory (recursive) or a manifest JSON, as ids and an (N, 1, H, W) array."""
    p = Path(path)
    if p.is_file() and p.suffix == ".json":
        m = corpus.Manifest.load(p)
        items = [(r.id, r.path) for r in m.records]
    elif p.is_dir():
        files = sorted(f for f in p.rglob("*") if f.suffix.lower() in corpus.IMAGE_SUFFIXES)
        items = [(f.relative_to(p).as_posix(), str(f)) for f in files]
    else:
        raise corpus.IOFailure(f"{path} is neither an image directory nor a manifest")
    if not items:
        raise corpus.EmptyCorpus(f"no images in {path}")
    first = corpus.load_image(items[0][1])
    size = size or (first.width, first.height)
    arr = np.stack([corpus.load_image(fp, size).data for _, fp in items])[:, None]
    return [i for i, _ in items], arr


# --------------------------------------------------------------------------
# verbs


def cmd_ingest(args) -> int:
    out = Path(args.out)
    _fresh_output(out, args.force)
    labeling = corpus.Labeling.load(args.labeling) if args.labeling else corpus.Labeling()
    manifest = corpus.ingest_directory(args.dir, labeling)
    manifest.save(out)
    print(f"{len(manifest)} records, {len(manifest.failures)} failures -> {out}")
    for f in manifest.failures:
        print(f"  failed: {f.path}: {f.reason}", file=sys.stderr)
    return 0


def _parse_sets(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            out[key] = json.loads(raw)
        except json.JSONDecodeError:
            out[key] = raw
    return out


def _resolve_run_config(args) -> RunConfig:
    if args.recipe:
        if args.recipe not in RECIPES or "model" not in RECIPES[args.recipe]:
            raise UsageError(f"--recipe must be a training recipe: "
                             f"{sorted(k for k, v in RECIPES.items() if 'model' in v)}")
        rc = recipe(args.recipe)
    else:
        rc = RunConfig.load(args.config)
    model = _parse_sets(args.set)
    budgets = [(args.budget_kimg, "kimg"), (args.budget_epochs, "epochs"), (args.budget_steps, "steps")]
    given = [(v, u) for v, u in budgets if v is not None]
    if len(given) > 1:
        raise UsageError("give at most one of --budget-kimg / --budget-epochs / --budget-steps")
    if given:
        model["budget"], model["budget_unit"] = given[0]
    top = {}
    if args.workspace:
        top["workspace"] = args.workspace
    if args.seed is not None:
        top["seed"] = args.seed
    return rc.with_overrides(model, **top)


def _manifest_for(args, rc: RunConfig) -> corpus.Manifest:
    source = args.manifest or rc.doc.get("corpus", {}).get("manifest")
    if source:
        return corpus.Manifest.load(source)
    directory = rc.doc.get("corpus", {}).get("dir")
    if not directory:
        raise UsageError("no corpus: pass --manifest or set corpus.manifest / corpus.dir in the config")
    labeling = rc.doc["corpus"].get("labeling")
    if isinstance(labeling, str):
        labeling = corpus.Labeling.load(labeling)
    return corpus.ingest_directory(directory, labeling)


def cmd_train(args) -> int:
    rc = _resolve_run_config(args)
    cfg = rc.train_config()
    manifest = _manifest_for(args, rc)
    run_root = rc.workspace / "runs"
    if args.sweep_axis:
        if not args.sweep_values:
            raise UsageError("--sweep-axis needs --sweep-values")
        values = json.loads(f"[{args.sweep_values}]")
        sweep_dir = run_root / (args.run_name or f"{rc.name}-sweep-{args.sweep_axis}")
        logs = trainer.hyperparameter_sweep(cfg, args.sweep_axis, values, manifest, sweep_dir, overwrite=args.force)
        for v, log in zip(values, logs):
            print(f"{args.sweep_axis}={v}: {log.status}, best FID {log.best_fid:.4f}")
        return 0 if all(log.status == "completed" for log in logs) else 1
    run_dir = run_root / (args.run_name or rc.name)
    log = trainer.train(cfg, manifest, run_dir, overwrite=args.force)
    (run_dir / "runconfig.json").write_text(json.dumps(rc.doc, indent=2, sort_keys=True))
    print(f"run {run_dir}: best FID {log.best_fid:.4f} at kimg {trainer.format_kimg(log.best_images_seen)}")
    return 0


def _best_run(workspace: Path) -> Path:
    best, best_fid = None, math.inf
    for summary_path in sorted(workspace.rglob("run.json")):
        summary = json.loads(summary_path.read_text())
        if summary.get("best_checkpoint") and summary.get("best_fid") is not None \
                and summary["best_fid"] < best_fid:
            best, best_fid = summary_path.parent, summary["best_fid"]
    if best is None:
        raise PeriOganError(f"no run with a best checkpoint under {workspace}")
    return best


def _resolve_checkpoint(args) -> Path:
    if args.ckpt != "best":
        return Path(args.ckpt)
    run = Path(args.run) if args.run else _best_run(Path(args.workspace or os.environ.get(WORKSPACE_ENV) or "."))
    summary = json.loads((run / "run.json").read_text())
    if not summary.get("best_checkpoint"):
        raise PeriOganError(f"run {run} has no best checkpoint")
    return run / summary["best_checkpoint"]


def cmd_generate(args) -> int:
    path = _resolve_checkpoint(args)
    ckpt = trainer.Checkpoint.load(path)
    out = Path(args.out)
    _fresh_output(out, args.force)
    trainer.generate(ckpt, args.n, args.seed, args.gender, out_dir=out)
    meta = {"checkpoint": str(path), "checkpoint_id": ckpt.id, "seed": args.seed, "n": args.n,
            "gender": args.gender, "args_hash": _args_hash(args)}
    (out / "generate.json").write_text(json.dumps(meta, indent=2))
    print(f"{args.n} images -> {out}")
    return 0


def cmd_fid(args) -> int:
    model = quality.get_embedder(args.embedder, fallback=not args.strict_embedder)
    _, a = load_image_set(args.a, args.size)
    _, b = load_image_set(args.b, args.size or (a.shape[-1], a.shape[-2]))
    report = quality.fid(a, b, model)
    extra = {"set_a": args.a, "set_b": args.b, "args_hash": _args_hash(args)}
    if args.out:
        quality.write_fid_report(report, args.out, extra)
    print(json.dumps({**report.to_dict(), **extra}, indent=2))
    return 0


def cmd_sharpness(args) -> int:
    ids, arr = load_image_set(args.images, args.size)
    values = [quality.sharpness(x[0]) for x in arr]
    summary = {"n": len(values), "mean": float(np.mean(values)), "std": float(np.std(values)),
               "images": args.images, "args_hash": _args_hash(args)}
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "sharpness"])
            w.writerows([i, repr(v)] for i, v in zip(ids, values))
        Path(args.out).with_suffix(".json").write_text(json.dumps(summary, indent=2))
    print(json.dumps(summary, indent=2))
    return 0


def cmd_tsne(args) -> int:
    model = quality.get_embedder(args.embedder, fallback=True)
    feats, labels = [], []
    size = args.size
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects LABEL=PATH, got {item!r}")
        label, path = item.split("=", 1)
        _, arr = load_image_set(path, size)
        size = size or (arr.shape[-1], arr.shape[-2])
        feats.append(quality.embed(arr, model))
        labels += [label] * len(arr)
    proj = quality.tsne_project(np.concatenate(feats), labels, args.perplexity, args.iters, seed=args.seed)
    proj.to_csv(args.out)
    meta = {"embedder": model.id, "perplexity": args.perplexity, "n_iter": args.iters, "seed": args.seed,
            "n": len(labels), "final_kl": proj.kl_history[-1] if proj.kl_history else None,
            "args_hash": _args_hash(args)}
    Path(args.out).with_suffix(".json").write_text(json.dumps(meta, indent=2))
    print(json.dumps(meta, indent=2))
    return 0


def _classifier(spec: str, size, seed: int):
    kind, _, arg = spec.partition(":")
    if kind == "file":
        return padlab.FileScoreClassifier(arg)
    if kind == "constant":
        return padlab.ConstantClassifier(float(arg or 1.0))
    if kind == "baseline":
        if not arg:
            raise UsageError("baseline classifier needs a bona fide training set: --clf baseline:DIR")
        _, train_set = load_image_set(arg, size)
        return padlab.BaselineCNNClassifier(seed=seed).fit(train_set)
    if kind == "baseline-weights":
        return padlab.BaselineCNNClassifier.load(arg)
    raise UsageError(f"unknown classifier spec {spec!r} (file:, constant:, baseline:, baseline-weights:)")


def cmd_attack(args) -> int:
    out = Path(args.out)
    _fresh_output(out, args.force)
    clf = _classifier(args.clf, args.size, args.seed)
    pai_ids, pai = load_image_set(args.pai, args.size)
    size = args.size or (pai.shape[-1], pai.shape[-2])
    bf_ids, bf = load_image_set(args.bonafide, size)
    pai_set = [padlab.LabeledImage(i, padlab.ATTACK, corpus.PixelTensor(x[0])) for i, x in zip(pai_ids, pai)]
    bf_set = [padlab.LabeledImage(i, padlab.BONAFIDE, corpus.PixelTensor(x[0])) for i, x in zip(bf_ids, bf)]
    report = padlab.unknown_attack_experiment(pai_set, bf_set, clf, args.threshold)
    report.provenance = {"pai": args.pai, "bonafide": args.bonafide, "classifier": args.clf, "seed": args.seed,
                         "tag": args.tag, "args_hash": _args_hash(args)}
    report.write(out)
    if isinstance(clf, padlab.BaselineCNNClassifier):
        clf.save(out / "baseline_classifier.pt")
    iso = report.iso
    print(f"APCER {iso.apcer:.4f}  BPCER {iso.bpcer:.4f}  ACER {iso.acer:.4f}  D-EER {report.eer:.4f}  "
          f"PAI accepted as bona fide {report.fraction_pai_bonafide:.4f} -> {out}")
    return 0


def cmd_report(args) -> int:
    ws = Path(args.workspace)
    runs = sorted(p.parent for p in ws.rglob("run.json") if (p.parent / "runlog.csv").exists())
    if not runs:
        raise PeriOganError(f"no completed runs under {ws}")
    out = Path(args.out)
    (out / "curves").mkdir(parents=True, exist_ok=True)
    rows = []
    for run in runs:
        summary = json.loads((run / "run.json").read_text())
        cfg = json.loads((run / "config.json").read_text())
        name = run.relative_to(ws).as_posix().replace("/", "__")
        curve = [(r["kimg"], r["fid"]) for r in trainer.read_runlog_csv(run / "runlog.csv") if r["fid"]]
        with open(out / "curves" / f"{name}.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["kimg", "fid"])
            w.writerows(curve)
        rows.append({"run": name, "model_kind": summary["model_kind"], "status": summary["status"],
                     "best_fid": summary["best_fid"], "best_kimg": summary["best_kimg"],
                     "embedder": cfg.get("embedder"), "learning_rate": cfg.get("learning_rate"),
                     "config_hash": summary["config_hash"]})
    if len({r["embedder"] for r in rows}) > 1:
        logger.warning("runs use different embedders; FID values are only comparable within one embedder")
    rows.sort(key=lambda r: (r["best_fid"] is None, r["best_fid"] if r["best_fid"] is not None else math.inf))
    _write_table(rows, out / "fid_benchmark")

    attacks = []
    for rep in sorted(ws.rglob("report.json")):
        doc = json.loads(rep.read_text())
        if "d_eer" not in doc:
            continue
        attacks.append({"report": rep.parent.relative_to(ws).as_posix(),
                        "tag": doc.get("provenance", {}).get("tag"),
                        "d_eer": doc["d_eer"], "apcer": doc["iso"]["apcer"], "bpcer": doc["iso"]["bpcer"],
                        "acer": doc["iso"]["acer"], "threshold": doc["threshold"]})
    if attacks:
        _write_table(attacks, out / "deer_table")
    print(f"{len(rows)} runs, {len(attacks)} attack reports -> {out}")
    return 0


def _write_table(rows: list[dict], stem: Path) -> None:
    Path(f"{stem}.json").write_text(json.dumps(rows, indent=2))
    with open(f"{stem}.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="periogan", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", help="build manifest.json from an image directory")
    s.add_argument("--dir", required=True)
    s.add_argument("--labeling", help="JSON labeling rules")
    s.add_argument("--out", default="manifest.json")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("train", help="train a generator from a recipe or config file")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--recipe", choices=sorted(RECIPES))
    g.add_argument("--config")
    s.add_argument("--manifest")
    s.add_argument("--workspace")
    s.add_argument("--run-name")
    s.add_argument("--seed", type=int)
    s.add_argument("--budget-kimg", type=float)
    s.add_argument("--budget-epochs", type=float)
    s.add_argument("--budget-steps", type=int)
    s.add_argument("--set", action="append", metavar="KEY=JSON", help="override a model field")
    s.add_argument("--sweep-axis")
    s.add_argument("--sweep-values", help="comma-separated JSON values")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("generate", help="synthesize images from a checkpoint")
    s.add_argument("--ckpt", required=True, help="checkpoint path or 'best'")
    s.add_argument("--run", help="run directory for --ckpt best (default: best run in the workspace)")
    s.add_argument("--workspace")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--seed", type=int, required=True)
    s.add_argument("--gender", choices=["female", "male"])
    s.add_argument("--out", default="generated")
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("fid", help="Frechet distance between two image sets")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--embedder", default="inception-v3")
    s.add_argument("--strict-embedder", action="store_true", help="fail instead of falling back to lite-cnn")
    s.add_argument("--size", type=_size)
    s.add_argument("--out", help="output path stem for .json/.csv")
    s.set_defaults(func=cmd_fid)

    s = sub.add_parser("sharpness", help="LoG sharpness per image")
    s.add_argument("--images", required=True)
    s.add_argument("--size", type=_size)
    s.add_argument("--out")
    s.set_defaults(func=cmd_sharpness)

    s = sub.add_parser("tsne", help="2-D t-SNE map of labelled image sets")
    s.add_argument("--set", action="append", required=True, metavar="LABEL=PATH")
    s.add_argument("--embedder", default="inception-v3")
    s.add_argument("--perplexity", type=float, default=30.0)
    s.add_argument("--iters", type=int, default=1000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=_size)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tsne)

    s = sub.add_parser("attack", help="unknown-attack PAD experiment")
    s.add_argument("--pai", required=True)
    s.add_argument("--bonafide", required=True)
    s.add_argument("--clf", required=True, help="file:CSV | constant:V | baseline:DIR | baseline-weights:PT")
    s.add_argument("--threshold", type=float, default=padlab.DEFAULT_THRESHOLD)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--size", type=_size)
    s.add_argument("--tag")
    s.add_argument("--out", required=True)
    s.add_argument("--force", action="store_true")
    s.set_defaults(func=cmd_attack)

    s = sub.add_parser("report", help="aggregate runs into benchmark tables")
    s.add_argument("--workspace", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if os.environ.get(DEVICE_ENV, "cpu") != "cpu":
        print(f"error: only the cpu device is supported ({DEVICE_ENV}={os.environ[DEVICE_ENV]})", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (PeriOganError, OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
