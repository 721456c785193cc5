"""Command-line entry point: synth, label, validate, train, eval, gradcheck, ablate.

Exit codes: 0 success, 1 data error, 2 config or usage error. Structured logs go
to stderr as JSON lines; human-readable summaries go to stdout.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .backends import BackendError, make_backends
from .config import ConfigError, load_config
from .experiments import DESK_TRAIN, ablate, make_desk_data, parse_sweep
from .metrics import BACKGROUND, assign_labels, miou, p_miou
from .pipeline import Rejection, RetryBudgetExhausted, label_image, run_pipeline
from .records import (MANIFEST_NAME, VOCABULARY_NAME, ClassMask, Manifest, Vocabulary, labels_to_masks,
                      masks_to_labels, validate_manifest)
from .trainer import fit, load_checkpoint, load_image, predict_scores, save_checkpoint

log = logging.getLogger("magicforge")

EXIT_OK, EXIT_DATA, EXIT_CONFIG = 0, 1, 2


class DataError(Exception):
    pass


class JsonLineFormatter(logging.Formatter):
    def format(self, record):
        msg = record.getMessage()
        try:
            payload = json.loads(msg)
        except ValueError:
            payload = None
        doc = {"level": record.levelname.lower(), "logger": record.name}
        doc.update(payload if isinstance(payload, dict) else {"msg": msg})
        return json.dumps(doc)


def setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonLineFormatter())
    root = logging.getLogger("magicforge")
    root.handlers[:] = [handler]
    root.setLevel(level.upper())
    root.propagate = False


def write_json(path, doc) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_vocab(path, manifest_path=None) -> Vocabulary:
    if path is None:
        if manifest_path is None:
            raise DataError("--vocab is required")
        path = Path(manifest_path).parent / VOCABULARY_NAME
    try:
        return Vocabulary.load(path)
    except OSError as e:
        raise DataError(f"cannot read vocabulary {path}: {e}") from e


def read_manifest(path) -> Manifest:
    try:
        return Manifest.read(path)
    except OSError as e:
        raise DataError(f"cannot read manifest {path}: {e}") from e


def overrides(args, mapping: dict) -> dict:
    """Nest the explicitly given flags into config sections: ``{"train.lr": "lr"}``."""
    out: dict = {}
    for dotted, attr in mapping.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        section, key = dotted.split(".")
        out.setdefault(section, {})[key] = value
    return out


# -- subcommands ----------------------------------------------------------------

def cmd_synth(args, cfg):
    vocab = load_vocab(args.vocab)
    pconf = cfg.pipeline_config(args.out)
    manifest, report = run_pipeline(vocab, pconf, echo=cfg.model_dump())
    print(f"wrote {report.accepted} samples to {args.out}/{MANIFEST_NAME} ({report.rejected} rejected)")
    for reason, n in sorted(report.rejected_by_reason.items()):
        print(f"  rejected {n}: {reason}")
    return EXIT_OK


def _label_items(path):
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                item = json.loads(line)
                yield str(item.get("id", lineno)), item["image"], list(item["categories"])
            except (ValueError, KeyError, TypeError) as e:
                raise DataError(f"{path}:{lineno}: expected {{\"image\", \"categories\"}}: {e}") from e


def cmd_label(args, cfg):
    vocab = load_vocab(args.vocab)
    backends = make_backends(cfg.backend, vocab)
    base = Path(args.input).parent
    lines, accepted, rejected = [], 0, 0
    for item_id, image_ref, names in _label_items(args.input):
        try:
            ids = [vocab.id_of(n) for n in names]
        except KeyError as e:
            raise DataError(f"item {item_id}: {e}") from e
        try:
            image = load_image(base / image_ref)
        except OSError as e:
            raise DataError(f"item {item_id}: cannot read image {image_ref}: {e}") from e
        out = label_image(image, ids, backends, vocab, cfg.pipeline.detection_gate_threshold)
        doc = {"id": item_id, "image_ref": image_ref, "categories": ids}
        if isinstance(out, Rejection):
            doc["rejected"] = out.reason
            rejected += 1
            log.info(json.dumps({"event": "label_rejected", "id": item_id, "reason": out.reason}))
        else:
            doc.update(width=image.shape[1], height=image.shape[0], masks=[m.to_dict() for m in out])
            accepted += 1
        lines.append(json.dumps(doc, separators=(",", ":")))
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    write_json(out_path.with_name(out_path.stem + "-report.json"),
               {"accepted": accepted, "rejected": rejected, "config": cfg.model_dump()})
    print(f"labeled {accepted} images, rejected {rejected}; wrote {out_path}")
    return EXIT_OK


def cmd_validate(args, cfg):
    manifest = read_manifest(args.manifest)
    vocab = load_vocab(args.vocab, args.manifest)
    root = Path(args.root) if args.root else Path(args.manifest).parent
    problems = validate_manifest(manifest, vocab, root=root)
    for rid, msgs in problems.items():
        for msg in msgs:
            print(f"{rid}: {msg}")
    print(f"{len(manifest.records)} records, {len(problems)} with problems")
    return EXIT_DATA if problems else EXIT_OK


def cmd_train(args, cfg):
    manifest = read_manifest(args.manifest)
    vocab = load_vocab(args.vocab, args.manifest)
    tconf = cfg.train_config()
    model, history = fit(manifest, tconf, Path(args.manifest).parent, vocab.N)
    save_checkpoint(args.out, model, tconf, extra={"vocabulary": list(vocab.names), "app_config": cfg.model_dump(),
                                                   "final_loss": history[-1].to_dict()})
    last = history[-1]
    print(f"trained {tconf.steps} steps; final loss {last.total:.4f} "
          f"(focal {last.focal:.5f}, dice {last.dice:.4f}, cos {last.cos:.4f}); wrote {args.out}")
    return EXIT_OK


def _pred_grids(path, manifest: Manifest):
    by_id = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                doc = json.loads(line)
                masks = [ClassMask.from_dict(m) for m in doc.get("masks", [])]
                by_id[str(doc["id"])] = masks_to_labels(masks, int(doc["width"]), int(doc["height"]))
            except (KeyError, TypeError, ValueError) as e:
                raise DataError(f"{path}:{lineno}: malformed prediction: {e}") from e
    missing = [r.id for r in manifest.records if r.id not in by_id]
    if missing:
        raise DataError(f"no prediction for {len(missing)} records, e.g. {missing[0]}")
    return [by_id[r.id] for r in manifest.records]


def cmd_eval(args, cfg):
    manifest = read_manifest(args.manifest)
    vocab = load_vocab(args.vocab, args.manifest)
    ev = cfg.eval
    if args.pred:
        preds = _pred_grids(args.pred, manifest)
    else:
        try:
            model, _ = load_checkpoint(args.model)
        except (OSError, KeyError, ValueError) as e:
            raise DataError(f"cannot load model {args.model}: {e}") from e
        if model.E.shape[0] != vocab.N:
            raise DataError(f"model has {model.E.shape[0]} categories, vocabulary has {vocab.N}")
        root = Path(args.manifest).parent
        preds = [assign_labels(predict_scores(model, load_image(root / r.image_ref)), ev.bg_threshold)
                 for r in manifest.records]
    gts = [r.label_grid() for r in manifest.records]
    for rid, p, g in zip((r.id for r in manifest.records), preds, gts):
        if p.shape != g.shape:
            raise DataError(f"record {rid}: prediction {p.shape} vs ground truth {g.shape}")
    if ev.mode == "pmiou":
        report = p_miou(preds, gts, range(vocab.N), ev.points, np.random.default_rng(ev.seed))
    else:
        report = miou(preds, gts, range(vocab.N))
    doc = report.to_dict(vocab.names)
    doc["config"] = cfg.model_dump()
    write_json(args.out, doc)
    print(f"{ev.mode}: {report.mean:.4f} over {len(report.per_category)} categories; wrote {args.out}")
    for c, v in sorted(report.per_category.items()):
        print(f"  {vocab.names[c]:<20} {v:.4f}")
    return EXIT_OK


def cmd_gradcheck(args, cfg):
    from .gradcheck import run_gradcheck

    results = run_gradcheck(range(args.seeds))
    for name, r in results.items():
        status = "ok" if r["passed"] else "FAIL"
        print(f"{name:<11} max rel error {r['max_rel_error']:.3e} (tol {r['tolerance']:.0e}) {status}")
    return EXIT_OK if all(r["passed"] for r in results.values()) else EXIT_DATA


def cmd_ablate(args, cfg):
    import tempfile

    try:
        key, values = parse_sweep(args.sweep)
        seeds = [int(s) for s in args.seeds.split(",")]
    except ValueError as e:
        raise ConfigError(str(e)) from e
    base = DESK_TRAIN.model_copy(update={k: getattr(cfg.train, k) for k in cfg.train.model_fields_set})
    base = base.model_copy(update={"loss": cfg.loss})
    with tempfile.TemporaryDirectory(prefix="magicforge-ablate-") as tmp:
        data = make_desk_data(tmp, n_train=args.train_count, n_test=args.test_count, size=args.size,
                              seed=cfg.pipeline.seed)
        table = ablate(data, base, key, values, seeds=seeds)
    table["config"] = {**cfg.model_dump(), "desk_train": base.model_dump()}
    write_json(args.out, table)
    print(f"{key:<8} " + " ".join(f"seed{s:<5}" for s in seeds) + " mean")
    for value, row in table["results"].items():
        print(f"{value:<8} " + " ".join(f"{v:<9.4f}" for v in row["per_seed"]) + f" {row['mean']:.4f}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (falls back to $MAGICFORGE_CONFIG)")
    common.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"])

    p = argparse.ArgumentParser(prog="magicforge", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", metavar="COMMAND")

    s = sub.add_parser("synth", parents=[common], help="generate a counterfactual dataset")
    s.add_argument("--vocab", required=True, help="vocabulary.json")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--count", type=int, help="samples to accept (pipeline.samples_target)")
    s.add_argument("--seed", type=int, help="master seed (pipeline.seed)")
    s.add_argument("--categories-per-sample", type=int, choices=[1, 2])
    s.add_argument("--gate", type=float, help="detection confidence gate")
    s.add_argument("--width", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--jobs", type=int, help="concurrent samples (default: logical CPUs)")
    s.set_defaults(func=cmd_synth, flags={
        "pipeline.samples_target": "count", "pipeline.seed": "seed",
        "pipeline.categories_per_sample": "categories_per_sample", "pipeline.detection_gate_threshold": "gate",
        "backend.width": "width", "backend.height": "height", "pipeline.jobs": "jobs"})

    s = sub.add_parser("label", parents=[common], help="detect and segment user-supplied images")
    s.add_argument("--vocab", required=True)
    s.add_argument("--input", required=True, help='JSONL of {"id", "image", "categories": [names]}')
    s.add_argument("--out", required=True, help="output labels JSONL")
    s.add_argument("--gate", type=float)
    s.set_defaults(func=cmd_label, flags={"pipeline.detection_gate_threshold": "gate"})

    s = sub.add_parser("validate", parents=[common], help="check a manifest and its images")
    s.add_argument("--manifest", required=True)
    s.add_argument("--vocab", help="default: vocabulary.json next to the manifest")
    s.add_argument("--root", help="image root (default: manifest directory)")
    s.set_defaults(func=cmd_validate, flags={})

    s = sub.add_parser("train", parents=[common], help="fit the toy segmenter")
    s.add_argument("--manifest", required=True)
    s.add_argument("--vocab")
    s.add_argument("--out", required=True, help="checkpoint JSON")
    s.add_argument("--steps", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--dim", type=int)
    s.add_argument("--m", type=_m_value, help="categories per image: integer, 'full' or 'known'")
    s.add_argument("--seed", type=int)
    s.set_defaults(func=cmd_train, flags={
        "train.steps": "steps", "train.lr": "lr", "train.batch_size": "batch_size", "train.dim": "dim",
        "train.m_subset": "m", "train.seed": "seed"})

    s = sub.add_parser("eval", parents=[common], help="mIoU or p-mIoU against a manifest")
    s.add_argument("--manifest", required=True, help="ground-truth manifest")
    src = s.add_mutually_exclusive_group(required=True)
    src.add_argument("--pred", help="prediction JSONL (the format written by `label`)")
    src.add_argument("--model", help="checkpoint to run on the manifest images")
    s.add_argument("--vocab")
    s.add_argument("--mode", choices=["miou", "pmiou"])
    s.add_argument("--points", type=int, help="points per image for pmiou")
    s.add_argument("--bg-threshold", type=float)
    s.add_argument("--seed", type=int, help="point-sampling seed")
    s.add_argument("--out", default="report.json")
    s.set_defaults(func=cmd_eval, flags={"eval.mode": "mode", "eval.points": "points",
                                         "eval.bg_threshold": "bg_threshold", "eval.seed": "seed"})

    s = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every gradient")
    s.add_argument("--seeds", type=int, default=10)
    s.set_defaults(func=cmd_gradcheck, flags={})

    s = sub.add_parser("ablate", parents=[common], help="desk-scale sweep over m or w3")
    s.add_argument("--sweep", required=True, help="e.g. m=1,8,full or w3=0,1")
    s.add_argument("--seeds", default="0,1,2")
    s.add_argument("--train-count", type=int, default=200)
    s.add_argument("--test-count", type=int, default=50)
    s.add_argument("--size", type=int, default=32, help="scene side in pixels")
    s.add_argument("--out", default="ablation.json")
    s.set_defaults(func=cmd_ablate, flags={})
    return p


def _m_value(text: str):
    return text if text in ("full", "known") else int(text)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    setup_logging(args.log_level)
    try:
        cfg = load_config(args.config, overrides(args, args.flags))
        return args.func(args, cfg)
    except ConfigError as e:
        log.error(json.dumps({"event": "config_error", "error": str(e)}))
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, RetryBudgetExhausted, BackendError, OSError, ValueError, KeyError) as e:
        log.error(json.dumps({"event": "data_error", "error": str(e)}))
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
