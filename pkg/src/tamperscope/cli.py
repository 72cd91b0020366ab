"""Command-line harness.

Subcommands: synth, train-fpn, train-stage2, infer, eval, qc, stats.
Exit codes: 0 success, 1 validation failure, 2 usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .checkpoint import load_checkpoint, restore_into
from .config import load_run_config, write_run_config
from .errors import ConfigurationError, ContractError, StorageError, TrainingDiverged
from .forge import Triplet, generate_dataset, load_manifest, read_triplet
from .instruct import Vocabulary, build_instruction
from .interpreter import ForgeryInterpreter, normalize_image
from .maskdec import binarize
from .metrics import evaluate_run
from .pngio import load_image, save_mask
from .prompter import RegionPrompter, predict_regions
from .qc import compute_stats, run_qc, split_dataset
from .regions import RegionRegistry
from .train import DatasetView, load_prompter, train_interpreter, train_prompter

OK, VALIDATION_FAILURE, USAGE_ERROR, RUNTIME_ERROR = 0, 1, 2, 3


def _write_json(path, payload) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_synth(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed)
    out = Path(args.out)
    if args.n is not None:
        cfg.data.n = args.n
    if cfg.data.n <= 0:
        print(f"error: dataset size must be positive, got {cfg.data.n}", file=sys.stderr)
        return VALIDATION_FAILURE
    if out.exists() and any(out.iterdir()) and not args.force:
        print(f"error: {out} exists and is not empty (use --force to overwrite)", file=sys.stderr)
        return VALIDATION_FAILURE
    out.mkdir(parents=True, exist_ok=True)
    records = generate_dataset(
        out,
        n=cfg.data.n,
        seed=cfg.seed,
        size=cfg.data.size,
        full_face_prob=cfg.data.full_face_prob,
        method_probs=cfg.data.method_probs,
        k_min=cfg.data.k_min,
        k_max=cfg.data.k_max,
    )
    ids = [rec["id"] for rec in records]
    train, val, test = split_dataset(ids, ratios=cfg.split_ratios, seed=cfg.seed)
    (out / "splits.json").write_text(json.dumps({"train": train, "val": val, "test": test}, sort_keys=True) + "\n")
    write_run_config(cfg, out, toml_path=args.config)
    _write_json(out / "synth_log.json", {"n": len(records), "seed": cfg.seed, "size": cfg.data.size})
    print(f"wrote {len(records)} triplets to {out} (train/val/test = {len(train)}/{len(val)}/{len(test)})")
    return OK


def cmd_train_fpn(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed)
    data = DatasetView(args.dataset)
    cfg.fpn.image_size = data.image_size()
    cfg.data.size = cfg.fpn.image_size
    out = Path(args.out)
    write_run_config(cfg, out, toml_path=args.config)
    result = train_prompter(data, cfg.fpn, cfg.optim_fpn, cfg.seed, out)
    _write_json(out / "report.json", {"best_val_plm": result["best_val_plm"], "epochs": result["history"]})
    print(f"best val PLM {result['best_val_plm']:.4f}; checkpoint at {result['checkpoint']}")
    return OK


def cmd_train_stage2(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed)
    data = DatasetView(args.dataset)
    cfg.fpn.image_size = data.image_size()
    cfg.data.size = cfg.fpn.image_size
    fpn_ckpt = Path(args.fpn)
    sidecar = fpn_ckpt.parent / "registry.json"
    if sidecar.exists():
        ckpt_registry = RegionRegistry.load(sidecar)
        if ckpt_registry != data.registry:
            raise ConfigurationError("checkpoint registry does not match dataset registry")
    prompter = load_prompter(fpn_ckpt, cfg.fpn, data.registry)
    out = Path(args.out)
    write_run_config(cfg, out, toml_path=args.config)
    result = train_interpreter(data, prompter, cfg.interpreter_config(), cfg.optim_stage2, cfg.seed, out)
    _write_json(
        out / "report.json",
        {
            "epochs": result["history"],
            "fpn_hash_before": result["fpn_hash_before"],
            "fpn_hash_after": result["fpn_hash_after"],
        },
    )
    print(f"checkpoint at {result['checkpoint']}")
    return OK


def cmd_infer(args) -> int:
    cfg = load_run_config(args.config, seed=args.seed)
    data = DatasetView(args.dataset)
    cfg.fpn.image_size = data.image_size()
    cfg.data.size = cfg.fpn.image_size
    prompter = load_prompter(Path(args.fpn), cfg.fpn, data.registry)
    stage2_dir = Path(args.stage2).parent if Path(args.stage2).is_file() else Path(args.stage2)
    stage2_ckpt = Path(args.stage2) if Path(args.stage2).is_file() else stage2_dir / "stage2.ckpt"
    vocab = Vocabulary.from_json((stage2_dir / "vocab.json").read_text())
    icfg = cfg.interpreter_config()
    model = ForgeryInterpreter(icfg, len(vocab), np.random.default_rng(0))
    restore_into(model.named_parameters(), load_checkpoint(stage2_ckpt))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_run_config(cfg, out, toml_path=args.config)
    ids = data.ids(args.split)
    if args.limit is not None:
        ids = ids[: args.limit]
    failures = 0
    lines = []
    for sid in ids:
        try:
            image, _, rec = data.sample(sid)
        except StorageError as exc:
            print(f"error: {sid}: {exc}", file=sys.stderr)
            failures += 1
            continue
        logits, prompt_tokens = prompter.forward(Tensor(image))
        if args.use_gt_regions:
            regions = [n for n in data.registry.names if n in set(rec["regions"])]
        else:
            regions = predict_regions(logits, data.registry, cfg.fpn.threshold)
        instruction = build_instruction(regions, vocab)
        caption, pred = model.predict(Tensor(image), instruction, prompt_tokens.data, vocab, args.max_len)
        mask_rel = f"masks/{sid}.png"
        save_mask(out / mask_rel, binarize(pred))
        lines.append({"id": sid, "mask": mask_rel, "caption": caption, "regions": regions})
    with (out / "predictions.jsonl").open("w") as fh:
        for line in lines:
            fh.write(json.dumps(line, sort_keys=True) + "\n")
    print(f"wrote {len(lines)} predictions to {out / 'predictions.jsonl'} ({failures} failures)")
    return RUNTIME_ERROR if failures else OK


def cmd_eval(args) -> int:
    registry = RegionRegistry.load(Path(args.dataset) / "registry.json")
    report = evaluate_run(args.predictions, args.dataset, registry)
    payload = report.to_json()
    if args.out:
        _write_json(args.out, payload)
    bleu_txt = " ".join(f"B{i + 1}={v:.4f}" for i, v in enumerate(report.bleu))
    print(f"PLM={report.plm:.4f} IoU={report.iou:.4f} P={report.precision:.4f} R={report.recall:.4f}")
    print(f"{bleu_txt} ROUGE-L={report.rouge_l:.4f} CIDEr={report.cider:.4f}")
    return OK


def _load_corpus(root) -> tuple[list[Triplet], RegionRegistry]:
    registry = RegionRegistry.load(Path(root) / "registry.json")
    triplets = [read_triplet(root, rec) for rec in load_manifest(root)]
    return triplets, registry


def cmd_qc(args) -> int:
    triplets, registry = _load_corpus(args.dataset)
    report = run_qc(triplets, registry)
    if args.out:
        _write_json(args.out, report.to_json())
    failed = [r.triplet_id for r in report.reports if not r.passed]
    counts = " ".join(f"{k}={v}" for k, v in sorted(report.counts.items()))
    print(f"checked {len(report.reports)} triplets: {len(failed)} failed ({counts})")
    if args.strict and failed:
        return VALIDATION_FAILURE
    return OK


def cmd_stats(args) -> int:
    triplets, registry = _load_corpus(args.dataset)
    stats = compute_stats(triplets, registry)
    if args.out:
        _write_json(args.out, stats.to_json())
    print(f"n={stats.n} methods={stats.per_method}")
    print(f"caption words: mean={stats.caption_words['mean']:.2f} min={stats.caption_words['min']} max={stats.caption_words['max']} total={stats.caption_words['total']}")
    top = sorted(stats.region_caption_counts.items(), key=lambda kv: -kv[1])[:5]
    print("top caption regions: " + ", ".join(f"{n}({c})" for n, c in top))
    return OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tamperscope", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="TOML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p = sub.add_parser("synth", help="generate a synthetic forged-face dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None, help="number of triplets")
    p.add_argument("--force", action="store_true", help="overwrite a non-empty output directory")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train-fpn", help="train the region prompter (stage 1)")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_fpn)

    p = sub.add_parser("train-stage2", help="train the interpreter with a frozen prompter")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--fpn", required=True, help="stage-1 checkpoint path")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train_stage2)

    p = sub.add_parser("infer", help="run the full pipeline over a dataset split")
    common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--fpn", required=True)
    p.add_argument("--stage2", required=True, help="stage-2 run directory or checkpoint")
    p.add_argument("--out", required=True)
    p.add_argument("--max-len", type=int, default=80)
    p.add_argument("--limit", type=int, default=None)
    p.add_argument("--use-gt-regions", action="store_true", help="condition on ground-truth regions")
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("eval", help="score a prediction file against a dataset")
    p.add_argument("--predictions", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("qc", help="validate annotations")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--strict", action="store_true", help="exit 1 when any triplet fails")
    p.set_defaults(fn=cmd_qc)

    p = sub.add_parser("stats", help="corpus statistics")
    p.add_argument("--dataset", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_stats)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse uses exit code 2 for usage errors
        return int(exc.code) if exc.code else USAGE_ERROR
    try:
        return args.fn(args)
    except (ContractError, ConfigurationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return VALIDATION_FAILURE
    except (StorageError, TrainingDiverged, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))


if __name__ == "__main__":
    entrypoint()
