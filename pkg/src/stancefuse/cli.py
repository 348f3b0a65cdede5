"""Command-line entry point: ``fixture``, ``train``, ``eval``, ``ablate``, ``infer``.

Every command writes ``resolved_config.json`` beside its outputs. Exit codes:
0 ok, 2 config, 3 data, 4 transport, 5 numeric, 6 contract, 1 other.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .config import AblationVariant, RunConfig, resolve_config
from .context import ContextCache, ContextClient
from .dataset import (
    ExampleRecord,
    StanceLabel,
    compute_split_stats,
    generate_fixture,
    load_manifest,
    separable_counts,
)
from .errors import ConfigError, StanceFuseError
from .fusion import forward, graph_parameters, init_model
from .metrics import MetricsReport, evaluate, write_roc_csvs
from .params import ParamStore
from .pipeline import ExampleContext, extract_context, prepare_example, prepare_examples, vocab_corpus
from .tensor import no_grad
from .text import Vocab, build_vocab
from .training import EpochRecord, TrainConfig, predict, train

log = logging.getLogger("stancefuse")

CHECKPOINT_NAME = "checkpoint.bin"
VOCAB_NAME = "vocab.json"
# Reference scores for the full-scale model (pretrained backbones, real data).
# Reported next to ablation tables for comparison; never expected at toy scale.
REFERENCE_F1 = {
    "FULL": 0.762,
    "WO_FUSION": 0.754,
    "WO_CAPTIONING": 0.752,
    "WO_SUMMARIZATION": 0.7347,
    "WO_JTMO": 0.7345,
}


@dataclass
class TrainResult:
    out_dir: Path
    store: ParamStore
    vocab: Vocab
    history: list[EpochRecord]
    wiring: dict = field(default_factory=dict)


def _image_root(cfg: RunConfig) -> Path:
    if cfg.image_root:
        return Path(cfg.image_root)
    if not cfg.manifest:
        raise ConfigError("a manifest path is required")
    return Path(cfg.manifest).parent


def _records(cfg: RunConfig) -> list[ExampleRecord]:
    if not cfg.manifest:
        raise ConfigError("a manifest path is required")
    return load_manifest(cfg.manifest, cfg.image_root or None)


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg.write(out / "resolved_config.json")
    return out


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps, batch_size=cfg.batch_size,
        epochs=cfg.epochs, seed=cfg.seed, freeze_encoders=cfg.freeze_encoders,
    )


def _contexts(cfg, records, client, variant, split=None) -> list[ExampleContext]:
    chosen = [r for r in records if split is None or r.split == split]
    return extract_context(chosen, client, variant, _image_root(cfg), cfg.caption_prompt)


# --------------------------------------------------------------------------- commands


def cmd_fixture(out_dir, kind: str = "full", seed: int = 0, image_size: int = 16,
                train_per_class: int = 20, eval_per_class: int = 4) -> list[ExampleRecord]:
    out = Path(out_dir)
    if kind == "full":
        records = generate_fixture(out, seed=seed, image_size=image_size)
    elif kind == "separable":
        counts = separable_counts(train_per_class, eval_per_class)
        records = generate_fixture(out, counts=counts, videos={"train": 6, "dev": 3, "test": 3},
                                   seed=seed, image_size=image_size, separable=True)
    else:
        raise ConfigError(f"unknown fixture kind {kind!r}")
    fixture_args = {"kind": kind, "seed": seed, "image_size": image_size, "train_per_class": train_per_class,
                    "eval_per_class": eval_per_class}
    (out / "fixture_config.json").write_text(json.dumps(fixture_args, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    stats = compute_split_stats(records)
    (out / "split_stats.json").write_text(json.dumps(stats.as_table(), indent=2) + "\n", encoding="utf-8")
    return records


def cmd_train(cfg: RunConfig, records: Sequence[ExampleRecord] | None = None,
              cache: ContextCache | None = None) -> TrainResult:
    variant = cfg.ablation
    records = _records(cfg) if records is None else list(records)
    if not any(r.split == "train" for r in records):
        raise ConfigError("the manifest has no train split")
    out = _out(cfg)
    client = ContextClient.from_config(cfg)
    if cache is not None:
        client.cache = cache
    model_cfg = cfg.model_config()
    train_ctx = _contexts(cfg, records, client, variant, "train")
    dev_ctx = _contexts(cfg, records, client, variant, "dev")
    vocab = build_vocab(vocab_corpus(train_ctx), cfg.min_freq)
    train_ex = prepare_examples(train_ctx, vocab, model_cfg, variant, _image_root(cfg))
    dev_ex = prepare_examples(dev_ctx, vocab, model_cfg, variant, _image_root(cfg))
    store = init_model(model_cfg, len(vocab), variant, cfg.seed)
    store, history = train(train_ex, dev_ex, store, model_cfg, _train_config(cfg), variant,
                           log_path=out / "epoch_log.jsonl")
    store.save(out / CHECKPOINT_NAME)
    vocab.save(out / VOCAB_NAME)
    # Graph census needs recorded parents, so trace one example with grad on.
    traced = forward(train_ex[0], store, model_cfg, variant)
    wiring = {
        "variant": variant.value,
        "summarizer_calls": client.stats["summarize"],
        "captioner_calls": client.stats["caption"],
        "caption_segment_tokens": sum(ex.joint.caption_length for ex in train_ex + dev_ex if ex.joint),
        "joint_inputs": sum(1 for ex in train_ex + dev_ex if ex.joint),
        "classifier_input_width": traced.fused.width,
        "graph_parameters": sorted(graph_parameters(traced.logits)),
        "n_parameters": store.num_parameters(),
    }
    (out / "wiring.json").write_text(json.dumps(wiring, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return TrainResult(out, store, vocab, history, wiring)


def _load_trained(cfg: RunConfig, checkpoint) -> tuple[ParamStore, Vocab]:
    checkpoint = Path(checkpoint or cfg.checkpoint or Path(cfg.out_dir) / CHECKPOINT_NAME)
    store = ParamStore.load(checkpoint)
    vocab = Vocab.load(checkpoint.parent / VOCAB_NAME)
    store.check_compatible(init_model(cfg.model_config(), len(vocab), cfg.ablation, cfg.seed))
    return store, vocab


def cmd_eval(cfg: RunConfig, checkpoint=None, split: str | None = None, roc: bool = False,
             records: Sequence[ExampleRecord] | None = None, cache: ContextCache | None = None) -> MetricsReport:
    split = split or cfg.eval_split
    variant = cfg.ablation
    store, vocab = _load_trained(cfg, checkpoint)
    records = _records(cfg) if records is None else list(records)
    client = ContextClient.from_config(cfg)
    if cache is not None:
        client.cache = cache
    ctx = _contexts(cfg, records, client, variant, split)
    if not ctx:
        raise ConfigError(f"split {split!r} is empty")
    examples = prepare_examples(ctx, vocab, cfg.model_config(), variant, _image_root(cfg))
    preds, probs = predict(examples, store, cfg.model_config(), variant)
    truth = [ex.label for ex in examples]
    report = evaluate(preds, truth, probs)
    out = _out(cfg)
    report.write(out / "metrics.json")
    if roc:
        write_roc_csvs(probs, truth, out)
    return report


ABLATION_COLUMNS = ("accuracy", "precision", "recall", "f1")


def cmd_ablate(cfg: RunConfig) -> list[dict]:
    records = _records(cfg)
    out = _out(cfg)
    cache = ContextCache(cfg.cache or None)
    rows = []
    for variant in AblationVariant:
        vcfg = cfg.replace(variant=variant.value, out_dir=str(out / variant.value.lower()))
        row = {"variant": variant.value}
        try:
            result = cmd_train(vcfg, records, cache)
            report = cmd_eval(vcfg, result.out_dir / CHECKPOINT_NAME, records=records, cache=cache)
            row.update(
                accuracy=report.accuracy, precision=report.precision_weighted,
                recall=report.recall_weighted, f1=report.f1_weighted, status="ok",
                classifier_input_width=result.wiring["classifier_input_width"],
                summarizer_calls=result.wiring["summarizer_calls"],
                caption_segment_tokens=result.wiring["caption_segment_tokens"],
            )
        except StanceFuseError as exc:
            log.error("variant %s failed: %s", variant.value, exc)
            row.update({c: None for c in ABLATION_COLUMNS}, status=f"failed: {exc}")
        row["reference_f1"] = REFERENCE_F1[variant.value]
        rows.append(row)
    cache.flush()
    lines = ["\t".join(("variant",) + ABLATION_COLUMNS + ("status",))]
    for row in rows:
        vals = ["" if row[c] is None else f"{row[c]:.4f}" for c in ABLATION_COLUMNS]
        lines.append("\t".join([row["variant"], *vals, "ok" if row["status"] == "ok" else "FAILED"]))
    (out / "ablation.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (out / "ablation.json").write_text(json.dumps(rows, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return rows


def cmd_infer(cfg: RunConfig, checkpoint, topic: str, transcript: str, image) -> dict:
    variant = cfg.ablation
    store, vocab = _load_trained(cfg, checkpoint)
    rec = ExampleRecord("infer", "test", topic, transcript, Path(image).name, StanceLabel.SUPPORT, "infer")
    client = ContextClient.from_config(cfg)
    (ctx,) = extract_context([rec], client, variant, Path(image).parent, cfg.caption_prompt)
    ex = prepare_example(ctx, vocab, cfg.model_config(), variant, Path(image).parent)
    with no_grad():
        pred = forward(ex, store, cfg.model_config(), variant)
    out = _out(cfg)
    result = {
        "label": pred.label.name,
        "probabilities": {lab.name: float(pred.probabilities[lab]) for lab in StanceLabel},
        "summary": ctx.summary,
        "caption": ctx.caption,
        "variant": variant.value,
    }
    (out / "prediction.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return result


# --------------------------------------------------------------------------- argparse


def _parse_sets(pairs: Sequence[str]) -> dict[str, str]:
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {pair!r}")
        out[key.strip()] = value
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stancefuse", description="Multimodal stance detection toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    fx = sub.add_parser("fixture", help="write a synthetic manifest + images")
    fx.add_argument("--out", required=True)
    fx.add_argument("--kind", choices=("full", "separable"), default="full")
    fx.add_argument("--seed", type=int, default=0)
    fx.add_argument("--image-size", type=int, default=16)
    fx.add_argument("--train-per-class", type=int, default=20)
    fx.add_argument("--eval-per-class", type=int, default=4)

    def common(p):
        p.add_argument("--config")
        p.add_argument("--out", dest="out_dir")
        p.add_argument("--manifest")
        p.add_argument("--image-root", dest="image_root")
        p.add_argument("--cache")
        p.add_argument("--backend", choices=("stub", "external"))
        p.add_argument("--variant")
        p.add_argument("--seed", type=int)
        p.add_argument("--set", dest="sets", action="append", default=[], metavar="KEY=VALUE")

    for name in ("train", "ablate"):
        p = sub.add_parser(name)
        common(p)
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--batch-size", dest="batch_size", type=int)

    ev = sub.add_parser("eval")
    common(ev)
    ev.add_argument("--checkpoint")
    ev.add_argument("--split", choices=("train", "dev", "test"))
    ev.add_argument("--roc", action="store_true", help="also write per-class ROC CSVs")

    inf = sub.add_parser("infer")
    common(inf)
    inf.add_argument("--checkpoint")
    inf.add_argument("--topic", required=True)
    inf.add_argument("--transcript", required=True)
    inf.add_argument("--image", required=True)
    return parser


_OVERRIDE_KEYS = ("out_dir", "manifest", "image_root", "cache", "backend", "variant", "seed",
                  "epochs", "lr", "batch_size")


def _resolve(args) -> RunConfig:
    overrides = {k: getattr(args, k) for k in _OVERRIDE_KEYS if hasattr(args, k)}
    overrides.update(_parse_sets(args.sets))
    if getattr(args, "checkpoint", None):
        overrides["checkpoint"] = args.checkpoint
    return resolve_config(args.config, overrides)


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "fixture":
            records = cmd_fixture(args.out, args.kind, args.seed, args.image_size,
                                  args.train_per_class, args.eval_per_class)
            table = compute_split_stats(records).as_table()
            print("\t".join(table[0]))
            for row in table:
                print("\t".join(str(v) for v in row.values()))
            return 0
        cfg = _resolve(args)
        if args.command == "train":
            result = cmd_train(cfg)
            last = result.history[-1] if result.history else None
            print(json.dumps({"out_dir": str(result.out_dir), "last_epoch": last and last.__dict__}, sort_keys=True))
        elif args.command == "eval":
            print(cmd_eval(cfg, args.checkpoint, args.split, args.roc).to_json())
        elif args.command == "ablate":
            rows = cmd_ablate(cfg)
            print((Path(cfg.out_dir) / "ablation.tsv").read_text(encoding="utf-8"), end="")
            if any(r["status"] != "ok" for r in rows):
                return 1
        elif args.command == "infer":
            print(json.dumps(cmd_infer(cfg, args.checkpoint, args.topic, args.transcript, args.image),
                             indent=2, sort_keys=True))
    except StanceFuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
