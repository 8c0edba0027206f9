"""Command-line entry point.

Subcommands cover the whole workflow:

  generate        synthesize a multilingual corpus from a language + schema spec
  train           stage-1 or stage-2 training (stage 2 resumes a stage-1 checkpoint)
  eval            score a checkpoint on a corpus split and write reports
  ablate          run a named ablation sweep
  inspect-router  export the router selection heatmap CSV

Every command is deterministic given (config, seed, inputs), writes its
resolved config snapshot next to its outputs, and never mutates input files.
Exit codes: 0 success, 2 usage/config error, 3 data validation error,
4 numerical failure. The RELMUX_OUT_ROOT environment variable supplies the
default parent directory for --out paths.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .ablation import ABLATION_NAMES, run_ablation
from .config import RunConfig, load_run_config, save_config_snapshot
from .corpus import LanguageRegistry, generate_corpus, load_corpus, GeneratorConfig
from .errors import ConfigError, DataValidationError, NumericsError, RelmuxError
from .evaluation import dump_predictions, evaluate_model, export_router_heatmap, write_report
from .model import Model
from .training import TrainLog, run_summary, train_stage1, train_stage2

EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _resolve_out(path: str) -> Path:
    root = os.environ.get("RELMUX_OUT_ROOT")
    p = Path(path)
    if root and not p.is_absolute():
        p = Path(root) / p
    p.mkdir(parents=True, exist_ok=True)
    return p


def _load_lang_schema(langs_path: str, schema_path: str) -> LanguageRegistry:
    """The language registry and relation schema may live in one file or two;
    both flags may point at the same JSON document."""
    langs_doc = json.loads(Path(langs_path).read_text(encoding="utf-8"))
    if schema_path and schema_path != langs_path:
        schema_doc = json.loads(Path(schema_path).read_text(encoding="utf-8"))
        merged = dict(langs_doc)
        for key in ("relations", "allowed"):
            if key in schema_doc:
                merged[key] = schema_doc[key]
        langs_doc = merged
    return LanguageRegistry.from_json(langs_doc)


def cmd_generate(args) -> int:
    out = _resolve_out(args.out)
    registry_in = _load_lang_schema(args.langs, args.schema or args.langs)
    gen = GeneratorConfig()
    if args.no_relation_fraction is not None:
        gen.no_relation_fraction = args.no_relation_fraction
    if args.family_share is not None:
        gen.family_share = args.family_share
    corpus = generate_corpus(registry_in.languages, registry_in.schema, seed=args.seed, gen=gen)
    from .corpus import save_corpus
    from .encoder import Vocab

    save_corpus(out, corpus)
    vocab = Vocab(corpus.registry.content_vocab(), corpus.registry.n_languages)
    vocab.save(out / "vocab.txt")
    (out / "generate_snapshot.json").write_text(
        json.dumps({"seed": args.seed, "langs": args.langs, "schema": args.schema,
                    "no_relation_fraction": gen.no_relation_fraction,
                    "family_share": gen.family_share}, sort_keys=True, indent=1) + "\n",
        encoding="utf-8",
    )
    print(f"{'language':<10} {'train':>7} {'dev':>6} {'test':>6}")
    for lang in corpus.registry.languages:
        counts = [sum(1 for e in corpus.split(s) if e.lang == lang.id) for s in ("train", "dev", "test")]
        print(f"{lang.code:<10} {counts[0]:>7} {counts[1]:>6} {counts[2]:>6}")
    print(f"wrote corpus to {out}")
    return 0


def _load_run(args) -> tuple[RunConfig, Path]:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, train=replace(cfg.train, seed=args.seed))
    if getattr(args, "corpus", None):
        cfg = replace(cfg, corpus_dir=args.corpus)
    if not cfg.corpus_dir:
        raise ConfigError("no corpus directory: set corpus_dir in the config or pass --corpus")
    out = _resolve_out(args.out)
    cfg = replace(cfg, out_dir=str(out))
    cfg.validate()
    return cfg, out


def cmd_train(args) -> int:
    cfg, out = _load_run(args)
    corpus = load_corpus(cfg.corpus_dir)
    save_config_snapshot(cfg, out / "config_snapshot.json")
    log = TrainLog()
    if args.stage == 1:
        if args.resume:
            model, snap, extra = Model.load(args.resume, corpus.registry)
            if extra is None or extra.get("stage") != 1:
                raise ConfigError("--resume for stage 1 expects a stage-1 training checkpoint")
            ckpt = train_stage1(model, corpus, cfg, out, log, resume_extra=extra)
        else:
            model = Model.build(replace(cfg.model), corpus.registry, init_seed=cfg.train.seed)
            ckpt = train_stage1(model, corpus, cfg, out, log)
    else:
        if not args.resume:
            raise ConfigError("stage 2 requires --resume pointing at a stage-1 checkpoint")
        model, snap, extra = Model.load(args.resume, corpus.registry)
        if model.stage < 1:
            raise ConfigError("--resume checkpoint has not completed stage 1")
        ckpt = train_stage2(model, corpus, cfg, out, log)
    report = evaluate_model(model, corpus.dev, corpus.registry)
    run_summary(out, cfg, {
        "stage": args.stage,
        "checkpoint": str(ckpt),
        "dev_triple_f1": report.overall.triple_f1,
        "dev_macro_triple_f1": report.macro_avg["triple_f1"],
    })
    print(f"stage {args.stage} done; checkpoint at {ckpt}; dev triple-F1 {report.overall.triple_f1:.4f}")
    return 0


def cmd_eval(args) -> int:
    out = _resolve_out(args.out)
    corpus = load_corpus(args.corpus)
    model, snap, _ = Model.load(args.ckpt, corpus.registry)
    if args.topk is not None and not 1 <= args.topk <= model.cfg.n_sub_modules:
        raise ConfigError(f"--topk must be in [1, {model.cfg.n_sub_modules}]")
    examples = corpus.split(args.split)
    preds = [model.predict(ex, top_k=args.topk, dump_scores=args.dump_scores) for ex in examples]
    from .evaluation import report_from_predictions

    report = report_from_predictions(preds, examples, corpus.registry, model=model)
    write_report(report, out)
    dump_predictions(preds, examples, corpus.registry, out / "predictions.jsonl", include_scores=args.dump_scores)
    if model.stage >= 2 and model.cfg.routing == "learned":
        export_router_heatmap(model, out / "router_heatmap.csv")
    snapshot = {"ckpt": str(args.ckpt), "split": args.split, "topk": args.topk}
    (out / "eval_snapshot.json").write_text(json.dumps(snapshot, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    print(f"split={args.split} micro triple-F1 {report.overall.triple_f1:.4f} "
          f"macro {report.macro_avg['triple_f1']:.4f}; reports in {out}")
    return 0


def cmd_ablate(args) -> int:
    cfg, out = _load_run(args)
    corpus = load_corpus(cfg.corpus_dir)
    save_config_snapshot(cfg, out / "config_snapshot.json")
    rows = run_ablation(args.name, corpus, cfg, out, jobs=args.jobs)
    print(f"ablation {args.name}: {len(rows)} rows written to {out / (args.name + '.csv')}")
    return 0


def cmd_inspect_router(args) -> int:
    corpus = load_corpus(args.corpus)
    model, snap, _ = Model.load(args.ckpt, corpus.registry)
    out_path = Path(args.out) if args.out else Path(args.ckpt).with_suffix(".router.csv")
    export_router_heatmap(model, out_path)
    print(f"router heatmap written to {out_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relmux", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="synthesize a multilingual corpus")
    p.add_argument("--langs", required=True, help="language registry JSON")
    p.add_argument("--schema", default=None, help="relation schema JSON (may equal --langs)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--no-relation-fraction", type=float, default=None, dest="no_relation_fraction")
    p.add_argument("--family-share", type=float, default=None, dest="family_share")
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--resume", default=None)
    p.add_argument("--corpus", default=None, help="override corpus_dir from the config")
    p.add_argument("--seed", type=int, default=None, help="override train.seed from the config")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--split", choices=("train", "dev", "test"), default="test")
    p.add_argument("--topk", type=int, default=None)
    p.add_argument("--dump-scores", action="store_true", dest="dump_scores")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("ablate", help="run an ablation sweep")
    p.add_argument("--name", required=True, choices=ABLATION_NAMES)
    p.add_argument("--config", required=True)
    p.add_argument("--corpus", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1, help="parallel variant runs")
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("inspect-router", help="export the router heatmap CSV")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_inspect_router)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NumericsError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataValidationError as exc:
        print(f"data validation error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RelmuxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
