"""Command-line entry point wiring the library into reproducible recipes.

One executable, subcommand style: preprocess, filter, bpe-learn,
bpe-apply, train, translate, blind-translate, eval. Settings live in a
JSON experiment config (see README for the schema); every command is a
pure function of (config, input files, seed), and outputs are written
atomically so a validation failure never leaves partial files. Errors
print a single ``error: ...`` line on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bpe, corpus, fusion, training
from .checkpoint import load_model, save_model
from .config import ModelConfig
from .decoding import translate_corpus
from .metrics import corpus_bleu, corpus_chrf
from .model import Transformer
from .vocab import Vocabulary


class ConfigError(ValueError):
    pass


# -- experiment config -------------------------------------------------------

_SCHEMA = {
    "seed": int,
    "data": {
        "train_src": str, "train_tgt": str,
        "dev_src": str, "dev_ref": str,
        "features": str, "feature_manifest": str,
    },
    "model": {
        "n_layers": int, "d_model": int, "n_heads": int, "d_ff": int,
        "dropout": float, "label_smoothing": float, "batch_tokens": int,
        "visual_dim": int, "fusion": str, "max_len": int,
        "dec_gate_time_dependent": bool,
    },
    "train": {
        "steps": int, "warmup_steps": int, "base_lr": float,
        "beta1": float, "beta2": float, "epsilon": float,
        "checkpoint_out": str, "seeds": list,
        "freeze_prefixes": list, "log_path": str, "log_every": int,
        "dev_every": int, "dev_beam": int,
    },
    "filter": {
        "method": str, "select": int, "max_len": int, "max_ratio": float,
        "max_symbol_fraction": float, "lm_order": int, "lm_smoothing": float,
        "indomain_src": str, "indomain_tgt": str,
    },
    "bpe": {"target_size": int},
    "tags": {"target_lang": str, "domain": str},
    "decode": {"beam_width": int, "alpha": float, "max_len": int},
}


def _validate(section: dict, schema: dict, path: str) -> None:
    for key, value in section.items():
        if key not in schema:
            raise ConfigError(f"unknown config key '{path}{key}'")
        expected = schema[key]
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key '{path}{key}' must be a section")
            _validate(value, expected, f"{path}{key}.")
        elif expected is float:
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise ConfigError(f"config key '{path}{key}' must be a number")
        elif expected is int:
            if not isinstance(value, int) or isinstance(value, bool):
                raise ConfigError(f"config key '{path}{key}' must be an integer")
        elif not isinstance(value, expected):
            raise ConfigError(f"config key '{path}{key}' must be {expected.__name__}")


class ExperimentConfig:
    """Validated view of the JSON experiment file; unknown keys are rejected."""

    def __init__(self, raw: dict):
        if not isinstance(raw, dict):
            raise ConfigError("experiment config must be a JSON object")
        _validate(raw, _SCHEMA, "")
        self.raw = raw
        model_section = raw.get("model", {})
        self.model = ModelConfig.from_dict(model_section)
        self.seed = raw.get("seed", 0)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path, encoding="utf-8") as f:
                raw = json.load(f)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON ({err})") from None
        try:
            return cls(raw)
        except ValueError as err:
            raise ConfigError(f"{path}: {err}") from None

    def section(self, name: str) -> dict:
        return self.raw.get(name, {})

    def need(self, section: str, key: str):
        value = self.section(section).get(key)
        if value is None:
            raise ConfigError(f"config is missing required key '{section}.{key}'")
        return value


def _atomic_write_lines(path, lines) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        for line in lines:
            f.write(line + "\n")
    os.replace(tmp, path)


def _read_token_lines(path) -> list[list[str]]:
    return [line.split() for line in corpus.read_lines(path)]


# -- subcommands --------------------------------------------------------------

def cmd_preprocess(args) -> int:
    lines = corpus.read_lines(args.input)
    captions = None
    if args.captions:
        caption_lines = corpus.read_lines(args.captions)
        if len(caption_lines) != len(lines):
            raise corpus.CorpusError(f"caption file has {len(caption_lines)} lines, "
                                     f"input has {len(lines)}")
        captions = [[corpus.preprocess(c) for c in line.split("\t") if c.strip()]
                    for line in caption_lines]
    if (args.tag_lang is None) != (args.tag_domain is None):
        raise ConfigError("--tag-lang and --tag-domain must be given together")
    out = []
    for i, line in enumerate(lines):
        tokens = corpus.preprocess(line)
        if captions is not None:
            tokens = corpus.concat_captions(tokens, captions[i][:args.max_captions])
        if args.tag_lang is not None:
            tokens = corpus.tag(tokens, args.tag_lang, args.tag_domain)
        out.append(" ".join(tokens))
    _atomic_write_lines(args.output, out)
    return 0


def cmd_filter(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    section = cfg.section("filter")
    method = section.get("method", "charlm")
    k = cfg.need("filter", "select")

    raw_pairs, dropped_empty = corpus.read_parallel(args.src, args.tgt)
    pairs = [corpus.RawPair(source=" ".join(corpus.preprocess(p.source)),
                            target=" ".join(corpus.preprocess(p.target)),
                            origin=p.origin, pair_id=p.pair_id)
             for p in raw_pairs]

    if method == "punct":
        scored = [corpus.ScoredPair(pair=p, score=corpus.punct_balance_score(
            p.source.split(), p.target.split())) for p in pairs]
        report = corpus.FilterReport(input_pairs=len(pairs),
                                     dropped={"empty": dropped_empty},
                                     survivors=len(pairs))
    elif method == "charlm":
        indomain_src = _read_token_lines(cfg.need("filter", "indomain_src"))
        indomain_tgt = _read_token_lines(cfg.need("filter", "indomain_tgt"))
        whitelist = corpus.build_char_whitelist(
            [" ".join(t) for t in indomain_src + indomain_tgt])
        lm = corpus.CharNgramLM(order=section.get("lm_order", 6),
                                smoothing=section.get("lm_smoothing", 0.01))
        lm.fit([" ".join(t) for t in indomain_tgt])
        scored, report = corpus.charlm_filter(
            pairs, lm, whitelist,
            max_len=section.get("max_len", 100),
            max_ratio=section.get("max_ratio", 2.0),
            max_symbol_fraction=section.get("max_symbol_fraction", 0.5))
        report.dropped = {"empty": dropped_empty, **report.dropped}
    else:
        raise ConfigError(f"unknown filter method '{method}' (expected punct or charlm)")

    selected = corpus.select_top_k(scored, k)
    selected.sort(key=lambda p: p.pair_id)
    _atomic_write_lines(args.out_src, [p.source for p in selected])
    _atomic_write_lines(args.out_tgt, [p.target for p in selected])
    if args.report:
        tmp = f"{args.report}.tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            f.write(report.render())
            f.write(f"selected\t{len(selected)}\n")
        os.replace(tmp, args.report)
    if args.scores:
        _atomic_write_lines(args.scores,
                            [f"{sp.pair.pair_id}\t{sp.score:.6f}" for sp in scored])
    return 0


def cmd_bpe_learn(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    target_size = cfg.need("bpe", "target_size")
    per_lang = {}
    for spec_arg in args.inputs:
        if "=" not in spec_arg:
            raise ConfigError(f"--input expects LANG=PATH, got '{spec_arg}'")
        lang, path = spec_arg.split("=", 1)
        if lang in per_lang:
            raise ConfigError(f"language '{lang}' given twice")
        per_lang[lang] = bpe.word_counts(_read_token_lines(path))
    if not per_lang:
        raise ConfigError("bpe-learn needs at least one --input LANG=PATH")
    if not args.unbalanced:
        per_lang = bpe.balance_counts(per_lang)
    model = bpe.learn(bpe.merge_counts(per_lang), target_size)
    tmp = f"{args.model}.tmp"
    model.save(tmp)
    os.replace(tmp, args.model)
    return 0


def cmd_bpe_apply(args) -> int:
    model = bpe.BpeModel.load(args.model)
    out = [" ".join(bpe.apply(model, line)) for line in _read_token_lines(args.input)]
    _atomic_write_lines(args.output, out)
    return 0


def _load_corpus_features(cfg: ExperimentConfig, model_cfg: ModelConfig, n_lines: int,
                          required: bool):
    data = cfg.section("data")
    feat_path, manifest = data.get("features"), data.get("feature_manifest")
    if feat_path is None or manifest is None:
        if required:
            raise ConfigError(f"fusion mode '{model_cfg.fusion}' needs data.features "
                              "and data.feature_manifest")
        return None
    return fusion.features_for_corpus(feat_path, manifest, model_cfg.visual_dim, n_lines)


def cmd_train(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    model_cfg = cfg.model
    section = cfg.section("train")
    steps = cfg.need("train", "steps")
    out_path = cfg.need("train", "checkpoint_out")

    src_lines = _read_token_lines(cfg.need("data", "train_src"))
    tgt_lines = _read_token_lines(cfg.need("data", "train_tgt"))
    if not src_lines:
        raise training.TrainingError("empty training corpus")
    features = _load_corpus_features(cfg, model_cfg, len(src_lines),
                                     required=model_cfg.uses_visual and args.resume is None)

    def load_resume():
        resume = load_model(args.resume)
        if args.attach_fusion:
            return _attach_fusion(resume, model_cfg, cfg.seed)
        if resume.config.to_dict() != model_cfg.to_dict():
            raise ConfigError("checkpoint model config differs from config file "
                              "(use --attach-fusion to add a fusion path)")
        return resume

    if args.resume:
        vocab = load_resume().vocab
    else:
        vocab = Vocabulary.build(src_lines + tgt_lines)

    dev = None
    data = cfg.section("data")
    if data.get("dev_src") and data.get("dev_ref"):
        dev_src = _read_token_lines(data["dev_src"])
        dev_ref = corpus.read_lines(data["dev_ref"])
        dev = ([vocab.encode(line) for line in dev_src], dev_ref)

    seeds = section.get("seeds", [cfg.seed])
    multi = len(seeds) > 1
    for seed in seeds:
        samples = training.make_samples(src_lines, tgt_lines, vocab,
                                        features if model_cfg.uses_visual else None)
        result = training.train(
            samples, model_cfg, seed=seed, steps=steps, vocab=vocab,
            warmup_steps=section.get("warmup_steps", 8000),
            base_lr=section.get("base_lr", 2.0),
            beta1=section.get("beta1", 0.9), beta2=section.get("beta2", 0.998),
            epsilon=section.get("epsilon", 1e-8),
            resume_model=load_resume() if args.resume else None,
            freeze_prefixes=tuple(section.get("freeze_prefixes", [])),
            dev=dev, dev_every=section.get("dev_every", 0),
            dev_beam=section.get("dev_beam", 1),
            log_path=(f"{section['log_path']}.seed{seed}" if multi else section["log_path"])
            if section.get("log_path") else None,
            log_every=section.get("log_every", 10))
        path = f"{out_path}.seed{seed}" if multi else out_path
        tmp = f"{path}.tmp"
        save_model(tmp, result.model)
        os.replace(tmp, path)
        print(f"checkpoint written: {path}")
    return 0


def _attach_fusion(base: Transformer, target_cfg: ModelConfig, seed: int) -> Transformer:
    """Graft fresh fusion parameters onto a trained text-only checkpoint."""
    base_dict = base.config.to_dict()
    target_dict = target_cfg.to_dict()
    allowed = {"fusion", "visual_dim", "dec_gate_time_dependent"}
    differing = {k for k in base_dict if base_dict[k] != target_dict[k]}
    if not differing <= allowed:
        raise ConfigError(f"--attach-fusion can only change fusion settings, "
                          f"config also differs in {sorted(differing - allowed)}")
    fresh = Transformer(target_cfg, base.vocab, seed=seed)
    for name, p in base.params.items():
        if name in fresh.params:
            fresh.params[name] = p
    return Transformer(target_cfg, base.vocab, params=fresh.params,
                       mean_visual=base.mean_visual)


def cmd_translate(args, force_blind: bool = False) -> int:
    cfg = ExperimentConfig.load(args.config)
    paths = [args.checkpoint] + (args.ensemble or [])
    models = [load_model(p) for p in paths]
    head = models[0]
    blind_mode = force_blind or args.blind

    src_lines = _read_token_lines(args.input)
    sources = [head.vocab.encode(line) for line in src_lines]
    visuals = None
    if head.config.uses_visual:
        if blind_mode:
            provider = fusion.blind(head.mean_visual)
            visuals = [provider[i] for i in range(len(sources))]
        else:
            features = _load_corpus_features(cfg, head.config, len(sources), required=True)
            mean = head.mean_visual if head.mean_visual is not None \
                else fusion.mean_feature(features)
            visuals = [f if f is not None else mean for f in features]

    section = cfg.section("decode")
    outputs = translate_corpus(models, sources, visuals,
                               width=section.get("beam_width", 5),
                               alpha=section.get("alpha", 0.6),
                               max_len=section.get("max_len"))
    lines = [" ".join(bpe.detokenize(head.vocab.decode(ids), strict=False)) for ids in outputs]
    _atomic_write_lines(args.output, lines)
    return 0


def cmd_eval(args) -> int:
    hyps = corpus.read_lines(args.hyp)
    refs = corpus.read_lines(args.ref)
    print(f"BLEU = {corpus_bleu(hyps, refs):.2f}")
    print(f"chrF1 = {corpus_chrf(hyps, refs, beta=args.beta):.2f}")
    return 0


# -- argument parsing ----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tinymmt",
        description="Desk-scale multimodal translation laboratory.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="clean, tokenize, optionally tag and concat captions")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--tag-lang", choices=("de", "fr"))
    p.add_argument("--tag-domain", choices=("caption", "synthetic", "subtitles"))
    p.add_argument("--captions", help="tab-separated automatic captions, line-aligned")
    p.add_argument("--max-captions", type=int, default=5)
    p.set_defaults(run=cmd_preprocess)

    p = sub.add_parser("filter", help="score and select the best sentence pairs")
    p.add_argument("--config", required=True)
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--out-src", required=True)
    p.add_argument("--out-tgt", required=True)
    p.add_argument("--report")
    p.add_argument("--scores")
    p.set_defaults(run=cmd_filter)

    p = sub.add_parser("bpe-learn", help="learn a balanced shared subword model")
    p.add_argument("--config", required=True)
    p.add_argument("--input", dest="inputs", action="append", default=[],
                   metavar="LANG=PATH", help="may be repeated")
    p.add_argument("--model", required=True)
    p.add_argument("--unbalanced", action="store_true",
                   help="skip per-language count balancing")
    p.set_defaults(run=cmd_bpe_learn)

    p = sub.add_parser("bpe-apply", help="segment a tokenized corpus")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(run=cmd_bpe_apply)

    p = sub.add_parser("train", help="train (or resume/finetune) a model")
    p.add_argument("--config", required=True)
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--attach-fusion", action="store_true",
                   help="add fresh fusion parameters to a text-only checkpoint")
    p.set_defaults(run=cmd_train)

    p = sub.add_parser("translate", help="beam-decode a corpus")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ensemble", nargs="*", help="further checkpoints to average")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--blind", action="store_true",
                   help="replace every visual feature with the training-set mean")
    p.set_defaults(run=cmd_translate)

    p = sub.add_parser("blind-translate", help="translate with mean-feature blinding")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--ensemble", nargs="*")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(run=lambda a: cmd_translate(a, force_blind=True), blind=True)

    p = sub.add_parser("eval", help="print BLEU and chrF for two text files")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.set_defaults(run=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.run(args)
    except (ConfigError, ValueError, OSError, training.TrainingError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
