"""Token-batched training loop with resume, freezing, and dev-BLEU logging.

Batches are built by shuffling the sample order, sorting within shards by
length, and packing sentences until the padded token budget is reached.
All randomness (shuffling, dropout masks, parameter init) flows from the
single seed passed in, so two runs with the same seed produce
bit-identical parameters.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import bpe
from .autodiff import Adam
from .config import ModelConfig
from .decoding import translate_corpus
from .fusion import mean_feature
from .metrics import corpus_bleu
from .model import Transformer
from .vocab import Vocabulary


class TrainingError(ValueError):
    pass


@dataclass
class ParallelSample:
    src_ids: list[int]
    tgt_ids: list[int]                 # gold target ids, EOS appended
    visual: np.ndarray | None = None
    domain: str | None = None
    target_lang: str | None = None


def make_samples(src_lines: list[list[str]], tgt_lines: list[list[str]], vocab: Vocabulary,
                 features=None) -> list[ParallelSample]:
    """Encode tokenized parallel lines; features is an optional per-line list."""
    if len(src_lines) != len(tgt_lines):
        raise TrainingError(f"parallel corpus mismatch: {len(src_lines)} vs {len(tgt_lines)} lines")
    samples = []
    for i, (src, tgt) in enumerate(zip(src_lines, tgt_lines)):
        visual = features[i] if features is not None else None
        samples.append(ParallelSample(src_ids=vocab.encode(src),
                                      tgt_ids=vocab.encode(tgt) + [vocab.eos_id],
                                      visual=visual))
    return samples


def token_batches(samples: list[ParallelSample], batch_tokens: int,
                  rng: np.random.Generator, shard_size: int = 512) -> list[list[int]]:
    """Deterministic packed batches of sample indices for one epoch.

    Shuffle, cut into shards, sort each shard by length, then pack greedily
    so that n_sentences * (max src len + max tgt len) stays within budget.
    """
    order = rng.permutation(len(samples))
    batches: list[list[int]] = []
    for shard_start in range(0, len(order), shard_size):
        shard = sorted(order[shard_start:shard_start + shard_size],
                       key=lambda i: (len(samples[i].tgt_ids), len(samples[i].src_ids), i))
        batch: list[int] = []
        max_src = max_tgt = 0
        for i in shard:
            src_n, tgt_n = len(samples[i].src_ids), len(samples[i].tgt_ids)
            new_src, new_tgt = max(max_src, src_n), max(max_tgt, tgt_n)
            if batch and (len(batch) + 1) * (new_src + new_tgt) > batch_tokens:
                batches.append(batch)
                batch, max_src, max_tgt = [], 0, 0
                new_src, new_tgt = src_n, tgt_n
            batch.append(int(i))
            max_src, max_tgt = new_src, new_tgt
        if batch:
            batches.append(batch)
    return batches


def pad_batch(samples: list[ParallelSample], indices: list[int], pad_id: int):
    """Pad one batch to rectangular id/mask arrays (plus stacked features)."""
    chosen = [samples[i] for i in indices]
    max_src = max(len(s.src_ids) for s in chosen)
    max_tgt = max(len(s.tgt_ids) for s in chosen)
    n = len(chosen)
    src = np.full((n, max_src), pad_id, dtype=np.int64)
    tgt = np.full((n, max_tgt), pad_id, dtype=np.int64)
    src_real = np.zeros((n, max_src), dtype=bool)
    tgt_real = np.zeros((n, max_tgt), dtype=bool)
    for row, s in enumerate(chosen):
        src[row, :len(s.src_ids)] = s.src_ids
        src_real[row, :len(s.src_ids)] = True
        tgt[row, :len(s.tgt_ids)] = s.tgt_ids
        tgt_real[row, :len(s.tgt_ids)] = True
    visual = None
    if chosen[0].visual is not None:
        visual = np.stack([np.asarray(s.visual, dtype=np.float64) for s in chosen])
    return src, src_real, tgt, tgt_real, visual


@dataclass
class TrainResult:
    model: Transformer
    history: list[dict] = field(default_factory=list)   # step/loss/lr/dev_bleu records


def attach_visuals(samples: list[ParallelSample], visual_dim: int) -> np.ndarray:
    """Fill text-only samples with the corpus mean feature; returns the mean."""
    mean = mean_feature([s.visual for s in samples])
    if mean.shape != (visual_dim,):
        raise TrainingError(f"visual features have width {mean.shape[0]}, config says {visual_dim}")
    for s in samples:
        if s.visual is None:
            s.visual = mean
    return mean


def train(samples: list[ParallelSample], config: ModelConfig, seed: int,
          steps: int, vocab: Vocabulary, warmup_steps: int = 8000, base_lr: float = 2.0,
          beta1: float = 0.9, beta2: float = 0.998, epsilon: float = 1e-8,
          resume_model: Transformer | None = None, freeze_prefixes: tuple = (),
          dev: tuple | None = None, dev_every: int = 0, dev_beam: int = 1,
          log_path=None, log_every: int = 10,
          stop_condition=None, stop_every: int = 0) -> TrainResult:
    """Train for ``steps`` optimizer updates; returns the model and its log.

    ``resume_model`` continues from existing parameters (domain tuning or
    gate finetuning); ``freeze_prefixes`` excludes matching parameter
    names from the update and from gradient accumulation. ``dev`` is an
    optional (sources, reference texts) pair decoded every ``dev_every``
    steps with greedy/beam search to log a dev BLEU. ``stop_condition``
    (model, step) is polled every ``stop_every`` steps for early stopping.
    """
    if not samples:
        raise TrainingError("empty training corpus")
    if resume_model is not None and resume_model.vocab.tokens != vocab.tokens:
        raise TrainingError("vocabulary mismatch between checkpoint and corpus")

    if resume_model is not None:
        model = resume_model
    else:
        model = Transformer(config, vocab, seed=seed)
    if config.uses_visual:
        if any(s.visual is not None for s in samples):
            mean = attach_visuals(samples, config.visual_dim)
            if model.mean_visual is None:
                model.mean_visual = mean
        elif model.mean_visual is not None:
            # text-only corpus (e.g. domain tuning): reuse the stored mean everywhere
            for s in samples:
                s.visual = model.mean_visual
        else:
            raise TrainingError("multimodal training needs visual features "
                                "or a checkpoint with a stored mean feature")

    for name, p in model.params.items():
        p.requires_grad = not any(name.startswith(pref) for pref in freeze_prefixes)
    optimizer = Adam(model.trainable(freeze_prefixes), d_model=config.d_model,
                     base_lr=base_lr, beta1=beta1, beta2=beta2, epsilon=epsilon,
                     warmup_steps=warmup_steps)

    batch_rng = np.random.default_rng([seed, 1])
    dropout_rng = np.random.default_rng([seed, 2])
    history: list[dict] = []
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        step = 0
        stopped = False
        while step < steps and not stopped:
            for batch in token_batches(samples, config.batch_tokens, batch_rng):
                src, src_real, tgt, tgt_real, visual = pad_batch(samples, batch, vocab.pad_id)
                loss = model.forward_loss(src, src_real, tgt, tgt_real, visual,
                                          train=True, rng=dropout_rng)
                loss.backward()
                lr = optimizer.step()
                step += 1
                record = {"step": step, "loss": loss.item(), "lr": lr, "dev_bleu": None}
                if dev is not None and dev_every > 0 and step % dev_every == 0:
                    record["dev_bleu"] = evaluate_dev(model, dev, width=dev_beam)
                if step % log_every == 0 or step == steps or record["dev_bleu"] is not None:
                    history.append(record)
                    if log_file:
                        log_file.write(json.dumps(record, sort_keys=True) + "\n")
                if stop_condition is not None and stop_every > 0 and step % stop_every == 0 \
                        and stop_condition(model, step):
                    stopped = True
                if step >= steps or stopped:
                    break
    finally:
        if log_file:
            log_file.close()
    return TrainResult(model=model, history=history)


def evaluate_dev(model: Transformer, dev: tuple, width: int = 1) -> float:
    """Greedy/beam BLEU on (src id lists, reference texts); add-one smoothed
    so tiny dev sets still produce a usable training signal."""
    sources, references = dev
    visuals = None
    if model.config.uses_visual:
        if model.mean_visual is None:
            raise TrainingError("multimodal model has no mean feature for dev decoding")
        visuals = [model.mean_visual] * len(sources)
    outputs = translate_corpus(model, sources, visuals, width=width)
    hyps = [" ".join(bpe.detokenize(model.vocab.decode(ids), strict=False)) for ids in outputs]
    return corpus_bleu(hyps, references, smooth=True)


def token_accuracy(model: Transformer, samples: list[ParallelSample]) -> float:
    """Teacher-forced argmax accuracy over non-pad target positions."""
    correct = 0
    total = 0
    for chunk_start in range(0, len(samples), 64):
        chunk = list(range(chunk_start, min(chunk_start + 64, len(samples))))
        src, src_real, tgt, tgt_real, visual = pad_batch(
            samples, chunk, model.vocab.pad_id)
        bos = np.full((tgt.shape[0], 1), model.vocab.bos_id, dtype=tgt.dtype)
        tgt_in = np.concatenate([bos, tgt[:, :-1]], axis=1)
        enc = model.encode(src, src_real, visual if model._encoder_visual() else None)
        logits = model.decode_train(tgt_in, enc, visual if model._decoder_visual() else None)
        predictions = logits.data.argmax(axis=-1)
        correct += int(((predictions == tgt) & tgt_real).sum())
        total += int(tgt_real.sum())
    return correct / total if total else 0.0
