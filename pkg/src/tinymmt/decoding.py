"""Length-normalized beam search, post-softmax ensemble averaging, blinding.

An ensemble is a list of models with byte-identical vocabularies and the
same fusion mode; member predictions are combined by arithmetic mean of
the posterior distributions (after the softmax), and the beam accumulates
the log of the averaged probability. A hypothesis score is normalized as
log_prob / length**alpha with length counting generated tokens including
EOS. Ties break by token id, then hypothesis order, so decoding is fully
deterministic; width 1 is exactly stepwise argmax.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Transformer


class DecodeError(ValueError):
    pass


@dataclass
class Hypothesis:
    tokens: list[int]          # generated ids, no BOS, may end with EOS
    log_prob: float

    def normalized(self, alpha: float) -> float:
        return self.log_prob / max(1, len(self.tokens)) ** alpha


def check_ensemble(models: list[Transformer]) -> None:
    if not models:
        raise DecodeError("ensemble needs at least one member")
    head = models[0]
    for member in models[1:]:
        if member.vocab.tokens != head.vocab.tokens:
            raise DecodeError("ensemble members have different vocabularies")
        if member.config.fusion != head.config.fusion:
            raise DecodeError("ensemble members have different fusion modes")


def ensemble_step(models: list[Transformer], prefix_ids: list[int], enc_outputs: list,
                  visual: np.ndarray | None = None) -> np.ndarray:
    """Mean of member posterior distributions after replaying the prefix."""
    check_ensemble(models)
    if len(enc_outputs) != len(models):
        raise DecodeError(f"{len(models)} members but {len(enc_outputs)} encoder outputs")
    total = None
    for model, enc in zip(models, enc_outputs):
        probs = model.next_distribution(
            prefix_ids, enc, visual if model._decoder_visual() else None)
        total = probs if total is None else total + probs
    return total / len(models)


def beam_search(models: Transformer | list[Transformer], src_ids: list[int],
                visual: np.ndarray | None = None, width: int = 5, alpha: float = 0.6,
                max_len: int | None = None) -> Hypothesis:
    """Best hypothesis for one source sentence (single model or ensemble)."""
    if isinstance(models, Transformer):
        models = [models]
    check_ensemble(models)
    if width < 1:
        raise DecodeError(f"beam width must be >= 1, got {width}")
    head = models[0]
    if max_len is None:
        max_len = head.config.max_len - 1
    max_len = min(max_len, head.config.max_len - 1)
    eos = head.vocab.eos_id

    sessions = []
    for model in models:
        enc = model.encode_array(src_ids, visual if model._encoder_visual() else None)
        session = model.session(enc, visual if model._decoder_visual() else None)
        sessions.append(session)

    def advance(member_sessions, token):
        probs = None
        for session in member_sessions:
            p = session.step(token)
            probs = p if probs is None else probs + p
        return probs / len(member_sessions)

    # live beams: (generated tokens, cumulative log prob, member sessions, next dist)
    first = advance(sessions, head.vocab.bos_id)
    live = [([], 0.0, sessions, first)]
    finished: list[Hypothesis] = []

    for _ in range(max_len):
        candidates = []  # (-logp, token, live index)
        for b, (tokens, log_prob, _, dist) in enumerate(live):
            with np.errstate(divide="ignore"):
                log_dist = np.log(dist)
            top = np.argsort(-log_dist, kind="stable")[:width]
            for token in top:
                candidates.append((-(log_prob + log_dist[token]), int(token), b))
        candidates.sort()
        next_live = []
        for neg_logp, token, b in candidates[:width]:
            tokens, _, member_sessions, _ = live[b]
            new_tokens = tokens + [token]
            if token == eos:
                finished.append(Hypothesis(tokens=new_tokens, log_prob=-neg_logp))
            else:
                clones = [s.clone() for s in member_sessions]
                next_live.append((new_tokens, -neg_logp, clones, advance(clones, token)))
        live = next_live
        if not live or len(finished) >= width:
            break

    for tokens, log_prob, _, _ in live:
        if tokens:
            finished.append(Hypothesis(tokens=tokens, log_prob=log_prob))
    if not finished:
        with np.errstate(divide="ignore"):
            return Hypothesis(tokens=[eos], log_prob=float(np.log(first[eos])))
    finished.sort(key=lambda h: (-h.normalized(alpha), h.tokens))
    return finished[0]


def translate_corpus(models: Transformer | list[Transformer], sources: list[list[int]],
                     visuals=None, width: int = 5, alpha: float = 0.6,
                     max_len: int | None = None) -> list[list[int]]:
    """Beam-decode every sentence; returns generated ids without BOS/EOS."""
    if isinstance(models, Transformer):
        models = [models]
    head = models[0]
    eos = head.vocab.eos_id
    outputs = []
    for i, src in enumerate(sources):
        visual = None
        if visuals is not None and head.config.fusion != "none":
            visual = visuals[i]
        best = beam_search(models, src, visual, width=width, alpha=alpha, max_len=max_len)
        outputs.append([t for t in best.tokens if t != eos])
    return outputs
