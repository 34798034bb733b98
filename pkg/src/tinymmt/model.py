"""Transformer encoder-decoder over the autodiff tensor library.

Two forward paths share one parameter set:

* a batched graph path used for training (padded [batch, time] inputs,
  boolean masks, dropout, gradients);
* an incremental numpy path used for decoding, which computes attention
  row by row with hard slicing. A row's arithmetic therefore depends only
  on its own position, never on the total prefix length, which makes
  stepwise decoding bit-identical to recomputing the whole prefix.

Residual placement is post-norm: ``norm(x + dropout(sublayer(x)))``.
Source and target share one embedding table, which is also tied to the
output projection; embeddings are scaled by sqrt(d_model) before the
sinusoidal position encoding is added. Dropout is applied only inside the
residual wrapper, from masks drawn off a caller-supplied generator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import fusion
from .autodiff import Tensor
from .config import ModelConfig
from .vocab import Vocabulary

ENCODER_VISUAL_MODES = ("img_w", "enc_gate", "enc_dec_gate")
DECODER_VISUAL_MODES = ("dec_gate", "enc_dec_gate", "trg_mul")


def positional_encoding(length: int, d_model: int) -> np.ndarray:
    """Sinusoidal positions: PE[p, 2i] = sin(p / 10000^(2i/d)), PE[p, 2i+1] = cos(same)."""
    if length <= 0 or d_model <= 0:
        raise ValueError(f"positional_encoding: length and d_model must be positive, "
                         f"got {length}, {d_model}")
    if d_model % 2 != 0:
        raise ValueError(f"positional_encoding: d_model must be even, got {d_model}")
    positions = np.arange(length, dtype=np.float64)[:, None]
    even = np.arange(0, d_model, 2, dtype=np.float64)
    angles = positions / np.power(10000.0, even / d_model)
    pe = np.empty((length, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles)
    return pe


def causal_mask(length: int) -> np.ndarray:
    """True above the diagonal: position q may not attend keys k > q."""
    return np.triu(np.ones((length, length), dtype=bool), k=1)


def attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Scaled dot-product attention; ``mask`` is True where attention is blocked.

    Scores are divided by sqrt(key width); blocked positions are filled
    with -inf before the softmax, so they receive exactly zero weight.
    """
    d_k = q.shape[-1]
    if k.shape[-1] != d_k:
        raise ad.ShapeError(f"attention: query width {d_k} != key width {k.shape[-1]}")
    scores = ad.scale(ad.matmul(q, ad.transpose(k, _swap_last(k.ndim))), d_k ** -0.5)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape[-1] != k.shape[-2] or mask.shape[-2] not in (1, q.shape[-2]):
            raise ad.ShapeError(f"attention: mask shape {mask.shape} does not match "
                                f"queries {q.shape} / keys {k.shape}")
        scores = ad.masked_fill(scores, mask, -np.inf)
    return ad.matmul(ad.softmax(scores), v)


def _swap_last(ndim: int) -> tuple:
    axes = list(range(ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def multi_head_attention(params: dict, prefix: str, n_heads: int, query_in: Tensor,
                         kv_in: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Project to heads, attend in parallel, concatenate, project back."""
    d_model = query_in.shape[-1]
    if d_model % n_heads != 0:
        raise ad.ShapeError(f"multi_head_attention: {n_heads} heads do not divide d_model {d_model}")
    d_head = d_model // n_heads
    batch, t_q = query_in.shape[0], query_in.shape[1]
    t_k = kv_in.shape[1]

    def project(tag, x, length):
        y = ad.add(ad.matmul(x, params[f"{prefix}.{tag}_weight"]), params[f"{prefix}.{tag}_bias"])
        y = ad.reshape(y, (batch, length, n_heads, d_head))
        return ad.transpose(y, (0, 2, 1, 3))  # [batch, heads, time, d_head]

    q = project("q", query_in, t_q)
    k = project("k", kv_in, t_k)
    v = project("v", kv_in, t_k)
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)[:, None, :, :] if mask.ndim == 3 else mask
    ctx = attention(q, k, v, mask)
    merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (batch, t_q, d_model))
    return ad.add(ad.matmul(merged, params[f"{prefix}.o_weight"]), params[f"{prefix}.o_bias"])


def feed_forward(params: dict, prefix: str, x: Tensor) -> Tensor:
    """Position-wise ReLU(x W1 + b1) W2 + b2."""
    hidden = ad.relu(ad.add(ad.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    return ad.add(ad.matmul(hidden, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])


def sublayer_wrap(params: dict, norm_prefix: str, x: Tensor, sublayer,
                  dropout_p: float = 0.0, train: bool = False,
                  rng: np.random.Generator | None = None) -> Tensor:
    """Post-norm residual wrapper: norm(x + dropout(sublayer(x)))."""
    y = sublayer(x)
    if train and dropout_p > 0.0:
        if rng is None:
            raise ValueError("sublayer_wrap: training dropout needs a random generator")
        keep = 1.0 - dropout_p
        mask = (rng.random(y.shape) < keep).astype(np.float64)
        y = ad.dropout(y, mask, keep)
    return ad.layer_norm(ad.add(x, y), params[f"{norm_prefix}.gain"], params[f"{norm_prefix}.bias"])


def label_smoothed_loss(logits: Tensor, gold, smoothing: float,
                        pad_id: int | None = None) -> Tensor:
    """Cross-entropy against a label-smoothed target, averaged over non-pad tokens.

    The gold token gets probability 1 - smoothing; the remaining mass is
    spread uniformly over every other token except pad. Positions whose
    gold label is pad are excluded entirely.
    """
    gold = np.asarray(gold)
    if gold.shape != logits.shape[:-1]:
        raise ad.ShapeError(f"label_smoothed_loss: gold shape {gold.shape} does not match "
                            f"logits {logits.shape}")
    n_vocab = logits.shape[-1]
    counted = np.ones_like(gold, dtype=bool) if pad_id is None else gold != pad_id
    n_tokens = int(counted.sum())
    if n_tokens == 0:
        raise ValueError("label_smoothed_loss: every target position is padding")
    spread_over = n_vocab - 1 - (1 if pad_id is not None else 0)
    if smoothing > 0.0 and spread_over <= 0:
        raise ValueError(f"label_smoothed_loss: vocabulary of {n_vocab} too small to smooth")
    off_value = smoothing / spread_over if smoothing > 0.0 else 0.0
    target = np.full(logits.shape, off_value, dtype=np.float64)
    if pad_id is not None:
        target[..., pad_id] = 0.0
    np.put_along_axis(target, gold[..., None], 1.0 - smoothing, axis=-1)
    target *= counted[..., None]
    log_probs = ad.log_softmax(logits)
    return ad.scale(ad.tensor_sum(ad.multiply(log_probs, Tensor(target))), -1.0 / n_tokens)


@dataclass
class EncoderOutput:
    """Final encoder states plus the mask of real (attendable) positions."""
    states: object             # Tensor on the graph path, ndarray on the decode path
    real: np.ndarray           # bool, True at real tokens (including any pseudo-word)


class Transformer:
    """Encoder-decoder translation model with optional visual fusion."""

    def __init__(self, config: ModelConfig, vocab: Vocabulary, seed: int | None = None,
                 params: dict[str, Tensor] | None = None,
                 mean_visual: np.ndarray | None = None):
        config.validate()
        self.config = config
        self.vocab = vocab
        self.pe = positional_encoding(config.max_len, config.d_model)
        self.mean_visual = None if mean_visual is None else np.asarray(mean_visual, dtype=np.float64)
        self.params = params if params is not None else self._init_params(np.random.default_rng(seed))

    # -- parameters -------------------------------------------------------

    def _init_params(self, rng: np.random.Generator) -> dict[str, Tensor]:
        cfg = self.config
        params: dict[str, Tensor] = {}

        def add(name, data):
            params[name] = Tensor(data, requires_grad=True, name=name)

        def glorot(fan_in, fan_out):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-limit, limit, size=(fan_in, fan_out))

        def add_attention(prefix):
            for tag in ("q", "k", "v", "o"):
                add(f"{prefix}.{tag}_weight", glorot(cfg.d_model, cfg.d_model))
                add(f"{prefix}.{tag}_bias", np.zeros(cfg.d_model))

        def add_norm(prefix):
            add(f"{prefix}.gain", np.ones(cfg.d_model))
            add(f"{prefix}.bias", np.zeros(cfg.d_model))

        def add_ff(prefix):
            add(f"{prefix}.w1", glorot(cfg.d_model, cfg.d_ff))
            add(f"{prefix}.b1", np.zeros(cfg.d_ff))
            add(f"{prefix}.w2", glorot(cfg.d_ff, cfg.d_model))
            add(f"{prefix}.b2", np.zeros(cfg.d_model))

        add("embed.table", rng.normal(0.0, cfg.d_model ** -0.5, size=(len(self.vocab), cfg.d_model)))
        add("out.bias", np.zeros(len(self.vocab)))
        for i in range(cfg.n_layers):
            add_attention(f"enc.{i}.attn")
            add_norm(f"enc.{i}.norm1")
            add_ff(f"enc.{i}.ff")
            add_norm(f"enc.{i}.norm2")
        for i in range(cfg.n_layers):
            add_attention(f"dec.{i}.self_attn")
            add_norm(f"dec.{i}.norm1")
            add_attention(f"dec.{i}.ctx_attn")
            add_norm(f"dec.{i}.norm2")
            add_ff(f"dec.{i}.ff")
            add_norm(f"dec.{i}.norm3")
        params.update(fusion.init_fusion_params(cfg.fusion, cfg.d_model, cfg.visual_dim,
                                                len(self.vocab), rng))
        return params

    def trainable(self, freeze_prefixes: tuple = ()) -> dict[str, Tensor]:
        """Parameter subset for the optimizer, excluding frozen name prefixes."""
        return {name: p for name, p in self.params.items()
                if not any(name.startswith(pref) for pref in freeze_prefixes)}

    def zero_grads(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    # -- shared validation --------------------------------------------------

    def _check_ids(self, ids: np.ndarray, where: str) -> None:
        if ids.size and (ids.min() < 0 or ids.max() >= len(self.vocab)):
            raise ValueError(f"{where}: token id out of range for vocabulary of {len(self.vocab)}")

    def _check_visual(self, visual, needed: bool, batch: int | None = None):
        """A path that uses the feature requires it; one that does not, forbids it."""
        if not needed:
            if visual is not None:
                raise fusion.FeatureError(
                    f"visual feature passed where fusion mode '{self.config.fusion}' does not use one")
            return None
        if visual is None:
            raise fusion.FeatureError(f"fusion mode '{self.config.fusion}' requires a visual feature")
        visual = np.asarray(visual, dtype=np.float64)
        expected = (batch, self.config.visual_dim) if batch is not None else (self.config.visual_dim,)
        if visual.shape != expected:
            raise fusion.FeatureError(f"visual feature shape {visual.shape} != expected {expected}")
        return visual

    # -- batched graph path (training) ---------------------------------------

    def encode(self, src_ids: np.ndarray, src_real: np.ndarray | None = None,
               visual: np.ndarray | None = None, train: bool = False,
               rng: np.random.Generator | None = None) -> EncoderOutput:
        """Run the encoder stack over padded id rows [batch, time]."""
        cfg = self.config
        src_ids = np.atleast_2d(np.asarray(src_ids))
        self._check_ids(src_ids, "encode")
        batch, length = src_ids.shape
        if src_real is None:
            src_real = np.ones((batch, length), dtype=bool)
        src_real = np.asarray(src_real, dtype=bool)
        visual = self._check_visual(visual, self._encoder_visual(), batch)

        emb = ad.embedding(self.params["embed.table"], src_ids)
        if cfg.fusion == "img_w":
            v_t = Tensor(visual)
            emb = ad.concat([fusion.pseudo_word(self.params, v_t), emb], axis=1)
            src_real = np.concatenate([np.ones((batch, 1), dtype=bool), src_real], axis=1)
            length += 1
        if length > cfg.max_len:
            raise ValueError(f"encode: sequence of {length} exceeds max_len {cfg.max_len}")
        x = ad.add(ad.scale(emb, cfg.d_model ** 0.5), Tensor(self.pe[:length]))

        blocked = ~src_real[:, None, None, :]  # key padding mask
        for i in range(cfg.n_layers):
            x = sublayer_wrap(
                self.params, f"enc.{i}.norm1", x,
                lambda h, i=i: multi_head_attention(self.params, f"enc.{i}.attn", cfg.n_heads,
                                                    h, h, blocked),
                cfg.dropout, train, rng)
            x = sublayer_wrap(self.params, f"enc.{i}.norm2", x,
                              lambda h, i=i: feed_forward(self.params, f"enc.{i}.ff", h),
                              cfg.dropout, train, rng)
        if cfg.fusion in ("enc_gate", "enc_dec_gate"):
            x = fusion.gate_encoder_states(self.params, x, Tensor(visual))
        return EncoderOutput(states=x, real=src_real)

    def decode_train(self, tgt_in: np.ndarray, enc: EncoderOutput,
                     visual: np.ndarray | None = None, train: bool = False,
                     rng: np.random.Generator | None = None) -> Tensor:
        """Teacher-forced decoder pass; returns pre-softmax logits [batch, time, vocab]."""
        cfg = self.config
        tgt_in = np.atleast_2d(np.asarray(tgt_in))
        self._check_ids(tgt_in, "decode_train")
        batch, length = tgt_in.shape
        if length > cfg.max_len:
            raise ValueError(f"decode_train: sequence of {length} exceeds max_len {cfg.max_len}")
        visual = self._check_visual(visual, self._decoder_visual(), batch)
        v_t = Tensor(visual) if visual is not None else None

        emb = ad.embedding(self.params["embed.table"], tgt_in)
        if cfg.fusion == "trg_mul":
            emb = fusion.target_modulation(self.params, emb, v_t)
        x = ad.add(ad.scale(emb, cfg.d_model ** 0.5), Tensor(self.pe[:length]))

        self_blocked = causal_mask(length)[None, None, :, :]
        ctx_blocked = ~enc.real[:, None, None, :]
        for i in range(cfg.n_layers):
            x = sublayer_wrap(
                self.params, f"dec.{i}.norm1", x,
                lambda h, i=i: multi_head_attention(self.params, f"dec.{i}.self_attn",
                                                    cfg.n_heads, h, h, self_blocked),
                cfg.dropout, train, rng)
            x = sublayer_wrap(
                self.params, f"dec.{i}.norm2", x,
                lambda h, i=i: multi_head_attention(self.params, f"dec.{i}.ctx_attn",
                                                    cfg.n_heads, h, enc.states, ctx_blocked),
                cfg.dropout, train, rng)
            x = sublayer_wrap(self.params, f"dec.{i}.norm3", x,
                              lambda h, i=i: feed_forward(self.params, f"dec.{i}.ff", h),
                              cfg.dropout, train, rng)
        logits = ad.add(ad.matmul(x, ad.transpose(self.params["embed.table"], (1, 0))),
                        self.params["out.bias"])
        if cfg.fusion in ("dec_gate", "enc_dec_gate"):
            logits = fusion.gate_decoder_logits(self.params, x, v_t, logits,
                                                cfg.dec_gate_time_dependent)
        return logits

    def forward_loss(self, src_ids, src_real, tgt_ids, tgt_real, visual=None,
                     train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Label-smoothed loss for padded batches; targets are BOS-shifted inside."""
        tgt_ids = np.atleast_2d(np.asarray(tgt_ids))
        bos = np.full((tgt_ids.shape[0], 1), self.vocab.bos_id, dtype=tgt_ids.dtype)
        tgt_in = np.concatenate([bos, tgt_ids[:, :-1]], axis=1)
        enc = self.encode(src_ids, src_real, visual if self._encoder_visual() else None,
                          train=train, rng=rng)
        logits = self.decode_train(tgt_in, enc, visual if self._decoder_visual() else None,
                                   train=train, rng=rng)
        gold = np.where(np.asarray(tgt_real, dtype=bool), tgt_ids, self.vocab.pad_id)
        return label_smoothed_loss(logits, gold, self.config.label_smoothing, self.vocab.pad_id)

    def _encoder_visual(self) -> bool:
        return self.config.fusion in ENCODER_VISUAL_MODES

    def _decoder_visual(self) -> bool:
        return self.config.fusion in DECODER_VISUAL_MODES

    # -- incremental numpy path (decoding) ------------------------------------

    def _p(self, name: str) -> np.ndarray:
        return self.params[name].data

    def _split_heads(self, x: np.ndarray) -> np.ndarray:
        # [time, d_model] -> [heads, time, d_head]
        t = x.shape[0]
        return x.reshape(t, self.config.n_heads, self.config.d_head).transpose(1, 0, 2)

    def _ln_rows(self, x: np.ndarray, prefix: str) -> np.ndarray:
        mean = x.mean(axis=-1, keepdims=True)
        var = ((x - mean) ** 2).mean(axis=-1, keepdims=True)
        normed = (x - mean) / np.sqrt(var + 1e-6)
        return normed * self._p(f"{prefix}.gain") + self._p(f"{prefix}.bias")

    def _ff_rows(self, x: np.ndarray, prefix: str) -> np.ndarray:
        hidden = np.maximum(x @ self._p(f"{prefix}.w1") + self._p(f"{prefix}.b1"), 0.0)
        return hidden @ self._p(f"{prefix}.w2") + self._p(f"{prefix}.b2")

    def encode_array(self, src_ids: list[int], visual: np.ndarray | None = None) -> EncoderOutput:
        """Single-sentence encoder pass outside the graph (no padding, no dropout)."""
        cfg = self.config
        ids = np.asarray(src_ids, dtype=np.int64)
        if ids.ndim != 1 or ids.size == 0:
            raise ValueError("encode_array: expected a non-empty 1-D id sequence")
        self._check_ids(ids, "encode_array")
        visual = self._check_visual(visual, self._encoder_visual())
        emb = self._p("embed.table")[ids]
        if cfg.fusion == "img_w":
            emb = np.vstack([fusion.pseudo_word_row(self.params, visual)[None, :], emb])
        length = emb.shape[0]
        if length > cfg.max_len:
            raise ValueError(f"encode_array: sequence of {length} exceeds max_len {cfg.max_len}")
        x = emb * cfg.d_model ** 0.5 + self.pe[:length]

        scale = cfg.d_head ** -0.5
        for i in range(cfg.n_layers):
            prefix = f"enc.{i}.attn"
            q = self._split_heads(x @ self._p(f"{prefix}.q_weight") + self._p(f"{prefix}.q_bias"))
            k = self._split_heads(x @ self._p(f"{prefix}.k_weight") + self._p(f"{prefix}.k_bias"))
            v = self._split_heads(x @ self._p(f"{prefix}.v_weight") + self._p(f"{prefix}.v_bias"))
            weights = ad.softmax_array(q @ k.transpose(0, 2, 1) * scale)
            ctx = (weights @ v).transpose(1, 0, 2).reshape(length, cfg.d_model)
            attended = ctx @ self._p(f"{prefix}.o_weight") + self._p(f"{prefix}.o_bias")
            x = self._ln_rows(x + attended, f"enc.{i}.norm1")
            x = self._ln_rows(x + self._ff_rows(x, f"enc.{i}.ff"), f"enc.{i}.norm2")
        if cfg.fusion in ("enc_gate", "enc_dec_gate"):
            x = fusion.gate_encoder_states_array(self.params, x, visual)
        return EncoderOutput(states=x, real=np.ones(length, dtype=bool))

    def session(self, enc: EncoderOutput, visual: np.ndarray | None = None) -> "DecoderSession":
        """Fresh incremental decoding session against one encoded source."""
        visual = self._check_visual(visual, self._decoder_visual())
        return DecoderSession(self, enc, visual)

    def next_distribution(self, prefix_ids: list[int], enc: EncoderOutput,
                          visual: np.ndarray | None = None) -> np.ndarray:
        """Next-token distribution after a full-prefix recomputation.

        Feeding the prefix one token at a time through a fresh session is
        the definition of "recompute"; the cached incremental session must
        match it bit for bit.
        """
        if len(prefix_ids) == 0:
            raise ValueError("next_distribution: prefix must start with BOS")
        session = self.session(enc, visual)
        for token in prefix_ids:
            probs = session.step(int(token))
        return probs


class DecoderSession:
    """Incremental decoder state: per-layer self-attention K/V caches.

    ``step(token)`` appends one target position and returns the normalized
    next-token distribution. ``clone()`` is cheap (row arrays are shared,
    list spines are copied) and is what beam search uses to branch.
    """

    def __init__(self, model: Transformer, enc: EncoderOutput, visual: np.ndarray | None):
        self.model = model
        self.visual = visual
        cfg = model.config
        states = enc.states.data if isinstance(enc.states, Tensor) else np.asarray(enc.states)
        if states.ndim == 3:
            if states.shape[0] != 1:
                raise ValueError("DecoderSession decodes one sentence at a time")
            states = states[0]
        self.enc_keys = []
        self.enc_values = []
        for i in range(cfg.n_layers):
            prefix = f"dec.{i}.ctx_attn"
            self.enc_keys.append(model._split_heads(
                states @ model._p(f"{prefix}.k_weight") + model._p(f"{prefix}.k_bias")))
            self.enc_values.append(model._split_heads(
                states @ model._p(f"{prefix}.v_weight") + model._p(f"{prefix}.v_bias")))
        self.self_keys: list[list[np.ndarray]] = [[] for _ in range(cfg.n_layers)]
        self.self_values: list[list[np.ndarray]] = [[] for _ in range(cfg.n_layers)]
        self.length = 0
        if cfg.fusion == "trg_mul":
            self.modulation = fusion.target_modulation_row(model.params, visual)
        else:
            self.modulation = None

    def clone(self) -> "DecoderSession":
        twin = object.__new__(DecoderSession)
        twin.model = self.model
        twin.visual = self.visual
        twin.enc_keys = self.enc_keys
        twin.enc_values = self.enc_values
        twin.self_keys = [list(rows) for rows in self.self_keys]
        twin.self_values = [list(rows) for rows in self.self_values]
        twin.length = self.length
        twin.modulation = self.modulation
        return twin

    def step(self, token_id: int) -> np.ndarray:
        """Advance one position; returns the next-token probability vector."""
        model, cfg = self.model, self.model.config
        if self.length >= cfg.max_len:
            raise ValueError(f"decode: prefix longer than max_len {cfg.max_len}")
        if not 0 <= token_id < len(model.vocab):
            raise ValueError(f"decode: token id {token_id} out of range")
        position = self.length
        emb = model._p("embed.table")[token_id]
        if self.modulation is not None:
            emb = emb * self.modulation
        x = emb * cfg.d_model ** 0.5 + model.pe[position]

        scale = cfg.d_head ** -0.5
        heads, d_head = cfg.n_heads, cfg.d_head
        for i in range(cfg.n_layers):
            prefix = f"dec.{i}.self_attn"
            q = (x @ model._p(f"{prefix}.q_weight") + model._p(f"{prefix}.q_bias")).reshape(heads, d_head)
            k = (x @ model._p(f"{prefix}.k_weight") + model._p(f"{prefix}.k_bias")).reshape(heads, d_head)
            v = (x @ model._p(f"{prefix}.v_weight") + model._p(f"{prefix}.v_bias")).reshape(heads, d_head)
            self.self_keys[i].append(k)
            self.self_values[i].append(v)
            keys = np.stack(self.self_keys[i], axis=1)      # [heads, t+1, d_head]
            values = np.stack(self.self_values[i], axis=1)
            weights = ad.softmax_array((keys @ q[:, :, None])[:, :, 0] * scale)
            ctx = (weights[:, None, :] @ values)[:, 0, :].reshape(cfg.d_model)
            attended = ctx @ model._p(f"{prefix}.o_weight") + model._p(f"{prefix}.o_bias")
            x = model._ln_rows(x + attended, f"dec.{i}.norm1")

            prefix = f"dec.{i}.ctx_attn"
            q = (x @ model._p(f"{prefix}.q_weight") + model._p(f"{prefix}.q_bias")).reshape(heads, d_head)
            weights = ad.softmax_array((self.enc_keys[i] @ q[:, :, None])[:, :, 0] * scale)
            ctx = (weights[:, None, :] @ self.enc_values[i])[:, 0, :].reshape(cfg.d_model)
            attended = ctx @ model._p(f"{prefix}.o_weight") + model._p(f"{prefix}.o_bias")
            x = model._ln_rows(x + attended, f"dec.{i}.norm2")

            x = model._ln_rows(x + model._ff_rows(x, f"dec.{i}.ff"), f"dec.{i}.norm3")

        self.length += 1
        logits = x @ model._p("embed.table").T + model._p("out.bias")
        if cfg.fusion in ("dec_gate", "enc_dec_gate"):
            logits = fusion.gate_decoder_logits_row(model.params, x, self.visual, logits,
                                                    cfg.dec_gate_time_dependent)
        return ad.softmax_array(logits)
