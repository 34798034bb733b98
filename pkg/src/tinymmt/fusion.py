"""Visual-feature fusion: pseudo-word projection, encoder/decoder gates,
target-embedding modulation, dummy mean features, and the feature file format.

A visual feature is a fixed-width float vector attached to a sentence pair.
Four fusion strategies inject it into the Transformer:

* ``img_w``     -- affine-project the feature to an extra "pseudo-word"
                   embedding prepended to the source sequence (position 0,
                   scaled and position-encoded like a real word).
* ``enc_gate``  -- sigmoid-gate the final encoder states elementwise.
* ``dec_gate``  -- sigmoid-gate the pre-softmax output logits elementwise,
                   conditioned on the decoder state and the feature.
* ``trg_mul``   -- multiply target input embeddings by tanh of a feature
                   projection.

Gate biases are initialized to +1 so training starts with the gates open.
"""

from __future__ import annotations

import struct

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

GATE_BIAS_INIT = 1.0


class FeatureError(ValueError):
    pass


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_fusion_params(fusion: str, d_model: int, visual_dim: int, vocab_size: int,
                       rng: np.random.Generator) -> dict[str, Tensor]:
    """Fresh trainable parameters for one fusion mode (empty dict for "none")."""
    params: dict[str, Tensor] = {}
    def add(name, data):
        params[name] = Tensor(data, requires_grad=True, name=name)
    if fusion == "img_w":
        add("fusion.img_w.weight", _glorot(rng, visual_dim, d_model))
        add("fusion.img_w.bias", np.zeros(d_model))
    if fusion in ("enc_gate", "enc_dec_gate"):
        add("fusion.enc_gate.state_weight", np.zeros((d_model, d_model)))
        add("fusion.enc_gate.visual_weight", np.zeros((visual_dim, d_model)))
        add("fusion.enc_gate.bias", np.full(d_model, GATE_BIAS_INIT))
    if fusion in ("dec_gate", "enc_dec_gate"):
        add("fusion.dec_gate.state_weight", np.zeros((d_model, vocab_size)))
        add("fusion.dec_gate.visual_weight", np.zeros((visual_dim, vocab_size)))
        add("fusion.dec_gate.bias", np.full(vocab_size, GATE_BIAS_INIT))
    if fusion == "trg_mul":
        add("fusion.trg_mul.weight", _glorot(rng, visual_dim, d_model))
    return params


def _check_visual(visual: Tensor | np.ndarray, visual_dim: int, where: str) -> None:
    if visual.shape[-1] != visual_dim:
        raise FeatureError(f"{where}: visual feature width {visual.shape[-1]} != expected {visual_dim}")


# -- graph-building versions (training path) -----------------------------

def pseudo_word(params: dict, visual: Tensor) -> Tensor:
    """Affine projection of features [B, visual_dim] to embeddings [B, 1, d_model]."""
    weight = params["fusion.img_w.weight"]
    bias = params["fusion.img_w.bias"]
    _check_visual(visual, weight.shape[0], "pseudo_word")
    projected = ad.add(ad.matmul(visual, weight), bias)
    batch = visual.shape[0]
    return ad.reshape(projected, (batch, 1, weight.shape[1]))


def gate_encoder_states(params: dict, states: Tensor, visual: Tensor) -> Tensor:
    """Elementwise sigmoid gate over final encoder states [B, T, d_model]."""
    u = params["fusion.enc_gate.state_weight"]
    w = params["fusion.enc_gate.visual_weight"]
    b = params["fusion.enc_gate.bias"]
    _check_visual(visual, w.shape[0], "gate_encoder_states")
    from_visual = ad.reshape(ad.matmul(visual, w), (visual.shape[0], 1, w.shape[1]))
    gate = ad.sigmoid(ad.add(ad.add(ad.matmul(states, u), from_visual), b))
    return ad.multiply(states, gate)


def gate_decoder_logits(params: dict, dec_states: Tensor, visual: Tensor,
                        logits: Tensor, time_dependent: bool = True) -> Tensor:
    """Elementwise sigmoid gate over pre-softmax logits [B, T, vocab].

    With ``time_dependent`` the gate also reads the decoder state, so the
    vocabulary suppression can vary per timestep. The feature-only variant
    (time_dependent=False) is deprecated: it suppresses the same subwords
    for the whole sentence.
    """
    u = params["fusion.dec_gate.state_weight"]
    w = params["fusion.dec_gate.visual_weight"]
    b = params["fusion.dec_gate.bias"]
    _check_visual(visual, w.shape[0], "gate_decoder_logits")
    from_visual = ad.reshape(ad.matmul(visual, w), (visual.shape[0], 1, w.shape[1]))
    pre = ad.add(from_visual, b)
    if time_dependent:
        pre = ad.add(ad.matmul(dec_states, u), pre)
    gate = ad.sigmoid(pre)
    return ad.multiply(logits, gate)


def target_modulation(params: dict, embeddings: Tensor, visual: Tensor) -> Tensor:
    """Multiply target input embeddings [B, T, d_model] by tanh(feature projection)."""
    w = params["fusion.trg_mul.weight"]
    _check_visual(visual, w.shape[0], "target_modulation")
    mod = ad.tanh(ad.reshape(ad.matmul(visual, w), (visual.shape[0], 1, w.shape[1])))
    return ad.multiply(embeddings, mod)


# -- plain-array versions (decoding path) ---------------------------------

def pseudo_word_row(params: dict, visual: np.ndarray) -> np.ndarray:
    _check_visual(visual, params["fusion.img_w.weight"].shape[0], "pseudo_word")
    return visual @ params["fusion.img_w.weight"].data + params["fusion.img_w.bias"].data


def gate_encoder_states_array(params: dict, states: np.ndarray, visual: np.ndarray) -> np.ndarray:
    pre = (states @ params["fusion.enc_gate.state_weight"].data
           + visual @ params["fusion.enc_gate.visual_weight"].data
           + params["fusion.enc_gate.bias"].data)
    return states * ad.sigmoid_array(pre)


def gate_decoder_logits_row(params: dict, dec_state: np.ndarray, visual: np.ndarray,
                            logits: np.ndarray, time_dependent: bool = True) -> np.ndarray:
    pre = visual @ params["fusion.dec_gate.visual_weight"].data + params["fusion.dec_gate.bias"].data
    if time_dependent:
        pre = dec_state @ params["fusion.dec_gate.state_weight"].data + pre
    return logits * ad.sigmoid_array(pre)


def target_modulation_row(params: dict, visual: np.ndarray) -> np.ndarray:
    return np.tanh(visual @ params["fusion.trg_mul.weight"].data)


# -- dummy features and blinding ------------------------------------------

def mean_feature(features) -> np.ndarray:
    """Arithmetic mean of all present (non-None) feature vectors.

    Used as the dummy feature for text-only samples during training, and
    wholesale at decode time when blinding the model.
    """
    present = [np.asarray(f, dtype=np.float64) for f in features if f is not None]
    if not present:
        raise FeatureError("mean_feature: no visual features present")
    total = np.zeros_like(present[0])
    for f in present:
        if f.shape != total.shape:
            raise FeatureError(f"mean_feature: inconsistent widths {f.shape} vs {total.shape}")
        total += f
    return total / len(present)


class BlindedFeatures:
    """Feature provider whose every lookup returns the training-set mean."""

    def __init__(self, mean: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)

    def __getitem__(self, index) -> np.ndarray:
        return self.mean


def blind(mean: np.ndarray | None) -> BlindedFeatures:
    if mean is None:
        raise FeatureError("blind: no mean feature available")
    return BlindedFeatures(mean)


# -- feature file format ---------------------------------------------------
#
# Binary feature file: one record per sample, concatenated:
#     sample id   uint64 little-endian
#     values      visual_dim float64 little-endian
# Text manifest: one decimal sample id per line; line k of the manifest
# gives the sample id for line k of the parallel corpus.

def write_feature_file(path, features: dict[int, np.ndarray]) -> None:
    with open(path, "wb") as f:
        for sample_id in sorted(features):
            vec = np.ascontiguousarray(features[sample_id], dtype="<f8")
            f.write(struct.pack("<Q", sample_id))
            f.write(vec.tobytes())


def read_feature_file(path, visual_dim: int) -> dict[int, np.ndarray]:
    record = 8 + 8 * visual_dim
    features: dict[int, np.ndarray] = {}
    with open(path, "rb") as f:
        while True:
            chunk = f.read(record)
            if not chunk:
                break
            if len(chunk) != record:
                raise FeatureError(f"{path}: truncated feature record")
            (sample_id,) = struct.unpack("<Q", chunk[:8])
            features[sample_id] = np.frombuffer(chunk[8:], dtype="<f8").copy()
    return features


def write_feature_manifest(path, sample_ids) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sample_id in sample_ids:
            f.write(f"{sample_id}\n")


def read_feature_manifest(path) -> list[int]:
    with open(path, encoding="utf-8") as f:
        return [int(line.strip()) for line in f if line.strip()]


def features_for_corpus(feature_path, manifest_path, visual_dim: int,
                        n_lines: int) -> list[np.ndarray | None]:
    """Per-line feature vectors for a corpus; None where no record exists."""
    by_id = read_feature_file(feature_path, visual_dim)
    ids = read_feature_manifest(manifest_path)
    if len(ids) != n_lines:
        raise FeatureError(f"feature manifest has {len(ids)} lines, corpus has {n_lines}")
    return [by_id.get(sample_id) for sample_id in ids]
