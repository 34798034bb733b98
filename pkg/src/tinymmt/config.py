"""Model hyperparameter container shared by training, decoding and checkpoints."""

from __future__ import annotations

from dataclasses import dataclass, asdict, fields

FUSION_MODES = ("none", "img_w", "enc_gate", "dec_gate", "enc_dec_gate", "trg_mul")


@dataclass
class ModelConfig:
    n_layers: int = 2
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 256
    dropout: float = 0.1
    label_smoothing: float = 0.1
    batch_tokens: int = 512
    visual_dim: int = 80
    fusion: str = "none"
    max_len: int = 256
    # dec_gate conditions the gate on the decoder state by default; the
    # feature-only variant is kept for comparison but is deprecated
    # (it suppresses the same vocabulary for the whole sentence).
    dec_gate_time_dependent: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.n_layers < 0:
            raise ValueError(f"n_layers must be >= 0, got {self.n_layers}")
        for name in ("d_model", "n_heads", "d_ff", "batch_tokens", "visual_dim", "max_len"):
            value = getattr(self, name)
            if value <= 0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.d_model % self.n_heads != 0:
            raise ValueError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if self.d_model % 2 != 0:
            raise ValueError(f"d_model must be even for sinusoidal positions, got {self.d_model}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError(f"label_smoothing must be in [0, 1), got {self.label_smoothing}")
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode '{self.fusion}' (expected one of {FUSION_MODES})")

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    @property
    def uses_visual(self) -> bool:
        return self.fusion != "none"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**data)
