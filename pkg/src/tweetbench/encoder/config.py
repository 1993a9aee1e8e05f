from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from math import prod


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class EncoderConfig:
    num_layers: int = 2
    hidden_size: int = 64
    num_heads: int = 4
    ffn_size: int = 128
    vocab_size: int = 1000
    max_len: int = 64
    num_classes: int = 3
    dropout_rate: float = 0.1
    seed: int = 0
    num_segments: int = 2
    mlm_head: bool = False

    def __post_init__(self):
        for name in ("num_layers", "hidden_size", "num_heads", "ffn_size", "vocab_size",
                     "max_len", "num_classes", "num_segments"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.hidden_size % self.num_heads:
            raise ConfigError(f"hidden_size {self.hidden_size} is not divisible by "
                              f"num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    @property
    def head_dim(self) -> int:
        return self.hidden_size // self.num_heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown encoder config keys: {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes) -> "EncoderConfig":
        return replace(self, **changes)


DESK = EncoderConfig()
BASE = EncoderConfig(num_layers=12, hidden_size=768, num_heads=12, ffn_size=3072,
                     vocab_size=30000, max_len=512, num_classes=3)
LARGE = EncoderConfig(num_layers=24, hidden_size=1024, num_heads=16, ffn_size=4096,
                      vocab_size=30000, max_len=512, num_classes=3)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 16
    epochs: int = 20
    weight_decay: float = 0.01
    warmup_fraction: float = 0.1
    max_grad_norm: float = 1.0
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    dtype: str = "float64"

    def __post_init__(self):
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ConfigError("learning_rate and weight_decay must be non-negative")
        if self.batch_size <= 0 or self.epochs <= 0:
            raise ConfigError("batch_size and epochs must be positive")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ConfigError("warmup_fraction must lie in [0, 1]")
        if self.max_grad_norm <= 0:
            raise ConfigError("max_grad_norm must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError(f"dtype must be float64 or float32, got {self.dtype!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


def parameter_shapes(cfg: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape for every tensor, in the fixed order used for init and I/O."""
    H, F, V, T, C = cfg.hidden_size, cfg.ffn_size, cfg.vocab_size, cfg.max_len, cfg.num_classes
    shapes = {
        "emb.token": (V, H),
        "emb.position": (T, H),
        "emb.segment": (cfg.num_segments, H),
        "emb.ln.gamma": (H,),
        "emb.ln.beta": (H,),
    }
    for i in range(cfg.num_layers):
        p = f"layer{i}."
        for w in ("q", "k", "v", "o"):
            shapes[p + f"attn.w{w}"] = (H, H)
            shapes[p + f"attn.b{w}"] = (H,)
        shapes[p + "attn.ln.gamma"] = (H,)
        shapes[p + "attn.ln.beta"] = (H,)
        shapes[p + "ffn.w1"] = (H, F)
        shapes[p + "ffn.b1"] = (F,)
        shapes[p + "ffn.w2"] = (F, H)
        shapes[p + "ffn.b2"] = (H,)
        shapes[p + "ffn.ln.gamma"] = (H,)
        shapes[p + "ffn.ln.beta"] = (H,)
    shapes["pooler.w"] = (H, H)
    shapes["pooler.b"] = (H,)
    shapes["classifier.w"] = (H, C)
    shapes["classifier.b"] = (C,)
    if cfg.mlm_head:
        # output projection is tied to emb.token
        shapes["mlm.w"] = (H, H)
        shapes["mlm.b"] = (H,)
        shapes["mlm.ln.gamma"] = (H,)
        shapes["mlm.ln.beta"] = (H,)
        shapes["mlm.out_bias"] = (V,)
    return shapes


def parameter_count(cfg: EncoderConfig) -> int:
    return sum(prod(s) for s in parameter_shapes(cfg).values())


def tensor_kind(name: str) -> str:
    """Strip the layer index: ``layer3.attn.wq`` -> ``attn.wq``."""
    head, _, rest = name.partition(".")
    return rest if head.startswith("layer") and head[5:].isdigit() else name
