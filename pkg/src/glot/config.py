"""Model/training configuration dataclasses, presets and flat ``key=value`` I/O.

Config files are either JSON or lines of ``dotted.key=value`` (``#`` starts a
comment). Overrides use the same dotted keys, e.g. ``model.global_encoder.d_model=512``.
"""
from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .nncore.layers import TransformerConfig


@dataclass
class ModelConfig:
    T: int = 16
    w: int = 4
    feature_dim: int = 256
    global_encoder: TransformerConfig = field(default_factory=lambda: TransformerConfig(2, 64, 4))
    global_decoder: TransformerConfig = field(default_factory=lambda: TransformerConfig(1, 48, 4))
    local_encoder: TransformerConfig = field(default_factory=lambda: TransformerConfig(3, 48, 4))
    cross_decoder: TransformerConfig = field(default_factory=lambda: TransformerConfig(1, 48, 4))
    regressor_hidden: int = 128
    n_iter: int = 3
    hscr_hidden: int = 64
    residual_hidden: int = 256
    mask_token: str = "smpl"        # or "learnable"
    corrector: str = "hscr"         # or "residual"
    use_lpc: bool = True
    detach: bool = True

    def validate(self) -> "ModelConfig":
        if self.T < 2 or self.T % 2:
            raise ValueError(f"T must be an even number >= 2, got {self.T}")
        if not 0 <= self.w < self.T:
            raise ValueError(f"nearby half-width w={self.w} out of range")
        if self.cross_decoder.d_model != self.local_encoder.d_model:
            raise ValueError("cross decoder width must equal the local encoder width")
        if self.mask_token not in ("smpl", "learnable"):
            raise ValueError(f"unknown mask token {self.mask_token!r}")
        if self.corrector not in ("hscr", "residual"):
            raise ValueError(f"unknown corrector {self.corrector!r}")
        return self


@dataclass
class LossWeights:
    j3d: float = 300.0
    j2d: float = 300.0
    pose: float = 60.0
    shape: float = 0.06
    vel: float = 100.0

    def __post_init__(self):
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if not (v >= 0 and v < float("inf")):
                raise ValueError(f"loss weight {f.name}={v} must be finite and nonnegative")


@dataclass
class TrainConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    alpha: float = 0.5
    batch_size: int = 8
    steps: int = 500
    lr: float = 1e-3
    warmup: int = 25
    horizon: int = 0                 # 0 means ``steps``
    seed: int = 0
    checkpoint_every: int = 0
    dtype: str = "float32"

    def validate(self) -> "TrainConfig":
        self.model.validate()
        if not 0 <= self.alpha < 1:
            raise ValueError(f"mask ratio must lie in [0, 1), got {self.alpha}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype}")
        return self


def desk_preset() -> TrainConfig:
    return TrainConfig()


def full_preset() -> TrainConfig:
    """Full-size widths: global 2x512 / 1x256, local 3x256 plus one cross layer."""
    model = ModelConfig(
        feature_dim=2048,
        global_encoder=TransformerConfig(2, 512, 8),
        global_decoder=TransformerConfig(1, 256, 8),
        local_encoder=TransformerConfig(3, 256, 8),
        cross_decoder=TransformerConfig(1, 256, 8),
        regressor_hidden=1024,
    )
    return TrainConfig(model=model, batch_size=64, lr=1e-4, steps=10000, warmup=500)


def tiny_preset() -> TrainConfig:
    """Smallest configuration used for gradient checks."""
    t = lambda n: TransformerConfig(n, 32, 1)
    model = ModelConfig(T=8, w=2, feature_dim=16, global_encoder=t(2), global_decoder=t(1),
                        local_encoder=t(3), cross_decoder=t(1), regressor_hidden=16,
                        hscr_hidden=8, residual_hidden=16)
    return TrainConfig(model=model, batch_size=2, steps=10, dtype="float64",
                       weights=LossWeights(1.0, 1.0, 1.0, 1.0, 1.0))


PRESETS = {"desk": desk_preset, "full": full_preset, "tiny": tiny_preset}


# ---------------------------------------------------------------------------
# flat key=value conversion

def to_flat(obj, prefix: str = "") -> dict[str, object]:
    out: dict[str, object] = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        key = f"{prefix}{f.name}"
        if dataclasses.is_dataclass(v):
            out.update(to_flat(v, key + "."))
        else:
            out[key] = v
    return out


def _coerce(tp, raw):
    if tp is bool:
        if isinstance(raw, bool):
            return raw
        s = str(raw).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if tp is int:
        if isinstance(raw, float) and not raw.is_integer():
            raise ValueError(f"not an integer: {raw!r}")
        return int(raw)
    if tp is float:
        return float(raw)
    return str(raw)


def set_key(obj, key: str, raw) -> None:
    head, _, rest = key.partition(".")
    hints = typing.get_type_hints(type(obj))
    if head not in hints:
        raise KeyError(f"unknown config key {key!r}")
    if rest:
        set_key(getattr(obj, head), rest, raw)
    else:
        setattr(obj, head, _coerce(hints[head], raw))


def parse_overrides(pairs) -> dict[str, str]:
    out = {}
    for pair in pairs:
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"override {pair!r} is not key=value")
        out[key.strip()] = value.strip()
    return out


def read_flat(path) -> dict[str, object]:
    text = Path(path).read_text()
    if text.lstrip().startswith("{"):
        data = json.loads(text)

        def flatten(d, prefix=""):
            for k, v in d.items():
                if isinstance(v, dict):
                    yield from flatten(v, f"{prefix}{k}.")
                else:
                    yield f"{prefix}{k}", v
        return dict(flatten(data))
    return parse_overrides(line.split("#", 1)[0] for line in text.splitlines()
                           if line.split("#", 1)[0].strip())


def build_config(preset: str = "desk", path=None, overrides=None) -> TrainConfig:
    cfg = PRESETS[preset]()
    items: dict[str, object] = {}
    if path is not None:
        items.update(read_flat(path))
    if "preset" in items:
        cfg = PRESETS[str(items.pop("preset"))]()
    items.update(overrides or {})
    for k, v in items.items():
        set_key(cfg, k, v)
    # re-run dataclass checks after mutation
    for tc in (cfg.model.global_encoder, cfg.model.global_decoder, cfg.model.local_encoder,
               cfg.model.cross_decoder):
        tc.__post_init__()
    cfg.weights.__post_init__()
    return cfg.validate()


def dump_flat(cfg) -> str:
    return "".join(f"{k}={v}\n" for k, v in to_flat(cfg).items())


def model_from_flat(flat: dict) -> ModelConfig:
    cfg = ModelConfig()
    for k, v in flat.items():
        set_key(cfg, k, v)
    return cfg.validate()
