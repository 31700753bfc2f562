"""Run configuration: YAML files with nested sections, strict key checking."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # model
    dim: int = 32
    feature_len: int = 8  # T, rows kept per modality
    ceu_layers: int = 2  # J
    mfu_layers: int = 3  # K, must equal J + 1
    heads: int = 4
    ffn_factor: int = 4
    vocab_size: int = 512
    dropout: float = 0.1
    # data
    label_range: tuple[float, float] = (-3.0, 3.0)
    max_text_len: int = 24
    max_desc_len: int = 24
    audio_len: int = 30
    audio_dim: int = 12
    visual_len: int = 30
    visual_dim: int = 12
    au_top_k: int = 4
    au_threshold: float = 0.5
    tertile_scope: str = "train"  # or "all"
    # training
    batch_size: int = 32
    learning_rate: float = 1e-4
    weight_decay: float = 0.01
    optimizer: str = "adamw"
    epochs: int = 30
    warmup_frac: float = 0.1
    loss_mode: str = "mae"
    seed: int = 7
    precision: str = "single"  # "double" for bitwise-reproducible checks
    # ablation toggles
    use_aed: bool = True
    use_ved: bool = True
    use_raw_av: bool = True

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.mfu_layers != self.ceu_layers + 1:
            raise ConfigError(
                f"mfu_layers must be ceu_layers + 1 (got {self.mfu_layers} vs {self.ceu_layers})"
            )
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.optimizer != "adamw":
            raise ConfigError(f"unsupported optimizer {self.optimizer!r}")
        if self.loss_mode not in ("mae", "mse", "cross_entropy"):
            raise ConfigError(f"unknown loss_mode {self.loss_mode!r}")
        if self.tertile_scope not in ("train", "all"):
            raise ConfigError(f"tertile_scope must be train or all, got {self.tertile_scope!r}")
        if self.precision not in ("single", "double"):
            raise ConfigError(f"precision must be single or double, got {self.precision!r}")
        lo, hi = self.label_range
        if not lo < hi:
            raise ConfigError(f"bad label_range {self.label_range}")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ConfigError(f"warmup_frac out of [0,1): {self.warmup_frac}")
        if self.au_top_k < 1:
            raise ConfigError("au_top_k must be >= 1")


_SECTIONS = {
    "model": ("dim", "feature_len", "ceu_layers", "mfu_layers", "heads", "ffn_factor", "vocab_size", "dropout"),
    "data": ("label_range", "max_text_len", "max_desc_len", "audio_len", "audio_dim", "visual_len", "visual_dim", "au_top_k", "au_threshold", "tertile_scope"),
    "train": ("batch_size", "learning_rate", "weight_decay", "optimizer", "epochs", "warmup_frac", "loss_mode", "seed", "precision"),
    "ablation": ("use_aed", "use_ved", "use_raw_av"),
}

_FIELD_SECTION = {name: section for section, names in _SECTIONS.items() for name in names}


def config_from_dict(raw: dict) -> TrainConfig:
    """Accepts either the nested section layout or a flat key-value dict."""
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")
    known = {f.name for f in fields(TrainConfig)}
    flat = {}
    for key, value in raw.items():
        if key in _SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be a mapping")
            for sub, v in value.items():
                if sub not in known:
                    raise ConfigError(f"unknown config key {key}.{sub}")
                if _FIELD_SECTION[sub] != key:
                    raise ConfigError(f"key {sub!r} belongs in section {_FIELD_SECTION[sub]!r}, not {key!r}")
                flat[sub] = v
        elif key in known:
            flat[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")
    if "label_range" in flat:
        lr = flat["label_range"]
        if not (isinstance(lr, (list, tuple)) and len(lr) == 2):
            raise ConfigError(f"label_range must be a [lo, hi] pair, got {lr!r}")
        flat["label_range"] = (float(lr[0]), float(lr[1]))
    try:
        return TrainConfig(**flat)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def config_to_dict(cfg: TrainConfig) -> dict:
    flat = asdict(cfg)
    flat["label_range"] = list(flat["label_range"])
    return {section: {name: flat[name] for name in names} for section, names in _SECTIONS.items()}


def load_config(path) -> TrainConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    return config_from_dict(raw)


def save_config(cfg: TrainConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)


def desk_config(**overrides) -> TrainConfig:
    """Default small-scale profile; trains in minutes on one CPU core."""
    return TrainConfig(**overrides)


def paper_scale_config(**overrides) -> TrainConfig:
    """Full-size profile: d=128, batch 64, 80 epochs."""
    base = dict(dim=128, batch_size=64, epochs=80)
    base.update(overrides)
    return TrainConfig(**base)
