"""Run configuration.

A :class:`RunConfig` is a flat set of named fields. Values are resolved with
the precedence ``flags > environment > config file > defaults``; environment
overrides use ``STANCEFUSE_<UPPER_KEY>``.
"""

from __future__ import annotations

import dataclasses
import enum
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

from .errors import ConfigError

ENV_PREFIX = "STANCEFUSE_"


class AblationVariant(str, enum.Enum):
    FULL = "FULL"
    WO_JTMO = "WO_JTMO"
    WO_SUMMARIZATION = "WO_SUMMARIZATION"
    WO_CAPTIONING = "WO_CAPTIONING"
    WO_FUSION = "WO_FUSION"

    @classmethod
    def parse(cls, value) -> AblationVariant:
        if isinstance(value, cls):
            return value
        key = str(value).strip().upper().replace("/", "_").replace("-", "_")
        try:
            return cls[key]
        except KeyError:
            raise ConfigError(f"unknown ablation variant {value!r}; expected one of {[v.value for v in cls]}") from None

    @property
    def uses_jtmo(self) -> bool:
        return self is not AblationVariant.WO_JTMO

    @property
    def uses_summarizer(self) -> bool:
        return self is not AblationVariant.WO_SUMMARIZATION

    @property
    def uses_captioner(self) -> bool:
        # Captions only feed the joint encoder.
        return self not in (AblationVariant.WO_CAPTIONING, AblationVariant.WO_JTMO)

    @property
    def uses_projection(self) -> bool:
        return self is not AblationVariant.WO_FUSION


@dataclass(frozen=True)
class EncoderConfig:
    text_width: int = 64
    vision_width: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 64
    image_size: int = 64
    patch_size: int = 16
    ffn_multiplier: int = 4
    dropout_p: float = 0.1
    activation: str = "gelu"

    def __post_init__(self):
        for width_name in ("text_width", "vision_width"):
            width = getattr(self, width_name)
            if width <= 0 or width % self.heads:
                raise ConfigError(f"{width_name}={width} must be a positive multiple of heads={self.heads}")
        if self.image_size % self.patch_size:
            raise ConfigError(f"image_size={self.image_size} is not a multiple of patch_size={self.patch_size}")
        _check_common(self.layers, self.heads, self.max_len, self.ffn_multiplier, self.dropout_p, self.activation)

    @property
    def num_patches(self) -> int:
        return (self.image_size // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return 3 * self.patch_size * self.patch_size


@dataclass(frozen=True)
class JtmoConfig:
    width: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 64
    ffn_multiplier: int = 4
    dropout_p: float = 0.1
    activation: str = "gelu"
    pooling: str = "cls"

    def __post_init__(self):
        if self.width <= 0 or self.width % self.heads:
            raise ConfigError(f"joint width={self.width} must be a positive multiple of heads={self.heads}")
        if self.max_len < 3:
            raise ConfigError("joint max_len must leave room for [CLS] and two [SEP]")
        if self.pooling not in ("cls", "mean"):
            raise ConfigError(f"joint pooling must be 'cls' or 'mean', got {self.pooling!r}")
        _check_common(self.layers, self.heads, self.max_len, self.ffn_multiplier, self.dropout_p, self.activation)


def _check_common(layers, heads, max_len, mult, p, activation):
    if layers < 0 or heads <= 0 or max_len <= 0 or mult <= 0:
        raise ConfigError("layers must be >= 0 and heads, max_len, ffn_multiplier positive")
    if not 0.0 <= p < 1.0:
        raise ConfigError(f"dropout must be in [0, 1), got {p}")
    if activation not in ("gelu", "relu"):
        raise ConfigError(f"activation must be 'gelu' or 'relu', got {activation!r}")


@dataclass(frozen=True)
class ModelConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    jtmo: JtmoConfig = field(default_factory=JtmoConfig)
    fusion_dim: int = 64
    pooling: str = "mean"
    pre_fusion_dropout: bool = False
    share_embeddings: bool = False

    def __post_init__(self):
        if self.fusion_dim <= 0:
            raise ConfigError("fusion_dim must be positive")
        if self.pooling not in ("mean", "cls"):
            raise ConfigError(f"pooling must be 'mean' or 'cls', got {self.pooling!r}")
        if self.share_embeddings and self.jtmo.width != self.encoder.text_width:
            raise ConfigError("share_embeddings needs joint_width == text_width")


@dataclass(frozen=True)
class RunConfig:
    # paths
    manifest: str = ""
    image_root: str = ""
    checkpoint: str = ""
    cache: str = ""
    out_dir: str = "runs/default"
    # encoders
    text_width: int = 64
    vision_width: int = 64
    layers: int = 2
    heads: int = 4
    max_len: int = 64
    image_size: int = 64
    patch_size: int = 16
    ffn_multiplier: int = 4
    dropout: float = 0.1
    activation: str = "gelu"
    min_freq: int = 1
    # joint encoder
    joint_width: int = 64
    jtmo_layers: int = 2
    jtmo_heads: int = 4
    joint_pooling: str = "cls"
    share_embeddings: bool = False
    # fusion
    fusion_dim: int = 64
    pooling: str = "mean"
    pre_fusion_dropout: bool = False
    # optimisation
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 16
    epochs: int = 10
    seed: int = 0
    freeze_encoders: bool = False
    # context extraction
    backend: str = "stub"
    backend_url: str = "http://127.0.0.1:8080"
    backend_timeout: float = 30.0
    fallback_to_stub: bool = False
    summary_sentences: int = 2
    summarize_prompt: str = "Summarize the following text with respect to the topic: {topic}"
    caption_prompt: str = "Generate the caption for the image"
    # experiment
    variant: str = "FULL"
    eval_split: str = "test"

    def __post_init__(self):
        if self.backend not in ("stub", "external"):
            raise ConfigError(f"backend must be 'stub' or 'external', got {self.backend!r}")
        AblationVariant.parse(self.variant)
        if self.eval_split not in ("train", "dev", "test"):
            raise ConfigError(f"eval_split must be train, dev or test, got {self.eval_split!r}")
        if self.batch_size < 1 or self.epochs < 0 or self.lr < 0 or self.seed < 0:
            raise ConfigError("batch_size >= 1, epochs >= 0, lr >= 0 and seed >= 0 are required")
        if self.summary_sentences < 1 or self.min_freq < 1:
            raise ConfigError("summary_sentences and min_freq must be >= 1")
        if not self.caption_prompt.strip() or not self.summarize_prompt.strip():
            raise ConfigError("prompts must be non-empty")
        self.model_config()

    @property
    def ablation(self) -> AblationVariant:
        return AblationVariant.parse(self.variant)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(
            text_width=self.text_width,
            vision_width=self.vision_width,
            layers=self.layers,
            heads=self.heads,
            max_len=self.max_len,
            image_size=self.image_size,
            patch_size=self.patch_size,
            ffn_multiplier=self.ffn_multiplier,
            dropout_p=self.dropout,
            activation=self.activation,
        )

    def jtmo_config(self) -> JtmoConfig:
        return JtmoConfig(
            width=self.joint_width,
            layers=self.jtmo_layers,
            heads=self.jtmo_heads,
            max_len=self.max_len,
            ffn_multiplier=self.ffn_multiplier,
            dropout_p=self.dropout,
            activation=self.activation,
            pooling=self.joint_pooling,
        )

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            encoder=self.encoder_config(),
            jtmo=self.jtmo_config(),
            fusion_dim=self.fusion_dim,
            pooling=self.pooling,
            pre_fusion_dropout=self.pre_fusion_dropout,
            share_embeddings=self.share_embeddings,
        )

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> RunConfig:
        return resolve_config(base=self, overrides=changes, environ={})

    def write(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, value):
    kind = _FIELDS[key].type
    try:
        if kind == "bool":
            if isinstance(value, bool):
                return value
            text = str(value).strip().lower()
            if text in ("1", "true", "yes", "on"):
                return True
            if text in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError(value)
            return int(value)
        if kind == "float":
            if isinstance(value, bool):
                raise ValueError(value)
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(f"config key {key!r}: cannot interpret {value!r} as {kind}") from None


def _check_keys(mapping: Mapping[str, Any], origin: str) -> None:
    unknown = sorted(set(mapping) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"unknown config keys in {origin}: {', '.join(unknown)}")


def load_config_file(path) -> dict[str, Any]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    _check_keys(raw, str(path))
    return raw


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    out = {}
    for name, value in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        key = name[len(ENV_PREFIX) :].lower()
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key in environment variable {name}")
        out[key] = value
    return out


def resolve_config(
    path=None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
    base: RunConfig | None = None,
) -> RunConfig:
    """Merge defaults (or ``base``), file, environment and explicit overrides."""
    merged: dict[str, Any] = (base or RunConfig()).to_dict()
    if path:
        merged.update(load_config_file(path))
    merged.update(env_overrides(environ))
    overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
    _check_keys(overrides, "overrides")
    merged.update(overrides)
    return RunConfig(**{k: _coerce(k, v) for k, v in merged.items()})
