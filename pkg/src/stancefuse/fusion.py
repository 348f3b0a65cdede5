"""Shared-space projection, concatenation and the 3-way stance head.

``forward`` wires the whole model for one prepared example::

    summary  -> text encoder  -> pool -> W_t, b_t --+
    image    -> vision encoder -> pool -> W_v, b_v --+-> concat -> dropout -> W_c, b_c
    joint    -> joint encoder  -> H_j  -> W_j, b_j --+

Ablations drop the joint branch (``WO_JTMO``) or the three projections
(``WO_FUSION``, which concatenates pooled encoder outputs directly).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import AblationVariant, ModelConfig
from .dataset import StanceLabel
from .encoders import encode_image, encode_text, init_text_encoder, init_vision_encoder
from .errors import ContractError, DataError
from .jtmo import JointInput, init_jtmo, jtmo_encode, masked_mean_rows
from .params import ParamStore
from .pipeline import PreparedExample
from .tensor import Tensor

PROJECTIONS = ("t", "v", "j")
N_CLASSES = len(StanceLabel)


@dataclass(frozen=True)
class FusedVector:
    H_fused: Tensor  # 1 x width

    @property
    def width(self) -> int:
        return self.H_fused.shape[1]

    def segment(self, index: int, size: int) -> Tensor:
        return T.slice_cols(self.H_fused, index * size, (index + 1) * size)


@dataclass(frozen=True)
class StancePrediction:
    logits: Tensor  # 1 x 3
    probabilities: np.ndarray
    label: StanceLabel
    fused: FusedVector
    joint: JointInput | None = None


def classifier_width(cfg: ModelConfig, variant: AblationVariant) -> int:
    if not variant.uses_projection:
        return cfg.encoder.text_width + cfg.encoder.vision_width + cfg.jtmo.width
    return (3 if variant.uses_jtmo else 2) * cfg.fusion_dim


def init_model(cfg: ModelConfig, vocab_size: int, variant: AblationVariant, seed: int) -> ParamStore:
    """Fresh parameters for ``variant``; only the modules it uses are created."""
    store = ParamStore(seed)
    init_text_encoder(store, cfg.encoder, vocab_size)
    init_vision_encoder(store, cfg.encoder)
    if variant.uses_jtmo:
        init_jtmo(store, cfg.jtmo, vocab_size, share_embeddings=cfg.share_embeddings)
    if variant.uses_projection:
        widths = {"t": cfg.encoder.text_width, "v": cfg.encoder.vision_width, "j": cfg.jtmo.width}
        for x in PROJECTIONS if variant.uses_jtmo else ("t", "v"):
            store.normal(f"fusion.w_{x}", (widths[x], cfg.fusion_dim))
            store.zeros(f"fusion.b_{x}", (cfg.fusion_dim,))
    store.normal("classifier.w", (classifier_width(cfg, variant), N_CLASSES))
    store.zeros("classifier.b", (N_CLASSES,))
    return store


def pool(H: Tensor, mask=None, mode: str = "mean") -> Tensor:
    """Reduce an L x D sequence to 1 x D (mask-aware mean, or first row)."""
    if H.data.ndim != 2:
        raise ContractError(f"pool expects a matrix, got {H.shape}")
    if H.shape[0] == 1:
        return H
    return T.take_rows(H, [0]) if mode == "cls" else masked_mean_rows(H, mask)


def project(H: Tensor, store: ParamStore, modality: str) -> Tensor:
    w, b = store[f"fusion.w_{modality}"], store[f"fusion.b_{modality}"]
    if H.shape[1] != w.shape[0]:
        raise ContractError(f"{modality!r} modality has width {H.shape[1]} but W_{modality} expects {w.shape[0]}")
    return T.add(T.matmul(H, w), b)


def pool_and_project(
    H_t: Tensor,
    H_v: Tensor,
    H_j: Tensor | None,
    store: ParamStore,
    *,
    text_mask=None,
    pooling: str = "mean",
) -> tuple[Tensor, ...]:
    """1 x d projections of the pooled text, vision and (optional) joint features."""
    out = [project(pool(H_t, text_mask, pooling), store, "t"), project(pool(H_v, None, pooling), store, "v")]
    if H_j is not None:
        out.append(project(pool(H_j, None, "cls"), store, "j"))
    return tuple(out)


def fuse(*parts: Tensor) -> FusedVector:
    """Concatenate 1 x d parts in text | visual | joint order."""
    if not parts:
        raise ContractError("fuse needs at least one representation")
    widths = {p.shape for p in parts}
    if len(widths) != 1 or parts[0].data.ndim != 2 or parts[0].shape[0] != 1:
        raise ContractError(f"fuse needs equal 1 x d inputs, got {[p.shape for p in parts]}")
    return FusedVector(T.concat(list(parts), axis=1))


def classify(
    f: FusedVector,
    store: ParamStore,
    *,
    dropout_p: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
    joint: JointInput | None = None,
) -> StancePrediction:
    w, b = store["classifier.w"], store["classifier.b"]
    if f.width != w.shape[0]:
        raise ContractError(f"classifier expects width {w.shape[0]}, got {f.width}")
    logits = T.add(T.matmul(T.dropout(f.H_fused, dropout_p, train, rng), w), b)
    z = logits.data[0] - logits.data[0].max()
    probs = np.exp(z) / np.exp(z).sum()
    # np.argmax returns the first maximum: ties go to the lowest class index.
    return StancePrediction(logits, probs, StanceLabel(int(np.argmax(logits.data[0]))), f, joint)


def forward(
    ex: PreparedExample,
    store: ParamStore,
    cfg: ModelConfig,
    variant: AblationVariant = AblationVariant.FULL,
    *,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> StancePrediction:
    if ex.image is None:
        raise DataError(f"record {ex.record.id}: no image, but every variant needs the visual branch")
    if variant.uses_jtmo and ex.joint is None:
        raise ContractError(f"record {ex.record.id} was prepared without a joint input")
    enc, p = cfg.encoder, cfg.encoder.dropout_p
    text = encode_text(ex.text, store, enc, train=train, rng=rng)
    vision = encode_image(ex.image, store, enc, train=train, rng=rng)
    H_j = None
    if variant.uses_jtmo:
        H_j = jtmo_encode(ex.joint, store, cfg.jtmo, share_embeddings=cfg.share_embeddings, train=train, rng=rng).H_j
    if variant.uses_projection:
        parts = pool_and_project(text.H_t, vision.H_v, H_j, store, text_mask=text.mask, pooling=cfg.pooling)
        if cfg.pre_fusion_dropout:
            parts = tuple(T.dropout(x, p, train, rng) for x in parts)
        fused = fuse(*parts)
    else:
        pooled = [pool(text.H_t, text.mask, cfg.pooling), pool(vision.H_v, None, cfg.pooling)]
        if H_j is not None:
            pooled.append(H_j)
        fused = FusedVector(T.concat(pooled, axis=1))
    return classify(fused, store, dropout_p=p, train=train, rng=rng, joint=ex.joint)


def batch_logits(
    examples, store: ParamStore, cfg: ModelConfig, variant: AblationVariant, *, train=False, rng=None
) -> tuple[Tensor, list[StancePrediction]]:
    preds = [forward(ex, store, cfg, variant, train=train, rng=rng) for ex in examples]
    return T.concat([pr.logits for pr in preds], axis=0), preds


def graph_parameters(output: Tensor) -> set[str]:
    """Names of the parameter leaves ``output`` depends on."""
    return {t.name for t in T.leaves(output) if t.name}
