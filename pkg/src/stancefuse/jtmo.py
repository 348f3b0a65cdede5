"""Joint text modelling encoder over ``[CLS] reply [SEP] caption [SEP]``.

The transformer block defined here (scaled dot-product heads, output
projection, post-norm residuals, position-wise FFN) is shared with the
text and vision encoders.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .config import JtmoConfig
from .errors import ContractError
from .params import ParamStore
from .tensor import Tensor
from .text import CLS_ID, PAD_ID, SEP_ID, TokenSeq

LN_EPS = 1e-12


# --------------------------------------------------------------------------- params


@dataclass(frozen=True)
class AttentionParams:
    w_q: tuple[Tensor, ...]
    w_k: tuple[Tensor, ...]
    w_v: tuple[Tensor, ...]
    w_o: Tensor

    @property
    def heads(self) -> int:
        return len(self.w_q)


@dataclass(frozen=True)
class JtmoLayerParams:
    attn: AttentionParams
    ffn_w1: Tensor
    ffn_b1: Tensor
    ffn_w2: Tensor
    ffn_b2: Tensor
    ln1_gamma: Tensor
    ln1_beta: Tensor
    ln2_gamma: Tensor
    ln2_beta: Tensor

    @classmethod
    def from_store(cls, store: ParamStore, prefix: str, heads: int) -> JtmoLayerParams:
        g = lambda s: store[f"{prefix}.{s}"]  # noqa: E731
        attn = AttentionParams(
            w_q=tuple(g(f"attn.head{i}.w_q") for i in range(heads)),
            w_k=tuple(g(f"attn.head{i}.w_k") for i in range(heads)),
            w_v=tuple(g(f"attn.head{i}.w_v") for i in range(heads)),
            w_o=g("attn.w_o"),
        )
        return cls(
            attn,
            g("ffn.w1"), g("ffn.b1"), g("ffn.w2"), g("ffn.b2"),
            g("ln1.gamma"), g("ln1.beta"), g("ln2.gamma"), g("ln2.beta"),
        )


def init_transformer_layer(store: ParamStore, prefix: str, width: int, heads: int, ffn_multiplier: int) -> None:
    if width % heads:
        raise ContractError(f"{heads} heads do not divide width {width}")
    d_head = width // heads
    for i in range(heads):
        for w in ("w_q", "w_k", "w_v"):
            store.normal(f"{prefix}.attn.head{i}.{w}", (width, d_head))
    store.normal(f"{prefix}.attn.w_o", (width, width))
    hidden = ffn_multiplier * width
    store.normal(f"{prefix}.ffn.w1", (width, hidden))
    store.zeros(f"{prefix}.ffn.b1", (hidden,))
    store.normal(f"{prefix}.ffn.w2", (hidden, width))
    store.zeros(f"{prefix}.ffn.b2", (width,))
    for ln in ("ln1", "ln2"):
        store.ones(f"{prefix}.{ln}.gamma", (width,))
        store.zeros(f"{prefix}.{ln}.beta", (width,))


def init_jtmo(store: ParamStore, cfg: JtmoConfig, vocab_size: int, share_embeddings: bool = False) -> None:
    if not share_embeddings:
        store.normal("jtmo.tok_emb", (vocab_size, cfg.width))
    store.normal("jtmo.pos_emb", (cfg.max_len, cfg.width))
    store.normal("jtmo.seg_emb", (2, cfg.width))
    for j in range(cfg.layers):
        init_transformer_layer(store, f"jtmo.layer{j}", cfg.width, cfg.heads, cfg.ffn_multiplier)


# --------------------------------------------------------------------------- block math


def _key_mask(mask, length: int):
    if mask is None:
        return None
    m = np.asarray(mask, dtype=bool).reshape(-1)
    if m.shape != (length,):
        raise ContractError(f"mask of length {m.size} for a length-{length} sequence")
    return m[None, :]


def attention_weights(H: Tensor, w_q: Tensor, w_k: Tensor, mask=None) -> Tensor:
    if H.shape[1] != w_q.shape[0] or w_q.shape != w_k.shape:
        raise ContractError(f"attention: H {H.shape} incompatible with W_Q {w_q.shape} / W_K {w_k.shape}")
    d_head = w_q.shape[1]
    scores = T.mul(T.matmul(T.matmul(H, w_q), T.transpose(T.matmul(H, w_k))), 1.0 / math.sqrt(d_head))
    return T.softmax_rows(scores, _key_mask(mask, H.shape[0]))


def attention_head(H: Tensor, head: tuple[Tensor, Tensor, Tensor], mask=None) -> Tensor:
    """softmax(H W_Q (H W_K)^T / sqrt(d_head), masked) H W_V."""
    w_q, w_k, w_v = head
    if w_v.shape[0] != H.shape[1]:
        raise ContractError(f"attention: H {H.shape} incompatible with W_V {w_v.shape}")
    return T.matmul(attention_weights(H, w_q, w_k, mask), T.matmul(H, w_v))


def multi_head(H: Tensor, params: AttentionParams, mask=None) -> Tensor:
    width = H.shape[1]
    if width % params.heads:
        raise ContractError(f"{params.heads} heads do not divide width {width}")
    heads = [attention_head(H, hp, mask) for hp in zip(params.w_q, params.w_k, params.w_v)]
    return T.matmul(T.concat(heads, axis=1), params.w_o)


def feed_forward(H: Tensor, p: JtmoLayerParams, activation: str = "gelu") -> Tensor:
    act = T.gelu if activation == "gelu" else T.relu
    hidden = act(T.add(T.matmul(H, p.ffn_w1), p.ffn_b1))
    return T.add(T.matmul(hidden, p.ffn_w2), p.ffn_b2)


def jtmo_layer(
    H_prev: Tensor,
    params: JtmoLayerParams,
    mask=None,
    *,
    activation: str = "gelu",
    dropout_p: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Post-norm block: LN(H + MHA(H)), then LN(H~ + FFN(H~))."""
    attn = T.dropout(multi_head(H_prev, params.attn, mask), dropout_p, train, rng)
    H_tilde = T.layer_norm(T.add(H_prev, attn), params.ln1_gamma, params.ln1_beta, LN_EPS)
    ffn = T.dropout(feed_forward(H_tilde, params, activation), dropout_p, train, rng)
    return T.layer_norm(T.add(H_tilde, ffn), params.ln2_gamma, params.ln2_beta, LN_EPS)


def transformer_stack(
    H: Tensor,
    store: ParamStore,
    prefix: str,
    n_layers: int,
    heads: int,
    mask=None,
    *,
    activation: str = "gelu",
    dropout_p: float = 0.0,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    for j in range(n_layers):
        layer = JtmoLayerParams.from_store(store, f"{prefix}.layer{j}", heads)
        H = jtmo_layer(H, layer, mask, activation=activation, dropout_p=dropout_p, train=train, rng=rng)
    return H


# --------------------------------------------------------------------------- joint input


@dataclass(frozen=True)
class JointInput:
    ids: tuple[int, ...]
    segment_ids: tuple[int, ...]
    attention_mask: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def caption_length(self) -> int:
        """Caption tokens between the two separators."""
        return sum(1 for s, i in zip(self.segment_ids, self.ids) if s == 1 and i not in (SEP_ID, PAD_ID))

    def padded(self, length: int) -> JointInput:
        extra = length - len(self.ids)
        if extra < 0:
            raise ContractError(f"cannot pad a length-{len(self.ids)} joint input to {length}")
        return JointInput(
            self.ids + (PAD_ID,) * extra,
            self.segment_ids + (self.segment_ids[-1],) * extra,
            self.attention_mask + (0,) * extra,
        )


def build_joint_input(reply: TokenSeq, caption: TokenSeq, max_len: int) -> JointInput:
    """Lay out ``[CLS] reply [SEP] caption [SEP]``, trimming the longer segment first."""
    if max_len < 3:
        raise ContractError("max_len must leave room for [CLS] and two [SEP]")
    r = [i for i, m in zip(reply.ids, reply.attention_mask) if m]
    c = [i for i, m in zip(caption.ids, caption.attention_mask) if m]
    budget = max_len - 3
    overflow = len(r) + len(c) - budget
    if overflow > 0:
        n_r, n_c = len(r), len(c)
        for _ in range(overflow):
            if n_r > n_c:
                n_r -= 1
            else:
                n_c -= 1
        r, c = r[:n_r], c[:n_c]
    ids = (CLS_ID, *r, SEP_ID, *c, SEP_ID)
    segments = (0,) * (len(r) + 2) + (1,) * (len(c) + 1)
    return JointInput(ids, segments, (1,) * len(ids))


# --------------------------------------------------------------------------- encoder


@dataclass(frozen=True)
class JointEncoding:
    H_prime: Tensor
    H_j: Tensor


def jtmo_encode(
    inp: JointInput,
    store: ParamStore,
    cfg: JtmoConfig,
    *,
    share_embeddings: bool = False,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> JointEncoding:
    L = len(inp)
    pos_table = store["jtmo.pos_emb"]
    if L > pos_table.shape[0]:
        raise ContractError(f"joint input of length {L} exceeds position table of {pos_table.shape[0]}")
    if L == 0:
        raise ContractError("empty joint input")
    tok_table = store["text.tok_emb"] if share_embeddings else store["jtmo.tok_emb"]
    H = T.add(
        T.add(T.take_rows(tok_table, inp.ids), T.take_rows(pos_table, range(L))),
        T.take_rows(store["jtmo.seg_emb"], inp.segment_ids),
    )
    H = T.dropout(H, cfg.dropout_p, train, rng)
    H = transformer_stack(
        H, store, "jtmo", cfg.layers, cfg.heads, inp.attention_mask,
        activation=cfg.activation, dropout_p=cfg.dropout_p, train=train, rng=rng,
    )
    if cfg.pooling == "cls":
        pooled = T.take_rows(H, [0])
    else:
        pooled = masked_mean_rows(H, inp.attention_mask)
    return JointEncoding(H, pooled)


def masked_mean_rows(H: Tensor, mask=None) -> Tensor:
    """1 x D mean over rows with mask == 1."""
    L = H.shape[0]
    m = np.ones(L) if mask is None else np.asarray(mask, dtype=np.float64).reshape(-1)
    if m.shape != (L,) or m.sum() == 0:
        raise ContractError("masked mean needs a mask with at least one active row")
    return T.matmul(T.constant((m / m.sum())[None, :]), H)
