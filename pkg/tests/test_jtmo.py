import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import erf

from stancefuse import rng
from stancefuse import tensor as T
from stancefuse.config import JtmoConfig
from stancefuse.errors import ConfigError, ContractError
from stancefuse.gradcheck import grad_check
from stancefuse.jtmo import (
    AttentionParams,
    JointInput,
    JtmoLayerParams,
    attention_head,
    attention_weights,
    build_joint_input,
    init_jtmo,
    init_transformer_layer,
    jtmo_encode,
    jtmo_layer,
    multi_head,
)
from stancefuse.params import ParamStore
from stancefuse.tensor import Tensor
from stancefuse.text import CLS_ID, SEP_ID, TokenSeq

from conftest import generic_point

CFG = JtmoConfig(width=16, layers=2, heads=2, max_len=16, ffn_multiplier=2, dropout_p=0.1)


def seq(*ids):
    return TokenSeq.from_ids(ids)


def jtmo_store(cfg=CFG, vocab=40, seed=0):
    s = ParamStore(seed)
    init_jtmo(s, cfg, vocab)
    return s


def layer_params(width=8, heads=2, seed=0, generic=True):
    s = ParamStore(seed)
    init_transformer_layer(s, "L", width, heads, 2)
    if generic:
        generic_point(s, std=0.4, seed=seed)
    return s, JtmoLayerParams.from_store(s, "L", heads)


# ---------------------------------------------------------------- joint input


def test_joint_layout_example():
    a, b, c = 10, 11, 12
    j = build_joint_input(seq(a, b), seq(c), 16)
    assert j.ids == (CLS_ID, a, b, SEP_ID, c, SEP_ID)
    assert j.segment_ids == (0, 0, 0, 0, 1, 1)
    assert j.caption_length == 1


def test_joint_empty_caption():
    j = build_joint_input(seq(10, 11), TokenSeq((), ()), 16)
    assert j.ids == (CLS_ID, 10, 11, SEP_ID, SEP_ID)
    assert j.caption_length == 0


def simulate_truncation(n_r, n_c, max_len):
    while n_r + n_c + 3 > max_len:
        if n_r > n_c:
            n_r -= 1
        else:
            n_c -= 1
    return n_r, n_c


def test_joint_truncation_40_40_to_64():
    j = build_joint_input(seq(*range(100, 140)), seq(*range(200, 240)), 64)
    n_r = j.ids.index(SEP_ID) - 1
    n_c = len(j) - n_r - 3
    assert len(j) == 64
    assert (n_r, n_c) == simulate_truncation(40, 40, 64) == (31, 30)
    assert j.ids[1 : 1 + n_r] == tuple(range(100, 100 + n_r))  # tails are dropped, heads kept


def test_joint_truncates_longer_segment_only():
    j = build_joint_input(seq(*range(100, 150)), seq(5, 6), 20)
    assert j.ids[-3:] == (5, 6, SEP_ID)
    assert len(j) == 20


def test_joint_max_len_too_small():
    with pytest.raises(ContractError):
        build_joint_input(seq(), seq(), 2)


@given(st.integers(0, 70), st.integers(0, 70), st.integers(3, 80))
def test_joint_truncation_matches_simulation(n_r, n_c, max_len):
    j = build_joint_input(seq(*[7] * n_r), seq(*[8] * n_c), max_len)
    got = (sum(1 for i in j.ids if i == 7), sum(1 for i in j.ids if i == 8))
    assert got == simulate_truncation(n_r, n_c, max_len)


def test_padded_joint_input_extends_last_segment():
    j = build_joint_input(seq(10), seq(11), 8).padded(8)
    assert j.attention_mask == (1, 1, 1, 1, 1, 0, 0, 0)
    assert list(j.segment_ids) == sorted(j.segment_ids)


# ---------------------------------------------------------------- attention


def loop_attention(H, wq, wk, wv, mask):
    L, dh = H.shape[0], wq.shape[1]
    Q, K, V = H @ wq, H @ wk, H @ wv
    out = np.zeros((L, dh))
    for i in range(L):
        scores = []
        for j in range(L):
            s = sum(Q[i, k] * K[j, k] for k in range(dh)) / math.sqrt(dh)
            scores.append(s if mask[j] else -math.inf)
        m = max(scores)
        w = [math.exp(s - m) if s != -math.inf else 0.0 for s in scores]
        z = sum(w)
        for j in range(L):
            for k in range(dh):
                out[i, k] += w[j] / z * V[j, k]
    return out


def test_attention_head_matches_loop_oracle(gen):
    H = gen.normal(size=(5, 8))
    wq, wk, wv = (gen.normal(size=(8, 4)) for _ in range(3))
    mask = [1, 1, 0, 1, 0]
    got = attention_head(Tensor(H), (Tensor(wq), Tensor(wk), Tensor(wv)), mask).data
    assert np.max(np.abs(got - loop_attention(H, wq, wk, wv, mask))) < 1e-10


def test_single_position_attends_to_itself(gen):
    w = attention_weights(Tensor(gen.normal(size=(1, 4))), Tensor(gen.normal(size=(4, 2))), Tensor(gen.normal(size=(4, 2))))
    assert w.data.tolist() == [[1.0]]


def test_uniform_rows_attend_uniformly(gen):
    H = Tensor(np.tile(gen.normal(size=(1, 6)), (4, 1)))
    w = attention_weights(H, Tensor(gen.normal(size=(6, 3))), Tensor(gen.normal(size=(6, 3))), [1, 1, 1, 0]).data
    assert np.allclose(w[:, :3], 1 / 3, atol=1e-15) and (w[:, 3] == 0).all()


def test_attention_rows_sum_to_one_over_unmasked(gen):
    H = Tensor(gen.normal(size=(6, 8)))
    w = attention_weights(H, Tensor(gen.normal(size=(8, 4))), Tensor(gen.normal(size=(8, 4))), [1, 0, 1, 1, 0, 1]).data
    assert np.allclose(w.sum(axis=1), 1.0, atol=1e-9)


def test_single_head_is_head_times_w_o(gen):
    _, p = layer_params(width=8, heads=1)
    H = Tensor(gen.normal(size=(3, 8)))
    head = attention_head(H, (p.attn.w_q[0], p.attn.w_k[0], p.attn.w_v[0])).data
    assert np.allclose(multi_head(H, p.attn).data, head @ p.attn.w_o.data, atol=1e-13)


def test_identity_w_o_concatenates_heads(gen):
    _, p = layer_params(width=8, heads=2)
    attn = AttentionParams(p.attn.w_q, p.attn.w_k, p.attn.w_v, Tensor(np.eye(8)))
    H = Tensor(gen.normal(size=(3, 8)))
    heads = [attention_head(H, hp).data for hp in zip(attn.w_q, attn.w_k, attn.w_v)]
    assert np.allclose(multi_head(H, attn).data, np.concatenate(heads, axis=1), atol=1e-14)


def test_heads_must_divide_width():
    with pytest.raises(ContractError):
        init_transformer_layer(ParamStore(0), "x", 10, 3, 2)
    with pytest.raises(ConfigError):
        JtmoConfig(width=10, heads=3)


def test_multi_head_gradients(gen):
    s, _ = layer_params(width=8, heads=2)
    H = Tensor(gen.normal(size=(4, 8)))

    def f(p):
        lp = JtmoLayerParams.from_store(p, "L", 2)
        return T.reduce_sum(T.mul(multi_head(H, lp.attn, [1, 1, 1, 0]), Tensor(np.arange(32.0).reshape(4, 8) / 32)))

    assert grad_check(f, s, per_param=4, n_samples=40) < 1e-5


# ---------------------------------------------------------------- layer


def ln(x, eps=1e-12):
    mu = x.mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(((x - mu) ** 2).mean(axis=-1, keepdims=True) + eps)


def straight_line_layer(H, p, mask):
    heads = [loop_attention(H, q.data, k.data, v.data, mask) for q, k, v in zip(p.attn.w_q, p.attn.w_k, p.attn.w_v)]
    mha = np.concatenate(heads, axis=1) @ p.attn.w_o.data
    Ht = ln(H + mha) * p.ln1_gamma.data + p.ln1_beta.data
    pre = Ht @ p.ffn_w1.data + p.ffn_b1.data
    ffn = (0.5 * pre * (1 + erf(pre / math.sqrt(2)))) @ p.ffn_w2.data + p.ffn_b2.data
    return ln(Ht + ffn) * p.ln2_gamma.data + p.ln2_beta.data


def test_layer_matches_straight_line_oracle(gen):
    _, p = layer_params(width=8, heads=2)
    H = gen.normal(size=(5, 8))
    mask = [1, 1, 1, 0, 1]
    got = jtmo_layer(Tensor(H), p, mask).data
    assert np.max(np.abs(got - straight_line_layer(H, p, mask))) < 1e-10


def test_zero_branches_give_double_layer_norm(gen):
    s, p = layer_params(width=8, heads=2, generic=False)
    for name, t in s.items():
        if ".ln" not in name:
            t.data[...] = 0.0
    H = gen.normal(size=(4, 8))
    assert np.allclose(jtmo_layer(Tensor(H), p).data, ln(ln(H)), atol=1e-12)


@given(st.integers(1, 9))
def test_layer_preserves_shape(L):
    _, p = layer_params(width=8, heads=2)
    H = Tensor(np.random.default_rng(L).normal(size=(L, 8)))
    assert jtmo_layer(H, p).shape == (L, 8)


# ---------------------------------------------------------------- encoder


def test_encode_shapes_and_cls_pooling():
    s = jtmo_store()
    j = build_joint_input(seq(5, 6, 7), seq(8, 9), CFG.max_len)
    enc = jtmo_encode(j, s, CFG)
    assert enc.H_prime.shape == (len(j), 16)
    assert np.array_equal(enc.H_j.data, enc.H_prime.data[:1])


def test_mean_pooling_alternative():
    cfg = JtmoConfig(width=16, layers=1, heads=2, max_len=16, ffn_multiplier=2, pooling="mean")
    s = jtmo_store(cfg)
    j = build_joint_input(seq(5, 6), seq(8), 16)
    enc = jtmo_encode(j.padded(10), s, cfg)
    assert np.allclose(enc.H_j.data, enc.H_prime.data[: len(j)].mean(axis=0, keepdims=True), atol=1e-15)


def test_segment_embedding_is_live():
    s = generic_point(jtmo_store())
    j = build_joint_input(seq(5, 6, 7), seq(8, 9), CFG.max_len)
    flipped = JointInput(j.ids, tuple(1 - x for x in j.segment_ids), j.attention_mask)
    diff = np.abs(jtmo_encode(j, s, CFG).H_prime.data - jtmo_encode(flipped, s, CFG).H_prime.data).max()
    assert diff > 1e-6


def test_jtmo_padding_invariance():
    s = generic_point(jtmo_store())
    j = build_joint_input(seq(5, 6, 7), seq(8, 9), CFG.max_len)
    junk = JointInput(j.ids + (13, 14, 15), j.segment_ids + (1, 1, 1), j.attention_mask + (0, 0, 0))
    a = jtmo_encode(j, s, CFG).H_prime.data
    b = jtmo_encode(j.padded(12), s, CFG).H_prime.data
    c = jtmo_encode(junk, s, CFG).H_prime.data
    assert np.max(np.abs(b[: len(j)] - a)) < 1e-9
    assert np.max(np.abs(c[: len(j)] - a)) < 1e-9


def test_too_long_joint_input_is_contract_error():
    s = jtmo_store()
    long = JointInput((CLS_ID,) + (5,) * 20, (0,) * 21, (1,) * 21)
    with pytest.raises(ContractError, match="position table"):
        jtmo_encode(long, s, CFG)


def test_train_mode_dropout_changes_output_eval_does_not():
    s = jtmo_store()
    j = build_joint_input(seq(5, 6, 7), seq(8, 9), CFG.max_len)
    e1 = jtmo_encode(j, s, CFG, train=False, rng=rng.stream(1, "d")).H_prime.data
    e2 = jtmo_encode(j, s, CFG, train=False, rng=rng.stream(2, "d")).H_prime.data
    t1 = jtmo_encode(j, s, CFG, train=True, rng=rng.stream(1, "d")).H_prime.data
    assert np.array_equal(e1, e2) and not np.allclose(e1, t1)


def test_jtmo_end_to_end_gradients():
    s = generic_point(jtmo_store())
    j = build_joint_input(seq(5, 6, 7), seq(8, 9), CFG.max_len).padded(9)
    f = lambda p: T.reduce_sum(T.mul(jtmo_encode(j, p, CFG).H_j, Tensor(np.linspace(-1, 1, 16))))  # noqa: E731
    assert grad_check(f, s, per_param=2, n_samples=120) < 1e-4
