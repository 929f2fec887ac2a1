"""Pre-norm Transformer encoder-decoder with sinusoidal positions (optional architecture)."""

from __future__ import annotations

import math

import torch

from ..corpus import BOS_ID, EOS_ID
from .autodiff import ModelParams, Tensor
from .seq2seq import NEG_INF, NO_DROPOUT, Batch, Dropout, Seq2SeqConfig


def transformer_param_shapes(cfg: Seq2SeqConfig, n_src: int, n_tgt: int) -> dict[str, tuple[int, ...]]:
    d, f = cfg.hidden, cfg.ff_dim
    shapes: dict[str, tuple[int, ...]] = {"src_emb": (n_src, d), "tgt_emb": (n_tgt, d)}

    def attn(pre: str):
        for w in ("q", "k", "v", "o"):
            shapes[f"{pre}.{w}"] = (d, d)

    def norm(pre: str):
        shapes[f"{pre}.ln_g"] = (d,)
        shapes[f"{pre}.ln_b"] = (d,)

    def ff(pre: str):
        shapes[f"{pre}.w1"] = (f, d)
        shapes[f"{pre}.b1"] = (f,)
        shapes[f"{pre}.w2"] = (d, f)
        shapes[f"{pre}.b2"] = (d,)

    for layer in range(cfg.transformer_layers):
        pre = f"tenc.{layer}"
        norm(f"{pre}.n1"); attn(f"{pre}.self"); norm(f"{pre}.n2"); ff(f"{pre}.ff")
    for layer in range(cfg.transformer_layers):
        pre = f"tdec.{layer}"
        norm(f"{pre}.n1"); attn(f"{pre}.self"); norm(f"{pre}.n2"); attn(f"{pre}.cross")
        norm(f"{pre}.n3"); ff(f"{pre}.ff")
    norm("tenc.final")
    norm("tdec.final")
    shapes["proj.w"] = (n_tgt, d)
    shapes["proj.b"] = (n_tgt,)
    return shapes


def positions(length: int, dim: int, dtype=torch.float64) -> Tensor:
    pos = torch.arange(length, dtype=dtype).unsqueeze(1)
    freq = torch.exp(torch.arange(0, dim, 2, dtype=dtype) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=dtype)
    pe[:, 0::2] = torch.sin(pos * freq)
    pe[:, 1::2] = torch.cos(pos * freq)
    return pe


def _layer_norm(x: Tensor, p: ModelParams, pre: str, eps: float = 1e-6) -> Tensor:
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * p[f"{pre}.ln_g"] + p[f"{pre}.ln_b"]


def _attention(q_in: Tensor, kv_in: Tensor, bias: Tensor, p: ModelParams, pre: str,
               heads: int) -> Tensor:
    B, Tq, d = q_in.shape
    Tk = kv_in.shape[1]
    hd = d // heads

    def split(x: Tensor, T: int) -> Tensor:
        return x.reshape(B, T, heads, hd).transpose(1, 2)

    q = split(q_in @ p[f"{pre}.q"].T, Tq)
    k = split(kv_in @ p[f"{pre}.k"].T, Tk)
    v = split(kv_in @ p[f"{pre}.v"].T, Tk)
    scores = q @ k.transpose(-1, -2) / math.sqrt(hd) + bias
    ctx = torch.softmax(scores, dim=-1) @ v
    return ctx.transpose(1, 2).reshape(B, Tq, d) @ p[f"{pre}.o"].T


def _ff(x: Tensor, p: ModelParams, pre: str) -> Tensor:
    return torch.relu(x @ p[f"{pre}.w1"].T + p[f"{pre}.b1"]) @ p[f"{pre}.w2"].T + p[f"{pre}.b2"]


def _embed(table: Tensor, ids: Tensor) -> Tensor:
    d = table.shape[1]
    return table[ids] * math.sqrt(d) + positions(ids.shape[1], d, table.dtype)


def encode(params: ModelParams, cfg: Seq2SeqConfig, src: Tensor, src_mask: Tensor,
           drop: Dropout) -> tuple[Tensor, Tensor]:
    bias = torch.zeros(src_mask.shape, dtype=params["src_emb"].dtype) \
        .masked_fill(~src_mask, NEG_INF)[:, None, None, :]
    x = drop(_embed(params["src_emb"], src))
    for layer in range(cfg.transformer_layers):
        pre = f"tenc.{layer}"
        h = _layer_norm(x, params, f"{pre}.n1")
        x = x + drop(_attention(h, h, bias, params, f"{pre}.self", cfg.heads))
        x = x + drop(_ff(_layer_norm(x, params, f"{pre}.n2"), params, f"{pre}.ff"))
    return _layer_norm(x, params, "tenc.final"), bias


def decode(params: ModelParams, cfg: Seq2SeqConfig, tgt_in: Tensor, memory: Tensor,
           mem_bias: Tensor, drop: Dropout) -> Tensor:
    T = tgt_in.shape[1]
    causal = torch.full((T, T), NEG_INF, dtype=memory.dtype).triu(1)[None, None]
    y = drop(_embed(params["tgt_emb"], tgt_in))
    for layer in range(cfg.transformer_layers):
        pre = f"tdec.{layer}"
        h = _layer_norm(y, params, f"{pre}.n1")
        y = y + drop(_attention(h, h, causal, params, f"{pre}.self", cfg.heads))
        y = y + drop(_attention(_layer_norm(y, params, f"{pre}.n2"), memory, mem_bias, params,
                                f"{pre}.cross", cfg.heads))
        y = y + drop(_ff(_layer_norm(y, params, f"{pre}.n3"), params, f"{pre}.ff"))
    y = _layer_norm(y, params, "tdec.final")
    return y @ params["proj.w"].T + params["proj.b"]


def transformer_logits(params: ModelParams, cfg: Seq2SeqConfig, batch: Batch,
                       drop: Dropout) -> Tensor:
    memory, bias = encode(params, cfg, batch.src, batch.src_mask, drop)
    return decode(params, cfg, batch.tgt_in, memory, bias, drop)


def transformer_greedy(params: ModelParams, cfg: Seq2SeqConfig, src: Tensor, src_mask: Tensor,
                       max_len: int) -> list[list[int]]:
    memory, bias = encode(params, cfg, src, src_mask, NO_DROPOUT)
    B = src.shape[0]
    ys = torch.full((B, 1), BOS_ID, dtype=torch.long)
    done = torch.zeros(B, dtype=torch.bool)
    for _ in range(max_len):
        nxt = decode(params, cfg, ys, memory, bias, NO_DROPOUT)[:, -1].argmax(dim=-1)
        nxt = nxt.masked_fill(done, EOS_ID)
        ys = torch.cat([ys, nxt.unsqueeze(1)], dim=1)
        done |= nxt == EOS_ID
        if done.all():
            break
    out = []
    for row in ys[:, 1:].tolist():
        out.append(row[:row.index(EOS_ID)] if EOS_ID in row else row)
    return out
