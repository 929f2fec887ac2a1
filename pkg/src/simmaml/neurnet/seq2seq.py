"""Sequence-to-sequence semantic parser written as pure functions of a parameter dict.

The LSTM variant is a bidirectional multi-layer encoder and an LSTM decoder
with bilinear (Luong "general") attention and input feeding. Because the
forward pass only reads tensors from ``params``, evaluating the loss at
adapted parameters ``theta - alpha * grad`` needs no module surgery.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import torch

from ..corpus import BOS_ID, EOS_ID, PAD_ID, Example, Vocab
from ..errors import ConfigError
from .autodiff import DTYPE, ModelParams, Tensor

NEG_INF = -1e30


@dataclass(frozen=True)
class Seq2SeqConfig:
    architecture: str = "lstm"
    hidden: int = 64
    embedding: int | None = None        # defaults to ``hidden``
    encoder_layers: int = 2
    decoder_layers: int = 1
    # transformer only
    transformer_layers: int = 2
    heads: int = 4
    ff_dim: int = 1024
    dropout: float = 0.1
    init_scale: float = 0.1

    def __post_init__(self):
        if self.architecture not in ("lstm", "transformer"):
            raise ConfigError(f"unknown architecture {self.architecture!r}")
        if self.hidden < 2 or self.hidden % 2:
            raise ConfigError("hidden size must be an even number >= 2")
        if self.architecture == "transformer" and self.hidden % self.heads:
            raise ConfigError("hidden size must be divisible by the number of heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.encoder_layers < 1 or self.decoder_layers < 1:
            raise ConfigError("need at least one encoder and one decoder layer")

    @property
    def emb_dim(self) -> int:
        return self.embedding or self.hidden

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def paper(cls, architecture: str = "lstm") -> "Seq2SeqConfig":
        """Full-size configuration (hidden 256)."""
        return cls(architecture=architecture, hidden=256)


@dataclass
class Batch:
    src: Tensor          # (B, S) long
    src_mask: Tensor     # (B, S) bool, True on real tokens
    tgt_in: Tensor       # (B, T) long, BOS + target
    tgt_out: Tensor      # (B, T) long, target + EOS
    tgt_mask: Tensor     # (B, T) bool

    def __len__(self) -> int:
        return self.src.shape[0]


def _pad_ids(rows: Sequence[Sequence[int]]) -> tuple[Tensor, Tensor]:
    width = max(len(r) for r in rows)
    ids = torch.full((len(rows), width), PAD_ID, dtype=torch.long)
    for i, r in enumerate(rows):
        ids[i, :len(r)] = torch.tensor(r, dtype=torch.long)
    return ids, ids != PAD_ID


def encode_sources(sources: Sequence[Sequence[str]], vocab: Vocab) -> tuple[Tensor, Tensor]:
    return _pad_ids([vocab.encode(s) for s in sources])


def make_batch(examples: Sequence[Example], src_vocab: Vocab, tgt_vocab: Vocab,
               allow_unk: bool = True) -> Batch:
    if not examples:
        raise ValueError("empty batch")
    src, src_mask = _pad_ids([src_vocab.encode(e.source, allow_unk) for e in examples])
    tgt = [tgt_vocab.encode(e.target, allow_unk) for e in examples]
    tgt_in, _ = _pad_ids([[BOS_ID] + t for t in tgt])
    tgt_out, tgt_mask = _pad_ids([t + [EOS_ID] for t in tgt])
    return Batch(src, src_mask, tgt_in, tgt_out, tgt_mask)


class Dropout:
    """Inverted dropout driven by its own generator, so runs are reproducible."""

    def __init__(self, p: float, generator: torch.Generator | None):
        self.p = p
        self.generator = generator

    def __call__(self, x: Tensor) -> Tensor:
        if self.p <= 0.0 or self.generator is None:
            return x
        keep = torch.rand(x.shape, generator=self.generator, dtype=x.dtype) >= self.p
        return x * keep / (1.0 - self.p)


NO_DROPOUT = Dropout(0.0, None)


# --- LSTM parser ---------------------------------------------------------------------

def lstm_param_shapes(cfg: Seq2SeqConfig, n_src: int, n_tgt: int) -> dict[str, tuple[int, ...]]:
    H, E, h = cfg.hidden, cfg.emb_dim, cfg.hidden // 2
    shapes: dict[str, tuple[int, ...]] = {"src_emb": (n_src, E), "tgt_emb": (n_tgt, E)}
    for layer in range(cfg.encoder_layers):
        d_in = E if layer == 0 else H
        for direction in ("fwd", "bwd"):
            pre = f"enc.{layer}.{direction}"
            shapes[f"{pre}.w_ih"] = (4 * h, d_in)
            shapes[f"{pre}.w_hh"] = (4 * h, h)
            shapes[f"{pre}.b"] = (4 * h,)
    for layer in range(cfg.decoder_layers):
        d_in = E + H if layer == 0 else H
        shapes[f"dec.{layer}.w_ih"] = (4 * H, d_in)
        shapes[f"dec.{layer}.w_hh"] = (4 * H, H)
        shapes[f"dec.{layer}.b"] = (4 * H,)
    shapes["attn.w"] = (H, H)
    shapes["attn.out"] = (H, 2 * H)
    shapes["proj.w"] = (n_tgt, H)
    shapes["proj.b"] = (n_tgt,)
    return shapes


def _lstm_cell(gates: Tensor, c: Tensor) -> tuple[Tensor, Tensor]:
    i, f, g, o = gates.chunk(4, dim=-1)
    c = torch.sigmoid(f) * c + torch.sigmoid(i) * torch.tanh(g)
    return torch.sigmoid(o) * torch.tanh(c), c


def _lstm_direction(x: Tensor, mask: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor,
                    reverse: bool) -> tuple[Tensor, Tensor, Tensor]:
    """Run one direction over (B, S, D) inputs; padded steps leave the state untouched."""
    B, S, _ = x.shape
    hdim = w_hh.shape[1]
    xin = x @ w_ih.T + b
    h = x.new_zeros(B, hdim)
    c = x.new_zeros(B, hdim)
    m = mask.to(x.dtype).unsqueeze(-1)
    outs: list[Tensor] = [None] * S  # type: ignore[list-item]
    steps = range(S - 1, -1, -1) if reverse else range(S)
    for t in steps:
        h_new, c_new = _lstm_cell(xin[:, t] + h @ w_hh.T, c)
        mt = m[:, t]
        h = mt * h_new + (1 - mt) * h
        c = mt * c_new + (1 - mt) * c
        outs[t] = h
    return torch.stack(outs, dim=1), h, c


def lstm_encode(params: ModelParams, cfg: Seq2SeqConfig, src: Tensor, src_mask: Tensor,
                drop: Dropout) -> tuple[Tensor, Tensor, Tensor]:
    x = drop(params["src_emb"][src])
    for layer in range(cfg.encoder_layers):
        pre = f"enc.{layer}"
        fo, fh, fc = _lstm_direction(x, src_mask, params[f"{pre}.fwd.w_ih"],
                                     params[f"{pre}.fwd.w_hh"], params[f"{pre}.fwd.b"], False)
        bo, bh, bc = _lstm_direction(x, src_mask, params[f"{pre}.bwd.w_ih"],
                                     params[f"{pre}.bwd.w_hh"], params[f"{pre}.bwd.b"], True)
        x = torch.cat([fo, bo], dim=-1)
    return x, torch.cat([fh, bh], dim=-1), torch.cat([fc, bc], dim=-1)


class LSTMDecoderState:
    def __init__(self, params: ModelParams, cfg: Seq2SeqConfig, memory: Tensor,
                 src_mask: Tensor, h0: Tensor, c0: Tensor):
        self.params, self.cfg = params, cfg
        self.memory = memory
        self.keys = memory @ params["attn.w"].T          # bilinear scores: h^T W m = (W^T h) . m
        self.bias = torch.zeros(src_mask.shape, dtype=memory.dtype).masked_fill(~src_mask, NEG_INF)
        self.h = [h0] * cfg.decoder_layers
        self.c = [c0] * cfg.decoder_layers
        self.feed = memory.new_zeros(memory.shape[0], cfg.hidden)

    def step(self, emb: Tensor, drop: Dropout) -> Tensor:
        p = self.params
        x = torch.cat([emb, self.feed], dim=-1)
        for layer in range(self.cfg.decoder_layers):
            gates = x @ p[f"dec.{layer}.w_ih"].T + self.h[layer] @ p[f"dec.{layer}.w_hh"].T \
                + p[f"dec.{layer}.b"]
            self.h[layer], self.c[layer] = _lstm_cell(gates, self.c[layer])
            x = self.h[layer]
        scores = (self.keys @ x.unsqueeze(-1)).squeeze(-1) + self.bias
        attn = torch.softmax(scores, dim=-1)
        ctx = (attn.unsqueeze(1) @ self.memory).squeeze(1)
        out = torch.tanh(torch.cat([ctx, x], dim=-1) @ p["attn.out"].T)
        self.feed = out
        return drop(out)


def lstm_logits(params: ModelParams, cfg: Seq2SeqConfig, batch: Batch, drop: Dropout) -> Tensor:
    memory, h0, c0 = lstm_encode(params, cfg, batch.src, batch.src_mask, drop)
    state = LSTMDecoderState(params, cfg, memory, batch.src_mask, h0, c0)
    emb = drop(params["tgt_emb"][batch.tgt_in])
    outs = [state.step(emb[:, t], drop) for t in range(batch.tgt_in.shape[1])]
    return torch.stack(outs, dim=1) @ params["proj.w"].T + params["proj.b"]


def lstm_greedy(params: ModelParams, cfg: Seq2SeqConfig, src: Tensor, src_mask: Tensor,
                max_len: int) -> list[list[int]]:
    memory, h0, c0 = lstm_encode(params, cfg, src, src_mask, NO_DROPOUT)
    state = LSTMDecoderState(params, cfg, memory, src_mask, h0, c0)
    B = src.shape[0]
    prev = torch.full((B,), BOS_ID, dtype=torch.long)
    done = torch.zeros(B, dtype=torch.bool)
    out: list[list[int]] = [[] for _ in range(B)]
    for _ in range(max_len):
        hid = state.step(params["tgt_emb"][prev], NO_DROPOUT)
        prev = (hid @ params["proj.w"].T + params["proj.b"]).argmax(dim=-1)
        for i in range(B):
            if not done[i]:
                if prev[i] == EOS_ID:
                    done[i] = True
                else:
                    out[i].append(int(prev[i]))
        if done.all():
            break
    return out


# --- public interface ----------------------------------------------------------------

def param_shapes(cfg: Seq2SeqConfig, n_src: int, n_tgt: int) -> dict[str, tuple[int, ...]]:
    if cfg.architecture == "lstm":
        return lstm_param_shapes(cfg, n_src, n_tgt)
    from .transformer import transformer_param_shapes
    return transformer_param_shapes(cfg, n_src, n_tgt)


def init_params(cfg: Seq2SeqConfig, n_src: int, n_tgt: int, seed: int = 0) -> ModelParams:
    """Uniform(-init_scale, init_scale) weights (layer-norm gains start at 1), float64."""
    gen = torch.Generator().manual_seed(seed)
    params: ModelParams = {}
    for name, shape in param_shapes(cfg, n_src, n_tgt).items():
        if name.endswith(".ln_g"):
            t = torch.ones(shape, dtype=DTYPE)
        elif name.endswith(".ln_b"):
            t = torch.zeros(shape, dtype=DTYPE)
        else:
            t = (torch.rand(shape, generator=gen, dtype=DTYPE) * 2 - 1) * cfg.init_scale
        params[name] = t.requires_grad_(True)
    return params


def logits(params: ModelParams, cfg: Seq2SeqConfig, batch: Batch,
           drop: Dropout = NO_DROPOUT) -> Tensor:
    """Teacher-forced output scores, shape (B, T, |target vocab|)."""
    if cfg.architecture == "lstm":
        return lstm_logits(params, cfg, batch, drop)
    from .transformer import transformer_logits
    return transformer_logits(params, cfg, batch, drop)


def nll_loss(params: ModelParams, cfg: Seq2SeqConfig, batch: Batch,
             drop: Dropout = NO_DROPOUT, reduction: str = "sequence") -> Tensor:
    """Negative log-likelihood of the targets under teacher forcing.

    ``reduction="sequence"`` sums token log-probabilities per example and
    averages over the batch; ``"token"`` averages over all real target tokens.
    Padding never contributes.
    """
    logp = torch.log_softmax(logits(params, cfg, batch, drop), dim=-1)
    tok = -logp.gather(-1, batch.tgt_out.unsqueeze(-1)).squeeze(-1)
    tok = tok * batch.tgt_mask.to(tok.dtype)
    if reduction == "sequence":
        return tok.sum() / len(batch)
    if reduction == "token":
        return tok.sum() / batch.tgt_mask.sum()
    raise ValueError(f"unknown reduction {reduction!r}")


@torch.no_grad()
def decode_greedy_ids(params: ModelParams, cfg: Seq2SeqConfig, src: Tensor, src_mask: Tensor,
                      max_len: int) -> list[list[int]]:
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    if cfg.architecture == "lstm":
        return lstm_greedy(params, cfg, src, src_mask, max_len)
    from .transformer import transformer_greedy
    return transformer_greedy(params, cfg, src, src_mask, max_len)


def decode_greedy(params: ModelParams, cfg: Seq2SeqConfig, sources: Sequence[Sequence[str]],
                  src_vocab: Vocab, tgt_vocab: Vocab, max_len: int = 50,
                  batch_size: int = 256) -> list[list[str]]:
    """Argmax decoding until end-of-sequence or ``max_len`` tokens."""
    out: list[list[str]] = []
    for start in range(0, len(sources), batch_size):
        src, mask = encode_sources(sources[start:start + batch_size], src_vocab)
        ids = decode_greedy_ids(params, cfg, src, mask, max_len)
        out.extend(tgt_vocab.decode(row) for row in ids)
    return out
