"""DG-MAML training with similarity-driven virtual tasks, and the supervised baseline."""

from __future__ import annotations

import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from .corpus import Corpus, Example
from .errors import ConfigError, NumericalError
from .neurnet.autodiff import ModelParams, Tensor, check_finite, clip_grads, grad
from .neurnet.checkpoint import save_checkpoint
from .neurnet.seq2seq import Dropout, Seq2SeqConfig, init_params, make_batch, nll_loss
from .relevance import NeighborIndex, SamplerConfig, sample_meta_test

log = logging.getLogger(__name__)

LossFn = Callable[[ModelParams, Sequence], Tensor]


@dataclass(frozen=True)
class TrainerConfig:
    mode: str = "maml"                 # "maml" or "supervised"
    alpha: float = 0.01                # inner (meta-train) learning rate
    outer_lr: float = 1e-3
    steps: int = 400
    batch_size: int = 16
    first_order: bool = False
    optimizer: str = "adam"
    seed: int = 0
    clip_norm: float = 5.0
    checkpoint_every: int | None = None

    def __post_init__(self):
        if self.mode not in ("maml", "supervised"):
            raise ConfigError(f"mode must be 'maml' or 'supervised', got {self.mode!r}")
        if not self.alpha >= 0:
            raise ConfigError("alpha must be non-negative")
        if self.outer_lr <= 0:
            raise ConfigError("outer_lr must be positive")
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("steps and batch_size must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"optimizer must be 'adam' or 'sgd', got {self.optimizer!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class VirtualTask:
    meta_train: list[Example]
    meta_test: list[Example]


def make_virtual_task(corpus: Corpus, idx: NeighborIndex, scfg: SamplerConfig, batch_size: int,
                      rng: np.random.Generator) -> VirtualTask:
    """Random meta-train batch plus one relevance-sampled meta-test example per element."""
    n = len(corpus)
    if n < batch_size:
        raise ConfigError(f"corpus of {n} examples is smaller than batch size {batch_size}")
    anchors = rng.choice(n, size=batch_size, replace=False)
    partners = [sample_meta_test(idx, int(a), scfg, n, rng) for a in anchors]
    return VirtualTask([corpus[int(a)] for a in anchors], [corpus[p] for p in partners])


def inner_step(loss_fn: LossFn, params: ModelParams, batch: Sequence, alpha: float,
               create_graph: bool = True) -> tuple[ModelParams, Tensor]:
    """One plain SGD step on ``batch``: theta' = theta - alpha * grad L(theta).

    Returns the adapted parameters and the loss at ``theta``. Without
    ``create_graph`` the gradient is treated as a constant (first-order).
    """
    loss = loss_fn(params, batch)
    g = grad(loss, params, create_graph=create_graph, retain_graph=True)
    check_finite(g, "meta-train gradient")
    if not create_graph:
        g = {n: t.detach() for n, t in g.items()}
    return {n: params[n] - alpha * g[n] for n in params}, loss


def meta_objective(loss_fn: LossFn, params: ModelParams, task: VirtualTask, alpha: float,
                   first_order: bool = False) -> tuple[Tensor, Tensor, Tensor]:
    """L_Bt(theta) + L_Bg(theta'); returns (total, meta-train loss, meta-test loss)."""
    adapted, loss_t = inner_step(loss_fn, params, task.meta_train, alpha,
                                 create_graph=not first_order)
    loss_g = loss_fn(adapted, task.meta_test)
    return loss_t + loss_g, loss_t, loss_g


class Parser:
    """Binds a seq2seq config and vocabularies into a ``loss_fn(params, examples)``."""

    def __init__(self, cfg: Seq2SeqConfig, corpus: Corpus, dropout_seed: int | None = None):
        self.cfg = cfg
        self.source_vocab = corpus.source_vocab
        self.target_vocab = corpus.target_vocab
        gen = torch.Generator().manual_seed(dropout_seed) if dropout_seed is not None else None
        self.drop = Dropout(cfg.dropout, gen)

    def init(self, seed: int) -> ModelParams:
        return init_params(self.cfg, len(self.source_vocab), len(self.target_vocab), seed)

    def __call__(self, params: ModelParams, examples: Sequence[Example]) -> Tensor:
        batch = make_batch(examples, self.source_vocab, self.target_vocab)
        return nll_loss(params, self.cfg, batch, self.drop)


@dataclass
class TrainResult:
    params: ModelParams
    log: list[dict] = field(default_factory=list)
    checkpoints: list[str] = field(default_factory=list)


def _optimizer(tcfg: TrainerConfig, leaves: list[Tensor]) -> torch.optim.Optimizer:
    if tcfg.optimizer == "adam":
        return torch.optim.Adam(leaves, lr=tcfg.outer_lr, betas=(0.9, 0.999))
    return torch.optim.SGD(leaves, lr=tcfg.outer_lr)


def step_gradient(loss_fn: LossFn, params: ModelParams, tcfg: TrainerConfig,
                  task: VirtualTask) -> tuple[ModelParams, float, float | None]:
    """Gradient of the step objective; returns (grads, meta-train loss, meta-test loss)."""
    if tcfg.mode == "supervised":
        loss = loss_fn(params, task.meta_train)
        return grad(loss, params), float(loss.detach()), None
    total, loss_t, loss_g = meta_objective(loss_fn, params, task, tcfg.alpha, tcfg.first_order)
    return grad(total, params), float(loss_t.detach()), float(loss_g.detach())


def train(corpus: Corpus, idx: NeighborIndex | None, scfg: SamplerConfig | None, tcfg: TrainerConfig,
          model_cfg: Seq2SeqConfig, log_path: str | Path | None = None,
          checkpoint_dir: str | Path | None = None) -> TrainResult:
    """Run ``tcfg.steps`` steps of DG-MAML (or plain supervised training) on ``corpus`` only."""
    if tcfg.mode == "maml":
        if idx is None:
            raise ConfigError("MAML training needs a neighbour index (use kind='uniform' for Uni-MAML)")
        idx.check_corpus(corpus)
    scfg = scfg or SamplerConfig()
    parser = Parser(model_cfg, corpus, dropout_seed=tcfg.seed)
    params = parser.init(tcfg.seed)
    leaves = list(params.values())
    opt = _optimizer(tcfg, leaves)
    rng = np.random.default_rng([tcfg.seed, scfg.rng_seed])
    every = tcfg.checkpoint_every or max(1, tcfg.steps // 10)
    result = TrainResult(params)
    sink = open(log_path, "a", encoding="utf-8") if log_path else None
    try:
        for step in range(1, tcfg.steps + 1):
            t0 = time.perf_counter()
            if tcfg.mode == "maml":
                task = make_virtual_task(corpus, idx, scfg, tcfg.batch_size, rng)
            else:
                ids = rng.choice(len(corpus), size=min(tcfg.batch_size, len(corpus)), replace=False)
                task = VirtualTask([corpus[int(i)] for i in ids], [])
            grads, loss_t, loss_g = step_gradient(parser, params, tcfg, task)
            if not math.isfinite(loss_t) or (loss_g is not None and not math.isfinite(loss_g)):
                raise NumericalError(f"non-finite loss at step {step}")
            check_finite(grads)
            grads, norm = clip_grads(grads, tcfg.clip_norm)
            opt.zero_grad(set_to_none=True)
            for name, p in params.items():
                p.grad = grads[name].detach()
            opt.step()
            record = {"step": step, "loss_meta_train": loss_t, "loss_meta_test": loss_g,
                      "grad_norm": norm, "wall_ms": round(1000 * (time.perf_counter() - t0), 3)}
            result.log.append(record)
            if sink:
                sink.write(json.dumps(record) + "\n")
            if checkpoint_dir and (step % every == 0 or step == tcfg.steps):
                path = Path(checkpoint_dir) / f"step{step:06d}.ckpt"
                save_checkpoint(path, params, model_cfg, corpus.source_vocab,
                                corpus.target_vocab, {"step": step, "trainer": tcfg.to_dict()})
                result.checkpoints.append(str(path))
            if step % max(1, tcfg.steps // 10) == 0:
                log.info("step %d  L_t=%.4f  L_g=%s  |g|=%.3f", step, loss_t,
                         "-" if loss_g is None else f"{loss_g:.4f}", norm)
    finally:
        if sink:
            sink.close()
    return result
