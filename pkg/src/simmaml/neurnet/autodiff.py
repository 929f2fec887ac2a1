"""Reverse-mode differentiation over named parameter collections.

Tensors are ``torch.float64`` tensors; a parameter collection is an ordered
``dict[str, Tensor]``. Gradients can themselves be differentiated when
requested with ``create_graph=True``, which is what the meta objective needs.
"""

from __future__ import annotations

import math
from typing import Mapping

import torch

from ..errors import NumericalError

Tensor = torch.Tensor
ModelParams = dict[str, Tensor]

DTYPE = torch.float64


def grad(loss: Tensor, params: Mapping[str, Tensor], create_graph: bool = False,
         retain_graph: bool | None = None, allow_unused: bool = True) -> ModelParams:
    """Gradient of a scalar ``loss`` with respect to every entry of ``params``.

    Parameters the loss does not depend on get a zero gradient. With
    ``create_graph`` the returned tensors stay attached to the graph;
    ``retain_graph`` keeps the forward graph alive for a later backward pass.
    """
    if loss.dim() != 0:
        raise ValueError(f"loss must be a scalar, got shape {tuple(loss.shape)}")
    if create_graph:
        bad = once_differentiable_ops(loss)
        if bad:
            raise NotImplementedError(
                f"second-order gradient requested through once-differentiable op(s): {', '.join(bad)}")
    names = list(params)
    try:
        grads = torch.autograd.grad(loss, [params[n] for n in names], create_graph=create_graph,
                                    retain_graph=retain_graph, allow_unused=allow_unused)
    except RuntimeError as exc:
        msg = str(exc)
        if "not implemented" in msg or "double backward" in msg.lower():
            raise NotImplementedError(f"second-order gradient unavailable: {msg}") from exc
        raise
    return {n: (torch.zeros_like(params[n]) if g is None else g) for n, g in zip(names, grads)}


def once_differentiable_ops(loss: Tensor) -> list[str]:
    """Names of backward nodes in ``loss``'s graph whose backward cannot itself be differentiated."""
    bad, seen, stack = [], set(), [loss.grad_fn]
    while stack:
        node = stack.pop()
        if node is None or node in seen:
            continue
        seen.add(node)
        fwd = getattr(node, "_forward_cls", None)
        # torch.autograd.function.once_differentiable wraps backward with functools.wraps
        if fwd is not None and hasattr(fwd.backward, "__wrapped__"):
            bad.append(fwd.__name__)
        stack.extend(n for n, _ in node.next_functions)
    return sorted(set(bad))


def global_norm(grads: Mapping[str, Tensor]) -> float:
    return math.sqrt(sum(float((g.detach() ** 2).sum()) for g in grads.values()))


def check_finite(grads: Mapping[str, Tensor], what: str = "gradient") -> None:
    for name, g in grads.items():
        if not torch.isfinite(g).all():
            raise NumericalError(f"non-finite {what} for parameter {name!r}")


def clip_grads(grads: ModelParams, max_norm: float) -> tuple[ModelParams, float]:
    """Rescale ``grads`` so their global norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_norm(grads)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        grads = {n: g * scale for n, g in grads.items()}
    return grads, norm


def detached(params: Mapping[str, Tensor]) -> ModelParams:
    """Independent leaf copies that require grad (for snapshots and fresh optimisation)."""
    return {n: p.detach().clone().requires_grad_(True) for n, p in params.items()}
