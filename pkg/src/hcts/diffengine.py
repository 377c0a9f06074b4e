"""Gradients, finite-difference checking, optimizer steps and curvature parametrization.

Reverse-mode accumulation is delegated to torch.autograd: an objective is a
zero-argument callable that rebuilds the recorded computation from the
current parameter tensors, so it can be replayed (for finite differences or
to localize a NaN) as often as needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping

import torch
import torch.nn.functional as F

from .errors import NumericFailure, UsageError

Objective = Callable[[], torch.Tensor]
CURVATURE_FLOOR = 1e-4


def stop_gradient(x: torch.Tensor) -> torch.Tensor:
    return x.detach()


def curvature_value(raw) -> torch.Tensor:
    """K = softplus(raw) + 1e-4, strictly positive for any finite raw."""
    raw = torch.as_tensor(raw, dtype=torch.float64)
    return F.softplus(raw) + CURVATURE_FLOOR


def raw_for_curvature(k: float) -> float:
    """Inverse of ``curvature_value``."""
    y = k - CURVATURE_FLOOR
    if y <= 0:
        raise UsageError(f"curvature {k} is below the floor {CURVATURE_FLOOR}")
    return y + math.log(-math.expm1(-y))


def _finite(ts) -> bool:
    return all(t is None or bool(torch.isfinite(t).all()) for t in ts)


def _locate_nan(objective: Objective, params: Mapping[str, torch.Tensor]) -> str:
    """Replay the objective; name the first backward node that emits NaN/Inf from finite inputs."""
    value = objective()
    culprits = []
    seen, stack = set(), [value.grad_fn]
    while stack:
        node = stack.pop()
        if node is None or node in seen:
            continue
        seen.add(node)

        def hook(grad_inputs, grad_outputs, node=node):
            if _finite(grad_outputs) and not _finite(grad_inputs):
                culprits.append(node.name())

        node.register_hook(hook)
        stack.extend(nxt for nxt, _ in node.next_functions)
    torch.autograd.grad(value, list(params.values()), allow_unused=True)
    return culprits[0] if culprits else "unknown"


def gradients(objective: Objective, params: Mapping[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    """d objective / d p for each named parameter; exact zeros for unused ones."""
    value = objective()
    if value.numel() != 1:
        raise UsageError("objective must evaluate to a scalar")
    if not torch.isfinite(value):
        raise NumericFailure(f"objective evaluated to {value.item()}", component="forward")
    names = list(params)
    tensors = [params[n] for n in names]
    if not value.requires_grad:
        return {n: torch.zeros_like(p) for n, p in zip(names, tensors)}
    grads = torch.autograd.grad(value, tensors, allow_unused=True)
    out = {}
    for name, p, g in zip(names, tensors, grads):
        out[name] = torch.zeros_like(p) if g is None else g
    for name, g in out.items():
        if not torch.isfinite(g).all():
            where = _locate_nan(objective, params)
            raise NumericFailure(f"non-finite gradient for {name} (primitive {where})", component=where)
    return out


def fd_check(objective: Objective, params: Mapping[str, torch.Tensor], h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error per coordinate is |a - n| / max(|a|, |n|, 1e-8).
    """
    if h <= 0:
        raise UsageError("step h must be positive")
    analytic = gradients(objective, params)
    worst = 0.0
    with torch.no_grad():
        for name, p in params.items():
            flat = p.view(-1)
            a_flat = analytic[name].reshape(-1)
            for idx in range(flat.numel()):
                orig = flat[idx].item()
                flat[idx] = orig + h
                f_plus = objective().item()
                flat[idx] = orig - h
                f_minus = objective().item()
                flat[idx] = orig
                numeric = (f_plus - f_minus) / (2 * h)
                a = a_flat[idx].item()
                denom = max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, abs(a - numeric) / denom)
    return worst


@dataclass
class OptimizerState:
    """Adam (or plain SGD) over a dict of flat Euclidean parameters.

    ``frozen`` maps a parameter name to a boolean mask of entries that are
    restored to their pre-step values after every update (row 0 of the
    alignment matrices).
    """

    params: Dict[str, torch.Tensor]
    lr: float = 1e-3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    method: str = "adam"
    frozen: Dict[str, torch.Tensor] = field(default_factory=dict)
    clip_norm: float | None = None

    def __post_init__(self):
        tensors = list(self.params.values())
        if self.method == "adam":
            self._opt = torch.optim.Adam(tensors, lr=self.lr, betas=self.betas, eps=self.eps)
        elif self.method == "sgd":
            self._opt = torch.optim.SGD(tensors, lr=self.lr)
        else:
            raise UsageError(f"unknown optimizer {self.method!r}")
        self.step_count = 0

    def step(self, grads: Mapping[str, torch.Tensor]):
        for name, g in grads.items():
            if not torch.isfinite(g).all():
                raise NumericFailure(f"non-finite gradient for {name}", component=name)
        for name, p in self.params.items():
            g = grads.get(name)
            p.grad = torch.zeros_like(p) if g is None else g.detach().clone()
        if self.clip_norm is not None:
            torch.nn.utils.clip_grad_norm_(list(self.params.values()), self.clip_norm)
        saved = {n: self.params[n].detach()[m].clone() for n, m in self.frozen.items()}
        self._opt.step()
        with torch.no_grad():
            for name, mask in self.frozen.items():
                self.params[name][mask] = saved[name]
        for p in self.params.values():
            p.grad = None
        self.step_count += 1


def optimizer_step(state: OptimizerState, grads: Mapping[str, torch.Tensor]) -> Dict[str, torch.Tensor]:
    state.step(grads)
    return state.params
