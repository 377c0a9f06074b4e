"""Loss terms: hyperbolic margin ranking, the three contrastive transfers, center calibration.

Each loss takes a carrier ``space`` (Hyperboloid or EuclideanSpace) that
supplies the distance, so the Euclidean ablation reuses the same code.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Dict, Iterable

import torch

from . import geometry
from .errors import NumericFailure, UsageError

CTS_TERMS = ("l_uu_t", "l_ui_t", "l_ii_t", "l_uu_s", "l_ui_s", "l_ii_s")


def margin_loss(space, users, pos_items, neg_items, margin: float) -> torch.Tensor:
    """Batch mean of max(d(u, i+)^2 - d(u, i-)^2 + m, 0)."""
    if margin < 0:
        raise UsageError("margin must be nonnegative")
    gap = space.sqdist(users, pos_items) - space.sqdist(users, neg_items) + margin
    return torch.relu(gap).mean()


def cl_similarity(x: geometry.LorentzPoint, y: geometry.LorentzPoint) -> torch.Tensor:
    return -geometry.hyp_distance(x, y)


def _check_tau(tau):
    if tau <= 0:
        raise UsageError("temperature must be positive")


def uu_loss(space, users_a, users_b, tau: float, include_positive: bool = False) -> torch.Tensor:
    """User-user transfer. Row i: positive (a_i, b_i); denominator over b_j, j != i only.

    With ``include_positive`` the denominator also holds b_i (standard InfoNCE,
    bounded below by 0).
    """
    _check_tau(tau)
    n = users_a.shape[0]
    if n < 2 or users_b.shape[0] != n:
        raise UsageError("user-user loss needs two aligned batches of equal size >= 2")
    sim = -space.dist_matrix(users_a, users_b) / tau
    pos = torch.diagonal(sim)
    eye = torch.eye(n, dtype=torch.bool)
    others = sim if include_positive else sim.masked_fill(eye, float("-inf"))
    return -(pos - torch.logsumexp(others, dim=1)).mean()


def ui_loss(space, anchors, pos_items, neg_items, tau: float, include_positive: bool = False) -> torch.Tensor:
    """Anchor vs one positive and a set of negatives (rows x n_neg x dim); positive not in denominator."""
    _check_tau(tau)
    if neg_items.ndim != 3 or neg_items.shape[1] < 1:
        raise UsageError("negatives must have shape (rows, n_neg, dim) with n_neg >= 1")
    pos = -space.dist(anchors, pos_items) / tau
    neg = -space.dist_matrix(anchors.unsqueeze(1), neg_items).squeeze(1) / tau
    if include_positive:
        neg = torch.cat([pos.unsqueeze(1), neg], 1)
    return -(pos - torch.logsumexp(neg, dim=1)).mean()


def ii_loss(space, anchor_items, pos_items, neg_items, tau: float, include_positive: bool = False) -> torch.Tensor:
    """Item-item transfer: the anchor is the user's positive item in the receiving domain."""
    return ui_loss(space, anchor_items, pos_items, neg_items, tau, include_positive)


def cts_total(terms: Dict[str, torch.Tensor], active: Iterable[str] = CTS_TERMS):
    active = set(active)
    total = torch.zeros((), dtype=torch.float64)
    for name in CTS_TERMS:
        if name in active and name in terms:
            total = total + terms[name]
    return total


def center_calibration(space, points) -> torch.Tensor:
    """Squared norm of the mean origin-tangent vector of ``points``."""
    if points.shape[0] == 0:
        raise UsageError("calibration needs at least one point")
    center = space.log0(points).mean(0)
    return (center * center).sum()


@dataclass
class LossBreakdown:
    l_src_rank: torch.Tensor
    l_tgt_rank: torch.Tensor
    l_uu_t: torch.Tensor
    l_ui_t: torch.Tensor
    l_ii_t: torch.Tensor
    l_uu_s: torch.Tensor
    l_ui_s: torch.Tensor
    l_ii_s: torch.Tensor
    l_cts: torch.Tensor
    l_clib: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> Dict[str, float]:
        return {f.name: getattr(self, f.name).item() for f in fields(self)}


def total_loss(l_src_rank, l_tgt_rank, cts_terms: Dict[str, torch.Tensor], l_clib,
               lambda_cts: float, lambda_clib: float, active: Iterable[str] = CTS_TERMS) -> LossBreakdown:
    """L = L_S + L_T + lambda_cts * L_cts + lambda_clib * L_clib.

    Inactive contrastive terms are reported as exact zeros.
    """
    for name, lam in (("lambda_cts", lambda_cts), ("lambda_clib", lambda_clib)):
        if not 0.0 <= lam <= 1.0:
            raise UsageError(f"{name} must lie in [0, 1], got {lam}")
    active = set(active)
    zero = torch.zeros((), dtype=torch.float64)
    as_t = lambda v: torch.as_tensor(v, dtype=torch.float64)
    terms = {n: as_t(cts_terms[n]) if (n in active and n in cts_terms) else zero for n in CTS_TERMS}
    parts = {"l_src_rank": as_t(l_src_rank), "l_tgt_rank": as_t(l_tgt_rank), **terms, "l_clib": as_t(l_clib)}
    for name, v in parts.items():
        if not torch.isfinite(v):
            raise NumericFailure(f"loss component {name} is {float(v)}", component=name)
    l_cts = cts_total(terms, active)
    total = parts["l_src_rank"] + parts["l_tgt_rank"] + lambda_cts * l_cts + lambda_clib * parts["l_clib"]
    return LossBreakdown(l_cts=l_cts, total=total, **parts)
