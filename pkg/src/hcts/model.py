"""Trainable parameters, per-domain forward pass, cross-manifold transfer, scoring, checkpoints."""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Dict

import numpy as np
import torch

from . import geometry
from .data import SOURCE_TO_TARGET, TARGET_TO_SOURCE
from .diffengine import curvature_value, raw_for_curvature, stop_gradient
from .errors import DataError, NumericFailure, UsageError
from .geometry import DTYPE, EuclideanSpace, Hyperboloid, LorentzPoint, align_between
from .propagation import propagate

MAGIC = b"HCTS1"
TABLES = ("user_emb_src", "item_emb_src", "user_emb_tgt", "item_emb_tgt")
ALIGNERS = ("w_s2t", "w_t2t", "w_t2s", "w_s2s")


@dataclass(eq=False)
class ModelParams:
    user_emb_src: torch.Tensor
    item_emb_src: torch.Tensor
    user_emb_tgt: torch.Tensor
    item_emb_tgt: torch.Tensor
    raw_curv_src: torch.Tensor
    raw_curv_tgt: torch.Tensor
    w_s2t: torch.Tensor
    w_t2t: torch.Tensor
    w_t2s: torch.Tensor
    w_s2s: torch.Tensor
    seed: int = 0
    step: int = 0
    share_curvature: bool = False
    euclidean: bool = False

    @property
    def dim(self) -> int:
        return self.user_emb_src.shape[1]

    def named(self) -> Dict[str, torch.Tensor]:
        names = TABLES + ("raw_curv_src", "raw_curv_tgt") + ALIGNERS
        return {n: getattr(self, n) for n in names}

    def trainable(self) -> Dict[str, torch.Tensor]:
        """Parameters handed to the optimizer (unused ones are left out)."""
        out = self.named()
        if self.share_curvature:
            del out["raw_curv_tgt"]
        if self.euclidean:
            del out["raw_curv_src"]
            out.pop("raw_curv_tgt", None)
        return out

    def frozen_masks(self) -> Dict[str, torch.Tensor]:
        masks = {}
        for n in ALIGNERS:
            m = torch.zeros_like(getattr(self, n), dtype=torch.bool)
            m[0] = True
            masks[n] = m
        return masks

    def curvature(self, domain: str) -> torch.Tensor:
        if domain == "source" or self.share_curvature:
            return curvature_value(self.raw_curv_src)
        if domain == "target":
            return curvature_value(self.raw_curv_tgt)
        raise UsageError(f"unknown domain {domain!r}")

    def space(self, domain: str):
        return EuclideanSpace() if self.euclidean else Hyperboloid(self.curvature(domain))

    def tables(self, domain: str):
        if domain == "source":
            return self.user_emb_src, self.item_emb_src
        if domain == "target":
            return self.user_emb_tgt, self.item_emb_tgt
        raise UsageError(f"unknown domain {domain!r}")


def init_params(dim: int, sizes, seed: int = 0, init_curvature: float = 1.0,
                share_curvature: bool = False, euclidean: bool = False) -> ModelParams:
    """Gaussian(0, 0.1/sqrt(d)) tables, K ~= init_curvature, identity aligners with zero row 0.

    ``sizes`` is (n_users_src, n_items_src, n_users_tgt, n_items_tgt).
    """
    if dim < 2:
        raise UsageError("embedding dimension must be at least 2")
    gen = torch.Generator().manual_seed(int(seed))
    std = 0.1 / math.sqrt(dim)
    tables = [torch.randn(n, dim, generator=gen, dtype=DTYPE) * std for n in sizes]
    raw = raw_for_curvature(init_curvature)

    def aligner():
        w = torch.eye(dim + 1, dtype=DTYPE)
        w[0, 0] = 0.0
        return w

    p = ModelParams(*tables, torch.tensor(raw, dtype=DTYPE), torch.tensor(raw, dtype=DTYPE),
                    aligner(), aligner(), aligner(), aligner(), seed=int(seed), step=0,
                    share_curvature=share_curvature, euclidean=euclidean)
    for t in p.named().values():
        t.requires_grad_(True)
    return p


@dataclass
class DomainState:
    """Lifted user/item tables of one domain and the Euclidean tables they came from."""

    space: object
    users: torch.Tensor
    items: torch.Tensor
    users_euclid: torch.Tensor
    items_euclid: torch.Tensor


def forward_domain(params: ModelParams, graph, domain: str, layers: int = 3) -> DomainState:
    """Embedding tables -> skip-GCN -> lift onto the domain's manifold."""
    u0, i0 = params.tables(domain)
    ue, ie = propagate(u0, i0, graph, layers)
    if not (torch.isfinite(ue).all() and torch.isfinite(ie).all()):
        raise NumericFailure(f"non-finite propagation output in {domain}", component=f"propagate[{domain}]")
    space = params.space(domain)
    return DomainState(space, space.lift(ue), space.lift(ie), ue, ie)


def _aligner(params: ModelParams, direction: str):
    if direction == SOURCE_TO_TARGET:
        return params.w_s2t, params.w_t2t
    if direction == TARGET_TO_SOURCE:
        return params.w_t2s, params.w_s2s
    raise UsageError(f"unknown direction {direction!r}")


def transfer_embeddings(send: DomainState, recv: DomainState, params: ModelParams, direction: str) -> dict:
    """Map both domains' tables onto the receiving manifold.

    The sending domain's tangent vectors are wrapped in stop_gradient, so its
    embedding tables and curvature receive nothing through this path while
    the cross-domain aligner is still trained. The receiving domain goes
    through its own same-curvature aligner with gradients intact.
    """
    w_cross, w_self = _aligner(params, direction)
    geometry.check_alignment_matrix(w_cross.detach())
    geometry.check_alignment_matrix(w_self.detach())
    dst = recv.space

    def cross(points):
        t = stop_gradient(send.space.log0(points))
        return dst.exp0(torch.relu(t @ w_cross[1:, 1:].T))

    return {
        "send_users": cross(send.users),
        "send_items": cross(send.items),
        "recv_users": align_between(recv.users, dst, dst, w_self),
        "recv_items": align_between(recv.items, dst, dst, w_self),
    }


def score(u: LorentzPoint, i: LorentzPoint) -> torch.Tensor:
    """-d(u, i)^2; larger is better."""
    return -geometry.hyp_distance(u, i) ** 2


def score_matrix(space, users: torch.Tensor, items: torch.Tensor) -> torch.Tensor:
    """(n_users, n_items) matrix of -d^2 without materializing pairwise differences."""
    if not space.hyperbolic:
        sq = (users * users).sum(1, keepdim=True) + (items * items).sum(1) - 2.0 * users @ items.T
        return -torch.clamp(sq, min=0.0)
    k = geometry.as_k(space.k)
    inner = users[:, 1:] @ items[:, 1:].T - users[:, :1] @ items[:, :1].T
    return -(torch.sqrt(k) * geometry.arcosh(-inner / k)) ** 2


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(params: ModelParams, path):
    d = params.dim
    counts = (d, params.user_emb_src.shape[0], params.item_emb_src.shape[0],
              params.user_emb_tgt.shape[0], params.item_emb_tgt.shape[0])
    chunks = [MAGIC, struct.pack("<5q", *counts),
              struct.pack("<2d", params.raw_curv_src.item(), params.raw_curv_tgt.item())]
    for name in TABLES + ALIGNERS:
        arr = getattr(params, name).detach().numpy()
        chunks.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    chunks.append(struct.pack("<2q", params.seed, params.step))
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path, share_curvature: bool = False, euclidean: bool = False) -> ModelParams:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if blob[:5] != MAGIC:
        raise DataError(f"{path}: not an HCTS1 checkpoint")
    off = 5
    try:
        d, nus, nis, nut, nit = struct.unpack_from("<5q", blob, off)
        off += 40
        raw_s, raw_t = struct.unpack_from("<2d", blob, off)
        off += 16
        shapes = [(nus, d), (nis, d), (nut, d), (nit, d)] + [(d + 1, d + 1)] * 4
        arrays = []
        for shape in shapes:
            n = shape[0] * shape[1]
            if n < 0 or off + 8 * n > len(blob):
                raise struct.error("truncated table")
            arrays.append(np.frombuffer(blob, dtype="<f8", count=n, offset=off).reshape(shape))
            off += 8 * n
        seed, step = struct.unpack_from("<2q", blob, off)
        off += 16
    except struct.error as exc:
        raise DataError(f"{path}: truncated or malformed checkpoint ({exc})") from exc
    if off != len(blob):
        raise DataError(f"{path}: {len(blob) - off} trailing bytes")
    tensors = [torch.tensor(a.astype(np.float64), dtype=DTYPE) for a in arrays]
    p = ModelParams(*tensors[:4], torch.tensor(raw_s, dtype=DTYPE), torch.tensor(raw_t, dtype=DTYPE),
                    *tensors[4:], seed=seed, step=step, share_curvature=share_curvature, euclidean=euclidean)
    for t in p.named().values():
        t.requires_grad_(True)
    return p
