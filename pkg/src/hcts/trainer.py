"""Joint multi-task training loop with ablation switches."""

from __future__ import annotations

import copy
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from .data import (SOURCE_TO_TARGET, TARGET_TO_SOURCE, CrossDomainDataset, sample_cl_batch,
                   sample_rank_batch)
from .diffengine import OptimizerState, gradients
from .errors import UsageError
from .evaluation import evaluate_domain
from .model import ModelParams, forward_domain, init_params, save_checkpoint, transfer_embeddings
from .objectives import LossBreakdown, center_calibration, ii_loss, margin_loss, total_loss, ui_loss, uu_loss
from .propagation import Adjacency

log = logging.getLogger(__name__)

ABLATION_FLAGS = ("no_uu", "no_ui", "no_ii", "no_s2t", "no_t2s", "no_center", "share_curvature", "euclidean")


@dataclass
class TrainConfig:
    dim: int = 64
    layers: int = 3
    lr: float = 1e-3
    batch_size: int = 1024
    epochs: int = 50
    margin: float = 0.1
    temperature: float = 0.1
    lambda_cts: float = 0.01
    lambda_clib: float = 0.1
    n_neg_cl: int = 20
    seed: int = 0
    optimizer: str = "adam"
    grad_clip: float = 5.0
    init_curvature: float = 1.0
    calibrate_both: bool = False
    cl_include_positive: bool = False
    validate: bool = False
    eval_k: int = 10
    no_uu: bool = False
    no_ui: bool = False
    no_ii: bool = False
    no_s2t: bool = False
    no_t2s: bool = False
    no_center: bool = False
    share_curvature: bool = False
    euclidean: bool = False

    def validate_config(self):
        positive = ("dim", "layers", "lr", "batch_size", "temperature", "n_neg_cl", "grad_clip", "init_curvature")
        for name in positive:
            if getattr(self, name) <= 0:
                raise UsageError(f"{name} must be positive")
        if self.dim < 2:
            raise UsageError("dim must be at least 2")
        if not 1 <= self.layers <= 6:
            raise UsageError("layers must lie in 1..6")
        if self.epochs < 0 or self.margin < 0:
            raise UsageError("epochs and margin must be nonnegative")
        for name in ("lambda_cts", "lambda_clib"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise UsageError(f"{name} must lie in [0, 1]")
        return self


@dataclass(frozen=True)
class Composition:
    """The objective a config actually trains."""

    directions: Tuple[str, ...]
    losses: Tuple[str, ...]  # subset of ("uu", "ui", "ii")
    lambda_cts: float
    lambda_clib: float
    share_curvature: bool
    euclidean: bool

    @property
    def active_terms(self) -> Tuple[str, ...]:
        suffix = {SOURCE_TO_TARGET: "t", TARGET_TO_SOURCE: "s"}
        return tuple(f"l_{l}_{suffix[d]}" for d in self.directions for l in self.losses)


def apply_ablation(config: TrainConfig) -> Composition:
    directions = tuple(d for d, off in ((SOURCE_TO_TARGET, config.no_s2t), (TARGET_TO_SOURCE, config.no_t2s))
                       if not off)
    losses = tuple(l for l in ("uu", "ui", "ii") if not getattr(config, f"no_{l}"))
    return Composition(directions, losses, config.lambda_cts, 0.0 if config.no_center else config.lambda_clib,
                       config.share_curvature, config.euclidean)


@dataclass
class TrainHistory:
    rows: List[dict] = field(default_factory=list)

    def append(self, row: dict):
        self.rows.append(row)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> List[float]:
        return [r[name] for r in self.rows]

    def write_jsonl(self, path):
        Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in self.rows), encoding="utf-8")


def _contrastive_terms(comp: Composition, cfg: TrainConfig, states, params, batches) -> Dict[str, torch.Tensor]:
    terms = {}
    for direction in comp.directions:
        cb = batches[direction]
        if direction == SOURCE_TO_TARGET:
            send, recv, tag = states["source"], states["target"], "t"
            send_u, recv_u, send_pos, recv_pos = cb.source_users, cb.target_users, cb.pos_source, cb.pos_target
        else:
            send, recv, tag = states["target"], states["source"], "s"
            send_u, recv_u, send_pos, recv_pos = cb.target_users, cb.source_users, cb.pos_target, cb.pos_source
        tr = transfer_embeddings(send, recv, params, direction)
        space, tau, incl = recv.space, cfg.temperature, cfg.cl_include_positive
        negs = tr["send_items"][torch.as_tensor(cb.neg_items)]
        if "uu" in comp.losses and len(cb) >= 2:
            terms[f"l_uu_{tag}"] = uu_loss(space, tr["send_users"][send_u], tr["recv_users"][recv_u], tau, incl)
        if "ui" in comp.losses:
            terms[f"l_ui_{tag}"] = ui_loss(space, tr["recv_users"][recv_u], tr["send_items"][send_pos], negs, tau, incl)
        if "ii" in comp.losses:
            terms[f"l_ii_{tag}"] = ii_loss(space, tr["recv_items"][recv_pos], tr["send_items"][send_pos], negs, tau, incl)
    return terms


def compute_loss(params: ModelParams, dataset: CrossDomainDataset, cfg: TrainConfig, comp: Composition,
                 adjacency: Dict[str, Adjacency], batches: dict) -> LossBreakdown:
    """Full joint objective for one step given pre-sampled batches.

    ``batches`` holds "source"/"target" RankBatches and optional CLBatches
    keyed by direction.
    """
    states = {d: forward_domain(params, adjacency[d], d, cfg.layers) for d in ("source", "target")}
    rank = {}
    for d in ("source", "target"):
        rb, st = batches[d], states[d]
        rank[d] = margin_loss(st.space, st.users[rb.users], st.items[rb.pos_items], st.items[rb.neg_items],
                              cfg.margin)
    cts = {}
    if comp.lambda_cts > 0 and comp.directions and comp.losses and all(d in batches for d in comp.directions):
        cts = _contrastive_terms(comp, cfg, states, params, batches)
    clib = torch.zeros((), dtype=torch.float64)
    if comp.lambda_clib > 0:
        t = states["target"]
        clib = center_calibration(t.space, torch.cat([t.users, t.items]))
        if cfg.calibrate_both:
            s = states["source"]
            clib = clib + center_calibration(s.space, torch.cat([s.users, s.items]))
    return total_loss(rank["source"], rank["target"], cts, clib, comp.lambda_cts, comp.lambda_clib,
                      comp.active_terms)


def sample_step_batches(dataset: CrossDomainDataset, cfg: TrainConfig, comp: Composition, rngs) -> dict:
    batches = {d: sample_rank_batch(dataset.graph(d), cfg.batch_size, rngs[d]) for d in ("source", "target")}
    if comp.lambda_cts > 0 and comp.losses and len(dataset.cl_eligible) > 0:
        for direction in comp.directions:
            batches[direction] = sample_cl_batch(dataset, direction, cfg.batch_size, cfg.n_neg_cl, rngs["cl"])
    return batches


def _rng_streams(seed: int) -> dict:
    children = np.random.SeedSequence(seed).spawn(3)
    return {"source": np.random.default_rng(children[0]), "target": np.random.default_rng(children[1]),
            "cl": np.random.default_rng(children[2])}


def train(config: TrainConfig, dataset: CrossDomainDataset, out_dir=None,
          params: Optional[ModelParams] = None) -> Tuple[ModelParams, TrainHistory]:
    """Run ``config.epochs`` epochs of joint training; write checkpoints if ``out_dir`` is given."""
    cfg = config.validate_config()
    if dataset.test_target is None or dataset.test_source is None:
        raise UsageError("dataset has no train/test split")
    comp = apply_ablation(cfg)
    if comp.lambda_cts > 0 and comp.directions and comp.losses and len(dataset.cl_eligible) == 0:
        log.warning("no overlapped users with edges in both domains; contrastive transfer disabled")
    if params is None:
        sizes = (dataset.source.num_users, dataset.source.num_items,
                 dataset.target.num_users, dataset.target.num_items)
        params = init_params(cfg.dim, sizes, seed=cfg.seed, init_curvature=cfg.init_curvature,
                             share_curvature=cfg.share_curvature, euclidean=cfg.euclidean)
    adjacency = {d: Adjacency.from_graph(dataset.graph(d)) for d in ("source", "target")}
    trainable = params.trainable()
    frozen = {n: m for n, m in params.frozen_masks().items() if n in trainable}
    opt = OptimizerState(trainable, lr=cfg.lr, method=cfg.optimizer, frozen=frozen, clip_norm=cfg.grad_clip)
    rngs = _rng_streams(cfg.seed)
    steps = max(1, math.ceil(dataset.target.num_edges / cfg.batch_size))
    history = TrainHistory()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    best_score, best_params = -math.inf, None

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        sums: Dict[str, float] = {}
        for _ in range(steps):
            batches = sample_step_batches(dataset, cfg, comp, rngs)
            holder = {}

            def objective():
                holder["b"] = compute_loss(params, dataset, cfg, comp, adjacency, batches)
                return holder["b"].total

            grads = gradients(objective, trainable)
            opt.step(grads)
            params.step += 1
            for k, v in holder["b"].as_floats().items():
                sums[k] = sums.get(k, 0.0) + v
        row = {"epoch": epoch, **{k: v / steps for k, v in sums.items()}}
        row["k_source"] = params.curvature("source").item() if not cfg.euclidean else None
        row["k_target"] = params.curvature("target").item() if not cfg.euclidean else None
        row["seconds"] = time.perf_counter() - t0
        if cfg.validate and dataset.valid_target is not None:
            val = evaluate_domain(params, dataset, "target", cfg.eval_k, cfg.layers, pairs=dataset.valid_target)
            row["valid_ndcg"] = val["ndcg"]
            row["valid_hr"] = val["hr"]
            if val["ndcg"] > best_score:
                best_score, best_params = val["ndcg"], snapshot(params)
        history.append(row)
        log.info("epoch %d total %.5f", epoch, row.get("total", float("nan")))

    if best_params is None:
        best_params = params
    if out is not None:
        save_checkpoint(params, out / "checkpoint.bin")
        save_checkpoint(best_params, out / "best.bin")
        history.write_jsonl(out / "history.jsonl")
    return params, history


def snapshot(params: ModelParams) -> ModelParams:
    p = copy.copy(params)
    for name, t in params.named().items():
        setattr(p, name, t.detach().clone().requires_grad_(True))
    return p


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
