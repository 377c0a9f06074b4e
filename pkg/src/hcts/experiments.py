"""Desk-scale trend experiments shared by scripts/ and the acceptance tests."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import List

import torch

from .data import SyntheticConfig, gen_synthetic
from .evaluation import evaluate, random_baseline
from .model import forward_domain
from .objectives import center_calibration
from .trainer import TrainConfig, train

SMOKE_DATA = SyntheticConfig(users=300, items_src=500, items_tgt=400, overlap_fraction=0.6,
                             zipf_exponent=1.2, cross_correlation=0.8, edges_src=15000, edges_tgt=8000)
SMOKE_TRAIN = TrainConfig(dim=32, epochs=50)
SEEDS = (0, 1, 2, 3, 4)


@dataclass
class RunResult:
    seed: int
    first_loss: float
    last_loss: float
    ndcg: float
    tail_ndcg: float
    random_ndcg: float
    center_norm: float


def run(data_cfg: SyntheticConfig, train_cfg: TrainConfig, seed: int) -> RunResult:
    """Generate data with ``seed``, train with ``seed``, evaluate the target domain."""
    ds = gen_synthetic(data_cfg, seed)
    cfg = dataclasses.replace(train_cfg, seed=seed)
    params, hist = train(cfg, ds)
    rep = evaluate(params, ds, k=10, layers=cfg.layers, domains=("target",))
    with torch.no_grad():
        t = forward_domain(params, ds.target, "target", cfg.layers)
        norm = float(center_calibration(t.space, torch.cat([t.users, t.items])).sqrt())
    base = random_baseline(ds.target, ds.test_target, 10)
    return RunResult(seed, hist.rows[0]["total"], hist.rows[-1]["total"], rep.ndcg(), rep.tail_ndcg(),
                     base["ndcg"], norm)


def sweep(data_cfg: SyntheticConfig, train_cfg: TrainConfig, seeds=SEEDS) -> List[RunResult]:
    return [run(data_cfg, train_cfg, s) for s in seeds]


def variant(cfg: TrainConfig, **changes) -> TrainConfig:
    return dataclasses.replace(cfg, **changes)


def count(pred, pairs) -> int:
    return sum(1 for a, b in pairs if pred(a, b))
