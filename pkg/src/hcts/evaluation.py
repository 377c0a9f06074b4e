"""Full-sort HR@K / NDCG@K with a head/tail split on item popularity."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
import torch

from .data import CrossDomainDataset, InteractionGraph
from .errors import DataError, UsageError
from .model import ModelParams, forward_domain, score_matrix

HEAD_FRACTION = 0.1


def hr_at_k(rank, k: int):
    rank = np.asarray(rank)
    if np.any(rank < 1):
        raise UsageError("ranks are 1-based")
    return (rank <= k).astype(float)


def ndcg_at_k(rank, k: int):
    """1/log2(rank + 1) inside the cutoff, else 0 (one held-out item per user)."""
    rank = np.asarray(rank, dtype=float)
    if np.any(rank < 1):
        raise UsageError("ranks are 1-based")
    return np.where(rank <= k, 1.0 / np.log2(rank + 1.0), 0.0)


def mask_train_items(scores: torch.Tensor, users: np.ndarray, graph: InteractionGraph) -> torch.Tensor:
    """Set train interactions of each scored user to -inf (row r belongs to users[r])."""
    scores = scores.clone()
    rows, cols = [], []
    for r, u in enumerate(users.tolist()):
        items = graph.user_indices[graph.user_indptr[u]:graph.user_indptr[u + 1]]
        rows.append(np.full(items.size, r))
        cols.append(items)
    if rows:
        scores[np.concatenate(rows), np.concatenate(cols)] = float("-inf")
    return scores


def full_sort_scores(params: ModelParams, dataset: CrossDomainDataset, domain: str = "target",
                     layers: int = 3, pairs: Optional[np.ndarray] = None):
    """Scores of every item for every held-out user; returns (pairs, masked score matrix)."""
    graph = dataset.graph(domain)
    if pairs is None:
        pairs = dataset.test_pairs(domain)
    with torch.no_grad():
        state = forward_domain(params, graph, domain, layers)
        scores = score_matrix(state.space, state.users[pairs[:, 0]], state.items)
    return pairs, mask_train_items(scores, pairs[:, 0], graph)


def ranks_from_scores(scores: torch.Tensor, held_out: np.ndarray) -> np.ndarray:
    """1-based rank of each row's held-out item; ties go to the lower item index."""
    s = scores.numpy()
    rows = np.arange(s.shape[0])
    target = s[rows, held_out][:, None]
    idx = np.arange(s.shape[1])[None, :]
    better = (s > target) | ((s == target) & (idx < held_out[:, None]))
    return better.sum(1) + 1


def head_items(graph: InteractionGraph, mode: str = "count", fraction: float = HEAD_FRACTION) -> np.ndarray:
    """Boolean mask of head items by train degree (ties broken by lower index).

    mode "count": the top ceil(fraction * num_items) items.
    mode "mass": the smallest top set holding >= fraction of all train interactions.
    """
    deg = graph.item_degrees
    order = np.lexsort((np.arange(deg.size), -deg))
    if mode == "count":
        n_head = max(1, math.ceil(round(fraction * deg.size, 9)))
    elif mode == "mass":
        cum = np.cumsum(deg[order])
        n_head = int(np.searchsorted(cum, fraction * cum[-1]) + 1) if cum[-1] > 0 else 1
    else:
        raise UsageError(f"unknown head/tail mode {mode!r}")
    mask = np.zeros(deg.size, dtype=bool)
    mask[order[:n_head]] = True
    return mask


def _metrics(ranks: np.ndarray, k: int) -> dict:
    if ranks.size == 0:
        return {"hr": 0.0, "ndcg": 0.0, "users": 0}
    return {"hr": float(hr_at_k(ranks, k).mean()), "ndcg": float(ndcg_at_k(ranks, k).mean()),
            "users": int(ranks.size)}


def head_tail_report(graph: InteractionGraph, pairs: np.ndarray, ranks: np.ndarray, k: int,
                     mode: str = "count") -> dict:
    head = head_items(graph, mode)[pairs[:, 1]]
    return {"head": _metrics(ranks[head], k), "tail": _metrics(ranks[~head], k)}


@dataclass
class EvalReport:
    k: int
    domains: Dict[str, dict]
    seed: int = 0
    config: dict = field(default_factory=dict)

    def ndcg(self, domain: str = "target") -> float:
        return self.domains[domain]["ndcg"]

    def hr(self, domain: str = "target") -> float:
        return self.domains[domain]["hr"]

    def tail_ndcg(self, domain: str = "target") -> float:
        return self.domains[domain]["tail"]["ndcg"]

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_domain(params, dataset, domain, k=10, layers=3, head_tail_mode="count", pairs=None) -> dict:
    pairs, scores = full_sort_scores(params, dataset, domain, layers, pairs)
    if pairs.shape[0] == 0:
        raise DataError(f"no held-out users in the {domain} domain")
    ranks = ranks_from_scores(scores, pairs[:, 1])
    out = _metrics(ranks, k)
    out.update(head_tail_report(dataset.graph(domain), pairs, ranks, k, head_tail_mode))
    out["num_items"] = dataset.graph(domain).num_items
    return out


def evaluate(params: ModelParams, dataset: CrossDomainDataset, k: int = 10, layers: int = 3,
             domains: Sequence[str] = ("target", "source"), head_tail_mode: str = "count",
             config: Optional[dict] = None) -> EvalReport:
    if k < 1:
        raise UsageError("k must be positive")
    per = {d: evaluate_domain(params, dataset, d, k, layers, head_tail_mode) for d in domains}
    return EvalReport(k=k, domains=per, seed=params.seed, config=dict(config or {}))


def random_baseline(graph: InteractionGraph, pairs: np.ndarray, k: int = 10) -> dict:
    """Expected HR@k / NDCG@k when the held-out item's rank is uniform over unmasked items."""
    n_cand = graph.num_items - graph.user_degrees[pairs[:, 0]]
    disc = 1.0 / np.log2(np.arange(2, k + 2))
    cum = np.concatenate([[0.0], np.cumsum(disc)])
    top = np.minimum(k, n_cand)
    return {"hr": float(np.mean(top / n_cand)), "ndcg": float(np.mean(cum[top] / n_cand))}
