"""Weightless skip-GCN over one domain's bipartite train graph."""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .data import InteractionGraph
from .errors import UsageError


@dataclass(frozen=True, eq=False)
class Adjacency:
    """Row-normalized sparse adjacency in both directions, built once per graph.

    ``user_mean`` is (num_users x num_items) with entries 1/|N_u|, so
    ``user_mean @ items`` is the neighbor mean for every user; ``item_mean``
    is the transposed counterpart with entries 1/|N_i|.
    """

    num_users: int
    num_items: int
    user_mean: torch.Tensor
    item_mean: torch.Tensor

    @classmethod
    def from_graph(cls, graph: InteractionGraph) -> "Adjacency":
        eu = torch.as_tensor(graph.edge_users, dtype=torch.long)
        ei = torch.as_tensor(graph.edge_items, dtype=torch.long)
        udeg = torch.as_tensor(graph.user_degrees, dtype=torch.float64)
        ideg = torch.as_tensor(graph.item_degrees, dtype=torch.float64)
        shape = (graph.num_users, graph.num_items)
        user_mean = torch.sparse_coo_tensor(torch.stack([eu, ei]), 1.0 / udeg[eu], shape,
                                            check_invariants=False).coalesce()
        item_mean = torch.sparse_coo_tensor(torch.stack([ei, eu]), 1.0 / ideg[ei], shape[::-1],
                                            check_invariants=False).coalesce()
        return cls(graph.num_users, graph.num_items, user_mean, item_mean)


def _adjacency(graph) -> Adjacency:
    return graph if isinstance(graph, Adjacency) else Adjacency.from_graph(graph)


def skip_gcn_layer(users: torch.Tensor, items: torch.Tensor, graph):
    """u' = u + mean of neighbor items, i' = i + mean of neighbor users (both read layer l)."""
    adj = _adjacency(graph)
    if users.shape[0] != adj.num_users or items.shape[0] != adj.num_items:
        raise UsageError(
            f"table sizes ({users.shape[0]}, {items.shape[0]}) do not match graph "
            f"({adj.num_users}, {adj.num_items})")
    if users.shape[1:] != items.shape[1:]:
        raise UsageError("user and item tables have different widths")
    return users + torch.sparse.mm(adj.user_mean, items), items + torch.sparse.mm(adj.item_mean, users)


def propagate(users: torch.Tensor, items: torch.Tensor, graph, layers: int = 3):
    """Sum of the layer outputs 1..L (the layer-0 input only enters through the skip term)."""
    if layers < 1:
        raise UsageError("need at least one layer")
    adj = _adjacency(graph)
    u_sum = i_sum = None
    u, i = users, items
    for _ in range(layers):
        u, i = skip_gcn_layer(u, i, adj)
        u_sum = u if u_sum is None else u_sum + u
        i_sum = i if i_sum is None else i_sum + i
    return u_sum, i_sum
