"""Interaction graphs, cross-domain datasets, splits, samplers and synthetic data."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from functools import cached_property
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import DataError, UsageError

SOURCE_TO_TARGET = "s2t"
TARGET_TO_SOURCE = "t2s"
DIRECTIONS = (SOURCE_TO_TARGET, TARGET_TO_SOURCE)

_HEADER_TOKENS = {"user", "user_id", "userid", "uid", "item", "item_id", "itemid", "iid"}


@dataclass(frozen=True, eq=False)
class InteractionGraph:
    """Bipartite user-item graph stored as a user-major CSR.

    Edges are unique and sorted by (user, item); ``item_indptr``/``item_indices``
    hold the transposed adjacency.
    """

    num_users: int
    num_items: int
    user_indptr: np.ndarray
    user_indices: np.ndarray
    external_user_ids: Tuple[str, ...]
    external_item_ids: Tuple[str, ...]

    @classmethod
    def from_edges(cls, users, items, num_users, num_items, user_ids=None, item_ids=None):
        users = np.asarray(users, dtype=np.int64)
        items = np.asarray(items, dtype=np.int64)
        if users.shape != items.shape:
            raise UsageError("user and item index arrays differ in length")
        if users.size and (users.min() < 0 or users.max() >= num_users
                           or items.min() < 0 or items.max() >= num_items):
            raise UsageError("edge index out of range")
        codes = np.unique(users * num_items + items)
        u, i = np.divmod(codes, num_items)
        indptr = np.zeros(num_users + 1, dtype=np.int64)
        np.cumsum(np.bincount(u, minlength=num_users), out=indptr[1:])
        if user_ids is None:
            user_ids = [str(x) for x in range(num_users)]
        if item_ids is None:
            item_ids = [str(x) for x in range(num_items)]
        if len(user_ids) != num_users or len(item_ids) != num_items:
            raise UsageError("external id lists do not match node counts")
        return cls(int(num_users), int(num_items), indptr, i, tuple(user_ids), tuple(item_ids))

    @property
    def num_edges(self) -> int:
        return int(self.user_indices.size)

    @cached_property
    def user_degrees(self) -> np.ndarray:
        return np.diff(self.user_indptr)

    @cached_property
    def item_degrees(self) -> np.ndarray:
        return np.bincount(self.user_indices, minlength=self.num_items)

    @cached_property
    def edge_users(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_users, dtype=np.int64), self.user_degrees)

    @property
    def edge_items(self) -> np.ndarray:
        return self.user_indices

    @cached_property
    def edge_codes(self) -> np.ndarray:
        # sorted because edges are (user, item)-ordered
        return self.edge_users * self.num_items + self.user_indices

    @cached_property
    def _item_csr(self):
        order = np.lexsort((self.edge_users, self.user_indices))
        indptr = np.zeros(self.num_items + 1, dtype=np.int64)
        np.cumsum(self.item_degrees, out=indptr[1:])
        return indptr, self.edge_users[order]

    @cached_property
    def user_adj(self) -> List[np.ndarray]:
        p = self.user_indptr
        return [self.user_indices[p[u]:p[u + 1]] for u in range(self.num_users)]

    @cached_property
    def item_adj(self) -> List[np.ndarray]:
        p, idx = self._item_csr
        return [idx[p[i]:p[i + 1]] for i in range(self.num_items)]

    def has_edges(self, users, items) -> np.ndarray:
        codes = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items, dtype=np.int64)
        if self.edge_codes.size == 0:
            return np.zeros(codes.shape, dtype=bool)
        pos = np.searchsorted(self.edge_codes, codes)
        pos = np.minimum(pos, self.edge_codes.size - 1)
        return self.edge_codes[pos] == codes

    def without_edges(self, users, items) -> "InteractionGraph":
        """Same node sets, given edges removed."""
        drop = np.asarray(users, dtype=np.int64) * self.num_items + np.asarray(items, dtype=np.int64)
        keep = ~np.isin(self.edge_codes, drop)
        return InteractionGraph.from_edges(
            self.edge_users[keep], self.user_indices[keep], self.num_users, self.num_items,
            self.external_user_ids, self.external_item_ids,
        )

    def validate(self):
        if np.any(np.diff(self.edge_codes) <= 0):
            raise DataError("duplicate or unsorted edges")
        for u, items in enumerate(self.user_adj):
            for i in items:
                if u not in self.item_adj[i]:
                    raise DataError(f"adjacency mismatch at ({u}, {i})")
        if sum(len(a) for a in self.item_adj) != self.num_edges:
            raise DataError("item adjacency edge count mismatch")
        return self


@dataclass(frozen=True)
class OverlapMap:
    """(source_user_index, target_user_index) rows for users present in both domains."""

    pairs: np.ndarray

    def __len__(self):
        return int(self.pairs.shape[0])

    @property
    def source_users(self) -> np.ndarray:
        return self.pairs[:, 0]

    @property
    def target_users(self) -> np.ndarray:
        return self.pairs[:, 1]


@dataclass(eq=False)
class CrossDomainDataset:
    """Train graphs for both domains plus the overlap map and held-out pairs.

    Test (and optional validation) pairs are (user, item) rows with at most one
    row per user; they are absent from the corresponding train graph.
    """

    source: InteractionGraph
    target: InteractionGraph
    overlap: OverlapMap
    test_source: np.ndarray
    test_target: np.ndarray
    valid_source: Optional[np.ndarray] = None
    valid_target: Optional[np.ndarray] = None

    def graph(self, domain: str) -> InteractionGraph:
        return {"source": self.source, "target": self.target}[domain]

    def test_pairs(self, domain: str) -> np.ndarray:
        return {"source": self.test_source, "target": self.test_target}[domain]

    def valid_pairs(self, domain: str) -> Optional[np.ndarray]:
        return {"source": self.valid_source, "target": self.valid_target}[domain]

    @cached_property
    def cl_eligible(self) -> np.ndarray:
        """Overlap rows whose user has train edges in both domains."""
        p = self.overlap.pairs
        ok = (self.source.user_degrees[p[:, 0]] > 0) & (self.target.user_degrees[p[:, 1]] > 0)
        return p[ok]


# ---------------------------------------------------------------- ingestion

def _looks_like_header(fields: List[str], next_fields: Optional[List[str]]) -> bool:
    if fields[0].strip().lower() in _HEADER_TOKENS or fields[1].strip().lower() in _HEADER_TOKENS:
        return True
    # numeric-id files: a non-numeric second field on line 1 only is a header
    if next_fields is not None and len(next_fields) >= 2:
        return (not _is_number(fields[1])) and _is_number(next_fields[1])
    return False


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_interaction_pairs(path) -> List[Tuple[str, str]]:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read interactions from {path}: {exc}") from exc
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return []
    delim = "\t" if "\t" in lines[0] else ","
    rows = [[f.strip() for f in ln.split(delim)] for ln in lines]
    for n, r in enumerate(rows):
        if len(r) < 2:
            raise DataError(f"{path}:{n + 1}: expected at least user and item fields")
    if _looks_like_header(rows[0], rows[1] if len(rows) > 1 else None):
        rows = rows[1:]
    return [(r[0], r[1]) for r in rows]


def graph_from_pairs(pairs: Sequence[Tuple[str, str]], min_user_degree=1, min_item_degree=1) -> InteractionGraph:
    """Deduplicate, iteratively core-filter, and densely reindex in first-seen order."""
    seen = set()
    uniq = []
    for p in pairs:
        if p not in seen:
            seen.add(p)
            uniq.append(p)
    while True:
        ucount: Dict[str, int] = {}
        icount: Dict[str, int] = {}
        for u, i in uniq:
            ucount[u] = ucount.get(u, 0) + 1
            icount[i] = icount.get(i, 0) + 1
        kept = [(u, i) for u, i in uniq if ucount[u] >= min_user_degree and icount[i] >= min_item_degree]
        if len(kept) == len(uniq):
            break
        uniq = kept
    if not uniq:
        raise DataError("no interactions survive filtering")
    uidx: Dict[str, int] = {}
    iidx: Dict[str, int] = {}
    for u, i in uniq:
        uidx.setdefault(u, len(uidx))
        iidx.setdefault(i, len(iidx))
    users = np.fromiter((uidx[u] for u, _ in uniq), dtype=np.int64, count=len(uniq))
    items = np.fromiter((iidx[i] for _, i in uniq), dtype=np.int64, count=len(uniq))
    return InteractionGraph.from_edges(users, items, len(uidx), len(iidx), list(uidx), list(iidx))


def load_interactions(path, min_user_degree: int = 5, min_item_degree: int = 5) -> InteractionGraph:
    """Read a comma/tab separated interaction file (user, item[, rating[, time]])."""
    if not Path(path).is_file():
        raise DataError(f"interaction file not found: {path}")
    return graph_from_pairs(read_interaction_pairs(path), min_user_degree, min_item_degree)


def write_interactions(graph: InteractionGraph, path):
    uids, iids = graph.external_user_ids, graph.external_item_ids
    lines = ["user_id\titem_id"]
    lines += [f"{uids[u]}\t{iids[i]}" for u, i in zip(graph.edge_users.tolist(), graph.edge_items.tolist())]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def build_cross_domain(src: InteractionGraph, tgt: InteractionGraph) -> OverlapMap:
    tgt_index = {uid: n for n, uid in enumerate(tgt.external_user_ids)}
    pairs = [(n, tgt_index[uid]) for n, uid in enumerate(src.external_user_ids) if uid in tgt_index]
    return OverlapMap(np.array(pairs, dtype=np.int64).reshape(-1, 2))


def split_leave_one_out(graph: InteractionGraph, seed) -> Tuple[InteractionGraph, np.ndarray]:
    """Hold out one uniformly chosen item for every user with degree >= 2."""
    rng = np.random.default_rng(seed)
    deg = graph.user_degrees
    users = np.flatnonzero(deg >= 2)
    offsets = rng.integers(0, deg[users]) if users.size else np.zeros(0, dtype=np.int64)
    items = graph.user_indices[graph.user_indptr[users] + offsets]
    test = np.stack([users, items], axis=1).astype(np.int64)
    return graph.without_edges(users, items), test


def _streams(seed, n):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(n)]


def make_dataset(src_raw: InteractionGraph, tgt_raw: InteractionGraph, seed, validation: bool = False
                 ) -> CrossDomainDataset:
    """Split both raw graphs (independent seeded streams) and attach the overlap map."""
    seeds = np.random.SeedSequence(seed).spawn(4)
    src_train, src_test = split_leave_one_out(src_raw, seeds[0])
    tgt_train, tgt_test = split_leave_one_out(tgt_raw, seeds[1])
    src_valid = tgt_valid = None
    if validation:
        src_train, src_valid = split_leave_one_out(src_train, seeds[2])
        tgt_train, tgt_valid = split_leave_one_out(tgt_train, seeds[3])
    return CrossDomainDataset(
        source=src_train, target=tgt_train, overlap=build_cross_domain(src_raw, tgt_raw),
        test_source=src_test, test_target=tgt_test, valid_source=src_valid, valid_target=tgt_valid,
    )


# ---------------------------------------------------------------- samplers

@dataclass
class RankBatch:
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self):
        return int(self.users.size)


@dataclass
class CLBatch:
    """Contrastive batch for one transfer direction.

    ``neg_items`` (rows x n_neg) index items of the *sending* domain (source
    for s2t, target for t2s), which the row's user never interacted with there.
    """

    source_users: np.ndarray
    target_users: np.ndarray
    pos_source: np.ndarray
    pos_target: np.ndarray
    neg_items: np.ndarray
    direction: str

    def __len__(self):
        return int(self.source_users.size)


def _negatives(graph: InteractionGraph, users: np.ndarray, rng, max_tries: int = 100) -> np.ndarray:
    """Uniform items that are not edges of the matching user (rejection, capped)."""
    neg = rng.integers(0, graph.num_items, size=users.shape)
    bad = graph.has_edges(users, neg)
    tries = 1
    while bad.any() and tries < max_tries:
        neg[bad] = rng.integers(0, graph.num_items, size=int(bad.sum()))
        bad = graph.has_edges(users, neg)
        tries += 1
    return neg


def _random_neighbors(graph: InteractionGraph, users: np.ndarray, rng) -> np.ndarray:
    deg = graph.user_degrees[users]
    off = rng.integers(0, deg)
    return graph.user_indices[graph.user_indptr[users] + off]


def sample_rank_batch(graph: InteractionGraph, batch_size: int, rng) -> RankBatch:
    if graph.num_edges == 0:
        raise DataError("cannot sample from an empty train graph")
    idx = rng.integers(0, graph.num_edges, size=batch_size)
    users = graph.edge_users[idx]
    pos = graph.user_indices[idx]
    return RankBatch(users, pos, _negatives(graph, users, rng))


def sample_cl_batch(ds: CrossDomainDataset, direction: str, batch_size: int, n_neg: int, rng) -> CLBatch:
    """Overlapped users without replacement, one positive per domain, sending-domain negatives."""
    if direction not in DIRECTIONS:
        raise UsageError(f"unknown direction {direction!r}")
    if len(ds.overlap) == 0:
        raise DataError("overlap map is empty; contrastive transfer needs shared users")
    pool = ds.cl_eligible
    if pool.shape[0] == 0:
        raise DataError("no overlapped user has train edges in both domains")
    b = min(batch_size, pool.shape[0])
    rows = pool[rng.choice(pool.shape[0], size=b, replace=False)]
    su, tu = rows[:, 0], rows[:, 1]
    pos_s = _random_neighbors(ds.source, su, rng)
    pos_t = _random_neighbors(ds.target, tu, rng)
    send_graph, send_users = (ds.source, su) if direction == SOURCE_TO_TARGET else (ds.target, tu)
    rep = np.repeat(send_users, n_neg)
    neg = _negatives(send_graph, rep, rng).reshape(b, n_neg)
    return CLBatch(su, tu, pos_s, pos_t, neg, direction)


# ---------------------------------------------------------------- synthetic data

@dataclass
class SyntheticConfig:
    users: int = 300
    items_src: int = 500
    items_tgt: int = 400
    overlap_fraction: float = 0.6
    zipf_exponent: float = 1.2
    cross_correlation: float = 0.8
    edges_src: int = 15000
    edges_tgt: int = 8000
    latent_dim: int = 8
    preference_strength: float = 2.0
    activity_exponent: float = 0.6

    def validate(self):
        counts = ("users", "items_src", "items_tgt", "edges_src", "edges_tgt", "latent_dim")
        for name in counts:
            if getattr(self, name) <= 0:
                raise UsageError(f"synthetic.{name} must be positive")
        for name in ("overlap_fraction", "cross_correlation"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise UsageError(f"synthetic.{name} must lie in [0, 1]")
        if self.zipf_exponent < 0 or self.activity_exponent < 0 or self.preference_strength < 0:
            raise UsageError("synthetic exponents and strength must be nonnegative")
        if self.edges_src > self.users * self.items_src or self.edges_tgt > self.users * self.items_tgt:
            raise UsageError("requested edge count exceeds users x items")
        return self


def _weighted_sample_without_replacement(weights: np.ndarray, m: int, rng) -> np.ndarray:
    # Efraimidis-Spirakis: smallest Exp(1)/w keys form a weighted sample w/o replacement
    keys = rng.exponential(size=weights.size) / weights
    return np.sort(np.argpartition(keys, m - 1)[:m])


def _sample_domain(activity, latents, n_items, n_edges, cfg: SyntheticConfig, rng, user_ids, prefix):
    ranks = rng.permutation(n_items) + 1
    popularity = ranks.astype(float) ** (-cfg.zipf_exponent)
    item_latent = rng.standard_normal((n_items, cfg.latent_dim))
    affinity = np.exp(cfg.preference_strength * (latents @ item_latent.T) / math.sqrt(cfg.latent_dim))
    weights = activity[:, None] * popularity[None, :] * affinity
    cells = _weighted_sample_without_replacement(weights.ravel(), n_edges, rng)
    users, items = np.divmod(cells, n_items)
    item_ids = [f"{prefix}{j}" for j in range(n_items)]
    return InteractionGraph.from_edges(users, items, len(user_ids), n_items, user_ids, item_ids)


def generate_interactions(config: SyntheticConfig, seed) -> Tuple[InteractionGraph, InteractionGraph]:
    """Two raw (unsplit) domains with Zipf item popularity and shared user tastes.

    Overlapped users keep their activity level in both domains and their
    target taste vector is ``c * z + sqrt(1 - c^2) * noise`` with c the
    cross-correlation. Users are drawn into the overlap with probability
    proportional to activity (heavy users are the ones active on both sides).
    """
    cfg = config.validate()
    rng_users, rng_src, rng_tgt = _streams(seed, 3)
    n = cfg.users
    n_overlap = int(round(cfg.overlap_fraction * n))
    activity = (rng_users.permutation(n) + 1).astype(float) ** (-cfg.activity_exponent)
    overlap = (np.sort(rng_users.choice(n, size=n_overlap, replace=False, p=activity / activity.sum()))
               if n_overlap else np.zeros(0, dtype=np.int64))
    z_src = rng_users.standard_normal((n, cfg.latent_dim))
    src_ids = [f"u{j}" for j in range(n)]

    # target users: the overlapped source users first, then fresh ones
    n_fresh = n - n_overlap
    fresh_activity = (rng_users.permutation(n) + 1).astype(float)[:n_fresh] ** (-cfg.activity_exponent)
    c = cfg.cross_correlation
    noise = rng_users.standard_normal((n, cfg.latent_dim))
    z_tgt = np.concatenate([
        c * z_src[overlap] + math.sqrt(1.0 - c * c) * noise[:n_overlap],
        noise[n_overlap:],
    ])
    tgt_activity = np.concatenate([activity[overlap], fresh_activity])
    tgt_ids = [src_ids[j] for j in overlap] + [f"u{n + j}" for j in range(n_fresh)]

    src = _sample_domain(activity, z_src, cfg.items_src, cfg.edges_src, cfg, rng_src, src_ids, "s")
    tgt = _sample_domain(tgt_activity, z_tgt, cfg.items_tgt, cfg.edges_tgt, cfg, rng_tgt, tgt_ids, "t")
    return src, tgt


def gen_synthetic(config: SyntheticConfig, seed, validation: bool = False) -> CrossDomainDataset:
    src, tgt = generate_interactions(config, seed)
    return make_dataset(src, tgt, seed, validation=validation)


def write_synthetic(config: SyntheticConfig, seed, out_dir, extra: Optional[dict] = None) -> dict:
    """Write source.tsv, target.tsv and manifest.json; return the manifest."""
    src, tgt = generate_interactions(config, seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_interactions(src, out / "source.tsv")
    write_interactions(tgt, out / "target.tsv")
    overlap = build_cross_domain(src, tgt)
    manifest = {
        "generator": "synthetic",
        "seed": seed,
        "synthetic": asdict(config),
        "source": {"users": src.num_users, "items": src.num_items, "edges": src.num_edges},
        "target": {"users": tgt.num_users, "items": tgt.num_items, "edges": tgt.num_edges},
        "overlap": [src.external_user_ids[s] for s in overlap.source_users.tolist()],
    }
    if extra:
        manifest.update(extra)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return manifest


# ---------------------------------------------------------------- long-tail statistic

def normalized_degree_curve(degrees: np.ndarray) -> np.ndarray:
    d = np.sort(np.asarray(degrees, dtype=float))[::-1]
    return d / d.sum()


def merge_graphs(graphs: Sequence[InteractionGraph]) -> InteractionGraph:
    """Union graph: users matched by external id, items kept distinct per graph."""
    pairs = []
    for g_idx, g in enumerate(graphs):
        uids, iids = g.external_user_ids, g.external_item_ids
        pairs += [(uids[u], f"{g_idx}:{iids[i]}") for u, i in zip(g.edge_users.tolist(), g.edge_items.tolist())]
    return graph_from_pairs(pairs)


def long_tail_report(graphs: Sequence[InteractionGraph]) -> Dict[str, np.ndarray]:
    """User-degree curves sorted descending and divided by total interactions.

    Keys are "domain_0", "domain_1", ... and "merged".
    """
    if not graphs:
        raise UsageError("long_tail_report needs at least one graph")
    out = {f"domain_{n}": normalized_degree_curve(g.user_degrees) for n, g in enumerate(graphs)}
    out["merged"] = normalized_degree_curve(merge_graphs(graphs).user_degrees)
    return out


def top_decile_mass(curve: np.ndarray) -> float:
    n = len(curve)
    return float(np.sum(curve[: max(1, (n + 9) // 10)]))
