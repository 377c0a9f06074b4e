"""Small random instances for the finite-difference gradient oracle.

Every case is (objective, params) over leaf tensors: Euclidean tables that get
lifted with a trainable raw curvature, so gradients flow through the lift,
the distance and the curvature.
"""

import contextlib
import dataclasses

import numpy as np
import torch

from hcts import geometry as g
from hcts import model as model_mod
from hcts.data import SyntheticConfig, gen_synthetic
from hcts.diffengine import curvature_value, raw_for_curvature
from hcts.model import ALIGNERS, init_params
from hcts.objectives import center_calibration, ii_loss, margin_loss, ui_loss, uu_loss
from hcts.propagation import Adjacency
from hcts.trainer import TrainConfig, apply_ablation, compute_loss, sample_step_batches, _rng_streams

CURVATURES = (0.25, 1.0, 4.0)
DIM = 4
MICRO_DATA = SyntheticConfig(users=8, items_src=10, items_tgt=10, overlap_fraction=0.75, edges_src=40,
                             edges_tgt=35, zipf_exponent=1.0)


def _leaf(a):
    return torch.tensor(a, dtype=torch.float64, requires_grad=True)


def term_cases(seed: int, k: float):
    """Objectives for each individual loss term on one random instance."""
    rng = np.random.default_rng(seed)
    n, n_neg, tau = 6, 3, 0.5
    raw = _leaf(raw_for_curvature(k))
    fixed = g.Hyperboloid(k)
    a = _leaf(rng.normal(0, 0.7, (n, DIM)))
    b = _leaf(rng.normal(0, 0.7, (n, DIM)))
    c = _leaf(rng.normal(0, 0.7, (n, DIM)))
    negs = _leaf(rng.normal(0, 0.7, (n, n_neg, DIM)))
    params = {"raw": raw, "a": a, "b": b, "c": c, "negs": negs}

    def space():
        return g.Hyperboloid(curvature_value(raw))

    def lift(x):
        return space().lift(x)

    cases = {
        "margin": lambda: margin_loss(space(), lift(a), lift(b), lift(c), 0.1),
        "uu": lambda: uu_loss(space(), lift(a), lift(b), tau),
        "ui": lambda: ui_loss(space(), lift(a), lift(b), lift(negs), tau),
        "ii": lambda: ii_loss(space(), lift(c), lift(b), lift(negs), tau),
        # log0 undoes the lift exactly, so K carries a zero gradient here; it is held fixed
        "calibration": lambda: center_calibration(fixed, fixed.lift(torch.cat([a, c]))),
    }
    out = {name: (obj, params) for name, obj in cases.items()}
    out["calibration"] = (cases["calibration"], {"a": a, "c": c})
    return out


class FrozenStops:
    """Replays stop_gradient outputs from the first evaluation in every later one.

    Finite differences otherwise see through the stop and measure a different
    derivative than the one the trainer uses.
    """

    def __init__(self):
        self.recorded = []
        self.cursor = None

    def __call__(self, x):
        if self.cursor is None:
            self.recorded.append(x.detach().clone())
            return self.recorded[-1]
        out = self.recorded[self.cursor]
        self.cursor += 1
        return out

    def wrap(self, objective):
        def run():
            if self.recorded:
                self.cursor = 0
            with patched_stop(self):
                return objective()
        return run


@contextlib.contextmanager
def patched_stop(fn):
    saved = model_mod.stop_gradient
    model_mod.stop_gradient = fn
    try:
        yield
    finally:
        model_mod.stop_gradient = saved


def composite_case(seed: int, k: float, **overrides):
    """The full joint objective on a micro dataset (<= 10 nodes per side), all six contrastive terms on."""
    ds = gen_synthetic(MICRO_DATA, seed)
    cfg = dataclasses.replace(TrainConfig(dim=DIM, batch_size=16, n_neg_cl=3, lambda_cts=0.5, lambda_clib=0.5,
                                          init_curvature=k, seed=seed), **overrides)
    comp = apply_ablation(cfg)
    sizes = (ds.source.num_users, ds.source.num_items, ds.target.num_users, ds.target.num_items)
    p = init_params(DIM, sizes, seed=seed, init_curvature=k)
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name in ("user_emb_src", "item_emb_src", "user_emb_tgt", "item_emb_tgt"):
            getattr(p, name).normal_(0, 0.3, generator=gen)
        for name in ("w_s2t", "w_t2t", "w_t2s", "w_s2s"):
            getattr(p, name)[1:] += torch.randn(DIM, DIM + 1, generator=gen, dtype=torch.float64) * 0.2
    adjacency = {d: Adjacency.from_graph(ds.graph(d)) for d in ("source", "target")}
    batches = sample_step_batches(ds, cfg, comp, _rng_streams(seed))
    # the frozen first row is not a free parameter: expose rows 1..d and rebuild W per call
    params = {n: t for n, t in p.trainable().items() if n not in ALIGNERS}
    free = {n: getattr(p, n)[1:].detach().clone().requires_grad_(True) for n in ALIGNERS}
    params.update({n + "[1:]": t for n, t in free.items()})
    zero_row = torch.zeros(1, DIM + 1, dtype=torch.float64)

    def objective():
        for n, t in free.items():
            setattr(p, n, torch.cat([zero_row, t]))
        return compute_loss(p, ds, cfg, comp, adjacency, batches).total

    return objective, params, p


def oracle_curvature(seed: int) -> float:
    return CURVATURES[seed % len(CURVATURES)]


def all_cases(seed: int, k: float):
    cases = term_cases(seed, k)
    obj, params, _ = composite_case(seed, k)
    cases["total"] = (FrozenStops().wrap(obj), params)
    return cases
