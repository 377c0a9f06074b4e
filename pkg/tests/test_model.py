import math

import numpy as np
import pytest
import torch

from hcts import geometry as g
from hcts.data import SOURCE_TO_TARGET, TARGET_TO_SOURCE
from hcts.diffengine import gradients, raw_for_curvature
from hcts.errors import DataError, UsageError
from hcts.model import (forward_domain, init_params, load_checkpoint, save_checkpoint, score, score_matrix,
                        transfer_embeddings)


def sizes(ds):
    return (ds.source.num_users, ds.source.num_items, ds.target.num_users, ds.target.num_items)


def test_init_contract(tiny_dataset):
    p = init_params(8, sizes(tiny_dataset), seed=4)
    for d in ("source", "target"):
        assert abs(p.curvature(d).item() - 1.0) <= 1e-6
    for w in (p.w_s2t, p.w_t2t, p.w_t2s, p.w_s2s):
        assert torch.count_nonzero(w[0]).item() == 0
    q = init_params(8, sizes(tiny_dataset), seed=4)
    for a, b in zip(p.named().values(), q.named().values()):
        assert torch.equal(a, b)
    std = p.user_emb_src.detach().std().item()
    assert std == pytest.approx(0.1 / math.sqrt(8), rel=0.2)
    with pytest.raises(UsageError):
        init_params(1, (1, 1, 1, 1))


def test_forward_zero_tables_is_pole(tiny_dataset):
    p = init_params(4, sizes(tiny_dataset), seed=0)
    with torch.no_grad():
        p.user_emb_tgt.zero_()
        p.item_emb_tgt.zero_()
    st = forward_domain(p, tiny_dataset.target, "target")
    pole = g.north_pole(4, p.curvature("target").item())
    assert torch.equal(st.users.detach()[0], pole) and torch.equal(st.items.detach()[-1], pole)


def test_forward_on_manifold_and_closed_form(tiny_dataset):
    p = init_params(6, sizes(tiny_dataset), seed=1)
    st = forward_domain(p, tiny_dataset.source, "source")
    k = p.curvature("source")
    assert g.on_manifold(st.users.detach(), k.detach())
    with torch.no_grad():
        p.raw_curv_src.fill_(raw_for_curvature(2 * k.item()))
    st2 = forward_domain(p, tiny_dataset.source, "source")
    k2 = 2 * k.item()
    expect = math.sqrt(k2) * torch.cosh(torch.linalg.vector_norm(st2.users_euclid, dim=1) / math.sqrt(k2))
    np.testing.assert_allclose(st2.users[:, 0].detach().numpy(), expect.detach().numpy(), rtol=1e-10)


def test_forward_nan_is_numeric_failure(tiny_dataset):
    from hcts.errors import NumericFailure
    p = init_params(4, sizes(tiny_dataset), seed=0)
    with torch.no_grad():
        p.item_emb_tgt[0, 0] = float("nan")
    with pytest.raises(NumericFailure):
        forward_domain(p, tiny_dataset.target, "target")


def test_score_examples(rng):
    x = g.LorentzPoint(g.lift_euclidean(torch.tensor([0.3, 0.1]), 1.0), 1.0)
    others = [g.LorentzPoint(g.lift_euclidean(torch.tensor(rng.standard_normal(2)), 1.0), 1.0) for _ in range(5)]
    assert score(x, x).item() == pytest.approx(0.0, abs=1e-12)
    assert all(score(x, o).item() < 0 for o in others)
    assert score(x, others[0]).item() == pytest.approx(score(others[0], x).item(), rel=1e-12)
    # radial monotonicity
    pts = [g.LorentzPoint(g.lift_euclidean(torch.tensor([r, 0.0]), 1.0), 1.0) for r in (0.5, 1.0, 2.0)]
    origin = g.LorentzPoint(g.north_pole(2, 1.0), 1.0)
    s = [score(origin, q).item() for q in pts]
    assert s[0] > s[1] > s[2]
    with pytest.raises(UsageError):
        score(x, g.LorentzPoint(g.north_pole(2, 2.0), 2.0))


def test_score_matrix_matches_pairwise(tiny_dataset):
    p = init_params(4, sizes(tiny_dataset), seed=2)
    st = forward_domain(p, tiny_dataset.target, "target")
    m = score_matrix(st.space, st.users[:3], st.items[:4]).detach()
    k = st.space.k.item()
    for a in range(3):
        for b in range(4):
            ref = -g.sqdist(st.users[a], st.items[b], k).item()
            assert m[a, b].item() == pytest.approx(ref, rel=1e-9, abs=1e-12)


def test_transfer_outputs_on_receiving_manifold(tiny_dataset):
    p = init_params(4, sizes(tiny_dataset), seed=3)
    with torch.no_grad():
        p.raw_curv_tgt.fill_(raw_for_curvature(2.5))
    s = forward_domain(p, tiny_dataset.source, "source")
    t = forward_domain(p, tiny_dataset.target, "target")
    out = transfer_embeddings(s, t, p, SOURCE_TO_TARGET)
    for v in out.values():
        assert g.on_manifold(v.detach(), 2.5)
    back = transfer_embeddings(t, s, p, TARGET_TO_SOURCE)
    for v in back.values():
        assert g.on_manifold(v.detach(), p.curvature("source").detach())
    with pytest.raises(UsageError):
        transfer_embeddings(s, t, p, "both")


def _transfer_objective(p, ds, direction):
    def obj():
        s = forward_domain(p, ds.source, "source")
        t = forward_domain(p, ds.target, "target")
        send, recv = (s, t) if direction == SOURCE_TO_TARGET else (t, s)
        out = transfer_embeddings(send, recv, p, direction)
        return (out["send_users"][:5] * out["recv_users"][:5]).sum() + (out["send_items"][:5] ** 2).sum() \
            + out["recv_items"][:5].sum()
    return obj


def test_transfer_stop_gradient(tiny_dataset):
    p = init_params(4, sizes(tiny_dataset), seed=5)
    grads = gradients(_transfer_objective(p, tiny_dataset, SOURCE_TO_TARGET), p.named())
    for name in ("user_emb_src", "item_emb_src", "raw_curv_src"):
        assert torch.count_nonzero(grads[name]).item() == 0, name
    for name in ("user_emb_tgt", "item_emb_tgt", "w_s2t", "w_t2t"):
        assert torch.count_nonzero(grads[name]).item() > 0, name
    back = gradients(_transfer_objective(p, tiny_dataset, TARGET_TO_SOURCE), p.named())
    for name in ("user_emb_tgt", "item_emb_tgt", "raw_curv_tgt"):
        assert torch.count_nonzero(back[name]).item() == 0, name
    for name in ("user_emb_src", "w_t2s", "w_s2s"):
        assert torch.count_nonzero(back[name]).item() > 0, name


def test_share_curvature_binds_parameters(tiny_dataset):
    p = init_params(4, sizes(tiny_dataset), seed=0, share_curvature=True)
    with torch.no_grad():
        p.raw_curv_src.fill_(1.7)
    assert torch.equal(p.curvature("source"), p.curvature("target"))
    assert "raw_curv_tgt" not in p.trainable()


def test_euclidean_scores_are_negative_squared_norm(tiny_dataset):
    p = init_params(4, sizes(tiny_dataset), seed=0, euclidean=True)
    st = forward_domain(p, tiny_dataset.target, "target")
    assert torch.equal(st.users, st.users_euclid)
    m = score_matrix(st.space, st.users[:2], st.items[:3]).detach()
    ref = -((st.users[:2, None, :] - st.items[None, :3, :]) ** 2).sum(-1).detach()
    np.testing.assert_allclose(m.numpy(), ref.numpy(), atol=1e-14)
    assert "raw_curv_src" not in p.trainable()


# ----------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path, tiny_dataset, rng):
    p = init_params(5, sizes(tiny_dataset), seed=7)
    with torch.no_grad():
        p.w_s2t[1:] += 0.1
        p.raw_curv_tgt.fill_(0.3)
    p.step = 42
    save_checkpoint(p, tmp_path / "c.bin")
    q = load_checkpoint(tmp_path / "c.bin")
    for (n, a), b in zip(p.named().items(), q.named().values()):
        assert torch.equal(a, b), n
    assert (q.seed, q.step) == (7, 42)
    save_checkpoint(q, tmp_path / "d.bin")
    assert (tmp_path / "c.bin").read_bytes() == (tmp_path / "d.bin").read_bytes()
    # scoring agrees on random pairs
    users = rng.integers(0, tiny_dataset.target.num_users, 100)
    items = rng.integers(0, tiny_dataset.target.num_items, 100)
    with torch.no_grad():
        sa = forward_domain(p, tiny_dataset.target, "target")
        sb = forward_domain(q, tiny_dataset.target, "target")
        a = score_matrix(sa.space, sa.users, sa.items)[users, items]
        b = score_matrix(sb.space, sb.users, sb.items)[users, items]
    assert torch.equal(a, b)


def test_checkpoint_bad_inputs(tmp_path, tiny_dataset):
    p = init_params(3, sizes(tiny_dataset), seed=0)
    save_checkpoint(p, tmp_path / "c.bin")
    blob = (tmp_path / "c.bin").read_bytes()
    (tmp_path / "magic.bin").write_bytes(b"XXXX1" + blob[5:])
    (tmp_path / "short.bin").write_bytes(blob[:-9])
    (tmp_path / "long.bin").write_bytes(blob + b"\0")
    for name in ("magic.bin", "short.bin", "long.bin", "missing.bin"):
        with pytest.raises(DataError):
            load_checkpoint(tmp_path / name)


def test_checkpoint_layout(tmp_path):
    p = init_params(2, (1, 1, 1, 1), seed=9)
    save_checkpoint(p, tmp_path / "c.bin")
    blob = (tmp_path / "c.bin").read_bytes()
    # magic + 5 counts + 2 curvatures + 4 tables of 1x2 + 4 aligners of 3x3 + seed/step
    assert len(blob) == 5 + 40 + 16 + 8 * (4 * 2 + 4 * 9) + 16
    assert blob[:5] == b"HCTS1"
    assert int.from_bytes(blob[5:13], "little") == 2
    assert int.from_bytes(blob[-16:-8], "little") == 9
