"""Command line entry point: synth | train | eval | report | export.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import geometry
from .data import (SyntheticConfig, load_interactions, long_tail_report, make_dataset, top_decile_mass,
                   write_synthetic)
from .errors import DataError, HCTSError, UsageError
from .evaluation import HEAD_FRACTION, evaluate
from .model import load_checkpoint, forward_domain
from .trainer import ABLATION_FLAGS, TrainConfig, train

log = logging.getLogger("hcts")

EXPORT_MODES = ("lorentz", "poincare", "tangent")


@dataclasses.dataclass
class DataBlock:
    source_interactions: Optional[str] = None
    target_interactions: Optional[str] = None
    min_user_degree: Optional[int] = None  # None: 1 for synthetic files, 5 otherwise
    min_item_degree: Optional[int] = None
    validation: bool = False


@dataclasses.dataclass
class EvalBlock:
    k: int = 10
    head_tail_mode: str = "count"
    domains: tuple = ("target", "source")


@dataclasses.dataclass
class RunConfig:
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    data: DataBlock = dataclasses.field(default_factory=DataBlock)
    synthetic: SyntheticConfig = dataclasses.field(default_factory=SyntheticConfig)
    eval: EvalBlock = dataclasses.field(default_factory=EvalBlock)
    out: str = "runs/default"
    seed: int = 0

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["eval"]["domains"] = list(d["eval"]["domains"])
        return d


def _build(cls, values, where: str):
    if not isinstance(values, dict):
        raise UsageError(f"config block {where!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise UsageError(f"unknown config keys in {where!r}: {', '.join(unknown)}")
    return cls(**values)


def parse_run_config(doc: dict) -> RunConfig:
    """Build a RunConfig from a nested dict, rejecting unknown keys at every level."""
    if not isinstance(doc, dict):
        raise UsageError("config file must hold an object")
    blocks = {"train": TrainConfig, "data": DataBlock, "synthetic": SyntheticConfig, "eval": EvalBlock}
    unknown = sorted(set(doc) - set(blocks) - {"out", "seed"})
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    kw = {name: _build(cls, doc.get(name, {}), name) for name, cls in blocks.items()}
    if "domains" in doc.get("eval", {}):
        kw["eval"].domains = tuple(kw["eval"].domains)
    cfg = RunConfig(**kw, out=str(doc.get("out", "runs/default")), seed=doc.get("seed", 0))
    if not isinstance(cfg.seed, int) or isinstance(cfg.seed, bool) or cfg.seed < 0:
        raise UsageError("seed must be a nonnegative integer")
    return cfg


def load_run_config(path: Optional[str]) -> RunConfig:
    if path is None:
        return RunConfig()
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file {path} is not valid JSON: {exc}") from exc
    return parse_run_config(doc)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--seed", type=int, help="overrides the config seed")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")

    data = _Parser(add_help=False)
    data.add_argument("--source", help="source-domain interaction file")
    data.add_argument("--target", help="target-domain interaction file")

    model = _Parser(add_help=False)
    model.add_argument("--checkpoint", help="checkpoint path (default: OUT/checkpoint.bin)")
    model.add_argument("--layers", type=int)
    for flag in ("share_curvature", "euclidean"):
        model.add_argument("--" + flag.replace("_", "-"), action="store_true", default=None)

    p = _Parser(prog="hcts", description="Hyperbolic cross-domain recommendation")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("synth", parents=[common], help="write a synthetic two-domain dataset")

    t = sub.add_parser("train", parents=[common, data], help="train a model")
    for name in ("dim", "epochs", "batch_size", "layers", "n_neg_cl"):
        t.add_argument("--" + name.replace("_", "-"), type=int)
    for name in ("lr", "margin", "temperature", "lambda_cts", "lambda_clib"):
        t.add_argument("--" + name.replace("_", "-"), type=float)
    for flag in ABLATION_FLAGS + ("validate",):
        t.add_argument("--" + flag.replace("_", "-"), action="store_true", default=None)

    e = sub.add_parser("eval", parents=[common, data, model], help="full-sort evaluation")
    e.add_argument("--k", type=int)
    e.add_argument("--head-tail-mode", choices=("count", "mass"))

    sub.add_parser("report", parents=[common, data], help="long-tail degree curves")

    x = sub.add_parser("export", parents=[common, data, model], help="dump embedding coordinates")
    x.add_argument("--mode", default="poincare", help="lorentz | poincare | tangent")
    x.add_argument("--base", action="store_true", help="export lifted tables instead of propagated embeddings")
    return p


def _resolve(args) -> RunConfig:
    cfg = load_run_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("seed must be nonnegative")
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    if getattr(args, "source", None):
        cfg.data.source_interactions = args.source
    if getattr(args, "target", None):
        cfg.data.target_interactions = args.target
    tr = {f.name for f in dataclasses.fields(TrainConfig)}
    for name, value in vars(args).items():
        if name in tr and value is not None:
            setattr(cfg.train, name, value)
    cfg.train.seed = cfg.seed
    if getattr(args, "k", None) is not None:
        cfg.eval.k = args.k
    if getattr(args, "head_tail_mode", None) is not None:
        cfg.eval.head_tail_mode = args.head_tail_mode
    return cfg


def _data_paths(cfg: RunConfig):
    out = Path(cfg.out)
    src = Path(cfg.data.source_interactions) if cfg.data.source_interactions else out / "source.tsv"
    tgt = Path(cfg.data.target_interactions) if cfg.data.target_interactions else out / "target.tsv"
    return src, tgt


def _is_synthetic(path: Path) -> bool:
    manifest = path.parent / "manifest.json"
    try:
        return json.loads(manifest.read_text(encoding="utf-8")).get("generator") == "synthetic"
    except (OSError, ValueError, AttributeError):
        return False


def degree_thresholds(cfg: RunConfig, path: Path):
    default = 1 if _is_synthetic(path) else 5
    mu, mi = cfg.data.min_user_degree, cfg.data.min_item_degree
    return (default if mu is None else mu), (default if mi is None else mi)


def _load_graphs(cfg: RunConfig):
    return tuple(load_interactions(p, *degree_thresholds(cfg, p)) for p in _data_paths(cfg))


def _load_dataset(cfg: RunConfig):
    src, tgt = _load_graphs(cfg)
    return make_dataset(src, tgt, cfg.seed, validation=cfg.data.validation)


def _write_json(path: Path, doc: dict):
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _provenance(cfg: RunConfig) -> str:
    return "# " + json.dumps({"seed": cfg.seed, "config": cfg.to_dict()}, sort_keys=True)


def _load_params(cfg: RunConfig, args, dataset):
    ckpt = Path(args.checkpoint) if args.checkpoint else Path(cfg.out) / "checkpoint.bin"
    params = load_checkpoint(ckpt, share_curvature=cfg.train.share_curvature, euclidean=cfg.train.euclidean)
    if dataset is not None:
        sizes = (dataset.source.num_users, dataset.source.num_items,
                 dataset.target.num_users, dataset.target.num_items)
        got = tuple(params.tables("source")) + tuple(params.tables("target"))
        if tuple(t.shape[0] for t in got) != sizes:
            raise DataError(f"checkpoint {ckpt} does not match the dataset sizes {sizes}")
    return params


def cmd_synth(cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    return write_synthetic(cfg.synthetic, cfg.seed, out, extra={"config": cfg.to_dict()})


def cmd_train(cfg: RunConfig):
    dataset = _load_dataset(cfg)
    out = Path(cfg.out)
    params, history = train(cfg.train, dataset, out_dir=out)
    _write_json(out / "run_config.json", {"seed": cfg.seed, "config": cfg.to_dict()})
    return params, history


def cmd_eval(cfg: RunConfig, args) -> dict:
    dataset = _load_dataset(cfg)
    params = _load_params(cfg, args, dataset)
    report = evaluate(params, dataset, k=cfg.eval.k, layers=cfg.train.layers, domains=cfg.eval.domains,
                      head_tail_mode=cfg.eval.head_tail_mode, config=cfg.to_dict())
    doc = report.to_dict()
    doc["head_fraction"] = HEAD_FRACTION
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "eval_report.json", doc)
    return doc


def cmd_report(cfg: RunConfig) -> dict:
    graphs = _load_graphs(cfg)
    curves = long_tail_report(list(graphs))
    names = {"domain_0": "source", "domain_1": "target", "merged": "merged"}
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    header = _provenance(cfg)
    summary = {"seed": cfg.seed, "config": cfg.to_dict(), "top_decile_mass": {}}
    for key, curve in curves.items():
        rows = [header, "rank\tnormalized_degree"] + [f"{r + 1}\t{v:.17g}" for r, v in enumerate(curve.tolist())]
        (out / f"long_tail_{names[key]}.tsv").write_text("\n".join(rows) + "\n", encoding="utf-8")
        summary["top_decile_mass"][names[key]] = top_decile_mass(curve)
    _write_json(out / "long_tail_summary.json", summary)
    return summary


def export_rows(params, dataset, mode: str, base: bool = False, layers: int = 3):
    """Yield (kind, domain, external id, coordinates) for every node."""
    if mode not in EXPORT_MODES:
        raise UsageError(f"unknown export mode {mode!r}; choose from {', '.join(EXPORT_MODES)}")
    if params.euclidean and mode != "tangent":
        raise UsageError("Euclidean checkpoints only support the tangent export")
    for domain in ("source", "target"):
        space = params.space(domain)
        with torch.no_grad():
            if base:
                users, items = (space.lift(t) for t in params.tables(domain))
            else:
                state = forward_domain(params, dataset.graph(domain), domain, layers)
                users, items = state.users, state.items
            graph = dataset.graph(domain) if dataset is not None else None
            for kind, pts in (("user", users), ("item", items)):
                if mode == "lorentz":
                    coords = pts
                elif mode == "poincare":
                    coords = geometry.to_poincare(pts, space.k)
                else:
                    coords = space.log0(pts)
                if graph is not None:
                    ids = graph.external_user_ids if kind == "user" else graph.external_item_ids
                else:
                    ids = [str(n) for n in range(coords.shape[0])]
                for ext, row in zip(ids, coords.numpy()):
                    yield kind, domain, ext, row


def cmd_export(cfg: RunConfig, args) -> Path:
    if args.mode not in EXPORT_MODES:
        raise UsageError(f"unknown export mode {args.mode!r}; choose from {', '.join(EXPORT_MODES)}")
    dataset = None if args.base else _load_dataset(cfg)
    params = _load_params(cfg, args, dataset)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = [_provenance(cfg)]
    for kind, domain, ext, row in export_rows(params, dataset, args.mode, args.base, cfg.train.layers):
        lines.append("\t".join([kind, domain, ext] + [repr(float(v)) for v in row]))
    path = out / f"embeddings_{args.mode}.tsv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def read_embeddings(path):
    """Parse an export file into {(kind, domain): (ids, coords)}."""
    groups = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        kind, domain, ext, *vals = line.split("\t")
        ids, rows = groups.setdefault((kind, domain), ([], []))
        ids.append(ext)
        rows.append([float(v) for v in vals])
    return {key: (ids, np.array(rows)) for key, (ids, rows) in groups.items()}


def run_command(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    cfg = _resolve(args)
    if args.command == "synth":
        cmd_synth(cfg)
    elif args.command == "train":
        cmd_train(cfg)
    elif args.command == "eval":
        doc = cmd_eval(cfg, args)
        for d, m in doc["domains"].items():
            print(f"{d}: HR@{doc['k']}={m['hr']:.4f} NDCG@{doc['k']}={m['ndcg']:.4f} "
                  f"tail NDCG={m['tail']['ndcg']:.4f}")
    elif args.command == "report":
        summary = cmd_report(cfg)
        for name, mass in summary["top_decile_mass"].items():
            print(f"{name}: top-decile mass {mass:.4f}")
    elif args.command == "export":
        print(cmd_export(cfg, args))
    return 0


def main(argv=None) -> int:
    try:
        return run_command(argv)
    except HCTSError as exc:
        print(f"hcts: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (TypeError, ValueError) as exc:
        # malformed config values (wrong types) surface here
        print(f"hcts: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
