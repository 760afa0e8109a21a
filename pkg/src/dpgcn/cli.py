"""Command line: ``dpgcn {ingest,roles,train,eval,embed,mirror-karate,ablate}``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .datasets import DatasetBundle, load_dataset, load_edgelist_dataset, write_manifest
from .experiments import RoleConfig, ablation_table, default_roles, mirror_karate, run_ablation
from .graph import TEST, normalize_adjacency
from .metrics import evaluate
from .model import ABLATIONS, DpGcnModel, ModelConfig
from .roles import build_membership, extract_struct_features
from .trainer import TrainConfig, make_split, train

log = logging.getLogger("dpgcn")


class StageError(RuntimeError):
    def __init__(self, stage: str, msg: str):
        self.stage = stage
        super().__init__(f"[{stage}] {msg}")


@dataclass
class ExperimentSpec:
    dataset: str = "planted-roles"
    dataset_params: dict = field(default_factory=dict)
    roles: RoleConfig = field(default_factory=RoleConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0
    out_dir: str = "runs"

    def __post_init__(self):
        # one seed drives role discovery, splitting, initialization and generators
        self.roles.seed = self.seed
        self.train.seed = self.seed

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        d = dict(d)
        return cls(
            dataset=d.get("dataset", "planted-roles"),
            dataset_params=d.get("dataset_params", {}),
            roles=RoleConfig(**d.get("roles", {})),
            model=ModelConfig(**d.get("model", {})),
            train=TrainConfig(**d.get("train", {})),
            seed=d.get("seed", 0),
            out_dir=d.get("out_dir", "runs"),
        )

    def checksum(self) -> str:
        d = self.to_dict()
        d.pop("out_dir")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


# -- atomic output ----------------------------------------------------------

def _atomic(path: Path, write) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.stem}.tmp{path.suffix}")
    write(tmp)
    os.replace(tmp, path)
    return path


def write_text(path: Path, text: str) -> Path:
    return _atomic(path, lambda p: p.write_text(text, encoding="utf-8"))


def write_json(path: Path, obj) -> Path:
    return write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header: list, rows) -> Path:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return write_text(path, buf.getvalue())


def _fmt(x) -> str:
    return f"{x:.10g}" if isinstance(x, float) else str(x)


# -- spec resolution ----------------------------------------------------------

_ROLE_FLAGS = {"k": "k", "hops": "hops", "bins": "bins"}
_MODEL_FLAGS = {"layers": "layers", "hidden": "hidden", "heads": "heads", "ablation": "ablation",
                "dropout": "dropout"}
_TRAIN_FLAGS = {"epochs": "epochs", "lr": "lr", "weight_decay": "weight_decay",
                "train_fraction": "train_fraction", "patience": "patience",
                "oversample": "oversample", "undersample": "undersample", "balance": "balance",
                "decay_scope": "decay_scope"}


def resolve_spec(args) -> ExperimentSpec:
    base = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text(encoding="utf-8"))
    for sect, names in (("roles", _ROLE_FLAGS), ("model", _MODEL_FLAGS), ("train", _TRAIN_FLAGS)):
        for flag, key in names.items():
            v = getattr(args, flag, None)
            if v is not None:
                base.setdefault(sect, {})[key] = v
    if getattr(args, "no_normalize", False):
        base.setdefault("model", {})["normalize"] = False
    for key in ("dataset", "seed", "out_dir"):
        v = getattr(args, key, None)
        if v is not None:
            base[key] = v
    if getattr(args, "param", None):
        params = base.setdefault("dataset_params", {})
        for kv in args.param:
            k, _, v = kv.partition("=")
            params[k] = json.loads(v) if v[:1] in "[{0123456789-" or v in ("true", "false") else v
    return ExperimentSpec.from_dict(base)


def _load_bundle(spec: ExperimentSpec) -> DatasetBundle:
    try:
        return load_dataset(spec.dataset, spec.seed, spec.dataset_params)
    except Exception as e:
        raise StageError("load-dataset", str(e)) from e


def _roles_for(spec: ExperimentSpec, bundle: DatasetBundle):
    try:
        if spec.dataset == "mirrored-karate":
            return build_membership(bundle.extra["mirror_roles"])
        return default_roles(bundle, spec.roles)
    except Exception as e:
        raise StageError("roles", str(e)) from e


# -- commands -------------------------------------------------------------------

def cmd_ingest(args) -> int:
    out = Path(args.out_dir or "runs")
    if len(args.paths) == 1 and not Path(args.paths[0]).exists():
        bundle = load_dataset(args.paths[0], args.seed or 0)
    else:
        try:
            bundle = load_edgelist_dataset(args.paths[0], args.paths[1] if len(args.paths) > 1 else None,
                                           args.name)
        except Exception as e:
            raise StageError("ingest", str(e)) from e
    path = out / f"{bundle.name}.manifest.json"
    man = _atomic(path, lambda p: write_manifest(bundle, p))
    print(f"wrote {man}  {bundle.stats()}")
    for w in bundle.provenance.get("warnings", []):
        print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_roles(args) -> int:
    spec = resolve_spec(args)
    bundle = _load_bundle(spec)
    roles = _roles_for(spec, bundle)
    out = Path(spec.out_dir)
    write_text(out / "roles.tsv", "".join(f"{bundle.node_ids[i]}\t{r}\n" for i, r in enumerate(roles.member_of)))
    if args.features_csv:
        f = extract_struct_features(bundle.graph, spec.roles.hops, spec.roles.bins).matrix
        write_csv(out / "features.csv", ["node_id"] + [f"f{j}" for j in range(f.shape[1])],
                  ([bundle.node_ids[i]] + [_fmt(float(x)) for x in row] for i, row in enumerate(f)))
    write_json(out / "spec.json", {"spec": spec.to_dict(), "spec_sha256": spec.checksum()})
    print(f"{roles.num_roles} roles over {roles.num_nodes} nodes -> {out / 'roles.tsv'}")
    return 0


def cmd_train(args) -> int:
    spec = resolve_spec(args)
    bundle = _load_bundle(spec)
    roles = _roles_for(spec, bundle)
    out = Path(spec.out_dir)
    g = bundle.graph
    try:
        split = make_split(bundle.labels, spec.train.train_fraction, spec.seed)
        model = DpGcnModel(g.num_nodes, bundle.num_classes, spec.model, seed=spec.seed)
        model, hist = train(g, roles, None, model, spec.train, split)
    except Exception as e:
        raise StageError("train", str(e)) from e
    ck = out / "checkpoint.npz"
    _atomic(ck, lambda p: model.save(p, extra={"spec": spec.to_dict(), "spec_sha256": spec.checksum(),
                                               "dataset": bundle.name},
                                     arrays={"member_of": roles.member_of, "split": split}))
    write_text(out / "history.csv", hist.to_csv())
    write_json(out / "spec.json", {"spec": spec.to_dict(), "spec_sha256": spec.checksum()})
    if not args.no_figures and hist.rows:
        from .plotting import plot_history
        _atomic(out / "history.png", lambda p: plot_history(hist.rows, p))
    f = hist.final
    print(f"trained {len(hist.rows)} epochs; final loss {f.get('loss', float('nan')):.4f} "
          f"test acc {f.get('test_acc', float('nan')):.4f} -> {ck}")
    return 0


def _load_checkpoint(args):
    try:
        model, meta, arrays = DpGcnModel.load(args.checkpoint)
    except Exception as e:
        raise StageError("load-checkpoint", str(e)) from e
    spec = ExperimentSpec.from_dict(meta["extra"]["spec"])
    if args.dataset:
        spec.dataset = args.dataset
    bundle = _load_bundle(spec)
    if bundle.graph.num_nodes != model.num_nodes:
        raise StageError("dimension-check",
                         f"checkpoint was trained on {model.num_nodes} nodes but dataset "
                         f"{spec.dataset!r} has {bundle.graph.num_nodes}")
    if model.num_classes is not None and bundle.num_classes > model.num_classes:
        raise StageError("dimension-check",
                         f"checkpoint predicts {model.num_classes} classes but dataset has "
                         f"{bundle.num_classes}")
    roles = build_membership(arrays["member_of"])
    return model, meta, arrays, spec, bundle, roles


def cmd_eval(args) -> int:
    model, meta, arrays, spec, bundle, roles = _load_checkpoint(args)
    adj = normalize_adjacency(bundle.graph)
    pred = model.forward(adj, roles).log_probs.value.argmax(1)
    split = arrays.get("split")
    mask = (split == TEST) if split is not None and (split == TEST).any() else bundle.labels >= 0
    rep = evaluate(pred, bundle.labels, mask, model.num_classes)
    out = Path(args.out_dir or spec.out_dir)
    d = rep.to_dict()
    d.update(dataset=bundle.name, spec_sha256=meta["extra"].get("spec_sha256"),
             evaluated_on="test" if split is not None and (split == TEST).any() else "all-labeled")
    write_json(out / "eval.json", d)
    k = len(rep.confusion)
    write_csv(out / "confusion.csv", ["true\\pred"] + list(range(k)),
              ([i] + row for i, row in enumerate(rep.confusion)))
    print(f"accuracy {rep.accuracy:.4f}  macro-F1 {rep.macro_f1:.4f} -> {out / 'eval.json'}")
    return 0


def cmd_embed(args) -> int:
    model, meta, arrays, spec, bundle, roles = _load_checkpoint(args)
    h = model.forward(normalize_adjacency(bundle.graph), roles).h[-1].value
    out = Path(args.out_dir or spec.out_dir)
    write_csv(out / "embeddings.csv", ["node_id"] + [f"dim_{j}" for j in range(h.shape[1])],
              ([bundle.node_ids[i]] + [_fmt(float(x)) for x in row] for i, row in enumerate(h)))
    print(f"{h.shape[0]} x {h.shape[1]} embeddings -> {out / 'embeddings.csv'}")
    return 0


def cmd_mirror_karate(args) -> int:
    out = Path(args.out_dir or "runs")
    seed0 = args.seed or 0
    seeds = range(seed0, seed0 + args.seeds)
    res = mirror_karate(seeds, dim=args.dim, heads=args.heads)
    first = {r.variant: r for r in res if r.seed == seed0}
    emb = first["full"].embedding
    write_csv(out / "mirror_embeddings.csv", ["node_id", "mirror_id", "cluster"] + [f"dim_{j}" for j in range(emb.shape[1])],
              ([i, (i + 34) % 68, int(first["full"].clusters[i])] + [_fmt(float(x)) for x in emb[i]]
               for i in range(68)))
    rows = []
    for v, r in first.items():
        for i in range(34):
            rows.append([v, i, i + 34, _fmt(float(r.pair_distance[i])), int(r.ranks[i]), int(r.ranks[i + 34])])
    write_csv(out / "mirror_pairs.csv", ["variant", "node", "mirror", "distance", "rank_of_mirror",
                                         "rank_from_mirror"], rows)
    summary = {}
    for v in first:
        sel = [r for r in res if r.variant == v]
        summary[v] = {"mean_mutual_nn_rate": float(np.mean([r.mutual_nn_rate for r in sel])),
                      "max_pair_distance": float(max(r.pair_distance.max() for r in sel)),
                      "mean_pair_rank": float(np.mean([r.ranks.mean() for r in sel]))}
    write_json(out / "mirror_summary.json", {"seeds": list(seeds), "dim": args.dim, "variants": summary})
    if not args.no_figures:
        from .plotting import plot_mirror_embeddings
        names = {"no_t": "GCN (remove T)", "full": "DP-GCN"}
        _atomic(out / "mirror_karate.png", lambda p: plot_mirror_embeddings(
            {names[v]: first[v].embedding for v in ("no_t", "full")},
            {names[v]: first[v].clusters for v in ("no_t", "full")}, p))
    for v, s in summary.items():
        print(f"{v:8s} mutual-NN rate {s['mean_mutual_nn_rate']:.3f}  max pair distance {s['max_pair_distance']:.3g}")
    return 0


def cmd_ablate(args) -> int:
    spec = resolve_spec(args)
    bundle = _load_bundle(spec)
    roles = _roles_for(spec, bundle)
    seeds = list(range(spec.seed, spec.seed + args.seeds))
    try:
        res = run_ablation(bundle, roles, spec.model, spec.train, seeds, args.variants or ABLATIONS)
    except Exception as e:
        raise StageError("ablate", str(e)) from e
    rows = ablation_table(res)
    out = Path(spec.out_dir)
    write_csv(out / "ablation.csv", ["seed", "variant", "accuracy", "macro_f1"],
              ([r["seed"], r["variant"], _fmt(r["accuracy"]), _fmt(r["macro_f1"])] for r in rows))
    write_json(out / "spec.json", {"spec": spec.to_dict(), "spec_sha256": spec.checksum(), "seeds": seeds})
    if not args.no_figures:
        from .plotting import plot_ablation
        _atomic(out / "ablation.png", lambda p: plot_ablation(rows, p))
    for r in rows:
        if r["seed"] == "mean":
            print(f"{r['variant']:14s} acc {r['accuracy']:.4f}  macro-F1 {r['macro_f1']:.4f}")
    return 0


# -- parser ---------------------------------------------------------------------

def _spec_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file holding a serialized ExperimentSpec")
    p.add_argument("--dataset", help="generator name, public name, manifest JSON, or edges[,labels]")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="dataset generator parameter")
    g = p.add_argument_group("roles")
    g.add_argument("--k", type=int)
    g.add_argument("--hops", type=int)
    g.add_argument("--bins", type=int)
    g = p.add_argument_group("model")
    g.add_argument("--layers", type=int)
    g.add_argument("--hidden", type=int)
    g.add_argument("--heads", type=int)
    g.add_argument("--ablation", choices=ABLATIONS)
    g.add_argument("--dropout", type=float)
    g.add_argument("--no-normalize", action="store_true")
    g = p.add_argument_group("training")
    g.add_argument("--epochs", type=int)
    g.add_argument("--lr", type=float)
    g.add_argument("--weight-decay", type=float)
    g.add_argument("--decay-scope", choices=("first_layer", "all"))
    g.add_argument("--train-fraction", type=float)
    g.add_argument("--patience", type=int)
    g.add_argument("--oversample", type=float)
    g.add_argument("--undersample", type=float)
    g.add_argument("--balance", type=float)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int)
    common.add_argument("--out-dir")
    common.add_argument("--no-figures", action="store_true")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dpgcn", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="validate dataset files and write a manifest")
    s.add_argument("paths", nargs="+", help="EDGES [LABELS], or a generator name")
    s.add_argument("--name", help="known dataset name for statistics checks (brazil, euro, ...)")
    s.set_defaults(func=cmd_ingest)

    s = sub.add_parser("roles", parents=[common], help="discover topology roles")
    _spec_flags(s)
    s.add_argument("--features-csv", action="store_true")
    s.set_defaults(func=cmd_roles)

    s = sub.add_parser("train", parents=[common], help="train and write checkpoint + history")
    _spec_flags(s)
    s.set_defaults(func=cmd_train)

    for name, fn, hlp in (("eval", cmd_eval, "evaluate a checkpoint"),
                          ("embed", cmd_embed, "export final unified embeddings")):
        s = sub.add_parser(name, parents=[common], help=hlp)
        s.add_argument("--checkpoint", required=True)
        s.add_argument("--dataset")
        s.set_defaults(func=fn)

    s = sub.add_parser("mirror-karate", parents=[common], help="untrained mirrored-karate embedding study")
    s.add_argument("--seeds", type=int, default=20)
    s.add_argument("--dim", type=int, default=10)
    s.add_argument("--heads", type=int, default=4)
    s.set_defaults(func=cmd_mirror_karate)

    s = sub.add_parser("ablate", parents=[common], help="ablation table over paired seeds")
    _spec_flags(s)
    s.add_argument("--seeds", type=int, default=5)
    s.add_argument("--variants", nargs="+", choices=ABLATIONS)
    s.set_defaults(func=cmd_ablate)
    return p


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as e:
        print(f"dpgcn {args.command}: error {e}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as e:
        print(f"dpgcn {args.command}: error [{args.command}] {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
