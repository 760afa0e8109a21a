"""Experiment drivers shared by the CLI and the acceptance suite."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .datasets import DatasetBundle, generate_mirrored_karate
from .graph import TEST, normalize_adjacency
from .metrics import evaluate
from .model import ABLATIONS, DpGcnModel, ModelConfig
from .roles import RoleAssignment, build_membership, discover_roles
from .trainer import TrainConfig, make_split, train


@dataclass
class RoleConfig:
    k: int = 100
    hops: int = 2
    bins: int = 12
    seed: int = 0


@dataclass
class RunResult:
    ablation: str
    seed: int
    accuracy: float
    macro_f1: float
    epochs: int
    model: Optional[DpGcnModel] = field(default=None, repr=False)
    history: object = field(default=None, repr=False)


def run_once(bundle: DatasetBundle, roles: RoleAssignment, model_cfg: ModelConfig,
             train_cfg: TrainConfig, split: Optional[np.ndarray] = None, adj=None) -> RunResult:
    g = bundle.graph
    split = make_split(bundle.labels, train_cfg.train_fraction, train_cfg.seed) if split is None else split
    model = DpGcnModel(g.num_nodes, bundle.num_classes, model_cfg, seed=train_cfg.seed)
    adj = adj or normalize_adjacency(g)
    model, hist = train(g, roles, None, model, train_cfg, split, adj)
    pred = model.forward(adj, roles).log_probs.value.argmax(1)
    rep = evaluate(pred, bundle.labels, split == TEST, bundle.num_classes)
    return RunResult(model_cfg.ablation, train_cfg.seed, rep.accuracy, rep.macro_f1,
                     len(hist.rows), model, hist)


def run_ablation(bundle: DatasetBundle, roles: RoleAssignment, model_cfg: ModelConfig,
                 train_cfg: TrainConfig, seeds: Sequence[int],
                 variants: Sequence[str] = ABLATIONS) -> list[RunResult]:
    """Every variant on every seed; a seed fixes the split and the initialization for all variants."""
    adj = normalize_adjacency(bundle.graph)
    out = []
    for seed in seeds:
        tc = replace(train_cfg, seed=seed)
        split = make_split(bundle.labels, tc.train_fraction, seed)
        for v in variants:
            res = run_once(bundle, roles, replace(model_cfg, ablation=v), tc, split, adj)
            res.model = res.history = None
            out.append(res)
    return out


def ablation_table(results: list[RunResult]) -> list[dict]:
    rows = [{"seed": r.seed, "variant": r.ablation, "accuracy": r.accuracy, "macro_f1": r.macro_f1}
            for r in results]
    for v in dict.fromkeys(r.ablation for r in results):
        sel = [r for r in results if r.ablation == v]
        rows.append({"seed": "mean", "variant": v,
                     "accuracy": float(np.mean([r.accuracy for r in sel])),
                     "macro_f1": float(np.mean([r.macro_f1 for r in sel]))})
    return rows


# -- mirrored karate ---------------------------------------------------------

def pair_ranks(emb: np.ndarray, mirror: np.ndarray) -> np.ndarray:
    """For every node, 1 + the number of other nodes strictly closer than its mirror."""
    d = np.sqrt(np.maximum(((emb[:, None, :] - emb[None, :, :]) ** 2).sum(-1), 0.0))
    n = emb.shape[0]
    idx = np.arange(n)
    dm = d[idx, mirror]
    closer = d < dm[:, None]
    closer[idx, idx] = False
    return 1 + closer.sum(1)


def mutual_nn_rate(emb: np.ndarray, mirror: np.ndarray) -> float:
    """Fraction of mirror pairs that are each other's nearest neighbour (ties count as nearest)."""
    r = pair_ranks(emb, mirror)
    half = np.nonzero(np.arange(len(mirror)) < mirror)[0]
    return float(np.mean((r[half] == 1) & (r[mirror[half]] == 1)))


@dataclass
class MirrorResult:
    seed: int
    variant: str
    embedding: np.ndarray
    clusters: np.ndarray
    ranks: np.ndarray
    pair_distance: np.ndarray
    mutual_nn_rate: float

    def summary(self) -> dict:
        d = asdict(self)
        for k in ("embedding", "clusters", "ranks", "pair_distance"):
            d.pop(k)
        d["max_pair_distance"] = float(self.pair_distance.max())
        d["mean_pair_rank"] = float(self.ranks.mean())
        return d


def mirror_karate(seeds: Sequence[int] = range(20), dim: int = 10, heads: int = 4,
                  variants: Sequence[str] = ("full", "no_t", "no_c")) -> list[MirrorResult]:
    """Untrained forward passes on the mirrored karate network with mirror-paired roles.

    ``dim`` is the width of the final node representation; cluster ids are the
    argmax of its log-softmax.
    """
    bundle = generate_mirrored_karate()
    g = bundle.graph
    mirror = bundle.extra["mirror_map"]
    roles = build_membership(bundle.extra["mirror_roles"])
    adj = normalize_adjacency(g)
    out = []
    for seed in seeds:
        for v in variants:
            cfg = ModelConfig(hidden=dim, layers=2, heads=heads, ablation=v)
            model = DpGcnModel(g.num_nodes, None, cfg, seed=seed)
            art = model.forward(adj, roles)
            emb = art.h[-1].value
            half = np.arange(34)
            pd = np.linalg.norm(emb[half] - emb[mirror[half]], axis=1)
            out.append(MirrorResult(seed, v, emb, art.log_probs.value.argmax(1),
                                    pair_ranks(emb, mirror), pd, mutual_nn_rate(emb, mirror)))
    return out


def default_roles(bundle: DatasetBundle, cfg: RoleConfig) -> RoleAssignment:
    roles, _ = discover_roles(bundle.graph, cfg.k, cfg.hops, cfg.bins, cfg.seed)
    return roles
