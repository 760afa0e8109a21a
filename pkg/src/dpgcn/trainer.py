"""Experiment protocol: stratified splits, class re-weighting and the full-graph training loop."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autograd as ag
from .graph import TEST, TRAIN, UNLABELED, Graph, NormalizedAdjacency, normalize_adjacency
from .metrics import evaluate
from .model import DpGcnModel
from .roles import RoleAssignment

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    train_fraction: float = 0.67
    epochs: int = 300
    lr: float = 0.01
    weight_decay: float = 5e-4
    seed: int = 0
    patience: int = 50
    oversample: float = 1.0   # loss-weight multiplier for every non-majority class
    undersample: float = 1.0  # loss-weight multiplier for the majority class
    balance: Optional[float] = None  # target effective majority:minority ratio, overrides the two above
    decay_scope: str = "first_layer"  # or "all"

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.oversample < 0 or self.undersample < 0 or (self.balance is not None and self.balance <= 0):
            raise ValueError("resampling ratios must be non-negative")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.decay_scope not in ("first_layer", "all"):
            raise ValueError("decay_scope must be 'first_layer' or 'all'")


def decayed_parameters(model: DpGcnModel, scope: str) -> Optional[set]:
    """Names receiving weight decay; None means every parameter.

    ``first_layer`` decays only the first-layer convolution weights. Decaying
    everything lets Adam shrink the attention vectors toward zero, since the
    row normalization before the classifier leaves the loss almost
    insensitive to their scale, and the heads collapse to uniform weights.
    """
    if scope == "all":
        return None
    return {k for k in model.params if k.startswith("l0.w_")}


def make_split(labels, fraction: float = 0.67, seed: int = 0) -> np.ndarray:
    """Stratified train/test assignment over labeled nodes (label >= 0).

    Per-class train counts use largest-remainder rounding so the total is
    ``round(fraction * labeled)``. A class with one node puts it in train;
    larger classes keep at least one node on each side.
    """
    labels = np.asarray(labels, dtype=np.int64)
    labeled = np.nonzero(labels >= 0)[0]
    if labeled.size == 0:
        raise ValueError("make_split: no labeled nodes")
    rng = np.random.default_rng(seed)
    classes = np.unique(labels[labeled])
    counts = np.array([(labels == c).sum() for c in classes])
    exact = fraction * counts
    take = np.floor(exact).astype(int)
    short = int(round(fraction * labeled.size)) - take.sum()
    order = np.lexsort((classes, -(exact - take)))
    for i in order[:max(short, 0)]:
        take[i] += 1
    take = np.where(counts == 1, 1, np.clip(take, 1, np.maximum(counts - 1, 1)))

    mask = np.full(labels.shape, UNLABELED, dtype=np.int8)
    for c, t in zip(classes, take):
        members = np.nonzero(labels == c)[0]
        members = members[rng.permutation(members.size)]
        mask[members[:t]] = TRAIN
        mask[members[t:]] = TEST
    return mask


def resample_weights(mask, labels, config: TrainConfig) -> np.ndarray:
    """Per-node loss weights realizing over/under-sampling on the training nodes.

    Zero for non-training nodes. With ``config.balance = r`` the effective
    count (weight x size) of each minority class is the majority size / r.
    """
    mask = np.asarray(mask)
    labels = np.asarray(labels, dtype=np.int64)
    train = mask == TRAIN
    w = np.zeros(labels.shape, dtype=np.float64)
    if not train.any():
        return w
    counts = np.bincount(labels[train])
    present = np.nonzero(counts)[0]
    major = int(present[counts[present].argmax()])
    for c in present:
        if config.balance is not None:
            cw = 1.0 if c == major else counts[major] / (config.balance * counts[c])
        else:
            cw = config.undersample if c == major else config.oversample
        w[train & (labels == c)] = cw
    return w


@dataclass
class History:
    rows: list

    def to_csv(self) -> str:
        lines = ["epoch,loss,test_acc,test_macro_f1"]
        for r in self.rows:
            lines.append(f"{r['epoch']},{r['loss']:.10g},{r['test_acc']:.10g},{r['test_macro_f1']:.10g}")
        return "\n".join(lines) + "\n"

    @property
    def final(self) -> dict:
        return self.rows[-1] if self.rows else {}


def train(graph: Graph, roles: Optional[RoleAssignment], features, model: DpGcnModel,
          config: TrainConfig, split: Optional[np.ndarray] = None,
          adj: Optional[NormalizedAdjacency] = None) -> tuple[DpGcnModel, History]:
    """Full-graph training with a masked, weighted NLL loss and Adam.

    The parameters with the lowest training loss seen are restored at the end.
    Test metrics are logged per epoch but never used for selection.
    """
    if graph.node_labels is None:
        raise ValueError("graph has no labels")
    labels = graph.node_labels
    if split is None:
        split = graph.label_mask if graph.label_mask is not None and (graph.label_mask == TEST).any() \
            else make_split(labels, config.train_fraction, config.seed)
    adj = adj or normalize_adjacency(graph)
    weights = resample_weights(split, labels, config)
    train_mask = weights > 0
    test_mask = split == TEST
    num_classes = model.num_classes
    state = ag.AdamState(lr=config.lr, weight_decay=config.weight_decay)
    decay = decayed_parameters(model, config.decay_scope)
    rng = np.random.default_rng(config.seed)
    rows = []
    best_loss, best_state, stale = np.inf, model.state(), 0

    for epoch in range(1, config.epochs + 1):
        try:
            with ag.Tape() as tape:
                art = model.forward(adj, roles, features, training=True, rng=rng)
                loss = ag.nll_loss(art.log_probs, labels, train_mask, weights)
        except FloatingPointError as e:
            raise TrainingDiverged(f"non-finite forward pass at epoch {epoch}: {e}") from e
        lv = loss.item()
        if not np.isfinite(lv):
            raise TrainingDiverged(f"loss became {lv} at epoch {epoch}")
        row = {"epoch": epoch, "loss": lv, "test_acc": float("nan"), "test_macro_f1": float("nan")}
        if test_mask.any():
            rep = evaluate(art.log_probs.value.argmax(1), labels, test_mask, num_classes)
            row["test_acc"], row["test_macro_f1"] = rep.accuracy, rep.macro_f1
        rows.append(row)
        if lv < best_loss - 1e-12:
            best_loss, best_state, stale = lv, model.state(), 0
        else:
            stale += 1
        tape.backward(loss)
        ag.adam_step(model.params, state, decay)
        if config.patience and stale >= config.patience:
            log.info("early stop at epoch %d (no train-loss improvement for %d epochs)", epoch, stale)
            break

    if rows:
        # the update after the last recorded epoch is unevaluated; keep the best recorded state
        model.load_state(best_state)
    return model, History(rows)
