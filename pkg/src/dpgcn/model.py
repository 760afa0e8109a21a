"""Dual-path graph convolution: connectivity path, role path, attention fusion, classifier."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from . import autograd as ag
from .autograd import Tensor
from .graph import Graph, NormalizedAdjacency, normalize_adjacency
from .roles import RoleAssignment

ABLATIONS = ("full", "no_c", "no_t", "no_attention", "single_head", "single_layer")
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    hidden: int = 120
    layers: int = 2
    heads: int = 4
    normalize: bool = True
    ablation: str = "full"
    dropout: float = 0.0
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ValueError(f"unknown ablation {self.ablation!r}; choose from {ABLATIONS}")
        if self.layers < 1 or self.hidden < 1 or self.heads < 1:
            raise ValueError("layers, hidden and heads must be positive")

    @property
    def use_c(self) -> bool:
        return self.ablation != "no_c"

    @property
    def use_t(self) -> bool:
        return self.ablation != "no_t"

    @property
    def use_attention(self) -> bool:
        return self.use_c and self.use_t and self.ablation != "no_attention"

    @property
    def num_layers(self) -> int:
        return 1 if self.ablation == "single_layer" else self.layers

    def heads_at(self, layer: int) -> int:
        if layer == self.num_layers - 1 or self.ablation == "single_head":
            return 1
        return self.heads


@dataclass
class ForwardArtifacts:
    f_c: list = field(default_factory=list)
    roles: list = field(default_factory=list)
    f_t: list = field(default_factory=list)
    a_c: list = field(default_factory=list)  # per layer, list over heads of n x 1
    a_t: list = field(default_factory=list)
    h: list = field(default_factory=list)
    messages: list = field(default_factory=list)
    pre_classifier: Optional[Tensor] = None
    log_probs: Optional[Tensor] = None


# -- layer primitives ------------------------------------------------------------

def _project(h: Optional[Tensor], w: Tensor) -> Tensor:
    # h is None for identity input features: I @ W == W
    return w if h is None else ag.matmul(h, w)


def c_gcn_forward(adj: NormalizedAdjacency, h: Optional[Tensor], w_c: Tensor) -> Tensor:
    """ReLU(A_hat @ H @ W_c)."""
    return ag.relu(ag.spmm(adj.matrix, _project(h, w_c)))


def t_gcn_forward(roles: RoleAssignment, h: Optional[Tensor], w_t: Tensor,
                  counter: Optional[list] = None) -> tuple[Tensor, Tensor]:
    """Member-to-role mean then role-to-member copy.

    Returns ``(role_embeddings, node_embeddings)``. When ``counter`` is given
    the number of messages sent along belongingness edges is appended to it.
    """
    r = ag.relu(ag.spmm(roles.membership, _project(h, w_t)))
    f_t = ag.spmm(roles.sharing, r)
    if counter is not None:
        counter.append(int(roles.membership.nnz + roles.sharing.nnz))
    return r, f_t


@dataclass
class AttentionHead:
    w_a: Tensor    # d_out x d_a, shared by both branches
    w_q: Tensor    # d_in x d_a, projects the previous unified embedding
    alpha: Tensor  # 2 d_a x 1


def attention_fuse(h_prev: Optional[Tensor], f_c: Tensor, f_t: Tensor, heads: list,
                   slope: float = 0.2) -> tuple[Tensor, list, list]:
    """Pairwise attention between the two branch outputs, one score per node.

    Per head: ``e_j = LeakyReLU(alpha . [W_q h || W_a f_j])`` for j in {c, t},
    softmax over the pair, output ``ELU(a_c W_a f_c + a_t W_a f_t)``. Heads are
    concatenated.
    """
    if f_c.shape != f_t.shape:
        raise ValueError(f"branch shapes differ: {f_c.shape} vs {f_t.shape}")
    if h_prev is not None and h_prev.shape[0] != f_c.shape[0]:
        raise ValueError("row count of the unified embedding differs from the branches")
    outs, acs, ats = [], [], []
    for head in heads:
        q = _project(h_prev, head.w_q)
        g_c = ag.matmul(f_c, head.w_a)
        g_t = ag.matmul(f_t, head.w_a)
        e_c = ag.leaky_relu(ag.matmul(ag.concat_cols([q, g_c]), head.alpha), slope)
        e_t = ag.leaky_relu(ag.matmul(ag.concat_cols([q, g_t]), head.alpha), slope)
        a_c, a_t = ag.softmax_pair(e_c, e_t)
        outs.append(ag.elu(ag.add(ag.mul(g_c, a_c), ag.mul(g_t, a_t))))
        acs.append(a_c)
        ats.append(a_t)
    h = outs[0] if len(outs) == 1 else ag.concat_cols(outs)
    return h, acs, ats


def classify(h_final: Tensor, classifier: Optional[Tensor], normalize: bool = True) -> tuple[Tensor, Tensor]:
    """ELU, optional row L2 normalization, linear map, log-softmax.

    Returns ``(pre_classifier, log_probs)``. With ``classifier=None`` the
    log-softmax is applied to the embedding directly.
    """
    z = ag.elu(h_final)
    if normalize:
        z = ag.l2_normalize_rows(z)
    logits = z if classifier is None else ag.matmul(z, classifier)
    return z, ag.log_softmax_rows(logits)


# -- model -----------------------------------------------------------------------

class DpGcnModel:
    """Parameter container plus forward pass.

    ``in_dim=None`` means identity input features over ``num_nodes`` nodes;
    the identity matrix is never materialized. ``num_classes=None`` drops the
    linear classifier (log-softmax on the final embedding).
    """

    def __init__(self, num_nodes: int, num_classes: Optional[int], config: ModelConfig = None,
                 in_dim: Optional[int] = None, seed: int = 0):
        self.config = config or ModelConfig()
        self.num_nodes = int(num_nodes)
        self.num_classes = num_classes
        self.in_dim = in_dim
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        self._build(np.random.default_rng(seed))

    def _add(self, rng, name, fan_in, fan_out):
        self.params[name] = ag.glorot(rng, fan_in, fan_out, name)

    def _build(self, rng):
        cfg = self.config
        d_in = self.num_nodes if self.in_dim is None else self.in_dim
        for layer in range(cfg.num_layers):
            d = cfg.hidden
            if cfg.use_c:
                self._add(rng, f"l{layer}.w_c", d_in, d)
            if cfg.use_t:
                self._add(rng, f"l{layer}.w_t", d_in, d)
            if cfg.use_attention:
                for k in range(cfg.heads_at(layer)):
                    self._add(rng, f"l{layer}.h{k}.w_a", d, d)
                    self._add(rng, f"l{layer}.h{k}.w_q", d_in, d)
                    self._add(rng, f"l{layer}.h{k}.alpha", 2 * d, 1)
                d_in = d * cfg.heads_at(layer)
            else:
                d_in = d
        self.out_dim = d_in
        if self.num_classes is not None:
            self._add(rng, "classifier", d_in, self.num_classes)

    def heads(self, layer: int) -> list:
        return [AttentionHead(self.params[f"l{layer}.h{k}.w_a"], self.params[f"l{layer}.h{k}.w_q"],
                              self.params[f"l{layer}.h{k}.alpha"])
                for k in range(self.config.heads_at(layer))]

    def num_parameters(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def forward(self, adj: NormalizedAdjacency, roles: Optional[RoleAssignment],
                features: Optional[np.ndarray] = None, training: bool = False,
                rng: Optional[np.random.Generator] = None) -> ForwardArtifacts:
        cfg = self.config
        if adj.shape[0] != self.num_nodes:
            raise ValueError(f"model built for {self.num_nodes} nodes, graph has {adj.shape[0]}")
        if cfg.use_t:
            if roles is None:
                raise ValueError("role path enabled but no RoleAssignment given")
            if roles.num_nodes != self.num_nodes:
                raise ValueError(f"roles cover {roles.num_nodes} nodes, model has {self.num_nodes}")
        if features is None:
            if self.in_dim is not None:
                raise ValueError("model expects explicit input features")
            h = None
        else:
            features = np.asarray(features, dtype=np.float64)
            if features.shape != (self.num_nodes, self.in_dim or self.num_nodes):
                raise ValueError(f"feature matrix shape {features.shape} does not match the model")
            h = Tensor(features)
        drop = cfg.dropout if training else 0.0
        rng = rng or np.random.default_rng(self.seed)
        art = ForwardArtifacts()
        for layer in range(cfg.num_layers):
            if h is not None and drop:
                h = ag.dropout(h, drop, rng)
            f_c = c_gcn_forward(adj, h, self.params[f"l{layer}.w_c"]) if cfg.use_c else None
            r = f_t = None
            if cfg.use_t:
                r, f_t = t_gcn_forward(roles, h, self.params[f"l{layer}.w_t"], art.messages)
            if cfg.use_attention:
                h, acs, ats = attention_fuse(h, f_c, f_t, self.heads(layer), cfg.leaky_slope)
            elif f_c is not None and f_t is not None:
                h, acs, ats = ag.scale(ag.add(f_c, f_t), 0.5), [], []
            else:
                h, acs, ats = (f_c if f_t is None else f_t), [], []
            art.f_c.append(f_c)
            art.roles.append(r)
            art.f_t.append(f_t)
            art.a_c.append(acs)
            art.a_t.append(ats)
            art.h.append(h)
        if drop:
            h = ag.dropout(h, drop, rng)
        art.pre_classifier, art.log_probs = classify(h, self.params.get("classifier"), cfg.normalize)
        return art

    # -- persistence ----------------------------------------------------------

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self.params.items()}

    def load_state(self, state: dict) -> None:
        for k, p in self.params.items():
            v = np.asarray(state[k], dtype=np.float64)
            if v.shape != p.value.shape:
                raise ValueError(f"parameter {k}: checkpoint shape {v.shape} != model {p.value.shape}")
            p.value = v.copy()

    def metadata(self) -> dict:
        return {"version": CHECKPOINT_VERSION, "num_nodes": self.num_nodes,
                "num_classes": self.num_classes, "in_dim": self.in_dim, "seed": self.seed,
                "config": asdict(self.config)}

    def save(self, path, extra: Optional[dict] = None, arrays: Optional[dict] = None) -> None:
        meta = self.metadata()
        meta["extra"] = extra or {}
        payload = {f"param/{k}": v for k, v in self.state().items()}
        for k, v in (arrays or {}).items():
            payload[f"array/{k}"] = np.asarray(v)
        payload["meta"] = np.array(json.dumps(meta, sort_keys=True))
        with open(path, "wb") as fh:
            np.savez(fh, **payload)

    @classmethod
    def load(cls, path) -> tuple["DpGcnModel", dict, dict]:
        """Returns ``(model, metadata, extra_arrays)``."""
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            if meta.get("version") != CHECKPOINT_VERSION:
                raise ValueError(f"unsupported checkpoint version {meta.get('version')}")
            model = cls(meta["num_nodes"], meta["num_classes"], ModelConfig(**meta["config"]),
                        meta["in_dim"], meta["seed"])
            model.load_state({k[6:]: z[k] for k in z.files if k.startswith("param/")})
            arrays = {k[6:]: z[k] for k in z.files if k.startswith("array/")}
        return model, meta, arrays


def full_forward(graph: Graph, roles: Optional[RoleAssignment], features, model: DpGcnModel,
                 adj: Optional[NormalizedAdjacency] = None) -> ForwardArtifacts:
    return model.forward(adj or normalize_adjacency(graph), roles, features)


def predict(model: DpGcnModel, adj: NormalizedAdjacency, roles, features=None) -> np.ndarray:
    return model.forward(adj, roles, features).log_probs.value.argmax(1)
