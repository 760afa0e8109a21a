"""Public-network loaders and deterministic synthetic fixtures."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .graph import Graph, build_graph, read_edge_list, read_labels

log = logging.getLogger(__name__)

# (nodes, edges, classes) as published for the public benchmarks
EXPECTED_STATS = {
    "euro": (399, 5995, 3),
    "brazil": (131, 1074, 3),
    "usa": (1190, 13599, 3),
    "ba": (804, 46410, 5),
    "cora": (2708, 5429, 7),
}

_S2V = "https://raw.githubusercontent.com/leoribeiro/struc2vec/master/graph"
PUBLIC_SOURCES = {
    "brazil": (f"{_S2V}/brazil-airports.edgelist", f"{_S2V}/labels-brazil-airports.txt"),
    "euro": (f"{_S2V}/europe-airports.edgelist", f"{_S2V}/labels-europe-airports.txt"),
    "usa": (f"{_S2V}/usa-airports.edgelist", f"{_S2V}/labels-usa-airports.txt"),
}

# Zachary's karate club, 34 nodes / 78 edges, with the post-split club (0 = instructor's)
KARATE_EDGES = [
    (0, 1), (0, 2), (0, 3), (0, 4), (0, 5), (0, 6), (0, 7), (0, 8), (0, 10), (0, 11),
    (0, 12), (0, 13), (0, 17), (0, 19), (0, 21), (0, 31), (1, 2), (1, 3), (1, 7), (1, 13),
    (1, 17), (1, 19), (1, 21), (1, 30), (2, 3), (2, 7), (2, 8), (2, 9), (2, 13), (2, 27),
    (2, 28), (2, 32), (3, 7), (3, 12), (3, 13), (4, 6), (4, 10), (5, 6), (5, 10), (5, 16),
    (6, 16), (8, 30), (8, 32), (8, 33), (9, 33), (13, 33), (14, 32), (14, 33), (15, 32),
    (15, 33), (18, 32), (18, 33), (19, 33), (20, 32), (20, 33), (22, 32), (22, 33),
    (23, 25), (23, 27), (23, 29), (23, 32), (23, 33), (24, 25), (24, 27), (24, 31),
    (25, 31), (26, 29), (26, 33), (27, 33), (28, 31), (28, 33), (29, 32), (29, 33),
    (30, 32), (30, 33), (31, 32), (31, 33), (32, 33),
]
KARATE_CLUB = [0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 1, 0, 0, 1, 0, 1, 0, 1, 1,
               1, 1, 1, 1, 1, 1, 1, 1, 1, 1]


@dataclass
class DatasetBundle:
    graph: Graph
    labels: np.ndarray
    name: str
    provenance: dict
    node_ids: Optional[np.ndarray] = None  # original ids of dense nodes 0..n-1
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.node_ids is None:
            self.node_ids = np.arange(self.graph.num_nodes)
        if self.graph.node_labels is None:
            self.graph = self.graph.with_labels(self.labels)

    @property
    def num_classes(self) -> int:
        lab = self.labels[self.labels >= 0]
        return int(lab.max()) + 1 if lab.size else 0

    def stats(self) -> dict:
        return {"nodes": self.graph.num_nodes, "edges": self.graph.num_edges,
                "classes": self.num_classes}


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def check_expected(name: Optional[str], stats: dict) -> list[str]:
    """Warnings for mismatches against the published statistics of a known dataset."""
    if not name or name.lower() not in EXPECTED_STATS:
        return []
    exp = dict(zip(("nodes", "edges", "classes"), EXPECTED_STATS[name.lower()]))
    out = []
    for k, v in exp.items():
        if stats[k] != v:
            msg = f"{name}: observed {stats[k]} {k}, expected {v}"
            log.warning(msg)
            out.append(msg)
    return out


def load_edgelist_dataset(edge_path, label_path=None, name: Optional[str] = None) -> DatasetBundle:
    """Load an edge list (+ optional labels), remapping raw ids to dense ``0..n-1``.

    Raw ids are sorted; nodes that appear only in the label file are kept as
    isolated nodes. Nodes without a label get -1.
    """
    raw_edges = read_edge_list(edge_path)
    raw_labels = read_labels(label_path) if label_path else {}
    ids = np.unique(np.concatenate([raw_edges.ravel(),
                                    np.fromiter(raw_labels.keys(), dtype=np.int64)]))
    if ids.size == 0:
        raise ValueError(f"{edge_path}: no nodes found")
    remap = {int(v): i for i, v in enumerate(ids)}
    edges = np.vectorize(remap.__getitem__, otypes=[np.int64])(raw_edges) if raw_edges.size \
        else raw_edges
    g = build_graph(edges, ids.size)
    labels = np.full(ids.size, -1, dtype=np.int64)
    if raw_labels:
        uniq = sorted(set(raw_labels.values()))
        lab_map = {v: i for i, v in enumerate(uniq)}
        for node, lab in raw_labels.items():
            labels[remap[node]] = lab_map[lab]
    prov = {"edges": str(edge_path), "labels": str(label_path) if label_path else None,
            "edges_sha256": sha256(edge_path),
            "labels_sha256": sha256(label_path) if label_path else None}
    bundle = DatasetBundle(g, labels, name or Path(edge_path).stem, prov, ids)
    bundle.provenance["warnings"] = check_expected(name, bundle.stats())
    return bundle


def data_dir() -> Path:
    return Path(os.environ.get("DPGCN_DATA", Path.home() / ".cache" / "dpgcn"))


def public_paths(name: str, root=None) -> tuple[Path, Path]:
    root = Path(root) if root else data_dir()
    edge_url, label_url = PUBLIC_SOURCES[name]
    return root / Path(edge_url).name, root / Path(label_url).name


def public_available(name: str, root=None) -> bool:
    return name in PUBLIC_SOURCES and all(p.exists() for p in public_paths(name, root))


def load_public(name: str, root=None) -> DatasetBundle:
    e, l = public_paths(name, root)
    if not (e.exists() and l.exists()):
        raise FileNotFoundError(
            f"{name} files not found under {e.parent}; run scripts/fetch_datasets.py or set DPGCN_DATA")
    return load_edgelist_dataset(e, l, name)


def fetch_public(name: str, root=None, sources: Optional[dict] = None) -> tuple[Path, Path]:
    """Download a public dataset into the cache directory (skips files already present)."""
    root = Path(root) if root else data_dir()
    root.mkdir(parents=True, exist_ok=True)
    urls = (sources or PUBLIC_SOURCES)[name]
    out = []
    for url in urls:
        dest = root / Path(url).name
        if not dest.exists():
            tmp = dest.with_suffix(dest.suffix + ".part")
            with urllib.request.urlopen(url, timeout=60) as r, open(tmp, "wb") as fh:
                fh.write(r.read())
            os.replace(tmp, dest)
        out.append(dest)
    return out[0], out[1]


def write_manifest(bundle: DatasetBundle, path) -> dict:
    man = {"name": bundle.name, "provenance": bundle.provenance, "stats": bundle.stats()}
    if bundle.name.lower() in EXPECTED_STATS:
        man["expected"] = dict(zip(("nodes", "edges", "classes"), EXPECTED_STATS[bundle.name.lower()]))
    Path(path).write_text(json.dumps(man, indent=2, sort_keys=True), encoding="utf-8")
    return man


# -- generators ------------------------------------------------------------

def generate_karate() -> DatasetBundle:
    g = build_graph(KARATE_EDGES, 34)
    return DatasetBundle(g, np.array(KARATE_CLUB), "karate", {"generator": "karate"})


def generate_mirrored_karate() -> DatasetBundle:
    """Two disjoint copies of the karate club; node i mirrors node i + 34.

    ``extra["mirror_map"]`` maps every node to its mirror and
    ``extra["mirror_roles"]`` puts each mirror pair in its own role.
    """
    e = np.asarray(KARATE_EDGES)
    g = build_graph(np.vstack([e, e + 34]), 68)
    mirror = np.concatenate([np.arange(34, 68), np.arange(34)])
    roles = np.concatenate([np.arange(34), np.arange(34)])
    labels = np.concatenate([KARATE_CLUB, KARATE_CLUB])
    return DatasetBundle(g, labels, "mirrored-karate", {"generator": "mirrored-karate"},
                         extra={"mirror_map": mirror, "mirror_roles": roles})


MOTIFS = ("star", "ring", "clique")
# ground-truth structural role ids used as labels when label_by="role"
ROLE_IDS = {"star_hub": 0, "star_leaf": 1, "ring": 2, "clique": 3}


def generate_planted_roles(num_communities: int = 12, motif_mix: Sequence[str] = MOTIFS,
                           motif_size: int = 6, seed: int = 0, label_by: str = "role") -> DatasetBundle:
    """Disjoint motif communities (star / ring / clique of ``motif_size`` nodes).

    Community ``c`` gets motif ``motif_mix[c % len(motif_mix)]``; node order
    inside the graph is shuffled by ``seed``. ``label_by="role"`` labels nodes
    by structural role (star hub, star leaf, ring, clique), ``"motif"`` by the
    community's motif type.
    """
    if motif_size < 3:
        raise ValueError("motif_size must be >= 3")
    for m in motif_mix:
        if m not in MOTIFS:
            raise ValueError(f"unknown motif {m!r}")
    edges, role, motif = [], [], []
    base = 0
    for c in range(num_communities):
        kind = motif_mix[c % len(motif_mix)]
        nodes = list(range(base, base + motif_size))
        if kind == "star":
            edges += [(nodes[0], v) for v in nodes[1:]]
            role += ["star_hub"] + ["star_leaf"] * (motif_size - 1)
        elif kind == "ring":
            edges += [(nodes[i], nodes[(i + 1) % motif_size]) for i in range(motif_size)]
            role += ["ring"] * motif_size
        else:
            edges += [(u, v) for i, u in enumerate(nodes) for v in nodes[i + 1:]]
            role += ["clique"] * motif_size
        motif += [kind] * motif_size
        base += motif_size
    n = base
    perm = np.random.default_rng(seed).permutation(n)
    edges = perm[np.asarray(edges)]
    role_ids = np.empty(n, dtype=np.int64)
    motif_ids = np.empty(n, dtype=np.int64)
    role_ids[perm] = [ROLE_IDS[r] for r in role]
    motif_ids[perm] = [MOTIFS.index(m) for m in motif]
    if label_by == "role":
        _, labels = np.unique(role_ids, return_inverse=True)
    elif label_by == "motif":
        _, labels = np.unique(motif_ids, return_inverse=True)
    else:
        raise ValueError("label_by must be 'role' or 'motif'")
    params = {"generator": "planted-roles", "num_communities": num_communities,
              "motif_mix": list(motif_mix), "motif_size": motif_size, "seed": seed,
              "label_by": label_by}
    return DatasetBundle(build_graph(edges, n), labels.astype(np.int64), "planted-roles", params,
                         extra={"true_role": role_ids, "motif": motif_ids})


def generate_two_cliques(size: int = 5) -> DatasetBundle:
    """Two ``size``-cliques joined by one edge; label = clique id."""
    a = [(u, v) for u in range(size) for v in range(u + 1, size)]
    b = [(u + size, v + size) for u, v in a]
    g = build_graph(a + b + [(size - 1, size)], 2 * size)
    labels = np.repeat([0, 1], size)
    return DatasetBundle(g, labels, "two-cliques", {"generator": "two-cliques", "size": size})


def generate_imbalanced_seller_graph(n: int = 10_000, risky_fraction: float = 0.02, seed: int = 0,
                                     seller_fraction: float = 0.3,
                                     camouflage: float = 0.02) -> DatasetBundle:
    """Seller/buyer transaction graph with a small planted class of risky sellers.

    Normal sellers trade mostly with repeat buyers drawn from a heavy-tailed
    popularity distribution. Risky sellers show a fan-in burst: most of their
    buyers are one-off accounts that trade with nobody else. A ``camouflage``
    fraction of normal sellers shows the same burst pattern, so structure
    alone cannot be perfect. Every node is labeled; label 1 marks the
    ``round(n * risky_fraction)`` risky sellers.
    """
    if not 0 < risky_fraction < 0.5:
        raise ValueError("risky_fraction must lie in (0, 0.5)")
    rng = np.random.default_rng(seed)
    num_sellers = int(round(n * seller_fraction))
    num_risky = int(round(n * risky_fraction))
    if num_risky > num_sellers or num_sellers >= n:
        raise ValueError("inconsistent seller/risky fractions for this n")
    num_buyers = n - num_sellers
    picked = rng.choice(num_sellers, num_sellers, replace=False)
    risky = np.zeros(num_sellers, bool)
    risky[picked[:num_risky]] = True
    bursty = risky.copy()
    num_camo = int(round(camouflage * (num_sellers - num_risky)))
    bursty[picked[num_risky:num_risky + num_camo]] = True

    # buyer ids num_sellers..n-1; reserve a tail of one-off buyers for bursts
    burst_sizes = rng.integers(8, 16, size=int(bursty.sum()))
    one_off_pool = min(int(burst_sizes.sum()) + num_sellers, num_buyers // 2)
    regular = np.arange(num_sellers, n - one_off_pool)
    one_off = list(range(n - one_off_pool, n))
    popularity = 1.0 / np.arange(1, regular.size + 1) ** 0.8
    popularity /= popularity.sum()

    edges = []
    burst_iter = iter(burst_sizes)
    for s in range(num_sellers):
        if bursty[s]:
            k = next(burst_iter)
            fresh = [one_off.pop() for _ in range(min(k, len(one_off)))]
            edges += [(s, b) for b in fresh]
            edges += [(s, int(b)) for b in rng.choice(regular, 1, p=popularity)]
        else:
            k = int(rng.integers(3, 16))
            edges += [(s, int(b)) for b in rng.choice(regular, k, replace=False, p=popularity)]
            if one_off and rng.random() < 0.3:
                edges.append((s, one_off.pop()))
    # leftover one-off buyers and untouched regular buyers trade once with a normal seller
    normal = np.nonzero(~bursty)[0]
    touched = np.zeros(n, bool)
    touched[np.asarray(edges).ravel()] = True
    for b in np.nonzero(~touched[num_sellers:])[0] + num_sellers:
        edges.append((int(rng.choice(normal)), int(b)))

    labels = np.zeros(n, dtype=np.int64)
    labels[np.nonzero(risky)[0]] = 1
    kind = np.zeros(n, dtype=np.int64)
    kind[num_sellers:] = 1
    params = {"generator": "imbalanced-sellers", "n": n, "risky_fraction": risky_fraction,
              "seller_fraction": seller_fraction, "camouflage": camouflage, "seed": seed}
    return DatasetBundle(build_graph(edges, n), labels, "imbalanced-sellers", params,
                         extra={"is_buyer": kind})


GENERATORS = {
    "karate": lambda **kw: generate_karate(),
    "mirrored-karate": lambda **kw: generate_mirrored_karate(),
    "planted-roles": lambda seed=0, **kw: generate_planted_roles(seed=seed, **kw),
    "two-cliques": lambda seed=0, **kw: generate_two_cliques(**kw),
    "imbalanced-sellers": lambda seed=0, **kw: generate_imbalanced_seller_graph(seed=seed, **kw),
}


def load_dataset(ref: str, seed: int = 0, params: Optional[dict] = None) -> DatasetBundle:
    """Resolve a dataset reference: a generator name, a public dataset name,
    a manifest JSON path, or ``edges.txt[,labels.txt]``."""
    params = params or {}
    if ref in GENERATORS:
        return GENERATORS[ref](seed=seed, **params)
    if ref in PUBLIC_SOURCES:
        return load_public(ref)
    p = Path(ref.split(",")[0])
    if p.suffix == ".json" and p.exists():
        man = json.loads(p.read_text(encoding="utf-8"))
        prov = man["provenance"]
        if "generator" in prov:
            kw = {k: v for k, v in prov.items() if k not in ("generator", "seed")}
            return GENERATORS[prov["generator"]](seed=prov.get("seed", seed), **kw)
        return load_edgelist_dataset(prov["edges"], prov.get("labels"), man.get("name"))
    parts = ref.split(",")
    if not Path(parts[0]).exists():
        raise FileNotFoundError(f"unknown dataset reference {ref!r}")
    return load_edgelist_dataset(parts[0], parts[1] if len(parts) > 1 else None)
