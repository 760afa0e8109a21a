import json
import logging

import numpy as np
import pytest

from dpgcn.datasets import (KARATE_EDGES, PUBLIC_SOURCES, fetch_public, generate_imbalanced_seller_graph,
                            generate_karate, generate_mirrored_karate, generate_planted_roles,
                            generate_two_cliques, load_dataset, load_edgelist_dataset, load_public,
                            public_available, write_manifest)
from dpgcn.experiments import RoleConfig, default_roles, run_once
from dpgcn.graph import ParseError
from dpgcn.metrics import constant_predictor_report
from dpgcn.model import ModelConfig
from dpgcn.roles import extract_struct_features
from dpgcn.trainer import TrainConfig


def _same(a, b):
    np.testing.assert_array_equal(a.graph.edges, b.graph.edges)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert a.provenance == b.provenance


def test_karate_counts():
    b = generate_karate()
    assert (b.graph.num_nodes, b.graph.num_edges, b.num_classes) == (34, 78, 2)
    assert len(set(map(tuple, map(sorted, KARATE_EDGES)))) == 78


def test_mirrored_karate():
    b = generate_mirrored_karate()
    mirror = b.extra["mirror_map"]
    assert (b.graph.num_nodes, b.graph.num_edges) == (68, 156)
    np.testing.assert_array_equal(b.graph.degrees, b.graph.degrees[mirror])
    assert not ((b.graph.edges < 34).any(1) & (b.graph.edges >= 34).any(1)).any()
    f = extract_struct_features(b.graph).matrix
    np.testing.assert_array_equal(f, f[mirror])


def test_planted_stars():
    b = generate_planted_roles(10, ("star",), 6, seed=3)
    assert b.graph.num_nodes == 60
    hub = b.extra["true_role"] == 0
    assert hub.sum() == 10 and (~hub).sum() == 50
    f = extract_struct_features(b.graph).matrix
    assert np.unique(f, axis=0).shape[0] == 2
    assert (f[hub] == f[hub][0]).all() and (f[~hub] == f[~hub][0]).all()


def test_planted_stars_hub_leaf_separated():
    b = generate_planted_roles(10, ("star",), 6, seed=3)
    roles = default_roles(b, RoleConfig(k=4))
    res = run_once(b, roles, ModelConfig(hidden=16, heads=2), TrainConfig(epochs=200))
    assert res.accuracy == 1.0


def test_planted_labels_by_motif():
    b = generate_planted_roles(6, seed=1, label_by="motif")
    assert b.num_classes == 3
    with pytest.raises(ValueError):
        generate_planted_roles(label_by="x")


@pytest.mark.parametrize("make", [lambda s: generate_planted_roles(seed=s),
                                  lambda s: generate_imbalanced_seller_graph(800, seed=s)])
def test_generators_deterministic(make):
    _same(make(4), make(4))
    assert not np.array_equal(make(4).graph.edges, make(5).graph.edges) or \
        not np.array_equal(make(4).labels, make(5).labels)


def test_two_cliques():
    b = generate_two_cliques()
    assert (b.graph.num_nodes, b.graph.num_edges) == (10, 21)


def test_seller_graph_counts():
    b = generate_imbalanced_seller_graph(10_000, 0.02, seed=0)
    assert b.graph.num_nodes == 10_000
    assert (b.labels == 1).sum() == 200
    assert (b.graph.degrees > 0).all()
    const = constant_predictor_report(b.labels)
    assert const.macro_f1 == pytest.approx(0.5 * const.f1[0])


def test_seller_rejects_bad_fraction():
    with pytest.raises(ValueError):
        generate_imbalanced_seller_graph(100, 0.6)


def _write(tmp_path, edges, labels):
    e, l = tmp_path / "g.edgelist", tmp_path / "labels.txt"
    e.write_text(edges)
    l.write_text(labels)
    return e, l


def test_loader_remaps_ids(tmp_path):
    e, l = _write(tmp_path, "10 20\n20 30\n", "node label\n10 5\n30 7\n40 5\n")
    b = load_edgelist_dataset(e, l)
    assert b.node_ids.tolist() == [10, 20, 30, 40]
    assert b.labels.tolist() == [0, -1, 1, 0]
    assert b.graph.num_edges == 2 and b.graph.degrees[3] == 0


def test_loader_expected_stats_warning(tmp_path, caplog):
    e, l = _write(tmp_path, "0 1\n", "0 0\n1 1\n")
    with caplog.at_level(logging.WARNING):
        b = load_edgelist_dataset(e, l, name="brazil")
    assert any("expected 131" in w for w in b.provenance["warnings"])
    assert "expected 1074" in caplog.text


def test_loader_malformed_line(tmp_path):
    e, l = _write(tmp_path, "0 1\n2 3\nfoo bar\n", "")
    with pytest.raises(ParseError) as ei:
        load_edgelist_dataset(e, l)
    assert ei.value.lineno == 3


def test_manifest(tmp_path):
    e, l = _write(tmp_path, "0 1\n1 2\n", "0 0\n1 1\n2 0\n")
    b = load_edgelist_dataset(e, l, name="euro")
    man = write_manifest(b, tmp_path / "m.json")
    assert json.loads((tmp_path / "m.json").read_text()) == man
    assert man["expected"] == {"nodes": 399, "edges": 5995, "classes": 3}
    assert len(man["provenance"]["edges_sha256"]) == 64
    assert load_dataset(str(tmp_path / "m.json")).stats() == b.stats()


def test_fetch_public_from_file_urls(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    e, l = _write(src, "0 1\n1 2\n", "0 0\n1 1\n2 2\n")
    sources = {"brazil": (e.as_uri(), l.as_uri())}
    cache = tmp_path / "cache"
    fetch_public("brazil", cache, sources)
    assert [p.name for p in sorted(cache.iterdir())] == ["g.edgelist", "labels.txt"]
    assert set(PUBLIC_SOURCES) == {"brazil", "euro", "usa"}


def test_load_public_missing(tmp_path):
    assert not public_available("brazil", tmp_path)
    with pytest.raises(FileNotFoundError, match="fetch_datasets"):
        load_public("brazil", tmp_path)


def test_load_dataset_generators():
    assert load_dataset("two-cliques").graph.num_nodes == 10
    assert load_dataset("planted-roles", seed=2, params={"num_communities": 3}).graph.num_nodes == 18
