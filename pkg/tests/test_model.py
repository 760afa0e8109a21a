import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dpgcn import autograd as ag
from dpgcn.datasets import generate_mirrored_karate
from dpgcn.graph import build_graph, normalize_adjacency
from dpgcn.model import (ABLATIONS, AttentionHead, DpGcnModel, ModelConfig, attention_fuse,
                         c_gcn_forward, classify, full_forward, t_gcn_forward)
from dpgcn.roles import build_membership
from oracles import central_diff, plain_gcn_log_probs, rel_err


def random_case(n=10, p=0.3, roles=3, seed=0):
    rng = np.random.default_rng(seed)
    edges = [(i, j) for i in range(n) for j in range(i + 1, n) if rng.random() < p]
    g = build_graph(edges, n)
    member = np.arange(n) % roles
    rng.shuffle(member)
    labels = rng.integers(0, 3, size=n)
    return g, normalize_adjacency(g), build_membership(member), labels


def fd_check(model, adj, roles, labels, features=None):
    """Largest per-parameter relative error between tape and finite-difference gradients."""
    mask = np.ones(len(labels), bool)

    def loss_value():
        return ag.nll_loss(model.forward(adj, roles, features).log_probs, labels, mask).item()

    with ag.Tape() as tape:
        loss = ag.nll_loss(model.forward(adj, roles, features).log_probs, labels, mask)
    tape.backward(loss)
    worst = 0.0
    for p in model.params.values():
        worst = max(worst, rel_err(p.grad, central_diff(loss_value, p.value)))
    return worst


K3 = build_graph([(0, 1), (1, 2), (0, 2)], 3)


def test_c_gcn_identity_propagation():
    adj = normalize_adjacency(build_graph([], 4))
    w = ag.Tensor(np.random.default_rng(0).normal(size=(4, 3)))
    np.testing.assert_array_equal(c_gcn_forward(adj, ag.Tensor(np.eye(4)), w).value,
                                  np.maximum(w.value, 0))


def test_c_gcn_k3_rows_are_means():
    adj = normalize_adjacency(K3)
    h = ag.Tensor([[3.0], [0.0], [6.0]])
    out = c_gcn_forward(adj, h, ag.Tensor([[1.0]])).value
    np.testing.assert_allclose(out, [[3.0]] * 3, rtol=1e-15)


def test_t_gcn_mean_then_share():
    roles = build_membership([0, 0])
    r, f_t = t_gcn_forward(roles, ag.Tensor([[2.0], [4.0]]), ag.Tensor([[1.0]]))
    assert r.value.tolist() == [[3.0]]
    assert f_t.value.tolist() == [[3.0], [3.0]]


@pytest.mark.parametrize("n,p", [(12, 0.1), (12, 0.9), (40, 0.05)])
def test_t_path_messages_are_2n(n, p):
    _, adj, roles, _ = random_case(n, p, roles=4)
    art = DpGcnModel(n, 3, ModelConfig(hidden=4, heads=2)).forward(adj, roles)
    assert art.messages == [2 * n, 2 * n]


def test_attention_identical_branches_reduce_to_single_branch():
    rng = np.random.default_rng(1)
    f = ag.Tensor(rng.normal(size=(5, 3)))
    head = AttentionHead(ag.Tensor(rng.normal(size=(3, 3))), ag.Tensor(rng.normal(size=(4, 3))),
                         ag.Tensor(rng.normal(size=(6, 1))))
    h, acs, ats = attention_fuse(ag.Tensor(rng.normal(size=(5, 4))), f, f, [head])
    np.testing.assert_allclose(acs[0].value, 0.5, rtol=0, atol=0)
    np.testing.assert_allclose(h.value, ag.elu(ag.matmul(f, head.w_a)).value, rtol=1e-14)


def test_attention_weights_sum_to_one_every_layer_and_head():
    _, adj, roles, _ = random_case(15, 0.2)
    art = DpGcnModel(15, 3, ModelConfig(hidden=5, layers=3, heads=3), seed=4).forward(adj, roles)
    for acs, ats in zip(art.a_c, art.a_t):
        for a, b in zip(acs, ats):
            assert np.abs(a.value + b.value - 1).max() < 1e-12


def test_attention_alpha_gradient():
    rng = np.random.default_rng(2)
    f_c, f_t, hp = (ag.Tensor(rng.normal(size=(6, 3))) for _ in range(3))
    head = AttentionHead(ag.Tensor(rng.normal(size=(3, 3))), ag.Tensor(rng.normal(size=(3, 3))),
                         ag.parameter(rng.normal(size=(6, 1))))
    r = rng.normal(size=(6, 3))

    def value():
        return float((attention_fuse(hp, f_c, f_t, [head])[0].value * r).sum())

    with ag.Tape() as tape:
        loss = ag.total(ag.mul(attention_fuse(hp, f_c, f_t, [head])[0], ag.Tensor(r)))
    tape.backward(loss)
    assert rel_err(head.alpha.grad, central_diff(value, head.alpha.value)) < 1e-7


def test_classifier_rows_unit_norm_and_probabilities():
    rng = np.random.default_rng(3)
    h = rng.normal(size=(8, 5))
    h[2] = 0.0
    z, lp = classify(ag.Tensor(h), ag.Tensor(rng.normal(size=(5, 3))))
    norms = np.linalg.norm(z.value, axis=1)
    assert norms[2] == 0
    assert np.all(np.abs(np.delete(norms, 2) - 1) < 1e-12)
    assert np.all(np.abs(np.exp(lp.value).sum(1) - 1) < 1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.01, 100))
def test_argmax_invariant_to_positive_scaling(seed, c):
    # ELU is the identity on positive inputs, so scaling reaches the L2 step unchanged
    rng = np.random.default_rng(seed)
    h = rng.uniform(0.01, 3, size=(6, 4))
    w = ag.Tensor(rng.normal(size=(4, 3)))
    a = classify(ag.Tensor(h), w)[1].value.argmax(1)
    b = classify(ag.Tensor(c * h), w)[1].value.argmax(1)
    np.testing.assert_array_equal(a, b)


def test_no_t_equals_plain_gcn():
    g, adj, _, _ = random_case(12, 0.25)
    model = DpGcnModel(12, 3, ModelConfig(hidden=6, ablation="no_t"), seed=7)
    got = model.forward(adj, None).log_probs.value
    ref = plain_gcn_log_probs(adj.toarray(), [model.params["l0.w_c"].value, model.params["l1.w_c"].value],
                              model.params["classifier"].value)
    np.testing.assert_allclose(got, ref, rtol=0, atol=1e-12)


@pytest.mark.parametrize("ablation", ABLATIONS)
def test_end_to_end_gradients(ablation):
    _, adj, roles, labels = random_case(10, 0.3, seed=11)
    model = DpGcnModel(10, 3, ModelConfig(hidden=4, heads=2, ablation=ablation), seed=5)
    assert fd_check(model, adj, roles, labels) < 1e-5


def test_end_to_end_gradients_explicit_features():
    _, adj, roles, labels = random_case(16, 0.2, roles=4, seed=12)
    feats = np.random.default_rng(0).normal(size=(16, 5))
    model = DpGcnModel(16, 3, ModelConfig(hidden=3, heads=2), in_dim=5, seed=6)
    assert fd_check(model, adj, roles, labels, feats) < 1e-5


def test_role_sharing_exact_every_layer():
    _, adj, roles, _ = random_case(20, 0.2, roles=4)
    art = DpGcnModel(20, 3, ModelConfig(hidden=5, layers=3, heads=2), seed=1).forward(adj, roles)
    for f_t in art.f_t:
        for r in range(roles.num_roles):
            rows = f_t.value[roles.member_of == r]
            assert (rows == rows[0]).all()


def test_mirror_karate_t_path_and_no_c_embeddings():
    b = generate_mirrored_karate()
    adj = normalize_adjacency(b.graph)
    roles = build_membership(b.extra["mirror_roles"])
    mirror = b.extra["mirror_map"]
    art = DpGcnModel(68, None, ModelConfig(hidden=10), seed=3).forward(adj, roles)
    for f_t in art.f_t:
        np.testing.assert_array_equal(f_t.value, f_t.value[mirror])
    art = DpGcnModel(68, None, ModelConfig(hidden=10, ablation="no_c"), seed=3).forward(adj, roles)
    np.testing.assert_array_equal(art.h[-1].value, art.h[-1].value[mirror])


def test_layer_widths():
    _, adj, roles, _ = random_case(10)
    m = DpGcnModel(10, 3, ModelConfig(hidden=4, layers=3, heads=3))
    art = m.forward(adj, roles)
    assert [h.shape[1] for h in art.h] == [12, 12, 4]
    assert m.out_dim == 4
    single = DpGcnModel(10, 3, ModelConfig(hidden=4, heads=3, ablation="single_head"))
    assert single.forward(adj, roles).h[0].shape[1] == 4
    assert len(DpGcnModel(10, 3, ModelConfig(ablation="single_layer")).forward(adj, roles).h) == 1


def test_no_attention_is_branch_mean():
    _, adj, roles, _ = random_case(10)
    art = DpGcnModel(10, 3, ModelConfig(hidden=4, layers=1, ablation="no_attention")).forward(adj, roles)
    np.testing.assert_allclose(art.h[0].value, 0.5 * (art.f_c[0].value + art.f_t[0].value), rtol=1e-15)


def test_forward_dimension_errors():
    _, adj, roles, _ = random_case(10)
    with pytest.raises(ValueError, match="nodes"):
        DpGcnModel(11, 3).forward(adj, roles)
    with pytest.raises(ValueError, match="role"):
        DpGcnModel(10, 3).forward(adj, None)
    with pytest.raises(ValueError):
        ModelConfig(ablation="bogus")


def test_forward_deterministic():
    g, adj, roles, _ = random_case(10)
    a = full_forward(g, roles, None, DpGcnModel(10, 3, seed=9)).log_probs.value
    b = full_forward(g, roles, None, DpGcnModel(10, 3, seed=9)).log_probs.value
    np.testing.assert_array_equal(a, b)


def test_checkpoint_roundtrip(tmp_path):
    _, adj, roles, _ = random_case(10)
    m = DpGcnModel(10, 3, ModelConfig(hidden=4, heads=2, ablation="no_attention"), seed=2)
    path = tmp_path / "ck.npz"
    m.save(path, extra={"dataset": "x"}, arrays={"member_of": roles.member_of})
    m2, meta, arrays = DpGcnModel.load(path)
    assert meta["extra"] == {"dataset": "x"}
    np.testing.assert_array_equal(arrays["member_of"], roles.member_of)
    np.testing.assert_array_equal(m.forward(adj, roles).log_probs.value,
                                  m2.forward(adj, roles).log_probs.value)


def test_load_state_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        DpGcnModel(10, 3).load_state(DpGcnModel(11, 3).state())
