import numpy as np
import pytest
from hypothesis import given, strategies as st

from ngwn_sentinel.data_ingest import SynthConfig, synth_traffic
from ngwn_sentinel.sids_irf import (
    AllZero, DecisionTree, EmptyDataset, FeaturePools, Forest, GrowthState, SignatureDB,
    SignaturePattern, Triage, UnverifiedPattern, classify_triage, feature_weights, ingest_signatures,
    load_forest, node_factor, partition_features, promote_features, prune_unimportant, refine_forest,
    save_forest, train_forest, tree_delta, triage_from_vote,
)

from oracles import feature_weights_ref, tree_delta_ref


def _stump(n_features, fw, oob):
    return DecisionTree(
        feature=np.array([-1]), threshold=np.array([-2.0]), left=np.array([-1]), right=np.array([-1]),
        value=np.array([[1.0, 0.0]]), oob_weight=oob, feature_weight=np.asarray(fw, dtype=float),
    )


def _toy_forest(tree_weights, oob):
    n = len(tree_weights[0])
    return Forest(tuple(_stump(n, w, o) for w, o in zip(tree_weights, oob)), tuple(range(n)), n)


@pytest.fixture(scope="module")
def small_data():
    return synth_traffic(SynthConfig(benign=600, attacks={"DoS": 150, "Web": 150}), 5)


def test_training_is_deterministic(small_data):
    a = train_forest(small_data, Z0=20, seed=3)
    b = train_forest(small_data, Z0=20, seed=3)
    assert a.same_as(b)
    assert not a.same_as(train_forest(small_data, Z0=20, seed=4))


def test_single_class_dataset(small_data):
    benign = small_data.subset(np.flatnonzero(small_data.y == 0))
    f = train_forest(benign, Z0=5, seed=0)
    for t in f.trees:
        leaves = t.feature == -1
        assert np.all(np.max(t.value[leaves], axis=1) == 1.0)
        assert t.oob_weight == 1.0


def test_one_tree_forest_votes_like_its_tree(small_data):
    f = train_forest(small_data, Z0=1, seed=0)
    assert f.Z == 1
    np.testing.assert_array_equal(f.predict(small_data.X), f.trees[0].votes_attack(small_data.X))


def test_empty_training_set(small_data):
    with pytest.raises(EmptyDataset):
        train_forest(small_data.subset(np.array([], dtype=int)))


def test_vote_one_matches_batch(small_data):
    f = train_forest(small_data, Z0=15, seed=1)
    batch = f.attack_vote(small_data.X[:50])
    single = [f.vote_one(x) for x in small_data.X[:50]]
    np.testing.assert_allclose(batch, single)


def test_weights_two_tree_max_feature():
    # feature 0 is the heaviest: 0.6*0.8 + 0.2*0.5 = 0.58
    f = _toy_forest([[0.6, 0.4, 0.0], [0.2, 0.3, 0.0]], [0.8, 0.5])
    w = feature_weights(f)
    assert w[0] == 1.0 and w[2] == 0.0


def test_weights_match_spreadsheet():
    tw = [[0.5, 0.3, 0.2, 0.0], [0.1, 0.6, 0.3, 0.0], [0.25, 0.25, 0.25, 0.25]]
    oob = [0.9, 0.7, 0.55]
    np.testing.assert_allclose(feature_weights(_toy_forest(tw, oob)), feature_weights_ref(tw, oob), rtol=1e-12)


def test_all_zero_weights():
    with pytest.raises(AllZero):
        feature_weights(_toy_forest([[0.0, 0.0]], [1.0]))


@given(st.lists(st.lists(st.floats(0, 1), min_size=5, max_size=5), min_size=1, max_size=6),
       st.data())
def test_weights_normalized(tw, data):
    oob = data.draw(st.lists(st.floats(0.01, 1), min_size=len(tw), max_size=len(tw)))
    f = _toy_forest(tw, oob)
    try:
        w = feature_weights(f)
    except AllZero:
        return
    assert np.all((w >= 0) & (w <= 1))
    assert np.any(w == 1.0)


def test_partition_full_h0_leaves_empty_pool():
    p = partition_features(np.array([0.3, 1.0, 0.2]), 3)
    assert p.g == 0 and (p.alpha, p.beta) == (0.0, 0.0)
    assert prune_unimportant(p)[0] == frozenset() and promote_features(p)[0] == frozenset()


def test_partition_distinct_weights():
    p = partition_features(np.array([0.1, 0.9, 0.5, 1.0, 0.3]), 2)
    assert p.important == (1, 3) and p.h == 2


def test_partition_tie_goes_to_lower_index():
    p = partition_features(np.array([1.0, 0.5, 0.5, 0.1]), 2)
    assert p.important == (0, 1)


def _pools(imp, unimp):
    w = np.zeros(len(imp) + len(unimp))
    w[: len(imp)] = imp
    w[len(imp):] = unimp
    n = len(imp)
    return FeaturePools(tuple(range(n)), tuple(range(n, len(w))), w)


def test_prune_zero_variance():
    removed, _ = prune_unimportant(_pools([1.0], [0.5, 0.5, 0.5]))
    assert removed == frozenset()


def test_prune_negative_threshold():
    p = _pools([1.0], [0.9, 0.9, 0.0])
    assert p.alpha == pytest.approx(0.6)
    assert p.beta == pytest.approx(0.4243, abs=1e-4)
    assert prune_unimportant(p)[0] == frozenset()


def test_prune_outlier_removed():
    p = _pools([1.0], [0.8] * 9 + [0.01])
    removed, rest = prune_unimportant(p)
    assert removed == frozenset({10})
    assert 10 not in rest.unimportant


def test_promote_none_below_min():
    assert promote_features(_pools([1.0, 0.7], [0.5, 0.6]))[0] == frozenset()


def test_promote_is_inclusive():
    moved, pools = promote_features(_pools([1.0, 0.7], [0.7, 0.2]))
    assert moved == frozenset({2}) and 2 in pools.important


@given(st.lists(st.floats(0, 1), min_size=4, max_size=20), st.integers(1, 3))
def test_pool_operations_keep_important_set(weights, h0):
    w = np.array(weights)
    pools = partition_features(w, min(h0, w.size))
    imp_before = set(pools.important)
    for _ in range(3):
        _, pools = prune_unimportant(pools)
        _, pools = promote_features(pools)
        assert imp_before <= set(pools.important)
        imp_before = set(pools.important)
        assert not set(pools.important) & set(pools.unimportant)


def test_node_factor_example():
    assert node_factor(10, 3, 0.5) == pytest.approx(2.254, abs=1e-3)


def test_tree_delta_examples():
    s = GrowthState(P=0.5, M_av=3, p_u=0.5, p_g=0.5, dh=1, dg=2)
    assert tree_delta(s, 5, 10) == 0
    assert tree_delta(GrowthState(P=0.5, M_av=3, dh=0, dg=0), 5, 10) == 0


@given(st.integers(1, 200), st.floats(1, 50), st.floats(0.5, 0.999), st.floats(0, 1), st.floats(0, 1),
       st.integers(-20, 20), st.integers(-20, 20), st.integers(1, 46))
def test_tree_delta_matches_oracle(Z, M_av, P, p_u, p_g, dh, dg, g):
    s = GrowthState(P=P, M_av=M_av, p_u=p_u, p_g=p_g, dh=dh, dg=dg)
    assert tree_delta(s, g, Z) == tree_delta_ref(Z, M_av, P, p_u, p_g, dh, dg, g)


def test_refine_with_high_stop_threshold_is_noop(small_data):
    f = train_forest(small_data, Z0=8, seed=2)
    g = refine_forest(f, small_data, h0=10, max_passes=5, f=47)
    assert g.same_as(f) and g.history == ()


def test_refine_invariants(small_data):
    f = train_forest(small_data, Z0=10, seed=2)
    g = refine_forest(f, small_data, h0=10, max_passes=6)
    assert g.Z >= 1
    removed_so_far, imp = set(), set()
    for h in g.history:
        removed_so_far |= set(h["removed"])
        assert h["Z"] >= 1
    assert not removed_so_far & set(g.feature_set)
    again = refine_forest(f, small_data, h0=10, max_passes=6)
    assert again.same_as(g)


@pytest.mark.parametrize("vote,klass", [(0.95, Triage.MALICIOUS), (0.05, Triage.NORMAL),
                                        (0.50, Triage.SUSPICIOUS), (0.8, Triage.MALICIOUS),
                                        (0.3, Triage.NORMAL)])
def test_triage_bands(vote, klass):
    assert triage_from_vote(vote) is klass


@given(st.floats(0, 1))
def test_triage_exhaustive(vote):
    k = triage_from_vote(vote)
    hits = [vote >= 0.8, vote <= 0.3, 0.3 < vote < 0.8]
    assert sum(hits) == 1
    assert k is [Triage.MALICIOUS, Triage.NORMAL, Triage.SUSPICIOUS][hits.index(True)]


def test_classify_triage_uses_forest_vote(small_data):
    f = train_forest(small_data, Z0=10, seed=0)
    x = small_data.X[0]
    r = classify_triage(f, x)
    assert r.attack_vote == pytest.approx(f.attack_vote(x)[0])
    assert r.klass is triage_from_vote(r.attack_vote)


def test_ingest_bookkeeping(small_data):
    pats = [SignaturePattern("Infiltration", tuple(small_data.X[i]), verified=True, entry_index=i + 1)
            for i in range(5)]
    db = ingest_signatures(SignatureDB(), pats)
    assert db.version == 1
    aug = db.augment(small_data)
    assert len(aug) == len(small_data) + 5
    assert list(aug.family[-5:]) == ["Infiltration"] * 5


def test_ingest_rejects_unverified():
    with pytest.raises(UnverifiedPattern):
        ingest_signatures(SignatureDB(), [SignaturePattern("DoS", (1.0,), verified=False)])


def test_signature_db_roundtrip(tmp_path):
    db = SignatureDB((SignaturePattern("Web", (1.0, 2.5), "honeypot", True, 3),), 2)
    db.save(tmp_path / "db.jsonl")
    assert SignatureDB.load(tmp_path / "db.jsonl") == db


def test_forest_file_roundtrip(tmp_path, small_data):
    f = train_forest(small_data, Z0=6, seed=9, features=range(0, 46, 2))
    save_forest(f, tmp_path / "f.irf")
    g = load_forest(tmp_path / "f.irf")
    assert g.same_as(f)
    np.testing.assert_array_equal(g.attack_vote(small_data.X), f.attack_vote(small_data.X))
