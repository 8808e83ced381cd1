import numpy as np
import pytest

from canids.canlog import CanFrame, Label
from canids.errors import ConfigError, StateError
from canids.graphs import build_windows, feature_stats, load_graph_cache, save_graph_cache
from helpers import brute_force_windows, random_frames


def frames_from_ids(ids, label_at=()):
    return [
        CanFrame(0.001 * i, cid, 2, (10, 20), Label.ATTACK if i in label_at else Label.BENIGN)
        for i, cid in enumerate(ids)
    ]


def test_abab_window_by_hand():
    # consecutive pairs: (A,B), (B,A), (A,B) -> A->B weight 2, B->A weight 1
    a, b = 100, 200
    [g] = list(build_windows(iter(frames_from_ids([a, b, a, b])), 4))
    assert g.node_ids == [a, b]
    assert g.node_features[0, 1] == 0.5 and g.node_features[1, 1] == 0.5
    edges = {(s, d): w for s, d, w in g.edges()}
    assert edges == {(0, 1): 2.0, (1, 0): 1.0}
    assert g.edge_weight.sum() == 3 == 4 - 1


def test_single_id_window_self_edge():
    [g] = list(build_windows(iter(frames_from_ids([5] * 100)), 100))
    assert g.num_nodes == 1
    assert g.node_features[0, 1] == 1.0
    assert g.edges() == [(0, 0, 99.0)]


def test_any_attack_frame_labels_window():
    [g] = list(build_windows(iter(frames_from_ids([1, 2, 3, 4], label_at={2})), 4))
    assert g.label == 1
    [g] = list(build_windows(iter(frames_from_ids([1, 2, 3, 4])), 4))
    assert g.label == 0


def test_feature_values():
    frames = [
        CanFrame(0.0, 2047, 8, (255,) * 8),
        CanFrame(0.1, 0, 0, ()),
        CanFrame(0.2, 2047, 8, (255,) * 8),
    ]
    [g] = list(build_windows(iter(frames), 3))
    assert g.node_features[0, 0] == 1.0  # id 2047 normalized
    assert g.node_features[0, 2] == 1.0  # payload all 0xff
    assert g.node_features[1, 0] == 0.0
    assert g.node_features[1, 2] == 0.0  # dlc=0 contributes nothing


def test_stride_and_trailing_partial_discarded():
    frames = frames_from_ids(list(range(10)))
    graphs = list(build_windows(iter(frames), 4, stride=3))
    assert [g.window_start_index for g in graphs] == [0, 3, 6]


def test_config_errors():
    frames = frames_from_ids([1, 2, 3])
    with pytest.raises(ConfigError):
        list(build_windows(iter(frames), 1))
    with pytest.raises(ConfigError):
        list(build_windows(iter(frames), 3, stride=0))
    with pytest.raises(ConfigError):
        list(build_windows(iter(frames), 3, stride=4))


def test_short_stream_yields_nothing():
    assert list(build_windows(iter(frames_from_ids([1, 2])), 3)) == []


def test_undirected_variant_merges_pairs():
    a, b = 100, 200
    [g] = list(build_windows(iter(frames_from_ids([a, b, a, b])), 4, directed=False))
    edges = {(s, d): w for s, d, w in g.edges()}
    assert edges == {(0, 1): 3.0}
    assert g.edge_weight.sum() == 3


def test_oracle_equivalence_on_random_streams():
    rng = np.random.Generator(np.random.PCG64(99))
    for trial in range(60):
        length = int(rng.integers(2, 301))
        alphabet = rng.choice(2048, size=int(rng.integers(1, 21)), replace=False)
        frames = random_frames(rng, length, alphabet)
        w = int(rng.integers(2, min(length, 120) + 1))
        stride = int(rng.integers(1, w + 1))
        mine = list(build_windows(iter(frames), w, stride))
        ref = brute_force_windows(frames, w, stride)
        assert len(mine) == len(ref)
        for g, (start, (node_ids, feats, edges, label)) in zip(mine, ref):
            assert g.window_start_index == start
            assert g.node_ids == node_ids
            assert np.max(np.abs(g.node_features - feats), initial=0.0) <= 1e-12
            assert {(s, d): w_ for s, d, w_ in g.edges()} == edges
            assert g.label == label
            assert g.edge_weight.sum() == w - 1
            assert abs(g.node_features[:, 1].sum() - 1.0) < 1e-12


def test_determinism_and_first_appearance_order():
    frames = frames_from_ids([7, 3, 7, 9, 3, 7])
    [a] = list(build_windows(iter(frames), 6))
    [b] = list(build_windows(iter(frames), 6))
    assert a.node_ids == b.node_ids == [7, 3, 9]
    assert np.array_equal(a.node_features, b.node_features)


def test_feature_stats(mixed_graphs):
    stats = feature_stats(mixed_graphs)
    assert stats["num_graphs"] == len(mixed_graphs)
    assert 0 < stats["attack_fraction"] < 1
    assert stats["nodes_min"] <= stats["nodes_mean"] <= stats["nodes_max"]
    with pytest.raises(StateError):
        feature_stats([])


def test_feature_stats_label_arithmetic(benign_graphs):
    assert feature_stats(benign_graphs)["attack_fraction"] == 0.0
    two = [benign_graphs[0], benign_graphs[1]]
    two[1].label = 1
    try:
        assert feature_stats(two)["attack_fraction"] == 0.5
    finally:
        two[1].label = 0


def test_cache_round_trip(tmp_path, mixed_graphs):
    p = tmp_path / "graphs.cache"
    save_graph_cache(mixed_graphs[:40], p)
    loaded = load_graph_cache(p)
    assert len(loaded) == 40
    for a, b in zip(mixed_graphs[:40], loaded):
        assert a.node_ids == b.node_ids
        assert np.array_equal(a.node_features, b.node_features)
        assert np.array_equal(a.edge_src, b.edge_src)
        assert np.array_equal(a.edge_weight, b.edge_weight)
        assert (a.label, a.window_start_index) == (b.label, b.window_start_index)
    # save(load(x)) is byte-identical
    q = tmp_path / "again.cache"
    save_graph_cache(loaded, q)
    assert p.read_bytes() == q.read_bytes()
