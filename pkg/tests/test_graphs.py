"""Graph substrate checks: Laplacian hand values and spectral range,
split/partition properties, SBM synthesis determinism, strict JSON I/O."""

import json
from pathlib import Path

import numpy as np
import pytest

from fedssa.errors import ConfigError, ContractError, InfeasibleError
from fedssa.graphs import (FederationDataset, LocalGraph, SynthSpec,
                           adjacency, graph_from_dict, graph_to_dict,
                           homophily_ratio, laplacian_powers, load_dataset,
                           load_graph, normalized_laplacian,
                           partition_nonoverlap, partition_overlap,
                           save_dataset, save_graph, stratified_split,
                           synth_dataset)
from fedssa.rng import stream


def _graph(features, labels, edges, train=None, val=None, test=None):
    n = np.asarray(features).shape[0]
    train = [0] if train is None else train
    val = [] if val is None else val
    test = [] if test is None else test
    return LocalGraph(np.asarray(features, dtype=float), labels, edges,
                      train, val, test)


def _two_nodes_one_edge():
    return _graph(np.eye(2), [0, 1], [[0, 1]])


# --- Laplacian ------------------------------------------------------------------


def test_laplacian_single_edge_hand_value():
    lap = normalized_laplacian(_two_nodes_one_edge())
    assert np.array_equal(lap, np.array([[1.0, -1.0], [-1.0, 1.0]]))


def test_laplacian_path_graph_hand_value():
    g = _graph(np.eye(3), [0, 0, 0], [[0, 1], [1, 2]])
    lap = normalized_laplacian(g)
    s = 1.0 / np.sqrt(2.0)
    want = np.array([[1.0, -s, 0.0], [-s, 1.0, -s], [0.0, -s, 1.0]])
    assert np.allclose(lap, want)
    assert np.array_equal(lap, lap.T)


def test_laplacian_isolated_node_unit_diagonal():
    g = _graph(np.eye(3), [0, 0, 1], [[0, 1]])
    lap = normalized_laplacian(g)
    assert lap[2, 2] == 1.0
    assert np.all(lap[2, :2] == 0.0) and np.all(lap[:2, 2] == 0.0)


def test_laplacian_exactly_symmetric_and_spectrum_in_range():
    for seed in range(10):
        g = synth_dataset(SynthSpec(40, 3, 4, 0.2, 0.05), seed)
        lap = normalized_laplacian(g)
        assert np.array_equal(lap, lap.T)
        assert np.all(np.diag(lap) == 1.0)
        vals = np.linalg.eigvalsh(lap)
        assert vals.min() >= -1e-10
        assert vals.max() <= 2.0 + 1e-10


def test_laplacian_powers_path_hand_value():
    lap = normalized_laplacian(_two_nodes_one_edge())
    g = _graph(np.array([[1.0], [0.0]]), [0, 1], [[0, 1]])
    powers = laplacian_powers(g, 2)
    assert np.allclose(powers[0], [[1.0], [0.0]])
    assert np.allclose(powers[1], [[1.0], [-1.0]])
    assert np.allclose(powers[2], [[2.0], [-2.0]])
    assert len(powers) == 3
    del lap


def test_laplacian_powers_rejects_negative_order():
    with pytest.raises(ContractError):
        laplacian_powers(_two_nodes_one_edge(), -1)


def test_homophily_ratio():
    g = _graph(np.eye(4), [0, 0, 1, 1], [[0, 1], [1, 2], [2, 3]])
    assert homophily_ratio(g) == pytest.approx(2.0 / 3.0)
    lonely = _graph(np.eye(2), [0, 1], np.zeros((0, 2), dtype=int))
    assert np.isnan(homophily_ratio(lonely))


# --- LocalGraph contracts -------------------------------------------------------


def test_graph_canonicalizes_edges():
    g = _graph(np.eye(3), [0, 1, 0], [[2, 0], [0, 2], [1, 0]])
    assert np.array_equal(g.edges, [[0, 1], [0, 2]])


def test_graph_rejects_self_loop():
    with pytest.raises(ContractError):
        _graph(np.eye(2), [0, 1], [[1, 1]])


def test_graph_rejects_out_of_range_edge():
    with pytest.raises(ContractError):
        _graph(np.eye(2), [0, 1], [[0, 2]])


def test_graph_rejects_overlapping_splits():
    with pytest.raises(ContractError):
        _graph(np.eye(3), [0, 1, 0], [[0, 1]], train=[0, 1], val=[1])


def test_graph_arrays_are_read_only():
    g = _two_nodes_one_edge()
    with pytest.raises(ValueError):
        g.features[0, 0] = 5.0
    with pytest.raises(ValueError):
        g.labels[0] = 3


def test_dataset_validates_clients():
    g = _two_nodes_one_edge()
    with pytest.raises(ContractError):
        FederationDataset((g,), num_classes=1, feature_dim=2, task="multiclass")
    with pytest.raises(ConfigError):
        FederationDataset((g,), num_classes=2, feature_dim=2, task="nonsense")
    with pytest.raises(ConfigError):
        FederationDataset((g,), num_classes=3, feature_dim=2, task="binary-auc")


# --- splits ---------------------------------------------------------------------


def test_stratified_split_properties():
    rng = stream(0, "test-split")
    labels = np.array([0] * 10 + [1] * 7 + [2] * 3)
    train, val, test = stratified_split(labels, rng)
    all_idx = np.concatenate([train, val, test])
    assert np.array_equal(np.sort(all_idx), np.arange(20))
    for c in range(3):
        assert np.sum(labels[train] == c) >= 1
    assert np.sum(labels[train] == 0) == 2
    assert np.sum(labels[val] == 0) == 4


def test_stratified_split_singleton_class_goes_to_train():
    rng = stream(1, "test-split")
    labels = np.array([0, 0, 0, 0, 1])
    train, _, _ = stratified_split(labels, rng)
    assert 4 in train


# --- synthesis ------------------------------------------------------------------


def test_synth_deterministic_and_balanced():
    spec = SynthSpec(30, 3, 5, 0.3, 0.02)
    g1 = synth_dataset(spec, 11)
    g2 = synth_dataset(spec, 11)
    assert g1.features.tobytes() == g2.features.tobytes()
    assert g1.edges.tobytes() == g2.edges.tobytes()
    counts = np.bincount(g1.labels, minlength=3)
    assert counts.max() - counts.min() <= 1
    g3 = synth_dataset(spec, 12)
    assert g3.features.tobytes() != g1.features.tobytes()


def test_synth_homophilous_vs_heterophilous():
    homo = synth_dataset(SynthSpec(120, 3, 4, 0.2, 0.01), 0)
    hetero = synth_dataset(SynthSpec(120, 3, 4, 0.01, 0.2), 0)
    assert homophily_ratio(homo) > 0.7
    assert homophily_ratio(hetero) < 0.3


def test_synth_extreme_probs():
    full = synth_dataset(SynthSpec(10, 2, 3, 1.0, 1.0), 0)
    assert full.edges.shape[0] == 45
    empty = synth_dataset(SynthSpec(10, 2, 3, 0.0, 0.0), 0)
    assert empty.edges.shape[0] == 0


def test_synth_fixed_class_means_are_used():
    means = np.array([[10.0, 10.0], [-10.0, -10.0]])
    spec = SynthSpec(20, 2, 2, 0.2, 0.02, noise=0.1, class_means=means)
    g = synth_dataset(spec, 5)
    for c in range(2):
        rows = g.features[g.labels == c]
        assert np.linalg.norm(rows.mean(axis=0) - means[c]) < 1.0


def test_synth_spec_validation():
    with pytest.raises(ConfigError):
        SynthSpec(10, 1, 3, 0.1, 0.1)
    with pytest.raises(ConfigError):
        SynthSpec(10, 2, 3, 1.5, 0.1)
    with pytest.raises(ConfigError):
        SynthSpec(0, 2, 3, 0.1, 0.1)


# --- partitioning ---------------------------------------------------------------


def test_partition_nonoverlap_covers_and_balances():
    g = synth_dataset(SynthSpec(101, 4, 6, 0.15, 0.02), 3)
    ds = partition_nonoverlap(g, 4, seed=9)
    assert ds.num_clients == 4
    sizes = [c.n for c in ds.clients]
    assert max(sizes) - min(sizes) <= 1
    assert sum(sizes) == 101
    covered = np.sort(np.concatenate(ds.node_maps))
    assert np.array_equal(covered, np.arange(101))
    for sub, nodes in zip(ds.clients, ds.node_maps):
        assert np.array_equal(sub.labels, g.labels[nodes])
        assert sub.features.tobytes() == np.ascontiguousarray(g.features[nodes]).tobytes()


def test_partition_nonoverlap_edge_accounting():
    g = synth_dataset(SynthSpec(60, 3, 4, 0.2, 0.05), 1)
    ds = partition_nonoverlap(g, 3, seed=2)
    kept = sum(c.edges.shape[0] for c in ds.clients)
    assert kept + ds.dropped_edges == g.edges.shape[0]


def test_partition_two_cliques_zero_cut():
    # Two 8-cliques joined by nothing: a sane affinity partitioner cuts 0 edges.
    edges = [(i, j) for i in range(8) for j in range(i + 1, 8)]
    edges += [(i + 8, j + 8) for i in range(8) for j in range(i + 1, 8)]
    g = _graph(np.eye(16), [0] * 8 + [1] * 8, edges)
    for seed in range(5):
        ds = partition_nonoverlap(g, 2, seed=seed)
        assert ds.dropped_edges == 0
        sets = [frozenset(map(int, nm)) for nm in ds.node_maps]
        assert frozenset(range(8)) in sets
        assert frozenset(range(8, 16)) in sets


def test_partition_deterministic():
    g = synth_dataset(SynthSpec(50, 2, 3, 0.2, 0.05), 4)
    a = partition_nonoverlap(g, 5, seed=7)
    b = partition_nonoverlap(g, 5, seed=7)
    for ca, cb in zip(a.clients, b.clients):
        assert ca.features.tobytes() == cb.features.tobytes()
        assert ca.train_idx.tobytes() == cb.train_idx.tobytes()


def test_partition_errors():
    g = synth_dataset(SynthSpec(10, 2, 3, 0.2, 0.05), 4)
    with pytest.raises(ContractError):
        partition_nonoverlap(g, 1, seed=0)
    with pytest.raises(InfeasibleError):
        partition_nonoverlap(g, 11, seed=0)


def test_partition_overlap_counts_and_subsets():
    g = synth_dataset(SynthSpec(80, 2, 3, 0.2, 0.05), 6)
    ds = partition_overlap(g, 12, seed=1)
    # 12 requested -> floor(12/5) = 2 base parts -> 10 clients
    assert ds.num_clients == 10
    part_sets = []
    for i in range(0, 10, 5):
        union = set()
        for nm in ds.node_maps[i:i + 5]:
            union |= set(map(int, nm))
        part_sets.append(union)
    assert not (part_sets[0] & part_sets[1])
    # 80 nodes over 2 base parts -> 40 per part -> half-size clients of 20
    for i, nm in enumerate(ds.node_maps):
        assert len(nm) == 20
        assert set(map(int, nm)) <= part_sets[i // 5]


def test_partition_overlap_clients_differ():
    g = synth_dataset(SynthSpec(60, 2, 3, 0.2, 0.05), 2)
    ds = partition_overlap(g, 5, seed=3)
    assert ds.num_clients == 5
    maps = [tuple(map(int, nm)) for nm in ds.node_maps]
    assert len(set(maps)) > 1


def test_partition_overlap_errors():
    g = synth_dataset(SynthSpec(20, 2, 3, 0.2, 0.05), 2)
    with pytest.raises(ContractError):
        partition_overlap(g, 4, seed=0)
    tiny = _graph(np.eye(3), [0, 1, 0], [[0, 1]])
    with pytest.raises(InfeasibleError):
        partition_overlap(tiny, 15, seed=0)


# --- JSON formats ---------------------------------------------------------------


def test_graph_roundtrip_byte_identical(tmp_path):
    g = synth_dataset(SynthSpec(25, 3, 4, 0.2, 0.05), 8)
    p1 = tmp_path / "g1.json"
    p2 = tmp_path / "g2.json"
    save_graph(g, p1)
    loaded = load_graph(p1)
    save_graph(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert loaded.features.tobytes() == g.features.tobytes()
    assert loaded.labels.tobytes() == g.labels.tobytes()
    assert loaded.edges.tobytes() == g.edges.tobytes()
    assert loaded.train_idx.tobytes() == g.train_idx.tobytes()


def test_graph_dict_rejects_unknown_key():
    obj = graph_to_dict(_two_nodes_one_edge())
    obj["surprise"] = 1
    with pytest.raises(ConfigError) as err:
        graph_from_dict(obj)
    assert "surprise" in str(err.value)


def test_graph_dict_rejects_missing_key():
    obj = graph_to_dict(_two_nodes_one_edge())
    del obj["labels"]
    with pytest.raises(ConfigError) as err:
        graph_from_dict(obj)
    assert "labels" in str(err.value)


def test_graph_dict_rejects_directed():
    obj = graph_to_dict(_two_nodes_one_edge())
    obj["directed"] = True
    with pytest.raises(ConfigError):
        graph_from_dict(obj)


def test_dataset_roundtrip(tmp_path):
    g = synth_dataset(SynthSpec(40, 2, 3, 0.2, 0.05), 5)
    ds = partition_nonoverlap(g, 4, seed=6, task="binary-auc")
    out = tmp_path / "ds"
    save_dataset(ds, out)
    loaded = load_dataset(out)
    assert loaded.num_clients == 4
    assert loaded.task == "binary-auc"
    assert loaded.num_classes == ds.num_classes
    assert loaded.dropped_edges == ds.dropped_edges
    for a, b in zip(loaded.clients, ds.clients):
        assert a.features.tobytes() == b.features.tobytes()
        assert a.edges.tobytes() == b.edges.tobytes()
    for a, b in zip(loaded.node_maps, ds.node_maps):
        assert np.array_equal(a, b)


def test_dataset_manifest_rejects_unknown_key(tmp_path):
    g = synth_dataset(SynthSpec(30, 2, 3, 0.2, 0.05), 5)
    ds = partition_nonoverlap(g, 3, seed=6)
    out = tmp_path / "ds"
    save_dataset(ds, out)
    manifest = json.loads((out / "manifest.json").read_text())
    manifest["extra"] = True
    (out / "manifest.json").write_text(json.dumps(manifest))
    with pytest.raises(ConfigError) as err:
        load_dataset(out)
    assert "extra" in str(err.value)


def test_load_graph_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_graph(tmp_path / "absent.json")


def test_adjacency_is_symmetric_binary():
    g = synth_dataset(SynthSpec(20, 2, 3, 0.3, 0.1), 0)
    a = adjacency(g)
    assert np.array_equal(a, a.T)
    assert set(np.unique(a)) <= {0.0, 1.0}
    assert np.all(np.diag(a) == 0.0)
    assert a.sum() == 2 * g.edges.shape[0]
