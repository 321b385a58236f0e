"""Graph containers, synthetic data, partitioning and on-disk formats.

A LocalGraph is one client's private shard: an undirected simple graph with
node features, integer labels and disjoint train/val/test index arrays.
Arrays are canonicalized and frozen at construction so downstream code can
cache derived quantities (Laplacian powers) safely.

Partitioning follows a streaming greedy scheme: nodes arrive in BFS order
and each is placed into the part with the most already-assigned neighbors,
penalized by how full the part is, under hard per-part quotas that differ
by at most one node. Cross-part edges are dropped and counted. The
overlapping variant first builds floor(M/5) base parts and then samples
five half-size client subsets from each part, so client node sets within a
base part overlap while never crossing part boundaries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, ContractError, InfeasibleError, ShapeError
from .rng import stream

SPLIT_FRACTIONS = (0.2, 0.4, 0.4)
TASKS = ("multiclass", "binary-auc")


def _index_array(values, n: int, what: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.int64).reshape(-1)
    if arr.size and (arr.min() < 0 or arr.max() >= n):
        raise ContractError(f"{what} indices out of range for n={n}")
    if arr.size != np.unique(arr).size:
        raise ContractError(f"{what} indices contain duplicates")
    arr = np.sort(arr)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class LocalGraph:
    """One client's graph shard. Immutable after construction."""

    features: np.ndarray
    labels: np.ndarray
    edges: np.ndarray
    train_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray

    def __post_init__(self):
        feats = np.ascontiguousarray(np.asarray(self.features, dtype=np.float64))
        if feats.ndim != 2:
            raise ShapeError(f"features must be 2-D, got ndim {feats.ndim}")
        if not np.isfinite(feats).all():
            raise ContractError("features contain non-finite entries")
        n = feats.shape[0]
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if labels.shape[0] != n:
            raise ShapeError(f"labels length {labels.shape[0]} != n={n}")
        if labels.size and labels.min() < 0:
            raise ContractError("labels must be nonnegative integers")
        edges = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if edges.size:
            if edges.min() < 0 or edges.max() >= n:
                raise ContractError(f"edge endpoints out of range for n={n}")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise ContractError("self loops are not allowed")
            lo = np.minimum(edges[:, 0], edges[:, 1])
            hi = np.maximum(edges[:, 0], edges[:, 1])
            edges = np.unique(np.column_stack([lo, hi]), axis=0)
        else:
            edges = edges.reshape(0, 2)
        train = _index_array(self.train_idx, n, "train")
        val = _index_array(self.val_idx, n, "val")
        test = _index_array(self.test_idx, n, "test")
        for a_name, a, b_name, b in (("train", train, "val", val),
                                     ("train", train, "test", test),
                                     ("val", val, "test", test)):
            if np.intersect1d(a, b).size:
                raise ContractError(f"{a_name} and {b_name} splits overlap")
        feats.setflags(write=False)
        labels.setflags(write=False)
        edges.setflags(write=False)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "train_idx", train)
        object.__setattr__(self, "val_idx", val)
        object.__setattr__(self, "test_idx", test)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if self.labels.size else 0

    def split(self, name: str) -> np.ndarray:
        return {"train": self.train_idx, "val": self.val_idx, "test": self.test_idx}[name]


@dataclass(frozen=True)
class FederationDataset:
    """A fixed roster of client shards plus federation-wide metadata."""

    clients: tuple
    num_classes: int
    feature_dim: int
    task: str
    node_maps: tuple = ()
    dropped_edges: int = 0

    def __post_init__(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if self.task == "binary-auc" and self.num_classes != 2:
            raise ConfigError("binary-auc task requires exactly 2 classes")
        for g in self.clients:
            if g.feature_dim != self.feature_dim:
                raise ShapeError("client feature dimension differs from federation")
            if g.labels.size and int(g.labels.max()) >= self.num_classes:
                raise ContractError("client label exceeds federation class count")

    @property
    def num_clients(self) -> int:
        return len(self.clients)


def adjacency(g: LocalGraph) -> np.ndarray:
    """Dense symmetric 0/1 adjacency matrix."""
    a = np.zeros((g.n, g.n))
    if g.edges.size:
        a[g.edges[:, 0], g.edges[:, 1]] = 1.0
        a[g.edges[:, 1], g.edges[:, 0]] = 1.0
    return a


def normalized_laplacian(g: LocalGraph) -> np.ndarray:
    """Symmetric normalized Laplacian I - D^{-1/2} A D^{-1/2}.

    Isolated nodes get a unit diagonal entry, which falls out of the
    construction because their scaling factor is zero and the graph has no
    self loops. The result is exactly symmetric: the off-diagonal part is
    built as an elementwise product of two exactly symmetric matrices.
    """
    a = adjacency(g)
    deg = a.sum(axis=1)
    inv_sqrt = np.zeros_like(deg)
    pos = deg > 0
    inv_sqrt[pos] = 1.0 / np.sqrt(deg[pos])
    weight = np.outer(inv_sqrt, inv_sqrt)
    lap = -(weight * a)
    np.fill_diagonal(lap, 1.0)
    return lap


def laplacian_powers(g: LocalGraph, order: int) -> list[np.ndarray]:
    """Propagated features [X, L X, L^2 X, ..., L^order X]."""
    if order < 0:
        raise ContractError(f"order must be >= 0, got {order}")
    lap = normalized_laplacian(g)
    powers = [np.ascontiguousarray(g.features.copy())]
    for _ in range(order):
        powers.append(lap @ powers[-1])
    return powers


def homophily_ratio(g: LocalGraph) -> float:
    """Fraction of edges joining same-label endpoints."""
    if not g.edges.size:
        return float("nan")
    same = g.labels[g.edges[:, 0]] == g.labels[g.edges[:, 1]]
    return float(np.mean(same))


def stratified_split(labels: np.ndarray, rng: np.random.Generator,
                     fractions: tuple = SPLIT_FRACTIONS) -> tuple:
    """Per-class shuffled split into (train, val, test) index arrays.

    Every class with at least one node contributes at least one training
    node; remaining nodes go to val then test by the given fractions.
    """
    f_train, f_val, _ = fractions
    train, val, test = [], [], []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(idx.size)]
        k = idx.size
        n_train = max(1, int(round(f_train * k)))
        n_val = min(int(round(f_val * k)), k - n_train)
        train.append(idx[:n_train])
        val.append(idx[n_train:n_train + n_val])
        test.append(idx[n_train + n_val:])
    cat = lambda parts: np.sort(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)
    return cat(train), cat(val), cat(test)


@dataclass(frozen=True)
class SynthSpec:
    """Stochastic block model recipe for one synthetic graph."""

    num_nodes: int
    num_classes: int
    feature_dim: int
    p_intra: float
    p_inter: float
    mean_scale: float = 2.0
    noise: float = 1.0
    class_means: Optional[np.ndarray] = None
    task: str = "multiclass"

    def __post_init__(self):
        if self.num_nodes < 1:
            raise ConfigError("num_nodes must be >= 1")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1")
        for name, p in (("p_intra", self.p_intra), ("p_inter", self.p_inter)):
            if not (0.0 <= p <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {p}")
        if self.noise < 0:
            raise ConfigError("noise must be >= 0")
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}, expected one of {TASKS}")
        if self.task == "binary-auc" and self.num_classes != 2:
            raise ConfigError("binary-auc task requires exactly 2 classes")
        if self.class_means is not None:
            means = np.ascontiguousarray(np.asarray(self.class_means, dtype=np.float64))
            if means.shape != (self.num_classes, self.feature_dim):
                raise ShapeError(f"class_means must be {(self.num_classes, self.feature_dim)},"
                                 f" got {means.shape}")
            means.setflags(write=False)
            object.__setattr__(self, "class_means", means)


def synth_dataset(spec: SynthSpec, seed: int) -> LocalGraph:
    """Sample one stochastic block model graph with Gaussian features.

    Labels are balanced up to remainder and shuffled; features are the
    class mean plus isotropic noise; each node pair draws an edge with
    probability p_intra (same label) or p_inter (otherwise). Splits are
    stratified 20/40/40. Deterministic given (spec, seed).
    """
    rng = stream(seed, "synth")
    c, d, n = spec.num_classes, spec.feature_dim, spec.num_nodes
    if spec.class_means is not None:
        means = spec.class_means
    else:
        means = spec.mean_scale * rng.standard_normal((c, d))
    labels = np.tile(np.arange(c), (n + c - 1) // c)[:n]
    rng.shuffle(labels)
    features = means[labels] + spec.noise * rng.standard_normal((n, d))
    draws = rng.random((n, n))
    same = labels[:, None] == labels[None, :]
    prob = np.where(same, spec.p_intra, spec.p_inter)
    iu, ju = np.triu_indices(n, k=1)
    hit = draws[iu, ju] < prob[iu, ju]
    edges = np.column_stack([iu[hit], ju[hit]])
    train, val, test = stratified_split(labels, stream(seed, "synth-split"))
    return LocalGraph(features, labels, edges, train, val, test)


def _adjacency_lists(n: int, edges: np.ndarray) -> list[list[int]]:
    neighbors: list[list[int]] = [[] for _ in range(n)]
    for u, v in edges:
        neighbors[int(u)].append(int(v))
        neighbors[int(v)].append(int(u))
    return [sorted(lst) for lst in neighbors]


def _bfs_order(n: int, neighbors: list[list[int]], root: int) -> list[int]:
    order: list[int] = []
    seen = np.zeros(n, dtype=bool)
    queue = [root]
    seen[root] = True
    while len(order) < n:
        if not queue:
            nxt = int(np.flatnonzero(~seen)[0])
            seen[nxt] = True
            queue.append(nxt)
        node = queue.pop(0)
        order.append(node)
        for nb in neighbors[node]:
            if not seen[nb]:
                seen[nb] = True
                queue.append(nb)
    return order


def _greedy_assignment(n: int, edges: np.ndarray, num_parts: int,
                       rng: np.random.Generator) -> np.ndarray:
    """Streaming greedy partition with per-part quotas differing by <= 1."""
    base, rem = divmod(n, num_parts)
    quotas = np.array([base + (1 if i < rem else 0) for i in range(num_parts)])
    neighbors = _adjacency_lists(n, edges)
    order = _bfs_order(n, neighbors, int(rng.integers(n)))
    assign = np.full(n, -1, dtype=np.int64)
    sizes = np.zeros(num_parts, dtype=np.int64)
    for node in order:
        best_part, best_score = -1, -np.inf
        assigned_nbrs = [assign[nb] for nb in neighbors[node] if assign[nb] >= 0]
        for part in range(num_parts):
            if sizes[part] >= quotas[part]:
                continue
            affinity = sum(1 for p in assigned_nbrs if p == part)
            score = affinity - sizes[part] / quotas[part]
            if score > best_score:
                best_part, best_score = part, score
        assign[node] = best_part
        sizes[best_part] += 1
    return assign


def _induce(g: LocalGraph, nodes: np.ndarray, split_rng: np.random.Generator) -> tuple:
    """Induced subgraph on sorted global node ids, with fresh splits."""
    nodes = np.sort(np.asarray(nodes, dtype=np.int64))
    pos = {int(v): i for i, v in enumerate(nodes)}
    kept = []
    dropped = 0
    for u, v in g.edges:
        u, v = int(u), int(v)
        if u in pos and v in pos:
            kept.append((pos[u], pos[v]))
        elif u in pos or v in pos:
            dropped += 1
    labels = g.labels[nodes]
    train, val, test = stratified_split(labels, split_rng)
    sub = LocalGraph(g.features[nodes], labels, np.asarray(kept, dtype=np.int64).reshape(-1, 2),
                     train, val, test)
    return sub, nodes, dropped


def partition_nonoverlap(g: LocalGraph, num_clients: int, seed: int,
                         task: str = "multiclass") -> FederationDataset:
    """Split a global graph into disjoint client shards covering all nodes.

    Part sizes differ by at most one node. Edges crossing shard boundaries
    are dropped and counted in the returned dataset.
    """
    if num_clients < 2:
        raise ContractError(f"need at least 2 clients, got {num_clients}")
    if num_clients > g.n:
        raise InfeasibleError(f"cannot split {g.n} nodes into {num_clients} nonempty parts")
    assign = _greedy_assignment(g.n, g.edges, num_clients, stream(seed, "partition"))
    clients, maps = [], []
    dropped_total = 0
    for part in range(num_clients):
        nodes = np.flatnonzero(assign == part)
        sub, node_map, dropped = _induce(g, nodes, stream(seed, "partition-split", part))
        clients.append(sub)
        maps.append(node_map)
        dropped_total += dropped
    return FederationDataset(tuple(clients), g.num_classes(), g.feature_dim, task,
                             tuple(maps), dropped_total // 2)


def partition_overlap(g: LocalGraph, num_clients: int, seed: int,
                      task: str = "multiclass") -> FederationDataset:
    """Sample overlapping client shards from floor(M/5) disjoint base parts.

    Produces 5 * floor(M/5) clients; each is an induced subgraph on a
    half-size node sample drawn without replacement from one base part, so
    clients within a part overlap but never straddle part boundaries.
    """
    if num_clients < 5:
        raise ContractError(f"overlap scheme needs at least 5 clients, got {num_clients}")
    num_parts = num_clients // 5
    if num_parts >= 2:
        assign = _greedy_assignment(g.n, g.edges, num_parts, stream(seed, "partition"))
    else:
        assign = np.zeros(g.n, dtype=np.int64)
    clients, maps = [], []
    dropped_total = 0
    client_idx = 0
    for part in range(num_parts):
        base_nodes = np.flatnonzero(assign == part)
        half = base_nodes.size // 2
        if half < 1:
            raise InfeasibleError(f"base part {part} has {base_nodes.size} nodes;"
                                  " cannot sample half-size clients")
        for _ in range(5):
            pick_rng = stream(seed, "overlap-sample", client_idx)
            pick = pick_rng.choice(base_nodes.size, size=half, replace=False)
            nodes = base_nodes[np.sort(pick)]
            sub, node_map, dropped = _induce(g, nodes, stream(seed, "partition-split", client_idx))
            clients.append(sub)
            maps.append(node_map)
            dropped_total += dropped
            client_idx += 1
    return FederationDataset(tuple(clients), g.num_classes(), g.feature_dim, task,
                             tuple(maps), dropped_total)


# --- on-disk formats ------------------------------------------------------

_GRAPH_KEYS = {"n", "directed", "edges", "features", "labels", "masks"}
_FEATURE_KEYS = {"rows", "cols", "data"}
_MASK_KEYS = {"train", "val", "test"}


def _check_keys(obj: dict, allowed: set, where: str) -> None:
    unknown = set(obj) - allowed
    if unknown:
        raise ConfigError(f"unknown key {sorted(unknown)[0]!r} in {where}")
    missing = allowed - set(obj)
    if missing:
        raise ConfigError(f"missing key {sorted(missing)[0]!r} in {where}")


def graph_to_dict(g: LocalGraph) -> dict:
    return {
        "n": g.n,
        "directed": False,
        "edges": [[int(u), int(v)] for u, v in g.edges],
        "features": {"rows": g.n, "cols": g.feature_dim,
                     "data": [float(x) for x in g.features.ravel()]},
        "labels": [int(x) for x in g.labels],
        "masks": {"train": [int(i) for i in g.train_idx],
                  "val": [int(i) for i in g.val_idx],
                  "test": [int(i) for i in g.test_idx]},
    }


def graph_from_dict(obj: dict, where: str = "graph file") -> LocalGraph:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must contain a JSON object")
    _check_keys(obj, _GRAPH_KEYS, where)
    if obj["directed"] is not False:
        raise ConfigError(f"{where}: only undirected graphs are supported")
    feats = obj["features"]
    if not isinstance(feats, dict):
        raise ConfigError(f"{where}: features must be an object")
    _check_keys(feats, _FEATURE_KEYS, f"{where} features")
    n, d = int(feats["rows"]), int(feats["cols"])
    if n != int(obj["n"]):
        raise ConfigError(f"{where}: feature rows {n} != n {obj['n']}")
    data = np.asarray(feats["data"], dtype=np.float64)
    if data.size != n * d:
        raise ConfigError(f"{where}: feature data length {data.size} != rows*cols {n * d}")
    masks = obj["masks"]
    if not isinstance(masks, dict):
        raise ConfigError(f"{where}: masks must be an object")
    _check_keys(masks, _MASK_KEYS, f"{where} masks")
    return LocalGraph(data.reshape(n, d), obj["labels"], obj["edges"],
                      masks["train"], masks["val"], masks["test"])


def dump_json(obj, path: Path) -> None:
    """Canonical JSON dump: sorted keys, no whitespace, trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, sort_keys=True, separators=(",", ":")) + "\n")


def save_graph(g: LocalGraph, path) -> None:
    dump_json(graph_to_dict(g), Path(path))


def load_graph(path) -> LocalGraph:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"graph file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from None
    return graph_from_dict(payload, where=str(path))


_MANIFEST_KEYS = {"clients", "num_classes", "feature_dim", "task", "dropped_edges",
                  "files", "node_maps"}


def save_dataset(ds: FederationDataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i, g in enumerate(ds.clients):
        name = f"client_{i:03d}.json"
        save_graph(g, out / name)
        files.append(name)
    node_maps = [[int(v) for v in m] for m in ds.node_maps] if ds.node_maps else \
                [[int(v) for v in range(g.n)] for g in ds.clients]
    manifest = {"clients": ds.num_clients, "num_classes": ds.num_classes,
                "feature_dim": ds.feature_dim, "task": ds.task,
                "dropped_edges": ds.dropped_edges, "files": files,
                "node_maps": node_maps}
    dump_json(manifest, out / "manifest.json")


def load_dataset(path) -> FederationDataset:
    root = Path(path)
    try:
        with open(root / "manifest.json") as fh:
            manifest = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"dataset manifest not found: {root / 'manifest.json'}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{root / 'manifest.json'} is not valid JSON: {exc}") from None
    if not isinstance(manifest, dict):
        raise ConfigError("manifest.json must contain a JSON object")
    _check_keys(manifest, _MANIFEST_KEYS, "manifest.json")
    clients = tuple(load_graph(root / name) for name in manifest["files"])
    if len(clients) != int(manifest["clients"]):
        raise ConfigError("manifest client count does not match file list")
    maps = tuple(np.asarray(m, dtype=np.int64) for m in manifest["node_maps"])
    return FederationDataset(clients, int(manifest["num_classes"]),
                             int(manifest["feature_dim"]), manifest["task"],
                             maps, int(manifest["dropped_edges"]))
