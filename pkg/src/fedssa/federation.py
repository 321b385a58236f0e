"""Synchronous federation loop: local training, uploads, server clustering.

One round proceeds in lockstep: every client trains E local epochs against
the representatives it received last round, evaluates, and produces an
upload; the server then reclusters from scratch and broadcasts fresh
per-client representatives for the next round. Client work is keyed by
client id, never by execution order, so permuting the schedule cannot
change any result.

Methods:
  fedssa  - the full protocol (semantic and structural branches can be
            ablated independently; uploads shrink accordingly).
  fedavg  - uniform averaging of all parameters every round.
  local   - isolated training; no messages exist at all.

Uploads carry only statistics: filter coefficients, class-wise latent
Gaussians, and the spectral-energy summary. Raw features, labels and edges
never leave the client.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import tape as tp
from .errors import (ConfigError, ContractError, NumericError, ProtocolError,
                     ShapeError, TrainingDivergenceError, UndefinedMetricError)
from .graphs import FederationDataset, LocalGraph, laplacian_powers
from .metrics import accuracy, auc
from .models import (ClassGaussian, SpectralGNNParams, VGAEParams, ce_path,
                     class_stat_paths, elbo_path, encoder_input, encoder_path,
                     gnn_forward, init_params, logits_path, params_to_leaves,
                     spectral_energy, stack_powers, vgae_encode)
from .rng import spawn_key, stream
from .semantic import SemanticClusterMap, alignment_path, build_semantic_map
from .structural import (SpectralEnergy, StructuralClusterMap,
                         alignment_loss_var, build_structural_map,
                         pairwise_chordal, regularizer_var)
from .theory import (ErrorFloorReport, HeterogeneityReport, error_floor,
                     measure_heterogeneity)

METHODS = ("fedssa", "fedavg", "local")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class RunConfig:
    """Hyperparameters of one federation run."""

    method: str = "fedssa"
    rounds: int = 50
    epochs: int = 3
    order: int = 6
    k_node: int = 3
    k_struct: int = 2
    lambda1: float = 1e-3
    lambda2: float = 1e-3
    lr: float = 0.01
    latent_dim: int = 8
    hidden: int = 32
    w_max: float = 5.0
    semantic: bool = True
    structural: bool = True
    use_mean_clustering: bool = False

    def validate(self) -> None:
        if self.method not in METHODS:
            raise ConfigError(f"unknown method {self.method!r}, expected one of {METHODS}")
        checks = (("rounds", self.rounds, 0), ("epochs", self.epochs, 0),
                  ("order", self.order, 0), ("k_node", self.k_node, 1),
                  ("k_struct", self.k_struct, 1), ("latent_dim", self.latent_dim, 1),
                  ("hidden", self.hidden, 1))
        for name, value, low in checks:
            if int(value) != value or value < low:
                raise ConfigError(f"{name} must be an integer >= {low}, got {value}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError("lambda1 and lambda2 must be >= 0")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.w_max <= 0:
            raise ConfigError(f"w_max must be positive, got {self.w_max}")


@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def fresh(cls, arrays: dict) -> "AdamState":
        return cls(m={k: np.zeros_like(a) for k, a in arrays.items()},
                   v={k: np.zeros_like(a) for k, a in arrays.items()}, t=0)

    def copy(self) -> "AdamState":
        return AdamState(m={k: a.copy() for k, a in self.m.items()},
                         v={k: a.copy() for k, a in self.v.items()}, t=self.t)


@dataclass
class ClientState:
    """One client's graph, parameters, optimizer state and caches."""

    client_id: int
    graph: LocalGraph
    num_classes: int
    task: str
    gnn: SpectralGNNParams
    vgae: VGAEParams
    adam: AdamState
    powers: list
    h_stack: np.ndarray
    x_in: np.ndarray
    nonedge_pool: np.ndarray
    last_losses: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ClientUpload:
    """Statistics a client shares; never raw features, labels or edges."""

    client_id: int
    coefficients: np.ndarray
    class_gaussians: tuple
    spectral_energy: Optional[SpectralEnergy]
    sample_counts: dict


@dataclass(frozen=True)
class ServerBroadcast:
    """Per-client representatives for the next round's alignment losses."""

    class_representatives: dict
    cluster_coefficients: Optional[np.ndarray]


@dataclass(frozen=True)
class ServerRound:
    """Broadcasts plus the cluster maps they were derived from."""

    broadcasts: dict
    semantic_map: Optional[SemanticClusterMap]
    structural_map: Optional[StructuralClusterMap]
    distance_ids: tuple
    distance_matrix: Optional[np.ndarray]


@dataclass(frozen=True)
class ClientRoundStats:
    ce: float
    vgae: float
    node: float
    struct: float
    train_metric: float
    val_metric: float
    test_metric: float
    bytes_up: int
    bytes_down: int

    def as_tuple(self) -> tuple:
        return (self.ce, self.vgae, self.node, self.struct, self.train_metric,
                self.val_metric, self.test_metric, self.bytes_up, self.bytes_down)


@dataclass
class RoundMetrics:
    round_index: int
    per_client: dict
    mean_train_metric: float
    mean_val_metric: float
    mean_test_metric: float
    heterogeneity: Optional[HeterogeneityReport]
    floor: Optional[ErrorFloorReport]
    distance_ids: tuple = ()
    distance_matrix: Optional[np.ndarray] = None
    wall_ms: float = 0.0

    def signature(self) -> tuple:
        """Canonical content tuple for equality checks; ignores wall time."""
        per_client = tuple((cid, self.per_client[cid].as_tuple())
                           for cid in sorted(self.per_client))
        het = None
        if self.heterogeneity is not None:
            h = self.heterogeneity
            het = (h.worst_delta_mu, h.worst_delta_sigma, h.worst_eps_u,
                   h.global_delta_mu, h.global_delta_sigma, h.global_eps_u)
        floor = self.floor.total if self.floor is not None else None
        return (self.round_index, per_client, self.mean_train_metric,
                self.mean_val_metric, self.mean_test_metric, het, floor)


# --- payload serialization (byte accounting and checkpoints) ----------------


def _gaussian_payload(g: ClassGaussian) -> dict:
    return {"label": g.label, "mean": g.mean.tolist(), "cov": g.cov.tolist(),
            "count": g.count}


def _energy_payload(e: SpectralEnergy) -> dict:
    return {"client_id": e.client_id, "s": e.s.tolist(), "q": e.q.tolist()}


def upload_payload(u: ClientUpload) -> dict:
    return {
        "client_id": u.client_id,
        "coefficients": u.coefficients.tolist(),
        "class_gaussians": [_gaussian_payload(g) for g in u.class_gaussians],
        "spectral_energy": _energy_payload(u.spectral_energy)
        if u.spectral_energy is not None else None,
        "sample_counts": {str(k): int(v) for k, v in sorted(u.sample_counts.items())},
    }


def broadcast_payload(b: ServerBroadcast) -> dict:
    return {
        "class_representatives": {str(label): _gaussian_payload(g)
                                  for label, g in sorted(b.class_representatives.items())},
        "cluster_coefficients": b.cluster_coefficients.tolist()
        if b.cluster_coefficients is not None else None,
    }


def params_payload(gnn: SpectralGNNParams, vgae: VGAEParams) -> dict:
    return {
        "K": gnn.order,
        "w": gnn.coefficients.tolist(),
        "head": {"w1": gnn.head_w1.tolist(), "b1": gnn.head_b1.tolist(),
                 "w2": gnn.head_w2.tolist(), "b2": gnn.head_b2.tolist(),
                 "w_max": gnn.w_max},
        "encoder": {"w1": vgae.enc_w1.tolist(), "b1": vgae.enc_b1.tolist(),
                    "mu_w": vgae.mu_w.tolist(), "mu_b": vgae.mu_b.tolist(),
                    "logvar_w": vgae.logvar_w.tolist(), "logvar_b": vgae.logvar_b.tolist()},
    }


def payload_nbytes(obj) -> int:
    return len(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8"))


# --- client side ------------------------------------------------------------


def _nonedge_candidates(g: LocalGraph) -> np.ndarray:
    if g.n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    iu, ju = np.triu_indices(g.n, k=1)
    absent = np.ones(iu.size, dtype=bool)
    if g.edges.size:
        flat_edges = g.edges[:, 0] * g.n + g.edges[:, 1]
        flat_pairs = iu * g.n + ju
        absent = ~np.isin(flat_pairs, flat_edges)
    return np.column_stack([iu[absent], ju[absent]])


def init_client_state(client_id: int, graph: LocalGraph, num_classes: int, task: str,
                      cfg: RunConfig, gnn: SpectralGNNParams,
                      vgae: VGAEParams) -> ClientState:
    powers = laplacian_powers(graph, cfg.order)
    state = ClientState(
        client_id=client_id, graph=graph, num_classes=num_classes, task=task,
        gnn=gnn, vgae=vgae,
        adam=AdamState.fresh(_param_arrays(gnn, vgae)),
        powers=powers, h_stack=stack_powers(powers),
        x_in=encoder_input(graph, num_classes),
        nonedge_pool=_nonedge_candidates(graph),
    )
    return state


def _param_arrays(gnn: SpectralGNNParams, vgae: VGAEParams) -> dict:
    return {
        "w": gnn.coefficients.reshape(1, -1),
        "head_w1": gnn.head_w1, "head_b1": gnn.head_b1,
        "head_w2": gnn.head_w2, "head_b2": gnn.head_b2,
        "enc_w1": vgae.enc_w1, "enc_b1": vgae.enc_b1,
        "mu_w": vgae.mu_w, "mu_b": vgae.mu_b,
        "logvar_w": vgae.logvar_w, "logvar_b": vgae.logvar_b,
    }


def _adam_step(arrays: dict, grads: dict, st: AdamState, lr: float) -> None:
    st.t += 1
    correct1 = 1.0 - ADAM_BETA1 ** st.t
    correct2 = 1.0 - ADAM_BETA2 ** st.t
    for name, arr in arrays.items():
        g = grads[name]
        st.m[name] = ADAM_BETA1 * st.m[name] + (1.0 - ADAM_BETA1) * g
        st.v[name] = ADAM_BETA2 * st.v[name] + (1.0 - ADAM_BETA2) * (g * g)
        step = lr * (st.m[name] / correct1) / (np.sqrt(st.v[name] / correct2) + ADAM_EPS)
        arr -= step


def _sample_pool(pool: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    if count <= 0 or pool.shape[0] == 0:
        return np.zeros((0, 2), dtype=np.int64)
    take = min(count, pool.shape[0])
    pick = np.sort(rng.choice(pool.shape[0], size=take, replace=False))
    return pool[pick]


def _loss_parts(state: ClientState, broadcast: Optional[ServerBroadcast],
                cfg: RunConfig, eps: np.ndarray, nonedges: np.ndarray) -> tuple:
    """Assemble one forward pass; returns (tape, leaves, parts dict)."""
    g = state.graph
    n, d = g.features.shape
    tape = tp.Tape()
    leaves = params_to_leaves(tape, state.gnn, state.vgae)
    _p, logits = logits_path(leaves, state.h_stack, n, d)
    ce = ce_path(logits, g.labels, g.train_idx, state.num_classes)
    mu, logvar = encoder_path(leaves, state.x_in)
    vgae_term = elbo_path(mu, logvar, g, eps, nonedges)
    total = tp.add(ce, vgae_term)
    node_term = None
    struct_term = None
    if cfg.method == "fedssa" and cfg.semantic and broadcast is not None \
            and broadcast.class_representatives:
        stats = class_stat_paths(mu, logvar, g)
        node_term = alignment_path(stats, broadcast.class_representatives)
        if node_term is not None:
            total = tp.add(total, node_term)
    if cfg.method == "fedssa" and cfg.structural:
        struct_term = regularizer_var(leaves["w"], cfg.lambda1, cfg.lambda2)
        if broadcast is not None and broadcast.cluster_coefficients is not None:
            struct_term = tp.add(
                alignment_loss_var(leaves["w"], broadcast.cluster_coefficients),
                struct_term)
        total = tp.add(total, struct_term)
    parts = {"ce": ce, "vgae": vgae_term, "node": node_term,
             "struct": struct_term, "total": total}
    return tape, leaves, parts


def client_round(state: ClientState, broadcast: Optional[ServerBroadcast],
                 cfg: RunConfig, seed: int,
                 round_index: int) -> tuple[ClientState, Optional[ClientUpload]]:
    """Train E local epochs, evaluate, and build this round's upload.

    A non-finite loss or gradient rolls parameters and optimizer state back
    to their values at round entry and raises TrainingDivergenceError.
    With epochs == 0 the parameters are untouched and the upload reflects
    the current state. Method "local" never constructs an upload.
    """
    g = state.graph
    n = g.n
    dz = cfg.latent_dim
    snapshot = (state.gnn.copy(), state.vgae.copy(), state.adam.copy())
    arrays = _param_arrays(state.gnn, state.vgae)
    for epoch in range(cfg.epochs):
        eps = stream(seed, "train-eps", round_index, epoch).standard_normal((n, dz))
        nonedges = _sample_pool(state.nonedge_pool, g.edges.shape[0],
                                stream(seed, "train-nonedges", round_index, epoch))
        try:
            tape, leaves, parts = _loss_parts(state, broadcast, cfg, eps, nonedges)
            loss = parts["total"]
            if not np.isfinite(loss.value).all():
                raise NumericError("non-finite loss")
            grads = tp.grad(tape, loss)
        except NumericError as exc:
            state.gnn, state.vgae, state.adam = snapshot
            raise TrainingDivergenceError(
                f"client {state.client_id} diverged in round {round_index}: {exc}") from exc
        named = {name: grads[var] for name, var in leaves.items()}
        _adam_step(arrays, named, state.adam, cfg.lr)
        np.clip(state.gnn.coefficients, -state.gnn.w_max, state.gnn.w_max,
                out=state.gnn.coefficients)
    # One evaluation pass on its own streams, recorded for round metrics.
    eval_eps = stream(seed, "eval-eps", round_index).standard_normal((n, dz))
    eval_nonedges = _sample_pool(state.nonedge_pool, g.edges.shape[0],
                                 stream(seed, "eval-nonedges", round_index))
    _tape, _leaves, parts = _loss_parts(state, broadcast, cfg, eval_eps, eval_nonedges)
    state.last_losses = {
        "ce": float(parts["ce"].value[0, 0]),
        "vgae": float(parts["vgae"].value[0, 0]),
        "node": float(parts["node"].value[0, 0]) if parts["node"] is not None else 0.0,
        "struct": float(parts["struct"].value[0, 0]) if parts["struct"] is not None else 0.0,
    }
    if cfg.method == "local":
        return state, None
    if cfg.method == "fedavg":
        return state, None
    gaussians: tuple = ()
    counts: dict = {}
    if g.train_idx.size:
        train_labels = g.labels[g.train_idx]
        counts = {int(c): int((train_labels == c).sum()) for c in np.unique(train_labels)}
    if cfg.semantic:
        gaussians = vgae_encode(state.vgae, g, state.num_classes).gaussians
    energy = None
    if cfg.structural:
        energy = spectral_energy(state.gnn, state.powers, state.client_id,
                                 stream(seed, "energy-jitter", round_index, state.client_id))
    return state, ClientUpload(
        client_id=state.client_id,
        coefficients=state.gnn.coefficients.copy(),
        class_gaussians=gaussians,
        spectral_energy=energy,
        sample_counts=counts,
    )


def evaluate_client(state: ClientState) -> dict:
    """Accuracy (or AUC for binary tasks) on each split; nan when undefined."""
    _p, logits = gnn_forward(state.gnn, state.powers)
    out = {}
    for split in ("train", "val", "test"):
        mask = state.graph.split(split)
        try:
            if state.task == "binary-auc":
                scores = logits[:, 1] - logits[:, 0]
                out[split] = auc(scores, state.graph.labels, mask, split).value
            else:
                out[split] = accuracy(logits, state.graph.labels, mask, split).value
        except UndefinedMetricError:
            out[split] = float("nan")
    return out


# --- server side -------------------------------------------------------------


def server_step(uploads, k_node: int, k_struct: int, seed: int,
                expected_clients=None, use_mean_clustering: bool = False) -> ServerRound:
    """Cluster this round's uploads and assemble per-client broadcasts."""
    if isinstance(uploads, dict):
        upload_list = [uploads[cid] for cid in sorted(uploads)]
    else:
        upload_list = list(uploads)
    by_id: dict = {}
    for u in upload_list:
        if u.client_id in by_id:
            raise ProtocolError(f"duplicate upload from client {u.client_id}")
        by_id[u.client_id] = u
    if expected_clients is not None:
        missing = sorted(set(expected_clients) - set(by_id))
        if missing:
            raise ProtocolError(f"missing upload from client {missing[0]}")
    if not by_id:
        raise ProtocolError("server_step received no uploads")
    lengths = {u.coefficients.size for u in by_id.values()}
    if len(lengths) > 1:
        raise ShapeError(f"coefficient lengths differ across clients: {sorted(lengths)}")
    semantic_map = None
    sem_inputs = {cid: u.class_gaussians for cid, u in by_id.items() if u.class_gaussians}
    if sem_inputs:
        semantic_map = build_semantic_map(sem_inputs, k_node, seed,
                                          use_means=use_mean_clustering)
    structural_map = None
    energies = [u.spectral_energy for u in by_id.values() if u.spectral_energy is not None]
    distance_ids: tuple = ()
    distance_matrix = None
    if energies:
        coefficients = {u.client_id: u.coefficients for u in by_id.values()
                        if u.spectral_energy is not None}
        structural_map = build_structural_map(energies, coefficients, k_struct, seed)
        ids, distance_matrix = pairwise_chordal(energies)
        distance_ids = tuple(ids)
    broadcasts = {}
    for cid in sorted(by_id):
        reps = {}
        if semantic_map is not None:
            for gaussian in by_id[cid].class_gaussians:
                rep = semantic_map.representative_for(gaussian.label, cid)
                if rep is not None:
                    reps[gaussian.label] = rep
        coeffs = None
        if structural_map is not None and cid in structural_map.assignments:
            coeffs = structural_map.coefficients_for(cid).copy()
        broadcasts[cid] = ServerBroadcast(class_representatives=reps,
                                          cluster_coefficients=coeffs)
    return ServerRound(broadcasts=broadcasts, semantic_map=semantic_map,
                       structural_map=structural_map, distance_ids=distance_ids,
                       distance_matrix=distance_matrix)


def server_round(uploads, k_node: int, k_struct: int, seed: int,
                 expected_clients=None) -> dict:
    """Documented server contract: uploads in, {client_id: broadcast} out."""
    return server_step(uploads, k_node, k_struct, seed,
                       expected_clients=expected_clients).broadcasts


def _fedavg_average(states: list) -> dict:
    """Uniform mean of every named parameter array across clients."""
    names = _param_arrays(states[0].gnn, states[0].vgae).keys()
    stacked = {name: np.mean([_param_arrays(s.gnn, s.vgae)[name] for s in states], axis=0)
               for name in names}
    return stacked


def _apply_params(state: ClientState, mean: dict) -> None:
    arrays = _param_arrays(state.gnn, state.vgae)
    for name, arr in arrays.items():
        arr[...] = mean[name]


# --- top-level loop ----------------------------------------------------------


@dataclass(frozen=True)
class FederationResult:
    """Round history plus the final client states (for checkpointing)."""

    history: list
    states: list


def run_federation_detailed(dataset: FederationDataset, cfg: RunConfig, seed: int,
                            client_order=None,
                            dump_distances: bool = False) -> FederationResult:
    """Run T synchronous rounds; return per-round metrics and final states.

    client_order optionally fixes the schedule clients train in; it must be
    a permutation of range(M) and cannot affect any result (asserted by the
    test suite, guaranteed by id-keyed streams and id-sorted aggregation).
    """
    cfg.validate()
    if dataset.num_clients < 1:
        raise ContractError("federation needs at least one client")
    if cfg.method == "fedssa" and cfg.structural \
            and dataset.feature_dim < cfg.order + 1:
        raise ConfigError(f"feature dim {dataset.feature_dim} must be >= order+1"
                          f" = {cfg.order + 1} for spectral-energy frames")
    m = dataset.num_clients
    order = list(range(m)) if client_order is None else [int(i) for i in client_order]
    if sorted(order) != list(range(m)):
        raise ContractError("client_order must be a permutation of range(num_clients)")
    init_rng = stream(seed, "init")
    gnn0, vgae0 = init_params(dataset.feature_dim, dataset.num_classes, cfg.order,
                              cfg.hidden, cfg.latent_dim, cfg.w_max, init_rng)
    states = [init_client_state(i, g, dataset.num_classes, dataset.task, cfg,
                                gnn0.copy(), vgae0.copy())
              for i, g in enumerate(dataset.clients)]
    broadcasts: dict = {}
    history: list[RoundMetrics] = []
    for round_index in range(1, cfg.rounds + 1):
        t_start = time.perf_counter()
        uploads: dict = {}
        split_metrics: dict = {}
        for cid in order:
            state, upload = client_round(states[cid], broadcasts.get(cid), cfg,
                                         seed, round_index)
            states[cid] = state
            if upload is not None:
                uploads[cid] = upload
            split_metrics[cid] = evaluate_client(state)
        bytes_up = {cid: 0 for cid in range(m)}
        bytes_down = {cid: 0 for cid in range(m)}
        heterogeneity = None
        floor = None
        distance_ids: tuple = ()
        distance_matrix = None
        if cfg.method == "fedssa":
            server = server_step(uploads, cfg.k_node, cfg.k_struct,
                                 spawn_key(seed, "server", round_index),
                                 expected_clients=range(m),
                                 use_mean_clustering=cfg.use_mean_clustering)
            broadcasts = server.broadcasts
            for cid, up in uploads.items():
                bytes_up[cid] = payload_nbytes(upload_payload(up))
            for cid, bc in broadcasts.items():
                bytes_down[cid] = payload_nbytes(broadcast_payload(bc))
            heterogeneity = measure_heterogeneity(
                {cid: up.class_gaussians for cid, up in uploads.items()},
                [up.spectral_energy for up in uploads.values()
                 if up.spectral_energy is not None],
                server.semantic_map, server.structural_map)
            floor = error_floor(heterogeneity, cfg.order, cfg.lambda1, cfg.lambda2)
            if dump_distances:
                distance_ids = server.distance_ids
                distance_matrix = server.distance_matrix
        elif cfg.method == "fedavg":
            mean = _fedavg_average(states)
            for cid in range(m):
                bytes_up[cid] = payload_nbytes(params_payload(states[cid].gnn,
                                                              states[cid].vgae))
            for state in states:
                _apply_params(state, mean)
            size = payload_nbytes(params_payload(states[0].gnn, states[0].vgae))
            for cid in range(m):
                bytes_down[cid] = size
        per_client = {}
        for cid in range(m):
            losses = states[cid].last_losses
            metric = split_metrics[cid]
            per_client[cid] = ClientRoundStats(
                ce=losses["ce"], vgae=losses["vgae"], node=losses["node"],
                struct=losses["struct"], train_metric=metric["train"],
                val_metric=metric["val"], test_metric=metric["test"],
                bytes_up=bytes_up[cid], bytes_down=bytes_down[cid])
        means = {}
        for split in ("train", "val", "test"):
            vals = [split_metrics[cid][split] for cid in range(m)
                    if np.isfinite(split_metrics[cid][split])]
            means[split] = float(np.mean(vals)) if vals else float("nan")
        history.append(RoundMetrics(
            round_index=round_index, per_client=per_client,
            mean_train_metric=means["train"], mean_val_metric=means["val"],
            mean_test_metric=means["test"], heterogeneity=heterogeneity,
            floor=floor, distance_ids=distance_ids, distance_matrix=distance_matrix,
            wall_ms=(time.perf_counter() - t_start) * 1e3))
    return FederationResult(history=history, states=states)


def run_federation(dataset: FederationDataset, cfg: RunConfig, seed: int,
                   client_order=None, dump_distances: bool = False) -> list:
    """Run T synchronous rounds and return the per-round metrics list."""
    return run_federation_detailed(dataset, cfg, seed, client_order=client_order,
                                   dump_distances=dump_distances).history
