"""Deterministic desk-scale simulator for graph federated learning with
semantic (class-wise Gaussian) and structural (spectral-energy) alignment,
plus the matching theory diagnostics (KL bounds, filter stability,
contraction/error-floor analysis).
"""

from .cluster import kmeans
from .config import (ExperimentConfig, PartitionSpec, build_dataset,
                     build_global_graph, load_config, parse_config,
                     two_regime_federation)
from .errors import (ConfigError, ContractError, FedssaError, InfeasibleError,
                     NumericError, ProtocolError, RankError, ShapeError,
                     SymmetryError, TrainingDivergenceError,
                     UndefinedMetricError)
from .federation import (ClientUpload, RoundMetrics, RunConfig, ServerBroadcast,
                         client_round, evaluate_client, run_federation,
                         run_federation_detailed, server_round, server_step)
from .graphs import (FederationDataset, LocalGraph, SynthSpec, homophily_ratio,
                     laplacian_powers, load_dataset, load_graph,
                     normalized_laplacian, partition_nonoverlap,
                     partition_overlap, save_dataset, save_graph,
                     stratified_split, synth_dataset)
from .linalg import min_eigenvalue, qr_thin, sym_eig_small
from .metrics import accuracy, auc
from .models import (ClassGaussian, SpectralGNNParams, VGAEParams, ce_loss,
                     elbo_loss, gnn_forward, init_params, reparameterize,
                     spectral_energy, vgae_encode)
from .rng import spawn_key, stream
from .semantic import (GaussianMixture, SemanticClusterMap, cluster_moments,
                       gaussian_kl, gmm_of_cluster, build_semantic_map,
                       semantic_alignment_loss, semantic_cluster)
from .structural import (SpectralEnergy, StructuralClusterMap, chordal_distance,
                         build_structural_map, coeff_perturb_bound,
                         coefficient_alignment_loss, coefficient_regularizer,
                         filter_lipschitz_bound, pairwise_chordal,
                         projection_embedding, structural_cluster)
from .tape import Tape, Var, grad
from .theory import (ContractionResult, ErrorFloorReport, HeterogeneityReport,
                     KLAudit, contraction_simulate, error_floor, kl_bound_audit,
                     measure_heterogeneity, rounds_to_reach)

__version__ = "0.1.0"

__all__ = [
    "ClassGaussian", "ClientUpload", "ConfigError", "ContractError",
    "ContractionResult", "ErrorFloorReport", "ExperimentConfig", "FedssaError",
    "FederationDataset", "GaussianMixture", "HeterogeneityReport",
    "InfeasibleError", "KLAudit", "LocalGraph", "NumericError",
    "PartitionSpec", "ProtocolError", "RankError", "RoundMetrics",
    "RunConfig", "SemanticClusterMap", "ServerBroadcast", "ShapeError",
    "SpectralEnergy", "SpectralGNNParams", "StructuralClusterMap",
    "SymmetryError", "SynthSpec", "Tape", "TrainingDivergenceError",
    "UndefinedMetricError", "VGAEParams", "Var", "accuracy", "auc",
    "build_dataset", "build_global_graph", "build_semantic_map",
    "build_structural_map", "ce_loss", "chordal_distance", "client_round",
    "cluster_moments", "coeff_perturb_bound", "coefficient_alignment_loss",
    "coefficient_regularizer", "contraction_simulate", "elbo_loss",
    "error_floor", "evaluate_client", "filter_lipschitz_bound", "gaussian_kl",
    "gmm_of_cluster", "gnn_forward", "grad", "homophily_ratio", "init_params",
    "kl_bound_audit", "kmeans", "laplacian_powers", "load_config",
    "load_dataset", "load_graph", "measure_heterogeneity", "min_eigenvalue",
    "normalized_laplacian", "pairwise_chordal", "parse_config",
    "partition_nonoverlap", "partition_overlap", "projection_embedding",
    "qr_thin", "reparameterize", "rounds_to_reach", "run_federation",
    "run_federation_detailed", "save_dataset", "save_graph",
    "semantic_alignment_loss", "semantic_cluster", "server_round",
    "server_step", "spawn_key", "spectral_energy", "stratified_split",
    "stream", "structural_cluster", "sym_eig_small", "synth_dataset",
    "two_regime_federation", "vgae_encode",
]
