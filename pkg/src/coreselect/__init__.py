"""Multimodal coreset selection engine.

Pipeline: load embeddings -> fine-tune dimension-preserving adapters ->
score samples for semantic alignment and local diversity -> solve the
ratio-constrained binary selection by relaxed gradient descent.
"""

from .adapter import (
    AdaptConfig,
    AdapterParams,
    adapter_forward,
    fit_adapters,
    infonce_loss,
    load_adapters,
    save_adapters,
)
from .scoring import (
    ScoreVector,
    compute_scores,
    load_scores,
    sample_diversity,
    save_scores,
    score_report,
    semantic_alignment,
)
from .selector import (
    SelectConfig,
    SelectionState,
    emit_manifest,
    loss_ratio,
    loss_sa,
    loss_sd,
    optimize_selection,
)
from .store import (
    ClassTextBank,
    EmbeddingTable,
    l2_normalize_rows,
    load_store,
    save_store,
)
from .synth import GroundTruth, SynthSpec, generate, selection_metrics

__all__ = [
    "AdaptConfig",
    "AdapterParams",
    "ClassTextBank",
    "EmbeddingTable",
    "GroundTruth",
    "ScoreVector",
    "SelectConfig",
    "SelectionState",
    "SynthSpec",
    "adapter_forward",
    "compute_scores",
    "emit_manifest",
    "fit_adapters",
    "generate",
    "infonce_loss",
    "l2_normalize_rows",
    "load_adapters",
    "load_scores",
    "load_store",
    "loss_ratio",
    "loss_sa",
    "loss_sd",
    "optimize_selection",
    "sample_diversity",
    "save_adapters",
    "save_scores",
    "save_store",
    "score_report",
    "selection_metrics",
    "semantic_alignment",
]

__version__ = "0.1.0"
