"""Self-prompt graph learning: contrastive pretraining plus adapter tuning."""

from .errors import SelfProError
from .graphs import (
    EdgeSplit,
    Graph,
    SplitSpec,
    generate_sbm,
    homophily_ratio,
    identity_graph,
    load_graph,
    sample_k_shot,
    save_graph,
    split_edges,
    two_hop_graph,
)
from .model import (
    EncoderParams,
    ProjectorParams,
    TrainState,
    ema_update,
    encode,
    grad_check,
    init_params,
    load_checkpoint,
    normalize_adjacency,
    project,
    save_checkpoint,
)
from .pretrain import PretrainConfig, graphacl_loss, pretrain, sample_negatives, smoothing_loss
from .prompt import (
    PromptConfig,
    PrototypeSet,
    TokenSet,
    build_tokens,
    contextual_tokens,
    init_prototypes,
    inject,
    predict_class,
    predict_classes,
    score_link,
    semantic_tokens,
    similarity,
    structural_tokens,
    tune_link_prediction,
    tune_node_classification,
)
from .harness import (
    EvalReport,
    accuracy,
    auc,
    average_precision,
    emit_report,
    parameter_audit,
    run_ablation,
    run_few_shot,
    run_link_prediction,
    shot_sweep,
)
from .estimators import ContrastivePretrainer, PromptLinkPredictor, PromptNodeClassifier

__version__ = "0.1.0"

__all__ = [
    "SelfProError",
    "Graph", "SplitSpec", "EdgeSplit",
    "load_graph", "save_graph", "two_hop_graph", "identity_graph",
    "sample_k_shot", "split_edges", "generate_sbm", "homophily_ratio",
    "EncoderParams", "ProjectorParams", "TrainState",
    "init_params", "normalize_adjacency", "encode", "project", "ema_update",
    "grad_check", "save_checkpoint", "load_checkpoint",
    "PretrainConfig", "sample_negatives", "graphacl_loss", "smoothing_loss", "pretrain",
    "PromptConfig", "TokenSet", "PrototypeSet",
    "similarity", "contextual_tokens", "semantic_tokens", "structural_tokens",
    "inject", "build_tokens", "init_prototypes",
    "tune_node_classification", "predict_class", "predict_classes",
    "tune_link_prediction", "score_link",
    "EvalReport", "accuracy", "auc", "average_precision",
    "run_few_shot", "run_link_prediction", "run_ablation", "shot_sweep",
    "parameter_audit", "emit_report",
    "ContrastivePretrainer", "PromptNodeClassifier", "PromptLinkPredictor",
]
