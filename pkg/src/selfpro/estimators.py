"""Scikit-learn style estimators wrapping the pretraining and tuning pipeline.

These follow the fit/transform/predict and get_params conventions so the
pipeline composes with the wider ecosystem (cloning, grid search over the
prompt hyperparameters, etc.). Inputs are Graph objects rather than feature
matrices; node-level predictions take node-id arrays, which keeps the
transductive setting explicit.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .graphs import EdgeSplit, Graph, SplitSpec, check_graph, split_edges
from .model import TrainState, load_checkpoint
from .pretrain import PretrainConfig, pretrain
from .prompt import (
    PromptConfig,
    predict_classes,
    score_links,
    tune_link_prediction,
    tune_node_classification,
)


def _check_fitted(est, attr: str):
    if not hasattr(est, attr):
        raise NotFittedError(f"{type(est).__name__} is not fitted yet; call fit first")


def _resolve_state(pretrained) -> TrainState:
    if isinstance(pretrained, TrainState):
        return pretrained
    if isinstance(pretrained, ContrastivePretrainer):
        _check_fitted(pretrained, "state_")
        return pretrained.state_
    if isinstance(pretrained, (str, bytes)) or hasattr(pretrained, "__fspath__"):
        return load_checkpoint(pretrained)[0]
    raise TypeError("pretrained must be a TrainState, a fitted ContrastivePretrainer "
                    "or a checkpoint path")


class ContrastivePretrainer(BaseEstimator):
    """Unsupervised encoder/projector pretraining on a single graph.

    fit(graph) runs the configured contrastive pretext; transform(graph)
    returns frozen node embeddings. The fitted ``state_`` plugs into the
    prompt estimators below.
    """

    def __init__(self, hidden_dim=256, embed_dim=256, encoder_depth=2, projector_depth=1,
                 tau=0.5, lr=5e-4, epochs=400, n_negatives=256, ema_momentum=0.99,
                 sgd_momentum=0.9, pretext="graphacl", negatives_use_projector=False,
                 seed=0):
        self.hidden_dim = hidden_dim
        self.embed_dim = embed_dim
        self.encoder_depth = encoder_depth
        self.projector_depth = projector_depth
        self.tau = tau
        self.lr = lr
        self.epochs = epochs
        self.n_negatives = n_negatives
        self.ema_momentum = ema_momentum
        self.sgd_momentum = sgd_momentum
        self.pretext = pretext
        self.negatives_use_projector = negatives_use_projector
        self.seed = seed

    def _config(self) -> PretrainConfig:
        return PretrainConfig(
            epochs=self.epochs, lr=self.lr, tau=self.tau, n_negatives=self.n_negatives,
            ema_momentum=self.ema_momentum, pretext=self.pretext,
            sgd_momentum=self.sgd_momentum,
            negatives_use_projector=self.negatives_use_projector,
            hidden_dim=self.hidden_dim, embed_dim=self.embed_dim,
            encoder_depth=self.encoder_depth, projector_depth=self.projector_depth,
            seed=self.seed)

    def fit(self, graph: Graph, y=None):
        check_graph(graph)
        self.state_, self.loss_trace_ = pretrain(graph, self._config())
        return self

    def transform(self, graph: Graph) -> np.ndarray:
        from .model import encode

        _check_fitted(self, "state_")
        return encode(self.state_.online, graph)

    def fit_transform(self, graph: Graph, y=None) -> np.ndarray:
        return self.fit(graph).transform(graph)


class PromptNodeClassifier(BaseEstimator):
    """Few-shot node classifier: frozen encoder, tuned projector adapter.

    fit(graph, split) builds prompt tokens and class prototypes, then tunes
    only the projector. predict(node_ids) classifies by nearest projected
    prototype. The setting is transductive: predictions refer to nodes of
    the graph seen at fit time.
    """

    def __init__(self, pretrained=None, mode="none", injection="fixed", mu=0.5,
                 sim_kind="dot", tau_tune=0.5, tune_lr=0.01, tune_epochs=200,
                 two_hop_mode="union", patience=50, tune_momentum=0.9, seed=0):
        self.pretrained = pretrained
        self.mode = mode
        self.injection = injection
        self.mu = mu
        self.sim_kind = sim_kind
        self.tau_tune = tau_tune
        self.tune_lr = tune_lr
        self.tune_epochs = tune_epochs
        self.two_hop_mode = two_hop_mode
        self.patience = patience
        self.tune_momentum = tune_momentum
        self.seed = seed

    def _config(self) -> PromptConfig:
        return PromptConfig(
            mode=self.mode, injection=self.injection, mu=self.mu, sim_kind=self.sim_kind,
            tau_tune=self.tau_tune, tune_lr=self.tune_lr, tune_epochs=self.tune_epochs,
            two_hop_mode=self.two_hop_mode, patience=self.patience,
            tune_momentum=self.tune_momentum, seed=self.seed)

    def fit(self, graph: Graph, split: SplitSpec, labels=None):
        check_graph(graph)
        state = _resolve_state(self.pretrained)
        tuned = tune_node_classification(state, graph, split, self._config(), labels)
        self.projector_ = tuned.projector
        self.prototypes_ = tuned.prototypes
        self.tokens_ = tuned.tokens
        self.loss_trace_ = tuned.trace
        self.best_epoch_ = tuned.best_epoch
        self.classes_ = tuned.prototypes.class_ids
        return self

    def predict(self, node_ids) -> np.ndarray:
        _check_fitted(self, "projector_")
        return predict_classes(self.projector_, self.prototypes_, self.tokens_,
                               node_ids, self.sim_kind)

    def score(self, node_ids, y) -> float:
        return float(np.mean(self.predict(node_ids) == np.asarray(y)))


class PromptLinkPredictor(BaseEstimator):
    """Link scorer: frozen encoder, projector tuned on observed edges.

    fit(graph) treats the given graph's edges as the training positives
    (pass the graph restricted to training edges to avoid leakage);
    decision_function(pairs) returns dot-product scores of projected tokens.
    """

    def __init__(self, pretrained=None, mode="none", injection="fixed", mu=0.5,
                 sim_kind="dot", tau_tune=0.5, tune_lr=0.01, tune_epochs=200,
                 two_hop_mode="union", patience=50, tune_momentum=0.9, seed=0):
        self.pretrained = pretrained
        self.mode = mode
        self.injection = injection
        self.mu = mu
        self.sim_kind = sim_kind
        self.tau_tune = tau_tune
        self.tune_lr = tune_lr
        self.tune_epochs = tune_epochs
        self.two_hop_mode = two_hop_mode
        self.patience = patience
        self.tune_momentum = tune_momentum
        self.seed = seed

    def _config(self) -> PromptConfig:
        return PromptConfig(
            mode=self.mode, injection=self.injection, mu=self.mu, sim_kind=self.sim_kind,
            tau_tune=self.tau_tune, tune_lr=self.tune_lr, tune_epochs=self.tune_epochs,
            two_hop_mode=self.two_hop_mode, patience=self.patience,
            tune_momentum=self.tune_momentum, seed=self.seed)

    def fit(self, graph: Graph, edge_split: EdgeSplit | None = None):
        check_graph(graph)
        state = _resolve_state(self.pretrained)
        if edge_split is None:
            empty = np.empty((0, 2), dtype=np.int64)
            edge_split = EdgeSplit(graph.edges, empty, empty, empty, empty, self.seed)
        tuned = tune_link_prediction(state, graph, edge_split, self._config())
        self.projector_ = tuned.projector
        self.tokens_ = tuned.tokens
        self.loss_trace_ = tuned.trace
        self.best_epoch_ = tuned.best_epoch
        return self

    def decision_function(self, pairs) -> np.ndarray:
        _check_fitted(self, "projector_")
        return score_links(self.projector_, self.tokens_, pairs)

    def predict(self, pairs) -> np.ndarray:
        return self.decision_function(pairs)
