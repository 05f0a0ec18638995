"""sklearn-style detector: ``fit`` on day graphs, score target-day transactions."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import nn
from .metrics import ScoredDay, anomaly_score, concat_days, select_threshold
from .sampler import SamplerConfig
from .txgraph import TransactionGraph


def _as_graph_list(graphs) -> list[TransactionGraph]:
    if isinstance(graphs, TransactionGraph):
        return [graphs]
    graphs = list(graphs)
    if not graphs or not all(isinstance(g, TransactionGraph) for g in graphs):
        raise TypeError("expected a TransactionGraph or a non-empty sequence of them")
    return graphs


class GraphGuard(BaseEstimator):
    """Self-supervised contrastive fraud scorer over transaction graphs.

    ``fit`` trains the GNN/discriminator on instance pairs drawn from the
    given day graphs (labels are never used). ``score_day`` returns the
    multi-round anomaly score of every target-day transaction of a graph;
    larger means more anomalous. ``calibrate`` tunes the F1 threshold used
    by ``predict`` on labelled validation graphs.

    ``multi_relational=True`` switches to the R-GCN on per-relation
    subgraph adjacencies, ``weighted=True`` to time-weighted walks.
    """

    def __init__(self, subgraph_size=2, restart_prob=0.5, weighted=False, multi_relational=False,
                 rounds=64, epsilon=1e-6, epochs=40, learning_rate=1e-4, batch_size=1024,
                 embedding_dim=8, random_state=0):
        self.subgraph_size = subgraph_size
        self.restart_prob = restart_prob
        self.weighted = weighted
        self.multi_relational = multi_relational
        self.rounds = rounds
        self.epsilon = epsilon
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.embedding_dim = embedding_dim
        self.random_state = random_state

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(subgraph_size=self.subgraph_size, restart_prob=self.restart_prob,
                             weighted=self.weighted, multi_relational=self.multi_relational,
                             rounds=self.rounds, epsilon=self.epsilon)

    def train_config(self) -> nn.TrainConfig:
        return nn.TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate,
                              batch_size=self.batch_size, embedding_dim=self.embedding_dim,
                              seed=int(self.random_state))

    def fit(self, graphs, y=None, params=None):
        graphs = _as_graph_list(graphs)
        self.params_, self.history_ = nn.train(graphs, self.sampler_config(), self.train_config(),
                                               params=params)
        self.n_features_in_ = graphs[0].n_features
        self.relations_ = graphs[0].relations
        return self

    def set_fitted_params(self, params, relations=None):
        """Install trained parameters (e.g. from a checkpoint) without training."""
        if nn.is_relational(params) != bool(self.multi_relational):
            raise ValueError("checkpoint model type does not match multi_relational")
        self.params_ = {k: np.asarray(v, dtype=np.float64) for k, v in params.items()}
        self.history_ = {"batch_loss": [], "epoch_loss": []}
        first = self.params_["W_rel"][0] if "W_rel" in self.params_ else self.params_["W"]
        self.n_features_in_ = first.shape[0]
        self.relations_ = relations
        return self

    def _score_rng(self, graph: TransactionGraph) -> np.random.Generator:
        # keyed by the graph's target day so scores do not depend on call order
        day = int(graph.days[graph.target_nodes[0]]) if graph.target_nodes.size else 0
        return np.random.default_rng([int(self.random_state), 0x5C0E, day])

    def score_day(self, graph: TransactionGraph) -> ScoredDay:
        check_is_fitted(self, "params_")
        if graph.n_features != self.n_features_in_:
            raise ValueError(f"graph has {graph.n_features} features, model expects {self.n_features_in_}")
        targets, s_pos, s_neg = nn.score_rounds(self.params_, graph, self.sampler_config(),
                                                self._score_rng(graph))
        day = int(graph.days[targets[0]]) if targets.size else -1
        return ScoredDay(day=day, tx_ids=graph.tx_ids[targets], scores=anomaly_score(s_neg, s_pos),
                         labels=graph.labels[targets])

    def score_samples(self, graph: TransactionGraph) -> np.ndarray:
        """sklearn convention (higher = more normal): the negated anomaly score."""
        return -self.score_day(graph).scores

    def calibrate(self, graphs):
        days = [self.score_day(g) for g in _as_graph_list(graphs)]
        val = concat_days(days)
        self.threshold_ = select_threshold(val.scores, val.labels)
        return self

    def decision_function(self, graph: TransactionGraph) -> np.ndarray:
        """Anomaly score minus the calibrated threshold; positive means fraud."""
        check_is_fitted(self, "threshold_")
        return self.score_day(graph).scores - self.threshold_

    def predict(self, graph: TransactionGraph) -> np.ndarray:
        """1 for transactions flagged as fraud, 0 otherwise."""
        return (self.decision_function(graph) > 0).astype(np.int64)

    def save(self, path) -> None:
        check_is_fitted(self, "params_")
        nn.save_checkpoint(path, self.params_)
