"""scikit-learn style front ends: a node selector and the node classifier."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import selection as sel
from .enhance import BudgetLedger, EnhancementCache, EnhancementPolicy, Enhancer, LLM_CALLS
from .gnn import TrainConfig, predict_logits, train
from .metrics import accuracy
from .sampler import SamplerConfig
from .validation import check_graph, check_graph_features, check_node_ids, check_probability


class NodeSelector(BaseEstimator):
    """Scores every node with one heuristic and keeps the first ``budget`` in priority order.

    Parameters
    ----------
    method : {"pagerank", "density", "textlen", "degree", "combined"}
    budget : int, optional
        Candidate-set size. Ignored for ``degree``, which uses ``percentile``.
    percentile : float, default=10
        Share of nodes (lowest degree first) for the degree heuristic.
    alpha : float, default=0.5
        PageRank weight in the combined score.
    direction : {"ascending", "descending"}
        PageRank sort direction.
    num_clusters : int, optional
        k for k-means; defaults to the number of classes.
    """

    _ALIASES = {"density": "cluster_density", "textlen": "text_length"}

    def __init__(self, method="textlen", budget=None, percentile=10.0, alpha=0.5, direction="ascending",
                 damping=0.85, tol=1e-9, max_iter=200, num_clusters=None, kmeans_max_iter=300,
                 random_state=0, stopwords=None):
        self.method = method
        self.budget = budget
        self.percentile = percentile
        self.alpha = alpha
        self.direction = direction
        self.damping = damping
        self.tol = tol
        self.max_iter = max_iter
        self.num_clusters = num_clusters
        self.kmeans_max_iter = kmeans_max_iter
        self.random_state = random_state
        self.stopwords = stopwords

    def _density(self, graph, features):
        if features is None:
            raise ValueError(f"method {self.method!r} needs node features")
        k = self.num_clusters or graph.num_classes
        return sel.cluster_density_scores(features, k, seed=self.random_state, max_iter=self.kmeans_max_iter)

    def fit(self, graph, features=None):
        graph = check_graph(graph)
        method = self._ALIASES.get(self.method, self.method)
        if method == "degree":
            self.scores_ = sel.degree_scores(graph)
            self.candidate_set_ = sel.select_by_degree(graph, self.percentile)
            return self
        if self.budget is None:
            raise ValueError(f"method {self.method!r} needs a budget")
        if method == "pagerank":
            self.scores_ = sel.pagerank_scores(graph, self.damping, self.tol, self.max_iter)
            self.candidate_set_ = sel.select_by_pagerank(self.scores_, self.budget, self.direction)
        elif method == "cluster_density":
            self.scores_ = self._density(graph, features)
            self.candidate_set_ = sel.select_by_density(self.scores_, self.budget)
        elif method == "text_length":
            self.scores_ = sel.text_length_scores(graph, self.stopwords)
            self.candidate_set_ = sel.select_by_text_length(self.scores_, self.budget)
        elif method == "combined":
            pr = sel.pagerank_scores(graph, self.damping, self.tol, self.max_iter)
            self.scores_ = sel.combine_scores(pr, self._density(graph, features), self.alpha)
            self.candidate_set_ = sel.select_by_combined(self.scores_, self.budget)
        else:
            raise ValueError(f"unknown selection method {self.method!r}")
        return self

    def select(self, k):
        """The first ``k`` candidates of the fitted priority order."""
        check_is_fitted(self, "scores_")
        s = self.scores_
        if s.method == "pagerank":
            return sel.select_by_pagerank(s, k, self.direction)
        return sel._take(sel._ordered(s.scores), k, s.method)


class ELLaGNNClassifier(ClassifierMixin, BaseEstimator):
    """Mean-aggregation GNN trained with budgeted on-demand LLM enhancement.

    ``fit`` takes a graph and its unit-norm feature matrix, plus optional
    enhancement collaborators. With ``p == 0`` or no candidate set it is the
    plain baseline. ``predict`` never calls an LLM.
    """

    def __init__(self, num_layers=2, hidden_dim=256, learning_rate=0.01, weight_decay=5e-4, epochs=300,
                 batch_size=512, dropout_rate=0.5, optimizer="adam", fanout=25, top_k=5, p=0.0,
                 enhance_query_nodes=True, max_inflight=1, max_calls=None, random_state=0):
        self.num_layers = num_layers
        self.hidden_dim = hidden_dim
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.dropout_rate = dropout_rate
        self.optimizer = optimizer
        self.fanout = fanout
        self.top_k = top_k
        self.p = p
        self.enhance_query_nodes = enhance_query_nodes
        self.max_inflight = max_inflight
        self.max_calls = max_calls
        self.random_state = random_state

    def _train_config(self):
        return TrainConfig(
            num_layers=self.num_layers, hidden_dim=self.hidden_dim, learning_rate=self.learning_rate,
            weight_decay=self.weight_decay, epochs=self.epochs, batch_size=self.batch_size,
            seed=self.random_state, optimizer=self.optimizer, dropout_rate=self.dropout_rate,
        )

    def _sampler_config(self):
        return SamplerConfig(fanout=self.fanout, top_k=self.top_k, num_hops=self.num_layers)

    def fit(self, graph, features, candidate_set=None, llm=None, embedder=None, catalog=None,
            ledger=None, cache=None, on_epoch=None):
        graph, features = check_graph_features(graph, features)
        check_probability(self.p)
        enhancer = None
        if candidate_set is not None and llm is not None:
            if embedder is None:
                raise ValueError("enhancement needs an embedder for the LLM output")
            policy = EnhancementPolicy(self.p, candidate_set, self.enhance_query_nodes)
            enhancer = Enhancer(
                policy, catalog, llm, embedder,
                ledger=ledger if ledger is not None else BudgetLedger(self.max_calls),
                cache=cache if cache is not None else EnhancementCache(),
                run_seed=self.random_state, max_inflight=self.max_inflight,
            )
        result = train(graph, features, self._train_config(), self._sampler_config(), enhancer, on_epoch)
        self.params_ = result.params
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.best_val_acc_ = result.best_val_acc
        self.enhancer_ = enhancer
        self.classes_ = np.arange(graph.num_classes)
        self.n_features_in_ = features.shape[1]
        return self

    def _nodes(self, graph, nodes):
        if nodes is None:
            return graph.nodes_in("test")
        return check_node_ids(nodes, graph.num_nodes)

    def decision_function(self, graph, features, nodes=None):
        check_is_fitted(self, "params_")
        graph, features = check_graph_features(graph, features)
        return predict_logits(self.params_, graph, features, self._sampler_config(), self.random_state,
                              self._nodes(graph, nodes))

    def predict_proba(self, graph, features, nodes=None):
        logits = self.decision_function(graph, features, nodes)
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, graph, features, nodes=None):
        """LLM-free labels for ``nodes`` (default: the test split)."""
        before = LLM_CALLS.value
        labels = self.decision_function(graph, features, nodes).argmax(axis=1)
        self.predict_llm_calls_ = LLM_CALLS.value - before
        return labels

    def score(self, graph, features, nodes=None):
        nodes = self._nodes(graph, nodes)
        return accuracy(self.predict(graph, features, nodes), graph.labels[nodes])
