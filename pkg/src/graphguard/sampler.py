"""Contrastive instance-pair sampling: target order, RWR subgraphs, anonymization."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .txgraph import MultiRelSubgraph, TransactionGraph, batch_adjacency, to_multi_relational

POSITIVE, NEGATIVE = 1, 0


@dataclass(frozen=True)
class SamplerConfig:
    subgraph_size: int = 2
    restart_prob: float = 0.5
    weighted: bool = False
    multi_relational: bool = False
    rounds: int = 64
    epsilon: float = 1e-6  # weight floor, relative to the graph's t_range
    walk_budget: int = 100  # steps per requested node

    def __post_init__(self):
        if self.subgraph_size < 1:
            raise ValueError("subgraph_size must be >= 1")
        if not 0 < self.restart_prob < 1:
            raise ValueError("restart_prob must be in (0, 1)")
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")


@dataclass(frozen=True)
class InstancePair:
    target: int
    subgraph: MultiRelSubgraph  # features already anonymized; one adjacency unless multi-relational
    target_features: np.ndarray
    pair_label: int


@dataclass(frozen=True)
class PairBatch:
    """Padded batch of instance pairs over one graph (``nodes`` uses -1 padding)."""

    targets: np.ndarray
    nodes: np.ndarray
    labels: np.ndarray

    def __len__(self):
        return int(self.targets.size)


def transition_weights(graph: TransactionGraph, weighted: bool, epsilon: float) -> np.ndarray:
    """Per-edge step weights, scaled so each node's largest weight is 1.

    Unweighted walks use 1 everywhere. Scaling by the per-node maximum makes
    a node whose edges all carry the same weight produce exactly the same
    numbers (and so the same draws) as the unweighted walk.
    """
    if not weighted or graph.n_edges == 0:
        return np.ones(graph.n_edges)
    w = graph.weight + epsilon * max(graph.t_range, 1)
    deg = graph.out_degree()
    has = deg > 0
    node_max = np.maximum.reduceat(w, graph.indptr[:-1][has])
    return w / np.repeat(node_max, deg[has])


def _cumulative(graph: TransactionGraph, weighted: bool, epsilon: float) -> np.ndarray:
    key = ("cum", weighted, epsilon)
    if key not in graph._cache:
        graph._cache[key] = np.cumsum(transition_weights(graph, weighted, epsilon))
    return graph._cache[key]


def epoch_targets(graph: TransactionGraph, rng: np.random.Generator) -> np.ndarray:
    """Target-day nodes in random order; history nodes are never targets."""
    targets = graph.target_nodes
    if targets.size == 0:
        raise ValueError("graph has no target-day nodes")
    return rng.permutation(targets)


def rwr_sample_batch(graph: TransactionGraph, starts, config: SamplerConfig,
                     rng: np.random.Generator) -> np.ndarray:
    """Run one random walk with restart per start node, all walks in lock-step.

    Walks only follow out-edges, i.e. move to older transactions. Each step
    restarts with ``restart_prob`` (or when stuck at a node without
    out-edges) and otherwise moves along an edge chosen in proportion to its
    transition weight. A walk stops once it has collected ``subgraph_size``
    distinct nodes or after ``walk_budget * subgraph_size`` steps.

    Returns a (B, subgraph_size) array of visited nodes in visiting order,
    start node first, padded with -1 when fewer nodes were reachable.
    """
    starts = np.asarray(starts, dtype=np.int64).reshape(-1)
    k = config.subgraph_size
    out = np.full((starts.size, k), -1, dtype=np.int64)
    out[:, 0] = starts
    if k == 1 or starts.size == 0:
        return out
    count = np.ones(starts.size, dtype=np.int64)
    deg = graph.out_degree()
    indptr = graph.indptr
    cum = _cumulative(graph, config.weighted, config.epsilon)
    cur = starts.copy()
    active = deg[starts] > 0
    for _ in range(config.walk_budget * k):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        u_restart = rng.random(idx.size)
        u_pick = rng.random(idx.size)
        c = cur[idx]
        lo, hi = indptr[c], indptr[c + 1]
        restart = (u_restart < config.restart_prob) | (hi == lo)
        nxt = starts[idx].copy()
        move = ~restart
        if move.any():
            lo_m, hi_m = lo[move], hi[move]
            base = np.where(lo_m > 0, cum[np.maximum(lo_m - 1, 0)], 0.0)
            total = cum[hi_m - 1] - base
            e = np.searchsorted(cum, base + u_pick[move] * total, side="right")
            e = np.clip(e, lo_m, hi_m - 1)
            nxt[move] = graph.dst[e]
        cur[idx] = nxt
        new = ~(out[idx] == nxt[:, None]).any(axis=1)
        rows = idx[new]
        out[rows, count[rows]] = nxt[new]
        count[rows] += 1
        active[idx] = count[idx] < k
    return out


def rwr_sample(graph: TransactionGraph, start: int, config: SamplerConfig,
               rng: np.random.Generator) -> np.ndarray:
    """Distinct nodes visited by one walk from ``start`` (start first)."""
    row = rwr_sample_batch(graph, [start], config, rng)[0]
    return row[row >= 0]


def negative_starts(graph: TransactionGraph, targets: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from all nodes other than the respective target."""
    n = graph.n_nodes
    if n < 2:
        raise ValueError("negative pairs need a graph with at least 2 nodes")
    r = rng.integers(0, n - 1, size=targets.size)
    return r + (r >= targets)


def sample_pairs(graph: TransactionGraph, targets, config: SamplerConfig,
                 rng: np.random.Generator) -> PairBatch:
    """One positive and one negative pair per target, interleaved (pos, neg, pos, ...)."""
    targets = np.asarray(targets, dtype=np.int64)
    pos = rwr_sample_batch(graph, targets, config, rng)
    neg = rwr_sample_batch(graph, negative_starts(graph, targets, rng), config, rng)
    m = targets.size
    nodes = np.empty((2 * m, config.subgraph_size), dtype=np.int64)
    nodes[0::2], nodes[1::2] = pos, neg
    labels = np.empty(2 * m, dtype=np.int64)
    labels[0::2], labels[1::2] = POSITIVE, NEGATIVE
    return PairBatch(np.repeat(targets, 2), nodes, labels)


def assemble(graph: TransactionGraph, batch: PairBatch, multi_relational: bool):
    """Dense model inputs for a pair batch.

    Returns ``(x_sub, adj, mask, x_target)`` with shapes (N, k, F),
    (N, R', k, k), (N, k) and (N, F). The initial node of every subgraph is
    anonymized (zero features); ``x_target`` holds the true target features.
    """
    nodes = batch.nodes
    mask = (nodes >= 0).astype(np.float64)
    x_sub = graph.features[np.where(nodes >= 0, nodes, 0)] * mask[:, :, None]
    x_sub[:, 0, :] = 0.0
    adj = batch_adjacency(graph, nodes, multi_relational)
    return x_sub, adj, mask, graph.features[batch.targets]


def make_pair(graph: TransactionGraph, target: int, polarity: int, config: SamplerConfig,
              rng: np.random.Generator) -> InstancePair:
    if polarity == POSITIVE:
        start = target
    elif polarity == NEGATIVE:
        start = int(negative_starts(graph, np.array([target]), rng)[0])
    else:
        raise ValueError("polarity must be POSITIVE (1) or NEGATIVE (0)")
    nodes = rwr_sample(graph, start, config, rng)
    sub = to_multi_relational(nodes, graph)
    adj = sub.adjacency if config.multi_relational else sub.adjacency.max(axis=0, keepdims=True)
    feats = sub.features.copy()
    feats[0] = 0.0
    return InstancePair(
        target=int(target),
        subgraph=MultiRelSubgraph(nodes, adj, feats),
        target_features=graph.features[target].copy(),
        pair_label=int(polarity),
    )


def dump_pairs(graph: TransactionGraph, batch: PairBatch, path) -> None:
    """Debug: one line per pair, ``target_tx<TAB>label<TAB>subgraph tx ids``."""
    with open(path, "w") as fh:
        for t, lab, row in zip(batch.targets, batch.labels, batch.nodes):
            ids = ",".join(str(graph.tx_ids[v]) for v in row if v >= 0)
            fh.write(f"{graph.tx_ids[t]}\t{lab}\t{ids}\n")
