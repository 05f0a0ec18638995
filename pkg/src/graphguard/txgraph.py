"""Per-day transaction multigraphs and the undirected subgraph views used by the GNNs.

Nodes of a graph are the transactions of one target day plus its history
window, indexed by ascending ``(time, tx_id)``. Node index order therefore
*is* recency order, and a directed edge always points from a larger index
to a smaller one.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .transactions import DAY, LABEL, TIME, TX_ID, TransactionTable


@dataclass(frozen=True)
class GraphConfig:
    relations: tuple[str, ...] = ("card_id",)
    features: tuple[str, ...] = ("amount",)
    theta: int = 30

    def __post_init__(self):
        if not self.relations:
            raise ValueError("at least one relation is required")
        if not self.features:
            raise ValueError("at least one node feature is required")
        if self.theta < 1:
            raise ValueError("theta must be >= 1")


@dataclass(eq=False)
class TransactionGraph:
    """Weighted directed multigraph stored as one CSR over all relations.

    Edges are sorted by ``(src, dst, rel)``, so each node's out-edges are a
    contiguous slice ``indptr[v]:indptr[v+1]`` ordered by destination.
    """

    relations: tuple[str, ...]
    tx_ids: np.ndarray
    times: np.ndarray
    days: np.ndarray
    labels: np.ndarray
    is_target_day: np.ndarray
    features: np.ndarray
    keys: np.ndarray  # (n, |R|) integer codes of the relation values
    src: np.ndarray
    dst: np.ndarray
    rel: np.ndarray
    weight: np.ndarray
    indptr: np.ndarray
    t_range: int
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_nodes(self) -> int:
        return int(self.tx_ids.size)

    @property
    def n_edges(self) -> int:
        return int(self.src.size)

    @property
    def n_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def target_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.is_target_day)

    def out_degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def out_edges(self, v: int) -> slice:
        return slice(int(self.indptr[v]), int(self.indptr[v + 1]))

    def edge_list(self) -> list[tuple[int, int, int, float]]:
        return list(zip(self.src.tolist(), self.dst.tolist(), self.rel.tolist(), self.weight.tolist()))

    def with_features(self, features: np.ndarray) -> "TransactionGraph":
        """Same topology with a different feature matrix (features are per split)."""
        features = np.ascontiguousarray(features, dtype=np.float64)
        if features.shape[0] != self.n_nodes:
            raise ValueError("feature rows must match node count")
        g = TransactionGraph(**{k: getattr(self, k) for k in self.__dataclass_fields__ if k != "_cache"})
        g.features = features
        g._cache = self._cache  # sampling tables depend on topology only
        return g


def _pairs_within_groups(codes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """All (newer, older) index pairs of nodes sharing a code."""
    n = codes.size
    order = np.lexsort((np.arange(n), codes))
    sorted_codes = codes[order]
    bounds = np.flatnonzero(np.diff(sorted_codes)) + 1
    starts = np.concatenate([[0], bounds])
    ends = np.concatenate([bounds, [n]])
    srcs, dsts = [], []
    tril_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    for s, e in zip(starts, ends):
        m = e - s
        if m < 2:
            continue
        if m not in tril_cache:
            tril_cache[m] = np.tril_indices(m, -1)
        rows, cols = tril_cache[m]
        members = order[s:e]  # ascending node index == ascending recency
        srcs.append(members[rows])
        dsts.append(members[cols])
    if not srcs:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    return np.concatenate(srcs).astype(np.int64), np.concatenate(dsts).astype(np.int64)


def build_graph(batch: TransactionTable, history: TransactionTable | None,
                config: GraphConfig) -> TransactionGraph:
    """Graph over ``batch`` (target day) plus ``history`` (its theta-day window).

    For every newer/older pair sharing the value of relation ``r`` there is
    one directed edge newer -> older tagged ``r``; its weight is
    ``t_range - (time_newer - time_older)`` with ``t_range`` the time span of
    this graph's transactions.
    """
    if len(batch) == 0:
        raise ValueError("target batch is empty")
    parts = [batch.frame.assign(_target=True)]
    if history is not None and len(history):
        parts.insert(0, history.frame.assign(_target=False))
    frame = pd.concat(parts, ignore_index=True)
    frame = frame.sort_values([TIME, TX_ID], kind="mergesort").reset_index(drop=True)
    if frame[TX_ID].duplicated().any():
        raise ValueError("batch and history overlap")
    missing = [c for c in (*config.relations, *config.features) if c not in frame.columns]
    if missing:
        raise KeyError(f"graph columns not in table: {missing}")

    times = frame[TIME].to_numpy(dtype=np.int64)
    t_range = int(times[-1] - times[0])
    keys = np.stack([pd.factorize(frame[r].astype(str))[0] for r in config.relations], axis=1)
    keys = keys.astype(np.int64)

    srcs, dsts, rels = [], [], []
    for ri in range(len(config.relations)):
        s, d = _pairs_within_groups(keys[:, ri])
        srcs.append(s)
        dsts.append(d)
        rels.append(np.full(s.size, ri, dtype=np.int64))
    src = np.concatenate(srcs)
    dst = np.concatenate(dsts)
    rel = np.concatenate(rels)
    order = np.lexsort((rel, dst, src))
    src, dst, rel = src[order], dst[order], rel[order]
    weight = (t_range - (times[src] - times[dst])).astype(np.float64)
    n = len(frame)
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])

    return TransactionGraph(
        relations=tuple(config.relations),
        tx_ids=frame[TX_ID].to_numpy(dtype=np.int64),
        times=times,
        days=frame[DAY].to_numpy(dtype=np.int64),
        labels=frame[LABEL].to_numpy(dtype=np.int64),
        is_target_day=frame["_target"].to_numpy(dtype=bool),
        features=np.ascontiguousarray(frame[list(config.features)].to_numpy(dtype=np.float64)),
        keys=keys,
        src=src, dst=dst, rel=rel, weight=weight, indptr=indptr,
        t_range=t_range,
    )


def build_day_graph(table: TransactionTable, day: int, config: GraphConfig) -> TransactionGraph:
    from .transactions import batch_of_day, window_before
    return build_graph(batch_of_day(table, day), window_before(table, day, config.theta), config)


@dataclass(frozen=True)
class MultiRelSubgraph:
    """Undirected per-relation view of a node set; ``nodes[0]`` is the initial node."""

    nodes: np.ndarray
    adjacency: np.ndarray  # (|R|, k, k) symmetric 0/1, zero diagonal
    features: np.ndarray

    @property
    def n_relations(self) -> int:
        return int(self.adjacency.shape[0])


def _relation_adjacency(keys: np.ndarray) -> np.ndarray:
    """keys: (..., k, R) -> (..., R, k, k) equality adjacency without self loops."""
    eq = keys[..., :, None, :] == keys[..., None, :, :]  # (..., k, k, R)
    eq = np.moveaxis(eq, -1, -3)
    k = keys.shape[-2]
    return (eq & ~np.eye(k, dtype=bool)).astype(np.float64)


def to_multi_relational(nodes: Sequence[int], graph: TransactionGraph) -> MultiRelSubgraph:
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("empty node set")
    adj = _relation_adjacency(graph.keys[nodes])
    return MultiRelSubgraph(nodes, adj, graph.features[nodes].copy())


def collapse_uni_relational(nodes: Sequence[int], graph: TransactionGraph) -> np.ndarray:
    """Single undirected 0/1 adjacency: union over relations, parallel edges merged."""
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        return np.zeros((0, 0))
    return _relation_adjacency(graph.keys[nodes]).max(axis=0)


def batch_adjacency(graph: TransactionGraph, nodes: np.ndarray, multi_relational: bool) -> np.ndarray:
    """Adjacencies for a padded batch of node sets.

    ``nodes`` is (B, k) with -1 for padding; padded slots get no edges.
    Returns (B, |R|, k, k) when ``multi_relational`` else (B, 1, k, k).
    """
    valid = nodes >= 0
    keys = graph.keys[np.where(valid, nodes, 0)]  # (B, k, R)
    adj = _relation_adjacency(keys)
    pair_valid = (valid[:, :, None] & valid[:, None, :])[:, None]
    adj = adj * pair_valid
    if not multi_relational:
        adj = adj.max(axis=1, keepdims=True)
    return adj


def write_edges(graph: TransactionGraph, path: str | Path) -> None:
    """Debug dump: ``src,dst,relation,weight`` with transaction ids."""
    with open(path, "w") as fh:
        fh.write("src,dst,relation,weight\n")
        names = graph.relations
        for s, d, r, w in zip(graph.tx_ids[graph.src].tolist(), graph.tx_ids[graph.dst].tolist(),
                              graph.rel.tolist(), graph.weight.tolist()):
            fh.write(f"{s},{d},{names[r]},{w!r}\n")
