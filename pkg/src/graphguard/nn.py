"""Single-layer GCN / R-GCN, average readout and bilinear discriminator in numpy.

Everything works on padded batches of small subgraphs: ``x`` is (N, k, F),
adjacencies are (N, k, k) for the GCN or (N, R, k, k) for the R-GCN and
``mask`` (N, k) flags real nodes. Backward passes are written out by hand.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import expit

from .sampler import SamplerConfig, assemble, epoch_targets, sample_pairs
from .txgraph import TransactionGraph

SCORE_CLAMP = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 40
    learning_rate: float = 1e-4
    batch_size: int = 1024
    embedding_dim: int = 8
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.embedding_dim < 1:
            raise ValueError("epochs >= 0, batch_size >= 1 and embedding_dim >= 1 required")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("non-finite input")


def relu(z):
    return np.maximum(z, 0.0)


def gcn_propagation(adj, mask=None):
    """D^-1/2 (A + I) D^-1/2 with self loops only on real (unpadded) nodes."""
    adj = np.asarray(adj, dtype=np.float64)
    k = adj.shape[-1]
    if mask is None:
        mask = np.ones(adj.shape[:-1])
    a_hat = adj + np.eye(k) * mask[..., None, :]
    deg = a_hat.sum(axis=-1)
    inv_sqrt = np.where(deg > 0, 1.0 / np.sqrt(np.where(deg > 0, deg, 1.0)), 0.0)
    return inv_sqrt[..., :, None] * a_hat * inv_sqrt[..., None, :]


def gcn_forward(adj, x, W, mask=None):
    """relu(D^-1/2 (A+I) D^-1/2 X W); works on a single graph or a batch."""
    x = np.asarray(x, dtype=np.float64)
    W = np.asarray(W, dtype=np.float64)
    if np.shape(adj)[-1] != x.shape[-2] or x.shape[-1] != W.shape[0]:
        raise ValueError(f"shape mismatch: adj {np.shape(adj)}, x {x.shape}, W {W.shape}")
    _check_finite(adj, x, W)
    return relu(gcn_propagation(adj, mask) @ x @ W)


def relation_propagation(adjs):
    """Row-normalize each relation's adjacency by its degree (empty rows stay 0)."""
    adjs = np.asarray(adjs, dtype=np.float64)
    deg = adjs.sum(axis=-1, keepdims=True)
    return np.divide(adjs, deg, out=np.zeros_like(adjs), where=deg > 0)


def rgcn_forward(adjs, x, W_rel, W_self):
    """relu(sum_r mean_{j in N_r(i)} x_j W_r + x_i W_self)."""
    adjs = np.asarray(adjs, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    W_rel = np.asarray(W_rel, dtype=np.float64)
    if adjs.shape[-3] != W_rel.shape[0]:
        raise ValueError(f"{adjs.shape[-3]} adjacencies but {W_rel.shape[0]} relation weights")
    if adjs.shape[-1] != x.shape[-2] or x.shape[-1] != W_rel.shape[1] or W_rel.shape[1:] != np.shape(W_self):
        raise ValueError("shape mismatch between adjacencies, features and weights")
    _check_finite(adjs, x, W_rel, W_self)
    mx = relation_propagation(adjs) @ x[..., None, :, :]
    z = np.einsum("...rkf,rfd->...kd", mx, W_rel) + x @ W_self
    return relu(z)


def readout_avg(h, mask=None):
    """Mean of node embeddings over real nodes (anonymized initial node included)."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape[-2] == 0:
        raise ValueError("readout of an empty subgraph")
    if mask is None:
        return h.mean(axis=-2)
    n = mask.sum(axis=-1, keepdims=True)
    if np.any(n == 0):
        raise ValueError("readout of an empty subgraph")
    return (h * mask[..., None]).sum(axis=-2) / n


def discriminate(e, h, Wb):
    """Bilinear score sigmoid(e^T Wb h); batched over leading axes."""
    _check_finite(e, h, Wb)
    return expit(np.einsum("...d,de,...e->...", e, Wb, h))


def bce_loss(scores, labels) -> float:
    s = np.clip(np.asarray(scores, dtype=np.float64), SCORE_CLAMP, 1.0 - SCORE_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(-(y * np.log(s) + (1.0 - y) * np.log(1.0 - s))))


# ---- parameters -----------------------------------------------------------

def init_params(n_features: int, embedding_dim: int, n_relations: int | None,
                rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init.

    ``n_relations=None`` gives GCN parameters ``W``/``Wb``; an integer gives
    R-GCN parameters ``W_rel`` (R, F, d), ``W_self`` and ``Wb``.
    """
    bf = 1.0 / np.sqrt(n_features)
    bd = 1.0 / np.sqrt(embedding_dim)
    if n_relations is None:
        params = {"W": rng.uniform(-bf, bf, size=(n_features, embedding_dim))}
    else:
        params = {
            "W_rel": rng.uniform(-bf, bf, size=(n_relations, n_features, embedding_dim)),
            "W_self": rng.uniform(-bf, bf, size=(n_features, embedding_dim)),
        }
    params["Wb"] = rng.uniform(-bd, bd, size=(embedding_dim, embedding_dim))
    return params


def is_relational(params) -> bool:
    return "W_rel" in params


def _forward(params, x_sub, adj, mask, x_target):
    """Scores plus everything the backward pass needs."""
    if is_relational(params):
        mx = relation_propagation(adj) @ x_sub[:, None, :, :]  # (N, R, k, F)
        z = np.einsum("nrkf,rfd->nkd", mx, params["W_rel"]) + x_sub @ params["W_self"]
        zt = x_target @ params["W_self"]
        cache = {"mx": mx}
    else:
        ax = gcn_propagation(adj[:, 0] if adj.ndim == 4 else adj, mask) @ x_sub  # (N, k, F)
        z = ax @ params["W"]
        zt = x_target @ params["W"]
        cache = {"ax": ax}
    h = relu(z)
    n = mask.sum(axis=1, keepdims=True)
    e = (h * mask[..., None]).sum(axis=1) / n
    ht = relu(zt)
    s = expit(np.einsum("nd,de,ne->n", e, params["Wb"], ht))
    cache.update(z=z, zt=zt, e=e, ht=ht, n=n)
    return s, cache


def pair_scores(params, x_sub, adj, mask, x_target) -> np.ndarray:
    return _forward(params, x_sub, adj, mask, x_target)[0]


def loss_and_grad(params, x_sub, adj, mask, x_target, labels):
    """Mean BCE over the batch and its gradient for every parameter tensor."""
    s, c = _forward(params, x_sub, adj, mask, x_target)
    y = np.asarray(labels, dtype=np.float64)
    loss = bce_loss(s, y)
    g = (s - y) / s.size  # d loss / d logit
    Wb = params["Wb"]
    e, ht = c["e"], c["ht"]
    grads = {"Wb": np.einsum("n,nd,ne->de", g, e, ht)}
    de = g[:, None] * (ht @ Wb.T)
    dht = g[:, None] * (e @ Wb)
    dz = de[:, None, :] * (mask / c["n"])[..., None] * (c["z"] > 0)
    dzt = dht * (c["zt"] > 0)
    if is_relational(params):
        grads["W_rel"] = np.einsum("nrkf,nkd->rfd", c["mx"], dz)
        grads["W_self"] = np.einsum("nkf,nkd->fd", x_sub, dz) + x_target.T @ dzt
    else:
        grads["W"] = np.einsum("nkf,nkd->fd", c["ax"], dz) + x_target.T @ dzt
    return loss, grads


grad_all = loss_and_grad


# ---- optimizer ------------------------------------------------------------

@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> dict[str, np.ndarray]:
    """Bias-corrected Adam update; returns new arrays and advances ``state``."""
    state.step += 1
    t = state.step
    out = {}
    for name, p in params.items():
        g = grads[name]
        m = beta1 * state.m.get(name, np.zeros_like(p)) + (1 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(p)) + (1 - beta2) * g * g
        state.m[name], state.v[name] = m, v
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        out[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
    return out


# ---- training and scoring -------------------------------------------------

def _streams(seed: int):
    init_ss, sample_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(sample_ss)


def _epoch_inputs(graphs: Sequence[TransactionGraph], sampler: SamplerConfig, rng):
    chunks = []
    for g in graphs:
        batch = sample_pairs(g, epoch_targets(g, rng), sampler, rng)
        chunks.append((*assemble(g, batch, sampler.multi_relational), batch.labels))
    return [np.concatenate(parts) for parts in zip(*chunks)]


def train(graphs: Sequence[TransactionGraph], sampler: SamplerConfig, config: TrainConfig,
          params: dict | None = None):
    """Contrastive training over day graphs.

    Each epoch draws a fresh target order per graph, one positive and one
    negative pair per target, and takes one Adam step per ``batch_size``
    pairs. Returns ``(params, history)`` where history holds the per-batch
    loss trace and per-epoch mean losses.
    """
    if not graphs:
        raise ValueError("need at least one training graph")
    n_feat = graphs[0].n_features
    if any(g.n_features != n_feat for g in graphs):
        raise ValueError("all graphs must share the feature set")
    n_rel = len(graphs[0].relations) if sampler.multi_relational else None
    init_rng, rng = _streams(config.seed)
    if params is None:
        params = init_params(n_feat, config.embedding_dim, n_rel, init_rng)
    params = {k: np.array(v, dtype=np.float64) for k, v in params.items()}
    state = AdamState()
    trace, epoch_loss = [], []
    for _ in range(config.epochs):
        x_sub, adj, mask, x_t, y = _epoch_inputs(graphs, sampler, rng)
        losses = []
        for lo in range(0, y.size, config.batch_size):
            sl = slice(lo, lo + config.batch_size)
            loss, grads = loss_and_grad(params, x_sub[sl], adj[sl], mask[sl], x_t[sl], y[sl])
            if not np.isfinite(loss):
                raise FloatingPointError("loss became non-finite")
            if config.learning_rate > 0:
                params = adam_step(params, grads, state, config.learning_rate,
                                   config.beta1, config.beta2, config.adam_eps)
            losses.append(loss)
        trace.extend(losses)
        epoch_loss.append(float(np.mean(losses)))
    return params, {"batch_loss": trace, "epoch_loss": epoch_loss}


def score_rounds(params, graph: TransactionGraph, sampler: SamplerConfig, rng: np.random.Generator):
    """Positive and negative scores for every target-day node over ``rounds`` rounds.

    Returns ``(targets, s_pos, s_neg)``; the score arrays are (rounds, n_targets)
    and targets are in node (time) order.
    """
    targets = graph.target_nodes
    s_pos = np.empty((sampler.rounds, targets.size))
    s_neg = np.empty_like(s_pos)
    for r in range(sampler.rounds):
        batch = sample_pairs(graph, targets, sampler, rng)
        s = pair_scores(params, *assemble(graph, batch, sampler.multi_relational))
        s_pos[r], s_neg[r] = s[0::2], s[1::2]
    return targets, s_pos, s_neg


# ---- checkpoints ----------------------------------------------------------

CHECKPOINT_MAGIC = b"GGCKPT\x00\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, params: dict[str, np.ndarray]) -> None:
    """Little-endian: magic, version, tensor count, shape table, raw float64 data."""
    names = sorted(params)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(names)))
        for name in names:
            raw = name.encode()
            shape = np.shape(params[name])
            fh.write(struct.pack("<H", len(raw)) + raw)
            fh.write(struct.pack("<B", len(shape)))
            fh.write(struct.pack(f"<{len(shape)}Q", *shape))
        for name in names:
            fh.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_checkpoint(path: str | Path, expected_shapes: dict | None = None) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise ValueError(f"{path}: not a checkpoint file")
    pos = len(CHECKPOINT_MAGIC)
    version, count = struct.unpack_from("<II", data, pos)
    pos += 8
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    table = []
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, pos)
        pos += 8 * ndim
        table.append((name, tuple(int(s) for s in shape)))
    params = {}
    for name, shape in table:
        size = int(np.prod(shape)) * 8
        if pos + size > len(data):
            raise ValueError(f"{path}: truncated checkpoint")
        params[name] = np.frombuffer(data, dtype="<f8", count=size // 8, offset=pos).reshape(shape).astype(np.float64)
        pos += size
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    if expected_shapes is not None:
        got = {k: v.shape for k, v in params.items()}
        want = {k: tuple(v) for k, v in expected_shapes.items()}
        if got != want:
            raise ValueError(f"{path}: checkpoint shapes {got} do not match expected {want}")
    return params
