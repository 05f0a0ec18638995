"""Brute-force reference implementations used as test oracles.

Deliberately naive (plain loops, no shared code with the package) so that
agreement means something.
"""
from __future__ import annotations

import math
from fractions import Fraction


def edges_bruteforce(rows, relations):
    """rows: dicts with tx_id, time and relation fields. Returns sorted edge list
    of (src_tx, dst_tx, rel_index, weight) following the pairwise definition."""
    times = [r["time"] for r in rows]
    t_range = max(times) - min(times)
    out = []
    for a in rows:
        for b in rows:
            newer = (a["time"], a["tx_id"]) > (b["time"], b["tx_id"])
            if not newer:
                continue
            for ri, rel in enumerate(relations):
                if str(a[rel]) == str(b[rel]):
                    w = float(t_range - (a["time"] - b["time"]))
                    out.append((a["tx_id"], b["tx_id"], ri, w))
    return sorted(out)


def relation_adjacency_bruteforce(key_rows):
    """key_rows[i][r] -> list over r of k x k 0/1 nested lists (no self loops)."""
    k = len(key_rows)
    n_rel = len(key_rows[0]) if k else 0
    return [[[1.0 if i != j and key_rows[i][r] == key_rows[j][r] else 0.0 for j in range(k)]
             for i in range(k)] for r in range(n_rel)]


def matmul(a, b):
    return [[sum(a[i][t] * b[t][j] for t in range(len(b))) for j in range(len(b[0]))] for i in range(len(a))]


def gcn_naive(adj, x, w):
    k = len(adj)
    a_hat = [[adj[i][j] + (1.0 if i == j else 0.0) for j in range(k)] for i in range(k)]
    deg = [sum(row) for row in a_hat]
    out = []
    for i in range(k):
        row = []
        for c in range(len(w[0])):
            acc = 0.0
            for j in range(k):
                coef = a_hat[i][j] / math.sqrt(deg[i] * deg[j])
                for f in range(len(x[0])):
                    acc += coef * x[j][f] * w[f][c]
            row.append(max(acc, 0.0))
        out.append(row)
    return out


def rgcn_naive(adjs, x, w_rel, w_self):
    k = len(x)
    d = len(w_self[0])
    out = []
    for i in range(k):
        acc = [sum(x[i][f] * w_self[f][c] for f in range(len(x[0]))) for c in range(d)]
        for r, adj in enumerate(adjs):
            nbrs = [j for j in range(k) if adj[i][j]]
            for j in nbrs:
                for c in range(d):
                    acc[c] += sum(x[j][f] * w_rel[r][f][c] for f in range(len(x[0]))) / len(nbrs)
        out.append([max(v, 0.0) for v in acc])
    return out


def bilinear_naive(e, h, wb):
    z = 0.0
    for i in range(len(e)):
        for j in range(len(h)):
            z += e[i] * wb[i][j] * h[j]
    return 1.0 / (1.0 + math.exp(-z))


def _ranked(scores, labels, tx_ids):
    items = list(zip(scores, tx_ids, labels))
    items.sort(key=lambda t: (-t[0], t[1]))
    return [lab for _, _, lab in items]


def average_precision_bruteforce(scores, labels, tx_ids=None):
    """Enumerate every cut-off of the tie-broken ranking: sum of recall steps x precision."""
    tx_ids = list(range(len(scores))) if tx_ids is None else list(tx_ids)
    ranked = _ranked(scores, labels, tx_ids)
    n_pos = sum(ranked)
    ap, prev_recall = 0.0, 0.0
    for cut in range(1, len(ranked) + 1):
        tp = sum(ranked[:cut])
        precision = tp / cut
        recall = tp / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def f1_bruteforce(scores, labels, threshold):
    return float(_f1_exact(scores, labels, threshold))


def _f1_exact(scores, labels, threshold):
    tp = fp = fn = 0
    for s, y in zip(scores, labels):
        pred = s > threshold
        if pred and y == 1:
            tp += 1
        elif pred and y == 0:
            fp += 1
        elif not pred and y == 1:
            fn += 1
    if tp == 0:
        return Fraction(0)
    p = Fraction(tp, tp + fp)
    r = Fraction(tp, tp + fn)
    return 2 * p * r / (p + r)


def threshold_bruteforce(scores, labels):
    uniq = sorted(set(scores))
    if len(uniq) == 1:
        cands = [math.nextafter(uniq[0], -math.inf)]
    else:
        cands = [(uniq[i] + uniq[i + 1]) / 2 for i in range(len(uniq) - 1)]
    best, best_f1 = None, Fraction(-1)
    for c in cands:
        f = _f1_exact(scores, labels, c)
        if f > best_f1:  # strict: keeps the lowest threshold on ties
            best, best_f1 = c, f
    return best, float(best_f1)


def npr_bruteforce(scores, labels, k, tx_ids=None):
    tx_ids = list(range(len(scores))) if tx_ids is None else list(tx_ids)
    k = min(k, len(scores))
    ranked = _ranked(scores, labels, tx_ids)
    n_fraud = sum(labels)
    if n_fraud == 0:
        return None
    pr = sum(ranked[:k]) / k
    gamma = 1.0 if n_fraud >= k else n_fraud / k
    return pr / gamma


def central_differences(loss_fn, params, h=1e-6):
    """Numerical gradient of ``loss_fn(params)`` for every entry of every tensor."""
    grads = {}
    for name, p in params.items():
        g = p.copy()
        flat = p.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            up = loss_fn(params)
            flat[i] = old - h
            down = loss_fn(params)
            flat[i] = old
            g.reshape(-1)[i] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def max_relative_error(analytic, numeric, floor=1e-6):
    """Entrywise |a - n| / max(|a|, |n|, floor); the floor keeps exact zeros
    (inactive ReLU units) from turning round-off into a relative error."""
    worst = 0.0
    for name in analytic:
        a, n = analytic[name].ravel(), numeric[name].ravel()
        for x, y in zip(a.tolist(), n.tolist()):
            worst = max(worst, abs(x - y) / max(abs(x), abs(y), floor))
    return worst
