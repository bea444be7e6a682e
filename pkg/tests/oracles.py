"""Scalar-loop reference implementations used as test oracles.

Everything here works on plain Python floats with explicit index loops, so
it shares no vectorised code path with the package.
"""

from __future__ import annotations

import math

from tesan.attention import Mode


def _mat(m):
    return [[float(x) for x in row] for row in m]


def _vec(v):
    return [float(x) for x in v]


def matvec(m, v):
    return [sum(m[r][k] * v[k] for k in range(len(v))) for r in range(len(m))]


def softmax(xs):
    top = max(xs)
    e = [math.exp(x - top) for x in xs]
    z = sum(e)
    return [x / z for x in e]


def sig(x):
    return 1.0 / (1.0 + math.exp(-x))


def compat(c_i, c_j, delta, p):
    """Vector score of key c_i for query c_j."""
    d = len(c_i)
    w1, w2, w3 = _mat(p.attn_w1), _mat(p.attn_w2), _mat(p.attn_w3)
    e = _vec(p.interval_table[min(delta, p.interval_table.shape[0] - 1)])
    hidden = []
    for r in range(d):
        acc = float(p.attn_b1[r])
        for k in range(d):
            if p.mode is not Mode.INTERVAL:
                acc += w1[r][k] * c_i[k] + w2[r][k] * c_j[k]
            if p.mode in (Mode.TESA, Mode.INTERVAL):
                acc += w3[r][k] * e[k]
        hidden.append(math.tanh(acc))
    if p.mode is Mode.NORMAL_SA:
        s = sum(float(p.attn_v[k]) * hidden[k] for k in range(d)) + float(p.attn_c[0])
        return [s] * d
    w = _mat(p.attn_w)
    return [sum(w[r][k] * hidden[k] for k in range(d)) + float(p.attn_b[r]) for r in range(d)]


def self_attend(c, days, p):
    n, d = len(c), len(c[0])
    out = []
    for j in range(n):
        scores = [compat(c[i], c[j], abs(days[i] - days[j]), p) for i in range(n)]
        s = [0.0] * d
        for k in range(d):
            probs = softmax([scores[i][k] for i in range(n)])
            s[k] = sum(probs[i] * c[i][k] for i in range(n))
        out.append(s)
    return out


def gate(s, c, p):
    g1, g2 = _mat(p.gate_w1), _mat(p.gate_w2)
    out = []
    for srow, crow in zip(s, c):
        a, b = matvec(g1, srow), matvec(g2, crow)
        f = [sig(a[k] + b[k] + float(p.gate_b[k])) for k in range(len(srow))]
        out.append([f[k] * srow[k] + (1.0 - f[k]) * crow[k] for k in range(len(srow))])
    return out


def pool(u, p):
    n, d = len(u), len(u[0])
    w1, w = _mat(p.pool_w1), _mat(p.pool_w)
    scores = []
    for row in u:
        hid = [math.tanh(x + float(b)) for x, b in zip(matvec(w1, row), p.pool_b1)]
        scores.append([x + float(b) for x, b in zip(matvec(w, hid), p.pool_b)])
    h = [0.0] * d
    for k in range(d):
        probs = softmax([scores[i][k] for i in range(n)])
        h[k] = sum(probs[i] * u[i][k] for i in range(n))
    return h


def tesa(c, days, p):
    c = [_vec(row) for row in c]
    return gate(self_attend(c, list(days), p), c, p)


def forward(ctx_ids, ctx_days, p):
    c = [_vec(p.concept_table[i]) for i in ctx_ids]
    return pool(tesa(c, ctx_days, p), p)


def objective(h, target, negatives, p):
    table = p.target_table

    def dot(i):
        return sum(float(table[i][k]) * h[k] for k in range(len(h)))

    j = math.log(sig(dot(target)))
    for n in negatives:
        j += math.log(sig(-dot(n)))
    return j


def entropy(counts):
    n = sum(counts)
    return -sum(c / n * math.log(c / n) for c in counts if c)


def nmi_table(table):
    """Geometric-mean NMI of a nested-list contingency table."""
    n = sum(sum(r) for r in table)
    rows = [sum(r) for r in table]
    cols = [sum(table[i][j] for i in range(len(table))) for j in range(len(table[0]))]
    mi = 0.0
    for i, r in enumerate(table):
        for j, x in enumerate(r):
            if x:
                mi += x / n * math.log(x * n / (rows[i] * cols[j]))
    return mi / math.sqrt(entropy(rows) * entropy(cols))


def p_at_1(points, labels):
    """Brute-force cosine P@1; ties resolved to the lower index."""
    hits = 0
    for i, a in enumerate(points):
        best, best_j = -math.inf, None
        for j, b in enumerate(points):
            if i == j:
                continue
            cos = sum(x * y for x, y in zip(a, b)) / (math.hypot(*a) * math.hypot(*b))
            if cos > best:
                best, best_j = cos, j
        hits += labels[best_j] == labels[i]
    return hits / len(points)
