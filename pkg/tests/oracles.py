"""Pure-Python reference implementations used as independent test oracles.

Nothing here touches numpy linear algebra; inputs are converted to nested
lists of Python floats (float64) first.
"""

import math


def _rows(m):
    return [[float(x) for x in row] for row in m]


def matmul(a, b):
    a, b = _rows(a), _rows(b)
    cols = list(zip(*b))
    return [[math.fsum(x * y for x, y in zip(row, col)) for col in cols] for row in a]


def cosine_affinity(f):
    f = _rows(f)
    norms = [math.sqrt(math.fsum(x * x for x in row)) for row in f]
    n = len(f)
    return [
        [math.fsum(x * y for x, y in zip(f[i], f[j])) / (norms[i] * norms[j]) for j in range(n)]
        for i in range(n)
    ]


def pooling_weights(a, clip=True):
    out = []
    for row in _rows(a):
        kept = [max(x, 0.0) if clip else x for x in row]
        total = math.fsum(kept)
        out.append([x / total for x in kept])
    return out


def pool(w, v):
    w, v = _rows(w), _rows(v)
    n, d = len(w), len(v[0])
    return [[math.fsum(w[i][j] * v[j][c] for j in range(n)) for c in range(d)] for i in range(n)]


def contrast(a, labels):
    a = _rows(a)
    same, diff = [], []
    n = len(labels)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            (same if labels[i] == labels[j] else diff).append(a[i][j])
    return math.fsum(same) / len(same) - math.fsum(diff) / len(diff)


def heatmap(row):
    row = [float(x) for x in row]
    lo, hi = min(row), max(row)
    if hi == lo:
        return [255] * len(row)
    return [int(math.floor(255.0 * min(max((x - lo) / (hi - lo), 0.0), 1.0) + 0.5)) for x in row]


def frob_rel(impl, ref):
    impl = _rows(impl)
    num = math.fsum((x - y) ** 2 for ri, rr in zip(impl, ref) for x, y in zip(ri, rr))
    den = math.fsum(y * y for rr in ref for y in rr)
    return math.sqrt(num) / max(math.sqrt(den), 1e-30)


def max_abs(impl, ref):
    return max(abs(float(x) - y) for ri, rr in zip(impl, ref) for x, y in zip(ri, rr))
