"""Direct-definition reference implementations, written with plain loops."""

import math


def oracle_mean(v):
    return sum(v) / len(v)


def oracle_pcc(g, p):
    mg, mp = oracle_mean(g), oracle_mean(p)
    cov = sum((a - mg) * (b - mp) for a, b in zip(g, p)) / len(g)
    sg = math.sqrt(sum((a - mg) ** 2 for a in g) / len(g))
    sp = math.sqrt(sum((b - mp) ** 2 for b in p) / len(p))
    return cov / (sg * sp)


def oracle_rank(v):
    """Rank 1 = largest; a tied group gets the mean of the positions it occupies."""
    out = []
    for x in v:
        better = sum(1 for y in v if y > x)
        equal = sum(1 for y in v if y == x)
        out.append(better + (equal + 1) / 2)
    return out


def oracle_srcc(g, p):
    return oracle_pcc(oracle_rank(g), oracle_rank(p))


def _returns(p, K):
    # highest prediction first; earlier index wins ties
    idx = list(range(len(p)))
    chosen = []
    for _ in range(K):
        best = None
        for i in idx:
            if i in chosen:
                continue
            if best is None or p[i] > p[best]:
                best = i
        chosen.append(best)
    return chosen


def _top_rank(g, i):
    return 1 + sum(1 for y in g if y > g[i])


def oracle_acc(preds, gts, K, N):
    hits = 0
    for p, g in zip(preds, gts):
        for c in _returns(p, K):
            if _top_rank(g, c) <= N:
                hits += 1
    return hits / (len(gts) * K)


def oracle_acc_weighted(preds, gts, K, N, beta):
    total = 0.0
    for p, g in zip(preds, gts):
        ret = _returns(p, K)
        ordered = sorted(ret, key=lambda i: (-g[i], i))
        for j, c in enumerate(ordered, start=1):
            r = _top_rank(g, c)
            if r <= N:
                total += math.exp(-beta * max(0, r - j) / N)
    return total / (len(gts) * K)


def ranks_to_instance(returned_ranks, n):
    """Groundtruth with distinct ranks 1..n and predictions whose top-K hit ``returned_ranks``."""
    g = [float(n - i) for i in range(n)]  # index i has rank i + 1
    p = [0.0] * n
    for k, r in enumerate(returned_ranks):
        p[r - 1] = 100.0 - k
    return p, g
