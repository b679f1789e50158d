"""Ranking-correlation and best-return accuracy metrics for crop scoring.

All per-image vectors are in the image's canonical candidate order.  Rank 1
is the highest score.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

STANDARD_K = (1, 2, 3, 4)
STANDARD_N = (5, 10)


class DegenerateInputError(ValueError):
    """A score vector has zero variance, so correlation is undefined."""


def _as_vector(v, name: str) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def rank(v) -> np.ndarray:
    """Descending fractional ranks: ties share the mean of the ranks they span."""
    arr = _as_vector(v, "scores")
    order = np.argsort(-arr, kind="stable")
    sorted_vals = arr[order]
    ranks = np.empty(arr.size, dtype=np.float64)
    i = 0
    n = arr.size
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def pcc(g, p) -> float:
    g = _as_vector(g, "groundtruth")
    p = _as_vector(p, "prediction")
    if g.size != p.size:
        raise ValueError(f"length mismatch: {g.size} vs {p.size}")
    if g.size < 2:
        raise DegenerateInputError("correlation needs at least two values")
    gc = g - g.mean()
    pc = p - p.mean()
    sg = math.sqrt(float(gc @ gc))
    sp = math.sqrt(float(pc @ pc))
    if sg == 0.0 or sp == 0.0:
        which = "groundtruth" if sg == 0.0 else "prediction"
        raise DegenerateInputError(f"{which} scores have zero variance")
    r = float(gc @ pc) / (sg * sp)
    return max(-1.0, min(1.0, r))


def srcc(g, p) -> float:
    g = _as_vector(g, "groundtruth")
    p = _as_vector(p, "prediction")
    if g.size != p.size:
        raise ValueError(f"length mismatch: {g.size} vs {p.size}")
    return pcc(rank(g), rank(p))


def competition_rank(v) -> np.ndarray:
    """1 + number of strictly better entries (ties share the best rank)."""
    arr = _as_vector(v, "scores")
    better = arr.size - np.searchsorted(np.sort(arr), arr, side="right")
    return better.astype(np.int64) + 1


def top_n_set(g, N: int) -> set:
    """Indices whose MOS ranks in the top N; boundary ties are all included."""
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    cr = competition_rank(g)
    if N > cr.size:
        raise ValueError(f"N={N} exceeds the number of candidates ({cr.size})")
    return {int(i) for i in np.flatnonzero(cr <= N)}


def top_k_returns(p, K: int) -> np.ndarray:
    """Indices of the K highest predictions; ties keep canonical order."""
    arr = _as_vector(p, "prediction")
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if arr.size < K:
        raise ValueError(f"only {arr.size} candidates, cannot return K={K}")
    return np.argsort(-arr, kind="stable")[:K]


def _image_hits(returns: Sequence[int], g: np.ndarray, N: int, weighted: bool, beta: float) -> float:
    cr = competition_rank(g)
    in_top = cr <= N
    if not weighted:
        return float(sum(bool(in_top[i]) for i in returns))
    # sort the returns by descending MOS, canonical order on ties
    ordered = sorted(returns, key=lambda i: (-g[i], i))
    total = 0.0
    for j, idx in enumerate(ordered, 1):
        if in_top[idx]:
            # clamp keeps w <= 1 when tied crops share a rank
            total += math.exp(-beta * max(0, int(cr[idx]) - j) / N)
    return total


def _check_aligned(predictions, groundtruth) -> None:
    if len(predictions) != len(groundtruth):
        raise ValueError(f"{len(predictions)} prediction vectors vs {len(groundtruth)} groundtruth vectors")
    if len(groundtruth) == 0:
        raise ValueError("no images")


def acc_from_returns(returns: Sequence[Sequence[int]], groundtruth, N: int,
                     weighted: bool = False, beta: float = 1.0) -> float:
    """Best-return accuracy for explicit per-image returned index lists.

    Every image must return the same number K of crops.
    """
    _check_aligned(returns, groundtruth)
    K = len(returns[0])
    total = 0.0
    for i, (ret, g) in enumerate(zip(returns, groundtruth)):
        if len(ret) != K:
            raise ValueError(f"image {i}: returned {len(ret)} crops, expected {K}")
        g = _as_vector(g, f"groundtruth[{i}]")
        if N > g.size:
            raise ValueError(f"image {i}: N={N} exceeds {g.size} candidates")
        total += _image_hits(ret, g, N, weighted, beta)
    return total / (len(groundtruth) * K)


def acc_k_n(predictions, groundtruth, K: int, N: int) -> float:
    """Return-K-of-top-N accuracy averaged over images."""
    _check_aligned(predictions, groundtruth)
    returns = []
    for i, (p, g) in enumerate(zip(predictions, groundtruth)):
        if len(p) != len(g):
            raise ValueError(f"image {i}: {len(p)} predictions vs {len(g)} groundtruth scores")
        returns.append(top_k_returns(p, K))
    return acc_from_returns(returns, groundtruth, N)


def acc_weighted_k_n(predictions, groundtruth, K: int, N: int, beta: float = 1.0) -> float:
    """Rank-weighted return-K-of-top-N accuracy.

    Each returned crop inside the top-N set contributes
    ``exp(-beta * (r - j) / N)`` where ``r`` is its groundtruth rank and ``j``
    its position among the returns sorted by MOS.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    _check_aligned(predictions, groundtruth)
    returns = []
    for i, (p, g) in enumerate(zip(predictions, groundtruth)):
        if len(p) != len(g):
            raise ValueError(f"image {i}: {len(p)} predictions vs {len(g)} groundtruth scores")
        returns.append(top_k_returns(p, K))
    return acc_from_returns(returns, groundtruth, N, weighted=True, beta=beta)


@dataclass
class MetricReport:
    T: int
    mean_pcc: Optional[float] = None
    mean_srcc: Optional[float] = None
    acc: Dict[Tuple[int, int], Optional[float]] = field(default_factory=dict)
    acc_weighted: Dict[Tuple[int, int], Optional[float]] = field(default_factory=dict)

    def items(self) -> List[Tuple[str, Optional[float]]]:
        rows: List[Tuple[str, Optional[float]]] = [("mean_srcc", self.mean_srcc), ("mean_pcc", self.mean_pcc)]
        for N in STANDARD_N:
            for K in STANDARD_K:
                rows.append((f"acc_{K}_{N}", self.acc.get((K, N))))
        for N in STANDARD_N:
            for K in STANDARD_K:
                rows.append((f"accw_{K}_{N}", self.acc_weighted.get((K, N))))
        return rows

    def to_kv(self) -> str:
        lines = [f"images {self.T}"]
        for name, value in self.items():
            lines.append(f"{name} {'--' if value is None else f'{value:.6f}'}")
        return "\n".join(lines) + "\n"


def format_table(rows: Sequence[Tuple[str, MetricReport]]) -> str:
    """Aligned text table, one row per method; absent values print as ``--``."""
    acc_cols = [(K, N) for N in STANDARD_N for K in STANDARD_K]
    header = ["method"] + [f"Acc{K}/{N}" for K, N in acc_cols] + ["SRCC", "PCC"]
    header_w = ["method"] + [f"AccW{K}/{N}" for K, N in acc_cols]

    def pct(v):
        return "--" if v is None else f"{100 * v:.1f}"

    def corr(v):
        return "--" if v is None else f"{v:.3f}"

    body = [[name] + [pct(r.acc.get(kn)) for kn in acc_cols] + [corr(r.mean_srcc), corr(r.mean_pcc)] for name, r in rows]
    body_w = [[name] + [pct(r.acc_weighted.get(kn)) for kn in acc_cols] for name, r in rows]

    def render(head, lines):
        widths = [max(len(str(row[c])) for row in [head] + lines) for c in range(len(head))]
        out = []
        for row in [head] + lines:
            out.append("  ".join(str(v).rjust(w) if c else str(v).ljust(w) for c, (v, w) in enumerate(zip(row, widths))))
        return "\n".join(out)

    return render(header, body) + "\n\n" + render(header_w, body_w) + "\n"


def report(predictions, groundtruth, names: Optional[Sequence[str]] = None,
           ks: Sequence[int] = STANDARD_K, ns: Sequence[int] = STANDARD_N, beta: float = 1.0) -> MetricReport:
    """Mean PCC/SRCC and the full (K, N) accuracy grid over a test set."""
    _check_aligned(predictions, groundtruth)
    names = list(names) if names is not None else [f"image {i}" for i in range(len(groundtruth))]
    pccs, srccs = [], []
    for name, p, g in zip(names, predictions, groundtruth):
        try:
            pccs.append(pcc(g, p))
            srccs.append(srcc(g, p))
        except DegenerateInputError as exc:
            raise DegenerateInputError(f"{name}: {exc}") from exc
    rep = MetricReport(T=len(groundtruth), mean_pcc=float(np.mean(pccs)), mean_srcc=float(np.mean(srccs)))
    for K in ks:
        for N in ns:
            rep.acc[(K, N)] = acc_k_n(predictions, groundtruth, K, N)
            rep.acc_weighted[(K, N)] = acc_weighted_k_n(predictions, groundtruth, K, N, beta)
    return rep


def single_return_report(returns: Sequence[int], groundtruth, ns: Sequence[int] = STANDARD_N,
                         beta: float = 1.0) -> MetricReport:
    """Report for a method that returns one crop per image: only K=1 is defined."""
    rets = [[int(r)] for r in returns]
    rep = MetricReport(T=len(groundtruth))
    for N in ns:
        rep.acc[(1, N)] = acc_from_returns(rets, groundtruth, N)
        rep.acc_weighted[(1, N)] = acc_from_returns(rets, groundtruth, N, weighted=True, beta=beta)
    return rep
