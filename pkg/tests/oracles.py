"""Slow, direct reference implementations used only to cross-check the library."""
from __future__ import annotations

import itertools
import math

import numpy as np


def central_diff(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Gradient of scalar f at x by central differences (x is perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        fp = f()
        x[i] = old - eps
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * eps)
    return g


def rel_err(a, b) -> float:
    a, b = np.asarray(a, np.float64), np.asarray(b, np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


# ---------------------------------------------------------------- SSIM

def ssim_naive(a: np.ndarray, b: np.ndarray, size: int = 11, sigma: float = 1.5) -> float:
    """Window-by-window SSIM with an explicit 2-D Gaussian, valid positions only."""
    a = np.asarray(a, np.float64)
    b = np.asarray(b, np.float64)
    if a.ndim == 2:
        a, b = a[None], b[None]
    ax = np.arange(size) - (size - 1) / 2.0
    w = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * sigma * sigma))
    w /= w.sum()
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    vals = []
    for ch in range(a.shape[0]):
        for i in range(a.shape[1] - size + 1):
            for j in range(a.shape[2] - size + 1):
                pa = a[ch, i:i + size, j:j + size]
                pb = b[ch, i:i + size, j:j + size]
                ma, mb = (w * pa).sum(), (w * pb).sum()
                va = (w * (pa - ma) ** 2).sum()
                vb = (w * (pb - mb) ** 2).sum()
                cov = (w * (pa - ma) * (pb - mb)).sum()
                vals.append(((2 * ma * mb + c1) * (2 * cov + c2))
                            / ((ma * ma + mb * mb + c1) * (va + vb + c2)))
    return float(np.mean(vals))


# ---------------------------------------------------------------- clustering

def _d(p, q):
    return math.sqrt(sum((u - v) ** 2 for u, v in zip(p, q)))


def silhouette_naive(x, lab) -> float:
    n = len(x)
    scores = []
    for i in range(n):
        own = [j for j in range(n) if lab[j] == lab[i] and j != i]
        if not own:
            scores.append(0.0)
            continue
        a = sum(_d(x[i], x[j]) for j in own) / len(own)
        b = min(sum(_d(x[i], x[j]) for j in range(n) if lab[j] == c)
                / sum(1 for j in range(n) if lab[j] == c)
                for c in set(lab) if c != lab[i])
        scores.append((b - a) / max(a, b) if max(a, b) > 0 else 0.0)
    return sum(scores) / n


def calinski_harabasz_naive(x, lab) -> float:
    x = np.asarray(x, np.float64)
    labels = sorted(set(lab))
    k, n = len(labels), len(x)
    mean = x.mean(0)
    between = within = 0.0
    for c in labels:
        pts = x[[i for i in range(n) if lab[i] == c]]
        cen = pts.mean(0)
        between += len(pts) * float(((cen - mean) ** 2).sum())
        within += float(((pts - cen) ** 2).sum())
    return (between / (k - 1)) / (within / (n - k))


def dunn_naive(x, lab) -> float:
    n = len(x)
    inter = min(_d(x[i], x[j]) for i in range(n) for j in range(n) if lab[i] != lab[j])
    diam = max(_d(x[i], x[j]) for i in range(n) for j in range(n) if lab[i] == lab[j])
    return inter / diam


def _pairs(lab):
    return {(i, j) for i, j in itertools.combinations(range(len(lab)), 2) if lab[i] == lab[j]}


def ari_naive(a, b) -> float:
    """Pair-counting ARI (Hubert-Arabie)."""
    n = len(a)
    total = n * (n - 1) / 2
    sa, sb = _pairs(a), _pairs(b)
    both = len(sa & sb)
    exp = len(sa) * len(sb) / total
    mx = (len(sa) + len(sb)) / 2
    return 1.0 if mx == exp else (both - exp) / (mx - exp)


def fmi_naive(a, b) -> float:
    sa, sb = _pairs(a), _pairs(b)
    tp = len(sa & sb)
    return tp / math.sqrt(len(sa) * len(sb)) if tp else 0.0


def ami_naive(a, b) -> float:
    """AMI with max-entropy normalization; EMI summed term by term with factorials."""
    n = len(a)
    ua, ub = sorted(set(a)), sorted(set(b))
    ca = [sum(1 for v in a if v == u) for u in ua]
    cb = [sum(1 for v in b if v == u) for u in ub]
    if len(ua) == len(ub) == 1 or len(ua) == len(ub) == n:
        return 1.0
    mi = 0.0
    for i, u in enumerate(ua):
        for j, v in enumerate(ub):
            nij = sum(1 for p, q in zip(a, b) if p == u and q == v)
            if nij:
                mi += nij / n * math.log(n * nij / (ca[i] * cb[j]))
    lf = [math.lgamma(k + 1) for k in range(n + 1)]
    emi = 0.0
    for ai in ca:
        for bj in cb:
            for nij in range(max(1, ai + bj - n), min(ai, bj) + 1):
                logp = (lf[ai] + lf[bj] + lf[n - ai] + lf[n - bj] - lf[n] - lf[nij]
                        - lf[ai - nij] - lf[bj - nij] - lf[n - ai - bj + nij])
                emi += nij / n * math.log(n * nij / (ai * bj)) * math.exp(logp)

    def ent(c):
        return -sum(k / n * math.log(k / n) for k in c)

    return (mi - emi) / (max(ent(ca), ent(cb)) - emi)
