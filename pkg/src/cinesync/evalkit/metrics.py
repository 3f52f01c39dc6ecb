"""Reconstruction and retrieval metrics."""
from __future__ import annotations

import numpy as np
from scipy import ndimage

PSNR_CAP = 99.0
LUMA = np.array([0.299, 0.587, 0.114])


def psnr(a, b) -> float:
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"psnr shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * np.log10(1.0 / mse))


def _gray(x: np.ndarray) -> np.ndarray:
    return x @ LUMA if x.ndim == 3 and x.shape[-1] == 3 else x


def gaussian_window(size: int = 7, sigma: float = 1.5) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (r / sigma) ** 2)
    w = np.outer(g, g)
    return w / w.sum()


def ssim(a, b, size: int = 7, sigma: float = 1.5, k1: float = 0.01, k2: float = 0.03,
         data_range: float = 1.0) -> float:
    """Mean SSIM over all full window positions (valid region, no padding)."""
    a, b = _gray(np.asarray(a, dtype=np.float64)), _gray(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ValueError(f"ssim shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim != 2 or min(a.shape) < size:
        raise ValueError(f"ssim needs 2-D frames of at least {size}x{size}, got {a.shape}")
    w = gaussian_window(size, sigma)
    f = lambda x: ndimage.correlate(x, w, mode="constant")[size // 2: a.shape[0] - size // 2,
                                                          size // 2: a.shape[1] - size // 2]
    mu_a, mu_b = f(a), f(b)
    saa = f(a * a) - mu_a ** 2
    sbb = f(b * b) - mu_b ** 2
    sab = f(a * b) - mu_a * mu_b
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    m = ((2 * mu_a * mu_b + c1) * (2 * sab + c2)) / ((mu_a ** 2 + mu_b ** 2 + c1) * (saa + sbb + c2))
    return float(m.mean())


def video_ssim(a, b) -> float:
    """Mean frame SSIM of two (frames, H, W[, 3]) videos."""
    return float(np.mean([ssim(x, y) for x, y in zip(a, b)]))


def _unit(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / np.maximum(np.linalg.norm(x, axis=-1, keepdims=True), 1e-12)


def nway_topk_per_query(queries, gallery, n_way: int, k: int = 1, trials: int = 100,
                        rng: np.random.Generator | None = None) -> np.ndarray:
    """Per-query success rate of the N-way top-K retrieval test.

    Query i's positive is gallery row i. Each trial draws ``n_way - 1``
    distractors uniformly without replacement from the other rows; the query
    succeeds when fewer than ``k`` candidates outrank the positive. A
    distractor outranks it if its cosine similarity is larger, or equal with a
    lower gallery index. Because only the number of outranking distractors
    matters, that count is drawn directly from its hypergeometric law, which
    is the same distribution as explicit sampling without replacement.
    """
    q, g = _unit(queries), _unit(gallery)
    n = len(g)
    if len(q) != n:
        raise ValueError(f"{len(q)} queries for a gallery of {n}")
    if not 1 <= n_way <= n:
        raise ValueError(f"N-way {n_way} needs 1 <= N <= gallery size {n}")
    if k < 1:
        raise ValueError("k must be >= 1")
    rng = np.random.default_rng(0) if rng is None else rng
    sims = q @ g.T
    pos = np.diag(sims)
    idx = np.arange(n)
    beats = (sims > pos[:, None]) | ((sims == pos[:, None]) & (idx[None] < idx[:, None]))
    beats[idx, idx] = False
    n_beat = beats.sum(axis=1)
    if n_way == 1:
        return np.ones(n)
    draws = rng.hypergeometric(np.repeat(n_beat, trials), np.repeat(n - 1 - n_beat, trials),
                               n_way - 1).reshape(n, trials)
    return (draws < k).mean(axis=1)


def nway_topk(queries, gallery, n_way: int, k: int = 1, trials: int = 100,
              rng: np.random.Generator | None = None) -> float:
    return float(nway_topk_per_query(queries, gallery, n_way, k, trials, rng).mean())


def temporal_consistency(frames, embedder) -> float:
    """Mean cosine similarity of consecutive frame embeddings."""
    frames = np.asarray(frames)
    if len(frames) < 2:
        raise ValueError("temporal consistency needs at least 2 frames")
    e = _unit(embedder(frames))
    return float(np.mean(np.sum(e[1:] * e[:-1], axis=1)))


def frechet_distance(a, b, eps: float = 1e-6) -> float:
    """Frechet distance between Gaussian fits of two embedding sets (rows are samples)."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("frechet_distance needs at least 2 samples per set")
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"embedding widths differ: {a.shape[1]} vs {b.shape[1]}")
    d = a.shape[1]
    mu_a, mu_b = a.mean(0), b.mean(0)
    sa = np.atleast_2d(np.cov(a, rowvar=False)) + eps * np.eye(d)
    sb = np.atleast_2d(np.cov(b, rowvar=False)) + eps * np.eye(d)
    if not (np.isfinite(sa).all() and np.isfinite(sb).all()):
        raise ValueError("non-finite covariance")
    # Tr (Sa Sb)^1/2 = Tr (Sa^1/2 Sb Sa^1/2)^1/2, the inner product being symmetric PSD
    w, v = np.linalg.eigh(sa)
    ra = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
    inner = ra @ sb @ ra
    ev = np.linalg.eigvalsh((inner + inner.T) / 2)
    tr_cross = float(np.sqrt(np.clip(ev, 0.0, None)).sum())
    value = float(np.sum((mu_a - mu_b) ** 2) + np.trace(sa) + np.trace(sb) - 2.0 * tr_cross)
    return max(value, 0.0)
