"""FastICA (symmetric, tanh contrast) and ECG-correlated component removal."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..numcore.rng import stream

log = logging.getLogger(__name__)


@dataclass
class ICAResult:
    sources: np.ndarray     # (k, N)
    mixing: np.ndarray      # (C, k)
    unmixing: np.ndarray    # (k, C)
    mean: np.ndarray        # (C,)
    n_iter: int
    converged: bool


def _sym_decorrelate(W: np.ndarray) -> np.ndarray:
    s, u = np.linalg.eigh(W @ W.T)
    s = np.clip(s, np.finfo(W.dtype).tiny, None)
    return (u * (1.0 / np.sqrt(s))) @ u.T @ W


def fastica(X: np.ndarray, n_components: int, seed: int = 0, tol: float = 1e-4,
            max_iter: int = 200) -> ICAResult:
    """Unmix rows of ``X`` (channels x samples) into ``n_components`` sources."""
    X = np.asarray(X, dtype=np.float64)
    C, N = X.shape
    k = min(n_components, C)
    if N < 10 * k:
        raise ValueError(f"need at least {10 * k} samples for {k} components, got {N}")
    mean = X.mean(axis=1)
    Xc = X - mean[:, None]
    evals, evecs = np.linalg.eigh(Xc @ Xc.T / N)
    order = np.argsort(evals)[::-1][:k]
    d, E = np.clip(evals[order], 1e-300, None), evecs[:, order]
    K = (E / np.sqrt(d)).T                                   # whitening, (k, C)
    Z = K @ Xc

    W = _sym_decorrelate(stream(seed, "fastica").normal(size=(k, k)))
    best, best_lim, converged, it = W, np.inf, False, 0
    for it in range(1, max_iter + 1):
        G = np.tanh(W @ Z)
        W_new = _sym_decorrelate(G @ Z.T / N - np.diag((1.0 - G ** 2).mean(axis=1)) @ W)
        lim = float(np.max(np.abs(np.abs(np.einsum("ij,ij->i", W_new, W)) - 1.0)))
        W = W_new
        if lim < best_lim:
            best, best_lim = W, lim
        if lim < tol:
            converged = True
            break
    if not converged:
        log.warning("FastICA did not converge in %d iterations (last change %.2e)", max_iter, best_lim)
        W = best
    unmix = W @ K
    mixing = (E * np.sqrt(d)) @ W.T
    return ICAResult(W @ Z, mixing, unmix, mean, it, converged)


def fastica_cleanup(eeg: np.ndarray, ecg: np.ndarray, n_components: int = 20,
                    corr_threshold: float = 0.8, seed: int = 0) -> tuple[np.ndarray, dict]:
    """Remove independent components whose |corr| with the ECG trace exceeds the threshold.

    Only the removed components' back-projections are subtracted, so the
    signal outside the retained ICA subspace is kept as is.
    """
    res = fastica(eeg, n_components, seed=seed)
    ecg = np.asarray(ecg, dtype=np.float64).reshape(-1)
    e = (ecg - ecg.mean()) / (ecg.std() + 1e-300)
    S = res.sources
    Sn = (S - S.mean(axis=1, keepdims=True)) / (S.std(axis=1, keepdims=True) + 1e-300)
    corr = Sn @ e / len(e)
    removed = np.flatnonzero(np.abs(corr) > corr_threshold)
    out = np.asarray(eeg, dtype=np.float64) - res.mixing[:, removed] @ S[removed]
    info = {"step": "ica", "removed": removed.tolist(), "max_abs_corr": float(np.abs(corr).max()),
            "converged": res.converged, "n_iter": res.n_iter}
    return out, info
