"""Nearest-neighbor baseline on pooled scaleogram features."""

from __future__ import annotations

import numpy as np


def pool_features(images: np.ndarray, out_side: int = 8) -> np.ndarray:
    """Average-pools (N, H, W) images down to (N, out_side**2) vectors."""
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 3:
        raise ValueError("expected a stack of 2-d images")
    n, h, w = images.shape
    if h % out_side or w % out_side:
        raise ValueError(f"image sides must be divisible by {out_side}")
    bh, bw = h // out_side, w // out_side
    pooled = images.reshape(n, out_side, bh, out_side, bw).mean(axis=(2, 4))
    return pooled.reshape(n, out_side * out_side)


def knn_predict(train_feats: np.ndarray, train_labels: np.ndarray,
                test_feats: np.ndarray, k: int) -> np.ndarray:
    """Majority vote over the Euclidean k nearest; ties go to the
    candidate class with the smallest summed neighbor distance."""
    train_feats = np.asarray(train_feats, dtype=np.float64)
    test_feats = np.asarray(test_feats, dtype=np.float64)
    train_labels = np.asarray(train_labels)
    if k < 1 or k % 2 == 0:
        raise ValueError("k must be a positive odd integer")
    if k > len(train_feats):
        raise ValueError("k exceeds the training set size")
    if len(train_feats) != len(train_labels):
        raise ValueError("feature/label length mismatch")

    preds = np.empty(len(test_feats), dtype=train_labels.dtype)
    # chunked so the distance matrix stays small
    for lo in range(0, len(test_feats), 256):
        block = test_feats[lo:lo + 256]
        d2 = ((block[:, None, :] - train_feats[None, :, :]) ** 2).sum(axis=2)
        order = np.argsort(d2, axis=1, kind="stable")[:, :k]
        for row, idx in enumerate(order):
            labels = train_labels[idx]
            dists = np.sqrt(d2[row, idx])
            votes: dict = {}
            for lbl, dist in zip(labels.tolist(), dists.tolist()):
                cnt, tot = votes.get(lbl, (0, 0.0))
                votes[lbl] = (cnt + 1, tot + dist)
            best = max(votes.items(), key=lambda kv: (kv[1][0], -kv[1][1]))
            preds[lo + row] = best[0]
    return preds
