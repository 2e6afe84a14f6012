"""Naive reference implementations used as independent test oracles.

Nothing here imports the code under test.
"""

from collections import deque

import numpy as np


def conv2d_naive(x, w, b, pad):
    n, c, h, wd = x.shape
    o, _, kh, kw = w.shape
    xp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad), dtype=np.float64)
    xp[:, :, pad:pad + h, pad:pad + wd] = x
    oh, ow = h + 2 * pad - kh + 1, wd + 2 * pad - kw + 1
    out = np.zeros((n, o, oh, ow))
    for ni in range(n):
        for oi in range(o):
            for i in range(oh):
                for j in range(ow):
                    acc = float(b[oi])
                    for ci in range(c):
                        for a in range(kh):
                            for bb in range(kw):
                                acc += w[oi, ci, a, bb] * xp[ni, ci, i + a, j + bb]
                    out[ni, oi, i, j] = acc
    return out


def maxpool_naive(x):
    n, c, h, w = x.shape
    out = np.zeros((n, c, h // 2, w // 2), dtype=x.dtype)
    for ni in range(n):
        for ci in range(c):
            for i in range(h // 2):
                for j in range(w // 2):
                    out[ni, ci, i, j] = max(x[ni, ci, 2 * i + a, 2 * j + b]
                                            for a in range(2) for b in range(2))
    return out


def upconv_scatter_naive(x, w, b):
    """Transpose convolution by scattering each input pixel through the kernel."""
    n, c, h, wd = x.shape
    o = w.shape[0]
    out = np.zeros((n, o, 2 * h, 2 * wd))
    for ni in range(n):
        for ci in range(c):
            for i in range(h):
                for j in range(wd):
                    for oi in range(o):
                        for a in range(2):
                            for bb in range(2):
                                out[ni, oi, 2 * i + a, 2 * j + bb] += x[ni, ci, i, j] * w[oi, ci, a, bb]
    out += np.asarray(b, dtype=np.float64)[None, :, None, None]
    return out


def strided_conv2x2_naive(y, w):
    """Stride-2 2x2 correlation mapping (n, o, 2h, 2w) -> (n, c, h, w) with w (o, c, 2, 2)."""
    n, o, h2, w2 = y.shape
    c = w.shape[1]
    out = np.zeros((n, c, h2 // 2, w2 // 2))
    for ni in range(n):
        for ci in range(c):
            for i in range(h2 // 2):
                for j in range(w2 // 2):
                    out[ni, ci, i, j] = sum(w[oi, ci, a, bb] * y[ni, oi, 2 * i + a, 2 * j + bb]
                                            for oi in range(o) for a in range(2) for bb in range(2))
    return out


def components_bfs(mask, class_id, connectivity=8):
    """List of pixel lists, ordered by each component's first pixel in raster order."""
    m = np.asarray(mask) == class_id
    h, w = m.shape
    seen = np.zeros_like(m)
    if connectivity == 8:
        nbrs = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]
    else:
        nbrs = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    comps = []
    for r in range(h):
        for c in range(w):
            if m[r, c] and not seen[r, c]:
                seen[r, c] = True
                q = deque([(r, c)])
                pix = []
                while q:
                    y, x = q.popleft()
                    pix.append((y, x))
                    for dy, dx in nbrs:
                        yy, xx = y + dy, x + dx
                        if 0 <= yy < h and 0 <= xx < w and m[yy, xx] and not seen[yy, xx]:
                            seen[yy, xx] = True
                            q.append((yy, xx))
                comps.append(sorted(pix))
    return comps


def confusion_loop(pred, truth, positive=(1,)):
    tp = tn = fp = fn = 0
    for p, t in zip(np.ravel(pred), np.ravel(truth)):
        pp, tt = p in positive, t in positive
        if pp and tt:
            tp += 1
        elif pp:
            fp += 1
        elif tt:
            fn += 1
        else:
            tn += 1
    return tp, tn, fp, fn
