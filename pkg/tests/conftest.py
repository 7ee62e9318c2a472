"""Shared brute-force oracles, independent of the library's compute paths."""

import math

import numpy as np
import pytest


def dwconv_bruteforce(x: np.ndarray, k: np.ndarray) -> np.ndarray:
    """Six nested loops: per-channel same-padded cross-correlation."""
    c, h, w = x.shape
    _, kh, kw = k.shape
    ph, pw = kh // 2, kw // 2
    out = np.zeros_like(x)
    for ci in range(c):
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for di in range(kh):
                    for dj in range(kw):
                        si, sj = i + di - ph, j + dj - pw
                        if 0 <= si < h and 0 <= sj < w:
                            acc += x[ci, si, sj] * k[ci, di, dj]
                out[ci, i, j] = acc
    return out


def scan_scalar_loop(x, delta, a, b, c_out, skip):
    """Pure per-timestep, per-channel, per-state scalar evaluation."""
    l, c = x.shape
    n = a.shape[1]
    h = np.zeros((c, n))
    y = np.zeros_like(x)
    for t in range(l):
        for ci in range(c):
            acc = 0.0
            for ni in range(n):
                abar = math.exp(delta[t, ci] * a[ci, ni])
                bbar_x = delta[t, ci] * b[t, ni] * x[t, ci]
                h[ci, ni] = abar * h[ci, ni] + bbar_x
                acc += h[ci, ni] * c_out[t, ni]
            y[t, ci] = acc + skip[ci] * x[t, ci]
    return y


def dsc_set_oracle(pred: np.ndarray, true: np.ndarray, num_classes: int):
    """Set-based counting of Dice per class."""
    out = []
    for cls in range(num_classes):
        p = {(i, j) for i, j in zip(*np.nonzero(pred == cls))}
        t = {(i, j) for i, j in zip(*np.nonzero(true == cls))}
        if not p and not t:
            out.append(1.0)
        elif not p or not t:
            out.append(0.0)
        else:
            out.append(2.0 * len(p & t) / (len(p) + len(t)))
    return np.array(out)


def boundary_bruteforce(region: np.ndarray) -> list[tuple[int, int]]:
    """Region pixels with a differing 8-neighbour or on the image edge."""
    h, w = region.shape
    pixels = []
    for i in range(h):
        for j in range(w):
            if not region[i, j]:
                continue
            on_edge = i == 0 or j == 0 or i == h - 1 or j == w - 1
            differs = any(
                not region[i + di, j + dj]
                for di in (-1, 0, 1) for dj in (-1, 0, 1)
                if (di or dj) and 0 <= i + di < h and 0 <= j + dj < w)
            if on_edge or differs:
                pixels.append((i, j))
    return pixels


def percentile95_linear(values) -> float:
    """Manual linear-interpolated 95th percentile."""
    data = sorted(float(v) for v in values)
    if len(data) == 1:
        return data[0]
    pos = (len(data) - 1) * 0.95
    lo = int(math.floor(pos))
    frac = pos - lo
    return data[lo] + frac * (data[min(lo + 1, len(data) - 1)] - data[lo])


def hd95_bruteforce(pred: np.ndarray, true: np.ndarray, num_classes: int):
    """All-pairs directed distances, pooled percentile."""
    out = []
    for cls in range(num_classes):
        bp = boundary_bruteforce(pred == cls)
        bt = boundary_bruteforce(true == cls)
        if not bp or not bt:
            out.append(None)
            continue
        pooled = []
        for (i, j) in bp:
            pooled.append(min(math.sqrt((i - u) ** 2 + (j - v) ** 2) for (u, v) in bt))
        for (u, v) in bt:
            pooled.append(min(math.sqrt((i - u) ** 2 + (j - v) ** 2) for (i, j) in bp))
        out.append(percentile95_linear(pooled))
    return out


def ce_scalar_oracle(logits: np.ndarray, mask: np.ndarray) -> float:
    """Per-pixel scalar loop cross-entropy with max stabilization."""
    k, h, w = logits.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            col = logits[:, i, j]
            m = col.max()
            lse = m + math.log(sum(math.exp(v - m) for v in col))
            total += lse - col[mask[i, j]]
    return total / (h * w)


@pytest.fixture
def tmp_out(tmp_path):
    return tmp_path
