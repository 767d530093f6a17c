#!/usr/bin/env python3
"""Golden values for the 8x8 metric fixtures.

Straight-line numpy versions of the structure measure, weighted F-measure,
enhanced-alignment measure and the Dice/IoU threshold sweep. Nothing here
shares code with the C++ library; distances are brute force over all pixel
pairs. Run it and paste the printed table into tests/metric_fixtures.hpp.
"""
import numpy as np

EPS = np.finfo(np.float64).eps


def fixtures():
    ys, xs = np.mgrid[0:8, 0:8]
    half = (xs >= 4).astype(np.float64)
    blurred = np.clip((xs - 1.5) / 5.0 + 0.05 * ((3 * ys + xs) % 3), 0.0, 1.0)

    blob = ((ys - 3.5) ** 2 + (xs - 4.0) ** 2 <= 6.5).astype(np.float64)
    vals = []
    state = 12345
    for _ in range(64):
        state = (1103515245 * state + 12345) % 2147483648
        vals.append((state >> 16) % 256)
    noisy = np.array(vals, dtype=np.float64).reshape(8, 8) / 255.0

    complement = 1.0 - half
    return [("half_blurred", blurred, half), ("blob_noisy", noisy, blob), ("half_complement", complement, half)]


def s_object(values):
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + EPS)


def ssim(p, g):
    n = p.size
    x, y = p.mean(), g.mean()
    sxx = ((p - x) ** 2).sum() / (n - 1 + EPS)
    syy = ((g - y) ** 2).sum() / (n - 1 + EPS)
    sxy = ((p - x) * (g - y)).sum() / (n - 1 + EPS)
    alpha = 4 * x * y * sxy
    beta = (x * x + y * y) * (sxx + syy)
    if alpha != 0:
        return alpha / (beta + EPS)
    return 1.0 if beta == 0 else 0.0


def s_measure(p, g):
    y = g.mean()
    if y == 0:
        return 1.0 - p.mean()
    if y == 1:
        return p.mean()
    fg = p * g
    bg = (1 - p) * (1 - g)
    obj = y * s_object(fg[g == 1]) + (1 - y) * s_object(bg[g == 0])
    rows, cols = np.nonzero(g)
    cy = int(np.floor((rows + 1).mean() + 0.5))
    cx = int(np.floor((cols + 1).mean() + 0.5))
    h, w = g.shape
    region = 0.0
    for r0, r1 in ((0, cy), (cy, h)):
        for c0, c1 in ((0, cx), (cx, w)):
            if r1 <= r0 or c1 <= c0:
                continue
            region += (r1 - r0) * (c1 - c0) / (h * w) * ssim(p[r0:r1, c0:c1], g[r0:r1, c0:c1])
    return max(0.0, 0.5 * obj + 0.5 * region)


def weighted_f(p, g):
    h, w = g.shape
    fg = [(i, j) for i in range(h) for j in range(w) if g[i, j] == 1]
    if not fg:
        return 0.0
    e = np.abs(p - g)
    et = e.copy()
    dist = np.zeros_like(p)
    for i in range(h):
        for j in range(w):
            if g[i, j] == 1:
                continue
            best = min(fg, key=lambda q: ((q[0] - i) ** 2 + (q[1] - j) ** 2, q[0] * w + q[1]))
            et[i, j] = e[best]
            dist[i, j] = np.sqrt((best[0] - i) ** 2 + (best[1] - j) ** 2)
    ax = np.arange(-3, 4)
    k = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * 25.0))
    k[k < EPS * k.max()] = 0
    k /= k.sum()
    padded = np.zeros((h + 6, w + 6))
    padded[3:-3, 3:-3] = et
    ea = np.zeros_like(p)
    for i in range(h):
        for j in range(w):
            ea[i, j] = (padded[i:i + 7, j:j + 7] * k).sum()
    min_e = e.copy()
    mask = (g == 1) & (ea < e)
    min_e[mask] = ea[mask]
    b = np.ones_like(p)
    b[g == 0] = 2 - np.exp(np.log(0.5) / 5 * dist[g == 0])
    ew = min_e * b
    tpw = g.sum() - ew[g == 1].sum()
    fpw = ew[g == 0].sum()
    r = 1 - ew[g == 1].mean()
    prec = tpw / (EPS + tpw + fpw)
    return 2 * r * prec / (EPS + r + prec)


def e_at(p, g, t):
    fm = (p >= t / 255.0).astype(np.float64)
    if g.sum() == 0:
        return 1 - fm.mean()
    if g.sum() == g.size:
        return fm.mean()
    dfm = fm - fm.mean()
    dgt = g - g.mean()
    align = 2 * dfm * dgt / (dfm ** 2 + dgt ** 2)
    return (((align + 1) ** 2) / 4).mean()


def dice_iou(p, g):
    dice, iou = [], []
    for t in range(256):
        b = p >= t / 255.0
        inter = (b & (g == 1)).sum()
        size = b.sum() + g.sum()
        union = (b | (g == 1)).sum()
        dice.append(1.0 if size == 0 else 2 * inter / size)
        iou.append(1.0 if union == 0 else inter / union)
    return np.mean(dice), np.mean(iou)


def main():
    for name, p, g in fixtures():
        d, i = dice_iou(p, g)
        em = max(e_at(p, g, t) for t in range(256))
        print(f'  {{"{name}", {d:.12f}, {i:.12f}, {weighted_f(p, g):.12f}, {s_measure(p, g):.12f}, '
              f'{em:.12f}, {np.abs(p - g).mean():.12f}}},')


if __name__ == "__main__":
    main()
