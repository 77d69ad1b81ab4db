"""Scalar-loop reference implementations used as test oracles."""

import math


def psnr_loop(p, t):
    h, w, c = p.shape
    total = 0.0
    for i in range(h):
        for j in range(w):
            for b in range(c):
                total += (float(p[i, j, b]) - float(t[i, j, b])) ** 2
    mse = total / (h * w * c)
    return 100.0 if mse == 0 else min(10 * math.log10(1 / mse), 100.0)


def sam_loop(p, t, eps=1e-8):
    h, w, c = p.shape
    angles = []
    for i in range(h):
        for j in range(w):
            dot = sum(float(p[i, j, b]) * float(t[i, j, b]) for b in range(c))
            npn = math.sqrt(sum(float(p[i, j, b]) ** 2 for b in range(c)))
            ntn = math.sqrt(sum(float(t[i, j, b]) ** 2 for b in range(c)))
            if npn * ntn > eps:
                angles.append(math.acos(max(-1.0, min(1.0, dot / (npn * ntn)))))
    return math.degrees(sum(angles) / len(angles)) if angles else 0.0


def ergas_loop(p, t, r):
    h, w, c = p.shape
    acc = 0.0
    for b in range(c):
        se = 0.0
        mu = 0.0
        for i in range(h):
            for j in range(w):
                se += (float(p[i, j, b]) - float(t[i, j, b])) ** 2
                mu += float(t[i, j, b])
        rmse = math.sqrt(se / (h * w))
        mu /= h * w
        acc += (rmse / mu) ** 2
    return 100.0 / r * math.sqrt(acc / c)


def l1_loop(p, t):
    total = 0.0
    count = 0
    for a, b in zip(p.ravel(), t.ravel()):
        total += abs(float(a) - float(b))
        count += 1
    return total / count
