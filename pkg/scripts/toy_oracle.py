"""Scalar-loop reference for the toy experiment, frozen as a test fixture.

Written without the package's loss or optimizer code: plain Python lists,
explicit loops over pairs and candidates. Only the seeded initial points
are shared (``numpy.random.default_rng(seed).uniform(0, 1, (2, n, dims))``).

    python scripts/toy_oracle.py tests/fixtures/toy_oracle.json
"""

import json
import math
import sys

import numpy as np


def dist(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))


def unit(a, b):
    d = dist(a, b)
    if d == 0:
        return [0.0] * len(a)
    return [(x - y) / d for x, y in zip(a, b)]


def grads(loss, s, t):
    n, dims = len(s), len(s[0])
    gs = [[0.0] * dims for _ in range(n)]
    gt = [[0.0] * dims for _ in range(n)]
    total = 0.0
    for i in range(n):
        dpos = dist(s[i], t[i])
        if loss == "posdist":
            total += dpos
            u = unit(s[i], t[i])
            for k in range(dims):
                gs[i][k] += u[k] / n
                gt[i][k] -= u[k] / n
            continue
        best = None
        for j in range(n):
            if j == i:
                continue
            # s_j against sdot_i first, then sdot_j against s_i
            for side, d in (("s", dist(s[j], t[i])), ("sdot", dist(s[i], t[j]))):
                if best is None or d < best[0]:
                    best = (d, j, side)
        dneg, j, side = best
        term = 1.0 + dpos - dneg
        total += max(term, 0.0)
        if term <= 0:
            continue
        u = unit(s[i], t[i])
        for k in range(dims):
            gs[i][k] += u[k] / n
            gt[i][k] -= u[k] / n
        if side == "sdot":
            anchor, neg, ga, gn = s[i], t[j], gs[i], gt[j]
        else:
            anchor, neg, ga, gn = t[i], s[j], gt[i], gs[j]
        v = unit(anchor, neg)
        for k in range(dims):
            ga[k] -= v[k] / n
            if loss == "hardneg":
                gn[k] += v[k] / n
    return total / n, gs, gt


def run(loss, pts, steps=150, lr=0.01, b1=0.9, b2=0.999, eps=1e-8):
    n, dims = len(pts[0]), len(pts[0][0])
    s = [list(p) for p in pts[0]]
    t = [list(p) for p in pts[1]]
    m = [0.0] * (2 * n * dims)
    v = [0.0] * (2 * n * dims)
    losses = []
    for step in range(1, steps + 1):
        value, gs, gt = grads(loss, s, t)
        losses.append(value)
        flat = [x for row in gs for x in row] + [x for row in gt for x in row]
        params = [x for row in s for x in row] + [x for row in t for x in row]
        for k, g in enumerate(flat):
            m[k] = b1 * m[k] + (1 - b1) * g
            v[k] = b2 * v[k] + (1 - b2) * g * g
            mh = m[k] / (1 - b1 ** step)
            vh = v[k] / (1 - b2 ** step)
            params[k] -= lr * mh / (math.sqrt(vh) + eps)
        s = [params[i * dims:(i + 1) * dims] for i in range(n)]
        t = [params[(n + i) * dims:(n + i + 1) * dims] for i in range(n)]
    losses.append(grads(loss, s, t)[0])
    return s, t, losses


def summary(s, t):
    n = len(s)
    pos = sum(dist(s[i], t[i]) for i in range(n)) / n
    pts = [(i, p) for i, p in enumerate(s)] + [(i, p) for i, p in enumerate(t)]
    cross = min(dist(p, q) for a, p in pts for b, q in pts if a != b)
    return pos, cross


def main(path, seed=1, n=5, dims=2):
    init = np.random.default_rng(seed).uniform(0.0, 1.0, size=(2, n, dims)).tolist()
    out = {"seed": seed, "n_pairs": n, "dims": dims, "steps": 150, "lr": 0.01,
           "initial": init, "initial_mean_positive": summary(init[0], init[1])[0], "runs": {}}
    for loss in ("posdist", "hardneg", "hardnegc"):
        s, t, losses = run(loss, init)
        pos, cross = summary(s, t)
        out["runs"][loss] = {"final": [s, t], "final_loss": losses[-1],
                             "mean_positive": pos, "min_cross_pair": cross}
    with open(path, "w") as fh:
        json.dump(out, fh, indent=1)
        fh.write("\n")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "tests/fixtures/toy_oracle.json")
