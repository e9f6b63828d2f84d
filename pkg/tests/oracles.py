"""Independent reference computations used to freeze expected values."""
import itertools
import math

import numpy as np
from scipy.integrate import quad


def t_pdf(x, df):
    c = math.exp(math.lgamma((df + 1) / 2) - math.lgamma(df / 2)) / math.sqrt(df * math.pi)
    return c * (1 + x * x / df) ** (-(df + 1) / 2)


def t_two_sided_p(t, df):
    tail, _ = quad(t_pdf, abs(t), np.inf, args=(df,), epsabs=1e-12, epsrel=1e-10, limit=200)
    return min(1.0, 2 * tail)


def f_pdf(x, d1, d2):
    if x <= 0:
        return 0.0
    logc = math.lgamma((d1 + d2) / 2) - math.lgamma(d1 / 2) - math.lgamma(d2 / 2)
    logc += (d1 / 2) * math.log(d1 / d2)
    return math.exp(logc + (d1 / 2 - 1) * math.log(x) - ((d1 + d2) / 2) * math.log1p(d1 * x / d2))


def f_upper_p(F, d1, d2):
    # integrate the bounded side for accuracy
    body, _ = quad(f_pdf, 0, F, args=(d1, d2), epsabs=1e-12, epsrel=1e-10, limit=200)
    tail, _ = quad(f_pdf, F, np.inf, args=(d1, d2), epsabs=1e-12, epsrel=1e-10, limit=200)
    return tail if tail < 0.5 else 1 - body


def welch_by_hand(x, y):
    x, y = np.asarray(x, float), np.asarray(y, float)
    vx = sum((v - x.mean()) ** 2 for v in x) / (len(x) - 1) / len(x)
    vy = sum((v - y.mean()) ** 2 for v in y) / (len(y) - 1) / len(y)
    t = (x.mean() - y.mean()) / math.sqrt(vx + vy)
    df = (vx + vy) ** 2 / (vx**2 / (len(x) - 1) + vy**2 / (len(y) - 1))
    return t, df, t_two_sided_p(t, df)


def anova_by_hand(groups):
    allv = [v for g in groups for v in g]
    grand = sum(allv) / len(allv)
    ssb = sum(len(g) * (np.mean(g) - grand) ** 2 for g in groups)
    ssw = sum(sum((v - np.mean(g)) ** 2 for v in g) for g in groups)
    d1, d2 = len(groups) - 1, len(allv) - len(groups)
    F = (ssb / d1) / (ssw / d2)
    return F, f_upper_p(F, d1, d2)


def auroc_pairs(scores, labels):
    """Fraction of (positive, negative) pairs ranked correctly; ties count half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = 0.0
    for p, n in itertools.product(pos, neg):
        total += 1.0 if p > n else 0.5 if p == n else 0.0
    return total / (len(pos) * len(neg))


def percentile_rank(sorted_vals, q):
    """Linear-interpolation percentile from ranks: position q/100 * (n - 1)."""
    pos = q / 100 * (len(sorted_vals) - 1)
    lo = int(math.floor(pos))
    frac = pos - lo
    if lo + 1 >= len(sorted_vals):
        return sorted_vals[-1]
    return sorted_vals[lo] + frac * (sorted_vals[lo + 1] - sorted_vals[lo])


def welch_cases(n_cases=20, seed=0):
    rng = np.random.default_rng(seed)
    for _ in range(n_cases):
        nx, ny = rng.integers(3, 40, size=2)
        yield rng.normal(0, rng.uniform(0.5, 3), nx), rng.normal(rng.uniform(-1.5, 1.5), rng.uniform(0.5, 3), ny)


def anova_cases(n_cases=20, seed=1):
    rng = np.random.default_rng(seed)
    for _ in range(n_cases):
        k = int(rng.integers(2, 6))
        yield [rng.normal(rng.uniform(-1, 1), 1, int(rng.integers(2, 25))) for _ in range(k)]


def auroc_cases(n_cases=100, seed=2):
    rng = np.random.default_rng(seed)
    for i in range(n_cases):
        n = int(rng.integers(2, 51))
        y = rng.integers(0, 2, n)
        y[0], y[1] = 0, 1
        # every third case uses coarse scores to exercise ties
        s = rng.integers(0, 5, n).astype(float) if i % 3 == 0 else rng.normal(size=n)
        yield s, y


def random_nets(n_nets=20, seed=3):
    """(params, x, y, loss_kind) tuples covering both losses and every activation."""
    from aequity import nn

    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_nets):
        depth = int(rng.integers(1, 4))
        d_in = int(rng.integers(2, 7))
        dims = [d_in] + [int(rng.integers(2, 7)) for _ in range(depth - 1)]
        hidden = [str(rng.choice(["relu", "sigmoid", "identity"])) for _ in range(depth - 1)]
        if i % 2:
            dims.append(1)
            acts, kind = hidden + ["sigmoid"], "binary_cross_entropy"
        else:
            dims.append(d_in)
            acts, kind = hidden + [str(rng.choice(["identity", "sigmoid"]))], "mse"
        p = nn.init_network(dims, acts, seed=int(rng.integers(2**31)))
        p.flat += rng.normal(scale=0.1, size=p.flat.size)
        x = rng.normal(size=(int(rng.integers(1, 9)), d_in))
        y = x if kind == "mse" else rng.integers(0, 2, (len(x), 1)).astype(float)
        out.append((p, x, y, kind))
    return out


def fd_relative_error(p, x, y, kind, eps=1e-6):
    """Max elementwise relative error between backprop and central differences."""
    from aequity import nn

    grads, _ = nn.backprop_grads(p, x, y, kind)
    flat = p.flat
    num = np.zeros_like(flat)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = nn.mean_loss(p, x, y, kind)
        flat[i] = old - eps
        down = nn.mean_loss(p, x, y, kind)
        flat[i] = old
        num[i] = (up - down) / (2 * eps)
    scale = np.maximum(np.maximum(np.abs(grads.flat), np.abs(num)), 1e-6)
    return float(np.max(np.abs(grads.flat - num) / scale))
