"""Deliberately naive re-implementations used as test oracles.

Plain Python loops, no vectorisation, nothing shared with the package code.
"""

import math


def mae(pred, truth, mask):
    total, n = 0.0, 0
    for p, t, m in zip(pred, truth, mask):
        if not m:
            total += abs(p - t)
            n += 1
    return total / n


def mae_on(pred, truth, delta, mask):
    total, n = 0.0, 0
    for p, t, m in zip(pred, truth, mask):
        if not m and t >= delta:
            total += abs(p - t)
            n += 1
    return None if n == 0 else total / n


def epd(pred, truth, mask, per_day=14400, period=6):
    days = len(pred) // per_day
    errs = []
    for d in range(days):
        e_hat = e = 0.0
        for i in range(d * per_day, (d + 1) * per_day):
            if not mask[i]:
                e_hat += pred[i] * period / 3600
                e += truth[i] * period / 3600
        errs.append(abs(e_hat - e))
    return sum(errs) / len(errs)


def prf1(pred, truth, delta, mask):
    tp = fp = fn = 0
    for p, t, m in zip(pred, truth, mask):
        if m:
            continue
        on_p, on_t = p >= delta, t >= delta
        if on_p and on_t:
            tp += 1
        elif on_p:
            fp += 1
        elif on_t:
            fn += 1
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def median_recombine(windows, origins, length):
    covering = [[] for _ in range(length)]
    for w, o in zip(windows, origins):
        for j, v in enumerate(w):
            if o + j < length:
                covering[o + j].append(float(v))
    out = []
    for vals in covering:
        vals.sort()
        k = len(vals)
        out.append(vals[k // 2] if k % 2 else (vals[k // 2 - 1] + vals[k // 2]) / 2)
    return out


def welch(a, b):
    def mean(x):
        return sum(x) / len(x)

    def var(x):
        m = mean(x)
        return sum((v - m) ** 2 for v in x) / (len(x) - 1)

    sa, sb = var(a) / len(a), var(b) / len(b)
    t = (mean(a) - mean(b)) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa ** 2 / (len(a) - 1) + sb ** 2 / (len(b) - 1))
    return t, df
