"""Shared test oracles: finite differences, a from-scratch global-attention
layer, and brute-force metric loops."""

import math

import numpy as np
from scipy.special import erf


def global_block_oracle(x, p, heads, eps=1e-5):
    """Full-sequence transformer layer in plain numpy, coded independently
    of the package's tensor engine: LN -> per-head biased softmax attention
    -> projection -> residual -> LN -> GELU MLP -> residual."""

    def ln(v, gamma, beta):
        mu = v.mean(axis=-1, keepdims=True)
        var = v.var(axis=-1, keepdims=True)
        return (v - mu) / np.sqrt(var + eps) * gamma + beta

    T, C = x.shape
    d = C // heads
    h = ln(x, p["ln1.gamma"], p["ln1.beta"])
    q, k, v = h @ p["attn.Wq"], h @ p["attn.Wk"], h @ p["attn.Wv"]
    table = p["attn.bias"]
    offs = np.arange(T)[:, None] - np.arange(T)[None, :] + (T - 1)
    z = np.empty((T, C))
    for head in range(heads):
        sl = slice(head * d, (head + 1) * d)
        scores = q[:, sl] @ k[:, sl].T / math.sqrt(d) + table[head][offs]
        e = np.exp(scores - scores.max(axis=1, keepdims=True))
        a = e / e.sum(axis=1, keepdims=True)
        z[:, sl] = a @ v[:, sl]
    x1 = x + z @ p["attn.Wz"]
    h2 = ln(x1, p["ln2.gamma"], p["ln2.beta"])
    m = h2 @ p["mlp.W1"] + p["mlp.b1"]
    m = 0.5 * m * (1.0 + erf(m / math.sqrt(2.0)))
    return x1 + m @ p["mlp.W2"] + p["mlp.b2"]


def finite_diff_check(build, shapes, seed=0, h=1e-6, floor=1e-3):
    """Max relative error between analytic grads and central differences.

    ``build(*tensors)`` must return an output tensor; the probing loss is
    sum(out * out) so every output element matters.
    """
    from mswecg import tensor as tc

    rng = np.random.default_rng(seed)
    xs = [tc.Tensor(rng.normal(size=s), requires_grad=True) for s in shapes]
    out = build(*xs)
    tc.backward(tc.sum(tc.mul(out, out)))

    def value():
        frozen = [tc.Tensor(x.data) for x in xs]
        return float((build(*frozen).data ** 2).sum())

    worst = 0.0
    for x in xs:
        flat = x.data.reshape(-1)
        numeric = np.empty_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = value()
            flat[i] = orig - h
            lm = value()
            flat[i] = orig
            numeric[i] = (lp - lm) / (2 * h)
        analytic = x.grad.reshape(-1)
        denom = np.maximum.reduce([np.abs(analytic), np.abs(numeric),
                                   np.full_like(numeric, floor)])
        worst = max(worst, float((np.abs(analytic - numeric) / denom).max()))
    return worst


def pairwise_auc(scores, labels):
    """O(n^2) Mann-Whitney AUC with ties counted 1/2; None if degenerate."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    if len(pos) == 0 or len(neg) == 0:
        return None
    wins = 0.0
    for p in pos:
        wins += float((p > neg).sum()) + 0.5 * float((p == neg).sum())
    return wins / (len(pos) * len(neg))


def loop_confusion(scores, labels, tau=0.5):
    """Element-loop per-class confusion counts."""
    b, k = scores.shape
    tp = np.zeros(k, dtype=int)
    fp = np.zeros(k, dtype=int)
    fn = np.zeros(k, dtype=int)
    tn = np.zeros(k, dtype=int)
    for i in range(b):
        for j in range(k):
            pred = 1 if scores[i, j] >= tau else 0
            if pred == 1 and labels[i, j] == 1:
                tp[j] += 1
            elif pred == 1 and labels[i, j] == 0:
                fp[j] += 1
            elif pred == 0 and labels[i, j] == 1:
                fn[j] += 1
            else:
                tn[j] += 1
    return tp, fp, fn, tn


def loop_macro_f1(scores, labels, tau=0.5):
    tp, fp, fn, _ = loop_confusion(scores, labels, tau)
    total = 0.0
    for j in range(scores.shape[1]):
        p = tp[j] / (tp[j] + fp[j]) if tp[j] + fp[j] else 0.0
        r = tp[j] / (tp[j] + fn[j]) if tp[j] + fn[j] else 0.0
        total += 2 * p * r / (p + r) if p + r else 0.0
    return total / scores.shape[1]


def loop_samples_f1(scores, labels, tau=0.5):
    b = scores.shape[0]
    total = 0.0
    for i in range(b):
        pred = (scores[i] >= tau).astype(int)
        tp = int(((pred == 1) & (labels[i] == 1)).sum())
        fp = int(((pred == 1) & (labels[i] == 0)).sum())
        fn = int(((pred == 0) & (labels[i] == 1)).sum())
        if tp + fp + fn == 0:
            total += 1.0
        else:
            p = tp / (tp + fp) if tp + fp else 0.0
            r = tp / (tp + fn) if tp + fn else 0.0
            total += 2 * p * r / (p + r) if p + r else 0.0
    return total / b


def loop_accuracy(scores, labels, tau=0.5):
    b, k = scores.shape
    correct = 0
    for i in range(b):
        for j in range(k):
            pred = 1 if scores[i, j] >= tau else 0
            correct += int(pred == labels[i, j])
    return correct / (b * k)
