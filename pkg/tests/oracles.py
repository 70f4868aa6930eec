"""Slow, independent reference computations used to check the fast paths."""
import math

import numpy as np


def conv_nested_loops(x, weights, bias, stride):
    """Cross-correlation written as plain loops over every index."""
    n, c_in, h, w = x.shape
    kh, kw, _, c_out = weights.shape
    sh, sw = stride
    oh, ow = (h - kh) // sh + 1, (w - kw) // sw + 1
    y = np.zeros((n, c_out, oh, ow))
    for b in range(n):
        for q in range(c_out):
            for i in range(oh):
                for j in range(ow):
                    acc = bias[q]
                    for c in range(c_in):
                        for a in range(kh):
                            for d in range(kw):
                                acc += weights[a, d, c, q] * x[b, c, i * sh + a, j * sw + d]
                    y[b, q, i, j] = acc
    return y


def adadelta_scalar(grads, rho=0.95, eps=1e-8, lr=1.0, theta=0.0):
    """Per-step (g, delta, s, theta) for a single scalar parameter."""
    g = s = 0.0
    out = []
    for grad in grads:
        g = (1 - rho) * grad ** 2 + rho * g
        delta = -lr * math.sqrt(s + eps) / math.sqrt(g + eps) * grad
        s = (1 - rho) * delta ** 2 + rho * s
        theta = theta + delta
        out.append((g, delta, s, theta))
    return out


def brute_force_metrics(y_true, y_pred, k):
    """Per-class one-vs-rest TP/FP/FN/TN counted sample by sample."""
    n = len(y_true)
    per_class = []
    for c in range(k):
        tp = fp = fn = tn = 0
        for t, p in zip(y_true, y_pred):
            if t == c and p == c:
                tp += 1
            elif t != c and p == c:
                fp += 1
            elif t == c and p != c:
                fn += 1
            else:
                tn += 1
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        per_class.append(dict(tp=tp, fp=fp, fn=fn, tn=tn, precision=prec, recall=rec, f1=f1,
                              support=tp + fn))
    correct = sum(1 for t, p in zip(y_true, y_pred) if t == p)
    wf1 = sum(pc["support"] / n * pc["f1"] for pc in per_class)
    present = [pc for pc in per_class if pc["support"]]
    return dict(
        accuracy=correct / n,
        per_class=per_class,
        weighted_f1=wf1,
        macro_precision=sum(pc["precision"] for pc in present) / len(present),
        macro_recall=sum(pc["recall"] for pc in present) / len(present),
    )


def central_difference(f, x, step=1e-5):
    """Gradient of scalar f at array x (x is perturbed in place and restored)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + step
        up = f()
        flat[i] = old - step
        down = f()
        flat[i] = old
        grad.reshape(-1)[i] = (up - down) / (2 * step)
    return grad


def rel_err(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
