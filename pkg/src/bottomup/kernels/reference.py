"""Naive loop kernels: the independent oracle for the fast backends.

Every kernel is written as the plainest possible Python loop so tests can
compare the vectorized and compiled paths against an implementation whose
arithmetic order is obvious. A `MacCounter` can be threaded through to
count multiply-accumulate operations as they execute; additions, exps and
divisions are not MACs and are not counted.

Only use these at small sizes; they are orders of magnitude slower than
the production backends.
"""

import math

import numpy as np

NAME = "reference"


class MacCounter:
    """Tallies multiply-accumulates performed by the instrumented kernels."""

    def __init__(self):
        self.count = 0

    def add(self, n=1):
        self.count += n


def column_logits(fk, q, counter=None):
    b, h, w, c = fk.shape
    out = np.zeros((b, h, w))
    for bi in range(b):
        for i in range(h):
            for j in range(w):
                acc = 0.0
                for k in range(c):
                    acc += fk[bi, i, j, k] * q[j, k]
                    if counter is not None:
                        counter.add()
                out[bi, i, j] = acc
    return out


def softmax_columns(logits):
    b, h, w = logits.shape
    out = np.zeros((b, h, w))
    for bi in range(b):
        for j in range(w):
            m = max(logits[bi, i, j] for i in range(h))
            exps = [math.exp(logits[bi, i, j] - m) for i in range(h)]
            total = sum(exps)
            for i in range(h):
                out[bi, i, j] = exps[i] / total
    return out


def softmax_plane(logits):
    b, h, w = logits.shape
    out = np.zeros((b, h, w))
    for bi in range(b):
        m = max(logits[bi, i, j] for i in range(h) for j in range(w))
        total = 0.0
        for i in range(h):
            for j in range(w):
                out[bi, i, j] = math.exp(logits[bi, i, j] - m)
                total += out[bi, i, j]
        for i in range(h):
            for j in range(w):
                out[bi, i, j] /= total
    return out


def scale_by_plane(f, w, counter=None):
    b, h, wd, c = f.shape
    out = np.zeros_like(f)
    for bi in range(b):
        for i in range(h):
            for j in range(wd):
                for k in range(c):
                    out[bi, i, j, k] = f[bi, i, j, k] * w[bi, i, j]
                    if counter is not None:
                        counter.add()
    return out


def cumsum_rows(f):
    b, h, w, c = f.shape
    out = np.zeros_like(f)
    for bi in range(b):
        for j in range(w):
            for k in range(c):
                acc = 0.0
                for i in range(h):
                    acc += f[bi, i, j, k]
                    out[bi, i, j, k] = acc
    return out


def scale_rows(f, s):
    b, h, w, c = f.shape
    out = np.zeros_like(f)
    for bi in range(b):
        for i in range(h):
            for j in range(w):
                for k in range(c):
                    out[bi, i, j, k] = f[bi, i, j, k] * s[i]
    return out


def divide_rows(f, d):
    b, h, w, c = f.shape
    out = np.zeros_like(f)
    for bi in range(b):
        for i in range(h):
            for j in range(w):
                for k in range(c):
                    out[bi, i, j, k] = f[bi, i, j, k] / d[i]
    return out


def counted_column_attention(fb, fk, q, counter):
    """Instrumented run of the attention chain the cost model describes.

    Executes per-column attention (logits + softmax) followed by the
    per-pixel re-weighting, tallying each multiply-accumulate into
    `counter` as it happens.
    """
    logits = column_logits(fk, q, counter=counter)
    weights = softmax_columns(logits)
    return scale_by_plane(fb, weights, counter=counter)


def counted_global_self_attention(feats, counter):
    """Instrumented dense all-pairs self-attention over (N, C) features."""
    n, c = feats.shape
    out = np.zeros_like(feats)
    for i in range(n):
        logits = np.zeros(n)
        for j in range(n):
            acc = 0.0
            for k in range(c):
                acc += feats[i, k] * feats[j, k]
                counter.add()
            logits[j] = acc
        m = logits.max()
        e = np.exp(logits - m)
        e /= e.sum()
        for j in range(n):
            for k in range(c):
                out[i, k] += e[j] * feats[j, k]
                counter.add()
    return out
