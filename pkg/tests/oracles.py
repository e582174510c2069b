"""Independent reference implementations used only by the tests.

Plain loops over Python floats; nothing here touches the package's kernels.
"""
import itertools
import math

import numpy as np


def unit(v):
    n = math.sqrt(sum(x * x for x in v))
    return [x / n for x in v] if n > 1e-12 else list(v)


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def pc_enumerate(z, labels, tau, normalize=True):
    """Pseudo-label contrastive loss summed anchor by anchor with math.exp."""
    vecs = [unit(list(r)) if normalize else list(r) for r in z]
    n = len(vecs)
    terms = []
    for i in range(n):
        positives = [p for p in range(n) if p != i and labels[p] == labels[i]]
        if not positives:
            continue
        num = sum(math.exp(dot(vecs[i], vecs[p]) / tau) for p in positives) / len(positives)
        den = sum(math.exp(dot(vecs[i], vecs[a]) / tau) for a in range(n) if a != i)
        terms.append(-math.log(num / den))
    return sum(terms) / len(terms) if terms else 0.0


def uc_enumerate(z, partner, anchors, tau, normalize=True):
    vecs = [unit(list(r)) if normalize else list(r) for r in z]
    n = len(vecs)
    terms = []
    for j in range(n):
        if not anchors[j]:
            continue
        num = math.exp(dot(vecs[j], vecs[partner[j]]) / tau)
        den = sum(math.exp(dot(vecs[j], vecs[a]) / tau) for a in range(n) if a != j)
        terms.append(-math.log(num / den))
    return sum(terms) / len(terms) if terms else 0.0


def brute_force_assignment(cost):
    cost = np.asarray(cost)
    n = len(cost)
    return min(sum(cost[i, p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def cross_entropy(z, y):
    m = max(z)
    return m + math.log(sum(math.exp(v - m) for v in z)) - z[y]
