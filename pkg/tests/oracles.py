"""Independent reference implementations the tests check against.

Everything here is deliberately written as plain Python loops over the
model's named blocks, so it shares no code path with the vectorized
implementations it verifies.
"""

import itertools
import math


def naive_predict(model, f1, f2):
    """Literal nested-loop evaluation of the two-VM quadratic model."""
    a = list(f1.p) if hasattr(f1, "p") else list(f1)
    b = list(f2.p) if hasattr(f2, "p") else list(f2)
    total = model.c
    for i in range(5):
        total += model.alpha[0][i] * a[i]
        total += model.alpha[1][i] * b[i]
    for i in range(5):
        for j in range(5):
            total += model.beta_cross[i][j] * a[i] * b[j]
    q = 0
    for i in range(5):
        for j in range(i + 1, 5):
            total += model.beta_within[0][q] * a[i] * a[j]
            total += model.beta_within[1][q] * b[i] * b[j]
            q += 1
    for i in range(5):
        total += model.gamma[0][i] * a[i] ** 2
        total += model.gamma[1][i] * b[i] ** 2
    return total


def naive_twcv(labels, coords, k):
    """Total within-cluster variation by plain accumulation."""
    total = 0.0
    for c in range(k):
        members = [coords[i] for i, lab in enumerate(labels) if lab == c]
        if not members:
            continue
        dim = len(members[0])
        centroid = [sum(m[d] for m in members) / len(members) for d in range(dim)]
        for m in members:
            total += sum((m[d] - centroid[d]) ** 2 for d in range(dim))
    return total


def brute_force_min_twcv(coords, k):
    """Exhaustive minimum over every label vector in k^n."""
    best = math.inf
    for labels in itertools.product(range(k), repeat=len(coords)):
        best = min(best, naive_twcv(labels, coords, k))
    return best


def naive_host_score(model, f1, f2):
    return max(naive_predict(model, f1, f2), naive_predict(model, f2, f1))
