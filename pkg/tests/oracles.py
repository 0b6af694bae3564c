"""Brute-force reference solvers used by classifier tests and the acceptance suite."""
import itertools

import numpy as np


def qp_dual_oracle(K, y, C):
    """Maximum of sum(a) - 1/2 (a*y)'K(a*y) s.t. 0 <= a <= C, y'a = 0, by enumeration.

    Each alpha is at 0, at C, or free. For every such pattern the free part solves
    the stationarity system together with the equality constraint; the best
    feasible candidate is the optimum of the concave problem.
    """
    n = len(y)
    Q = (y[:, None] * y[None, :]) * K
    best, best_a = -np.inf, None
    for pattern in itertools.product((0, 1, 2), repeat=n):
        pattern = np.array(pattern)
        F = np.flatnonzero(pattern == 2)
        U = np.flatnonzero(pattern == 1)
        a = np.zeros(n)
        a[U] = C
        if len(F) == 0:
            if abs(y @ a) > 1e-9:
                continue
        else:
            m = len(F)
            A = np.zeros((m + 1, m + 1))
            A[:m, :m] = Q[np.ix_(F, F)]
            A[:m, m] = y[F]
            A[m, :m] = y[F]
            rhs = np.concatenate([1.0 - Q[np.ix_(F, U)] @ a[U], [-(y[U] @ a[U])]])
            try:
                sol = np.linalg.solve(A, rhs)
            except np.linalg.LinAlgError:
                continue
            a[F] = sol[:m]
            if np.any(a[F] < -1e-10) or np.any(a[F] > C + 1e-10):
                continue
        obj = a.sum() - 0.5 * a @ Q @ a
        if obj > best:
            best, best_a = obj, a.copy()
    return best, best_a


def ap_prefix_oracle(scores, positives):
    """AP by walking every prefix of the (stable) descending ranking."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])   # sorted() is stable
    total, hits, precisions = 0, 0, []
    for k, i in enumerate(order, start=1):
        total += 1
        if positives[i]:
            hits += 1
            precisions.append(hits / k)
    return sum(precisions) / len(precisions)


def macro_f1_confusion_oracle(pred, truth, C):
    M = [[0] * C for _ in range(C)]
    for p, t in zip(pred, truth):
        M[t][p] += 1
    f1s = []
    for c in range(C):
        tp = M[c][c]
        col = sum(M[r][c] for r in range(C))
        row = sum(M[c])
        prec = tp / col if col else 0.0
        rec = tp / row if row else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return sum(f1s) / C
