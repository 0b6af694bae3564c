"""One-vs-all SVMs with an exponentiated chi-square kernel or a linear kernel.

The kernel path solves the standard soft-margin dual with SMO-style pairwise
updates (second-order working-set selection). The linear path runs dual
coordinate descent with the bias folded in as a constant feature.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._binio import read_arrays, write_arrays

SVM_C = 100.0
KKT_TOL = 1e-3
MAX_STEPS = 10 ** 7
MODEL_FORMAT_VERSION = 1
_TAU = 1e-12


class ConvergenceError(RuntimeError):
    pass


def _histograms(H) -> np.ndarray:
    H = np.asarray(H, dtype=np.float64)
    if H.ndim == 1:
        H = H[None, :]
    if np.any(H < 0):
        raise ValueError("chi-square distance needs non-negative histograms")
    return H


def chi2_distance(h_i, h_j) -> float:
    """Half the chi-square sum, with 0/0 terms counted as 0."""
    a, b = _histograms(h_i)[0], _histograms(h_j)[0]
    if a.shape != b.shape:
        raise ValueError(f"histogram lengths differ: {a.shape} vs {b.shape}")
    num, den = (a - b) ** 2, a + b
    mask = den > 0
    return 0.5 * float(np.sum(num[mask] / den[mask]))


def chi2_distances(X, Y=None) -> np.ndarray:
    """Pairwise chi-square distances between rows of X and rows of Y (or X)."""
    X = _histograms(X)
    Y = X if Y is None else _histograms(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError(f"histogram lengths differ: {X.shape[1]} vs {Y.shape[1]}")
    out = np.empty((len(X), len(Y)))
    for i, x in enumerate(X):
        num = (x - Y) ** 2
        den = x + Y
        np.divide(num, den, out=num, where=den > 0)
        num[den == 0] = 0.0
        out[i] = 0.5 * num.sum(axis=1)
    if Y is X:
        out = 0.5 * (out + out.T)
        np.fill_diagonal(out, 0.0)
    return out


@dataclass
class KernelGram:
    matrix: np.ndarray
    A: float
    test: np.ndarray | None = None


def chi2_gram(train, test=None, A: float | None = None) -> KernelGram:
    """Exponentiated chi-square kernel exp(-dist / (2A)).

    ``A`` defaults to the mean distance over distinct training pairs. Test
    rows are computed against the training columns with the training ``A``.
    """
    train = _histograms(train)
    if len(train) == 0:
        raise ValueError("empty training set")
    dist = chi2_distances(train)
    if A is None:
        n = len(train)
        if n < 2:
            raise ValueError("need two training histograms to estimate A")
        A = float(dist.sum() / (n * (n - 1)))
    if not A > 0:
        raise ValueError("A is 0: all training histograms are identical")
    gram = KernelGram(np.exp(-dist / (2.0 * A)), A)
    if test is not None:
        gram.test = np.exp(-chi2_distances(test, train) / (2.0 * A))
    return gram


# -- binary solvers ---------------------------------------------------------------

@dataclass
class BinarySolution:
    alpha: np.ndarray
    bias: float
    steps: int
    gap: float


def dual_objective(alpha, y, K) -> float:
    """sum(alpha) - 1/2 (alpha*y)' K (alpha*y), the quantity the dual maximises."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def smo_solve(K, y, C: float = SVM_C, tol: float = KKT_TOL,
              max_steps: int = MAX_STEPS) -> BinarySolution:
    """Soft-margin dual with labels in {-1, +1} and a precomputed kernel.

    Stops when the maximal KKT violation ``m(alpha) - M(alpha)`` drops below
    ``tol``; raises :class:`ConvergenceError` after ``max_steps`` updates.
    """
    K = np.asarray(K, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = len(y)
    if set(np.unique(y)) - {-1.0, 1.0} or len(np.unique(y)) < 2:
        raise ValueError("labels must contain both -1 and +1")
    alpha = np.zeros(n)
    G = -np.ones(n)                     # gradient of 1/2 a'Qa - e'a, Q = yy'K
    diagK = np.diag(K).copy()
    pos = y > 0
    steps = 0
    while True:
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        score = -y * G
        if not up.any() or not low.any():
            gap = 0.0
            break
        i = int(np.flatnonzero(up)[np.argmax(score[up])])
        m = score[i]
        gap = m - score[low].min()
        if gap < tol:
            break
        if steps >= max_steps:
            raise ConvergenceError(f"SMO did not reach tolerance {tol} in {max_steps} steps")
        cand = low & (score < m)
        b = m - score[cand]
        a = diagK[i] + diagK[cand] - 2.0 * K[i, cand]
        a = np.where(a > 0, a, _TAU)
        j = int(np.flatnonzero(cand)[np.argmin(-(b * b) / a)])

        ai, aj = alpha[i], alpha[j]
        yi, yj = y[i], y[j]
        Qij = yi * yj * K[i, j]
        if yi != yj:
            quad = max(diagK[i] + diagK[j] + 2.0 * Qij, _TAU)
            delta = (-G[i] - G[j]) / quad
            diff = ai - aj
            ni, nj = ai + delta, aj + delta
            if diff > 0:
                if nj < 0:
                    nj, ni = 0.0, diff
            elif ni < 0:
                ni, nj = 0.0, -diff
            if diff > 0:
                if ni > C:
                    ni, nj = C, C - diff
            elif nj > C:
                nj, ni = C, C + diff
        else:
            quad = max(diagK[i] + diagK[j] - 2.0 * Qij, _TAU)
            delta = (G[i] - G[j]) / quad
            total = ai + aj
            ni, nj = ai - delta, aj + delta
            if total > C:
                if ni > C:
                    ni, nj = C, total - C
            elif nj < 0:
                nj, ni = 0.0, total
            if total > C:
                if nj > C:
                    nj, ni = C, total - C
            elif ni < 0:
                ni, nj = 0.0, total
        di, dj = ni - ai, nj - aj
        alpha[i], alpha[j] = ni, nj
        G += y * (K[:, i] * (yi * di) + K[:, j] * (yj * dj))
        steps += 1

    score = -y * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(np.mean(y[free] * G[free]))
    else:
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        hi = score[up].max() if up.any() else 0.0
        lo = score[low].min() if low.any() else 0.0
        rho = -0.5 * (hi + lo)
    return BinarySolution(alpha, -rho, steps, float(gap))


def dcd_linear(X, y, C: float = SVM_C, tol: float = KKT_TOL, max_steps: int = MAX_STEPS,
               seed: int = 0, bias_scale: float = 1.0):
    """Dual coordinate descent for the hinge-loss linear SVM.

    The bias is learned as the weight of a constant feature ``bias_scale``.
    Returns ``(w, b, alpha, steps)``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n, d = X.shape
    Xa = np.hstack([X, np.full((n, 1), bias_scale)])
    qd = np.einsum("ij,ij->i", Xa, Xa)
    alpha = np.zeros(n)
    w = np.zeros(d + 1)
    rng = np.random.default_rng(seed)
    steps = 0
    while True:
        pg_max, pg_min = -np.inf, np.inf
        for i in rng.permutation(n):
            g = y[i] * (Xa[i] @ w) - 1.0
            if alpha[i] == 0:
                pg = min(g, 0.0)
            elif alpha[i] == C:
                pg = max(g, 0.0)
            else:
                pg = g
            pg_max, pg_min = max(pg_max, pg), min(pg_min, pg)
            if pg != 0.0 and qd[i] > 0:
                old = alpha[i]
                alpha[i] = min(max(old - g / qd[i], 0.0), C)
                w += (alpha[i] - old) * y[i] * Xa[i]
            steps += 1
        if pg_max - pg_min < tol:
            break
        if steps >= max_steps:
            raise ConvergenceError(f"linear solver did not converge in {max_steps} steps")
    return w[:-1].copy(), float(w[-1] * bias_scale), alpha, steps


# -- one-vs-all models ------------------------------------------------------------

@dataclass
class SvmModel:
    kind: str
    class_count: int
    C: float = SVM_C
    A: float | None = None
    # kernel machines
    support_indices: np.ndarray | None = None
    support_vectors: np.ndarray | None = None
    dual_coef: np.ndarray | None = None       # (classes, n_sv) alpha*y
    # linear machines
    weights: np.ndarray | None = None         # (classes, D)
    intercepts: np.ndarray = field(default_factory=lambda: np.zeros(0))
    steps: list[int] = field(default_factory=list)

    def save(self, path) -> None:
        meta = {"kind": self.kind, "class_count": self.class_count, "C": self.C,
                "A": self.A, "steps": self.steps}
        arrays = {"intercepts": np.asarray(self.intercepts, dtype=np.float64)}
        for name in ("support_indices", "support_vectors", "dual_coef", "weights"):
            value = getattr(self, name)
            if value is not None:
                arrays[name] = value
        write_arrays(path, "svm", MODEL_FORMAT_VERSION, meta, arrays)

    @classmethod
    def load(cls, path) -> "SvmModel":
        meta, z = read_arrays(path, "svm", MODEL_FORMAT_VERSION)
        opt = {k: z[k] for k in ("support_indices", "support_vectors", "dual_coef",
                                 "weights") if k in z}
        return cls(meta["kind"], meta["class_count"], meta["C"], meta["A"],
                   intercepts=z["intercepts"], steps=meta["steps"], **opt)


def _binary_targets(labels, class_count):
    labels = np.asarray(labels)
    present = np.unique(labels)
    if len(present) < 2:
        raise ValueError("need at least two classes to train")
    return [np.where(labels == c, 1.0, -1.0) for c in range(class_count)]


def svm_train(encodings, labels, kind: str = "linear", C: float = SVM_C,
              class_count: int | None = None, gram: KernelGram | None = None,
              tol: float = KKT_TOL, max_steps: int = MAX_STEPS) -> SvmModel:
    """Train one binary machine per class (+1 for the class, -1 for the rest).

    ``kind="chi2"`` uses the exponentiated chi-square kernel (computed from
    ``encodings`` unless ``gram`` is given); ``kind="linear"`` learns primal
    weights directly. A class with no training example gets a machine that
    always scores -1.
    """
    labels = np.asarray(labels, dtype=np.int64)
    class_count = int(class_count or labels.max() + 1)
    targets = _binary_targets(labels, class_count)
    if kind in ("chi2", "chi2_kernel", "kernel"):
        gram = gram or chi2_gram(encodings)
        coefs, bias, steps = [], [], []
        for y in targets:
            if not (y > 0).any():
                coefs.append(np.zeros(len(y)))
                bias.append(-1.0)
                steps.append(0)
                continue
            sol = smo_solve(gram.matrix, y, C, tol, max_steps)
            coefs.append(sol.alpha * y)
            bias.append(sol.bias)
            steps.append(sol.steps)
        coef = np.vstack(coefs)
        sv = np.flatnonzero(np.any(coef != 0, axis=0))
        X = None if encodings is None else np.asarray(encodings, dtype=np.float64)[sv]
        return SvmModel("chi2", class_count, C, gram.A, sv, X, coef[:, sv],
                        intercepts=np.asarray(bias), steps=steps)
    if kind != "linear":
        raise ValueError(f"unknown SVM kind {kind!r}")
    X = np.asarray(encodings, dtype=np.float64)
    W, bias, steps = [], [], []
    for y in targets:
        if not (y > 0).any():
            W.append(np.zeros(X.shape[1]))
            bias.append(-1.0)
            steps.append(0)
            continue
        w, b, _, n = dcd_linear(X, y, C, tol, max_steps)
        W.append(w)
        bias.append(b)
        steps.append(n)
    return SvmModel("linear", class_count, C, weights=np.vstack(W),
                    intercepts=np.asarray(bias), steps=steps)


def decision_scores(model: SvmModel, encodings=None, gram=None) -> np.ndarray:
    """(n, classes) decision values; ``gram`` is a test-by-train kernel matrix."""
    if model.kind == "linear":
        X = np.asarray(encodings, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != model.weights.shape[1]:
            raise ValueError(f"encodings of shape {X.shape} do not match the model "
                             f"({model.weights.shape[1]} dims)")
        return X @ model.weights.T + model.intercepts
    if gram is not None:
        Ks = np.asarray(gram)[:, model.support_indices]
    else:
        X = _histograms(encodings)
        if X.shape[1] != model.support_vectors.shape[1]:
            raise ValueError("encoding length does not match the support vectors")
        Ks = np.exp(-chi2_distances(X, model.support_vectors) / (2.0 * model.A))
    return Ks @ model.dual_coef.T + model.intercepts


def svm_predict(model: SvmModel, encodings=None, gram=None):
    """Labels (argmax of scores, ties to the lowest class) and the score matrix."""
    scores = decision_scores(model, encodings, gram)
    return np.argmax(scores, axis=1), scores
