"""Kernel two-sample statistics: biased MMD^2, its class-wise sum, and gradients."""

from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .errors import ConfigError, CoverageError, DataError, ShapeError


@dataclass(frozen=True)
class KernelSpec:
    family: str = "rbf"
    bandwidth: float = 1.0

    def __post_init__(self):
        if self.family not in ("rbf", "linear"):
            raise ConfigError(f"unknown kernel family {self.family!r}")
        if self.family == "rbf" and not self.bandwidth > 0:
            raise ConfigError(f"rbf bandwidth must be positive, got {self.bandwidth}")

    def to_dict(self):
        return {"family": self.family, "bandwidth": float(self.bandwidth)}


def kernel_matrix(A, B, k):
    if k.family == "linear":
        return A @ B.T
    return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * k.bandwidth ** 2))


def median_bandwidth(X, Y):
    """Median of the nonzero pairwise distances over the pooled rows (1 if none)."""
    Z = np.vstack([np.asarray(X, dtype=float), np.asarray(Y, dtype=float)])
    if Z.shape[0] < 2:
        raise DataError("median bandwidth needs at least two rows")
    d = pdist(Z)
    d = d[d > 0]
    if d.size == 0:
        return 1.0
    return float(np.median(d))


def _check_pair(Xs, Xt):
    Xs = np.asarray(Xs, dtype=float)
    Xt = np.asarray(Xt, dtype=float)
    if Xs.ndim != 2 or Xt.ndim != 2 or Xs.shape[1] != Xt.shape[1]:
        raise ShapeError(f"MMD needs matrices with equal column counts, got {Xs.shape} and {Xt.shape}")
    if Xs.shape[0] < 1 or Xt.shape[0] < 1:
        raise DataError("MMD needs at least one sample per set")
    return Xs, Xt


def _mmd2_raw(Xs, Xt, k):
    ns, nt = Xs.shape[0], Xt.shape[0]
    Kss = kernel_matrix(Xs, Xs, k)
    Ktt = kernel_matrix(Xt, Xt, k)
    Kst = kernel_matrix(Xs, Xt, k)
    value = Kss.sum() / ns ** 2 + Ktt.sum() / nt ** 2 - 2.0 * Kst.sum() / (ns * nt)
    return value, Kss, Ktt, Kst


def mmd2_biased(Xs, Xt, k):
    Xs, Xt = _check_pair(Xs, Xt)
    value = _mmd2_raw(Xs, Xt, k)[0]
    return max(float(value), 0.0)


def mmd2_biased_grad(Xs, Xt, k):
    """Biased MMD^2 and its gradients with respect to every row of both sets."""
    Xs, Xt = _check_pair(Xs, Xt)
    ns, nt = Xs.shape[0], Xt.shape[0]
    if k.family == "linear":
        diff = Xs.mean(axis=0) - Xt.mean(axis=0)
        value = float(diff @ diff)
        gs = np.broadcast_to(2.0 * diff / ns, Xs.shape).copy()
        gt = np.broadcast_to(-2.0 * diff / nt, Xt.shape).copy()
        return max(value, 0.0), gs, gt
    value, Kss, Ktt, Kst = _mmd2_raw(Xs, Xt, k)
    s2 = k.bandwidth ** 2
    # d k(a, b) / d a = -k(a, b) (a - b) / sigma^2
    gs = (-2.0 / (ns ** 2 * s2)) * (Kss.sum(axis=1)[:, None] * Xs - Kss @ Xs)
    gs += (2.0 / (ns * nt * s2)) * (Kst.sum(axis=1)[:, None] * Xs - Kst @ Xt)
    gt = (-2.0 / (nt ** 2 * s2)) * (Ktt.sum(axis=1)[:, None] * Xt - Ktt @ Xt)
    gt += (2.0 / (ns * nt * s2)) * (Kst.sum(axis=0)[:, None] * Xt - Kst.T @ Xs)
    return max(float(value), 0.0), gs, gt


def check_coverage(ys, yt, n_classes):
    ys = np.asarray(ys)
    yt = np.asarray(yt)
    missing = [c for c in range(n_classes) if not (np.any(ys == c) and np.any(yt == c))]
    if missing:
        where = []
        for c in missing:
            sides = [name for name, y in (("source", ys), ("target", yt)) if not np.any(y == c)]
            where.append(f"class {c} ({'/'.join(sides)})")
        raise CoverageError("no samples for " + ", ".join(where), missing)


def classwise_mmd2(Fs, ys, Ft, yt, n_classes, k):
    """Sum over classes of the biased MMD^2 between same-class source and target rows."""
    Fs, Ft = _check_pair(Fs, Ft)
    check_coverage(ys, yt, n_classes)
    ys, yt = np.asarray(ys), np.asarray(yt)
    return float(sum(mmd2_biased(Fs[ys == c], Ft[yt == c], k) for c in range(n_classes)))


def classwise_mmd2_grad(Fs, ys, Ft, yt, n_classes, k):
    Fs, Ft = _check_pair(Fs, Ft)
    check_coverage(ys, yt, n_classes)
    ys, yt = np.asarray(ys), np.asarray(yt)
    total = 0.0
    gs = np.zeros_like(Fs)
    gt = np.zeros_like(Ft)
    for c in range(n_classes):
        ms, mt = ys == c, yt == c
        v, g1, g2 = mmd2_biased_grad(Fs[ms], Ft[mt], k)
        total += v
        gs[ms] = g1
        gt[mt] = g2
    return float(total), gs, gt


def permutation_null(Xs, Xt, k, n_perm=200, seed=0):
    """MMD^2 statistics under random relabelling of the pooled sample."""
    Xs, Xt = _check_pair(Xs, Xt)
    Z = np.vstack([Xs, Xt])
    ns = Xs.shape[0]
    K = kernel_matrix(Z, Z, k)
    rng = np.random.default_rng(seed)
    out = np.empty(n_perm)
    n = Z.shape[0]
    for i in range(n_perm):
        p = rng.permutation(n)
        a, b = p[:ns], p[ns:]
        v = (K[np.ix_(a, a)].sum() / ns ** 2 + K[np.ix_(b, b)].sum() / (n - ns) ** 2
             - 2.0 * K[np.ix_(a, b)].sum() / (ns * (n - ns)))
        out[i] = max(v, 0.0)
    return out
