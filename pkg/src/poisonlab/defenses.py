"""The five data-sanitization defenses.

Each defense fits detector parameters beta on the combined (clean + poisoned)
training data, scores every point (larger = more anomalous), discards the
top-p weight mass per class via a threshold tau_y, and trains on the rest:

    L2    distance to the class centroid
    slab  |projection of (x - mu_y) onto the inter-centroid axis|
    loss  loss under a model trained on the unsanitized data
    SVD   norm of the component outside the top-k right-singular subspace
    k-NN  distance to the k-th nearest neighbor (weight counts multiplicity)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, union
from .models import LossSpec, ModelParams, TrainConfig, loss_of_margin, test_error_01, train

L2 = "l2"
SLAB = "slab"
LOSS = "loss"
SVD = "svd"
KNN = "knn"

ALL_DEFENSES = (L2, SLAB, LOSS, SVD, KNN)


class DefenseError(ValueError):
    pass


@dataclass(frozen=True)
class DefenseKind:
    kind: str
    lam: float = 0.1                              # loss defense
    loss: LossSpec = field(default_factory=LossSpec.hinge)  # loss defense
    frob_target: float = 0.05                     # svd defense
    k: int = 5                                    # knn defense

    def __post_init__(self):
        if self.kind not in ALL_DEFENSES:
            raise DefenseError(f"unknown defense {self.kind!r}")
        if self.kind == SVD and not 0.0 < self.frob_target < 1.0:
            raise DefenseError("frob_target must lie in (0,1)")
        if self.kind == KNN and self.k < 1:
            raise DefenseError("k must be >= 1")

    @staticmethod
    def l2() -> "DefenseKind":
        return DefenseKind(L2)

    @staticmethod
    def slab() -> "DefenseKind":
        return DefenseKind(SLAB)

    @staticmethod
    def loss_defense(lam: float, loss: LossSpec | None = None) -> "DefenseKind":
        return DefenseKind(LOSS, lam=lam, loss=loss or LossSpec.hinge())

    @staticmethod
    def svd(frob_target: float = 0.05) -> "DefenseKind":
        return DefenseKind(SVD, frob_target=frob_target)

    @staticmethod
    def knn(k: int = 5) -> "DefenseKind":
        return DefenseKind(KNN, k=k)


@dataclass(frozen=True)
class DetectorParams:
    kind: str
    centroids: dict | None = None         # L2 / slab: {+1: mu, -1: mu}
    model: ModelParams | None = None      # loss
    basis: np.ndarray | None = None       # svd: (d, k) orthonormal columns
    reference: Dataset | None = None      # knn


@dataclass(frozen=True)
class Thresholds:
    tau: dict  # label -> float


def class_centroids(D: Dataset) -> dict:
    out = {}
    for lab in (1.0, -1.0):
        mask = D.y == lab
        wsum = D.w[mask].sum()
        if wsum <= 0:
            raise DefenseError(f"class {int(lab):+d} absent; cannot fit centroids")
        out[int(lab)] = (D.w[mask, None] * D.X[mask]).sum(axis=0) / wsum
    return out


def fit_detector(kind: DefenseKind, D: Dataset) -> DetectorParams:
    if D.n == 0:
        raise DefenseError("cannot fit a detector on an empty dataset")
    if kind.kind in (L2, SLAB):
        return DetectorParams(kind.kind, centroids=class_centroids(D))
    if kind.kind == LOSS:
        model = train(D, kind.loss, TrainConfig(lam=kind.lam))
        return DetectorParams(LOSS, model=model)
    if kind.kind == SVD:
        # weights act as multiplicities: spectrum of sqrt(w)-scaled rows
        Xw = D.X * np.sqrt(D.w)[:, None]
        _, s, Vt = np.linalg.svd(Xw, full_matrices=False)
        total = float((s ** 2).sum())
        if total <= 0:
            raise DefenseError("SVD of an all-zero data matrix")
        resid = 1.0 - np.cumsum(s ** 2) / total
        k = int(np.argmax(resid <= kind.frob_target)) + 1
        return DetectorParams(SVD, basis=np.ascontiguousarray(Vt[:k].T))
    return DetectorParams(KNN, reference=D)


def _knn_kth_distance(dists: np.ndarray, weights: np.ndarray, k: int) -> float:
    """Distance at which cumulative reference weight reaches k."""
    order = np.argsort(dists, kind="stable")
    cw = np.cumsum(weights[order])
    idx = np.searchsorted(cw, k, side="left")
    if idx >= len(order):
        return float(dists[order[-1]]) if len(order) else np.inf
    return float(dists[order[idx]])


def score(kind: DefenseKind, beta: DetectorParams, x: np.ndarray, y: float) -> float:
    """Anomaly score of a single (x, y); larger = more anomalous."""
    x = np.asarray(x, dtype=float)
    if kind.kind == L2:
        return float(np.linalg.norm(x - beta.centroids[int(y)]))
    if kind.kind == SLAB:
        axis = beta.centroids[1] - beta.centroids[-1]
        return float(abs(np.dot(axis, x - beta.centroids[int(y)])))
    if kind.kind == LOSS:
        m = y * float(np.dot(beta.model.theta, x))
        return float(loss_of_margin(kind.loss, m))
    if kind.kind == SVD:
        r = x - beta.basis @ (beta.basis.T @ x)
        return float(np.linalg.norm(r))
    ref = beta.reference
    dists = np.linalg.norm(ref.X - x, axis=1)
    return _knn_kth_distance(dists, ref.w, kind.k)


def score_dataset(kind: DefenseKind, beta: DetectorParams, D: Dataset,
                  training: bool = False) -> np.ndarray:
    """Vectorized scores.  With ``training=True`` and the k-NN defense, each
    point's own weight is excluded from its neighbor search (duplicate
    locations still shield each other)."""
    if kind.kind == L2:
        out = np.empty(D.n)
        for lab in (1.0, -1.0):
            m = D.y == lab
            out[m] = np.linalg.norm(D.X[m] - beta.centroids[int(lab)], axis=1)
        return out
    if kind.kind == SLAB:
        axis = beta.centroids[1] - beta.centroids[-1]
        out = np.empty(D.n)
        for lab in (1.0, -1.0):
            m = D.y == lab
            out[m] = np.abs((D.X[m] - beta.centroids[int(lab)]) @ axis)
        return out
    if kind.kind == LOSS:
        m = D.y * (D.X @ beta.model.theta)
        return loss_of_margin(kind.loss, m)
    if kind.kind == SVD:
        proj = (D.X @ beta.basis) @ beta.basis.T
        return np.linalg.norm(D.X - proj, axis=1)
    ref = beta.reference
    sq = np.maximum(
        np.sum(D.X ** 2, axis=1)[:, None]
        - 2.0 * D.X @ ref.X.T
        + np.sum(ref.X ** 2, axis=1)[None, :],
        0.0,
    )
    dists = np.sqrt(sq)
    out = np.empty(D.n)
    same = training and ref is D
    for i in range(D.n):
        w = ref.w.copy()
        if same:
            w[i] = 0.0  # a point is not its own neighbor
        out[i] = _knn_kth_distance(dists[i], w, kind.k)
    return out


def fit_thresholds(kind: DefenseKind, beta: DetectorParams, D: Dataset,
                   p: float) -> Thresholds:
    """Per class, tau_y is the smallest observed score value such that the
    weight of {score >= tau_y} is at most p times the class weight; when even
    the top score carries more than that mass, tau_y sits just above it (so
    nothing is removed)."""
    if not 0.0 < p < 1.0:
        raise DefenseError("p must lie in (0,1)")
    scores = score_dataset(kind, beta, D, training=True)
    tau = {}
    for lab in (1.0, -1.0):
        mask = D.y == lab
        if not mask.any():
            raise DefenseError(f"class {int(lab):+d} absent; cannot fit threshold")
        s, w = scores[mask], D.w[mask]
        budget = p * w.sum()
        uniq = np.unique(s)[::-1]  # descending
        mass_ge = np.array([w[s >= u].sum() for u in uniq])
        ok = mass_ge <= budget
        if ok.any():
            tau[int(lab)] = float(uniq[np.flatnonzero(ok)[-1]])
        else:
            tau[int(lab)] = float(np.nextafter(uniq[0], np.inf))
    return Thresholds(tau)


def sanitize(D: Dataset, kind: DefenseKind, beta: DetectorParams,
             tau: Thresholds) -> Dataset:
    """Keep exactly the points scoring strictly below their class threshold."""
    scores = score_dataset(kind, beta, D, training=True)
    cut = np.array([tau.tau[int(lab)] for lab in D.y])
    return D.subset(scores < cut)


def defend_and_train(D_c: Dataset, D_p: Dataset, kind: DefenseKind, p: float,
                     loss: LossSpec, config: TrainConfig):
    """Full defender pipeline: fit beta and tau on D_c u D_p, sanitize, train.

    Returns (theta_hat, err_fn, report); err_fn maps a test set to 0-1 error.
    """
    D = union(D_c, D_p)
    beta = fit_detector(kind, D)
    tau = fit_thresholds(kind, beta, D, p)
    D_san = sanitize(D, kind, beta, tau)
    if D_san.n == 0:
        raise DefenseError("sanitization removed every point")
    if not ((D_san.y == 1.0).any() and (D_san.y == -1.0).any()):
        raise DefenseError("sanitized set is single-class")
    theta = train(D_san, loss, config)
    removed = {
        int(lab): float(D.w[D.y == lab].sum() - D_san.w[D_san.y == lab].sum())
        for lab in (1.0, -1.0)
    }
    report = {
        "defense": kind.kind,
        "p": p,
        "tau_plus": tau.tau[1],
        "tau_minus": tau.tau[-1],
        "removed_weight": removed,
    }
    return theta, (lambda D_test: test_error_01(theta, D_test)), report
