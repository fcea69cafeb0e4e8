"""Projected-gradient-ascent poisoning via influence functions.

The attacker repeatedly retrains, computes the derivative of the test loss
with respect to each poisoned point through the implicit dependence of the
learned parameters on the training data, steps along it, and projects back
into the feasible set.  The attack-side surrogate is the smoothed hinge (the
plain hinge has an almost-everywhere-zero Hessian); evaluation always uses
the defender's own loss.

In concentrated mode only two distinct points are optimized, one per class,
carrying the whole poison budget split inversely to the class balance.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, InputDomain, union
from .feasible import FeasibleSet
from .models import (
    LossSpec,
    ModelParams,
    TrainConfig,
    d2loss_dmargin2,
    dloss_dmargin,
    inverse_hvp_cg,
    loss_of_margin,
    margins,
    train,
)
from .results import AttackResult, evaluated_result
from .rounding import repeat_round, rng_from_seed


@dataclass(frozen=True)
class InfluenceConfig:
    eta: float | None = None          # fixed step size; None = grid search
    steps: int = 40
    delta: float = 0.01               # attack-side smoothing
    concentrated: bool = True
    seed: int = 0
    cg_tol: float = 1e-8
    eta_grid: tuple = (1e-2, 1e-1, 1.0, 1e1, 1e2)
    round_repeats: int = 3            # integer domains only

    def __post_init__(self):
        if self.eta is not None and self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.delta <= 0:
            raise ValueError("delta must be positive")


def test_gradient(theta: ModelParams, D_test: Dataset, loss: LossSpec) -> np.ndarray:
    """Weighted mean of per-point loss gradients over the test set."""
    if D_test.total_weight <= 0:
        raise ValueError("empty test set")
    coeff = D_test.w * dloss_dmargin(loss, margins(theta, D_test)) * D_test.y
    return D_test.X.T @ coeff / D_test.total_weight


def mixed_partial_product(v: np.ndarray, theta: ModelParams, x: np.ndarray,
                          y: float, loss: LossSpec) -> np.ndarray:
    """v^T (d^2 ell / d theta d x) for a smooth margin loss: the mixed partial
    is curv * x theta^T + y * coeff * I with coeff/curv the first and second
    margin derivatives."""
    th = theta.theta
    m = y * float(np.dot(th, x))
    coeff = float(dloss_dmargin(loss, m))
    curv = float(d2loss_dmargin2(loss, m))
    return curv * float(np.dot(v, x)) * th + y * coeff * v


def influence_gradient(theta_hat: ModelParams, D_train_full: Dataset, lam: float,
                       g_test: np.ndarray, x_tilde: np.ndarray, y_tilde: float,
                       loss: LossSpec, cg_tol: float = 1e-8,
                       point_weight: float = 1.0) -> np.ndarray:
    """d(test loss)/d(x_tilde) through the trained parameters, for a point of
    weight ``point_weight`` inside mean-loss training on D_train_full:
    -(w/W) * g_test^T H^-1 (d^2 ell / d theta d x)."""
    if not np.any(g_test):
        return np.zeros(D_train_full.d)
    v = inverse_hvp_cg(theta_hat, D_train_full, lam, g_test, loss, tol=cg_tol)
    scale = point_weight / D_train_full.total_weight
    return -scale * mixed_partial_product(v, theta_hat, x_tilde, y_tilde, loss)


def init_label_flip(D_c: Dataset, epsilon: float, F: FeasibleSet,
                    seed: int) -> Dataset:
    """Poison initialization: clean points sampled with replacement, labels
    flipped, kept only when the flip already lies in F; total weight is
    exactly epsilon * |D_c|."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    target = max(1, int(round(epsilon * D_c.total_weight)))
    rng = rng_from_seed(seed)
    xs, ys = [], []
    draws = 0
    cap = 200 * target + 200
    while len(xs) < target and draws < cap:
        i = int(rng.integers(D_c.n))
        draws += 1
        x, y_flip = D_c.X[i], -D_c.y[i]
        if F.contains(x, y_flip):
            xs.append(x)
            ys.append(y_flip)
    if not xs:
        raise RuntimeError("no feasible label flips found")
    w = np.full(len(xs), epsilon * D_c.total_weight / len(xs))
    return Dataset(np.array(xs), np.array(ys), w, D_c.domain)


def _concentrated_init(D_c: Dataset, epsilon: float, F: FeasibleSet, seed: int):
    P = D_c.class_weight(1)
    N = D_c.class_weight(-1)
    n = D_c.total_weight
    weights = {1: epsilon * n * N / (P + N), -1: epsilon * n * P / (P + N)}
    rng = rng_from_seed(seed)
    pts = {}
    for lab in (1, -1):
        donors = np.flatnonzero(D_c.y == -lab)
        order = rng.permutation(donors)
        chosen = None
        for i in order:
            if F.contains(D_c.X[i], lab):
                chosen = D_c.X[i].copy()
                break
        if chosen is None:
            chosen = F.project(D_c.X[order[0]], lab)
        pts[lab] = chosen
    X = np.array([pts[1], pts[-1]])
    return Dataset(X, np.array([1.0, -1.0]), np.array([weights[1], weights[-1]]),
                   D_c.domain)


def _ascend(D_c, D_test, D_p0, F, eta, steps, lam, attack_loss, defender_loss,
            objective, cg_tol):
    """Run the gradient-ascent loop; returns (best Dp, trace rows)."""
    cfg = TrainConfig(lam=lam, objective=objective)
    Dp = D_p0
    best = (None, -np.inf)
    trace = []
    v = None  # warm start for the CG solve across iterations
    for it in range(steps + 1):
        theta = train(union(D_c, Dp), attack_loss, cfg)
        surrogate = float(np.dot(D_test.w, loss_of_margin(
            defender_loss, margins(theta, D_test))) / D_test.total_weight)
        err = float(np.dot(D_test.w, margins(theta, D_test) <= 0) / D_test.total_weight)
        if surrogate > best[1]:
            best = (Dp, surrogate)
        if it == steps:
            trace.append({"iter": it, "test_loss": surrogate, "test_error": err,
                          "point_moved_norm": 0.0})
            break
        g_test = test_gradient(theta, D_test, attack_loss)
        v = inverse_hvp_cg(theta, union(D_c, Dp), lam, g_test, attack_loss,
                           tol=cg_tol, x0=v)
        scale = 1.0 / union(D_c, Dp).total_weight
        moved = 0.0
        newX = Dp.X.copy()
        for i in range(Dp.n):
            g_x = -scale * Dp.w[i] * mixed_partial_product(
                v, theta, Dp.X[i], Dp.y[i], attack_loss)
            x_new = F.project(Dp.X[i] + eta * g_x, Dp.y[i])
            moved += float(np.linalg.norm(x_new - Dp.X[i]))
            newX[i] = x_new
        Dp = Dataset(newX, Dp.y, Dp.w, Dp.domain)
        trace.append({"iter": it, "test_loss": surrogate, "test_error": err,
                      "point_moved_norm": moved})
    return best[0] if best[0] is not None else Dp, trace


def run_influence(D_c: Dataset, D_test: Dataset, epsilon: float, F: FeasibleSet,
                  config: InfluenceConfig, defenses_for_eval=(), p: float = 0.05,
                  defender_loss: LossSpec | None = None,
                  defender_config: TrainConfig | None = None) -> AttackResult:
    started = time.perf_counter()
    defender_loss = defender_loss or LossSpec.hinge()
    defender_config = defender_config or TrainConfig()
    attack_loss = LossSpec.smoothed_hinge(config.delta)
    lam = defender_config.lam

    if config.concentrated:
        D_p0 = _concentrated_init(D_c, epsilon, F, config.seed)
    else:
        raw = init_label_flip(D_c, epsilon, F, config.seed)
        D_p0 = Dataset(np.array([F.project(raw.X[i], raw.y[i]) for i in range(raw.n)]),
                       raw.y, raw.w, raw.domain)

    if config.steps == 0:
        dp = D_p0
        trace = []
    else:
        theta0 = train(union(D_c, D_p0), attack_loss,
                       TrainConfig(lam=lam, objective=defender_config.objective))
        g0 = np.linalg.norm(test_gradient(theta0, D_test, attack_loss))
        base = 1.0 / max(g0, 1e-12)
        etas = [config.eta] if config.eta is not None else \
            [s * base for s in config.eta_grid]
        best = (None, -np.inf, [])
        for eta in etas:
            dp_eta, trace_eta = _ascend(
                D_c, D_test, D_p0, F, eta, config.steps, lam, attack_loss,
                defender_loss, defender_config.objective, config.cg_tol)
            score = max(r["test_loss"] for r in trace_eta)
            if score > best[1]:
                best = (dp_eta, score, trace_eta)
        dp, _, trace = best

    if D_c.domain is InputDomain.NONNEG_INT:
        dp = repeat_round(dp, config.round_repeats, config.seed + 7919)

    return evaluated_result("influence", dp, D_c, D_test, list(defenses_for_eval),
                            p, defender_loss, defender_config, started,
                            seed=config.seed, trace=trace)
