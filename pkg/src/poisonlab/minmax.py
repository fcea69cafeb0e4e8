"""Min-max saddle-point attack.

Approximating the test loss by the clean training loss turns the bilevel
attacker problem into a saddle point: descend on theta while repeatedly
adding the highest-loss feasible point.  The post-burn-in maximizers form
the attack.  The improved variant constrains every candidate to have low
loss under decoy parameters, which is what lets it slip past the loss
defense; it assumes test and training data share a distribution.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .data import Dataset, InputDomain, union
from .feasible import FeasibleSet, HalfSpace, margin_floor
from .models import (
    LossSpec,
    ModelParams,
    TrainConfig,
    avg_loss,
    dloss_dmargin,
    loss_of_margin,
    margins,
)
from .results import AttackResult, evaluated_result
from .rounding import repeat_round


class DivergenceError(RuntimeError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


def warn_if_distribution_shift(D_c: Dataset, D_test: Dataset) -> bool:
    """The attack substitutes training loss for test loss, which only holds
    when both sets share a distribution; emit a warning when the class
    centroids disagree by more than half a (pooled) standard deviation."""
    import warnings

    shifted = False
    for lab in (1.0, -1.0):
        a, b = D_c.y == lab, D_test.y == lab
        if not a.any() or not b.any():
            continue
        mu_a = np.average(D_c.X[a], axis=0, weights=D_c.w[a])
        mu_b = np.average(D_test.X[b], axis=0, weights=D_test.w[b])
        spread = float(np.mean(np.std(D_c.X[a], axis=0))) + 1e-12
        if np.linalg.norm(mu_a - mu_b) / np.sqrt(D_c.d) > 0.5 * spread:
            shifted = True
    if shifted:
        warnings.warn("test data looks distribution-shifted from the "
                      "training data; the min-max attack assumes they share "
                      "a distribution", stacklevel=2)
    return shifted


def max_loss_point(theta: np.ndarray, F: FeasibleSet, loss: LossSpec,
                   labels=(1.0, -1.0), warm: dict | None = None):
    """Highest-loss feasible point: per label, minimize the margin (losses are
    margin-decreasing), then take the larger loss; ties go to label +1."""
    best = None
    for y in sorted(labels, reverse=True):  # +1 first, so ties keep it
        x0 = warm.get(int(y)) if warm else None
        x = F.min_margin_point(theta, y, x0=x0)
        if warm is not None:
            warm[int(y)] = x
        m = y * float(np.dot(theta, x))
        val = float(loss_of_margin(loss, m))
        if best is None or val > best[2] + 1e-12:
            best = (x, y, val, m)
    return best[0], best[1], best[2], best[3]


def run_minmax_basic(D_c: Dataset, epsilon: float, F: FeasibleSet,
                     eta: float | None = None, n_burn: int | None = None,
                     lam: float = 0.1, loss: LossSpec | None = None,
                     D_test: Dataset | None = None, defenses_for_eval=(),
                     p: float = 0.05, config: TrainConfig | None = None,
                     round_repeats: int = 3, seed: int = 0,
                     attack_name: str = "minmax-basic") -> AttackResult:
    """Subgradient descent on the saddle objective; collects one maximizer per
    post-burn-in iteration, then normalizes their weights to a total of
    exactly epsilon * |D_c|."""
    started = time.perf_counter()
    loss = loss or LossSpec.hinge()
    config = config or TrainConfig(lam=lam)
    n = D_c.total_weight
    n_poison = int(round(epsilon * n))
    if n_burn is None:
        n_burn = int(round(n / 10.0))
    if eta is None:
        eta = 0.05 / lam
    theta = np.zeros(D_c.d)
    collected = []
    trace = []
    warm = {}
    bound = 1e6 * (1.0 + float(np.abs(D_c.X).max(initial=1.0)))
    total_iters = n_burn + n_poison
    for t in range(1, total_iters + 1):
        x, y, val, m = max_loss_point(theta, F, loss, warm=warm)
        coeff = D_c.w * dloss_dmargin(loss, D_c.y * (D_c.X @ theta)) * D_c.y
        grad_clean = D_c.X.T @ coeff / n
        g_point = float(dloss_dmargin(loss, m)) * y * x
        step = eta / np.sqrt(t)
        theta = theta - step * (lam * theta + grad_clean + epsilon * g_point)
        row = {"t": t, "max_loss": val, "margin": m, "label": int(y)}
        if t > n_burn:
            collected.append((x, y))
            row["collected"] = True
        trace.append(row)
        if np.linalg.norm(theta) > bound:
            raise DivergenceError(f"theta norm exceeded {bound:.1e} at t={t}",
                                  trace)
    if collected:
        X = np.array([c[0] for c in collected])
        ys = np.array([c[1] for c in collected])
        w = np.full(len(collected), epsilon * n / len(collected))
        dp = Dataset(X, ys, w, D_c.domain)
    else:
        dp = Dataset.empty(D_c.d, D_c.domain)
    if D_c.domain is InputDomain.NONNEG_INT and dp.n:
        dp = repeat_round(dp, round_repeats, seed + 4241)
    if D_test is None:
        res = AttackResult(attack=attack_name, dp=dp, seed=seed, trace=trace)
        res.seconds = time.perf_counter() - started
        return res
    return evaluated_result(attack_name, dp, D_c, D_test,
                            list(defenses_for_eval), p, loss, config, started,
                            seed=seed, trace=trace)


def run_minmax(D_c: Dataset, D_test: Dataset, epsilon: float,
               F_base: FeasibleSet, decoys, tau_loss: float = 0.25,
               eta: float | None = None, n_burn: int | None = None,
               lam: float = 0.1, loss: LossSpec | None = None,
               defenses_for_eval=(), p: float = 0.05,
               config: TrainConfig | None = None, round_repeats: int = 3,
               seed: int = 0) -> AttackResult:
    """Decoy-constrained variant: candidates must additionally keep loss at
    most tau_loss under the decoy parameters; sweeps the supplied decoys and
    returns the best result (by min-over-defense error)."""
    started = time.perf_counter()
    loss = loss or LossSpec.hinge()
    warn_if_distribution_shift(D_c, D_test)
    best = None
    trajectory = []
    for di, decoy in enumerate(decoys):
        F = F_base
        floor = margin_floor(loss, tau_loss)
        if np.isfinite(floor):
            th = decoy.theta_decoy.theta
            F = (F.with_halfspace(1, HalfSpace(-th, -floor))
                  .with_halfspace(-1, HalfSpace(th, -floor)))
        res = run_minmax_basic(D_c, epsilon, F, eta=eta, n_burn=n_burn,
                               lam=lam, loss=loss, D_test=D_test,
                               defenses_for_eval=defenses_for_eval, p=p,
                               config=config, round_repeats=round_repeats,
                               seed=seed, attack_name="minmax")
        score = res.min_over_defense
        trajectory.append((time.perf_counter() - started, score))
        if best is None or (score is not None and score > best[0]):
            res.decoy_provenance = {"decoy_index": di, "r": decoy.r,
                                    "gamma": decoy.gamma, "tau_loss": tau_loss}
            best = (score if score is not None else -1.0, res)
    if best is None:
        raise ValueError("no decoys supplied")
    out = best[1]
    out.seconds = time.perf_counter() - started
    out.trajectory = trajectory
    return out
