"""Linear classifiers sign(theta^T x): losses, training, gradients, HVPs.

All losses are margin-based, ell(theta; x, y) = c(-y theta^T x):

    hinge            c(s) = max(0, 1 + s)
    smoothed hinge   c(s) = delta * log(1 + exp((1 + s) / delta))
    logistic         c(s) = log(1 + exp(s))

Training minimizes  lambda/2 ||theta||^2 + agg_i w_i * ell_i  where agg is
either the weighted mean (``mean``) or the plain weighted sum (``sum``).
The two modes coincide after rescaling lambda by the total weight.

There is no intercept; append a constant feature if one is wanted.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize
from scipy.sparse.linalg import LinearOperator, cg
from scipy.special import expit

from .data import Dataset


class TrainingError(RuntimeError):
    """Optimizer failed to reach tolerance; carries the last iterate."""

    def __init__(self, msg, theta=None, residual=None):
        super().__init__(msg)
        self.theta = theta
        self.residual = residual


class UnsupportedLossError(TypeError):
    pass


HINGE = "hinge"
SMOOTHED_HINGE = "smoothed_hinge"
LOGISTIC = "logistic"


@dataclass(frozen=True)
class LossSpec:
    kind: str
    delta: float = 0.01

    def __post_init__(self):
        if self.kind not in (HINGE, SMOOTHED_HINGE, LOGISTIC):
            raise ValueError(f"unknown loss {self.kind!r}")
        if self.kind == SMOOTHED_HINGE and self.delta <= 0:
            raise ValueError("smoothing delta must be positive")

    @staticmethod
    def hinge() -> "LossSpec":
        return LossSpec(HINGE)

    @staticmethod
    def smoothed_hinge(delta: float = 0.01) -> "LossSpec":
        return LossSpec(SMOOTHED_HINGE, delta)

    @staticmethod
    def logistic() -> "LossSpec":
        return LossSpec(LOGISTIC)

    @property
    def smooth(self) -> bool:
        return self.kind != HINGE


@dataclass(frozen=True)
class ModelParams:
    theta: np.ndarray

    def __post_init__(self):
        th = np.asarray(self.theta, dtype=float).reshape(-1)
        if not np.all(np.isfinite(th)):
            raise ValueError("theta must be finite")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @property
    def d(self) -> int:
        return len(self.theta)


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.1
    objective: str = "mean"  # "mean" | "sum"
    tol: float = 1e-8
    max_iter: int = 2000
    eta0: float = 0.1  # SGD only
    seed: int = 0      # SGD only

    def __post_init__(self):
        if self.objective not in ("mean", "sum"):
            raise ValueError("objective must be 'mean' or 'sum'")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol > 0 and max_iter >= 1 required")


# -- pointwise primitives, vectorized over margins m = y * (X @ theta) -------

def loss_of_margin(loss: LossSpec, m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if loss.kind == HINGE:
        return np.maximum(0.0, 1.0 - m)
    if loss.kind == SMOOTHED_HINGE:
        return loss.delta * np.logaddexp(0.0, (1.0 - m) / loss.delta)
    return np.logaddexp(0.0, -m)


def dloss_dmargin(loss: LossSpec, m: np.ndarray) -> np.ndarray:
    """First derivative w.r.t. the margin; for hinge the subgradient at
    margin exactly 1 is resolved to -1 (deterministic choice)."""
    m = np.asarray(m, dtype=float)
    if loss.kind == HINGE:
        return np.where(m <= 1.0, -1.0, 0.0)
    if loss.kind == SMOOTHED_HINGE:
        return -expit((1.0 - m) / loss.delta)
    return -expit(-m)


def d2loss_dmargin2(loss: LossSpec, m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if loss.kind == HINGE:
        raise UnsupportedLossError("hinge loss has no second derivative")
    if loss.kind == SMOOTHED_HINGE:
        s = expit((1.0 - m) / loss.delta)
        return s * (1.0 - s) / loss.delta
    return expit(m) * expit(-m)


def loss_point(loss: LossSpec, theta: ModelParams, x: np.ndarray, y: float) -> float:
    m = y * float(np.dot(theta.theta, x))
    return float(loss_of_margin(loss, m))


def grad_point(loss: LossSpec, theta: ModelParams, x: np.ndarray, y: float) -> np.ndarray:
    m = y * float(np.dot(theta.theta, x))
    return float(dloss_dmargin(loss, m)) * y * np.asarray(x, dtype=float)


def margins(theta: ModelParams, D: Dataset) -> np.ndarray:
    return D.y * (D.X @ theta.theta)


def avg_loss(theta: ModelParams, D: Dataset, loss: LossSpec) -> float:
    if D.total_weight <= 0:
        raise ValueError("avg_loss of an empty dataset")
    return float(np.dot(D.w, loss_of_margin(loss, margins(theta, D))) / D.total_weight)


def test_error_01(theta: ModelParams, D: Dataset) -> float:
    """Weight-averaged 0-1 error; sign(0) counts as an error for both labels."""
    if D.total_weight <= 0:
        raise ValueError("test_error_01 of an empty dataset")
    return float(np.dot(D.w, margins(theta, D) <= 0.0) / D.total_weight)


def objective_value(theta: np.ndarray, D: Dataset, loss: LossSpec, lam: float,
                    objective: str = "mean") -> float:
    m = D.y * (D.X @ theta)
    total = float(np.dot(D.w, loss_of_margin(loss, m)))
    if objective == "mean":
        total /= D.total_weight
    return 0.5 * lam * float(np.dot(theta, theta)) + total


def _full_gradient(theta: np.ndarray, D: Dataset, loss: LossSpec, lam: float,
                   objective: str) -> np.ndarray:
    m = D.y * (D.X @ theta)
    coeff = D.w * dloss_dmargin(loss, m) * D.y
    g = lam * theta + D.X.T @ coeff / (D.total_weight if objective == "mean" else 1.0)
    return g


# -- hinge training: box-constrained dual QP ---------------------------------
#
# For the sum objective  lambda/2 ||theta||^2 + sum_i w_i max(0, 1 - m_i)
# the dual is  max_alpha  1^T alpha - ||X^T (alpha * y)||^2 / (2 lambda)
# over the box 0 <= alpha_i <= w_i, with theta = X^T (alpha * y) / lambda.
# We run L-BFGS-B on the dual and then polish with an exact solve on the
# active set (points at margin 1), which typically lands at machine precision.

_MARGIN_BAND = 1e-6


def _hinge_witness(theta, alpha, X, y, w, lam):
    """Minimal-effort member of the objective's subgradient set at theta.

    Margins within a +-1e-6 relative band of 1 may take the fractional
    coefficient alpha_i/w_i; everything else is forced to its region's value.
    """
    m = y * (X @ theta)
    band = _MARGIN_BAND * (1.0 + np.abs(m))
    a = np.where(m < 1.0 - band, w, np.where(m > 1.0 + band, 0.0, np.clip(alpha, 0.0, w)))
    return lam * theta - X.T @ (a * y)


def _hinge_cd_pass(theta, alpha, X, y, w, lam, order):
    sq = np.einsum("ij,ij->i", X, X)
    for i in order:
        if w[i] <= 0 or sq[i] <= 0:
            continue
        g = 1.0 - y[i] * np.dot(X[i], theta)
        a_new = min(max(alpha[i] + lam * g / sq[i], 0.0), w[i])
        da = a_new - alpha[i]
        if da != 0.0:
            alpha[i] = a_new
            theta += (da / lam) * y[i] * X[i]
    return theta, alpha


try:
    from numba import njit

    @njit(cache=True)
    def _cd_epochs_jit(X, y, w, sq, lam, alpha, theta, epochs):
        n, d = X.shape
        for _ in range(epochs):
            for i in range(n):
                if w[i] <= 0.0 or sq[i] <= 0.0:
                    continue
                m = 0.0
                for k in range(d):
                    m += X[i, k] * theta[k]
                g = 1.0 - y[i] * m
                a_new = alpha[i] + lam * g / sq[i]
                if a_new < 0.0:
                    a_new = 0.0
                elif a_new > w[i]:
                    a_new = w[i]
                da = a_new - alpha[i]
                if da != 0.0:
                    alpha[i] = a_new
                    c = da / lam * y[i]
                    for k in range(d):
                        theta[k] += c * X[i, k]

    def _cd_epochs(X, y, w, lam, alpha, theta, epochs):
        sq = np.einsum("ij,ij->i", X, X)
        _cd_epochs_jit(np.ascontiguousarray(X), y, w, sq, lam, alpha, theta,
                       epochs)
        return theta, alpha

except ImportError:  # pragma: no cover - numba is normally available
    def _cd_epochs(X, y, w, lam, alpha, theta, epochs):
        order = np.arange(len(y))
        for _ in range(epochs):
            theta, alpha = _hinge_cd_pass(theta, alpha, X, y, w, lam, order)
        return theta, alpha


def _hinge_active_set_polish(alpha, X, y, w, lam, band_scale=_MARGIN_BAND):
    theta = X.T @ (alpha * y) / lam
    m = y * (X @ theta)
    band = band_scale * (1.0 + np.abs(m))
    low = m < 1.0 - band
    mid = np.abs(m - 1.0) <= band
    if low.any():
        b = X[low].T @ (w[low] * y[low])
    else:
        b = np.zeros(X.shape[1])
    if mid.any():
        Xm = X[mid] * y[mid, None]
        K = Xm @ Xm.T
        rhs = lam * np.ones(mid.sum()) - Xm @ b
        am, *_ = np.linalg.lstsq(K, rhs, rcond=None)
        am = np.clip(am, 0.0, w[mid])
    else:
        am = np.zeros(0)
    alpha2 = np.where(low, w, 0.0)
    alpha2[mid] = am
    theta2 = X.T @ (alpha2 * y) / lam
    return theta2, alpha2


def _train_hinge_sum(X, y, w, lam, tol, max_iter):
    n = len(y)

    def witness_norm(th, al):
        return float(np.linalg.norm(_hinge_witness(th, al, X, y, w, lam)))

    best = [None, None, np.inf]

    def consider(th, al):
        r = witness_norm(th, al)
        if r < best[2]:
            best[0], best[1], best[2] = th, al, r
        return r <= tol * (1.0 + np.linalg.norm(th))

    def try_ladder(alpha):
        a = alpha
        for band in (1e-4, _MARGIN_BAND, _MARGIN_BAND):
            th2, al2 = _hinge_active_set_polish(a, X, y, w, lam,
                                                band_scale=band)
            if consider(th2, al2):
                return True
            a = al2
        return False

    # smoothing continuation (Newton) seeds everything; the active-set
    # ladder usually finishes well-conditioned (large-lambda) problems, the
    # weight-normalized dual L-BFGS-B handles flat-primal ones, and jitted
    # dual coordinate descent is the convergent closer for the rest
    theta = np.zeros(X.shape[1])
    for delta in (0.3, 0.03, 0.003):
        sm = LossSpec(SMOOTHED_HINGE, delta)
        theta = _train_smooth(X, y, w, sm, lam, 1e-10, max_iter, 1.0,
                              x0=theta, strict=False)
    beta0 = expit((1.0 - y * (X @ theta)) / 0.003)
    if consider(theta, beta0 * w) or try_ladder(beta0 * w):
        return best[0], best[1]

    Yxw = X * (y * w)[:, None]

    def negdual(b):
        v = Yxw.T @ b
        return 0.5 * np.dot(v, v) / lam - np.dot(w, b), Yxw @ v / lam - w

    res = minimize(negdual, beta0, jac=True, method="L-BFGS-B",
                   bounds=[(0.0, 1.0)] * n,
                   options={"maxiter": 15 * max_iter, "maxfun": 30 * max_iter,
                            "ftol": 1e-18, "gtol": 1e-12, "maxcor": 20})
    beta = np.clip(res.x, 0.0, 1.0)
    alpha = beta * w
    theta = Yxw.T @ beta / lam
    if consider(theta, alpha) or try_ladder(alpha):
        return best[0], best[1]

    # convergent closer: cyclic dual coordinate descent from the best iterate
    theta = best[0].copy()
    alpha = best[1].copy()
    chunk = 25
    for _ in range(max(1, (40 * max_iter) // chunk)):
        theta, alpha = _cd_epochs(X, y, w, lam, alpha, theta, chunk)
        if consider(theta, alpha) or try_ladder(alpha):
            return best[0], best[1]
    raise TrainingError(
        f"hinge training stalled at witness norm {best[2]:.3e} "
        f"(target {tol * (1.0 + np.linalg.norm(best[0])):.3e})",
        theta=best[0], residual=best[2])


# -- smooth training: L-BFGS start + Newton polish ---------------------------

_DENSE_NEWTON_MAX_D = 800


def _train_smooth(X, y, w, loss, lam, tol, max_iter, norm, x0=None,
                  strict=True):
    d = X.shape[1]

    def fg(th):
        m = y * (X @ th)
        f = 0.5 * lam * np.dot(th, th) + np.dot(w, loss_of_margin(loss, m)) / norm
        g = lam * th + X.T @ (w * dloss_dmargin(loss, m) * y) / norm
        return f, g

    if x0 is None:
        res = minimize(fg, np.zeros(d), jac=True, method="L-BFGS-B",
                       options={"maxiter": 300, "ftol": 1e-18, "gtol": 1e-14})
        theta = res.x
    else:
        theta = np.asarray(x0, dtype=float).copy()  # warm Newton handles it
    f, g = fg(theta)
    target = tol * (1.0 + np.linalg.norm(theta))
    it = 0
    while np.linalg.norm(g) > 0.5 * target and it < 100:
        m = y * (X @ theta)
        curv = w * d2loss_dmargin2(loss, m) / norm
        if d <= _DENSE_NEWTON_MAX_D:
            H = lam * np.eye(d) + (X.T * curv) @ X
            step = np.linalg.solve(H, g)
        else:
            op = LinearOperator((d, d), matvec=lambda v: lam * v + X.T @ (curv * (X @ v)))
            step, _ = cg(op, g, rtol=1e-12, atol=0.0, maxiter=10 * d)
        gn = np.linalg.norm(g)
        t = 1.0
        f_new, g_new = fg(theta - t * step)
        # near the optimum f-differences drown in float noise, so accept on
        # gradient decrease as well
        while f_new > f and np.linalg.norm(g_new) >= gn and t > 1e-12:
            t *= 0.5
            f_new, g_new = fg(theta - t * step)
        if f_new > f and np.linalg.norm(g_new) >= gn:
            break
        theta, f, g = theta - t * step, f_new, g_new
        target = tol * (1.0 + np.linalg.norm(theta))
        it += 1
    if strict and np.linalg.norm(g) > target:
        raise TrainingError(
            f"training stalled at gradient norm {np.linalg.norm(g):.3e} "
            f"(target {target:.3e})", theta=theta, residual=float(np.linalg.norm(g)))
    return theta


def train_with_duals(D: Dataset, loss: LossSpec, config: TrainConfig):
    """Train and also return per-point gradient scales gamma in [0,1]:
    the coefficient such that the point's gradient contribution at theta-hat
    is gamma_i * w_i * (-y_i x_i).  For the hinge these come from the dual
    solution (needed at margins exactly 1); for smooth losses gamma = c'(s).
    """
    if D.n == 0 or D.total_weight <= 0:
        raise ValueError("cannot train on an empty dataset")
    if config.lam <= 0:
        raise ValueError("lambda must be positive")
    mask = D.w > 0
    X, y, w = D.X[mask], D.y[mask], D.w[mask]
    lam_sum = config.lam * (D.total_weight if config.objective == "mean" else 1.0)
    if loss.kind == HINGE:
        theta, alpha = _train_hinge_sum(X, y, w, lam_sum, config.tol, config.max_iter)
        gamma = np.zeros(D.n)
        m = y * (X @ theta)
        band = _MARGIN_BAND * (1.0 + np.abs(m))
        g = np.where(m < 1.0 - band, 1.0,
                     np.where(m > 1.0 + band, 0.0, np.clip(alpha / w, 0.0, 1.0)))
        gamma[mask] = g
    else:
        norm = D.total_weight if config.objective == "mean" else 1.0
        theta = _train_smooth(X, y, w, loss, config.lam, config.tol,
                              config.max_iter, norm)
        gamma = np.zeros(D.n)
        gamma[mask] = -dloss_dmargin(loss, y * (X @ theta))
    return ModelParams(theta), gamma


def train(D: Dataset, loss: LossSpec, config: TrainConfig) -> ModelParams:
    """Deterministic batch training to the configured tolerance: on return a
    member of the full-objective subgradient set at theta-hat has norm at
    most tol * (1 + ||theta-hat||)."""
    return train_with_duals(D, loss, config)[0]


def train_sgd_single_pass(D: Dataset, loss: LossSpec, config: TrainConfig) -> ModelParams:
    """One seeded shuffled pass of SGD with step size eta0 / (lambda * t)."""
    if config.eta0 <= 0:
        raise ValueError("eta0 must be positive")
    rng = np.random.Generator(np.random.Philox(config.seed))
    order = rng.permutation(D.n)
    theta = np.zeros(D.d)
    lam = config.lam
    scale = D.n / D.total_weight  # per-sample weight correction for mean loss
    for t, i in enumerate(order, start=1):
        eta = config.eta0 / (lam * t)
        m = D.y[i] * np.dot(D.X[i], theta)
        coeff = float(dloss_dmargin(loss, m)) * D.y[i] * D.w[i] * scale
        theta = (1.0 - eta * lam) * theta - eta * coeff * D.X[i]
    return ModelParams(theta)


def hvp(theta: ModelParams, D: Dataset, lam: float, v: np.ndarray,
        loss: LossSpec) -> np.ndarray:
    """(lambda I + weighted-mean per-point loss Hessian) @ v."""
    v = np.asarray(v, dtype=float)
    curv = D.w * d2loss_dmargin2(loss, margins(theta, D)) / D.total_weight
    return lam * v + D.X.T @ (curv * (D.X @ v))


def inverse_hvp_cg(theta: ModelParams, D: Dataset, lam: float, v: np.ndarray,
                   loss: LossSpec, tol: float = 1e-8,
                   maxiter: int | None = None,
                   x0: np.ndarray | None = None) -> np.ndarray:
    """Solve H u = v by conjugate gradients to ||Hu - v|| <= tol * ||v||;
    x0 warm-starts the solve (e.g. from the previous attack iteration)."""
    if lam <= 0:
        raise ValueError("lambda must be positive for an invertible Hessian")
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        return np.zeros_like(v)
    curv = D.w * d2loss_dmargin2(loss, margins(theta, D)) / D.total_weight
    d = D.d
    op = LinearOperator((d, d), matvec=lambda u: lam * u + D.X.T @ (curv * (D.X @ u)))
    u, info = cg(op, v, rtol=tol, atol=0.0, x0=x0,
                 maxiter=maxiter or max(20 * d, 1000))
    if info != 0:
        raise TrainingError(f"CG failed to converge (info={info})", theta=u)
    return u


def model_to_json(theta: ModelParams, loss: LossSpec, lam: float) -> str:
    doc = {
        "d": theta.d,
        "theta": [float(t) for t in theta.theta],
        "loss": {"kind": loss.kind, "delta": loss.delta},
        "lambda": lam,
    }
    return json.dumps(doc, sort_keys=True)


def model_from_json(text: str):
    doc = json.loads(text)
    loss = LossSpec(doc["loss"]["kind"], doc["loss"].get("delta", 0.01))
    return ModelParams(np.array(doc["theta"])), loss, float(doc["lambda"])
