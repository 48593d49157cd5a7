"""Batch BRMM solvers, model mappings and the upper-boundary estimator.

The binary BRMM spans C-SVM (``R = inf``) and RFDA / LS-SVM (``R = 1``).
With the offset moved into the regulariser (weight ``H``) the dual has no
equality constraint and is solved one index at a time.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _cd
from .core import INF, Dataset, FitInfo, HyperParams, KernelSpec


@dataclass(frozen=True, eq=False)
class DualModel:
    """Fitted binary BRMM.

    Only samples with a nonzero dual weight are retained.  For the linear
    kernel ``w`` and ``b`` cache the primal solution.
    """

    alphas: np.ndarray
    betas: np.ndarray
    support_X: np.ndarray
    support_y: np.ndarray
    kernel: KernelSpec
    H: float = 1.0
    w: np.ndarray | None = None
    b: float | None = None
    hyperparams: HyperParams | None = None
    info: FitInfo = field(default_factory=FitInfo)

    @property
    def coef(self) -> np.ndarray:
        """Signed expansion coefficients ``y_j (alpha_j - beta_j)``."""
        return self.support_y * (self.alphas - self.betas)

    @property
    def dimension(self) -> int:
        if self.w is not None:
            return self.w.shape[0]
        return self.support_X.shape[1]

    def expansion_scores(self, X) -> np.ndarray:
        """Scores via the kernel expansion, ignoring the linear cache."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.support_X.shape[1]:
            raise ValueError(f"dimension mismatch: model has {self.support_X.shape[1]}, "
                             f"input has {X.shape[1]}")
        if self.coef.size == 0:
            return np.zeros(X.shape[0])
        K = self.kernel.gram(self.support_X, X) + 1.0 / self.H
        return self.coef @ K

    def decision_function(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.w is not None:
            if X.shape[1] != self.w.shape[0]:
                raise ValueError(f"dimension mismatch: model has {self.w.shape[0]}, "
                                 f"input has {X.shape[1]}")
            return X @ self.w + self.b
        return self.expansion_scores(X)

    def predict(self, X) -> np.ndarray:
        return np.where(self.decision_function(X) > 0, 1, -1)


def decision_score(model: DualModel, x) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    return float(model.decision_function(x[None, :])[0])


def _binary_qp(y: np.ndarray, hp: HyperParams) -> _cd.BoxQP:
    n = y.shape[0]
    C = hp.sample_C(y)
    C_out = hp.sample_C_outer(y)
    R = hp.sample_R(y)
    if hp.loss_order == "L2":
        # squared loss: ridge 1/(2C) on the duals, no upper cap
        ra = np.where(np.isinf(C), 0.0, 1.0 / (2.0 * C))
        rb = np.where(np.isinf(C_out), 0.0, 1.0 / (2.0 * C_out))
        cap_a = np.full(n, INF)
        cap_b = np.full(n, INF)
    else:
        ra = np.zeros(n)
        rb = np.zeros(n)
        cap_a, cap_b = C, C_out
    return _cd.BoxQP(lo=np.ones(n), hi=R, cap_a=cap_a, cap_b=cap_b, ra=ra, rb=rb)


def _fit_info(res: _cd.CDResult, notes=()) -> FitInfo:
    return FitInfo(iterations=res.iterations, converged=res.converged,
                   kkt_residual=float(res.residual), skipped=res.skipped, notes=tuple(notes))


def fit_brmm(data: Dataset, hp: HyperParams = HyperParams(),
             kernel: KernelSpec = KernelSpec()) -> DualModel:
    """Fit a binary BRMM by dual coordinate descent.

    Indices are visited in a seeded random permutation per outer sweep,
    followed by repeated sweeps over the active set.  ``R = inf`` turns off
    the outer margin (beta stays exactly zero).
    """
    data.require_binary()
    X, y = np.asarray(data.X), np.asarray(data.y)
    qp = _binary_qp(y, hp)
    ow = 1.0 / hp.H
    if kernel.is_linear:
        res = _cd.solve_linear(X, y, ow, qp, tol=hp.tolerance, max_iter=hp.max_iterations,
                               seed=hp.seed)
    else:
        G = np.outer(y, y) * (kernel.gram(X) + ow)
        res = _cd.solve_gram(G, qp, tol=hp.tolerance, max_iter=hp.max_iterations, seed=hp.seed)
    notes = []
    if not res.converged:
        notes.append(f"max_iterations={hp.max_iterations} reached")
        warnings.warn(f"BRMM solver stopped after {res.iterations} sweeps "
                      f"(residual {res.residual:.3g})", RuntimeWarning, stacklevel=2)
    keep = (res.a > 0) | (res.b > 0)
    w = b = None
    if kernel.is_linear:
        w = res.w.copy()
        b = res.c
    return DualModel(alphas=res.a[keep], betas=res.b[keep], support_X=X[keep].copy(),
                     support_y=y[keep].copy(), kernel=kernel, H=hp.H, w=w, b=b,
                     hyperparams=hp, info=_fit_info(res, notes))


def fit_csvm(data: Dataset, hp: HyperParams = HyperParams(),
             kernel: KernelSpec = KernelSpec()) -> DualModel:
    return fit_brmm(data, hp.replace(R=INF), kernel)


def fit_rfda(data: Dataset, hp: HyperParams = HyperParams(),
             kernel: KernelSpec = KernelSpec()) -> DualModel:
    return fit_brmm(data, hp.replace(R=1.0), kernel)


# --------------------------------------------------------------------------
# objectives, for duality-gap checks


def _gram_of(model: DualModel) -> np.ndarray:
    return model.kernel.gram(model.support_X)


def brmm_dual_objective(model: DualModel, hp: HyperParams) -> float:
    """Value of the minimised dual at the model's duals."""
    y = model.support_y
    a, b = model.alphas, model.betas
    c = model.coef
    quad = float(c @ (_gram_of(model) + 1.0 / model.H) @ c) if c.size else 0.0
    R = hp.sample_R(y)
    outer = float(np.sum(R[b > 0] * b[b > 0]))
    val = 0.5 * quad - float(np.sum(a)) + outer
    if hp.loss_order == "L2":
        C, C_out = hp.sample_C(y), hp.sample_C_outer(y)
        val += 0.25 * float(np.sum(a * a / C)) + 0.25 * float(np.sum(b * b / C_out))
    return val


def brmm_primal_objective(model: DualModel, data: Dataset, hp: HyperParams) -> float:
    """Primal objective with slacks recovered as margin violations."""
    c = model.coef
    w_sq = float(c @ _gram_of(model) @ c) if c.size else 0.0
    b = float(np.sum(c)) / model.H
    yf = data.y * model.expansion_scores(data.X)
    R = hp.sample_R(data.y)
    t = np.maximum(0.0, 1.0 - yf)
    s = np.where(np.isinf(R), 0.0, np.maximum(0.0, yf - np.where(np.isinf(R), 0.0, R)))
    C, C_out = hp.sample_C(data.y), hp.sample_C_outer(data.y)
    p = 2 if hp.loss_order == "L2" else 1
    val = 0.5 * w_sq + 0.5 * model.H * b * b
    for cost, slack in ((C, t), (C_out, s)):
        hard = np.isinf(cost)
        if np.any(slack[hard] > 0):
            return INF
        val += float(np.sum(cost[~hard] * slack[~hard] ** p))
    return val


def duality_gap(model: DualModel, data: Dataset, hp: HyperParams) -> float:
    return brmm_primal_objective(model, data, hp) + brmm_dual_objective(model, hp)


# --------------------------------------------------------------------------
# mappings


def map_brmm_to_svr(C_brmm: float, R_brmm: float) -> tuple[float, float]:
    """BRMM ``(C', R')`` to epsilon-insensitive RFDA / SVR ``(epsilon, C)``."""
    if not R_brmm >= 1:
        raise ValueError("R must be >= 1")
    if not C_brmm > 0:
        raise ValueError("C must be positive")
    if math.isinf(R_brmm):
        raise ValueError("R = inf has no SVR counterpart (epsilon would be 1)")
    return (R_brmm - 1.0) / (R_brmm + 1.0), 2.0 * C_brmm / (R_brmm + 1.0)


def map_svr_to_brmm(epsilon: float, C_svr: float) -> tuple[float, float]:
    """Inverse of :func:`map_brmm_to_svr`."""
    if not 0 <= epsilon < 1:
        raise ValueError("epsilon must lie in [0, 1)")
    if not C_svr > 0:
        raise ValueError("C must be positive")
    return C_svr / (1.0 - epsilon), (1.0 + epsilon) / (1.0 - epsilon)


@dataclass(frozen=True)
class MappingParams:
    epsilon: float
    C_svr: float
    C_brmm: float
    R_brmm: float
    nu: float | None = None
    rho: float | None = None

    @classmethod
    def from_brmm(cls, C_brmm: float, R_brmm: float) -> "MappingParams":
        eps, C = map_brmm_to_svr(C_brmm, R_brmm)
        return cls(eps, C, C_brmm, R_brmm)


def compute_r_max(data: Dataset, hp: HyperParams = HyperParams(),
                  kernel: KernelSpec = KernelSpec()) -> float:
    """Largest absolute C-SVM training score; any ``R >= R_max`` is inert."""
    model = fit_csvm(data, hp, kernel)
    return float(np.max(np.abs(model.decision_function(data.X))))


def rbf_linear_limit(C_linear: float, sigma_sq: float) -> float:
    """RBF-kernel ``C`` that mimics a linear C-SVM for large widths."""
    if not (C_linear > 0 and sigma_sq > 0):
        raise ValueError("both arguments must be positive")
    return C_linear * sigma_sq


# --------------------------------------------------------------------------
# positive upper boundary support vector estimation


@dataclass(frozen=True, eq=False)
class PubsveModel:
    """Upper boundary ``f(x) = sum alpha_i k(x_i, x) + b``, ``b = sum(alpha) / H``."""

    alphas: np.ndarray
    support_X: np.ndarray
    support_y: np.ndarray
    kernel: KernelSpec
    H: float
    b: float
    C: float = INF
    loss_order: str = "L1"
    degenerate: bool = False
    info: FitInfo = field(default_factory=FitInfo)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.alphas.size == 0:
            return np.zeros(X.shape[0])
        if X.shape[1] != self.support_X.shape[1]:
            raise ValueError("dimension mismatch")
        return self.alphas @ self.kernel.gram(self.support_X, X) + self.b


def fit_pubsve(data: Dataset, C: float = INF, H: float = 1.0, loss_order: str = "L1",
               kernel: KernelSpec = KernelSpec(), *, tolerance: float = 1e-8,
               max_iterations: int = 10000, seed: int = 0) -> PubsveModel:
    """Fit a tight upper boundary ``f(x_j) >= y_j`` (soft for finite ``C``).

    Targets are expected to be shifted so that they are mostly nonnegative;
    an all-zero solution in the presence of negative targets is flagged as
    degenerate.
    """
    if loss_order not in ("L1", "L2"):
        raise ValueError("loss_order must be 'L1' or 'L2'")
    if not (C > 0 and H > 0):
        raise ValueError("C and H must be positive")
    X, y = np.asarray(data.X), np.asarray(data.y)
    n = y.shape[0]
    if loss_order == "L2":
        ra = np.full(n, 0.0 if math.isinf(C) else 1.0 / (2.0 * C))
        cap = np.full(n, INF)
    else:
        ra = np.zeros(n)
        cap = np.full(n, float(C))
    qp = _cd.BoxQP(lo=y.astype(np.float64).copy(), hi=np.full(n, INF), cap_a=cap,
                   cap_b=np.zeros(n), ra=ra, rb=np.zeros(n))
    ones = np.ones(n)
    if kernel.is_linear:
        res = _cd.solve_linear(X, ones, 1.0 / H, qp, tol=tolerance, max_iter=max_iterations,
                               seed=seed)
    else:
        res = _cd.solve_gram(kernel.gram(X) + 1.0 / H, qp, tol=tolerance,
                             max_iter=max_iterations, seed=seed)
    keep = res.a > 0
    degenerate = bool(not np.any(keep) and np.any(y < 0))
    notes = []
    if degenerate:
        notes.append("all-zero solution with negative targets; normalise targets first")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    alphas = res.a[keep]
    return PubsveModel(alphas=alphas, support_X=X[keep].copy(), support_y=y[keep].copy(),
                       kernel=kernel, H=H, b=float(np.sum(alphas)) / H, C=C,
                       loss_order=loss_order, degenerate=degenerate,
                       info=_fit_info(res, notes))


def refit_pubsve(model: PubsveModel, new_data: Dataset, **kwargs) -> PubsveModel:
    """Incremental step: train on the new samples plus the old support vectors."""
    X = np.vstack([model.support_X, new_data.X]) if model.alphas.size else new_data.X
    y = np.concatenate([model.support_y, new_data.y]) if model.alphas.size else new_data.y
    kwargs.setdefault("C", model.C)
    kwargs.setdefault("H", model.H)
    kwargs.setdefault("loss_order", model.loss_order)
    kwargs.setdefault("kernel", model.kernel)
    return fit_pubsve(Dataset(X, y), **kwargs)
