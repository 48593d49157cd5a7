"""One-class classifiers obtained by separating the data from the origin.

The origin acts as a hard-separated negative example, which fixes the
offset at -1 and gives the decision ``sign(<w, x> - 2)``.  The outer
margin ``<w, x> <= R + 1`` turns the one-class SVM into the one-class BRMM.
Also contains the unary passive-aggressive learner with the SVDD loss and
the analytic maps between SVDD, nu-one-class SVM and the C-parameterised
one-class SVM.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import _cd
from .core import INF, LOSS_ORDERS, Dataset, FitInfo, KernelSpec, sign_decision


class NotSeparableError(ValueError):
    """The hard-margin problem has no solution for the given data."""


@dataclass(frozen=True, eq=False)
class OneClassModel:
    alphas: np.ndarray
    betas: np.ndarray
    support_X: np.ndarray
    kernel: KernelSpec
    R: float = INF
    C: float = 1.0
    loss_order: str = "L1"
    w: np.ndarray | None = None
    info: FitInfo = field(default_factory=FitInfo)

    @property
    def coef(self) -> np.ndarray:
        return self.alphas - self.betas

    def score(self, X) -> np.ndarray:
        """``sum (alpha_j - beta_j) k(x_j, x)``, compared against 2."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.w is not None:
            if X.shape[1] != self.w.shape[0]:
                raise ValueError("dimension mismatch")
            return X @ self.w
        if self.coef.size == 0:
            return np.zeros(X.shape[0])
        return self.coef @ self.kernel.gram(self.support_X, X)

    def decision_function(self, X) -> np.ndarray:
        return self.score(X) - 2.0

    def predict(self, X) -> np.ndarray:
        return sign_decision(self.decision_function(X))


def _oneclass_qp(n: int, C: float, R: float, loss_order: str) -> _cd.BoxQP:
    hi = np.full(n, INF if math.isinf(R) else R + 1.0)
    if loss_order == "L1":
        caps, ridge = np.full(n, float(C)), np.zeros(n)
    elif loss_order == "L2":
        caps, ridge = np.full(n, INF), np.full(n, 1.0 / C)
    else:
        caps, ridge = np.full(n, INF), np.zeros(n)
    return _cd.BoxQP(lo=np.full(n, 2.0), hi=hi, cap_a=caps, cap_b=caps.copy(), ra=ridge,
                     rb=ridge.copy())


def fit_oneclass_brmm(data: Dataset, C: float = 1.0, R: float = INF, loss_order: str = "L1",
                      kernel: KernelSpec = KernelSpec(), *, tolerance: float = 1e-8,
                      max_iterations: int = 1000, seed: int = 0) -> OneClassModel:
    """Fit the one-class BRMM (``R = inf``: one-class SVM, ``R = 1``: RFDA).

    ``loss_order="hard"`` ignores ``C``.  Hard-margin problems that are not
    separable from the origin raise :class:`NotSeparableError`.
    """
    data.require_unary()
    if loss_order not in LOSS_ORDERS:
        raise ValueError(f"loss_order must be one of {LOSS_ORDERS}")
    if not R >= 1:
        raise ValueError("R must be >= 1")
    if loss_order != "hard" and not C > 0:
        raise ValueError("C must be positive")
    X = np.asarray(data.X)
    n = X.shape[0]
    diag = kernel.diagonal(X)
    blowup = dual_bound = None
    if loss_order == "hard":
        if R == 1:
            raise ValueError("hard-margin one-class RFDA (R = 1) has no solution")
        if np.any(diag <= 0):
            raise ValueError("zero vector in data: hard margin cannot be satisfied")
        blowup = 1e6 * float(np.sqrt(np.max(diag)))
        dual_bound = 1e5 * 2.0 / float(np.min(diag))
    qp = _oneclass_qp(n, C, R, loss_order)
    if kernel.is_linear:
        res = _cd.solve_linear(X, np.ones(n), 0.0, qp, tol=tolerance, max_iter=max_iterations,
                               seed=seed, blowup=blowup, dual_bound=dual_bound)
    else:
        res = _cd.solve_gram(kernel.gram(X), qp, tol=tolerance, max_iter=max_iterations,
                             seed=seed, blowup=blowup, dual_bound=dual_bound)
    diverged = res.diverged
    if loss_order == "hard" and not res.converged and not diverged:
        # feasible optima satisfy sum(2a - (R+1) b) = |w|^2; infeasible problems let
        # a and b grow together while w stays bounded
        w_sq = float(res.w @ res.w) if kernel.is_linear else _quad(kernel.gram(X), res.a - res.b)
        mass = float(np.sum(res.a) + np.sum(res.b)) * float(np.min(diag))
        diverged = mass > 1e3 * (1.0 + w_sq)
    if diverged:
        raise NotSeparableError("data not separable from origin within the outer margin")
    notes = () if res.converged else (f"max_iterations={max_iterations} reached",)
    if not res.converged:
        warnings.warn(f"one-class solver stopped after {res.iterations} sweeps "
                      f"(residual {res.residual:.3g})", RuntimeWarning, stacklevel=2)
    info = FitInfo(iterations=res.iterations, converged=res.converged,
                   kkt_residual=float(res.residual), skipped=res.skipped, notes=notes)
    keep = (res.a > 0) | (res.b > 0)
    return OneClassModel(alphas=res.a[keep], betas=res.b[keep], support_X=X[keep].copy(),
                         kernel=kernel, R=R, C=C, loss_order=loss_order,
                         w=res.w.copy() if kernel.is_linear else None, info=info)


def _quad(K: np.ndarray, c: np.ndarray) -> float:
    return float(c @ K @ c)


def oneclass_dual_objective(model: OneClassModel) -> float:
    c = model.coef
    if c.size == 0:
        return 0.0
    K = model.kernel.gram(model.support_X)
    val = 0.5 * float(c @ K @ c) - 2.0 * float(np.sum(model.alphas))
    if not math.isinf(model.R):
        val += (model.R + 1.0) * float(np.sum(model.betas))
    if model.loss_order == "L2":
        val += float(np.sum(model.alphas**2 + model.betas**2)) / (2.0 * model.C)
    return val


def oneclass_primal_objective(model: OneClassModel, data: Dataset,
                              feasibility_tol: float = 1e-8) -> float:
    """Primal value with separate inner and outer slacks (L2 weights them by C/2).

    For the hard margin, violations above ``feasibility_tol`` give ``inf``.
    """
    c = model.coef
    w_sq = float(c @ model.kernel.gram(model.support_X) @ c) if c.size else 0.0
    s = model.score(data.X) if model.w is not None or c.size else np.zeros(data.n)
    t = np.maximum(0.0, 2.0 - s)
    u = np.zeros_like(t) if math.isinf(model.R) else np.maximum(0.0, s - model.R - 1.0)
    if model.loss_order == "hard":
        feasible = max(float(np.max(t)), float(np.max(u))) <= feasibility_tol
        return 0.5 * w_sq if feasible else INF
    if model.loss_order == "L2":
        return 0.5 * w_sq + 0.5 * model.C * float(np.sum(t * t + u * u))
    return 0.5 * w_sq + model.C * float(np.sum(t + u))


# --------------------------------------------------------------------------
# geometric oracle


def hull_min_norm_oracle(points, *, resolution: float = 1e-12) -> np.ndarray:
    """Point of minimal norm in the convex hull of ``points`` by grid refinement.

    Barycentric coordinates start uniform; mass is moved between pairs of
    vertices in steps that are halved whenever no transfer improves the
    norm.  Pairwise transfers span every feasible direction of the simplex,
    so the search cannot stall away from the optimum by more than the step.
    """
    P = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if P.size == 0:
        raise ValueError("empty point set")
    n = P.shape[0]
    if n == 1:
        return P[0].copy()
    lam = np.full(n, 1.0 / n)

    def norm_sq(l):
        x = l @ P
        return float(x @ x)

    best = norm_sq(lam)
    step = 0.5
    while step >= resolution:
        improved = True
        while improved:
            improved = False
            for i, j in itertools.permutations(range(n), 2):
                d = min(step, lam[i])
                if d <= 0:
                    continue
                trial = lam.copy()
                trial[i] -= d
                trial[j] += d
                val = norm_sq(trial)
                if val < best:
                    lam, best, improved = trial, val, True
        step *= 0.5
    return lam @ P


# --------------------------------------------------------------------------
# unary passive-aggressive learning with the SVDD loss

UNARY_VARIANTS = ("PA0", "PA1", "PA2")


@dataclass(frozen=True, eq=False)
class UnaryPaState:
    """Center of the enclosing sphere plus update settings.

    With ``auto_radius`` the center carries one extra component, initialised
    to ``R_max``; the data gets a zero appended and the sphere in the
    extended space has radius ``R_max``.
    """

    center: np.ndarray
    R: float = 1.0
    C: float = 1.0
    variant: str = "PA0"
    auto_radius: bool = False
    n_skipped: int = 0

    def __post_init__(self):
        if self.variant not in UNARY_VARIANTS:
            raise ValueError(f"variant must be one of {UNARY_VARIANTS}")
        if not self.R > 0:
            raise ValueError("radius must be positive")
        if self.variant != "PA0" and not self.C > 0:
            raise ValueError("C must be positive")
        if self.auto_radius and abs(self.center[-1]) > self.R:
            raise ValueError("extra center component exceeds R_max")

    @classmethod
    def initial(cls, dimension: int, R: float, C: float = 1.0, variant: str = "PA0",
                auto_radius: bool = False) -> "UnaryPaState":
        c = np.zeros(dimension + (1 if auto_radius else 0))
        if auto_radius:
            c[-1] = R
        return cls(center=c, R=R, C=C, variant=variant, auto_radius=auto_radius)

    @property
    def effective_radius(self) -> float:
        if not self.auto_radius:
            return self.R
        return math.sqrt(max(self.R**2 - self.center[-1] ** 2, 0.0))

    @property
    def data_center(self) -> np.ndarray:
        return self.center[:-1] if self.auto_radius else self.center

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64).ravel()
        return bool(np.linalg.norm(self.data_center - x) <= self.effective_radius)


def svdd_loss(c: np.ndarray, x: np.ndarray, R: float) -> float:
    d = float(np.linalg.norm(c - x))
    return 0.0 if d <= R else d - R


def unary_pa_update(state: UnaryPaState, x) -> UnaryPaState:
    x = np.asarray(x, dtype=np.float64).ravel()
    if state.auto_radius:
        x = np.append(x, 0.0)
    if x.shape != state.center.shape:
        raise ValueError("dimension mismatch")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite sample")
    diff = x - state.center
    dist = float(np.linalg.norm(diff))
    if dist == 0.0:
        return _replace(state, n_skipped=state.n_skipped + 1)
    loss = svdd_loss(state.center, x, state.R)
    if loss == 0.0:
        return state
    if state.variant == "PA0":
        alpha = loss
    elif state.variant == "PA1":
        alpha = min(state.C, loss)
    else:
        alpha = loss / (1.0 + 1.0 / (2.0 * state.C))
    # alpha < dist, so the extra component shrinks towards 0 and stays <= R_max
    return _replace(state, center=state.center + alpha * diff / dist)


def _replace(state, **changes):
    from dataclasses import replace
    return replace(state, **changes)


# --------------------------------------------------------------------------
# SVDD and its relatives


@dataclass(frozen=True, eq=False)
class SvddModel:
    center: np.ndarray
    radius: float
    C: float
    slacks: np.ndarray | None = None

    def __post_init__(self):
        if not self.radius >= 0:
            raise ValueError("radius must be nonnegative")

    def decision_function(self, X) -> np.ndarray:
        """``R'^2 - |x - c|^2``; positive strictly inside the sphere."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        d = X - self.center
        return self.radius**2 - np.einsum("ij,ij->i", d, d)

    def predict(self, X) -> np.ndarray:
        return sign_decision(self.decision_function(X))


def svdd_from_nuoc(w, rho: float, t, nu: float, n: int) -> SvddModel:
    """SVDD equivalent to a nu-one-class SVM on unit-norm data."""
    w = np.asarray(w, dtype=np.float64)
    r_sq = float(w @ w) + 1.0 - 2.0 * rho
    if r_sq < 0:
        raise ValueError(f"squared radius {r_sq:.3g} < 0: data presumably not unit-norm")
    if not (0 < nu <= 1 and n >= 1):
        raise ValueError("nu must lie in (0, 1] and n >= 1")
    return SvddModel(center=w.copy(), radius=math.sqrt(r_sq), C=1.0 / (nu * n),
                     slacks=2.0 * np.asarray(t, dtype=np.float64))


def nuoc_from_svdd(model: SvddModel, n: int):
    """Inverse of :func:`svdd_from_nuoc`: returns ``(w, rho, t, nu)``."""
    w = model.center.copy()
    rho = (float(w @ w) + 1.0 - model.radius**2) / 2.0
    t = None if model.slacks is None else model.slacks / 2.0
    return w, rho, t, 1.0 / (model.C * n)


def scale_nuoc_to_csvm(w, t, nu: float, rho: float, n: int):
    """Rescale a nu-one-class SVM solution to the C-parameterised form.

    Returns ``(w_bar, t_bar, C_bar)``; ``sign(<w_bar, x> - 2)`` equals
    ``sign(<w, x> - rho)``.
    """
    if not rho > 0:
        raise ValueError("rho <= 0: no equivalent C-parameterised model")
    w = np.asarray(w, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    return 2.0 * w / rho, 2.0 * t / rho, 2.0 / (nu * n * rho)


def csvm_to_nuoc(w_bar, t_bar, C_bar: float, n: int, rho: float):
    """Inverse of :func:`scale_nuoc_to_csvm` for a chosen ``rho``: ``(w, t, nu)``."""
    if not rho > 0:
        raise ValueError("rho must be positive")
    w_bar = np.asarray(w_bar, dtype=np.float64)
    t_bar = np.asarray(t_bar, dtype=np.float64)
    return rho * w_bar / 2.0, rho * t_bar / 2.0, 2.0 / (C_bar * n * rho)
