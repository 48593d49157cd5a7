"""Shared domain types: datasets, kernels, losses, hyperparameters."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Mapping, NamedTuple

import numpy as np

#: Distinguished "no bound" value for C, C_outer and R.  Code paths test
#: ``math.isinf`` so border cases (skip beta updates, no cap) are exact.
INF = math.inf

LOSS_ORDERS = ("L1", "L2", "hard")


class Sample(NamedTuple):
    features: np.ndarray
    label: float


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable set of feature vectors with labels (or real targets).

    ``y`` holds labels in {-1, +1} for classification and arbitrary reals for
    the boundary estimator; use :meth:`require_binary` / :meth:`require_unary`
    at the entry of a fit to enforce the label contract.
    """

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("dataset must contain at least one sample")
        if X.shape[0] != y.shape[0]:
            raise ValueError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        if not np.all(np.isfinite(X)):
            raise ValueError("non-finite feature values")
        if not np.all(np.isfinite(y)):
            raise ValueError("non-finite labels")
        object.__setattr__(self, "X", _frozen(X))
        object.__setattr__(self, "y", _frozen(y))

    @classmethod
    def from_samples(cls, samples) -> "Dataset":
        samples = list(samples)
        return cls(np.array([s[0] for s in samples]), np.array([s[1] for s in samples]))

    def __len__(self) -> int:
        return self.X.shape[0]

    def __iter__(self) -> Iterator[Sample]:
        for x, y in zip(self.X, self.y):
            yield Sample(x, y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dimension(self) -> int:
        return self.X.shape[1]

    @property
    def class_counts(self) -> dict[int, int]:
        labels, counts = np.unique(self.y, return_counts=True)
        return {int(l): int(c) for l, c in zip(labels, counts)}

    def subset(self, index) -> "Dataset":
        index = np.asarray(index, dtype=np.intp)
        return Dataset(self.X[index], self.y[index])

    def select_features(self, columns) -> "Dataset":
        return Dataset(self.X[:, list(columns)], self.y)

    def require_binary(self) -> None:
        if not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise ValueError("binary fit requires labels in {-1, +1}")
        counts = self.class_counts
        if counts.get(1, 0) == 0 or counts.get(-1, 0) == 0:
            raise ValueError("binary fit requires at least one sample per class")

    def require_unary(self) -> None:
        if not np.all(self.y == 1.0):
            raise ValueError("one-class fit requires all labels to be +1")


# --------------------------------------------------------------------------
# kernels

KERNELS = ("linear", "polynomial", "sigmoid", "rbf", "laplacian")


@dataclass(frozen=True)
class KernelSpec:
    """Kernel function and its hyperparameters.

    ``gamma``, ``coef0`` and ``degree`` parameterise the polynomial and
    sigmoid kernels ``(gamma <x, y> + coef0)^degree`` and
    ``tanh(gamma <x, y> + coef0)``; ``sigma`` is the width of the Gaussian
    (``exp(-|x-y|^2 / (2 sigma^2))``) and Laplacian (``exp(-|x-y| / sigma)``)
    kernels.
    """

    kind: str = "linear"
    gamma: float = 1.0
    coef0: float = 0.0
    degree: int = 3
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise ValueError(f"unknown kernel {self.kind!r}; expected one of {KERNELS}")
        if self.kind in ("rbf", "laplacian") and not self.sigma > 0:
            raise ValueError("kernel width sigma must be positive")
        if self.kind == "polynomial" and (int(self.degree) != self.degree or self.degree < 1):
            raise ValueError("polynomial degree must be an integer >= 1")

    @property
    def is_linear(self) -> bool:
        return self.kind == "linear"

    def __call__(self, x, y) -> float:
        return kernel_eval(self, x, y)

    def gram(self, X, Y=None) -> np.ndarray:
        """Kernel matrix ``K[i, j] = k(X[i], Y[j])``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        Y = X if Y is None else np.atleast_2d(np.asarray(Y, dtype=np.float64))
        if X.shape[1] != Y.shape[1]:
            raise ValueError(f"dimension mismatch: {X.shape[1]} vs {Y.shape[1]}")
        if self.kind in ("rbf", "laplacian"):
            sq = _squared_distances(X, Y)
            if self.kind == "rbf":
                return np.exp(-sq / (2.0 * self.sigma**2))
            return np.exp(-np.sqrt(sq) / self.sigma)
        dot = X @ Y.T
        if self.kind == "linear":
            return dot
        if self.kind == "polynomial":
            return (self.gamma * dot + self.coef0) ** int(self.degree)
        return np.tanh(self.gamma * dot + self.coef0)

    def diagonal(self, X) -> np.ndarray:
        """``k(x_j, x_j)`` for every row of ``X``."""
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.kind in ("rbf", "laplacian"):
            return np.ones(X.shape[0])
        sq = (X * X).sum(1)
        if self.kind == "linear":
            return sq
        if self.kind == "polynomial":
            return (self.gamma * sq + self.coef0) ** int(self.degree)
        return np.tanh(self.gamma * sq + self.coef0)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "gamma": self.gamma, "coef0": self.coef0,
                "degree": int(self.degree), "sigma": self.sigma}

    @classmethod
    def from_dict(cls, d: Mapping) -> "KernelSpec":
        return cls(**dict(d))


def _squared_distances(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    if X.shape[0] * Y.shape[0] * X.shape[1] <= 4_000_000:
        diff = X[:, None, :] - Y[None, :, :]
        return np.einsum("ijk,ijk->ij", diff, diff)
    # expansion loses a few digits near the diagonal but bounds memory
    sq = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
    return np.maximum(sq, 0.0)


def kernel_eval(k: KernelSpec, x, y) -> float:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"dimension mismatch: {x.shape[0]} vs {y.shape[0]}")
    if k.kind == "rbf":
        return math.exp(-float(np.sum((x - y) ** 2)) / (2.0 * k.sigma**2))
    if k.kind == "laplacian":
        return math.exp(-math.sqrt(float(np.sum((x - y) ** 2))) / k.sigma)
    dot = float(np.sum(x * y))
    if k.kind == "linear":
        return dot
    if k.kind == "polynomial":
        return (k.gamma * dot + k.coef0) ** int(k.degree)
    return math.tanh(k.gamma * dot + k.coef0)


# --------------------------------------------------------------------------
# losses

LOSSES = ("hinge", "squared_hinge", "laplacian", "gaussian", "eps_insensitive", "huber",
          "polynomial", "piecewise_polynomial", "lum", "zero_one", "logistic", "svdd")


@dataclass(frozen=True)
class LossSpec:
    kind: str = "hinge"
    epsilon: float = 0.0
    sigma: float = 1.0
    p: float = 2.0
    a: float = 1.0
    c: float = 0.0
    R: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSSES:
            raise ValueError(f"unknown loss {self.kind!r}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if not self.sigma > 0:
            raise ValueError("sigma must be > 0")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        if self.R < 0:
            raise ValueError("R must be >= 0")
        if self.kind == "lum" and not (self.a > 0 and self.c >= 0):
            raise ValueError("LUM loss needs a > 0 and c >= 0")


def loss_eval(l: LossSpec, score: float, label: float = 1.0) -> float:
    """Evaluate a margin loss at ``xi = 1 - label * score``.

    For ``kind="svdd"`` the ``score`` argument is the distance ``|c - x|``
    between hypersphere center and sample, and ``label`` is ignored.
    """
    if not (math.isfinite(score) and math.isfinite(label)):
        raise ValueError("loss arguments must be finite")
    kind = l.kind
    if kind == "svdd":
        return 0.0 if score <= l.R else score - l.R
    xi = 1.0 - label * score
    if kind == "hinge":
        return max(0.0, xi)
    if kind == "squared_hinge":
        return max(0.0, xi) ** 2
    if kind == "laplacian":
        return abs(xi)
    if kind == "gaussian":
        return 0.5 * xi * xi
    if kind == "eps_insensitive":
        return max(0.0, xi - l.epsilon, -xi - l.epsilon)
    if kind == "huber":
        if xi <= l.sigma:
            return xi * xi / (2.0 * l.sigma)
        return xi - 0.5 * l.sigma
    if kind == "polynomial":
        return abs(xi) ** l.p / l.p
    if kind == "piecewise_polynomial":
        if xi <= l.sigma:
            return abs(xi) ** l.p / (l.p * l.sigma ** (l.p - 1.0))
        return xi - l.sigma * (l.p - 1.0) / l.p
    if kind == "lum":
        if xi < l.c / (1.0 + l.c):
            return 1.0 - xi
        return (l.a / ((1.0 + l.c) * xi - l.c + l.a)) ** l.a / (1.0 + l.c)
    if kind == "zero_one":
        # misclassified iff label * score <= 0
        return 1.0 if xi >= 1.0 else 0.0
    # logistic, literal table form log(1 + exp(xi + 1))
    return float(np.logaddexp(0.0, xi + 1.0))


def sign_decision(score):
    """+1 for strictly positive scores, -1 otherwise (zero included)."""
    if np.ndim(score) == 0:
        if not math.isfinite(score):
            raise ValueError("score must be finite")
        return 1 if score > 0 else -1
    score = np.asarray(score, dtype=np.float64)
    return np.where(score > 0, 1, -1)


# --------------------------------------------------------------------------
# hyperparameters


@dataclass(frozen=True)
class HyperParams:
    """Regularisation and solver settings shared by the BRMM family.

    ``C_outer`` defaults to the (per-class) inner penalty, giving the
    symmetric "balanced" model.  ``loss_order="hard"`` means unbounded duals
    on both margins.
    """

    C: float = 1.0
    C_outer: float | None = None
    R: float = INF
    H: float = 1.0
    loss_order: str = "L1"
    per_class_C: Mapping[int, float] | None = None
    per_class_R: Mapping[int, float] | None = None
    max_iterations: int = 1000
    tolerance: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.loss_order not in LOSS_ORDERS:
            raise ValueError(f"loss_order must be one of {LOSS_ORDERS}")
        if not self.C > 0:
            raise ValueError("C must be positive")
        if self.C_outer is not None and not self.C_outer > 0:
            raise ValueError("C_outer must be positive")
        if not self.R >= 1:
            raise ValueError("R must be >= 1")
        if not (self.H > 0 and math.isfinite(self.H)):
            raise ValueError("H must be positive and finite")
        for c in (self.per_class_C or {}).values():
            if not c > 0:
                raise ValueError("per-class C must be positive")
        for r in (self.per_class_R or {}).values():
            if not r >= 1:
                raise ValueError("per-class R must be >= 1")
        if self.max_iterations < 1 or not self.tolerance > 0:
            raise ValueError("max_iterations >= 1 and tolerance > 0 required")

    def _per_sample(self, y: np.ndarray, base: float, table) -> np.ndarray:
        out = np.full(y.shape[0], float(base))
        for label, value in (table or {}).items():
            out[y == label] = value
        return out

    def sample_C(self, y) -> np.ndarray:
        if self.loss_order == "hard":
            return np.full(len(y), INF)
        return self._per_sample(np.asarray(y), self.C, self.per_class_C)

    def sample_C_outer(self, y) -> np.ndarray:
        if self.loss_order == "hard":
            return np.full(len(y), INF)
        if self.C_outer is None:
            return self.sample_C(y)
        return np.full(len(y), float(self.C_outer))

    def sample_R(self, y) -> np.ndarray:
        return self._per_sample(np.asarray(y), self.R, self.per_class_R)

    def replace(self, **changes) -> "HyperParams":
        from dataclasses import replace
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "C": self.C, "C_outer": self.C_outer, "R": self.R, "H": self.H,
            "loss_order": self.loss_order,
            "per_class_C": dict(self.per_class_C) if self.per_class_C else None,
            "per_class_R": dict(self.per_class_R) if self.per_class_R else None,
            "max_iterations": self.max_iterations, "tolerance": self.tolerance,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "HyperParams":
        d = dict(d)
        for key in ("per_class_C", "per_class_R"):
            if d.get(key):
                d[key] = {int(k): float(v) for k, v in d[key].items()}
        for key in ("C", "R", "H", "tolerance"):
            if key in d:
                d[key] = float(d[key])
        if d.get("C_outer") is not None:
            d["C_outer"] = float(d["C_outer"])
        return cls(**d)


@dataclass(frozen=True)
class FitInfo:
    """Solver bookkeeping attached to every fitted model."""

    iterations: int = 0
    converged: bool = True
    kkt_residual: float = 0.0
    skipped: int = 0
    notes: tuple[str, ...] = field(default_factory=tuple)
