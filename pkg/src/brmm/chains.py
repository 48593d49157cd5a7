"""Processing chains ending in a scalar decision, and their backtransformation.

A chain ``F = F_k o ... o F_0`` maps an input vector to one real number.
For affine chains the whole map collapses to ``b0 + <w0, x>``; ``w0`` is
found either from the product of homogeneous matrices or by probing the
chain with the zero vector and the unit vectors.  For general
differentiable chains the local weights are the gradient at an anchor
point, estimated by finite differences.

Features with a time x sensor structure are stored flattened in row-major
order (index ``g * n_sensors + h``); reshaping happens only on output.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

AFFINE_KINDS = ("standardization", "temporal_fir", "decimation", "spatial_filter",
                "feature_scaling", "linear_decision", "generic_affine")
# nodes acting on each feature separately keep the layout of their input
ELEMENTWISE_KINDS = ("standardization", "feature_scaling")


@dataclass(frozen=True, eq=False)
class AffineNode:
    """``x -> A x + T``."""

    A: np.ndarray
    T: np.ndarray
    kind: str = "generic_affine"
    out_shape: tuple[int, int] | None = None

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        T = np.asarray(self.T, dtype=np.float64).ravel()
        if T.shape[0] != A.shape[0]:
            raise ValueError(f"T has length {T.shape[0]}, A has {A.shape[0]} rows")
        if self.kind not in AFFINE_KINDS:
            raise ValueError(f"unknown node kind {self.kind!r}")
        if self.kind == "linear_decision" and A.shape[0] != 1:
            raise ValueError("linear decision node must have output dimension 1")
        A.setflags(write=False)
        T.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "T", T)

    @property
    def in_dim(self) -> int:
        return self.A.shape[1]

    @property
    def out_dim(self) -> int:
        return self.A.shape[0]

    def homogeneous(self) -> np.ndarray:
        """``[[A, T], [0, 1]]``."""
        M = np.zeros((self.out_dim + 1, self.in_dim + 1))
        M[:-1, :-1] = self.A
        M[:-1, -1] = self.T
        M[-1, -1] = 1.0
        return M

    def __call__(self, x) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=np.float64) + self.T


@dataclass(frozen=True, eq=False)
class DifferentiableNode:
    """Arbitrary (assumed smooth) map with declared dimensions."""

    fn: Callable[[np.ndarray], np.ndarray]
    in_dim: int
    out_dim: int
    smooth: bool = True
    name: str = "differentiable"
    out_shape: tuple[int, int] | None = None

    def __call__(self, x) -> np.ndarray:
        return np.atleast_1d(np.asarray(self.fn(np.asarray(x, dtype=np.float64)),
                                        dtype=np.float64))

    @classmethod
    def from_model(cls, model, dimension: int | None = None) -> "DifferentiableNode":
        """Wrap a fitted model's decision function as a terminal node."""
        dim = dimension if dimension is not None else model.support_X.shape[1]
        return cls(fn=lambda x: model.decision_function(x[None, :]), in_dim=dim, out_dim=1,
                   name=type(model).__name__)


Node = AffineNode | DifferentiableNode


@dataclass(frozen=True, eq=False)
class ProcessingChain:
    """Ordered nodes; the last one must be scalar-valued.

    ``input_shape`` is optional ``(n_time, n_sensors)`` metadata.
    """

    nodes: tuple
    input_shape: tuple[int, int] | None = None

    def __post_init__(self):
        nodes = tuple(self.nodes)
        if not nodes:
            raise ValueError("chain needs at least one node")
        for i in range(len(nodes) - 1):
            if nodes[i].out_dim != nodes[i + 1].in_dim:
                raise ValueError(f"node {i} outputs {nodes[i].out_dim} values, node {i + 1} "
                                 f"expects {nodes[i + 1].in_dim}")
        if nodes[-1].out_dim != 1:
            raise ValueError("terminal node must be scalar-valued")
        if self.input_shape is not None and int(np.prod(self.input_shape)) != nodes[0].in_dim:
            raise ValueError("input_shape does not match the input dimension")
        object.__setattr__(self, "nodes", nodes)

    @property
    def in_dim(self) -> int:
        return self.nodes[0].in_dim

    @property
    def is_affine(self) -> bool:
        return all(isinstance(n, AffineNode) for n in self.nodes)

    @property
    def preprocessing(self) -> tuple:
        return self.nodes[:-1]

    def __call__(self, x) -> float:
        return chain_apply(self, x)

    def stage_shape(self, stage: int) -> tuple[int, int] | None:
        if stage == 0:
            return self.input_shape
        node = self.nodes[stage - 1]
        if node.out_shape is None and getattr(node, "kind", None) in ELEMENTWISE_KINDS:
            return self.stage_shape(stage - 1)
        return node.out_shape


def chain_apply_until(chain: ProcessingChain, x, stage: int) -> np.ndarray:
    """Output ``x^(stage)`` after the first ``stage`` nodes."""
    if not 0 <= stage <= len(chain.nodes):
        raise ValueError(f"stage must lie in [0, {len(chain.nodes)}]")
    x = np.asarray(x, dtype=np.float64).ravel()
    for i, node in enumerate(chain.nodes[:stage]):
        if x.shape[0] != node.in_dim:
            raise ValueError(f"dimension mismatch at node {i}: got {x.shape[0]}, "
                             f"expected {node.in_dim}")
        x = node(x)
    return x


def chain_apply(chain: ProcessingChain, x) -> float:
    return float(chain_apply_until(chain, x, len(chain.nodes))[0])


@dataclass(frozen=True, eq=False)
class BacktransResult:
    """Input-domain weights of a chain.

    ``stage_weights[l]`` are the weights with respect to ``x^(l)``.  For the
    numeric case ``local`` is True and ``anchor`` holds the point of
    linearisation; ``offset`` is then ``None``.
    """

    weights: np.ndarray
    offset: float | None
    stage_weights: tuple = ()
    local: bool = False
    anchor: np.ndarray | None = None
    shape: tuple[int, int] | None = None

    def reshaped(self) -> np.ndarray:
        if self.shape is None:
            return self.weights
        return self.weights.reshape(self.shape)

    def stage_reshaped(self, chain: ProcessingChain, stage: int) -> np.ndarray:
        w = self.stage_weights[stage]
        shape = chain.stage_shape(stage)
        return w if shape is None else w.reshape(shape)


def backtransform_affine_analytic(chain: ProcessingChain) -> BacktransResult:
    """Multiply homogeneous matrices from the decision node backwards."""
    if not chain.is_affine:
        raise ValueError("analytic backtransformation needs an all-affine chain")
    B = chain.nodes[-1].homogeneous()[:1]
    stages = [B]
    for node in reversed(chain.nodes[:-1]):
        B = B @ node.homogeneous()
        stages.append(B)
    stages.reverse()
    weights = tuple(s[0, :-1].copy() for s in stages)
    return BacktransResult(weights=weights[0], offset=float(stages[0][0, -1]),
                           stage_weights=weights, shape=chain.input_shape)


def _as_function(chain) -> Callable[[np.ndarray], float]:
    if isinstance(chain, ProcessingChain):
        return lambda x: chain_apply(chain, x)
    return lambda x: float(np.asarray(chain(x)).ravel()[0])


def backtransform_affine_probe(chain, input_dim: int | None = None, *,
                               check_tol: float = 1e-8) -> BacktransResult:
    """Offset ``F(0)`` and weights ``F(e_i) - F(0)`` by probing a black box.

    A spot check ``F(2 e_1) - F(0) = 2 w_1`` guards against non-affine maps.
    """
    F = _as_function(chain)
    if input_dim is None:
        input_dim = chain.in_dim
    shape = chain.input_shape if isinstance(chain, ProcessingChain) else None
    f0 = F(np.zeros(input_dim))
    w = np.empty(input_dim)
    e = np.zeros(input_dim)
    for i in range(input_dim):
        e[i] = 1.0
        w[i] = F(e) - f0
        e[i] = 0.0
    e[0] = 2.0
    spot = F(e) - f0
    if abs(spot - 2.0 * w[0]) > check_tol * (1.0 + abs(spot) + abs(f0)):
        raise ValueError("non-affine chain: probe spot check failed")
    return BacktransResult(weights=w, offset=float(f0), stage_weights=(w,), shape=shape)


FD_ORDERS = ("two_point", "four_point")
# relative step per stencil: sqrt(eps) for the forward difference, eps^(1/5)
# for the fourth-order stencil (whose truncation error is O(h^4))
FD_CONSTANTS = {"two_point": 1.5e-8, "four_point": float(np.finfo(float).eps) ** 0.2}
FD_CONSTANT = FD_CONSTANTS["two_point"]


def finite_difference_step(x_i: float, constant: float = FD_CONSTANT,
                           floor: float = 0.0) -> float:
    """Relative step, rounded so that ``x_i + h`` is exactly representable.

    ``floor > 0`` uses ``max(|x_i|, floor)`` as the scale, which avoids tiny
    steps for components close to (but not exactly) zero.
    """
    scale = max(abs(x_i), floor)
    h = constant * scale if scale != 0 else constant
    return (x_i + h) - x_i


def backtransform_numeric(chain, x0, order: str = "two_point", *,
                          step_constant: float | None = None,
                          step_floor: float = 0.0) -> BacktransResult:
    """Local weights: finite-difference gradient of the chain at ``x0``.

    The step is ``step_constant * |x0_i|`` (or ``step_constant`` when
    ``x0_i = 0``); the default constant depends on ``order``.  A positive
    ``step_floor`` bounds the scale of the step from below, see
    :func:`finite_difference_step`.
    """
    if order not in FD_ORDERS:
        raise ValueError(f"order must be one of {FD_ORDERS}")
    if step_constant is None:
        step_constant = FD_CONSTANTS[order]
    F = _as_function(chain)
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    shape = chain.input_shape if isinstance(chain, ProcessingChain) else None
    grad = np.empty(x0.shape[0])

    def at(i, dx):
        x = x0.copy()
        x[i] += dx
        v = F(x)
        if not np.isfinite(v):
            raise ValueError(f"non-finite chain output near x0 (component {i})")
        return v

    f0 = F(x0)
    if not np.isfinite(f0):
        raise ValueError("non-finite chain output at x0")
    for i in range(x0.shape[0]):
        h = finite_difference_step(x0[i], step_constant, step_floor)
        if order == "two_point":
            grad[i] = (at(i, h) - f0) / h
        else:
            grad[i] = (at(i, -h) - 8.0 * at(i, -h / 2) + 8.0 * at(i, h / 2) - at(i, h)) / (6.0 * h)
    return BacktransResult(weights=grad, offset=None, stage_weights=(grad,), local=True,
                           anchor=x0.copy(), shape=shape)


def backtransform(chain: ProcessingChain, x0=None, order: str = "two_point") -> BacktransResult:
    """Analytic result for affine chains, numeric (at ``x0``) otherwise."""
    if chain.is_affine:
        return backtransform_affine_analytic(chain)
    if x0 is None:
        raise ValueError("non-affine chain: an anchor point x0 is required")
    return backtransform_numeric(chain, x0, order)


# --------------------------------------------------------------------------
# interpretation helpers


def covariance_forward_model(weights, data) -> np.ndarray:
    """Pattern ``Cov(X) w`` with the unbiased sample covariance.

    The data are used as given; centre them first if the zero-mean
    assumption matters for the interpretation.
    """
    X = np.asarray(getattr(data, "X", data), dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64).ravel()
    if X.shape[0] < 2:
        raise ValueError("need at least 2 samples for a covariance")
    if X.shape[1] != w.shape[0]:
        raise ValueError("dimension mismatch")
    return np.atleast_2d(np.cov(X, rowvar=False, ddof=1)) @ w


REINIT_MODES = ("consistent", "literal")


def reinit_classifier(preprocessing, w0, b_sum: float, mode: str = "consistent") -> np.ndarray:
    """Classifier weights after swapping the affine preprocessing.

    ``w0 = sum alpha_i y_i x_i`` and ``b_sum = sum alpha_i y_i`` are kept by
    the online learner in the raw input domain.  ``consistent`` returns
    ``A' w0 + T' b_sum`` from two evaluations of the new preprocessing;
    ``literal`` returns ``F(w0) - F(0) b_sum``.
    """
    if mode not in REINIT_MODES:
        raise ValueError(f"mode must be one of {REINIT_MODES}")
    w0 = np.asarray(w0, dtype=np.float64).ravel()

    def F(x):
        out = preprocessing(x)
        if np.ndim(out) == 0:
            raise ValueError("preprocessing must be vector-valued, not a full chain")
        return np.asarray(out, dtype=np.float64)

    f_w, f_0 = F(w0), F(np.zeros_like(w0))
    if mode == "literal":
        return f_w - f_0 * b_sum
    return (f_w - f_0) + f_0 * b_sum


RANKING_MODES = ("classifier_weights", "backtrans_stage", "spatial_filter")


@dataclass(frozen=True)
class SensorRanking:
    """Sensors in elimination order (lowest score first)."""

    order: tuple[int, ...]
    scores: np.ndarray


def sensor_ranking(weights, mode: str = "classifier_weights") -> SensorRanking:
    """Score each sensor by the sum of absolute weights in its column.

    ``weights`` is a time x sensor matrix (``classifier_weights``), a
    :class:`BacktransResult` with shape metadata (``backtrans_stage``), or a
    filter matrix whose columns belong to sensors (``spatial_filter``).
    """
    if mode not in RANKING_MODES:
        raise ValueError(f"mode must be one of {RANKING_MODES}")
    if isinstance(weights, BacktransResult):
        W = weights.reshaped()
    else:
        W = np.asarray(weights, dtype=np.float64)
    W = np.atleast_2d(W)
    if W.size == 0:
        raise ValueError("empty weight matrix")
    scores = np.abs(W).sum(axis=0)
    order = tuple(int(i) for i in np.argsort(scores, kind="stable"))
    return SensorRanking(order=order, scores=scores)


def select_sensors(X: np.ndarray, shape: tuple[int, int], sensors: Sequence[int]) -> np.ndarray:
    """Columns of flattened time x sensor data that belong to ``sensors``."""
    n_time, n_sensors = shape
    cols = [g * n_sensors + h for g in range(n_time) for h in sensors]
    return np.asarray(X)[:, cols]


@dataclass(frozen=True)
class EliminationResult:
    order: tuple[int, ...]
    retained: tuple[tuple[int, ...], ...]
    scores: tuple = field(default_factory=tuple)


def recursive_backward_elimination(data, chain_builder, shape: tuple[int, int],
                                   target_count: int, ranking_mode: str = "backtrans_stage",
                                   anchor=None) -> EliminationResult:
    """Drop the lowest-scored sensor and refit until ``target_count`` remain.

    ``chain_builder(dataset, sensors)`` must return a fitted
    :class:`ProcessingChain` on the data restricted to ``sensors``.  Non-affine
    chains are linearised at ``anchor`` (default: feature mean).
    """
    from .core import Dataset

    n_time, n_sensors = shape
    if not 1 <= target_count <= n_sensors:
        raise ValueError("target_count must lie in [1, number of sensors]")
    retained = list(range(n_sensors))
    order, history, all_scores = [], [tuple(retained)], []
    while len(retained) > target_count:
        sub = Dataset(select_sensors(data.X, shape, retained), data.y)
        chain = chain_builder(sub, tuple(retained))
        x0 = sub.X.mean(axis=0) if anchor is None else anchor
        bt = backtransform(chain, x0)
        W = bt.weights.reshape(n_time, len(retained))
        ranking = sensor_ranking(W, ranking_mode if ranking_mode != "backtrans_stage"
                                 else "classifier_weights")
        drop = retained[ranking.order[0]]
        all_scores.append(ranking.scores)
        order.append(drop)
        retained.remove(drop)
        history.append(tuple(retained))
    return EliminationResult(order=tuple(order), retained=tuple(history),
                             scores=tuple(all_scores))


# --------------------------------------------------------------------------
# node constructors


def standardization_node(mean, std) -> AffineNode:
    mean = np.asarray(mean, dtype=np.float64).ravel()
    std = np.asarray(std, dtype=np.float64).ravel()
    if np.any(std <= 0):
        raise ValueError("standard deviations must be positive")
    return AffineNode(np.diag(1.0 / std), -mean / std, kind="standardization")


def feature_scaling_node(scale, offset=None) -> AffineNode:
    scale = np.asarray(scale, dtype=np.float64).ravel()
    offset = np.zeros_like(scale) if offset is None else np.asarray(offset, dtype=np.float64)
    return AffineNode(np.diag(scale), offset, kind="feature_scaling")


def _fir_matrix(coeffs, n_time: int) -> np.ndarray:
    # causal filter with zero initial state: y[g] = sum_k c[k] x[g - k]
    c = np.asarray(coeffs, dtype=np.float64).ravel()
    M = np.zeros((n_time, n_time))
    for k, ck in enumerate(c):
        if k < n_time:
            M += ck * np.eye(n_time, k=-k)
    return M


def temporal_fir_node(coeffs, n_time: int, n_sensors: int) -> AffineNode:
    A = np.kron(_fir_matrix(coeffs, n_time), np.eye(n_sensors))
    return AffineNode(A, np.zeros(A.shape[0]), kind="temporal_fir",
                      out_shape=(n_time, n_sensors))


def decimation_node(factor: int, n_time: int, n_sensors: int, coeffs=None) -> AffineNode:
    """Keep every ``factor``-th time step, optionally after a FIR low-pass."""
    if factor < 1:
        raise ValueError("decimation factor must be >= 1")
    keep = np.arange(0, n_time, factor)
    S = np.eye(n_time)[keep]
    if coeffs is not None:
        S = S @ _fir_matrix(coeffs, n_time)
    A = np.kron(S, np.eye(n_sensors))
    return AffineNode(A, np.zeros(A.shape[0]), kind="decimation",
                      out_shape=(keep.shape[0], n_sensors))


def spatial_filter_node(filters, n_time: int) -> AffineNode:
    """``filters`` is ``n_sensors x n_pseudo``; each time step is mixed alike."""
    Wf = np.atleast_2d(np.asarray(filters, dtype=np.float64))
    A = np.kron(np.eye(n_time), Wf.T)
    return AffineNode(A, np.zeros(A.shape[0]), kind="spatial_filter",
                      out_shape=(n_time, Wf.shape[1]))


def linear_decision_node(w, b: float = 0.0) -> AffineNode:
    w = np.asarray(w, dtype=np.float64).ravel()
    return AffineNode(w[None, :], np.array([float(b)]), kind="linear_decision")


def translation_node(T) -> AffineNode:
    T = np.asarray(T, dtype=np.float64).ravel()
    return AffineNode(np.eye(T.shape[0]), T, kind="generic_affine")
