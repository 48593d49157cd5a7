"""Online learners obtained by running the dual update once per sample.

Each incoming sample gets fresh zero duals, one coordinate step is taken
and the duals are dropped again.  For the binary models this reproduces
the passive-aggressive algorithms; for the one-class models it gives the
online one-class SVM / BRMM / RFDA family.

Models are immutable: every update returns a new model.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _cd
from .core import INF

PA_VARIANTS = ("pa_hard", "pa1", "pa2")
BRMM_VARIANTS = ("brmm_l1", "brmm_l2", "brmm_hard")
OC_VARIANTS = ("oc_l1", "oc_l2", "oc_hard", "oc_rfda_l1", "oc_rfda_l2")
VARIANTS = PA_VARIANTS + BRMM_VARIANTS + OC_VARIANTS


@dataclass(frozen=True, eq=False)
class OnlineLinearModel:
    """Linear online model ``f(x) = <w, x> + b``.

    ``b`` stays 0 for the passive-aggressive variants.  For the binary BRMM
    the offset is learned through the homogeneous coordinate ``(x, 1)``
    (weighted by ``1/H``) unless ``homogeneous`` is False.  The one-class
    variants have the fixed offset -1 and decide by ``<w, x> - 2``.
    ``w = None`` means zeros of the dimension of the first sample.
    """

    variant: str = "pa1"
    w: np.ndarray | None = None
    b: float = 0.0
    C: float = 1.0
    C_outer: float | None = None
    R: float = INF
    H: float = 1.0
    gamma: float = 1.0
    homogeneous: bool = True
    n_skipped: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if not self.C > 0:
            raise ValueError("C must be positive")
        if not self.R >= 1:
            raise ValueError("R must be >= 1")
        if not 0 < self.gamma <= 1:
            raise ValueError("forgetting factor must lie in (0, 1]")
        if self.variant in OC_VARIANTS and self.b != -1.0:
            object.__setattr__(self, "b", -1.0)
        if self.w is not None:
            object.__setattr__(self, "w", np.asarray(self.w, dtype=np.float64))

    @property
    def is_oneclass(self) -> bool:
        return self.variant in OC_VARIANTS

    @property
    def dimension(self) -> int | None:
        return None if self.w is None else self.w.shape[0]

    def _weights_for(self, x: np.ndarray) -> np.ndarray:
        if self.w is None:
            return np.zeros(x.shape[0])
        if self.w.shape[0] != x.shape[0]:
            raise ValueError(f"dimension mismatch: model {self.w.shape[0]}, sample {x.shape[0]}")
        return self.w

    def score(self, x) -> float:
        x = _vector(x)
        w = self._weights_for(x)
        if self.is_oneclass:
            return float(w @ x)
        return float(w @ x) + self.b

    def decision_function(self, x) -> float:
        s = self.score(x)
        return s - 2.0 if self.is_oneclass else s

    def predict(self, x) -> int:
        return 1 if self.decision_function(x) > 0 else -1


def _vector(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).ravel()
    if not np.isfinite(x).all():
        raise ValueError("non-finite sample")
    return x


def pa_step(model: OnlineLinearModel, x, y) -> tuple[float, float]:
    """Closed-form passive-aggressive factor ``delta`` and the hinge loss."""
    x = _vector(x)
    w = model._weights_for(x)
    loss = max(0.0, 1.0 - y * float(w @ x))
    sq = float(x @ x)
    if loss == 0.0 or sq == 0.0:
        return 0.0, loss
    if model.variant == "pa_hard":
        return loss / sq, loss
    if model.variant == "pa1":
        return min(model.C, loss / sq), loss
    return loss / (sq + 1.0 / (2.0 * model.C)), loss


def pa_update(model: OnlineLinearModel, x, y, variant: str | None = None,
              C: float | None = None) -> OnlineLinearModel:
    """PA / PA-I / PA-II update without offset.

    ``variant`` and ``C`` override the model's settings for this call.
    """
    if variant is not None or C is not None:
        model = replace(model, variant=variant or model.variant,
                        C=model.C if C is None else C)
    if model.variant not in PA_VARIANTS:
        raise ValueError(f"pa_update needs one of {PA_VARIANTS}")
    x = _vector(x)
    w = model._weights_for(x)
    if float(x @ x) == 0.0:
        return replace(model, w=w.copy(), n_skipped=model.n_skipped + 1)
    delta, _ = pa_step(model, x, y)
    return replace(model, w=model.gamma * w + delta * y * x, b=model.gamma * model.b)


def brmm_step(model: OnlineLinearModel, x, y) -> tuple[float, float, float]:
    """Fresh-dual coordinate step: returns ``(alpha, beta, q)``."""
    x = _vector(x)
    w = model._weights_for(x)
    ow = 1.0 / model.H if model.homogeneous else 0.0
    b = model.b if model.homogeneous else 0.0
    q = float(x @ x) + ow
    if q <= 0.0:
        return 0.0, 0.0, q
    C_out = model.C if model.C_outer is None else model.C_outer
    if model.variant == "brmm_l2":
        cap_a = cap_b = INF
        ra, rb = 1.0 / (2.0 * model.C), 1.0 / (2.0 * C_out)
    elif model.variant == "brmm_hard":
        cap_a = cap_b = INF
        ra = rb = 0.0
    else:
        cap_a, cap_b, ra, rb = model.C, C_out, 0.0, 0.0
    g = y * (float(w @ x) + b)
    alpha, beta, _ = _cd.coord_step(0.0, 0.0, g, q, 1.0, model.R, cap_a, cap_b, ra, rb)
    # the bands g < 1 and g > R are disjoint for R >= 1
    assert alpha == 0.0 or beta == 0.0
    return alpha, beta, q


def online_brmm_update(model: OnlineLinearModel, x, y) -> OnlineLinearModel:
    if model.variant not in BRMM_VARIANTS:
        raise ValueError(f"online_brmm_update needs one of {BRMM_VARIANTS}")
    x = _vector(x)
    w = model._weights_for(x)
    alpha, beta, q = brmm_step(model, x, y)
    if q <= 0.0:
        return replace(model, w=w.copy(), n_skipped=model.n_skipped + 1)
    d = (alpha - beta) * y
    b = model.gamma * model.b
    if model.homogeneous:
        b += d / model.H
    return replace(model, w=model.gamma * w + d * x, b=b)


def oneclass_step(model: OnlineLinearModel, x) -> tuple[float, float]:
    """Closed-form ``(alpha, beta)`` of the online one-class variants."""
    x = _vector(x)
    w = model._weights_for(x)
    s = float(w @ x)
    sq = float(x @ x)
    if sq == 0.0:
        return 0.0, 0.0
    v, C, R = model.variant, model.C, model.R
    if v == "oc_rfda_l1":
        step = min(max((2.0 - s) / sq, -C), C)
        return max(step, 0.0), max(-step, 0.0)
    if v == "oc_rfda_l2":
        step = (2.0 - s) / (sq + 1.0 / C)
        return max(step, 0.0), max(-step, 0.0)
    denom = sq + 1.0 / C if v == "oc_l2" else sq
    alpha = max(0.0, (2.0 - s) / denom)
    beta = 0.0 if math.isinf(R) else max(0.0, (s - (R + 1.0)) / denom)
    if v == "oc_l1":
        alpha, beta = min(alpha, C), min(beta, C)
    return alpha, beta


def online_oneclass_update(model: OnlineLinearModel, x) -> OnlineLinearModel:
    if not model.is_oneclass:
        raise ValueError(f"online_oneclass_update needs one of {OC_VARIANTS}")
    x = _vector(x)
    w = model._weights_for(x)
    if float(x @ x) == 0.0:
        return replace(model, w=w.copy(), n_skipped=model.n_skipped + 1)
    alpha, beta = oneclass_step(model, x)
    return replace(model, w=model.gamma * w + (alpha - beta) * x)


def update(model: OnlineLinearModel, x, y=1) -> OnlineLinearModel:
    """Dispatch to the update rule of the model's variant."""
    if model.variant in PA_VARIANTS:
        return pa_update(model, x, y)
    if model.variant in BRMM_VARIANTS:
        return online_brmm_update(model, x, y)
    return online_oneclass_update(model, x)


def forgetting_update(model: OnlineLinearModel, x, y, gamma: float) -> OnlineLinearModel:
    """``w' = gamma w + delta y x`` with ``delta`` computed at the old ``w``."""
    if not 0 < gamma <= 1:
        raise ValueError("forgetting factor must lie in (0, 1]")
    out = update(replace(model, gamma=gamma), x, y)
    return replace(out, gamma=model.gamma)


PROTOCOLS = ("test_then_train", "train_only")


def stream_run(model: OnlineLinearModel, samples, protocol: str = "test_then_train"):
    """Feed ``(x, y)`` pairs through the model.

    ``test_then_train`` records ``(decision value, label)`` for each sample
    before it is learned; ``train_only`` records nothing.
    """
    if protocol not in PROTOCOLS:
        raise ValueError(f"protocol must be one of {PROTOCOLS}")
    trace = []
    for x, y in samples:
        x = _vector(x)
        if model.w is not None and x.shape[0] != model.w.shape[0]:
            raise ValueError(f"dimension drift: expected {model.w.shape[0]}, got {x.shape[0]}")
        if protocol == "test_then_train":
            trace.append((model.decision_function(x), int(y)))
        model = update(model, x, y)
    return model, trace
