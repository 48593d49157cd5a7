"""Confusion-matrix metrics, AUC, threshold tuning and seeded fold splits.

TPR, TNR, BA, WA, G-mean and AUC depend only on per-class rates and are
therefore insensitive to the class ratio; ACC, F-measure and MCC are not.
Every metric can be computed exactly in rationals (``exact=True``).
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

METRICS = ("TPR", "TNR", "ACC", "BA", "WA", "G_mean", "F_measure", "MCC")


@dataclass(frozen=True)
class ConfusionMatrix:
    TP: int
    FN: int
    TN: int
    FP: int

    def __post_init__(self):
        for name in ("TP", "FN", "TN", "FP"):
            v = getattr(self, name)
            if int(v) != v or v < 0:
                raise ValueError(f"{name} must be a nonnegative integer")
            object.__setattr__(self, name, int(v))

    @property
    def positives(self) -> int:
        return self.TP + self.FN

    @property
    def negatives(self) -> int:
        return self.TN + self.FP

    @property
    def total(self) -> int:
        return self.positives + self.negatives


def confusion(labels, predictions) -> ConfusionMatrix:
    """Counts with +1 as the positive class."""
    y = np.asarray(labels)
    p = np.asarray(predictions)
    if y.shape != p.shape:
        raise ValueError(f"length mismatch: {y.shape} vs {p.shape}")
    pos, pred_pos = y == 1, p == 1
    return ConfusionMatrix(TP=int(np.sum(pos & pred_pos)), FN=int(np.sum(pos & ~pred_pos)),
                           TN=int(np.sum(~pos & ~pred_pos)), FP=int(np.sum(~pos & pred_pos)))


def _exact_sqrt(q: Fraction):
    # rational square root when it exists, float otherwise
    rn, rd = math.isqrt(q.numerator), math.isqrt(q.denominator)
    if rn * rn == q.numerator and rd * rd == q.denominator:
        return Fraction(rn, rd)
    return math.sqrt(q)


def _ratio(a: int, b: int, what: str) -> Fraction:
    if b == 0:
        raise ValueError(f"{what} undefined: empty denominator")
    return Fraction(a, b)


def metric(cm: ConfusionMatrix, kind: str, w: float = 0.5, *, exact: bool = False):
    """Evaluate one metric; ``w`` is the positive-class weight of ``WA``.

    With ``exact=True`` the result is a :class:`~fractions.Fraction` (or a
    float where an irrational square root is involved).
    """
    if kind not in METRICS:
        raise ValueError(f"unknown metric {kind!r}; expected one of {METRICS}")
    if kind == "TPR":
        val = _ratio(cm.TP, cm.positives, "TPR (no positives)")
    elif kind == "TNR":
        val = _ratio(cm.TN, cm.negatives, "TNR (no negatives)")
    elif kind == "ACC":
        val = _ratio(cm.TP + cm.TN, cm.total, "ACC (empty set)")
    elif kind in ("BA", "WA", "G_mean"):
        tpr = _ratio(cm.TP, cm.positives, "TPR (no positives)")
        tnr = _ratio(cm.TN, cm.negatives, "TNR (no negatives)")
        if kind == "BA":
            val = (tpr + tnr) / 2
        elif kind == "WA":
            wf = Fraction(w)
            if not 0 <= wf <= 1:
                raise ValueError("class weight must lie in [0, 1]")
            val = wf * tpr + (1 - wf) * tnr
        else:
            val = _exact_sqrt(tpr * tnr)
    elif kind == "F_measure":
        val = _ratio(2 * cm.TP, 2 * cm.TP + cm.FP + cm.FN, "F-measure")
    else:
        prod = (cm.TP + cm.FP) * (cm.TP + cm.FN) * (cm.TN + cm.FP) * (cm.TN + cm.FN)
        if prod == 0:
            val = Fraction(0)
        else:
            root = _exact_sqrt(Fraction(prod))
            num = cm.TP * cm.TN - cm.FP * cm.FN
            val = Fraction(num) / root if isinstance(root, Fraction) else num / root
    if exact:
        return val
    return float(val)


@dataclass(frozen=True, eq=False)
class ScoredSet:
    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64).ravel()
        y = np.asarray(self.labels).ravel()
        if s.shape != y.shape:
            raise ValueError("scores and labels differ in length")
        if not np.all(np.isfinite(s)):
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y)

    def split(self) -> tuple[np.ndarray, np.ndarray]:
        pos = self.scores[self.labels == 1]
        neg = self.scores[self.labels != 1]
        if pos.size == 0 or neg.size == 0:
            raise ValueError("need at least one sample per class")
        return pos, neg


def _as_scored(s, labels=None) -> ScoredSet:
    if isinstance(s, ScoredSet):
        return s
    if labels is None:
        pairs = list(s)
        s = [p[0] for p in pairs]
        labels = [p[1] for p in pairs]
    return ScoredSet(s, labels)


def auc(s, labels=None, *, exact: bool = False):
    """Fraction of (positive, negative) pairs ranked correctly; ties count 1/2."""
    pos, neg = _as_scored(s, labels).split()
    neg_sorted = sorted(neg.tolist())
    twice = 0
    for p in pos.tolist():
        lo = bisect.bisect_left(neg_sorted, p)
        hi = bisect.bisect_right(neg_sorted, p)
        twice += 2 * lo + (hi - lo)
    val = Fraction(twice, 2 * pos.size * neg.size)
    return val if exact else float(val)


def optimize_threshold(s, labels=None, kind: str = "BA", w: float = 0.5):
    """Threshold ``theta`` maximising ``kind`` for ``sign(score - theta)``.

    Candidates are one point per interval of constant predictions: midpoints
    between consecutive distinct scores, the largest score (all negative)
    and the float just below the smallest score (all positive).  Ties are
    resolved towards the smallest ``|theta|``.
    """
    ss = _as_scored(s, labels)
    ss.split()
    scores, y = ss.scores, ss.labels
    u = np.unique(scores)
    cands = [float(np.nextafter(u[0], -np.inf))]
    cands += [float((a + b) / 2.0) for a, b in zip(u[:-1], u[1:])]
    cands.append(float(u[-1]))
    pos_sorted = np.sort(scores[y == 1])
    neg_sorted = np.sort(scores[y != 1])
    P, N = pos_sorted.size, neg_sorted.size
    best = None
    for theta in cands:
        tp = P - int(np.searchsorted(pos_sorted, theta, side="right"))
        fp = N - int(np.searchsorted(neg_sorted, theta, side="right"))
        cm = ConfusionMatrix(TP=tp, FN=P - tp, TN=N - fp, FP=fp)
        val = metric(cm, kind, w, exact=True)
        key = (val, -abs(theta))
        if best is None or key > best[0]:
            best = (key, theta, val)
    return best[1], float(best[2])


def kfold_split(n: int, k: int, seed: int = 0, stratified: bool = False, labels=None):
    """Partition ``range(n)`` into ``k`` folds.

    Indices are shuffled with ``numpy.random.default_rng(seed)`` and dealt
    to the folds in turn, so the earliest folds receive the remainder.  The
    stratified variant shuffles each class (in sorted label order) and keeps
    dealing from where the previous class stopped.
    """
    if not 2 <= k <= n:
        raise ValueError(f"need 2 <= k <= n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    folds = [[] for _ in range(k)]
    if not stratified:
        groups = [rng.permutation(n)]
    else:
        if labels is None:
            raise ValueError("stratified splitting needs labels")
        y = np.asarray(labels)
        if y.shape[0] != n:
            raise ValueError("labels length differs from n")
        groups = [rng.permutation(np.flatnonzero(y == c)) for c in np.unique(y)]
    pointer = 0
    for g in groups:
        for idx in g:
            folds[pointer % k].append(int(idx))
            pointer += 1
    return tuple(np.array(sorted(f), dtype=np.int64) for f in folds)
