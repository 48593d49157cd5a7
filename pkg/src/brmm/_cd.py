"""Dual coordinate descent over box-constrained quadratics.

Every solver in the package reduces to the same dual

    min  1/2 (a-b)^T G (a-b) - sum lo_j a_j + sum hi_j b_j
         + 1/2 sum ra_j a_j^2 + 1/2 sum rb_j b_j^2
    s.t. 0 <= a_j <= cap_a_j,  0 <= b_j <= cap_b_j

where ``G_jl = s_j s_l (k(x_j, x_l) + ow)``.  ``a`` are inner-margin duals,
``b`` outer-margin duals (disabled per sample when ``hi_j`` is infinite),
``ra``/``rb`` the ridge terms contributed by squared losses.  ``g_j`` below
always denotes ``(G (a - b))_j``, the signed score of sample ``j``.

The Gram form keeps ``g`` for all samples and costs O(n) per update; the
linear form keeps ``(w, c)`` with ``g_j = s_j (<w, x_j> + c)`` and costs O(m).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def coord_step(a, b, g, q, lo, hi, cap_a, cap_b, ra, rb):
    """One alpha step followed by one beta step for a single index.

    Returns ``(a_new, b_new, g_new)``.  The beta step sees the score after
    the alpha step.  ``hi = inf`` skips the beta step entirely.  If both
    duals end up positive, their common part is removed.
    """
    na = a - (g - lo + ra * a) / (q + ra)
    if na < 0.0:
        na = 0.0
    elif na > cap_a:
        na = cap_a
    g = g + (na - a) * q
    nb = b
    if not math.isinf(hi):
        nb = b - (hi - g + rb * b) / (q + rb)
        if nb < 0.0:
            nb = 0.0
        elif nb > cap_b:
            nb = cap_b
        g = g - (nb - b) * q
        if na > 0.0 and nb > 0.0:
            # only a - b enters the score; shrinking both never raises the objective
            m = min(na, nb)
            na -= m
            nb -= m
    return na, nb, g


@njit(cache=True, nogil=True)
def _sweep_gram(order, G, a, b, g, lo, hi, cap_a, cap_b, ra, rb):
    n = G.shape[0]
    change = 0.0
    for j in order:
        q = G[j, j]
        if q <= 0.0:
            continue
        na, nb, _ = coord_step(a[j], b[j], g[j], q, lo[j], hi[j], cap_a[j], cap_b[j],
                               ra[j], rb[j])
        da = na - a[j]
        db = nb - b[j]
        if da != 0.0 or db != 0.0:
            d = da - db
            for l in range(n):
                g[l] += d * G[j, l]
            a[j] = na
            b[j] = nb
            if abs(da) > change:
                change = abs(da)
            if abs(db) > change:
                change = abs(db)
    return change


@njit(cache=True, nogil=True)
def _sweep_linear(order, X, s, ow, sq, a, b, w, c, lo, hi, cap_a, cap_b, ra, rb):
    # c is a length-1 array holding the offset
    m = X.shape[1]
    change = 0.0
    for j in order:
        q = sq[j] + ow
        if q <= 0.0:
            continue
        dot = 0.0
        for k in range(m):
            dot += w[k] * X[j, k]
        g = s[j] * (dot + c[0])
        na, nb, _ = coord_step(a[j], b[j], g, q, lo[j], hi[j], cap_a[j], cap_b[j],
                               ra[j], rb[j])
        da = na - a[j]
        db = nb - b[j]
        if da != 0.0 or db != 0.0:
            d = (da - db) * s[j]
            for k in range(m):
                w[k] += d * X[j, k]
            c[0] += d * ow
            a[j] = na
            b[j] = nb
            if abs(da) > change:
                change = abs(da)
            if abs(db) > change:
                change = abs(db)
    return change


@njit(cache=True, nogil=True)
def _active(a, b):
    n = a.shape[0]
    count = 0
    for j in range(n):
        if a[j] > 0.0 or b[j] > 0.0:
            count += 1
    out = np.empty(count, dtype=np.int64)
    k = 0
    for j in range(n):
        if a[j] > 0.0 or b[j] > 0.0:
            out[k] = j
            k += 1
    return out


@njit(cache=True, nogil=True)
def _inner_gram(G, a, b, g, lo, hi, cap_a, cap_b, ra, rb, tol, max_inner):
    for _ in range(max_inner):
        act = _active(a, b)
        if act.shape[0] == 0:
            return
        if _sweep_gram(act, G, a, b, g, lo, hi, cap_a, cap_b, ra, rb) < tol:
            return


@njit(cache=True, nogil=True)
def _inner_linear(X, s, ow, sq, a, b, w, c, lo, hi, cap_a, cap_b, ra, rb, tol, max_inner):
    for _ in range(max_inner):
        act = _active(a, b)
        if act.shape[0] == 0:
            return
        if _sweep_linear(act, X, s, ow, sq, a, b, w, c, lo, hi, cap_a, cap_b, ra, rb) < tol:
            return


@njit(cache=True, nogil=True)
def _residual(g, q, a, b, lo, hi, cap_a, cap_b, ra, rb):
    # largest step any single coordinate would still take
    r = 0.0
    for j in range(a.shape[0]):
        if q[j] <= 0.0:
            continue
        na, nb, _ = coord_step(a[j], b[j], g[j], q[j], lo[j], hi[j], cap_a[j], cap_b[j],
                               ra[j], rb[j])
        if abs(na - a[j]) > r:
            r = abs(na - a[j])
        if abs(nb - b[j]) > r:
            r = abs(nb - b[j])
    return r


# active-set sweeps between two full sweeps
MAX_INNER = 50


@dataclass
class BoxQP:
    """Per-sample description of one instance of the shared dual."""

    lo: np.ndarray
    hi: np.ndarray
    cap_a: np.ndarray
    cap_b: np.ndarray
    ra: np.ndarray
    rb: np.ndarray


@dataclass
class CDResult:
    a: np.ndarray
    b: np.ndarray
    g: np.ndarray
    w: np.ndarray | None
    c: float
    iterations: int
    converged: bool
    residual: float
    skipped: int
    diverged: bool = False


def _diverging(norm_w, a, b, blowup, dual_bound):
    if blowup is not None and norm_w > blowup:
        return True
    if dual_bound is None:
        return False
    return max(float(np.max(a, initial=0.0)), float(np.max(b, initial=0.0))) > dual_bound


def solve_gram(G, qp: BoxQP, *, tol, max_iter, seed, blowup=None,
               dual_bound=None) -> CDResult:
    """Solve with an explicit signed Gram matrix ``G``.

    ``blowup`` (optional) bounds ``sqrt((a-b)^T G (a-b))`` and ``dual_bound``
    the largest dual; exceeding either marks the problem as diverging
    and stops early.
    """
    G = np.ascontiguousarray(G, dtype=np.float64)
    n = G.shape[0]
    a = np.zeros(n)
    b = np.zeros(n)
    g = np.zeros(n)
    q = np.ascontiguousarray(np.diag(G))
    rng = np.random.default_rng(seed)
    converged = False
    diverged = False
    it = 0
    for it in range(1, max_iter + 1):
        order = rng.permutation(n).astype(np.int64)
        change = _sweep_gram(order, G, a, b, g, qp.lo, qp.hi, qp.cap_a, qp.cap_b, qp.ra, qp.rb)
        if change < tol:
            if _residual(g, q, a, b, qp.lo, qp.hi, qp.cap_a, qp.cap_b, qp.ra, qp.rb) <= tol:
                converged = True
                break
        if _diverging(math.sqrt(max(float((a - b) @ g), 0.0)), a, b, blowup, dual_bound):
            diverged = True
            break
        _inner_gram(G, a, b, g, qp.lo, qp.hi, qp.cap_a, qp.cap_b, qp.ra, qp.rb, tol, MAX_INNER)
    residual = _residual(g, q, a, b, qp.lo, qp.hi, qp.cap_a, qp.cap_b, qp.ra, qp.rb)
    return CDResult(a, b, g, None, 0.0, it, converged, residual, int(np.sum(q <= 0.0)), diverged)


def solve_linear(X, s, ow, qp: BoxQP, *, tol, max_iter, seed, blowup=None,
                 dual_bound=None) -> CDResult:
    """Solve in primal coordinates ``(w, c)`` for a linear kernel."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    s = np.ascontiguousarray(s, dtype=np.float64)
    n, m = X.shape
    a = np.zeros(n)
    b = np.zeros(n)
    w = np.zeros(m)
    c = np.zeros(1)
    sq = np.einsum("ij,ij->i", X, X)
    q = sq + ow
    rng = np.random.default_rng(seed)
    converged = False
    diverged = False
    it = 0

    def scores():
        return s * (X @ w + c[0])

    for it in range(1, max_iter + 1):
        order = rng.permutation(n).astype(np.int64)
        change = _sweep_linear(order, X, s, ow, sq, a, b, w, c, qp.lo, qp.hi, qp.cap_a,
                               qp.cap_b, qp.ra, qp.rb)
        if change < tol:
            if _residual(scores(), q, a, b, qp.lo, qp.hi, qp.cap_a, qp.cap_b, qp.ra,
                         qp.rb) <= tol:
                converged = True
                break
        if _diverging(float(np.linalg.norm(w)), a, b, blowup, dual_bound):
            diverged = True
            break
        _inner_linear(X, s, ow, sq, a, b, w, c, qp.lo, qp.hi, qp.cap_a, qp.cap_b, qp.ra,
                      qp.rb, tol, MAX_INNER)
    g = scores()
    residual = _residual(g, q, a, b, qp.lo, qp.hi, qp.cap_a, qp.cap_b, qp.ra, qp.rb)
    return CDResult(a, b, g, w, float(c[0]), it, converged, residual, int(np.sum(q <= 0.0)),
                    diverged)
