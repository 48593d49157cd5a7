"""Grid search and derivative-free pattern search over hyperparameters.

Both drive an arbitrary ``objective(params) -> float`` (to be minimised),
typically a fit-and-validate closure.  Evaluations may run in a thread
pool; results are always merged in enumeration order, so the outcome does
not depend on the number of workers.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class ParamSpace:
    """Named axes with ordered value lists; the first axis varies slowest."""

    axes: tuple[tuple[str, tuple], ...]
    log_scale: frozenset = frozenset()

    def __post_init__(self):
        axes = tuple((str(n), tuple(v)) for n, v in
                     (self.axes.items() if isinstance(self.axes, Mapping) else self.axes))
        if not axes:
            raise ValueError("parameter space needs at least one axis")
        for name, values in axes:
            if not values:
                raise ValueError(f"axis {name!r} is empty")
        names = [n for n, _ in axes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate axis names")
        object.__setattr__(self, "axes", axes)
        object.__setattr__(self, "log_scale", frozenset(self.log_scale))

    @classmethod
    def from_dict(cls, axes: Mapping[str, Sequence], log_scale=()) -> "ParamSpace":
        return cls(tuple((k, tuple(v)) for k, v in axes.items()), frozenset(log_scale))

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n for n, _ in self.axes)

    def __len__(self) -> int:
        return math.prod(len(v) for _, v in self.axes)

    def cells(self):
        names = self.names
        for combo in itertools.product(*(v for _, v in self.axes)):
            yield dict(zip(names, combo))


def _evaluate_all(fn, items, workers: int):
    if workers <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class GridResult:
    best_params: dict | None
    best_value: float | None
    table: tuple[tuple[dict, float | None], ...]


def grid_search(space: ParamSpace, objective: Callable[[dict], float],
                mode: str = "minimize", workers: int = 1) -> GridResult:
    """Evaluate every cell; failures (exceptions, NaN) are recorded as None.

    The first cell in enumeration order wins ties.
    """
    if mode not in ("minimize", "maximize"):
        raise ValueError("mode must be 'minimize' or 'maximize'")
    cells = list(space.cells())

    def safe(params):
        try:
            v = float(objective(dict(params)))
        except Exception:
            return None
        return None if math.isnan(v) else v

    values = _evaluate_all(safe, cells, workers)
    sign = 1.0 if mode == "minimize" else -1.0
    best_i = None
    for i, v in enumerate(values):
        if v is not None and (best_i is None or sign * v < sign * values[best_i]):
            best_i = i
    table = tuple(zip(cells, values))
    if best_i is None:
        return GridResult(None, None, table)
    return GridResult(dict(cells[best_i]), values[best_i], table)


@dataclass(frozen=True)
class PatternSearchConfig:
    """Settings of the pattern search.

    ``directions`` defaults to ``+e_1..+e_n, -e_1..-e_n``.  ``min_improvement``
    maps the step size to the required decrease.  ``expansion`` (>= 1)
    multiplies the step after a success; 1 keeps it unchanged.
    ``acceptance="best"`` probes all directions and moves to the best
    improving one instead of the first.
    """

    initial_step: float = 1.0
    contraction: float = 0.5
    step_tolerance: float = 1e-3
    max_iterations: int = 10000
    directions: tuple | None = None
    min_improvement: Callable[[float], float] | None = None
    expansion: float = 1.0
    acceptance: str = "first"
    log_scale: tuple[bool, ...] | None = None
    workers: int = 1

    def __post_init__(self):
        if not self.initial_step > self.step_tolerance > 0:
            raise ValueError("need initial_step > step_tolerance > 0")
        if not 0 < self.contraction < 1:
            raise ValueError("contraction must lie in (0, 1)")
        if self.expansion < 1:
            raise ValueError("expansion must be >= 1")
        if self.acceptance not in ("first", "best"):
            raise ValueError("acceptance must be 'first' or 'best'")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")

    def direction_set(self, n: int) -> list[np.ndarray]:
        if self.directions is not None:
            return [np.asarray(d, dtype=np.float64) for d in self.directions]
        eye = np.eye(n)
        return [eye[i] for i in range(n)] + [-eye[i] for i in range(n)]


@dataclass(frozen=True)
class PatternResult:
    x: np.ndarray
    f: float
    trace: tuple
    final_step: float
    iterations: int
    evaluations: int
    aborted: bool = False


def pattern_search(cfg: PatternSearchConfig, objective: Callable[[np.ndarray], float],
                   x0) -> PatternResult:
    """Minimise ``objective`` starting at ``x0``.

    Coordinates flagged in ``cfg.log_scale`` are searched in log10 space, so
    a step ``s`` multiplies or divides the parameter by ``10**s``.  The trace
    lists ``(x, s, f)`` after every iteration in the original coordinates.
    A non-finite objective value stops the search with ``aborted=True``.
    """
    x0 = np.asarray(x0, dtype=np.float64).ravel()
    n = x0.shape[0]
    logs = np.zeros(n, dtype=bool) if cfg.log_scale is None else np.asarray(cfg.log_scale, bool)
    if logs.shape[0] != n:
        raise ValueError("log_scale flags do not match the dimension")
    if np.any(x0[logs] <= 0):
        raise ValueError("log-scale coordinates must start positive")
    p = cfg.min_improvement or (lambda s: 0.0)
    D = cfg.direction_set(n)

    def to_x(u):
        x = u.copy()
        x[logs] = 10.0 ** u[logs]
        return x

    evals = 0

    def f(u):
        nonlocal evals
        evals += 1
        return float(objective(to_x(u)))

    u = x0.copy()
    u[logs] = np.log10(x0[logs])
    fu = f(u)
    s = cfg.initial_step
    trace = [(to_x(u), s, fu)]
    if not math.isfinite(fu):
        return PatternResult(to_x(u), fu, tuple(trace), s, 0, evals, aborted=True)
    it = 0
    while it < cfg.max_iterations:
        it += 1
        threshold = fu - p(s)
        moved = None
        if cfg.workers > 1 or cfg.acceptance == "best":
            trials = [u + s * d for d in D]
            vals = _evaluate_all(f, trials, cfg.workers)
            if any(not math.isfinite(v) for v in vals):
                bad = next(i for i, v in enumerate(vals) if not math.isfinite(v))
                trace.append((to_x(trials[bad]), s, vals[bad]))
                return PatternResult(to_x(u), fu, tuple(trace), s, it, evals, aborted=True)
            improving = [i for i, v in enumerate(vals) if v < threshold]
            if improving:
                pick = improving[0] if cfg.acceptance == "first" else \
                    min(improving, key=lambda i: (vals[i], i))
                moved = (trials[pick], vals[pick])
        else:
            for d in D:
                trial = u + s * d
                v = f(trial)
                if not math.isfinite(v):
                    trace.append((to_x(trial), s, v))
                    return PatternResult(to_x(u), fu, tuple(trace), s, it, evals, aborted=True)
                if v < threshold:
                    moved = (trial, v)
                    break
        if moved is not None:
            u, fu = moved
            s *= cfg.expansion
            trace.append((to_x(u), s, fu))
            continue
        s *= cfg.contraction
        trace.append((to_x(u), s, fu))
        if s < cfg.step_tolerance:
            break
    return PatternResult(to_x(u), fu, tuple(trace), s, it, evals)


# --------------------------------------------------------------------------
# presets for BRMM tuning

C_PRESET = tuple(float(10.0 ** e) for e in np.arange(-4.0, 2.0 + 1e-9, 0.5))
R_PRESET = tuple(float(1.0 + 10.0 ** e) for e in np.arange(-1.0, 1.0 + 1e-9, 0.5))

PRESETS: dict[str, ParamSpace] = {
    "C": ParamSpace((("C", C_PRESET),), frozenset({"C"})),
    "C_R": ParamSpace((("C", C_PRESET), ("R", R_PRESET)), frozenset({"C", "R"})),
}

# start high: C = 1 and R = 10, searched as (log10 C, log10(R - 1))
PATTERN_X0 = {"C": 1.0, "R": 10.0}


def brmm_pattern_objective(score: Callable[[dict], float]) -> Callable[[np.ndarray], float]:
    """Adapt ``score({'C':.., 'R':..})`` to a vector objective over ``(C, R - 1)``.

    Use with ``log_scale=(True, True)`` and ``x0 = (1, 9)``.
    """
    return lambda x: score({"C": float(x[0]), "R": 1.0 + float(x[1])})


def brmm_pattern_x0() -> np.ndarray:
    return np.array([PATTERN_X0["C"], PATTERN_X0["R"] - 1.0])
