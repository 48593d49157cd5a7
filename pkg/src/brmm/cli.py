"""Command-line experiment runner.

An experiment config is a YAML mapping with the sections ``data``,
``chain``, ``classifier``, ``evaluation``, ``search`` plus ``output``,
``workers`` and ``seed``::

    data:
      generator: drift            # or  csv: path/to/train.csv  (test_csv optional)
      params: {seed: 0}
    chain:
      - kind: centering           # fitted on the training fold
    classifier:
      variant: brmm               # brmm | csvm | rfda | oneclass
      hyperparams: {C: 0.03, R: __R__}
      kernel: {kind: linear}
    evaluation:
      metrics: [BA, ACC]          # the first one drives the search
      protocol: holdout           # or kfold (with folds, stratified)
      runs: 1
      threshold_optimize: false
    search:
      kind: grid
      axes: {R: [.inf, 2.0]}

Strings of the form ``__name__`` are replaced by the value of the search
axis ``name``.  An axis that is not referenced by a placeholder binds to
the hyperparameter or kernel parameter of the same name.  Every problem
in a config is reported before anything is computed.

Run ``r`` uses split seed ``seed + r``.  With ``protocol: holdout`` a
generator is re-seeded with ``params.seed + r`` and the test phase is used
for evaluation.  Failures print one ``error: {json}`` line to stderr and
exit with a nonzero status.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import json
import math
import os
import re
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

from . import dataio
from .batch import PubsveModel, fit_brmm, fit_csvm, fit_pubsve, fit_rfda
from .chains import (RANKING_MODES, FD_ORDERS, AffineNode, backtransform,
                     backtransform_numeric, sensor_ranking, standardization_node,
                     translation_node)
from .core import Dataset, HyperParams, KernelSpec
from .evaluation import METRICS, auc, confusion, kfold_split, metric, optimize_threshold
from .hyperopt import (PRESETS, ParamSpace, PatternSearchConfig, _evaluate_all, grid_search,
                       pattern_search)
from .oneclass import fit_oneclass_brmm

METRIC_KINDS = METRICS + ("AUC",)
PROTOCOLS = ("kfold", "holdout")
SEARCH_KINDS = ("none", "grid", "pattern")
FITTED_NODES = ("centering", "standardization")

_HP_FIELDS = {f.name for f in dataclasses.fields(HyperParams)}
_KERNEL_FIELDS = {f.name for f in dataclasses.fields(KernelSpec)}
VARIANT_PARAMS = {
    "brmm": _HP_FIELDS,
    "csvm": _HP_FIELDS - {"R", "per_class_R", "C_outer"},
    "rfda": _HP_FIELDS - {"R", "per_class_R"},
    "oneclass": {"C", "R", "loss_order", "max_iterations", "tolerance", "seed"},
    "pubsve": {"C", "H", "loss_order", "max_iterations", "tolerance", "seed"},
}
RUN_VARIANTS = ("brmm", "csvm", "rfda", "oneclass")

_SECTIONS = {"data", "chain", "classifier", "evaluation", "search", "output", "workers", "seed"}
_DATA_KEYS = {"csv", "test_csv", "schema", "generator", "params"}
_EVAL_KEYS = {"metrics", "metric", "protocol", "folds", "runs", "stratified",
              "threshold_optimize", "class_weight"}
_SEARCH_KEYS = {"kind", "axes", "preset", "log_scale", "x0", "shift", "settings"}
_PATTERN_SETTINGS = {"initial_step", "contraction", "step_tolerance", "max_iterations",
                     "expansion", "acceptance"}
_PLACEHOLDER = re.compile(r"__([A-Za-z][A-Za-z0-9_]*?)__")

# searched as (log10 C, log10(R - 1)) from C = 1, R = 10
PATTERN_PRESETS = {
    "C": {"x0": {"C": 1.0}, "log_scale": ["C"]},
    "C_R": {"x0": {"C": 1.0, "R": 9.0}, "shift": {"R": 1.0}, "log_scale": ["C", "R"]},
}

EXPERIMENT_PRESETS = {
    "drift_trend": {
        "data": {"generator": "drift", "params": {"seed": 0}},
        "chain": [{"kind": "centering"}],
        "classifier": {"variant": "brmm", "hyperparams": {"C": 0.03}},
        "evaluation": {"metrics": ["BA", "ACC"], "protocol": "holdout", "runs": 1},
        "search": {"kind": "grid", "axes": {"R": [math.inf, 2.0]}},
    },
}

GEN_PRESETS = {
    "drift": ("drift", {}),
    "drift_noise": ("drift", {"noise_features": 50, "cauchy_noise": True}),
    "gaussian_pair": ("gaussian_pair", {}),
}


class ConfigError(ValueError):
    """All validation problems of a config at once."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


# --------------------------------------------------------------------------
# config handling


def _as_float(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", ".inf", "-inf", "-.inf"):
        return float(v.replace(".", ""))
    return v


def placeholders(obj) -> set[str]:
    if isinstance(obj, Mapping):
        return set().union(*(placeholders(v) for v in obj.values())) if obj else set()
    if isinstance(obj, (list, tuple)):
        return set().union(*(placeholders(v) for v in obj)) if obj else set()
    if isinstance(obj, str):
        return set(_PLACEHOLDER.findall(obj))
    return set()


def substitute(obj, values: Mapping[str, Any]):
    """Replace placeholders; a string that is exactly one placeholder keeps the value's type."""
    if isinstance(obj, Mapping):
        return {k: substitute(v, values) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [substitute(v, values) for v in obj]
    if isinstance(obj, str):
        m = _PLACEHOLDER.fullmatch(obj)
        if m and m.group(1) in values:
            return values[m.group(1)]
        return _PLACEHOLDER.sub(lambda g: str(values.get(g.group(1), g.group(0))), obj)
    return obj


@dataclass
class ExperimentConfig:
    data: dict
    classifier: dict
    chain: list = field(default_factory=list)
    evaluation: dict = field(default_factory=dict)
    search: dict = field(default_factory=lambda: {"kind": "none"})
    output: str | None = None
    workers: int = 1
    seed: int = 0

    @classmethod
    def from_mapping(cls, doc: Mapping) -> "ExperimentConfig":
        errors = validate_config(doc)
        if errors:
            raise ConfigError(errors)
        doc = copy.deepcopy(dict(doc))
        ev = dict(doc.get("evaluation") or {})
        if "metric" in ev:
            ev["metrics"] = [ev.pop("metric")]
        ev.setdefault("metrics", ["BA"])
        ev.setdefault("protocol", "kfold")
        ev.setdefault("folds", 5)
        ev.setdefault("runs", 1)
        ev.setdefault("stratified", False)
        ev.setdefault("threshold_optimize", False)
        ev.setdefault("class_weight", 0.5)
        search = _expand_search(doc.get("search") or {"kind": "none"})
        return cls(data=dict(doc["data"]), classifier=dict(doc["classifier"]),
                   chain=list(doc.get("chain") or []), evaluation=ev, search=search,
                   output=doc.get("output"), workers=int(doc.get("workers", 1)),
                   seed=int(doc.get("seed", 0)))

    def to_dict(self) -> dict:
        return {"data": self.data, "chain": self.chain, "classifier": self.classifier,
                "evaluation": self.evaluation, "search": self.search, "output": self.output,
                "workers": self.workers, "seed": self.seed}

    def echo(self) -> dict:
        """Everything that determines the results; execution settings are left out."""
        d = self.to_dict()
        del d["workers"], d["output"]
        return d

    @property
    def axis_names(self) -> tuple[str, ...]:
        kind = self.search.get("kind", "none")
        if kind == "grid":
            return tuple(self.search["axes"])
        if kind == "pattern":
            return tuple(self.search["x0"])
        return ()


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, Mapping):
        raise ConfigError([f"{path}: config must be a mapping"])
    return dict(doc)


def _expand_search(search: Mapping) -> dict:
    search = dict(search)
    kind = search.setdefault("kind", "none")
    preset = search.pop("preset", None)
    if kind == "grid":
        if preset is not None and "axes" not in search:
            space = PRESETS[preset]
            search["axes"] = {n: list(v) for n, v in space.axes}
            search.setdefault("log_scale", sorted(space.log_scale))
        search["axes"] = {k: [_as_float(x) for x in v] for k, v in search["axes"].items()}
    elif kind == "pattern":
        if preset is not None:
            for k, v in PATTERN_PRESETS[preset].items():
                search.setdefault(k, copy.deepcopy(v))
        search["x0"] = {k: float(_as_float(v)) for k, v in search["x0"].items()}
        search.setdefault("shift", {})
        search.setdefault("log_scale", [])
        search.setdefault("settings", {})
    return search


def _try(errors, where, fn):
    try:
        return fn()
    except (TypeError, ValueError, KeyError) as exc:
        errors.append(f"{where}: {exc}")
        return None


def _check_keys(errors, where, obj, allowed):
    if not isinstance(obj, Mapping):
        errors.append(f"{where}: expected a mapping")
        return False
    extra = sorted(set(obj) - set(allowed))
    if extra:
        errors.append(f"{where}: unknown keys {extra}")
    return True


def validate_config(doc: Mapping, *, allow_search: bool = True,
                    variants=RUN_VARIANTS) -> list[str]:
    """Return every problem found in ``doc`` (empty when valid)."""
    errors: list[str] = []
    if not _check_keys(errors, "config", doc, _SECTIONS):
        return errors

    # search first: it defines the axes the rest may reference
    search = doc.get("search") or {"kind": "none"}
    axes: dict[str, list] = {}
    if _check_keys(errors, "search", search, _SEARCH_KEYS):
        kind = search.get("kind", "none")
        if kind not in SEARCH_KINDS:
            errors.append(f"search.kind: {kind!r} not in {SEARCH_KINDS}")
        elif kind != "none" and not allow_search:
            errors.append("search: not allowed for this command")
        elif kind == "grid":
            preset = search.get("preset")
            if preset is not None and preset not in PRESETS:
                errors.append(f"search.preset: {preset!r} not in {sorted(PRESETS)}")
            elif "axes" not in search and preset is None:
                errors.append("search.axes: grid search needs axes or a preset")
            else:
                exp = _try(errors, "search", lambda: _expand_search(search))
                if exp is not None:
                    space = _try(errors, "search.axes", lambda: ParamSpace.from_dict(exp["axes"]))
                    if space is not None:
                        axes = {n: list(v) for n, v in space.axes}
        elif kind == "pattern":
            preset = search.get("preset")
            if preset is not None and preset not in PATTERN_PRESETS:
                errors.append(f"search.preset: {preset!r} not in {sorted(PATTERN_PRESETS)}")
            elif "x0" not in search and preset is None:
                errors.append("search.x0: pattern search needs x0 or a preset")
            else:
                exp = _try(errors, "search", lambda: _expand_search(search))
                if exp is not None:
                    _check_keys(errors, "search.settings", exp["settings"], _PATTERN_SETTINGS)
                    for k in list(exp["shift"]) + list(exp["log_scale"]):
                        if k not in exp["x0"]:
                            errors.append(f"search: {k!r} is not a pattern coordinate")
                    _try(errors, "search.settings", lambda: _pattern_config(exp))
                    axes = {k: [v + exp["shift"].get(k, 0.0)] for k, v in exp["x0"].items()}

    data = doc.get("data")
    if data is None:
        errors.append("data: section missing")
    elif _check_keys(errors, "data", data, _DATA_KEYS):
        has_csv, has_gen = "csv" in data, "generator" in data
        if has_csv == has_gen:
            errors.append("data: give exactly one of 'csv' or 'generator'")
        if has_gen:
            gen = data["generator"]
            if gen not in dataio.GENERATORS:
                errors.append(f"data.generator: {gen!r} not in {sorted(dataio.GENERATORS)}")
            else:
                cfg_cls = dataio.GENERATORS[gen][0]
                params = data.get("params") or {}
                if _check_keys(errors, "data.params", params,
                               {f.name for f in dataclasses.fields(cfg_cls)}):
                    if not placeholders(params):
                        _try(errors, "data.params", lambda: cfg_cls(**_gen_params(params)))
        for key in ("csv", "test_csv"):
            if key in data and not placeholders(data[key]) and not os.path.isfile(data[key]):
                errors.append(f"data.{key}: file not found: {data[key]}")
        if "schema" in data:
            _try(errors, "data.schema", lambda: dataio.CsvSchema(**data["schema"]))

    chain = doc.get("chain") or []
    if not isinstance(chain, list):
        errors.append("chain: expected a list of nodes")
        chain = []
    for i, node in enumerate(chain):
        if not isinstance(node, Mapping) or "kind" not in node:
            errors.append(f"chain[{i}]: node needs a 'kind'")
        elif node["kind"] in FITTED_NODES and len(node) == 1:
            continue
        elif not placeholders(node):
            _try(errors, f"chain[{i}]", lambda: dataio.build_node(node))

    clf = doc.get("classifier")
    variant = None
    if clf is None:
        errors.append("classifier: section missing")
    elif _check_keys(errors, "classifier", clf, {"variant", "hyperparams", "kernel"}):
        variant = clf.get("variant", "brmm")
        if variant not in variants:
            errors.append(f"classifier.variant: {variant!r} not in {tuple(variants)}")
            variant = None
        hp = clf.get("hyperparams") or {}
        kern = clf.get("kernel") or {}
        if variant and _check_keys(errors, "classifier.hyperparams", hp, VARIANT_PARAMS[variant]):
            pass
        _check_keys(errors, "classifier.kernel", kern, _KERNEL_FIELDS)

    ev = doc.get("evaluation") or {}
    if _check_keys(errors, "evaluation", ev, _EVAL_KEYS):
        ms = ev.get("metrics", [ev["metric"]] if "metric" in ev else ["BA"])
        if not isinstance(ms, list) or not ms:
            errors.append("evaluation.metrics: expected a non-empty list")
        else:
            for m in ms:
                if m not in METRIC_KINDS:
                    errors.append(f"evaluation.metrics: {m!r} not in {METRIC_KINDS}")
        protocol = ev.get("protocol", "kfold")
        if protocol not in PROTOCOLS:
            errors.append(f"evaluation.protocol: {protocol!r} not in {PROTOCOLS}")
        if protocol == "holdout" and data is not None and isinstance(data, Mapping):
            if not ("test_csv" in data or data.get("generator") == "drift"):
                errors.append("evaluation.protocol: holdout needs data.test_csv or the "
                              "drift generator")
        for key, lo in (("folds", 2), ("runs", 1)):
            v = ev.get(key, lo)
            if not isinstance(v, int) or isinstance(v, bool) or v < lo:
                errors.append(f"evaluation.{key}: expected an integer >= {lo}")
        if ev.get("threshold_optimize") and ev.get("metrics", ["BA"])[0] == "AUC":
            errors.append("evaluation.threshold_optimize: the primary metric must not be AUC")

    w = doc.get("workers", 1)
    if not isinstance(w, int) or isinstance(w, bool) or w < 1:
        errors.append("workers: expected an integer >= 1")

    # placeholders and axis bindings
    used = placeholders({k: doc.get(k) for k in ("data", "chain", "classifier")})
    for name in sorted(used - set(axes)):
        errors.append(f"placeholder __{name}__ has no search axis")
    if variant is not None:
        hp = clf.get("hyperparams") or {}
        kern = clf.get("kernel") or {}
        for name in axes:
            if name in used:
                continue
            if name in VARIANT_PARAMS[variant]:
                if name in hp:
                    errors.append(f"search axis {name!r} conflicts with fixed "
                                  f"classifier.hyperparams.{name}")
            elif name in _KERNEL_FIELDS:
                if name in kern:
                    errors.append(f"search axis {name!r} conflicts with fixed "
                                  f"classifier.kernel.{name}")
            else:
                errors.append(f"search axis {name!r} is not a parameter of variant "
                              f"{variant!r} and is not referenced by a placeholder")
        # every cell must produce valid parameter objects
        structural = ("search", "classifier", "placeholder")
        if not any(e.startswith(structural) for e in errors):
            cells = ParamSpace.from_dict(axes).cells() if axes else [{}]
            seen = set()
            for cell in cells:
                spec = _bind(doc, cell)
                c = spec["classifier"]
                msg = _try_message(lambda: _hyperparams(variant, c.get("hyperparams") or {}))
                msg = msg or _try_message(lambda: KernelSpec(**(c.get("kernel") or {})))
                if msg and msg not in seen:
                    seen.add(msg)
                    errors.append(f"classifier at {cell}: {msg}")
    return errors


def _try_message(fn):
    try:
        fn()
    except (TypeError, ValueError) as exc:
        return str(exc)
    return None


def _gen_params(params: Mapping) -> dict:
    out = {}
    for k, v in params.items():
        out[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v) \
            if isinstance(v, list) else _as_float(v)
    return out


def _bind(doc: Mapping, cell: Mapping) -> dict:
    """Resolve placeholders and bind free axes to hyperparameters or kernel fields."""
    out = substitute({k: doc.get(k) for k in ("data", "chain", "classifier")}, cell)
    clf = out["classifier"] = dict(out.get("classifier") or {})
    variant = clf.get("variant", "brmm")
    used = placeholders({k: doc.get(k) for k in ("data", "chain", "classifier")})
    hp = dict(clf.get("hyperparams") or {})
    kern = dict(clf.get("kernel") or {})
    for name, value in cell.items():
        if name in used:
            continue
        if name in VARIANT_PARAMS.get(variant, ()):
            hp[name] = value
        elif name in _KERNEL_FIELDS:
            kern[name] = value
    clf["hyperparams"], clf["kernel"] = hp, kern
    out["chain"] = out.get("chain") or []
    return out


def _hyperparams(variant: str, hp: Mapping) -> HyperParams | dict:
    hp = {k: _as_float(v) for k, v in hp.items()}
    if variant in ("oneclass", "pubsve"):
        kw = {k: float(v) if k in ("C", "R", "H", "tolerance") else v for k, v in hp.items()}
        if variant == "oneclass":
            HyperParams(C=kw.get("C", 1.0), R=kw.get("R", math.inf),
                        loss_order=kw.get("loss_order", "L1"))
        return kw
    return HyperParams.from_dict(hp)


def _pattern_config(search: Mapping) -> PatternSearchConfig:
    names = list(search["x0"])
    settings = dict(search.get("settings") or {})
    logs = tuple(n in set(search.get("log_scale") or ()) for n in names)
    return PatternSearchConfig(log_scale=logs, **settings)


# --------------------------------------------------------------------------
# experiment execution


def _load_source(data: Mapping, run: int, holdout: bool) -> tuple[Dataset, Dataset | None]:
    if "generator" in data:
        cfg_cls, gen = dataio.GENERATORS[data["generator"]]
        params = _gen_params(data.get("params") or {})
        if holdout:
            params["seed"] = int(params.get("seed", 0)) + run
        out = gen(cfg_cls(**params))
        return out if isinstance(out, tuple) else (out, None)
    schema = dataio.CsvSchema(**(data.get("schema") or {}))
    train = dataio.load_csv(data["csv"], schema)
    test = dataio.load_csv(data["test_csv"], schema) if "test_csv" in data else None
    return train, test


def fit_preprocessing(chain_specs, X: np.ndarray) -> list[AffineNode]:
    """Build the preprocessing nodes; parameter-free fitted nodes use ``X``."""
    nodes = []
    for spec in chain_specs:
        if spec["kind"] in FITTED_NODES and len(spec) == 1:
            mean = X.mean(axis=0)
            if spec["kind"] == "centering":
                node = translation_node(-mean)
            else:
                std = X.std(axis=0)
                node = standardization_node(mean, np.where(std > 0, std, 1.0))
        else:
            node = dataio.build_node(spec)
        X = X @ node.A.T + node.T
        nodes.append(node)
    return nodes


def apply_preprocessing(nodes, X: np.ndarray) -> np.ndarray:
    for node in nodes:
        X = X @ node.A.T + node.T
    return X


def fit_model(variant: str, data: Dataset, hp, kernel: KernelSpec):
    if variant == "brmm":
        return fit_brmm(data, hp, kernel)
    if variant == "csvm":
        return fit_csvm(data, hp, kernel)
    if variant == "rfda":
        return fit_rfda(data, hp, kernel)
    if variant == "oneclass":
        pos = data.y == 1
        unary = Dataset(data.X[pos], np.ones(int(pos.sum())))
        kw = {k: v for k, v in hp.items() if k in ("C", "R", "loss_order")}
        opt = {k: v for k, v in hp.items() if k in ("tolerance", "max_iterations", "seed")}
        return fit_oneclass_brmm(unary, kernel=kernel, **kw, **opt)
    if variant == "pubsve":
        return fit_pubsve(data, kernel=kernel, **hp)
    raise ValueError(f"unknown variant {variant!r}")


def model_scores(model, X) -> np.ndarray:
    if isinstance(model, PubsveModel):
        return model.predict(X)
    return np.asarray(model.decision_function(X), dtype=np.float64)


def evaluate_scores(scores, labels, metrics, threshold: float = 0.0, w: float = 0.5) -> dict:
    pred = np.where(scores > threshold, 1, -1)
    cm = confusion(labels, pred)
    out = {}
    for m in metrics:
        try:
            out[m] = auc(scores, labels) if m == "AUC" else metric(cm, m, w)
        except ValueError:
            out[m] = None
    return out


class _Task:
    """One (cell, run, fold) evaluation; owns its fit."""

    def __init__(self, cfg: ExperimentConfig, cell: dict, run: int, fold: int, sources):
        self.cfg, self.cell, self.run, self.fold, self.sources = cfg, cell, run, fold, sources

    def __call__(self) -> dict:
        cfg = self.cfg
        ev = cfg.evaluation
        spec = _bind(cfg.to_dict(), self.cell)
        train, test = self.sources(spec["data"], self.run)
        if ev["protocol"] == "kfold":
            folds = kfold_split(train.n, ev["folds"], seed=cfg.seed + self.run,
                                stratified=ev["stratified"], labels=train.y)
            test_idx = folds[self.fold]
            train_idx = np.setdiff1d(np.arange(train.n), test_idx)
            train, test = train.subset(train_idx), train.subset(test_idx)
        clf = spec["classifier"]
        variant = clf.get("variant", "brmm")
        nodes = fit_preprocessing(spec["chain"], np.asarray(train.X))
        Xtr, Xte = apply_preprocessing(nodes, train.X), apply_preprocessing(nodes, test.X)
        model = fit_model(variant, Dataset(Xtr, train.y),
                          _hyperparams(variant, clf.get("hyperparams") or {}),
                          KernelSpec(**{k: _as_float(v) for k, v in (clf.get("kernel") or {}).items()}))
        theta = 0.0
        if ev["threshold_optimize"]:
            theta, _ = optimize_threshold(model_scores(model, Xtr), train.y, ev["metrics"][0],
                                          ev["class_weight"])
        out = evaluate_scores(model_scores(model, Xte), test.y, ev["metrics"], theta,
                              ev["class_weight"])
        out["__converged__"] = bool(model.info.converged)
        return out


def _safe(task):
    try:
        return task()
    except Exception as exc:  # recorded as a failed row, reported in the summary
        return {"__error__": f"{type(exc).__name__}: {exc}"}


@dataclass
class ExperimentResult:
    table: dataio.ResultTable
    summary: dict
    config: dict


def run_experiment(cfg: ExperimentConfig, workers: int | None = None) -> ExperimentResult:
    """Evaluate every search point on every (run, fold) pair."""
    workers = cfg.workers if workers is None else workers
    ev = cfg.evaluation
    holdout = ev["protocol"] == "holdout"
    n_folds = 1 if holdout else ev["folds"]
    pairs = [(r, f) for r in range(ev["runs"]) for f in range(n_folds)]
    names = cfg.axis_names
    table = dataio.ResultTable(param_names=names + ("run", "fold"),
                               metric_names=tuple(ev["metrics"]))
    cache: dict[str, tuple] = {}

    def sources(data, run):
        key = json.dumps(dataio._plain(data), sort_keys=True) + f"#{run if holdout else 0}"
        if key not in cache:
            cache[key] = _load_source(data, run, holdout)
        return cache[key]

    # warm the source cache serially so worker threads only read it
    warm = [{}] if not names else list(_cells(cfg))
    for cell in warm[:1] if not placeholders(cfg.data) else warm:
        spec = _bind(cfg.to_dict(), cell)
        for r in range(ev["runs"] if holdout else 1):
            sources(spec["data"], r)

    failures: list[str] = []
    not_converged = 0

    def evaluate_cells(cells):
        tasks = [_Task(cfg, c, r, f, sources) for c in cells for r, f in pairs]
        results = _evaluate_all(_safe, tasks, workers)
        nonlocal not_converged
        per_cell = []
        for i, c in enumerate(cells):
            chunk = results[i * len(pairs):(i + 1) * len(pairs)]
            for (r, f), res in zip(pairs, chunk):
                if "__error__" in res:
                    failures.append(res["__error__"])
                    res = {}
                elif not res.pop("__converged__"):
                    not_converged += 1
                table.add({**c, "run": r, "fold": f}, res)
            per_cell.append(chunk)
        return per_cell

    primary = ev["metrics"][0]

    def mean_primary(chunk):
        vals = [res.get(primary) for res in chunk]
        if any(v is None for v in vals):
            return math.nan
        return float(np.mean(vals))

    kind = cfg.search.get("kind", "none")
    summary: dict[str, Any] = {"search": kind, "metric": primary}
    if kind == "grid":
        space = ParamSpace.from_dict(cfg.search["axes"])
        cells = list(space.cells())
        values = [mean_primary(ch) for ch in evaluate_cells(cells)]
        lookup = {_key(c): v for c, v in zip(cells, values)}
        res = grid_search(space, lambda p: lookup[_key(p)], mode="maximize")
        summary.update(best=res.best_params, value=res.best_value)
    elif kind == "pattern":
        search = cfg.search
        shift = search.get("shift") or {}
        x0 = np.array([search["x0"][n] for n in names])
        seen: dict[str, float] = {}

        def objective(x):
            # revisited points are looked up, so every point appears once in the table
            cell = {n: float(v) + shift.get(n, 0.0) for n, v in zip(names, x)}
            if _key(cell) not in seen:
                v = mean_primary(evaluate_cells([cell])[0])
                seen[_key(cell)] = -v if math.isfinite(v) else math.inf
            return seen[_key(cell)]

        pcfg = _pattern_config(search)
        res = pattern_search(dataclasses.replace(pcfg, workers=1), objective, x0)
        best = {n: float(v) + shift.get(n, 0.0) for n, v in zip(names, res.x)}
        summary.update(best=best, value=-res.f, iterations=res.iterations,
                       evaluations=res.evaluations, final_step=res.final_step,
                       aborted=res.aborted)
    else:
        chunk = evaluate_cells([{}])[0]
        summary.update(value=mean_primary(chunk))
    summary["failures"] = len(failures)
    summary["not_converged"] = not_converged
    if failures:
        summary["first_failure"] = failures[0]
    return ExperimentResult(table=table, summary=summary, config=cfg.echo())


def _cells(cfg: ExperimentConfig):
    if cfg.search.get("kind") == "grid":
        return ParamSpace.from_dict(cfg.search["axes"]).cells()
    if cfg.search.get("kind") == "pattern":
        shift = cfg.search.get("shift") or {}
        return iter([{n: v + shift.get(n, 0.0) for n, v in cfg.search["x0"].items()}])
    return iter([{}])


def _key(cell: Mapping) -> str:
    return repr(sorted(cell.items()))


def write_experiment(result: ExperimentResult, path=None) -> str:
    text = dataio.format_results(result.table, result.config)
    if path is not None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    return text


# --------------------------------------------------------------------------
# subcommands


def _experiment_doc(args) -> dict:
    if args.config is None and args.preset in EXPERIMENT_PRESETS:
        doc = copy.deepcopy(EXPERIMENT_PRESETS[args.preset])
    elif args.config is not None:
        doc = load_config(args.config)
    else:
        raise ConfigError([f"need --config or --preset in {sorted(EXPERIMENT_PRESETS)}"])
    if args.workers is not None:
        doc["workers"] = args.workers
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.out is not None:
        doc["output"] = args.out
    return doc


def _run_doc(doc: dict) -> int:
    cfg = ExperimentConfig.from_mapping(doc)
    result = run_experiment(cfg)
    text = write_experiment(result, cfg.output)
    if cfg.output is None:
        sys.stdout.write(text)
    print(json.dumps(dataio._plain(result.summary), sort_keys=True),
          file=sys.stderr if cfg.output is None else sys.stdout)
    return 0


def cmd_run(args) -> int:
    return _run_doc(_experiment_doc(args))


def _search_cmd(kind: str):
    def cmd(args) -> int:
        doc = _experiment_doc(args)
        search = dict(doc.get("search") or {})
        if search.get("kind") not in (None, "none", kind):
            raise ConfigError([f"search.kind: config asks for {search['kind']!r}, "
                               f"command runs {kind!r}"])
        search["kind"] = kind
        if args.preset is not None and args.preset not in EXPERIMENT_PRESETS:
            search.setdefault("preset", args.preset)
        doc["search"] = search
        return _run_doc(doc)
    return cmd


def cmd_gen(args) -> int:
    name = args.preset or "drift"
    if name not in GEN_PRESETS:
        raise ConfigError([f"--preset: {name!r} not in {sorted(GEN_PRESETS)}"])
    generator, params = GEN_PRESETS[name]
    params = dict(params)
    if args.config is not None:
        params.update(load_config(args.config))
    if args.seed is not None:
        params["seed"] = args.seed
    cfg_cls, gen = dataio.GENERATORS[generator]
    errors = []
    _check_keys(errors, "generator params", params, {f.name for f in dataclasses.fields(cfg_cls)})
    if errors:
        raise ConfigError(errors)
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    result = gen(cfg_cls(**_gen_params(params)))
    written = []
    if isinstance(result, tuple):
        for phase, ds in zip(("train", "test"), result):
            p = out / f"{name}_{phase}.csv"
            dataio.write_csv(ds, p)
            written.append(str(p))
    else:
        p = out / f"{name}.csv"
        dataio.write_csv(result, p)
        written.append(str(p))
    print(json.dumps({"written": written}))
    return 0


def cmd_fit(args) -> int:
    doc = load_config(args.config) if args.config else {}
    if args.data is not None:
        doc["data"] = {"csv": args.data, **({"schema": doc["data"]["schema"]}
                                            if "schema" in (doc.get("data") or {}) else {})}
    doc.setdefault("classifier", {"variant": "brmm"})
    errors = validate_config(doc, allow_search=False, variants=tuple(VARIANT_PARAMS))
    if doc.get("chain"):
        errors.append("chain: fit works on raw features; transform the data first")
    if args.out is None:
        errors.append("--out: model path required")
    if errors:
        raise ConfigError(errors)
    clf = doc["classifier"]
    variant = clf.get("variant", "brmm")
    hp = dict(clf.get("hyperparams") or {})
    if args.seed is not None:
        hp["seed"] = args.seed
    train, _ = _load_source(doc["data"], 0, holdout=False)
    model = fit_model(variant, train, _hyperparams(variant, hp),
                      KernelSpec(**{k: _as_float(v) for k, v in (clf.get("kernel") or {}).items()}))
    dataio.save_model(model, args.out)
    print(json.dumps({"model": args.out, "variant": variant,
                      "converged": bool(model.info.converged)}))
    return 0


def _read_features(path, label_column: str, delimiter: str = ","):
    import csv as _csv

    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in _csv.reader(fh, delimiter=delimiter) if r]
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], rows[1:]
    li = header.index(label_column) if label_column in header else None
    X, labels = [], []
    for n, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise ValueError(f"{path}: ragged row {n}")
        try:
            X.append([float(v) for i, v in enumerate(r) if i != li])
        except ValueError:
            raise ValueError(f"{path}: non-numeric feature in row {n}") from None
        if li is not None:
            labels.append(r[li])
    return np.array(X, dtype=np.float64), (labels if li is not None else None)


def cmd_predict(args) -> int:
    errors = [f"--{k}: required" for k in ("model", "data", "out") if getattr(args, k) is None]
    if errors:
        raise ConfigError(errors)
    model = dataio.load_model(args.model)
    X, labels = _read_features(args.data, args.label_column)
    scores = model_scores(model, X)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        head = "score" if isinstance(model, PubsveModel) else "score,prediction"
        fh.write(head + (",label" if labels is not None else "") + "\n")
        for i, s in enumerate(scores):
            cells = [repr(float(s))]
            if not isinstance(model, PubsveModel):
                cells.append("1" if s > 0 else "-1")
            if labels is not None:
                cells.append(labels[i])
            fh.write(",".join(cells) + "\n")
    print(json.dumps({"predictions": args.out, "n": int(scores.shape[0])}))
    return 0


def _stage_path(out: Path, stage: int) -> Path:
    return out.with_name(f"{out.stem}.stage{stage}{out.suffix or '.csv'}")


def cmd_backtransform(args) -> int:
    errors = [f"--{k}: required" for k in ("chain", "out") if getattr(args, k) is None]
    if args.order not in FD_ORDERS:
        errors.append(f"--order: {args.order!r} not in {FD_ORDERS}")
    if errors:
        raise ConfigError(errors)
    chain = dataio.load_chain(args.chain)
    if args.anchor is not None:
        x0 = np.loadtxt(args.anchor, delimiter=",", ndmin=1)
        res = backtransform_numeric(chain, x0, args.order)
    else:
        res = backtransform(chain)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dataio.write_weight_map(res.weights, out, chain.input_shape)
    written = [str(out)]
    for stage in range(1, len(res.stage_weights)):
        p = _stage_path(out, stage)
        dataio.write_weight_map(res.stage_weights[stage], p, chain.stage_shape(stage))
        written.append(str(p))
    print(json.dumps({"offset": res.offset, "local": res.local, "written": written}))
    return 0


def cmd_rank_sensors(args) -> int:
    errors = [f"--{k}: required" for k in ("weights", "out") if getattr(args, k) is None]
    if args.mode not in RANKING_MODES:
        errors.append(f"--mode: {args.mode!r} not in {RANKING_MODES}")
    if errors:
        raise ConfigError(errors)
    W = dataio.read_weight_map(args.weights)
    ranking = sensor_ranking(W, args.mode)
    with open(args.out, "w", encoding="utf-8", newline="") as fh:
        fh.write("rank,sensor,score\n")
        for rank, s in enumerate(ranking.order):
            fh.write(f"{rank},{s},{float(ranking.scores[s])!r}\n")
    print(json.dumps({"ranking": args.out, "drop_first": ranking.order[0]}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="brmm", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, preset_help="named preset"):
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--workers", type=int, help="worker threads")
        p.add_argument("--seed", type=int, help="base seed")
        p.add_argument("--out", help="output path")
        p.add_argument("--preset", help=preset_help)
        return p

    common(sub.add_parser("run", help="run an experiment config"),
           f"built-in experiment {sorted(EXPERIMENT_PRESETS)}").set_defaults(fn=cmd_run)
    common(sub.add_parser("gridsearch", help="grid search over an experiment"),
           f"parameter grid {sorted(PRESETS)}").set_defaults(fn=_search_cmd("grid"))
    common(sub.add_parser("patternsearch", help="pattern search over an experiment"),
           f"start point {sorted(PATTERN_PRESETS)}").set_defaults(fn=_search_cmd("pattern"))
    common(sub.add_parser("gen", help="write a synthetic dataset as CSV"),
           f"dataset {sorted(GEN_PRESETS)}").set_defaults(fn=cmd_gen)
    p = common(sub.add_parser("fit", help="fit a model and save it"))
    p.add_argument("--data", help="training CSV (overrides the config's data)")
    p.set_defaults(fn=cmd_fit)
    p = common(sub.add_parser("predict", help="score a CSV with a saved model"))
    p.add_argument("--model")
    p.add_argument("--data")
    p.add_argument("--label-column", default="label")
    p.set_defaults(fn=cmd_predict)
    p = common(sub.add_parser("backtransform", help="input-domain weights of a saved chain"))
    p.add_argument("--chain")
    p.add_argument("--anchor", help="CSV row with the linearisation point")
    p.add_argument("--order", default="two_point")
    p.set_defaults(fn=cmd_backtransform)
    p = common(sub.add_parser("rank-sensors", help="rank sensors of a weight map"))
    p.add_argument("--weights")
    p.add_argument("--mode", default="classifier_weights")
    p.set_defaults(fn=cmd_rank_sensors)
    return parser


def _error_line(kind: str, message: str, errors=None) -> str:
    payload = {"type": kind, "message": message}
    if errors:
        payload["errors"] = errors
    return "error: " + json.dumps(payload)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    # non-converged fits are counted in the run summary instead
    warnings.filterwarnings("ignore", message="BRMM solver stopped", category=RuntimeWarning)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(_error_line("config", "invalid configuration", exc.errors), file=sys.stderr)
        return 2
    except (OSError, ValueError, TypeError, KeyError) as exc:
        print(_error_line(type(exc).__name__, str(exc)), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
