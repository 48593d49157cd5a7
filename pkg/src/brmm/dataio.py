"""CSV ingestion, synthetic generators, model files and result tables.

Random numbers come from ``numpy.random.default_rng(seed)`` (PCG64); the
draw order of each generator is part of its documented behaviour.  Model
and chain files are YAML documents carrying ``format`` and ``version``.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import yaml

from .core import Dataset, FitInfo, HyperParams, KernelSpec

# --------------------------------------------------------------------------
# CSV


@dataclass(frozen=True)
class CsvSchema:
    """Layout of a delimited data file.

    ``label_map`` maps raw label strings to +1/-1.  Without it, numeric
    labels already in {-1, +1} are kept and anything else maps by order of
    first appearance (first class -> +1).  ``label_kind="real"`` keeps the
    label column as real-valued targets.  Without a header the last column
    is the label.
    """

    delimiter: str = ","
    label_column: str = "label"
    label_map: Mapping[str, int] | None = None
    header: bool = True
    label_kind: str = "binary"

    def __post_init__(self):
        if self.label_kind not in ("binary", "real"):
            raise ValueError("label_kind must be 'binary' or 'real'")


def _canonical_labels(raw: list[str], schema: CsvSchema) -> np.ndarray:
    if schema.label_kind == "real":
        try:
            return np.array([float(v) for v in raw])
        except ValueError as exc:
            raise ValueError(f"non-numeric target: {exc}") from None
    if schema.label_map is not None:
        mapping = {str(k): int(v) for k, v in schema.label_map.items()}
        missing = sorted(set(raw) - set(mapping))
        if missing:
            raise ValueError(f"labels without mapping: {missing}")
        if not set(mapping.values()) <= {-1, 1}:
            raise ValueError("label_map values must be +1 or -1")
        return np.array([mapping[v] for v in raw], dtype=np.float64)
    try:
        numeric = [float(v) for v in raw]
        if set(numeric) <= {-1.0, 1.0}:
            return np.array(numeric)
    except ValueError:
        pass
    seen: list[str] = []
    for v in raw:
        if v not in seen:
            seen.append(v)
    if len(seen) > 2:
        raise ValueError(f"more than two classes: {seen}")
    return np.array([1.0 if v == seen[0] else -1.0 for v in raw])


def load_csv(path, schema: CsvSchema = CsvSchema()) -> Dataset:
    """Read a labelled dataset; row order is preserved."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh, delimiter=schema.delimiter) if r]
    if schema.header:
        if not rows:
            raise ValueError("empty file")
        header, rows = rows[0], rows[1:]
        if schema.label_column not in header:
            raise ValueError(f"missing label column {schema.label_column!r}")
        li = header.index(schema.label_column)
        width = len(header)
    else:
        if not rows:
            raise ValueError("empty file")
        width = len(rows[0])
        li = width - 1
    if not rows:
        raise ValueError("no data rows")
    feats, labels = [], []
    for n, r in enumerate(rows, start=2 if schema.header else 1):
        if len(r) != width:
            raise ValueError(f"ragged row {n}: {len(r)} fields, expected {width}")
        try:
            feats.append([float(v) for i, v in enumerate(r) if i != li])
        except ValueError:
            raise ValueError(f"non-numeric feature in row {n}") from None
        labels.append(r[li].strip())
    return Dataset(np.array(feats, dtype=np.float64), _canonical_labels(labels, schema))


def _fmt(v: float) -> str:
    return repr(float(v))


def write_csv(data: Dataset, path, schema: CsvSchema = CsvSchema(),
              feature_names: Sequence[str] | None = None) -> None:
    """Write with ``repr`` floats so that loading restores every bit."""
    names = list(feature_names) if feature_names else [f"f{i}" for i in range(data.dimension)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=schema.delimiter, lineterminator="\n")
        if schema.header:
            w.writerow(names + [schema.label_column])
        for x, y in zip(data.X, data.y):
            lab = _fmt(y) if schema.label_kind == "real" else str(int(y))
            w.writerow([_fmt(v) for v in x] + [lab])


# --------------------------------------------------------------------------
# generators


@dataclass(frozen=True)
class GaussPairConfig:
    """Two Gaussians with a shared covariance; class +1 around ``mu1``."""

    mu1: tuple[float, float] = (1.0, 1.0)
    mu2: tuple[float, float] = (19.0, 13.0)
    cov: tuple[tuple[float, float], tuple[float, float]] = ((17.0, 15.0), (15.0, 17.0))
    n: int = 3000
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")


def gen_gaussian_pair(cfg: GaussPairConfig = GaussPairConfig()) -> Dataset:
    """Samples alternate between the classes, starting with +1.

    Draws: one ``(2n, m)`` standard normal block, row ``2i`` for class +1
    and row ``2i + 1`` for class -1, coloured by the Cholesky factor.
    """
    cov = np.asarray(cfg.cov, dtype=np.float64)
    if not np.allclose(cov, cov.T):
        raise ValueError("covariance must be symmetric")
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        raise ValueError("covariance must be positive definite") from None
    rng = np.random.default_rng(cfg.seed)
    Z = rng.standard_normal((2 * cfg.n, cov.shape[0]))
    means = np.empty((2 * cfg.n, cov.shape[0]))
    means[0::2] = cfg.mu1
    means[1::2] = cfg.mu2
    y = np.tile([1.0, -1.0], cfg.n)
    return Dataset(means + Z @ L.T, y)


@dataclass(frozen=True)
class DriftGenConfig:
    """Class +1 around ``mu1``; class -1 around ``(t, 0.5)`` with ``t`` drifting."""

    mu1: tuple[float, float] = (0.0, -0.5)
    mu2_y: float = 0.5
    var_x: float = 1.0
    var_y: float = 0.1
    train_drift: tuple[float, float] = (8.0, 6.0)
    test_drift: tuple[float, float] = (4.0, 2.0)
    n: int = 1000
    noise_features: int = 0
    cauchy_noise: bool = False
    cauchy_loc: float = 0.0
    cauchy_scale: float = 0.1
    cauchy_clip: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not (self.var_x > 0 and self.var_y > 0):
            raise ValueError("variances must be positive")
        if self.noise_features < 0:
            raise ValueError("noise_features must be >= 0")


def _drift_phase(rng, cfg: DriftGenConfig, drift: tuple[float, float]) -> Dataset:
    n = cfg.n
    frac = np.arange(n) / (n - 1) if n > 1 else np.zeros(1)
    t = drift[0] + (drift[1] - drift[0]) * frac
    std = np.sqrt([cfg.var_x, cfg.var_y])
    Z = rng.standard_normal((2 * n, 2)) * std
    base = np.empty((2 * n, 2))
    base[0::2] = cfg.mu1
    base[1::2, 0] = t
    base[1::2, 1] = cfg.mu2_y
    X = base + Z
    if cfg.noise_features:
        X = np.hstack([X, rng.uniform(0.0, 1.0, size=(2 * n, cfg.noise_features))])
    if cfg.cauchy_noise:
        noise = cfg.cauchy_loc + cfg.cauchy_scale * rng.standard_cauchy(X.shape)
        X = X + np.clip(noise, -cfg.cauchy_clip, cfg.cauchy_clip)
    return Dataset(X, np.tile([1.0, -1.0], n))


def gen_drift(cfg: DriftGenConfig = DriftGenConfig()) -> tuple[Dataset, Dataset]:
    """Training and test phase of the drift scenario.

    Classes alternate (+1 first); the ``i``-th sample pair of a phase uses
    ``t_i = t_start + (t_end - t_start) i / (n - 1)``.  Draw order per
    phase: core normals, uniform noise features, Cauchy noise (added to every
    component and clipped to ``+-cauchy_clip``).  Training is drawn first.
    """
    rng = np.random.default_rng(cfg.seed)
    train = _drift_phase(rng, cfg, cfg.train_drift)
    test = _drift_phase(rng, cfg, cfg.test_drift)
    return train, test


GENERATORS = {"gaussian_pair": (GaussPairConfig, gen_gaussian_pair),
              "drift": (DriftGenConfig, gen_drift)}


# --------------------------------------------------------------------------
# result tables


@dataclass
class ResultTable:
    """Rows of parameter values and metric values, kept in insertion order."""

    param_names: tuple[str, ...]
    metric_names: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)

    def add(self, params: Mapping, metrics: Mapping) -> None:
        self.rows.append(tuple(params.get(p) for p in self.param_names)
                         + tuple(metrics.get(m) for m in self.metric_names))

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(self.param_names) + tuple(self.metric_names)


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt(v)
    return str(v)


def format_results(table: ResultTable, config: Mapping | None = None,
                   delimiter: str = ",") -> str:
    """Comment lines echoing ``config`` (``# `` prefixed YAML), then the table."""
    buf = io.StringIO()
    if config is not None:
        for line in yaml.safe_dump(_plain(config), sort_keys=True).splitlines():
            buf.write(f"# {line}\n")
    w = csv.writer(buf, delimiter=delimiter, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_results(table: ResultTable, path, config: Mapping | None = None,
                  delimiter: str = ",") -> None:
    text = format_results(table, config, delimiter)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def read_results(path, delimiter: str = ","):
    """Return ``(columns, rows)`` with the comment header skipped."""
    with open(path, encoding="utf-8", newline="") as fh:
        lines = [ln for ln in fh if not ln.startswith("#")]
    rows = list(csv.reader(lines, delimiter=delimiter))
    return tuple(rows[0]), [tuple(r) for r in rows[1:]]


# --------------------------------------------------------------------------
# YAML helpers, models and chains

MODEL_FORMAT = "brmm-model"
CHAIN_FORMAT = "brmm-chain"
FORMAT_VERSION = 1


def _plain(obj):
    """Convert to YAML-safe builtins; floats keep full precision."""
    if isinstance(obj, Mapping):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def _num(v) -> float:
    if isinstance(v, str):
        return float(v)
    return float(v)


def _check_header(doc, fmt: str) -> None:
    if not isinstance(doc, Mapping) or doc.get("format") != fmt:
        raise ValueError(f"not a {fmt} document")
    if doc.get("version") != FORMAT_VERSION:
        raise ValueError(f"unsupported {fmt} version {doc.get('version')!r}; "
                         f"expected {FORMAT_VERSION}")


def _dump(doc: Mapping, path) -> None:
    text = yaml.safe_dump(_plain(doc), sort_keys=False)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _load(path):
    with open(path, encoding="utf-8") as fh:
        return yaml.safe_load(fh)


def model_to_dict(model) -> dict:
    from .batch import DualModel, PubsveModel
    from .oneclass import OneClassModel

    base = {"format": MODEL_FORMAT, "version": FORMAT_VERSION}
    if isinstance(model, DualModel):
        base.update(type="brmm", H=model.H, kernel=model.kernel.to_dict(),
                    alphas=model.alphas, betas=model.betas, support_X=model.support_X,
                    support_y=model.support_y,
                    hyperparams=model.hyperparams.to_dict() if model.hyperparams else None,
                    w=model.w, b=model.b)
    elif isinstance(model, OneClassModel):
        base.update(type="oneclass", kernel=model.kernel.to_dict(), R=model.R, C=model.C,
                    loss_order=model.loss_order, alphas=model.alphas, betas=model.betas,
                    support_X=model.support_X, w=model.w)
    elif isinstance(model, PubsveModel):
        base.update(type="pubsve", kernel=model.kernel.to_dict(), H=model.H, b=model.b,
                    C=model.C, loss_order=model.loss_order, alphas=model.alphas,
                    support_X=model.support_X, support_y=model.support_y)
    else:
        raise TypeError(f"cannot serialise {type(model).__name__}")
    return base


def _arr(v, dim=None) -> np.ndarray:
    a = np.asarray(v if v is not None else [], dtype=np.float64)
    if dim is not None and a.size == 0:
        a = a.reshape(0, dim)
    return a


def model_from_dict(doc: Mapping):
    from .batch import DualModel, PubsveModel
    from .oneclass import OneClassModel

    _check_header(doc, MODEL_FORMAT)
    kernel = KernelSpec.from_dict(doc["kernel"])
    kind = doc.get("type")
    if kind == "brmm":
        hp = HyperParams.from_dict(doc["hyperparams"]) if doc.get("hyperparams") else None
        w = None if doc.get("w") is None else _arr(doc["w"])
        dim = w.shape[0] if w is not None else None
        return DualModel(alphas=_arr(doc["alphas"]), betas=_arr(doc["betas"]),
                         support_X=_arr(doc["support_X"], dim), support_y=_arr(doc["support_y"]),
                         kernel=kernel, H=_num(doc["H"]), w=w,
                         b=None if doc.get("b") is None else _num(doc["b"]), hyperparams=hp,
                         info=FitInfo())
    if kind == "oneclass":
        w = None if doc.get("w") is None else _arr(doc["w"])
        dim = w.shape[0] if w is not None else None
        return OneClassModel(alphas=_arr(doc["alphas"]), betas=_arr(doc["betas"]),
                             support_X=_arr(doc["support_X"], dim), kernel=kernel,
                             R=_num(doc["R"]), C=_num(doc["C"]), loss_order=doc["loss_order"],
                             w=w)
    if kind == "pubsve":
        return PubsveModel(alphas=_arr(doc["alphas"]), support_X=_arr(doc["support_X"]),
                           support_y=_arr(doc["support_y"]), kernel=kernel, H=_num(doc["H"]),
                           b=_num(doc["b"]), C=_num(doc["C"]), loss_order=doc["loss_order"])
    raise ValueError(f"unknown model type {kind!r}")


def save_model(model, path) -> None:
    _dump(model_to_dict(model), path)


def load_model(path):
    return model_from_dict(_load(path))


def chain_to_dict(chain) -> dict:
    """Affine chains only; each node stores ``A``, ``T`` and its kind."""
    from .chains import AffineNode

    nodes = []
    for node in chain.nodes:
        if not isinstance(node, AffineNode):
            raise TypeError("only affine nodes can be serialised")
        nodes.append({"kind": node.kind, "A": node.A, "T": node.T,
                      "out_shape": list(node.out_shape) if node.out_shape else None})
    return {"format": CHAIN_FORMAT, "version": FORMAT_VERSION,
            "input_shape": list(chain.input_shape) if chain.input_shape else None,
            "nodes": nodes}


def build_node(spec: Mapping):
    """Node from a config entry: either explicit ``A``/``T`` or a constructor."""
    from . import chains as ch

    spec = dict(spec)
    kind = spec.pop("kind", "generic_affine")
    if "A" in spec:
        shape = spec.get("out_shape")
        return ch.AffineNode(np.asarray(spec["A"], dtype=np.float64),
                             np.asarray(spec.get("T", np.zeros(len(spec["A"]))), dtype=np.float64),
                             kind=kind, out_shape=tuple(shape) if shape else None)
    builders = {
        "standardization": lambda s: ch.standardization_node(s["mean"], s["std"]),
        "feature_scaling": lambda s: ch.feature_scaling_node(s["scale"], s.get("offset")),
        "temporal_fir": lambda s: ch.temporal_fir_node(s["coeffs"], s["n_time"], s["n_sensors"]),
        "decimation": lambda s: ch.decimation_node(s["factor"], s["n_time"], s["n_sensors"],
                                                   s.get("coeffs")),
        "spatial_filter": lambda s: ch.spatial_filter_node(s["filters"], s["n_time"]),
        "linear_decision": lambda s: ch.linear_decision_node(s["w"], s.get("b", 0.0)),
    }
    if kind not in builders:
        raise ValueError(f"node kind {kind!r} needs explicit A and T")
    try:
        return builders[kind](spec)
    except KeyError as exc:
        raise ValueError(f"node {kind!r} is missing parameter {exc}") from None


def chain_from_dict(doc: Mapping):
    from .chains import ProcessingChain

    _check_header(doc, CHAIN_FORMAT)
    shape = doc.get("input_shape")
    return ProcessingChain(tuple(build_node(n) for n in doc["nodes"]),
                           input_shape=tuple(shape) if shape else None)


def save_chain(chain, path) -> None:
    _dump(chain_to_dict(chain), path)


def load_chain(path):
    return chain_from_dict(_load(path))


def write_weight_map(weights, path, shape: tuple[int, int] | None = None,
                     delimiter: str = ",") -> None:
    """One row per time index, one column per sensor."""
    W = np.asarray(weights, dtype=np.float64)
    if shape is not None:
        W = W.reshape(shape)
    W = np.atleast_2d(W)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, delimiter=delimiter, lineterminator="\n")
        w.writerow([f"s{h}" for h in range(W.shape[1])])
        for row in W:
            w.writerow([_fmt(v) for v in row])


def read_weight_map(path, delimiter: str = ",") -> np.ndarray:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh, delimiter=delimiter))
    return np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
