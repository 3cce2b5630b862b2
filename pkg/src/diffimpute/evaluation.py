"""Imputation metrics, the mean/mode reference imputer, a small downstream
harness, and wall-clock benchmarking.

Per-column errors follow the column kind: RMSE for continuous (computed in
z-units by the report builder so columns average on a common scale),
misclassification rate for categorical, and displacement |X - Xhat| / R for
ordinal. AvgErr is the mean over columns that have at least one evaluated
cell.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from .denoiser import OptimizerState, grad_step
from .tabular import CATEGORICAL, CONTINUOUS, ORDINAL, MaskedTable


def rmse_err(truth: np.ndarray, imputed: np.ndarray, mask: np.ndarray) -> float:
    """Root mean squared deviation over masked cells (units of the inputs)."""
    m = np.asarray(mask, dtype=bool)
    if m.sum() == 0:
        raise ValueError("no masked cells to evaluate")
    diff = truth[m] - imputed[m]
    return float(np.sqrt(np.mean(diff ** 2)))


def cat_err(truth: np.ndarray, imputed: np.ndarray, mask: np.ndarray) -> float:
    m = np.asarray(mask, dtype=bool)
    if m.sum() == 0:
        raise ValueError("no masked cells to evaluate")
    return float(np.mean(truth[m].astype(int) != imputed[m].astype(int)))


def ord_err(truth: np.ndarray, imputed: np.ndarray, mask: np.ndarray, levels: int) -> float:
    m = np.asarray(mask, dtype=bool)
    if m.sum() == 0:
        raise ValueError("no masked cells to evaluate")
    return float(np.mean(np.abs(truth[m] - imputed[m]) / levels))


def avg_err(per_column: dict[str, float]) -> float:
    if not per_column:
        raise ValueError("no columns with evaluated cells")
    return float(np.mean(list(per_column.values())))


@dataclass
class MetricReport:
    per_column: dict[str, float]
    avg_err: float
    rmse_mean: float | None = None
    cat_err_mean: float | None = None
    ord_err_mean: float | None = None
    downstream: float | None = None
    downstream_kind: str | None = None
    seconds: float | None = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {
            "avg_err": self.avg_err,
            "per_column": self.per_column,
            "rmse_mean": self.rmse_mean,
            "cat_err_mean": self.cat_err_mean,
            "ord_err_mean": self.ord_err_mean,
            "downstream": self.downstream,
            "downstream_kind": self.downstream_kind,
            "seconds": self.seconds,
            **self.extra,
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def csv_row(self) -> dict:
        row = {"avg_err": self.avg_err}
        for k in ("rmse_mean", "cat_err_mean", "ord_err_mean", "downstream", "seconds"):
            v = getattr(self, k)
            if v is not None:
                row[k] = v
        return row


def evaluate_imputation(truth: MaskedTable, imputed: MaskedTable,
                        eval_mask: np.ndarray) -> MetricReport:
    """Score an imputed table against ground truth on the masked cells.

    Continuous columns are compared in z-units using mean/std fitted on the
    truth cells outside the evaluation mask (the entries an imputer could
    observe), so the per-column errors are scale-comparable.
    """
    schema = truth.schema
    eval_mask = np.asarray(eval_mask, dtype=bool)
    per_col: dict[str, float] = {}
    kinds: dict[str, str] = {}
    for j, col in enumerate(schema.columns):
        m = eval_mask[:, j]
        if m.sum() == 0:
            continue
        t_col = truth.values[:, j]
        i_col = imputed.values[:, j]
        if col.kind == CONTINUOUS:
            obs = t_col[~m]
            loc = obs.mean() if obs.size else t_col.mean()
            scale = obs.std() if obs.size and obs.std() > 0 else (t_col.std() or 1.0)
            per_col[col.name] = rmse_err((t_col - loc) / scale, (i_col - loc) / scale, m)
        elif col.kind == ORDINAL:
            per_col[col.name] = ord_err(t_col, i_col, m, col.cardinality)
        else:
            per_col[col.name] = cat_err(t_col, i_col, m)
        kinds[col.name] = col.kind

    def kind_mean(kind):
        vals = [v for name, v in per_col.items() if kinds[name] == kind]
        return float(np.mean(vals)) if vals else None

    return MetricReport(
        per_column=per_col,
        avg_err=avg_err(per_col),
        rmse_mean=kind_mean(CONTINUOUS),
        cat_err_mean=kind_mean(CATEGORICAL),
        ord_err_mean=kind_mean(ORDINAL),
    )


def mean_mode_baseline(table: MaskedTable) -> MaskedTable:
    """Fill continuous cells with the observed column mean and discrete cells
    with the observed mode (ties break to the lowest category)."""
    values = table.values.copy()
    for j, col in enumerate(table.schema.columns):
        miss = table.mask[:, j]
        if not miss.any():
            continue
        obs = table.values[~miss, j]
        if obs.size == 0:
            raise ValueError(f"column {col.name!r} has no observed entries")
        if col.kind == CONTINUOUS:
            values[miss, j] = obs.mean()
        else:
            counts = np.bincount(obs.astype(int), minlength=col.cardinality + 1)[1:]
            values[miss, j] = float(np.argmax(counts) + 1)
    return MaskedTable(values, np.zeros_like(table.mask), table.schema)


# ---------------------------------------------------------------------------
# downstream harness: simple linear predictors trained with the same optimizer
# as the denoisers

_LR_STAGES = ((0.1, 800), (0.01, 800), (1e-3, 800), (1e-4, 400),
              (1e-5, 400), (1e-6, 300), (1e-7, 300), (1e-8, 200))


def _fit_linear(x: np.ndarray, y: np.ndarray, n_out: int, loss: str,
                weight_decay: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    w = 0.01 * rng.standard_normal((x.shape[1], n_out))
    b = np.zeros(n_out)
    params = {"w": w, "b": b}
    n = x.shape[0]
    for lr, steps in _LR_STAGES:
        state = OptimizerState.for_params(params, lr=lr, weight_decay=weight_decay)
        for _ in range(steps):
            z = x @ params["w"] + params["b"]
            if loss == "squared":
                g = 2.0 * (z - y) / n
            else:  # softmax cross-entropy, y holds class indices
                z = z - z.max(axis=1, keepdims=True)
                p = np.exp(z)
                p /= p.sum(axis=1, keepdims=True)
                p[np.arange(n), y.astype(int)] -= 1.0
                g = p / n
            grads = {"w": x.T @ g, "b": g.sum(axis=0)}
            params, state = grad_step(params, state, grads)
    return params["w"], params["b"]


def f1_macro(y_true: np.ndarray, y_pred: np.ndarray) -> float:
    classes = np.unique(y_true)
    scores = []
    for c in classes:
        tp = np.sum((y_pred == c) & (y_true == c))
        fp = np.sum((y_pred == c) & (y_true != c))
        fn = np.sum((y_pred != c) & (y_true == c))
        denom = 2 * tp + fp + fn
        scores.append(2 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def downstream_eval(features: np.ndarray, labels: np.ndarray, task: str, seed: int = 0,
                    weight_decay: float = 1e-6) -> float:
    """Train a linear predictor on imputed features; report held-out F1 or MAE.

    The label column must be withheld from imputation by the caller. Features
    are z-scored internally; the split is 80/20 by seed.
    """
    if task not in ("classify", "regress"):
        raise ValueError("task must be 'classify' or 'regress'")
    x = np.asarray(features, dtype=float)
    y = np.asarray(labels, dtype=float)
    mu, sd = x.mean(axis=0), x.std(axis=0)
    sd[sd == 0] = 1.0
    x = (x - mu) / sd

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(y))
    n_test = max(1, int(round(0.2 * len(y))))
    test, tr = order[:n_test], order[n_test:]

    if task == "classify":
        classes = np.unique(y)
        if len(classes) < 2:
            raise ValueError("labels contain a single class")
        remap = {c: i for i, c in enumerate(classes)}
        yi = np.array([remap[v] for v in y])
        w, b = _fit_linear(x[tr], yi[tr], len(classes), "softmax", weight_decay, seed)
        pred = np.argmax(x[test] @ w + b, axis=1)
        return f1_macro(yi[test], pred)

    w, b = _fit_linear(x[tr], y[tr, None], 1, "squared", weight_decay, seed)
    pred = (x[test] @ w + b).ravel()
    return float(np.mean(np.abs(pred - y[test])))


def timing_bench(imputer_fn, repetitions: int = 3) -> float:
    """Median wall-clock seconds of calling imputer_fn() (training excluded)."""
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    times = []
    for _ in range(repetitions):
        start = time.perf_counter()
        imputer_fn()
        times.append(time.perf_counter() - start)
    return float(np.median(times))
