"""Mask generators for the three canonical missingness mechanisms.

All generators are pure functions of (inputs, seed) and return boolean
masks with True = missing. MAR/MNAR operate on a fully observed source
table so that masks can be scored against ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tabular import CONTINUOUS, FeatureSchema, MaskedTable

MECHANISMS = ("mcar", "mar", "mnar")

# elevation factor for cells inside MNAR extremes / favored self-mask cells
EXTREME_BOOST = 3.0


class RateError(ValueError):
    """Requested global missing rate cannot be reached."""


@dataclass
class MarRule:
    driver: str
    rule: str = "above-mean"   # above-mean | below-mean | percentile
    percentile: float = 50.0   # used when rule == "percentile": fires above this percentile


@dataclass
class MechanismSpec:
    mechanism: str = "mcar"
    rate: float = 0.3
    seed: int = 0
    # MAR: target column name -> rule; empty means auto-pair (see default_mar_rules)
    mar_rules: dict[str, MarRule] = field(default_factory=dict)
    # MNAR continuous: per-side extreme quantile
    mnar_quantile: float = 0.10
    # MNAR categorical: column name -> categories masked first
    mnar_categories: dict[str, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.mechanism not in MECHANISMS:
            raise ValueError(f"unknown mechanism {self.mechanism!r}")
        if not 0.0 < self.rate < 1.0:
            raise ValueError(f"rate must be in (0,1), got {self.rate}")


def gen_mcar(shape: tuple[int, int], rate: float, seed: int) -> np.ndarray:
    if not 0.0 < rate < 1.0:
        raise ValueError(f"rate must be in (0,1), got {rate}")
    rng = np.random.default_rng(seed)
    return rng.random(shape) < rate


def default_mar_rules(schema: FeatureSchema, driver_fraction: float = 0.3) -> dict[str, MarRule]:
    """Auto-pairing: the first ceil(driver_fraction*d) columns drive the rest.

    Driver columns are never masked, so the mask depends on observed values only.
    """
    d = schema.d
    n_drivers = max(1, int(np.ceil(driver_fraction * d)))
    if n_drivers >= d:
        raise ValueError("schema too small for MAR auto-pairing")
    names = schema.names
    drivers = names[:n_drivers]
    return {t: MarRule(driver=drivers[i % n_drivers]) for i, t in enumerate(names[n_drivers:])}


def _rule_fires(driver_col: np.ndarray, rule: MarRule) -> np.ndarray:
    if rule.rule == "above-mean":
        return driver_col > driver_col.mean()
    if rule.rule == "below-mean":
        return driver_col < driver_col.mean()
    if rule.rule == "percentile":
        return driver_col > np.percentile(driver_col, rule.percentile)
    raise ValueError(f"unknown MAR rule {rule.rule!r}")


def gen_mar(table: MaskedTable, rate: float, spec: MechanismSpec, seed: int) -> np.ndarray:
    """Mask target columns where their driver rule fires, subsampled to the global rate."""
    if not 0.0 < rate < 1.0:
        raise ValueError(f"rate must be in (0,1), got {rate}")
    schema = table.schema
    rules = spec.mar_rules or default_mar_rules(schema)
    name_to_idx = {c.name: i for i, c in enumerate(schema.columns)}
    n, d = table.values.shape

    eligible = np.zeros((n, d), dtype=bool)
    for target, rule in rules.items():
        if target == rule.driver:
            raise ValueError(f"MAR driver must differ from target ({target!r})")
        tj = name_to_idx[target]
        dj = name_to_idx[rule.driver]
        if table.mask[:, dj].any():
            raise ValueError(f"MAR driver column {rule.driver!r} must be fully observed")
        eligible[:, tj] = _rule_fires(table.values[:, dj], rule)

    want = int(round(rate * n * d))
    cells = np.flatnonzero(eligible)
    if cells.size < want:
        raise RateError(
            f"MAR rule fires on {cells.size} cells; maximum achievable rate is "
            f"{cells.size / (n * d):.3f} < {rate}"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.choice(cells, size=want, replace=False)
    mask = np.zeros(n * d, dtype=bool)
    mask[chosen] = True
    return mask.reshape(n, d)


def _mnar_cont_column(col: np.ndarray, rate: float, q: float, rng) -> np.ndarray:
    lo, hi = np.quantile(col, [q, 1.0 - q])
    extreme = (col <= lo) | (col >= hi)
    f_ext = extreme.mean()
    p_ext = min(1.0, EXTREME_BOOST * rate)
    if f_ext >= 1.0:
        p_out = 0.0
        p_ext = rate
    else:
        p_out = (rate - f_ext * p_ext) / (1.0 - f_ext)
        if p_out < 0.0:  # extremes alone exceed the budget; scale down inside
            p_ext = rate / f_ext
            p_out = 0.0
    probs = np.where(extreme, p_ext, p_out)
    return rng.random(col.shape) < probs


def _mnar_cat_column(col: np.ndarray, rate: float, targets: list[int], rng) -> np.ndarray:
    n = col.shape[0]
    codes, counts = np.unique(col.astype(int), return_counts=True)
    freq = dict(zip(codes.tolist(), counts.tolist()))
    order = list(targets) if targets else []
    rest = sorted((c for c in codes.tolist() if c not in order), key=lambda c: -freq[c])
    order += rest

    want = int(round(rate * n))
    mask = np.zeros(n, dtype=bool)
    got = 0
    for c in order:
        members = np.flatnonzero(col.astype(int) == c)
        if got + members.size <= want:
            mask[members] = True
            got += members.size
        else:
            take = want - got
            mask[rng.choice(members, size=take, replace=False)] = True
            got = want
        if got >= want:
            return mask
    raise RateError(f"cannot reach rate {rate} after including all categories")


def gen_mnar(table: MaskedTable, rate: float, spec: MechanismSpec, seed: int) -> np.ndarray:
    """Self-dependent masking: continuous extremes and listed categories are favored."""
    if not 0.0 < rate < 1.0:
        raise ValueError(f"rate must be in (0,1), got {rate}")
    if table.mask.any():
        raise ValueError("MNAR masks are derived from a fully observed ground-truth table")
    schema = table.schema
    rng = np.random.default_rng(seed)
    n, d = table.values.shape
    mask = np.zeros((n, d), dtype=bool)
    for j, col_spec in enumerate(schema.columns):
        col = table.values[:, j]
        if col_spec.kind == CONTINUOUS:
            mask[:, j] = _mnar_cont_column(col, rate, spec.mnar_quantile, rng)
        else:
            targets = spec.mnar_categories.get(col_spec.name, [])
            mask[:, j] = _mnar_cat_column(col, rate, targets, rng)
    return mask


def gen_mask(table: MaskedTable, spec: MechanismSpec) -> np.ndarray:
    if spec.mechanism == "mcar":
        return gen_mcar(table.values.shape, spec.rate, spec.seed)
    if spec.mechanism == "mar":
        return gen_mar(table, spec.rate, spec, spec.seed)
    return gen_mnar(table, spec.rate, spec, spec.seed)


def _self_mask_weights(values: np.ndarray, mask: np.ndarray, schema: FeatureSchema,
                       scheme: str) -> np.ndarray:
    """Unnormalized per-cell weights biasing which observed cells become pseudo-targets."""
    n, d = values.shape
    w = np.ones((n, d))
    if scheme == "mcar":
        return w
    if scheme == "mar":
        # favor rows whose neighbor column (j+1 mod d) is above its observed mean
        for j in range(d):
            dj = (j + 1) % d
            col = values[:, dj]
            obs = ~mask[:, dj]
            if obs.sum() == 0:
                continue
            fired = (col > col[obs].mean()) & obs
            w[fired, j] = EXTREME_BOOST
        return w
    if scheme == "mnar":
        # favor a cell's own extreme/frequent value
        for j, col_spec in enumerate(schema.columns):
            col = values[:, j]
            obs = ~mask[:, j]
            if obs.sum() == 0:
                continue
            if col_spec.kind == CONTINUOUS:
                lo, hi = np.quantile(col[obs], [0.10, 0.90])
                fired = ((col <= lo) | (col >= hi)) & obs
            else:
                codes, counts = np.unique(col[obs].astype(int), return_counts=True)
                top = codes[np.argmax(counts)]
                fired = (col == top) & obs
            w[fired, j] = EXTREME_BOOST
        return w
    raise ValueError(f"unknown self-mask scheme {scheme!r}")


def self_mask_augment(values: np.ndarray, mask: np.ndarray, schema: FeatureSchema,
                      ratio: float, scheme: str, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Temporarily hide a fraction of observed cells as pseudo-missing targets.

    Returns (augmented mask, pseudo-target indicator). Originally missing
    cells are never pseudo-targets; the number of newly hidden cells is
    round(ratio * #observed).
    """
    if not 0.0 <= ratio < 1.0:
        raise ValueError(f"self-mask ratio must be in [0,1), got {ratio}")
    mask = np.asarray(mask, dtype=bool)
    pseudo = np.zeros_like(mask)
    if ratio == 0.0:
        return mask.copy(), pseudo

    observed = np.flatnonzero(~mask)
    take = int(round(ratio * observed.size))
    if take == 0:
        return mask.copy(), pseudo

    rng = np.random.default_rng(seed)
    if scheme == "mcar":
        chosen = rng.choice(observed, size=take, replace=False)
    else:
        w = _self_mask_weights(values, mask, schema, scheme).ravel()[observed]
        chosen = rng.choice(observed, size=take, replace=False, p=w / w.sum())
    pseudo.ravel()[chosen] = True
    return mask | pseudo, pseudo


def achieved_rate(mask: np.ndarray) -> float:
    mask = np.asarray(mask)
    if mask.size == 0:
        raise ValueError("empty mask")
    return float(mask.mean())


def save_mask(mask: np.ndarray, schema: FeatureSchema, path) -> None:
    import csv
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(schema.names)
        for row in np.asarray(mask, dtype=int):
            writer.writerow(row.tolist())


def load_mask(path, schema: FeatureSchema) -> np.ndarray:
    import csv
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != schema.names:
            raise ValueError("mask header does not match schema")
        rows = [[int(tok) for tok in row] for row in reader]
    mask = np.array(rows, dtype=int)
    if not np.isin(mask, (0, 1)).all():
        raise ValueError("mask file must contain only 0/1")
    return mask.astype(bool)
