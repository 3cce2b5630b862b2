"""Joint training with self-masking and two-channel imputation.

Both channels share one conditioning context built from the non-hidden
observed cells. Cross-channel estimates are exchanged through dedicated
context slots: during training each batch sees either zeros or stop-gradient
one-shot estimates from the other channel (coin flip), and during sampling
the channels alternate full passes (continuous first) or exchange estimates
at every reverse step, depending on the configured mode.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from . import continuous as cont_ch
from . import discrete as disc_ch
from .continuous import X0_CLIP, X0_SHRINK
from .denoiser import (ConditioningContext, OptimizerState, grad_step, init_mlp,
                       cont_input_dim, disc_input_dim, predict_noise, predict_logits)
from .missingness import self_mask_augment
from .schedule import NoiseSchedule, cosine_schedule, discrete_schedule, make_subsequence
from .tabular import (CATEGORICAL, CONTINUOUS, ColumnSpec, EncodedBatch, FeatureSchema,
                      MaskedTable, Standardizer, cat_block_slices, encode_batch)

CHECKPOINT_VERSION = 1

MODEL_KINDS = ("full", "cont_only", "disc_only")
DISC_ONLY_BINS = 10


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    T: int = 100
    epochs: int = 300
    patience: int = 20
    self_mask_ratio: float = 0.3
    self_mask_scheme: str = "mcar"
    learning_rate: float = 1e-4
    batch_size: int = 64
    weight_decay: float = 1e-4
    seed: int = 0
    val_fraction: float = 0.1
    hidden_width: int = 256
    hidden_layers: int = 2
    time_spacing: str = "uniform"
    model_kind: str = "full"
    # "zero" / "mean": train without self-masking, supervising on the
    # originally missing cells filled by that constant (ablation arms)
    fill_supervision: str | None = None
    cross_estimate_prob: float = 1.0

    def __post_init__(self):
        if self.model_kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.model_kind!r}")
        if not 0.0 <= self.self_mask_ratio < 1.0:
            raise ValueError("self-mask ratio must lie in [0,1)")
        if self.fill_supervision not in (None, "zero", "mean"):
            raise ValueError("fill_supervision must be None, 'zero' or 'mean'")
        if self.fill_supervision is None and self.self_mask_ratio == 0.0:
            raise ValueError(
                "self-mask ratio 0 leaves no pseudo-targets to supervise; "
                "set self_mask_ratio > 0 (or pick a fill_supervision arm)"
            )
        if self.T < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ValueError("T, epochs and batch_size must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0,1)")


def child_seed(*parts: int) -> int:
    return int(np.random.SeedSequence(tuple(int(p) for p in parts)).generate_state(1)[0])


# ---------------------------------------------------------------------------
# model views: how single-channel ablation variants reshape the table


@dataclass
class ModelView:
    """Maps the base table into the layout a model kind actually diffuses.

    full: identity. cont_only: categorical columns become K 0/1 columns
    treated as continuous (decoded by argmax). disc_only: continuous columns
    become quantile-bin codes (decoded to bin midpoints).
    """

    kind: str
    base_schema: FeatureSchema
    view_schema: FeatureSchema
    bin_edges: list[np.ndarray] = field(default_factory=list)

    def to_view(self, values: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.kind == "full":
            return values.copy(), mask.copy()
        n = values.shape[0]
        if self.kind == "cont_only":
            cols, mcols = [], []
            for j, col in enumerate(self.base_schema.columns):
                if col.kind == CONTINUOUS:
                    cols.append(values[:, j:j + 1])
                    mcols.append(mask[:, j:j + 1])
                else:
                    k = col.cardinality
                    block = np.zeros((n, k))
                    obs = ~mask[:, j]
                    block[np.nonzero(obs)[0], values[obs, j].astype(int) - 1] = 1.0
                    block[mask[:, j]] = np.nan
                    cols.append(block)
                    mcols.append(np.repeat(mask[:, j:j + 1], k, axis=1))
            return np.hstack(cols), np.hstack(mcols)
        # disc_only
        out = values.copy()
        ci = 0
        for j, col in enumerate(self.base_schema.columns):
            if col.kind != CONTINUOUS:
                continue
            edges = self.bin_edges[ci]
            inner = edges[1:-1]
            codes = np.searchsorted(inner, values[:, j], side="right") + 1.0
            codes = np.clip(codes, 1, len(edges) - 1)
            out[:, j] = np.where(mask[:, j], np.nan, codes)
            ci += 1
        return out, mask.copy()

    def from_view(self, view_values: np.ndarray) -> np.ndarray:
        if self.kind == "full":
            return view_values.copy()
        n = view_values.shape[0]
        out = np.empty((n, self.base_schema.d))
        if self.kind == "cont_only":
            pos = 0
            for j, col in enumerate(self.base_schema.columns):
                if col.kind == CONTINUOUS:
                    out[:, j] = view_values[:, pos]
                    pos += 1
                else:
                    k = col.cardinality
                    out[:, j] = np.argmax(view_values[:, pos:pos + k], axis=1) + 1.0
                    pos += k
            return out
        ci = 0
        for j, col in enumerate(self.base_schema.columns):
            if col.kind != CONTINUOUS:
                out[:, j] = view_values[:, j]
                continue
            edges = self.bin_edges[ci]
            mids = (edges[:-1] + edges[1:]) / 2.0
            codes = np.clip(view_values[:, j].astype(int) - 1, 0, len(mids) - 1)
            out[:, j] = mids[codes]
            ci += 1
        return out


def _cont_only_schema(base: FeatureSchema) -> FeatureSchema:
    cols = []
    for col in base.columns:
        if col.kind == CONTINUOUS:
            cols.append(col)
        else:
            cols.extend(ColumnSpec(f"{col.name}__k{i + 1}", CONTINUOUS)
                        for i in range(col.cardinality))
    return FeatureSchema(tuple(cols))


def _disc_only_schema(base: FeatureSchema, edges: list[np.ndarray]) -> FeatureSchema:
    cols, ci = [], 0
    for col in base.columns:
        if col.kind == CONTINUOUS:
            cols.append(ColumnSpec(col.name, CATEGORICAL, len(edges[ci]) - 1))
            ci += 1
        else:
            cols.append(col)
    return FeatureSchema(tuple(cols))


def make_view(kind: str, schema: FeatureSchema, table: MaskedTable | None = None,
              bin_edges: list[np.ndarray] | None = None) -> ModelView:
    """Build a view; disc_only needs either a table (to fit bins) or stored edges."""
    if kind == "full":
        return ModelView(kind, schema, schema)
    if kind == "cont_only":
        return ModelView(kind, schema, _cont_only_schema(schema))
    if kind == "disc_only":
        if bin_edges is None:
            if table is None:
                raise ValueError("disc_only view needs a table to fit bin edges")
            bin_edges = []
            for j, col in enumerate(schema.columns):
                if col.kind != CONTINUOUS:
                    continue
                obs = table.values[~table.mask[:, j], j]
                if obs.size == 0:
                    raise ValueError(f"column {col.name!r} has no observed entries")
                qs = np.unique(np.quantile(obs, np.linspace(0, 1, DISC_ONLY_BINS + 1)))
                if len(qs) < 3:
                    raise ValueError(f"column {col.name!r} is too coarse to bin")
                bin_edges.append(qs)
        return ModelView(kind, schema, _disc_only_schema(schema, bin_edges),
                         bin_edges=bin_edges)
    raise ValueError(f"unknown model kind {kind!r}")


def _fit_view_standardizer(view: ModelView, view_table: MaskedTable) -> Standardizer:
    std = Standardizer.fit(view_table) if len(view_table.schema.cont_idx) else Standardizer(
        np.zeros(0), np.ones(0))
    if view.kind == "cont_only":
        # one-hot derived columns stay in raw 0/1 units
        is_onehot = np.array(["__k" in c.name for c in view_table.schema.columns
                              if c.kind == CONTINUOUS])
        std.mean[is_onehot] = 0.0
        std.std[is_onehot] = 1.0
    return std


# ---------------------------------------------------------------------------
# conditioning


def build_context(enc: EncodedBatch, hidden_mask: np.ndarray) -> ConditioningContext:
    """Context exposing exactly the cells not hidden by hidden_mask (True = hidden)."""
    schema = enc.schema
    cont_idx, cat_idx = schema.cont_idx, schema.cat_idx
    hid_cont = hidden_mask[:, cont_idx] if len(cont_idx) else np.zeros((enc.cont.shape[0], 0), bool)
    hid_cat = hidden_mask[:, cat_idx] if len(cat_idx) else np.zeros((enc.cont.shape[0], 0), bool)
    obs_cont = np.where(hid_cont, 0.0, enc.cont)
    obs_cat = enc.cat.copy()
    for j, sl in enumerate(enc.cat_slices):
        obs_cat[:, sl] = np.where(hid_cat[:, j:j + 1], 0.0, obs_cat[:, sl])
    return ConditioningContext(
        obs_cont=obs_cont,
        obs_cont_mask=(~hid_cont).astype(float),
        obs_cat=obs_cat,
        obs_cat_mask=(~hid_cat).astype(float),
        cross_cont=np.zeros_like(obs_cont),
        cross_cat=np.zeros_like(obs_cat),
    )


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    schema: FeatureSchema
    config: TrainConfig
    standardizer: Standardizer
    sched_cont: NoiseSchedule | None
    sched_disc: NoiseSchedule | None
    params_cont: dict[str, np.ndarray] | None
    params_disc: dict[str, np.ndarray] | None
    history: list[tuple[int, float, float]]
    bin_edges: list[np.ndarray] = field(default_factory=list)
    # measured validation noise-prediction error of the continuous channel
    # at the selected epoch; calibrates the sampling-time shrinkage
    noise_error: float = X0_SHRINK

    @property
    def view(self) -> ModelView:
        return make_view(self.config.model_kind, self.schema, bin_edges=self.bin_edges)

    def content_hash(self) -> str:
        import hashlib
        h = hashlib.sha256()
        h.update(self._meta_json().encode())
        for name, arr in self._arrays().items():
            h.update(name.encode())
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def _meta_json(self) -> str:
        meta = {
            "format_version": CHECKPOINT_VERSION,
            "schema": self.schema.to_dict(),
            "config": asdict(self.config),
            "standardizer": {"mean": self.standardizer.mean.tolist(),
                             "std": self.standardizer.std.tolist()},
            "history": [list(h) for h in self.history],
            "has_cont": self.params_cont is not None,
            "has_disc": self.params_disc is not None,
            "param_keys_cont": sorted(self.params_cont) if self.params_cont else [],
            "param_keys_disc": sorted(self.params_disc) if self.params_disc else [],
            "n_bin_edges": len(self.bin_edges),
            "noise_error": self.noise_error,
        }
        # key order is deterministic by construction; sorting would scramble
        # the schema's column order
        return json.dumps(meta)

    def _arrays(self) -> dict[str, np.ndarray]:
        arrays = {}
        if self.sched_cont is not None:
            arrays["beta_cont"] = self.sched_cont.beta[1:]
        if self.sched_disc is not None:
            arrays["beta_disc"] = self.sched_disc.beta[1:]
        if self.params_cont:
            for k in sorted(self.params_cont):
                arrays[f"cont.{k}"] = self.params_cont[k]
        if self.params_disc:
            for k in sorted(self.params_disc):
                arrays[f"disc.{k}"] = self.params_disc[k]
        for i, e in enumerate(self.bin_edges):
            arrays[f"bin_edges_{i}"] = e
        return arrays

    def save(self, path) -> None:
        # fixed zip timestamps keep equal checkpoints byte-identical
        with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            info = zipfile.ZipInfo("meta.json", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, self._meta_json())
            for name, arr in self._arrays().items():
                buf = io.BytesIO()
                np.save(buf, np.ascontiguousarray(arr))
                info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
                zf.writestr(info, buf.getvalue())

    @classmethod
    def load(cls, path) -> "Checkpoint":
        try:
            with zipfile.ZipFile(path) as zf:
                meta = json.loads(zf.read("meta.json"))
                if meta.get("format_version") != CHECKPOINT_VERSION:
                    raise CheckpointError(
                        f"checkpoint format {meta.get('format_version')!r} is not supported"
                    )

                def arr(name):
                    return np.load(io.BytesIO(zf.read(name + ".npy")))

                schema = FeatureSchema.from_dict(meta["schema"])
                config = TrainConfig(**meta["config"])
                std = Standardizer(np.array(meta["standardizer"]["mean"]),
                                   np.array(meta["standardizer"]["std"]))
                sched_cont = _sched_from_beta(arr("beta_cont")) if meta["has_cont"] else None
                sched_disc = _sched_from_beta(arr("beta_disc")) if meta["has_disc"] else None
                params_cont = {k: arr(f"cont.{k}") for k in meta["param_keys_cont"]} or None
                params_disc = {k: arr(f"disc.{k}") for k in meta["param_keys_disc"]} or None
                edges = [arr(f"bin_edges_{i}") for i in range(meta["n_bin_edges"])]
                history = [tuple(h) for h in meta["history"]]
                return cls(schema, config, std, sched_cont, sched_disc,
                           params_cont, params_disc, history, edges,
                           noise_error=meta.get("noise_error", X0_SHRINK))
        except CheckpointError:
            raise
        except Exception as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc


def _sched_from_beta(beta: np.ndarray) -> NoiseSchedule:
    full = np.concatenate(([0.0], beta))
    ab = np.concatenate(([1.0], np.cumprod(1.0 - beta)))
    return NoiseSchedule(len(beta), full, ab)


# ---------------------------------------------------------------------------
# training


def _fill_targets(standardizer: Standardizer, cat_width: int, mode: str,
                  mode_onehots: np.ndarray | None):
    """Per-column supervision constants for the no-self-mask arms (row vectors)."""
    d_cont = standardizer.mean.shape[0]
    if mode == "mean":
        x0 = np.zeros((1, d_cont))  # z-space mean is 0
    else:  # raw zero in z units
        x0 = ((0.0 - standardizer.mean) / standardizer.std).reshape(1, d_cont)
    p0 = np.zeros((1, cat_width))
    if mode == "mean" and mode_onehots is not None:
        p0[0] = mode_onehots
    return x0, p0


def _column_modes(values, mask, schema) -> np.ndarray:
    slices = cat_block_slices(schema)
    width = sum(schema.cat_cards)
    out = np.zeros(width)
    for j, (cj, sl) in enumerate(zip(schema.cat_idx, slices)):
        col = values[~mask[:, cj], cj].astype(int)
        if col.size == 0:
            continue
        counts = np.bincount(col, minlength=schema.cat_cards[j] + 1)[1:]
        out[sl][np.argmax(counts)] = 1.0
    return out


def _batch_losses(params_c, params_d, enc, values, mask, config, schedules, rng,
                  fill_consts=None):
    """Assemble one batch's supervision, contexts and both channel losses."""
    schema = enc.schema
    cont_idx, cat_idx = schema.cont_idx, schema.cat_idx
    n = values.shape[0]
    cards, slices = schema.cat_cards, enc.cat_slices
    sched_c, sched_d = schedules

    if config.fill_supervision is None:
        m_aug, pseudo = self_mask_augment(values, mask, schema, config.self_mask_ratio,
                                          config.self_mask_scheme,
                                          seed=int(rng.integers(2 ** 31)))
        x0, p0 = enc.cont, enc.cat
    else:
        m_aug, pseudo = mask.copy(), mask.copy()
        x0, p0 = fill_consts
        x0 = np.broadcast_to(x0, enc.cont.shape)
        p0 = np.broadcast_to(p0, enc.cat.shape)
        if config.fill_supervision == "zero":
            # zero-filled one-hot targets carry no cross-entropy signal
            pseudo = pseudo.copy()
            pseudo[:, cat_idx] = False

    tgt_cont = pseudo[:, cont_idx] if len(cont_idx) else np.zeros((n, 0), bool)
    tgt_cat = pseudo[:, cat_idx] if len(cat_idx) else np.zeros((n, 0), bool)
    ctx = build_context(enc, m_aug)

    # the second channel of each batch conditions on the first channel's
    # stop-gradient estimate, mirroring the alternating sampling passes;
    # the order flips at random so both nets see empty and filled slots
    both = params_c is not None and params_d is not None
    cont_first = bool(rng.integers(2)) if both else True
    use_cross = both and rng.random() < config.cross_estimate_prob

    loss_c, grads_c = 0.0, None
    loss_d, grads_d = 0.0, None
    if cont_first:
        if params_c is not None:
            loss_c, grads_c, est_cont = cont_ch.loss_cont(
                params_c, x0, tgt_cont, ctx, sched_c, rng, return_estimate=True)
            if use_cross:
                ctx = ctx.with_cross(cross_cont=est_cont)
        if params_d is not None:
            loss_d, grads_d = disc_ch.loss_disc(params_d, p0, tgt_cat, ctx, sched_d,
                                                rng, cards, slices)
    else:
        loss_d, grads_d, est_cat = disc_ch.loss_disc(
            params_d, p0, tgt_cat, ctx, sched_d, rng, cards, slices, return_estimate=True)
        if use_cross:
            ctx = ctx.with_cross(cross_cat=est_cat)
        loss_c, grads_c = cont_ch.loss_cont(params_c, x0, tgt_cont, ctx, sched_c, rng)
    return loss_c, grads_c, loss_d, grads_d


def train(table: MaskedTable, config: TrainConfig) -> Checkpoint:
    """Fit both channels jointly on an incomplete table."""
    if table.n == 0:
        raise ValueError("empty table")
    fully_missing = table.mask.all(axis=0)
    if fully_missing.any():
        name = table.schema.columns[int(np.argmax(fully_missing))].name
        raise ValueError(f"column {name!r} is entirely missing")

    view = make_view(config.model_kind, table.schema, table=table)
    v_values, v_mask = view.to_view(table.values, table.mask)
    v_schema = view.view_schema
    v_table = MaskedTable(v_values, v_mask, v_schema)

    rng = np.random.default_rng(child_seed(config.seed, 1))
    order = rng.permutation(table.n)
    n_val = int(round(config.val_fraction * table.n))
    n_val = min(max(n_val, 0), table.n - 1)
    val_rows, train_rows = order[:n_val], order[n_val:]

    train_table = MaskedTable(v_values[train_rows], v_mask[train_rows], v_schema)
    standardizer = _fit_view_standardizer(view, train_table)

    sched_c = cosine_schedule(config.T) if len(v_schema.cont_idx) else None
    sched_d = discrete_schedule(config.T) if len(v_schema.cat_idx) else None

    d_cont = len(v_schema.cont_idx)
    d_cat = len(v_schema.cat_idx)
    width_cat = sum(v_schema.cat_cards)
    params_c = init_mlp(cont_input_dim(d_cont, width_cat, d_cat), d_cont,
                        config.hidden_width, config.hidden_layers,
                        seed=child_seed(config.seed, 2),
                        skip_dim=d_cont) if d_cont else None
    params_d = init_mlp(disc_input_dim(d_cont, width_cat, d_cat), width_cat,
                        config.hidden_width, config.hidden_layers,
                        seed=child_seed(config.seed, 3)) if d_cat else None
    opt_c = OptimizerState.for_params(params_c, config.learning_rate,
                                      config.weight_decay) if params_c else None
    opt_d = OptimizerState.for_params(params_d, config.learning_rate,
                                      config.weight_decay) if params_d else None

    enc_all = encode_batch(v_values, v_mask, v_schema, standardizer)

    fill_consts = None
    if config.fill_supervision is not None:
        modes = _column_modes(v_values[train_rows], v_mask[train_rows], v_schema)
        fill_consts = _fill_targets(standardizer, width_cat, config.fill_supervision, modes)

    def take(rows):
        enc = EncodedBatch(enc_all.cont[rows], enc_all.cat[rows],
                           enc_all.mask_cont[rows], enc_all.mask_cat[rows],
                           standardizer, v_schema, enc_all.cat_slices)
        return enc, v_values[rows], v_mask[rows]

    history: list[tuple[int, float, float]] = []
    best_val = np.inf
    best = (params_c, params_d)
    best_noise = X0_SHRINK
    since_best = 0

    for epoch in range(config.epochs):
        ep_rng = np.random.default_rng(child_seed(config.seed, 10, epoch))
        perm = ep_rng.permutation(len(train_rows))
        losses = []
        for bi in range(0, len(perm), config.batch_size):
            rows = train_rows[perm[bi:bi + config.batch_size]]
            b_rng = np.random.default_rng(child_seed(config.seed, 20, epoch, bi))
            enc, vals, msk = take(rows)
            lc, gc, ld, gd = _batch_losses(params_c, params_d, enc, vals, msk,
                                           config, (sched_c, sched_d), b_rng, fill_consts)
            if params_c is not None:
                params_c, opt_c = grad_step(params_c, opt_c, gc)
            if params_d is not None:
                params_d, opt_d = grad_step(params_d, opt_d, gd)
            losses.append(lc + ld)
        train_loss = float(np.mean(losses)) if losses else 0.0

        if n_val:
            v_rng = np.random.default_rng(child_seed(config.seed, 30))
            enc, vals, msk = take(val_rows)
            lc, _, ld, _ = _batch_losses(params_c, params_d, enc, vals, msk,
                                         config, (sched_c, sched_d), v_rng, fill_consts)
            val_loss = lc + ld
            val_cont = lc
        else:
            val_loss = train_loss
            val_cont = X0_SHRINK
        history.append((epoch, train_loss, float(val_loss)))

        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best = ({k: v.copy() for k, v in params_c.items()} if params_c else None,
                    {k: v.copy() for k, v in params_d.items()} if params_d else None)
            best_noise = float(np.clip(val_cont, 1e-3, 1.0))
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    params_c, params_d = best
    return Checkpoint(
        schema=table.schema, config=config, standardizer=standardizer,
        sched_cont=sched_c, sched_disc=sched_d,
        params_cont=params_c, params_disc=params_d,
        history=history, bin_edges=view.bin_edges, noise_error=best_noise,
    )


# ---------------------------------------------------------------------------
# imputation


def impute(ckpt: Checkpoint, table: MaskedTable, steps: int = 20, eta: float = 0.0,
           seed: int = 0, noise_seed: int | None = None,
           exchange: str = "pass", x0_clip: float | None = X0_CLIP,
           x0_shrink: float | None = None) -> MaskedTable:
    """Fill every missing cell; observed cells pass through verbatim.

    seed fixes the initial noise of the continuous channel; noise_seed
    (defaults to seed) only feeds the eta > 0 stochastic part, so eta = 0
    output is independent of it. x0_shrink defaults to the checkpoint's
    calibrated noise error.
    """
    if table.schema.to_dict() != ckpt.schema.to_dict():
        raise ValueError("table schema does not match checkpoint schema")
    if exchange not in ("pass", "step"):
        raise ValueError("exchange must be 'pass' or 'step'")
    if not table.mask.any():
        out = table.copy()
        return out

    view = ckpt.view
    v_values, v_mask = view.to_view(table.values, table.mask)
    v_schema = view.view_schema
    enc = encode_batch(v_values, v_mask, v_schema, ckpt.standardizer)
    cont_idx, cat_idx = v_schema.cont_idx, v_schema.cat_idx
    cards, slices = v_schema.cat_cards, enc.cat_slices
    n = v_values.shape[0]

    tgt_cont = v_mask[:, cont_idx] if len(cont_idx) else np.zeros((n, 0), bool)
    tgt_cat = v_mask[:, cat_idx] if len(cat_idx) else np.zeros((n, 0), bool)
    ctx = build_context(enc, v_mask)
    T = ckpt.config.T
    plan = make_subsequence(T, steps, ckpt.config.time_spacing, eta=eta)
    base_noise = seed if noise_seed is None else noise_seed
    kappa = ckpt.noise_error if x0_shrink is None else x0_shrink

    x_final = np.zeros_like(enc.cont)
    p_final = disc_ch.uniform_state(cards, n)

    if exchange == "pass":
        est_cat = np.zeros_like(enc.cat)
        for pass_no in (1, 2):
            if ckpt.params_cont is not None and tgt_cont.any():
                x_final = cont_ch.sample_cont(
                    ckpt.params_cont, tgt_cont, ctx.with_cross(cross_cat=est_cat),
                    plan, ckpt.sched_cont,
                    seed=child_seed(seed, 40, pass_no),
                    noise_seed=child_seed(base_noise, 41, pass_no),
                    x0_clip=x0_clip, kappa=kappa)
            est_cont = np.clip(x_final, -X0_CLIP, X0_CLIP)
            if ckpt.params_disc is not None and tgt_cat.any():
                p_final = disc_ch.sample_disc(
                    ckpt.params_disc, tgt_cat, ctx.with_cross(cross_cont=est_cont),
                    plan, ckpt.sched_disc, cards, slices)
                est_cat = p_final
    else:
        x_final, p_final = _sample_lockstep(ckpt, enc, ctx, tgt_cont, tgt_cat,
                                            plan, seed, base_noise, x0_clip, kappa)

    # merge: decoded targets + verbatim observed cells
    filled = v_values.copy()
    if len(cont_idx):
        raw = ckpt.standardizer.inverse(x_final)
        block = filled[:, cont_idx]
        block[tgt_cont] = raw[tgt_cont]
        filled[:, cont_idx] = block
    if len(cat_idx):
        codes = disc_ch.argmax_decode(p_final, slices)
        block = filled[:, cat_idx]
        block[tgt_cat] = codes.astype(float)[tgt_cat]
        filled[:, cat_idx] = block

    base = view.from_view(filled)
    base[~table.mask] = table.values[~table.mask]
    return MaskedTable(base, np.zeros_like(table.mask), table.schema)


def _sample_lockstep(ckpt, enc, ctx, tgt_cont, tgt_cat, plan, seed, base_noise,
                     x0_clip=X0_CLIP, kappa=X0_SHRINK):
    """Per-step estimate exchange: both channels walk the plan together."""
    n = enc.cont.shape[0]
    cards, slices = enc.schema.cat_cards, enc.cat_slices
    sched_c, sched_d = ckpt.sched_cont, ckpt.sched_disc
    run_cont = ckpt.params_cont is not None and tgt_cont.any()
    run_disc = ckpt.params_disc is not None and tgt_cat.any()

    init_rng = np.random.default_rng(child_seed(seed, 50))
    step_rng = np.random.default_rng(child_seed(base_noise, 51))
    x = np.where(tgt_cont, init_rng.standard_normal(tgt_cont.shape), 0.0)
    p = disc_ch.uniform_state(cards, n)
    for j, sl in enumerate(slices):
        p[:, sl] *= tgt_cat[:, j:j + 1]

    est_cont = np.zeros_like(enc.cont)
    est_cat = np.zeros_like(enc.cat)
    for t_prev, t_cur in plan.pairs():
        if run_cont:
            scale = np.full(n, np.sqrt(1.0 - sched_c.alpha_bar[t_cur]))
            eps_hat = predict_noise(ckpt.params_cont, x, np.full(n, t_cur),
                                    ctx.with_cross(cross_cat=est_cat), tgt_cont, scale)
            if x0_clip is not None:
                eps_hat = cont_ch.clip_denoised(eps_hat, x, t_cur, sched_c, x0_clip, kappa)
            ab = sched_c.alpha_bar[t_cur]
            est_cont = np.clip(np.where(tgt_cont, (x - np.sqrt(1 - ab) * eps_hat) / np.sqrt(ab),
                                        0.0), -X0_CLIP, X0_CLIP)
            noise = None
            if plan.eta > 0.0 and t_prev > 0:
                noise = np.where(tgt_cont, step_rng.standard_normal(tgt_cont.shape), 0.0)
            x = np.where(tgt_cont,
                         cont_ch.ddim_step(eps_hat, x, t_prev, t_cur, sched_c, plan.eta, noise),
                         0.0)
        if run_disc:
            logits = predict_logits(ckpt.params_disc, p, np.full(n, t_cur),
                                    ctx.with_cross(cross_cont=est_cont), tgt_cat)
            beta_eff = 1.0 - sched_d.alpha_bar[t_cur] / sched_d.alpha_bar[t_prev]
            mixture = disc_ch.lh_forward_step(p, beta_eff, cards, slices)
            p_new = disc_ch._renormalize(logits, mixture, slices)
            for j, sl in enumerate(slices):
                keep = tgt_cat[:, j:j + 1]
                lg = logits[:, sl] - logits[:, sl].max(axis=1, keepdims=True)
                soft = np.exp(lg)
                soft /= soft.sum(axis=1, keepdims=True)
                est_cat[:, sl] = soft * keep
                p[:, sl] = np.where(keep, p_new[:, sl], 0.0)
    return x, p
