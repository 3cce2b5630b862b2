import numpy as np
import pytest

from diffimpute.imputer import (Checkpoint, CheckpointError, TrainConfig, impute,
                                make_view, train)
from diffimpute.missingness import gen_mcar
from diffimpute.synthetic import SynthConfig, generate_dataset
from diffimpute.tabular import CONTINUOUS, ColumnSpec, FeatureSchema, MaskedTable


def small_masked(n=160, seed=0, rate=0.3):
    table, _ = generate_dataset(SynthConfig(n=n, d_cont=3, d_cat=2, seed=seed))
    mask = gen_mcar(table.values.shape, rate, seed=seed + 1)
    return table, mask, table.with_mask(mask)


def tiny_config(**kw):
    base = dict(epochs=3, patience=10, seed=0, learning_rate=1e-3, batch_size=32)
    base.update(kw)
    return TrainConfig(**base)


class TestTrainConfig:
    def test_zero_ratio_without_fill_rejected(self):
        with pytest.raises(ValueError, match="self_mask_ratio > 0"):
            TrainConfig(self_mask_ratio=0.0)

    def test_zero_ratio_with_fill_allowed(self):
        cfg = TrainConfig(self_mask_ratio=0.0, fill_supervision="mean")
        assert cfg.fill_supervision == "mean"

    def test_bad_kind(self):
        with pytest.raises(ValueError):
            TrainConfig(model_kind="both")


class TestTrain:
    def test_loss_decreases(self):
        _, _, masked = small_masked(n=300)
        ckpt = train(masked, tiny_config(epochs=25, learning_rate=3e-3))
        first = ckpt.history[0][1]
        last = ckpt.history[-1][1]
        assert last < first

    def test_empty_table_rejected(self):
        schema = FeatureSchema((ColumnSpec("x", CONTINUOUS),))
        table = MaskedTable(np.zeros((0, 1)), np.zeros((0, 1), bool), schema)
        with pytest.raises(ValueError, match="empty"):
            train(table, tiny_config())

    def test_entirely_missing_column_rejected(self):
        schema = FeatureSchema((ColumnSpec("x", CONTINUOUS), ColumnSpec("y", CONTINUOUS)))
        vals = np.column_stack([np.arange(10.0), np.full(10, np.nan)])
        table = MaskedTable(vals, np.isnan(vals), schema)
        with pytest.raises(ValueError, match="entirely missing"):
            train(table, tiny_config())

    def test_same_seed_same_checkpoint_hash(self):
        _, _, masked = small_masked()
        a = train(masked, tiny_config())
        b = train(masked, tiny_config())
        assert a.content_hash() == b.content_hash()

    def test_different_seed_differs(self):
        _, _, masked = small_masked()
        a = train(masked, tiny_config(seed=0))
        b = train(masked, tiny_config(seed=1))
        assert a.content_hash() != b.content_hash()

    def test_history_has_one_row_per_epoch(self):
        _, _, masked = small_masked()
        ckpt = train(masked, tiny_config(epochs=4, patience=100))
        assert [h[0] for h in ckpt.history] == [0, 1, 2, 3]


@pytest.fixture(scope="module")
def trained():
    table, mask, masked = small_masked(n=240)
    ckpt = train(masked, tiny_config(epochs=6))
    return table, mask, masked, ckpt


class TestImpute:
    def test_fully_observed_passthrough(self, trained):
        table, _, _, ckpt = trained
        out = impute(ckpt, table, steps=5, seed=0)
        assert np.array_equal(out.values, table.values)

    def test_output_complete_and_in_range(self, trained):
        _, _, masked, ckpt = trained
        out = impute(ckpt, masked, steps=10, seed=0)
        assert not out.mask.any()
        assert np.isfinite(out.values).all()
        for j, k in zip(out.schema.cat_idx, out.schema.cat_cards):
            col = out.values[:, j]
            assert ((col >= 1) & (col <= k)).all()

    def test_all_missing_row(self, trained):
        _, _, masked, ckpt = trained
        vals = masked.values.copy()
        mask = masked.mask.copy()
        vals[0, :] = np.nan
        mask[0, :] = True
        out = impute(ckpt, MaskedTable(vals, mask, masked.schema), steps=10, seed=0)
        assert np.isfinite(out.values[0]).all()

    def test_observed_cells_verbatim(self, trained):
        _, _, masked, ckpt = trained
        out = impute(ckpt, masked, steps=10, seed=0)
        obs = ~masked.mask
        assert np.array_equal(out.values[obs], masked.values[obs])

    def test_deterministic_same_seed(self, trained):
        _, _, masked, ckpt = trained
        a = impute(ckpt, masked, steps=10, seed=4)
        b = impute(ckpt, masked, steps=10, seed=4)
        assert np.array_equal(a.values, b.values)

    def test_schema_mismatch_rejected(self, trained):
        _, _, masked, ckpt = trained
        other = FeatureSchema((ColumnSpec("z", CONTINUOUS),))
        bad = MaskedTable(np.zeros((2, 1)), np.zeros((2, 1), bool), other)
        with pytest.raises(ValueError, match="schema"):
            impute(ckpt, bad)

    def test_step_exchange_mode_runs(self, trained):
        _, _, masked, ckpt = trained
        out = impute(ckpt, masked, steps=6, seed=0, exchange="step")
        assert not out.mask.any()
        obs = ~masked.mask
        assert np.array_equal(out.values[obs], masked.values[obs])

    def test_eta_zero_independent_of_noise_seed(self, trained):
        _, _, masked, ckpt = trained
        a = impute(ckpt, masked, steps=8, eta=0.0, seed=3, noise_seed=1)
        b = impute(ckpt, masked, steps=8, eta=0.0, seed=3, noise_seed=2)
        assert np.array_equal(a.values, b.values)

    def test_eta_one_varies_with_noise_seed(self, trained):
        _, _, masked, ckpt = trained
        a = impute(ckpt, masked, steps=8, eta=1.0, seed=3, noise_seed=1)
        b = impute(ckpt, masked, steps=8, eta=1.0, seed=3, noise_seed=2)
        assert not np.array_equal(a.values, b.values)


class TestCheckpointIO:
    def test_round_trip(self, tmp_path):
        _, _, masked = small_masked()
        ckpt = train(masked, tiny_config())
        p = tmp_path / "model.ckpt"
        ckpt.save(p)
        loaded = Checkpoint.load(p)
        assert loaded.content_hash() == ckpt.content_hash()
        assert loaded.config == ckpt.config
        for k in ckpt.params_cont:
            assert np.array_equal(loaded.params_cont[k], ckpt.params_cont[k])

    def test_imputation_identical_after_reload(self, tmp_path):
        _, _, masked = small_masked()
        ckpt = train(masked, tiny_config())
        before = impute(ckpt, masked, steps=6, seed=1)
        p = tmp_path / "model.ckpt"
        ckpt.save(p)
        after = impute(Checkpoint.load(p), masked, steps=6, seed=1)
        assert np.array_equal(before.values, after.values)

    def test_truncated_file_rejected(self, tmp_path):
        _, _, masked = small_masked()
        ckpt = train(masked, tiny_config())
        p = tmp_path / "model.ckpt"
        ckpt.save(p)
        data = p.read_bytes()
        p.write_bytes(data[: len(data) // 2])
        with pytest.raises(CheckpointError):
            Checkpoint.load(p)

    def test_save_is_byte_deterministic(self, tmp_path):
        _, _, masked = small_masked()
        ckpt = train(masked, tiny_config())
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        ckpt.save(p1)
        ckpt.save(p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestModelViews:
    def test_cont_only_round_trip(self):
        table, mask, masked = small_masked(n=50)
        view = make_view("cont_only", table.schema)
        v_vals, v_mask = view.to_view(masked.values, masked.mask)
        assert v_vals.shape[1] == 3 + sum(table.schema.cat_cards)
        back = view.from_view(np.nan_to_num(v_vals))
        obs = ~masked.mask
        assert np.allclose(back[obs], masked.values[obs])

    def test_disc_only_bins_decode_to_midpoints(self):
        table, mask, masked = small_masked(n=200)
        view = make_view("disc_only", table.schema, table=masked)
        v_vals, _ = view.to_view(masked.values, masked.mask)
        back = view.from_view(np.where(np.isnan(v_vals), 1.0, v_vals))
        for ci, j in enumerate(table.schema.cont_idx):
            obs = ~masked.mask[:, j]
            err = np.abs(back[obs, j] - masked.values[obs, j])
            # binning is lossy but bounded by the widest bin
            widths = np.diff(view.bin_edges[ci])
            assert err.max() <= widths.max() / 2 + 1e-9

    def test_variant_training_and_imputing(self):
        table, mask, masked = small_masked(n=160)
        for kind in ("cont_only", "disc_only"):
            ckpt = train(masked, tiny_config(model_kind=kind, epochs=2))
            out = impute(ckpt, masked, steps=5, seed=0)
            assert not out.mask.any()
            obs = ~masked.mask
            assert np.array_equal(out.values[obs], masked.values[obs])
            for j, k in zip(out.schema.cat_idx, out.schema.cat_cards):
                col = out.values[:, j]
                assert ((col >= 1) & (col <= k)).all()

    def test_fill_supervision_arms_train(self):
        table, mask, masked = small_masked(n=160)
        for fill in ("zero", "mean"):
            ckpt = train(masked, tiny_config(epochs=2, self_mask_ratio=0.0,
                                             fill_supervision=fill))
            out = impute(ckpt, masked, steps=5, seed=0)
            assert not out.mask.any()


class TestOrdinalColumns:
    def test_ordinal_routes_through_discrete_channel(self):
        rng = np.random.default_rng(0)
        schema = FeatureSchema((
            ColumnSpec("x", CONTINUOUS),
            ColumnSpec("grade", "ordinal", 5),
        ))
        x = rng.normal(size=300)
        grade = np.clip(np.digitize(x, [-1.0, -0.3, 0.3, 1.0]) + 1, 1, 5).astype(float)
        vals = np.column_stack([x, grade])
        mask = gen_mcar(vals.shape, 0.3, seed=1)
        table = MaskedTable(vals, np.zeros_like(mask), schema)
        masked = table.with_mask(mask)
        ckpt = train(masked, tiny_config(epochs=10, learning_rate=3e-3))
        out = impute(ckpt, masked, steps=10, seed=0)
        col = out.values[:, 1]
        assert ((col >= 1) & (col <= 5)).all()
        assert np.allclose(col, np.round(col))
