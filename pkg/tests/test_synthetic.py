import numpy as np
import pytest
from scipy import stats

from diffimpute.synthetic import SynthConfig, SynthCoefficients, draw_coefficients, generate_dataset


class TestDeterminism:
    def test_same_seed_bit_identical(self):
        a, _ = generate_dataset(SynthConfig(n=200, d_cont=4, d_cat=4, seed=9))
        b, _ = generate_dataset(SynthConfig(n=200, d_cont=4, d_cat=4, seed=9))
        assert np.array_equal(a.values, b.values)

    def test_different_seed_differs(self):
        a, _ = generate_dataset(SynthConfig(n=200, d_cont=4, d_cat=4, seed=1))
        b, _ = generate_dataset(SynthConfig(n=200, d_cont=4, d_cat=4, seed=2))
        assert not np.array_equal(a.values, b.values)

    def test_coefficient_archive_round_trip(self, tmp_path):
        cfg = SynthConfig(n=100, d_cont=3, d_cat=3, seed=5)
        table, coeffs = generate_dataset(cfg)
        p = tmp_path / "coeffs.npz"
        coeffs.save(p)
        loaded = SynthCoefficients.load(p)
        regen, _ = generate_dataset(cfg, coefficients=loaded)
        assert np.array_equal(regen.values, table.values)


class TestStructure:
    def test_mask_all_zero_and_categories_in_range(self):
        table, coeffs = generate_dataset(SynthConfig(n=500, seed=3))
        assert not table.mask.any()
        for j, k in zip(table.schema.cat_idx, table.schema.cat_cards):
            col = table.values[:, j]
            assert ((col >= 1) & (col <= k)).all()
            assert np.allclose(col, np.round(col))

    def test_noiseless_linear_columns_have_latent_rank(self):
        cfg = SynthConfig(n=400, d_cont=20, d_cat=0, latent_dim=15, noise_cont=0.0, seed=7)
        rng = np.random.default_rng(cfg.seed)
        coeffs = draw_coefficients(cfg, rng)
        coeffs.cont_gain[:] = 0.0  # drop the nonlinearity
        table, _ = generate_dataset(cfg, coefficients=coeffs)
        s = np.linalg.svd(table.values - table.values.mean(axis=0), compute_uv=False)
        rank = int((s > s[0] * 1e-9).sum())
        assert rank <= cfg.latent_dim

    def test_flat_logits_sample_uniformly(self):
        cfg = SynthConfig(n=10_000, d_cont=0, d_cat=2, seed=11)
        rng = np.random.default_rng(cfg.seed)
        coeffs = draw_coefficients(cfg, rng)
        for w in coeffs.cat_weights:
            w[:] = 0.0
        for o in coeffs.cat_offsets:
            o[:] = 0.0
        table, _ = generate_dataset(cfg, coefficients=coeffs)
        for j, k in zip(table.schema.cat_idx, table.schema.cat_cards):
            counts = np.bincount(table.values[:, j].astype(int), minlength=k + 1)[1:]
            p = stats.chisquare(counts).pvalue
            assert p > 0.01

    def test_cross_type_dependence(self):
        table, coeffs = generate_dataset(SynthConfig(n=10_000, seed=13))
        d_cont = 15
        # pick a (continuous, categorical) pair sharing a latent coordinate
        found = None
        for k in range(d_cont):
            for j in range(15):
                if set(coeffs.cont_subsets[k]) & set(coeffs.cat_subsets[j]):
                    found = (k, j)
                    break
            if found:
                break
        assert found is not None
        k, j = found
        cont = table.values[:, k]
        codes = table.values[:, d_cont + j].astype(int)
        groups = [cont[codes == c] for c in np.unique(codes)]
        f_stat, p = stats.f_oneway(*groups)
        assert p < 0.01


class TestConfigValidation:
    def test_bad_sizes(self):
        with pytest.raises(ValueError):
            SynthConfig(n=0)
        with pytest.raises(ValueError):
            SynthConfig(latent_dim=2)
