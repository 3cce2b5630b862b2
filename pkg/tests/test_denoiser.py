import numpy as np
import pytest

from diffimpute import continuous as cont_ch
from diffimpute import discrete as disc_ch
from diffimpute.denoiser import (ConditioningContext, OptimizerState, cont_input_dim,
                                 disc_input_dim, finite_diff_check, grad_step, init_mlp,
                                 mlp_backward, mlp_forward, predict_logits, predict_noise,
                                 time_embedding)
from diffimpute.schedule import cosine_schedule, discrete_schedule


def make_ctx(n, d_cont, cards, rng):
    width = sum(cards)
    return ConditioningContext(
        obs_cont=rng.normal(size=(n, d_cont)),
        obs_cont_mask=np.ones((n, d_cont)),
        obs_cat=rng.random((n, width)),
        obs_cat_mask=np.ones((n, len(cards))),
        cross_cont=np.zeros((n, d_cont)),
        cross_cat=np.zeros((n, width)),
    )


def slices_for(cards):
    out, start = [], 0
    for k in cards:
        out.append(slice(start, start + k))
        start += k
    return out


class TestMlp:
    def test_zero_head_outputs_zero(self):
        rng = np.random.default_rng(0)
        params = init_mlp(7, 3, width=16, seed=1)
        out, _ = mlp_forward(params, rng.normal(size=(5, 7)))
        assert np.array_equal(out, np.zeros((5, 3)))

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        params = init_mlp(6, 2, width=8, seed=2)
        params["wo"] = rng.normal(size=params["wo"].shape)
        x = rng.normal(size=(4, 6))
        a, _ = mlp_forward(params, x)
        b, _ = mlp_forward(params, x)
        assert np.array_equal(a, b)

    def test_backward_matches_finite_difference(self):
        rng = np.random.default_rng(3)
        params = init_mlp(5, 2, width=8, n_hidden=2, seed=4)
        params["wo"] = 0.1 * rng.normal(size=params["wo"].shape)
        x = rng.normal(size=(6, 5))
        target = rng.normal(size=(6, 2))

        def loss_fn(p):
            out, cache = mlp_forward(p, x)
            resid = out - target
            return float((resid ** 2).mean()), mlp_backward(p, cache, 2 * resid / resid.size)

        assert finite_diff_check(params, loss_fn, seed=0, n_coords=30) < 1e-6

    def test_skip_param_gradient(self):
        rng = np.random.default_rng(5)
        params = init_mlp(4, 4, width=8, seed=6, skip_dim=4)
        params["ws"] = rng.normal(size=4)
        x = rng.normal(size=(6, 4))

        def loss_fn(p):
            out, cache = mlp_forward(p, x)
            return float((out ** 2).mean()), mlp_backward(p, cache, 2 * out / out.size)

        assert finite_diff_check(params, loss_fn, seed=1, n_coords=30) < 1e-6


class TestPredictOps:
    def test_zero_head_uniform_softmax(self):
        rng = np.random.default_rng(0)
        cards = [3, 4]
        ctx = make_ctx(5, 2, cards, rng)
        params = init_mlp(disc_input_dim(2, 7, 2), 7, width=16, seed=0)
        p_t = rng.random((5, 7))
        logits = predict_logits(params, p_t, np.full(5, 10), ctx, np.ones((5, 2), bool))
        for sl in slices_for(cards):
            block = logits[:, sl]
            soft = np.exp(block) / np.exp(block).sum(axis=1, keepdims=True)
            assert np.allclose(soft, 1.0 / block.shape[1])

    def test_nan_input_rejected(self):
        rng = np.random.default_rng(1)
        ctx = make_ctx(3, 2, [3], rng)
        ctx.obs_cont[0, 0] = np.nan
        params = init_mlp(cont_input_dim(2, 3, 1), 2, width=8, seed=0, skip_dim=2)
        with pytest.raises(ValueError, match="non-finite"):
            predict_noise(params, np.zeros((3, 2)), np.full(3, 5), ctx, np.ones((3, 2), bool))

    def test_identical_inputs_identical_outputs(self):
        rng = np.random.default_rng(2)
        ctx = make_ctx(4, 3, [3], rng)
        params = init_mlp(cont_input_dim(3, 3, 1), 3, width=8, seed=3, skip_dim=3)
        params["wo"] = rng.normal(size=params["wo"].shape)
        x_t = rng.normal(size=(4, 3))
        a = predict_noise(params, x_t, np.full(4, 7), ctx, np.ones((4, 3), bool))
        b = predict_noise(params, x_t, np.full(4, 7), ctx, np.ones((4, 3), bool))
        assert np.array_equal(a, b)

    def test_linear_head_permutation_equivariance(self):
        """With an identity linear head over the state block, permuting two
        category channels permutes exactly those two logits."""
        rng = np.random.default_rng(4)
        cards = [4]
        d_in = disc_input_dim(0, 4, 1)
        params = init_mlp(d_in, 4, n_hidden=0, seed=0)
        params["wo"][:4, :4] = np.eye(4)  # p_t block sits first in the input
        ctx = ConditioningContext(
            obs_cont=np.zeros((2, 0)), obs_cont_mask=np.zeros((2, 0)),
            obs_cat=rng.random((2, 4)), obs_cat_mask=np.ones((2, 1)),
            cross_cont=np.zeros((2, 0)), cross_cat=np.zeros((2, 4)))
        p = rng.random((2, 4))
        base = predict_logits(params, p, np.full(2, 3), ctx, np.ones((2, 1), bool))
        p_sw = p[:, [1, 0, 2, 3]]
        swapped = predict_logits(params, p_sw, np.full(2, 3), ctx, np.ones((2, 1), bool))
        assert np.allclose(swapped[:, [1, 0]], base[:, [0, 1]])
        assert np.allclose(swapped[:, 2:], base[:, 2:])


class TestOptimizer:
    def test_zero_grad_zero_decay_is_identity(self):
        params = {"w": np.array([1.0, -2.0])}
        state = OptimizerState.for_params(params, lr=0.1, weight_decay=0.0)
        new, _ = grad_step(params, state, {"w": np.zeros(2)})
        assert np.array_equal(new["w"], params["w"])

    def test_quadratic_bowl_monotone(self):
        # step size small enough that the iterate cannot cross the optimum
        params = {"w": np.array([1.0])}
        state = OptimizerState.for_params(params, lr=0.005, weight_decay=0.0)
        prev = abs(params["w"][0])
        for _ in range(100):
            grads = {"w": 2.0 * params["w"]}
            params, state = grad_step(params, state, grads)
            assert abs(params["w"][0]) < prev
            prev = abs(params["w"][0])

    def test_decay_only_shrinks(self):
        params = {"w": np.array([3.0, -1.5])}
        state = OptimizerState.for_params(params, lr=0.1, weight_decay=0.1)
        new, _ = grad_step(params, state, {"w": np.zeros(2)})
        assert np.linalg.norm(new["w"]) < np.linalg.norm(params["w"])

    def test_shape_mismatch(self):
        params = {"w": np.zeros(3)}
        state = OptimizerState.for_params(params)
        with pytest.raises(ValueError, match="shape"):
            grad_step(params, state, {"w": np.zeros(2)})

    def test_step_counter(self):
        params = {"w": np.zeros(2)}
        state = OptimizerState.for_params(params)
        _, state = grad_step(params, state, {"w": np.ones(2)})
        assert state.step == 1


def overfit_batch(channel, n_steps=2000):
    rng = np.random.default_rng(0)
    n, d_cont, cards = 4, 2, [3]
    width = sum(cards)
    ctx = make_ctx(n, d_cont, cards, rng)
    sched_c = cosine_schedule(10)
    sched_d = discrete_schedule(10)
    slices = slices_for(cards)
    if channel == "cont":
        params = init_mlp(cont_input_dim(d_cont, width, 1), d_cont, width=64,
                          seed=1, skip_dim=d_cont)
    else:
        params = init_mlp(disc_input_dim(d_cont, width, 1), width, width=64, seed=1)
    state = OptimizerState.for_params(params, lr=3e-3, weight_decay=0.0)
    x0 = rng.normal(size=(n, d_cont))
    p0 = np.zeros((n, width))
    p0[np.arange(n), rng.integers(0, 3, size=n)] = 1.0
    tgt_c = np.ones((n, d_cont), dtype=bool)
    tgt_d = np.ones((n, 1), dtype=bool)
    loss = np.inf
    for i in range(n_steps):
        step_rng = np.random.default_rng(i)
        if channel == "cont":
            loss, grads = cont_ch.loss_cont(params, x0, tgt_c, ctx, sched_c, step_rng)
        else:
            loss, grads = disc_ch.loss_disc(params, p0, tgt_d, ctx, sched_d, step_rng,
                                            cards, slices)
        params, state = grad_step(params, state, grads)
    return loss


class TestMemorization:
    def test_continuous_overfits_single_batch(self):
        assert overfit_batch("cont") < 0.05

    def test_discrete_overfits_single_batch(self):
        assert overfit_batch("disc") < 0.05


class TestTimeEmbedding:
    def test_shape_and_range(self):
        emb = time_embedding(np.arange(1, 11), dim=64)
        assert emb.shape == (10, 64)
        assert (np.abs(emb) <= 1.0).all()

    def test_distinguishes_timesteps(self):
        emb = time_embedding(np.array([1, 2, 50, 100]))
        assert np.linalg.norm(emb[0] - emb[1]) > 1e-3
        assert np.linalg.norm(emb[2] - emb[3]) > 1e-3
