"""Conditional function approximators for both channels.

A small residual MLP (float64, hand-written reverse-mode gradients) keeps
training deterministic and lets the finite-difference check certify the
analytic gradients end to end. The output layer is zero-initialized, so an
untrained continuous head predicts zero noise and an untrained discrete
head produces uniform logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_WIDTH = 256
DEFAULT_HIDDEN = 2
TIME_EMB_DIM = 64


def init_mlp(in_dim: int, out_dim: int, width: int = DEFAULT_WIDTH,
             n_hidden: int = DEFAULT_HIDDEN, seed: int = 0,
             skip_dim: int = 0) -> dict[str, np.ndarray]:
    """Parameter dict for a residual tanh MLP; n_hidden == 0 gives a pure linear map.

    skip_dim > 0 adds a zero-initialized diagonal skip from the first
    skip_dim input features straight to the output (requires skip_dim ==
    out_dim). It gives the noise head a one-coefficient-per-dimension path
    for the near-identity behavior needed at deeply noised steps, without
    changing the zero-initialized output contract.
    """
    rng = np.random.default_rng(seed)
    params: dict[str, np.ndarray] = {}
    prev = in_dim
    for layer in range(n_hidden):
        fan_in = prev if layer == 0 else width
        params[f"w{layer}"] = rng.standard_normal((fan_in, width)) / np.sqrt(fan_in)
        params[f"b{layer}"] = np.zeros(width)
        prev = width
    params["wo"] = np.zeros((prev, out_dim))
    params["bo"] = np.zeros(out_dim)
    if skip_dim:
        if skip_dim != out_dim:
            raise ValueError("diagonal skip requires skip_dim == out_dim")
        params["ws"] = np.zeros(skip_dim)
    return params


def _n_hidden(params: dict[str, np.ndarray]) -> int:
    return sum(1 for k in params if k.startswith("w") and k[1:].isdigit())


def mlp_forward(params: dict[str, np.ndarray], x: np.ndarray):
    """Returns (output, cache); cache feeds mlp_backward."""
    acts = [x]
    h = x
    for layer in range(_n_hidden(params)):
        pre = h @ params[f"w{layer}"] + params[f"b{layer}"]
        a = np.tanh(pre)
        h = a if layer == 0 else h + a  # residual skip after the first layer
        acts.append(a)
        acts.append(h)
    out = h @ params["wo"] + params["bo"]
    if "ws" in params:
        out = out + x[:, :params["ws"].shape[0]] * params["ws"]
    return out, (acts, h)


def mlp_backward(params: dict[str, np.ndarray], cache, grad_out: np.ndarray
                 ) -> dict[str, np.ndarray]:
    acts, h_last = cache
    grads = {
        "wo": h_last.T @ grad_out,
        "bo": grad_out.sum(axis=0),
    }
    if "ws" in params:
        k = params["ws"].shape[0]
        grads["ws"] = (grad_out * acts[0][:, :k]).sum(axis=0)
    gh = grad_out @ params["wo"].T
    n_hidden = _n_hidden(params)
    for layer in range(n_hidden - 1, -1, -1):
        a = acts[1 + 2 * layer]
        inp = acts[0] if layer == 0 else acts[2 * layer]
        gpre = gh * (1.0 - a * a)
        grads[f"w{layer}"] = inp.T @ gpre
        grads[f"b{layer}"] = gpre.sum(axis=0)
        gh = gpre @ params[f"w{layer}"].T if layer == 0 else gh + gpre @ params[f"w{layer}"].T
    return grads


@dataclass
class OptimizerState:
    """AdamW accumulators (decoupled weight decay)."""

    lr: float = 1e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: dict[str, np.ndarray], lr: float = 1e-4,
                   weight_decay: float = 1e-4) -> "OptimizerState":
        return cls(lr=lr, weight_decay=weight_decay,
                   m={k: np.zeros_like(p) for k, p in params.items()},
                   v={k: np.zeros_like(p) for k, p in params.items()})


def grad_step(params: dict[str, np.ndarray], state: OptimizerState,
              grads: dict[str, np.ndarray]) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One AdamW update; returns fresh (params, state)."""
    for k, p in params.items():
        if grads[k].shape != p.shape:
            raise ValueError(f"gradient shape mismatch for {k!r}")
    t = state.step + 1
    new_params = {}
    new_m, new_v = {}, {}
    for k, p in params.items():
        g = grads[k]
        m = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        m_hat = m / (1.0 - state.beta1 ** t)
        v_hat = v / (1.0 - state.beta2 ** t)
        p_new = p - state.lr * (m_hat / (np.sqrt(v_hat) + state.eps) + state.weight_decay * p)
        if not np.isfinite(p_new).all():
            raise FloatingPointError(f"non-finite parameter {k!r} after optimizer step")
        new_params[k] = p_new
        new_m[k], new_v[k] = m, v
    new_state = OptimizerState(lr=state.lr, weight_decay=state.weight_decay,
                               beta1=state.beta1, beta2=state.beta2, eps=state.eps,
                               step=t, m=new_m, v=new_v)
    return new_params, new_state


def time_embedding(t: np.ndarray, dim: int = TIME_EMB_DIM) -> np.ndarray:
    """Sinusoidal features of the integer timestep; the first MLP layer
    provides the learned linear projection."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-np.log(10_000.0) * np.arange(half) / half)
    ang = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


@dataclass
class ConditioningContext:
    """Shared conditioning for both channels.

    Observed blocks carry zeros plus a mask bit at non-conditioned positions;
    pseudo-target ground truth never appears here. Cross blocks hold the
    other channel's latest estimates at its target positions (zeros until an
    estimate exists).
    """

    obs_cont: np.ndarray       # (n, d_cont) values, 0 where not conditioned
    obs_cont_mask: np.ndarray  # (n, d_cont) 1.0 = conditioned
    obs_cat: np.ndarray        # (n, sum K) one-hots, 0 where not conditioned
    obs_cat_mask: np.ndarray   # (n, d_cat)
    cross_cont: np.ndarray     # (n, d_cont)
    cross_cat: np.ndarray      # (n, sum K)

    def with_cross(self, cross_cont=None, cross_cat=None) -> "ConditioningContext":
        return ConditioningContext(
            self.obs_cont, self.obs_cont_mask, self.obs_cat, self.obs_cat_mask,
            self.cross_cont if cross_cont is None else cross_cont,
            self.cross_cat if cross_cat is None else cross_cat,
        )


def cont_net_input(ctx: ConditioningContext, x_t: np.ndarray, target_mask: np.ndarray,
                   t: np.ndarray, noise_scale: np.ndarray | None = None) -> np.ndarray:
    """noise_scale holds sqrt(1 - alpha_bar_t) per row; the leading scaled
    block feeds the diagonal output skip, whose learned gate then recovers
    the prior-optimal prediction at deeply noised steps."""
    scale = np.ones(x_t.shape[0]) if noise_scale is None else np.asarray(noise_scale)
    return np.hstack([
        x_t * scale[:, None],
        x_t, target_mask.astype(float),
        ctx.obs_cont, ctx.obs_cont_mask,
        ctx.obs_cat, ctx.obs_cat_mask,
        ctx.cross_cat,
        time_embedding(t),
    ])


def disc_net_input(ctx: ConditioningContext, p_t: np.ndarray, target_mask: np.ndarray,
                   t: np.ndarray) -> np.ndarray:
    return np.hstack([
        p_t, target_mask.astype(float),
        ctx.obs_cat, ctx.obs_cat_mask,
        ctx.obs_cont, ctx.obs_cont_mask,
        ctx.cross_cont,
        time_embedding(t),
    ])


def cont_input_dim(d_cont: int, cat_width: int, d_cat: int) -> int:
    return 5 * d_cont + 2 * cat_width + d_cat + TIME_EMB_DIM


def disc_input_dim(d_cont: int, cat_width: int, d_cat: int) -> int:
    return 2 * cat_width + 2 * d_cat + 3 * d_cont + TIME_EMB_DIM


def _check_finite(x: np.ndarray, what: str) -> None:
    if not np.isfinite(x).all():
        raise ValueError(f"non-finite values in {what}")


def predict_noise(params: dict[str, np.ndarray], x_t: np.ndarray, t: np.ndarray,
                  ctx: ConditioningContext, target_mask: np.ndarray,
                  noise_scale: np.ndarray | None = None) -> np.ndarray:
    """Noise estimate over the continuous block (only target positions are meaningful)."""
    inp = cont_net_input(ctx, x_t, target_mask, t, noise_scale)
    _check_finite(inp, "continuous denoiser input")
    out, _ = mlp_forward(params, inp)
    return out


def predict_logits(params: dict[str, np.ndarray], p_t: np.ndarray, t: np.ndarray,
                   ctx: ConditioningContext, target_mask: np.ndarray) -> np.ndarray:
    """Per-column logit blocks over the concatenated categorical layout."""
    inp = disc_net_input(ctx, p_t, target_mask, t)
    _check_finite(inp, "discrete denoiser input")
    out, _ = mlp_forward(params, inp)
    return out


def finite_diff_check(params: dict[str, np.ndarray], loss_fn, seed: int = 0,
                      n_coords: int = 40, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_fn maps a params dict to (loss, grads). Coordinates are sampled
    uniformly across all parameter arrays.
    """
    rng = np.random.default_rng(seed)
    _, grads = loss_fn(params)
    keys = sorted(params)
    sizes = np.array([params[k].size for k in keys])
    total = sizes.sum()
    worst = 0.0
    for flat in rng.choice(total, size=min(n_coords, total), replace=False):
        ki = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
        offset = int(flat - np.concatenate(([0], np.cumsum(sizes)))[ki])
        key = keys[ki]
        idx = np.unravel_index(offset, params[key].shape)

        def shifted(delta):
            p = {k: v.copy() for k, v in params.items()}
            p[key][idx] += delta
            return loss_fn(p)[0]

        numeric = (shifted(h) - shifted(-h)) / (2.0 * h)
        analytic = grads[key][idx]
        err = abs(analytic - numeric) / (abs(analytic) + 1e-8)
        worst = max(worst, float(err))
    return worst
