"""Conditional continuous diffusion over the missing numerical coordinates.

The forward process noises only target cells; the reverse path offers the
stochastic one-step transition and the subsequence sampler whose eta knob
interpolates between a fully deterministic trajectory (eta = 0) and
DDPM-like sampling (eta = 1).
"""

from __future__ import annotations

import numpy as np

from .denoiser import ConditioningContext, cont_net_input, mlp_backward, mlp_forward, predict_noise
from .schedule import NoiseSchedule, TimestepPlan, sigma_eta

# reverse-path reconstruction clamp in z-units, matching the plausible range
# of standardized data; keeps the poorly-determined high-t steps from
# launching the trajectory off-distribution
X0_CLIP = 4.0

# assumed noise-prediction error variance behind the reconstruction
# shrinkage: the implied x0 carries model error scaled by (1-ab)/ab, so the
# posterior-mean weight ab/(ab + kappa*(1-ab)) pulls deeply-noised steps
# toward the standardized prior mean instead of amplifying them
X0_SHRINK = 0.05


def forward_noise(x0: np.ndarray, t: np.ndarray, schedule: NoiseSchedule,
                  eps: np.ndarray) -> np.ndarray:
    """Closed-form corruption sqrt(ab_t)*x0 + sqrt(1-ab_t)*eps (t may be per-row)."""
    t = np.asarray(t, dtype=int)
    if t.min() < 0 or t.max() > schedule.T:
        raise ValueError("t out of range")
    ab = schedule.alpha_bar[t]
    if ab.ndim and x0.ndim == 2:
        ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps


def loss_cont(params: dict[str, np.ndarray], x0: np.ndarray, target_mask: np.ndarray,
              ctx: ConditioningContext, schedule: NoiseSchedule, rng: np.random.Generator,
              t: np.ndarray | None = None, return_estimate: bool = False):
    """Noise-prediction MSE over pseudo-target cells; returns (loss, grads).

    Cells outside the target mask contribute nothing to the loss or its
    gradient. An empty target set yields loss 0 with zero gradients. With
    return_estimate the stop-gradient implied reconstruction (clamped,
    zeros off-target) is appended for cross-channel conditioning.
    """
    target = np.asarray(target_mask, dtype=bool)
    count = int(target.sum())
    n = x0.shape[0]
    if count == 0:
        zero = 0.0, {k: np.zeros_like(p) for k, p in params.items()}
        return (*zero, np.zeros(target.shape)) if return_estimate else zero
    if t is None:
        t = rng.integers(1, schedule.T + 1, size=n)
    eps = np.where(target, rng.standard_normal(x0.shape), 0.0)
    x_t = np.where(target, forward_noise(np.where(target, x0, 0.0), t, schedule, eps), 0.0)

    scale = np.sqrt(1.0 - schedule.alpha_bar[np.asarray(t, dtype=int)])
    inp = cont_net_input(ctx, x_t, target, t, scale)
    eps_hat, cache = mlp_forward(params, inp)
    resid = np.where(target, eps_hat - eps, 0.0)
    loss = float((resid ** 2).sum() / count)
    grads = mlp_backward(params, cache, 2.0 * resid / count)
    if not return_estimate:
        return loss, grads
    ab = schedule.alpha_bar[np.asarray(t, dtype=int)][:, None]
    x0_hat = (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
    est = np.where(target, stabilize_x0(x0_hat, ab), 0.0)
    return loss, grads, est


def ddpm_step(params: dict[str, np.ndarray], x_t: np.ndarray, t: int,
              ctx: ConditioningContext, target_mask: np.ndarray,
              schedule: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """Stochastic ancestral transition t -> t-1 with variance beta_t."""
    if t < 1:
        raise ValueError("t must be >= 1")
    n = x_t.shape[0]
    beta = schedule.beta[t]
    alpha = 1.0 - beta
    ab = schedule.alpha_bar[t]
    eps_hat = predict_noise(params, x_t, np.full(n, t), ctx, target_mask,
                            np.full(n, np.sqrt(1.0 - ab)))
    mean = (x_t - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(alpha)
    noise = rng.standard_normal(x_t.shape) if t > 1 else 0.0
    x_prev = mean + np.sqrt(beta) * noise
    return np.where(target_mask, x_prev, x_t)


def ddim_step(eps_hat: np.ndarray, x_t: np.ndarray, t_prev: int, t_cur: int,
              schedule: NoiseSchedule, eta: float = 0.0,
              noise: np.ndarray | None = None) -> np.ndarray:
    """Subsequence transition t_cur -> t_prev from a noise estimate.

    eta = 0 is the deterministic update; eta > 0 adds sigma-scaled noise and
    shrinks the direction term so the marginals stay consistent.
    """
    ab_cur = schedule.alpha_bar[t_cur]
    ab_prev = schedule.alpha_bar[t_prev]
    x0_hat = (x_t - np.sqrt(1.0 - ab_cur) * eps_hat) / np.sqrt(ab_cur)
    sigma = sigma_eta(schedule, t_prev, t_cur, eta) if eta > 0.0 else 0.0
    dir_coef = np.sqrt(max(1.0 - ab_prev - sigma ** 2, 0.0))
    x_prev = np.sqrt(ab_prev) * x0_hat + dir_coef * eps_hat
    if sigma > 0.0:
        if noise is None:
            raise ValueError("eta > 0 requires a noise draw")
        x_prev = x_prev + sigma * noise
    return x_prev


def stabilize_x0(x0_hat: np.ndarray, ab, bound: float = X0_CLIP,
                 kappa: float = X0_SHRINK) -> np.ndarray:
    """Shrink an implied reconstruction toward the prior mean and clamp it.

    ab is alpha_bar at the current step (scalar or per-row). The shrinkage
    weight ab/(ab + kappa*(1-ab)) is the posterior mean under a unit-variance
    standardized prior when the model's noise error has variance kappa.
    """
    w = ab / (ab + kappa * (1.0 - ab))
    return np.clip(w * x0_hat, -bound, bound)


def clip_denoised(eps_hat: np.ndarray, x_t: np.ndarray, t_cur: int,
                  schedule: NoiseSchedule, bound: float,
                  kappa: float = X0_SHRINK) -> np.ndarray:
    """Stabilize the implied x0 and return the consistent noise estimate.

    Keeps an undertrained predictor from launching the trajectory to extreme
    values; near t = 0 (ab close to 1) trained predictions pass through
    essentially untouched.
    """
    ab = schedule.alpha_bar[t_cur]
    x0_hat = (x_t - np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(ab)
    x0_hat = stabilize_x0(x0_hat, ab, bound, kappa)
    return (x_t - np.sqrt(ab) * x0_hat) / np.sqrt(1.0 - ab)


def sample_cont(params: dict[str, np.ndarray], target_mask: np.ndarray,
                ctx: ConditioningContext, plan: TimestepPlan, schedule: NoiseSchedule,
                seed: int, noise_seed: int | None = None,
                x0_clip: float | None = X0_CLIP,
                kappa: float = X0_SHRINK) -> np.ndarray:
    """Run the reverse subsequence from seeded standard-normal initial noise.

    seed fixes the initial state; noise_seed (defaults to seed) feeds the
    eta > 0 per-step noise, so runs can share the initial state while
    varying the injected stochasticity. kappa is the assumed noise-prediction
    error variance used by the reconstruction shrinkage.
    """
    target = np.asarray(target_mask, dtype=bool)
    init_rng = np.random.default_rng(seed)
    step_rng = np.random.default_rng(seed if noise_seed is None else noise_seed)
    x = np.where(target, init_rng.standard_normal(target.shape), 0.0)
    n = target.shape[0]
    for t_prev, t_cur in plan.pairs():
        scale = np.full(n, np.sqrt(1.0 - schedule.alpha_bar[t_cur]))
        eps_hat = predict_noise(params, x, np.full(n, t_cur), ctx, target, scale)
        if x0_clip is not None:
            eps_hat = clip_denoised(eps_hat, x, t_cur, schedule, x0_clip, kappa)
        noise = None
        if plan.eta > 0.0 and t_prev > 0:
            noise = np.where(target, step_rng.standard_normal(target.shape), 0.0)
        x_new = ddim_step(eps_hat, x, t_prev, t_cur, schedule, plan.eta, noise)
        x = np.where(target, x_new, 0.0)
    return x
