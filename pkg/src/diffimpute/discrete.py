"""Conditional discrete diffusion on per-column probability simplexes.

The forward kernel mixes each state toward the uniform distribution; the
reverse kernel reweights that mixture by learned logits and renormalizes in
log space, so every intermediate state is a valid categorical distribution.
Intermediate states are carried as distributions end to end; a hard category
only appears at the final argmax decode.
"""

from __future__ import annotations

import numpy as np

from .denoiser import ConditioningContext, disc_net_input, mlp_backward, mlp_forward, predict_logits
from .schedule import NoiseSchedule, TimestepPlan


def uniform_state(cards: list[int], n: int) -> np.ndarray:
    """Concatenated per-column uniform simplex vectors, shape (n, sum K_j)."""
    blocks = [np.full((n, k), 1.0 / k) for k in cards]
    return np.hstack(blocks) if blocks else np.zeros((n, 0))


def lh_forward_step(p: np.ndarray, beta: float, cards: list[int],
                    slices: list[slice]) -> np.ndarray:
    """One mixing step (1-beta)*p + beta*u per column block."""
    out = p.copy()
    for k, sl in zip(cards, slices):
        out[:, sl] = (1.0 - beta) * p[:, sl] + beta / k
    return out


def lh_forward_marginal(p0: np.ndarray, t: np.ndarray, schedule: NoiseSchedule,
                        cards: list[int], slices: list[slice]) -> np.ndarray:
    """Closed form of t mixing steps: gamma_t*p0 + (1-gamma_t)*u (t may be per-row)."""
    t = np.asarray(t, dtype=int)
    if t.min() < 0 or t.max() > schedule.T:
        raise ValueError("t out of range")
    gamma = schedule.alpha_bar[t]
    g = gamma[:, None] if gamma.ndim else gamma
    out = np.empty_like(p0)
    for k, sl in zip(cards, slices):
        out[:, sl] = g * p0[:, sl] + (1.0 - g) / k
    return out


def _renormalize(logits: np.ndarray, mixture: np.ndarray, slices: list[slice]) -> np.ndarray:
    """softmax(logits + log mixture) per block, i.e. exp(f) * mixture renormalized."""
    out = np.empty_like(mixture)
    for sl in slices:
        score = logits[:, sl] + np.log(np.maximum(mixture[:, sl], 1e-300))
        score = score - score.max(axis=1, keepdims=True)
        e = np.exp(score)
        denom = e.sum(axis=1, keepdims=True)
        if (denom == 0.0).any():
            raise FloatingPointError("reverse kernel produced an all-zero block")
        out[:, sl] = e / denom
    return out


def lh_reverse_step(params: dict[str, np.ndarray], p_t: np.ndarray, t: int,
                    ctx: ConditioningContext, schedule: NoiseSchedule,
                    cards: list[int], slices: list[slice],
                    target_mask: np.ndarray, t_prev: int | None = None) -> np.ndarray:
    """Reverse transition t -> t_prev (default t-1).

    For skipped steps the mixture uses the effective rate
    1 - alpha_bar[t]/alpha_bar[t_prev], which reduces to beta_t for
    consecutive steps.
    """
    if t_prev is None:
        t_prev = t - 1
    if not 0 <= t_prev < t:
        raise ValueError("need 0 <= t_prev < t")
    beta_eff = 1.0 - schedule.alpha_bar[t] / schedule.alpha_bar[t_prev]
    n = p_t.shape[0]
    logits = predict_logits(params, p_t, np.full(n, t), ctx, target_mask)
    mixture = lh_forward_step(p_t, beta_eff, cards, slices)
    p_prev = _renormalize(logits, mixture, slices)
    return p_prev


def loss_disc(params: dict[str, np.ndarray], p0: np.ndarray, target_cols: np.ndarray,
              ctx: ConditioningContext, schedule: NoiseSchedule, rng: np.random.Generator,
              cards: list[int], slices: list[slice], t: np.ndarray | None = None,
              return_estimate: bool = False):
    """Cross-entropy between one-hot targets and predicted categories at a
    random timestep; averaged over pseudo-target cells. Returns (loss, grads).

    With return_estimate the stop-gradient softmax prediction (zeros
    off-target) is appended for cross-channel conditioning.
    """
    target_cols = np.asarray(target_cols, dtype=bool)
    count = int(target_cols.sum())
    if count == 0:
        zero = 0.0, {k: np.zeros_like(p) for k, p in params.items()}
        return (*zero, np.zeros(p0.shape)) if return_estimate else zero
    n = p0.shape[0]
    if t is None:
        t = rng.integers(1, schedule.T + 1, size=n)
    p_t = lh_forward_marginal(p0, t, schedule, cards, slices)
    # zero out blocks that are not targets (their p0 is unknown at train time)
    for j, sl in enumerate(slices):
        p_t[:, sl] *= target_cols[:, j:j + 1]

    inp = disc_net_input(ctx, p_t, target_cols, t)
    logits, cache = mlp_forward(params, inp)

    loss = 0.0
    grad_logits = np.zeros_like(logits)
    estimate = np.zeros_like(p0) if return_estimate else None
    for j, sl in enumerate(slices):
        rows = target_cols[:, j]
        if not rows.any():
            continue
        lg = logits[rows][:, sl]
        lg = lg - lg.max(axis=1, keepdims=True)
        soft = np.exp(lg)
        soft /= soft.sum(axis=1, keepdims=True)
        onehot = p0[rows][:, sl]
        loss += float(-(onehot * np.log(np.maximum(soft, 1e-300))).sum())
        block = np.zeros((p0.shape[0], soft.shape[1]))
        block[rows] = (soft - onehot) / count
        grad_logits[:, sl] += block
        if estimate is not None:
            est_block = np.zeros((p0.shape[0], soft.shape[1]))
            est_block[rows] = soft
            estimate[:, sl] = est_block
    loss /= count
    grads = mlp_backward(params, cache, grad_logits)
    if return_estimate:
        return loss, grads, estimate
    return loss, grads


def sample_disc(params: dict[str, np.ndarray], target_cols: np.ndarray,
                ctx: ConditioningContext, plan: TimestepPlan, schedule: NoiseSchedule,
                cards: list[int], slices: list[slice]) -> np.ndarray:
    """Deterministic reverse pass from the uniform state; returns p_0 blocks.

    No sampling happens anywhere on the reverse path, so repeated calls are
    identical by construction.
    """
    target_cols = np.asarray(target_cols, dtype=bool)
    n = target_cols.shape[0]
    p = uniform_state(cards, n)
    for j, sl in enumerate(slices):
        p[:, sl] *= target_cols[:, j:j + 1]
    for t_prev, t_cur in plan.pairs():
        p_new = lh_reverse_step(params, p, t_cur, ctx, schedule, cards, slices,
                                target_cols, t_prev=t_prev)
        for j, sl in enumerate(slices):
            keep = target_cols[:, j:j + 1]
            p[:, sl] = np.where(keep, p_new[:, sl], 0.0)
    return p


def argmax_decode(p0: np.ndarray, slices: list[slice]) -> np.ndarray:
    """Most probable category per block, 1-based; ties break to the lowest index."""
    cols = [np.argmax(p0[:, sl], axis=1) + 1 for sl in slices]
    return np.stack(cols, axis=1) if cols else np.zeros((p0.shape[0], 0), dtype=int)
