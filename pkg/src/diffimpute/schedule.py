"""Noise schedules, timestep subsequences, and the eta-controlled step variance.

Schedules index timesteps 1..T; arrays carry a leading slot for t=0 so that
alpha_bar[0] == 1 by convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COSINE_OFFSET = 0.008
BETA_CLIP = 0.999


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step mixing rates beta and their cumulative survival product alpha_bar."""

    T: int
    beta: np.ndarray       # (T+1,), beta[0] unused (0.0)
    alpha_bar: np.ndarray  # (T+1,), alpha_bar[0] == 1.0, strictly decreasing

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.beta.shape != (self.T + 1,) or self.alpha_bar.shape != (self.T + 1,):
            raise ValueError("schedule arrays must have length T+1")
        if not (np.diff(self.alpha_bar) < 0).all():
            raise ValueError("alpha_bar must be strictly decreasing")
        inner = self.beta[1:]
        if not ((inner > 0) & (inner < 1)).all():
            raise ValueError("beta must lie in (0,1)")


def _from_betas(beta: np.ndarray) -> NoiseSchedule:
    T = len(beta)
    full_beta = np.concatenate(([0.0], beta))
    alpha_bar = np.concatenate(([1.0], np.cumprod(1.0 - beta)))
    return NoiseSchedule(T, full_beta, alpha_bar)


def linear_schedule(T: int, beta_min: float, beta_max: float) -> NoiseSchedule:
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_min <= beta_max < 1.0):
        raise ValueError("need 0 < beta_min <= beta_max < 1")
    return _from_betas(np.linspace(beta_min, beta_max, T))


def cosine_schedule(T: int) -> NoiseSchedule:
    """Squared-cosine alpha_bar with the usual small offset and beta clipping."""
    if T < 1:
        raise ValueError("T must be >= 1")
    t = np.arange(T + 1)
    f = np.cos(((t / T + COSINE_OFFSET) / (1.0 + COSINE_OFFSET)) * np.pi / 2.0) ** 2
    ab = f / f[0]
    beta = np.clip(1.0 - ab[1:] / ab[:-1], 1e-8, BETA_CLIP)
    return _from_betas(beta)


def discrete_schedule(T: int) -> NoiseSchedule:
    """Linearly annealed mixing kernel for the discrete channel.

    The endpoint is chosen so the cumulative survival alpha_bar[T] drops
    below 1e-2: by step T the forward mixture is essentially uniform.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if T == 1:
        return linear_schedule(1, BETA_CLIP, BETA_CLIP)
    beta_min = 0.02 / T
    # ln(200) total mixing mass puts alpha_bar[T] near 5e-3
    beta_max = min(BETA_CLIP, max(beta_min * (1 + 1e-9), 2.0 * np.log(200.0) / T - beta_min))
    return linear_schedule(T, beta_min, beta_max)


def sigma_eta(schedule: NoiseSchedule, t_prev: int, t_cur: int, eta: float) -> float:
    """Reverse-step noise scale interpolating deterministic (0) and DDPM-like (1)."""
    if not 0 <= t_prev < t_cur <= schedule.T:
        raise ValueError(f"need 0 <= t_prev < t_cur <= T, got ({t_prev}, {t_cur})")
    ab_prev = schedule.alpha_bar[t_prev]
    ab_cur = schedule.alpha_bar[t_cur]
    if ab_cur >= 1.0:
        raise ZeroDivisionError("alpha_bar at the current step must be < 1")
    return float(eta * np.sqrt((1.0 - ab_prev) / (1.0 - ab_cur))
                 * np.sqrt(1.0 - ab_cur / ab_prev))


@dataclass(frozen=True)
class TimestepPlan:
    """Strictly increasing sampling subsequence of {1..T}, ending at T."""

    tau: np.ndarray
    eta: float = 0.0

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=int)
        if tau.size == 0 or not (np.diff(tau) > 0).all() or tau[0] < 1:
            raise ValueError("tau must be a non-empty strictly increasing sequence of steps >= 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0,1]")
        object.__setattr__(self, "tau", tau)

    def pairs(self):
        """(t_prev, t_cur) reverse transitions, ending at t_prev == 0."""
        tau = self.tau
        prev = np.concatenate(([0], tau[:-1]))
        return list(zip(prev.tolist(), tau.tolist()))[::-1]


def make_subsequence(T: int, steps: int, spacing: str = "uniform",
                     eta: float = 0.0) -> TimestepPlan:
    if not 1 <= steps <= T:
        raise ValueError(f"steps must lie in [1, T], got steps={steps}, T={T}")
    i = np.arange(1, steps + 1)
    if spacing == "uniform":
        tau = np.ceil(i * T / steps).astype(int)
    elif spacing == "quadratic":
        tau = np.rint(T * (i / steps) ** 2).astype(int)
        # repair collisions while keeping the endpoint at T
        tau[-1] = T
        for k in range(steps - 2, -1, -1):
            tau[k] = min(tau[k], tau[k + 1] - 1)
        for k in range(steps):
            tau[k] = max(tau[k], k + 1)
    else:
        raise ValueError(f"unknown spacing {spacing!r}")
    return TimestepPlan(tau, eta=eta)
