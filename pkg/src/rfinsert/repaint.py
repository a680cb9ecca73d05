"""Mask-conditioned inpainting scheduler with resampling.

Implements the forward noising process, the per-step known/unknown blending

    x_{t-1} = (1 - M) * x_known + M * x_unknown

and the resampling loop (``jump_length`` forward steps re-applied ``steps``
times after each reverse step) around an abstract denoiser.  Every scheduler
event can be emitted as a trace line ``t_from t_to kind`` for audit.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NoiseSchedule",
    "RepaintConfig",
    "Denoiser",
    "TargetDenoiser",
    "NoiseDenoiser",
    "forward_noise",
    "blend",
    "repaint_inpaint",
    "repaint_trace",
    "format_trace",
]


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-step variances beta_t, t = 0..T-1, each in (0, 1)."""

    betas: np.ndarray

    def __post_init__(self):
        betas = np.asarray(self.betas, dtype=float)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty 1D array")
        if np.any((betas <= 0) | (betas >= 1)):
            raise ValueError("every beta must lie in (0, 1)")
        object.__setattr__(self, "betas", betas)

    @property
    def num_steps(self) -> int:
        return self.betas.size

    @property
    def alpha_bar(self) -> np.ndarray:
        """Cumulative products of (1 - beta); alpha_bar[t] is the marginal at x_t."""
        return np.concatenate([[1.0], np.cumprod(1.0 - self.betas)])

    @classmethod
    def linear(cls, num_steps: int, beta_start=1e-3, beta_end=0.35) -> "NoiseSchedule":
        return cls(np.linspace(beta_start, beta_end, num_steps))


@dataclass(frozen=True)
class RepaintConfig:
    """Resampling hyperparameters; both default to 2."""

    jump_length: int = 2
    steps: int = 2
    seed: int = 0
    resample_min_t: int | None = None  # floor below which no resampling; None = jump_length

    def __post_init__(self):
        if self.jump_length < 1 or self.steps < 1:
            raise ValueError("jump_length and steps must be >= 1")

    def floor(self) -> int:
        return self.jump_length if self.resample_min_t is None else self.resample_min_t


class Denoiser:
    """One reverse step x_t -> x_{t-1}; deterministic given its own seeding."""

    def step(self, x_t: np.ndarray, t: int) -> np.ndarray:
        raise NotImplementedError


class TargetDenoiser(Denoiser):
    """Toy denoiser that pulls toward a fixed target image.

    Returns the forward-marginal mean of the target at t-1, so a full reverse
    pass lands exactly on the target.
    """

    def __init__(self, target: np.ndarray, schedule: NoiseSchedule):
        self.target = np.asarray(target, dtype=float)
        self.alpha_bar = schedule.alpha_bar

    def step(self, x_t, t):
        if x_t.shape != self.target.shape:
            raise ValueError("denoiser input shape must match the target")
        return np.sqrt(self.alpha_bar[t - 1]) * self.target


class NoiseDenoiser(Denoiser):
    """Schedule-tracing denoiser: records calls and returns seeded noise."""

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)
        self.calls: list[int] = []

    def step(self, x_t, t):
        self.calls.append(t)
        return self.rng.normal(size=x_t.shape)


def forward_noise(x0: np.ndarray, t: int, schedule: NoiseSchedule, rng) -> np.ndarray:
    """Sample the closed-form marginal q(x_t | x0)."""
    if not (0 <= t <= schedule.num_steps):
        raise ValueError(f"step {t} outside [0, {schedule.num_steps}]")
    x0 = np.asarray(x0, dtype=float)
    if t == 0:
        return x0.copy()
    ab = schedule.alpha_bar[t]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * rng.normal(size=x0.shape)


def forward_step(x_prev: np.ndarray, t: int, schedule: NoiseSchedule, rng) -> np.ndarray:
    """Single forward transition q(x_t | x_{t-1}), used by resampling jumps."""
    beta = schedule.betas[t - 1]
    return np.sqrt(1.0 - beta) * x_prev + np.sqrt(beta) * rng.normal(size=x_prev.shape)


def blend(known: np.ndarray, unknown: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Elementwise selection: mask 1 takes ``unknown``, mask 0 takes ``known``."""
    known = np.asarray(known)
    unknown = np.asarray(unknown)
    mask = np.asarray(mask)
    if known.shape != unknown.shape:
        raise ValueError(f"shape mismatch: {known.shape} vs {unknown.shape}")
    if mask.shape != known.shape[:mask.ndim] or mask.ndim > known.ndim:
        raise ValueError(f"mask shape {mask.shape} incompatible with {known.shape}")
    m = mask.astype(float).reshape(mask.shape + (1,) * (known.ndim - mask.ndim))
    return (1.0 - m) * known + m * unknown


def repaint_trace(num_steps: int, cfg: RepaintConfig) -> list[tuple[int, int, str]]:
    """Enumerate the scheduler's events as (t_from, t_to, kind) triples.

    kind is one of denoise / renoise / blend.  Resampling runs after each
    reverse step when the landing step t-1 is at or above the floor and the
    jump stays within [0, T].
    """
    events = []
    t_top = num_steps
    floor = cfg.floor()

    def reverse(t):
        events.append((t, t - 1, "denoise"))
        events.append((t - 1, t - 1, "blend"))

    for t in range(num_steps, 0, -1):
        reverse(t)
        lo = t - 1
        if lo >= floor and lo + cfg.jump_length <= t_top:
            for _ in range(cfg.steps):
                events.append((lo, lo + cfg.jump_length, "renoise"))
                for tt in range(lo + cfg.jump_length, lo, -1):
                    reverse(tt)
    events.append((0, 0, "blend"))
    return events


def format_trace(events) -> str:
    return "\n".join(f"{a} {b} {kind}" for a, b, kind in events) + "\n"


def repaint_inpaint(denoiser: Denoiser, x0: np.ndarray, mask: np.ndarray,
                    schedule: NoiseSchedule, cfg: RepaintConfig,
                    trace: list | None = None) -> np.ndarray:
    """Inpaint the masked region of x0; unmasked pixels survive bitwise.

    Runs t = T..1 with known/unknown blending each step, plus ``steps``
    resampling cycles of ``jump_length`` forward steps and re-denoising.
    """
    x0 = np.asarray(x0, dtype=float)
    rng = np.random.default_rng(cfg.seed)
    num_steps = schedule.num_steps
    floor = cfg.floor()

    x = forward_noise(x0, num_steps, schedule, rng)

    def reverse(x, t):
        unknown = denoiser.step(x, t)
        known = forward_noise(x0, t - 1, schedule, rng)
        if trace is not None:
            trace.append((t, t - 1, "denoise"))
            trace.append((t - 1, t - 1, "blend"))
        return blend(known, unknown, mask)

    for t in range(num_steps, 0, -1):
        x = reverse(x, t)
        lo = t - 1
        if lo >= floor and lo + cfg.jump_length <= num_steps:
            for _ in range(cfg.steps):
                for tt in range(lo + 1, lo + cfg.jump_length + 1):
                    x = forward_step(x, tt, schedule, rng)
                if trace is not None:
                    trace.append((lo, lo + cfg.jump_length, "renoise"))
                for tt in range(lo + cfg.jump_length, lo, -1):
                    x = reverse(x, tt)

    # Final blend at t=0: exact outside-mask equality with the input.
    x = blend(x0, x, mask)
    if trace is not None:
        trace.append((0, 0, "blend"))
    return x
