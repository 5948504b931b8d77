"""Diffusion mathematics: noise schedule, velocity targets, expectation
recovery, the training loss, and the Euler-ancestral sampler.

The forward process follows the discrete variance-preserving construction:
a linear beta ramp over T steps gives abar_t = prod(1 - beta_s), and the
network input is the normalized y = a_t x + b_t n with a_t = sqrt(abar_t),
b_t = sqrt(1 - abar_t), so a^2 + b^2 = 1 by construction and the noise
level is sigma_t = b_t / a_t. The network predicts the velocity
v = a n - b x, from which both signal and noise expectations follow
algebraically:

    E_n = b y + a v,    E_x = a y - b v.

Sampling runs in the unnormalized variable xhat = y * sqrt(1 + sigma^2),
whose ODE derivative is (xhat - E_x) / sigma; each of the ``steps`` Euler
updates is followed by fresh-noise injection calibrated so the marginal
noise level is preserved (the ancestral split).

Everything here is plain array arithmetic: the elementwise operations work
on numpy arrays and torch tensors alike, and the denoiser enters only as a
callable, so an analytic oracle can stand in for the trained network.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

BETA_START = 1e-4
BETA_END = 0.02
DEFAULT_T = 1000


class DiffusionError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    """Per-timestep noise levels; index with 1-based t via a(t), b(t), sigma(t)."""

    T: int
    sigmas: np.ndarray
    a_table: np.ndarray
    b_table: np.ndarray

    def __post_init__(self):
        if self.T < 2:
            raise DiffusionError("schedule needs T >= 2")
        if not (np.diff(self.sigmas) > 0).all():
            raise DiffusionError("sigma must be strictly increasing")
        unit = self.a_table**2 + self.b_table**2
        if np.abs(unit - 1.0).max() > 1e-12:
            raise DiffusionError("a^2 + b^2 deviates from 1")
        for arr in (self.sigmas, self.a_table, self.b_table):
            arr.setflags(write=False)

    def a(self, t) -> np.ndarray:
        return self.a_table[np.asarray(t) - 1]

    def b(self, t) -> np.ndarray:
        return self.b_table[np.asarray(t) - 1]

    def sigma(self, t) -> np.ndarray:
        return self.sigmas[np.asarray(t) - 1]

    @property
    def sigma_max(self) -> float:
        return float(self.sigmas[-1])


def build_schedule(T: int = DEFAULT_T) -> NoiseSchedule:
    """Linear-beta schedule from 1e-4 to 0.02 over T steps."""
    betas = np.linspace(BETA_START, BETA_END, T, dtype=np.float64)
    abar = np.cumprod(1.0 - betas)
    a = np.sqrt(abar)
    b = np.sqrt(1.0 - abar)
    return NoiseSchedule(T=T, sigmas=b / a, a_table=a, b_table=b)


def make_training_pair(
    x: np.ndarray, t, schedule: NoiseSchedule, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw n ~ N(0, 1) and return (y, v_target) = (a x + b n, a n - b x).

    ``t`` may be a scalar (single latent) or a per-item vector matching the
    leading axis of a batched ``x``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = rng.standard_normal(x.shape)
    t_arr = np.asarray(t)
    a = schedule.a(t_arr)
    b = schedule.b(t_arr)
    if t_arr.ndim:  # per-item timesteps on a batch
        extra = (1,) * (x.ndim - 1)
        a = a.reshape(t_arr.shape + extra)
        b = b.reshape(t_arr.shape + extra)
    return a * x + b * n, a * n - b * x


def expectations(y, v, t, schedule: NoiseSchedule):
    """Recover (E_x, E_n) from the network input and a velocity estimate.

    Exact inverse when v is the true target (uses a^2 + b^2 = 1); for any v
    the reconstruction identity a E_x + b E_n = y still holds.
    """
    a = schedule.a(t)
    b = schedule.b(t)
    e_x = a * y - b * v
    e_n = b * y + a * v
    return e_x, e_n


def kdiffusion_loss(v_pred, v_target):
    """Mean squared error on the velocity, over every element."""
    if getattr(v_pred, "shape", None) != getattr(v_target, "shape", None):
        raise DiffusionError(
            f"shape mismatch: {getattr(v_pred, 'shape', None)} vs {getattr(v_target, 'shape', None)}"
        )
    diff = v_pred - v_target
    return (diff * diff).mean()


def kdiffusion_loss_grad(v_pred: np.ndarray, v_target: np.ndarray) -> np.ndarray:
    """Analytic gradient of :func:`kdiffusion_loss` w.r.t. v_pred."""
    v_pred = np.asarray(v_pred, dtype=np.float64)
    return 2.0 * (v_pred - v_target) / v_pred.size


@dataclass(frozen=True)
class SamplerConfig:
    """Euler-ancestral sampler knobs; defaults follow the capture pipeline.

    ``posterior_noise`` controls how much of the signal posterior's spread is
    re-injected along with the usual ancestral noise. The point-mass split
    (posterior_noise = 0) is exact when the denoiser's posterior is sharp but
    systematically underdisperses diffuse targets at low step counts; 1 is
    exact for a unit-variance Gaussian data prior (the standard "large"
    variance choice of discrete-time diffusion). The default recovers unit
    variance within a few percent at 20 steps while staying close to the
    sharp-posterior behaviour that trained, overfit models prefer.
    """

    steps: int = 20
    guidance_scale: float = 1.0
    seed: int = 0
    eta: float = 1.0  # scales the point-mass ancestral noise; 1 = full
    posterior_noise: float = 0.75
    schedule_T: int = DEFAULT_T

    def __post_init__(self):
        if self.steps < 1:
            raise DiffusionError("steps must be >= 1")


def sample_timesteps(T: int, steps: int) -> np.ndarray:
    """Evenly spaced integer timesteps from T down to 1 (inclusive)."""
    return np.unique(np.round(np.linspace(T, 1, steps)).astype(int))[::-1]


def ancestral_split(
    sigma_from: float, sigma_to: float, eta: float = 1.0, posterior_noise: float = 0.0
) -> tuple[float, float]:
    """(sigma_down, sigma_up): Euler step target and re-injected noise scale.

    The base split sigma_up^2 = sigma_to^2 (sigma_from^2 - sigma_to^2) /
    sigma_from^2, sigma_down^2 = sigma_to^2 - sigma_up^2 is the exact bridge
    noise when the signal is pinned by the denoiser. ``posterior_noise``
    adds the remaining spread of the signal posterior under a unit-Gaussian
    data prior, (1 - r)^2 sigma_from^2 / (1 + sigma_from^2) with
    r = sigma_to^2 / sigma_from^2, which restores the exact reverse kernel
    for that prior. sigma_down always refers to the base split so the Euler
    mean update is unchanged.
    """
    s2f = sigma_from * sigma_from
    s2t = sigma_to * sigma_to
    shrink = 1.0 - s2t / s2f
    posterior_var = posterior_noise * shrink * shrink * s2f / (1.0 + s2f)
    if sigma_to <= 0:
        return 0.0, float(np.sqrt(posterior_var))
    base = min(s2t, eta * eta * s2t * (s2f - s2t) / s2f)
    sigma_down = float(np.sqrt(s2t - base))
    return sigma_down, float(np.sqrt(base + posterior_var))


def sample_eulera(
    denoiser: Callable[[np.ndarray, int, np.ndarray | None], np.ndarray],
    shape: tuple[int, ...],
    cfg: SamplerConfig,
    condition: np.ndarray | None = None,
    schedule: NoiseSchedule | None = None,
    zero_condition: np.ndarray | None = None,
) -> np.ndarray:
    """Sample one latent by Euler-ancestral integration of the denoising ODE.

    ``denoiser(y, t, condition)`` must return the velocity estimate for the
    normalized input y at integer timestep t. Starting from pure Gaussian
    noise at sigma_max, each step computes E_x, takes an Euler step of the
    unnormalized ODE to sigma_down, then adds fresh noise of scale sigma_up;
    the final state at sigma = 0 is the sampled latent. Deterministic given
    cfg.seed.

    With guidance_scale != 1 the velocity is the classifier-free
    interpolation v_zero + g * (v_cond - v_zero) against ``zero_condition``
    (an all-zeros stack by default).
    """
    if schedule is None:
        schedule = build_schedule(cfg.schedule_T)
    rng = np.random.default_rng(cfg.seed)
    ts = sample_timesteps(schedule.T, cfg.steps)
    sigmas = np.append(schedule.sigma(ts), 0.0)

    xhat = rng.standard_normal(shape) * sigmas[0]
    guided = cfg.guidance_scale != 1.0 and condition is not None
    if guided and zero_condition is None:
        zero_condition = np.zeros_like(condition)

    for i, t in enumerate(ts):
        sigma = float(sigmas[i])
        a = float(schedule.a(int(t)))
        b = float(schedule.b(int(t)))
        y = a * xhat  # a = 1 / sqrt(1 + sigma^2)
        v = denoiser(y, int(t), condition)
        if guided:
            v_zero = denoiser(y, int(t), zero_condition)
            v = v_zero + cfg.guidance_scale * (v - v_zero)
        e_x = a * y - b * v
        if not np.isfinite(e_x).all():
            raise DiffusionError(f"non-finite state at step {i} (t={t}, sigma={sigma:.4g})")
        d = (xhat - e_x) / sigma
        sigma_down, sigma_up = ancestral_split(
            sigma, float(sigmas[i + 1]), cfg.eta, cfg.posterior_noise
        )
        xhat = xhat + d * (sigma_down - sigma)
        if sigma_up > 0:
            xhat = xhat + rng.standard_normal(shape) * sigma_up
    return xhat


def gaussian_oracle_denoiser(y: np.ndarray, t: int, condition=None) -> np.ndarray:
    """Exact velocity for an N(0, I) data distribution: identically zero.

    For x, n ~ N(0, I) and y = a x + b n, the posterior means are
    E[x|y] = a y and E[n|y] = b y, so E[v|y] = a b y - b a y = 0. Used as
    the analytic sampler oracle in tests.
    """
    return np.zeros_like(y)
