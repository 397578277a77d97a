"""Stochastic samplers: Langevin dynamics over motions, a persistent chain
buffer for negative samples, and adaptive SG-HMC over head parameters."""
import logging
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np

from skelbeat.kernel import energy

logger = logging.getLogger(__name__)

CLAMP = 5.0


class SamplerError(Exception):
    """Invalid sampler configuration or a diverging chain."""


@dataclass(frozen=True)
class SgldConfig:
    """Langevin step epsilon, noise std sigma_n and default step count.

    One step is x + eps^2 / 2 * grad log p(x) + eps * sigma_n * N(0, I).
    """
    step: float = 0.01
    noise: float = 0.005
    steps: int = 10

    def __post_init__(self):
        if self.step < 0 or self.noise < 0 or self.steps < 0:
            raise SamplerError("SGLD step, noise and step count must not be "
                               "negative: %s" % (self,))


def _langevin(point: np.ndarray, grad: np.ndarray, cfg: SgldConfig,
              rng: np.random.Generator) -> np.ndarray:
    return point + 0.5 * cfg.step ** 2 * grad + \
        cfg.step * cfg.noise * rng.standard_normal(point.shape)


def sgld_step(point, grad_fn: Callable[[np.ndarray], np.ndarray],
              cfg: SgldConfig, rng: np.random.Generator) -> np.ndarray:
    """One Langevin ascent step on the log-density whose gradient is
    grad_fn."""
    point = np.asarray(point, dtype=np.float64)
    grad = np.asarray(grad_fn(point), dtype=np.float64)
    if grad.shape != point.shape:
        raise SamplerError("gradient of shape %s for point of shape %s"
                           % (grad.shape, point.shape))
    if not np.all(np.isfinite(grad)):
        raise SamplerError("non-finite gradient in SGLD step")
    return _langevin(point, grad, cfg, rng)


def run_sgld(point, grad_fn, cfg: SgldConfig, rng: np.random.Generator,
             steps: int = None, clamp: float = None) -> np.ndarray:
    """Several Langevin steps, clipped to [-clamp, clamp] after each one
    when clamp is given."""
    for _ in range(cfg.steps if steps is None else steps):
        point = sgld_step(point, grad_fn, cfg, rng)
        if clamp is not None:
            point = np.clip(point, -clamp, clamp)
    return point


class PcdBuffer:
    """Persistent negative chains with random restarts.

    Args:
        shape: shape of one motion (M, J, 3)
        rng: fills the buffer with uniform noise in [-1, 1]
        capacity: number of stored chains
        reinit: probability that a drawn chain restarts from noise
    """

    def __init__(self, shape: Tuple[int, ...], rng: np.random.Generator,
                 capacity: int = 512, reinit: float = 0.05):
        if capacity < 1:
            raise SamplerError("buffer capacity must be positive")
        if not 0.0 <= reinit <= 1.0:
            raise SamplerError("reinit probability %r outside [0, 1]"
                               % (reinit,))
        self.shape = tuple(shape)
        self.capacity = capacity
        self.reinit = reinit
        self.samples = self.noise(capacity, rng)

    def noise(self, count: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=(count,) + self.shape)

    def draw(self, count: int,
             rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
        """Chain start points and the buffer slots they belong to."""
        slots = rng.integers(0, self.capacity, size=count)
        starts = self.samples[slots].copy()
        restart = rng.random(count) < self.reinit
        if np.any(restart):
            starts[restart] = self.noise(int(restart.sum()), rng)
        return starts, slots

    def store(self, slots: np.ndarray, samples: np.ndarray):
        if not np.all(np.isfinite(samples)):
            raise SamplerError("refusing to store non-finite chains")
        self.samples[slots] = samples

    def __len__(self):
        return self.capacity


def sample_negatives(model, buffer: PcdBuffer, batch_size: int,
                     steps: int, cfg: SgldConfig,
                     rng: np.random.Generator) -> np.ndarray:
    """Run short Langevin chains on log p(x) from buffer entries or noise.

    Chains are clamped to [-5, 5] after every step; a chain that turns
    non-finite restarts from noise. Results are written back to the buffer.
    """
    chains, slots = buffer.draw(batch_size, rng)
    for _ in range(steps):
        grad = energy.grad_log_px_wrt_input(model, chains)
        broken = ~np.all(np.isfinite(grad), axis=(1, 2, 3))
        grad[broken] = 0.0
        chains = np.clip(_langevin(chains, grad, cfg, rng), -CLAMP, CLAMP)
        broken |= ~np.all(np.isfinite(chains), axis=(1, 2, 3))
        if np.any(broken):
            logger.debug("Restarting %d diverged negative chains",
                         int(broken.sum()))
            chains[broken] = buffer.noise(int(broken.sum()), rng)
    buffer.store(slots, chains)
    return chains


def sample_adversary(model, x, y, budget: float, steps: int,
                     cfg: SgldConfig, rng: np.random.Generator,
                     distance: energy.ManifoldDistanceConfig = None,
                     bones=None) -> np.ndarray:
    """Langevin ascent on log p(x~ | x, y) from a uniform perturbation of x.

    Like negatives, adversaries are clamped to [-5, 5] after every step.

    Args:
        x: clean motions (n, M, J, 3) or one motion
        y: their labels
        budget: half width b of the uniform start perturbation
        bones: B x 2 bone array of the topology
    """
    if budget < 0:
        raise SamplerError("perturbation budget must not be negative")
    distance = distance or energy.ManifoldDistanceConfig()
    x = np.asarray(x, dtype=np.float64)
    x_adv = x + rng.uniform(-budget, budget, size=x.shape)

    def grad_fn(point):
        return energy.grad_log_cond_adv_wrt_input(model, point, x, y,
                                                  distance, bones)

    return run_sgld(x_adv, grad_fn, cfg, rng, steps, clamp=CLAMP)


# --- SG-HMC over parameters --------------------------------------------------

@dataclass(frozen=True)
class SgahmcConfig:
    """Step sigma, friction F, steps per update and adaptation window.

    The preconditioner C starts at 1 and never drops below c_floor.
    """
    step: float = 0.01
    friction: float = 1e-5
    steps: int = 30
    adapt_steps: int = 10000
    c_floor: float = 1e-8

    def __post_init__(self):
        if self.step <= 0:
            raise SamplerError("SG-AHMC step must be positive")
        if self.friction <= 0:
            raise SamplerError("SG-AHMC friction must be positive")
        if self.steps < 0 or self.adapt_steps < 0:
            raise SamplerError("step counts must not be negative")
        if self.c_floor <= 0:
            raise SamplerError("the preconditioner floor must be positive")


class SgahmcSampler:
    """Adaptive preconditioned SG-HMC state of one parameter vector.

    h passed to step() is the gradient of the loss (negative log
    posterior), so the drift term descends.

    Args:
        size: number of parameters
        cfg: sampler settings
        rng: noise stream owned by this sampler
    """

    def __init__(self, size: int, cfg: SgahmcConfig,
                 rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.precond = np.ones(size)
        self.tau = np.ones(size)
        self.grad_mean = np.zeros(size)
        self.iteration = 0

    def noise_variance(self) -> np.ndarray:
        sigma, friction = self.cfg.step, self.cfg.friction
        return np.maximum(2.0 * friction * sigma ** 3 / self.precond
                          - sigma ** 4, 0.0)

    def step(self, theta: np.ndarray, h: np.ndarray) -> np.ndarray:
        theta = np.asarray(theta, dtype=np.float64)
        h = np.asarray(h, dtype=np.float64)
        if h.shape != theta.shape or h.shape != self.precond.shape:
            raise SamplerError("gradient shape %s does not fit %s"
                               % (h.shape, self.precond.shape))
        if not np.all(np.isfinite(h)):
            raise SamplerError("non-finite loss gradient in SG-AHMC step")
        sigma = self.cfg.step
        theta = theta - sigma ** 2 * h / np.sqrt(self.precond) + \
            np.sqrt(self.noise_variance()) * self.rng.standard_normal(
                theta.shape)
        if self.iteration < self.cfg.adapt_steps:
            ratio = self.grad_mean ** 2 / self.precond
            self.tau = np.maximum(self.tau * (1.0 - ratio), 0.0) + 1.0
        weight = 1.0 / self.tau
        self.precond = np.maximum((1.0 - weight) * self.precond
                                  + weight * h ** 2, self.cfg.c_floor)
        self.grad_mean = (1.0 - weight) * self.grad_mean + weight * h
        self.iteration += 1
        return theta

    def run(self, theta: np.ndarray,
            grad_fn: Callable[[np.ndarray], np.ndarray],
            steps: int = None) -> np.ndarray:
        """Several steps, h recomputed by grad_fn at every position."""
        for _ in range(self.cfg.steps if steps is None else steps):
            theta = self.step(theta, grad_fn(theta))
        return theta


def sgahmc_step(theta: np.ndarray, h: np.ndarray,
                state: SgahmcSampler) -> np.ndarray:
    return state.step(theta, h)
