"""Untargeted attacks on motion classifiers.

Gradient attacks use Classifier.input_gradient, which for ensembles is the
member-averaged cross-entropy gradient. The decision attack only queries
predicted labels.
"""
import logging
from dataclasses import dataclass
from typing import List, Tuple, Union

import numpy as np

from skelbeat.kernel.models import Classifier
from skelbeat.kernel.skeleton import BUDGET_CLASSES, Dataset, \
    LabeledSample, Motion, SkeletonTopology
from skelbeat.settings import Setting, Settings

logger = logging.getLogger(__name__)

ATTACK_KINDS = {
    'iter-l2': 'Iterative gradient ascent with l2-normalized steps',
    'linf-per-joint': 'Sign-gradient ascent clipped to per-joint budgets',
    'decision': 'Label-only boundary walk from a cross-class seed',
    'eot-l2': 'iter-l2 on gradients averaged over interpolated points',
}
DEFAULT_ITERATIONS = {'iter-l2': 100, 'linf-per-joint': 100,
                      'decision': 200, 'eot-l2': 100}


class AttackError(Exception):
    """An attack cannot run on the given inputs."""


def _non_negative(value):
    return value >= 0


class AttackConfig(Settings):
    """One entry of the attacks list of an experiment."""
    section = 'attack'

    kind = Setting(
        default='iter-l2',
        choices=ATTACK_KINDS,
        description='Attack algorithm.'
    )
    name = Setting(
        default=None, value_type=str, nullable=True,
        description='Label used in reports, defaults to the kind.'
    )
    iterations = Setting(
        default=None, value_type=int, nullable=True, check=lambda v: v >= 1,
        check_message='at least one iteration is needed',
        description='Attack iterations, defaults to 200 for decision and 100 '
                    'otherwise.'
    )
    step_size = Setting(
        default=0.005, value_type=float, check=_non_negative,
        check_message='must not be negative',
        description='Step of the gradient attacks.'
    )
    budget_hip = Setting(
        default=0.01, value_type=float, check=_non_negative,
        check_message='must not be negative',
        description='l-inf budget of hip joints.'
    )
    budget_knee = Setting(
        default=0.05, value_type=float, check=_non_negative,
        check_message='must not be negative',
        description='l-inf budget of knee joints.'
    )
    budget_ankle = Setting(
        default=0.15, value_type=float, check=_non_negative,
        check_message='must not be negative',
        description='l-inf budget of ankle joints.'
    )
    budget_foot = Setting(
        default=0.25, value_type=float, check=_non_negative,
        check_message='must not be negative',
        description='l-inf budget of foot joints.'
    )
    budget_other = Setting(
        default=None, value_type=float, nullable=True, check=_non_negative,
        check_message='must not be negative',
        description='l-inf budget of all other joints, defaults to the hip '
                    'budget.'
    )
    eot_draws = Setting(
        default=8, value_type=int, check=lambda v: v >= 1,
        check_message='at least one draw is needed',
        description='Interpolated points averaged per EoT step.'
    )
    eot_interpolation_low = Setting(
        default=0.0, value_type=float, check=lambda v: 0 <= v <= 1,
        check_message='must be within [0, 1]',
        description='Lower bound of the uniform interpolation factor.'
    )
    decision_spherical_step = Setting(
        default=0.05, value_type=float, check=_non_negative,
        check_message='must not be negative',
        description='Orthogonal step of the decision attack, relative to '
                    'the current distance.'
    )
    decision_source_step = Setting(
        default=0.01, value_type=float, check=_non_negative,
        check_message='must not be negative',
        description='Step towards the original motion, relative to the '
                    'current distance.'
    )
    decision_search_steps = Setting(
        default=20, value_type=int, check=_non_negative,
        check_message='must not be negative',
        description='Bisection steps towards the decision boundary.'
    )
    seed = Setting(
        default=None, value_type=int, nullable=True,
        description='Seed of this attack, defaults to the experiment seed.'
    )

    @property
    def label(self) -> str:
        return self.name or self.kind

    @property
    def iteration_count(self) -> int:
        if self.iterations is not None:
            return self.iterations
        return DEFAULT_ITERATIONS[self.kind]

    def budgets(self) -> dict:
        budgets = {cls: getattr(self, 'budget_%s' % cls)
                   for cls in BUDGET_CLASSES}
        if budgets['other'] is None:
            budgets['other'] = budgets['hip']
        return budgets


@dataclass
class AttackResult:
    adversarial: Motion
    success: bool
    iterations: int
    loss: float
    queries: int = 0

    @property
    def positions(self) -> np.ndarray:
        return self.adversarial.positions


SampleLike = Union[LabeledSample, Tuple[Motion, int]]


def _unpack(sample: SampleLike) -> Tuple[np.ndarray, int, SkeletonTopology]:
    if isinstance(sample, LabeledSample):
        motion, label = sample.motion, sample.label
    else:
        motion, label = sample
    if not isinstance(motion, Motion):
        raise AttackError("attacks need a Motion, got %s"
                          % type(motion).__name__)
    return motion.positions, int(label), motion.topology


def _result(x_adv, topology, success, iterations, loss, queries=0):
    return AttackResult(Motion(x_adv, topology), bool(success), iterations,
                        float(loss), queries)


def _l2_ascent(model: Classifier, x: np.ndarray, label: int,
               cfg: AttackConfig, gradient) -> Tuple[np.ndarray, bool, int,
                                                     float]:
    x_adv = x.copy()
    loss = 0.0
    for iteration in range(1, cfg.iteration_count + 1):
        grad, loss = gradient(x_adv)
        norm = np.linalg.norm(grad)
        if norm > 0.0:
            x_adv = x_adv + cfg.step_size * grad / norm
        if model.predict(x_adv) != label:
            return x_adv, True, iteration, loss
    return x_adv, False, cfg.iteration_count, loss


def attack_iter_l2(model: Classifier, sample: SampleLike, cfg: AttackConfig,
                   rng: np.random.Generator = None) -> AttackResult:
    """Gradient ascent on the cross-entropy with fixed l2 step length.

    Returns the first misclassified iterate, or the last one with
    success False.
    """
    x, label, topology = _unpack(sample)

    def gradient(point):
        return model.input_gradient(point, label)

    x_adv, success, used, loss = _l2_ascent(model, x, label, cfg, gradient)
    return _result(x_adv, topology, success, used, loss)


def attack_eot(model: Classifier, sample: SampleLike, cfg: AttackConfig,
               rng: np.random.Generator) -> AttackResult:
    """attack_iter_l2 with each step's gradient averaged over points drawn
    uniformly on the segment between x and the current iterate, the
    interpolation factor lying in [eot_interpolation_low, 1]."""
    x, label, topology = _unpack(sample)

    def gradient(point):
        total, loss = 0.0, 0.0
        for _ in range(cfg.eot_draws):
            alpha = rng.uniform(cfg.eot_interpolation_low, 1.0)
            grad, value = model.input_gradient(
                point - (1.0 - alpha) * (point - x), label)
            total = total + grad
            loss += value
        return total / cfg.eot_draws, loss / cfg.eot_draws

    x_adv, success, used, loss = _l2_ascent(model, x, label, cfg, gradient)
    return _result(x_adv, topology, success, used, loss)


def attack_linf_perjoint(model: Classifier, sample: SampleLike,
                         cfg: AttackConfig,
                         rng: np.random.Generator = None) -> AttackResult:
    """Sign-gradient ascent, each joint's perturbation clipped to the budget
    of its class after every step."""
    x, label, topology = _unpack(sample)
    bound = topology.budget_vector(cfg.budgets())[None, :, None]
    x_adv = x.copy()
    loss = 0.0
    for iteration in range(1, cfg.iteration_count + 1):
        grad, loss = model.input_gradient(x_adv, label)
        delta = np.clip(x_adv + cfg.step_size * np.sign(grad) - x,
                        -bound, bound)
        x_adv = x + delta
        if model.predict(x_adv) != label:
            return _result(x_adv, topology, True, iteration, loss)
    return _result(x_adv, topology, False, cfg.iteration_count, loss)


def _is_adversarial(model: Classifier, point: np.ndarray, label: int) -> bool:
    return model.predict(point) != label


def _bisect(model: Classifier, x: np.ndarray, x_adv: np.ndarray, label: int,
            steps: int) -> np.ndarray:
    """Closest misclassified point found on the segment from x to x_adv.

    x_adv must be misclassified; so is the returned point.
    """
    low, high = 0.0, 1.0
    for _ in range(steps):
        middle = 0.5 * (low + high)
        if _is_adversarial(model, x + middle * (x_adv - x), label):
            high = middle
        else:
            low = middle
    if high == 1.0:
        return x_adv.copy()
    return x + high * (x_adv - x)


def attack_decision(model: Classifier, sample: SampleLike, dataset: Dataset,
                    cfg: AttackConfig, rng: np.random.Generator,
                    history: List[np.ndarray] = None) -> AttackResult:
    """Boundary walk with label-only access.

    Starts from the nearest dataset motion predicted as another class and
    bisects towards the original motion. Every iteration then takes a random
    step orthogonal to the current perturbation and a step towards the
    original; a misclassified candidate is bisected towards the original
    again and kept only if it is closer.

    Args:
        history: receives a copy of every accepted iterate, the bisected
            seed first

    Raises:
        AttackError: no dataset motion is predicted as another class
    """
    x, label, topology = _unpack(sample)
    queries = 0
    if len(dataset):
        predictions = np.atleast_1d(model.predict(dataset.positions))
        queries += len(dataset)
        candidates = np.flatnonzero(predictions != label)
    else:
        candidates = np.zeros(0, dtype=np.int64)
    if not len(candidates):
        raise AttackError("no motion of the dataset is predicted as a class "
                          "other than %d" % label)
    pool = dataset.positions[candidates]
    distances = np.linalg.norm((pool - x).reshape(len(pool), -1), axis=1)
    x_adv = _bisect(model, x, pool[int(np.argmin(distances))], label,
                    cfg.decision_search_steps)
    queries += cfg.decision_search_steps
    distance = float(np.linalg.norm(x_adv - x))
    if history is not None:
        history.append(x_adv.copy())

    for _ in range(cfg.iteration_count):
        if distance == 0.0:
            break
        direction = x_adv - x
        noise = rng.standard_normal(x.shape)
        noise -= direction * np.sum(noise * direction) / distance ** 2
        noise *= cfg.decision_spherical_step * distance / max(
            np.linalg.norm(noise), 1e-300)
        candidate = x_adv + noise
        # back onto the sphere of the current distance, then inwards
        candidate = x + (candidate - x) * distance / np.linalg.norm(
            candidate - x)
        candidate = candidate + cfg.decision_source_step * (x - candidate)
        queries += 1
        if not _is_adversarial(model, candidate, label):
            continue
        candidate = _bisect(model, x, candidate, label,
                            cfg.decision_search_steps)
        queries += cfg.decision_search_steps
        new_distance = float(np.linalg.norm(candidate - x))
        if new_distance < distance:
            x_adv, distance = candidate, new_distance
            if history is not None:
                history.append(x_adv.copy())
    proba = model.predict_proba(x_adv)
    loss = -np.log(max(float(proba[label]), 1e-300))
    return _result(x_adv, topology, _is_adversarial(model, x_adv, label),
                   cfg.iteration_count, loss, queries)


def run_attack(model: Classifier, sample: SampleLike, cfg: AttackConfig,
               rng: np.random.Generator,
               dataset: Dataset = None) -> AttackResult:
    """Run the attack named by cfg.kind.

    Args:
        dataset: seed pool of the decision attack
    """
    if cfg.kind == 'iter-l2':
        return attack_iter_l2(model, sample, cfg, rng)
    if cfg.kind == 'linf-per-joint':
        return attack_linf_perjoint(model, sample, cfg, rng)
    if cfg.kind == 'eot-l2':
        return attack_eot(model, sample, cfg, rng)
    if cfg.kind == 'decision':
        if dataset is None:
            raise AttackError("the decision attack needs a seed dataset")
        return attack_decision(model, sample, dataset, cfg, rng)
    raise AttackError("unknown attack kind %r, valid kinds are %s"
                      % (cfg.kind, sorted(ATTACK_KINDS)))
