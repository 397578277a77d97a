"""Training of base classifiers, the baseline defenses and BEAT heads."""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List

import numpy as np

from skelbeat.kernel import energy, samplers
from skelbeat.kernel.autodiff import ComputeGraph
from skelbeat.kernel.models import AppendedHead, Architecture, \
    BaseClassifier, BeatEnsemble, Classifier, FrozenBaseError, HEAD_INPUTS
from skelbeat.kernel.skeleton import Dataset, temporal_filter_matrix
from skelbeat.settings import Setting, Settings
from skelbeat.utilities.common_functions import derive_rng

logger = logging.getLogger(__name__)

# independent random streams of one training run
STREAM_INIT = 0
STREAM_ORDER = 1
STREAM_NOISE = 2
STREAM_BEAT = 3


class TrainingError(Exception):
    """Training cannot start or went wrong."""


def _positive(value):
    return value >= 1


def _non_negative(value):
    return value >= 0


class TrainingConfig(Settings):
    """Model section: base architecture and plain gradient descent."""
    section = 'model'

    hidden = Setting(
        default=(64,), value_type=tuple,
        check=lambda v: all(isinstance(w, int) and w >= 1 for w in v),
        check_message='hidden widths must be positive integers',
        description='Widths of the ReLU hidden layers of the base classifier.'
    )
    epochs = Setting(
        default=30, value_type=int, check=_non_negative,
        check_message='must not be negative',
        description='Training epochs of the base classifier.'
    )
    learning_rate = Setting(
        default=0.05, value_type=float, check=lambda v: v > 0,
        check_message='must be positive',
        description='Fixed gradient descent step.'
    )
    batch_size = Setting(
        default=32, value_type=int, check=_positive,
        check_message='must be positive',
        description='Minibatch size.'
    )

    def architecture(self, dataset: Dataset) -> Architecture:
        return Architecture(dataset.frames, dataset.topology.joint_count,
                            dataset.class_count, self.hidden)


class AtConfig(Settings):
    """Section at: l-inf adversarial training."""
    section = 'at'

    epsilon = Setting(
        default=0.005, value_type=float, check=_non_negative,
        check_message='must not be negative',
        description='Radius of the l-inf perturbation ball.'
    )
    iterations = Setting(
        default=20, value_type=int, check=_positive,
        check_message='must be positive',
        description='Projected gradient ascent steps of the inner attack.'
    )
    step_size = Setting(
        default=None, value_type=float, nullable=True,
        check=_non_negative, check_message='must not be negative',
        description='Inner attack step, defaults to 2.5 * epsilon / '
                    'iterations.'
    )
    epochs = Setting(
        default=None, value_type=int, nullable=True, check=_non_negative,
        check_message='must not be negative',
        description='Outer epochs, defaults to the model epochs.'
    )

    @property
    def inner_step(self) -> float:
        if self.step_size is not None:
            return self.step_size
        return 2.5 * self.epsilon / self.iterations


class RsConfig(Settings):
    """Section rs: randomized smoothing with temporal filtering."""
    section = 'rs'

    noise_std = Setting(
        default=0.1, value_type=float, check=_non_negative,
        check_message='must not be negative',
        description='Std delta of the Gaussian input noise.'
    )
    draws = Setting(
        default=16, value_type=int, check=_positive,
        check_message='must be positive',
        description='Noise draws averaged per prediction.'
    )
    train_with_noise = Setting(
        default=True,
        choices={
            True: 'Fine-tune the classifier on noisy filtered inputs',
            False: 'Smooth the standard classifier as is'
        },
        description='Fine-tune before smoothed inference?'
    )
    epochs = Setting(
        default=1, value_type=int, check=_non_negative,
        check_message='must not be negative',
        description='Fine-tuning epochs.'
    )


BLACK_BOX_PRESET = {
    'weights': (1.0, 0.1, 1.0),
    'budget': 0.5,
    'sgahmc_step': 0.02,
    'negative_steps': 2,
    'adversary_steps': 2,
}


class BeatTrainerConfig(Settings):
    """Section beat: post-train Bayesian heads."""
    section = 'beat'

    preset = Setting(
        default='default',
        choices={
            'default': 'White-box defaults',
            'black-box': 'Stronger adversary term and wider perturbations '
                         'against decision-based attacks'
        },
        description='Named set of defaults applied before the other keys of '
                    'the section.'
    )
    heads = Setting(
        default=5, value_type=int, check=_positive,
        check_message='at least one head is needed',
        description='Number N of appended heads.'
    )
    iterations = Setting(
        default=50, value_type=int, check=_non_negative,
        check_message='must not be negative',
        description='Outer training iterations N_tra.'
    )
    weights = Setting(
        default=(1.0, 0.3, 0.1), value_type=tuple,
        check=lambda v: len(v) == 3 and all(
            isinstance(w, (int, float)) and not isinstance(w, bool)
            and w >= 0 for w in v),
        check_message='three non-negative weights w1, w2, w3 are needed',
        description='Weights of the classification, density and adversary '
                    'gradients.'
    )
    budget = Setting(
        default=0.05, value_type=float, check=_non_negative,
        check_message='must not be negative',
        description='Half width b of the uniform start perturbation of '
                    'adversaries.'
    )
    negative_steps = Setting(
        default=10, value_type=int, check=_non_negative,
        check_message='must not be negative',
        description='Langevin steps M1 for negatives.'
    )
    adversary_steps = Setting(
        default=10, value_type=int, check=_non_negative,
        check_message='must not be negative',
        description='Langevin steps M2 for adversaries.'
    )
    batch_size = Setting(
        default=32, value_type=int, check=_positive,
        check_message='must be positive',
        description='Positive minibatch size L1.'
    )
    negative_batch_size = Setting(
        default=32, value_type=int, check=_positive,
        check_message='must be positive',
        description='Negative sample count L2.'
    )
    sgld_step = Setting(
        default=0.01, value_type=float, check=_non_negative,
        check_message='must not be negative',
        description='Langevin step epsilon.'
    )
    sgld_noise = Setting(
        default=0.005, value_type=float, check=_non_negative,
        check_message='must not be negative',
        description='Langevin noise std sigma_n.'
    )
    manifold_lambda = Setting(
        default=1e-3, value_type=float, check=_non_negative,
        check_message='must not be negative',
        description='Weight lambda of the manifold distance.'
    )
    sgahmc_step = Setting(
        default=0.01, value_type=float, check=lambda v: v > 0,
        check_message='must be positive',
        description='SG-AHMC step sigma.'
    )
    friction = Setting(
        default=1e-5, value_type=float, check=lambda v: v > 0,
        check_message='must be positive',
        description='SG-AHMC friction F.'
    )
    sgahmc_steps = Setting(
        default=30, value_type=int, check=_non_negative,
        check_message='must not be negative',
        description='SG-AHMC steps per iteration M_theta.'
    )
    adapt_steps = Setting(
        default=10000, value_type=int, check=_non_negative,
        check_message='must not be negative',
        description='SG-AHMC steps during which tau adapts.'
    )
    buffer_capacity = Setting(
        default=512, value_type=int, check=_positive,
        check_message='must be positive',
        description='Persistent negative chains per head.'
    )
    buffer_reinit = Setting(
        default=0.05, value_type=float, check=lambda v: 0 <= v <= 1,
        check_message='must be within [0, 1]',
        description='Probability that a negative chain restarts from noise.'
    )
    head_input = Setting(
        default='logits',
        choices={
            'logits': 'Heads read the base logits',
            'latent': 'Heads read the last hidden activation of the base'
        },
        description='Input phi(x) of the appended heads.'
    )
    workers = Setting(
        default=1, value_type=int, check=_positive,
        check_message='must be positive',
        description='Threads that train heads in parallel.'
    )

    def update(self, entries) -> int:
        if entries.get('preset') == 'black-box':
            super().update(BLACK_BOX_PRESET)
        return super().update(entries)

    @classmethod
    def black_box_preset(cls) -> 'BeatTrainerConfig':
        return cls(preset='black-box')

    def sgld(self) -> samplers.SgldConfig:
        return samplers.SgldConfig(self.sgld_step, self.sgld_noise)

    def sgahmc(self) -> samplers.SgahmcConfig:
        return samplers.SgahmcConfig(self.sgahmc_step, self.friction,
                                     self.sgahmc_steps, self.adapt_steps)

    def distance(self) -> energy.ManifoldDistanceConfig:
        return energy.ManifoldDistanceConfig(self.manifold_lambda)


# --- gradient descent --------------------------------------------------------

def _param_gradient(model: BaseClassifier, x: np.ndarray,
                    labels: np.ndarray):
    """Mean cross-entropy of a batch and its parameter gradients."""
    graph = ComputeGraph()
    x_node = graph.input('x', x.reshape(x.shape[0], -1))
    logits, _, leaves = model.build(graph, x_node, trainable=True)
    loss = graph.softmax_ce(logits, labels)
    graph.forward(output=loss)
    names = list(leaves)
    grads = graph.backward(loss, [leaves[n] for n in names])
    return float(loss.value), dict(zip(names, grads))


Perturb = Callable[[BaseClassifier, np.ndarray, np.ndarray], np.ndarray]


def _fit(model: BaseClassifier, dataset: Dataset, config: TrainingConfig,
         epochs: int, order_rng: np.random.Generator,
         perturb: Perturb = None, history: List[float] = None
         ) -> BaseClassifier:
    if not len(dataset):
        raise TrainingError("cannot train on an empty dataset")
    positions, labels = dataset.positions, dataset.labels
    for epoch in range(epochs):
        order = order_rng.permutation(len(dataset))
        losses = []
        for start in range(0, len(order), config.batch_size):
            batch = order[start:start + config.batch_size]
            x, y = positions[batch], labels[batch]
            if perturb is not None:
                x = perturb(model, x, y)
            loss, grads = _param_gradient(model, x, y)
            params = model.params.copy()
            for name, grad in grads.items():
                params[name] = params[name] - config.learning_rate * grad
            model = model.with_params(params)
            losses.append(loss * len(batch))
        mean_loss = float(np.sum(losses) / len(order))
        if history is not None:
            history.append(mean_loss)
        logger.debug("epoch %d/%d: loss %.5f", epoch + 1, epochs, mean_loss)
    return model


def train_standard(architecture: Architecture, dataset: Dataset,
                   config: TrainingConfig, seed: int, epochs: int = None,
                   history: List[float] = None) -> BaseClassifier:
    """Cross-entropy training from a seeded He initialization.

    Args:
        epochs: overrides config.epochs
        history: receives the mean training loss of every epoch
    """
    model = BaseClassifier.initialize(architecture,
                                      derive_rng(seed, STREAM_INIT))
    epochs = config.epochs if epochs is None else epochs
    return _fit(model, dataset, config, epochs,
                derive_rng(seed, STREAM_ORDER), history=history)


def pgd_linf(model: Classifier, x: np.ndarray, y: np.ndarray,
             epsilon: float, iterations: int, step: float) -> np.ndarray:
    """Projected sign-gradient ascent on the cross-entropy inside the l-inf
    ball of radius epsilon around x."""
    x_adv = x.copy()
    for _ in range(iterations):
        grad = model.input_gradient(x_adv, y)[0]
        x_adv = np.clip(x_adv + step * np.sign(grad), x - epsilon,
                        x + epsilon)
    return x_adv


def train_at(architecture: Architecture, dataset: Dataset, cfg: AtConfig,
             config: TrainingConfig, seed: int,
             history: List[float] = None) -> BaseClassifier:
    """Madry-style adversarial training, minibatches replaced by their
    inner-attack adversaries."""
    model = BaseClassifier.initialize(architecture,
                                      derive_rng(seed, STREAM_INIT))
    epochs = config.epochs if cfg.epochs is None else cfg.epochs
    step = cfg.inner_step

    def perturb(current, x, y):
        return pgd_linf(current, x, y, cfg.epsilon, cfg.iterations, step)

    return _fit(model, dataset, config, epochs,
                derive_rng(seed, STREAM_ORDER), perturb, history)


# --- randomized smoothing ----------------------------------------------------

def _noisy_filtered(x: np.ndarray, noise_std: float,
                    rng: np.random.Generator) -> np.ndarray:
    noisy = x + noise_std * rng.standard_normal(x.shape)
    matrix = temporal_filter_matrix(x.shape[-3])
    return np.einsum('mk,...kjc->...mjc', matrix, noisy)


def train_rs(base: BaseClassifier, dataset: Dataset, cfg: RsConfig,
             config: TrainingConfig, seed: int) -> BaseClassifier:
    """Fine-tune a classifier on noisy, temporally filtered inputs."""
    if not cfg.train_with_noise or cfg.noise_std == 0:
        return base
    noise_rng = derive_rng(seed, STREAM_NOISE)

    def perturb(current, x, y):
        return _noisy_filtered(x, cfg.noise_std, noise_rng)

    return _fit(base, dataset, config, cfg.epochs,
                derive_rng(seed, STREAM_ORDER), perturb)


def predict_rs(model: Classifier, motion, cfg: RsConfig,
               rng: np.random.Generator) -> np.ndarray:
    """Mean softmax output over noise-plus-filter draws.

    With zero noise the plain prediction is returned.
    """
    motion = np.asarray(getattr(motion, 'positions', motion),
                        dtype=np.float64)
    if cfg.noise_std == 0:
        return model.predict_proba(motion)
    total = 0.0
    for _ in range(cfg.draws):
        total = total + model.predict_proba(
            _noisy_filtered(motion, cfg.noise_std, rng))
    return total / cfg.draws


class SmoothedClassifier(Classifier):
    """Randomized smoothing wrapper with common random numbers: every call
    replays the noise stream of seed, so predictions are deterministic."""

    def __init__(self, model: Classifier, cfg: RsConfig, seed: int):
        self.model = model
        self.cfg = cfg
        self.seed = seed
        self.architecture = model.architecture

    def predict_proba(self, x) -> np.ndarray:
        return predict_rs(self.model, x, self.cfg,
                          np.random.default_rng(self.seed))

    def input_gradient(self, x, labels):
        x = np.asarray(x, dtype=np.float64)
        if self.cfg.noise_std == 0:
            return self.model.input_gradient(x, labels)
        rng = np.random.default_rng(self.seed)
        matrix = temporal_filter_matrix(x.shape[-3])
        grad_total, loss_total = 0.0, 0.0
        for _ in range(self.cfg.draws):
            grad, loss = self.model.input_gradient(
                _noisy_filtered(x, self.cfg.noise_std, rng), labels)
            # the filter is linear, pull the gradient back through it
            grad_total = grad_total + np.einsum('mk,...mjc->...kjc', matrix,
                                                grad)
            loss_total = loss_total + np.asarray(loss)
        loss = loss_total / self.cfg.draws
        return grad_total / self.cfg.draws, \
            float(loss) if np.ndim(loss) == 0 else loss


# --- BEAT --------------------------------------------------------------------

def _head_gradient(head: AppendedHead, base: BaseClassifier,
                   head_input: str, cfg: BeatTrainerConfig,
                   positives: np.ndarray, labels: np.ndarray,
                   negatives: np.ndarray = None,
                   adversaries: np.ndarray = None) -> np.ndarray:
    """Weighted loss gradient h = w1 h1 + w2 h2 + w3 h3 of one head.

    The base is frozen, so its outputs enter the graph as constants.
    """
    w1, w2, w3 = cfg.weights
    graph = ComputeGraph()
    leaves = head.leaves(graph, trainable=True)

    def member(batch):
        logits, features = base.forward(batch)
        phi = logits if head_input == 'logits' else features
        return head.build(graph, graph.constant(phi),
                          graph.constant(logits), leaves=leaves)[0]

    terms = [graph.scale(graph.softmax_ce(member(positives), labels), w1)]
    if negatives is not None:
        # density term with the logit mean U: mean U(neg) - mean U(pos)
        density = graph.sub(graph.mean(member(negatives)),
                            graph.mean(member(positives)))
        terms.append(graph.scale(density, w2))
    if adversaries is not None:
        adversary = graph.mean(graph.select(member(adversaries), labels))
        terms.append(graph.scale(adversary, -w3))
    total = terms[0]
    for term in terms[1:]:
        total = graph.add(total, term)
    graph.forward(output=total)
    names = list(leaves)
    grads = graph.backward(total, [leaves[n] for n in names])
    return np.concatenate([g.ravel() for g in grads])


def _train_head(index: int, head: AppendedHead, base: BaseClassifier,
                dataset: Dataset, cfg: BeatTrainerConfig,
                seed: int) -> AppendedHead:
    rng = derive_rng(seed, STREAM_BEAT, index)
    shape = dataset.positions.shape[1:]
    buffer = samplers.PcdBuffer(
        shape, derive_rng(seed, STREAM_BEAT, index, 1), cfg.buffer_capacity,
        cfg.buffer_reinit)
    sampler = samplers.SgahmcSampler(head.params.size, cfg.sgahmc(),
                                     derive_rng(seed, STREAM_BEAT, index, 2))
    sgld = cfg.sgld()
    distance = cfg.distance()
    bones = dataset.topology.bone_array
    _, w2, w3 = cfg.weights
    batch_size = min(cfg.batch_size, len(dataset))
    for iteration in range(cfg.iterations):
        batch = rng.choice(len(dataset), size=batch_size, replace=False)
        x, y = dataset.positions[batch], dataset.labels[batch]
        member = BeatEnsemble(base, [head], cfg.head_input)
        negatives = adversaries = None
        if w2 > 0:
            negatives = samplers.sample_negatives(
                member, buffer, cfg.negative_batch_size, cfg.negative_steps,
                sgld, rng)
        if w3 > 0:
            adversaries = samplers.sample_adversary(
                member, x, y, cfg.budget, cfg.adversary_steps, sgld, rng,
                distance, bones)
        h = _head_gradient(head, base, cfg.head_input, cfg, x, y, negatives,
                           adversaries)
        # h is held fixed while the head is resampled
        theta = head.params.flatten()
        for _ in range(cfg.sgahmc_steps):
            theta = sampler.step(theta, h)
        head = head.with_params(head.params.unflatten(theta))
        if (iteration + 1) % 10 == 0:
            logger.debug("head %d: iteration %d/%d", index, iteration + 1,
                         cfg.iterations)
    return head


def train_beat(base: BaseClassifier, dataset: Dataset,
               cfg: BeatTrainerConfig, seed: int) -> BeatEnsemble:
    """Post-train Bayesian heads on a frozen base classifier.

    Every head owns its random streams, negative buffer and SG-AHMC state,
    so the result does not depend on cfg.workers.

    Raises:
        FrozenBaseError: if the base parameters changed during training
    """
    if not len(dataset):
        raise TrainingError("cannot train on an empty dataset")
    if cfg.head_input not in HEAD_INPUTS:
        raise TrainingError("unknown head input %r" % cfg.head_input)
    base_digest = base.digest()
    ensemble = BeatEnsemble.initialize(
        base, cfg.heads,
        [derive_rng(seed, STREAM_BEAT, n, 3) for n in range(cfg.heads)],
        cfg.head_input)

    def work(index):
        return _train_head(index, ensemble.heads[index], base, dataset, cfg,
                           seed)

    if cfg.workers > 1 and cfg.heads > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers,
                                thread_name_prefix='beat-head') as pool:
            heads = list(pool.map(work, range(cfg.heads)))
    else:
        heads = [work(n) for n in range(cfg.heads)]
    trained = BeatEnsemble(base, heads, cfg.head_input, base_digest)
    if base.digest() != base_digest:
        raise FrozenBaseError("base classifier changed during BEAT training")
    trained.verify_base()
    logger.info("Trained %d BEAT heads for %d iterations", cfg.heads,
                cfg.iterations)
    return trained

