"""Robustness and perceptual metrics, reports and the expected-gradient
analysis."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from skelbeat.kernel.attacks import AttackConfig, AttackResult, run_attack
from skelbeat.kernel.models import BeatEnsemble, Classifier
from skelbeat.kernel.skeleton import Dataset, Motion, bone_lengths_array
from skelbeat.settings import Setting, Settings
from skelbeat.utilities.common_functions import derive_rng

logger = logging.getLogger(__name__)

CSV_SCHEMA_VERSION = '1'
GRADIENT_THRESHOLD = 1e-10


class EvaluationError(Exception):
    """A metric is undefined for the given inputs."""


class EvaluationConfig(Settings):
    """Section evaluation: thresholds, sample caps and analyses."""
    section = 'evaluation'

    threshold_l = Setting(
        default=0.1, value_type=float, check=lambda v: v >= 0,
        check_message='must not be negative',
        description='Threshold a1 on the mean position deviation l.'
    )
    threshold_bone = Setting(
        default=10.0, value_type=float, check=lambda v: v >= 0,
        check_message='must not be negative',
        description='Threshold a2 on the bone length violation in percent.'
    )
    max_samples = Setting(
        default=None, value_type=int, nullable=True, check=lambda v: v >= 1,
        check_message='must be positive',
        description='Attack at most this many correctly classified test '
                    'motions.'
    )
    workers = Setting(
        default=1, value_type=int, check=lambda v: v >= 1,
        check_message='must be positive',
        description='Threads attacking samples in parallel.'
    )
    gradient_analysis = Setting(
        default=True,
        choices={True: 'Analyse expected input gradients of BEAT models',
                 False: 'Skip the gradient analysis'},
        description='Run the expected-gradient analysis during evaluate?'
    )
    gradient_samples = Setting(
        default=500, value_type=int, check=lambda v: v >= 1,
        check_message='must be positive',
        description='Motions sampled by the gradient analysis.'
    )
    gradient_threshold = Setting(
        default=GRADIENT_THRESHOLD, value_type=float, check=lambda v: v > 0,
        check_message='must be positive',
        description='Gradient components below this magnitude count as '
                    'vanished.'
    )
    ablation_heads = Setting(
        default=(), value_type=tuple,
        check=lambda v: all(isinstance(n, int) and n >= 1 for n in v),
        check_message='head counts must be positive integers',
        description='Also evaluate BEAT ensembles made of the first n heads '
                    'for each n.'
    )


# --- accuracy and attacks ----------------------------------------------------

def accuracy(model: Classifier, dataset: Dataset) -> float:
    """Percentage of motions whose argmax prediction equals the label."""
    if not len(dataset):
        raise EvaluationError("accuracy of an empty dataset is undefined")
    predictions = np.atleast_1d(model.predict(dataset.positions))
    return float(100.0 * np.mean(predictions == dataset.labels))


def correctly_classified(model: Classifier, dataset: Dataset,
                         limit: int = None) -> np.ndarray:
    """Indices of the motions the model classifies correctly."""
    if not len(dataset):
        return np.zeros(0, dtype=np.int64)
    predictions = np.atleast_1d(model.predict(dataset.positions))
    indices = np.flatnonzero(predictions == dataset.labels)
    return indices[:limit] if limit is not None else indices


@dataclass
class AttackOutcome:
    index: int
    label: int
    result: AttackResult


def run_attack_set(model: Classifier, cfg: AttackConfig, dataset: Dataset,
                   seed: int, seed_pool: Dataset = None, workers: int = 1,
                   limit: int = None) -> List[AttackOutcome]:
    """Attack every correctly classified motion of dataset.

    Each motion uses the random stream derived from (seed, index), so the
    outcome does not depend on workers.

    Raises:
        EvaluationError: no motion is classified correctly
    """
    indices = correctly_classified(model, dataset, limit)
    if not len(indices):
        raise EvaluationError("no correctly classified motion to attack")

    def work(index):
        sample = dataset[int(index)]
        result = run_attack(model, sample, cfg, derive_rng(seed, int(index)),
                            seed_pool)
        return AttackOutcome(int(index), sample.label, result)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers,
                                thread_name_prefix='attack') as pool:
            outcomes = list(pool.map(work, indices))
    else:
        outcomes = [work(index) for index in indices]
    logger.debug("%s: %d/%d attacks succeeded", cfg.label,
                 sum(o.result.success for o in outcomes), len(outcomes))
    return outcomes


def success_percentage(outcomes: Sequence[AttackOutcome]) -> float:
    if not outcomes:
        raise EvaluationError("no attack outcomes")
    return float(100.0 * np.mean([o.result.success for o in outcomes]))


def attack_success_rate(model: Classifier, cfg: AttackConfig,
                        dataset: Dataset, seed: int,
                        seed_pool: Dataset = None, workers: int = 1,
                        limit: int = None) -> float:
    """Percentage of correctly classified motions the attack flips."""
    return success_percentage(run_attack_set(model, cfg, dataset, seed,
                                             seed_pool, workers, limit))


# --- perceptual metrics ------------------------------------------------------

@dataclass(frozen=True)
class PerceptualMetrics:
    """l, delta a, delta alpha and delta B / B (percent) of one pair."""
    l: float
    delta_a: float
    delta_alpha: float
    bone_violation: float


def _bone_angles(positions: np.ndarray, bones: np.ndarray) -> np.ndarray:
    """(M - 1) x B angles between each bone's direction in consecutive
    frames."""
    vectors = positions[:, bones[:, 1]] - positions[:, bones[:, 0]]
    first, second = vectors[:-1], vectors[1:]
    cross = np.linalg.norm(np.cross(first, second), axis=-1)
    dot = np.sum(first * second, axis=-1)
    return np.arctan2(cross, dot)


def perceptual_metrics(x, x_adv, bones=None) -> PerceptualMetrics:
    """Deviation of x_adv from x.

    l is the mean joint position deviation, delta a the mean deviation of
    second differences, delta alpha the mean absolute deviation of second
    differences of bone rotation angles between consecutive frames and the
    bone violation the mean relative bone length change in percent.
    """
    if bones is None:
        if not isinstance(x, Motion):
            raise EvaluationError("bones are needed for plain arrays")
        bones = x.topology.bone_array
        if isinstance(x_adv, Motion) and x_adv.topology != x.topology:
            raise EvaluationError("motions use different topologies")
    bones = np.asarray(bones, dtype=np.int64).reshape(-1, 2)
    a = np.asarray(getattr(x, 'positions', x), dtype=np.float64)
    b = np.asarray(getattr(x_adv, 'positions', x_adv), dtype=np.float64)
    if a.shape != b.shape:
        raise EvaluationError("motions of shape %s and %s differ"
                              % (a.shape, b.shape))
    if a.shape[0] < 4:
        raise EvaluationError("perceptual metrics need at least 4 frames")
    position = float(np.mean(np.linalg.norm(b - a, axis=-1)))
    acceleration = float(np.mean(np.linalg.norm(
        np.diff(b, n=2, axis=0) - np.diff(a, n=2, axis=0), axis=-1)))
    if len(bones):
        angular = float(np.mean(np.abs(
            np.diff(_bone_angles(b, bones), n=2, axis=0)
            - np.diff(_bone_angles(a, bones), n=2, axis=0))))
        reference = bone_lengths_array(a, bones)
        if np.any(reference == 0.0):
            raise EvaluationError("bone length violation is undefined for "
                                  "zero-length bones")
        violation = float(100.0 * np.mean(
            np.abs(bone_lengths_array(b, bones) - reference) / reference))
    else:
        angular = violation = 0.0
    return PerceptualMetrics(position, acceleration, angular, violation)


# --- gradient analysis -------------------------------------------------------

@dataclass
class GradientAnalysis:
    components: np.ndarray
    threshold: float = GRADIENT_THRESHOLD

    @property
    def below_fraction(self) -> float:
        """Fraction of components with magnitude below the threshold."""
        if not self.components.size:
            return 0.0
        return float(np.mean(np.abs(self.components) < self.threshold))

    @property
    def median_abs(self) -> float:
        if not self.components.size:
            return 0.0
        return float(np.median(np.abs(self.components)))

    def summary(self) -> Dict[str, float]:
        return {'grad_components': int(self.components.size),
                'grad_median_abs': self.median_abs,
                'grad_below_fraction': self.below_fraction}


def gradient_analysis(model: Classifier, dataset: Dataset,
                      sample_count: int, seed: int,
                      threshold: float = GRADIENT_THRESHOLD
                      ) -> GradientAnalysis:
    """Expected input gradients at one random frame of random motions.

    Motions are drawn without replacement, at most all of the dataset.
    """
    if not len(dataset):
        raise EvaluationError("gradient analysis of an empty dataset")
    rng = derive_rng(seed, 0)
    count = min(sample_count, len(dataset))
    indices = np.sort(rng.choice(len(dataset), size=count, replace=False))
    frames = rng.integers(0, dataset.frames, size=count)
    grads = model.input_gradient(dataset.positions[indices],
                                 dataset.labels[indices])[0]
    components = grads[np.arange(count), frames].ravel()
    return GradientAnalysis(components, threshold)


# --- reports -----------------------------------------------------------------

CSV_COLUMNS = [
    'schema_version', 'config_digest', 'seed', 'defense', 'heads', 'attack',
    'clean_accuracy', 'attacked', 'successes', 'asr',
    'l_mean', 'l_max', 'delta_a_mean', 'delta_a_max',
    'delta_alpha_mean', 'delta_alpha_max', 'bone_violation_mean',
    'bone_violation_max', 'pct_l_above', 'pct_bone_above',
    'threshold_l', 'threshold_bone',
    'grad_components', 'grad_median_abs', 'grad_below_fraction',
]

COMPARISON_COLUMNS = [
    'schema_version', 'config_digest', 'seed', 'attack', 'reference',
    'defense', 'asr_reference', 'asr_defense', 'asr_delta',
    'l_mean_reference', 'l_mean_defense', 'bone_violation_mean_reference',
    'bone_violation_mean_defense',
]


@dataclass
class MetricsReport:
    """Metrics of one defense under one attack (or clean only)."""
    defense: str
    attack: Optional[str]
    clean_accuracy: float
    config_digest: str = ''
    seed: int = 0
    heads: Optional[int] = None
    attacked: int = 0
    successes: int = 0
    asr: Optional[float] = None
    l_mean: Optional[float] = None
    l_max: Optional[float] = None
    delta_a_mean: Optional[float] = None
    delta_a_max: Optional[float] = None
    delta_alpha_mean: Optional[float] = None
    delta_alpha_max: Optional[float] = None
    bone_violation_mean: Optional[float] = None
    bone_violation_max: Optional[float] = None
    pct_l_above: Optional[float] = None
    pct_bone_above: Optional[float] = None
    threshold_l: Optional[float] = None
    threshold_bone: Optional[float] = None
    gradient: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for name in ('clean_accuracy', 'asr', 'pct_l_above',
                     'pct_bone_above'):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 100.0:
                raise EvaluationError("%s = %r is no percentage"
                                      % (name, value))

    @classmethod
    def from_outcomes(cls, defense: str, attack: str, clean_accuracy: float,
                      outcomes: Sequence[AttackOutcome], dataset: Dataset,
                      cfg: EvaluationConfig, **kwargs) -> 'MetricsReport':
        """Success rate over all outcomes, quality metrics over the
        successful ones."""
        report = cls(defense, attack, clean_accuracy,
                     attacked=len(outcomes),
                     successes=sum(o.result.success for o in outcomes),
                     asr=success_percentage(outcomes),
                     threshold_l=cfg.threshold_l,
                     threshold_bone=cfg.threshold_bone, **kwargs)
        quality = [perceptual_metrics(dataset[o.index].motion,
                                      o.result.adversarial)
                   for o in outcomes if o.result.success]
        if quality:
            for name, attr in (('l', 'l'), ('delta_a', 'delta_a'),
                               ('delta_alpha', 'delta_alpha'),
                               ('bone_violation', 'bone_violation')):
                values = np.array([getattr(q, attr) for q in quality])
                setattr(report, name + '_mean', float(values.mean()))
                setattr(report, name + '_max', float(values.max()))
            report.pct_l_above = float(100.0 * np.mean(
                [q.l >= cfg.threshold_l for q in quality]))
            report.pct_bone_above = float(100.0 * np.mean(
                [q.bone_violation >= cfg.threshold_bone for q in quality]))
        return report

    def to_serializable(self) -> dict:
        data = asdict(self)
        data['schema_version'] = CSV_SCHEMA_VERSION
        return data

    def to_row(self) -> dict:
        data = self.to_serializable()
        gradient = data.pop('gradient')
        row = {column: data.get(column) for column in CSV_COLUMNS}
        for key in ('grad_components', 'grad_median_abs',
                    'grad_below_fraction'):
            row[key] = gradient.get(key)
        return row


def comparison_rows(reports: Sequence[MetricsReport],
                    reference: str = 'st') -> List[dict]:
    """One row per (attack, defense) pairing the defense with the reference
    defense under the same attack."""
    by_key = {(r.attack, r.defense): r for r in reports
              if r.attack is not None}
    rows = []
    for (attack, defense), report in sorted(by_key.items()):
        base = by_key.get((attack, reference))
        if base is None or defense == reference:
            continue
        rows.append({
            'schema_version': CSV_SCHEMA_VERSION,
            'config_digest': report.config_digest,
            'seed': report.seed,
            'attack': attack,
            'reference': reference,
            'defense': defense,
            'asr_reference': base.asr,
            'asr_defense': report.asr,
            'asr_delta': report.asr - base.asr,
            'l_mean_reference': base.l_mean,
            'l_mean_defense': report.l_mean,
            'bone_violation_mean_reference': base.bone_violation_mean,
            'bone_violation_mean_defense': report.bone_violation_mean,
        })
    return rows


def _write_csv(rows: Sequence[dict], columns: Sequence[str],
               path: Union[str, Path]):
    frame = pd.DataFrame(list(rows), columns=list(columns))
    frame.to_csv(path, index=False, float_format='%.10g',
                 lineterminator='\n')


def write_reports_csv(reports: Sequence[MetricsReport],
                      path: Union[str, Path]):
    """Flat CSV with the fixed column set CSV_COLUMNS."""
    _write_csv([r.to_row() for r in reports], CSV_COLUMNS, path)


def write_comparison_csv(rows: Sequence[dict], path: Union[str, Path]):
    _write_csv(rows, COMPARISON_COLUMNS, path)


def read_reports_csv(path: Union[str, Path]) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={'schema_version': str})
    if list(frame.columns) != CSV_COLUMNS:
        raise EvaluationError("%s does not follow metrics schema %s"
                              % (path, CSV_SCHEMA_VERSION))
    return frame


def ablation_ensembles(ensemble: BeatEnsemble,
                       head_counts: Sequence[int]) -> Dict[int, BeatEnsemble]:
    """Ensembles of the first n heads for each requested n."""
    models = {}
    for count in head_counts:
        if count > ensemble.head_count:
            raise EvaluationError("ablation asks for %d heads, the ensemble "
                                  "has %d" % (count, ensemble.head_count))
        models[count] = ensemble.first(count)
    return models


def ablation_label(count: int) -> str:
    return 'beat@%d' % count


GRADIENT_COLUMNS = [
    'schema_version', 'config_digest', 'seed', 'defense', 'heads',
    'grad_components', 'grad_median_abs', 'grad_below_fraction', 'threshold',
]


def write_gradients_csv(analyses: Dict[str, GradientAnalysis],
                        heads: Dict[str, Optional[int]],
                        path: Union[str, Path], config_digest: str = '',
                        seed: int = 0):
    """One row per analysed model, keyed by its defense label."""
    rows = []
    for defense, analysis in analyses.items():
        row = dict(analysis.summary(), schema_version=CSV_SCHEMA_VERSION,
                   config_digest=config_digest, seed=seed, defense=defense,
                   heads=heads.get(defense), threshold=analysis.threshold)
        rows.append(row)
    _write_csv(rows, GRADIENT_COLUMNS, path)
