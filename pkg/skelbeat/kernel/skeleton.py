"""Skeletal motion data: topology, motions, datasets and their files."""
import json
import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from pathlib import Path
from typing import Iterator, List, Mapping, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from scipy import ndimage

from skelbeat.settings import Setting, Settings
from skelbeat.utilities.common_functions import stable_digest

logger = logging.getLogger(__name__)

BUDGET_CLASSES = ('hip', 'knee', 'ankle', 'foot', 'other')
SPLITS = ('train', 'test')
DATASET_FORMAT = 'skelbeat-dataset'
DATASET_VERSION = '1.0'
# phase offset in radians of the test split against the training templates
SPLIT_PHASE = {'train': 0.0, 'test': 0.05}


class SkeletonError(Exception):
    """Invalid topology, motion or dataset."""


class DatasetParseError(SkeletonError):
    """Malformed dataset file.

    Args:
        path: file that failed
        line: 1-based line number
        offset: 1-based column within the line, 0 if unknown
    """

    def __init__(self, path, line: int, offset: int, message: str):
        self.path = str(path)
        self.line = line
        self.offset = offset
        super().__init__("%s:%d:%d: %s" % (self.path, line, offset, message))


class SkeletonTopology:
    """Joint count, bones as (parent, child) pairs and per-joint budget class.

    The bones must form a tree rooted at joint 0.
    """

    def __init__(self, joint_count: int, bones: Sequence[Tuple[int, int]],
                 budget_classes: Sequence[str] = None):
        self.joint_count = int(joint_count)
        self.bones: Tuple[Tuple[int, int], ...] = tuple(
            (int(p), int(c)) for p, c in bones)
        if budget_classes is None:
            budget_classes = ['other'] * self.joint_count
        self.budget_classes: Tuple[str, ...] = tuple(budget_classes)
        self._validate()

    def _validate(self):
        if self.joint_count < 1:
            raise SkeletonError("a skeleton needs at least one joint")
        if len(self.budget_classes) != self.joint_count:
            raise SkeletonError(
                "%d budget classes for %d joints"
                % (len(self.budget_classes), self.joint_count))
        unknown = set(self.budget_classes) - set(BUDGET_CLASSES)
        if unknown:
            raise SkeletonError("unknown budget classes %s, valid are %s"
                                % (sorted(unknown), list(BUDGET_CLASSES)))
        for parent, child in self.bones:
            if not (0 <= parent < self.joint_count
                    and 0 <= child < self.joint_count):
                raise SkeletonError("bone (%d, %d) references a joint "
                                    "outside [0, %d)" % (parent, child,
                                                         self.joint_count))
            if parent == child:
                raise SkeletonError("bone (%d, %d) is a self-loop"
                                    % (parent, child))
        graph = self.graph
        if graph.number_of_edges() != len(self.bones):
            raise SkeletonError("duplicate bones in %s" % (self.bones,))
        if graph.in_degree(0) != 0 or not nx.is_arborescence(graph):
            raise SkeletonError("bones %s do not form a tree rooted at "
                                "joint 0" % (self.bones,))

    @cached_property
    def graph(self) -> nx.DiGraph:
        """Directed graph parent -> child over all joints."""
        graph = nx.DiGraph()
        graph.add_nodes_from(range(self.joint_count))
        graph.add_edges_from(self.bones)
        return graph

    @property
    def bone_count(self) -> int:
        return len(self.bones)

    @cached_property
    def bone_array(self) -> np.ndarray:
        """B x 2 integer array of (parent, child)."""
        return np.array(self.bones, dtype=np.int64).reshape(-1, 2)

    def traversal(self) -> List[int]:
        """Bone indices ordered so every parent joint is placed first."""
        index = {bone: i for i, bone in enumerate(self.bones)}
        return [index[edge] for edge in nx.bfs_edges(self.graph, 0)]

    def budget_vector(self, budgets: Mapping[str, float]) -> np.ndarray:
        """Per-joint value looked up by budget class."""
        return np.array([budgets[cls] for cls in self.budget_classes],
                        dtype=np.float64)

    def to_serializable(self) -> dict:
        return {'joint_count': self.joint_count,
                'bones': [list(bone) for bone in self.bones],
                'budget_classes': list(self.budget_classes)}

    @classmethod
    def from_serializable(cls, data: Mapping) -> 'SkeletonTopology':
        try:
            return cls(data['joint_count'], data['bones'],
                       data['budget_classes'])
        except (KeyError, TypeError, ValueError) as ex:
            raise SkeletonError("invalid topology document: %s" % ex) from ex

    def digest(self) -> str:
        return stable_digest(self.to_serializable())

    def save(self, path: Union[str, Path]):
        with open(path, 'w', encoding='utf-8') as file:
            json.dump(self.to_serializable(), file, sort_keys=True)
            file.write('\n')

    @classmethod
    def load(cls, path: Union[str, Path]) -> 'SkeletonTopology':
        with open(path, 'r', encoding='utf-8') as file:
            return cls.from_serializable(json.load(file))

    @classmethod
    def default(cls) -> 'SkeletonTopology':
        """8-joint toy skeleton: pelvis, two legs with knee, ankle and foot,
        and a spine."""
        return cls(
            joint_count=8,
            bones=[(0, 1), (1, 2), (2, 3), (0, 4), (4, 5), (5, 6), (0, 7)],
            budget_classes=['hip', 'knee', 'ankle', 'foot',
                            'knee', 'ankle', 'foot', 'other'])

    @classmethod
    def chain(cls, joint_count: int) -> 'SkeletonTopology':
        """Single chain hip, knee, ankle, foot, then other joints."""
        classes = list(BUDGET_CLASSES[:4]) + \
            ['other'] * max(joint_count - 4, 0)
        return cls(joint_count,
                   [(j - 1, j) for j in range(1, joint_count)],
                   classes[:joint_count])

    def __eq__(self, other):
        if not isinstance(other, SkeletonTopology):
            return NotImplemented
        return self.to_serializable() == other.to_serializable()

    def __hash__(self):
        return hash(self.digest())

    def __repr__(self):
        return "<SkeletonTopology J=%d B=%d>" % (self.joint_count,
                                                 self.bone_count)


class Motion:
    """M x J x 3 joint positions over frames, tied to a topology."""
    __slots__ = ('positions', 'topology')

    MIN_FRAMES = 3

    def __init__(self, positions, topology: SkeletonTopology):
        positions = np.array(positions, dtype=np.float64)
        if positions.ndim != 3 or positions.shape[2] != 3 \
                or positions.shape[1] != topology.joint_count:
            raise SkeletonError("positions of shape %s do not fit M x %d x 3"
                                % (positions.shape, topology.joint_count))
        if positions.shape[0] < self.MIN_FRAMES:
            raise SkeletonError("a motion needs at least %d frames, got %d"
                                % (self.MIN_FRAMES, positions.shape[0]))
        if not np.all(np.isfinite(positions)):
            raise SkeletonError("motion holds non-finite coordinates")
        positions.setflags(write=False)
        self.positions = positions
        self.topology = topology

    @property
    def frames(self) -> int:
        return self.positions.shape[0]

    @property
    def joints(self) -> int:
        return self.positions.shape[1]

    def with_positions(self, positions) -> 'Motion':
        return Motion(positions, self.topology)

    def translated(self, offset) -> 'Motion':
        return Motion(self.positions + np.asarray(offset, dtype=np.float64),
                      self.topology)

    def __repr__(self):
        return "<Motion M=%d J=%d>" % (self.frames, self.joints)


@dataclass(frozen=True)
class LabeledSample:
    motion: Motion
    label: int


class Dataset:
    """Labelled motions sharing one topology and frame count.

    Args:
        samples: the labelled motions, may be empty
        class_count: number of classes C
        topology: topology of every motion
        split: 'train' or 'test'
    """

    def __init__(self, samples: Sequence[LabeledSample], class_count: int,
                 topology: SkeletonTopology, split: str = 'train'):
        if class_count < 1:
            raise SkeletonError("class count must be positive")
        if split not in SPLITS:
            raise SkeletonError("split '%s' is none of %s" % (split, SPLITS))
        self.samples: Tuple[LabeledSample, ...] = tuple(samples)
        self.class_count = int(class_count)
        self.topology = topology
        self.split = split
        for i, sample in enumerate(self.samples):
            if sample.motion.topology != topology:
                raise SkeletonError("sample %d uses another topology" % i)
            if not 0 <= sample.label < class_count:
                raise SkeletonError("sample %d has label %d outside [0, %d)"
                                    % (i, sample.label, class_count))
            if sample.motion.frames != self.samples[0].motion.frames:
                raise SkeletonError("sample %d has %d frames, expected %d"
                                    % (i, sample.motion.frames,
                                       self.samples[0].motion.frames))

    @classmethod
    def from_arrays(cls, positions: np.ndarray, labels: Sequence[int],
                    class_count: int, topology: SkeletonTopology,
                    split: str = 'train') -> 'Dataset':
        samples = [LabeledSample(Motion(p, topology), int(y))
                   for p, y in zip(positions, labels)]
        return cls(samples, class_count, topology, split)

    @property
    def frames(self) -> Union[int, None]:
        return self.samples[0].motion.frames if self.samples else None

    @cached_property
    def positions(self) -> np.ndarray:
        """n x M x J x 3 array of all motions (read only)."""
        if not self.samples:
            return np.zeros((0, 0, self.topology.joint_count, 3))
        stacked = np.stack([s.motion.positions for s in self.samples])
        stacked.setflags(write=False)
        return stacked

    @cached_property
    def labels(self) -> np.ndarray:
        labels = np.array([s.label for s in self.samples], dtype=np.int64)
        labels.setflags(write=False)
        return labels

    def subset(self, indices: Sequence[int]) -> 'Dataset':
        return Dataset([self.samples[i] for i in indices], self.class_count,
                       self.topology, self.split)

    def __len__(self):
        return len(self.samples)

    def __iter__(self) -> Iterator[LabeledSample]:
        return iter(self.samples)

    def __getitem__(self, index) -> LabeledSample:
        return self.samples[index]

    def __repr__(self):
        return "<Dataset %s: %d samples, C=%d>" % (self.split, len(self),
                                                   self.class_count)


# --- motion operators --------------------------------------------------------

def _positions_of(motion) -> np.ndarray:
    return motion.positions if isinstance(motion, Motion) \
        else np.asarray(motion, dtype=np.float64)


def bone_lengths_array(positions: np.ndarray,
                       bones: np.ndarray) -> np.ndarray:
    """(..., M, J, 3) positions -> (..., M, B) bone lengths."""
    if len(bones) == 0:
        return np.zeros(positions.shape[:-2] + (0,))
    vectors = positions[..., bones[:, 1], :] - positions[..., bones[:, 0], :]
    return np.linalg.norm(vectors, axis=-1)


def bone_lengths(motion: Motion) -> np.ndarray:
    """M x B Euclidean bone lengths."""
    return bone_lengths_array(motion.positions, motion.topology.bone_array)


def derivative(motion, order: int) -> np.ndarray:
    """Forward differences of the given order along the frame axis.

    Works on a Motion or on any array whose frame axis is the third last.
    """
    if order not in (0, 1, 2):
        raise SkeletonError("derivative order %r is none of 0, 1, 2"
                            % (order,))
    positions = _positions_of(motion)
    frames = positions.shape[-3]
    if frames < order + 1:
        raise SkeletonError("order %d derivative needs %d frames, got %d"
                            % (order, order + 1, frames))
    if order == 0:
        return positions.copy()
    return np.diff(positions, n=order, axis=-3)


def gaussian_kernel(taps: int = 5, std: float = 1.0) -> np.ndarray:
    offsets = np.arange(taps, dtype=np.float64) - (taps - 1) / 2.0
    kernel = np.exp(-0.5 * (offsets / std) ** 2)
    return kernel / kernel.sum()


def _filter_frames(positions: np.ndarray) -> np.ndarray:
    # mirror mode of scipy is numpy's 'reflect' padding (edge not repeated)
    return ndimage.convolve1d(positions, gaussian_kernel(), axis=-3,
                              mode='mirror')


@lru_cache(maxsize=16)
def temporal_filter_matrix(frames: int) -> np.ndarray:
    """M x M matrix F with filtered positions = F applied along frames."""
    if frames < 5:
        raise SkeletonError("temporal filtering needs at least 5 frames, "
                            "got %d" % frames)
    matrix = _filter_frames(np.eye(frames)[:, :, None])[:, :, 0]
    matrix.setflags(write=False)
    return matrix


def temporal_gaussian_filter(motion: Motion) -> Motion:
    """Smooth each joint coordinate along time with a normalized 5-tap
    Gaussian (std 1 frame), reflect-padded at the boundaries."""
    if motion.frames < 5:
        raise SkeletonError("temporal filtering needs at least 5 frames, "
                            "got %d" % motion.frames)
    return motion.with_positions(_filter_frames(motion.positions))


# --- synthetic data ----------------------------------------------------------

class SynthConfig(Settings):
    """Dataset section: synthetic generator parameters or a dataset path."""
    section = 'dataset'

    path = Setting(
        default=None,
        value_type=str,
        nullable=True,
        description='Directory with train.jsonl and test.jsonl to use '
                    'instead of generating data.'
    )
    topology_path = Setting(
        default=None,
        value_type=str,
        nullable=True,
        description='Topology JSON file for generated data. Without it the '
                    'default 8-joint skeleton (joints = 8) or a chain is '
                    'used.'
    )
    classes = Setting(
        default=4, value_type=int, check=lambda v: v >= 2,
        check_message='at least 2 classes are needed',
        description='Number of classes C.'
    )
    train_per_class = Setting(
        default=100, value_type=int, check=lambda v: v >= 1,
        check_message='must be positive',
        description='Training samples per class.'
    )
    test_per_class = Setting(
        default=50, value_type=int, check=lambda v: v >= 1,
        check_message='must be positive',
        description='Test samples per class.'
    )
    joints = Setting(
        default=8, value_type=int, check=lambda v: v >= 2,
        check_message='at least 2 joints are needed',
        description='Joint count J of generated data.'
    )
    frames = Setting(
        default=16, value_type=int, check=lambda v: v >= 8,
        check_message='at least 8 frames are needed',
        description='Frames per motion M.'
    )
    noise_std = Setting(
        default=0.05, value_type=float, check=lambda v: v >= 0,
        check_message='must not be negative',
        description='Std of the Gaussian jitter added to every sample.'
    )
    rigid = Setting(
        default=True,
        choices={
            True: 'Jitter joint angles and root translation, bone lengths '
                  'stay exact',
            False: 'Jitter joint coordinates directly'
        },
        description='Keep bone lengths constant in generated motions?'
    )

    def topology(self) -> SkeletonTopology:
        if self.topology_path:
            topology = SkeletonTopology.load(self.topology_path)
            if topology.joint_count != self.joints:
                raise SkeletonError(
                    "topology file has %d joints, config asks for %d"
                    % (topology.joint_count, self.joints))
            return topology
        if self.joints == 8:
            return SkeletonTopology.default()
        return SkeletonTopology.chain(self.joints)


def _rotate(vectors: np.ndarray, axis: np.ndarray,
            angles: np.ndarray) -> np.ndarray:
    """Rodrigues rotation of one vector per angle about a unit axis."""
    cos = np.cos(angles)[:, None]
    sin = np.sin(angles)[:, None]
    cross = np.cross(axis, vectors)
    return vectors * cos + cross * sin + \
        axis * np.dot(vectors, axis) * (1.0 - cos)


class _ClassTemplates:
    """Per-class sinusoidal joint-angle templates over a fixed rest pose."""

    def __init__(self, topology: SkeletonTopology, config: SynthConfig,
                 rng: np.random.Generator):
        n_bones = topology.bone_count
        n_classes = config.classes
        self.topology = topology
        self.frames = config.frames
        self.order = topology.traversal()
        directions = rng.normal(size=(n_bones, 3))
        directions /= np.linalg.norm(directions, axis=1, keepdims=True)
        self.offsets = directions * rng.uniform(0.25, 0.45,
                                                size=(n_bones, 1))
        axes = rng.normal(size=(n_bones, 3))
        self.axes = axes / np.linalg.norm(axes, axis=1, keepdims=True)
        self.frequency = np.linspace(0.5, 2.5, n_classes)
        self.amplitude = rng.uniform(0.3, 0.9, size=(n_classes, n_bones))
        self.phase = rng.uniform(0.0, 2 * np.pi, size=(n_classes, n_bones))
        self.root_sway = rng.uniform(-0.2, 0.2, size=(n_classes, 3))

    def angles(self, label: int, shift: float = 0.0) -> np.ndarray:
        """M x B joint angles of the class template, phases moved by
        shift."""
        time = np.arange(self.frames, dtype=np.float64) / self.frames
        return self.amplitude[label] * np.sin(
            2 * np.pi * self.frequency[label] * time[:, None]
            + self.phase[label] + shift)

    def root(self, label: int, shift: float = 0.0) -> np.ndarray:
        """M x 3 root trajectory of the class template."""
        time = np.arange(self.frames, dtype=np.float64) / self.frames
        return self.root_sway[label] * np.sin(
            2 * np.pi * self.frequency[label] * time + shift)[:, None]

    def pose(self, angles: np.ndarray, root: np.ndarray) -> np.ndarray:
        """Forward kinematics, every bone keeps its rest length."""
        positions = np.zeros((self.frames, self.topology.joint_count, 3))
        positions[:, 0] = root
        for b in self.order:
            parent, child = self.topology.bones[b]
            positions[:, child] = positions[:, parent] + _rotate(
                self.offsets[b], self.axes[b], angles[:, b])
        return positions


def synth_generate(config: SynthConfig,
                   seed: int) -> Tuple[Dataset, Dataset]:
    """Generate disjoint train and test datasets from class templates.

    The test split runs the templates with a small phase offset, so the
    splits share no motion even without noise.

    Returns:
        (train, test) datasets, bit-identical for identical (config, seed)
    """
    topology = config.topology()
    if topology.joint_count < 2:
        raise SkeletonError("synthetic data needs at least 2 joints")
    rng = np.random.default_rng(seed)
    templates = _ClassTemplates(topology, config, rng)
    shape = (config.frames, topology.joint_count, 3)
    splits = []
    for split, per_class in (('train', config.train_per_class),
                             ('test', config.test_per_class)):
        samples = []
        for label in range(config.classes):
            for _ in range(per_class):
                angles = templates.angles(label, SPLIT_PHASE[split])
                root = templates.root(label, SPLIT_PHASE[split])
                if config.rigid:
                    angles = angles + config.noise_std * rng.normal(
                        size=angles.shape)
                    root = root + config.noise_std * rng.normal(
                        size=root.shape)
                    positions = templates.pose(angles, root)
                else:
                    positions = templates.pose(angles, root) + \
                        config.noise_std * rng.normal(size=shape)
                samples.append(
                    LabeledSample(Motion(positions, topology), label))
        splits.append(Dataset(samples, config.classes, topology, split))
    logger.debug("Generated %d train and %d test motions for seed %d",
                 len(splits[0]), len(splits[1]), seed)
    return splits[0], splits[1]


# --- files -------------------------------------------------------------------

def dataset_save(dataset: Dataset, path: Union[str, Path]):
    """Write dataset as JSON lines: one header line, one line per sample."""
    header = {
        'format': DATASET_FORMAT,
        'version': DATASET_VERSION,
        'split': dataset.split,
        'class_count': dataset.class_count,
        'frames': dataset.frames,
        'topology': dataset.topology.to_serializable(),
    }
    with open(path, 'w', encoding='utf-8') as file:
        file.write(json.dumps(header, sort_keys=True) + '\n')
        for sample in dataset:
            record = {'label': sample.label,
                      'positions': sample.motion.positions.ravel().tolist()}
            file.write(json.dumps(record, sort_keys=True,
                                  allow_nan=False) + '\n')


def _parse_line(path, line_no, text):
    try:
        return json.loads(text)
    except json.JSONDecodeError as ex:
        raise DatasetParseError(path, line_no, ex.colno, ex.msg) from ex


def dataset_load(path: Union[str, Path]) -> Dataset:
    """Read a dataset written by dataset_save.

    Raises:
        DatasetParseError: with line and column of the first problem
    """
    with open(path, 'r', encoding='utf-8') as file:
        lines = file.read().splitlines()
    if not lines:
        raise DatasetParseError(path, 1, 0, "missing header line")
    header = _parse_line(path, 1, lines[0])
    if not isinstance(header, dict) \
            or header.get('format') != DATASET_FORMAT:
        raise DatasetParseError(path, 1, 0, "not a %s file" % DATASET_FORMAT)
    if header.get('version') != DATASET_VERSION:
        raise DatasetParseError(path, 1, 0, "unsupported version %r"
                                % header.get('version'))
    try:
        topology = SkeletonTopology.from_serializable(header['topology'])
        class_count = int(header['class_count'])
        split = header['split']
        frames = header['frames']
    except (KeyError, TypeError, ValueError, SkeletonError) as ex:
        raise DatasetParseError(path, 1, 0, "invalid header: %s" % ex) \
            from ex
    joints = topology.joint_count
    samples = []
    for line_no, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        record = _parse_line(path, line_no, text)
        try:
            label = record['label']
            values = record['positions']
        except (KeyError, TypeError) as ex:
            raise DatasetParseError(path, line_no, 0,
                                    "sample needs label and positions") \
                from ex
        if not isinstance(label, int) or isinstance(label, bool) \
                or not 0 <= label < class_count:
            raise DatasetParseError(path, line_no, 0,
                                    "label %r outside [0, %d)"
                                    % (label, class_count))
        if frames is None or len(values) != frames * joints * 3:
            raise DatasetParseError(path, line_no, 0,
                                    "expected %s x %d x 3 coordinates, got "
                                    "%d" % (frames, joints, len(values)))
        try:
            motion = Motion(np.array(values, dtype=np.float64).reshape(
                frames, joints, 3), topology)
        except (SkeletonError, TypeError, ValueError) as ex:
            raise DatasetParseError(path, line_no, 0, str(ex)) from ex
        samples.append(LabeledSample(motion, label))
    try:
        return Dataset(samples, class_count, topology, split)
    except SkeletonError as ex:
        raise DatasetParseError(path, 1, 0, str(ex)) from ex
