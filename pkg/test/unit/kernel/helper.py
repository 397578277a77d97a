import tempfile
from pathlib import Path

import numpy as np

from skelbeat.kernel.models import AppendedHead, Architecture, \
    BaseClassifier, BeatEnsemble
from skelbeat.kernel.skeleton import Dataset, Motion, SkeletonTopology, \
    SynthConfig, synth_generate


class SetupHelper:
    """Small datasets and models shared by the kernel tests."""

    def __init__(self):
        self._directories = []

    def reset(self) -> None:
        for directory in self._directories:
            directory.cleanup()
        self._directories.clear()

    def temp_dir(self) -> Path:
        directory = tempfile.TemporaryDirectory(prefix='skelbeat_')
        self._directories.append(directory)
        return Path(directory.name)

    @staticmethod
    def topology() -> SkeletonTopology:
        return SkeletonTopology.default()

    @staticmethod
    def synth_config(**kwargs) -> SynthConfig:
        settings = dict(classes=3, train_per_class=8, test_per_class=4,
                        frames=8)
        settings.update(kwargs)
        return SynthConfig(**settings)

    def datasets(self, seed=0, **kwargs):
        """(train, test) of a small synthetic problem."""
        return synth_generate(self.synth_config(**kwargs), seed)

    @staticmethod
    def random_motion(rng, frames=8, topology=None) -> Motion:
        topology = topology or SkeletonTopology.default()
        return Motion(rng.normal(size=(frames, topology.joint_count, 3)),
                      topology)

    @staticmethod
    def random_dataset(rng, count=10, classes=3, frames=8) -> Dataset:
        topology = SkeletonTopology.default()
        positions = rng.normal(size=(count, frames, topology.joint_count, 3))
        labels = rng.integers(0, classes, size=count)
        return Dataset.from_arrays(positions, labels, classes, topology)

    @staticmethod
    def architecture(frames=8, joints=8, classes=3,
                     hidden=(16,)) -> Architecture:
        return Architecture(frames, joints, classes, hidden)

    def base(self, seed=0, **kwargs) -> BaseClassifier:
        return BaseClassifier.initialize(self.architecture(**kwargs),
                                         np.random.default_rng(seed))

    @staticmethod
    def ensemble(base, heads=3, seed=0, head_input='logits',
                 std=0.5) -> BeatEnsemble:
        """Ensemble with heads large enough to change predictions."""
        rng = np.random.default_rng(seed)
        in_dim = BeatEnsemble.head_input_dim(base.architecture, head_input)
        members = [AppendedHead.initialize(in_dim, base.class_count, rng, i,
                                           std=std)
                   for i in range(heads)]
        return BeatEnsemble(base, members, head_input)

    @staticmethod
    def zero_ensemble(base, heads=3, head_input='logits') -> BeatEnsemble:
        in_dim = BeatEnsemble.head_input_dim(base.architecture, head_input)
        return BeatEnsemble(
            base, [AppendedHead.zeros(in_dim, base.class_count, i)
                   for i in range(heads)], head_input)
