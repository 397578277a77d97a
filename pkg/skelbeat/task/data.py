"""Tasks creating and loading datasets"""
from pathlib import Path

from skelbeat.kernel.skeleton import Dataset, SkeletonError, \
    dataset_load, dataset_save, synth_generate
from skelbeat.task.base import ITask
from skelbeat.utilities.common_functions import write_json

TRAIN_FILE = 'train.jsonl'
TEST_FILE = 'test.jsonl'
TOPOLOGY_FILE = 'topology.json'
MANIFEST_FILE = 'manifest.json'


def _summary(train: Dataset, test: Dataset) -> dict:
    return {
        'class_count': train.class_count,
        'train_size': len(train),
        'test_size': len(test),
        'frames': train.frames,
        'joints': train.topology.joint_count,
        'topology_digest': train.topology.digest(),
    }


class GenerateDataset(ITask):
    """Generate synthetic train and test data into the data folder"""
    touches = ('train_data', 'test_data')

    def run(self, experiment):
        config = experiment.dataset
        if config.path:
            self.logger.warning("dataset.path is set, 'train' and 'evaluate' "
                                "will read %s instead of the generated "
                                "files", config.path)
        train, test = synth_generate(config, experiment.seed)
        folder = self.paths.data
        dataset_save(train, folder / TRAIN_FILE)
        dataset_save(test, folder / TEST_FILE)
        train.topology.save(folder / TOPOLOGY_FILE)
        summary = _summary(train, test)
        write_json(dict(summary, config_digest=experiment.digest(),
                        seed=experiment.seed), folder / MANIFEST_FILE)
        self.record.artifacts.extend(
            str(folder / f) for f in (TRAIN_FILE, TEST_FILE, TOPOLOGY_FILE,
                                      MANIFEST_FILE))
        self.logger.info("Generated C=%d classes, %d train and %d test "
                         "motions (M=%d, J=%d) in %s",
                         summary['class_count'], summary['train_size'],
                         summary['test_size'], summary['frames'],
                         summary['joints'], folder)
        return train, test


class LoadDataset(ITask):
    """Load train and test data from dataset.path or the data folder"""
    touches = ('train_data', 'test_data')

    def run(self, experiment):
        folder = Path(experiment.dataset.path) if experiment.dataset.path \
            else self.paths.data
        train_path, test_path = folder / TRAIN_FILE, folder / TEST_FILE
        if not train_path.is_file() or not test_path.is_file():
            raise SkeletonError(
                "no dataset in %s, run 'skelbeat generate' first or set "
                "dataset.path" % folder)
        train = dataset_load(train_path)
        test = dataset_load(test_path)
        if train.topology != test.topology \
                or train.class_count != test.class_count \
                or train.frames != test.frames:
            raise SkeletonError("train and test data in %s do not share "
                                "topology, class count and frame count"
                                % folder)
        self.logger.info("Loaded %d train and %d test motions from %s",
                         len(train), len(test), folder)
        return train, test
