import json
import os
import tempfile
import unittest
from pathlib import Path

import numpy as np

from skelbeat import run_stage
from skelbeat.kernel.metrics import read_reports_csv
from skelbeat.kernel.models import checkpoint_load
from skelbeat.kernel.trainers import TrainingError
from skelbeat.project import ExperimentConfig, Project
from skelbeat.task.base import TaskFailed

SLOW_TESTS = os.environ.get('SKELBEAT_SLOW_TESTS') == '1'


def pipeline_document(**kwargs) -> dict:
    document = {
        'seed': 11,
        'dataset': {'classes': 3, 'train_per_class': 8, 'test_per_class': 4,
                    'frames': 8},
        'model': {'hidden': [16], 'epochs': 10, 'batch_size': 8},
        'at': {'epsilon': 0.01, 'iterations': 2},
        'rs': {'noise_std': 0.05, 'draws': 4, 'epochs': 1},
        'beat': {'heads': 2, 'iterations': 2, 'negative_steps': 2,
                 'adversary_steps': 2, 'batch_size': 8,
                 'negative_batch_size': 8, 'sgahmc_steps': 2,
                 'buffer_capacity': 16},
        'evaluation': {'gradient_samples': 5, 'ablation_heads': [1],
                       'max_samples': 6, 'workers': 2},
        'defenses': ['st', 'at', 'rs', 'beat'],
        'attacks': [{'kind': 'iter-l2', 'step_size': 0.5, 'iterations': 3},
                    {'kind': 'linf-per-joint', 'iterations': 2}],
    }
    document.update(kwargs)
    return document


class TestPipeline(unittest.TestCase):
    """generate, train and evaluate on a tiny synthetic problem"""

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory(prefix='skelbeat_')
        self.root = Path(self.directory.name)

    def tearDown(self):
        try:
            self.directory.cleanup()
        except PermissionError:
            pass

    def run_pipeline(self, name, document=None,
                     stages=('generate', 'train', 'evaluate')) -> Project:
        document = dict(document or pipeline_document(),
                        output_dir=str(self.root / name))
        project = Project.create(ExperimentConfig(document))
        for stage in stages:
            record = project.run(stage)
            self.assertTrue(record.success)
        return project

    def test_reproducible(self):
        """two runs of one config and seed give byte-identical results"""
        first = self.run_pipeline('first')
        second = self.run_pipeline('second')
        for name in ('metrics.csv', 'comparison.csv', 'metrics.json'):
            self.assertEqual((first.paths.results / name).read_bytes(),
                             (second.paths.results / name).read_bytes(),
                             name)
        for defense in ('st', 'at', 'rs', 'beat'):
            self.assertEqual(first.paths.checkpoint(defense).read_bytes(),
                             second.paths.checkpoint(defense).read_bytes(),
                             defense)

        frame = read_reports_csv(first.paths.results / 'metrics.csv')
        self.assertEqual(len(frame), 5 * 2)
        self.assertEqual(sorted(set(frame['defense'])),
                         ['at', 'beat', 'beat@1', 'rs', 'st'])
        self.assertEqual(set(frame['config_digest']),
                         {first.config.digest()})
        self.assertTrue(np.all((frame['asr'] >= 0) & (frame['asr'] <= 100)))
        self.assertTrue(np.all(frame['attacked'] <= 6))

    def test_frozen_base(self):
        """the BEAT checkpoint references the unchanged standard model"""
        project = self.run_pipeline('frozen', stages=('generate', 'train'))
        base = checkpoint_load(project.paths.checkpoint('st'))
        ensemble = checkpoint_load(project.paths.checkpoint('beat'),
                                   base_digest=base.base_digest)
        self.assertEqual(ensemble.kind, 'ensemble')
        self.assertEqual(ensemble.model.base.digest(), base.model.digest())
        self.assertEqual(ensemble.model.head_count, 2)

    def test_beat_needs_standard_model(self):
        """BEAT without 'st' and without its checkpoint fails"""
        project = self.run_pipeline(
            'beat_only', pipeline_document(defenses=['beat']),
            stages=('generate',))
        with self.assertRaises(TaskFailed) as context:
            project.run('train')
        self.assertIsInstance(context.exception.__cause__, TrainingError)
        record = json.loads(project.paths.run_record('train').read_text())
        self.assertFalse(record['success'])

    def test_beat_reuses_standard_checkpoint(self):
        """a later run trains BEAT on the stored standard model"""
        project = self.run_pipeline(
            'reuse', pipeline_document(defenses=['st']),
            stages=('generate', 'train'))
        config_path = self.root / 'reuse.json'
        config_path.write_text(json.dumps(pipeline_document(
            defenses=['beat'], output_dir=str(project.paths.root))))
        record = run_stage(config_path, 'train')
        self.assertTrue(record.success)
        self.assertIn('beat', record.checkpoints)
        base = checkpoint_load(project.paths.checkpoint('st'))
        checkpoint_load(project.paths.checkpoint('beat'),
                        base_digest=base.base_digest)

    def test_grad_analysis(self):
        project = self.run_pipeline(
            'gradients', pipeline_document(defenses=['st', 'beat']),
            stages=('generate', 'train', 'grad-analysis'))
        path = project.paths.results / 'gradients.csv'
        self.assertTrue(path.is_file())
        text = path.read_text()
        self.assertIn('beat@1', text)
        self.assertEqual(len(text.strip().splitlines()), 1 + 3)


@unittest.skipUnless(SLOW_TESTS, "set SKELBEAT_SLOW_TESTS=1 to run the "
                                 "desk-scale experiment")
class TestDeskScale(unittest.TestCase):
    """Robustness of BEAT against ST on C=4, J=8, M=16 synthetic motions"""

    def setUp(self):
        self.directory = tempfile.TemporaryDirectory(prefix='skelbeat_')

    def tearDown(self):
        self.directory.cleanup()

    def run_seed(self, seed):
        document = {
            'seed': seed,
            'output_dir': os.path.join(self.directory.name, str(seed)),
            'dataset': {'classes': 4, 'train_per_class': 100,
                        'test_per_class': 50, 'frames': 16},
            'evaluation': {'ablation_heads': [1, 3]},
            'defenses': ['st', 'beat'],
            'beat': {'sgahmc_step': 0.03, 'friction': 1e-3},
            'attacks': [{'kind': 'iter-l2', 'iterations': 100,
                         'step_size': 0.02}],
        }
        project = Project.create(ExperimentConfig(document))
        for stage in ('generate', 'train', 'evaluate'):
            project.run(stage)
        frame = read_reports_csv(project.paths.results / 'metrics.csv')
        return frame.set_index('defense')

    def test_beat_against_standard(self):
        frames = [self.run_seed(seed) for seed in (0, 1, 2)]
        for frame in frames:
            self.assertGreaterEqual(frame.loc['st', 'clean_accuracy'], 95.0)
            self.assertGreaterEqual(frame.loc['beat', 'clean_accuracy'],
                                    frame.loc['st', 'clean_accuracy'] - 2.0)
        asr = {label: np.mean([f.loc[label, 'asr'] for f in frames])
               for label in ('st', 'beat@1', 'beat@3', 'beat')}
        self.assertLessEqual(asr['beat'], asr['st'] - 20.0)
        self.assertLessEqual(asr['beat@3'], asr['beat@1'])
        self.assertLessEqual(asr['beat'], asr['beat@3'])
        median = {label: np.mean([f.loc[label, 'grad_median_abs']
                                  for f in frames])
                  for label in ('beat@1', 'beat@3', 'beat')}
        self.assertGreater(median['beat@1'], median['beat@3'])
        self.assertGreater(median['beat@3'], median['beat'])


if __name__ == '__main__':
    unittest.main()
