import unittest

import numpy as np
import pandas as pd

from skelbeat.kernel.attacks import AttackConfig
from skelbeat.kernel.metrics import CSV_COLUMNS, GRADIENT_COLUMNS, \
    EvaluationConfig, EvaluationError, GradientAnalysis, MetricsReport, \
    ablation_ensembles, ablation_label, accuracy, attack_success_rate, \
    comparison_rows, gradient_analysis, perceptual_metrics, \
    read_reports_csv, run_attack_set, success_percentage, \
    write_gradients_csv, write_reports_csv
from skelbeat.kernel.models import Architecture, BaseClassifier
from skelbeat.kernel.skeleton import Dataset, Motion, SkeletonTopology
from test.unit.kernel.helper import SetupHelper


def self_labelled(model, rng, count=12) -> Dataset:
    """Random motions labelled with the model's own predictions."""
    topology = SkeletonTopology.default()
    positions = rng.normal(size=(count, 8, 8, 3))
    return Dataset.from_arrays(positions, model.predict(positions),
                               model.class_count, topology)


class TestPerceptualMetrics(unittest.TestCase):
    helper = None

    @classmethod
    def setUpClass(cls) -> None:
        cls.helper = SetupHelper()

    def tearDown(self) -> None:
        self.helper.reset()

    def test_identical(self):
        """an unchanged motion has all metrics 0"""
        motion = self.helper.random_motion(np.random.default_rng(0))
        metrics = perceptual_metrics(motion, motion.positions.copy())
        self.assertEqual(metrics.l, 0.0)
        self.assertEqual(metrics.delta_a, 0.0)
        self.assertEqual(metrics.delta_alpha, 0.0)
        self.assertEqual(metrics.bone_violation, 0.0)

    def test_translation(self):
        """a rigid shift only shows in l"""
        motion = self.helper.random_motion(np.random.default_rng(1))
        metrics = perceptual_metrics(motion, motion.translated([3.0, 4.0, 0]))
        self.assertAlmostEqual(metrics.l, 5.0, places=12)
        self.assertAlmostEqual(metrics.delta_a, 0.0, places=12)
        self.assertAlmostEqual(metrics.delta_alpha, 0.0, places=7)
        self.assertAlmostEqual(metrics.bone_violation, 0.0, places=10)

    def test_doubled_bones(self):
        """scaling by 2 doubles every bone, a 100 percent violation"""
        motion = self.helper.random_motion(np.random.default_rng(2))
        scaled = Motion(2.0 * motion.positions, motion.topology)
        metrics = perceptual_metrics(motion, scaled)
        self.assertAlmostEqual(metrics.bone_violation, 100.0, places=10)
        self.assertAlmostEqual(metrics.delta_alpha, 0.0, places=12)
        self.assertAlmostEqual(
            metrics.l, np.mean(np.linalg.norm(motion.positions, axis=-1)),
            places=12)

    def test_minimum_frames(self):
        motion = self.helper.random_motion(np.random.default_rng(3), frames=3)
        with self.assertRaises(EvaluationError):
            perceptual_metrics(motion, motion)

    def test_zero_length_bone(self):
        motion = Motion(np.zeros((6, 8, 3)), SkeletonTopology.default())
        with self.assertRaises(EvaluationError):
            perceptual_metrics(motion, motion.translated([1.0, 0.0, 0.0]))

    def test_plain_arrays(self):
        """plain arrays need explicit bones"""
        x = np.random.default_rng(4).normal(size=(6, 8, 3))
        with self.assertRaises(EvaluationError):
            perceptual_metrics(x, x)
        bones = SkeletonTopology.default().bone_array
        self.assertEqual(perceptual_metrics(x, x, bones).l, 0.0)

    def test_shape_mismatch(self):
        rng = np.random.default_rng(5)
        motion = self.helper.random_motion(rng)
        with self.assertRaises(EvaluationError):
            perceptual_metrics(motion, np.zeros((7, 8, 3)))


class TestAccuracyAndAttacks(unittest.TestCase):
    helper = None

    @classmethod
    def setUpClass(cls) -> None:
        cls.helper = SetupHelper()

    def tearDown(self) -> None:
        self.helper.reset()

    def test_accuracy(self):
        """a constant prediction scores the share of its class"""
        base = BaseClassifier.zeros(Architecture(8, 8, 3, hidden=()))
        base.params['b0'] = np.array([0.0, 0.0, 1.0])
        positions = np.random.default_rng(0).normal(size=(4, 8, 8, 3))
        dataset = Dataset.from_arrays(positions, [2, 2, 0, 1], 3,
                                      SkeletonTopology.default())
        self.assertEqual(accuracy(base, dataset), 50.0)
        with self.assertRaises(EvaluationError):
            accuracy(base, dataset.subset([]))

    def test_zero_step_attack(self):
        """an attack that never moves has success rate 0"""
        model = self.helper.base()
        dataset = self_labelled(model, np.random.default_rng(1))
        self.assertEqual(accuracy(model, dataset), 100.0)
        asr = attack_success_rate(
            model, AttackConfig(step_size=0.0, iterations=3), dataset, 0)
        self.assertEqual(asr, 0.0)

    def test_nothing_to_attack(self):
        model = self.helper.base()
        dataset = self_labelled(model, np.random.default_rng(2))
        wrong = Dataset.from_arrays(dataset.positions,
                                    (dataset.labels + 1) % 3, 3,
                                    dataset.topology)
        with self.assertRaises(EvaluationError):
            run_attack_set(model, AttackConfig(), wrong, 0)
        with self.assertRaises(EvaluationError):
            success_percentage([])

    def test_workers_do_not_change_outcomes(self):
        model = self.helper.base()
        dataset = self_labelled(model, np.random.default_rng(3))
        cfg = AttackConfig(kind='eot-l2', step_size=0.5, iterations=4,
                           eot_draws=2)
        sequential = run_attack_set(model, cfg, dataset, 7)
        parallel = run_attack_set(model, cfg, dataset, 7, workers=3)
        self.assertEqual([o.index for o in sequential],
                         [o.index for o in parallel])
        for a, b in zip(sequential, parallel):
            self.assertEqual(a.result.positions.tobytes(),
                             b.result.positions.tobytes())

    def test_limit(self):
        model = self.helper.base()
        dataset = self_labelled(model, np.random.default_rng(4))
        outcomes = run_attack_set(model, AttackConfig(iterations=1), dataset,
                                  0, limit=5)
        self.assertEqual([o.index for o in outcomes], [0, 1, 2, 3, 4])


class TestGradientAnalysis(unittest.TestCase):
    helper = None

    @classmethod
    def setUpClass(cls) -> None:
        cls.helper = SetupHelper()

    def tearDown(self) -> None:
        self.helper.reset()

    def test_zero_network(self):
        """a zero-weight network has only vanished components"""
        model = BaseClassifier.zeros(self.helper.architecture())
        dataset = self.helper.random_dataset(np.random.default_rng(0))
        analysis = gradient_analysis(model, dataset, 500, 0)
        self.assertEqual(analysis.components.size, 10 * 8 * 3)
        self.assertEqual(analysis.below_fraction, 1.0)
        self.assertEqual(analysis.median_abs, 0.0)

    def test_deterministic(self):
        model = self.helper.base()
        dataset = self.helper.random_dataset(np.random.default_rng(1))
        first = gradient_analysis(model, dataset, 4, 3)
        second = gradient_analysis(model, dataset, 4, 3)
        np.testing.assert_array_equal(first.components, second.components)
        self.assertEqual(first.summary()['grad_components'], 4 * 8 * 3)

    def test_empty(self):
        self.assertEqual(GradientAnalysis(np.zeros(0)).below_fraction, 0.0)
        model = self.helper.base()
        empty = self.helper.random_dataset(np.random.default_rng(2)).subset([])
        with self.assertRaises(EvaluationError):
            gradient_analysis(model, empty, 10, 0)

    def test_gradients_csv(self):
        path = self.helper.temp_dir() / 'gradients.csv'
        analyses = {'st': GradientAnalysis(np.array([0.0, 1.0, -2.0]))}
        write_gradients_csv(analyses, {'st': None}, path, 'abc', 1)
        frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), GRADIENT_COLUMNS)
        self.assertEqual(frame['grad_median_abs'][0], 1.0)


class TestReports(unittest.TestCase):
    helper = None

    @classmethod
    def setUpClass(cls) -> None:
        cls.helper = SetupHelper()

    def tearDown(self) -> None:
        self.helper.reset()

    def reports(self):
        return [MetricsReport('st', None, 90.0, config_digest='abc', seed=1),
                MetricsReport('st', 'iter-l2', 90.0, config_digest='abc',
                              seed=1, attacked=10, successes=8, asr=80.0,
                              l_mean=0.2, bone_violation_mean=4.0),
                MetricsReport('beat', 'iter-l2', 85.0, config_digest='abc',
                              seed=1, heads=3, attacked=10, successes=2,
                              asr=20.0, l_mean=0.5,
                              bone_violation_mean=6.0,
                              gradient={'grad_components': 24,
                                        'grad_median_abs': 0.0,
                                        'grad_below_fraction': 1.0})]

    def test_percentages(self):
        with self.assertRaises(EvaluationError):
            MetricsReport('st', None, 120.0)
        with self.assertRaises(EvaluationError):
            MetricsReport('st', 'iter-l2', 90.0, asr=-1.0)

    def test_from_outcomes(self):
        """quality metrics cover only the successful attacks"""
        model = self.helper.base()
        dataset = self_labelled(model, np.random.default_rng(0))
        outcomes = run_attack_set(model, AttackConfig(step_size=2.0,
                                                      iterations=10),
                                  dataset, 0)
        cfg = EvaluationConfig()
        report = MetricsReport.from_outcomes('st', 'iter-l2', 100.0,
                                             outcomes, dataset, cfg)
        self.assertEqual(report.attacked, len(outcomes))
        self.assertAlmostEqual(report.asr, 100.0 * report.successes
                               / report.attacked)
        self.assertEqual(report.threshold_l, 0.1)
        if report.successes:
            self.assertGreater(report.l_mean, 0.0)
            self.assertGreaterEqual(report.l_max, report.l_mean)

    def test_csv(self):
        """the CSV has the fixed columns and is reproducible"""
        directory = self.helper.temp_dir()
        first, second = directory / 'a.csv', directory / 'b.csv'
        write_reports_csv(self.reports(), first)
        write_reports_csv(self.reports(), second)
        self.assertEqual(first.read_bytes(), second.read_bytes())
        frame = read_reports_csv(first)
        self.assertEqual(list(frame.columns), CSV_COLUMNS)
        self.assertEqual(len(frame), 3)
        self.assertEqual(frame['schema_version'][0], '1')
        self.assertEqual(frame['asr'][2], 20.0)
        self.assertEqual(frame['grad_below_fraction'][2], 1.0)
        self.assertTrue(pd.isna(frame['attack'][0]))

    def test_foreign_csv(self):
        path = self.helper.temp_dir() / 'other.csv'
        path.write_text('a,b\n1,2\n')
        with self.assertRaises(EvaluationError):
            read_reports_csv(path)

    def test_comparison(self):
        """each defense is paired with the reference under one attack"""
        rows = comparison_rows(self.reports())
        self.assertEqual(len(rows), 1)
        row = rows[0]
        self.assertEqual(row['defense'], 'beat')
        self.assertEqual(row['reference'], 'st')
        self.assertEqual(row['asr_delta'], -60.0)
        self.assertEqual(row['l_mean_reference'], 0.2)
        self.assertEqual(comparison_rows(self.reports(), reference='at'), [])


class TestAblation(unittest.TestCase):
    helper = None

    @classmethod
    def setUpClass(cls) -> None:
        cls.helper = SetupHelper()

    def tearDown(self) -> None:
        self.helper.reset()

    def test_first_heads(self):
        ensemble = self.helper.ensemble(self.helper.base(), heads=3)
        models = ablation_ensembles(ensemble, (1, 3))
        self.assertEqual(sorted(models), [1, 3])
        self.assertEqual(models[1].head_count, 1)
        self.assertIs(models[1].heads[0], ensemble.heads[0])
        with self.assertRaises(EvaluationError):
            ablation_ensembles(ensemble, (4,))

    def test_label(self):
        self.assertEqual(ablation_label(2), 'beat@2')


if __name__ == '__main__':
    unittest.main()
