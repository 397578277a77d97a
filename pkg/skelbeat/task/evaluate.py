"""Tasks loading checkpoints, attacking them and exporting metrics"""
from dataclasses import dataclass
from typing import Dict, List, Optional

from skelbeat.kernel.metrics import EvaluationError, GradientAnalysis, \
    MetricsReport, ablation_ensembles, ablation_label, accuracy, \
    comparison_rows, gradient_analysis, run_attack_set, \
    write_comparison_csv, write_gradients_csv, write_reports_csv
from skelbeat.kernel.models import BeatEnsemble, Classifier, \
    checkpoint_load
from skelbeat.kernel.trainers import SmoothedClassifier
from skelbeat.task.base import ITask
from skelbeat.utilities.common_functions import write_json

METRICS_CSV = 'metrics.csv'
METRICS_JSON = 'metrics.json'
COMPARISON_CSV = 'comparison.csv'
GRADIENTS_CSV = 'gradients.csv'


@dataclass
class EvaluatedModel:
    label: str
    model: Classifier
    heads: Optional[int] = None


class LoadModels(ITask):
    """Load the checkpoints of all requested defenses"""
    reads = ('test_data',)
    touches = ('models',)

    def run(self, experiment, test_data):
        topology_digest = test_data.topology.digest()
        st_path = self.paths.checkpoint('st')
        base_digest = None
        if st_path.is_file():
            base_digest = checkpoint_load(
                st_path, test_data.class_count, topology_digest).base_digest
        models: List[EvaluatedModel] = []
        for defense in experiment.defenses:
            path = self.paths.checkpoint(defense)
            if not path.is_file():
                raise EvaluationError("no checkpoint for defense '%s' at %s, "
                                      "run 'skelbeat train' first"
                                      % (defense, path))
            checkpoint = checkpoint_load(
                path, test_data.class_count, topology_digest,
                base_digest if defense == 'beat' else None)
            model = checkpoint.model
            if defense == 'rs':
                model = SmoothedClassifier(model, experiment.rs,
                                           experiment.seed)
            heads = model.head_count if isinstance(model, BeatEnsemble) \
                else None
            models.append(EvaluatedModel(defense, model, heads))
            self.logger.info("Loaded %s checkpoint %s", defense, path)
            if defense == 'beat':
                ablation = ablation_ensembles(
                    model, experiment.evaluation.ablation_heads)
                for count, ensemble in ablation.items():
                    models.append(EvaluatedModel(ablation_label(count),
                                                 ensemble, count))
        return models,


class AnalyseGradients(ITask):
    """Expected input gradient statistics of every loaded model"""
    reads = ('test_data', 'models')
    touches = ('gradients',)

    def run(self, experiment, test_data, models):
        config = experiment.evaluation
        analyses: Dict[str, GradientAnalysis] = {}
        for entry in models:
            analysis = gradient_analysis(
                entry.model, test_data, config.gradient_samples,
                experiment.seed, config.gradient_threshold)
            analyses[entry.label] = analysis
            self.logger.info("%s: median |gradient| %.3g, %.1f%% below %g",
                             entry.label, analysis.median_abs,
                             100.0 * analysis.below_fraction,
                             analysis.threshold)
        return analyses,


class OptionalGradientAnalysis(AnalyseGradients):
    """Gradient statistics if evaluation.gradient_analysis is on"""

    def run(self, experiment, test_data, models):
        if not experiment.evaluation.gradient_analysis:
            return {},
        return super().run(experiment, test_data, models)


class EvaluateRobustness(ITask):
    """Clean accuracy and attack metrics of every model under every
    attack"""
    reads = ('train_data', 'test_data', 'models', 'gradients')
    touches = ('reports',)

    def run(self, experiment, train_data, test_data, models, gradients):
        config = experiment.evaluation
        digest = experiment.digest()
        reports: List[MetricsReport] = []
        for entry in models:
            clean = accuracy(entry.model, test_data)
            gradient = gradients[entry.label].summary() \
                if entry.label in gradients else {}
            self.logger.info("%s: clean accuracy %.2f%%", entry.label, clean)
            if not experiment.attacks:
                reports.append(MetricsReport(
                    entry.label, None, clean, config_digest=digest,
                    seed=experiment.seed, heads=entry.heads,
                    gradient=gradient))
            for attack in experiment.attacks:
                outcomes = run_attack_set(
                    entry.model, attack, test_data,
                    experiment.attack_seed(attack), train_data,
                    config.workers, config.max_samples)
                report = MetricsReport.from_outcomes(
                    entry.label, attack.label, clean, outcomes, test_data,
                    config, config_digest=digest, seed=experiment.seed,
                    heads=entry.heads, gradient=gradient)
                self.logger.info("%s under %s: ASR %.2f%% of %d motions",
                                 entry.label, attack.label, report.asr,
                                 report.attacked)
                reports.append(report)
        return reports,


class ExportMetrics(ITask):
    """Write metric reports as JSON and CSV, plus the paired comparison"""
    reads = ('reports',)
    touches = ()

    def run(self, experiment, reports):
        folder = self.paths.results
        write_reports_csv(reports, folder / METRICS_CSV)
        write_comparison_csv(comparison_rows(reports),
                             folder / COMPARISON_CSV)
        serialized = [r.to_serializable() for r in reports]
        write_json({'config_digest': experiment.digest(),
                    'seed': experiment.seed, 'reports': serialized},
                   folder / METRICS_JSON)
        self.record.reports.extend(serialized)
        self.record.artifacts.extend(
            str(folder / f) for f in (METRICS_CSV, COMPARISON_CSV,
                                      METRICS_JSON))
        self.logger.info("Wrote %d metric reports to %s", len(reports),
                         folder)


class ExportGradients(ITask):
    """Write the gradient statistics as CSV"""
    reads = ('models', 'gradients')
    touches = ()

    def run(self, experiment, models, gradients):
        path = self.paths.results / GRADIENTS_CSV
        heads = {entry.label: entry.heads for entry in models}
        write_gradients_csv(gradients, heads, path, experiment.digest(),
                            experiment.seed)
        self.record.artifacts.append(str(path))
        self.logger.info("Wrote gradient statistics of %d models to %s",
                         len(gradients), path)
