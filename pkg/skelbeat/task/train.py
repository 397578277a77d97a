"""Tasks training the defenses and writing their checkpoints"""
from skelbeat.kernel.models import BaseClassifier, checkpoint_load, \
    checkpoint_save
from skelbeat.kernel.trainers import TrainingError, train_at, train_beat, \
    train_rs, train_standard
from skelbeat.task.base import ITask


def _source(experiment, defense: str) -> str:
    return "defense=%s config=%s seed=%d" % (defense, experiment.digest(),
                                             experiment.seed)


class _TrainTask(ITask):

    def save(self, experiment, defense, model, dataset):
        path = self.paths.checkpoint(defense)
        checkpoint_save(model, path, dataset.topology.digest(),
                        _source(experiment, defense))
        self.record.checkpoints[defense] = str(path)
        self.logger.info("Saved %s checkpoint to %s", defense, path)
        return path


class TrainStandard(_TrainTask):
    """Train the standard classifier or load its checkpoint"""
    reads = ('train_data',)
    touches = ('base',)

    def run(self, experiment, train_data):
        if 'st' in experiment.defenses:
            architecture = experiment.model.architecture(train_data)
            base = train_standard(architecture, train_data, experiment.model,
                                  experiment.seed)
            self.save(experiment, 'st', base, train_data)
            return base,
        path = self.paths.checkpoint('st')
        if not path.is_file():
            return None,
        checkpoint = checkpoint_load(path, train_data.class_count,
                                     train_data.topology.digest())
        if checkpoint.kind != 'base':
            raise TrainingError("%s holds a %s checkpoint, expected the "
                                "standard classifier" % (path,
                                                         checkpoint.kind))
        self.logger.info("Using standard classifier %s (digest %s)", path,
                         checkpoint.base_digest[:12])
        return checkpoint.model,


class TrainAdversarial(_TrainTask):
    """Adversarial training with an inner l-inf attack"""
    reads = ('train_data',)
    touches = ('at_model',)

    def run(self, experiment, train_data):
        if 'at' not in experiment.defenses:
            return None,
        architecture = experiment.model.architecture(train_data)
        model = train_at(architecture, train_data, experiment.at,
                         experiment.model, experiment.seed)
        self.save(experiment, 'at', model, train_data)
        return model,


class TrainSmoothing(_TrainTask):
    """Noise fine-tuning of the standard classifier for randomized
    smoothing"""
    reads = ('train_data', 'base')
    touches = ('rs_model',)

    def run(self, experiment, train_data, base):
        if 'rs' not in experiment.defenses:
            return None,
        if base is None:
            self.logger.info("No standard classifier available, training one "
                             "for randomized smoothing")
            base = train_standard(experiment.model.architecture(train_data),
                                  train_data, experiment.model,
                                  experiment.seed)
        model = train_rs(base, train_data, experiment.rs, experiment.model,
                         experiment.seed)
        self.save(experiment, 'rs', model, train_data)
        return model,


class TrainBeat(_TrainTask):
    """Post-train BEAT heads on the frozen standard classifier"""
    reads = ('train_data', 'base')
    touches = ('beat_model',)

    def run(self, experiment, train_data, base: BaseClassifier):
        if 'beat' not in experiment.defenses:
            return None,
        if base is None:
            raise TrainingError(
                "BEAT is a post-train defense: it appends heads to a frozen, "
                "already trained standard classifier. Add 'st' to defenses "
                "or provide the checkpoint %s" % self.paths.checkpoint('st'))
        ensemble = train_beat(base, train_data, experiment.beat,
                              experiment.seed)
        self.save(experiment, 'beat', ensemble, train_data)
        self.logger.info("BEAT ensemble of %d heads on base %s",
                         ensemble.head_count, base.digest()[:12])
        return ensemble,
