"""Stages of the command line, each an ordered list of tasks"""
import logging
from typing import List, Type

from skelbeat.task.base import ITask
from skelbeat.task import data, evaluate, train
from skelbeat.utilities.common_functions import all_subclasses

logger = logging.getLogger(__name__)


class Stage:
    """Base class for stages.

    Notes:
        This class is used as a namespace. Instantiation is not necessary.

    Attributes:
        name: subcommand that runs this stage
        tasks: tasks executed in this order
    """
    name: str = None
    tasks: List[Type[ITask]] = []

    def __repr__(self):
        return "<%s>" % self.__class__.__name__


class Generate(Stage):
    name = 'generate'
    tasks = [data.GenerateDataset]


class Train(Stage):
    name = 'train'
    tasks = [data.LoadDataset, train.TrainStandard, train.TrainAdversarial,
             train.TrainSmoothing, train.TrainBeat]


class Evaluate(Stage):
    name = 'evaluate'
    tasks = [data.LoadDataset, evaluate.LoadModels,
             evaluate.OptionalGradientAnalysis, evaluate.EvaluateRobustness,
             evaluate.ExportMetrics]


class GradAnalysis(Stage):
    name = 'grad-analysis'
    tasks = [data.LoadDataset, evaluate.LoadModels,
             evaluate.AnalyseGradients, evaluate.ExportGradients]


def available_stages() -> List[str]:
    return sorted(s.name for s in all_subclasses(Stage))


def load_stage(name: str) -> Type[Stage]:
    """Stage class of a subcommand name.

    Raises:
        ValueError: for unknown names
    """
    for stage in all_subclasses(Stage):
        if stage.name == name:
            logger.debug("Loaded stage %s", name)
            return stage
    raise ValueError("unknown stage %r, valid stages are %s"
                     % (name, available_stages()))
