"""Module containing the ITask base class and the Playground to execute
ITasks.

All Tasks should inherit from ITask
"""
import logging
import time
from typing import List, Tuple

from skelbeat import log


class TaskFailed(Exception):
    pass


class ITask:
    """Baseclass for the tasks of a stage.

    Args:
        reads: names of the arguments the run() method requires. The arguments
         are outputs from previous tasks
        touches: names that are assigned to the return value tuple of method
         run()
        single_use: flag that indicates if this task can run only once in the
         same Playground
    """

    reads: Tuple[str] = tuple()
    touches: Tuple[str] = tuple()
    single_use = True

    def __init__(self):
        self.name = self.__class__.__name__
        self.logger = log.get_user_logger("%s.%s" % (__name__, self.name))
        self.paths = None
        self.record = None

    def run(self, experiment, **kwargs):
        """Run task."""
        raise NotImplementedError

    @classmethod
    def requirements_met(cls, state, history) -> bool:
        """Check if all requirements for this task are met.

        Args:
            state: state of playground
            history: history of playground
        """
        if cls.single_use:
            for task in history:
                if task.__class__ is cls:
                    return False
        return all((r in state for r in cls.reads))

    def __repr__(self):
        return "<Task (%s)>" % self.name


class Playground:
    """Playground for executing ITasks.

    Args:
        experiment: the resolved ExperimentConfig
        paths: FolderStructure of the output directory
        record: RunRecord receiving timings, checkpoints and reports
    """

    def __init__(self, experiment, paths, record):
        self.experiment = experiment
        self.paths = paths
        self.record = record
        self.state = {}
        self.history: List[ITask] = []
        self.logger = logging.getLogger("skelbeat.Playground")

    def run_task(self, task: ITask):
        """Execute task with arguments specified in task.reads."""
        if not task.requirements_met(self.state, self.history):
            raise TaskFailed("%s requirements not met." % task)

        self.logger.info("Starting Task '%s'", task)
        read_state = {k: self.state[k] for k in task.reads}
        start = time.perf_counter()
        try:
            task.paths = self.paths
            task.record = self.record
            result = task.run(self.experiment, **read_state)
        except Exception as ex:
            self.logger.exception("Task '%s' failed!", task)
            raise TaskFailed(str(task)) from ex
        if self.record is not None:
            self.record.timings[task.name] = time.perf_counter() - start

        n_res = len(result) if result is not None else 0
        if len(task.touches) != n_res:
            raise TaskFailed("Mismatch in '%s' result. Required items: %d (%s)"
                             % (task, len(task.touches), task.touches))
        for key, sub_state in zip(task.touches, result or ()):
            self.state[key] = sub_state

        self.history.append(task)
        self.logger.info("Successfully finished Task '%s'", task)
