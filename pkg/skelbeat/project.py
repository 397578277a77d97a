"""Project handling: experiment config, output folders and stage runs"""
import json
import logging
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Mapping, Union

from skelbeat import VERSION, log
from skelbeat.kernel.attacks import AttackConfig
from skelbeat.kernel.metrics import EvaluationConfig
from skelbeat.kernel.skeleton import SynthConfig
from skelbeat.kernel.trainers import AtConfig, BeatTrainerConfig, \
    RsConfig, TrainingConfig
from skelbeat.settings import ConfigError, Settings
from skelbeat.stages import load_stage
from skelbeat.task.base import Playground
from skelbeat.utilities.common_functions import stable_digest, write_json

logger = logging.getLogger(__name__)
user_logger = log.get_user_logger(__name__)

CONFIG_VERSION = '1.0'
DEFENSES = ('st', 'at', 'rs', 'beat')
SEED_LIMIT = 2 ** 64
SECTIONS = (SynthConfig, TrainingConfig, AtConfig, RsConfig,
            BeatTrainerConfig, EvaluationConfig)
TOP_LEVEL = ('version', 'seed', 'output_dir', 'defenses', 'attacks')


class ProjectLocked(Exception):
    """Another run writes to the same output directory."""


def _check_seed(seed) -> int:
    if isinstance(seed, str):
        try:
            seed = int(seed)
        except ValueError:
            raise ConfigError("seed %r is no integer" % seed) from None
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed must be an integer, got %r" % (seed,))
    if not 0 <= seed < SEED_LIMIT:
        raise ConfigError("seed %d outside [0, 2**64)" % seed)
    return seed


class ExperimentConfig:
    """All settings of one experiment, read from a single JSON document.

    The document holds the top level keys version, seed (mandatory),
    output_dir, defenses and attacks plus one object per settings section
    (dataset, model, at, rs, beat, evaluation). Unknown keys are rejected.

    Raises:
        ConfigError: on missing seed, unknown keys or invalid values
    """

    def __init__(self, document: Mapping):
        if not isinstance(document, Mapping):
            raise ConfigError("the experiment config must be a JSON object")
        known = set(TOP_LEVEL) | {s.section for s in SECTIONS}
        unknown = sorted(set(document) - known)
        if unknown:
            raise ConfigError("unknown config keys %s, allowed are %s"
                              % (unknown, sorted(known)))
        version = document.get('version', CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ConfigError("unsupported config version %r" % (version,))
        if document.get('seed') is None:
            raise ConfigError("the config needs a seed")
        self.seed = _check_seed(document['seed'])
        self.output_dir = str(document.get('output_dir') or
                              'skelbeat_output')

        self.sections: Dict[str, Settings] = {}
        for settings_cls in SECTIONS:
            settings = settings_cls()
            settings.update_from_config(document)
            self.sections[settings_cls.section] = settings

        defenses = document.get('defenses', ['st', 'beat'])
        if isinstance(defenses, str) or not all(
                d in DEFENSES for d in defenses):
            raise ConfigError("defenses %r must be a list from %s"
                              % (defenses, DEFENSES))
        if len(set(defenses)) != len(defenses):
            raise ConfigError("defenses %r contain duplicates" % (defenses,))
        self.defenses = [d for d in DEFENSES if d in defenses]

        self.attacks: List[AttackConfig] = []
        for entry in document.get('attacks', []):
            if not isinstance(entry, Mapping):
                raise ConfigError("attack entries must be objects, got %r"
                                  % (entry,))
            attack = AttackConfig()
            attack.update(entry)
            self.attacks.append(attack)
        labels = [a.label for a in self.attacks]
        if len(set(labels)) != len(labels):
            raise ConfigError("attack names %s are not unique; set 'name' "
                              "to tell attacks of the same kind apart"
                              % labels)

    @classmethod
    def from_file(cls, path: Union[str, Path], seed: int = None,
                  output_dir: Union[str, Path] = None) -> 'ExperimentConfig':
        """Read the config file, seed and output_dir override its values."""
        try:
            with open(path, 'r', encoding='utf-8') as file:
                document = json.load(file)
        except OSError as ex:
            raise ConfigError("cannot read config %s: %s" % (path, ex)) \
                from ex
        except ValueError as ex:
            raise ConfigError("config %s is no JSON document: %s"
                              % (path, ex)) from ex
        if isinstance(document, dict):
            if seed is not None:
                document['seed'] = seed
            if output_dir is not None:
                document['output_dir'] = str(output_dir)
        return cls(document)

    def __getitem__(self, section: str) -> Settings:
        return self.sections[section]

    @property
    def dataset(self) -> SynthConfig:
        return self.sections['dataset']

    @property
    def model(self) -> TrainingConfig:
        return self.sections['model']

    @property
    def at(self) -> AtConfig:
        return self.sections['at']

    @property
    def rs(self) -> RsConfig:
        return self.sections['rs']

    @property
    def beat(self) -> BeatTrainerConfig:
        return self.sections['beat']

    @property
    def evaluation(self) -> EvaluationConfig:
        return self.sections['evaluation']

    def attack_seed(self, attack: AttackConfig) -> int:
        return self.seed if attack.seed is None else attack.seed

    def to_dict(self) -> dict:
        """Fully resolved document with every default filled in."""
        document = {
            'version': CONFIG_VERSION,
            'seed': self.seed,
            'output_dir': self.output_dir,
            'defenses': list(self.defenses),
            'attacks': [a.to_dict() for a in self.attacks],
        }
        for name, settings in self.sections.items():
            document[name] = settings.to_dict()
        return document

    def digest(self) -> str:
        """sha256 of the resolved config without seed and output_dir.

        Seed and digest are reported side by side, so reruns of one config
        with several seeds share a digest.
        """
        document = self.to_dict()
        del document['seed'], document['output_dir']
        return stable_digest(document)

    def __repr__(self):
        return "<ExperimentConfig seed=%d digest=%s>" % (self.seed,
                                                         self.digest()[:12])


class FolderStructure:
    """Output directory layout."""

    CONFIG = "config.json"
    LOCK = ".lock"
    DATA = "data"
    CHECKPOINTS = "checkpoints"
    RESULTS = "results"
    LOG = "log"

    def __init__(self, path=None):
        self._root_path = None
        self.root = path or os.getcwd()

    @property
    def root(self) -> Path:
        """absolute root path"""
        return self._root_path

    @root.setter
    def root(self, value: str):
        self._root_path = Path(value).absolute().resolve()

    @property
    def config(self) -> Path:
        return self._root_path / self.CONFIG

    @property
    def lock(self) -> Path:
        return self._root_path / self.LOCK

    @property
    def data(self) -> Path:
        return self._root_path / self.DATA

    @property
    def checkpoints(self) -> Path:
        return self._root_path / self.CHECKPOINTS

    @property
    def results(self) -> Path:
        return self._root_path / self.RESULTS

    @property
    def log(self) -> Path:
        return self._root_path / self.LOG

    @property
    def sub_dirs(self) -> List[Path]:
        return [self.data, self.checkpoints, self.results, self.log]

    def checkpoint(self, defense: str) -> Path:
        return self.checkpoints / ("%s.json" % defense)

    def run_record(self, stage: str) -> Path:
        return self._root_path / ("run_record_%s.json" % stage)

    def create(self):
        """Create root and sub folders if missing."""
        for subdir in self.sub_dirs:
            os.makedirs(subdir, exist_ok=True)

    def __str__(self):
        return str(self.root)

    def __repr__(self):
        return "<FolderStructure (root: %s)>" % self.root


@dataclass
class RunRecord:
    """What one stage run did and produced."""
    stage: str
    config_digest: str
    seed: int
    toolkit_version: str = VERSION
    timings: Dict[str, float] = field(default_factory=dict)
    reports: List[dict] = field(default_factory=list)
    checkpoints: Dict[str, str] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)
    success: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


class Project:
    """One output directory driven by one ExperimentConfig.

    Only one Project may write to an output directory at a time; run()
    holds an exclusive lock file while the stage executes.

    Args:
        config: the experiment config
    """
    def __init__(self, config: ExperimentConfig):
        self.config = config
        self.paths = FolderStructure(config.output_dir)
        self._log_handlers: List[logging.Handler] = []
        self._lock_fd = None

    @classmethod
    def create(cls, config: ExperimentConfig) -> 'Project':
        """Create the folder structure of config.output_dir."""
        project = cls(config)
        try:
            project.paths.create()
        except OSError as ex:
            raise ConfigError("cannot create output directory %s: %s"
                              % (project.paths.root, ex)) from ex
        return project

    def _acquire_lock(self):
        try:
            self._lock_fd = os.open(self.paths.lock,
                                    os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise ProjectLocked(
                "%s is locked by another run (remove %s if that run is "
                "gone)" % (self.paths.root, self.paths.lock)) from None
        os.write(self._lock_fd, str(os.getpid()).encode('ascii'))

    def _release_lock(self):
        if self._lock_fd is None:
            return
        os.close(self._lock_fd)
        self._lock_fd = None
        try:
            os.remove(self.paths.lock)
        except FileNotFoundError:
            pass

    def _setup_logger(self):
        self._teardown_logger()
        general_logger = logging.getLogger('skelbeat')
        file_handler = logging.FileHandler(
            self.paths.log / 'skelbeat.log', encoding='utf-8')
        file_handler.setFormatter(log.file_formatter)
        general_logger.addHandler(file_handler)
        self._log_handlers.append(file_handler)

    def _teardown_logger(self):
        general_logger = logging.getLogger('skelbeat')
        for handler in self._log_handlers:
            general_logger.removeHandler(handler)
            handler.close()
        self._log_handlers.clear()

    def run(self, stage: str) -> RunRecord:
        """Run all tasks of a stage.

        Returns:
            the RunRecord, also written to run_record_<stage>.json

        Raises:
            ProjectLocked: if another run holds the output directory
            TaskFailed: if a task fails, chained to the cause
        """
        stage_cls = load_stage(stage)
        self._acquire_lock()
        self._setup_logger()
        record = RunRecord(stage_cls.name, self.config.digest(),
                           self.config.seed)
        try:
            write_json(self.config.to_dict(), self.paths.config)
            playground = Playground(self.config, self.paths, record)
            user_logger.info("Running stage '%s' in %s (config %s, seed %d)",
                             stage_cls.name, self.paths.root,
                             record.config_digest[:12], record.seed)
            for task_cls in stage_cls.tasks:
                playground.run_task(task_cls())
            record.success = True
        finally:
            write_json(record.to_dict(), self.paths.run_record(
                stage_cls.name))
            self.finalize(record.success)
        return record

    def finalize(self, success=False):
        """cleanup method"""
        if success:
            user_logger.info("Project results can be found under %s",
                             self.paths.root)
        else:
            user_logger.warning("Stage failed, see %s",
                                self.paths.log / 'skelbeat.log')
        self._teardown_logger()
        self._release_lock()

    def __repr__(self):
        return "<Project(%s)>" % self.paths.root
