"""skelbeat main module.

Train and attack skeletal-motion classifiers with BEAT and baseline defenses.

Usage:
    skelbeat generate --config PATH [--seed SEED] [--out DIR] [--dry-run]
    skelbeat train --config PATH [--seed SEED] [--out DIR] [--dry-run]
    skelbeat evaluate --config PATH [--seed SEED] [--out DIR] [--dry-run]
    skelbeat grad-analysis --config PATH [--seed SEED] [--out DIR] [--dry-run]
    skelbeat --help
    skelbeat --version

Options:
    generate                Write synthetic train and test data
    train                   Train the defenses listed in the config
    evaluate                Attack the trained defenses and export metrics
    grad-analysis           Export expected input gradient statistics
    -c PATH --config PATH   Experiment config (JSON).
    --seed SEED             Override the seed of the config.
    -o DIR --out DIR        Override the output directory of the config.
    --dry-run               Print the resolved config and exit.
    -h --help               Show this screen.
    -v --version            Show version.

The log level is read from the environment variable SKELBEAT_LOG_LEVEL.
"""
import json
import sys

import docopt

from skelbeat import VERSION, log
from skelbeat.project import ExperimentConfig, Project
from skelbeat.settings import ConfigError
from skelbeat.stages import available_stages

EXIT_CONFIG_ERROR = 2
EXIT_FAILURE = 1


def _root_cause(ex: BaseException) -> BaseException:
    while ex.__cause__ is not None:
        ex = ex.__cause__
    return ex


def report_error(ex: BaseException) -> int:
    """Print a JSON error to stderr and return the exit code."""
    cause = _root_cause(ex)
    error = {'error': type(cause).__name__, 'message': str(cause)}
    if cause is not ex:
        error['task'] = str(ex)
    print(json.dumps(error, sort_keys=True), file=sys.stderr)
    return EXIT_CONFIG_ERROR if isinstance(cause, ConfigError) \
        else EXIT_FAILURE


def main(argv=None) -> int:
    """Run the command line with argv and return the exit code."""
    args = docopt.docopt(__doc__, argv=argv, version=VERSION)
    stage = next(name for name in available_stages() if args.get(name))

    try:
        config = ExperimentConfig.from_file(
            args['--config'], seed=args.get('--seed'),
            output_dir=args.get('--out'))
        if args.get('--dry-run'):
            print(json.dumps(config.to_dict(), indent=2, sort_keys=True))
            return 0
        Project.create(config).run(stage)
    except Exception as ex:
        return report_error(ex)
    return 0


def commandline_interface():
    """user interface"""
    log.default_logging_setup()
    sys.exit(main())


if __name__ == '__main__':
    commandline_interface()
