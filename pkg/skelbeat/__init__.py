"""skelbeat library

Bayesian energy-based adversarial training for skeletal-motion classifiers.
"""
import logging

VERSION = '0.1.0'

logging.getLogger(__name__).addHandler(logging.NullHandler())


def run_stage(config_path, stage: str, seed: int = None, output_dir=None):
    """Load config, create the project and run the named stage.

    Returns:
        the RunRecord written by the project
    """
    from skelbeat.project import ExperimentConfig, Project

    config = ExperimentConfig.from_file(
        config_path, seed=seed, output_dir=output_dir)
    project = Project.create(config)
    return project.run(stage)
