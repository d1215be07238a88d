"""Bootstrapping verified manipulation plans on a kinematic tabletop simulator.

Typical use::

    from bootplan import RunConfig, generate
    result = generate(RunConfig(n_per_task=100), out_dir="out")
"""

from .bootstrap import (
    RunConfig,
    TrainingRecipe,
    aggregate,
    collect_task,
    evaluate,
    generate,
    replay,
    run_episode,
)
from .dsl import PlanParseError, parse, pretty_print
from .model import EnvState, ObjectState, Plan, Pose, SftRecord, TaskId
from .planners import PlannerConfig
from .sim import SimConfig, execute
from .tasks import randomize, task_spec, verify

__version__ = "0.1.0"

__all__ = [
    "EnvState", "ObjectState", "Plan", "PlanParseError", "PlannerConfig", "Pose",
    "RunConfig", "SftRecord", "SimConfig", "TaskId", "TrainingRecipe", "aggregate",
    "collect_task", "evaluate", "execute", "generate", "parse", "pretty_print",
    "randomize", "replay", "run_episode", "task_spec", "verify",
]
