from .world import SimConfig, SimState, TaskSpec, ObjectState, reset, step, observe, success_of
from .expert import scripted_expert
from .runner import evaluate, generate_demos, RandomPolicy, ExpertPolicy, EvalResult, DemoGenerationError

__all__ = [
    "SimConfig",
    "SimState",
    "TaskSpec",
    "ObjectState",
    "reset",
    "step",
    "observe",
    "success_of",
    "scripted_expert",
    "evaluate",
    "generate_demos",
    "RandomPolicy",
    "ExpertPolicy",
    "EvalResult",
    "DemoGenerationError",
]
