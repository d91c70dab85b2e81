"""Goalpost-guided asymmetric self-play for verifiable coding tasks."""

from .evaluation import pass_at_k
from .goalposts import SolveMatrix, build_goalpost_set, filter_stage
from .orchestrator import Orchestrator, RunConfig
from .rewards import banded_reward, generalized_reward, lemma_reward, lift_reward, one_step_reward

__all__ = [
    "Orchestrator",
    "RunConfig",
    "SolveMatrix",
    "banded_reward",
    "build_goalpost_set",
    "filter_stage",
    "generalized_reward",
    "lemma_reward",
    "lift_reward",
    "one_step_reward",
    "pass_at_k",
]
