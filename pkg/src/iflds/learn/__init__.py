"""MCMC learner: chain-count slice sampling, particle Gibbs for local paths, conjugate global updates."""

from .state import Hyper, IfldsState, TransitionCounts, transition_counts
from .learner import LearnResult, learn, reconstruction_error

__all__ = ["Hyper", "IfldsState", "TransitionCounts", "transition_counts", "LearnResult", "learn", "reconstruction_error"]
