"""Experimental design for preference-based RL: simulation, estimation and audits."""
from .mdp import ConfigurationError, MarkovPolicy, TabularMDP, Trajectory

__all__ = ["ConfigurationError", "MarkovPolicy", "TabularMDP", "Trajectory"]
__version__ = "0.1.0"
