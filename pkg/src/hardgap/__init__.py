"""Hard-gap cellular automaton experiments: data, baselines, circuits and analysis."""

__version__ = "0.1.0"
