"""Run driver, reports and command-line interface."""

from .analysis import analyze_neighbors
from .runner import evaluate, make_gen_dev, paired_deltas, run, sweep
from .spec import RunSpec, load_config

__all__ = ["RunSpec", "analyze_neighbors", "evaluate", "load_config", "make_gen_dev",
           "paired_deltas", "run", "sweep"]
