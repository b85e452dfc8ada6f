"""Automated scoring for cascade-constrained multi-blank cloze tests.

Constraint satisfaction from a judge ensemble, embedding-centroid surprise,
the calibrated-surprise composite, and reliability/robustness statistics.
"""

from .judge import ScaleKind
from .scoring import CompositeScheme, composite, leaderboard, model_total
from .testset import TestSet, load_testset, parse_response, render_prompt, validate

__version__ = "0.1.0"
