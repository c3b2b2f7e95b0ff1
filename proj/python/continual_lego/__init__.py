"""Python access to the continual LEGO core library."""

import json

from ._core import (
    AnalysisError,
    ConfigError,
    DataError,
    Group,
    LegoError,
    TrainingError,
    experiences,
    sample,
    solve,
)
from . import _core

__all__ = [
    "AnalysisError",
    "ConfigError",
    "DataError",
    "Group",
    "LegoError",
    "TrainingError",
    "analyze",
    "experiences",
    "generate",
    "metrics_from_table",
    "plot",
    "resolve_config",
    "sample",
    "solve",
    "train",
]


def resolve_config(doc=None):
    """Preset for doc["scale"] with `doc` merged on top, as a dict."""
    return json.loads(_core.resolve_config(json.dumps(doc or {})))


def generate(doc=None):
    """Write dataset files; returns their paths."""
    return _core.generate(json.dumps(doc or {}))


def train(doc=None):
    """Train every (seed, replay) run of the config; returns one dict per run."""
    return json.loads(_core.train(json.dumps(doc or {})))


def analyze(runs, probe_size=50):
    return json.loads(_core.analyze([str(r) for r in runs], probe_size))


def plot(tables, out_dir):
    return [str(p) for p in _core.plot([str(t) for t in tables], str(out_dir))]


def metrics_from_table(table, experiences, epochs_per_experience):
    return json.loads(_core.metrics_from_table(str(table), list(experiences), epochs_per_experience))
