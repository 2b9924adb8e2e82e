"""Python bindings for the falsify debate engine."""

import json

from ._core import (
    FalsifyError,
    attack_strength,
    cfg_loss,
    falsification_attention,
    top_k_regions,
)
from . import _core

__all__ = [
    "FalsifyError",
    "attack_strength",
    "cfg_loss",
    "chair",
    "cli",
    "falsification_attention",
    "graph_scores",
    "run_debate",
    "top_k_regions",
]


def graph_scores(graph):
    """Credibility per hypothesis plus the winning diagnosis of a serialized graph (dict or JSON text)."""
    if not isinstance(graph, str):
        graph = json.dumps(graph)
    return _core.graph_scores(graph)


def chair(explanations, gt_findings, lexicon):
    if not isinstance(lexicon, str):
        lexicon = json.dumps(lexicon)
    return _core.chair(list(explanations), [list(g) for g in gt_findings], lexicon)


def run_debate(config_path, record):
    """Runs one debate; returns the trail document as a dict."""
    if not isinstance(record, str):
        record = json.dumps(record)
    return json.loads(_core.run_debate(str(config_path), record))


def cli(*args):
    """Runs the CLI in-process. Returns (exit_code, stdout)."""
    return _core.cli([str(a) for a in args])
