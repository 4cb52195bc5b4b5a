"""Bias auditing for text-to-image pipelines.

Thin Python layer over the native core: the metric helpers are re-exported
as is, and the audit entry points exchange plain dicts.
"""

import json

from ._fairlens import (
    FairlensError,
    ParseFailed,
    __version__,
    association_score,
    distance_to_uniform,
    fd_bias,
    normalization_factor,
    parse_fair_output,
    parse_label,
    pearson,
    word_distribution,
)
from . import _fairlens

__all__ = [
    "FairlensError",
    "ParseFailed",
    "__version__",
    "association_score",
    "audit",
    "desk_config",
    "distance_to_uniform",
    "fd_bias",
    "normalization_factor",
    "parse_fair_output",
    "parse_label",
    "pearson",
    "word_distribution",
]


def desk_config():
    """The built-in simulator configuration as a dict."""
    return json.loads(_fairlens.desk_config_json())


def audit(config=None, output_dir=None):
    """Run an audit and return its outcome.

    ``config`` defaults to the desk preset. The result has ``exit_code``
    (0, 1 or 2 as for the CLI), ``run_dir``, ``calls`` and ``report``
    (a dict, or None when the run did not finish).
    """
    if config is None:
        config = desk_config()
    out = _fairlens.audit_json(json.dumps(config), str(output_dir or ""))
    if out["report"] is not None:
        out["report"] = json.loads(out["report"])
    return out
