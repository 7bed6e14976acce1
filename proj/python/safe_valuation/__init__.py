"""Shapley valuation of federated institutions through LR ensembles."""

import json as _json

from . import _core
from ._core import (
    ArgumentError,
    CapacityError,
    FormatError,
    NumericError,
    SafeError,
    accuracy,
    cosine_similarity,
    ensemble_shapley,
    exact_shapley,
    generate_synthetic,
    macro_auroc,
    permutation_shapley,
)

__all__ = [
    "ArgumentError",
    "CapacityError",
    "FormatError",
    "NumericError",
    "SafeError",
    "accuracy",
    "cosine_similarity",
    "ensemble_shapley",
    "exact_shapley",
    "generate_synthetic",
    "macro_auroc",
    "permutation_shapley",
    "run_stage",
]


def run_stage(stage, config):
    """Run one pipeline stage ("split", "train", "value" or "bench").

    `config` is a run-config dict; the stage's JSON output comes back as a dict.
    """
    return _json.loads(_core.run_stage(stage, _json.dumps(config)))
