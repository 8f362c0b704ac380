import json as _json

from ._core import *  # noqa: F401,F403
from ._core import evaluate_json as _evaluate_json


def evaluate(estimated, truth, tau=None, names=None):
    """Cohort metrics as a dict with the same layout as the CLI's JSON report."""
    return _json.loads(_evaluate_json(list(estimated), list(truth), tau, list(names or [])))
