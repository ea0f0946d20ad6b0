"""Python bindings for the dyjr tabular GRPO / DyJR laboratory."""

import json

from ._dyjr import (
    CapacityError,
    ConfigError,
    Error,
    InputError,
    IoError,
    NumericError,
    approx_entropy,
    closed_form_js,
    closed_form_kl,
    count_solutions,
    f_fkl,
    f_js,
    f_js_grad,
    group_advantages,
    pass_at_k,
    target_fill_count,
    verify,
)
from . import _dyjr


def resolve_config(config=None, overrides=()):
    """Full config dict with defaults filled in."""
    return json.loads(_dyjr.resolve_config(json.dumps(config or {}), list(overrides)))


def train(config=None, overrides=()):
    """Run training; returns one dict per step."""
    lines = _dyjr.train_jsonl(json.dumps(config or {}), list(overrides))
    return [json.loads(line) for line in lines]


def evaluate_checkpoint(checkpoint, config=None):
    pass1, pass16, mean_reward, distinct = _dyjr.evaluate_checkpoint(
        str(checkpoint), json.dumps(config or {}))
    return {
        "eval_pass1": pass1,
        "eval_pass16": pass16,
        "eval_mean_reward": mean_reward,
        "distinct_correct_mean": distinct,
    }


__all__ = [
    "CapacityError", "ConfigError", "Error", "InputError", "IoError", "NumericError",
    "approx_entropy", "closed_form_js", "closed_form_kl", "count_solutions",
    "evaluate_checkpoint", "f_fkl", "f_js", "f_js_grad", "group_advantages",
    "pass_at_k", "resolve_config", "target_fill_count", "train", "verify",
]
