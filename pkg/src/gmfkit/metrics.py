"""Out-of-sample evaluation metrics.

Both are ratios against the constant train-mean predictor: values below 1
mean the model beats that baseline on the held-out entries.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import ConfigError, DegenerateError
from .families import FamilySpec

__all__ = ["EvalResult", "rel_log_rmse", "rel_deviance"]


@dataclass
class EvalResult:
    rel_log_rmse: float
    rel_deviance: float
    n_test: int


def _check_args(y_test, mu_hat):
    y = np.asarray(y_test, dtype=float).ravel()
    mu = np.asarray(mu_hat, dtype=float).ravel()
    if y.size == 0:
        raise ConfigError("test set is empty")
    if y.shape != mu.shape:
        raise ConfigError("y_test and mu_hat must have the same length")
    return y, mu


def rel_log_rmse(y_test, mu_hat, ybar_train: float) -> float:
    """sum log^2{(1+y)/(1+mu_hat)} / sum log^2{(1+y)/(1+ybar_train)}.

    The +1 offsets are part of the definition (they accommodate zeros).
    """
    y, mu = _check_args(y_test, mu_hat)
    num = np.sum(np.log((1.0 + y) / (1.0 + mu)) ** 2)
    den = np.sum(np.log((1.0 + y) / (1.0 + ybar_train)) ** 2)
    if den == 0.0:
        raise DegenerateError("all test responses equal the train mean baseline")
    return float(num / den)


def rel_deviance(y_test, mu_hat, ybar_train: float, fam: FamilySpec) -> float:
    """sum D(y, mu_hat) / sum D(y, ybar_train) over the test entries."""
    y, mu = _check_args(y_test, mu_hat)
    num = np.sum(fam.unit_deviance(y, mu))
    den = np.sum(fam.unit_deviance(y, np.full_like(y, float(ybar_train))))
    if den == 0.0:
        raise DegenerateError("all test responses equal the train mean baseline")
    return float(num / den)
