"""Regression accuracy metrics: per-component R^2, NRMSE, MSE.

NRMSE uses the population standard deviation (denominator N), so a
constant-mean predictor scores exactly R^2 = 0 and NRMSE = 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Metrics:
    r2: np.ndarray        # (3,)
    nrmse: np.ndarray     # (3,)
    mse: float

    @property
    def r2_mean(self) -> float:
        return float(np.mean(self.r2))

    def to_dict(self):
        return {"r2": self.r2.tolist(), "r2_mean": self.r2_mean,
                "nrmse": self.nrmse.tolist(), "mse": self.mse}


def compute_metrics(predictions: np.ndarray, targets: np.ndarray) -> Metrics:
    predictions = np.asarray(predictions, float)
    targets = np.asarray(targets, float)
    if predictions.shape != targets.shape or predictions.ndim != 2:
        raise ValueError("predictions and targets must be (n, k) alike")
    resid = targets - predictions
    ss_res = np.sum(resid ** 2, axis=0)
    var = targets.var(axis=0)  # population variance
    if np.any(var == 0.0):
        raise ValueError("zero-variance targets: NRMSE undefined")
    ss_tot = var * len(targets)
    r2 = 1.0 - ss_res / ss_tot
    nrmse = np.sqrt(np.mean(resid ** 2, axis=0)) / np.sqrt(var)
    mse = float(np.mean(np.sum(resid ** 2, axis=1)))
    return Metrics(r2=r2, nrmse=nrmse, mse=mse)
