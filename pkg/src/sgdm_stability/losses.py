"""Per-example convex losses, empirical risk, and smoothness constants.

Two loss kinds are supported:

* ``logistic``: l(w; (x, y)) = log(1 + exp(-y <w, x>)), per-example
  smoothness ||x||^2 / 4.
* ``squared``:  l(w; (x, y)) = (<w, x> - y)^2 / 2, per-example
  smoothness ||x||^2.

Both gradients are a scalar multiple of the feature vector, which the
optimizer exploits for sparse updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from .dataset import Dataset, Example

LOSS_KINDS = ("logistic", "squared")


def _check_kind(kind: str) -> str:
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}, expected one of {LOSS_KINDS}")
    return kind


def _check_dim(w: np.ndarray, z: Example) -> None:
    if z.features.indices and z.features.indices[-1] > w.shape[-1]:
        raise ValueError(
            f"weight vector of length {w.shape[-1]} cannot cover feature index "
            f"{z.features.indices[-1]}"
        )


def margin(w: np.ndarray, z: Example) -> float:
    """Sparse inner product <w, x>."""
    _check_dim(w, z)
    if len(z.features.indices) == 0:
        return 0.0
    return float(np.dot(w[z.features.idx0], z.features.vals))


def loss_value(w: np.ndarray, z: Example, kind: str) -> float:
    _check_kind(kind)
    m = margin(w, z)
    if kind == "logistic":
        # log(1 + exp(-y m)) without overflow for large |m|.
        return float(np.logaddexp(0.0, -z.label * m))
    return 0.5 * (m - z.label) ** 2


def grad_scale(w: np.ndarray, z: Example, kind: str) -> float:
    """Scalar s such that the gradient equals s * x."""
    _check_kind(kind)
    m = margin(w, z)
    if kind == "logistic":
        return float(-z.label * expit(-z.label * m))
    return m - z.label


def loss_grad(w: np.ndarray, z: Example, kind: str) -> np.ndarray:
    """Dense gradient vector, supported on the example's feature indices."""
    g = np.zeros_like(w)
    s = grad_scale(w, z, kind)
    if len(z.features.indices):
        # overflow here means the iterate already blew up; the optimizer
        # detects the resulting non-finite gradient and raises
        with np.errstate(over="ignore", invalid="ignore"):
            g[z.features.idx0] = s * z.features.vals
    return g


def _margins_matrix(w_rows: np.ndarray, d: Dataset) -> np.ndarray:
    """Margins <w_j, x_i> for every example i and weight row j, shape (n, rows)."""
    return d.matrix @ w_rows.T


def empirical_risk(w: np.ndarray, d: Dataset, kind: str) -> float:
    return float(empirical_risk_many(w[None, :], d, kind)[0])


def empirical_risk_many(w_rows: np.ndarray, d: Dataset, kind: str) -> np.ndarray:
    """Empirical risk of each weight row, in one sparse matrix product."""
    _check_kind(kind)
    w_rows = np.atleast_2d(np.asarray(w_rows, dtype=np.float64))
    if w_rows.shape[1] != d.dim:
        raise ValueError(f"weight rows have dim {w_rows.shape[1]}, dataset has {d.dim}")
    margins = _margins_matrix(w_rows, d)
    y = d.labels[:, None]
    if kind == "logistic":
        losses = np.logaddexp(0.0, -y * margins)
    else:
        losses = 0.5 * (margins - y) ** 2
    return losses.mean(axis=0)


@dataclass(frozen=True)
class SmoothnessReport:
    """Per-example smoothness constants and their max over the dataset."""

    alpha: float
    per_example: np.ndarray

    def __post_init__(self):
        if self.per_example.size and not np.isclose(self.alpha, self.per_example.max()):
            raise ValueError("alpha must equal the max per-example constant")


def smoothness(d: Dataset, kind: str) -> SmoothnessReport:
    _check_kind(kind)
    sq = np.asarray([ex.features.norm_sq for ex in d.examples], dtype=np.float64)
    per_example = sq / 4.0 if kind == "logistic" else sq
    return SmoothnessReport(alpha=float(per_example.max()), per_example=per_example)
