"""Separable target-space losses.

Every loss here has the form mean_i l_i(z^i): the reported value is
averaged over examples so per-coordinate smoothness constants are
batch-size independent. Per-coordinate value / derivative / curvature
are exposed for surrogate construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit, xlogy


@dataclass(frozen=True)
class SquaredLoss:
    """l_i(z) = (z - y_i)^2 / 2."""

    kind: str = "squared"
    L: float = 1.0
    mu: float = 1.0

    def values(self, z, y):
        return 0.5 * (np.asarray(z) - y) ** 2

    def grads(self, z, y):
        return np.asarray(z) - y

    def curvs(self, z, y):
        return np.ones_like(np.asarray(z, dtype=np.float64))


@dataclass(frozen=True)
class LogisticLoss:
    """l_i(z) = log(1 + exp(-y_i z)), labels in {-1, +1}.

    The analytical per-coordinate smoothness constant is 1/4; pass
    `smoothness` to override (some experimental setups use 2 instead).
    """

    kind: str = "logistic"
    L: float = 0.25
    mu: float = 0.0

    def values(self, z, y):
        # log1p(exp(.)) via logaddexp: no overflow for |z| up to 1e4+.
        return np.logaddexp(0.0, -y * np.asarray(z))

    def grads(self, z, y):
        return -y * expit(-y * np.asarray(z))

    def curvs(self, z, y):
        p = expit(y * np.asarray(z))
        return p * (1.0 - p)


@dataclass(frozen=True)
class MulticlassKLLoss:
    """Row-wise KL(policy || expert) over probability rows.

    Targets are row-stochastic (n, K) matrices; the label argument is the
    matching matrix of expert rows with strictly positive entries where the
    policy has mass.
    """

    kind: str = "multiclass-kl"
    L: float = 1.0
    mu: float = 0.0

    def values(self, z, y):
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        if np.any((y <= 0) & (z > 0)):
            raise ValueError("infinite loss: expert has zero mass where policy > 0")
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = xlogy(z, z) - xlogy(z, y)
        return terms.sum(axis=1)

    def grads(self, z, y):
        z = np.atleast_2d(np.asarray(z, dtype=np.float64))
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        return np.log(z / y) + 1.0

    def curvs(self, z, y):
        raise NotImplementedError("curvature is not used for the KL loss")


def make_loss(kind: str, smoothness: float | None = None):
    """Loss factory; `smoothness` overrides the per-coordinate constant."""
    if kind == "squared":
        loss = SquaredLoss()
    elif kind == "logistic":
        loss = LogisticLoss()
    elif kind in ("multiclass-kl", "multiclass-ce"):
        loss = MulticlassKLLoss()
    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    if smoothness is not None:
        loss = type(loss)(L=float(smoothness))  # type: ignore[call-arg]
    return loss


def loss_value(loss, z, y) -> float:
    """Averaged loss mean_i l_i(z^i); dimensions must agree."""
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y)
    if z.shape[0] != y.shape[0]:
        raise ValueError(f"dimension mismatch: {z.shape[0]} targets, {y.shape[0]} labels")
    if z.shape[0] == 0:
        return 0.0
    return float(np.mean(loss.values(z, y)))


def loss_grad_coord(loss, z_i: float, y_i) -> float:
    """Derivative of l_i at a single coordinate."""
    return float(np.asarray(loss.grads(np.array([z_i]), np.array([y_i])))[0])


def loss_curv_coord(loss, z_i: float, y_i) -> float:
    """Second derivative of l_i at a single coordinate."""
    return float(np.asarray(loss.curvs(np.array([z_i]), np.array([y_i])))[0])


def kl_to_expert(policy, expert) -> float:
    """KL(policy || expert) for two probability rows.

    Raises on an expert zero wherever the policy carries mass (the KL is
    infinite there).
    """
    policy = np.asarray(policy, dtype=np.float64)
    expert = np.asarray(expert, dtype=np.float64)
    return float(MulticlassKLLoss().values(policy[None, :], expert[None, :])[0])


def check_simplex_rows(z, tol: float = 1e-12) -> None:
    """Validate that every row of z is a probability vector."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if np.any(z < 0):
        raise ValueError("simplex rows must be nonnegative")
    if np.any(np.abs(z.sum(axis=1) - 1.0) > tol):
        raise ValueError(f"simplex rows must sum to 1 within {tol}")


def smoothed_expert_rows(class_ids, n_classes: int, eps: float = 0.05) -> np.ndarray:
    """Strictly positive expert rows from class ids (smoothed one-hots)."""
    ids = np.asarray(class_ids, dtype=int)
    rows = np.full((ids.shape[0], n_classes), eps / max(n_classes - 1, 1))
    rows[np.arange(ids.shape[0]), ids] = 1.0 - eps
    return rows


def effective_labels(dataset):
    """Labels as the loss sees them: expert rows when attached, else y."""
    meta = getattr(dataset, "meta", None) or {}
    rows = meta.get("expert_rows")
    return rows if rows is not None else dataset.y
