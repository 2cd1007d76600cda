"""Parameterizations mapping parameters to per-example targets.

Each model exposes `forward` (targets on an index set), `param_grad`
(gradient of a coefficient-weighted sum of targets, the only primitive
surrogate minimization needs), and a Lipschitz-constant estimate. MLP
gradients are hand-written reverse accumulation so they can be checked
against finite differences without an autodiff dependency.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp


def spectral_norm(X, tol: float = 1e-6, max_iter: int = 100000) -> float:
    """Largest singular value of X by power iteration on X^T X.

    Stops when the geometric-tail estimate of the remaining error drops
    below the relative tolerance (successive increments shrink with ratio
    (s2/s1)^2; the tail is extrapolated from the last two increments).
    """
    n, d = X.shape
    if n == 0 or d == 0:
        return 0.0
    rng = np.random.default_rng(0)
    v = rng.standard_normal(d)
    v /= np.linalg.norm(v)
    sigma = 0.0
    prev_diff = np.inf
    for _ in range(max_iter):
        w = X.T @ (X @ v)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        new_sigma = np.sqrt(norm)
        v = w / norm
        diff = abs(new_sigma - sigma)
        if diff == 0.0:
            return float(new_sigma)
        if np.isfinite(prev_diff) and prev_diff > 0:
            ratio = diff / prev_diff
            tail = diff * ratio / (1.0 - ratio) if ratio < 1 else np.inf
            if diff + tail <= tol * new_sigma:
                return float(new_sigma)
        prev_diff = diff
        sigma = new_sigma
    return float(sigma)


def _rows(X, idx):
    return X[idx] if idx is not None else X


class LinearModel:
    """f_i(theta) = <X_i, theta>; scalar target per example."""

    kind = "linear"
    arity = 1

    def init_params(self, d: int, rng=None) -> np.ndarray:
        return np.zeros(d)

    def dim(self, d: int) -> int:
        return d

    def forward(self, theta, X, idx=None) -> np.ndarray:
        return np.asarray(_rows(X, idx) @ theta).ravel()

    def param_grad(self, theta, X, idx, coeffs) -> np.ndarray:
        """Gradient of sum_i coeffs_i * f_i(theta)."""
        return np.asarray(_rows(X, idx).T @ coeffs).ravel()

    def lipschitz(self, X) -> float:
        return spectral_norm(X)


class SoftmaxLinearModel:
    """f_i(theta) = softmax(W^T X_i); row-stochastic targets, theta = vec(W)."""

    kind = "softmax-linear"

    def __init__(self, n_classes: int):
        if n_classes < 2:
            raise ValueError("softmax model needs at least 2 classes")
        self.arity = n_classes

    def init_params(self, d: int, rng=None) -> np.ndarray:
        return np.zeros(d * self.arity)

    def dim(self, d: int) -> int:
        return d * self.arity

    def _weights(self, theta, d):
        return np.asarray(theta).reshape(d, self.arity)

    def forward(self, theta, X, idx=None) -> np.ndarray:
        rows = _rows(X, idx)
        logits = np.asarray(rows @ self._weights(theta, X.shape[1]))
        logits -= logits.max(axis=1, keepdims=True)
        e = np.exp(logits)
        return e / e.sum(axis=1, keepdims=True)

    def param_grad(self, theta, X, idx, coeffs) -> np.ndarray:
        """Gradient of sum_i <coeffs_i, f_i(theta)> with (m, K) coeffs."""
        rows = _rows(X, idx)
        s = self.forward(theta, X, idx)
        coeffs = np.atleast_2d(coeffs)
        # Softmax Jacobian applied to each coefficient row.
        g_logits = s * (coeffs - (s * coeffs).sum(axis=1, keepdims=True))
        return np.asarray(rows.T @ g_logits).ravel()

    def lipschitz(self, X) -> float:
        # Softmax is 1-Lipschitz, so the linear layer norm bounds the map.
        return spectral_norm(X)


class MLPModel:
    """Two-layer ReLU network with a scalar output per example.

    Parameters are flattened [W1 (d x h), b1 (h), w2 (h), b2 (1)] with
    seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
    """

    kind = "mlp"
    arity = 1

    def __init__(self, hidden: int, seed: int = 0):
        if hidden < 1:
            raise ValueError("hidden width must be >= 1")
        self.hidden = hidden
        self.seed = seed

    def dim(self, d: int) -> int:
        return d * self.hidden + self.hidden + self.hidden + 1

    def init_params(self, d: int, rng=None) -> np.ndarray:
        rng = rng if rng is not None else np.random.default_rng(self.seed)
        h = self.hidden
        b1 = 1.0 / np.sqrt(d)
        b2 = 1.0 / np.sqrt(h)
        return np.concatenate(
            [
                rng.uniform(-b1, b1, size=d * h),
                rng.uniform(-b1, b1, size=h),
                rng.uniform(-b2, b2, size=h),
                rng.uniform(-b2, b2, size=1),
            ]
        )

    def _unpack(self, theta, d):
        h = self.hidden
        theta = np.asarray(theta)
        W1 = theta[: d * h].reshape(d, h)
        b1 = theta[d * h : d * h + h]
        w2 = theta[d * h + h : d * h + 2 * h]
        b2 = theta[-1]
        return W1, b1, w2, b2

    def forward(self, theta, X, idx=None) -> np.ndarray:
        rows = _rows(X, idx)
        W1, b1, w2, b2 = self._unpack(theta, X.shape[1])
        a = np.maximum(np.asarray(rows @ W1) + b1, 0.0)
        return a @ w2 + b2

    def param_grad(self, theta, X, idx, coeffs) -> np.ndarray:
        rows = _rows(X, idx)
        W1, b1, w2, b2 = self._unpack(theta, X.shape[1])
        pre = np.asarray(rows @ W1) + b1
        a = np.maximum(pre, 0.0)
        mask = (pre > 0).astype(np.float64)
        coeffs = np.asarray(coeffs)
        # Reverse accumulation of sum_i coeffs_i * f_i.
        g_w2 = a.T @ coeffs
        g_b2 = coeffs.sum()
        back = (coeffs[:, None] * w2[None, :]) * mask
        g_W1 = np.asarray(rows.T @ back)
        g_b1 = back.sum(axis=0)
        return np.concatenate([g_W1.ravel(), g_b1, g_w2, [g_b2]])

    def param_jacobian(self, theta, X, idx=None) -> np.ndarray:
        """Dense Jacobian of the targets with respect to the parameters."""
        rows = _rows(X, idx)
        rows = rows.toarray() if sp.issparse(rows) else np.asarray(rows)
        W1, b1, w2, b2 = self._unpack(theta, X.shape[1])
        pre = rows @ W1 + b1
        a = np.maximum(pre, 0.0)
        mask = (pre > 0).astype(np.float64)
        back = mask * w2[None, :]  # d f_i / d pre_ik
        m, d = rows.shape
        jac_W1 = rows[:, :, None] * back[:, None, :]  # (m, d, h)
        return np.concatenate(
            [jac_W1.reshape(m, d * self.hidden), back, a, np.ones((m, 1))], axis=1
        )

    def lipschitz(self, X, theta=None) -> float:
        # Local estimate: spectral norm of the parameter Jacobian at a
        # point (seeded initialization by default). The map is piecewise
        # linear in the parameters, so this bounds nearby slopes only.
        if theta is None:
            theta = self.init_params(X.shape[1])
        return spectral_norm(self.param_jacobian(theta, X))


def make_model(kind: str, hidden: int = 16, n_classes: int = 0, seed: int = 0):
    if kind == "linear":
        return LinearModel()
    if kind == "softmax-linear":
        return SoftmaxLinearModel(n_classes)
    if kind == "mlp":
        return MLPModel(hidden=hidden, seed=seed)
    raise ValueError(f"unknown model kind {kind!r}")


def grad_surrogate_params(model, theta, X, idx, lin_coeffs, quad_weights, anchors):
    """Gradient of mean_i [c_i f_i + (w_i/2)(f_i - z_i)^2] over `idx`.

    For linear models this is mean_i [c_i + w_i (X_i theta - z_i)] X_i; for
    other models the same chain rule runs through `param_grad`.
    """
    idx = np.asarray(idx)
    f = model.forward(theta, X, idx)
    coeffs = (np.asarray(lin_coeffs) + np.asarray(quad_weights) * (f - anchors)) / len(idx)
    return model.param_grad(theta, X, idx, coeffs)


def lipschitz_estimate(model, X, theta=None) -> float:
    """Lipschitz constant of the target map.

    Exact (the spectral norm) for linear models; for the MLP a product-of-
    layer-norms bound at `theta` (seeded initialization by default)."""
    if model.kind == "mlp":
        return model.lipschitz(X, theta)
    return model.lipschitz(X)
