"""Deterministic minimization of a built surrogate.

Inner solvers never touch the loss oracle: they work on the frozen
surrogate only. `gd_fixed` runs m fixed-step gradient steps (step 1/beta
by default, beta the surrogate smoothness bound), `armijo_backtracking`
uses a sufficient-decrease line search, and `exact_linear_solve` solves
the quadratic surrogate of a linear model in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

BACKTRACK_FLOOR = 1e-12


class DivergenceError(RuntimeError):
    """Non-finite gradient during inner iteration; names the step."""

    def __init__(self, step: int):
        super().__init__(f"non-finite surrogate gradient at inner step {step}")
        self.step = step


@dataclass
class InnerResult:
    theta: np.ndarray
    inner_steps: int
    stalled: bool = False
    last_alpha: float | None = None


def gd_fixed(surrogate, omega0, m: int, alpha: float | None = None) -> InnerResult:
    """m steps of fixed-step gradient descent on the surrogate.

    With alpha = 1/beta (the default, beta from `smoothness_bound`) the
    surrogate value is non-increasing at every step.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if alpha is None:
        alpha = 1.0 / surrogate.smoothness_bound()
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    omega = np.asarray(omega0, dtype=np.float64).copy()
    for k in range(m):
        g = surrogate.grad(omega)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(k)
        omega = omega - alpha * g
    return InnerResult(theta=omega, inner_steps=m, last_alpha=alpha)


def armijo_backtracking(
    surrogate,
    omega0,
    m: int,
    alpha0: float = 1.0,
    shrink: float = 0.8,
    c: float = 0.5,
    reset: bool = True,
) -> InnerResult:
    """Up to m Armijo gradient steps on the surrogate.

    Each accepted step satisfies value(w - a g) <= value(w) - c a ||g||^2.
    With `reset` (the default) every step restarts the search at alpha0;
    otherwise it warm-starts from the previously accepted step. Hitting
    the backtrack floor returns the current point with `stalled` set.
    """
    if m < 1:
        raise ValueError("m must be >= 1")
    if alpha0 <= 0 or not (0 < shrink < 1) or not (0 < c < 1):
        raise ValueError("need alpha0 > 0, shrink and c in (0, 1)")
    omega = np.asarray(omega0, dtype=np.float64).copy()
    alpha = alpha0
    steps = 0
    for k in range(m):
        g = surrogate.grad(omega)
        if not np.all(np.isfinite(g)):
            raise DivergenceError(k)
        gnorm2 = float(g @ g.ravel()) if g.ndim == 1 else float(np.sum(g * g))
        if gnorm2 == 0.0:
            break
        val = surrogate.value(omega)
        if reset:
            alpha = alpha0
        while alpha >= BACKTRACK_FLOOR:
            trial = omega - alpha * g
            if surrogate.value(trial) <= val - c * alpha * gnorm2:
                break
            alpha *= shrink
        else:
            return InnerResult(omega, steps, stalled=True, last_alpha=alpha)
        omega = omega - alpha * g
        steps += 1
    return InnerResult(omega, steps, last_alpha=alpha)


def exact_linear_solve(surrogate, lam: float = 0.0, origin=None) -> np.ndarray:
    """Closed-form minimizer of a quadratic surrogate on a linear model.

    Solves the normal equations with pseudo-inverse semantics: by default
    the minimum-norm solution; with `origin` given, the solution closest
    to it (the limit of gradient descent started there). `lam` adds ridge
    regularization.
    """
    H, b = surrogate.quadratic_parts()
    if lam > 0:
        H = H + lam * np.eye(H.shape[0])
    if origin is None:
        theta, *_ = np.linalg.lstsq(H, b, rcond=None)
        return theta
    origin = np.asarray(origin, dtype=np.float64)
    delta, *_ = np.linalg.lstsq(H, b - H @ origin, rcond=None)
    return origin + delta
