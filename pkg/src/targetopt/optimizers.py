"""Outer optimization loops with uniform tracing and oracle accounting.

`run_sso` builds one surrogate per outer iteration (consuming exactly
batch-size oracle calls) and minimizes it with a configured inner solver.
Parametric baselines (SGD, SGD + line search, Adam, AdaGrad, SVRG) share
the sampling, tracing, and accounting machinery so traces are directly
comparable. Simulated cost is oracle_calls * tau + inner_steps, where an
inner step is one surrogate-gradient evaluation (a closed-form solve
counts as d of them) and parametric updates count zero.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np

from . import losses as losses_mod
from .inner_solvers import armijo_backtracking, exact_linear_solve, gd_fixed
from .models import spectral_norm
from .schedules import Schedule, eta as schedule_eta, target_line_search, theoretical_eta0
from .surrogates import OracleCounter, build_stochastic

OPTIMIZERS = ("sso", "sgd", "sls", "adam", "adagrad", "svrg")


@dataclass
class RunConfig:
    """One run of one optimizer on one dataset."""

    optimizer: str = "sso"
    run_id: str = ""
    T: int = 100
    batch_size: int | None = None  # None = full batch
    seed: int = 0
    tau: float = 1.0
    eval_every: int = 1
    # Surrogate-based runs.
    variant: str = "smoothness"
    schedule_kind: str = "constant"
    eta0: float | None = None  # None = 1/(2 L n)
    schedule_beta: float = 1.0
    inner_solver: str = "gd"  # gd | armijo | exact
    m: int = 1
    m_rule: str = "constant"  # constant | log
    inner_alpha: float | None = None  # None = 1/beta for gd
    inner_alpha0: float = 1.0
    inner_shrink: float = 0.8
    inner_c: float = 0.5
    inner_growth: float = 1.0
    warm_start: bool = False
    sampling: str = "replacement"  # replacement | shuffle
    # Target line search (SSO-SLS) knobs.
    ls_alpha0: float = 10.0
    ls_shrink: float = 0.5
    ls_c: float = 0.5
    # Parametric runs.
    step_size: float | None = None  # None = theoretical 1/(2 L_theta)
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    adam_lr: float = 1e-3
    adagrad_lr: float = 1e-2
    adagrad_eps: float = 1e-10
    svrg_snapshot_freq: int | None = None  # None = ceil(n / b)
    diagnostics: tuple = ()
    record_theta: bool = False

    def validate(self, n: int) -> None:
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        b = self.resolved_batch(n)
        if not (1 <= b <= n):
            raise ValueError(f"batch size {b} outside [1, {n}]")
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")

    def resolved_batch(self, n: int) -> int:
        return n if self.batch_size is None else int(self.batch_size)


@dataclass
class TraceRow:
    outer_t: int
    oracle_calls: int
    inner_steps: int
    sim_cost: float
    wall_ms: float
    eta: float
    loss: float
    grad_norm: float
    eps: float | None = None
    zeta2: float | None = None


@dataclass
class RunTrace:
    run_id: str
    seed: int
    config: dict
    rows: list = field(default_factory=list)
    thetas: list = field(default_factory=list)  # populated when record_theta

    def final_loss(self) -> float:
        return self.rows[-1].loss

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.rows])


class _Sampler:
    """Batch index source: uniform with replacement, or epoch shuffling."""

    def __init__(self, n: int, batch: int, rng, mode: str):
        if mode not in ("replacement", "shuffle"):
            raise ValueError(f"unknown sampling mode {mode!r}")
        self.n, self.batch, self.rng, self.mode = n, batch, rng, mode
        self._order = np.empty(0, dtype=int)
        self._pos = 0

    def draw(self) -> np.ndarray:
        if self.batch == self.n:
            return np.arange(self.n)
        if self.mode == "replacement":
            return self.rng.integers(0, self.n, size=self.batch)
        out = []
        while len(out) < self.batch:
            if self._pos >= self._order.size:
                self._order = self.rng.permutation(self.n)
                self._pos = 0
            take = min(self.batch - len(out), self._order.size - self._pos)
            out.extend(self._order[self._pos : self._pos + take])
            self._pos += take
        return np.asarray(out, dtype=int)


def full_loss(loss, model, dataset, theta) -> float:
    z = model.forward(theta, dataset.X, np.arange(dataset.n))
    return losses_mod.loss_value(loss, z, losses_mod.effective_labels(dataset))


def batch_param_grad(loss, model, dataset, theta, idx) -> np.ndarray:
    """Mean parametric gradient of the sampled losses."""
    y = losses_mod.effective_labels(dataset)
    z = model.forward(theta, dataset.X, idx)
    coeffs = np.asarray(loss.grads(z, y[idx]))
    return model.param_grad(theta, dataset.X, idx, coeffs) / len(idx)


def full_grad_norm(loss, model, dataset, theta) -> float:
    return float(
        np.linalg.norm(batch_param_grad(loss, model, dataset, theta, np.arange(dataset.n)))
    )


def parametric_smoothness(dataset, loss, batch_size: int | None = None) -> float:
    """Smoothness of the averaged parametric loss.

    Full batch: L * lambda_max(X^T X) / n. Stochastic batches: the max
    individual constant L * max_i ||X_i||^2 (the safe step-size scale for
    sampled gradients).
    """
    X = dataset.X
    n = dataset.n
    if batch_size is None or batch_size == n:
        return loss.L * spectral_norm(X) ** 2 / n
    row_norms2 = np.asarray(X.multiply(X).sum(axis=1)).ravel()
    return loss.L * float(row_norms2.max())


def theoretical_parametric_step(dataset, loss, batch_size=None) -> float:
    return 1.0 / (2.0 * parametric_smoothness(dataset, loss, batch_size))


class _Recorder:
    """Collects trace rows and owns the oracle / inner-step counters."""

    def __init__(self, cfg: RunConfig, loss, model, dataset):
        self.cfg = cfg
        self.loss, self.model, self.dataset = loss, model, dataset
        self.counter = OracleCounter()
        self.inner_steps = 0
        self.t0 = time.perf_counter()
        self.rows: list[TraceRow] = []
        self.thetas: list[np.ndarray] = []

    def snap(self, theta) -> None:
        if self.cfg.record_theta:
            self.thetas.append(np.array(theta, copy=True))

    def record(self, t: int, theta, eta_t: float, eps=None, zeta2=None) -> None:
        loss_val = full_loss(self.loss, self.model, self.dataset, theta)
        if not np.isfinite(loss_val):
            raise RuntimeError(f"non-finite loss at outer iteration {t}")
        self.rows.append(
            TraceRow(
                outer_t=t,
                oracle_calls=self.counter.calls,
                inner_steps=self.inner_steps,
                sim_cost=self.counter.calls * self.cfg.tau + self.inner_steps,
                wall_ms=(time.perf_counter() - self.t0) * 1e3,
                eta=eta_t,
                loss=loss_val,
                grad_norm=full_grad_norm(self.loss, self.model, self.dataset, theta),
                eps=eps,
                zeta2=zeta2,
            )
        )

    def due(self, t: int) -> bool:
        return t % self.cfg.eval_every == 0 or t == self.cfg.T


def _init_theta(model, dataset, rng):
    theta = model.init_params(dataset.d, rng)
    return np.asarray(theta, dtype=np.float64)


def _make_trace(cfg: RunConfig, rec: _Recorder) -> RunTrace:
    return RunTrace(
        run_id=cfg.run_id or cfg.optimizer,
        seed=cfg.seed,
        config=asdict(cfg),
        rows=rec.rows,
        thetas=rec.thetas,
    )


def run_sso(cfg: RunConfig, dataset, model, loss) -> RunTrace:
    """Surrogate optimization (any variant / schedule / inner solver)."""
    cfg.validate(dataset.n)
    n = dataset.n
    b = cfg.resolved_batch(n)
    rng = np.random.default_rng(cfg.seed)
    theta = _init_theta(model, dataset, rng)
    sampler = _Sampler(n, b, rng, cfg.sampling)
    rec = _Recorder(cfg, loss, model, dataset)
    y = losses_mod.effective_labels(dataset)

    if cfg.eta0 is not None:
        eta0 = cfg.eta0
    elif cfg.schedule_kind == "adagrad-norm":
        eta0 = 1e-2  # no theoretical constant for the adaptive rule
    else:
        eta0 = theoretical_eta0(loss.L, n)
    sched = None
    if cfg.schedule_kind not in ("target-line-search",):
        sched = Schedule(cfg.schedule_kind, eta0, T=cfg.T, beta=cfg.schedule_beta)
    warm_alpha = None

    rec.record(0, theta, 0.0)
    rec.snap(theta)
    for t in range(1, cfg.T + 1):
        idx = sampler.draw()
        # Step size for this iteration.
        if cfg.schedule_kind == "target-line-search":
            z_b = model.forward(theta, dataset.X, idx)
            g_b = np.asarray(loss.grads(z_b, y[idx]))
            eta_t, _ = target_line_search(
                loss, z_b, y[idx], g_b, cfg.ls_alpha0, cfg.ls_shrink, cfg.ls_c
            )
        elif cfg.schedule_kind == "adagrad-norm":
            z_b = model.forward(theta, dataset.X, idx)
            g_b = np.asarray(loss.grads(z_b, y[idx]))
            eta_t = schedule_eta(sched, t, grad=g_b)
        else:
            eta_t = schedule_eta(sched, t)

        theta_prev = theta
        surr = build_stochastic(
            loss, model, dataset, theta, idx, eta_t, cfg.variant, counter=rec.counter
        )
        m_t = cfg.m if cfg.m_rule == "constant" else int(np.ceil(cfg.m * np.log(t + 2)))

        if cfg.inner_solver == "gd":
            res = gd_fixed(surr, theta, m_t, alpha=cfg.inner_alpha)
            theta = res.theta
            rec.inner_steps += res.inner_steps
        elif cfg.inner_solver == "armijo":
            alpha0 = cfg.inner_alpha0 * cfg.inner_growth
            if cfg.warm_start and warm_alpha is not None:
                alpha0 = warm_alpha * cfg.inner_growth
            res = armijo_backtracking(
                surr, theta, m_t, alpha0=alpha0, shrink=cfg.inner_shrink, c=cfg.inner_c
            )
            theta = res.theta
            warm_alpha = res.last_alpha
            rec.inner_steps += res.inner_steps
        elif cfg.inner_solver == "exact":
            theta = exact_linear_solve(surr, origin=theta)
            rec.inner_steps += dataset.d
        else:
            raise ValueError(f"unknown inner solver {cfg.inner_solver!r}")

        rec.snap(theta)
        if rec.due(t):
            eps = zeta2_val = None
            if cfg.diagnostics:
                from . import diagnostics as diag

                if "eps" in cfg.diagnostics:
                    eps = diag.projection_error(
                        loss, model, dataset, theta_prev, idx, eta_t, theta
                    )
                if "zeta2" in cfg.diagnostics:
                    zeta2_val = diag.zeta2(dataset, loss, model, theta_prev, eta_t)
            rec.record(t, theta, eta_t, eps=eps, zeta2=zeta2_val)

    return _make_trace(cfg, rec)


def run_parametric_sgd(cfg: RunConfig, dataset, model, loss) -> RunTrace:
    """Plain stochastic gradient descent in parameter space."""
    cfg.validate(dataset.n)
    n = dataset.n
    b = cfg.resolved_batch(n)
    rng = np.random.default_rng(cfg.seed)
    theta = _init_theta(model, dataset, rng)
    sampler = _Sampler(n, b, rng, cfg.sampling)
    rec = _Recorder(cfg, loss, model, dataset)

    step0 = (
        cfg.step_size
        if cfg.step_size is not None
        else theoretical_parametric_step(dataset, loss, cfg.batch_size)
    )
    sched = Schedule(cfg.schedule_kind, step0, T=cfg.T, beta=cfg.schedule_beta)

    rec.record(0, theta, 0.0)
    rec.snap(theta)
    for t in range(1, cfg.T + 1):
        idx = sampler.draw()
        g = batch_param_grad(loss, model, dataset, theta, idx)
        rec.counter.add(len(idx))
        step = schedule_eta(sched, t, grad=g)
        theta = theta - step * g
        rec.snap(theta)
        if rec.due(t):
            rec.record(t, theta, step)
    return _make_trace(cfg, rec)


def run_parametric_sls(cfg: RunConfig, dataset, model, loss) -> RunTrace:
    """SGD with Armijo backtracking on the sampled mini-batch loss."""
    cfg.validate(dataset.n)
    n = dataset.n
    b = cfg.resolved_batch(n)
    rng = np.random.default_rng(cfg.seed)
    theta = _init_theta(model, dataset, rng)
    sampler = _Sampler(n, b, rng, cfg.sampling)
    rec = _Recorder(cfg, loss, model, dataset)
    y = losses_mod.effective_labels(dataset)

    rec.record(0, theta, 0.0)
    for t in range(1, cfg.T + 1):
        idx = sampler.draw()
        z = model.forward(theta, dataset.X, idx)
        base = float(np.mean(loss.values(z, y[idx])))
        g = batch_param_grad(loss, model, dataset, theta, idx)
        rec.counter.add(len(idx))
        gnorm2 = float(g @ g)
        step = cfg.ls_alpha0
        if gnorm2 > 0:
            while step >= 1e-12:
                z_try = model.forward(theta - step * g, dataset.X, idx)
                if float(np.mean(loss.values(z_try, y[idx]))) <= base - cfg.ls_c * step * gnorm2:
                    break
                step *= cfg.ls_shrink
            theta = theta - step * g
        if rec.due(t):
            rec.record(t, theta, step)
    return _make_trace(cfg, rec)


def run_adam(cfg: RunConfig, dataset, model, loss) -> RunTrace:
    """Adam baseline with the usual default constants."""
    cfg.validate(dataset.n)
    rng = np.random.default_rng(cfg.seed)
    theta = _init_theta(model, dataset, rng)
    sampler = _Sampler(dataset.n, cfg.resolved_batch(dataset.n), rng, cfg.sampling)
    rec = _Recorder(cfg, loss, model, dataset)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)

    rec.record(0, theta, 0.0)
    for t in range(1, cfg.T + 1):
        idx = sampler.draw()
        g = batch_param_grad(loss, model, dataset, theta, idx)
        rec.counter.add(len(idx))
        m = cfg.adam_beta1 * m + (1 - cfg.adam_beta1) * g
        v = cfg.adam_beta2 * v + (1 - cfg.adam_beta2) * g * g
        mhat = m / (1 - cfg.adam_beta1**t)
        vhat = v / (1 - cfg.adam_beta2**t)
        theta = theta - cfg.adam_lr * mhat / (np.sqrt(vhat) + cfg.adam_eps)
        if rec.due(t):
            rec.record(t, theta, cfg.adam_lr)
    return _make_trace(cfg, rec)


def run_adagrad(cfg: RunConfig, dataset, model, loss) -> RunTrace:
    """Diagonal AdaGrad baseline."""
    cfg.validate(dataset.n)
    rng = np.random.default_rng(cfg.seed)
    theta = _init_theta(model, dataset, rng)
    sampler = _Sampler(dataset.n, cfg.resolved_batch(dataset.n), rng, cfg.sampling)
    rec = _Recorder(cfg, loss, model, dataset)
    acc = np.zeros_like(theta)

    rec.record(0, theta, 0.0)
    for t in range(1, cfg.T + 1):
        idx = sampler.draw()
        g = batch_param_grad(loss, model, dataset, theta, idx)
        rec.counter.add(len(idx))
        acc += g * g
        theta = theta - cfg.adagrad_lr * g / (np.sqrt(acc) + cfg.adagrad_eps)
        if rec.due(t):
            rec.record(t, theta, cfg.adagrad_lr)
    return _make_trace(cfg, rec)


def run_svrg(cfg: RunConfig, dataset, model, loss) -> RunTrace:
    """SVRG: periodic full-gradient snapshots + control-variate steps.

    Each snapshot costs n oracle calls; each update step costs 2b (batch
    gradients at the current point and at the snapshot).
    """
    cfg.validate(dataset.n)
    n = dataset.n
    b = cfg.resolved_batch(n)
    freq = cfg.svrg_snapshot_freq or max(1, int(np.ceil(n / b)))
    rng = np.random.default_rng(cfg.seed)
    theta = _init_theta(model, dataset, rng)
    sampler = _Sampler(n, b, rng, cfg.sampling)
    rec = _Recorder(cfg, loss, model, dataset)

    step = (
        cfg.step_size
        if cfg.step_size is not None
        else theoretical_parametric_step(dataset, loss, cfg.batch_size)
    )
    snapshot = theta.copy()
    mu = np.zeros_like(theta)

    rec.record(0, theta, 0.0)
    for t in range(1, cfg.T + 1):
        if (t - 1) % freq == 0:
            snapshot = theta.copy()
            mu = batch_param_grad(loss, model, dataset, snapshot, np.arange(n))
            rec.counter.add(n)
        idx = sampler.draw()
        g = (
            batch_param_grad(loss, model, dataset, theta, idx)
            - batch_param_grad(loss, model, dataset, snapshot, idx)
            + mu
        )
        rec.counter.add(2 * len(idx))
        theta = theta - step * g
        if rec.due(t):
            rec.record(t, theta, step)
    return _make_trace(cfg, rec)


RUNNERS = {
    "sso": run_sso,
    "sgd": run_parametric_sgd,
    "sls": run_parametric_sls,
    "adam": run_adam,
    "adagrad": run_adagrad,
    "svrg": run_svrg,
}


def run(cfg: RunConfig, dataset, model, loss) -> RunTrace:
    return RUNNERS[cfg.optimizer](cfg, dataset, model, loss)
