import numpy as np
import pytest
import scipy.sparse as sp

from targetopt.data import SyntheticSpec, generate_synthetic
from targetopt.losses import (
    LogisticLoss,
    MulticlassKLLoss,
    SquaredLoss,
    loss_value,
    smoothed_expert_rows,
)
from targetopt.models import LinearModel, SoftmaxLinearModel
from targetopt.surrogates import (
    OracleCounter,
    build_analysis_q,
    build_deterministic,
    build_stochastic,
    mirror_projection_objective,
    mirror_step,
)


def make_ls(n=12, d=4, seed=0, noise=0.5):
    return generate_synthetic(
        SyntheticSpec("least-squares", n=n, d=d, cond=5.0, noise=noise, seed=seed)
    )


class TestStochastic:
    def test_single_example_closed_form(self):
        # One-example least squares: the built surrogate must match the
        # explicit quadratic expression term by term.
        ds = make_ls(n=3, d=2, seed=1)
        model = LinearModel()
        loss = SquaredLoss()
        rng = np.random.default_rng(2)
        theta_t = rng.normal(size=2)
        eta = 0.7
        i = 1
        surr = build_stochastic(loss, model, ds, theta_t, [i], eta)
        x_i = ds.X.getrow(i).toarray().ravel()
        for _ in range(20):
            theta = rng.normal(size=2)
            r = x_i @ theta_t - ds.y[i]
            expected = (
                0.5 * r**2
                + r * (x_i @ (theta - theta_t))
                + (x_i @ (theta - theta_t)) ** 2 / (2 * eta)
            )
            assert surr.value(theta) == pytest.approx(expected, rel=1e-12)

    def test_anchor_tightness(self):
        ds = make_ls()
        model = LinearModel()
        loss = LogisticLoss()
        ds.y = np.where(ds.y > np.median(ds.y), 1.0, -1.0)
        theta_t = np.random.default_rng(3).normal(size=ds.d)
        idx = [0, 3, 7]
        surr = build_stochastic(loss, model, ds, theta_t, idx, 0.5)
        z = model.forward(theta_t, ds.X, idx)
        batch_loss = float(np.mean(loss.values(z, ds.y[idx])))
        assert surr.value(theta_t) == pytest.approx(batch_loss, abs=1e-15)

    def test_one_dim_argmin(self):
        # X=[1], y=2, anchor 0, eta=0.5: stationarity gives theta = 1.
        X = sp.csr_matrix(np.array([[1.0]]))
        ds = type("D", (), {})()
        ds.X, ds.y, ds.n, ds.d = X, np.array([2.0]), 1, 1
        surr = build_stochastic(SquaredLoss(), LinearModel(), ds, np.zeros(1), [0], 0.5)
        ts = np.linspace(-1, 3, 4001)
        vals = [surr.value(np.array([t])) for t in ts]
        assert ts[int(np.argmin(vals))] == pytest.approx(1.0, abs=1e-3)

    def test_unbiasedness_over_singletons(self):
        ds = make_ls(n=8, d=3, seed=4)
        model = LinearModel()
        loss = SquaredLoss()
        rng = np.random.default_rng(5)
        theta_t = rng.normal(size=3)
        eta = 0.3
        full = build_deterministic(loss, model, ds, theta_t, eta)
        for _ in range(5):
            theta = rng.normal(size=3)
            mean_val = np.mean(
                [
                    build_stochastic(loss, model, ds, theta_t, [i], eta).value(theta)
                    for i in range(ds.n)
                ]
            )
            assert mean_val == pytest.approx(full.value(theta), abs=1e-10)

    def test_grad_matches_finite_differences(self):
        ds = make_ls(n=10, d=4, seed=6)
        model = LinearModel()
        loss = SquaredLoss()
        rng = np.random.default_rng(7)
        theta_t = rng.normal(size=4)
        surr = build_stochastic(loss, model, ds, theta_t, [1, 4, 8], 0.4)
        theta = rng.normal(size=4)
        g = surr.grad(theta)
        h = 1e-6
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            fd = (surr.value(theta + e) - surr.value(theta - e)) / (2 * h)
            assert g[j] == pytest.approx(fd, rel=1e-5, abs=1e-9)

    def test_newton_weight_equals_curvature(self):
        ds = generate_synthetic(SyntheticSpec("logistic", n=6, d=3, noise=0.2, seed=8))
        model = LinearModel()
        loss = LogisticLoss()
        theta_t = np.random.default_rng(9).normal(size=3)
        eta = 0.5
        idx = [0, 2, 5]
        surr = build_stochastic(loss, model, ds, theta_t, idx, eta, variant="newton")
        z = model.forward(theta_t, ds.X, idx)
        curv = loss.curvs(z, ds.y[idx])
        np.testing.assert_allclose(surr.reg_weights, curv / eta)

    def test_newton_zero_curvature_floored(self):
        X = sp.csr_matrix(np.array([[1.0]]))
        ds = type("D", (), {})()
        ds.X, ds.y, ds.n, ds.d = X, np.array([1.0]), 1, 1
        # Saturated logistic: curvature underflows to 0; weight gets floored.
        surr = build_stochastic(
            LogisticLoss(), LinearModel(), ds, np.array([1e3]), [0], 0.5, "newton"
        )
        assert surr.reg_weights[0] == pytest.approx(1e-8 / 0.5)

    def test_oracle_isolation(self):
        ds = make_ls()
        counter = OracleCounter()
        surr = build_stochastic(
            SquaredLoss(), LinearModel(), ds, np.zeros(ds.d), [0, 1], 0.5, counter=counter
        )
        assert counter.calls == 2
        theta = np.ones(ds.d)
        surr.value(theta)
        surr.grad(theta)
        surr.smoothness_bound()
        assert counter.calls == 2

    def test_rejects_bad_inputs(self):
        ds = make_ls()
        with pytest.raises(ValueError, match="eta"):
            build_stochastic(SquaredLoss(), LinearModel(), ds, np.zeros(ds.d), [0], 0.0)
        with pytest.raises(ValueError, match="nonempty"):
            build_stochastic(SquaredLoss(), LinearModel(), ds, np.zeros(ds.d), [], 0.5)


class TestDeterministic:
    def test_upper_bound_at_eta_inverse_L(self):
        ds = make_ls(n=20, d=5, seed=10)
        model = LinearModel()
        loss = SquaredLoss()
        rng = np.random.default_rng(11)
        theta_t = rng.normal(size=5)
        surr = build_deterministic(loss, model, ds, theta_t, 1.0 / loss.L)
        for _ in range(300):
            theta = rng.normal(scale=3.0, size=5)
            h = loss_value(loss, model.forward(theta, ds.X), ds.y)
            assert surr.value(theta) >= h - 1e-10

    def test_tight_at_anchor(self):
        ds = make_ls(seed=12)
        model = LinearModel()
        loss = SquaredLoss()
        theta_t = np.random.default_rng(13).normal(size=ds.d)
        surr = build_deterministic(loss, model, ds, theta_t, 1.0)
        h = loss_value(loss, model.forward(theta_t, ds.X), ds.y)
        assert surr.value(theta_t) == pytest.approx(h, abs=1e-14)

    def test_least_squares_terms(self):
        # Full-batch squared loss: value matches the averaged closed form
        # 1/n [ 1/2||X t - y||^2 + <X t - y, X(s - t)> + 1/(2 eta)||X(s - t)||^2 ].
        ds = make_ls(n=7, d=3, seed=14)
        model = LinearModel()
        rng = np.random.default_rng(15)
        theta_t = rng.normal(size=3)
        eta = 0.9
        surr = build_deterministic(SquaredLoss(), model, ds, theta_t, eta)
        X = ds.X.toarray()
        r = X @ theta_t - ds.y
        for _ in range(10):
            theta = rng.normal(size=3)
            step = X @ (theta - theta_t)
            expected = (
                0.5 * r @ r + r @ step + step @ step / (2 * eta)
            ) / ds.n
            assert surr.value(theta) == pytest.approx(expected, rel=1e-12)


class TestAnalysisQ:
    def test_expectation_equals_full_surrogate(self):
        ds = make_ls(n=6, d=3, seed=16)
        model = LinearModel()
        loss = SquaredLoss()
        rng = np.random.default_rng(17)
        theta_t = rng.normal(size=3)
        eta = 0.4
        full = build_deterministic(loss, model, ds, theta_t, eta)
        for _ in range(5):
            theta = rng.normal(size=3)
            mean_q = np.mean(
                [
                    build_analysis_q(loss, model, ds, theta_t, [i], eta).value(theta)
                    for i in range(ds.n)
                ]
            )
            assert mean_q == pytest.approx(full.value(theta), abs=1e-10)

    def test_anchor_value(self):
        ds = make_ls(seed=18)
        model = LinearModel()
        loss = SquaredLoss()
        theta_t = np.random.default_rng(19).normal(size=ds.d)
        q = build_analysis_q(loss, model, ds, theta_t, [2], 0.4)
        z2 = model.forward(theta_t, ds.X, [2])
        assert q.value(theta_t) == pytest.approx(
            float(loss.values(z2, ds.y[[2]])[0]), abs=1e-14
        )

    def test_n_equal_one_reduces_to_stochastic(self):
        X = sp.csr_matrix(np.array([[1.5]]))
        ds = type("D", (), {})()
        ds.X, ds.y, ds.n, ds.d = X, np.array([2.0]), 1, 1
        theta_t = np.array([0.3])
        g = build_stochastic(SquaredLoss(), LinearModel(), ds, theta_t, [0], 0.5)
        q = build_analysis_q(SquaredLoss(), LinearModel(), ds, theta_t, [0], 0.5)
        for t in np.linspace(-2, 2, 17):
            assert g.value(np.array([t])) == pytest.approx(q.value(np.array([t])), abs=1e-14)


class TestMirror:
    def test_euclidean_step(self):
        assert mirror_step(np.array([1.0]), np.array([2.0]), 0.25, "euclidean")[0] == 0.5

    def test_entropy_zero_gradient_identity(self):
        row = np.array([0.25, 0.75])
        np.testing.assert_array_equal(mirror_step(row, np.zeros(2), 1.0, "negative-entropy"), row)

    def test_entropy_hand_value(self):
        out = mirror_step(np.array([0.5, 0.5]), np.array([np.log(2), 0.0]), 1.0, "negative-entropy")
        np.testing.assert_allclose(out, [0.25, 0.5], rtol=1e-14)

    def test_entropy_requires_positive(self):
        with pytest.raises(ValueError, match="strictly positive"):
            mirror_step(np.array([0.0, 1.0]), np.zeros(2), 1.0, "negative-entropy")

    def test_projection_objective_zero_when_equal_normalized(self):
        row = np.array([0.3, 0.7])
        assert mirror_projection_objective(row, row) == pytest.approx(0.0, abs=1e-15)

    def test_projection_objective_nonnegative_when_normalized(self):
        rng = np.random.default_rng(20)
        for _ in range(50):
            a = rng.dirichlet(np.ones(3))
            b = rng.dirichlet(np.ones(3)) + 1e-9
            b /= b.sum()
            assert mirror_projection_objective(a, b) >= -1e-12

    def test_mirror_surrogate_grad_finite_differences(self):
        rng = np.random.default_rng(21)
        n, d, K = 5, 3, 3
        X = sp.csr_matrix(rng.normal(size=(n, d)))
        ds = type("D", (), {})()
        ds.X, ds.n, ds.d = X, n, d
        ds.y = smoothed_expert_rows(rng.integers(0, K, n), K, eps=0.1)
        model = SoftmaxLinearModel(K)
        loss = MulticlassKLLoss()
        theta_t = rng.normal(size=model.dim(d)) * 0.3
        surr = build_stochastic(loss, model, ds, theta_t, [0, 2], 0.8, "entropy-mirror")
        theta = rng.normal(size=model.dim(d)) * 0.3
        g = surr.grad(theta)
        h = 1e-6
        for j in range(theta.size):
            e = np.zeros_like(theta)
            e[j] = h
            fd = (surr.value(theta + e) - surr.value(theta - e)) / (2 * h)
            assert g[j] == pytest.approx(fd, rel=2e-4, abs=1e-8)

    def test_mirror_anchor_tightness(self):
        rng = np.random.default_rng(22)
        n, d, K = 4, 2, 3
        X = sp.csr_matrix(rng.normal(size=(n, d)))
        ds = type("D", (), {})()
        ds.X, ds.n, ds.d = X, n, d
        ds.y = smoothed_expert_rows(rng.integers(0, K, n), K, eps=0.1)
        model = SoftmaxLinearModel(K)
        loss = MulticlassKLLoss()
        theta_t = rng.normal(size=model.dim(d)) * 0.2
        idx = [1, 3]
        surr = build_stochastic(loss, model, ds, theta_t, idx, 0.5, "entropy-mirror")
        z = model.forward(theta_t, ds.X, idx)
        batch_loss = float(np.mean(loss.values(z, ds.y[idx])))
        assert surr.value(theta_t) == pytest.approx(batch_loss, abs=1e-12)
