"""Gaussian-process residual models: kernel, likelihood, posterior, fitting."""

import numpy as np
import pytest

from terranav import dynamics, gp
from terranav.dynamics import Attitude, ControlInput, VehicleParams, VehicleState

P = VehicleParams()


def random_dataset(rng, n, scale=0.05):
    X = rng.normal(size=(n, gp.INPUT_DIM))
    Y = rng.normal(scale=scale, size=(n, gp.OUTPUT_DIM))
    return gp.GpDataset(X, Y)


class TestKernel:
    def test_symmetry_and_diag(self):
        rng = np.random.default_rng(0)
        X = rng.normal(size=(20, gp.INPUT_DIM))
        ls = rng.uniform(0.5, 2.0, gp.INPUT_DIM)
        K = gp.kernel(X, X, 1.7, ls)
        np.testing.assert_allclose(K, K.T, atol=1e-14)
        np.testing.assert_allclose(np.diag(K), 1.7, atol=1e-12)

    def test_positive_semidefinite(self):
        rng = np.random.default_rng(1)
        X = rng.normal(size=(30, gp.INPUT_DIM))
        K = gp.kernel(X, X, 2.0, np.ones(gp.INPUT_DIM))
        w = np.linalg.eigvalsh(K)
        assert w.min() > -1e-9

    def test_known_value(self):
        a = np.zeros((1, gp.INPUT_DIM))
        b = np.ones((1, gp.INPUT_DIM))
        K = gp.kernel(a, b, 1.0, np.full(gp.INPUT_DIM, 2.0))
        assert K[0, 0] == pytest.approx(np.exp(-0.5 * gp.INPUT_DIM / 4.0), rel=1e-12)


class TestClosedFormPosterior:
    def test_two_point_posterior(self):
        # oracle: explicit 2x2 linear algebra for a two-sample GP
        sigma2, noise2 = 1.3, 0.05
        ls = np.full(gp.INPUT_DIM, 1.5)
        rng = np.random.default_rng(2)
        X = rng.normal(size=(2, gp.INPUT_DIM))
        Y = rng.normal(size=(2, gp.OUTPUT_DIM))
        model = gp.GpModel(
            sigma2=np.full(3, sigma2), lengthscales=np.tile(ls, (3, 1)),
            noise2=np.full(3, noise2), X=X, Y=Y, log_likelihoods=np.zeros(3),
        )
        xq = rng.normal(size=gp.INPUT_DIM)
        k12 = sigma2 * np.exp(-0.5 * np.sum(((X[0] - X[1]) / ls) ** 2))
        Kmat = np.array([[sigma2 + noise2, k12], [k12, sigma2 + noise2]])
        ks = np.array([
            sigma2 * np.exp(-0.5 * np.sum(((xq - X[0]) / ls) ** 2)),
            sigma2 * np.exp(-0.5 * np.sum(((xq - X[1]) / ls) ** 2)),
        ])
        Kinv = np.linalg.inv(Kmat)
        mean, var = model.predict(xq)
        for d in range(gp.OUTPUT_DIM):
            assert mean[d] == pytest.approx(float(ks @ Kinv @ Y[:, d]), abs=1e-9)
            assert var[d] == pytest.approx(float(sigma2 - ks @ Kinv @ ks), abs=1e-9)

    def test_interpolates_training_data_at_low_noise(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(10, gp.INPUT_DIM))
        Y = rng.normal(size=(10, gp.OUTPUT_DIM))
        model = gp.GpModel(
            sigma2=np.ones(3), lengthscales=np.ones((3, gp.INPUT_DIM)),
            noise2=np.full(3, 1e-10), X=X, Y=Y, log_likelihoods=np.zeros(3),
        )
        mean, var = model.predict(X[4])
        np.testing.assert_allclose(mean, Y[4], atol=1e-4)
        assert np.all(var < 1e-4)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(4)
        X = rng.normal(size=(40, gp.INPUT_DIM))
        Y = rng.normal(scale=0.1, size=(40, gp.OUTPUT_DIM))
        model = gp.GpModel(
            sigma2=np.full(3, 0.3), lengthscales=np.full((3, gp.INPUT_DIM), 1.2),
            noise2=np.full(3, 1e-3), X=X, Y=Y, log_likelihoods=np.zeros(3),
        )
        Q = rng.normal(size=(25, gp.INPUT_DIM))
        bm, bv = model.predict_batch(Q)
        for i in range(25):
            sm, sv = model.predict(Q[i])
            # batch path runs in single precision
            np.testing.assert_allclose(bm[i], sm, atol=2e-5)
            np.testing.assert_allclose(bv[i], sv, atol=2e-5)

    def test_variance_nonnegative(self):
        rng = np.random.default_rng(5)
        X = rng.normal(size=(60, gp.INPUT_DIM))
        model = gp.GpModel(
            sigma2=np.full(3, 1e-6), lengthscales=np.ones((3, gp.INPUT_DIM)),
            noise2=np.full(3, 1e-9), X=X,
            Y=np.zeros((60, gp.OUTPUT_DIM)), log_likelihoods=np.zeros(3),
        )
        _, var = model.predict_batch(X)
        assert np.all(var >= 0.0)


class TestLikelihood:
    def test_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(6)
        X = rng.normal(size=(25, gp.INPUT_DIM))
        y = rng.normal(size=25)
        theta = rng.uniform(-1.0, 1.0, 2 + gp.INPUT_DIM)
        lml, grad = gp.log_marginal_likelihood(theta, X, y)
        eps = 1e-6
        for j in range(len(theta)):
            tp = theta.copy(); tp[j] += eps
            tm = theta.copy(); tm[j] -= eps
            fd = (gp.log_marginal_likelihood(tp, X, y)[0]
                  - gp.log_marginal_likelihood(tm, X, y)[0]) / (2 * eps)
            assert grad[j] == pytest.approx(fd, rel=1e-5, abs=1e-8)

    def test_value_against_direct_formula(self):
        rng = np.random.default_rng(7)
        X = rng.normal(size=(12, gp.INPUT_DIM))
        y = rng.normal(size=12)
        theta = np.concatenate([[0.2], np.full(gp.INPUT_DIM, 0.1), [-2.0]])
        lml, _ = gp.log_marginal_likelihood(theta, X, y)
        K = gp.kernel(X, X, np.exp(0.2), np.exp(np.full(gp.INPUT_DIM, 0.1)))
        K += np.exp(-2.0) * np.eye(12)
        expected = (-0.5 * y @ np.linalg.solve(K, y)
                    - 0.5 * np.linalg.slogdet(K)[1]
                    - 0.5 * 12 * np.log(2 * np.pi))
        assert lml == pytest.approx(expected, rel=1e-10)


class TestFit:
    def test_improves_on_initial_guess(self):
        rng = np.random.default_rng(8)
        data = random_dataset(rng, 60)
        theta0 = np.zeros(2 + gp.INPUT_DIM)
        model = gp.fit(data, init=theta0, iters=30, n_starts=2, seed=0)
        lml0 = gp.log_marginal_likelihood(theta0, data.inputs, data.outputs[:, 0])[0]
        assert model.log_likelihoods[0] >= lml0 - 1e-9

    def test_train_cap(self):
        rng = np.random.default_rng(9)
        data = random_dataset(rng, gp.TRAIN_CAP + 50)
        model = gp.fit(data, iters=2, n_starts=1)
        assert model.X.shape[0] == gp.TRAIN_CAP

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            gp.fit(gp.GpDataset(np.empty((0, 7)), np.empty((0, 3))))


class TestResiduals:
    def test_zero_for_nominal_log(self):
        # a log generated by the nominal model has identically zero residuals
        state = VehicleState(0.0, 0.0, 0.1, 2.0, 0.0, 0.05)
        att = Attitude(0.0, 0.0, 0.1)
        u = ControlInput(0.05, 0.3)
        log = [(state, u, att)]
        for _ in range(10):
            state = dynamics.step(state, u, att, P, 0.1,
                                  substeps=dynamics.DEFAULT_SUBSTEPS)
            log.append((state, u, att))
        data = gp.residual_labels(log, P, 0.1)
        np.testing.assert_allclose(data.outputs, 0.0, atol=1e-12)
        assert len(data) == 10

    def test_detects_velocity_offset(self):
        state = VehicleState(v_x_b=2.0)
        att = Attitude(0.0, 0.0, 0.0)
        u = ControlInput(0.0, 0.0)
        nxt = dynamics.step(state, u, att, P, 0.1, substeps=dynamics.DEFAULT_SUBSTEPS)
        biased = VehicleState(nxt.x_w, nxt.y_w, nxt.yaw,
                              nxt.v_x_b - 0.07, nxt.v_y_b, nxt.omega_z_b)
        data = gp.residual_labels([(state, u, att), (biased, u, att)], P, 0.1)
        assert data.outputs[0, 0] == pytest.approx(-0.07, abs=1e-12)

    def test_rejects_short_and_nonuniform_logs(self):
        s = VehicleState()
        entry = (s, ControlInput(), Attitude(0, 0, 0))
        with pytest.raises(gp.IngestionError):
            gp.residual_labels([entry], P, 0.1)
        with pytest.raises(gp.IngestionError):
            gp.residual_labels([entry, entry, entry], P, 0.1, times=[0.0, 0.1, 0.25])

    def test_gp_input_layout(self):
        x = gp.gp_input(VehicleState(9.0, 9.0, 9.0, 1.0, 2.0, 3.0),
                        ControlInput(0.1, 0.2), Attitude(0.3, 0.4, 9.0))
        np.testing.assert_array_equal(x, [1.0, 2.0, 3.0, 0.3, 0.4, 0.1, 0.2])


class TestRegistry:
    def test_roundtrip(self, tmp_path, tiny_registry):
        path = tmp_path / "registry.json"
        tiny_registry.save(path)
        loaded = gp.GpRegistry.load(path)
        assert loaded.labels == tiny_registry.labels
        for lbl in tiny_registry.labels:
            a, b = tiny_registry[lbl], loaded[lbl]
            np.testing.assert_array_equal(a.X, b.X)
            np.testing.assert_array_equal(a.Y, b.Y)
            np.testing.assert_array_equal(a.lengthscales, b.lengthscales)
            rng = np.random.default_rng(0)
            q = rng.normal(size=gp.INPUT_DIM)
            np.testing.assert_allclose(a.predict(q)[0], b.predict(q)[0], atol=1e-14)

    def test_missing_label(self, tiny_registry):
        assert tiny_registry.covers(["grass", "mud"])
        assert not tiny_registry.covers(["grass", "gravel"])
        with pytest.raises(KeyError):
            tiny_registry["gravel"]

    def test_sample_uses_posterior(self, tiny_registry):
        rng = np.random.default_rng(0)
        q = rng.normal(size=gp.INPUT_DIM)
        model = tiny_registry["grass"]
        draws = np.array([model.sample(q, np.random.default_rng(k)) for k in range(200)])
        mean, var = model.predict(q)
        np.testing.assert_allclose(draws.mean(axis=0), mean, atol=4 * np.sqrt(var.max() / 200) + 1e-6)


class TestValidation:
    def test_dataset_shapes(self):
        with pytest.raises(ValueError):
            gp.GpDataset(np.zeros((3, 6)), np.zeros((3, 3)))
        with pytest.raises(ValueError):
            gp.GpDataset(np.zeros((3, 7)), np.zeros((2, 3)))

    def test_positive_hyperparameters(self):
        with pytest.raises(ValueError):
            gp.GpModel(
                sigma2=np.array([1.0, -1.0, 1.0]),
                lengthscales=np.ones((3, gp.INPUT_DIM)),
                noise2=np.ones(3), X=np.zeros((2, gp.INPUT_DIM)),
                Y=np.zeros((2, gp.OUTPUT_DIM)), log_likelihoods=np.zeros(3),
            )
