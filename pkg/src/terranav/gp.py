"""Per-terrain Gaussian-process models of one-step velocity prediction errors.

Three independent scalar GPs (for e_vx, e_vy, e_omega) share the 7-D input
(v_x, v_y, omega_z, roll, pitch, steer, accel). Squared-exponential kernel
with ARD length-scales; hyperparameters found by maximizing the exact log
marginal likelihood in log-parameter space.
"""

import json
import math
from dataclasses import dataclass

import numpy as np
from numba import njit, prange
from scipy import linalg, optimize

from . import dynamics
from .dynamics import ControlInput, VehicleParams, VehicleState
from .terrain import Attitude

INPUT_DIM = 7
OUTPUT_DIM = 3
MAX_JITTER = 1e-4
TRAIN_CAP = 1000  # exact-GP cost must stay desk-scale


class ConditioningError(RuntimeError):
    """Kernel matrix not positive definite even after maximum jitter."""


class IngestionError(ValueError):
    """Driving log unusable for residual extraction."""


def gp_input(state: VehicleState, u: ControlInput, att: Attitude) -> np.ndarray:
    """Feature vector (v_x, v_y, omega_z, roll, pitch, steer, accel)."""
    return np.array([
        state.v_x_b, state.v_y_b, state.omega_z_b,
        att.roll, att.pitch, u.steer, u.accel,
    ])


@dataclass
class GpDataset:
    inputs: np.ndarray   # (n, 7)
    outputs: np.ndarray  # (n, 3)

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        self.outputs = np.atleast_2d(np.asarray(self.outputs, dtype=float))
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise ValueError("inputs and outputs must have equal length")
        if self.inputs.shape[1] != INPUT_DIM or self.outputs.shape[1] != OUTPUT_DIM:
            raise ValueError("expected 7-D inputs and 3-D outputs")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def kernel(a, b, sigma2: float, lengthscales) -> np.ndarray:
    """Squared-exponential kernel matrix between row sets `a` and `b`."""
    a = np.atleast_2d(a) / lengthscales
    b = np.atleast_2d(b) / lengthscales
    d2 = (
        np.sum(a * a, axis=1)[:, None]
        + np.sum(b * b, axis=1)[None, :]
        - 2.0 * a @ b.T
    )
    return sigma2 * np.exp(-0.5 * np.maximum(d2, 0.0))


def residual_labels(log, params: VehicleParams, dt: float, times=None,
                    substeps: int = dynamics.DEFAULT_SUBSTEPS) -> GpDataset:
    """One-step prediction residuals from a driving log.

    `log` is a sequence of (VehicleState, ControlInput, Attitude) sampled at a
    fixed interval `dt`. Features are taken at step k-1, outputs are
    measured-minus-predicted body velocities at step k. The nominal predictor
    uses the same substepped propagation as the planner rollouts so the
    learned residuals match what the planner adds per step.
    """
    if len(log) < 2:
        raise IngestionError("need at least 2 log entries")
    if times is not None:
        diffs = np.diff(np.asarray(times, dtype=float))
        if np.any(np.abs(diffs - dt) > 1e-9):
            raise IngestionError("log timestamps are not uniform at dt")
    X = np.empty((len(log) - 1, INPUT_DIM))
    Y = np.empty((len(log) - 1, OUTPUT_DIM))
    for k in range(1, len(log)):
        s_prev, u_prev, att_prev = log[k - 1]
        s_meas = log[k][0]
        pred = dynamics.step(s_prev, u_prev, att_prev, params, dt, substeps)
        X[k - 1] = gp_input(s_prev, u_prev, att_prev)
        Y[k - 1] = [
            s_meas.v_x_b - pred.v_x_b,
            s_meas.v_y_b - pred.v_y_b,
            s_meas.omega_z_b - pred.omega_z_b,
        ]
    return GpDataset(X, Y)


def _chol_with_jitter(K: np.ndarray):
    jitter = 0.0
    while True:
        try:
            return linalg.cholesky(K + jitter * np.eye(K.shape[0]), lower=True)
        except linalg.LinAlgError:
            jitter = 1e-10 if jitter == 0.0 else jitter * 10.0
            if jitter > MAX_JITTER:
                raise ConditioningError("kernel matrix not PD after max jitter")


def log_marginal_likelihood(theta: np.ndarray, X: np.ndarray, y: np.ndarray):
    """Exact LML and its gradient w.r.t. log-parameters.

    theta = [log sigma2, log l_1..l_7, log noise2].
    """
    sigma2 = math.exp(theta[0])
    ls = np.exp(theta[1:1 + INPUT_DIM])
    noise2 = math.exp(theta[1 + INPUT_DIM])
    n = X.shape[0]

    Z = X / ls
    d2 = (
        np.sum(Z * Z, axis=1)[:, None]
        + np.sum(Z * Z, axis=1)[None, :]
        - 2.0 * Z @ Z.T
    )
    d2 = np.maximum(d2, 0.0)
    Kse = sigma2 * np.exp(-0.5 * d2)
    Ky = Kse + noise2 * np.eye(n)

    L = _chol_with_jitter(Ky)
    alpha = linalg.cho_solve((L, True), y)
    lml = -0.5 * float(y @ alpha) - float(np.sum(np.log(np.diag(L)))) - 0.5 * n * math.log(2 * math.pi)

    Kinv = linalg.cho_solve((L, True), np.eye(n))
    A = np.outer(alpha, alpha) - Kinv  # dLML/dK = A/2

    grad = np.empty(2 + INPUT_DIM)
    grad[0] = 0.5 * float(np.sum(A * Kse))
    for j in range(INPUT_DIM):
        Dj = (X[:, j][:, None] - X[:, j][None, :]) ** 2 / ls[j] ** 2
        grad[1 + j] = 0.5 * float(np.sum(A * (Kse * Dj)))
    grad[1 + INPUT_DIM] = 0.5 * noise2 * float(np.trace(A))
    return lml, grad


@dataclass
class GpModel:
    """Trained 3-output GP: hyperparameters plus precomputed solves."""

    sigma2: np.ndarray        # (3,)
    lengthscales: np.ndarray  # (3, 7)
    noise2: np.ndarray        # (3,)
    X: np.ndarray             # (n, 7)
    Y: np.ndarray             # (n, 3)
    log_likelihoods: np.ndarray  # (3,) final LML per output

    def __post_init__(self):
        self.sigma2 = np.asarray(self.sigma2, dtype=float)
        self.lengthscales = np.atleast_2d(np.asarray(self.lengthscales, dtype=float))
        self.noise2 = np.asarray(self.noise2, dtype=float)
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        self.log_likelihoods = np.asarray(self.log_likelihoods, dtype=float)
        if np.any(self.sigma2 <= 0) or np.any(self.lengthscales <= 0) or np.any(self.noise2 <= 0):
            raise ValueError("hyperparameters must be positive")
        self._factorize()

    def _factorize(self):
        n = self.X.shape[0]
        self._alpha = np.empty((OUTPUT_DIM, n))
        self._Kinv = np.empty((OUTPUT_DIM, n, n))
        self._Z = np.empty((OUTPUT_DIM, n, INPUT_DIM))
        for d in range(OUTPUT_DIM):
            Ky = kernel(self.X, self.X, self.sigma2[d], self.lengthscales[d])
            Ky[np.diag_indices(n)] += self.noise2[d]
            L = _chol_with_jitter(Ky)
            self._alpha[d] = linalg.cho_solve((L, True), self.Y[:, d])
            self._Kinv[d] = linalg.cho_solve((L, True), np.eye(n))
            self._Z[d] = self.X / self.lengthscales[d]
        # single-precision copies for the batched predict path; the planner
        # queries thousands of points per step and the f32 GEMMs are ~3x faster
        self._Z32 = self._Z.astype(np.float32)
        self._Kinv32 = self._Kinv.astype(np.float32)
        self._alpha32 = self._alpha.astype(np.float32)

    def predict(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance (each 3-vector) at one input.

        Full double precision, unlike the batched path.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        mean = np.empty(OUTPUT_DIM)
        var = np.empty(OUTPUT_DIM)
        for d in range(OUTPUT_DIM):
            ks = kernel(x, self.X, self.sigma2[d], self.lengthscales[d])[0]
            mean[d] = ks @ self._alpha[d]
            var[d] = max(self.sigma2[d] - ks @ self._Kinv[d] @ ks, 0.0)
        return mean, var

    def predict_batch(self, Xq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance for a (B, 7) batch; returns (B, 3) each.

        Computed in single precision (good to ~6 significant digits), which
        keeps large planner batches fast.
        """
        Xq = np.ascontiguousarray(Xq, dtype=np.float32)
        B = Xq.shape[0]
        mean = np.empty((B, OUTPUT_DIM))
        var = np.empty((B, OUTPUT_DIM))
        ls32 = self.lengthscales.astype(np.float32)
        for d in range(OUTPUT_DIM):
            Zq = Xq / ls32[d]
            Zs = self._Z32[d]
            d2 = (
                np.sum(Zq * Zq, axis=1)[:, None]
                + np.sum(Zs * Zs, axis=1)[None, :]
                - 2.0 * Zq @ Zs.T
            )
            Ks = np.float32(self.sigma2[d]) * np.exp(-0.5 * np.maximum(d2, np.float32(0.0)))
            mean[:, d] = Ks @ self._alpha32[d]
            q = np.einsum("bi,bi->b", Ks @ self._Kinv32[d], Ks)
            var[:, d] = np.maximum(self.sigma2[d] - q, 0.0)
        return mean, var

    def sample(self, x, rng: np.random.Generator) -> np.ndarray:
        """One posterior draw (per-dimension marginal) at input x."""
        mean, var = self.predict(x)
        return mean + np.sqrt(var) * rng.standard_normal(OUTPUT_DIM)

    def to_dict(self) -> dict:
        return {
            "sigma2": self.sigma2.tolist(),
            "lengthscales": self.lengthscales.tolist(),
            "noise2": self.noise2.tolist(),
            "X": self.X.tolist(),
            "Y": self.Y.tolist(),
            "log_likelihoods": self.log_likelihoods.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "GpModel":
        return GpModel(
            sigma2=np.array(d["sigma2"]),
            lengthscales=np.array(d["lengthscales"]),
            noise2=np.array(d["noise2"]),
            X=np.array(d["X"]),
            Y=np.array(d["Y"]),
            log_likelihoods=np.array(d["log_likelihoods"]),
        )


def _default_init(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    var_y = max(float(np.var(y)), 1e-6)
    spread = np.std(X, axis=0)
    spread = np.where(spread > 1e-3, spread, 1.0)
    theta = np.empty(2 + INPUT_DIM)
    theta[0] = math.log(var_y)
    theta[1:1 + INPUT_DIM] = np.log(spread)
    theta[1 + INPUT_DIM] = math.log(0.1 * var_y)
    return theta


def fit(
    data: GpDataset,
    init: np.ndarray | None = None,
    iters: int = 80,
    n_starts: int = 3,
    seed: int = 0,
) -> GpModel:
    """Train the 3 scalar GPs by maximizing the exact log marginal likelihood.

    Multi-start L-BFGS in log-parameter space; the best likelihood wins and is
    guaranteed to be >= the likelihood at the initial hyperparameters.
    """
    if len(data) < 1:
        raise ValueError("dataset must be non-empty")
    rng = np.random.default_rng(seed)
    X, Y = data.inputs, data.outputs
    if len(data) > TRAIN_CAP:
        idx = np.sort(rng.choice(len(data), size=TRAIN_CAP, replace=False))
        X, Y = X[idx], Y[idx]

    sigma2 = np.empty(OUTPUT_DIM)
    lengthscales = np.empty((OUTPUT_DIM, INPUT_DIM))
    noise2 = np.empty(OUTPUT_DIM)
    lmls = np.empty(OUTPUT_DIM)
    bounds = [(-12.0, 12.0)] * (2 + INPUT_DIM)

    for d in range(OUTPUT_DIM):
        y = Y[:, d]
        theta0 = np.asarray(init, dtype=float) if init is not None else _default_init(X, y)

        def neg(theta):
            lml, grad = log_marginal_likelihood(theta, X, y)
            return -lml, -grad

        best_theta, best_lml = theta0, log_marginal_likelihood(theta0, X, y)[0]
        starts = [theta0] + [
            theta0 + rng.normal(scale=0.5, size=theta0.shape) for _ in range(n_starts - 1)
        ]
        for start in starts:
            try:
                res = optimize.minimize(
                    neg, start, jac=True, method="L-BFGS-B",
                    bounds=bounds, options={"maxiter": iters},
                )
            except ConditioningError:
                continue
            if -res.fun > best_lml and np.all(np.isfinite(res.x)):
                best_theta, best_lml = res.x, -res.fun

        sigma2[d] = math.exp(best_theta[0])
        lengthscales[d] = np.exp(best_theta[1:1 + INPUT_DIM])
        noise2[d] = math.exp(best_theta[1 + INPUT_DIM])
        lmls[d] = best_lml

    return GpModel(sigma2, lengthscales, noise2, X, Y, lmls)


class GpRegistry:
    """Terrain label -> trained GpModel."""

    def __init__(self, models: dict[str, GpModel]):
        self.models = dict(models)

    def __getitem__(self, label: str) -> GpModel:
        try:
            return self.models[label]
        except KeyError:
            raise KeyError(f"no GP model for terrain label {label!r}") from None

    def __contains__(self, label: str) -> bool:
        return label in self.models

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(sorted(self.models))

    def covers(self, labels) -> bool:
        return all(lbl in self.models for lbl in labels)

    def save(self, path):
        payload = {lbl: m.to_dict() for lbl, m in self.models.items()}
        with open(path, "w") as f:
            json.dump(payload, f)

    @staticmethod
    def load(path) -> "GpRegistry":
        with open(path) as f:
            payload = json.load(f)
        return GpRegistry({lbl: GpModel.from_dict(d) for lbl, d in payload.items()})
