"""Loss families, synthetic tasks, and gradient-regularity constants.

Three loss families with exact analytic gradients:

  linear regression    f(w; x, y) = (x.w - y)^2 / 2
  logistic regression  f(w; x, y) = log(1 + exp(-(2y-1) x.w)),  y in {0, 1}
  two-layer MLP        f(w; x, y) = (a . softplus_b(V x) - y)^2 / 2

The MLP uses a softplus activation (sharpness 5) instead of ReLU so that the
gradient stays Hoelder continuous on bounded domains. Synthetic tasks draw
x ~ N(0, Sigma); regression labels are x.w* plus Gaussian noise, classification
labels are Bernoulli(sigmoid(x.w*)). Linear regression additionally has the
closed-form population risk (w - w*)' Sigma (w - w*) / 2 + noise_std^2 / 2.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import InputError

__all__ = [
    "ModelFamily",
    "Sample",
    "SyntheticTask",
    "LossModel",
    "Shards",
    "SelfBoundingReport",
    "sample_dataset",
    "shard_iid",
    "loss_value",
    "loss_gradient",
    "loss_values",
    "loss_gradients",
    "dataset_risk",
    "worker_risks",
    "population_risk",
    "population_risk_mc",
    "c_alpha_constant",
    "estimate_holder_constant",
    "self_bounding_check",
    "load_dataset_csv",
]


class ModelFamily(str, Enum):
    LINEAR_REGRESSION = "linear_regression"
    LOGISTIC_REGRESSION = "logistic_regression"
    TWO_LAYER_MLP = "two_layer_mlp"


@dataclass
class Sample:
    """One labelled example: feature vector x, scalar label y."""

    x: np.ndarray
    y: float


@dataclass(frozen=True, eq=False)
class SyntheticTask:
    """A data distribution with a generator and, when available, closed-form risk.

    Attributes:
        family: loss family the task is meant to be trained with.
        d_x: feature dimension.
        w_star: ground-truth weights used by the label mechanism.
        feature_cov: symmetric PSD feature covariance Sigma.
        noise_std: label noise level for regression labels.
    """

    family: ModelFamily
    d_x: int
    w_star: np.ndarray
    feature_cov: np.ndarray
    noise_std: float = 0.0

    def __post_init__(self) -> None:
        if self.d_x < 1:
            raise InputError(f"feature dimension must be positive, got {self.d_x}")
        if self.w_star.shape != (self.d_x,):
            raise InputError(
                f"w_star must have shape ({self.d_x},), got {self.w_star.shape}"
            )
        if self.feature_cov.shape != (self.d_x, self.d_x):
            raise InputError("feature covariance shape does not match d_x")
        if np.max(np.abs(self.feature_cov - self.feature_cov.T)) > 1e-12:
            raise InputError("feature covariance must be symmetric")
        if self.noise_std < 0:
            raise InputError("noise_std must be nonnegative")

    @classmethod
    def isotropic(
        cls,
        family: ModelFamily,
        d_x: int,
        w_star: np.ndarray,
        noise_std: float = 0.0,
        feature_variance: float = 1.0,
    ) -> "SyntheticTask":
        return cls(
            family=family,
            d_x=d_x,
            w_star=np.asarray(w_star, dtype=float),
            feature_cov=np.eye(d_x) * feature_variance,
            noise_std=noise_std,
        )


@dataclass(frozen=True)
class LossModel:
    """A loss family plus its declared gradient-regularity constants.

    declared_alpha is the Hoelder exponent of the gradient (1 for the smooth
    linear/logistic losses); declared_L, when set, is an empirical Hoelder
    constant on a bounded ball, estimated by estimate_holder_constant.
    """

    family: ModelFamily
    hidden_width: int = 8
    softplus_sharpness: float = 5.0
    declared_alpha: float = 1.0
    declared_L: float | None = None

    def dim(self, d_x: int) -> int:
        """Model dimension d for feature dimension d_x."""
        if self.family is ModelFamily.TWO_LAYER_MLP:
            return self.hidden_width * d_x + self.hidden_width
        return d_x


@dataclass(frozen=True, eq=False)
class Shards:
    """Per-worker training data: m shards of n samples each, stacked densely.

    xs has shape (m, n, d_x) and ys has shape (m, n); shard k of the total
    N = n*m samples is (xs[k], ys[k]).
    """

    xs: np.ndarray
    ys: np.ndarray

    def __post_init__(self) -> None:
        if self.xs.ndim != 3 or self.ys.shape != self.xs.shape[:2]:
            raise InputError("shard arrays must have shapes (m, n, d_x) and (m, n)")

    @property
    def m(self) -> int:
        return self.xs.shape[0]

    @property
    def n(self) -> int:
        return self.xs.shape[1]

    @property
    def d_x(self) -> int:
        return self.xs.shape[2]

    def worker(self, k: int) -> list[Sample]:
        """Shard k as a list of samples."""
        return [Sample(self.xs[k, i].copy(), float(self.ys[k, i])) for i in range(self.n)]

    def flat(self) -> tuple[np.ndarray, np.ndarray]:
        """All N samples as (N, d_x) features and (N,) labels."""
        return self.xs.reshape(-1, self.d_x), self.ys.reshape(-1)


def _feature_factor(task: SyntheticTask) -> np.ndarray:
    """A matrix F with F F^T = Sigma, tolerating merely PSD covariances."""
    try:
        return np.linalg.cholesky(task.feature_cov)
    except np.linalg.LinAlgError:
        vals, vecs = np.linalg.eigh(task.feature_cov)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _sigmoid(t: np.ndarray) -> np.ndarray:
    # Stable on both tails.
    out = np.empty_like(t, dtype=float)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softplus(t: np.ndarray, sharpness: float) -> np.ndarray:
    return np.logaddexp(0.0, sharpness * t) / sharpness


def draw_dataset_arrays(
    task: SyntheticTask, count: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw `count` i.i.d. samples from the task distribution as arrays.

    Features are drawn first as one (count, d_x) block, then labels, so that
    the first rows of a longer draw coincide with a shorter draw from the
    same generator state.
    """
    factor = _feature_factor(task)
    xs = rng.standard_normal((count, task.d_x)) @ factor.T
    margins = xs @ task.w_star
    if task.family is ModelFamily.LOGISTIC_REGRESSION:
        ys = (rng.random(count) < _sigmoid(margins)).astype(float)
    else:
        ys = margins + task.noise_std * rng.standard_normal(count)
    return xs, ys


def sample_dataset(task: SyntheticTask, count: int, seed: int) -> list[Sample]:
    """Draw `count` i.i.d. samples from the task; deterministic in the seed."""
    if count < 1:
        raise InputError(f"sample count must be >= 1, got {count}")
    xs, ys = draw_dataset_arrays(task, count, np.random.default_rng(seed))
    return [Sample(xs[i], float(ys[i])) for i in range(count)]


def shard_iid(dataset: list[Sample], m: int) -> Shards:
    """Partition a dataset contiguously into m equal shards.

    Raises:
        InputError: if the dataset size is not divisible by m.
    """
    total = len(dataset)
    if m < 1:
        raise InputError(f"worker count must be positive, got {m}")
    if total % m != 0:
        raise InputError(f"dataset size {total} is not divisible by {m} workers")
    n = total // m
    d_x = dataset[0].x.shape[0]
    xs = np.stack([s.x for s in dataset]).reshape(m, n, d_x)
    ys = np.array([s.y for s in dataset], dtype=float).reshape(m, n)
    return Shards(xs=xs, ys=ys)


def _unpack_mlp(model: LossModel, W: np.ndarray, d_x: int) -> tuple[np.ndarray, np.ndarray]:
    h = model.hidden_width
    V = W[:, : h * d_x].reshape(W.shape[0], h, d_x)
    a = W[:, h * d_x :]
    return V, a


def loss_values(model: LossModel, W: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Losses of per-worker weights W (m, d) at per-worker samples (X, Y)."""
    if model.family is ModelFamily.LINEAR_REGRESSION:
        residual = np.einsum("kd,kd->k", X, W) - Y
        return 0.5 * residual**2
    if model.family is ModelFamily.LOGISTIC_REGRESSION:
        margin = (2.0 * Y - 1.0) * np.einsum("kd,kd->k", X, W)
        return np.logaddexp(0.0, -margin)
    V, a = _unpack_mlp(model, W, X.shape[1])
    hidden = _softplus(np.einsum("khd,kd->kh", V, X), model.softplus_sharpness)
    residual = np.einsum("kh,kh->k", a, hidden) - Y
    return 0.5 * residual**2


def loss_gradients(model: LossModel, W: np.ndarray, X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Exact gradients matching loss_values, stacked as an (m, d) matrix."""
    if model.family is ModelFamily.LINEAR_REGRESSION:
        residual = np.einsum("kd,kd->k", X, W) - Y
        return residual[:, None] * X
    if model.family is ModelFamily.LOGISTIC_REGRESSION:
        sign = 2.0 * Y - 1.0
        margin = sign * np.einsum("kd,kd->k", X, W)
        return (-sign * _sigmoid(-margin))[:, None] * X
    beta = model.softplus_sharpness
    V, a = _unpack_mlp(model, W, X.shape[1])
    pre = np.einsum("khd,kd->kh", V, X)
    hidden = _softplus(pre, beta)
    residual = np.einsum("kh,kh->k", a, hidden) - Y
    grad_a = residual[:, None] * hidden
    grad_V = (residual[:, None] * a * _sigmoid(beta * pre))[:, :, None] * X[:, None, :]
    return np.concatenate([grad_V.reshape(W.shape[0], -1), grad_a], axis=1)


def loss_value(model: LossModel, w: np.ndarray, z: Sample) -> float:
    """Loss of weights w at a single sample; nonnegative by construction."""
    _check_dim(model, w, z)
    return float(loss_values(model, w[None, :], z.x[None, :], np.array([z.y]))[0])


def loss_gradient(model: LossModel, w: np.ndarray, z: Sample) -> np.ndarray:
    """Exact analytic gradient of loss_value in w."""
    _check_dim(model, w, z)
    return loss_gradients(model, w[None, :], z.x[None, :], np.array([z.y]))[0]


def _check_dim(model: LossModel, w: np.ndarray, z: Sample) -> None:
    expected = model.dim(z.x.shape[0])
    if w.shape != (expected,):
        raise InputError(f"weights must have shape ({expected},), got {w.shape}")


def dataset_risk(model: LossModel, w: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> float:
    """Mean loss of a single weight vector over a dataset (xs: (N, d_x))."""
    count = xs.shape[0]
    W = np.broadcast_to(w, (count, w.shape[0]))
    return float(np.mean(loss_values(model, W, xs, ys)))


def worker_risks(model: LossModel, W: np.ndarray, shards: Shards) -> np.ndarray:
    """Per-worker empirical risks: mean loss of w_k over shard k, for all k."""
    m, n = shards.m, shards.n
    flat_w = np.repeat(W, n, axis=0)
    losses = loss_values(model, flat_w, shards.xs.reshape(m * n, -1), shards.ys.reshape(-1))
    return losses.reshape(m, n).mean(axis=1)


def population_risk(
    task: SyntheticTask, w: np.ndarray, mc_draws: int = 100_000, seed: int = 0
) -> float:
    """Expected loss under the task distribution.

    Linear regression uses the closed form; other families fall back to a
    Monte-Carlo estimate with `mc_draws` fresh samples.
    """
    if task.family is ModelFamily.LINEAR_REGRESSION:
        delta = w - task.w_star
        return float(0.5 * delta @ task.feature_cov @ delta + 0.5 * task.noise_std**2)
    return population_risk_mc(task, w, mc_draws, seed)[0]


def population_risk_mc(
    task: SyntheticTask, w: np.ndarray, draws: int, seed: int
) -> tuple[float, float]:
    """Monte-Carlo population risk: (mean loss over fresh draws, standard error)."""
    if draws < 2:
        raise InputError(f"Monte-Carlo draws must be >= 2, got {draws}")
    model = LossModel(family=task.family)
    if task.family is ModelFamily.TWO_LAYER_MLP:
        hidden = (w.shape[0]) // (task.d_x + 1)
        model = LossModel(family=task.family, hidden_width=hidden)
    xs, ys = draw_dataset_arrays(task, draws, np.random.default_rng(seed))
    losses = loss_values(model, np.broadcast_to(w, (draws, w.shape[0])), xs, ys)
    return float(losses.mean()), float(losses.std(ddof=1) / np.sqrt(draws))


def c_alpha_constant(alpha: float, L: float, grad_at_zero_sup: float | None = None) -> float:
    """Self-bounding constant relating gradient norms to loss values.

    For a nonnegative loss with (alpha, L)-Hoelder gradient,
    ||grad f(w; z)|| <= c * f(w; z)^(alpha/(1+alpha)) with
    c = (1 + 1/alpha)^(alpha/(1+alpha)) * L^(1/(1+alpha)) for alpha > 0 and
    c = sup_z ||grad f(0; z)|| + L for alpha = 0.
    """
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must lie in [0, 1], got {alpha}")
    if L <= 0:
        raise InputError(f"Hoelder constant L must be positive, got {L}")
    if alpha == 0.0:
        if grad_at_zero_sup is None or grad_at_zero_sup < 0:
            raise InputError("alpha = 0 requires a nonnegative grad_at_zero_sup")
        return grad_at_zero_sup + L
    return (1.0 + 1.0 / alpha) ** (alpha / (1.0 + alpha)) * L ** (1.0 / (1.0 + alpha))


def _ball_points(rng: np.random.Generator, count: int, dim: int, radius: float) -> np.ndarray:
    """Uniform draws from the Euclidean ball of the given radius."""
    directions = rng.standard_normal((count, dim))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(count) ** (1.0 / dim)
    return directions * radii[:, None]


def estimate_holder_constant(
    model: LossModel,
    task: SyntheticTask,
    alpha: float,
    pairs: int,
    radius: float,
    seed: int,
) -> float:
    """Empirical Hoelder constant of the gradient on a ball, via random probes.

    Probes are `pairs` triples (w, w', z) with ||w||, ||w'|| <= radius; the
    estimate is the max of ||grad f(w;z) - grad f(w';z)|| / ||w - w'||^alpha.
    This is a lower bound on the true restricted constant. The probe samples
    are exactly sample_dataset(task, pairs, seed); weight pairs are drawn
    afterwards from the same stream.
    """
    if pairs < 1:
        raise InputError(f"pairs must be >= 1, got {pairs}")
    if radius <= 0:
        raise InputError(f"radius must be positive, got {radius}")
    if not 0.0 <= alpha <= 1.0:
        raise InputError(f"alpha must lie in [0, 1], got {alpha}")
    rng = np.random.default_rng(seed)
    xs, ys = draw_dataset_arrays(task, pairs, rng)
    d = model.dim(task.d_x)
    w_a = _ball_points(rng, pairs, d, radius)
    w_b = _ball_points(rng, pairs, d, radius)
    grad_a = loss_gradients(model, w_a, xs, ys)
    grad_b = loss_gradients(model, w_b, xs, ys)
    gaps = np.linalg.norm(grad_a - grad_b, axis=1)
    dists = np.linalg.norm(w_a - w_b, axis=1)
    keep = dists > 1e-12
    if not np.any(keep):
        return 0.0
    return float(np.max(gaps[keep] / dists[keep] ** alpha))


@dataclass(frozen=True)
class SelfBoundingReport:
    """Outcome of a randomized self-bounding audit."""

    trials: int
    violations: int
    max_ratio: float


def self_bounding_check(
    model: LossModel,
    task: SyntheticTask,
    alpha: float,
    L: float,
    trials: int,
    seed: int,
    radius: float = 5.0,
) -> SelfBoundingReport:
    """Audit ||grad f|| <= c_alpha * f^(alpha/(1+alpha)) on random (w, z) probes.

    Probe samples are sample_dataset(task, trials, seed) and weights are drawn
    uniformly from the radius ball, mirroring estimate_holder_constant so the
    two share probe pools when called with equal counts and seeds. A probe
    violates if the left side exceeds the right by more than 1e-9; max_ratio
    is the largest lhs/rhs over probes with rhs > 0.
    """
    if trials < 1:
        raise InputError(f"trials must be >= 1, got {trials}")
    c = c_alpha_constant(alpha, L, grad_at_zero_sup=0.0 if alpha == 0.0 else None)
    rng = np.random.default_rng(seed)
    xs, ys = draw_dataset_arrays(task, trials, rng)
    ws = _ball_points(rng, trials, model.dim(task.d_x), radius)
    grads = np.linalg.norm(loss_gradients(model, ws, xs, ys), axis=1)
    losses = loss_values(model, ws, xs, ys)
    rhs = c * losses ** (alpha / (1.0 + alpha))
    violations = int(np.sum(grads > rhs + 1e-9))
    positive = rhs > 0
    if np.any(positive):
        max_ratio = float(np.max(grads[positive] / rhs[positive]))
    else:
        max_ratio = 0.0 if np.all(grads <= 1e-12) else float("inf")
    return SelfBoundingReport(trials=trials, violations=violations, max_ratio=max_ratio)


def load_dataset_csv(path: str | Path) -> list[Sample]:
    """Load user-supplied samples from a CSV with header x1,...,xdx,y."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"dataset file not found: {path}")
    with path.open(newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if not header or header[-1].strip() != "y":
            raise InputError("dataset CSV must end its header row with column 'y'")
        d_x = len(header) - 1
        if d_x < 1 or [h.strip() for h in header[:-1]] != [f"x{i+1}" for i in range(d_x)]:
            raise InputError("dataset CSV header must be x1,...,xdx,y")
        samples: list[Sample] = []
        for line, row in enumerate(reader, start=2):
            if len(row) != d_x + 1:
                raise InputError(f"row {line} has {len(row)} fields, expected {d_x + 1}")
            values = [float(v) for v in row]
            samples.append(Sample(np.array(values[:-1]), values[-1]))
    if not samples:
        raise InputError("dataset CSV holds no samples")
    return samples
