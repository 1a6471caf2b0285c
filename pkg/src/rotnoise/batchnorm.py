"""Batch-normalization statistics: variance shift and small-batch effects.

Two families of checks live here.  The first quantifies the train/test
variance mismatch that multiplicative noise placed around a weight layer
induces in the running statistics a normalization layer records.  The
second treats the train-mode normalized value as a random function of the
test-mode one: averaging over the batchmates that share the normalizer
gives a bent, saturating expectation curve that an odd polynomial can
correct, plus a noise floor that shrinks as the batch grows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "BatchNormState",
    "bn_train_forward",
    "bn_test_forward",
    "cross_normalize",
    "DISTRIBUTIONS",
    "standardized_sampler",
    "train_statistic_samples",
    "NonlinearityCurve",
    "mc_nonlinearity_curve",
    "PolyFit",
    "fit_poly_correction",
    "evaluate_odd_poly",
    "default_poly_grid",
    "noise_budget",
    "ShiftReport",
    "variance_shift",
    "sample_sphere_rows",
]


# ---------------------------------------------------------------------------
# batch normalization forward passes


@dataclass
class BatchNormState:
    """Running statistics and affine parameters of one normalization layer."""

    running_mean: np.ndarray
    running_var: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    eps: float = 1e-5
    momentum: float = 0.1
    n_batches: int = 0

    def __post_init__(self):
        for name in ("running_mean", "running_var", "gamma", "beta"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.any(self.running_var < 0):
            raise ValueError("running variance must be nonnegative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if not 0.0 < self.momentum <= 1.0:
            raise ValueError("momentum must lie in (0, 1]")

    @classmethod
    def initial(cls, width: int, eps: float = 1e-5, momentum: float = 0.1) -> "BatchNormState":
        return cls(
            running_mean=np.zeros(width),
            running_var=np.ones(width),
            gamma=np.ones(width),
            beta=np.zeros(width),
            eps=eps,
            momentum=momentum,
        )


def bn_train_forward(x, state: BatchNormState, update: bool = True) -> np.ndarray:
    """Normalize a (B, D) batch with its own statistics.

    The batch variance uses the 1/B normalizer; the running variance is
    updated with the B/(B-1) debiased value through an exponential moving
    average of the configured momentum.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("batch normalization needs a batch of at least 2")
    b = x.shape[0]
    mu = x.mean(axis=0)
    var = np.mean((x - mu) ** 2, axis=0)
    out = state.gamma * (x - mu) / np.sqrt(var + state.eps) + state.beta
    if update:
        m = state.momentum
        state.running_mean = (1 - m) * state.running_mean + m * mu
        state.running_var = (1 - m) * state.running_var + m * var * b / (b - 1)
        state.n_batches += 1
    return out


def bn_test_forward(x, state: BatchNormState, correction=None) -> np.ndarray:
    """Normalize with running statistics; optionally correct the output.

    correction
        ``None``                    : plain affine normalization.
        ``("scale-variance", p)``   : divide the running variance by 1/p,
        undoing the fixed 1/p variance shift of centered pre-norm noise.
        ``("poly", coeffs)``        : map the normalized value through the
        odd polynomial before applying gamma/beta, compensating the bent
        small-batch expectation curve.
    """
    x = np.asarray(x, dtype=np.float64)
    if state.n_batches == 0:
        raise ValueError("running statistics are unpopulated; run training batches first")
    var = state.running_var
    if correction is not None:
        tag = correction[0]
        if tag == "scale-variance":
            keep_rate = float(correction[1])
            if not 0.0 < keep_rate <= 1.0:
                raise ValueError("keep rate must lie in (0, 1]")
            var = var * keep_rate
        elif tag != "poly":
            raise ValueError(f"unknown test-mode correction: {tag!r}")
    xhat = (x - state.running_mean) / np.sqrt(var + state.eps)
    if correction is not None and correction[0] == "poly":
        xhat = evaluate_odd_poly(np.asarray(correction[1], dtype=np.float64), xhat)
    return state.gamma * xhat + state.beta


def cross_normalize(x, gamma, beta, eps: float = 1e-5, normalizer: str = "b-1") -> np.ndarray:
    """Normalize each element by the statistics of the rest of its batch.

    The leave-one-out mean and variance are independent of the element
    itself, which makes the expected output exactly affine in the input.
    ``normalizer`` selects the divisor of the leave-one-out sums: "b-1"
    (the count of the remaining elements, default) or "b" (batch size).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 3:
        raise ValueError("cross-normalization needs a batch of at least 3")
    b = x.shape[0]
    if normalizer == "b-1":
        denom = b - 1.0
    elif normalizer == "b":
        denom = float(b)
    else:
        raise ValueError("normalizer must be 'b-1' or 'b'")
    # masked sums keep the leave-one-out statistics bit-exactly independent
    # of the held-out element (its contribution is an exact 0 term)
    hold = 1.0 - np.eye(b)
    loo_sum = hold @ x
    loo_sq = hold @ x**2
    mu = loo_sum / denom
    # sum_{k != i} (x_k - mu_i)^2 / denom, expanded through the two sums
    var = loo_sq / denom - 2 * mu * loo_sum / denom + mu**2 * (b - 1) / denom
    return gamma * (x - mu) / np.sqrt(var + eps) + beta


# ---------------------------------------------------------------------------
# source distributions, standardized to mean 0 and variance 1


def _gaussian(size, rng):
    return rng.standard_normal(size)


def _uniform(size, rng):
    return (rng.random(size) - 0.5) * np.sqrt(12.0)


_SQ_MEAN, _SQ_STD = 1.0 / 3.0, np.sqrt(1.0 / 5.0 - 1.0 / 9.0)
_CU_MEAN, _CU_STD = 1.0 / 4.0, np.sqrt(1.0 / 7.0 - 1.0 / 16.0)


def _uniform_square(size, rng):
    return (rng.random(size) ** 2 - _SQ_MEAN) / _SQ_STD


def _uniform_cube(size, rng):
    return (rng.random(size) ** 3 - _CU_MEAN) / _CU_STD


def _laplace(size, rng):
    return rng.laplace(size=size) / np.sqrt(2.0)


DISTRIBUTIONS = {
    "gaussian": _gaussian,
    "uniform": _uniform,
    "uniform-square": _uniform_square,
    "uniform-cube": _uniform_cube,
    "laplace": _laplace,
}


def standardized_sampler(dist: str):
    try:
        return DISTRIBUTIONS[dist]
    except KeyError:
        raise ValueError(f"unknown source distribution: {dist!r}") from None


# ---------------------------------------------------------------------------
# nonlinearity of the train-mode statistic


def train_statistic_samples(
    x: float, batch_size: int, n: int, draw, rng: np.random.Generator
) -> np.ndarray:
    """Draws of the train-mode normalized value of a held point ``x``.

    The batchmates are sampled fresh; the statistic is evaluated through
    the exact identity

        (x - mu_B) / sigma_B
          = sqrt((B-1)/B) * (x - m) / sqrt(s^2 + (x - m)^2 / B)

    where m and s^2 are the mean and variance of the B - 1 companions.
    On the standardized scale the test-mode output of ``x`` is ``x``
    itself, so these draws are directly comparable to the abscissa.
    """
    b = batch_size
    if b < 2:
        raise ValueError("batch size must be at least 2")
    z = draw((n, b - 1), rng)
    m = z.mean(axis=1)
    s2 = np.mean((z - m[:, None]) ** 2, axis=1)
    delta = x - m
    return np.sqrt((b - 1.0) / b) * delta / np.sqrt(s2 + delta**2 / b)


@dataclass(frozen=True)
class NonlinearityCurve:
    """Conditional mean/variance of the train statistic on a test grid."""

    dist: str
    batch_size: int
    x_test: np.ndarray
    f_expect: np.ndarray
    f_var: np.ndarray
    stderr: np.ndarray


def default_poly_grid() -> np.ndarray:
    """Fit window for the degree-7 correction, [-3.3, 3.3] in steps of 0.05."""
    return np.arange(-3.3, 3.3 + 1e-9, 0.05)


def mc_nonlinearity_curve(
    dist: str,
    batch_size: int,
    rng: np.random.Generator,
    grid=None,
    n_mc: int = 100_000,
) -> NonlinearityCurve:
    """Estimate the expectation and variance curves of the train statistic."""
    draw = standardized_sampler(dist)
    grid = default_poly_grid() if grid is None else np.asarray(grid, dtype=np.float64)
    f_expect = np.empty_like(grid)
    f_var = np.empty_like(grid)
    stderr = np.empty_like(grid)
    for k, x in enumerate(grid):
        f = train_statistic_samples(float(x), batch_size, n_mc, draw, rng)
        f_expect[k] = f.mean()
        f_var[k] = f.var(ddof=1)
        stderr[k] = f.std(ddof=1) / np.sqrt(n_mc)
    return NonlinearityCurve(dist, batch_size, grid, f_expect, f_var, stderr)


@dataclass(frozen=True)
class PolyFit:
    """Odd-polynomial correction a1 x + a3 x^3 + a5 x^5 + a7 x^7."""

    coeffs: np.ndarray
    rmse: float

    @property
    def a1(self) -> float:
        return float(self.coeffs[0])

    @property
    def a3(self) -> float:
        return float(self.coeffs[1])

    @property
    def a5(self) -> float:
        return float(self.coeffs[2])

    @property
    def a7(self) -> float:
        return float(self.coeffs[3])


def evaluate_odd_poly(coeffs, x) -> np.ndarray:
    coeffs = np.asarray(coeffs, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    return coeffs[0] * x + coeffs[1] * x**3 + coeffs[2] * x**5 + coeffs[3] * x**7


def fit_poly_correction(curve: NonlinearityCurve) -> PolyFit:
    """Least-squares odd polynomial mapping the test grid to the mean curve."""
    t = curve.x_test
    if t.size < 4:
        raise ValueError("need at least 4 grid points to fit 4 coefficients")
    basis = np.stack([t, t**3, t**5, t**7], axis=1)
    coeffs, *_ = np.linalg.lstsq(basis, curve.f_expect, rcond=None)
    resid = basis @ coeffs - curve.f_expect
    return PolyFit(coeffs=coeffs, rmse=float(np.sqrt(np.mean(resid**2))))


def noise_budget(
    batch_size: int,
    dist: str,
    rng: np.random.Generator,
    n_outer: int = 4000,
    n_inner: int = 2000,
) -> tuple[float, float]:
    """Average conditional variance of the train statistic over the data.

    Nested Monte Carlo: outer draws follow the source distribution, inner
    draws estimate the conditional variance of the normalized value with an
    unbiased sample variance.  Returns (estimate, standard error).
    """
    draw = standardized_sampler(dist)
    xs = draw(n_outer, rng)
    v = np.empty(n_outer)
    for k, x in enumerate(xs):
        f = train_statistic_samples(float(x), batch_size, n_inner, draw, rng)
        v[k] = f.var(ddof=1)
    return float(v.mean()), float(v.std(ddof=1) / np.sqrt(n_outer))


# ---------------------------------------------------------------------------
# variance shift of noise placed around a weight layer


def sample_sphere_rows(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Rows drawn uniformly on the unit sphere."""
    w = rng.standard_normal((n, dim))
    return w / np.linalg.norm(w, axis=1, keepdims=True)


@dataclass(frozen=True)
class ShiftReport:
    """Per-unit train/test variances and their shift ratios.

    ``ratio`` is max(train/test, test/train) per unit, so it is always at
    least 1.  ``mc_var_train`` holds simulated train variances when a
    Monte-Carlo cross-check was requested.
    """

    placement: str
    centered: bool
    keep_rate: float
    var_train: np.ndarray
    var_test: np.ndarray
    ratio: np.ndarray
    mc_var_train: np.ndarray | None = None

    @property
    def ratio_mean(self) -> float:
        return float(self.ratio.mean())

    @property
    def ratio_var(self) -> float:
        return float(self.ratio.var(ddof=1))

    @property
    def ratio_max(self) -> float:
        return float(self.ratio.max())


def _moments_of(source) -> tuple[np.ndarray, np.ndarray]:
    if hasattr(source, "mean") and hasattr(source, "cov"):
        return np.asarray(source.mean, dtype=np.float64), np.asarray(source.cov, dtype=np.float64)
    mean, cov = source
    return np.asarray(mean, dtype=np.float64), np.asarray(cov, dtype=np.float64)


def variance_shift(
    placement: str,
    centered: bool,
    keep_rate: float,
    source,
    W: np.ndarray | None = None,
    n_rows: int = 256,
    n_mc: int = 0,
    rng: np.random.Generator | None = None,
) -> ShiftReport:
    """Train/test variance ratios of noise placed before a normalizer.

    placement "dropout-a" puts the noise after the weight layer (right
    before the normalizer), "dropout-b" before the weight layer.  The test
    variance per unit is w Sigma w^T; the train variance adds the
    marginalized noise term, computed in closed form from the source
    moments.  ``centered`` removes the mean from what the noise sees, which
    pins the dropout-a ratio at exactly 1/p for every row.  With
    ``n_mc`` > 0 the train variances are also simulated (the source must
    then support sampling) and reported alongside.
    """
    if placement not in ("dropout-a", "dropout-b"):
        raise ValueError("placement must be 'dropout-a' or 'dropout-b'")
    if not 0.0 < keep_rate < 1.0:
        raise ValueError("keep rate must lie in (0, 1) for a nontrivial shift")
    mean, cov = _moments_of(source)
    eig_floor = np.linalg.eigvalsh(cov)[0]
    if eig_floor < -1e-10 or np.trace(cov) <= 0.0:
        raise ValueError("feature covariance must be positive semidefinite with positive trace")
    if W is None:
        if rng is None:
            raise ValueError("sampling weight rows requires a generator")
        W = sample_sphere_rows(n_rows, mean.size, rng)
    W = np.asarray(W, dtype=np.float64)

    lam = (1.0 - keep_rate) / keep_rate
    second = cov if centered else cov + np.outer(mean, mean)
    var_test = np.einsum("nd,de,ne->n", W, cov, W)
    if placement == "dropout-a":
        var_train = var_test + lam * np.einsum("nd,de,ne->n", W, second, W)
    else:
        var_train = var_test + lam * (W**2) @ np.diag(second)
    ratio = np.maximum(var_train / var_test, var_test / var_train)

    mc_var = None
    if n_mc > 0:
        if rng is None:
            raise ValueError("the Monte-Carlo cross-check requires a generator")
        x = source.sample(int(n_mc), rng)
        if placement == "dropout-a":
            y = x @ W.T
            anchor = (W @ mean) if centered else np.zeros(W.shape[0])
            mask = rng.random(y.shape) < keep_rate
            noised = anchor + (y - anchor) * mask / keep_rate
        else:
            anchor = mean if centered else np.zeros(mean.size)
            mask = rng.random(x.shape) < keep_rate
            noised = (anchor + (x - anchor) * mask / keep_rate) @ W.T
        mc_var = noised.var(axis=0, ddof=1)

    return ShiftReport(placement, centered, keep_rate, var_train, var_test, ratio, mc_var)
