"""Co-adaptation metric and closed-form noise covariance analysis.

Co-adaptation of a feature vector is measured as the entrywise L1 mass of
the off-diagonal covariance relative to the total variance.  The closed
forms below give the conditional and total covariance of dropout and
rotation noise, from which the co-adaptation reduction factors follow;
``verify_reduction`` checks them against Monte-Carlo sample covariances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .noise_ops import BernoulliDropout, NoiseOp, RotationOut
from .rotation import gaussian_tangent

__all__ = [
    "CovStats",
    "CoadaptReport",
    "coadaptation",
    "conditional_noise_covariance",
    "total_variance",
    "reduction_factor",
    "predicted_factor",
    "verify_reduction",
]

_METHODS = ("dropout", "rotation")


@dataclass(frozen=True)
class CovStats:
    """Sample count, mean vector and covariance matrix of a feature batch."""

    n: int
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if self.n < 2:
            raise ValueError("covariance statistics need at least 2 samples")
        if cov.shape != (mean.size, mean.size):
            raise ValueError("covariance shape does not match the mean vector")
        if not np.allclose(cov, cov.T, atol=1e-10):
            raise ValueError("covariance must be symmetric")
        if np.any(np.diag(cov) < -1e-12):
            raise ValueError("covariance diagonal must be nonnegative")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", 0.5 * (cov + cov.T))

    @classmethod
    def from_samples(cls, x) -> "CovStats":
        """Unbiased (n - 1 normalized) statistics of an (n, D) sample."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError("covariance statistics need at least 2 samples")
        return cls(n=x.shape[0], mean=x.mean(axis=0), cov=np.cov(x.T, ddof=1).reshape(x.shape[1], x.shape[1]))

    @property
    def dim(self) -> int:
        return self.mean.size


def _coadaptation_of(cov: np.ndarray) -> float:
    trace = float(np.trace(cov))
    if trace <= 0.0:
        raise ValueError("degenerate covariance")
    off = np.abs(cov - np.diag(np.diag(cov))).sum()
    return float(off / trace)


def coadaptation(stats: CovStats) -> float:
    """Off-diagonal L1 mass of the covariance over its trace.

    Zero for independent coordinates and invariant under positive scalar
    rescaling of the covariance.
    """
    return _coadaptation_of(stats.cov)


def _strength(keep_rate: float) -> float:
    if not 0.0 < keep_rate <= 1.0:
        raise ValueError("keep rate must lie in (0, 1]")
    return (1.0 - keep_rate) / keep_rate


def conditional_noise_covariance(x, method: str, keep_rate: float) -> np.ndarray:
    """Covariance of the noised vector given the input, in closed form.

    dropout:   lam * diag(x x^T)
    rotation:  lam / (D - 1) * (x^T x I - x x^T)
    with lam = (1 - p) / p.  Both have trace lam * x^T x; the rotation form
    additionally carries negative cross terms proportional to -x_i x_j.
    The rotation branch assumes every coordinate is paired (even D); the
    odd-D sampler leaves one coordinate out per draw, which shrinks these
    entries by (D - 1) / D.
    """
    x = np.asarray(x, dtype=np.float64)
    lam = _strength(keep_rate)
    if method == "dropout":
        return lam * np.diag(x**2)
    if method == "rotation":
        d = x.size
        if d < 2:
            raise ValueError("rotation undefined below dimension 2")
        return lam / (d - 1) * (float(x @ x) * np.eye(d) - np.outer(x, x))
    raise ValueError(f"method must be one of {_METHODS}")


def total_variance(stats: CovStats, method: str, keep_rate: float) -> np.ndarray:
    """Unconditional covariance of the noised features, in closed form.

    By the law of total variance this is the input covariance plus the
    expectation of the conditional noise covariance over the inputs.
    """
    lam = _strength(keep_rate)
    sigma = stats.cov
    c = stats.mean
    second = sigma + np.outer(c, c)
    if method == "dropout":
        return sigma + lam * np.diag(np.diag(second))
    if method == "rotation":
        d = stats.dim
        if d < 2:
            raise ValueError("rotation undefined below dimension 2")
        return sigma + lam / (d - 1) * (np.trace(second) * np.eye(d) - second)
    raise ValueError(f"method must be one of {_METHODS}")


def reduction_factor(method: str, keep_rate: float, dim: int) -> float:
    """Co-adaptation reduction for zero-mean inputs.

    dropout scales co-adaptation by p; the strength-matched rotation noise
    scales it by p - (1 - p) / (D - 1), strictly stronger for finite D.
    """
    _strength(keep_rate)
    if method == "dropout":
        return float(keep_rate)
    if method == "rotation":
        if dim < 2:
            raise ValueError("rotation undefined below dimension 2")
        return float(keep_rate - (1.0 - keep_rate) / (dim - 1))
    raise ValueError(f"method must be one of {_METHODS}")


def predicted_factor(stats: CovStats, method: str, keep_rate: float) -> float:
    """co(noised) / co(input) predicted from exact input moments.

    Reduces to ``reduction_factor`` when the mean is zero; with a nonzero
    mean the factor is smaller still because the mean energy inflates the
    noise floor.
    """
    return _coadaptation_of(total_variance(stats, method, keep_rate)) / _coadaptation_of(stats.cov)


@dataclass(frozen=True)
class CoadaptReport:
    """Observed vs predicted co-adaptation reduction for one experiment."""

    method: str
    keep_rate: float
    dim: int
    n_samples: int
    co_input: float
    co_output: float
    observed_factor: float
    predicted_factor: float
    stderr: float
    undefined: bool = False


def _noise_op_for(method: str, keep_rate: float) -> NoiseOp:
    if method == "dropout":
        return BernoulliDropout(keep_rate)
    if method == "rotation":
        return RotationOut(gaussian_tangent(np.sqrt(_strength(keep_rate))))
    raise ValueError(f"method must be one of {_METHODS}")


def verify_reduction(
    source,
    method: str,
    keep_rate: float,
    n_samples: int,
    rng: np.random.Generator,
    center: bool = True,
    n_chunks: int = 20,
) -> CoadaptReport:
    """Monte-Carlo check of the reduction factor on a synthetic source.

    Draws ``n_samples`` vectors, optionally removes the sample mean (the
    zero-center regime the closed-form factors assume), noises each vector
    once, and compares co(output)/co(input) from sample covariances with
    the moment-based prediction.  The standard error is estimated from the
    spread of per-chunk factors over ``n_chunks`` equal splits.

    A source with (numerically) diagonal covariance has co(input) = 0; the
    factor is then undefined and flagged rather than reported as a number.
    """
    x = np.asarray(source.sample(int(n_samples), rng), dtype=np.float64)
    if center:
        x = x - x.mean(axis=0)
    op = _noise_op_for(method, keep_rate)
    noised = op(x, rng)

    cov_in = np.cov(x.T, ddof=1)
    cov_out = np.cov(noised.T, ddof=1)
    co_in = _coadaptation_of(cov_in)
    co_out = _coadaptation_of(cov_out)

    # 0/0 guard: with an exactly diagonal source covariance the factor is
    # undefined and must be flagged, not reported as a number
    if _coadaptation_of(np.asarray(source.cov, dtype=np.float64)) < 1e-12:
        return CoadaptReport(
            method, keep_rate, source.dim, int(n_samples), co_in, co_out,
            observed_factor=float("nan"), predicted_factor=float("nan"),
            stderr=float("nan"), undefined=True,
        )

    mean = np.zeros(source.dim) if center else np.asarray(source.mean, dtype=np.float64)
    stats = CovStats(n=int(n_samples), mean=mean, cov=np.asarray(source.cov, dtype=np.float64))
    predicted = predicted_factor(stats, method, keep_rate)

    bounds = np.linspace(0, x.shape[0], n_chunks + 1, dtype=int)
    factors = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        ci = _coadaptation_of(np.cov(x[lo:hi].T, ddof=1))
        co = _coadaptation_of(np.cov(noised[lo:hi].T, ddof=1))
        factors.append(co / ci)
    stderr = float(np.std(factors, ddof=1) / np.sqrt(n_chunks))

    return CoadaptReport(
        method, keep_rate, source.dim, int(n_samples), co_in, co_out,
        observed_factor=co_out / co_in, predicted_factor=predicted, stderr=stderr,
    )
