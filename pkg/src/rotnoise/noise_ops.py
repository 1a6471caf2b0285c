"""Train/eval noise operators: rotation noise and the dropout family.

Every operator is a stochastic map in train mode and the identity in eval
mode, and satisfies the zero-center contract E[noised | x] = x.  Operators
expose a fixed-realization interface (sample_state / apply_state /
backprop_state) so a training loop can replay the exact same noise during
its backward pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rotation import (
    AngleDistribution,
    apply_featuremap,
    fixed_direction_sequence,
    gaussian_tangent,
    keep_rate_for,
    sample_batch_rotation,
    uniform_angle_for_keep_rate,
)

__all__ = [
    "NoiseOp",
    "BernoulliDropout",
    "GaussianDropout",
    "Uout",
    "RotationOut",
    "Centered",
    "NoiseOpSpec",
    "make_noise_op",
    "apply_spec",
    "bernoulli_dropout",
    "gaussian_dropout",
    "uout",
    "centered",
]


class NoiseOp:
    """Base class; subclasses implement the train-mode transform."""

    def sample_state(self, x: np.ndarray, rng: np.random.Generator):
        raise NotImplementedError

    def apply_state(self, x: np.ndarray, state) -> np.ndarray:
        raise NotImplementedError

    def backprop_state(self, g: np.ndarray, state) -> np.ndarray:
        """Pull a gradient back through the fixed-realization linear map."""
        raise NotImplementedError

    @property
    def equivalent_keep_rate(self) -> float:
        raise NotImplementedError

    def __call__(self, x, rng: np.random.Generator | None = None, mode: str = "train") -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if mode == "eval":
            return x
        if mode != "train":
            raise ValueError(f"unknown mode: {mode!r}")
        if rng is None:
            raise ValueError("train mode needs a random generator")
        return self.apply_state(x, self.sample_state(x, rng))


class _Multiplicative(NoiseOp):
    """Common machinery for elementwise x * m noise with E[m] = 1."""

    def _multiplier(self, shape, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def sample_state(self, x, rng):
        return self._multiplier(np.shape(x), rng)

    def apply_state(self, x, state):
        return np.asarray(x, dtype=np.float64) * state

    def backprop_state(self, g, state):
        return np.asarray(g, dtype=np.float64) * state


@dataclass
class BernoulliDropout(_Multiplicative):
    """Inverted dropout: drop with probability 1 - p, scale survivors by 1/p."""

    keep_rate: float

    def __post_init__(self):
        if not 0.0 < self.keep_rate <= 1.0:
            raise ValueError("keep rate must lie in (0, 1]")

    def _multiplier(self, shape, rng):
        return (rng.random(shape) < self.keep_rate) / self.keep_rate

    @property
    def equivalent_keep_rate(self) -> float:
        return self.keep_rate


@dataclass
class GaussianDropout(_Multiplicative):
    """x * (1 + eps) with eps ~ N(0, sigma2), independent per coordinate."""

    sigma2: float

    def __post_init__(self):
        if self.sigma2 < 0.0:
            raise ValueError("multiplier variance must be nonnegative")

    def _multiplier(self, shape, rng):
        return 1.0 + np.sqrt(self.sigma2) * rng.standard_normal(shape)

    @property
    def equivalent_keep_rate(self) -> float:
        return 1.0 / (1.0 + self.sigma2)


@dataclass
class Uout(_Multiplicative):
    """x * (1 + r) with r ~ Unif[-beta, beta]; multiplier variance beta^2 / 3."""

    beta: float

    def __post_init__(self):
        if self.beta < 0.0:
            raise ValueError("uniform noise half-width must be nonnegative")

    def _multiplier(self, shape, rng):
        return 1.0 + rng.uniform(-self.beta, self.beta, shape)

    @property
    def equivalent_keep_rate(self) -> float:
        return 1.0 / (1.0 + self.beta**2 / 3.0)


@dataclass
class RotationOut(NoiseOp):
    """Random pair-rotation noise, one fresh realization per batch row."""

    angles: AngleDistribution

    def sample_state(self, x, rng):
        x = np.asarray(x)
        if x.ndim == 1:
            return sample_batch_rotation(1, x.shape[0], self.angles, rng)
        if x.ndim == 2:
            return sample_batch_rotation(x.shape[0], x.shape[1], self.angles, rng)
        raise ValueError("dense rotation noise expects a vector or an (n, D) batch")

    def apply_state(self, x, state):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return state.apply(x[None])[0]
        return state.apply(x)

    def backprop_state(self, g, state):
        g = np.asarray(g, dtype=np.float64)
        if g.ndim == 1:
            return state.apply_transpose(g[None])[0]
        return state.apply_transpose(g)

    @property
    def equivalent_keep_rate(self) -> float:
        return keep_rate_for(self.angles)


@dataclass
class Centered(NoiseOp):
    """Apply the wrapped op to mean-removed rows, then restore the mean.

    The centering estimate is the per-feature batch mean, recomputed on
    every call, so the regularization strength is independent of where the
    features happen to sit.
    """

    inner: NoiseOp

    def _mean(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[0] < 2:
            raise ValueError("centered variant requires batch statistics")
        return x.mean(axis=0)

    def sample_state(self, x, rng):
        return self.inner.sample_state(np.asarray(x, dtype=np.float64), rng)

    def apply_state(self, x, state):
        x = np.asarray(x, dtype=np.float64)
        mean = self._mean(x)
        return self.inner.apply_state(x - mean, state) + mean

    def backprop_state(self, g, state):
        # y = A(x - mean(x)) + mean(x) for the fixed linear map A, so the
        # pullback is A^T g recentered plus the mean of g.
        g = np.asarray(g, dtype=np.float64)
        a = self.inner.backprop_state(g, state)
        return a - a.mean(axis=0) + g.mean(axis=0)

    @property
    def equivalent_keep_rate(self) -> float:
        return self.inner.equivalent_keep_rate


# ---------------------------------------------------------------------------
# functional forms


def bernoulli_dropout(x, keep_rate: float, rng: np.random.Generator) -> np.ndarray:
    return BernoulliDropout(keep_rate)(x, rng)


def gaussian_dropout(x, sigma2: float, rng: np.random.Generator) -> np.ndarray:
    return GaussianDropout(sigma2)(x, rng)


def uout(x, beta: float, rng: np.random.Generator) -> np.ndarray:
    return Uout(beta)(x, rng)


def centered(op: NoiseOp, x_batch, rng: np.random.Generator) -> np.ndarray:
    return Centered(op)(x_batch, rng)


# ---------------------------------------------------------------------------
# declarative construction


_KINDS = ("rotation", "rotation-block", "bernoulli-dropout", "gaussian-dropout", "uout")
_PLACEMENTS = ("dense", "featuremap", "sequence")
_ANGLE_KINDS = ("gaussian-tangent", "uniform-angle", "fixed")


@dataclass(frozen=True)
class NoiseOpSpec:
    """Declarative description of a noise op, constructible from config.

    ``strength`` is the keep rate p for the bernoulli and rotation kinds
    (rotation tangents are matched through (1 - p)/p = E tan^2 theta using
    ``angle_kind``), the multiplier variance sigma^2 for gaussian dropout,
    and the half-width beta for uout.
    """

    kind: str
    strength: float
    centered: bool = False
    placement: str = "dense"
    angle_kind: str = "gaussian-tangent"
    block: tuple[int, int] | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown noise kind: {self.kind!r}")
        if self.placement not in _PLACEMENTS:
            raise ValueError(f"unknown placement: {self.placement!r}")
        if self.angle_kind not in _ANGLE_KINDS:
            raise ValueError(f"unknown angle kind: {self.angle_kind!r}")
        if self.kind == "rotation-block" and self.placement != "featuremap":
            raise ValueError("block rotation is only defined on feature maps")
        if self.kind == "rotation-block" and self.block is None:
            raise ValueError("block rotation requires block extents (bh, bw)")
        if self.kind in ("rotation", "rotation-block", "bernoulli-dropout"):
            if not 0.0 < self.strength <= 1.0:
                raise ValueError("keep rate must lie in (0, 1]")
        elif self.strength < 0.0:
            raise ValueError("noise strength must be nonnegative")

    def angle_distribution(self) -> AngleDistribution:
        if self.kind not in ("rotation", "rotation-block"):
            raise ValueError("only rotation kinds carry an angle distribution")
        lam = (1.0 - self.strength) / self.strength
        if lam == 0.0:
            # keep rate 1 is the no-noise limit: identity rotations
            return AngleDistribution("fixed", 0.0)
        if self.angle_kind == "gaussian-tangent":
            return gaussian_tangent(np.sqrt(lam))
        if self.angle_kind == "uniform-angle":
            return uniform_angle_for_keep_rate(self.strength)
        return AngleDistribution("fixed", float(np.arctan(np.sqrt(lam))))


def make_noise_op(spec: NoiseOpSpec) -> NoiseOp:
    """Instantiate the dense-placement operator described by ``spec``."""
    if spec.placement != "dense":
        raise ValueError(
            "only dense placement builds a NoiseOp; use apply_featuremap or "
            "fixed_direction_sequence for the structured placements"
        )
    if spec.kind == "bernoulli-dropout":
        op: NoiseOp = BernoulliDropout(spec.strength)
    elif spec.kind == "gaussian-dropout":
        op = GaussianDropout(spec.strength)
    elif spec.kind == "uout":
        op = Uout(spec.strength)
    elif spec.kind == "rotation":
        op = RotationOut(spec.angle_distribution())
    else:
        raise ValueError("block rotation is only defined on feature maps")
    return Centered(op) if spec.centered else op


def apply_spec(spec: NoiseOpSpec, x, rng: np.random.Generator, mode: str = "train"):
    """Run any placement of ``spec`` on ``x`` (feature maps and sequences too)."""
    if mode == "eval":
        return x if spec.placement == "sequence" else np.asarray(x, dtype=np.float64)
    if spec.placement == "dense":
        return make_noise_op(spec)(x, rng, mode)
    if spec.placement == "featuremap":
        if spec.kind in ("rotation", "rotation-block"):
            return apply_featuremap(x, spec.angle_distribution(), rng, block=spec.block)
        return make_noise_op(NoiseOpSpec(spec.kind, spec.strength))(x, rng, mode)
    if spec.kind == "rotation":
        return fixed_direction_sequence(x, spec.angle_distribution(), rng)
    op = make_noise_op(NoiseOpSpec(spec.kind, spec.strength))
    return [op(step, rng, mode) for step in x]
