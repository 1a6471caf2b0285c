import numpy as np
import pytest

from rotnoise import (
    BernoulliDropout,
    Centered,
    GaussianDropout,
    NoiseOpSpec,
    RotationOut,
    Uout,
    apply_centered,
    apply_spec,
    bernoulli_dropout,
    centered,
    gaussian_dropout,
    gaussian_tangent,
    make_noise_op,
    uout,
)


def mc_conditional_moments(op, x, n, rng):
    """Monte-Carlo conditional mean and covariance of op(x) given x."""
    outs = np.stack([op(x, rng) for _ in range(n)])
    return outs.mean(axis=0), np.cov(outs.T, ddof=1), outs


# ---------------------------------------------------------------------------
# bernoulli dropout


def test_bernoulli_keep_rate_one_is_identity():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(32)
    np.testing.assert_array_equal(bernoulli_dropout(x, 1.0, rng), x)


def test_bernoulli_rejects_keep_rate_zero():
    with pytest.raises(ValueError, match="keep rate"):
        BernoulliDropout(0.0)


def test_bernoulli_moments():
    # mean preserved, per-coordinate conditional variance (1-p)/p
    rng = np.random.default_rng(1)
    p = 0.8
    x = np.ones(10_000)
    out = bernoulli_dropout(x, p, rng)
    assert abs(out.mean() - 1.0) < 3 * out.std(ddof=1) / np.sqrt(x.size)
    var = np.mean((out - 1.0) ** 2)
    assert var == pytest.approx((1 - p) / p, rel=0.1)


# ---------------------------------------------------------------------------
# gaussian dropout


def test_gaussian_zero_variance_is_identity():
    rng = np.random.default_rng(2)
    x = rng.standard_normal(16)
    np.testing.assert_array_equal(gaussian_dropout(x, 0.0, rng), x)


def test_gaussian_rejects_negative_variance():
    with pytest.raises(ValueError):
        GaussianDropout(-0.1)


def test_gaussian_conditional_variance_scales_with_square():
    rng = np.random.default_rng(3)
    sigma2 = 0.3
    x = np.array([0.5, -2.0, 3.0])
    _, cov, _ = mc_conditional_moments(GaussianDropout(sigma2), x, 40_000, rng)
    np.testing.assert_allclose(np.diag(cov), sigma2 * x**2, rtol=0.08)


def test_gaussian_equivalence_label():
    assert GaussianDropout(0.25).equivalent_keep_rate == pytest.approx(0.8)


# ---------------------------------------------------------------------------
# uout


def test_uout_zero_is_identity():
    rng = np.random.default_rng(4)
    x = rng.standard_normal(8)
    np.testing.assert_array_equal(uout(x, 0.0, rng), x)


def test_uout_rejects_negative():
    with pytest.raises(ValueError):
        Uout(-1.0)


def test_uout_conditional_variance_and_independence():
    rng = np.random.default_rng(5)
    x = np.array([1.0, -1.5, 2.0, 0.5])
    _, cov, _ = mc_conditional_moments(Uout(1.0), x, 60_000, rng)
    np.testing.assert_allclose(np.diag(cov), x**2 / 3.0, rtol=0.08)
    off = cov - np.diag(np.diag(cov))
    assert np.abs(off).max() < 0.01  # independent noise: no cross terms


# ---------------------------------------------------------------------------
# shared contracts


@pytest.fixture(params=["bernoulli", "gaussian", "uout", "rotation"])
def any_op(request):
    return {
        "bernoulli": BernoulliDropout(0.8),
        "gaussian": GaussianDropout(0.25),
        "uout": Uout(0.9),
        "rotation": RotationOut(gaussian_tangent(0.5)),
    }[request.param]


@pytest.mark.parametrize("dim", [4, 64])
def test_zero_centered_contract(any_op, dim):
    # fresh realization per row of a tiled batch estimates E[noised | x]
    rng = np.random.default_rng(6)
    x = rng.standard_normal(dim) + 1.0
    n = 40_000
    out = any_op(np.broadcast_to(x, (n, dim)).copy(), rng)
    err = np.abs(out.mean(axis=0) - x)
    stderr = out.std(axis=0, ddof=1) / np.sqrt(n)
    assert np.all(err < 4 * np.maximum(stderr, 1e-12))


def test_eval_mode_is_exact_identity(any_op):
    rng = np.random.default_rng(7)
    x = rng.standard_normal((8, 6))
    np.testing.assert_array_equal(any_op(x, rng, mode="eval"), x)


def test_nontrivial_noise(any_op):
    rng = np.random.default_rng(8)
    x = rng.standard_normal((64, 6)) + 2.0
    out = any_op(x, rng)
    assert np.any(out != x)


def test_equivalence_triple_reports_same_keep_rate():
    p = 0.8
    lam = (1 - p) / p
    ops = [BernoulliDropout(p), GaussianDropout(lam), RotationOut(gaussian_tangent(np.sqrt(lam)))]
    rates = {op.equivalent_keep_rate for op in ops}
    assert rates == {p}


def test_train_mode_requires_rng(any_op):
    with pytest.raises(ValueError, match="generator"):
        any_op(np.ones(4))


# ---------------------------------------------------------------------------
# centered wrapper


def test_centered_constant_batch_is_identity():
    rng = np.random.default_rng(9)
    x = np.tile(np.arange(6.0), (8, 1))
    for op in (BernoulliDropout(0.5), GaussianDropout(0.5), Uout(1.0)):
        np.testing.assert_allclose(centered(op, x, rng), x, atol=0)


def test_centered_requires_batch():
    rng = np.random.default_rng(10)
    with pytest.raises(ValueError, match="batch statistics"):
        centered(BernoulliDropout(0.5), np.ones((1, 4)), rng)


def test_centered_dropout_variance_tracks_centered_energy():
    # noising mean-3 samples: the conditional variance follows the
    # mean-removed energy, not the raw second moment
    rng = np.random.default_rng(11)
    p = 0.5
    n, dim = 4000, 16
    x = rng.standard_normal((n, dim)) + 3.0
    reps = 200
    acc = np.zeros((n, dim))
    for _ in range(reps):
        out = centered(BernoulliDropout(p), x, rng)
        acc += (out - x) ** 2
    cond_var = (acc / reps).mean()
    lam = (1 - p) / p
    centered_energy = ((x - x.mean(axis=0)) ** 2).mean()
    raw_energy = (x**2).mean()
    assert cond_var == pytest.approx(lam * centered_energy, rel=0.05)
    assert abs(cond_var - lam * raw_energy) > 5 * abs(cond_var - lam * centered_energy)


def test_centered_rotation_delegates_to_rotation_core():
    x = np.random.default_rng(12).standard_normal((32, 8))
    out_a = Centered(RotationOut(gaussian_tangent(0.5)))(x, np.random.default_rng(5))
    out_b = apply_centered(x, gaussian_tangent(0.5), np.random.default_rng(5))
    np.testing.assert_array_equal(out_a, out_b)


# ---------------------------------------------------------------------------
# declarative specs


def test_spec_validation():
    with pytest.raises(ValueError, match="kind"):
        NoiseOpSpec("spatial", 0.5)
    with pytest.raises(ValueError, match="keep rate"):
        NoiseOpSpec("rotation", 0.0)
    with pytest.raises(ValueError, match="placement"):
        NoiseOpSpec("uout", 0.5, placement="recurrent")
    with pytest.raises(ValueError, match="feature maps"):
        NoiseOpSpec("rotation-block", 0.9, placement="dense")


def test_spec_roundtrip_keep_rate():
    for kind, strength in [("bernoulli-dropout", 0.8), ("rotation", 0.8), ("gaussian-dropout", 0.25)]:
        op = make_noise_op(NoiseOpSpec(kind, strength))
        assert op.equivalent_keep_rate == pytest.approx(0.8)


def test_spec_uniform_angle_kind_roundtrip():
    op = make_noise_op(NoiseOpSpec("rotation", 0.8, angle_kind="uniform-angle"))
    assert op.equivalent_keep_rate == pytest.approx(0.8, abs=1e-9)


def test_rotation_spec_at_keep_rate_one_is_identity():
    rng = np.random.default_rng(15)
    op = make_noise_op(NoiseOpSpec("rotation", 1.0))
    x = rng.standard_normal((6, 4))
    np.testing.assert_allclose(op(x, rng), x, atol=0)


def test_spec_centered_flag_wraps():
    op = make_noise_op(NoiseOpSpec("bernoulli-dropout", 0.5, centered=True))
    assert isinstance(op, Centered)


def test_apply_spec_featuremap_and_sequence():
    rng = np.random.default_rng(13)
    fmap = rng.standard_normal((4, 6, 5, 5))
    spec = NoiseOpSpec("rotation", 0.8, placement="featuremap")
    out = apply_spec(spec, fmap, rng)
    assert out.shape == fmap.shape
    assert np.any(out != fmap)

    block_spec = NoiseOpSpec("rotation-block", 0.8, placement="featuremap", block=(2, 2))
    out = apply_spec(block_spec, fmap, rng)
    assert out.shape == fmap.shape

    steps = [rng.standard_normal(6) for _ in range(3)]
    seq_spec = NoiseOpSpec("rotation", 0.8, placement="sequence")
    outs = apply_spec(seq_spec, steps, rng)
    assert len(outs) == 3

    drop_seq = apply_spec(NoiseOpSpec("bernoulli-dropout", 0.9, placement="sequence"), steps, rng)
    assert len(drop_seq) == 3


def test_apply_spec_eval_is_identity():
    rng = np.random.default_rng(14)
    fmap = rng.standard_normal((2, 4, 3, 3))
    spec = NoiseOpSpec("rotation", 0.8, placement="featuremap")
    np.testing.assert_array_equal(apply_spec(spec, fmap, rng, mode="eval"), fmap)
