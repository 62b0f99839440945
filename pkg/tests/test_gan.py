import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vitalgan import data, gan, gradcheck, nn, toy
from vitalgan import tensor as T
from vitalgan.tensor import ShapeError, Tensor


def generator_table(a):
    return [
        ("seed", (a.m,)),
        ("append_embedding", (a.m, 1 + a.c)),
        ("linear", (5, a.h)),
        ("upsample", (10, a.h)),
        ("conv", (10, a.h)),
        ("conv", (10, a.h)),
        ("upsample", (20, a.h)),
        ("conv", (20, a.h)),
        ("conv", (20, a.h)),
        ("conv_out", (20, a.s)),
    ]


def critic_table(a):
    return [
        ("input", (20, a.s)),
        ("append_embedding", (20, a.s + a.c)),
        ("conv", (20, a.h)),
        ("conv", (20, a.h)),
        ("avg_pool", (10, a.h)),
        ("conv", (10, a.h)),
        ("conv", (10, a.h)),
        ("avg_pool", (5, a.h)),
        ("linear", (1,)),
    ]


def _nets(arch, seed=0):
    return (
        nn.init_parameters(gan.generator_param_specs(arch), seed),
        nn.init_parameters(gan.critic_param_specs(arch), seed + 1),
    )


@pytest.mark.parametrize("s", [1, 2, 3, 5])
@pytest.mark.parametrize("batch", [1, 4, 32])
def test_layer_shapes_follow_the_architecture_table(s, batch):
    arch = gan.ArchitectureConfig(s=s, c=4, m=8, h=16)
    gen, critic = _nets(arch)
    labels = np.arange(batch) % 2
    trace = []
    x = gan.generator_forward(gen, np.zeros((batch, arch.m)), labels, arch, trace=trace)
    assert trace == generator_table(arch)
    assert x.shape == (batch, 20, s)
    trace = []
    scores = gan.critic_forward(critic, x, labels, arch, trace=trace)
    assert trace == critic_table(arch)
    assert scores.shape == (batch,)


def test_parameter_counts_regression():
    # closed forms: embedding 2c, linear and conv weights plus biases
    def expected(s, c, m, h):
        gen = 2 * c + 5 * h * m * (1 + c) + 5 * h + 4 * (3 * h * h + h) + 3 * h * s + s
        critic = 2 * c + 3 * h * (s + c) + h + 3 * (3 * h * h + h) + 5 * h + 1
        return {"generator": gen, "critic": critic}

    assert gan.parameter_counts(gan.ArchitectureConfig(s=2)) == {"generator": 142290, "critic": 39377}
    for s in (1, 2, 3, 5):
        arch = gan.ArchitectureConfig(s=s, c=3, m=7, h=5)
        assert gan.parameter_counts(arch) == expected(s, 3, 7, 5)
    assert gan.parameter_counts(gradcheck.tiny_critic_arch())["critic"] <= 50


def test_inference_is_deterministic_and_scores_finite():
    arch = gan.ArchitectureConfig(s=2, c=4, m=8, h=16)
    gen, critic = _nets(arch)
    z = np.random.default_rng(0).standard_normal((8, arch.m))
    labels = np.array([0, 1] * 4)
    a = gan.generator_forward(gen, z, labels, arch).data
    b = gan.generator_forward(gen, z, labels, arch).data
    assert a.tobytes() == b.tobytes()
    x = np.random.default_rng(1).uniform(-1, 1, (8, 20, 2))
    assert np.all(np.isfinite(gan.critic_forward(critic, x, labels, arch).data))


def test_shape_errors():
    arch = gan.ArchitectureConfig(s=2, c=4, m=8, h=16)
    gen, critic = _nets(arch)
    with pytest.raises(ShapeError):
        gan.generator_forward(gen, np.zeros((2, 9)), [0, 1], arch)
    with pytest.raises(ShapeError):
        gan.generator_forward(gen, np.zeros((2, 8)), [0, 1], gan.ArchitectureConfig(s=3, c=4, m=8, h=16))
    with pytest.raises(ShapeError):
        gan.critic_forward(critic, np.zeros((2, 20, 3)), [0, 1], arch)
    with pytest.raises(ValueError):
        gan.ArchitectureConfig(s=6)


# ---------------------------------------------------------------------------
# objective


def _linear_critic(w):
    w = Tensor(w)

    def critic(x, labels):
        return T.tsum(T.mul(x, w), axis=(1, 2))

    return critic


def test_penalty_of_linear_critic_is_analytic():
    assert abs(gradcheck.linear_critic_penalty(5.0) - 16.0) < 1e-9
    rng = np.random.default_rng(0)
    w = rng.standard_normal((20, 2))
    w *= 3.0 / np.linalg.norm(w)
    real, fake = rng.standard_normal((2, 6, 20, 2))
    pen = gan.gradient_penalty(_linear_critic(w), real, fake, np.zeros(6, int), rng)
    assert abs(pen.item() - 4.0) < 1e-9


def test_unit_gradient_critic_has_zero_penalty():
    w = np.zeros((20, 1))
    w[3, 0] = 1.0
    rng = np.random.default_rng(1)
    real, fake = rng.standard_normal((2, 4, 20, 1))
    assert gan.gradient_penalty(_linear_critic(w), real, fake, np.zeros(4, int), rng).item() < 1e-11


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_penalty_is_non_negative(seed):
    arch = gradcheck.tiny_critic_arch()
    rng = np.random.default_rng(seed)
    critic = nn.init_parameters(gan.critic_param_specs(arch), seed % 1000)
    real, fake = rng.uniform(-1, 1, (2, 3, 20, arch.s))
    pen = gan.gradient_penalty(lambda x, l: gan.critic_forward(critic, x, l, arch), real, fake, [0, 1, 1], rng)
    assert pen.item() >= 0.0


def test_penalty_gradient_matches_finite_differences():
    assert gradcheck.penalty_second_order_error(np.random.default_rng(3)) < gradcheck.SECOND_ORDER_TOLERANCE


def test_penalty_rejects_mismatched_batches():
    with pytest.raises(ShapeError):
        gan.gradient_penalty(_linear_critic(np.ones((20, 1))), np.zeros((2, 20, 1)), np.zeros((3, 20, 1)), [0, 1], None)


def test_loss_examples():
    real, fake = Tensor([1.0, 3.0]), Tensor([0.0, 2.0])
    assert gan.critic_loss(real, fake, Tensor(0.4), 10.0).item() == pytest.approx(3.0)
    assert gan.critic_loss(real, real, Tensor(0.0), 10.0).item() == 0.0
    assert gan.critic_loss(real, fake, Tensor(0.4), 0.0).item() == pytest.approx(-1.0)
    assert gan.generator_loss(fake).item() == -1.0
    assert gan.generator_loss(Tensor(np.zeros(5))).item() == 0.0


# ---------------------------------------------------------------------------
# training


SMALL = gan.ArchitectureConfig(s=1, c=2, m=4, h=8)


@pytest.fixture(scope="module")
def levels():
    return data.normalize(toy.constant_levels(64, rng=0))


def test_training_is_deterministic(levels):
    cfg = gan.TrainConfig(generator_steps=10, batch_size=8, seed=3)
    b1, r1 = gan.train(levels, SMALL, cfg)
    b2, r2 = gan.train(levels, SMALL, cfg)
    assert r1 == r2
    assert all(b1.tensors[k].tobytes() == b2.tensors[k].tobytes() for k in b1.tensors)
    _, r3 = gan.train(levels, SMALL, gan.TrainConfig(generator_steps=10, batch_size=8, seed=4))
    assert r3 != r1


def test_zero_learning_rate_leaves_parameters(levels):
    cfg = gan.TrainConfig(generator_steps=3, batch_size=8, learning_rate=0.0, seed=0)
    bundle, _ = gan.train(levels, SMALL, cfg)
    gen_seed, critic_seed, _ = (int(v) for v in np.random.SeedSequence(0).generate_state(3))
    init = {
        **nn.init_parameters(gan.generator_param_specs(SMALL), gen_seed).to_arrays(),
        **nn.init_parameters(gan.critic_param_specs(SMALL), critic_seed).to_arrays(),
    }
    for name, value in init.items():
        np.testing.assert_array_equal(bundle.tensors[name], value)


def test_training_rejects_unnormalized_or_mismatched_data(levels):
    cfg = gan.TrainConfig(generator_steps=1, batch_size=8)
    with pytest.raises(ValueError):
        gan.train(toy.constant_levels(16), SMALL, cfg)
    with pytest.raises(ShapeError):
        gan.train(levels, gan.ArchitectureConfig(s=2, c=2, m=4, h=8), cfg)


def test_non_finite_loss_aborts_with_the_step():
    X = np.zeros((4, 20, 1))
    X[0, 0, 0] = np.nan
    ds = data.LabeledDataset.from_arrays(
        X, [0, 1, 0, 1], data.channel_specs(["temperature"]), norm_stats=data.NormStats(np.zeros(1), np.ones(1))
    )
    with pytest.raises(gan.NumericalError, match="step 1"):
        gan.train(ds, SMALL, gan.TrainConfig(generator_steps=2, batch_size=64, seed=0))


def test_generated_class_means_have_the_right_sign(levels):
    # class 1 sits at +0.5 and class 0 at -0.5 around the range midpoint
    ds = data.normalize(toy.constant_levels(200, rng=0))
    cfg = gan.TrainConfig(generator_steps=150, batch_size=32, learning_rate=1e-3, seed=0)
    bundle, records = gan.train(ds, SMALL, cfg)
    assert len(records) == 150
    syn = gan.synthesize_balanced(bundle, 400, rng=1)
    centred = syn.X - 37.5
    assert centred[syn.y == 1].mean() > 0
    assert centred[syn.y == 0].mean() < 0


def test_callbacks_and_log_round_trip(levels):
    seen = []
    _, records = gan.train(levels, SMALL, gan.TrainConfig(generator_steps=3, batch_size=8), callbacks=[seen.append])
    assert seen == records and [r.step for r in records] == [1, 2, 3]
    buf = io.StringIO()
    gan.write_training_log(records, buf)
    assert buf.getvalue().splitlines()[0].startswith("step=1 critic_loss=")
    assert gan.read_training_log(io.StringIO(buf.getvalue())) == records


# ---------------------------------------------------------------------------
# synthesis


@pytest.fixture(scope="module")
def bundle(levels):
    return gan.train(levels, SMALL, gan.TrainConfig(generator_steps=2, batch_size=8))[0]


def test_synthesis_is_balanced(bundle):
    syn = gan.synthesize_balanced(bundle, 1000, rng=0)
    assert np.bincount(syn.y).tolist() == [500, 500]
    assert syn.X.shape == (1000, 20, 1)
    assert syn.norm_stats is None
    assert np.bincount(gan.synthesize_balanced(bundle, 7, rng=0).y).tolist() == [3, 3]


def test_synthesis_units_and_clamping(bundle):
    raw = gan.synthesize_balanced(bundle, 200, rng=0)
    stats = data.NormStats.from_list(bundle.norm_stats)
    gen, arch = gan.generator_from_bundle(bundle)
    # same rng stream: labels first, then one seed chunk
    rng = np.random.default_rng(0)
    labels = rng.permutation(np.repeat([0, 1], 100))
    z = rng.standard_normal((200, arch.m))
    expected = gan.generator_forward(gen, z, labels, arch).data * stats.max_abs + stats.mean
    np.testing.assert_allclose(raw.X, expected, rtol=1e-12)

    wide = data.NormStats(stats.mean, stats.max_abs * 1000)
    clamped = gan.synthesize_balanced(bundle, 200, norm_stats=wide, clamp=True, rng=0)
    assert data.in_range_mask(clamped).all()


def test_synthesis_errors(bundle):
    with pytest.raises(ValueError):
        gan.synthesize_balanced(bundle, 1)
    from dataclasses import replace

    with pytest.raises(ValueError, match="normalization"):
        gan.synthesize_balanced(replace(bundle, norm_stats=None), 10)
