import csv
import math

import numpy as np
import pytest

from degreegan import autodiff as ad
from degreegan.autodiff import NonFiniteError, ParamSet, Tape, Tensor, backward
from degreegan.checkpoint import load_checkpoint
from degreegan.graphs import stack_graphs
from degreegan.nets import GeneratorSpec, RgcnSpec, discriminate, generate, init_params, reward_predict
from degreegan.qm9 import VocabSpec, parse_sdf, sample_split
from degreegan.training import (
    LOG_COLUMNS,
    RewardObjective,
    TrainSchedule,
    discriminator_loss,
    generator_loss,
    gradient_penalty,
    interpolate,
    per_graph_rewards,
    reward_fn,
    reward_net_loss,
    rmsprop_step,
    train,
)
from fd import numeric_grad, param_grad_error, rel_err
from oracles import complete_graph, path_graph


def linear_critic(wx, wa):
    def fn(x, a):
        x, a = ad.tensor(x), ad.tensor(a)
        return (x * wx).sum(axis=(1, 2)) + (a * wa).sum(axis=(1, 2, 3))

    return fn


def constant_critic(value):
    def fn(x, a):
        return Tensor(np.full(ad.tensor(x).shape[0], value))

    return fn


def unit_weights(rng, n=3, t=2, b=2):
    wx, wa = rng.normal(size=(n, t)), rng.normal(size=(n, n, b))
    norm = np.sqrt((wx**2).sum() + (wa**2).sum())
    return wx / norm, wa / norm


def toy_batch(rng, b=4, n=3, t=2, e=2):
    return rng.random((b, n, t)), rng.random((b, n, n, e))


# ------------------------------------------------------------------- reward


def test_reward_examples():
    obj = RewardObjective(2.0)
    assert obj.score(2.0) == 1.0
    assert obj.score(0.0) == pytest.approx(math.exp(-1))
    assert obj.score(3.0) == obj.score(1.0)
    lin = RewardObjective(2.0, "linear")
    assert lin.score(3.0) == 0.5 and lin.score(5.0) == 0.0
    assert RewardObjective(0.0).score(0.0) == 1.0
    assert RewardObjective(0.0).score(1.0) == pytest.approx(math.exp(-1))


def test_reward_is_strictly_decreasing_in_distance():
    for d in (1.0, 2.0, 4.0, 6.0):
        obj = RewardObjective(d)
        gaps = np.linspace(0, 8, 200)
        above = [obj.score(d + g) for g in gaps]
        below = [obj.score(d - g) for g in gaps if d - g >= 0]
        assert np.all(np.diff(above) < 0) and np.all(np.diff(below) < 0)
        assert max(above) == 1.0


def test_reward_of_sets_and_single_graphs():
    obj = RewardObjective(2.0)
    # K4 has degree 3, path of 3 has 4/3; the set mean is 13/6
    gs = [complete_graph(4), path_graph(3)]
    assert reward_fn(gs, obj) == pytest.approx(math.exp(-(13 / 6 - 2) / 2))
    np.testing.assert_allclose(per_graph_rewards(gs, obj), [math.exp(-0.5), math.exp(-(2 / 3) / 2)])


def test_objective_validation():
    with pytest.raises(ValueError):
        RewardObjective(-1.0)
    with pytest.raises(ValueError):
        RewardObjective(2.0, "cubic")


# ------------------------------------------------------------------- penalty


def test_penalty_is_zero_for_unit_norm_linear_critic():
    rng = np.random.default_rng(0)
    for _ in range(20):
        critic = linear_critic(*unit_weights(rng))
        with Tape():
            gp = gradient_penalty(*toy_batch(rng), critic)
        assert np.abs(gp.data).max() < 1e-10


def test_penalty_is_one_for_constant_critic():
    rng = np.random.default_rng(1)
    with Tape():
        gp = gradient_penalty(*toy_batch(rng), constant_critic(0.3))
    np.testing.assert_allclose(gp.data, 1.0, rtol=0, atol=1e-10)


def test_penalty_for_scaled_linear_critic():
    rng = np.random.default_rng(2)
    wx, wa = unit_weights(rng)
    with Tape():
        gp = gradient_penalty(*toy_batch(rng), linear_critic(3 * wx, 3 * wa))
    np.testing.assert_allclose(gp.data, 4.0, atol=1e-12)


def test_penalty_needs_a_tape():
    with pytest.raises(RuntimeError):
        gradient_penalty(*toy_batch(np.random.default_rng(0)), constant_critic(0.0))


def test_interpolation_shares_eps_per_sample():
    rng = np.random.default_rng(3)
    real, fake = toy_batch(rng), toy_batch(rng)
    eps = np.array([0.0, 1.0, 0.25, 0.5])
    x, a = interpolate(real, fake, eps)
    for k, e in enumerate(eps):
        np.testing.assert_allclose(x[k], e * real[0][k] + (1 - e) * fake[0][k])
        np.testing.assert_allclose(a[k], e * real[1][k] + (1 - e) * fake[1][k])


# --------------------------------------------------------------- critic loss


def test_discriminator_loss_on_identical_batches():
    rng = np.random.default_rng(4)
    batch = toy_batch(rng)
    critic = linear_critic(*unit_weights(rng))
    with Tape():
        loss = discriminator_loss(batch, batch, critic, np.ones(4))
    assert abs(loss.item()) < 1e-10
    with Tape():
        loss = discriminator_loss(batch, batch, constant_critic(1.5), np.ones(4), gp_weight=10.0)
    assert loss.item() == pytest.approx(10.0, abs=1e-12)


def test_discriminator_loss_one_dimensional_hand_case():
    # D(x, a) = 3x + 4a has gradient norm 5, so the penalty is 16
    critic = linear_critic(np.array([[3.0]]), np.array([[[4.0]]]))
    real = (np.ones((1, 1, 1)), np.zeros((1, 1, 1, 1)))
    fake = (np.zeros((1, 1, 1)), np.ones((1, 1, 1, 1)))
    with Tape():
        loss = discriminator_loss(real, fake, critic, np.array([0.3]))
    assert loss.item() == pytest.approx(-3 + 4 + 10 * 16, abs=1e-12)


def test_discriminator_loss_shape_checks():
    rng = np.random.default_rng(5)
    with Tape(), pytest.raises(ad.ShapeError):
        discriminator_loss(toy_batch(rng, b=4), toy_batch(rng, b=3), constant_critic(0), np.ones(4))
    with Tape(), pytest.raises(ad.ShapeError):
        discriminator_loss(toy_batch(rng), toy_batch(rng), constant_critic(0), np.ones(3))


def small_world(vocab, seed):
    gen = GeneratorSpec(vocab, z_dim=4, hidden=(4, 4))
    disc = RgcnSpec(vocab, layers=(4, 4), attention_hidden=4, glimpse=4)
    rew = RgcnSpec(vocab, layers=(4, 4), attention_hidden=4, glimpse=4, head="sigmoid")
    return gen, disc, rew, init_params(gen, seed), init_params(disc, seed + 1), init_params(rew, seed + 2)


def relaxed_batch(rng, vocab, b=2):
    n, t, e = vocab.max_nodes, vocab.n_node_types, vocab.n_edge_types
    x = rng.dirichlet(np.ones(t), size=(b, n))
    a = rng.dirichlet(np.ones(e), size=(b, n, n))
    return x, (a + a.transpose(0, 2, 1, 3)) / 2


def test_discriminator_loss_gradient_matches_finite_differences(tiny_vocab):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        _, disc, _, _, phi, _ = small_world(tiny_vocab, seed)
        real, fake = relaxed_batch(rng, tiny_vocab), relaxed_batch(rng, tiny_vocab)
        eps = rng.random(2)

        def loss(p):
            return discriminator_loss(real, fake, lambda x, a: discriminate((x, a), p, disc), eps)

        assert param_grad_error(loss, phi) < 1e-4


def test_penalty_gradient_wrt_critic_params(tiny_vocab):
    rng = np.random.default_rng(11)
    _, disc, _, _, phi, _ = small_world(tiny_vocab, 11)
    x_hat = relaxed_batch(rng, tiny_vocab)

    def penalty(p):
        return gradient_penalty(*x_hat, lambda x, a: discriminate((x, a), p, disc)).sum()

    assert param_grad_error(penalty, phi) < 1e-4


# ------------------------------------------------------------ generator loss


def test_generator_loss_is_linear_in_lambda():
    rng = np.random.default_rng(6)
    batch = toy_batch(rng)
    d = linear_critic(*toy_batch(rng, b=1))
    wx, wa = toy_batch(rng, b=1)
    r = lambda x, a: ad.sigmoid(linear_critic(wx, wa)(x, a))  # noqa: E731
    l0 = generator_loss(batch, d, r, 0.0).item()
    l1 = generator_loss(batch, d, r, 1.0).item()
    assert l1 == -d(*batch).data.mean()
    assert l0 == -r(*batch).data.mean()
    for lam in (0.0, 0.25, 0.5, 0.75, 1.0):
        mixed = generator_loss(batch, d, r, lam).item()
        assert mixed == pytest.approx(lam * l1 + (1 - lam) * l0, rel=1e-15, abs=1e-15)


def test_generator_loss_skips_the_unused_critic():
    batch = toy_batch(np.random.default_rng(0))

    def boom(x, a):
        raise AssertionError("should not be evaluated")

    generator_loss(batch, constant_critic(1.0), boom, 1.0)
    generator_loss(batch, boom, constant_critic(1.0), 0.0)
    with pytest.raises(ValueError):
        generator_loss(batch, boom, boom, 1.5)


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0])
def test_generator_loss_gradient_matches_finite_differences(tiny_vocab, lam):
    for seed in range(4):
        gen, disc, rew, theta, phi, psi = small_world(tiny_vocab, seed)
        z = np.random.default_rng(seed).normal(size=(3, 4))
        phi_f, psi_f = phi.frozen(), psi.frozen()

        def loss(th):
            fake = generate(z, th, gen)
            return generator_loss(
                (fake.nodes, fake.adjacency),
                lambda x, a: discriminate((x, a), phi_f, disc),
                lambda x, a: reward_predict((x, a), psi_f, rew),
                lam,
            )

        assert param_grad_error(loss, theta) < 1e-5


# --------------------------------------------------------------- reward loss


def test_reward_loss_with_constant_prediction():
    rng = np.random.default_rng(7)
    fake, real = toy_batch(rng), toy_batch(rng)
    rf, rr = rng.random(4), rng.random(4)
    loss = reward_net_loss(fake, rf, real, rr, constant_critic(0.4))
    assert loss.item() == pytest.approx(np.mean((0.4 - rf) ** 2 + (0.4 - rr) ** 2), abs=1e-15)
    perfect = reward_net_loss(fake, rf, fake, rf, lambda x, a: Tensor(rf))
    assert perfect.item() == 0.0


def test_reward_loss_gradient_matches_finite_differences(tiny_vocab):
    for seed in range(5):
        rng = np.random.default_rng(seed)
        _, _, rew, _, _, psi = small_world(tiny_vocab, seed)
        fake, real = relaxed_batch(rng, tiny_vocab), relaxed_batch(rng, tiny_vocab)
        rf, rr = rng.random(2), rng.random(2)

        def loss(p):
            return reward_net_loss(fake, rf, real, rr, lambda x, a: reward_predict((x, a), p, rew))

        assert param_grad_error(loss, psi) < 1e-5


# ------------------------------------------------------------------ RMSProp


def test_rmsprop_first_step_by_hand():
    p = ParamSet("generator", {"w": np.array([1.0, -2.0])})
    g = {"w": np.array([0.5, 0.0])}
    q, state = rmsprop_step(p, g, None, lr=0.01, rho=0.9)
    s = 0.1 * 0.25
    np.testing.assert_allclose(state["w"], [s, 0.0])
    np.testing.assert_allclose(q["w"].data, [1.0 - 0.01 * 0.5 / (math.sqrt(s) + 1e-8), -2.0], rtol=1e-15)
    assert np.array_equal(p["w"].data, [1.0, -2.0])


def test_rmsprop_second_step_uses_state():
    p = ParamSet("generator", {"w": np.array([0.0])})
    g = {"w": np.array([1.0])}
    p1, s1 = rmsprop_step(p, g, None, lr=0.1, rho=0.5)
    p2, s2 = rmsprop_step(p1, g, s1, lr=0.1, rho=0.5)
    assert s2["w"][0] == pytest.approx(0.5 * 0.5 + 0.5)
    assert p2["w"].item() == pytest.approx(-0.1 / (math.sqrt(0.5) + 1e-8) - 0.1 / (math.sqrt(0.75) + 1e-8))


def test_rmsprop_rejects_mismatched_keys():
    p = ParamSet("generator", {"w": np.zeros(1), "b": np.zeros(1)})
    with pytest.raises(KeyError):
        rmsprop_step(p, {"w": np.zeros(1)}, None)


# ---------------------------------------------------------------- training


def test_critic_alone_widens_the_real_fake_gap(fixture_sdf):
    # lr 1e-4: at 1e-3 the gap saturates within ~30 steps and then jitters
    vocab = VocabSpec()
    graphs = parse_sdf(fixture_sdf)[:16]
    rx, ra = stack_graphs(graphs)
    gen = GeneratorSpec(vocab, z_dim=8, hidden=(16,))
    disc = RgcnSpec(vocab, layers=(16, 16), attention_hidden=16, glimpse=16)
    total = np.zeros(51)
    for seed in range(5):
        rng = np.random.default_rng(seed)
        with ad.no_record():
            fake = generate(rng.normal(size=(16, 8)), init_params(gen, seed), gen)
        fx, fa = fake.nodes.data, fake.adjacency.data
        phi, state, gaps = init_params(disc, seed), None, []
        for _ in range(51):
            with ad.no_record():
                gaps.append(discriminate((rx, ra), phi, disc).data.mean() - discriminate((fx, fa), phi, disc).data.mean())
            p = phi
            with Tape() as tape:
                loss = discriminator_loss((rx, ra), (fx, fa), lambda x, a: discriminate((x, a), p, disc), rng.uniform(size=16))
                grads = backward(tape, loss, p)
            phi, state = rmsprop_step(phi, grads, state, lr=1e-4)
        total += gaps
    assert np.all(np.diff(total) > 0)


def tiny_run(fixture_sdf, tmp_path=None, **kw):
    ds = sample_split(parse_sdf(fixture_sdf), 8, 2, seed=0)
    vocab = ds.vocab
    specs = dict(
        gen_spec=GeneratorSpec(vocab, z_dim=4, hidden=(8,)),
        disc_spec=RgcnSpec(vocab, layers=(4,), attention_hidden=4, glimpse=4),
        reward_spec=RgcnSpec(vocab, layers=(4,), attention_hidden=4, glimpse=4, head="sigmoid"),
    )
    sched = dict(total_epochs=4, pretrain_epochs=2, batch_size=4, val_samples=16, seed=3)
    sched.update(kw)
    return train(ds, TrainSchedule(**sched), RewardObjective(2.0), out_dir=tmp_path, **specs)


def strip_clock(log):
    return [row.row()[:-1] for row in log]


def test_training_is_deterministic(fixture_sdf, tmp_path):
    a = tiny_run(fixture_sdf, tmp_path / "a")
    b = tiny_run(fixture_sdf, tmp_path / "b")
    for x, y in zip((a.generator, a.discriminator, a.reward), (b.generator, b.discriminator, b.reward)):
        assert x.equal(y)
    assert strip_clock(a.log) == strip_clock(b.log)
    for name in ("pretrain.ckpt", "final.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    c = tiny_run(fixture_sdf, seed=4)
    assert not c.generator.equal(a.generator)


def test_log_file_and_lambda_schedule(fixture_sdf, tmp_path):
    result = tiny_run(fixture_sdf, tmp_path, lambda_main=0.25, total_epochs=6, pretrain_epochs=3, checkpoint_every=2)
    with open(tmp_path / "train_log.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == LOG_COLUMNS
    assert [float(r[1]) for r in rows[1:]] == [1.0, 1.0, 1.0, 0.25, 0.25, 0.25]
    assert [r[:-1] for r in rows[1:]] == strip_clock(result.log)
    assert all(r[4] != "" for r in rows[1:])
    for name in ("epoch0002.ckpt", "epoch0004.ckpt", "epoch0006.ckpt", "pretrain.ckpt", "final.ckpt"):
        assert (tmp_path / name).exists()
    ck = load_checkpoint(tmp_path / "pretrain.ckpt")
    assert ck.meta["epoch"] == 3
    assert ck.params["generator"].equal(result.pretrain[0])


def test_reward_net_untouched_when_lambda_stays_one(fixture_sdf):
    result = tiny_run(fixture_sdf, lambda_main=1.0)
    spec = RgcnSpec(VocabSpec(), layers=(4,), attention_hidden=4, glimpse=4, head="sigmoid")
    init = init_params(spec, np.random.SeedSequence(3).spawn(4)[2])
    assert result.reward.equal(init)
    assert all(row.r_loss is None for row in result.log)


def test_reward_training_does_not_leak_into_pretraining(fixture_sdf):
    # the generator ignores the reward net at lambda 1, so the pretrain
    # snapshot of theta and phi is the same whatever happens afterwards
    runs = [tiny_run(fixture_sdf, lambda_main=lam) for lam in (0.0, 0.5, 1.0)]
    for r in runs[1:]:
        assert r.pretrain[0].equal(runs[0].pretrain[0])
        assert r.pretrain[1].equal(runs[0].pretrain[1])
    assert not runs[0].pretrain[2].equal(runs[2].pretrain[2])


def test_nan_aborts_naming_the_tensor(fixture_sdf):
    ds = sample_split(parse_sdf(fixture_sdf), 4, 1, seed=0)
    bad = ds.train[0]
    x = bad.node_features.astype(float)
    x[0, 0] = np.nan
    object.__setattr__(bad, "node_features", x)
    vocab = ds.vocab
    with pytest.raises(NonFiniteError, match="discriminator"):
        train(
            ds,
            TrainSchedule(total_epochs=1, pretrain_epochs=1, batch_size=4, val_samples=0),
            RewardObjective(),
            GeneratorSpec(vocab, z_dim=4, hidden=(4,)),
            RgcnSpec(vocab, layers=(4,), attention_hidden=4, glimpse=4),
            RgcnSpec(vocab, layers=(4,), attention_hidden=4, glimpse=4, head="sigmoid"),
        )


def test_schedule_validation():
    with pytest.raises(ValueError):
        TrainSchedule(total_epochs=10, pretrain_epochs=11)
    with pytest.raises(ValueError):
        TrainSchedule(momentum=0.9)
    with pytest.raises(ValueError):
        TrainSchedule(lambda_main=1.5)
    s = TrainSchedule(total_epochs=60, pretrain_epochs=30, lambda_main=0.5)
    assert [s.lambda_at(e) for e in (0, 29, 30, 59)] == [1.0, 1.0, 0.5, 0.5]
    assert s.trains_reward and not TrainSchedule(lambda_main=1.0).trains_reward
