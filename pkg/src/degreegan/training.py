"""Losses, the degree reward, RMSProp and the two-phase training loop."""
from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import NonFiniteError, ParamSet, Tensor
from .checkpoint import save_checkpoint
from .graphs import (
    EmptySetError,
    GraphSample,
    RelaxedGraph,
    average_node_degree,
    discretize,
    mean_degree_over_set,
    percent_unique,
    stack_graphs,
)
from .nets import (
    GeneratorSpec,
    RgcnSpec,
    discriminate,
    generate,
    init_params,
    reward_predict,
    sample_graphs,
)
from .qm9 import DatasetSplit

log = logging.getLogger(__name__)

CriticFn = Callable[[Tensor, Tensor], Tensor]


# ------------------------------------------------------------------- reward


@dataclass(frozen=True)
class RewardObjective:
    target_degree: float = 2.0
    shape: str = "exp"

    def __post_init__(self):
        if self.target_degree < 0:
            raise ValueError("target degree must be non-negative")
        if self.shape not in ("exp", "linear"):
            raise ValueError(f"reward shape must be 'exp' or 'linear', not {self.shape!r}")

    def score(self, mean_degree: float) -> float:
        d = self.target_degree
        gap = abs(mean_degree - d)
        if d == 0:
            rel = mean_degree
        else:
            rel = gap / d
        if self.shape == "linear":
            return max(0.0, 1.0 - rel)
        return math.exp(-rel)


def reward_fn(gs: Sequence[GraphSample], obj: RewardObjective) -> float:
    """Score in [0, 1] for how close the set's mean degree is to the target."""
    return obj.score(mean_degree_over_set(gs))


def per_graph_rewards(gs: Sequence[GraphSample], obj: RewardObjective) -> np.ndarray:
    """Reward of each graph taken as a singleton set."""
    if len(gs) == 0:
        raise EmptySetError("reward of an empty set")
    return np.array([obj.score(average_node_degree(g)) for g in gs])


# ------------------------------------------------------------------- losses


def gradient_penalty(nodes_hat, adjacency_hat, disc_fn: CriticFn) -> Tensor:
    """Per-sample ``(||grad D(x_hat)|| - 1)^2`` as a taped vector.

    The norm runs over the node and adjacency gradients jointly.  The inner
    gradient is recorded on the active tape so the result can be
    differentiated with respect to the critic's parameters.
    """
    tape = ad.current_tape()
    if tape is None:
        raise RuntimeError("gradient_penalty needs an active tape")
    x = Tensor(ad.tensor(nodes_hat).data, requires_grad=True)
    a = Tensor(ad.tensor(adjacency_hat).data, requires_grad=True)
    out = disc_fn(x, a)
    if not out.requires_grad:
        # critic ignores its input: gradient is identically zero
        return Tensor(np.ones(x.shape[0]))
    gx, ga = ad.backward(tape, out.sum(), [x, a], create_graph=True)
    sq = (gx * gx).sum(axis=tuple(range(1, gx.ndim))) + (ga * ga).sum(axis=tuple(range(1, ga.ndim)))
    return ad.square(ad.sqrt(sq) - 1.0)


def grad_norm_penalty_path(x_hat: tuple, disc_fn: CriticFn) -> Tensor:
    """Batch mean of the gradient penalty at ``x_hat = (nodes, adjacency)``."""
    return gradient_penalty(x_hat[0], x_hat[1], disc_fn).mean()


def interpolate(real: tuple, fake: tuple, eps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``eps * real + (1 - eps) * fake`` with one ``eps`` per sample."""
    rx, ra = (ad.tensor(t).data for t in real)
    fx, fa = (ad.tensor(t).data for t in fake)
    e = np.asarray(eps, dtype=np.float64)
    ex, ea = e[:, None, None], e[:, None, None, None]
    return ex * rx + (1.0 - ex) * fx, ea * ra + (1.0 - ea) * fa


def discriminator_loss(
    real: tuple, fake: tuple, disc_fn: CriticFn, eps: np.ndarray, gp_weight: float = 10.0
) -> Tensor:
    """Batch mean of ``-D(x) + D(G(z)) + alpha * penalty(x_hat)``."""
    real = tuple(ad.tensor(t) for t in real)
    fake = tuple(ad.tensor(t) for t in fake)
    if real[0].shape != fake[0].shape or real[1].shape != fake[1].shape:
        raise ad.ShapeError(f"real {real[0].shape} and fake {fake[0].shape} batches differ")
    if np.shape(eps) != (real[0].shape[0],):
        raise ad.ShapeError(f"need one eps per sample, got shape {np.shape(eps)}")
    x_hat = interpolate(real, fake, eps)
    per_sample = -disc_fn(*real) + disc_fn(*fake) + gp_weight * gradient_penalty(*x_hat, disc_fn)
    return per_sample.mean()


def generator_loss(
    fake: tuple, disc_fn: CriticFn | None, reward_fn_hat: CriticFn | None, lam: float
) -> Tensor:
    """Batch mean of ``lam * -D(G(z)) + (1 - lam) * -R_hat(G(z))``.

    The critic whose weight is zero is not evaluated.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    terms = []
    if lam > 0.0:
        terms.append(-lam * disc_fn(*fake))
    if lam < 1.0:
        terms.append(-(1.0 - lam) * reward_fn_hat(*fake))
    total = terms[0] if len(terms) == 1 else terms[0] + terms[1]
    return total.mean()


def reward_net_loss(
    fake: tuple,
    fake_rewards: np.ndarray,
    real: tuple,
    real_rewards: np.ndarray,
    reward_fn_hat: CriticFn,
) -> Tensor:
    """Batch mean of squared reward-prediction errors on fake plus real graphs.

    ``fake`` holds the relaxed generator output while ``fake_rewards`` come
    from its discretized graphs.
    """
    pf = reward_fn_hat(*fake)
    pr = reward_fn_hat(*real)
    return (ad.square(pf - np.asarray(fake_rewards)) + ad.square(pr - np.asarray(real_rewards))).mean()


# ---------------------------------------------------------------- optimizer


def rmsprop_step(
    params: ParamSet,
    grads: Mapping[str, Tensor | np.ndarray],
    state: Mapping[str, np.ndarray] | None,
    lr: float = 1e-3,
    rho: float = 0.9,
    eps: float = 1e-8,
) -> tuple[ParamSet, dict[str, np.ndarray]]:
    """One RMSProp update without momentum; returns new params and state."""
    if set(grads) != set(params):
        missing = set(params) ^ set(grads)
        raise KeyError(f"gradient keys differ from parameter keys: {sorted(missing)}")
    state = state or {}
    new_state, new_values = {}, {}
    for name in params:
        g = grads[name]
        g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        s = rho * state.get(name, np.zeros_like(g)) + (1.0 - rho) * g * g
        new_state[name] = s
        new_values[name] = params[name].data - lr * g / (np.sqrt(s) + eps)
    return params.replace(new_values), new_state


# -------------------------------------------------------------------- loop


@dataclass(frozen=True)
class TrainSchedule:
    total_epochs: int = 300
    pretrain_epochs: int = 150
    lambda_pretrain: float = 1.0
    lambda_main: float = 0.0
    batch_size: int = 32
    learning_rate: float = 1e-3
    rho: float = 0.9
    momentum: float = 0.0
    gp_weight: float = 10.0
    n_critic: int = 1
    val_samples: int = 512
    checkpoint_every: int = 0
    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.pretrain_epochs <= self.total_epochs:
            raise ValueError("need 0 <= pretrain_epochs <= total_epochs")
        for lam in (self.lambda_pretrain, self.lambda_main):
            if not 0.0 <= lam <= 1.0:
                raise ValueError(f"lambda {lam} outside [0, 1]")
        if self.gp_weight <= 0:
            raise ValueError("gradient penalty weight must be positive")
        if self.momentum != 0.0:
            raise ValueError("RMSProp runs without momentum")
        if self.batch_size < 1 or self.n_critic < 1:
            raise ValueError("batch_size and n_critic must be positive")

    def lambda_at(self, epoch: int) -> float:
        return self.lambda_pretrain if epoch < self.pretrain_epochs else self.lambda_main

    @property
    def trains_reward(self) -> bool:
        return self.lambda_main < 1.0


LOG_COLUMNS = (
    "epoch",
    "lambda",
    "d_loss",
    "g_loss",
    "r_loss",
    "val_mean_degree",
    "val_pct_unique",
    "wall_seconds",
)


@dataclass
class EpochLog:
    epoch: int
    lam: float
    d_loss: float
    g_loss: float
    r_loss: float | None
    val_mean_degree: float
    val_pct_unique: float
    wall_seconds: float

    def row(self) -> list[str]:
        return [
            str(self.epoch),
            repr(self.lam),
            repr(self.d_loss),
            repr(self.g_loss),
            "" if self.r_loss is None else repr(self.r_loss),
            repr(self.val_mean_degree),
            repr(self.val_pct_unique),
            f"{self.wall_seconds:.3f}",
        ]


@dataclass
class TrainResult:
    generator: ParamSet
    discriminator: ParamSet
    reward: ParamSet
    log: list[EpochLog] = field(default_factory=list)
    pretrain: tuple[ParamSet, ParamSet, ParamSet] | None = None


def _check_finite(what: str, loss: Tensor, grads: Mapping[str, Tensor]) -> None:
    if not loss.all_finite():
        raise NonFiniteError(f"{what}: loss is not finite ({loss.item()})")
    for name, g in grads.items():
        if not g.all_finite():
            raise NonFiniteError(f"{what}: gradient of {name} is not finite")


def _seeds(seed: int) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(seed).spawn(4)


class Trainer:
    """Holds parameters and optimizer state; every step is deterministic.

    The loop alternates critic and generator updates per batch.
    """

    def __init__(
        self,
        schedule: TrainSchedule,
        objective: RewardObjective,
        gen_spec: GeneratorSpec,
        disc_spec: RgcnSpec,
        reward_spec: RgcnSpec,
    ):
        self.schedule = schedule
        self.objective = objective
        self.gen_spec = gen_spec
        self.disc_spec = disc_spec
        self.reward_spec = reward_spec
        s_gen, s_disc, s_rew, s_loop = _seeds(schedule.seed)
        self.theta = init_params(gen_spec, s_gen)
        self.phi = init_params(disc_spec, s_disc)
        self.psi = init_params(reward_spec, s_rew)
        self.opt_state = {"generator": None, "discriminator": None, "reward": None}
        self.rng = np.random.default_rng(s_loop)

    # one critic update; returns the loss and the fake batch it used
    def discriminator_step(self, real: tuple) -> tuple[float, RelaxedGraph]:
        b = real[0].shape[0]
        z = self.rng.standard_normal((b, self.gen_spec.z_dim))
        eps = self.rng.uniform(0.0, 1.0, size=b)
        with ad.no_record():
            fake = generate(z, self.theta.frozen(), self.gen_spec)
        phi = self.phi
        with ad.Tape() as tape:
            loss = discriminator_loss(
                real,
                (fake.nodes, fake.adjacency),
                lambda x, a: discriminate((x, a), phi, self.disc_spec),
                eps,
                self.schedule.gp_weight,
            )
            grads = ad.backward(tape, loss, phi)
        _check_finite("discriminator", loss, grads)
        self.phi, self.opt_state["discriminator"] = self._update(phi, grads, "discriminator")
        return loss.item(), fake

    def reward_step(self, real: tuple, real_rewards: np.ndarray, fake: RelaxedGraph) -> float:
        fake_rewards = per_graph_rewards(discretize(fake), self.objective)
        psi = self.psi
        with ad.Tape() as tape:
            loss = reward_net_loss(
                (fake.nodes, fake.adjacency),
                fake_rewards,
                real,
                real_rewards,
                lambda x, a: reward_predict((x, a), psi, self.reward_spec),
            )
            grads = ad.backward(tape, loss, psi)
        _check_finite("reward network", loss, grads)
        self.psi, self.opt_state["reward"] = self._update(psi, grads, "reward")
        return loss.item()

    def generator_step(self, b: int, lam: float) -> float:
        z = self.rng.standard_normal((b, self.gen_spec.z_dim))
        theta, phi, psi = self.theta, self.phi.frozen(), self.psi.frozen()
        with ad.Tape() as tape:
            fake = generate(z, theta, self.gen_spec)
            loss = generator_loss(
                (fake.nodes, fake.adjacency),
                lambda x, a: discriminate((x, a), phi, self.disc_spec),
                lambda x, a: reward_predict((x, a), psi, self.reward_spec),
                lam,
            )
            grads = ad.backward(tape, loss, theta)
        _check_finite("generator", loss, grads)
        self.theta, self.opt_state["generator"] = self._update(theta, grads, "generator")
        return loss.item()

    def _update(self, params: ParamSet, grads, role: str):
        s = self.schedule
        return rmsprop_step(params, grads, self.opt_state[role], s.learning_rate, s.rho)

    def snapshot(self) -> tuple[ParamSet, ParamSet, ParamSet]:
        return self.theta, self.phi, self.psi

    def save(self, path: str | Path, **extra) -> None:
        save_checkpoint(
            path,
            [self.theta, self.phi, self.psi],
            self.gen_spec,
            [self.disc_spec, self.reward_spec],
            **extra,
        )


def train(
    dataset: DatasetSplit,
    schedule: TrainSchedule,
    objective: RewardObjective,
    gen_spec: GeneratorSpec | None = None,
    disc_spec: RgcnSpec | None = None,
    reward_spec: RgcnSpec | None = None,
    out_dir: str | Path | None = None,
    on_epoch: Callable[[EpochLog], None] | None = None,
) -> TrainResult:
    """Run the full schedule: ``lambda_pretrain`` first, ``lambda_main`` after.

    With ``out_dir`` the per-epoch CSV log, periodic checkpoints, the
    end-of-pretraining checkpoint and the final checkpoint are written there.
    """
    vocab = dataset.vocab
    gen_spec = gen_spec or GeneratorSpec(vocab)
    disc_spec = disc_spec or RgcnSpec(vocab, head="linear")
    reward_spec = reward_spec or RgcnSpec(vocab, head="sigmoid")
    if not dataset.train:
        raise EmptySetError("training set is empty")

    trainer = Trainer(schedule, objective, gen_spec, disc_spec, reward_spec)
    real_x, real_a = stack_graphs(dataset.train)
    real_rewards = per_graph_rewards(dataset.train, objective)
    n = len(dataset.train)

    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        log_file = open(out / "train_log.csv", "w", newline="")
        writer = csv.writer(log_file)
        writer.writerow(LOG_COLUMNS)

    result = TrainResult(trainer.theta, trainer.phi, trainer.psi)
    try:
        for epoch in range(schedule.total_epochs):
            start = time.perf_counter()
            lam = schedule.lambda_at(epoch)
            order = trainer.rng.permutation(n)
            d_losses, g_losses, r_losses = [], [], []
            for lo in range(0, n, schedule.batch_size):
                idx = order[lo : lo + schedule.batch_size]
                real = (Tensor(real_x[idx]), Tensor(real_a[idx]))
                for _ in range(schedule.n_critic):
                    d_loss, fake = trainer.discriminator_step(real)
                    d_losses.append(d_loss)
                if schedule.trains_reward:
                    r_losses.append(trainer.reward_step(real, real_rewards[idx], fake))
                g_losses.append(trainer.generator_step(len(idx), lam))

            val = sample_graphs(
                trainer.theta,
                gen_spec,
                schedule.val_samples,
                seed=np.random.SeedSequence([schedule.seed, epoch]).generate_state(1)[0],
            ) if schedule.val_samples > 0 else []
            row = EpochLog(
                epoch=epoch,
                lam=lam,
                d_loss=float(np.mean(d_losses)),
                g_loss=float(np.mean(g_losses)),
                r_loss=float(np.mean(r_losses)) if r_losses else None,
                val_mean_degree=mean_degree_over_set(val) if val else float("nan"),
                val_pct_unique=percent_unique(val) if val else float("nan"),
                wall_seconds=time.perf_counter() - start,
            )
            result.log.append(row)
            if writer is not None:
                writer.writerow(row.row())
                log_file.flush()
            if on_epoch is not None:
                on_epoch(row)
            log.info(
                "epoch %d lambda=%.2f d=%.4f g=%.4f degree=%.3f unique=%.1f%%",
                epoch, lam, row.d_loss, row.g_loss, row.val_mean_degree, row.val_pct_unique,
            )

            if epoch + 1 == schedule.pretrain_epochs:
                result.pretrain = trainer.snapshot()
                if out is not None:
                    trainer.save(out / "pretrain.ckpt", epoch=epoch + 1)
            if out is not None and schedule.checkpoint_every and (epoch + 1) % schedule.checkpoint_every == 0:
                trainer.save(out / f"epoch{epoch + 1:04d}.ckpt", epoch=epoch + 1)
    finally:
        if writer is not None:
            log_file.close()

    result.generator, result.discriminator, result.reward = trainer.snapshot()
    if out is not None:
        trainer.save(out / "final.ckpt", epoch=schedule.total_epochs)
    return result
