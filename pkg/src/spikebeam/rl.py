"""Clipped actor-critic training over the V2X environment.

The actor is a diagonal Gaussian over a raw action vector ``u`` of length
``2K - 1``: K angle pre-activations followed by K - 1 power logits (the K-th
logit is pinned at zero so the power split is a bijection onto the simplex).
Decoding squashes angles with ``pi * sigmoid(u)`` and powers with a softmax
scaled to ``fill * P_max``; log-probabilities include both Jacobians.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .channel import BeamAction
from .config import ScenarioConfig, dbm_to_watt
from .energy import EnergyLedger, PassEvent, ledger_accumulate
from .env import V2XEnv
from .snn import DenseNetwork, LifParams, SpikingNetwork, firing_rates

log = logging.getLogger(__name__)

_LOG_2PI = math.log(2.0 * math.pi)
_ANGLE_EPS = 1e-9
_POWER_FLOOR = 1e-300


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    gamma: float = 0.99
    clip_eps: float = 0.2
    actor_lr: float = 5e-5
    critic_lr: float = 5e-4
    batch_size: int = 512
    minibatch_size: int = 64
    epochs: int = 10
    gae_lambda: float = 0.95
    entropy_coef: float = 0.01
    max_grad_norm: float = 0.5
    iterations: int = 200
    seed: int = 0
    hidden: tuple[int, ...] = (128, 128)
    init_gain: float = 5.0
    init_log_std: float = -0.5
    power_fill: float = 1.0
    reward_scale: float = 0.01
    normalize_advantages: bool = True
    lif: LifParams = field(default_factory=LifParams)

    def __post_init__(self) -> None:
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.gae_lambda <= 1:
            raise ValueError("gae_lambda must lie in (0, 1]")
        if not self.clip_eps > 0:
            raise ValueError("clip_eps must be > 0")
        if not 0 < self.power_fill <= 1:
            raise ValueError("power_fill must lie in (0, 1]")
        for name in ("batch_size", "minibatch_size", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d


# ----------------------------------------------------------------------------
# numerics

def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def gaussian_log_prob(raw: np.ndarray, mean: np.ndarray, log_std: np.ndarray) -> np.ndarray:
    z = (raw - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std) - 0.5 * raw.shape[-1] * _LOG_2PI


class Adam:
    """Adaptive-moment optimiser updating a list of arrays in place."""

    def __init__(self, params: Sequence[np.ndarray], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_grad_norm(grads: list[np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads:
            g *= scale
    return norm


# ----------------------------------------------------------------------------
# policies

def build_network(kind: str, dims: Sequence[int], tcfg: TrainConfig, rng: np.random.Generator):
    if kind == "spiking":
        return SpikingNetwork(dims, tcfg.lif, rng=rng, init_gain=tcfg.init_gain)
    if kind == "dense":
        return DenseNetwork(dims, rng=rng)
    raise ValueError(f"unknown backend {kind!r}")


def _forward(net, x):
    """Forward pass plus the measured per-layer firing rates (empty for dense nets)."""
    out, trace = net.forward(x)
    rates = firing_rates(trace) if net.kind == "spiking" else np.zeros(0)
    return out, trace, rates


class GaussianPolicy:
    """Squashed diagonal-Gaussian actor on top of a spiking or dense backbone."""

    def __init__(self, net, scenario: ScenarioConfig, init_log_std: float = -0.5, power_fill: float = 1.0):
        k = scenario.num_vehicles
        if net.layer_dims[0] != scenario.obs_dim or net.layer_dims[-1] != 2 * k - 1:
            raise ValueError(f"network dims {net.layer_dims} do not fit K={k}")
        self.net = net
        self.num_vehicles = k
        self.max_power = scenario.max_power
        self.power_fill = power_fill
        self.log_std = np.full(2 * k - 1, float(init_log_std))
        self.last_rates = np.zeros(0)

    @property
    def action_dim(self) -> int:
        return 2 * self.num_vehicles - 1

    @property
    def params(self) -> list[np.ndarray]:
        return self.net.params + [self.log_std]

    @property
    def budget(self) -> float:
        return self.max_power * self.power_fill

    def with_max_power(self, max_power: float) -> "GaussianPolicy":
        """Same weights, different power budget (for P_max sweeps)."""
        clone = object.__new__(GaussianPolicy)
        clone.__dict__.update(self.__dict__)
        clone.max_power = max_power
        return clone

    def decode_batch(self, raw: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Angles and powers, each (n, K), for a batch of raw vectors."""
        raw = np.atleast_2d(np.asarray(raw, dtype=float))
        k = self.num_vehicles
        angles = np.clip(np.pi * _sigmoid(raw[:, :k]), _ANGLE_EPS, np.pi - _ANGLE_EPS)
        logits = np.concatenate([raw[:, k:], np.zeros((raw.shape[0], 1))], axis=1)
        # the floor keeps every share strictly positive when a logit gap underflows exp
        weights = np.maximum(np.exp(_log_softmax(logits)), _POWER_FLOOR)
        return angles, self.budget * weights

    def decode(self, raw: np.ndarray) -> BeamAction:
        angles, powers = self.decode_batch(raw)
        return BeamAction(angles[0], powers[0])

    def squash_log_det(self, raw: np.ndarray) -> np.ndarray:
        """log |d action / d raw| for a batch of raw vectors (angles + K-1 powers)."""
        raw = np.atleast_2d(raw)
        k = self.num_vehicles
        u = raw[:, :k]
        # log(pi * s * (1 - s)) with s = sigmoid(u)
        ang = np.sum(math.log(math.pi) - _softplus(-u) - _softplus(u), axis=1)
        logits = np.concatenate([raw[:, k:], np.zeros((raw.shape[0], 1))], axis=1)
        power = np.sum(_log_softmax(logits), axis=1) + (k - 1) * math.log(self.budget)
        return ang + power

    def log_prob(self, raw: np.ndarray, mean: np.ndarray) -> np.ndarray:
        """Density of the decoded action (angles, first K-1 powers) in W/rad units."""
        raw = np.atleast_2d(raw)
        return gaussian_log_prob(raw, np.atleast_2d(mean), self.log_std) - self.squash_log_det(raw)

    def entropy(self) -> float:
        """Entropy of the pre-squash Gaussian."""
        return float(np.sum(self.log_std) + 0.5 * self.action_dim * (1.0 + _LOG_2PI))

    def act(self, obs: np.ndarray, rng: np.random.Generator | None = None,
            deterministic: bool = False) -> tuple[BeamAction, float, np.ndarray]:
        mean, _, self.last_rates = _forward(self.net, obs)
        mean = mean[0]
        if deterministic or rng is None:
            raw = mean.copy()
        else:
            raw = mean + np.exp(self.log_std) * rng.standard_normal(self.action_dim)
        return self.decode(raw), float(self.log_prob(raw, mean)[0]), raw


class RandomPolicy:
    """Uniform beam angles and a uniform random split of the power budget."""

    net = None

    def __init__(self, scenario: ScenarioConfig, power_fill: float = 1.0, seed: int = 0):
        self.num_vehicles = scenario.num_vehicles
        self.max_power = scenario.max_power
        self.power_fill = power_fill
        self.rng = np.random.default_rng(seed)
        self.last_rates = np.zeros(0)

    def with_max_power(self, max_power: float) -> "RandomPolicy":
        clone = object.__new__(RandomPolicy)
        clone.__dict__.update(self.__dict__)
        clone.max_power = max_power
        return clone

    def act(self, obs, rng=None, deterministic=False):
        k = self.num_vehicles
        angles = self.rng.uniform(_ANGLE_EPS, np.pi - _ANGLE_EPS, size=k)
        split = self.rng.dirichlet(np.ones(k))
        split = np.maximum(split, 1e-12)
        split /= split.sum()
        return BeamAction(angles, self.max_power * self.power_fill * split), 0.0, np.concatenate([angles, split])


class AlignedPolicy:
    """Points each beam at the estimated angle and splits power equally."""

    net = None

    def __init__(self, scenario: ScenarioConfig, power_fill: float = 1.0):
        self.num_vehicles = scenario.num_vehicles
        self.max_power = scenario.max_power
        self.power_fill = power_fill
        self.last_rates = np.zeros(0)

    def with_max_power(self, max_power: float) -> "AlignedPolicy":
        clone = object.__new__(AlignedPolicy)
        clone.__dict__.update(self.__dict__)
        clone.max_power = max_power
        return clone

    def act(self, obs, rng=None, deterministic=True):
        k = self.num_vehicles
        est_angle = (np.asarray(obs, dtype=float).reshape(k, 4)[:, 0] + 1.0) * np.pi / 2.0
        angles = np.clip(est_angle, _ANGLE_EPS, np.pi - _ANGLE_EPS)
        powers = np.full(k, self.max_power * self.power_fill / k)
        return BeamAction(angles, powers), 0.0, angles.copy()


class ValueHead:
    def __init__(self, net):
        if net.layer_dims[-1] != 1:
            raise ValueError("value network must have a single output")
        self.net = net
        self.last_rates = np.zeros(0)

    @property
    def params(self) -> list[np.ndarray]:
        return self.net.params

    def __call__(self, obs: np.ndarray) -> np.ndarray:
        out, _, self.last_rates = _forward(self.net, obs)
        return out[:, 0]


# ----------------------------------------------------------------------------
# advantages and losses

def compute_advantages(rewards: np.ndarray, values: np.ndarray, dones: np.ndarray, last_value: float,
                       gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalised advantage estimates and returns (``advantages + values``).

    ``dones[t]`` marks that step t ended an episode, so nothing is bootstrapped
    across it. ``last_value`` is V of the state following the final step.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=float)
    n = len(rewards)
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        next_value = last_value if t == n - 1 else values[t + 1]
        mask = 1.0 - dones[t]
        delta = rewards[t] + gamma * next_value * mask - values[t]
        running = delta + gamma * lam * mask * running
        adv[t] = running
    return adv, adv + values


def clipped_objective(ratio, adv, eps: float) -> np.ndarray:
    """Per-sample ``min(ratio * A, (1 +/- eps) * A)``."""
    ratio = np.asarray(ratio, dtype=float)
    adv = np.asarray(adv, dtype=float)
    bound = np.where(adv >= 0, (1.0 + eps) * adv, (1.0 - eps) * adv)
    return np.minimum(ratio * adv, bound)


def clipped_policy_loss(log_prob_new, log_prob_old, adv, eps: float, entropy: float = 0.0,
                        entropy_coef: float = 0.0) -> tuple[float, np.ndarray]:
    """Negative mean clipped objective minus the entropy bonus.

    Returns the loss and its gradient with respect to ``log_prob_new``.
    """
    log_prob_new = np.asarray(log_prob_new, dtype=float)
    adv = np.asarray(adv, dtype=float)
    ratio = np.exp(log_prob_new - np.asarray(log_prob_old, dtype=float))
    surrogate = ratio * adv
    bound = np.where(adv >= 0, (1.0 + eps) * adv, (1.0 - eps) * adv)
    objective = np.minimum(surrogate, bound)
    active = surrogate <= bound
    n = max(len(objective), 1)
    loss = -float(objective.mean()) - entropy_coef * entropy
    grad = np.where(active, -surrogate / n, 0.0)
    return loss, grad


def value_loss(values, returns) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to ``values``."""
    diff = np.asarray(values, dtype=float) - np.asarray(returns, dtype=float)
    return float(np.mean(diff * diff)), 2.0 * diff / max(diff.size, 1)


class RolloutBuffer:
    """Fixed-capacity on-policy storage; may span episode boundaries."""

    def __init__(self, capacity: int, obs_dim: int, act_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.raw = np.zeros((capacity, act_dim))
        self.log_prob = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.values = np.zeros(capacity)
        self.dones = np.zeros(capacity)
        self.advantages = np.zeros(capacity)
        self.returns = np.zeros(capacity)
        self.size = 0

    @property
    def full(self) -> bool:
        return self.size >= self.capacity

    def add(self, obs, raw, log_prob, reward, value, done) -> None:
        if self.full:
            raise IndexError("rollout buffer is full")
        i = self.size
        self.obs[i] = obs
        self.raw[i] = raw
        self.log_prob[i] = log_prob
        self.rewards[i] = reward
        self.values[i] = value
        self.dones[i] = float(done)
        self.size += 1

    def finish(self, last_value: float, gamma: float, lam: float) -> None:
        n = self.size
        self.advantages[:n], self.returns[:n] = compute_advantages(
            self.rewards[:n], self.values[:n], self.dones[:n], last_value, gamma, lam)

    def clear(self) -> None:
        self.size = 0


# ----------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    policy: object
    critic: ValueHead | None
    metrics: list[dict]
    ledger: EnergyLedger
    backend: str


def _record_pass(ledger: EnergyLedger, net, count: int, rates: np.ndarray, phase: str,
                 backward: bool = False) -> None:
    if net is None:
        return
    ledger_accumulate(ledger, PassEvent(
        phase=phase, network=net.kind, layer_dims=net.layer_dims, count=count,
        firing_rates=tuple(float(r) for r in rates), steps=getattr(getattr(net, "lif", None), "steps", 1),
        backward=backward))


def make_agent(scenario: ScenarioConfig, tcfg: TrainConfig, backend: str):
    """Untrained actor and critic for ``backend`` ('spiking', 'dense' or 'random')."""
    if backend == "random":
        return RandomPolicy(scenario, tcfg.power_fill, seed=tcfg.seed), None
    rng = np.random.default_rng(tcfg.seed)
    k = scenario.num_vehicles
    actor_net = build_network(backend, (scenario.obs_dim, *tcfg.hidden, 2 * k - 1), tcfg, rng)
    critic_net = build_network(backend, (scenario.obs_dim, *tcfg.hidden, 1), tcfg, rng)
    return GaussianPolicy(actor_net, scenario, tcfg.init_log_std, tcfg.power_fill), ValueHead(critic_net)


def _update_actor(policy: GaussianPolicy, opt: Adam, obs, raw, logp_old, adv, tcfg: TrainConfig,
                  ledger: EnergyLedger) -> tuple[float, np.ndarray]:
    mean, trace, rates = _forward(policy.net, obs)
    std = np.exp(policy.log_std)
    logp_new = policy.log_prob(raw, mean)
    loss, g_logp = clipped_policy_loss(logp_new, logp_old, adv, tcfg.clip_eps,
                                       policy.entropy(), tcfg.entropy_coef)
    z = (raw - mean) / std
    g_mean = g_logp[:, None] * z / std
    g_log_std = np.sum(g_logp[:, None] * (z * z - 1.0), axis=0) - tcfg.entropy_coef
    grads = policy.net.backward(trace, g_mean) + [g_log_std]
    clip_grad_norm(grads, tcfg.max_grad_norm)
    opt.step(grads)
    n = len(obs)
    _record_pass(ledger, policy.net, n, rates, "training")
    _record_pass(ledger, policy.net, n, rates, "training", backward=True)
    return loss, rates


def _update_critic(critic: ValueHead, opt: Adam, obs, returns, tcfg: TrainConfig,
                   ledger: EnergyLedger) -> float:
    out, trace, rates = _forward(critic.net, obs)
    loss, g = value_loss(out[:, 0], returns)
    grads = critic.net.backward(trace, g[:, None])
    clip_grad_norm(grads, tcfg.max_grad_norm)
    opt.step(grads)
    n = len(obs)
    _record_pass(ledger, critic.net, n, rates, "training")
    _record_pass(ledger, critic.net, n, rates, "training", backward=True)
    return loss


METRIC_COLUMNS = ("iteration", "env_steps", "episodes", "mean_reward", "mean_sum_rate",
                  "constraint_rate", "policy_loss", "value_loss", "actor_rate_l1", "actor_rate_l2",
                  "critic_rate_l1", "critic_rate_l2", "train_energy_pj", "train_baseline_pj")


def train(tcfg: TrainConfig, scenario: ScenarioConfig, backend: str = "spiking",
          callback: Callable[[dict], None] | None = None) -> TrainResult:
    """Collect ``batch_size`` steps, estimate advantages, run clipped updates; repeat.

    ``mean_reward`` is the mean undiscounted return of the episodes finished in
    that iteration. With ``backend='random'`` no update is made.
    """
    policy, critic = make_agent(scenario, tcfg, backend)
    ledger = EnergyLedger()
    env = V2XEnv(scenario.replace(rng_seed=tcfg.seed))
    act_rng = np.random.default_rng([tcfg.seed, 1])
    shuffle_rng = np.random.default_rng([tcfg.seed, 2])
    obs_dim = scenario.obs_dim
    buffer = RolloutBuffer(tcfg.batch_size, obs_dim, 2 * scenario.num_vehicles - 1)
    actor_opt = Adam(policy.params, tcfg.actor_lr) if critic is not None else None
    critic_opt = Adam(critic.params, tcfg.critic_lr) if critic is not None else None

    obs = env.reset().normalized(scenario)
    ep_return = 0.0
    metrics = []
    for it in range(tcfg.iterations):
        finished, sum_rates, satisfied = [], [], 0
        actor_rates, critic_rates = [], []
        buffer.clear()
        while not buffer.full:
            action, logp, raw = policy.act(obs, act_rng)
            value = float(critic(obs)[0]) if critic is not None else 0.0
            _record_pass(ledger, policy.net, 1, policy.last_rates, "training")
            if critic is not None:
                _record_pass(ledger, critic.net, 1, critic.last_rates, "training")
                actor_rates.append(policy.last_rates)
                critic_rates.append(critic.last_rates)
            out = env.step(action)
            if not np.isfinite(out.reward):
                raise TrainingDiverged(f"non-finite reward at iteration {it}")
            buffer.add(obs, raw[: buffer.raw.shape[1]] if critic is not None else np.zeros(buffer.raw.shape[1]),
                       logp, out.reward * tcfg.reward_scale, value, out.done)
            ep_return += out.reward
            sum_rates.append(out.diagnostics.sum_rate)
            satisfied += out.diagnostics.constraints_satisfied
            if out.done:
                finished.append(ep_return)
                ep_return = 0.0
                obs = env.reset().normalized(scenario)
            else:
                obs = out.observation.normalized(scenario)

        p_loss = v_loss = float("nan")
        if critic is not None:
            last_value = 0.0 if buffer.dones[buffer.size - 1] else float(critic(obs)[0])
            _record_pass(ledger, critic.net, 1, critic.last_rates, "training")
            buffer.finish(last_value, tcfg.gamma, tcfg.gae_lambda)
            n = buffer.size
            adv = buffer.advantages[:n].copy()
            if tcfg.normalize_advantages:
                adv = (adv - adv.mean()) / (adv.std() + 1e-8)
            p_losses, v_losses = [], []
            for _ in range(tcfg.epochs):
                order = shuffle_rng.permutation(n)
                for start in range(0, n, tcfg.minibatch_size):
                    idx = order[start:start + tcfg.minibatch_size]
                    pl, _ = _update_actor(policy, actor_opt, buffer.obs[idx], buffer.raw[idx],
                                          buffer.log_prob[idx], adv[idx], tcfg, ledger)
                    vl = _update_critic(critic, critic_opt, buffer.obs[idx], buffer.returns[idx], tcfg, ledger)
                    p_losses.append(pl)
                    v_losses.append(vl)
            p_loss, v_loss = float(np.mean(p_losses)), float(np.mean(v_losses))
            if not (math.isfinite(p_loss) and math.isfinite(v_loss)) or not all(
                    np.all(np.isfinite(p)) for p in policy.params + critic.params):
                raise TrainingDiverged(f"non-finite loss at iteration {it}")

        a_rates = np.mean(actor_rates, axis=0) if actor_rates and len(actor_rates[0]) else np.zeros(2)
        c_rates = np.mean(critic_rates, axis=0) if critic_rates and len(critic_rates[0]) else np.zeros(2)
        a_rates = np.resize(a_rates, 2) if a_rates.size else np.zeros(2)
        c_rates = np.resize(c_rates, 2) if c_rates.size else np.zeros(2)
        tot = ledger.phase("training")
        row = {
            "iteration": it,
            "env_steps": (it + 1) * tcfg.batch_size,
            "episodes": len(finished),
            "mean_reward": float(np.mean(finished)) if finished else float("nan"),
            "mean_sum_rate": float(np.mean(sum_rates)),
            "constraint_rate": satisfied / len(sum_rates),
            "policy_loss": p_loss,
            "value_loss": v_loss,
            "actor_rate_l1": float(a_rates[0]),
            "actor_rate_l2": float(a_rates[1]),
            "critic_rate_l1": float(c_rates[0]),
            "critic_rate_l2": float(c_rates[1]),
            "train_energy_pj": tot.energy_pj,
            "train_baseline_pj": tot.baseline_pj,
        }
        metrics.append(row)
        log.debug("iter %d reward %.3f sum-rate %.3f", it, row["mean_reward"], row["mean_sum_rate"])
        if callback is not None:
            callback(row)
    return TrainResult(policy, critic, metrics, ledger, backend)


# ----------------------------------------------------------------------------
# evaluation

@dataclass
class EvalReport:
    sum_rate_per_slot: np.ndarray
    reward_per_slot: np.ndarray
    crlb_theta_per_slot: np.ndarray
    crlb_d_per_slot: np.ndarray
    episode_rewards: np.ndarray
    episode_sum_rates: np.ndarray
    constraint_rate: float
    firing_rates: np.ndarray
    max_power: float

    @property
    def mean_sum_rate(self) -> float:
        return float(self.episode_sum_rates.mean())

    @property
    def mean_episode_reward(self) -> float:
        return float(self.episode_rewards.mean())

    @property
    def sem_sum_rate(self) -> float:
        n = len(self.episode_sum_rates)
        return float(self.episode_sum_rates.std(ddof=1) / math.sqrt(n)) if n > 1 else float("nan")


def episode_seeds(seed: int, n_episodes: int) -> list[int]:
    return [int(s) for s in np.random.SeedSequence(seed).generate_state(n_episodes)]


def evaluate(policy, scenario: ScenarioConfig, n_episodes: int = 10, seed: int = 0,
             deterministic: bool = True, ledger: EnergyLedger | None = None,
             record: list | None = None) -> EvalReport:
    """Roll out ``n_episodes`` full episodes and average per slot.

    Episode seeds depend only on ``seed``, so different policies face the same
    vehicle trajectories. Pass ``record`` to collect trajectory-log rows.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    N = scenario.horizon
    rates = np.zeros((n_episodes, N))
    rewards = np.zeros((n_episodes, N))
    crlb_th = np.zeros((n_episodes, N))
    crlb_d = np.zeros((n_episodes, N))
    ok = 0
    act_rng = np.random.default_rng([seed, 7])
    net = getattr(policy, "net", None)
    rate_acc = []
    env = V2XEnv(scenario, record=record is not None)
    for e, ep_seed in enumerate(episode_seeds(seed, n_episodes)):
        obs = env.reset(seed=ep_seed)
        for n in range(N):
            action, _, _ = policy.act(obs.normalized(scenario), act_rng, deterministic=deterministic)
            if net is not None:
                rate_acc.append(policy.last_rates)
                if ledger is not None:
                    _record_pass(ledger, net, 1, policy.last_rates, "inference")
            out = env.step(action)
            d = out.diagnostics
            rates[e, n] = d.sum_rate
            rewards[e, n] = out.reward
            crlb_th[e, n] = np.mean(d.crlb_theta)
            crlb_d[e, n] = np.mean(d.crlb_d)
            ok += d.constraints_satisfied
            if record is not None:
                record.extend((e,) + row for row in out.rows)
            obs = out.observation
    fr = np.mean(rate_acc, axis=0) if rate_acc and len(rate_acc[0]) else np.zeros(0)
    return EvalReport(rates.mean(axis=0), rewards.mean(axis=0), crlb_th.mean(axis=0), crlb_d.mean(axis=0),
                      rewards.sum(axis=1), rates.mean(axis=1), ok / (n_episodes * N), fr, scenario.max_power)


def power_sweep(policy, scenario: ScenarioConfig, dbm_values: Sequence[float], n_episodes: int = 10,
                seed: int = 0, deterministic: bool = True) -> list[tuple[float, EvalReport]]:
    """Re-run :func:`evaluate` with the power budget set to each value (dBm)."""
    out = []
    for dbm in dbm_values:
        p_max = dbm_to_watt(float(dbm))
        scen = scenario.replace(max_power=p_max)
        out.append((float(dbm), evaluate(policy.with_max_power(p_max), scen, n_episodes, seed, deterministic)))
    return out
