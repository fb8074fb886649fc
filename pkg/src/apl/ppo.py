"""Clipped policy-gradient training of the joint attention + policy + value
parameters on environment rollouts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .attention import OUTPUT_DIM, AttentionParams, attend, attend_backward
from .env import ActivePoseEnv, score_attention_fn
from .nets import Adam, DenseNet, GaussianHead, TrainingDiverged, load_checkpoint, save_checkpoint

ACTION_DIM = 2
HIDDEN = 128


class ActorCritic:
    """Attention encoder/selector + Gaussian policy + value network.

    attention_mode "learned" runs the trainable attention module;
    "lowest-score" is the ablation switch that attends to the object with the
    lowest verification score and carries no attention gradients.
    """

    def __init__(self, state_dim: int, rng, attention_mode: str = "learned"):
        if attention_mode not in ("learned", "lowest-score"):
            raise ValueError(f"unknown attention mode {attention_mode!r}")
        self.state_dim = state_dim
        self.attention_mode = attention_mode
        self.attention = AttentionParams.init(rng)
        self.policy = DenseNet([state_dim, HIDDEN, ACTION_DIM], ["relu", "none"], rng)
        self.value = DenseNet([state_dim, HIDDEN, 1], ["relu", "none"], rng)
        self.head = GaussianHead(ACTION_DIM)

    def params(self):
        return (self.attention.params() + self.policy.params()
                + self.value.params() + [self.head.log_std])

    def attention_fn(self):
        if self.attention_mode == "lowest-score":
            return score_attention_fn
        return lambda features: attend(features, self.attention)

    def act(self, state, rng=None):
        """(action, log_prob, value); deterministic mean action when rng is None."""
        mean, _ = self.policy.forward(state)
        value, _ = self.value.forward(state)
        if rng is None:
            action = mean
        else:
            action = self.head.sample(mean, rng)
        return action, self.head.log_prob(mean, action), float(value[0])

    def save(self, path, step_count: int = 0):
        arch = {"state_dim": self.state_dim, "attention_mode": self.attention_mode}
        save_checkpoint(path, arch, step_count, self.params())

    @staticmethod
    def load(path) -> "ActorCritic":
        arch, _, params = load_checkpoint(path)
        ac = ActorCritic(arch["state_dim"], np.random.default_rng(0), arch["attention_mode"])
        for p, loaded in zip(ac.params(), params):
            p[...] = loaded
        return ac


@dataclass
class Trajectory:
    states: list = field(default_factory=list)  # full state vectors
    features: list = field(default_factory=list)  # (k,6) array or None per step
    actions: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    values: list = field(default_factory=list)
    bootstrap_value: float = 0.0

    def __len__(self):
        return len(self.actions)


@dataclass
class TrainConfig:
    gamma: float = 0.995
    lam: float = 0.95
    clip: float = 0.2
    lr: float = 1e-3
    minibatch_size: int = 128
    epochs: int = 4
    batch_steps: int = 640
    total_steps: int = 200_000
    value_coef: float = 0.5
    entropy_coef: float = 0.01
    eval_every_batches: int = 25
    seed: int = 0

    def __post_init__(self):
        if not (0 <= self.gamma <= 1 and 0 <= self.lam <= 1):
            raise ValueError("gamma and lam must be in [0,1]")
        if self.clip <= 0:
            raise ValueError("clip must be positive")


def _stored_features(env: ActivePoseEnv):
    if env.attention is None:
        return None
    return np.stack([f.vector for f in env.estimate.features])


def collect_rollouts(env_factory, ac: ActorCritic, n_steps: int, rng):
    """Whole episodes until at least n_steps environment steps are gathered."""
    from .env import DegenerateScene

    trajs = []
    steps = 0
    while steps < n_steps:
        env = env_factory()
        try:
            state = env.reset()
        except DegenerateScene:
            continue  # resample a scene
        traj = Trajectory()
        done = False
        while not done:
            feats = _stored_features(env)
            action, logp, value = ac.act(state, rng)
            result = env.step(action)
            traj.states.append(state)
            traj.features.append(feats)
            traj.actions.append(np.asarray(action, dtype=np.float64))
            traj.rewards.append(result.reward.r_total)
            traj.log_probs.append(logp)
            traj.values.append(value)
            state = result.state
            done = result.done
        traj.bootstrap_value = 0.0  # episodes terminate at the horizon
        trajs.append(traj)
        steps += len(traj)
    return trajs


def gae_advantages(traj: Trajectory, gamma: float, lam: float):
    """Generalized advantage estimates and returns for one trajectory."""
    n = len(traj)
    values = np.array(traj.values + [traj.bootstrap_value])
    rewards = np.array(traj.rewards)
    adv = np.zeros(n)
    acc = 0.0
    for t in reversed(range(n)):
        delta = rewards[t] + gamma * values[t + 1] - values[t]
        acc = delta + gamma * lam * acc
        adv[t] = acc
    return adv, adv + values[:-1]


def _forward_sample(ac: ActorCritic, state, feats):
    """Recompute state through the current attention parameters.

    Returns (state, mean, value, caches); caches is None-tagged for the
    ablation mode or empty detections, where no attention gradient exists.
    """
    learned = ac.attention_mode == "learned" and feats is not None
    if learned:
        att = attend(list(feats), ac.attention)
        state = state.copy()
        state[:OUTPUT_DIM] = att.o
    else:
        att = None
    mean, pcache = ac.policy.forward(state)
    value, vcache = ac.value.forward(state)
    return state, mean, float(value[0]), (att, pcache, vcache)


def ppo_update(trajs, ac: ActorCritic, optimizer: Adam, config: TrainConfig, rng):
    """Clipped-surrogate update over epochs x minibatches; returns loss stats."""
    samples = []
    for traj in trajs:
        adv, rets = gae_advantages(traj, config.gamma, config.lam)
        for t in range(len(traj)):
            samples.append((traj.states[t], traj.features[t], traj.actions[t],
                            traj.log_probs[t], adv[t], rets[t]))
    if not samples:
        raise ValueError("empty batch")
    advs = np.array([s[4] for s in samples])
    advs = (advs - advs.mean()) / (advs.std() + 1e-8)
    samples = [(s[0], s[1], s[2], s[3], a, s[5]) for s, a in zip(samples, advs)]

    params = ac.params()
    log_std_idx = len(params) - 1
    n_att = len(ac.attention.params())
    n_pol = len(ac.policy.params())
    n_val = len(ac.value.params())
    stats = {"policy_loss": 0.0, "value_loss": 0.0, "entropy": ac.head.entropy(),
             "clip_fraction": 0.0}
    n_updates = 0

    for _ in range(config.epochs):
        order = rng.permutation(len(samples))
        for start in range(0, len(samples), config.minibatch_size):
            mb = order[start:start + config.minibatch_size]
            grads = [np.zeros_like(p) for p in params]
            pol_loss = val_loss = clipped = 0.0
            for si in mb:
                state0, feats, action, logp_old, adv, ret = samples[si]
                state, mean, value, (att, pcache, vcache) = _forward_sample(ac, state0, feats)
                logp = ac.head.log_prob(mean, action)
                ratio = np.exp(logp - logp_old)
                surr = min(ratio * adv, np.clip(ratio, 1 - config.clip, 1 + config.clip) * adv)
                pol_loss += -surr
                active = not ((adv >= 0 and ratio > 1 + config.clip)
                              or (adv < 0 and ratio < 1 - config.clip))
                clipped += 0.0 if active else 1.0

                dstate = np.zeros_like(state)
                if active:
                    dmean, dlog_std = ac.head.log_prob_grads(mean, action)
                    scale = -ratio * adv  # d(-surr)/dlogp
                    pgrads, dstate_p = ac.policy.backward(pcache, scale * dmean)
                    for j, g in enumerate(pgrads):
                        grads[n_att + j] += g
                    grads[log_std_idx] += scale * dlog_std
                    dstate += dstate_p

                verr = value - ret
                val_loss += 0.5 * verr * verr
                vgrads, dstate_v = ac.value.backward(vcache, np.array([config.value_coef * verr]))
                for j, g in enumerate(vgrads):
                    grads[n_att + n_pol + j] += g
                dstate += dstate_v

                if att is not None:
                    agrads, _ = attend_backward(att, dstate[:OUTPUT_DIM], ac.attention)
                    for j, g in enumerate(agrads):
                        grads[j] += g

            # entropy bonus: d(-c_e * H)/dlog_std = -c_e
            grads[log_std_idx] -= config.entropy_coef * len(mb)
            for g in grads:
                g /= len(mb)
            optimizer.step(params, grads)
            pol_mean = pol_loss / len(mb)
            if not np.isfinite(pol_mean):
                raise TrainingDiverged("non-finite policy loss")
            stats["policy_loss"] += pol_mean
            stats["value_loss"] += val_loss / len(mb)
            stats["clip_fraction"] += clipped / len(mb)
            n_updates += 1

    for key in ("policy_loss", "value_loss", "clip_fraction"):
        stats[key] /= max(n_updates, 1)
    stats["entropy"] = ac.head.entropy()
    return stats


def train(env_factory, state_dim: int, config: TrainConfig,
          attention_mode: str = "learned", eval_callback=None,
          progress_callback=None):
    """Alternate rollout collection and PPO updates until total_steps.

    env_factory(ac) must build a fresh environment wired to the actor-critic's
    attention (so attention parameter updates are visible to rollouts).
    Returns (ActorCritic, curve); curve rows are dicts with step, mean return
    and loss statistics plus whatever eval_callback returns.
    """
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    ac = ActorCritic(state_dim, rng, attention_mode)
    optimizer = Adam(ac.params(), lr=config.lr)
    curve = []
    steps_done = 0
    batch_idx = 0
    while steps_done < config.total_steps:
        trajs = collect_rollouts(lambda: env_factory(ac), ac, config.batch_steps, rng)
        steps_done += sum(len(t) for t in trajs)
        stats = ppo_update(trajs, ac, optimizer, config, rng)
        row = {"step": steps_done,
               "mean_return": float(np.mean([sum(t.rewards) for t in trajs])),
               **stats}
        batch_idx += 1
        last = steps_done >= config.total_steps
        if eval_callback is not None and (batch_idx % config.eval_every_batches == 0 or last):
            row.update(eval_callback(ac, steps_done))
        curve.append(row)
        if progress_callback is not None:
            progress_callback(row)
    return ac, curve
