"""PPO (clipped surrogate, actor-critic style) with GAE, numpy only."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from hevtl import net
from hevtl import powertrain as pt
from hevtl.env import HevEnv, normalize, write_table
from hevtl.errors import ConfigError, GradientError, TrainingError

RATIO_LOG_CAP = 20.0


@dataclass(frozen=True)
class Hyperparams:
    gamma: float = 0.9
    lr: float = 0.01
    horizon_K: int = 512
    minibatch_Z: int = 64
    clip_eps: float = 0.2
    gae_lambda: float = 0.92
    c1: float = 0.5
    c2: float = 0.01
    n_actors_M: int = 4
    n_epochs: int = 10
    n_iterations: int = 300
    max_grad_norm: float = 0.5
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    normalize_advantages: bool = True
    lr_decay: bool = False  # linear decay to zero over n_iterations
    reward_scale: float = 1.0  # multiplies rewards before advantage estimation
    # every this many iterations the deterministic policy is scored on the
    # training cycles and the best-scoring iterate is returned; 0 disables
    select_every: int = 0

    def __post_init__(self):
        if isinstance(self.lr_decay, str):
            raise ConfigError("lr_decay must be a boolean")
        if not (0.0 <= self.gamma <= 1.0 and 0.0 <= self.gae_lambda <= 1.0):
            raise ConfigError("gamma and gae_lambda must lie in [0, 1]")
        if not self.clip_eps > 0:
            raise ConfigError("clip_eps must be positive")
        if not self.reward_scale > 0:
            raise ConfigError("reward_scale must be positive")
        if self.lr < 0 or self.c1 < 0 or self.c2 < 0:
            raise ConfigError("lr, c1, c2 must be non-negative")
        for name in ("horizon_K", "minibatch_Z", "n_actors_M", "n_epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1")
        if self.n_iterations < 0:
            raise ConfigError("n_iterations must be non-negative")
        if self.select_every < 0:
            raise ConfigError("select_every must be non-negative")
        if self.minibatch_Z > self.n_actors_M * self.horizon_K:
            raise ConfigError("minibatch_Z exceeds the number of collected transitions")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]

    def replace(self, **changes) -> "Hyperparams":
        return dataclasses.replace(self, **changes)


@dataclass
class RolloutBuffer:
    """Transitions laid out actor-major: actor 0's K steps, then actor 1's, ..."""

    obs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    log_probs: np.ndarray
    dones: np.ndarray
    n_actors: int
    bootstrap: np.ndarray  # V(s_K) per actor
    advantages: np.ndarray | None = None
    value_targets: np.ndarray | None = None

    def __len__(self):
        return self.rewards.size

    def segments(self):
        k = len(self) // self.n_actors
        for m in range(self.n_actors):
            yield m, slice(m * k, (m + 1) * k)


@dataclass
class Episode:
    iteration: int
    index: int
    actor: int
    cycle_id: str
    total_reward: float
    length: int


@dataclass
class TrainingLog:
    episodes: list = field(default_factory=list)
    updates: list = field(default_factory=list)  # per-iteration dicts
    ratio_start_error: list = field(default_factory=list)
    ratio_overflows: int = 0
    selection: list = field(default_factory=list)  # (iteration, mean deterministic reward)
    selected_iteration: int | None = None

    def episode_rewards(self) -> np.ndarray:
        return np.array([e.total_reward for e in self.episodes])

    def rows(self, include_timing: bool = False):
        """One row per episode, carrying the loss of the update that consumed it."""
        by_iter = {u["iteration"]: u for u in self.updates}
        for e in self.episodes:
            u = by_iter.get(e.iteration, {})
            yield {
                "iteration": e.iteration,
                "episode": e.index,
                "total_reward": e.total_reward,
                "loss": u.get("loss", float("nan")),
                "clip_loss": u.get("clip_loss", float("nan")),
                "value_loss": u.get("value_loss", float("nan")),
                "entropy": u.get("entropy", float("nan")),
                "wall_ms": u.get("wall_ms", "") if include_timing else "",
            }

    def to_csv(self, path, include_timing: bool = False) -> None:
        rows = list(self.rows(include_timing))
        cols = TRAINING_LOG_COLUMNS
        write_table(path, cols, [[r[c] for r in rows] for c in cols])


TRAINING_LOG_COLUMNS = ("iteration", "episode", "total_reward", "loss", "clip_loss",
                        "value_loss", "entropy", "wall_ms")


# -- advantage estimation --------------------------------------------------

def compute_gae(rewards, values, dones, gamma: float, gae_lambda: float, v_bootstrap: float):
    """Backward recursion for one actor's segment.

    ``dones[t]`` marks that the episode ended at step t, so step t
    bootstraps from zero and no later TD error leaks into it.
    Returns ``(advantages, value_targets)`` before any normalization.
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    n = rewards.size
    adv = np.zeros(n)
    running = 0.0
    for t in range(n - 1, -1, -1):
        if dones[t]:
            next_value, running = 0.0, 0.0
        else:
            next_value = v_bootstrap if t == n - 1 else values[t + 1]
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * gae_lambda * running
        adv[t] = running
    return adv, adv + values


def finish_buffer(buf: RolloutBuffer, gamma: float, gae_lambda: float, normalize_adv: bool = True,
                  reward_scale: float = 1.0):
    adv = np.empty(len(buf))
    targets = np.empty(len(buf))
    for m, sl in buf.segments():
        adv[sl], targets[sl] = compute_gae(reward_scale * buf.rewards[sl], buf.values[sl], buf.dones[sl],
                                           gamma, gae_lambda, float(buf.bootstrap[m]))
    if normalize_adv and adv.size > 1:
        adv = (adv - adv.mean()) / max(adv.std(), 1e-8)
    buf.advantages = adv
    buf.value_targets = targets
    return buf


# -- surrogate objective ---------------------------------------------------

def ppo_ratio(log_prob_new, log_prob_old, counter: dict | None = None):
    d = np.asarray(log_prob_new, dtype=float) - np.asarray(log_prob_old, dtype=float)
    over = d > RATIO_LOG_CAP
    if counter is not None:
        counter["overflow"] = counter.get("overflow", 0) + int(np.sum(over))
    out = np.exp(np.minimum(d, RATIO_LOG_CAP))
    return float(out) if out.ndim == 0 else out


def clipped_objective(ratio, advantage, clip_eps: float):
    r = np.asarray(ratio, dtype=float)
    a = np.asarray(advantage, dtype=float)
    out = np.minimum(r * a, np.clip(r, 1.0 - clip_eps, 1.0 + clip_eps) * a)
    return float(out) if out.ndim == 0 else out


@dataclass
class Minibatch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs_old: np.ndarray
    advantages: np.ndarray
    value_targets: np.ndarray

    @classmethod
    def take(cls, buf: RolloutBuffer, idx):
        return cls(buf.obs[idx], buf.actions[idx], buf.log_probs[idx],
                   buf.advantages[idx], buf.value_targets[idx])


def total_loss(params: net.PolicyParams, mb: Minibatch, hyper: Hyperparams,
               with_grad: bool = True, counter: dict | None = None):
    """Clipped surrogate minus value error plus entropy bonus, averaged over the batch.

    Returns ``(objective, components, grad)`` where ``grad`` is the gradient
    of the *negated* objective (what a descent optimizer consumes).
    """
    out = net.forward(params, mb.obs)
    n = mb.actions.size
    logp = net.action_log_prob(out.mean, out.log_std, mb.actions)
    ratio = ppo_ratio(logp, mb.log_probs_old, counter)
    adv = mb.advantages
    surr1 = ratio * adv
    surr2 = np.clip(ratio, 1.0 - hyper.clip_eps, 1.0 + hyper.clip_eps) * adv
    l_clip = np.minimum(surr1, surr2)
    verr = out.value - mb.value_targets
    entropy = net.gaussian_entropy(out.log_std)
    clip_term = float(np.mean(l_clip))
    value_term = float(np.mean(verr * verr))
    objective = clip_term - hyper.c1 * value_term + hyper.c2 * entropy
    comps = {"clip_loss": clip_term, "value_loss": value_term, "entropy": entropy,
             "objective": objective, "loss": -objective}
    if not math.isfinite(objective):
        err = TrainingError("non-finite loss")
        err.minibatch = mb
        raise err
    if not with_grad:
        return objective, comps, None

    active = (surr1 <= surr2) & (mb.log_probs_old + RATIO_LOG_CAP > logp)
    g_logp = np.where(active, -ratio * adv, 0.0) / n
    u, _ = net.unsquash(mb.actions)
    inv_var = math.exp(-2.0 * out.log_std)
    z2 = (u - out.mean) ** 2 * inv_var
    d_mean = g_logp * (u - out.mean) * inv_var
    d_log_std = float(np.sum(g_logp * (z2 - 1.0))) - hyper.c2
    d_value = 2.0 * hyper.c1 * verr / n
    grad = net.backward(params, mb.obs, d_mean, d_value, d_log_std)
    return objective, comps, grad


# -- optimizer -------------------------------------------------------------

class Adam:
    def __init__(self, size: int, hyper: Hyperparams):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.h = hyper
        self.lr = hyper.lr

    def step(self, theta, grad):
        h = self.h
        self.t += 1
        self.m = h.adam_beta1 * self.m + (1 - h.adam_beta1) * grad
        self.v = h.adam_beta2 * self.v + (1 - h.adam_beta2) * grad * grad
        m_hat = self.m / (1 - h.adam_beta1 ** self.t)
        v_hat = self.v / (1 - h.adam_beta2 ** self.t)
        return theta - self.lr * m_hat / (np.sqrt(v_hat) + h.adam_eps)


def clip_grad_norm(grad, max_norm: float):
    norm = float(np.linalg.norm(grad))
    if max_norm > 0 and norm > max_norm:
        return grad * (max_norm / norm), norm
    return grad, norm


# -- rollout collection ----------------------------------------------------

class Collector:
    """M lock-stepped environments that persist across iterations.

    Actor m starts on source cycle m (mod n) and moves to the next cycle in
    the list whenever its episode ends. Each actor owns its random stream.
    """

    def __init__(self, cycles, n_actors: int, seed: int, params: pt.PowertrainParams | None = None,
                 soc0: float | None = None):
        if not cycles:
            raise ConfigError("need at least one source cycle")
        self.cycles = list(cycles)
        self.params = params or pt.PowertrainParams()
        self.soc0 = self.params.soc_ref if soc0 is None else soc0
        self.envs = [HevEnv(self.params) for _ in range(n_actors)]
        self.rngs = [np.random.default_rng([seed, 7919, m]) for m in range(n_actors)]
        self.cycle_idx = [m % len(self.cycles) for m in range(n_actors)]
        self.obs = [env.reset(self.cycles[i], self.soc0) for env, i in zip(self.envs, self.cycle_idx)]
        self.ep_reward = [0.0] * n_actors
        self.ep_len = [0] * n_actors
        self.episodes_done = 0

    def collect(self, policy: net.PolicyParams, horizon: int, iteration: int, log: TrainingLog):
        n_act = len(self.envs)
        obs_buf = np.empty((n_act, horizon, 3))
        act = np.empty((n_act, horizon))
        rew = np.empty((n_act, horizon))
        val = np.empty((n_act, horizon))
        logp = np.empty((n_act, horizon))
        done = np.zeros((n_act, horizon), dtype=bool)
        for k in range(horizon):
            x = normalize([[o.v, o.a, o.soc] for o in self.obs])
            out = net.forward(policy, x)
            obs_buf[:, k] = x
            val[:, k] = out.value
            for m, env in enumerate(self.envs):
                single = net.PolicyOutput(out.mean[m:m + 1], out.log_std, out.value[m:m + 1])
                a, lp = net.sample_action(single, self.rngs[m])
                try:
                    res = env.step(float(a[0]))
                except Exception as exc:
                    raise type(exc)(f"actor {m}: {exc}") from exc
                act[m, k], logp[m, k], rew[m, k] = a[0], lp[0], res.reward
                self.ep_reward[m] += res.reward
                self.ep_len[m] += 1
                if res.done:
                    done[m, k] = True
                    cyc = self.cycles[self.cycle_idx[m]]
                    self.episodes_done += 1
                    log.episodes.append(Episode(iteration, self.episodes_done, m, cyc.id,
                                                self.ep_reward[m], self.ep_len[m]))
                    self.ep_reward[m], self.ep_len[m] = 0.0, 0
                    self.cycle_idx[m] = (self.cycle_idx[m] + 1) % len(self.cycles)
                    self.obs[m] = env.reset(self.cycles[self.cycle_idx[m]], self.soc0)
                else:
                    self.obs[m] = res.obs
        x = normalize([[o.v, o.a, o.soc] for o in self.obs])
        boot = net.forward(policy, x).value
        return RolloutBuffer(
            obs=obs_buf.reshape(-1, 3), actions=act.ravel(), rewards=rew.ravel(),
            values=val.ravel(), log_probs=logp.ravel(), dones=done.ravel(),
            n_actors=n_act, bootstrap=np.asarray(boot, dtype=float),
        )


def collect_rollouts(params_old: net.PolicyParams, cycles, n_actors: int, horizon: int, seed: int,
                     powertrain: pt.PowertrainParams | None = None, log: TrainingLog | None = None):
    """One-shot collection from freshly reset environments."""
    col = Collector(cycles, n_actors, seed, powertrain)
    return col.collect(params_old, horizon, 1, log if log is not None else TrainingLog())


# -- training loop ---------------------------------------------------------

def train(hyper: Hyperparams, source_cycles, init: net.PolicyParams, seed: int = 0,
          powertrain: pt.PowertrainParams | None = None, episode_budget: int | None = None,
          soc0: float | None = None, callback=None):
    """Collect -> GAE -> epochs of shuffled minibatch updates -> refresh the old policy.

    Runs ``hyper.n_iterations`` iterations, or, when ``episode_budget`` is
    given, as many as needed to complete that many episodes (the log is then
    truncated to exactly the budget).

    With ``hyper.select_every > 0`` the returned parameters are the scored
    iterate with the highest mean deterministic reward over the training
    cycles (the final iterate is always scored). Only training cycles are
    used, so no information about held-out targets leaks into the choice.
    """
    log = TrainingLog()
    params = init
    if hyper.n_iterations == 0 and not episode_budget:
        return params, log
    col = Collector(source_cycles, hyper.n_actors_M, seed, powertrain, soc0)
    rng = np.random.default_rng([seed, 104729])
    opt = Adam(params.vector.size, hyper)
    counter = {}
    iteration = 0
    best = None
    while True:
        if episode_budget is None:
            if iteration >= hyper.n_iterations:
                break
        elif col.episodes_done >= episode_budget:
            break
        iteration += 1
        if hyper.lr_decay and hyper.n_iterations > 0:
            opt.lr = hyper.lr * max(0.0, 1.0 - (iteration - 1) / hyper.n_iterations)
        t0 = time.perf_counter()
        buf = col.collect(params, hyper.horizon_K, iteration, log)
        finish_buffer(buf, hyper.gamma, hyper.gae_lambda, hyper.normalize_advantages,
                      hyper.reward_scale)
        params, stats = _update(params, buf, hyper, rng, opt, counter, log)
        stats["iteration"] = iteration
        stats["wall_ms"] = round(1000.0 * (time.perf_counter() - t0), 3)
        log.updates.append(stats)
        if callback is not None:
            callback(iteration, params, log)
        if hyper.select_every and iteration % hyper.select_every == 0:
            best = _score(params, iteration, source_cycles, powertrain, soc0, log, best)
    if hyper.select_every and iteration and (not log.selection or log.selection[-1][0] != iteration):
        best = _score(params, iteration, source_cycles, powertrain, soc0, log, best)
    if best is not None:
        log.selected_iteration, params = best[1], best[2]
    if episode_budget is not None:
        log.episodes = log.episodes[:episode_budget]
    log.ratio_overflows = counter.get("overflow", 0)
    return params, log


def _score(params, iteration, cycles, powertrain, soc0, log, best):
    score = float(np.mean([evaluate(params, c, powertrain, soc0)[1] for c in cycles]))
    log.selection.append((iteration, score))
    if best is None or score > best[0]:
        return (score, iteration, params)
    return best


def _update(params, buf, hyper, rng, opt, counter, log):
    n = len(buf)
    sums = {"loss": 0.0, "clip_loss": 0.0, "value_loss": 0.0, "entropy": 0.0}
    count = 0
    theta = params.vector.copy()
    last_good = params
    for epoch in range(hyper.n_epochs):
        perm = rng.permutation(n)
        for start in range(0, n - hyper.minibatch_Z + 1, hyper.minibatch_Z):
            idx = perm[start:start + hyper.minibatch_Z]
            mb = Minibatch.take(buf, idx)
            if epoch == 0 and start == 0:
                lp, _ = net.log_prob_and_entropy(params, mb.obs, mb.actions)
                log.ratio_start_error.append(float(np.max(np.abs(np.exp(lp - mb.log_probs_old) - 1.0))))
            try:
                _, comps, grad = total_loss(params, mb, hyper, counter=counter)
            except GradientError as exc:
                err = TrainingError(str(exc))
                err.last_good = last_good
                raise err from exc
            grad, _ = clip_grad_norm(grad, hyper.max_grad_norm)
            theta = opt.step(theta, grad)
            if not np.all(np.isfinite(theta)):
                err = TrainingError("non-finite parameters after update")
                err.last_good = last_good
                raise err
            last_good = params
            params = params.with_vector(theta)
            for k in sums:
                sums[k] += comps[k]
            count += 1
    return params, {k: v / max(count, 1) for k, v in sums.items()}


def evaluate(params: net.PolicyParams, cycle, powertrain: pt.PowertrainParams | None = None,
             soc0: float | None = None):
    """Deterministic (mean-action) rollout; returns ``(trajectory, total_reward)``."""
    from hevtl.env import rollout

    def policy(obs, rng):
        out = net.forward(params, obs.normalized())
        return float(net.deterministic_action(out)[0])

    traj, total, _ = rollout(policy, cycle, soc0, 0, powertrain)
    return traj, total
