"""Policy optimization from scratch: tanh MLPs with hand-written
reverse-mode gradients, generalized advantage estimation and
clipped-surrogate updates with Adam.

The policy is a diagonal Gaussian with state-independent learned log-stds;
policy and value networks share no parameters. Everything is numpy and
fully seeded.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np


class ShapeMismatch(ValueError):
    pass


class NonFiniteLoss(RuntimeError):
    """A PPO update produced NaN/Inf; the step is discarded."""


# ---------------------------------------------------------------------------
# networks


@dataclass
class Mlp:
    """Fully connected tanh stack with a linear output layer."""

    weights: list
    biases: list

    @classmethod
    def create(cls, sizes, rng: np.random.Generator, out_scale: float = 1.0) -> "Mlp":
        ws, bs = [], []
        for i in range(len(sizes) - 1):
            fan_in = sizes[i]
            w = rng.normal(0.0, 1.0 / math.sqrt(fan_in), (sizes[i], sizes[i + 1]))
            if i == len(sizes) - 2:
                w *= out_scale
            ws.append(w)
            bs.append(np.zeros(sizes[i + 1]))
        return cls(ws, bs)

    @property
    def sizes(self):
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def parameters(self):
        return self.weights + self.biases

    def forward(self, x: np.ndarray):
        """Returns (output, cache) for a (batch, in_dim) input."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.weights[0].shape[0]:
            raise ShapeMismatch(
                f"input dim {x.shape[1]} != {self.weights[0].shape[0]}"
            )
        acts = [x]
        h = x
        n = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < n - 1:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def backward(self, acts, dout: np.ndarray):
        """Exact gradients for every layer given d(loss)/d(output).

        Returns (weight grads, bias grads, d(loss)/d(input)).
        """
        n = len(self.weights)
        dws = [None] * n
        dbs = [None] * n
        grad = np.asarray(dout, dtype=float)
        for i in range(n - 1, -1, -1):
            if i < n - 1:
                grad = grad * (1.0 - acts[i + 1] ** 2)  # through tanh
            dws[i] = acts[i].T @ grad
            dbs[i] = grad.sum(axis=0)
            grad = grad @ self.weights[i].T
        return dws, dbs, grad


@dataclass
class PolicyParams:
    """Gaussian policy (mean network + log stds) and a value network."""

    pi: Mlp
    log_std: np.ndarray
    vf: Mlp
    obs_dim: int
    act_dim: int

    @classmethod
    def create(
        cls,
        obs_dim: int,
        act_dim: int,
        hidden=(64, 64),
        rng: np.random.Generator | None = None,
        log_std_init: float = math.log(0.3),
    ) -> "PolicyParams":
        rng = rng or np.random.default_rng(0)
        return cls(
            pi=Mlp.create([obs_dim, *hidden, act_dim], rng, out_scale=0.01),
            log_std=np.full(act_dim, log_std_init),
            vf=Mlp.create([obs_dim, *hidden, 1], rng),
            obs_dim=obs_dim,
            act_dim=act_dim,
        )

    def parameters(self):
        return self.pi.parameters() + [self.log_std] + self.vf.parameters()


def mlp_forward(params: PolicyParams, obs: np.ndarray):
    """(action mean, log-std, value) for a batch of observations."""
    mean, _ = params.pi.forward(obs)
    value, _ = params.vf.forward(obs)
    return mean, params.log_std.copy(), value[:, 0]


def gaussian_log_prob(mean, log_std, actions):
    std = np.exp(log_std)
    z = (actions - mean) / std
    return -0.5 * np.sum(z * z, axis=1) - np.sum(log_std) - 0.5 * mean.shape[1] * math.log(
        2.0 * math.pi
    )


def sample_actions(params: PolicyParams, obs, rng: np.random.Generator):
    mean, _ = params.pi.forward(obs)
    std = np.exp(params.log_std)
    noise = rng.standard_normal(mean.shape)
    actions = mean + std * noise
    logp = gaussian_log_prob(mean, params.log_std, actions)
    value, _ = params.vf.forward(obs)
    return actions, logp, value[:, 0]


# ---------------------------------------------------------------------------
# advantage estimation


def gae(rewards, values, dones, gamma: float, lam: float, bootstrap: float):
    """Exponentially weighted advantage estimates and returns.

    `values` has the same length as `rewards`; `bootstrap` is V(s_T) for the
    step after the last one (0 if that state is terminal). `dones` marks
    transitions that ended an episode (no bootstrapping across them).
    """
    rewards = np.asarray(rewards, dtype=float)
    values = np.asarray(values, dtype=float)
    dones = np.asarray(dones, dtype=bool)
    n = len(rewards)
    adv = np.zeros(n)
    last = 0.0
    for t in range(n - 1, -1, -1):
        v_next = bootstrap if t == n - 1 else values[t + 1]
        not_done = 0.0 if dones[t] else 1.0
        delta = rewards[t] + gamma * v_next * not_done - values[t]
        last = delta + gamma * lam * not_done * last
        adv[t] = last
    return adv, adv + values


# ---------------------------------------------------------------------------
# optimizer


class Adam:
    """Per-parameter adaptive moments on a list of arrays."""

    def __init__(self, params, lr=3e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mh = m / (1 - b1**self.t)
            vh = v / (1 - b2**self.t)
            p -= self.lr * mh / (np.sqrt(vh) + self.eps)


# ---------------------------------------------------------------------------
# PPO


@dataclass
class TrainConfig:
    gamma: float = 0.99
    lam: float = 0.95
    clip_eps: float = 0.2
    lr: float = 3e-4
    epochs: int = 10
    minibatch: int = 1024
    n_envs: int = 8
    steps_per_env: int = 2048
    total_steps: int = 2_000_000
    entropy_coef: float = 1e-3
    value_coef: float = 0.5
    hidden: tuple = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if not (0 < self.gamma <= 1):
            raise ValueError("gamma must be in (0, 1]")
        if not (0 <= self.lam <= 1):
            raise ValueError("lambda must be in [0, 1]")
        if self.clip_eps <= 0:
            raise ValueError("clip epsilon must be positive")


@dataclass
class RolloutBatch:
    obs: np.ndarray
    actions: np.ndarray
    log_probs: np.ndarray
    rewards: np.ndarray
    values: np.ndarray
    dones: np.ndarray
    advantages: np.ndarray | None = None
    returns: np.ndarray | None = None

    def normalize_advantages(self):
        a = self.advantages
        self.advantages = (a - a.mean()) / (a.std() + 1e-8)


def policy_loss_and_grads(params: PolicyParams, obs, actions, old_logp, adv, cfg):
    """Clipped surrogate + entropy bonus; returns loss, grads, diagnostics."""
    n = obs.shape[0]
    mean, acts = params.pi.forward(obs)
    std = np.exp(params.log_std)
    z = (actions - mean) / std
    logp = -0.5 * np.sum(z * z, axis=1) - np.sum(params.log_std) \
        - 0.5 * params.act_dim * math.log(2.0 * math.pi)
    ratio = np.exp(logp - old_logp)
    clipped = np.clip(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps)
    use_raw = ratio * adv <= clipped * adv  # min picks the raw branch (ties -> raw)
    surrogate = np.where(use_raw, ratio * adv, clipped * adv)
    entropy = float(np.sum(params.log_std) + 0.5 * params.act_dim * (1 + math.log(2 * math.pi)))
    loss = -float(surrogate.mean()) - cfg.entropy_coef * entropy

    # d loss / d logp: only the unclipped branch carries gradient
    dlogp = np.where(use_raw, -ratio * adv / n, 0.0)
    dmean = dlogp[:, None] * (z / std)
    dlogstd_per = dlogp[:, None] * (z * z - 1.0)
    dws, dbs, _ = params.pi.backward(acts, dmean)
    dlog_std = dlogstd_per.sum(axis=0) - cfg.entropy_coef * np.ones(params.act_dim)
    diag = {
        "clip_fraction": float(np.mean(~use_raw)),
        "approx_kl": float(np.mean(old_logp - logp)),
        "entropy": entropy,
        "policy_loss": loss,
    }
    return loss, dws + dbs + [dlog_std], diag


def value_loss_and_grads(params: PolicyParams, obs, returns, cfg):
    n = obs.shape[0]
    value, acts = params.vf.forward(obs)
    err = value[:, 0] - returns
    loss = float(np.mean(err * err))
    dout = (2.0 * err / n)[:, None] * cfg.value_coef
    dws, dbs, _ = params.vf.backward(acts, dout)
    return loss, dws + dbs


def ppo_update(
    params: PolicyParams,
    batch: RolloutBatch,
    cfg: TrainConfig,
    opt_pi: Adam,
    opt_vf: Adam,
    rng: np.random.Generator,
):
    """Epochs of minibatch clipped-surrogate steps; mutates params in place.

    A non-finite loss aborts the whole update, restoring the pre-update
    parameters.
    """
    snapshot = [p.copy() for p in params.parameters()]
    n = batch.obs.shape[0]
    diags = []
    try:
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.minibatch):
                idx = order[start : start + cfg.minibatch]
                _, gpi, diag = policy_loss_and_grads(
                    params, batch.obs[idx], batch.actions[idx],
                    batch.log_probs[idx], batch.advantages[idx], cfg,
                )
                vloss, gvf = value_loss_and_grads(
                    params, batch.obs[idx], batch.returns[idx], cfg
                )
                diag["value_loss"] = vloss
                if not all(np.all(np.isfinite(g)) for g in gpi + gvf):
                    raise NonFiniteLoss("gradient is not finite")
                if not (math.isfinite(diag["policy_loss"]) and math.isfinite(vloss)):
                    raise NonFiniteLoss("loss is not finite")
                opt_pi.step(params.pi.parameters() + [params.log_std], gpi)
                opt_vf.step(params.vf.parameters(), gvf)
                diags.append(diag)
    except NonFiniteLoss:
        for p, s in zip(params.parameters(), snapshot):
            p[:] = s
        raise
    keys = diags[0].keys()
    return params, {k: float(np.mean([d[k] for d in diags])) for k in keys}


# ---------------------------------------------------------------------------
# training loop


@dataclass
class IterationStats:
    iteration: int
    env_steps: int
    mean_return: float
    mean_p_err: float
    mean_q_err: float
    episodes: int
    diagnostics: dict = field(default_factory=dict)


def collect_rollout(envs, params: PolicyParams, cfg: TrainConfig, rng, obs_now, ep_state):
    """Step all envs for cfg.steps_per_env, batching policy evaluations.

    Environments advance in a fixed order, so the result is reproducible
    for a given env count. Episodes aborted by non-finite physics are
    dropped from the batch (their transitions are masked out) and the env
    is reset.
    """
    from .hand_dynamics import NonFiniteState

    n_envs = len(envs)
    steps = cfg.steps_per_env
    obs_dim = params.obs_dim
    act_dim = params.act_dim
    obs_buf = np.zeros((steps, n_envs, obs_dim))
    act_buf = np.zeros((steps, n_envs, act_dim))
    logp_buf = np.zeros((steps, n_envs))
    rew_buf = np.zeros((steps, n_envs))
    val_buf = np.zeros((steps, n_envs))
    done_buf = np.zeros((steps, n_envs), dtype=bool)
    keep = np.ones((steps, n_envs), dtype=bool)
    finished = []

    for t in range(steps):
        obs_arr = np.stack(obs_now)
        actions, logp, values = sample_actions(params, obs_arr, rng)
        for i, env in enumerate(envs):
            obs_buf[t, i] = obs_now[i]
            act_buf[t, i] = actions[i]
            logp_buf[t, i] = logp[i]
            val_buf[t, i] = values[i]
            try:
                o, r, terminated, truncated, info = env.step(actions[i])
            except NonFiniteState:
                # drop this env's transitions since its last boundary
                start = ep_state[i]["start"]
                keep[start:t + 1, i] = False
                o, _ = env.reset()
                obs_now[i] = o
                rew_buf[t, i] = 0.0
                done_buf[t, i] = True
                ep_state[i] = {"start": t + 1, "ret": 0.0, "p": [], "q": []}
                continue
            rew_buf[t, i] = r
            done_buf[t, i] = terminated
            ep_state[i]["ret"] += r
            ep_state[i]["p"].append(getattr(info, "p_err_lower", math.nan))
            ep_state[i]["q"].append(getattr(info, "q_err", math.nan))
            if terminated or truncated:
                finished.append(
                    (
                        ep_state[i]["ret"],
                        float(np.mean(ep_state[i]["p"])),
                        float(np.mean(ep_state[i]["q"])),
                    )
                )
                o, _ = env.reset()
                ep_state[i] = {"start": t + 1, "ret": 0.0, "p": [], "q": []}
            obs_now[i] = o

    # bootstrap values for rollout ends
    tail_values = params.vf.forward(np.stack(obs_now))[0][:, 0]
    obs_f, act_f, logp_f, rew_f, val_f, done_f, adv_f, ret_f = ([] for _ in range(8))
    for i in range(n_envs):
        adv, ret = gae(
            rew_buf[:, i], val_buf[:, i], done_buf[:, i],
            cfg.gamma, cfg.lam, float(tail_values[i]),
        )
        m = keep[:, i]
        obs_f.append(obs_buf[m, i])
        act_f.append(act_buf[m, i])
        logp_f.append(logp_buf[m, i])
        rew_f.append(rew_buf[m, i])
        val_f.append(val_buf[m, i])
        done_f.append(done_buf[m, i])
        adv_f.append(adv[m])
        ret_f.append(ret[m])
    batch = RolloutBatch(
        obs=np.concatenate(obs_f),
        actions=np.concatenate(act_f),
        log_probs=np.concatenate(logp_f),
        rewards=np.concatenate(rew_f),
        values=np.concatenate(val_f),
        dones=np.concatenate(done_f),
        advantages=np.concatenate(adv_f),
        returns=np.concatenate(ret_f),
    )
    return batch, finished


def train(
    env_factory,
    cfg: TrainConfig,
    params: PolicyParams | None = None,
    log=None,
    checkpoint_fn=None,
):
    """Alternate parallel-rollout collection with PPO updates.

    `env_factory(i, seed)` builds env i. Returns (params, curve) where
    curve is a list of IterationStats.
    """
    rng = np.random.default_rng(cfg.seed)
    envs = [env_factory(i, cfg.seed + 1000 * i + 1) for i in range(cfg.n_envs)]
    obs_now = []
    ep_state = []
    for env in envs:
        o, _ = env.reset()
        obs_now.append(o)
        ep_state.append({"start": 0, "ret": 0.0, "p": [], "q": []})
    if params is None:
        params = PolicyParams.create(
            envs[0].observation_dim, envs[0].action_dim, cfg.hidden,
            np.random.default_rng(cfg.seed),
        )
    opt_pi = Adam(params.pi.parameters() + [params.log_std], lr=cfg.lr)
    opt_vf = Adam(params.vf.parameters(), lr=cfg.lr)
    curve = []
    steps_done = 0
    iteration = 0
    while steps_done < cfg.total_steps:
        batch, finished = collect_rollout(envs, params, cfg, rng, obs_now, ep_state)
        steps_done += cfg.steps_per_env * cfg.n_envs
        iteration += 1
        batch.normalize_advantages()
        try:
            _, diag = ppo_update(params, batch, cfg, opt_pi, opt_vf, rng)
        except NonFiniteLoss:
            diag = {"skipped": 1.0}
            if log:
                log(f"iteration {iteration}: non-finite loss, update skipped")
        stats = IterationStats(
            iteration=iteration,
            env_steps=steps_done,
            mean_return=float(np.mean([f[0] for f in finished])) if finished else math.nan,
            mean_p_err=float(np.mean([f[1] for f in finished])) if finished else math.nan,
            mean_q_err=float(np.mean([f[2] for f in finished])) if finished else math.nan,
            episodes=len(finished),
            diagnostics=diag,
        )
        curve.append(stats)
        if log:
            log(
                f"iter {iteration:4d} steps {steps_done:>9d} "
                f"return {stats.mean_return:8.2f} p_err {stats.mean_p_err:.4f} "
                f"q_err {stats.mean_q_err:.4f} eps {stats.episodes}"
            )
        if checkpoint_fn:
            checkpoint_fn(params, stats)
    return params, curve


def write_curve_csv(path, curve) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "env_steps", "mean_return", "mean_p_err", "mean_q_err", "episodes"])
        for s in curve:
            w.writerow(
                [s.iteration, s.env_steps, f"{s.mean_return:.4f}",
                 f"{s.mean_p_err:.6f}", f"{s.mean_q_err:.6f}", s.episodes]
            )


# ---------------------------------------------------------------------------
# checkpoints
#
# Layout: magic b"SSPOLICY1\n", little-endian uint32 header length, JSON
# header {obs_dim, act_dim, pi_sizes, vf_sizes, meta}, then the raw
# float64 row-major buffers in order: pi weights, pi biases, log_std,
# vf weights, vf biases.


MAGIC = b"SSPOLICY1\n"


def save_policy(path, params: PolicyParams, meta: dict | None = None) -> None:
    header = {
        "obs_dim": params.obs_dim,
        "act_dim": params.act_dim,
        "pi_sizes": params.pi.sizes,
        "vf_sizes": params.vf.sizes,
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in params.pi.weights + params.pi.biases:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(params.log_std, dtype="<f8").tobytes())
        for arr in params.vf.weights + params.vf.biases:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_policy(path) -> tuple[PolicyParams, dict]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError("not a policy checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
        pi_sizes = header["pi_sizes"]
        vf_sizes = header["vf_sizes"]

        def read(shape):
            n = int(np.prod(shape))
            return np.frombuffer(fh.read(8 * n), dtype="<f8").reshape(shape).copy()

        pi = Mlp(
            [read((pi_sizes[i], pi_sizes[i + 1])) for i in range(len(pi_sizes) - 1)],
            [read((pi_sizes[i + 1],)) for i in range(len(pi_sizes) - 1)],
        )
        log_std = read((header["act_dim"],))
        vf = Mlp(
            [read((vf_sizes[i], vf_sizes[i + 1])) for i in range(len(vf_sizes) - 1)],
            [read((vf_sizes[i + 1],)) for i in range(len(vf_sizes) - 1)],
        )
    params = PolicyParams(
        pi=pi, log_std=log_std, vf=vf,
        obs_dim=header["obs_dim"], act_dim=header["act_dim"],
    )
    return params, header["meta"]


def greedy_policy(params: PolicyParams):
    """Deterministic policy callable (mean action)."""

    def act(obs):
        mean, _ = params.pi.forward(obs)
        return mean[0]

    return act
