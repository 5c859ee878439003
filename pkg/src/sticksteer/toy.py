"""One-joint reach task: the benchmark that a PPO implementation must beat.

A single PD-controlled joint must move to and hold a target angle; reward
is a clipped quadratic in the error. A proportional displacement
controller is the oracle this task is scored against.
"""

from __future__ import annotations

import numpy as np

from . import _kernel
from .calibration import JointParams

HORIZON = 120
DELTA_MAX = 0.05
ERR_SCALE = 0.5  # rad of error that zeroes the reward


class JointReachEnv:
    """Gym-style single joint environment, 3-dim observation."""

    observation_dim = 3
    action_dim = 1

    def __init__(self, params: JointParams | None = None, seed: int = 0):
        self.p = params or JointParams(self_lock=False)
        self.rng = np.random.default_rng(seed)
        self.q = 0.0
        self.qd = 0.0
        self.goal = 0.0
        self._k = 0

    def _obs(self) -> np.ndarray:
        lo, hi = self.p.limits
        return np.array(
            [
                (self.q - lo) / (hi - lo),
                self.qd / 4.0,
                (self.goal - lo) / (hi - lo),
            ]
        )

    def reset(self, seed: int | None = None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.q = float(self.rng.uniform(0.0, 1.4))
        self.qd = 0.0
        self.goal = float(self.rng.uniform(0.1, 1.3))
        self._k = 0
        return self._obs(), {}

    def step(self, action):
        a = float(np.clip(np.asarray(action).ravel()[0], -DELTA_MAX, DELTA_MAX))
        target = float(np.clip(self.q + a, *self.p.limits))
        self.q, self.qd = _kernel.sim_joint_hold(
            self.q, self.qd, target, 20,
            self.p.kp, self.p.kd, self.p.armature, self.p.damping,
            self.p.torque_cap, self.p.limits[0], self.p.limits[1], 1e-3,
        )
        self._k += 1
        err = (self.q - self.goal) / ERR_SCALE
        reward = max(0.0, 1.0 - err * err)
        return self._obs(), reward, False, self._k >= HORIZON, {}


def pd_oracle_policy(env: JointReachEnv):
    """Greedy proportional displacement toward the goal."""

    def act(obs):
        lo, hi = env.p.limits
        q = obs[0] * (hi - lo) + lo
        goal = obs[2] * (hi - lo) + lo
        return np.array([np.clip(goal - q, -DELTA_MAX, DELTA_MAX)])

    return act


def oracle_return(seed: int = 0, episodes: int = 50) -> float:
    """Mean return of the proportional oracle over seeded episodes."""
    env = JointReachEnv(seed=seed)
    totals = []
    policy = pd_oracle_policy(env)
    for _ in range(episodes):
        obs, _ = env.reset()
        total = 0.0
        while True:
            obs, r, term, trunc, _ = env.step(policy(obs))
            total += r
            if term or trunc:
                break
        totals.append(total)
    return float(np.mean(totals))
