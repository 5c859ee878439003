"""The stick-steering decision process: observations, reward, termination,
initial-state generation and domain randomization.

Episodes run at 50 Hz on top of a 1 kHz physics loop. A reset draws one
record from the initial-state set, samples physical parameters, settles for
0.1 s under gravity compensation with hold targets, then anchors the
reference trajectory at the settled pose.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .config import FullConfig, OBS_VARIANTS, RewardWeights, apply_sampled_params
from .contact_tactile import (
    N_TAXELS,
    TactileFrame,
    TaxelLayout,
    contact_center,
    detect_contacts,
)
from .hand_dynamics import (
    ACTIVE_JOINT_NAMES,
    BacklashState,
    HandModel,
    N_FINGERS,
    NonFiniteState,
    SimState,
    Simulator,
    StickModel,
    forward_kinematics,
    make_initial_state,
)
from .trajectories import ReferenceTrajectory, desired_axis

NOMINAL_STICK_CENTER = np.array([0.0, 0.079, -0.10])
INNER_DT = 1e-3
INNER_STEPS = 20


class ExhaustedSampling(RuntimeError):
    """Initial-state generation accepts less than 1% of its draws."""


# ---------------------------------------------------------------------------
# elementary MDP pieces


def compute_reward(
    weights: RewardWeights,
    u_desired: np.ndarray,
    u_current: np.ndarray,
    p1_desired: np.ndarray,
    p1_current: np.ndarray,
    p2_desired: np.ndarray,
    p2_current: np.ndarray,
    force_sum: float,
) -> float:
    """Task constant minus orientation, position and contact-force terms."""
    return float(
        weights.c
        - weights.w_orientation * np.linalg.norm(u_desired - u_current)
        - weights.w_position
        * (
            np.linalg.norm(p1_desired - p1_current)
            + np.linalg.norm(p2_desired - p2_current)
        )
        - weights.w_force * force_sum
    )


def terminate(state: SimState, drop_height: float) -> bool:
    """The stick fell out of the grasp when its center is below threshold."""
    return bool(state.stick_pos[2] < drop_height)


def apply_action(
    q_measured: np.ndarray,
    action: np.ndarray,
    delta_max: float,
    limits: tuple[np.ndarray, np.ndarray],
) -> np.ndarray:
    """Displacement action to a clamped position target."""
    action = np.asarray(action, dtype=float)
    if not np.all(np.isfinite(action)):
        raise ValueError("action must be finite")
    step = np.clip(action, -delta_max, delta_max)
    return np.clip(q_measured + step, limits[0], limits[1])


def observation_dim(variant: str) -> int:
    base = 6 + 3
    if variant == "contact_centers":
        return base + 3 * N_FINGERS + N_FINGERS
    if variant == "object_pose":
        return base + 6
    if variant == "pose_plus_centers":
        return base + 6 + 3 * N_FINGERS + N_FINGERS
    if variant == "raw_tactile":
        return base + N_FINGERS * N_TAXELS
    if variant == "pose_plus_binary":
        return base + 6 + N_FINGERS
    raise ValueError(f"unknown observation variant {variant!r}")


def build_observation(
    variant: str,
    state: SimState,
    frame: TactileFrame,
    layout: TaxelLayout,
    u_desired: np.ndarray,
    limits: tuple[np.ndarray, np.ndarray],
    center_scale: float,
    pose_scale: float,
) -> np.ndarray:
    """Assemble the variant-specific observation vector.

    Joints are normalized to [0, 1] by their limits; contact centers are
    fingertip-local, scaled, with a sentinel zero vector plus per-finger
    validity bits appended; the object pose payload is the stick center
    relative to the nominal grasp (scaled) and its axis.
    """
    if variant not in OBS_VARIANTS:
        raise ValueError(f"unknown observation variant {variant!r}")
    lo, hi = limits
    q_norm = np.clip((state.q - lo) / (hi - lo), 0.0, 1.0)
    parts = [q_norm, np.asarray(u_desired, dtype=float)]
    if variant in ("object_pose", "pose_plus_centers", "pose_plus_binary"):
        parts.append((state.stick_pos - NOMINAL_STICK_CENTER) / pose_scale)
        parts.append(state.stick_axis())
    if variant in ("contact_centers", "pose_plus_centers"):
        centers = np.zeros(3 * N_FINGERS)
        valid = np.zeros(N_FINGERS)
        for f in range(N_FINGERS):
            c = contact_center(frame, layout, f, scale=center_scale)
            if c is not None:
                centers[3 * f : 3 * f + 3] = c
                valid[f] = 1.0
        parts.append(centers)
        parts.append(valid)
    elif variant == "raw_tactile":
        parts.append(frame.active_mask.astype(float).ravel())
    elif variant == "pose_plus_binary":
        parts.append(frame.active_mask.any(axis=1).astype(float))
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# initial states


@dataclass
class InitialStateSet:
    """Records of joint positions and stick poses with 3-finger contact."""

    qs: np.ndarray                  # (N, 6)
    poses: np.ndarray               # (N, 7) x y z qw qx qy qz
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.qs.shape[0]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            for k, v in sorted(self.meta.items()):
                fh.write(f"# {k} = {v}\n")
            w = csv.writer(fh)
            w.writerow(
                ["record", "q0", "q1", "q2", "q3", "q4", "q5",
                 "x", "y", "z", "qw", "qx", "qy", "qz"]
            )
            for i in range(len(self)):
                w.writerow(
                    [i]
                    + [f"{v:.9f}" for v in self.qs[i]]
                    + [f"{v:.9f}" for v in self.poses[i]]
                )

    @classmethod
    def read_csv(cls, path) -> "InitialStateSet":
        meta = {}
        qs, poses = [], []
        with open(path, newline="") as fh:
            rows = []
            for line in fh:
                if line.startswith("#"):
                    k, _, v = line[1:].partition("=")
                    meta[k.strip()] = v.strip()
                else:
                    rows.append(line)
            for row in csv.DictReader(rows):
                qs.append([float(row[f"q{i}"]) for i in range(6)])
                poses.append(
                    [float(row[k]) for k in ("x", "y", "z", "qw", "qx", "qy", "qz")]
                )
        return cls(np.array(qs).reshape(-1, 6), np.array(poses).reshape(-1, 7), meta)


def _sample_stick_pose(cfg, rng) -> tuple[np.ndarray, np.ndarray]:
    pos = NOMINAL_STICK_CENTER + np.array(
        [
            rng.uniform(-cfg.pos_jitter_xy, cfg.pos_jitter_xy),
            rng.uniform(-cfg.pos_jitter_xy, cfg.pos_jitter_xy),
            rng.uniform(-cfg.pos_jitter_z, cfg.pos_jitter_z),
        ]
    )
    tilt = rng.uniform(0.0, math.radians(cfg.max_tilt_deg))
    azim = rng.uniform(0.0, 2.0 * math.pi)
    axis = np.array([math.cos(azim), math.sin(azim), 0.0])
    quat = geo.quat_from_axis_angle(axis, tilt)
    return pos, quat


def _closing_state(model: HandModel, q: np.ndarray, pos, quat) -> SimState:
    """Kinematic closing pose: each gap link rides its driving edge."""
    st = make_initial_state(q=q, stick_pos=pos, stick_quat=quat)
    for f in range(N_FINGERS):
        lo, _ = model.joints[ACTIVE_JOINT_NAMES[2 * f]].backlash_range
        st.backlash[f] = BacklashState(offset=lo)
    return st


def _grasp_metrics(model, layout, stick, st):
    """One vectorized contact pass: (touched fingers, per-finger grip
    force estimate, max penetration). Same geometry as detect_contacts."""
    fk = forward_kinematics(model, st, layout.packed())
    u = geo.quat_rotate(st.stick_quat, np.array([0.0, 0.0, 1.0]))
    half = 0.5 * stick.length * u
    e1 = st.stick_pos + half
    d = -2.0 * half
    dd = float(d @ d)
    reach = stick.radius + layout.sensing_radius
    tax = fk.taxel_world.reshape(-1, 3)
    s_par = np.clip((tax - e1) @ d / dd, 0.0, 1.0)
    delta = tax - (e1 + s_par[:, None] * d)
    dist = np.linalg.norm(delta, axis=1)
    pen = np.where((dist < reach) & (dist > 1e-12), reach - dist, 0.0)
    pen = pen.reshape(N_FINGERS, -1)
    grip = model.contact.stiffness * pen.sum(axis=1)
    touched = {f for f in range(N_FINGERS) if np.any(pen[f] > 0.0)}
    return touched, grip, float(pen.max())


def contact_fingers(
    model: HandModel, layout: TaxelLayout, stick: StickModel, st: SimState
):
    """Set of finger indices with at least one active taxel, plus max depth."""
    touched, _, max_pen = _grasp_metrics(model, layout, stick, st)
    return touched, max_pen


def _finger_grip_force(model, layout, stick, st) -> np.ndarray:
    """Static spring-force estimate per finger: stiffness times total
    penetration over its taxels."""
    return _grasp_metrics(model, layout, stick, st)[1]


def balance_contact(
    model: HandModel,
    layout: TaxelLayout,
    stick: StickModel,
    q: np.ndarray,
    pose: np.ndarray,
    thumb_band: tuple[float, float] = (2.6, 3.4),
    finger_band: tuple[float, float] = (1.3, 1.7),
    trim: float = 0.0005,
    max_iter: int = 150,
) -> np.ndarray:
    """Trim each finger until its static grip force sits inside a band.

    The raw stop-at-first-contact posture can leave the last-closed finger
    pressing an order of magnitude harder than the others; releasing that
    spring imbalance would kick the stick out of the grasp. The thumb band
    is twice the finger band so the two sides of the pinch cancel (the
    thumb opposes both fingers). Joint-limit clamps apply; fingers that
    cannot reach the band stop at their limit.
    """
    lo_lim = np.array([model.joints[j].limits[0] for j in ACTIVE_JOINT_NAMES])
    hi_lim = np.array([model.joints[j].limits[1] for j in ACTIVE_JOINT_NAMES])
    bands = (thumb_band, finger_band, finger_band)
    q = q.copy()
    for _ in range(max_iter):
        st = _closing_state(model, q, pose[:3], pose[3:])
        grip = _finger_grip_force(model, layout, stick, st)
        done = True
        for f in range(N_FINGERS):
            if grip[f] > bands[f][1]:
                delta = -trim
            elif grip[f] < bands[f][0]:
                delta = trim
            else:
                continue
            done = False
            for j in (2 * f, 2 * f + 1):
                q[j] = float(np.clip(q[j] + delta, lo_lim[j], hi_lim[j]))
        if done:
            break
    return q


def generate_initial_states(
    model: HandModel,
    stick: StickModel,
    layout: TaxelLayout,
    cfg,
    n_states: int | None = None,
    seed: int = 0,
    log=None,
) -> InitialStateSet:
    """Sample joint postures and stick poses, close fingers until contact.

    The stick is held fixed; fingers close at constant speed with contact
    polled at the policy rate, each finger stopping as soon as any of its
    taxels fires. Draws that fail to reach three-finger contact inside the
    closing budget, exceed the penetration sanity bound, or start beyond
    the joint limits are discarded and resampled.
    """
    n = cfg.n_states if n_states is None else n_states
    rng = np.random.default_rng(seed)
    lo_lim = np.array([model.joints[j].limits[0] for j in ACTIVE_JOINT_NAMES])
    hi_lim = np.array([model.joints[j].limits[1] for j in ACTIVE_JOINT_NAMES])
    dq = cfg.close_speed * cfg.check_period
    max_checks = int(cfg.max_close_time / cfg.check_period)
    qs, poses = [], []
    attempts = 0
    while len(qs) < n:
        attempts += 1
        if attempts >= 1000 and len(qs) < 0.01 * attempts:
            raise ExhaustedSampling(
                f"{len(qs)}/{attempts} draws accepted; distributions do not "
                "place the stick between the fingers"
            )
        q = np.clip(
            rng.uniform(
                cfg.open_posture - cfg.joint_jitter,
                cfg.open_posture + cfg.joint_jitter,
                6,
            ),
            lo_lim,
            hi_lim,
        )
        pos, quat = _sample_stick_pose(cfg, rng)
        ok = False
        for _ in range(max_checks):
            st = _closing_state(model, q, pos, quat)
            fingers, max_pen = contact_fingers(model, layout, stick, st)
            if max_pen > cfg.max_store_penetration:
                break
            if len(fingers) == 3:
                ok = True
                break
            moved = False
            for f in range(N_FINGERS):
                if f not in fingers:
                    for j in (2 * f, 2 * f + 1):
                        if q[j] < hi_lim[j]:
                            q[j] = min(q[j] + dq, hi_lim[j])
                            moved = True
            if not moved:
                break
        if ok:
            q = balance_contact(model, layout, stick, q, np.concatenate([pos, quat]))
            st = _closing_state(model, q, pos, quat)
            grip = _finger_grip_force(model, layout, stick, st)
            if not (2.2 <= grip[0] <= 3.8 and 1.0 <= grip[1] <= 2.0
                    and 1.0 <= grip[2] <= 2.0):
                if log is not None:
                    log(f"draw {attempts} discarded (unbalanced grasp)")
                continue
            if cfg.hold_screen_steps > 0 and not _survives_hold(
                model, stick, layout, q, np.concatenate([pos, quat]),
                settle_steps=100, hold_steps=cfg.hold_screen_steps, drop_z=-0.15,
            ):
                if log is not None:
                    log(f"draw {attempts} discarded (grasp releases violently)")
                continue
            qs.append(q.copy())
            poses.append(np.concatenate([pos, quat]))
        elif log is not None:
            log(f"draw {attempts} discarded (no 3-finger contact)")
    meta = {
        "seed": seed,
        "accepted": n,
        "attempts": attempts,
        "acceptance_rate": f"{n / max(attempts, 1):.4f}",
        "joint_jitter": cfg.joint_jitter,
        "pos_jitter_xy": cfg.pos_jitter_xy,
        "pos_jitter_z": cfg.pos_jitter_z,
        "max_tilt_deg": cfg.max_tilt_deg,
    }
    return InitialStateSet(np.array(qs), np.array(poses), meta)


def verify_three_finger_contact(
    model: HandModel, stick: StickModel, layout: TaxelLayout, record_q, record_pose
) -> bool:
    st = _closing_state(
        model, np.asarray(record_q), np.asarray(record_pose[:3]),
        np.asarray(record_pose[3:]),
    )
    fingers, _ = contact_fingers(model, layout, stick, st)
    return len(fingers) == 3


# ---------------------------------------------------------------------------
# environment


def _survives_hold(model, stick, layout, q, pose, settle_steps, hold_steps, drop_z):
    """Settle the record and hold for a moment; True if the stick stays."""
    st = _closing_state(model, q, pose[:3], pose[3:])
    sim = Simulator(model, stick, layout)
    sim.load_state(st)
    try:
        sim.step(q, INNER_DT, settle_steps, gravity_comp=True)
        for _ in range(hold_steps):
            sim.step(q, INNER_DT, INNER_STEPS)
            if sim.spos[2] < drop_z:
                return False
    except NonFiniteState:
        return False
    return bool((sim.tax_pen > 0).sum() >= 2)


@dataclass
class StepInfo:
    p_err_lower: float
    p_err_upper: float
    q_err: float
    force_sum: float
    n_contacts: int
    dropped: bool


class ManipulationEnv:
    """Gym-style environment; one instance per worker, independently seeded."""

    def __init__(
        self,
        cfg: FullConfig,
        init_states: InitialStateSet,
        seed: int = 0,
    ):
        if len(init_states) == 0:
            raise ValueError("initial state set is empty")
        self.cfg = cfg
        self.layout = TaxelLayout.grid(
            patch_radius=cfg.tactile.patch_radius,
            patch_length=cfg.tactile.patch_length,
            arc_span_deg=cfg.tactile.arc_span_deg,
            sensing_radius=cfg.tactile.sensing_radius,
        )
        self.init_states = init_states
        self.rng = np.random.default_rng(seed)
        self.action_dim = 6
        self.observation_dim = observation_dim(cfg.task.obs_variant)
        self._sim: Simulator | None = None
        self._traj: ReferenceTrajectory | None = None
        self._k = 0
        self._limits = None

    # -- episode control ----------------------------------------------------

    def reset(self, seed: int | None = None):
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        cfg = self.cfg
        idx = int(self.rng.integers(len(self.init_states)))
        q0 = self.init_states.qs[idx].copy()
        pose = self.init_states.poses[idx]
        if cfg.randomize:
            sample = cfg.randomization.sample(self.rng)
            hand, stick = apply_sampled_params(cfg.hand, cfg.stick, sample)
        else:
            hand, stick = cfg.hand.copy(), cfg.stick
        self._hand, self._stick = hand, stick
        self._limits = hand.limits_arrays()
        # the sampled stick differs from the one the record was generated
        # with (radius randomization), so close the remaining gap and
        # rebalance before releasing the dynamics
        q0 = self._close_to_contact(hand, stick, q0, pose)
        q0 = balance_contact(hand, self.layout, stick, q0, pose)
        st = _closing_state(hand, q0, pose[:3].copy(), pose[3:].copy())
        sim = Simulator(hand, stick, self.layout)
        sim.load_state(st)
        self._sim = sim
        self._hold = q0.copy()
        n_settle = int(round(cfg.task.settle_time / INNER_DT))
        sim.step(self._hold, INNER_DT, n_settle, gravity_comp=True)

        # anchor the reference at the settled pose
        state = sim.export_state()
        p1, p2 = state.stick_endpoints(stick.length)
        grasp_arc = abs(NOMINAL_STICK_CENTER[2] - 0.0) + 0.5 * stick.length
        anchor = p2 + state.stick_axis() * grasp_arc
        line_dir = None
        if cfg.task.kind == "line":
            a = self.rng.uniform(0.0, 2.0 * math.pi)
            line_dir = np.array([math.cos(a), math.sin(a)])
        self._traj = ReferenceTrajectory(
            cfg.task.kind, cfg.task, center=p2, anchor=anchor,
            stick_length=stick.length, line_dir=line_dir,
        )
        self._k = 0
        sim.t = 0.0
        obs, _, info = self._observe_and_score()
        return obs, info

    def step(self, action: np.ndarray):
        cfg = self.cfg
        sim = self._sim
        qt = apply_action(
            sim.q, action, cfg.task.action_delta_max, self._limits
        )
        sim.step(qt, INNER_DT, INNER_STEPS)
        self._k += 1
        obs, reward, info = self._observe_and_score()
        terminated = info.dropped
        truncated = self._k >= cfg.task.episode_length and not terminated
        return obs, reward, terminated, truncated, info

    # -- internals ----------------------------------------------------------

    def _close_to_contact(self, hand, stick, q0, pose):
        gen = self.cfg.generator
        lo_lim, hi_lim = hand.limits_arrays()
        dq = gen.close_speed * gen.check_period
        q = q0.copy()
        for _ in range(int(gen.max_close_time / gen.check_period)):
            st = _closing_state(hand, q, pose[:3], pose[3:])
            fingers, _ = contact_fingers(hand, self.layout, stick, st)
            if len(fingers) == 3:
                break
            moved = False
            for f in range(N_FINGERS):
                if f not in fingers:
                    for j in (2 * f, 2 * f + 1):
                        if q[j] < hi_lim[j]:
                            q[j] = min(q[j] + dq, hi_lim[j])
                            moved = True
            if not moved:
                break
        return q

    def _frame(self) -> TactileFrame:
        sim = self._sim
        frame = TactileFrame.blank(self.cfg.tactile.threshold)
        frame.raw = self.cfg.tactile.gain * sim.tax_fn
        if self.cfg.tactile.mode == "synthetic":
            if self.cfg.tactile.noise_std > 0:
                frame.raw = np.maximum(
                    frame.raw
                    + self.rng.normal(0.0, self.cfg.tactile.noise_std, frame.raw.shape),
                    0.0,
                )
            frame.calibrated = frame.raw.copy()
            frame.active_mask = frame.calibrated > frame.threshold
        else:
            frame.calibrated = frame.raw.copy()
            frame.active_mask = sim.tax_pen > 0.0
        return frame

    def _observe_and_score(self, _state=None):
        """Observation, reward and step info straight off the simulator
        arrays; matches build_observation on the exported state exactly."""
        cfg = self.cfg
        sim = self._sim
        t = self._k / 50.0
        p1d, p2d, ud = self._traj.sample(t)
        qw, qx, qy, qz = sim.squat
        u_c = np.array(
            [
                2.0 * (qx * qz + qw * qy),
                2.0 * (qy * qz - qw * qx),
                1.0 - 2.0 * (qx * qx + qy * qy),
            ]
        )
        half = 0.5 * self._stick.length * u_c
        p1c = sim.spos + half
        p2c = sim.spos - half
        if cfg.tactile.mode == "synthetic":
            mask = self._frame().active_mask
        else:
            mask = sim.tax_pen > 0.0
        force_sum = float(sim.tax_fn.sum())
        reward = compute_reward(cfg.reward, ud, u_c, p1d, p1c, p2d, p2c, force_sum)
        lo, hi = self._limits
        q_norm = np.clip((sim.q - lo) / (hi - lo), 0.0, 1.0)
        variant = cfg.task.obs_variant
        parts = [q_norm, ud]
        if variant in ("object_pose", "pose_plus_centers", "pose_plus_binary"):
            parts.append((sim.spos - NOMINAL_STICK_CENTER) / cfg.task.pose_scale)
            parts.append(u_c)
        if variant in ("contact_centers", "pose_plus_centers"):
            counts = mask.sum(axis=1)
            sums = mask.astype(float) @ self.layout.positions
            centers = np.zeros((N_FINGERS, 3))
            live = counts > 0
            centers[live] = (
                cfg.task.center_scale * sums[live] / counts[live, None]
            )
            parts.append(centers.ravel())
            parts.append(live.astype(float))
        elif variant == "raw_tactile":
            parts.append(mask.astype(float).ravel())
        elif variant == "pose_plus_binary":
            parts.append(mask.any(axis=1).astype(float))
        obs = np.concatenate(parts)
        info = StepInfo(
            p_err_lower=float(np.linalg.norm(p2d - p2c)),
            p_err_upper=float(np.linalg.norm(p1d - p1c)),
            q_err=geo.angle_between(ud, u_c),
            force_sum=force_sum,
            n_contacts=int(mask.sum()),
            dropped=bool(sim.spos[2] < cfg.randomization.drop_height),
        )
        return obs, reward, info

    @property
    def state(self) -> SimState:
        return self._sim.export_state()

    @property
    def reference(self) -> ReferenceTrajectory:
        return self._traj


# ---------------------------------------------------------------------------
# episode logging and evaluation


EPISODE_LOG_HEADER = (
    ["t", "reward", "p_err_lower", "p_err_upper", "q_err_deg"]
    + [f"c{f}{a}" for f in (1, 2, 3) for a in "xyz"]
    + [f"a{j}" for j in range(6)]
)


class EpisodeLog:
    """Per-step record of one episode, written as CSV."""

    def __init__(self):
        self.rows = []

    def add(self, t, reward, info: StepInfo, centers, action):
        self.rows.append(
            [t, reward, info.p_err_lower, info.p_err_upper, math.degrees(info.q_err)]
            + list(centers)
            + list(action)
        )

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(EPISODE_LOG_HEADER)
            for row in self.rows:
                w.writerow([f"{v:.6f}" for v in row])


def extract_centers(env: ManipulationEnv) -> np.ndarray:
    """Scaled per-finger contact centers with zero sentinels, length 9."""
    frame = env._frame()
    out = np.zeros(9)
    for f in range(N_FINGERS):
        c = contact_center(frame, env.layout, f, scale=env.cfg.task.center_scale)
        if c is not None:
            out[3 * f : 3 * f + 3] = c
    return out


def run_episode(env: ManipulationEnv, policy, seed: int | None = None, log: EpisodeLog | None = None):
    """Roll one episode; returns summary stats.

    `policy(obs) -> action`; exceptions from non-finite physics mark the
    episode as failed.
    """
    obs, info = env.reset(seed=seed)
    total = 0.0
    p_errs, q_errs = [], []
    steps = 0
    dropped = False
    while True:
        action = policy(obs)
        try:
            obs, r, terminated, truncated, info = env.step(action)
        except NonFiniteState:
            dropped = True
            break
        total += r
        p_errs.append(info.p_err_lower)
        q_errs.append(info.q_err)
        steps += 1
        if log is not None:
            log.add(steps / 50.0, r, info, extract_centers(env), action)
        if terminated:
            dropped = True
            break
        if truncated:
            break
    return {
        "return": total,
        "steps": steps,
        "retained": not dropped,
        "p_err_mean": float(np.mean(p_errs)) if p_errs else math.inf,
        "q_err_mean": float(np.mean(q_errs)) if q_errs else math.inf,
    }
