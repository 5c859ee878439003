"""Configuration objects and their structured-text (INI) serialization.

One file carries everything tunable: hand geometry and joint table, stick,
contact constants, tactile processing, task settings, reward weights and
the domain randomization distributions. Every value has a default, so an
empty file is a valid config.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np

from .hand_dynamics import ACTIVE_JOINT_NAMES, HandModel, StickModel, default_hand_model

WORM_JOINTS = ("J0", "J3", "J6")

OBS_VARIANTS = (
    "contact_centers",
    "object_pose",
    "pose_plus_centers",
    "raw_tactile",
    "pose_plus_binary",
)

TASKS = ("line", "circle", "spiral", "eight")


@dataclass
class RewardWeights:
    """Weights of the four reward terms."""

    c: float = 0.5
    w_orientation: float = 1.5
    w_position: float = 2.0
    w_force: float = 0.005

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("task reward C must be positive")
        if min(self.w_orientation, self.w_position, self.w_force) < 0:
            raise ValueError("weights must be non-negative")


@dataclass
class RandomizationSpec:
    """Per-episode sampling of physical parameters.

    Gains and gap stiffness/damping are normal distributions (mean, std)
    truncated at positivity; stick properties are uniform ranges. Also
    carries the initial-state dataset reference, the episode length and
    the drop-height threshold, which the environment reads from here.
    """

    kp: dict = field(
        default_factory=lambda: {n: (8.0, 0.8) for n in ACTIVE_JOINT_NAMES}
    )
    kd: dict = field(
        default_factory=lambda: {n: (0.5, 0.05) for n in ACTIVE_JOINT_NAMES}
    )
    backlash: dict = field(
        default_factory=lambda: {n: (-0.02, 0.02) for n in WORM_JOINTS}
    )
    gap_stiffness: tuple = (0.1, 0.02)
    gap_damping: tuple = (0.01, 0.002)
    stick_mass: tuple = (0.03, 0.07)
    stick_radius: tuple = (0.004, 0.006)
    friction: tuple = (0.4, 0.8)
    initial_states_path: str | None = None
    episode_length: int = 500
    drop_height: float = -0.15

    @staticmethod
    def _positive_normal(rng, mean, std):
        if std <= 0:
            return mean
        for _ in range(100):
            v = rng.normal(mean, std)
            if v > 0:
                return v
        return abs(rng.normal(mean, std)) or mean

    def sample(self, rng: np.random.Generator) -> dict:
        """Concrete parameter draw for one episode."""
        return {
            "kp": np.array(
                [self._positive_normal(rng, *self.kp[n]) for n in ACTIVE_JOINT_NAMES]
            ),
            "kd": np.array(
                [self._positive_normal(rng, *self.kd[n]) for n in ACTIVE_JOINT_NAMES]
            ),
            "gap_stiffness": np.array(
                [self._positive_normal(rng, *self.gap_stiffness) for _ in range(3)]
            ),
            "gap_damping": np.array(
                [self._positive_normal(rng, *self.gap_damping) for _ in range(3)]
            ),
            "stick_mass": rng.uniform(*self.stick_mass),
            "stick_radius": rng.uniform(*self.stick_radius),
            "friction": rng.uniform(*self.friction),
        }


@dataclass
class TactileConfig:
    """Sensor-processing settings shared by the env and the CLI tools."""

    gain: float = 10.0          # sensor units per newton
    noise_std: float = 0.05
    threshold: float = 0.15     # 3x the synthetic noise std
    mode: str = "geometric"     # geometric | synthetic
    sensing_radius: float = 0.0015
    patch_radius: float = 0.012
    patch_length: float = 0.03
    arc_span_deg: float = 120.0


@dataclass
class TaskConfig:
    """Reference trajectory selection and MDP settings."""

    kind: str = "circle"
    omega: float = np.pi            # rad/s, circle and spiral
    radius: float = 0.02            # m, circle
    line_speed: float = 0.02        # m/s
    line_half_length: float = 0.02  # m
    spiral_r0: float = 0.005
    spiral_r1: float = 0.02
    spiral_laps: float = 3.0
    eight_half_width: float = 0.02
    eight_period: float = 4.0
    obs_variant: str = "contact_centers"
    episode_length: int = 500
    action_delta_max: float = 0.05
    drop_margin: float = 0.05       # below the nominal grasp center
    settle_time: float = 0.1
    center_scale: float = 1.0 / 0.03
    pose_scale: float = 0.1         # m, object-pose observation normalization

    def __post_init__(self):
        if self.kind not in TASKS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.obs_variant not in OBS_VARIANTS:
            raise ValueError(f"unknown observation variant {self.obs_variant!r}")


@dataclass
class GeneratorConfig:
    """Initial-state generation (joint/pose sampling and closing)."""

    n_states: int = 200
    joint_jitter: float = 0.3       # rad around the open posture
    open_posture: float = 0.15
    pos_jitter_xy: float = 0.01
    pos_jitter_z: float = 0.02
    max_tilt_deg: float = 15.0
    close_speed: float = 0.5        # rad/s
    check_period: float = 0.02      # contact poll at the policy rate
    max_close_time: float = 2.5
    max_store_penetration: float = 0.003
    # screen stored records with a short settle-and-hold simulation; the
    # grasp may be imperfect but must not launch the stick at release
    hold_screen_steps: int = 25


@dataclass
class FullConfig:
    hand: HandModel = field(default_factory=default_hand_model)
    stick: StickModel = field(default_factory=StickModel)
    tactile: TactileConfig = field(default_factory=TactileConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    reward: RewardWeights = field(default_factory=RewardWeights)
    randomization: RandomizationSpec = field(default_factory=RandomizationSpec)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    randomize: bool = True


# ---------------------------------------------------------------------------
# INI serialization


def _num(v) -> str:
    if isinstance(v, bool):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return repr(int(v))
    return repr(float(v))


def _write_simple(cp, section: str, obj, names) -> None:
    cp[section] = {}
    for name in names:
        v = getattr(obj, name)
        if isinstance(v, tuple):
            cp[section][name] = " ".join(_num(x) for x in v)
        elif isinstance(v, str):
            cp[section][name] = v
        else:
            cp[section][name] = _num(v)


def _read_simple(cp, section: str, obj) -> None:
    if section not in cp:
        return
    for name, raw in cp[section].items():
        if not hasattr(obj, name):
            raise ValueError(f"unknown key {name!r} in [{section}]")
        cur = getattr(obj, name)
        if isinstance(cur, bool):
            setattr(obj, name, raw.strip().lower() in ("1", "true", "yes"))
        elif isinstance(cur, int):
            setattr(obj, name, int(raw))
        elif isinstance(cur, float):
            setattr(obj, name, float(raw))
        elif isinstance(cur, tuple):
            setattr(obj, name, tuple(float(x) for x in raw.split()))
        elif isinstance(cur, str) or cur is None:
            setattr(obj, name, raw)
        else:
            raise ValueError(f"cannot parse key {name!r} in [{section}]")


def save_config(cfg: FullConfig, path) -> None:
    cp = configparser.ConfigParser()
    hand = cfg.hand
    cp["hand"] = {
        "link1": _num(hand.link1),
        "link2": _num(hand.link2),
        "palm_width": _num(hand.palm_width),
        "pad_mount_angle": _num(hand.pad_mount_angle),
        "fingertip_force_cap": _num(hand.fingertip_force_cap),
        "base_positions": " ".join(_num(v) for v in hand.base_positions.ravel()),
        "gap_stiffness": " ".join(_num(v) for v in hand.backlash_stiffness),
        "gap_damping": " ".join(_num(v) for v in hand.backlash_damping),
        "gap_inertia": " ".join(_num(v) for v in hand.backlash_inertia),
        "gap_friction": " ".join(_num(v) for v in hand.backlash_friction),
    }
    for name in ACTIVE_JOINT_NAMES:
        j = hand.joints[name]
        cp[f"hand.{name}"] = {
            "kp": _num(j.kp),
            "kd": _num(j.kd),
            "limits": f"{_num(j.limits[0])} {_num(j.limits[1])}",
            "backlash": f"{_num(j.backlash_range[0])} {_num(j.backlash_range[1])}",
            "self_lock": str(j.self_lock),
            "armature": _num(j.armature_inertia),
            "damping": _num(j.damping),
            "stiction": _num(j.stiction),
        }
    _write_simple(cp, "stick", cfg.stick, ["length", "radius", "mass", "friction_mu"])
    _write_simple(
        cp, "contact", hand.contact,
        ["stiffness", "damping", "slip_velocity", "tangent_stiffness",
         "impulse_safety", "dt_reference"],
    )
    _write_simple(cp, "tactile", cfg.tactile, [f.name for f in dc_fields(cfg.tactile)])
    _write_simple(cp, "task", cfg.task, [f.name for f in dc_fields(cfg.task)])
    cp["reward"] = {
        "c": _num(cfg.reward.c),
        "w_orientation": _num(cfg.reward.w_orientation),
        "w_position": _num(cfg.reward.w_position),
        "w_force": _num(cfg.reward.w_force),
    }
    _write_simple(cp, "generator", cfg.generator, [f.name for f in dc_fields(cfg.generator)])
    rnd = cfg.randomization
    sec = {"enabled": str(cfg.randomize)}
    for n in ACTIVE_JOINT_NAMES:
        sec[f"kp_{n}"] = f"{_num(rnd.kp[n][0])} {_num(rnd.kp[n][1])}"
        sec[f"kd_{n}"] = f"{_num(rnd.kd[n][0])} {_num(rnd.kd[n][1])}"
    for n in WORM_JOINTS:
        sec[f"backlash_{n}"] = f"{_num(rnd.backlash[n][0])} {_num(rnd.backlash[n][1])}"
    sec["gap_stiffness"] = f"{_num(rnd.gap_stiffness[0])} {_num(rnd.gap_stiffness[1])}"
    sec["gap_damping"] = f"{_num(rnd.gap_damping[0])} {_num(rnd.gap_damping[1])}"
    sec["stick_mass"] = f"{_num(rnd.stick_mass[0])} {_num(rnd.stick_mass[1])}"
    sec["stick_radius"] = f"{_num(rnd.stick_radius[0])} {_num(rnd.stick_radius[1])}"
    sec["friction"] = f"{_num(rnd.friction[0])} {_num(rnd.friction[1])}"
    sec["episode_length"] = str(rnd.episode_length)
    sec["drop_height"] = _num(rnd.drop_height)
    if rnd.initial_states_path:
        sec["initial_states_path"] = rnd.initial_states_path
    cp["randomization"] = sec
    with open(path, "w") as fh:
        cp.write(fh)


def load_config(path=None) -> FullConfig:
    cfg = FullConfig()
    if path is None:
        return cfg
    cp = configparser.ConfigParser()
    with open(path) as fh:
        cp.read_file(fh)
    if "hand" in cp:
        h = cp["hand"]
        hand = cfg.hand
        hand.link1 = h.getfloat("link1", hand.link1)
        hand.link2 = h.getfloat("link2", hand.link2)
        hand.palm_width = h.getfloat("palm_width", hand.palm_width)
        hand.pad_mount_angle = h.getfloat("pad_mount_angle", hand.pad_mount_angle)
        hand.fingertip_force_cap = h.getfloat(
            "fingertip_force_cap", hand.fingertip_force_cap
        )
        if "base_positions" in h:
            hand.base_positions = np.array(
                [float(x) for x in h["base_positions"].split()]
            ).reshape(3, 3)
        for key, attr in (
            ("gap_stiffness", "backlash_stiffness"),
            ("gap_damping", "backlash_damping"),
            ("gap_inertia", "backlash_inertia"),
            ("gap_friction", "backlash_friction"),
        ):
            if key in h:
                setattr(cfg.hand, attr, np.array([float(x) for x in h[key].split()]))
    for name in ACTIVE_JOINT_NAMES:
        sec = f"hand.{name}"
        if sec in cp:
            s = cp[sec]
            j = cfg.hand.joints[name]
            j.kp = s.getfloat("kp", j.kp)
            j.kd = s.getfloat("kd", j.kd)
            if "limits" in s:
                j.limits = tuple(float(x) for x in s["limits"].split())
            if "backlash" in s:
                j.backlash_range = tuple(float(x) for x in s["backlash"].split())
            j.self_lock = s.getboolean("self_lock", j.self_lock)
            j.armature_inertia = s.getfloat("armature", j.armature_inertia)
            j.damping = s.getfloat("damping", j.damping)
            j.stiction = s.getfloat("stiction", j.stiction)
    _read_simple(cp, "stick", cfg.stick)
    _read_simple(cp, "contact", cfg.hand.contact)
    _read_simple(cp, "tactile", cfg.tactile)
    _read_simple(cp, "task", cfg.task)
    if "reward" in cp:
        r = cp["reward"]
        cfg.reward = RewardWeights(
            c=r.getfloat("c", 0.5),
            w_orientation=r.getfloat("w_orientation", 1.5),
            w_position=r.getfloat("w_position", 2.0),
            w_force=r.getfloat("w_force", 0.005),
        )
    _read_simple(cp, "generator", cfg.generator)
    if "randomization" in cp:
        s = cp["randomization"]
        rnd = cfg.randomization
        cfg.randomize = s.getboolean("enabled", cfg.randomize)
        for n in ACTIVE_JOINT_NAMES:
            if f"kp_{n}" in s:
                rnd.kp[n] = tuple(float(x) for x in s[f"kp_{n}"].split())
            if f"kd_{n}" in s:
                rnd.kd[n] = tuple(float(x) for x in s[f"kd_{n}"].split())
        for n in WORM_JOINTS:
            if f"backlash_{n}" in s:
                rnd.backlash[n] = tuple(float(x) for x in s[f"backlash_{n}"].split())
        for key in ("gap_stiffness", "gap_damping", "stick_mass", "stick_radius", "friction"):
            if key in s:
                setattr(rnd, key, tuple(float(x) for x in s[key].split()))
        rnd.drop_height = s.getfloat("drop_height", rnd.drop_height)
        rnd.initial_states_path = s.get("initial_states_path", rnd.initial_states_path)
    # the task section owns the episode length; the spec object mirrors it
    cfg.randomization.episode_length = cfg.task.episode_length
    return cfg


def apply_sampled_params(hand: HandModel, stick: StickModel, sample: dict):
    """Install one randomization draw into copies of the models."""
    h = hand.copy()
    for i, name in enumerate(ACTIVE_JOINT_NAMES):
        h.joints[name].kp = float(sample["kp"][i])
        h.joints[name].kd = float(sample["kd"][i])
    h.backlash_stiffness = sample["gap_stiffness"].copy()
    h.backlash_damping = sample["gap_damping"].copy()
    s = StickModel(
        length=stick.length,
        radius=float(sample["stick_radius"]),
        mass=float(sample["stick_mass"]),
        friction_mu=float(sample["friction"]),
    )
    return h, s
