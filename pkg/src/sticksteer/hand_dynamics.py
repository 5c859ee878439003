"""Kinematics and forward dynamics of the three-fingered hand plus stick.

The hand has three fingers mounted around a fixed palm: finger 1 (the thumb)
opposes fingers 2 and 3 across the grasp region. Every active joint flexes
about a vertical axis, so each finger is a planar two-link chain in a
horizontal plane; the three chains sit at three different heights, which is
what lets them tilt a near-vertical stick in any direction. The proximal
joints (J0, J3, J6) are worm-gear driven: they carry a backlash sub-joint
and cannot be back-driven (self-lock). J2 and J5 are base spread joints
held fixed at zero.

Joint naming follows the eight-joint layout J0..J7; the six active joints
appear in state vectors in the order (J0, J1, J3, J4, J6, J7), i.e.
proximal/distal per finger.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry as geo

GRAVITY = 9.81

ACTIVE_JOINT_NAMES = ("J0", "J1", "J3", "J4", "J6", "J7")
FIXED_JOINT_NAMES = ("J2", "J5")
WORM_FINGERS = (0, 1, 2)  # every finger's proximal joint is worm-geared
N_FINGERS = 3
N_ACTIVE = 6


class NonFiniteState(RuntimeError):
    """Raised when integration produces NaN/Inf state (parameters too stiff)."""


@dataclass
class JointSpec:
    """Static description of one joint."""

    id: str
    axis: np.ndarray            # unit axis in the parent frame
    limits: tuple[float, float]
    kp: float
    kd: float
    backlash_range: tuple[float, float] = (0.0, 0.0)
    self_lock: bool = False
    armature_inertia: float = 0.01   # reflected rotor inertia, kg m^2
    damping: float = 0.05            # passive, N m s / rad
    # gearbox Coulomb friction: lets a position-held joint carry small
    # loads without drifting, like a real servo (worm joints hold through
    # their self-lock instead and leave this at zero)
    stiction: float = 0.0
    fixed: bool = False

    def __post_init__(self):
        self.axis = np.asarray(self.axis, dtype=float)
        if self.limits[0] >= self.limits[1]:
            raise ValueError(f"{self.id}: limits must satisfy lower < upper")
        if not self.fixed and (self.kp <= 0 or self.kd <= 0):
            raise ValueError(f"{self.id}: kp and kd must be positive")
        lo, hi = self.backlash_range
        if not (lo <= 0.0 <= hi):
            raise ValueError(f"{self.id}: backlash range must straddle zero")


@dataclass
class BacklashState:
    """Uncontrolled sub-joint position within the gear gap.

    `offset` is the link angle minus the actuated (gear) angle, clamped to
    the joint's backlash range. `offset_velocity` is its rate relative to
    the gear.
    """

    offset: float = 0.0
    offset_velocity: float = 0.0


@dataclass
class StickModel:
    """Slender cylinder manipulated by the fingertips."""

    length: float = 0.30
    radius: float = 0.005
    mass: float = 0.05
    friction_mu: float = 0.6

    def __post_init__(self):
        if min(self.length, self.radius, self.mass, self.friction_mu) <= 0:
            raise ValueError("stick parameters must be strictly positive")
        if self.radius / self.length >= 0.2:
            raise ValueError("stick must be slender (radius/length < 0.2)")

    @property
    def inertia_diag(self) -> np.ndarray:
        """Body-frame principal inertia (axis along body z)."""
        i_perp = self.mass * (3 * self.radius**2 + self.length**2) / 12.0
        i_ax = 0.5 * self.mass * self.radius**2
        return np.array([i_perp, i_perp, i_ax])


@dataclass
class SimState:
    """Full simulation state: joints, backlash sub-joints and stick pose."""

    q: np.ndarray                       # (6,) actuated positions, rad
    qdot: np.ndarray                    # (6,) rad/s
    backlash: list[BacklashState]       # one per worm finger (J0, J3, J6)
    stick_pos: np.ndarray               # (3,) center of the cylinder, m
    stick_quat: np.ndarray              # (4,) unit (w, x, y, z)
    stick_vel: np.ndarray               # (3,) m/s
    stick_omega: np.ndarray             # (3,) rad/s, world frame
    t: float = 0.0

    def copy(self) -> "SimState":
        return SimState(
            q=self.q.copy(),
            qdot=self.qdot.copy(),
            backlash=[replace(b) for b in self.backlash],
            stick_pos=self.stick_pos.copy(),
            stick_quat=self.stick_quat.copy(),
            stick_vel=self.stick_vel.copy(),
            stick_omega=self.stick_omega.copy(),
            t=self.t,
        )

    def stick_axis(self) -> np.ndarray:
        return geo.quat_rotate(self.stick_quat, np.array([0.0, 0.0, 1.0]))

    def stick_endpoints(self, length: float) -> tuple[np.ndarray, np.ndarray]:
        """(upper P1, lower P2) for a stick of the given length."""
        u = self.stick_axis()
        return self.stick_pos + 0.5 * length * u, self.stick_pos - 0.5 * length * u


@dataclass
class ContactParams:
    """Penalty-contact constants for stick-taxel interaction.

    Stiffness and damping are per taxel contact; a grasp line contact
    engages around six taxels, so the whole pad acts near 5000 N/m and
    indents about 1 mm under a 5 N grip. Keeping the per-taxel value this
    low also keeps the explicit integrator stable when dozens of taxels
    engage at once.
    """

    stiffness: float = 800.0     # N/m per taxel
    damping: float = 8.0         # N s / m per taxel
    slip_velocity: float = 0.005  # m/s, knee of the stateless friction op
    # friction anchor springs: stiction needs position memory, a capped
    # viscous law alone lets a grasped stick creep axially at the impulse
    # limit (tens of mm/s)
    tangent_stiffness: float = 250.0  # N/m per taxel
    # viscous coefficients are capped at impulse_safety * m_eff / dt so the
    # damping/friction impulse of one step cannot overshoot the relative
    # velocity it opposes
    impulse_safety: float = 0.8
    dt_reference: float = 1e-3


@dataclass
class HandModel:
    """Geometry and joint table of the hand.

    Finger bases sit on two vertical columns separated by the palm width;
    all flexion axes are +/- world z so each finger works in a horizontal
    plane at its own height.
    """

    joints: dict[str, JointSpec]
    base_positions: np.ndarray = field(
        default_factory=lambda: np.array(
            [
                [-0.04, 0.0, 0.0],     # finger 1 (thumb)
                [0.04, 0.0, 0.025],    # finger 2
                [0.04, 0.0, -0.025],   # finger 3
            ]
        )
    )
    axis_signs: np.ndarray = field(
        default_factory=lambda: np.array([-1.0, 1.0, 1.0])
    )
    link1: float = 0.05
    link2: float = 0.04
    palm_width: float = 0.08
    # pad tilt on the distal link so opposing pads face each other squarely
    # at the nominal grasp flexion (proximal+distal about 0.55 rad)
    pad_mount_angle: float = 0.55
    fingertip_force_cap: float = 15.0  # N resultant per finger
    contact: ContactParams = field(default_factory=ContactParams)
    # passive behaviour of the gear-gap sub-joints
    backlash_stiffness: np.ndarray = field(
        default_factory=lambda: np.full(3, 0.1)
    )
    backlash_damping: np.ndarray = field(
        default_factory=lambda: np.full(3, 0.01)
    )
    backlash_inertia: np.ndarray = field(
        default_factory=lambda: np.full(3, 2e-4)
    )
    backlash_friction: np.ndarray = field(
        default_factory=lambda: np.full(3, 0.003)
    )

    def active_joints(self) -> list[JointSpec]:
        return [self.joints[n] for n in ACTIVE_JOINT_NAMES]

    @property
    def torque_cap(self) -> float:
        """Per-joint torque clamp realizing the fingertip force cap."""
        return self.fingertip_force_cap * self.link2

    def limits_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        lo = np.array([j.limits[0] for j in self.active_joints()])
        hi = np.array([j.limits[1] for j in self.active_joints()])
        return lo, hi

    def copy(self) -> "HandModel":
        return copy.deepcopy(self)


def default_hand_model(
    kp: float = 8.0,
    kd: float = 0.5,
    backlash: tuple[float, float] = (-0.02, 0.02),
    limits: tuple[float, float] = (-0.35, 1.60),
    distal_stiction: float = 0.08,
) -> HandModel:
    """Canonical hand used everywhere unless a config file overrides it."""
    joints: dict[str, JointSpec] = {}
    signs = {"J0": -1.0, "J1": -1.0, "J3": 1.0, "J4": 1.0, "J6": 1.0, "J7": 1.0}
    for name in ACTIVE_JOINT_NAMES:
        prox = name in ("J0", "J3", "J6")
        joints[name] = JointSpec(
            id=name,
            axis=np.array([0.0, 0.0, signs[name]]),
            limits=limits,
            kp=kp,
            kd=kd,
            backlash_range=backlash if prox else (0.0, 0.0),
            self_lock=prox,
            stiction=0.0 if prox else distal_stiction,
        )
    for name in FIXED_JOINT_NAMES:
        joints[name] = JointSpec(
            id=name,
            axis=np.array([0.0, 1.0, 0.0]),
            limits=(-1.571, 1.571),
            kp=1.0,
            kd=1.0,
            fixed=True,
        )
    return HandModel(joints=joints)


def make_initial_state(
    q: np.ndarray | None = None,
    stick_pos: np.ndarray | None = None,
    stick_quat: np.ndarray | None = None,
) -> SimState:
    return SimState(
        q=np.zeros(6) if q is None else np.asarray(q, dtype=float).copy(),
        qdot=np.zeros(6),
        backlash=[BacklashState() for _ in range(3)],
        stick_pos=(
            np.array([0.0, 0.079, -0.10])
            if stick_pos is None
            else np.asarray(stick_pos, dtype=float).copy()
        ),
        stick_quat=(
            np.array([1.0, 0.0, 0.0, 0.0])
            if stick_quat is None
            else geo.quat_normalize(np.asarray(stick_quat, dtype=float).copy())
        ),
        stick_vel=np.zeros(3),
        stick_omega=np.zeros(3),
    )


# ---------------------------------------------------------------------------
# elementary joint operations


def pd_torque(spec: JointSpec, q_d: float, q: float, qdot: float) -> float:
    """Proportional-derivative torque K_P (q_d - q) - K_D qdot.

    No saturation here; the stepper applies the fingertip force cap.
    """
    return spec.kp * (q_d - q) - spec.kd * qdot


def effective_joint_angle(q_actuated: float, backlash: BacklashState) -> float:
    """Actual parent-child rotation: actuated angle plus the gap offset."""
    return q_actuated + backlash.offset


def commanded_direction(q_target: float, q: float, tol: float = 1e-12) -> int:
    d = q_target - q
    if d > tol:
        return 1
    if d < -tol:
        return -1
    return 0


def apply_self_lock(
    spec: JointSpec,
    state: SimState,
    joint_index: int,
    direction: int,
    q_prev: float,
    q_target: float,
) -> None:
    """Clamp a worm-gear joint so it never moves against its drive direction.

    With no commanded motion the actuated coordinate is frozen; when driven
    it may not overshoot past the target. Backlash offsets are unaffected.
    """
    if not spec.self_lock:
        return
    if direction == 0:
        state.q[joint_index] = q_prev
        state.qdot[joint_index] = 0.0
        return
    if state.qdot[joint_index] * direction < 0.0:
        state.qdot[joint_index] = 0.0
        state.q[joint_index] = q_prev
    if (state.q[joint_index] - q_target) * direction > 0.0:
        state.q[joint_index] = q_target
        state.qdot[joint_index] = 0.0


# ---------------------------------------------------------------------------
# forward kinematics


@dataclass
class FingerFrames:
    base: np.ndarray          # joint-1 origin, world
    distal_origin: np.ndarray  # joint-2 origin, world
    tip_origin: np.ndarray     # fingertip pad center, world
    rot_proximal: np.ndarray   # (3,3) world rotation of the proximal link
    rot_tip: np.ndarray        # (3,3) columns are tip-frame axes in world


@dataclass
class FKResult:
    fingers: list[FingerFrames]
    taxel_world: np.ndarray     # (3, n_taxel, 3)
    taxel_normal_world: np.ndarray  # (3, n_taxel, 3)


def tip_frame_zero(model: HandModel, finger: int) -> np.ndarray:
    """Tip frame at zero pose: x along the finger, z toward the curl side.

    The pad is mounted tilted back by `pad_mount_angle` about the flexion
    axis, which cancels the nominal grasp flexion so the pads of opposing
    fingers meet face to face.
    """
    cache = getattr(model, "_tip0_cache", None)
    if cache is None:
        cache = {}
        object.__setattr__(model, "_tip0_cache", cache)
    key = (finger, model.pad_mount_angle)
    if key not in cache:
        d = np.array([0.0, 1.0, 0.0])
        s = model.axis_signs[finger]
        axis = np.array([0.0, 0.0, s])
        z = np.cross(axis, d)
        y = np.cross(z, d)
        cache[key] = geo.rot_z(-s * model.pad_mount_angle) @ np.column_stack([d, y, z])
    return cache[key]


def finger_angles(model: HandModel, state: SimState, finger: int) -> tuple[float, float]:
    """(proximal link angle incl. backlash, distal joint angle)."""
    qp = state.q[2 * finger]
    theta = effective_joint_angle(qp, state.backlash[finger])
    return theta, state.q[2 * finger + 1]


def forward_kinematics(
    model: HandModel, state: SimState, taxel_local: np.ndarray | None = None
) -> FKResult:
    """World poses of all finger links and, optionally, taxel sites.

    `taxel_local` is an (n, 3) array of fingertip-frame taxel positions
    shared by all three fingertips (columns 3:6 may hold normals when the
    array is (n, 6)).
    """
    fingers = []
    n_tax = 0 if taxel_local is None else taxel_local.shape[0]
    tax_w = np.zeros((3, n_tax, 3))
    nrm_w = np.zeros((3, n_tax, 3))
    for f in range(N_FINGERS):
        s = model.axis_signs[f]
        theta, q2 = finger_angles(model, state, f)
        a1 = s * theta
        a12 = s * (theta + q2)
        r1 = geo.rot_z(a1)
        r12 = geo.rot_z(a12)
        base = model.base_positions[f]
        o_dist = base + r1 @ np.array([0.0, model.link1, 0.0])
        tip = o_dist + r12 @ np.array([0.0, model.link2, 0.0])
        rot_tip = r12 @ tip_frame_zero(model, f)
        fingers.append(
            FingerFrames(
                base=base.copy(),
                distal_origin=o_dist,
                tip_origin=tip,
                rot_proximal=r1,
                rot_tip=rot_tip,
            )
        )
        if n_tax:
            tax_w[f] = tip + taxel_local[:, :3] @ rot_tip.T
            if taxel_local.shape[1] >= 6:
                nrm_w[f] = taxel_local[:, 3:6] @ rot_tip.T
    return FKResult(fingers=fingers, taxel_world=tax_w, taxel_normal_world=nrm_w)


def taxel_point_velocity(
    model: HandModel, state: SimState, finger: int, point: np.ndarray
) -> np.ndarray:
    """World velocity of a material point on the distal link."""
    s = model.axis_signs[finger]
    qp_rate = state.backlash[finger].offset_velocity + state.qdot[2 * finger]
    w1 = s * qp_rate
    w12 = s * (qp_rate + state.qdot[2 * finger + 1])
    theta, q2 = finger_angles(model, state, finger)
    base = model.base_positions[finger]
    o_dist = base + geo.rot_z(s * theta) @ np.array([0.0, model.link1, 0.0])

    def zcross(w, r):
        return np.array([-w * r[1], w * r[0], 0.0])

    return zcross(w1, o_dist - base) + zcross(w12, point - o_dist)


# ---------------------------------------------------------------------------
# stepping (python reference path; the numba kernel mirrors this exactly)


def _integrate_stick(
    stick: StickModel,
    state: SimState,
    force: np.ndarray,
    torque: np.ndarray,
    dt: float,
    gravity_comp: bool,
) -> None:
    """Newton-Euler update for a spin-free axisymmetric cylinder.

    Rotation about the stick's own axis is ignored (the task is blind to
    it and the tiny axial inertia would dominate the step-size budget), so
    angular velocity and torque are kept in the plane normal to the axis;
    for that motion the gyroscopic term of an axisymmetric body is zero.
    """
    acc = force / stick.mass
    if not gravity_comp:
        acc = acc + np.array([0.0, 0.0, -GRAVITY])
    state.stick_vel = state.stick_vel + dt * acc
    u = state.stick_axis()
    i_perp = stick.inertia_diag[0]
    tau_perp = torque - (torque @ u) * u
    omega = state.stick_omega + dt * tau_perp / i_perp
    state.stick_omega = omega - (omega @ u) * u
    state.stick_pos = state.stick_pos + dt * state.stick_vel
    state.stick_quat = geo.quat_integrate(state.stick_quat, state.stick_omega, dt)


def step_python(
    model: HandModel,
    stick: StickModel,
    state: SimState,
    q_target: np.ndarray,
    contact_eval,
    dt: float,
    n_steps: int = 1,
    gravity_comp: bool = False,
) -> SimState:
    """Reference semi-implicit Euler stepper.

    `contact_eval(state)` returns (stick force, stick torque,
    distal joint reaction torques (3,), backlash link torques (3,)); it is
    provided by the contact module so this stepper stays geometry-agnostic.
    Mutates and returns `state`. Slow; used for validation and as the
    no-JIT fallback semantics reference.
    """
    lim_lo, lim_hi = model.limits_arrays()
    q_target = np.clip(np.asarray(q_target, dtype=float), lim_lo, lim_hi)
    cap = model.torque_cap
    specs = model.active_joints()
    for _ in range(n_steps):
        f_stick, tau_stick, tau_dist, tau_link = contact_eval(state)
        # absolute link angle/rate must be captured before the gear moves
        th_abs = [state.q[2 * f] + state.backlash[f].offset for f in range(N_FINGERS)]
        thd_abs = [
            state.backlash[f].offset_velocity + state.qdot[2 * f]
            for f in range(N_FINGERS)
        ]
        _integrate_stick(stick, state, f_stick, tau_stick, dt, gravity_comp)

        for f in range(N_FINGERS):
            jp, jd = 2 * f, 2 * f + 1
            # proximal worm joint: external load cannot back-drive it, but
            # when the gear drives the pinned link into a load the load
            # torque reflects onto the motor, which can stall at its cap
            spec = specs[jp]
            q_prev = state.q[jp]
            direction = commanded_direction(q_target[jp], q_prev)
            tau = float(np.clip(pd_torque(spec, q_target[jp], q_prev, state.qdot[jp]), -cap, cap))
            lo_f, hi_f = spec.backlash_range
            beta = state.backlash[f].offset
            engaged = (direction > 0 and beta <= lo_f + 1e-9) or (
                direction < 0 and beta >= hi_f - 1e-9
            )
            if engaged:
                tau += tau_link[f]
            acc = (tau - spec.damping * state.qdot[jp]) / spec.armature_inertia
            state.qdot[jp] += dt * acc
            state.q[jp] += dt * state.qdot[jp]
            apply_self_lock(spec, state, jp, direction, q_prev, q_target[jp])

            # distal joint: revolute with contact reaction and gear stiction
            spec = specs[jd]
            tau = float(np.clip(pd_torque(spec, q_target[jd], state.q[jd], state.qdot[jd]), -cap, cap))
            tau += tau_dist[f] - spec.damping * state.qdot[jd]
            qd_j = state.qdot[jd]
            fric = spec.stiction
            if abs(qd_j) < 1e-10:
                if abs(tau) <= fric:
                    qd_j = 0.0
                else:
                    qd_j += dt * (tau - fric * np.sign(tau)) / spec.armature_inertia
            else:
                nqd = qd_j + dt * (tau - fric * np.sign(qd_j)) / spec.armature_inertia
                qd_j = 0.0 if (nqd * qd_j < 0.0 and abs(tau) <= fric) else nqd
            state.qdot[jd] = qd_j
            state.q[jd] += dt * qd_j

        for j in range(N_ACTIVE):
            if state.q[j] < lim_lo[j]:
                state.q[j] = lim_lo[j]
                state.qdot[j] = 0.0
            elif state.q[j] > lim_hi[j]:
                state.q[j] = lim_hi[j]
                state.qdot[j] = 0.0

        for f in range(N_FINGERS):
            _advance_backlash(model, state, f, tau_link[f], dt, th_abs[f], thd_abs[f])

        state.t += dt
    _check_finite(state)
    return state


def _advance_backlash(
    model: HandModel,
    state: SimState,
    f: int,
    tau_ext: float,
    dt: float,
    theta: float,
    thd: float,
) -> None:
    """Gear-gap link dynamics: stiction play plus externally driven motion.

    The link holds its world position while unloaded (|torque| below the
    gap friction), is dragged by the engaging gear edge, and moves
    dynamically when contact torques exceed the friction. `theta` and
    `thd` are the link's absolute angle and rate captured at the start of
    the step, before the gear moved.
    """
    jp = 2 * f
    spec = model.joints[ACTIVE_JOINT_NAMES[jp]]
    lo, hi = spec.backlash_range
    bl = state.backlash[f]
    tau = (
        tau_ext
        - model.backlash_stiffness[f] * bl.offset
        - model.backlash_damping[f] * bl.offset_velocity
    )
    fric = model.backlash_friction[f]
    inertia = model.backlash_inertia[f]
    if abs(thd) < 1e-10:
        if abs(tau) <= fric:
            thd = 0.0
        else:
            thd += dt * (tau - fric * np.sign(tau)) / inertia
    else:
        new_thd = thd + dt * (tau - fric * np.sign(thd)) / inertia
        if new_thd * thd < 0.0 and abs(tau) <= fric:
            thd = 0.0
        else:
            thd = new_thd
    theta += dt * thd
    q, qd = state.q[jp], state.qdot[jp]  # post-update gear state bounds the gap window
    if theta < q + lo:
        theta = q + lo
        thd = max(thd, qd)
    elif theta > q + hi:
        theta = q + hi
        thd = min(thd, qd)
    bl.offset = theta - q
    bl.offset_velocity = thd - qd


class Simulator:
    """Persistent kernel-backed stepper for one hand+stick instance.

    Owns the packed parameter arrays so repeated stepping does no
    per-call marshalling beyond the state itself. Instances are
    independent values; one instance must not be stepped concurrently.
    """

    def __init__(self, model: HandModel, stick: StickModel, layout):
        from . import _kernel

        self._kernel = _kernel
        self.model = model
        self.stick = stick
        self.layout = layout
        specs = model.active_joints()
        self.kp = np.array([s.kp for s in specs])
        self.kd = np.array([s.kd for s in specs])
        self.armature = np.array([s.armature_inertia for s in specs])
        self.jdamp = np.array([s.damping for s in specs])
        self.stiction = np.array([s.stiction for s in specs])
        self.lim_lo, self.lim_hi = model.limits_arrays()
        self.sl_flag = np.array(
            [1 if model.joints[ACTIVE_JOINT_NAMES[2 * f]].self_lock else 0 for f in range(3)],
            dtype=np.int64,
        )
        self.bl_lo = np.array(
            [model.joints[ACTIVE_JOINT_NAMES[2 * f]].backlash_range[0] for f in range(3)]
        )
        self.bl_hi = np.array(
            [model.joints[ACTIVE_JOINT_NAMES[2 * f]].backlash_range[1] for f in range(3)]
        )
        n_tax = layout.positions.shape[0]
        self.tax0 = np.zeros((3, n_tax, 3))
        for f in range(N_FINGERS):
            self.tax0[f] = layout.positions @ tip_frame_zero(model, f).T
        self.tax_pen = np.zeros((3, n_tax))
        self.tax_fn = np.zeros((3, n_tax))
        self.tax_ft = np.zeros((3, n_tax))
        self.slip = np.zeros((3, n_tax, 3))
        # state mirrors
        self.q = np.zeros(6)
        self.qd = np.zeros(6)
        self.th = np.zeros(3)
        self.thd = np.zeros(3)
        self.spos = np.zeros(3)
        self.squat = np.array([1.0, 0.0, 0.0, 0.0])
        self.svel = np.zeros(3)
        self.somg = np.zeros(3)
        self.t = 0.0

    def load_state(self, state: SimState) -> None:
        self.slip[:] = 0.0
        self.q[:] = state.q
        self.qd[:] = state.qdot
        for f in range(N_FINGERS):
            self.th[f] = state.q[2 * f] + state.backlash[f].offset
            self.thd[f] = state.qdot[2 * f] + state.backlash[f].offset_velocity
        self.spos[:] = state.stick_pos
        self.squat[:] = state.stick_quat
        self.svel[:] = state.stick_vel
        self.somg[:] = state.stick_omega
        self.t = state.t

    def export_state(self) -> SimState:
        return SimState(
            q=self.q.copy(),
            qdot=self.qd.copy(),
            backlash=[
                BacklashState(
                    offset=self.th[f] - self.q[2 * f],
                    offset_velocity=self.thd[f] - self.qd[2 * f],
                )
                for f in range(N_FINGERS)
            ],
            stick_pos=self.spos.copy(),
            stick_quat=self.squat.copy(),
            stick_vel=self.svel.copy(),
            stick_omega=self.somg.copy(),
            t=self.t,
        )

    def step(
        self, q_target: np.ndarray, dt: float, n_steps: int, gravity_comp: bool = False
    ) -> None:
        qt = np.clip(np.asarray(q_target, dtype=float), self.lim_lo, self.lim_hi)
        m, s = self.model, self.stick
        inertia = s.inertia_diag
        status = self._kernel.run_steps(
            n_steps,
            self.q, self.qd, self.th, self.thd,
            self.spos, self.squat, self.svel, self.somg,
            qt, 1 if gravity_comp else 0,
            self.kp, self.kd, self.armature, self.jdamp, self.stiction,
            self.lim_lo, self.lim_hi,
            m.torque_cap,
            self.sl_flag, self.bl_lo, self.bl_hi,
            m.backlash_stiffness, m.backlash_damping,
            m.backlash_inertia, m.backlash_friction,
            m.base_positions, m.axis_signs, m.link1, m.link2,
            self.tax0, self.layout.sensing_radius,
            s.mass, s.radius, 0.5 * s.length, s.friction_mu, inertia[0],
            m.contact.stiffness, m.contact.damping, m.contact.tangent_stiffness,
            m.contact.impulse_safety / m.contact.dt_reference,
            GRAVITY, dt,
            self.slip,
            self.tax_pen, self.tax_fn, self.tax_ft,
        )
        self.t += n_steps * dt
        if status != 0:
            raise NonFiniteState("simulation state became non-finite")


def step(
    model: HandModel,
    stick: StickModel,
    layout,
    state: SimState,
    q_target: np.ndarray,
    dt: float = 1e-3,
    n_steps: int = 1,
    gravity_comp: bool = False,
    use_kernel: bool = True,
) -> SimState:
    """Advance the full system; convenience one-shot wrapper.

    The kernel path packs parameters per call; episode loops should hold a
    `Simulator` instead. The python path exists for validation.
    """
    if use_kernel:
        sim = Simulator(model, stick, layout)
        sim.load_state(state)
        sim.step(q_target, dt, n_steps, gravity_comp)
        out = sim.export_state()
        state.__dict__.update(out.__dict__)
        return state
    from .contact_tactile import make_contact_eval

    return step_python(
        model, stick, state, q_target, make_contact_eval(model, stick, layout, dt),
        dt, n_steps, gravity_comp,
    )


def _check_finite(state: SimState) -> None:
    vals = np.concatenate(
        [
            state.q,
            state.qdot,
            state.stick_pos,
            state.stick_quat,
            state.stick_vel,
            state.stick_omega,
            [b.offset for b in state.backlash],
            [b.offset_velocity for b in state.backlash],
        ]
    )
    if not np.all(np.isfinite(vals)):
        raise NonFiniteState("simulation state became non-finite")
