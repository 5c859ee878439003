"""Joint model identification: PD gain fitting and backlash range probing.

The "hardware" side is a synthetic generator (hidden-parameter simulator
plus measurement noise) so the whole pipeline runs without a robot; the
recording file format is the interface a real log would use.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import _kernel
from .cmaes import CmaEsResult, cma_es_minimize


class SaturatedProbe(RuntimeError):
    """Every backlash probe ran into a joint limit."""


@dataclass
class JointParams:
    """Single-joint constants used by the calibration rigs."""

    kp: float = 8.0
    kd: float = 0.5
    armature: float = 0.01
    damping: float = 0.05
    torque_cap: float = 0.6
    self_lock: bool = True
    stiction: float = 0.0
    limits: tuple[float, float] = (-0.35, 1.60)


@dataclass
class ReferenceRecording:
    """Commanded and measured positions of one joint at a fixed rate."""

    times: np.ndarray
    q_target: np.ndarray
    q_measured: np.ndarray

    def __post_init__(self):
        if not (len(self.times) == len(self.q_target) == len(self.q_measured)):
            raise ValueError("recording columns must have equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("recording times must be strictly increasing")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "q_target", "q_measured"])
            for t, qt, qm in zip(self.times, self.q_target, self.q_measured):
                w.writerow([f"{t:.6f}", f"{qt:.9f}", f"{qm:.9f}"])

    @classmethod
    def read_csv(cls, path) -> "ReferenceRecording":
        ts, qt, qm = [], [], []
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                ts.append(float(row["t"]))
                qt.append(float(row["q_target"]))
                qm.append(float(row["q_measured"]))
        return cls(np.array(ts), np.array(qt), np.array(qm))


def make_reference_profile(duration: float = 10.0, dt: float = 1e-3) -> ReferenceRecording:
    """Step sequence then a 1 Hz sinusoid; the shape used for gain fitting."""
    n = int(round(duration / dt)) + 1
    t = np.arange(n) * dt
    target = np.zeros(n)
    for t0, v in ((0.5, 0.5), (2.0, 1.0), (3.5, 0.3), (4.5, 0.6)):
        target[t >= t0] = v
    sin_zone = t >= 5.0
    target[sin_zone] = 0.6 + 0.3 * np.sin(2 * math.pi * 1.0 * (t[sin_zone] - 5.0))
    return ReferenceRecording(times=t, q_target=target, q_measured=np.zeros(n))


def simulate_joint(
    params: JointParams,
    targets: np.ndarray,
    dt: float,
    q0: float = 0.0,
    qd0: float = 0.0,
) -> np.ndarray:
    """Measured trajectory of the single-joint PD model."""
    out = np.empty(len(targets))
    _kernel.sim_joint(
        q0, qd0, np.ascontiguousarray(targets, dtype=float),
        params.kp, params.kd, params.armature, params.damping,
        params.torque_cap, 1 if params.self_lock else 0, params.stiction,
        params.limits[0], params.limits[1], dt, out,
    )
    return out


def synthesize_recording(
    kp_true: float,
    kd_true: float,
    seed: int = 0,
    noise_std: float = 1e-3,
    duration: float = 10.0,
    base: JointParams | None = None,
) -> ReferenceRecording:
    """Stand-in for a hardware log: hidden-gain simulation plus noise."""
    params = base or JointParams()
    rec = make_reference_profile(duration)
    sim_params = JointParams(
        kp=kp_true, kd=kd_true, armature=params.armature, damping=params.damping,
        torque_cap=params.torque_cap, self_lock=params.self_lock, limits=params.limits,
    )
    q = simulate_joint(sim_params, rec.q_target, rec.dt)
    rng = np.random.default_rng(seed)
    if noise_std > 0:
        q = q + rng.normal(0.0, noise_std, size=q.shape)
    rec.q_measured = q
    return rec


def trajectory_loss(
    kp: float,
    kd: float,
    recording: ReferenceRecording,
    base: JointParams | None = None,
) -> float:
    """Sum over samples of |simulated - recorded| joint position.

    Gains must be positive; the optimizer's bounds keep candidates away
    from the invalid region, and anything the simulation cannot survive
    maps to +inf.
    """
    if kp <= 0 or kd <= 0:
        raise ValueError("gains must be positive")
    params = base or JointParams()
    trial = JointParams(
        kp=kp, kd=kd, armature=params.armature, damping=params.damping,
        torque_cap=params.torque_cap, self_lock=params.self_lock, limits=params.limits,
    )
    q = simulate_joint(trial, recording.q_target, recording.dt)
    if not np.all(np.isfinite(q)):
        return math.inf
    return float(np.sum(np.abs(q - recording.q_measured)))


def fit_pd_gains(
    recording: ReferenceRecording,
    base: JointParams | None = None,
    budget: int = 200,
    seed: int = 0,
    x0=(5.0, 1.0),
    sigma0: float = 2.0,
    bounds=((0.05, 100.0), (0.005, 20.0)),
    log=None,
) -> tuple[float, float, np.ndarray, CmaEsResult]:
    """CMA-ES fit of (kp, kd) against one recording.

    Returns the best gains, the search distribution's per-parameter stds
    (the randomization widths) and the full optimizer result.
    """
    res = cma_es_minimize(
        lambda x: trajectory_loss(x[0], x[1], recording, base),
        np.asarray(x0, dtype=float),
        sigma0,
        bounds=bounds,
        budget=budget,
        seed=seed,
        log=log,
    )
    return float(res.x_best[0]), float(res.x_best[1]), res.stds, res


# ---------------------------------------------------------------------------
# backlash probing


class BacklashJointSim:
    """One worm-gear joint with its gap link, the rig behind Fig.-4-style
    push experiments.

    Same update rules as the full hand kernel: self-locking gear, gap link
    with stiction play, spring/damper on the relative coordinate, window
    clamp at the gap edges.
    """

    def __init__(
        self,
        params: JointParams | None = None,
        backlash: tuple[float, float] = (-0.02, 0.02),
        gap_stiffness: float = 0.1,
        gap_damping: float = 0.01,
        gap_inertia: float = 2e-4,
        gap_friction: float = 0.003,
        dt: float = 1e-3,
    ):
        self.p = params or JointParams()
        self.lo, self.hi = backlash
        self.k_b = gap_stiffness
        self.c_b = gap_damping
        self.j_b = gap_inertia
        self.fric = gap_friction
        self.dt = dt
        self.q = 0.0
        self.qd = 0.0
        self.theta = 0.0
        self.thd = 0.0

    def _step(self, q_target: float, tau_ext: float) -> None:
        p, dt = self.p, self.dt
        beta0 = self.theta - self.q
        rel0 = self.thd - self.qd
        dq = q_target - self.q
        direction = 1.0 if dq > 1e-12 else (-1.0 if dq < -1e-12 else 0.0)
        q_prev = self.q
        tau = p.kp * dq - p.kd * self.qd
        tau = min(max(tau, -p.torque_cap), p.torque_cap)
        self.qd += dt * (tau - p.damping * self.qd) / p.armature
        self.q += dt * self.qd
        if p.self_lock:
            if direction == 0.0:
                self.q, self.qd = q_prev, 0.0
            else:
                if self.qd * direction < 0.0:
                    self.q, self.qd = q_prev, 0.0
                if (self.q - q_target) * direction > 0.0:
                    self.q, self.qd = q_target, 0.0
        if self.q < p.limits[0]:
            self.q, self.qd = p.limits[0], 0.0
        elif self.q > p.limits[1]:
            self.q, self.qd = p.limits[1], 0.0

        tau_l = tau_ext - self.k_b * beta0 - self.c_b * rel0
        v = self.thd
        if abs(v) < 1e-10:
            if abs(tau_l) <= self.fric:
                v = 0.0
            else:
                v += dt * (tau_l - self.fric * math.copysign(1.0, tau_l)) / self.j_b
        else:
            nv = v + dt * (tau_l - self.fric * math.copysign(1.0, v)) / self.j_b
            v = 0.0 if (nv * v < 0.0 and abs(tau_l) <= self.fric) else nv
        theta = self.theta + dt * v
        if theta < self.q + self.lo:
            theta = self.q + self.lo
            v = max(v, self.qd)
        elif theta > self.q + self.hi:
            theta = self.q + self.hi
            v = min(v, self.qd)
        # structural hard stop: the output link cannot pass the joint limit
        if theta < p.limits[0]:
            theta, v = p.limits[0], max(v, 0.0)
        elif theta > p.limits[1]:
            theta, v = p.limits[1], min(v, 0.0)
        self.theta, self.thd = theta, v

    def settle(self, q_target: float, duration: float = 1.0) -> None:
        for _ in range(int(round(duration / self.dt))):
            self._step(q_target, 0.0)

    def push(self, torque: float, duration: float = 1.0) -> None:
        """External torque on the output link while the command holds."""
        hold = self.q
        for _ in range(int(round(duration / self.dt))):
            self._step(hold, torque)

    def measured(self, rng=None, noise_std: float = 0.0) -> float:
        """Output-side encoder reading (link angle)."""
        if rng is not None and noise_std > 0:
            return self.theta + float(rng.normal(0.0, noise_std))
        return self.theta


def estimate_backlash(
    sim: BacklashJointSim,
    probe_positions,
    push_torque: float = 0.05,
    noise_std: float = 0.0,
    seed: int = 0,
    log=None,
) -> tuple[float, float]:
    """Push experiments at several hold positions; element-wise mean range.

    Each probe is run twice, approaching the hold position from below and
    from above: the link settles against opposite gap edges, so averaging
    the two anchors cancels the approach bias. Probes whose extremes hit a
    joint limit are discarded (logged); raises SaturatedProbe if none
    survive.
    """
    rng = np.random.default_rng(seed)
    ranges = []
    for q_d in probe_positions:
        pair = []
        saturated = False
        for approach in (-0.1, +0.1):
            sim.settle(q_d + approach, duration=0.8)
            sim.settle(q_d, duration=0.8)
            q_a = sim.measured(rng, noise_std)
            sim.push(+push_torque, duration=0.8)
            q_b = sim.measured(rng, noise_std)
            sim.push(-push_torque, duration=0.8)
            q_c = sim.measured(rng, noise_std)
            lim_lo, lim_hi = sim.p.limits
            if q_b >= lim_hi - 1e-9 or q_c <= lim_lo + 1e-9:
                saturated = True
                break
            pair.append((q_c - q_a, q_b - q_a))
        if saturated:
            if log is not None:
                log(f"probe at {q_d:.3f} rad hit a joint limit; discarded")
            continue
        ranges.append(np.mean(pair, axis=0))
    if not ranges:
        raise SaturatedProbe("all probes hit joint limits")
    mean = np.mean(ranges, axis=0)
    return float(mean[0]), float(mean[1])


# ---------------------------------------------------------------------------
# results


@dataclass
class JointCalibration:
    kp_mean: float
    kp_std: float
    kd_mean: float
    kd_std: float
    backlash: tuple[float, float] = (0.0, 0.0)
    residual: float = 0.0

    def __post_init__(self):
        if self.kp_mean <= 0 or self.kd_mean <= 0:
            raise ValueError("gain means must be positive")
        if self.kp_std < 0 or self.kd_std < 0:
            raise ValueError("gain stds must be non-negative")


@dataclass
class CalibrationResult:
    """Per-joint fit results, the source for the randomization spec."""

    joints: dict[str, JointCalibration] = field(default_factory=dict)

    def write_report(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("# joint calibration report\n")
            for name in sorted(self.joints):
                j = self.joints[name]
                fh.write(f"[{name}]\n")
                fh.write(f"kp_mean = {j.kp_mean:.6f}\nkp_std = {j.kp_std:.6f}\n")
                fh.write(f"kd_mean = {j.kd_mean:.6f}\nkd_std = {j.kd_std:.6f}\n")
                fh.write(
                    f"backlash_lo = {j.backlash[0]:.6f}\n"
                    f"backlash_hi = {j.backlash[1]:.6f}\n"
                )
                fh.write(f"residual = {j.residual:.6f}\n\n")


def export_randomization(result: CalibrationResult, base=None):
    """Build the sampling spec the environment consumes.

    Normal distributions from the fitted means/stds, truncated at
    positivity when sampled; joints missing from the result keep the base
    spec's entries.
    """
    from .config import RandomizationSpec

    spec = base if base is not None else RandomizationSpec()
    for name, j in result.joints.items():
        spec.kp[name] = (j.kp_mean, j.kp_std)
        spec.kd[name] = (j.kd_mean, j.kd_std)
        if name in spec.backlash:
            spec.backlash[name] = j.backlash
    return spec
