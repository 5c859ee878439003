"""Stick-fingertip contact detection, penalty forces and taxel processing.

Each fingertip carries 128 taxels on a curved pad: a 16 x 8 grid wrapped on
a cylindrical patch whose axis runs along the finger, so the pad bulges
toward the stick and cups it vertically. Taxels are modeled as small
spheres; the stick is a capsule segment, so every contact test is a
point-to-segment distance.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .hand_dynamics import (
    HandModel,
    N_FINGERS,
    SimState,
    StickModel,
    forward_kinematics,
    taxel_point_velocity,
)

N_TAXELS = 128
GRID_LONG = 16   # sites along the finger direction
GRID_ARC = 8     # sites around the patch arc


class EmptyWindow(ValueError):
    """Offset calibration was asked to average over zero frames."""


@dataclass
class TaxelLayout:
    """Fingertip-local taxel sites on the curved pad surface.

    The tip frame has x along the finger, z the outward pad normal at the
    patch center and y completing the right-handed triad (vertical when the
    finger is horizontal).
    """

    positions: np.ndarray          # (128, 3) local, m
    normals: np.ndarray            # (128, 3) unit outward
    sensing_radius: float = 0.0015
    patch_radius: float = 0.012
    patch_length: float = 0.03
    arc_span: float = np.deg2rad(120.0)

    def __post_init__(self):
        if self.positions.shape[0] != N_TAXELS:
            raise ValueError(f"expected {N_TAXELS} taxels, got {self.positions.shape[0]}")
        norms = np.linalg.norm(self.normals, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ValueError("taxel normals must be unit length")

    @property
    def pitch(self) -> float:
        """Site spacing along the finger direction."""
        return self.patch_length / GRID_LONG

    def packed(self) -> np.ndarray:
        """(128, 6) positions and normals, for the kinematics helpers."""
        cached = getattr(self, "_packed", None)
        if cached is None:
            cached = np.hstack([self.positions, self.normals])
            object.__setattr__(self, "_packed", cached)
        return cached

    @classmethod
    def grid(
        cls,
        patch_radius: float = 0.012,
        patch_length: float = 0.03,
        arc_span_deg: float = 120.0,
        sensing_radius: float = 0.0015,
    ) -> "TaxelLayout":
        """Wrap a 16 x 8 grid on the cylindrical pad surface.

        Surface point at (u, a): (u, R sin a, R (cos a - 1)); the crest line
        a = 0 passes through the tip-frame origin with normal +z.
        """
        span = np.deg2rad(arc_span_deg)
        us = (np.arange(GRID_LONG) + 0.5) / GRID_LONG * patch_length - patch_length / 2
        angs = (np.arange(GRID_ARC) + 0.5) / GRID_ARC * span - span / 2
        pos = np.zeros((N_TAXELS, 3))
        nrm = np.zeros((N_TAXELS, 3))
        k = 0
        for u in us:
            for a in angs:
                pos[k] = (u, patch_radius * np.sin(a), patch_radius * (np.cos(a) - 1.0))
                nrm[k] = (0.0, np.sin(a), np.cos(a))
                k += 1
        return cls(
            positions=pos,
            normals=nrm,
            sensing_radius=sensing_radius,
            patch_radius=patch_radius,
            patch_length=patch_length,
            arc_span=span,
        )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["taxel_id", "finger_id", "x", "y", "z"])
            for f in range(N_FINGERS):
                for i in range(N_TAXELS):
                    w.writerow(
                        [i, f + 1]
                        + [f"{v:.9f}" for v in self.positions[i]]
                    )

    @classmethod
    def read_csv(cls, path, **kwargs) -> "TaxelLayout":
        pos = np.zeros((N_TAXELS, 3))
        seen = np.zeros(N_TAXELS, dtype=bool)
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                if int(row["finger_id"]) != 1:
                    continue
                i = int(row["taxel_id"])
                pos[i] = (float(row["x"]), float(row["y"]), float(row["z"]))
                seen[i] = True
        if not seen.all():
            raise ValueError("layout csv is missing taxels")
        ref = cls.grid(**kwargs)
        if not np.allclose(ref.positions, pos, atol=1e-8):
            # positions differ from the parametric defaults: rebuild normals
            # by projecting back onto the nominal patch cylinder
            ang = np.arctan2(pos[:, 1], pos[:, 2] + ref.patch_radius)
            nrm = np.column_stack([np.zeros(N_TAXELS), np.sin(ang), np.cos(ang)])
            return cls(positions=pos, normals=nrm, sensing_radius=ref.sensing_radius)
        return ref


@dataclass
class Contact:
    """One taxel-stick contact with its resolved forces."""

    finger: int
    taxel_id: int
    point: np.ndarray            # world, on the stick surface
    normal: np.ndarray           # world unit, from stick axis toward taxel
    penetration: float
    normal_force: float = 0.0
    tangential: np.ndarray = field(default_factory=lambda: np.zeros(2))
    tangent_basis: np.ndarray = field(default_factory=lambda: np.zeros((2, 3)))

    def force_on_stick(self) -> np.ndarray:
        return -self.normal * self.normal_force + self.tangent_basis.T @ self.tangential

    def force_on_finger(self) -> np.ndarray:
        return -self.force_on_stick()


class ContactSet(list):
    """List of contacts plus a few aggregate views."""

    def total_normal_force(self) -> float:
        return float(sum(c.normal_force for c in self))

    def active_taxels(self, finger: int) -> list[int]:
        return [c.taxel_id for c in self if c.finger == finger]

    def normal_force_grid(self) -> np.ndarray:
        out = np.zeros((N_FINGERS, N_TAXELS))
        for c in self:
            out[c.finger, c.taxel_id] = c.normal_force
        return out


def _tangent_basis(normal: np.ndarray) -> np.ndarray:
    """Deterministic orthonormal basis of the plane normal to `normal`."""
    a = np.array([1.0, 0.0, 0.0])
    if abs(normal[0]) > 0.9:
        a = np.array([0.0, 1.0, 0.0])
    t1 = np.cross(normal, a)
    t1 /= np.linalg.norm(t1)
    t2 = np.cross(normal, t1)
    return np.vstack([t1, t2])


def detect_contacts(
    layout: TaxelLayout,
    taxel_world: np.ndarray,
    stick_pose: tuple[np.ndarray, np.ndarray],
    stick: StickModel,
) -> ContactSet:
    """Geometric taxel-stick contacts (no forces yet).

    `taxel_world` is (3, 128, 3); `stick_pose` is (center, unit quaternion).
    A taxel touches when its center is closer to the stick axis segment than
    the stick radius plus the taxel sensing radius.
    """
    center, quat = stick_pose
    u = geo.quat_rotate(quat, np.array([0.0, 0.0, 1.0]))
    half = 0.5 * stick.length * u
    e1, e2 = center + half, center - half
    reach = stick.radius + layout.sensing_radius
    out = ContactSet()
    d = e2 - e1
    dd = float(d @ d)
    for f in range(N_FINGERS):
        pts = taxel_world[f]
        if dd < 1e-18:
            s = np.zeros(len(pts))
        else:
            s = np.clip((pts - e1) @ d / dd, 0.0, 1.0)
        closest = e1 + s[:, None] * d
        delta = pts - closest
        dist = np.linalg.norm(delta, axis=1)
        for i in np.flatnonzero(dist < reach):
            di = dist[i]
            if di < 1e-12:
                continue
            n = delta[i] / di
            out.append(
                Contact(
                    finger=f,
                    taxel_id=int(i),
                    point=closest[i] + n * stick.radius,
                    normal=n,
                    penetration=float(reach - di),
                )
            )
    return out


def penalty_force(
    contact: Contact,
    stiffness: float,
    damping: float,
    mu: float,
    relative_velocity: np.ndarray,
    slip_velocity: float = 0.005,
    viscous_cap: float | None = None,
) -> tuple[float, np.ndarray]:
    """Resolve one contact into a normal force and a friction 2-vector.

    `relative_velocity` is stick-surface minus fingertip velocity at the
    contact point, world frame. Normal force is a spring on penetration
    plus damping on approach only; friction is viscous up to the Coulomb
    cone cap mu * normal and opposes the stick's relative sliding.

    `viscous_cap` bounds the damping and friction coefficients so a fixed
    step cannot over-apply the velocity-proportional forces (the stepper
    passes the per-contact impulse limit); it only ever reduces forces, so
    the cone bound still holds. Fills and returns (normal_force,
    tangential) and stores both on the contact.
    """
    rate = float(contact.normal @ relative_velocity)
    c_n = damping if viscous_cap is None else min(damping, viscous_cap)
    # Kelvin-Voigt pad: damping acts while penetrating in both directions,
    # the floor at zero keeps the contact adhesion-free
    fn = stiffness * contact.penetration + c_n * rate
    fn = max(fn, 0.0)
    basis = _tangent_basis(contact.normal)
    vt = basis @ relative_velocity
    vt_mag = float(np.linalg.norm(vt))
    if vt_mag < 1e-12 or fn == 0.0:
        ft = np.zeros(2)
    else:
        mag = mu * fn * min(vt_mag / slip_velocity, 1.0)
        if viscous_cap is not None:
            mag = min(mag, viscous_cap * vt_mag)
        ft = -mag * vt / vt_mag
    contact.normal_force = float(fn)
    contact.tangential = ft
    contact.tangent_basis = basis
    return float(fn), ft


def resolve_contact_forces(
    model: HandModel,
    stick: StickModel,
    state: SimState,
    contacts: ContactSet,
    taxel_world: np.ndarray,
    fk=None,
    slip_state: np.ndarray | None = None,
    dt: float | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Forces/torques from an already-detected contact set.

    Returns (stick force, stick torque, distal joint reactions (3,),
    backlash link torques (3,)). The worm-gear proximal joints never feel
    contact on their actuated coordinate (self-lock), only their gap link.

    `slip_state` is the (3, 128, 3) friction anchor memory, advanced by
    `dt` per call; without it friction falls back to the stateless
    regularized law of `penalty_force`, which cannot hold a grasp
    statically (it creeps at the viscous impulse limit).
    """
    par = model.contact
    f_stick = np.zeros(3)
    tau_stick = np.zeros(3)
    tau_dist = np.zeros(3)
    tau_link = np.zeros(3)
    if fk is None:
        fk = forward_kinematics(model, state)
    i_perp = stick.inertia_diag[0]
    n_c = max(len(contacts), 1)
    if slip_state is not None:
        live = np.zeros((N_FINGERS, N_TAXELS), dtype=bool)
        for c in contacts:
            live[c.finger, c.taxel_id] = True
        slip_state[~live] = 0.0
    for c in contacts:
        r = c.point - state.stick_pos
        v_stick = state.stick_vel + np.cross(state.stick_omega, r)
        v_tax = taxel_point_velocity(
            model, state, c.finger, taxel_world[c.finger, c.taxel_id]
        )
        v_rel = v_stick - v_tax
        # one-step impulse limit for the velocity-proportional terms,
        # shared across all simultaneous contacts on the stick
        m_eff = 1.0 / (1.0 / stick.mass + float(r @ r) / i_perp)
        vcap = par.impulse_safety * m_eff / (par.dt_reference * n_c)
        if slip_state is None:
            penalty_force(
                c,
                par.stiffness,
                par.damping,
                stick.friction_mu,
                v_rel,
                par.slip_velocity,
                viscous_cap=vcap,
            )
        else:
            n = c.normal
            rate = float(n @ v_rel)
            fn = max(par.stiffness * c.penetration + min(par.damping, vcap) * rate, 0.0)
            vt = v_rel - rate * n
            s_vec = slip_state[c.finger, c.taxel_id]
            s_vec += vt * dt
            s_vec -= (s_vec @ n) * n
            cone = stick.friction_mu * fn
            s_mag = float(np.linalg.norm(s_vec))
            if par.tangent_stiffness * s_mag > cone and s_mag > 1e-15:
                s_vec *= cone / (par.tangent_stiffness * s_mag)
            ft_w = -par.tangent_stiffness * s_vec - min(par.damping, vcap) * vt
            ft_mag = float(np.linalg.norm(ft_w))
            if ft_mag > cone:
                ft_w *= cone / ft_mag
            basis = _tangent_basis(n)
            c.normal_force = float(fn)
            c.tangential = basis @ ft_w
            c.tangent_basis = basis
        fs = c.force_on_stick()
        f_stick += fs
        tau_stick += np.cross(c.point - state.stick_pos, fs)
        ff = -fs
        fr = fk.fingers[c.finger]
        s = model.axis_signs[c.finger]
        rd = c.point - fr.distal_origin
        rp = c.point - fr.base
        tau_dist[c.finger] += s * (rd[0] * ff[1] - rd[1] * ff[0])
        tau_link[c.finger] += s * (rp[0] * ff[1] - rp[1] * ff[0])
    return f_stick, tau_stick, tau_dist, tau_link


def make_contact_eval(
    model: HandModel, stick: StickModel, layout: TaxelLayout, dt: float = 1e-3
):
    """contact_eval closure for the reference stepper.

    Stateful: owns the friction anchor memory, advanced once per call.
    """
    packed = layout.packed()
    slip = np.zeros((N_FINGERS, N_TAXELS, 3))

    def contact_eval(state: SimState):
        fk = forward_kinematics(model, state, packed)
        contacts = detect_contacts(
            layout, fk.taxel_world, (state.stick_pos, state.stick_quat), stick
        )
        return resolve_contact_forces(
            model, stick, state, contacts, fk.taxel_world, fk,
            slip_state=slip, dt=dt,
        )

    return contact_eval


# ---------------------------------------------------------------------------
# taxel signal synthesis and processing


def crosstalk_kernel(layout: TaxelLayout, sigma: float | None = None) -> np.ndarray:
    """Gaussian spatial spread of normal force across the pad.

    Models the ~1 mm compliant silicone skin: taxels around a contact see a
    fraction of its load. Unit diagonal; sigma defaults to one taxel pitch.
    """
    if sigma is None:
        sigma = layout.pitch
    d2 = np.sum(
        (layout.positions[:, None, :] - layout.positions[None, :, :]) ** 2, axis=2
    )
    k = np.exp(-d2 / (2.0 * sigma**2))
    k[d2 > (4.0 * sigma) ** 2] = 0.0
    return k


def synthesize_raw(
    contacts: ContactSet,
    gain: float,
    layout: TaxelLayout,
    rng: np.random.Generator | None = None,
    noise_std: float = 0.0,
    drift: np.ndarray | None = None,
    kernel: np.ndarray | None = None,
) -> np.ndarray:
    """Raw sensor readings (3, 128) from resolved contact forces.

    raw = gain * (crosstalk kernel @ normal forces) + drift + noise,
    floored at zero.
    """
    if gain <= 0:
        raise ValueError("gain must be positive")
    if kernel is None:
        kernel = crosstalk_kernel(layout)
    forces = contacts.normal_force_grid()
    raw = gain * forces @ kernel.T
    if drift is not None:
        raw = raw + drift
    if noise_std > 0.0:
        if rng is None:
            raise ValueError("noise requires an rng")
        raw = raw + rng.normal(0.0, noise_std, size=raw.shape)
    return np.maximum(raw, 0.0)


@dataclass
class TactileFrame:
    """One tactile sample per fingertip with its processing products."""

    raw: np.ndarray                       # (3, 128) sensor units, >= 0
    offsets: np.ndarray                   # (3, 128) rest-level s-bar'
    threshold: float
    calibrated: np.ndarray | None = None  # max(raw - offsets, 0)
    active_mask: np.ndarray | None = None

    @classmethod
    def blank(cls, threshold: float) -> "TactileFrame":
        z = np.zeros((N_FINGERS, N_TAXELS))
        return cls(raw=z.copy(), offsets=z.copy(), threshold=threshold)


def calibrate_offsets(no_contact_frames) -> np.ndarray:
    """Per-taxel mean over rest frames; these become the s-bar' offsets."""
    frames = [np.asarray(f, dtype=float) for f in no_contact_frames]
    if not frames:
        raise EmptyWindow("offset calibration needs at least one rest frame")
    return np.mean(frames, axis=0)


def binarize(frame: TactileFrame) -> np.ndarray:
    """Subtract offsets (flooring negatives at zero) and threshold.

    Idempotent; stores and returns the activation mask.
    """
    frame.calibrated = np.maximum(frame.raw - frame.offsets, 0.0)
    frame.active_mask = frame.calibrated > frame.threshold
    return frame.active_mask


def contact_center(
    frame: TactileFrame, layout: TaxelLayout, finger: int, scale: float = 1.0
) -> np.ndarray | None:
    """Mean local position of the finger's active taxels, or None.

    `scale` is the constant observation normalization factor.
    """
    if frame.active_mask is None:
        raise ValueError("binarize the frame before asking for contact centers")
    idx = np.flatnonzero(frame.active_mask[finger])
    if idx.size == 0:
        return None
    return scale * layout.positions[idx].mean(axis=0)


def frame_from_contacts(
    contacts: ContactSet,
    threshold: float,
    gain: float = 10.0,
) -> TactileFrame:
    """Binary-sensor frame as the simulator reports it.

    In simulation each taxel directly reports whether it touches the stick;
    raw values are kept proportional to normal force for logging, offsets
    are zero, and the mask comes straight from the geometric contacts.
    """
    frame = TactileFrame.blank(threshold)
    frame.raw = gain * contacts.normal_force_grid()
    frame.calibrated = frame.raw.copy()
    mask = np.zeros((N_FINGERS, N_TAXELS), dtype=bool)
    for c in contacts:
        mask[c.finger, c.taxel_id] = True
    frame.active_mask = mask
    return frame


def dump_frames_csv(path, times, frames: list[TactileFrame]) -> None:
    """Per-taxel dump (t, finger, taxel, raw, calibrated, active)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "finger", "taxel", "raw", "calibrated", "active"])
        for t, fr in zip(times, frames):
            cal = fr.calibrated if fr.calibrated is not None else np.zeros_like(fr.raw)
            act = fr.active_mask if fr.active_mask is not None else np.zeros_like(fr.raw, bool)
            for f in range(N_FINGERS):
                for i in range(N_TAXELS):
                    w.writerow(
                        [f"{t:.4f}", f + 1, i, f"{fr.raw[f, i]:.6f}",
                         f"{cal[f, i]:.6f}", int(act[f, i])]
                    )
