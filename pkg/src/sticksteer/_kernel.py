"""Hot-loop physics kernel, JIT-compiled when numba is available.

`run_steps` advances the hand+stick system by n inner steps of semi-implicit
Euler and leaves per-taxel contact outputs evaluated at the final state. It
mirrors `hand_dynamics.step_python` operation for operation; the test suite
checks the two paths against each other on randomized states.

All arrays are float64 and C-contiguous. Joint order is
(J0, J1, J3, J4, J6, J7); `th`/`thd` are the absolute angle and rate of the
three worm-gear output links (gear angle + gap offset).
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


@njit(cache=True)
def run_steps(
    n_steps,
    # state (mutated in place)
    q, qd, th, thd,
    spos, squat, svel, somg,
    # command
    q_target, gravity_comp,
    # joint parameters (6,)
    kp, kd, armature, jdamp, stiction, lim_lo, lim_hi,
    torque_cap,
    # worm-gear gap parameters (3,)
    sl_flag, bl_lo, bl_hi, bl_k, bl_c, bl_j, bl_fric,
    # geometry
    base, sgn, l1, l2,
    tax0,                    # (3, 128, 3) R_tip0 @ local per finger
    r_sense,
    # stick
    s_mass, s_radius, s_halflen, mu, i_perp,
    # contact
    kn, cn, kt, vcap_scale,
    g, dt,
    # persistent tangential anchor state (3, 128, 3)
    slip,
    # outputs (3, 128)
    tax_pen, tax_fn, tax_ft,
):
    n_fing = base.shape[0]
    n_tax = tax0.shape[1]
    reach = s_radius + r_sense
    tau_dist = np.zeros(3)
    tau_link = np.zeros(3)
    beta0 = np.zeros(3)
    rel0 = np.zeros(3)

    for it in range(n_steps + 1):
        # ---- contact pass at the current state ----
        for f in range(n_fing):
            tau_dist[f] = 0.0
            tau_link[f] = 0.0
            for i in range(n_tax):
                tax_pen[f, i] = 0.0
                tax_fn[f, i] = 0.0
                tax_ft[f, i] = 0.0
        fsx = 0.0
        fsy = 0.0
        fsz = 0.0
        tsx = 0.0
        tsy = 0.0
        tsz = 0.0

        # stick axis from quaternion (w, x, y, z)
        qw = squat[0]
        qx = squat[1]
        qy = squat[2]
        qz = squat[3]
        ux = 2.0 * (qx * qz + qw * qy)
        uy = 2.0 * (qy * qz - qw * qx)
        uz = 1.0 - 2.0 * (qx * qx + qy * qy)
        e1x = spos[0] + s_halflen * ux
        e1y = spos[1] + s_halflen * uy
        e1z = spos[2] + s_halflen * uz
        dxx = -2.0 * s_halflen * ux
        dxy = -2.0 * s_halflen * uy
        dxz = -2.0 * s_halflen * uz
        seg2 = dxx * dxx + dxy * dxy + dxz * dxz

        # count simultaneous contacts first: the per-step impulse caps on
        # the velocity-proportional terms are a shared budget on the stick
        n_c = 0
        for f in range(n_fing):
            s = sgn[f]
            a12 = s * (th[f] + q[2 * f + 1])
            c12 = np.cos(a12)
            s12 = np.sin(a12)
            tipx = base[f, 0] - l1 * np.sin(s * th[f]) - l2 * s12
            tipy = base[f, 1] + l1 * np.cos(s * th[f]) + l2 * c12
            tipz = base[f, 2]
            for i in range(n_tax):
                wx = tipx + c12 * tax0[f, i, 0] - s12 * tax0[f, i, 1]
                wy = tipy + s12 * tax0[f, i, 0] + c12 * tax0[f, i, 1]
                wz = tipz + tax0[f, i, 2]
                cpar = (wx - e1x) * dxx + (wy - e1y) * dxy + (wz - e1z) * dxz
                sp = cpar / seg2
                if sp < 0.0:
                    sp = 0.0
                elif sp > 1.0:
                    sp = 1.0
                ex = wx - (e1x + sp * dxx)
                ey = wy - (e1y + sp * dxy)
                ez = wz - (e1z + sp * dxz)
                d2 = ex * ex + ey * ey + ez * ez
                if d2 < reach * reach and d2 >= 1e-24:
                    n_c += 1
                elif it < n_steps:
                    # broken contact forgets its friction anchor
                    slip[f, i, 0] = 0.0
                    slip[f, i, 1] = 0.0
                    slip[f, i, 2] = 0.0
        if n_c < 1:
            n_c = 1

        for f in range(n_fing):
            s = sgn[f]
            a1 = s * th[f]
            a12 = s * (th[f] + q[2 * f + 1])
            c1 = np.cos(a1)
            s1 = np.sin(a1)
            c12 = np.cos(a12)
            s12 = np.sin(a12)
            bx = base[f, 0]
            by = base[f, 1]
            bz = base[f, 2]
            odx = bx - l1 * s1
            ody = by + l1 * c1
            odz = bz
            tipx = odx - l2 * s12
            tipy = ody + l2 * c12
            tipz = odz
            w1 = s * thd[f]
            w12 = s * (thd[f] + qd[2 * f + 1])

            for i in range(n_tax):
                t0x = tax0[f, i, 0]
                t0y = tax0[f, i, 1]
                t0z = tax0[f, i, 2]
                wx = tipx + c12 * t0x - s12 * t0y
                wy = tipy + s12 * t0x + c12 * t0y
                wz = tipz + t0z
                # distance to stick axis segment
                cpar = (wx - e1x) * dxx + (wy - e1y) * dxy + (wz - e1z) * dxz
                sp = cpar / seg2
                if sp < 0.0:
                    sp = 0.0
                elif sp > 1.0:
                    sp = 1.0
                px = e1x + sp * dxx
                py = e1y + sp * dxy
                pz = e1z + sp * dxz
                ex = wx - px
                ey = wy - py
                ez = wz - pz
                d2 = ex * ex + ey * ey + ez * ez
                if d2 >= reach * reach or d2 < 1e-24:
                    continue
                dist = np.sqrt(d2)
                pen = reach - dist
                nx = ex / dist
                ny = ey / dist
                nz = ez / dist
                pcx = px + nx * s_radius
                pcy = py + ny * s_radius
                pcz = pz + nz * s_radius
                # stick surface velocity at the contact point
                rx = pcx - spos[0]
                ry = pcy - spos[1]
                rz = pcz - spos[2]
                vsx = svel[0] + somg[1] * rz - somg[2] * ry
                vsy = svel[1] + somg[2] * rx - somg[0] * rz
                vsz = svel[2] + somg[0] * ry - somg[1] * rx
                # fingertip material velocity (planar chains about world z)
                vtx = -w1 * (ody - by) - w12 * (wy - ody)
                vty = w1 * (odx - bx) + w12 * (wx - odx)
                relx = vsx - vtx
                rely = vsy - vty
                relz = vsz
                rate = nx * relx + ny * rely + nz * relz
                # one-step impulse limit for velocity-proportional terms
                r2 = rx * rx + ry * ry + rz * rz
                m_eff = 1.0 / (1.0 / s_mass + r2 / i_perp)
                vcap = vcap_scale * m_eff / n_c
                ceff = cn if cn < vcap else vcap
                fn = kn * pen + ceff * rate
                if fn < 0.0:
                    fn = 0.0
                # tangential relative velocity
                tvx = relx - rate * nx
                tvy = rely - rate * ny
                tvz = relz - rate * nz
                # bristle friction: anchor spring integrates the slip so the
                # grasp holds statically; capped at the Coulomb cone
                sx = slip[f, i, 0]
                sy = slip[f, i, 1]
                sz = slip[f, i, 2]
                if it < n_steps:
                    sx += tvx * dt
                    sy += tvy * dt
                    sz += tvz * dt
                    sdn = sx * nx + sy * ny + sz * nz
                    sx -= sdn * nx
                    sy -= sdn * ny
                    sz -= sdn * nz
                    smag = np.sqrt(sx * sx + sy * sy + sz * sz)
                    cone = mu * fn
                    if kt * smag > cone and smag > 1e-15:
                        scale = cone / (kt * smag)
                        sx *= scale
                        sy *= scale
                        sz *= scale
                    slip[f, i, 0] = sx
                    slip[f, i, 1] = sy
                    slip[f, i, 2] = sz
                ftx = -kt * sx - ceff * tvx
                fty = -kt * sy - ceff * tvy
                ftz = -kt * sz - ceff * tvz
                ftm = np.sqrt(ftx * ftx + fty * fty + ftz * ftz)
                cone = mu * fn
                if ftm > cone:
                    scale = cone / ftm
                    ftx *= scale
                    fty *= scale
                    ftz *= scale
                    ftm = cone
                # on the stick: push away from the taxel plus friction
                fx = -nx * fn + ftx
                fy = -ny * fn + fty
                fz = -nz * fn + ftz
                fsx += fx
                fsy += fy
                fsz += fz
                tsx += ry * fz - rz * fy
                tsy += rz * fx - rx * fz
                tsz += rx * fy - ry * fx
                # reaction on the finger
                gx = -fx
                gy = -fy
                tau_dist[f] += s * ((pcx - odx) * gy - (pcy - ody) * gx)
                tau_link[f] += s * ((pcx - bx) * gy - (pcy - by) * gx)
                tax_pen[f, i] = pen
                tax_fn[f, i] = fn
                tax_ft[f, i] = ftm

        if it == n_steps:
            break

        # pre-update gap coordinates (spring/damper reference)
        for f in range(n_fing):
            beta0[f] = th[f] - q[2 * f]
            rel0[f] = thd[f] - qd[2 * f]

        # ---- integrate the stick ----
        svel[0] += dt * fsx / s_mass
        svel[1] += dt * fsy / s_mass
        az = fsz / s_mass
        if gravity_comp == 0:
            az -= g
        svel[2] += dt * az

        # spin-free axisymmetric body: keep omega/torque normal to the axis
        tdotu = tsx * ux + tsy * uy + tsz * uz
        wx_ = somg[0] + dt * (tsx - tdotu * ux) / i_perp
        wy_ = somg[1] + dt * (tsy - tdotu * uy) / i_perp
        wz_ = somg[2] + dt * (tsz - tdotu * uz) / i_perp
        wdotu = wx_ * ux + wy_ * uy + wz_ * uz
        somg[0] = wx_ - wdotu * ux
        somg[1] = wy_ - wdotu * uy
        somg[2] = wz_ - wdotu * uz

        spos[0] += dt * svel[0]
        spos[1] += dt * svel[1]
        spos[2] += dt * svel[2]

        wmag = np.sqrt(somg[0] ** 2 + somg[1] ** 2 + somg[2] ** 2)
        ang = wmag * dt
        if ang >= 1e-14:
            half = 0.5 * ang
            sw = np.sin(half) / wmag
            dw = np.cos(half)
            dx = somg[0] * sw
            dy = somg[1] * sw
            dz = somg[2] * sw
            nqw = dw * qw - dx * qx - dy * qy - dz * qz
            nqx = dw * qx + dx * qw + dy * qz - dz * qy
            nqy = dw * qy - dx * qz + dy * qw + dz * qx
            nqz = dw * qz + dx * qy - dy * qx + dz * qw
            squat[0] = nqw
            squat[1] = nqx
            squat[2] = nqy
            squat[3] = nqz
        qn = np.sqrt(squat[0] ** 2 + squat[1] ** 2 + squat[2] ** 2 + squat[3] ** 2)
        squat[0] /= qn
        squat[1] /= qn
        squat[2] /= qn
        squat[3] /= qn

        # ---- gear joints ----
        for f in range(n_fing):
            jp = 2 * f
            jd = 2 * f + 1
            # proximal worm joint: contacts cannot back-drive it, but a
            # pinned link reflects its load onto the driving motor (stall)
            qt = q_target[jp]
            dq = qt - q[jp]
            if dq > 1e-12:
                direction = 1.0
            elif dq < -1e-12:
                direction = -1.0
            else:
                direction = 0.0
            q_prev = q[jp]
            tau = kp[jp] * dq - kd[jp] * qd[jp]
            if tau > torque_cap:
                tau = torque_cap
            elif tau < -torque_cap:
                tau = -torque_cap
            if (direction > 0.0 and beta0[f] <= bl_lo[f] + 1e-9) or (
                direction < 0.0 and beta0[f] >= bl_hi[f] - 1e-9
            ):
                tau += tau_link[f]
            qd[jp] += dt * (tau - jdamp[jp] * qd[jp]) / armature[jp]
            q[jp] += dt * qd[jp]
            if sl_flag[f] == 1:
                if direction == 0.0:
                    q[jp] = q_prev
                    qd[jp] = 0.0
                else:
                    if qd[jp] * direction < 0.0:
                        qd[jp] = 0.0
                        q[jp] = q_prev
                    if (q[jp] - qt) * direction > 0.0:
                        q[jp] = qt
                        qd[jp] = 0.0

            # distal joint: contact reaction plus holding gear stiction
            qt = q_target[jd]
            tau = kp[jd] * (qt - q[jd]) - kd[jd] * qd[jd]
            if tau > torque_cap:
                tau = torque_cap
            elif tau < -torque_cap:
                tau = -torque_cap
            tau += tau_dist[f] - jdamp[jd] * qd[jd]
            fricj = stiction[jd]
            v = qd[jd]
            if abs(v) < 1e-10:
                if abs(tau) <= fricj:
                    v = 0.0
                else:
                    sgn_t = 1.0 if tau > 0.0 else -1.0
                    v += dt * (tau - fricj * sgn_t) / armature[jd]
            else:
                sgn_v = 1.0 if v > 0.0 else -1.0
                nv = v + dt * (tau - fricj * sgn_v) / armature[jd]
                if nv * v < 0.0 and abs(tau) <= fricj:
                    v = 0.0
                else:
                    v = nv
            qd[jd] = v
            q[jd] += dt * v

        for j in range(2 * n_fing):
            if q[j] < lim_lo[j]:
                q[j] = lim_lo[j]
                qd[j] = 0.0
            elif q[j] > lim_hi[j]:
                q[j] = lim_hi[j]
                qd[j] = 0.0

        # ---- worm-gear gap links: stiction play + driven motion ----
        for f in range(n_fing):
            jp = 2 * f
            tau = tau_link[f] - bl_k[f] * beta0[f] - bl_c[f] * rel0[f]
            fric = bl_fric[f]
            v = thd[f]
            if abs(v) < 1e-10:
                if abs(tau) <= fric:
                    v = 0.0
                else:
                    sgn_t = 1.0 if tau > 0.0 else -1.0
                    v += dt * (tau - fric * sgn_t) / bl_j[f]
            else:
                sgn_v = 1.0 if v > 0.0 else -1.0
                nv = v + dt * (tau - fric * sgn_v) / bl_j[f]
                if nv * v < 0.0 and abs(tau) <= fric:
                    v = 0.0
                else:
                    v = nv
            theta = th[f] + dt * v
            if theta < q[jp] + bl_lo[f]:
                theta = q[jp] + bl_lo[f]
                if v < qd[jp]:
                    v = qd[jp]
            elif theta > q[jp] + bl_hi[f]:
                theta = q[jp] + bl_hi[f]
                if v > qd[jp]:
                    v = qd[jp]
            th[f] = theta
            thd[f] = v

    # finite check
    total = 0.0
    for j in range(2 * n_fing):
        total += q[j] + qd[j]
    for f in range(n_fing):
        total += th[f] + thd[f]
    for k in range(3):
        total += spos[k] + svel[k] + somg[k]
    for k in range(4):
        total += squat[k]
    if not np.isfinite(total):
        return 1
    return 0


@njit(cache=True)
def sim_joint(
    q0, qd0, targets, kp, kd, armature, damping, cap, self_lock, stiction,
    lo, hi, dt, out
):
    """Single-joint PD response used for gain calibration and the toy task.

    Applies targets[k] for one dt step and records the position after the
    step into out[k]. Same update rule as the full kernel, no contacts.
    Returns the final velocity.
    """
    q = q0
    qd = qd0
    for k in range(targets.shape[0]):
        qt = targets[k]
        dq = qt - q
        if dq > 1e-12:
            direction = 1.0
        elif dq < -1e-12:
            direction = -1.0
        else:
            direction = 0.0
        q_prev = q
        tau = kp * dq - kd * qd
        if tau > cap:
            tau = cap
        elif tau < -cap:
            tau = -cap
        tau -= damping * qd
        if abs(qd) < 1e-10:
            if abs(tau) <= stiction:
                qd = 0.0
            else:
                sgn_t = 1.0 if tau > 0.0 else -1.0
                qd += dt * (tau - stiction * sgn_t) / armature
        else:
            sgn_v = 1.0 if qd > 0.0 else -1.0
            nqd = qd + dt * (tau - stiction * sgn_v) / armature
            if nqd * qd < 0.0 and abs(tau) <= stiction:
                qd = 0.0
            else:
                qd = nqd
        q += dt * qd
        if self_lock == 1:
            if direction == 0.0:
                q = q_prev
                qd = 0.0
            else:
                if qd * direction < 0.0:
                    qd = 0.0
                    q = q_prev
                if (q - qt) * direction > 0.0:
                    q = qt
                    qd = 0.0
        if q < lo:
            q = lo
            qd = 0.0
        elif q > hi:
            q = hi
            qd = 0.0
        out[k] = q
    return qd


@njit(cache=True)
def sim_joint_hold(q, qd, target, n_steps, kp, kd, armature, damping, cap, lo, hi, dt):
    """Hold one PD target for n steps (no self-lock); returns (q, qd)."""
    for _ in range(n_steps):
        tau = kp * (target - q) - kd * qd
        if tau > cap:
            tau = cap
        elif tau < -cap:
            tau = -cap
        qd += dt * (tau - damping * qd) / armature
        q += dt * qd
        if q < lo:
            q = lo
            qd = 0.0
        elif q > hi:
            q = hi
            qd = 0.0
    return q, qd
