import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sticksteer import hand_dynamics as hd
from sticksteer import contact_tactile as ct


@pytest.fixture(scope="module")
def model():
    return hd.default_hand_model()


@pytest.fixture(scope="module")
def layout():
    return ct.TaxelLayout.grid()


@pytest.fixture(scope="module")
def stick():
    return hd.StickModel()


# ---------------------------------------------------------------------------
# layout


def test_layout_counts_and_normals(layout):
    assert layout.positions.shape == (128, 3)
    assert np.allclose(np.linalg.norm(layout.normals, axis=1), 1.0)
    # all sites within the pad bounding capsule
    assert np.abs(layout.positions[:, 0]).max() <= layout.patch_length / 2
    assert layout.positions[:, 2].max() <= 1e-12


def test_layout_csv_roundtrip(tmp_path, layout):
    p = tmp_path / "layout.csv"
    layout.write_csv(p)
    again = ct.TaxelLayout.read_csv(p)
    assert np.allclose(again.positions, layout.positions, atol=1e-8)
    assert np.allclose(again.normals, layout.normals, atol=1e-6)


# ---------------------------------------------------------------------------
# detection


def brute_force_contacts(layout, taxel_world, stick_pose, stick):
    """Naive all-pairs point-to-segment oracle, independent implementation."""
    center, quat = stick_pose
    from sticksteer import geometry as geo

    u = geo.quat_to_matrix(quat) @ np.array([0.0, 0.0, 1.0])
    e1 = center + 0.5 * stick.length * u
    e2 = center - 0.5 * stick.length * u
    hits = []
    for f in range(3):
        for i in range(128):
            p = taxel_world[f, i]
            best = None
            for s in np.linspace(0.0, 1.0, 2001):
                c = e1 + s * (e2 - e1)
                d = np.linalg.norm(p - c)
                if best is None or d < best:
                    best = d
            if best < stick.radius + layout.sensing_radius:
                hits.append((f, i, best))
    return hits


def analytic_segment_distance(p, a, b):
    d = b - a
    s = np.clip((p - a) @ d / (d @ d), 0.0, 1.0)
    return np.linalg.norm(p - (a + s * d))


def test_detection_matches_naive_oracle(model, layout, stick):
    """Random configurations vs an independent all-pairs distance check."""
    rng = np.random.default_rng(5)
    from sticksteer import geometry as geo

    for _ in range(1000):
        st_ = hd.make_initial_state(
            q=rng.uniform(0.0, 0.6, 6),
            stick_pos=np.array([0, 0.079, -0.10]) + rng.uniform(-0.02, 0.02, 3),
            stick_quat=np.array([1.0, *rng.uniform(-0.15, 0.15, 3)]),
        )
        fk = hd.forward_kinematics(model, st_, layout.packed())
        got = ct.detect_contacts(
            layout, fk.taxel_world, (st_.stick_pos, st_.stick_quat), stick
        )
        got_ids = {(c.finger, c.taxel_id) for c in got}
        u = geo.quat_to_matrix(st_.stick_quat) @ np.array([0, 0, 1.0])
        e1 = st_.stick_pos + 0.5 * stick.length * u
        e2 = st_.stick_pos - 0.5 * stick.length * u
        reach = stick.radius + layout.sensing_radius
        expect_ids = set()
        for f in range(3):
            for i in range(128):
                d = analytic_segment_distance(fk.taxel_world[f, i], e1, e2)
                if d < reach and d > 1e-12:
                    expect_ids.add((f, i))
        assert got_ids == expect_ids
        for c in got:
            d = analytic_segment_distance(fk.taxel_world[c.finger, c.taxel_id], e1, e2)
            assert c.penetration == pytest.approx(reach - d, abs=1e-12)


def test_detection_dense_sampled_oracle(model, layout, stick):
    """Spot-check against the slow linspace-sampled segment oracle."""
    rng = np.random.default_rng(8)
    st_ = hd.make_initial_state(q=np.full(6, 0.30))
    fk = hd.forward_kinematics(model, st_, layout.packed())
    got = ct.detect_contacts(layout, fk.taxel_world, (st_.stick_pos, st_.stick_quat), stick)
    naive = brute_force_contacts(
        layout, fk.taxel_world, (st_.stick_pos, st_.stick_quat), stick
    )
    assert {(c.finger, c.taxel_id) for c in got} == {(f, i) for f, i, _ in naive}
    for f, i, d in naive:
        c = next(c for c in got if (c.finger, c.taxel_id) == (f, i))
        assert c.penetration == pytest.approx(
            stick.radius + layout.sensing_radius - d, abs=5e-6
        )


def test_detection_empty_when_far(layout, stick):
    tax = np.full((3, 128, 3), 10.0)
    out = ct.detect_contacts(
        layout, tax, (np.zeros(3), np.array([1.0, 0, 0, 0])), stick
    )
    assert len(out) == 0


def test_detection_mirror_symmetry(layout, stick):
    """Stick axis on the pad midplane: u and -u taxel columns touch alike."""
    # synthetic world placement: one fingertip pad at identity orientation,
    # stick axis vertical through the patch center line
    tax = np.zeros((3, 128, 3))
    tax[0] = layout.positions
    tax[1] = layout.positions + 5.0  # park other fingers far away
    tax[2] = layout.positions - 5.0
    pose = (np.array([0.0, 0.0, stick.radius + 0.0005]), np.array([1.0, 0, 0, 0]))
    # rotate the axis to lie along x (the patch length direction)
    from sticksteer import geometry as geo

    quat = geo.quat_from_axis_angle(np.array([0, 1.0, 0]), np.pi / 2)
    out = ct.detect_contacts(layout, tax, (pose[0], quat), stick)
    pen = {}
    for c in out:
        if c.finger == 0:
            pen[c.taxel_id] = c.penetration
    assert pen
    for i, p in pen.items():
        u_row, arc_row = divmod(i, 8)
        mirror = (15 - u_row) * 8 + arc_row
        assert mirror in pen
        assert pen[mirror] == pytest.approx(p, abs=1e-12)


def test_normal_points_from_axis_to_taxel(model, layout, stick):
    from sticksteer import geometry as geo

    st_ = hd.make_initial_state(q=np.full(6, 0.30))
    fk = hd.forward_kinematics(model, st_, layout.packed())
    out = ct.detect_contacts(layout, fk.taxel_world, (st_.stick_pos, st_.stick_quat), stick)
    assert out
    u = geo.quat_to_matrix(st_.stick_quat) @ np.array([0, 0, 1.0])
    e1 = st_.stick_pos + 0.5 * stick.length * u
    e2 = st_.stick_pos - 0.5 * stick.length * u
    for c in out:
        p = fk.taxel_world[c.finger, c.taxel_id]
        d = e2 - e1
        s_par = np.clip((p - e1) @ d / (d @ d), 0.0, 1.0)
        on_axis = e1 + s_par * d
        assert c.normal @ (p - on_axis) > 0


# ---------------------------------------------------------------------------
# penalty force


def mk_contact(pen=0.001):
    return ct.Contact(
        finger=0,
        taxel_id=0,
        point=np.zeros(3),
        normal=np.array([0.0, 0.0, 1.0]),
        penetration=pen,
    )


def test_penalty_hooke():
    fn, ft = ct.penalty_force(mk_contact(0.001), 5000.0, 50.0, 0.5, np.zeros(3))
    assert fn == pytest.approx(5.0, abs=1e-12)
    assert np.allclose(ft, 0.0)


def test_penalty_zero_penetration():
    fn, ft = ct.penalty_force(mk_contact(0.0), 5000.0, 50.0, 0.5, np.zeros(3))
    assert fn == 0.0
    assert np.allclose(ft, 0.0)


def test_penalty_cone_cap_exact():
    c = mk_contact(0.001)
    fn, ft = ct.penalty_force(c, 5000.0, 0.0, 0.5, np.array([10.0, 0.0, 0.0]))
    assert np.linalg.norm(ft) == pytest.approx(0.5 * fn, rel=1e-12)


def test_penalty_damping_approach_only_sign():
    # separating: damping may only reduce the force, never below zero
    c = mk_contact(0.0001)
    fn, _ = ct.penalty_force(c, 5000.0, 50.0, 0.5, np.array([0.0, 0.0, -10.0]))
    assert fn == 0.0


def test_penalty_viscous_cap_shrinks_friction():
    c = mk_contact(0.001)
    fn, ft = ct.penalty_force(
        c, 5000.0, 0.0, 0.5, np.array([1e-3, 0.0, 0.0]), viscous_cap=0.1
    )
    assert np.linalg.norm(ft) == pytest.approx(0.1 * 1e-3, rel=1e-9)


# ---------------------------------------------------------------------------
# raw synthesis


def one_contact_set(force, finger=0, taxel=40):
    cs = ct.ContactSet()
    c = mk_contact(0.001)
    c.finger, c.taxel_id = finger, taxel
    c.normal_force = force
    cs.append(c)
    return cs


def test_synthesize_proportionality(layout):
    raw = ct.synthesize_raw(one_contact_set(2.0), 10.0, layout, kernel=np.eye(128))
    assert raw[0, 40] == pytest.approx(20.0)
    raw[0, 40] = 0.0
    assert np.all(raw == 0.0)


def test_synthesize_drift_passthrough(layout):
    drift = np.zeros((3, 128))
    drift[2, 7] = 3.0
    raw = ct.synthesize_raw(ct.ContactSet(), 10.0, layout, drift=drift, kernel=np.eye(128))
    assert raw[2, 7] == pytest.approx(3.0)
    assert raw.sum() == pytest.approx(3.0)


def test_synthesize_crosstalk_hand_kernel(layout):
    k = np.eye(128)
    k[41, 40] = 0.5  # neighbor picks up half of taxel 40's reading
    raw = ct.synthesize_raw(one_contact_set(2.0), 10.0, layout, kernel=k)
    assert raw[0, 40] == pytest.approx(20.0)
    assert raw[0, 41] == pytest.approx(10.0)


def test_crosstalk_kernel_gaussian_values(layout):
    k = ct.crosstalk_kernel(layout)
    assert np.allclose(np.diag(k), 1.0)
    # hand-evaluate the documented kernel for one taxel pair
    i, j = 40, 41
    d2 = np.sum((layout.positions[i] - layout.positions[j]) ** 2)
    assert k[i, j] == pytest.approx(np.exp(-d2 / (2 * layout.pitch**2)), rel=1e-12)
    assert np.array_equal(k, k.T)


def test_synthesize_rejects_bad_gain(layout):
    with pytest.raises(ValueError):
        ct.synthesize_raw(ct.ContactSet(), 0.0, layout)


# ---------------------------------------------------------------------------
# offset calibration and binarization


def test_calibrate_offsets_mean():
    frames = [np.full((3, 128), 2.0), np.full((3, 128), 4.0)]
    assert np.allclose(ct.calibrate_offsets(frames), 3.0)


def test_calibrate_offsets_single_frame():
    f = np.random.default_rng(0).uniform(0, 1, (3, 128))
    assert np.array_equal(ct.calibrate_offsets([f]), f)


def test_calibrate_offsets_zero_frames_raises():
    with pytest.raises(ct.EmptyWindow):
        ct.calibrate_offsets([])


def test_calibrate_offsets_all_zero():
    assert np.all(ct.calibrate_offsets([np.zeros((3, 128))] * 4) == 0.0)


def test_binarize_basic():
    fr = ct.TactileFrame.blank(threshold=1.0)
    fr.raw[0, 0] = 5.0
    fr.offsets[0, 0] = 2.0
    mask = ct.binarize(fr)
    assert fr.calibrated[0, 0] == pytest.approx(3.0)
    assert mask[0, 0]


def test_binarize_negative_floored():
    fr = ct.TactileFrame.blank(threshold=1.0)
    fr.raw[1, 5] = 1.0
    fr.offsets[1, 5] = 2.0
    mask = ct.binarize(fr)
    assert fr.calibrated[1, 5] == 0.0
    assert not mask[1, 5]


def test_binarize_boundary_strict():
    fr = ct.TactileFrame.blank(threshold=1.0)
    fr.raw[0, 3] = 3.0
    fr.offsets[0, 3] = 2.0  # calibrated lands exactly on the threshold
    mask = ct.binarize(fr)
    assert not mask[0, 3]


def test_binarize_idempotent():
    rng = np.random.default_rng(2)
    fr = ct.TactileFrame.blank(threshold=0.5)
    fr.raw = rng.uniform(0, 2, (3, 128))
    fr.offsets = rng.uniform(0, 1, (3, 128))
    m1 = ct.binarize(fr).copy()
    m2 = ct.binarize(fr)
    assert np.array_equal(m1, m2)


@settings(max_examples=200, deadline=None)
@given(
    raw=arrays(np.float64, (3, 8), elements=st.floats(0, 100)),
    off=arrays(np.float64, (3, 8), elements=st.floats(0, 100)),
)
def test_calibration_rule_property(raw, off):
    full_raw = np.zeros((3, 128))
    full_off = np.zeros((3, 128))
    full_raw[:, :8] = raw
    full_off[:, :8] = off
    fr = ct.TactileFrame(raw=full_raw, offsets=full_off, threshold=0.1)
    ct.binarize(fr)
    assert np.array_equal(fr.calibrated, np.maximum(full_raw - full_off, 0.0))
    assert np.all(fr.calibrated >= 0.0)


def test_drift_filtered_after_calibration():
    """Rest frames with drift calibrate to an all-inactive mask."""
    rng = np.random.default_rng(4)
    drift = rng.uniform(0, 5, (3, 128))
    rest_frames = [drift.copy() for _ in range(10)]
    offsets = ct.calibrate_offsets(rest_frames)
    fr = ct.TactileFrame(raw=drift.copy(), offsets=offsets, threshold=0.15)
    mask = ct.binarize(fr)
    assert not mask.any()


# ---------------------------------------------------------------------------
# contact centers


def frame_with_active(ids, threshold=0.1):
    fr = ct.TactileFrame.blank(threshold)
    for f, i in ids:
        fr.raw[f, i] = 1.0
    ct.binarize(fr)
    return fr


def test_contact_center_two_point_mean(layout):
    fr = frame_with_active([(0, 0), (0, 8)])
    got = ct.contact_center(fr, layout, 0)
    expect = 0.5 * (layout.positions[0] + layout.positions[8])
    assert np.allclose(got, expect, atol=1e-15)


def test_contact_center_single_taxel(layout):
    fr = frame_with_active([(1, 77)])
    assert np.allclose(ct.contact_center(fr, layout, 1), layout.positions[77])


def test_contact_center_absent(layout):
    fr = frame_with_active([(0, 1)])
    assert ct.contact_center(fr, layout, 2) is None


def test_contact_center_matches_naive_mean(layout):
    rng = np.random.default_rng(9)
    for _ in range(1000):
        ids = rng.choice(128, size=rng.integers(1, 6), replace=False)
        fr = frame_with_active([(0, int(i)) for i in ids])
        got = ct.contact_center(fr, layout, 0)
        acc = np.zeros(3)
        for i in ids:
            acc += layout.positions[int(i)]
        assert np.allclose(got, acc / len(ids), atol=1e-12)


def test_contact_center_scale_factor(layout):
    fr = frame_with_active([(0, 0)])
    got = ct.contact_center(fr, layout, 0, scale=1 / 0.03)
    assert np.allclose(got, layout.positions[0] / 0.03)


def test_contact_center_in_bounding_box(layout):
    rng = np.random.default_rng(10)
    for _ in range(200):
        ids = [int(i) for i in rng.choice(128, size=rng.integers(1, 12), replace=False)]
        fr = frame_with_active([(0, i) for i in ids])
        got = ct.contact_center(fr, layout, 0)
        pts = layout.positions[ids]
        assert np.all(got >= pts.min(axis=0) - 1e-12)
        assert np.all(got <= pts.max(axis=0) + 1e-12)


def test_contact_center_requires_binarize(layout):
    fr = ct.TactileFrame.blank(0.1)
    with pytest.raises(ValueError):
        ct.contact_center(fr, layout, 0)


# ---------------------------------------------------------------------------
# resolved grasp forces


def test_cone_feasibility_on_grasp(model, layout, stick):
    """Friction never exceeds the Coulomb cone across a live grasp."""
    rng = np.random.default_rng(12)
    sim = hd.Simulator(model, stick, layout)
    st_ = hd.make_initial_state(q=np.full(6, 0.30))
    for f in range(3):
        st_.backlash[f].offset = -0.02
    sim.load_state(st_)
    sim.step(st_.q, 1e-3, 100, gravity_comp=True)
    mu = stick.friction_mu
    for _ in range(100):
        qt = st_.q + rng.uniform(-0.01, 0.01, 6)
        sim.step(qt, 1e-3, 20)
        live = sim.tax_fn > 0
        assert np.all(sim.tax_ft[live] <= mu * sim.tax_fn[live] + 1e-9)


def test_frame_from_contacts_mask(model, layout, stick):
    st_ = hd.make_initial_state(q=np.full(6, 0.30))
    fk = hd.forward_kinematics(model, st_, layout.packed())
    contacts = ct.detect_contacts(
        layout, fk.taxel_world, (st_.stick_pos, st_.stick_quat), stick
    )
    fr = ct.frame_from_contacts(contacts, threshold=0.1)
    assert fr.active_mask.sum() == len(contacts)
    for c in contacts:
        assert fr.active_mask[c.finger, c.taxel_id]
