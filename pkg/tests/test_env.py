import math

import numpy as np
import pytest

from sticksteer import env as E
from sticksteer import trajectories as T
from sticksteer.config import FullConfig, RewardWeights, TaskConfig
from sticksteer.contact_tactile import TaxelLayout, TactileFrame, binarize


@pytest.fixture(scope="module")
def cfg():
    return FullConfig()


@pytest.fixture(scope="module")
def layout():
    return TaxelLayout.grid()


@pytest.fixture(scope="module")
def states(cfg, layout):
    return E.generate_initial_states(
        cfg.hand, cfg.stick, layout, cfg.generator, n_states=12, seed=3
    )


# ---------------------------------------------------------------------------
# desired axis and reward


def test_desired_axis_unit():
    u = T.desired_axis(np.array([0, 0, 1.0]), np.zeros(3))
    assert np.allclose(u, [0, 0, 1])


def test_desired_axis_normalizes():
    u = T.desired_axis(np.array([1.0, 1.0, 0.0]), np.zeros(3))
    assert np.allclose(u, [math.sqrt(2) / 2, math.sqrt(2) / 2, 0])


def test_desired_axis_scale_invariant():
    p1, p2 = np.array([0.3, -0.2, 0.9]), np.array([-0.1, 0.4, 0.1])
    assert np.allclose(T.desired_axis(p1, p2), T.desired_axis(2 * p1, 2 * p2))


def test_desired_axis_degenerate():
    with pytest.raises(T.DegeneratePoints):
        T.desired_axis(np.ones(3), np.ones(3))


def test_reward_perfect_tracking():
    w = RewardWeights()
    u = np.array([0, 0, 1.0])
    p1, p2 = np.array([0, 0, 0.05]), np.array([0, 0, -0.25])
    assert E.compute_reward(w, u, u, p1, p1, p2, p2, 0.0) == pytest.approx(0.5, abs=1e-12)


def test_reward_orthogonal_axis():
    w = RewardWeights()
    u_d = np.array([0, 0, 1.0])
    u_c = np.array([1.0, 0, 0])
    p = np.zeros(3)
    expect = 0.5 - 1.5 * math.sqrt(2)
    assert E.compute_reward(w, u_d, u_c, p, p, p, p, 0.0) == pytest.approx(expect, abs=1e-12)


def test_reward_force_penalty():
    w = RewardWeights()
    u = np.array([0, 0, 1.0])
    p = np.zeros(3)
    assert E.compute_reward(w, u, u, p, p, p, p, 100.0) == pytest.approx(0.0, abs=1e-12)


def test_reward_upper_bound_property():
    rng = np.random.default_rng(0)
    w = RewardWeights()
    for _ in range(200):
        u_d = rng.normal(size=3)
        u_d /= np.linalg.norm(u_d)
        u_c = rng.normal(size=3)
        u_c /= np.linalg.norm(u_c)
        pts = rng.normal(size=(4, 3))
        r = E.compute_reward(w, u_d, u_c, pts[0], pts[1], pts[2], pts[3], abs(rng.normal()))
        assert r <= w.c + 1e-12


# ---------------------------------------------------------------------------
# termination and actions


def test_terminate_threshold():
    st = E.make_initial_state(stick_pos=np.array([0, 0.079, -0.151]))
    assert E.terminate(st, -0.15)
    st = E.make_initial_state(stick_pos=np.array([0, 0.079, -0.149]))
    assert not E.terminate(st, -0.15)


def test_apply_action_hold():
    q = np.full(6, 0.3)
    lims = (np.full(6, -0.35), np.full(6, 1.6))
    assert np.array_equal(E.apply_action(q, np.zeros(6), 0.05, lims), q)


def test_apply_action_clips_delta():
    q = np.zeros(6)
    lims = (np.full(6, -0.35), np.full(6, 1.6))
    out = E.apply_action(q, np.full(6, 1.0), 0.05, lims)
    assert np.allclose(out, 0.05)


def test_apply_action_clips_to_limits():
    q = np.full(6, 1.58)
    lims = (np.full(6, -0.35), np.full(6, 1.6))
    out = E.apply_action(q, np.full(6, 0.05), 0.05, lims)
    assert np.allclose(out, 1.6)


def test_apply_action_rejects_nonfinite():
    with pytest.raises(ValueError):
        E.apply_action(np.zeros(6), np.full(6, np.nan), 0.05,
                       (np.full(6, -1.0), np.full(6, 1.0)))


# ---------------------------------------------------------------------------
# reference trajectories


def mk_traj(kind, **kw):
    cfg = TaskConfig(kind=kind, **kw)
    center = np.array([0.0, 0.079, -0.25])
    anchor = np.array([0.0, 0.079, 0.0])
    return T.ReferenceTrajectory(kind, cfg, center, anchor, 0.30,
                                 line_dir=np.array([1.0, 0.0]))


def test_circle_quarter_turn():
    tr = mk_traj("circle", omega=math.pi, radius=0.02)
    _, p2_0, _ = tr.sample(0.0)
    _, p2_q, _ = tr.sample(0.5)
    rel0 = p2_0 - tr.center
    relq = p2_q - tr.center
    assert np.allclose(rel0, [0.02, 0.0, 0.0], atol=1e-12)
    assert np.allclose(relq, [0.0, 0.02, 0.0], atol=1e-12)


def test_circle_periodicity():
    tr = mk_traj("circle", omega=math.pi)
    a = tr.sample(0.0)
    b = tr.sample(2.0)
    for x, y in zip(a, b):
        assert np.allclose(x, y, atol=1e-9)


def test_line_parameterization():
    tr = mk_traj("line", line_speed=0.02, line_half_length=0.02)
    for t in (0.0, 0.5, 1.0, 1.5, 2.5, 4.0):
        _, p2, _ = tr.sample(t)
        offset = p2 - tr.center
        # documented triangle wave: start at center, reflect at +-2 cm
        x = 0.02 * t + 0.02
        period = 0.08
        y = math.fmod(x, period)
        expect = y - 0.02 if y < 0.04 else 0.06 - y
        assert offset[0] == pytest.approx(expect, abs=1e-12)
        assert abs(offset[0]) <= 0.02 + 1e-12


def test_eight_starts_center():
    tr = mk_traj("eight")
    _, p2, _ = tr.sample(0.0)
    assert np.allclose(p2, tr.center, atol=1e-12)
    _, p2b, _ = tr.sample(4.0)
    assert np.allclose(p2b, tr.center, atol=1e-9)


def test_spiral_radius_growth_and_cap():
    tr = mk_traj("spiral", omega=math.pi, spiral_r0=0.005, spiral_r1=0.02,
                 spiral_laps=3.0)
    _, p2_0, _ = tr.sample(0.0)
    assert np.linalg.norm((p2_0 - tr.center)[:2]) == pytest.approx(0.005, abs=1e-12)
    _, p2_3laps, _ = tr.sample(6.0)
    assert np.linalg.norm((p2_3laps - tr.center)[:2]) == pytest.approx(0.02, abs=1e-9)
    _, p2_after, _ = tr.sample(8.0)
    assert np.linalg.norm((p2_after - tr.center)[:2]) == pytest.approx(0.02, abs=1e-9)


def test_stick_length_invariant_and_unit_axis():
    for kind in ("line", "circle", "spiral", "eight"):
        tr = mk_traj(kind)
        for t in np.linspace(0, 10, 101):
            p1, p2, u = tr.sample(t)
            assert np.linalg.norm(u) == pytest.approx(1.0, abs=1e-12)
            assert np.linalg.norm(p1 - p2) == pytest.approx(0.30, abs=1e-12)


def test_reference_lipschitz():
    # worst-case curve speeds; P1/P2 inherit them through the anchor map
    bounds = {
        "line": 0.02,
        "circle": 0.02 * math.pi,
        "spiral": math.pi * math.sqrt(0.02**2 + 0.0008**2),
        "eight": 0.02 * 2 * math.pi / 4.0 * math.sqrt(5),
    }
    for kind, ell in bounds.items():
        tr = mk_traj(kind)
        dt = 1e-4
        for t in np.linspace(0, 8, 400):
            _, a, _ = tr.sample(t)
            _, b, _ = tr.sample(t + dt)
            assert np.linalg.norm(b - a) <= 1.2 * ell * dt + 1e-12


def test_unknown_kind():
    with pytest.raises(T.UnknownKind):
        T.curve_point("zigzag", TaskConfig(), 0.0)


# ---------------------------------------------------------------------------
# observations


def make_frame(active):
    fr = TactileFrame.blank(0.1)
    for f, i in active:
        fr.raw[f, i] = 1.0
    binarize(fr)
    return fr


def test_observation_dims():
    assert E.observation_dim("contact_centers") == 21
    assert E.observation_dim("object_pose") == 15
    assert E.observation_dim("pose_plus_centers") == 27
    assert E.observation_dim("raw_tactile") == 393
    assert E.observation_dim("pose_plus_binary") == 18


def test_observation_joint_normalization(layout):
    st = E.make_initial_state(q=np.array([-0.35, 1.6, 0.625, 0.0, 0.3, 0.9]))
    lims = (np.full(6, -0.35), np.full(6, 1.6))
    obs = E.build_observation(
        "contact_centers", st, make_frame([]), layout,
        np.array([0, 0, 1.0]), lims, 1 / 0.03, 0.1,
    )
    assert obs[0] == pytest.approx(0.0)
    assert obs[1] == pytest.approx(1.0)
    assert obs[2] == pytest.approx((0.625 + 0.35) / 1.95)


def test_observation_contact_centers_payload(layout):
    from sticksteer.contact_tactile import contact_center

    st = E.make_initial_state()
    lims = (np.full(6, -0.35), np.full(6, 1.6))
    fr = make_frame([(0, 5), (0, 6), (2, 100)])
    obs = E.build_observation(
        "contact_centers", st, fr, layout, np.array([0, 0, 1.0]),
        lims, 1 / 0.03, 0.1,
    )
    c0 = contact_center(fr, layout, 0, scale=1 / 0.03)
    assert np.allclose(obs[9:12], c0)
    assert np.allclose(obs[12:15], 0.0)  # finger 2 sentinel
    c2 = contact_center(fr, layout, 2, scale=1 / 0.03)
    assert np.allclose(obs[15:18], c2)
    assert np.allclose(obs[18:], [1.0, 0.0, 1.0])  # validity bits


def test_observation_raw_variant_length(layout):
    st = E.make_initial_state()
    lims = (np.full(6, -0.35), np.full(6, 1.6))
    obs = E.build_observation(
        "raw_tactile", st, make_frame([(1, 3)]), layout,
        np.array([0, 0, 1.0]), lims, 1 / 0.03, 0.1,
    )
    assert obs.shape == (393,)
    assert obs[9 + 128 + 3] == 1.0


def test_observation_binary_variant(layout):
    st = E.make_initial_state()
    lims = (np.full(6, -0.35), np.full(6, 1.6))
    obs = E.build_observation(
        "pose_plus_binary", st, make_frame([(1, 3)]), layout,
        np.array([0, 0, 1.0]), lims, 1 / 0.03, 0.1,
    )
    assert obs.shape == (18,)
    assert np.allclose(obs[15:], [0, 1, 0])


# ---------------------------------------------------------------------------
# initial states


def test_generated_states_reverify(cfg, layout, states):
    for i in range(len(states)):
        assert E.verify_three_finger_contact(
            cfg.hand, cfg.stick, layout, states.qs[i], states.poses[i]
        )


def test_generation_deterministic(cfg, layout):
    a = E.generate_initial_states(cfg.hand, cfg.stick, layout, cfg.generator,
                                  n_states=6, seed=9)
    b = E.generate_initial_states(cfg.hand, cfg.stick, layout, cfg.generator,
                                  n_states=6, seed=9)
    assert np.array_equal(a.qs, b.qs)
    assert np.array_equal(a.poses, b.poses)


def test_states_csv_roundtrip(tmp_path, states):
    p = tmp_path / "states.csv"
    states.write_csv(p)
    again = E.InitialStateSet.read_csv(p)
    assert np.allclose(again.qs, states.qs, atol=1e-9)
    assert np.allclose(again.poses, states.poses, atol=1e-9)
    assert again.meta["seed"] == "3"


def test_exhausted_sampling(cfg, layout):
    import dataclasses

    bad = dataclasses.replace(cfg.generator)
    bad.pos_jitter_xy = 0.0
    bad.pos_jitter_z = 0.0
    # park the stick a meter away: no draw can ever reach contact
    old = E.NOMINAL_STICK_CENTER.copy()
    try:
        E.NOMINAL_STICK_CENTER[:] = [1.0, 1.0, 0.0]
        with pytest.raises(E.ExhaustedSampling):
            E.generate_initial_states(cfg.hand, cfg.stick, layout, bad,
                                      n_states=5, seed=0)
    finally:
        E.NOMINAL_STICK_CENTER[:] = old


# ---------------------------------------------------------------------------
# environment behavior


def test_reset_deterministic(cfg, states):
    env1 = E.ManipulationEnv(cfg, states, seed=42)
    env2 = E.ManipulationEnv(cfg, states, seed=42)
    o1, _ = env1.reset()
    o2, _ = env2.reset()
    assert np.array_equal(o1, o2)
    rng = np.random.default_rng(0)
    for _ in range(30):
        a = rng.normal(0, 0.02, 6)
        r1 = env1.step(a)
        r2 = env2.step(a)
        assert np.array_equal(r1[0], r2[0])
        assert r1[1] == r2[1]


def test_reset_samples_positive_masses(cfg, states):
    env = E.ManipulationEnv(cfg, states, seed=5)
    for _ in range(50):
        env.reset()
        assert env._stick.mass > 0
        assert env._stick.radius > 0
        assert env._stick.friction_mu > 0


def test_parameter_means_over_resets(cfg, states):
    rng = np.random.default_rng(11)
    draws = [cfg.randomization.sample(rng) for _ in range(10_000)]
    masses = np.array([d["stick_mass"] for d in draws])
    mus = np.array([d["friction"] for d in draws])
    assert masses.mean() == pytest.approx(np.mean(cfg.randomization.stick_mass), rel=0.02)
    assert mus.mean() == pytest.approx(np.mean(cfg.randomization.friction), rel=0.02)


def test_episode_truncates_at_horizon(cfg, states):
    import dataclasses

    short = FullConfig()
    short.task = dataclasses.replace(cfg.task, episode_length=10)
    short.randomize = False
    env = E.ManipulationEnv(short, states, seed=1)
    env.reset()
    for k in range(10):
        obs, r, term, trunc, info = env.step(np.zeros(6))
        if term:
            pytest.skip("unlucky record dropped before horizon")
    assert trunc


def test_settled_grasp_not_terminated(cfg, states):
    nom = FullConfig()
    nom.randomize = False
    env = E.ManipulationEnv(nom, states, seed=2)
    obs, info = env.reset()
    assert not info.dropped


def test_episode_log_roundtrip(tmp_path, cfg, states):
    env = E.ManipulationEnv(cfg, states, seed=3)
    log = E.EpisodeLog()
    E.run_episode(env, lambda o: np.zeros(6), log=log)
    p = tmp_path / "ep.csv"
    log.write_csv(p)
    text = p.read_text().splitlines()
    assert text[0].startswith("t,reward")
    assert len(text) == len(log.rows) + 1


def test_env_obs_matches_documented_builder(cfg, states):
    """The env's fast observation path equals build_observation exactly."""
    import dataclasses

    for variant in ("contact_centers", "object_pose", "pose_plus_centers",
                    "raw_tactile", "pose_plus_binary"):
        c = FullConfig()
        c.task = dataclasses.replace(cfg.task, obs_variant=variant)
        c.randomize = False
        env = E.ManipulationEnv(c, states, seed=7)
        obs, _ = env.reset()
        for _ in range(3):
            obs, r, te, tr, info = env.step(np.full(6, 0.005))
            if te:
                break
            st = env.state
            t = env._k / 50.0
            _, _, ud = env.reference.sample(t)
            ref = E.build_observation(
                variant, st, env._frame(), env.layout, ud,
                env._limits, c.task.center_scale, c.task.pose_scale,
            )
            assert np.allclose(obs, ref, atol=1e-12)
