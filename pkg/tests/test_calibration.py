import numpy as np
import pytest

from sticksteer import calibration as cal
from sticksteer.cmaes import CmaEsState, cma_es_minimize


# ---------------------------------------------------------------------------
# CMA-ES


def test_sphere_converges():
    c = np.array([1.7, -2.3])
    res = cma_es_minimize(
        lambda x: float(np.sum((x - c) ** 2)), np.zeros(2), 1.0, budget=200, seed=0
    )
    assert np.linalg.norm(res.x_best - c) < 1e-6
    assert res.generations <= 200


def test_rosenbrock_converges():
    def rosen(x):
        return float(100.0 * (x[1] - x[0] ** 2) ** 2 + (1 - x[0]) ** 2)

    res = cma_es_minimize(rosen, np.array([-1.0, 1.0]), 0.5, budget=2000, seed=1)
    assert res.f_best < 1e-6
    assert np.allclose(res.x_best, [1.0, 1.0], atol=1e-2)


def test_seeded_determinism():
    f = lambda x: float(np.sum(x**2) + np.sin(3 * x[0]))
    a = cma_es_minimize(f, np.ones(3), 0.7, budget=40, seed=7)
    b = cma_es_minimize(f, np.ones(3), 0.7, budget=40, seed=7)
    assert a.history == b.history
    assert np.array_equal(a.x_best, b.x_best)


def test_objective_shift_invariance():
    """Rank-based selection: adding a constant changes no iterate."""
    f = lambda x: float((x[0] - 2) ** 2 + 0.5 * (x[1] + 1) ** 2)
    a = cma_es_minimize(f, np.zeros(2), 1.0, budget=30, seed=3)
    b = cma_es_minimize(lambda x: f(x) + 123.456, np.zeros(2), 1.0, budget=30, seed=3)
    assert np.array_equal(a.x_best, b.x_best)
    assert [h[2] for h in a.history] == [h[2] for h in b.history]  # sigma paths


def test_best_ever_monotone():
    f = lambda x: float(np.sum(x**2))
    res = cma_es_minimize(f, np.full(4, 3.0), 1.0, budget=60, seed=5)
    best = [h[1] for h in res.history]
    assert all(b2 <= b1 + 1e-15 for b1, b2 in zip(best, best[1:]))


def test_bounds_respected():
    seen = []

    def f(x):
        seen.append(x.copy())
        return float(np.sum((x - 0.5) ** 2))

    cma_es_minimize(
        f, np.array([1.0, 1.0]), 0.5,
        bounds=[(0.01, 5.0), (0.01, 5.0)], budget=30, seed=2,
    )
    assert all(np.all(x >= 0.01) and np.all(x <= 5.0) for x in seen)


def test_state_invariants():
    st = CmaEsState.fresh(np.zeros(3), 0.5, seed=0)
    assert st.lam >= 4
    assert st.sigma > 0
    np.linalg.cholesky(st.cov)
    with pytest.raises(ValueError):
        CmaEsState.fresh(np.zeros(3), -1.0)
    with pytest.raises(ValueError):
        CmaEsState.fresh(np.zeros(3), 1.0, lam=3)


def test_stds_reported():
    res = cma_es_minimize(
        lambda x: float(np.sum(x**2)), np.ones(2), 1.0, budget=20, seed=0
    )
    assert res.stds.shape == (2,)
    assert np.all(res.stds > 0)


# ---------------------------------------------------------------------------
# recordings and trajectory loss


def test_recording_roundtrip(tmp_path):
    rec = cal.make_reference_profile(duration=0.5)
    rec.q_measured = np.sin(rec.times)
    p = tmp_path / "rec.csv"
    rec.write_csv(p)
    again = cal.ReferenceRecording.read_csv(p)
    assert np.allclose(again.times, rec.times, atol=1e-6)
    assert np.allclose(again.q_measured, rec.q_measured, atol=1e-9)


def test_recording_validation():
    with pytest.raises(ValueError):
        cal.ReferenceRecording(np.array([0.0, 1.0]), np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        cal.ReferenceRecording(np.array([0.0, 0.0]), np.zeros(2), np.zeros(2))


def test_loss_zero_on_self_consistent_recording():
    rec = cal.synthesize_recording(8.0, 0.5, noise_std=0.0, duration=2.0)
    assert cal.trajectory_loss(8.0, 0.5, rec) == pytest.approx(0.0, abs=1e-9)


def test_loss_increases_with_wrong_kd():
    rec = cal.synthesize_recording(8.0, 0.5, noise_std=0.0, duration=2.0)
    assert cal.trajectory_loss(8.0, 1.0, rec) > cal.trajectory_loss(8.0, 0.5, rec)


def test_loss_rejects_nonpositive_gains():
    rec = cal.synthesize_recording(8.0, 0.5, noise_std=0.0, duration=0.5)
    with pytest.raises(ValueError):
        cal.trajectory_loss(-1.0, 0.5, rec)


@pytest.mark.slow
def test_gain_recovery_within_ten_percent():
    rec = cal.synthesize_recording(8.0, 0.5, seed=11, noise_std=1e-3)
    kp, kd, stds, res = cal.fit_pd_gains(rec, budget=120, seed=4)
    assert abs(kp - 8.0) / 8.0 < 0.10
    assert abs(kd - 0.5) / 0.5 < 0.10
    assert np.all(stds >= 0)


# ---------------------------------------------------------------------------
# backlash estimation


def test_backlash_definition_example():
    """[q_c - q_a, q_b - q_a] from the recorded positions."""
    q_a, q_b, q_c = 0.50, 0.55, 0.47
    assert q_c - q_a == pytest.approx(-0.03, abs=1e-12)
    assert q_b - q_a == pytest.approx(0.05, abs=1e-12)


def test_backlash_recovery_synthetic():
    sim = cal.BacklashJointSim(backlash=(-0.02, 0.02))
    lo, hi = cal.estimate_backlash(sim, [0.2, 0.4, 0.6, 0.8, 1.0], 0.05)
    assert lo == pytest.approx(-0.02, rel=0.05)
    assert hi == pytest.approx(0.02, rel=0.05)


def test_backlash_zero_gap():
    sim = cal.BacklashJointSim(backlash=(0.0, 0.0))
    lo, hi = cal.estimate_backlash(sim, [0.3, 0.6], 0.05)
    assert abs(lo) < 1e-6 and abs(hi) < 1e-6


def test_backlash_saturated_probe_discard():
    logs = []
    sim = cal.BacklashJointSim(backlash=(-0.02, 0.02))
    lo, hi = cal.estimate_backlash(
        sim, [1.59, 0.5], 0.05, log=logs.append
    )  # first probe pushes past the upper limit
    assert logs and "discarded" in logs[0]
    assert hi == pytest.approx(0.02, rel=0.10)


def test_backlash_all_saturated_raises():
    sim = cal.BacklashJointSim(backlash=(-0.02, 0.02))
    with pytest.raises(cal.SaturatedProbe):
        cal.estimate_backlash(sim, [1.59], 0.05)


@pytest.mark.slow
def test_backlash_estimator_near_unbiased():
    ests = []
    for seed in range(20):
        sim = cal.BacklashJointSim(backlash=(-0.02, 0.02))
        lo, hi = cal.estimate_backlash(
            sim, [0.2, 0.5, 0.8], 0.05, noise_std=1e-4, seed=seed
        )
        ests.append((lo, hi))
    mean = np.mean(ests, axis=0)
    assert mean[0] == pytest.approx(-0.02, rel=0.02)
    assert mean[1] == pytest.approx(0.02, rel=0.02)


# ---------------------------------------------------------------------------
# randomization export


def test_export_randomization_roundtrip(tmp_path):
    from sticksteer.config import FullConfig, load_config, save_config

    result = cal.CalibrationResult(
        joints={
            "J0": cal.JointCalibration(10.0, 2.0, 0.4, 0.05, (-0.015, 0.018), 1.2),
            "J1": cal.JointCalibration(9.0, 1.0, 0.6, 0.08),
        }
    )
    spec = cal.export_randomization(result)
    assert spec.kp["J0"] == (10.0, 2.0)
    assert spec.backlash["J0"] == (-0.015, 0.018)
    cfg = FullConfig()
    cfg.randomization = spec
    p = tmp_path / "cfg.ini"
    save_config(cfg, p)
    again = load_config(p)
    assert again.randomization.kp["J0"] == (10.0, 2.0)
    assert again.randomization.kd["J1"] == (0.6, 0.08)
    assert again.randomization.backlash["J0"] == (-0.015, 0.018)


def test_truncated_normal_sampling_stats():
    from sticksteer.config import RandomizationSpec

    spec = RandomizationSpec()
    spec.kp = {n: (10.0, 2.0) for n in spec.kp}
    rng = np.random.default_rng(0)
    draws = np.array([spec.sample(rng)["kp"][0] for _ in range(10_000)])
    assert np.all(draws > 0)
    assert draws.mean() == pytest.approx(10.0, abs=0.1)


def test_degenerate_spec_samples_mean():
    from sticksteer.config import RandomizationSpec

    spec = RandomizationSpec()
    spec.kp = {n: (7.0, 0.0) for n in spec.kp}
    rng = np.random.default_rng(1)
    s = spec.sample(rng)
    assert np.all(s["kp"] == 7.0)


def test_calibration_result_validation():
    with pytest.raises(ValueError):
        cal.JointCalibration(-1.0, 0.1, 0.5, 0.1)
    with pytest.raises(ValueError):
        cal.JointCalibration(1.0, -0.1, 0.5, 0.1)


def test_report_written(tmp_path):
    result = cal.CalibrationResult(
        joints={"J0": cal.JointCalibration(10.0, 2.0, 0.4, 0.05, (-0.02, 0.02), 3.3)}
    )
    p = tmp_path / "report.txt"
    result.write_report(p)
    text = p.read_text()
    assert "[J0]" in text and "kp_mean" in text
