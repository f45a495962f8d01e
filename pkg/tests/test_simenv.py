import math

import numpy as np
import pytest

from featsel import simenv, vision
from featsel.errors import InvalidInputError, UndefinedGapError


@pytest.fixture
def cfg():
    return simenv.ScenarioConfig.paper(p0=3.0)


def test_reference_path_landmarks(cfg):
    np.testing.assert_allclose(simenv.reference_path(cfg, 0), [3.0 + cfg.R, 0, 0], atol=1e-9)
    half = math.pi / cfg.omega
    np.testing.assert_allclose(simenv.reference_path(cfg, half), [3.0 - cfg.R, 0, cfg.R],
                               atol=1e-9 * cfg.R)
    period = 4 * math.pi / cfg.omega
    np.testing.assert_allclose(simenv.reference_path(cfg, 12.3 + period),
                               simenv.reference_path(cfg, 12.3), atol=1e-8 * cfg.R)


def test_orientation_schedule(cfg):
    np.testing.assert_allclose(simenv.orientation_schedule(cfg, 0), vision.euler_zyx(0, -math.pi / 2, 0),
                               atol=1e-12)
    for tau in (0, 17, 250, 1234):
        assert vision.is_rotation(simenv.orientation_schedule(cfg, tau))
    period = 2 * math.pi / cfg.omega_r
    np.testing.assert_allclose(simenv.orientation_schedule(cfg, 40 + period),
                               simenv.orientation_schedule(cfg, 40), atol=1e-9)


def test_landmarks_default_count_bands_and_determinism(cfg):
    a = simenv.generate_landmarks(cfg)
    b = simenv.generate_landmarks(cfg)
    assert len(a) == 1752
    ys = np.array([f.y for f in a])
    np.testing.assert_array_equal(ys, np.array([f.y for f in b]))
    r = np.hypot(ys[:, 0] - cfg.p0, ys[:, 1])
    assert r.min() >= 1.2 * cfg.R and r.max() <= 2.5 * cfg.R
    assert np.abs(ys[:, 2]).max() <= cfg.R
    other = simenv.generate_landmarks(cfg, seed=1)
    assert not np.allclose(ys, np.array([f.y for f in other]))


def test_tracking_controls_reach_next_reference(cfg):
    mu = np.array([1.0, 2.0, 3.0])
    u = simenv.tracking_controls(cfg, mu, 5)
    np.testing.assert_allclose(mu + u, simenv.reference_path(cfg, 6))


def test_rmse_normalization():
    truth = np.zeros((4, 3))
    means = np.full((4, 3), 2.0)
    assert simenv.rmse(truth, means, 3) == pytest.approx(math.sqrt(48) / 12)
    assert simenv.rmse(truth, means) == pytest.approx(math.sqrt(48) / 12)
    with pytest.raises(InvalidInputError):
        simenv.rmse(truth, means[:3])
    with pytest.raises(InvalidInputError):
        simenv.rmse(truth, means, 5)


def test_gap_and_ratio():
    assert simenv.relative_gap(1.1, 1.0) == pytest.approx(10.0)
    assert simenv.relative_gap(1.0, 1.0) == 0.0
    with pytest.raises(UndefinedGapError):
        simenv.relative_gap(1.0, 0.0)
    assert simenv.cpu_ratio(0.5, 2.0) == 0.25
    with pytest.raises(InvalidInputError):
        simenv.cpu_ratio(0.0, 1.0)


@pytest.mark.parametrize("bad", [dict(T=0), dict(sigma=0.0), dict(process_noise=(1.0, 1.0)),
                                 dict(init_cov=(1.0, 0.0, 1.0)), dict(measure="rho_x"),
                                 dict(chain_method="oracle"), dict(budget_fraction=0.0),
                                 dict(R=float("nan"))])
def test_config_validation(bad):
    with pytest.raises(InvalidInputError):
        simenv.ScenarioConfig(**bad)


def test_to_dict_normalizes_tuples():
    a = simenv.ScenarioConfig(process_noise=(4, 4, 16)).to_dict()
    b = simenv.ScenarioConfig(process_noise=(4.0, 4.0, 16.0)).to_dict()
    assert a == b


@pytest.fixture(scope="module")
def tiny_result():
    cfg = simenv.ScenarioConfig.desk(horizons=3, T=4, landmarks=150, restarts=4, seed=3)
    return simenv.run_benchmark(cfg)


def test_benchmark_shapes_and_bounds(tiny_result):
    assert len(tiny_result.records) == 3
    for rec in tiny_result.records:
        assert rec.q == (rec.N + 1) // 2
        assert rec.phi["greedy"] == 0.0 and rec.kappa["greedy"] == 1.0
        # sampling is with replacement, so duplicates collapse
        assert len(rec.selected["greedy"]) == rec.q
        for m in simenv.METHODS:
            assert 0 < len(rec.selected[m]) <= rec.q
            assert rec.rho[m] >= rec.rho_theta * (1 - 1e-12)
            assert rec.theta[m] >= 0
    k, p = tiny_result.kappa_cdf("leverage")
    assert np.all(np.diff(k) >= 0) and p[-1] == 1.0


def test_benchmark_deterministic_except_timing(tiny_result):
    again = simenv.run_benchmark(tiny_result.config)
    for a, b in zip(tiny_result.records, again.records):
        assert a.selected == b.selected
        assert a.rho == b.rho and a.theta == b.theta and a.phi == b.phi


def test_turns():
    cfg = simenv.ScenarioConfig.paper()
    assert cfg.horizons * cfg.T * cfg.omega / (2 * math.pi) == pytest.approx(
        simenv.BenchmarkResult(cfg, [], 1).turns)


def test_random_instance_counts():
    inst = simenv.random_instance(0, 9, 4)
    assert len(inst.contributions) == 9
    assert all(c.triangulable and c.n_f >= 2 for c in inst.contributions)
    with pytest.raises(InvalidInputError):
        simenv.random_instance(0, 3, 0)


def test_scaling_validation_and_single_size():
    with pytest.raises(InvalidInputError):
        simenv.run_scaling([64, 32])
    with pytest.raises(InvalidInputError):
        simenv.run_scaling([])
    res = simenv.run_scaling([16], trials=1, restarts=2)
    assert res.slopes == {} and res.rows[0].q == 8


def test_loglog_slope_recovers_power():
    n = np.array([8, 16, 32, 64])
    assert simenv.loglog_slope(n, 3 * n ** 1.5) == pytest.approx(1.5)
