import json

import numpy as np
import pytest

from adaptive_design import analysis, design, harness
from adaptive_design.design import Autocorrelation, DesignConfig
from adaptive_design.errors import SingularInformation
from adaptive_design.harness import ExperimentConfig


def small(**kw):
    base = dict(N=200, runs=3, seed=11)
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_defaults_and_roundtrip(tmp_path):
    cfg = ExperimentConfig()
    assert cfg.params.orders == (0, 4, 0, 0, 3)
    assert cfg.design.gamma == 1e-4 and cfg.N == 4000 and cfg.design.m == 3
    cfg.save(tmp_path / "c.json")
    again = ExperimentConfig.load(tmp_path / "c.json")
    assert again.to_dict() == cfg.to_dict()


@pytest.mark.parametrize(
    "bad",
    [dict(N=0), dict(redesign_every=0), dict(mode="other"), dict(theta0=[0.0]), dict(sigma2_true=-1.0)],
)
def test_config_validation(bad):
    with pytest.raises(ValueError):
        ExperimentConfig(**bad)


def test_unknown_key_rejected():
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"bogus": 1})


def test_determinism():
    a = harness.run_adaptive(small(N=60))
    b = harness.run_adaptive(small(N=60))
    assert np.array_equal(a.theta, b.theta) and np.array_equal(a.u, b.u)


def test_runs_are_independent_of_batch_size():
    a = harness.run_optimal_baseline(small(runs=4))
    b = harness.run_optimal_baseline(small(runs=2))
    np.testing.assert_array_equal(a.theta[:, :2], b.theta)


def test_trace_shapes_and_reset_accounting():
    tr = harness.run_adaptive(small(N=80))
    assert tr.theta.shape == (81, 3, 7)
    np.testing.assert_array_equal(tr.n, np.arange(81))
    np.testing.assert_array_equal(tr.reset.sum(axis=0), tr.resets_final)


def test_baseline_r0_constant_and_power():
    cfg = small(N=4000, runs=4)
    tr = harness.run_optimal_baseline(cfg)
    r_star = design.design_input(cfg.params, cfg.sigma2_true, cfg.design).r
    assert np.all(tr.r0 == r_star[0])
    assert np.mean(tr.u**2) == pytest.approx(r_star[0], rel=0.05)


def test_fixed_white_consistency():
    cfg = small(N=4000, runs=10, mode="fixed-white")
    tr = harness.run_fixed_white(cfg)
    err = np.abs(tr.theta_N - cfg.params.theta).max(axis=1)
    assert np.mean(err < 0.1) >= 0.8


def test_adaptive_r0_tracks_optimal_design():
    cfg = small(N=600, runs=2)
    tr = harness.run_adaptive(cfg)
    r_star = design.design_input(cfg.params, cfg.sigma2_true, cfg.design).r[0]
    assert abs(np.median(tr.r0[-100:]) - r_star) < abs(tr.r0[1, 0] - r_star)


def test_redesign_every_reuses_generator():
    tr = harness.run_adaptive(small(N=40, redesign_every=10, runs=1))
    r0 = tr.r0[:, 0]
    assert np.all(r0[1:10] == r0[1]) and np.all(r0[11:20] == r0[11])


def test_noise_free_limit():
    """Without noise theta_D is not identifiable; theta_B still converges."""
    cfg = small(sigma2_true=0.0, N=4000, runs=3, mode="optimal-baseline")
    tr = harness.simulate_experiment(cfg)
    errB = [np.abs(tr.theta[n, :, :4] - cfg.params.b).max() for n in (100, 1000, 4000)]
    assert errB[0] > errB[1] > errB[2]
    with pytest.raises(SingularInformation):
        r = Autocorrelation(design.design_input(cfg.params, 0.0, cfg.design).r)
        analysis.asymptotic_covariance(cfg.params, r, 0.0)


def test_monte_carlo_summary():
    cfg = small(N=300, runs=5, mode="optimal-baseline")
    mc = harness.monte_carlo(cfg, 5)
    gains = analysis.l2_gain_sq(mc.theta_N[:, :4])
    assert mc.variance == pytest.approx(np.var(gains, ddof=1))
    assert mc.sqrtN_cov.shape == (7, 7) and mc.P_star.shape == (7, 7)
    json.dumps(mc.to_dict())
    with pytest.raises(ValueError):
        harness.monte_carlo(cfg, 1)


def test_figure_csvs(tmp_path):
    cfg = small(N=30, runs=1)
    tr = harness.run_adaptive(cfg)
    files = harness.write_figure_csvs(tmp_path, tr, cfg.params)
    assert [f.name for f in files] == ["fig1_thetaB.csv", "fig2_thetaD_sigma.csv", "fig5_r0.csv"]
    lines = (tmp_path / "fig1_thetaB.csv").read_text().splitlines()
    assert lines[0] == "n,b1,b2,b3,b4" and len(lines) == 32
    assert (tmp_path / "fig2_thetaD_sigma.csv").read_text().startswith("n,d1,d2,d3,sigma2_hat")


def test_variance_vs_n(tmp_path):
    rows = harness.variance_vs_N(small(N=100, mode="fixed-white", runs=4), 4, [50, 100])
    harness.write_variance_csv(tmp_path / "fig6_variance.csv", rows)
    assert [r["N"] for r in rows] == [50, 100]
    assert (tmp_path / "fig6_variance.csv").read_text().startswith("mode,runs,N,variance")


def test_overflow_aborts_with_partial_trace():
    cfg = small(N=50, runs=1, mode="fixed-white", white_power=float("inf"))
    with pytest.raises(harness.RunAborted) as info:
        harness.simulate_experiment(cfg)
    assert info.value.trace.theta.shape[0] < 51
