import numpy as np
import pytest

from meanfield import noise as nz
from meanfield import particles as P
from meanfield import roughpath as rp
from meanfield.stats import mean_se
from meanfield.testfunctions import TestFunction

H = TestFunction.bump(1.0, 0.5, 1.0)


def _traj(n, steps=64, seed=0, increments=None):
    cfg = P.SimConfig(1.0, 1 / steps, n, 1, (), P.InitialLaw.gaussian(), seed)
    return P.simulate_paths(cfg, P.tanh_kernel(), increments, keep_path=True)


def test_noise_term_is_centred():
    w = [nz.noise_term(_traj(20, 32, seed=r), H, 32, "ito-sum") for r in range(200)]
    mu, se = mean_se(w)
    assert abs(mu) <= 3 * se


def test_frozen_driver_gives_zero():
    traj = _traj(5, 16, increments=np.zeros((16, 5, 1)))
    assert nz.noise_term(traj, H, 16, "ito-sum") == 0.0
    assert nz.noise_term(traj, H, 16, "sewing") == 0.0


def test_single_particle_is_the_sewn_integral():
    traj = _traj(1, 64, seed=4)
    lift = rp.ito_lift(traj.increments, traj.dt, seed=4)
    germ = rp.Germ(H, rp.ControlledPath(traj.path, lift, 1.0))
    assert nz.noise_term(traj, H, 40, "sewing", lift) == pytest.approx(float(rp.sewing_value(germ, 40)[0]), rel=1e-14)


def test_ito_sum_path_matches_first_order_partition_sum():
    traj = _traj(7, 64, seed=5)
    lift = rp.ito_lift(traj.increments, traj.dt, seed=5)
    germ = rp.Germ(H, rp.ControlledPath(traj.path, lift, 1.0))
    direct = nz.ito_sum_path(traj.path, traj.increments, traj.dt, H, [0, 32, 64])
    assert np.all(direct[0] == 0)
    assert np.allclose(direct[1], rp.partition_sum(germ, 32, 32, first_order=True), rtol=1e-12, atol=1e-15)


def test_method_validation():
    traj = _traj(2, 8)
    with pytest.raises(ValueError):
        nz.noise_term(traj, H, 8, "midpoint")
    with pytest.raises(ValueError):
        nz.noise_term(P.simulate_paths(P.SimConfig(1.0, 0.125, 2), P.tanh_kernel()), H, 8)


def test_sewing_and_ito_sums_agree():
    traj = _traj(200, 128, seed=6)
    cv = nz.cross_validate(traj, H, 128)
    assert not cv["flagged"]
    assert cv["rms_difference"] < 3 * cv["rms_self_gap"]


def test_pathwise_audit_holds():
    assert nz.pathwise_audit(_traj(4, 64, seed=8), H, 64, max_triples=20_000)["holds"]


def test_scaling_h_scales_estimates_quadratically():
    base = dict(ns=(8, 16), replicas=6, dt=1 / 16, save_count=4, seed=3)
    a = nz.noise_decay_study(nz.NoiseStudyConfig(h=H, **base))
    b = nz.noise_decay_study(nz.NoiseStudyConfig(h=H.scaled(3.0), **base))
    assert np.allclose(b["estimate"], 9 * np.array(a["estimate"]), rtol=1e-12)
    assert np.allclose(b["constant"], a["constant"], rtol=1e-12)


def test_threads_do_not_change_results():
    cfg = nz.NoiseStudyConfig(ns=(8, 32), replicas=5, dt=1 / 16, save_count=4, seed=9)
    assert nz.noise_decay_study(cfg, 1)["estimate"] == nz.noise_decay_study(cfg, 3)["estimate"]


def test_noise_config_validation():
    with pytest.raises(ValueError):
        nz.NoiseStudyConfig(ns=(64, 32))
    with pytest.raises(ValueError):
        nz.NoiseStudyConfig(method="euler")
    with pytest.raises(ValueError):
        _ = nz.NoiseStudyConfig(dt=1 / 64, save_count=7).save_steps


def test_ladder_shares_streams():
    cfg = nz.NoiseStudyConfig(ns=(4, 8), replicas=1, dt=1 / 16, save_count=4, seed=2)
    rep = nz._replica_noise_paths(cfg, 0, [H])
    seed = nz.rngmod.derive_seed(cfg.seed, 0)
    inc = P.brownian_increments(seed, 8, 16, 1 / 16)
    assert np.array_equal(inc[:, :4], P.brownian_increments(seed, 4, 16, 1 / 16))
    assert rep[4].shape == (1, 5) and rep[8].shape == (1, 5)


def test_ou_terminal_variance():
    out = nz.ou_terminal_variance(1.0, 1.0)
    assert abs(out["variance"] - out["exact"]) <= 3 * out["se"]


def test_ou_toy_reports_constant():
    out = nz.ou_toy_study(ns=(16, 64), replicas=200, steps=32)
    assert out["C_hat"] > 0 and len(out["ratio"]) == 2
    assert out["fit"].slope < 0


def test_gp_zero_generator():
    out = nz.gp_ratio_study("zero", Ts=(1.0, 4.0), replicas=5, steps=16)
    assert out["numerator"] == [0.0, 0.0] and out["passed"]


def test_ou_martingale_quadratic_variation():
    vals = [nz.ou_martingale(r, 1.0, 8, 1.0, 4)[0][-1] for r in range(4000)]
    var = np.var(vals, ddof=1)
    exact = np.exp(2.0) - 1
    assert abs(var - exact) <= 3 * exact * np.sqrt(2 / 3999)


def test_brownian_gp_ratio_bounded():
    out = nz.gp_ratio_study("brownian", Ts=(1.0, 16.0), replicas=100, steps=256)
    assert all(0.1 <= r <= 10 for r in out["ratio"])
