import json
import warnings

import numpy as np
import pytest

from tpdm_ct.geometry import primary_slices, secondary_slices
from tpdm_ct.sampler import (
    DegenerateScheduleWarning, Measurement, SamplerConfig, branch_schedule, corrector_step, dps_gradient,
    dps_sample_2d, predictor_step, tpdm_sample,
)
from tpdm_ct.score import (
    EmpiricalScoreProvider, GaussianScoreProvider, NoiseSchedule, SliceIndexedEmpiricalProvider, tweedie_at,
)


def test_config_validation_and_json(tmp_path):
    for bad in ({"T": 0}, {"K": 0}, {"lam": -1}, {"snr": 0}, {"n_corrector": -1}, {"gradient_mode": "adjoint"}):
        with pytest.raises(ValueError):
            SamplerConfig(**bad)
    cfg = SamplerConfig(T=7, K=3, lam=0.25, seed=9, gradient_mode="exact-jvp")
    cfg.to_json(tmp_path / "s.json")
    assert SamplerConfig.from_json(tmp_path / "s.json") == cfg
    assert SamplerConfig.from_dict({"lambda": 0.3}).lam == 0.3
    with pytest.raises(ValueError):
        SamplerConfig.from_dict({"steps": 3})
    assert json.loads((tmp_path / "s.json").read_text())["K"] == 3


def test_branch_schedule_example():
    assert branch_schedule(4, 2) == [(3, "primary"), (2, "secondary"), (1, "primary"), (0, "secondary")]
    assert all(b == "secondary" for _, b in branch_schedule(5, 1))
    assert [b for _, b in branch_schedule(3, 7)] == ["primary", "primary", "secondary"]


def test_predictor_trivial():
    s = NoiseSchedule(T=10)
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(predictor_step(x, np.zeros_like(x), 5, s, z=np.zeros_like(x)), x)
    # the terminal step adds no noise and needs no generator
    np.testing.assert_array_equal(predictor_step(x, np.ones_like(x), 0, s), x + s.sigma_at(0) ** 2)
    for bad in (-1, 11):
        with pytest.raises(ValueError):
            predictor_step(x, x, bad, s, z=x)


def test_predictor_seeded():
    s = NoiseSchedule(T=10)
    x = np.zeros((3, 3))
    a = predictor_step(x, x, 4, s, rng=np.random.default_rng(2))
    b = predictor_step(x, x, 4, s, rng=np.random.default_rng(2))
    assert np.array_equal(a, b) and a.any()


@pytest.mark.parametrize("noisy", [False, True])
def test_predictor_variance_bookkeeping(noisy):
    sched = NoiseSchedule(T=20)
    i = 12
    si, sj = sched.sigma_at(i), sched.sigma_at(i - 1)
    prov = GaussianScoreProvider(np.zeros((100, 100)), 1e-12)
    rng = np.random.default_rng(7)
    x = si * rng.standard_normal((100, 100))
    z = rng.standard_normal((100, 100)) if noisy else np.zeros((100, 100))
    out = predictor_step(x, prov.score_at(x, si), i, sched, z=z)
    # x' = x * sj^2 / si^2 + sqrt(si^2 - sj^2) z
    expect = np.sqrt(sj**4 / si**2 + (si**2 - sj**2 if noisy else 0.0))
    assert out.std() == pytest.approx(expect, rel=0.03)


def test_corrector_skip_and_small_snr():
    prov = GaussianScoreProvider(np.full((3, 3), 0.5), 0.1)
    x = np.full((3, 3), 0.5)
    z = np.ones((3, 3))
    np.testing.assert_array_equal(corrector_step(x, prov, 0.3, 0.16, z=z), x)
    x2 = x + np.linspace(-1, 1, 9).reshape(3, 3)
    out = corrector_step(x2, prov, 0.3, 1e-8, z=z)
    assert np.abs(out - x2).max() < 1e-6
    with pytest.raises(ValueError):
        corrector_step(x, prov, 0.3, 0.0, z=z)


def test_corrector_keeps_gaussian_stationary():
    sched = NoiseSchedule(T=10)
    t = 0.3
    sigma = sched.sigma(t)
    mu, var = 0.4, 0.2
    prov = GaussianScoreProvider(np.full((100, 100), mu), var, sched)
    rng = np.random.default_rng(11)
    target = var + sigma**2
    x = mu + np.sqrt(target) * rng.standard_normal((100, 100))
    for _ in range(200):
        x = corrector_step(x, prov, t, 0.16, rng=rng)
    assert x.var() == pytest.approx(target, rel=0.10)
    assert abs(x.mean() - mu) < 0.05


def test_dps_gradient_trivial_cases(rng):
    data = rng.random((3, 4, 4))
    prov = EmpiricalScoreProvider(data, NoiseSchedule(T=10))
    x = rng.random((4, 4))
    t = 0.4
    xh = tweedie_at(x, prov.schedule.sigma(t), prov.evaluate(x, t))
    mask = (rng.random((4, 4)) < 0.3).astype(float)
    y = (1 - mask) * xh
    assert np.abs(dps_gradient(x, y, mask, prov, t)).max() < 1e-12
    assert not dps_gradient(x, rng.random((4, 4)), np.ones((4, 4)), prov, t).any()
    with pytest.raises(ValueError):
        dps_gradient(x, y[:3], mask, prov, t)


def test_dps_gradient_identity_is_residual(rng):
    prov = GaussianScoreProvider(np.zeros((4, 4)), 1.0, NoiseSchedule(T=10))
    x, y = rng.random((2, 4, 4))
    mask = np.zeros((4, 4))
    sigma = prov.schedule.sigma(0.5)
    xh = x - sigma**2 * x / (1 + sigma**2)
    np.testing.assert_allclose(dps_gradient(x, y, mask, prov, 0.5), 2 * (xh - y))


def test_exact_jvp_matches_finite_differences(rng):
    data = rng.random((2, 4, 4))
    sched = NoiseSchedule(T=10)
    prov = EmpiricalScoreProvider(data, sched)
    mask = np.zeros((4, 4))
    mask[1:3, 1:3] = 1
    y = (1 - mask) * rng.random((4, 4))
    for t in (0.35, 0.6):
        sigma = sched.sigma(t)
        x = data.mean(0) + 0.3 * sigma * rng.standard_normal((4, 4))

        def loss(z):
            xh = tweedie_at(z, sigma, prov.score_at(z, sigma))
            return np.sum(((1 - mask) * xh - y) ** 2)

        fd = np.zeros((4, 4))
        h = 1e-6
        for idx in np.ndindex(4, 4):
            e = np.zeros((4, 4))
            e[idx] = h
            fd[idx] = (loss(x + e) - loss(x - e)) / (2 * h)
        g = dps_gradient(x, y, mask, prov, t, "exact-jvp")
        assert np.abs(g - fd).max() < 1e-4


class _NoJvp(GaussianScoreProvider):
    has_jvp = False


def test_exact_jvp_needs_capability():
    prov = _NoJvp(np.zeros((2, 2)), 1.0)
    with pytest.raises(ValueError):
        dps_gradient(np.zeros((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), prov, 0.5, "exact-jvp")


def test_measurement_validation():
    with pytest.raises(ValueError):
        Measurement(np.zeros((2, 2, 2)), np.zeros((2, 2, 3)))
    with pytest.raises(ValueError):
        Measurement(np.zeros((2, 2, 2)), np.full((2, 2, 2), 0.5))


def _toy(rng, shape=(6, 5, 4)):
    vol = rng.random(shape)
    mask = (rng.random(shape) < 0.3).astype(float)
    return vol, Measurement(vol * (1 - mask), mask)


def test_degenerate_k_warns(rng):
    vol, meas = _toy(rng)
    sched = NoiseSchedule(T=3)
    p = EmpiricalScoreProvider(primary_slices(vol), sched)
    s = EmpiricalScoreProvider(secondary_slices(vol), sched)
    with pytest.warns(DegenerateScheduleWarning):
        tpdm_sample(meas, p, s, SamplerConfig(T=3, K=1))
    with pytest.warns(DegenerateScheduleWarning):
        tpdm_sample(meas, p, s, SamplerConfig(T=3, K=4))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        tpdm_sample(meas, p, s, SamplerConfig(T=3, K=2))


def test_provider_shape_mismatch(rng):
    vol, meas = _toy(rng)
    p = EmpiricalScoreProvider(rng.random((3, 5, 5)))
    s = EmpiricalScoreProvider(secondary_slices(vol))
    with pytest.raises(ValueError):
        tpdm_sample(meas, p, s, SamplerConfig(T=2))
    with pytest.raises(ValueError):
        dps_sample_2d(meas, p, SamplerConfig(T=2))


def test_samplers_bit_identical_on_repeat(rng):
    vol, meas = _toy(rng)
    cfg = SamplerConfig(T=10, seed=5)
    p = EmpiricalScoreProvider(primary_slices(vol), cfg.schedule())
    s = EmpiricalScoreProvider(secondary_slices(vol), cfg.schedule())
    a = tpdm_sample(meas, p, s, cfg)
    assert a.tobytes() == tpdm_sample(meas, p, s, cfg).tobytes()
    b = dps_sample_2d(meas, p, cfg)
    assert b.tobytes() == dps_sample_2d(meas, p, cfg).tobytes()
    assert not np.array_equal(b, dps_sample_2d(meas, p, SamplerConfig(T=10, seed=6)))


def test_slice_streams_independent_of_batch(rng):
    """A slice's trajectory does not depend on which other slices share the sweep."""
    vol, meas = _toy(rng, (6, 5, 4))
    cfg = SamplerConfig(T=15, seed=2)
    prov = GaussianScoreProvider(np.full((6, 5), 0.5), 0.1, cfg.schedule())
    full = dps_sample_2d(meas, prov, cfg)
    part = dps_sample_2d(Measurement(meas.y[:, :, :2], meas.mask[:, :, :2]), prov, cfg)
    assert full[:, :, :2].tobytes() == part.tobytes()


def test_dump_snapshots(rng):
    vol, meas = _toy(rng)
    cfg = SamplerConfig(T=6)
    p = EmpiricalScoreProvider(primary_slices(vol), cfg.schedule())
    seen = {}
    out = dps_sample_2d(meas, p, cfg, dump=lambda i, x: seen.setdefault(i, x), dump_every=2)
    assert sorted(seen) == [0, 2, 4]
    np.testing.assert_array_equal(seen[0], out)


def test_unmasked_fidelity_with_full_projection_strength(rng):
    data = rng.random((20, 12, 12))
    y = np.stack([data[3] + 0.05 * rng.standard_normal((12, 12)) for _ in range(3)], -1)
    meas = Measurement(y, np.zeros(y.shape))
    cfg = SamplerConfig(T=100, lam=0.5)
    out = dps_sample_2d(meas, EmpiricalScoreProvider(data, cfg.schedule()), cfg)
    assert np.sqrt(np.mean((out - y) ** 2)) < 0.02


def test_conditioning_pulls_toward_data(rng):
    """Unmasked pixels end closer to y than an unconditioned prior draw."""
    data = rng.random((30, 8, 8))
    target = data[7]
    y = np.repeat(target[:, :, None], 3, axis=2)
    mask = np.zeros(y.shape)
    mask[2:5, 2:5, :] = 1
    meas = Measurement(y * (1 - mask), mask)
    cfg = SamplerConfig(T=60, lam=0.5, seed=1)
    prov = EmpiricalScoreProvider(data, cfg.schedule())
    cond = dps_sample_2d(meas, prov, cfg)
    free = dps_sample_2d(meas, prov, SamplerConfig(T=60, lam=0.0, seed=1))
    keep = mask == 0
    assert np.sqrt(np.mean((cond - y)[keep] ** 2)) < np.sqrt(np.mean((free - y)[keep] ** 2))


def test_tpdm_and_dps_share_fixed_point(rng):
    vol = rng.random((7, 6, 5))
    cfg = SamplerConfig(T=40, K=2, lam=0.0, seed=3)
    sched = cfg.schedule()
    p = SliceIndexedEmpiricalProvider(primary_slices(vol)[:, None], sched)
    s = SliceIndexedEmpiricalProvider(secondary_slices(vol)[:, None], sched)
    meas = Measurement(np.zeros(vol.shape), np.ones(vol.shape))
    a = tpdm_sample(meas, p, s, cfg)
    b = dps_sample_2d(meas, p, cfg)
    assert np.abs(a - b).max() < 4 * cfg.sigma_min
