import math

import numpy as np
import pytest

from tpdm_ct.artefact import (
    COUNT_FLOOR, NoiseParams, Spectrum, acquisition_noise, beam_harden, log_normalize, monochromatic,
    poissonize, toy_spectrum,
)
from tpdm_ct.geometry import ProjectionStack, make_geometry
from tpdm_ct.projector import ProjectionSet


@pytest.fixture
def g():
    return make_geometry(n_cols=6, n_rows=5, n_angles=4)


def _set(g, pw, pb, pim):
    mk = lambda a: ProjectionStack(g, np.broadcast_to(a, g.shape).astype(float), "line-integral")
    return ProjectionSet(mk(pw), mk(pb), mk(pim))


def _two_bin(ratios=(1.5, 0.7), intensity=(1.0, 1.0)):
    """Two-bin spectrum whose reference energy sits where the interpolated table equals 1."""
    e = np.array([50.0, 90.0])
    m = np.array(ratios)
    t = math.log(m[0]) / (math.log(m[0]) - math.log(m[1]))
    e0 = math.exp(math.log(e[0]) + t * (math.log(e[1]) - math.log(e[0])))
    return Spectrum(e, intensity, e0, m, m, m)


def test_two_bin_reference_ratios():
    r = _two_bin().ratios()
    for a in r:
        np.testing.assert_allclose(a, [1.5, 0.7], rtol=1e-12)


def test_monochromatic_collapse(g, rng):
    s = monochromatic()
    for _ in range(5):
        ps = _set(g, rng.random(g.shape), rng.random(g.shape), 3 * rng.random(g.shape))
        bh = beam_harden(ps, s, i0=1e6)
        np.testing.assert_allclose(bh.data, 1e6 * np.exp(-ps.total()), rtol=1e-13)
        out = log_normalize(bh, s, i0=1e6)
        assert np.abs(out.data - ps.total()).max() < 1e-9


def test_zero_projections_give_total(g):
    s = toy_spectrum()
    bh = beam_harden(_set(g, 0.0, 0.0, 0.0), s, i0=1e4)
    np.testing.assert_allclose(bh.data, 1e4 * s.total())
    assert np.allclose(log_normalize(bh, s, 1e4).data, 0.0)


def test_two_bin_hand_sum(g):
    s = Spectrum([60.0, 80.0], [2.0, 1.0], 60.0, [1.0, 0.8], [1.0, 0.5], [1.0, 0.4])
    pw, pb, pim = 0.3, 0.2, 1.1
    bh = beam_harden(_set(g, pw, pb, pim), s, i0=10.0)
    # trapezoid widths are 10 keV each
    hand = 10.0 * (2.0 * 10 * math.exp(-(pw + pb + pim)) + 1.0 * 10 * math.exp(-(0.8 * pw + 0.5 * pb + 0.4 * pim)))
    assert bh.data[0, 0, 0] == pytest.approx(hand, rel=1e-13)


def test_monotone_in_each_channel(g):
    s = toy_spectrum()
    base = beam_harden(_set(g, 0.5, 0.5, 0.5), s).data
    for k in range(3):
        vals = [0.5, 0.5, 0.5]
        vals[k] = 0.9
        assert np.all(beam_harden(_set(g, *vals), s).data < base)


def test_cupping_direction(g):
    s = _two_bin(intensity=(1.0, 3.0))
    for p in (0.05, 0.5, 2.0, 6.0):
        ps = _set(g, p, 0.0, 0.0)
        poly = log_normalize(beam_harden(ps, s, 1e8), s, 1e8).data
        assert np.all(poly <= p + 1e-12)


def test_poisson_zero(g):
    out = poissonize(ProjectionStack(g, np.zeros(g.shape), "count"), NoiseParams(r=0.0))
    assert not out.data.any()


def test_poisson_moments():
    g = make_geometry(n_cols=100, n_rows=100, n_angles=10)
    lam = ProjectionStack(g, np.full(g.shape, 40.0), "count")
    out = poissonize(lam, NoiseParams(r=10.0, seed=3)).data
    n = out.size
    assert abs(out.mean() - 50.0) < 3 * math.sqrt(50.0 / n)
    assert out.var() == pytest.approx(50.0, rel=0.05)


def test_poisson_reproducible_and_seeded(g):
    lam = ProjectionStack(g, np.full(g.shape, 30.0), "count")
    a = poissonize(lam, NoiseParams(seed=1)).data
    assert np.array_equal(a, poissonize(lam, NoiseParams(seed=1)).data)
    assert not np.array_equal(a, poissonize(lam, NoiseParams(seed=2)).data)
    with pytest.raises(ValueError):
        poissonize(ProjectionStack(g, -np.ones(g.shape), "line-integral"), NoiseParams())


def test_log_floor(g):
    s = toy_spectrum()
    out = log_normalize(ProjectionStack(g, np.zeros(g.shape), "count"), s, 1e5).data
    assert np.all(np.isfinite(out))
    np.testing.assert_allclose(out, -math.log(COUNT_FLOOR / (1e5 * s.total())))


def test_acquisition_noise_limits(g):
    rng = np.random.default_rng(0)
    p = ProjectionStack(g, rng.random(g.shape), "line-integral")
    out = acquisition_noise(p, NoiseParams(i0=1e12, gaussian_sigma=0.0, seed=4)).data
    assert np.abs(out - p.data).max() < 1e-3
    a = acquisition_noise(p, NoiseParams(seed=5)).data
    assert np.array_equal(a, acquisition_noise(p, NoiseParams(seed=5)).data)
    big = make_geometry(n_cols=64, n_rows=64, n_angles=8)
    z = acquisition_noise(ProjectionStack(big, np.zeros(big.shape), "line-integral"),
                          NoiseParams(i0=1e4, gaussian_sigma=0.0, seed=1)).data
    assert abs(z.mean()) < 0.02


def test_spectrum_validation():
    with pytest.raises(ValueError):
        Spectrum([], [], 70.0, [], [], [])
    with pytest.raises(ValueError):
        Spectrum([60.0, 50.0], [1, 1], 55.0, [1, 1], [1, 1], [1, 1])
    with pytest.raises(ValueError):
        Spectrum([60.0], [0.0], 60.0, [1], [1], [1])
    with pytest.raises(ValueError):
        Spectrum([60.0, 70.0], [1, 1], 90.0, [1, 1], [1, 1], [1, 1])
    with pytest.raises(ValueError):
        NoiseParams(i0=0)


def test_toy_spectrum_shape_and_round_trip(tmp_path):
    s = toy_spectrum()
    assert s.energies.size == 20 and s.energies[0] == 40 and s.energies[-1] == 100
    assert s.total() == pytest.approx(1.0)
    w, b, m = s.ratios()
    # attenuation falls with energy for all three materials
    assert np.all(np.diff(w) < 0) and np.all(np.diff(b) < 0) and np.all(np.diff(m) < 0)
    import json

    (tmp_path / "s.json").write_text(json.dumps(s.to_dict()))
    s2 = Spectrum.from_json(tmp_path / "s.json")
    np.testing.assert_array_equal(s2.intensity, s.intensity)
