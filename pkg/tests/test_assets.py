import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from probekit.assets import (
    blend_speed, disk_filter, generate, layered_reflectivity, marmousi_reflectivity,
    marmousi_smooth, resample,
)
from probekit.errors import ConfigError
from probekit.grid import ModelGrid


def test_bundled_assets_are_reproducible():
    smooth, refl = generate()
    assert np.abs(smooth - marmousi_smooth(128)).max() <= 1e-12
    assert np.abs(refl - marmousi_reflectivity(128)).max() <= 1e-12


def test_resampled_model_is_a_grid():
    g = ModelGrid(resample(marmousi_smooth(128), 127))
    assert g.n == 127
    assert resample(marmousi_smooth(128), 64).shape == (64, 64)


def test_normalizations():
    assert marmousi_smooth(64).mean() == pytest.approx(1.0)
    assert np.sqrt(np.mean(marmousi_reflectivity(64) ** 2)) == pytest.approx(1.0)
    assert np.sqrt(np.mean(layered_reflectivity(32) ** 2)) == pytest.approx(1.0)
    assert marmousi_smooth(64).min() > 0


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 0.4))
def test_blend_mean_is_gamma_invariant(gamma):
    base = marmousi_smooth(32)
    assert blend_speed(gamma, 32).mean() == pytest.approx(base.mean(), abs=1e-10)


def test_blend_endpoints():
    assert np.all(blend_speed(0.0, 32) == pytest.approx(1.0))
    c4 = blend_speed(0.4, 32)
    assert c4.std() > 0.1 and c4.min() > 0


def test_blend_rejects_gamma_out_of_range():
    with pytest.raises(ConfigError):
        blend_speed(0.5, 32)


def test_disk_filter_keeps_dc_and_low_modes():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((32, 32))
    assert disk_filter(a, 0.0).mean() == pytest.approx(a.mean(), abs=1e-14)
    assert np.allclose(disk_filter(a, 100.0), a, atol=1e-12)
