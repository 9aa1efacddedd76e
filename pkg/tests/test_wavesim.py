import numpy as np
import pytest
from scipy.integrate import quad

from probekit.errors import ConfigError, FormatError
from probekit.wavesim import (
    Acquisition, Medium, ShotData, interior_energy, pml_width, read_shots, record, ricker,
    solve_second_order, write_shots,
)


def test_ricker_has_zero_mean():
    f0, t0 = 7.0, 0.3
    val, _ = quad(lambda t: ricker(t, t0, f0), t0 - 6 / f0, t0 + 6 / f0, limit=200, epsabs=1e-13)
    assert abs(val) < 1e-8
    assert ricker(t0, t0, f0) == pytest.approx(1.0)


def test_ricker_rejects_bad_frequency():
    with pytest.raises(ConfigError):
        ricker(0.0, 0.0, 0.0)


def test_pml_width_fraction():
    assert pml_width(64) == 10
    assert pml_width(48) == 8


def test_medium_validation():
    with pytest.raises(ConfigError):
        Medium.from_speed(-np.ones((16, 16)))
    m = Medium.constant(32, 2.0)
    assert m.c_min == m.c_max == 2.0
    assert m.stable_dt() == pytest.approx(0.5 / (32 * np.pi * 2.0))


def test_acquisition_rejects_unstable_dt_and_outside_sources():
    m = Medium.constant(32)
    with pytest.raises(ConfigError):
        Acquisition.surface(m, dt=2 * m.stable_dt())
    with pytest.raises(ConfigError):
        Acquisition.surface(m, source_x=(1.5,))


def _point_source_movie(n, t_after):
    med = Medium.constant(n)
    acq = Acquisition.surface(med)
    dt, t0 = acq.dt, acq.t0
    nt = int((t0 + t_after) / dt) + 1
    w = ricker(np.arange(nt) * dt, t0, acq.f0)

    def rhs(k):
        f = np.zeros((n, n))
        f[n // 2, n // 2] = w[k] / med.h**2
        return f

    return med, dt, t0, solve_second_order(med, rhs, nt, dt)


def test_wavefront_radius_matches_travel_distance():
    n = 64
    med, dt, t0, movie = _point_source_movie(n, 0.31)
    x = np.arange(n) / n
    R = np.hypot(x[None, :] - 0.5, x[:, None] - 0.5)
    for travel in (0.2, 0.3):
        k = int(round((t0 + travel) / dt))
        r_peak = R.ravel()[np.argmax(np.abs(movie[k]))]
        assert abs(r_peak - (k * dt - t0)) <= 2 * med.h


def test_energy_leaves_through_pml():
    n = 64
    med, dt, t0, movie = _point_source_movie(n, 1.6)
    E = interior_energy(movie, med, dt)
    peak = E.max()
    k = lambda t: int((t0 + t) / dt)  # noqa: E731
    # the front crosses the boundary between 0.5 and 0.75 time units
    assert np.all(np.diff(E[k(0.5):k(0.75)]) <= 0)
    assert E[k(0.8):].max() <= 0.01 * peak


def test_symmetric_receivers_record_identical_traces():
    n = 32
    med = Medium.constant(n)
    acq = Acquisition.surface(med, source_x=(0.5,))
    movie = solve_second_order(
        med, lambda k: _spike(n, acq.source_nodes[0], acq.wavelet[k] / med.h**2), acq.nt, acq.dt
    )
    iz = acq.source_nodes[0][0]
    tr = record(movie, [[iz, 16 - 5], [iz, 16 + 5], [iz, 16]])
    assert np.abs(tr[0] - tr[1]).max() <= 1e-10 * np.abs(tr[0]).max()
    # receiver on the source node sees its own band-limited signal
    assert np.abs(tr[2]).max() > 0


def _spike(n, node, value):
    f = np.zeros((n, n))
    f[node[0], node[1]] = value
    return f


def test_record_rejects_receivers_outside():
    with pytest.raises(ConfigError):
        record(np.zeros((3, 16, 16)), [[0, 16]])


def test_shot_file_round_trip(tmp_path, rng):
    shots = ShotData(rng.standard_normal((5, 3, 7)), 0.01)
    write_shots(tmp_path / "s.pkshot", shots)
    back = read_shots(tmp_path / "s.pkshot")
    assert np.array_equal(back.values, shots.values) and back.dt == shots.dt
    raw = (tmp_path / "s.pkshot").read_bytes()
    (tmp_path / "bad.pkshot").write_bytes(raw[:-8])
    with pytest.raises(FormatError):
        read_shots(tmp_path / "bad.pkshot")
