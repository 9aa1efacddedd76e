import time

import numpy as np
import pytest
from scipy.signal import hilbert

from probekit.born import (
    LinearizedProblem, born_forward, born_forward_values, dense_hessian, eps_rank, hessian_apply,
    migrate,
)
from probekit.errors import ConfigError
from probekit.wavesim import Acquisition, Medium


@pytest.fixture(scope="module")
def centered48():
    med = Medium.constant(48)
    return LinearizedProblem(med, Acquisition.surface(med, source_x=(0.5,)), cache_dir=None)


@pytest.mark.parametrize("z0", [0.3, 0.5])
def test_scatterer_two_way_time_and_focus(centered48, z0):
    prob = centered48
    n, acq = prob.n, prob.acq
    dm = np.zeros((n, n))
    iz = int(z0 * n)
    dm[iz, n // 2] = 1.0
    d = born_forward(prob, dm)
    trace = d.values[n // 2, 0]
    t_peak = np.argmax(np.abs(hilbert(trace))) * acq.dt
    t_expected = 2 * (iz / n - acq.sources[0, 1]) + acq.t0
    assert abs(t_peak - t_expected) <= 3 * acq.dt
    image = migrate(prob, d)
    peak = np.unravel_index(np.argmax(np.abs(image)), image.shape)
    assert abs(peak[0] - iz) <= 1 and abs(peak[1] - n // 2) <= 1


def test_adjoint_identity_n48():
    med = Medium.constant(48)
    prob = LinearizedProblem(med, Acquisition.surface(med), cache_dir=None)
    rng = np.random.default_rng(7)
    t = time.perf_counter()
    dm = rng.standard_normal((20, 48, 48))
    d = rng.standard_normal((20, prob.acq.nr, prob.acq.ns, prob.nt))
    Fdm = born_forward_values(prob, dm)
    Ftd = migrate(prob, d)
    lhs = np.einsum("bijk,bijk->b", Fdm, d)
    rhs = np.einsum("bij,bij->b", dm, Ftd)
    scale = np.linalg.norm(Fdm.reshape(20, -1), axis=1) * np.linalg.norm(d.reshape(20, -1), axis=1)
    assert np.max(np.abs(lhs - rhs) / scale) <= 1e-10
    assert time.perf_counter() - t < 120


def test_hessian_symmetric_and_psd(problem24):
    rng = np.random.default_rng(3)
    v = rng.standard_normal((2, 24, 24))
    Hv = hessian_apply(problem24, v)
    a, b = np.vdot(Hv[0], v[1]), np.vdot(v[0], Hv[1])
    assert abs(a - b) <= 1e-9 * np.linalg.norm(Hv[0]) * np.linalg.norm(v[1])
    for i in range(2):
        assert np.vdot(Hv[i], v[i]) >= -1e-12 * np.linalg.norm(Hv[i]) * np.linalg.norm(v[i])


def test_dense_hessian_methods_agree_n16():
    med = Medium.constant(16)
    prob = LinearizedProblem(med, Acquisition.surface(med), cache_dir=None)
    H_cols = dense_hessian(prob, method="columns")
    H_green = dense_hessian(prob, method="green")
    scale = np.linalg.norm(H_cols)
    assert np.linalg.norm(H_cols - H_cols.T) <= 1e-9 * scale
    assert np.max(np.abs(H_cols - H_green)) <= 1e-12 * np.max(np.abs(H_cols))


def test_dense_hessian_size_guard(problem24):
    med = Medium.constant(64)
    prob = LinearizedProblem(med, Acquisition.surface(med), cache_dir=None)
    with pytest.raises(ConfigError):
        dense_hessian(prob)
    with pytest.raises(ConfigError):
        dense_hessian(problem24, method="nope")


def test_eps_rank_strict_threshold():
    H = np.diag([4.0, 2.0, 1.0, 0.0])
    assert eps_rank(H, [1.0, 0.5, 0.25, 0.1]) == [(1.0, 0), (0.5, 1), (0.25, 2), (0.1, 3)]


def test_incident_field_cache(tmp_path):
    med = Medium.constant(16)
    acq = Acquisition.surface(med)
    a = LinearizedProblem(med, acq, cache_dir=str(tmp_path)).d2u0
    assert list(tmp_path.iterdir())
    b = LinearizedProblem(med, acq, cache_dir=str(tmp_path)).d2u0
    assert np.array_equal(a, b)
