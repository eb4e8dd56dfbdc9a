import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from scipy.integrate import trapezoid
from hypothesis import strategies as st

from dppvae import autodiff as ad
from dppvae import dpp, linalg, selftest
from dppvae.errors import InvalidParams, NegativeTail

# Top eigenvalues from an independent 3000-node Nystrom discretisation written
# directly from the kernel definition (computed once, frozen here).
NYSTROM_FINE = {
    (1.0, 1.0, 1.0): [0.4130154402581049, 0.11066715367874383, 0.02965317445687038, 0.007945544148737604],
    (1000.0, 1.0, 1.0): [413.01544025810495, 110.66715367874383, 29.65317445687035, 7.945544148737609],
    (1.0, 2.0, 0.5): [0.19947114020072698, 0.09973557010036352, 0.04986778505018179, 0.024933892525090887],
}

# integral of q(x)^2 over R^D by adaptive quadrature (scipy.integrate), frozen:
# D=1 (alpha=3, rho=2) and D=2 (alpha=1.5, rho=(1, 0.5))
Q2_INTEGRAL_1D = 1.1968268412042975
Q2_INTEGRAL_2D = 0.675237237118813

SLOW_DECAY_1D = dpp.KernelParams(1.0, (1.0,), (0.01,))  # ratio ~0.868 per term


def test_params_validation():
    with pytest.raises(InvalidParams):
        dpp.KernelParams(0.0, (1.0,), (1.0,))
    with pytest.raises(InvalidParams):
        dpp.KernelParams(1.0, (1.0, 1.0), (1.0,))
    with pytest.raises(InvalidParams):
        dpp.KernelParams(1.0, (float("inf"),), (1.0,))


def test_quality_at_origin():
    assert dpp.quality([0.0], dpp.KernelParams(1.0, (1.0,), (1.0,))) == pytest.approx(0.5641896, abs=1e-7)
    p = dpp.KernelParams.isotropic(1000.0, 1.0, 1.0, 20)
    assert dpp.quality(np.zeros(20), p) == pytest.approx(math.sqrt(1000.0) * math.pi**-10, rel=1e-12)


def test_quality_maximised_at_origin(rng):
    p = dpp.KernelParams(2.0, (1.0, 3.0), (1.0, 1.0))
    q0 = dpp.quality([0.0, 0.0], p)
    for x in rng.standard_normal((20, 2)):
        assert 0 < dpp.quality(x, p) < q0


def test_quality_squared_integral_1d():
    # The integral of q^2 is alpha * prod (pi rho)^(-1/2), not alpha.
    p = dpp.KernelParams(3.0, (2.0,), (1.0,))
    closed = 3.0 * (2.0 * math.pi) ** -0.5
    assert closed == pytest.approx(Q2_INTEGRAL_1D, rel=1e-8)
    assert dpp.operator_trace(p) == pytest.approx(Q2_INTEGRAL_1D, rel=1e-10)
    x = np.linspace(-20, 20, 4001)
    quad = trapezoid(np.exp([2 * dpp.log_quality([v], p) for v in x]), x)
    assert quad == pytest.approx(Q2_INTEGRAL_1D, rel=1e-2)


def test_quality_squared_integral_2d():
    p = dpp.KernelParams(1.5, (1.0, 0.5), (1.0, 1.0))
    assert dpp.operator_trace(p) == pytest.approx(Q2_INTEGRAL_2D, rel=1e-10)
    g = np.linspace(-8, 8, 321)
    xx, yy = np.meshgrid(g, g)
    vals = np.exp([2 * dpp.log_quality([a, b], p) for a, b in zip(xx.ravel(), yy.ravel())]).reshape(xx.shape)
    quad = trapezoid(trapezoid(vals, g, axis=1), g)
    assert quad == pytest.approx(Q2_INTEGRAL_2D, rel=1e-2)


def test_similarity_values():
    p = dpp.KernelParams(1.0, (1.0,), (1.0,))
    assert dpp.similarity([0.3], [0.3], p) == 1.0
    assert dpp.similarity([0.0], [1.0], p) == pytest.approx(0.6065307, abs=1e-7)


def test_similarity_strictly_decreasing_per_coordinate():
    p = dpp.KernelParams(1.0, (1.0, 1.0), (0.7, 2.0))
    for d in range(2):
        vals = []
        for t in np.linspace(0.0, 4.0, 41):
            y = np.zeros(2)
            y[d] = t
            vals.append(dpp.similarity(np.zeros(2), y, p))
        assert np.all(np.diff(vals) < 0)


@given(st.lists(st.floats(-3, 3), min_size=2, max_size=2), st.lists(st.floats(-3, 3), min_size=2, max_size=2))
def test_similarity_symmetric_and_bounded(x, y):
    p = dpp.KernelParams(1.0, (1.0, 1.0), (0.5, 2.0))
    s = dpp.similarity(x, y, p)
    assert s == dpp.similarity(y, x, p)
    assert 0.0 <= s <= 1.0


def naive_kernel(z, p):
    b = len(z)
    out = np.empty((b, b))
    for i in range(b):
        for j in range(b):
            out[i, j] = dpp.quality(z[i], p) * dpp.similarity(z[i], z[j], p) * dpp.quality(z[j], p)
    return out


def test_kernel_matrix_matches_naive_loop(rng):
    p = dpp.KernelParams(5.0, (1.0, 0.5, 2.0), (1.0, 0.3, 4.0))
    z = rng.standard_normal((6, 3))
    np.testing.assert_allclose(dpp.build_kernel_matrix(z, p).value, naive_kernel(z, p), rtol=1e-12, atol=0)


def test_kernel_matrix_singleton_and_pair():
    p = dpp.KernelParams(2.0, (1.0,), (1.0,))
    z = np.array([[0.4]])
    assert dpp.build_kernel_matrix(z, p).value[0, 0] == pytest.approx(dpp.quality([0.4], p) ** 2, rel=1e-14)
    z2 = np.array([[0.4], [-0.3]])
    lz = dpp.build_kernel_matrix(z2, p).value
    q1, q2 = dpp.quality([0.4], p), dpp.quality([-0.3], p)
    k12 = dpp.similarity([0.4], [-0.3], p)
    assert np.linalg.det(lz) == pytest.approx(q1**2 * q2**2 * (1 - k12**2), rel=1e-10)


def test_kernel_matrix_symmetric_psd(rng):
    p = dpp.KernelParams.isotropic(10.0, 1.0, 1.0, 4)
    lz = dpp.build_kernel_matrix(rng.standard_normal((7, 4)), p).value
    assert np.array_equal(lz, lz.T)
    assert np.min(np.linalg.eigvalsh(lz)) > -1e-12 * np.max(np.abs(lz))


def test_geometric_sequence_in_one_dimension():
    spec = dpp.continuous_spectrum(dpp.KernelParams(1.0, (1.0,), (1.0,)), 20)
    ratios = spec.eigenvalues[1:] / spec.eigenvalues[:-1]
    assert np.ptp(ratios) < 1e-12


@pytest.mark.parametrize("cfg", list(NYSTROM_FINE))
def test_spectrum_matches_nystrom(cfg):
    alpha, rho, sigma = cfg
    p = dpp.KernelParams(alpha, (rho,), (sigma,))
    analytic = dpp.continuous_spectrum(p, 10).eigenvalues
    numeric = dpp.nystrom_eigenvalues(p, 400, 10.0 * sigma)[:10]
    assert np.max(np.abs(analytic - numeric) / numeric) < 1e-2
    np.testing.assert_allclose(analytic[:4], NYSTROM_FINE[cfg], rtol=1e-6)


def test_heap_matches_lattice_enumeration():
    p = dpp.KernelParams(1.0, (1.0, 2.0), (0.8, 0.4))
    m = 30
    heap = dpp.continuous_spectrum(p, m)
    lattice = sorted(
        ((dpp.log_eigenvalue(p, n), n) for n in itertools.product(range(1, 11), repeat=2)),
        key=lambda t: (-t[0], t[1]),
    )[:m]
    np.testing.assert_array_equal(heap.log_eigenvalues, [v for v, _ in lattice])
    assert [tuple(n) for n in heap.multi_indices] == [n for _, n in lattice]


def test_ties_break_lexicographically():
    spec = dpp.continuous_spectrum(dpp.KernelParams.isotropic(1.0, 1.0, 1.0, 2), 3)
    assert [tuple(n) for n in spec.multi_indices] == [(1, 1), (1, 2), (2, 1)]
    assert spec.log_eigenvalues[1] == spec.log_eigenvalues[2]


@given(
    st.floats(0.1, 100.0),
    st.lists(st.tuples(st.floats(0.2, 5.0), st.floats(0.05, 5.0)), min_size=1, max_size=3),
)
def test_spectrum_invariants(alpha, dims):
    p = dpp.KernelParams(alpha, tuple(r for r, _ in dims), tuple(s for _, s in dims))
    spec = dpp.continuous_spectrum(p, 40)
    lam = spec.eigenvalues
    assert np.all(lam > 0)
    assert np.all(np.diff(spec.log_eigenvalues) <= 0)
    assert spec.partial_sum() <= spec.operator_trace * (1 + 1e-12)
    assert spec.partial_sum(10) <= spec.partial_sum(40)


def test_partial_sums_converge_to_trace():
    p = dpp.KernelParams(3.0, (1.0, 2.0), (1.0, 1.0))
    spec = dpp.continuous_spectrum(p, 3000)
    assert spec.tail() / spec.operator_trace < 1e-9


def test_truncation_stops_at_smallest_m():
    p = SLOW_DECAY_1D
    spec = dpp.truncated_spectrum(p, rel_tail=1e-3)
    trace = spec.operator_trace
    assert spec.tail() < 1e-3 * trace
    assert spec.tail(spec.m - 1) >= 1e-3 * trace


def test_truncation_cap_for_paper_config():
    spec = dpp.truncated_spectrum(dpp.KernelParams.isotropic(1000.0, 1.0, 1.0, 20))
    assert spec.m == 10_000
    assert spec.tail() > 0


def test_esp_hand_values():
    t = dpp.esp(np.log([1.0, 2.0, 3.0]), 3)
    np.testing.assert_allclose(t.values, [1.0, 6.0, 11.0, 6.0], rtol=1e-14)


def test_esp_k_zero_and_beyond_m():
    assert dpp.esp(np.log([5.0, 7.0]), 0).log_values.tolist() == [0.0]
    t = dpp.esp(np.log([5.0, 7.0]), 4)
    assert t.log_values[0] == 0.0
    assert t.values[3] == 0.0 and t.values[4] == 0.0


def test_esp_against_subset_enumeration():
    assert selftest.check_esp(n_vectors=100, seed=11).observed < 1e-10


def test_esp_handles_huge_k():
    # e_100 of 10,000 eigenvalues around 1e-3 underflows in linear space
    lam = np.full(10_000, 1e-3)
    t = dpp.esp(np.log(lam), 100)
    expected = math.lgamma(10_001) - math.lgamma(101) - math.lgamma(9_901) + 100 * math.log(1e-3)
    assert t.log_values[100] == pytest.approx(expected, rel=1e-10)


@given(st.integers(1, 7), st.integers(0, 10_000))
def test_esp_determinant_identity(n, seed):
    rng = np.random.default_rng(seed)
    g = rng.standard_normal((n, n))
    a = g.T @ g + 0.5 * np.eye(n)
    lam = linalg.eigh(a).values
    assert dpp.esp(np.log(lam), n).log_values[n] == pytest.approx(linalg.log_det_spd(a), abs=1e-8)


def test_bounds_collapse_when_tail_vanishes():
    p = dpp.KernelParams(1.0, (1.0,), (1.0,))
    spec = dpp.continuous_spectrum(p, 60)
    m = next(m for m in range(1, 61) if spec.tail(m) < 1e-12 * spec.operator_trace)
    b = dpp.normalizer_bounds(spec, 3, m)
    assert b.log_upper - b.log_lower < 1e-6


def test_bounds_k_zero():
    spec = dpp.continuous_spectrum(SLOW_DECAY_1D, 10)
    b = dpp.normalizer_bounds(spec, 0)
    assert b.log_lower == 0.0 and b.log_upper == 0.0


def test_bounds_monotone_and_bracket_high_truncation():
    spec = dpp.continuous_spectrum(SLOW_DECAY_1D, 200)
    ref = float(dpp.esp(spec.log_eigenvalues, 3).log_values[3])
    bounds = [dpp.normalizer_bounds(spec, 3, m) for m in (5, 10, 20, 40)]
    for b in bounds:
        assert b.log_lower <= ref <= b.log_upper
    lows = [b.log_lower for b in bounds]
    ups = [b.log_upper for b in bounds]
    assert lows == sorted(lows)
    assert ups == sorted(ups, reverse=True)


def test_lower_bound_is_minus_inf_below_k():
    spec = dpp.continuous_spectrum(SLOW_DECAY_1D, 10)
    b = dpp.normalizer_bounds(spec, 5, 3)
    assert b.log_lower == -math.inf
    assert math.isfinite(b.log_upper)


def test_negative_tail_detected():
    spec = dpp.continuous_spectrum(SLOW_DECAY_1D, 10)
    broken = dpp.Spectrum(spec.log_eigenvalues, spec.multi_indices, spec.beta, spec.gamma, 0.5 * spec.operator_trace)
    with pytest.raises(NegativeTail):
        dpp.normalizer_bounds(broken, 3)


@given(st.integers(1, 12), st.integers(1, 8))
def test_bounds_ordered(k, m_mult):
    spec = dpp.continuous_spectrum(SLOW_DECAY_1D, 100)
    b = dpp.normalizer_bounds(spec, k, min(100, k * m_mult))
    assert b.log_lower <= b.log_upper


def test_log_normalizer_is_cached():
    p = dpp.KernelParams.isotropic(2.0, 1.0, 1.0, 2)
    dpp.log_normalizer.cache_clear()
    a = dpp.log_normalizer(p, 10)
    b = dpp.log_normalizer(p, 10)
    assert a == b
    assert dpp.log_normalizer.cache_info().hits == 1


def test_prior_singleton():
    p = dpp.KernelParams(3.0, (1.0, 2.0), (1.0, 1.0))
    z = np.array([[0.3, -0.7]])
    val = float(dpp.dpp_log_prior(z, p, 1.25).value)
    assert val == pytest.approx(2 * dpp.log_quality(z[0], p) - 1.25, abs=1e-12)


def test_prior_repulsion_two_points():
    p = dpp.KernelParams.isotropic(10.0, 1.0, 1.0, 2)
    vals = []
    for angle in np.linspace(0.05, math.pi, 20):
        z = np.array([[1.0, 0.0], [math.cos(angle), math.sin(angle)]])
        vals.append(float(dpp.dpp_log_prior(z, p, 0.0).value))
    assert np.all(np.diff(vals) > 0)


def test_prior_gradient_finite_differences(rng):
    p = dpp.KernelParams.isotropic(10.0, 1.0, 1.0, 3)
    z = rng.standard_normal((5, 3))
    assert ad.grad_check(lambda v: dpp.dpp_log_prior(v, p, 0.3), z) < 1e-5


def test_duplicate_point_kills_determinant(rng):
    p = dpp.KernelParams.isotropic(10.0, 1.0, 1.0, 3)
    z = rng.standard_normal((4, 3))
    det0 = np.linalg.det(dpp.build_kernel_matrix(z, p).value)
    z[2] = z[0]
    det1 = np.linalg.det(dpp.build_kernel_matrix(z, p).value)
    assert abs(det1) < 1e-10 * det0


def test_wider_similarity_shrinks_determinant(rng):
    z = rng.standard_normal((5, 2))
    dets = []
    for c in (1.0, 2.0, 4.0):
        p = dpp.KernelParams(1.0, (1.0, 1.0), (0.5 * c, 0.8 * c))
        lz = dpp.build_kernel_matrix(z, p).value
        dets.append(np.linalg.det(lz))
    assert dets[0] >= dets[1] >= dets[2]


def test_sandwich_sweeps_from_selftest():
    for r in selftest.check_sandwich():
        assert r.passed, r.line()


def test_log_prior_matches_direct_log_det():
    rng = np.random.default_rng(21)
    p = dpp.KernelParams.isotropic(1000.0, 1.0, 1.0, 3)
    z = rng.standard_normal((6, 3))
    direct = linalg.log_det_spd(dpp.build_kernel_matrix(z, p).value)
    assert float(dpp.dpp_log_prior(z, p, 0.0).value) == pytest.approx(direct, rel=1e-12)


def test_log_prior_gradient_finite_for_far_latents():
    # qualities spanning ~1e-86 to 1e-2 overflowed the inverse of L_Z directly
    p = dpp.KernelParams.isotropic(1000.0, 1.0, 1.0, 2)
    z = np.array([[0.1, 0.2], [3.0, -1.0], [9.5, 9.0], [-14.0, 0.5], [0.15, 0.2]])
    zp = ad.param(z)
    with ad.Tape():
        out = dpp.dpp_log_prior(zp, p, 0.0)
    ad.backward(out)
    assert np.isfinite(float(out.value))
    assert np.all(np.isfinite(zp.grad))
