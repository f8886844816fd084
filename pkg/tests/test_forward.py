import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import special

from dimect import forward as fw
from dimect.errors import DomainError, InputError
from dimect.forward import DEFAULT_PROBE, PlateSpec, mutual_impedance_delta

W1650 = 2 * math.pi * 1650


class TestSkinDepth:
    def test_one_kilohertz_35_ms(self):
        assert fw.skin_depth(2 * math.pi * 1000, 35e6) == pytest.approx(2.690209546e-3, rel=1e-9)

    def test_1650_hz_18_ms(self):
        assert fw.skin_depth(W1650, 18e6) == pytest.approx(2.92e-3, abs=5e-6)

    def test_quadrupling_sigma_halves_depth(self):
        assert fw.skin_depth(1e4, 4e7) == pytest.approx(fw.skin_depth(1e4, 1e7) / 2, rel=1e-15)

    @pytest.mark.parametrize("omega, sigma", [(0, 1e6), (1e3, -1), (-1, 1e6)])
    def test_domain(self, omega, sigma):
        with pytest.raises(DomainError):
            fw.skin_depth(omega, sigma)

    def test_reluctance_is_reciprocal(self):
        assert fw.VACUUM.nu0 * fw.VACUUM.mu0 == pytest.approx(1.0, rel=1e-16)


def _mp_radial(a, b):
    return mpmath.quad(lambda x: x * mpmath.besselj(1, x), [a, b])


class TestRadialIntegral:
    def test_zero_to_one_against_mpmath(self):
        # 0.1545327235317936878647...
        assert fw.coil_radial_integral(0.0, 1.0) == pytest.approx(0.154532723531793687864703667978, rel=1e-13)

    def test_empty_interval(self):
        assert fw.coil_radial_integral(2.5, 2.5) == 0.0

    @pytest.mark.parametrize("a, b", [(0.0, 0.3), (1.9, 2.1), (0.5, 7.0), (30.0, 30.4), (3.0, 140.0), (400.0, 400.5)])
    def test_against_mpmath(self, a, b):
        expected = float(_mp_radial(a, b))
        assert fw.coil_radial_integral(a, b) == pytest.approx(expected, rel=1e-10, abs=1e-14)

    @given(st.floats(0, 60), st.floats(0, 30), st.floats(0, 30))
    def test_additive(self, a, d1, d2):
        b, c = a + d1, a + d1 + d2
        whole = fw.coil_radial_integral(a, c)
        parts = fw.coil_radial_integral(a, b) + fw.coil_radial_integral(b, c)
        assert whole == pytest.approx(parts, rel=1e-10, abs=1e-11)

    def test_reversed_interval(self):
        with pytest.raises(InputError):
            fw.coil_radial_integral(2.0, 1.0)


class TestReflection:
    kappa = np.geomspace(1e-2, 3e3, 50)

    def test_no_conductor_no_reflection(self):
        assert np.all(fw.reflection_coefficient(self.kappa, 0.0, 1e-3) == 0)

    def test_infinite_thickness_is_half_space(self):
        beta = np.array([1e3, 1e6, 1e9])
        np.testing.assert_allclose(
            fw.reflection_coefficient(self.kappa, beta, np.inf),
            fw.halfspace_reflection_coefficient(self.kappa, beta), rtol=1e-11,
        )

    def test_thick_plate_tends_to_half_space(self):
        beta = 2e5
        delta = math.sqrt(2 / beta)
        g = fw.reflection_coefficient(self.kappa, beta, 20 * delta)
        h = fw.halfspace_reflection_coefficient(self.kappa, beta)
        np.testing.assert_allclose(g, h, rtol=1e-12)

    @given(st.floats(1e-3, 1e4), st.floats(1, 1e9), st.floats(1e-6, 1e-1))
    def test_passive(self, kappa, beta, dh):
        g = fw.reflection_coefficient([kappa], beta, dh)[0, 0]
        assert abs(g) <= 1 + 1e-12
        assert g.real <= 1e-15


class TestMutualImpedance:
    def test_frozen_value(self):
        dz = mutual_impedance_delta(DEFAULT_PROBE, PlateSpec(18e6, 2e-3), W1650)
        assert dz == pytest.approx(0.01439573388700698 - 0.04834722519548585j, rel=1e-8)

    def test_vanishing_conductivity(self):
        dz = mutual_impedance_delta(DEFAULT_PROBE, omega=W1650, sigma=1e-6, dh=2e-3)
        assert abs(dz) < 1e-12

    def test_thick_plate_matches_half_space(self):
        sigma = 35e6
        dh = 10 * fw.skin_depth(W1650, sigma)
        thick = mutual_impedance_delta(DEFAULT_PROBE, omega=W1650, sigma=sigma, dh=dh)
        half = mutual_impedance_delta(DEFAULT_PROBE, omega=W1650, sigma=sigma, dh=np.inf)
        assert abs(thick - half) / abs(half) < 1e-6

    def test_batch_equals_scalar(self):
        sig = np.array([18e6, 35e6])
        batch = mutual_impedance_delta(DEFAULT_PROBE, omega=W1650, sigma=sig, dh=2e-3)
        for s, b in zip(sig, batch):
            scalar = mutual_impedance_delta(DEFAULT_PROBE, omega=W1650, sigma=s, dh=2e-3)
            assert b == pytest.approx(scalar, rel=1e-9)

    def test_reciprocity(self):
        pair = fw._CoilPair.from_probe(DEFAULT_PROBE)
        a = fw._impedance(pair, 18e6, 2e-3, W1650, 1e-10)
        b = fw._impedance(pair.swapped(), 18e6, 2e-3, W1650, 1e-10)
        assert complex(a) == pytest.approx(complex(b), rel=1e-9)

    def test_needs_inputs(self):
        with pytest.raises(InputError):
            mutual_impedance_delta(DEFAULT_PROBE, omega=W1650)

    def test_probe_validation(self):
        with pytest.raises(DomainError):
            fw.ProbeGeometry(2e-3, 1e-3, 1e-3, 1e-3, 1e-3, 1, 1, 1e-3)
        with pytest.raises(DomainError):
            fw.ProbeGeometry(1e-3, 2e-3, 1e-3, 1e-3, 1e-3, 1, 1, 1e-3, theta=0.1)


def _image_mutual_inductance(probe, n=10):
    """Mutual inductance between the receiver and the mirror image of the
    driver below a perfect conductor, from Maxwell's elliptic-integral
    formula averaged over both coil cross-sections."""
    x, w = np.polynomial.legendre.leggauss(n)

    def nodes(lo, hi):
        return 0.5 * (hi - lo) * x + 0.5 * (hi + lo), 0.5 * w

    r, wr = nodes(probe.r1, probe.r2)
    z1, wz1 = nodes(*probe.receiver_span)
    z2, wz2 = nodes(*probe.driver_span)
    a, b, za, zb = np.meshgrid(r, r, z1, z2, indexing="ij")
    weights = np.einsum("i,j,k,l->ijkl", wr, wr, wz1, wz2)
    m = 4 * a * b / ((a + b) ** 2 + (za + zb) ** 2)
    k = np.sqrt(m)
    filament = fw.MU0 * np.sqrt(a * b) * ((2 / k - k) * special.ellipk(m) - 2 / k * special.ellipe(m))
    return probe.N1 * probe.N2 * float(np.sum(weights * filament))


def test_perfect_conductor_limit_matches_image_coil():
    m_image = _image_mutual_inductance(DEFAULT_PROBE)
    errs = []
    for sigma in (1e12, 1e14):
        dz = mutual_impedance_delta(DEFAULT_PROBE, omega=W1650, sigma=sigma, dh=2e-3)
        errs.append(abs(dz / (1j * W1650) + m_image) / m_image)
    assert errs[1] < 5e-4
    # the residual is the finite-skin-depth correction, shrinking like sigma^-1/2
    assert 5 < errs[0] / errs[1] < 20


class TestPiConversions:
    def test_zero(self):
        assert fw.to_pi1(0j, W1650, DEFAULT_PROBE) == 0

    @given(st.complex_numbers(max_magnitude=1e3, allow_nan=False), st.floats(1, 1e6))
    def test_linear_and_invertible(self, dz, omega):
        p = fw.to_pi1(dz, omega, DEFAULT_PROBE)
        assert fw.to_pi1(2 * dz, omega, DEFAULT_PROBE) == pytest.approx(2 * p, rel=1e-15, abs=1e-300)
        assert fw.from_pi1(p, omega, DEFAULT_PROBE) == pytest.approx(dz, rel=1e-14, abs=1e-300)

    def test_reference_point(self):
        w = 2 * math.pi * 1000
        assert fw.pi2_of(w, 35e6, 23.95e-3) == pytest.approx(8.902652223253330, rel=1e-12)
        assert fw.sigma_from_pi2(fw.pi2_of(w, 35e6, 23.95e-3), w, 23.95e-3) == pytest.approx(35e6, rel=1e-14)
        assert fw.omega_for_pi2(8.902652223253330, 35e6, 23.95e-3) == pytest.approx(w, rel=1e-12)


@settings(max_examples=15, deadline=None)
@given(st.floats(3, 25), st.floats(0.005, 0.4), st.floats(5e6, 6e7), st.floats(0.3, 3))
def test_collapse_under_rescaling(pi2, pi3, sigma, scale):
    probe = DEFAULT_PROBE.scaled(scale)
    ref = fw.pi1_at(DEFAULT_PROBE, pi2, pi3)
    other = fw.pi1_at(probe, pi2, pi3, sigma_ref=sigma)
    assert abs(other - ref) / abs(ref) < 1e-6


def test_thin_plate_correction_is_first_order_in_pi3():
    """At fixed sigma*dh the response differs at O(pi3): halving pi3 roughly
    halves the change produced by trading a factor 4 between the two."""
    changes = []
    for pi3 in (0.01, 0.005, 0.0025):
        dh = pi3 * DEFAULT_PROBE.D
        sigma = 35e6
        omega = fw.omega_for_pi2(0.05 / pi3, sigma, DEFAULT_PROBE.D)
        a = mutual_impedance_delta(DEFAULT_PROBE, omega=omega, sigma=sigma, dh=dh)
        b = mutual_impedance_delta(DEFAULT_PROBE, omega=omega, sigma=4 * sigma, dh=dh / 4)
        changes.append(abs(a - b) / abs(a))
    r1, r2 = changes[0] / changes[1], changes[1] / changes[2]
    assert 1.6 < r1 < 2.4 and 1.6 < r2 < 2.4


@pytest.fixture(scope="module")
def small():
    return fw.compute_f_grid(DEFAULT_PROBE, n2=9, n3=7)


class TestGrid:
    def test_signs_and_tag(self, small):
        assert np.all(small.values.real > 0) and np.all(small.values.imag < 0)
        assert small.probe_tag == DEFAULT_PROBE.tag == DEFAULT_PROBE.scaled(2.0).tag

    def test_bytes_round_trip(self, small):
        blob = small.to_bytes()
        back = fw.FGrid.from_bytes(blob)
        assert back.to_bytes() == blob
        assert np.array_equal(back.values, small.values)

    def test_file_round_trip(self, small, tmp_path):
        small.save(tmp_path / "g.grid")
        assert fw.FGrid.load(tmp_path / "g.grid").to_bytes() == small.to_bytes()
        assert [p.name for p in tmp_path.iterdir()] == ["g.grid"]

    def test_corrupt_files(self, small):
        blob = small.to_bytes()
        with pytest.raises(InputError):
            fw.FGrid.from_bytes(b"XXXX" + blob[4:])
        with pytest.raises(InputError):
            fw.FGrid.from_bytes(blob[:-8])

    def test_csv(self, small):
        lines = small.to_csv().splitlines()
        assert lines[0] == "pi2,pi3,re_f,im_f"
        assert len(lines) == 1 + 9 * 7
        assert float(lines[1].split(",")[0]) == small.pi2_axis[0]

    def test_thread_count_does_not_matter(self, small):
        threaded = fw.compute_f_grid(DEFAULT_PROBE, n2=9, n3=7, threads=4)
        assert threaded.to_bytes() == small.to_bytes()

    def test_reference_conductivity_is_immaterial(self, small):
        other = fw.compute_f_grid(DEFAULT_PROBE, n2=9, n3=7, sigma_ref=17.66e6)
        assert np.max(np.abs(other.values - small.values) / np.abs(small.values)) < 1e-6

    def test_monotone_frequency_response(self, small):
        assert fw.monotone_frequency_response(small)

    def test_values_are_read_only(self, small):
        with pytest.raises(ValueError):
            small.values[0, 0] = 0

    def test_validation(self):
        with pytest.raises(InputError):
            fw.FGrid([1, 2], [1, 1], np.ones((2, 2)), "x")
        with pytest.raises(InputError):
            fw.FGrid([1, 2], [1, 2], np.ones((2, 3)), "x")
        with pytest.raises(DomainError):
            fw.compute_f_grid(DEFAULT_PROBE, pi2_range=(0, 1))
        with pytest.raises(InputError):
            fw.compute_f_grid(DEFAULT_PROBE, spacing="cubic")

    def test_linear_spacing(self):
        g = fw.compute_f_grid(DEFAULT_PROBE, n2=3, n3=3, spacing="linear")
        np.testing.assert_allclose(np.diff(g.pi2_axis), np.diff(g.pi2_axis)[0])
