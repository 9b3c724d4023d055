import numpy as np
import pytest
from scipy import stats

from dfm_upscale.frac_geom import (DEFAULT_CONSTANTS, PhysicalConstants,
                                   PowerLawSpec, calibrate_alpha,
                                   excluded_area, expected_count,
                                   fracture_conductivity, generate_dfn,
                                   load_network, sample_power_law,
                                   save_network)
from dfm_upscale.geometry import Rect


def power_law_cdf(spec, r):
    p = 1.0 - spec.alpha
    return (r ** p - spec.r_min ** p) / (spec.r_max ** p - spec.r_min ** p)


class TestSamplePowerLaw:
    def test_endpoints(self):
        spec = PowerLawSpec(2.5, 4.325, 100.0)
        assert sample_power_law(spec, 0.0) == pytest.approx(spec.r_min)
        assert sample_power_law(spec, 1.0) == pytest.approx(spec.r_max)

    def test_monotone_in_u(self):
        spec = PowerLawSpec(2.5, 1.0, 50.0)
        u = np.linspace(0.0, 1.0, 101)
        r = sample_power_law(spec, u)
        assert np.all(np.diff(r) > 0)
        assert np.all((r >= spec.r_min) & (r <= spec.r_max))

    def test_median_against_bisection_oracle(self):
        spec = PowerLawSpec(2.0, 1.0, 100.0)
        # independent oracle: invert the CDF by bisection
        lo, hi = spec.r_min, spec.r_max
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if power_law_cdf(spec, mid) < 0.5:
                lo = mid
            else:
                hi = mid
        assert sample_power_law(spec, 0.5) == pytest.approx(lo, rel=1e-9)
        assert sample_power_law(spec, 0.5) == pytest.approx(1.98020, rel=1e-4)

    def test_alpha_one_rejected(self):
        with pytest.raises(ValueError):
            PowerLawSpec(1.0, 1.0, 10.0)

    def test_u_out_of_range(self):
        spec = PowerLawSpec(2.5, 1.0, 10.0)
        with pytest.raises(ValueError):
            sample_power_law(spec, 1.5)


class TestExpectedCount:
    def test_monodisperse_definition(self):
        # nearly-degenerate length distribution approximates fixed length l
        length = 3.0
        spec = PowerLawSpec(2.5, length, length * (1.0 + 1e-9))
        area = (2.0 / np.pi) * length ** 2
        assert expected_count(spec, 1.0, area) == pytest.approx(1.0, rel=1e-6)

    def test_linearity_in_density(self):
        spec = PowerLawSpec(2.5, 4.325, 100.0)
        one = expected_count(spec, 5.0, 200.0)
        assert expected_count(spec, 10.0, 200.0) == pytest.approx(2 * one)

    def test_calibrated_count_near_1500(self):
        area = 114.28 ** 2
        alpha = calibrate_alpha(1500.0, 10.0, area, 4.325, 100.0)
        spec = PowerLawSpec(alpha, 4.325, 100.0)
        assert expected_count(spec, 10.0, area) == pytest.approx(1500.0,
                                                                 rel=1e-6)
        # the calibration lands at a plausible exponent
        assert 1.5 < alpha < 3.5

    def test_invalid_inputs(self):
        spec = PowerLawSpec(2.5, 1.0, 10.0)
        with pytest.raises(ValueError):
            expected_count(spec, -1.0, 10.0)


class TestMoments:
    def test_mean_against_quadrature(self):
        from scipy.integrate import quad
        spec = PowerLawSpec(2.5, 4.325, 100.0)
        pdf = lambda r: spec.norm_const * r ** (-spec.alpha)
        mean, _ = quad(lambda r: r * pdf(r), spec.r_min, spec.r_max)
        assert spec.mean_length == pytest.approx(mean, rel=1e-9)

    def test_log_case(self):
        # k + 1 - alpha = 0 hits the logarithmic branch
        spec = PowerLawSpec(2.0, 1.0, 10.0)
        from scipy.integrate import quad
        pdf = lambda r: spec.norm_const * r ** (-spec.alpha)
        mean, _ = quad(lambda r: r * pdf(r), spec.r_min, spec.r_max)
        assert spec.moment(1) == pytest.approx(mean, rel=1e-9)

    def test_excluded_area_formula(self):
        spec = PowerLawSpec(2.5, 4.325, 100.0)
        assert excluded_area(spec) == pytest.approx(
            (2.0 / np.pi) * spec.mean_length ** 2)


class TestFractureConductivity:
    def test_aperture_relation(self):
        delta, _ = fracture_conductivity(100.0, 1e-4)
        assert delta == pytest.approx(0.01)

    def test_cubic_law_value(self):
        _, k_f = fracture_conductivity(100.0, 1e-4, DEFAULT_CONSTANTS)
        assert k_f == pytest.approx(81.75)

    def test_quadratic_scaling(self):
        _, k1 = fracture_conductivity(10.0, 1e-4)
        _, k2 = fracture_conductivity(20.0, 1e-4)
        assert k2 == pytest.approx(4.0 * k1)

    def test_invalid(self):
        with pytest.raises(ValueError):
            fracture_conductivity(-1.0, 1e-4)
        with pytest.raises(ValueError):
            fracture_conductivity(1.0, 0.0)


class TestGenerateDfn:
    domain = Rect(0.0, 0.0, 50.0, 50.0)
    spec = PowerLawSpec(2.5, 2.0, 40.0)

    def test_determinism(self):
        a = generate_dfn(self.spec, 5.0, self.domain, 1e-4, seed=42)
        b = generate_dfn(self.spec, 5.0, self.domain, 1e-4, seed=42)
        assert len(a) == len(b)
        for fa, fb in zip(a.fractures, b.fractures):
            assert fa == fb  # bit-identical

    def test_seed_changes_network(self):
        a = generate_dfn(self.spec, 5.0, self.domain, 1e-4, seed=1)
        b = generate_dfn(self.spec, 5.0, self.domain, 1e-4, seed=2)
        assert [f.length for f in a.fractures] != [f.length
                                                   for f in b.fractures]

    def test_centers_inside_angles_in_range(self):
        net = generate_dfn(self.spec, 5.0, self.domain, 1e-4, seed=3)
        for fr in net.fractures:
            assert self.domain.contains(*fr.center)
            assert 0.0 <= fr.angle < np.pi
            assert self.spec.r_min <= fr.length <= self.spec.r_max
            assert fr.aperture == pytest.approx(1e-4 * fr.length)
            d, k = fracture_conductivity(fr.length, 1e-4)
            assert fr.conductivity == pytest.approx(k)

    def test_vanishing_density(self):
        net = generate_dfn(self.spec, 1e-9, self.domain, 1e-4, seed=3)
        assert len(net) == 0

    def test_empirical_mean_length(self):
        spec = PowerLawSpec(2.5, 4.325, 100.0)
        rng = np.random.default_rng(7)
        lengths = sample_power_law(spec, rng.uniform(size=10 ** 4))
        assert np.mean(lengths) == pytest.approx(spec.mean_length, rel=0.02)

    def test_length_distribution_ks(self):
        spec = PowerLawSpec(2.5, 4.325, 100.0)
        rng = np.random.default_rng(11)
        lengths = sample_power_law(spec, rng.uniform(size=10 ** 5))
        ks = stats.kstest(lengths, lambda r: power_law_cdf(spec, r))
        assert ks.statistic < 0.01

    def test_angle_uniformity_chi2(self):
        nets = [generate_dfn(self.spec, 30.0, self.domain, 1e-4, seed=s)
                for s in range(60)]
        angles = np.concatenate([[f.angle for f in n.fractures]
                                 for n in nets])
        assert len(angles) > 10 ** 4
        counts, _ = np.histogram(angles, bins=20, range=(0.0, np.pi))
        chi2 = ((counts - counts.mean()) ** 2 / counts.mean()).sum()
        # 1% significance, 19 dof
        assert chi2 < stats.chi2.ppf(0.99, 19)

    def test_poisson_dispersion(self):
        # variance/mean of sub-rectangle counts near 1 for a Poisson process
        domain = Rect(0.0, 0.0, 10.0, 10.0)
        spec = PowerLawSpec(2.5, 0.5, 5.0)
        counts = []
        for s in range(500):
            net = generate_dfn(spec, 2.0, domain, 1e-4, seed=s)
            grid = np.zeros((10, 10))
            for fr in net.fractures:
                i = min(int(fr.center[0]), 9)
                j = min(int(fr.center[1]), 9)
                grid[i, j] += 1
            counts.append(grid.ravel())
        counts = np.concatenate(counts)
        assert 0.8 < counts.var() / counts.mean() < 1.2


class TestSerialization:
    def test_round_trip(self, tmp_path):
        net = generate_dfn(PowerLawSpec(2.5, 2.0, 30.0), 5.0,
                           Rect(0, 0, 40, 40), 1e-4,
                           PhysicalConstants(), seed=9)
        path = tmp_path / "net.csv"
        save_network(net, path)
        back = load_network(path)
        assert len(back) == len(net)
        assert back.domain == net.domain
        assert back.density == net.density
        assert back.seed == net.seed
        assert back.spec == net.spec
        for fa, fb in zip(net.fractures, back.fractures):
            assert fa == fb
