import math

import numpy as np
import pytest

from tand.fss import (
    XiCurve,
    extract_xi,
    fit_scaling,
    pairwise_crossings,
    synthetic_scan,
)
from tand.tmm import LyapunovResult


def lam_result(energy, m, lam_m, se, delta=1.0):
    return LyapunovResult(
        energy=energy, M=m, delta=delta, lambda_m=lam_m, stderr=se,
        L_used=0, realization=0, mode="synthetic",
    )


class TestFitScaling:
    def test_recovers_synthetic_truth(self):
        data = synthetic_scan(e_c=0.032, nu=1.6, seed=4, dataset=0)
        model = fit_scaling(data, n_boot=60, seed=11)
        assert model.e_c == pytest.approx(0.032, abs=0.012)
        assert 0.8 <= model.nu <= 2.6
        assert model.reliable

    def test_affine_invariance(self):
        data = synthetic_scan(seed=4, dataset=1)
        a, b = 2.5, 0.7
        shifted = [
            lam_result(a * r.energy + b, r.M, r.lambda_m, r.stderr)
            for r in data
        ]
        m1 = fit_scaling(data, n_boot=0, seed=1)
        m2 = fit_scaling(shifted, n_boot=0, seed=1)
        # structural invariance: identical up to float roundoff in the
        # standardized coordinates, not bit-exact
        assert m2.e_c == pytest.approx(a * m1.e_c + b, rel=1e-6)
        assert m2.nu == pytest.approx(m1.nu, rel=1e-6)
        assert m2.lambda_c == pytest.approx(m1.lambda_c, rel=1e-6)

    def test_preconditions(self):
        data = synthetic_scan(m_values=(8, 12), seed=0)
        with pytest.raises(ValueError, match="3 distinct M"):
            fit_scaling(data)
        data = synthetic_scan(energies=np.linspace(-0.1, 0.1, 4), seed=0)
        with pytest.raises(ValueError, match="5 energies"):
            fit_scaling(data)

    def test_degenerate_all_equal_lambda_flagged(self):
        rng = np.random.default_rng(3)
        data = []
        for m in (8, 12, 16):
            for e in np.linspace(-0.1, 0.15, 11):
                lam = 0.5 + 0.8 * (e - 0.02)
                data.append(lam_result(e, m, m * lam * (1 + 0.01 * rng.standard_normal()), m * lam * 0.02))
        model = fit_scaling(data, n_boot=0)
        assert "degenerate-no-crossing" in model.flags
        assert not model.reliable
        assert math.isnan(model.e_c)

    def test_chi2_gate_flags_incompatible_errors(self):
        # real 5% scatter, claimed 0.5% errors: chi2/dof far beyond 3
        data = synthetic_scan(noise=0.05, seed=9, dataset=2)
        lied = [lam_result(r.energy, r.M, r.lambda_m, r.stderr / 10) for r in data]
        model = fit_scaling(lied, n_boot=0)
        assert model.chi2_dof > 3
        assert "chi2-exceeds-3" in model.flags
        assert not model.reliable

    def test_bootstrap_ci_scales_with_noise(self):
        tight = fit_scaling(synthetic_scan(noise=0.02, seed=5, dataset=3), n_boot=60, seed=2)
        loose = fit_scaling(synthetic_scan(noise=0.08, seed=5, dataset=3), n_boot=60, seed=2)
        w_tight = tight.e_c_ci[1] - tight.e_c_ci[0]
        w_loose = loose.e_c_ci[1] - loose.e_c_ci[0]
        assert w_tight < w_loose

    def test_to_dict_serializable(self):
        import json

        model = fit_scaling(synthetic_scan(seed=4, dataset=4), n_boot=30, seed=3, e_sigma=100.0)
        blob = json.loads(json.dumps(model.to_dict()))
        assert blob["n_boot"] == 30
        assert blob["e_c_over_esigma"] == pytest.approx(model.e_c / 100.0)


class TestCrossings:
    def test_crossings_cluster_near_ec(self):
        data = synthetic_scan(e_c=0.032, noise=0.03, seed=6, dataset=5)
        crossings, skipped = pairwise_crossings(data)
        assert len(crossings) == 3
        for c in crossings:
            assert abs(c["e_cross"] - 0.032) < 0.03

    def test_flat_curves_skipped(self):
        # wiggles below the stated errors must not register as crossings
        rng = np.random.default_rng(8)
        data = [
            lam_result(e, m, m * (0.5 + 0.002 * rng.standard_normal()), m * 0.004)
            for m in (8, 12, 16)
            for e in np.linspace(-0.1, 0.15, 11)
        ]
        crossings, skipped = pairwise_crossings(data)
        assert len(skipped) == 3


class TestExtractXi:
    def make_data(self, lam_inf_by_e, a=2.0, noise=0.01, delta=0.05, seed=13):
        rng = np.random.default_rng(seed)
        out = []
        for e, lam_inf in lam_inf_by_e.items():
            for m in (8, 12, 16):
                lam = lam_inf * (1 + a / m) * (1 + noise * rng.standard_normal())
                out.append(lam_result(e, m, lam, lam * noise, delta=delta))
        return out

    def test_recovers_lambda_inf(self):
        # xi grows approaching the transition from the localized side
        truth = {-10.0: 8.6, -7.5: 9.2, -5.0: 10.0}
        data = self.make_data(truth)
        curve = extract_xi(data, e_c=3.2, sigma=0.1, delta=0.05)
        assert len(curve.points) == 3
        for p in curve.points:
            assert p["lambda_inf"] == pytest.approx(truth[p["E"]], rel=0.12)
            assert p["xi"] == pytest.approx(p["lambda_inf"] * 0.05)
        assert curve.xi_over_sigma(-5.0) == pytest.approx(10.0 * 0.05 / 0.1, rel=0.12)
        assert curve.nu is not None and curve.nu > 0

    def test_needs_three_m(self):
        data = [r for r in self.make_data({-5.0: 8.6}) if r.M != 12]
        curve = extract_xi(data, e_c=3.2, sigma=0.1, delta=0.05)
        assert curve.points == []

    def test_units_required(self):
        data = self.make_data({-5.0: 8.6})
        with pytest.raises(ValueError):
            extract_xi(data, e_c=3.2, sigma=None, delta=0.05)

    def test_missing_point_raises(self):
        curve = XiCurve(points=[], sigma=0.1, e_c=0.0)
        with pytest.raises(KeyError):
            curve.xi_over_sigma(-1.0)


class TestSynthetic:
    def test_deterministic(self):
        a = synthetic_scan(seed=1, dataset=7)
        b = synthetic_scan(seed=1, dataset=7)
        assert all(x.lambda_m == y.lambda_m for x, y in zip(a, b))
        c = synthetic_scan(seed=1, dataset=8)
        assert a[0].lambda_m != c[0].lambda_m

    def test_criterion_shape(self):
        data = synthetic_scan()
        assert len(data) == 33
        assert {r.M for r in data} == {8, 12, 16}
