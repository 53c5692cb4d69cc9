import math

import numpy as np
import pytest

from tand.disorder import (
    DisorderSpec,
    FourierCoeffs,
    _eval_direct_complex,
    coeffs_from_json,
    coeffs_to_json,
    correlation_estimate,
    default_k_cut,
    eval_h,
    eval_h_grid,
    eval_veff,
    extended_field,
    gaussian_envelope,
    gaussianity_test,
    gen_coeffs,
    sawtooth_coeffs,
)

TWO_PI = 2.0 * math.pi

# Exact sum 2*sum_{k=1..70} |c_k|^2 at k0 = 20 (default k_cut = 70), frozen.
VARSUM_K0_20 = 0.971789904850
# Same at k0 = 5 (k_cut = 18), used by the V_eff variance test.
VARSUM_K0_5 = 0.887161931056


def test_envelope_modulus_at_k0():
    # |c_k| at k = k0 for k0 = 10*sqrt(2): e^{-1/2}/(sqrt(k0) pi^{1/4})
    k0 = 10.0 * math.sqrt(2.0)
    expected = math.exp(-0.5) / (math.sqrt(k0) * math.pi**0.25)
    assert gaussian_envelope(k0, k0) == pytest.approx(expected, rel=1e-14)


def test_variance_sum_k0_20():
    spec = DisorderSpec(k0=20.0)
    c = gen_coeffs(spec, 1, 0)
    assert c.variance() == pytest.approx(VARSUM_K0_20, abs=1e-9)
    assert abs(c.variance() - 1.0) < 0.03


def test_default_k_cut():
    assert default_k_cut(20.0) == 70
    assert DisorderSpec(k0=20.0).k_cut == 70
    assert DisorderSpec(k0=20.0, k_cut=31).k_cut == 31


def test_spec_validation():
    with pytest.raises(ValueError):
        DisorderSpec(k0=0.0)
    with pytest.raises(ValueError):
        DisorderSpec(k0=-3.0)
    with pytest.raises(ValueError):
        DisorderSpec(k0=5.0, V0=-1.0)
    with pytest.raises(ValueError):
        DisorderSpec(k0=5.0, dims=2)
    with pytest.raises(ValueError):
        DisorderSpec(k0=5.0, k_cut=0)
    with pytest.raises(ValueError):
        DisorderSpec(k0=5.0, normalization="bogus")


def test_derived_scales():
    spec = DisorderSpec(k0=10.0 * math.sqrt(2.0))
    assert spec.sigma == pytest.approx(0.1, rel=1e-14)
    assert spec.e_sigma == pytest.approx(100.0, rel=1e-14)


def test_gen_coeffs_moduli_exact():
    # Moduli follow the envelope exactly, not statistically.
    spec = DisorderSpec(k0=7.0, master_seed=3)
    c = gen_coeffs(spec, 1, 5)
    k = np.arange(1, spec.k_cut + 1)
    np.testing.assert_allclose(c.moduli(), gaussian_envelope(k, spec.k0), rtol=1e-14)


def test_gen_coeffs_determinism_and_independence():
    spec = DisorderSpec(k0=7.0, master_seed=3)
    a = gen_coeffs(spec, 1, 5)
    b = gen_coeffs(spec, 1, 5)
    assert np.array_equal(a.c_pos, b.c_pos)
    assert not np.array_equal(a.c_pos, gen_coeffs(spec, 2, 5).c_pos)
    assert not np.array_equal(a.c_pos, gen_coeffs(spec, 1, 6).c_pos)
    spec2 = DisorderSpec(k0=7.0, master_seed=4)
    assert not np.array_equal(a.c_pos, gen_coeffs(spec2, 1, 5).c_pos)


def test_gen_coeffs_axis_range():
    spec = DisorderSpec(k0=7.0, dims=1)
    with pytest.raises(ValueError):
        gen_coeffs(spec, 2, 0)
    with pytest.raises(ValueError):
        gen_coeffs(spec, 1, -1)


def test_eval_h_direct_vs_fft():
    # Two independent evaluation paths agree to 1e-12.
    spec = DisorderSpec(k0=10.0 * math.sqrt(2.0), master_seed=1)
    c = gen_coeffs(spec, 1, 0)
    n = 128
    x = TWO_PI * np.arange(n) / n
    hf = eval_h(c, x, method="fft").values
    hd = eval_h(c, x, method="direct").values
    rms = math.sqrt(np.mean(hf**2))
    assert np.max(np.abs(hf - hd)) < 1e-12 * max(rms, 1.0)


def test_eval_h_fft_nyquist_error():
    spec = DisorderSpec(k0=10.0 * math.sqrt(2.0), master_seed=1)  # k_cut = 50
    c = gen_coeffs(spec, 1, 0)
    with pytest.raises(ValueError):
        eval_h_grid(c, 100)  # N = 2*k_cut exactly: too coarse
    x = TWO_PI * np.arange(100) / 100
    with pytest.raises(ValueError):
        eval_h(c, x, method="fft")


def test_eval_h_periodicity():
    spec = DisorderSpec(k0=5.0, master_seed=2)
    c = gen_coeffs(spec, 1, 0)
    x = np.linspace(0.0, 6.0, 37)
    h1 = eval_h(c, x).values
    h2 = eval_h(c, x + TWO_PI).values
    np.testing.assert_allclose(h1, h2, atol=1e-12)


def test_eval_h_even_for_real_coeffs():
    # All phases zero: c_k real and even in k, so h is even in x.
    c = FourierCoeffs(axis=1, realization_index=0,
                      c_pos=gaussian_envelope(np.arange(1, 11), 3.0).astype(complex))
    x = np.linspace(0.1, 3.0, 17)
    hp = eval_h(c, x).values
    hm = eval_h(c, -x).values
    np.testing.assert_allclose(hp, hm, atol=1e-13)


def test_eval_h_imaginary_part_negligible():
    spec = DisorderSpec(k0=8.0, master_seed=9)
    c = gen_coeffs(spec, 1, 0)
    x = np.linspace(0.0, TWO_PI, 200, endpoint=False)
    hc = _eval_direct_complex(c, x)
    rms = math.sqrt(np.mean(hc.real**2))
    assert np.max(np.abs(hc.imag)) < 1e-12 * rms


def test_veff_zero_amplitude():
    spec = DisorderSpec(k0=5.0, V0=0.0, master_seed=1)
    cs = [gen_coeffs(spec, ax, 0) for ax in (1, 2, 3)]
    grids = [np.linspace(0, TWO_PI, 64, endpoint=False)] * 3
    assert np.all(eval_veff(spec, *cs, grids=grids).dense() == 0.0)


def test_veff_separable_product_and_periodicity():
    spec = DisorderSpec(k0=5.0, V0=2.5, master_seed=1)
    cs = [gen_coeffs(spec, ax, 0) for ax in (1, 2, 3)]
    rng = np.random.default_rng(3)
    g = [rng.uniform(0, TWO_PI, 6), rng.uniform(0, TWO_PI, 5), rng.uniform(0, TWO_PI, 7)]
    v = eval_veff(spec, *cs, grids=g)
    dense = v.dense()
    assert dense.shape == (6, 5, 7)
    h = [eval_h(c, gi).values for c, gi in zip(cs, g)]
    manual = 2.5 * h[0][:, None, None] * h[1][None, :, None] * h[2][None, None, :]
    np.testing.assert_allclose(dense, manual, rtol=1e-14)
    v_shift = eval_veff(spec, *cs, grids=[g[0] + TWO_PI, g[1], g[2]])
    np.testing.assert_allclose(v_shift.dense(), dense, atol=1e-12)


def test_veff_ensemble_variance():
    # Var[V_eff] at fixed points = V0^2 * (sum |c_k|^2)^3 over the ensemble.
    spec = DisorderSpec(k0=5.0, V0=2.0, master_seed=13)
    rng = np.random.default_rng(99)
    pts = [rng.uniform(0, TWO_PI, 64) for _ in range(3)]
    per_real = np.empty(400)
    for r in range(400):
        cs = [gen_coeffs(spec, ax, r) for ax in (1, 2, 3)]
        per_real[r] = np.mean(eval_veff(spec, *cs, grids=pts).dense() ** 2)
    mean = per_real.mean()
    err = per_real.std(ddof=1) / math.sqrt(400)
    oracle = spec.V0**2 * VARSUM_K0_5**3
    assert abs(mean - oracle) < 3.0 * err


def test_correlation_matches_gaussian_k0_20():
    spec = DisorderSpec(k0=20.0, master_seed=123)
    sigma = spec.sigma
    lags = np.linspace(0.0, 3.0 * sigma, 20)
    mean, err = correlation_estimate(spec, 500, 1, lags)
    assert np.all(err <= 0.03)
    # C(0) against the exact truncated variance sum.
    assert abs(mean[0] - VARSUM_K0_20) < 3.0 * err[0]
    ratio = mean / mean[0]
    rerr = np.sqrt((err / mean[0]) ** 2 + (mean * err[0] / mean[0] ** 2) ** 2)
    dev = np.abs(ratio - np.exp(-(lags**2) / (2 * sigma**2)))
    assert np.all(dev[1:] <= 3.0 * rerr[1:])


def test_correlation_decorrelates_at_10_sigma():
    spec = DisorderSpec(k0=20.0, master_seed=123)
    mean, err = correlation_estimate(spec, 300, 1, [10.0 * spec.sigma])
    assert abs(mean[0]) < 3.0 * err[0] + 0.03


def test_correlation_stderr_scales_with_r():
    spec = DisorderSpec(k0=8.0, master_seed=5)
    lags = [0.5 * spec.sigma]
    _, e1 = correlation_estimate(spec, 100, 1, lags)
    _, e4 = correlation_estimate(spec, 400, 1, lags)
    assert 1.5 < e1[0] / e4[0] < 2.6


def test_correlation_requires_two_realizations():
    with pytest.raises(ValueError):
        correlation_estimate(DisorderSpec(k0=5.0), 1, 1, [0.0])


def test_gaussianity_k0_20():
    spec = DisorderSpec(k0=20.0, master_seed=7)
    (skew, _), (kurt, _) = gaussianity_test(spec, 400)  # 400*280 > 1e5 samples
    assert abs(skew) < 0.05
    assert abs(kurt) < 0.1


def test_gaussianity_k0_2_fails_gaussian():
    # Few modes: excess kurtosis near -0.70 (sum of a handful of arcsines).
    spec = DisorderSpec(k0=2.0, master_seed=7)
    (_, _), (kurt, kurt_err) = gaussianity_test(spec, 400)
    assert kurt < -0.3
    assert abs(kurt) > 5.0 * kurt_err


def test_gaussianity_sample_floor():
    with pytest.raises(ValueError):
        gaussianity_test(DisorderSpec(k0=5.0), 2)


def test_extended_field_determinism():
    spec = DisorderSpec(k0=10.0, master_seed=11)
    a = extended_field(spec, 1, 40.0, 2048, 0)
    b = extended_field(spec, 1, 40.0, 2048, 0)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, extended_field(spec, 1, 40.0, 2048, 1).values)


def test_extended_field_nyquist():
    spec = DisorderSpec(k0=10.0, master_seed=11)  # k_cut = 35
    with pytest.raises(ValueError):
        extended_field(spec, 1, 40.0, 256, 0)  # 256/40 = 6.4 < 35/pi


def test_extended_field_statistics():
    # Variance -> 1 and correlation at one grid lag near sigma matches the
    # Gaussian law; circular shift is exact for the FFT-built field.
    spec = DisorderSpec(k0=10.0, master_seed=11)
    L, n, R = 40.0, 2048, 100
    dx = L / n
    lag = int(round(spec.sigma / dx))
    var_r = np.empty(R)
    corr_r = np.empty(R)
    for r in range(R):
        f = extended_field(spec, 1, L, n, r).values
        var_r[r] = np.mean(f * f)
        corr_r[r] = np.mean(f * np.roll(f, -lag))
    vmean = var_r.mean()
    verr = var_r.std(ddof=1) / math.sqrt(R)
    assert abs(vmean - 1.0) < 3.0 * verr + 0.01
    cmean = corr_r.mean()
    cerr = corr_r.std(ddof=1) / math.sqrt(R)
    expected = math.exp(-((lag * dx) ** 2) / (2 * spec.sigma**2))
    assert abs(cmean - expected) < 3.0 * cerr


def test_sawtooth_coeffs():
    c = sawtooth_coeffs(3, seed=5)
    np.testing.assert_allclose(np.abs(c.c_pos), 1.0 / math.sqrt(3.0), rtol=1e-14)
    assert c.k_cut == 3  # no harmonics beyond |k| = 3
    h = eval_h(c, np.linspace(0, 7, 100))
    assert np.all(np.isfinite(h.values))
    assert np.array_equal(c.c_pos, sawtooth_coeffs(3, seed=5).c_pos)


def test_json_roundtrip_exact():
    spec = DisorderSpec(k0=6.0, V0=1.5, master_seed=42)
    c = gen_coeffs(spec, 2, 17)
    spec2, c2 = coeffs_from_json(coeffs_to_json(spec, c))
    assert spec2 == spec
    assert c2.axis == c.axis and c2.realization_index == c.realization_index
    assert np.array_equal(c2.c_pos, c.c_pos)
