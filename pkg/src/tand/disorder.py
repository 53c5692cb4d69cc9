"""Correlated Fourier disorder: generation, evaluation, statistics.

The disordered potentials are real random Fourier series on the circle,

    h(x) = sum_{0 < |k| <= k_cut} c_k exp(i k x),   c_{-k} = conj(c_k),

with Gaussian-envelope moduli |c_k| = exp(-k^2 / (2 k0^2)) / (sqrt(k0) pi^(1/4))
and independent uniform phases. For large k0 the field is Gaussian with unit
variance and correlation exp(-x^2 / (2 sigma^2)), sigma = sqrt(2)/k0. The 3D
effective potential is the separable product V0 * h1 * h2 * h3.

A second generator produces the same statistics on an arbitrarily long
segment (dense wavenumber grid instead of integer harmonics); it feeds the
transfer-matrix bars, where tiling the 2*pi-periodic field would produce a
Bloch-periodic, non-localizing potential.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .rng import STREAM_COEFFS, STREAM_CORRBASE, STREAM_EXTENDED, substream

TWO_PI = 2.0 * np.pi


def default_k_cut(k0):
    """Truncation ceil(3.5*k0): envelope below e^-6, variance loss < 1e-5."""
    return int(math.ceil(3.5 * k0))


def gaussian_envelope(k, k0):
    """Coefficient modulus exp(-k^2/(2 k0^2)) / (sqrt(k0) pi^(1/4))."""
    k = np.asarray(k, dtype=float)
    return np.exp(-(k**2) / (2.0 * k0**2)) / (math.sqrt(k0) * math.pi**0.25)


@dataclass(frozen=True)
class DisorderSpec:
    """Parameters of the disorder ensemble.

    k0 sets the envelope width; the correlation length is sigma = sqrt(2)/k0
    and the natural energy scale is E_sigma = k0^2/2 = 1/sigma^2. V0 is the
    potential amplitude. `normalization` selects the h-field variance
    convention: 'unit-variance-h' (default) keeps Var[h] = 1 so that
    V_eff = V0*h1*h2*h3 has variance V0^2; 'paper-literal' scales each h by
    V0 (correlation-function convention C(0) = V0^2), intended for
    sensitivity studies of the h fields themselves.
    """

    k0: float
    V0: float = 0.0
    dims: int = 3
    k_cut: int = None
    master_seed: int = 0
    normalization: str = "unit-variance-h"

    def __post_init__(self):
        if self.k0 <= 0:
            raise ValueError(f"k0 must be positive, got {self.k0}")
        if self.V0 < 0:
            raise ValueError(f"V0 must be >= 0, got {self.V0}")
        if self.dims not in (1, 3):
            raise ValueError(f"dims must be 1 or 3, got {self.dims}")
        if self.k_cut is None:
            object.__setattr__(self, "k_cut", default_k_cut(self.k0))
        if self.k_cut < 1:
            raise ValueError(f"k_cut must be >= 1, got {self.k_cut}")
        if self.normalization not in ("unit-variance-h", "paper-literal"):
            raise ValueError(f"unknown normalization {self.normalization!r}")

    @property
    def sigma(self):
        """Correlation length sqrt(2)/k0."""
        return math.sqrt(2.0) / self.k0

    @property
    def e_sigma(self):
        """Correlation energy 1/sigma^2 = k0^2/2."""
        return 0.5 * self.k0**2

    @property
    def h_scale(self):
        return self.V0 if self.normalization == "paper-literal" else 1.0

    def to_dict(self):
        return {
            "k0": self.k0,
            "V0": self.V0,
            "dims": self.dims,
            "k_cut": self.k_cut,
            "master_seed": self.master_seed,
            "normalization": self.normalization,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class FourierCoeffs:
    """One realization of the coefficients c_k = g_k f_{-k} for k > 0.

    Only the k > 0 half is stored; c_{-k} = conj(c_k) and c_0 = 0 are
    implied (the field is real and the k = 0 harmonics vanish).
    """

    axis: int
    realization_index: int
    c_pos: np.ndarray  # complex, c_pos[j] = c_{j+1}

    @property
    def k_cut(self):
        return len(self.c_pos)

    def moduli(self):
        return np.abs(self.c_pos)

    def variance(self):
        """Exact field variance sum_{k != 0} |c_k|^2."""
        return 2.0 * float(np.sum(np.abs(self.c_pos) ** 2))

    def spectrum(self, n):
        """Length-n FFT coefficient array (c_k at index k, conj at n-k)."""
        if n <= 2 * self.k_cut:
            raise ValueError(
                f"grid of {n} points cannot represent harmonics up to {self.k_cut}"
            )
        s = np.zeros(n, dtype=complex)
        s[1 : self.k_cut + 1] = self.c_pos
        s[n - self.k_cut :] = np.conj(self.c_pos[::-1])
        return s


@dataclass
class SampledField:
    """Real field values on a set of points along one axis."""

    values: np.ndarray
    x: np.ndarray
    axis: int
    period: float = None  # None for extended (non-periodic) segments
    length: float = None  # segment length for extended fields


def gen_coeffs(spec, axis, realization):
    """Draw one coefficient realization for the given axis.

    Moduli follow the Gaussian envelope exactly (not statistically); phases
    are i.i.d. uniform on [0, 2*pi), keyed by (master_seed, axis,
    realization) so results are independent of scheduling.
    """
    if not 1 <= axis <= spec.dims:
        raise ValueError(f"axis {axis} out of range for dims={spec.dims}")
    if realization < 0:
        raise ValueError(f"realization must be >= 0, got {realization}")
    rng = substream(spec.master_seed, STREAM_COEFFS, axis, realization)
    k = np.arange(1, spec.k_cut + 1)
    phases = rng.uniform(0.0, TWO_PI, size=spec.k_cut)
    c = spec.h_scale * gaussian_envelope(k, spec.k0) * np.exp(1j * phases)
    return FourierCoeffs(axis=axis, realization_index=realization, c_pos=c)


def sawtooth_coeffs(k0=3, seed=0, axis=1, realization=0):
    """Flat-modulus coefficients |c_k| = 1/sqrt(k0) for 1 <= k <= k0.

    The three-harmonic default is the experimentally accessible drive: a
    sawtooth reproduced by its first k0 spatial harmonics, modulated in time
    by k0 harmonics with random phases.
    """
    k0 = int(k0)
    if k0 < 1:
        raise ValueError(f"k0 must be a positive integer, got {k0}")
    rng = substream(seed, STREAM_COEFFS, axis, realization)
    phases = rng.uniform(0.0, TWO_PI, size=k0)
    c = np.exp(1j * phases) / math.sqrt(k0)
    return FourierCoeffs(axis=axis, realization_index=realization, c_pos=c)


def _is_full_period_grid(x):
    """True if x is exactly the uniform grid j*2*pi/N, j = 0..N-1."""
    n = len(x)
    if n < 2:
        return False
    ref = TWO_PI * np.arange(n) / n
    return x.shape == ref.shape and np.array_equal(x, ref)


def _eval_direct_complex(coeffs, x):
    k = np.arange(1, coeffs.k_cut + 1)
    # h = 2 Re sum_{k>0} c_k e^{ikx}; written as the full two-sided sum so
    # tests can probe the residual imaginary part.
    phase = np.exp(1j * np.outer(x, k))
    return phase @ coeffs.c_pos + np.conj(phase) @ np.conj(coeffs.c_pos)


def eval_h(coeffs, x, method="auto"):
    """Evaluate the field at points x (radians).

    On the exact uniform grid 2*pi*j/N with N > 2*k_cut an FFT is used;
    any other point set goes through the direct sum, which is exact
    everywhere. Requesting the FFT path with N <= 2*k_cut is a sampling
    error and raises.
    """
    x = np.asarray(x, dtype=float)
    if method == "auto":
        method = "fft" if _is_full_period_grid(x) else "direct"
    if method == "fft":
        if not _is_full_period_grid(x):
            raise ValueError("fft path requires the uniform grid 2*pi*j/N")
        n = len(x)
        values = np.fft.ifft(coeffs.spectrum(n)).real * n
    elif method == "direct":
        h = _eval_direct_complex(coeffs, x)
        values = h.real
    else:
        raise ValueError(f"unknown method {method!r}")
    return SampledField(values=values, x=x, axis=coeffs.axis, period=TWO_PI)


def eval_h_grid(coeffs, n):
    """Field on the length-n uniform grid over [0, 2*pi) via FFT."""
    x = TWO_PI * np.arange(n) / n
    return eval_h(coeffs, x, method="fft")


class SeparableField:
    """Factorized effective potential V0 * h1(x1) * h2(x2) * h3(x3).

    Stores the three 1D factor fields; the dense 3D array is assembled on
    demand only.
    """

    def __init__(self, amplitude, factors):
        self.amplitude = amplitude
        self.factors = list(factors)

    def dense(self):
        f1, f2, f3 = (f.values for f in self.factors)
        return self.amplitude * (
            f1[:, None, None] * f2[None, :, None] * f3[None, None, :]
        )

    @property
    def shape(self):
        return tuple(len(f.values) for f in self.factors)


def eval_veff(spec, coeffs1, coeffs2, coeffs3, grids):
    """Separable 3D effective potential on per-axis point sets.

    `grids` is a sequence of three 1D point arrays (radians). The result
    keeps the three factors; call .dense() for the full array.
    """
    if spec.dims != 3:
        raise ValueError("eval_veff requires dims=3")
    fields = [
        eval_h(c, np.asarray(g, dtype=float))
        for c, g in zip((coeffs1, coeffs2, coeffs3), grids)
    ]
    return SeparableField(amplitude=spec.V0, factors=fields)


def correlation_estimate(spec, n_realizations, axis, lags, base_points=8, grid_n=None):
    """Monte-Carlo two-point correlation C(x) = <h(x') h(x'+x)>.

    Averages over `n_realizations` disorder draws and `base_points` random
    base positions per draw; returns (mean, stderr) arrays over the lags.
    Base positions are subsampled rather than integrated over the full
    period: the full-period average is phase-independent (Parseval), which
    would make the standard error collapse to zero and hide the truncation
    bias of the discrete spectrum.
    """
    if n_realizations < 2:
        raise ValueError("need at least 2 realizations for a standard error")
    lags = np.asarray(lags, dtype=float)
    per_real = np.empty((n_realizations, len(lags)))
    for r in range(n_realizations):
        coeffs = gen_coeffs(spec, axis, r)
        rng = substream(spec.master_seed, STREAM_CORRBASE, axis, r)
        x0 = rng.uniform(0.0, TWO_PI, size=base_points)
        h0 = _eval_direct_complex(coeffs, x0).real
        for j, lag in enumerate(lags):
            h1 = _eval_direct_complex(coeffs, x0 + lag).real
            per_real[r, j] = np.mean(h0 * h1)
    mean = per_real.mean(axis=0)
    stderr = per_real.std(axis=0, ddof=1) / math.sqrt(n_realizations)
    return mean, stderr


def gaussianity_test(spec, n_realizations, grid_n=None):
    """Sample skewness and excess kurtosis of h with jackknife errors.

    Pools grid samples from all realizations; errors come from
    delete-one-realization jackknife, which respects the within-realization
    correlations.
    """
    n = grid_n or max(256, 4 * spec.k_cut)
    if n_realizations * n < 10**4:
        raise ValueError("need at least 1e4 samples (n_realizations * grid_n)")
    # Accumulate raw power sums per realization so jackknife deletes cleanly.
    sums = np.zeros((n_realizations, 4))
    for r in range(n_realizations):
        h = eval_h_grid(gen_coeffs(spec, 1, r), n).values
        sums[r] = [np.sum(h), np.sum(h**2), np.sum(h**3), np.sum(h**4)]

    def moments(s, count):
        m1 = s[0] / count
        m2 = s[1] / count - m1**2
        m3 = s[2] / count - 3 * m1 * s[1] / count + 2 * m1**3
        m4 = s[3] / count - 4 * m1 * s[2] / count + 6 * m1**2 * s[1] / count - 3 * m1**4
        return m3 / m2**1.5, m4 / m2**2 - 3.0

    total = sums.sum(axis=0)
    skew, kurt = moments(total, n_realizations * n)
    jack = np.array(
        [moments(total - sums[r], (n_realizations - 1) * n) for r in range(n_realizations)]
    )
    fac = math.sqrt((n_realizations - 1) / n_realizations)
    skew_err = fac * math.sqrt(np.sum((jack[:, 0] - jack[:, 0].mean()) ** 2))
    kurt_err = fac * math.sqrt(np.sum((jack[:, 1] - jack[:, 1].mean()) ** 2))
    return (skew, skew_err), (kurt, kurt_err)


def extended_field(spec, axis, length, n, realization):
    """Stationary Gaussian field on [0, length) with the periodic field's
    correlation exp(-x^2/(2 sigma^2)) and unit variance.

    Built from the dense wavenumber grid dk = 2*pi/length with independent
    complex Gaussian amplitudes under the same envelope; deterministic per
    (master_seed, axis, realization). Band-limited at k_cut, so the grid
    must resolve it: n/length > k_cut/pi.
    """
    if n / length <= spec.k_cut / math.pi:
        raise ValueError(
            f"Nyquist violation: n/length = {n/length:.3g} <= k_cut/pi = "
            f"{spec.k_cut/math.pi:.3g}"
        )
    dk = TWO_PI / length
    m_max = int(math.floor(spec.k_cut / dk))
    rng = substream(spec.master_seed, STREAM_EXTENDED, axis, realization)
    # Spectral density S(k) = exp(-k^2/k0^2)/(k0 sqrt(pi)); mode variance S*dk.
    k = dk * np.arange(1, m_max + 1)
    s = np.exp(-(k**2) / spec.k0**2) / (spec.k0 * math.sqrt(math.pi))
    amp = np.sqrt(s * dk / 2.0)
    zr = rng.standard_normal(m_max)
    zi = rng.standard_normal(m_max)
    c_pos = spec.h_scale * amp * (zr + 1j * zi)
    c0 = spec.h_scale * math.sqrt(dk / (spec.k0 * math.sqrt(math.pi))) * rng.standard_normal()
    spec_arr = np.zeros(n, dtype=complex)
    spec_arr[0] = c0
    spec_arr[1 : m_max + 1] = c_pos
    spec_arr[n - m_max :] = np.conj(c_pos[::-1])
    values = np.fft.ifft(spec_arr).real * n
    x = length * np.arange(n) / n
    return SampledField(values=values, x=x, axis=axis, period=None, length=length)


def coeffs_to_json(spec, coeffs):
    """Serialize one realization to a JSON string (exact round trip)."""
    record = {
        "spec": spec.to_dict(),
        "axis": coeffs.axis,
        "realization": coeffs.realization_index,
        "coeffs": [
            [int(k + 1), float(c.real), float(c.imag)]
            for k, c in enumerate(coeffs.c_pos)
        ],
    }
    return json.dumps(record)


def coeffs_from_json(text):
    """Inverse of coeffs_to_json; returns (spec, coeffs)."""
    record = json.loads(text)
    spec = DisorderSpec.from_dict(record["spec"])
    ks = [entry[0] for entry in record["coeffs"]]
    if ks != list(range(1, len(ks) + 1)):
        raise ValueError("coefficient list must cover k = 1..k_cut in order")
    c = np.array([complex(re, im) for _, re, im in record["coeffs"]])
    coeffs = FourierCoeffs(
        axis=record["axis"], realization_index=record["realization"], c_pos=c
    )
    return spec, coeffs
