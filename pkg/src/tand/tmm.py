"""Transfer-matrix Lyapunov exponents on bar-shaped grids.

A bar is L slices of an M x M cross-section (M = 1 is a plain 1D chain).
The stationary Schrodinger equation on the 3-point stencil couples
neighboring slices through -t, giving the two-term recursion

    psi_{n+1} = ((E I - H_slice,n)/t) psi_n - psi_{n-1},

iterated on a full 2M^2-column frame that starts from the identity
(deterministic, no random initial data needed). QR re-orthonormalization
every qr_period slices keeps the columns independent; the accumulated
log |diag R| give all 2M^2 Lyapunov exponents. The smallest positive one,
channel M^2 - 1 after descending ordering, is 1/lambda_M with lambda_M in
lattice-spacing units.

Error bars come from the variance of per-block mean log increments, with
blocks long enough (hundreds of slices) to decorrelate. The run can stop
early once stderr/gamma reaches a requested tolerance; the disorder for
the whole maximal bar is generated up front so the stopping point does not
change the potential (bit-reproducibility).

The longitudinal disorder uses the extended (non-periodic) generator:
tiling the 2*pi-periodic field down the bar would make the potential
Bloch-periodic and nothing would localize. In `factorized` mode the
transverse profile is one periodic realization per transverse axis
(an M-point window of the circle); `isotropic-grf` replaces the separable
product with a 3D band-limited Gaussian field of the same correlation
length, since the paper-style extension of the product form off the torus
is not unique. With periodic transverse boundaries and M = 2 the two
wrap bonds double (multigraph convention of the roll-based stencil); the
Green's-function oracle uses the identical convention.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .disorder import eval_h, extended_field, gen_coeffs
from .rng import STREAM_GRF3D, substream

TWO_PI = 2.0 * np.pi

# Maximum site count for the dense isotropic-grf potential array (memory cap).
_GRF_SITE_CAP = 60_000_000


@dataclass(frozen=True)
class BarGeometry:
    """Bar of L slices, M x M cross-section, lattice spacing delta."""

    M: int
    L: int
    delta: float
    transverse_boundary: str = "periodic"

    def __post_init__(self):
        if self.M < 1:
            raise ValueError(f"M must be >= 1, got {self.M}")
        if self.L < 10 * self.M:
            raise ValueError(f"need L >> M, got L={self.L}, M={self.M}")
        if self.delta <= 0:
            raise ValueError(f"delta must be positive, got {self.delta}")
        if self.transverse_boundary not in ("periodic", "open"):
            raise ValueError(f"unknown boundary {self.transverse_boundary!r}")


@dataclass
class LyapunovResult:
    energy: float
    M: int
    delta: float
    lambda_m: float  # lattice-spacing units
    stderr: float  # stderr of lambda_m
    L_used: int
    realization: int
    mode: str
    Lambda: float = None  # lambda_m / M
    gamma: float = None
    gamma_stderr: float = None
    gamma_all: np.ndarray = None  # all 2 M^2 exponents, descending
    converged: bool = True
    flags: list = field(default_factory=list)

    def __post_init__(self):
        if self.Lambda is None:
            self.Lambda = self.lambda_m / self.M
        if self.gamma is None:
            self.gamma = 1.0 / self.lambda_m


@dataclass
class TmmScan:
    """Raw per-realization results of a (E, M) grid scan."""

    spec: object
    delta: float
    mode: str
    runs: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def aggregated(self):
        """One result per (E, M): logs pooled over realizations.

        For >= 3 realizations the stderr is the larger of the pooled block
        stderr and the between-realization scatter. The frozen transverse
        profile of a factorized bar shifts gamma coherently over the whole
        run, so block errors alone understate the ensemble uncertainty.
        """
        groups = {}
        for r in self.runs:
            groups.setdefault((r.M, r.energy), []).append(r)
        out = []
        for (m, e), rs in sorted(groups.items()):
            wtot = sum(r.L_used for r in rs)
            gamma = sum(r.gamma * r.L_used for r in rs) / wtot
            var = sum((r.L_used / wtot) ** 2 * r.gamma_stderr**2 for r in rs)
            gse = math.sqrt(var)
            if len(rs) >= 3:
                gams = np.array([r.gamma for r in rs])
                scatter = float(np.std(gams, ddof=1)) / math.sqrt(len(rs))
                gse = max(gse, scatter)
            lam = 1.0 / gamma
            out.append(
                LyapunovResult(
                    energy=e, M=m, delta=self.delta, lambda_m=lam,
                    stderr=gse / gamma**2, L_used=wtot, realization=len(rs),
                    mode=self.mode, gamma=gamma, gamma_stderr=gse,
                    converged=all(r.converged for r in rs),
                )
            )
        return out


class BarPotential:
    """Slice-by-slice onsite disorder for one realization of a bar.

    The whole longitudinal field is generated eagerly for n_slices slices,
    so callers that stop early still see the identical potential.
    """

    def __init__(self, spec, geometry, n_slices, mode="factorized", realization=0):
        self.spec = spec
        self.geometry = geometry
        self.n_slices = n_slices
        self.mode = mode
        self.realization = realization
        m, d = geometry.M, geometry.delta
        if mode == "factorized":
            hx = extended_field(spec, 1, n_slices * d, n_slices, realization).values
            if m == 1:
                if spec.dims == 3:
                    # a line through the 3D product field: constant transverse factors
                    wy = eval_h(gen_coeffs(spec, 2, realization), np.array([0.0])).values[0]
                    wz = eval_h(gen_coeffs(spec, 3, realization), np.array([0.0])).values[0]
                    trans = wy * wz
                else:
                    trans = 1.0
                self._v = (spec.V0 * trans * hx)[:, None, None] * np.ones((1, 1))
            else:
                if spec.dims != 3:
                    raise ValueError("M > 1 bars require dims = 3")
                window = d * np.arange(m)
                hy = eval_h(gen_coeffs(spec, 2, realization), window).values
                hz = eval_h(gen_coeffs(spec, 3, realization), window).values
                self._v = spec.V0 * hx[:, None, None] * np.outer(hy, hz)[None, :, :]
        elif mode == "isotropic-grf":
            self._v = spec.V0 * _grf3d(spec, geometry, n_slices, realization)
        else:
            raise ValueError(f"unknown potential mode {mode!r}")

    def slice(self, n):
        return self._v[n]


def _grf3d(spec, geometry, n_slices, realization):
    """Band-limited periodic Gaussian field, correlation exp(-r^2/(2 sigma^2)),
    unit variance, on the (n_slices, M, M) box."""
    m, d = geometry.M, geometry.delta
    if n_slices * m * m > _GRF_SITE_CAP:
        raise ValueError("isotropic-grf bar too large; lower L or use factorized mode")
    rng = substream(spec.master_seed, STREAM_GRF3D, geometry.M, realization)
    w = rng.standard_normal((n_slices, m, m))
    wk = np.fft.rfftn(w)
    kx = TWO_PI * np.fft.fftfreq(n_slices, d=d)
    ky = TWO_PI * np.fft.fftfreq(m, d=d)
    kz = TWO_PI * np.fft.rfftfreq(m, d=d)
    k2 = (
        kx[:, None, None] ** 2 + ky[None, :, None] ** 2 + kz[None, None, :] ** 2
    )
    sig = spec.sigma
    # S(k) = (2 pi)^{3/2} sigma^3 exp(-sigma^2 k^2 / 2); amplitude sqrt(S)/delta^{3/2}
    s = (TWO_PI**1.5) * sig**3 * np.exp(-0.5 * sig**2 * k2)
    s[k2 > spec.k_cut**2] = 0.0
    wk *= np.sqrt(s) / d**1.5
    return np.fft.irfftn(wk, s=(n_slices, m, m), axes=(0, 1, 2))


def _apply_transverse_hops(top, out, boundary):
    """out += sum of nearest-neighbor shifts of top over the two transverse axes."""
    if boundary == "periodic":
        out += np.roll(top, 1, axis=0)
        out += np.roll(top, -1, axis=0)
        out += np.roll(top, 1, axis=1)
        out += np.roll(top, -1, axis=1)
    else:
        out[1:] += top[:-1]
        out[:-1] += top[1:]
        out[:, 1:] += top[:, :-1]
        out[:, :-1] += top[:, 1:]


def lyapunov_run(
    geometry,
    energy,
    spec,
    mode="factorized",
    realization=0,
    qr_period=8,
    rtol=None,
    warmup=None,
    block_periods=50,
    min_blocks=16,
):
    """Lyapunov exponents of one disordered bar at one energy.

    With rtol set, accumulation stops once stderr(gamma)/gamma <= rtol
    (checked on whole blocks, at least min_blocks of them); otherwise the
    full geometry.L is used. geometry.L is rounded up to whole blocks.
    """
    m = geometry.M
    d_eff = 1 if m == 1 else 3
    t = 1.0 / (2.0 * geometry.delta**2)
    m2 = m * m
    k = 2 * m2
    if warmup is None:
        warmup = max(400, 20 * qr_period)
    warmup_periods = -(-warmup // qr_period)
    block_len = block_periods * qr_period
    n_blocks_max = -(-geometry.L // block_len)
    n_slices = warmup_periods * qr_period + n_blocks_max * block_len
    pot = BarPotential(spec, geometry, n_slices, mode=mode, realization=realization)

    c0 = (energy - 2.0 * d_eff * t) / t
    inv_t = 1.0 / t
    frame = np.eye(k)
    top = frame[:m2].reshape(m, m, k).copy()
    bot = frame[m2:].reshape(m, m, k).copy()
    new = np.empty_like(top)
    ch = m2 - 1  # smallest positive exponent after descending ordering

    logs_all = np.zeros(k)
    block_means = []
    n_slice = 0
    slices_acc = 0
    flags = []
    converged = rtol is None

    def one_period():
        nonlocal top, bot, n_slice, new
        for _ in range(qr_period):
            v = pot.slice(n_slice)
            np.multiply(top, (c0 - v * inv_t)[:, :, None], out=new)
            if m > 1:
                _apply_transverse_hops(top, new, geometry.transverse_boundary)
            new -= bot
            # rotate buffers: new frame on top, old top becomes bottom,
            # the stale bottom array is reused as next scratch
            top, bot, new = new, top, bot
            n_slice += 1
        f = np.concatenate([top.reshape(m2, k), bot.reshape(m2, k)], axis=0)
        q, r = np.linalg.qr(f)
        diag = np.abs(np.diagonal(r))
        if not np.all(np.isfinite(diag)) or np.any(diag == 0.0):
            raise FloatingPointError(
                "frame overflow/collapse between orthonormalizations; reduce qr_period"
            )
        top = q[:m2].reshape(m, m, k).copy()
        bot = q[m2:].reshape(m, m, k).copy()
        return np.log(diag)

    for _ in range(warmup_periods):
        one_period()

    for b in range(n_blocks_max):
        block_sum = 0.0
        for _ in range(block_periods):
            logs = one_period()
            logs_all += logs
            block_sum += logs[ch]
        block_means.append(block_sum / block_len)
        slices_acc += block_len
        if rtol is not None and len(block_means) >= min_blocks:
            gam = logs_all[ch] / slices_acc
            se = np.std(block_means, ddof=1) / math.sqrt(len(block_means))
            if gam > 0 and se / gam <= rtol:
                converged = True
                break

    gamma_all = np.sort(logs_all / slices_acc)[::-1]
    gamma = logs_all[ch] / slices_acc
    se_gamma = np.std(block_means, ddof=1) / math.sqrt(len(block_means))
    if rtol is not None and not converged:
        flags.append("non-converged")
    if gamma > 0:
        lam = 1.0 / gamma
        lam_se = se_gamma / gamma**2
    else:
        # free in-band chains and statistical zero-crossings: no finite length
        flags.append("nonpositive-gamma")
        lam = math.inf
        lam_se = math.inf
    return LyapunovResult(
        energy=energy,
        M=m,
        delta=geometry.delta,
        lambda_m=lam,
        stderr=lam_se,
        L_used=slices_acc,
        realization=realization,
        mode=mode,
        gamma=gamma,
        gamma_stderr=se_gamma,
        gamma_all=gamma_all,
        converged=converged,
        flags=flags,
    )


def free_chain_gamma(energy, delta):
    """Zero-disorder 1D Lyapunov exponent: arccosh(|E Delta^2 - 1|) outside
    the band [0, 2/Delta^2], zero inside."""
    eps = energy / (1.0 / (2.0 * delta**2)) - 2.0  # reduced energy E/t - 2
    a = abs(eps) / 2.0
    if a <= 1.0:
        return 0.0
    return math.acosh(a)


def scan(
    spec,
    energies,
    m_values,
    delta,
    l_max,
    realizations=1,
    mode="factorized",
    qr_period=8,
    rtol=0.03,
    transverse_boundary="periodic",
    progress=None,
):
    """Sequential (E, M, realization) sweep; see pipelines for the parallel
    checkpointed version. Job order does not affect any result.

    realizations may be an int or a {M: int} mapping (narrow bars
    self-average worse transversely, so they earn more draws).
    """
    if len(energies) == 0 or len(m_values) == 0:
        raise ValueError("energies and m_values must be nonempty")
    result = TmmScan(spec=spec, delta=delta, mode=mode)
    for m in m_values:
        n_real = realizations[m] if isinstance(realizations, dict) else realizations
        geom = BarGeometry(M=m, L=l_max, delta=delta, transverse_boundary=transverse_boundary)
        for e in energies:
            for r in range(n_real):
                try:
                    run = lyapunov_run(
                        geom, e, spec, mode=mode, realization=r,
                        qr_period=qr_period, rtol=rtol,
                    )
                except Exception as exc:
                    # one bad job must not sink the sweep
                    result.failures.append(
                        {"E": e, "M": m, "realization": r, "error": str(exc)}
                    )
                    continue
                result.runs.append(run)
                if progress is not None:
                    progress(run)
    return result


def run_record(run, spec):
    """Flat NDJSON-ready dict for one lyapunov run."""
    return {
        "E": run.energy,
        "E_over_Esigma": run.energy / spec.e_sigma,
        "M": run.M,
        "Delta": run.delta,
        "lambda": run.lambda_m,
        "stderr": run.stderr,
        "L": run.L_used,
        "mode": run.mode,
        "seed": spec.master_seed,
        "realization": run.realization,
        "converged": run.converged,
    }


def from_record(rec):
    """Rebuild a LyapunovResult from a run_record dict (resume path).

    gamma_stderr is restored from the lambda stderr by the same first-order
    relation aggregation uses, so pooling loaded and fresh runs agrees.
    """
    lam = float(rec["lambda"])
    return LyapunovResult(
        energy=float(rec["E"]),
        M=int(rec["M"]),
        delta=float(rec["Delta"]),
        lambda_m=lam,
        stderr=float(rec["stderr"]),
        L_used=int(rec["L"]),
        realization=int(rec["realization"]),
        mode=rec["mode"],
        gamma_stderr=float(rec["stderr"]) / lam**2,
        converged=bool(rec.get("converged", True)),
    )
