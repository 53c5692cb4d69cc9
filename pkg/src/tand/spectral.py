"""Interior eigenstates near a target energy, localization diagnostics, and
the rotating-frame -> lab-frame time mapping.

3D solves are matrix-free in two stages. A Chebyshev-expanded Gaussian
band-pass confines a random block to the spectral window around the target;
no polynomial of affordable degree separates individual interior states
(their spacing is orders of magnitude below the spectral span), so the
filter only has to land the block in-window. Jacobi-Davidson with harmonic
extraction and deflation then drives each state to the requested residual,
solving the projected correction equations by unpreconditioned MINRES: the
iteration count there is set by the density of states around the shift,
which neither kinetic nor diagonal preconditioning reduces (measured, not
assumed), so the budget goes into plain matvecs. 1D grids are small enough
for dense or sparse shift-invert.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import dct
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import LinearOperator, minres

TWO_PI = 2.0 * math.pi


@dataclass
class EigenstateBundle:
    energies: np.ndarray  # absolute units, ordered by |E - target|
    states: np.ndarray  # (n, *grid.n), continuum-normalized
    residuals: np.ndarray
    grid: object
    target: float
    spec: object = None
    realization: int = None
    converged: bool = True
    flags: list = field(default_factory=list)
    n_iter: int = 0

    def energies_over_esigma(self):
        if self.spec is None:
            raise ValueError("no disorder spec attached")
        return self.energies / self.spec.e_sigma

    def __len__(self):
        return len(self.energies)


@dataclass
class MarginalProfile:
    axis: int
    x: np.ndarray
    values: np.ndarray  # I(x) >= 0, sum(I) * delta = 1
    delta: float

    def log_values(self, floor=1e-300):
        return np.log(np.maximum(self.values, floor))

    @property
    def dynamic_range_decades(self):
        v = self.values[self.values > 0]
        return math.log10(v.max() / v.min()) if len(v) else 0.0


@dataclass
class XiFit:
    xi: float
    center: float
    slope: float
    decades: float
    rms: float
    n_points: int
    reliable: bool
    flags: list = field(default_factory=list)


@dataclass
class TimeTrace:
    times: np.ndarray
    values: np.ndarray
    omega: float
    theta_star: float
    temporal_xi: float = None
    profile: MarginalProfile = None


def _norm_measure(grid):
    return float(np.prod(grid.delta))


def _batch_apply(h, x_cols):
    """H applied to each column of an (N, m) block."""
    grid = h.grid
    m = x_cols.shape[1]
    psi = np.ascontiguousarray(x_cols.T).reshape((m, *grid.n))
    return h.apply(psi).reshape(m, -1).T


def _weyl_bounds(h):
    """Rigorous interval containing the spectrum.

    The hopping part has norm 2 sum_ax t_ax, so Weyl's inequality brackets
    every eigenvalue by the onsite extremes plus/minus that. Wider than the
    true spectrum (costs filter degree) but can never put an eigenvalue
    outside the Chebyshev interval, which would make the filter diverge.
    """
    off = 2.0 * float(np.sum(h.t_axis))
    v = np.asarray(h.onsite, dtype=float)
    return float(v.min()) - off, float(v.max()) + off


def _gauss_cheb_coeffs(center, width, lo, hi, cutoff=1e-15):
    """Chebyshev coefficients of exp(-(x - center)^2 / (2 width^2)) on [lo, hi].

    Sampled at Chebyshev nodes and cosine-transformed; the series is cut
    where coefficients fall below cutoff relative to the largest. Sample
    count doubles until the tail is resolved, with a hard cap so a width
    far below the interval scale still returns a finite (smeared) filter.
    """
    c = 0.5 * (hi + lo)
    half = 0.5 * (hi - lo)
    y0 = (center - c) / half
    m = 2048
    while True:
        y = np.cos((np.arange(m) + 0.5) * (math.pi / m))
        f = np.exp(-0.5 * ((y - y0) * (half / width)) ** 2)
        a = dct(f, type=2) / m
        a[0] *= 0.5
        # cut on the function scale (peak height 1), not the coefficient
        # scale: a narrow window's largest coefficient is itself only
        # O(width/span), and a cut relative to it chases the DCT roundoff
        # floor into needlessly huge degrees
        thresh = cutoff * max(1.0, float(np.abs(a).max()))
        keep = np.nonzero(np.abs(a) > thresh)[0]
        deg = int(keep[-1]) if len(keep) else 0
        if deg + 8 < m or m >= (1 << 17):
            return a[: deg + 1]
        m *= 2


def _cheb_apply(h, coeffs, lo, hi, x_cols):
    """sum_k a_k T_k(Hs) applied to a block, Hs the [-1, 1]-mapped operator."""
    c = 0.5 * (hi + lo)
    half = 0.5 * (hi - lo)
    t0 = x_cols
    y = coeffs[0] * t0
    if len(coeffs) == 1:
        return y
    t1 = (_batch_apply(h, t0) - c * t0) / half
    y = y + coeffs[1] * t1
    for a in coeffs[2:]:
        t0, t1 = t1, (2.0 / half) * (_batch_apply(h, t1) - c * t1) - t0
        y += a * t1
    return y


def interior_eigs(
    h,
    target,
    n=1,
    tol=1e-8,
    locate_tol=1e-3,
    filter_passes=3,
    max_degree=8000,
    block=None,
    max_outer=80,
    inner_iter=None,
    max_space=18,
    seed=0,
):
    """n eigenpairs of h nearest target, true residual <= tol each.

    Two stages in 3D: Gaussian band-pass filtering confines a random block
    to the window around the target, narrowing geometrically per pass down
    to the width max_degree can afford, then Jacobi-Davidson with deflation
    takes each state from there to tol. inner_iter is the MINRES budget per
    correction solve; the default scales with grid size (the iteration count
    needed per contraction step tracks the local density of states, which
    grows with volume) and adapts upward when an outer step contracts
    poorly. Hitting the outer-iteration cap returns the partial bundle
    flagged non-converged rather than raising.
    """
    if n < 1:
        raise ValueError("need n >= 1 states")
    grid = h.grid
    if grid.dims == 1:
        return _interior_1d(h, target, n, tol)

    nn = grid.size
    if block is None:
        block = max(n + 4, 2 * n)
    if inner_iter is None:
        inner_iter = int(np.clip(nn // 40, 400, 8000))
    lo, hi = _weyl_bounds(h)
    span = hi - lo

    rng = np.random.default_rng(seed)
    x = np.linalg.qr(rng.standard_normal((nn, block)))[0]
    w_hi = span / 100.0
    w_lo = max(6.0 * span / max_degree, span / 1000.0)
    widths = np.geomspace(w_hi, w_lo, filter_passes) if filter_passes > 1 else [w_lo]
    n_filter = 0
    for width in widths:
        coeffs = _gauss_cheb_coeffs(target, width, lo, hi)
        x = _cheb_apply(h, coeffs, lo, hi, x)
        n_filter += len(coeffs) - 1
        x, _ = np.linalg.qr(x)
        hx = _batch_apply(h, x)
        small = x.T @ hx
        theta, u = np.linalg.eigh(0.5 * (small + small.T))
        x = x @ u
        hx = hx @ u
        res = np.linalg.norm(hx - x * theta, axis=0)
        near = np.argsort(np.abs(theta - target))[:n]
        if np.max(res[near]) <= locate_tol:
            break

    lam, cols, res, n_inner = _jd_window(
        h, x, target, n, tol, max_outer, inner_iter, max_space, rng
    )
    converged = bool(np.all(res <= tol))
    flags = [] if converged else ["non-converged"]
    order = np.argsort(np.abs(lam - target))
    lam, res, cols = lam[order], res[order], cols[:, order]
    scale = 1.0 / math.sqrt(_norm_measure(grid))
    states = np.ascontiguousarray(cols.T).reshape((n, *grid.n)) * scale
    return EigenstateBundle(
        energies=lam, states=states, residuals=res, grid=grid,
        target=target, converged=converged, flags=flags,
        n_iter=n_filter + n_inner,
    )


def _harmonic_pairs(v_basis, hv, target):
    """Harmonic Ritz decomposition of the search space relative to target.

    Plain Ritz selection is unusable here: in a dense interior cluster a
    barely-resolved junk mixture can land its Ritz value arbitrarily close
    to the target and hijack the nearest-target pick every outer iteration.
    A harmonic value cannot sit closer to the target than residual^2/span,
    so unconverged directions are pushed away instead. Returns the small
    projected H, the back-transform, harmonic vectors, and proximity order.
    """
    dim = v_basis.shape[1]
    s_proj = v_basis.T @ hv
    s_proj = 0.5 * (s_proj + s_proj.T)
    _, r_w = np.linalg.qr(hv - target * v_basis)
    try:
        r_inv = np.linalg.inv(r_w)
    except np.linalg.LinAlgError:
        r_inv = np.linalg.pinv(r_w)
    m_h = r_inv.T @ (s_proj - target * np.eye(dim)) @ r_inv
    nu, z_h = np.linalg.eigh(0.5 * (m_h + m_h.T))
    with np.errstate(divide="ignore"):
        order = np.argsort(np.abs(1.0 / nu))
    return s_proj, r_inv, z_h, order


def _jd_window(h, x0, target, n, tol, max_outer, inner_iter, max_space, rng):
    """Jacobi-Davidson with deflation, seeded by the filtered block.

    Candidates come from harmonic Ritz extraction (see _harmonic_pairs) and
    restarts compress onto the harmonic pairs nearest the target, so junk
    directions cannot displace a converging state. Each correction equation
    P (H - shift) P t = -r, with P projecting out the current candidate and
    everything locked, is consistent (r is orthogonal to the projected-out
    space) and regular on its subspace, where a raw shifted solve is
    singular and inconsistent; MINRES therefore converges cleanly, run
    unpreconditioned (see module docstring). The shift stays pinned at the
    target until the residual is small, then switches to the Rayleigh
    quotient for the quadratic tail. Locked states deflate exactly: the
    search space is kept orthogonal to them. The inner budget grows when an
    outer step fails to contract the residual by at least half.
    """
    grid = h.grid
    nn = grid.size

    def h_mv(w):
        return h.apply(w.reshape(grid.n)).ravel()

    v_basis, _ = np.linalg.qr(x0)
    hv = _batch_apply(h, v_basis)
    q_lock = np.zeros((nn, 0))
    lam_lock = []
    n_inner = 0
    inner_cap = 4 * inner_iter
    rn_prev = math.inf

    for _ in range(max_outer):
        if v_basis.shape[1] > max_space:
            _, r_inv, z_h, order = _harmonic_pairs(v_basis, hv, target)
            y_keep = r_inv @ z_h[:, order[: max(2 * n, 6)]]
            if np.all(np.isfinite(y_keep)):
                q_y, _ = np.linalg.qr(y_keep)
                v_basis = v_basis @ q_y
                hv = hv @ q_y

        s_proj, r_inv, z_h, order = _harmonic_pairs(v_basis, hv, target)
        y = r_inv @ z_h[:, order[0]]
        if not np.all(np.isfinite(y)):
            y = np.zeros(v_basis.shape[1])
            y[0] = 1.0
        y /= np.linalg.norm(y)
        theta = float(y @ s_proj @ y)
        psi = v_basis @ y
        hpsi = hv @ y
        r = hpsi - theta * psi
        rn = float(np.linalg.norm(r))

        if rn <= tol:
            q_lock = np.column_stack([q_lock, psi])
            lam_lock.append(theta)
            rn_prev = math.inf
            if len(lam_lock) == n:
                break
            y_rest = r_inv @ z_h[:, order[1:]]
            v_basis = v_basis @ y_rest
            v_basis -= q_lock @ (q_lock.T @ v_basis)
            v_basis, _ = np.linalg.qr(v_basis)
            hv = _batch_apply(h, v_basis)
            continue

        if rn > 0.5 * rn_prev:
            inner_iter = min(int(1.5 * inner_iter), inner_cap)
        rn_prev = rn

        # Rayleigh shifts only once theta is trustworthy: its error is
        # O(rn^2/gap), so switching while rn spans many level spacings lets
        # the solve amplify a neighboring cluster and hijack the iteration
        # (watched at 64^3: theta drifted half a unit off target and pinned
        # there). Below 1e-2 the bound puts theta inside a fraction of one
        # spacing even at the densest grids this targets.
        shift = theta if rn < 1e-2 else target
        q_all = np.column_stack([q_lock, psi])

        def proj(w):
            return w - q_all @ (q_all.T @ w)

        def a_mv(t):
            t = proj(t)
            y2 = h_mv(t) - shift * t
            return proj(y2)

        counter = [0]

        def tick(_xk):
            counter[0] += 1

        a_op = LinearOperator((nn, nn), matvec=a_mv, dtype=np.float64)
        # maxiter is the only budget: any residual-based early exit is a
        # trap here. The equation's easy (far-from-shift) directions converge
        # in tens of iterations while the near-shift ones that actually
        # improve the eigenpair converge last, so an rtol exit returns a
        # step with the useful part unsolved; worse, once psi stops moving
        # the same shallow Krylov space is rebuilt from the same right-hand
        # side every outer and the expansion collapses into span(V)
        # (watched at 32^3: rn froze at 4e-3 for seventy outers).
        t_vec, _ = minres(a_op, -proj(r), maxiter=inner_iter, rtol=1e-10,
                          callback=tick)
        n_inner += counter[0]

        t_vec = proj(t_vec)
        for _ in range(2):
            t_vec -= v_basis @ (v_basis.T @ t_vec)
        t_norm = float(np.linalg.norm(t_vec))
        if not math.isfinite(t_norm) or t_norm <= 1e-12:
            # stagnated correction: re-enrich with a random in-window probe
            t_vec = proj(rng.standard_normal(nn))
            t_vec -= v_basis @ (v_basis.T @ t_vec)
            t_norm = float(np.linalg.norm(t_vec))
        t_vec /= t_norm
        v_basis = np.column_stack([v_basis, t_vec])
        hv = np.column_stack([hv, h_mv(t_vec)])

    cols = q_lock
    if cols.shape[1] < n:
        # outer budget exhausted: pad with the best harmonic candidates
        # (plain nearest-target Ritz selection would resurrect the junk
        # mixtures the harmonic extraction exists to reject)
        _, r_inv, z_h, order = _harmonic_pairs(v_basis, hv, target)
        y_pad = r_inv @ z_h[:, order[: n - cols.shape[1]]]
        if not np.all(np.isfinite(y_pad)):
            small = v_basis.T @ hv
            theta_all, u = np.linalg.eigh(0.5 * (small + small.T))
            take = np.argsort(np.abs(theta_all - target))[: n - cols.shape[1]]
            y_pad = u[:, take]
        cols = np.column_stack([cols, v_basis @ y_pad])

    # one Rayleigh-Ritz sweep across the returned set restores pairwise
    # orthogonality and yields honest recomputed residuals
    cols, _ = np.linalg.qr(cols)
    hc = _batch_apply(h, cols)
    small = cols.T @ hc
    lam, u = np.linalg.eigh(0.5 * (small + small.T))
    cols = cols @ u
    hc = hc @ u
    res = np.linalg.norm(hc - cols * lam, axis=0)
    return lam, cols, res, n_inner


def _interior_1d(h, target, n, tol):
    nx = h.grid.size
    if nx <= 1500:
        ham = h.dense()
        w, v = np.linalg.eigh(ham)
    else:
        from scipy.sparse import csr_matrix
        from scipy.sparse.linalg import eigsh

        ham = csr_matrix(_sparse_1d(h))
        w, v = eigsh(ham, k=min(n + 4, nx - 2), sigma=target, which="LM")
    order = np.argsort(np.abs(w - target))[:n]
    w, v = w[order], v[:, order]
    res = np.array([
        np.linalg.norm(h.apply(v[:, i]) - w[i] * v[:, i]) for i in range(n)
    ])
    flags = [] if np.all(res <= tol) else ["non-converged"]
    scale = 1.0 / math.sqrt(_norm_measure(h.grid))
    return EigenstateBundle(
        energies=w, states=np.ascontiguousarray(v.T) * scale,
        residuals=res, grid=h.grid, target=target,
        converged=not flags, flags=flags,
    )


def _sparse_1d(h):
    from scipy.sparse import diags_array

    nx = h.grid.size
    t = h.t_axis[0]
    onsite = np.broadcast_to(h.onsite, (nx,)).astype(float)
    mat = diags_array(
        [onsite, -t * np.ones(nx - 1), -t * np.ones(nx - 1)], offsets=[0, 1, -1]
    ).tolil()
    if h.grid.boundary == "periodic":
        mat[0, nx - 1] += -t
        mat[nx - 1, 0] += -t
    return mat


def marginal(psi, grid, axis):
    """Density integrated over the other axes: I(x) = sum |psi|^2 prod(other deltas)."""
    if not 0 <= axis < grid.dims:
        raise ValueError(f"axis {axis} out of range for dims {grid.dims}")
    dens = np.abs(psi) ** 2
    other = tuple(i for i in range(grid.dims) if i != axis)
    weight = float(np.prod([grid.delta[i] for i in other])) if other else 1.0
    values = dens.sum(axis=other) * weight
    return MarginalProfile(
        axis=axis, x=grid.axis_points(axis), values=values, delta=grid.delta[axis]
    )


def _circular_center(x, w, length):
    ang = x * (TWO_PI / length)
    z = np.sum(w * np.exp(1j * ang))
    return (np.angle(z) % TWO_PI) * (length / TWO_PI)


def fit_localization_length(profile, sigma_core, floor=1e-6, length=TWO_PI):
    """Exponential decay length of a marginal: fit log I against periodic
    distance from the density-weighted center, excluding the peak core
    (d < sigma_core) and the noise floor (I < floor * max)."""
    x, i_x = profile.x, profile.values
    if np.any(i_x < 0):
        raise ValueError("marginal must be nonnegative")
    center = _circular_center(x, i_x, length)
    d = np.abs((x - center + length / 2) % length - length / 2)
    imax = i_x.max()
    sel = (d >= sigma_core) & (i_x >= floor * imax) & (i_x > 0)
    flags = []
    if sel.sum() < 4:
        return XiFit(xi=math.nan, center=center, slope=math.nan, decades=0.0,
                     rms=math.nan, n_points=int(sel.sum()), reliable=False,
                     flags=["too-few-points"])
    logi = np.log(i_x[sel])
    decades = (logi.max() - logi.min()) / math.log(10)
    slope, intercept = np.polyfit(d[sel], logi, 1)
    rms = float(np.sqrt(np.mean((slope * d[sel] + intercept - logi) ** 2)))
    if decades < 2.0:
        flags.append("unreliable")
    if slope >= 0:
        flags.append("no-decay")
    xi = -2.0 / slope if slope < 0 else math.inf
    return XiFit(xi=xi, center=float(center), slope=float(slope),
                 decades=float(decades), rms=rms, n_points=int(sel.sum()),
                 reliable=not flags, flags=flags)


def lab_frame_trace(profile, omega, theta_star, times=None, xi_fit=None, length=TWO_PI):
    """P(t) = I((theta* - omega t) mod length) by periodic cubic spline.

    The co-moving angle sweeps the marginal linearly in time, so a spatial
    decay length xi maps to the temporal length xi/omega exactly.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    if times is None:
        times = np.linspace(0.0, TWO_PI / omega, 512, endpoint=False)
    # spline the log: exponential tails interpolate linearly there, and the
    # result stays positive however deep the minima are
    logy = profile.log_values()
    x = np.append(profile.x, profile.x[0] + length)
    y = np.append(logy, logy[0])
    spline = CubicSpline(x, y, bc_type="periodic")
    theta = (theta_star - omega * np.asarray(times)) % length
    values = np.exp(spline(theta))
    temporal = xi_fit / omega if xi_fit is not None else None
    return TimeTrace(times=np.asarray(times), values=values, omega=omega,
                     theta_star=theta_star, temporal_xi=temporal, profile=profile)


def participation_ratio(psi, grid):
    """PR = 1/(sum |psi|^4 prod deltas): (2 pi)^3 for uniform, Delta^3 for a
    single-site spike."""
    meas = _norm_measure(grid)
    return float(1.0 / (np.sum(np.abs(psi) ** 4) * meas))
