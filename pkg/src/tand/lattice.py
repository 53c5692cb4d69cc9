"""Finite-difference discretization of the effective Hamiltonian.

H = -(1/2) Laplacian + V on a rectangular grid, 3-point stencil per axis:
hopping t = 1/(2 Delta^2), onsite V + sum_axes 2 t. The 3-point stencil
(rather than a spectral kinetic term) is what gives the slice-tridiagonal
structure the transfer-matrix module relies on; the O(Delta^2) dispersion
bias that comes with it is the price.

In 3D the Hamiltonian is applied matrix-free (the dense matrix for a 64^3
grid would not fit in memory and is contractually never assembled); in 1D
dense and sparse forms are available for oracle tests.
"""

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Grid:
    """Rectangular grid, dims in {1, 3}, one (N, Delta) pair per axis."""

    n: tuple
    delta: tuple
    boundary: str = "periodic"

    def __post_init__(self):
        n = tuple(int(v) for v in np.atleast_1d(self.n))
        delta = tuple(float(v) for v in np.atleast_1d(self.delta))
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "delta", delta)
        if len(n) not in (1, 3):
            raise ValueError(f"grid must be 1D or 3D, got {len(n)} axes")
        if len(delta) != len(n):
            raise ValueError("need one spacing per axis")
        if any(v < 2 for v in n):
            raise ValueError(f"need at least 2 points per axis, got {n}")
        if any(d <= 0 for d in delta):
            raise ValueError(f"spacings must be positive, got {delta}")
        if self.boundary not in ("periodic", "open"):
            raise ValueError(f"unknown boundary {self.boundary!r}")

    @property
    def dims(self):
        return len(self.n)

    @property
    def shape(self):
        return self.n

    @property
    def size(self):
        return int(np.prod(self.n))

    def axis_points(self, axis):
        """Coordinates along one axis (0-based), starting at 0."""
        return self.delta[axis] * np.arange(self.n[axis])

    @classmethod
    def torus(cls, n, dims=3):
        """Periodic grid over [0, 2*pi) per axis with Delta = 2*pi/N."""
        n = int(n)
        return cls(n=(n,) * dims, delta=(TWO_PI / n,) * dims, boundary="periodic")

    def check_nyquist(self, k_cut):
        """Any axis carrying the disorder must resolve harmonic k_cut."""
        for nn in self.n:
            if nn <= 2 * k_cut:
                raise ValueError(
                    f"grid axis with {nn} points cannot resolve k_cut = {k_cut}"
                )


class DiscreteHamiltonian:
    """H = kinetic 3-point stencil + diagonal potential.

    onsite already contains the finite-difference diagonal sum_axes 2 t_ax;
    hoppings are -t_ax to nearest neighbors along each axis.
    """

    def __init__(self, grid, onsite, t_axis):
        self.grid = grid
        self.onsite = onsite
        self.t_axis = tuple(t_axis)
        if onsite.shape != grid.shape:
            raise ValueError(f"onsite shape {onsite.shape} != grid {grid.shape}")
        if not np.all(np.isfinite(onsite)):
            raise ValueError("onsite terms must be finite")

    def apply(self, psi):
        """H @ psi for psi on the grid (any leading batch axes allowed)."""
        psi = np.asarray(psi)
        nd = self.grid.dims
        if psi.shape[-nd:] != self.grid.shape:
            raise ValueError(f"state shape {psi.shape} does not end in {self.grid.shape}")
        out = self.onsite * psi
        for ax in range(nd):
            t = self.t_axis[ax]
            a = psi.ndim - nd + ax
            if self.grid.boundary == "periodic":
                out -= t * (np.roll(psi, 1, axis=a) + np.roll(psi, -1, axis=a))
            else:
                up = np.zeros_like(psi)
                dn = np.zeros_like(psi)
                src = [slice(None)] * psi.ndim
                dst = [slice(None)] * psi.ndim
                src[a] = slice(1, None)
                dst[a] = slice(None, -1)
                up[tuple(dst)] = psi[tuple(src)]
                dn[tuple(src)] = psi[tuple(dst)]
                out -= t * (up + dn)
        return out

    def as_linear_operator(self):
        from scipy.sparse.linalg import LinearOperator

        n = self.grid.size
        shape = self.grid.shape

        def mv(v):
            return self.apply(v.reshape(shape)).ravel()

        return LinearOperator((n, n), matvec=mv, dtype=float)

    def dense(self):
        """Dense matrix; 1D only (3D stays operator-application only)."""
        if self.grid.dims != 1:
            raise ValueError("dense assembly is restricted to 1D grids")
        n = self.grid.n[0]
        t = self.t_axis[0]
        h = np.diag(self.onsite)
        idx = np.arange(n - 1)
        h[idx, idx + 1] = -t
        h[idx + 1, idx] = -t
        if self.grid.boundary == "periodic":
            h[0, n - 1] = -t
            h[n - 1, 0] = -t
        return h


def build_hamiltonian(grid, veff):
    """Discretize -(1/2) Laplacian + V on the grid.

    `veff` is the potential sampled at the grid points: a dense array of
    the grid's shape, a SeparableField (kept factorized until here), or
    None/scalar 0 for the free lattice.
    """
    t_axis = tuple(1.0 / (2.0 * d * d) for d in grid.delta)
    diag_kin = sum(2.0 * t for t in t_axis)
    if veff is None:
        v = np.zeros(grid.shape)
    elif hasattr(veff, "dense"):
        if veff.shape != grid.shape:
            raise ValueError(f"field shape {veff.shape} != grid {grid.shape}")
        v = veff.dense()
    else:
        v = np.asarray(veff, dtype=float)
        if v.ndim == 0:
            v = np.full(grid.shape, float(v))
        elif v.shape != grid.shape:
            raise ValueError(f"field shape {v.shape} != grid {grid.shape}")
    return DiscreteHamiltonian(grid=grid, onsite=v + diag_kin, t_axis=t_axis)


def free_eigenvalues(grid):
    """Spectrum of the V = 0 periodic lattice: sum_ax (1 - cos(2 pi n/N))/Delta^2."""
    if grid.boundary != "periodic":
        raise ValueError("closed form applies to periodic boundaries")
    per_axis = [
        (1.0 - np.cos(TWO_PI * np.arange(nn) / nn)) / (dd * dd)
        for nn, dd in zip(grid.n, grid.delta)
    ]
    if grid.dims == 1:
        return np.sort(per_axis[0])
    e = (
        per_axis[0][:, None, None]
        + per_axis[1][None, :, None]
        + per_axis[2][None, None, :]
    )
    return np.sort(e.ravel())


def energy_convert(value, frm, to, k0):
    """Convert between absolute energy and units of E_sigma = k0^2/2."""
    if k0 <= 0:
        raise ValueError(f"k0 must be positive, got {k0}")
    units = ("absolute", "units-of-Esigma")
    if frm not in units or to not in units:
        raise ValueError(f"units must be one of {units}")
    e_sigma = 0.5 * k0 * k0
    value = np.asarray(value, dtype=float)
    if frm == to:
        out = value
    elif frm == "units-of-Esigma":
        out = value * e_sigma
    else:
        out = value / e_sigma
    return float(out) if out.ndim == 0 else out
