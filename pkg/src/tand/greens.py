"""Recursive Green's-function oracle for the transfer-matrix results.

Grows the bar slice by slice: with g_{n} the corner Green's block of the
truncated bar and -t the inter-slice coupling,

    g_n = (E - H_n - t^2 g_{n-1})^(-1),
    G_{1,n} = -t * G_{1,n-1} g_n,

so -log ||G_{1,N}|| / N converges to the same smallest positive Lyapunov
exponent the transfer-matrix iteration produces. Runs on the identical
BarPotential realization, which is the whole point: an independent
algorithm on the same disorder. Dense M^2 x M^2 blocks throughout; meant
for small cross-sections, not production scans.
"""

import math
from dataclasses import dataclass

import numpy as np

from .tmm import BarPotential, _apply_transverse_hops


@dataclass
class GreensResult:
    energy: float
    M: int
    delta: float
    gamma: float
    gamma_stderr: float
    lambda_m: float
    L_used: int
    realization: int
    mode: str


def _slice_hamiltonian_parts(geometry):
    """Dense transverse hop matrix (M^2 x M^2) built from the same stencil
    the transfer-matrix iteration applies, and the kinetic diagonal."""
    m = geometry.M
    t = 1.0 / (2.0 * geometry.delta**2)
    m2 = m * m
    if m == 1:
        return np.zeros((1, 1)), 2.0 * t
    hop = np.zeros((m2, m2))
    eye = np.eye(m2).reshape(m, m, m2)
    acc = np.zeros_like(eye)
    _apply_transverse_hops(eye, acc, geometry.transverse_boundary)
    hop = -t * acc.reshape(m2, m2)
    return hop, 6.0 * t


def greens_decay(
    geometry,
    energy,
    spec,
    mode="factorized",
    realization=0,
    warmup=400,
    block_slices=400,
):
    """Decay rate of the end-to-end Green's block on one disordered bar."""
    m = geometry.M
    m2 = m * m
    t = 1.0 / (2.0 * geometry.delta**2)
    n_blocks = geometry.L // block_slices
    if n_blocks < 4:
        raise ValueError("bar too short for block error bars")
    n_slices = warmup + n_blocks * block_slices
    pot = BarPotential(spec, geometry, n_slices, mode=mode, realization=realization)
    hop, diag_kin = _slice_hamiltonian_parts(geometry)

    g_prev = None
    gc = None  # running normalized G_{1,n}
    increments = np.empty(n_slices)
    for n in range(n_slices):
        h_n = hop + np.diag(pot.slice(n).ravel() + diag_kin)
        a = energy * np.eye(m2) - h_n
        if g_prev is not None:
            a -= t * t * g_prev
        g_n = np.linalg.inv(a)
        if gc is None:
            gc = g_n.copy()
        else:
            gc = -t * (gc @ g_n)
        norm = np.linalg.norm(gc)
        increments[n] = math.log(norm)
        gc /= norm
        g_prev = g_n

    incs = increments[warmup:]
    blocks = incs.reshape(n_blocks, block_slices).mean(axis=1)
    gamma = -incs.mean()
    se = np.std(blocks, ddof=1) / math.sqrt(n_blocks)
    return GreensResult(
        energy=energy,
        M=m,
        delta=geometry.delta,
        gamma=gamma,
        gamma_stderr=se,
        lambda_m=1.0 / gamma,
        L_used=n_blocks * block_slices,
        realization=realization,
        mode=mode,
    )
