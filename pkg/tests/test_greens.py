import math

import numpy as np
import pytest

from tand.disorder import DisorderSpec
from tand.greens import greens_decay
from tand.tmm import BarGeometry, free_chain_gamma, lyapunov_run

SPEC = DisorderSpec(k0=10 * np.sqrt(2), V0=100.0, dims=3, master_seed=7)


def test_free_chain_oracle():
    geom = BarGeometry(M=1, L=4000, delta=0.05)
    free = DisorderSpec(k0=10 * np.sqrt(2), V0=0.0, dims=1, master_seed=7)
    res = greens_decay(geom, -5.0, free)
    assert res.gamma == pytest.approx(free_chain_gamma(-5.0, 0.05), rel=1e-6)


def test_matches_tmm_on_identical_disorder():
    # the acceptance run uses L = 1e4; this is the fast development version
    geom = BarGeometry(M=2, L=6000, delta=0.05)
    tm = lyapunov_run(geom, -5.0, SPEC)
    gf = greens_decay(geom, -5.0, SPEC)
    diff = abs(tm.gamma - gf.gamma)
    assert diff <= 3 * math.hypot(tm.gamma_stderr, gf.gamma_stderr)


def test_determinism():
    geom = BarGeometry(M=2, L=2000, delta=0.05)
    a = greens_decay(geom, -5.0, SPEC)
    b = greens_decay(geom, -5.0, SPEC)
    assert a.gamma == b.gamma


def test_too_short_rejected():
    geom = BarGeometry(M=2, L=400, delta=0.05)
    with pytest.raises(ValueError):
        greens_decay(geom, -5.0, SPEC, warmup=0, block_slices=400)
