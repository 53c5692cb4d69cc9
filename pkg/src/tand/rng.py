"""Counter-based random streams for reproducible parallel scans.

Every random draw in the package comes from a Philox generator keyed by
(master_seed, stream tag, integer indices). Philox is counter-based, so a
stream is a pure function of its key: results do not depend on how many
workers run, in which order jobs execute, or what was drawn before.
"""

import numpy as np

# Stream tags keep independent uses of the same (seed, indices) apart.
STREAM_COEFFS = 1
STREAM_EXTENDED = 2
STREAM_GRF3D = 3
STREAM_BOOTSTRAP = 4
STREAM_TMM_INIT = 5
STREAM_CORRBASE = 6
STREAM_FSS_SYNTH = 7
STREAM_DRIVE = 8


def substream(master_seed, tag, *indices):
    """Generator for the stream keyed by (master_seed, tag, indices).

    Identical arguments always give an identical stream; distinct
    arguments give streams that are independent for all practical
    purposes (SeedSequence spawn-key semantics).
    """
    if not (0 <= int(master_seed) < 2**64):
        raise ValueError(f"master_seed must be a 64-bit unsigned integer, got {master_seed}")
    key = tuple(int(i) for i in (tag,) + indices)
    if any(i < 0 for i in key):
        raise ValueError(f"stream indices must be non-negative, got {key}")
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.Philox(ss))
