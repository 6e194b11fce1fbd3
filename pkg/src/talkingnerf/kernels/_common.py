"""Constants shared by both kernel backends."""

import numpy as np

# instant-ngp spatial hash primes
P1 = np.int64(1)
P2 = np.int64(2654435761)
P3 = np.int64(805459861)

# corner c of a cell carries offset bits (c>>2 & 1, c>>1 & 1, c & 1)
CORNER_BITS = np.array(
    [[(c >> 2) & 1, (c >> 1) & 1, c & 1] for c in range(8)], dtype=np.int64
)
