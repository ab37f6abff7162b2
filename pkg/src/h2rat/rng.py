"""SplitMix64 random stream.

SplitMix64 is counter based: the n-th output is ``mix(seed + n * GAMMA)``, so
bulk draws vectorise with numpy uint64 arithmetic (which wraps modulo 2**64)
and still equal the scalar sequence bit for bit.
"""

import numpy as np

GAMMA = 0x9E3779B97F4A7C15
MASK64 = 0xFFFFFFFFFFFFFFFF

_GAMMA = np.uint64(GAMMA)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def splitmix64_scalar(state):
    """Reference scalar step: returns (new_state, output)."""
    state = (state + GAMMA) & MASK64
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return state, z ^ (z >> 31)


def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class RngStream:
    algorithm = "splitmix64"

    def __init__(self, seed):
        self.seed = int(seed) & MASK64
        self.counter = 0

    def next_u64(self, n):
        """Next ``n`` raw 64-bit outputs as a uint64 array."""
        steps = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix(np.uint64(self.seed) + steps * _GAMMA)

    def uniform(self, n, low=0.0, high=1.0):
        """``n`` doubles in [low, high) from the top 53 bits of each draw."""
        u = (self.next_u64(n) >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return low + (high - low) * u

    def normal(self, n):
        """Standard normals via Box-Muller; consumes exactly 2*n draws."""
        u = self.uniform(2 * n)
        u1 = 1.0 - u[0::2]  # (0, 1], keeps log finite
        u2 = u[1::2]
        return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)

    def randint(self, high):
        """One integer in [0, high). Uses modulo reduction; bias is < high / 2**64."""
        if high <= 0:
            raise ValueError("high must be positive")
        return int(self.next_u64(1)[0] % np.uint64(high))

    def permutation(self, n):
        """Fisher-Yates shuffle of range(n)."""
        out = list(range(n))
        for i in range(n - 1, 0, -1):
            j = self.randint(i + 1)
            out[i], out[j] = out[j], out[i]
        return out

    def spawn(self, salt):
        """Independent child stream derived from this seed and an integer salt."""
        _, z = splitmix64_scalar((self.seed ^ ((int(salt) * GAMMA) & MASK64)) & MASK64)
        return RngStream(z)
