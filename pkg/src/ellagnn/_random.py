"""Counter-based randomness keyed by tuples such as (run_seed, epoch, node, hop).

Results depend only on the key, never on call order, which keeps sampling,
dropout and enhancement draws identical under any batching or thread schedule.
"""

import numpy as np

_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)

# stream tags keep different consumers of the same (seed, epoch, node) apart
SAMPLE = 1
DROPOUT = 2
ENHANCE = 3
SHUFFLE = 4
INIT = 5


def keyed_generator(*key: int) -> np.random.Generator:
    return np.random.default_rng(list(_split_words(key)))


def _split_words(key):
    # SeedSequence takes 32-bit words; split so large seeds do not collide
    for k in key:
        k = int(k)
        yield k & 0xFFFFFFFF
        yield (k >> 32) & 0xFFFFFFFF


def _splitmix64(x: np.ndarray) -> np.ndarray:
    with np.errstate(over="ignore"):
        x = (x + np.uint64(0x9E3779B97F4A7C15)) & _MASK
        x = ((x ^ (x >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)) & _MASK
        x = ((x ^ (x >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)) & _MASK
        return x ^ (x >> np.uint64(31))


def _fold(key) -> np.uint64:
    h = np.array([0x243F6A8885A308D3], dtype=np.uint64)
    for k in key:
        h = _splitmix64(h ^ np.uint64(int(k) & 0xFFFFFFFFFFFFFFFF))
    return h[0]


def keyed_uniform(key, rows: np.ndarray, width: int) -> np.ndarray:
    """Uniform [0, 1) matrix of shape (len(rows), width); entry (i, j) depends on (key, rows[i], j)."""
    base = _fold(key)
    rows = np.asarray(rows, dtype=np.uint64)
    cols = np.arange(width, dtype=np.uint64)
    with np.errstate(over="ignore"):
        x = _splitmix64(base ^ _splitmix64(rows)[:, None])
        x = _splitmix64(x ^ (cols[None, :] * np.uint64(0xD1B54A32D192ED03)))
    return (x >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
